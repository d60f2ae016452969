//! Overlapped window tiling of full pages and patch tokenization of windows.
//!
//! Windows are `S×S` and placed at stride `S/2`. Pages are padded on the
//! right and bottom with white (1.0) so the grid fits exactly; after
//! inference the windows are averaged back together and the padding cropped.

use crate::error::{Error, Result};

/// Background value used for padding.
pub const PAD_VALUE: f32 = 1.0;

/// `height×width×channels` raster, row-major with interleaved channels,
/// values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImageBuffer {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "image must be at least 1x1, got {height}x{width}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "images have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::shape(
                "image",
                &[height, width, channels],
                &[data.len()],
            ));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "pixel value {v} outside [0, 1]"
            )));
        }
        Ok(ImageBuffer {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(
            height,
            width,
            channels,
            vec![value; height * width * channels],
        )
    }

    /// Builds an image from `f(y, x, c)`, clamping into `[0, 1]`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c).clamp(0.0, 1.0));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Channel mean as a single-channel image.
    pub fn to_gray(&self) -> ImageBuffer {
        if self.channels == 1 {
            return self.clone();
        }
        let c = self.channels as f32;
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|px| (px.iter().sum::<f32>() / c).clamp(0.0, 1.0))
            .collect();
        ImageBuffer {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }

    /// Replicates a grayscale image to three channels; RGB passes through.
    pub fn to_rgb(&self) -> ImageBuffer {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        ImageBuffer {
            height: self.height,
            width: self.width,
            channels: 3,
            data,
        }
    }

    /// Copy of the `h×w` region at `(y0, x0)`.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<ImageBuffer> {
        if y0 + h > self.height || x0 + w > self.width || h == 0 || w == 0 {
            return Err(Error::InvalidArgument(format!(
                "crop {h}x{w}@({y0},{x0}) outside {}x{}",
                self.height, self.width
            )));
        }
        let c = self.channels;
        let mut data = Vec::with_capacity(h * w * c);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * c;
            data.extend_from_slice(&self.data[start..start + w * c]);
        }
        Ok(ImageBuffer {
            height: h,
            width: w,
            channels: c,
            data,
        })
    }
}

/// Placement of overlapped square windows over a padded page.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowGrid {
    pub window: usize,
    pub stride: usize,
    pub height: usize,
    pub width: usize,
    pub padded_height: usize,
    pub padded_width: usize,
    pub row_starts: Vec<usize>,
    pub col_starts: Vec<usize>,
}

fn padded_extent(len: usize, window: usize, stride: usize) -> usize {
    if len <= window {
        window
    } else {
        window + (len - window).div_ceil(stride) * stride
    }
}

impl WindowGrid {
    /// Grid for an `height×width` page at the given window size and stride.
    pub fn new(height: usize, width: usize, window: usize, stride: usize) -> Result<Self> {
        if window == 0 || stride == 0 || stride > window {
            return Err(Error::InvalidArgument(format!(
                "need 0 < stride <= window, got window {window}, stride {stride}"
            )));
        }
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument("empty page".into()));
        }
        let padded_height = padded_extent(height, window, stride);
        let padded_width = padded_extent(width, window, stride);
        let starts = |len: usize| (0..=len - window).step_by(stride).collect::<Vec<_>>();
        Ok(WindowGrid {
            window,
            stride,
            height,
            width,
            padded_height,
            padded_width,
            row_starts: starts(padded_height),
            col_starts: starts(padded_width),
        })
    }

    /// Half-overlap grid (`stride = S/2`).
    pub fn half_overlap(height: usize, width: usize, window: usize) -> Result<Self> {
        if window < 2 || !window.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "window size must be even and >= 2, got {window}"
            )));
        }
        Self::new(height, width, window, window / 2)
    }

    pub fn len(&self) -> usize {
        self.row_starts.len() * self.col_starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Window origins `(y, x)` in row-major order.
    pub fn origins(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.row_starts
            .iter()
            .flat_map(move |&y| self.col_starts.iter().map(move |&x| (y, x)))
    }

    /// Number of windows covering each padded pixel, row-major.
    pub fn coverage(&self) -> Vec<u32> {
        let mut count = vec![0u32; self.padded_height * self.padded_width];
        for (y0, x0) in self.origins() {
            for y in y0..y0 + self.window {
                for c in &mut count[y * self.padded_width + x0..][..self.window] {
                    *c += 1;
                }
            }
        }
        count
    }
}

/// Pads right and bottom with white to the half-overlap grid for window `S`.
pub fn pad_to_grid(img: &ImageBuffer, window: usize) -> Result<(ImageBuffer, WindowGrid)> {
    let grid = WindowGrid::half_overlap(img.height, img.width, window)?;
    Ok((pad_image(img, &grid), grid))
}

pub(crate) fn pad_image(img: &ImageBuffer, grid: &WindowGrid) -> ImageBuffer {
    let c = img.channels;
    let (ph, pw) = (grid.padded_height, grid.padded_width);
    let mut data = vec![PAD_VALUE; ph * pw * c];
    for y in 0..img.height {
        let src = &img.data[y * img.width * c..(y + 1) * img.width * c];
        data[y * pw * c..y * pw * c + img.width * c].copy_from_slice(src);
    }
    ImageBuffer {
        height: ph,
        width: pw,
        channels: c,
        data,
    }
}

fn check_padded(padded: &ImageBuffer, grid: &WindowGrid) -> Result<()> {
    if padded.height != grid.padded_height || padded.width != grid.padded_width {
        return Err(Error::shape(
            "window grid",
            &[padded.height, padded.width],
            &[grid.padded_height, grid.padded_width],
        ));
    }
    Ok(())
}

/// Copies every window of the grid out of the padded page, row-major.
pub fn extract_windows(padded: &ImageBuffer, grid: &WindowGrid) -> Result<Vec<ImageBuffer>> {
    check_padded(padded, grid)?;
    grid.origins()
        .map(|(y, x)| padded.crop(y, x, grid.window, grid.window))
        .collect()
}

/// Averages windows back into a page: each padded pixel is the mean of the
/// windows covering it. Output is cropped to the original size and clamped.
pub fn stitch_windows(windows: &[ImageBuffer], grid: &WindowGrid) -> Result<ImageBuffer> {
    if windows.len() != grid.len() {
        return Err(Error::InvalidArgument(format!(
            "expected {} windows, got {}",
            grid.len(),
            windows.len()
        )));
    }
    let c = windows.first().map_or(1, |w| w.channels);
    let s = grid.window;
    if let Some(w) = windows
        .iter()
        .find(|w| w.height != s || w.width != s || w.channels != c)
    {
        return Err(Error::shape(
            "stitch",
            &[w.height, w.width, w.channels],
            &[s, s, c],
        ));
    }
    let pw = grid.padded_width;
    let mut acc = vec![0f32; grid.padded_height * pw * c];
    for (win, (y0, x0)) in windows.iter().zip(grid.origins()) {
        for y in 0..s {
            let dst = &mut acc[((y0 + y) * pw + x0) * c..][..s * c];
            for (d, &v) in dst.iter_mut().zip(&win.data[y * s * c..(y + 1) * s * c]) {
                *d += v;
            }
        }
    }
    let coverage = grid.coverage();
    let mut data = Vec::with_capacity(grid.height * grid.width * c);
    for y in 0..grid.height {
        for x in 0..grid.width {
            let n = coverage[y * pw + x] as f32;
            for ch in 0..c {
                data.push((acc[(y * pw + x) * c + ch] / n).clamp(0.0, 1.0));
            }
        }
    }
    ImageBuffer::new(grid.height, grid.width, c, data)
}

/// Window split into `p×p` patches, one flattened patch per row.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSequence {
    pub tokens: Vec<f32>,
    pub patch_size: usize,
    pub window_size: usize,
    pub channels: usize,
}

impl PatchSequence {
    pub fn new(
        tokens: Vec<f32>,
        patch_size: usize,
        window_size: usize,
        channels: usize,
    ) -> Result<Self> {
        if patch_size == 0 || !window_size.is_multiple_of(patch_size) {
            return Err(Error::InvalidArgument(format!(
                "window {window_size} not divisible by patch {patch_size}"
            )));
        }
        let seq = PatchSequence {
            tokens,
            patch_size,
            window_size,
            channels,
        };
        if seq.tokens.len() != seq.num_tokens() * seq.token_len() {
            return Err(Error::shape(
                "patch sequence",
                &[seq.num_tokens(), seq.token_len()],
                &[seq.tokens.len()],
            ));
        }
        Ok(seq)
    }

    /// Patches per window side.
    pub fn grid_side(&self) -> usize {
        self.window_size / self.patch_size
    }

    pub fn num_tokens(&self) -> usize {
        self.grid_side() * self.grid_side()
    }

    pub fn token_len(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn token(&self, i: usize) -> &[f32] {
        let len = self.token_len();
        &self.tokens[i * len..(i + 1) * len]
    }
}

/// Splits an `S×S×C` window into `(S/p)²` row-major patches, each flattened
/// row-major over `(y, x, channel)`.
pub fn tokenize_window(window: &ImageBuffer, patch: usize) -> Result<PatchSequence> {
    let s = window.height;
    if window.width != s {
        return Err(Error::shape(
            "tokenize",
            &[window.height, window.width],
            &[s, s],
        ));
    }
    if patch == 0 || !s.is_multiple_of(patch) {
        return Err(Error::InvalidArgument(format!(
            "window {s} not divisible by patch {patch}"
        )));
    }
    let c = window.channels;
    let side = s / patch;
    let mut tokens = Vec::with_capacity(window.data.len());
    for py in 0..side {
        for px in 0..side {
            for y in 0..patch {
                let start = ((py * patch + y) * s + px * patch) * c;
                tokens.extend_from_slice(&window.data[start..start + patch * c]);
            }
        }
    }
    PatchSequence::new(tokens, patch, s, c)
}

/// Inverse of [`tokenize_window`]. Values are clamped into `[0, 1]` so
/// projected model outputs can be passed directly.
pub fn detokenize(seq: &PatchSequence) -> Result<ImageBuffer> {
    let (p, s, c) = (seq.patch_size, seq.window_size, seq.channels);
    if p == 0 || s % p != 0 || seq.tokens.len() != s * s * c {
        return Err(Error::shape("detokenize", &[s, s, c], &[seq.tokens.len()]));
    }
    let side = s / p;
    let mut data = vec![0f32; s * s * c];
    let mut src = seq.tokens.iter();
    for py in 0..side {
        for px in 0..side {
            for y in 0..p {
                let start = ((py * p + y) * s + px * p) * c;
                for d in &mut data[start..start + p * c] {
                    *d = src.next().copied().unwrap_or_default().clamp(0.0, 1.0);
                }
            }
        }
    }
    ImageBuffer::new(s, s, c, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(h: usize, w: usize, c: usize) -> ImageBuffer {
        ImageBuffer::from_fn(h, w, c, |y, x, ch| {
            ((y * 31 + x * 7 + ch * 3) % 97) as f32 / 96.0
        })
        .unwrap()
    }

    #[test]
    fn exact_fit_needs_no_padding() {
        let (padded, grid) = pad_to_grid(&ramp(256, 256, 1), 256).unwrap();
        assert_eq!((padded.height(), padded.width()), (256, 256));
        assert_eq!(grid.len(), 1);
    }

    #[test]
    fn grid_for_300_by_500() {
        let (padded, grid) = pad_to_grid(&ramp(300, 500, 3), 256).unwrap();
        assert_eq!((padded.height(), padded.width()), (384, 512));
        assert_eq!(grid.row_starts, vec![0, 128]);
        assert_eq!(grid.col_starts, vec![0, 128, 256]);
        assert_eq!(grid.len(), 6);
        assert_eq!(padded.get(383, 511, 2), PAD_VALUE);
    }

    #[test]
    fn small_image_pads_to_one_window() {
        let (padded, grid) = pad_to_grid(&ramp(100, 100, 1), 256).unwrap();
        assert_eq!((padded.height(), padded.width(), grid.len()), (256, 256, 1));
    }

    #[test]
    fn odd_window_is_rejected() {
        assert!(pad_to_grid(&ramp(10, 10, 1), 15).is_err());
    }

    #[test]
    fn single_window_extract_is_the_padded_image() {
        let (padded, grid) = pad_to_grid(&ramp(64, 64, 1), 64).unwrap();
        let windows = extract_windows(&padded, &grid).unwrap();
        assert_eq!(windows, vec![padded]);
    }

    #[test]
    fn windows_align_and_share_overlaps() {
        let img = ramp(300, 500, 3);
        let (padded, grid) = pad_to_grid(&img, 256).unwrap();
        let w = extract_windows(&padded, &grid).unwrap();
        assert_eq!(w[0].get(0, 0, 0), img.get(0, 0, 0));
        // windows 0 and 1 overlap on columns 128..256 of the page
        for y in 0..256 {
            for x in 0..128 {
                assert_eq!(w[0].get(y, 128 + x, 1), w[1].get(y, x, 1));
            }
        }
    }

    #[test]
    fn stitching_averages_disagreements() {
        let grid = WindowGrid::half_overlap(4, 6, 4).unwrap();
        assert_eq!(grid.len(), 2);
        let a = ImageBuffer::filled(4, 4, 1, 0.7).unwrap();
        let b = ImageBuffer::filled(4, 4, 1, 0.3).unwrap();
        let out = stitch_windows(&[a, b], &grid).unwrap();
        assert!((out.get(1, 2, 0) - 0.5).abs() < 1e-6);
        assert!((out.get(1, 0, 0) - 0.7).abs() < 1e-6);
        assert!((out.get(1, 5, 0) - 0.3).abs() < 1e-6);
    }

    #[test]
    fn all_white_windows_stitch_to_white() {
        let grid = WindowGrid::half_overlap(50, 70, 32).unwrap();
        let windows = vec![ImageBuffer::filled(32, 32, 1, 1.0).unwrap(); grid.len()];
        let out = stitch_windows(&windows, &grid).unwrap();
        assert!(out.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn stitch_rejects_wrong_count() {
        let grid = WindowGrid::half_overlap(50, 70, 32).unwrap();
        assert!(stitch_windows(&[ImageBuffer::filled(32, 32, 1, 1.0).unwrap()], &grid).is_err());
    }

    #[test]
    fn coverage_is_one_two_or_four() {
        let grid = WindowGrid::half_overlap(300, 500, 256).unwrap();
        let cov = grid.coverage();
        assert!(cov.iter().all(|c| matches!(c, 1 | 2 | 4)));
        assert_eq!(cov[200 * grid.padded_width + 200], 4);
    }

    #[test]
    fn token_counts_for_table_sizes() {
        let w = ramp(256, 256, 3);
        let seq = tokenize_window(&w, 16).unwrap();
        assert_eq!((seq.num_tokens(), seq.token_len()), (256, 768));
        let seq = tokenize_window(&w, 8).unwrap();
        assert_eq!((seq.num_tokens(), seq.token_len()), (1024, 192));
        assert!(tokenize_window(&w, 24).is_err());
    }

    #[test]
    fn single_patch_is_the_window_flattened() {
        let w = ramp(8, 8, 1);
        let seq = tokenize_window(&w, 8).unwrap();
        assert_eq!(seq.tokens, w.data());
    }

    #[test]
    fn quadrants_land_in_place() {
        let values = [0.1, 0.2, 0.3, 0.4];
        let mut tokens = Vec::new();
        for v in values {
            tokens.extend(std::iter::repeat_n(v, 4));
        }
        let img = detokenize(&PatchSequence::new(tokens, 2, 4, 1).unwrap()).unwrap();
        assert_eq!(img.get(0, 0, 0), 0.1);
        assert_eq!(img.get(1, 3, 0), 0.2);
        assert_eq!(img.get(3, 0, 0), 0.3);
        assert_eq!(img.get(2, 2, 0), 0.4);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn stitch_of_extract_is_identity(h in 1usize..140, w in 1usize..140, s in prop::sample::select(vec![16usize, 32, 64])) {
            let img = ramp(h, w, 1);
            let (padded, grid) = pad_to_grid(&img, s).unwrap();
            let out = stitch_windows(&extract_windows(&padded, &grid).unwrap(), &grid).unwrap();
            prop_assert_eq!(out.height(), h);
            prop_assert_eq!(out.width(), w);
            for (a, b) in out.data().iter().zip(img.data()) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }

        #[test]
        fn tokenize_round_trips(c in prop::sample::select(vec![1usize, 3]), p in prop::sample::select(vec![1usize, 2, 4, 8])) {
            let img = ramp(16, 16, c);
            let seq = tokenize_window(&img, p).unwrap();
            prop_assert_eq!(detokenize(&seq).unwrap(), img);
        }
    }
}
