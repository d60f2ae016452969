//! Synthetic degraded pages: text-like strokes on white plus stain,
//! bleed-through, blur and salt-and-pepper noise.

use std::f32::consts::PI;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::metrics::BinaryImage;
use crate::patching::ImageBuffer;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub height: usize,
    pub width: usize,
    /// Probability that a glyph slot along a text line holds ink, in [0,1].
    pub stroke_density: f32,
    /// Amplitude of the low-frequency background stain, in [0,1].
    pub stain: f32,
    /// Per-pixel inversion probability, in [0,1].
    pub saltpepper: f32,
    /// Gaussian blur sigma in pixels; 0 disables.
    pub blur: f32,
    /// Opacity of the mirrored bleed-through layer, in [0,1].
    pub bleed: f32,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            height: 64,
            width: 64,
            stroke_density: 0.9,
            stain: 0.0,
            saltpepper: 0.0,
            blur: 0.0,
            bleed: 0.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::InvalidArgument(format!(
                "canvas must be non-empty, got {}x{}",
                self.width, self.height
            )));
        }
        for (name, v) in [
            ("stroke density", self.stroke_density),
            ("stain", self.stain),
            ("salt-pepper rate", self.saltpepper),
            ("bleed", self.bleed),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be in [0,1], got {v}"
                )));
            }
        }
        if !(0.0..=16.0).contains(&self.blur) {
            return Err(Error::InvalidArgument(format!(
                "blur sigma must be in [0,16], got {}",
                self.blur
            )));
        }
        Ok(())
    }
}

// Independent RNG streams per ingredient, so changing one intensity does not
// move the others.
const STREAM_TEXT: u64 = 0;
const STREAM_BLEED: u64 = 1;
const STREAM_STAIN: u64 = 2;
const STREAM_NOISE: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

struct Canvas {
    h: usize,
    w: usize,
    ink: Vec<bool>,
}

impl Canvas {
    fn new(h: usize, w: usize) -> Self {
        Canvas {
            h,
            w,
            ink: vec![false; h * w],
        }
    }

    fn stamp(&mut self, cy: f32, cx: f32, r: f32) {
        let r2 = r * r + 1e-3;
        let y0 = (cy - r - 1.0).floor().max(0.0) as usize;
        let x0 = (cx - r - 1.0).floor().max(0.0) as usize;
        let y1 = ((cy + r + 1.0).ceil() as usize).min(self.h);
        let x1 = ((cx + r + 1.0).ceil() as usize).min(self.w);
        for y in y0..y1 {
            for x in x0..x1 {
                let (dy, dx) = (y as f32 + 0.5 - cy, x as f32 + 0.5 - cx);
                if dy * dy + dx * dx <= r2 {
                    self.ink[y * self.w + x] = true;
                }
            }
        }
    }

    fn path(&mut self, points: impl Iterator<Item = (f32, f32)>, r: f32) {
        for (y, x) in points {
            self.stamp(y, x, r);
        }
    }

    fn segment(&mut self, a: (f32, f32), b: (f32, f32), r: f32) {
        let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
        let n = (len / 0.25).ceil().max(1.0) as usize;
        self.path(
            (0..=n).map(|i| {
                let t = i as f32 / n as f32;
                (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1))
            }),
            r,
        );
    }

    #[allow(clippy::too_many_arguments)]
    fn arc(&mut self, cy: f32, cx: f32, ry: f32, rx: f32, start: f32, sweep: f32, r: f32) {
        let n = ((ry.max(rx) * sweep.abs()) / 0.25).ceil().max(1.0) as usize;
        self.path(
            (0..=n).map(|i| {
                let a = start + sweep * i as f32 / n as f32;
                (cy + ry * a.sin(), cx + rx * a.cos())
            }),
            r,
        );
    }
}

/// Lines of glyph-sized stroke clusters (segments and elliptic arcs).
fn render_text(h: usize, w: usize, density: f32, rng: &mut ChaCha8Rng) -> Canvas {
    let mut canvas = Canvas::new(h, w);
    let margin = 2usize;
    let mut y = margin + rng.gen_range(0..4);
    loop {
        let line_h = rng.gen_range(12..=20usize);
        if y + line_h + margin > h {
            break;
        }
        // pen width 1, 2 or 3 px in proportion 1:3:3; hairlines are the exception
        let radius = [0.5, 1.0, 1.0, 1.0, 1.5, 1.5, 1.5][rng.gen_range(0..7)];
        let (top, bottom) = ((y + 2) as f32, (y + line_h - 2) as f32);
        let mut x = margin + rng.gen_range(0..6);
        loop {
            let glyph_w = rng.gen_range(5..=10usize);
            if x + glyph_w + margin > w {
                break;
            }
            if rng.gen::<f32>() < density {
                let (left, right) = (x as f32 + radius, (x + glyph_w) as f32 - radius);
                let point = |rng: &mut ChaCha8Rng| {
                    (rng.gen_range(top..=bottom), rng.gen_range(left..=right))
                };
                for _ in 0..rng.gen_range(1..=3) {
                    if rng.gen::<f32>() < 0.6 {
                        let (a, b) = (point(rng), point(rng));
                        canvas.segment(a, b, radius);
                    } else {
                        let (cy, cx) = point(rng);
                        let ry = rng.gen_range(2.0..=((bottom - top) / 2.0).max(2.0));
                        let rx = rng.gen_range(2.0..=((right - left) / 2.0).max(2.0));
                        let start = rng.gen_range(0.0..2.0 * PI);
                        let sweep = rng.gen_range(PI / 2.0..=2.0 * PI);
                        canvas.arc(cy, cx, ry, rx, start, sweep, radius);
                    }
                }
            }
            x += glyph_w + rng.gen_range(2..=4);
            if rng.gen::<f32>() < 0.2 {
                x += rng.gen_range(4..=8);
            }
        }
        y += line_h + rng.gen_range(2..=6);
    }
    canvas
}

/// Smooth field in [0,1]: a few broad Gaussian blobs plus a linear ramp.
fn stain_field(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let scale = h.max(w) as f32;
    let blobs: Vec<_> = (0..3)
        .map(|_| {
            let cy = rng.gen_range(-0.2..1.2) * h as f32;
            let cx = rng.gen_range(-0.2..1.2) * w as f32;
            let sigma = rng.gen_range(0.25..0.6) * scale;
            let amp = rng.gen_range(0.5..1.0f32);
            (cy, cx, 2.0 * sigma * sigma, amp)
        })
        .collect();
    let (gy, gx) = (rng.gen_range(0.0..0.5f32), rng.gen_range(0.0..0.5f32));
    let mut field: Vec<f32> = (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as f32, (i % w) as f32);
            let blob: f32 = blobs
                .iter()
                .map(|&(cy, cx, two_s2, amp)| {
                    amp * (-((y - cy).powi(2) + (x - cx).powi(2)) / two_s2).exp()
                })
                .sum();
            blob + gy * y / h as f32 + gx * x / w as f32
        })
        .collect();
    let max = field.iter().copied().fold(0.0f32, f32::max);
    if max > 0.0 {
        field.iter_mut().for_each(|v| *v /= max);
    }
    field
}

fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

/// Separable Gaussian blur of one interleaved channel, replicate borders.
fn blur_channel(data: &mut [f32], h: usize, w: usize, c: usize, ch: usize, kernel: &[f32]) {
    let r = (kernel.len() / 2) as isize;
    let at = |y: usize, x: usize| (y * w + x) * c + ch;
    let mut tmp = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, &wt)| {
                    let xx = (x as isize + k as isize - r).clamp(0, w as isize - 1) as usize;
                    wt * data[at(y, xx)]
                })
                .sum();
        }
    }
    for y in 0..h {
        for x in 0..w {
            data[at(y, x)] = kernel
                .iter()
                .enumerate()
                .map(|(k, &wt)| {
                    let yy = (y as isize + k as isize - r).clamp(0, h as isize - 1) as usize;
                    wt * tmp[yy * w + x]
                })
                .sum();
        }
    }
}

/// Renders one `(degraded RGB, clean GT)` pair. Deterministic per spec.
pub fn synthesize_pair(spec: &SynthSpec) -> Result<(ImageBuffer, BinaryImage)> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let text = render_text(
        h,
        w,
        spec.stroke_density,
        &mut stream(spec.seed, STREAM_TEXT),
    );
    let clean = BinaryImage::new(h, w, text.ink.iter().map(|&i| u8::from(!i)).collect())?;

    let mut gray: Vec<f32> = clean.data().iter().map(|&v| v as f32).collect();
    if spec.bleed > 0.0 {
        let back = render_text(
            h,
            w,
            spec.stroke_density,
            &mut stream(spec.seed, STREAM_BLEED),
        );
        for y in 0..h {
            for x in 0..w {
                if back.ink[y * w + (w - 1 - x)] {
                    gray[y * w + x] *= 1.0 - spec.bleed;
                }
            }
        }
    }

    let mut rgb: Vec<f32> = gray.iter().flat_map(|&v| [v; 3]).collect();
    if spec.stain > 0.0 {
        let mut rng = stream(spec.seed, STREAM_STAIN);
        let tint = [
            1.0,
            rng.gen_range(0.8..1.0f32),
            rng.gen_range(0.55..0.85f32),
        ];
        let field = stain_field(h, w, &mut rng);
        for (px, f) in rgb.chunks_exact_mut(3).zip(&field) {
            for (v, t) in px.iter_mut().zip(tint) {
                *v *= 1.0 - spec.stain * f * t;
            }
        }
    }
    if spec.blur > 0.0 {
        let kernel = gaussian_kernel(spec.blur);
        for ch in 0..3 {
            blur_channel(&mut rgb, h, w, 3, ch, &kernel);
        }
    }
    if spec.saltpepper > 0.0 {
        let mut rng = stream(spec.seed, STREAM_NOISE);
        for px in rgb.chunks_exact_mut(3) {
            if rng.gen::<f32>() < spec.saltpepper {
                px.iter_mut().for_each(|v| *v = 1.0 - *v);
            }
        }
    }
    let degraded = ImageBuffer::from_fn(h, w, 3, |y, x, c| rgb[(y * w + x) * 3 + c])?;
    Ok((degraded, clean))
}

/// `count` pairs whose seeds are drawn from `spec.seed`.
pub fn synthesize_corpus(
    spec: &SynthSpec,
    count: usize,
) -> Result<Vec<(ImageBuffer, BinaryImage)>> {
    let mut master = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..count)
        .map(|_| {
            synthesize_pair(&SynthSpec {
                seed: master.next_u64(),
                ..spec.clone()
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(seed: u64) -> SynthSpec {
        SynthSpec {
            height: 100,
            width: 100,
            seed,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn zero_intensities_give_the_clean_page() {
        let (d, c) = synthesize_pair(&spec(1)).unwrap();
        assert_eq!(d, c.to_image().to_rgb());
        let ink = c.foreground_count();
        assert!(ink > 200 && ink < 5000, "{ink}");
    }

    #[test]
    fn seeded_determinism() {
        let s = SynthSpec {
            stain: 0.3,
            saltpepper: 0.02,
            blur: 1.0,
            bleed: 0.4,
            ..spec(9)
        };
        assert_eq!(synthesize_pair(&s).unwrap(), synthesize_pair(&s).unwrap());
        assert_ne!(
            synthesize_pair(&s).unwrap().1,
            synthesize_pair(&SynthSpec {
                seed: 10,
                ..s.clone()
            })
            .unwrap()
            .1
        );
        let corpus = synthesize_corpus(&s, 3).unwrap();
        assert_eq!(corpus, synthesize_corpus(&s, 3).unwrap());
        assert_ne!(corpus[0], corpus[1]);
    }

    #[test]
    fn salt_pepper_count_is_binomial() {
        let s = SynthSpec {
            saltpepper: 0.1,
            ..spec(4)
        };
        let (d, c) = synthesize_pair(&s).unwrap();
        let flipped = d
            .to_gray()
            .data()
            .iter()
            .zip(c.data())
            .filter(|(a, b)| **a != **b as f32)
            .count() as f64;
        let (n, p) = (10_000.0f64, 0.1f64);
        let sigma = (n * p * (1.0 - p)).sqrt();
        assert!((flipped - n * p).abs() <= 3.0 * sigma, "{flipped}");
    }

    #[test]
    fn degradations_stay_in_range() {
        let s = SynthSpec {
            stain: 1.0,
            saltpepper: 0.5,
            blur: 2.5,
            bleed: 1.0,
            ..spec(2)
        };
        let (d, _) = synthesize_pair(&s).unwrap();
        assert!(d.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn invalid_spec_is_rejected() {
        assert!(synthesize_pair(&SynthSpec {
            stain: 1.5,
            ..spec(0)
        })
        .is_err());
        assert!(synthesize_pair(&SynthSpec {
            blur: -1.0,
            ..spec(0)
        })
        .is_err());
        assert!(synthesize_pair(&SynthSpec {
            width: 0,
            ..spec(0)
        })
        .is_err());
    }
}
