//! Binarization quality measures: PSNR, F-measure, pseudo F-measure (recall
//! against the GT skeleton) and DRD (distance reciprocal distortion).
//!
//! Convention throughout: 0 is foreground text, 1 is background.

mod thin;

use std::fmt::Write as _;

pub use thin::thin;

use crate::error::{Error, Result};
use crate::patching::ImageBuffer;

/// Default binarization threshold; values `<=` it are foreground.
pub const DEFAULT_THRESHOLD: f32 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryImage {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl BinaryImage {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::shape(
                "binary image",
                &[height, width],
                &[data.len()],
            ));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::InvalidArgument(
                "binary image values must be 0 or 1".into(),
            ));
        }
        Ok(BinaryImage {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: u8) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, value: u8) {
        self.data[y * self.width + x] = value.min(1);
    }

    pub fn foreground_count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 0).count()
    }

    pub fn to_image(&self) -> ImageBuffer {
        let data = self.data.iter().map(|&v| v as f32).collect();
        ImageBuffer::new(self.height, self.width, 1, data).expect("valid dimensions")
    }

    pub fn crop(&self, height: usize, width: usize) -> Result<BinaryImage> {
        if height > self.height || width > self.width {
            return Err(Error::shape(
                "crop",
                &[self.height, self.width],
                &[height, width],
            ));
        }
        let data = (0..height)
            .flat_map(|y| {
                self.data[y * self.width..y * self.width + width]
                    .iter()
                    .copied()
            })
            .collect();
        BinaryImage::new(height, width, data)
    }
}

/// Thresholds a grayscale image (3-channel input is averaged first).
pub fn binarize(gray: &ImageBuffer, threshold: f32) -> BinaryImage {
    let gray = gray.to_gray();
    let data = gray
        .data()
        .iter()
        .map(|&v| u8::from(v > threshold))
        .collect();
    BinaryImage::new(gray.height(), gray.width(), data).expect("valid dimensions")
}

fn same_dims(a: &BinaryImage, b: &BinaryImage) -> Result<()> {
    if a.height != b.height || a.width != b.width {
        return Err(Error::shape(
            "metric",
            &[a.height, a.width],
            &[b.height, b.width],
        ));
    }
    Ok(())
}

/// Foreground confusion counts of a prediction against GT.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn of(pred: &BinaryImage, gt: &BinaryImage) -> Result<Self> {
        same_dims(pred, gt)?;
        let mut c = Confusion::default();
        for (&p, &g) in pred.data.iter().zip(&gt.data) {
            match (p, g) {
                (0, 0) => c.tp += 1,
                (0, _) => c.fp += 1,
                (_, 0) => c.fn_ += 1,
                _ => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic_percent(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        100.0 * 2.0 * p * r / (p + r)
    }
}

/// `10·log10(1/MSE)` in dB; identical images give `f64::INFINITY`.
pub fn psnr(pred: &BinaryImage, gt: &BinaryImage) -> Result<f64> {
    same_dims(pred, gt)?;
    let wrong = pred
        .data
        .iter()
        .zip(&gt.data)
        .filter(|(a, b)| a != b)
        .count();
    Ok(psnr_from_mse(wrong as f64 / pred.data.len() as f64))
}

/// PSNR over continuous grayscale images with peak 1.
pub fn psnr_gray(pred: &ImageBuffer, reference: &ImageBuffer) -> Result<f64> {
    let (a, b) = (pred.to_gray(), reference.to_gray());
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::shape(
            "psnr",
            &[a.height(), a.width()],
            &[b.height(), b.width()],
        ));
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / a.data().len() as f64;
    Ok(psnr_from_mse(mse))
}

fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

fn require_text(gt: &BinaryImage) -> Result<()> {
    if gt.foreground_count() == 0 {
        return Err(Error::UndefinedMetric(
            "ground truth has no foreground pixels, recall is undefined".into(),
        ));
    }
    Ok(())
}

/// F-measure of the foreground, in percent.
pub fn f_measure(pred: &BinaryImage, gt: &BinaryImage) -> Result<f64> {
    same_dims(pred, gt)?;
    require_text(gt)?;
    let c = Confusion::of(pred, gt)?;
    Ok(harmonic_percent(c.precision(), c.recall()))
}

/// F-measure with recall measured against the GT skeleton, in percent.
pub fn pseudo_f_measure(pred: &BinaryImage, gt: &BinaryImage) -> Result<f64> {
    same_dims(pred, gt)?;
    require_text(gt)?;
    let skeleton = thin(gt);
    pseudo_f_measure_with_skeleton(pred, gt, &skeleton)
}

fn pseudo_f_measure_with_skeleton(
    pred: &BinaryImage,
    gt: &BinaryImage,
    skeleton: &BinaryImage,
) -> Result<f64> {
    let precision = Confusion::of(pred, gt)?.precision();
    let (mut hit, mut total) = (0usize, 0usize);
    for (&s, &p) in skeleton.data.iter().zip(&pred.data) {
        if s == 0 {
            total += 1;
            hit += usize::from(p == 0);
        }
    }
    if total == 0 {
        // thinning erased every stroke (e.g. 2x2 blobs): fall back to plain recall
        return Ok(harmonic_percent(
            precision,
            Confusion::of(pred, gt)?.recall(),
        ));
    }
    Ok(harmonic_percent(precision, ratio(hit, total)))
}

/// Side of the DRD neighbourhood.
pub const DRD_WINDOW: usize = 5;
/// Side of the NUBN blocks.
pub const NUBN_BLOCK: usize = 8;

/// 5×5 reciprocal-distance weights, zero at the centre, normalized to sum 1.
pub fn drd_weights() -> [[f64; DRD_WINDOW]; DRD_WINDOW] {
    let c = (DRD_WINDOW / 2) as f64;
    let mut w = [[0.0; DRD_WINDOW]; DRD_WINDOW];
    let mut total = 0.0;
    for (i, row) in w.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - c, j as f64 - c);
            if di != 0.0 || dj != 0.0 {
                *v = 1.0 / (di * di + dj * dj).sqrt();
                total += *v;
            }
        }
    }
    for v in w.iter_mut().flatten() {
        *v /= total;
    }
    w
}

/// Number of 8×8 GT blocks (edge blocks included) holding both values.
pub fn nubn(gt: &BinaryImage) -> usize {
    let mut count = 0;
    for by in (0..gt.height).step_by(NUBN_BLOCK) {
        for bx in (0..gt.width).step_by(NUBN_BLOCK) {
            let (mut fg, mut bg) = (false, false);
            for y in by..(by + NUBN_BLOCK).min(gt.height) {
                for x in bx..(bx + NUBN_BLOCK).min(gt.width) {
                    if gt.get(y, x) == 0 {
                        fg = true;
                    } else {
                        bg = true;
                    }
                }
            }
            count += usize::from(fg && bg);
        }
    }
    count
}

/// Distance reciprocal distortion: the weighted GT disagreement around every
/// flipped pixel, summed and divided by [`nubn`]. GT is replicate-padded.
pub fn drd(pred: &BinaryImage, gt: &BinaryImage) -> Result<f64> {
    same_dims(pred, gt)?;
    let weights = drd_weights();
    let half = (DRD_WINDOW / 2) as isize;
    let clampi = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    let mut total = 0.0;
    let mut flipped = false;
    for y in 0..gt.height {
        for x in 0..gt.width {
            let value = pred.get(y, x);
            if value == gt.get(y, x) {
                continue;
            }
            flipped = true;
            for (i, row) in weights.iter().enumerate() {
                let gy = clampi(y as isize + i as isize - half, gt.height);
                for (j, w) in row.iter().enumerate() {
                    let gx = clampi(x as isize + j as isize - half, gt.width);
                    if gt.get(gy, gx) != value {
                        total += w;
                    }
                }
            }
        }
    }
    if !flipped {
        return Ok(0.0);
    }
    match nubn(gt) {
        0 => Err(Error::UndefinedMetric(
            "prediction differs from a uniform ground truth (NUBN = 0)".into(),
        )),
        n => Ok(total / n as f64),
    }
}

/// All four measures for one image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    /// dB; `f64::INFINITY` for a perfect match.
    pub psnr: f64,
    pub fm: f64,
    pub fps: f64,
    pub drd: f64,
}

impl MetricsReport {
    pub fn compute(pred: &BinaryImage, gt: &BinaryImage) -> Result<Self> {
        same_dims(pred, gt)?;
        require_text(gt)?;
        let skeleton = thin(gt);
        Ok(MetricsReport {
            psnr: psnr(pred, gt)?,
            fm: f_measure(pred, gt)?,
            fps: pseudo_f_measure_with_skeleton(pred, gt, &skeleton)?,
            drd: drd(pred, gt)?,
        })
    }

    /// Unweighted per-field mean; `None` for an empty corpus.
    pub fn mean(reports: &[MetricsReport]) -> Option<MetricsReport> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let avg = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        Some(MetricsReport {
            psnr: avg(|r| r.psnr),
            fm: avg(|r| r.fm),
            fps: avg(|r| r.fps),
            drd: avg(|r| r.drd),
        })
    }
}

/// Binarizes a continuous prediction, crops it to the GT size and scores it.
pub fn evaluate_pair(
    pred_gray: &ImageBuffer,
    gt: &BinaryImage,
    threshold: f32,
) -> Result<MetricsReport> {
    if pred_gray.height() < gt.height() || pred_gray.width() < gt.width() {
        return Err(Error::shape(
            "evaluate",
            &[pred_gray.height(), pred_gray.width()],
            &[gt.height(), gt.width()],
        ));
    }
    let pred = binarize(pred_gray, threshold).crop(gt.height(), gt.width())?;
    MetricsReport::compute(&pred, gt)
}

fn fmt_value(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.4}")
    }
}

/// Tab-separated report: `name psnr fm fps drd` per image, then a `MEAN` line.
pub fn format_report(rows: &[(String, MetricsReport)]) -> String {
    let mut out = String::new();
    let line = |out: &mut String, name: &str, r: &MetricsReport| {
        let _ = writeln!(
            out,
            "{name}\t{}\t{}\t{}\t{}",
            fmt_value(r.psnr),
            fmt_value(r.fm),
            fmt_value(r.fps),
            fmt_value(r.drd)
        );
    };
    for (name, r) in rows {
        line(&mut out, name, r);
    }
    let reports: Vec<_> = rows.iter().map(|(_, r)| *r).collect();
    if let Some(mean) = MetricsReport::mean(&reports) {
        line(&mut out, "MEAN", &mean);
    }
    out
}
