use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::pnm::load_image;
use crate::error::{Error, Result};
use crate::metrics::binarize;
use crate::patching::{extract_windows, pad_image, ImageBuffer, WindowGrid};

pub const DEGRADED_DIR: &str = "degraded";
pub const GT_DIR: &str = "gt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Split {
    #[default]
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::InvalidArgument(format!("unknown split {s:?}"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// Paired degraded/GT image files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub split: Split,
    pub pairs: Vec<(PathBuf, PathBuf)>,
}

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref(),
        Some("pgm" | "ppm")
    )
}

fn images_by_stem(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if !path.is_file() || !is_image(&path) {
            continue;
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        if let Some(prev) = out.insert(stem.clone(), path.clone()) {
            return Err(Error::Dataset(format!(
                "stem {stem:?} appears twice: {} and {}",
                prev.display(),
                path.display()
            )));
        }
    }
    Ok(out)
}

impl DatasetManifest {
    /// Pairs `root/degraded/<stem>.*` with `root/gt/<stem>.*`; any file
    /// without a partner is an error. Pairs come out sorted by stem.
    pub fn from_dir(root: impl AsRef<Path>, split: Split) -> Result<Self> {
        let root = root.as_ref();
        let degraded = images_by_stem(&root.join(DEGRADED_DIR))?;
        let mut gt = images_by_stem(&root.join(GT_DIR))?;
        let mut pairs = Vec::with_capacity(degraded.len());
        for (stem, d) in degraded {
            let g = gt
                .remove(&stem)
                .ok_or_else(|| Error::Dataset(format!("no gt image for {}", d.display())))?;
            pairs.push((d, g));
        }
        if let Some(orphan) = gt.values().next() {
            return Err(Error::Dataset(format!(
                "no degraded image for {}",
                orphan.display()
            )));
        }
        Ok(DatasetManifest {
            root: root.to_path_buf(),
            split,
            pairs,
        })
    }

    /// Reads `degraded<TAB>gt` lines; relative paths resolve against the
    /// manifest's directory. Blank lines and `#` comments are skipped.
    pub fn from_file(path: impl AsRef<Path>, split: Split) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().unwrap_or(Path::new("")).to_path_buf();
        let mut pairs = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (d, g) = line.split_once('\t').ok_or_else(|| {
                Error::Dataset(format!(
                    "{}:{}: expected degraded<TAB>gt",
                    path.display(),
                    no + 1
                ))
            })?;
            pairs.push((root.join(d), root.join(g)));
        }
        for (d, g) in &pairs {
            for p in [d, g] {
                if !p.is_file() {
                    return Err(Error::Dataset(format!("missing file {}", p.display())));
                }
            }
        }
        Ok(DatasetManifest { root, split, pairs })
    }

    /// Manifest text with paths relative to `root` where possible.
    pub fn to_manifest_text(&self) -> String {
        let rel = |p: &Path| {
            p.strip_prefix(&self.root)
                .unwrap_or(p)
                .display()
                .to_string()
        };
        self.pairs
            .iter()
            .map(|(d, g)| format!("{}\t{}\n", rel(d), rel(g)))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Loads every pair as `(degraded, gt)` images, checking dimensions.
    pub fn load_pairs(&self) -> Result<Vec<(ImageBuffer, ImageBuffer)>> {
        self.pairs
            .iter()
            .map(|(d, g)| {
                let (di, gi) = (load_image(d)?, load_image(g)?);
                if (di.height(), di.width()) != (gi.height(), gi.width()) {
                    return Err(Error::Dataset(format!(
                        "{} is {}x{} but {} is {}x{}",
                        d.display(),
                        di.width(),
                        di.height(),
                        g.display(),
                        gi.width(),
                        gi.height()
                    )));
                }
                Ok((di, gi))
            })
            .collect()
    }
}

/// One aligned training example: 3-channel input and 1-channel {0,1} target.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPair {
    pub degraded: ImageBuffer,
    pub gt: ImageBuffer,
}

/// Pads both images with white onto the same grid and cuts aligned windows.
/// The degraded side is replicated to RGB; GT is reduced to its channel mean
/// and binarized at 0.5.
pub fn window_pairs(
    degraded: &ImageBuffer,
    gt: &ImageBuffer,
    window: usize,
    stride: usize,
) -> Result<Vec<WindowPair>> {
    if (degraded.height(), degraded.width()) != (gt.height(), gt.width()) {
        return Err(Error::shape(
            "window pair",
            &[degraded.height(), degraded.width()],
            &[gt.height(), gt.width()],
        ));
    }
    let grid = WindowGrid::new(degraded.height(), degraded.width(), window, stride)?;
    let gt = binarize(gt, 0.5).to_image();
    let d = extract_windows(&pad_image(&degraded.to_rgb(), &grid), &grid)?;
    let g = extract_windows(&pad_image(&gt, &grid), &grid)?;
    Ok(d.into_iter()
        .zip(g)
        .map(|(degraded, gt)| WindowPair { degraded, gt })
        .collect())
}

pub fn build_window_dataset(
    manifest: &DatasetManifest,
    window: usize,
    stride: usize,
) -> Result<Vec<WindowPair>> {
    let mut out = Vec::new();
    for (d, g) in manifest.load_pairs()? {
        out.extend(window_pairs(&d, &g, window, stride)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::save_image;
    use crate::patching::stitch_windows;

    fn page(h: usize, w: usize) -> (ImageBuffer, ImageBuffer) {
        let d =
            ImageBuffer::from_fn(h, w, 3, |y, x, c| ((y + 2 * x + c) % 17) as f32 / 16.0).unwrap();
        let g = ImageBuffer::from_fn(h, w, 1, |y, x, _| ((y / 5 + x / 7) % 2) as f32).unwrap();
        (d, g)
    }

    #[test]
    fn spec_window_count_and_alignment() {
        let (d, g) = page(300, 500);
        let pairs = window_pairs(&d, &g, 256, 128).unwrap();
        assert_eq!(pairs.len(), 6);
        let grid = WindowGrid::new(300, 500, 256, 128).unwrap();
        for ((y, x), p) in grid.origins().zip(&pairs) {
            assert_eq!(p.degraded.channels(), 3);
            assert_eq!(p.gt.channels(), 1);
            let (yy, xx) = (y + 3, x + 5);
            if yy < 300 && xx < 500 {
                assert_eq!(p.degraded.get(3, 5, 1), d.get(yy, xx, 1));
                assert_eq!(p.gt.get(3, 5, 0), g.get(yy, xx, 0));
            }
            assert!(p.gt.data().iter().all(|&v| v == 0.0 || v == 1.0));
        }
        let gts: Vec<_> = pairs.iter().map(|p| p.gt.clone()).collect();
        assert_eq!(stitch_windows(&gts, &grid).unwrap(), g);
    }

    #[test]
    fn mismatched_pair_is_rejected() {
        let (d, _) = page(20, 20);
        let (_, g) = page(20, 21);
        assert!(window_pairs(&d, &g, 16, 8).is_err());
    }

    #[test]
    fn directory_pairing_by_stem() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join(DEGRADED_DIR)).unwrap();
        fs::create_dir_all(dir.path().join(GT_DIR)).unwrap();
        let (d, g) = page(20, 24);
        for stem in ["b", "a"] {
            save_image(
                dir.path().join(DEGRADED_DIR).join(format!("{stem}.ppm")),
                &d,
            )
            .unwrap();
            save_image(dir.path().join(GT_DIR).join(format!("{stem}.pgm")), &g).unwrap();
        }
        let m = DatasetManifest::from_dir(dir.path(), Split::Train).unwrap();
        assert_eq!(m.len(), 2);
        assert!(m.pairs[0].0.ends_with("degraded/a.ppm"));
        assert_eq!(build_window_dataset(&m, 16, 8).unwrap().len(), 2 * 2 * 2);

        let text = m.to_manifest_text();
        assert_eq!(text.lines().next(), Some("degraded/a.ppm\tgt/a.pgm"));
        let file = dir.path().join("train.tsv");
        fs::write(&file, &text).unwrap();
        let again = DatasetManifest::from_file(&file, Split::Train).unwrap();
        assert_eq!(again.pairs, m.pairs);

        save_image(dir.path().join(GT_DIR).join("c.pgm"), &g).unwrap();
        assert!(matches!(
            DatasetManifest::from_dir(dir.path(), Split::Train),
            Err(Error::Dataset(_))
        ));
    }
}
