use std::fmt::Write as _;
use std::path::Path;

use super::raster::RasterImage;
use crate::error::{Error, Result};
use crate::tensor::Tensor4;

pub const STATS_FILE: &str = "band_stats.txt";

/// Floor on the per-band variance before taking the square root.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Per-band mean and standard deviation used to whiten inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct BandStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl BandStats {
    /// Pixel-pooled statistics over every image (two passes, f64).
    pub fn compute<'a>(images: impl IntoIterator<Item = &'a RasterImage> + Clone) -> Result<Self> {
        let mut bands = None;
        let mut sum = Vec::new();
        let mut count = 0usize;
        for img in images.clone() {
            let b = *bands.get_or_insert(img.bands());
            if img.bands() != b {
                return Err(Error::Data(format!("band count {} differs from {b}", img.bands())));
            }
            sum.resize(b, 0.0f64);
            let plane = img.width() * img.height();
            for (k, chunk) in img.to_f32().chunks(plane.max(1)).enumerate() {
                sum[k] += chunk.iter().map(|&v| v as f64).sum::<f64>();
            }
            count += plane;
        }
        let bands = bands.ok_or_else(|| Error::Data("no images to compute band statistics from".into()))?;
        if count == 0 {
            return Err(Error::Data("images have no pixels".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut sq = vec![0.0f64; bands];
        for img in images {
            let plane = img.width() * img.height();
            for (k, chunk) in img.to_f32().chunks(plane.max(1)).enumerate() {
                sq[k] += chunk.iter().map(|&v| (v as f64 - mean[k]).powi(2)).sum::<f64>();
            }
        }
        let std = sq.iter().map(|s| (s / count as f64).max(VARIANCE_FLOOR).sqrt()).collect();
        Ok(BandStats { mean, std })
    }

    pub fn bands(&self) -> usize {
        self.mean.len()
    }

    /// `(x - mean) / std` per band, as a `(1, bands, h, w)` tensor.
    pub fn apply(&self, img: &RasterImage) -> Result<Tensor4<f32>> {
        if img.bands() != self.bands() {
            return Err(Error::Data(format!(
                "image has {} bands, statistics cover {}",
                img.bands(),
                self.bands()
            )));
        }
        let plane = img.width() * img.height();
        let mut data = img.to_f32();
        for (k, chunk) in data.chunks_mut(plane.max(1)).enumerate() {
            let (m, s) = (self.mean[k], self.std[k]);
            for v in chunk {
                *v = ((*v as f64 - m) / s) as f32;
            }
        }
        Tensor4::from_vec([1, img.bands(), img.height(), img.width()], data)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, (m, s)) in self.mean.iter().zip(&self.std).enumerate() {
            let _ = writeln!(out, "{k} {m} {s}");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut stats = BandStats {
            mean: Vec::new(),
            std: Vec::new(),
        };
        for (i, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
            let bad = || Error::Data(format!("band stats line {}: `{line}`", i + 1));
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 || fields[0].parse::<usize>().ok() != Some(i) {
                return Err(bad());
            }
            let m: f64 = fields[1].parse().map_err(|_| bad())?;
            let s: f64 = fields[2].parse().map_err(|_| bad())?;
            if !m.is_finite() || !(s > 0.0) {
                return Err(bad());
            }
            stats.mean.push(m);
            stats.std.push(s);
        }
        if stats.mean.is_empty() {
            return Err(Error::Data("band stats file is empty".into()));
        }
        Ok(stats)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingStats(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

/// Normalizes and stacks same-sized images into one `(n, bands, h, w)` batch.
pub fn normalize(images: &[&RasterImage], stats: &BandStats) -> Result<Tensor4<f32>> {
    let items = images.iter().map(|img| stats.apply(img)).collect::<Result<Vec<_>>>()?;
    Tensor4::stack(&items.iter().collect::<Vec<_>>())
}
