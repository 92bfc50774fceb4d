//! Procedural two-resolution water scenes.
//!
//! A scene is a smooth land field with rivers (random-walk polylines of
//! some half-width) and lakes (rotated ellipses) cut into it. Water is dark
//! in NIR and slightly blue; land is bright in NIR. The HR version of a
//! scene is its block mean, with the mask re-binarized at half coverage and
//! an optional radiometric or texture shift applied to the image.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use rand::Rng;

use super::manifest::{DatasetManifest, ManifestEntry, Role, Split, MANIFEST_FILE};
use super::normalize::BandStats;
use super::raster::{write_raster, MaskImage, RasterImage};
use crate::error::{Error, Result};
use crate::tensor::{kernels, PrngState, Tensor4};

pub const BANDS: usize = 4;
const LAND: [f32; BANDS] = [0.30, 0.35, 0.25, 0.55];
const WATER: [f32; BANDS] = [0.10, 0.18, 0.28, 0.06];
/// Amplitude of the smooth terrain field on land and in water.
const LAND_RELIEF: f32 = 0.15;
const WATER_RELIEF: f32 = 0.05;

/// Systematic difference applied to HR imagery only.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shift {
    None,
    /// `gain·x + offset` on every band.
    Radiometric { gain: f32, offset: f32 },
    /// Extra i.i.d. `U[-amplitude, amplitude]` noise.
    Texture { amplitude: f32 },
}

impl fmt::Display for Shift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shift::None => write!(f, "none"),
            Shift::Radiometric { gain, offset } => write!(f, "radiometric(gain={gain}, offset={offset})"),
            Shift::Texture { amplitude } => write!(f, "texture(amplitude={amplitude})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub hr_scenes: usize,
    pub vhr_labelled_scenes: usize,
    pub vhr_unlabelled_scenes: usize,
    pub vhr_size: usize,
    /// Side of HR scenes; each is the downsample of a `hr_size·factor` scene.
    pub hr_size: usize,
    pub factor: usize,
    /// Inclusive range of river count per scene.
    pub rivers: (usize, usize),
    /// River half-width range as a fraction of the scene side.
    pub river_half_width: (f64, f64),
    pub lakes: (usize, usize),
    /// Lake semi-axis range as a fraction of the scene side.
    pub lake_axis: (f64, f64),
    pub noise: f32,
    pub shift: Shift,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            hr_scenes: 60,
            vhr_labelled_scenes: 12,
            vhr_unlabelled_scenes: 4,
            vhr_size: 512,
            hr_size: 64,
            factor: 4,
            rivers: (0, 2),
            river_half_width: (1.0 / 64.0, 1.0 / 24.0),
            lakes: (1, 3),
            lake_axis: (1.0 / 16.0, 1.0 / 6.0),
            noise: 0.04,
            shift: Shift::None,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.factor < 2 {
            return bad(format!("HR factor must be at least 2, got {}", self.factor));
        }
        if self.vhr_size == 0 || self.hr_size == 0 {
            return bad("scene sizes must be positive".into());
        }
        if !self.vhr_size.is_multiple_of(self.factor) {
            return bad(format!("VHR size {} is not divisible by factor {}", self.vhr_size, self.factor));
        }
        if self.rivers.0 > self.rivers.1 || self.lakes.0 > self.lakes.1 {
            return bad("shape count ranges must be ordered (min, max)".into());
        }
        let range_ok = |(lo, hi): (f64, f64)| lo > 0.0 && lo <= hi && hi < 0.5;
        if !range_ok(self.river_half_width) || !range_ok(self.lake_axis) {
            return bad("shape size ranges must satisfy 0 < min <= max < 0.5".into());
        }
        if !(self.noise >= 0.0) {
            return bad(format!("noise amplitude {} must be >= 0", self.noise));
        }
        Ok(())
    }

    pub fn count(&self, role: Role) -> usize {
        match role {
            Role::HrLabelled => self.hr_scenes,
            Role::VhrLabelled => self.vhr_labelled_scenes,
            Role::VhrUnlabelled => self.vhr_unlabelled_scenes,
        }
    }
}

impl fmt::Display for SynthConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "scenes: hr_labelled={} vhr_labelled={} vhr_unlabelled={}",
            self.hr_scenes, self.vhr_labelled_scenes, self.vhr_unlabelled_scenes
        )?;
        writeln!(f, "vhr_size={} hr_size={} factor={}", self.vhr_size, self.hr_size, self.factor)?;
        writeln!(
            f,
            "rivers={:?} half_width={:?} lakes={:?} axis={:?} noise={}",
            self.rivers, self.river_half_width, self.lakes, self.lake_axis, self.noise
        )?;
        write!(f, "shift={} seed={}", self.shift, self.seed)
    }
}

/// Water mask of one scene: union of rasterized rivers and lakes.
pub fn water_mask(size: usize, cfg: &SynthConfig, rng: &mut PrngState) -> MaskImage {
    let s = size as f64;
    let mut mask = vec![0u8; size * size];
    for _ in 0..rng.gen_range(cfg.rivers.0..=cfg.rivers.1) {
        let hw = rng.gen_range(cfg.river_half_width.0..=cfg.river_half_width.1) * s;
        for seg in river_path(s, rng).windows(2) {
            paint_segment(&mut mask, size, seg[0], seg[1], hw);
        }
    }
    for _ in 0..rng.gen_range(cfg.lakes.0..=cfg.lakes.1) {
        let c = (rng.gen_range(0.15..0.85) * s, rng.gen_range(0.15..0.85) * s);
        let a = rng.gen_range(cfg.lake_axis.0..=cfg.lake_axis.1) * s;
        let b = rng.gen_range(cfg.lake_axis.0..=cfg.lake_axis.1) * s;
        paint_ellipse(&mut mask, size, c, (a, b), rng.gen_range(0.0..PI));
    }
    MaskImage::new(size, size, mask).expect("mask is binary by construction")
}

/// Random walk entering from one edge and wandering until it leaves.
fn river_path(s: f64, rng: &mut PrngState) -> Vec<(f64, f64)> {
    let t = rng.gen_range(0.0..s);
    let start = match rng.gen_range(0..4) {
        0 => (t, 0.0),
        1 => (s, t),
        2 => (t, s),
        _ => (0.0, t),
    };
    let centre = s / 2.0;
    let mut heading = (centre - start.1).atan2(centre - start.0) + rng.gen_range(-0.6..0.6);
    let step = s / 8.0;
    let mut path = vec![start];
    let mut p = start;
    for _ in 0..32 {
        heading += rng.gen_range(-0.4..0.4);
        p = (p.0 + step * heading.cos(), p.1 + step * heading.sin());
        path.push(p);
        if p.0 < 0.0 || p.1 < 0.0 || p.0 > s || p.1 > s {
            break;
        }
    }
    path
}

fn paint_segment(mask: &mut [u8], size: usize, a: (f64, f64), b: (f64, f64), hw: f64) {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let bounds = |lo: f64, hi: f64| {
        let lo = (lo - hw).floor().max(0.0) as usize;
        let hi = ((hi + hw).ceil().max(0.0) as usize).min(size);
        lo..hi
    };
    for y in bounds(a.1.min(b.1), a.1.max(b.1)) {
        for x in bounds(a.0.min(b.0), a.0.max(b.0)) {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let t = if len2 > 0.0 {
                (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (ex, ey) = (px - a.0 - t * dx, py - a.1 - t * dy);
            if ex * ex + ey * ey <= hw * hw {
                mask[y * size + x] = 1;
            }
        }
    }
}

fn paint_ellipse(mask: &mut [u8], size: usize, c: (f64, f64), (a, b): (f64, f64), theta: f64) {
    let (cos, sin) = (theta.cos(), theta.sin());
    let r = a.max(b);
    let lo = |v: f64| (v - r).floor().max(0.0) as usize;
    let hi = |v: f64| ((v + r).ceil().max(0.0) as usize).min(size);
    for y in lo(c.1)..hi(c.1) {
        for x in lo(c.0)..hi(c.0) {
            let (dx, dy) = (x as f64 + 0.5 - c.0, y as f64 + 0.5 - c.1);
            let u = (dx * cos + dy * sin) / a;
            let v = (-dx * sin + dy * cos) / b;
            if u * u + v * v <= 1.0 {
                mask[y * size + x] = 1;
            }
        }
    }
}

/// Bilinearly interpolated lattice noise in `[0, 1]`, one lattice cell per
/// eighth of the scene.
fn terrain(size: usize, rng: &mut PrngState) -> Vec<f32> {
    const CELLS: usize = 8;
    let lattice: Vec<f32> = (0..(CELLS + 1) * (CELLS + 1)).map(|_| rng.gen()).collect();
    let at = |i: usize, j: usize| lattice[j * (CELLS + 1) + i];
    let scale = CELLS as f32 / size as f32;
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        let fy = (y as f32 + 0.5) * scale;
        let (j, ty) = ((fy as usize).min(CELLS - 1), fy - (fy as usize).min(CELLS - 1) as f32);
        for x in 0..size {
            let fx = (x as f32 + 0.5) * scale;
            let (i, tx) = ((fx as usize).min(CELLS - 1), fx - (fx as usize).min(CELLS - 1) as f32);
            let top = at(i, j) * (1.0 - tx) + at(i + 1, j) * tx;
            let bottom = at(i, j + 1) * (1.0 - tx) + at(i + 1, j + 1) * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    out
}

/// Renders a 4-band reflectance image for `mask`.
pub fn render(mask: &MaskImage, noise: f32, rng: &mut PrngState) -> RasterImage {
    let size = mask.width();
    let relief = terrain(size, rng);
    let plane = size * size;
    let mut data = vec![0.0f32; BANDS * plane];
    for (b, band) in data.chunks_mut(plane).enumerate() {
        for (i, v) in band.iter_mut().enumerate() {
            let t = relief[i] - 0.5;
            let base = if mask.data()[i] == 1 {
                WATER[b] + WATER_RELIEF * t
            } else {
                LAND[b] + LAND_RELIEF * t
            };
            *v = (base + noise * rng.gen_range(-1.0f32..=1.0)).clamp(0.0, 1.0);
        }
    }
    RasterImage::from_f32(size, size, BANDS, data).expect("sizes agree")
}

pub fn generate_scene(size: usize, cfg: &SynthConfig, rng: &mut PrngState) -> (RasterImage, MaskImage) {
    let mask = water_mask(size, cfg, rng);
    let image = render(&mask, cfg.noise, rng);
    (image, mask)
}

/// Block mean of the image, coverage-thresholded mask, then `shift`.
pub fn derive_hr(
    image: &RasterImage,
    mask: &MaskImage,
    factor: usize,
    shift: Shift,
    rng: &mut PrngState,
) -> Result<(RasterImage, MaskImage)> {
    let mut hr = kernels::avgpool_downsample(&image.to_tensor(), factor)?;
    match shift {
        Shift::None => {}
        Shift::Radiometric { gain, offset } => hr = hr.map(|v| gain * v + offset),
        Shift::Texture { amplitude } => {
            for v in hr.data_mut() {
                *v += amplitude * rng.gen_range(-1.0f32..=1.0);
            }
        }
    }
    let coverage = kernels::avgpool_downsample(&mask.to_tensor(), factor)?;
    let s = coverage.shape();
    let hr_mask = MaskImage::new(s.w, s.h, coverage.data().iter().map(|&c| (c >= 0.5) as u8).collect())?;
    Ok((RasterImage::from_tensor(&hr)?, hr_mask))
}

/// `(train, val, test)` sizes for `n` scenes of a role.
pub fn split_sizes(role: Role, n: usize) -> (usize, usize, usize) {
    let (val, test) = match role {
        Role::HrLabelled => (0.1, 0.0),
        Role::VhrLabelled => (0.15, 0.15),
        Role::VhrUnlabelled => (0.25, 0.0),
    };
    let val = ((n as f64 * val).round() as usize).min(n.saturating_sub(1));
    let test = ((n as f64 * test).round() as usize).min(n.saturating_sub(1 + val));
    (n - val - test, val, test)
}

fn split_of(index: usize, (train, val, _): (usize, usize, usize)) -> Split {
    if index < train {
        Split::Train
    } else if index < train + val {
        Split::Val
    } else {
        Split::Test
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthItem {
    pub role: Role,
    pub split: Split,
    pub name: String,
    pub image: RasterImage,
    pub mask: Option<MaskImage>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub items: Vec<SynthItem>,
}

/// Generates every scene; scene `k` draws from its own derived stream, so
/// the result depends only on the configuration.
pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let mut items = Vec::new();
    let mut scene_id = 0u64;
    for role in Role::ALL {
        let n = cfg.count(role);
        let plan = split_sizes(role, n);
        for i in 0..n {
            let mut rng = PrngState::derive(cfg.seed, scene_id);
            scene_id += 1;
            let (image, mask) = match role {
                Role::HrLabelled => {
                    let (img, m) = generate_scene(cfg.hr_size * cfg.factor, cfg, &mut rng);
                    derive_hr(&img, &m, cfg.factor, cfg.shift, &mut rng)?
                }
                _ => generate_scene(cfg.vhr_size, cfg, &mut rng),
            };
            items.push(SynthItem {
                role,
                split: split_of(i, plan),
                name: format!("{role}/scene_{i:03}"),
                image,
                mask: role.is_labelled().then_some(mask),
            });
        }
    }
    Ok(SynthDataset { items })
}

impl SynthDataset {
    pub fn select(&self, role: Role, split: Split) -> impl Iterator<Item = &SynthItem> {
        self.items.iter().filter(move |i| i.role == role && i.split == split)
    }

    /// Normalization statistics over every train-split image.
    pub fn train_stats(&self) -> Result<BandStats> {
        BandStats::compute(self.items.iter().filter(|i| i.split == Split::Train).map(|i| &i.image))
    }

    /// Writes rasters, `manifest.csv` and `band_stats.txt` under `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<DatasetManifest> {
        let dir = dir.as_ref();
        let mut entries = Vec::with_capacity(self.items.len());
        for item in &self.items {
            let image_path = format!("{}.aqr", item.name);
            let full = dir.join(&image_path);
            if let Some(parent) = full.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            write_raster(&item.image, &full)?;
            let mask_path = match &item.mask {
                Some(m) => {
                    let p = format!("{}_mask.aqr", item.name);
                    m.write(dir.join(&p))?;
                    Some(p)
                }
                None => None,
            };
            entries.push(ManifestEntry {
                image_path,
                mask_path,
                role: item.role,
                split: item.split,
            });
        }
        let manifest = DatasetManifest::new(dir, entries)?;
        manifest.save(dir.join(MANIFEST_FILE))?;
        self.train_stats()?.save(manifest.stats_path())?;
        Ok(manifest)
    }
}

/// Mean of each band of a raster.
pub fn band_means(img: &RasterImage) -> Vec<f64> {
    let plane = img.width() * img.height();
    img.to_f32()
        .chunks(plane)
        .map(|c| c.iter().map(|&v| v as f64).sum::<f64>() / plane as f64)
        .collect()
}

/// HR view of a tensor batch; convenience for callers holding tensors.
pub fn downsample(t: &Tensor4<f32>, factor: usize) -> Result<Tensor4<f32>> {
    kernels::avgpool_downsample(t, factor)
}
