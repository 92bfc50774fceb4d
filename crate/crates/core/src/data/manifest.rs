use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::normalize::{BandStats, STATS_FILE};
use super::raster::{read_raster, MaskImage};
use crate::error::{Error, Result};
use crate::tensor::{PrngState, Tensor4};

pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    HrLabelled,
    VhrLabelled,
    VhrUnlabelled,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::HrLabelled, Role::VhrLabelled, Role::VhrUnlabelled];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::HrLabelled => "hr_labelled",
            Role::VhrLabelled => "vhr_labelled",
            Role::VhrUnlabelled => "vhr_unlabelled",
        }
    }

    pub fn is_labelled(self) -> bool {
        self != Role::VhrUnlabelled
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

macro_rules! text_enum {
    ($t:ty, $what:literal, [$($v:expr),+]) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $t {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                [$($v),+]
                    .into_iter()
                    .find(|v| v.as_str() == s)
                    .ok_or_else(|| Error::Data(format!(concat!("unknown ", $what, " `{}`"), s)))
            }
        }
    };
}

text_enum!(Role, "role", [Role::HrLabelled, Role::VhrLabelled, Role::VhrUnlabelled]);
text_enum!(Split, "split", [Split::Train, Split::Val, Split::Test]);

/// One manifest row. Paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_path: String,
    pub mask_path: Option<String>,
    pub role: Role,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    /// Directory the entry paths are relative to.
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>, entries: Vec<ManifestEntry>) -> Result<Self> {
        let m = DatasetManifest {
            root: root.into(),
            entries,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, e) in self.entries.iter().enumerate() {
            match (e.role.is_labelled(), &e.mask_path) {
                (true, None) => return Err(Error::Data(format!("row {}: {} entry without a mask", i + 1, e.role))),
                (false, Some(_)) => return Err(Error::Data(format!("row {}: {} entry with a mask", i + 1, e.role))),
                _ => {}
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::Reader::from_reader(file);
        let entries = reader.deserialize().collect::<std::result::Result<Vec<ManifestEntry>, _>>()?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::new(root, entries)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        for e in &self.entries {
            w.serialize(e)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn select(&self, role: Role, split: Split) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.role == role && e.split == split).collect()
    }

    pub fn count(&self, role: Role, split: Split) -> usize {
        self.select(role, split).len()
    }

    pub fn stats_path(&self) -> PathBuf {
        self.root.join(STATS_FILE)
    }

    pub fn load_stats(&self) -> Result<BandStats> {
        BandStats::load(self.stats_path())
    }
}

/// One normalized image with its mask.
#[derive(Clone, Debug)]
pub struct Sample {
    /// `(1, bands, h, w)`
    pub image: Tensor4<f32>,
    /// `(1, 1, h, w)` of 0.0 / 1.0.
    pub mask: Option<Tensor4<f32>>,
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub images: Tensor4<f32>,
    pub masks: Option<Tensor4<f32>>,
}

/// The loaded, normalized samples of one (role, split), in manifest order.
#[derive(Clone, Debug)]
pub struct SampleSet {
    pub role: Role,
    pub split: Split,
    pub samples: Vec<Sample>,
}

impl SampleSet {
    pub fn load(manifest: &DatasetManifest, role: Role, split: Split, stats: &BandStats) -> Result<Self> {
        let samples = manifest
            .select(role, split)
            .into_iter()
            .map(|e| {
                let image = stats.apply(&read_raster(manifest.resolve(&e.image_path))?)?;
                let mask = match &e.mask_path {
                    Some(p) => {
                        let m = MaskImage::read(manifest.resolve(p))?;
                        let s = image.shape();
                        if (m.width(), m.height()) != (s.w, s.h) {
                            return Err(Error::Data(format!(
                                "{}: mask is {}x{}, image is {}x{}",
                                e.image_path,
                                m.width(),
                                m.height(),
                                s.w,
                                s.h
                            )));
                        }
                        Some(m.to_tensor())
                    }
                    None => None,
                };
                Ok(Sample { image, mask })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SampleSet { role, split, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        SampleSet {
            role: self.role,
            split: self.split,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let images: Vec<&Tensor4<f32>> = indices.iter().map(|&i| &self.samples[i].image).collect();
        let masks: Option<Vec<&Tensor4<f32>>> = indices.iter().map(|&i| self.samples[i].mask.as_ref()).collect();
        Ok(Batch {
            indices: indices.to_vec(),
            images: Tensor4::stack(&images)?,
            masks: masks.map(|m| Tensor4::stack(&m)).transpose()?,
        })
    }

    /// One pass over the set: shuffled when `rng` is given, with the short
    /// tail dropped when `drop_last` is set.
    pub fn batches<'a>(
        &'a self,
        batch_size: usize,
        rng: Option<&mut PrngState>,
        drop_last: bool,
    ) -> impl Iterator<Item = Result<Batch>> + 'a {
        epoch_batches(self.len(), batch_size, rng, drop_last)
            .into_iter()
            .map(move |idx| self.batch(&idx))
    }
}

/// Index groups for one epoch over `n` items.
pub fn epoch_batches(n: usize, batch_size: usize, rng: Option<&mut PrngState>, drop_last: bool) -> Vec<Vec<usize>> {
    assert!(batch_size > 0, "batch size must be positive");
    let mut order: Vec<usize> = (0..n).collect();
    if let Some(rng) = rng {
        order.shuffle(rng);
    }
    order
        .chunks(batch_size)
        .filter(|c| !drop_last || c.len() == batch_size)
        .map(<[usize]>::to_vec)
        .collect()
}

/// Endless stream of full training batches; reshuffles on every wrap.
#[derive(Clone, Debug)]
pub struct CyclingBatches {
    n: usize,
    batch_size: usize,
    rng: PrngState,
    pending: std::collections::VecDeque<Vec<usize>>,
}

impl CyclingBatches {
    pub fn new(n: usize, batch_size: usize, rng: PrngState) -> Result<Self> {
        if batch_size == 0 || n < batch_size {
            return Err(Error::Data(format!(
                "cannot draw batches of {batch_size} from {n} sample(s)"
            )));
        }
        Ok(CyclingBatches {
            n,
            batch_size,
            rng,
            pending: Default::default(),
        })
    }

    pub fn next_indices(&mut self) -> Vec<usize> {
        if self.pending.is_empty() {
            self.pending = epoch_batches(self.n, self.batch_size, Some(&mut self.rng), true).into();
        }
        self.pending.pop_front().expect("n >= batch size yields at least one batch")
    }
}
