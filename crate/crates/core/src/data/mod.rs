//! Rasters, masks, patches, normalization, manifests and batching, plus the
//! synthetic scene generator.

mod manifest;
mod normalize;
mod patch;
mod raster;
pub mod synth;

pub use manifest::{
    epoch_batches, Batch, CyclingBatches, DatasetManifest, ManifestEntry, Role, Sample, SampleSet, Split,
    MANIFEST_FILE,
};
pub use normalize::{normalize, BandStats, STATS_FILE, VARIANCE_FLOOR};
pub use patch::{patch_count, patchify, Patch};
pub use raster::{read_raster, write_raster, DType, MaskImage, RasterData, RasterImage, RASTER_MAGIC};
pub use synth::{synth_generate, Shift, SynthConfig, SynthDataset};
