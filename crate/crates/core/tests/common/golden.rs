//! Fixed-seed fixtures whose serialized bytes are checked into `tests/data`.
//! Regenerate with `AQUASEG_BLESS=1 cargo test --test data_formats`.

use std::path::PathBuf;

use aquaseg::data::{MaskImage, RasterImage};
use aquaseg::nn::{Checkpoint, TrainMeta, UNetConfig, UNetModel};
use aquaseg::{PrngState, Tensor4};

pub const SEED: u64 = 42;
pub const RASTER_FILE: &str = "golden_4x4.aqr";
pub const MASK_FILE: &str = "golden_4x4_mask.aqr";
pub const CHECKPOINT_FILE: &str = "golden_micro.aqck";

// works from any crate in the workspace
pub fn data_dir() -> PathBuf {
    PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/data"))
}

pub fn raster() -> RasterImage {
    let t = Tensor4::<f32>::uniform([1, 4, 4, 4], 0.0, 1.0, &mut PrngState::new(SEED));
    RasterImage::from_tensor(&t).unwrap()
}

pub fn mask() -> MaskImage {
    let mut rng = PrngState::derive(SEED, 1);
    let t = Tensor4::<f32>::uniform([1, 1, 4, 4], 0.0, 1.0, &mut rng);
    MaskImage::new(4, 4, t.data().iter().map(|&v| u8::from(v >= 0.5)).collect()).unwrap()
}

pub fn checkpoint() -> Checkpoint {
    let model = UNetModel::<f32>::build(UNetConfig::micro(4), &mut PrngState::new(SEED)).unwrap();
    let mut ck = Checkpoint::new();
    ck.push_model("", &model);
    ck.set_meta(TrainMeta { epoch: 3, seed: SEED });
    ck
}

/// `(file name, freshly generated bytes)` for every fixture.
pub fn fixtures() -> Vec<(&'static str, Vec<u8>)> {
    vec![
        (RASTER_FILE, raster().to_bytes()),
        (MASK_FILE, mask().to_raster().to_bytes()),
        (CHECKPOINT_FILE, checkpoint().to_bytes()),
    ]
}

/// Writes the fixtures when `AQUASEG_BLESS` is set.
pub fn bless_if_requested() {
    if std::env::var_os("AQUASEG_BLESS").is_some() {
        std::fs::create_dir_all(data_dir()).unwrap();
        for (name, bytes) in fixtures() {
            std::fs::write(data_dir().join(name), bytes).unwrap();
        }
    }
}
