use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "aquaseg", version, about = "Water-body segmentation across two image resolutions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic two-resolution dataset with manifest and band statistics
    Synth(SynthArgs),
    /// Tile a raster (and optional mask) into square patches
    Patchify(PatchifyArgs),
    /// Train a single U-Net or the combined model
    Train(TrainArgs),
    /// Score a checkpoint on one split of a manifest
    Eval(EvalArgs),
    /// Train both models on shrinking VHR training sets and tabulate the results
    Ablate(AblateArgs),
    /// Write the predicted mask of one image as AQR plus a PGM preview
    Predict(PredictArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ShiftKind {
    None,
    Radiometric,
    Texture,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    /// Single U-Net on labelled VHR tiles
    Unet,
    /// Single U-Net on labelled HR tiles
    UnetHr,
    /// Both U-Nets with the resolution bridge
    Combined,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RoleArg {
    HrLabelled,
    VhrLabelled,
    VhrUnlabelled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Total scene count, shared 60:12:4 between HR-labelled, VHR-labelled and VHR-unlabelled
    #[arg(long, default_value_t = 76)]
    pub scenes: usize,
    /// Override the HR-labelled scene count
    #[arg(long)]
    pub hr_scenes: Option<usize>,
    /// Override the VHR-labelled scene count
    #[arg(long)]
    pub vhr_labelled_scenes: Option<usize>,
    /// Override the VHR-unlabelled scene count
    #[arg(long)]
    pub vhr_unlabelled_scenes: Option<usize>,
    /// Side of VHR scenes in pixels
    #[arg(long, default_value_t = 512)]
    pub vhr_size: usize,
    /// Side of HR scenes in pixels
    #[arg(long, default_value_t = 64)]
    pub hr_size: usize,
    /// VHR to HR downsampling factor
    #[arg(long, default_value_t = 4)]
    pub factor: usize,
    /// Systematic difference applied to HR imagery
    #[arg(long, value_enum, default_value_t = ShiftKind::None)]
    pub shift: ShiftKind,
    /// Gain of the radiometric shift
    #[arg(long, default_value_t = 1.0)]
    pub shift_gain: f32,
    /// Offset of the radiometric shift
    #[arg(long, default_value_t = 0.1)]
    pub shift_offset: f32,
    /// Extra noise amplitude of the texture shift
    #[arg(long, default_value_t = 0.1)]
    pub texture_amplitude: f32,
    /// Per-pixel noise amplitude of every scene
    #[arg(long, default_value_t = 0.04)]
    pub noise: f32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PatchifyArgs {
    /// Source raster (AQR)
    #[arg(long)]
    pub image: PathBuf,
    /// Source mask (1-band u8 AQR)
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Patch side in pixels
    #[arg(long, default_value_t = 512)]
    pub size: usize,
    /// Offset between patches [default: the patch size]
    #[arg(long)]
    pub stride: Option<usize>,
    /// Output directory; a manifest.csv listing the patches is written there
    #[arg(long)]
    pub out: PathBuf,
    /// Role recorded for the patches in the manifest
    #[arg(long, value_enum, default_value_t = RoleArg::VhrLabelled)]
    pub role: RoleArg,
    /// Split recorded for the patches in the manifest
    #[arg(long, value_enum, default_value_t = SplitArg::Train)]
    pub split: SplitArg,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum, default_value_t = ModeArg::Unet)]
    pub mode: ModeArg,
    /// Dataset manifest (CSV)
    #[arg(long)]
    pub manifest: PathBuf,
    /// Epochs [default: 25 for unet modes, 40 for combined]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Network preset (micro or ternaus11-lite)
    #[arg(long, default_value = "micro")]
    pub preset: String,
    /// Batch size of the single-network modes
    #[arg(long, default_value_t = 4)]
    pub batch_size: usize,
    /// Combined mode: HR batch size
    #[arg(long, default_value_t = 4)]
    pub hr_batch: usize,
    /// Combined mode: labelled VHR batch size
    #[arg(long, default_value_t = 2)]
    pub vhr_batch: usize,
    /// Combined mode: unlabelled VHR batch size (0 disables the consistency term)
    #[arg(long, default_value_t = 1)]
    pub unlabelled_batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Weight of the labelled VHR loss
    #[arg(long, default_value_t = 1.0)]
    pub w1: f64,
    /// Weight of the HR loss
    #[arg(long, default_value_t = 1.0)]
    pub w2: f64,
    /// Weight of the cross-resolution consistency loss
    #[arg(long, default_value_t = 0.1)]
    pub w3: f64,
    /// VHR to HR bridge factor
    #[arg(long, default_value_t = 4)]
    pub factor: usize,
    /// Stop consistency gradients into the VHR network
    #[arg(long)]
    pub detach_vhr: bool,
    /// Stop consistency gradients into the HR network
    #[arg(long)]
    pub detach_hr: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Checkpoint to write (AQCK)
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Training log CSV [default: checkpoint path with .log.csv]
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Validate after every epoch and also keep the best checkpoint (.best.aqck)
    #[arg(long)]
    pub eval_every_epoch: bool,
    /// Probability threshold for validation masks
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// Labelled role to evaluate on
    #[arg(long, value_enum, default_value_t = RoleArg::VhrLabelled)]
    pub role: RoleArg,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Also write per-sample scores to this CSV
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Comma-separated VHR training sizes [default: 733,560,400,240,100 scaled to the split]
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    #[arg(long, default_value_t = 25)]
    pub unet_epochs: usize,
    #[arg(long, default_value_t = 40)]
    pub combined_epochs: usize,
    #[arg(long, default_value = "micro")]
    pub preset: String,
    #[arg(long, default_value_t = 4)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 4)]
    pub hr_batch: usize,
    #[arg(long, default_value_t = 2)]
    pub vhr_batch: usize,
    #[arg(long, default_value_t = 1)]
    pub unlabelled_batch: usize,
    #[arg(long, default_value_t = 1.0)]
    pub w1: f64,
    #[arg(long, default_value_t = 1.0)]
    pub w2: f64,
    #[arg(long, default_value_t = 0.1)]
    pub w3: f64,
    #[arg(long, default_value_t = 4)]
    pub factor: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Write the table in long CSV form here
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Write the aligned text table here
    #[arg(long)]
    pub txt: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Input raster (AQR)
    #[arg(long)]
    pub image: PathBuf,
    /// Band statistics used to normalize the input
    #[arg(long)]
    pub stats: PathBuf,
    /// Output mask (AQR); a PGM preview is written next to it
    #[arg(long)]
    pub out: PathBuf,
    /// Which network of a combined checkpoint to use
    #[arg(long, value_enum, default_value_t = RoleArg::VhrLabelled)]
    pub role: RoleArg,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}
