use std::fmt::Write as _;

use rand::seq::SliceRandom;

use super::{evaluate, streams, train_combined, train_unet, Mode, TrainConfig, TrainData};
use crate::data::{Role, Split};
use crate::error::{Error, Result};
use crate::loss::MetricsReport;
use crate::tensor::PrngState;

/// Training-set sizes of the reference sweep, as fractions of the largest.
const REFERENCE_SIZES: [usize; 5] = [733, 560, 400, 240, 100];

#[derive(Clone, Debug, PartialEq)]
pub struct AblationConfig {
    pub sizes: Vec<usize>,
    pub unet: TrainConfig,
    pub combined: TrainConfig,
    pub eval_split: Split,
    pub threshold: f64,
}

impl AblationConfig {
    pub fn new(sizes: Vec<usize>, seed: u64) -> Self {
        let with_seed = |mode| TrainConfig {
            seed,
            ..TrainConfig::new(mode)
        };
        AblationConfig {
            sizes,
            unet: with_seed(Mode::UnetVhr),
            combined: with_seed(Mode::Combined),
            eval_split: Split::Test,
            threshold: 0.5,
        }
    }
}

/// The reference sweep rescaled to `available` samples (at least 1 each).
pub fn scaled_sizes(available: usize) -> Vec<usize> {
    if available >= REFERENCE_SIZES[0] {
        return REFERENCE_SIZES.to_vec();
    }
    REFERENCE_SIZES
        .iter()
        .map(|&s| ((s as f64 / REFERENCE_SIZES[0] as f64 * available as f64).round() as usize).clamp(1, available))
        .collect()
}

/// Index subsets of `0..n` for each size: prefixes of one seeded permutation,
/// so smaller subsets nest inside larger ones. Each subset is sorted.
pub fn nested_subsets(n: usize, sizes: &[usize], seed: u64) -> Result<Vec<Vec<usize>>> {
    if let Some(&s) = sizes.iter().find(|&&s| s == 0 || s > n) {
        return Err(Error::Config(format!("training size {s} outside 1..={n}")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut PrngState::derive(seed, streams::SUBSAMPLE));
    Ok(sizes
        .iter()
        .map(|&s| {
            let mut sub = perm[..s].to_vec();
            sub.sort_unstable();
            sub
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub training_samples: usize,
    pub unet: MetricsReport,
    pub combined: MetricsReport,
}

/// One row per training size, IoU and Dice per model.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    pub split: Split,
}

impl AblationTable {
    /// Long format: `training_samples,model,IoU,Dice`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("training_samples,model,IoU,Dice\n");
        for r in &self.rows {
            for (name, m) in [("unet_vhr", &r.unet), ("combined", &r.combined)] {
                let _ = writeln!(out, "{},{name},{},{}", r.training_samples, m.mean_iou, m.mean_dice);
            }
        }
        out
    }

    /// Aligned plain-text table, one row per size.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<18}{:^18}{:^26}",
            "",
            "U-Net, VHR",
            "Combined Model, HR+VHR"
        );
        let _ = writeln!(out, "{:<18}{:>9}{:>9}{:>13}{:>13}", "Training samples", "IoU", "Dice", "IoU", "Dice");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<18}{:>9.4}{:>9.4}{:>13.4}{:>13.4}",
                r.training_samples, r.unet.mean_iou, r.unet.mean_dice, r.combined.mean_iou, r.combined.mean_dice
            );
        }
        let count = self.rows.first().map_or(0, |r| r.unet.count);
        let _ = write!(out, "(mean over {count} {} samples, last-epoch checkpoints)", self.split);
        out
    }
}

/// For every size: subsample the labelled VHR train split, train the
/// baseline and the combined model on it, score both on `eval_split`.
pub fn ablate_training_size(
    cfg: &AblationConfig,
    data: &TrainData,
    progress: &mut dyn FnMut(&str),
) -> Result<AblationTable> {
    let available = data.require(Role::VhrLabelled, Split::Train)?.len();
    data.require(Role::VhrLabelled, cfg.eval_split)?;
    let subsets = nested_subsets(available, &cfg.sizes, cfg.unet.seed)?;
    let mut rows = Vec::with_capacity(subsets.len());
    for (&size, subset) in cfg.sizes.iter().zip(&subsets) {
        let sub = data.with_subset(Role::VhrLabelled, Split::Train, subset)?;
        let unet = train_unet(&cfg.unet, &sub, &mut |s| progress(&format!("size {size} unet: {s}")))?;
        let combined = train_combined(&cfg.combined, &sub, &mut |s| progress(&format!("size {size} combined: {s}")))?;
        let score = |ck| evaluate(ck, data, Role::VhrLabelled, cfg.eval_split, cfg.threshold);
        let row = AblationRow {
            training_samples: size,
            unet: score(&unet.checkpoint)?,
            combined: score(&combined.checkpoint)?,
        };
        progress(&format!(
            "size {size}: unet IoU {:.4} Dice {:.4} | combined IoU {:.4} Dice {:.4}",
            row.unet.mean_iou, row.unet.mean_dice, row.combined.mean_iou, row.combined.mean_dice
        ));
        rows.push(row);
    }
    Ok(AblationTable {
        rows,
        split: cfg.eval_split,
    })
}
