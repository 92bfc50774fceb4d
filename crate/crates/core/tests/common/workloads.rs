//! Small end-to-end training runs shared by the integration and acceptance
//! suites.

use std::time::{Duration, Instant};

use aquaseg::data::synth::{generate_scene, SynthConfig};
use aquaseg::data::{epoch_batches, BandStats, RasterImage, Role, Sample, SampleSet, Split};
use aquaseg::nn::{UNetConfig, UNetModel};
use aquaseg::trainer::{evaluate_model, UnetTrainer};
use aquaseg::PrngState;

/// `n` synthetic `size`×`size` labelled scenes, standardized on their own stats.
pub fn synth_patches(n: usize, size: usize, seed: u64) -> SampleSet {
    let cfg = SynthConfig::default();
    let scenes: Vec<_> = (0..n)
        .map(|k| generate_scene(size, &cfg, &mut PrngState::derive(seed, k as u64)))
        .collect();
    let stats = BandStats::compute(scenes.iter().map(|(img, _)| img)).unwrap();
    let samples = scenes
        .iter()
        .map(|(img, mask): &(RasterImage, _)| Sample {
            image: stats.apply(img).unwrap(),
            mask: Some(mask.to_tensor()),
        })
        .collect();
    SampleSet {
        role: Role::VhrLabelled,
        split: Split::Train,
        samples,
    }
}

#[derive(Debug)]
pub struct Overfit {
    /// Epochs run; training stops at the first epoch reaching the target.
    pub epochs: usize,
    pub train_iou: f64,
    pub first_epoch_loss: f64,
    pub last_epoch_loss: f64,
    pub elapsed: Duration,
}

/// Trains a micro U-Net on 16 synthetic 64×64 patches (batch 4, default
/// Adam) until training IoU reaches `target` or `max_epochs` pass.
pub fn overfit(target: f64, max_epochs: usize, seed: u64) -> Overfit {
    let start = Instant::now();
    let set = synth_patches(16, 64, seed);
    let model = UNetModel::build(UNetConfig::micro(4), &mut PrngState::derive(seed, 100)).unwrap();
    let mut trainer = UnetTrainer::new(model, Default::default(), Default::default());
    let mut shuffle = PrngState::derive(seed, 101);
    let (mut first, mut last, mut iou) = (f64::NAN, f64::NAN, 0.0);
    let mut epochs = 0;
    while epochs < max_epochs {
        epochs += 1;
        let mut total = 0.0;
        let batches = epoch_batches(set.len(), 4, Some(&mut shuffle), false);
        for idx in &batches {
            let b = set.batch(idx).unwrap();
            total += trainer.step(&b.images, b.masks.as_ref().unwrap()).unwrap();
        }
        last = total / batches.len() as f64;
        if epochs == 1 {
            first = last;
        }
        iou = evaluate_model(&trainer.model, &set, 0.5).unwrap().mean_iou;
        if iou >= target {
            break;
        }
    }
    Overfit {
        epochs,
        train_iou: iou,
        first_epoch_loss: first,
        last_epoch_loss: last,
        elapsed: start.elapsed(),
    }
}
