//! Optimization, the single-network and combined training loops, evaluation
//! and the training-size sweep.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::combined::{CombinedConfig, CombinedModel, Labelled, LossWeights, StreamBatchSizes, TriBatch};
use crate::data::{epoch_batches, CyclingBatches, DatasetManifest, Role, SampleSet, Split};
use crate::error::{Error, Result};
use crate::loss::{binarize_logits, combined_loss_with, LossConfig, MetricsReport};
use crate::nn::{Checkpoint, TrainMeta, UNetConfig, UNetModel};
use crate::tensor::{Graph, PrngState, Tensor4};

mod ablate;
mod adam;

pub use ablate::{ablate_training_size, nested_subsets, scaled_sizes, AblationConfig, AblationRow, AblationTable};
pub use adam::{Adam, AdamConfig};

/// Sub-streams of the run seed. Each consumer owns one, so enabling or
/// disabling a stream never shifts the draws of another.
pub mod streams {
    pub const INIT_UNET1: u64 = 1;
    pub const INIT_UNET2: u64 = 2;
    pub const SHUFFLE_VHR: u64 = 3;
    pub const SHUFFLE_HR: u64 = 4;
    pub const SHUFFLE_UNLABELLED: u64 = 5;
    pub const SUBSAMPLE: u64 = 6;
}

/// Evaluation forward passes are chunked to this many images.
pub const EVAL_BATCH: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Single U-Net on labelled VHR tiles.
    UnetVhr,
    /// Single U-Net on labelled HR tiles.
    UnetHr,
    Combined,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::UnetVhr => "unet",
            Mode::UnetHr => "unet-hr",
            Mode::Combined => "combined",
        }
    }

    /// Role whose labelled data the evaluated network is trained on.
    pub fn eval_role(self) -> Role {
        match self {
            Mode::UnetHr => Role::HrLabelled,
            _ => Role::VhrLabelled,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unet" | "unet-vhr" | "unet_vhr" => Ok(Mode::UnetVhr),
            "unet-hr" | "unet_hr" => Ok(Mode::UnetHr),
            "combined" => Ok(Mode::Combined),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    pub preset: String,
    pub epochs: usize,
    /// Batch size of the single-network modes.
    pub batch_size: usize,
    /// Per-stream batch sizes of the combined mode.
    pub stream_batches: StreamBatchSizes,
    pub adam: AdamConfig,
    pub loss: LossConfig,
    pub weights: LossWeights,
    pub bridge_factor: usize,
    pub detach_vhr: bool,
    pub detach_hr: bool,
    pub seed: u64,
    /// Evaluate on the validation split after every epoch and keep the best.
    pub eval_every_epoch: bool,
    pub threshold: f64,
}

impl TrainConfig {
    pub const UNET_EPOCHS: usize = 25;
    pub const COMBINED_EPOCHS: usize = 40;

    pub fn new(mode: Mode) -> Self {
        let combined = CombinedConfig::default();
        TrainConfig {
            mode,
            preset: UNetConfig::MICRO.into(),
            epochs: match mode {
                Mode::Combined => Self::COMBINED_EPOCHS,
                _ => Self::UNET_EPOCHS,
            },
            batch_size: 4,
            stream_batches: StreamBatchSizes::default(),
            adam: AdamConfig::default(),
            loss: combined.loss,
            weights: combined.weights,
            bridge_factor: combined.bridge_factor,
            detach_vhr: false,
            detach_hr: false,
            seed: 0,
            eval_every_epoch: false,
            threshold: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let w = self.weights;
        if [w.vhr, w.hr, w.consistency].iter().any(|v| !v.is_finite() || *v < 0.0) {
            return bad(format!("loss weights {w} must be finite and >= 0"));
        }
        let b = self.stream_batches;
        match self.mode {
            Mode::Combined if b.hr == 0 || b.vhr_labelled == 0 => {
                return bad(format!("stream batch sizes {}/{} must be positive", b.hr, b.vhr_labelled))
            }
            Mode::UnetVhr | Mode::UnetHr if self.batch_size == 0 => return bad("batch size must be positive".into()),
            _ => {}
        }
        if !(self.adam.lr > 0.0) || !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return bad(format!("invalid optimizer settings {}", self.adam));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad(format!("threshold {} outside [0, 1]", self.threshold));
        }
        Ok(())
    }

    pub fn combined_config(&self) -> CombinedConfig {
        CombinedConfig {
            bridge_factor: self.bridge_factor,
            weights: self.weights,
            detach_vhr: self.detach_vhr,
            detach_hr: self.detach_hr,
            loss: self.loss,
        }
    }
}

impl fmt::Display for TrainConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "mode={} preset={} epochs={} seed={}", self.mode, self.preset, self.epochs, self.seed)?;
        match self.mode {
            Mode::Combined => {
                let b = self.stream_batches;
                writeln!(f, "batches: hr={} vhr_labelled={} vhr_unlabelled={}", b.hr, b.vhr_labelled, b.vhr_unlabelled)?;
                writeln!(
                    f,
                    "weights={} bridge_factor={} detach_vhr={} detach_hr={}",
                    self.weights, self.bridge_factor, self.detach_vhr, self.detach_hr
                )?;
            }
            _ => writeln!(f, "batch_size={}", self.batch_size)?,
        }
        writeln!(
            f,
            "loss: bce_weight={} dice_weight={} smooth={}",
            self.loss.bce_weight, self.loss.dice_weight, self.loss.smooth
        )?;
        write!(f, "{} threshold={} eval_every_epoch={}", self.adam, self.threshold, self.eval_every_epoch)
    }
}

/// Loaded, normalized samples of every (role, split) in a manifest.
#[derive(Clone, Debug, Default)]
pub struct TrainData {
    sets: HashMap<(Role, Split), SampleSet>,
}

impl TrainData {
    pub fn load(manifest: &DatasetManifest) -> Result<Self> {
        let stats = manifest.load_stats()?;
        let mut data = TrainData::default();
        for role in Role::ALL {
            for split in [Split::Train, Split::Val, Split::Test] {
                if manifest.count(role, split) > 0 {
                    data.insert(SampleSet::load(manifest, role, split, &stats)?);
                }
            }
        }
        Ok(data)
    }

    pub fn insert(&mut self, set: SampleSet) {
        self.sets.insert((set.role, set.split), set);
    }

    pub fn get(&self, role: Role, split: Split) -> Option<&SampleSet> {
        self.sets.get(&(role, split)).filter(|s| !s.is_empty())
    }

    pub fn require(&self, role: Role, split: Split) -> Result<&SampleSet> {
        self.get(role, split)
            .ok_or_else(|| Error::Data(format!("no {role} samples in the {split} split")))
    }

    /// Copy whose `(role, split)` set keeps only `indices`.
    pub fn with_subset(&self, role: Role, split: Split, indices: &[usize]) -> Result<Self> {
        let set = self.require(role, split)?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= set.len()) {
            return Err(Error::Data(format!("index {bad} outside {role}/{split} ({} samples)", set.len())));
        }
        let mut out = self.clone();
        out.insert(set.subset(indices));
        Ok(out)
    }

    pub fn bands(&self) -> Result<usize> {
        self.sets
            .values()
            .find_map(|s| s.samples.first())
            .map(|s| s.image.shape().c)
            .ok_or_else(|| Error::Data("dataset is empty".into()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_total: f64,
    pub val: Option<MetricsReport>,
}

/// Per-step losses and per-epoch validation results, in order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    steps: Vec<StepRecord>,
    epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn steps(&self) -> &[StepRecord] {
        &self.steps
    }

    pub fn epochs(&self) -> &[EpochRecord] {
        &self.epochs
    }

    fn push_step(&mut self, r: StepRecord) {
        debug_assert_eq!(r.step, self.steps.len() + 1);
        self.steps.push(r);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,step,l1,l2,l3,total\n");
        for s in &self.steps {
            let _ = writeln!(out, "{},{},{},{},{},{}", s.epoch, s.step, s.l1, s.l2, s.l3, s.total);
        }
        out
    }
}

/// What the progress callback sees after each epoch.
#[derive(Clone, Debug)]
pub struct EpochSummary<'a> {
    pub epoch: usize,
    pub epochs: usize,
    pub steps: usize,
    pub record: &'a EpochRecord,
}

impl fmt::Display for EpochSummary<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch {}/{} steps={} mean_loss={:.6}",
            self.epoch, self.epochs, self.steps, self.record.mean_total
        )?;
        if let Some(v) = &self.record.val {
            write!(f, " val_iou={:.4} val_dice={:.4}", v.mean_iou, v.mean_dice)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct BestCheckpoint {
    pub epoch: usize,
    pub iou: f64,
    pub checkpoint: Checkpoint,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// State after the last epoch.
    pub checkpoint: Checkpoint,
    /// Highest validation IoU seen, when per-epoch evaluation is on.
    pub best: Option<BestCheckpoint>,
    pub log: TrainLog,
    /// Validation metrics of the final state, if a validation split exists.
    pub final_val: Option<MetricsReport>,
}

/// Forward, loss, backward and Adam update for one U-Net.
#[derive(Clone, Debug)]
pub struct UnetTrainer {
    pub model: UNetModel<f32>,
    pub adam: Adam<f32>,
    pub loss: LossConfig,
}

impl UnetTrainer {
    pub fn new(model: UNetModel<f32>, adam: AdamConfig, loss: LossConfig) -> Self {
        let adam = Adam::new(adam, model.params());
        UnetTrainer { model, adam, loss }
    }

    /// Loss value and parameter gradients on one batch.
    pub fn gradients(&self, images: &Tensor4<f32>, masks: &Tensor4<f32>) -> Result<(f64, Vec<Tensor4<f32>>)> {
        let mut g = Graph::new();
        let params = self.model.bind(&mut g, true);
        let x = g.constant(images.clone());
        let y = g.constant(masks.clone());
        let logits = self.model.forward(&mut g, &params, x)?;
        let loss = combined_loss_with(&mut g, logits, y, &self.loss)?;
        g.backward(loss.total)?;
        Ok((loss.value, params.iter().map(|&p| g.grad_or_zeros(p)).collect()))
    }

    pub fn step(&mut self, images: &Tensor4<f32>, masks: &Tensor4<f32>) -> Result<f64> {
        let (loss, grads) = self.gradients(images, masks)?;
        let names = self.model.names().to_vec();
        self.adam.step(self.model.params_mut(), &grads, &names)?;
        Ok(loss)
    }
}

/// Loss terms of one combined step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub total: f64,
}

/// One backward on the weighted total updates both networks.
#[derive(Clone, Debug)]
pub struct CombinedTrainer {
    pub model: CombinedModel<f32>,
    pub adam1: Adam<f32>,
    pub adam2: Adam<f32>,
}

impl CombinedTrainer {
    pub fn new(model: CombinedModel<f32>, adam: AdamConfig) -> Self {
        let adam1 = Adam::new(adam, model.unet1.params());
        let adam2 = Adam::new(adam, model.unet2.params());
        CombinedTrainer { model, adam1, adam2 }
    }

    pub fn gradients(&self, batch: &TriBatch<f32>) -> Result<(StepLosses, Vec<Tensor4<f32>>, Vec<Tensor4<f32>>)> {
        let mut g = Graph::new();
        let bound = self.model.bind(&mut g);
        let r = self.model.forward(&mut g, &bound, batch)?;
        g.backward(r.total_var)?;
        let grads = |vars: &[crate::tensor::Var]| vars.iter().map(|&v| g.grad_or_zeros(v)).collect::<Vec<_>>();
        let losses = StepLosses {
            l1: r.l1,
            l2: r.l2,
            l3: r.l3,
            total: r.total,
        };
        Ok((losses, grads(&bound.unet1), grads(&bound.unet2)))
    }

    pub fn step(&mut self, batch: &TriBatch<f32>) -> Result<StepLosses> {
        let (losses, g1, g2) = self.gradients(batch)?;
        let n1 = prefixed("unet1/", self.model.unet1.names());
        let n2 = prefixed("unet2/", self.model.unet2.names());
        // Check both before touching either so a failure leaves a consistent state.
        for (grads, names) in [(&g1, &n1), (&g2, &n2)] {
            if let Some(i) = grads.iter().position(|g| !g.all_finite()) {
                return Err(Error::NonFiniteGradient(names[i].clone()));
            }
        }
        self.adam1.step(self.model.unet1.params_mut(), &g1, &n1)?;
        self.adam2.step(self.model.unet2.params_mut(), &g2, &n2)?;
        Ok(losses)
    }
}

fn prefixed(prefix: &str, names: &[String]) -> Vec<String> {
    names.iter().map(|n| format!("{prefix}{n}")).collect()
}

/// Runs `model` over every sample of `set` once and scores the thresholded
/// probabilities against the masks.
pub fn evaluate_model(model: &UNetModel<f32>, set: &SampleSet, threshold: f64) -> Result<MetricsReport> {
    if set.is_empty() {
        return Err(Error::Data(format!("nothing to evaluate in {}/{}", set.role, set.split)));
    }
    let mut report = MetricsReport::new();
    for batch in set.batches(EVAL_BATCH, None, false) {
        let batch = batch?;
        let masks = batch
            .masks
            .ok_or_else(|| Error::Data(format!("{}/{} has no masks to evaluate against", set.role, set.split)))?;
        let logits = model.predict(&batch.images)?;
        let plane = logits.shape().plane();
        for (pred, truth) in logits.data().chunks(plane).zip(masks.data().chunks(plane)) {
            let truth: Vec<u8> = truth.iter().map(|&v| (v >= 0.5) as u8).collect();
            report.add_sample(&binarize_logits(pred, threshold), &truth)?;
        }
    }
    Ok(report)
}

/// Picks the network of `ck` that serves `role`: a combined checkpoint
/// answers VHR roles with `unet1` and HR with `unet2`.
pub fn model_for_role(ck: &Checkpoint, role: Role) -> Result<UNetModel<f32>> {
    if ck.has_model("unet1/") {
        ck.model(if role == Role::HrLabelled { "unet2/" } else { "unet1/" })
    } else {
        ck.model("")
    }
}

pub fn evaluate(ck: &Checkpoint, data: &TrainData, role: Role, split: Split, threshold: f64) -> Result<MetricsReport> {
    let model = model_for_role(ck, role)?;
    let set = data.require(role, split)?;
    let bands = set.samples[0].image.shape().c;
    if bands != model.config().in_channels {
        return Err(Error::CheckpointMismatch(format!(
            "model takes {} bands, data has {bands}",
            model.config().in_channels
        )));
    }
    evaluate_model(&model, set, threshold)
}

fn effective_batch(requested: usize, available: usize) -> usize {
    requested.min(available)
}

/// Trains one U-Net on the labelled train split of `mode`'s role.
pub fn train_unet(cfg: &TrainConfig, data: &TrainData, progress: &mut dyn FnMut(&EpochSummary)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let role = match cfg.mode {
        Mode::UnetVhr => Role::VhrLabelled,
        Mode::UnetHr => Role::HrLabelled,
        Mode::Combined => return Err(Error::Config("train_unet called with combined mode".into())),
    };
    let train = data.require(role, Split::Train)?;
    let val = data.get(role, Split::Val);
    let unet_cfg = UNetConfig::from_preset(&cfg.preset, data.bands()?)?;
    let model = UNetModel::build(unet_cfg, &mut PrngState::derive(cfg.seed, streams::INIT_UNET1))?;
    let mut trainer = UnetTrainer::new(model, cfg.adam, cfg.loss);
    let mut shuffle = PrngState::derive(
        cfg.seed,
        if role == Role::HrLabelled { streams::SHUFFLE_HR } else { streams::SHUFFLE_VHR },
    );
    let batch_size = effective_batch(cfg.batch_size, train.len());

    let mut run = Run::new(cfg);
    for epoch in 1..=cfg.epochs {
        let mut sum = 0.0;
        let batches = epoch_batches(train.len(), batch_size, Some(&mut shuffle), true);
        for idx in &batches {
            let b = train.batch(idx)?;
            let masks = b.masks.ok_or_else(|| Error::Data(format!("{role} train sample without mask")))?;
            let loss = trainer.step(&b.images, &masks)?;
            sum += loss;
            run.log_step(epoch, loss, 0.0, 0.0, loss);
        }
        let snapshot = || unet_checkpoint(&trainer.model, epoch, cfg.seed);
        run.end_epoch(epoch, sum / batches.len().max(1) as f64, &trainer.model, val, snapshot, progress)?;
    }
    let checkpoint = unet_checkpoint(&trainer.model, cfg.epochs, cfg.seed);
    run.finish(checkpoint, &trainer.model, val)
}

fn unet_checkpoint(model: &UNetModel<f32>, epoch: usize, seed: u64) -> Checkpoint {
    let mut ck = Checkpoint::new();
    ck.push_model("", model);
    ck.set_meta(TrainMeta {
        epoch: epoch as u32,
        seed,
    });
    ck
}

fn combined_checkpoint(model: &CombinedModel<f32>, epoch: usize, seed: u64) -> Checkpoint {
    let mut ck = model.to_checkpoint();
    ck.set_meta(TrainMeta {
        epoch: epoch as u32,
        seed,
    });
    ck
}

/// Builds both networks the way [`train_combined`] does.
pub fn init_combined(cfg: &TrainConfig, bands: usize) -> Result<CombinedModel<f32>> {
    let unet_cfg = UNetConfig::from_preset(&cfg.preset, bands)?;
    CombinedModel::build(
        &unet_cfg,
        cfg.combined_config(),
        &mut PrngState::derive(cfg.seed, streams::INIT_UNET1),
        &mut PrngState::derive(cfg.seed, streams::INIT_UNET2),
    )
}

/// Trains both networks end to end. An epoch is one pass over the HR train
/// split; the labelled and unlabelled VHR streams cycle alongside it,
/// reshuffling whenever they wrap.
pub fn train_combined(
    cfg: &TrainConfig,
    data: &TrainData,
    progress: &mut dyn FnMut(&EpochSummary),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.mode != Mode::Combined {
        return Err(Error::Config(format!("train_combined called with mode {}", cfg.mode)));
    }
    let hr = data.require(Role::HrLabelled, Split::Train)?;
    let vhr = data.require(Role::VhrLabelled, Split::Train)?;
    let unlabelled = match cfg.stream_batches.vhr_unlabelled {
        0 => None,
        _ => Some(data.require(Role::VhrUnlabelled, Split::Train)?),
    };
    let val = data.get(Role::VhrLabelled, Split::Val);
    let model = init_combined(cfg, data.bands()?)?;
    let mut trainer = CombinedTrainer::new(model, cfg.adam);

    let b = cfg.stream_batches;
    let hr_batch = effective_batch(b.hr, hr.len());
    let mut hr_shuffle = PrngState::derive(cfg.seed, streams::SHUFFLE_HR);
    let mut vhr_stream = CyclingBatches::new(
        vhr.len(),
        effective_batch(b.vhr_labelled, vhr.len()),
        PrngState::derive(cfg.seed, streams::SHUFFLE_VHR),
    )?;
    let mut unl_stream = unlabelled
        .map(|u| {
            CyclingBatches::new(
                u.len(),
                effective_batch(b.vhr_unlabelled, u.len()),
                PrngState::derive(cfg.seed, streams::SHUFFLE_UNLABELLED),
            )
        })
        .transpose()?;

    let mut run = Run::new(cfg);
    for epoch in 1..=cfg.epochs {
        let mut sum = 0.0;
        let batches = epoch_batches(hr.len(), hr_batch, Some(&mut hr_shuffle), true);
        for idx in &batches {
            let batch = tri_batch(hr, idx, vhr, &vhr_stream.next_indices(), unlabelled.zip(unl_stream.as_mut()))?;
            let l = trainer.step(&batch)?;
            sum += l.total;
            run.log_step(epoch, l.l1, l.l2, l.l3, l.total);
        }
        let snapshot = || combined_checkpoint(&trainer.model, epoch, cfg.seed);
        run.end_epoch(epoch, sum / batches.len().max(1) as f64, &trainer.model.unet1, val, snapshot, progress)?;
    }
    let checkpoint = combined_checkpoint(&trainer.model, cfg.epochs, cfg.seed);
    run.finish(checkpoint, &trainer.model.unet1, val)
}

fn labelled(set: &SampleSet, idx: &[usize]) -> Result<Labelled<f32>> {
    let b = set.batch(idx)?;
    let masks = b
        .masks
        .ok_or_else(|| Error::Data(format!("{} sample without mask", set.role)))?;
    Ok(Labelled {
        images: b.images,
        masks,
    })
}

fn tri_batch(
    hr: &SampleSet,
    hr_idx: &[usize],
    vhr: &SampleSet,
    vhr_idx: &[usize],
    unlabelled: Option<(&SampleSet, &mut CyclingBatches)>,
) -> Result<TriBatch<f32>> {
    Ok(TriBatch {
        hr: labelled(hr, hr_idx).map_err(|e| e.in_stream("hr"))?,
        vhr_labelled: labelled(vhr, vhr_idx).map_err(|e| e.in_stream("vhr_labelled"))?,
        vhr_unlabelled: unlabelled
            .map(|(set, stream)| set.batch(&stream.next_indices()).map(|b| b.images))
            .transpose()
            .map_err(|e| e.in_stream("vhr_unlabelled"))?,
    })
}

/// Bookkeeping shared by both loops.
struct Run<'a> {
    cfg: &'a TrainConfig,
    log: TrainLog,
    best: Option<BestCheckpoint>,
}

impl<'a> Run<'a> {
    fn new(cfg: &'a TrainConfig) -> Self {
        Run {
            cfg,
            log: TrainLog::default(),
            best: None,
        }
    }

    fn log_step(&mut self, epoch: usize, l1: f64, l2: f64, l3: f64, total: f64) {
        let step = self.log.steps.len() + 1;
        self.log.push_step(StepRecord {
            epoch,
            step,
            l1,
            l2,
            l3,
            total,
        });
    }

    fn end_epoch(
        &mut self,
        epoch: usize,
        mean_total: f64,
        model: &UNetModel<f32>,
        val: Option<&SampleSet>,
        snapshot: impl FnOnce() -> Checkpoint,
        progress: &mut dyn FnMut(&EpochSummary),
    ) -> Result<()> {
        let report = match val {
            Some(v) if self.cfg.eval_every_epoch => Some(evaluate_model(model, v, self.cfg.threshold)?),
            _ => None,
        };
        if let Some(r) = &report {
            if self.best.as_ref().is_none_or(|b| r.mean_iou > b.iou) {
                self.best = Some(BestCheckpoint {
                    epoch,
                    iou: r.mean_iou,
                    checkpoint: snapshot(),
                });
            }
        }
        self.log.epochs.push(EpochRecord {
            epoch,
            mean_total,
            val: report,
        });
        let steps = self.log.steps.len();
        progress(&EpochSummary {
            epoch,
            epochs: self.cfg.epochs,
            steps,
            record: self.log.epochs.last().expect("just pushed"),
        });
        Ok(())
    }

    fn finish(self, checkpoint: Checkpoint, model: &UNetModel<f32>, val: Option<&SampleSet>) -> Result<TrainOutcome> {
        let final_val = match (val, self.log.epochs.last()) {
            (Some(_), Some(EpochRecord { val: Some(r), .. })) => Some(r.clone()),
            (Some(v), _) => Some(evaluate_model(model, v, self.cfg.threshold)?),
            (None, _) => None,
        };
        Ok(TrainOutcome {
            checkpoint,
            best: self.best,
            log: self.log,
            final_val,
        })
    }
}

/// Dispatches on `cfg.mode`.
pub fn train(cfg: &TrainConfig, data: &TrainData, progress: &mut dyn FnMut(&EpochSummary)) -> Result<TrainOutcome> {
    match cfg.mode {
        Mode::Combined => train_combined(cfg, data, progress),
        _ => train_unet(cfg, data, progress),
    }
}
