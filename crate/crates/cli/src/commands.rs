use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use aquaseg::combined::{LossWeights, StreamBatchSizes};
use aquaseg::data::synth::{synth_generate, Shift, SynthConfig};
use aquaseg::data::{patchify as tile, read_raster, BandStats, DatasetManifest, ManifestEntry, MaskImage, Role, Split};
use aquaseg::loss::binarize_logits;
use aquaseg::nn::Checkpoint;
use aquaseg::trainer::{
    ablate_training_size, evaluate, model_for_role, scaled_sizes, AblationConfig, Mode, TrainConfig, TrainData,
};

use crate::args::*;

impl From<RoleArg> for Role {
    fn from(r: RoleArg) -> Self {
        match r {
            RoleArg::HrLabelled => Role::HrLabelled,
            RoleArg::VhrLabelled => Role::VhrLabelled,
            RoleArg::VhrUnlabelled => Role::VhrUnlabelled,
        }
    }
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Unet => Mode::UnetVhr,
            ModeArg::UnetHr => Mode::UnetHr,
            ModeArg::Combined => Mode::Combined,
        }
    }
}

fn print_config(title: &str, body: impl std::fmt::Display) {
    println!("[{title}] resolved config");
    for line in body.to_string().lines() {
        println!("  {line}");
    }
}

/// Splits `total` scenes 60:12:4, rounding the two smaller shares.
fn apportion(total: usize) -> (usize, usize, usize) {
    let vhr = (total as f64 * 12.0 / 76.0).round() as usize;
    let unl = ((total as f64 * 4.0 / 76.0).round() as usize).min(total - vhr);
    (total - vhr - unl, vhr, unl)
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let (hr, vhr, unl) = apportion(a.scenes);
    let shift = match a.shift {
        ShiftKind::None => Shift::None,
        ShiftKind::Radiometric => Shift::Radiometric {
            gain: a.shift_gain,
            offset: a.shift_offset,
        },
        ShiftKind::Texture => Shift::Texture {
            amplitude: a.texture_amplitude,
        },
    };
    let cfg = SynthConfig {
        hr_scenes: a.hr_scenes.unwrap_or(hr),
        vhr_labelled_scenes: a.vhr_labelled_scenes.unwrap_or(vhr),
        vhr_unlabelled_scenes: a.vhr_unlabelled_scenes.unwrap_or(unl),
        vhr_size: a.vhr_size,
        hr_size: a.hr_size,
        factor: a.factor,
        noise: a.noise,
        shift,
        seed: a.seed,
        ..SynthConfig::default()
    };
    print_config("synth", format!("out={}\n{cfg}", a.out.display()));
    let ds = synth_generate(&cfg)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let manifest = ds.write(&a.out)?;
    for role in Role::ALL {
        let n = |s| manifest.count(role, s);
        println!(
            "{role}: train={} val={} test={}",
            n(Split::Train),
            n(Split::Val),
            n(Split::Test)
        );
    }
    println!("wrote {} entries to {}", manifest.entries.len(), a.out.join(aquaseg::data::MANIFEST_FILE).display());
    Ok(())
}

pub fn patchify(a: &PatchifyArgs) -> Result<()> {
    let stride = a.stride.unwrap_or(a.size);
    print_config(
        "patchify",
        format!(
            "image={} mask={:?} size={} stride={stride} out={} role={:?} split={:?}",
            a.image.display(),
            a.mask,
            a.size,
            a.out.display(),
            a.role,
            a.split
        ),
    );
    let role = Role::from(a.role);
    if role.is_labelled() != a.mask.is_some() {
        bail!("role {role} {} a mask", if role.is_labelled() { "requires" } else { "does not take" });
    }
    let image = read_raster(&a.image)?;
    let mask = a.mask.as_ref().map(MaskImage::read).transpose()?;
    let patches = tile(&image, mask.as_ref(), a.size, stride)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let stem = a.image.file_stem().and_then(|s| s.to_str()).unwrap_or("patch");
    let mut entries = Vec::with_capacity(patches.len());
    for p in &patches {
        let name = format!("{stem}_y{:05}_x{:05}", p.y, p.x);
        let image_path = format!("{name}.aqr");
        aquaseg::data::write_raster(&p.image, a.out.join(&image_path))?;
        let mask_path = match &p.mask {
            Some(m) => {
                let mp = format!("{name}_mask.aqr");
                m.write(a.out.join(&mp))?;
                Some(mp)
            }
            None => None,
        };
        entries.push(ManifestEntry {
            image_path,
            mask_path,
            role,
            split: a.split.into(),
        });
    }
    let manifest = DatasetManifest::new(&a.out, entries)?;
    manifest.save(a.out.join(aquaseg::data::MANIFEST_FILE))?;
    println!("wrote {} patches to {}", patches.len(), a.out.display());
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    path.with_file_name(format!("{stem}{suffix}"))
}

fn load_data(manifest: &Path) -> Result<TrainData> {
    let m = DatasetManifest::load(manifest).with_context(|| format!("loading manifest {}", manifest.display()))?;
    Ok(TrainData::load(&m)?)
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let mode = Mode::from(a.mode);
    let defaults = TrainConfig::new(mode);
    let cfg = TrainConfig {
        preset: a.preset.clone(),
        epochs: a.epochs.unwrap_or(defaults.epochs),
        batch_size: a.batch_size,
        stream_batches: StreamBatchSizes {
            hr: a.hr_batch,
            vhr_labelled: a.vhr_batch,
            vhr_unlabelled: a.unlabelled_batch,
        },
        adam: aquaseg::trainer::AdamConfig {
            lr: a.lr,
            ..defaults.adam
        },
        weights: LossWeights {
            vhr: a.w1,
            hr: a.w2,
            consistency: a.w3,
        },
        bridge_factor: a.factor,
        detach_vhr: a.detach_vhr,
        detach_hr: a.detach_hr,
        seed: a.seed,
        eval_every_epoch: a.eval_every_epoch,
        threshold: a.threshold,
        ..defaults
    };
    let log_path = a.log.clone().unwrap_or_else(|| with_suffix(&a.ckpt, ".log.csv"));
    print_config(
        "train",
        format!(
            "manifest={} ckpt={} log={}\n{cfg}",
            a.manifest.display(),
            a.ckpt.display(),
            log_path.display()
        ),
    );
    cfg.validate()?;
    let data = load_data(&a.manifest)?;
    let out = aquaseg::trainer::train(&cfg, &data, &mut |s| println!("{s}"))?;
    out.checkpoint.save(&a.ckpt)?;
    std::fs::write(&log_path, out.log.to_csv()).with_context(|| format!("writing {}", log_path.display()))?;
    if let Some(best) = &out.best {
        let p = with_suffix(&a.ckpt, ".best.aqck");
        best.checkpoint.save(&p)?;
        println!("best checkpoint: epoch {} val IoU {:.4} -> {}", best.epoch, best.iou, p.display());
    }
    match &out.final_val {
        Some(r) => println!(
            "final (last epoch) val: IoU {:.4} Dice {:.4} over {} samples",
            r.mean_iou, r.mean_dice, r.count
        ),
        None => println!("final: no validation split for {}", mode.eval_role()),
    }
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    print_config("eval", format!("{a:?}"));
    let ck = Checkpoint::load(&a.ckpt)?;
    let data = load_data(&a.manifest)?;
    let (role, split) = (Role::from(a.role), Split::from(a.split));
    let r = evaluate(&ck, &data, role, split, a.threshold)?;
    let model = if ck.has_model("unet1/") { "combined" } else { "unet" };
    println!("{:<10}{:>8}{:>8}{:>9}", "model", "IoU", "Dice", "samples");
    println!("{model:<10}{:>8.4}{:>8.4}{:>9}", r.mean_iou, r.mean_dice, r.count);
    if let Some(path) = &a.csv {
        let mut text = String::from("sample,IoU,Dice\n");
        for (i, (iou, dice)) in r.iou.iter().zip(&r.dice).enumerate() {
            text.push_str(&format!("{i},{iou},{dice}\n"));
        }
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

pub fn ablate(a: &AblateArgs) -> Result<()> {
    let data = load_data(&a.manifest)?;
    let available = data.require(Role::VhrLabelled, Split::Train)?.len();
    let sizes = a.sizes.clone().unwrap_or_else(|| scaled_sizes(available));
    let mut cfg = AblationConfig::new(sizes, a.seed);
    for t in [&mut cfg.unet, &mut cfg.combined] {
        t.preset = a.preset.clone();
        t.batch_size = a.batch_size;
        t.stream_batches = StreamBatchSizes {
            hr: a.hr_batch,
            vhr_labelled: a.vhr_batch,
            vhr_unlabelled: a.unlabelled_batch,
        };
        t.weights = LossWeights {
            vhr: a.w1,
            hr: a.w2,
            consistency: a.w3,
        };
        t.bridge_factor = a.factor;
        t.threshold = a.threshold;
    }
    cfg.unet.epochs = a.unet_epochs;
    cfg.combined.epochs = a.combined_epochs;
    cfg.eval_split = a.split.into();
    cfg.threshold = a.threshold;
    print_config(
        "ablate",
        format!(
            "manifest={} sizes={:?} split={}\n[unet]\n{}\n[combined]\n{}",
            a.manifest.display(),
            cfg.sizes,
            cfg.eval_split,
            cfg.unet,
            cfg.combined
        ),
    );
    let table = ablate_training_size(&cfg, &data, &mut |line| println!("{line}"))?;
    println!("{}", table.to_text());
    if let Some(p) = &a.csv {
        std::fs::write(p, table.to_csv()).with_context(|| format!("writing {}", p.display()))?;
    }
    if let Some(p) = &a.txt {
        std::fs::write(p, table.to_text() + "\n").with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

pub fn predict(a: &PredictArgs) -> Result<()> {
    print_config("predict", format!("{a:?}"));
    let ck = Checkpoint::load(&a.ckpt)?;
    let model = model_for_role(&ck, a.role.into())?;
    let stats = BandStats::load(&a.stats)?;
    let image = read_raster(&a.image)?;
    if image.bands() != model.config().in_channels {
        return Err(aquaseg::Error::CheckpointMismatch(format!(
            "model takes {} bands, {} has {}",
            model.config().in_channels,
            a.image.display(),
            image.bands()
        ))
        .into());
    }
    let logits = model.predict(&stats.apply(&image)?)?;
    let mask = MaskImage::new(image.width(), image.height(), binarize_logits(logits.data(), a.threshold))?;
    mask.write(&a.out)?;
    let pgm = a.out.with_extension("pgm");
    mask.write_pgm(&pgm)?;
    println!(
        "wrote {} and {} (water fraction {:.4})",
        a.out.display(),
        pgm.display(),
        mask.water_fraction()
    );
    Ok(())
}
