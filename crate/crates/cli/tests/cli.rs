use std::path::Path;
use std::process::{Command, Output};

use aquaseg::data::{BandStats, DatasetManifest, ManifestEntry, MaskImage, RasterImage, Role, Split};
use aquaseg::nn::{save_checkpoint, TrainMeta, UNetConfig, UNetModel};
use aquaseg::PrngState;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aquaseg")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_synth(out: &Path, extra: &[&str]) {
    let mut args = vec![
        "synth", "--out", s(out), "--hr-scenes", "6", "--vhr-labelled-scenes", "4", "--vhr-unlabelled-scenes", "2",
        "--vhr-size", "32", "--hr-size", "8", "--seed", "3",
    ];
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(run(&["train", "--mode", "bogus", "--manifest", "m.csv", "--ckpt", "x"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_one() {
    let out = run(&["eval", "--ckpt", "/nonexistent.aqck", "--manifest", "/nonexistent.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn help_shows_defaults() {
    let help = ok(&["train", "--help"]);
    for needle in ["--hr-batch", "[default: 4]", "--w3", "[default: 0.1]", "--threshold"] {
        assert!(help.contains(needle), "train --help lacks {needle}");
    }
    let help = ok(&["ablate", "--help"]);
    assert!(help.contains("[default: 25]") && help.contains("[default: 40]"));
}

#[test]
fn synth_is_byte_reproducible_and_shift_moves_hr_radiometry() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    tiny_synth(&a, &[]);
    tiny_synth(&b, &[]);
    tiny_synth(&c, &["--shift", "radiometric", "--shift-offset", "0.1"]);
    let m = DatasetManifest::load(a.join("manifest.csv")).unwrap();
    for e in &m.entries {
        assert_eq!(std::fs::read(a.join(&e.image_path)).unwrap(), std::fs::read(b.join(&e.image_path)).unwrap());
    }
    assert_eq!(std::fs::read(a.join("band_stats.txt")).unwrap(), std::fs::read(b.join("band_stats.txt")).unwrap());

    // same scenes, HR raised by the offset (up to f32 rounding); VHR untouched
    for e in &m.entries {
        let x = aquaseg::data::read_raster(a.join(&e.image_path)).unwrap().to_f32();
        let y = aquaseg::data::read_raster(c.join(&e.image_path)).unwrap().to_f32();
        let diff = y.iter().zip(&x).map(|(p, q)| p - q).sum::<f32>() / x.len() as f32;
        let want = if e.role == Role::HrLabelled { 0.1 } else { 0.0 };
        assert!((diff - want).abs() < 1e-5, "{}: mean shift {diff}", e.image_path);
    }
}

#[test]
fn train_predict_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    tiny_synth(&data, &[]);
    let ck = tmp.path().join("m.aqck");
    let stdout = ok(&["train", "--mode", "combined", "--manifest", s(&data.join("manifest.csv")), "--epochs", "1", "--ckpt", s(&ck)]);
    assert!(stdout.contains("epoch 1/1"));
    assert!(tmp.path().join("m.log.csv").exists());

    let out = tmp.path().join("pred.aqr");
    ok(&[
        "predict", "--ckpt", s(&ck), "--image", s(&data.join("vhr_labelled/scene_000.aqr")),
        "--stats", s(&data.join("band_stats.txt")), "--out", s(&out),
    ]);
    let mask = MaskImage::read(&out).unwrap();
    assert_eq!((mask.width(), mask.height()), (32, 32));
    assert!(mask.data().iter().all(|&v| v <= 1));
    let pgm = std::fs::read(tmp.path().join("pred.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n32 32\n255\n"));
    assert!(pgm[pgm.len() - 1024..].iter().all(|&v| v == 0 || v == 255));
}

#[test]
fn always_dry_model_scores_one_on_dry_tiles() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let mut entries = Vec::new();
    let mut imgs = Vec::new();
    for k in 0..3 {
        let img = RasterImage::from_f32(16, 16, 4, (0..1024).map(|i| (i % 17) as f32 * 0.05 + k as f32).collect()).unwrap();
        let (ip, mp) = (format!("dry_{k}.aqr"), format!("dry_{k}_mask.aqr"));
        aquaseg::data::write_raster(&img, root.join(&ip)).unwrap();
        MaskImage::new(16, 16, vec![0; 256]).unwrap().write(root.join(&mp)).unwrap();
        entries.push(ManifestEntry {
            image_path: ip,
            mask_path: Some(mp),
            role: Role::VhrLabelled,
            split: Split::Test,
        });
        imgs.push(img);
    }
    DatasetManifest::new(root, entries).unwrap().save(root.join("manifest.csv")).unwrap();
    BandStats::compute(imgs.iter()).unwrap().save(root.join("band_stats.txt")).unwrap();

    let mut model = UNetModel::<f32>::build(UNetConfig::micro(4), &mut PrngState::new(1)).unwrap();
    let n = model.params().len();
    let params = model.params_mut();
    params[n - 2] = params[n - 2].map(|_| 0.0);
    params[n - 1] = params[n - 1].map(|_| -10.0);
    save_checkpoint(&model, TrainMeta::default(), root.join("dry.aqck")).unwrap();

    let out = ok(&["eval", "--ckpt", s(&root.join("dry.aqck")), "--manifest", s(&root.join("manifest.csv"))]);
    let row = out.lines().last().unwrap();
    let cols: Vec<&str> = row.split_whitespace().collect();
    assert_eq!(&cols[1..], &["1.0000", "1.0000", "3"], "{out}");
}
