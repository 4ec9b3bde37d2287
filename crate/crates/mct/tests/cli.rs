//! Experiment commands, called both as library functions and through the binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use mct::data::reference::{reference_ground_truth, SALINAS};
use mct::data::synthetic::{generate, SyntheticConfig};
use mct::data::{GroundTruth, HsiCube, SplitSpec};
use mct::experiment::{
    cmd_convert, cmd_eval, cmd_map, cmd_pretrain, cmd_split, cmd_train, load_classifier, ExperimentConfig,
    TransferMode, METRICS_CSV, METRICS_JSON,
};
use mct::metrics::MapMode;
use mct::train::predict_scene;
use mct::Error;
use serde_json::{json, Value};
use tempfile::TempDir;

/// A 24×24×8 two-class scene plus a small model config, written to a temp dir.
struct Fixture {
    dir: TempDir,
    cfg: ExperimentConfig,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let scene = generate(&SyntheticConfig {
            height: 24,
            width: 24,
            bands: 8,
            classes: 2,
            region: 8,
            seed: 11,
            ..Default::default()
        })
        .unwrap();
        let cube = dir.path().join("scene.hsic");
        let gt = dir.path().join("scene.hsig");
        scene.cube.save(&cube).unwrap();
        scene.gt.save(&gt).unwrap();
        let cfg: ExperimentConfig = serde_json::from_value(json!({
            "cube": cube,
            "ground_truth": gt,
            "per_class": 5,
            "mce": { "groups": 2, "spectral_kernel": 2, "spectral_stride": 1, "c1": 2, "c2": 3,
                     "d_model": 16, "patch": 7, "iie_enabled": true },
            "encoder": { "depth": 1, "heads": 2, "d_model": 16, "d_ff": 32, "dropout": 0.1 },
            "head_hidden": 16,
            "pretrain": { "schedule": { "epochs": 2, "batch": 8, "lr": 0.001, "weight_decay": 0.0,
                                        "batches_per_epoch": 3 },
                          "recon_hidden": 16 },
            "finetune": { "epochs": 4, "batch": 5, "lr": 0.001, "weight_decay": 0.0001 },
            "seed": 3,
            "out_dir": dir.path().join("run"),
            "eval_batch": 128
        }))
        .unwrap();
        Fixture { dir, cfg }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write_config(&self, cfg: &ExperimentConfig, name: &str) -> PathBuf {
        let p = self.path(name);
        fs::write(&p, cfg.to_json().unwrap()).unwrap();
        p
    }
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mct"))
}

fn manifest(dir: &Path, command: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join(format!("run_{command}.json"))).unwrap()).unwrap()
}

#[test]
fn convert_through_binary() {
    let fx = Fixture::new();
    // 2×2 scene, 2 bands, band-interleaved-by-line, u16
    let raw: Vec<u8> = [1u16, 2, 10, 20, 3, 4, 30, 40].iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(fx.path("c.raw"), raw).unwrap();
    fs::write(
        fx.path("c.json"),
        r#"{"kind":"cube","height":2,"width":2,"bands":2,"dtype":"u16","interleave":"bil","name":"tiny"}"#,
    )
    .unwrap();
    let out = bin()
        .args(["convert", "--raw"])
        .arg(fx.path("c.raw"))
        .arg("--sidecar")
        .arg(fx.path("c.json"))
        .arg("--out")
        .arg(fx.path("c.hsic"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cube = HsiCube::load(fx.path("c.hsic")).unwrap();
    assert_eq!(cube.spectrum(0, 1), &[2.0, 20.0]);
    assert_eq!(cube.spectrum(1, 0), &[3.0, 30.0]);

    fs::write(fx.path("g.raw"), [1u8, 0, 2, 2]).unwrap();
    fs::write(fx.path("g.json"), r#"{"kind":"gt","height":2,"width":2,"dtype":"u8","classes":2}"#).unwrap();
    cmd_convert(&fx.path("g.raw"), &fx.path("g.json"), &fx.path("g.hsig")).unwrap();
    assert_eq!(GroundTruth::load(fx.path("g.hsig")).unwrap().labels, [1, 0, 2, 2]);
}

#[test]
fn split_on_reference_salinas_layout() {
    let fx = Fixture::new();
    let gt = fx.path("salinas.hsig");
    reference_ground_truth(&SALINAS).unwrap().save(&gt).unwrap();
    let mut cfg = fx.cfg.clone();
    cfg.ground_truth = Some(gt);
    cfg.per_class = 5;
    let config = fx.write_config(&cfg, "salinas.json");
    let out = bin().arg("split").arg("--config").arg(&config).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let split = SplitSpec::from_json(&fs::read_to_string(cfg.out_dir.join("split.json")).unwrap()).unwrap();
    assert_eq!(split.train.len(), 80);
    assert_eq!(manifest(&cfg.out_dir, "split")["details"]["train"], 80);
    // the library call reproduces the same file
    let again = cmd_split(&cfg).unwrap();
    assert_eq!(again.split, split);
}

#[test]
fn pretrain_then_train_with_transfer() {
    let fx = Fixture::new();
    let pre = cmd_pretrain(&fx.cfg).unwrap();
    assert_eq!(pre.epoch_losses.len(), 2);
    assert!(pre.epoch_losses.iter().all(|l| l.is_finite() && *l >= 0.0));
    let log = fs::read_to_string(fx.cfg.out_dir.join("pretrain_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 6);
    let m = manifest(&fx.cfg.out_dir, "pretrain");
    assert_eq!(m["seed"], 3);
    assert_eq!(m["version"], env!("CARGO_PKG_VERSION"));
    assert!(m["config"]["mce"].is_object());

    let mut cfg = fx.cfg.clone();
    cfg.init_checkpoint = Some(pre.checkpoint.clone());
    cfg.transfer = TransferMode::Full;
    let trained = cmd_train(&cfg).unwrap();
    let report = trained.transfer.expect("transfer ran");
    assert!(report.skipped.is_empty() && report.missing.is_empty());
    assert!(report.copied.iter().any(|n| n == "mce.iie.weight"));

    let m = manifest(&cfg.out_dir, "train");
    assert_eq!(
        m["details"]["source_checkpoint_sha256"],
        mct::checkpoint::file_sha256(&pre.checkpoint).unwrap()
    );
    assert!(cfg.out_dir.join(METRICS_JSON).exists());
    assert!(cfg.out_dir.join(METRICS_CSV).exists());

    // a classifier checkpoint is not a valid initialisation source
    let mut bad = cfg.clone();
    bad.init_checkpoint = Some(trained.checkpoint.clone());
    assert!(matches!(cmd_train(&bad), Err(Error::Checkpoint(_))));

    // partial transfer into a model without the IIE branch
    let mut partial = cfg.clone();
    partial.mce.iie_enabled = false;
    partial.transfer = TransferMode::Partial;
    partial.out_dir = fx.path("partial");
    let t = cmd_train(&partial).unwrap();
    assert_eq!(t.transfer.unwrap().skipped, ["mce.iie.bias", "mce.iie.weight"]);
    partial.transfer = TransferMode::Full;
    assert!(matches!(cmd_train(&partial), Err(Error::Transfer { .. })));
}

#[test]
fn train_is_reproducible() {
    let fx = Fixture::new();
    let mut a = fx.cfg.clone();
    a.out_dir = fx.path("a");
    let mut b = fx.cfg.clone();
    b.out_dir = fx.path("b");
    let ra = cmd_train(&a).unwrap();
    let rb = cmd_train(&b).unwrap();
    assert_eq!(ra.final_loss.to_bits(), rb.final_loss.to_bits());
    for f in [METRICS_JSON, METRICS_CSV, "split.json", "train_log.csv", "model.mctw"] {
        assert_eq!(fs::read(a.out_dir.join(f)).unwrap(), fs::read(b.out_dir.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn eval_and_map() {
    let fx = Fixture::new();
    let trained = cmd_train(&fx.cfg).unwrap();
    let again = cmd_eval(&fx.cfg, None).unwrap();
    assert_eq!(again, trained.metrics);

    // relabel the scene with the model's own predictions: evaluation must be perfect
    let (model, store) = load_classifier(&trained.checkpoint).unwrap();
    let cube = mct::data::normalize_bands(&HsiCube::load(&fx.cfg.cube).unwrap()).unwrap();
    let pred = predict_scene(&model, &store, &cube, 128).unwrap();
    let counts = [1u16, 2].map(|k| pred.iter().filter(|&&p| p == k).count());
    assert!(counts.iter().all(|&c| c > 5), "both classes predicted: {counts:?}");
    let perfect = GroundTruth::new(24, 24, 2, vec!["a".into(), "b".into()], pred.clone()).unwrap();
    let mut cfg = fx.cfg.clone();
    cfg.ground_truth = Some(fx.path("perfect.hsig"));
    perfect.save(cfg.ground_truth.as_ref().unwrap()).unwrap();
    cfg.out_dir = fx.path("perfect");
    let m = cmd_eval(&cfg, Some(&trained.checkpoint)).unwrap();
    assert_eq!((m.oa, m.aa, m.kappa), (1.0, 1.0, 1.0));

    // maps: labeled mode blacks out unlabeled pixels, full mode colors everything
    let mut sparse = fx.cfg.clone();
    let mut labels = GroundTruth::load(fx.cfg.ground_truth.as_ref().unwrap()).unwrap();
    labels.labels[0] = 0;
    sparse.ground_truth = Some(fx.path("sparse.hsig"));
    labels.save(sparse.ground_truth.as_ref().unwrap()).unwrap();
    let header = b"P6\n24 24\n255\n";
    let labeled = fs::read(cmd_map(&sparse, Some(&trained.checkpoint), MapMode::Labeled).unwrap()).unwrap();
    assert!(labeled.starts_with(header));
    assert_eq!(labeled.len(), header.len() + 24 * 24 * 3);
    assert_eq!(&labeled[header.len()..header.len() + 3], &[0, 0, 0]);

    let config = fx.write_config(&sparse, "sparse.json");
    let out = bin()
        .arg("map")
        .arg("--config")
        .arg(&config)
        .arg("--checkpoint")
        .arg(&trained.checkpoint)
        .args(["--map-mode", "full", "--out"])
        .arg(fx.path("full"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let full = fs::read(fx.path("full").join("map.ppm")).unwrap();
    assert_eq!(full.len(), labeled.len());
    assert_ne!(&full[header.len()..header.len() + 3], &[0, 0, 0]);
    assert_eq!(full[header.len() + 3..], labeled[header.len() + 3..]);
}

fn run_failing(args: &[&str], config: Option<&Path>) -> (i32, String) {
    let mut c = bin();
    c.args(args);
    if let Some(p) = config {
        c.arg("--config").arg(p);
    }
    let out = c.output().unwrap();
    assert!(!out.status.success());
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

#[test]
fn errors_carry_categories_and_exit_codes() {
    let fx = Fixture::new();

    let (code, err) = run_failing(&["split"], Some(&fx.path("missing.json")));
    assert_eq!(code, 5);
    assert!(err.starts_with("error[io]"), "{err}");

    fs::write(fx.path("bad.json"), r#"{"cube":"x","unknown_field":1}"#).unwrap();
    let (code, err) = run_failing(&["split"], Some(&fx.path("bad.json")));
    assert_eq!(code, 2);
    assert!(err.starts_with("error[config]"), "{err}");

    let mut cfg = fx.cfg.clone();
    cfg.encoder.d_model = 32;
    let (code, err) = run_failing(&["train"], Some(&fx.write_config(&cfg, "width.json")));
    assert_eq!(code, 2);
    assert!(err.starts_with("error[config]"), "{err}");

    let mut cfg = fx.cfg.clone();
    GroundTruth::new(2, 2, 1, vec!["x".into()], vec![1; 4])
        .unwrap()
        .save(fx.path("small.hsig"))
        .unwrap();
    cfg.ground_truth = Some(fx.path("small.hsig"));
    let (code, err) = run_failing(&["train"], Some(&fx.write_config(&cfg, "mismatch.json")));
    assert_eq!(code, 3);
    assert!(err.starts_with("error[data]"), "{err}");

    let mut cfg = fx.cfg.clone();
    cfg.mce.groups = 3;
    let (code, err) = run_failing(&["pretrain"], Some(&fx.write_config(&cfg, "groups.json")));
    assert!(err.starts_with("error[config]") || err.starts_with("error[shape]"), "{err}");
    assert!(code == 2 || code == 4);

    assert!(matches!(cmd_eval(&fx.cfg, Some(&fx.path("nothing.mctw"))), Err(Error::Io(_))));
}
