use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use super::config::{ExperimentConfig, TransferMode};
use crate::checkpoint::{self, file_sha256};
use crate::data::{self, normalize_bands, stratified_split, GroundTruth, HsiCube, SplitSpec};
use crate::error::{Error, Result};
use crate::metrics::{write_map, MapMode, MetricsReport};
use crate::model::{Mct, MctConfig};
use crate::optim::Adam;
use crate::params::ParamStore;
use crate::pretrain::{transfer_weights, PretrainConfig, PretrainModel, TransferReport, TransferScope};
use crate::train::{self, StepInfo};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const SPLIT_FILE: &str = "split.json";
pub const PRETRAIN_CHECKPOINT: &str = "pretrain.mctw";
pub const MODEL_CHECKPOINT: &str = "model.mctw";
pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const MAP_FILE: &str = "map.ppm";

/// Output of `split`.
#[derive(Clone, Debug)]
pub struct SplitOutcome {
    pub split: SplitSpec,
    pub path: PathBuf,
}

/// Output of `pretrain`.
#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub checkpoint: PathBuf,
    pub epoch_losses: Vec<f64>,
}

/// Output of `train`.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub metrics: MetricsReport,
    pub transfer: Option<TransferReport>,
    pub final_loss: f64,
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn load_scene(cfg: &ExperimentConfig) -> Result<HsiCube> {
    normalize_bands(&HsiCube::load(&cfg.cube)?)
}

fn load_labeled(cfg: &ExperimentConfig) -> Result<(HsiCube, GroundTruth)> {
    let cube = load_scene(cfg)?;
    let gt = GroundTruth::load(cfg.ground_truth()?)?;
    gt.check_matches(&cube)?;
    Ok((cube, gt))
}

fn write_manifest(cfg: &ExperimentConfig, command: &str, extra: serde_json::Value) -> Result<()> {
    let manifest = json!({
        "command": command,
        "version": VERSION,
        "seed": cfg.seed,
        "deterministic": cfg.deterministic,
        "threads": rayon::current_num_threads(),
        "config": cfg,
        "details": extra,
    });
    fs::write(
        cfg.out_dir.join(format!("run_{command}.json")),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

fn write_log(path: &Path, steps: &[StepInfo]) -> Result<()> {
    #[derive(Serialize)]
    struct Row {
        epoch: usize,
        step: u64,
        lr: f64,
        loss: f64,
    }
    let mut w = csv::Writer::from_path(path)?;
    for s in steps {
        w.serialize(Row {
            epoch: s.epoch,
            step: s.step,
            lr: s.lr,
            loss: s.loss,
        })?;
    }
    w.flush()?;
    Ok(())
}

fn tags(phase: &str, model_key: &str, model_json: String, seed: u64) -> BTreeMap<String, String> {
    BTreeMap::from([
        ("phase".to_string(), phase.to_string()),
        (model_key.to_string(), model_json),
        ("seed".to_string(), seed.to_string()),
        ("version".to_string(), VERSION.to_string()),
    ])
}

/// Converts a raw interleaved binary plus JSON sidecar into `.hsic` / `.hsig`.
pub fn cmd_convert(raw: &Path, sidecar: &Path, out: &Path) -> Result<data::Converted> {
    data::convert_file(raw, sidecar, out)
}

/// Draws (or re-reads) the stratified split and writes it to `out_dir`.
pub fn cmd_split(cfg: &ExperimentConfig) -> Result<SplitOutcome> {
    cfg.validate()?;
    ensure_dir(&cfg.out_dir)?;
    let gt = GroundTruth::load(cfg.ground_truth()?)?;
    let split = resolve_split(cfg, &gt)?;
    let path = cfg.out_dir.join(SPLIT_FILE);
    fs::write(&path, split.to_json()?)?;
    write_manifest(
        cfg,
        "split",
        json!({ "train": split.train.len(), "test": split.test.len() }),
    )?;
    Ok(SplitOutcome { split, path })
}

fn resolve_split(cfg: &ExperimentConfig, gt: &GroundTruth) -> Result<SplitSpec> {
    let split = match &cfg.split {
        Some(p) => SplitSpec::from_json(&fs::read_to_string(p)?)?,
        None => stratified_split(gt, cfg.per_class, cfg.seed)?,
    };
    split.check_against(gt)?;
    Ok(split)
}

pub fn pretrain_config(cfg: &ExperimentConfig, bands: usize) -> PretrainConfig {
    let model = cfg.model_config(bands, 1);
    PretrainConfig {
        recon_hidden: cfg.pretrain.recon_hidden,
        zero_center: cfg.pretrain.zero_center,
        ..PretrainConfig::from_model(&model)
    }
}

/// Center-mask pretraining on every pixel of the cube. Labels are not read.
pub fn cmd_pretrain(cfg: &ExperimentConfig) -> Result<PretrainOutcome> {
    cfg.validate()?;
    ensure_dir(&cfg.out_dir)?;
    let cube = load_scene(cfg)?;
    let pcfg = pretrain_config(cfg, cube.bands);
    let mut store = ParamStore::<f32>::new();
    let model = PretrainModel::new(&mut store, &pcfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let sched = &cfg.pretrain.schedule;
    let mut opt = Adam::new(sched.lr, sched.weight_decay);
    let mut steps = Vec::new();
    let start = Instant::now();
    let epoch_losses = train::pretrain(&model, &mut store, &mut opt, &cube, sched, cfg.seed, |s, _| {
        steps.push(*s)
    })?;
    let elapsed = start.elapsed().as_secs_f64();
    write_log(&cfg.out_dir.join("pretrain_log.csv"), &steps)?;
    let path = cfg.out_dir.join(PRETRAIN_CHECKPOINT);
    let tags = tags("pretrain", "pretrain_config", serde_json::to_string(&pcfg)?, cfg.seed);
    checkpoint::save(&path, &store, &tags, Some(&opt))?;
    write_manifest(
        cfg,
        "pretrain",
        json!({
            "checkpoint": path,
            "checkpoint_sha256": file_sha256(&path)?,
            "epoch_losses": epoch_losses,
            "elapsed_seconds": elapsed,
        }),
    )?;
    Ok(PretrainOutcome {
        checkpoint: path,
        epoch_losses,
    })
}

fn init_from_pretrained(
    cfg: &ExperimentConfig,
    store: &mut ParamStore<f32>,
) -> Result<Option<(TransferReport, String)>> {
    let scope = match cfg.transfer {
        TransferMode::None => return Ok(None),
        TransferMode::Full => TransferScope::Full,
        TransferMode::Partial => TransferScope::Partial,
    };
    let Some(path) = &cfg.init_checkpoint else {
        return Ok(None);
    };
    let ckpt = checkpoint::load::<f32>(path)?;
    if ckpt.tags.get("phase").map(String::as_str) != Some("pretrain") {
        return Err(Error::Checkpoint(format!(
            "{} is not a pretraining checkpoint",
            path.display()
        )));
    }
    let report = transfer_weights(&ckpt.store, store, scope)?;
    Ok(Some((report, file_sha256(path)?)))
}

/// Fine-tunes a classifier on the training split (optionally initialised from
/// a pretraining checkpoint), then evaluates it on the test split.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    ensure_dir(&cfg.out_dir)?;
    let (cube, gt) = load_labeled(cfg)?;
    let split = resolve_split(cfg, &gt)?;
    fs::write(cfg.out_dir.join(SPLIT_FILE), split.to_json()?)?;

    let mcfg = cfg.model_config(cube.bands, gt.classes as usize);
    let mut store = ParamStore::<f32>::new();
    let model = Mct::new(&mut store, &mcfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let transfer = init_from_pretrained(cfg, &mut store)?;

    let patches = train::labeled_patches(&cube, &gt, &split.train, mcfg.mce.patch)?;
    let sched = &cfg.finetune;
    let mut opt = Adam::new(sched.lr, sched.weight_decay);
    let mut steps = Vec::new();
    let start = Instant::now();
    let losses = train::finetune(&model, &mut store, &mut opt, &patches, sched, cfg.seed, |s, _| {
        steps.push(*s)
    })?;
    let elapsed = start.elapsed().as_secs_f64();
    write_log(&cfg.out_dir.join("train_log.csv"), &steps)?;

    let path = cfg.out_dir.join(MODEL_CHECKPOINT);
    let tags = tags("finetune", "model_config", serde_json::to_string(&mcfg)?, cfg.seed);
    checkpoint::save(&path, &store, &tags, Some(&opt))?;

    let cm = train::evaluate(&model, &store, &cube, &gt, &split.test, cfg.eval_batch)?;
    let metrics = cm.report()?;
    write_metrics(&cfg.out_dir, &metrics)?;
    write_manifest(
        cfg,
        "train",
        json!({
            "checkpoint": path,
            "checkpoint_sha256": file_sha256(&path)?,
            "source_checkpoint": cfg.init_checkpoint,
            "source_checkpoint_sha256": transfer.as_ref().map(|t| t.1.clone()),
            "transferred": transfer.as_ref().map(|t| t.0.copied.len()),
            "transfer_skipped": transfer.as_ref().map(|t| t.0.skipped.clone()),
            "transfer_missing": transfer.as_ref().map(|t| t.0.missing.clone()),
            "train_pixels": split.train.len(),
            "test_pixels": split.test.len(),
            "final_loss": losses.last(),
            "elapsed_seconds": elapsed,
        }),
    )?;
    Ok(TrainOutcome {
        checkpoint: path,
        metrics,
        transfer: transfer.map(|t| t.0),
        final_loss: *losses.last().expect("at least one step"),
    })
}

fn write_metrics(dir: &Path, metrics: &MetricsReport) -> Result<()> {
    fs::write(dir.join(METRICS_JSON), metrics.to_json()?)?;
    fs::write(dir.join(METRICS_CSV), metrics.to_csv()?)?;
    Ok(())
}

/// Rebuilds a fine-tuned classifier from its checkpoint.
pub fn load_classifier(path: &Path) -> Result<(Mct, ParamStore<f32>)> {
    let ckpt = checkpoint::load::<f32>(path)?;
    let mcfg: MctConfig = ckpt
        .tags
        .get("model_config")
        .ok_or_else(|| Error::Checkpoint(format!("{} has no model_config tag", path.display())))
        .and_then(|s| serde_json::from_str(s).map_err(Error::from))?;
    let mut store = ParamStore::new();
    let model = Mct::new(&mut store, &mcfg, &mut ChaCha8Rng::seed_from_u64(0))?;
    checkpoint::restore(&mut store, &ckpt.store)?;
    Ok((model, store))
}

fn checkpoint_for(cfg: &ExperimentConfig, path: Option<&Path>) -> PathBuf {
    path.map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.out_dir.join(MODEL_CHECKPOINT))
}

/// Evaluates a fine-tuned checkpoint on the test split.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<MetricsReport> {
    cfg.validate()?;
    ensure_dir(&cfg.out_dir)?;
    let path = checkpoint_for(cfg, checkpoint);
    let (model, store) = load_classifier(&path)?;
    let (cube, gt) = load_labeled(cfg)?;
    if gt.classes as usize != model.cfg.classes {
        return Err(Error::Data(format!(
            "checkpoint has {} classes, ground truth has {}",
            model.cfg.classes, gt.classes
        )));
    }
    let split = resolve_split(cfg, &gt)?;
    let cm = train::evaluate(&model, &store, &cube, &gt, &split.test, cfg.eval_batch)?;
    let metrics = cm.report()?;
    write_metrics(&cfg.out_dir, &metrics)?;
    write_manifest(
        cfg,
        "eval",
        json!({ "checkpoint": path, "checkpoint_sha256": file_sha256(&path)? }),
    )?;
    Ok(metrics)
}

/// Renders a classification map of the whole scene. `Labeled` mode blacks
/// out pixels without ground truth.
pub fn cmd_map(cfg: &ExperimentConfig, checkpoint: Option<&Path>, mode: MapMode) -> Result<PathBuf> {
    cfg.validate()?;
    ensure_dir(&cfg.out_dir)?;
    let path = checkpoint_for(cfg, checkpoint);
    let (model, store) = load_classifier(&path)?;
    let cube = load_scene(cfg)?;
    let gt = match (mode, &cfg.ground_truth) {
        (MapMode::Labeled, _) => Some(GroundTruth::load(cfg.ground_truth()?)?),
        (MapMode::Full, Some(p)) => Some(GroundTruth::load(p)?),
        (MapMode::Full, None) => None,
    };
    let pred = train::predict_scene(&model, &store, &cube, cfg.eval_batch)?;
    let out = cfg.out_dir.join(MAP_FILE);
    write_map(&out, &pred, cube.height, cube.width, gt.as_ref(), mode)?;
    write_manifest(
        cfg,
        "map",
        json!({ "checkpoint": path, "mode": mode, "map": out }),
    )?;
    Ok(out)
}
