//! Trains briefly, then writes the confusion matrix, metrics files and two
//! classification maps for a synthetic scene.
//!
//! ```text
//! cargo run --release --example metrics_and_map [out_dir]
//! ```

use std::fs;
use std::path::PathBuf;

use mct::data::synthetic::{generate, SyntheticConfig};
use mct::data::{normalize_bands, stratified_split};
use mct::mce::MceConfig;
use mct::metrics::{write_map, MapMode};
use mct::model::{Mct, MctConfig};
use mct::optim::Adam;
use mct::train::{evaluate, finetune, labeled_patches, predict_scene, Schedule};
use mct::transformer::EncoderConfig;
use mct::ParamStore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> mct::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "runs/metrics_and_map".into()));
    fs::create_dir_all(&out)?;

    let scene = generate(&SyntheticConfig {
        height: 48,
        width: 48,
        classes: 4,
        region: 12,
        ..Default::default()
    })?;
    let cube = normalize_bands(&scene.cube)?;
    let split = stratified_split(&scene.gt, 10, 3)?;
    let cfg = MctConfig {
        mce: MceConfig {
            groups: 2,
            spectral_kernel: 3,
            spectral_stride: 1,
            c1: 4,
            c2: 8,
            d_model: 32,
            patch: 7,
            bands: cube.bands,
            iie_enabled: true,
        },
        encoder: EncoderConfig {
            depth: 1,
            heads: 4,
            d_model: 32,
            d_ff: 64,
            dropout: 0.1,
        },
        head_hidden: 32,
        classes: scene.gt.classes as usize,
    };
    let mut store = ParamStore::<f32>::new();
    let model = Mct::new(&mut store, &cfg, &mut ChaCha8Rng::seed_from_u64(3))?;
    let train = labeled_patches(&cube, &scene.gt, &split.train, cfg.mce.patch)?;
    let sched = Schedule {
        epochs: 40,
        batch: 20,
        lr: 1e-3,
        weight_decay: 1e-4,
        batches_per_epoch: 1,
    };
    let mut opt = Adam::new(sched.lr, sched.weight_decay);
    finetune(&model, &mut store, &mut opt, &train, &sched, 3, |_, _| {})?;

    let cm = evaluate(&model, &store, &cube, &scene.gt, &split.test, 256)?;
    println!("confusion (rows = truth):");
    for row in cm.rows() {
        println!("  {}", row.iter().map(|v| format!("{v:>6}")).collect::<String>());
    }
    let report = cm.report()?;
    print!("{}", report.to_csv()?);
    fs::write(out.join("metrics.json"), report.to_json()?)?;
    fs::write(out.join("metrics.csv"), report.to_csv()?)?;

    let pred = predict_scene(&model, &store, &cube, 256)?;
    write_map(out.join("map_labeled.ppm"), &pred, cube.height, cube.width, Some(&scene.gt), MapMode::Labeled)?;
    write_map(out.join("map_full.ppm"), &pred, cube.height, cube.width, None, MapMode::Full)?;
    println!("wrote metrics and maps to {}", out.display());
    Ok(())
}
