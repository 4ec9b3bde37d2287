//! Train a small classifier on a procedural scene and report test metrics.
//!
//! ```text
//! cargo run --release --example synthetic_pipeline
//! ```

use std::time::Instant;

use mct::data::synthetic::{generate, SyntheticConfig};
use mct::data::{normalize_bands, stratified_split};
use mct::mce::MceConfig;
use mct::model::{Mct, MctConfig};
use mct::optim::Adam;
use mct::params::ParamStore;
use mct::train::{evaluate, finetune, labeled_patches, Schedule};
use mct::transformer::EncoderConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> mct::error::Result<()> {
    let scene = generate(&SyntheticConfig::default())?;
    let cube = normalize_bands(&scene.cube)?;
    let split = stratified_split(&scene.gt, 20, 7)?;

    let cfg = MctConfig {
        mce: MceConfig {
            groups: 2,
            spectral_kernel: 3,
            spectral_stride: 1,
            c1: 4,
            c2: 8,
            d_model: 32,
            patch: 9,
            bands: cube.bands,
            iie_enabled: true,
        },
        encoder: EncoderConfig {
            depth: 2,
            heads: 4,
            d_model: 32,
            d_ff: 64,
            dropout: 0.1,
        },
        head_hidden: 32,
        classes: scene.gt.classes as usize,
    };
    let mut store = ParamStore::<f32>::new();
    let model = Mct::new(&mut store, &cfg, &mut ChaCha8Rng::seed_from_u64(7))?;
    println!("{} parameters", store.numel());

    let train = labeled_patches(&cube, &scene.gt, &split.train, cfg.mce.patch)?;
    let schedule = Schedule {
        epochs: 40,
        batch: 20,
        lr: 1e-3,
        weight_decay: 1e-4,
        batches_per_epoch: 1,
    };
    let mut opt = Adam::new(schedule.lr, schedule.weight_decay);
    let t = Instant::now();
    let losses = finetune(&model, &mut store, &mut opt, &train, &schedule, 7, |s, _| {
        if s.step % 20 == 0 {
            println!("step {:>4}  lr {:.2e}  loss {:.4}", s.step, s.lr, s.loss);
        }
    })?;
    println!("{} steps in {:.1?}", losses.len(), t.elapsed());

    let t = Instant::now();
    let cm = evaluate(&model, &store, &cube, &scene.gt, &split.test, 256)?;
    let report = cm.report()?;
    println!(
        "test: {} pixels in {:.1?}  OA {:.4}  AA {:.4}  kappa {:.4}",
        report.samples,
        t.elapsed(),
        report.oa,
        report.aa,
        report.kappa
    );
    Ok(())
}
