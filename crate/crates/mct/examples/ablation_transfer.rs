//! Scratch vs. pretrained initialisation at 5 labels per class, over seeds.
//!
//! `full` copies every embedding/encoder tensor; `partial` targets a model
//! without the spectral-identity branch and copies the shared subset.
//!
//! ```text
//! cargo run --release --example ablation_transfer [seeds]
//! ```

use mct::data::synthetic::{generate, SyntheticConfig};
use mct::data::{normalize_bands, stratified_split, GroundTruth, HsiCube};
use mct::mce::MceConfig;
use mct::model::{Mct, MctConfig};
use mct::optim::Adam;
use mct::pretrain::{transfer_weights, PretrainConfig, PretrainModel, TransferScope};
use mct::train::{evaluate, finetune, labeled_patches, pretrain, Schedule};
use mct::transformer::EncoderConfig;
use mct::ParamStore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn config(bands: usize, classes: usize, iie: bool) -> MctConfig {
    MctConfig {
        mce: MceConfig {
            groups: 2,
            spectral_kernel: 3,
            spectral_stride: 1,
            c1: 4,
            c2: 8,
            d_model: 32,
            patch: 9,
            bands,
            iie_enabled: iie,
        },
        encoder: EncoderConfig {
            depth: 2,
            heads: 4,
            d_model: 32,
            d_ff: 64,
            dropout: 0.1,
        },
        head_hidden: 32,
        classes,
    }
}

fn pretrained(cube: &HsiCube, classes: usize, seed: u64) -> mct::Result<ParamStore<f32>> {
    let cfg = PretrainConfig {
        recon_hidden: 32,
        ..PretrainConfig::from_model(&config(cube.bands, classes, true))
    };
    let mut store = ParamStore::new();
    let model = PretrainModel::new(&mut store, &cfg, &mut ChaCha8Rng::seed_from_u64(1000 + seed))?;
    let sched = Schedule {
        epochs: 8,
        batch: 32,
        lr: 2e-3,
        weight_decay: 0.0,
        batches_per_epoch: 16,
    };
    let mut opt = Adam::new(sched.lr, sched.weight_decay);
    pretrain(&model, &mut store, &mut opt, cube, &sched, seed, |_, _| {})?;
    Ok(store)
}

fn run(
    cube: &HsiCube,
    gt: &GroundTruth,
    seed: u64,
    source: Option<(&ParamStore<f32>, TransferScope)>,
) -> mct::Result<f64> {
    let iie = !matches!(source, Some((_, TransferScope::Partial)));
    let cfg = config(cube.bands, gt.classes as usize, iie);
    let split = stratified_split(gt, 5, seed)?;
    let mut store = ParamStore::<f32>::new();
    let model = Mct::new(&mut store, &cfg, &mut ChaCha8Rng::seed_from_u64(seed))?;
    if let Some((src, scope)) = source {
        let report = transfer_weights(src, &mut store, scope)?;
        if !report.skipped.is_empty() {
            println!("    partial transfer skipped {:?}", report.skipped);
        }
    }
    let train = labeled_patches(cube, gt, &split.train, cfg.mce.patch)?;
    let sched = Schedule {
        epochs: 60,
        batch: 10,
        lr: 1e-3,
        weight_decay: 1e-4,
        batches_per_epoch: 1,
    };
    let mut opt = Adam::new(sched.lr, sched.weight_decay);
    finetune(&model, &mut store, &mut opt, &train, &sched, seed, |_, _| {})?;
    evaluate(&model, &store, cube, gt, &split.test, 256)?.overall_accuracy()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn main() -> mct::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let scene = generate(&SyntheticConfig::default())?;
    let cube = normalize_bands(&scene.cube)?;
    let classes = scene.gt.classes as usize;

    let mut rows = [Vec::new(), Vec::new(), Vec::new()];
    for seed in 0..seeds {
        let src = pretrained(&cube, classes, seed)?;
        let oa = [
            run(&cube, &scene.gt, seed, None)?,
            run(&cube, &scene.gt, seed, Some((&src, TransferScope::Full)))?,
            run(&cube, &scene.gt, seed, Some((&src, TransferScope::Partial)))?,
        ];
        println!("seed {seed}: scratch {:.4}  full {:.4}  partial {:.4}", oa[0], oa[1], oa[2]);
        for (r, v) in rows.iter_mut().zip(oa) {
            r.push(v);
        }
    }
    let [s, f, p] = rows.map(median);
    println!("median OA: scratch {s:.4}  full {f:.4}  partial {p:.4}");
    Ok(())
}
