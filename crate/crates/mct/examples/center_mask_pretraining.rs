//! Self-supervised center-spectrum reconstruction on a procedural scene.
//!
//! Prints the loss per epoch, the held-out reconstruction error against a
//! per-band-mean predictor, and how much of the true center spectrum leaks
//! into the prediction through the neighbor tokens.
//!
//! ```text
//! cargo run --release --example center_mask_pretraining
//! ```

use mct::data::synthetic::{generate, SyntheticConfig};
use mct::data::{extract_patch, normalize_bands};
use mct::mce::MceConfig;
use mct::model::MctConfig;
use mct::optim::Adam;
use mct::pretrain::{center_leakage, PretrainConfig, PretrainModel};
use mct::train::{pretrain, Schedule};
use mct::transformer::EncoderConfig;
use mct::ParamStore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> mct::Result<()> {
    let scene = generate(&SyntheticConfig::default())?;
    let cube = normalize_bands(&scene.cube)?;
    let model_cfg = MctConfig {
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
    let cfg = PretrainConfig {
        recon_hidden: 32,
        ..PretrainConfig::from_model(&model_cfg)
    };
    let mut store = ParamStore::<f32>::new();
    let model = PretrainModel::new(&mut store, &cfg, &mut ChaCha8Rng::seed_from_u64(1))?;

    let schedule = Schedule {
        epochs: 10,
        batch: 32,
        lr: 2e-3,
        weight_decay: 0.0,
        batches_per_epoch: 16,
    };
    let mut opt = Adam::new(schedule.lr, schedule.weight_decay);
    let epochs = pretrain(&model, &mut store, &mut opt, &cube, &schedule, 1, |_, _| {})?;
    for (e, l) in epochs.iter().enumerate() {
        println!("epoch {e:>2}  mse {l:.4}");
    }

    // a sparse grid of pixels as a fixed probe set
    let probe: Vec<_> = (1..cube.height)
        .step_by(5)
        .flat_map(|r| (3..cube.width).step_by(5).map(move |c| (r, c)))
        .map(|(r, c)| extract_patch(&cube, r, c, cfg.mce.patch))
        .collect::<mct::Result<_>>()?;
    let b = cube.bands;
    let mean: Vec<f64> = (0..b)
        .map(|k| cube.values.data().iter().skip(k).step_by(b).map(|&v| v as f64).sum::<f64>() / cube.pixels() as f64)
        .collect();
    let baseline = probe
        .iter()
        .flat_map(|p| p.center_spectrum().iter().zip(&mean).map(|(&v, m)| (v as f64 - m).powi(2)))
        .sum::<f64>()
        / (probe.len() * b) as f64;
    println!(
        "probe ({} pixels): mse {:.4}, band-mean baseline {:.4}",
        probe.len(),
        model.eval_loss(&store, &probe)?,
        baseline
    );
    println!("center leakage at +1.0: {:.5}", center_leakage(&model, &store, &probe, 1.0)?);
    Ok(())
}
