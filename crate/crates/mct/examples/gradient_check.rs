//! Finite-difference check of every parameter gradient in a small classifier
//! and in the center-mask pretraining model, in f64.
//!
//! ```text
//! cargo run --release --example gradient_check
//! ```

use mct::data::Patch;
use mct::gradcheck::{check_params, GradCheck, DEFAULT_STEP, DEFAULT_TOLERANCE};
use mct::mce::MceConfig;
use mct::model::{Mct, MctConfig};
use mct::pretrain::{PretrainConfig, PretrainModel};
use mct::transformer::EncoderConfig;
use mct::{ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config() -> MctConfig {
    MctConfig {
        mce: MceConfig {
            groups: 2,
            spectral_kernel: 3,
            spectral_stride: 1,
            c1: 2,
            c2: 3,
            d_model: 16,
            patch: 5,
            bands: 10,
            iie_enabled: true,
        },
        encoder: EncoderConfig {
            depth: 1,
            heads: 2,
            d_model: 16,
            d_ff: 32,
            dropout: 0.1,
        },
        head_hidden: 16,
        classes: 3,
    }
}

fn patches(n: usize, rng: &mut ChaCha8Rng) -> Vec<Patch> {
    (0..n)
        .map(|i| Patch {
            values: Tensor::new(vec![5, 5, 10], (0..250).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap(),
            center_row: 2,
            center_col: 2,
            label: Some(i as u16 % 3 + 1),
        })
        .collect()
}

fn summarize(title: &str, reports: &[GradCheck]) -> bool {
    let worst = reports.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error)).unwrap();
    let ok = reports.iter().all(|r| r.passes(DEFAULT_TOLERANCE));
    println!(
        "{title}: {} tensors, {} coordinates, worst {:.2e} at {}[{}] -> {}",
        reports.len(),
        reports.iter().map(|r| r.checked).sum::<usize>(),
        worst.max_rel_error,
        worst.name,
        worst.worst,
        if ok { "ok" } else { "FAILED" }
    );
    ok
}

fn main() -> mct::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let data = patches(4, &mut rng);
    let x = mct::data::stack_patches::<f64>(&data)?;
    let labels: Vec<usize> = data.iter().map(|p| p.label.unwrap() as usize - 1).collect();

    let mut store = ParamStore::<f64>::new();
    let model = Mct::new(&mut store, &config(), &mut rng)?;
    let cls = check_params(&mut store, DEFAULT_STEP, Some(8), 1, |tape, store| {
        let xv = tape.input(x.clone());
        model.loss(tape, store, xv, &labels)
    })?;

    let mut store = ParamStore::<f64>::new();
    let pcfg = PretrainConfig {
        recon_hidden: 16,
        ..PretrainConfig::from_model(&config())
    };
    let pmodel = PretrainModel::new(&mut store, &pcfg, &mut rng)?;
    let pre = check_params(&mut store, DEFAULT_STEP, Some(8), 2, |tape, store| pmodel.loss(tape, store, &data))?;

    let ok = summarize("classification", &cls) & summarize("pretraining", &pre);
    std::process::exit(if ok { 0 } else { 1 });
}
