#![allow(dead_code)]

pub mod grad_suite;
pub mod metrics_oracle;

use mct::mce::MceConfig;
use mct::model::MctConfig;
use mct::transformer::EncoderConfig;
use mct::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    Tensor::from_fn(shape.to_vec(), |_| r.random_range(-1.0..1.0))
}

pub fn uniform32(shape: &[usize], seed: u64) -> Tensor<f32> {
    uniform(shape, seed).cast()
}

/// w=9, B=12, G=2, d_model=16: 6 → 4 → 2 spectral, 25 tokens.
pub fn toy_mce() -> MceConfig {
    MceConfig {
        groups: 2,
        spectral_kernel: 3,
        spectral_stride: 1,
        c1: 2,
        c2: 3,
        d_model: 16,
        patch: 9,
        bands: 12,
        iie_enabled: true,
    }
}

pub fn toy_encoder() -> EncoderConfig {
    EncoderConfig {
        depth: 1,
        heads: 2,
        d_model: 16,
        d_ff: 32,
        dropout: 0.0,
    }
}

pub fn toy_model(classes: usize) -> MctConfig {
    MctConfig {
        mce: toy_mce(),
        encoder: toy_encoder(),
        head_hidden: 8,
        classes,
    }
}

/// Small model sized for the 16-band synthetic scene.
pub fn synthetic_model(bands: usize, classes: usize) -> MctConfig {
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
        classes,
    }
}

pub fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len(), "length mismatch");
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol, "index {i}: {x} vs {y} (tol {tol})");
    }
}
