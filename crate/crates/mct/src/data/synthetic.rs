//! Procedural scenes with known class structure, used by tests and examples.
//!
//! The label map is a Voronoi partition of the scene into regions, each
//! assigned a class. Every class has a smooth characteristic spectrum; pixels
//! add an illumination term that varies slowly across the scene plus white
//! noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::cube::{GroundTruth, HsiCube};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub classes: u16,
    /// Approximate region edge length in pixels.
    pub region: usize,
    /// Amplitude of the class-specific spectral signature.
    pub separation: f64,
    /// Standard deviation of per-pixel white noise.
    pub noise: f64,
    /// Fraction of pixels that carry a label.
    pub labeled_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            height: 64,
            width: 64,
            bands: 16,
            classes: 2,
            region: 12,
            separation: 1.0,
            noise: 0.3,
            labeled_fraction: 1.0,
            seed: 0,
        }
    }
}

pub struct SyntheticScene {
    pub cube: HsiCube,
    pub gt: GroundTruth,
    /// Class of every pixel, including those left unlabeled in `gt`.
    pub full_labels: Vec<u16>,
}

/// Characteristic spectrum of class `k` (0-based).
fn signature(k: usize, classes: usize, bands: usize) -> Vec<f64> {
    let phase = std::f64::consts::PI * k as f64 / classes as f64;
    let freq = 1.0 + (k % 3) as f64 * 0.5;
    (0..bands)
        .map(|b| {
            let t = b as f64 / bands.max(2) as f64;
            (2.0 * std::f64::consts::PI * freq * t + phase).sin()
        })
        .collect()
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticScene> {
    if cfg.classes == 0 || cfg.region == 0 || cfg.bands == 0 {
        return Err(Error::Config("synthetic scene needs classes, region, bands > 0".into()));
    }
    let (h, w, b) = (cfg.height, cfg.width, cfg.bands);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let sites = ((h * w) / (cfg.region * cfg.region)).max(cfg.classes as usize);
    let centers: Vec<(f64, f64)> = (0..sites)
        .map(|_| (rng.random_range(0.0..h as f64), rng.random_range(0.0..w as f64)))
        .collect();
    // cyclic assignment guarantees every class appears
    let site_class: Vec<u16> = (0..sites).map(|i| (i % cfg.classes as usize) as u16 + 1).collect();

    let mut full_labels = vec![0u16; h * w];
    for r in 0..h {
        for c in 0..w {
            let (best, _) = centers
                .iter()
                .enumerate()
                .map(|(i, &(cr, cc))| (i, (cr - r as f64).powi(2) + (cc - c as f64).powi(2)))
                .fold((0, f64::INFINITY), |a, x| if x.1 < a.1 { x } else { a });
            full_labels[r * w + c] = site_class[best];
        }
    }

    let sigs: Vec<Vec<f64>> = (0..cfg.classes as usize)
        .map(|k| signature(k, cfg.classes as usize, b))
        .collect();
    let baseline: Vec<f64> = (0..b).map(|k| 1.0 + 0.5 * (k as f64 / b as f64)).collect();
    let noise = Normal::new(0.0, cfg.noise.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let (fr, fc) = (rng.random_range(0.5..1.5), rng.random_range(0.5..1.5));

    let mut values = Vec::with_capacity(h * w * b);
    for r in 0..h {
        for c in 0..w {
            let k = full_labels[r * w + c] as usize - 1;
            let light = 1.0
                + 0.1 * (fr * r as f64 / h as f64 * std::f64::consts::TAU).sin()
                    * (fc * c as f64 / w as f64 * std::f64::consts::TAU).cos();
            for band in 0..b {
                let v = light * (baseline[band] + cfg.separation * sigs[k][band])
                    + noise.sample(&mut rng);
                values.push(v as f32);
            }
        }
    }

    let labels = full_labels
        .iter()
        .map(|&l| if rng.random::<f64>() < cfg.labeled_fraction { l } else { 0 })
        .collect();
    let names = (1..=cfg.classes).map(|k| format!("class {k}")).collect();
    Ok(SyntheticScene {
        cube: HsiCube::new(format!("synthetic-{}", cfg.seed), h, w, b, values)?,
        gt: GroundTruth::new(h, w, cfg.classes, names, labels)?,
        full_labels,
    })
}
