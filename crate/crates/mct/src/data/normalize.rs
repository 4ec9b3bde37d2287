use super::cube::HsiCube;
use crate::error::Result;

/// Per-band z-score over all pixels (population standard deviation).
/// Constant bands map to zeros.
pub fn normalize_bands(cube: &HsiCube) -> Result<HsiCube> {
    let b = cube.bands;
    let n = cube.pixels() as f64;
    let mut mean = vec![0f64; b];
    for px in cube.values.data().chunks(b) {
        for (m, &v) in mean.iter_mut().zip(px) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0f64; b];
    for px in cube.values.data().chunks(b) {
        for ((s, &v), &m) in var.iter_mut().zip(px).zip(&mean) {
            *s += (v as f64 - m).powi(2);
        }
    }
    let std: Vec<f64> = var.iter().map(|s| (s / n).sqrt()).collect();
    let mut out = Vec::with_capacity(cube.values.numel());
    for px in cube.values.data().chunks(b) {
        for k in 0..b {
            let scale = mean[k].abs().max(1.0);
            out.push(if std[k] <= 1e-12 * scale {
                0.0
            } else {
                ((px[k] as f64 - mean[k]) / std[k]) as f32
            });
        }
    }
    HsiCube::new(cube.name.clone(), cube.height, cube.width, b, out)
}

/// Per-band mean and population standard deviation.
pub fn band_stats(cube: &HsiCube) -> Vec<(f64, f64)> {
    let b = cube.bands;
    let n = cube.pixels() as f64;
    (0..b)
        .map(|k| {
            let vals = cube.values.data().iter().skip(k).step_by(b).map(|&v| v as f64);
            let mean = vals.clone().sum::<f64>() / n;
            let var = vals.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            (mean, var.sqrt())
        })
        .collect()
}
