//! Confusion matrix, OA / AA / Cohen's κ, report serialisation and
//! classification-map rendering.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::GroundTruth;
use crate::error::{Error, Result};

/// `C × C` counts; rows are ground truth, columns are predictions. Labels are 1-based.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    /// Builds a matrix from explicit rows.
    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let c = rows.len();
        if rows.iter().any(|r| r.len() != c) {
            return Err(Error::Metrics("confusion rows must form a square matrix".into()));
        }
        Ok(ConfusionMatrix {
            classes: c,
            counts: rows.concat(),
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[(truth - 1) * self.classes + pred - 1]
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.classes).map(<[u64]>::to_vec).collect()
    }

    fn check(&self, label: u16, role: &str) -> Result<usize> {
        if label == 0 || label as usize > self.classes {
            return Err(Error::Label(format!(
                "{role} label {label} outside 1..={}",
                self.classes
            )));
        }
        Ok(label as usize - 1)
    }

    pub fn accumulate(&mut self, truth: &[u16], pred: &[u16]) -> Result<()> {
        if truth.len() != pred.len() {
            return Err(Error::Metrics(format!(
                "{} labels but {} predictions",
                truth.len(),
                pred.len()
            )));
        }
        for (&t, &p) in truth.iter().zip(pred) {
            let (t, p) = (self.check(t, "truth")?, self.check(p, "predicted")?);
            self.counts[t * self.classes + p] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::Metrics("cannot merge matrices of different size".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn diag(&self, k: usize) -> u64 {
        self.counts[k * self.classes + k]
    }

    fn row_sum(&self, k: usize) -> u64 {
        self.counts[k * self.classes..(k + 1) * self.classes].iter().sum()
    }

    fn col_sum(&self, k: usize) -> u64 {
        (0..self.classes).map(|r| self.counts[r * self.classes + k]).sum()
    }

    pub fn overall_accuracy(&self) -> Result<f64> {
        let n = self.total();
        if n == 0 {
            return Err(Error::Metrics("empty confusion matrix".into()));
        }
        Ok((0..self.classes).map(|k| self.diag(k)).sum::<u64>() as f64 / n as f64)
    }

    /// Per-class recall; `None` for classes with no ground-truth samples.
    pub fn per_class_accuracy(&self) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|k| {
                let s = self.row_sum(k);
                (s > 0).then(|| self.diag(k) as f64 / s as f64)
            })
            .collect()
    }

    /// Mean recall over classes with support; the excluded classes (1-based) are returned too.
    pub fn average_accuracy(&self) -> Result<(f64, Vec<usize>)> {
        let per = self.per_class_accuracy();
        let present: Vec<f64> = per.iter().flatten().copied().collect();
        if present.is_empty() {
            return Err(Error::Metrics("empty confusion matrix".into()));
        }
        let excluded = per
            .iter()
            .enumerate()
            .filter(|(_, a)| a.is_none())
            .map(|(k, _)| k + 1)
            .collect();
        Ok((present.iter().sum::<f64>() / present.len() as f64, excluded))
    }

    /// Cohen's κ. When chance agreement is exactly 1 the statistic is
    /// undefined; this returns `(0.0, true)` in that case.
    pub fn kappa(&self) -> Result<(f64, bool)> {
        let n = self.total() as f64;
        let po = self.overall_accuracy()?;
        let pe: f64 = (0..self.classes)
            .map(|k| self.row_sum(k) as f64 * self.col_sum(k) as f64)
            .sum::<f64>()
            / (n * n);
        if pe >= 1.0 {
            return Ok((0.0, true));
        }
        Ok(((po - pe) / (1.0 - pe), false))
    }

    pub fn report(&self) -> Result<MetricsReport> {
        let (aa, excluded) = self.average_accuracy()?;
        let (kappa, kappa_undefined) = self.kappa()?;
        Ok(MetricsReport {
            oa: self.overall_accuracy()?,
            aa,
            kappa,
            per_class: self.per_class_accuracy(),
            excluded_classes: excluded,
            kappa_undefined,
            samples: self.total(),
            confusion: self.rows(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
    /// Recall per class (1-based order); `null` for classes without test samples.
    pub per_class: Vec<Option<f64>>,
    pub excluded_classes: Vec<usize>,
    pub kappa_undefined: bool,
    pub samples: u64,
    pub confusion: Vec<Vec<u64>>,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per class followed by `OA`, `AA` and `kappa` rows.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["metric", "value"])?;
        for (k, a) in self.per_class.iter().enumerate() {
            let v = a.map(|a| format!("{a:.6}")).unwrap_or_default();
            w.write_record([format!("class_{}", k + 1), v])?;
        }
        w.write_record(["OA".to_string(), format!("{:.6}", self.oa)])?;
        w.write_record(["AA".to_string(), format!("{:.6}", self.aa)])?;
        w.write_record(["kappa".to_string(), format!("{:.6}", self.kappa)])?;
        let bytes = w.into_inner().map_err(|e| Error::Metrics(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapMode {
    /// Only pixels with a ground-truth label are colored.
    Labeled,
    /// Every pixel is colored by its prediction.
    Full,
}

/// Distinct, deterministic color for class `k ≥ 1`; class 0 is black.
pub fn class_color(k: u16) -> [u8; 3] {
    const BASE: [[u8; 3]; 20] = [
        [230, 25, 75],
        [60, 180, 75],
        [255, 225, 25],
        [0, 130, 200],
        [245, 130, 48],
        [145, 30, 180],
        [70, 240, 240],
        [240, 50, 230],
        [210, 245, 60],
        [250, 190, 212],
        [0, 128, 128],
        [220, 190, 255],
        [170, 110, 40],
        [255, 250, 200],
        [128, 0, 0],
        [170, 255, 195],
        [128, 128, 0],
        [255, 215, 180],
        [0, 0, 128],
        [128, 128, 128],
    ];
    if k == 0 {
        return [0, 0, 0];
    }
    let i = (k as usize - 1) % BASE.len();
    let round = ((k as usize - 1) / BASE.len()) as u8;
    BASE[i].map(|c| c.wrapping_add(round.wrapping_mul(37)).max(1))
}

/// Renders a row-major prediction map as binary PPM (P6). In `Labeled` mode
/// pixels unlabeled in `gt` are black.
pub fn render_map(
    predictions: &[u16],
    height: usize,
    width: usize,
    gt: Option<&GroundTruth>,
    mode: MapMode,
) -> Result<Vec<u8>> {
    if predictions.len() != height * width {
        return Err(Error::Metrics(format!(
            "{} predictions for a {height}×{width} map",
            predictions.len()
        )));
    }
    if mode == MapMode::Labeled {
        match gt {
            Some(g) if g.height == height && g.width == width => {}
            _ => {
                return Err(Error::Metrics(
                    "labeled map mode needs a ground truth of the same size".into(),
                ))
            }
        }
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    for (i, &p) in predictions.iter().enumerate() {
        let show = match (mode, gt) {
            (MapMode::Labeled, Some(g)) => g.labels[i] != 0,
            _ => true,
        };
        out.extend_from_slice(&class_color(if show { p } else { 0 }));
    }
    Ok(out)
}

pub fn write_map(
    path: impl AsRef<Path>,
    predictions: &[u16],
    height: usize,
    width: usize,
    gt: Option<&GroundTruth>,
    mode: MapMode,
) -> Result<()> {
    let bytes = render_map(predictions, height, width, gt, mode)?;
    std::fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}
