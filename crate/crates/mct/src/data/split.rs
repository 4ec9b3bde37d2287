use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cube::GroundTruth;
use crate::error::{Error, Result};

/// Stratified train/test partition of the labeled pixels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Requested training samples per class, keyed by class id.
    pub per_class: BTreeMap<u16, usize>,
    pub seed: u64,
    pub train: Vec<(usize, usize)>,
    pub test: Vec<(usize, usize)>,
}

impl SplitSpec {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Data(format!("bad split file: {e}")))
    }

    pub fn check_against(&self, gt: &GroundTruth) -> Result<()> {
        for &(r, c) in self.train.iter().chain(&self.test) {
            if r >= gt.height || c >= gt.width || gt.label(r, c) == 0 {
                return Err(Error::Data(format!(
                    "split position ({r},{c}) is not a labeled pixel"
                )));
            }
        }
        Ok(())
    }
}

/// Draws exactly `per_class` training pixels from every class present in `gt`;
/// every other labeled pixel goes to the test set (row-major order).
pub fn stratified_split(gt: &GroundTruth, per_class: usize, seed: u64) -> Result<SplitSpec> {
    let mut by_class: Vec<Vec<(usize, usize)>> = vec![Vec::new(); gt.classes as usize];
    for r in 0..gt.height {
        for c in 0..gt.width {
            let l = gt.label(r, c);
            if l > 0 {
                by_class[l as usize - 1].push((r, c));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = BTreeMap::new();
    let mut train = Vec::new();
    for (k, pixels) in by_class.iter_mut().enumerate() {
        if pixels.is_empty() {
            continue;
        }
        let class = k as u16 + 1;
        if pixels.len() < per_class {
            return Err(Error::Data(format!(
                "class {class} has {} labeled pixels, {per_class} requested",
                pixels.len()
            )));
        }
        let (chosen, _) = pixels.partial_shuffle(&mut rng, per_class);
        train.extend_from_slice(chosen);
        counts.insert(class, per_class);
    }
    let mut taken = vec![false; gt.height * gt.width];
    for &(r, c) in &train {
        taken[r * gt.width + c] = true;
    }
    let test = (0..gt.height)
        .flat_map(|r| (0..gt.width).map(move |c| (r, c)))
        .filter(|&(r, c)| gt.label(r, c) > 0 && !taken[r * gt.width + c])
        .collect();
    Ok(SplitSpec {
        per_class: counts,
        seed,
        train,
        test,
    })
}
