//! Multiscale convolutional embedding.
//!
//! Two branches turn an `N × w × w × B` patch batch into `(w−4)²` tokens:
//!
//! * the spectral-partition branch splits the bands into `G` contiguous equal
//!   subbands and runs two rounds of grouped valid conv3d → batchnorm → ReLU
//!   (one conv group per subband), then flattens each spatial site and
//!   projects it to `d_model`;
//! * the independent branch crops the patch to the same central
//!   `(w−4) × (w−4)` window and embeds every pixel spectrum with one shared
//!   linear layer.
//!
//! Tokens are the elementwise sum of both branches, flattened row-major. No
//! positional encoding is added.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::data::Patch;
use crate::error::{Error, Result};
use crate::nn::{BatchNorm3d, Conv3d, Linear};
use crate::params::ParamStore;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MceConfig {
    pub groups: usize,
    pub spectral_kernel: usize,
    pub spectral_stride: usize,
    pub c1: usize,
    pub c2: usize,
    pub d_model: usize,
    pub patch: usize,
    pub bands: usize,
    pub iie_enabled: bool,
}

impl Default for MceConfig {
    fn default() -> Self {
        MceConfig {
            groups: 4,
            spectral_kernel: 7,
            spectral_stride: 2,
            c1: 8,
            c2: 16,
            d_model: 64,
            patch: 9,
            bands: 204,
            iie_enabled: true,
        }
    }
}

/// Valid-convolution output length.
pub fn conv_len(len: usize, kernel: usize, stride: usize) -> Option<usize> {
    (len >= kernel && stride > 0).then(|| (len - kernel) / stride + 1)
}

impl MceConfig {
    /// Spectral lengths per group: input, after conv 1, after conv 2.
    pub fn spectral_lengths(&self) -> Result<[usize; 3]> {
        if self.groups == 0 || self.bands % self.groups != 0 {
            return Err(Error::Group(format!(
                "{} bands not divisible into {} groups",
                self.bands, self.groups
            )));
        }
        let l0 = self.bands / self.groups;
        let l1 = conv_len(l0, self.spectral_kernel, self.spectral_stride);
        let l2 = l1.and_then(|l| conv_len(l, self.spectral_kernel, self.spectral_stride));
        match (l1, l2) {
            (Some(l1), Some(l2)) => Ok([l0, l1, l2]),
            _ => Err(Error::shape(
                "mce",
                format!(
                    "subband length {l0} too short for two convs with kernel {} stride {}",
                    self.spectral_kernel, self.spectral_stride
                ),
            )),
        }
    }

    /// Side of the token grid, `w − 4`.
    pub fn grid(&self) -> usize {
        self.patch.saturating_sub(4)
    }

    pub fn tokens(&self) -> usize {
        self.grid() * self.grid()
    }

    /// Per-site feature length of the conv branch before projection.
    pub fn site_features(&self) -> Result<usize> {
        Ok(self.groups * self.c2 * self.spectral_lengths()?[2])
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch % 2 == 0 || self.patch < 5 {
            return Err(Error::Config(format!(
                "patch size must be odd and at least 5, got {}",
                self.patch
            )));
        }
        if self.c1 == 0 || self.c2 == 0 || self.d_model == 0 {
            return Err(Error::Config("channel widths must be positive".into()));
        }
        self.spectral_lengths().map(|_| ())
    }
}

/// Embedded token sequence: `tokens` is `N × L × d_model`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub tokens: Var,
    pub grid: (usize, usize),
    pub center_index: usize,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Center position of a row-major `h × w` grid.
pub fn center_index(grid: (usize, usize)) -> usize {
    (grid.0 / 2) * grid.1 + grid.1 / 2
}

/// Splits a patch's bands into `groups` contiguous equal slabs.
pub fn spectral_partition(patch: &Patch, groups: usize) -> Result<Vec<Tensor<f32>>> {
    let b = patch.bands();
    if groups == 0 || b % groups != 0 {
        return Err(Error::Group(format!("{b} bands not divisible into {groups} groups")));
    }
    let len = b / groups;
    (0..groups)
        .map(|g| patch.values.narrow(2, g * len, len))
        .collect()
}

#[derive(Clone, Debug)]
pub struct Mce {
    pub cfg: MceConfig,
    pub conv1: Conv3d,
    pub bn1: BatchNorm3d,
    pub conv2: Conv3d,
    pub bn2: BatchNorm3d,
    pub proj: Linear,
    pub iie: Option<Linear>,
}

impl Mce {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        cfg: &MceConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let (g, ks, ss) = (cfg.groups, cfg.spectral_kernel, cfg.spectral_stride);
        let p = |s: &str| format!("{prefix}.{s}");
        let conv1 = Conv3d::new(store, &p("spce.conv1"), g, g * cfg.c1, [ks, 3, 3], [ss, 1, 1], g, rng)?;
        let bn1 = BatchNorm3d::new(store, &p("spce.bn1"), g * cfg.c1)?;
        let conv2 = Conv3d::new(
            store,
            &p("spce.conv2"),
            g * cfg.c1,
            g * cfg.c2,
            [ks, 3, 3],
            [ss, 1, 1],
            g,
            rng,
        )?;
        let bn2 = BatchNorm3d::new(store, &p("spce.bn2"), g * cfg.c2)?;
        let proj = Linear::new(store, &p("spce.proj"), cfg.site_features()?, cfg.d_model, true, rng)?;
        let iie = if cfg.iie_enabled {
            Some(Linear::new(store, &p("iie"), cfg.bands, cfg.d_model, true, rng)?)
        } else {
            None
        };
        Ok(Mce {
            cfg: cfg.clone(),
            conv1,
            bn1,
            conv2,
            bn2,
            proj,
            iie,
        })
    }

    fn check_input<T: Real>(&self, tape: &Tape<T>, x: Var) -> Result<usize> {
        let s = tape.shape(x);
        let c = &self.cfg;
        if s.len() != 4 || s[1] != c.patch || s[2] != c.patch || s[3] != c.bands {
            return Err(Error::Dimension {
                op: "mce",
                lhs: vec![0, c.patch, c.patch, c.bands],
                rhs: s.to_vec(),
            });
        }
        Ok(s[0])
    }

    /// Conv-branch site features before projection: `N × L × (G·c2·ℓ2)`.
    pub fn spce_features<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let n = self.check_input(tape, x)?;
        let c = &self.cfg;
        let [l0, _, _] = c.spectral_lengths()?;
        let w = c.patch;
        let h = tape.permute(x, &[0, 3, 1, 2])?;
        let h = tape.reshape(h, &[n, c.groups, l0, w, w])?;
        let h = self.conv1.forward(tape, store, h)?;
        let h = self.bn1.forward(tape, store, h)?;
        let h = tape.relu(h)?;
        let h = self.conv2.forward(tape, store, h)?;
        let h = self.bn2.forward(tape, store, h)?;
        let h = tape.relu(h)?;
        let h = tape.permute(h, &[0, 3, 4, 1, 2])?;
        tape.reshape(h, &[n, c.tokens(), c.site_features()?])
    }

    /// Conv branch with fusion projection: `N × L × d_model`.
    pub fn spce_forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let f = self.spce_features(tape, store, x)?;
        self.proj.forward(tape, store, f)
    }

    /// Per-pixel embedding of the central `(w−4)²` window: `N × L × d_model`.
    /// Errors if the branch is disabled.
    pub fn iie_forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let iie = self
            .iie
            .as_ref()
            .ok_or_else(|| Error::Config("independent embedding branch is disabled".into()))?;
        let n = self.check_input(tape, x)?;
        let g = self.cfg.grid();
        let h = tape.narrow(x, 1, 2, g)?;
        let h = tape.narrow(h, 2, 2, g)?;
        let h = tape.reshape(h, &[n, g * g, self.cfg.bands])?;
        iie.forward(tape, store, h)
    }

    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<TokenSequence> {
        let spce = self.spce_forward(tape, store, x)?;
        let tokens = if self.iie.is_some() {
            let iie = self.iie_forward(tape, store, x)?;
            tape.add(spce, iie)?
        } else {
            spce
        };
        let grid = (self.cfg.grid(), self.cfg.grid());
        Ok(TokenSequence {
            tokens,
            grid,
            center_index: center_index(grid),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_arithmetic_for_204_bands() {
        let cfg = MceConfig::default();
        assert_eq!(cfg.spectral_lengths().unwrap(), [51, 23, 9]);
        assert_eq!(cfg.site_features().unwrap(), 4 * 16 * 9);
        assert_eq!(cfg.tokens(), 25);
        assert_eq!(center_index((5, 5)), 12);
    }

    #[test]
    fn indivisible_bands_rejected() {
        let cfg = MceConfig {
            bands: 203,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Group(_))));
    }

    #[test]
    fn too_short_subbands_rejected() {
        let cfg = MceConfig {
            bands: 16,
            groups: 4,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
