use super::cube::HsiCube;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// A `w × w × bands` window centred on one pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub values: Tensor<f32>,
    pub center_row: usize,
    pub center_col: usize,
    pub label: Option<u16>,
}

impl Patch {
    pub fn size(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn bands(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn center_spectrum(&self) -> &[f32] {
        let w = self.size();
        let h = (w - 1) / 2;
        let b = self.bands();
        let start = (h * w + h) * b;
        &self.values.data()[start..start + b]
    }

    pub fn with_label(mut self, label: u16) -> Self {
        self.label = Some(label);
        self
    }
}

/// Mirror reflection about the border without repeating the edge pixel:
/// `-1 → 1`, `n → n - 2`.
pub fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

pub fn extract_patch(cube: &HsiCube, row: usize, col: usize, w: usize) -> Result<Patch> {
    if w % 2 == 0 {
        return Err(Error::Data(format!("patch size must be odd, got {w}")));
    }
    if w > cube.height.min(cube.width) {
        return Err(Error::Data(format!(
            "patch size {w} exceeds scene {}x{}",
            cube.height, cube.width
        )));
    }
    if row >= cube.height || col >= cube.width {
        return Err(Error::Data(format!("center ({row},{col}) outside scene")));
    }
    let half = (w / 2) as isize;
    let b = cube.bands;
    let mut data = Vec::with_capacity(w * w * b);
    for dr in -half..=half {
        let r = reflect(row as isize + dr, cube.height);
        for dc in -half..=half {
            let c = reflect(col as isize + dc, cube.width);
            data.extend_from_slice(cube.spectrum(r, c));
        }
    }
    Ok(Patch {
        values: Tensor::new(vec![w, w, b], data)?,
        center_row: row,
        center_col: col,
        label: None,
    })
}

/// Stacks patches into an `N × w × w × B` tensor.
pub fn stack_patches<T: Real>(patches: &[Patch]) -> Result<Tensor<T>> {
    let first = patches
        .first()
        .ok_or_else(|| Error::Data("empty patch batch".into()))?;
    let shape = first.values.shape().to_vec();
    let mut data = Vec::with_capacity(patches.len() * first.values.numel());
    for p in patches {
        if p.values.shape() != shape.as_slice() {
            return Err(Error::Dimension {
                op: "stack_patches",
                lhs: shape,
                rhs: p.values.shape().to_vec(),
            });
        }
        data.extend(p.values.data().iter().map(|&v| T::of(v as f64)));
    }
    Tensor::new([&[patches.len()][..], &shape[..]].concat(), data)
}
