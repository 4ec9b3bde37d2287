//! Hyperspectral cube and ground-truth containers (`.hsic` / `.hsig`).
//!
//! Both formats are a single-line JSON header terminated by `\n` followed by a
//! little-endian row-major payload: `f32` values in (row, col, band) order for
//! cubes, `u16` labels in (row, col) order for ground truth.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CUBE_MAGIC: &str = "HSIC";
pub const GT_MAGIC: &str = "HSIG";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct HsiCube {
    pub name: String,
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    /// `height × width × bands`
    pub values: Tensor<f32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CubeHeader {
    magic: String,
    version: u32,
    height: usize,
    width: usize,
    bands: usize,
    dtype: String,
    name: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct GtHeader {
    magic: String,
    version: u32,
    height: usize,
    width: usize,
    dtype: String,
    classes: u16,
    class_names: Vec<String>,
}

impl HsiCube {
    pub fn new(
        name: impl Into<String>,
        height: usize,
        width: usize,
        bands: usize,
        values: Vec<f32>,
    ) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(Error::Data(format!(
                "cube extents must be positive, got {height}x{width}x{bands}"
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite cube value at flat index {i}")));
        }
        let values = Tensor::new(vec![height, width, bands], values)
            .map_err(|e| Error::Data(e.to_string()))?;
        Ok(HsiCube {
            name: name.into(),
            height,
            width,
            bands,
            values,
        })
    }

    pub fn spectrum(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.bands;
        &self.values.data()[start..start + self.bands]
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// Keeps only the first `bands` bands.
    pub fn crop_bands(&self, bands: usize) -> Result<Self> {
        if bands == 0 || bands > self.bands {
            return Err(Error::Data(format!("cannot crop {} bands to {bands}", self.bands)));
        }
        let mut data = Vec::with_capacity(self.pixels() * bands);
        for px in self.values.data().chunks(self.bands) {
            data.extend_from_slice(&px[..bands]);
        }
        HsiCube::new(self.name.clone(), self.height, self.width, bands, data)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = CubeHeader {
            magic: CUBE_MAGIC.into(),
            version: FORMAT_VERSION,
            height: self.height,
            width: self.width,
            bands: self.bands,
            dtype: "f32".into(),
            name: self.name.clone(),
        };
        let mut out = serde_json::to_vec(&header)?;
        out.push(b'\n');
        out.reserve(self.values.numel() * 4);
        for v in self.values.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, payload) = split_header(bytes)?;
        let h: CubeHeader = serde_json::from_slice(header)
            .map_err(|e| Error::Data(format!("bad cube header: {e}")))?;
        if h.magic != CUBE_MAGIC {
            return Err(Error::Data(format!("bad magic {:?}, expected {CUBE_MAGIC}", h.magic)));
        }
        check_version(h.version)?;
        if h.dtype != "f32" {
            return Err(Error::Data(format!("unsupported cube dtype {}", h.dtype)));
        }
        let n = h.height * h.width * h.bands;
        check_payload(payload.len(), n * 4)?;
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        HsiCube::new(h.name, h.height, h.width, h.bands, values)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Per-pixel class labels; 0 marks unlabeled pixels, `1..=classes` are classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroundTruth {
    pub height: usize,
    pub width: usize,
    pub classes: u16,
    pub class_names: Vec<String>,
    pub labels: Vec<u16>,
}

impl GroundTruth {
    pub fn new(
        height: usize,
        width: usize,
        classes: u16,
        class_names: Vec<String>,
        labels: Vec<u16>,
    ) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::Data(format!(
                "ground truth {height}x{width} needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > classes) {
            return Err(Error::Label(format!("label {bad} exceeds class count {classes}")));
        }
        if !class_names.is_empty() && class_names.len() != classes as usize {
            return Err(Error::Data(format!(
                "{} class names for {classes} classes",
                class_names.len()
            )));
        }
        Ok(GroundTruth {
            height,
            width,
            classes,
            class_names,
            labels,
        })
    }

    pub fn label(&self, row: usize, col: usize) -> u16 {
        self.labels[row * self.width + col]
    }

    /// Pixel counts for classes `1..=classes` (index 0 is class 1).
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes as usize];
        for &l in &self.labels {
            if l > 0 {
                counts[l as usize - 1] += 1;
            }
        }
        counts
    }

    pub fn labeled(&self) -> usize {
        self.labels.iter().filter(|&&l| l > 0).count()
    }

    pub fn check_matches(&self, cube: &HsiCube) -> Result<()> {
        if self.height != cube.height || self.width != cube.width {
            return Err(Error::Data(format!(
                "ground truth {}x{} does not match cube {}x{}",
                self.height, self.width, cube.height, cube.width
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = GtHeader {
            magic: GT_MAGIC.into(),
            version: FORMAT_VERSION,
            height: self.height,
            width: self.width,
            dtype: "u16".into(),
            classes: self.classes,
            class_names: self.class_names.clone(),
        };
        let mut out = serde_json::to_vec(&header)?;
        out.push(b'\n');
        for l in &self.labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, payload) = split_header(bytes)?;
        let h: GtHeader = serde_json::from_slice(header)
            .map_err(|e| Error::Data(format!("bad ground-truth header: {e}")))?;
        if h.magic != GT_MAGIC {
            return Err(Error::Data(format!("bad magic {:?}, expected {GT_MAGIC}", h.magic)));
        }
        check_version(h.version)?;
        if h.dtype != "u16" {
            return Err(Error::Data(format!("unsupported ground-truth dtype {}", h.dtype)));
        }
        check_payload(payload.len(), h.height * h.width * 2)?;
        let labels = payload
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect();
        GroundTruth::new(h.height, h.width, h.classes, h.class_names, labels)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn split_header(bytes: &[u8]) -> Result<(&[u8], &[u8])> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Data("missing header line".into()))?;
    Ok((&bytes[..nl], &bytes[nl + 1..]))
}

fn check_version(v: u32) -> Result<()> {
    if v != FORMAT_VERSION {
        return Err(Error::Data(format!("unsupported format version {v}")));
    }
    Ok(())
}

fn check_payload(got: usize, want: usize) -> Result<()> {
    if got < want {
        return Err(Error::Data(format!("truncated payload: {got} of {want} bytes")));
    }
    if got > want {
        return Err(Error::Data(format!("{} unexpected trailing bytes", got - want)));
    }
    Ok(())
}
