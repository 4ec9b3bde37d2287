//! Import of headerless raw rasters described by a JSON sidecar.
//!
//! Sidecar example:
//!
//! ```json
//! {"kind": "cube", "height": 512, "width": 217, "bands": 204,
//!  "dtype": "i16", "byte_order": "little", "interleave": "bsq", "name": "salinas"}
//! ```
//!
//! Ground truth uses `"kind": "gt"` with `"classes"` and optional `"class_names"`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cube::{GroundTruth, HsiCube};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RawKind {
    Cube,
    Gt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RawDtype {
    U8,
    U16,
    I16,
    I32,
    F32,
    F64,
}

impl RawDtype {
    fn size(self) -> usize {
        match self {
            RawDtype::U8 => 1,
            RawDtype::U16 | RawDtype::I16 => 2,
            RawDtype::I32 | RawDtype::F32 => 4,
            RawDtype::F64 => 8,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ByteOrder {
    #[default]
    Little,
    Big,
}

/// Band interleave of the raw payload (ENVI naming).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interleave {
    /// (row, col, band)
    #[default]
    Bip,
    /// (row, band, col)
    Bil,
    /// (band, row, col)
    Bsq,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub kind: RawKind,
    pub height: usize,
    pub width: usize,
    #[serde(default = "one")]
    pub bands: usize,
    pub dtype: RawDtype,
    #[serde(default)]
    pub byte_order: ByteOrder,
    #[serde(default)]
    pub interleave: Interleave,
    #[serde(default)]
    pub header_offset: usize,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub classes: Option<u16>,
    #[serde(default)]
    pub class_names: Vec<String>,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq)]
pub enum Converted {
    Cube(HsiCube),
    Gt(GroundTruth),
}

fn decode_values(raw: &[u8], dtype: RawDtype, order: ByteOrder) -> Vec<f64> {
    raw.chunks_exact(dtype.size())
        .map(|c| {
            let mut b = [0u8; 8];
            b[..c.len()].copy_from_slice(c);
            if order == ByteOrder::Big {
                b[..c.len()].reverse();
            }
            match dtype {
                RawDtype::U8 => b[0] as f64,
                RawDtype::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
                RawDtype::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
                RawDtype::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
                RawDtype::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
                RawDtype::F64 => f64::from_le_bytes(b),
            }
        })
        .collect()
}

pub fn convert_bytes(raw: &[u8], sidecar: &Sidecar) -> Result<Converted> {
    let (h, w, b) = (sidecar.height, sidecar.width, sidecar.bands);
    let bands = if sidecar.kind == RawKind::Gt { 1 } else { b };
    let want = h * w * bands * sidecar.dtype.size();
    let body = raw
        .get(sidecar.header_offset..)
        .ok_or_else(|| Error::Data("header offset beyond file".into()))?;
    if body.len() < want {
        return Err(Error::Data(format!("raw payload {} bytes, need {want}", body.len())));
    }
    let vals = decode_values(&body[..want], sidecar.dtype, sidecar.byte_order);

    match sidecar.kind {
        RawKind::Cube => {
            let mut out = vec![0f32; h * w * b];
            for r in 0..h {
                for c in 0..w {
                    for k in 0..b {
                        let src = match sidecar.interleave {
                            Interleave::Bip => (r * w + c) * b + k,
                            Interleave::Bil => (r * b + k) * w + c,
                            Interleave::Bsq => (k * h + r) * w + c,
                        };
                        out[(r * w + c) * b + k] = vals[src] as f32;
                    }
                }
            }
            Ok(Converted::Cube(HsiCube::new(sidecar.name.clone(), h, w, b, out)?))
        }
        RawKind::Gt => {
            let mut labels = Vec::with_capacity(vals.len());
            for v in vals {
                if v < 0.0 || v.fract() != 0.0 || v > u16::MAX as f64 {
                    return Err(Error::Label(format!("invalid label value {v}")));
                }
                labels.push(v as u16);
            }
            let classes = match sidecar.classes {
                Some(c) => c,
                None => labels.iter().copied().max().unwrap_or(0),
            };
            Ok(Converted::Gt(GroundTruth::new(
                h,
                w,
                classes,
                sidecar.class_names.clone(),
                labels,
            )?))
        }
    }
}

/// Reads `raw` + `sidecar` and writes the container to `out`.
pub fn convert_file(
    raw: impl AsRef<Path>,
    sidecar: impl AsRef<Path>,
    out: impl AsRef<Path>,
) -> Result<Converted> {
    let sc: Sidecar = serde_json::from_slice(&fs::read(sidecar)?)
        .map_err(|e| Error::Config(format!("bad sidecar: {e}")))?;
    let converted = convert_bytes(&fs::read(raw)?, &sc)?;
    match &converted {
        Converted::Cube(c) => c.save(out)?,
        Converted::Gt(g) => g.save(out)?,
    }
    Ok(converted)
}
