//! `MCTW` parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"MCTW" | version: u32 | manifest_len: u32 | manifest JSON
//! value buffers, one per manifest entry, in manifest order
//! [optional] b"ADAM" | opt_len: u32 | optimizer JSON | (adam_m, adam_v) per param entry
//! ```
//!
//! The manifest lists `(name, kind, dtype, shape)` for every tensor plus a
//! free-form string tag map (e.g. `"phase": "pretrain"`).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::params::{ParamStore, ParamTensor};
use crate::tensor::{Real, Tensor};

pub const MAGIC: &[u8; 4] = b"MCTW";
pub const OPT_MAGIC: &[u8; 4] = b"ADAM";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryKind {
    Param,
    Buffer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub kind: EntryKind,
    pub dtype: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tags: BTreeMap<String, String>,
    pub entries: Vec<ManifestEntry>,
    pub optimizer: bool,
}

#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub tags: BTreeMap<String, String>,
    pub store: ParamStore<T>,
    pub optimizer: Option<Adam>,
}

pub fn encode<T: Real>(
    store: &ParamStore<T>,
    tags: &BTreeMap<String, String>,
    optimizer: Option<&Adam>,
) -> Result<Vec<u8>> {
    let mut entries = Vec::new();
    for p in store.params() {
        entries.push(ManifestEntry {
            name: p.name.clone(),
            kind: EntryKind::Param,
            dtype: T::DTYPE.into(),
            shape: p.value.shape().to_vec(),
        });
    }
    for b in store.buffers() {
        entries.push(ManifestEntry {
            name: b.name.clone(),
            kind: EntryKind::Buffer,
            dtype: T::DTYPE.into(),
            shape: b.value.shape().to_vec(),
        });
    }
    let manifest = Manifest {
        tags: tags.clone(),
        entries,
        optimizer: optimizer.is_some(),
    };
    let json = serde_json::to_vec(&manifest)?;

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    let write = |t: &Tensor<T>, out: &mut Vec<u8>| t.data().iter().for_each(|v| v.write_le(out));
    for p in store.params() {
        write(&p.value, &mut out);
    }
    for b in store.buffers() {
        write(&b.value, &mut out);
    }
    if let Some(opt) = optimizer {
        let json = serde_json::to_vec(opt)?;
        out.extend_from_slice(OPT_MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for p in store.params() {
            write(&p.adam_m, &mut out);
            write(&p.adam_v, &mut out);
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "truncated: need {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn tensor<T: Real>(&mut self, entry: &ManifestEntry) -> Result<Tensor<T>> {
        let numel: usize = entry.shape.iter().product();
        let data = match entry.dtype.as_str() {
            "f32" => self.values::<f32, T>(numel)?,
            "f64" => self.values::<f64, T>(numel)?,
            other => return Err(Error::Checkpoint(format!("unsupported dtype {other}"))),
        };
        Tensor::new(entry.shape.clone(), data)
    }

    fn values<S: Real, T: Real>(&mut self, numel: usize) -> Result<Vec<T>> {
        let raw = self.take(numel * S::BYTES)?;
        Ok(raw
            .chunks_exact(S::BYTES)
            .map(|c| T::of(S::read_le(c).as_f64()))
            .collect())
    }
}

pub fn decode<T: Real>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic, expected MCTW".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let len = r.u32()? as usize;
    let manifest: Manifest = serde_json::from_slice(r.take(len)?)?;

    let mut store = ParamStore::new();
    for e in &manifest.entries {
        let t = r.tensor::<T>(e)?;
        match e.kind {
            EntryKind::Param => store.add(e.name.clone(), t)?,
            EntryKind::Buffer => {
                store.add_buffer(e.name.clone(), t)?;
                continue;
            }
        };
    }
    let optimizer = if manifest.optimizer {
        if r.take(4)? != OPT_MAGIC {
            return Err(Error::Checkpoint("missing optimizer section".into()));
        }
        let len = r.u32()? as usize;
        let opt: Adam = serde_json::from_slice(r.take(len)?)?;
        let params: Vec<&ManifestEntry> = manifest
            .entries
            .iter()
            .filter(|e| e.kind == EntryKind::Param)
            .collect();
        for (i, e) in params.iter().enumerate() {
            let m = r.tensor::<T>(e)?;
            let v = r.tensor::<T>(e)?;
            let p = &mut store.params_mut()[i];
            p.adam_m = m;
            p.adam_v = v;
        }
        Some(opt)
    } else {
        None
    };
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after payload",
            bytes.len() - r.pos
        )));
    }
    Ok(Checkpoint {
        tags: manifest.tags,
        store,
        optimizer,
    })
}

pub fn save<T: Real>(
    path: impl AsRef<Path>,
    store: &ParamStore<T>,
    tags: &BTreeMap<String, String>,
    optimizer: Option<&Adam>,
) -> Result<()> {
    fs::write(path, encode(store, tags, optimizer)?)?;
    Ok(())
}

pub fn load<T: Real>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    decode(&fs::read(path)?)
}

/// Hex SHA-256 of a file, recorded when a run initialises from a checkpoint.
pub fn file_sha256(path: impl AsRef<Path>) -> Result<String> {
    let digest = Sha256::digest(fs::read(path)?);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Copies every tensor of `source` into the same-named tensor of `target`,
/// including optimizer moments. Name sets and shapes must match exactly.
pub fn restore<T: Real>(target: &mut ParamStore<T>, source: &ParamStore<T>) -> Result<()> {
    let names = |s: &ParamStore<T>| -> Vec<String> {
        let mut v: Vec<String> = s
            .names()
            .map(str::to_string)
            .chain(s.buffers().iter().map(|b| b.name.clone()))
            .collect();
        v.sort();
        v
    };
    let (want, have) = (names(target), names(source));
    if want != have {
        return Err(Error::Transfer {
            missing: want.iter().filter(|n| !have.contains(n)).cloned().collect(),
            unexpected: have.iter().filter(|n| !want.contains(n)).cloned().collect(),
        });
    }
    let mismatch = |name: &str, a: &Tensor<T>, b: &Tensor<T>| {
        Error::Checkpoint(format!("{name}: shape {:?} vs {:?}", a.shape(), b.shape()))
    };
    for p in source.params() {
        let dst = target.get_mut(&p.name).expect("name sets match");
        if dst.value.shape() != p.value.shape() {
            return Err(mismatch(&p.name, &dst.value, &p.value));
        }
        dst.value = p.value.clone();
        dst.adam_m = p.adam_m.clone();
        dst.adam_v = p.adam_v.clone();
    }
    for b in source.buffers() {
        let id = target.buffer_id(&b.name).expect("name sets match");
        let dst = target.buffer_mut(id);
        if dst.shape() != b.value.shape() {
            return Err(mismatch(&b.name, dst, &b.value));
        }
        *dst = b.value.clone();
    }
    Ok(())
}

impl<T: Real> Checkpoint<T> {
    pub fn param(&self, name: &str) -> Option<&ParamTensor<T>> {
        self.store.get(name)
    }
}
