//! Weight files.
//!
//! Layout: 8-byte magic `QUADLATW`, u64 LE header length, JSON header, u64 LE
//! parameter count, then the parameters as LE `f64` in the model's
//! `params()` order (row-major within each array).

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::model::{BaselineArch, BaselineWeights, ModelMeta, VaeArch, VaeWeights};
use crate::error::{Error, Result};

pub const WEIGHTS_FORMAT_VERSION: &str = "quadlat-weights-v1";
const MAGIC: &[u8; 8] = b"QUADLATW";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Arch {
    Vae(VaeArch),
    Baseline(BaselineArch),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format: String,
    arch: Arch,
    shapes: Vec<[usize; 2]>,
    meta: ModelMeta,
}

fn encode(arch: Arch, params: &[&Array2<f64>], meta: &ModelMeta) -> Result<Vec<u8>> {
    let header = Header {
        format: WEIGHTS_FORMAT_VERSION.into(),
        arch,
        shapes: params.iter().map(|p| [p.nrows(), p.ncols()]).collect(),
        meta: meta.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let count: usize = params.iter().map(|p| p.len()).sum();
    let mut out = Vec::with_capacity(32 + json.len() + 8 * count);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(count as u64).to_le_bytes());
    for p in params {
        for v in p.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn read_u64(bytes: &[u8], at: usize) -> Result<u64> {
    bytes
        .get(at..at + 8)
        .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
        .ok_or_else(|| Error::ShapeMismatch("file ends inside a length field".into()))
}

fn decode(bytes: &[u8]) -> Result<(Header, Vec<f64>)> {
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(Error::Format("not a weight file".into()));
    }
    let hlen = read_u64(bytes, 8)? as usize;
    let body = 16usize
        .checked_add(hlen)
        .filter(|end| *end <= bytes.len())
        .ok_or_else(|| Error::ShapeMismatch(format!("header length {hlen} exceeds file")))?;
    let header: Header = serde_json::from_slice(&bytes[16..body])
        .map_err(|e| Error::ShapeMismatch(format!("header unreadable: {e}")))?;
    if header.format != WEIGHTS_FORMAT_VERSION {
        return Err(Error::FormatVersionMismatch {
            expected: WEIGHTS_FORMAT_VERSION.into(),
            found: header.format,
        });
    }
    let count = read_u64(bytes, body)? as usize;
    let data = &bytes[body + 8..];
    let expected: usize = header.shapes.iter().map(|[r, c]| r * c).sum();
    if count != expected || data.len() != count.saturating_mul(8) {
        return Err(Error::ShapeMismatch(format!(
            "parameter count {count}, header shapes need {expected}, payload holds {}",
            data.len() / 8
        )));
    }
    let values = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((header, values))
}

fn fill(targets: Vec<&mut Array2<f64>>, shapes: &[[usize; 2]], values: &[f64]) -> Result<()> {
    if targets.len() != shapes.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} tensors in file, architecture has {}",
            shapes.len(),
            targets.len()
        )));
    }
    let mut at = 0;
    for (t, [r, c]) in targets.into_iter().zip(shapes) {
        if t.dim() != (*r, *c) {
            return Err(Error::ShapeMismatch(format!("tensor {:?} vs stored {r}x{c}", t.dim())));
        }
        for v in t.iter_mut() {
            *v = values[at];
            at += 1;
        }
    }
    Ok(())
}

pub fn vae_to_bytes(w: &VaeWeights) -> Result<Vec<u8>> {
    encode(Arch::Vae(w.arch), &w.params(), &w.meta)
}

pub fn vae_from_bytes(bytes: &[u8]) -> Result<VaeWeights> {
    let (h, values) = decode(bytes)?;
    let Arch::Vae(arch) = h.arch else {
        return Err(Error::ShapeMismatch("file holds a baseline network, not a VAE".into()));
    };
    let mut w = VaeWeights::init(arch, h.meta, 0);
    fill(w.params_mut(), &h.shapes, &values)?;
    Ok(w)
}

pub fn baseline_to_bytes(w: &BaselineWeights) -> Result<Vec<u8>> {
    encode(Arch::Baseline(w.arch), &w.params(), &w.meta)
}

pub fn baseline_from_bytes(bytes: &[u8]) -> Result<BaselineWeights> {
    let (h, values) = decode(bytes)?;
    let Arch::Baseline(arch) = h.arch else {
        return Err(Error::ShapeMismatch("file holds a VAE, not a baseline network".into()));
    };
    let mut w = BaselineWeights::init(arch, h.meta, 0);
    fill(w.params_mut(), &h.shapes, &values)?;
    Ok(w)
}

pub fn save_vae(path: &Path, w: &VaeWeights) -> Result<()> {
    fs::write(path, vae_to_bytes(w)?)?;
    Ok(())
}

pub fn load_vae(path: &Path) -> Result<VaeWeights> {
    vae_from_bytes(&fs::read(path)?)
}

pub fn save_baseline(path: &Path, w: &BaselineWeights) -> Result<()> {
    fs::write(path, baseline_to_bytes(w)?)?;
    Ok(())
}

pub fn load_baseline(path: &Path) -> Result<BaselineWeights> {
    baseline_from_bytes(&fs::read(path)?)
}
