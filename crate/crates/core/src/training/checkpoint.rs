//! Checkpoint files.
//!
//! Layout: the 8-byte magic `NSGNCKPT`, a little-endian `u32` format
//! version, a little-endian `u64` manifest length, the JSON manifest, then
//! every parameter as raw little-endian `f64` values in manifest order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamnosys::Vocabulary;
use crate::model::{ModelConfig, SignModel};
use crate::nn::Parameterized;
use crate::numerics::seeded_rng;
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"NSGNCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the data section, in values.
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub config: ModelConfig,
    pub epoch: usize,
    pub metric: Option<f64>,
    /// Vocabulary codepoints as hex, in id order.
    pub vocabulary: Vec<String>,
    pub params: Vec<ParamEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint<T: Scalar> {
    pub model: SignModel<T>,
    pub vocabulary: Vocabulary,
    pub epoch: usize,
    pub metric: Option<f64>,
}

fn err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn to_bytes<T: Scalar>(model: &SignModel<T>, vocabulary: &Vocabulary, epoch: usize, metric: Option<f64>) -> Result<Vec<u8>> {
    if vocabulary.embedding_size() != model.config.vocab_size {
        return Err(err(format!(
            "vocabulary needs {} embedding rows, model has {}",
            vocabulary.embedding_size(),
            model.config.vocab_size
        )));
    }
    let named = model.named_params();
    let mut entries = Vec::with_capacity(named.len());
    let mut offset = 0;
    for (name, t) in &named {
        entries.push(ParamEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
            len: t.numel(),
        });
        offset += t.numel();
    }
    let manifest = CheckpointManifest {
        format_version: FORMAT_VERSION,
        config: model.config.clone(),
        epoch,
        metric,
        vocabulary: vocabulary.symbols().iter().map(|&c| format!("{:04X}", c as u32)).collect(),
        params: entries,
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(20 + json.len() + offset * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in &named {
        for v in t.data().iter() {
            out.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read_manifest(bytes: &[u8]) -> Result<(CheckpointManifest, &[u8])> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(err("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(err(format!("unsupported checkpoint version {version}")));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let rest = &bytes[20..];
    if rest.len() < len {
        return Err(err("truncated manifest"));
    }
    let manifest: CheckpointManifest = serde_json::from_slice(&rest[..len])?;
    Ok((manifest, &rest[len..]))
}

pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let (manifest, data) = read_manifest(bytes)?;
    let symbols = manifest
        .vocabulary
        .iter()
        .map(|h| {
            u32::from_str_radix(h, 16)
                .ok()
                .and_then(char::from_u32)
                .ok_or_else(|| err(format!("bad vocabulary entry {h:?}")))
        })
        .collect::<Result<Vec<char>>>()?;
    let vocabulary = Vocabulary::from_symbols(symbols)?;

    let model = SignModel::<T>::new(manifest.config.clone(), &mut seeded_rng(0))?;
    let named = model.named_params();
    if named.len() != manifest.params.len() {
        return Err(err(format!(
            "checkpoint stores {} tensors, model has {}",
            manifest.params.len(),
            named.len()
        )));
    }
    let total: usize = manifest.params.iter().map(|p| p.len).sum();
    if data.len() != total * 8 {
        return Err(err(format!("data section holds {} bytes, expected {}", data.len(), total * 8)));
    }
    for ((name, t), entry) in named.iter().zip(&manifest.params) {
        if *name != entry.name || t.shape() != entry.shape.as_slice() || entry.len != t.numel() {
            return Err(err(format!(
                "tensor {} {:?} does not match model tensor {name} {:?}",
                entry.name,
                entry.shape,
                t.shape()
            )));
        }
        let end = entry.offset + entry.len;
        if end > total {
            return Err(err(format!("tensor {} runs past the data section", entry.name)));
        }
        let values = data[entry.offset * 8..end * 8]
            .chunks_exact(8)
            .map(|b| T::lit(f64::from_le_bytes(b.try_into().expect("8 bytes"))))
            .collect();
        t.set_data(values)?;
    }
    Ok(Checkpoint {
        model,
        vocabulary,
        epoch: manifest.epoch,
        metric: manifest.metric,
    })
}

pub fn save<T: Scalar>(
    path: &Path,
    model: &SignModel<T>,
    vocabulary: &Vocabulary,
    epoch: usize,
    metric: Option<f64>,
) -> Result<()> {
    std::fs::write(path, to_bytes(model, vocabulary, epoch, metric)?)?;
    Ok(())
}

pub fn load<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = std::fs::read(path)?;
    from_bytes(&bytes).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}
