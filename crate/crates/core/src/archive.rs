//! Named-tensor archive files and backbone weight loading.
//!
//! Layout: an 8-byte little-endian header length, a JSON header mapping each
//! tensor name to `{"dtype", "shape", "data_offsets"}` (plus an optional
//! `"__metadata__"` map of strings), then the raw little-endian data. `F32`
//! and `F64` tensors are read; `F64` is written.
//!
//! Backbone archives use the keys `level{y}.conv{k}.weight` (shape
//! `[out, in, 3, 3]`) and `level{y}.conv{k}.bias` (shape `[out]`), with `y`
//! in 1..=5 and `k` counted from 1 within a block.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use lrnet_tensor::{Dims, Tensor};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::encoder::BLOCK_DEPTHS;
use crate::error::{Error, Result};
use crate::model::LrNet;

const METADATA_KEY: &str = "__metadata__";

#[derive(Serialize, Deserialize)]
struct HeaderEntry {
    dtype: String,
    shape: Vec<usize>,
    data_offsets: [usize; 2],
}

/// Decoded archive contents.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Archive {
    pub tensors: BTreeMap<String, Tensor>,
    pub metadata: BTreeMap<String, String>,
}

fn to_dims(name: &str, shape: &[usize]) -> Result<Dims> {
    match *shape {
        [n] => Ok([1, n, 1, 1]),
        [a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(Error::Archive(format!(
            "{name}: unsupported rank-{} shape {shape:?}",
            shape.len()
        ))),
    }
}

pub fn encode_archive(archive: &Archive) -> Result<Vec<u8>> {
    let mut header = serde_json::Map::new();
    let mut data = Vec::new();
    for (name, t) in &archive.tensors {
        let start = data.len();
        for v in t.data() {
            data.extend_from_slice(&v.to_le_bytes());
        }
        let entry = HeaderEntry {
            dtype: "F64".into(),
            shape: t.dims().to_vec(),
            data_offsets: [start, data.len()],
        };
        header.insert(name.clone(), serde_json::to_value(entry)?);
    }
    if !archive.metadata.is_empty() {
        header.insert(METADATA_KEY.into(), serde_json::to_value(&archive.metadata)?);
    }
    let head = serde_json::to_vec(&Value::Object(header))?;
    let mut out = Vec::with_capacity(8 + head.len() + data.len());
    out.extend_from_slice(&(head.len() as u64).to_le_bytes());
    out.extend_from_slice(&head);
    out.extend_from_slice(&data);
    Ok(out)
}

pub fn decode_archive(bytes: &[u8]) -> Result<Archive> {
    let bad = |m: &str| Error::Archive(m.to_owned());
    let len_bytes: [u8; 8] = bytes
        .get(..8)
        .ok_or_else(|| bad("truncated header length"))?
        .try_into()
        .expect("eight bytes");
    let head_len = usize::try_from(u64::from_le_bytes(len_bytes)).map_err(|_| bad("header too large"))?;
    let head = bytes
        .get(8..8usize.saturating_add(head_len))
        .ok_or_else(|| bad("truncated header"))?;
    let data = &bytes[8 + head_len..];
    let header: BTreeMap<String, Value> = serde_json::from_slice(head)?;
    let mut archive = Archive::default();
    for (name, value) in header {
        if name == METADATA_KEY {
            archive.metadata = serde_json::from_value(value)?;
            continue;
        }
        let e: HeaderEntry = serde_json::from_value(value)?;
        let [a, b] = e.data_offsets;
        let raw = data
            .get(a..b)
            .ok_or_else(|| Error::Archive(format!("{name}: data offsets out of range")))?;
        let values: Vec<f64> = match e.dtype.as_str() {
            "F64" => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk")))
                .collect(),
            "F32" => raw
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("chunk"))))
                .collect(),
            other => return Err(Error::Archive(format!("{name}: unsupported dtype {other}"))),
        };
        let dims = to_dims(&name, &e.shape)?;
        if values.len() != dims.iter().product::<usize>() {
            return Err(Error::Archive(format!(
                "{name}: {} values for shape {:?}",
                values.len(),
                e.shape
            )));
        }
        archive.tensors.insert(name, Tensor::from_vec(dims, values));
    }
    Ok(archive)
}

pub fn write_archive(path: &Path, archive: &Archive) -> Result<()> {
    fs::write(path, encode_archive(archive)?).map_err(|e| Error::io(path, e))
}

pub fn read_archive(path: &Path) -> Result<Archive> {
    decode_archive(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// What a backbone load did.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BackboneReport {
    /// Model parameter names that received values.
    pub loaded: Vec<String>,
    /// Archive keys with no counterpart in the schema.
    pub unmatched: Vec<String>,
    /// Schema keys absent from the archive.
    pub missing: Vec<String>,
}

/// Every key of the backbone schema.
pub fn backbone_keys() -> Vec<String> {
    let mut keys = Vec::new();
    for (y, &depth) in BLOCK_DEPTHS.iter().enumerate() {
        for k in 1..=depth {
            for part in ["weight", "bias"] {
                keys.push(format!("level{}.conv{k}.{part}", y + 1));
            }
        }
    }
    keys
}

/// Copies backbone weights into the shared image branches and, when
/// `include_diff` is set, into the difference branch too. Any shape
/// mismatch aborts without modifying the model.
pub fn load_backbone(model: &mut LrNet, archive: &Archive, include_diff: bool) -> Result<BackboneReport> {
    let schema = backbone_keys();
    let mut report = BackboneReport {
        unmatched: archive
            .tensors
            .keys()
            .filter(|k| !schema.contains(k))
            .cloned()
            .collect(),
        ..BackboneReport::default()
    };
    let prefixes: &[&str] = if include_diff { &["siamese", "diff"] } else { &["siamese"] };
    let mut updates = Vec::new();
    for key in &schema {
        let Some(t) = archive.tensors.get(key) else {
            report.missing.push(key.clone());
            continue;
        };
        for prefix in prefixes {
            let name = format!("{prefix}.{key}");
            let id = model
                .params
                .id(&name)
                .ok_or_else(|| Error::Internal(format!("model has no parameter {name}")))?;
            let want = model.params.get(id).dims();
            if t.dims() != want {
                return Err(Error::Archive(format!(
                    "{key}: archive shape {:?}, model expects {want:?}",
                    t.dims()
                )));
            }
            updates.push((id, name, t.clone()));
        }
    }
    for (id, name, t) in updates {
        *model.params.get_mut(id) = t;
        report.loaded.push(name);
    }
    if !report.missing.is_empty() {
        log::warn!("backbone archive lacks {} keys", report.missing.len());
    }
    if !report.unmatched.is_empty() {
        log::warn!("backbone archive has unmatched keys: {:?}", report.unmatched);
    }
    Ok(report)
}
