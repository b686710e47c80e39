//! JSON checkpoints: named tensors, dims and a format version.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{Dims, ModelParams, TENSOR_NAMES};
use super::ModelError;
use crate::scalar::Scalar;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct StoredTensor {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Stored {
    format_version: u32,
    dims: Dims,
    tensors: Vec<StoredTensor>,
}

pub fn write_checkpoint<T: Scalar, W: Write>(params: &ModelParams<T>, out: W) -> Result<(), ModelError> {
    let stored = Stored {
        format_version: CHECKPOINT_FORMAT_VERSION,
        dims: params.dims,
        tensors: params
            .named()
            .map(|(name, t)| StoredTensor {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                values: t.values().iter().map(|v| v.as_f64()).collect(),
            })
            .collect(),
    };
    serde_json::to_writer(out, &stored).map_err(|e| ModelError::MalformedCheckpoint(e.to_string()))
}

/// Reads a checkpoint, checking the version, every tensor name and shape,
/// and finiteness.
pub fn read_checkpoint<T: Scalar, R: Read>(input: R) -> Result<ModelParams<T>, ModelError> {
    let value: serde_json::Value =
        serde_json::from_reader(input).map_err(|e| ModelError::MalformedCheckpoint(e.to_string()))?;
    let version = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| ModelError::MalformedCheckpoint("missing format_version".into()))?;
    if version != CHECKPOINT_FORMAT_VERSION as u64 {
        return Err(ModelError::UnsupportedVersion(version.min(u32::MAX as u64) as u32));
    }
    let stored: Stored = serde_json::from_value(value).map_err(|e| ModelError::MalformedCheckpoint(e.to_string()))?;
    stored.dims.validate()?;
    if stored.tensors.len() != TENSOR_NAMES.len() {
        return Err(ModelError::MalformedCheckpoint(format!("expected {} tensors", TENSOR_NAMES.len())));
    }
    let mut p = ModelParams::<T>::zeros(stored.dims);
    for st in stored.tensors {
        let t = p.tensor_mut(&st.name).ok_or(ModelError::UnknownTensor(st.name.clone()))?;
        if t.shape() != st.shape.as_slice() || t.len() != st.values.len() {
            return Err(ModelError::ShapeMismatch(format!("{}: {:?}", st.name, st.shape)));
        }
        for (d, s) in t.values_mut().iter_mut().zip(st.values) {
            *d = T::of(s);
        }
    }
    p.validate()?;
    Ok(p)
}

pub fn save_checkpoint<T: Scalar>(params: &ModelParams<T>, path: &Path) -> Result<(), ModelError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(params, &mut f)?;
    f.flush()?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<ModelParams<T>, ModelError> {
    read_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?))
}
