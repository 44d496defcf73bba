//! Checkpoint blobs: tensors concatenated as little-endian `f32` in one
//! binary file, described by a JSON manifest of names, shapes and offsets.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

#[derive(Serialize, Deserialize)]
struct Manifest {
    tensors: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    /// Offset into the blob, in elements.
    offset: usize,
}

pub fn write_blob<'a>(
    blob_path: &Path,
    manifest_path: &Path,
    tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
) -> Result<()> {
    let mut bytes = Vec::new();
    let mut entries = Vec::new();
    let mut offset = 0;
    for (name, t) in tensors {
        entries.push(Entry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset,
        });
        offset += t.numel();
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(blob_path, bytes)?;
    let json = serde_json::to_string_pretty(&Manifest { tensors: entries })?;
    fs::write(manifest_path, json)?;
    Ok(())
}

pub fn read_blob(blob_path: &Path, manifest_path: &Path) -> Result<Vec<(String, Tensor)>> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(manifest_path)?)?;
    let bytes = fs::read(blob_path)?;
    if bytes.len() % 4 != 0 {
        return Err(TensorError::Invalid(format!(
            "{}: length {} is not a multiple of 4",
            blob_path.display(),
            bytes.len()
        )));
    }
    let floats: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    manifest
        .tensors
        .into_iter()
        .map(|e| {
            let n: usize = e.shape.iter().product();
            let data = floats.get(e.offset..e.offset + n).ok_or_else(|| {
                TensorError::Invalid(format!("tensor {} runs past the end of the blob", e.name))
            })?;
            Ok((e.name, Tensor::new(e.shape, data.to_vec())?))
        })
        .collect()
}
