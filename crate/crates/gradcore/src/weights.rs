//! Weight files: a JSON manifest listing each parameter (name, kind, shape,
//! initializer) plus a little-endian `f64` blob holding the values in
//! manifest order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{GradError, Result};
use crate::graph::Graph;
use crate::tensor::Tensor;

pub const FORMAT_TAG: &str = "gradcore-weights";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub name: String,
    pub kind: String,
    pub shape: Vec<usize>,
    pub initializer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightManifest {
    pub format: String,
    pub version: u32,
    /// Blob file name, relative to the manifest.
    pub blob: String,
    pub layers: Vec<LayerEntry>,
}

impl WeightManifest {
    pub fn total_values(&self) -> usize {
        self.layers.iter().map(|l| l.shape.iter().product::<usize>()).sum()
    }
}

pub fn encode_f64_le(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn decode_f64_le(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return Err(GradError::Weights(format!(
            "blob length {} is not a multiple of 8",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

fn blob_path(manifest_path: &Path, blob: &str) -> PathBuf {
    manifest_path
        .parent()
        .map(|p| p.join(blob))
        .unwrap_or_else(|| PathBuf::from(blob))
}

/// Writes `<stem>.json` and `<stem>.bin` for every parameter of `graph`.
pub fn save_weights(graph: &Graph, manifest_path: &Path) -> Result<()> {
    let blob_name = manifest_path
        .with_extension("bin")
        .file_name()
        .and_then(|s| s.to_str())
        .ok_or_else(|| GradError::Weights(format!("bad path {}", manifest_path.display())))?
        .to_string();
    let manifest = WeightManifest {
        format: FORMAT_TAG.into(),
        version: FORMAT_VERSION,
        blob: blob_name.clone(),
        layers: graph
            .params()
            .iter()
            .map(|p| LayerEntry {
                name: p.name.clone(),
                kind: p.kind.clone(),
                shape: p.value.shape().to_vec(),
                initializer: p.initializer.clone(),
            })
            .collect(),
    };
    let values: Vec<f64> = graph
        .params()
        .iter()
        .flat_map(|p| p.value.data().iter().copied())
        .collect();
    fs::write(manifest_path, serde_json::to_vec_pretty(&manifest)?)?;
    fs::write(blob_path(manifest_path, &blob_name), encode_f64_le(&values))?;
    Ok(())
}

/// Reads a manifest and its blob, validating tag, version and total length.
pub fn read_weights(manifest_path: &Path) -> Result<(WeightManifest, Vec<Tensor>)> {
    let manifest: WeightManifest = serde_json::from_slice(&fs::read(manifest_path)?)?;
    if manifest.format != FORMAT_TAG || manifest.version != FORMAT_VERSION {
        return Err(GradError::Weights(format!(
            "unsupported format {} v{}",
            manifest.format, manifest.version
        )));
    }
    let values = decode_f64_le(&fs::read(blob_path(manifest_path, &manifest.blob))?)?;
    if values.len() != manifest.total_values() {
        return Err(GradError::Weights(format!(
            "blob holds {} values, manifest declares {}",
            values.len(),
            manifest.total_values()
        )));
    }
    let mut offset = 0;
    let mut tensors = Vec::with_capacity(manifest.layers.len());
    for layer in &manifest.layers {
        let n: usize = layer.shape.iter().product();
        tensors.push(Tensor::new(layer.shape.clone(), values[offset..offset + n].to_vec())?);
        offset += n;
    }
    Ok((manifest, tensors))
}

/// Loads a weight file into a graph. Names and shapes must match exactly.
pub fn load_weights(graph: &mut Graph, manifest_path: &Path) -> Result<()> {
    let (manifest, tensors) = read_weights(manifest_path)?;
    if manifest.layers.len() != graph.params().len() {
        return Err(GradError::Weights(format!(
            "manifest has {} layers, graph has {} parameters",
            manifest.layers.len(),
            graph.params().len()
        )));
    }
    for (layer, t) in manifest.layers.iter().zip(tensors) {
        let expected = graph
            .find_param(&layer.name)
            .ok_or_else(|| GradError::UnknownParam(layer.name.clone()))?;
        if expected.value.shape() != t.shape() {
            return Err(GradError::Weights(format!(
                "{}: shape {:?} in file, {:?} in graph",
                layer.name,
                t.shape(),
                expected.value.shape()
            )));
        }
        if !t.is_finite() {
            return Err(GradError::Weights(format!("{}: non-finite values", layer.name)));
        }
        graph.set_param(&layer.name, t)?;
    }
    Ok(())
}
