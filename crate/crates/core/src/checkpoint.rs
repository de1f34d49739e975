//! Tensor archive: a directory holding `manifest.json` (tensor name ->
//! shape, dtype) and one raw little-endian binary file per tensor. Model
//! weights, batch-norm buffers, optimizer state and 2D weights for
//! inflation all use this format. Writes go to a temporary directory that
//! is renamed into place.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Scalar;

#[derive(Serialize, Deserialize, Debug, Clone)]
struct TensorInfo {
    shape: Vec<usize>,
    dtype: String,
}

fn tensor_file(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.bin"))
}

/// Serializes tensors into `dir`, replacing any existing archive.
pub fn save_archive<F: Scalar>(dir: &Path, tensors: &[(String, ArrayD<F>)]) -> Result<()> {
    let parent = dir.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    let tmp = parent.join(format!(
        ".{}.tmp",
        dir.file_name().and_then(|n| n.to_str()).unwrap_or("archive")
    ));
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;

    let mut manifest = BTreeMap::new();
    for (name, tensor) in tensors {
        manifest.insert(
            name.clone(),
            TensorInfo {
                shape: tensor.shape().to_vec(),
                dtype: F::DTYPE.to_string(),
            },
        );
        let mut bytes = Vec::with_capacity(tensor.len() * 4);
        match F::DTYPE {
            "f32" => {
                for v in tensor.iter() {
                    bytes.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
                }
            }
            _ => {
                for v in tensor.iter() {
                    bytes.extend_from_slice(&v.as_f64().to_le_bytes());
                }
            }
        }
        let path = tensor_file(&tmp, name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    let manifest_path = tmp.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("serializable manifest");
    fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;

    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e))?;
    Ok(())
}

/// Loads every tensor of an archive, converting to `F` if the stored
/// dtype differs.
pub fn load_archive<F: Scalar>(dir: &Path) -> Result<HashMap<String, ArrayD<F>>> {
    let manifest_path = dir.join("manifest.json");
    let json = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: BTreeMap<String, TensorInfo> =
        serde_json::from_str(&json).map_err(|e| Error::json(&manifest_path, e))?;
    let mut out = HashMap::new();
    for (name, info) in manifest {
        let path = tensor_file(dir, &name);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let count: usize = info.shape.iter().product();
        let values: Vec<F> = match info.dtype.as_str() {
            "f32" => {
                if bytes.len() != count * 4 {
                    return Err(Error::Checkpoint(format!(
                        "tensor `{name}`: expected {} bytes, file has {}",
                        count * 4,
                        bytes.len()
                    )));
                }
                bytes
                    .chunks_exact(4)
                    .map(|c| F::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
                    .collect()
            }
            "f64" => {
                if bytes.len() != count * 8 {
                    return Err(Error::Checkpoint(format!(
                        "tensor `{name}`: expected {} bytes, file has {}",
                        count * 8,
                        bytes.len()
                    )));
                }
                bytes
                    .chunks_exact(8)
                    .map(|c| {
                        F::of(f64::from_le_bytes([
                            c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7],
                        ]))
                    })
                    .collect()
            }
            other => {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}`: unsupported dtype `{other}`"
                )))
            }
        };
        let arr = ArrayD::from_shape_vec(IxDyn(&info.shape), values)
            .map_err(|e| Error::Checkpoint(format!("tensor `{name}`: {e}")))?;
        out.insert(name, arr);
    }
    Ok(out)
}
