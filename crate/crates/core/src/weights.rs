//! Weight manifests: a JSON document listing named tensors, each stored as
//! a raw little-endian f32 file next to the manifest.
//!
//! ```json
//! {"dims": {"t": 100, "c": 8, "h": 16, "d_max": 100},
//!  "tensors": [{"name": "conv1.weight", "shape": [16, 8, 3], "data_file": "head.conv1.weight.f32"}]}
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightSet {
    pub dims: BTreeMap<String, usize>,
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<Tensor>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    dims: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    meta: BTreeMap<String, String>,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    data_file: String,
}

impl WeightSet {
    pub fn dim(&self, key: &str) -> Result<usize> {
        self.dims
            .get(key)
            .copied()
            .ok_or_else(|| Error::Schema(format!("manifest is missing dimension `{key}`")))
    }

    pub fn push(&mut self, name: &str, shape: &[usize], data: impl IntoIterator<Item = f64>) {
        self.tensors.push(Tensor {
            name: name.to_string(),
            shape: shape.to_vec(),
            data: data.into_iter().collect(),
        });
    }

    /// Looks up a tensor and checks its shape.
    pub fn take(&self, name: &str, shape: &[usize]) -> Result<&[f64]> {
        let t = self
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Schema(format!("manifest has no tensor `{name}`")))?;
        if t.shape != shape {
            return Err(Error::ShapeMismatch(format!(
                "tensor `{name}` has shape {:?}, expected {shape:?}",
                t.shape
            )));
        }
        Ok(&t.data)
    }

    /// Writes the manifest to `path` and one `.f32` file per tensor beside it.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let dir = parent_dir(path);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "weights".into());
        let mut entries = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            let data_file = format!("{stem}.{}.f32", t.name);
            let bytes: Vec<u8> = t.data.iter().flat_map(|v| (*v as f32).to_le_bytes()).collect();
            let target = dir.join(&data_file);
            fs::write(&target, bytes).map_err(|e| Error::io(&target, e))?;
            entries.push(TensorEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
                data_file,
            });
        }
        let manifest = Manifest {
            dims: self.dims.clone(),
            meta: self.meta.clone(),
            tensors: entries,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
        let dir = parent_dir(path);
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for entry in manifest.tensors {
            let file = dir.join(&entry.data_file);
            let bytes = fs::read(&file).map_err(|e| Error::io(&file, e))?;
            let expected: usize = entry.shape.iter().product();
            if bytes.len() != expected * 4 {
                return Err(Error::ShapeMismatch(format!(
                    "{}: {} bytes for shape {:?} ({} expected)",
                    file.display(),
                    bytes.len(),
                    entry.shape,
                    expected * 4
                )));
            }
            let mut data = Vec::with_capacity(expected);
            for (i, chunk) in bytes.chunks_exact(4).enumerate() {
                let v = f32::from_le_bytes(chunk.try_into().unwrap());
                if !v.is_finite() {
                    return Err(Error::Format {
                        location: format!("{} byte {}", file.display(), 4 * i),
                        message: format!("non-finite weight {v}"),
                    });
                }
                data.push(v as f64);
            }
            tensors.push(Tensor {
                name: entry.name,
                shape: entry.shape,
                data,
            });
        }
        Ok(Self {
            dims: manifest.dims,
            meta: manifest.meta,
            tensors,
        })
    }
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}
