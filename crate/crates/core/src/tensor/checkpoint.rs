use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const PARAMS_MANIFEST: &str = "params.json";
pub const PARAMS_BIN: &str = "params.bin";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset into the raw buffer.
    pub offset: usize,
}

/// Provenance of a run's artifacts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStamp {
    pub config_hash: String,
    pub seed: u64,
}

/// Describes `params.bin`: tensors stored back to back as little-endian
/// values in manifest order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamManifest {
    pub format: String,
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<RunStamp>,
    pub tensors: Vec<TensorEntry>,
}

const FORMAT: &str = "hgt-params";
const DTYPE: &str = "f64";

pub fn save_params(store: &ParamStore, dir: &Path) -> Result<ParamManifest> {
    save_params_stamped(store, dir, None)
}

pub fn save_params_stamped(store: &ParamStore, dir: &Path, run: Option<RunStamp>) -> Result<ParamManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut buf = Vec::with_capacity(store.num_scalars() * 8);
    let mut tensors = Vec::with_capacity(store.len());
    for (name, t) in store.iter() {
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            dtype: DTYPE.into(),
            offset: buf.len(),
        });
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = ParamManifest {
        format: FORMAT.into(),
        version: 1,
        run,
        tensors,
    };
    let bin = dir.join(PARAMS_BIN);
    fs::write(&bin, &buf).map_err(|e| Error::io(&bin, e))?;
    let path = dir.join(PARAMS_MANIFEST);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn load_params(dir: &Path) -> Result<ParamStore> {
    let path = dir.join(PARAMS_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: ParamManifest = serde_json::from_str(&text)?;
    if manifest.format != FORMAT || manifest.version != 1 {
        return Err(Error::Data(format!(
            "{}: unsupported checkpoint format {} v{}",
            path.display(),
            manifest.format,
            manifest.version
        )));
    }
    let bin = dir.join(PARAMS_BIN);
    let buf = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let mut store = ParamStore::new();
    for entry in manifest.tensors {
        if entry.dtype != DTYPE {
            return Err(Error::Data(format!("tensor `{}`: unsupported dtype {}", entry.name, entry.dtype)));
        }
        let n: usize = entry.shape.iter().product();
        let end = entry.offset + n * 8;
        let bytes = buf.get(entry.offset..end).ok_or_else(|| {
            Error::Data(format!("tensor `{}` runs past the end of {}", entry.name, bin.display()))
        })?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        store.insert(entry.name, Tensor::new(&entry.shape, data)?)?;
    }
    Ok(store)
}
