//! Parameter persistence: a JSON manifest plus a raw little-endian f64 blob.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{Group, ParameterStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "model.json";
pub const WEIGHTS_FILE: &str = "model.bin";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Entry {
    name: String,
    group: Group,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    encoding: String,
    meta: serde_json::Value,
    params: Vec<Entry>,
}

/// Writes `store` and free-form `meta` into `dir`.
pub fn save(dir: &Path, store: &ParameterStore, meta: serde_json::Value) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut blob = Vec::with_capacity(store.count() * 8);
    let mut params = Vec::with_capacity(store.len());
    let mut offset = 0;
    for p in store.params() {
        params.push(Entry {
            name: p.name.clone(),
            group: p.group,
            shape: p.value.shape().to_vec(),
            offset,
        });
        for v in p.value.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        offset += p.value.len();
    }
    let manifest = Manifest {
        encoding: "f64le".into(),
        meta,
        params,
    };
    let mpath = dir.join(MANIFEST_FILE);
    fs::write(&mpath, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&mpath, e))?;
    let wpath = dir.join(WEIGHTS_FILE);
    fs::write(&wpath, blob).map_err(|e| Error::io(&wpath, e))
}

/// A missing file is a dependency error naming it.
fn read(path: &Path) -> Result<Vec<u8>> {
    match fs::read(path) {
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::Dependency(path.to_path_buf())),
        other => other.map_err(|e| Error::io(path, e)),
    }
}

/// Reads a checkpoint written by [`save`].
pub fn load(dir: &Path) -> Result<(ParameterStore, serde_json::Value)> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = read(&mpath)?;
    let manifest: Manifest = serde_json::from_slice(&text)?;
    if manifest.encoding != "f64le" {
        return Err(Error::Config(format!(
            "unsupported checkpoint encoding `{}`",
            manifest.encoding
        )));
    }
    let wpath = dir.join(WEIGHTS_FILE);
    let blob = read(&wpath)?;
    if blob.len() % 8 != 0 {
        return Err(Error::Shape("checkpoint blob is not a whole number of f64".into()));
    }
    let values: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut store = ParameterStore::new();
    for e in manifest.params {
        let n: usize = e.shape.iter().product();
        let data = values
            .get(e.offset..e.offset + n)
            .ok_or_else(|| Error::Shape(format!("checkpoint blob too short for `{}`", e.name)))?
            .to_vec();
        store.push(&e.name, e.group, Tensor::new(e.shape, data)?);
    }
    Ok((store, manifest.meta))
}
