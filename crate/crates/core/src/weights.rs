//! Named parameter storage and the `dsn-weights-v1` on-disk format.
//!
//! A weight file is a pair: a UTF-8 JSON manifest listing every tensor
//! (name, dims, byte offset) in model order, and a blob of little-endian
//! `f64` values the offsets point into.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{DsnError, Result};
use crate::tensor::{xavier_init, SeededRng, Tensor};

pub const WEIGHTS_VERSION: &str = "dsn-weights-v1";

/// Half-width of the uniform distribution biases are drawn from.
const BIAS_INIT_RANGE: f64 = 0.1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightStore {
    tensors: IndexMap<String, Tensor>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: String,
    blob: String,
    total_params: usize,
    entries: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    name: String,
    dims: Vec<usize>,
    offset: usize,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(DsnError::WeightFile(format!("duplicate tensor `{name}`")));
        }
        self.tensors.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    /// Remove a tensor, keeping the order of the rest.
    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.tensors.shift_remove(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn total_params(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Raw little-endian blob in manifest order.
    pub fn to_blob(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.total_params() * 8);
        for t in self.tensors.values() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    fn manifest(&self, blob: &str) -> Manifest {
        let mut offset = 0;
        let entries = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let e = ManifestEntry {
                    name: name.clone(),
                    dims: t.shape().to_vec(),
                    offset,
                };
                offset += t.len() * 8;
                e
            })
            .collect();
        Manifest {
            version: WEIGHTS_VERSION.to_string(),
            blob: blob.to_string(),
            total_params: self.total_params(),
            entries,
        }
    }

    /// Write `<stem>.json` and `<stem>.bin`; returns the manifest path.
    pub fn save(&self, stem: impl AsRef<Path>) -> Result<PathBuf> {
        let stem = stem.as_ref();
        let manifest_path = stem.with_extension("json");
        let blob_path = stem.with_extension("bin");
        let blob_name = blob_path
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| DsnError::WeightFile(format!("bad path {}", stem.display())))?
            .to_string();
        let json = serde_json::to_string_pretty(&self.manifest(&blob_name))?;
        fs::write(&manifest_path, json).map_err(|e| DsnError::io(&manifest_path, e))?;
        fs::write(&blob_path, self.to_blob()).map_err(|e| DsnError::io(&blob_path, e))?;
        Ok(manifest_path)
    }

    /// Load from a manifest path; the blob is resolved relative to it.
    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let manifest_path = manifest_path.as_ref();
        let text = fs::read_to_string(manifest_path).map_err(|e| DsnError::io(manifest_path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        let blob_path = manifest_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(&manifest.blob);
        let blob = fs::read(&blob_path).map_err(|e| DsnError::io(&blob_path, e))?;
        Self::from_parts(&manifest, &blob)
    }

    fn from_parts(manifest: &Manifest, blob: &[u8]) -> Result<Self> {
        if manifest.version != WEIGHTS_VERSION {
            return Err(DsnError::WeightFile(format!(
                "unsupported version `{}` (expected {WEIGHTS_VERSION})",
                manifest.version
            )));
        }
        let mut store = WeightStore::new();
        for e in &manifest.entries {
            let n: usize = e.dims.iter().product();
            let end = e.offset + n * 8;
            if e.offset % 8 != 0 || end > blob.len() {
                return Err(DsnError::WeightFile(format!(
                    "tensor `{}` at offset {} overruns the {}-byte blob",
                    e.name,
                    e.offset,
                    blob.len()
                )));
            }
            let data = blob[e.offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let t = Tensor::new(e.dims.clone(), data)
                .map_err(|err| DsnError::WeightFile(format!("tensor `{}`: {err}", e.name)))?;
            store.insert(e.name.clone(), t)?;
        }
        if store.total_params() != manifest.total_params {
            return Err(DsnError::WeightFile(format!(
                "manifest declares {} params, entries hold {}",
                manifest.total_params,
                store.total_params()
            )));
        }
        Ok(store)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
}

/// Where a model gets its parameters while being wired up.
pub trait ParamSource {
    fn take(&mut self, name: &str, shape: &[usize], kind: ParamKind) -> Result<Tensor>;
}

/// Fresh parameters from a seed; everything drawn is also recorded.
#[derive(Debug)]
pub struct SeededParams {
    rng: SeededRng,
    store: WeightStore,
}

impl SeededParams {
    pub fn new(seed: u64) -> Self {
        SeededParams {
            rng: SeededRng::new(seed),
            store: WeightStore::new(),
        }
    }

    pub fn into_store(self) -> WeightStore {
        self.store
    }
}

impl ParamSource for SeededParams {
    fn take(&mut self, name: &str, shape: &[usize], kind: ParamKind) -> Result<Tensor> {
        let t = match kind {
            ParamKind::Weight => xavier_init(&mut self.rng, shape),
            ParamKind::Bias => self.rng.uniform_tensor(shape, -BIAS_INIT_RANGE, BIAS_INIT_RANGE),
        };
        self.store.insert(name, t.clone())?;
        Ok(t)
    }
}

/// Parameters looked up by name in an existing store.
#[derive(Debug)]
pub struct LoadedParams<'a> {
    store: &'a WeightStore,
    used: HashSet<String>,
}

impl<'a> LoadedParams<'a> {
    pub fn new(store: &'a WeightStore) -> Self {
        LoadedParams {
            store,
            used: HashSet::new(),
        }
    }

    /// Errors on the first stored tensor the model never asked for.
    pub fn finish(self) -> Result<()> {
        match self.store.names().find(|n| !self.used.contains(*n)) {
            Some(extra) => Err(DsnError::UnexpectedWeight(extra.to_string())),
            None => Ok(()),
        }
    }
}

impl ParamSource for LoadedParams<'_> {
    fn take(&mut self, name: &str, shape: &[usize], _kind: ParamKind) -> Result<Tensor> {
        let t = self
            .store
            .get(name)
            .ok_or_else(|| DsnError::MissingWeight(name.to_string()))?;
        if t.shape() != shape {
            return Err(DsnError::WeightFile(format!(
                "tensor `{name}` has shape {:?}, expected {shape:?}",
                t.shape()
            )));
        }
        self.used.insert(name.to_string());
        Ok(t.clone())
    }
}
