use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::write_atomic;
use crate::diffcore::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    /// Updated by the optimiser.
    Trainable,
    /// State such as batch-norm running statistics.
    Buffer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub kind: ParamKind,
}

/// Named parameters of one model, in registration order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        value: Tensor<T>,
        kind: ParamKind,
    ) -> Result<ParamId> {
        let name = name.into();
        if self.entries.iter().any(|e| e.name == name) {
            return Err(Error::Config(format!("parameter {name} registered twice")));
        }
        self.entries.push(ParamEntry { name, value, kind });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries
            .iter()
            .position(|e| e.name == name)
            .map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.ids()
            .filter(|&id| self.entries[id.0].kind == ParamKind::Trainable)
            .collect()
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn num_trainable(&self) -> usize {
        self.trainable_ids()
            .iter()
            .map(|&id| self.value(id).len())
            .sum()
    }

    /// Same parameters converted to another precision.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    value: e.value.cast(),
                    kind: e.kind,
                })
                .collect(),
        }
    }

    /// Writes `params.json` plus one flat little-endian `f32` file.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut bytes = Vec::new();
        let mut records = Vec::with_capacity(self.entries.len());
        let mut offset = 0;
        for e in &self.entries {
            for &v in e.value.data() {
                bytes.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
            }
            records.push(CheckpointRecord {
                name: e.name.clone(),
                shape: e.value.shape().to_vec(),
                kind: e.kind,
                offset,
            });
            offset += e.value.len();
        }
        write_atomic(dir.join(CHECKPOINT_DATA), bytes)?;
        let manifest = CheckpointManifest {
            file: CHECKPOINT_DATA.to_string(),
            params: records,
        };
        let path = dir.join(CHECKPOINT_MANIFEST);
        write_atomic(&path, serde_json::to_string_pretty(&manifest)?)?;
        Ok(path)
    }

    /// Overwrites every parameter from a checkpoint written by [`save`],
    /// matching entries by name and shape.
    ///
    /// [`save`]: ParamStore::save
    pub fn load_from(&mut self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let manifest_path = dir.join(CHECKPOINT_MANIFEST);
        let manifest: CheckpointManifest =
            serde_json::from_str(&fs::read_to_string(&manifest_path)?)
                .map_err(|e| Error::Schema(format!("{}: {e}", manifest_path.display())))?;
        let data_path = dir.join(&manifest.file);
        let bytes = fs::read(&data_path)?;
        let values: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        for entry in &mut self.entries {
            let record = manifest
                .params
                .iter()
                .find(|r| r.name == entry.name)
                .ok_or_else(|| {
                    Error::Schema(format!("checkpoint lacks parameter {}", entry.name))
                })?;
            if record.shape != entry.value.shape() {
                return Err(Error::Schema(format!(
                    "parameter {} has shape {:?} in checkpoint, {:?} in model",
                    entry.name,
                    record.shape,
                    entry.value.shape()
                )));
            }
            let len = entry.value.len();
            let slice = values
                .get(record.offset..record.offset + len)
                .ok_or_else(|| Error::Corruption {
                    path: data_path.clone(),
                    reason: format!("parameter {} extends past end of file", entry.name),
                })?;
            for (dst, &src) in entry.value.data_mut().iter_mut().zip(slice) {
                *dst = T::from_f64(src as f64);
            }
        }
        Ok(())
    }
}

pub const CHECKPOINT_MANIFEST: &str = "params.json";
const CHECKPOINT_DATA: &str = "params.f32";

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointRecord {
    name: String,
    shape: Vec<usize>,
    kind: ParamKind,
    /// Element offset into the data file.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    file: String,
    params: Vec<CheckpointRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ParamInit {
    /// Uniform on `(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
    Glorot {
        fan_in: usize,
        fan_out: usize,
    },
    Zeros,
    Ones,
}

#[derive(Clone, Debug)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: ParamInit,
    pub kind: ParamKind,
}

/// Seeded source of initial parameter values.
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn tensor<T: Scalar>(&mut self, shape: &[usize], init: ParamInit) -> Tensor<T> {
        match init {
            ParamInit::Zeros => Tensor::zeros(shape),
            ParamInit::Ones => Tensor::full(shape, T::one()),
            ParamInit::Glorot { fan_in, fan_out } => {
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let len = shape.iter().product();
                let data = (0..len)
                    .map(|_| T::from_f64(self.rng.random_range(-a..a)))
                    .collect();
                Tensor::new(shape.to_vec(), data).expect("length matches shape")
            }
        }
    }
}

/// Builds a store from explicit parameter specifications, drawing values in
/// order from one seeded stream.
pub fn init_parameters<T: Scalar>(specs: &[ParamSpec], seed: u64) -> Result<ParamStore<T>> {
    let mut init = Initializer::new(seed);
    let mut store = ParamStore::new();
    for spec in specs {
        let value = init.tensor(&spec.shape, spec.init);
        store.add(spec.name.clone(), value, spec.kind)?;
    }
    Ok(store)
}

/// Registers parameters into a store while drawing their initial values.
pub struct ParamBuilder<'a, T> {
    pub store: &'a mut ParamStore<T>,
    pub init: &'a mut Initializer,
}

impl<T: Scalar> ParamBuilder<'_, T> {
    pub fn add(
        &mut self,
        name: String,
        shape: &[usize],
        init: ParamInit,
        kind: ParamKind,
    ) -> Result<ParamId> {
        let value = self.init.tensor(shape, init);
        self.store.add(name, value, kind)
    }

    pub fn weight(
        &mut self,
        name: String,
        fan_in: usize,
        fan_out: usize,
        cols: usize,
    ) -> Result<ParamId> {
        self.add(
            name,
            &[fan_in, cols],
            ParamInit::Glorot { fan_in, fan_out },
            ParamKind::Trainable,
        )
    }

    pub fn bias(&mut self, name: String, len: usize) -> Result<ParamId> {
        self.add(name, &[len], ParamInit::Zeros, ParamKind::Trainable)
    }
}
