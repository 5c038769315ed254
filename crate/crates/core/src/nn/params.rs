use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::mpf;
use crate::error::{Error, Result};
use crate::numcore::{Matrix, Rng};

pub const INDEX_FILE: &str = "index.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    /// Optimizer group, e.g. `"backbone"` or `"lora"`.
    pub group: String,
    pub value: Matrix,
}

/// Named, grouped parameter tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
    by_name: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    name: String,
    group: String,
    file: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Index {
    tensors: Vec<IndexEntry>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor. Panics on a duplicate name.
    pub fn add(&mut self, name: impl Into<String>, group: &str, value: Matrix) -> ParamId {
        let name = name.into();
        assert!(!self.by_name.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.entries.len());
        self.by_name.insert(name.clone(), id.0);
        self.entries.push(ParamEntry {
            name,
            group: group.to_string(),
            value,
        });
        id
    }

    /// Xavier-uniform initialised `rows × cols` weight.
    pub fn add_xavier(&mut self, name: impl Into<String>, group: &str, rows: usize, cols: usize, rng: &mut Rng) -> ParamId {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.uniform_range(-bound, bound)).collect();
        self.add(name, group, Matrix::from_vec(rows, cols, data).expect("shape"))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn set_group(&mut self, id: ParamId, group: &str) {
        self.entries[id.0].group = group.to_string();
    }

    pub fn scalar_count(&self, group: Option<&str>) -> usize {
        self.entries
            .iter()
            .filter(|e| group.is_none_or(|g| e.group == g))
            .map(|e| e.value.len())
            .sum()
    }

    /// SHA-256 over names and exact value bits of the tensors in `group`
    /// (all tensors when `None`).
    pub fn checksum(&self, group: Option<&str>) -> String {
        let mut h = Sha256::new();
        for e in self.entries.iter().filter(|e| group.is_none_or(|g| e.group == g)) {
            h.update(e.name.as_bytes());
            for v in e.value.as_slice() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Writes one MPF1 file per tensor plus `index.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let tensors = dir.join("tensors");
        std::fs::create_dir_all(&tensors).map_err(|e| Error::io(&tensors, e))?;
        let mut index = Index { tensors: Vec::new() };
        for (i, e) in self.entries.iter().enumerate() {
            let file = format!("tensors/{i:04}.mpf");
            mpf::write(&dir.join(&file), &e.value)?;
            index.tensors.push(IndexEntry {
                name: e.name.clone(),
                group: e.group.clone(),
                file,
                rows: e.value.rows(),
                cols: e.value.cols(),
            });
        }
        let path = dir.join(INDEX_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(&index)? + "\n").map_err(|e| Error::io(path, e))
    }

    /// Overwrites values from a checkpoint written by [`ParamSet::save`].
    /// Names and shapes must match exactly.
    pub fn load_values(&mut self, dir: &Path) -> Result<()> {
        let path = dir.join(INDEX_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let index: Index = serde_json::from_str(&text)?;
        if index.tensors.len() != self.entries.len() {
            return Err(Error::Dimension(format!(
                "checkpoint has {} tensors, model has {}",
                index.tensors.len(),
                self.entries.len()
            )));
        }
        for t in index.tensors {
            let id = self
                .id(&t.name)
                .ok_or_else(|| Error::Dimension(format!("unknown tensor {}", t.name)))?;
            let value = mpf::read(&dir.join(&t.file))?;
            if value.shape() != self.get(id).shape() || value.shape() != (t.rows, t.cols) {
                return Err(Error::Dimension(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    t.name,
                    value.shape(),
                    self.get(id).shape()
                )));
            }
            *self.get_mut(id) = value;
        }
        Ok(())
    }
}
