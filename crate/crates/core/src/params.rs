//! Named parameter storage shared by the model, the optimizer and the
//! checkpoint format.
//!
//! A checkpoint is a directory: `manifest.txt` lists one `name shape...`
//! line per parameter, and each parameter's value lives in `<name>.daot`.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::serial;
use crate::tensor::{DualTensor, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

#[derive(Clone)]
pub struct ParamStore {
    names: Vec<String>,
    params: Vec<DualTensor>,
    index: HashMap<String, usize>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore {
            names: Vec::new(),
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> ParamId {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name}"
        );
        let id = self.params.len();
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        self.params.push(DualTensor::new(value));
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn accumulate(&mut self, id: ParamId, cotangent: &Tensor) -> Result<()> {
        self.params[id.0].accumulate(cotangent)
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.zero_grad();
        }
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn total_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.all_finite())
    }

    /// Write manifest + one tensor blob per parameter.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut manifest = String::new();
        for (name, p) in self.names.iter().zip(&self.params) {
            let dims: Vec<String> = p.value.shape().iter().map(|d| d.to_string()).collect();
            manifest.push_str(&format!("{name} {}\n", dims.join(" ")));
            serial::save_tensor(&dir.join(format!("{name}.daot")), &p.value)?;
        }
        std::fs::write(dir.join("manifest.txt"), manifest)?;
        Ok(())
    }

    /// Load values into an existing store; names and shapes must match.
    pub fn load(&mut self, dir: &Path) -> Result<()> {
        let manifest = std::fs::read_to_string(dir.join("manifest.txt"))?;
        let mut seen = 0usize;
        for line in manifest.lines() {
            let mut parts = line.split_whitespace();
            let name = match parts.next() {
                Some(n) => n,
                None => continue,
            };
            let shape: Vec<usize> = parts
                .map(|p| {
                    p.parse()
                        .map_err(|_| Error::Format(format!("bad extent in manifest: {line}")))
                })
                .collect::<Result<_>>()?;
            let id = *self
                .index
                .get(name)
                .ok_or_else(|| Error::Format(format!("unknown parameter {name} in checkpoint")))?;
            let t = serial::load_tensor(&dir.join(format!("{name}.daot")))?;
            if t.shape() != shape || t.shape() != self.params[id].value.shape() {
                return Err(Error::Dim(format!(
                    "checkpoint tensor {name} has shape {:?}, store wants {:?}",
                    t.shape(),
                    self.params[id].value.shape()
                )));
            }
            self.params[id].value = t;
            seen += 1;
        }
        if seen != self.params.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {seen} parameters, store has {}",
                self.params.len()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    #[test]
    fn save_load_round_trip() {
        let mut rng = SplitMix64::new(2);
        let mut store = ParamStore::new();
        let a = store.add("layer0.weight", rng.uniform_tensor(&[3, 4], -1.0, 1.0));
        let b = store.add("layer0.bias", rng.uniform_tensor(&[3], -1.0, 1.0));
        let dir = std::env::temp_dir().join(format!("daocc-params-{}", std::process::id()));
        store.save(&dir).unwrap();

        let mut other = ParamStore::new();
        other.add("layer0.weight", Tensor::zeros(&[3, 4]));
        other.add("layer0.bias", Tensor::zeros(&[3]));
        other.load(&dir).unwrap();
        assert_eq!(other.value(a).data(), store.value(a).data());
        assert_eq!(other.value(b).data(), store.value(b).data());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn load_rejects_shape_mismatch() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::zeros(&[2, 2]));
        let dir = std::env::temp_dir().join(format!("daocc-params-bad-{}", std::process::id()));
        store.save(&dir).unwrap();

        let mut other = ParamStore::new();
        other.add("w", Tensor::zeros(&[4]));
        assert!(other.load(&dir).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn grad_accumulation() {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::zeros(&[2]));
        store
            .accumulate(id, &Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap())
            .unwrap();
        store
            .accumulate(id, &Tensor::from_vec(&[2], vec![0.5, 0.5]).unwrap())
            .unwrap();
        assert_eq!(store.grad(id).data(), &[1.5, 2.5]);
        store.zero_grads();
        assert_eq!(store.grad(id).data(), &[0.0, 0.0]);
    }
}
