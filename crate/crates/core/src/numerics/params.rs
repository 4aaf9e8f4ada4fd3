use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a parameter inside one [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
struct Entry {
    name: String,
    value: Tensor,
    /// AdaGrad squared-gradient accumulator, created on the first update.
    accum: Option<Tensor>,
}

/// Named parameters in registration order. Names are dot-separated paths and
/// shapes never change after registration.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.entries.len());
        self.index.insert(name.clone(), id);
        self.entries.push(Entry {
            name,
            value,
            accum: None,
        });
        Ok(id)
    }

    /// Registers a `rows × cols` weight drawn i.i.d. from N(0, std²).
    pub fn gaussian<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<ParamId> {
        let data = if std > 0.0 {
            let normal = Normal::new(0.0, std).map_err(|e| Error::invalid(e.to_string()))?;
            (0..rows * cols).map(|_| normal.sample(rng)).collect()
        } else {
            vec![0.0; rows * cols]
        };
        self.insert(name, Tensor::matrix(rows, cols, data))
    }

    pub fn zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> Result<ParamId> {
        self.insert(name, Tensor::zeros(rows, cols))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.value(id))
    }

    pub fn accum(&self, id: ParamId) -> Option<&Tensor> {
        self.entries[id.0].accum.as_ref()
    }

    pub(crate) fn accum_or_init(&mut self, id: ParamId, init: f64) -> (&mut Tensor, &mut Tensor) {
        let entry = &mut self.entries[id.0];
        let (r, c) = (entry.value.rows(), entry.value.cols());
        let accum = entry
            .accum
            .get_or_insert_with(|| Tensor::filled(r, c, init));
        (&mut entry.value, accum)
    }

    pub(crate) fn set_accum(&mut self, id: ParamId, accum: Tensor) -> Result<()> {
        let entry = &mut self.entries[id.0];
        if accum.len() != entry.value.len() {
            return Err(Error::Shape {
                op: "accumulator",
                left: entry.value.shape().to_vec(),
                right: accum.shape().to_vec(),
            });
        }
        entry.accum = Some(accum);
        Ok(())
    }

    /// Overwrites a parameter's values, keeping its shape.
    pub fn assign(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let entry = &mut self.entries[id.0];
        if entry.value.shape() != value.shape() {
            return Err(Error::Shape {
                op: "assign",
                left: entry.value.shape().to_vec(),
                right: value.shape().to_vec(),
            });
        }
        entry.value = value;
        Ok(())
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Fails with the name of the first parameter holding a NaN or infinity.
    pub fn check_finite(&self) -> Result<()> {
        match self.entries.iter().find(|e| !e.value.is_finite()) {
            Some(e) => Err(Error::NonFinite { param: e.name.clone() }),
            None => Ok(()),
        }
    }

    /// Every value in insertion order.
    pub fn flatten_values(&self) -> Vec<f64> {
        self.entries.iter().flat_map(|e| e.value.data().iter().copied()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn names_are_unique() {
        let mut store = ParamStore::new();
        store.zeros("a.w", 2, 2).unwrap();
        assert!(store.zeros("a.w", 1, 1).is_err());
    }

    #[test]
    fn assign_keeps_shape() {
        let mut store = ParamStore::new();
        let id = store.zeros("w", 2, 3).unwrap();
        assert!(store.assign(id, Tensor::zeros(3, 2)).is_err());
        assert!(store.assign(id, Tensor::filled(2, 3, 1.0)).is_ok());
    }

    #[test]
    fn gaussian_init_has_requested_spread() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let id = store.gaussian("w", 200, 100, 0.01, &mut rng).unwrap();
        let v = store.value(id).data();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
        assert!(mean.abs() < 1e-3);
        assert!((var.sqrt() - 0.01).abs() < 5e-4, "std {}", var.sqrt());
    }
}
