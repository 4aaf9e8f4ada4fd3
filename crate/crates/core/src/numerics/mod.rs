//! Dense tensors, the differentiation tape, parameters, layers and
//! checkpoints. Everything above this module is written in these kernels.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
mod params;
mod tape;
mod tensor;

pub use params::{ParamId, ParamStore};
pub use tape::{log_softmax_rows, softmax_rows, Backward, Mask, Tape, Var, LOG_ZERO};
pub use tensor::{matmul, Tensor};

use crate::error::{Error, Result};

/// Per-parameter gradients aligned with one [`ParamStore`]. Missing entries
/// are zero.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Gradients {
            grads: vec![None; store.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn set(&mut self, id: ParamId, g: Tensor) {
        self.grads[id.0] = Some(g);
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (id, g) in other.iter() {
            match &mut self.grads[id.0] {
                Some(acc) => acc.add_scaled(g, scale),
                slot @ None => {
                    let mut t = g.clone();
                    t.scale_in_place(scale);
                    *slot = Some(t);
                }
            }
        }
    }

    /// `self += scale * ∂root/∂θ` for every parameter the sweep reached.
    pub fn add_backward(&mut self, b: &Backward, scale: f64) {
        for (id, g) in b.param_grads() {
            match &mut self.grads[id.0] {
                Some(acc) => acc.add_scaled(g, scale),
                slot @ None => {
                    let mut t = g.clone();
                    t.scale_in_place(scale);
                    *slot = Some(t);
                }
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.scale_in_place(s);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.iter().flatten().map(Tensor::squared_norm).sum::<f64>().sqrt()
    }

    /// Rescales so the global norm is at most `max_norm`; returns the norm
    /// before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if max_norm > 0.0 && norm > max_norm {
            self.scale(max_norm / norm);
        }
        norm
    }

    /// Fails with the name of the first parameter holding a NaN or infinity.
    pub fn check_finite(&self, store: &ParamStore) -> Result<()> {
        for (id, g) in self.iter() {
            if !g.is_finite() {
                return Err(Error::NonFinite {
                    param: store.name(id).to_string(),
                });
            }
        }
        Ok(())
    }

    /// Flattens into one vector in store order, zero-filling missing entries.
    pub fn flatten(&self, store: &ParamStore) -> Vec<f64> {
        let mut out = Vec::with_capacity(store.num_scalars());
        for id in store.ids() {
            match self.get(id) {
                Some(g) => out.extend_from_slice(g.data()),
                None => out.extend(std::iter::repeat_n(0.0, store.value(id).len())),
            }
        }
        out
    }
}
