use crate::error::{Error, Result};
use crate::numerics::{Gradients, ParamStore};

/// `acc += g²; θ −= lr · g / √acc`, accumulators starting at `acc0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaGrad {
    pub lr: f64,
    pub acc0: f64,
}

/// `θ −= lr · g`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sgd {
    pub lr: f64,
}

fn check_shape(store: &ParamStore, grads: &Gradients) -> Result<()> {
    for (id, g) in grads.iter() {
        if id.index() >= store.len() || g.shape() != store.value(id).shape() {
            let left = if id.index() < store.len() {
                store.value(id).shape().to_vec()
            } else {
                Vec::new()
            };
            return Err(Error::Shape {
                op: "optimizer update",
                left,
                right: g.shape().to_vec(),
            });
        }
    }
    Ok(())
}

impl AdaGrad {
    pub fn update(&self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        check_shape(store, grads)?;
        for (id, g) in grads.iter() {
            let (value, acc) = store.accum_or_init(id, self.acc0);
            let (theta, acc) = (value.data_mut(), acc.data_mut());
            for ((th, a), &gi) in theta.iter_mut().zip(acc.iter_mut()).zip(g.data()) {
                *a += gi * gi;
                *th -= self.lr * gi / a.sqrt();
            }
        }
        Ok(())
    }
}

impl Sgd {
    pub fn update(&self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        check_shape(store, grads)?;
        for (id, g) in grads.iter() {
            store.value_mut(id).add_scaled(g, -self.lr);
        }
        Ok(())
    }
}
