//! Parameterised building blocks shared by every network in the crate.
//!
//! Rows are items: a layer maps `[m × d_in]` to `[m × d_out]` with
//! `x · W + b`. Weights are Gaussian at construction, biases zero.

use rand::Rng;

use super::{Mask, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Initialisation settings threaded through constructors.
pub struct Init<'r, R: Rng + ?Sized> {
    pub std: f64,
    pub rng: &'r mut R,
}

impl<R: Rng + ?Sized> Init<'_, R> {
    fn weight(&mut self, store: &mut ParamStore, name: String, rows: usize, cols: usize) -> Result<ParamId> {
        store.gaussian(name, rows, cols, self.std, self.rng)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        init: &mut Init<'_, R>,
    ) -> Result<Self> {
        let w = init.weight(store, format!("{prefix}.w"), d_in, d_out)?;
        let b = if bias {
            Some(store.zeros(format!("{prefix}.b"), 1, d_out)?)
        } else {
            None
        };
        Ok(Linear { w, b, d_in, d_out })
    }

    pub fn forward(&self, t: &mut Tape<'_>, x: Var) -> Result<Var> {
        let w = t.param(self.w);
        let y = t.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = t.param(b);
                t.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Affine layers with `tanh` between them and none after the last.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `sizes` lists every width including input and output, so a two-layer
    /// MLP is `[d_in, hidden, d_out]`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        sizes: &[usize],
        init: &mut Init<'_, R>,
    ) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::invalid("mlp needs at least input and output widths"));
        }
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{prefix}.l{i}"), w[0], w[1], true, init))
            .collect::<Result<_>>()?;
        Ok(Mlp { layers })
    }

    pub fn forward(&self, t: &mut Tape<'_>, x: Var) -> Result<Var> {
        let width = t.value(x).cols();
        if width != self.layers[0].d_in {
            return Err(Error::Shape {
                op: "mlp",
                left: t.value(x).shape().to_vec(),
                right: vec![self.layers[0].d_in],
            });
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(t, h)?;
            if i < last {
                h = t.tanh(h);
            }
        }
        Ok(h)
    }
}

/// GRU cell with the reset gate applied to the previous state before the
/// candidate's recurrent product:
///
/// ```text
/// z = σ(x W_z + h U_z + b_z)
/// r = σ(x W_r + h U_r + b_r)
/// ĥ = tanh(x W_h + (r ⊙ h) U_h + b_h)
/// h' = (1 − z) ⊙ h + z ⊙ ĥ
/// ```
#[derive(Debug, Clone)]
pub struct GruCell {
    pub w_z: ParamId,
    pub u_z: ParamId,
    pub b_z: ParamId,
    pub w_r: ParamId,
    pub u_r: ParamId,
    pub b_r: ParamId,
    pub w_h: ParamId,
    pub u_h: ParamId,
    pub b_h: ParamId,
    pub d_in: usize,
    pub d_hidden: usize,
}

impl GruCell {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        d_hidden: usize,
        init: &mut Init<'_, R>,
    ) -> Result<Self> {
        let mut w = |s: &mut ParamStore, n: &str, r| init.weight(s, format!("{prefix}.{n}"), r, d_hidden);
        let w_z = w(store, "w_z", d_in)?;
        let u_z = w(store, "u_z", d_hidden)?;
        let w_r = w(store, "w_r", d_in)?;
        let u_r = w(store, "u_r", d_hidden)?;
        let w_h = w(store, "w_h", d_in)?;
        let u_h = w(store, "u_h", d_hidden)?;
        let b_z = store.zeros(format!("{prefix}.b_z"), 1, d_hidden)?;
        let b_r = store.zeros(format!("{prefix}.b_r"), 1, d_hidden)?;
        let b_h = store.zeros(format!("{prefix}.b_h"), 1, d_hidden)?;
        Ok(GruCell {
            w_z,
            u_z,
            b_z,
            w_r,
            u_r,
            b_r,
            w_h,
            u_h,
            b_h,
            d_in,
            d_hidden,
        })
    }

    fn gate(&self, t: &mut Tape<'_>, x: Var, h: Var, w: ParamId, u: ParamId, b: ParamId) -> Result<Var> {
        let (w, u, b) = (t.param(w), t.param(u), t.param(b));
        let xw = t.matmul(x, w)?;
        let hu = t.matmul(h, u)?;
        let s = t.add(xw, hu)?;
        t.add_row(s, b)
    }

    /// One step on a `1 × d_in` input and `1 × d_hidden` state.
    pub fn step(&self, t: &mut Tape<'_>, x: Var, h_prev: Var) -> Result<Var> {
        let (xs, hs) = (t.value(x).shape().to_vec(), t.value(h_prev).shape().to_vec());
        if t.value(x).cols() != self.d_in || t.value(h_prev).cols() != self.d_hidden {
            return Err(Error::Shape {
                op: "gru_cell",
                left: xs,
                right: hs,
            });
        }
        let z_pre = self.gate(t, x, h_prev, self.w_z, self.u_z, self.b_z)?;
        let z = t.sigmoid(z_pre);
        let r_pre = self.gate(t, x, h_prev, self.w_r, self.u_r, self.b_r)?;
        let r = t.sigmoid(r_pre);
        let rh = t.mul(r, h_prev)?;
        let cand_pre = self.gate(t, x, rh, self.w_h, self.u_h, self.b_h)?;
        let cand = t.tanh(cand_pre);
        let keep = t.one_minus(z);
        let old = t.mul(keep, h_prev)?;
        let new = t.mul(z, cand)?;
        t.add(old, new)
    }

    /// Runs over the rows of `xs` from a zero state; returns all states
    /// stacked `[n × d_hidden]`.
    pub fn run(&self, t: &mut Tape<'_>, xs: Var) -> Result<Var> {
        let n = t.value(xs).rows();
        let mut h = t.constant(Tensor::zeros(1, self.d_hidden));
        let mut states = Vec::with_capacity(n);
        for i in 0..n {
            let x = t.row(xs, i)?;
            h = self.step(t, x, h)?;
            states.push(h);
        }
        t.concat_rows(&states)
    }

    /// Final state after running over the rows of `xs`.
    pub fn last_state(&self, t: &mut Tape<'_>, xs: Var) -> Result<Var> {
        let n = t.value(xs).rows();
        let mut h = t.constant(Tensor::zeros(1, self.d_hidden));
        for i in 0..n {
            let x = t.row(xs, i)?;
            h = self.step(t, x, h)?;
        }
        Ok(h)
    }
}

/// Additive attention pooling `att(X, r)`:
/// `β'_j = vᵀ tanh(W_x x_j + W_r r)`, `β = softmax(β')`, output `Σ β_j x_j`.
#[derive(Debug, Clone)]
pub struct AdditiveAttention {
    pub w_x: ParamId,
    pub w_q: ParamId,
    pub v: ParamId,
}

/// Keys projected once so repeated queries against the same memory only pay
/// for the query side.
#[derive(Debug, Clone, Copy)]
pub struct AttentionMemory {
    pub items: Var,
    pub projected: Var,
}

impl AdditiveAttention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        d_item: usize,
        d_query: usize,
        d_att: usize,
        init: &mut Init<'_, R>,
    ) -> Result<Self> {
        Ok(AdditiveAttention {
            w_x: init.weight(store, format!("{prefix}.w_x"), d_item, d_att)?,
            w_q: init.weight(store, format!("{prefix}.w_q"), d_query, d_att)?,
            v: init.weight(store, format!("{prefix}.v"), d_att, 1)?,
        })
    }

    pub fn memory(&self, t: &mut Tape<'_>, items: Var) -> Result<AttentionMemory> {
        let w = t.param(self.w_x);
        let projected = t.matmul(items, w)?;
        Ok(AttentionMemory { items, projected })
    }

    /// Attention weights `[1 × n]` over the memory rows.
    pub fn weights(&self, t: &mut Tape<'_>, mem: &AttentionMemory, query: Var) -> Result<Var> {
        let wq = t.param(self.w_q);
        let q = t.matmul(query, wq)?;
        let pre = t.add_row(mem.projected, q)?;
        let act = t.tanh(pre);
        let v = t.param(self.v);
        let scores = t.matmul(act, v)?;
        let scores = t.transpose(scores);
        t.softmax_rows(scores, None)
    }

    /// Pooled vector `[1 × d_item]`.
    pub fn pool(&self, t: &mut Tape<'_>, mem: &AttentionMemory, query: Var) -> Result<Var> {
        let beta = self.weights(t, mem, query)?;
        t.matmul(beta, mem.items)
    }
}

/// Scaled dot-product attention of every query row over the key rows:
/// `softmax(Q Kᵀ / √d) K`. Returns `(weights, pooled)`.
pub fn dot_attention(t: &mut Tape<'_>, queries: Var, keys: Var, mask: Option<Mask<'_>>) -> Result<(Var, Var)> {
    let d = t.value(keys).cols() as f64;
    let scores = t.matmul_bt(queries, keys)?;
    let scores = t.scale(scores, 1.0 / d.sqrt());
    let alpha = t.softmax_rows(scores, mask)?;
    let pooled = t.matmul(alpha, keys)?;
    Ok((alpha, pooled))
}
