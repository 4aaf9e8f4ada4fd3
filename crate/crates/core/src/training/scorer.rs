//! Two GRU encoders whose last states feed a three-layer MLP. Shared by the
//! matching model and the observation-dependent baseline; each owns its own
//! parameter store.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::layers::{GruCell, Init, Mlp};
use crate::numerics::{ParamId, ParamStore, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScorerDims {
    pub vocab_size: usize,
    pub emb: usize,
    pub hidden: usize,
    pub mlp_hidden: usize,
    pub init_std: f64,
}

#[derive(Debug, Clone)]
pub struct PairScorer {
    pub emb: ParamId,
    pub left: GruCell,
    pub right: GruCell,
    pub mlp: Mlp,
}

impl PairScorer {
    pub fn new<R: Rng + ?Sized>(dims: &ScorerDims, prefix: &str, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        let mut init = Init {
            std: dims.init_std,
            rng,
        };
        let emb = store.gaussian(format!("{prefix}.emb"), dims.vocab_size, dims.emb, dims.init_std, init.rng)?;
        let left = GruCell::new(store, &format!("{prefix}.left"), dims.emb, dims.hidden, &mut init)?;
        let right = GruCell::new(store, &format!("{prefix}.right"), dims.emb, dims.hidden, &mut init)?;
        let h = dims.mlp_hidden;
        let mlp = Mlp::new(store, &format!("{prefix}.mlp"), &[2 * dims.hidden, h, h, 1], &mut init)?;
        Ok(PairScorer { emb, left, right, mlp })
    }

    fn encode(&self, t: &mut Tape<'_>, gru: &GruCell, ids: &[usize]) -> Result<Var> {
        if ids.is_empty() {
            return Err(Error::invalid("cannot score an empty sequence"));
        }
        let emb = t.param(self.emb);
        let e = t.gather_rows(emb, ids)?;
        gru.last_state(t, e)
    }

    /// Unsquashed `[1 × 1]` score of the pair.
    pub fn logit(&self, t: &mut Tape<'_>, left: &[usize], right: &[usize]) -> Result<Var> {
        let l = self.encode(t, &self.left, left)?;
        let r = self.encode(t, &self.right, right)?;
        let x = t.concat_cols(&[l, r])?;
        self.mlp.forward(t, x)
    }
}
