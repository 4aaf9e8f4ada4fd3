//! Observation-dependent baseline `B_ψ(T, C)`, a learned predictor of the
//! comment log-likelihood with its own parameters ψ.

use super::scorer::{PairScorer, ScorerDims};
use crate::error::Result;
use crate::numerics::{ParamStore, Tape, Var};
use crate::rng::{self, stream};

pub const PREFIX: &str = "baseline";

#[derive(Debug, Clone)]
pub struct BaselineNet {
    pub scorer: PairScorer,
    pub store: ParamStore,
}

impl BaselineNet {
    pub fn new(dims: &ScorerDims, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let scorer = PairScorer::new(dims, PREFIX, &mut store, &mut rng::derive(seed, &[stream::BASELINE_INIT]))?;
        Ok(BaselineNet { scorer, store })
    }

    /// `[1 × 1]` node on a tape over `self.store`.
    pub fn node(&self, t: &mut Tape<'_>, title: &[usize], comment: &[usize]) -> Result<Var> {
        self.scorer.logit(t, title, comment)
    }

    pub fn value(&self, title: &[usize], comment: &[usize]) -> Result<f64> {
        let mut t = Tape::new(&self.store);
        let v = self.node(&mut t, title, comment)?;
        let out = t.scalar(v);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{finite_difference_check, Coverage, DEFAULT_EPS};
    use crate::numerics::Tensor;

    fn dims() -> ScorerDims {
        ScorerDims {
            vocab_size: 10,
            emb: 8,
            hidden: 4,
            mlp_hidden: 6,
            init_std: 0.3,
        }
    }

    #[test]
    fn finite_scalar() {
        let b = BaselineNet::new(&dims(), 3).unwrap();
        assert!(b.value(&[1, 2], &[2, 5, 3]).unwrap().is_finite());
    }

    #[test]
    fn regression_gradient_matches_finite_differences() {
        let b = BaselineNet::new(&dims(), 4).unwrap();
        let r = finite_difference_check(
            &b.store,
            |t| {
                let v = b.node(t, &[1, 2], &[2, 5, 3])?;
                let target = t.constant(Tensor::scalar(-3.0));
                let d = t.sub(v, target)?;
                Ok(t.mul(d, d)?)
            },
            DEFAULT_EPS,
            Coverage::All,
        )
        .unwrap();
        assert!(r.passes(1e-4), "{r}");
    }
}
