//! Learning: artificial spans and the matching model, pre-training, the
//! Monte Carlo lower-bound step with baselines, optimizers and the full loop.

pub mod artificial;
pub mod baseline;
pub mod config;
pub mod matcher;
pub mod optim;
pub mod run;
pub mod scorer;
pub mod steps;

pub use artificial::{construct_artificial_spans, ArtificialSpan, ArtificialSpanSet, Provenance, SpanRules};
pub use baseline::BaselineNet;
pub use config::TrainConfig;
pub use matcher::{train_matcher, MatchArticle, MatcherConfig, MatchingModel};
pub use optim::{AdaGrad, Sgd};
pub use scorer::{PairScorer, ScorerDims};
pub use steps::{
    baseline_step, fit_baseline, mc_gradient_step, pretrain_loss, pretrain_step, sample_terms, McConfig, SampleTerms, StepStats,
};

use crate::error::Result;
use crate::numerics::{Gradients, ParamStore, Tape, Var};
use crate::parallel::ordered_fold;

/// Runs `f` per item on its own tape and returns `scale · Σ root values`,
/// `scale · Σ ∂root/∂θ` summed in item order, and each item's side value.
pub(crate) fn batch_gradients<T, A, F>(store: &ParamStore, items: &[T], scale: f64, f: F) -> Result<(f64, Gradients, Vec<A>)>
where
    T: Sync,
    A: Send,
    F: Fn(usize, &T, &mut Tape<'_>) -> Result<(Var, A)> + Sync,
{
    let per_item = |i: usize, x: &T| {
        let mut t = Tape::new(store);
        let (root, aux) = f(i, x, &mut t)?;
        Ok((t.scalar(root), t.backward(root)?, aux))
    };
    let init = (0.0, Gradients::zeros_like(store), Vec::with_capacity(items.len()));
    ordered_fold(items, per_item, init, |(sum, mut g, mut out), _, (v, b, aux)| {
        g.add_backward(&b, scale);
        out.push(aux);
        Ok((sum + scale * v, g, out))
    })
}
