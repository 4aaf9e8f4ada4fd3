//! One optimisation step of each phase.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::baseline::BaselineNet;
use super::batch_gradients;
use super::optim::{AdaGrad, Sgd};
use crate::corpus::EncodedTriple;
use crate::error::Result;
use crate::model::DeepCom;
use crate::numerics::{Backward, Gradients, ParamStore, Tape, Tensor, Var};
use crate::parallel::{ordered_fold, ordered_map};
use crate::reading::{Article, SpanSet};
use crate::rng::{self, stream};

/// What one step reports; also the training log record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub loss: f64,
    /// Mean `log P(C | S, T)` over the batch (and samples).
    pub mean_log_p: f64,
    /// Pre-training: 0. Lower-bound steps: the batch baseline `B`.
    pub baseline: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

/// `−(log P(S̃ | T, B) + log P(C | S̃, T))` and `log P(C | S̃, T)`.
pub fn pretrain_loss(model: &DeepCom, t: &mut Tape<'_>, data: &EncodedTriple, spans: &SpanSet) -> Result<(Var, f64)> {
    let mut r = model.read(t, &Article::from(data))?;
    let log_ps = model.reading.span_set_log_prob(t, &mut r, spans)?;
    let log_pc = model.comment_log_prob(t, &r, spans, data.comment())?;
    let ll = t.add(log_ps, log_pc)?;
    Ok((t.scale(ll, -1.0), t.scalar(log_pc)))
}

/// Batch-mean pre-training loss and one AdaGrad step on every model
/// parameter.
pub fn pretrain_step(
    model: &DeepCom,
    store: &mut ParamStore,
    opt: &AdaGrad,
    batch: &[(&EncodedTriple, &SpanSet)],
) -> Result<StepStats> {
    store.check_finite()?;
    let n = batch.len() as f64;
    let (loss, grads, log_pcs) = batch_gradients(store, batch, 1.0 / n, |_, (d, s), t| pretrain_loss(model, t, d, s))?;
    let mean_log_p = log_pcs.iter().sum::<f64>() / n;
    grads.check_finite(store)?;
    let grad_norm = grads.global_norm();
    opt.update(store, &grads)?;
    Ok(StepStats {
        loss,
        mean_log_p,
        baseline: 0.0,
        grad_norm,
    })
}

/// One draw of the lower-bound estimator for a single example, with separate
/// gradients of `log P(C | S_eff, T)` and `log P(S | T, B)`. The full
/// single-sample estimate with a constant baseline `c` is
/// `pc_grad + (log_pc − c) · ps_grad`.
#[derive(Debug, Clone)]
pub struct SampleTerms {
    pub drawn: SpanSet,
    pub effective: SpanSet,
    pub log_pc: f64,
    pub log_ps: f64,
    pub pc_grad: Gradients,
    pub ps_grad: Gradients,
}

pub fn sample_terms<R: Rng + ?Sized>(model: &DeepCom, store: &ParamStore, data: &EncodedTriple, rng: &mut R) -> Result<SampleTerms> {
    let mut t = Tape::new(store);
    let mut r = model.read(&mut t, &Article::from(data))?;
    let s = model.reading.sample_span_set(&mut t, &mut r, rng)?;
    let log_ps = model.reading.span_set_log_prob(&mut t, &mut r, &s.drawn)?;
    let log_pc = model.comment_log_prob(&mut t, &r, &s.effective, data.comment())?;
    Ok(SampleTerms {
        log_pc: t.scalar(log_pc),
        log_ps: t.scalar(log_ps),
        pc_grad: t.backward(log_pc)?.into_gradients(store),
        ps_grad: t.backward(log_ps)?.into_gradients(store),
        drawn: s.drawn,
        effective: s.effective,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McConfig {
    /// Samples per example (J).
    pub samples: usize,
    pub sgd: Sgd,
    pub baseline_opt: AdaGrad,
    /// 0 disables clipping.
    pub clip_norm: f64,
    pub seed: u64,
}

struct ExampleTerms {
    /// ∂/∂Θ of `(1/J) Σ_n [log P(C|S_n) + (R_n − b) log P(S_n)]`.
    weighted: Backward,
    /// ∂/∂Θ of `(1/J) Σ_n log P(S_n)`.
    score: Backward,
    returns: Vec<f64>,
    b: f64,
}

/// One lower-bound step. Per example, `J` span sets are drawn; with
/// `R = log P(C | S_eff, T)`, `b = B_ψ(T, C)` and `B` the batch mean of
/// `R − b`, the ascent direction is
/// `(1/J) Σ_n [∂R_n + (R_n − b − B) ∂log P(S_n)]`, averaged over the batch.
/// Because `B` needs the whole batch, the `B` part is accumulated separately
/// and subtracted once. Θ takes an SGD step on the negated direction; ψ then
/// takes an AdaGrad step on `(R − b − B)²`.
pub fn mc_gradient_step(
    model: &DeepCom,
    store: &mut ParamStore,
    baseline: &mut BaselineNet,
    batch: &[&EncodedTriple],
    step: usize,
    cfg: &McConfig,
) -> Result<StepStats> {
    store.check_finite()?;
    baseline.store.check_finite()?;
    let j = cfg.samples.max(1);
    let inv_j = 1.0 / j as f64;
    let per = |i: usize, data: &&EncodedTriple| -> Result<ExampleTerms> {
        let b = baseline.value(data.title(), data.comment())?;
        let mut rng = rng::derive(cfg.seed, &[stream::SPAN_SAMPLE, step as u64, i as u64]);
        let mut t = Tape::new(store);
        let mut r = model.read(&mut t, &Article::from(*data))?;
        let mut weighted = Vec::with_capacity(2 * j);
        let mut score = Vec::with_capacity(j);
        let mut returns = Vec::with_capacity(j);
        for _ in 0..j {
            let s = model.reading.sample_span_set(&mut t, &mut r, &mut rng)?;
            let log_ps = model.reading.span_set_log_prob(&mut t, &mut r, &s.drawn)?;
            let log_pc = model.comment_log_prob(&mut t, &r, &s.effective, data.comment())?;
            let ret = t.scalar(log_pc);
            returns.push(ret);
            weighted.push(log_pc);
            weighted.push(t.scale(log_ps, ret - b));
            score.push(log_ps);
        }
        let w = t.add_all(&weighted)?;
        let w = t.scale(w, inv_j);
        let sc = t.add_all(&score)?;
        let sc = t.scale(sc, inv_j);
        Ok(ExampleTerms {
            weighted: t.backward(w)?,
            score: t.backward(sc)?,
            returns,
            b,
        })
    };
    let init = (Gradients::zeros_like(store), Gradients::zeros_like(store), Vec::new());
    let (mut g_w, g_s, per_example) = ordered_fold(batch, per, init, |(mut gw, mut gs, mut ex), _, e| {
        gw.add_backward(&e.weighted, 1.0);
        gs.add_backward(&e.score, 1.0);
        ex.push((e.returns, e.b));
        Ok((gw, gs, ex))
    })?;

    let count = (batch.len() * j) as f64;
    let big_b = per_example
        .iter()
        .flat_map(|(rs, b)| rs.iter().map(move |r| r - b))
        .sum::<f64>()
        / count;
    let mean_log_p = per_example.iter().flat_map(|(rs, _)| rs.iter()).sum::<f64>() / count;

    g_w.add_scaled(&g_s, -big_b);
    g_w.scale(-1.0 / batch.len() as f64);
    g_w.check_finite(store)?;
    let grad_norm = g_w.clip_global_norm(cfg.clip_norm);
    cfg.sgd.update(store, &g_w)?;

    let returns: Vec<Vec<f64>> = per_example.into_iter().map(|(rs, _)| rs).collect();
    baseline_step(baseline, batch, &returns, big_b, &cfg.baseline_opt)?;

    Ok(StepStats {
        loss: -mean_log_p,
        mean_log_p,
        baseline: big_b,
        grad_norm,
    })
}

/// One AdaGrad step of ψ on `(1/J) Σ_n (b − (R_n − B))²`, averaged over
/// the batch. Returns the loss before the step.
pub fn baseline_step(
    baseline: &mut BaselineNet,
    batch: &[&EncodedTriple],
    returns: &[Vec<f64>],
    big_b: f64,
    opt: &AdaGrad,
) -> Result<f64> {
    let targets: Vec<(&EncodedTriple, &Vec<f64>)> = batch.iter().copied().zip(returns).collect();
    let (loss, g_psi, _) = {
        let net = &*baseline;
        batch_gradients(&net.store, &targets, 1.0 / batch.len() as f64, |_, (data, rs), t| {
            let v = net.node(t, data.title(), data.comment())?;
            let mut sq = Vec::with_capacity(rs.len());
            for r in rs.iter() {
                let target = t.constant(Tensor::scalar(r - big_b));
                let d = t.sub(v, target)?;
                sq.push(t.mul(d, d)?);
            }
            let s = t.add_all(&sq)?;
            Ok((t.scale(s, 1.0 / rs.len().max(1) as f64), ()))
        })?
    };
    g_psi.check_finite(&baseline.store)?;
    opt.update(&mut baseline.store, &g_psi)?;
    Ok(loss)
}

/// Trains ψ alone against a frozen model: each step draws `samples` span
/// sets per example and regresses as in [`mc_gradient_step`]. Returns the
/// per-step regression loss.
pub fn fit_baseline(
    model: &DeepCom,
    store: &ParamStore,
    baseline: &mut BaselineNet,
    batch: &[&EncodedTriple],
    steps: usize,
    samples: usize,
    opt: &AdaGrad,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let returns = ordered_map(batch, |i, data| {
            let mut rng = rng::derive(seed, &[stream::BASELINE_FIT, step as u64, i as u64]);
            let mut t = Tape::new(store);
            let mut r = model.read(&mut t, &Article::from(*data))?;
            (0..samples.max(1))
                .map(|_| {
                    let s = model.reading.sample_span_set(&mut t, &mut r, &mut rng)?;
                    let lp = model.comment_log_prob(&mut t, &r, &s.effective, data.comment())?;
                    Ok(t.scalar(lp))
                })
                .collect::<Result<Vec<f64>>>()
        })?;
        let mut sum = 0.0;
        let mut count = 0usize;
        for (data, rs) in batch.iter().zip(&returns) {
            let b = baseline.value(data.title(), data.comment())?;
            sum += rs.iter().map(|r| r - b).sum::<f64>();
            count += rs.len();
        }
        let big_b = sum / count as f64;
        losses.push(baseline_step(baseline, batch, &returns, big_b, opt)?);
    }
    Ok(losses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::numerics::gradcheck::{finite_difference_check, Coverage, DEFAULT_EPS};
    use crate::training::ScorerDims;
    use crate::toy;

    fn model(seed: u64) -> (DeepCom, ParamStore) {
        DeepCom::initialise(&toy::model_config(12), seed).unwrap()
    }

    fn baseline() -> BaselineNet {
        BaselineNet::new(
            &ScorerDims {
                vocab_size: 12,
                emb: 4,
                hidden: 4,
                mlp_hidden: 4,
                init_std: 0.1,
            },
            1,
        )
        .unwrap()
    }

    fn mc(seed: u64, clip: f64) -> McConfig {
        McConfig {
            samples: 1,
            sgd: Sgd { lr: 0.01 },
            baseline_opt: AdaGrad { lr: 0.15, acc0: 0.1 },
            clip_norm: clip,
            seed,
        }
    }

    #[test]
    fn pretrain_gradient_on_six_tokens() {
        let (m, store) = model(2);
        let data = toy::encoded(&[4, 5], &[6, 7, 8, 9, 10, 11], &[7, 8]);
        let spans = SpanSet::new(vec![(1, 2), (4, 5)], 6).unwrap();
        let r = finite_difference_check(
            &store,
            |t| Ok(pretrain_loss(&m, t, &data, &spans)?.0),
            DEFAULT_EPS,
            Coverage::Strided(12),
        )
        .unwrap();
        assert!(r.passes(1e-4), "{r}");
    }

    #[test]
    fn pretrain_loss_falls_on_five_examples() {
        let (m, mut store) = model(3);
        let mut rng = rng::derive(3, &[99]);
        let data: Vec<EncodedTriple> = (0..5).map(|_| toy::random_instance(&mut rng, 12, 2, 5, 3)).collect();
        let spans: Vec<SpanSet> = (0..5).map(|i| SpanSet::singleton(i % 5, 4)).collect();
        let batch: Vec<_> = data.iter().zip(&spans).collect();
        let opt = AdaGrad { lr: 0.15, acc0: 0.1 };
        let losses: Vec<f64> = (0..50)
            .map(|_| pretrain_step(&m, &mut store, &opt, &batch).unwrap().loss)
            .collect();
        assert!(losses[0] > 0.0);
        for k in 0..40 {
            assert!(losses[k + 10] < losses[k], "window at {k}: {losses:?}");
        }
    }

    #[test]
    fn single_example_updates_only_pathwise() {
        let (m, store) = model(4);
        let data = toy::encoded(&[4, 5], &[6, 7, 8, 9], &[7, 8]);
        let step = 3;
        let cfg = mc(17, 0.0);
        let terms = sample_terms(
            &m,
            &store,
            &data,
            &mut rng::derive(cfg.seed, &[stream::SPAN_SAMPLE, step as u64, 0]),
        )
        .unwrap();
        let mut updated = store.clone();
        let mut b = baseline();
        let stats = mc_gradient_step(&m, &mut updated, &mut b, &[&data], step, &cfg).unwrap();
        assert_eq!(stats.mean_log_p, terms.log_pc);
        for id in store.ids() {
            let before = store.value(id).data();
            let after = updated.value(id).data();
            for (k, (x, y)) in before.iter().zip(after).enumerate() {
                let g = terms.pc_grad.get(id).map_or(0.0, |g| g.data()[k]);
                assert!((y - (x + 0.01 * g)).abs() < 1e-12, "{}[{k}]", store.name(id));
            }
        }
    }

    #[test]
    fn baseline_moves_toward_return() {
        let (m, mut store) = model(5);
        let data = toy::encoded(&[4, 5], &[6, 7, 8, 9], &[7, 8]);
        let mut b = baseline();
        let before = b.value(data.title(), data.comment()).unwrap();
        let mut stats = mc_gradient_step(&m, &mut store, &mut b, &[&data], 0, &mc(1, 5.0)).unwrap();
        let mut after = b.value(data.title(), data.comment()).unwrap();
        // single example: B = R − b, so the regression target is b itself
        assert!((after - before).abs() < 1e-12);
        let other = toy::encoded(&[6], &[4, 5, 9], &[10]);
        for s in 1..5 {
            stats = mc_gradient_step(&m, &mut store, &mut b, &[&data, &other], s, &mc(1, 5.0)).unwrap();
            after = b.value(data.title(), data.comment()).unwrap();
        }
        assert!(stats.loss.is_finite() && after.is_finite());
        assert_ne!(after, before);
    }

    #[test]
    fn nan_aborts_with_parameter_name() {
        let (m, mut store) = model(6);
        let id = store.id("reading.start.l0.w").unwrap();
        store.value_mut(id).data_mut()[0] = f64::NAN;
        let data = toy::encoded(&[4, 5], &[6, 7, 8, 9], &[7, 8]);
        let snapshot = store.clone();
        match mc_gradient_step(&m, &mut store, &mut baseline(), &[&data], 0, &mc(1, 5.0)) {
            Err(Error::NonFinite { param }) => assert!(param.starts_with("reading."), "{param}"),
            other => panic!("{other:?}"),
        }
        assert_eq!(store.value(id).data()[1], snapshot.value(id).data()[1]);
    }

    #[test]
    fn step_is_deterministic_across_thread_counts() {
        let (m, store) = model(7);
        let mut rng = rng::derive(7, &[1]);
        let data: Vec<EncodedTriple> = (0..6).map(|_| toy::random_instance(&mut rng, 12, 2, 4, 3)).collect();
        let batch: Vec<&EncodedTriple> = data.iter().collect();
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                let mut s = store.clone();
                let mut b = baseline();
                let stats = mc_gradient_step(&m, &mut s, &mut b, &batch, 0, &mc(2, 5.0)).unwrap();
                (stats, s.flatten_values())
            })
        };
        let (a, pa) = run(1);
        let (b, pb) = run(4);
        assert_eq!(a, b);
        assert_eq!(pa, pb);
    }

    #[test]
    fn fitted_baseline_regression_loss_falls() {
        let (m, store) = model(6);
        // returns differ across examples mostly through comment length
        let data: Vec<_> = [1, 2, 4, 6]
            .iter()
            .enumerate()
            .map(|(k, &len)| toy::random_instance(&mut rng::derive(6, &[k as u64]), 12, 2, 4, len))
            .collect();
        let batch: Vec<_> = data.iter().collect();
        // B absorbs the mean return, so only example-specific features carry
        // gradient; at small init those barely differ
        let dims = ScorerDims {
            vocab_size: 12,
            emb: 8,
            hidden: 8,
            mlp_hidden: 8,
            init_std: 0.5,
        };
        let mut b = BaselineNet::new(&dims, 1).unwrap();
        let opt = AdaGrad { lr: 0.15, acc0: 0.1 };
        let losses = fit_baseline(&m, &store, &mut b, &batch, 200, 2, &opt, 1).unwrap();
        let head: f64 = losses[..10].iter().sum();
        let tail: f64 = losses[190..].iter().sum();
        assert!(tail < 0.5 * head, "{head} -> {tail}");
    }
}
