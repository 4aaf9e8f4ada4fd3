//! Brute-force oracles over tiny instances: the whole span-set space is
//! enumerated, so normalisation, both objectives and the exact lower-bound
//! gradient can be computed without sampling.

pub mod suite;

pub use crate::reading::enumerate_span_sets;
pub use suite::{run_suite, OracleResult, SuiteConfig};

use rand::Rng;

use crate::corpus::EncodedTriple;
use crate::error::{Error, Result};
use crate::model::DeepCom;
use crate::numerics::{Gradients, ParamStore, Tape};
use crate::parallel::{ordered_fold, ordered_map};
use crate::reading::{Article, SpanSet};
use crate::training::sample_terms;

/// Largest body the objectives are enumerated over.
pub const MAX_OBJECTIVE_BODY: usize = 4;
/// Largest body the exact gradient is enumerated over.
pub const MAX_GRADIENT_BODY: usize = 3;

/// One enumerated span set with `log P(S | T, B)` and
/// `log P(C | S_eff, T)`.
#[derive(Debug, Clone)]
pub struct SpanSetTerms {
    pub spans: SpanSet,
    pub log_ps: f64,
    pub log_pc: f64,
}

#[derive(Debug, Clone)]
pub struct EnumerationReport {
    pub count: usize,
    /// `Σ_S P(S | T, B)`.
    pub total_mass: f64,
    /// `log Σ_S P(S) P(C | S, T)`.
    pub objective: f64,
    /// `Σ_S P(S) log P(C | S, T)`.
    pub lower_bound: f64,
    /// Exact lower-bound gradient, when the body is small enough.
    pub gradient: Option<Gradients>,
}

fn log_sum_exp(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn span_set_terms(model: &DeepCom, store: &ParamStore, data: &EncodedTriple) -> Result<Vec<SpanSetTerms>> {
    let sets = enumerate_span_sets(data.body_len())?;
    ordered_map(&sets, |_, s| {
        let mut t = Tape::new(store);
        let mut r = model.read(&mut t, &Article::from(data))?;
        let log_ps = model.reading.span_set_log_prob(&mut t, &mut r, s)?;
        let eff = model.reading.effective_span_set(&mut t, &mut r, s)?;
        let log_pc = model.comment_log_prob(&mut t, &r, &eff, data.comment())?;
        Ok(SpanSetTerms {
            spans: s.clone(),
            log_ps: t.scalar(log_ps),
            log_pc: t.scalar(log_pc),
        })
    })
}

/// `(J, L)`: the log marginal likelihood and its Jensen lower bound.
pub fn exact_objectives(model: &DeepCom, store: &ParamStore, data: &EncodedTriple) -> Result<(f64, f64)> {
    let r = enumerate(model, store, data, false)?;
    Ok((r.objective, r.lower_bound))
}

pub fn enumerate(model: &DeepCom, store: &ParamStore, data: &EncodedTriple, with_gradient: bool) -> Result<EnumerationReport> {
    let m = data.body_len();
    if m > MAX_OBJECTIVE_BODY {
        return Err(Error::invalid(format!("exact objectives need body length <= {MAX_OBJECTIVE_BODY}, got {m}")));
    }
    let terms = span_set_terms(model, store, data)?;
    let gradient = if with_gradient {
        Some(exact_gradient(model, store, data, 0.0)?)
    } else {
        None
    };
    Ok(EnumerationReport {
        count: terms.len(),
        total_mass: terms.iter().map(|x| x.log_ps.exp()).sum(),
        objective: log_sum_exp(terms.iter().map(|x| x.log_ps + x.log_pc)),
        lower_bound: terms.iter().map(|x| x.log_ps.exp() * x.log_pc).sum(),
        gradient,
    })
}

/// `Σ_S P(S) [∂log P(C | S, T) + (log P(C | S, T) − c) ∂log P(S | T, B)]`.
/// With `c = 0` this is the exact gradient of the lower bound; any other
/// constant leaves it unchanged because `Σ_S P(S) ∂log P(S) = 0`.
pub fn exact_gradient(model: &DeepCom, store: &ParamStore, data: &EncodedTriple, c: f64) -> Result<Gradients> {
    let m = data.body_len();
    if m > MAX_GRADIENT_BODY {
        return Err(Error::invalid(format!("exact gradient needs body length <= {MAX_GRADIENT_BODY}, got {m}")));
    }
    let sets = enumerate_span_sets(m)?;
    let per = |_: usize, s: &SpanSet| {
        let mut t = Tape::new(store);
        let mut r = model.read(&mut t, &Article::from(data))?;
        let log_ps = model.reading.span_set_log_prob(&mut t, &mut r, s)?;
        let eff = model.reading.effective_span_set(&mut t, &mut r, s)?;
        let log_pc = model.comment_log_prob(&mut t, &r, &eff, data.comment())?;
        let (lps, lpc) = (t.scalar(log_ps), t.scalar(log_pc));
        let sf = t.scale(log_ps, lpc - c);
        let root = t.add(log_pc, sf)?;
        Ok((lps.exp(), t.backward(root)?))
    };
    ordered_fold(&sets, per, Gradients::zeros_like(store), |mut g, _, (p, b)| {
        g.add_backward(&b, p);
        Ok(g)
    })
}

/// `Σ_S P(S) ∂log P(S | T, B)`, which is zero for any valid distribution.
pub fn score_identity(model: &DeepCom, store: &ParamStore, data: &EncodedTriple) -> Result<Gradients> {
    let sets = enumerate_span_sets(data.body_len())?;
    let per = |_: usize, s: &SpanSet| {
        let mut t = Tape::new(store);
        let mut r = model.read(&mut t, &Article::from(data))?;
        let log_ps = model.reading.span_set_log_prob(&mut t, &mut r, s)?;
        Ok((t.scalar(log_ps).exp(), t.backward(log_ps)?))
    };
    ordered_fold(&sets, per, Gradients::zeros_like(store), |mut g, _, (p, b)| {
        g.add_backward(&b, p);
        Ok(g)
    })
}

/// One unit-norm random direction per parameter tensor. Projections onto
/// these turn per-coordinate comparisons into one statistic per tensor.
pub fn random_directions<R: Rng + ?Sized>(store: &ParamStore, rng: &mut R) -> Vec<Vec<f64>> {
    store
        .ids()
        .map(|id| {
            let n = store.value(id).len();
            let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            v.iter_mut().for_each(|x| *x /= norm);
            v
        })
        .collect()
}

pub fn project(g: &Gradients, store: &ParamStore, dirs: &[Vec<f64>]) -> Vec<f64> {
    store
        .ids()
        .zip(dirs)
        .map(|(id, d)| g.get(id).map_or(0.0, |g| g.data().iter().zip(d).map(|(a, b)| a * b).sum()))
        .collect()
}

/// Running mean and variance per component.
#[derive(Debug, Clone)]
pub struct Moments {
    pub n: usize,
    pub sum: Vec<f64>,
    pub sum_sq: Vec<f64>,
}

impl Moments {
    pub fn new(k: usize) -> Self {
        Moments {
            n: 0,
            sum: vec![0.0; k],
            sum_sq: vec![0.0; k],
        }
    }

    pub fn push(&mut self, x: &[f64]) {
        self.n += 1;
        for ((s, q), v) in self.sum.iter_mut().zip(&mut self.sum_sq).zip(x) {
            *s += v;
            *q += v * v;
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        self.sum.iter().map(|s| s / self.n as f64).collect()
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.sum
            .iter()
            .zip(&self.sum_sq)
            .map(|(s, q)| ((q - s * s / n) / (n - 1.0)).max(0.0))
            .collect()
    }

    pub fn std_error(&self) -> Vec<f64> {
        self.variance().iter().map(|v| (v / self.n as f64).sqrt()).collect()
    }
}

/// Agreement of the sampled single-draw estimator with the exact gradient,
/// per parameter tensor (projected).
#[derive(Debug, Clone)]
pub struct UnbiasednessReport {
    pub draws: usize,
    pub names: Vec<String>,
    pub exact: Vec<f64>,
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
}

impl UnbiasednessReport {
    /// `|mean − exact| / SE` per tensor; an SE of zero compares absolutely.
    pub fn z_scores(&self) -> Vec<f64> {
        self.exact
            .iter()
            .zip(&self.mean)
            .zip(&self.std_error)
            .map(|((e, m), se)| {
                let d = (m - e).abs();
                if *se > 0.0 {
                    d / se
                } else if d < 1e-12 {
                    0.0
                } else {
                    f64::INFINITY
                }
            })
            .collect()
    }

    pub fn worst(&self) -> (String, f64) {
        let z = self.z_scores();
        let i = (0..z.len()).fold(0, |b, i| if z[i] > z[b] { i } else { b });
        (self.names[i].clone(), z[i])
    }
}

/// What one z-score in an [`UnbiasednessReport`] covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resolution {
    /// A random unit projection per parameter tensor.
    Tensor,
    /// Every scalar parameter.
    Coordinate,
}

fn flatten(g: &Gradients, store: &ParamStore) -> Vec<f64> {
    let mut out = Vec::new();
    for id in store.ids() {
        match g.get(id) {
            Some(t) => out.extend_from_slice(t.data()),
            None => out.extend(std::iter::repeat_n(0.0, store.value(id).len())),
        }
    }
    out
}

/// Mean of `draws` single-sample estimates `∂R + (R − c) ∂log P(S)` with a
/// frozen constant baseline `c`, against the enumerated gradient.
pub fn check_unbiasedness(
    model: &DeepCom,
    store: &ParamStore,
    data: &EncodedTriple,
    c: f64,
    draws: usize,
    seed: u64,
    resolution: Resolution,
) -> Result<UnbiasednessReport> {
    let dirs = random_directions(store, &mut crate::rng::derive(seed, &[0]));
    let reduce = |g: &Gradients| match resolution {
        Resolution::Tensor => project(g, store, &dirs),
        Resolution::Coordinate => flatten(g, store),
    };
    let exact = reduce(&exact_gradient(model, store, data, 0.0)?);
    let idx: Vec<u64> = (0..draws as u64).collect();
    let per = |_: usize, &k: &u64| {
        let mut rng = crate::rng::derive(seed, &[1, k]);
        let s = sample_terms(model, store, data, &mut rng)?;
        let mut g = s.pc_grad;
        g.add_scaled(&s.ps_grad, s.log_pc - c);
        Ok(reduce(&g))
    };
    let moments = ordered_fold(&idx, per, Moments::new(exact.len()), |mut m, _, x| {
        m.push(&x);
        Ok(m)
    })?;
    let names = match resolution {
        Resolution::Tensor => store.ids().map(|id| store.name(id).to_string()).collect(),
        Resolution::Coordinate => store
            .ids()
            .flat_map(|id| (0..store.value(id).len()).map(move |i| format!("{}[{i}]", store.name(id))))
            .collect(),
    };
    Ok(UnbiasednessReport {
        draws,
        names,
        exact,
        mean: moments.mean(),
        std_error: moments.std_error(),
    })
}

/// Score-function term of a mini-batch with and without baselines, over
/// repeated paired draws of the span sets.
#[derive(Debug, Clone)]
pub struct VarianceReport {
    pub draws: usize,
    pub batch: usize,
    /// Trace of the covariance of `(1/B) Σ R_i ∂log P(S_i)`.
    pub var_zero: f64,
    /// Same for `(1/B) Σ (R_i − b_i − B) ∂log P(S_i)`.
    pub var_baselined: f64,
    /// Mean of `B` over draws.
    pub mean_big_b: f64,
    pub names: Vec<String>,
    pub mean_zero: Vec<f64>,
    pub se_zero: Vec<f64>,
    pub mean_baselined: Vec<f64>,
    pub se_baselined: Vec<f64>,
}

impl VarianceReport {
    /// Unpaired `|mean_a − mean_b| / sqrt(SE_a² + SE_b²)` per tensor
    /// projection.
    pub fn mean_z_scores(&self) -> Vec<f64> {
        (0..self.names.len())
            .map(|k| {
                let d = (self.mean_zero[k] - self.mean_baselined[k]).abs();
                let se = self.se_zero[k].hypot(self.se_baselined[k]);
                if se > 0.0 {
                    d / se
                } else if d < 1e-12 {
                    0.0
                } else {
                    f64::INFINITY
                }
            })
            .collect()
    }
}

/// Draws one span set per example of `batch`, `draws` times, and compares
/// the plain and the baselined score-function terms on the same draws.
/// `b_i` comes from `baseline`; `B` is the batch mean of `R − b` including
/// the example itself.
pub fn compare_baselines(
    model: &DeepCom,
    store: &ParamStore,
    baseline: &crate::training::BaselineNet,
    batch: &[&EncodedTriple],
    draws: usize,
    seed: u64,
) -> Result<VarianceReport> {
    if batch.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    let b: Vec<f64> = batch
        .iter()
        .map(|d| baseline.value(d.title(), d.comment()))
        .collect::<Result<_>>()?;
    let dirs = random_directions(store, &mut crate::rng::derive(seed, &[0]));
    let n = batch.len() as f64;
    let idx: Vec<u64> = (0..draws as u64).collect();
    let per = |_: usize, &k: &u64| {
        let mut terms = Vec::with_capacity(batch.len());
        for (i, data) in batch.iter().enumerate() {
            let mut rng = crate::rng::derive(seed, &[2, k, i as u64]);
            let s = sample_terms(model, store, data, &mut rng)?;
            terms.push((s.log_pc, flatten(&s.ps_grad, store)));
        }
        let big_b = terms.iter().zip(&b).map(|((r, _), bi)| r - bi).sum::<f64>() / n;
        let dim = terms[0].1.len();
        let (mut zero, mut based) = (vec![0.0; dim], vec![0.0; dim]);
        for ((r, g), bi) in terms.iter().zip(&b) {
            let (wz, wb) = (r / n, (r - bi - big_b) / n);
            for ((z, x), v) in zero.iter_mut().zip(based.iter_mut()).zip(g) {
                *z += wz * v;
                *x += wb * v;
            }
        }
        Ok((zero, based, big_b))
    };
    let project_flat = |v: &[f64]| -> Vec<f64> {
        let mut off = 0;
        dirs.iter()
            .map(|d| {
                let p = d.iter().zip(&v[off..off + d.len()]).map(|(a, x)| a * x).sum();
                off += d.len();
                p
            })
            .collect()
    };
    let dim: usize = dirs.iter().map(Vec::len).sum();
    let init = (
        Moments::new(dim),
        Moments::new(dim),
        Moments::new(dirs.len()),
        Moments::new(dirs.len()),
        0.0,
    );
    let (mz, mb, pz, pb, sum_b) = ordered_fold(&idx, per, init, |(mut mz, mut mb, mut pz, mut pb, s), _, (z, x, bb)| {
        pz.push(&project_flat(&z));
        pb.push(&project_flat(&x));
        mz.push(&z);
        mb.push(&x);
        Ok((mz, mb, pz, pb, s + bb))
    })?;
    Ok(VarianceReport {
        draws,
        batch: batch.len(),
        var_zero: mz.variance().iter().sum(),
        var_baselined: mb.variance().iter().sum(),
        mean_big_b: sum_b / draws as f64,
        names: store.ids().map(|id| store.name(id).to_string()).collect(),
        mean_zero: pz.mean(),
        se_zero: pz.std_error(),
        mean_baselined: pb.mean(),
        se_baselined: pb.std_error(),
    })
}
