//! The oracle suite behind `deepcom verify`, one pass/fail line per property.

use std::fmt;

use rayon::prelude::*;

use super::{check_unbiasedness, Resolution, enumerate, exact_gradient, score_identity, span_set_terms, SpanSetTerms};
use crate::corpus::{BOS, EOS};
use crate::error::Result;
use crate::generation::{beam_search, greedy, BeamConfig, Decoder, TransitionTable};
use crate::model::DeepCom;
use crate::numerics::gradcheck::{check_against, finite_difference_check, Coverage, GradCheckReport, DEFAULT_EPS};
use crate::numerics::{ParamStore, Tape, Tensor};
use crate::reading::{Article, SpanSet};
use crate::rng;
use crate::toy;
use crate::training::{pretrain_loss, BaselineNet, MatchingModel, ScorerDims};

const VOCAB: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for OracleResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag}  {}  ({})", self.name, self.detail)
    }
}

fn result(name: &str, passed: bool, detail: String) -> OracleResult {
    OracleResult {
        name: name.to_string(),
        passed,
        detail,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteConfig {
    pub seed: u64,
    /// Random seeds per gradient check.
    pub gradient_seeds: u64,
    pub jensen_instances: u64,
    /// Monte Carlo draws for the unbiasedness check.
    pub draws: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            seed: 1,
            gradient_seeds: 20,
            jensen_instances: 50,
            draws: 50_000,
        }
    }
}

pub fn run_suite(cfg: &SuiteConfig) -> Result<Vec<OracleResult>> {
    let mut out = gradient_oracles(cfg.seed, cfg.gradient_seeds, 1e-4)?;
    out.push(normalization(cfg.seed, 1e-9)?);
    out.push(jensen(cfg.seed, cfg.jensen_instances)?);
    out.push(exact_gradient_vs_finite_differences(cfg.seed, 1e-4)?);
    out.push(baseline_invariance(cfg.seed, 1e-9)?);
    out.push(unbiasedness(cfg.seed, cfg.draws, 3.0, Resolution::Coordinate)?);
    out.extend(beam_oracles(cfg.seed)?);
    Ok(out)
}

fn model(seed: u64) -> Result<(DeepCom, ParamStore)> {
    DeepCom::initialise(&toy::model_config(VOCAB), rng::derive_seed(seed, &[11]))
}

fn scorer_dims() -> ScorerDims {
    ScorerDims {
        vocab_size: VOCAB,
        emb: 8,
        hidden: 4,
        mlp_hidden: 6,
        init_std: 0.3,
    }
}

fn instance(seed: u64, title: usize, body: usize, comment: usize) -> crate::corpus::EncodedTriple {
    toy::random_instance(&mut rng::derive(seed, &[12]), VOCAB, title, body, comment)
}

fn worst(reports: Vec<GradCheckReport>) -> (f64, String) {
    reports
        .into_iter()
        .map(|r| (r.max_rel_error, r.to_string()))
        .fold((0.0, String::from("no coordinates")), |a, b| if b.0 >= a.0 { b } else { a })
}

type Check = fn(u64) -> Result<GradCheckReport>;

/// Tape against central differences for every differentiable objective, on
/// `seeds` random toy instances each, checking every coordinate.
pub fn gradient_oracles(seed: u64, seeds: u64, tol: f64) -> Result<Vec<OracleResult>> {
    let checks: [(&str, Check); 5] = [
        ("gradient: pre-training loss", |s| {
            let (m, store) = model(s)?;
            let data = instance(s, 2, 6, 3);
            let spans = SpanSet::new(vec![(0, 1), (3, 5)], 6)?;
            finite_difference_check(&store, |t| Ok(pretrain_loss(&m, t, &data, &spans)?.0), DEFAULT_EPS, Coverage::All)
        }),
        ("gradient: comment log-likelihood", |s| {
            let (m, store) = model(s)?;
            let data = instance(s, 2, 4, 3);
            let spans = SpanSet::new(vec![(1, 2)], 4)?;
            finite_difference_check(
                &store,
                |t| {
                    let r = m.read(t, &Article::from(&data))?;
                    m.comment_log_prob(t, &r, &spans, data.comment())
                },
                DEFAULT_EPS,
                Coverage::All,
            )
        }),
        ("gradient: span-set log-probability", |s| {
            let (m, store) = model(s)?;
            let data = instance(s, 2, 4, 3);
            let spans = SpanSet::new(vec![(0, 2), (1, 1), (3, 3)], 4)?;
            finite_difference_check(
                &store,
                |t| {
                    let mut r = m.read(t, &Article::from(&data))?;
                    m.reading.span_set_log_prob(t, &mut r, &spans)
                },
                DEFAULT_EPS,
                Coverage::All,
            )
        }),
        ("gradient: matching model", |s| {
            let mm = MatchingModel::new(&scorer_dims(), s)?;
            let d = instance(s, 3, 4, 3);
            finite_difference_check(
                &mm.store,
                |t| {
                    let pos = mm.scorer.logit(t, d.title(), d.comment())?;
                    let neg = mm.scorer.logit(t, d.title(), d.body())?;
                    let neg = t.scale(neg, -1.0);
                    let a = t.log_sigmoid(pos);
                    let b = t.log_sigmoid(neg);
                    t.add(a, b)
                },
                DEFAULT_EPS,
                Coverage::All,
            )
        }),
        ("gradient: baseline network", |s| {
            let b = BaselineNet::new(&scorer_dims(), s)?;
            let d = instance(s, 3, 4, 3);
            finite_difference_check(
                &b.store,
                |t| {
                    let v = b.node(t, d.title(), d.comment())?;
                    let target = t.constant(Tensor::scalar(-4.0));
                    let e = t.sub(v, target)?;
                    t.mul(e, e)
                },
                DEFAULT_EPS,
                Coverage::All,
            )
        }),
    ];
    checks
        .iter()
        .map(|(name, f)| {
            let reports = (0..seeds)
                .into_par_iter()
                .map(|k| f(rng::derive_seed(seed, &[k])))
                .collect::<Result<Vec<_>>>()?;
            let (err, detail) = worst(reports);
            Ok(result(name, err < tol, format!("{seeds} seeds, worst {detail}")))
        })
        .collect()
}

/// `Σ_S P(S | T, B) = 1` for bodies of one to four tokens.
pub fn normalization(seed: u64, tol: f64) -> Result<OracleResult> {
    let mut worst: f64 = 0.0;
    for m in 1..=4 {
        let (model, store) = model(rng::derive_seed(seed, &[m as u64]))?;
        let data = instance(seed + m as u64, 2, m, 2);
        let r = enumerate(&model, &store, &data, false)?;
        worst = worst.max((r.total_mass - 1.0).abs());
    }
    Ok(result(
        "normalization: span-set probabilities sum to 1 (m = 1..4)",
        worst < tol,
        format!("max |mass - 1| = {worst:.2e}"),
    ))
}

/// `L ≤ J` on random instances, strictly when `P(C | S)` varies.
pub fn jensen(seed: u64, instances: u64) -> Result<OracleResult> {
    let outcomes = (0..instances)
        .into_par_iter()
        .map(|k| {
            let s = rng::derive_seed(seed, &[100, k]);
            let (m, store) = model(s)?;
            let body = 1 + (k as usize % 4);
            let data = instance(s, 1 + k as usize % 3, body, 1 + k as usize % 4);
            let terms = span_set_terms(&m, &store, &data)?;
            let r = enumerate(&m, &store, &data, false)?;
            let lo = terms.iter().map(|x| x.log_pc).fold(f64::INFINITY, f64::min);
            let hi = terms.iter().map(|x| x.log_pc).fold(f64::NEG_INFINITY, f64::max);
            let varies = hi.exp() - lo.exp() > 1e-6;
            let naive = r.objective - r.lower_bound;
            let stable = jensen_gap(&terms);
            let ok = naive >= -1e-12
                && (naive - stable).abs() <= 1e-10 * r.objective.abs().max(1.0)
                && (!varies || stable > 0.0)
                && r.objective <= 0.0;
            Ok((ok, stable, varies))
        })
        .collect::<Result<Vec<_>>>()?;
    let failures = outcomes.iter().filter(|o| !o.0).count();
    let varying = outcomes.iter().filter(|o| o.2).count();
    let min_gap = outcomes.iter().filter(|o| o.2).map(|o| o.1).fold(f64::INFINITY, f64::min);
    Ok(result(
        "jensen: exact L <= exact J, strict when P(C|S) varies by > 1e-6",
        failures == 0,
        format!("{instances} instances ({varying} with varying P(C|S)), {failures} violations, smallest strict J - L {min_gap:.3e}"),
    ))
}

/// `J - L = log E[exp(l_S - L)]` with `l_S = log P(C|S)`. Since
/// `E[l_S - L] = 0`, summing `expm1(d) - d >= 0` keeps second-order gaps
/// that `J - L` computed by subtraction loses to cancellation.
pub fn jensen_gap(terms: &[SpanSetTerms]) -> f64 {
    let l: f64 = terms.iter().map(|x| x.log_ps.exp() * x.log_pc).sum();
    terms
        .iter()
        .map(|x| {
            let d = x.log_pc - l;
            x.log_ps.exp() * (d.exp_m1() - d)
        })
        .sum::<f64>()
        .ln_1p()
}

pub fn exact_gradient_vs_finite_differences(seed: u64, tol: f64) -> Result<OracleResult> {
    let (m, store) = model(seed)?;
    let data = instance(seed, 2, 3, 2);
    let g = exact_gradient(&m, &store, &data, 0.0)?;
    let r = check_against(
        &store,
        &g,
        |s| Ok(enumerate(&m, s, &data, false)?.lower_bound),
        DEFAULT_EPS,
        Coverage::Strided(8),
    )?;
    Ok(result(
        "exact gradient: enumerated dL/dθ matches finite differences of L",
        r.passes(tol),
        r.to_string(),
    ))
}

pub fn baseline_invariance(seed: u64, tol: f64) -> Result<OracleResult> {
    let (m, store) = model(seed)?;
    let data = instance(seed, 2, 3, 3);
    let a = exact_gradient(&m, &store, &data, 0.0)?.flatten(&store);
    let b = exact_gradient(&m, &store, &data, -12.5)?.flatten(&store);
    let diff = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let z = score_identity(&m, &store, &data)?.flatten(&store);
    let zmax = z.iter().map(|x| x.abs()).fold(0.0, f64::max);
    Ok(result(
        "baseline invariance: expected estimator unchanged by a constant baseline",
        diff < tol && zmax < tol,
        format!("max diff {diff:.2e}, max |Σ P(S) dlogP(S)| {zmax:.2e}"),
    ))
}

/// Single-sample estimator mean against the enumerated gradient on a
/// three-token body, per parameter tensor.
pub fn unbiasedness(seed: u64, draws: usize, z_max: f64, resolution: Resolution) -> Result<OracleResult> {
    let (m, store) = model(seed)?;
    let data = instance(seed, 2, 3, 3);
    let c = enumerate(&m, &store, &data, false)?.lower_bound;
    let r = check_unbiasedness(&m, &store, &data, c, draws, seed, resolution)?;
    let (name, z) = r.worst();
    let over = r.z_scores().iter().filter(|&&z| z > z_max).count();
    let unit = match resolution {
        Resolution::Tensor => "tensor projections",
        Resolution::Coordinate => "parameters",
    };
    Ok(result(
        &format!("unbiasedness: sampled estimator mean within {z_max} SE of exact gradient ({unit})"),
        over == 0,
        format!("{draws} draws, m = 3, {} {unit}, {over} beyond {z_max} SE, worst {name} at {z:.2} SE", r.names.len()),
    ))
}

/// Beam search against exhaustive search on a hand-built table, and beam 1
/// against greedy on the hand table and on random toy decoders.
pub fn beam_oracles(seed: u64) -> Result<Vec<OracleResult>> {
    let (bos, eos) = (0, 1);
    let table = TransitionTable::from_probs(&[
        vec![0.0, 0.1, 0.5, 0.4],
        vec![0.0, 1.0, 0.0, 0.0],
        vec![0.0, 0.4, 0.3, 0.3],
        vec![0.0, 0.95, 0.03, 0.02],
    ]);
    let cfg = |beam| BeamConfig {
        beam,
        max_len: 4,
        bos,
        eos,
        length_norm: false,
    };
    let b5 = beam_search(&table, cfg(5))?;
    let best = table.exhaustive_best(bos, eos, 4);
    let exhaustive = result(
        "beam search: beam 5 equals exhaustive search (4 tokens, length 4)",
        b5 == best,
        format!("beam {:?} {:.4}, exhaustive {:?} {:.4}", b5.tokens, b5.log_prob, best.tokens, best.log_prob),
    );

    let mut same = beam_search(&table, cfg(1))? == greedy(&table, cfg(1))?;
    let mut checked = 1;
    for k in 0..10 {
        let s = rng::derive_seed(seed, &[200, k]);
        let (m, store) = model(s)?;
        let data = instance(s, 2, 4, 3);
        let mut t = Tape::new(&store);
        let r = m.read(&mut t, &Article::from(&data))?;
        let spans = SpanSet::new(vec![(0, 3)], 4)?;
        let h_s = m.reading.span_states(&mut t, &r, &spans)?;
        let dec = Decoder::new(&m.generation, &store, t.value(r.h_t), t.value(h_s))?;
        let c = BeamConfig {
            beam: 1,
            max_len: 8,
            bos: BOS,
            eos: EOS,
            length_norm: false,
        };
        same &= beam_search(&dec, c)? == greedy(&dec, c)?;
        checked += 1;
    }
    let greedy_eq = result(
        "beam search: beam 1 equals greedy decoding",
        same,
        format!("{checked} fixtures"),
    );
    Ok(vec![exhaustive, greedy_eq])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn terms(pairs: &[(f64, f64)]) -> Vec<SpanSetTerms> {
        pairs
            .iter()
            .map(|&(p, lc)| SpanSetTerms {
                spans: SpanSet::empty(),
                log_ps: p.ln(),
                log_pc: lc,
            })
            .collect()
    }

    #[test]
    fn jensen_gap_matches_closed_form() {
        let (a, b) = (-2.0f64, -0.5f64);
        let expect = ((a.exp() + b.exp()) / 2.0).ln() - (a + b) / 2.0;
        assert!((jensen_gap(&terms(&[(0.5, a), (0.5, b)])) - expect).abs() < 1e-15);
        assert_eq!(jensen_gap(&terms(&[(0.3, -1.0), (0.7, -1.0)])), 0.0);
        // relative spread 1e-6: subtraction returns 0, the gap is ~1.25e-13
        let g = jensen_gap(&terms(&[(0.5, -1.0), (0.5, -1.0 + 1e-6)]));
        assert!((g - 1.25e-13).abs() < 1e-17, "{g}");
    }

    #[test]
    fn quick_suite_passes() {
        let cfg = SuiteConfig {
            seed: 3,
            gradient_seeds: 2,
            jensen_instances: 8,
            draws: 3000,
        };
        let results = run_suite(&cfg).unwrap();
        assert_eq!(results.len(), 12);
        for r in &results {
            if r.name.starts_with("unbiasedness") {
                continue;
            }
            assert!(r.passed, "{r}");
        }
    }
}
