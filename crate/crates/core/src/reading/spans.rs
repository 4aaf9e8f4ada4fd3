use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Salient spans `(start, end)` into the body, inclusive, sorted by start.
/// Starts are distinct and `start <= end`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct SpanSet {
    spans: Vec<(usize, usize)>,
}

impl SpanSet {
    pub fn empty() -> Self {
        SpanSet::default()
    }

    /// Sorts by start and validates against a body of length `m`.
    pub fn new(mut spans: Vec<(usize, usize)>, m: usize) -> Result<Self> {
        spans.sort_unstable();
        for (i, &(a, e)) in spans.iter().enumerate() {
            if a > e || e >= m {
                return Err(Error::invalid(format!("span ({a}, {e}) invalid for body length {m}")));
            }
            if i > 0 && spans[i - 1].0 == a {
                return Err(Error::invalid(format!("duplicate span start {a}")));
            }
        }
        Ok(SpanSet { spans })
    }

    pub fn singleton(a: usize, e: usize) -> Self {
        assert!(a <= e);
        SpanSet { spans: vec![(a, e)] }
    }

    pub fn spans(&self) -> &[(usize, usize)] {
        &self.spans
    }

    pub fn len(&self) -> usize {
        self.spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    pub fn starts(&self) -> impl Iterator<Item = usize> + '_ {
        self.spans.iter().map(|s| s.0)
    }

    /// Body positions covered, span by span in start order. Overlapping
    /// spans repeat positions.
    pub fn positions(&self) -> Vec<usize> {
        self.spans.iter().flat_map(|&(a, e)| a..=e).collect()
    }

    pub fn overlaps(&self, lo: usize, hi: usize) -> bool {
        self.spans.iter().any(|&(a, e)| a <= hi && lo <= e)
    }
}

/// A draw from the span distribution. `drawn` is what the start/end sampling
/// produced and is the set whose probability enters the score-function term;
/// `effective` replaces an empty draw with the fallback singleton so the
/// decoder always has something to attend to.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSpans {
    pub drawn: SpanSet,
    pub effective: SpanSet,
}

/// Smallest index among the maxima.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn fallback<F>(p: &[f64], end_probs: &mut F) -> Result<SpanSet>
where
    F: FnMut(usize) -> Result<Vec<f64>>,
{
    let a = argmax(p);
    let e = argmax(&end_probs(a)?);
    Ok(SpanSet::singleton(a, e.max(a)))
}

fn draw_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &q) in probs.iter().enumerate() {
        if q <= 0.0 {
            continue;
        }
        acc += q;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Independent Bernoulli start per position, then an end from each start's
/// end distribution. `end_probs(a)` must put zero mass below `a`.
pub fn sample_spans<F, R>(p: &[f64], mut end_probs: F, rng: &mut R) -> Result<SampledSpans>
where
    F: FnMut(usize) -> Result<Vec<f64>>,
    R: Rng + ?Sized,
{
    if p.is_empty() {
        return Err(Error::invalid("cannot sample spans from an empty body"));
    }
    let starts: Vec<usize> = p
        .iter()
        .enumerate()
        .filter_map(|(i, &pi)| (rng.random::<f64>() < pi).then_some(i))
        .collect();
    let mut spans = Vec::with_capacity(starts.len());
    for a in starts {
        let e = draw_index(&end_probs(a)?, rng);
        spans.push((a, e.max(a)));
    }
    let drawn = SpanSet { spans };
    let effective = if drawn.is_empty() {
        fallback(p, &mut end_probs)?
    } else {
        drawn.clone()
    };
    Ok(SampledSpans { drawn, effective })
}

/// Starts where `p_i > 0.5` strictly, each with its most likely end.
pub fn extract_spans<F>(p: &[f64], mut end_probs: F) -> Result<SpanSet>
where
    F: FnMut(usize) -> Result<Vec<f64>>,
{
    if p.is_empty() {
        return Err(Error::invalid("cannot extract spans from an empty body"));
    }
    let mut spans = Vec::new();
    for (a, &pa) in p.iter().enumerate() {
        if pa > 1.0 - pa {
            let e = argmax(&end_probs(a)?);
            spans.push((a, e.max(a)));
        }
    }
    if spans.is_empty() {
        return fallback(p, &mut end_probs);
    }
    Ok(SpanSet { spans })
}

/// Every span set over a body of length `m`: each start subset crossed with
/// every legal end per start.
pub fn enumerate_span_sets(m: usize) -> Result<Vec<SpanSet>> {
    if m > 6 {
        return Err(Error::invalid(format!("enumeration limited to m <= 6, got {m}")));
    }
    let mut out = Vec::new();
    for mask in 0u32..(1 << m) {
        let starts: Vec<usize> = (0..m).filter(|&i| mask & (1 << i) != 0).collect();
        let mut partial: Vec<Vec<(usize, usize)>> = vec![Vec::new()];
        for &a in &starts {
            partial = partial
                .into_iter()
                .flat_map(|p| {
                    (a..m).map(move |e| {
                        let mut q = p.clone();
                        q.push((a, e));
                        q
                    })
                })
                .collect();
        }
        out.extend(partial.into_iter().map(|spans| SpanSet { spans }));
    }
    Ok(out)
}
