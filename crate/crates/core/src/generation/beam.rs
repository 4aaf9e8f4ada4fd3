use crate::error::Result;
use crate::numerics::LOG_ZERO;

/// One decoding step of an autoregressive model: log-probabilities over the
/// vocabulary for the next token.
pub trait StepModel {
    type State: Clone;

    fn initial(&self) -> Result<Self::State>;

    fn step(&self, state: &Self::State, prev: usize) -> Result<(Self::State, Vec<f64>)>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Generated tokens, without the leading BOS; ends in EOS when finished.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub finished: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct BeamConfig {
    pub beam: usize,
    pub max_len: usize,
    pub bos: usize,
    pub eos: usize,
    /// Rank finished hypotheses by log-probability per token.
    pub length_norm: bool,
}

struct Live<S> {
    tokens: Vec<usize>,
    log_prob: f64,
    state: S,
}

fn rank_key(h: &Hypothesis, length_norm: bool) -> f64 {
    if length_norm {
        h.log_prob / h.tokens.len().max(1) as f64
    } else {
        h.log_prob
    }
}

/// Candidate tokens in descending log-probability, ties to the smaller id.
fn top_tokens(logp: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut idx: Vec<(usize, f64)> = logp
        .iter()
        .copied()
        .enumerate()
        .filter(|&(_, l)| l > LOG_ZERO)
        .collect();
    idx.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    idx.truncate(k);
    idx
}

/// Beam search without length penalty. Live hypotheses are kept at `beam`;
/// those ending in EOS retire into a completed pool. Stops once the best
/// completed score is at least the best live score (scores only fall), when
/// nothing is live, or at `max_len` generated tokens.
pub fn beam_search<M: StepModel>(model: &M, cfg: BeamConfig) -> Result<Hypothesis> {
    let beam = cfg.beam.max(1);
    let mut live = vec![Live {
        tokens: Vec::new(),
        log_prob: 0.0,
        state: model.initial()?,
    }];
    let mut done: Vec<Hypothesis> = Vec::new();
    for _ in 0..cfg.max_len {
        // (parent, token, score, child state); parent order then token rank
        // gives stable tie-breaking
        let mut cands = Vec::new();
        for (pi, h) in live.iter().enumerate() {
            let prev = h.tokens.last().copied().unwrap_or(cfg.bos);
            let (state, logp) = model.step(&h.state, prev)?;
            for (tok, l) in top_tokens(&logp, beam) {
                cands.push((pi, tok, h.log_prob + l, state.clone()));
            }
        }
        cands.sort_by(|a, b| b.2.total_cmp(&a.2));
        let mut next = Vec::with_capacity(beam);
        for (pi, tok, score, state) in cands {
            if next.len() == beam {
                break;
            }
            let mut tokens = live[pi].tokens.clone();
            tokens.push(tok);
            if tok == cfg.eos {
                done.push(Hypothesis {
                    tokens,
                    log_prob: score,
                    finished: true,
                });
            } else {
                next.push(Live {
                    tokens,
                    log_prob: score,
                    state,
                });
            }
        }
        live = next;
        if live.is_empty() {
            break;
        }
        if !cfg.length_norm {
            let best_done = done.iter().map(|h| h.log_prob).fold(f64::NEG_INFINITY, f64::max);
            if best_done >= live[0].log_prob {
                break;
            }
        }
    }
    let pick = |pool: Vec<Hypothesis>| {
        pool.into_iter()
            .reduce(|best, h| {
                if rank_key(&h, cfg.length_norm) > rank_key(&best, cfg.length_norm) {
                    h
                } else {
                    best
                }
            })
    };
    if let Some(h) = pick(done) {
        return Ok(h);
    }
    let unfinished = live
        .into_iter()
        .map(|l| Hypothesis {
            tokens: l.tokens,
            log_prob: l.log_prob,
            finished: false,
        })
        .collect();
    Ok(pick(unfinished).unwrap_or(Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: false,
    }))
}

/// Arg-max decoding, one token at a time.
pub fn greedy<M: StepModel>(model: &M, cfg: BeamConfig) -> Result<Hypothesis> {
    let mut state = model.initial()?;
    let mut tokens = Vec::new();
    let mut log_prob = 0.0;
    let mut prev = cfg.bos;
    for _ in 0..cfg.max_len {
        let (next, logp) = model.step(&state, prev)?;
        let Some(&(tok, l)) = top_tokens(&logp, 1).first() else {
            break;
        };
        tokens.push(tok);
        log_prob += l;
        state = next;
        prev = tok;
        if tok == cfg.eos {
            return Ok(Hypothesis {
                tokens,
                log_prob,
                finished: true,
            });
        }
    }
    Ok(Hypothesis {
        tokens,
        log_prob,
        finished: false,
    })
}

/// Autoregressive model driven by a fixed table: the next-token distribution
/// depends only on the previous token.
#[derive(Debug, Clone)]
pub struct TransitionTable {
    /// `log_probs[prev][next]`.
    pub log_probs: Vec<Vec<f64>>,
}

impl TransitionTable {
    pub fn from_probs(p: &[Vec<f64>]) -> Self {
        TransitionTable {
            log_probs: p
                .iter()
                .map(|row| row.iter().map(|&x| if x > 0.0 { x.ln() } else { LOG_ZERO }).collect())
                .collect(),
        }
    }

    /// Best finished sequence of at most `max_len` tokens by exhaustive
    /// enumeration, falling back to the best unfinished one.
    pub fn exhaustive_best(&self, bos: usize, eos: usize, max_len: usize) -> Hypothesis {
        let v = self.log_probs[0].len();
        let mut best: Option<Hypothesis> = None;
        let mut best_open: Option<Hypothesis> = None;
        let mut stack = vec![(Vec::<usize>::new(), 0.0)];
        while let Some((toks, lp)) = stack.pop() {
            let prev = toks.last().copied().unwrap_or(bos);
            for tok in 0..v {
                let l = self.log_probs[prev][tok];
                if l <= LOG_ZERO {
                    continue;
                }
                let mut next = toks.clone();
                next.push(tok);
                let score = lp + l;
                if tok == eos {
                    if best.as_ref().is_none_or(|b| score > b.log_prob) {
                        best = Some(Hypothesis {
                            tokens: next,
                            log_prob: score,
                            finished: true,
                        });
                    }
                } else if next.len() == max_len {
                    if best_open.as_ref().is_none_or(|b| score > b.log_prob) {
                        best_open = Some(Hypothesis {
                            tokens: next,
                            log_prob: score,
                            finished: false,
                        });
                    }
                } else {
                    stack.push((next, score));
                }
            }
        }
        best.or(best_open).expect("table allows at least one sequence")
    }
}

impl StepModel for TransitionTable {
    type State = ();

    fn initial(&self) -> Result<()> {
        Ok(())
    }

    fn step(&self, _: &(), prev: usize) -> Result<((), Vec<f64>)> {
        Ok(((), self.log_probs[prev].clone()))
    }
}
