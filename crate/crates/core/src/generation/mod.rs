//! Generation network: a GRU decoder attending to the title states and the
//! selected span states, defining `P(C | S, T)`.

mod beam;

use rand::Rng;

pub use beam::{beam_search, greedy, BeamConfig, Hypothesis, StepModel, TransitionTable};

use crate::corpus::{BOS, PAD};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::numerics::layers::{AdditiveAttention, AttentionMemory, GruCell, Init, Linear};
use crate::numerics::{Mask, ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Debug, Clone)]
pub struct GenerationNet {
    pub emb: ParamId,
    pub q: ParamId,
    pub att_init: AdditiveAttention,
    pub att_title: AdditiveAttention,
    pub att_span: AdditiveAttention,
    pub gru: GruCell,
    pub out: Linear,
    allowed: Vec<bool>,
}

/// Projected title and span memories for one decode.
#[derive(Debug, Clone, Copy)]
pub struct DecoderMemory {
    pub title: AttentionMemory,
    pub span: AttentionMemory,
}

/// Decoder hidden state with the contexts computed from it.
#[derive(Debug, Clone, Copy)]
pub struct DecoderVars {
    pub h: Var,
    pub ctx_t: Var,
    pub ctx_s: Var,
}

impl GenerationNet {
    /// `shared_emb` reuses an existing embedding table instead of creating
    /// the decoder's own.
    pub fn new<R: Rng + ?Sized>(
        cfg: &ModelConfig,
        store: &mut ParamStore,
        init: &mut Init<'_, R>,
        shared_emb: Option<ParamId>,
    ) -> Result<Self> {
        let d1 = cfg.d1;
        let emb = match shared_emb {
            Some(id) => id,
            None => store.gaussian("generation.emb", cfg.vocab_size, d1, init.std, init.rng)?,
        };
        let q = store.gaussian("generation.q", 1, d1, init.std, init.rng)?;
        let att_init = AdditiveAttention::new(store, "generation.att_init", d1, d1, d1, init)?;
        let att_title = AdditiveAttention::new(store, "generation.att_title", d1, d1, d1, init)?;
        let att_span = AdditiveAttention::new(store, "generation.att_span", d1, d1, d1, init)?;
        let gru = GruCell::new(store, "generation.gru", 3 * d1, d1, init)?;
        let out = Linear::new(store, "generation.out", 3 * d1, cfg.vocab_size, true, init)?;
        let allowed = (0..cfg.vocab_size).map(|w| w != PAD && w != BOS).collect();
        Ok(GenerationNet {
            emb,
            q,
            att_init,
            att_title,
            att_span,
            gru,
            out,
            allowed,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.allowed.len()
    }

    /// `h0 = att([H_T; H_S], q)` and the step-0 contexts taken from it.
    pub fn init(&self, t: &mut Tape<'_>, h_t: Var, h_s: Var) -> Result<(DecoderMemory, DecoderVars)> {
        if t.value(h_s).rows() == 0 {
            return Err(Error::invalid("span states are empty"));
        }
        let both = t.concat_rows(&[h_t, h_s])?;
        let m0 = self.att_init.memory(t, both)?;
        let q = t.param(self.q);
        let h = self.att_init.pool(t, &m0, q)?;
        let mem = DecoderMemory {
            title: self.att_title.memory(t, h_t)?,
            span: self.att_span.memory(t, h_s)?,
        };
        let st = self.contexts(t, &mem, h)?;
        Ok((mem, st))
    }

    fn contexts(&self, t: &mut Tape<'_>, mem: &DecoderMemory, h: Var) -> Result<DecoderVars> {
        let ctx_t = self.att_title.pool(t, &mem.title, h)?;
        let ctx_s = self.att_span.pool(t, &mem.span, h)?;
        Ok(DecoderVars { h, ctx_t, ctx_s })
    }

    /// Consumes `prev` and returns the next state with fresh contexts.
    pub fn advance(&self, t: &mut Tape<'_>, mem: &DecoderMemory, st: &DecoderVars, prev: usize) -> Result<DecoderVars> {
        let emb = t.param(self.emb);
        let e = t.row(emb, prev)?;
        let x = t.concat_cols(&[e, st.ctx_t, st.ctx_s])?;
        let h = self.gru.step(t, x, st.h)?;
        self.contexts(t, mem, h)
    }

    /// Log `P_t` for each row of stacked `[h; C_T; C_S]` features, with PAD
    /// and BOS masked out.
    pub fn log_probs(&self, t: &mut Tape<'_>, features: Var) -> Result<Var> {
        let logits = self.out.forward(t, features)?;
        t.log_softmax_rows(logits, Some(Mask::Row(&self.allowed)))
    }

    /// One decoding step: new state and `[1 × V]` log-probabilities.
    pub fn decode_step(
        &self,
        t: &mut Tape<'_>,
        mem: &DecoderMemory,
        st: &DecoderVars,
        prev: usize,
    ) -> Result<(DecoderVars, Var)> {
        let next = self.advance(t, mem, st, prev)?;
        let f = t.concat_cols(&[next.h, next.ctx_t, next.ctx_s])?;
        Ok((next, self.log_probs(t, f)?))
    }

    /// Teacher-forced `log P(C | S, T)` for a `BOS … EOS` framed comment;
    /// every token after BOS is a target.
    pub fn sequence_log_prob(&self, t: &mut Tape<'_>, h_t: Var, h_s: Var, comment: &[usize]) -> Result<Var> {
        if comment.len() < 2 || comment[0] != BOS {
            return Err(Error::invalid("comment must be BOS followed by at least one token"));
        }
        let (mem, mut st) = self.init(t, h_t, h_s)?;
        let mut rows = Vec::with_capacity(comment.len() - 1);
        for &prev in &comment[..comment.len() - 1] {
            st = self.advance(t, &mem, &st, prev)?;
            rows.push(t.concat_cols(&[st.h, st.ctx_t, st.ctx_s])?);
        }
        let f = t.concat_rows(&rows)?;
        let lp = self.log_probs(t, f)?;
        let picks: Vec<(usize, usize)> = comment[1..].iter().copied().enumerate().collect();
        t.select_sum(lp, &picks)
    }
}

/// Decoder state as plain values, for inference outside a training tape.
#[derive(Debug, Clone)]
pub struct DecoderState {
    pub h: Tensor,
    pub ctx_t: Tensor,
    pub ctx_s: Tensor,
}

/// Inference-time decoder over fixed title and span states. Each step runs
/// on a short-lived tape with the memories as constants.
pub struct Decoder<'a> {
    net: &'a GenerationNet,
    params: &'a ParamStore,
    title: (Tensor, Tensor),
    span: (Tensor, Tensor),
    start: DecoderState,
}

impl<'a> Decoder<'a> {
    pub fn new(net: &'a GenerationNet, params: &'a ParamStore, h_t: &Tensor, h_s: &Tensor) -> Result<Self> {
        let mut t = Tape::new(params);
        let (ht, hs) = (t.constant(h_t.clone()), t.constant(h_s.clone()));
        let (mem, st) = net.init(&mut t, ht, hs)?;
        let val = |v: Var| t.value(v).clone();
        Ok(Decoder {
            net,
            params,
            title: (val(mem.title.items), val(mem.title.projected)),
            span: (val(mem.span.items), val(mem.span.projected)),
            start: DecoderState {
                h: val(st.h),
                ctx_t: val(st.ctx_t),
                ctx_s: val(st.ctx_s),
            },
        })
    }
}

impl StepModel for Decoder<'_> {
    type State = DecoderState;

    fn initial(&self) -> Result<DecoderState> {
        Ok(self.start.clone())
    }

    fn step(&self, s: &DecoderState, prev: usize) -> Result<(DecoderState, Vec<f64>)> {
        let mut t = Tape::new(self.params);
        let mut c = |x: &Tensor| t.constant(x.clone());
        let mem = DecoderMemory {
            title: AttentionMemory {
                items: c(&self.title.0),
                projected: c(&self.title.1),
            },
            span: AttentionMemory {
                items: c(&self.span.0),
                projected: c(&self.span.1),
            },
        };
        let st = DecoderVars {
            h: c(&s.h),
            ctx_t: c(&s.ctx_t),
            ctx_s: c(&s.ctx_s),
        };
        let (next, lp) = self.net.decode_step(&mut t, &mem, &st, prev)?;
        let out = DecoderState {
            h: t.value(next.h).clone(),
            ctx_t: t.value(next.ctx_t).clone(),
            ctx_s: t.value(next.ctx_s).clone(),
        };
        Ok((out, t.value(lp).data().to_vec()))
    }
}
