//! Reading network: encodes title and body, fuses them, and defines the span
//! distribution `P(S | T, B)`.
//!
//! All computation runs over the unpadded prefix of each field, which is
//! equivalent to masking the padded suffix.

mod spans;

use std::collections::HashMap;

use rand::Rng;

pub use spans::{argmax, enumerate_span_sets, extract_spans, sample_spans, SampledSpans, SpanSet};

use crate::corpus::EncodedTriple;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::numerics::layers::{dot_attention, AdditiveAttention, GruCell, Init, Linear, Mlp};
use crate::numerics::{Mask, ParamId, ParamStore, Tape, Var};

/// Unpadded view of one article.
#[derive(Debug, Clone, Copy)]
pub struct Article<'a> {
    pub title: &'a [usize],
    pub body: &'a [usize],
    /// `(within_sentence_index, sentence_index)` per body token.
    pub body_pos: &'a [(usize, usize)],
}

impl<'a> From<&'a EncodedTriple> for Article<'a> {
    fn from(e: &'a EncodedTriple) -> Self {
        Article {
            title: e.title(),
            body: e.body(),
            body_pos: e.body_positions(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReadingNet {
    pub word_emb: ParamId,
    pub word_pos_emb: ParamId,
    pub sent_pos_emb: ParamId,
    pub body_in: Mlp,
    pub body_out: Mlp,
    pub title_gru: GruCell,
    pub gate: Linear,
    pub start_mlp: Mlp,
    pub ptr_att: AdditiveAttention,
    pub ptr_r: ParamId,
    pub ptr_gru: GruCell,
    pub ptr_wv: ParamId,
    pub ptr_wh: ParamId,
    pub ptr_v: ParamId,
    max_word_pos: usize,
    max_sent_pos: usize,
}

/// Forward state of the reading network for one article, on a tape.
#[derive(Debug, Clone)]
pub struct Reading {
    pub h_t: Var,
    pub h_b: Var,
    pub v: Var,
    /// `[m × 2]` log `(P(l_k = 0), P(l_k = 1))`.
    pub log_start: Var,
    /// `P(l_k = 1)` per body position.
    pub start_probs: Vec<f64>,
    h0: Var,
    c0: Var,
    v_proj: Var,
    ends: HashMap<usize, Var>,
}

impl Reading {
    pub fn body_len(&self) -> usize {
        self.start_probs.len()
    }
}

impl ReadingNet {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, store: &mut ParamStore, init: &mut Init<'_, R>) -> Result<Self> {
        let (d1, d2, h) = (cfg.d1, cfg.d2, cfg.mlp_hidden);
        let mut emb = |s: &mut ParamStore, name: &str, rows, cols| s.gaussian(name, rows, cols, init.std, init.rng);
        let word_emb = emb(store, "reading.word_emb", cfg.vocab_size, d1)?;
        let word_pos_emb = emb(store, "reading.word_pos_emb", cfg.max_word_pos, d2)?;
        let sent_pos_emb = emb(store, "reading.sent_pos_emb", cfg.max_sent_pos, d2)?;
        let body_in = Mlp::new(store, "reading.body_in", &[d1 + 2 * d2, h, d1], init)?;
        let body_out = Mlp::new(store, "reading.body_out", &[2 * d1, h, d1], init)?;
        let title_gru = GruCell::new(store, "reading.title_gru", d1, d1, init)?;
        let gate = Linear::new(store, "reading.gate", 2 * d1, d1, true, init)?;
        let start_mlp = Mlp::new(store, "reading.start", &[d1, h, 2], init)?;
        let ptr_att = AdditiveAttention::new(store, "reading.ptr_att", d1, d1, d1, init)?;
        let ptr_r = store.gaussian("reading.ptr_r", 1, d1, init.std, init.rng)?;
        let ptr_gru = GruCell::new(store, "reading.ptr_gru", 2 * d1, d1, init)?;
        let ptr_wv = store.gaussian("reading.ptr_wv", d1, d1, init.std, init.rng)?;
        let ptr_wh = store.gaussian("reading.ptr_wh", d1, d1, init.std, init.rng)?;
        let ptr_v = store.gaussian("reading.ptr_v", d1, 1, init.std, init.rng)?;
        Ok(ReadingNet {
            word_emb,
            word_pos_emb,
            sent_pos_emb,
            body_in,
            body_out,
            title_gru,
            gate,
            start_mlp,
            ptr_att,
            ptr_r,
            ptr_gru,
            ptr_wv,
            ptr_wh,
            ptr_v,
            max_word_pos: cfg.max_word_pos,
            max_sent_pos: cfg.max_sent_pos,
        })
    }

    /// Title states `[n × d1]` from a unidirectional GRU.
    pub fn represent_title(&self, t: &mut Tape<'_>, title: &[usize]) -> Result<Var> {
        if title.is_empty() {
            return Err(Error::invalid("title has no real tokens"));
        }
        let emb = t.param(self.word_emb);
        let e = t.gather_rows(emb, title)?;
        self.title_gru.run(t, e)
    }

    /// `(Ê_B, H_B)`, both `[m × d1]`.
    pub fn represent_body(&self, t: &mut Tape<'_>, body: &[usize], pos: &[(usize, usize)]) -> Result<(Var, Var)> {
        if body.is_empty() {
            return Err(Error::invalid("body has no real tokens"));
        }
        if pos.len() != body.len() {
            return Err(Error::Shape {
                op: "represent_body",
                left: vec![body.len()],
                right: vec![pos.len()],
            });
        }
        let within: Vec<usize> = pos.iter().map(|p| p.0.min(self.max_word_pos - 1)).collect();
        let sent: Vec<usize> = pos.iter().map(|p| p.1.min(self.max_sent_pos - 1)).collect();
        let (we, wp, sp) = (t.param(self.word_emb), t.param(self.word_pos_emb), t.param(self.sent_pos_emb));
        let e = t.gather_rows(we, body)?;
        let o = t.gather_rows(wp, &within)?;
        let s = t.gather_rows(sp, &sent)?;
        let x = t.concat_cols(&[e, o, s])?;
        let e_hat = self.body_in.forward(t, x)?;
        let (_, c) = dot_attention(t, e_hat, e_hat, None)?;
        let x = t.concat_cols(&[e_hat, c])?;
        let h_b = self.body_out.forward(t, x)?;
        Ok((e_hat, h_b))
    }

    /// Gated fusion of title context into each body position; `[m × d1]`.
    pub fn fuse(&self, t: &mut Tape<'_>, h_t: Var, h_b: Var) -> Result<Var> {
        let (_, c_t) = dot_attention(t, h_b, h_t, None)?;
        let x = t.concat_cols(&[h_b, c_t])?;
        let g = self.gate.forward(t, x)?;
        let g = t.sigmoid(g);
        let gc = t.mul(g, c_t)?;
        t.add(h_b, gc)
    }

    /// Position-wise start classifier; `[m × 2]` log-probabilities.
    pub fn start_distribution(&self, t: &mut Tape<'_>, v: Var) -> Result<Var> {
        let logits = self.start_mlp.forward(t, v)?;
        t.log_softmax_rows(logits, None)
    }

    pub fn read(&self, t: &mut Tape<'_>, a: &Article<'_>) -> Result<Reading> {
        let h_t = self.represent_title(t, a.title)?;
        let (_, h_b) = self.represent_body(t, a.body, a.body_pos)?;
        let v = self.fuse(t, h_t, h_b)?;
        let log_start = self.start_distribution(t, v)?;
        let ls = t.value(log_start);
        let start_probs = (0..ls.rows()).map(|k| ls.get(k, 1).exp()).collect();
        let mem = self.ptr_att.memory(t, v)?;
        let r = t.param(self.ptr_r);
        let h0 = self.ptr_att.pool(t, &mem, r)?;
        let c0 = self.ptr_att.pool(t, &mem, h0)?;
        let wv = t.param(self.ptr_wv);
        let v_proj = t.matmul(v, wv)?;
        Ok(Reading {
            h_t,
            h_b,
            v,
            log_start,
            start_probs,
            h0,
            c0,
            v_proj,
            ends: HashMap::new(),
        })
    }

    /// `[1 × m]` log end distribution for start `a`, masked to `j >= a`.
    /// Cached per start within one reading.
    pub fn end_distribution(&self, t: &mut Tape<'_>, r: &mut Reading, a: usize) -> Result<Var> {
        let m = r.body_len();
        if a >= m {
            return Err(Error::invalid(format!("start {a} out of range for body length {m}")));
        }
        if let Some(&v) = r.ends.get(&a) {
            return Ok(v);
        }
        let va = t.row(r.v, a)?;
        let x = t.concat_cols(&[r.c0, va])?;
        let h1 = self.ptr_gru.step(t, x, r.h0)?;
        let wh = t.param(self.ptr_wh);
        let q = t.matmul(h1, wh)?;
        let pre = t.add_row(r.v_proj, q)?;
        let act = t.tanh(pre);
        let vv = t.param(self.ptr_v);
        let s = t.matmul(act, vv)?;
        let s = t.transpose(s);
        let legal: Vec<bool> = (0..m).map(|j| j >= a).collect();
        let out = t.log_softmax_rows(s, Some(Mask::Row(&legal)))?;
        r.ends.insert(a, out);
        Ok(out)
    }

    fn end_probs(&self, t: &mut Tape<'_>, r: &mut Reading, a: usize) -> Result<Vec<f64>> {
        let v = self.end_distribution(t, r, a)?;
        Ok(t.value(v).data().iter().map(|x| x.exp()).collect())
    }

    pub fn sample_span_set<R: Rng + ?Sized>(
        &self,
        t: &mut Tape<'_>,
        r: &mut Reading,
        rng: &mut R,
    ) -> Result<SampledSpans> {
        let p = r.start_probs.clone();
        sample_spans(&p, |a| self.end_probs(t, r, a), rng)
    }

    pub fn extract_span_set(&self, t: &mut Tape<'_>, r: &mut Reading) -> Result<SpanSet> {
        let p = r.start_probs.clone();
        extract_spans(&p, |a| self.end_probs(t, r, a))
    }

    /// The set the decoder conditions on: `drawn` itself, or the most
    /// likely start with its most likely end when `drawn` is empty.
    pub fn effective_span_set(&self, t: &mut Tape<'_>, r: &mut Reading, drawn: &SpanSet) -> Result<SpanSet> {
        if !drawn.is_empty() {
            return Ok(drawn.clone());
        }
        let a = argmax(&r.start_probs);
        let e = argmax(&self.end_probs(t, r, a)?);
        Ok(SpanSet::singleton(a, e.max(a)))
    }

    /// `log P(S | T, B)` as a scalar node.
    pub fn span_set_log_prob(&self, t: &mut Tape<'_>, r: &mut Reading, s: &SpanSet) -> Result<Var> {
        let m = r.body_len();
        let mut picks = Vec::with_capacity(m);
        let mut is_start = vec![false; m];
        for &(a, e) in s.spans() {
            if e >= m {
                return Err(Error::invalid(format!("span ({a}, {e}) outside body of length {m}")));
            }
            is_start[a] = true;
        }
        for (k, &st) in is_start.iter().enumerate() {
            picks.push((k, usize::from(st)));
        }
        let mut terms = vec![t.select_sum(r.log_start, &picks)?];
        for &(a, e) in s.spans() {
            let ends = self.end_distribution(t, r, a)?;
            terms.push(t.pick(ends, 0, e)?);
        }
        t.add_all(&terms)
    }

    /// `H_S`: rows of `V` covered by the spans, in span order.
    pub fn span_states(&self, t: &mut Tape<'_>, r: &Reading, s: &SpanSet) -> Result<Var> {
        if s.is_empty() {
            return Err(Error::invalid("span set is empty"));
        }
        t.gather_rows(r.v, &s.positions())
    }
}
