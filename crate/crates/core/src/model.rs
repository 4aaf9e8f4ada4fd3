//! The full model: reading network plus generation network over one
//! parameter store.

use rand::Rng;

use crate::corpus::{BOS, EOS};
use crate::error::Result;
use crate::generation::{beam_search, BeamConfig, Decoder, GenerationNet, Hypothesis};
use crate::numerics::layers::Init;
use crate::numerics::{ParamStore, Tape, Var};
use crate::reading::{Article, Reading, ReadingNet, SpanSet};
use crate::rng::{self, stream};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d1: usize,
    pub d2: usize,
    pub mlp_hidden: usize,
    pub max_word_pos: usize,
    pub max_sent_pos: usize,
    pub init_std: f64,
    pub share_embeddings: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 30_004,
            d1: 256,
            d2: 128,
            mlp_hidden: 512,
            max_word_pos: 100,
            max_sent_pos: 50,
            init_std: 0.01,
            share_embeddings: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DeepCom {
    pub config: ModelConfig,
    pub reading: ReadingNet,
    pub generation: GenerationNet,
}

/// Output of inference on one article.
#[derive(Debug, Clone)]
pub struct Generated {
    pub spans: SpanSet,
    pub start_probs: Vec<f64>,
    pub comment: Hypothesis,
}

impl DeepCom {
    pub fn new<R: Rng + ?Sized>(config: &ModelConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        let mut init = Init {
            std: config.init_std,
            rng,
        };
        let reading = ReadingNet::new(config, store, &mut init)?;
        let shared = config.share_embeddings.then_some(reading.word_emb);
        let generation = GenerationNet::new(config, store, &mut init, shared)?;
        Ok(DeepCom {
            config: config.clone(),
            reading,
            generation,
        })
    }

    /// Fresh parameters drawn from the seed's init stream.
    pub fn initialise(config: &ModelConfig, seed: u64) -> Result<(Self, ParamStore)> {
        let mut store = ParamStore::new();
        let model = Self::new(config, &mut store, &mut rng::derive(seed, &[stream::INIT]))?;
        Ok((model, store))
    }

    pub fn read(&self, t: &mut Tape<'_>, a: &Article<'_>) -> Result<Reading> {
        self.reading.read(t, a)
    }

    /// `log P(C | S, T)` with `H_S` gathered from the reading.
    pub fn comment_log_prob(&self, t: &mut Tape<'_>, r: &Reading, s: &SpanSet, comment: &[usize]) -> Result<Var> {
        let h_s = self.reading.span_states(t, r, s)?;
        self.generation.sequence_log_prob(t, r.h_t, h_s, comment)
    }

    /// Extracts spans deterministically and beam-decodes a comment.
    pub fn generate(&self, params: &ParamStore, a: &Article<'_>, beam: usize, max_len: usize, length_norm: bool) -> Result<Generated> {
        let mut t = Tape::new(params);
        let mut r = self.read(&mut t, a)?;
        let spans = self.reading.extract_span_set(&mut t, &mut r)?;
        let h_s = self.reading.span_states(&mut t, &r, &spans)?;
        let dec = Decoder::new(&self.generation, params, t.value(r.h_t), t.value(h_s))?;
        let comment = beam_search(
            &dec,
            BeamConfig {
                beam,
                max_len,
                bos: BOS,
                eos: EOS,
                length_norm,
            },
        )?;
        Ok(Generated {
            spans,
            start_probs: r.start_probs,
            comment,
        })
    }
}
