//! Shared fixtures for the benchmarks.

use deepcom::corpus::EncodedTriple;
use deepcom::{rng, toy, DeepCom, ModelConfig, ParamStore, SpanSet};

/// Mid-sized model: large enough that matrix work dominates bookkeeping.
pub fn config() -> ModelConfig {
    ModelConfig {
        vocab_size: 500,
        d1: 64,
        d2: 32,
        mlp_hidden: 64,
        max_word_pos: 50,
        max_sent_pos: 20,
        init_std: 0.1,
        share_embeddings: false,
    }
}

pub struct Fixture {
    pub model: DeepCom,
    pub store: ParamStore,
    pub data: Vec<EncodedTriple>,
    pub spans: SpanSet,
}

pub fn fixture(examples: usize, body_len: usize) -> Fixture {
    let cfg = config();
    let (model, store) = DeepCom::initialise(&cfg, 1).expect("valid config");
    let mut r = rng::derive(2, &[]);
    let data = (0..examples)
        .map(|_| toy::random_instance(&mut r, cfg.vocab_size, 10, body_len, 20))
        .collect();
    let spans = SpanSet::new(vec![(3, 7), (20, 24)], body_len).expect("spans fit");
    Fixture {
        model,
        store,
        data,
        spans,
    }
}
