use std::fmt::Write as _;
use std::path::Path;

use crate::corpus::{FilterConfig, Lengths, RESERVED};
use crate::error::{Error, Result};
use crate::model::ModelConfig;

macro_rules! train_config {
    ($($(#[$doc:meta])* $field:ident : $ty:ty = $default:expr;)*) => {
        /// Every tunable of a run. Parsed from a flat `key = value` file;
        /// unknown keys are rejected.
        #[derive(Debug, Clone, PartialEq)]
        #[allow(non_snake_case)]
        pub struct TrainConfig {
            $($(#[$doc])* pub $field: $ty,)*
        }

        impl Default for TrainConfig {
            fn default() -> Self {
                TrainConfig { $($field: $default,)* }
            }
        }

        impl TrainConfig {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($field),)*];

            fn set(&mut self, key: &str, value: &str) -> Option<std::result::Result<(), String>> {
                match key {
                    $(stringify!($field) => Some(
                        value.parse::<$ty>().map(|v| self.$field = v).map_err(|e| e.to_string()),
                    ),)*
                    _ => None,
                }
            }

            /// Canonical text form: every key, in declaration order.
            pub fn to_text(&self) -> String {
                let mut s = String::new();
                $(let _ = writeln!(s, "{} = {}", stringify!($field), self.$field);)*
                s
            }
        }
    };
}

train_config! {
    d1: usize = 256;
    d2: usize = 128;
    mlp_hidden: usize = 512;
    /// Non-reserved vocabulary entries.
    vocab_size: usize = 30_000;
    vocab_include_comments: bool = true;
    share_embeddings: bool = false;
    init_std: f64 = 0.01;
    max_word_pos: usize = 100;
    max_sent_pos: usize = 50;
    len_title: usize = 30;
    len_body: usize = 600;
    len_comment: usize = 50;
    min_body_len: usize = 30;
    min_comment_len: usize = 10;
    max_comment_len: usize = 100;
    max_comments: usize = 30;
    min_comments: usize = 5;
    lr_pretrain: f64 = 0.15;
    adagrad_acc0: f64 = 0.1;
    lr_sgd: f64 = 0.01;
    lr_baseline: f64 = 0.15;
    /// Global-norm clip for lower-bound steps; 0 disables.
    clip_norm: f64 = 5.0;
    batch_size: usize = 32;
    pretrain_steps: usize = 2000;
    max_step: usize = 2000;
    checkpoint_every: usize = 500;
    /// Monte Carlo samples per example.
    J: usize = 1;
    seed: u64 = 1;
    match_threshold: f64 = 0.4;
    ngram_max: usize = 6;
    matcher_steps: usize = 1000;
    matcher_negatives: usize = 1;
    lr_matcher: f64 = 0.15;
    beam: usize = 5;
    length_norm: bool = false;
    /// Worker threads; 0 uses every core.
    workers: usize = 0;
}

impl TrainConfig {
    /// Applies `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        let mut errors = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                errors.push(format!("line {}: expected `key = value`", n + 1));
                continue;
            };
            let (k, v) = (k.trim(), v.trim());
            match cfg.set(k, v) {
                None => errors.push(format!("{k}: unknown key")),
                Some(Err(e)) => errors.push(format!("{k}: {e}")),
                Some(Ok(())) => {}
            }
        }
        if errors.is_empty() {
            errors = cfg.problems();
        }
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(errors))
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Range checks, one message per offending key.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut need = |ok: bool, msg: &str| {
            if !ok {
                out.push(msg.to_string());
            }
        };
        need(self.d1 > 0, "d1: must be positive");
        need(self.d2 > 0, "d2: must be positive");
        need(self.mlp_hidden > 0, "mlp_hidden: must be positive");
        need(self.vocab_size > 0, "vocab_size: must be positive");
        need(self.init_std >= 0.0 && self.init_std.is_finite(), "init_std: must be finite and >= 0");
        need(self.max_word_pos > 0, "max_word_pos: must be positive");
        need(self.max_sent_pos > 0, "max_sent_pos: must be positive");
        need(self.len_title > 0, "len_title: must be positive");
        need(self.len_body > 0, "len_body: must be positive");
        need(self.len_comment >= 2, "len_comment: must be at least 2 (BOS and EOS)");
        need(self.min_comment_len <= self.max_comment_len, "min_comment_len: exceeds max_comment_len");
        need(self.max_comments > 0, "max_comments: must be positive");
        need(self.lr_pretrain > 0.0, "lr_pretrain: must be positive");
        need(self.adagrad_acc0 > 0.0, "adagrad_acc0: must be positive");
        need(self.lr_sgd > 0.0, "lr_sgd: must be positive");
        need(self.lr_baseline > 0.0, "lr_baseline: must be positive");
        need(self.lr_matcher > 0.0, "lr_matcher: must be positive");
        need(self.clip_norm >= 0.0, "clip_norm: must be >= 0");
        need(self.batch_size > 0, "batch_size: must be positive");
        need(self.checkpoint_every > 0, "checkpoint_every: must be positive");
        need(self.J > 0, "J: must be positive");
        need((0.0..=1.0).contains(&self.match_threshold), "match_threshold: must lie in [0, 1]");
        need((1..=6).contains(&self.ngram_max), "ngram_max: must lie in 1..=6");
        need(self.matcher_negatives > 0, "matcher_negatives: must be positive");
        need(self.beam > 0, "beam: must be positive");
        out
    }

    pub fn model(&self, vocab_len: usize) -> ModelConfig {
        ModelConfig {
            vocab_size: vocab_len,
            d1: self.d1,
            d2: self.d2,
            mlp_hidden: self.mlp_hidden,
            max_word_pos: self.max_word_pos,
            max_sent_pos: self.max_sent_pos,
            init_std: self.init_std,
            share_embeddings: self.share_embeddings,
        }
    }

    pub fn lengths(&self) -> Lengths {
        Lengths {
            title: self.len_title,
            body: self.len_body,
            comment: self.len_comment,
        }
    }

    pub fn filter(&self) -> FilterConfig {
        FilterConfig {
            min_body_len: self.min_body_len,
            min_comment_len: self.min_comment_len,
            max_comment_len: self.max_comment_len,
            max_comments: self.max_comments,
            min_comments: self.min_comments,
        }
    }

    /// Vocabulary entries including the reserved ones.
    pub fn full_vocab_size(&self) -> usize {
        self.vocab_size + RESERVED.len()
    }
}
