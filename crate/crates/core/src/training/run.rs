//! The two-phase training loop over a run directory.
//!
//! ```text
//! <run>/config.txt        effective configuration
//! <run>/vocab.txt         vocabulary used by the run
//! <run>/train_log.jsonl   one record per step
//! <run>/pretrained.bin    parameters after pre-training
//! <run>/checkpoint.bin    latest state; a rerun on the same directory resumes
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::artificial::{construct_artificial_spans, ArtificialSpanSet, SpanRules, VocabScorer};
use super::baseline::BaselineNet;
use super::config::TrainConfig;
use super::matcher::{train_matcher, MatchArticle, MatcherConfig, MatchingModel};
use super::optim::{AdaGrad, Sgd};
use super::scorer::ScorerDims;
use super::steps::{mc_gradient_step, pretrain_step, McConfig, StepStats};
use crate::corpus::{encode_corpus, BatchSchedule, Example, Triple, Vocabulary};
use crate::error::{Error, Result};
use crate::model::DeepCom;
use crate::numerics::checkpoint::Checkpoint;
use crate::numerics::ParamStore;
use crate::parallel::ordered_map;
use crate::reading::SpanSet;
use crate::rng;

pub const FORMAT_VERSION: f64 = 1.0;
pub const CONFIG_FILE: &str = "config.txt";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const PRETRAINED_FILE: &str = "pretrained.bin";

pub const MODEL_PREFIX: &str = "model/";
pub const BASELINE_PREFIX: &str = "baseline/";
pub const MATCHER_PREFIX: &str = "matcher/";

const PRETRAIN_TAG: u64 = 1;
const LOWER_BOUND_TAG: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    LowerBound,
    Done,
}

impl Phase {
    fn code(self) -> f64 {
        match self {
            Phase::Pretrain => 1.0,
            Phase::LowerBound => 2.0,
            Phase::Done => 3.0,
        }
    }

    fn from_code(c: f64) -> Result<Self> {
        match c as i64 {
            1 => Ok(Phase::Pretrain),
            2 => Ok(Phase::LowerBound),
            3 => Ok(Phase::Done),
            _ => Err(Error::Checkpoint(format!("unknown phase code {c}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub phase: Phase,
    pub loss: f64,
    pub mean_log_p: f64,
    pub baseline: f64,
    pub grad_norm: f64,
}

/// Where to stop this invocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Until {
    /// Through pre-training only.
    Pretrained,
    Finished,
    /// After this many optimisation steps in this invocation, counting both
    /// phases; used to simulate interruption.
    Steps(usize),
}

/// Dimensions shared by the matching model and the baseline network: the
/// model's embedding and GRU size `d1` and its MLP width.
pub fn scorer_dims(cfg: &TrainConfig, vocab_len: usize) -> ScorerDims {
    ScorerDims {
        vocab_size: vocab_len,
        emb: cfg.d1,
        hidden: cfg.d1,
        mlp_hidden: cfg.mlp_hidden,
        init_std: cfg.init_std,
    }
}

pub fn matcher_config(cfg: &TrainConfig, vocab_len: usize) -> MatcherConfig {
    MatcherConfig {
        dims: scorer_dims(cfg, vocab_len),
        steps: cfg.matcher_steps,
        negatives: cfg.matcher_negatives,
        batch_size: cfg.batch_size,
        lr: cfg.lr_matcher,
        acc0: cfg.adagrad_acc0,
        seed: cfg.seed,
    }
}

pub fn matcher_articles(triples: &[Triple], vocab: &Vocabulary, cfg: &TrainConfig) -> Vec<MatchArticle> {
    triples
        .iter()
        .map(|t| MatchArticle {
            title: vocab.encode(&t.title[..t.title.len().min(cfg.len_title)]),
            comments: t
                .comments
                .iter()
                .map(|c| vocab.encode(&c[..c.len().min(cfg.len_comment)]))
                .collect(),
        })
        .collect()
}

pub fn artificial_spans(
    triples: &[Triple],
    matcher: &MatchingModel,
    vocab: &Vocabulary,
    cfg: &TrainConfig,
) -> Result<Vec<ArtificialSpanSet>> {
    let scorer = VocabScorer {
        model: matcher,
        vocab,
        max_comment: cfg.len_comment,
    };
    let rules = SpanRules {
        ngram_max: cfg.ngram_max,
        threshold: cfg.match_threshold,
    };
    ordered_map(triples, |_, t| construct_artificial_spans(t, &scorer, rules))
}

/// Artificial spans of each example's article, projected onto its
/// truncated body.
pub fn example_spans(examples: &[Example], spans: &[ArtificialSpanSet]) -> Result<Vec<SpanSet>> {
    let mut adjusted = 0;
    let out = examples
        .iter()
        .map(|e| {
            let (s, n) = spans[e.article].to_span_set(e.data.body_len())?;
            adjusted += n;
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    if adjusted > 0 {
        log::warn!("{adjusted} artificial spans clipped or dropped at the body length limit");
    }
    Ok(out)
}

/// Everything a run carries between steps.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: DeepCom,
    pub store: ParamStore,
    pub baseline: BaselineNet,
    pub matcher: MatchingModel,
    pub phase: Phase,
    /// Steps completed within the current phase.
    pub step: usize,
}

impl TrainState {
    pub fn fresh(cfg: &TrainConfig, vocab_len: usize, matcher: MatchingModel) -> Result<Self> {
        let (model, store) = DeepCom::initialise(&cfg.model(vocab_len), cfg.seed)?;
        let baseline = BaselineNet::new(&scorer_dims(cfg, vocab_len), cfg.seed)?;
        Ok(TrainState {
            model,
            store,
            baseline,
            matcher,
            phase: Phase::Pretrain,
            step: 0,
        })
    }

    pub fn to_checkpoint(&self, log_lines: usize) -> Checkpoint {
        let mut c = Checkpoint::new();
        c.push_store(MODEL_PREFIX, &self.store);
        c.push_store(BASELINE_PREFIX, &self.baseline.store);
        c.push_store(MATCHER_PREFIX, &self.matcher.store);
        c.set_meta("format_version", FORMAT_VERSION);
        c.set_meta("phase", self.phase.code());
        c.set_meta("step", self.step as f64);
        c.set_meta("log_lines", log_lines as f64);
        c
    }

    /// Rebuilds a state from a checkpoint; returns it with the number of log
    /// lines written when it was saved.
    pub fn from_checkpoint(c: &Checkpoint, cfg: &TrainConfig, vocab_len: usize) -> Result<(Self, usize)> {
        check_version(c)?;
        let dims = scorer_dims(cfg, vocab_len);
        let mut matcher = MatchingModel::new(&dims, cfg.seed)?;
        c.restore_store(MATCHER_PREFIX, &mut matcher.store)?;
        let mut state = TrainState::fresh(cfg, vocab_len, matcher)?;
        c.restore_store(MODEL_PREFIX, &mut state.store)?;
        c.restore_store(BASELINE_PREFIX, &mut state.baseline.store)?;
        state.phase = Phase::from_code(meta(c, "phase")?)?;
        state.step = meta(c, "step")? as usize;
        Ok((state, meta(c, "log_lines")? as usize))
    }
}

fn meta(c: &Checkpoint, key: &str) -> Result<f64> {
    c.meta(key).ok_or_else(|| Error::Checkpoint(format!("missing meta/{key}")))
}

pub fn check_version(c: &Checkpoint) -> Result<()> {
    match c.meta("format_version") {
        Some(v) if v == FORMAT_VERSION => Ok(()),
        Some(v) => Err(Error::Checkpoint(format!(
            "checkpoint format version {v}, expected {FORMAT_VERSION}"
        ))),
        None => Err(Error::Checkpoint("checkpoint has no format version".into())),
    }
}

/// Loads model parameters for inference from a checkpoint file.
pub fn load_model(path: &Path, cfg: &TrainConfig, vocab_len: usize) -> Result<(DeepCom, ParamStore)> {
    let c = Checkpoint::load(path)?;
    check_version(&c)?;
    let (model, mut store) = DeepCom::initialise(&cfg.model(vocab_len), cfg.seed)?;
    c.restore_store(MODEL_PREFIX, &mut store)?;
    Ok((model, store))
}

pub fn load_matcher(path: &Path, cfg: &TrainConfig, vocab_len: usize) -> Result<MatchingModel> {
    let c = Checkpoint::load(path)?;
    check_version(&c)?;
    let mut m = MatchingModel::new(&scorer_dims(cfg, vocab_len), cfg.seed)?;
    c.restore_store(MATCHER_PREFIX, &mut m.store)?;
    Ok(m)
}

pub fn save_matcher(path: &Path, m: &MatchingModel) -> Result<()> {
    let mut c = Checkpoint::new();
    c.push_store(MATCHER_PREFIX, &m.store);
    c.set_meta("format_version", FORMAT_VERSION);
    c.save(path)
}

struct RunLog {
    path: PathBuf,
    lines: usize,
}

impl RunLog {
    /// Keeps the first `keep` lines of an existing log.
    fn open(path: PathBuf, keep: usize) -> Result<Self> {
        let kept: String = match fs::read_to_string(&path) {
            Ok(text) => text.lines().take(keep).map(|l| format!("{l}\n")).collect(),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(Error::io(&path, e)),
        };
        let lines = kept.lines().count();
        if lines != keep {
            return Err(Error::Checkpoint(format!(
                "training log has {lines} lines, checkpoint expects {keep}"
            )));
        }
        fs::write(&path, kept).map_err(|e| Error::io(&path, e))?;
        Ok(RunLog { path, lines })
    }

    fn append(&mut self, r: &LogRecord) -> Result<()> {
        let mut f = fs::OpenOptions::new()
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        let line = serde_json::to_string(r).map_err(|e| Error::invalid(e.to_string()))?;
        writeln!(f, "{line}").map_err(|e| Error::io(&self.path, e))?;
        self.lines += 1;
        Ok(())
    }
}

/// Runs (or resumes) training in `dir`. The vocabulary must be the one the
/// examples were built with; it is written into the run directory.
pub fn train(dir: &Path, triples: &[Triple], vocab: &Vocabulary, cfg: &TrainConfig, until: Until) -> Result<TrainState> {
    let problems = cfg.problems();
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    if triples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let config_path = dir.join(CONFIG_FILE);
    let ckpt_path = dir.join(CHECKPOINT_FILE);
    let echo = cfg.to_text();

    let (mut state, mut log) = if ckpt_path.exists() {
        let previous = fs::read_to_string(&config_path).map_err(|e| Error::io(&config_path, e))?;
        if previous != echo {
            return Err(Error::Checkpoint(format!(
                "configuration differs from the one recorded in {}",
                config_path.display()
            )));
        }
        let (state, lines) = TrainState::from_checkpoint(&Checkpoint::load(&ckpt_path)?, cfg, vocab.len())?;
        log::info!("resuming at {:?} step {}", state.phase, state.step);
        (state, RunLog::open(dir.join(LOG_FILE), lines)?)
    } else {
        fs::write(&config_path, &echo).map_err(|e| Error::io(&config_path, e))?;
        vocab.save(&dir.join(VOCAB_FILE))?;
        let log = RunLog::open(dir.join(LOG_FILE), 0)?;
        let articles = matcher_articles(triples, vocab, cfg);
        let (matcher, losses) = train_matcher(&articles, &matcher_config(cfg, vocab.len()))?;
        if let Some(l) = losses.last() {
            log::info!("matching model trained, final loss {l:.4}");
        }
        let state = TrainState::fresh(cfg, vocab.len(), matcher)?;
        state.to_checkpoint(log.lines).save(&ckpt_path)?;
        (state, log)
    };

    let examples = encode_corpus(triples, vocab, cfg.lengths());
    if examples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut budget = match until {
        Until::Steps(n) => n,
        _ => usize::MAX,
    };
    let save = |state: &TrainState, log: &RunLog| state.to_checkpoint(log.lines).save(&ckpt_path);

    if state.phase == Phase::Pretrain {
        let art = artificial_spans(triples, &state.matcher, vocab, cfg)?;
        let spans = example_spans(&examples, &art)?;
        let schedule = BatchSchedule::new(examples.len(), cfg.batch_size, rng::derive_seed(cfg.seed, &[PRETRAIN_TAG]));
        let opt = AdaGrad {
            lr: cfg.lr_pretrain,
            acc0: cfg.adagrad_acc0,
        };
        while state.step < cfg.pretrain_steps {
            if budget == 0 {
                return Ok(state);
            }
            let batch: Vec<_> = schedule
                .batch_at(state.step)
                .into_iter()
                .map(|i| (&examples[i].data, &spans[i]))
                .collect();
            let stats = pretrain_step(&state.model, &mut state.store, &opt, &batch)?;
            log.append(&record(state.step, Phase::Pretrain, stats))?;
            state.step += 1;
            budget -= 1;
            if state.step % cfg.checkpoint_every == 0 {
                save(&state, &log)?;
            }
        }
        state.phase = Phase::LowerBound;
        state.step = 0;
        save(&state, &log)?;
        fs::copy(&ckpt_path, dir.join(PRETRAINED_FILE)).map_err(|e| Error::io(dir.join(PRETRAINED_FILE), e))?;
    }
    if until == Until::Pretrained {
        return Ok(state);
    }

    if state.phase == Phase::LowerBound {
        let schedule = BatchSchedule::new(examples.len(), cfg.batch_size, rng::derive_seed(cfg.seed, &[LOWER_BOUND_TAG]));
        let mc = McConfig {
            samples: cfg.J,
            sgd: Sgd { lr: cfg.lr_sgd },
            baseline_opt: AdaGrad {
                lr: cfg.lr_baseline,
                acc0: cfg.adagrad_acc0,
            },
            clip_norm: cfg.clip_norm,
            seed: cfg.seed,
        };
        while state.step < cfg.max_step {
            if budget == 0 {
                return Ok(state);
            }
            let batch: Vec<_> = schedule
                .batch_at(state.step)
                .into_iter()
                .map(|i| &examples[i].data)
                .collect();
            let stats = mc_gradient_step(&state.model, &mut state.store, &mut state.baseline, &batch, state.step, &mc)?;
            log.append(&record(state.step, Phase::LowerBound, stats))?;
            state.step += 1;
            budget -= 1;
            if state.step % cfg.checkpoint_every == 0 {
                save(&state, &log)?;
            }
        }
        state.phase = Phase::Done;
        state.step = 0;
        save(&state, &log)?;
    }
    Ok(state)
}

fn record(step: usize, phase: Phase, s: StepStats) -> LogRecord {
    LogRecord {
        step,
        phase,
        loss: s.loss,
        mean_log_p: s.mean_log_p,
        baseline: s.baseline,
        grad_norm: s.grad_norm,
    }
}

/// Mean `log P(C | S, T)` over `examples` with spans extracted by the
/// model's deterministic rule.
pub fn mean_comment_log_prob(model: &DeepCom, store: &ParamStore, examples: &[Example]) -> Result<f64> {
    use crate::numerics::Tape;
    use crate::reading::Article;
    let per = ordered_map(examples, |_, e| {
        let mut t = Tape::new(store);
        let mut r = model.read(&mut t, &Article::from(&e.data))?;
        let s = model.reading.extract_span_set(&mut t, &mut r)?;
        let lp = model.comment_log_prob(&mut t, &r, &s, e.data.comment())?;
        Ok(t.scalar(lp))
    })?;
    Ok(per.iter().sum::<f64>() / per.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy;

    fn corpus() -> (Vec<Triple>, Vocabulary) {
        let (triples, _) = toy::planted_corpus(&mut rng::derive(5, &[]), 6, 20, 10, 3, 2);
        let vocab = Vocabulary::build(&triples, 50, true);
        (triples, vocab)
    }

    fn model_values(path: &Path) -> Vec<(String, Vec<f64>)> {
        Checkpoint::load(path)
            .unwrap()
            .entries()
            .iter()
            .filter(|(n, _)| n.starts_with(MODEL_PREFIX))
            .map(|(n, t)| (n.clone(), t.data().to_vec()))
            .collect()
    }

    #[test]
    fn zero_max_step_keeps_pretrained_model() {
        let dir = tempfile::tempdir().unwrap();
        let (triples, vocab) = corpus();
        let cfg = TrainConfig {
            max_step: 0,
            ..toy::train_config()
        };
        let state = train(dir.path(), &triples, &vocab, &cfg, Until::Finished).unwrap();
        assert_eq!(state.phase, Phase::Done);
        assert_eq!(
            model_values(&dir.path().join(CHECKPOINT_FILE)),
            model_values(&dir.path().join(PRETRAINED_FILE))
        );
        let log = fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
        assert_eq!(log.lines().count(), cfg.pretrain_steps);
        let first: LogRecord = serde_json::from_str(log.lines().next().unwrap()).unwrap();
        assert_eq!((first.step, first.phase), (0, Phase::Pretrain));
        assert_eq!(fs::read_to_string(dir.path().join(CONFIG_FILE)).unwrap(), cfg.to_text());
    }

    #[test]
    fn resumed_run_matches_uninterrupted() {
        let (triples, vocab) = corpus();
        let cfg = toy::train_config();
        let whole = tempfile::tempdir().unwrap();
        train(whole.path(), &triples, &vocab, &cfg, Until::Finished).unwrap();

        // stop mid-pretraining between checkpoints, then in phase two
        let parts = tempfile::tempdir().unwrap();
        train(parts.path(), &triples, &vocab, &cfg, Until::Steps(4)).unwrap();
        train(parts.path(), &triples, &vocab, &cfg, Until::Steps(4)).unwrap();
        train(parts.path(), &triples, &vocab, &cfg, Until::Finished).unwrap();

        for f in [CHECKPOINT_FILE, PRETRAINED_FILE, LOG_FILE] {
            let a = fs::read(whole.path().join(f)).unwrap();
            let b = fs::read(parts.path().join(f)).unwrap();
            assert!(a == b, "{f} differs");
        }
    }

    #[test]
    fn pretrain_only_then_continue() {
        let (triples, vocab) = corpus();
        let cfg = toy::train_config();
        let dir = tempfile::tempdir().unwrap();
        let s = train(dir.path(), &triples, &vocab, &cfg, Until::Pretrained).unwrap();
        assert_eq!((s.phase, s.step), (Phase::LowerBound, 0));
        let s = train(dir.path(), &triples, &vocab, &cfg, Until::Finished).unwrap();
        assert_eq!(s.phase, Phase::Done);
        let log = fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
        assert_eq!(log.lines().count(), cfg.pretrain_steps + cfg.max_step);
    }

    #[test]
    fn changed_config_or_version_is_rejected() {
        let (triples, vocab) = corpus();
        let cfg = toy::train_config();
        let dir = tempfile::tempdir().unwrap();
        train(dir.path(), &triples, &vocab, &cfg, Until::Steps(1)).unwrap();
        let other = TrainConfig { lr_sgd: 0.5, ..cfg.clone() };
        assert!(matches!(train(dir.path(), &triples, &vocab, &other, Until::Finished), Err(Error::Checkpoint(_))));

        let path = dir.path().join(CHECKPOINT_FILE);
        let mut c = Checkpoint::load(&path).unwrap();
        c.set_meta("format_version", 2.0);
        c.save(&path).unwrap();
        assert!(matches!(train(dir.path(), &triples, &vocab, &cfg, Until::Finished), Err(Error::Checkpoint(_))));
        assert!(load_model(&path, &cfg, vocab.len()).is_err());
    }

    #[test]
    fn invalid_config_is_a_config_error() {
        let (triples, vocab) = corpus();
        let cfg = TrainConfig { beam: 0, ..toy::train_config() };
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(train(dir.path(), &triples, &vocab, &cfg, Until::Finished), Err(Error::Config(_))));
    }
}
