use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use deepcom::corpus::{encode_triple, load_corpus, FilterConfig, Triple, Vocabulary, EOS};
use deepcom::metrics::{evaluate_run, MetricReport};
use deepcom::numerics::Tape;
use deepcom::parallel::ordered_map;
use deepcom::reading::Article;
use deepcom::training::run::{self, Until};
use deepcom::training::{train_matcher, Provenance};
use deepcom::verification::{run_suite, SuiteConfig};
use deepcom::{DeepCom, Error, ParamStore, Result, TrainConfig};
use serde::Serialize;

use crate::{Command, ConfigArgs, ModelArgs, RunArgs, EXIT_FAILURE};

pub const SEED_ENV: &str = "DEEPCOM_SEED";

/// Sizes the global pool. Only the first call takes effect, so an explicit
/// `--workers` wins over the config key.
pub fn init_workers(n: usize) {
    if n > 0 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

pub fn run(cmd: Command) -> Result<u8> {
    match cmd {
        Command::BuildVocab { corpus, out, config } => build_vocab(&corpus, &out, &config),
        Command::TrainMatcher {
            corpus,
            vocab,
            out,
            config,
        } => cmd_train_matcher(&corpus, &vocab, &out, &config),
        Command::MakeSpans {
            corpus,
            vocab,
            matcher,
            out,
            config,
        } => make_spans(&corpus, &vocab, &matcher, &out, &config),
        Command::Pretrain { run } => cmd_train(&run, Until::Pretrained),
        Command::Train { run } => cmd_train(&run, Until::Finished),
        Command::Generate { model, out, beam } => generate(&model, &out, beam),
        Command::InspectSpans { model, out } => inspect_spans(&model, &out),
        Command::Evaluate {
            hyp,
            reference,
            out,
            per_article,
        } => evaluate(&hyp, &reference, &out, per_article),
        Command::Verify { seed, draws, quick } => verify(seed, draws, quick),
    }
    .map(|()| 0)
    .or_else(|e| match e {
        CommandError::Failed => Ok(EXIT_FAILURE),
        CommandError::Core(e) => Err(e),
    })
}

enum CommandError {
    /// The command ran but reported failure (e.g. an oracle did not pass).
    Failed,
    Core(Error),
}

impl From<Error> for CommandError {
    fn from(e: Error) -> Self {
        CommandError::Core(e)
    }
}

type CmdResult = std::result::Result<(), CommandError>;

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn jsonl<T: Serialize>(rows: &[T]) -> String {
    rows.iter()
        .map(|r| serde_json::to_string(r).expect("plain data serializes") + "\n")
        .collect()
}

pub fn load_config(args: &ConfigArgs) -> Result<TrainConfig> {
    let mut text = match &args.config {
        Some(p) => fs::read_to_string(p).map_err(|e| io_err(p, e))?,
        None => String::new(),
    };
    let mut bad = Vec::new();
    text.push('\n');
    for o in &args.overrides {
        match o.split_once('=') {
            Some((k, v)) => {
                let _ = writeln!(text, "{} = {}", k.trim(), v.trim());
            }
            None => bad.push(format!("--set {o}: expected KEY=VALUE")),
        }
    }
    if let Ok(seed) = std::env::var(SEED_ENV) {
        let _ = writeln!(text, "seed = {}", seed.trim());
    }
    if !bad.is_empty() {
        return Err(Error::Config(bad));
    }
    let cfg = TrainConfig::parse(&text)?;
    init_workers(cfg.workers);
    Ok(cfg)
}

/// Keeps every article with a title, a body and at least one comment.
fn inference_filter() -> FilterConfig {
    FilterConfig {
        min_body_len: 1,
        min_comment_len: 0,
        max_comment_len: usize::MAX,
        max_comments: usize::MAX,
        min_comments: 1,
    }
}

fn load_triples(path: &Path, filter: &FilterConfig) -> Result<Vec<Triple>> {
    let c = load_corpus(path, filter)?;
    log::info!(
        "{}: {} articles ({} filtered, {} malformed)",
        path.display(),
        c.triples.len(),
        c.filtered_articles,
        c.malformed_lines
    );
    Ok(c.triples)
}

fn build_vocab(corpus: &Path, out: &Path, config: &ConfigArgs) -> CmdResult {
    let cfg = load_config(config)?;
    let triples = load_triples(corpus, &cfg.filter())?;
    let vocab = Vocabulary::build(&triples, cfg.vocab_size, cfg.vocab_include_comments);
    write_file(out, &vocab.to_text())?;
    log::info!("wrote {} entries to {}", vocab.len(), out.display());
    Ok(())
}

fn cmd_train_matcher(corpus: &Path, vocab: &Path, out: &Path, config: &ConfigArgs) -> CmdResult {
    let cfg = load_config(config)?;
    let triples = load_triples(corpus, &cfg.filter())?;
    let vocab = Vocabulary::load(vocab)?;
    let articles = run::matcher_articles(&triples, &vocab, &cfg);
    let (m, losses) = train_matcher(&articles, &run::matcher_config(&cfg, vocab.len()))?;
    if let Some(l) = losses.last() {
        log::info!("final matcher loss {l:.4}");
    }
    run::save_matcher(out, &m)?;
    Ok(())
}

#[derive(Serialize)]
struct SpanOut {
    start: usize,
    end: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
    #[serde(skip_serializing_if = "Option::is_none")]
    p_start: Option<f64>,
    text: String,
}

fn span_text(t: &Triple, start: usize, end: usize) -> String {
    t.body[start..=end].join(" ")
}

#[derive(Serialize)]
struct ArticleSpans {
    id: String,
    spans: Vec<SpanOut>,
}

fn make_spans(corpus: &Path, vocab: &Path, matcher: &Path, out: &Path, config: &ConfigArgs) -> CmdResult {
    let cfg = load_config(config)?;
    let triples = load_triples(corpus, &cfg.filter())?;
    let vocab = Vocabulary::load(vocab)?;
    let m = run::load_matcher(matcher, &cfg, vocab.len())?;
    let sets = run::artificial_spans(&triples, &m, &vocab, &cfg)?;
    let rows: Vec<ArticleSpans> = triples
        .iter()
        .zip(&sets)
        .map(|(t, s)| ArticleSpans {
            id: t.id.clone(),
            spans: s
                .spans
                .iter()
                .map(|sp| SpanOut {
                    start: sp.start,
                    end: sp.end,
                    provenance: Some(sp.provenance),
                    p_start: None,
                    text: span_text(t, sp.start, sp.end),
                })
                .collect(),
        })
        .collect();
    write_file(out, &jsonl(&rows))?;
    Ok(())
}

fn cmd_train(args: &RunArgs, until: Until) -> CmdResult {
    let cfg = load_config(&args.config)?;
    let triples = load_triples(&args.corpus, &cfg.filter())?;
    let in_run = args.run.join(run::VOCAB_FILE);
    let vocab = if in_run.exists() {
        Vocabulary::load(&in_run)?
    } else if let Some(p) = &args.vocab {
        Vocabulary::load(p)?
    } else {
        Vocabulary::build(&triples, cfg.vocab_size, cfg.vocab_include_comments)
    };
    let state = run::train(&args.run, &triples, &vocab, &cfg, until)?;
    log::info!("stopped in phase {:?} at step {}", state.phase, state.step);
    Ok(())
}

struct Loaded {
    cfg: TrainConfig,
    vocab: Vocabulary,
    model: DeepCom,
    store: ParamStore,
    triples: Vec<Triple>,
}

fn load_run(args: &ModelArgs) -> Result<Loaded> {
    let cfg = TrainConfig::load(&args.run.join(run::CONFIG_FILE))?;
    init_workers(cfg.workers);
    let vocab = Vocabulary::load(&args.run.join(run::VOCAB_FILE))?;
    let ckpt = args
        .checkpoint
        .clone()
        .unwrap_or_else(|| args.run.join(run::CHECKPOINT_FILE));
    let (model, store) = run::load_model(&ckpt, &cfg, vocab.len())?;
    let triples = load_triples(&args.corpus, &inference_filter())?;
    Ok(Loaded {
        cfg,
        vocab,
        model,
        store,
        triples,
    })
}

#[derive(Serialize)]
struct GeneratedLine {
    id: String,
    title: Vec<String>,
    spans: Vec<SpanOut>,
    comment: Vec<String>,
    log_prob: f64,
    finished: bool,
}

fn generate(args: &ModelArgs, out: &Path, beam: Option<usize>) -> CmdResult {
    let l = load_run(args)?;
    let beam = beam.unwrap_or(l.cfg.beam);
    if beam == 0 {
        return Err(Error::Config(vec!["beam: must be positive".into()]).into());
    }
    let lengths = l.cfg.lengths();
    let rows = ordered_map(&l.triples, |_, t| {
        let e = encode_triple(t, 0, &l.vocab, lengths);
        let g = l
            .model
            .generate(&l.store, &Article::from(&e), beam, lengths.comment - 1, l.cfg.length_norm)?;
        let ids: Vec<usize> = g.comment.tokens.iter().copied().filter(|&i| i != EOS).collect();
        Ok(GeneratedLine {
            id: t.id.clone(),
            title: t.title.clone(),
            spans: g
                .spans
                .spans()
                .iter()
                .map(|&(a, e)| SpanOut {
                    start: a,
                    end: e,
                    provenance: None,
                    p_start: Some(g.start_probs[a]),
                    text: span_text(t, a, e),
                })
                .collect(),
            comment: l.vocab.decode(&ids),
            log_prob: g.comment.log_prob,
            finished: g.comment.finished,
        })
    })?;
    write_file(out, &jsonl(&rows))?;
    log::info!("wrote {} comments to {}", rows.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct Inspection {
    id: String,
    body_len: usize,
    start_probs: Vec<f64>,
    spans: Vec<SpanOut>,
}

fn inspect_spans(args: &ModelArgs, out: &Path) -> CmdResult {
    let l = load_run(args)?;
    let lengths = l.cfg.lengths();
    let rows = ordered_map(&l.triples, |_, t| {
        let e = encode_triple(t, 0, &l.vocab, lengths);
        let mut tape = Tape::new(&l.store);
        let mut r = l.model.read(&mut tape, &Article::from(&e))?;
        let s = l.model.reading.extract_span_set(&mut tape, &mut r)?;
        Ok(Inspection {
            id: t.id.clone(),
            body_len: e.body_len(),
            spans: s
                .spans()
                .iter()
                .map(|&(a, end)| SpanOut {
                    start: a,
                    end,
                    provenance: None,
                    p_start: Some(r.start_probs[a]),
                    text: span_text(t, a, end),
                })
                .collect(),
            start_probs: r.start_probs,
        })
    })?;
    write_file(out, &jsonl(&rows))?;
    Ok(())
}

pub fn format_report(r: &MetricReport) -> String {
    format!(
        "records  {}\nBLEU-1   {:.4}\nBLEU-2   {:.4}\nBLEU-3   {:.4}\nBLEU-4   {:.4}\nROUGE-L  {:.4}\nCIDEr    {:.4}\nMETEOR   {}\n",
        r.records, r.bleu_1, r.bleu_2, r.bleu_3, r.bleu_4, r.rouge_l, r.cider, r.meteor
    )
}

fn evaluate(hyp: &Path, reference: &Path, out: &Path, per_article: bool) -> CmdResult {
    let refs = load_triples(reference, &inference_filter())?;
    let report = evaluate_run(hyp, &refs, per_article)?;
    let json = serde_json::to_string_pretty(&report).expect("plain data serializes");
    write_file(out, &(json + "\n"))?;
    print!("{}", format_report(&report));
    Ok(())
}

fn verify(seed: Option<u64>, draws: usize, quick: bool) -> CmdResult {
    let env_seed = match std::env::var(SEED_ENV) {
        Ok(s) => Some(
            s.trim()
                .parse::<u64>()
                .map_err(|e| Error::Config(vec![format!("{SEED_ENV}: {e}")]))?,
        ),
        Err(_) => None,
    };
    let defaults = SuiteConfig::default();
    let cfg = SuiteConfig {
        seed: seed.or(env_seed).unwrap_or(defaults.seed),
        gradient_seeds: if quick { 3 } else { defaults.gradient_seeds },
        jensen_instances: if quick { 10 } else { defaults.jensen_instances },
        draws: if quick { draws.min(5_000) } else { draws },
    };
    let results = run_suite(&cfg)?;
    for r in &results {
        println!("{r}");
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} of {} properties passed", results.len() - failed, results.len());
    if failed > 0 {
        return Err(CommandError::Failed);
    }
    Ok(())
}
