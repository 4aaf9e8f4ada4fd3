use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use deepcom::corpus::{encode_triple, load_corpus, FilterConfig, Vocabulary, BOS, EOS};
use deepcom::generation::{greedy, BeamConfig, Decoder};
use deepcom::numerics::Tape;
use deepcom::reading::Article;
use deepcom::training::run;
use deepcom::{rng, toy, TrainConfig};
use serde_json::Value;
use tempfile::TempDir;

fn deepcom(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deepcom"))
        .args(args)
        .env_remove("DEEPCOM_SEED")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn relaxed() -> TrainConfig {
    TrainConfig {
        min_body_len: 1,
        min_comment_len: 1,
        min_comments: 1,
        seed: 7,
        ..toy::train_config()
    }
}

struct Fixture {
    dir: TempDir,
    corpus: PathBuf,
    config: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        let (triples, _) = toy::planted_corpus(&mut rng::derive(3, &[]), 8, 20, 10, 3, 3);
        let corpus = dir.path().join("corpus.jsonl");
        fs::write(&corpus, toy::to_jsonl(&triples)).unwrap();
        let config = dir.path().join("toy.conf");
        fs::write(&config, relaxed().to_text()).unwrap();
        Fixture { dir, corpus, config }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn train(&self, run: &Path, extra: &[&str]) -> Output {
        let mut args = vec!["train", "--corpus", p(&self.corpus), "--run", p(run), "--config", p(&self.config)];
        args.extend_from_slice(extra);
        deepcom(&args)
    }
}

fn read_jsonl(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

const TINY: &str = r#"{"id": "a", "title": ["cup", "final"], "body": ["the", "cup", "final", "is", "today", "."], "comments": [{"tokens": ["the", "final"]}, {"tokens": ["cup", "final"]}]}
{"id": "b", "title": ["rain", "today"], "body": ["rain", "is", "coming", "today", "."], "comments": [{"tokens": ["rain", "."]}, {"tokens": ["rain", "today"]}]}
"#;

#[test]
fn build_vocab_writes_known_file() {
    let f = Fixture::new();
    let corpus = f.path("tiny.jsonl");
    fs::write(&corpus, TINY).unwrap();
    let out = f.path("vocab.txt");
    let args = ["build-vocab", "--corpus", p(&corpus), "--out", p(&out), "--config", p(&f.config)];
    assert!(deepcom(&args).status.success());
    let text = fs::read_to_string(&out).unwrap();
    // counts: final/rain/today 4, ./cup 3, is/the 2, coming 1; ties lexicographic
    let expect = ["<pad>", "<unk>", "<bos>", "<eos>", "final", "rain", "today", ".", "cup", "is", "the", "coming"];
    assert_eq!(text.lines().collect::<Vec<_>>(), expect);
    assert!(deepcom(&args).status.success());
    assert_eq!(fs::read_to_string(&out).unwrap(), text);
}

#[test]
fn missing_corpus_is_io_error() {
    let f = Fixture::new();
    let missing = f.path("nope.jsonl");
    let o = deepcom(&["build-vocab", "--corpus", p(&missing), "--out", p(&f.path("v.txt"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.jsonl"), "{}", stderr(&o));
}

#[test]
fn invalid_config_lists_keys() {
    let f = Fixture::new();
    let bad = f.path("bad.conf");
    fs::write(&bad, "d1 = 0\nbogus = 1\nbeam = x\n").unwrap();
    let run = f.path("run");
    let o = deepcom(&["train", "--corpus", p(&f.corpus), "--run", p(&run), "--config", p(&bad)]);
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    for key in ["bogus", "beam"] {
        assert!(err.contains(key), "{err}");
    }
    let o = f.train(&f.path("run"), &["--set", "d1=0"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("d1"));
    let o = f.train(&f.path("run"), &["--set", "novalue"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn pretrain_only_then_generate_inspect_evaluate() {
    let f = Fixture::new();
    let run = f.path("run");
    let o = f.train(&run, &["--set", "max_step=0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for file in [run::CHECKPOINT_FILE, run::PRETRAINED_FILE, run::CONFIG_FILE, run::VOCAB_FILE, run::LOG_FILE] {
        assert!(run.join(file).exists(), "{file}");
    }
    let log = read_jsonl(&run.join(run::LOG_FILE));
    assert_eq!(log.len(), relaxed().pretrain_steps);
    assert!(log.iter().all(|r| r["phase"] == "pretrain"));

    let gen = f.path("gen.jsonl");
    let o = deepcom(&["generate", "--run", p(&run), "--corpus", p(&f.corpus), "--out", p(&gen), "--beam", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let lines = read_jsonl(&gen);
    assert_eq!(lines.len(), 8);

    // beam 1 is greedy decoding
    let cfg = TrainConfig::load(&run.join(run::CONFIG_FILE)).unwrap();
    let vocab = Vocabulary::load(&run.join(run::VOCAB_FILE)).unwrap();
    let (model, store) = run::load_model(&run.join(run::CHECKPOINT_FILE), &cfg, vocab.len()).unwrap();
    let triples = load_corpus(&f.corpus, &FilterConfig { min_body_len: 1, min_comment_len: 1, min_comments: 1, ..FilterConfig::default() })
        .unwrap()
        .triples;
    for (t, line) in triples.iter().zip(&lines) {
        let e = encode_triple(t, 0, &vocab, cfg.lengths());
        let mut tape = Tape::new(&store);
        let mut r = model.read(&mut tape, &Article::from(&e)).unwrap();
        let s = model.reading.extract_span_set(&mut tape, &mut r).unwrap();
        let h_s = model.reading.span_states(&mut tape, &r, &s).unwrap();
        let dec = Decoder::new(&model.generation, &store, tape.value(r.h_t), tape.value(h_s)).unwrap();
        let beam_cfg = BeamConfig {
            beam: 1,
            max_len: cfg.len_comment - 1,
            bos: BOS,
            eos: EOS,
            length_norm: false,
        };
        let g = greedy(&dec, beam_cfg).unwrap();
        let ids: Vec<usize> = g.tokens.iter().copied().filter(|&i| i != EOS).collect();
        let words: Vec<Value> = vocab.decode(&ids).into_iter().map(Value::from).collect();
        assert_eq!(line["id"], Value::from(t.id.clone()));
        assert_eq!(line["comment"], Value::from(words));
        assert!((line["log_prob"].as_f64().unwrap() - g.log_prob).abs() < 1e-12);
    }

    let spans = f.path("spans.jsonl");
    let o = deepcom(&["inspect-spans", "--run", p(&run), "--corpus", p(&f.corpus), "--out", p(&spans)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for a in read_jsonl(&spans) {
        let m = a["body_len"].as_u64().unwrap();
        assert_eq!(a["start_probs"].as_array().unwrap().len() as u64, m);
        let ss = a["spans"].as_array().unwrap();
        assert!(!ss.is_empty());
        for s in ss {
            let (st, en) = (s["start"].as_u64().unwrap(), s["end"].as_u64().unwrap());
            assert!(st <= en && en < m);
        }
    }

    let report = f.path("report.json");
    let o = deepcom(&["evaluate", "--hyp", p(&gen), "--ref", p(&f.corpus), "--out", p(&report)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["records"], 8);
    assert_eq!(r["meteor"], "n/a");
    let b1 = r["bleu_1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&b1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("BLEU-1"));
}

#[test]
fn fixed_seed_reruns_are_byte_identical() {
    let f = Fixture::new();
    let (a, b) = (f.path("a"), f.path("b"));
    assert!(f.train(&a, &["--workers", "1"]).status.success());
    assert!(f.train(&b, &["--workers", "3"]).status.success());
    for file in [run::CHECKPOINT_FILE, run::PRETRAINED_FILE, run::LOG_FILE] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
}

#[test]
fn seed_env_overrides_config() {
    let f = Fixture::new();
    let run = f.path("run");
    let o = Command::new(env!("CARGO_BIN_EXE_deepcom"))
        .args(["pretrain", "--corpus", p(&f.corpus), "--run", p(&run), "--config", p(&f.config)])
        .env("DEEPCOM_SEED", "99")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let echo = TrainConfig::load(&run.join(run::CONFIG_FILE)).unwrap();
    assert_eq!(echo.seed, 99);
    assert!(run.join(run::PRETRAINED_FILE).exists());
}

#[test]
fn checkpoint_problems_exit_4() {
    let f = Fixture::new();
    let run = f.path("run");
    assert!(f.train(&run, &["--set", "max_step=0"]).status.success());

    // resuming under a different config
    let o = f.train(&run, &["--set", "lr_sgd=0.5"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));

    let bad = f.path("bad.bin");
    fs::write(&bad, b"not a checkpoint").unwrap();
    let o = deepcom(&["generate", "--run", p(&run), "--checkpoint", p(&bad), "--corpus", p(&f.corpus), "--out", p(&f.path("g"))]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn matcher_and_artificial_spans() {
    let f = Fixture::new();
    let vocab = f.path("vocab.txt");
    let matcher = f.path("matcher.bin");
    let spans = f.path("spans.jsonl");
    let cfg = ["--config", p(&f.config)];
    let run = |args: &[&str]| {
        let o = deepcom(&[args, &cfg[..]].concat());
        assert!(o.status.success(), "{}", stderr(&o));
    };
    run(&["build-vocab", "--corpus", p(&f.corpus), "--out", p(&vocab)]);
    run(&["train-matcher", "--corpus", p(&f.corpus), "--vocab", p(&vocab), "--out", p(&matcher)]);
    run(&["make-spans", "--corpus", p(&f.corpus), "--vocab", p(&vocab), "--matcher", p(&matcher), "--out", p(&spans)]);
    let rows = read_jsonl(&spans);
    assert_eq!(rows.len(), 8);
    for r in rows {
        let ss = r["spans"].as_array().unwrap();
        assert!(!ss.is_empty());
        // comments copy a body trigram, so n-gram matches always exist
        assert!(ss.iter().any(|s| s["provenance"] == "ngram_match"));
    }
}

#[test]
fn verify_quick_passes() {
    let o = deepcom(&["verify", "--quick"]);
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{out}");
    assert!(out.lines().filter(|l| l.starts_with("PASS")).count() >= 10, "{out}");
}
