//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. `ACCEPTANCE_ONLY=4,6` runs a subset.

use std::path::Path;
use std::time::{Duration, Instant};

use deepcom::corpus::{encode_corpus, Example, Triple, Vocabulary};
use deepcom::metrics::{bleu, cider, rouge_l, EvalRecord};
use deepcom::numerics::Tape;
use deepcom::reading::Article;
use deepcom::training::run::{self, Until};
use deepcom::training::{fit_baseline, pretrain_loss, AdaGrad, BaselineNet};
use deepcom::verification::suite::{beam_oracles, gradient_oracles, jensen, normalization, unbiasedness};
use deepcom::verification::{compare_baselines, OracleResult, Resolution};
use deepcom::{rng, toy, DeepCom, ParamStore, Result, TrainConfig};
use tempfile::TempDir;

const SEED: u64 = 1;

struct Outcome {
    passed: bool,
    detail: String,
}

fn from_oracles(rs: &[OracleResult]) -> Outcome {
    let failed: Vec<&OracleResult> = rs.iter().filter(|r| !r.passed).collect();
    let detail = if failed.is_empty() {
        rs.iter().map(|r| format!("{}: {}", r.name, r.detail)).collect::<Vec<_>>().join("; ")
    } else {
        failed.iter().map(|r| format!("{}: {}", r.name, r.detail)).collect::<Vec<_>>().join("; ")
    };
    Outcome {
        passed: failed.is_empty(),
        detail,
    }
}

fn criterion_1() -> Result<Outcome> {
    Ok(from_oracles(&gradient_oracles(SEED, 20, 1e-4)?))
}

fn criterion_2() -> Result<Outcome> {
    Ok(from_oracles(&[normalization(SEED, 1e-9)?]))
}

fn criterion_3() -> Result<Outcome> {
    Ok(from_oracles(&[jensen(SEED, 50)?]))
}

fn criterion_4() -> Result<Outcome> {
    Ok(from_oracles(&[unbiasedness(SEED, 50_000, 3.0, Resolution::Coordinate)?]))
}

/// Synthetic corpus of 20 articles over 40 words where every comment copies
/// a three-token body span.
fn planted() -> (Vec<Triple>, Vec<usize>) {
    toy::planted_corpus(&mut rng::derive(SEED, &[60]), 20, 40, 12, 3, 2)
}

fn desk_config() -> TrainConfig {
    TrainConfig {
        d1: 16,
        d2: 8,
        mlp_hidden: 16,
        vocab_size: 50,
        init_std: 0.1,
        max_word_pos: 12,
        max_sent_pos: 2,
        len_title: 3,
        len_body: 12,
        len_comment: 5,
        min_body_len: 1,
        min_comment_len: 1,
        min_comments: 1,
        batch_size: 20,
        pretrain_steps: 400,
        max_step: 100,
        checkpoint_every: 100,
        J: 2,
        matcher_steps: 200,
        seed: SEED,
        ..TrainConfig::default()
    }
}

fn examples(triples: &[Triple], vocab: &Vocabulary, cfg: &TrainConfig) -> Vec<Example> {
    encode_corpus(triples, vocab, cfg.lengths())
}

fn pretrained(dir: &Path, triples: &[Triple], cfg: &TrainConfig) -> Result<(Vocabulary, DeepCom, ParamStore)> {
    let vocab = Vocabulary::build(triples, cfg.vocab_size, true);
    run::train(dir, triples, &vocab, cfg, Until::Pretrained)?;
    let (m, s) = run::load_model(&dir.join(run::PRETRAINED_FILE), cfg, vocab.len())?;
    Ok((vocab, m, s))
}

fn criterion_5() -> Result<Outcome> {
    let (triples, _) = planted();
    // a short pretraining run leaves the returns spread out; the full one
    // makes them nearly constant and any baseline would pass
    let cfg = TrainConfig {
        pretrain_steps: 40,
        ..desk_config()
    };
    let dir = TempDir::new().expect("temp dir");
    let (vocab, model, store) = pretrained(dir.path(), &triples, &cfg)?;
    // one comment per article: a batch of 20
    let ex: Vec<Example> = examples(&triples, &vocab, &cfg).into_iter().filter(|e| e.comment == 0).collect();
    let batch: Vec<_> = ex.iter().map(|e| &e.data).collect();
    let mut baseline = BaselineNet::new(&run::scorer_dims(&cfg, vocab.len()), cfg.seed)?;
    let opt = AdaGrad {
        lr: cfg.lr_baseline,
        acc0: cfg.adagrad_acc0,
    };
    let losses = fit_baseline(&model, &store, &mut baseline, &batch, 300, cfg.J, &opt, SEED)?;
    let r = compare_baselines(&model, &store, &baseline, &batch, 10_000, SEED)?;
    let z = r.mean_z_scores();
    let worst = z.iter().cloned().fold(0.0, f64::max);
    let over = z.iter().filter(|&&z| z > 3.0).count();
    let head = losses[..10].iter().sum::<f64>() / 10.0;
    let tail = losses[losses.len() - 10..].iter().sum::<f64>() / 10.0;
    Ok(Outcome {
        passed: r.var_baselined <= r.var_zero && over == 0,
        detail: format!(
            "batch {}, {} paired draws, variance trace {:.4e} -> {:.4e} (ratio {:.2e}), mean B {:.3}, \
             means: {over} of {} tensor projections beyond 3 SE (worst {worst:.2}); baseline fit loss {head:.3} -> {tail:.3}",
            r.batch,
            r.draws,
            r.var_zero,
            r.var_baselined,
            r.var_baselined / r.var_zero,
            r.mean_big_b,
            z.len()
        ),
    })
}

fn mean_pretrain_loss(model: &DeepCom, store: &ParamStore, ex: &[Example], spans: &[deepcom::SpanSet]) -> Result<f64> {
    let mut total = 0.0;
    for (e, s) in ex.iter().zip(spans) {
        let mut t = Tape::new(store);
        let (loss, _) = pretrain_loss(model, &mut t, &e.data, s)?;
        total += t.scalar(loss);
    }
    Ok(total / ex.len() as f64)
}

fn criterion_6() -> Result<Outcome> {
    let (triples, planted_at) = planted();
    let cfg = desk_config();
    let dir = TempDir::new().expect("temp dir");
    let vocab = Vocabulary::build(&triples, cfg.vocab_size, true);
    run::train(dir.path(), &triples, &vocab, &cfg, Until::Finished)?;

    let ex = examples(&triples, &vocab, &cfg);
    let matcher = run::load_matcher(&dir.path().join(run::PRETRAINED_FILE), &cfg, vocab.len())?;
    let spans = run::example_spans(&ex, &run::artificial_spans(&triples, &matcher, &vocab, &cfg)?)?;
    let (m0, s0) = DeepCom::initialise(&cfg.model(vocab.len()), cfg.seed)?;
    let (mp, sp) = run::load_model(&dir.path().join(run::PRETRAINED_FILE), &cfg, vocab.len())?;
    let (mf, sf) = run::load_model(&dir.path().join(run::CHECKPOINT_FILE), &cfg, vocab.len())?;
    let loss0 = mean_pretrain_loss(&m0, &s0, &ex, &spans)?;
    let loss_p = mean_pretrain_loss(&mp, &sp, &ex, &spans)?;
    let drop = 1.0 - loss_p / loss0;
    let lp_pre = run::mean_comment_log_prob(&mp, &sp, &ex)?;
    let lp_final = run::mean_comment_log_prob(&mf, &sf, &ex)?;

    let mut hits = 0;
    for (e, &at) in ex.iter().filter(|e| e.comment == 0).zip(&planted_at) {
        let mut t = Tape::new(&sf);
        let mut r = mf.read(&mut t, &Article::from(&e.data))?;
        let s = mf.reading.extract_span_set(&mut t, &mut r)?;
        if s.overlaps(at, at + 2) {
            hits += 1;
        }
    }
    let share = hits as f64 / planted_at.len() as f64;
    let (a, b, c) = (drop >= 0.8, lp_final >= lp_pre, share >= 0.8);
    let mark = |ok: bool| if ok { "ok" } else { "FAILED" };
    Ok(Outcome {
        passed: a && b && c,
        detail: format!(
            "(a) pretraining loss {loss0:.3} -> {loss_p:.3}, down {:.1}% [{}]; \
             (b) mean log P(C|S,T) pretrained {lp_pre:.4} -> final {lp_final:.4} [{}]; \
             (c) planted span hit in {hits}/{} articles [{}]",
            100.0 * drop,
            mark(a),
            mark(b),
            planted_at.len(),
            mark(c)
        ),
    })
}

fn rec(h: &str, r: &str) -> EvalRecord {
    let split = |s: &str| s.split_whitespace().map(String::from).collect::<Vec<_>>();
    EvalRecord {
        hypothesis: split(h),
        references: vec![split(r)],
    }
}

fn criterion_7() -> Result<Outcome> {
    let rs = [rec("a b", "a b"), rec("c d", "c e"), rec("f", "g"), rec("h h", "h"), rec("a x", "a b")];
    // BLEU-1: clipped matches 2+1+0+1+1 over 9 hypothesis tokens; hypothesis
    // length 9 >= reference length 8, so no brevity penalty
    let bleu1 = 5.0 / 9.0;
    // ROUGE-L with β² = 1.44: F = 2.44 P R / (R + 1.44 P)
    let rouge = (1.0 + 0.5 + 0.0 + 1.22 / 1.72 + 0.5) / 5.0;
    // CIDEr over N = 5 reference documents, idf = ln(5 / df), unseen n-grams
    // ln 5. Unigram cosines: 1, 1/2, 0, 1, ln2.5 / (√2 sqrt(ln²2.5 + ln²5));
    // bigram cosines: 1, 0, 0, 0, 0; no trigrams or 4-grams in any pair.
    let (l25, l5) = (2.5f64.ln(), 5f64.ln());
    let c5 = l25 / (2f64.sqrt() * (l25 * l25 + l5 * l5).sqrt());
    let per = [2.0, 0.5, 0.0, 1.0, c5].map(|s| 10.0 * s / 4.0);
    let cider_hand = per.iter().sum::<f64>() / 5.0;

    let got = (bleu(&rs, 1)?, rouge_l(&rs), cider(&rs)?);
    let same = [rec("the cup final is today", "the cup final is today"), rec("rain again", "rain again")];
    let ident = (bleu(&same, 1)?, rouge_l(&same));
    let ok = (got.0 - bleu1).abs() < 1e-9
        && (got.1 - rouge).abs() < 1e-9
        && (got.2 - cider_hand).abs() < 1e-9
        && ident == (1.0, 1.0);
    Ok(Outcome {
        passed: ok,
        detail: format!(
            "BLEU-1 {:.12} (hand {bleu1:.12}), ROUGE-L {:.12} (hand {rouge:.12}), CIDEr {:.12} (hand {cider_hand:.12}); identical pair BLEU-1 {} ROUGE-L {}",
            got.0, got.1, got.2, ident.0, ident.1
        ),
    })
}

fn criterion_8() -> Result<Outcome> {
    Ok(from_oracles(&beam_oracles(SEED)?))
}

fn criterion_9() -> Result<Outcome> {
    let (triples, _) = planted();
    let cfg = TrainConfig {
        pretrain_steps: 20,
        max_step: 10,
        checkpoint_every: 7,
        matcher_steps: 20,
        ..desk_config()
    };
    let vocab = Vocabulary::build(&triples, cfg.vocab_size, true);
    let (a, b) = (TempDir::new().expect("temp dir"), TempDir::new().expect("temp dir"));
    let in_pool = |threads: usize, dir: &Path| -> Result<()> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("thread pool");
        pool.install(|| run::train(dir, &triples, &vocab, &cfg, Until::Finished)).map(|_| ())
    };
    in_pool(1, a.path())?;
    in_pool(4, b.path())?;
    let mut same = Vec::new();
    let mut differ = Vec::new();
    for f in [run::CHECKPOINT_FILE, run::PRETRAINED_FILE, run::LOG_FILE, run::CONFIG_FILE, run::VOCAB_FILE] {
        let read = |d: &Path| std::fs::read(d.join(f)).unwrap_or_default();
        let (x, y) = (read(a.path()), read(b.path()));
        if !x.is_empty() && x == y {
            same.push(format!("{f} ({} bytes)", x.len()));
        } else {
            differ.push(f);
        }
    }
    Ok(Outcome {
        passed: differ.is_empty(),
        detail: if differ.is_empty() {
            format!("1 vs 4 threads, identical: {}", same.join(", "))
        } else {
            format!("differ: {}", differ.join(", "))
        },
    })
}

type Criterion = (u32, &'static str, u64, fn() -> Result<Outcome>);

const CRITERIA: &[Criterion] = &[
    (1, "gradient correctness, 20 seeds", 60, criterion_1),
    (2, "span-distribution normalization", 10, criterion_2),
    (3, "Jensen bound on 50 instances", 60, criterion_3),
    (4, "estimator unbiasedness, 50k draws", 600, criterion_4),
    (5, "baseline variance reduction", 600, criterion_5),
    (6, "end-to-end desk run", 900, criterion_6),
    (7, "metric oracles", 10, criterion_7),
    (8, "beam search optimality", 10, criterion_8),
    (9, "reproducibility", 300, criterion_9),
];

fn main() {
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = 0;
    for &(n, name, limit, f) in CRITERIA {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let start = Instant::now();
        let out = f();
        let took = start.elapsed();
        let in_time = took <= Duration::from_secs(limit);
        let (passed, detail) = match out {
            Ok(o) => (o.passed && in_time, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !passed {
            failed += 1;
        }
        println!(
            "criterion {n} {}  {name}  ({detail}; {:.1} s, limit {limit} s{})",
            if passed { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            if in_time { "" } else { ", OVER TIME" }
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
