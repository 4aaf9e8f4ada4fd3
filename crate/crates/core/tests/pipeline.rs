use std::fs;

use deepcom::corpus::{encode_triple, load_corpus, Vocabulary, EOS};
use deepcom::metrics::evaluate_run;
use deepcom::reading::Article;
use deepcom::training::run::{self, Until};
use deepcom::{rng, toy, TrainConfig};
use tempfile::TempDir;

fn config() -> TrainConfig {
    TrainConfig {
        min_body_len: 1,
        min_comment_len: 1,
        min_comments: 1,
        len_body: 12,
        len_comment: 5,
        ..toy::train_config()
    }
}

#[test]
fn corpus_file_to_scored_comments() {
    let dir = TempDir::new().unwrap();
    let (triples, _) = toy::planted_corpus(&mut rng::derive(3, &[0]), 6, 20, 10, 2, 2);
    let corpus = dir.path().join("corpus.jsonl");
    fs::write(&corpus, toy::to_jsonl(&triples)).unwrap();

    let cfg = config();
    let loaded = load_corpus(&corpus, &cfg.filter()).unwrap();
    assert_eq!(loaded.triples.len(), 6);
    assert_eq!(loaded.malformed_lines, 0);
    let vocab = Vocabulary::build(&loaded.triples, cfg.vocab_size, cfg.vocab_include_comments);

    let run_dir = dir.path().join("run");
    let state = run::train(&run_dir, &loaded.triples, &vocab, &cfg, Until::Finished).unwrap();
    assert_eq!(state.phase, run::Phase::Done);
    let log = fs::read_to_string(run_dir.join(run::LOG_FILE)).unwrap();
    assert_eq!(log.lines().count(), cfg.pretrain_steps + cfg.max_step);

    let (model, store) = run::load_model(&run_dir.join(run::CHECKPOINT_FILE), &cfg, vocab.len()).unwrap();
    assert_eq!(store.flatten_values(), state.store.flatten_values());

    let lengths = cfg.lengths();
    let mut hyp = String::new();
    for t in &loaded.triples {
        let e = encode_triple(t, 0, &vocab, lengths);
        let g = model.generate(&store, &Article::from(&e), 2, lengths.comment - 1, false).unwrap();
        assert!(g.comment.log_prob.is_finite() && g.comment.log_prob <= 0.0);
        assert!(g.spans.spans().iter().all(|&(a, end)| a <= end && end < e.body_len()));
        let words: Vec<usize> = g.comment.tokens.iter().copied().filter(|&i| i != EOS).collect();
        let line = serde_json::json!({ "id": t.id, "comment": vocab.decode(&words) });
        hyp.push_str(&format!("{line}\n"));
    }
    let hyp_path = dir.path().join("hyp.jsonl");
    fs::write(&hyp_path, hyp).unwrap();
    let report = evaluate_run(&hyp_path, &loaded.triples, true).unwrap();
    assert_eq!(report.records, 6);
    assert_eq!(report.per_article.as_ref().map(Vec::len), Some(6));
    for s in [report.bleu_1, report.bleu_4, report.rouge_l] {
        assert!((0.0..=1.0).contains(&s));
    }
    assert!(report.cider >= 0.0);
}

#[test]
fn malformed_lines_are_skipped_and_counted() {
    let dir = TempDir::new().unwrap();
    let (triples, _) = toy::planted_corpus(&mut rng::derive(4, &[0]), 3, 20, 10, 2, 1);
    let corpus = dir.path().join("corpus.jsonl");
    let text = format!("{{not json\n{}\n{{\"id\": \"x\"}}\n", toy::to_jsonl(&triples).trim_end());
    fs::write(&corpus, text).unwrap();
    let loaded = load_corpus(&corpus, &config().filter()).unwrap();
    assert_eq!(loaded.triples.len(), 3);
    assert_eq!(loaded.malformed_lines, 2);
}
