//! Small synthetic instances for oracles, tests and benchmarks.

use rand::Rng;

use crate::corpus::{EncodedTriple, Triple, BOS, EOS, RESERVED};
use crate::model::ModelConfig;
use crate::training::TrainConfig;

/// `d1 = 8, d2 = 4` with a vocabulary of `vocab_size` ids.
pub fn model_config(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        vocab_size,
        d1: 8,
        d2: 4,
        mlp_hidden: 6,
        max_word_pos: 8,
        max_sent_pos: 4,
        init_std: 0.3,
        share_embeddings: false,
    }
}

/// Desk-scale run settings matching [`model_config`], with short phases.
pub fn train_config() -> TrainConfig {
    TrainConfig {
        d1: 8,
        d2: 4,
        mlp_hidden: 6,
        vocab_size: 50,
        init_std: 0.3,
        max_word_pos: 12,
        max_sent_pos: 4,
        len_title: 5,
        len_body: 12,
        len_comment: 8,
        batch_size: 4,
        pretrain_steps: 6,
        max_step: 4,
        checkpoint_every: 3,
        matcher_steps: 5,
        beam: 2,
        ..TrainConfig::default()
    }
}

/// Unpadded encoding from raw ids; `comment` excludes BOS and EOS. The body
/// is one sentence per three tokens.
pub fn encoded(title: &[usize], body: &[usize], comment: &[usize]) -> EncodedTriple {
    let framed: Vec<usize> = std::iter::once(BOS)
        .chain(comment.iter().copied())
        .chain(std::iter::once(EOS))
        .collect();
    EncodedTriple {
        title_ids: title.to_vec(),
        title_mask: vec![true; title.len()],
        body_ids: body.to_vec(),
        body_mask: vec![true; body.len()],
        body_pos: (0..body.len()).map(|k| (k % 3, k / 3)).collect(),
        comment_mask: vec![true; framed.len()],
        comment_ids: framed,
    }
}

/// Random instance over ordinary ids `RESERVED.len()..vocab_size`.
pub fn random_instance<R: Rng + ?Sized>(
    rng: &mut R,
    vocab_size: usize,
    title_len: usize,
    body_len: usize,
    comment_len: usize,
) -> EncodedTriple {
    let lo = RESERVED.len();
    let mut draw = |n: usize| (0..n).map(|_| rng.random_range(lo..vocab_size)).collect::<Vec<_>>();
    let title = draw(title_len);
    let body = draw(body_len);
    let comment = draw(comment_len);
    encoded(&title, &body, &comment)
}

/// Articles whose every comment copies the body span `[planted, planted +
/// span_len)`. Tokens are `w0..w{vocab-1}`; bodies are one sentence each so
/// no sentence-level span can single out the planted one.
pub fn planted_corpus<R: Rng + ?Sized>(
    rng: &mut R,
    articles: usize,
    vocab: usize,
    body_len: usize,
    span_len: usize,
    comments: usize,
) -> (Vec<Triple>, Vec<usize>) {
    let word = |i: usize| format!("w{i}");
    let mut triples = Vec::with_capacity(articles);
    let mut planted = Vec::with_capacity(articles);
    for a in 0..articles {
        let body: Vec<String> = (0..body_len).map(|_| word(rng.random_range(0..vocab))).collect();
        let start = rng.random_range(0..=body_len - span_len);
        let title: Vec<String> = (0..3).map(|_| word(rng.random_range(0..vocab))).collect();
        let comment: Vec<String> = body[start..start + span_len].to_vec();
        let t = Triple::new(
            format!("a{a}"),
            title,
            body.clone(),
            Some(&[0..body_len]),
            vec![comment; comments],
        )
        .expect("one sentence tiles the body");
        triples.push(t);
        planted.push(start);
    }
    (triples, planted)
}

/// Corpus file lines in the loader's format.
pub fn to_jsonl(triples: &[Triple]) -> String {
    triples
        .iter()
        .map(|t| {
            let sentences: Vec<[usize; 2]> = t.sentences().iter().map(|r| [r.start, r.end]).collect();
            let comments: Vec<_> = t.comments.iter().map(|c| serde_json::json!({ "tokens": c })).collect();
            serde_json::json!({
                "id": t.id,
                "title": t.title,
                "body": t.body,
                "sentences": sentences,
                "comments": comments,
            })
            .to_string()
                + "\n"
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn planted_comments_copy_the_body() {
        let (ts, starts) = planted_corpus(&mut rng::derive(1, &[]), 4, 20, 10, 3, 2);
        for (t, &s) in ts.iter().zip(&starts) {
            assert_eq!(t.comments[0], t.body[s..s + 3]);
            assert_eq!(t.comments.len(), 2);
        }
    }

    #[test]
    fn jsonl_round_trips_through_loader() {
        use crate::corpus::{load_corpus, FilterConfig};
        use std::io::Write;
        let (ts, _) = planted_corpus(&mut rng::derive(2, &[]), 3, 20, 10, 3, 2);
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(to_jsonl(&ts).as_bytes()).unwrap();
        let filter = FilterConfig {
            min_body_len: 1,
            min_comment_len: 1,
            min_comments: 1,
            ..FilterConfig::default()
        };
        assert_eq!(load_corpus(f.path(), &filter).unwrap().triples, ts);
    }

    #[test]
    fn encoded_is_framed() {
        let e = encoded(&[4], &[5, 6], &[7]);
        assert_eq!(e.comment(), &[BOS, 7, EOS]);
        assert_eq!(e.body_len(), 2);
    }
}
