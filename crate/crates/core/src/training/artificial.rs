//! Heuristic span supervision: body n-grams that occur in a comment, and body
//! sentences the matching model pairs with a comment.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::matcher::MatchingModel;
use crate::corpus::{Triple, Vocabulary};
use crate::error::Result;
use crate::reading::SpanSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    NgramMatch,
    SentenceMatch,
    /// Best-scoring sentence, used when nothing else qualified.
    Fallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArtificialSpan {
    pub start: usize,
    pub end: usize,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ArtificialSpanSet {
    pub spans: Vec<ArtificialSpan>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpanRules {
    pub ngram_max: usize,
    pub threshold: f64,
}

/// Matching score of a token sequence against a comment.
pub trait SentenceScorer {
    fn score(&self, sentence: &[String], comment: &[String]) -> Result<f64>;
}

/// Adapts a trained [`MatchingModel`] through the vocabulary, clipping the
/// comment side to `max_comment` tokens.
pub struct VocabScorer<'a> {
    pub model: &'a MatchingModel,
    pub vocab: &'a Vocabulary,
    pub max_comment: usize,
}

impl SentenceScorer for VocabScorer<'_> {
    fn score(&self, sentence: &[String], comment: &[String]) -> Result<f64> {
        let s = self.vocab.encode(sentence);
        let c = self.vocab.encode(&comment[..comment.len().min(self.max_comment)]);
        self.model.score(&s, &c)
    }
}

impl<F: Fn(&[String], &[String]) -> f64> SentenceScorer for F {
    fn score(&self, sentence: &[String], comment: &[String]) -> Result<f64> {
        Ok(self(sentence, comment))
    }
}

pub fn construct_artificial_spans<S: SentenceScorer>(t: &Triple, scorer: &S, rules: SpanRules) -> Result<ArtificialSpanSet> {
    let mut spans = Vec::new();
    let mut push = |start, end, provenance| spans.push(ArtificialSpan { start, end, provenance });

    for n in 1..=rules.ngram_max {
        let grams: HashSet<&[String]> = t.comments.iter().flat_map(|c| c.windows(n)).collect();
        if grams.is_empty() {
            continue;
        }
        for (i, w) in t.body.windows(n).enumerate() {
            if grams.contains(w) {
                push(i, i + n - 1, Provenance::NgramMatch);
            }
        }
    }

    let mut best: Option<(f64, usize, usize)> = None;
    for r in t.sentences() {
        let sentence = &t.body[r.clone()];
        let mut top = f64::NEG_INFINITY;
        for c in &t.comments {
            top = top.max(scorer.score(sentence, c)?);
        }
        if top > rules.threshold {
            push(r.start, r.end - 1, Provenance::SentenceMatch);
        }
        if best.is_none_or(|b| top > b.0) {
            best = Some((top, r.start, r.end - 1));
        }
    }

    if spans.is_empty() {
        if let Some((_, a, e)) = best {
            spans.push(ArtificialSpan {
                start: a,
                end: e,
                provenance: Provenance::Fallback,
            });
        }
    }
    // a span found by both rules keeps its n-gram provenance
    spans.sort_by_key(|s| (s.start, s.end, s.provenance));
    spans.dedup_by_key(|s| (s.start, s.end));
    Ok(ArtificialSpanSet { spans })
}

impl ArtificialSpanSet {
    /// Projects onto a body truncated to `m` tokens: spans starting past the
    /// end are dropped, ends are clipped, and one span is kept per start (the
    /// longest). If every span is dropped the first position is used.
    /// Returns the set and the number of spans that were clipped or dropped.
    pub fn to_span_set(&self, m: usize) -> Result<(SpanSet, usize)> {
        let mut adjusted = 0;
        let mut by_start: Vec<Option<usize>> = vec![None; m];
        for s in &self.spans {
            if s.start >= m {
                adjusted += 1;
                continue;
            }
            if s.end >= m {
                adjusted += 1;
            }
            let e = s.end.min(m - 1);
            let slot = &mut by_start[s.start];
            *slot = Some(slot.map_or(e, |old| old.max(e)));
        }
        let spans: Vec<(usize, usize)> = by_start
            .iter()
            .enumerate()
            .filter_map(|(a, e)| e.map(|e| (a, e)))
            .collect();
        if spans.is_empty() {
            return Ok((SpanSet::singleton(0, 0), adjusted));
        }
        Ok((SpanSet::new(spans, m)?, adjusted))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn triple(body: &str, comments: &[&str]) -> Triple {
        Triple::new("x", toks("t"), toks(body), None, comments.iter().map(|c| toks(c)).collect()).unwrap()
    }

    const RULES: SpanRules = SpanRules {
        ngram_max: 6,
        threshold: 0.4,
    };

    fn never(_: &[String], _: &[String]) -> f64 {
        0.0
    }

    #[test]
    fn bigram_match_is_marked() {
        let t = triple("france tops the world cup ranking .", &["what a world cup"]);
        let s = construct_artificial_spans(&t, &never, RULES).unwrap();
        assert!(s.spans.contains(&ArtificialSpan {
            start: 3,
            end: 4,
            provenance: Provenance::NgramMatch
        }));
        assert!(s.spans.iter().all(|sp| sp.end - sp.start < 6));
    }

    #[test]
    fn any_comment_above_threshold_marks_sentence() {
        let t = triple("a b . c d .", &["x", "y"]);
        let scorer = |s: &[String], c: &[String]| match (s[0].as_str(), c[0].as_str()) {
            ("c", "x") => 0.2,
            ("c", "y") => 0.41,
            _ => 0.1,
        };
        let s = construct_artificial_spans(&t, &scorer, RULES).unwrap();
        assert_eq!(
            s.spans,
            vec![ArtificialSpan {
                start: 3,
                end: 5,
                provenance: Provenance::SentenceMatch
            }]
        );
    }

    #[test]
    fn threshold_is_strict() {
        let t = triple("a b . c d .", &["x"]);
        let scorer = |s: &[String], _: &[String]| if s[0] == "c" { 0.4 } else { 0.3 };
        let s = construct_artificial_spans(&t, &scorer, RULES).unwrap();
        assert_eq!(s.spans[0].provenance, Provenance::Fallback);
        assert_eq!((s.spans[0].start, s.spans[0].end), (3, 5));
    }

    #[test]
    fn no_overlap_falls_back_to_best_sentence() {
        let t = triple("a b . c d . e f .", &["x y"]);
        let scorer = |s: &[String], _: &[String]| if s[0] == "e" { 0.3 } else { 0.1 };
        let s = construct_artificial_spans(&t, &scorer, RULES).unwrap();
        assert_eq!(s.spans.len(), 1);
        assert_eq!((s.spans[0].start, s.spans[0].end, s.spans[0].provenance), (6, 8, Provenance::Fallback));
    }

    #[test]
    fn sentence_spans_follow_boundaries() {
        let t = triple("a b . c d .", &["q"]);
        let always = |_: &[String], _: &[String]| 0.9;
        let s = construct_artificial_spans(&t, &always, RULES).unwrap();
        let sentences = t.sentences();
        for sp in &s.spans {
            assert!(sentences.iter().any(|r| r.start == sp.start && r.end - 1 == sp.end));
        }
    }

    #[test]
    fn projection_clips_and_keeps_longest() {
        let set = ArtificialSpanSet {
            spans: vec![
                ArtificialSpan { start: 0, end: 0, provenance: Provenance::NgramMatch },
                ArtificialSpan { start: 0, end: 2, provenance: Provenance::SentenceMatch },
                ArtificialSpan { start: 3, end: 7, provenance: Provenance::SentenceMatch },
                ArtificialSpan { start: 9, end: 9, provenance: Provenance::NgramMatch },
            ],
        };
        let (s, adjusted) = set.to_span_set(5).unwrap();
        assert_eq!(s.spans(), &[(0, 2), (3, 4)]);
        assert_eq!(adjusted, 2);
        let (s, _) = ArtificialSpanSet::default().to_span_set(5).unwrap();
        assert_eq!(s.spans(), &[(0, 0)]);
    }
}
