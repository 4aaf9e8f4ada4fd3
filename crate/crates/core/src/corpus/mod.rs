//! Article–comment data: loading and filtering, vocabulary, fixed-length
//! encoding and mini-batch scheduling.

mod batch;
mod encode;
mod vocab;

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::ops::Range;
use std::path::Path;

use serde::Deserialize;

pub use batch::{batch_iter, BatchSchedule};
pub use encode::{encode_triple, encode_corpus, EncodedTriple, Example, Lengths};
pub use vocab::{Vocabulary, BOS, EOS, PAD, RESERVED, UNK};

use crate::error::{Error, Result};

/// Tokens that close a sentence when a body comes without explicit
/// boundaries.
pub const SENTENCE_TERMINATORS: &[&str] = &[".", "!", "?", "。", "！", "？"];

/// One article with its comments.
#[derive(Debug, Clone, PartialEq)]
pub struct Triple {
    pub id: String,
    pub title: Vec<String>,
    pub body: Vec<String>,
    /// Sentence of each body token, 0-based, non-decreasing.
    pub sentence_index: Vec<usize>,
    /// Position of each body token inside its sentence, 0-based.
    pub within_sentence_index: Vec<usize>,
    pub comments: Vec<Vec<String>>,
}

impl Triple {
    /// Builds positional indices from half-open sentence ranges that must
    /// tile the body in order.
    pub fn new(
        id: impl Into<String>,
        title: Vec<String>,
        body: Vec<String>,
        sentences: Option<&[Range<usize>]>,
        comments: Vec<Vec<String>>,
    ) -> Result<Self> {
        let ranges = match sentences {
            Some(r) => {
                let mut expect = 0;
                for s in r {
                    if s.start != expect || s.end <= s.start || s.end > body.len() {
                        return Err(Error::invalid(format!(
                            "sentence ranges must tile the body; got {s:?} at offset {expect}"
                        )));
                    }
                    expect = s.end;
                }
                if expect != body.len() {
                    return Err(Error::invalid("sentence ranges do not cover the body"));
                }
                r.to_vec()
            }
            None => split_sentences(&body),
        };
        let mut sentence_index = Vec::with_capacity(body.len());
        let mut within_sentence_index = Vec::with_capacity(body.len());
        for (s, range) in ranges.iter().enumerate() {
            for (w, _) in range.clone().enumerate() {
                sentence_index.push(s);
                within_sentence_index.push(w);
            }
        }
        Ok(Triple {
            id: id.into(),
            title,
            body,
            sentence_index,
            within_sentence_index,
            comments,
        })
    }

    /// Half-open token ranges of the body's sentences.
    pub fn sentences(&self) -> Vec<Range<usize>> {
        let mut out: Vec<Range<usize>> = Vec::new();
        for (k, &s) in self.sentence_index.iter().enumerate() {
            if s >= out.len() {
                out.push(k..k + 1);
            } else if let Some(r) = out.last_mut() {
                r.end = k + 1;
            }
        }
        out
    }
}

/// Splits after every terminator token; a trailing fragment is its own
/// sentence.
pub fn split_sentences(body: &[String]) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, tok) in body.iter().enumerate() {
        if SENTENCE_TERMINATORS.contains(&tok.as_str()) {
            out.push(start..i + 1);
            start = i + 1;
        }
    }
    if start < body.len() {
        out.push(start..body.len());
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    pub min_body_len: usize,
    pub min_comment_len: usize,
    pub max_comment_len: usize,
    pub max_comments: usize,
    pub min_comments: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            min_body_len: 30,
            min_comment_len: 10,
            max_comment_len: 100,
            max_comments: 30,
            min_comments: 5,
        }
    }
}

#[derive(Debug, Deserialize)]
struct RawComment {
    tokens: Vec<String>,
    #[serde(default)]
    upvotes: Option<i64>,
}

#[derive(Debug, Deserialize)]
struct RawArticle {
    #[serde(default)]
    id: Option<serde_json::Value>,
    title: Vec<String>,
    body: Vec<String>,
    #[serde(default)]
    sentences: Option<Vec<[usize; 2]>>,
    comments: Vec<RawComment>,
}

#[derive(Debug, Clone)]
pub struct LoadedCorpus {
    pub triples: Vec<Triple>,
    pub malformed_lines: usize,
    pub filtered_articles: usize,
}

/// Reads one JSON article per line, skipping (and counting) malformed lines,
/// then applies the length and comment-count filters.
pub fn load_corpus(path: &Path, filter: &FilterConfig) -> Result<LoadedCorpus> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut triples = Vec::new();
    let mut malformed = 0;
    let mut filtered = 0;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawArticle = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("{}:{}: skipping malformed line: {e}", path.display(), lineno + 1);
                malformed += 1;
                continue;
            }
        };
        match article_from_raw(raw, lineno, filter) {
            Ok(Some(t)) => triples.push(t),
            Ok(None) => filtered += 1,
            Err(e) => {
                log::warn!("{}:{}: skipping malformed article: {e}", path.display(), lineno + 1);
                malformed += 1;
            }
        }
    }
    if triples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(LoadedCorpus {
        triples,
        malformed_lines: malformed,
        filtered_articles: filtered,
    })
}

fn article_from_raw(raw: RawArticle, lineno: usize, filter: &FilterConfig) -> Result<Option<Triple>> {
    let id = match raw.id {
        Some(serde_json::Value::String(s)) => s,
        Some(v) => v.to_string(),
        None => lineno.to_string(),
    };
    if raw.body.len() < filter.min_body_len || raw.title.is_empty() {
        return Ok(None);
    }
    let mut comments: Vec<(usize, RawComment)> = raw
        .comments
        .into_iter()
        .filter(|c| (filter.min_comment_len..=filter.max_comment_len).contains(&c.tokens.len()))
        .enumerate()
        .collect();
    if comments.iter().any(|(_, c)| c.upvotes.is_some()) {
        // stable: equal upvotes keep file order
        comments.sort_by_key(|(i, c)| (std::cmp::Reverse(c.upvotes.unwrap_or(0)), *i));
    }
    comments.truncate(filter.max_comments);
    comments.sort_by_key(|(i, _)| *i);
    if comments.len() < filter.min_comments.max(1) {
        return Ok(None);
    }
    let sentences: Option<Vec<Range<usize>>> = raw.sentences.map(|v| v.iter().map(|[s, e]| *s..*e).collect());
    Triple::new(
        id,
        raw.title,
        raw.body,
        sentences.as_deref(),
        comments.into_iter().map(|(_, c)| c.tokens).collect(),
    )
    .map(Some)
}
