//! Multi-reference BLEU, ROUGE-L and CIDEr, and run-level evaluation.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Triple;
use crate::error::{Error, Result};

/// ROUGE-L recall weight.
pub const ROUGE_BETA: f64 = 1.2;
pub const CIDER_MAX_N: usize = 4;
pub const CIDER_SCALE: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub hypothesis: Vec<String>,
    pub references: Vec<Vec<String>>,
}

impl EvalRecord {
    pub fn new(hypothesis: &[&str], references: &[&[&str]]) -> Self {
        let own = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        EvalRecord {
            hypothesis: own(hypothesis),
            references: references.iter().map(|r| own(r)).collect(),
        }
    }
}

fn ngrams(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut out = HashMap::new();
    for w in tokens.windows(n) {
        *out.entry(w).or_insert(0) += 1;
    }
    out
}

/// Corpus BLEU with uniform weights over 1..=n: clipped n-gram counts are
/// summed over records (clip = max count in any one reference), then
/// combined as a geometric mean with the brevity penalty against the
/// closest reference length (shorter on ties).
pub fn bleu(records: &[EvalRecord], n: usize) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::invalid("BLEU needs at least one record"));
    }
    if !(1..=4).contains(&n) {
        return Err(Error::invalid(format!("BLEU order must be 1..=4, got {n}")));
    }
    let mut matched = vec![0usize; n];
    let mut total = vec![0usize; n];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for r in records {
        let h = r.hypothesis.len();
        hyp_len += h;
        ref_len += r
            .references
            .iter()
            .map(|x| x.len())
            .min_by_key(|&l| (l.abs_diff(h), l))
            .unwrap_or(0);
        for k in 1..=n {
            let hyp = ngrams(&r.hypothesis, k);
            let refs: Vec<_> = r.references.iter().map(|x| ngrams(x, k)).collect();
            for (g, &c) in &hyp {
                let clip = refs.iter().map(|m| m.get(g).copied().unwrap_or(0)).max().unwrap_or(0);
                matched[k - 1] += c.min(clip);
            }
            total[k - 1] += h.saturating_sub(k - 1);
        }
    }
    if matched.contains(&0) {
        return Ok(0.0);
    }
    let log_p: f64 = matched
        .iter()
        .zip(&total)
        .map(|(&m, &t)| (m as f64 / t as f64).ln())
        .sum::<f64>()
        / n as f64;
    let bp = if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(bp * log_p.exp())
}

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    for x in a {
        let mut cur = vec![0usize; b.len() + 1];
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        prev = cur;
    }
    prev[b.len()]
}

/// `(1 + β²) P R / (R + β² P)` from the LCS, 0 when either side is empty.
pub fn rouge_l_pair(hyp: &[String], reference: &[String]) -> f64 {
    let l = lcs_len(hyp, reference) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let p = l / hyp.len() as f64;
    let r = l / reference.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * p * r / (r + b2 * p)
}

/// Best reference per record, averaged over records.
pub fn rouge_l(records: &[EvalRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records
        .iter()
        .map(|r| r.references.iter().map(|x| rouge_l_pair(&r.hypothesis, x)).fold(0.0, f64::max))
        .sum::<f64>()
        / records.len() as f64
}

type Vector<'a> = HashMap<&'a [String], f64>;

fn tfidf<'a>(tokens: &'a [String], n: usize, idf: &HashMap<&[String], f64>, log_n: f64) -> (Vector<'a>, f64) {
    let counts = ngrams(tokens, n);
    let mut v = HashMap::with_capacity(counts.len());
    let mut norm = 0.0;
    for (g, c) in counts {
        // unseen in any reference document: idf = log N
        let w = c as f64 * idf.get(g).copied().unwrap_or(log_n);
        norm += w * w;
        v.insert(g, w);
    }
    (v, norm.sqrt())
}

fn cosine(a: &(Vector<'_>, f64), b: &(Vector<'_>, f64)) -> f64 {
    if a.1 == 0.0 || b.1 == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.0.iter().map(|(g, x)| x * b.0.get(g).copied().unwrap_or(0.0)).sum();
    dot / (a.1 * b.1)
}

/// Per-record CIDEr. For each n in 1..=4, n-gram count vectors are weighted
/// by `idf = log(N / df)` with `df` the number of records whose references
/// contain the n-gram; the hypothesis' cosine with each reference is
/// averaged over references, then over n, and scaled by 10.
pub fn cider_per_record(records: &[EvalRecord]) -> Result<Vec<f64>> {
    if records.len() < 2 {
        return Err(Error::invalid("CIDEr needs at least two records to estimate document frequencies"));
    }
    let n_docs = records.len() as f64;
    let log_n = n_docs.ln();
    let mut scores = vec![0.0; records.len()];
    for n in 1..=CIDER_MAX_N {
        let mut df: HashMap<&[String], usize> = HashMap::new();
        for r in records {
            let mut seen: Vec<&[String]> = r.references.iter().flat_map(|x| x.windows(n)).collect();
            seen.sort_unstable();
            seen.dedup();
            for g in seen {
                *df.entry(g).or_insert(0) += 1;
            }
        }
        let idf: HashMap<&[String], f64> = df.into_iter().map(|(g, d)| (g, (n_docs / d.max(1) as f64).ln())).collect();
        for (score, r) in scores.iter_mut().zip(records) {
            let h = tfidf(&r.hypothesis, n, &idf, log_n);
            let sims: f64 = r.references.iter().map(|x| cosine(&h, &tfidf(x, n, &idf, log_n))).sum();
            *score += sims / r.references.len().max(1) as f64 / CIDER_MAX_N as f64;
        }
    }
    Ok(scores.into_iter().map(|s| s * CIDER_SCALE).collect())
}

pub fn cider(records: &[EvalRecord]) -> Result<f64> {
    let s = cider_per_record(records)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

/// Automatic-metric table in the shape of the published one; METEOR is not
/// computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub records: usize,
    pub bleu_1: f64,
    pub bleu_2: f64,
    pub bleu_3: f64,
    pub bleu_4: f64,
    pub rouge_l: f64,
    pub cider: f64,
    pub meteor: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_article: Option<Vec<ArticleScore>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArticleScore {
    pub id: String,
    pub bleu_1: f64,
    pub rouge_l: f64,
    pub cider: f64,
}

pub fn report(ids: &[String], records: &[EvalRecord], per_article: bool) -> Result<MetricReport> {
    let cider_each = if records.len() >= 2 {
        cider_per_record(records)?
    } else {
        vec![0.0; records.len()]
    };
    let per = if per_article {
        Some(
            ids.iter()
                .zip(records)
                .zip(&cider_each)
                .map(|((id, r), &c)| {
                    Ok(ArticleScore {
                        id: id.clone(),
                        bleu_1: bleu(std::slice::from_ref(r), 1)?,
                        rouge_l: rouge_l(std::slice::from_ref(r)),
                        cider: c,
                    })
                })
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    Ok(MetricReport {
        records: records.len(),
        bleu_1: bleu(records, 1)?,
        bleu_2: bleu(records, 2)?,
        bleu_3: bleu(records, 3)?,
        bleu_4: bleu(records, 4)?,
        rouge_l: rouge_l(records),
        cider: cider_each.iter().sum::<f64>() / cider_each.len().max(1) as f64,
        meteor: "n/a".into(),
        per_article: per,
    })
}

#[derive(Debug, Deserialize)]
struct GeneratedLine {
    id: String,
    comment: Vec<String>,
}

/// Scores a `generate` JSONL file against the comments of the reference
/// articles with the same ids. Records follow the hypothesis file order.
pub fn evaluate_run(hyp_path: &Path, references: &[Triple], per_article: bool) -> Result<MetricReport> {
    let text = std::fs::read_to_string(hyp_path).map_err(|e| Error::io(hyp_path, e))?;
    let by_id: BTreeMap<&str, &Triple> = references.iter().map(|t| (t.id.as_str(), t)).collect();
    let mut ids = Vec::new();
    let mut records = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let g: GeneratedLine = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: hyp_path.to_path_buf(),
            line: n + 1,
            message: e.to_string(),
        })?;
        let t = by_id
            .get(g.id.as_str())
            .ok_or_else(|| Error::invalid(format!("hypothesis id `{}` has no reference article", g.id)))?;
        if t.comments.is_empty() {
            return Err(Error::invalid(format!("reference article `{}` has no comments", g.id)));
        }
        records.push(EvalRecord {
            hypothesis: g.comment,
            references: t.comments.clone(),
        });
        ids.push(g.id);
    }
    if records.is_empty() {
        return Err(Error::invalid("no hypotheses to evaluate"));
    }
    report(&ids, &records, per_article)
}
