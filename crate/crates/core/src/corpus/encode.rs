use super::vocab::{Vocabulary, BOS, EOS, PAD};
use super::Triple;

/// Fixed field lengths after padding/truncation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lengths {
    pub title: usize,
    pub body: usize,
    pub comment: usize,
}

impl Default for Lengths {
    fn default() -> Self {
        Lengths {
            title: 30,
            body: 600,
            comment: 50,
        }
    }
}

/// One (article, comment) pair as fixed-length id arrays. Masks are `true`
/// on real tokens; padding is always a suffix.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedTriple {
    pub title_ids: Vec<usize>,
    pub title_mask: Vec<bool>,
    pub body_ids: Vec<usize>,
    pub body_mask: Vec<bool>,
    /// `(within_sentence_index, sentence_index)` per body position.
    pub body_pos: Vec<(usize, usize)>,
    /// `BOS … EOS`, framed before truncation.
    pub comment_ids: Vec<usize>,
    pub comment_mask: Vec<bool>,
}

impl EncodedTriple {
    pub fn title_len(&self) -> usize {
        self.title_mask.iter().filter(|&&m| m).count()
    }

    pub fn body_len(&self) -> usize {
        self.body_mask.iter().filter(|&&m| m).count()
    }

    pub fn comment_len(&self) -> usize {
        self.comment_mask.iter().filter(|&&m| m).count()
    }

    pub fn title(&self) -> &[usize] {
        &self.title_ids[..self.title_len()]
    }

    pub fn body(&self) -> &[usize] {
        &self.body_ids[..self.body_len()]
    }

    pub fn body_positions(&self) -> &[(usize, usize)] {
        &self.body_pos[..self.body_len()]
    }

    /// Framed comment ids without padding.
    pub fn comment(&self) -> &[usize] {
        &self.comment_ids[..self.comment_len()]
    }
}

fn pad(ids: impl IntoIterator<Item = usize>, len: usize) -> (Vec<usize>, Vec<bool>) {
    let mut out: Vec<usize> = ids.into_iter().take(len).collect();
    let real = out.len();
    out.resize(len, PAD);
    let mask = (0..len).map(|i| i < real).collect();
    (out, mask)
}

/// Encodes the article with its `comment`-th comment.
pub fn encode_triple(t: &Triple, comment: usize, vocab: &Vocabulary, lengths: Lengths) -> EncodedTriple {
    let (title_ids, title_mask) = pad(vocab.encode(&t.title), lengths.title);
    let (body_ids, body_mask) = pad(vocab.encode(&t.body), lengths.body);
    let mut body_pos: Vec<(usize, usize)> = t
        .within_sentence_index
        .iter()
        .zip(&t.sentence_index)
        .map(|(&w, &s)| (w, s))
        .take(lengths.body)
        .collect();
    body_pos.resize(lengths.body, (0, 0));
    let framed = std::iter::once(BOS)
        .chain(t.comments.get(comment).map(|c| vocab.encode(c)).unwrap_or_default())
        .chain(std::iter::once(EOS));
    let (comment_ids, comment_mask) = pad(framed, lengths.comment);
    EncodedTriple {
        title_ids,
        title_mask,
        body_ids,
        body_mask,
        body_pos,
        comment_ids,
        comment_mask,
    }
}

/// A training pair: which article and comment it came from, and its encoding.
#[derive(Debug, Clone)]
pub struct Example {
    pub article: usize,
    pub comment: usize,
    pub data: EncodedTriple,
}

/// Expands every article into one example per comment.
pub fn encode_corpus(triples: &[Triple], vocab: &Vocabulary, lengths: Lengths) -> Vec<Example> {
    triples
        .iter()
        .enumerate()
        .flat_map(|(a, t)| {
            (0..t.comments.len()).map(move |c| Example {
                article: a,
                comment: c,
                data: encode_triple(t, c, vocab, lengths),
            })
        })
        .collect()
}
