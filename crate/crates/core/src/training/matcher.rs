//! Title–comment matching model used to mark salient sentences for
//! pre-training.

use rand::Rng;

use super::optim::AdaGrad;
use super::scorer::{PairScorer, ScorerDims};
use super::batch_gradients;
use crate::corpus::BatchSchedule;
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tape};
use crate::rng::{self, stream};

/// Token ids of one article's title and its comments.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchArticle {
    pub title: Vec<usize>,
    pub comments: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatcherConfig {
    pub dims: ScorerDims,
    pub steps: usize,
    pub negatives: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub acc0: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct MatchingModel {
    pub scorer: PairScorer,
    pub store: ParamStore,
}

pub const PREFIX: &str = "matcher";

impl MatchingModel {
    pub fn new(dims: &ScorerDims, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let scorer = PairScorer::new(dims, PREFIX, &mut store, &mut rng::derive(seed, &[stream::MATCHER_INIT]))?;
        Ok(MatchingModel { scorer, store })
    }

    /// Match probability in (0, 1).
    pub fn score(&self, left: &[usize], right: &[usize]) -> Result<f64> {
        let mut t = Tape::new(&self.store);
        let z = self.scorer.logit(&mut t, left, right)?;
        let z = t.sigmoid(z);
        Ok(t.scalar(z))
    }
}

struct Pair {
    article: usize,
    comment: usize,
}

/// Binary cross-entropy with each positive `(T_i, C_i)` paired against
/// `negatives` comments drawn from other articles. Returns the model and the
/// mean loss of every step.
pub fn train_matcher(articles: &[MatchArticle], cfg: &MatcherConfig) -> Result<(MatchingModel, Vec<f64>)> {
    let with_comments = articles.iter().filter(|a| !a.comments.is_empty()).count();
    if with_comments < 2 {
        return Err(Error::invalid("matching model needs at least two articles with comments"));
    }
    let pairs: Vec<Pair> = articles
        .iter()
        .enumerate()
        .flat_map(|(a, art)| (0..art.comments.len()).map(move |c| Pair { article: a, comment: c }))
        .collect();
    let mut model = MatchingModel::new(&cfg.dims, cfg.seed)?;
    let opt = AdaGrad {
        lr: cfg.lr,
        acc0: cfg.acc0,
    };
    let schedule = BatchSchedule::new(pairs.len(), cfg.batch_size, rng::derive_seed(cfg.seed, &[stream::MATCHER]));
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch: Vec<&Pair> = schedule.batch_at(step).into_iter().map(|i| &pairs[i]).collect();
        let scale = 1.0 / batch.len() as f64;
        let scorer = &model.scorer;
        let (loss, grads, _) = batch_gradients(&model.store, &batch, scale, |i, p, t| {
            let mut r = rng::derive(cfg.seed, &[stream::MATCHER, step as u64, i as u64]);
            let title = &articles[p.article].title;
            let z = scorer.logit(t, title, &articles[p.article].comments[p.comment])?;
            let mut terms = vec![t.log_sigmoid(z)];
            for _ in 0..cfg.negatives {
                let neg = draw_negative(articles, p.article, &mut r);
                let z = scorer.logit(t, title, neg)?;
                let nz = t.scale(z, -1.0);
                terms.push(t.log_sigmoid(nz));
            }
            let ll = t.add_all(&terms)?;
            Ok((t.scale(ll, -1.0), ()))
        })?;
        grads.check_finite(&model.store)?;
        opt.update(&mut model.store, &grads)?;
        losses.push(loss);
    }
    Ok((model, losses))
}

fn draw_negative<'a, R: Rng + ?Sized>(articles: &'a [MatchArticle], own: usize, rng: &mut R) -> &'a [usize] {
    loop {
        let a = rng.random_range(0..articles.len());
        if a != own && !articles[a].comments.is_empty() {
            let c = rng.random_range(0..articles[a].comments.len());
            return &articles[a].comments[c];
        }
    }
}
