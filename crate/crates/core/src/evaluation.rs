//! RMSE, sampled HitRatio@k / MRR@k, and seed aggregation.

use serde::{Deserialize, Serialize};

use crate::data::{sample_eval_candidates, Candidates, IndexedInteraction, UserItemIndex};
use crate::error::{Error, Result};
use crate::model::{compose_embeddings, ModelParameters};
use crate::numerics::{dot, DenseMatrix, SeededRng};

/// Level-0 embeddings of every user and item, ready for scoring.
#[derive(Clone, Debug)]
pub struct ComposedModel {
    pub users: DenseMatrix,
    pub items: DenseMatrix,
}

impl ComposedModel {
    pub fn from_params(params: &ModelParameters) -> Result<Self> {
        Ok(ComposedModel {
            users: compose_embeddings(&params.user)?.level0,
            items: compose_embeddings(&params.item)?.level0,
        })
    }

    #[inline]
    pub fn score(&self, user: usize, item: usize) -> f64 {
        dot(self.users.row(user), self.items.row(item))
    }

    fn check(&self, user: usize, item: usize) -> Result<()> {
        if user >= self.users.rows() {
            return Err(Error::IndexOutOfRange { what: "user", index: user, size: self.users.rows() });
        }
        if item >= self.items.rows() {
            return Err(Error::IndexOutOfRange { what: "item", index: item, size: self.items.rows() });
        }
        Ok(())
    }
}

/// Anything that can score a user's candidate items.
pub trait Scorer {
    fn score_items(&mut self, user: usize, items: &[usize]) -> Vec<f64>;
}

impl Scorer for ComposedModel {
    fn score_items(&mut self, user: usize, items: &[usize]) -> Vec<f64> {
        items.iter().map(|&i| self.score(user, i)).collect()
    }
}

/// Root mean squared error of raw inner-product predictions (no clipping).
pub fn rmse(model: &ComposedModel, subset: &[IndexedInteraction]) -> Result<f64> {
    if subset.is_empty() {
        return Err(Error::InvalidArgument("RMSE of an empty subset".into()));
    }
    let mut total = 0.0;
    for x in subset {
        model.check(x.user, x.item)?;
        let r = x.rating - model.score(x.user, x.item);
        total += r * r;
    }
    Ok((total / subset.len() as f64).sqrt())
}

/// 1-based rank of `items[0]` under descending `scores`; ties go to the lower
/// item index.
pub fn rank_of_first(items: &[usize], scores: &[f64]) -> usize {
    let (pos_item, pos_score) = (items[0], scores[0]);
    1 + items[1..]
        .iter()
        .zip(&scores[1..])
        .filter(|&(&item, &s)| s > pos_score || (s == pos_score && item < pos_item))
        .count()
}

/// Candidate lists drawn once for a subset, so repeated evaluation (e.g. per
/// epoch) sees identical negatives.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateSets {
    /// `(user, candidates)` per subset interaction; `None` when skipped.
    pub entries: Vec<Option<(usize, Vec<usize>)>>,
}

impl CandidateSets {
    pub fn draw(
        index: &UserItemIndex,
        subset: &[IndexedInteraction],
        n_negatives: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let entries = subset
            .iter()
            .map(|x| {
                Ok(match sample_eval_candidates(index, x.user, x.item, n_negatives, rng)? {
                    Candidates::Ranked(c) => Some((x.user, c)),
                    Candidates::Insufficient { .. } => None,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CandidateSets { entries })
    }

    pub fn skipped(&self) -> usize {
        self.entries.iter().filter(|e| e.is_none()).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankMetrics {
    pub hit_ratio: f64,
    pub mrr: f64,
    pub evaluated: usize,
    pub skipped: usize,
}

/// HitRatio@`cutoff` and MRR@`cutoff` over pre-drawn candidates. With nothing
/// evaluated both metrics are 0.
pub fn rank_metrics_on(scorer: &mut impl Scorer, sets: &CandidateSets, cutoff: usize) -> RankMetrics {
    let (mut hits, mut rr, mut evaluated) = (0.0, 0.0, 0usize);
    for (user, items) in sets.entries.iter().flatten() {
        let scores = scorer.score_items(*user, items);
        let rank = rank_of_first(items, &scores);
        if rank <= cutoff {
            hits += 1.0;
            rr += 1.0 / rank as f64;
        }
        evaluated += 1;
    }
    let denom = evaluated.max(1) as f64;
    RankMetrics {
        hit_ratio: hits / denom,
        mrr: rr / denom,
        evaluated,
        skipped: sets.skipped(),
    }
}

/// Samples `n_negatives` unseen items per interaction and ranks the positive
/// among them.
pub fn rank_metrics(
    scorer: &mut impl Scorer,
    subset: &[IndexedInteraction],
    index: &UserItemIndex,
    cutoff: usize,
    n_negatives: usize,
    rng: &mut SeededRng,
) -> Result<RankMetrics> {
    let sets = CandidateSets::draw(index, subset, n_negatives, rng)?;
    Ok(rank_metrics_on(scorer, &sets, cutoff))
}

/// Mean and population standard deviation.
pub fn aggregate_seeds(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("cannot aggregate zero values".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// One metric aggregated over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub dataset: String,
    pub metric: String,
    pub subset: String,
    pub per_seed: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub evaluated: usize,
    pub skipped: usize,
}

impl EvalReport {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        method: &str,
        dataset: &str,
        metric: &str,
        subset: &str,
        per_seed: Vec<f64>,
        evaluated: usize,
        skipped: usize,
    ) -> Result<Self> {
        let (mean, std) = aggregate_seeds(&per_seed)?;
        Ok(EvalReport {
            method: method.into(),
            dataset: dataset.into(),
            metric: metric.into(),
            subset: subset.into(),
            per_seed,
            mean,
            std,
            evaluated,
            skipped,
        })
    }
}
