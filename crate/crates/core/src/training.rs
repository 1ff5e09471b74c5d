//! Minibatch training with AdamW, best-epoch snapshots and patience-based
//! early stopping on the validation metric.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{sample_negative, IndexedInteraction, PreparedData, UserItemIndex};
use crate::error::{Error, Result};
use crate::evaluation::{rank_metrics_on, rmse, CandidateSets, ComposedModel};
use crate::model::{init_parameters, HierarchySpec, ModelParameters, SideGradients, SideParameters};
use crate::numerics::{adamw_step, adamw_step_rows, OptimizerState, SeededRng};
use crate::objective::{bpr_loss_and_grad, rating_loss_and_grad, Gradients, RatingExample, Triplet};

/// Stream ids used to derive independent generators from one run seed.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const VALIDATION: u64 = 3;
    pub const TEST: u64 = 4;
}

pub const HIT_CUTOFF: usize = 10;
pub const EVAL_NEGATIVES: usize = 99;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Squared loss, validated by RMSE (lower is better).
    Rating,
    /// BPR loss, validated by HitRatio@10 (higher is better).
    Ranking,
}

impl Task {
    /// Whether `candidate` strictly improves on `best`.
    pub fn improves(self, candidate: f64, best: f64) -> bool {
        match self {
            Task::Rating => candidate < best,
            Task::Ranking => candidate > best,
        }
    }

    pub fn metric_name(self) -> &'static str {
        match self {
            Task::Rating => "rmse",
            Task::Ranking => "hit_ratio@10",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub task: Task,
    pub init_scale: f64,
}

impl TrainConfig {
    pub fn new(task: Task, lr: f64, weight_decay: f64, seed: u64) -> Self {
        TrainConfig {
            lr,
            weight_decay,
            batch_size: 1024,
            max_epochs: match task {
                Task::Rating => 512,
                Task::Ranking => 128,
            },
            patience: 5,
            seed,
            task,
            init_scale: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be > 0", self.lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight decay {} must be >= 0", self.weight_decay)));
        }
        if self.batch_size == 0 || self.patience == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch size, patience and max epochs must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub task: Task,
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_metric: f64,
}

impl TrainHistory {
    fn new(task: Task) -> Self {
        TrainHistory {
            task,
            records: Vec::new(),
            best_epoch: 0,
            best_metric: f64::NAN,
        }
    }

    pub fn metrics(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.val_metric).collect()
    }

    /// `epoch,train_loss,val_metric` with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_metric\n");
        for r in &self.records {
            writeln!(out, "{},{},{}", r.epoch, r.train_loss, r.val_metric).expect("write to String");
        }
        out
    }
}

/// True when each of the last `patience` epochs failed to strictly improve on
/// the best metric recorded before it.
pub fn early_stop_check(metrics: &[f64], patience: usize, task: Task) -> bool {
    if metrics.is_empty() || patience == 0 {
        return false;
    }
    let mut best = metrics[0];
    let mut since_best = 0;
    for &m in &metrics[1..] {
        if task.improves(m, best) {
            best = m;
            since_best = 0;
        } else {
            since_best += 1;
        }
    }
    since_best >= patience
}

/// AdamW state for every tensor of one side, in [`SideParameters::tensors`]
/// order.
#[derive(Clone, Debug)]
struct SideOptimizer {
    states: Vec<OptimizerState>,
    label: &'static str,
}

impl SideOptimizer {
    fn new(params: &SideParameters, label: &'static str) -> Self {
        SideOptimizer {
            states: params.tensors().map(OptimizerState::for_param).collect(),
            label,
        }
    }

    fn step(&mut self, params: &mut SideParameters, grads: &SideGradients, lr: f64, wd: f64) -> Result<()> {
        let depth = params.depth();
        if let Some(g) = &grads.level1 {
            adamw_step_rows(
                &format!("{}.logits[1]", self.label),
                &mut params.logits[0],
                &g.rows,
                &g.values,
                &mut self.states[0],
                lr,
                wd,
            )?;
        }
        for (k, g) in grads.deeper.iter().enumerate() {
            adamw_step(
                &format!("{}.logits[{}]", self.label, k + 2),
                &mut params.logits[k + 1],
                g,
                &mut self.states[k + 1],
                lr,
                wd,
            )?;
        }
        adamw_step(
            &format!("{}.root", self.label),
            &mut params.root,
            &grads.root,
            &mut self.states[depth],
            lr,
            wd,
        )
    }
}

/// AdamW over every tensor of a model. Level-1 logits are updated lazily
/// (only rows present in the batch); everything else densely.
#[derive(Clone, Debug)]
pub struct ModelOptimizer {
    user: SideOptimizer,
    item: SideOptimizer,
}

impl ModelOptimizer {
    pub fn new(params: &ModelParameters) -> Self {
        ModelOptimizer {
            user: SideOptimizer::new(&params.user, "user"),
            item: SideOptimizer::new(&params.item, "item"),
        }
    }

    pub fn step(&mut self, params: &mut ModelParameters, grads: &Gradients, lr: f64, weight_decay: f64) -> Result<()> {
        self.user.step(&mut params.user, &grads.user, lr, weight_decay)?;
        self.item.step(&mut params.item, &grads.item, lr, weight_decay)
    }
}

/// Best-epoch parameters and the full history.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParameters,
    pub history: TrainHistory,
}

/// Trains with the task's validation metric: RMSE on `data.validation` for
/// rating, or HitRatio@10 against candidates drawn once per run for ranking.
pub fn train(spec: &HierarchySpec, data: &PreparedData, config: &TrainConfig) -> Result<TrainOutcome> {
    if data.validation.is_empty() {
        return Err(Error::InvalidArgument("empty validation subset".into()));
    }
    match config.task {
        Task::Rating => train_with_validator(spec, &data.train, &data.index, config, |params| {
            rmse(&ComposedModel::from_params(params)?, &data.validation)
        }),
        Task::Ranking => {
            let mut rng = SeededRng::with_stream(config.seed, streams::VALIDATION);
            let sets = CandidateSets::draw(&data.index, &data.validation, EVAL_NEGATIVES, &mut rng)?;
            train_with_validator(spec, &data.train, &data.index, config, |params| {
                let mut model = ComposedModel::from_params(params)?;
                Ok(rank_metrics_on(&mut model, &sets, HIT_CUTOFF).hit_ratio)
            })
        }
    }
}

/// Training loop with a caller-supplied validation metric.
pub fn train_with_validator<F>(
    spec: &HierarchySpec,
    train: &[IndexedInteraction],
    index: &UserItemIndex,
    config: &TrainConfig,
    mut validate: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&ModelParameters) -> Result<f64>,
{
    config.validate()?;
    spec.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("empty training subset".into()));
    }
    let mut init_rng = SeededRng::with_stream(config.seed, streams::INIT);
    let mut params = init_parameters(spec, &mut init_rng, config.init_scale)?;
    let mut optimizer = ModelOptimizer::new(&params);
    let mut rng = SeededRng::with_stream(config.seed, streams::SHUFFLE);
    let mut history = TrainHistory::new(config.task);
    let mut best = params.clone();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.max_epochs {
        rng.shuffle(&mut order);
        let mut total_loss = 0.0;
        for (batch_no, chunk) in order.chunks(config.batch_size).enumerate() {
            let (loss, grads) = match config.task {
                Task::Rating => {
                    let batch: Vec<RatingExample> = chunk
                        .iter()
                        .map(|&k| RatingExample {
                            user: train[k].user,
                            item: train[k].item,
                            rating: train[k].rating,
                        })
                        .collect();
                    rating_loss_and_grad(&params, &batch)?
                }
                Task::Ranking => {
                    let batch = chunk
                        .iter()
                        .map(|&k| {
                            Ok(Triplet {
                                user: train[k].user,
                                positive: train[k].item,
                                negative: sample_negative(index, train[k].user, &mut rng)?,
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    bpr_loss_and_grad(&params, &batch)?
                }
            };
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: batch_no + 1,
                    loss,
                });
            }
            total_loss += loss;
            optimizer.step(&mut params, &grads, config.lr, config.weight_decay)?;
        }
        let metric = validate(&params)?;
        if !metric.is_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: 0,
                loss: metric,
            });
        }
        history.records.push(EpochRecord {
            epoch,
            train_loss: total_loss / train.len() as f64,
            val_metric: metric,
        });
        if history.records.len() == 1 || config.task.improves(metric, history.best_metric) {
            history.best_epoch = epoch;
            history.best_metric = metric;
            best.clone_from(&params);
        }
        log::debug!("epoch {epoch}: loss {:.6} val {metric:.6}", total_loss / train.len() as f64);
        if early_stop_check(&history.metrics(), config.patience, config.task) {
            break;
        }
    }
    Ok(TrainOutcome { params: best, history })
}
