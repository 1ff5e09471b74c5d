//! Config-driven experiments: dataset preparation, grid runs over
//! `(cell, seed)` jobs, resumable artifacts, model selection and summaries.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint;
use crate::data::{
    date_to_timestamp, filter_min_user_interactions, load_diginetica_views, load_interactions, temporal_global_split,
    DatasetFormat, DatasetStats, DigineticaWindow, FeedbackKind, PreparedData, Split,
};
use crate::error::{Error, Result};
use crate::evaluation::{aggregate_seeds, rank_metrics_on, rmse, CandidateSets, ComposedModel};
use crate::model::{HierarchySpec, ModelParameters};
use crate::numerics::SeededRng;
use crate::training::{streams, train, EpochRecord, Task, TrainConfig, EVAL_NEGATIVES, HIT_CUTOFF};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "mf")]
    Mf,
    #[serde(rename = "hmf")]
    Hmf,
    #[serde(rename = "bpr-mf")]
    BprMf,
    #[serde(rename = "bpr-hmf")]
    BprHmf,
}

impl Method {
    pub fn task(self) -> Task {
        match self {
            Method::Mf | Method::Hmf => Task::Rating,
            Method::BprMf | Method::BprHmf => Task::Ranking,
        }
    }

    pub fn hierarchical(self) -> bool {
        matches!(self, Method::Hmf | Method::BprHmf)
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Mf => "mf",
            Method::Hmf => "hmf",
            Method::BprMf => "bpr-mf",
            Method::BprHmf => "bpr-hmf",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    #[default]
    Temporal,
    Date,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
    pub format: DatasetFormat,
    /// Label used in reports; defaults to the file stem.
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub split: SplitKind,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    /// First validation day (date split).
    #[serde(default)]
    pub val_start: Option<NaiveDate>,
    /// First test day (date split).
    #[serde(default)]
    pub test_start: Option<NaiveDate>,
    /// Inclusive view-date window (session logs only).
    #[serde(default)]
    pub window_start: Option<NaiveDate>,
    #[serde(default)]
    pub window_end: Option<NaiveDate>,
    /// Drop users with fewer training interactions than this.
    #[serde(default)]
    pub min_user_interactions: Option<usize>,
}

fn default_train_fraction() -> f64 {
    0.8
}

fn default_val_fraction() -> f64 {
    0.2
}

impl DatasetConfig {
    pub fn display_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            self.path
                .file_stem()
                .map_or_else(|| "dataset".to_string(), |s| s.to_string_lossy().into_owned())
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub method: Method,
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Optional explicit task; must agree with the method.
    #[serde(default)]
    pub task: Option<Task>,
}

fn default_dim() -> usize {
    20
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Defaults to 512 (rating) or 128 (ranking).
    #[serde(default)]
    pub max_epochs: Option<usize>,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
}

fn default_batch() -> usize {
    1024
}

fn default_patience() -> usize {
    5
}

fn default_init_scale() -> f64 {
    0.1
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            batch_size: default_batch(),
            max_epochs: None,
            patience: default_patience(),
            init_scale: default_init_scale(),
        }
    }
}

/// Grid lists; missing entries take per-method defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub lr: Option<Vec<f64>>,
    pub weight_decay: Option<Vec<f64>>,
    /// Cluster counts per level, one list per grid value (`[]` = flat).
    pub user_levels: Option<Vec<Vec<usize>>>,
    pub item_levels: Option<Vec<Vec<usize>>>,
    pub seeds: Option<Vec<u64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: default_out() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ExperimentConfig::from_toml(&text)
    }

    pub fn task(&self) -> Task {
        self.model.method.task()
    }

    /// Checks that need no data: method/task agreement and non-empty grids.
    pub fn validate(&self) -> Result<()> {
        let method = self.model.method;
        if let Some(task) = self.model.task {
            if task != method.task() {
                return Err(Error::Config(format!(
                    "method `{}` requires the {:?} task, config says {:?}",
                    method.name(),
                    method.task(),
                    task
                )));
            }
        }
        if self.model.dim == 0 {
            return Err(Error::Config("embedding dimension must be >= 1".into()));
        }
        let g = &self.grid;
        let empty = |name: &str, len: Option<usize>| match len {
            Some(0) => Err(Error::Config(format!("grid `{name}` is empty"))),
            _ => Ok(()),
        };
        empty("lr", g.lr.as_ref().map(Vec::len))?;
        empty("weight_decay", g.weight_decay.as_ref().map(Vec::len))?;
        empty("user_levels", g.user_levels.as_ref().map(Vec::len))?;
        empty("item_levels", g.item_levels.as_ref().map(Vec::len))?;
        empty("seeds", g.seeds.as_ref().map(Vec::len))?;
        for levels in g.user_levels.iter().chain(&g.item_levels).flatten() {
            if !method.hierarchical() && !levels.is_empty() {
                return Err(Error::Config(format!("method `{}` takes no cluster levels", method.name())));
            }
            if method.hierarchical() && levels.is_empty() {
                return Err(Error::Config(format!("method `{}` needs at least one cluster level", method.name())));
            }
            if levels.contains(&0) {
                return Err(Error::Config("cluster counts must be >= 1".into()));
            }
        }
        if let Some(seeds) = &g.seeds {
            if seeds.iter().collect::<BTreeSet<_>>().len() != seeds.len() {
                return Err(Error::Config("duplicate seeds".into()));
            }
        }
        if self.dataset.split == SplitKind::Date && (self.dataset.val_start.is_none() || self.dataset.test_start.is_none()) {
            return Err(Error::Config("date split needs val_start and test_start".into()));
        }
        Ok(())
    }

    /// Fills grid defaults. Session-log cluster counts scale with the
    /// training user and item counts.
    pub fn resolve_grid(&self, stats: &DatasetStats) -> Grid {
        let g = &self.grid;
        let method = self.model.method;
        let default_levels = |table: &[usize], count: usize| -> Vec<Vec<usize>> {
            match method {
                Method::Mf | Method::BprMf => vec![vec![]],
                Method::Hmf => table.iter().map(|&c| vec![c]).collect(),
                Method::BprHmf => [512, 128, 32].iter().map(|&d| vec![(count / d).max(1)]).collect(),
            }
        };
        Grid {
            lr: g.lr.clone().unwrap_or_else(|| vec![1e-2, 1e-3, 1e-4]),
            weight_decay: g.weight_decay.clone().unwrap_or_else(|| vec![1e-2, 1e-3, 1e-4, 1e-5, 0.0]),
            user_levels: g
                .user_levels
                .clone()
                .unwrap_or_else(|| default_levels(&[200, 400, 600, 800, 1000], stats.users)),
            item_levels: g
                .item_levels
                .clone()
                .unwrap_or_else(|| default_levels(&[100, 200, 300, 400, 500], stats.items)),
            seeds: g.seeds.clone().unwrap_or_else(|| (0..5).collect()),
        }
    }

    pub fn max_epochs(&self) -> usize {
        self.train.max_epochs.unwrap_or(match self.task() {
            Task::Rating => 512,
            Task::Ranking => 128,
        })
    }
}

/// Fully resolved grid lists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lr: Vec<f64>,
    pub weight_decay: Vec<f64>,
    pub user_levels: Vec<Vec<usize>>,
    pub item_levels: Vec<Vec<usize>>,
    pub seeds: Vec<u64>,
}

/// One hyperparameter combination. Its hash names the artifact directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub method: Method,
    pub dataset: String,
    pub dim: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub user_levels: Vec<usize>,
    pub item_levels: Vec<usize>,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub init_scale: f64,
}

impl Cell {
    /// First 16 hex digits of SHA-256 over the cell's sorted-key JSON.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("cell serializes");
        let canonical = serde_json::to_string(&value).expect("value serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        hex::encode(digest)[..16].to_string()
    }

    pub fn spec(&self, stats: &DatasetStats) -> HierarchySpec {
        HierarchySpec {
            num_users: stats.users,
            num_items: stats.items,
            user_levels: self.user_levels.clone(),
            item_levels: self.item_levels.clone(),
            dim: self.dim,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed,
            task: self.method.task(),
            init_scale: self.init_scale,
        }
    }
}

/// Grid cells in row-major order over `lr × weight_decay × user × item`.
pub fn enumerate_cells(config: &ExperimentConfig, grid: &Grid) -> Vec<Cell> {
    let mut cells = Vec::new();
    for &lr in &grid.lr {
        for &weight_decay in &grid.weight_decay {
            for user_levels in &grid.user_levels {
                for item_levels in &grid.item_levels {
                    cells.push(Cell {
                        method: config.model.method,
                        dataset: config.dataset.display_name(),
                        dim: config.model.dim,
                        lr,
                        weight_decay,
                        user_levels: user_levels.clone(),
                        item_levels: item_levels.clone(),
                        batch_size: config.train.batch_size,
                        max_epochs: config.max_epochs(),
                        patience: config.train.patience,
                        init_scale: config.train.init_scale,
                    });
                }
            }
        }
    }
    cells
}

/// Load, split, filter and index the configured dataset.
pub fn prepare_dataset(config: &DatasetConfig) -> Result<PreparedData> {
    let set = match config.format {
        DatasetFormat::Diginetica => {
            let mut window = DigineticaWindow::default();
            if let Some(start) = config.window_start {
                window.start = start;
            }
            if let Some(end) = config.window_end {
                window.end = end;
            }
            load_diginetica_views(&config.path, &window)?
        }
        format => load_interactions(&config.path, format)?,
    };
    let split = match config.split {
        SplitKind::Temporal => temporal_global_split(&set, config.train_fraction, config.val_fraction)?,
        SplitKind::Date => {
            let val = config.val_start.ok_or_else(|| Error::Config("missing val_start".into()))?;
            let test = config.test_start.ok_or_else(|| Error::Config("missing test_start".into()))?;
            crate::data::date_split(&set, date_to_timestamp(val), date_to_timestamp(test))?
        }
    };
    let split: Split = match config.min_user_interactions {
        Some(min) => filter_min_user_interactions(&split, min),
        None => split,
    };
    PreparedData::from_split(&split)
}

/// Test-subset metrics of one trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestMetrics {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub hit_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mrr: Option<f64>,
    pub evaluated: usize,
    pub skipped: usize,
}

/// Evaluates on the test subset. Ranking candidates depend only on `seed`.
pub fn evaluate_test(params: &ModelParameters, data: &PreparedData, task: Task, seed: u64) -> Result<TestMetrics> {
    let mut model = ComposedModel::from_params(params)?;
    match task {
        Task::Rating => Ok(TestMetrics {
            rmse: Some(rmse(&model, &data.test)?),
            hit_ratio: None,
            mrr: None,
            evaluated: data.test.len(),
            skipped: 0,
        }),
        Task::Ranking => {
            let mut rng = SeededRng::with_stream(seed, streams::TEST);
            let sets = CandidateSets::draw(&data.index, &data.test, EVAL_NEGATIVES, &mut rng)?;
            let m = rank_metrics_on(&mut model, &sets, HIT_CUTOFF);
            Ok(TestMetrics {
                rmse: None,
                hit_ratio: Some(m.hit_ratio),
                mrr: Some(m.mrr),
                evaluated: m.evaluated,
                skipped: m.skipped,
            })
        }
    }
}

/// Everything recorded for one `(cell, seed)` run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub hash: String,
    pub cell: Cell,
    pub seed: u64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    /// Validation metric at the best epoch.
    pub val_metric: f64,
    pub test: TestMetrics,
    pub history: Vec<EpochRecord>,
}

/// Paths of one run's artifacts.
#[derive(Clone, Debug, PartialEq)]
pub struct RunArtifact {
    pub hash: String,
    pub dir: PathBuf,
    pub checkpoint: PathBuf,
    pub history: PathBuf,
    pub report: PathBuf,
}

impl RunArtifact {
    pub fn new(out: &Path, hash: &str, seed: u64) -> Self {
        let dir = out.join("cells").join(hash).join(format!("seed-{seed}"));
        RunArtifact {
            hash: hash.to_string(),
            checkpoint: dir.join("model.ckpt"),
            history: dir.join("history.csv"),
            report: dir.join("report.json"),
            dir,
        }
    }
}

fn read_report(path: &Path) -> Result<SeedReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Trains and evaluates one `(cell, seed)`, unless its report already exists.
pub fn run_job(data: &PreparedData, cell: &Cell, seed: u64, out: &Path) -> Result<(SeedReport, RunArtifact)> {
    let hash = cell.hash();
    let artifact = RunArtifact::new(out, &hash, seed);
    if artifact.report.exists() {
        log::info!("skipping completed run {hash}/seed-{seed}");
        return Ok((read_report(&artifact.report)?, artifact));
    }
    let stats = data.stats();
    let task = cell.method.task();
    let outcome = train(&cell.spec(&stats), data, &cell.train_config(seed))?;
    let test = evaluate_test(&outcome.params, data, task, seed)?;
    let report = SeedReport {
        hash: hash.clone(),
        cell: cell.clone(),
        seed,
        best_epoch: outcome.history.best_epoch,
        epochs_run: outcome.history.records.len(),
        val_metric: outcome.history.best_metric,
        test,
        history: outcome.history.records.clone(),
    };
    checkpoint::save(&artifact.checkpoint, &outcome.params, &data.index)?;
    checkpoint::write_atomic(&artifact.history, outcome.history.to_csv().as_bytes())?;
    let cell_json = out.join("cells").join(&hash).join("cell.json");
    checkpoint::write_atomic(&cell_json, &serde_json::to_vec_pretty(cell)?)?;
    // written last: its presence marks the run complete
    checkpoint::write_atomic(&artifact.report, &serde_json::to_vec_pretty(&report)?)?;
    log::info!(
        "{hash}/seed-{seed}: best epoch {} of {}, val {:.5}",
        report.best_epoch,
        report.epochs_run,
        report.val_metric
    );
    Ok((report, artifact))
}

/// All seed reports of one cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellResults {
    pub hash: String,
    pub cell: Cell,
    pub reports: Vec<SeedReport>,
}

impl CellResults {
    pub fn val_metrics(&self) -> Vec<f64> {
        self.reports.iter().map(|r| r.val_metric).collect()
    }
}

/// Groups reports by cell hash; seeds sorted ascending within each cell.
pub fn group_reports(reports: Vec<SeedReport>) -> Vec<CellResults> {
    let mut by_hash: BTreeMap<String, CellResults> = BTreeMap::new();
    for r in reports {
        by_hash
            .entry(r.hash.clone())
            .or_insert_with(|| CellResults { hash: r.hash.clone(), cell: r.cell.clone(), reports: Vec::new() })
            .reports
            .push(r);
    }
    let mut cells: Vec<CellResults> = by_hash.into_values().collect();
    for c in &mut cells {
        c.reports.sort_by_key(|r| r.seed);
    }
    cells
}

/// Index of the cell with the best mean validation metric. Ties go to the
/// lexicographically lower hash. Only validation metrics are read.
pub fn grid_search_select(cells: &[CellResults], task: Task) -> Result<usize> {
    let first = cells.first().ok_or_else(|| Error::InvalidArgument("no grid cells to select from".into()))?;
    let seeds = first.reports.len();
    let mut best: Option<(usize, f64)> = None;
    for (k, c) in cells.iter().enumerate() {
        if c.reports.len() != seeds {
            return Err(Error::InvalidArgument(format!(
                "cell {} has {} seeds, expected {seeds}",
                c.hash,
                c.reports.len()
            )));
        }
        let (mean, _) = aggregate_seeds(&c.val_metrics())?;
        best = match best {
            None => Some((k, mean)),
            Some((b, bm)) => {
                if task.improves(mean, bm) || (mean == bm && c.hash < cells[b].hash) {
                    Some((k, mean))
                } else {
                    Some((b, bm))
                }
            }
        };
    }
    Ok(best.expect("non-empty").0)
}

/// One summary row: a cell with its seed-aggregated metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub dataset: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightDecayBest {
    pub weight_decay: f64,
    pub hash: String,
    pub val_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
    pub selected: String,
    pub selected_cell: Cell,
    pub val_mean: f64,
    pub val_std: f64,
    pub seeds: Vec<u64>,
    pub cells: usize,
    pub per_weight_decay: Vec<WeightDecayBest>,
}

fn test_values(cell: &CellResults, pick: impl Fn(&TestMetrics) -> Option<f64>, name: &str) -> Result<Vec<f64>> {
    cell.reports
        .iter()
        .map(|r| pick(&r.test).ok_or_else(|| Error::InvalidArgument(format!("report {} lacks {name}", r.hash))))
        .collect()
}

/// Selects the best cell and summarizes its test metrics over seeds.
pub fn summarize(cells: &[CellResults]) -> Result<Summary> {
    let first = cells.first().ok_or_else(|| Error::InvalidArgument("no results to summarize".into()))?;
    let task = first.cell.method.task();
    if cells.iter().any(|c| c.cell.method != first.cell.method || c.cell.dataset != first.cell.dataset) {
        return Err(Error::InvalidArgument("results mix methods or datasets".into()));
    }
    let best = &cells[grid_search_select(cells, task)?];
    let (val_mean, val_std) = aggregate_seeds(&best.val_metrics())?;
    let metrics: Vec<(&str, Vec<f64>)> = match task {
        Task::Rating => vec![("rmse", test_values(best, |t| t.rmse, "rmse")?)],
        Task::Ranking => vec![
            ("hit_ratio@10", test_values(best, |t| t.hit_ratio, "hit_ratio")?),
            ("mrr@10", test_values(best, |t| t.mrr, "mrr")?),
        ],
    };
    let rows = metrics
        .into_iter()
        .map(|(metric, values)| {
            let (mean, std) = aggregate_seeds(&values)?;
            Ok(SummaryRow {
                method: best.cell.method.name().into(),
                dataset: best.cell.dataset.clone(),
                metric: metric.into(),
                mean,
                std,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut per_weight_decay = Vec::new();
    let decays: BTreeSet<u64> = cells.iter().map(|c| c.cell.weight_decay.to_bits()).collect();
    let mut decays: Vec<f64> = decays.into_iter().map(f64::from_bits).collect();
    decays.sort_by(f64::total_cmp);
    for wd in decays {
        let subset: Vec<CellResults> = cells.iter().filter(|c| c.cell.weight_decay == wd).cloned().collect();
        let pick = &subset[grid_search_select(&subset, task)?];
        per_weight_decay.push(WeightDecayBest {
            weight_decay: wd,
            hash: pick.hash.clone(),
            val_mean: aggregate_seeds(&pick.val_metrics())?.0,
        });
    }
    Ok(Summary {
        rows,
        selected: best.hash.clone(),
        selected_cell: best.cell.clone(),
        val_mean,
        val_std,
        seeds: best.reports.iter().map(|r| r.seed).collect(),
        cells: cells.len(),
        per_weight_decay,
    })
}

/// `seed,epoch,train_loss,val_metric` for every seed of a cell.
pub fn curve_csv(cell: &CellResults) -> String {
    let mut out = String::from("seed,epoch,train_loss,val_metric\n");
    for r in &cell.reports {
        for e in &r.history {
            out.push_str(&format!("{},{},{},{}\n", r.seed, e.epoch, e.train_loss, e.val_metric));
        }
    }
    out
}

/// Reads every `report.json` under `out/cells`.
pub fn collect_reports(out: &Path) -> Result<Vec<SeedReport>> {
    let root = out.join("cells");
    let mut reports = Vec::new();
    let mut cell_dirs: Vec<PathBuf> = std::fs::read_dir(&root)
        .map_err(|e| Error::io(&root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    cell_dirs.sort();
    for dir in cell_dirs {
        let mut seed_dirs: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        seed_dirs.sort();
        for s in seed_dirs {
            let report = s.join("report.json");
            if report.exists() {
                reports.push(read_report(&report)?);
            }
        }
    }
    Ok(reports)
}

/// Writes `summary.json` and one curve file per weight decay.
pub fn write_summary(out: &Path, cells: &[CellResults]) -> Result<Summary> {
    let summary = summarize(cells)?;
    checkpoint::write_atomic(&out.join("summary.json"), &serde_json::to_vec_pretty(&summary)?)?;
    for wd in &summary.per_weight_decay {
        let cell = cells.iter().find(|c| c.hash == wd.hash).expect("selected from cells");
        checkpoint::write_atomic(&out.join("curves").join(format!("wd-{}.csv", wd.weight_decay)), curve_csv(cell).as_bytes())?;
    }
    Ok(summary)
}

/// Runs every `(cell, seed)` job on a pool of `jobs` threads, then selects and
/// summarizes. Completed jobs are reused.
pub fn run_grid(config: &ExperimentConfig, jobs: usize) -> Result<Summary> {
    config.validate()?;
    let data = prepare_dataset(&config.dataset)?;
    check_feedback(config, &data)?;
    let grid = config.resolve_grid(&data.stats());
    let cells = enumerate_cells(config, &grid);
    let work: Vec<(&Cell, u64)> = cells.iter().flat_map(|c| grid.seeds.iter().map(move |&s| (c, s))).collect();
    log::info!("{} cells x {} seeds = {} runs", cells.len(), grid.seeds.len(), work.len());
    let out = &config.output.dir;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let results: Vec<Result<(SeedReport, RunArtifact)>> =
        pool.install(|| work.par_iter().map(|&(cell, seed)| run_job(&data, cell, seed, out)).collect());
    let reports = results.into_iter().map(|r| r.map(|(rep, _)| rep)).collect::<Result<Vec<_>>>()?;
    write_summary(out, &group_reports(reports))
}

/// Rating methods need explicit ratings.
pub fn check_feedback(config: &ExperimentConfig, data: &PreparedData) -> Result<()> {
    if config.task() == Task::Rating && data.split.train.kind == FeedbackKind::Implicit {
        return Err(Error::Config(format!(
            "method `{}` needs explicit ratings but the dataset is implicit",
            config.model.method.name()
        )));
    }
    Ok(())
}
