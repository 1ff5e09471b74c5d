#![allow(dead_code)]

use std::path::PathBuf;

use hmf::checkpoint;
use hmf::data::{
    temporal_global_split, FeedbackKind, IndexedInteraction, Interaction, InteractionSet, UserItemIndex,
};
use hmf::evaluation::{rank_metrics_on, CandidateSets, Scorer};
use hmf::interpret::cluster_sizes;
use hmf::model::{compose_embeddings, init_parameters, HierarchySpec, ModelParameters, SideParameters};
use hmf::numerics::{row_softmax, DenseMatrix, SeededRng};
use hmf::objective::{RatingExample, Triplet};
use hmf::training::{train_with_validator, Task, TrainConfig};

pub fn workspace_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// ML-100K directory: `HMF_ML100K_DIR` or `data/ml-100k` in the workspace.
pub fn ml100k_dir() -> PathBuf {
    std::env::var_os("HMF_ML100K_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| workspace_root().join("data/ml-100k"))
}

// ---------------------------------------------------------------------------
// Naive forward pass and losses

fn naive_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

/// Level-0 embeddings by explicit convex combinations, root upwards.
pub fn naive_embeddings(side: &SideParameters) -> Vec<Vec<f64>> {
    let mut emb: Vec<Vec<f64>> = (0..side.root.rows()).map(|r| side.root.row(r).to_vec()).collect();
    for logits in side.logits.iter().rev() {
        emb = (0..logits.rows())
            .map(|r| {
                let w = naive_softmax(logits.row(r));
                let mut out = vec![0.0; side.root.cols()];
                for (k, wk) in w.iter().enumerate() {
                    for (o, e) in out.iter_mut().zip(&emb[k]) {
                        *o += wk * e;
                    }
                }
                out
            })
            .collect();
    }
    emb
}

fn inner(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn naive_rating_loss(params: &ModelParameters, batch: &[RatingExample]) -> f64 {
    let u = naive_embeddings(&params.user);
    let v = naive_embeddings(&params.item);
    batch.iter().map(|x| (x.rating - inner(&u[x.user], &v[x.item])).powi(2)).sum()
}

pub fn naive_bpr_loss(params: &ModelParameters, batch: &[Triplet]) -> f64 {
    let u = naive_embeddings(&params.user);
    let v = naive_embeddings(&params.item);
    batch
        .iter()
        .map(|t| {
            let diff = inner(&u[t.user], &v[t.positive]) - inner(&u[t.user], &v[t.negative]);
            (1.0 + (-diff).exp()).ln()
        })
        .sum()
}

/// Central differences over every parameter, in `(user tensors, item tensors)`
/// order.
pub fn finite_difference(params: &ModelParameters, h: f64, loss: impl Fn(&ModelParameters) -> f64) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for side in 0..2 {
        let count = if side == 0 { params.user.depth() + 1 } else { params.item.depth() + 1 };
        for t in 0..count {
            let len = tensor(params, side, t).as_slice().len();
            let mut grad = Vec::with_capacity(len);
            for k in 0..len {
                let mut plus = params.clone();
                tensor_mut(&mut plus, side, t).as_mut_slice()[k] += h;
                let mut minus = params.clone();
                tensor_mut(&mut minus, side, t).as_mut_slice()[k] -= h;
                grad.push((loss(&plus) - loss(&minus)) / (2.0 * h));
            }
            out.push(grad);
        }
    }
    out
}

fn tensor(params: &ModelParameters, side: usize, t: usize) -> &DenseMatrix {
    let s = if side == 0 { &params.user } else { &params.item };
    s.tensors().nth(t).expect("tensor index")
}

fn tensor_mut(params: &mut ModelParameters, side: usize, t: usize) -> &mut DenseMatrix {
    let s = if side == 0 { &mut params.user } else { &mut params.item };
    s.tensors_mut().nth(t).expect("tensor index")
}

/// Largest `|a − n| / max(|a|, |n|, 1e-4)` over all entries.
pub fn max_relative_error(analytic: &[Vec<f64>], numeric: &[Vec<f64>]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let mut worst: f64 = 0.0;
    for (a, n) in analytic.iter().zip(numeric) {
        assert_eq!(a.len(), n.len());
        for (x, y) in a.iter().zip(n) {
            worst = worst.max((x - y).abs() / x.abs().max(y.abs()).max(1e-4));
        }
    }
    worst
}

pub fn random_spec(rng: &mut SeededRng, user_depth: usize, item_depth: usize) -> HierarchySpec {
    let mut levels = |depth: usize| -> Vec<usize> { (0..depth).map(|_| 2 + rng.index(3)).collect() };
    let user_levels = levels(user_depth);
    let item_levels = levels(item_depth);
    HierarchySpec {
        num_users: 5 + rng.index(3),
        num_items: 6 + rng.index(3),
        user_levels,
        item_levels,
        dim: 2 + rng.index(3),
    }
}

pub fn random_rating_batch(rng: &mut SeededRng, spec: &HierarchySpec, len: usize) -> Vec<RatingExample> {
    (0..len)
        .map(|_| RatingExample {
            user: rng.index(spec.num_users),
            item: rng.index(spec.num_items),
            rating: 1.0 + rng.index(5) as f64,
        })
        .collect()
}

pub fn random_triplets(rng: &mut SeededRng, spec: &HierarchySpec, len: usize) -> Vec<Triplet> {
    (0..len)
        .map(|_| {
            let positive = rng.index(spec.num_items);
            let mut negative = rng.index(spec.num_items);
            while negative == positive {
                negative = rng.index(spec.num_items);
            }
            Triplet { user: rng.index(spec.num_users), positive, negative }
        })
        .collect()
}

pub fn random_params(rng: &mut SeededRng, spec: &HierarchySpec) -> ModelParameters {
    init_parameters(spec, rng, 1.0).expect("valid spec")
}

// ---------------------------------------------------------------------------
// Direct matrix factorization with its own AdamW

pub struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamW {
    pub fn new(len: usize) -> Self {
        AdamW { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    pub fn step(&mut self, p: &mut [f64], g: &[f64], lr: f64, wd: f64) {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        self.t += 1;
        for k in 0..p.len() {
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g[k];
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g[k] * g[k];
            let m_hat = self.m[k] / (1.0 - b1.powi(self.t));
            let v_hat = self.v[k] / (1.0 - b2.powi(self.t));
            p[k] -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * p[k]);
        }
    }
}

/// `X ≈ U Vᵀ` with row-major `u` (`users × dim`) and `v` (`items × dim`).
pub struct DirectMf {
    pub dim: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    opt_u: AdamW,
    opt_v: AdamW,
}

impl DirectMf {
    /// Same draw order as the library initializer: all user entries, then all
    /// item entries, each `Normal(0, scale²)`.
    pub fn init(users: usize, items: usize, dim: usize, rng: &mut SeededRng, scale: f64) -> Self {
        let u = (0..users * dim).map(|_| rng.normal(0.0, scale)).collect();
        let v = (0..items * dim).map(|_| rng.normal(0.0, scale)).collect();
        DirectMf { dim, u, v, opt_u: AdamW::new(users * dim), opt_v: AdamW::new(items * dim) }
    }

    fn urow(&self, i: usize) -> &[f64] {
        &self.u[i * self.dim..(i + 1) * self.dim]
    }

    fn vrow(&self, j: usize) -> &[f64] {
        &self.v[j * self.dim..(j + 1) * self.dim]
    }

    pub fn rating_step(&mut self, batch: &[RatingExample], lr: f64, wd: f64) {
        let d = self.dim;
        let mut gu = vec![0.0; self.u.len()];
        let mut gv = vec![0.0; self.v.len()];
        for x in batch {
            let r = x.rating - inner(self.urow(x.user), self.vrow(x.item));
            for c in 0..d {
                gu[x.user * d + c] += -2.0 * r * self.v[x.item * d + c];
                gv[x.item * d + c] += -2.0 * r * self.u[x.user * d + c];
            }
        }
        self.opt_u.step(&mut self.u, &gu, lr, wd);
        self.opt_v.step(&mut self.v, &gv, lr, wd);
    }

    pub fn bpr_step(&mut self, batch: &[Triplet], lr: f64, wd: f64) {
        let d = self.dim;
        let mut gu = vec![0.0; self.u.len()];
        let mut gv = vec![0.0; self.v.len()];
        for t in batch {
            let diff = inner(self.urow(t.user), self.vrow(t.positive)) - inner(self.urow(t.user), self.vrow(t.negative));
            // d/d diff of ln(1 + e^{-diff})
            let s = -1.0 / (1.0 + diff.exp());
            for c in 0..d {
                gu[t.user * d + c] += s * (self.v[t.positive * d + c] - self.v[t.negative * d + c]);
                gv[t.positive * d + c] += s * self.u[t.user * d + c];
                gv[t.negative * d + c] -= s * self.u[t.user * d + c];
            }
        }
        self.opt_u.step(&mut self.u, &gu, lr, wd);
        self.opt_v.step(&mut self.v, &gv, lr, wd);
    }
}

// ---------------------------------------------------------------------------
// Planted-cluster implicit data and a random scorer

pub struct Planted {
    pub set: InteractionSet,
    pub user_cluster: Vec<usize>,
    pub item_cluster: Vec<usize>,
}

/// Users and items are assigned uniformly to clusters; each user cluster
/// prefers one item cluster, from which `1 − noise` of its interactions come.
pub fn planted_dataset(
    seed: u64,
    users: usize,
    items: usize,
    user_clusters: usize,
    item_clusters: usize,
    per_user: usize,
    noise: f64,
) -> Planted {
    let mut rng = SeededRng::new(seed);
    let user_cluster: Vec<usize> = (0..users).map(|_| rng.index(user_clusters)).collect();
    let item_cluster: Vec<usize> = (0..items).map(|_| rng.index(item_clusters)).collect();
    let mut members = vec![Vec::new(); item_clusters];
    for (i, &c) in item_cluster.iter().enumerate() {
        members[c].push(i);
    }
    let mut interactions = Vec::with_capacity(users * per_user);
    for u in 0..users {
        let preferred = &members[user_cluster[u] % item_clusters];
        let mut chosen = std::collections::BTreeSet::new();
        while chosen.len() < per_user {
            let item = if rng.uniform() < noise || preferred.is_empty() {
                rng.index(items)
            } else {
                preferred[rng.index(preferred.len())]
            };
            chosen.insert(item);
        }
        for item in chosen {
            interactions.push(Interaction {
                user: format!("u{u}"),
                item: format!("i{item}"),
                rating: 1.0,
                timestamp: rng.index(1_000_000_000) as i64,
            });
        }
    }
    Planted { set: InteractionSet::new(interactions, FeedbackKind::Implicit), user_cluster, item_cluster }
}

pub struct RandomScorer(pub SeededRng);

impl Scorer for RandomScorer {
    fn score_items(&mut self, _user: usize, items: &[usize]) -> Vec<f64> {
        items.iter().map(|_| self.0.uniform()).collect()
    }
}

/// HitRatio@k and MRR@k of a uniformly random ranking of `candidates` items.
pub fn random_baseline(k: usize, candidates: usize) -> (f64, f64) {
    let hr = k as f64 / candidates as f64;
    let mrr = (1..=k).map(|r| 1.0 / r as f64).sum::<f64>() / candidates as f64;
    (hr, mrr)
}

// ---------------------------------------------------------------------------
// Invariant checks, each over one seeded random instance

pub type Check = std::result::Result<(), String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_matrix(rng: &mut SeededRng, rows: usize, cols: usize, scale: f64) -> DenseMatrix {
    DenseMatrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.normal(0.0, scale)).collect()).unwrap()
}

pub fn check_row_stochastic(seed: u64) -> Check {
    let mut rng = SeededRng::new(seed);
    let scale = [0.1, 1.0, 50.0, 700.0][rng.index(4)];
    let (rows, cols) = (1 + rng.index(8), 1 + rng.index(8));
    let m = random_matrix(&mut rng, rows, cols, scale);
    let w = row_softmax(&m).map_err(|e| e.to_string())?;
    for r in 0..w.rows() {
        let row = w.row(r);
        ensure(row.iter().all(|&x| (0.0..=1.0).contains(&x)), || format!("row {r} outside [0,1]: {row:?}"))?;
        let s: f64 = row.iter().sum();
        ensure((s - 1.0).abs() < 1e-12, || format!("row {r} sums to {s}"))?;
    }
    Ok(())
}

pub fn check_convex_combination(seed: u64) -> Check {
    let mut rng = SeededRng::new(seed);
    let depth = 1 + rng.index(2);
    let spec = random_spec(&mut rng, depth, 1);
    let params = random_params(&mut rng, &spec);
    let composed = compose_embeddings(&params.user).map_err(|e| e.to_string())?.level0;
    let level1 = params.user.level_embeddings(1).map_err(|e| e.to_string())?;
    let w = row_softmax(&params.user.logits[0]).map_err(|e| e.to_string())?;
    let naive = naive_embeddings(&params.user);
    for r in 0..composed.rows() {
        for c in 0..composed.cols() {
            let x = composed.get(r, c);
            let (lo, hi) = (0..level1.rows()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), k| {
                (lo.min(level1.get(k, c)), hi.max(level1.get(k, c)))
            });
            ensure(x >= lo - 1e-12 && x <= hi + 1e-12, || format!("({r},{c}) = {x} outside [{lo}, {hi}]"))?;
            let combo: f64 = (0..level1.rows()).map(|k| w.get(r, k) * level1.get(k, c)).sum();
            ensure((x - combo).abs() < 1e-12, || format!("({r},{c}): {x} vs combination {combo}"))?;
            ensure((x - naive[r][c]).abs() < 1e-12, || format!("({r},{c}): {x} vs naive {}", naive[r][c]))?;
        }
    }
    Ok(())
}

pub fn check_split_partition(seed: u64) -> Check {
    let mut rng = SeededRng::new(seed);
    let n = 5 + rng.index(300);
    let ts_range = 1 + rng.index(50);
    let interactions: Vec<Interaction> = (0..n)
        .map(|k| Interaction {
            user: format!("u{}", rng.index(20)),
            item: format!("i{k}"),
            rating: 1.0,
            timestamp: rng.index(ts_range) as i64,
        })
        .collect();
    let set = InteractionSet::new(interactions, FeedbackKind::Implicit);
    let split = temporal_global_split(&set, 0.8, 0.2).map_err(|e| e.to_string())?;
    let (tr, va, te) = (&split.train.interactions, &split.validation.interactions, &split.test.interactions);
    ensure(tr.len() + va.len() + te.len() == n, || "sizes do not add up".into())?;
    let provisional = (0.8 * n as f64).floor() as usize;
    ensure(te.len() == n - provisional, || format!("test size {} for n={n}", te.len()))?;
    ensure(va.len() == (0.2 * provisional as f64).floor() as usize, || "validation size".into())?;
    let mut all: Vec<&str> = tr.iter().chain(va).chain(te).map(|x| x.item.as_str()).collect();
    all.sort();
    all.dedup();
    ensure(all.len() == n, || "subsets overlap or lose rows".into())?;
    let max = |s: &[Interaction]| s.iter().map(|x| x.timestamp).max();
    let min = |s: &[Interaction]| s.iter().map(|x| x.timestamp).min();
    if let (Some(a), Some(b)) = (max(tr), min(va)) {
        ensure(a <= b, || "train after validation".into())?;
    }
    if let (Some(a), Some(b)) = (max(va).or(max(tr)), min(te)) {
        ensure(a <= b, || "validation after test".into())?;
    }
    Ok(())
}

pub fn check_metric_bounds(seed: u64) -> Check {
    let mut rng = SeededRng::new(seed);
    let users = 3 + rng.index(5);
    let items = 120 + rng.index(60);
    let interactions: Vec<Interaction> = (0..users * 6)
        .map(|k| Interaction {
            user: format!("u{}", k % users),
            item: format!("i{}", rng.index(items)),
            rating: 1.0,
            timestamp: k as i64,
        })
        .collect();
    let set = InteractionSet::new(interactions, FeedbackKind::Implicit);
    let index = UserItemIndex::build(&set, &[]);
    let subset: Vec<IndexedInteraction> = index.encode(&set).map_err(|e| e.to_string())?;
    let sets = CandidateSets::draw(&index, &subset, 99, &mut rng).map_err(|e| e.to_string())?;
    let mut scorer = RandomScorer(SeededRng::new(seed ^ 0xabc));
    for cutoff in [1, 5, 10, 100] {
        let m = rank_metrics_on(&mut scorer, &sets, cutoff);
        ensure(
            0.0 <= m.mrr && m.mrr <= m.hit_ratio && m.hit_ratio <= 1.0,
            || format!("cutoff {cutoff}: mrr {} hr {}", m.mrr, m.hit_ratio),
        )?;
        if cutoff == 1 {
            ensure(m.mrr == m.hit_ratio, || "MRR@1 differs from HR@1".into())?;
        }
    }
    Ok(())
}

pub fn check_cluster_sizes(seed: u64) -> Check {
    let mut rng = SeededRng::new(seed);
    let (p, q) = (1 + rng.index(2), 1 + rng.index(2));
    let spec = random_spec(&mut rng, p, q);
    let params = random_params(&mut rng, &spec);
    for side in [&params.user, &params.item] {
        let mut children = side.num_objects();
        for logits in &side.logits {
            let sizes = cluster_sizes(&row_softmax(logits).map_err(|e| e.to_string())?);
            let total: f64 = sizes.iter().sum();
            ensure((total - children as f64).abs() < 1e-9, || format!("sizes sum {total} vs {children}"))?;
            ensure(sizes.iter().all(|&s| s >= 0.0), || "negative size".into())?;
            children = logits.cols();
        }
    }
    Ok(())
}

pub fn check_checkpoint_round_trip(seed: u64) -> Check {
    let mut rng = SeededRng::new(seed);
    let (p, q) = (rng.index(3), rng.index(3));
    let spec = random_spec(&mut rng, p, q);
    let params = random_params(&mut rng, &spec);
    let index = UserItemIndex::from_ids(
        (0..spec.num_users).map(|k| format!("user-{k}")).collect(),
        (0..spec.num_items).map(|k| format!("item-{k}")).collect(),
    )
    .map_err(|e| e.to_string())?;
    let bytes = checkpoint::encode(&params, &index).map_err(|e| e.to_string())?;
    let back = checkpoint::decode(&bytes).map_err(|e| e.to_string())?;
    ensure(back.params == params, || "parameters changed".into())?;
    let again = checkpoint::encode(&back.params, &back.index).map_err(|e| e.to_string())?;
    ensure(again == bytes, || "re-encoding differs".into())
}

fn bits(params: &ModelParameters) -> Vec<u64> {
    params.user.tensors().chain(params.item.tensors()).flat_map(|t| t.as_slice().iter().map(|x| x.to_bits())).collect()
}

pub fn check_reproducible_training(seed: u64) -> Check {
    let planted = planted_dataset(seed, 40, 30, 4, 3, 6, 0.2);
    let index = UserItemIndex::build(&planted.set, &[]);
    let train = index.encode(&planted.set).map_err(|e| e.to_string())?;
    let spec = HierarchySpec {
        num_users: index.num_users(),
        num_items: index.num_items(),
        user_levels: vec![4],
        item_levels: vec![3],
        dim: 4,
    };
    let task = if seed % 2 == 0 { Task::Rating } else { Task::Ranking };
    let mut config = TrainConfig::new(task, 0.01, 1e-4, seed);
    config.batch_size = 32;
    config.max_epochs = 4;
    let run = || {
        let mut calls = 0.0;
        train_with_validator(&spec, &train, &index, &config, |_| {
            calls += 1.0;
            Ok(calls)
        })
    };
    let a = run().map_err(|e| e.to_string())?;
    let b = run().map_err(|e| e.to_string())?;
    ensure(bits(&a.params) == bits(&b.params), || "parameters differ between identical runs".into())?;
    ensure(a.history == b.history, || "histories differ".into())
}

pub const INVARIANTS: &[(&str, fn(u64) -> Check)] = &[
    ("row-stochasticity", check_row_stochastic),
    ("convex combination", check_convex_combination),
    ("split partition and temporal order", check_split_partition),
    ("metric bounds", check_metric_bounds),
    ("cluster-size column sums", check_cluster_sizes),
    ("checkpoint round trip", check_checkpoint_round_trip),
    ("fixed-seed reproducibility", check_reproducible_training),
];

// ---------------------------------------------------------------------------
// Criterion drivers shared by the integration suites

/// Worst relative gradient error over `instances` random problems with the
/// given depths, for both objectives, plus the worst loss-value mismatch
/// against the naive forward pass.
pub fn gradient_check(user_depth: usize, item_depth: usize, instances: usize, seed: u64) -> (f64, f64) {
    use hmf::objective::{bpr_loss_and_grad, rating_loss_and_grad};
    let h = 1e-5;
    let mut rng = SeededRng::new(seed);
    let (mut worst_grad, mut worst_loss): (f64, f64) = (0.0, 0.0);
    for _ in 0..instances {
        let spec = random_spec(&mut rng, user_depth, item_depth);
        let params = random_params(&mut rng, &spec);
        let flatten = |g: &hmf::objective::Gradients| -> Vec<Vec<f64>> {
            g.user
                .to_dense(&params.user)
                .into_iter()
                .chain(g.item.to_dense(&params.item))
                .map(|m| m.into_vec())
                .collect()
        };

        let batch = random_rating_batch(&mut rng, &spec, 8);
        let (loss, grads) = rating_loss_and_grad(&params, &batch).unwrap();
        let numeric = finite_difference(&params, h, |p| naive_rating_loss(p, &batch));
        worst_grad = worst_grad.max(max_relative_error(&flatten(&grads), &numeric));
        let naive = naive_rating_loss(&params, &batch);
        worst_loss = worst_loss.max((loss - naive).abs() / naive.abs().max(1.0));

        let triplets = random_triplets(&mut rng, &spec, 8);
        let (loss, grads) = bpr_loss_and_grad(&params, &triplets).unwrap();
        let numeric = finite_difference(&params, h, |p| naive_bpr_loss(p, &triplets));
        worst_grad = worst_grad.max(max_relative_error(&flatten(&grads), &numeric));
        let naive = naive_bpr_loss(&params, &triplets);
        worst_loss = worst_loss.max((loss - naive).abs() / naive.abs().max(1.0));
    }
    (worst_grad, worst_loss)
}

/// Largest parameter difference between a depth-0 model and [`DirectMf`]
/// after `steps` identical AdamW steps.
pub fn mf_equivalence_gap(task: Task, seed: u64, steps: usize) -> f64 {
    use hmf::objective::{bpr_loss_and_grad, rating_loss_and_grad};
    use hmf::training::{streams, ModelOptimizer};
    let (users, items, dim, scale, lr, wd) = (30, 40, 5, 0.1, 0.01, 0.01);
    let spec = HierarchySpec { num_users: users, num_items: items, user_levels: vec![], item_levels: vec![], dim };
    let mut params = init_parameters(&spec, &mut SeededRng::with_stream(seed, streams::INIT), scale).unwrap();
    let mut oracle = DirectMf::init(users, items, dim, &mut SeededRng::with_stream(seed, streams::INIT), scale);
    let mut optimizer = ModelOptimizer::new(&params);
    let mut rng = SeededRng::new(seed.wrapping_add(7919));
    for _ in 0..steps {
        let grads = match task {
            Task::Rating => {
                let batch = random_rating_batch(&mut rng, &spec, 64);
                oracle.rating_step(&batch, lr, wd);
                rating_loss_and_grad(&params, &batch).unwrap().1
            }
            Task::Ranking => {
                let batch = random_triplets(&mut rng, &spec, 64);
                oracle.bpr_step(&batch, lr, wd);
                bpr_loss_and_grad(&params, &batch).unwrap().1
            }
        };
        optimizer.step(&mut params, &grads, lr, wd).unwrap();
    }
    let gap = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    gap(params.user.root.as_slice(), &oracle.u).max(gap(params.item.root.as_slice(), &oracle.v))
}
