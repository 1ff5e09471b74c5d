//! Hierarchical embeddings.
//!
//! One side (users or items) is parameterized by connection logits
//! `L_1 … L_p` and a root embedding `R`. With `W_l = softmax(L_l)` applied
//! row-wise, the level-0 embedding is
//!
//! ```text
//! E_0 = W_1 · W_2 · … · W_p · R
//! ```
//!
//! so every object is a convex combination of the cluster embeddings one
//! level up. Depth 0 leaves `R` as the object embedding itself (vanilla MF).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{row_softmax, row_softmax_backward, softmax_in_place, DenseMatrix, SeededRng};

/// Shape of the model: object counts, per-level cluster counts, and the
/// embedding dimension.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierarchySpec {
    pub num_users: usize,
    pub num_items: usize,
    /// `m_1 … m_p`; empty for a flat user side.
    pub user_levels: Vec<usize>,
    /// `n_1 … n_q`; empty for a flat item side.
    pub item_levels: Vec<usize>,
    pub dim: usize,
}

impl HierarchySpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_users == 0 || self.num_items == 0 {
            return Err(Error::InvalidArgument("need at least one user and one item".into()));
        }
        if self.dim == 0 {
            return Err(Error::InvalidArgument("embedding dimension must be >= 1".into()));
        }
        if self.user_levels.iter().chain(&self.item_levels).any(|&c| c == 0) {
            return Err(Error::InvalidArgument("cluster counts must be >= 1".into()));
        }
        Ok(())
    }

    pub fn user_depth(&self) -> usize {
        self.user_levels.len()
    }

    pub fn item_depth(&self) -> usize {
        self.item_levels.len()
    }
}

/// Trainable state of one side.
#[derive(Clone, Debug, PartialEq)]
pub struct SideParameters {
    /// `logits[l]` has shape `count_l × count_{l+1}` (level `l+1` connections).
    pub logits: Vec<DenseMatrix>,
    pub root: DenseMatrix,
}

impl SideParameters {
    pub fn depth(&self) -> usize {
        self.logits.len()
    }

    /// Number of level-0 objects.
    pub fn num_objects(&self) -> usize {
        self.logits.first().map_or(self.root.rows(), DenseMatrix::rows)
    }

    pub fn dim(&self) -> usize {
        self.root.cols()
    }

    /// Zero-initialized parameters for `objects` level-0 rows.
    pub fn zeros(objects: usize, levels: &[usize], dim: usize) -> Self {
        let mut logits = Vec::with_capacity(levels.len());
        let mut rows = objects;
        for &count in levels {
            logits.push(DenseMatrix::zeros(rows, count));
            rows = count;
        }
        SideParameters {
            logits,
            root: DenseMatrix::zeros(rows, dim),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for pair in self.logits.windows(2) {
            if pair[0].cols() != pair[1].rows() {
                return Err(Error::ShapeMismatch {
                    context: "connection chain",
                    expected: (pair[0].cols(), pair[1].cols()),
                    actual: pair[1].shape(),
                });
            }
        }
        if let Some(last) = self.logits.last() {
            if last.cols() != self.root.rows() {
                return Err(Error::ShapeMismatch {
                    context: "root embedding",
                    expected: (last.cols(), self.root.cols()),
                    actual: self.root.shape(),
                });
            }
        }
        Ok(())
    }

    /// All tensors in a fixed order (logits by level, then root).
    pub fn tensors(&self) -> impl Iterator<Item = &DenseMatrix> {
        self.logits.iter().chain(std::iter::once(&self.root))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut DenseMatrix> {
        self.logits.iter_mut().chain(std::iter::once(&mut self.root))
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().all(DenseMatrix::is_finite)
    }

    /// Softmaxed connection matrices `W_1 … W_p`.
    pub fn connections(&self) -> Result<Vec<DenseMatrix>> {
        self.logits.iter().map(row_softmax).collect()
    }

    /// Embeddings of the clusters at `level` (`0` = objects, `depth` = root).
    pub fn level_embeddings(&self, level: usize) -> Result<DenseMatrix> {
        if level > self.depth() {
            return Err(Error::InvalidArgument(format!(
                "level {level} exceeds hierarchy depth {}",
                self.depth()
            )));
        }
        let mut emb = self.root.clone();
        for logits in self.logits[level..].iter().rev() {
            emb = row_softmax(logits)?.matmul(&emb)?;
        }
        Ok(emb)
    }
}

/// Both sides of a model together with its spec.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParameters {
    pub spec: HierarchySpec,
    pub user: SideParameters,
    pub item: SideParameters,
}

impl ModelParameters {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.user.validate()?;
        self.item.validate()?;
        let expected_user = SideParameters::zeros(self.spec.num_users, &self.spec.user_levels, self.spec.dim);
        let expected_item = SideParameters::zeros(self.spec.num_items, &self.spec.item_levels, self.spec.dim);
        let shapes = |s: &SideParameters| s.tensors().map(DenseMatrix::shape).collect::<Vec<_>>();
        if shapes(&self.user) != shapes(&expected_user) || shapes(&self.item) != shapes(&expected_item) {
            return Err(Error::InvalidArgument("parameters do not match hierarchy spec".into()));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.user.is_finite() && self.item.is_finite()
    }
}

fn normal_matrix(rng: &mut SeededRng, rows: usize, cols: usize, scale: f64) -> DenseMatrix {
    let data = (0..rows * cols).map(|_| rng.normal(0.0, scale)).collect();
    DenseMatrix::from_vec(rows, cols, data).expect("sized buffer")
}

fn init_side(rng: &mut SeededRng, objects: usize, levels: &[usize], dim: usize, scale: f64) -> SideParameters {
    let mut side = SideParameters::zeros(objects, levels, dim);
    if scale > 0.0 {
        for t in side.tensors_mut() {
            *t = normal_matrix(rng, t.rows(), t.cols(), scale);
        }
    }
    side
}

/// Draws every logit and root entry from `Normal(0, scale²)`; user side first.
pub fn init_parameters(spec: &HierarchySpec, rng: &mut SeededRng, scale: f64) -> Result<ModelParameters> {
    spec.validate()?;
    if !(scale >= 0.0 && scale.is_finite()) {
        return Err(Error::InvalidArgument(format!("init scale {scale} must be >= 0")));
    }
    let user = init_side(rng, spec.num_users, &spec.user_levels, spec.dim, scale);
    let item = init_side(rng, spec.num_items, &spec.item_levels, spec.dim, scale);
    Ok(ModelParameters {
        spec: spec.clone(),
        user,
        item,
    })
}

/// Full level-0 embeddings plus the softmaxed connections used to build them.
#[derive(Clone, Debug)]
pub struct ComposedEmbeddings {
    pub level0: DenseMatrix,
    pub connections: Vec<DenseMatrix>,
}

/// `E_0 = softmax(L_1) · … · softmax(L_p) · R`, multiplied right to left.
pub fn compose_embeddings(params: &SideParameters) -> Result<ComposedEmbeddings> {
    params.validate()?;
    let connections = params.connections()?;
    let mut emb = params.root.clone();
    for w in connections.iter().rev() {
        emb = w.matmul(&emb)?;
    }
    Ok(ComposedEmbeddings {
        level0: emb,
        connections,
    })
}

/// Forward cache for a subset of level-0 rows.
#[derive(Clone, Debug)]
pub struct RowsForward {
    pub rows: Vec<usize>,
    /// Composed embeddings of `rows`, one per entry.
    pub output: DenseMatrix,
    /// `softmax(L_1[rows])`; `None` at depth 0.
    first_weights: Option<DenseMatrix>,
    /// `W_2 … W_p`.
    deeper_weights: Vec<DenseMatrix>,
    /// Cluster embeddings `E_1 … E_p` (the last is the root).
    level_embeddings: Vec<DenseMatrix>,
    shapes: Vec<(usize, usize)>,
}

fn param_shapes(params: &SideParameters) -> Vec<(usize, usize)> {
    params.tensors().map(DenseMatrix::shape).collect()
}

/// Composes only the requested level-0 rows. The first softmax is restricted
/// to those rows; deeper products are computed in full.
pub fn compose_rows(params: &SideParameters, rows: &[usize]) -> Result<RowsForward> {
    params.validate()?;
    let objects = params.num_objects();
    if let Some(&bad) = rows.iter().find(|&&r| r >= objects) {
        return Err(Error::IndexOutOfRange {
            what: "level-0 row",
            index: bad,
            size: objects,
        });
    }
    let shapes = param_shapes(params);
    if params.depth() == 0 {
        return Ok(RowsForward {
            rows: rows.to_vec(),
            output: params.root.select_rows(rows)?,
            first_weights: None,
            deeper_weights: Vec::new(),
            level_embeddings: Vec::new(),
            shapes,
        });
    }
    let deeper_weights = params.logits[1..]
        .iter()
        .map(row_softmax)
        .collect::<Result<Vec<_>>>()?;
    // level_embeddings[k] holds E_{k+1}
    let mut level_embeddings = vec![params.root.clone()];
    for w in deeper_weights.iter().rev() {
        let next = w.matmul(level_embeddings.last().expect("non-empty"))?;
        level_embeddings.push(next);
    }
    level_embeddings.reverse();

    let mut first = params.logits[0].select_rows(rows)?;
    if !first.is_finite() {
        return Err(Error::InvalidArgument("non-finite level-1 logits".into()));
    }
    for r in 0..first.rows() {
        softmax_in_place(first.row_mut(r));
    }
    let output = first.matmul(&level_embeddings[0])?;
    Ok(RowsForward {
        rows: rows.to_vec(),
        output,
        first_weights: Some(first),
        deeper_weights,
        level_embeddings,
        shapes,
    })
}

/// Level-1 logit gradient restricted to the rows a minibatch touched.
#[derive(Clone, Debug, PartialEq)]
pub struct RowGradient {
    pub rows: Vec<usize>,
    pub values: DenseMatrix,
}

/// Gradients for one side. Level-1 logits are row-sparse; deeper logits and
/// the root are dense.
#[derive(Clone, Debug, PartialEq)]
pub struct SideGradients {
    pub level1: Option<RowGradient>,
    pub deeper: Vec<DenseMatrix>,
    pub root: DenseMatrix,
}

impl SideGradients {
    /// Dense gradients in [`SideParameters::tensors`] order. Repeated rows in
    /// the level-1 gradient are accumulated.
    pub fn to_dense(&self, params: &SideParameters) -> Vec<DenseMatrix> {
        let mut out = Vec::with_capacity(params.depth() + 1);
        if let Some(g) = &self.level1 {
            let mut dense = DenseMatrix::zeros(params.logits[0].rows(), params.logits[0].cols());
            for (k, &r) in g.rows.iter().enumerate() {
                for (d, &v) in dense.row_mut(r).iter_mut().zip(g.values.row(k)) {
                    *d += v;
                }
            }
            out.push(dense);
        }
        out.extend(self.deeper.iter().cloned());
        out.push(self.root.clone());
        out
    }
}

/// Reverse-mode pass from `upstream` (gradient on `forward.output`) to every
/// parameter of the side.
pub fn backward_through_hierarchy(
    params: &SideParameters,
    forward: &RowsForward,
    upstream: &DenseMatrix,
) -> Result<SideGradients> {
    if param_shapes(params) != forward.shapes {
        return Err(Error::InvalidArgument(
            "forward cache does not match parameters".into(),
        ));
    }
    if upstream.shape() != forward.output.shape() {
        return Err(Error::ShapeMismatch {
            context: "upstream gradient",
            expected: forward.output.shape(),
            actual: upstream.shape(),
        });
    }
    let Some(first) = &forward.first_weights else {
        // depth 0: scatter rows straight into the root
        let mut root = DenseMatrix::zeros(params.root.rows(), params.root.cols());
        for (k, &r) in forward.rows.iter().enumerate() {
            for (d, &g) in root.row_mut(r).iter_mut().zip(upstream.row(k)) {
                *d += g;
            }
        }
        return Ok(SideGradients {
            level1: None,
            deeper: Vec::new(),
            root,
        });
    };

    // output = W1[rows] · E_1
    let grad_w1 = upstream.matmul_t(&forward.level_embeddings[0])?;
    let level1 = RowGradient {
        rows: forward.rows.clone(),
        values: row_softmax_backward(first, &grad_w1)?,
    };
    let mut grad_emb = first.t_matmul(upstream)?;

    // E_{l-1} = W_l · E_l for l = 2..p
    let mut deeper = Vec::with_capacity(forward.deeper_weights.len());
    for (k, w) in forward.deeper_weights.iter().enumerate() {
        let below = &forward.level_embeddings[k + 1];
        let grad_w = grad_emb.matmul_t(below)?;
        deeper.push(row_softmax_backward(w, &grad_w)?);
        grad_emb = w.t_matmul(&grad_emb)?;
    }
    Ok(SideGradients {
        level1: Some(level1),
        deeper,
        root: grad_emb,
    })
}
