//! Dense matrices, the row-softmax kernels, the AdamW step and the seeded
//! generator shared by every other module.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::InvalidArgument(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidArgument("ragged rows".into()));
        }
        let data = rows.iter().flatten().copied().collect();
        Ok(DenseMatrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn select_rows(&self, rows: &[usize]) -> Result<DenseMatrix> {
        let mut out = DenseMatrix::zeros(rows.len(), self.cols);
        for (k, &r) in rows.iter().enumerate() {
            if r >= self.rows {
                return Err(Error::IndexOutOfRange {
                    what: "matrix row",
                    index: r,
                    size: self.rows,
                });
            }
            out.row_mut(k).copy_from_slice(self.row(r));
        }
        Ok(out)
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// `self · other`.
    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch {
                context: "matmul",
                expected: (self.cols, other.cols),
                actual: other.shape(),
            });
        }
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other`.
    pub fn t_matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.rows != other.rows {
            return Err(Error::ShapeMismatch {
                context: "t_matmul",
                expected: (self.rows, other.cols),
                actual: other.shape(),
            });
        }
        let mut out = DenseMatrix::zeros(self.cols, other.cols);
        for t in 0..self.rows {
            let b_row = other.row(t);
            for (i, &a) in self.row(t).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.cols {
            return Err(Error::ShapeMismatch {
                context: "matmul_t",
                expected: (other.rows, self.cols),
                actual: other.shape(),
            });
        }
        let mut out = DenseMatrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a, other.row(j));
            }
        }
        Ok(out)
    }

    /// Column sums.
    pub fn col_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (s, &x) in sums.iter_mut().zip(self.row(r)) {
                *s += x;
            }
        }
        sums
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Row-wise softmax, stabilized by subtracting each row's maximum.
pub fn row_softmax(logits: &DenseMatrix) -> Result<DenseMatrix> {
    if !logits.is_finite() {
        return Err(Error::InvalidArgument(
            "row_softmax received non-finite logits".into(),
        ));
    }
    let mut out = logits.clone();
    for r in 0..out.rows {
        softmax_in_place(out.row_mut(r));
    }
    Ok(out)
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

/// Gradient with respect to the logits of a row softmax, given its output
/// `y` and the upstream gradient `g`: `y ⊙ (g − ⟨g, y⟩)` per row.
pub fn row_softmax_backward(
    softmax_output: &DenseMatrix,
    upstream_grad: &DenseMatrix,
) -> Result<DenseMatrix> {
    if softmax_output.shape() != upstream_grad.shape() {
        return Err(Error::ShapeMismatch {
            context: "row_softmax_backward",
            expected: softmax_output.shape(),
            actual: upstream_grad.shape(),
        });
    }
    let mut out = DenseMatrix::zeros(softmax_output.rows, softmax_output.cols);
    for r in 0..out.rows {
        let y = softmax_output.row(r);
        let g = upstream_grad.row(r);
        let inner = dot(g, y);
        for ((o, &yi), &gi) in out.row_mut(r).iter_mut().zip(y).zip(g) {
            *o = yi * (gi - inner);
        }
    }
    Ok(out)
}

/// Adam moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub first_moment: DenseMatrix,
    pub second_moment: DenseMatrix,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub const DEFAULT_BETA1: f64 = 0.9;
    pub const DEFAULT_BETA2: f64 = 0.999;
    pub const DEFAULT_EPS: f64 = 1e-8;

    pub fn new(rows: usize, cols: usize) -> Self {
        OptimizerState {
            first_moment: DenseMatrix::zeros(rows, cols),
            second_moment: DenseMatrix::zeros(rows, cols),
            step: 0,
            beta1: Self::DEFAULT_BETA1,
            beta2: Self::DEFAULT_BETA2,
            eps: Self::DEFAULT_EPS,
        }
    }

    pub fn for_param(param: &DenseMatrix) -> Self {
        Self::new(param.rows(), param.cols())
    }
}

fn check_hyper(lr: f64, weight_decay: f64) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::InvalidArgument(format!("learning rate {lr} must be > 0")));
    }
    if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "weight decay {weight_decay} must be >= 0"
        )));
    }
    Ok(())
}

#[inline]
#[allow(clippy::too_many_arguments)]
fn adamw_update_slice(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    beta1: f64,
    beta2: f64,
    eps: f64,
    bc1: f64,
    bc2: f64,
    lr: f64,
    weight_decay: f64,
) {
    for (((p, &g), m), v) in param.iter_mut().zip(grad).zip(m).zip(v) {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * (m_hat / (v_hat.sqrt() + eps) + weight_decay * *p);
    }
}

/// One AdamW step with decoupled weight decay:
/// `p ← p − lr·(m̂/(√v̂+ε) + weight_decay·p)`.
pub fn adamw_step(
    name: &str,
    param: &mut DenseMatrix,
    grad: &DenseMatrix,
    state: &mut OptimizerState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    check_hyper(lr, weight_decay)?;
    if param.shape() != grad.shape() {
        return Err(Error::ShapeMismatch {
            context: "adamw_step gradient",
            expected: param.shape(),
            actual: grad.shape(),
        });
    }
    if state.first_moment.shape() != param.shape() {
        return Err(Error::ShapeMismatch {
            context: "adamw_step state",
            expected: param.shape(),
            actual: state.first_moment.shape(),
        });
    }
    if !grad.is_finite() {
        return Err(Error::NonFiniteGradient(name.to_string()));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    adamw_update_slice(
        &mut param.data,
        &grad.data,
        &mut state.first_moment.data,
        &mut state.second_moment.data,
        state.beta1,
        state.beta2,
        state.eps,
        bc1,
        bc2,
        lr,
        weight_decay,
    );
    Ok(())
}

/// Lazy AdamW step that touches only `rows`: row `k` of `grad_rows` is the
/// gradient for parameter row `rows[k]`. Untouched rows keep their values and
/// moments; the step counter still advances once.
pub fn adamw_step_rows(
    name: &str,
    param: &mut DenseMatrix,
    rows: &[usize],
    grad_rows: &DenseMatrix,
    state: &mut OptimizerState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    check_hyper(lr, weight_decay)?;
    if grad_rows.rows() != rows.len() || grad_rows.cols() != param.cols() {
        return Err(Error::ShapeMismatch {
            context: "adamw_step_rows gradient",
            expected: (rows.len(), param.cols()),
            actual: grad_rows.shape(),
        });
    }
    if state.first_moment.shape() != param.shape() {
        return Err(Error::ShapeMismatch {
            context: "adamw_step_rows state",
            expected: param.shape(),
            actual: state.first_moment.shape(),
        });
    }
    if !grad_rows.is_finite() {
        return Err(Error::NonFiniteGradient(name.to_string()));
    }
    if let Some(&bad) = rows.iter().find(|&&r| r >= param.rows()) {
        return Err(Error::IndexOutOfRange {
            what: "parameter row",
            index: bad,
            size: param.rows(),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let cols = param.cols();
    for (k, &r) in rows.iter().enumerate() {
        let span = r * cols..(r + 1) * cols;
        adamw_update_slice(
            &mut param.data[span.clone()],
            grad_rows.row(k),
            &mut state.first_moment.data[span.clone()],
            &mut state.second_moment.data[span],
            state.beta1,
            state.beta2,
            state.eps,
            bc1,
            bc2,
            lr,
            weight_decay,
        );
    }
    Ok(())
}

/// Deterministic generator: equal seeds (and streams) give equal outputs on
/// every platform.
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    /// Independent stream derived from the same seed.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        SeededRng { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform integer in `0..n`. Panics if `n == 0`.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index() on empty range");
        // Reject the incomplete final cycle so the modulo is unbiased.
        let n = n as u64;
        let rem = (u64::MAX % n + 1) % n;
        loop {
            let x = self.inner.next_u64();
            if rem == 0 || x < rem.wrapping_neg() {
                return (x % n) as usize;
            }
        }
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        let z: f64 = StandardNormal.sample(&mut self.inner);
        mean + std * z
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
