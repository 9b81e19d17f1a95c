//! Finite-sum objectives: f(w) = (1/N) * sum_i f_i(w).
//!
//! Optimizers only see the [`FiniteSum`] trait — one term per worker — so
//! the same loop runs a regularized logistic regression, a synthetic
//! quadratic, or any of them re-grouped onto fewer workers via
//! [`ShardedSum`].

use std::sync::Arc;

use thiserror::Error;

/// A finite sum of smooth terms. `term_*` address one worker's function;
/// `value`/`full_grad` are the uniform average over all of them.
///
/// Implementations report a Lipschitz constant for the gradient of the
/// average and a strong-convexity modulus (0 when only convex).
pub trait FiniteSum {
    fn dim(&self) -> usize;
    fn n_terms(&self) -> usize;
    fn term_value(&self, i: usize, w: &[f64]) -> f64;
    /// Write the gradient of term `i` into `out` (overwriting it).
    fn term_grad(&self, i: usize, w: &[f64], out: &mut [f64]);
    fn lipschitz(&self) -> f64;
    fn strong_convexity(&self) -> f64;

    fn value(&self, w: &[f64]) -> f64 {
        let n = self.n_terms();
        let mut acc = 0.0;
        for i in 0..n {
            acc += self.term_value(i, w);
        }
        acc / n as f64
    }

    /// Write the gradient of the average into `out` (overwriting it).
    fn full_grad(&self, w: &[f64], out: &mut [f64]) {
        let n = self.n_terms();
        let mut tmp = vec![0.0; self.dim()];
        out.fill(0.0);
        for i in 0..n {
            self.term_grad(i, w, &mut tmp);
            for (o, t) in out.iter_mut().zip(&tmp) {
                *o += t;
            }
        }
        let inv = 1.0 / n as f64;
        for o in out.iter_mut() {
            *o *= inv;
        }
    }

    /// Row-major d x d Hessian of the average, when the objective can
    /// produce one cheaply. `None` sends the reference solver down its
    /// first-order fallback path.
    fn dense_hessian(&self, _w: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ObjectiveError {
    #[error("feature matrix of {len} values is not n*d = {n}*{d}")]
    BadShape { len: usize, n: usize, d: usize },
    #[error("need at least one sample and one feature, got n={n}, d={d}")]
    Degenerate { n: usize, d: usize },
    #[error("label {index} must be -1 or +1, got {value}")]
    BadLabel { index: usize, value: f64 },
    #[error("ridge coefficient must be finite and >= 0, got {0}")]
    BadRidge(f64),
}

/// Binary logistic regression with a ridge term inside every summand:
///
/// f_i(w) = ln(1 + exp(-y_i * <w, x_i>)) + lambda * ||w||^2
///
/// Labels are -1/+1. The gradient of the average is (1/(4N)) * sum ||x_i||^2
/// + 2*lambda smooth and 2*lambda strongly convex.
pub struct RidgeLogistic {
    // row-major n x d, shared so several label vectors can reuse one matrix
    x: Arc<[f64]>,
    y: Vec<f64>,
    n: usize,
    d: usize,
    lambda: f64,
    lipschitz: f64,
}

impl std::fmt::Debug for RidgeLogistic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RidgeLogistic")
            .field("n", &self.n)
            .field("d", &self.d)
            .field("lambda", &self.lambda)
            .finish_non_exhaustive()
    }
}

impl RidgeLogistic {
    pub fn new(x: Arc<[f64]>, y: Vec<f64>, d: usize, lambda: f64) -> Result<Self, ObjectiveError> {
        let n = y.len();
        if n == 0 || d == 0 {
            return Err(ObjectiveError::Degenerate { n, d });
        }
        if x.len() != n * d {
            return Err(ObjectiveError::BadShape { len: x.len(), n, d });
        }
        for (i, &yi) in y.iter().enumerate() {
            if yi != 1.0 && yi != -1.0 {
                return Err(ObjectiveError::BadLabel { index: i, value: yi });
            }
        }
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(ObjectiveError::BadRidge(lambda));
        }
        let sq_sum: f64 = x.iter().map(|v| v * v).sum();
        let lipschitz = sq_sum / (4.0 * n as f64) + 2.0 * lambda;
        Ok(Self { x, y, n, d, lambda, lipschitz })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    /// Signed margin y_i * <w, x_i>.
    fn margin(&self, i: usize, w: &[f64]) -> f64 {
        let row = self.row(i);
        let mut a = 0.0;
        for (wj, xj) in w.iter().zip(row) {
            a += wj * xj;
        }
        self.y[i] * a
    }

    /// Dense d x d Hessian (row-major): (1/N) sum s_i (1-s_i) x_i x_i^T + 2*lambda*I
    /// with s_i the sigmoid of the margin. Test support — O(N d^2), keep d small.
    pub fn hessian(&self, w: &[f64]) -> Vec<f64> {
        assert_eq!(w.len(), self.d, "dimension mismatch");
        let d = self.d;
        let mut h = vec![0.0; d * d];
        for i in 0..self.n {
            let m = self.margin(i, w);
            // sigma(m) * sigma(-m), symmetric in the sign of m
            let s = sigmoid_neg(m);
            let coef = s * (1.0 - s) / self.n as f64;
            let row = self.row(i);
            for a in 0..d {
                let ca = coef * row[a];
                for b in 0..d {
                    h[a * d + b] += ca * row[b];
                }
            }
        }
        let two_lambda = 2.0 * self.lambda;
        for a in 0..d {
            h[a * d + a] += two_lambda;
        }
        h
    }
}

/// ln(1 + e^-m) without overflow for large |m|.
fn log1p_exp_neg(m: f64) -> f64 {
    if m >= 0.0 {
        (-m).exp().ln_1p()
    } else {
        -m + m.exp().ln_1p()
    }
}

/// 1 / (1 + e^m) without overflow for large |m|.
fn sigmoid_neg(m: f64) -> f64 {
    if m >= 0.0 {
        let t = (-m).exp();
        t / (1.0 + t)
    } else {
        1.0 / (1.0 + m.exp())
    }
}

impl FiniteSum for RidgeLogistic {
    fn dim(&self) -> usize {
        self.d
    }

    fn n_terms(&self) -> usize {
        self.n
    }

    fn term_value(&self, i: usize, w: &[f64]) -> f64 {
        let m = self.margin(i, w);
        let ridge: f64 = w.iter().map(|v| v * v).sum::<f64>() * self.lambda;
        log1p_exp_neg(m) + ridge
    }

    fn term_grad(&self, i: usize, w: &[f64], out: &mut [f64]) {
        let m = self.margin(i, w);
        let coef = -self.y[i] * sigmoid_neg(m);
        let row = self.row(i);
        let two_lambda = 2.0 * self.lambda;
        for j in 0..self.d {
            out[j] = coef * row[j] + two_lambda * w[j];
        }
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    fn strong_convexity(&self) -> f64 {
        2.0 * self.lambda
    }

    fn dense_hessian(&self, w: &[f64]) -> Option<Vec<f64>> {
        Some(self.hessian(w))
    }

    fn value(&self, w: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.n {
            acc += log1p_exp_neg(self.margin(i, w));
        }
        let ridge: f64 = w.iter().map(|v| v * v).sum::<f64>() * self.lambda;
        acc / self.n as f64 + ridge
    }

    fn full_grad(&self, w: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for i in 0..self.n {
            let coef = -self.y[i] * sigmoid_neg(self.margin(i, w));
            let row = self.row(i);
            for j in 0..self.d {
                out[j] += coef * row[j];
            }
        }
        let inv = 1.0 / self.n as f64;
        let two_lambda = 2.0 * self.lambda;
        for j in 0..self.d {
            out[j] = out[j] * inv + two_lambda * w[j];
        }
    }
}

/// Mean of squared distances to fixed anchor points:
///
/// f_i(w) = 0.5 * ||w - a_i||^2
///
/// Gradient Lipschitz constant and strong convexity are both exactly 1, the
/// minimizer is the anchor mean, so everything about a run can be checked in
/// closed form.
pub struct MeanQuadratic {
    anchors: Vec<f64>, // row-major n x d
    n: usize,
    d: usize,
}

impl MeanQuadratic {
    pub fn new(anchors: Vec<f64>, d: usize) -> Result<Self, ObjectiveError> {
        if d == 0 || anchors.is_empty() {
            return Err(ObjectiveError::Degenerate { n: anchors.len() / d.max(1), d });
        }
        if !anchors.len().is_multiple_of(d) {
            return Err(ObjectiveError::BadShape { len: anchors.len(), n: anchors.len() / d, d });
        }
        let n = anchors.len() / d;
        Ok(Self { anchors, n, d })
    }

    fn anchor(&self, i: usize) -> &[f64] {
        &self.anchors[i * self.d..(i + 1) * self.d]
    }

    /// The unique minimizer: the mean anchor.
    pub fn minimizer(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.d];
        for i in 0..self.n {
            for (mj, aj) in m.iter_mut().zip(self.anchor(i)) {
                *mj += aj;
            }
        }
        let inv = 1.0 / self.n as f64;
        for mj in m.iter_mut() {
            *mj *= inv;
        }
        m
    }
}

impl FiniteSum for MeanQuadratic {
    fn dim(&self) -> usize {
        self.d
    }

    fn n_terms(&self) -> usize {
        self.n
    }

    fn term_value(&self, i: usize, w: &[f64]) -> f64 {
        let a = self.anchor(i);
        0.5 * w.iter().zip(a).map(|(wj, aj)| (wj - aj) * (wj - aj)).sum::<f64>()
    }

    fn term_grad(&self, i: usize, w: &[f64], out: &mut [f64]) {
        let a = self.anchor(i);
        for j in 0..self.d {
            out[j] = w[j] - a[j];
        }
    }

    fn lipschitz(&self) -> f64 {
        1.0
    }

    fn strong_convexity(&self) -> f64 {
        1.0
    }

    fn dense_hessian(&self, _w: &[f64]) -> Option<Vec<f64>> {
        let mut h = vec![0.0; self.d * self.d];
        for j in 0..self.d {
            h[j * self.d + j] = 1.0;
        }
        Some(h)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ShardError {
    #[error("need at least one shard")]
    NoShards,
    #[error("shard {0} is empty")]
    EmptyShard(usize),
    #[error("term index {index} out of range for {n} terms")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("term index {0} appears in more than one shard")]
    Duplicate(usize),
    #[error("term index {0} is assigned to no shard")]
    Missing(usize),
}

/// Re-groups an inner sum's terms onto fewer workers. Shard `j`'s function
/// is the plain mean of its terms — what a node holding those samples would
/// compute locally. The overall objective is then the unweighted average
/// over shards, which equals the inner sample mean exactly when shard sizes
/// are equal (the default partitions keep sizes within one of each other)
/// and is the shard-size-weighted variant otherwise.
///
/// The forwarded Lipschitz/strong-convexity constants are exact for equal
/// shard sizes; strong convexity stays exact for any sizes (every term
/// shares the same modulus), while the smoothness constant is approximate
/// under unequal shards.
pub struct ShardedSum<'a> {
    inner: &'a dyn FiniteSum,
    shards: Vec<Vec<usize>>,
}

impl std::fmt::Debug for ShardedSum<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ShardedSum")
            .field("n_shards", &self.shards.len())
            .field("inner_terms", &self.inner.n_terms())
            .finish_non_exhaustive()
    }
}

impl<'a> ShardedSum<'a> {
    pub fn new(inner: &'a dyn FiniteSum, shards: Vec<Vec<usize>>) -> Result<Self, ShardError> {
        if shards.is_empty() {
            return Err(ShardError::NoShards);
        }
        let n = inner.n_terms();
        let mut seen = vec![false; n];
        for (j, shard) in shards.iter().enumerate() {
            if shard.is_empty() {
                return Err(ShardError::EmptyShard(j));
            }
            for &i in shard {
                if i >= n {
                    return Err(ShardError::IndexOutOfRange { index: i, n });
                }
                if seen[i] {
                    return Err(ShardError::Duplicate(i));
                }
                seen[i] = true;
            }
        }
        if let Some(i) = seen.iter().position(|&s| !s) {
            return Err(ShardError::Missing(i));
        }
        Ok(Self { inner, shards })
    }

    pub fn shard_sizes(&self) -> Vec<usize> {
        self.shards.iter().map(Vec::len).collect()
    }
}

impl FiniteSum for ShardedSum<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn n_terms(&self) -> usize {
        self.shards.len()
    }

    fn term_value(&self, j: usize, w: &[f64]) -> f64 {
        let shard = &self.shards[j];
        shard.iter().map(|&i| self.inner.term_value(i, w)).sum::<f64>() / shard.len() as f64
    }

    fn term_grad(&self, j: usize, w: &[f64], out: &mut [f64]) {
        let shard = &self.shards[j];
        let mut tmp = vec![0.0; self.inner.dim()];
        out.fill(0.0);
        for &i in shard {
            self.inner.term_grad(i, w, &mut tmp);
            for (o, t) in out.iter_mut().zip(&tmp) {
                *o += t;
            }
        }
        let inv = 1.0 / shard.len() as f64;
        for o in out.iter_mut() {
            *o *= inv;
        }
    }

    fn lipschitz(&self) -> f64 {
        self.inner.lipschitz()
    }

    fn strong_convexity(&self) -> f64 {
        self.inner.strong_convexity()
    }
}

/// Euclidean norm. Used all over the optimizer and theory code.
pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
