//! Measurement side of a run: per-outer-iteration trace records and their
//! CSV form, the high-precision reference minimizer used for suboptimality,
//! and classification scoring (binary F1, one-vs-all digit prediction).

use std::io::{self, Write};

use thiserror::Error;

use crate::objective::{norm2, FiniteSum};

/// One outer iteration of a run, as written to the trace CSV. Bit counters
/// and the clamp counter are cumulative; `delta` is NaN when the run had no
/// reference minimizer to compare against.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    /// outer iteration index (0 = initial point)
    pub k: usize,
    /// objective value at the current outer iterate
    pub loss: f64,
    /// full-gradient norm at the current outer iterate
    pub grad_norm: f64,
    /// loss minus the reference optimum (NaN without a reference)
    pub delta: f64,
    /// cumulative uplink payload bits (vector traffic only)
    pub bits_up: u64,
    /// cumulative downlink payload bits (vector traffic only)
    pub bits_down: u64,
    /// whether the candidate produced in this iteration was rejected
    pub rejected: bool,
    /// cumulative count of coordinates clamped during quantization
    pub clamps: u64,
}

/// The trace of one run: one record per outer iteration, in order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

pub const TRACE_HEADER: &str = "k,loss,grad_norm,delta,bits_up,bits_down,rejected,clamps";

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: TraceRecord) {
        self.records.push(record);
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    /// Write the pinned CSV schema. `meta` pairs become leading `# key: value`
    /// comment lines so provenance can ride along without touching the
    /// column layout.
    pub fn write_csv<W: Write>(&self, mut w: W, meta: &[(&str, String)]) -> io::Result<()> {
        for (key, value) in meta {
            writeln!(w, "# {key}: {value}")?;
        }
        writeln!(w, "{TRACE_HEADER}")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.k,
                r.loss,
                r.grad_norm,
                r.delta,
                r.bits_up,
                r.bits_down,
                u8::from(r.rejected),
                r.clamps
            )?;
        }
        Ok(())
    }
}

/// Geometric-mean per-iteration contraction of a positive series: the ratio
/// (last/first)^(1/steps). `None` when fewer than two entries or any entry
/// is not a positive finite number.
pub fn geometric_mean_contraction(series: &[f64]) -> Option<f64> {
    if series.len() < 2 || series.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return None;
    }
    let steps = (series.len() - 1) as f64;
    let (first, last) = (series[0], series[series.len() - 1]);
    Some(((last.ln() - first.ln()) / steps).exp())
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("no convergence in {iterations} iterations; gradient norm still {grad_norm}")]
    IterationCap { iterations: usize, grad_norm: f64 },
    #[error("tolerance must be a positive finite number, got {0}")]
    BadTolerance(f64),
    #[error("objective must be strongly convex for a unique reference point")]
    NotStronglyConvex,
}

/// High-precision minimizer for suboptimality traces.
#[derive(Debug, Clone)]
pub struct Reference {
    pub w: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

/// Drive the full gradient below `tol` (default choice: 1e-10) and return the
/// minimizer. Uses damped Newton steps whenever the objective offers a dense
/// Hessian, otherwise constant-step gradient descent at 1/L; both are exact
/// deterministic procedures.
pub fn solve_reference(obj: &dyn FiniteSum, tol: f64) -> Result<Reference, SolveError> {
    solve_reference_capped(obj, tol, 200_000)
}

pub fn solve_reference_capped(
    obj: &dyn FiniteSum,
    tol: f64,
    max_iters: usize,
) -> Result<Reference, SolveError> {
    if !(tol.is_finite() && tol > 0.0) {
        return Err(SolveError::BadTolerance(tol));
    }
    if obj.strong_convexity() <= 0.0 {
        return Err(SolveError::NotStronglyConvex);
    }
    let d = obj.dim();
    let mut w = vec![0.0; d];
    let mut g = vec![0.0; d];
    let gd_step = 1.0 / obj.lipschitz();
    let mut grad_norm = f64::INFINITY;
    for it in 0..max_iters {
        obj.full_grad(&w, &mut g);
        grad_norm = norm2(&g);
        if grad_norm <= tol {
            return Ok(Reference { value: obj.value(&w), w, grad_norm, iterations: it });
        }
        match obj.dense_hessian(&w) {
            Some(mut h) => {
                // damped Newton: w <- w - step * H^{-1} g with backtracking
                // on the objective value
                let p = match cholesky_solve(&mut h, d, &g) {
                    Some(p) => p,
                    None => {
                        // numerically non-SPD Hessian; fall back to a plain
                        // gradient step this iteration
                        g.iter().map(|gi| gi * gd_step).collect()
                    }
                };
                let f0 = obj.value(&w);
                let slope: f64 = g.iter().zip(&p).map(|(gi, pi)| gi * pi).sum();
                let mut step = 1.0;
                loop {
                    let trial: Vec<f64> =
                        w.iter().zip(&p).map(|(wi, pi)| wi - step * pi).collect();
                    if obj.value(&trial) <= f0 - 1e-4 * step * slope || step < 1e-12 {
                        w = trial;
                        break;
                    }
                    step *= 0.5;
                }
            }
            None => {
                for (wi, gi) in w.iter_mut().zip(&g) {
                    *wi -= gd_step * gi;
                }
            }
        }
    }
    Err(SolveError::IterationCap { iterations: max_iters, grad_norm })
}

/// Solve H p = g for symmetric positive definite H (row-major d x d, consumed
/// as scratch). Returns `None` when the factorization hits a nonpositive
/// pivot.
fn cholesky_solve(h: &mut [f64], d: usize, g: &[f64]) -> Option<Vec<f64>> {
    debug_assert_eq!(h.len(), d * d);
    // in-place lower-triangular factorization H = L L^T
    for j in 0..d {
        let mut diag = h[j * d + j];
        for k in 0..j {
            diag -= h[j * d + k] * h[j * d + k];
        }
        if diag <= 0.0 || !diag.is_finite() {
            return None;
        }
        let root = diag.sqrt();
        h[j * d + j] = root;
        for i in (j + 1)..d {
            let mut v = h[i * d + j];
            for k in 0..j {
                v -= h[i * d + k] * h[j * d + k];
            }
            h[i * d + j] = v / root;
        }
    }
    // forward substitution L y = g
    let mut p = g.to_vec();
    for i in 0..d {
        for k in 0..i {
            p[i] -= h[i * d + k] * p[k];
        }
        p[i] /= h[i * d + i];
    }
    // back substitution L^T p = y
    for i in (0..d).rev() {
        for k in (i + 1)..d {
            p[i] -= h[k * d + i] * p[k];
        }
        p[i] /= h[i * d + i];
    }
    Some(p)
}

#[derive(Debug, Error, PartialEq)]
pub enum ScoreError {
    #[error("prediction and truth lengths differ: {pred} vs {truth}")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("entry {index} must be -1 or +1, got {value}")]
    BadLabel { index: usize, value: f64 },
    #[error("classifier {index} has dimension {got}, expected {expected}")]
    BadClassifier { index: usize, got: usize, expected: usize },
    #[error("need at least one classifier")]
    NoClassifiers,
}

/// Binary F1 with its degeneracy flag: any zero denominator in precision,
/// recall, or their harmonic mean makes the score 0 and sets the flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F1 {
    pub value: f64,
    pub degenerate: bool,
}

/// F1 = 2PR/(P+R) over -1/+1 prediction and truth vectors.
pub fn f1(pred: &[f64], truth: &[f64]) -> Result<F1, ScoreError> {
    if pred.len() != truth.len() {
        return Err(ScoreError::LengthMismatch { pred: pred.len(), truth: truth.len() });
    }
    for (index, &value) in pred.iter().chain(truth.iter()).enumerate() {
        if value != 1.0 && value != -1.0 {
            return Err(ScoreError::BadLabel { index: index % pred.len(), value });
        }
    }
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut fn_ = 0u64;
    for (&p, &t) in pred.iter().zip(truth) {
        match (p > 0.0, t > 0.0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    if tp + fp == 0 || tp + fn_ == 0 {
        return Ok(F1 { value: 0.0, degenerate: true });
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    if precision + recall == 0.0 {
        return Ok(F1 { value: 0.0, degenerate: true });
    }
    Ok(F1 { value: 2.0 * precision * recall / (precision + recall), degenerate: false })
}

/// argmax over classifiers of <w_l, x>, ties resolved to the smallest index
/// so predictions are deterministic.
pub fn one_vs_all_predict(classifiers: &[Vec<f64>], x: &[f64]) -> Result<usize, ScoreError> {
    if classifiers.is_empty() {
        return Err(ScoreError::NoClassifiers);
    }
    let mut best = 0usize;
    let mut best_score = f64::NEG_INFINITY;
    for (l, w) in classifiers.iter().enumerate() {
        if w.len() != x.len() {
            return Err(ScoreError::BadClassifier { index: l, got: w.len(), expected: x.len() });
        }
        let score: f64 = w.iter().zip(x).map(|(wi, xi)| wi * xi).sum();
        if score > best_score {
            best_score = score;
            best = l;
        }
    }
    Ok(best)
}

/// Multi-class scoring of a one-vs-all classifier bank: per-class binary F1
/// (class `l` vs the rest) plus their plain average.
#[derive(Debug, Clone)]
pub struct OneVsAllReport {
    pub per_class: Vec<F1>,
    pub macro_f1: f64,
}

pub fn one_vs_all_report(
    classifiers: &[Vec<f64>],
    features: &[f64],
    d: usize,
    labels: &[u8],
) -> Result<OneVsAllReport, ScoreError> {
    if classifiers.is_empty() {
        return Err(ScoreError::NoClassifiers);
    }
    let n = labels.len();
    if features.len() != n * d {
        return Err(ScoreError::LengthMismatch { pred: features.len(), truth: n * d });
    }
    let mut predicted = Vec::with_capacity(n);
    for i in 0..n {
        predicted.push(one_vs_all_predict(classifiers, &features[i * d..(i + 1) * d])?);
    }
    let mut per_class = Vec::with_capacity(classifiers.len());
    for l in 0..classifiers.len() {
        let pred: Vec<f64> =
            predicted.iter().map(|&p| if p == l { 1.0 } else { -1.0 }).collect();
        let truth: Vec<f64> =
            labels.iter().map(|&t| if t as usize == l { 1.0 } else { -1.0 }).collect();
        per_class.push(f1(&pred, &truth)?);
    }
    let macro_f1 = per_class.iter().map(|s| s.value).sum::<f64>() / per_class.len() as f64;
    Ok(OneVsAllReport { per_class, macro_f1 })
}
