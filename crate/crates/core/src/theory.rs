//! Closed-form convergence guarantees for the quantized epoch algorithms:
//! per-epoch contraction factors, the fixed-grid ambiguity offset, and the
//! minimum bits-per-coordinate / epoch length needed to certify a target
//! rate.
//!
//! Every calculator validates its preconditions and reports *which* one
//! failed instead of returning NaN, so bound sweeps can tell "needs a huge
//! epoch" apart from "not achievable at all".

use thiserror::Error;

/// Problem and run constants the bounds are evaluated at. `bits_per_dim`
/// and `t` are only read by the operations that need them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemConstants {
    /// strong-convexity modulus, > 0
    pub mu: f64,
    /// gradient smoothness constant, >= mu
    pub lipschitz: f64,
    /// problem dimension
    pub d: usize,
    /// step size
    pub alpha: f64,
    /// epoch length
    pub t: u64,
    /// quantization bits per coordinate (b/d under uniform allocation)
    pub bits_per_dim: u32,
}

#[derive(Debug, Error, PartialEq)]
pub enum BoundError {
    #[error("constants out of domain: need 0 < mu <= L, finite alpha > 0, d >= 1 (mu={mu}, L={lipschitz}, alpha={alpha}, d={d})")]
    BadConstants { mu: f64, lipschitz: f64, alpha: f64, d: usize },
    #[error("step size {alpha} not below 1/(6L) = {limit}")]
    StepTooLarge { alpha: f64, limit: f64 },
    #[error("epoch length {t} not above the bound; smallest admissible is {min_t}")]
    EpochTooShort { t: u64, min_t: u64 },
    #[error("epoch length must be at least 1")]
    ZeroEpoch,
    #[error("target contraction {sigma_bar} must lie in (0, 1)")]
    BadTarget { sigma_bar: f64 },
    #[error("target contraction {sigma_bar} unreachable at this step size: need sigma_bar > {floor}")]
    TargetUnreachable { sigma_bar: f64, floor: f64 },
    #[error("{bits_per_dim} bits per coordinate cannot certify the target; need at least {required}")]
    BitsInsufficient { bits_per_dim: u32, required: u32 },
    #[error("quantization-error terms must be nonnegative, got delta={delta}, beta_sum={beta_sum}")]
    NegativeErrorTerm { delta: f64, beta_sum: f64 },
    #[error("bits per coordinate must be at least 1")]
    ZeroBits,
}

fn check_domain(c: &ProblemConstants) -> Result<(), BoundError> {
    let ok = c.mu.is_finite()
        && c.lipschitz.is_finite()
        && c.alpha.is_finite()
        && c.mu > 0.0
        && c.lipschitz >= c.mu
        && c.alpha > 0.0
        && c.d >= 1;
    if ok {
        Ok(())
    } else {
        Err(BoundError::BadConstants {
            mu: c.mu,
            lipschitz: c.lipschitz,
            alpha: c.alpha,
            d: c.d,
        })
    }
}

fn check_step(c: &ProblemConstants) -> Result<(), BoundError> {
    let limit = 1.0 / (6.0 * c.lipschitz);
    if c.alpha < limit {
        Ok(())
    } else {
        Err(BoundError::StepTooLarge { alpha: c.alpha, limit })
    }
}

/// (2^b - 1)^2, exact for b <= 32.
fn grid_points_sq(bits_per_dim: u32) -> f64 {
    let pts = ((1u64 << bits_per_dim) - 1) as f64;
    pts * pts
}

/// Like [`grid_points_sq`] but defined for arbitrarily large widths (the
/// bound report may exceed any encodable grid); saturates to infinity.
fn points_sq_wide(bits_per_dim: u32) -> f64 {
    if bits_per_dim <= 32 {
        grid_points_sq(bits_per_dim)
    } else {
        (2f64.powi(bits_per_dim.min(1100) as i32) - 1.0).powi(2)
    }
}

/// Smallest epoch length satisfying the fixed-grid precondition
/// T > 1/(mu * alpha * (1 - 6 L alpha)).
pub fn min_epoch_length_fixed(c: &ProblemConstants) -> Result<u64, BoundError> {
    check_domain(c)?;
    check_step(c)?;
    let bound = 1.0 / (c.mu * c.alpha * (1.0 - 6.0 * c.lipschitz * c.alpha));
    Ok(smallest_integer_above(bound))
}

/// Fixed-grid per-epoch contraction factor:
/// sigma = (1/(mu T) + 3 L alpha^2) / (alpha - 3 L alpha^2).
/// Guaranteed in (0, 1) once the step and epoch preconditions hold.
pub fn sigma_fixed(c: &ProblemConstants) -> Result<f64, BoundError> {
    check_domain(c)?;
    check_step(c)?;
    if c.t == 0 {
        return Err(BoundError::ZeroEpoch);
    }
    let min_t = min_epoch_length_fixed(c)?;
    if c.t < min_t {
        return Err(BoundError::EpochTooShort { t: c.t, min_t });
    }
    let a = c.alpha;
    let l = c.lipschitz;
    let sigma = (1.0 / (c.mu * c.t as f64) + 3.0 * l * a * a) / (a - 3.0 * l * a * a);
    debug_assert!(sigma > 0.0 && sigma < 1.0, "preconditions should pin sigma into (0,1)");
    Ok(sigma)
}

/// Fixed-grid ambiguity offset:
/// gamma = (3 T alpha^2 delta + beta_sum) / (2 T alpha - 12 L T alpha^2 - 2/mu),
/// where `delta` is the mean squared reference-gradient quantization error
/// and `beta_sum` the summed squared iterate quantization errors of one
/// epoch (both estimated from run traces). Zero error terms give gamma = 0.
pub fn gamma_fixed(c: &ProblemConstants, delta: f64, beta_sum: f64) -> Result<f64, BoundError> {
    check_domain(c)?;
    check_step(c)?;
    if c.t == 0 {
        return Err(BoundError::ZeroEpoch);
    }
    if delta < 0.0 || beta_sum < 0.0 {
        return Err(BoundError::NegativeErrorTerm { delta, beta_sum });
    }
    let a = c.alpha;
    let t = c.t as f64;
    let denom = 2.0 * t * a - 12.0 * c.lipschitz * t * a * a - 2.0 / c.mu;
    if denom <= 0.0 {
        let min_t = min_epoch_length_fixed(c)?;
        return Err(BoundError::EpochTooShort { t: c.t, min_t });
    }
    Ok((3.0 * t * a * a * delta + beta_sum) / denom)
}

/// Adaptive-grid per-epoch contraction factor:
/// sigma = (1/T + 3 mu L alpha^2 + (4L/mu)(1 + 3 L^2 alpha^2) d / (2^{b/d}-1)^2)
///         / (mu (alpha - 3 L alpha^2)).
/// Always positive; below 1 exactly when (b/d, T) satisfy the
/// [`min_bits_per_dim`] / [`min_epoch_length`] bounds for some target < 1.
pub fn sigma_adaptive(c: &ProblemConstants) -> Result<f64, BoundError> {
    check_domain(c)?;
    check_step(c)?;
    if c.t == 0 {
        return Err(BoundError::ZeroEpoch);
    }
    if c.bits_per_dim == 0 {
        return Err(BoundError::ZeroBits);
    }
    let a = c.alpha;
    let l = c.lipschitz;
    let quant = (4.0 * l / c.mu) * (1.0 + 3.0 * l * l * a * a) * c.d as f64
        / grid_points_sq(c.bits_per_dim);
    let sigma = (1.0 / c.t as f64 + 3.0 * c.mu * l * a * a + quant)
        / (c.mu * (a - 3.0 * l * a * a));
    Ok(sigma)
}

/// sigma_bar - 3 L alpha sigma_bar - 3 L alpha: positive exactly when the
/// target is reachable at this step size.
fn target_margin(c: &ProblemConstants, sigma_bar: f64) -> Result<f64, BoundError> {
    if !(sigma_bar > 0.0 && sigma_bar < 1.0) {
        return Err(BoundError::BadTarget { sigma_bar });
    }
    let la3 = 3.0 * c.lipschitz * c.alpha;
    let margin = sigma_bar - la3 * sigma_bar - la3;
    if margin <= 0.0 {
        // the smallest reachable target at this step size
        let floor = la3 / (1.0 - la3);
        return Err(BoundError::TargetUnreachable { sigma_bar, floor });
    }
    Ok(margin)
}

/// Minimum bits per coordinate certifying a contraction of at most
/// `sigma_bar`, i.e. the smallest integer b with
/// (2^b - 1)^2 >= 4 L d (1 + 3 L^2 alpha^2) / (mu^2 alpha * margin).
/// The ceiling is taken by verifying integers directly against that
/// inequality, so a boundary value never misrounds.
pub fn min_bits_per_dim(c: &ProblemConstants, sigma_bar: f64) -> Result<u32, BoundError> {
    check_domain(c)?;
    check_step(c)?;
    let margin = target_margin(c, sigma_bar)?;
    let a = c.alpha;
    let l = c.lipschitz;
    let x = 4.0 * l * c.d as f64 * (1.0 + 3.0 * l * l * a * a) / (c.mu * c.mu * a * margin);
    // start just below the real-valued bound and walk up to the first
    // integer that satisfies the defining inequality
    let raw = (1.0 + x.sqrt()).log2();
    let mut b = (raw.floor() as u32).max(1);
    while points_sq_wide(b) < x {
        b += 1;
    }
    Ok(b)
}

/// Smallest epoch length certifying a contraction of at most `sigma_bar`
/// at the given bits per coordinate: the smallest integer strictly greater
/// than 1 / (mu alpha margin - 4 L d (1 + 3 L^2 alpha^2) / (mu (2^{b/d}-1)^2)).
/// Errors with [`BoundError::BitsInsufficient`] when that denominator is
/// not positive (too few bits for any epoch length to help).
pub fn min_epoch_length(c: &ProblemConstants, sigma_bar: f64) -> Result<u64, BoundError> {
    check_domain(c)?;
    check_step(c)?;
    if c.bits_per_dim == 0 {
        return Err(BoundError::ZeroBits);
    }
    let margin = target_margin(c, sigma_bar)?;
    let a = c.alpha;
    let l = c.lipschitz;
    let quant =
        4.0 * l * c.d as f64 * (1.0 + 3.0 * l * l * a * a) / (c.mu * grid_points_sq(c.bits_per_dim));
    let denom = c.mu * a * margin - quant;
    if denom <= 0.0 {
        let required = min_bits_per_dim(c, sigma_bar)?;
        return Err(BoundError::BitsInsufficient { bits_per_dim: c.bits_per_dim, required });
    }
    Ok(smallest_integer_above(1.0 / denom))
}

/// Smallest integer strictly greater than `x` (at least 1).
fn smallest_integer_above(x: f64) -> u64 {
    if x < 1.0 {
        return 1;
    }
    let f = x.floor();
    // strictly greater: an exactly-integer bound still moves up by one
    (f as u64) + 1
}
