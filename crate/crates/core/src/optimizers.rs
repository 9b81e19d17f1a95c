//! The simulated optimizers: the epoch-structured variance-reduced family
//! (with optional reference-point memory and quantized exchanges) plus the
//! GD/SGD/SAG baselines, all driving a bit meter.
//!
//! Communication accounting convention: each outer iteration is charged the
//! full-precision reference-gradient batch transmitted at its start — for the
//! epoch family that batch is physically computed at the previous epoch's end
//! (it doubles as the acceptance check), and the batch evaluating the very
//! last candidate is not charged because the run stops there. All central
//! measurements for the trace (loss, true gradient norm) are free: they are
//! instrumentation, not protocol traffic. Grid-size announcements for
//! adaptive runs cost 64 bits of downlink per epoch and are metered under
//! their own message kind, outside the vector-payload columns of the trace.
//!
//! Randomness: two independent ChaCha streams derived from the seed. The
//! index stream draws, per epoch, the T worker indices in step order and then
//! one iterate-selection index (baselines draw one worker index per
//! iteration; deterministic algorithms draw nothing). The quantization stream
//! is consumed one uniform per quantized coordinate, in transmission order:
//! inner gradient (`+` variants only), reference gradient, then the parameter
//! broadcast. Separate streams mean two algorithms differing only in
//! quantization see identical sampling sequences.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::metrics::{Trace, TraceRecord};
use crate::netsim::{BitMeter, Direction, MessageKind, FULL_PRECISION_BITS};
use crate::objective::{norm2, FiniteSum};
use crate::quantizer::{GridError, GridSpec, MAX_BITS_PER_COORD, MIN_RADIUS};

/// Every algorithm the runner knows. Naming: a leading `Q`/`QM` means the
/// exchanged vectors are quantized; `-F`/`-A` picks fixed or adaptive grids;
/// a trailing `+` also quantizes the inner-loop stochastic gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Gd,
    Sgd,
    Sag,
    QGd,
    QSgd,
    QSag,
    Svrg,
    MSvrg,
    QmSvrgF,
    QmSvrgA,
    QmSvrgFPlus,
    QmSvrgAPlus,
}

#[derive(Debug, Error, PartialEq)]
#[error("unknown algorithm {0:?}; expected one of {}", Algorithm::ALL_NAMES.join(", "))]
pub struct UnknownAlgorithm(pub String);

impl Algorithm {
    pub const ALL: [Algorithm; 12] = [
        Algorithm::Gd,
        Algorithm::Sgd,
        Algorithm::Sag,
        Algorithm::QGd,
        Algorithm::QSgd,
        Algorithm::QSag,
        Algorithm::Svrg,
        Algorithm::MSvrg,
        Algorithm::QmSvrgF,
        Algorithm::QmSvrgA,
        Algorithm::QmSvrgFPlus,
        Algorithm::QmSvrgAPlus,
    ];

    const ALL_NAMES: [&'static str; 12] = [
        "gd",
        "sgd",
        "sag",
        "q-gd",
        "q-sgd",
        "q-sag",
        "svrg",
        "m-svrg",
        "qm-svrg-f",
        "qm-svrg-a",
        "qm-svrg-f+",
        "qm-svrg-a+",
    ];

    pub fn name(self) -> &'static str {
        Self::ALL_NAMES[Self::ALL.iter().position(|&a| a == self).unwrap()]
    }

    /// True when exchanged vectors pass through a quantizer.
    pub fn is_quantized(self) -> bool {
        matches!(
            self,
            Algorithm::QGd
                | Algorithm::QSgd
                | Algorithm::QSag
                | Algorithm::QmSvrgF
                | Algorithm::QmSvrgA
                | Algorithm::QmSvrgFPlus
                | Algorithm::QmSvrgAPlus
        )
    }

    /// True for the epoch-structured family (outer reference point + inner
    /// loop); false for the single-step baselines.
    pub fn is_svrg_family(self) -> bool {
        matches!(
            self,
            Algorithm::Svrg
                | Algorithm::MSvrg
                | Algorithm::QmSvrgF
                | Algorithm::QmSvrgA
                | Algorithm::QmSvrgFPlus
                | Algorithm::QmSvrgAPlus
        )
    }

    /// True when the reference point carries the rejection memory.
    pub fn has_memory(self) -> bool {
        matches!(
            self,
            Algorithm::MSvrg
                | Algorithm::QmSvrgF
                | Algorithm::QmSvrgA
                | Algorithm::QmSvrgFPlus
                | Algorithm::QmSvrgAPlus
        )
    }

    /// True when grids track the current reference point and gradient norm.
    pub fn is_adaptive(self) -> bool {
        matches!(self, Algorithm::QmSvrgA | Algorithm::QmSvrgAPlus)
    }

    /// True when the inner-loop stochastic gradient is also quantized.
    pub fn is_plus(self) -> bool {
        matches!(self, Algorithm::QmSvrgFPlus | Algorithm::QmSvrgAPlus)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = UnknownAlgorithm;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let needle = s.trim().to_ascii_lowercase();
        Self::ALL_NAMES
            .iter()
            .position(|&n| n == needle)
            .map(|i| Self::ALL[i])
            .ok_or_else(|| UnknownAlgorithm(s.to_string()))
    }
}

/// Step-size sequence (one value per outer iteration). A shorter explicit
/// sequence extends its last entry over the remaining iterations.
#[derive(Debug, Clone, PartialEq)]
pub enum StepSizes {
    Constant(f64),
    PerEpoch(Vec<f64>),
}

impl StepSizes {
    /// Step size for 0-based outer iteration `k`.
    pub fn at(&self, k: usize) -> f64 {
        match self {
            StepSizes::Constant(a) => *a,
            StepSizes::PerEpoch(seq) => seq[k.min(seq.len() - 1)],
        }
    }
}

/// Static lattices for the fixed-grid algorithms.
#[derive(Debug, Clone, PartialEq)]
pub enum FixedGrids {
    /// Freeze the adaptive sizing rule at the initial point: the parameter
    /// grid is centered there with radius 2*||g(w0)||/mu, and each worker's
    /// gradient grid is centered at that worker's initial gradient with the
    /// shared radius 2*L*||g(w0)||/mu. Costs no communication — the initial
    /// gradients are transmitted in the first reference batch anyway.
    FromInitialPoint,
    /// One explicit center/radius pair used verbatim for the parameter grid
    /// and every gradient grid.
    Shared { center: Vec<f64>, radius: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub algorithm: Algorithm,
    pub step_sizes: StepSizes,
    /// inner steps per epoch (T); ignored by the single-step baselines
    pub epoch_length: usize,
    /// outer iterations: epochs for the variance-reduced family, plain steps
    /// for the baselines
    pub epochs: usize,
    /// whole-vector payload width of a broadcast parameter (b_w)
    pub bits_param: u64,
    /// whole-vector payload width of one uploaded gradient (b_g)
    pub bits_grad: u64,
    pub fixed_grids: FixedGrids,
    /// starting point; zero vector when absent
    pub initial_point: Option<Vec<f64>>,
    pub seed: u64,
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigViolation {
    #[error("step-size sequence is empty")]
    NoStepSizes,
    #[error("step size #{index} must be a positive finite number, got {value}")]
    BadStepSize { index: usize, value: f64 },
    #[error("epoch length must be at least 1 for {algorithm}")]
    ZeroEpochLength { algorithm: Algorithm },
    #[error("number of outer iterations must be at least 1")]
    ZeroIterations,
    #[error("{which} width {bits} is not a positive multiple of the dimension {d}")]
    BitsNotMultiple { which: &'static str, bits: u64, d: usize },
    #[error("{which} width {bits} allocates {per_coord} bits per coordinate, outside 1..={max}")]
    BitsPerCoordOutOfRange { which: &'static str, bits: u64, per_coord: u64, max: u32 },
    #[error("initial point has {got} coordinates, objective has {expected}")]
    InitialPointDim { got: usize, expected: usize },
    #[error("initial point coordinate {index} is not finite")]
    InitialPointNotFinite { index: usize },
    #[error("fixed grid center has {got} coordinates, objective has {expected}")]
    FixedGridDim { got: usize, expected: usize },
    #[error("fixed grid center coordinate {index} is not finite")]
    FixedGridCenterNotFinite { index: usize },
    #[error("fixed grid radius must be a positive finite number, got {radius}")]
    FixedGridRadius { radius: f64 },
    #[error("{algorithm} sizes its lattices from the strong-convexity modulus, but the objective reports {mu}")]
    NeedsStrongConvexity { algorithm: Algorithm, mu: f64 },
}

impl OptimizerConfig {
    /// Check the whole configuration against an objective and return every
    /// violation found (not just the first), so callers can report them all.
    pub fn validate(&self, obj: &dyn FiniteSum) -> Vec<ConfigViolation> {
        let mut out = Vec::new();
        let d = obj.dim();
        match &self.step_sizes {
            StepSizes::Constant(a) => {
                if !(a.is_finite() && *a > 0.0) {
                    out.push(ConfigViolation::BadStepSize { index: 0, value: *a });
                }
            }
            StepSizes::PerEpoch(seq) => {
                if seq.is_empty() {
                    out.push(ConfigViolation::NoStepSizes);
                }
                for (index, &value) in seq.iter().enumerate() {
                    if !(value.is_finite() && value > 0.0) {
                        out.push(ConfigViolation::BadStepSize { index, value });
                    }
                }
            }
        }
        if self.epochs == 0 {
            out.push(ConfigViolation::ZeroIterations);
        }
        if self.algorithm.is_svrg_family() && self.epoch_length == 0 {
            out.push(ConfigViolation::ZeroEpochLength { algorithm: self.algorithm });
        }
        if self.algorithm.is_quantized() {
            for (which, bits) in
                [("parameter grid", self.bits_param), ("gradient grid", self.bits_grad)]
            {
                if bits == 0 || bits % d as u64 != 0 {
                    out.push(ConfigViolation::BitsNotMultiple { which, bits, d });
                } else {
                    let per_coord = bits / d as u64;
                    if per_coord > MAX_BITS_PER_COORD as u64 {
                        out.push(ConfigViolation::BitsPerCoordOutOfRange {
                            which,
                            bits,
                            per_coord,
                            max: MAX_BITS_PER_COORD,
                        });
                    }
                }
            }
            let derives_radii_from_mu = self.algorithm.is_adaptive()
                || matches!(self.fixed_grids, FixedGrids::FromInitialPoint);
            if derives_radii_from_mu && obj.strong_convexity() <= 0.0 {
                out.push(ConfigViolation::NeedsStrongConvexity {
                    algorithm: self.algorithm,
                    mu: obj.strong_convexity(),
                });
            }
            if !self.algorithm.is_adaptive() {
                if let FixedGrids::Shared { center, radius } = &self.fixed_grids {
                    if center.len() != d {
                        out.push(ConfigViolation::FixedGridDim { got: center.len(), expected: d });
                    }
                    for (index, v) in center.iter().enumerate() {
                        if !v.is_finite() {
                            out.push(ConfigViolation::FixedGridCenterNotFinite { index });
                        }
                    }
                    if !(radius.is_finite() && *radius > 0.0) {
                        out.push(ConfigViolation::FixedGridRadius { radius: *radius });
                    }
                }
            }
        }
        if let Some(w0) = &self.initial_point {
            if w0.len() != d {
                out.push(ConfigViolation::InitialPointDim { got: w0.len(), expected: d });
            }
            for (index, v) in w0.iter().enumerate() {
                if !v.is_finite() {
                    out.push(ConfigViolation::InitialPointNotFinite { index });
                }
            }
        }
        out
    }
}

/// Everything a finished (or aborted) run leaves behind.
#[derive(Debug)]
pub struct RunOutput {
    pub trace: Trace,
    pub meter: BitMeter,
    pub final_point: Vec<f64>,
    /// per-epoch empirical mean squared quantization error of the uploaded
    /// reference gradients; zeros for unquantized runs
    pub ref_grad_quant_err: Vec<f64>,
    /// per-epoch summed squared quantization error of the broadcast iterates
    pub iterate_quant_err_sum: Vec<f64>,
    /// coordinates clamped while quantizing parameter broadcasts
    pub param_clamps: u64,
    /// coordinates clamped while quantizing gradient uploads
    pub grad_clamps: u64,
    /// how many lattice radii had to be raised to the minimum width
    pub radius_floor_events: u64,
    /// rejected outer iterations (memory variants only)
    pub rejections: u64,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{} configuration violation(s)", .0.len())]
    Invalid(Vec<ConfigViolation>),
    #[error("diverged at outer iteration {epoch} (inner step {inner_step:?}); partial trace retained")]
    Diverged { epoch: usize, inner_step: Option<usize>, partial: Box<RunOutput> },
}

/// Adaptive lattice radii before flooring: parameter radius 2*||g||/mu and
/// gradient radius 2*L*||g||/mu — both linear in the reference-gradient norm.
pub fn adaptive_radii(mu: f64, lipschitz: f64, ref_grad_norm: f64) -> (f64, f64) {
    let r_w = 2.0 * ref_grad_norm / mu;
    (r_w, lipschitz * r_w)
}

/// Keep lattice radii strictly positive near convergence: returns the floored
/// radius and whether flooring occurred.
pub fn apply_radius_floor(radius: f64) -> (f64, bool) {
    if radius < MIN_RADIUS {
        (MIN_RADIUS, true)
    } else {
        (radius, false)
    }
}

/// The variance-reduced step direction g_xi(w) - g_xi(w_ref) + g_ref. Its
/// average over all xi equals the full gradient at w exactly, because the
/// g_xi(w_ref) terms average to g_ref.
pub fn variance_reduced_direction(
    g_inner: &[f64],
    g_ref_xi: &[f64],
    g_ref: &[f64],
    out: &mut [f64],
) {
    for j in 0..out.len() {
        out[j] = g_inner[j] - g_ref_xi[j] + g_ref[j];
    }
}

/// Salt separating the quantization stream from the index stream.
const QUANT_STREAM_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

fn draw_index(rng: &mut ChaCha8Rng, n: usize) -> usize {
    rand::Rng::gen_range(rng, 0..n)
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mutable run-long tallies: the trace, the meter, and every counter that
/// ends up in [`RunOutput`]. Kept together so an abort can package a partial
/// result in one move.
struct RunAccum {
    trace: Trace,
    meter: BitMeter,
    up_vec: u64,
    down_vec: u64,
    param_clamps: u64,
    grad_clamps: u64,
    floor_events: u64,
    rejections: u64,
    ref_err: Vec<f64>,
    iter_err: Vec<f64>,
}

impl RunAccum {
    fn new() -> Self {
        Self {
            trace: Trace::new(),
            meter: BitMeter::new(),
            up_vec: 0,
            down_vec: 0,
            param_clamps: 0,
            grad_clamps: 0,
            floor_events: 0,
            rejections: 0,
            ref_err: Vec::new(),
            iter_err: Vec::new(),
        }
    }

    fn up_full(&mut self, epoch: usize, d: usize) {
        let bits = FULL_PRECISION_BITS * d as u64;
        self.meter.record(epoch, Direction::Uplink, MessageKind::FullPrecisionVector, bits);
        self.up_vec += bits;
    }

    fn up_full_many(&mut self, epoch: usize, d: usize, count: u64) {
        let bits = FULL_PRECISION_BITS * d as u64;
        self.meter.record_many(epoch, Direction::Uplink, MessageKind::FullPrecisionVector, bits, count);
        self.up_vec += bits * count;
    }

    fn up_quant(&mut self, epoch: usize, bits: u64) {
        self.meter.record(epoch, Direction::Uplink, MessageKind::QuantizedVector, bits);
        self.up_vec += bits;
    }

    fn up_quant_many(&mut self, epoch: usize, bits: u64, count: u64) {
        self.meter.record_many(epoch, Direction::Uplink, MessageKind::QuantizedVector, bits, count);
        self.up_vec += bits * count;
    }

    fn down_full(&mut self, epoch: usize, d: usize) {
        let bits = FULL_PRECISION_BITS * d as u64;
        self.meter.record(epoch, Direction::Downlink, MessageKind::FullPrecisionVector, bits);
        self.down_vec += bits;
    }

    fn down_quant(&mut self, epoch: usize, bits: u64) {
        self.meter.record(epoch, Direction::Downlink, MessageKind::QuantizedVector, bits);
        self.down_vec += bits;
    }

    /// One 64-bit scalar telling workers the epoch's reference-gradient norm
    /// (adaptive grids only). Deliberately outside the vector-payload totals.
    fn announce(&mut self, epoch: usize) {
        self.meter.record(epoch, Direction::Downlink, MessageKind::GridAnnouncement, 64);
    }

    fn push_row(&mut self, k: usize, loss: f64, grad_norm: f64, rejected: bool, f_star: Option<f64>) {
        self.trace.push(TraceRecord {
            k,
            loss,
            grad_norm,
            delta: f_star.map_or(f64::NAN, |fs| loss - fs),
            bits_up: self.up_vec,
            bits_down: self.down_vec,
            rejected,
            clamps: self.param_clamps + self.grad_clamps,
        });
    }

    fn finish(self, final_point: Vec<f64>) -> RunOutput {
        RunOutput {
            trace: self.trace,
            meter: self.meter,
            final_point,
            ref_grad_quant_err: self.ref_err,
            iterate_quant_err_sum: self.iter_err,
            param_clamps: self.param_clamps,
            grad_clamps: self.grad_clamps,
            radius_floor_events: self.floor_events,
            rejections: self.rejections,
        }
    }

    fn diverge(self, epoch: usize, inner_step: Option<usize>, last_point: Vec<f64>) -> RunError {
        RunError::Diverged { epoch, inner_step, partial: Box::new(self.finish(last_point)) }
    }
}

/// The last quantized reference gradient a worker transmitted, plus the
/// spacing of the lattice it was rounded on. Next epoch's grid for that
/// worker is centered here, its radius widened by that spacing.
struct CachedCenter {
    values: Vec<f64>,
    spacing: f64,
}

/// Where each worker's gradient lattice comes from.
enum GradGrids {
    /// unquantized run — never consulted
    None,
    /// fixed per-worker lattices built once at run start
    PerWorker(Vec<GridSpec>),
    /// one explicit lattice shared by every worker
    Shared(GridSpec),
    /// lattices re-centered per epoch on cached transmissions; built lazily
    /// per sampled worker (never-transmitted workers recompute their initial
    /// gradient from the stored starting point instead of caching all N)
    Adaptive {
        cache: HashMap<usize, CachedCenter>,
        epoch_grids: HashMap<usize, GridSpec>,
        w0: Vec<f64>,
        base_radius: f64,
        bits_per_coord: u32,
    },
}

impl GradGrids {
    /// The lattice worker `xi` uses this epoch. Adaptive grids are pinned at
    /// first touch, so repeated samples of one worker within an epoch share
    /// one grid even though transmissions keep updating the cache.
    fn for_worker(
        &mut self,
        xi: usize,
        obj: &dyn FiniteSum,
        floor_events: &mut u64,
    ) -> Result<&GridSpec, GridError> {
        match self {
            GradGrids::None => unreachable!("unquantized runs never build gradient grids"),
            GradGrids::PerWorker(grids) => Ok(&grids[xi]),
            GradGrids::Shared(grid) => Ok(grid),
            GradGrids::Adaptive { cache, epoch_grids, w0, base_radius, bits_per_coord } => {
                if let Entry::Vacant(slot) = epoch_grids.entry(xi) {
                    let (center, inflation) = match cache.get(&xi) {
                        Some(c) => (c.values.clone(), c.spacing),
                        None => {
                            let mut g0 = vec![0.0; w0.len()];
                            obj.term_grad(xi, w0, &mut g0);
                            (g0, 0.0)
                        }
                    };
                    let (radius, floored) = apply_radius_floor(*base_radius + inflation);
                    if floored {
                        *floor_events += 1;
                    }
                    slot.insert(GridSpec::uniform(center, radius, *bits_per_coord)?);
                }
                Ok(&epoch_grids[&xi])
            }
        }
    }

    /// Record a transmitted quantized reference gradient (takes effect when
    /// the next epoch rebuilds grids).
    fn record_transmission(&mut self, xi: usize, values: Vec<f64>, spacing: f64) {
        if let GradGrids::Adaptive { cache, .. } = self {
            cache.insert(xi, CachedCenter { values, spacing });
        }
    }

    /// Start a new epoch at the given gradient-grid radius.
    fn begin_epoch(&mut self, radius: f64) {
        if let GradGrids::Adaptive { epoch_grids, base_radius, .. } = self {
            epoch_grids.clear();
            *base_radius = radius;
        }
    }
}

fn initial_point(cfg: &OptimizerConfig, d: usize) -> Vec<f64> {
    cfg.initial_point.clone().unwrap_or_else(|| vec![0.0; d])
}

/// Build the static lattices for a fixed-grid algorithm. Uncharged: explicit
/// grids are pure configuration, and the initial-point variant reuses
/// gradients that the first reference batch transmits anyway.
fn build_fixed_grids(
    cfg: &OptimizerConfig,
    obj: &dyn FiniteSum,
    w0: &[f64],
    floor_events: &mut u64,
) -> Result<(GridSpec, GradGrids), GridError> {
    let d = obj.dim();
    let n = obj.n_terms();
    let bw_per = (cfg.bits_param / d as u64) as u32;
    let bg_per = (cfg.bits_grad / d as u64) as u32;
    match &cfg.fixed_grids {
        FixedGrids::Shared { center, radius } => {
            let param = GridSpec::uniform(center.clone(), *radius, bw_per)?;
            let grad = GridSpec::uniform(center.clone(), *radius, bg_per)?;
            Ok((param, GradGrids::Shared(grad)))
        }
        FixedGrids::FromInitialPoint => {
            let mut g0 = vec![0.0; d];
            obj.full_grad(w0, &mut g0);
            let (r_w, r_g) = adaptive_radii(obj.strong_convexity(), obj.lipschitz(), norm2(&g0));
            let (r_w, fw) = apply_radius_floor(r_w);
            let (r_g, fg) = apply_radius_floor(r_g);
            *floor_events += u64::from(fw) + u64::from(fg);
            let param = GridSpec::uniform(w0.to_vec(), r_w, bw_per)?;
            let mut grids = Vec::with_capacity(n);
            let mut gi = vec![0.0; d];
            for i in 0..n {
                obj.term_grad(i, w0, &mut gi);
                grids.push(GridSpec::uniform(gi.clone(), r_g, bg_per)?);
            }
            Ok((param, GradGrids::PerWorker(grids)))
        }
    }
}

/// Execute one full run. `f_star` (the reference optimum, when known) turns
/// the trace's suboptimality column on; without it the column is NaN.
///
/// A run is a pure function of (objective, config): identical inputs give
/// bit-identical traces and meters.
pub fn run(
    obj: &dyn FiniteSum,
    cfg: &OptimizerConfig,
    f_star: Option<f64>,
) -> Result<RunOutput, RunError> {
    let violations = cfg.validate(obj);
    if !violations.is_empty() {
        return Err(RunError::Invalid(violations));
    }
    if cfg.algorithm.is_svrg_family() {
        run_epoch_family(obj, cfg, f_star)
    } else {
        run_baseline(obj, cfg, f_star)
    }
}

fn run_epoch_family(
    obj: &dyn FiniteSum,
    cfg: &OptimizerConfig,
    f_star: Option<f64>,
) -> Result<RunOutput, RunError> {
    let d = obj.dim();
    let n = obj.n_terms();
    let t_len = cfg.epoch_length;
    let algo = cfg.algorithm;
    let mut index_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut quant_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ QUANT_STREAM_SALT);
    let mut acc = RunAccum::new();

    let w0 = initial_point(cfg, d);
    let mut w_ref = w0.clone();
    let mut g_ref = vec![0.0; d];
    obj.full_grad(&w_ref, &mut g_ref);
    let mut ref_norm = norm2(&g_ref);
    acc.push_row(0, obj.value(&w_ref), ref_norm, false, f_star);
    if !ref_norm.is_finite() {
        return Err(acc.diverge(0, None, w_ref));
    }

    let bw_per = if algo.is_quantized() { (cfg.bits_param / d as u64) as u32 } else { 0 };
    let bg_per = if algo.is_quantized() { (cfg.bits_grad / d as u64) as u32 } else { 0 };
    let mut param_grid: Option<GridSpec> = None;
    let mut grad_grids = GradGrids::None;
    if algo.is_quantized() {
        if algo.is_adaptive() {
            grad_grids = GradGrids::Adaptive {
                cache: HashMap::new(),
                epoch_grids: HashMap::new(),
                w0: w0.clone(),
                base_radius: 0.0,
                bits_per_coord: bg_per,
            };
        } else {
            match build_fixed_grids(cfg, obj, &w0, &mut acc.floor_events) {
                Ok((pg, gg)) => {
                    param_grid = Some(pg);
                    grad_grids = gg;
                }
                Err(_) => return Err(acc.diverge(0, None, w_ref)),
            }
        }
    }

    let mut g_inner = vec![0.0; d];
    let mut g_refxi = vec![0.0; d];
    let mut u = vec![0.0; d];

    for k in 1..=cfg.epochs {
        // an exactly-zero reference gradient leaves adaptive lattices
        // undefined — and means the run already sits at the optimum
        if algo.is_adaptive() && ref_norm == 0.0 {
            break;
        }
        let alpha = cfg.step_sizes.at(k - 1);
        // the reference batch transmitted at this epoch's boundary
        acc.up_full_many(k, d, n as u64);

        if algo.is_adaptive() {
            acc.announce(k);
            let (r_w, r_g) = adaptive_radii(obj.strong_convexity(), obj.lipschitz(), ref_norm);
            let (r_w, floored) = apply_radius_floor(r_w);
            if floored {
                acc.floor_events += 1;
            }
            match GridSpec::uniform(w_ref.clone(), r_w, bw_per) {
                Ok(g) => param_grid = Some(g),
                Err(_) => return Err(acc.diverge(k, None, w_ref)),
            }
            grad_grids.begin_epoch(r_g);
        }

        let mut iterates: Vec<Vec<f64>> = Vec::with_capacity(t_len);
        iterates.push(w_ref.clone());
        let mut w_cur = w_ref.clone();
        let mut ref_err_sum = 0.0;
        let mut iter_err_sum = 0.0;

        for t in 1..=t_len {
            let xi = draw_index(&mut index_rng, n);
            obj.term_grad(xi, &w_cur, &mut g_inner);
            obj.term_grad(xi, &w_ref, &mut g_refxi);

            // uplink 1: the stochastic gradient at the current iterate
            let gi_hat = if algo.is_plus() {
                let quantized = {
                    let grid = match grad_grids.for_worker(xi, obj, &mut acc.floor_events) {
                        Ok(g) => g,
                        Err(_) => return Err(acc.diverge(k, Some(t), w_cur)),
                    };
                    match grid.quantize(&g_inner, &mut quant_rng) {
                        Ok(q) => {
                            acc.grad_clamps += q.clamped as u64;
                            grid.dequantize(&q.qv)
                        }
                        Err(_) => return Err(acc.diverge(k, Some(t), w_cur)),
                    }
                };
                acc.up_quant(k, cfg.bits_grad);
                quantized
            } else {
                acc.up_full(k, d);
                g_inner.clone()
            };

            // uplink 2: the reference gradient, quantized unless this is an
            // unquantized run
            let gr_hat = if algo.is_quantized() {
                let (deq, spacing) = {
                    let grid = match grad_grids.for_worker(xi, obj, &mut acc.floor_events) {
                        Ok(g) => g,
                        Err(_) => return Err(acc.diverge(k, Some(t), w_cur)),
                    };
                    match grid.quantize(&g_refxi, &mut quant_rng) {
                        Ok(q) => {
                            acc.grad_clamps += q.clamped as u64;
                            (grid.dequantize(&q.qv), grid.spacing(0))
                        }
                        Err(_) => return Err(acc.diverge(k, Some(t), w_cur)),
                    }
                };
                acc.up_quant(k, cfg.bits_grad);
                ref_err_sum += sq_dist(&deq, &g_refxi);
                grad_grids.record_transmission(xi, deq.clone(), spacing);
                deq
            } else {
                acc.up_full(k, d);
                g_refxi.clone()
            };

            // master update
            variance_reduced_direction(&gi_hat, &gr_hat, &g_ref, &mut u);
            for j in 0..d {
                u[j] = w_cur[j] - alpha * u[j];
            }
            if !all_finite(&u) {
                return Err(acc.diverge(k, Some(t), w_cur));
            }

            // downlink: broadcast the new iterate
            let w_next = match &param_grid {
                Some(grid) => match grid.quantize(&u, &mut quant_rng) {
                    Ok(q) => {
                        acc.param_clamps += q.clamped as u64;
                        let deq = grid.dequantize(&q.qv);
                        acc.down_quant(k, cfg.bits_param);
                        iter_err_sum += sq_dist(&deq, &u);
                        deq
                    }
                    Err(_) => return Err(acc.diverge(k, Some(t), w_cur)),
                },
                None => {
                    acc.down_full(k, d);
                    u.clone()
                }
            };
            w_cur = w_next;
            if t < t_len {
                iterates.push(w_cur.clone());
            }
        }
        acc.ref_err.push(ref_err_sum / t_len as f64);
        acc.iter_err.push(iter_err_sum);

        // pick the next reference point among this epoch's first T iterates
        // (the reference itself included, the last iterate excluded)
        let zeta = draw_index(&mut index_rng, t_len);
        let candidate = iterates.swap_remove(zeta);
        let mut g_cand = vec![0.0; d];
        obj.full_grad(&candidate, &mut g_cand);
        let cand_norm = norm2(&g_cand);
        if !cand_norm.is_finite() {
            return Err(acc.diverge(k, None, candidate));
        }

        // memory variants keep the old reference when the candidate's mean
        // gradient norm is strictly worse
        let rejected = algo.has_memory() && cand_norm > ref_norm;
        if rejected {
            acc.rejections += 1;
        } else {
            w_ref = candidate;
            g_ref = g_cand;
            ref_norm = cand_norm;
        }
        acc.push_row(k, obj.value(&w_ref), ref_norm, rejected, f_star);
    }
    Ok(acc.finish(w_ref))
}

fn run_baseline(
    obj: &dyn FiniteSum,
    cfg: &OptimizerConfig,
    f_star: Option<f64>,
) -> Result<RunOutput, RunError> {
    let d = obj.dim();
    let n = obj.n_terms();
    let algo = cfg.algorithm;
    let mut index_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut quant_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ QUANT_STREAM_SALT);
    let mut acc = RunAccum::new();

    let mut w = initial_point(cfg, d);
    let mut g_buf = vec![0.0; d];
    obj.full_grad(&w, &mut g_buf);
    acc.push_row(0, obj.value(&w), norm2(&g_buf), false, f_star);
    if !all_finite(&g_buf) {
        return Err(acc.diverge(0, None, w));
    }

    let mut param_grid: Option<GridSpec> = None;
    let mut grad_grids = GradGrids::None;
    if algo.is_quantized() {
        match build_fixed_grids(cfg, obj, &w, &mut acc.floor_events) {
            Ok((pg, gg)) => {
                param_grid = Some(pg);
                grad_grids = gg;
            }
            Err(_) => return Err(acc.diverge(0, None, w)),
        }
    }

    // running-average memory: one stored gradient per worker plus their sum
    let uses_table = matches!(algo, Algorithm::Sag | Algorithm::QSag);
    let mut table = vec![0.0; if uses_table { n * d } else { 0 }];
    let mut table_sum = vec![0.0; if uses_table { d } else { 0 }];

    let mut g_accum = vec![0.0; d];
    let mut u = vec![0.0; d];

    for k in 1..=cfg.epochs {
        let alpha = cfg.step_sizes.at(k - 1);

        // uplink phase: fill `u` with the step direction
        match algo {
            Algorithm::Gd => {
                obj.full_grad(&w, &mut u);
                acc.up_full_many(k, d, n as u64);
            }
            Algorithm::QGd => {
                g_accum.fill(0.0);
                for i in 0..n {
                    obj.term_grad(i, &w, &mut g_buf);
                    let grid = match grad_grids.for_worker(i, obj, &mut acc.floor_events) {
                        Ok(g) => g,
                        Err(_) => return Err(acc.diverge(k, None, w)),
                    };
                    match grid.quantize(&g_buf, &mut quant_rng) {
                        Ok(q) => {
                            acc.grad_clamps += q.clamped as u64;
                            for (a, v) in g_accum.iter_mut().zip(grid.dequantize(&q.qv)) {
                                *a += v;
                            }
                        }
                        Err(_) => return Err(acc.diverge(k, None, w)),
                    }
                }
                acc.up_quant_many(k, cfg.bits_grad, n as u64);
                for (uj, aj) in u.iter_mut().zip(&g_accum) {
                    *uj = *aj / n as f64;
                }
            }
            Algorithm::Sgd | Algorithm::QSgd => {
                let xi = draw_index(&mut index_rng, n);
                obj.term_grad(xi, &w, &mut g_buf);
                if algo == Algorithm::QSgd {
                    let grid = match grad_grids.for_worker(xi, obj, &mut acc.floor_events) {
                        Ok(g) => g,
                        Err(_) => return Err(acc.diverge(k, None, w)),
                    };
                    match grid.quantize(&g_buf, &mut quant_rng) {
                        Ok(q) => {
                            acc.grad_clamps += q.clamped as u64;
                            u.copy_from_slice(&grid.dequantize(&q.qv));
                        }
                        Err(_) => return Err(acc.diverge(k, None, w)),
                    }
                    acc.up_quant(k, cfg.bits_grad);
                } else {
                    u.copy_from_slice(&g_buf);
                    acc.up_full(k, d);
                }
            }
            Algorithm::Sag | Algorithm::QSag => {
                let xi = draw_index(&mut index_rng, n);
                obj.term_grad(xi, &w, &mut g_buf);
                let fresh: Vec<f64> = if algo == Algorithm::QSag {
                    let grid = match grad_grids.for_worker(xi, obj, &mut acc.floor_events) {
                        Ok(g) => g,
                        Err(_) => return Err(acc.diverge(k, None, w)),
                    };
                    match grid.quantize(&g_buf, &mut quant_rng) {
                        Ok(q) => {
                            acc.grad_clamps += q.clamped as u64;
                            acc.up_quant(k, cfg.bits_grad);
                            grid.dequantize(&q.qv)
                        }
                        Err(_) => return Err(acc.diverge(k, None, w)),
                    }
                } else {
                    acc.up_full(k, d);
                    g_buf.clone()
                };
                // refresh the sampled worker's slot, then step along the
                // table average
                let slot = &mut table[xi * d..(xi + 1) * d];
                for j in 0..d {
                    table_sum[j] += fresh[j] - slot[j];
                }
                slot.copy_from_slice(&fresh);
                for j in 0..d {
                    u[j] = table_sum[j] / n as f64;
                }
            }
            _ => unreachable!("epoch-family algorithms use run_epoch_family"),
        }

        // the step itself: u currently holds the direction
        for j in 0..d {
            u[j] = w[j] - alpha * u[j];
        }
        if !all_finite(&u) {
            return Err(acc.diverge(k, None, w));
        }

        // downlink phase
        w = match &param_grid {
            Some(grid) => match grid.quantize(&u, &mut quant_rng) {
                Ok(q) => {
                    acc.param_clamps += q.clamped as u64;
                    acc.down_quant(k, cfg.bits_param);
                    grid.dequantize(&q.qv)
                }
                Err(_) => return Err(acc.diverge(k, None, w)),
            },
            None => {
                acc.down_full(k, d);
                u.clone()
            }
        };

        obj.full_grad(&w, &mut g_buf);
        acc.push_row(k, obj.value(&w), norm2(&g_buf), false, f_star);
    }
    Ok(acc.finish(w))
}
