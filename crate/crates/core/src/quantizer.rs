//! Uniform per-coordinate quantization lattices with unbiased two-point
//! stochastic rounding.
//!
//! A grid is an axis-aligned box: coordinate `i` spans
//! `[center[i] - radius[i], center[i] + radius[i]]` and carries `2^bits[i]`
//! evenly spaced points, so the spacing is `2*radius[i] / (2^bits[i] - 1)`.
//! Quantizing snaps each coordinate to one of the two enclosing lattice
//! points at random, choosing the upper point with probability equal to the
//! fractional position between them. That makes the rounded value an
//! unbiased estimate of the input (after clamping to the box) and bounds the
//! error by one spacing per coordinate.
//!
//! Encoding a quantized vector spends exactly `sum(bits[i])` bits — indices
//! are packed MSB-first in coordinate order with no per-coordinate padding.

use rand::Rng;
use thiserror::Error;

/// Smallest radius an adaptive caller should pass; grids themselves only
/// require strict positivity. Exposed so callers floor consistently.
pub const MIN_RADIUS: f64 = 1e-12;

/// Largest per-coordinate width. Keeps `2^bits - 1` exactly representable
/// and indices inside `u32`.
pub const MAX_BITS_PER_COORD: u32 = 32;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("grid arrays disagree on dimension: center {center}, radius {radius}, bits {bits}")]
    DimensionMismatch { center: usize, radius: usize, bits: usize },
    #[error("grid dimension must be at least 1")]
    Empty,
    #[error("coordinate {coord}: center must be finite, got {value}")]
    NonFiniteCenter { coord: usize, value: f64 },
    #[error("coordinate {coord}: radius must be finite and > 0, got {value}")]
    BadRadius { coord: usize, value: f64 },
    #[error("coordinate {coord}: bit width must be in 1..={max}, got {bits}", max = MAX_BITS_PER_COORD)]
    BadBits { coord: usize, bits: u32 },
    #[error("coordinate {coord}: vertex index {index} out of range (grid has {points} points)")]
    IndexOutOfRange { coord: usize, index: u32, points: u64 },
    #[error("vertex index count {got} does not match grid dimension {dim}")]
    IndexCountMismatch { got: usize, dim: usize },
}

#[derive(Debug, Error, PartialEq)]
pub enum QuantizeError {
    #[error("coordinate {coord}: input must be finite, got {value}")]
    NonFiniteInput { coord: usize, value: f64 },
    #[error("input length {got} does not match grid dimension {dim}")]
    DimensionMismatch { got: usize, dim: usize },
}

#[derive(Debug, Error, PartialEq)]
pub enum DecodeError {
    #[error("bitstream length {got} bits does not match grid payload of {expected} bits")]
    LengthMismatch { expected: u64, got: u64 },
}

/// An axis-aligned lattice. Immutable once built; all derived quantities
/// (spacing, point counts, payload width) are fixed at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    center: Vec<f64>,
    radius: Vec<f64>,
    bits: Vec<u32>,
    spacing: Vec<f64>,
}

/// Lattice point held as per-coordinate indices into its grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedVector {
    pub indices: Vec<u32>,
}

/// Result of one quantization: the lattice point plus how many coordinates
/// had to be pulled back inside the box before rounding.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantized {
    pub qv: QuantizedVector,
    pub clamped: usize,
}

/// Exact-width bit container. Packing is MSB-first within each pushed value;
/// the final byte is zero-padded but the bit length is kept exactly.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BitString {
    bytes: Vec<u8>,
    len: u64,
}

impl BitString {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len_bits(&self) -> u64 {
        self.len
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    /// Append the low `width` bits of `value`, most significant first.
    pub fn push_bits(&mut self, value: u32, width: u32) {
        debug_assert!((1..=32).contains(&width));
        debug_assert!(width == 32 || value < (1u32 << width));
        for k in (0..width).rev() {
            let bit = ((value >> k) & 1) as u8;
            let byte_idx = (self.len / 8) as usize;
            if byte_idx == self.bytes.len() {
                self.bytes.push(0);
            }
            let bit_pos = 7 - (self.len % 8) as u8;
            self.bytes[byte_idx] |= bit << bit_pos;
            self.len += 1;
        }
    }

    /// Read `width` bits starting at bit `offset`, MSB-first.
    fn get_bits(&self, offset: u64, width: u32) -> u32 {
        let mut out = 0u32;
        for k in 0..width as u64 {
            let pos = offset + k;
            let byte = self.bytes[(pos / 8) as usize];
            let bit = (byte >> (7 - (pos % 8))) & 1;
            out = (out << 1) | bit as u32;
        }
        out
    }
}

impl GridSpec {
    /// Build a grid from per-coordinate center, radius and bit width.
    pub fn new(center: Vec<f64>, radius: Vec<f64>, bits: Vec<u32>) -> Result<Self, GridError> {
        if center.len() != radius.len() || center.len() != bits.len() {
            return Err(GridError::DimensionMismatch {
                center: center.len(),
                radius: radius.len(),
                bits: bits.len(),
            });
        }
        if center.is_empty() {
            return Err(GridError::Empty);
        }
        for (i, &c) in center.iter().enumerate() {
            if !c.is_finite() {
                return Err(GridError::NonFiniteCenter { coord: i, value: c });
            }
        }
        for (i, &r) in radius.iter().enumerate() {
            if !r.is_finite() || r <= 0.0 {
                return Err(GridError::BadRadius { coord: i, value: r });
            }
        }
        for (i, &b) in bits.iter().enumerate() {
            if b == 0 || b > MAX_BITS_PER_COORD {
                return Err(GridError::BadBits { coord: i, bits: b });
            }
        }
        let spacing = radius
            .iter()
            .zip(&bits)
            .map(|(&r, &b)| 2.0 * r / (points_for(b) - 1.0))
            .collect();
        Ok(Self { center, radius, bits, spacing })
    }

    /// Build a grid with one shared radius and bit width for every coordinate.
    pub fn uniform(center: Vec<f64>, radius: f64, bits_per_coord: u32) -> Result<Self, GridError> {
        let d = center.len();
        Self::new(center, vec![radius; d], vec![bits_per_coord; d])
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn radius(&self) -> &[f64] {
        &self.radius
    }

    pub fn bits(&self) -> &[u32] {
        &self.bits
    }

    /// Distance between adjacent lattice points along coordinate `i`.
    pub fn spacing(&self, i: usize) -> f64 {
        self.spacing[i]
    }

    /// Number of lattice points along coordinate `i` (2^bits).
    pub fn points(&self, i: usize) -> u64 {
        1u64 << self.bits[i]
    }

    /// Lower edge of the box along coordinate `i`.
    pub fn lo(&self, i: usize) -> f64 {
        self.center[i] - self.radius[i]
    }

    /// Upper edge of the box along coordinate `i`.
    pub fn hi(&self, i: usize) -> f64 {
        self.center[i] + self.radius[i]
    }

    /// Exact payload width of one encoded vector on this grid.
    pub fn total_bits(&self) -> u64 {
        self.bits.iter().map(|&b| b as u64).sum()
    }

    /// Real coordinates of the lattice point at `indices`.
    pub fn vertex(&self, indices: &[u32]) -> Result<Vec<f64>, GridError> {
        if indices.len() != self.dim() {
            return Err(GridError::IndexCountMismatch { got: indices.len(), dim: self.dim() });
        }
        for (i, &idx) in indices.iter().enumerate() {
            if (idx as u64) >= self.points(i) {
                return Err(GridError::IndexOutOfRange {
                    coord: i,
                    index: idx,
                    points: self.points(i),
                });
            }
        }
        Ok(self.vertex_unchecked(indices))
    }

    fn vertex_unchecked(&self, indices: &[u32]) -> Vec<f64> {
        indices
            .iter()
            .enumerate()
            .map(|(i, &idx)| self.lo(i) + idx as f64 * self.spacing[i])
            .collect()
    }

    /// Round `w` onto the lattice. Each coordinate is clamped to the box
    /// (clamps are counted), then assigned the upper of its two enclosing
    /// points with probability equal to its fractional offset. Consumes
    /// exactly one uniform draw per coordinate, in coordinate order, so the
    /// random stream position is input-independent.
    pub fn quantize<R: Rng>(&self, w: &[f64], rng: &mut R) -> Result<Quantized, QuantizeError> {
        if w.len() != self.dim() {
            return Err(QuantizeError::DimensionMismatch { got: w.len(), dim: self.dim() });
        }
        let mut indices = Vec::with_capacity(self.dim());
        let mut clamped = 0usize;
        for (i, &x) in w.iter().enumerate() {
            if !x.is_finite() {
                return Err(QuantizeError::NonFiniteInput { coord: i, value: x });
            }
            let lo = self.lo(i);
            let hi = self.hi(i);
            let xc = if x < lo {
                clamped += 1;
                lo
            } else if x > hi {
                clamped += 1;
                hi
            } else {
                x
            };
            let n = points_for(self.bits[i]);
            // Fractional lattice position in [0, n-1]; guard against float
            // drift at the extremes so the interval index stays valid.
            let t = ((xc - lo) / self.spacing[i]).clamp(0.0, n - 1.0);
            let base = t.floor().min(n - 2.0);
            let theta = t - base;
            let u: f64 = rng.gen();
            let idx = base as u32 + u32::from(u < theta);
            indices.push(idx);
        }
        Ok(Quantized { qv: QuantizedVector { indices }, clamped })
    }

    /// Real coordinates of a quantized vector produced on this grid.
    /// Panics if the vector does not belong to a grid of this shape.
    pub fn dequantize(&self, qv: &QuantizedVector) -> Vec<f64> {
        assert_eq!(qv.indices.len(), self.dim(), "quantized vector dimension mismatch");
        debug_assert!(qv.indices.iter().enumerate().all(|(i, &idx)| (idx as u64) < self.points(i)));
        self.vertex_unchecked(&qv.indices)
    }

    /// Pack indices into exactly `total_bits()` bits, coordinate 0 first,
    /// MSB-first within each coordinate.
    pub fn encode(&self, qv: &QuantizedVector) -> BitString {
        assert_eq!(qv.indices.len(), self.dim(), "quantized vector dimension mismatch");
        let mut bs = BitString::new();
        for (i, &idx) in qv.indices.iter().enumerate() {
            bs.push_bits(idx, self.bits[i]);
        }
        bs
    }

    /// Inverse of [`encode`](Self::encode). The bitstream must carry exactly
    /// the grid's payload width.
    pub fn decode(&self, bs: &BitString) -> Result<QuantizedVector, DecodeError> {
        let expected = self.total_bits();
        if bs.len_bits() != expected {
            return Err(DecodeError::LengthMismatch { expected, got: bs.len_bits() });
        }
        let mut indices = Vec::with_capacity(self.dim());
        let mut offset = 0u64;
        for &b in &self.bits {
            indices.push(bs.get_bits(offset, b));
            offset += b as u64;
        }
        Ok(QuantizedVector { indices })
    }
}

fn points_for(bits: u32) -> f64 {
    // bits <= 32, so this is exact in f64.
    (1u64 << bits) as f64
}

/// Empirical check of the rounding contract on one (grid, input) pair:
/// repeated quantization, per-coordinate bias against its exact standard
/// error, and the worst observed error as a fraction of the spacing.
#[derive(Debug, Clone)]
pub struct SelfTestReport {
    pub trials: u64,
    /// max over coordinates of |empirical mean - clamped input|
    pub max_abs_bias: f64,
    /// max over coordinates of |bias| / exact standard error (0 where se = 0)
    pub max_bias_se_ratio: f64,
    /// max over coordinates and trials of |rounded - clamped input| / spacing
    pub max_err_spacing_ratio: f64,
}

/// Run the rounding self-test. Deterministic for a fixed seed.
pub fn self_test<R: Rng>(grid: &GridSpec, w: &[f64], trials: u64, rng: &mut R) -> Result<SelfTestReport, QuantizeError> {
    let d = grid.dim();
    let mut sums = vec![0.0f64; d];
    let mut max_err_ratio = 0.0f64;
    // Clamped target and exact Bernoulli parameters per coordinate.
    let mut target = vec![0.0f64; d];
    let mut theta = vec![0.0f64; d];
    for i in 0..d {
        let xc = w[i].clamp(grid.lo(i), grid.hi(i));
        target[i] = xc;
        let n = points_for(grid.bits()[i]);
        let t = ((xc - grid.lo(i)) / grid.spacing(i)).clamp(0.0, n - 1.0);
        theta[i] = t - t.floor().min(n - 2.0);
    }
    for _ in 0..trials {
        let q = grid.quantize(w, rng)?;
        let v = grid.dequantize(&q.qv);
        for i in 0..d {
            sums[i] += v[i];
            let ratio = (v[i] - target[i]).abs() / grid.spacing(i);
            if ratio > max_err_ratio {
                max_err_ratio = ratio;
            }
        }
    }
    let mut max_abs_bias = 0.0f64;
    let mut max_ratio = 0.0f64;
    for i in 0..d {
        let mean = sums[i] / trials as f64;
        let bias = (mean - target[i]).abs();
        if bias > max_abs_bias {
            max_abs_bias = bias;
        }
        let se = grid.spacing(i) * (theta[i] * (1.0 - theta[i]) / trials as f64).sqrt();
        let ratio = if se > 0.0 { bias / se } else if bias == 0.0 { 0.0 } else { f64::INFINITY };
        if ratio > max_ratio {
            max_ratio = ratio;
        }
    }
    Ok(SelfTestReport {
        trials,
        max_abs_bias,
        max_bias_se_ratio: max_ratio,
        max_err_spacing_ratio: max_err_ratio,
    })
}
