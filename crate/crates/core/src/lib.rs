//! Single-process simulator for master/worker optimization of strongly convex
//! finite sums under an exact communication bit meter.
//!
//! The library provides:
//!
//! * [`quantizer`] — uniform per-coordinate lattices with unbiased two-point
//!   stochastic rounding and exact-width bit packing;
//! * [`objective`] — the finite-sum interface plus L2-regularized logistic
//!   loss and a quadratic test objective;
//! * [`optimizers`] — variance-reduced descent with an outer reference loop
//!   (plain, memory-filtered, and quantized variants with fixed or adaptive
//!   grids) next to one-step baselines (full gradient, stochastic gradient,
//!   averaged-gradient table), each in unquantized and quantized form;
//! * [`theory`] — closed-form contraction/plateau bounds and the minimal
//!   bit-budget / epoch-length calculators, with explicit applicability;
//! * [`netsim`] — the in-process channel whose meter charges every vector
//!   payload at its exact bit width, plus the nominal per-iteration costs;
//! * [`data`] — dataset ingestion (semicolon CSV, IDX images, synthetic),
//!   worker partitioning, and binary snapshots;
//! * [`metrics`] — run traces, a deterministic reference solver, and F1
//!   scoring for the classification experiments.
//!
//! Everything is deterministic: a run is a pure function of (config, seed),
//! and identical inputs reproduce traces bit for bit.

pub mod data;
pub mod metrics;
pub mod netsim;
pub mod objective;
pub mod optimizers;
pub mod quantizer;
pub mod theory;
