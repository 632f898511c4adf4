//! Calibration error metrics and privacy-based post-processing.
//!
//! The crate works on finite-support predictors:
//! an [`EmpiricalJoint`] of (prediction, binary state) pairs is the input to
//! every metric, a [`Coupling`] links a predictor to a reference predictor,
//! and a [`NoiseMechanism`] is the truncated noise that post-processing adds.
//!
//! Modules:
//! - [`model`]: joints, couplings, grids, CSV ingestion.
//! - [`lp`]: deterministic dense simplex.
//! - [`score`] and [`metrics`]: proper scoring rules, ECE, smooth calibration,
//!   distance to calibration (primal and dual LPs), CDL, decision loss.
//! - [`noise`]: truncated Laplace and Gaussian mechanisms.
//! - [`postprocess`]: batch and online post-processors.
//! - [`adversary`]: lower-bound instances.
//! - [`experiments`]: bound sweeps and reports.
//! - [`verify`]: invariant suites used by `calpost verify`.

// `!(x >= 0.0)` style checks are meant to reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adversary;
pub mod error;
pub mod exec;
pub mod experiments;
pub mod io;
pub mod lp;
pub mod metrics;
pub mod model;
pub mod noise;
pub mod postprocess;
pub mod quad;
pub mod score;
pub mod verify;

pub use error::{Error, Result};
pub use exec::Exec;

pub use metrics::{Dtc, MetricsReport};
pub use noise::{DpParams, GaussianVariant, NoiseKind, NoiseMechanism};
pub use postprocess::{BatchMode, OnlineState, PostProcessor};
pub use score::{ProperScore, Score, ScoringRule, VShapeScore};
pub use model::{Coupling, CouplingAtom, EmpiricalJoint, GridSpec, Sample, SnapMode};


