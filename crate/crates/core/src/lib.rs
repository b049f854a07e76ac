//! Robust non-linear least squares with per-residual adaptive kernel scaling.
//!
//! Every residual block gets a scale variable `s_i`; the lifted objective
//! Σ ψ(‖r_i‖ / (1 + s_i²)) is minimized under the constraint Σ s_i² = 0 with a
//! filter method ([`lifted::solve`]). IRLS and graduated non-convexity
//! baselines ([`baseline`]) share the same problems, kernels and linear algebra.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the aliases at
//! the crate root fix the scalar to `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod lifted;
pub mod baseline;
pub mod error;
pub mod filter;
pub mod kernel;
pub mod linalg;
pub mod problem;
mod scalar;
pub mod trace;

pub use lifted::{solve as asker_solve, AskerConfig, LiftedState};
pub use baseline::{gnc_solve, irls_solve, GncSchedule, IrlsConfig, LmConfig, Solution};
pub use error::{Error, Result};
pub use filter::{Filter, FilterPair};
pub use kernel::{RobustKernel, ScaledKernel, SmoothTruncated};
pub use linalg::{BlockSystem, DampedSolver, Factorization, SparsityPattern};
pub use problem::{inlier_fraction, robust_cost, Problem, Residuals};
pub use scalar::Real;
pub use trace::{ConvergenceTrace, IterationRecord, StepKind, Termination};

pub type Kernel = SmoothTruncated<f64>;
pub type Kernel32 = SmoothTruncated<f32>;
pub type Scaled = ScaledKernel<Kernel, f64>;
pub type Config = AskerConfig<f64>;
pub type Config32 = AskerConfig<f32>;
pub type State = LiftedState<f64>;
pub type Trace = ConvergenceTrace<f64>;
pub type Record = IterationRecord<f64>;
pub type BundleAdjustment = problem::BundleAdjustment<f64>;
pub type RobustMean = problem::RobustMean<f64>;
pub type System = BlockSystem<f64>;
