//! Per-iteration convergence records shared by every solver.

use std::fmt;

use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    /// Row 0: the starting point.
    Init,
    Cooperative,
    Restoration,
    /// Rejected cooperative and restoration candidates; state kept.
    Rejected,
    /// Plain IRLS step once every scale variable is zero.
    RevertedIrls,
    Irls,
    Gnc { level: usize },
}

impl fmt::Display for StepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepKind::Init => f.write_str("init"),
            StepKind::Cooperative => f.write_str("cooperative"),
            StepKind::Restoration => f.write_str("restoration"),
            StepKind::Rejected => f.write_str("rejected"),
            StepKind::RevertedIrls => f.write_str("reverted-irls"),
            StepKind::Irls => f.write_str("irls"),
            StepKind::Gnc { level } => write!(f, "gnc-level-{level}"),
        }
    }
}

impl std::str::FromStr for StepKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "init" => StepKind::Init,
            "cooperative" => StepKind::Cooperative,
            "restoration" => StepKind::Restoration,
            "rejected" => StepKind::Rejected,
            "reverted-irls" => StepKind::RevertedIrls,
            "irls" => StepKind::Irls,
            other => {
                let level = other
                    .strip_prefix("gnc-level-")
                    .and_then(|l| l.parse().ok())
                    .ok_or_else(|| format!("unknown step kind `{other}`"))?;
                StepKind::Gnc { level }
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord<T> {
    pub iteration: usize,
    pub time_ms: f64,
    /// True robust cost Ψ(θ) of the current iterate.
    pub psi: T,
    /// Lifted objective; equals `psi` for the baselines.
    pub f: T,
    pub h: T,
    pub step_kind: StepKind,
    pub lambda: T,
    /// Only the lifted solver has a scale-block damping.
    pub lambda_h: Option<T>,
    pub accepted: bool,
    pub inlier_fraction: Option<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    MaxIterations,
    Converged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTrace<T> {
    pub records: Vec<IterationRecord<T>>,
    pub termination: Termination,
}

impl<T: Real> ConvergenceTrace<T> {
    pub(crate) fn new() -> Self {
        Self { records: Vec::new(), termination: Termination::MaxIterations }
    }

    pub fn last(&self) -> &IterationRecord<T> {
        self.records.last().expect("trace has an initial record")
    }

    pub fn best_psi(&self) -> T {
        self.records.iter().map(|r| r.psi).fold(T::infinity(), T::min)
    }

    pub fn psi(&self) -> Vec<T> {
        self.records.iter().map(|r| r.psi).collect()
    }

    /// Number of iterations performed (excluding the initial record).
    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }
}

/// Stops when the objective dropped by less than `rel_tol` (relative) over the
/// last `window` iterations.
#[derive(Debug, Clone)]
pub(crate) struct StallDetector<T> {
    history: Vec<T>,
    window: usize,
    rel_tol: T,
}

impl<T: Real> StallDetector<T> {
    pub(crate) fn new(window: usize, rel_tol: T) -> Self {
        Self { history: Vec::new(), window, rel_tol }
    }

    pub(crate) fn push(&mut self, value: T) {
        self.history.push(value);
    }

    pub(crate) fn stalled(&self) -> bool {
        let n = self.history.len();
        if n <= self.window {
            return false;
        }
        let old = self.history[n - 1 - self.window];
        let new = self.history[n - 1];
        old - new <= self.rel_tol * old.abs()
    }
}
