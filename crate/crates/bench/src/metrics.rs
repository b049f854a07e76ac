//! Per-run performance measures and Dolan-Moré performance profiles.

use std::collections::BTreeMap;

pub use asker::inlier_fraction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Measure {
    /// Lowest Ψ reached (the Ψ of the returned parameters).
    Final,
    /// Best-so-far Ψ averaged over iterations 1..=cap.
    Mean,
}

impl Measure {
    pub const ALL: [Measure; 2] = [Measure::Final, Measure::Mean];

    pub fn as_str(self) -> &'static str {
        match self {
            Measure::Final => "final",
            Measure::Mean => "mean",
        }
    }
}

/// Best-so-far Ψ averaged over iterations 1..=cap; a run that stopped early
/// keeps its last best value for the remaining iterations.
pub fn mean_best_psi(psi: &[f64], cap: usize) -> f64 {
    if psi.is_empty() || cap == 0 {
        return f64::NAN;
    }
    let mut best = psi[0];
    let mut sum = 0.0;
    for k in 1..=cap {
        if let Some(&v) = psi.get(k) {
            best = best.min(v);
        }
        sum += best;
    }
    sum / cap as f64
}

pub fn best_psi(psi: &[f64]) -> f64 {
    psi.iter().copied().fold(f64::INFINITY, f64::min)
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ProfileError {
    #[error("performance profile needs at least one problem with a finite measure")]
    Empty,
    #[error("ratio grid must be non-empty, start at 1 and be increasing")]
    BadGrid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub taus: Vec<f64>,
    pub solvers: Vec<String>,
    /// `rho[k][s]`: fraction of problems where solver `s` is within `taus[k]` of the best.
    pub rho: Vec<Vec<f64>>,
    pub problems: usize,
}

/// `n` ratios log-spaced on [1, max].
pub fn log_grid(max: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![1.0];
    }
    (0..n).map(|k| if k == 0 { 1.0 } else { max.powf(k as f64 / (n - 1) as f64) }).collect()
}

pub fn default_grid() -> Vec<f64> {
    log_grid(10.0, 101)
}

/// `measures[problem][solver]`. Non-finite values count as failures and are
/// reported with a warning; problems where no solver has a finite value are
/// dropped.
pub fn performance_profile(
    measures: &BTreeMap<String, BTreeMap<String, f64>>,
    taus: &[f64],
) -> Result<Profile, ProfileError> {
    if taus.is_empty() || taus[0] != 1.0 || taus.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(ProfileError::BadGrid);
    }
    let solvers: Vec<String> = measures
        .values()
        .flat_map(|m| m.keys().cloned())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut within = vec![vec![0usize; solvers.len()]; taus.len()];
    let mut problems = 0;
    for (problem, by_solver) in measures {
        let best = by_solver.values().copied().filter(|v| v.is_finite()).fold(f64::INFINITY, f64::min);
        if !best.is_finite() {
            log::warn!("problem {problem}: no finite measure, excluded from the profile");
            continue;
        }
        problems += 1;
        for (s, name) in solvers.iter().enumerate() {
            let Some(&v) = by_solver.get(name).filter(|v| v.is_finite()) else {
                log::warn!("problem {problem}: solver {name} has no finite measure");
                continue;
            };
            for (k, &tau) in taus.iter().enumerate() {
                if v <= tau * best {
                    within[k][s] += 1;
                }
            }
        }
    }
    if problems == 0 {
        return Err(ProfileError::Empty);
    }
    let rho = within.iter().map(|row| row.iter().map(|&c| c as f64 / problems as f64).collect()).collect();
    Ok(Profile { taus: taus.to_vec(), solvers, rho, problems })
}

impl Profile {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("tau");
        for name in &self.solvers {
            s.push(',');
            s.push_str(name);
        }
        s.push('\n');
        for (tau, row) in self.taus.iter().zip(&self.rho) {
            s.push_str(&tau.to_string());
            for r in row {
                s.push(',');
                s.push_str(&r.to_string());
            }
            s.push('\n');
        }
        s
    }
}
