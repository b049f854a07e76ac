//! Filter of mutually non-dominating (objective, violation) pairs.
//!
//! Each iteration opens a trial with the current pair shrunk by the margin α,
//! tests candidates against the permanent entries plus that temporary entry,
//! and closes the trial: the temporary entry is dropped when the objective went
//! down and made permanent otherwise.

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterPair<T> {
    pub f: T,
    pub h: T,
}

impl<T: Real> FilterPair<T> {
    pub fn new(f: T, h: T) -> Self {
        Self { f, h }
    }

    /// Strictly smaller in both coordinates.
    pub fn dominates(&self, other: &Self) -> bool {
        self.f < other.f && self.h < other.h
    }
}

pub fn dominates<T: Real>(a: &FilterPair<T>, b: &FilterPair<T>) -> bool {
    a.dominates(b)
}

/// Proof that a trial is open; consumed by [`Filter::close_trial`].
#[derive(Debug)]
#[must_use = "an open trial must be closed"]
pub struct Trial {
    _private: (),
}

#[derive(Debug, Clone)]
pub struct Filter<T> {
    entries: Vec<FilterPair<T>>,
    alpha: T,
    temporary: Option<FilterPair<T>>,
}

impl<T: Real> Filter<T> {
    pub fn new(alpha: T) -> Result<Self> {
        if !(alpha > T::zero() && alpha < T::one()) {
            return Err(Error::InvalidConfig(format!("filter margin must lie in (0, 1), got {alpha}")));
        }
        Ok(Self { entries: Vec::new(), alpha, temporary: None })
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    pub fn entries(&self) -> &[FilterPair<T>] {
        &self.entries
    }

    pub fn temporary(&self) -> Option<&FilterPair<T>> {
        self.temporary.as_ref()
    }

    /// True iff no permanent entry and no active temporary entry dominates `candidate`.
    pub fn accepts(&self, candidate: &FilterPair<T>) -> bool {
        if !candidate.f.is_finite() || !candidate.h.is_finite() {
            return false;
        }
        self.entries.iter().chain(self.temporary.iter()).all(|e| !e.dominates(candidate))
    }

    /// Installs (f − αh, h − αh) as the temporary entry.
    pub fn open_trial(&mut self, current: FilterPair<T>) -> Result<Trial> {
        if self.temporary.is_some() {
            return Err(Error::TrialAlreadyOpen);
        }
        if !(current.h >= T::zero()) || !current.f.is_finite() || !current.h.is_finite() {
            return Err(Error::Domain(format!("filter pair must be finite with h >= 0, got ({}, {})", current.f, current.h)));
        }
        let margin = self.alpha * current.h;
        self.temporary = Some(FilterPair::new(current.f - margin, current.h - margin));
        Ok(Trial { _private: () })
    }

    /// Discards the temporary entry if the objective was reduced, otherwise
    /// makes it permanent and prunes the entries it dominates. Entries with
    /// h = 0 are never made permanent.
    pub fn close_trial(&mut self, _trial: Trial, objective_reduced: bool) -> Result<()> {
        let temp = self.temporary.take().ok_or(Error::NoOpenTrial)?;
        if objective_reduced || temp.h <= T::zero() {
            return Ok(());
        }
        if self.entries.iter().any(|e| e.dominates(&temp)) {
            return Ok(());
        }
        self.entries.retain(|e| !temp.dominates(e));
        self.entries.push(temp);
        Ok(())
    }

    /// Closes a trial given by token-less callers (e.g. replay tooling).
    pub fn close_open_trial(&mut self, objective_reduced: bool) -> Result<()> {
        if self.temporary.is_none() {
            return Err(Error::NoOpenTrial);
        }
        self.close_trial(Trial { _private: () }, objective_reduced)
    }

    pub fn is_mutually_non_dominating(&self) -> bool {
        self.entries
            .iter()
            .enumerate()
            .all(|(i, a)| self.entries.iter().enumerate().all(|(j, b)| i == j || !a.dominates(b)))
    }
}
