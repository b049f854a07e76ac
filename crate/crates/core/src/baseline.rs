//! IRLS and graduated non-convexity baselines.
//!
//! Both run damped IRLS steps (Levenberg-Marquardt accept/reject on the working
//! objective) on the same problem, kernel and linear-solver infrastructure as
//! the lifted solver; GNC walks a fixed schedule of scaled kernels down to σ = 1.

use std::sync::Arc;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::kernel::{RobustKernel, ScaledKernel};
use crate::linalg::{BlockSystem, DampedSolver, Factorization, SparsityPattern};
use crate::problem::{inlier_fraction_of, supports, Linearization, Problem, Residuals};
use crate::scalar::Real;
use crate::trace::{ConvergenceTrace, IterationRecord, StallDetector, StepKind, Termination};

/// Levenberg-Marquardt damping schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmConfig<T> {
    pub lambda_init: T,
    /// Multiplier applied after an accepted step.
    pub lambda_decrease: T,
    /// Multiplier applied after a rejected step.
    pub lambda_increase: T,
    pub lambda_min: T,
    pub lambda_max: T,
}

impl<T: Real> Default for LmConfig<T> {
    fn default() -> Self {
        Self {
            lambda_init: T::lit(0.5),
            lambda_decrease: T::lit(0.5),
            lambda_increase: T::lit(10.0),
            lambda_min: T::lit(1e-10),
            lambda_max: T::lit(1e16),
        }
    }
}

impl<T: Real> LmConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda_init > T::zero()
            && self.lambda_decrease > T::zero()
            && self.lambda_decrease < T::one()
            && self.lambda_increase > T::one()
            && self.lambda_min > T::zero()
            && self.lambda_max >= self.lambda_init
            && self.lambda_init >= self.lambda_min;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("inconsistent damping schedule {self:?}")))
        }
    }

    pub(crate) fn decreased(&self, lambda: T) -> T {
        (lambda * self.lambda_decrease).max(self.lambda_min)
    }

    pub(crate) fn increased(&self, lambda: T) -> T {
        (lambda * self.lambda_increase).min(self.lambda_max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IrlsConfig<T> {
    pub max_iterations: usize,
    pub lm: LmConfig<T>,
    /// Stop when the objective dropped by less than this fraction over
    /// `stall_window` iterations.
    pub f_rel_tolerance: T,
    pub stall_window: usize,
    /// Threshold for the trace's inlier-fraction column.
    pub inlier_threshold: Option<T>,
    pub factorization: Factorization,
}

impl<T: Real> Default for IrlsConfig<T> {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            lm: LmConfig::default(),
            f_rel_tolerance: T::lit(1e-9),
            stall_window: 5,
            inlier_threshold: None,
            factorization: Factorization::Auto,
        }
    }
}

impl<T: Real> IrlsConfig<T> {
    pub fn validate(&self) -> Result<()> {
        self.lm.validate()?;
        if !(self.f_rel_tolerance >= T::zero()) || self.stall_window == 0 {
            return Err(Error::InvalidConfig("stall tolerance must be >= 0 and window >= 1".into()));
        }
        if let Some(t) = self.inlier_threshold {
            if !(t > T::zero()) {
                return Err(Error::InvalidConfig("inlier threshold must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Result of a solver run: the lowest-Ψ iterate and the full trace.
#[derive(Debug, Clone)]
pub struct Solution<T> {
    pub theta: Vec<T>,
    pub psi: T,
    pub trace: ConvergenceTrace<T>,
}

/// Builds trace records and tracks the best iterate by true robust cost.
pub(crate) struct Recorder<'a, T: Real, P: ?Sized, K> {
    problem: &'a P,
    kernel: &'a K,
    inlier_threshold: Option<T>,
    start: Instant,
    pub(crate) trace: ConvergenceTrace<T>,
    best_theta: Vec<T>,
    best_psi: T,
}

pub(crate) struct RecordArgs<T> {
    pub iteration: usize,
    pub f: Option<T>,
    pub h: T,
    pub kind: StepKind,
    pub lambda: T,
    pub lambda_h: Option<T>,
    pub accepted: bool,
}

impl<'a, T: Real, P: Problem<T> + ?Sized, K: RobustKernel<T>> Recorder<'a, T, P, K> {
    pub(crate) fn new(problem: &'a P, kernel: &'a K, inlier_threshold: Option<T>) -> Self {
        Self {
            problem,
            kernel,
            inlier_threshold,
            start: Instant::now(),
            trace: ConvergenceTrace::new(),
            best_theta: Vec::new(),
            best_psi: T::infinity(),
        }
    }

    /// Records the iterate and returns its Ψ.
    pub(crate) fn record(&mut self, theta: &[T], res: &Residuals<T>, args: RecordArgs<T>) -> T {
        let psi = res.cost(self.kernel);
        if psi < self.best_psi || self.best_theta.is_empty() {
            self.best_psi = psi;
            self.best_theta = theta.to_vec();
        }
        self.trace.records.push(IterationRecord {
            iteration: args.iteration,
            time_ms: self.start.elapsed().as_secs_f64() * 1e3,
            psi,
            f: args.f.unwrap_or(psi),
            h: args.h,
            step_kind: args.kind,
            lambda: args.lambda,
            lambda_h: args.lambda_h,
            accepted: args.accepted,
            inlier_fraction: self.inlier_threshold.map(|t| inlier_fraction_of(self.problem, res, t)),
        });
        psi
    }

    pub(crate) fn finish(self, termination: Termination) -> Solution<T> {
        let mut trace = self.trace;
        trace.termination = termination;
        Solution { theta: self.best_theta, psi: self.best_psi, trace }
    }
}

/// IRLS normal equations at a linearization: Σ ω JᵀJ and Σ ω Jᵀr.
pub(crate) fn irls_system<T: Real, P: Problem<T> + ?Sized, K: RobustKernel<T>>(
    problem: &P,
    kernel: &K,
    lin: &Linearization<T>,
    pattern: &Arc<SparsityPattern>,
) -> BlockSystem<T> {
    let mut sys = BlockSystem::zeros(pattern.clone());
    for i in 0..problem.num_blocks() {
        let w = kernel.weight(lin.residuals.norms[i]);
        if w == T::zero() {
            continue;
        }
        let cols = problem.block_support(i);
        let q = cols.len();
        let r = lin.residuals.block(i);
        let j = lin.jacobian(i);
        for a in 0..q {
            let mut g = T::zero();
            for (row, &rv) in r.iter().enumerate() {
                g += j[row * q + a] * rv;
            }
            sys.rhs[cols[a]] += w * g;
            for b in 0..=a {
                let mut hv = T::zero();
                for row in 0..r.len() {
                    hv += j[row * q + a] * j[row * q + b];
                }
                sys.add(cols[a], cols[b], w * hv);
            }
        }
    }
    sys
}

pub(crate) fn theta_pattern<T: Real, P: Problem<T> + ?Sized>(problem: &P) -> Arc<SparsityPattern> {
    let s = supports(problem);
    Arc::new(SparsityPattern::from_cliques(problem.param_dim(), s.iter().map(|c| c.as_slice())))
}

/// One damped IRLS step with LM accept/reject on the working objective.
pub(crate) struct IrlsStepper {
    pattern: Arc<SparsityPattern>,
    solver: DampedSolver,
}

impl IrlsStepper {
    pub(crate) fn new<T: Real, P: Problem<T> + ?Sized>(problem: &P, factorization: Factorization) -> Self {
        Self { pattern: theta_pattern(problem), solver: DampedSolver::new(factorization) }
    }

    /// Updates `theta`, `res` and `lambda` in place; returns whether the step was accepted.
    pub(crate) fn step<T: Real, P: Problem<T> + ?Sized, K: RobustKernel<T>>(
        &mut self,
        problem: &P,
        kernel: &K,
        theta: &mut Vec<T>,
        res: &mut Residuals<T>,
        lambda: &mut T,
        lm: &LmConfig<T>,
    ) -> Result<bool> {
        let lin = Linearization::evaluate(problem, theta)?;
        let sys = irls_system(problem, kernel, &lin, &self.pattern);
        let delta = match self.solver.solve_damped(&sys, *lambda) {
            Ok(d) => d,
            Err(_) => {
                *lambda = lm.increased(*lambda);
                return Ok(false);
            }
        };
        let candidate: Vec<T> = theta.iter().zip(&delta).map(|(&a, &b)| a + b).collect();
        let accepted = match Residuals::evaluate(problem, &candidate) {
            Ok(new_res) if new_res.cost(kernel) < res.cost(kernel) => {
                *theta = candidate;
                *res = new_res;
                true
            }
            Ok(_) | Err(Error::Cheirality { .. }) | Err(Error::NonFinite(_)) => false,
            Err(e) => return Err(e),
        };
        *lambda = if accepted { lm.decreased(*lambda) } else { lm.increased(*lambda) };
        Ok(accepted)
    }
}

/// Runs damped IRLS on `working` for at most `budget` iterations, numbering
/// records from `first_iteration`. Returns (iterations run, converged).
#[allow(clippy::too_many_arguments)]
fn irls_loop<T, P, K, W>(
    rec: &mut Recorder<'_, T, P, K>,
    stepper: &mut IrlsStepper,
    problem: &P,
    working: &W,
    theta: &mut Vec<T>,
    res: &mut Residuals<T>,
    budget: usize,
    first_iteration: usize,
    kind: StepKind,
    config: &IrlsConfig<T>,
) -> Result<(usize, bool)>
where
    T: Real,
    P: Problem<T> + ?Sized,
    K: RobustKernel<T>,
    W: RobustKernel<T>,
{
    let mut lambda = config.lm.lambda_init;
    let mut stall = StallDetector::new(config.stall_window, config.f_rel_tolerance);
    stall.push(res.cost(working));
    for k in 0..budget {
        let accepted = stepper.step(problem, working, theta, res, &mut lambda, &config.lm)?;
        rec.record(
            theta,
            res,
            RecordArgs {
                iteration: first_iteration + k,
                f: None,
                h: T::zero(),
                kind,
                lambda,
                lambda_h: None,
                accepted,
            },
        );
        stall.push(res.cost(working));
        if stall.stalled() {
            return Ok((k + 1, true));
        }
    }
    Ok((budget, false))
}

fn record_init<T: Real, P: Problem<T> + ?Sized, K: RobustKernel<T>>(
    rec: &mut Recorder<'_, T, P, K>,
    theta: &[T],
    res: &Residuals<T>,
    lambda: T,
) {
    rec.record(
        theta,
        res,
        RecordArgs {
            iteration: 0,
            f: None,
            h: T::zero(),
            kind: StepKind::Init,
            lambda,
            lambda_h: None,
            accepted: true,
        },
    );
}

/// Iteratively reweighted least squares with LM damping.
pub fn irls_solve<T, P, K>(problem: &P, kernel: &K, theta0: &[T], config: &IrlsConfig<T>) -> Result<Solution<T>>
where
    T: Real,
    P: Problem<T> + ?Sized,
    K: RobustKernel<T>,
{
    config.validate()?;
    let mut rec = Recorder::new(problem, kernel, config.inlier_threshold);
    let mut theta = theta0.to_vec();
    let mut res = Residuals::evaluate(problem, &theta)?;
    record_init(&mut rec, &theta, &res, config.lm.lambda_init);
    let mut stepper = IrlsStepper::new(problem, config.factorization);
    let (_, converged) = irls_loop(
        &mut rec,
        &mut stepper,
        problem,
        kernel,
        &mut theta,
        &mut res,
        config.max_iterations,
        1,
        StepKind::Irls,
        config,
    )?;
    Ok(rec.finish(if converged { Termination::Converged } else { Termination::MaxIterations }))
}

/// Decreasing kernel scales ending at exactly 1, with a per-level budget.
#[derive(Debug, Clone, PartialEq)]
pub struct GncSchedule<T> {
    scales: Vec<T>,
    inner_iterations: usize,
}

impl<T: Real> GncSchedule<T> {
    pub fn new(scales: Vec<T>, inner_iterations: usize) -> Result<Self> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if scales.is_empty() {
            return bad("GNC schedule needs at least one level");
        }
        if scales.windows(2).any(|w| !(w[0] > w[1])) {
            return bad("GNC scales must be strictly decreasing");
        }
        if *scales.last().expect("non-empty") != T::one() {
            return bad("GNC schedule must end at scale 1");
        }
        if inner_iterations == 0 {
            return bad("GNC levels need a positive iteration budget");
        }
        Ok(Self { scales, inner_iterations })
    }

    /// Geometric scales s_max, s_max/ratio, ... down to 1 with the total
    /// budget split evenly across levels.
    pub fn geometric(s_max: T, ratio: T, total_iterations: usize) -> Result<Self> {
        if !(ratio > T::one()) || !(s_max >= T::one()) {
            return Err(Error::InvalidConfig("geometric GNC needs ratio > 1 and s_max >= 1".into()));
        }
        let mut scales = vec![];
        let mut s = s_max;
        while s > T::one() + T::lit(1e-12) {
            scales.push(s);
            s /= ratio;
        }
        scales.push(T::one());
        Self::with_total_budget(scales, total_iterations)
    }

    pub fn with_total_budget(scales: Vec<T>, total_iterations: usize) -> Result<Self> {
        let per = if scales.is_empty() { 0 } else { (total_iterations / scales.len()).max(1) };
        Self::new(scales, per)
    }

    pub fn scales(&self) -> &[T] {
        &self.scales
    }

    pub fn levels(&self) -> usize {
        self.scales.len()
    }

    pub fn inner_iterations(&self) -> usize {
        self.inner_iterations
    }
}

/// Graduated non-convexity: IRLS on σ²ψ(r/σ) for each scale, warm-started.
/// `config.max_iterations` caps the total across levels.
pub fn gnc_solve<T, P, K>(
    problem: &P,
    kernel: &K,
    theta0: &[T],
    schedule: &GncSchedule<T>,
    config: &IrlsConfig<T>,
) -> Result<Solution<T>>
where
    T: Real,
    P: Problem<T> + ?Sized,
    K: RobustKernel<T>,
{
    config.validate()?;
    let mut rec = Recorder::new(problem, kernel, config.inlier_threshold);
    let mut theta = theta0.to_vec();
    let mut res = Residuals::evaluate(problem, &theta)?;
    record_init(&mut rec, &theta, &res, config.lm.lambda_init);
    let mut stepper = IrlsStepper::new(problem, config.factorization);
    let mut done = 0;
    let mut converged = false;
    for (level, &sigma) in schedule.scales().iter().enumerate() {
        let budget = schedule.inner_iterations().min(config.max_iterations - done);
        if budget == 0 {
            break;
        }
        let working = ScaledKernel::new(kernel, sigma)?;
        let (ran, level_converged) = irls_loop(
            &mut rec,
            &mut stepper,
            problem,
            &working,
            &mut theta,
            &mut res,
            budget,
            done + 1,
            StepKind::Gnc { level },
            config,
        )?;
        done += ran;
        converged = level_converged && level + 1 == schedule.levels();
    }
    Ok(rec.finish(if converged { Termination::Converged } else { Termination::MaxIterations }))
}
