//! Robust estimation by lifting every residual block with a scale variable.
//!
//! The lifted problem minimizes f(θ, s) = Σ ψ(‖r_i(θ)‖ / (1 + s_i²)) subject to
//! h(s) = Σ s_i² = 0. Large s flattens the kernel so distant basins stay
//! reachable; the filter lets f and h trade off until h reaches zero, after
//! which the solver continues as plain IRLS.

use std::sync::Arc;

use crate::baseline::{IrlsStepper, LmConfig, RecordArgs, Recorder, Solution};
use crate::error::{Error, Result};
use crate::filter::{Filter, FilterPair};
use crate::kernel::RobustKernel;
use crate::linalg::{BlockSystem, DampedSolver, Factorization, SparsityPattern};
use crate::problem::{check_theta, supports, Linearization, Problem, Residuals};
use crate::scalar::Real;
use crate::trace::{StallDetector, StepKind, Termination};

#[derive(Debug, Clone, PartialEq)]
pub struct LiftedState<T> {
    pub theta: Vec<T>,
    /// One scale variable per residual block; the effective scale is 1 + s².
    pub s: Vec<T>,
}

impl<T: Real> LiftedState<T> {
    pub fn new(theta: Vec<T>, s: Vec<T>) -> Result<Self> {
        if let Some(k) = theta.iter().chain(&s).position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(k));
        }
        Ok(Self { theta, s })
    }

    pub fn feasible(theta: Vec<T>, n_blocks: usize) -> Self {
        Self { theta, s: vec![T::zero(); n_blocks] }
    }

    pub fn sigma(&self, i: usize) -> T {
        T::one() + self.s[i] * self.s[i]
    }

    pub fn violation(&self) -> T {
        constraint_violation(self)
    }

    fn check<P: Problem<T> + ?Sized>(&self, problem: &P) -> Result<()> {
        check_theta(problem, &self.theta)?;
        if self.s.len() != problem.num_blocks() {
            return Err(Error::ParamLength { got: self.s.len(), expected: problem.num_blocks() });
        }
        if let Some(k) = self.s.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(self.theta.len() + k));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AskerConfig<T> {
    /// Weight of the objective in the cooperative step; `mu_f + mu_h = 1`.
    pub mu_f: T,
    pub mu_h: T,
    /// Filter margin.
    pub alpha: T,
    pub s_init: T,
    pub lm: LmConfig<T>,
    pub lambda_h_init: T,
    /// Multiplier applied to λ_h after an accepted cooperative step.
    pub lambda_h_decrease: T,
    pub max_iterations: usize,
    pub h_tolerance: T,
    pub f_rel_tolerance: T,
    pub stall_window: usize,
    pub gamma_grid_size: usize,
    pub inlier_threshold: Option<T>,
    pub factorization: Factorization,
}

impl<T: Real> Default for AskerConfig<T> {
    fn default() -> Self {
        Self {
            mu_f: T::lit(0.7),
            mu_h: T::lit(0.3),
            alpha: T::lit(1e-4),
            s_init: T::lit(5.0),
            lm: LmConfig::default(),
            lambda_h_init: T::lit(2.0),
            lambda_h_decrease: T::lit(0.9),
            max_iterations: 100,
            h_tolerance: T::lit(1e-8),
            f_rel_tolerance: T::lit(1e-9),
            stall_window: 5,
            gamma_grid_size: 21,
            inlier_threshold: None,
            factorization: Factorization::Auto,
        }
    }
}

impl<T: Real> AskerConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        self.lm.validate()?;
        if !(self.mu_f >= T::zero() && self.mu_h >= T::zero())
            || (self.mu_f + self.mu_h - T::one()).abs() > T::lit(1e-6)
        {
            return bad(format!("mu_f and mu_h must be non-negative and sum to 1, got {} and {}", self.mu_f, self.mu_h));
        }
        if !(self.alpha > T::zero() && self.alpha < T::one()) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !self.s_init.is_finite() {
            return bad("s_init must be finite".into());
        }
        if !(self.lambda_h_init >= T::zero()) || !(self.lambda_h_decrease > T::zero() && self.lambda_h_decrease <= T::one()) {
            return bad("lambda_h_init must be >= 0 and lambda_h_decrease in (0, 1]".into());
        }
        if !(self.h_tolerance > T::zero()) || !(self.f_rel_tolerance >= T::zero()) || self.stall_window == 0 {
            return bad("tolerances must be positive and the stall window at least 1".into());
        }
        if self.gamma_grid_size < 2 {
            return bad(format!("gamma grid needs at least 2 points, got {}", self.gamma_grid_size));
        }
        if let Some(t) = self.inlier_threshold {
            if !(t > T::zero()) {
                return bad("inlier threshold must be positive".into());
            }
        }
        Ok(())
    }

    /// Uniform grid on [-1/2, 1/2].
    pub fn gamma_grid(&self) -> Vec<T> {
        let n = self.gamma_grid_size;
        (0..n).map(|k| T::lit(-0.5) + T::from_usize_lossy(k) / T::from_usize_lossy(n - 1)).collect()
    }
}

pub fn constraint_violation<T: Real>(state: &LiftedState<T>) -> T {
    state.s.iter().map(|&s| s * s).sum()
}

pub fn scaled_residual<T: Real, P: Problem<T> + ?Sized>(problem: &P, i: usize, state: &LiftedState<T>) -> Result<Vec<T>> {
    state.check(problem)?;
    let inv = T::one() / state.sigma(i);
    Ok(problem.eval_block(i, &state.theta)?.into_iter().map(|v| v * inv).collect())
}

fn lifted_cost_of<T: Real, K: RobustKernel<T>>(res: &Residuals<T>, kernel: &K, s: &[T]) -> T {
    res.norms.iter().zip(s).map(|(&n, &si)| kernel.value(n / (T::one() + si * si))).sum()
}

pub fn lifted_cost<T, P, K>(problem: &P, kernel: &K, state: &LiftedState<T>) -> Result<T>
where
    T: Real,
    P: Problem<T> + ?Sized,
    K: RobustKernel<T>,
{
    state.check(problem)?;
    let res = Residuals::evaluate(problem, &state.theta)?;
    Ok(lifted_cost_of(&res, kernel, &state.s))
}

/// Lower-triangular pattern over (θ, s): each block couples its support with its own s.
pub fn lifted_pattern<T: Real, P: Problem<T> + ?Sized>(problem: &P) -> Arc<SparsityPattern> {
    let d = problem.param_dim();
    let cliques: Vec<Vec<usize>> = supports(problem)
        .into_iter()
        .enumerate()
        .map(|(i, mut c)| {
            c.push(d + i);
            c
        })
        .collect();
    Arc::new(SparsityPattern::from_cliques(d + problem.num_blocks(), cliques.iter().map(|c| c.as_slice())))
}

/// Visits the weighted rows of each block's lifted Jacobian: calls
/// `visit(cols, w, jac_rows, rhat)` where `jac_rows` is row-major over `cols`.
fn for_each_lifted_block<T, P, K, F>(problem: &P, kernel: &K, lin: &Linearization<T>, s: &[T], mut visit: F)
where
    T: Real,
    P: Problem<T> + ?Sized,
    K: RobustKernel<T>,
    F: FnMut(&[usize], T, &[T], &[T]),
{
    let d = problem.param_dim();
    let mut cols = Vec::new();
    let mut jac = Vec::new();
    let mut rhat = Vec::new();
    for i in 0..problem.num_blocks() {
        let sigma = T::one() + s[i] * s[i];
        let inv = T::one() / sigma;
        let w = kernel.weight(lin.residuals.norms[i] * inv);
        if w == T::zero() {
            continue;
        }
        let support = problem.block_support(i);
        let q = support.len();
        cols.clear();
        cols.extend_from_slice(support);
        cols.push(d + i);
        rhat.clear();
        rhat.extend(lin.residuals.block(i).iter().map(|&v| v * inv));
        let j = lin.jacobian(i);
        let ds = -T::lit(2.0) * s[i] * inv;
        jac.clear();
        for (row, &rv) in rhat.iter().enumerate() {
            jac.extend(j[row * q..(row + 1) * q].iter().map(|&v| v * inv));
            jac.push(ds * rv);
        }
        visit(&cols, w, &jac, &rhat);
    }
}

fn f_system_of<T, P, K>(problem: &P, kernel: &K, lin: &Linearization<T>, s: &[T], pattern: &Arc<SparsityPattern>) -> BlockSystem<T>
where
    T: Real,
    P: Problem<T> + ?Sized,
    K: RobustKernel<T>,
{
    let mut sys = BlockSystem::zeros(pattern.clone());
    for_each_lifted_block(problem, kernel, lin, s, |cols, w, jac, rhat| {
        let q = cols.len();
        for a in 0..q {
            let mut g = T::zero();
            for (row, &rv) in rhat.iter().enumerate() {
                g += jac[row * q + a] * rv;
            }
            sys.rhs[cols[a]] += w * g;
            for b in 0..=a {
                let mut hv = T::zero();
                for row in 0..rhat.len() {
                    hv += jac[row * q + a] * jac[row * q + b];
                }
                sys.add(cols[a], cols[b], w * hv);
            }
        }
    });
    sys
}

fn f_gradient_of<T, P, K>(problem: &P, kernel: &K, lin: &Linearization<T>, s: &[T]) -> Vec<T>
where
    T: Real,
    P: Problem<T> + ?Sized,
    K: RobustKernel<T>,
{
    let mut g = vec![T::zero(); problem.param_dim() + problem.num_blocks()];
    for_each_lifted_block(problem, kernel, lin, s, |cols, w, jac, rhat| {
        let q = cols.len();
        for (a, &c) in cols.iter().enumerate() {
            let mut acc = T::zero();
            for (row, &rv) in rhat.iter().enumerate() {
                acc += jac[row * q + a] * rv;
            }
            g[c] += w * acc;
        }
    });
    g
}

/// IRLS majorizer of f at the state: the returned system holds H_f, its `rhs` holds g_f.
pub fn assemble_f_system<T, P, K>(problem: &P, kernel: &K, state: &LiftedState<T>) -> Result<BlockSystem<T>>
where
    T: Real,
    P: Problem<T> + ?Sized,
    K: RobustKernel<T>,
{
    state.check(problem)?;
    let lin = Linearization::evaluate(problem, &state.theta)?;
    Ok(f_system_of(problem, kernel, &lin, &state.s, &lifted_pattern(problem)))
}

/// Gradient and Hessian of h. The Hessian is diagonal: zero on θ and
/// 2(1 + λ_h) on s.
#[derive(Debug, Clone, PartialEq)]
pub struct HSystem<T> {
    pub gradient: Vec<T>,
    pub diagonal: Vec<T>,
}

pub fn assemble_h_system<T: Real>(state: &LiftedState<T>, lambda_h: T) -> Result<HSystem<T>> {
    if !(lambda_h >= T::zero()) {
        return Err(Error::Domain(format!("lambda_h must be >= 0, got {lambda_h}")));
    }
    let d = state.theta.len();
    let two = T::lit(2.0);
    let mut gradient = vec![T::zero(); d];
    gradient.extend(state.s.iter().map(|&s| two * s));
    let mut diagonal = vec![T::zero(); d];
    diagonal.extend(std::iter::repeat_n(two * (T::one() + lambda_h), state.s.len()));
    Ok(HSystem { gradient, diagonal })
}

fn cooperative_candidate<T: Real>(
    mut sys: BlockSystem<T>,
    state: &LiftedState<T>,
    mu_f: T,
    mu_h: T,
    lambda: T,
    lambda_h: T,
    solver: &mut DampedSolver,
) -> Result<LiftedState<T>> {
    let h = assemble_h_system(state, lambda_h)?;
    sys.scale(mu_f);
    let d = state.theta.len();
    for (k, (&g, &dg)) in h.gradient.iter().zip(&h.diagonal).enumerate() {
        sys.rhs[k] += mu_h * g;
        if k >= d {
            sys.add_diagonal(k, mu_h * dg);
        }
    }
    let delta = solver.solve_damped(&sys, lambda)?;
    let (dt, ds) = delta.split_at(d);
    Ok(LiftedState {
        theta: state.theta.iter().zip(dt).map(|(&a, &b)| a + b).collect(),
        s: state.s.iter().zip(ds).map(|(&a, &b)| a + b).collect(),
    })
}

/// Damped step on μ_f f + μ_h h.
pub fn cooperative_step<T, P, K>(
    problem: &P,
    kernel: &K,
    state: &LiftedState<T>,
    config: &AskerConfig<T>,
    lambda: T,
    lambda_h: T,
) -> Result<LiftedState<T>>
where
    T: Real,
    P: Problem<T> + ?Sized,
    K: RobustKernel<T>,
{
    if !(lambda > T::zero()) {
        return Err(Error::Domain(format!("lambda must be positive, got {lambda}")));
    }
    let sys = assemble_f_system(problem, kernel, state)?;
    let mut solver = DampedSolver::new(config.factorization);
    cooperative_candidate(sys, state, config.mu_f, config.mu_h, lambda, lambda_h, &mut solver)
}

fn angle<T: Real>(a: &[T], b: &[T]) -> Option<T> {
    let na = a.iter().map(|&v| v * v).sum::<T>().sqrt();
    let nb = b.iter().map(|&v| v * v).sum::<T>().sqrt();
    let eps = T::lit(1e-12);
    if !(na >= eps && nb >= eps) {
        return None;
    }
    let dot: T = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
    Some((dot / (na * nb)).max(-T::one()).min(T::one()).acos())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Restoration<T> {
    pub state: LiftedState<T>,
    pub gamma: T,
    /// Angle between the gradients of f and h at the chosen point; `None`
    /// when every grid point had a vanishing gradient.
    pub angle: Option<T>,
}

fn restoration_of<T, P, K>(problem: &P, kernel: &K, lin: &Linearization<T>, state: &LiftedState<T>, grid: &[T]) -> Restoration<T>
where
    T: Real,
    P: Problem<T> + ?Sized,
    K: RobustKernel<T>,
{
    let d = state.theta.len();
    let mut best: Option<(T, T)> = None;
    for &gamma in grid {
        let s: Vec<T> = state.s.iter().map(|&v| (T::one() - gamma) * v).collect();
        let gf = f_gradient_of(problem, kernel, lin, &s);
        let mut gh = vec![T::zero(); d];
        gh.extend(s.iter().map(|&v| T::lit(2.0) * v));
        if let Some(a) = angle(&gf, &gh) {
            if best.is_none_or(|(_, b)| a < b) {
                best = Some((gamma, a));
            }
        }
    }
    let gamma = best.map_or(T::lit(0.5), |(g, _)| g);
    Restoration {
        state: LiftedState {
            theta: state.theta.clone(),
            s: state.s.iter().map(|&v| (T::one() - gamma) * v).collect(),
        },
        gamma,
        angle: best.map(|(_, a)| a),
    }
}

/// Moves s along -s by the grid γ that best aligns the gradients of f and h; θ is kept.
pub fn restoration_step<T, P, K>(problem: &P, kernel: &K, state: &LiftedState<T>, config: &AskerConfig<T>) -> Result<Restoration<T>>
where
    T: Real,
    P: Problem<T> + ?Sized,
    K: RobustKernel<T>,
{
    state.check(problem)?;
    let lin = Linearization::evaluate(problem, &state.theta)?;
    Ok(restoration_of(problem, kernel, &lin, state, &config.gamma_grid()))
}

/// Residuals at a candidate, or `None` when it cannot be evaluated (behind a
/// camera, non-finite).
fn evaluate_candidate<T: Real, P: Problem<T> + ?Sized>(problem: &P, theta: &[T]) -> Result<Option<Residuals<T>>> {
    match Residuals::evaluate(problem, theta) {
        Ok(r) => Ok(Some(r)),
        Err(Error::Cheirality { .. }) | Err(Error::NonFinite(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

struct Current<T> {
    state: LiftedState<T>,
    res: Residuals<T>,
    f: T,
    h: T,
}

/// Minimizes the robust cost from `theta0` and returns the lowest-Ψ iterate.
pub fn solve<T, P, K>(problem: &P, kernel: &K, theta0: &[T], config: &AskerConfig<T>) -> Result<Solution<T>>
where
    T: Real,
    P: Problem<T> + ?Sized,
    K: RobustKernel<T>,
{
    config.validate()?;
    let n = problem.num_blocks();
    let state = LiftedState::new(theta0.to_vec(), vec![config.s_init; n])?;
    solve_from(problem, kernel, state, config)
}

/// Like [`solve`] with explicit initial scale variables.
pub fn solve_from<T, P, K>(problem: &P, kernel: &K, state: LiftedState<T>, config: &AskerConfig<T>) -> Result<Solution<T>>
where
    T: Real,
    P: Problem<T> + ?Sized,
    K: RobustKernel<T>,
{
    config.validate()?;
    state.check(problem)?;
    let res = Residuals::evaluate(problem, &state.theta)?;
    let mut cur = Current { f: lifted_cost_of(&res, kernel, &state.s), h: constraint_violation(&state), state, res };

    let mut rec = Recorder::new(problem, kernel, config.inlier_threshold);
    let mut filter = Filter::new(config.alpha)?;
    let pattern = lifted_pattern(problem);
    let mut solver = DampedSolver::new(config.factorization);
    let mut irls = IrlsStepper::new(problem, config.factorization);
    let mut stall = StallDetector::new(config.stall_window, config.f_rel_tolerance);
    let grid = config.gamma_grid();
    let lm = &config.lm;
    let mut lambda = lm.lambda_init;
    let mut lambda_h = config.lambda_h_init;

    let mut reverted = snap_if_feasible(&mut cur, config, kernel);
    let args = |iteration, cur: &Current<T>, kind, lambda, lambda_h, accepted| RecordArgs {
        iteration,
        f: Some(cur.f),
        h: cur.h,
        kind,
        lambda,
        lambda_h: Some(lambda_h),
        accepted,
    };
    rec.record(&cur.state.theta, &cur.res, args(0, &cur, StepKind::Init, lambda, lambda_h, true));
    stall.push(cur.f);

    let mut termination = Termination::MaxIterations;
    for iteration in 1..=config.max_iterations {
        let (kind, accepted) = if reverted {
            let ok = irls.step(problem, kernel, &mut cur.state.theta, &mut cur.res, &mut lambda, lm)?;
            cur.f = cur.res.cost(kernel);
            (StepKind::RevertedIrls, ok)
        } else {
            let trial = filter.open_trial(FilterPair::new(cur.f, cur.h))?;
            let f_before = cur.f;
            let lin = Linearization::evaluate(problem, &cur.state.theta)?;

            let sys = f_system_of(problem, kernel, &lin, &cur.state.s, &pattern);
            let coop = cooperative_candidate(sys, &cur.state, config.mu_f, config.mu_h, lambda, lambda_h, &mut solver);
            let outcome = match coop {
                Ok(cand) => try_adopt(problem, kernel, &filter, &mut cur, cand)?,
                Err(Error::NotPositiveDefinite { .. }) | Err(Error::NonFiniteSystem) => false,
                Err(e) => return Err(e),
            };
            let result = if outcome {
                lambda = lm.decreased(lambda);
                lambda_h *= config.lambda_h_decrease;
                (StepKind::Cooperative, true)
            } else {
                let lambda_rejected = lambda;
                lambda = lm.lambda_init;
                lambda_h = config.lambda_h_init;
                let restored = restoration_of(problem, kernel, &lin, &cur.state, &grid);
                if try_adopt(problem, kernel, &filter, &mut cur, restored.state)? {
                    (StepKind::Restoration, true)
                } else {
                    lambda = lm.increased(lambda_rejected.max(lm.lambda_init));
                    (StepKind::Rejected, false)
                }
            };
            filter.close_trial(trial, cur.f < f_before)?;
            reverted = snap_if_feasible(&mut cur, config, kernel);
            result
        };
        rec.record(&cur.state.theta, &cur.res, args(iteration, &cur, kind, lambda, lambda_h, accepted));
        stall.push(cur.f);
        if reverted && stall.stalled() {
            termination = Termination::Converged;
            break;
        }
    }
    Ok(rec.finish(termination))
}

/// Adopts `cand` if it evaluates and the filter accepts its (f, h).
fn try_adopt<T, P, K>(problem: &P, kernel: &K, filter: &Filter<T>, cur: &mut Current<T>, cand: LiftedState<T>) -> Result<bool>
where
    T: Real,
    P: Problem<T> + ?Sized,
    K: RobustKernel<T>,
{
    if cand.s.iter().any(|v| !v.is_finite()) {
        return Ok(false);
    }
    let Some(res) = evaluate_candidate(problem, &cand.theta)? else {
        return Ok(false);
    };
    let f = lifted_cost_of(&res, kernel, &cand.s);
    let h = constraint_violation(&cand);
    if !filter.accepts(&FilterPair::new(f, h)) {
        return Ok(false);
    }
    *cur = Current { state: cand, res, f, h };
    Ok(true)
}

fn snap_if_feasible<T: Real, K: RobustKernel<T>>(cur: &mut Current<T>, config: &AskerConfig<T>, kernel: &K) -> bool {
    if cur.h < config.h_tolerance {
        cur.state.s.iter_mut().for_each(|s| *s = T::zero());
        cur.h = T::zero();
        cur.f = cur.res.cost(kernel);
        true
    } else {
        false
    }
}
