//! Residual-block problems Ψ(θ) = Σ ψ(‖r_i(θ)‖).
//!
//! A problem exposes `N` residual blocks over a flat parameter vector of length
//! `d`. Each block declares the θ indices it depends on (its column support);
//! Jacobians are dense `p × |support|` row-major blocks over that support.

mod ba;
mod linear;
mod mean;
pub mod rotation;
mod synth;

pub use ba::{BundleAdjustment, CameraPose, Intrinsics, Observation, ResidualMode, DEPTH_EPSILON};
pub use linear::{AffineBlock, LinearBlocks};
pub use mean::{bimodal_mean, BimodalConfig, RobustMean};
pub use synth::{synth_ba, SynthBa, SynthBaConfig};

use crate::error::{Error, Result};
use crate::kernel::RobustKernel;
use crate::scalar::Real;

pub trait Problem<T: Real>: Sync {
    fn param_dim(&self) -> usize;

    fn num_blocks(&self) -> usize;

    /// Residual dimension `p` of block `i`.
    fn block_dim(&self, i: usize) -> usize;

    /// Sorted θ indices block `i` depends on.
    fn block_support(&self, i: usize) -> &[usize];

    /// Writes r_i(θ) into `out` (length `block_dim(i)`). No argument validation.
    fn residual_into(&self, i: usize, theta: &[T], out: &mut [T]) -> Result<()>;

    /// Writes ∂r_i/∂θ restricted to the support, row-major `p × |support|`.
    fn jacobian_into(&self, i: usize, theta: &[T], out: &mut [T]) -> Result<()>;

    /// Multiplier taking the residual norm of block `i` to the units of the
    /// inlier threshold (focal length for normalized BA observations).
    fn residual_scale(&self, _i: usize) -> T {
        T::one()
    }

    fn eval_block(&self, i: usize, theta: &[T]) -> Result<Vec<T>> {
        self.check_args(i, theta)?;
        let mut out = vec![T::zero(); self.block_dim(i)];
        self.residual_into(i, theta, &mut out)?;
        Ok(out)
    }

    fn eval_block_jacobian(&self, i: usize, theta: &[T]) -> Result<BlockJacobian<T>> {
        self.check_args(i, theta)?;
        let rows = self.block_dim(i);
        let cols = self.block_support(i).to_vec();
        let mut values = vec![T::zero(); rows * cols.len()];
        self.jacobian_into(i, theta, &mut values)?;
        Ok(BlockJacobian { rows, cols, values })
    }

    fn check_args(&self, i: usize, theta: &[T]) -> Result<()> {
        if i >= self.num_blocks() {
            return Err(Error::BlockIndex { index: i, len: self.num_blocks() });
        }
        if theta.len() != self.param_dim() {
            return Err(Error::ParamLength { got: theta.len(), expected: self.param_dim() });
        }
        for &c in self.block_support(i) {
            if !theta[c].is_finite() {
                return Err(Error::NonFinite(c));
            }
        }
        Ok(())
    }
}

/// Dense Jacobian block over a column support.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockJacobian<T> {
    pub rows: usize,
    pub cols: Vec<usize>,
    pub values: Vec<T>,
}

impl<T: Real> BlockJacobian<T> {
    pub fn get(&self, row: usize, col: usize) -> T {
        self.values[row * self.cols.len() + col]
    }
}

pub(crate) fn check_theta<T: Real, P: Problem<T> + ?Sized>(problem: &P, theta: &[T]) -> Result<()> {
    if theta.len() != problem.param_dim() {
        return Err(Error::ParamLength { got: theta.len(), expected: problem.param_dim() });
    }
    if let Some(i) = theta.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    Ok(())
}

pub(crate) fn norm<T: Real>(v: &[T]) -> T {
    v.iter().map(|&x| x * x).sum::<T>().sqrt()
}

/// All residuals at one θ, stored flat with per-block offsets.
#[derive(Debug, Clone)]
pub struct Residuals<T> {
    pub values: Vec<T>,
    pub offsets: Vec<usize>,
    pub norms: Vec<T>,
}

impl<T: Real> Residuals<T> {
    pub fn evaluate<P: Problem<T> + ?Sized>(problem: &P, theta: &[T]) -> Result<Self> {
        check_theta(problem, theta)?;
        let n = problem.num_blocks();
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for i in 0..n {
            offsets.push(offsets[i] + problem.block_dim(i));
        }
        let mut values = vec![T::zero(); offsets[n]];
        let mut norms = Vec::with_capacity(n);
        for i in 0..n {
            let out = &mut values[offsets[i]..offsets[i + 1]];
            problem.residual_into(i, theta, out)?;
            norms.push(norm(out));
        }
        Ok(Self { values, offsets, norms })
    }

    pub fn block(&self, i: usize) -> &[T] {
        &self.values[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn len(&self) -> usize {
        self.norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.norms.is_empty()
    }

    pub fn cost<K: RobustKernel<T>>(&self, kernel: &K) -> T {
        self.norms.iter().map(|&r| kernel.value(r)).sum()
    }
}

/// Residuals plus Jacobians at one θ.
#[derive(Debug, Clone)]
pub struct Linearization<T> {
    pub residuals: Residuals<T>,
    pub jacobians: Vec<T>,
    pub jac_offsets: Vec<usize>,
}

impl<T: Real> Linearization<T> {
    pub fn evaluate<P: Problem<T> + ?Sized>(problem: &P, theta: &[T]) -> Result<Self> {
        let residuals = Residuals::evaluate(problem, theta)?;
        let n = problem.num_blocks();
        let mut jac_offsets = Vec::with_capacity(n + 1);
        jac_offsets.push(0);
        for i in 0..n {
            jac_offsets.push(jac_offsets[i] + problem.block_dim(i) * problem.block_support(i).len());
        }
        let mut jacobians = vec![T::zero(); jac_offsets[n]];
        for i in 0..n {
            problem.jacobian_into(i, theta, &mut jacobians[jac_offsets[i]..jac_offsets[i + 1]])?;
        }
        Ok(Self { residuals, jacobians, jac_offsets })
    }

    pub fn jacobian(&self, i: usize) -> &[T] {
        &self.jacobians[self.jac_offsets[i]..self.jac_offsets[i + 1]]
    }
}

/// Ψ(θ) = Σ ψ(‖r_i(θ)‖).
pub fn robust_cost<T, P, K>(problem: &P, kernel: &K, theta: &[T]) -> Result<T>
where
    T: Real,
    P: Problem<T> + ?Sized,
    K: RobustKernel<T>,
{
    Ok(Residuals::evaluate(problem, theta)?.cost(kernel))
}

/// Fraction of blocks whose scaled residual norm is at most `threshold`.
pub fn inlier_fraction<T: Real, P: Problem<T> + ?Sized>(problem: &P, theta: &[T], threshold: T) -> Result<T> {
    if !(threshold > T::zero()) {
        return Err(Error::Domain(format!("inlier threshold must be positive, got {threshold}")));
    }
    let res = Residuals::evaluate(problem, theta)?;
    Ok(inlier_fraction_of(problem, &res, threshold))
}

pub(crate) fn inlier_fraction_of<T: Real, P: Problem<T> + ?Sized>(problem: &P, res: &Residuals<T>, threshold: T) -> T {
    if res.is_empty() {
        return T::zero();
    }
    let count = res
        .norms
        .iter()
        .enumerate()
        .filter(|(i, &r)| r * problem.residual_scale(*i) <= threshold)
        .count();
    T::from_usize_lossy(count) / T::from_usize_lossy(res.len())
}

/// Union of the column supports, used to build sparsity patterns.
pub(crate) fn supports<T: Real, P: Problem<T> + ?Sized>(problem: &P) -> Vec<Vec<usize>> {
    (0..problem.num_blocks()).map(|i| problem.block_support(i).to_vec()).collect()
}
