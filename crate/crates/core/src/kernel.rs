//! Robust kernels ψ, their derivatives and IRLS weights ω(r) = ψ'(r)/r.
//!
//! Kernels are evaluated on residual norms, so every entry point takes `r >= 0`.
//! The checked free functions ([`kernel_value`], [`kernel_weight`],
//! [`scaled_value`], [`scaled_weight`]) validate their arguments; the trait
//! methods are the unchecked hot path used by the solvers.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// A symmetric robust kernel with ψ(0) = 0 and ψ''(0) = 1.
pub trait RobustKernel<T: Real>: Send + Sync {
    /// ψ(r) for `r >= 0`.
    fn value(&self, r: T) -> T;

    /// ψ'(r) for `r >= 0`.
    fn derivative(&self, r: T) -> T;

    /// ω(r) = ψ'(r)/r, with the limit ψ''(0) = 1 at `r = 0`.
    fn weight(&self, r: T) -> T;
}

impl<T: Real, K: RobustKernel<T> + ?Sized> RobustKernel<T> for &K {
    fn value(&self, r: T) -> T {
        (**self).value(r)
    }
    fn derivative(&self, r: T) -> T {
        (**self).derivative(r)
    }
    fn weight(&self, r: T) -> T {
        (**self).weight(r)
    }
}

/// The smooth truncated kernel: ½r²(1 − r²/(2τ²)) below τ, τ²/4 above.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothTruncated<T> {
    tau: T,
}

impl<T: Real> SmoothTruncated<T> {
    pub fn new(tau: T) -> Result<Self> {
        if !(tau > T::zero()) || !tau.is_finite() {
            return Err(Error::Domain(format!("kernel scale tau must be positive, got {tau}")));
        }
        Ok(Self { tau })
    }

    pub fn tau(&self) -> T {
        self.tau
    }

    /// Saturation plateau τ²/4.
    pub fn plateau(&self) -> T {
        self.tau * self.tau * T::lit(0.25)
    }
}

impl<T: Real> RobustKernel<T> for SmoothTruncated<T> {
    #[inline]
    fn value(&self, r: T) -> T {
        if r < self.tau {
            let r2 = r * r;
            T::lit(0.5) * r2 * (T::one() - r2 / (T::lit(2.0) * self.tau * self.tau))
        } else {
            self.plateau()
        }
    }

    #[inline]
    fn derivative(&self, r: T) -> T {
        if r < self.tau {
            r * (T::one() - r * r / (self.tau * self.tau))
        } else {
            T::zero()
        }
    }

    #[inline]
    fn weight(&self, r: T) -> T {
        if r < self.tau {
            T::one() - r * r / (self.tau * self.tau)
        } else {
            T::zero()
        }
    }
}

/// σ²ψ(r/σ) for a fixed σ ≥ 1. Larger σ widens the quadratic region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledKernel<K, T> {
    base: K,
    sigma: T,
}

impl<T: Real, K: RobustKernel<T>> ScaledKernel<K, T> {
    pub fn new(base: K, sigma: T) -> Result<Self> {
        if !(sigma >= T::one()) || !sigma.is_finite() {
            return Err(Error::Domain(format!("kernel scale factor must be >= 1, got {sigma}")));
        }
        Ok(Self { base, sigma })
    }

    pub fn base(&self) -> &K {
        &self.base
    }

    pub fn sigma(&self) -> T {
        self.sigma
    }
}

impl<T: Real, K: RobustKernel<T>> RobustKernel<T> for ScaledKernel<K, T> {
    #[inline]
    fn value(&self, r: T) -> T {
        self.sigma * self.sigma * self.base.value(r / self.sigma)
    }

    #[inline]
    fn derivative(&self, r: T) -> T {
        self.sigma * self.base.derivative(r / self.sigma)
    }

    #[inline]
    fn weight(&self, r: T) -> T {
        self.base.weight(r / self.sigma)
    }
}

fn check_norm<T: Real>(r: T) -> Result<()> {
    if r >= T::zero() && r.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("residual norm must be finite and non-negative, got {r}")))
    }
}

pub fn kernel_value<T: Real, K: RobustKernel<T>>(kernel: &K, r: T) -> Result<T> {
    check_norm(r)?;
    Ok(kernel.value(r))
}

pub fn kernel_weight<T: Real, K: RobustKernel<T>>(kernel: &K, r: T) -> Result<T> {
    check_norm(r)?;
    Ok(kernel.weight(r))
}

pub fn scaled_value<T: Real, K: RobustKernel<T>>(sk: &ScaledKernel<K, T>, r: T) -> Result<T> {
    check_norm(r)?;
    Ok(sk.value(r))
}

pub fn scaled_weight<T: Real, K: RobustKernel<T>>(sk: &ScaledKernel<K, T>, r: T) -> Result<T> {
    check_norm(r)?;
    Ok(sk.weight(r))
}
