use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Problem;
use crate::error::{Error, Result};
use crate::scalar::Real;

const SUPPORT: [usize; 1] = [0];

/// One-dimensional robust mean: r_i(θ) = θ − y_i.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustMean<T> {
    data: Vec<T>,
}

impl<T: Real> RobustMean<T> {
    pub fn new(data: Vec<T>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::InvalidConfig("robust mean needs at least one datum".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("robust mean data must be finite".into()));
        }
        Ok(Self { data })
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }
}

impl<T: Real> Problem<T> for RobustMean<T> {
    fn param_dim(&self) -> usize {
        1
    }

    fn num_blocks(&self) -> usize {
        self.data.len()
    }

    fn block_dim(&self, _i: usize) -> usize {
        1
    }

    fn block_support(&self, _i: usize) -> &[usize] {
        &SUPPORT
    }

    fn residual_into(&self, i: usize, theta: &[T], out: &mut [T]) -> Result<()> {
        out[0] = theta[0] - self.data[i];
        Ok(())
    }

    fn jacobian_into(&self, _i: usize, _theta: &[T], out: &mut [T]) -> Result<()> {
        out[0] = T::one();
        Ok(())
    }
}

/// Two Gaussian clusters: inliers first, then outliers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BimodalConfig {
    pub n_inliers: usize,
    pub n_outliers: usize,
    pub inlier_mean: f64,
    pub inlier_sd: f64,
    pub outlier_mean: f64,
    pub outlier_sd: f64,
    pub seed: u64,
}

impl Default for BimodalConfig {
    fn default() -> Self {
        Self {
            n_inliers: 100,
            n_outliers: 100,
            inlier_mean: 0.0,
            inlier_sd: 0.1,
            outlier_mean: 8.0,
            outlier_sd: 0.5,
            seed: 0,
        }
    }
}

pub fn bimodal_mean<T: Real>(config: &BimodalConfig) -> Result<RobustMean<T>> {
    let bad = |m: &str| Error::InvalidConfig(m.to_string());
    if config.n_inliers + config.n_outliers == 0 {
        return Err(bad("bimodal mean needs at least one sample"));
    }
    let inl = Normal::new(config.inlier_mean, config.inlier_sd).map_err(|e| bad(&e.to_string()))?;
    let out = Normal::new(config.outlier_mean, config.outlier_sd).map_err(|e| bad(&e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut data = Vec::with_capacity(config.n_inliers + config.n_outliers);
    for _ in 0..config.n_inliers {
        data.push(T::lit(inl.sample(&mut rng)));
    }
    for _ in 0..config.n_outliers {
        data.push(T::lit(out.sample(&mut rng)));
    }
    RobustMean::new(data)
}
