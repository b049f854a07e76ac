#![allow(dead_code)]

use asker::problem::{AffineBlock, LinearBlocks, SynthBa, SynthBaConfig};
use asker::{LiftedState, Problem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random affine blocks with d ≤ 12 and N ≤ 30, residual dimension 1..=3.
pub fn random_linear(seed: u64) -> (LinearBlocks<f64>, LiftedState<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.random_range(1..=12);
    let n = rng.random_range(1..=30);
    let mut blocks = Vec::with_capacity(n);
    for _ in 0..n {
        let q = rng.random_range(1..=d.min(4));
        let mut support: Vec<usize> = rand::seq::index::sample(&mut rng, d, q).into_vec();
        support.sort_unstable();
        let p = rng.random_range(1..=3);
        let a = (0..p * q).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b = (0..p).map(|_| rng.random_range(-3.0..3.0)).collect();
        blocks.push(AffineBlock { support, a, b });
    }
    let problem = LinearBlocks::new(d, blocks).unwrap();
    let theta = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let s = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    (problem, LiftedState::new(theta, s).unwrap())
}

pub fn small_ba(seed: u64) -> SynthBa<f64> {
    let cfg = SynthBaConfig { n_cameras: 3, n_points: 8, seed, ..Default::default() };
    asker::problem::synth_ba(&cfg).unwrap()
}

/// Central differences of `f` at `x` in every coordinate.
pub fn central_diff(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|k| {
            let x0 = xp[k];
            xp[k] = x0 + h;
            let fp = f(&xp);
            xp[k] = x0 - h;
            let fm = f(&xp);
            xp[k] = x0;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Per-coordinate error relative to max(|fd_k|, 1e-3 ‖fd‖_∞), so coordinates
/// whose true derivative is zero are judged against the gradient's scale.
pub fn max_rel_error(analytic: &[f64], fd: &[f64]) -> f64 {
    let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    analytic
        .iter()
        .zip(fd)
        .map(|(a, f)| (a - f).abs() / f.abs().max(1e-3 * scale).max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max)
}

pub fn split<P: Problem<f64>>(problem: &P, x: &[f64]) -> LiftedState<f64> {
    let d = problem.param_dim();
    LiftedState::new(x[..d].to_vec(), x[d..].to_vec()).unwrap()
}

pub fn join(state: &LiftedState<f64>) -> Vec<f64> {
    state.theta.iter().chain(&state.s).copied().collect()
}
