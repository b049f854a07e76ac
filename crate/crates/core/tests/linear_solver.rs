use asker::linalg::relative_residual;
use asker::{BlockSystem, DampedSolver, Factorization, SparsityPattern};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

/// SPD arrow system: `blocks` diagonal blocks coupled to a dense border, the
/// structure of a lifted bundle-adjustment Hessian.
fn arrow(seed: u64) -> BlockSystem<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bs = rng.random_range(1..=4);
    let blocks = rng.random_range(1..=40);
    let border = rng.random_range(1..=8);
    let m = (bs * blocks + border).min(200);
    let blocks = (m - border) / bs;
    let m = bs * blocks + border;
    let cliques: Vec<Vec<usize>> =
        (0..blocks).map(|b| (b * bs..(b + 1) * bs).chain(m - border..m).collect()).collect();
    let pattern = Arc::new(SparsityPattern::from_cliques(m, cliques.iter().map(|c| c.as_slice())));
    let mut sys = BlockSystem::zeros(pattern);
    // sum of random rank-one terms over each clique plus a diagonal shift
    for c in &cliques {
        for _ in 0..2 {
            let v: Vec<f64> = c.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
            for a in 0..c.len() {
                for b in 0..c.len() {
                    if c[a] >= c[b] {
                        sys.add(c[a], c[b], v[a] * v[b]);
                    }
                }
            }
        }
    }
    for j in 0..m {
        sys.add_diagonal(j, rng.random_range(0.01..1.0));
        sys.rhs[j] = rng.random_range(-1.0..1.0);
    }
    sys
}

#[test]
fn sparse_matches_dense_on_random_arrow_systems() {
    for seed in 0..100 {
        let sys = arrow(seed);
        let lambda = 1e-6;
        let xs = DampedSolver::new(Factorization::Sparse).solve_damped(&sys, lambda).unwrap();
        let xd = DampedSolver::new(Factorization::Dense).solve_damped(&sys, lambda).unwrap();
        assert!(relative_residual(&sys, lambda, &xs) < 1e-8, "seed {seed}");
        assert!(relative_residual(&sys, lambda, &xd) < 1e-8, "seed {seed}");
        let g: f64 = sys.rhs.iter().zip(&xs).map(|(g, x)| g * x).sum();
        assert!(g < 0.0, "seed {seed}: not a descent direction");
    }
}

#[test]
fn damping_shrinks_the_step() {
    let sys = arrow(7);
    let mut solver = DampedSolver::new(Factorization::Auto);
    let norm = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut prev = f64::INFINITY;
    for lambda in [1e-6, 1e-2, 1.0, 100.0] {
        let n = norm(&solver.solve_damped(&sys, lambda).unwrap());
        assert!(n < prev);
        prev = n;
    }
}

#[test]
fn singular_system_is_rescued_by_damping() {
    let sys = BlockSystem::from_dense(&[vec![1.0, 1.0], vec![1.0, 1.0]], vec![1.0, 0.0]);
    let x = DampedSolver::default().solve_damped(&sys, 1e-3).unwrap();
    assert!(relative_residual(&sys, 1e-3, &x) < 1e-8);
}
