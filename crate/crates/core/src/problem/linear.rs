use super::Problem;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// One affine residual block r(θ) = A θ_S − b over a column support S.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineBlock<T> {
    pub support: Vec<usize>,
    /// Row-major `p × |support|`.
    pub a: Vec<T>,
    pub b: Vec<T>,
}

/// Sum of affine residual blocks; the robust kernel makes the cost non-convex.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearBlocks<T> {
    dim: usize,
    blocks: Vec<AffineBlock<T>>,
}

impl<T: Real> LinearBlocks<T> {
    pub fn new(dim: usize, blocks: Vec<AffineBlock<T>>) -> Result<Self> {
        for (i, blk) in blocks.iter().enumerate() {
            let bad = |m: &str| Err(Error::InvalidConfig(format!("block {i}: {m}")));
            if blk.b.is_empty() {
                return bad("empty residual");
            }
            if blk.support.windows(2).any(|w| w[0] >= w[1]) {
                return bad("support must be strictly increasing");
            }
            if blk.support.last().is_some_and(|&c| c >= dim) {
                return bad("support index out of range");
            }
            if blk.a.len() != blk.b.len() * blk.support.len() {
                return bad("matrix shape does not match support and residual length");
            }
            if blk.a.iter().chain(&blk.b).any(|v| !v.is_finite()) {
                return bad("non-finite coefficient");
            }
        }
        Ok(Self { dim, blocks })
    }

    pub fn blocks(&self) -> &[AffineBlock<T>] {
        &self.blocks
    }
}

impl<T: Real> Problem<T> for LinearBlocks<T> {
    fn param_dim(&self) -> usize {
        self.dim
    }

    fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    fn block_dim(&self, i: usize) -> usize {
        self.blocks[i].b.len()
    }

    fn block_support(&self, i: usize) -> &[usize] {
        &self.blocks[i].support
    }

    fn residual_into(&self, i: usize, theta: &[T], out: &mut [T]) -> Result<()> {
        let blk = &self.blocks[i];
        let q = blk.support.len();
        for (row, o) in out.iter_mut().enumerate() {
            let mut v = -blk.b[row];
            for (k, &c) in blk.support.iter().enumerate() {
                v += blk.a[row * q + k] * theta[c];
            }
            *o = v;
        }
        Ok(())
    }

    fn jacobian_into(&self, i: usize, _theta: &[T], out: &mut [T]) -> Result<()> {
        out.copy_from_slice(&self.blocks[i].a);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn residual_and_jacobian() {
        let p = LinearBlocks::new(
            3,
            vec![AffineBlock { support: vec![0, 2], a: vec![1.0, 2.0, 0.0, -1.0], b: vec![1.0, 0.5] }],
        )
        .unwrap();
        assert_eq!(p.eval_block(0, &[1.0, 9.0, 3.0]).unwrap(), vec![6.0, -3.5]);
        assert_eq!(p.eval_block_jacobian(0, &[0.0; 3]).unwrap().get(1, 1), -1.0);
    }

    #[test]
    fn validation() {
        let blk = |support: Vec<usize>, a: Vec<f64>| AffineBlock { support, a, b: vec![0.0] };
        assert!(LinearBlocks::new(2, vec![blk(vec![1, 0], vec![1.0, 1.0])]).is_err());
        assert!(LinearBlocks::new(2, vec![blk(vec![2], vec![1.0])]).is_err());
        assert!(LinearBlocks::new(2, vec![blk(vec![0], vec![1.0, 1.0])]).is_err());
        assert!(LinearBlocks::new(0, vec![blk(vec![], vec![])]).is_ok());
    }
}
