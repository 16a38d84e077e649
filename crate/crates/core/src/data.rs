use alloc::vec::Vec;

use crate::error::{ensure_dim, Result};
use crate::linalg::Matrix;

/// One streamed batch of observations: `n` inputs (rows) and their targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub inputs: Matrix,
    pub targets: Vec<f64>,
}

impl Block {
    pub fn new(inputs: Matrix, targets: Vec<f64>) -> Result<Self> {
        ensure_dim("Block targets", inputs.rows(), targets.len())?;
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    /// Stacks blocks of equal input dimension into one.
    pub fn concat(blocks: &[Block]) -> Result<Block> {
        let d = blocks.first().map_or(0, Block::input_dim);
        let mut data = Vec::new();
        let mut targets = Vec::new();
        for b in blocks {
            ensure_dim("Block::concat", d, b.input_dim())?;
            data.extend_from_slice(b.inputs.as_slice());
            targets.extend_from_slice(&b.targets);
        }
        Block::new(Matrix::from_vec(targets.len(), d, data)?, targets)
    }
}

pub fn rmse(predicted: &[f64], truth: &[f64]) -> f64 {
    debug_assert_eq!(predicted.len(), truth.len());
    if truth.is_empty() {
        return 0.0;
    }
    let sse: f64 = predicted.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    libm::sqrt(sse / truth.len() as f64)
}
