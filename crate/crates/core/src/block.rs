//! Product-space points: a fixed list of real blocks.

use crate::error::{ApalmError, Result};

/// Shape of the product space `H_1 x ... x H_m`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSpace {
    dims: Vec<usize>,
}

impl BlockSpace {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(ApalmError::Dimension("a block space needs at least one block".into()));
        }
        if let Some(j) = dims.iter().position(|&d| d == 0) {
            return Err(ApalmError::Dimension(format!("block {} has dimension 0", j + 1)));
        }
        Ok(BlockSpace { dims })
    }

    /// `m` blocks, each of dimension `dim`.
    pub fn uniform(m: usize, dim: usize) -> Result<Self> {
        Self::new(vec![dim; m])
    }

    pub fn num_blocks(&self) -> usize {
        self.dims.len()
    }

    pub fn dim(&self, j: usize) -> usize {
        self.dims[j]
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn total_dim(&self) -> usize {
        self.dims.iter().sum()
    }

    pub fn zeros(&self) -> BlockVector {
        BlockVector {
            blocks: self.dims.iter().map(|&d| vec![0.0; d]).collect(),
        }
    }

    pub fn check_block(&self, j: usize) -> Result<()> {
        if j >= self.dims.len() {
            return Err(ApalmError::BlockIndex {
                index: j,
                blocks: self.dims.len(),
            });
        }
        Ok(())
    }

    pub fn check(&self, x: &BlockVector) -> Result<()> {
        if x.blocks.len() != self.dims.len() {
            return Err(ApalmError::Dimension(format!(
                "expected {} blocks, got {}",
                self.dims.len(),
                x.blocks.len()
            )));
        }
        for (j, (b, &d)) in x.blocks.iter().zip(&self.dims).enumerate() {
            if b.len() != d {
                return Err(ApalmError::Dimension(format!(
                    "block {} has length {}, expected {}",
                    j + 1,
                    b.len(),
                    d
                )));
            }
        }
        Ok(())
    }
}

/// A point of the product space, stored block by block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockVector {
    blocks: Vec<Vec<f64>>,
}

impl BlockVector {
    pub fn from_blocks(blocks: Vec<Vec<f64>>) -> Self {
        BlockVector { blocks }
    }

    /// Blocks of one scalar each.
    pub fn from_scalars(values: &[f64]) -> Self {
        BlockVector {
            blocks: values.iter().map(|&v| vec![v]).collect(),
        }
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, j: usize) -> &[f64] {
        &self.blocks[j]
    }

    pub fn block_mut(&mut self, j: usize) -> &mut Vec<f64> {
        &mut self.blocks[j]
    }

    pub fn set_block(&mut self, j: usize, value: &[f64]) {
        self.blocks[j].copy_from_slice(value);
    }

    pub fn blocks(&self) -> &[Vec<f64>] {
        &self.blocks
    }

    pub fn into_blocks(self) -> Vec<Vec<f64>> {
        self.blocks
    }

    pub fn iter_flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.blocks.iter().flat_map(|b| b.iter().copied())
    }

    pub fn norm_sq(&self) -> f64 {
        self.blocks.iter().map(|b| norm_sq(b)).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dist_sq(&self, other: &BlockVector) -> f64 {
        self.blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| dist_sq(a, b))
            .sum()
    }

    pub fn dist(&self, other: &BlockVector) -> f64 {
        self.dist_sq(other).sqrt()
    }

    pub fn dot(&self, other: &BlockVector) -> f64 {
        self.blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| dot(a, b))
            .sum()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
