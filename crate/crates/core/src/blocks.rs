use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{QfanError, Result};

/// Contiguous partition of `d` pixels into autoregressive blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPartition {
    d: usize,
    /// Block start offsets; block `i` spans `starts[i]..starts[i + 1]` (or `d`).
    starts: Vec<usize>,
}

impl BlockPartition {
    /// Blocks of `b` pixels, the last one possibly shorter: `B = ceil(d / b)`.
    pub fn uniform(d: usize, b: usize) -> Result<Self> {
        if d == 0 || b == 0 {
            return Err(QfanError::InvalidDimension(format!(
                "partition needs d >= 1 and b >= 1 (got d={d}, b={b})"
            )));
        }
        Ok(Self {
            d,
            starts: (0..d).step_by(b).collect(),
        })
    }

    /// Exactly `blocks` blocks whose sizes differ by at most one.
    pub fn balanced(d: usize, blocks: usize) -> Result<Self> {
        if d == 0 || blocks == 0 || blocks > d {
            return Err(QfanError::InvalidDimension(format!(
                "cannot split {d} pixels into {blocks} non-empty blocks"
            )));
        }
        let (base, extra) = (d / blocks, d % blocks);
        let mut starts = Vec::with_capacity(blocks);
        let mut at = 0;
        for i in 0..blocks {
            starts.push(at);
            at += base + usize::from(i < extra);
        }
        Ok(Self { d, starts })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn count(&self) -> usize {
        self.starts.len()
    }

    /// Widest block.
    pub fn max_width(&self) -> usize {
        (0..self.count()).map(|i| self.width(i)).max().unwrap_or(0)
    }

    pub fn range(&self, block: usize) -> Range<usize> {
        let end = self.starts.get(block + 1).copied().unwrap_or(self.d);
        self.starts[block]..end
    }

    pub fn width(&self, block: usize) -> usize {
        self.range(block).len()
    }

    /// Number of pixels preceding `block`.
    pub fn prefix_len(&self, block: usize) -> usize {
        self.starts[block]
    }

    pub fn ranges(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        (0..self.count()).map(move |i| self.range(i))
    }
}
