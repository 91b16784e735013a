use std::ops::Range;

use crate::error::{Error, Result};

/// Contiguous partition of `[0, len)` into chunks of `chunk_size` rows; the
/// last chunk is shorter when `chunk_size` does not divide `len`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkPlan {
    len: usize,
    chunk_size: usize,
}

impl ChunkPlan {
    pub fn new(len: usize, chunk_size: usize) -> Result<Self> {
        if chunk_size == 0 {
            return Err(Error::InvalidConfig("chunk size must be at least 1".into()));
        }
        Ok(Self { len, chunk_size })
    }

    pub fn chunk_size(&self) -> usize {
        self.chunk_size
    }

    pub fn num_chunks(&self) -> usize {
        self.len.div_ceil(self.chunk_size)
    }

    /// Largest number of rows in any chunk.
    pub fn max_rows(&self) -> usize {
        self.chunk_size.min(self.len)
    }

    pub fn chunks(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        (0..self.num_chunks()).map(move |i| {
            let start = i * self.chunk_size;
            start..(start + self.chunk_size).min(self.len)
        })
    }
}
