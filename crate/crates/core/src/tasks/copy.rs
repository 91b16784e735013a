use rand::Rng;

use super::{sample_rng, Target, Task, TaskSample};

/// Sequence copying in decoder form.
///
/// A sample with `n` symbols reads `s_0 .. s_{n-1} SEP s_0 .. s_{n-2}` and the
/// model must emit `s_0 .. s_{n-1}` at positions `n .. 2n-1`, i.e. from the
/// separator onwards. The separator is token `vocab`.
#[derive(Debug, Clone)]
pub struct CopyTask {
    seed: u64,
    length: usize,
    vocab: usize,
}

impl CopyTask {
    /// `length` symbols drawn uniformly from `0..vocab`.
    pub fn new(seed: u64, length: usize, vocab: usize) -> Self {
        assert!(length >= 1 && vocab >= 1, "copy task needs length and vocab >= 1");
        CopyTask { seed, length, vocab }
    }

    pub fn separator(&self) -> usize {
        self.vocab
    }

    pub fn symbols(&self) -> usize {
        self.length
    }
}

impl Task for CopyTask {
    fn vocab_size(&self) -> usize {
        self.vocab + 1
    }

    fn max_len(&self) -> usize {
        2 * self.length
    }

    fn causal(&self) -> bool {
        true
    }

    fn sample(&self, index: u64) -> TaskSample {
        let mut rng = sample_rng(self.seed, index);
        let n = self.length;
        let src: Vec<usize> = (0..n).map(|_| rng.random_range(0..self.vocab)).collect();
        let mut input = Vec::with_capacity(2 * n);
        input.extend_from_slice(&src);
        input.push(self.vocab);
        input.extend_from_slice(&src[..n - 1]);
        TaskSample {
            input,
            target: Target::Tokens(src),
            target_start: n,
        }
    }
}
