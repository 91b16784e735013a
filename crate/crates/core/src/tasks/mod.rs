//! Deterministic synthetic tasks and a plain-text corpus loader.
//!
//! Every generator is a pure function of `(seed, index)`: sample `i` is drawn
//! from its own ChaCha stream, so it does not depend on which other samples
//! were requested before it.

mod copy;
mod corpus;
mod export;
mod listops;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use copy::CopyTask;
pub use corpus::{load_text_corpus, Corpus, Split, SplitRatios, VocabMode};
pub use export::{read_records, write_records, Record};
pub use listops::{evaluate_text, Expr, ListOp, ListOpsTask, LISTOPS_VOCAB};

/// What a sample asks the model to produce.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// A token sequence, predicted at the positions reported by
    /// [`TaskSample::position_targets`].
    Tokens(Vec<usize>),
    /// A single class read off the last position.
    Label(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSample {
    pub input: Vec<usize>,
    pub target: Target,
    /// Index of the first position that carries a token target.
    #[serde(default)]
    pub target_start: usize,
}

impl TaskSample {
    pub fn len(&self) -> usize {
        self.input.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input.is_empty()
    }

    /// Per-position training targets; `None` positions do not enter the loss.
    pub fn position_targets(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.input.len()];
        match &self.target {
            Target::Tokens(t) => {
                for (i, &tok) in t.iter().enumerate() {
                    out[self.target_start + i] = Some(tok);
                }
            }
            Target::Label(l) => {
                if let Some(last) = out.last_mut() {
                    *last = Some(*l);
                }
            }
        }
        out
    }
}

/// A stream of samples addressed by index.
pub trait Task {
    fn vocab_size(&self) -> usize;
    /// Longest sequence the task can produce.
    fn max_len(&self) -> usize;
    /// Whether the model should read the input left to right only.
    fn causal(&self) -> bool;
    fn sample(&self, index: u64) -> TaskSample;

    fn samples(&self, start: u64, count: usize) -> Vec<TaskSample> {
        (start..start + count as u64).map(|i| self.sample(i)).collect()
    }
}

/// Serializable description of a task, used by configs and checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSpec {
    Copy { length: usize, vocab: usize },
    Listops { max_depth: usize, max_length: usize },
}

impl TaskSpec {
    pub fn build(&self, seed: u64) -> Box<dyn Task> {
        match *self {
            TaskSpec::Copy { length, vocab } => Box::new(CopyTask::new(seed, length, vocab)),
            TaskSpec::Listops { max_depth, max_length } => {
                Box::new(ListOpsTask::new(seed, max_depth, max_length))
            }
        }
    }
}

pub(crate) fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
