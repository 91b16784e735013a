//! Run configurations: TOML files whose keys match the field names below,
//! overridden by command-line flags, echoed back as TOML.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::bench::{BenchCase, BenchTarget, Grid, DEFAULT_BUDGET};
use crate::engine::AttentionMode;
use crate::error::{Error, Result};
use crate::nn::{ModelConfig, SublayerSpec, Sublayers, TrainConfig, EVAL_OFFSET};
use crate::reference::{TopK, DEFAULT_ATTENTION_CHUNK, DEFAULT_FF_CHUNK};
use crate::tasks::{Task, TaskSpec};
use crate::tensor::DType;

/// Reads `path` (or starts from the defaults when there is none), then
/// applies `overrides`. Unknown keys are rejected.
pub fn load_config<C, F>(path: Option<&Path>, overrides: F) -> Result<C>
where
    C: DeserializeOwned + Default,
    F: FnOnce(&mut C) -> Result<()>,
{
    let mut cfg = match path {
        None => C::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
    };
    overrides(&mut cfg)?;
    Ok(cfg)
}

/// The configuration as TOML, parseable by [`load_config`].
pub fn echo_config<C: Serialize>(cfg: &C) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::Config(e.to_string()))
}

/// Settings for `bench mha|ff|stack`. The target comes from the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub mode: AttentionMode,
    /// Sequence length; for `ff`, the number of tokens.
    #[serde(rename = "L")]
    pub length: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    /// Defaults to 64 under `chunked_topk` and to all keys otherwise.
    pub k: Option<TopK>,
    pub chunk: usize,
    pub layers: usize,
    pub dtype: DType,
    pub seed: u64,
    pub repeats: usize,
    /// Tracked-byte budget per case.
    pub budget: usize,
    pub csv: Option<PathBuf>,
    pub json: Option<PathBuf>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        let base = BenchCase::default();
        BenchConfig {
            mode: base.mode,
            length: base.l_q,
            d_model: base.d_model,
            heads: base.heads,
            d_ff: base.d_ff,
            k: None,
            chunk: base.chunk,
            layers: base.layers,
            dtype: base.dtype,
            seed: base.seed,
            repeats: base.repeats,
            budget: DEFAULT_BUDGET,
            csv: None,
            json: None,
        }
    }
}

fn default_k(mode: AttentionMode) -> TopK {
    match mode {
        AttentionMode::ChunkedTopk => TopK::Keep(64),
        _ => TopK::All,
    }
}

impl BenchConfig {
    pub fn case(&self, target: BenchTarget) -> BenchCase {
        let l_k = match target {
            BenchTarget::Ff => self.d_ff,
            _ => self.length,
        };
        BenchCase {
            target,
            mode: self.mode,
            l_q: self.length,
            l_k,
            d_model: self.d_model,
            heads: self.heads,
            d_ff: self.d_ff,
            k: self.k.unwrap_or(default_k(self.mode)),
            chunk: self.chunk,
            layers: self.layers,
            dtype: self.dtype,
            seed: self.seed,
            repeats: self.repeats,
        }
    }
}

/// Settings for `sweep`: a base case and the axes to vary. Empty axes keep
/// the base value; `k` and `ks` only apply to `chunked_topk` cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub target: BenchTarget,
    #[serde(rename = "L")]
    pub length: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub k: TopK,
    pub chunk: usize,
    pub layers: usize,
    pub dtype: DType,
    pub seed: u64,
    pub repeats: usize,
    pub budget: usize,
    pub modes: Vec<AttentionMode>,
    /// Sequence lengths, or `d_ff` values for `ff`.
    pub lengths: Vec<usize>,
    pub chunks: Vec<usize>,
    pub ks: Vec<TopK>,
    pub csv: Option<PathBuf>,
    pub json: Option<PathBuf>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let base = BenchCase::default();
        SweepConfig {
            target: base.target,
            length: base.l_q,
            d_model: base.d_model,
            heads: base.heads,
            d_ff: base.d_ff,
            k: base.k,
            chunk: base.chunk,
            layers: base.layers,
            dtype: base.dtype,
            seed: base.seed,
            repeats: base.repeats,
            budget: DEFAULT_BUDGET,
            modes: AttentionMode::ALL.to_vec(),
            lengths: vec![256, 512, 1024, 2048],
            chunks: Vec::new(),
            ks: Vec::new(),
            csv: None,
            json: None,
        }
    }
}

impl SweepConfig {
    pub fn grid(&self) -> Grid {
        let l_k = match self.target {
            BenchTarget::Ff => self.d_ff,
            _ => self.length,
        };
        Grid {
            base: BenchCase {
                target: self.target,
                mode: AttentionMode::ChunkedTopk,
                l_q: self.length,
                l_k,
                d_model: self.d_model,
                heads: self.heads,
                d_ff: self.d_ff,
                k: self.k,
                chunk: self.chunk,
                layers: self.layers,
                dtype: self.dtype,
                seed: self.seed,
                repeats: self.repeats,
            },
            modes: self.modes.clone(),
            lengths: self.lengths.clone(),
            chunks: self.chunks.clone(),
            ks: self.ks.clone(),
        }
    }
}

/// Model size; vocabulary, maximum length and causality come from the task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSettings {
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub layers: usize,
    pub tied_output: bool,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings {
            d_model: 64,
            heads: 4,
            d_ff: 256,
            layers: 2,
            tied_output: true,
        }
    }
}

impl ModelSettings {
    pub fn for_task(&self, task: &dyn Task) -> ModelConfig {
        ModelConfig {
            vocab: task.vocab_size(),
            max_len: task.max_len(),
            d_model: self.d_model,
            heads: self.heads,
            d_ff: self.d_ff,
            layers: self.layers,
            causal: task.causal(),
            tied_output: self.tied_output,
        }
    }
}

/// Settings for `train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainRunConfig {
    pub task_seed: u64,
    pub dtype: DType,
    /// Where to write the trained weights.
    pub checkpoint: Option<PathBuf>,
    pub task: TaskSpec,
    pub model: ModelSettings,
    pub attn: SublayerSpec,
    pub ff: SublayerSpec,
    pub train: TrainConfig,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        TrainRunConfig {
            task_seed: 1,
            dtype: DType::F32,
            checkpoint: None,
            task: TaskSpec::Copy { length: 16, vocab: 16 },
            model: ModelSettings::default(),
            attn: SublayerSpec::dense(DEFAULT_ATTENTION_CHUNK),
            ff: SublayerSpec::dense(DEFAULT_FF_CHUNK),
            train: TrainConfig {
                seed: 1,
                ..TrainConfig::default()
            },
        }
    }
}

impl TrainRunConfig {
    pub fn sublayers(&self) -> Sublayers {
        Sublayers {
            attn: self.attn,
            ff: self.ff,
        }
    }
}

/// Settings for `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub checkpoint: Option<PathBuf>,
    pub samples: usize,
    /// Index of the first evaluation sample.
    pub start: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            checkpoint: None,
            samples: 500,
            start: EVAL_OFFSET,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Sublayer {
    Attn,
    Ff,
}

/// Settings for `swap-eval`: evaluate a checkpoint with one sublayer
/// switched from the mode it was trained in to another.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SwapEvalConfig {
    pub checkpoint: Option<PathBuf>,
    pub sublayer: Sublayer,
    pub from: AttentionMode,
    pub to: AttentionMode,
    pub k: TopK,
    /// Chunk size under the new mode; defaults to the trained one.
    pub chunk: Option<usize>,
    pub samples: usize,
    pub start: u64,
}

impl Default for SwapEvalConfig {
    fn default() -> Self {
        SwapEvalConfig {
            checkpoint: None,
            sublayer: Sublayer::Ff,
            from: AttentionMode::Dense,
            to: AttentionMode::ChunkedTopk,
            k: TopK::Keep(64),
            chunk: None,
            samples: 500,
            start: EVAL_OFFSET,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::gradcheck::GradcheckConfig;

    fn round_trip<C>(cfg: &C)
    where
        C: Serialize + DeserializeOwned + PartialEq + std::fmt::Debug,
    {
        let text = echo_config(cfg).unwrap();
        let back: C = toml::from_str(&text).unwrap();
        assert_eq!(&back, cfg, "{text}");
    }

    #[test]
    fn defaults_round_trip() {
        round_trip(&BenchConfig::default());
        round_trip(&SweepConfig::default());
        round_trip(&TrainRunConfig::default());
        round_trip(&EvalConfig::default());
        round_trip(&SwapEvalConfig::default());
        round_trip(&GradcheckConfig::default());
    }

    #[test]
    fn non_default_values_round_trip() {
        let mut t = TrainRunConfig::default();
        t.task = TaskSpec::Listops { max_depth: 3, max_length: 64 };
        t.attn = SublayerSpec::topk(8, 16);
        t.train.clip_norm = 0.0;
        t.checkpoint = Some("out/model.ckpt".into());
        round_trip(&t);
        let b = BenchConfig { k: Some(TopK::All), csv: Some("x.csv".into()), ..Default::default() };
        round_trip(&b);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.toml");
        std::fs::write(&path, "[train]\nsteps = 5\n[model]\nlayers = 1\n").unwrap();
        let cfg: TrainRunConfig = load_config(Some(&path), |_| Ok(())).unwrap();
        assert_eq!(cfg.train.steps, 5);
        assert_eq!(cfg.train.batch, TrainConfig::default().batch);
        assert_eq!(cfg.model.layers, 1);
        assert_eq!(cfg.model.d_model, 64);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<BenchConfig>("L = 64\nchunks = 3\n").unwrap_err();
        assert!(err.to_string().contains("chunks"), "{err}");
        assert!(toml::from_str::<TrainRunConfig>("[model]\nwidth = 3\n").is_err());
    }

    #[test]
    fn ff_bench_uses_d_ff_keys() {
        let cfg = BenchConfig { length: 32, d_ff: 512, ..Default::default() };
        let case = cfg.case(BenchTarget::Ff);
        assert_eq!((case.l_q, case.l_k), (32, 512));
        case.validate().unwrap();
    }

    #[test]
    fn recompute_defaults_to_all_keys() {
        let cfg = BenchConfig { mode: AttentionMode::ChunkedRecompute, ..Default::default() };
        assert_eq!(cfg.case(BenchTarget::Mha).k, TopK::All);
    }
}
