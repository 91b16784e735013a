use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use crate::engine::AttentionMode;
use crate::error::{Error, Result};
use crate::reference::{Activation, AttentionConfig, TopK, DEFAULT_ATTENTION_CHUNK, DEFAULT_FF_CHUNK};
use crate::tensor::{Matrix, Scalar};

const LN_EPS: f64 = 1e-5;

/// Shape of a pre-norm transformer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab: usize,
    /// Longest input; sizes the positional table.
    pub max_len: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub layers: usize,
    /// Decoder (causal self-attention) or encoder.
    pub causal: bool,
    /// Reuse the token embedding as output projection.
    #[serde(default = "yes")]
    pub tied_output: bool,
}

fn yes() -> bool {
    true
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.vocab == 0 || self.max_len == 0 || self.d_model == 0 || self.heads == 0 || self.d_ff == 0 {
            return bad(format!("model sizes must be positive: {self:?}"));
        }
        if self.d_model % self.heads != 0 {
            return bad(format!("d_model {} not divisible by {} heads", self.d_model, self.heads));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    /// Names and shapes of all parameters in storage order.
    pub fn param_specs(&self) -> Vec<(String, usize, usize)> {
        let (d, dh) = (self.d_model, self.head_dim());
        let mut v = vec![
            ("tok_emb".to_string(), self.vocab, d),
            ("pos_emb".to_string(), self.max_len, d),
        ];
        for l in 0..self.layers {
            let p = format!("layer{l}");
            v.push((format!("{p}.ln1.gain"), 1, d));
            v.push((format!("{p}.ln1.offset"), 1, d));
            for h in 0..self.heads {
                for w in ["w_q", "w_k", "w_v"] {
                    v.push((format!("{p}.attn.h{h}.{w}"), d, dh));
                }
            }
            v.push((format!("{p}.attn.w_o"), d, d));
            v.push((format!("{p}.ln2.gain"), 1, d));
            v.push((format!("{p}.ln2.offset"), 1, d));
            v.push((format!("{p}.ff.w_k"), self.d_ff, d));
            v.push((format!("{p}.ff.w_v"), self.d_ff, d));
        }
        if !self.tied_output {
            v.push(("out".to_string(), d, self.vocab));
        }
        v
    }

    pub fn layout(&self) -> Layout {
        let mut next = 2;
        let mut take = |n: usize| {
            let s = next;
            next += n;
            s
        };
        let layers = (0..self.layers)
            .map(|_| {
                let ln1 = take(2);
                let heads = take(3 * self.heads);
                let w_o = take(1);
                let ln2 = take(2);
                let ff = take(2);
                LayerIds {
                    ln1: [ln1, ln1 + 1],
                    w_q: (0..self.heads).map(|h| heads + 3 * h).collect(),
                    w_k: (0..self.heads).map(|h| heads + 3 * h + 1).collect(),
                    w_v: (0..self.heads).map(|h| heads + 3 * h + 2).collect(),
                    w_o,
                    ln2: [ln2, ln2 + 1],
                    ff: [ff, ff + 1],
                }
            })
            .collect();
        let out = (!self.tied_output).then(|| take(1));
        Layout {
            tok_emb: 0,
            pos_emb: 1,
            layers,
            out,
            count: next,
        }
    }
}

/// Parameter ids of one block.
#[derive(Debug, Clone)]
pub struct LayerIds {
    pub ln1: [usize; 2],
    pub w_q: Vec<usize>,
    pub w_k: Vec<usize>,
    pub w_v: Vec<usize>,
    pub w_o: usize,
    pub ln2: [usize; 2],
    /// FF keys then values.
    pub ff: [usize; 2],
}

/// Parameter ids of the whole model.
#[derive(Debug, Clone)]
pub struct Layout {
    pub tok_emb: usize,
    pub pos_emb: usize,
    pub layers: Vec<LayerIds>,
    pub out: Option<usize>,
    pub count: usize,
}

/// How one kind of sublayer evaluates its attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SublayerSpec {
    pub mode: AttentionMode,
    pub k: TopK,
    pub chunk: usize,
}

impl SublayerSpec {
    pub fn dense(chunk: usize) -> Self {
        SublayerSpec {
            mode: AttentionMode::Dense,
            k: TopK::All,
            chunk,
        }
    }

    pub fn topk(k: usize, chunk: usize) -> Self {
        SublayerSpec {
            mode: AttentionMode::ChunkedTopk,
            k: TopK::Keep(k),
            chunk,
        }
    }
}

/// Evaluation settings for the self-attention and feed-forward sublayers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sublayers {
    pub attn: SublayerSpec,
    pub ff: SublayerSpec,
}

impl Default for Sublayers {
    fn default() -> Self {
        Sublayers {
            attn: SublayerSpec::dense(DEFAULT_ATTENTION_CHUNK),
            ff: SublayerSpec::dense(DEFAULT_FF_CHUNK),
        }
    }
}

impl Sublayers {
    /// Softmax self-attention, temperature √d per head.
    pub fn attn_config(&self, causal: bool) -> AttentionConfig {
        let cfg = AttentionConfig::softmax().with_k(self.attn.k).with_chunk(self.attn.chunk);
        if causal {
            cfg.causal()
        } else {
            cfg
        }
    }

    /// ReLU over the feed-forward keys, no temperature, no mask.
    pub fn ff_config(&self) -> AttentionConfig {
        AttentionConfig::feed_forward().with_k(self.ff.k).with_chunk(self.ff.chunk)
    }
}

/// All weights of a model in the order of [`ModelConfig::param_specs`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T: Scalar> {
    config: ModelConfig,
    tensors: Vec<Matrix<T>>,
}

impl<T: Scalar> ModelParams<T> {
    /// Gaussian weights scaled by fan-in, unit layer-norm gains, zero offsets.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = config
            .param_specs()
            .into_iter()
            .map(|(name, r, c)| {
                if name.ends_with(".gain") {
                    Matrix::filled(r, c, T::one())
                } else if name.ends_with(".offset") {
                    Matrix::zeros(r, c)
                } else {
                    // the value table and output projection are read along their rows
                    let fan_in = if name.ends_with("ff.w_v") || name == "out" { r } else { config.d_model };
                    Matrix::random_normal(r, c, 1.0 / (fan_in as f64).sqrt(), &mut rng)
                }
            })
            .collect();
        Ok(ModelParams {
            config: config.clone(),
            tensors,
        })
    }

    /// Wraps tensors whose shapes must match the config.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<Matrix<T>>) -> Result<Self> {
        config.validate()?;
        let specs = config.param_specs();
        if specs.len() != tensors.len() {
            return Err(Error::shape(
                "model params",
                format!("{} tensors for {} parameters", tensors.len(), specs.len()),
            ));
        }
        for ((name, r, c), t) in specs.iter().zip(&tensors) {
            if t.shape() != (*r, *c) {
                return Err(Error::shape("model params", format!("{name}: {:?} vs [{r}, {c}]", t.shape())));
            }
        }
        Ok(ModelParams { config, tensors })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[Matrix<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Matrix<T>] {
        &mut self.tensors
    }

    pub fn get(&self, id: usize) -> &Matrix<T> {
        &self.tensors[id]
    }

    pub fn by_name(&self, name: &str) -> Option<&Matrix<T>> {
        let specs = self.config.param_specs();
        specs.iter().position(|(n, _, _)| n == name).map(|i| &self.tensors[i])
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Matrix::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Matrix::is_finite)
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            tensors: self.tensors.iter().map(Matrix::cast).collect(),
        }
    }

    pub fn mha(&self, layer: usize) -> MhaParams<T> {
        let ids = &self.config.layout().layers[layer];
        let pick = |v: &[usize]| v.iter().map(|&i| self.tensors[i].clone()).collect();
        MhaParams {
            w_q: pick(&ids.w_q),
            w_k: pick(&ids.w_k),
            w_v: pick(&ids.w_v),
            w_o: self.tensors[ids.w_o].clone(),
        }
    }

    pub fn ff(&self, layer: usize) -> FfParams<T> {
        let ids = &self.config.layout().layers[layer];
        FfParams {
            w_k: self.tensors[ids.ff[0]].clone(),
            w_v: self.tensors[ids.ff[1]].clone(),
        }
    }
}

/// Per-head projections `[d_model, d]` and the shared output `[d_model, d_model]`.
#[derive(Debug, Clone)]
pub struct MhaParams<T: Scalar> {
    pub w_q: Vec<Matrix<T>>,
    pub w_k: Vec<Matrix<T>>,
    pub w_v: Vec<Matrix<T>>,
    pub w_o: Matrix<T>,
}

/// Feed-forward keys and values, both `[d_ff, d_model]`.
#[derive(Debug, Clone)]
pub struct FfParams<T: Scalar> {
    pub w_k: Matrix<T>,
    pub w_v: Matrix<T>,
}

/// Tape handles for one multi-head attention sublayer.
#[derive(Debug, Clone)]
pub struct MhaVars {
    pub w_q: Vec<Var>,
    pub w_k: Vec<Var>,
    pub w_v: Vec<Var>,
    pub w_o: Var,
}

/// Multi-head attention on the tape: per-head projections and attention,
/// concatenation, output projection.
pub fn mha<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    p: &MhaVars,
    cfg: &AttentionConfig,
    mode: AttentionMode,
) -> Result<Var> {
    if p.w_q.is_empty() || p.w_q.len() != p.w_k.len() || p.w_q.len() != p.w_v.len() {
        return Err(Error::shape("mha", "per-head projection counts differ"));
    }
    let mut heads = Vec::with_capacity(p.w_q.len());
    for h in 0..p.w_q.len() {
        let q = tape.matmul(x, p.w_q[h], false)?;
        let k = tape.matmul(x, p.w_k[h], false)?;
        let v = tape.matmul(x, p.w_v[h], false)?;
        heads.push(tape.attention(q, k, v, cfg, mode)?);
    }
    let cat = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads)? };
    tape.matmul(cat, p.w_o, false)
}

/// Feed-forward sublayer as attention over the learned keys and values.
pub fn ff<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    w_k: Var,
    w_v: Var,
    cfg: &AttentionConfig,
    mode: AttentionMode,
) -> Result<Var> {
    if !cfg.mask.is_none() {
        return Err(Error::InvalidConfig(
            "feed-forward keys have no order; masking is not supported".into(),
        ));
    }
    if cfg.activation != Activation::Relu {
        return Err(Error::InvalidConfig("feed-forward sublayer needs relu".into()));
    }
    tape.attention(x, w_k, w_v, cfg, mode)
}

/// Evaluates [`mha`] without keeping gradients.
pub fn mha_forward<T: Scalar>(
    x: &Matrix<T>,
    p: &MhaParams<T>,
    cfg: &AttentionConfig,
    mode: AttentionMode,
) -> Result<Matrix<T>> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let mut c = |m: &Matrix<T>| tape.constant(m.clone());
    let vars = MhaVars {
        w_q: p.w_q.iter().map(&mut c).collect(),
        w_k: p.w_k.iter().map(&mut c).collect(),
        w_v: p.w_v.iter().map(&mut c).collect(),
        w_o: c(&p.w_o),
    };
    let out = mha(&mut tape, xv, &vars, cfg, mode)?;
    Ok(tape.value(out).clone())
}

/// Evaluates [`ff`] without keeping gradients.
pub fn ff_forward<T: Scalar>(
    x: &Matrix<T>,
    p: &FfParams<T>,
    cfg: &AttentionConfig,
    mode: AttentionMode,
) -> Result<Matrix<T>> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let k = tape.constant(p.w_k.clone());
    let v = tape.constant(p.w_v.clone());
    let out = ff(&mut tape, xv, k, v, cfg, mode)?;
    Ok(tape.value(out).clone())
}

/// Dropout applied to each sublayer output during training.
pub struct Dropout<'r> {
    pub rate: f64,
    pub rng: &'r mut dyn RngCore,
}

/// Builds the full model on `tape`, registering every parameter once, and
/// returns the logits node `[len, vocab]`.
pub fn transformer_tape<T: Scalar>(
    tape: &mut Tape<T>,
    tokens: &[usize],
    params: &ModelParams<T>,
    sub: &Sublayers,
    mut dropout: Option<Dropout<'_>>,
) -> Result<Var> {
    let cfg = params.config();
    if tokens.is_empty() || tokens.len() > cfg.max_len {
        return Err(Error::shape(
            "transformer",
            format!("{} tokens for max_len {}", tokens.len(), cfg.max_len),
        ));
    }
    let layout = cfg.layout();
    let vars: Vec<Var> = params
        .tensors()
        .iter()
        .enumerate()
        .map(|(i, t)| tape.param(i, t))
        .collect::<Result<_>>()?;
    let attn_cfg = sub.attn_config(cfg.causal);
    let ff_cfg = sub.ff_config();

    let tok = tape.embedding(vars[layout.tok_emb], tokens)?;
    let positions: Vec<usize> = (0..tokens.len()).collect();
    let pos = tape.embedding(vars[layout.pos_emb], &positions)?;
    let mut h = tape.add(tok, pos)?;
    for ids in &layout.layers {
        let a_in = tape.layer_norm(h, vars[ids.ln1[0]], vars[ids.ln1[1]], LN_EPS)?;
        let mv = MhaVars {
            w_q: ids.w_q.iter().map(|&i| vars[i]).collect(),
            w_k: ids.w_k.iter().map(|&i| vars[i]).collect(),
            w_v: ids.w_v.iter().map(|&i| vars[i]).collect(),
            w_o: vars[ids.w_o],
        };
        let mut a = mha(tape, a_in, &mv, &attn_cfg, sub.attn.mode)?;
        if let Some(d) = dropout.as_mut() {
            a = tape.dropout(a, d.rate, &mut *d.rng)?;
        }
        h = tape.add(h, a)?;

        let f_in = tape.layer_norm(h, vars[ids.ln2[0]], vars[ids.ln2[1]], LN_EPS)?;
        let mut f = ff(tape, f_in, vars[ids.ff[0]], vars[ids.ff[1]], &ff_cfg, sub.ff.mode)?;
        if let Some(d) = dropout.as_mut() {
            f = tape.dropout(f, d.rate, &mut *d.rng)?;
        }
        h = tape.add(h, f)?;
    }
    match layout.out {
        Some(out) => tape.matmul(h, vars[out], false),
        None => tape.matmul(h, vars[layout.tok_emb], true),
    }
}

/// Logits `[len, vocab]` for one sequence.
pub fn transformer_forward<T: Scalar>(
    tokens: &[usize],
    params: &ModelParams<T>,
    sub: &Sublayers,
) -> Result<Matrix<T>> {
    let mut tape = Tape::new();
    let logits = transformer_tape(&mut tape, tokens, params, sub, None)?;
    Ok(tape.value(logits).clone())
}
