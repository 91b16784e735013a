use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::tensor::{Matrix, Scalar};

/// Activation applied to (selected) query-key scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Softmax,
    Relu,
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Softmax => "softmax",
            Activation::Relu => "relu",
        })
    }
}

impl FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "softmax" => Ok(Activation::Softmax),
            "relu" => Ok(Activation::Relu),
            other => Err(format!("unknown activation `{other}`")),
        }
    }
}

/// How many keys each query keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TopK {
    All,
    Keep(usize),
}

impl TopK {
    /// Effective number of kept keys for `n_keys` keys.
    pub fn resolve(self, n_keys: usize) -> usize {
        match self {
            TopK::All => n_keys,
            TopK::Keep(k) => k.min(n_keys),
        }
    }

    /// True when every key is kept for `n_keys` keys.
    pub fn keeps_all(self, n_keys: usize) -> bool {
        match self {
            TopK::All => true,
            TopK::Keep(k) => k >= n_keys,
        }
    }
}

impl fmt::Display for TopK {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopK::All => f.write_str("all"),
            TopK::Keep(k) => write!(f, "{k}"),
        }
    }
}

impl FromStr for TopK {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(TopK::All);
        }
        match s.parse::<usize>() {
            Ok(0) => Err("k must be at least 1".into()),
            Ok(k) => Ok(TopK::Keep(k)),
            Err(_) => Err(format!("invalid k `{s}` (expected a positive integer or `all`)")),
        }
    }
}

impl Serialize for TopK {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            TopK::All => s.serialize_str("all"),
            TopK::Keep(k) => s.serialize_u64(*k as u64),
        }
    }
}

impl<'de> Deserialize<'de> for TopK {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(0) => Err(serde::de::Error::custom("k must be at least 1")),
            Raw::Num(k) => Ok(TopK::Keep(k as usize)),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Key-visibility pattern, the additive `{0, -inf}` mask in boolean form.
#[derive(Debug, Clone, Default)]
pub enum MaskSpec {
    #[default]
    None,
    /// Key `j` is visible to global query row `g` iff `j <= g`.
    Causal,
    Explicit(ExplicitMask),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplicitMask {
    rows: usize,
    cols: usize,
    allowed: Arc<Vec<bool>>,
}

impl ExplicitMask {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn allows(&self, row: usize, col: usize) -> bool {
        self.allowed[row * self.cols + col]
    }
}

impl MaskSpec {
    /// From an additive mask whose entries are all `0` or `-inf`.
    pub fn explicit<T: Scalar>(mask: &Matrix<T>) -> Result<Self> {
        let mut allowed = Vec::with_capacity(mask.len());
        for &x in mask.as_slice() {
            if x == T::zero() {
                allowed.push(true);
            } else if x == T::neg_infinity() {
                allowed.push(false);
            } else {
                return Err(Error::InvalidConfig(format!(
                    "explicit mask entries must be 0 or -inf, found {x}"
                )));
            }
        }
        Self::from_allowed(mask.rows(), mask.cols(), allowed)
    }

    pub fn from_allowed(rows: usize, cols: usize, allowed: Vec<bool>) -> Result<Self> {
        if allowed.len() != rows * cols {
            return Err(Error::shape(
                "MaskSpec::from_allowed",
                format!("{} flags for {rows}x{cols}", allowed.len()),
            ));
        }
        Ok(MaskSpec::Explicit(ExplicitMask {
            rows,
            cols,
            allowed: Arc::new(allowed),
        }))
    }

    pub fn is_none(&self) -> bool {
        matches!(self, MaskSpec::None)
    }

    pub fn name(&self) -> &'static str {
        match self {
            MaskSpec::None => "none",
            MaskSpec::Causal => "causal",
            MaskSpec::Explicit(_) => "explicit",
        }
    }

    /// Whether global query row `row` may attend to key `col`.
    pub fn allows(&self, row: usize, col: usize) -> bool {
        match self {
            MaskSpec::None => true,
            MaskSpec::Causal => col <= row,
            MaskSpec::Explicit(m) => m.allows(row, col),
        }
    }

    /// The additive form `B` as a dense `[rows, cols]` matrix.
    pub fn to_additive<T: Scalar>(&self, rows: usize, cols: usize) -> Matrix<T> {
        Matrix::from_fn(rows, cols, |r, c| {
            if self.allows(r, c) {
                T::zero()
            } else {
                T::neg_infinity()
            }
        })
    }

    pub(crate) fn check_shape(&self, n_queries: usize, n_keys: usize) -> Result<()> {
        if let MaskSpec::Explicit(m) = self {
            if m.rows != n_queries || m.cols != n_keys {
                return Err(Error::shape(
                    "mask",
                    format!(
                        "explicit mask is {}x{}, attention is {n_queries}x{n_keys}",
                        m.rows, m.cols
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Keys visible to global query row `g` among `cols`: a prefix length and,
    /// for explicit masks, the per-key flags of that row.
    pub(crate) fn row_visibility(&self, g: usize, cols: usize) -> (usize, Option<&[bool]>) {
        match self {
            MaskSpec::None => (cols, None),
            MaskSpec::Causal => ((g + 1).min(cols), None),
            MaskSpec::Explicit(m) => (cols, Some(&m.allowed[g * m.cols..(g + 1) * m.cols])),
        }
    }

    /// Sets hidden scores of a block of rows starting at global row
    /// `row_offset` to `-inf`. Errors if a row ends up fully hidden.
    pub(crate) fn apply<T: Scalar>(&self, scores: &mut [T], cols: usize, row_offset: usize) -> Result<()> {
        if cols == 0 {
            return Ok(());
        }
        for (r, row) in scores.chunks_mut(cols).enumerate() {
            let g = row_offset + r;
            match self {
                MaskSpec::None => {}
                MaskSpec::Causal => {
                    if g + 1 < cols {
                        row[g + 1..].fill(T::neg_infinity());
                    }
                }
                MaskSpec::Explicit(m) => {
                    let allowed = &m.allowed[g * m.cols..(g + 1) * m.cols];
                    for (x, &ok) in row.iter_mut().zip(allowed) {
                        if !ok {
                            *x = T::neg_infinity();
                        }
                    }
                }
            }
            if !row.iter().any(|x| x.is_finite()) {
                return Err(Error::DegenerateRow { row: g });
            }
        }
        Ok(())
    }
}

/// Knobs of one attention call.
#[derive(Debug, Clone)]
pub struct AttentionConfig {
    pub activation: Activation,
    pub k: TopK,
    /// Query rows processed per chunk by the chunked engines.
    pub chunk_size: usize,
    pub mask: MaskSpec,
    /// Scores are `q·kᵀ / temperature`; `None` means `sqrt(d)`.
    pub temperature: Option<f64>,
    /// Accumulate the value gradient directly from the k selected entries
    /// instead of through a scattered `[C, L_K]` matrix.
    pub sparse_value_grad: bool,
}

pub const DEFAULT_ATTENTION_CHUNK: usize = 1024;
pub const DEFAULT_FF_CHUNK: usize = 16384;

impl Default for AttentionConfig {
    fn default() -> Self {
        Self::softmax()
    }
}

impl AttentionConfig {
    /// Softmax self-attention: all keys, no mask, temperature `sqrt(d)`.
    pub fn softmax() -> Self {
        Self {
            activation: Activation::Softmax,
            k: TopK::All,
            chunk_size: DEFAULT_ATTENTION_CHUNK,
            mask: MaskSpec::None,
            temperature: None,
            sparse_value_grad: false,
        }
    }

    /// Feed-forward layer as attention: ReLU, no mask, no temperature.
    pub fn feed_forward() -> Self {
        Self {
            activation: Activation::Relu,
            k: TopK::All,
            chunk_size: DEFAULT_FF_CHUNK,
            mask: MaskSpec::None,
            temperature: Some(1.0),
            sparse_value_grad: false,
        }
    }

    pub fn with_k(mut self, k: TopK) -> Self {
        self.k = k;
        self
    }

    pub fn with_top(self, k: usize) -> Self {
        self.with_k(TopK::Keep(k))
    }

    pub fn with_chunk(mut self, chunk_size: usize) -> Self {
        self.chunk_size = chunk_size;
        self
    }

    pub fn with_mask(mut self, mask: MaskSpec) -> Self {
        self.mask = mask;
        self
    }

    pub fn causal(self) -> Self {
        self.with_mask(MaskSpec::Causal)
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = Some(temperature);
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn with_sparse_value_grad(mut self, on: bool) -> Self {
        self.sparse_value_grad = on;
        self
    }

    /// The factor `1 / temperature` applied to queries for head dim `d`.
    pub fn query_scale(&self, d: usize) -> f64 {
        1.0 / self.temperature.unwrap_or((d as f64).sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.temperature {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::InvalidConfig(format!("temperature must be positive, got {t}")));
            }
        }
        if self.chunk_size == 0 {
            return Err(Error::InvalidConfig("chunk size must be at least 1".into()));
        }
        if self.k == TopK::Keep(0) {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        Ok(())
    }
}
