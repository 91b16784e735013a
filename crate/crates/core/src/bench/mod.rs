//! Wall-time and tracked-peak-memory measurement of attention layers,
//! feed-forward layers and full stacks.

mod case;
mod fit;
mod run;
mod sink;

pub use case::{BenchCase, BenchTarget, STACK_VOCAB};
pub use fit::{fit_scaling, LinearFit, Predictor, ScalingFit};
pub use run::{run_case, BenchRecord, BenchStatus, DEFAULT_BUDGET};
pub use sink::{read_csv, CsvSink, JsonSink, RecordSink, Row, Tee, CSV_HEADER};

use serde::{Deserialize, Serialize};

use crate::engine::AttentionMode;
use crate::error::Result;
use crate::reference::TopK;

/// Runs the cases in order, handing each record to `sink` as soon as it is
/// measured.
pub fn sweep(cases: &[BenchCase], budget: usize, sink: &mut dyn RecordSink) -> Result<Vec<BenchRecord>> {
    let mut out = Vec::with_capacity(cases.len());
    for case in cases {
        let rec = run_case(case, budget)?;
        sink.write(&rec)?;
        out.push(rec);
    }
    sink.finish()?;
    Ok(out)
}

/// Cartesian grid around a base case. Empty axes keep the base value.
/// Expansion order is mode, then length, then chunk, then k. The k axis
/// only applies to `chunked_topk`; the other modes are the full-attention
/// baselines and get one case with every key.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    #[serde(default)]
    pub base: BenchCase,
    #[serde(default)]
    pub modes: Vec<AttentionMode>,
    /// Sequence lengths, or `d_ff` values for ff cases.
    #[serde(default)]
    pub lengths: Vec<usize>,
    #[serde(default)]
    pub chunks: Vec<usize>,
    #[serde(default)]
    pub ks: Vec<TopK>,
}

impl Grid {
    pub fn cases(&self) -> Vec<BenchCase> {
        fn axis<V: Clone>(v: &[V], base: V) -> Vec<V> {
            if v.is_empty() {
                vec![base]
            } else {
                v.to_vec()
            }
        }
        let base_len = match self.base.target {
            BenchTarget::Ff => self.base.d_ff,
            _ => self.base.l_q,
        };
        let mut out = Vec::new();
        for mode in axis(&self.modes, self.base.mode) {
            for l in axis(&self.lengths, base_len) {
                for chunk in axis(&self.chunks, self.base.chunk) {
                    let ks = match mode {
                        AttentionMode::ChunkedTopk => axis(&self.ks, self.base.k),
                        _ => vec![TopK::All],
                    };
                    for k in ks {
                        let mut c = self.base.clone().with_length(l);
                        c.mode = mode;
                        c.chunk = chunk;
                        c.k = k;
                        out.push(c);
                    }
                }
            }
        }
        out
    }
}
