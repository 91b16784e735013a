use std::io::Write;

use serde::{Deserialize, Serialize};

use super::case::{BenchCase, BenchTarget};
use super::run::{BenchRecord, BenchStatus};
use crate::engine::AttentionMode;
use crate::error::Result;
use crate::reference::TopK;
use crate::tensor::DType;

/// Column order of the CSV output.
pub const CSV_HEADER: &str =
    "target,mode,L_Q,L_K,d_model,heads,d_ff,k,chunk,layers,dtype,seed,fwd_s,bwd_s,peak_bytes,status";

/// Flat form of a record, shared by the CSV and JSON writers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub target: BenchTarget,
    pub mode: AttentionMode,
    #[serde(rename = "L_Q")]
    pub l_q: usize,
    #[serde(rename = "L_K")]
    pub l_k: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub k: TopK,
    pub chunk: usize,
    pub layers: usize,
    pub dtype: DType,
    pub seed: u64,
    pub fwd_s: f64,
    pub bwd_s: f64,
    pub peak_bytes: usize,
    pub status: BenchStatus,
}

impl From<&BenchRecord> for Row {
    fn from(r: &BenchRecord) -> Self {
        let c = &r.case;
        Row {
            target: c.target,
            mode: c.mode,
            l_q: c.l_q,
            l_k: c.l_k,
            d_model: c.d_model,
            heads: c.heads,
            d_ff: c.d_ff,
            k: c.k,
            chunk: c.chunk,
            layers: c.layers,
            dtype: c.dtype,
            seed: c.seed,
            fwd_s: r.fwd_s,
            bwd_s: r.bwd_s,
            peak_bytes: r.peak_bytes,
            status: r.status,
        }
    }
}

impl Row {
    /// Rebuilds the record; `repeats` is not part of the row.
    pub fn into_record(self, repeats: usize) -> BenchRecord {
        BenchRecord {
            case: BenchCase {
                target: self.target,
                mode: self.mode,
                l_q: self.l_q,
                l_k: self.l_k,
                d_model: self.d_model,
                heads: self.heads,
                d_ff: self.d_ff,
                k: self.k,
                chunk: self.chunk,
                layers: self.layers,
                dtype: self.dtype,
                seed: self.seed,
                repeats,
            },
            fwd_s: self.fwd_s,
            bwd_s: self.bwd_s,
            peak_bytes: self.peak_bytes,
            status: self.status,
        }
    }
}

/// Destination for records as they are produced.
pub trait RecordSink {
    fn write(&mut self, record: &BenchRecord) -> Result<()>;
    fn finish(&mut self) -> Result<()> {
        Ok(())
    }
}

impl RecordSink for Vec<BenchRecord> {
    fn write(&mut self, record: &BenchRecord) -> Result<()> {
        self.push(record.clone());
        Ok(())
    }
}

pub struct CsvSink<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> CsvSink<W> {
    pub fn new(w: W) -> Self {
        CsvSink {
            inner: csv::Writer::from_writer(w),
        }
    }

    pub fn into_inner(self) -> Result<W> {
        self.inner
            .into_inner()
            .map_err(|e| crate::error::Error::Io(e.into_error()))
    }
}

impl<W: Write> RecordSink for CsvSink<W> {
    fn write(&mut self, record: &BenchRecord) -> Result<()> {
        self.inner.serialize(Row::from(record))?;
        self.inner.flush()?;
        Ok(())
    }

    fn finish(&mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

/// One JSON object per line.
pub struct JsonSink<W: Write> {
    inner: W,
}

impl<W: Write> JsonSink<W> {
    pub fn new(inner: W) -> Self {
        JsonSink { inner }
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

impl<W: Write> RecordSink for JsonSink<W> {
    fn write(&mut self, record: &BenchRecord) -> Result<()> {
        serde_json::to_writer(&mut self.inner, &Row::from(record))?;
        self.inner.write_all(b"\n")?;
        self.inner.flush()?;
        Ok(())
    }
}

/// Writes to several sinks in turn.
pub struct Tee<'a>(pub Vec<&'a mut dyn RecordSink>);

impl RecordSink for Tee<'_> {
    fn write(&mut self, record: &BenchRecord) -> Result<()> {
        self.0.iter_mut().try_for_each(|s| s.write(record))
    }

    fn finish(&mut self) -> Result<()> {
        self.0.iter_mut().try_for_each(|s| s.finish())
    }
}

/// Reads rows written by [`CsvSink`].
pub fn read_csv<R: std::io::Read>(r: R) -> Result<Vec<Row>> {
    let mut rd = csv::Reader::from_reader(r);
    rd.deserialize().map(|row| Ok(row?)).collect()
}
