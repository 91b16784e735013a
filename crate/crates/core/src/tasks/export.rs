use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{Target, TaskSample};
use crate::error::Result;

/// One exported sample: a JSON object per line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub index: u64,
    pub input: Vec<usize>,
    pub target: Target,
}

/// Writes samples `start..start+n` as line-delimited JSON.
pub fn write_records<W: Write>(mut w: W, start: u64, samples: &[TaskSample]) -> Result<()> {
    for (i, s) in samples.iter().enumerate() {
        let rec = Record {
            index: start + i as u64,
            input: s.input.clone(),
            target: s.target.clone(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_records<R: BufRead>(r: R) -> Result<Vec<Record>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{CopyTask, ListOpsTask, Task};

    #[test]
    fn records_round_trip() {
        let copy = CopyTask::new(1, 3, 4).samples(10, 5);
        let lo = ListOpsTask::new(1, 2, 20).samples(0, 5);
        for samples in [copy, lo] {
            let mut buf = Vec::new();
            write_records(&mut buf, 10, &samples).unwrap();
            let back = read_records(&buf[..]).unwrap();
            assert_eq!(back.len(), 5);
            for (i, (r, s)) in back.iter().zip(&samples).enumerate() {
                assert_eq!(r.index, 10 + i as u64);
                assert_eq!(r.input, s.input);
                assert_eq!(r.target, s.target);
            }
        }
    }
}
