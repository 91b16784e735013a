use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::run::{BenchRecord, BenchStatus};
use crate::error::{Error, Result};

/// Feature regressed against peak bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Predictor {
    /// Number of keys `L_K` (the sequence length, or `d_ff` for ff cases).
    #[serde(rename = "L")]
    L,
    /// `L_Q · L_K`.
    #[serde(rename = "L2")]
    L2,
    /// Chunk size times number of keys.
    #[serde(rename = "C*L_K")]
    ChunkKeys,
}

impl Predictor {
    pub fn feature(self, r: &BenchRecord) -> f64 {
        let c = &r.case;
        match self {
            Predictor::L => c.l_k as f64,
            Predictor::L2 => c.l_q as f64 * c.l_k as f64,
            Predictor::ChunkKeys => c.chunk.min(c.l_q) as f64 * c.l_k as f64,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Predictor::L => "L",
            Predictor::L2 => "L2",
            Predictor::ChunkKeys => "C*L_K",
        }
    }
}

impl fmt::Display for Predictor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Predictor {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "L" | "l" => Ok(Predictor::L),
            "L2" | "l2" | "L^2" => Ok(Predictor::L2),
            "C*L_K" | "CL" | "chunk" => Ok(Predictor::ChunkKeys),
            other => Err(format!("unknown predictor `{other}` (expected L, L2 or C*L_K)")),
        }
    }
}

/// `y = intercept + slope · x` by least squares.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub n: usize,
}

impl LinearFit {
    pub fn from_points(xs: &[f64], ys: &[f64]) -> Result<Self> {
        if xs.len() != ys.len() || xs.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "fit needs at least two points, got {} x / {} y",
                xs.len(),
                ys.len()
            )));
        }
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        if sxx == 0.0 {
            return Err(Error::InvalidConfig("fit needs at least two distinct x values".into()));
        }
        let slope = sxy / sxx;
        let intercept = my - slope * mx;
        let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
        let ss_res: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| (y - intercept - slope * x).powi(2))
            .sum();
        let r2 = if ss_tot == 0.0 {
            if ss_res == 0.0 {
                1.0
            } else {
                0.0
            }
        } else {
            1.0 - ss_res / ss_tot
        };
        Ok(LinearFit {
            slope,
            intercept,
            r2,
            n: xs.len(),
        })
    }

    pub fn predict(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }

    /// Feature value at which the fit reaches `y`.
    pub fn solve(&self, y: f64) -> Option<f64> {
        (self.slope != 0.0).then(|| (y - self.intercept) / self.slope)
    }
}

/// Fit of peak bytes on one predictor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub predictor: Predictor,
    pub fit: LinearFit,
}

impl ScalingFit {
    /// Largest length whose predicted peak stays within `budget` bytes; the
    /// feature is inverted back to a length assuming `L_Q == L_K`.
    pub fn max_length_within(&self, budget: f64) -> Option<f64> {
        let x = self.fit.solve(budget)?;
        if x <= 0.0 {
            return None;
        }
        match self.predictor {
            Predictor::L => Some(x),
            Predictor::L2 => Some(x.sqrt()),
            Predictor::ChunkKeys => None,
        }
    }
}

/// Regresses peak bytes of the `ok` records on the chosen feature.
pub fn fit_scaling(records: &[BenchRecord], predictor: Predictor) -> Result<ScalingFit> {
    let ok: Vec<&BenchRecord> = records.iter().filter(|r| r.status == BenchStatus::Ok).collect();
    let xs: Vec<f64> = ok.iter().map(|r| predictor.feature(r)).collect();
    let ys: Vec<f64> = ok.iter().map(|r| r.peak_bytes as f64).collect();
    Ok(ScalingFit {
        predictor,
        fit: LinearFit::from_points(&xs, &ys)?,
    })
}
