//! Intrusive oracle metrics (SI-SDR, STOI) and evaluation statistics.

mod sisdr;
mod stats;
mod stoi;

pub use sisdr::{si_sdr, si_sdr_slices, SI_SDR_CLAMP_DB, SI_SDR_EPS};
pub use stats::{average_ranks, mae, pcc, srcc};
pub use stoi::{stoi, stoi_at_10k, STOI_RATE};

use serde::Serialize;
use thiserror::Error;

use crate::signal::SignalError;

/// Upper end of the wideband PESQ scale.
pub const PESQ_MAX: f64 = 4.64;
pub const PESQ_MIN: f64 = 1.0;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("sample-rate mismatch: {0} Hz vs {1} Hz")]
    RateMismatch(u32, u32),
    #[error("reference signal is all zeros")]
    ZeroReference,
    #[error("signal too short after silence removal: {frames} frames, need {needed}")]
    TooShort { frames: usize, needed: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("need at least {needed} samples, got {n}")]
    TooFewSamples { n: usize, needed: usize },
    #[error("input has zero variance")]
    ZeroVariance,
    #[error("{name} = {value} outside [{lo}, {hi}]")]
    OutOfRange {
        name: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error(transparent)]
    Signal(#[from] SignalError),
}

/// One (STOI, PESQ, SI-SDR) score tuple. STOI is a fraction, SI-SDR in dB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricTriple {
    pub stoi: f64,
    pub pesq: Option<f64>,
    pub si_sdr: f64,
}

impl MetricTriple {
    pub fn new(stoi: f64, pesq: Option<f64>, si_sdr: f64) -> Result<Self, MetricError> {
        if !(0.0..=1.0).contains(&stoi) {
            return Err(MetricError::OutOfRange {
                name: "stoi",
                value: stoi,
                lo: 0.0,
                hi: 1.0,
            });
        }
        if let Some(p) = pesq {
            if !(PESQ_MIN..=PESQ_MAX).contains(&p) {
                return Err(MetricError::OutOfRange {
                    name: "pesq",
                    value: p,
                    lo: PESQ_MIN,
                    hi: PESQ_MAX,
                });
            }
        }
        if !si_sdr.is_finite() {
            return Err(MetricError::OutOfRange {
                name: "si_sdr",
                value: si_sdr,
                lo: f64::NEG_INFINITY,
                hi: f64::INFINITY,
            });
        }
        Ok(Self { stoi, pesq, si_sdr })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricStats {
    pub mae: f64,
    /// Absent when undefined (fewer than two samples or a constant column).
    pub pcc: Option<f64>,
    pub srcc: Option<f64>,
    pub n: usize,
}

fn defined(r: Result<f64, MetricError>) -> Result<Option<f64>, MetricError> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(MetricError::ZeroVariance | MetricError::TooFewSamples { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

impl MetricStats {
    fn compute(pred: &[f64], truth: &[f64], mae_scale: f64) -> Result<Self, MetricError> {
        Ok(Self {
            mae: mae(pred, truth)? * mae_scale,
            pcc: defined(pcc(pred, truth))?,
            srcc: defined(srcc(pred, truth))?,
            n: pred.len(),
        })
    }
}

/// Per-metric MAE / PCC / SRCC. STOI MAE is in percent.
/// `pesq` is absent when no sample carries a PESQ label.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub stoi: MetricStats,
    pub pesq: Option<MetricStats>,
    pub si_sdr: MetricStats,
    pub n: usize,
}

/// Aggregates estimates against oracle labels. PESQ statistics use only the
/// samples where both sides carry a PESQ value.
pub fn evaluate(pred: &[MetricTriple], truth: &[MetricTriple]) -> Result<EvalReport, MetricError> {
    if pred.len() != truth.len() {
        return Err(MetricError::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let col = |f: fn(&MetricTriple) -> f64, v: &[MetricTriple]| v.iter().map(f).collect::<Vec<_>>();
    let stoi = MetricStats::compute(&col(|m| m.stoi, pred), &col(|m| m.stoi, truth), 100.0)?;
    let si_sdr = MetricStats::compute(&col(|m| m.si_sdr, pred), &col(|m| m.si_sdr, truth), 1.0)?;
    let (pp, pt): (Vec<f64>, Vec<f64>) = pred
        .iter()
        .zip(truth)
        .filter_map(|(p, t)| Some((p.pesq?, t.pesq?)))
        .unzip();
    let pesq = if pp.is_empty() {
        None
    } else {
        Some(MetricStats::compute(&pp, &pt, 1.0)?)
    };
    Ok(EvalReport {
        stoi,
        pesq,
        si_sdr,
        n: pred.len(),
    })
}
