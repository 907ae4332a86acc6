use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::{LabeledSample, TrainError};
use crate::metrics::{evaluate, EvalReport, MetricTriple};
use crate::model::{model_forward, ModelConfig};
use crate::nn::ParamStore;

/// Ground truth and model estimate for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleEstimate {
    pub id: String,
    pub truth: MetricTriple,
    pub estimate: MetricTriple,
}

/// One row of the scatter export.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterRow {
    pub id: String,
    pub metric: String,
    pub truth: f64,
    pub estimate: f64,
}

/// Runs inference without the decoder on every sample and aggregates
/// MAE/PCC/SRCC (STOI MAE in percent). PESQ statistics are absent when no
/// sample carries a PESQ label.
pub fn evaluate_model(
    cfg: &ModelConfig,
    store: &ParamStore,
    data: &[LabeledSample],
) -> Result<(EvalReport, Vec<SampleEstimate>), TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let rows: Vec<SampleEstimate> = data
        .par_iter()
        .map(|s| {
            let (estimate, _) = model_forward(&s.degraded, cfg, store, false)?;
            Ok(SampleEstimate {
                id: s.id.clone(),
                truth: s.labels,
                estimate,
            })
        })
        .collect::<Result<_, TrainError>>()?;
    let pred: Vec<MetricTriple> = rows.iter().map(|r| r.estimate).collect();
    let truth: Vec<MetricTriple> = rows.iter().map(|r| r.truth).collect();
    Ok((evaluate(&pred, &truth)?, rows))
}

fn scatter_rows(rows: &[SampleEstimate]) -> Vec<ScatterRow> {
    let mut out = Vec::new();
    for r in rows {
        let row = |metric: &str, truth: f64, estimate: f64| ScatterRow {
            id: r.id.clone(),
            metric: metric.to_string(),
            truth,
            estimate,
        };
        out.push(row("stoi", r.truth.stoi, r.estimate.stoi));
        if let (Some(t), Some(e)) = (r.truth.pesq, r.estimate.pesq) {
            out.push(row("pesq", t, e));
        }
        out.push(row("si_sdr", r.truth.si_sdr, r.estimate.si_sdr));
    }
    out
}

/// TSV with columns `id, metric, truth, estimate`; one row per sample and
/// labelled metric. Returns the number of data rows.
pub fn write_scatter(path: &Path, rows: &[SampleEstimate]) -> Result<usize, TrainError> {
    let rows = scatter_rows(rows);
    let mut text = String::from("id\tmetric\ttruth\testimate\n");
    for r in &rows {
        text.push_str(&format!("{}\t{}\t{}\t{}\n", r.id, r.metric, r.truth, r.estimate));
    }
    fs::write(path, text)?;
    Ok(rows.len())
}

/// Evaluates `data` and writes the scatter TSV.
pub fn export_scatter(
    cfg: &ModelConfig,
    store: &ParamStore,
    data: &[LabeledSample],
    path: &Path,
) -> Result<usize, TrainError> {
    let (_, rows) = evaluate_model(cfg, store, data)?;
    write_scatter(path, &rows)
}

pub fn read_scatter(path: &Path) -> Result<Vec<ScatterRow>, TrainError> {
    let text = fs::read_to_string(path)?;
    let bad = |line: usize, msg: String| TrainError::Labels {
        path: path.display().to_string(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    if lines.next().map(|(_, h)| h) != Some("id\tmetric\ttruth\testimate") {
        return Err(bad(1, "unexpected header".into()));
    }
    lines
        .map(|(i, l)| {
            let c: Vec<&str> = l.split('\t').collect();
            if c.len() != 4 {
                return Err(bad(i + 1, "expected four columns".into()));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| bad(i + 1, e.to_string()));
            Ok(ScatterRow {
                id: c[0].into(),
                metric: c[1].into(),
                truth: num(c[2])?,
                estimate: num(c[3])?,
            })
        })
        .collect()
}
