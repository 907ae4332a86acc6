use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{sample_loss, LabeledSample, LossParts, LossWeights, TrainError, TrainHyper};
use crate::model::{forward, init_params, param_specs, ModelConfig, ModelError};
use crate::nn::{AdamConfig, Binder, GradMap, NnError, ParamStore, Tape, Tensor};

/// One line of the training log: epoch means of each unweighted loss
/// component, and the weighted total.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Optimiser steps taken so far.
    pub step: u64,
    pub loss_total: f64,
    pub loss_stoi: f64,
    pub loss_pesq: Option<f64>,
    pub loss_sisdr: f64,
    pub loss_recon: Option<f64>,
}

/// Parameters with optimiser moments and the number of completed epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub epochs_done: usize,
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub state: TrainState,
    pub log: Vec<EpochLog>,
}

/// Trains from a fresh initialisation seeded by `hyper.seed`.
pub fn train(
    data: &[LabeledSample],
    cfg: &ModelConfig,
    w: &LossWeights,
    hyper: &TrainHyper,
) -> Result<TrainRun, TrainError> {
    let state = TrainState {
        cfg: *cfg,
        store: init_params(cfg, hyper.seed)?,
        epochs_done: 0,
    };
    resume(data, state, w, hyper)
}

fn diverged(epoch: usize, step: u64, detail: impl Into<String>) -> TrainError {
    TrainError::Diverged {
        epoch,
        step,
        detail: detail.into(),
    }
}

fn sample_grads(
    store: &ParamStore,
    cfg: &ModelConfig,
    sample: &LabeledSample,
    w: &LossWeights,
    hyper: &TrainHyper,
) -> Result<(Option<GradMap>, LossParts), TrainError> {
    let tape = Tape::new();
    let b = Binder::new(&tape, store, true);
    let out = forward(&b, cfg, sample.degraded.samples(), w.w0 > 0.0)?;
    let (loss, parts) = sample_loss(&tape, &out, sample, w, hyper.loss_kind)?;
    let grads = match loss {
        Some(l) => Some(b.grads(&tape.backward(&l)?)),
        None => None,
    };
    Ok((grads, parts))
}

fn is_non_finite(e: &TrainError) -> bool {
    matches!(
        e,
        TrainError::Nn(NnError::NonFinite { .. }) | TrainError::Model(ModelError::Nn(NnError::NonFinite { .. }))
    )
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Continues training `state` until `hyper.epochs` epochs are complete.
/// Sample order within epoch `e` depends only on `hyper.seed` and `e`, and
/// per-sample gradients are summed in batch order, so a resumed run matches
/// an uninterrupted one exactly.
pub fn resume(
    data: &[LabeledSample],
    mut state: TrainState,
    w: &LossWeights,
    hyper: &TrainHyper,
) -> Result<TrainRun, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    w.validate()?;
    hyper.validate()?;
    state.cfg.validate()?;
    let adam = AdamConfig {
        lr: hyper.lr,
        ..AdamConfig::default()
    };
    let cfg = state.cfg;
    let mut log = Vec::new();
    for epoch in state.epochs_done + 1..=hyper.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);

        let mut parts_seen = Vec::with_capacity(data.len());
        for batch in order.chunks(hyper.batch) {
            let step = state.store.step_count() + 1;
            let store = &state.store;
            let results: Vec<Result<(Option<GradMap>, LossParts), TrainError>> = batch
                .par_iter()
                .map(|&i| sample_grads(store, &cfg, &data[i], w, hyper))
                .collect();
            let mut sum: GradMap = store.iter().map(|(n, p)| (n.to_string(), vec![0.0; p.value.numel()])).collect();
            for r in results {
                let (grads, parts) = r.map_err(|e| {
                    if is_non_finite(&e) {
                        diverged(epoch, step, e.to_string())
                    } else {
                        e
                    }
                })?;
                let total = parts.weighted(w);
                if !total.is_finite() {
                    return Err(diverged(epoch, step, format!("loss became {total}")));
                }
                if let Some(g) = grads {
                    for (name, acc) in sum.iter_mut() {
                        acc.iter_mut().zip(&g[name]).for_each(|(a, b)| *a += b);
                    }
                }
                parts_seen.push(parts);
            }
            let scale = 1.0 / batch.len() as f64;
            let norm = sum.values().flatten().map(|g| (g * scale).powi(2)).sum::<f64>().sqrt();
            if !norm.is_finite() {
                return Err(diverged(epoch, step, format!("gradient norm became {norm}")));
            }
            let factor = if norm > hyper.clip { scale * hyper.clip / norm } else { scale };
            sum.values_mut().flatten().for_each(|g| *g *= factor);
            state.store.adam_step(&sum, &adam)?;
        }
        state.epochs_done = epoch;
        let entry = EpochLog {
            epoch,
            step: state.store.step_count(),
            loss_total: mean(parts_seen.iter().map(|p| p.weighted(w))).unwrap_or(0.0),
            loss_stoi: mean(parts_seen.iter().map(|p| p.stoi)).unwrap_or(0.0),
            loss_pesq: mean(parts_seen.iter().filter_map(|p| p.pesq)),
            loss_sisdr: mean(parts_seen.iter().map(|p| p.sisdr)).unwrap_or(0.0),
            loss_recon: mean(parts_seen.iter().filter_map(|p| p.recon)),
        };
        log.push(entry);
    }
    Ok(TrainRun { state, log })
}

/// Writes the log as one JSON object per line.
pub fn write_log(path: &Path, log: &[EpochLog]) -> Result<(), TrainError> {
    let mut out = Vec::new();
    for e in log {
        serde_json::to_writer(&mut out, e).map_err(std::io::Error::other)?;
        out.push(b'\n');
    }
    std::fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

const STATE_MAGIC: &[u8; 4] = b"SQMS";
const STATE_VERSION: u32 = 1;

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

/// Full-precision training state (parameters, Adam moments, step and
/// epoch counters) for exact resumption. The deployable checkpoint stores
/// `f32` weights only.
pub fn save_train_state(path: &Path, state: &TrainState) -> Result<(), TrainError> {
    let mut out = Vec::new();
    out.extend_from_slice(STATE_MAGIC);
    out.extend_from_slice(&STATE_VERSION.to_le_bytes());
    for (_, v) in state.cfg.fields() {
        put_u64(&mut out, v as u64);
    }
    put_u64(&mut out, state.epochs_done as u64);
    put_u64(&mut out, state.store.step_count());
    put_u64(&mut out, state.store.len() as u64);
    for (name, p) in state.store.iter() {
        put_u64(&mut out, name.len() as u64);
        out.extend_from_slice(name.as_bytes());
        put_u64(&mut out, p.value.rank() as u64);
        for &d in p.value.shape() {
            put_u64(&mut out, d as u64);
        }
        put_f64s(&mut out, p.value.data());
        put_f64s(&mut out, &p.m);
        put_f64s(&mut out, &p.v);
    }
    std::fs::write(path, out)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TrainError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| TrainError::State(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, TrainError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize, TrainError> {
        usize::try_from(self.u64()?).map_err(|_| TrainError::State("count overflows usize".into()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, TrainError> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| TrainError::State("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn load_train_state(path: &Path) -> Result<TrainState, TrainError> {
    let bytes = std::fs::read(path)?;
    let mut c = Cursor { buf: &bytes, pos: 0 };
    if c.take(4)? != STATE_MAGIC {
        return Err(TrainError::State("bad magic".into()));
    }
    if c.take(4)? != STATE_VERSION.to_le_bytes() {
        return Err(TrainError::State("unsupported version".into()));
    }
    let mut cfg = ModelConfig::default();
    for (name, _) in ModelConfig::default().fields() {
        let v = c.usize()?;
        cfg.set_field(name, v);
    }
    cfg.validate()?;
    let epochs_done = c.usize()?;
    let step = c.u64()?;
    let count = c.usize()?;
    let mut store = ParamStore::new();
    let mut moments = BTreeMap::new();
    for _ in 0..count {
        let len = c.usize()?;
        let name = String::from_utf8(c.take(len)?.to_vec()).map_err(|_| TrainError::State("name is not UTF-8".into()))?;
        let rank = c.usize()?;
        let shape: Vec<usize> = (0..rank).map(|_| c.usize()).collect::<Result<_, _>>()?;
        let n: usize = shape.iter().product();
        let value = c.f64s(n)?;
        let m = c.f64s(n)?;
        let v = c.f64s(n)?;
        store.insert(name.clone(), Tensor::new(shape, value)?)?;
        moments.insert(name, (m, v));
    }
    if c.pos != bytes.len() {
        return Err(TrainError::State("trailing bytes".into()));
    }
    let expected = param_specs(&cfg);
    let same_layout = expected.len() == store.len()
        && expected
            .iter()
            .all(|s| store.get(&s.name).is_some_and(|t| t.shape() == s.shape.as_slice()));
    if !same_layout {
        return Err(TrainError::State("parameters do not match the stored configuration".into()));
    }
    for (name, (m, v)) in moments {
        store.set_optimizer_state(&name, m, v)?;
    }
    store.set_step_count(step);
    Ok(TrainState {
        cfg,
        store,
        epochs_done,
    })
}
