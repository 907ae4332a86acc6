use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use super::TrainError;
use crate::model::ModelConfig;

/// Weights of the multi-task loss: `w1` STOI, `w2` PESQ, `w3` SI-SDR,
/// `w0` reference reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossWeights {
    pub w0: f64,
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w0: 2.0,
            w1: 1.0,
            w2: 2.0,
            w3: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), TrainError> {
        for (name, w) in [("w0", self.w0), ("w1", self.w1), ("w2", self.w2), ("w3", self.w3)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(TrainError::InvalidArgument(format!("{name} must be finite and >= 0, got {w}")));
            }
        }
        Ok(())
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            w0: c * self.w0,
            w1: c * self.w1,
            w2: c * self.w2,
            w3: c * self.w3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Mae,
    Mse,
}

impl LossKind {
    pub fn apply(self, err: f64) -> f64 {
        match self {
            LossKind::Mae => err.abs(),
            LossKind::Mse => err * err,
        }
    }
}

impl FromStr for LossKind {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mae" => Ok(LossKind::Mae),
            "mse" => Ok(LossKind::Mse),
            _ => Err(TrainError::InvalidArgument(format!("loss_kind must be mae or mse, got {s:?}"))),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Mae => "mae",
            LossKind::Mse => "mse",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainHyper {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Global gradient-norm bound.
    pub clip: f64,
    pub seed: u64,
    pub loss_kind: LossKind,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            lr: 4e-4,
            batch: 4,
            epochs: 10,
            clip: 5.0,
            seed: 0,
            loss_kind: LossKind::Mae,
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::InvalidArgument(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch == 0 {
            return Err(TrainError::InvalidArgument("batch must be at least 1".into()));
        }
        if !(self.clip > 0.0) {
            return Err(TrainError::InvalidArgument(format!("clip must be positive, got {}", self.clip)));
        }
        Ok(())
    }
}

/// Everything a training run is parameterised by.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub weights: LossWeights,
    pub hyper: TrainHyper,
}

impl RunConfig {
    /// Flat `key = value` rendering, parseable by [`parse_run_config`].
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.model.fields() {
            out.push_str(&format!("{k} = {v}\n"));
        }
        let w = &self.weights;
        let h = &self.hyper;
        for (k, v) in [
            ("w0", w.w0.to_string()),
            ("w1", w.w1.to_string()),
            ("w2", w.w2.to_string()),
            ("w3", w.w3.to_string()),
            ("lr", h.lr.to_string()),
            ("batch", h.batch.to_string()),
            ("epochs", h.epochs.to_string()),
            ("clip", h.clip.to_string()),
            ("seed", h.seed.to_string()),
            ("loss_kind", h.loss_kind.to_string()),
        ] {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}

/// Applies a flat `key = value` file on top of `base`. Blank lines and
/// lines starting with `#` are ignored; unknown keys are errors.
pub fn parse_run_config(text: &str, base: RunConfig) -> Result<RunConfig, TrainError> {
    let mut cfg = base;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let err = |msg: String| TrainError::Config { line, msg };
        let s = raw.trim();
        if s.is_empty() || s.starts_with('#') {
            continue;
        }
        let (key, value) = s
            .split_once('=')
            .ok_or_else(|| err(format!("expected `key = value`, got {s:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        let int = || value.parse::<usize>().map_err(|e| err(format!("{key}: {e}")));
        let real = || value.parse::<f64>().map_err(|e| err(format!("{key}: {e}")));
        match key {
            "w0" => cfg.weights.w0 = real()?,
            "w1" => cfg.weights.w1 = real()?,
            "w2" => cfg.weights.w2 = real()?,
            "w3" => cfg.weights.w3 = real()?,
            "lr" => cfg.hyper.lr = real()?,
            "batch" => cfg.hyper.batch = int()?,
            "epochs" => cfg.hyper.epochs = int()?,
            "clip" => cfg.hyper.clip = real()?,
            "seed" => cfg.hyper.seed = value.parse().map_err(|e| err(format!("seed: {e}")))?,
            "loss_kind" => cfg.hyper.loss_kind = value.parse().map_err(|e: TrainError| err(e.to_string()))?,
            _ => {
                let v = int()?;
                if !cfg.model.set_field(key, v) {
                    return Err(err(format!("unknown key {key:?}")));
                }
            }
        }
    }
    cfg.model.validate().map_err(|e| TrainError::Config { line: 0, msg: e.to_string() })?;
    cfg.weights.validate()?;
    cfg.hyper.validate()?;
    Ok(cfg)
}
