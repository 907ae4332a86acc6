//! Named parameter storage and the Adam optimiser.

use std::collections::BTreeMap;

use super::{Gradients, NnError, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    /// First-moment estimate.
    pub m: Vec<f64>,
    /// Second-moment estimate.
    pub v: Vec<f64>,
}

/// Parameters keyed by dotted path, e.g. `trunk.block1.intra.proj.w`.
/// Iteration order is the lexicographic order of names.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
    step: u64,
}

/// Gradients keyed by parameter name.
pub type GradMap = BTreeMap<String, Vec<f64>>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 4e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<(), NnError> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(NnError::DuplicateParam(name));
        }
        let n = value.numel();
        self.params.insert(
            name,
            Param {
                value,
                m: vec![0.0; n],
                v: vec![0.0; n],
            },
        );
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).map(|p| &p.value)
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name).map(|p| &mut p.value)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar parameter count.
    pub fn numel(&self) -> usize {
        self.params.values().map(|p| p.value.numel()).sum()
    }

    /// Number of Adam updates applied so far.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub(crate) fn set_optimizer_state(&mut self, name: &str, m: Vec<f64>, v: Vec<f64>) -> Result<(), NnError> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| NnError::UnknownParam(name.to_string()))?;
        if m.len() != p.value.numel() || v.len() != p.value.numel() {
            return Err(NnError::BadShape {
                shape: p.value.shape().to_vec(),
                len: m.len(),
            });
        }
        p.m = m;
        p.v = v;
        Ok(())
    }

    pub(crate) fn set_step_count(&mut self, step: u64) {
        self.step = step;
    }

    /// Bias-corrected Adam update. Parameters missing from `grads` are
    /// treated as having zero gradient.
    pub fn adam_step(&mut self, grads: &GradMap, cfg: &AdamConfig) -> Result<(), NnError> {
        for (name, g) in grads {
            let p = self
                .params
                .get(name)
                .ok_or_else(|| NnError::UnknownParam(name.clone()))?;
            if g.len() != p.value.numel() {
                return Err(NnError::ShapeMismatch {
                    op: "adam_step",
                    lhs: p.value.shape().to_vec(),
                    rhs: vec![g.len()],
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (name, p) in self.params.iter_mut() {
            let g = grads.get(name);
            let values = p.value.data_mut();
            for i in 0..values.len() {
                let gi = g.map_or(0.0, |g| g[i]);
                p.m[i] = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * gi;
                p.v[i] = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * gi * gi;
                let m_hat = p.m[i] / bc1;
                let v_hat = p.v[i] / bc2;
                values[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}

/// Places a [`ParamStore`] on a tape, either as tracked leaves (training)
/// or as constants (inference).
pub struct Binder<'t> {
    tape: &'t Tape,
    vars: BTreeMap<String, Var>,
}

impl<'t> Binder<'t> {
    pub fn new(tape: &'t Tape, store: &ParamStore, trainable: bool) -> Self {
        let vars = store
            .iter()
            .map(|(name, p)| {
                let v = if trainable {
                    tape.param(p.value.clone())
                } else {
                    tape.constant(p.value.clone())
                };
                (name.to_string(), v)
            })
            .collect();
        Self { tape, vars }
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn get(&self, name: &str) -> Result<&Var, NnError> {
        self.vars
            .get(name)
            .ok_or_else(|| NnError::UnknownParam(name.to_string()))
    }

    /// Collects the gradient of every bound parameter (zeros where unreachable).
    pub fn grads(&self, grads: &Gradients) -> GradMap {
        self.vars
            .iter()
            .map(|(name, v)| (name.clone(), grads.get_or_zeros(v)))
            .collect()
    }
}
