use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Branch, ModelConfig, ModelError};
use crate::nn::{ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Init {
    /// Uniform in `±sqrt(1 / fan_in)`.
    Uniform { fan_in: usize },
    Const(f64),
    /// LSTM bias: forget gate slice set to 1, the rest 0.
    ForgetBias { hidden: usize },
}

#[derive(Debug, Clone)]
pub(crate) struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

fn spec(out: &mut Vec<ParamSpec>, name: String, shape: Vec<usize>, init: Init) {
    out.push(ParamSpec { name, shape, init });
}

fn linear(out: &mut Vec<ParamSpec>, prefix: &str, fan_in: usize, fan_out: usize) {
    spec(out, format!("{prefix}.w"), vec![fan_in, fan_out], Init::Uniform { fan_in });
    spec(out, format!("{prefix}.b"), vec![fan_out], Init::Uniform { fan_in });
}

fn norm(out: &mut Vec<ParamSpec>, prefix: &str, dim: usize) {
    spec(out, format!("{prefix}.gain"), vec![dim], Init::Const(1.0));
    spec(out, format!("{prefix}.bias"), vec![dim], Init::Const(0.0));
}

fn sub_block(out: &mut Vec<ParamSpec>, prefix: &str, cfg: &ModelConfig) {
    let (n, h) = (cfg.n, cfg.blstm_hidden);
    for dir in ["fwd", "bwd"] {
        let p = format!("{prefix}.blstm.{dir}");
        spec(out, format!("{p}.w_ih"), vec![n, 4 * h], Init::Uniform { fan_in: n });
        spec(out, format!("{p}.w_hh"), vec![h, 4 * h], Init::Uniform { fan_in: h });
        spec(out, format!("{p}.bias"), vec![4 * h], Init::ForgetBias { hidden: h });
    }
    linear(out, &format!("{prefix}.proj"), 2 * h, n);
    norm(out, &format!("{prefix}.norm"), n);
}

fn branch(out: &mut Vec<ParamSpec>, b: Branch, cfg: &ModelConfig) {
    let p = format!("branch.{}", b.name());
    for i in 0..cfg.heads {
        for role in ["query", "key", "value"] {
            spec(
                out,
                format!("{p}.attn.head{i}.{role}"),
                vec![cfg.n, cfg.d],
                Init::Uniform { fan_in: cfg.n },
            );
        }
    }
    spec(
        out,
        format!("{p}.attn.output"),
        vec![cfg.heads * cfg.d, cfg.d],
        Init::Uniform { fan_in: cfg.heads * cfg.d },
    );
    norm(out, &format!("{p}.norm1"), cfg.d);
    linear(out, &format!("{p}.ff1"), cfg.d, cfg.d1);
    linear(out, &format!("{p}.ff2"), cfg.d1, cfg.d);
    norm(out, &format!("{p}.norm2"), cfg.d);
    spec(out, format!("{p}.pool.alpha"), vec![1], Init::Const(0.0));
    linear(out, &format!("{p}.head1"), cfg.d, cfg.d);
    spec(out, format!("{p}.head1.prelu"), vec![1], Init::Const(0.25));
    linear(out, &format!("{p}.head2"), cfg.d, 1);
}

/// Every parameter of the model in initialisation order.
pub(crate) fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    spec(
        &mut out,
        "encoder.conv.w".into(),
        vec![cfg.n, 1, cfg.p],
        Init::Uniform { fan_in: cfg.p },
    );
    for k in 1..=cfg.blocks {
        sub_block(&mut out, &format!("trunk.block{k}.intra"), cfg);
        sub_block(&mut out, &format!("trunk.block{k}.inter"), cfg);
    }
    linear(&mut out, "trunk.out", cfg.n, cfg.n);
    spec(&mut out, "trunk.out.prelu".into(), vec![1], Init::Const(0.25));
    for b in Branch::ALL {
        branch(&mut out, b, cfg);
    }
    linear(&mut out, "decoder", cfg.n, cfg.p);
    out
}

/// Parameter count implied by `cfg` without allocating the parameters.
pub fn param_count(cfg: &ModelConfig) -> usize {
    param_specs(cfg)
        .iter()
        .map(|s| s.shape.iter().product::<usize>())
        .sum()
}

/// Deterministic initialisation: one ChaCha stream drawn in [`param_specs`] order.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ParamStore, ModelError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for s in param_specs(cfg) {
        let n: usize = s.shape.iter().product();
        let data: Vec<f64> = match s.init {
            Init::Uniform { fan_in } => {
                let bound = (1.0 / fan_in as f64).sqrt();
                (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
            }
            Init::Const(c) => vec![c; n],
            Init::ForgetBias { hidden } => (0..n)
                .map(|i| if (hidden..2 * hidden).contains(&i) { 1.0 } else { 0.0 })
                .collect(),
        };
        store.insert(s.name, Tensor::new(s.shape, data)?)?;
    }
    Ok(store)
}

/// Names of parameters only used by one branch (or the decoder, for `None`).
pub fn exclusive_params(store: &ParamStore, branch: Option<Branch>) -> Vec<String> {
    let prefix = match branch {
        Some(b) => format!("branch.{}.", b.name()),
        None => "decoder.".to_string(),
    };
    store
        .names()
        .filter(|n| n.starts_with(&prefix))
        .map(str::to_string)
        .collect()
}
