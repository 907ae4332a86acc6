use super::{ModelConfig, ModelError};
use crate::metrics::{MetricTriple, PESQ_MAX, PESQ_MIN};
use crate::nn::{AttentionWeights, Binder, LstmWeights, ParamStore, Tape, Var};
use crate::signal::{resample, Waveform, DEFAULT_SAMPLE_RATE};

/// Keeps sigmoid outputs strictly inside the open unit interval.
const SIGMOID_MARGIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Branch {
    Stoi,
    Pesq,
    SiSdr,
}

impl Branch {
    pub const ALL: [Branch; 3] = [Branch::Stoi, Branch::Pesq, Branch::SiSdr];

    pub fn name(self) -> &'static str {
        match self {
            Branch::Stoi => "stoi",
            Branch::Pesq => "pesq",
            Branch::SiSdr => "sisdr",
        }
    }

    /// Output mapping from the raw head value to the metric scale.
    pub fn map(self, t: f64) -> f64 {
        let sig = || (1.0 / (1.0 + (-t).exp())).clamp(SIGMOID_MARGIN, 1.0 - SIGMOID_MARGIN);
        match self {
            Branch::Stoi => sig(),
            Branch::Pesq => PESQ_MIN + (PESQ_MAX - PESQ_MIN) * sig(),
            Branch::SiSdr => t,
        }
    }
}

/// Raw head value `t` and mapped score `s` of one branch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchOutput {
    pub t: f64,
    pub s: f64,
}

/// Tape handles of one branch output, both of shape `[1]`.
#[derive(Clone)]
pub struct BranchVars {
    pub t: Var,
    pub s: Var,
}

impl BranchVars {
    pub fn output(&self) -> BranchOutput {
        BranchOutput {
            t: self.t.item(),
            s: self.s.item(),
        }
    }
}

/// Everything a training step needs from one forward pass.
pub struct ForwardVars {
    /// Trunk output `[N, L]`.
    pub z: Var,
    pub stoi: BranchVars,
    pub pesq: BranchVars,
    pub si_sdr: BranchVars,
    /// Reconstructed reference `[T]`, when the decoder ran.
    pub recon: Option<Var>,
}

impl ForwardVars {
    pub fn branch(&self, b: Branch) -> &BranchVars {
        match b {
            Branch::Stoi => &self.stoi,
            Branch::Pesq => &self.pesq,
            Branch::SiSdr => &self.si_sdr,
        }
    }

    pub fn triple(&self) -> Result<MetricTriple, ModelError> {
        Ok(MetricTriple::new(
            self.stoi.s.item(),
            Some(self.pesq.s.item()),
            self.si_sdr.s.item(),
        )?)
    }
}

fn linear(b: &Binder, x: &Var, prefix: &str) -> Result<Var, ModelError> {
    let w = b.get(&format!("{prefix}.w"))?;
    let bias = b.get(&format!("{prefix}.b"))?;
    Ok(b.tape().linear(x, w, bias)?)
}

fn norm(b: &Binder, x: &Var, axis: usize, prefix: &str) -> Result<Var, ModelError> {
    let gain = b.get(&format!("{prefix}.gain"))?;
    let bias = b.get(&format!("{prefix}.bias"))?;
    Ok(b.tape().layer_norm(x, axis, gain, bias)?)
}

fn lstm<'a>(b: &'a Binder, prefix: &str) -> Result<LstmWeights<'a>, ModelError> {
    Ok(LstmWeights {
        w_ih: b.get(&format!("{prefix}.w_ih"))?,
        w_hh: b.get(&format!("{prefix}.w_hh"))?,
        bias: b.get(&format!("{prefix}.bias"))?,
    })
}

/// Strided convolution with `N` kernels of length `P` and hop `P/2`, then ReLU.
/// Returns `[N, L]`.
pub fn encoder_forward(b: &Binder, cfg: &ModelConfig, y: &[f64]) -> Result<Var, ModelError> {
    let tape = b.tape();
    let x = tape.constant(crate::nn::Tensor::from_vec(y.to_vec()));
    let frames = tape.conv1d(&x, b.get("encoder.conv.w")?, cfg.encoder_hop())?;
    Ok(tape.relu(&frames)?)
}

/// BLSTM along axis 1 of `x: [B, T, N]`, projection to `N`, layer norm over
/// `N`, residual add.
fn sub_block_forward(b: &Binder, cfg: &ModelConfig, x: &Var, prefix: &str) -> Result<Var, ModelError> {
    let tape = b.tape();
    let (batch, steps, n) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let h = tape.blstm(
        x,
        lstm(b, &format!("{prefix}.blstm.fwd"))?,
        lstm(b, &format!("{prefix}.blstm.bwd"))?,
    )?;
    let h = tape.reshape(&h, &[batch * steps, 2 * cfg.blstm_hidden])?;
    let p = linear(b, &h, &format!("{prefix}.proj"))?;
    let p = tape.reshape(&p, &[batch, steps, n])?;
    let p = norm(b, &p, 2, &format!("{prefix}.norm"))?;
    Ok(tape.add(x, &p)?)
}

/// One dual-path block on the internal `[S, R, N]` layout.
fn block_forward_srn(b: &Binder, cfg: &ModelConfig, block: usize, u: &Var) -> Result<Var, ModelError> {
    let tape = b.tape();
    let intra = sub_block_forward(b, cfg, u, &format!("trunk.block{block}.intra"))?;
    let across = tape.permute(&intra, &[1, 0, 2])?;
    let inter = sub_block_forward(b, cfg, &across, &format!("trunk.block{block}.inter"))?;
    Ok(tape.permute(&inter, &[1, 0, 2])?)
}

/// Dual-path block `block` (1-based) on `u: [N, S, R]`: intra-chunk
/// processing along `R`, then inter-chunk processing along `S`.
pub fn dprnn_block_forward(b: &Binder, cfg: &ModelConfig, block: usize, u: &Var) -> Result<Var, ModelError> {
    let tape = b.tape();
    let srn = tape.permute(u, &[1, 2, 0])?;
    let out = block_forward_srn(b, cfg, block, &srn)?;
    Ok(tape.permute(&out, &[2, 0, 1])?)
}

/// Encoder, chunking, the dual-path stack, projection with PReLU and
/// chunk-level overlap-add. Returns `Z: [N, L]`.
pub fn trunk_forward(b: &Binder, cfg: &ModelConfig, y: &[f64]) -> Result<Var, ModelError> {
    let tape = b.tape();
    let enc = encoder_forward(b, cfg, y)?;
    let frames = enc.shape()[1];
    let (chunks, layout) = tape.chunk(&enc, cfg.r, cfg.chunk_hop())?;
    let mut u = tape.permute(&chunks, &[1, 2, 0])?;
    for k in 1..=cfg.blocks {
        u = block_forward_srn(b, cfg, k, &u)?;
    }
    let flat = tape.reshape(&u, &[layout.chunks * cfg.r, cfg.n])?;
    let proj = linear(b, &flat, "trunk.out")?;
    let proj = tape.prelu(&proj, b.get("trunk.out.prelu")?)?;
    let proj = tape.reshape(&proj, &[layout.chunks, cfg.r, cfg.n])?;
    let nsr = tape.permute(&proj, &[2, 0, 1])?;
    Ok(tape.overlap_add(&nsr, cfg.chunk_hop(), frames)?)
}

fn map_output(tape: &Tape, branch: Branch, t: &Var) -> Result<Var, ModelError> {
    let bounded = |t: &Var| -> Result<Var, ModelError> {
        let s = tape.sigmoid(t)?;
        Ok(tape.clamp(&s, SIGMOID_MARGIN, 1.0 - SIGMOID_MARGIN)?)
    };
    Ok(match branch {
        Branch::Stoi => bounded(t)?,
        Branch::Pesq => {
            let s = tape.scale(&bounded(t)?, PESQ_MAX - PESQ_MIN)?;
            tape.add_const(&s, PESQ_MIN)?
        }
        Branch::SiSdr => t.clone(),
    })
}

/// Transformer block on `Zᵀ`, auto-pooling, two-layer head and the
/// branch-specific output mapping.
pub fn branch_forward(b: &Binder, cfg: &ModelConfig, z: &Var, branch: Branch) -> Result<BranchVars, ModelError> {
    let tape = b.tape();
    let p = format!("branch.{}", branch.name());
    let zt = tape.transpose(z)?;
    let names = |role: &str| -> Vec<String> { (0..cfg.heads).map(|i| format!("{p}.attn.head{i}.{role}")).collect() };
    let fetch = |names: &[String]| -> Result<Vec<&Var>, ModelError> {
        names.iter().map(|n| b.get(n).map_err(ModelError::from)).collect()
    };
    let (qn, kn, vn) = (names("query"), names("key"), names("value"));
    let weights = AttentionWeights {
        query: fetch(&qn)?,
        key: fetch(&kn)?,
        value: fetch(&vn)?,
        output: b.get(&format!("{p}.attn.output"))?,
    };
    let att = tape.multi_head_attention(&zt, &weights)?;
    let a = norm(b, &tape.add(&zt, &att)?, 1, &format!("{p}.norm1"))?;
    let f = tape.relu(&linear(b, &a, &format!("{p}.ff1"))?)?;
    let f = linear(b, &f, &format!("{p}.ff2"))?;
    let x = norm(b, &tape.add(&a, &f)?, 1, &format!("{p}.norm2"))?;
    let pooled = tape.auto_pool(&x, b.get(&format!("{p}.pool.alpha"))?)?;
    let pooled = tape.reshape(&pooled, &[1, cfg.d])?;
    let hidden = linear(b, &pooled, &format!("{p}.head1"))?;
    let hidden = tape.prelu(&hidden, b.get(&format!("{p}.head1.prelu"))?)?;
    let t = tape.reshape(&linear(b, &hidden, &format!("{p}.head2"))?, &[1])?;
    let s = map_output(tape, branch, &t)?;
    Ok(BranchVars { t, s })
}

/// Per-frame linear map `N -> P`, frame-level overlap-add at hop `P/2`,
/// zero-padded to `len` samples.
pub fn decoder_forward(b: &Binder, cfg: &ModelConfig, z: &Var, len: usize) -> Result<Var, ModelError> {
    let tape = b.tape();
    let frames = linear(b, &tape.transpose(z)?, "decoder")?;
    let l = frames.shape()[0];
    let natural = (l - 1) * cfg.encoder_hop() + cfg.p;
    let wave = tape.overlap_add(&frames, cfg.encoder_hop(), natural)?;
    Ok(tape.pad_end(&wave, len)?)
}

/// Full forward pass on 16 kHz samples.
pub fn forward(b: &Binder, cfg: &ModelConfig, y: &[f64], with_mtl: bool) -> Result<ForwardVars, ModelError> {
    if y.len() < cfg.p {
        return Err(crate::nn::NnError::InputTooShort {
            len: y.len(),
            needed: cfg.p,
        }
        .into());
    }
    let z = trunk_forward(b, cfg, y)?;
    let stoi = branch_forward(b, cfg, &z, Branch::Stoi)?;
    let pesq = branch_forward(b, cfg, &z, Branch::Pesq)?;
    let si_sdr = branch_forward(b, cfg, &z, Branch::SiSdr)?;
    let recon = if with_mtl {
        Some(decoder_forward(b, cfg, &z, y.len())?)
    } else {
        None
    };
    Ok(ForwardVars {
        z,
        stoi,
        pesq,
        si_sdr,
        recon,
    })
}

fn at_model_rate(y: &Waveform) -> Result<Waveform, ModelError> {
    if y.sample_rate() == DEFAULT_SAMPLE_RATE {
        Ok(y.clone())
    } else {
        Ok(resample(y, DEFAULT_SAMPLE_RATE)?)
    }
}

/// Inference: the three estimates and, with `with_mtl`, the reconstructed
/// reference. Input at other rates is resampled to 16 kHz first.
pub fn model_forward(
    y: &Waveform,
    cfg: &ModelConfig,
    store: &ParamStore,
    with_mtl: bool,
) -> Result<(MetricTriple, Option<Vec<f64>>), ModelError> {
    let y = at_model_rate(y)?;
    let tape = Tape::new();
    let binder = Binder::new(&tape, store, false);
    let out = forward(&binder, cfg, y.samples(), with_mtl)?;
    let recon = out.recon.as_ref().map(|r| r.data().to_vec());
    Ok((out.triple()?, recon))
}
