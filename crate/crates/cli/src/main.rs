//! `squim`: dataset synthesis, intrusive oracles, training, reference-less
//! estimation and evaluation. Results go to stdout as TSV; the resolved
//! configuration and diagnostics go to stderr.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use squim::metrics::{si_sdr, stoi, EvalReport, MetricError, MetricStats};
use squim::model::{init_params, load_checkpoint, model_forward, save_checkpoint, ModelConfig, ModelError};
use squim::nn::ParamStore;
use squim::signal::load_wav;
use squim::train::{
    apply_pesq_labels, evaluate_model, load_dataset_dir, load_label_file, load_train_state, parse_run_config,
    resume, save_dataset_dir, save_train_state, synth_dataset, write_log, write_scatter, CleanSource,
    LabeledSample, RunConfig, SynthOptions, TrainError, TrainState,
};

#[derive(Parser)]
#[command(name = "squim", version, about = "Reference-less speech metric estimation")]
struct Cli {
    /// Worker threads for synthesis and evaluation (default: available parallelism).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesise a labelled dataset of degraded/clean pairs.
    Synth(SynthArgs),
    /// Compute intrusive metrics of an estimate against a reference.
    Oracle(OracleArgs),
    /// Train the estimator on a synthesised dataset.
    Train(TrainArgs),
    /// Estimate STOI, PESQ and SI-SDR of WAV files without a reference.
    Estimate(EstimateArgs),
    /// Evaluate a checkpoint against dataset labels.
    Eval(EvalArgs),
    /// Export per-sample truth/estimate pairs for scatter plots.
    Scatter(ScatterArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 16)]
    n: usize,
    /// Clip duration in seconds.
    #[arg(long, default_value_t = 1.0)]
    dur: f64,
    #[arg(long, default_value_t = -15.0, allow_negative_numbers = true)]
    snr_lo: f64,
    #[arg(long, default_value_t = 25.0, allow_negative_numbers = true)]
    snr_hi: f64,
    #[arg(long, env = "SQUIM_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
    /// Directory of clean WAV files to mix instead of synthetic speech.
    #[arg(long)]
    clean_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OracleMetric {
    Stoi,
    Sisdr,
    All,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    est: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long, value_enum, default_value_t = OracleMetric::All)]
    metric: OracleMetric,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Preset {
    /// Full-size configuration (N=256, P=64, R=71, ...).
    Full,
    /// Small configuration for one-second clips.
    Desk,
    /// Smallest configuration, for smoke tests on very short input.
    Tiny,
}

impl Preset {
    fn config(self) -> ModelConfig {
        match self {
            Preset::Full => ModelConfig::default(),
            Preset::Desk => ModelConfig::desk(),
            Preset::Tiny => ModelConfig::tiny(),
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory written by `squim synth`.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoint, log and training state.
    #[arg(long)]
    out_dir: PathBuf,
    /// Flat `key = value` file overriding the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    preset: Preset,
    /// `id<TAB>pesq` label file.
    #[arg(long)]
    pesq_labels: Option<PathBuf>,
    /// Training state to continue from.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, env = "SQUIM_SEED")]
    seed: Option<u64>,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(required = true)]
    wavs: Vec<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    pesq_labels: Option<PathBuf>,
}

#[derive(Args)]
struct ScatterArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    pesq_labels: Option<PathBuf>,
    /// Output TSV path.
    #[arg(long)]
    out: PathBuf,
}

/// Failure with its process exit code.
struct Failure {
    code: u8,
    msg: String,
}

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_NO_CHECKPOINT: u8 = 3;
const EXIT_BAD_CONFIG: u8 = 4;

impl Failure {
    fn new(code: u8, msg: impl Into<String>) -> Self {
        Self { code, msg: msg.into() }
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        let code = match &e {
            TrainError::Config { .. } => EXIT_BAD_CONFIG,
            TrainError::InvalidArgument(_) => EXIT_USAGE,
            _ => EXIT_FAILURE,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        Failure::new(EXIT_FAILURE, e.to_string())
    }
}

impl From<squim::signal::SignalError> for Failure {
    fn from(e: squim::signal::SignalError) -> Self {
        Failure::new(EXIT_FAILURE, e.to_string())
    }
}

impl From<MetricError> for Failure {
    fn from(e: MetricError) -> Self {
        let code = match e {
            MetricError::LengthMismatch(..) | MetricError::RateMismatch(..) => EXIT_USAGE,
            _ => EXIT_FAILURE,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::new(EXIT_FAILURE, e.to_string())
    }
}

fn show(pairs: &[(&str, String)]) {
    for (k, v) in pairs {
        eprintln!("{k} = {v}");
    }
}

fn opt_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or_else(|| "-".into(), |p| p.display().to_string())
}

fn cmd_synth(a: &SynthArgs) -> Result<(), Failure> {
    show(&[
        ("n", a.n.to_string()),
        ("dur", a.dur.to_string()),
        ("snr_lo", a.snr_lo.to_string()),
        ("snr_hi", a.snr_hi.to_string()),
        ("seed", a.seed.to_string()),
        ("out_dir", a.out_dir.display().to_string()),
        ("clean_dir", opt_path(&a.clean_dir)),
    ]);
    if a.snr_lo > a.snr_hi {
        return Err(Failure::new(
            EXIT_USAGE,
            format!("--snr-lo ({}) must not exceed --snr-hi ({})", a.snr_lo, a.snr_hi),
        ));
    }
    if !(a.dur > 0.0) {
        return Err(Failure::new(EXIT_USAGE, format!("--dur must be positive, got {}", a.dur)));
    }
    let opts = SynthOptions {
        n: a.n,
        duration_s: a.dur,
        snr_range: (a.snr_lo, a.snr_hi),
        seed: a.seed,
        clean: a.clean_dir.clone().map_or(CleanSource::Synthetic, CleanSource::Directory),
    };
    let data = synth_dataset(&opts)?;
    save_dataset_dir(&a.out_dir, &data, &opts)?;
    eprintln!("wrote {} pairs to {}", data.len(), a.out_dir.display());
    Ok(())
}

fn cmd_oracle(a: &OracleArgs) -> Result<(), Failure> {
    let metric = match a.metric {
        OracleMetric::Stoi => "stoi",
        OracleMetric::Sisdr => "sisdr",
        OracleMetric::All => "all",
    };
    show(&[
        ("est", a.est.display().to_string()),
        ("ref", a.reference.display().to_string()),
        ("metric", metric.into()),
    ]);
    let est = load_wav(&a.est)?;
    let reference = load_wav(&a.reference)?;
    if est.sample_rate() != reference.sample_rate() {
        return Err(Failure::new(
            EXIT_USAGE,
            format!(
                "sample-rate mismatch: estimate {} Hz, reference {} Hz",
                est.sample_rate(),
                reference.sample_rate()
            ),
        ));
    }
    if est.len() != reference.len() {
        return Err(Failure::new(
            EXIT_USAGE,
            format!(
                "length mismatch: estimate {} samples, reference {} samples",
                est.len(),
                reference.len()
            ),
        ));
    }
    if a.metric != OracleMetric::Sisdr {
        println!("stoi\t{:.6}", stoi(&est, &reference)?);
    }
    if a.metric != OracleMetric::Stoi {
        println!("si_sdr\t{:.6}", si_sdr(&est, &reference)?);
    }
    Ok(())
}

fn read_checkpoint(path: &Path) -> Result<(ModelConfig, ParamStore), Failure> {
    if !path.is_file() {
        return Err(Failure::new(
            EXIT_NO_CHECKPOINT,
            format!("checkpoint not found: {}", path.display()),
        ));
    }
    Ok(load_checkpoint(path)?)
}

fn read_dataset(dir: &Path, pesq: &Option<PathBuf>) -> Result<Vec<LabeledSample>, Failure> {
    let mut data = load_dataset_dir(dir)?;
    if let Some(p) = pesq {
        apply_pesq_labels(&mut data, &load_label_file(p)?);
    }
    Ok(data)
}

fn resolve_run_config(a: &TrainArgs) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig {
        model: a.preset.config(),
        ..RunConfig::default()
    };
    if let Some(path) = &a.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::new(EXIT_BAD_CONFIG, format!("cannot read config {}: {e}", path.display())))?;
        cfg = parse_run_config(&text, cfg)
            .map_err(|e| Failure::new(EXIT_BAD_CONFIG, format!("{}: {e}", path.display())))?;
    }
    let h = &mut cfg.hyper;
    h.epochs = a.epochs.unwrap_or(h.epochs);
    h.lr = a.lr.unwrap_or(h.lr);
    h.batch = a.batch.unwrap_or(h.batch);
    h.seed = a.seed.unwrap_or(h.seed);
    cfg.hyper.validate()?;
    Ok(cfg)
}

fn cmd_train(a: &TrainArgs) -> Result<(), Failure> {
    let run_cfg = resolve_run_config(a)?;
    eprint!("{}", run_cfg.render());
    show(&[
        ("data", a.data.display().to_string()),
        ("out_dir", a.out_dir.display().to_string()),
        ("pesq_labels", opt_path(&a.pesq_labels)),
        ("resume", opt_path(&a.resume)),
    ]);
    let state = match &a.resume {
        Some(p) => {
            let s = load_train_state(p)?;
            if s.cfg != run_cfg.model {
                return Err(Failure::new(
                    EXIT_BAD_CONFIG,
                    "resumed state was trained with a different model configuration",
                ));
            }
            s
        }
        None => TrainState {
            cfg: run_cfg.model,
            store: init_params(&run_cfg.model, run_cfg.hyper.seed)?,
            epochs_done: 0,
        },
    };
    let data = read_dataset(&a.data, &a.pesq_labels)?;
    let run = resume(&data, state, &run_cfg.weights, &run_cfg.hyper)?;
    std::fs::create_dir_all(&a.out_dir)?;
    save_checkpoint(&a.out_dir.join("model.sqmc"), &run.state.cfg, &run.state.store)?;
    save_train_state(&a.out_dir.join("state.bin"), &run.state)?;
    write_log(&a.out_dir.join("train_log.jsonl"), &run.log)?;
    for e in &run.log {
        eprintln!(
            "epoch {} step {} loss {:.6} (stoi {:.6}, sisdr {:.6})",
            e.epoch, e.step, e.loss_total, e.loss_stoi, e.loss_sisdr
        );
    }
    Ok(())
}

fn cmd_estimate(a: &EstimateArgs) -> Result<(), Failure> {
    show(&[("checkpoint", a.checkpoint.display().to_string()), ("inputs", a.wavs.len().to_string())]);
    let (cfg, store) = read_checkpoint(&a.checkpoint)?;
    println!("file\tstoi\tpesq\tsi_sdr");
    for path in &a.wavs {
        let w = load_wav(path)?;
        let (m, _) = model_forward(&w, &cfg, &store, false)?;
        println!(
            "{}\t{:.6}\t{:.6}\t{:.6}",
            path.display(),
            m.stoi,
            m.pesq.unwrap_or(f64::NAN),
            m.si_sdr
        );
    }
    Ok(())
}

fn stats_row(name: &str, s: &MetricStats) -> String {
    let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"));
    format!("{name}\t{:.6}\t{}\t{}\t{}", s.mae, opt(s.pcc), opt(s.srcc), s.n)
}

fn print_report(r: &EvalReport) {
    println!("metric\tmae\tpcc\tsrcc\tn");
    println!("{}", stats_row("stoi_pct", &r.stoi));
    match &r.pesq {
        Some(p) => println!("{}", stats_row("pesq", p)),
        None => println!("pesq\tNA\tNA\tNA\t0"),
    }
    println!("{}", stats_row("si_sdr", &r.si_sdr));
}

fn cmd_eval(a: &EvalArgs) -> Result<(), Failure> {
    show(&[
        ("checkpoint", a.checkpoint.display().to_string()),
        ("data", a.data.display().to_string()),
        ("pesq_labels", opt_path(&a.pesq_labels)),
    ]);
    let (cfg, store) = read_checkpoint(&a.checkpoint)?;
    let data = read_dataset(&a.data, &a.pesq_labels)?;
    let (report, _) = evaluate_model(&cfg, &store, &data)?;
    print_report(&report);
    Ok(())
}

fn cmd_scatter(a: &ScatterArgs) -> Result<(), Failure> {
    show(&[
        ("checkpoint", a.checkpoint.display().to_string()),
        ("data", a.data.display().to_string()),
        ("pesq_labels", opt_path(&a.pesq_labels)),
        ("out", a.out.display().to_string()),
    ]);
    let (cfg, store) = read_checkpoint(&a.checkpoint)?;
    let data = read_dataset(&a.data, &a.pesq_labels)?;
    let (_, rows) = evaluate_model(&cfg, &store, &data)?;
    let n = write_scatter(&a.out, &rows)?;
    eprintln!("wrote {n} rows to {}", a.out.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let workers = cli
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        return Err(Failure::new(EXIT_USAGE, "--workers must be at least 1"));
    }
    eprintln!("workers = {workers}");
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Failure::new(EXIT_FAILURE, e.to_string()))?;
    pool.install(|| match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Train(a) => cmd_train(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Scatter(a) => cmd_scatter(a),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
