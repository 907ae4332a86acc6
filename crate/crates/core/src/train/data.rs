use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::TrainError;
use crate::metrics::{si_sdr, stoi, MetricTriple, PESQ_MAX, PESQ_MIN};
use crate::signal::{
    load_wav, mix_at_snr, resample, save_wav, synth_signal, SignalKind, Waveform, DEFAULT_SAMPLE_RATE,
};

/// Mixing SNR range in dB.
pub const DEFAULT_SNR_RANGE: (f64, f64) = (-15.0, 25.0);

/// Degraded/clean pair with its oracle labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub id: String,
    pub degraded: Waveform,
    pub clean: Waveform,
    pub labels: MetricTriple,
    pub snr_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CleanSource {
    /// Speech-like amplitude-modulated pink noise.
    Synthetic,
    /// Mono WAV files, used in file-name order and cycled.
    Directory(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    pub n: usize,
    pub duration_s: f64,
    pub snr_range: (f64, f64),
    pub seed: u64,
    pub clean: CleanSource,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            n: 16,
            duration_s: 1.0,
            snr_range: DEFAULT_SNR_RANGE,
            seed: 0,
            clean: CleanSource::Synthetic,
        }
    }
}

/// Rounds every sample to `f32` so that labels survive a float WAV round trip.
fn f32_exact(w: Waveform) -> Result<Waveform, TrainError> {
    let rate = w.sample_rate();
    let samples = w.into_samples().into_iter().map(|v| v as f32 as f64).collect();
    Ok(Waveform::new(samples, rate)?)
}

fn clean_files(dir: &Path) -> Result<Vec<PathBuf>, TrainError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(TrainError::EmptyCleanDir(dir.display().to_string()));
    }
    Ok(files)
}

fn load_clean(path: &Path, duration_s: f64) -> Result<Waveform, TrainError> {
    let w = load_wav(path)?;
    let w = if w.sample_rate() == DEFAULT_SAMPLE_RATE {
        w
    } else {
        resample(&w, DEFAULT_SAMPLE_RATE)?
    };
    let keep = ((duration_s * DEFAULT_SAMPLE_RATE as f64).round() as usize).clamp(1, w.len());
    let mut samples = w.into_samples();
    samples.truncate(keep);
    Ok(Waveform::new(samples, DEFAULT_SAMPLE_RATE)?)
}

/// `n` labelled mixtures at 16 kHz. Each sample draws its clean signal,
/// white or pink noise and a uniform SNR from its own seed, so the result
/// does not depend on the worker count.
pub fn synth_dataset(opts: &SynthOptions) -> Result<Vec<LabeledSample>, TrainError> {
    let (lo, hi) = opts.snr_range;
    if opts.n == 0 {
        return Err(TrainError::InvalidArgument("n must be at least 1".into()));
    }
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(TrainError::InvalidArgument(format!("invalid SNR range [{lo}, {hi}]")));
    }
    let files = match &opts.clean {
        CleanSource::Synthetic => Vec::new(),
        CleanSource::Directory(dir) => clean_files(dir)?,
    };
    let mut master = ChaCha8Rng::seed_from_u64(opts.seed);
    let seeds: Vec<u64> = (0..opts.n).map(|_| master.gen()).collect();
    seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let clean = match files.get(i % files.len().max(1)) {
                Some(path) => load_clean(path, opts.duration_s)?,
                None => synth_signal(SignalKind::SpeechLikeAmNoise, opts.duration_s, DEFAULT_SAMPLE_RATE, rng.gen())?,
            };
            let clean = f32_exact(clean)?;
            let kind = if rng.gen_bool(0.5) {
                SignalKind::WhiteNoise
            } else {
                SignalKind::PinkNoise
            };
            let noise = synth_signal(kind, clean.duration_s(), DEFAULT_SAMPLE_RATE, rng.gen())?;
            let snr_db = if lo == hi { lo } else { rng.gen_range(lo..hi) };
            let degraded = f32_exact(mix_at_snr(&clean, &noise, snr_db)?.mixture)?;
            let labels = MetricTriple::new(stoi(&degraded, &clean)?, None, si_sdr(&degraded, &clean)?)?;
            Ok(LabeledSample {
                id: format!("s{i:05}"),
                degraded,
                clean,
                labels,
                snr_db,
            })
        })
        .collect()
}

fn label_err(path: &Path, line: usize, msg: impl Into<String>) -> TrainError {
    TrainError::Labels {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Reads an `id<TAB>pesq` file with that header line.
pub fn load_label_file(path: &Path) -> Result<BTreeMap<String, f64>, TrainError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end_matches('\r') == "id\tpesq" => {}
        _ => return Err(label_err(path, 1, "expected header \"id\\tpesq\"")),
    }
    let mut out = BTreeMap::new();
    for (i, raw) in lines {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let (id, score) = raw
            .split_once('\t')
            .ok_or_else(|| label_err(path, line, "expected two tab-separated columns"))?;
        let score: f64 = score
            .trim()
            .parse()
            .map_err(|e| label_err(path, line, format!("bad score: {e}")))?;
        if !(PESQ_MIN..=PESQ_MAX).contains(&score) {
            return Err(label_err(path, line, format!("score {score} outside [{PESQ_MIN}, {PESQ_MAX}]")));
        }
        if out.insert(id.to_string(), score).is_some() {
            return Err(label_err(path, line, format!("duplicate id {id:?}")));
        }
    }
    Ok(out)
}

/// Attaches PESQ labels by id; samples without an entry stay unlabelled.
pub fn apply_pesq_labels(samples: &mut [LabeledSample], labels: &BTreeMap<String, f64>) {
    for s in samples {
        s.labels.pesq = labels.get(&s.id).copied();
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    samples: usize,
    sample_rate: u32,
    duration_s: f64,
    snr_range: [f64; 2],
    seed: u64,
    clean_source: String,
    ids: Vec<&'a str>,
}

/// Writes `clean/<id>.wav`, `degraded/<id>.wav`, `labels.tsv`
/// (`id, stoi, si_sdr, snr_db`) and `manifest.json`.
pub fn save_dataset_dir(dir: &Path, samples: &[LabeledSample], opts: &SynthOptions) -> Result<(), TrainError> {
    fs::create_dir_all(dir.join("clean"))?;
    fs::create_dir_all(dir.join("degraded"))?;
    let mut tsv = String::from("id\tstoi\tsi_sdr\tsnr_db\n");
    for s in samples {
        save_wav(&s.clean, dir.join("clean").join(format!("{}.wav", s.id)))?;
        save_wav(&s.degraded, dir.join("degraded").join(format!("{}.wav", s.id)))?;
        tsv.push_str(&format!("{}\t{}\t{}\t{}\n", s.id, s.labels.stoi, s.labels.si_sdr, s.snr_db));
    }
    fs::write(dir.join("labels.tsv"), tsv)?;
    let manifest = Manifest {
        samples: samples.len(),
        sample_rate: DEFAULT_SAMPLE_RATE,
        duration_s: opts.duration_s,
        snr_range: [opts.snr_range.0, opts.snr_range.1],
        seed: opts.seed,
        clean_source: match &opts.clean {
            CleanSource::Synthetic => "synthetic".into(),
            CleanSource::Directory(p) => p.display().to_string(),
        },
        ids: samples.iter().map(|s| s.id.as_str()).collect(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(std::io::Error::other)?;
    fs::write(dir.join("manifest.json"), json + "\n")?;
    Ok(())
}

/// Reads a directory written by [`save_dataset_dir`].
pub fn load_dataset_dir(dir: &Path) -> Result<Vec<LabeledSample>, TrainError> {
    let path = dir.join("labels.tsv");
    let text = fs::read_to_string(&path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == "id\tstoi\tsi_sdr\tsnr_db" => {}
        _ => return Err(label_err(&path, 1, "expected header \"id\\tstoi\\tsi_sdr\\tsnr_db\"")),
    }
    let mut out = Vec::new();
    for (i, raw) in lines {
        if raw.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = raw.split('\t').collect();
        if cols.len() != 4 {
            return Err(label_err(&path, i + 1, "expected four columns"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| label_err(&path, i + 1, format!("{s:?}: {e}")));
        let id = cols[0].to_string();
        let clean = load_wav(dir.join("clean").join(format!("{id}.wav")))?;
        let degraded = load_wav(dir.join("degraded").join(format!("{id}.wav")))?;
        if clean.len() != degraded.len() {
            return Err(label_err(&path, i + 1, format!("{id}: clean and degraded lengths differ")));
        }
        out.push(LabeledSample {
            labels: MetricTriple::new(num(cols[1])?, None, num(cols[2])?)?,
            snr_db: num(cols[3])?,
            id,
            clean,
            degraded,
        });
    }
    if out.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    Ok(out)
}
