use std::collections::BTreeMap;

use squim::metrics::{si_sdr, stoi, MetricTriple};
use squim::model::{checkpoint_bytes, exclusive_params, forward, init_params, Branch, ModelConfig};
use squim::nn::{Binder, Tape};
use squim::train::*;
use tempfile::tempdir;

fn small_set(n: usize, seed: u64) -> Vec<LabeledSample> {
    synth_dataset(&SynthOptions {
        n,
        duration_s: 1.0,
        seed,
        ..SynthOptions::default()
    })
    .unwrap()
}

#[test]
fn synth_labels_track_snr_and_oracles() {
    let data = synth_dataset(&SynthOptions {
        n: 12,
        duration_s: 1.0,
        seed: 3,
        ..SynthOptions::default()
    })
    .unwrap();
    assert_eq!(DEFAULT_SNR_RANGE, (-15.0, 25.0));
    for s in &data {
        assert!((-15.0..25.0).contains(&s.snr_db));
        assert!((s.labels.si_sdr - s.snr_db).abs() < 3.0, "{} vs {}", s.labels.si_sdr, s.snr_db);
        assert_eq!(s.degraded.len(), 16_000);
        assert_eq!(s.labels.pesq, None);
        assert!((stoi(&s.degraded, &s.clean).unwrap() - s.labels.stoi).abs() < 1e-9);
        assert!((si_sdr(&s.degraded, &s.clean).unwrap() - s.labels.si_sdr).abs() < 1e-9);
    }
}

#[test]
fn synth_is_deterministic_and_pool_independent() {
    let opts = SynthOptions {
        n: 6,
        seed: 9,
        ..SynthOptions::default()
    };
    let a = synth_dataset(&opts).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let b = pool.install(|| synth_dataset(&opts).unwrap());
    assert_eq!(a, b);
    let c = synth_dataset(&SynthOptions { seed: 10, ..opts.clone() }).unwrap();
    assert_ne!(a[0].labels, c[0].labels);
    let ids: Vec<&str> = a.iter().map(|s| s.id.as_str()).collect();
    assert_eq!(ids, ["s00000", "s00001", "s00002", "s00003", "s00004", "s00005"]);
}

#[test]
fn synth_rejects_bad_arguments() {
    let bad_range = SynthOptions {
        snr_range: (10.0, 0.0),
        ..SynthOptions::default()
    };
    assert!(matches!(synth_dataset(&bad_range), Err(TrainError::InvalidArgument(_))));
    let none = SynthOptions { n: 0, ..SynthOptions::default() };
    assert!(synth_dataset(&none).is_err());
    let dir = tempdir().unwrap();
    let empty = SynthOptions {
        clean: CleanSource::Directory(dir.path().to_path_buf()),
        ..SynthOptions::default()
    };
    assert!(matches!(synth_dataset(&empty), Err(TrainError::EmptyCleanDir(_))));
}

#[test]
fn clean_directory_mode_uses_files() {
    let dir = tempdir().unwrap();
    let base = small_set(2, 1);
    for (i, s) in base.iter().enumerate() {
        squim::signal::save_wav(&s.clean, dir.path().join(format!("c{i}.wav"))).unwrap();
    }
    let data = synth_dataset(&SynthOptions {
        n: 3,
        duration_s: 0.5,
        seed: 4,
        clean: CleanSource::Directory(dir.path().to_path_buf()),
        ..SynthOptions::default()
    })
    .unwrap();
    assert_eq!(data[0].clean.samples(), &base[0].clean.samples()[..8000]);
    assert_eq!(data[2].clean, data[0].clean);
}

#[test]
fn dataset_directory_round_trip() {
    let dir = tempdir().unwrap();
    let opts = SynthOptions {
        n: 3,
        seed: 2,
        ..SynthOptions::default()
    };
    let data = synth_dataset(&opts).unwrap();
    save_dataset_dir(dir.path(), &data, &opts).unwrap();
    let back = load_dataset_dir(dir.path()).unwrap();
    assert_eq!(data, back);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["samples"], 3);
}

#[test]
fn label_file_validation() {
    let dir = tempdir().unwrap();
    let p = dir.path().join("pesq.tsv");
    std::fs::write(&p, "id\tpesq\ns00000\t2.5\ns00002\t4.64\n").unwrap();
    let labels = load_label_file(&p).unwrap();
    assert_eq!(labels, BTreeMap::from([("s00000".to_string(), 2.5), ("s00002".to_string(), 4.64)]));

    let mut data = small_set(3, 5);
    apply_pesq_labels(&mut data, &labels);
    assert_eq!(data[0].labels.pesq, Some(2.5));
    assert_eq!(data[1].labels.pesq, None);

    for bad in ["id\tpesq\na\t5.0\n", "id\tpesq\na\t2\na\t3\n", "name\tpesq\na\t2\n", "id\tpesq\na 2\n"] {
        std::fs::write(&p, bad).unwrap();
        assert!(matches!(load_label_file(&p), Err(TrainError::Labels { .. })), "{bad:?}");
    }
}

#[test]
fn tape_loss_matches_scalar_loss() {
    let cfg = ModelConfig::desk();
    let store = init_params(&cfg, 1).unwrap();
    let mut data = small_set(1, 6);
    data[0].labels.pesq = Some(3.2);
    let s = &data[0];
    for kind in [LossKind::Mae, LossKind::Mse] {
        let w = LossWeights::default();
        let tape = Tape::new();
        let b = Binder::new(&tape, &store, true);
        let out = forward(&b, &cfg, s.degraded.samples(), true).unwrap();
        let (loss, parts) = sample_loss(&tape, &out, s, &w, kind).unwrap();
        let recon = out.recon.as_ref().unwrap().data().to_vec();
        let scalar = total_loss(&out.triple().unwrap(), Some(&recon), s, &w, kind).unwrap();
        assert!((loss.unwrap().item() - scalar).abs() < 1e-12);
        assert!((parts.weighted(&w) - scalar).abs() < 1e-12);
    }
}

#[test]
fn masked_pesq_gives_no_pesq_head_gradient() {
    let cfg = ModelConfig::desk();
    let store = init_params(&cfg, 2).unwrap();
    let data = small_set(1, 7);
    let tape = Tape::new();
    let b = Binder::new(&tape, &store, true);
    let out = forward(&b, &cfg, data[0].degraded.samples(), true).unwrap();
    let (loss, parts) = sample_loss(&tape, &out, &data[0], &LossWeights::default(), LossKind::Mae).unwrap();
    assert_eq!(parts.pesq, None);
    let grads = b.grads(&tape.backward(&loss.unwrap()).unwrap());
    for name in exclusive_params(&store, Some(Branch::Pesq)) {
        assert!(grads[&name].iter().all(|&g| g == 0.0), "{name}");
    }
    assert!(grads["branch.stoi.head2.w"].iter().any(|&g| g != 0.0));
}

fn hyper(epochs: usize) -> TrainHyper {
    TrainHyper {
        epochs,
        seed: 5,
        ..TrainHyper::default()
    }
}

const MTL: LossWeights = LossWeights {
    w0: 2.0,
    w1: 1.0,
    w2: 2.0,
    w3: 0.5,
};

#[test]
fn zero_epochs_returns_initialisation() {
    let cfg = ModelConfig::desk();
    let data = small_set(2, 1);
    let run = train(&data, &cfg, &MTL, &hyper(0)).unwrap();
    assert!(run.log.is_empty());
    let init = init_params(&cfg, 5).unwrap();
    assert_eq!(
        checkpoint_bytes(&cfg, &run.state.store).unwrap(),
        checkpoint_bytes(&cfg, &init).unwrap()
    );
}

#[test]
fn training_losses_fall_over_first_epochs() {
    let cfg = ModelConfig::desk();
    let data = small_set(16, 1);
    let run = train(&data, &cfg, &MTL, &hyper(5)).unwrap();
    assert_eq!(run.log.len(), 5);
    assert_eq!(run.log[4].step, 20);
    for pair in run.log.windows(2) {
        assert!(pair[1].loss_stoi < pair[0].loss_stoi, "{pair:?}");
        assert!(pair[1].loss_sisdr < pair[0].loss_sisdr, "{pair:?}");
        assert!(pair[1].loss_recon < pair[0].loss_recon, "{pair:?}");
        assert!(pair[0].loss_pesq.is_none());
    }
}

#[test]
fn resume_matches_uninterrupted_training() {
    let cfg = ModelConfig::desk();
    let data = small_set(6, 2);
    let full = train(&data, &cfg, &MTL, &hyper(3)).unwrap();
    let partial = train(&data, &cfg, &MTL, &hyper(2)).unwrap();
    let dir = tempdir().unwrap();
    let path = dir.path().join("state.bin");
    save_train_state(&path, &partial.state).unwrap();
    let loaded = load_train_state(&path).unwrap();
    assert_eq!(loaded, partial.state);
    let resumed = resume(&data, loaded, &MTL, &hyper(3)).unwrap();
    assert_eq!(resumed.state, full.state);
    assert_eq!(resumed.log, full.log[2..]);
}

#[test]
fn non_finite_parameters_are_reported_as_divergence() {
    let cfg = ModelConfig::desk();
    let data = small_set(2, 3);
    let mut store = init_params(&cfg, 0).unwrap();
    store.get_mut("trunk.out.b").unwrap().data_mut()[0] = f64::NAN;
    let state = TrainState {
        cfg,
        store,
        epochs_done: 0,
    };
    match resume(&data, state, &MTL, &hyper(1)) {
        Err(TrainError::Diverged { epoch: 1, step: 1, .. }) => {}
        other => panic!("{other:?}"),
    }
}

#[test]
fn log_is_json_lines() {
    let cfg = ModelConfig::desk();
    let data = small_set(2, 4);
    let run = train(&data, &cfg, &MTL, &hyper(2)).unwrap();
    let dir = tempdir().unwrap();
    let path = dir.path().join("log.jsonl");
    write_log(&path, &run.log).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    for key in ["epoch", "step", "loss_total", "loss_stoi", "loss_pesq", "loss_sisdr", "loss_recon"] {
        assert!(lines[1].get(key).is_some(), "{key}");
    }
    assert_eq!(lines[1]["epoch"], 2);
    assert!(lines[1]["loss_pesq"].is_null());
}

#[test]
fn evaluation_and_scatter_export() {
    let cfg = ModelConfig::desk();
    let store = init_params(&cfg, 3).unwrap();
    let mut data = small_set(4, 8);
    let (report, rows) = evaluate_model(&cfg, &store, &data).unwrap();
    assert_eq!(report.n, 4);
    assert!(report.pesq.is_none());
    assert!(report.stoi.mae.is_finite() && report.si_sdr.mae.is_finite());
    let dir = tempdir().unwrap();
    let path = dir.path().join("scatter.tsv");
    assert_eq!(write_scatter(&path, &rows).unwrap(), 8);
    let back = read_scatter(&path).unwrap();
    assert_eq!(back.len(), 8);
    assert_eq!(back[0].metric, "stoi");
    assert_eq!(back[0].truth, rows[0].truth.stoi);
    assert_eq!(back[1].estimate, rows[0].estimate.si_sdr);

    data[1].labels.pesq = Some(2.0);
    assert_eq!(export_scatter(&cfg, &store, &data, &path).unwrap(), 9);
    let (report, _) = evaluate_model(&cfg, &store, &data).unwrap();
    assert_eq!(report.pesq.unwrap().n, 1);

    let perfect: Vec<SampleEstimate> = data
        .iter()
        .map(|s| SampleEstimate {
            id: s.id.clone(),
            truth: s.labels,
            estimate: MetricTriple { pesq: s.labels.pesq, ..s.labels },
        })
        .collect();
    write_scatter(&path, &perfect).unwrap();
    assert!(read_scatter(&path).unwrap().iter().all(|r| r.truth == r.estimate));
}
