use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thn_core::config::RunConfig;
use thn_core::data::pairs::{Batch, PairSampler};
use thn_core::data::synth::gen_benchmark;
use thn_core::data::Sequence;
use thn_core::error::Error;
use thn_core::trainer::{
    checkpoint_path, compute_gradients, load_params, read_log, response_geometry, sgd_step, train, SgdConfig,
    TrainOptions, TrainState, LOG_FILE,
};

fn small_config() -> RunConfig {
    let mut cfg = RunConfig::toy();
    cfg.seed = 3;
    cfg.data.synth.n_sequences = 4;
    cfg.data.synth.length = 16;
    cfg.trainer.epochs = 1;
    cfg.trainer.warmup_epochs = 0;
    cfg.trainer.pairs_per_epoch = 10;
    cfg.trainer.batch = 4;
    cfg
}

fn data(cfg: &RunConfig) -> Vec<Sequence> {
    gen_benchmark(&cfg.data.synth, cfg.seed).unwrap()
}

fn fresh(cfg: &RunConfig) -> TrainState {
    TrainState::fresh(cfg.model().init(cfg.seed).unwrap(), cfg.model_hash())
}

#[test]
fn one_epoch_bookkeeping() {
    let cfg = small_config();
    let dir = tempfile::tempdir().unwrap();
    let opts = TrainOptions {
        out_dir: Some(dir.path()),
        stop_after: None,
    };
    let run = train(&cfg, &data(&cfg), fresh(&cfg), &opts).unwrap();
    // 10 pairs in batches of 4: 4 + 4 + 2.
    assert_eq!(run.log.len(), 3);
    assert_eq!((run.state.epochs_done, run.state.step), (1, 3));
    assert_eq!(run.log.iter().map(|r| r.step).collect::<Vec<_>>(), vec![0, 1, 2]);
    for row in &run.log {
        assert!((row.report.total - row.report.recomposed_total()).abs() <= 1e-9);
        assert!(row.report.n_pos + row.report.n_neg > 0);
    }
    let csv = |rows: &[thn_core::trainer::LogRow]| rows.iter().map(|r| r.to_csv()).collect::<Vec<_>>();
    assert_eq!(csv(&read_log(&dir.path().join(LOG_FILE)).unwrap()), csv(&run.log));
    assert!(checkpoint_path(dir.path(), 0).exists());
    let saved = TrainState::load(&dir.path().join("last.thnk")).unwrap();
    assert_eq!(saved, run.state);
}

#[test]
fn frozen_parameters_never_move() {
    let cfg = small_config();
    let start = fresh(&cfg);
    let frozen = cfg.model().frozen();
    assert!(!frozen.is_empty());
    let opts = TrainOptions {
        out_dir: None,
        stop_after: None,
    };
    let run = train(&cfg, &data(&cfg), start.clone(), &opts).unwrap();
    let mut moved = 0;
    for (name, t) in run.state.params.iter() {
        let before = start.params.get(name).unwrap();
        if frozen.contains(name) {
            assert_eq!(t.data(), before.data(), "{name} changed");
        } else if t.data() != before.data() {
            moved += 1;
        }
    }
    assert!(moved > 0);
}

#[test]
fn fixed_batch_loss_falls_over_fifty_steps() {
    let cfg = small_config();
    let seqs = data(&cfg);
    let response = response_geometry(&cfg, cfg.data.sizes.search_train).unwrap();
    let mut pairs = cfg.data.pairs.clone();
    pairs.neg_rate = 0.0;
    let sampler = PairSampler::new(&seqs, pairs, cfg.data.sizes.clone(), cfg.data.labels, response).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let samples: Vec<_> = (0..4).map(|_| sampler.sample(&mut rng).unwrap()).collect();
    let batch = Batch::from_samples(&samples).unwrap();
    let frozen = cfg.model().frozen();
    let mut state = fresh(&cfg);
    let sgd = SgdConfig {
        lr: 0.001,
        momentum: 0.9,
        weight_decay: 1e-4,
    };
    let mut losses = Vec::new();
    for _ in 0..50 {
        let (report, grads) = compute_gradients(&cfg, &state.params, &frozen, &batch).unwrap();
        losses.push(report.total);
        sgd_step(&mut state.params, &grads, &mut state.momentum, &sgd, &frozen).unwrap();
    }
    let first: f64 = losses[..5].iter().sum::<f64>() / 5.0;
    let last: f64 = losses[45..].iter().sum::<f64>() / 5.0;
    assert!(last < 0.8 * first, "loss went from {first} to {last}");
}

#[test]
fn interrupted_run_resumes_to_the_same_result() {
    let mut cfg = small_config();
    cfg.trainer.epochs = 3;
    cfg.trainer.warmup_epochs = 1;
    cfg.trainer.pairs_per_epoch = 8;
    let seqs = data(&cfg);
    let full_dir = tempfile::tempdir().unwrap();
    let full = train(
        &cfg,
        &seqs,
        fresh(&cfg),
        &TrainOptions {
            out_dir: Some(full_dir.path()),
            stop_after: None,
        },
    )
    .unwrap();

    let split_dir = tempfile::tempdir().unwrap();
    let first = train(
        &cfg,
        &seqs,
        fresh(&cfg),
        &TrainOptions {
            out_dir: Some(split_dir.path()),
            stop_after: Some(1),
        },
    )
    .unwrap();
    assert_eq!(first.state.epochs_done, 1);
    let resumed_state = TrainState::load(&split_dir.path().join("last.thnk")).unwrap();
    let rest = train(
        &cfg,
        &seqs,
        resumed_state,
        &TrainOptions {
            out_dir: Some(split_dir.path()),
            stop_after: None,
        },
    )
    .unwrap();
    assert_eq!(rest.state, full.state);
    let a = std::fs::read(full_dir.path().join(LOG_FILE)).unwrap();
    let b = std::fs::read(split_dir.path().join(LOG_FILE)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn checkpoint_from_another_architecture_is_refused() {
    let cfg = small_config();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.thnk");
    fresh(&cfg).save(&path).unwrap();
    assert!(load_params(&path, &cfg).is_ok());
    let mut other = cfg.clone();
    other.matcher.c_out = 8;
    other.set("matcher", "c_out", "8").unwrap();
    match load_params(&path, &other) {
        Err(Error::Checkpoint(msg)) => assert!(msg.contains("config"), "{msg}"),
        other => panic!("expected a checkpoint refusal, got {other:?}"),
    }
    // Training-only settings do not change the fingerprint.
    let mut relabeled = cfg.clone();
    relabeled.trainer.lr_peak = 0.5;
    assert!(load_params(&path, &relabeled).is_ok());
}

#[test]
fn divergence_aborts_with_a_training_error() {
    let mut cfg = small_config();
    cfg.trainer.lr_start = 1e300;
    cfg.trainer.lr_peak = 1e300;
    cfg.trainer.lr_end = 1e300;
    cfg.trainer.epochs = 2;
    cfg.trainer.warmup_epochs = 1;
    cfg.trainer.pairs_per_epoch = 16;
    let opts = TrainOptions {
        out_dir: None,
        stop_after: None,
    };
    match train(&cfg, &data(&cfg), fresh(&cfg), &opts) {
        Err(Error::Training(msg)) => assert!(msg.contains("diverged"), "{msg}"),
        other => panic!("expected divergence, got {:?}", other.map(|r| r.log.len())),
    }
}
