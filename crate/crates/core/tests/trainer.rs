use std::path::Path;

use cgfr::cfam::CfamVariant;
use cgfr::datagen::caption_vocabulary;
use cgfr::model::Model;
use cgfr::pipeline::{self, Prepared};
use cgfr::trainer::{
    epoch_batches, load_checkpoint, param_hash, run_phase, save_checkpoint, schedule_for, steps_per_epoch, train_phase1,
    train_phase2, Phase, PhaseState, RunOptions,
};
use cgfr::{CgfrError, Config};

fn tiny_config(seed: u64) -> Config {
    Config {
        seed,
        n_identities: 4,
        images_per_identity: 5,
        captions_per_image: 3,
        text_dim: 16,
        text_layers: 1,
        text_heads: 2,
        text_ffn_mult: 2,
        batch_size: 4,
        phase1_epochs: 2,
        phase2_epochs: 2,
        n_genuine: 8,
        n_impostor: 20,
        ..Config::default()
    }
}

fn prepared(cfg: &Config) -> Prepared {
    pipeline::prepare_generated(cfg).unwrap()
}

fn fresh(cfg: &Config, p: &Prepared) -> Model {
    Model::new(cfg, caption_vocabulary(), p.num_classes()).unwrap()
}

fn no_ckpt() -> RunOptions {
    RunOptions {
        checkpoint_dir: None,
        stop_after: None,
    }
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

#[test]
fn schedule_hits_its_anchor_points() {
    let cfg = Config::default();
    let s = schedule_for(&cfg, 10_000).unwrap();
    assert_eq!(s.warmup_iters, 2000);
    assert!((s.lr_at(0).unwrap() - 1e-5).abs() <= 1e-12);
    assert!((s.lr_at(2000).unwrap() - 1e-4).abs() <= 1e-12);
    assert!((s.lr_at(10_000).unwrap() - 1e-5).abs() <= 1e-12);
    let mut prev = 0.0;
    for it in 0..=2000 {
        let lr = s.lr_at(it).unwrap();
        assert!(lr >= prev);
        prev = lr;
    }
    for it in 2001..=10_000 {
        let lr = s.lr_at(it).unwrap();
        assert!(lr <= prev);
        prev = lr;
    }
    // short runs warm up over a tenth of the run
    let short = schedule_for(&cfg, 40).unwrap();
    assert_eq!(short.warmup_iters, 4);
    assert!((short.lr_at(4).unwrap() - 1e-4).abs() <= 1e-12);
    assert!(schedule_for(&cfg, 1).is_err());
    let half = s.scaled(0.1);
    assert!((half.lr_at(2000).unwrap() - 1e-5).abs() <= 1e-12);
}

#[test]
fn epoch_batches_cover_every_row_once() {
    let cfg = tiny_config(0);
    let p = prepared(&cfg);
    let n = p.train.len();
    assert_eq!(n, 8);
    let b = epoch_batches(&p.train, 3, 5, Phase::One, 0);
    assert_eq!(b.len(), steps_per_epoch(&p.train, 3));
    let mut rows: Vec<usize> = b.iter().flatten().map(|x| x.0).collect();
    rows.sort();
    assert_eq!(rows, (0..n).collect::<Vec<_>>());
    assert!(b.iter().flatten().all(|&(r, c)| c < p.train.captions[r].len()));
    assert_eq!(b, epoch_batches(&p.train, 3, 5, Phase::One, 0));
    assert_ne!(b, epoch_batches(&p.train, 3, 5, Phase::One, 1));
    assert_ne!(b, epoch_batches(&p.train, 3, 5, Phase::Two, 0));
    // 7 rows in batches of 3 leave a single row, which is dropped
    assert_eq!(steps_per_epoch(&p.train, 7), 1);
}

#[test]
fn frozen_encoder_is_bit_identical_across_both_phases() {
    let cfg = tiny_config(1);
    let p = prepared(&cfg);
    let dir = tempfile::tempdir().unwrap();
    let mut m1 = fresh(&cfg, &p);
    let before = param_hash(&m1.store, "image.");
    let text_before = param_hash(&m1.store, "text.");
    let opts = RunOptions {
        checkpoint_dir: Some(dir.path().to_path_buf()),
        stop_after: None,
    };
    let r1 = train_phase1(&mut m1, &p.train, &opts).unwrap();
    assert_eq!(r1.frozen_hash_before, before);
    assert_eq!(r1.frozen_hash_after, before);
    assert_ne!(param_hash(&m1.store, "text."), text_before);
    assert_eq!(r1.epochs.len(), 2);
    assert_eq!(r1.lr_trace.len(), 2 * steps_per_epoch(&p.train, 4));
    assert_eq!(r1.lr_trace[0], cfg.lr_init);

    let mut m2 = fresh(&cfg, &p);
    let cfam_before = param_hash(&m2.store, "cfam.");
    let r2 = train_phase2(&mut m2, &p.train, r1.checkpoint.as_ref().unwrap(), &no_ckpt()).unwrap();
    assert_eq!(r2.frozen_hash_after, before);
    assert_eq!(param_hash(&m2.store, "image."), before);
    assert_ne!(param_hash(&m2.store, "cfam."), cfam_before);
    assert!(r2.epochs.iter().all(|e| e.identity > 0.0));
    assert!((r2.lr_trace[0] - cfg.lr_init * cfg.phase2_lr_scale).abs() <= 1e-18);
}

#[test]
fn fixed_seed_reproduces_training_bit_for_bit() {
    let cfg = tiny_config(2);
    let p = prepared(&cfg);
    let run = |cfg: &Config| {
        let mut m = fresh(cfg, &p);
        let r = train_phase1(&mut m, &p.train, &no_ckpt()).unwrap();
        (bits(&r.step_losses), param_hash(&m.store, ""))
    };
    let a = run(&cfg);
    assert_eq!(a, run(&cfg));
    assert_ne!(a.0, run(&Config { seed: 3, ..cfg.clone() }).0);
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let cfg = tiny_config(4);
    let p = prepared(&cfg);
    let dir = tempfile::tempdir().unwrap();

    let mut full = fresh(&cfg, &p);
    let whole = train_phase1(&mut full, &p.train, &no_ckpt()).unwrap();

    let mut part = fresh(&cfg, &p);
    let opts = RunOptions {
        checkpoint_dir: Some(dir.path().to_path_buf()),
        stop_after: Some(1),
    };
    let first = train_phase1(&mut part, &p.train, &opts).unwrap();
    let (mut resumed, mut state) = load_checkpoint(first.checkpoint.as_ref().unwrap()).unwrap();
    assert_eq!(state.epochs_done, 1);
    let rest = run_phase(&mut resumed, &p.train, &mut state, &no_ckpt()).unwrap();

    let joined: Vec<f64> = first.step_losses.iter().chain(&rest.step_losses).copied().collect();
    assert_eq!(bits(&joined), bits(&whole.step_losses));
    assert_eq!(param_hash(&resumed.store, ""), param_hash(&full.store, ""));
}

#[test]
fn checkpoint_save_load_save_is_byte_identical() {
    let cfg = tiny_config(5);
    let p = prepared(&cfg);
    let dir = tempfile::tempdir().unwrap();
    let mut m = fresh(&cfg, &p);
    let opts = RunOptions {
        checkpoint_dir: Some(dir.path().to_path_buf()),
        stop_after: Some(1),
    };
    let r = train_phase1(&mut m, &p.train, &opts).unwrap();
    let path = r.checkpoint.unwrap();
    let (model, state) = load_checkpoint(&path).unwrap();
    let again = dir.path().join("again.ckpt");
    save_checkpoint(&again, &model, &state).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    assert_eq!(model.config, m.config);
    assert_eq!(state.iteration, steps_per_epoch(&p.train, 4) as u64);
}

#[test]
fn zero_weights_leave_their_parameters_untouched() {
    let cfg = Config {
        lambda1: 0.0,
        lambda2: 0.0,
        ..tiny_config(6)
    };
    let p = prepared(&cfg);
    let mut m = fresh(&cfg, &p);
    let before = param_hash(&m.store, "");
    let r = train_phase1(&mut m, &p.train, &no_ckpt()).unwrap();
    assert_eq!(param_hash(&m.store, ""), before);
    assert!(r.step_losses.iter().all(|&l| l == 0.0));

    // without the classification term its weight matrix never moves
    let cfg = Config {
        lambda2: 0.0,
        ..tiny_config(6)
    };
    let mut m = fresh(&cfg, &p);
    let w = param_hash(&m.store, "tfrm.cmpc.");
    let text = param_hash(&m.store, "text.");
    train_phase1(&mut m, &p.train, &no_ckpt()).unwrap();
    assert_eq!(param_hash(&m.store, "tfrm.cmpc."), w);
    assert_ne!(param_hash(&m.store, "text."), text);

    // and without the alignment term the local projection never moves
    let cfg = Config {
        lambda1: 0.0,
        ..tiny_config(6)
    };
    let mut m = fresh(&cfg, &p);
    let proj = param_hash(&m.store, "tfrm.img_proj");
    train_phase1(&mut m, &p.train, &no_ckpt()).unwrap();
    assert_eq!(param_hash(&m.store, "tfrm.img_proj"), proj);
}

fn phase1_checkpoint(cfg: &Config, p: &Prepared, dir: &Path) -> std::path::PathBuf {
    let mut m = fresh(cfg, p);
    let opts = RunOptions {
        checkpoint_dir: Some(dir.to_path_buf()),
        stop_after: Some(1),
    };
    train_phase1(&mut m, &p.train, &opts).unwrap().checkpoint.unwrap()
}

#[test]
fn phase2_rejects_bad_checkpoints() {
    let cfg = tiny_config(7);
    let p = prepared(&cfg);
    let dir = tempfile::tempdir().unwrap();
    let mut m = fresh(&cfg, &p);
    let err = train_phase2(&mut m, &p.train, &dir.path().join("none.ckpt"), &no_ckpt()).unwrap_err();
    assert!(matches!(err, CgfrError::Load(_)), "{err}");

    let wide = Config { text_dim: 32, ..cfg.clone() };
    let ck = phase1_checkpoint(&wide, &p, dir.path());
    let err = train_phase2(&mut fresh(&cfg, &p), &p.train, &ck, &no_ckpt()).unwrap_err();
    assert!(matches!(err, CgfrError::Load(_)), "{err}");

    std::fs::write(dir.path().join("junk.ckpt"), b"not a checkpoint").unwrap();
    assert!(train_phase2(&mut fresh(&cfg, &p), &p.train, &dir.path().join("junk.ckpt"), &no_ckpt()).is_err());
}

#[test]
fn phase2_starts_from_phase1_weights() {
    let cfg = tiny_config(8);
    let p = prepared(&cfg);
    let dir = tempfile::tempdir().unwrap();
    let ck = phase1_checkpoint(&cfg, &p, dir.path());
    let (trained, _) = load_checkpoint(&ck).unwrap();
    for variant in [CfamVariant::LinearOnly, CfamVariant::Full] {
        let c = Config { variant, ..cfg.clone() };
        let mut m = fresh(&c, &p);
        let opts = RunOptions {
            checkpoint_dir: None,
            stop_after: Some(0),
        };
        train_phase2(&mut m, &p.train, &ck, &opts).unwrap();
        for prefix in ["image.", "text.", "tfrm."] {
            assert_eq!(param_hash(&m.store, prefix), param_hash(&trained.store, prefix), "{variant} {prefix}");
        }
    }
}

#[test]
fn run_phase_checks_its_inputs() {
    let cfg = tiny_config(9);
    let p = prepared(&cfg);
    let mut m = Model::new(&cfg, caption_vocabulary(), 2).unwrap();
    assert!(train_phase1(&mut m, &p.train, &no_ckpt()).is_err());
    let mut one = p.train.clone();
    one.labels.iter_mut().for_each(|l| *l = 0);
    let mut m = fresh(&cfg, &p);
    assert!(train_phase1(&mut m, &one, &no_ckpt()).is_err());
    let mut state = PhaseState::new(Phase::Two, &cfg).unwrap();
    state.epochs_done = cfg.phase2_epochs;
    let r = run_phase(&mut fresh(&cfg, &p), &p.train, &mut state, &no_ckpt()).unwrap();
    assert!(r.epochs.is_empty());
}
