mod support;

use ursct::config::{Schedule, TrainConfig};
use ursct::trainer::checkpoint::{decode, encode};
use ursct::trainer::{initial_state, lr_for_epoch, train, TrainOptions};
use ursct::{Category, Urscht};

use support::checks;

#[test]
fn identical_runs_write_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    assert!(checks::runs_are_bitwise_identical(dir.path()));
}

#[test]
fn checkpoint_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    assert!(checks::checkpoint_roundtrip_is_exact(dir.path()));
}

#[test]
fn resume_reproduces_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    for k in [1, 2, 3] {
        assert!(
            checks::resume_matches_uninterrupted(dir.path(), k),
            "resume after epoch {k}"
        );
    }
}

#[test]
fn zero_epochs_returns_initialization() {
    let mut cfg = checks::persistence_config();
    cfg.train.epochs = 0;
    let dir = tempfile::tempdir().unwrap();
    let opts = TrainOptions {
        out_dir: Some(dir.path().to_path_buf()),
        ..Default::default()
    };
    let out = train(&cfg, &[], &opts).unwrap();
    assert!(out.epochs.is_empty());
    let init = Urscht::new(cfg.model.clone()).unwrap().init_params::<f32>(17).unwrap();
    assert_eq!(out.state.params, init);
    let saved = ursct::trainer::load_checkpoint(&dir.path().join("last.ursct")).unwrap();
    assert_eq!(saved.params, init);
    assert_eq!(
        encode(&out.state).unwrap(),
        encode(&initial_state(&cfg).unwrap()).unwrap()
    );
}

#[test]
fn log_has_one_row_per_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = checks::persistence_config();
    let opts = TrainOptions {
        out_dir: Some(dir.path().to_path_buf()),
        ..Default::default()
    };
    let out = train(&cfg, &checks::persistence_pairs(), &opts).unwrap();
    let log = std::fs::read_to_string(dir.path().join("train_log.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "epoch,lr,L_C,L_gd,L_M,L_sum");
    assert_eq!(lines.len(), 5);
    assert!(lines[4].starts_with("4,"));
    assert_eq!(out.step_losses.len(), 8);
    assert_eq!(out.state.step, 8);
    assert_eq!(out.epochs[0].lr, lr_for_epoch(&cfg.train, 0));
    for e in &out.epochs {
        let l = e.losses;
        let sum = l.charbonnier + l.gradient + 2.0 * l.ms_ssim;
        assert!((sum - l.total).abs() < 1e-5, "{l:?}");
    }
    assert!(dir.path().join("epoch_0002.ursct").exists());
    assert!(dir.path().join("epoch_0004.ursct").exists());
}

#[test]
fn bad_inputs_are_rejected() {
    let cfg = checks::persistence_config();
    let mut pairs = checks::persistence_pairs();
    pairs[1].reference = None;
    let err = train(&cfg, &pairs, &Default::default()).unwrap_err();
    assert_eq!(err.category(), Category::Data);

    let mut small = checks::persistence_config();
    small.loss.ms_ssim_scales = 5;
    let err = train(&small, &checks::persistence_pairs(), &Default::default()).unwrap_err();
    assert_eq!(err.category(), Category::Config);
    assert!(err.to_string().contains("176"), "{err}");

    let mut other = checks::persistence_config();
    other.model.embed_dim = 16;
    let foreign = initial_state(&other).unwrap();
    let opts = TrainOptions {
        resume: Some(foreign),
        ..Default::default()
    };
    let err = train(&cfg, &checks::persistence_pairs(), &opts).unwrap_err();
    assert_eq!(err.category(), Category::Config);
}

#[test]
fn corrupt_checkpoints_fail_cleanly() {
    let state = initial_state(&checks::persistence_config()).unwrap();
    let bytes = encode(&state).unwrap();
    assert!(decode(&bytes[..bytes.len() / 2]).is_err());
    let mut wrong = bytes.clone();
    wrong[0] = b'X';
    assert!(decode(&wrong).is_err());
    let mut newer = bytes.clone();
    newer[6] += 1;
    let err = decode(&newer).unwrap_err();
    assert!(err.to_string().contains("version"), "{err}");
    let mut longer = bytes.clone();
    longer.push(0);
    assert!(decode(&longer).is_err());
}

#[test]
fn schedule_anchor_points() {
    let cfg = TrainConfig::default();
    assert_eq!(lr_for_epoch(&cfg, 2), 5e-4);
    assert!((lr_for_epoch(&cfg, 799) - 1e-6).abs() < 1e-12);
    let mid = ursct::trainer::lr_at(&cfg, 3.0 + (800.0 - 3.0) / 2.0);
    assert!((mid - (5e-4 + 1e-6) / 2.0).abs() < 1e-12);
    let constant = TrainConfig {
        schedule: Schedule::Constant,
        ..TrainConfig::default()
    };
    assert_eq!(lr_for_epoch(&constant, 0), 5e-4);
    assert_eq!(lr_for_epoch(&constant, 799), 5e-4);
}

#[test]
fn ablation_table_is_complete_and_deterministic() {
    let (table, deterministic) = checks::tiny_ablation();
    assert!(deterministic);
    let labels: Vec<&str> = table
        .module
        .iter()
        .chain(&table.loss)
        .map(|c| c.label.as_str())
        .collect();
    assert_eq!(
        labels,
        ["Origin", "Conv-typeI", "Conv-typeII", "L_C", "L_C+L_M", "L_C+L_gd+L_M"]
    );
    for c in table.module.iter().chain(&table.loss) {
        assert!(c.psnr.is_finite() && c.ssim.is_finite(), "{c:?}");
    }
    assert_ne!(table.module[0], table.module[1]);
    assert_ne!(table.loss[0].psnr, table.loss[1].psnr);
    let md = table.to_markdown();
    assert!(md.contains("| PSNR (reference) | 20.90 | 22.32 |"), "{md}");
    assert_eq!(table.to_csv().lines().count(), 7);
    let dir = tempfile::tempdir().unwrap();
    table.write(dir.path()).unwrap();
    assert!(dir.path().join("ablation.md").exists());
}
