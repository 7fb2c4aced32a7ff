//! Training loop contracts on tiny synthetic data.

use atms_kd::augment::MixedBatch;
use atms_kd::data::generate_synthetic;
use atms_kd::distill::{init_temperature, kd_loss, KdLossConfig, TemperatureConfig};
use atms_kd::model::{encode, load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, Network};
use atms_kd::tensor::Tape;
use atms_kd::train::{
    direct_train_student, distill_student, evaluate, fixed_temp_distill, lr_at, seeded_stream, train_teacher,
    DistillConfig, Method, TrainConfig, TrainMode, TrainReport,
};
use atms_kd::{Dataset64, KdError};
use sha2::{Digest, Sha256};

fn tiny() -> (Dataset64, Dataset64) {
    (generate_synthetic(8, 32, 1).unwrap(), generate_synthetic(4, 32, 2).unwrap())
}

/// An untrained network with usable running statistics stands in for a teacher.
fn stand_in_teacher(train: &Dataset64, classes: usize) -> Checkpoint<f64> {
    let mut net = Network::student(1.0, classes, 32, &mut seeded_stream(7, 0)).unwrap();
    net.calibrate_norms(&train.images().unwrap()).unwrap();
    let meta = CheckpointMeta { method: "teacher".into(), epoch: 0, best_val_accuracy: 0.0, seed: 7 };
    Checkpoint { network: net, meta }
}

fn student_cfg(mode: TrainMode) -> TrainConfig {
    TrainConfig::student(3, 8, 2e-3, mode)
}

#[test]
fn zero_alpha_distillation_equals_direct_training() {
    let (train, val) = tiny();
    let teacher = stand_in_teacher(&train, 2);
    let mut kd = DistillConfig::default();
    kd.loss = KdLossConfig { alpha: 0.0, beta: 1.0, gamma: kd.loss.gamma };
    let (a, ra) = distill_student(&teacher, 0.75, &train, &val, &kd, &student_cfg(TrainMode::Distill)).unwrap();
    let (b, rb) = direct_train_student(0.75, &train, &val, &kd, &student_cfg(TrainMode::Direct)).unwrap();
    for (x, y) in ra.records.iter().zip(&rb.records) {
        assert_eq!((x.train_loss, x.val_loss, x.val_acc), (y.train_loss, y.val_loss, y.val_acc));
        assert_eq!(x.augmented_batches, y.augmented_batches);
    }
    assert_eq!(a.network.store().params(), b.network.store().params());
    assert_eq!(rb.method, Method::Direct);
    assert!(rb.taus().iter().all(Option::is_none));
}

#[test]
fn teacher_is_never_modified() {
    let (train, val) = tiny();
    let teacher = stand_in_teacher(&train, 2);
    let digest = |c: &Checkpoint<f64>| Sha256::digest(encode(&c.network, &c.meta)).to_vec();
    let before = digest(&teacher);
    distill_student(&teacher, 0.75, &train, &val, &DistillConfig::default(), &student_cfg(TrainMode::Distill)).unwrap();
    fixed_temp_distill(&teacher, 0.75, &train, &val, 4.0, &DistillConfig::default(), &student_cfg(TrainMode::Distill))
        .unwrap();
    assert_eq!(digest(&teacher), before);
}

fn check_bookkeeping(r: &TrainReport) {
    let mut best = 0;
    for (i, rec) in r.records.iter().enumerate() {
        assert_eq!(rec.epoch, i);
        if rec.val_acc > r.records[best].val_acc {
            best = i;
        }
    }
    assert_eq!(r.best_epoch, best);
    assert_eq!(r.best_val_accuracy, r.records[best].val_acc);
}

#[test]
fn temperature_follows_scheduler_with_previous_gap() {
    let (train, val) = tiny();
    let teacher = stand_in_teacher(&train, 2);
    let cfg = TrainConfig { epochs: 5, ..student_cfg(TrainMode::Distill) };
    let (_, r) = distill_student(&teacher, 0.75, &train, &val, &DistillConfig::default(), &cfg).unwrap();
    check_bookkeeping(&r);
    let st = init_temperature(0.75, 5, &TemperatureConfig::default()).unwrap();
    let t_acc = r.teacher_val_accuracy.unwrap();
    let mut gap = 0.0;
    for rec in &r.records {
        assert_eq!(rec.tau, Some(st.value_at(rec.epoch, gap)));
        assert_eq!(rec.lr, lr_at(cfg.lr, &cfg.schedule, rec.epoch));
        gap = t_acc - rec.val_acc;
    }
    assert_eq!(r.records[0].tau, Some(6.0));
}

#[test]
fn fixed_temperature_is_constant_and_unaugmented() {
    let (train, val) = tiny();
    let teacher = stand_in_teacher(&train, 2);
    let (_, r) = fixed_temp_distill(&teacher, 0.75, &train, &val, 4.0, &DistillConfig::default(), &student_cfg(TrainMode::Distill))
        .unwrap();
    check_bookkeeping(&r);
    assert_eq!(r.method, Method::FixedKd);
    assert!(r.records.iter().all(|e| e.tau == Some(4.0) && e.augmented_batches == 0));
    let bad = fixed_temp_distill(&teacher, 0.75, &train, &val, 0.0, &DistillConfig::default(), &student_cfg(TrainMode::Distill));
    assert!(matches!(bad, Err(KdError::Config(_))));
}

#[test]
fn reruns_are_bit_identical_and_checkpoint_reproduces_accuracy() {
    let (train, val) = tiny();
    let cfg = TrainConfig { epochs: 2, ..TrainConfig::teacher(2, 8, 1e-3) };
    // The teacher builder at 32x32 keeps this test cheap enough.
    let (c1, r1) = train_teacher(&train, &val, &cfg).unwrap();
    let (_, r2) = train_teacher(&train, &val, &cfg).unwrap();
    assert_eq!(r1.epochs_csv(), r2.epochs_csv());
    check_bookkeeping(&r1);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.ckpt");
    save_checkpoint(&c1.network, &c1.meta, &path).unwrap();
    let back = load_checkpoint::<f64>(&path).unwrap();
    let images = val.images().unwrap();
    assert_eq!(back.network.predict(&images).unwrap(), c1.network.predict(&images).unwrap());
    assert_eq!(evaluate(&back.network, &val).unwrap().1, r1.best_val_accuracy);
    assert_eq!(back.meta.best_val_accuracy, r1.best_val_accuracy);
}

#[test]
fn report_files_round_trip() {
    let (train, val) = tiny();
    let (_, r) = direct_train_student(0.75, &train, &val, &DistillConfig::default(), &student_cfg(TrainMode::Direct)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    r.write(dir.path()).unwrap();
    let back = TrainReport::read(&dir.path().join("report.json")).unwrap();
    assert_eq!(back, r);
    let csv = std::fs::read_to_string(dir.path().join("epochs.csv")).unwrap();
    assert!(csv.starts_with("epoch,split,loss,acc,tau,lr"));
    assert_eq!(csv.lines().count(), 1 + 2 * r.records.len());
}

#[test]
fn class_count_mismatch_is_reported() {
    let (train, val) = tiny();
    let teacher = stand_in_teacher(&train, 3);
    let err = distill_student(&teacher, 0.75, &train, &val, &DistillConfig::default(), &student_cfg(TrainMode::Distill));
    assert!(matches!(err, Err(KdError::Mismatch(_))));
}

#[test]
fn wrong_mode_is_rejected() {
    let (train, val) = tiny();
    let err = direct_train_student(0.75, &train, &val, &DistillConfig::default(), &student_cfg(TrainMode::Distill));
    assert!(matches!(err, Err(KdError::Config(_))));
}

#[test]
fn exploding_updates_abort_with_divergence() {
    let (train, val) = tiny();
    let cfg = TrainConfig { lr: 1e250, clip_norm: None, ..student_cfg(TrainMode::Direct) };
    let err = direct_train_student(0.75, &train, &val, &DistillConfig::default(), &cfg);
    assert!(matches!(err, Err(KdError::Divergence { .. })), "{err:?}");
}

#[test]
fn self_distillation_has_no_soft_loss() {
    let (train, _) = tiny();
    let teacher = stand_in_teacher(&train, 2);
    let (images, targets) = train.gather(&[0, 1, 2, 9, 10]).unwrap();
    let zt = teacher.network.predict(&images).unwrap();
    let batch = MixedBatch::unmixed(images.clone(), targets);
    let cfg = KdLossConfig { alpha: 1.0, beta: 0.0, gamma: 0.0 };
    for tau in [1.0, 3.0, 6.0] {
        let mut tape = Tape::new();
        let zs = tape.param(zt.clone());
        let l = kd_loss(&mut tape, zs, Some(&zt), &batch, tau, &cfg, &[], 0.0).unwrap();
        assert!(l.soft.abs() < 1e-12, "tau {tau}: {}", l.soft);
    }
}
