use std::time::Instant;

use atms_tensor::softmax::argmax;
use atms_tensor::{Scalar, Tape, Tensor, TensorError};
use serde::{Deserialize, Serialize};

use super::optimizer::{clip_global_norm, AdamW, AdamWConfig};
use super::report::{EpochRecord, Method, TrainReport};
use super::schedule::lr_at;
use super::{seeded_stream, streams, TrainConfig, TrainMode};
use crate::augment::{apply_policy, AugmentConfig, MixMethod, MixedBatch};
use crate::data::{batches, one_hot, Dataset};
use crate::distill::{init_temperature, kd_loss, step_temperature, KdLossConfig, TemperatureConfig, TemperatureState};
use crate::error::{KdError, Result};
use crate::model::{Checkpoint, CheckpointMeta, ForwardCtx, Network};

/// Loss, temperature and augmentation settings shared by the student arms.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    pub loss: KdLossConfig,
    pub temperature: TemperatureConfig,
    pub augment: AugmentConfig,
}

enum Tau {
    Unused,
    Adaptive(TemperatureState),
    Fixed(f64),
}

struct Arm<'a, T: Scalar> {
    method: Method,
    teacher: Option<&'a Network<T>>,
    tau: Tau,
    loss: KdLossConfig,
    augment: AugmentConfig,
}

fn diverged(e: KdError, epoch: usize, batch: usize) -> KdError {
    match e {
        KdError::Tensor(TensorError::NonFinite { op }) => KdError::Divergence {
            epoch,
            batch,
            reason: format!("non-finite values produced by {op}"),
        },
        other => other,
    }
}

/// Eval-mode mean cross-entropy and accuracy (percent).
pub fn evaluate<T: Scalar>(net: &Network<T>, data: &Dataset<T>) -> Result<(f64, f64)> {
    let logits = net.predict(&data.images()?)?;
    let labels = data.labels();
    let mut tape = Tape::no_grad();
    let z = tape.constant(logits.clone());
    let ce = tape.cross_entropy(z, &one_hot(&labels, data.num_classes()), 0.0)?;
    let cols = logits.shape()[1];
    let hits = logits
        .data()
        .chunks(cols)
        .zip(&labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    Ok((tape.value(ce).item().as_f64(), 100.0 * hits as f64 / labels.len() as f64))
}

fn gather_rows<T: Scalar>(t: &Tensor<T>, rows: &[usize]) -> Result<Tensor<T>> {
    let cols = t.shape()[1];
    let data: Vec<T> = rows.iter().flat_map(|&r| t.row(r).iter().copied()).collect();
    Ok(Tensor::new(&[rows.len(), cols], data)?)
}

/// Correct predictions, crediting each sample by its share of the mix.
fn credited_hits<T: Scalar>(logits: &Tensor<T>, batch: &MixedBatch<T>) -> f64 {
    (0..logits.shape()[0])
        .map(|i| {
            let pred = argmax(logits.row(i));
            let a = f64::from(u8::from(pred == argmax(batch.targets_a.row(i))));
            let b = f64::from(u8::from(pred == argmax(batch.targets_b.row(i))));
            batch.lam * a + (1.0 - batch.lam) * b
        })
        .sum()
}

fn check_data<T: Scalar>(model: &Network<T>, train: &Dataset<T>, val: &Dataset<T>) -> Result<()> {
    if train.is_empty() || val.is_empty() {
        return Err(KdError::Data("training and validation sets must be non-empty".into()));
    }
    let spec = model.spec();
    for ds in [train, val] {
        if ds.num_classes() != spec.num_classes {
            return Err(KdError::Mismatch(format!(
                "data has {} classes, model expects {}",
                ds.num_classes(),
                spec.num_classes
            )));
        }
        let want = [3, spec.input_size, spec.input_size];
        if ds.image_shape() != Some(&want[..]) {
            return Err(KdError::Mismatch(format!(
                "images are {:?}, model expects {want:?}",
                ds.image_shape()
            )));
        }
    }
    Ok(())
}

fn fit<T: Scalar>(
    mut model: Network<T>,
    mut arm: Arm<T>,
    train: &Dataset<T>,
    val: &Dataset<T>,
    cfg: &TrainConfig,
) -> Result<(Checkpoint<T>, TrainReport)> {
    cfg.validate()?;
    arm.loss.validate()?;
    arm.augment.validate()?;
    check_data(&model, train, val)?;
    if let Some(t) = arm.teacher {
        if t.spec().num_classes != model.spec().num_classes {
            return Err(KdError::Mismatch(format!(
                "teacher predicts {} classes, student {}",
                t.spec().num_classes,
                model.spec().num_classes
            )));
        }
        check_data(t, train, val)?;
    }
    let started = Instant::now();
    let n_params = model.store().params().len();
    let shapes: Vec<Vec<usize>> = model.store().params().iter().map(|p| p.value.shape().to_vec()).collect();
    let mut opt = AdamW::new(
        AdamWConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            ..AdamWConfig::default()
        },
        &shapes,
    );
    let mut data_rng = seeded_stream(cfg.seed, streams::DATA_ORDER);
    let mut aug_rng = seeded_stream(cfg.seed, streams::AUGMENT);
    let mut drop_rng = seeded_stream(cfg.seed, streams::DROPOUT);

    let teacher_val_acc = match arm.teacher {
        Some(t) => Some(evaluate(t, val)?.1),
        None => None,
    };
    let cached = match arm.teacher {
        Some(t) => Some(t.predict(&train.images()?)?),
        None => None,
    };

    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(Network<T>, usize, f64)> = None;
    let mut gap = 0.0;
    for epoch in 0..cfg.epochs {
        let epoch_start = Instant::now();
        let tau = match &mut arm.tau {
            Tau::Adaptive(st) => Some(step_temperature(st, epoch, gap)?),
            Tau::Fixed(t) => Some(*t),
            Tau::Unused => None,
        };
        let lr = lr_at(cfg.lr, &cfg.schedule, epoch);
        opt.set_lr(lr);
        let (mut loss_sum, mut hits, mut seen) = (0.0, 0.0, 0usize);
        let (mut clipped, mut augmented) = (0, 0);
        for (bi, batch) in batches(train, cfg.batch_size, true, &mut data_rng)?.enumerate() {
            let batch = batch?;
            let mixed = if arm.augment.p_trigger > 0.0 {
                apply_policy(&batch.images, &batch.targets, &arm.augment, &mut aug_rng)?
            } else {
                MixedBatch::unmixed(batch.images, batch.targets)
            };
            if mixed.method != MixMethod::None {
                augmented += 1;
            }
            let teacher_logits = match (arm.teacher, &cached) {
                (Some(_), Some(c)) if mixed.method == MixMethod::None => Some(gather_rows(c, &batch.indices)?),
                (Some(t), _) => Some(t.predict(&mixed.images)?),
                _ => None,
            };

            let mut tape = Tape::new();
            let x = tape.constant(mixed.images.clone());
            let mut ctx = ForwardCtx::train(&mut drop_rng);
            let step = (|| {
                let logits = model.forward(&mut tape, x, &mut ctx)?;
                let params = ctx.bound_vars();
                let parts = kd_loss(
                    &mut tape,
                    logits,
                    teacher_logits.as_ref(),
                    &mixed,
                    tau.unwrap_or(1.0),
                    &arm.loss,
                    &params,
                    cfg.label_smoothing,
                )?;
                let grads = tape.backward(parts.total)?;
                Ok((logits, parts.total, grads))
            })();
            let (logits, total, grads) = step.map_err(|e| diverged(e, epoch, bi))?;
            let value = tape.value(total).item().as_f64();
            if !value.is_finite() {
                return Err(KdError::Divergence {
                    epoch,
                    batch: bi,
                    reason: format!("loss is {value}"),
                });
            }
            let mut g = ctx.gradients(&grads, n_params);
            if let Some(max) = cfg.clip_norm {
                if clip_global_norm(&mut g, max) > max {
                    clipped += 1;
                }
            }
            let updates = ctx.take_updates();
            let n = batch.indices.len();
            loss_sum += value * n as f64;
            hits += credited_hits(tape.value(logits), &mixed);
            seen += n;
            drop(tape);
            opt.step(model.store_mut().params_mut().iter_mut().map(|p| &mut p.value), &g)?;
            model.store_mut().apply_updates(updates);
        }

        let snapshot = model.round_to_storage();
        let (val_loss, val_acc) = evaluate(&snapshot, val)?;
        if let Some(t) = teacher_val_acc {
            gap = t - val_acc;
        }
        log::info!(
            "{} epoch {epoch}: train loss {:.4} acc {:.2} | val loss {val_loss:.4} acc {val_acc:.2} | tau {tau:?} lr {lr:.2e}",
            arm.method.as_str(),
            loss_sum / seen as f64,
            100.0 * hits / seen as f64
        );
        records.push(EpochRecord {
            epoch,
            train_loss: loss_sum / seen as f64,
            train_acc: 100.0 * hits / seen as f64,
            val_loss,
            val_acc,
            tau,
            lr,
            seconds: epoch_start.elapsed().as_secs_f64(),
            clipped_batches: clipped,
            augmented_batches: augmented,
        });
        if best.as_ref().is_none_or(|b| val_acc > b.2) {
            best = Some((snapshot, epoch, val_acc));
        }
    }

    let (network, best_epoch, best_val_accuracy) = best.expect("at least one epoch");
    let meta = CheckpointMeta {
        method: arm.method.as_str().to_string(),
        epoch: best_epoch,
        best_val_accuracy,
        seed: cfg.seed,
    };
    let report = TrainReport {
        method: arm.method,
        width: model.spec().width_multiplier,
        seed: cfg.seed,
        parameters: model.num_parameters(),
        records,
        best_epoch,
        best_val_accuracy,
        teacher_val_accuracy: teacher_val_acc,
        threads: atms_tensor::gemm::num_threads(),
        total_seconds: started.elapsed().as_secs_f64(),
    };
    Ok((Checkpoint { network, meta }, report))
}

fn require_mode(cfg: &TrainConfig, mode: TrainMode) -> Result<()> {
    if cfg.mode != mode {
        return Err(KdError::Config(format!("train.mode is {:?}, expected {mode:?}", cfg.mode)));
    }
    Ok(())
}

fn new_student<T: Scalar>(width: f64, train: &Dataset<T>, cfg: &TrainConfig) -> Result<Network<T>> {
    let size = train.image_shape().map(|s| s[1]).unwrap_or(0);
    Network::student(width, train.num_classes(), size, &mut seeded_stream(cfg.seed, streams::INIT))
}

/// Cross-entropy training of the wide teacher; label smoothing and weight
/// decay come from `cfg`.
pub fn train_teacher<T: Scalar>(train: &Dataset<T>, val: &Dataset<T>, cfg: &TrainConfig) -> Result<(Checkpoint<T>, TrainReport)> {
    require_mode(cfg, TrainMode::Teacher)?;
    let size = train.image_shape().map(|s| s[1]).unwrap_or(0);
    let model = Network::teacher(train.num_classes(), size, &mut seeded_stream(cfg.seed, streams::INIT))?;
    let arm = Arm {
        method: Method::Teacher,
        teacher: None,
        tau: Tau::Unused,
        loss: KdLossConfig::hard_only(0.0),
        augment: AugmentConfig::disabled(),
    };
    fit(model, arm, train, val, cfg)
}

/// Adaptive-temperature distillation with the mixed-sample policy.
pub fn distill_student<T: Scalar>(
    teacher: &Checkpoint<T>,
    width: f64,
    train: &Dataset<T>,
    val: &Dataset<T>,
    distill: &DistillConfig,
    cfg: &TrainConfig,
) -> Result<(Checkpoint<T>, TrainReport)> {
    require_mode(cfg, TrainMode::Distill)?;
    let state = init_temperature(width, cfg.epochs, &distill.temperature)?;
    let arm = Arm {
        method: Method::AtmsKd,
        teacher: Some(&teacher.network),
        tau: Tau::Adaptive(state),
        loss: distill.loss,
        augment: distill.augment,
    };
    fit(new_student(width, train, cfg)?, arm, train, val, cfg)
}

/// Hard labels only, same augmentation and L2 term as distillation.
pub fn direct_train_student<T: Scalar>(
    width: f64,
    train: &Dataset<T>,
    val: &Dataset<T>,
    distill: &DistillConfig,
    cfg: &TrainConfig,
) -> Result<(Checkpoint<T>, TrainReport)> {
    require_mode(cfg, TrainMode::Direct)?;
    let arm = Arm {
        method: Method::Direct,
        teacher: None,
        tau: Tau::Unused,
        loss: KdLossConfig::hard_only(distill.loss.gamma),
        augment: distill.augment,
    };
    fit(new_student(width, train, cfg)?, arm, train, val, cfg)
}

/// Distillation at a constant temperature without augmentation.
pub fn fixed_temp_distill<T: Scalar>(
    teacher: &Checkpoint<T>,
    width: f64,
    train: &Dataset<T>,
    val: &Dataset<T>,
    tau_fixed: f64,
    distill: &DistillConfig,
    cfg: &TrainConfig,
) -> Result<(Checkpoint<T>, TrainReport)> {
    require_mode(cfg, TrainMode::Distill)?;
    if !(tau_fixed > 0.0 && tau_fixed.is_finite()) {
        return Err(KdError::Config(format!("fixed temperature must be positive, got {tau_fixed}")));
    }
    let arm = Arm {
        method: Method::FixedKd,
        teacher: Some(&teacher.network),
        tau: Tau::Fixed(tau_fixed),
        loss: distill.loss,
        augment: AugmentConfig::disabled(),
    };
    fit(new_student(width, train, cfg)?, arm, train, val, cfg)
}
