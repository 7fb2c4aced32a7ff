use atms_tensor::softmax::softmax_rows;
use atms_tensor::{Scalar, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::augment::MixedBatch;
use crate::error::{KdError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KdLossConfig {
    /// Weight of the softened teacher term.
    pub alpha: f64,
    /// Weight of the hard-label term.
    pub beta: f64,
    /// L2 coefficient on the student parameters.
    pub gamma: f64,
}

impl Default for KdLossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.7,
            beta: 0.3,
            gamma: 1e-5,
        }
    }
}

impl KdLossConfig {
    /// Hard labels only.
    pub fn hard_only(gamma: f64) -> Self {
        Self {
            alpha: 0.0,
            beta: 1.0,
            gamma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta, self.gamma];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(KdError::Config(format!("kd weights must be non-negative, got {all:?}")));
        }
        if (self.alpha + self.beta - 1.0).abs() > 1e-9 {
            return Err(KdError::Config(format!(
                "kd.alpha + kd.beta must equal 1, got {} + {}",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

/// The assembled loss and the value of each weighted term.
#[derive(Debug, Clone, Copy)]
pub struct KdLoss {
    pub total: Var,
    pub soft: f64,
    pub hard: f64,
    pub l2: f64,
}

/// `alpha * tau^2 * KL(student || teacher) + beta * mixed CE + gamma * sum ||p||^2`.
///
/// Teacher logits are plain values, so no gradient can reach the teacher.
/// Without teacher logits `alpha` must be zero.
#[allow(clippy::too_many_arguments)]
pub fn kd_loss<T: Scalar>(
    tape: &mut Tape<T>,
    student_logits: Var,
    teacher_logits: Option<&Tensor<T>>,
    batch: &MixedBatch<T>,
    tau: f64,
    cfg: &KdLossConfig,
    params: &[Var],
    label_smoothing: f64,
) -> Result<KdLoss> {
    cfg.validate()?;
    let mut terms = Vec::new();
    let mut soft = 0.0;
    match teacher_logits {
        Some(z_t) => {
            if z_t.shape() != tape.shape(student_logits) {
                return Err(KdError::Mismatch(format!(
                    "teacher logits {:?} vs student logits {:?}",
                    z_t.shape(),
                    tape.shape(student_logits)
                )));
            }
            let cols = z_t.shape()[1];
            let t = T::lit(tau);
            if !(tau > 0.0) {
                return Err(KdError::Config(format!("temperature must be positive, got {tau}")));
            }
            let p_t = Tensor::new(z_t.shape(), softmax_rows(z_t.data(), cols, t))?;
            let log_p_s = tape.log_softmax_temp(student_logits, t)?;
            let kl = tape.kl_div(log_p_s, &p_t)?;
            let term = tape.scale(kl, T::lit(cfg.alpha * tau * tau))?;
            soft = tape.value(term).item().as_f64();
            terms.push(term);
        }
        None if cfg.alpha != 0.0 => {
            return Err(KdError::Config("kd.alpha > 0 requires teacher logits".into()));
        }
        None => {}
    }

    let ce_a = tape.cross_entropy(student_logits, &batch.targets_a, label_smoothing)?;
    let ce = if batch.lam == 1.0 {
        ce_a
    } else {
        let ce_b = tape.cross_entropy(student_logits, &batch.targets_b, label_smoothing)?;
        let a = tape.scale(ce_a, T::lit(batch.lam))?;
        let b = tape.scale(ce_b, T::lit(1.0 - batch.lam))?;
        tape.add(a, b)?
    };
    let hard_term = tape.scale(ce, T::lit(cfg.beta))?;
    let hard = tape.value(hard_term).item().as_f64();
    terms.push(hard_term);

    let mut l2 = 0.0;
    if cfg.gamma != 0.0 && !params.is_empty() {
        let sq = tape.sum_squares(params)?;
        let term = tape.scale(sq, T::lit(cfg.gamma))?;
        l2 = tape.value(term).item().as_f64();
        terms.push(term);
    }

    let mut total = terms[0];
    for &t in &terms[1..] {
        total = tape.add(total, t)?;
    }
    Ok(KdLoss { total, soft, hard, l2 })
}
