//! Second implementations used as oracles by several test targets.
#![allow(dead_code)]

use atms_kd::augment::{MixMethod, MixedBatch};
use atms_kd::Tensor;

pub fn is_permutation(p: &[usize]) -> bool {
    let mut sorted = p.to_vec();
    sorted.sort_unstable();
    sorted.iter().enumerate().all(|(i, &v)| i == v)
}

fn check_targets(targets: &Tensor<f64>, b: &MixedBatch<f64>) -> Result<(), String> {
    if !is_permutation(&b.partner) {
        return Err(format!("partner {:?} is not a permutation", b.partner));
    }
    if b.targets_a != *targets {
        return Err("targets_a differs from the input targets".into());
    }
    for (i, &j) in b.partner.iter().enumerate() {
        if b.targets_b.row(i) != targets.row(j) {
            return Err(format!("targets_b row {i} is not row {j}"));
        }
    }
    Ok(())
}

/// Every pixel equals `lam * x_i + (1 - lam) * x_partner(i)` bit for bit.
pub fn check_mixup(images: &Tensor<f64>, targets: &Tensor<f64>, b: &MixedBatch<f64>) -> Result<(), String> {
    check_targets(targets, b)?;
    if b.method != MixMethod::Mixup || !(b.lam > 0.0 && b.lam < 1.0) {
        return Err(format!("method {:?} lam {}", b.method, b.lam));
    }
    let n = images.shape()[0];
    let plane = images.numel() / n;
    let (x, y) = (images.data(), b.images.data());
    for i in 0..n {
        let j = b.partner[i];
        for k in 0..plane {
            let want = b.lam * x[i * plane + k] + (1.0 - b.lam) * x[j * plane + k];
            if y[i * plane + k] != want {
                return Err(format!("sample {i} pixel {k}: {} != {want}", y[i * plane + k]));
            }
        }
    }
    Ok(())
}

/// Recovers the pasted region from the pixels alone (inputs must be
/// distinct across samples), checks it is one axis-aligned rectangle shared
/// by every sample and channel, that every pixel comes verbatim from one of
/// the two sources, and that `lam == 1 - area / (H * W)`. Returns the area.
pub fn check_cutmix(images: &Tensor<f64>, targets: &Tensor<f64>, b: &MixedBatch<f64>) -> Result<usize, String> {
    check_targets(targets, b)?;
    if b.method != MixMethod::Cutmix {
        return Err(format!("method {:?}", b.method));
    }
    let s = images.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (x, y) = (images.data(), b.images.data());
    let at = |i: usize, ch: usize, r: usize, col: usize| ((i * c + ch) * h + r) * w + col;
    let mut mask: Option<Vec<bool>> = None;
    for i in 0..n {
        let j = b.partner[i];
        let mut m = vec![false; h * w];
        for ch in 0..c {
            for r in 0..h {
                for col in 0..w {
                    let (out, own, other) = (y[at(i, ch, r, col)], x[at(i, ch, r, col)], x[at(j, ch, r, col)]);
                    let pasted = out != own;
                    if pasted && out != other {
                        return Err(format!("sample {i} ({ch},{r},{col}) comes from neither source"));
                    }
                    if ch == 0 {
                        m[r * w + col] = pasted;
                    } else if m[r * w + col] != pasted {
                        return Err(format!("sample {i} mask differs across channels"));
                    }
                }
            }
        }
        if j == i {
            continue;
        }
        match &mask {
            Some(prev) if *prev != m => return Err(format!("sample {i} uses a different patch")),
            Some(_) => {}
            None => mask = Some(m),
        }
    }
    let Some(mask) = mask else {
        // Identity partners: nothing observable beyond lam being an area ratio.
        let pasted = ((1.0 - b.lam) * (h * w) as f64).round() as usize;
        return if pasted > 0 && 1.0 - pasted as f64 / (h * w) as f64 == b.lam {
            Ok(pasted)
        } else {
            Err(format!("lam {} is not an area ratio", b.lam))
        };
    };
    let cells: Vec<(usize, usize)> = (0..h * w).filter(|&k| mask[k]).map(|k| (k / w, k % w)).collect();
    if cells.is_empty() {
        return Err("no pasted pixels".into());
    }
    let (r0, r1) = (cells.iter().map(|p| p.0).min().unwrap(), cells.iter().map(|p| p.0).max().unwrap());
    let (c0, c1) = (cells.iter().map(|p| p.1).min().unwrap(), cells.iter().map(|p| p.1).max().unwrap());
    let area = (r1 - r0 + 1) * (c1 - c0 + 1);
    if area != cells.len() {
        return Err(format!("pasted region of {} pixels is not a rectangle", cells.len()));
    }
    let lam = 1.0 - area as f64 / (h * w) as f64;
    if b.lam != lam {
        return Err(format!("lam {} but area gives {lam}", b.lam));
    }
    Ok(area)
}

fn log_softmax(row: &[f64], tau: f64) -> Vec<f64> {
    let scaled: Vec<f64> = row.iter().map(|v| v / tau).collect();
    let m = scaled.iter().cloned().fold(f64::MIN, f64::max);
    let lse = m + scaled.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    scaled.iter().map(|v| v - lse).collect()
}

/// Batch-mean `KL(p_teacher || p_student)` at temperature `tau`.
pub fn kl_term(zs: &[Vec<f64>], zt: &[Vec<f64>], tau: f64) -> f64 {
    let mut total = 0.0;
    for (s, t) in zs.iter().zip(zt) {
        let (ls, lt) = (log_softmax(s, tau), log_softmax(t, tau));
        total += lt.iter().zip(&ls).map(|(a, b)| a.exp() * (a - b)).sum::<f64>();
    }
    total / zs.len() as f64
}

/// Batch-mean cross-entropy against (possibly soft) target rows.
pub fn ce_term(zs: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for (s, t) in zs.iter().zip(y) {
        let ls = log_softmax(s, 1.0);
        total -= t.iter().zip(&ls).map(|(a, b)| a * b).sum::<f64>();
    }
    total / zs.len() as f64
}

pub struct LossParts {
    pub soft: f64,
    pub hard: f64,
    pub l2: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.soft + self.hard + self.l2
    }
}

#[allow(clippy::too_many_arguments)]
pub fn kd_oracle(
    zs: &[Vec<f64>],
    zt: &[Vec<f64>],
    ya: &[Vec<f64>],
    yb: &[Vec<f64>],
    lam: f64,
    tau: f64,
    weights: (f64, f64, f64),
    params: &[Vec<f64>],
) -> LossParts {
    let (alpha, beta, gamma) = weights;
    let soft = alpha * tau * tau * kl_term(zs, zt, tau);
    let hard = beta * (lam * ce_term(zs, ya) + (1.0 - lam) * ce_term(zs, yb));
    let l2 = gamma * params.iter().flatten().map(|v| v * v).sum::<f64>();
    LossParts { soft, hard, l2 }
}

pub fn rows(t: &Tensor<f64>) -> Vec<Vec<f64>> {
    let cols = t.shape()[1];
    t.data().chunks(cols).map(<[f64]>::to_vec).collect()
}

/// Brute-force H(tau) * Acc(tau) table for plain accuracy; returns the scores
/// and the index of the first maximum.
pub fn brute_force_tau_table(logits: &[Vec<f64>], labels: &[usize], grid: &[f64]) -> (Vec<f64>, usize) {
    let hits = logits
        .iter()
        .zip(labels)
        .filter(|(row, &y)| {
            let best = row.iter().cloned().fold(f64::MIN, f64::max);
            row.iter().position(|&v| v == best) == Some(y)
        })
        .count();
    let acc = hits as f64 / labels.len() as f64;
    let scores: Vec<f64> = grid
        .iter()
        .map(|&tau| {
            let h: f64 = logits
                .iter()
                .map(|row| {
                    let lp = log_softmax(row, tau);
                    -lp.iter().map(|l| if l.exp() > 0.0 { l.exp() * l } else { 0.0 }).sum::<f64>()
                })
                .sum::<f64>()
                / logits.len() as f64;
            h * acc
        })
        .collect();
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    (scores, best)
}

/// Precision, recall, F1 and accuracy (percent) for one positive class,
/// counted straight from label/prediction pairs.
pub fn pair_metrics(labels: &[usize], preds: &[usize], positive: usize) -> [f64; 4] {
    let count = |f: &dyn Fn(usize, usize) -> bool| labels.iter().zip(preds).filter(|(&y, &p)| f(y, p)).count() as f64;
    let tp = count(&|y, p| y == positive && p == positive);
    let fp = count(&|y, p| y != positive && p == positive);
    let fnn = count(&|y, p| y == positive && p != positive);
    let correct = count(&|y, p| y == p);
    let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let recall = if tp + fnn > 0.0 { tp / (tp + fnn) } else { 0.0 };
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    [100.0 * precision, 100.0 * recall, 100.0 * f1, 100.0 * correct / labels.len() as f64]
}
