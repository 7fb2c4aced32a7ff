use atms_tensor::softmax::argmax;
use atms_tensor::Scalar;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{KdError, Result};
use crate::model::Network;

/// Counts indexed `[true class][predicted class]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_predictions(labels: &[usize], predictions: &[usize], classes: usize) -> Result<Self> {
        if labels.len() != predictions.len() {
            return Err(KdError::Data(format!(
                "{} labels but {} predictions",
                labels.len(),
                predictions.len()
            )));
        }
        let mut cm = Self::new(classes);
        for (&t, &p) in labels.iter().zip(predictions) {
            if t >= classes || p >= classes {
                return Err(KdError::Data(format!("class index out of range: true {t}, predicted {p}")));
            }
            cm.counts[t][p] += 1;
        }
        Ok(cm)
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    /// (tp, fp, fn, tn) with `class` as the positive class.
    pub fn one_vs_rest(&self, class: usize) -> (u64, u64, u64, u64) {
        let tp = self.counts[class][class];
        let fp: u64 = (0..self.classes()).filter(|&t| t != class).map(|t| self.counts[t][class]).sum();
        let fn_: u64 = (0..self.classes()).filter(|&p| p != class).map(|p| self.counts[class][p]).sum();
        (tp, fp, fn_, self.total() - tp - fp - fn_)
    }

    pub fn to_csv(&self, class_names: &[String]) -> String {
        let mut out = String::from("true\\predicted");
        for n in class_names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (name, row) in class_names.iter().zip(&self.counts) {
            out.push_str(name);
            for c in row {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Eval-mode argmax predictions over the whole dataset.
pub fn confusion<T: Scalar>(net: &Network<T>, data: &Dataset<T>) -> Result<ConfusionMatrix> {
    let logits = net.predict(&data.images()?)?;
    let cols = logits.shape()[1];
    let preds: Vec<usize> = logits.data().chunks(cols).map(argmax).collect();
    ConfusionMatrix::from_predictions(&data.labels(), &preds, cols.max(data.num_classes()))
}

/// Percentages in [0, 100].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

/// F1 from percentages; zero when both are zero.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn positive_metrics(cm: &ConfusionMatrix, positive: usize) -> ClassificationMetrics {
    let (tp, fp, fn_, _) = cm.one_vs_rest(positive);
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    ClassificationMetrics {
        accuracy: ratio(cm.correct(), cm.total()),
        precision,
        recall,
        f1: f1_score(precision, recall),
    }
}

/// Mean of the one-vs-rest precision, recall and F1 over all classes.
pub fn macro_metrics(cm: &ConfusionMatrix) -> Result<ClassificationMetrics> {
    if cm.total() == 0 {
        return Err(KdError::Data("confusion matrix is empty".into()));
    }
    let per: Vec<ClassificationMetrics> = (0..cm.classes()).map(|c| positive_metrics(cm, c)).collect();
    let k = per.len() as f64;
    Ok(ClassificationMetrics {
        accuracy: ratio(cm.correct(), cm.total()),
        precision: per.iter().map(|m| m.precision).sum::<f64>() / k,
        recall: per.iter().map(|m| m.recall).sum::<f64>() / k,
        f1: per.iter().map(|m| m.f1).sum::<f64>() / k,
    })
}

/// Binary matrices use `positive` as the positive class. Larger matrices
/// fall back to macro-averaged one-vs-rest scores.
pub fn classification_metrics(cm: &ConfusionMatrix, positive: usize) -> Result<ClassificationMetrics> {
    if cm.total() == 0 {
        return Err(KdError::Data("confusion matrix is empty".into()));
    }
    if positive >= cm.classes() {
        return Err(KdError::Usage(format!("positive class {positive} of {}", cm.classes())));
    }
    if cm.classes() == 2 {
        Ok(positive_metrics(cm, positive))
    } else {
        macro_metrics(cm)
    }
}

/// Student accuracy as a percentage of teacher accuracy.
pub fn knowledge_retention(student_acc: f64, teacher_acc: f64) -> Result<f64> {
    if !(teacher_acc > 0.0) {
        return Err(KdError::Usage(format!("teacher accuracy must be positive, got {teacher_acc}")));
    }
    Ok(100.0 * student_acc / teacher_acc)
}
