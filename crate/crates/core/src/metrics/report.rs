use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bench::TimingStats;
use super::classification::{classification_metrics, knowledge_retention, macro_metrics, ConfusionMatrix};
use crate::error::{KdError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => ReportFormat::Csv,
            _ => ReportFormat::Json,
        }
    }
}

/// Flat evaluation record; one CSV row per (model, dataset, seed).
///
/// `precision`, `recall` and `f1` use class 1 as the positive class on
/// binary tasks; the `neg_*` fields are the same scores with class 0 as
/// positive and the `macro_*` fields average both directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub method: String,
    pub dataset: String,
    pub seed: Option<u64>,
    pub samples: u64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub neg_precision: Option<f64>,
    pub neg_recall: Option<f64>,
    pub neg_f1: Option<f64>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub kr: Option<f64>,
    pub avg_inference_ms: Option<f64>,
    pub median_inference_ms: Option<f64>,
    pub p95_inference_ms: Option<f64>,
    pub throughput: Option<f64>,
    pub model_size_mb: Option<f64>,
    pub parameters: u64,
    pub threads: usize,
}

impl EvalReport {
    pub fn from_confusion(
        model: &str,
        method: &str,
        dataset: &str,
        cm: &ConfusionMatrix,
        parameters: usize,
        teacher_acc: Option<f64>,
    ) -> Result<Self> {
        let pos = classification_metrics(cm, cm.classes().min(2) - 1)?;
        let mac = macro_metrics(cm)?;
        let neg = (cm.classes() == 2).then(|| classification_metrics(cm, 0)).transpose()?;
        let kr = teacher_acc.map(|t| knowledge_retention(pos.accuracy, t)).transpose()?;
        Ok(Self {
            model: model.to_string(),
            method: method.to_string(),
            dataset: dataset.to_string(),
            seed: None,
            samples: cm.total(),
            accuracy: pos.accuracy,
            precision: pos.precision,
            recall: pos.recall,
            f1: pos.f1,
            neg_precision: neg.map(|m| m.precision),
            neg_recall: neg.map(|m| m.recall),
            neg_f1: neg.map(|m| m.f1),
            macro_precision: mac.precision,
            macro_recall: mac.recall,
            macro_f1: mac.f1,
            kr,
            avg_inference_ms: None,
            median_inference_ms: None,
            p95_inference_ms: None,
            throughput: None,
            model_size_mb: None,
            parameters: parameters as u64,
            threads: 1,
        })
    }

    pub fn with_timing(mut self, t: &TimingStats) -> Self {
        self.avg_inference_ms = Some(t.mean_ms);
        self.median_inference_ms = Some(t.median_ms);
        self.p95_inference_ms = Some(t.p95_ms);
        self.throughput = Some(t.throughput);
        self.threads = t.threads;
        self
    }
}

pub fn write_reports_csv(reports: &[EvalReport], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| KdError::format(path, e))?;
    for r in reports {
        w.serialize(r).map_err(|e| KdError::format(path, e))?;
    }
    w.flush().map_err(|e| KdError::io(path, e))
}

pub fn emit_report(report: &EvalReport, path: &Path, format: ReportFormat) -> Result<()> {
    match format {
        ReportFormat::Csv => write_reports_csv(std::slice::from_ref(report), path),
        ReportFormat::Json => {
            let text = serde_json::to_string_pretty(report).map_err(|e| KdError::format(path, e))?;
            std::fs::write(path, text).map_err(|e| KdError::io(path, e))
        }
    }
}

pub fn read_reports(path: &Path, format: ReportFormat) -> Result<Vec<EvalReport>> {
    match format {
        ReportFormat::Csv => {
            let mut r = csv::Reader::from_path(path).map_err(|e| KdError::format(path, e))?;
            r.deserialize()
                .map(|row| row.map_err(|e| KdError::format(path, e)))
                .collect()
        }
        ReportFormat::Json => {
            let text = std::fs::read_to_string(path).map_err(|e| KdError::io(path, e))?;
            Ok(vec![serde_json::from_str(&text).map_err(|e| KdError::format(path, e))?])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EvalReport {
        let cm = ConfusionMatrix {
            counts: vec![vec![45, 5], vec![0, 50]],
        };
        let mut r = EvalReport::from_confusion("s.ckpt", "atms-kd", "test", &cm, 1234, Some(97.59)).unwrap();
        r.seed = Some(42);
        r.with_timing(&TimingStats::from_seconds(&[0.0123, 0.0131, 0.0119], 1, 1).unwrap())
    }

    #[test]
    fn json_and_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let r = sample();
        for (name, fmt) in [("r.json", ReportFormat::Json), ("r.csv", ReportFormat::Csv)] {
            let p = dir.path().join(name);
            emit_report(&r, &p, fmt).unwrap();
            assert_eq!(ReportFormat::from_path(&p), fmt);
            assert_eq!(read_reports(&p, fmt).unwrap(), vec![r.clone()]);
        }
    }

    #[test]
    fn table_field_names() {
        let v = serde_json::to_value(sample()).unwrap();
        for k in ["accuracy", "precision", "recall", "f1", "kr", "avg_inference_ms"] {
            assert!(v.get(k).is_some(), "{k}");
        }
        assert_eq!(format!("{:.2}", sample().precision), "90.91");
    }
}
