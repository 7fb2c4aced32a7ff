use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{KdError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Teacher,
    Direct,
    AtmsKd,
    FixedKd,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Teacher => "teacher",
            Method::Direct => "direct",
            Method::AtmsKd => "atms-kd",
            Method::FixedKd => "fixed-kd",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Percentage, credited by the mixing weight on augmented batches.
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub tau: Option<f64>,
    pub lr: f64,
    pub seconds: f64,
    /// Batches whose gradient norm exceeded the clipping threshold.
    pub clipped_batches: usize,
    pub augmented_batches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub method: Method,
    pub width: f64,
    pub seed: u64,
    pub parameters: usize,
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub teacher_val_accuracy: Option<f64>,
    pub threads: usize,
    pub total_seconds: f64,
}

impl TrainReport {
    pub fn taus(&self) -> Vec<Option<f64>> {
        self.records.iter().map(|r| r.tau).collect()
    }

    /// Epoch CSV without wall-clock columns, so equal seeds give equal bytes.
    pub fn epochs_csv(&self) -> String {
        let mut out = String::from("epoch,split,loss,acc,tau,lr\n");
        for r in &self.records {
            let tau = r.tau.map(|t| t.to_string()).unwrap_or_default();
            out.push_str(&format!("{},train,{},{},{tau},{}\n", r.epoch, r.train_loss, r.train_acc, r.lr));
            out.push_str(&format!("{},val,{},{},{tau},{}\n", r.epoch, r.val_loss, r.val_acc, r.lr));
        }
        out
    }

    pub fn timing_csv(&self) -> String {
        let mut out = String::from("epoch,seconds,clipped_batches,augmented_batches\n");
        for r in &self.records {
            out.push_str(&format!("{},{},{},{}\n", r.epoch, r.seconds, r.clipped_batches, r.augmented_batches));
        }
        out
    }

    /// Writes `epochs.csv`, `timing.csv` and `report.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| KdError::io(dir, e))?;
        for (name, body) in [("epochs.csv", self.epochs_csv()), ("timing.csv", self.timing_csv())] {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| KdError::io(&path, e))?;
        }
        let path = dir.join("report.json");
        let file = File::create(&path).map_err(|e| KdError::io(&path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, self).map_err(|e| KdError::format(&path, e))?;
        w.flush().map_err(|e| KdError::io(&path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| KdError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| KdError::format(path, e))
    }
}
