use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFECT_CLASS: usize = 2;

/// 3x3 confusion matrix; rows are true classes, columns predictions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion(pub [[u64; 3]; 3]);

impl Confusion {
    pub fn record(&mut self, truth: u8, predicted: u8) {
        self.0[truth as usize][predicted as usize] += 1;
    }

    pub fn record_all(&mut self, truth: &[u8], predicted: &[u8]) {
        for (&t, &p) in truth.iter().zip(predicted) {
            self.record(t, p);
        }
    }

    pub fn merge(&mut self, other: &Confusion) {
        for i in 0..3 {
            for j in 0..3 {
                self.0[i][j] += other.0[i][j];
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.0.iter().flatten().sum()
    }

    /// Overall fraction of correctly classified pixels.
    pub fn pixel_accuracy(&self) -> f64 {
        let correct: u64 = (0..3).map(|k| self.0[k][k]).sum();
        correct as f64 / self.total().max(1) as f64
    }

    /// Recall of class `k`; 1 when the class never occurs.
    pub fn recall(&self, k: usize) -> f64 {
        let row: u64 = self.0[k].iter().sum();
        if row == 0 {
            1.0
        } else {
            self.0[k][k] as f64 / row as f64
        }
    }
}

/// Mean pixel accuracy (mean per-class recall) and defect-class accuracy
/// (recall of the defect class).
pub fn compute_metrics(conf: &Confusion) -> Result<(f64, f64)> {
    if conf.total() == 0 {
        return Err(Error::validation("confusion matrix is empty"));
    }
    let mpa = (0..3).map(|k| conf.recall(k)).sum::<f64>() / 3.0;
    Ok((mpa, conf.recall(DEFECT_CLASS)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub confusion: Confusion,
    pub mpa: f64,
    pub dca: f64,
}

impl EvalReport {
    pub fn from_confusion(confusion: Confusion) -> Result<Self> {
        let (mpa, dca) = compute_metrics(&confusion)?;
        Ok(Self { confusion, mpa, dca })
    }

    pub fn pixel_accuracy(&self) -> f64 {
        self.confusion.pixel_accuracy()
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "confusion (rows = true, cols = predicted; 0 background, 1 in-spec, 2 defect)")?;
        for (k, row) in self.confusion.0.iter().enumerate() {
            writeln!(f, "  {k}: {:>10} {:>10} {:>10}", row[0], row[1], row[2])?;
        }
        writeln!(f, "pixel accuracy       {:.4}", self.pixel_accuracy())?;
        writeln!(f, "mean pixel accuracy  {:.4}", self.mpa)?;
        write!(f, "defect-class accuracy {:.4}", self.dca)
    }
}
