use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::model::MstModel;
use crate::dataprep::FeatureSet;
use crate::error::{Error, Result};

/// `counts[true - 1][pred - 1]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub n_classes: u32,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: u32) -> Self {
        let n = n_classes as usize;
        Self {
            n_classes,
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn from_predictions(truth: &[u32], pred: &[u32], n_classes: u32) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(Error::ShapeMismatch(format!("{} labels vs {} predictions", truth.len(), pred.len())));
        }
        let mut cm = Self::new(n_classes);
        for (&t, &p) in truth.iter().zip(pred) {
            cm.add(t, p)?;
        }
        Ok(cm)
    }

    pub fn add(&mut self, truth: u32, pred: u32) -> Result<()> {
        let n = self.n_classes;
        if truth == 0 || truth > n || pred == 0 || pred > n {
            return Err(Error::InvalidParameter(format!("label out of 1..={n}: {truth} -> {pred}")));
        }
        self.counts[truth as usize - 1][pred as usize - 1] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let hits: u64 = (0..self.counts.len()).map(|i| self.counts[i][i]).sum();
        hits as f64 / total as f64
    }

    /// Header `true\pred,1,..,n`, one row per true label.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("true\\pred");
        for p in 1..=self.n_classes {
            let _ = write!(s, ",{p}");
        }
        s.push('\n');
        for (t, row) in self.counts.iter().enumerate() {
            let _ = write!(s, "{}", t + 1);
            for c in row {
                let _ = write!(s, ",{c}");
            }
            s.push('\n');
        }
        s
    }

    /// Plain PGM (P2) with each row scaled to its own total; `cell` pixels
    /// per matrix entry.
    pub fn to_pgm(&self, cell: usize) -> String {
        let n = self.counts.len();
        let side = n * cell.max(1);
        let mut s = format!("P2\n{side} {side}\n255\n");
        for r in 0..side {
            let row = &self.counts[r / cell.max(1)];
            let total: u64 = row.iter().sum();
            let line: Vec<String> = (0..side)
                .map(|c| {
                    let v = row[c / cell.max(1)];
                    let g = if total == 0 { 0 } else { (255 * v / total) as u8 };
                    g.to_string()
                })
                .collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }

    /// Relabel classes with `perm[old - 1] = new`.
    pub fn permuted(&self, perm: &[u32]) -> Self {
        let mut out = Self::new(self.n_classes);
        for (t, row) in self.counts.iter().enumerate() {
            for (p, &c) in row.iter().enumerate() {
                out.counts[perm[t] as usize - 1][perm[p] as usize - 1] += c;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
}

pub fn evaluate(model: &MstModel, test: &FeatureSet) -> Result<Evaluation> {
    if test.dim != model.input_dim {
        return Err(Error::ShapeMismatch(format!("test dim {} vs model {}", test.dim, model.input_dim)));
    }
    let pred = model.classify_batch(&test.to_matrix())?;
    let confusion = ConfusionMatrix::from_predictions(&test.labels, &pred, model.n_classes)?;
    Ok(Evaluation {
        accuracy: confusion.accuracy(),
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_constant_classifiers() {
        let truth: Vec<u32> = (0..120).map(|i| i % 12 + 1).collect();
        let cm = ConfusionMatrix::from_predictions(&truth, &truth, 12).unwrap();
        assert_eq!(cm.accuracy(), 1.0);
        assert!(cm.row_sums().iter().all(|&r| r == 10));
        let constant = vec![4; 120];
        let mut cm = ConfusionMatrix::from_predictions(&truth, &constant, 12).unwrap();
        assert!((cm.accuracy() - 1.0 / 12.0).abs() < 1e-15);
        assert!(cm.to_csv().starts_with("true\\pred,1,2"));
        assert_eq!(cm.to_csv().lines().count(), 13);
        assert!(cm.to_pgm(2).starts_with("P2\n24 24\n255\n"));
        assert!(cm.add(13, 1).is_err());
    }
}
