use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{config_hash, StageConfig};
use crate::ann::{Mlp, Optimizer};
use crate::error::{Error, Result};

/// Trained stages; stage `s + 1` reads the outputs of stage `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MstModel {
    #[serde(skip)]
    pub stages: Vec<Vec<Mlp>>,
    pub n_classes: u32,
    pub input_dim: usize,
    pub configs: Vec<StageConfig>,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Stage 1 was trained on transmitters `1..=k` only.
    #[serde(default)]
    pub stage1_k: Option<u32>,
}

impl MstModel {
    pub fn config_hash(&self) -> String {
        config_hash(&self.configs)
    }

    fn check(&self) -> Result<()> {
        if self.stages.is_empty() || self.stages.len() != self.configs.len() || self.stages.iter().any(Vec::is_empty) {
            return Err(Error::UntrainedModel);
        }
        Ok(())
    }

    /// Outputs of stage `s` given that stage's inputs (`n_mlps x samples`).
    pub fn stage_outputs(&self, s: usize, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mlps = &self.stages[s];
        let mut out = DMatrix::zeros(mlps.len(), x.ncols());
        for (i, m) in mlps.iter().enumerate() {
            let y = m.forward_batch(x)?;
            out.row_mut(i).copy_from(&y.row(0));
        }
        Ok(out)
    }

    /// Outputs of the last stage for a `input_dim x samples` batch.
    pub fn final_outputs(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check()?;
        let mut a = x.clone();
        for s in 0..self.stages.len() {
            a = self.stage_outputs(s, &a)?;
        }
        Ok(a)
    }

    pub fn classify_batch(&self, x: &DMatrix<f64>) -> Result<Vec<u32>> {
        let y = self.final_outputs(x)?;
        Ok(y.column_iter()
            .map(|c| fuse_votes(c.as_slice(), self.n_classes))
            .collect())
    }

    /// Digest of one stage's weights.
    pub fn stage_hash(&self, s: usize) -> String {
        let mut h = Sha256::new();
        for m in &self.stages[s] {
            for p in m.params() {
                h.update(p.to_le_bytes());
            }
        }
        hex::encode(&h.finalize()[..8])
    }
}

/// Label for one sample.
pub fn classify(model: &MstModel, v: &[f64]) -> Result<u32> {
    if v.len() != model.input_dim {
        model.check()?;
        return Err(Error::ShapeMismatch(format!(
            "feature vector of length {} for a model with {} inputs",
            v.len(),
            model.input_dim
        )));
    }
    let x = DMatrix::from_column_slice(v.len(), 1, v);
    Ok(model.classify_batch(&x)?[0])
}

/// Round each output to the nearest label in `1..=n_classes` and take the
/// majority; ties go to the lowest label.
pub fn fuse_votes(outputs: &[f64], n_classes: u32) -> u32 {
    let mut votes = vec![0usize; n_classes as usize + 1];
    for &y in outputs {
        let l = if y.is_nan() { 1.0 } else { y.round().clamp(1.0, n_classes as f64) };
        votes[l as usize] += 1;
    }
    let mut best = 1;
    for l in 2..=n_classes as usize {
        if votes[l] > votes[best] {
            best = l;
        }
    }
    best as u32
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fusion_rules() {
        assert_eq!(fuse_votes(&[7.2; 30], 12), 7);
        let mut v = vec![3.0; 16];
        v.extend(vec![5.0; 14]);
        assert_eq!(fuse_votes(&v, 12), 3);
        let mut v = vec![9.1; 15];
        v.extend(vec![2.4; 15]);
        assert_eq!(fuse_votes(&v, 12), 2);
        assert_eq!(fuse_votes(&[-4.0, 40.0, 40.0], 12), 12);
    }

    #[test]
    fn untrained_model_rejected() {
        let m = MstModel {
            stages: vec![],
            n_classes: 3,
            input_dim: 2,
            configs: vec![],
            optimizer: Optimizer::Sd { lr: 0.1 },
            seed: 0,
            stage1_k: None,
        };
        assert!(matches!(classify(&m, &[0.0, 1.0]), Err(Error::UntrainedModel)));
    }
}
