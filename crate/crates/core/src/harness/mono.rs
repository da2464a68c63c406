//! Single-network classifiers: one-hot targets, argmax decision.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::ann::{train, Activation, AdamConfig, Batch, Mlp, Optimizer, StopCriteria, TrainRun};
use crate::dataprep::FeatureSet;
use crate::error::{Error, Result};
use crate::mst::ConfusionMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonoConfig {
    pub hidden: Vec<usize>,
    pub hidden_act: Activation,
    pub output_act: Activation,
    pub optimizer: Optimizer,
    pub stop: StopCriteria,
}

/// Two ReLU layers of 128, sigmoid outputs, Adam on mini-batches of 32.
pub fn dnn_baseline(seed: u64) -> MonoConfig {
    MonoConfig {
        hidden: vec![128, 128],
        hidden_act: Activation::Relu,
        output_act: Activation::Sigmoid,
        optimizer: Optimizer::Adam {
            cfg: AdamConfig::default(),
            batch_size: Some(32),
            seed,
        },
        stop: StopCriteria {
            max_iters: 200,
            mse_goal: 1e-6,
            val_patience: 10,
            mu_patience: 1,
        },
    }
}

/// Two tanh layers of 100 trained with Adam on mini-batches of 32.
pub fn single_mlp_first_order(seed: u64) -> MonoConfig {
    MonoConfig {
        hidden: vec![100, 100],
        hidden_act: Activation::Tanh,
        output_act: Activation::Identity,
        optimizer: Optimizer::Adam {
            cfg: AdamConfig::default(),
            batch_size: Some(32),
            seed,
        },
        stop: StopCriteria {
            max_iters: 300,
            mse_goal: 1e-6,
            val_patience: 20,
            mu_patience: 1,
        },
    }
}

pub fn one_hot(labels: &[u32], n_classes: u32) -> DMatrix<f64> {
    DMatrix::from_fn(n_classes as usize, labels.len(), |r, c| (labels[c] == r as u32 + 1) as u8 as f64)
}

#[derive(Debug, Clone)]
pub struct MonoModel {
    pub net: Mlp,
    pub n_classes: u32,
}

impl MonoModel {
    pub fn predict(&self, set: &FeatureSet) -> Result<Vec<u32>> {
        let y = self.net.forward_batch(&set.to_matrix())?;
        Ok(y.column_iter().map(|c| c.imax() as u32 + 1).collect())
    }

    pub fn confusion(&self, set: &FeatureSet) -> Result<ConfusionMatrix> {
        ConfusionMatrix::from_predictions(&set.labels, &self.predict(set)?, self.n_classes)
    }
}

pub fn train_mono(fit: &FeatureSet, val: Option<&FeatureSet>, cfg: &MonoConfig, seed: u64) -> Result<(MonoModel, TrainRun)> {
    if fit.is_empty() {
        return Err(Error::InvalidParameter("empty training set".into()));
    }
    let n_classes = fit.n_classes();
    let mut sizes = vec![fit.dim];
    sizes.extend_from_slice(&cfg.hidden);
    sizes.push(n_classes as usize);
    let mut net = Mlp::new(&sizes, cfg.hidden_act, cfg.output_act, seed)?;
    let batch = Batch::new(fit.to_matrix(), one_hot(&fit.labels, n_classes))?;
    let val = val.map(|v| (v.to_matrix(), one_hot(&v.labels, n_classes)));
    let run = train(&mut net, &batch, val.as_ref().map(|(a, b)| (a, b)), &cfg.optimizer, &cfg.stop)?;
    Ok((MonoModel { net, n_classes }, run))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_layout() {
        let t = one_hot(&[2, 1, 3], 3);
        assert_eq!(t.column(0).as_slice(), &[0.0, 1.0, 0.0]);
        assert_eq!(t.column(2).as_slice(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn learns_separable_classes() {
        let mut set = FeatureSet::new(2);
        for i in 0..30 {
            let d = i as f64 * 0.01;
            set.push(&[1.0 + d, 0.0], 1, "a").unwrap();
            set.push(&[-1.0, d], 2, "b").unwrap();
            set.push(&[0.0, 1.0 - d], 3, "c").unwrap();
        }
        let (m, run) = train_mono(&set, None, &dnn_baseline(3), 4).unwrap();
        assert!(run.iterations() > 0);
        assert_eq!(m.confusion(&set).unwrap().accuracy(), 1.0);
    }
}
