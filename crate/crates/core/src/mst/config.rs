use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ann::StopCriteria;
use crate::error::{Error, Result};

/// What one MLP is trained to output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// 1 for packets of this transmitter, 0 otherwise.
    FireForTx(u32),
    /// The transmitter label itself.
    ClassIndex,
}

impl Target {
    pub fn value(self, label: u32) -> f64 {
        match self {
            Target::FireForTx(t) => (label == t) as u8 as f64,
            Target::ClassIndex => label as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub n_mlps: usize,
    pub hidden_layers: usize,
    pub neurons_per_layer: usize,
    pub max_iters: usize,
    pub mse_goal: f64,
    pub val_patience: usize,
    pub mu_patience: usize,
    pub targets: Vec<Target>,
}

impl StageConfig {
    pub fn stop(&self) -> StopCriteria {
        StopCriteria {
            max_iters: self.max_iters,
            mse_goal: self.mse_goal,
            val_patience: self.val_patience,
            mu_patience: self.mu_patience,
        }
    }

    pub fn sizes(&self, n_in: usize) -> Vec<usize> {
        let mut s = vec![n_in];
        s.extend(std::iter::repeat(self.neurons_per_layer).take(self.hidden_layers));
        s.push(1);
        s
    }

    pub fn validate(&self, n_classes: u32) -> Result<()> {
        if self.n_mlps == 0 || self.hidden_layers == 0 || self.neurons_per_layer == 0 {
            return Err(Error::InvalidParameter("stage needs MLPs, layers and neurons".into()));
        }
        if self.targets.len() != self.n_mlps {
            return Err(Error::InvalidParameter(format!(
                "{} targets for {} MLPs",
                self.targets.len(),
                self.n_mlps
            )));
        }
        for t in &self.targets {
            if let Target::FireForTx(tx) = t {
                if *tx == 0 || *tx > n_classes {
                    return Err(Error::InvalidParameter(format!("target transmitter {tx} out of 1..={n_classes}")));
                }
            }
        }
        self.stop().validate()
    }
}

/// `n_mlps` detectors split evenly over transmitters `1..=n_t` in blocks:
/// MLP `i` fires for `floor(i * n_t / n_mlps) + 1`.
pub fn detector_targets(n_mlps: usize, n_t: u32) -> Vec<Target> {
    (0..n_mlps)
        .map(|i| Target::FireForTx((i * n_t as usize / n_mlps) as u32 + 1))
        .collect()
}

/// Detectors cycling `Tx1, Tx2, ..., Txn_t, Tx1, ...`.
pub fn cycling_targets(n_mlps: usize, n_t: u32) -> Vec<Target> {
    (0..n_mlps)
        .map(|i| Target::FireForTx((i % n_t as usize) as u32 + 1))
        .collect()
}

fn check_nt(n_t: u32) -> Result<()> {
    if n_t < 2 {
        return Err(Error::InvalidParameter("need at least two transmitters".into()));
    }
    Ok(())
}

fn stage(n_mlps: usize, neurons: usize, max_iters: usize, goal: f64, patience: usize, targets: Vec<Target>) -> StageConfig {
    StageConfig {
        n_mlps,
        hidden_layers: 2,
        neurons_per_layer: neurons,
        max_iters,
        mse_goal: goal,
        val_patience: patience,
        mu_patience: 10,
        targets,
    }
}

/// Three stages for second-order training: `5 n_t` detectors (10 neurons,
/// 100 iterations, goal 1e-3), 30 cycling detectors (15 neurons, 150, 1e-5)
/// and 30 class-index MLPs (15 neurons, 250, 1e-7).
pub fn default_config_2nd(n_t: u32) -> Result<Vec<StageConfig>> {
    check_nt(n_t)?;
    let n1 = 5 * n_t as usize;
    let n2 = 30.max(n_t as usize);
    Ok(vec![
        stage(n1, 10, 100, 1e-3, 10, detector_targets(n1, n_t)),
        stage(n2, 15, 150, 1e-5, 10, cycling_targets(n2, n_t)),
        stage(30, 15, 250, 1e-7, 10, vec![Target::ClassIndex; 30]),
    ])
}

/// Six stages for first-order training: goals from 1e-1 down to 1e-6 by
/// decades, at most 1,000 epochs, validation patience 20. Stages 1-5
/// are detectors, stage 6 regresses the class index.
pub fn default_config_1st(n_t: u32) -> Result<Vec<StageConfig>> {
    check_nt(n_t)?;
    let n1 = 5 * n_t as usize;
    let n2 = 30.max(n_t as usize);
    let mut out = vec![stage(n1, 10, 1_000, 1e-1, 20, detector_targets(n1, n_t))];
    for s in 1..5 {
        out.push(stage(n2, 15, 1_000, 10f64.powi(-(s as i32 + 1)), 20, cycling_targets(n2, n_t)));
    }
    out.push(stage(30, 15, 1_000, 1e-6, 20, vec![Target::ClassIndex; 30]));
    Ok(out)
}

/// Same stages with `factor` times the MLPs, keeping each stage's target
/// pattern (block detectors, cycling detectors or class index).
pub fn scale_mlps(configs: &[StageConfig], factor: usize, n_t: u32) -> Vec<StageConfig> {
    configs
        .iter()
        .enumerate()
        .map(|(s, c)| {
            let n = c.n_mlps * factor;
            let targets = if c.targets.iter().all(|t| *t == Target::ClassIndex) {
                vec![Target::ClassIndex; n]
            } else if s == 0 {
                detector_targets(n, n_t)
            } else {
                cycling_targets(n, n_t)
            };
            StageConfig {
                n_mlps: n,
                targets,
                ..c.clone()
            }
        })
        .collect()
}

pub fn config_hash(configs: &[StageConfig]) -> String {
    let json = serde_json::to_string(configs).expect("configs serialize");
    hex::encode(&Sha256::digest(json.as_bytes())[..8])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn second_order_defaults() {
        let c = default_config_2nd(12).unwrap();
        assert_eq!(c.iter().map(|s| s.n_mlps).collect::<Vec<_>>(), vec![60, 30, 30]);
        assert_eq!(c[0].mse_goal, 1e-3);
        assert_eq!((c[1].max_iters, c[1].mse_goal), (150, 1e-5));
        assert_eq!((c[2].max_iters, c[2].mse_goal), (250, 1e-7));
        assert_eq!(c[0].targets[0], Target::FireForTx(1));
        assert_eq!(c[0].targets[4], Target::FireForTx(1));
        assert_eq!(c[0].targets[5], Target::FireForTx(2));
        assert_eq!(c[0].targets[59], Target::FireForTx(12));
        assert_eq!(c[1].targets[12], Target::FireForTx(1));
        assert!(c[2].targets.iter().all(|t| *t == Target::ClassIndex));
        assert_eq!(Target::ClassIndex.value(7), 7.0);
        assert_eq!(c[0].sizes(1024), vec![1024, 10, 10, 1]);
        for s in &c {
            s.validate(12).unwrap();
        }
        assert!(default_config_2nd(1).is_err());
    }

    #[test]
    fn first_order_defaults() {
        let c = default_config_1st(12).unwrap();
        assert_eq!(c.len(), 6);
        assert_eq!(c[0].mse_goal, 1e-1);
        assert!((c[5].mse_goal - 1e-6).abs() < 1e-18);
        assert!(c.iter().all(|s| s.max_iters == 1_000 && s.val_patience == 20));
        assert!(c[..5].iter().all(|s| matches!(s.targets[0], Target::FireForTx(_))));
        assert_eq!(c[5].targets[0], Target::ClassIndex);
    }

    #[test]
    fn scaling_keeps_patterns() {
        let c = scale_mlps(&default_config_2nd(12).unwrap(), 3, 12);
        assert_eq!(c.iter().map(|s| s.n_mlps).collect::<Vec<_>>(), vec![180, 90, 90]);
        assert_eq!(c[0].targets[14], Target::FireForTx(1));
        assert_eq!(c[0].targets[15], Target::FireForTx(2));
        assert_ne!(config_hash(&c), config_hash(&default_config_2nd(12).unwrap()));
    }
}
