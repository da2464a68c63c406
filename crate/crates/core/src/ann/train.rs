//! Iterative training with staged stopping rules and best-validation restore.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::first_order::{adam_step, sd_step, AdamConfig, AdamState};
use super::lm::{lm_step, Batch, LmConfig, LmState};
use super::mlp::Mlp;
use crate::error::{Error, Result};
use crate::seed::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Lm(LmConfig),
    Sd { lr: f64 },
    /// One iteration is one pass over the data; `batch_size: None` means a
    /// single full-batch step per iteration.
    Adam {
        cfg: AdamConfig,
        batch_size: Option<usize>,
        seed: u64,
    },
}

impl Optimizer {
    pub fn is_second_order(&self) -> bool {
        matches!(self, Optimizer::Lm(_))
    }

    pub fn name(&self) -> &'static str {
        match self {
            Optimizer::Lm(_) => "lm",
            Optimizer::Sd { .. } => "sd",
            Optimizer::Adam { .. } => "adam",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopCriteria {
    pub max_iters: usize,
    pub mse_goal: f64,
    pub val_patience: usize,
    pub mu_patience: usize,
}

impl StopCriteria {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || !(self.mse_goal > 0.0) || self.val_patience == 0 || self.mu_patience == 0 {
            return Err(Error::InvalidParameter(format!("stop criteria must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MseGoal,
    ValPatience,
    MuPatience,
    MaxIters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub train_mse: f64,
    pub val_mse: Option<f64>,
    pub mu: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub records: Vec<IterRecord>,
    pub stop: StopReason,
    /// Iteration whose weights were kept (0 = initial weights).
    pub best_iter: usize,
    pub best_val_mse: Option<f64>,
    pub final_train_mse: f64,
}

impl TrainRun {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }
}

enum Stepper {
    Lm(LmConfig, LmState),
    Sd(f64),
    Adam(AdamState, Option<usize>, rand_chacha::ChaCha8Rng),
}

/// Train until a stopping rule fires. With a validation set the returned
/// network is the snapshot with the lowest validation MSE seen (strict
/// improvements only, starting from the initial weights).
pub fn train(
    net: &mut Mlp,
    data: &Batch,
    val: Option<(&DMatrix<f64>, &DMatrix<f64>)>,
    opt: &Optimizer,
    stop: &StopCriteria,
) -> Result<TrainRun> {
    stop.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidParameter("empty training batch".into()));
    }
    let mut stepper = match opt {
        Optimizer::Lm(cfg) => {
            cfg.validate()?;
            Stepper::Lm(cfg.clone(), LmState::new(cfg))
        }
        Optimizer::Sd { lr } => {
            if !(*lr >= 0.0) {
                return Err(Error::InvalidParameter(format!("learning rate {lr}")));
            }
            Stepper::Sd(*lr)
        }
        Optimizer::Adam { cfg, batch_size, seed } => {
            if batch_size == &Some(0) {
                return Err(Error::InvalidParameter("batch size 0".into()));
            }
            Stepper::Adam(AdamState::new(net.n_params(), *cfg), *batch_size, rng(*seed, &[0xada3]))
        }
    };

    let mut best_val = match val {
        Some((vx, vt)) => Some(net.mse(vx, vt)?),
        None => None,
    };
    let mut best_net = net.clone();
    let mut best_iter = 0;
    let mut val_fail = 0usize;
    let mut records = Vec::new();
    let mut reason = StopReason::MaxIters;
    let mut order: Vec<usize> = (0..data.len()).collect();

    for iter in 1..=stop.max_iters {
        let (train_mse, mu, stuck) = match &mut stepper {
            Stepper::Lm(cfg, st) => {
                let rep = lm_step(net, data, cfg, st)?;
                (rep.mse_after, Some(rep.mu), st.consecutive_mu_max >= stop.mu_patience)
            }
            // SD reports the loss at the start of the step, which its
            // gradient pass already computed.
            Stepper::Sd(lr) => (sd_step(net, &data.x, &data.t, *lr)?, None, false),
            Stepper::Adam(st, bs, r) => {
                match bs {
                    None => {
                        adam_step(net, &data.x, &data.t, st)?;
                    }
                    Some(b) => {
                        order.shuffle(r);
                        for chunk in order.chunks(*b) {
                            let x = data.x.select_columns(chunk);
                            let t = data.t.select_columns(chunk);
                            adam_step(net, &x, &t, st)?;
                        }
                    }
                }
                (net.mse(&data.x, &data.t)?, None, false)
            }
        };
        if !net.is_finite() {
            return Err(Error::SolveFailure(format!("weights diverged at iteration {iter}")));
        }
        let val_mse = match val {
            Some((vx, vt)) => {
                let v = net.mse(vx, vt)?;
                if best_val.map_or(true, |b| v < b) {
                    best_val = Some(v);
                    best_net = net.clone();
                    best_iter = iter;
                    val_fail = 0;
                } else {
                    val_fail += 1;
                }
                Some(v)
            }
            None => None,
        };
        records.push(IterRecord {
            iter,
            train_mse,
            val_mse,
            mu,
        });
        if train_mse <= stop.mse_goal {
            reason = StopReason::MseGoal;
            break;
        }
        if val.is_some() && val_fail >= stop.val_patience {
            reason = StopReason::ValPatience;
            break;
        }
        if stuck {
            reason = StopReason::MuPatience;
            break;
        }
    }

    if val.is_some() {
        *net = best_net;
    } else {
        best_iter = records.len();
    }
    let final_train_mse = net.mse(&data.x, &data.t)?;
    Ok(TrainRun {
        records,
        stop: reason,
        best_iter,
        best_val_mse: best_val,
        final_train_mse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ann::mlp::Activation;

    fn sine_batch(m: usize, offset: f64) -> Batch {
        let x = DMatrix::from_fn(1, m, |_, c| -1.0 + 2.0 * (c as f64 + offset) / m as f64);
        let t = x.map(|v| (2.5 * v).sin());
        Batch::new(x, t).unwrap()
    }

    fn stop(max_iters: usize, goal: f64) -> StopCriteria {
        StopCriteria {
            max_iters,
            mse_goal: goal,
            val_patience: 10,
            mu_patience: 10,
        }
    }

    #[test]
    fn huge_goal_stops_after_one_iteration() {
        let mut net = Mlp::new(&[1, 5, 1], Activation::Tanh, Activation::Identity, 0).unwrap();
        let run = train(&mut net, &sine_batch(40, 0.0), None, &Optimizer::Lm(LmConfig::default()), &stop(100, 1e9)).unwrap();
        assert_eq!(run.iterations(), 1);
        assert_eq!(run.stop, StopReason::MseGoal);
    }

    #[test]
    fn validation_patience_is_exact() {
        // Validation targets the model can never approach better than its
        // starting point: zero-rate SD leaves the weights untouched.
        let mut net = Mlp::new(&[1, 5, 1], Activation::Tanh, Activation::Identity, 0).unwrap();
        let start = net.clone();
        let data = sine_batch(40, 0.0);
        let v = sine_batch(10, 0.5);
        let run = train(&mut net, &data, Some((&v.x, &v.t)), &Optimizer::Sd { lr: 0.0 }, &stop(1000, 1e-12)).unwrap();
        assert_eq!(run.stop, StopReason::ValPatience);
        assert_eq!(run.iterations(), 10);
        assert_eq!(run.best_iter, 0);
        assert_eq!(net, start);
    }

    #[test]
    fn mu_patience_stops_stuck_lm() {
        let x = DMatrix::zeros(2, 4);
        let t = DMatrix::from_row_slice(1, 4, &[1.0, -1.0, 1.0, -1.0]);
        let mut net = Mlp::zeros(&[2, 1], Activation::Tanh, Activation::Identity).unwrap();
        let run = train(&mut net, &Batch::new(x, t).unwrap(), None, &Optimizer::Lm(LmConfig::default()), &stop(100, 1e-9)).unwrap();
        assert_eq!(run.stop, StopReason::MuPatience);
        assert_eq!(run.iterations(), 10);
    }

    #[test]
    fn best_validation_snapshot_is_returned() {
        let mut net = Mlp::new(&[1, 8, 1], Activation::Tanh, Activation::Identity, 3).unwrap();
        let data = sine_batch(60, 0.0);
        let v = sine_batch(15, 0.37);
        let run = train(&mut net, &data, Some((&v.x, &v.t)), &Optimizer::Lm(LmConfig::default()), &stop(40, 1e-12)).unwrap();
        let best = run.best_val_mse.unwrap();
        assert_eq!(net.mse(&v.x, &v.t).unwrap(), best);
        let min = run.records.iter().filter_map(|r| r.val_mse).fold(f64::INFINITY, f64::min);
        assert!(best <= min);
    }

    #[test]
    fn training_is_deterministic() {
        let data = sine_batch(50, 0.0);
        let v = sine_batch(10, 0.5);
        for opt in [
            Optimizer::Lm(LmConfig::default()),
            Optimizer::Adam {
                cfg: AdamConfig::default(),
                batch_size: Some(8),
                seed: 4,
            },
        ] {
            let runs: Vec<_> = (0..2)
                .map(|_| {
                    let mut net = Mlp::new(&[1, 6, 1], Activation::Tanh, Activation::Identity, 9).unwrap();
                    let run = train(&mut net, &data, Some((&v.x, &v.t)), &opt, &stop(30, 1e-12)).unwrap();
                    (run, net)
                })
                .collect();
            assert_eq!(runs[0], runs[1]);
        }
    }

    #[test]
    fn lm_beats_sd_on_a_smooth_fit() {
        let data = sine_batch(100, 0.0);
        let mut a = Mlp::new(&[1, 8, 1], Activation::Tanh, Activation::Identity, 1).unwrap();
        let mut b = a.clone();
        train(&mut a, &data, None, &Optimizer::Lm(LmConfig::default()), &stop(50, 1e-12)).unwrap();
        train(&mut b, &data, None, &Optimizer::Sd { lr: 0.01 }, &stop(500, 1e-12)).unwrap();
        assert!(a.mse(&data.x, &data.t).unwrap() < b.mse(&data.x, &data.t).unwrap());
    }
}
