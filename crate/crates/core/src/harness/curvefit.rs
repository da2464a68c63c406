//! Curve fitting with a two-stage MST: four MLPs fit `f(x)` directly, a
//! fifth maps their four outputs to `f(x)`.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{fmt, hash_json, Report};
use crate::ann::{train, Activation, Batch, LmConfig, Mlp, Optimizer, StopCriteria};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, label_seed, rng};

pub const TRAIN_POINTS: usize = 5_000;
pub const TEST_POINTS: usize = 1_000;
pub const STAGE1_MLPS: usize = 4;
pub const NEURONS: usize = 20;
pub const SD_LR: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveFn {
    A,
    B,
    C,
    Constant(f64),
}

impl CurveFn {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            CurveFn::A => (5.0 * (2.0 * x).sin().powi(2)).cos(),
            CurveFn::B | CurveFn::C => (3.0 * x.powi(3).cos()).sin(),
            CurveFn::Constant(c) => c,
        }
    }

    pub fn domain(self) -> (f64, f64) {
        match self {
            CurveFn::C => (2.0, 4.0),
            _ => (1.0, 3.0),
        }
    }

    pub fn name(self) -> String {
        match self {
            CurveFn::A => "a".into(),
            CurveFn::B => "b".into(),
            CurveFn::C => "c".into(),
            CurveFn::Constant(c) => format!("const{c}"),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "a" => Ok(CurveFn::A),
            "b" => Ok(CurveFn::B),
            "c" => Ok(CurveFn::C),
            _ => Err(Error::InvalidParameter(format!("unknown function `{s}` (a, b or c)"))),
        }
    }

    fn key(self) -> u64 {
        label_seed(&self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveOptimizer {
    Lm,
    Sd,
}

impl CurveOptimizer {
    pub fn name(self) -> &'static str {
        match self {
            CurveOptimizer::Lm => "lm",
            CurveOptimizer::Sd => "sd",
        }
    }

    fn optimizer(self) -> Optimizer {
        match self {
            CurveOptimizer::Lm => Optimizer::Lm(LmConfig::default()),
            CurveOptimizer::Sd => Optimizer::Sd { lr: SD_LR },
        }
    }
}

/// Optimizer plus the total iteration budget shared by all five MLPs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub optimizer: CurveOptimizer,
    pub total_iters: usize,
}

pub const BUDGETS: [Budget; 3] = [
    Budget { optimizer: CurveOptimizer::Lm, total_iters: 250 },
    Budget { optimizer: CurveOptimizer::Sd, total_iters: 2_500 },
    Budget { optimizer: CurveOptimizer::Sd, total_iters: 25_000 },
];

#[derive(Debug, Clone, PartialEq)]
pub struct CurveFit {
    pub train_mse: f64,
    pub test_mse: f64,
}

fn scale_x(x: f64, (lo, hi): (f64, f64)) -> f64 {
    2.0 * (x - lo) / (hi - lo) - 1.0
}

/// Uniform random training points and equally spaced test points, inputs
/// mapped onto [-1, 1].
pub fn curve_data(f: CurveFn, seed: u64) -> ((DMatrix<f64>, DMatrix<f64>), (DMatrix<f64>, DMatrix<f64>)) {
    let dom = f.domain();
    let mut r = rng(seed, &[label_seed("curvefit-x"), f.key()]);
    let xs: Vec<f64> = (0..TRAIN_POINTS).map(|_| r.gen_range(dom.0..=dom.1)).collect();
    let ts: Vec<f64> = (0..TEST_POINTS)
        .map(|i| dom.0 + (dom.1 - dom.0) * i as f64 / (TEST_POINTS - 1) as f64)
        .collect();
    let pack = |v: &[f64]| {
        (
            DMatrix::from_iterator(1, v.len(), v.iter().map(|&x| scale_x(x, dom))),
            DMatrix::from_iterator(1, v.len(), v.iter().map(|&x| f.eval(x))),
        )
    };
    (pack(&xs), pack(&ts))
}

/// Train the 4+1 network with `budget.total_iters / 5` iterations per MLP.
pub fn fit_curve(f: CurveFn, budget: Budget, seed: u64) -> Result<CurveFit> {
    let ((xtr, ttr), (xte, tte)) = curve_data(f, seed);
    let per = budget.total_iters / (STAGE1_MLPS + 1);
    if per == 0 {
        return Err(Error::InvalidParameter(format!("budget {} too small", budget.total_iters)));
    }
    let stop = StopCriteria {
        max_iters: per,
        mse_goal: 1e-30,
        val_patience: per,
        mu_patience: per,
    };
    let opt = budget.optimizer.optimizer();
    let mlp_seed = |stage: u64, i: u64| derive_seed(seed, &[label_seed("curvefit-mlp"), f.key(), stage, i]);
    let fit = |x: &DMatrix<f64>, t: &DMatrix<f64>, s: u64| -> Result<Mlp> {
        let mut net = Mlp::new(&[x.nrows(), NEURONS, NEURONS, 1], Activation::Tanh, Activation::Identity, s)?;
        train(&mut net, &Batch::new(x.clone(), t.clone())?, None, &opt, &stop)?;
        Ok(net)
    };
    let stage1: Vec<Mlp> = (0..STAGE1_MLPS as u64)
        .into_par_iter()
        .map(|i| fit(&xtr, &ttr, mlp_seed(1, i)))
        .collect::<Result<_>>()?;
    let lift = |x: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let mut h = DMatrix::zeros(STAGE1_MLPS, x.ncols());
        for (i, m) in stage1.iter().enumerate() {
            h.set_row(i, &m.forward_batch(x)?.row(0));
        }
        Ok(h)
    };
    let htr = lift(&xtr)?;
    let top = fit(&htr, &ttr, mlp_seed(2, 0))?;
    Ok(CurveFit {
        train_mse: top.mse(&htr, &ttr)?,
        test_mse: top.mse(&lift(&xte)?, &tte)?,
    })
}

#[derive(Debug, Clone, Serialize)]
struct CellConfig {
    function: CurveFn,
    budget: Budget,
    train_points: usize,
    test_points: usize,
    neurons: usize,
    stage1_mlps: usize,
    sd_lr: f64,
}

/// Every function x budget x seed, cells run in parallel. Columns:
/// function, optimizer, total_iters, seed, train_mse, test_mse, config_hash.
pub fn run_curvefit(functions: &[CurveFn], budgets: &[Budget], seeds: &[u64]) -> Result<Report> {
    let mut report = Report::new(
        "curvefit",
        &["function", "optimizer", "total_iters", "seed", "train_mse", "test_mse", "config_hash"],
    );
    let mut cells = Vec::new();
    for &f in functions {
        for &b in budgets {
            for &seed in seeds {
                cells.push((f, b, seed));
            }
        }
    }
    let fits: Vec<(CurveFit, f64)> = cells
        .par_iter()
        .map(|&(f, b, seed)| {
            let t0 = Instant::now();
            let r = fit_curve(f, b, seed)?;
            Ok((r, t0.elapsed().as_secs_f64()))
        })
        .collect::<Result<_>>()?;
    for ((f, b, seed), (r, secs)) in cells.into_iter().zip(fits) {
        let cell = format!("{}/{}/{}/{}", f.name(), b.optimizer.name(), b.total_iters, seed);
        report.timings.push((cell, secs));
        let cfg = CellConfig {
            function: f,
            budget: b,
            train_points: TRAIN_POINTS,
            test_points: TEST_POINTS,
            neurons: NEURONS,
            stage1_mlps: STAGE1_MLPS,
            sd_lr: SD_LR,
        };
        report.push(vec![
            f.name(),
            b.optimizer.name().into(),
            b.total_iters.to_string(),
            seed.to_string(),
            fmt(r.train_mse),
            fmt(r.test_mse),
            hash_json(&cfg),
        ])?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn data_layout_and_domains() {
        let ((x, t), (xt, tt)) = curve_data(CurveFn::C, 1);
        assert_eq!((x.ncols(), xt.ncols()), (TRAIN_POINTS, TEST_POINTS));
        assert!(x.iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(xt[0], -1.0);
        assert_eq!(xt[TEST_POINTS - 1], 1.0);
        assert!((tt[0] - (3.0 * 8f64.cos()).sin()).abs() < 1e-15);
        assert_eq!(t.ncols(), TRAIN_POINTS);
        assert_eq!(CurveFn::A.eval(1.0), (5.0 * 2f64.sin().powi(2)).cos());
    }

    #[test]
    fn constant_target_is_fitted_by_both_optimizers() {
        let c = CurveFn::Constant(0.3);
        let lm = fit_curve(c, Budget { optimizer: CurveOptimizer::Lm, total_iters: 250 }, 1).unwrap();
        assert!(lm.test_mse < 1e-10, "{lm:?}");
        let sd = fit_curve(c, Budget { optimizer: CurveOptimizer::Sd, total_iters: 2_500 }, 1).unwrap();
        assert!(sd.test_mse < 1e-6, "{sd:?}");
    }

    #[test]
    fn report_is_reproducible() {
        let b = [Budget { optimizer: CurveOptimizer::Lm, total_iters: 10 }];
        let a = run_curvefit(&[CurveFn::A], &b, &[3]).unwrap();
        let c = run_curvefit(&[CurveFn::A], &b, &[3]).unwrap();
        assert_eq!(a.to_csv(), c.to_csv());
        assert_eq!(a.rows.len(), 1);
    }
}
