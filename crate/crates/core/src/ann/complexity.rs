//! Parameter counts and Hessian cost ratios for staged ensembles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(Error::InvalidParameter(format!("layer sizes {sizes:?}")));
    }
    Ok(())
}

/// Every weight and bias, output layer included.
pub fn count_parameters(sizes: &[usize]) -> Result<usize> {
    check(sizes)?;
    Ok(sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum())
}

/// Hidden-layer weights plus hidden biases; the output layer is left out.
/// `(1024, 10, 10, 1)` gives `1024*10 + 10*10 + (10 + 10)`.
pub fn count_parameters_paper(sizes: &[usize]) -> Result<usize> {
    check(sizes)?;
    if sizes.len() < 3 {
        return Err(Error::InvalidParameter("need at least one hidden layer".into()));
    }
    let hidden = &sizes[..sizes.len() - 1];
    Ok(hidden.windows(2).map(|w| w[0] * w[1] + w[1]).sum())
}

/// One stage: `n_mlps` networks of `params` parameters each.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageCount {
    pub n_mlps: usize,
    pub params: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexityRatios {
    /// `N^e / sum(n_s * p_s^e)`.
    pub serial_speedup: f64,
    /// `N^e / sum(p_s^e)`.
    pub parallel_speedup: f64,
    /// `N^2 / sum(p_s^2)`.
    pub serial_mem: f64,
    /// `N^2 / sum(n_s * p_s^2)`.
    pub parallel_mem: f64,
}

/// Cost of inverting one Hessian over `total` parameters relative to the
/// staged ensemble, for a matrix-inversion exponent `exponent`.
pub fn complexity_ratios(total: f64, stages: &[StageCount], exponent: f64) -> Result<ComplexityRatios> {
    if !(total > 0.0) || stages.is_empty() || stages.iter().any(|s| s.n_mlps == 0 || !(s.params > 0.0)) {
        return Err(Error::InvalidParameter("counts must be positive".into()));
    }
    let sum = |f: &dyn Fn(&StageCount) -> f64| stages.iter().map(f).sum::<f64>();
    let serial = sum(&|s| s.n_mlps as f64 * s.params.powf(exponent));
    let parallel = sum(&|s| s.params.powf(exponent));
    let mem_serial = sum(&|s| s.params * s.params);
    let mem_parallel = sum(&|s| s.n_mlps as f64 * s.params * s.params);
    let ne = total.powf(exponent);
    let n2 = total * total;
    Ok(ComplexityRatios {
        serial_speedup: ne / serial,
        parallel_speedup: ne / parallel,
        serial_mem: n2 / mem_serial,
        parallel_mem: n2 / mem_parallel,
    })
}

/// The published operands: a 674,480-parameter total against 60, 30 and 30
/// networks of 10,360, 1,145 and 705 parameters.
pub fn published_operands() -> (f64, [StageCount; 3]) {
    (
        674_480.0,
        [
            StageCount {
                n_mlps: 60,
                params: 10_360.0,
            },
            StageCount {
                n_mlps: 30,
                params: 1_145.0,
            },
            StageCount {
                n_mlps: 30,
                params: 705.0,
            },
        ],
    )
}

pub const MATINV_EXPONENT: f64 = 2.373;
