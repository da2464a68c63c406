//! Levenberg-Marquardt for MSE networks.
//!
//! Conventions: residual `e = t - y`, output Jacobian `J = dy/dtheta`, step
//! `delta = (J'J + mu I)^-1 J'e`. When the batch has fewer residual rows
//! than the network has parameters the step is taken through the equivalent
//! row-space system `delta = J'(JJ' + mu I)^-1 e`, with `JJ'` assembled layer by
//! layer from sensitivities and activation Gram matrices.

use nalgebra::{DMatrix, DVector};
use std::sync::OnceLock;
use serde::{Deserialize, Serialize};

use super::linalg::{cholesky, cholesky_solve, gram_tr};
use super::mlp::{check_targets, ForwardTrace, Mlp};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Auto,
    /// `n x n` normal equations.
    Primal,
    /// `R x R` row-space system.
    Dual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub mu0: f64,
    pub mu_inc: f64,
    pub mu_dec: f64,
    pub mu_max: f64,
    pub route: Route,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            mu0: 1e-3,
            mu_inc: 10.0,
            mu_dec: 0.1,
            mu_max: 1e8,
            route: Route::Auto,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.mu0 > 0.0
            && self.mu_inc > 1.0
            && self.mu_dec > 0.0
            && self.mu_dec < 1.0
            && self.mu_max >= self.mu0;
        if !ok {
            return Err(Error::InvalidParameter(format!("bad LM schedule {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmState {
    pub mu: f64,
    /// Iterations in a row where no damping up to `mu_max` reduced the error.
    pub consecutive_mu_max: usize,
}

impl LmState {
    pub fn new(cfg: &LmConfig) -> Self {
        Self {
            mu: cfg.mu0,
            consecutive_mu_max: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub accepted: bool,
    pub mse_before: f64,
    pub mse_after: f64,
    /// Damping that produced the accepted step, or the last one tried.
    pub mu: f64,
    pub route: Route,
}

/// A training batch. The input Gram matrix `X'X` is computed on first use
/// by the row-space route and reused afterwards.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: DMatrix<f64>,
    pub t: DMatrix<f64>,
    gram: OnceLock<DMatrix<f64>>,
}

impl Batch {
    pub fn new(x: DMatrix<f64>, t: DMatrix<f64>) -> Result<Self> {
        if x.ncols() != t.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "{} inputs vs {} targets",
                x.ncols(),
                t.ncols()
            )));
        }
        Ok(Self {
            x,
            t,
            gram: OnceLock::new(),
        })
    }

    /// Batch whose input Gram is a sub-block of a precomputed one.
    pub fn with_gram(x: DMatrix<f64>, t: DMatrix<f64>, gram: DMatrix<f64>) -> Result<Self> {
        let b = Self::new(x, t)?;
        if gram.shape() != (b.x.ncols(), b.x.ncols()) {
            return Err(Error::ShapeMismatch("gram does not match batch".into()));
        }
        b.gram.get_or_init(|| gram);
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.x.ncols() == 0
    }

    fn input_gram(&self) -> &DMatrix<f64> {
        self.gram.get_or_init(|| gram_tr(&self.x))
    }
}

/// Per-layer output sensitivities `dy_r/dz_l`, one column per residual row
/// `r = sample * n_out + output`.
pub(crate) fn sensitivities(net: &Mlp, trace: &ForwardTrace) -> Vec<DMatrix<f64>> {
    let derivs = net.derivatives(trace);
    let n_out = net.n_outputs();
    let m = trace.act[0].ncols();
    let rows = m * n_out;
    let last = derivs.len() - 1;
    let mut out = vec![DMatrix::zeros(0, 0); derivs.len()];
    let mut d = DMatrix::zeros(n_out, rows);
    for a in 0..m {
        for o in 0..n_out {
            d[(o, a * n_out + o)] = derivs[last][(o, a)];
        }
    }
    out[last] = d;
    for l in (0..last).rev() {
        let mut back = net.layers[l + 1].weights.tr_mul(&out[l + 1]);
        for (r, mut col) in back.column_iter_mut().enumerate() {
            col.component_mul_assign(&derivs[l].column(r / n_out));
        }
        out[l] = back;
    }
    out
}

/// Output Jacobian `dy/dtheta`, one row per residual.
pub fn output_jacobian(net: &Mlp, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let trace = net.trace(x)?;
    let sens = sensitivities(net, &trace);
    Ok(assemble_jacobian(net, &trace, &sens))
}

/// Jacobian of the residual `t - y`; the negative of [`output_jacobian`].
pub fn jacobian(net: &Mlp, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(-output_jacobian(net, x)?)
}

fn assemble_jacobian(net: &Mlp, trace: &ForwardTrace, sens: &[DMatrix<f64>]) -> DMatrix<f64> {
    let n_out = net.n_outputs();
    let rows = trace.act[0].ncols() * n_out;
    let mut j = DMatrix::zeros(rows, net.n_params());
    let mut offset = 0;
    for (l, layer) in net.layers.iter().enumerate() {
        let a = &trace.act[l];
        let (h, n_in) = layer.weights.shape();
        for r in 0..rows {
            let s = r / n_out;
            for u in 0..h {
                let d = sens[l][(u, r)];
                if d == 0.0 {
                    continue;
                }
                let base = offset + u * n_in;
                for k in 0..n_in {
                    j[(r, base + k)] = d * a[(k, s)];
                }
            }
        }
        offset += h * n_in;
        for r in 0..rows {
            for u in 0..h {
                j[(r, offset + u)] = sens[l][(u, r)];
            }
        }
        offset += h;
    }
    j
}

fn expand_samples(g: &DMatrix<f64>, n_out: usize) -> DMatrix<f64> {
    if n_out == 1 {
        return g.clone();
    }
    let rows = g.nrows() * n_out;
    DMatrix::from_fn(rows, rows, |r, c| g[(r / n_out, c / n_out)])
}

/// `JJ'` from sensitivities: sum over layers of
/// `(D_l' D_l) o (A_{l-1}' A_{l-1} + 1)`.
fn row_gram(net: &Mlp, trace: &ForwardTrace, sens: &[DMatrix<f64>], input_gram: &DMatrix<f64>) -> DMatrix<f64> {
    let n_out = net.n_outputs();
    let rows = sens[0].ncols();
    let mut k = DMatrix::zeros(rows, rows);
    for l in 0..net.layers.len() {
        let mut act_gram = if l == 0 {
            input_gram.clone()
        } else {
            gram_tr(&trace.act[l])
        };
        act_gram.add_scalar_mut(1.0);
        let sens_gram = gram_tr(&sens[l]);
        k += sens_gram.component_mul(&expand_samples(&act_gram, n_out));
    }
    k
}

/// Rough per-iteration flop counts `(primal, dual)` used to pick a route.
/// With `gram_cached` the input Gram is treated as amortized over the run.
pub fn route_costs(sizes: &[usize], rows: usize, gram_cached: bool) -> (f64, f64) {
    let n: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
    let (n, r) = (n as f64, rows as f64);
    let primal = r * n * n + 2.0 * n.powi(3) / 3.0;
    let mut width = 0.0;
    for (l, w) in sizes.windows(2).enumerate() {
        width += w[1] as f64;
        if l > 0 || !gram_cached {
            width += w[0] as f64;
        }
    }
    let dual = r * r * width + 2.0 * r.powi(3) / 3.0;
    (primal, dual)
}

/// Linear system prepared once per iteration and re-solved for each damping.
enum System {
    Primal { h: DMatrix<f64>, g: DVector<f64> },
    Dual {
        k: DMatrix<f64>,
        e: DVector<f64>,
        trace: ForwardTrace,
        sens: Vec<DMatrix<f64>>,
    },
}

impl System {
    fn build(net: &Mlp, batch: &Batch, trace: ForwardTrace, e: DVector<f64>, route: Route) -> (Self, Route) {
        let route = match route {
            Route::Auto => {
                let (p, d) = route_costs(&net.sizes(), e.len(), true);
                if d < p {
                    Route::Dual
                } else {
                    Route::Primal
                }
            }
            r => r,
        };
        let sens = sensitivities(net, &trace);
        match route {
            Route::Dual => {
                let k = row_gram(net, &trace, &sens, batch.input_gram());
                (System::Dual { k, e, trace, sens }, route)
            }
            _ => {
                let j = assemble_jacobian(net, &trace, &sens);
                let h = gram_tr(&j);
                let g = j.tr_mul(&e);
                (System::Primal { h, g }, Route::Primal)
            }
        }
    }

    fn solve(&self, net: &Mlp, mu: f64) -> Option<Vec<f64>> {
        match self {
            System::Primal { h, g } => {
                let mut a = h.clone();
                for i in 0..a.nrows() {
                    a[(i, i)] += mu;
                }
                let l = cholesky(a)?;
                Some(cholesky_solve(&l, g).iter().copied().collect())
            }
            System::Dual { k, e, trace, sens } => {
                let mut a = k.clone();
                for i in 0..a.nrows() {
                    a[(i, i)] += mu;
                }
                let alpha = cholesky_solve(&cholesky(a)?, e);
                Some(dual_step(net, trace, sens, &alpha))
            }
        }
    }
}

/// `J' alpha` without forming `J`.
fn dual_step(net: &Mlp, trace: &ForwardTrace, sens: &[DMatrix<f64>], alpha: &DVector<f64>) -> Vec<f64> {
    let n_out = net.n_outputs();
    let m = trace.act[0].ncols();
    let mut flat = Vec::with_capacity(net.n_params());
    for (l, layer) in net.layers.iter().enumerate() {
        let h = layer.n_out();
        let mut s = DMatrix::zeros(h, m);
        for (r, col) in sens[l].column_iter().enumerate() {
            let mut dst = s.column_mut(r / n_out);
            dst.axpy(alpha[r], &col, 1.0);
        }
        let dw = &s * trace.act[l].transpose();
        for j in 0..h {
            flat.extend(dw.row(j).iter());
        }
        flat.extend(s.row_iter().map(|r| r.sum()));
    }
    flat
}

fn residual(y: &DMatrix<f64>, t: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice((t - y).as_slice())
}

/// Undamped-to-damped direction for a fixed `mu` (testing and diagnostics).
pub fn lm_direction(net: &Mlp, batch: &Batch, mu: f64, route: Route) -> Result<Vec<f64>> {
    let trace = net.trace(&batch.x)?;
    check_targets(trace.output(), &batch.t)?;
    let e = residual(trace.output(), &batch.t);
    let (sys, _) = System::build(net, batch, trace, e, route);
    sys.solve(net, mu)
        .ok_or_else(|| Error::SolveFailure(format!("damped system not positive definite at mu={mu}")))
}

/// One LM iteration. The damping grows until the batch MSE strictly drops or
/// `mu_max` is exceeded; in the latter case the network is left unchanged.
pub fn lm_step(net: &mut Mlp, batch: &Batch, cfg: &LmConfig, state: &mut LmState) -> Result<StepReport> {
    let trace = net.trace(&batch.x)?;
    check_targets(trace.output(), &batch.t)?;
    let count = batch.t.len().max(1) as f64;
    let e = residual(trace.output(), &batch.t);
    let mse_before = e.norm_squared() / count;
    let (sys, route) = System::build(net, batch, trace, e, cfg.route);

    state.mu = state.mu.clamp(f64::MIN_POSITIVE, cfg.mu_max);
    while state.mu <= cfg.mu_max {
        if let Some(delta) = sys.solve(net, state.mu) {
            if delta.iter().all(|v| v.is_finite()) {
                let mut cand = net.clone();
                cand.add_params(&delta, 1.0);
                let mse_after = cand.mse(&batch.x, &batch.t)?;
                if mse_after < mse_before {
                    *net = cand;
                    let mu = state.mu;
                    state.mu = (state.mu * cfg.mu_dec).max(f64::MIN_POSITIVE);
                    state.consecutive_mu_max = 0;
                    return Ok(StepReport {
                        accepted: true,
                        mse_before,
                        mse_after,
                        mu,
                        route,
                    });
                }
            }
        }
        state.mu *= cfg.mu_inc;
    }
    state.consecutive_mu_max += 1;
    let mu = state.mu;
    state.mu = cfg.mu_max;
    Ok(StepReport {
        accepted: false,
        mse_before,
        mse_after: mse_before,
        mu,
        route,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ann::mlp::Activation;
    use proptest::prelude::*;

    fn numeric_jacobian(net: &Mlp, x: &DMatrix<f64>) -> DMatrix<f64> {
        let p = net.params();
        let y0 = net.forward_batch(x).unwrap();
        let mut j = DMatrix::zeros(y0.len(), p.len());
        let h = 1e-6;
        for i in 0..p.len() {
            let mut plus = net.clone();
            let mut minus = net.clone();
            let mut pp = p.clone();
            pp[i] += h;
            plus.set_params(&pp).unwrap();
            pp[i] -= 2.0 * h;
            minus.set_params(&pp).unwrap();
            let d = (plus.forward_batch(x).unwrap() - minus.forward_batch(x).unwrap()) / (2.0 * h);
            for (r, v) in d.as_slice().iter().enumerate() {
                j[(r, i)] = *v;
            }
        }
        j
    }

    fn sample_batch(n_in: usize, m: usize, seed: u64) -> DMatrix<f64> {
        let net = Mlp::new(&[1, n_in * m], Activation::Tanh, Activation::Identity, seed).unwrap();
        let v = net.layers[0].weights.iter().map(|w| 3.0 * w).collect::<Vec<_>>();
        DMatrix::from_column_slice(n_in, m, &v)
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        for (sizes, out) in [
            (vec![3, 4, 1], Activation::Identity),
            (vec![2, 5, 3, 2], Activation::Identity),
            (vec![3, 4, 2], Activation::Sigmoid),
        ] {
            let net = Mlp::new(&sizes, Activation::Tanh, out, 7).unwrap();
            let x = sample_batch(sizes[0], 6, 11);
            let j = output_jacobian(&net, &x).unwrap();
            let num = numeric_jacobian(&net, &x);
            assert_eq!(j.shape(), num.shape());
            assert!((&j - &num).abs().max() < 1e-6, "{sizes:?}");
            let neg = jacobian(&net, &x).unwrap();
            assert!((neg + &j).abs().max() == 0.0);
        }
    }

    #[test]
    fn linear_jacobian_is_inputs_and_duplicates_repeat() {
        let net = Mlp::new(&[3, 1], Activation::Tanh, Activation::Identity, 5).unwrap();
        let x = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 1.0, -0.5, 0.0, -0.5, 3.0, 0.25, 3.0]);
        let j = output_jacobian(&net, &x).unwrap();
        for r in 0..3 {
            for k in 0..3 {
                assert_eq!(j[(r, k)], x[(k, r)]);
            }
            assert_eq!(j[(r, 3)], 1.0);
        }
        let net = Mlp::new(&[3, 4, 1], Activation::Tanh, Activation::Identity, 5).unwrap();
        let j = jacobian(&net, &x).unwrap();
        assert_eq!(j.row(0), j.row(2));
    }

    #[test]
    fn structured_row_gram_matches_dense() {
        let net = Mlp::new(&[3, 6, 4, 2], Activation::Tanh, Activation::Identity, 2).unwrap();
        let x = sample_batch(3, 5, 4);
        let trace = net.trace(&x).unwrap();
        let sens = sensitivities(&net, &trace);
        let k = row_gram(&net, &trace, &sens, &x.tr_mul(&x));
        let j = output_jacobian(&net, &x).unwrap();
        assert!((k - &j * j.transpose()).abs().max() < 1e-10);
    }

    #[test]
    fn linear_problem_one_step_to_least_squares() {
        // Identity-output single layer: LM with tiny damping lands on the
        // normal-equation solution in one step.
        let x = DMatrix::from_row_slice(2, 6, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 1.0, -1.0, 0.5, 0.2, -0.3, 0.8]);
        let t = DMatrix::from_row_slice(1, 6, &[1.0, 2.9, 5.2, 7.1, 8.8, 11.2]);
        let mut net = Mlp::zeros(&[2, 1], Activation::Tanh, Activation::Identity).unwrap();
        let batch = Batch::new(x.clone(), t.clone()).unwrap();
        let cfg = LmConfig {
            mu0: 1e-12,
            ..LmConfig::default()
        };
        let mut st = LmState::new(&cfg);
        let rep = lm_step(&mut net, &batch, &cfg, &mut st).unwrap();
        assert!(rep.accepted);
        // Oracle: explicit normal equations on [x1 x2 1].
        let a = DMatrix::from_fn(6, 3, |r, c| if c < 2 { x[(c, r)] } else { 1.0 });
        let b = DVector::from_iterator(6, t.iter().copied());
        let sol = (a.transpose() * &a).try_inverse().unwrap() * a.transpose() * b;
        let p = net.params();
        for i in 0..3 {
            assert!((p[i] - sol[i]).abs() < 1e-8, "{p:?} vs {sol}");
        }
    }

    /// Hand-rolled LM on `y = v*tanh(w*x + b) + c` with analytic derivatives
    /// and 4x4 Gaussian elimination.
    fn scalar_oracle(theta0: [f64; 4], xs: &[f64], ts: &[f64], iters: usize) -> Vec<(f64, f64)> {
        let model = |th: &[f64; 4], x: f64| th[2] * (th[0] * x + th[1]).tanh() + th[3];
        let mse = |th: &[f64; 4]| {
            xs.iter().zip(ts).map(|(x, t)| (t - model(th, *x)).powi(2)).sum::<f64>() / xs.len() as f64
        };
        let mut th = theta0;
        let mut mu = 1e-3;
        let mut out = Vec::new();
        for _ in 0..iters {
            let mut h = [[0.0; 4]; 4];
            let mut g = [0.0; 4];
            for (x, t) in xs.iter().zip(ts) {
                let a = (th[0] * x + th[1]).tanh();
                let d = 1.0 - a * a;
                let jr = [th[2] * d * x, th[2] * d, a, 1.0];
                let e = t - model(&th, *x);
                for i in 0..4 {
                    g[i] += jr[i] * e;
                    for k in 0..4 {
                        h[i][k] += jr[i] * jr[k];
                    }
                }
            }
            let m0 = mse(&th);
            loop {
                let mut a = h;
                let mut b = g;
                for (i, row) in a.iter_mut().enumerate() {
                    row[i] += mu;
                }
                for c in 0..4 {
                    for r in c + 1..4 {
                        let f = a[r][c] / a[c][c];
                        for k in c..4 {
                            a[r][k] -= f * a[c][k];
                        }
                        b[r] -= f * b[c];
                    }
                }
                let mut d = [0.0; 4];
                for r in (0..4).rev() {
                    let s: f64 = (r + 1..4).map(|k| a[r][k] * d[k]).sum();
                    d[r] = (b[r] - s) / a[r][r];
                }
                let cand = [th[0] + d[0], th[1] + d[1], th[2] + d[2], th[3] + d[3]];
                if mse(&cand) < m0 {
                    th = cand;
                    out.push((mu, mse(&th)));
                    mu *= 0.1;
                    break;
                }
                mu *= 10.0;
            }
        }
        out
    }

    #[test]
    fn matches_scalar_oracle_trace() {
        let xs: Vec<f64> = (0..20).map(|i| -1.0 + 0.1 * i as f64).collect();
        let ts: Vec<f64> = xs.iter().map(|x| (2.0 * x).sin()).collect();
        let theta0 = [0.3, -0.1, 0.5, 0.05];
        let oracle = scalar_oracle(theta0, &xs, &ts, 7);
        for route in [Route::Primal, Route::Auto] {
            let mut net = Mlp::zeros(&[1, 1, 1], Activation::Tanh, Activation::Identity).unwrap();
            net.set_params(&theta0).unwrap();
            let batch = Batch::new(
                DMatrix::from_row_slice(1, xs.len(), &xs),
                DMatrix::from_row_slice(1, ts.len(), &ts),
            )
            .unwrap();
            let cfg = LmConfig {
                route,
                ..LmConfig::default()
            };
            let mut st = LmState::new(&cfg);
            for (mu, m) in &oracle {
                let rep = lm_step(&mut net, &batch, &cfg, &mut st).unwrap();
                assert!(rep.accepted);
                assert!((rep.mu / mu - 1.0).abs() < 1e-9, "{route:?}");
                assert!((rep.mse_after - m).abs() <= 1e-9 * m.max(1e-12), "{route:?} {} {}", rep.mse_after, m);
            }
        }
    }

    #[test]
    fn stuck_problem_counts_mu_max_iterations() {
        // Zero inputs and balanced +-1 targets: the gradient vanishes, so no
        // step can lower the error.
        let x = DMatrix::zeros(2, 4);
        let t = DMatrix::from_row_slice(1, 4, &[1.0, -1.0, 1.0, -1.0]);
        let mut net = Mlp::zeros(&[2, 1], Activation::Tanh, Activation::Identity).unwrap();
        let batch = Batch::new(x, t).unwrap();
        let cfg = LmConfig::default();
        let mut st = LmState::new(&cfg);
        for i in 1..=3 {
            let rep = lm_step(&mut net, &batch, &cfg, &mut st).unwrap();
            assert!(!rep.accepted);
            assert_eq!(st.consecutive_mu_max, i);
            assert_eq!(st.mu, cfg.mu_max);
        }
    }

    #[test]
    fn route_costs_prefer_dual_for_wide_nets() {
        let (p, d) = route_costs(&[1024, 10, 10, 1], 300, true);
        assert!(d < p);
        let (p, d) = route_costs(&[2, 20, 20, 1], 5000, false);
        assert!(p < d);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn primal_and_dual_directions_agree(seed in 0u64..1000, m in 2usize..9, mu_exp in -4i32..2) {
            let net = Mlp::new(&[3, 4, 3, 1], Activation::Tanh, Activation::Identity, seed).unwrap();
            let x = sample_batch(3, m, seed + 1);
            let t = DMatrix::from_fn(1, m, |_, c| ((c as f64) * 0.7 + seed as f64).sin());
            let batch = Batch::new(x, t).unwrap();
            let mu = 10f64.powi(mu_exp);
            let p = lm_direction(&net, &batch, mu, Route::Primal).unwrap();
            let d = lm_direction(&net, &batch, mu, Route::Dual).unwrap();
            let scale = p.iter().map(|v| v.abs()).fold(1.0, f64::max);
            for (a, b) in p.iter().zip(&d) {
                prop_assert!((a - b).abs() < 1e-7 * scale);
            }
        }

        #[test]
        fn accepted_steps_never_raise_mse(seed in 0u64..1000) {
            let mut net = Mlp::new(&[2, 5, 1], Activation::Tanh, Activation::Identity, seed).unwrap();
            let x = sample_batch(2, 12, seed + 3);
            let t = DMatrix::from_fn(1, 12, |_, c| (c as f64 * 0.4).cos());
            let batch = Batch::new(x, t).unwrap();
            let cfg = LmConfig::default();
            let mut st = LmState::new(&cfg);
            let mut last = net.mse(&batch.x, &batch.t).unwrap();
            for _ in 0..10 {
                let rep = lm_step(&mut net, &batch, &cfg, &mut st).unwrap();
                prop_assert!(rep.mse_after <= last);
                prop_assert!(st.mu > 0.0 && st.mu <= cfg.mu_max);
                last = rep.mse_after;
            }
        }
    }
}
