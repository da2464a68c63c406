//! Morlet continuous wavelet transform, scalograms and corpus variance maps.
//!
//! Coefficients follow `W(a, b) = a^{-1/2} sum_t v(t) conj(psi((t - b) / a))`
//! over the sample grid, with the signal zero outside `0..n`. The fast path
//! evaluates the same finite sum as a zero-padded FFT convolution.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MorletParams {
    pub xi0: f64,
    pub n_scales: usize,
    pub scale_min: f64,
    pub scale_max: f64,
}

impl MorletParams {
    /// 128 log-spaced scales covering digital periods 2 to `n/2`.
    pub fn for_length(n: usize) -> Self {
        let xi0 = 6.0;
        let to_scale = |period: f64| period * xi0 / (2.0 * PI);
        Self {
            xi0,
            n_scales: 128,
            scale_min: to_scale(2.0),
            scale_max: to_scale((n as f64 / 2.0).max(4.0)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_scales == 0
            || !(self.scale_min > 0.0)
            || !(self.scale_max > self.scale_min)
            || !self.xi0.is_finite()
            || !self.scale_max.is_finite()
        {
            return Err(Error::InvalidParameter(format!("bad Morlet parameters {self:?}")));
        }
        Ok(())
    }

    /// Ascending scale grid.
    pub fn scales(&self) -> Vec<f64> {
        if self.n_scales == 1 {
            return vec![self.scale_min];
        }
        let ratio = (self.scale_max / self.scale_min).ln() / (self.n_scales - 1) as f64;
        (0..self.n_scales)
            .map(|i| self.scale_min * (ratio * i as f64).exp())
            .collect()
    }

    /// Relative spacing of the log grid.
    pub fn grid_step(&self) -> f64 {
        if self.n_scales < 2 {
            return 0.0;
        }
        ((self.scale_max / self.scale_min).ln() / (self.n_scales - 1) as f64).exp() - 1.0
    }
}

/// `pi^{-1/4} (e^{-i xi0 t} - e^{-xi0^2/2}) e^{-t^2/2}`.
pub fn morlet(t: f64, xi0: f64) -> Complex64 {
    let osc = Complex64::from_polar(1.0, -xi0 * t) - (-xi0 * xi0 / 2.0).exp();
    osc * (PI.powf(-0.25) * (-t * t / 2.0).exp())
}

/// Direct evaluation of the finite sum; `n_scales x n` complex, row per scale.
pub fn cwt_direct(v: &[f64], params: &MorletParams) -> Result<Vec<Vec<Complex64>>> {
    params.validate()?;
    if v.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            available: v.len(),
        });
    }
    let n = v.len();
    Ok(params
        .scales()
        .iter()
        .map(|&a| {
            let norm = a.powf(-0.5);
            (0..n)
                .map(|b| {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for (t, vt) in v.iter().enumerate() {
                        acc += morlet((t as f64 - b as f64) / a, params.xi0).conj() * *vt;
                    }
                    acc * norm
                })
                .collect()
        })
        .collect())
}

/// Precomputed kernel spectra for one input length.
pub struct CwtPlan {
    n: usize,
    params: MorletParams,
    scales: Vec<f64>,
    kernels: Vec<Vec<Complex64>>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for CwtPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CwtPlan")
            .field("n", &self.n)
            .field("params", &self.params)
            .finish()
    }
}

impl CwtPlan {
    pub fn new(n: usize, params: &MorletParams) -> Result<Self> {
        params.validate()?;
        if n < 2 {
            return Err(Error::TooShort { needed: 2, available: n });
        }
        let len = (2 * n).next_power_of_two();
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(len);
        let inv = planner.plan_fft_inverse(len);
        let scales = params.scales();
        let kernels = scales
            .iter()
            .map(|&a| {
                // h(u) = a^{-1/2} conj(psi(-u / a)) at lags -(n-1)..=(n-1).
                let norm = a.powf(-0.5);
                let mut h = vec![Complex64::new(0.0, 0.0); len];
                for u in -(n as i64 - 1)..=(n as i64 - 1) {
                    let idx = u.rem_euclid(len as i64) as usize;
                    h[idx] = morlet(-(u as f64) / a, params.xi0).conj() * norm;
                }
                fwd.process(&mut h);
                let scale = 1.0 / len as f64;
                h.iter_mut().for_each(|z| *z *= scale);
                h
            })
            .collect();
        Ok(Self {
            n,
            params: params.clone(),
            scales,
            kernels,
            fwd,
            inv,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn params(&self) -> &MorletParams {
        &self.params
    }

    fn check(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.n {
            return Err(Error::ShapeMismatch(format!(
                "signal of length {} for a plan of length {}",
                v.len(),
                self.n
            )));
        }
        Ok(())
    }

    /// Visit each scale's coefficient row in ascending scale order.
    fn for_each_row(&self, v: &[f64], mut f: impl FnMut(usize, &[Complex64])) -> Result<()> {
        self.check(v)?;
        let len = self.kernels[0].len();
        let mut spec: Vec<Complex64> = v.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        spec.resize(len, Complex64::new(0.0, 0.0));
        self.fwd.process(&mut spec);
        let mut buf = vec![Complex64::new(0.0, 0.0); len];
        for (i, k) in self.kernels.iter().enumerate() {
            for ((b, s), h) in buf.iter_mut().zip(&spec).zip(k) {
                *b = s * h;
            }
            self.inv.process(&mut buf);
            f(i, &buf[..self.n]);
        }
        Ok(())
    }

    /// Complex coefficients, one row per scale.
    pub fn transform(&self, v: &[f64]) -> Result<Vec<Vec<Complex64>>> {
        let mut out = Vec::with_capacity(self.scales.len());
        self.for_each_row(v, |_, row| out.push(row.to_vec()))?;
        Ok(out)
    }

    /// `|W(a, b)|` as an `n_scales x n` matrix.
    pub fn scalogram(&self, v: &[f64]) -> Result<DMatrix<f64>> {
        let mut s = DMatrix::zeros(self.scales.len(), self.n);
        self.for_each_row(v, |i, row| {
            for (b, z) in row.iter().enumerate() {
                s[(i, b)] = z.norm();
            }
        })?;
        Ok(s)
    }

    /// Number of edge columns on each side affected by the zero padding,
    /// taken as the e-folding width `sqrt(2) a` of the envelope.
    pub fn cone_of_influence(&self) -> Vec<usize> {
        self.scales
            .iter()
            .map(|a| ((2f64.sqrt() * a).ceil() as usize).min(self.n))
            .collect()
    }
}

/// One-shot transform through a fresh plan.
pub fn cwt(v: &[f64], params: &MorletParams) -> Result<Vec<Vec<Complex64>>> {
    CwtPlan::new(v.len(), params)?.transform(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Magnitude,
    /// Cosine of the four-quadrant phase; `0 + 0i` maps to 1.
    CosPhase,
    Real,
    Imag,
}

impl Channel {
    pub const ALL: [Channel; 4] = [Channel::Magnitude, Channel::CosPhase, Channel::Real, Channel::Imag];

    pub fn name(self) -> &'static str {
        match self {
            Channel::Magnitude => "magnitude",
            Channel::CosPhase => "cos_phase",
            Channel::Real => "real",
            Channel::Imag => "imag",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Channel::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown channel {s:?}")))
    }
}

pub fn channel_select(g: &[Complex64], kind: Channel) -> Vec<f64> {
    g.iter()
        .map(|z| match kind {
            Channel::Magnitude => z.norm(),
            Channel::CosPhase => z.im.atan2(z.re).cos(),
            Channel::Real => z.re,
            Channel::Imag => z.im,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceMap {
    pub var: DMatrix<f64>,
    pub mean: DMatrix<f64>,
    pub count: usize,
}

/// Streaming per-pixel mean and sample variance, accumulated in push order.
#[derive(Debug, Clone)]
pub struct VarianceAccumulator {
    mean: DMatrix<f64>,
    m2: DMatrix<f64>,
    count: usize,
}

impl VarianceAccumulator {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            mean: DMatrix::zeros(rows, cols),
            m2: DMatrix::zeros(rows, cols),
            count: 0,
        }
    }

    pub fn push(&mut self, s: &DMatrix<f64>) -> Result<()> {
        if s.shape() != self.mean.shape() {
            return Err(Error::ShapeMismatch(format!(
                "scalogram {:?} vs {:?}",
                s.shape(),
                self.mean.shape()
            )));
        }
        self.count += 1;
        let k = self.count as f64;
        for ((m, q), x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(s.iter()) {
            let d = x - *m;
            *m += d / k;
            *q += d * (x - *m);
        }
        Ok(())
    }

    pub fn finish(self) -> Result<VarianceMap> {
        if self.count < 2 {
            return Err(Error::InvalidParameter("variance needs at least two scalograms".into()));
        }
        let div = (self.count - 1) as f64;
        Ok(VarianceMap {
            var: self.m2.map(|q| (q / div).max(0.0)),
            mean: self.mean,
            count: self.count,
        })
    }
}

pub fn variance_map<'a>(scalograms: impl IntoIterator<Item = &'a DMatrix<f64>>) -> Result<VarianceMap> {
    let mut it = scalograms.into_iter().peekable();
    let first = it
        .peek()
        .ok_or_else(|| Error::InvalidParameter("no scalograms".into()))?;
    let mut acc = VarianceAccumulator::new(first.nrows(), first.ncols());
    for s in it {
        acc.push(s)?;
    }
    acc.finish()
}

pub fn difference_scalogram(s: &DMatrix<f64>, mean: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if s.shape() != mean.shape() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", s.shape(), mean.shape())));
    }
    Ok(s - mean)
}

/// Each trace minus the mean trace over all of them.
pub fn difference_timedomain(traces: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = traces.first().map(Vec::len).unwrap_or(0);
    if traces.iter().any(|t| t.len() != n) {
        return Err(Error::ShapeMismatch("traces differ in length".into()));
    }
    let mut mean = vec![0.0; n];
    for t in traces {
        for (m, x) in mean.iter_mut().zip(t) {
            *m += x;
        }
    }
    let k = traces.len().max(1) as f64;
    mean.iter_mut().for_each(|m| *m /= k);
    Ok(traces
        .iter()
        .map(|t| t.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect())
}

/// Fraction of pixels whose variance exceeds `frac` times the maximum.
pub fn sparsity(var: &DMatrix<f64>, frac: f64) -> f64 {
    let max = var.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 || var.is_empty() {
        return 0.0;
    }
    let thr = frac * max;
    var.iter().filter(|&&v| v > thr).count() as f64 / var.len() as f64
}

/// Header of a scalogram directory (`scalograms.json`); each entry's
/// matrix is `<name>.scal`, little-endian f64 in scale-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalogramHeader {
    pub rows: usize,
    pub cols: usize,
    pub channel: Channel,
    pub scales: Vec<f64>,
    pub entries: Vec<ScalogramEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalogramEntry {
    pub name: String,
    pub tx_label: u32,
    pub packet_id: u32,
}

pub const SCALOGRAM_HEADER: &str = "scalograms.json";

pub fn write_scalogram(dir: &Path, name: &str, s: &DMatrix<f64>) -> Result<()> {
    let mut bytes = Vec::with_capacity(s.len() * 8);
    for r in 0..s.nrows() {
        for c in 0..s.ncols() {
            bytes.extend_from_slice(&s[(r, c)].to_le_bytes());
        }
    }
    fs::write(dir.join(format!("{name}.scal")), bytes)?;
    Ok(())
}

pub fn read_scalogram(dir: &Path, header: &ScalogramHeader, entry: &ScalogramEntry) -> Result<DMatrix<f64>> {
    let bytes = fs::read(dir.join(format!("{}.scal", entry.name)))?;
    if bytes.len() != header.rows * header.cols * 8 {
        return Err(Error::Format(format!(
            "{}.scal has {} bytes, expected {}x{} f64",
            entry.name,
            bytes.len(),
            header.rows,
            header.cols
        )));
    }
    let v: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(DMatrix::from_row_slice(header.rows, header.cols, &v))
}

pub fn write_scalogram_header(dir: &Path, header: &ScalogramHeader) -> Result<()> {
    fs::write(dir.join(SCALOGRAM_HEADER), serde_json::to_string_pretty(header)?)?;
    Ok(())
}

pub fn read_scalogram_header(dir: &Path) -> Result<ScalogramHeader> {
    Ok(serde_json::from_str(&fs::read_to_string(dir.join(SCALOGRAM_HEADER))?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn signal(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed.wrapping_add(17);
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            })
            .collect()
    }

    fn max_rel(a: &[Vec<Complex64>], b: &[Vec<Complex64>]) -> f64 {
        let scale = b.iter().flatten().map(|z| z.norm()).fold(0.0, f64::max);
        a.iter()
            .flatten()
            .zip(b.iter().flatten())
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max)
            / scale
    }

    #[test]
    fn fast_matches_direct() {
        let v = signal(256, 1);
        let p = MorletParams::for_length(256);
        let fast = cwt(&v, &p).unwrap();
        let direct = cwt_direct(&v, &p).unwrap();
        assert!(max_rel(&fast, &direct) < 1e-8);
    }

    #[test]
    fn zero_signal_and_linearity() {
        let p = MorletParams::for_length(64);
        let plan = CwtPlan::new(64, &p).unwrap();
        assert!(plan.transform(&[0.0; 64]).unwrap().iter().flatten().all(|z| z.norm() == 0.0));
        let u = signal(64, 2);
        let w = signal(64, 3);
        let mix: Vec<f64> = u.iter().zip(&w).map(|(a, b)| 2.0 * a - 0.5 * b).collect();
        let (cu, cw, cm) = (plan.transform(&u).unwrap(), plan.transform(&w).unwrap(), plan.transform(&mix).unwrap());
        let comb: Vec<Vec<Complex64>> = cu
            .iter()
            .zip(&cw)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * 2.0 - y * 0.5).collect())
            .collect();
        assert!(max_rel(&cm, &comb) < 1e-10);
    }

    #[test]
    fn tone_peaks_at_matching_scale() {
        let n = 256;
        let p = MorletParams::for_length(n);
        let plan = CwtPlan::new(n, &p).unwrap();
        for period in [6.0, 11.0, 23.0] {
            let w = 2.0 * PI / period;
            let v: Vec<f64> = (0..n).map(|t| (w * t as f64).cos()).collect();
            let s = plan.scalogram(&v).unwrap();
            let col = n / 2;
            let best = (0..p.n_scales).max_by(|&i, &j| s[(i, col)].total_cmp(&s[(j, col)])).unwrap();
            let a = plan.scales()[best];
            assert!((a * w - p.xi0).abs() / p.xi0 < p.grid_step(), "period {period}: a={a}");

            // Dense-grid oracle on the direct sum.
            let dense = MorletParams {
                n_scales: 400,
                scale_min: a / 1.2,
                scale_max: a * 1.2,
                ..p.clone()
            };
            let d = cwt_direct(&v, &dense).unwrap();
            let scales = dense.scales();
            let ib = (0..400).max_by(|&i, &j| d[i][col].norm().total_cmp(&d[j][col].norm())).unwrap();
            assert!((scales[ib] / a - 1.0).abs() < p.grid_step());
        }
    }

    #[test]
    fn time_shift_moves_columns() {
        let n = 256;
        let p = MorletParams {
            scale_max: 8.0,
            ..MorletParams::for_length(n)
        };
        let plan = CwtPlan::new(n, &p).unwrap();
        let mut v = vec![0.0; n];
        v[100] = 1.0;
        v[110] = -0.5;
        let mut shifted = vec![0.0; n];
        shifted[107] = 1.0;
        shifted[117] = -0.5;
        let (a, b) = (plan.scalogram(&v).unwrap(), plan.scalogram(&shifted).unwrap());
        let edge = *plan.cone_of_influence().iter().max().unwrap();
        for col in edge..n - edge - 7 {
            for r in 0..p.n_scales {
                assert!((a[(r, col)] - b[(r, col + 7)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn channels() {
        let z = [Complex64::new(3.0, 4.0), Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0), Complex64::new(-2.0, 0.0)];
        assert_eq!(channel_select(&z, Channel::Magnitude)[0], 5.0);
        let c = channel_select(&z, Channel::CosPhase);
        assert_eq!(c[1], 1.0);
        assert!((c[2] - (PI / 2.0).cos()).abs() < 1e-15);
        assert_eq!(c[3], -1.0);
        assert_eq!(channel_select(&z, Channel::Imag)[0], 4.0);
        assert_eq!(Channel::parse("cos_phase").unwrap(), Channel::CosPhase);
    }

    #[test]
    fn variance_basics() {
        let a = DMatrix::from_element(2, 2, 0.0);
        let b = DMatrix::from_element(2, 2, 2.0);
        let vm = variance_map([&a, &b]).unwrap();
        assert_eq!(vm.var[(0, 0)], 2.0);
        assert_eq!(vm.mean[(1, 1)], 1.0);
        let same = variance_map([&b, &b, &b]).unwrap();
        assert!(same.var.iter().all(|&v| v == 0.0));
        assert!(variance_map([&a, &DMatrix::zeros(3, 2)]).is_err());
        assert!(difference_scalogram(&b, &b).unwrap().iter().all(|&v| v == 0.0));
        assert_eq!(difference_scalogram(&b, &DMatrix::zeros(2, 2)).unwrap(), b);
    }

    #[test]
    fn streaming_matches_two_pass_and_centers() {
        let maps: Vec<DMatrix<f64>> = (0..36).map(|k| DMatrix::from_vec(3, 5, signal(15, k))).collect();
        let vm = variance_map(&maps).unwrap();
        for idx in 0..15 {
            let xs: Vec<f64> = maps.iter().map(|m| m[idx]).collect();
            let mean = xs.iter().sum::<f64>() / 36.0;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 35.0;
            assert!((vm.mean[idx] - mean).abs() < 1e-12);
            assert!((vm.var[idx] - var).abs() < 1e-12);
        }
        let mut total = DMatrix::zeros(3, 5);
        for m in &maps {
            total += difference_scalogram(m, &vm.mean).unwrap();
        }
        assert!(total.iter().all(|v| v.abs() < 1e-9));
        let traces: Vec<Vec<f64>> = (0..10).map(|k| signal(20, k)).collect();
        let d = difference_timedomain(&traces).unwrap();
        for i in 0..20 {
            assert!(d.iter().map(|t| t[i]).sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn sparsity_counts_above_threshold() {
        let v = DMatrix::from_row_slice(1, 4, &[0.0, 0.05, 0.5, 1.0]);
        assert_eq!(sparsity(&v, 0.1), 0.5);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn scalogram_nonnegative_and_sign_invariant(seed in 0u64..500, n in 8usize..80) {
            let v = signal(n, seed);
            let p = MorletParams::for_length(n);
            let plan = CwtPlan::new(n, &p).unwrap();
            let s = plan.scalogram(&v).unwrap();
            let neg: Vec<f64> = v.iter().map(|x| -x).collect();
            let sn = plan.scalogram(&neg).unwrap();
            prop_assert!(s.iter().all(|x| *x >= 0.0 && x.is_finite()));
            prop_assert!((s - sn).abs().max() < 1e-12);
        }
    }

    #[test]
    fn scalogram_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = DMatrix::from_fn(3, 4, |r, c| r as f64 - 0.5 * c as f64);
        let entry = ScalogramEntry { name: "p1".into(), tx_label: 2, packet_id: 1 };
        let header = ScalogramHeader { rows: 3, cols: 4, channel: Channel::Real, scales: vec![1.0, 2.0, 4.0], entries: vec![entry.clone()] };
        write_scalogram(dir.path(), "p1", &m).unwrap();
        write_scalogram_header(dir.path(), &header).unwrap();
        let h = read_scalogram_header(dir.path()).unwrap();
        assert_eq!(h, header);
        assert_eq!(read_scalogram(dir.path(), &h, &entry).unwrap(), m);
        let bad = ScalogramHeader { rows: 2, ..h };
        assert!(read_scalogram(dir.path(), &bad, &entry).is_err());
    }
}
