//! Per-transmitter hardware impairment chain.
//!
//! Order is fixed: IQ imbalance, AM/AM cubic nonlinearity, carrier rotation
//! (per-packet carrier phase plus CFO), phase-noise random walk, DC offset,
//! AWGN.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Complex number in manifests and profile files.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Cplx {
    pub re: f64,
    pub im: f64,
}

impl From<Cplx> for Complex64 {
    fn from(c: Cplx) -> Self {
        Complex64::new(c.re, c.im)
    }
}

/// Hardware signature of one transmitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransmitterProfile {
    pub radio_id: String,
    /// Transmitter number on the radio (1 or 2).
    pub tx_index: u32,
    /// Relative gain error of the Q branch.
    pub iq_gain_imbalance: f64,
    /// Radians.
    pub iq_phase_imbalance: f64,
    /// Hz.
    pub carrier_freq_offset: f64,
    /// Lorentzian linewidth of the PLL, Hz.
    pub phase_noise_bw: f64,
    /// Cubic AM/AM coefficient; negative compresses.
    pub amam_cubic_coeff: f64,
    pub dc_offset: Cplx,
    pub shared_osc_group: u32,
}

impl TransmitterProfile {
    /// Profile with every impairment switched off.
    pub fn ideal(radio_id: &str, tx_index: u32, group: u32) -> Self {
        Self {
            radio_id: radio_id.to_string(),
            tx_index,
            iq_gain_imbalance: 0.0,
            iq_phase_imbalance: 0.0,
            carrier_freq_offset: 0.0,
            phase_noise_bw: 0.0,
            amam_cubic_coeff: 0.0,
            dc_offset: Cplx::default(),
            shared_osc_group: group,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason: &str| {
            Err(Error::InvalidProfile {
                radio_id: self.radio_id.clone(),
                tx_index: self.tx_index,
                reason: reason.to_string(),
            })
        };
        let fields = [
            self.iq_gain_imbalance,
            self.iq_phase_imbalance,
            self.carrier_freq_offset,
            self.phase_noise_bw,
            self.amam_cubic_coeff,
            self.dc_offset.re,
            self.dc_offset.im,
        ];
        if fields.iter().any(|v| !v.is_finite()) {
            return fail("non-finite impairment value");
        }
        if self.radio_id.is_empty() || self.radio_id.contains('_') {
            return fail("radio_id must be non-empty and contain no '_'");
        }
        if !(1..=2).contains(&self.tx_index) {
            return fail("tx_index must be 1 or 2");
        }
        if self.amam_cubic_coeff.abs() >= 1.0 {
            return fail("|amam_cubic_coeff| must be < 1");
        }
        if self.iq_gain_imbalance <= -1.0 {
            return fail("iq_gain_imbalance must be > -1");
        }
        if self.iq_phase_imbalance.abs() >= PI / 2.0 {
            return fail("|iq_phase_imbalance| must be < pi/2");
        }
        if self.phase_noise_bw < 0.0 {
            return fail("phase_noise_bw must be >= 0");
        }
        Ok(())
    }

    /// Short content hash recorded in corpus manifests.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("profile serializes");
        let digest = Sha256::digest(json.as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn label_name(&self) -> String {
        format!("{}_Tx{}", self.radio_id, self.tx_index)
    }
}

pub fn iq_imbalance(x: &mut [Complex64], gain: f64, phase: f64) {
    let g = 1.0 + gain;
    let k1 = (Complex64::new(1.0, 0.0) + Complex64::from_polar(g, -phase)) * 0.5;
    let k2 = (Complex64::new(1.0, 0.0) - Complex64::from_polar(g, phase)) * 0.5;
    for z in x.iter_mut() {
        *z = k1 * *z + k2 * z.conj();
    }
}

pub fn amam_cubic(x: &mut [Complex64], coeff: f64) {
    for z in x.iter_mut() {
        *z *= 1.0 + coeff * z.norm_sqr();
    }
}

/// Rotate by `phase0 + 2*pi*cfo*n/rate` at sample `n`.
pub fn carrier_rotation(x: &mut [Complex64], phase0: f64, cfo: f64, rate: f64) {
    let step = 2.0 * PI * cfo / rate;
    for (n, z) in x.iter_mut().enumerate() {
        *z *= Complex64::from_polar(1.0, phase0 + step * n as f64);
    }
}

/// Wiener phase noise with per-sample increment variance `2*pi*bw/rate`.
pub fn phase_noise(x: &mut [Complex64], bw: f64, rate: f64, rng: &mut impl Rng) {
    if bw == 0.0 {
        return;
    }
    let sigma = (2.0 * PI * bw / rate).sqrt();
    let mut theta = 0.0f64;
    for z in x.iter_mut() {
        let step: f64 = rng.sample(StandardNormal);
        theta += sigma * step;
        *z *= Complex64::from_polar(1.0, theta);
    }
}

pub fn dc_offset(x: &mut [Complex64], c: Complex64) {
    for z in x.iter_mut() {
        *z += c;
    }
}

/// Complex AWGN with total variance `power`.
pub fn awgn(x: &mut [Complex64], power: f64, rng: &mut impl Rng) {
    let sigma = (power / 2.0).sqrt();
    for z in x.iter_mut() {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *z += Complex64::new(sigma * re, sigma * im);
    }
}
