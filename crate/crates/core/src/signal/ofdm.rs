//! Ideal OFDM burst modulation: QPSK payload grids, IFFT per symbol, cyclic
//! prefix, band-limited resampling to the capture rate and the leading
//! silence/ramp that precedes the burst.

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{Error, Result};
use crate::seed::derive_seed;

/// Fixed seed of the protocol preamble. Every packet of every transmitter
/// carries the same preamble symbols.
const PREAMBLE_SEED: u64 = 0x5052_4541_4d42_4c45;

/// Half-width (in baseband samples) of the windowed-sinc interpolator.
const RESAMPLE_HALF_WIDTH: usize = 16;

/// Protocol and capture constants of the synthesized waveform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfdmParams {
    pub subcarrier_count: usize,
    /// Hz.
    pub subcarrier_spacing: f64,
    /// Cyclic prefix length in baseband samples.
    pub cyclic_prefix: usize,
    /// Transmitter baseband rate, samples/s.
    pub baseband_rate: f64,
    /// Receiver capture rate, samples/s.
    pub capture_rate: f64,
    /// Captured samples per packet.
    pub packet_len: usize,
    /// Capture samples of silence before the burst ramp starts.
    pub silence_len: usize,
    /// Raised-cosine power-up ramp length, capture samples.
    pub ramp_len: usize,
    /// Known preamble symbols sent ahead of the payload.
    pub preamble_symbols: usize,
    /// RMS amplitude of the ideal burst.
    pub burst_rms: f64,
    /// Width (radians) of the uniform per-packet carrier phase between the
    /// transmitter and the capture receiver.
    pub carrier_phase_spread: f64,
}

impl Default for OfdmParams {
    fn default() -> Self {
        Self {
            subcarrier_count: 302,
            subcarrier_spacing: 3750.0,
            cyclic_prefix: 20,
            baseband_rate: 1.92e6,
            capture_rate: 5e6,
            packet_len: 10_000,
            silence_len: 400,
            ramp_len: 40,
            preamble_symbols: 2,
            burst_rms: 0.5,
            carrier_phase_spread: 0.0,
        }
    }
}

impl OfdmParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.subcarrier_count < 1 {
            return bad("subcarrier_count must be >= 1");
        }
        if !(self.subcarrier_spacing > 0.0 && self.baseband_rate > 0.0) {
            return bad("rates must be positive");
        }
        if !(self.capture_rate >= self.baseband_rate) {
            return bad("capture_rate must be >= baseband_rate");
        }
        if self.packet_len < 1 {
            return bad("packet_len must be >= 1");
        }
        if self.subcarrier_count >= self.fft_len() {
            return bad("subcarrier_count must be below the FFT length");
        }
        if self.silence_len >= self.packet_len {
            return bad("silence_len must be shorter than the packet");
        }
        if !(self.burst_rms > 0.0 && self.burst_rms.is_finite()) {
            return bad("burst_rms must be positive");
        }
        if !(self.carrier_phase_spread >= 0.0 && self.carrier_phase_spread.is_finite()) {
            return bad("carrier_phase_spread must be non-negative");
        }
        Ok(())
    }

    /// IFFT length implied by baseband rate and subcarrier spacing.
    pub fn fft_len(&self) -> usize {
        (self.baseband_rate / self.subcarrier_spacing).round() as usize
    }

    pub fn symbol_len(&self) -> usize {
        self.fft_len() + self.cyclic_prefix
    }

    pub fn burst_len(&self) -> usize {
        self.packet_len - self.silence_len
    }

    /// Baseband samples needed to cover the burst including interpolator tails.
    fn baseband_len_needed(&self) -> usize {
        let span = self.burst_len() as f64 * self.baseband_rate / self.capture_rate;
        span.ceil() as usize + RESAMPLE_HALF_WIDTH + 1
    }

    /// Payload (non-preamble) OFDM symbols per packet.
    pub fn payload_symbols(&self) -> usize {
        let total = self.baseband_len_needed().div_ceil(self.symbol_len());
        total.saturating_sub(self.preamble_symbols).max(1)
    }

    /// Signed subcarrier indices, DC excluded.
    fn subcarrier_bins(&self) -> Vec<isize> {
        let n = self.subcarrier_count as isize;
        let below = n / 2;
        let above = n - below;
        (-below..0).chain(1..=above).collect()
    }
}

/// QPSK symbols, one row per OFDM symbol, `subcarrier_count` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolGrid {
    pub symbols: Vec<Vec<Complex64>>,
}

fn qpsk_grid(rng: &mut impl Rng, rows: usize, cols: usize) -> SymbolGrid {
    let symbols = (0..rows)
        .map(|_| {
            (0..cols)
                .map(|_| {
                    let bits: u8 = rng.gen_range(0..4);
                    let re = if bits & 1 == 0 { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
                    let im = if bits & 2 == 0 { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
                    Complex64::new(re, im)
                })
                .collect()
        })
        .collect();
    SymbolGrid { symbols }
}

/// Pseudo-random QPSK payload for one packet. Deterministic per seed.
pub fn generate_payload(seed: u64, params: &OfdmParams) -> SymbolGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x7061_796c]));
    qpsk_grid(&mut rng, params.payload_symbols(), params.subcarrier_count)
}

/// The protocol preamble shared by all packets.
pub fn preamble(params: &OfdmParams) -> SymbolGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(PREAMBLE_SEED);
    qpsk_grid(&mut rng, params.preamble_symbols, params.subcarrier_count)
}

/// IFFT + cyclic prefix for each symbol row, concatenated at baseband rate.
fn modulate_baseband(grid: &SymbolGrid, params: &OfdmParams) -> Vec<Complex64> {
    let nfft = params.fft_len();
    let cp = params.cyclic_prefix;
    let bins = params.subcarrier_bins();
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(nfft);
    let scale = params.burst_rms / (params.subcarrier_count as f64).sqrt();

    let mut out = Vec::with_capacity(grid.symbols.len() * (nfft + cp));
    let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
    for row in &grid.symbols {
        buf.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
        for (&k, &s) in bins.iter().zip(row) {
            let idx = if k < 0 { (nfft as isize + k) as usize } else { k as usize };
            buf[idx] = s;
        }
        ifft.process(&mut buf);
        out.extend(buf[nfft - cp..].iter().map(|z| z * scale));
        out.extend(buf.iter().map(|z| z * scale));
    }
    out
}

fn blackman_sinc(x: f64, half_width: f64) -> f64 {
    if x.abs() >= half_width {
        return 0.0;
    }
    let sinc = if x == 0.0 { 1.0 } else { (PI * x).sin() / (PI * x) };
    let w = 0.42 + 0.5 * (PI * x / half_width).cos() + 0.08 * (2.0 * PI * x / half_width).cos();
    sinc * w
}

/// Band-limited interpolation from `from_rate` to `to_rate`, producing `len`
/// output samples starting at t = 0.
pub fn resample(x: &[Complex64], from_rate: f64, to_rate: f64, len: usize) -> Vec<Complex64> {
    let hw = RESAMPLE_HALF_WIDTH as isize;
    let ratio = from_rate / to_rate;
    (0..len)
        .map(|n| {
            let u = n as f64 * ratio;
            let base = u.floor() as isize;
            let mut acc = Complex64::new(0.0, 0.0);
            for k in (base - hw + 1)..=(base + hw) {
                if k < 0 || k as usize >= x.len() {
                    continue;
                }
                acc += x[k as usize] * blackman_sinc(u - k as f64, hw as f64);
            }
            acc
        })
        .collect()
}

/// Ideal captured packet: silence, then the ramped burst (preamble followed
/// by payload), `packet_len` samples at the capture rate.
pub fn modulate(payload: &SymbolGrid, params: &OfdmParams) -> Vec<Complex64> {
    let mut grid = preamble(params);
    grid.symbols.extend(payload.symbols.iter().cloned());
    let baseband = modulate_baseband(&grid, params);
    let burst = resample(
        &baseband,
        params.baseband_rate,
        params.capture_rate,
        params.burst_len(),
    );

    let mut out = vec![Complex64::new(0.0, 0.0); params.silence_len];
    out.extend(burst.into_iter().enumerate().map(|(i, z)| {
        if i < params.ramp_len {
            z * 0.5 * (1.0 - (PI * i as f64 / params.ramp_len as f64).cos())
        } else {
            z
        }
    }));
    out
}
