//! Packet synthesis through the impairment chain and labeled corpus assembly.

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::f64::consts::PI;

use super::impairments::{self, Cplx, TransmitterProfile};
use super::ofdm::{generate_payload, modulate, OfdmParams, SymbolGrid};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, label_seed, rng};

/// One captured packet.
#[derive(Debug, Clone, PartialEq)]
pub struct IqPacket {
    pub samples: Vec<Complex64>,
    /// 1-based transmitter label.
    pub tx_label: u32,
    /// 1-based packet number; equal numbers carry equal payloads.
    pub packet_id: u32,
    /// `<radio>_<tx>_<packet>`.
    pub name: String,
}

/// Per-packet random state that is not a property of the transmitter.
#[derive(Debug, Clone, Copy)]
pub struct PacketContext {
    pub tx_label: u32,
    pub packet_id: u32,
    /// Seeds the phase-noise and AWGN streams.
    pub noise_seed: u64,
    /// Initial carrier phase, radians.
    pub carrier_phase: f64,
}

/// Modulate `payload` and push it through the transmitter's impairment chain.
/// `noise_snr_db = f64::INFINITY` disables AWGN.
pub fn synthesize_packet(
    payload: &SymbolGrid,
    profile: &TransmitterProfile,
    params: &OfdmParams,
    noise_snr_db: f64,
    ctx: &PacketContext,
) -> Result<IqPacket> {
    profile.validate()?;
    params.validate()?;
    if noise_snr_db.is_nan() {
        return Err(Error::InvalidParameter("noise_snr_db is NaN".into()));
    }
    let mut x = modulate(payload, params);
    let mut noise_rng = rng(ctx.noise_seed, &[]);

    impairments::iq_imbalance(&mut x, profile.iq_gain_imbalance, profile.iq_phase_imbalance);
    impairments::amam_cubic(&mut x, profile.amam_cubic_coeff);
    impairments::carrier_rotation(
        &mut x,
        ctx.carrier_phase,
        profile.carrier_freq_offset,
        params.capture_rate,
    );
    impairments::phase_noise(
        &mut x[params.silence_len..],
        profile.phase_noise_bw,
        params.capture_rate,
        &mut noise_rng,
    );
    impairments::dc_offset(&mut x, profile.dc_offset.into());
    if noise_snr_db.is_finite() {
        let p = burst_power(&x, params);
        impairments::awgn(&mut x, p / 10f64.powf(noise_snr_db / 10.0), &mut noise_rng);
    }
    if x.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::InvalidProfile {
            radio_id: profile.radio_id.clone(),
            tx_index: profile.tx_index,
            reason: "impairment chain produced non-finite samples".into(),
        });
    }
    Ok(IqPacket {
        samples: x,
        tx_label: ctx.tx_label,
        packet_id: ctx.packet_id,
        name: format!("{}_{}_{}", profile.radio_id, profile.tx_index, ctx.packet_id),
    })
}

/// Mean power over the burst region (after the leading silence).
pub fn burst_power(x: &[Complex64], params: &OfdmParams) -> f64 {
    let body = &x[params.silence_len.min(x.len())..];
    body.iter().map(|z| z.norm_sqr()).sum::<f64>() / body.len().max(1) as f64
}

/// Settings that fully determine a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub profiles: Vec<TransmitterProfile>,
    pub packets_per_tx: usize,
    pub snr_db: f64,
    pub seed: u64,
    pub params: OfdmParams,
}

impl CorpusSpec {
    /// Frozen desk-scale corpus: 12 transmitters x 200 packets, 30 dB, seed 42.
    pub fn desk_default() -> Self {
        Self {
            profiles: default_profiles(),
            packets_per_tx: 200,
            snr_db: 30.0,
            seed: 42,
            params: default_params(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub tx_label: u32,
    pub packet_id: u32,
    pub payload_seed: u64,
    pub noise_seed: u64,
    pub profile_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub spec: CorpusSpec,
    /// `labels[t-1]` names transmitter label t.
    pub labels: Vec<String>,
    pub packets: Vec<ManifestEntry>,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub packets: Vec<IqPacket>,
    pub manifest: CorpusManifest,
}

impl Corpus {
    pub fn n_transmitters(&self) -> usize {
        self.manifest.labels.len()
    }
}

fn payload_seed(seed: u64, packet_id: u32) -> u64 {
    derive_seed(seed, &[label_seed("payload"), packet_id as u64])
}

/// Carrier phase drawn per (radio, packet): transmitters on one radio share
/// the oscillator and therefore the whole carrier term.
fn carrier_phase(seed: u64, radio_id: &str, packet_id: u32, spread: f64) -> f64 {
    if spread == 0.0 {
        return 0.0;
    }
    let mut r = rng(seed, &[label_seed("carrier"), label_seed(radio_id), packet_id as u64]);
    let u: f64 = r.gen();
    (u - 0.5) * spread.min(2.0 * PI)
}

/// Synthesize the same payload sequence through every profile. Labels follow
/// the order of `spec.profiles`, starting at 1.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    if spec.packets_per_tx < 1 {
        return Err(Error::InvalidParameter("packets_per_tx must be >= 1".into()));
    }
    if spec.profiles.is_empty() {
        return Err(Error::InvalidParameter("no transmitter profiles".into()));
    }
    spec.params.validate()?;
    let mut seen = HashSet::new();
    for p in &spec.profiles {
        p.validate()?;
        if !seen.insert((p.radio_id.clone(), p.tx_index)) {
            return Err(Error::DuplicateTransmitter {
                radio_id: p.radio_id.clone(),
                tx_index: p.tx_index,
            });
        }
    }
    check_shared_oscillators(&spec.profiles)?;

    let payloads: Vec<SymbolGrid> = (1..=spec.packets_per_tx as u32)
        .map(|m| generate_payload(payload_seed(spec.seed, m), &spec.params))
        .collect();

    let jobs: Vec<(usize, u32)> = (0..spec.profiles.len())
        .flat_map(|t| (1..=spec.packets_per_tx as u32).map(move |m| (t, m)))
        .collect();
    let packets = jobs
        .par_iter()
        .map(|&(t, m)| {
            let profile = &spec.profiles[t];
            let ctx = PacketContext {
                tx_label: t as u32 + 1,
                packet_id: m,
                noise_seed: derive_seed(spec.seed, &[label_seed("noise"), t as u64, m as u64]),
                carrier_phase: carrier_phase(
                    spec.seed,
                    &profile.radio_id,
                    m,
                    spec.params.carrier_phase_spread,
                ),
            };
            synthesize_packet(&payloads[m as usize - 1], profile, &spec.params, spec.snr_db, &ctx)
                .map(|p| (p, ctx.noise_seed))
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest = CorpusManifest {
        spec: spec.clone(),
        labels: spec.profiles.iter().map(|p| p.label_name()).collect(),
        packets: packets
            .iter()
            .map(|(p, noise_seed)| ManifestEntry {
                name: p.name.clone(),
                tx_label: p.tx_label,
                packet_id: p.packet_id,
                payload_seed: payload_seed(spec.seed, p.packet_id),
                noise_seed: *noise_seed,
                profile_hash: spec.profiles[p.tx_label as usize - 1].hash(),
            })
            .collect(),
    };
    Ok(Corpus {
        packets: packets.into_iter().map(|(p, _)| p).collect(),
        manifest,
    })
}

fn check_shared_oscillators(profiles: &[TransmitterProfile]) -> Result<()> {
    for a in profiles {
        for b in profiles {
            if a.radio_id == b.radio_id
                && (a.shared_osc_group != b.shared_osc_group
                    || a.carrier_freq_offset != b.carrier_freq_offset)
            {
                return Err(Error::InvalidProfile {
                    radio_id: a.radio_id.clone(),
                    tx_index: a.tx_index,
                    reason: "transmitters on one radio must share oscillator group and CFO".into(),
                });
            }
        }
    }
    Ok(())
}

/// Waveform constants of the frozen default corpus.
pub fn default_params() -> OfdmParams {
    OfdmParams {
        ramp_len: 8,
        ..OfdmParams::default()
    }
}

/// Twelve transmitters on six radios. The last one (Y10v2 Tx2) carries a
/// deliberately gross IQ and amplifier defect.
pub fn default_profiles() -> Vec<TransmitterProfile> {
    // radio, cfo (Hz), then per-tx (gain, phase, pn_bw, amam, dc)
    type Tx = (f64, f64, f64, f64, (f64, f64));
    let radios: [(&str, f64, Tx, Tx); 6] = [
        ("Y06v2", -420.0,
            (0.030, 0.020, 1.2, -0.15, (0.0012, -0.0009)),
            (-0.020, 0.035, 1.8, -0.225, (-0.0006, 0.0015))),
        ("R05v1", 310.0,
            (0.045, -0.015, 0.9, -0.1, (0.0018, 0.0006)),
            (0.010, -0.040, 1.5, -0.3, (-0.0012, -0.0012))),
        ("R04v1", 150.0,
            (-0.035, 0.010, 2.0, -0.175, (0.0003, 0.0018)),
            (0.025, 0.025, 1.1, -0.125, (0.0015, -0.0015))),
        ("R03v1", -260.0,
            (0.015, -0.030, 1.6, -0.25, (-0.0018, 0.0003)),
            (-0.040, -0.010, 1.3, -0.075, (0.0009, 0.0009))),
        ("Y04v2", 520.0,
            (0.050, 0.040, 1.0, -0.2, (-0.0009, -0.0018)),
            (-0.010, 0.015, 2.2, -0.275, (0.0006, -0.0003))),
        ("Y10v2", -90.0,
            (-0.025, -0.025, 1.4, -0.15, (0.0015, 0.0012)),
            (0.220, 0.150, 4.0, -0.75, (0.0045, -0.0036))),
    ];
    radios
        .iter()
        .enumerate()
        .flat_map(|(g, (radio, cfo, t1, t2))| {
            [(1u32, t1), (2u32, t2)].map(|(tx, &(gain, phase, pn, amam, dc))| TransmitterProfile {
                radio_id: radio.to_string(),
                tx_index: tx,
                iq_gain_imbalance: gain,
                iq_phase_imbalance: phase,
                carrier_freq_offset: *cfo,
                phase_noise_bw: pn,
                amam_cubic_coeff: amam,
                dc_offset: Cplx { re: dc.0, im: dc.1 },
                shared_osc_group: g as u32,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ideal_ctx() -> PacketContext {
        PacketContext {
            tx_label: 1,
            packet_id: 1,
            noise_seed: 9,
            carrier_phase: 0.0,
        }
    }

    #[test]
    fn identity_chain_reproduces_ideal_waveform() {
        let params = OfdmParams::default();
        let payload = generate_payload(3, &params);
        let ideal = modulate(&payload, &params);
        let profile = TransmitterProfile::ideal("R01", 1, 0);
        let pkt = synthesize_packet(&payload, &profile, &params, f64::INFINITY, &ideal_ctx()).unwrap();
        assert_eq!(pkt.samples, ideal);
        assert_eq!(pkt.name, "R01_1_1");
    }

    #[test]
    fn dc_offset_shifts_every_sample() {
        let params = OfdmParams::default();
        let payload = generate_payload(3, &params);
        let ideal = modulate(&payload, &params);
        let mut profile = TransmitterProfile::ideal("R01", 1, 0);
        profile.dc_offset = Cplx { re: 0.01, im: -0.02 };
        let pkt = synthesize_packet(&payload, &profile, &params, f64::INFINITY, &ideal_ctx()).unwrap();
        let c = Complex64::new(0.01, -0.02);
        for (y, x) in pkt.samples.iter().zip(&ideal) {
            assert!((y - x - c).norm() < 1e-15);
        }
    }

    #[test]
    fn cfo_advances_phase_per_sample() {
        // Phase-difference oracle: arg(y_{n+1} / x_{n+1}) - arg(y_n / x_n).
        let params = OfdmParams::default();
        let payload = generate_payload(4, &params);
        let ideal = modulate(&payload, &params);
        let mut profile = TransmitterProfile::ideal("R01", 1, 0);
        profile.carrier_freq_offset = 1234.0;
        let pkt = synthesize_packet(&payload, &profile, &params, f64::INFINITY, &ideal_ctx()).unwrap();
        let want = 2.0 * PI * 1234.0 / params.capture_rate;
        let start = params.silence_len + params.ramp_len;
        for n in start..start + 2000 {
            let r0 = pkt.samples[n] / ideal[n];
            let r1 = pkt.samples[n + 1] / ideal[n + 1];
            let d = (r1 / r0).arg();
            assert!((d - want).abs() < 1e-9, "n={n}: {d} vs {want}");
        }
    }

    #[test]
    fn non_finite_profile_rejected() {
        let params = OfdmParams::default();
        let payload = generate_payload(3, &params);
        let mut profile = TransmitterProfile::ideal("R01", 1, 0);
        profile.iq_gain_imbalance = f64::INFINITY;
        assert!(synthesize_packet(&payload, &profile, &params, 30.0, &ideal_ctx()).is_err());
    }

    #[test]
    fn snr_contract_holds() {
        let params = OfdmParams::default();
        let profile = TransmitterProfile::ideal("R01", 1, 0);
        let mut ratios = Vec::new();
        for m in 0..100u64 {
            let payload = generate_payload(m, &params);
            let clean =
                synthesize_packet(&payload, &profile, &params, f64::INFINITY, &ideal_ctx()).unwrap();
            let ctx = PacketContext { noise_seed: 1000 + m, ..ideal_ctx() };
            let noisy = synthesize_packet(&payload, &profile, &params, 30.0, &ctx).unwrap();
            let p = burst_power(&clean.samples, &params);
            let n: f64 = noisy
                .samples
                .iter()
                .zip(&clean.samples)
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>()
                / noisy.samples.len() as f64;
            ratios.push(10.0 * (p / n).log10());
        }
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        assert!((mean - 30.0).abs() < 0.5, "measured {mean} dB");
        assert!(ratios.iter().all(|r| (r - 30.0).abs() < 0.5));
    }

    fn small_spec(profiles: Vec<TransmitterProfile>, n: usize) -> CorpusSpec {
        CorpusSpec {
            profiles,
            packets_per_tx: n,
            snr_db: 30.0,
            seed: 42,
            params: OfdmParams { packet_len: 3000, ..default_params() },
        }
    }

    #[test]
    fn corpus_sizes_and_labels() {
        let spec = small_spec(default_profiles(), 2);
        let c = generate_corpus(&spec).unwrap();
        assert_eq!(c.packets.len(), 24);
        assert_eq!(c.n_transmitters(), 12);
        assert_eq!(c.manifest.labels[11], "Y10v2_Tx2");
        let one = generate_corpus(&small_spec(vec![default_profiles()[0].clone()], 1)).unwrap();
        assert_eq!(one.packets.len(), 1);
        assert_eq!(one.packets[0].name, "Y06v2_1_1");
    }

    #[test]
    fn corpus_is_deterministic() {
        let spec = small_spec(default_profiles()[..3].to_vec(), 3);
        let a = generate_corpus(&spec).unwrap();
        let b = generate_corpus(&spec).unwrap();
        assert_eq!(a.packets, b.packets);
        assert_eq!(a.manifest, b.manifest);
    }

    #[test]
    fn duplicate_transmitters_rejected() {
        let p = default_profiles();
        let spec = small_spec(vec![p[0].clone(), p[0].clone()], 1);
        assert!(matches!(
            generate_corpus(&spec),
            Err(Error::DuplicateTransmitter { .. })
        ));
    }

    #[test]
    fn shared_payload_across_transmitters() {
        // With impairments off the two transmitters of one radio emit the
        // same packet m bit-for-bit.
        let mut spec = CorpusSpec {
            snr_db: f64::INFINITY,
            ..small_spec(
                vec![
                    TransmitterProfile::ideal("R01", 1, 0),
                    TransmitterProfile::ideal("R01", 2, 0),
                ],
                3,
            )
        };
        // Long enough to reach past the preamble into the payload.
        spec.params.packet_len = 6000;
        let c = generate_corpus(&spec).unwrap();
        for m in 0..3 {
            assert_eq!(c.packets[m].samples, c.packets[3 + m].samples);
        }
        assert_ne!(c.packets[0].samples, c.packets[1].samples);
    }

    #[test]
    fn same_radio_shares_carrier_term() {
        let spec = small_spec(default_profiles()[..2].to_vec(), 4);
        for m in 1..=4 {
            assert_eq!(
                carrier_phase(spec.seed, "Y06v2", m, 0.6),
                carrier_phase(spec.seed, "Y06v2", m, 0.6)
            );
        }
        assert_ne!(
            carrier_phase(spec.seed, "Y06v2", 1, 0.6),
            carrier_phase(spec.seed, "R05v1", 1, 0.6)
        );
        let mut bad = default_profiles()[..2].to_vec();
        bad[1].carrier_freq_offset += 1.0;
        assert!(generate_corpus(&small_spec(bad, 1)).is_err());
    }

    #[test]
    fn default_profiles_are_valid() {
        let profiles = default_profiles();
        assert_eq!(profiles.len(), 12);
        profiles.iter().for_each(|p| p.validate().unwrap());
        check_shared_oscillators(&profiles).unwrap();
    }
}
