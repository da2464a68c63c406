//! On-disk corpus layout: one `<name>.iq` file per packet holding
//! little-endian interleaved 32-bit float I/Q pairs, plus `manifest.json`.

use num_complex::Complex64;
use std::fs;
use std::path::Path;

use super::corpus::{Corpus, CorpusManifest, IqPacket};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn encode_iq(samples: &[Complex64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(samples.len() * 8);
    for z in samples {
        out.extend_from_slice(&(z.re as f32).to_le_bytes());
        out.extend_from_slice(&(z.im as f32).to_le_bytes());
    }
    out
}

pub fn decode_iq(bytes: &[u8]) -> Result<Vec<Complex64>> {
    if bytes.len() % 8 != 0 {
        return Err(Error::Format(format!(
            "I/Q file length {} is not a multiple of 8",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            let im = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
            Complex64::new(re as f64, im as f64)
        })
        .collect())
}

pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    fs::create_dir_all(dir)?;
    for p in &corpus.packets {
        fs::write(dir.join(format!("{}.iq", p.name)), encode_iq(&p.samples))?;
    }
    fs::write(
        dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&corpus.manifest)?,
    )?;
    Ok(())
}

pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    let manifest: CorpusManifest =
        serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    let packets = manifest
        .packets
        .iter()
        .map(|e| {
            let samples = decode_iq(&fs::read(dir.join(format!("{}.iq", e.name)))?)?;
            Ok(IqPacket {
                samples,
                tx_label: e.tx_label,
                packet_id: e.packet_id,
                name: e.name.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus { packets, manifest })
}
