//! Synthetic OFDM transmitter corpus standing in for a hardware capture.

pub mod corpus;
pub mod impairments;
pub mod io;
pub mod ofdm;

pub use corpus::{
    burst_power, default_params, default_profiles, generate_corpus, synthesize_packet, Corpus,
    CorpusManifest, CorpusSpec, IqPacket, ManifestEntry, PacketContext,
};
pub use impairments::{Cplx, TransmitterProfile};
pub use ofdm::{generate_payload, modulate, OfdmParams, SymbolGrid};
