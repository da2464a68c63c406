//! Onset detection, wN segmentation, vectorization, normalization and
//! stratified splitting of packet corpora.
//!
//! Onset and segment indices are 1-based, matching the way captures are
//! usually described (`g_i = f_{N_o + i - 1}`); storage is 0-based.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::seed::{label_seed, rng};
use crate::signal::IqPacket;

/// Default onset threshold on |Re f_i|.
pub const DEFAULT_TAU: f64 = 0.05;

/// Segment lengths supported by the wN scheme.
pub const SEGMENT_LENGTHS: [usize; 7] = [32, 64, 128, 256, 512, 1024, 2048];

/// Smallest 1-based index `i` with `|Re f_i| >= tau`.
pub fn detect_onset(f: &[Complex64], tau: f64) -> Result<usize> {
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter("tau must be > 0".into()));
    }
    f.iter()
        .position(|z| z.re.abs() >= tau)
        .map(|i| i + 1)
        .ok_or(Error::NoOnset { tau })
}

/// N consecutive samples starting at the 1-based onset index.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub g: Vec<Complex64>,
    pub onset_index: usize,
    pub source: String,
    pub label: u32,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }

    /// Method tag, e.g. `w256`.
    pub fn method(&self) -> String {
        format!("w{}", self.g.len())
    }
}

pub fn segment(f: &[Complex64], onset: usize, n: usize) -> Result<Segment> {
    if onset < 1 {
        return Err(Error::InvalidParameter("onset index is 1-based".into()));
    }
    let needed = onset + n - 1;
    if needed > f.len() {
        return Err(Error::TooShort {
            needed,
            available: f.len(),
        });
    }
    Ok(Segment {
        g: f[onset - 1..needed].to_vec(),
        onset_index: onset,
        source: String::new(),
        label: 0,
    })
}

/// Onset detection followed by wN segmentation of a labeled packet.
pub fn segment_packet(p: &IqPacket, tau: f64, n: usize) -> Result<Segment> {
    let onset = detect_onset(&p.samples, tau)?;
    let mut seg = segment(&p.samples, onset, n)?;
    seg.source = p.name.clone();
    seg.label = p.tx_label;
    Ok(seg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeMode {
    /// `(Re g_1..Re g_N, Im g_1..Im g_N)`.
    ConcatReIm,
    /// `|g_i|`.
    Magnitude,
}

pub fn vectorize_time(seg: &[Complex64], mode: TimeMode) -> Vec<f64> {
    match mode {
        TimeMode::ConcatReIm => seg
            .iter()
            .map(|z| z.re)
            .chain(seg.iter().map(|z| z.im))
            .collect(),
        TimeMode::Magnitude => seg.iter().map(|z| z.norm()).collect(),
    }
}

/// Labeled real feature vectors, stored sample-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub dim: usize,
    pub data: Vec<f64>,
    pub labels: Vec<u32>,
    pub names: Vec<String>,
}

impl FeatureSet {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            data: Vec::new(),
            labels: Vec::new(),
            names: Vec::new(),
        }
    }

    pub fn push(&mut self, v: &[f64], label: u32, name: impl Into<String>) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::ShapeMismatch(format!(
                "vector of length {} in a set of dim {}",
                v.len(),
                self.dim
            )));
        }
        self.data.extend_from_slice(v);
        self.labels.push(label);
        self.names.push(name.into());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn subset(&self, idx: &[usize]) -> FeatureSet {
        let mut out = FeatureSet::new(self.dim);
        for &i in idx {
            out.data.extend_from_slice(self.row(i));
            out.labels.push(self.labels[i]);
            out.names.push(self.names[i].clone());
        }
        out
    }

    /// Column-per-sample matrix (`dim x len`).
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.dim, self.len(), &self.data)
    }

    pub fn n_classes(&self) -> u32 {
        self.labels.iter().copied().max().unwrap_or(0)
    }
}

/// Build the time-domain feature set of a corpus at segment length `n`.
pub fn time_features(packets: &[IqPacket], tau: f64, n: usize, mode: TimeMode) -> Result<FeatureSet> {
    let dim = match mode {
        TimeMode::ConcatReIm => 2 * n,
        TimeMode::Magnitude => n,
    };
    let mut set = FeatureSet::new(dim);
    for p in packets {
        let seg = segment_packet(p, tau, n)?;
        set.push(&vectorize_time(&seg.g, mode), p.tx_label, p.name.clone())?;
    }
    Ok(set)
}

/// Global max-abs scale frozen on the training set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub max_abs: f64,
}

impl NormStats {
    pub fn fit(train: &FeatureSet) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::InvalidParameter("empty training set".into()));
        }
        let max_abs = train.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if max_abs == 0.0 {
            return Err(Error::ZeroCorpus);
        }
        Ok(Self { max_abs })
    }

    pub fn apply(&self, set: &mut FeatureSet) {
        let s = 1.0 / self.max_abs;
        set.data.iter_mut().for_each(|v| *v *= s);
    }
}

/// Normalize `set` in place; fits the statistics when none are supplied.
pub fn normalize_corpus(set: &mut FeatureSet, stats: Option<NormStats>) -> Result<NormStats> {
    let stats = match stats {
        Some(s) => s,
        None => NormStats::fit(set)?,
    };
    stats.apply(set);
    Ok(stats)
}

/// Stratified random split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train_fraction: f64, seed: u64) -> Self {
        Self {
            train_fraction,
            seed,
        }
    }

    /// Parse `90/10`-style notation.
    pub fn parse(s: &str, seed: u64) -> Result<Self> {
        let (a, b) = s
            .split_once('/')
            .ok_or_else(|| Error::InvalidParameter(format!("split `{s}` is not train/test")))?;
        let a: f64 = a.trim().parse().map_err(|_| Error::InvalidParameter(s.into()))?;
        let b: f64 = b.trim().parse().map_err(|_| Error::InvalidParameter(s.into()))?;
        if !(a > 0.0 && b > 0.0) {
            return Err(Error::InvalidParameter(format!("split `{s}` must be positive")));
        }
        Ok(Self::new(a / (a + b), seed))
    }

    pub fn tag(&self) -> String {
        let train = (self.train_fraction * 100.0).round() as u32;
        format!("{}/{}", train, 100 - train)
    }
}

fn by_class(labels: &[u32], idx: &[usize]) -> BTreeMap<u32, Vec<usize>> {
    let mut map: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for &i in idx {
        map.entry(labels[i]).or_default().push(i);
    }
    map
}

fn stratified(labels: &[u32], idx: &[usize], fraction: f64, seed: u64, tag: &str) -> (Vec<usize>, Vec<usize>) {
    let mut first = Vec::new();
    let mut second = Vec::new();
    for (label, mut members) in by_class(labels, idx) {
        members.shuffle(&mut rng(seed, &[label_seed(tag), label as u64]));
        let n = members.len();
        let k = if n >= 2 {
            ((fraction * n as f64).round() as usize).clamp(1, n - 1)
        } else {
            (fraction * n as f64).round() as usize
        };
        first.extend_from_slice(&members[..k]);
        second.extend_from_slice(&members[k..]);
    }
    first.sort_unstable();
    second.sort_unstable();
    (first, second)
}

/// Indices of a stratified (train, test) partition of `labels`.
pub fn split(labels: &[u32], spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::InvalidParameter("train_fraction must be in (0, 1)".into()));
    }
    let all: Vec<usize> = (0..labels.len()).collect();
    if let Some((l, m)) = by_class(labels, &all).iter().find(|(_, m)| m.len() < 2) {
        return Err(Error::InvalidParameter(format!(
            "class {l} has {} packets; need at least 2",
            m.len()
        )));
    }
    Ok(stratified(labels, &all, spec.train_fraction, spec.seed, "split"))
}

/// Fraction of each class's training packets held out for early stopping.
pub const VALIDATION_FRACTION: f64 = 0.2;

/// Stratified (fit, validation) partition of training indices.
pub fn validation_split(labels: &[u32], train_idx: &[usize], seed: u64) -> (Vec<usize>, Vec<usize>) {
    let (val, fit) = stratified(labels, train_idx, VALIDATION_FRACTION, seed, "validation");
    (fit, val)
}

/// Feature-matrix file: `<stem>.bin` (little-endian f64, sample-major) and
/// `<stem>.json` header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureHeader {
    pub dim: usize,
    pub count: usize,
    pub labels: Vec<u32>,
    pub names: Vec<String>,
    pub norm: Option<NormStats>,
    pub description: String,
}

pub fn write_features(dir: &Path, stem: &str, set: &FeatureSet, norm: Option<NormStats>, description: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    let bytes: Vec<u8> = set.data.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(dir.join(format!("{stem}.bin")), bytes)?;
    let header = FeatureHeader {
        dim: set.dim,
        count: set.len(),
        labels: set.labels.clone(),
        names: set.names.clone(),
        norm,
        description: description.to_string(),
    };
    fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&header)?)?;
    Ok(())
}

pub fn read_features(dir: &Path, stem: &str) -> Result<(FeatureSet, FeatureHeader)> {
    let header: FeatureHeader =
        serde_json::from_str(&fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
    let bytes = fs::read(dir.join(format!("{stem}.bin")))?;
    if bytes.len() != header.dim * header.count * 8 {
        return Err(Error::Format(format!(
            "{stem}.bin holds {} bytes, header implies {}",
            bytes.len(),
            header.dim * header.count * 8
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let set = FeatureSet {
        dim: header.dim,
        data,
        labels: header.labels.clone(),
        names: header.names.clone(),
    };
    Ok((set, header))
}
