//! Incremental learning: stage 1 sees only transmitters `1..=k`, later
//! stages all `n`.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::data::{time_partition, wavelet_partition, Partition, Pipeline};
use super::report::{fmt_acc, hash_json, Report};
use super::sweep::{mst_config, mst_optimizer};
use crate::dataprep::SplitSpec;
use crate::error::{Error, Result};
use crate::mst::{evaluate, train_incremental, train_mst, MstModel};
use crate::seed::{derive_seed, label_seed};
use crate::signal::Corpus;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementalSpec {
    pub pipeline: Pipeline,
    /// Ignored for the wavelet pipeline.
    pub segment_lengths: Vec<usize>,
    pub train_fractions: Vec<f64>,
    /// Stage-1 transmitter counts.
    pub ks: Vec<u32>,
    pub seed: u64,
}

impl IncrementalSpec {
    /// Time-domain grid: w32/w64/w128 x {90/10, 10/90} x k in {6, 11}.
    pub fn time_domain(seed: u64) -> Self {
        Self {
            pipeline: Pipeline::TimeConcat,
            segment_lengths: vec![32, 64, 128],
            train_fractions: vec![0.9, 0.1],
            ks: vec![6, 11],
            seed,
        }
    }

    /// Wavelet grid: {90/10, 50/50, 10/90, 1/99} x k in {6, 3}.
    pub fn wavelet(seed: u64) -> Self {
        Self {
            pipeline: Pipeline::Wavelet,
            segment_lengths: vec![],
            train_fractions: vec![0.9, 0.5, 0.1, 0.01],
            ks: vec![6, 3],
            seed,
        }
    }
}

pub struct IncrementalCell {
    pub model: MstModel,
    pub accuracy: f64,
}

/// Second-order MST with stage 1 limited to `k` transmitters.
pub fn incremental_cell(part: &Partition, k: u32, seed: u64) -> Result<IncrementalCell> {
    let n = part.fit.n_classes();
    let cfg = mst_config(2, n)?;
    let opt = mst_optimizer(2, seed)?;
    let (model, _) = train_incremental(&part.fit, Some(&part.val), &cfg, k, n, &opt, seed)?;
    let accuracy = evaluate(&model, &part.test)?.accuracy;
    Ok(IncrementalCell { model, accuracy })
}

/// Same, with all transmitters in stage 1.
pub fn full_cell(part: &Partition, seed: u64) -> Result<IncrementalCell> {
    let n = part.fit.n_classes();
    let cfg = mst_config(2, n)?;
    let (model, _) = train_mst(&part.fit, Some(&part.val), &cfg, &mst_optimizer(2, seed)?, seed)?;
    let accuracy = evaluate(&model, &part.test)?.accuracy;
    Ok(IncrementalCell { model, accuracy })
}

/// One row per (split, segment, k) plus the full-training reference
/// (`k = n`) of each (split, segment). `ratio` is accuracy over the
/// reference accuracy.
pub fn run_incremental(corpus: &Corpus, spec: &IncrementalSpec) -> Result<Report> {
    let n = corpus.n_transmitters() as u32;
    if let Some(k) = spec.ks.iter().find(|&&k| k == 0 || k > n) {
        return Err(Error::InvalidParameter(format!("k = {k} outside 1..={n}")));
    }
    let mut report = Report::new(
        "incremental",
        &["pipeline", "split", "segment", "n", "k", "seed", "accuracy", "ratio", "config_hash"],
    );
    let mseed = derive_seed(spec.seed, &[label_seed("incremental")]);
    let cfg_hash = hash_json(&(mst_config(2, n)?, mst_optimizer(2, mseed)?));
    for &frac in &spec.train_fractions {
        let split = SplitSpec::new(frac, spec.seed);
        let parts: Vec<(String, Partition)> = match spec.pipeline {
            Pipeline::Wavelet => vec![("wavelet".into(), wavelet_partition(&corpus.packets, &split, spec.seed)?.0)],
            p => spec
                .segment_lengths
                .iter()
                .map(|&len| Ok((len.to_string(), time_partition(&corpus.packets, len, p, &split)?)))
                .collect::<Result<_>>()?,
        };
        for (seg, part) in &parts {
            let t0 = Instant::now();
            let full = full_cell(part, mseed)?;
            report.timings.push((format!("{}_{seg}_full", split.tag()), t0.elapsed().as_secs_f64()));
            let mut cells = vec![(n, full.accuracy)];
            for &k in spec.ks.iter().filter(|&&k| k != n) {
                let t0 = Instant::now();
                cells.push((k, incremental_cell(part, k, mseed)?.accuracy));
                report.timings.push((format!("{}_{seg}_k{k}", split.tag()), t0.elapsed().as_secs_f64()));
            }
            for (k, acc) in cells {
                report.push(vec![
                    spec.pipeline.name().into(),
                    split.tag(),
                    seg.clone(),
                    n.to_string(),
                    k.to_string(),
                    spec.seed.to_string(),
                    fmt_acc(acc),
                    fmt_acc(if full.accuracy > 0.0 { acc / full.accuracy } else { 0.0 }),
                    cfg_hash.clone(),
                ])?;
            }
        }
    }
    Ok(report)
}
