//! Classification sweep over segment lengths, splits and methods, and the
//! first/second-order comparison.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::data::{time_partition, Partition, Pipeline};
use super::mono::{dnn_baseline, train_mono};
use super::report::{fmt_acc, hash_json, Report};
use crate::ann::{AdamConfig, LmConfig, Optimizer};
use crate::dataprep::SplitSpec;
use crate::error::{Error, Result};
use crate::mst::{default_config_1st, default_config_2nd, evaluate, scale_mlps, train_mst, ConfusionMatrix, StageConfig};
use crate::seed::{derive_seed, label_seed};
use crate::signal::Corpus;

/// Mini-batch size for first-order MST training.
pub const FIRST_ORDER_BATCH: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Mst2nd,
    Mst1st,
    Dnn,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Mst2nd, Method::Mst1st, Method::Dnn];

    pub fn name(self) -> &'static str {
        match self {
            Method::Mst2nd => "mst-2nd",
            Method::Mst1st => "mst-1st",
            Method::Dnn => "dnn",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown method `{s}`")))
    }
}

/// MST optimizer for a training order: LM, or Adam on mini-batches.
pub fn mst_optimizer(order: u8, seed: u64) -> Result<Optimizer> {
    match order {
        2 => Ok(Optimizer::Lm(LmConfig::default())),
        1 => Ok(Optimizer::Adam {
            cfg: AdamConfig::default(),
            batch_size: Some(FIRST_ORDER_BATCH),
            seed: derive_seed(seed, &[label_seed("adam")]),
        }),
        _ => Err(Error::InvalidParameter(format!("training order must be 1 or 2, got {order}"))),
    }
}

pub fn mst_config(order: u8, n_t: u32) -> Result<Vec<StageConfig>> {
    match order {
        2 => default_config_2nd(n_t),
        1 => default_config_1st(n_t),
        _ => Err(Error::InvalidParameter(format!("training order must be 1 or 2, got {order}"))),
    }
}

/// Outcome of training and testing one method on one partition.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub confusion: ConfusionMatrix,
    pub config_hash: String,
    /// Deterministic cost estimate (flops) where the trainer provides one.
    pub work: Option<f64>,
    pub iterations: usize,
}

/// Train an MST with explicit stages and optimizer, test on `part.test`.
pub fn run_mst(part: &Partition, configs: &[StageConfig], opt: &Optimizer, seed: u64) -> Result<CellResult> {
    let (model, report) = train_mst(&part.fit, Some(&part.val), configs, opt, seed)?;
    Ok(CellResult {
        confusion: evaluate(&model, &part.test)?.confusion,
        config_hash: hash_json(&(configs, opt)),
        work: Some(report.work()),
        iterations: report.iterations(),
    })
}

pub fn run_method(method: Method, part: &Partition, seed: u64) -> Result<CellResult> {
    let n_t = part.fit.n_classes();
    let mseed = derive_seed(seed, &[label_seed(method.name())]);
    match method {
        Method::Mst2nd | Method::Mst1st => {
            let order = if method == Method::Mst2nd { 2 } else { 1 };
            run_mst(part, &mst_config(order, n_t)?, &mst_optimizer(order, mseed)?, mseed)
        }
        Method::Dnn => {
            let cfg = dnn_baseline(mseed);
            let (model, run) = train_mono(&part.fit, Some(&part.val), &cfg, mseed)?;
            Ok(CellResult {
                confusion: model.confusion(&part.test)?,
                config_hash: hash_json(&cfg),
                work: None,
                iterations: run.iterations(),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub segment_lengths: Vec<usize>,
    /// Training fractions, e.g. 0.9 for 90/10.
    pub train_fractions: Vec<f64>,
    pub methods: Vec<Method>,
    pub pipeline: Pipeline,
    pub seed: u64,
}

impl SweepSpec {
    pub fn desk_default(seed: u64) -> Self {
        Self {
            segment_lengths: vec![32, 64, 128, 256, 512, 1024],
            train_fractions: vec![0.9, 0.1],
            methods: Method::ALL.to_vec(),
            pipeline: Pipeline::TimeConcat,
            seed,
        }
    }
}

pub fn corpus_hash(corpus: &Corpus) -> String {
    hash_json(&corpus.manifest.spec)
}

fn file_tag(split: &SplitSpec) -> String {
    split.tag().replace('/', "-")
}

pub const SWEEP_HEADER: [&str; 11] = [
    "split", "segment", "pipeline", "method", "seed", "accuracy", "n_fit", "n_val", "n_test", "config_hash", "corpus_hash",
];

/// Accuracy per (split, segment, method) plus one confusion matrix (CSV
/// and PGM) per cell.
pub fn run_classification_sweep(corpus: &Corpus, spec: &SweepSpec) -> Result<Report> {
    let mut report = Report::new("sweep", &SWEEP_HEADER);
    let chash = corpus_hash(corpus);
    for &frac in &spec.train_fractions {
        let split = SplitSpec::new(frac, spec.seed);
        for &n in &spec.segment_lengths {
            let part = time_partition(&corpus.packets, n, spec.pipeline, &split)?;
            for &method in &spec.methods {
                let t0 = Instant::now();
                let r = run_method(method, &part, spec.seed)?;
                let cell = format!("{}_w{n}_{}", file_tag(&split), method.name());
                report.timings.push((cell.clone(), t0.elapsed().as_secs_f64()));
                report.artifacts.push((format!("confusion_{cell}.csv"), r.confusion.to_csv()));
                report.artifacts.push((format!("confusion_{cell}.pgm"), r.confusion.to_pgm(8)));
                report.push(vec![
                    split.tag(),
                    n.to_string(),
                    spec.pipeline.name().into(),
                    method.name().into(),
                    spec.seed.to_string(),
                    fmt_acc(r.confusion.accuracy()),
                    part.fit.len().to_string(),
                    part.val.len().to_string(),
                    part.test.len().to_string(),
                    r.config_hash,
                    chash.clone(),
                ])?;
            }
        }
    }
    Ok(report)
}

/// Segment columns of one split where `a >= b` on accuracy.
pub fn columns_where_at_least(report: &Report, split: &str, a: Method, b: Method) -> Result<(usize, usize)> {
    let mut segments: Vec<String> = report
        .select(&[("split", split)])
        .iter()
        .map(|r| r[1].clone())
        .collect();
    segments.dedup();
    let mut ok = 0;
    for s in &segments {
        let acc = |m: Method| report.value(&[("split", split), ("segment", s), ("method", m.name())], "accuracy");
        if acc(a)? >= acc(b)? {
            ok += 1;
        }
    }
    Ok((ok, segments.len()))
}

/// Four arms on one partition: base or tripled MST, first or second order.
/// Relative time is against the base second-order arm.
pub fn run_order_comparison(corpus: &Corpus, n: usize, train_fraction: f64, seed: u64) -> Result<Report> {
    let split = SplitSpec::new(train_fraction, seed);
    let part = time_partition(&corpus.packets, n, Pipeline::TimeConcat, &split)?;
    let n_t = part.fit.n_classes();
    let mut report = Report::new(
        "order",
        &["arm", "order", "split", "segment", "seed", "accuracy", "iterations", "work", "config_hash"],
    );
    for (arm, factor) in [("mst-1", 1), ("mst-2", 3)] {
        for order in [2u8, 1] {
            let configs = scale_mlps(&mst_config(order, n_t)?, factor, n_t);
            let mseed = derive_seed(seed, &[label_seed(arm), order as u64]);
            let t0 = Instant::now();
            let r = run_mst(&part, &configs, &mst_optimizer(order, mseed)?, mseed)?;
            let cell = format!("{arm}_order{order}");
            report.timings.push((cell.clone(), t0.elapsed().as_secs_f64()));
            report.artifacts.push((format!("confusion_{cell}.csv"), r.confusion.to_csv()));
            report.push(vec![
                arm.into(),
                order.to_string(),
                split.tag(),
                n.to_string(),
                seed.to_string(),
                fmt_acc(r.confusion.accuracy()),
                r.iterations.to_string(),
                format!("{:.6e}", r.work.unwrap_or(0.0)),
                r.config_hash,
            ])?;
        }
    }
    report.timing_base = Some("mst-1_order2".into());
    Ok(report)
}
