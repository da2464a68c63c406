//! Single-MLP comparison of wavelet front-end features against raw
//! time-domain segments.

use std::time::Instant;

use super::data::{time_partition, wavelet_partition, Partition, Pipeline};
use super::mono::{single_mlp_first_order, train_mono};
use super::report::{fmt_acc, hash_json, Report};
use crate::dataprep::SplitSpec;
use crate::error::Result;
use crate::seed::{derive_seed, label_seed};
use crate::signal::Corpus;

/// Segment length of the time-domain arms.
pub const TIME_SEGMENT: usize = 1024;

pub const ARMS: [&str; 3] = ["time-concat-w1024", "time-magnitude-w1024", "wavelet-frontend"];

#[derive(Debug, Clone, PartialEq)]
pub struct ArmSummary {
    pub arm: String,
    pub mean_accuracy: f64,
    /// Summed training wall time over all runs.
    pub seconds: f64,
}

/// `runs` seeded trainings of the single MLP on each arm. One row per run
/// plus a `mean` row per arm; time is relative to the wavelet arm.
pub fn run_wavelet_comparison(corpus: &Corpus, train_fraction: f64, runs: usize, seed: u64) -> Result<Report> {
    let split = SplitSpec::new(train_fraction, seed);
    let mut report = Report::new(
        "wavelet_comparison",
        &["arm", "run", "split", "seed", "accuracy", "iterations", "dim", "config_hash"],
    );
    for arm in ARMS {
        let part: Partition = match arm {
            "time-concat-w1024" => time_partition(&corpus.packets, TIME_SEGMENT, Pipeline::TimeConcat, &split)?,
            "time-magnitude-w1024" => time_partition(&corpus.packets, TIME_SEGMENT, Pipeline::TimeMagnitude, &split)?,
            _ => wavelet_partition(&corpus.packets, &split, seed)?.0,
        };
        let mut total = 0.0;
        let mut seconds = 0.0;
        for run in 0..runs {
            let rseed = derive_seed(seed, &[label_seed("single-mlp"), run as u64]);
            let cfg = single_mlp_first_order(rseed);
            let t0 = Instant::now();
            let (model, trace) = train_mono(&part.fit, Some(&part.val), &cfg, rseed)?;
            let dt = t0.elapsed().as_secs_f64();
            seconds += dt;
            report.timings.push((format!("{arm}_run{run}"), dt));
            let acc = model.confusion(&part.test)?.accuracy();
            total += acc;
            report.push(vec![
                arm.into(),
                run.to_string(),
                split.tag(),
                seed.to_string(),
                fmt_acc(acc),
                trace.iterations().to_string(),
                part.fit.dim.to_string(),
                hash_json(&cfg),
            ])?;
        }
        report.timings.push((arm.to_string(), seconds));
        report.push(vec![
            arm.into(),
            "mean".into(),
            split.tag(),
            seed.to_string(),
            fmt_acc(total / runs.max(1) as f64),
            String::new(),
            part.fit.dim.to_string(),
            hash_json(&single_mlp_first_order(0).hidden),
        ])?;
    }
    report.timing_base = Some("wavelet-frontend".into());
    Ok(report)
}

pub fn summaries(report: &Report) -> Result<Vec<ArmSummary>> {
    ARMS.iter()
        .map(|arm| {
            Ok(ArmSummary {
                arm: arm.to_string(),
                mean_accuracy: report.value(&[("arm", arm), ("run", "mean")], "accuracy")?,
                seconds: report.seconds(arm).unwrap_or(f64::NAN),
            })
        })
        .collect()
}
