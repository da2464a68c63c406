//! Scalogram variance maps per channel, difference scalograms and
//! time-domain difference traces.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::report::{fmt, Report};
use crate::error::{Error, Result};
use crate::signal::{Corpus, IqPacket};
use crate::wavelet::{
    channel_select, difference_scalogram, difference_timedomain, read_scalogram, read_scalogram_header, sparsity, Channel, CwtPlan,
    MorletParams, VarianceAccumulator, VarianceMap,
};

/// Samples skipped before the analysed window.
pub const VARIANCE_OFFSET: usize = 450;
pub const VARIANCE_WINDOW: usize = 2048;
pub const SPARSITY_THRESHOLD: f64 = 0.1;
/// Columns averaged into one pixel of the exported images.
pub const IMAGE_COLUMN_POOL: usize = 4;

fn window(p: &IqPacket) -> Result<&[num_complex::Complex64]> {
    p.samples
        .get(VARIANCE_OFFSET..VARIANCE_OFFSET + VARIANCE_WINDOW)
        .ok_or_else(|| Error::InvalidParameter(format!("packet {} shorter than the analysis window", p.name)))
}

/// First `n_s` packets of every transmitter, ordered by (t, m).
pub fn select_packets(corpus: &Corpus, n_s: usize) -> Result<Vec<&IqPacket>> {
    let n_t = corpus.n_transmitters() as u32;
    let mut out = Vec::new();
    for t in 1..=n_t {
        let mut mine: Vec<&IqPacket> = corpus.packets.iter().filter(|p| p.tx_label == t).collect();
        mine.sort_by_key(|p| p.packet_id);
        if mine.len() < n_s {
            return Err(Error::InvalidParameter(format!(
                "transmitter {t} has {} packets, need {n_s}",
                mine.len()
            )));
        }
        out.extend_from_slice(&mine[..n_s]);
    }
    Ok(out)
}

/// Variance over the scalograms of `packets` (computed in parallel chunks,
/// accumulated in order) plus the scalograms at the `keep` positions.
pub fn channel_pass(
    packets: &[&IqPacket],
    channel: Channel,
    plan: &CwtPlan,
    keep: &[usize],
) -> Result<(VarianceMap, Vec<DMatrix<f64>>)> {
    let mut acc = VarianceAccumulator::new(plan.scales().len(), plan.len());
    let mut kept = Vec::with_capacity(keep.len());
    let chunk = rayon::current_num_threads().max(1) * 4;
    for (c, group) in packets.chunks(chunk).enumerate() {
        let scal: Vec<DMatrix<f64>> = group
            .par_iter()
            .map(|p| plan.scalogram(&channel_select(window(p)?, channel)))
            .collect::<Result<_>>()?;
        for (j, s) in scal.into_iter().enumerate() {
            acc.push(&s)?;
            if keep.contains(&(c * chunk + j)) {
                kept.push(s);
            }
        }
    }
    Ok((acc.finish()?, kept))
}

/// Grey image of `m` with columns averaged in groups of `pool`. Signed
/// data maps zero to mid-grey.
pub fn matrix_pgm(m: &DMatrix<f64>, pool: usize, signed: bool) -> String {
    let pool = pool.max(1);
    let cols = m.ncols().div_ceil(pool);
    let pooled = DMatrix::from_fn(m.nrows(), cols, |r, c| {
        let hi = ((c + 1) * pool).min(m.ncols());
        (c * pool..hi).map(|j| m[(r, j)]).sum::<f64>() / (hi - c * pool) as f64
    });
    let peak = pooled.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let grey = |v: f64| -> u8 {
        if peak == 0.0 {
            return if signed { 128 } else { 0 };
        }
        let x = if signed { 0.5 + 0.5 * v / peak } else { v / peak };
        (x.clamp(0.0, 1.0) * 255.0).round() as u8
    };
    let mut s = format!("P2\n{} {}\n255\n", cols, m.nrows());
    for r in 0..pooled.nrows() {
        let line: Vec<String> = (0..cols).map(|c| grey(pooled[(r, c)]).to_string()).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

/// Variance map and sparsity per channel over `n_s` packets of every
/// transmitter, magnitude-channel difference scalograms and time-domain
/// difference traces for packet m = 1.
pub fn run_variance_report(corpus: &Corpus, n_s: usize) -> Result<Report> {
    let mut report = Report::new(
        "variance",
        &["channel", "n_t", "n_s", "sparsity", "threshold", "max_var", "mean_var"],
    );
    let packets = select_packets(corpus, n_s)?;
    let n_t = corpus.n_transmitters();
    let plan = CwtPlan::new(VARIANCE_WINDOW, &MorletParams::for_length(VARIANCE_WINDOW))?;
    for ch in Channel::ALL {
        let keep: Vec<usize> = if ch == Channel::Magnitude { (0..n_t).map(|t| t * n_s).collect() } else { vec![] };
        let (vm, first) = channel_pass(&packets, ch, &plan, &keep)?;
        let max = vm.var.iter().copied().fold(0.0, f64::max);
        report.push(vec![
            ch.name().into(),
            n_t.to_string(),
            n_s.to_string(),
            format!("{:.6}", sparsity(&vm.var, SPARSITY_THRESHOLD)),
            SPARSITY_THRESHOLD.to_string(),
            fmt(max),
            fmt(vm.var.mean()),
        ])?;
        report
            .artifacts
            .push((format!("variance_{}.pgm", ch.name()), matrix_pgm(&vm.var, IMAGE_COLUMN_POOL, false)));
        if ch == Channel::Magnitude {
            for (t, s) in first.iter().enumerate() {
                let d = difference_scalogram(s, &vm.mean)?;
                report
                    .artifacts
                    .push((format!("difference_t{}_m1.pgm", t + 1), matrix_pgm(&d, IMAGE_COLUMN_POOL, true)));
            }
        }
    }
    let traces: Vec<Vec<f64>> = packets
        .iter()
        .map(|p| Ok(window(p)?.iter().map(|z| z.norm()).collect()))
        .collect::<Result<_>>()?;
    let deltas = difference_timedomain(&traces)?;
    let mut csv = String::from("i");
    for t in 1..=n_t {
        csv.push_str(&format!(",t{t}"));
    }
    csv.push('\n');
    for i in 0..VARIANCE_WINDOW {
        csv.push_str(&i.to_string());
        for t in 0..n_t {
            csv.push_str(&format!(",{:.6e}", deltas[t * n_s][i]));
        }
        csv.push('\n');
    }
    report.artifacts.push(("timedomain_difference_m1.csv".into(), csv));
    Ok(report)
}

/// Variance and sparsity of a scalogram directory written by the `cwt`
/// command, over the first `n_s` scalograms of every transmitter.
pub fn sparsity_of_dir(dir: &Path, n_s: usize) -> Result<Report> {
    let header = read_scalogram_header(dir)?;
    let mut report = Report::new(
        "variance",
        &["channel", "n_t", "n_s", "sparsity", "threshold", "max_var", "mean_var"],
    );
    let mut entries: Vec<_> = header.entries.iter().collect();
    entries.sort_by_key(|e| (e.tx_label, e.packet_id));
    let mut taken: BTreeMap<u32, usize> = BTreeMap::new();
    let mut acc = VarianceAccumulator::new(header.rows, header.cols);
    for e in entries {
        let c = taken.entry(e.tx_label).or_default();
        if *c < n_s {
            *c += 1;
            acc.push(&read_scalogram(dir, &header, e)?)?;
        }
    }
    if let Some((t, c)) = taken.iter().find(|(_, &c)| c < n_s) {
        return Err(Error::InvalidParameter(format!("transmitter {t} has {c} scalograms, need {n_s}")));
    }
    let vm = acc.finish()?;
    report.push(vec![
        header.channel.name().into(),
        taken.len().to_string(),
        n_s.to_string(),
        format!("{:.6}", sparsity(&vm.var, SPARSITY_THRESHOLD)),
        SPARSITY_THRESHOLD.to_string(),
        fmt(vm.var.iter().copied().fold(0.0, f64::max)),
        fmt(vm.var.mean()),
    ])?;
    report
        .artifacts
        .push((format!("variance_{}.pgm", header.channel.name()), matrix_pgm(&vm.var, IMAGE_COLUMN_POOL, false)));
    Ok(report)
}
