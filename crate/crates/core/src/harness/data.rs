//! Feature extraction per pipeline and train/validation/test partitions.

use serde::{Deserialize, Serialize};

use crate::dataprep::{split, time_features, validation_split, FeatureSet, NormStats, SplitSpec, TimeMode, DEFAULT_TAU};
use crate::error::{Error, Result};
use crate::frontend::{packet_scalogram, wavelet_features, FrontEnd, FrontEndConfig};
use crate::seed::{derive_seed, label_seed};
use crate::signal::IqPacket;
use crate::wavelet::{Channel, CwtPlan, MorletParams};

/// Segment length fed to the wavelet front end.
pub const WAVELET_SEGMENT: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    TimeConcat,
    TimeMagnitude,
    Wavelet,
}

impl Pipeline {
    pub fn name(self) -> &'static str {
        match self {
            Pipeline::TimeConcat => "time-concat",
            Pipeline::TimeMagnitude => "time-magnitude",
            Pipeline::Wavelet => "wavelet-frontend",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "time-concat" | "concat" => Ok(Pipeline::TimeConcat),
            "time-magnitude" | "magnitude" => Ok(Pipeline::TimeMagnitude),
            "wavelet-frontend" | "wavelet" => Ok(Pipeline::Wavelet),
            _ => Err(Error::InvalidParameter(format!("unknown pipeline `{s}`"))),
        }
    }
}

/// Normalized partition of one feature set. `fit` and `val` together are
/// the training split; `val` only drives early stopping.
#[derive(Debug, Clone)]
pub struct Partition {
    pub fit: FeatureSet,
    pub val: FeatureSet,
    pub test: FeatureSet,
    pub norm: NormStats,
    pub split: SplitSpec,
}

impl Partition {
    /// Fit and validation sets merged back into the training split.
    pub fn train(&self) -> FeatureSet {
        let mut t = self.fit.clone();
        for i in 0..self.val.len() {
            t.push(self.val.row(i), self.val.labels[i], self.val.names[i].clone())
                .expect("same dimension");
        }
        t
    }
}

/// Train/test indices of a split plus the (fit, val) division of the
/// training part.
pub struct SplitIndices {
    pub fit: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split_indices(labels: &[u32], spec: &SplitSpec) -> Result<SplitIndices> {
    let (train, test) = split(labels, spec)?;
    let (fit, val) = validation_split(labels, &train, derive_seed(spec.seed, &[label_seed("validation")]));
    if val.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "split {} leaves no validation packets",
            spec.tag()
        )));
    }
    Ok(SplitIndices { fit, val, test })
}

/// Partition `all` and scale everything by the training-split max.
pub fn partition(all: &FeatureSet, spec: &SplitSpec) -> Result<Partition> {
    let idx = split_indices(&all.labels, spec)?;
    partition_with(all, &idx, spec)
}

fn partition_with(all: &FeatureSet, idx: &SplitIndices, spec: &SplitSpec) -> Result<Partition> {
    let mut train_idx = idx.fit.clone();
    train_idx.extend_from_slice(&idx.val);
    let norm = NormStats::fit(&all.subset(&train_idx))?;
    let mut fit = all.subset(&idx.fit);
    let mut val = all.subset(&idx.val);
    let mut test = all.subset(&idx.test);
    for s in [&mut fit, &mut val, &mut test] {
        norm.apply(s);
    }
    Ok(Partition {
        fit,
        val,
        test,
        norm,
        split: *spec,
    })
}

pub fn time_set(packets: &[IqPacket], n: usize, mode: TimeMode) -> Result<FeatureSet> {
    time_features(packets, DEFAULT_TAU, n, mode)
}

/// Wavelet pipeline for one split: the front end is fitted on the training
/// packets only, then applied to every packet.
pub fn wavelet_partition(packets: &[IqPacket], spec: &SplitSpec, seed: u64) -> Result<(Partition, FrontEnd)> {
    let labels: Vec<u32> = packets.iter().map(|p| p.tx_label).collect();
    let idx = split_indices(&labels, spec)?;
    let plan = CwtPlan::new(WAVELET_SEGMENT, &MorletParams::for_length(WAVELET_SEGMENT))?;
    let cfg = FrontEndConfig::for_input(plan.scales().len(), WAVELET_SEGMENT)?;
    let mut train_idx = idx.fit.clone();
    train_idx.extend_from_slice(&idx.val);
    train_idx.sort_unstable();
    // Scalograms are large; stream them so only the sampled patches stay.
    let mut failure = None;
    let scalograms = train_idx.iter().map_while(|&i| {
        match packet_scalogram(&packets[i], DEFAULT_TAU, Channel::Magnitude, &plan) {
            Ok(s) => Some(s),
            Err(e) => {
                failure = Some(e);
                None
            }
        }
    });
    let fe = FrontEnd::fit(scalograms, &cfg, derive_seed(seed, &[label_seed("frontend")]));
    if let Some(e) = failure {
        return Err(e);
    }
    let fe = fe?;
    let all = wavelet_features(packets, &fe, &plan, DEFAULT_TAU, Channel::Magnitude)?;
    Ok((partition_with(&all, &idx, spec)?, fe))
}

/// Feature partition for a time-domain pipeline.
pub fn time_partition(packets: &[IqPacket], n: usize, pipeline: Pipeline, spec: &SplitSpec) -> Result<Partition> {
    let mode = match pipeline {
        Pipeline::TimeConcat => TimeMode::ConcatReIm,
        Pipeline::TimeMagnitude => TimeMode::Magnitude,
        Pipeline::Wavelet => {
            return Err(Error::InvalidParameter("wavelet pipeline has no segment length".into()));
        }
    };
    partition(&time_set(packets, n, mode)?, spec)
}
