use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::batches::{plan_batches_restricted, BatchPlan};
use super::config::{detector_targets, StageConfig, Target};
use super::model::MstModel;
use crate::ann::lm::route_costs;
use crate::ann::{count_parameters, train, Activation, Batch, Mlp, Optimizer, StopReason};
use crate::dataprep::FeatureSet;
use crate::error::{Error, Result};
use crate::seed::{derive_seed, label_seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSummary {
    pub target: Target,
    pub batch_len: usize,
    pub iterations: usize,
    pub stop: StopReason,
    pub final_train_mse: f64,
    pub best_val_mse: Option<f64>,
    /// Deterministic flop estimate for the whole run.
    pub work: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: usize,
    pub mlps: Vec<MlpSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MstReport {
    pub stages: Vec<StageReport>,
}

impl MstReport {
    pub fn work(&self) -> f64 {
        self.stages.iter().flat_map(|s| &s.mlps).map(|m| m.work).sum()
    }

    pub fn iterations(&self) -> usize {
        self.stages.iter().flat_map(|s| &s.mlps).map(|m| m.iterations).sum()
    }
}

/// Rough flops per training iteration.
pub fn work_per_iter(opt: &Optimizer, sizes: &[usize], rows: usize) -> f64 {
    let n = count_parameters(sizes).unwrap_or(0) as f64;
    match opt {
        Optimizer::Lm(_) => {
            let (p, d) = route_costs(sizes, rows, true);
            p.min(d)
        }
        _ => 6.0 * n * rows as f64,
    }
}

fn mlp_optimizer(opt: &Optimizer, seed: u64, s: usize, i: usize) -> Optimizer {
    match opt {
        Optimizer::Adam { cfg, batch_size, .. } => Optimizer::Adam {
            cfg: *cfg,
            batch_size: *batch_size,
            seed: derive_seed(seed, &[label_seed("adam"), s as u64, i as u64]),
        },
        o => o.clone(),
    }
}

fn targets_row(target: Target, labels: &[u32], idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_iterator(1, idx.len(), idx.iter().map(|&j| target.value(labels[j])))
}

struct StageData {
    x: DMatrix<f64>,
    labels: Vec<u32>,
}

/// Train stages `from..` of `model` in order, each on the frozen outputs of
/// the stages before it.
fn train_stages(
    model: &mut MstModel,
    from: usize,
    train_set: &FeatureSet,
    val_set: Option<&FeatureSet>,
    plan: &BatchPlan,
    val_plan: Option<&BatchPlan>,
) -> Result<Vec<StageReport>> {
    let mut tr = StageData {
        x: train_set.to_matrix(),
        labels: train_set.labels.clone(),
    };
    let mut va = val_set.map(|v| StageData {
        x: v.to_matrix(),
        labels: v.labels.clone(),
    });
    for s in 0..from {
        tr.x = model.stage_outputs(s, &tr.x)?;
        if let Some(v) = va.as_mut() {
            v.x = model.stage_outputs(s, &v.x)?;
        }
    }
    model.stages.truncate(from);
    let mut reports = Vec::new();
    for s in from..model.configs.len() {
        let cfg = model.configs[s].clone();
        let sizes = cfg.sizes(tr.x.nrows());
        let full_rows = tr.x.ncols();
        let shared_gram = if s > 0 {
            let (p, d) = route_costs(&sizes, full_rows, true);
            (model.optimizer.is_second_order() && d < p).then(|| crate::ann::linalg::gram_tr(&tr.x))
        } else {
            None
        };
        let results: Vec<(Mlp, MlpSummary)> = (0..cfg.n_mlps)
            .into_par_iter()
            .map(|i| {
                let target = cfg.targets[i];
                let idx = &plan.stages[s][i];
                let x = if idx.len() == full_rows {
                    tr.x.clone()
                } else {
                    tr.x.select_columns(idx)
                };
                let t = targets_row(target, &tr.labels, idx);
                let batch = match (&shared_gram, idx.len() == full_rows) {
                    (Some(g), true) => Batch::with_gram(x, t, g.clone())?,
                    _ => Batch::new(x, t)?,
                };
                let val = match (&va, val_plan) {
                    (Some(v), Some(vp)) => {
                        let vidx = &vp.stages[s][i];
                        Some((v.x.select_columns(vidx), targets_row(target, &v.labels, vidx)))
                    }
                    _ => None,
                };
                let mut net = Mlp::new(
                    &sizes,
                    Activation::Tanh,
                    Activation::Identity,
                    derive_seed(model.seed, &[label_seed("init"), s as u64, i as u64]),
                )?;
                let opt = mlp_optimizer(&model.optimizer, model.seed, s, i);
                let run = train(&mut net, &batch, val.as_ref().map(|(a, b)| (a, b)), &opt, &cfg.stop())?;
                let summary = MlpSummary {
                    target,
                    batch_len: batch.len(),
                    iterations: run.iterations(),
                    stop: run.stop,
                    final_train_mse: run.final_train_mse,
                    best_val_mse: run.best_val_mse,
                    work: run.iterations() as f64 * work_per_iter(&opt, &sizes, batch.len()),
                };
                Ok((net, summary))
            })
            .collect::<Result<_>>()?;
        let (mlps, summaries): (Vec<Mlp>, Vec<MlpSummary>) = results.into_iter().unzip();
        model.stages.push(mlps);
        if s + 1 < model.configs.len() {
            tr.x = model.stage_outputs(s, &tr.x)?;
            if let Some(v) = va.as_mut() {
                v.x = model.stage_outputs(s, &v.x)?;
            }
        }
        reports.push(StageReport {
            stage: s + 1,
            mlps: summaries,
        });
    }
    Ok(reports)
}

fn plans(
    train_set: &FeatureSet,
    val_set: Option<&FeatureSet>,
    configs: &[StageConfig],
    n_classes: u32,
    seed: u64,
    k: Option<u32>,
) -> Result<(BatchPlan, Option<BatchPlan>)> {
    let plan = plan_batches_restricted(&train_set.labels, n_classes, configs, seed, k)?;
    let val_plan = match val_set {
        Some(v) => Some(plan_batches_restricted(
            &v.labels,
            n_classes,
            configs,
            derive_seed(seed, &[label_seed("validation-batches")]),
            k,
        )?),
        None => None,
    };
    Ok((plan, val_plan))
}

fn check_inputs(train_set: &FeatureSet, val_set: Option<&FeatureSet>, configs: &[StageConfig], n_classes: u32) -> Result<()> {
    if train_set.is_empty() {
        return Err(Error::InvalidParameter("empty training set".into()));
    }
    if configs.is_empty() {
        return Err(Error::InvalidParameter("no stages".into()));
    }
    if let Some(v) = val_set {
        if v.dim != train_set.dim {
            return Err(Error::ShapeMismatch(format!(
                "validation dim {} vs training dim {}",
                v.dim, train_set.dim
            )));
        }
    }
    for c in configs {
        c.validate(n_classes)?;
    }
    Ok(())
}

fn train_with(
    train_set: &FeatureSet,
    val_set: Option<&FeatureSet>,
    configs: Vec<StageConfig>,
    n_classes: u32,
    opt: &Optimizer,
    seed: u64,
    k: Option<u32>,
) -> Result<(MstModel, MstReport)> {
    check_inputs(train_set, val_set, &configs, n_classes)?;
    let (plan, val_plan) = plans(train_set, val_set, &configs, n_classes, seed, k)?;
    let mut model = MstModel {
        stages: Vec::new(),
        n_classes,
        input_dim: train_set.dim,
        configs,
        optimizer: opt.clone(),
        seed,
        stage1_k: k,
    };
    let stages = train_stages(&mut model, 0, train_set, val_set, &plan, val_plan.as_ref())?;
    Ok((model, MstReport { stages }))
}

/// Train every stage in turn. `val_set` drives early stopping and the
/// best-weights restore of each MLP.
pub fn train_mst(
    train_set: &FeatureSet,
    val_set: Option<&FeatureSet>,
    configs: &[StageConfig],
    opt: &Optimizer,
    seed: u64,
) -> Result<(MstModel, MstReport)> {
    let n_classes = train_set.n_classes();
    train_with(train_set, val_set, configs.to_vec(), n_classes, opt, seed, None)
}

/// Stage 1 learns from transmitters `1..=k` only, with its detectors
/// re-spread over those `k`; later stages see all `n`. With `k == n` this
/// is exactly [`train_mst`].
pub fn train_incremental(
    train_set: &FeatureSet,
    val_set: Option<&FeatureSet>,
    configs: &[StageConfig],
    k: u32,
    n: u32,
    opt: &Optimizer,
    seed: u64,
) -> Result<(MstModel, MstReport)> {
    if k == 0 || k > n {
        return Err(Error::InvalidParameter(format!("need 1 <= k <= n, got k={k}, n={n}")));
    }
    if train_set.n_classes() != n {
        return Err(Error::MissingClass(n));
    }
    if k == n {
        return train_mst(train_set, val_set, configs, opt, seed);
    }
    let mut configs = configs.to_vec();
    let first = &mut configs[0];
    if first.targets.iter().any(|t| matches!(t, Target::FireForTx(_))) {
        first.targets = detector_targets(first.n_mlps, k);
    }
    train_with(train_set, val_set, configs, n, opt, seed, Some(k))
}

/// Retrain stages `from..` with the model's own configuration and seed,
/// leaving earlier stages untouched.
pub fn retrain_from(model: &mut MstModel, train_set: &FeatureSet, val_set: Option<&FeatureSet>, from: usize) -> Result<MstReport> {
    if from >= model.configs.len() || model.stages.len() < from {
        return Err(Error::InvalidParameter(format!("cannot retrain from stage index {from}")));
    }
    check_inputs(train_set, val_set, &model.configs, model.n_classes)?;
    let (plan, val_plan) = plans(train_set, val_set, &model.configs, model.n_classes, model.seed, model.stage1_k)?;
    let stages = train_stages(model, from, train_set, val_set, &plan, val_plan.as_ref())?;
    Ok(MstReport { stages })
}
