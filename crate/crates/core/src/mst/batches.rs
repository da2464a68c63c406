use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::{StageConfig, Target};
use crate::error::{Error, Result};
use crate::seed::{label_seed, rng};

/// Training sample indices for every MLP of every stage. Batches may overlap.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub stages: Vec<Vec<Vec<usize>>>,
}

/// Stage-1 detectors for transmitter `t` get every positive of `t` plus as
/// many seeded random negatives; class-index MLPs in stage 1 and all later
/// stages get the full set. With `stage1_k = Some(k)` stage 1 only sees
/// transmitters `1..=k`.
pub fn plan_batches_restricted(
    labels: &[u32],
    n_classes: u32,
    configs: &[StageConfig],
    seed: u64,
    stage1_k: Option<u32>,
) -> Result<BatchPlan> {
    let k = stage1_k.unwrap_or(n_classes);
    let stage1: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] <= k).collect();
    let all: Vec<usize> = (0..labels.len()).collect();
    let mut stages = Vec::with_capacity(configs.len());
    for (s, cfg) in configs.iter().enumerate() {
        let pool = if s == 0 { &stage1 } else { &all };
        if s > 0 || cfg.targets.contains(&Target::ClassIndex) {
            let needed = if s == 0 { k } else { n_classes };
            for c in 1..=needed {
                if !pool.iter().any(|&i| labels[i] == c) {
                    return Err(Error::MissingClass(c));
                }
            }
        }
        let mut mlps = Vec::with_capacity(cfg.n_mlps);
        for (i, target) in cfg.targets.iter().enumerate() {
            match (s, target) {
                (0, Target::FireForTx(t)) => {
                    let pos: Vec<usize> = pool.iter().copied().filter(|&j| labels[j] == *t).collect();
                    if pos.is_empty() {
                        return Err(Error::MissingClass(*t));
                    }
                    let mut neg: Vec<usize> = pool.iter().copied().filter(|&j| labels[j] != *t).collect();
                    neg.shuffle(&mut rng(seed, &[label_seed("batch"), s as u64, i as u64]));
                    neg.truncate(pos.len());
                    let mut idx = pos;
                    idx.extend(neg);
                    idx.sort_unstable();
                    mlps.push(idx);
                }
                _ => mlps.push(pool.clone()),
            }
        }
        stages.push(mlps);
    }
    Ok(BatchPlan { stages })
}

pub fn plan_batches(labels: &[u32], n_classes: u32, configs: &[StageConfig], seed: u64) -> Result<BatchPlan> {
    plan_batches_restricted(labels, n_classes, configs, seed, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mst::config::default_config_2nd;

    fn labels(per: usize) -> Vec<u32> {
        (0..12 * per).map(|i| (i % 12) as u32 + 1).collect()
    }

    #[test]
    fn balanced_stage_one_and_full_later_stages() {
        let l = labels(100);
        let cfg = default_config_2nd(12).unwrap();
        let plan = plan_batches(&l, 12, &cfg, 5).unwrap();
        for (i, b) in plan.stages[0].iter().enumerate() {
            let t = (i / 5) as u32 + 1;
            assert_eq!(b.len(), 200);
            assert_eq!(b.iter().filter(|&&j| l[j] == t).count(), 100);
        }
        assert_eq!(plan.stages[1][0].len(), l.len());
        assert_eq!(plan, plan_batches(&l, 12, &cfg, 5).unwrap());
        assert_ne!(plan, plan_batches(&l, 12, &cfg, 6).unwrap());
    }

    #[test]
    fn restricted_stage_one_and_missing_classes() {
        let l = labels(10);
        let mut cfg = default_config_2nd(12).unwrap();
        cfg[0].targets = crate::mst::config::detector_targets(60, 6);
        let plan = plan_batches_restricted(&l, 12, &cfg, 1, Some(6)).unwrap();
        assert!(plan.stages[0].iter().flatten().all(|&j| l[j] <= 6));
        assert!(plan.stages[1][0].iter().any(|&j| l[j] == 12));
        let short: Vec<u32> = l.iter().copied().filter(|&x| x != 9).collect();
        assert!(matches!(plan_batches(&short, 12, &cfg, 1), Err(Error::MissingClass(9))));
    }
}
