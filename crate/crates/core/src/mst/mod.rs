//! Multi-stage training: stages of small MLPs, each stage fed by the
//! frozen outputs of the one before, fused by majority vote at the end.

pub mod batches;
pub mod bundle;
pub mod config;
pub mod eval;
pub mod model;
pub mod train;

pub use batches::{plan_batches, plan_batches_restricted, BatchPlan};
pub use bundle::{read_model, write_model, LoadedModel};
pub use config::{
    config_hash, cycling_targets, default_config_1st, default_config_2nd, detector_targets, scale_mlps, StageConfig, Target,
};
pub use eval::{evaluate, ConfusionMatrix, Evaluation};
pub use model::{classify, fuse_votes, MstModel};
pub use train::{retrain_from, train_incremental, train_mst, MlpSummary, MstReport, StageReport};
