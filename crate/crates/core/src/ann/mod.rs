//! Dense networks and their trainers.

pub mod complexity;
pub mod first_order;
pub mod linalg;
pub mod lm;
pub mod mlp;
pub mod train;

pub use complexity::{
    complexity_ratios, count_parameters, count_parameters_paper, published_operands, ComplexityRatios, StageCount, MATINV_EXPONENT,
};
pub use first_order::{adam_step, sd_step, AdamConfig, AdamState};
pub use lm::{jacobian, lm_direction, lm_step, output_jacobian, Batch, LmConfig, LmState, Route, StepReport};
pub use mlp::{Activation, ForwardTrace, Layer, Mlp};
pub use train::{train, IterRecord, Optimizer, StopCriteria, StopReason, TrainRun};
