//! Two-stage training of CAN-U and CAN-D, plus the meta-learner baselines.

pub mod balance;
pub mod baselines;
pub mod config;
pub mod early_stopping;
pub mod report;
pub mod stage1;
pub mod stage2;
pub mod trainer;

pub use baselines::{train_baseline, Baseline, BaselineConfig, BaselineKind, MlpRegressor, UpliftModel};
pub use config::{MmdBandwidth, MmdKernel, TrainConfig};
pub use early_stopping::{EarlyStopping, StopDecision};
pub use report::{EpochReport, LossReport};
pub use stage1::{stage1_train, stage1_train_normalized, StageArtifacts, TrainingLog};
pub use stage2::{
    generate_pseudo_labels, pseudo_labels_from, stage2_from_can_u, stage2_train, train_two_stage, TwoStageArtifacts,
};
pub use trainer::{fit, FitResult, HasParams, Objective};
