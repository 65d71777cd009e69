//! Uplift-ranking metrics: uplift and Qini curves, their normalized areas,
//! context-stratified weighted forms, continuous-treatment binning and
//! gain-curve export.

pub mod continuous;
pub mod curve;
pub mod export;
pub mod report;
pub mod stratified;

pub use continuous::{assign_bins, binarize_continuous, mean_over_pairs, BinPair, Binarized, SkippedPair, TreatmentBin};
pub use curve::{auuc, qini, qini_curve, uplift_curve, uplift_rmse, GainCurve, ScoredRecord, TieMode};
pub use export::{export_gain_curves, read_gain_curves, write_gain_curves};
pub use report::{evaluate_binarized, evaluate_scored, EvalOptions, EvalReport, GroupRow, ModelEvaluation};
pub use stratified::{group_records, stratified_metric, weighted_mean, Exclusion, GroupMetric, Metric, Stratified, DEFAULT_MIN_GROUP_SIZE};
