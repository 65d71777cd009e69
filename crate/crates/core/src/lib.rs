//! Two-stage context-aware uplift modeling.
//!
//! The crate is organised bottom-up:
//!
//! * [`autodiff`] – a small define-by-run tape with the op set the models need, plus Adam.
//! * [`data`] – schemas, CSV / JSON-lines ingestion, treatment normalization,
//!   counterfactual sampling and a synthetic generator with known effects.
//! * [`model`] – the CAN backbone (feature encoder, context-aware and
//!   treatment-aware attention, propensity head, isotonic output layer).
//! * [`training`] – stage-1 minimax training, pseudo-uplift labels, stage-2
//!   dual-loss training and S-/T-learner baselines.
//! * [`eval`] – uplift curves, AUUC / Qini and their context-stratified forms.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod training;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
