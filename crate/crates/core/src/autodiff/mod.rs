//! Minimal reverse-mode engine and optimizer used by the CAN models.

mod adam;
pub mod gradcheck;
mod params;
mod tape;

pub use adam::{AdamConfig, AdamState};
pub use params::{ParamEntry, ParamId, ParamKind, ParamStore};
pub use tape::{rbf_mmd2, Gradients, Reduction, Tape, Var};
