//! The CAN backbone with its CAN-U / CAN-D variants and ablation switches,
//! plus the checkpoint format.

pub mod can;
pub mod checkpoint;
pub mod config;
pub mod gradcheck;
pub mod isotonic;

pub use can::{CanModel, EncodedTokens, Forward, Linear, Mlp, ModelInputs};
pub use checkpoint::{checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, read_header, save_checkpoint};
pub use gradcheck::check_can_gradients;
pub use config::{Ablations, ModelConfig, Variant};
pub use isotonic::{isotonic_encode, outcome_from_levels, prefix_sums, uplift_from_levels};
