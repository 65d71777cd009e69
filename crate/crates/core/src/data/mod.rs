//! Dataset schema, file IO, treatment normalization, counterfactual sampling
//! and the synthetic generator.

pub mod counterfactual;
pub mod io;
pub mod normalize;
pub mod record;
pub mod schema;
pub mod split;
pub mod synthetic;

pub use counterfactual::{
    isotonic_level, sample_counterfactual, CounterfactualSampler, CounterfactualStrategy, PseudoLabeledRecord,
};
pub use io::{load_dataset, read_dataset, save_dataset, write_dataset, DataFormat, LoadOptions, OovPolicy};
pub use normalize::{normalize_treatment, NormalizationParams};
pub use record::InstanceRecord;
pub use schema::{CategoricalField, FeatureSchema, TreatmentKind, GROUP_KEY_COLUMN, TRUE_ITE_COLUMN};
pub use split::{split_indices, split_train_test};
pub use synthetic::{describe_dgp, generate_synthetic, DgpDescription, DoseShape, SyntheticConfig, COEFFICIENTS};
