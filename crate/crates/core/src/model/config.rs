use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// CAN-U carries the propensity head and is trained with the balancing
/// losses; CAN-D is the plain backbone trained on pseudo-labels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    #[default]
    #[serde(rename = "can_u")]
    CanU,
    #[serde(rename = "can_d")]
    CanD,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablations {
    /// Drop context tokens; gates see a zero summary.
    pub remove_context: bool,
    /// One dense layer in place of the context gates and attention.
    pub replace_attention_with_dense: bool,
    /// Scalar outcome head on `[h_tal; IE(t)]` in place of the isotonic layer.
    pub replace_isotonic_with_dense: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub embedding_dim: usize,
    /// Hidden widths of the context-summary MLP; its output width is `embedding_dim`.
    pub context_mlp_widths: Vec<usize>,
    /// Hidden widths of the output and propensity heads.
    pub head_mlp_widths: Vec<usize>,
    /// Number of isotonic levels minus one (1 for binary treatment).
    pub isotonic_m: usize,
    pub attention_heads: usize,
    pub variant: Variant,
    pub ablations: Ablations,
    /// One gate value per token instead of one per embedding coordinate.
    pub scalar_gates: bool,
    /// Add the attention input back onto its output.
    pub attention_residual: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 8,
            context_mlp_widths: vec![16],
            head_mlp_widths: vec![16],
            isotonic_m: 1,
            attention_heads: 1,
            variant: Variant::CanU,
            ablations: Ablations::default(),
            scalar_gates: false,
            attention_residual: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.isotonic_m == 0 {
            return Err(Error::Config("isotonic_m must be at least 1".into()));
        }
        if self.embedding_dim == 0 {
            return Err(Error::Config("embedding_dim must be at least 1".into()));
        }
        if self.attention_heads == 0 || !self.embedding_dim.is_multiple_of(self.attention_heads) {
            return Err(Error::Config(format!(
                "attention_heads ({}) must divide embedding_dim ({})",
                self.attention_heads, self.embedding_dim
            )));
        }
        if self.context_mlp_widths.iter().chain(&self.head_mlp_widths).any(|&w| w == 0) {
            return Err(Error::Config("MLP widths must be positive".into()));
        }
        Ok(())
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        Self {
            variant,
            ..self.clone()
        }
    }
}
