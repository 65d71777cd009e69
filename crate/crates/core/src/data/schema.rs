use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoricalField {
    pub name: String,
    pub cardinality: usize,
}

impl CategoricalField {
    pub fn new(name: impl Into<String>, cardinality: usize) -> Self {
        Self {
            name: name.into(),
            cardinality,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreatmentKind {
    Binary,
    Continuous,
}

/// Column layout of a dataset. Supplied as a separate JSON document.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSchema {
    #[serde(default)]
    pub merchant_categorical: Vec<CategoricalField>,
    #[serde(default)]
    pub merchant_numeric: Vec<String>,
    #[serde(default)]
    pub context_categorical: Vec<CategoricalField>,
    #[serde(default)]
    pub context_numeric: Vec<String>,
    pub treatment_kind: TreatmentKind,
    #[serde(default = "default_treatment_name")]
    pub treatment_name: String,
    pub outcome_name: String,
}

fn default_treatment_name() -> String {
    "treatment".to_string()
}

/// Optional column holding the known effect on synthetic data.
pub const TRUE_ITE_COLUMN: &str = "true_ite";
/// Optional column holding the context stratum label.
pub const GROUP_KEY_COLUMN: &str = "group_key";

impl FeatureSchema {
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for name in self.column_names() {
            if name.is_empty() {
                return Err(Error::Schema("empty column name".into()));
            }
            if name == TRUE_ITE_COLUMN || name == GROUP_KEY_COLUMN {
                return Err(Error::Schema(format!("`{name}` is a reserved column name")));
            }
            if !seen.insert(name.to_string()) {
                return Err(Error::Schema(format!("duplicate column name `{name}`")));
            }
        }
        for f in self.merchant_categorical.iter().chain(&self.context_categorical) {
            if f.cardinality < 2 {
                return Err(Error::Schema(format!(
                    "categorical field `{}` has cardinality {}, need at least 2",
                    f.name, f.cardinality
                )));
            }
        }
        Ok(())
    }

    /// Feature, treatment and outcome column names in file order.
    pub fn column_names(&self) -> Vec<&str> {
        let mut names: Vec<&str> = Vec::new();
        names.extend(self.merchant_categorical.iter().map(|f| f.name.as_str()));
        names.extend(self.merchant_numeric.iter().map(String::as_str));
        names.extend(self.context_categorical.iter().map(|f| f.name.as_str()));
        names.extend(self.context_numeric.iter().map(String::as_str));
        names.push(&self.treatment_name);
        names.push(&self.outcome_name);
        names
    }

    pub fn merchant_field_count(&self) -> usize {
        self.merchant_categorical.len() + self.merchant_numeric.len()
    }

    pub fn context_field_count(&self) -> usize {
        self.context_categorical.len() + self.context_numeric.len()
    }

    pub fn has_context(&self) -> bool {
        self.context_field_count() > 0
    }

    /// The same schema with every context field dropped.
    pub fn without_context(&self) -> Self {
        Self {
            context_categorical: Vec::new(),
            context_numeric: Vec::new(),
            ..self.clone()
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let schema: Self = serde_json::from_str(&text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}
