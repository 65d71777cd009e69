use serde::{Deserialize, Serialize};

use crate::data::schema::{FeatureSchema, TreatmentKind};
use crate::error::{Error, Result};

/// One observational unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub merchant_cat: Vec<usize>,
    pub merchant_num: Vec<f64>,
    pub context_cat: Vec<usize>,
    pub context_num: Vec<f64>,
    pub treatment: f64,
    pub outcome: f64,
    pub true_ite: Option<f64>,
    pub group_key: Option<String>,
}

impl InstanceRecord {
    /// Checks arity, categorical ranges and treatment domain. `row` is used in errors.
    pub fn validate(&self, schema: &FeatureSchema, row: usize) -> Result<()> {
        let arity = |what: &str, got: usize, want: usize| {
            if got == want {
                Ok(())
            } else {
                Err(Error::Parse {
                    row,
                    message: format!("{what}: expected {want} values, got {got}"),
                })
            }
        };
        arity("merchant categorical", self.merchant_cat.len(), schema.merchant_categorical.len())?;
        arity("merchant numeric", self.merchant_num.len(), schema.merchant_numeric.len())?;
        arity("context categorical", self.context_cat.len(), schema.context_categorical.len())?;
        arity("context numeric", self.context_num.len(), schema.context_numeric.len())?;

        let cats = self
            .merchant_cat
            .iter()
            .zip(&schema.merchant_categorical)
            .chain(self.context_cat.iter().zip(&schema.context_categorical));
        for (&value, field) in cats {
            if value >= field.cardinality {
                return Err(Error::Oov {
                    row,
                    field: field.name.clone(),
                    value: value as i64,
                    cardinality: field.cardinality,
                });
            }
        }
        let nums = self.merchant_num.iter().chain(&self.context_num);
        if nums.chain([&self.outcome]).any(|v| !v.is_finite()) {
            return Err(Error::Parse {
                row,
                message: "non-finite numeric value".into(),
            });
        }
        match schema.treatment_kind {
            TreatmentKind::Binary if self.treatment != 0.0 && self.treatment != 1.0 => Err(Error::Parse {
                row,
                message: format!("binary treatment must be 0 or 1, got {}", self.treatment),
            }),
            _ if !self.treatment.is_finite() => Err(Error::Parse {
                row,
                message: "non-finite treatment".into(),
            }),
            _ => Ok(()),
        }
    }

    /// Same record with context features removed.
    pub fn without_context(&self) -> Self {
        Self {
            context_cat: Vec::new(),
            context_num: Vec::new(),
            ..self.clone()
        }
    }
}
