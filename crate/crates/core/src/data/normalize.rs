use serde::{Deserialize, Serialize};

use crate::data::record::InstanceRecord;
use crate::data::schema::TreatmentKind;
use crate::error::{Error, Result};

/// Min/max of the training treatments. Continuous values map onto `[0, 1]`,
/// clamping anything outside the training range; binary values pass through.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub kind: TreatmentKind,
    pub min: f64,
    pub max: f64,
}

impl NormalizationParams {
    pub fn identity(kind: TreatmentKind) -> Self {
        Self { kind, min: 0.0, max: 1.0 }
    }

    pub fn apply(&self, t: f64) -> f64 {
        match self.kind {
            TreatmentKind::Binary => t,
            TreatmentKind::Continuous => ((t - self.min) / (self.max - self.min)).clamp(0.0, 1.0),
        }
    }

    pub fn invert(&self, u: f64) -> f64 {
        match self.kind {
            TreatmentKind::Binary => u,
            TreatmentKind::Continuous => self.min + u * (self.max - self.min),
        }
    }

    pub fn apply_all(&self, records: &[InstanceRecord]) -> Vec<InstanceRecord> {
        records
            .iter()
            .map(|r| InstanceRecord {
                treatment: self.apply(r.treatment),
                ..r.clone()
            })
            .collect()
    }
}

/// Fits normalization on `records` and returns the normalized copy.
pub fn normalize_treatment(
    records: &[InstanceRecord],
    kind: TreatmentKind,
) -> Result<(Vec<InstanceRecord>, NormalizationParams)> {
    let (min, max) = records
        .iter()
        .map(|r| r.treatment)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| (lo.min(t), hi.max(t)));
    if records.is_empty() || !(max > min) {
        return Err(Error::DegenerateTreatment);
    }
    let params = match kind {
        TreatmentKind::Binary => NormalizationParams::identity(kind),
        TreatmentKind::Continuous => NormalizationParams { kind, min, max },
    };
    Ok((params.apply_all(records), params))
}
