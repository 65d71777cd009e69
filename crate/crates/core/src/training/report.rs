use serde::{Deserialize, Serialize};

/// Loss components of one epoch (train: size-weighted batch mean; validation:
/// whole validation set).
///
/// Stage 1: `total = factual_mse + alpha * ipm + beta * l2`. The propensity
/// loss enters the optimized objective through gradient reversal and is
/// reported but not included in `total`.
/// Stage 2: `total = factual_mse + gamma * uplift_mse`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub factual_mse: f64,
    pub ipm: f64,
    pub propensity_mse: f64,
    pub l2: f64,
    pub total: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub uplift_mse: Option<f64>,
}

impl LossReport {
    pub fn stage1(factual_mse: f64, ipm: f64, propensity_mse: f64, l2: f64, alpha: f64, beta: f64) -> Self {
        Self {
            factual_mse,
            ipm,
            propensity_mse,
            l2,
            total: factual_mse + alpha * ipm + beta * l2,
            uplift_mse: None,
        }
    }

    pub fn stage2(factual_mse: f64, uplift_mse: f64, gamma: f64) -> Self {
        Self {
            factual_mse,
            total: factual_mse + gamma * uplift_mse,
            uplift_mse: Some(uplift_mse),
            ..Default::default()
        }
    }

    /// Plain regression (baselines).
    pub fn regression(mse: f64) -> Self {
        Self {
            factual_mse: mse,
            total: mse,
            ..Default::default()
        }
    }

    pub(crate) fn scaled_add(&mut self, other: &LossReport, w: f64) {
        self.factual_mse += w * other.factual_mse;
        self.ipm += w * other.ipm;
        self.propensity_mse += w * other.propensity_mse;
        self.l2 += w * other.l2;
        self.total += w * other.total;
        if let Some(u) = other.uplift_mse {
            *self.uplift_mse.get_or_insert(0.0) += w * u;
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.factual_mse, self.ipm, self.propensity_mse, self.l2, self.total]
            .iter()
            .chain(self.uplift_mse.as_ref())
            .all(|x| x.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub train: LossReport,
    pub validation: LossReport,
}
