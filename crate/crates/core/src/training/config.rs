use serde::{Deserialize, Serialize};

use crate::autodiff::AdamConfig;
use crate::data::CounterfactualStrategy;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MmdKernel {
    #[default]
    Rbf,
}

/// RBF bandwidth: per-batch median pairwise distance, or a fixed value.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MmdBandwidth {
    #[default]
    Median,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Gradient-reversal weight on the propensity loss.
    pub lambda_adv: f64,
    /// Weight of the MMD balancing term.
    pub alpha_ipm: f64,
    /// Weight of the l2 penalty on weight matrices.
    pub beta_l2: f64,
    /// Weight of the pseudo-uplift term in stage 2.
    pub gamma_uplift: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    pub seed: u64,
    pub mmd_kernel: MmdKernel,
    pub mmd_bandwidth: MmdBandwidth,
    pub cf_strategy: CounterfactualStrategy,
    /// Redraw counterfactuals and pseudo-labels every stage-2 epoch.
    pub resample_counterfactuals: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            lambda_adv: 0.5,
            alpha_ipm: 0.01,
            beta_l2: 1e-5,
            gamma_uplift: 0.6,
            batch_size: 256,
            max_epochs: 30,
            patience: 3,
            validation_fraction: 0.1,
            seed: 0,
            mmd_kernel: MmdKernel::Rbf,
            mmd_bandwidth: MmdBandwidth::Median,
            cf_strategy: CounterfactualStrategy::Uniform,
            resample_counterfactuals: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_adv", self.lambda_adv),
            ("alpha_ipm", self.alpha_ipm),
            ("beta_l2", self.beta_l2),
            ("gamma_uplift", self.gamma_uplift),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("invalid Adam hyperparameters".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size and max_epochs must be positive".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config("validation_fraction must lie in (0, 1)".into()));
        }
        if let MmdBandwidth::Fixed(bw) = self.mmd_bandwidth {
            if !(bw > 0.0 && bw.is_finite()) {
                return Err(Error::Config("fixed MMD bandwidth must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}
