//! Synthetic biased-assignment data with known individual effects.
//!
//! Per record, with every coefficient taken from [`COEFFICIENTS`]:
//!
//! ```text
//! x_j ~ N(0,1)            merchant numerics, j < n_merchant_numeric (max 6)
//! c_k ~ U{0..card_k}      merchant categoricals, cards [5, 4] (max 2)
//! district ~ U{0..3}, period ~ U{0..4}, demand ~ N(0,1)
//!
//! s        = sum sel_num[j] x_j + sel_mcat0[c_0] + sel_district[district] + sel_demand demand
//! binary:     t ~ Bernoulli(sigmoid(bias_strength s))
//! continuous: t ~ Beta(mu k, (1 - mu) k), mu = sigmoid(bias_strength s), k = beta_concentration
//!
//! baseline = base0 + sum base_num[j] x_j + base_mcat0[c_0] + base_mcat1[c_1]
//!            + base_district[district] + base_period[period] + base_demand demand
//! tau0     = softplus(eff0 + sum eff_num[j] x_j + eff_mcat1[c_1])
//! m        = tanh(mod_district[district] + mod_period[period] + mod_demand demand)
//! tau      = tau0 (1 + context_modulation m)
//! y        = baseline + tau g(t) + noise_sd z,  z ~ N(0,1)
//! true_ite = tau (g(1) - g(0) = 1 for both dose shapes)
//! ```
//!
//! Absent merchant fields contribute nothing. Draws happen in the order listed,
//! and `z` is drawn even when `noise_sd = 0`, so the stream does not depend on it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::record::InstanceRecord;
use crate::data::schema::{CategoricalField, FeatureSchema, TreatmentKind};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoseShape {
    #[default]
    Linear,
    /// `1 - (1 - t)^2`: diminishing returns.
    Concave,
}

impl DoseShape {
    pub fn apply(self, t: f64) -> f64 {
        match self {
            DoseShape::Linear => t,
            DoseShape::Concave => 1.0 - (1.0 - t) * (1.0 - t),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub n: usize,
    pub n_merchant_numeric: usize,
    pub n_merchant_categorical: usize,
    pub treatment_kind: TreatmentKind,
    pub bias_strength: f64,
    pub context_modulation: f64,
    pub noise_sd: f64,
    pub dose_shape: DoseShape,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n: 10_000,
            n_merchant_numeric: 6,
            n_merchant_categorical: 2,
            treatment_kind: TreatmentKind::Binary,
            bias_strength: 1.0,
            context_modulation: 0.8,
            noise_sd: 1.0,
            dose_shape: DoseShape::Linear,
            seed: 0,
        }
    }
}

/// Fixed coefficient tables of the generator.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DgpCoefficients {
    pub merchant_categorical_cardinalities: [usize; 2],
    pub district_cardinality: usize,
    pub period_cardinality: usize,
    pub sel_num: [f64; 6],
    pub sel_mcat0: [f64; 5],
    pub sel_district: [f64; 3],
    pub sel_demand: f64,
    pub base0: f64,
    pub base_num: [f64; 6],
    pub base_mcat0: [f64; 5],
    pub base_mcat1: [f64; 4],
    pub base_district: [f64; 3],
    pub base_period: [f64; 4],
    pub base_demand: f64,
    pub eff0: f64,
    pub eff_num: [f64; 6],
    pub eff_mcat1: [f64; 4],
    pub mod_district: [f64; 3],
    pub mod_period: [f64; 4],
    pub mod_demand: f64,
    pub beta_concentration: f64,
}

pub const COEFFICIENTS: DgpCoefficients = DgpCoefficients {
    merchant_categorical_cardinalities: [5, 4],
    district_cardinality: 3,
    period_cardinality: 4,
    sel_num: [0.8, -0.6, 0.5, 0.0, 0.3, -0.2],
    sel_mcat0: [-0.4, 0.0, 0.3, 0.5, -0.2],
    sel_district: [0.3, 0.0, -0.3],
    sel_demand: 0.5,
    base0: 5.0,
    base_num: [1.0, 0.5, -0.7, 0.4, 0.0, 0.3],
    base_mcat0: [0.5, -0.3, 0.0, 0.8, -0.5],
    base_mcat1: [0.2, -0.2, 0.4, 0.0],
    base_district: [0.8, 0.0, -0.6],
    base_period: [0.3, -0.2, 0.5, -0.4],
    base_demand: 0.9,
    eff0: 0.3,
    eff_num: [0.0, 0.6, 0.5, -0.4, 0.3, 0.0],
    eff_mcat1: [0.4, -0.3, 0.0, 0.6],
    mod_district: [-0.6, 0.2, 0.7],
    mod_period: [0.5, -0.5, 0.3, -0.3],
    mod_demand: -1.2,
    beta_concentration: 6.0,
};

pub const MERCHANT_NUMERIC_MAX: usize = 6;
pub const MERCHANT_CATEGORICAL_MAX: usize = 2;

/// JSON document printed by `describe-dgp`.
#[derive(Clone, Debug, Serialize)]
pub struct DgpDescription {
    pub equations: Vec<&'static str>,
    pub coefficients: DgpCoefficients,
}

pub fn describe_dgp() -> DgpDescription {
    DgpDescription {
        equations: vec![
            "x_j ~ N(0,1) for j < n_merchant_numeric; c_k ~ U{0..card_k} for k < n_merchant_categorical",
            "district ~ U{0..3}; period ~ U{0..4}; demand ~ N(0,1)",
            "s = sum_j sel_num[j] x_j + sel_mcat0[c_0] + sel_district[district] + sel_demand * demand",
            "binary: t ~ Bernoulli(sigmoid(bias_strength * s))",
            "continuous: t ~ Beta(mu * k, (1 - mu) * k), mu = sigmoid(bias_strength * s), k = beta_concentration",
            "baseline = base0 + sum_j base_num[j] x_j + base_mcat0[c_0] + base_mcat1[c_1] + base_district[district] + base_period[period] + base_demand * demand",
            "tau0 = softplus(eff0 + sum_j eff_num[j] x_j + eff_mcat1[c_1])",
            "m = tanh(mod_district[district] + mod_period[period] + mod_demand * demand)",
            "tau = tau0 * (1 + context_modulation * m)",
            "g(t) = t (linear) or 1 - (1 - t)^2 (concave)",
            "y = baseline + tau * g(t) + noise_sd * z, z ~ N(0,1)",
            "true_ite = tau; group_key = \"d{district}-p{period}\"",
            "absent merchant fields contribute 0; draw order: x, c, district, period, demand, t, z",
        ],
        coefficients: COEFFICIENTS,
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("synthetic n must be at least 1".into()));
        }
        if self.n_merchant_numeric > MERCHANT_NUMERIC_MAX {
            return Err(Error::Config(format!(
                "at most {MERCHANT_NUMERIC_MAX} merchant numeric features"
            )));
        }
        if self.n_merchant_categorical > MERCHANT_CATEGORICAL_MAX {
            return Err(Error::Config(format!(
                "at most {MERCHANT_CATEGORICAL_MAX} merchant categorical features"
            )));
        }
        for (name, v) in [
            ("bias_strength", self.bias_strength),
            ("context_modulation", self.context_modulation),
            ("noise_sd", self.noise_sd),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn schema(&self) -> FeatureSchema {
        let cards = COEFFICIENTS.merchant_categorical_cardinalities;
        FeatureSchema {
            merchant_categorical: (0..self.n_merchant_categorical)
                .map(|k| CategoricalField::new(format!("m_cat{k}"), cards[k]))
                .collect(),
            merchant_numeric: (0..self.n_merchant_numeric).map(|j| format!("m_num{j}")).collect(),
            context_categorical: vec![
                CategoricalField::new("district", COEFFICIENTS.district_cardinality),
                CategoricalField::new("period", COEFFICIENTS.period_cardinality),
            ],
            context_numeric: vec!["demand".into()],
            treatment_kind: self.treatment_kind,
            treatment_name: "treatment".into(),
            outcome_name: "outcome".into(),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Selection score `s` of a record's features.
pub fn selection_score(r: &InstanceRecord) -> f64 {
    let c = &COEFFICIENTS;
    let mut s: f64 = r.merchant_num.iter().zip(c.sel_num).map(|(x, w)| x * w).sum();
    if let Some(&c0) = r.merchant_cat.first() {
        s += c.sel_mcat0[c0];
    }
    s + c.sel_district[r.context_cat[0]] + c.sel_demand * r.context_num[0]
}

pub fn baseline(r: &InstanceRecord) -> f64 {
    let c = &COEFFICIENTS;
    let mut b = c.base0 + r.merchant_num.iter().zip(c.base_num).map(|(x, w)| x * w).sum::<f64>();
    if let Some(&c0) = r.merchant_cat.first() {
        b += c.base_mcat0[c0];
    }
    if let Some(&c1) = r.merchant_cat.get(1) {
        b += c.base_mcat1[c1];
    }
    b + c.base_district[r.context_cat[0]] + c.base_period[r.context_cat[1]] + c.base_demand * r.context_num[0]
}

/// Context-modulated effect scale `tau`.
pub fn effect_scale(r: &InstanceRecord, context_modulation: f64) -> f64 {
    let c = &COEFFICIENTS;
    let mut e = c.eff0 + r.merchant_num.iter().zip(c.eff_num).map(|(x, w)| x * w).sum::<f64>();
    if let Some(&c1) = r.merchant_cat.get(1) {
        e += c.eff_mcat1[c1];
    }
    let m = (c.mod_district[r.context_cat[0]] + c.mod_period[r.context_cat[1]] + c.mod_demand * r.context_num[0]).tanh();
    softplus(e) * (1.0 + context_modulation * m)
}

/// Noise-free outcome at treatment `t`.
pub fn structural_outcome(r: &InstanceRecord, t: f64, config: &SyntheticConfig) -> f64 {
    baseline(r) + effect_scale(r, config.context_modulation) * config.dose_shape.apply(t)
}

pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Vec<InstanceRecord>> {
    config.validate()?;
    let c = &COEFFICIENTS;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = Vec::with_capacity(config.n);
    for _ in 0..config.n {
        let merchant_num: Vec<f64> = (0..config.n_merchant_numeric)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let merchant_cat: Vec<usize> = (0..config.n_merchant_categorical)
            .map(|k| rng.random_range(0..c.merchant_categorical_cardinalities[k]))
            .collect();
        let district = rng.random_range(0..c.district_cardinality);
        let period = rng.random_range(0..c.period_cardinality);
        let demand: f64 = rng.sample(StandardNormal);
        let mut r = InstanceRecord {
            merchant_cat,
            merchant_num,
            context_cat: vec![district, period],
            context_num: vec![demand],
            treatment: 0.0,
            outcome: 0.0,
            true_ite: None,
            group_key: Some(format!("d{district}-p{period}")),
        };
        let mu = sigmoid(config.bias_strength * selection_score(&r));
        r.treatment = match config.treatment_kind {
            TreatmentKind::Binary => f64::from(u8::from(rng.random_bool(mu))),
            TreatmentKind::Continuous => {
                let k = c.beta_concentration;
                let beta = Beta::new(mu * k, (1.0 - mu) * k)
                    .map_err(|e| Error::Config(format!("treatment distribution: {e}")))?;
                beta.sample(&mut rng)
            }
        };
        let z: f64 = rng.sample(StandardNormal);
        let tau = effect_scale(&r, config.context_modulation);
        r.outcome = baseline(&r) + tau * config.dose_shape.apply(r.treatment) + config.noise_sd * z;
        r.true_ite = Some(tau);
        out.push(r);
    }
    Ok(out)
}
