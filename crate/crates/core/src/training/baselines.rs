//! S-learner and T-learner meta-learner baselines on plain MLPs, and the
//! scoring interface shared with the CAN models.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Reduction, Tape, Var};
use crate::data::{normalize_treatment, FeatureSchema, InstanceRecord, NormalizationParams, TreatmentKind};
use crate::error::{Error, Result};
use crate::model::can::INFERENCE_CHUNK;
use crate::model::{CanModel, Mlp, Variant};
use crate::tensor::Tensor;
use crate::training::config::TrainConfig;
use crate::training::report::{EpochReport, LossReport};
use crate::training::stage1::{carve_validation, column};
use crate::training::trainer::{fit, HasParams, Objective};

/// Scores uplift between raw (unnormalized) treatment values.
pub trait UpliftModel {
    /// `uplift[i] = y(records[i], t_to[i]) - y(records[i], t_from[i])`.
    fn uplift(&self, records: &[InstanceRecord], t_from: &[f64], t_to: &[f64]) -> Result<Vec<f64>>;
}

fn check_lengths(n: usize, a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != n || b.len() != n {
        return Err(Error::Contract(format!(
            "{n} records but {} / {} treatment values",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

impl UpliftModel for CanModel {
    fn uplift(&self, records: &[InstanceRecord], t_from: &[f64], t_to: &[f64]) -> Result<Vec<f64>> {
        check_lengths(records.len(), t_from, t_to)?;
        let norm = self.normalization;
        let recs = norm.apply_all(records);
        let from: Vec<f64> = t_from.iter().map(|&t| norm.apply(t)).collect();
        let to: Vec<f64> = t_to.iter().map(|&t| norm.apply(t)).collect();
        match self.variant() {
            // Only the factual level segment of CAN-U is trained, so its
            // uplift compares the two treatment instances.
            Variant::CanU => self.predict_instance_uplifts(&recs, &from, &to),
            Variant::CanD => {
                let out = self.predict_outcomes_at(&recs, &[&from, &to])?;
                Ok(out[1].iter().zip(&out[0]).map(|(b, a)| b - a).collect())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub hidden: Vec<usize>,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { hidden: vec![32, 16] }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    SLearner,
    TLearner,
}

/// One-hot categoricals followed by the numeric features as given.
#[derive(Clone, Debug)]
pub struct FeatureEncoder {
    cardinalities: Vec<usize>,
    numeric: usize,
}

impl FeatureEncoder {
    pub fn new(schema: &FeatureSchema) -> Self {
        let cardinalities = schema
            .merchant_categorical
            .iter()
            .chain(&schema.context_categorical)
            .map(|f| f.cardinality)
            .collect();
        Self {
            cardinalities,
            numeric: schema.merchant_numeric.len() + schema.context_numeric.len(),
        }
    }

    pub fn width(&self) -> usize {
        self.cardinalities.iter().sum::<usize>() + self.numeric
    }

    pub fn encode_into(&self, r: &InstanceRecord, out: &mut Vec<f64>) -> Result<()> {
        for (&level, &card) in r.merchant_cat.iter().chain(&r.context_cat).zip(&self.cardinalities) {
            if level >= card {
                return Err(Error::Contract(format!("categorical level {level} outside cardinality {card}")));
            }
            out.extend((0..card).map(|k| if k == level { 1.0 } else { 0.0 }));
        }
        out.extend(r.merchant_num.iter().chain(&r.context_num));
        Ok(())
    }
}

/// MLP regressor on encoded features, optionally with the treatment appended.
#[derive(Clone, Debug)]
pub struct MlpRegressor {
    encoder: FeatureEncoder,
    with_treatment: bool,
    mlp: Mlp,
    params: ParamStore,
}

impl HasParams for MlpRegressor {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }
}

impl MlpRegressor {
    pub fn new(schema: &FeatureSchema, with_treatment: bool, cfg: &BaselineConfig, seed: u64) -> Self {
        let encoder = FeatureEncoder::new(schema);
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = encoder.width() + usize::from(with_treatment);
        let mlp = Mlp::new(&mut params, "mlp", input, &cfg.hidden, 1, &mut rng);
        Self {
            encoder,
            with_treatment,
            mlp,
            params,
        }
    }

    /// `ts` (normalized) is used only when the model takes the treatment.
    fn design(&self, records: &[&InstanceRecord], ts: &[f64]) -> Result<Tensor> {
        let width = self.encoder.width() + usize::from(self.with_treatment);
        let mut data = Vec::with_capacity(records.len() * width);
        for (i, r) in records.iter().enumerate() {
            self.encoder.encode_into(r, &mut data)?;
            if self.with_treatment {
                data.push(ts[i]);
            }
        }
        Tensor::matrix(records.len(), width, data)
    }

    fn forward(&self, tape: &mut Tape, records: &[&InstanceRecord], ts: &[f64]) -> Result<Var> {
        let x = tape.leaf(self.design(records, ts)?);
        self.mlp.apply(tape, &self.params, x)
    }

    /// Predictions at normalized treatments `ts`.
    pub fn predict(&self, records: &[InstanceRecord], ts: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(records.len());
        for (c, chunk) in records.chunks(INFERENCE_CHUNK).enumerate() {
            let refs: Vec<&InstanceRecord> = chunk.iter().collect();
            let lo = c * INFERENCE_CHUNK;
            let t = if self.with_treatment { &ts[lo..lo + chunk.len()] } else { &[][..] };
            let mut tape = Tape::new();
            let y = self.forward(&mut tape, &refs, t)?;
            out.extend_from_slice(tape.value(y).data());
        }
        Ok(out)
    }

    /// Mean squared error on normalized records at their own treatments.
    pub fn mse(&self, records: &[InstanceRecord]) -> Result<f64> {
        let ts: Vec<f64> = records.iter().map(|r| r.treatment).collect();
        let pred = self.predict(records, &ts)?;
        Ok(pred.iter().zip(records).map(|(p, r)| (p - r.outcome).powi(2)).sum::<f64>() / records.len() as f64)
    }
}

struct RegressionObjective<'a> {
    train: &'a [InstanceRecord],
    validation: &'a [InstanceRecord],
}

impl Objective<MlpRegressor> for RegressionObjective<'_> {
    fn batch(&mut self, model: &MlpRegressor, idx: &[usize], tape: &mut Tape) -> Result<(Var, LossReport)> {
        let recs: Vec<&InstanceRecord> = idx.iter().map(|&i| &self.train[i]).collect();
        let ts: Vec<f64> = recs.iter().map(|r| r.treatment).collect();
        let y_hat = model.forward(tape, &recs, &ts)?;
        let y = column(tape, recs.iter().map(|r| r.outcome).collect())?;
        let loss = tape.squared_error(y_hat, y, Reduction::Mean)?;
        Ok((loss, LossReport::regression(tape.value(loss).item())))
    }

    fn validate(&mut self, model: &MlpRegressor) -> Result<LossReport> {
        Ok(LossReport::regression(model.mse(self.validation)?))
    }

    fn monitor(&self, validation: &LossReport) -> f64 {
        validation.factual_mse
    }

    fn finalize(&self, r: LossReport) -> LossReport {
        LossReport::regression(r.factual_mse)
    }
}

/// Fits a regressor on normalized records with validation-based early stopping.
pub fn fit_regressor(
    records: &[InstanceRecord],
    schema: &FeatureSchema,
    with_treatment: bool,
    baseline: &BaselineConfig,
    cfg: &TrainConfig,
) -> Result<(MlpRegressor, Vec<EpochReport>)> {
    cfg.validate()?;
    let (train, validation) = carve_validation(records, cfg)?;
    let mut model = MlpRegressor::new(schema, with_treatment, baseline, cfg.seed);
    let mut objective = RegressionObjective {
        train: &train,
        validation: &validation,
    };
    let result = fit(&mut model, train.len(), cfg, &mut objective)?;
    Ok((model, result.curve))
}

/// A trained S- or T-learner.
#[derive(Clone, Debug)]
pub enum Baseline {
    SLearner {
        model: MlpRegressor,
        normalization: NormalizationParams,
    },
    TLearner {
        control: MlpRegressor,
        treated: MlpRegressor,
    },
}

/// Trains a baseline on raw records. T-learner needs binary treatment with
/// both arms present.
pub fn train_baseline(
    kind: BaselineKind,
    records: &[InstanceRecord],
    schema: &FeatureSchema,
    baseline: &BaselineConfig,
    cfg: &TrainConfig,
) -> Result<Baseline> {
    match kind {
        BaselineKind::SLearner => {
            let (normalized, normalization) = normalize_treatment(records, schema.treatment_kind)?;
            let (model, _) = fit_regressor(&normalized, schema, true, baseline, cfg)?;
            Ok(Baseline::SLearner { model, normalization })
        }
        BaselineKind::TLearner => {
            if schema.treatment_kind != TreatmentKind::Binary {
                return Err(Error::Unsupported("T-learner needs a binary treatment".into()));
            }
            let (treated, control): (Vec<InstanceRecord>, Vec<InstanceRecord>) =
                records.iter().cloned().partition(|r| r.treatment == 1.0);
            if treated.is_empty() || control.is_empty() {
                return Err(Error::DegenerateTreatment);
            }
            let (control, _) = fit_regressor(&control, schema, false, baseline, cfg)?;
            let (treated, _) = fit_regressor(&treated, schema, false, baseline, cfg)?;
            Ok(Baseline::TLearner { control, treated })
        }
    }
}

impl UpliftModel for Baseline {
    fn uplift(&self, records: &[InstanceRecord], t_from: &[f64], t_to: &[f64]) -> Result<Vec<f64>> {
        check_lengths(records.len(), t_from, t_to)?;
        match self {
            Baseline::SLearner { model, normalization } => {
                let from: Vec<f64> = t_from.iter().map(|&t| normalization.apply(t)).collect();
                let to: Vec<f64> = t_to.iter().map(|&t| normalization.apply(t)).collect();
                let a = model.predict(records, &from)?;
                let b = model.predict(records, &to)?;
                Ok(b.iter().zip(&a).map(|(b, a)| b - a).collect())
            }
            Baseline::TLearner { control, treated } => {
                let y0 = control.predict(records, &[])?;
                let y1 = treated.predict(records, &[])?;
                t_from
                    .iter()
                    .zip(t_to)
                    .enumerate()
                    .map(|(i, (&a, &b))| {
                        let pick = |t: f64| match t {
                            0.0 => Ok(y0[i]),
                            1.0 => Ok(y1[i]),
                            _ => Err(Error::Contract(format!("binary treatment must be 0 or 1, got {t}"))),
                        };
                        Ok(pick(b)? - pick(a)?)
                    })
                    .collect()
            }
        }
    }
}
