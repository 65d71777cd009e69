//! Stage 1: CAN-U trained on factual outcomes with MMD balancing, an
//! adversarial propensity head (via gradient reversal) and l2 weight decay.

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamKind, ParamStore, Reduction, Tape, Var};
use crate::data::{normalize_treatment, split_indices, FeatureSchema, InstanceRecord, NormalizationParams};
use crate::error::{Error, Result};
use crate::model::can::INFERENCE_CHUNK;
use crate::model::{CanModel, ModelConfig, Variant};
use crate::tensor::Tensor;
use crate::training::balance::{mmd_loss, mmd_value};
use crate::training::config::TrainConfig;
use crate::training::report::{EpochReport, LossReport};
use crate::training::trainer::{fit, Objective};

/// Validation MMD uses at most this many records, taken from the front.
pub const VALIDATION_MMD_SAMPLE: usize = 2048;

#[derive(Clone, Debug)]
pub struct StageArtifacts {
    /// Weights restored to the best validation epoch.
    pub model: CanModel,
    pub curve: Vec<EpochReport>,
    pub best_epoch: usize,
}

/// JSON training log.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainingLog {
    pub stage: String,
    pub best_epoch: usize,
    pub epochs: Vec<EpochReport>,
}

impl StageArtifacts {
    pub fn log(&self, stage: &str) -> TrainingLog {
        TrainingLog {
            stage: stage.into(),
            best_epoch: self.best_epoch,
            epochs: self.curve.clone(),
        }
    }
}

/// Sum of squares of every `Weight` parameter.
pub fn l2_value(params: &ParamStore) -> f64 {
    params
        .entries()
        .iter()
        .filter(|e| e.kind == ParamKind::Weight)
        .map(|e| e.value.data().iter().map(|x| x * x).sum::<f64>())
        .sum()
}

/// l2 penalty on the tape.
pub fn l2_penalty(tape: &mut Tape, params: &ParamStore) -> Result<Option<Var>> {
    let mut terms = Vec::new();
    for id in params.ids() {
        if params.entry(id).kind != ParamKind::Weight {
            continue;
        }
        let w = tape.param(params, id);
        let zero = tape.leaf(Tensor::zeros(params.get(id).shape()));
        terms.push((1.0, tape.squared_error(w, zero, Reduction::Sum)?));
    }
    if terms.is_empty() {
        return Ok(None);
    }
    tape.weighted_sum(&terms, 0.0).map(Some)
}

pub(crate) fn column(tape: &mut Tape, values: Vec<f64>) -> Result<Var> {
    let n = values.len();
    Ok(tape.leaf(Tensor::new(vec![n, 1], values)?))
}

pub(crate) fn gather<T: Clone>(items: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| items[i].clone()).collect()
}

/// Splits into (train, validation) with the run seed.
pub(crate) fn carve_validation<T: Clone>(items: &[T], cfg: &TrainConfig) -> Result<(Vec<T>, Vec<T>)> {
    let (tr, va) = split_indices(items.len(), 1.0 - cfg.validation_fraction, cfg.seed)?;
    if tr.is_empty() || va.is_empty() {
        return Err(Error::Contract(format!(
            "{} records are too few for a validation split",
            items.len()
        )));
    }
    Ok((gather(items, &tr), gather(items, &va)))
}

pub(crate) struct Stage1Objective<'a> {
    pub(crate) train: &'a [InstanceRecord],
    pub(crate) validation: &'a [InstanceRecord],
    pub(crate) cfg: &'a TrainConfig,
}

impl Objective<CanModel> for Stage1Objective<'_> {
    fn batch(&mut self, model: &CanModel, idx: &[usize], tape: &mut Tape) -> Result<(Var, LossReport)> {
        let cfg = self.cfg;
        let recs = gather(self.train, idx);
        let inputs = model.inputs(&recs)?;
        let ts = inputs.treatments().to_vec();
        let fwd = model.forward(tape, &inputs, cfg.lambda_adv)?;
        let y_hat = model.outcome_at(tape, &fwd, &ts)?;
        let y = column(tape, recs.iter().map(|r| r.outcome).collect())?;
        let factual = tape.squared_error(y_hat, y, Reduction::Mean)?;
        let kind = model.schema.treatment_kind;
        let mut terms = vec![(1.0, factual)];

        let ipm = if cfg.alpha_ipm > 0.0 {
            match mmd_loss(tape, fwd.h_cal_pooled, &ts, kind, cfg.mmd_bandwidth)? {
                Some(v) => {
                    terms.push((cfg.alpha_ipm, v));
                    tape.value(v).item()
                }
                None => 0.0,
            }
        } else {
            mmd_value(tape.value(fwd.h_cal_pooled), &ts, kind, cfg.mmd_bandwidth)?
        };
        let l2 = if cfg.beta_l2 > 0.0 {
            let v = l2_penalty(tape, model.params())?.expect("CAN has weights");
            terms.push((cfg.beta_l2, v));
            tape.value(v).item()
        } else {
            l2_value(model.params())
        };
        let prop_var = fwd.propensity.expect("CAN-U has a propensity head");
        let t = column(tape, ts)?;
        let prop = tape.squared_error(prop_var, t, Reduction::Mean)?;
        terms.push((1.0, prop));

        let loss = tape.weighted_sum(&terms, 0.0)?;
        let report = LossReport::stage1(
            tape.value(factual).item(),
            ipm,
            tape.value(prop).item(),
            l2,
            cfg.alpha_ipm,
            cfg.beta_l2,
        );
        Ok((loss, report))
    }

    fn validate(&mut self, model: &CanModel) -> Result<LossReport> {
        let (factual, prop) = factual_and_propensity_mse(model, self.validation)?;
        let sample = &self.validation[..self.validation.len().min(VALIDATION_MMD_SAMPLE)];
        let pooled = model.pooled_representation(sample)?;
        let ts: Vec<f64> = sample.iter().map(|r| r.treatment).collect();
        let ipm = mmd_value(&pooled, &ts, model.schema.treatment_kind, self.cfg.mmd_bandwidth)?;
        Ok(LossReport::stage1(
            factual,
            ipm,
            prop,
            l2_value(model.params()),
            self.cfg.alpha_ipm,
            self.cfg.beta_l2,
        ))
    }

    fn monitor(&self, validation: &LossReport) -> f64 {
        validation.factual_mse
    }

    fn finalize(&self, r: LossReport) -> LossReport {
        LossReport::stage1(r.factual_mse, r.ipm, r.propensity_mse, r.l2, self.cfg.alpha_ipm, self.cfg.beta_l2)
    }
}

/// Factual MSE and propensity MSE of normalized records in one pass.
pub fn factual_and_propensity_mse(model: &CanModel, records: &[InstanceRecord]) -> Result<(f64, f64)> {
    let (mut se, mut pe) = (0.0, 0.0);
    for chunk in records.chunks(INFERENCE_CHUNK) {
        let mut tape = Tape::new();
        let inputs = model.inputs(chunk)?;
        let fwd = model.forward(&mut tape, &inputs, 0.0)?;
        let y = model.outcome_at(&mut tape, &fwd, inputs.treatments())?;
        for (r, yh) in chunk.iter().zip(tape.value(y).data()) {
            se += (yh - r.outcome) * (yh - r.outcome);
        }
        if let Some(p) = fwd.propensity {
            for (r, ph) in chunk.iter().zip(tape.value(p).data()) {
                pe += (ph - r.treatment) * (ph - r.treatment);
            }
        }
    }
    let n = records.len() as f64;
    Ok((se / n, pe / n))
}

/// Trains CAN-U on raw (unnormalized) records. Treatment normalization is
/// fitted on all given records and stored in the model.
pub fn stage1_train(
    records: &[InstanceRecord],
    schema: &FeatureSchema,
    model_config: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<StageArtifacts> {
    let (normalized, norm) = normalize_treatment(records, schema.treatment_kind)?;
    stage1_train_normalized(&normalized, schema, norm, model_config, cfg)
}

pub fn stage1_train_normalized(
    records: &[InstanceRecord],
    schema: &FeatureSchema,
    normalization: NormalizationParams,
    model_config: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<StageArtifacts> {
    cfg.validate()?;
    if model_config.variant != Variant::CanU {
        return Err(Error::Variant("stage 1 trains CAN-U".into()));
    }
    let (train, validation) = carve_validation(records, cfg)?;
    let mut model = CanModel::new(model_config.clone(), schema.clone(), normalization, cfg.seed)?;
    let mut objective = Stage1Objective {
        train: &train,
        validation: &validation,
        cfg,
    };
    let fit = fit(&mut model, train.len(), cfg, &mut objective)?;
    Ok(StageArtifacts {
        model,
        curve: fit.curve,
        best_epoch: fit.best_epoch,
    })
}
