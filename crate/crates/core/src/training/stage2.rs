//! Stage 2: pseudo-uplift labels from a trained CAN-U, then CAN-D fitted on
//! factual outcomes plus the labelled counterfactual uplifts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Reduction, Tape, Var};
use crate::data::{normalize_treatment, CounterfactualSampler, CounterfactualStrategy, FeatureSchema, InstanceRecord, NormalizationParams, PseudoLabeledRecord};
use crate::error::{Error, Result};
use crate::model::can::INFERENCE_CHUNK;
use crate::model::{CanModel, ModelConfig, Variant};
use crate::training::config::TrainConfig;
use crate::training::report::LossReport;
use crate::training::stage1::{carve_validation, column, stage1_train_normalized, StageArtifacts};
use crate::training::trainer::{fit, Objective};

/// Seed of the counterfactual draw stream, derived from the run seed.
pub fn counterfactual_seed(seed: u64) -> u64 {
    seed.wrapping_add(2)
}

/// Draws one counterfactual per normalized record and labels it with the
/// labeler's outcome on the counterfactual instance minus its outcome on the
/// factual one.
pub fn generate_pseudo_labels<R: rand::Rng + ?Sized>(
    labeler: &CanModel,
    records: &[InstanceRecord],
    sampler: &CounterfactualSampler,
    rng: &mut R,
) -> Result<Vec<PseudoLabeledRecord>> {
    let t_cf = records
        .iter()
        .map(|r| sampler.sample(r.treatment, rng))
        .collect::<Result<Vec<_>>>()?;
    let t_f: Vec<f64> = records.iter().map(|r| r.treatment).collect();
    let u = labeler.predict_instance_uplifts(records, &t_f, &t_cf)?;
    Ok(records
        .iter()
        .zip(t_cf)
        .zip(u)
        .map(|((r, t_cf), u_tilde)| PseudoLabeledRecord {
            base: r.clone(),
            t_cf,
            u_tilde,
        })
        .collect())
}

fn sampler_for(model_config: &ModelConfig, strategy: CounterfactualStrategy, records: &[InstanceRecord]) -> Result<CounterfactualSampler> {
    let observed: Vec<f64> = records.iter().map(|r| r.treatment).collect();
    CounterfactualSampler::new(strategy, model_config.isotonic_m, &observed)
}

pub(crate) struct Stage2Objective<'a> {
    pub(crate) train: Vec<PseudoLabeledRecord>,
    pub(crate) validation: &'a [PseudoLabeledRecord],
    pub(crate) cfg: &'a TrainConfig,
    /// Present when counterfactuals are redrawn every epoch.
    pub(crate) resample: Option<(&'a CanModel, CounterfactualSampler, ChaCha8Rng)>,
}

/// Factual and pseudo-uplift squared errors of a batch on the tape.
fn stage2_terms(model: &CanModel, tape: &mut Tape, batch: &[PseudoLabeledRecord]) -> Result<(Var, Var)> {
    let base: Vec<InstanceRecord> = batch.iter().map(|p| p.base.clone()).collect();
    let inputs = model.inputs(&base)?;
    let t_f = inputs.treatments().to_vec();
    let t_cf: Vec<f64> = batch.iter().map(|p| p.t_cf).collect();
    let fwd = model.forward(tape, &inputs, 0.0)?;
    let y_hat = model.outcome_at(tape, &fwd, &t_f)?;
    let y = column(tape, base.iter().map(|r| r.outcome).collect())?;
    let factual = tape.squared_error(y_hat, y, Reduction::Mean)?;
    let u_hat = model.uplift_between(tape, &fwd, &t_f, &t_cf)?;
    let u = column(tape, batch.iter().map(|p| p.u_tilde).collect())?;
    let uplift = tape.squared_error(u_hat, u, Reduction::Mean)?;
    Ok((factual, uplift))
}

impl Objective<CanModel> for Stage2Objective<'_> {
    fn start_epoch(&mut self, _model: &CanModel, epoch: usize) -> Result<()> {
        if epoch == 0 {
            return Ok(());
        }
        if let Some((labeler, sampler, rng)) = &mut self.resample {
            let base: Vec<InstanceRecord> = self.train.iter().map(|p| p.base.clone()).collect();
            self.train = generate_pseudo_labels(labeler, &base, sampler, rng)?;
        }
        Ok(())
    }

    fn batch(&mut self, model: &CanModel, idx: &[usize], tape: &mut Tape) -> Result<(Var, LossReport)> {
        let batch: Vec<PseudoLabeledRecord> = idx.iter().map(|&i| self.train[i].clone()).collect();
        let (factual, uplift) = stage2_terms(model, tape, &batch)?;
        let loss = tape.weighted_sum(&[(1.0, factual), (self.cfg.gamma_uplift, uplift)], 0.0)?;
        let report = LossReport::stage2(tape.value(factual).item(), tape.value(uplift).item(), self.cfg.gamma_uplift);
        Ok((loss, report))
    }

    fn validate(&mut self, model: &CanModel) -> Result<LossReport> {
        let (mut f, mut u) = (0.0, 0.0);
        for chunk in self.validation.chunks(INFERENCE_CHUNK) {
            let mut tape = Tape::new();
            let (factual, uplift) = stage2_terms(model, &mut tape, chunk)?;
            let w = chunk.len() as f64;
            f += w * tape.value(factual).item();
            u += w * tape.value(uplift).item();
        }
        let n = self.validation.len() as f64;
        Ok(LossReport::stage2(f / n, u / n, self.cfg.gamma_uplift))
    }

    fn monitor(&self, validation: &LossReport) -> f64 {
        validation.total
    }

    fn finalize(&self, r: LossReport) -> LossReport {
        LossReport::stage2(r.factual_mse, r.uplift_mse.unwrap_or(0.0), self.cfg.gamma_uplift)
    }
}

/// Trains CAN-D on pseudo-labelled normalized records. `labeler` is needed
/// only when `cfg.resample_counterfactuals` is set.
pub fn stage2_train(
    pseudo: &[PseudoLabeledRecord],
    schema: &FeatureSchema,
    normalization: NormalizationParams,
    model_config: &ModelConfig,
    cfg: &TrainConfig,
    labeler: Option<&CanModel>,
) -> Result<StageArtifacts> {
    cfg.validate()?;
    if model_config.variant != Variant::CanD {
        return Err(Error::Variant("stage 2 trains CAN-D".into()));
    }
    let (train, validation) = carve_validation(pseudo, cfg)?;
    let resample = if cfg.resample_counterfactuals {
        let labeler = labeler.ok_or_else(|| Error::Config("resampling counterfactuals needs the CAN-U labeler".into()))?;
        let base: Vec<InstanceRecord> = train.iter().map(|p| p.base.clone()).collect();
        let sampler = sampler_for(model_config, cfg.cf_strategy, &base)?;
        // Distinct from the stream that drew the initial labels.
        let rng = ChaCha8Rng::seed_from_u64(counterfactual_seed(cfg.seed).wrapping_add(1));
        Some((labeler, sampler, rng))
    } else {
        None
    };
    let mut model = CanModel::new(model_config.clone(), schema.clone(), normalization, cfg.seed)?;
    let n_train = train.len();
    let mut objective = Stage2Objective {
        train,
        validation: &validation,
        cfg,
        resample,
    };
    let fit = fit(&mut model, n_train, cfg, &mut objective)?;
    Ok(StageArtifacts {
        model,
        curve: fit.curve,
        best_epoch: fit.best_epoch,
    })
}

#[derive(Clone, Debug)]
pub struct TwoStageArtifacts {
    pub can_u: StageArtifacts,
    pub can_d: StageArtifacts,
}

/// Pseudo-labels drawn by a trained CAN-U on raw records, using the
/// labeler's own treatment normalization and the counterfactual stream
/// derived from `cfg.seed`.
pub fn pseudo_labels_from(
    can_u: &CanModel,
    records: &[InstanceRecord],
    model_config: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<Vec<PseudoLabeledRecord>> {
    let normalized = can_u.normalization.apply_all(records);
    let sampler = sampler_for(model_config, cfg.cf_strategy, &normalized)?;
    let mut rng = ChaCha8Rng::seed_from_u64(counterfactual_seed(cfg.seed));
    generate_pseudo_labels(can_u, &normalized, &sampler, &mut rng)
}

/// Stage 2 on raw records given a trained CAN-U.
pub fn stage2_from_can_u(
    can_u: &CanModel,
    records: &[InstanceRecord],
    schema: &FeatureSchema,
    model_config: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(Vec<PseudoLabeledRecord>, StageArtifacts)> {
    let d_config = model_config.with_variant(Variant::CanD);
    let pseudo = pseudo_labels_from(can_u, records, &d_config, cfg)?;
    let can_d = stage2_train(&pseudo, schema, can_u.normalization, &d_config, cfg, Some(can_u))?;
    Ok((pseudo, can_d))
}

/// Full pipeline on raw records: normalize, stage 1, pseudo-labels, stage 2.
/// `model_config.variant` is ignored; each stage sets its own.
pub fn train_two_stage(
    records: &[InstanceRecord],
    schema: &FeatureSchema,
    model_config: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TwoStageArtifacts> {
    let (normalized, norm) = normalize_treatment(records, schema.treatment_kind)?;
    let can_u = stage1_train_normalized(&normalized, schema, norm, &model_config.with_variant(Variant::CanU), cfg)?;
    let (_, can_d) = stage2_from_can_u(&can_u.model, records, schema, model_config, cfg)?;
    Ok(TwoStageArtifacts { can_u, can_d })
}
