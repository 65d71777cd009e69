//! Epoch loop shared by every trainer: seeded shuffling, one Adam step per
//! batch, validation after each epoch, early stopping with best-weight restore.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AdamState, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::model::CanModel;
use crate::training::config::TrainConfig;
use crate::training::early_stopping::{EarlyStopping, StopDecision};
use crate::training::report::{EpochReport, LossReport};

pub trait HasParams {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
}

impl HasParams for CanModel {
    fn params(&self) -> &ParamStore {
        CanModel::params(self)
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        CanModel::params_mut(self)
    }
}

/// A training objective over `n_train` examples addressed by index.
pub trait Objective<M> {
    fn start_epoch(&mut self, _model: &M, _epoch: usize) -> Result<()> {
        Ok(())
    }

    /// Records the scalar loss for the examples `idx` and reports its parts.
    fn batch(&mut self, model: &M, idx: &[usize], tape: &mut Tape) -> Result<(Var, LossReport)>;

    fn validate(&mut self, model: &M) -> Result<LossReport>;

    /// Value early stopping minimizes.
    fn monitor(&self, validation: &LossReport) -> f64;

    /// Recomputes `total` from averaged components.
    fn finalize(&self, report: LossReport) -> LossReport;
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub curve: Vec<EpochReport>,
    pub best_epoch: usize,
}

/// Seed of the per-run shuffle stream, derived from the run seed.
pub fn shuffle_seed(seed: u64) -> u64 {
    seed.wrapping_add(1)
}

pub fn fit<M: HasParams, O: Objective<M>>(
    model: &mut M,
    n_train: usize,
    cfg: &TrainConfig,
    objective: &mut O,
) -> Result<FitResult> {
    if n_train == 0 {
        return Err(Error::Contract("no training examples".into()));
    }
    let mut adam = AdamState::new(cfg.adam(), model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed(cfg.seed));
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = model.params().clone();
    let mut curve = Vec::new();
    for epoch in 0..cfg.max_epochs {
        objective.start_epoch(model, epoch)?;
        order.shuffle(&mut rng);
        let mut acc = LossReport::default();
        for idx in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let (loss, report) = objective.batch(model, idx, &mut tape)?;
            if !tape.value(loss).item().is_finite() || !report.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            let grads = tape.backward(loss, model.params())?;
            adam.step(model.params_mut(), &grads)?;
            acc.scaled_add(&report, idx.len() as f64 / n_train as f64);
        }
        if !model.params().all_finite() {
            return Err(Error::Divergence { epoch });
        }
        let train = objective.finalize(acc);
        let validation = objective.validate(model)?;
        if !validation.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        log::debug!(
            "epoch {epoch}: train total {:.6}, validation total {:.6}",
            train.total,
            validation.total
        );
        curve.push(EpochReport {
            epoch,
            train,
            validation,
        });
        match stopper.observe(epoch, objective.monitor(&validation)) {
            StopDecision::Improved => best.copy_from(model.params())?,
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    model.params_mut().copy_from(&best)?;
    Ok(FitResult {
        curve,
        best_epoch: stopper.best_epoch().unwrap_or(0),
    })
}
