//! Stage 1 with every balancing term switched off must be plain factual
//! regression. The oracle below re-implements that regression loop (batch
//! order, loss, Adam) and is compared epoch by epoch.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tscan_core::autodiff::{Reduction, Tape};
use tscan_core::data::{generate_synthetic, split_indices, InstanceRecord, NormalizationParams, SyntheticConfig};
use tscan_core::model::{CanModel, ModelConfig};
use tscan_core::training::{stage1_train, TrainConfig};
use tscan_core::Tensor;

use crate::support::{err, guard, Checks, Outcome};

const TOLERANCE: f64 = 1e-9;

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
}

fn factual_loss(model: &CanModel, batch: &[InstanceRecord], tape: &mut Tape) -> Result<tscan_core::autodiff::Var, String> {
    let inputs = model.inputs(batch).map_err(err)?;
    let ts = inputs.treatments().to_vec();
    let fwd = model.forward(tape, &inputs, 0.0).map_err(err)?;
    let y_hat = model.outcome_at(tape, &fwd, &ts).map_err(err)?;
    let y = tape.leaf(Tensor::new(vec![batch.len(), 1], batch.iter().map(|r| r.outcome).collect()).map_err(err)?);
    tape.squared_error(y_hat, y, Reduction::Mean).map_err(err)
}

fn validation_mse(model: &CanModel, records: &[InstanceRecord]) -> Result<f64, String> {
    let ts: Vec<f64> = records.iter().map(|r| r.treatment).collect();
    let y = model.predict_outcomes_at(records, &[&ts]).map_err(err)?.remove(0);
    Ok(records.iter().zip(&y).map(|(r, yh)| (yh - r.outcome).powi(2)).sum::<f64>() / records.len() as f64)
}

/// Per-epoch (train mean factual MSE, validation factual MSE).
fn oracle_trace(
    records: &[InstanceRecord],
    model_config: &ModelConfig,
    schema: &tscan_core::data::FeatureSchema,
    cfg: &TrainConfig,
) -> Result<Vec<(f64, f64)>, String> {
    let (tr, va) = split_indices(records.len(), 1.0 - cfg.validation_fraction, cfg.seed).map_err(err)?;
    let train: Vec<InstanceRecord> = tr.iter().map(|&i| records[i].clone()).collect();
    let validation: Vec<InstanceRecord> = va.iter().map(|&i| records[i].clone()).collect();
    let mut model = CanModel::new(
        model_config.clone(),
        schema.clone(),
        NormalizationParams::identity(schema.treatment_kind),
        cfg.seed,
    )
    .map_err(err)?;
    let ids: Vec<_> = model.params().ids().collect();
    let mut adam = Adam {
        m: ids.iter().map(|&id| vec![0.0; model.params().get(id).data().len()]).collect(),
        v: ids.iter().map(|&id| vec![0.0; model.params().get(id).data().len()]).collect(),
        step: 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed + 1);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut trace = Vec::new();
    for _ in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut train_mse = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<InstanceRecord> = idx.iter().map(|&i| train[i].clone()).collect();
            let mut tape = Tape::new();
            let loss = factual_loss(&model, &batch, &mut tape)?;
            train_mse += tape.value(loss).item() * idx.len() as f64 / train.len() as f64;
            let grads = tape.backward(loss, model.params()).map_err(err)?;
            adam.step += 1;
            let c1 = 1.0 - cfg.beta1.powi(adam.step);
            let c2 = 1.0 - cfg.beta2.powi(adam.step);
            for (j, &id) in ids.iter().enumerate() {
                let g = grads.get(id).data().to_vec();
                let p = model.params_mut().get_mut(id).data_mut();
                for i in 0..p.len() {
                    adam.m[j][i] = cfg.beta1 * adam.m[j][i] + (1.0 - cfg.beta1) * g[i];
                    adam.v[j][i] = cfg.beta2 * adam.v[j][i] + (1.0 - cfg.beta2) * g[i] * g[i];
                    let m_hat = adam.m[j][i] / c1;
                    let v_hat = adam.v[j][i] / c2;
                    p[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
                }
            }
        }
        trace.push((train_mse, validation_mse(&model, &validation)?));
    }
    Ok(trace)
}

pub fn run() -> Outcome {
    guard(|| {
        let synth = SyntheticConfig {
            n: 3000,
            bias_strength: 1.5,
            seed: 17,
            ..Default::default()
        };
        let records = generate_synthetic(&synth).map_err(err)?;
        let schema = synth.schema();
        let model_config = ModelConfig::default();
        let cfg = TrainConfig {
            alpha_ipm: 0.0,
            lambda_adv: 0.0,
            beta_l2: 0.0,
            max_epochs: 6,
            patience: 6,
            seed: 11,
            ..Default::default()
        };
        let trained = stage1_train(&records, &schema, &model_config, &cfg).map_err(err)?;
        let oracle = oracle_trace(&records, &model_config, &schema, &cfg)?;
        let mut checks = Checks::default();
        checks.check(
            trained.curve.len() == oracle.len(),
            format!("{} trainer epochs vs {} oracle epochs", trained.curve.len(), oracle.len()),
        );
        let worst = trained
            .curve
            .iter()
            .zip(&oracle)
            .map(|(e, &(tr, va))| (e.train.factual_mse - tr).abs().max((e.validation.factual_mse - va).abs()))
            .fold(0.0, f64::max);
        checks.check(
            worst <= TOLERANCE,
            format!("alpha=lambda=beta=0 vs plain regression: max per-epoch |diff| {worst:.1e}"),
        );
        Ok(checks.outcome())
    })
}
