use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tscan_core::autodiff::gradcheck::{check_store, op_problem, OPS};
use tscan_core::data::{generate_synthetic, NormalizationParams, SyntheticConfig, TreatmentKind};
use tscan_core::model::{check_can_gradients, Ablations, CanModel, ModelConfig, Variant};

use crate::support::{err, guard, Checks, Outcome};

const TOLERANCE: f64 = 1e-4;
const STEP: f64 = 1e-5;
const DRAWS: usize = 10;

pub fn run() -> Outcome {
    let started = std::time::Instant::now();
    guard(|| {
        let mut checks = Checks::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut worst_op = (0.0f64, "");
        for &op in OPS {
            for draw in 0..DRAWS {
                let Some(mut problem) = op_problem(op, &mut rng) else {
                    return Err(format!("no problem generator for {op}"));
                };
                let r = check_store(&mut problem.params, STEP, problem.grad_scale, &*problem.loss)
                    .map_err(|e| format!("{op} draw {draw}: {e}"))?;
                if r.max_relative_error > worst_op.0 {
                    worst_op = (r.max_relative_error, op);
                }
            }
        }
        checks.check(
            worst_op.0 < TOLERANCE,
            format!("{} ops x {DRAWS} draws, worst {:.2e} ({})", OPS.len(), worst_op.0, worst_op.1),
        );

        let mut worst_can = 0.0f64;
        for (i, (cfg, kind)) in can_configs().into_iter().enumerate() {
            let synth = SyntheticConfig {
                n: 8,
                n_merchant_numeric: 3,
                n_merchant_categorical: 2,
                treatment_kind: kind,
                seed: 300 + i as u64,
                ..Default::default()
            };
            let records = generate_synthetic(&synth).map_err(err)?;
            let mut model =
                CanModel::new(cfg, synth.schema(), NormalizationParams::identity(kind), i as u64).map_err(err)?;
            perturb(&mut model, &mut rng);
            let t_cf: Vec<f64> = records
                .iter()
                .map(|r| match kind {
                    TreatmentKind::Binary => 1.0 - r.treatment,
                    TreatmentKind::Continuous => rng.random_range(0.0..=1.0),
                })
                .collect();
            let targets: Vec<f64> = (0..records.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let r = check_can_gradients(&mut model, &records, &t_cf, &targets, 0.5, STEP).map_err(err)?;
            worst_can = worst_can.max(r.max_relative_error);
        }
        checks.check(worst_can < TOLERANCE, format!("full CAN x {DRAWS} inputs, worst {worst_can:.2e}"));
        let secs = started.elapsed().as_secs_f64();
        checks.check(secs < 60.0, format!("{secs:.1}s < 60s"));
        Ok(checks.outcome())
    })
}

/// Ten model shapes covering both variants, both treatment kinds and every ablation.
fn can_configs() -> Vec<(ModelConfig, TreatmentKind)> {
    let base = ModelConfig {
        embedding_dim: 4,
        context_mlp_widths: vec![5],
        head_mlp_widths: vec![6],
        ..Default::default()
    };
    let cont = |m: usize| ModelConfig {
        isotonic_m: m,
        ..base.clone()
    };
    let with = |cfg: ModelConfig, f: fn(&mut ModelConfig)| {
        let mut c = cfg;
        f(&mut c);
        c
    };
    use TreatmentKind::{Binary, Continuous};
    vec![
        (base.clone(), Binary),
        (base.with_variant(Variant::CanD), Binary),
        (cont(3), Continuous),
        (cont(5).with_variant(Variant::CanD), Continuous),
        (with(base.clone(), |c| c.attention_heads = 2), Binary),
        (with(cont(4), |c| c.scalar_gates = true), Continuous),
        (with(cont(2), |c| c.attention_residual = true), Continuous),
        (
            with(base.clone(), |c| {
                c.ablations = Ablations {
                    remove_context: true,
                    ..Default::default()
                }
            }),
            Binary,
        ),
        (
            with(cont(3), |c| {
                c.ablations = Ablations {
                    replace_attention_with_dense: true,
                    ..Default::default()
                }
            }),
            Continuous,
        ),
        (
            with(cont(3), |c| {
                c.ablations = Ablations {
                    replace_isotonic_with_dense: true,
                    ..Default::default()
                }
            }),
            Continuous,
        ),
    ]
}

/// Moves every parameter off its initial value so no path is degenerate.
fn perturb(model: &mut CanModel, rng: &mut ChaCha8Rng) {
    let ids: Vec<_> = model.params().ids().collect();
    for id in ids {
        for x in model.params_mut().get_mut(id).data_mut() {
            *x = rng.random_range(-0.8..0.8);
        }
    }
}
