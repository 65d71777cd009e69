use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tscan_core::data::{generate_synthetic, NormalizationParams, SyntheticConfig, TreatmentKind};
use tscan_core::model::{Ablations, CanModel, ModelConfig, Variant};

use crate::support::{err, guard, Checks, Outcome};

const MODELS: usize = 50;
const RECORDS_PER_MODEL: usize = 20;

pub fn run() -> Outcome {
    let started = std::time::Instant::now();
    guard(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let (mut pairs, mut decreases, mut identity_misses, mut level_checks) = (0, 0, 0, 0);
        for i in 0..MODELS {
            let m = rng.random_range(1..=8usize);
            let kind = if m == 1 { TreatmentKind::Binary } else { TreatmentKind::Continuous };
            let cfg = ModelConfig {
                embedding_dim: rng.random_range(2..=8),
                context_mlp_widths: vec![rng.random_range(2..=12)],
                head_mlp_widths: vec![rng.random_range(2..=12)],
                isotonic_m: m,
                attention_heads: 1,
                variant: if rng.random_bool(0.5) { Variant::CanU } else { Variant::CanD },
                ablations: Ablations {
                    remove_context: rng.random_bool(0.2),
                    replace_attention_with_dense: rng.random_bool(0.2),
                    replace_isotonic_with_dense: false,
                },
                scalar_gates: rng.random_bool(0.3),
                attention_residual: rng.random_bool(0.3),
            };
            let synth = SyntheticConfig {
                n: RECORDS_PER_MODEL,
                treatment_kind: kind,
                seed: 1000 + i as u64,
                ..Default::default()
            };
            let records = generate_synthetic(&synth).map_err(err)?;
            let mut model =
                CanModel::new(cfg, synth.schema(), NormalizationParams::identity(kind), rng.random()).map_err(err)?;
            let scale = rng.random_range(0.1..2.0);
            let ids: Vec<_> = model.params().ids().collect();
            for id in ids {
                for x in model.params_mut().get_mut(id).data_mut() {
                    *x = rng.random_range(-scale..scale);
                }
            }
            let levels: Vec<f64> = (0..=m).map(|k| k as f64 / m as f64).collect();
            for r in &records {
                pairs += 1;
                let ys: Vec<f64> = levels.iter().map(|&t| model.predict_outcome(r, t)).collect::<Result<_, _>>().map_err(err)?;
                decreases += ys.windows(2).filter(|w| w[1] < w[0]).count();
                for (a, &ta) in levels.iter().enumerate() {
                    for (b, &tb) in levels.iter().enumerate() {
                        let u = model.predict_uplift(r, ta, tb).map_err(err)?;
                        level_checks += 1;
                        if u.to_bits() != (ys[b] - ys[a]).to_bits() {
                            identity_misses += 1;
                        }
                    }
                }
            }
        }
        let mut checks = Checks::default();
        checks.check(pairs >= 1000, format!("{pairs} (model, record) pairs"));
        checks.check(decreases == 0, format!("{decreases} level decreases"));
        checks.check(
            identity_misses == 0,
            format!("{identity_misses}/{level_checks} uplift != outcome difference"),
        );
        let secs = started.elapsed().as_secs_f64();
        checks.check(secs < 60.0, format!("{secs:.1}s < 60s"));
        Ok(checks.outcome())
    })
}
