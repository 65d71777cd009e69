use tempfile::TempDir;
use tscan_cli::config::{read_json, BenchConfig};
use tscan_cli::pipeline::{evaluate_model, BenchSummary};
use tscan_core::data::{generate_synthetic, InstanceRecord, SyntheticConfig, TreatmentKind};
use tscan_core::eval::{binarize_continuous, evaluate_binarized, EvalOptions};
use tscan_core::model::CanModel;
use tscan_core::training::{train_baseline, train_two_stage, BaselineConfig, BaselineKind, TrainConfig, UpliftModel};

use crate::support::{config_path, err, guard, tscan, Checks, Outcome};

const CONFIG: &str = "benchmark_continuous.json";

pub fn run() -> Outcome {
    guard(|| {
        let mut checks = Checks::default();
        end_to_end(&mut checks)?;
        monotone_dose_response(&mut checks)?;
        two_bins_match_binary_path(&mut checks)?;
        Ok(checks.outcome())
    })
}

fn end_to_end(checks: &mut Checks) -> Result<(), String> {
    let cfg: BenchConfig = read_json(&config_path(CONFIG)).map_err(err)?;
    checks.check(
        cfg.data.synthetic.treatment_kind == TreatmentKind::Continuous && cfg.model.isotonic_m == 5,
        format!("config continuous, M={}", cfg.model.isotonic_m),
    );
    let dir = TempDir::new().map_err(err)?;
    let out = dir.path().join("bench");
    let config = config_path(CONFIG);
    tscan(&[
        "bench",
        "--config",
        config.to_str().ok_or("non-UTF-8 path")?,
        "--out",
        out.to_str().ok_or("non-UTF-8 path")?,
    ])?;
    let summary: BenchSummary = read_json(&out.join("summary.json")).map_err(err)?;
    let tscan_auuc = summary.row("tscan").and_then(|r| r.auuc);
    let oracle_auuc = summary.row("oracle").and_then(|r| r.auuc);
    checks.check(
        tscan_auuc.is_some_and(f64::is_finite),
        format!(
            "bench over {} seeds: TSCAN AUUC {:.4}, oracle {:.4}",
            summary.seeds.len(),
            tscan_auuc.unwrap_or(f64::NAN),
            oracle_auuc.unwrap_or(f64::NAN)
        ),
    );
    Ok(())
}

/// Trains the committed continuous model once and checks every test record
/// at all M+1 levels, for both stages.
fn monotone_dose_response(checks: &mut Checks) -> Result<(), String> {
    let cfg: BenchConfig = read_json(&config_path(CONFIG)).map_err(err)?;
    let (train, test) = cfg.data.generate().map_err(err)?;
    let schema = cfg.data.synthetic.schema();
    let trained = train_two_stage(&train, &schema, &cfg.model, &cfg.train).map_err(err)?;
    let (mut decreases, mut misses, mut pairs) = (0, 0, 0);
    for model in [&trained.can_u.model, &trained.can_d.model] {
        let (d, m, p) = dose_checks(model, &test)?;
        decreases += d;
        misses += m;
        pairs += p;
    }
    checks.check(decreases == 0, format!("trained models: {decreases} level decreases over {pairs} records"));
    checks.check(misses == 0, format!("{misses} uplift != outcome difference"));
    Ok(())
}

fn dose_checks(model: &CanModel, raw: &[InstanceRecord]) -> Result<(usize, usize, usize), String> {
    let records = model.normalization.apply_all(raw);
    let m = model.levels();
    let levels: Vec<Vec<f64>> = (0..=m).map(|k| vec![k as f64 / m as f64; records.len()]).collect();
    let refs: Vec<&[f64]> = levels.iter().map(Vec::as_slice).collect();
    let ys = model.predict_outcomes_at(&records, &refs).map_err(err)?;
    let mut decreases = 0;
    let mut misses = 0;
    for w in ys.windows(2) {
        decreases += w[0].iter().zip(&w[1]).filter(|(lo, hi)| hi < lo).count();
    }
    for r in records.iter().take(200) {
        for a in 0..=m {
            for b in 0..=m {
                let (ta, tb) = (a as f64 / m as f64, b as f64 / m as f64);
                let u = model.predict_uplift(r, ta, tb).map_err(err)?;
                let diff = model.predict_outcome(r, tb).map_err(err)? - model.predict_outcome(r, ta).map_err(err)?;
                misses += usize::from(u.to_bits() != diff.to_bits());
            }
        }
    }
    Ok((decreases, misses, records.len()))
}

fn two_bins_match_binary_path(checks: &mut Checks) -> Result<(), String> {
    let synth = SyntheticConfig {
        n: 4000,
        seed: 3,
        ..Default::default()
    };
    let records = generate_synthetic(&synth).map_err(err)?;
    let schema = synth.schema();
    let cfg = TrainConfig {
        max_epochs: 3,
        ..Default::default()
    };
    let model = train_baseline(BaselineKind::SLearner, &records, &schema, &BaselineConfig::default(), &cfg).map_err(err)?;
    let opts = EvalOptions {
        bins: 2,
        ..Default::default()
    };
    let plain = evaluate_model("s", &model, &records, TreatmentKind::Binary, &opts).map_err(err)?;
    let binarized = binarize_continuous(&records, 2, |r, f, t| model.uplift(r, f, t)).map_err(err)?;
    let via_bins = evaluate_binarized("s", &binarized, &opts).map_err(err)?;
    let pairs = [
        (plain.auuc, via_bins.auuc),
        (plain.qini, via_bins.qini),
        (plain.cauuc, via_bins.cauuc),
        (plain.cqini, via_bins.cqini),
    ];
    let mut worst = 0.0f64;
    let mut defined = true;
    for (a, b) in pairs {
        match (a, b) {
            (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
            _ => defined = false,
        }
    }
    checks.check(
        defined && worst <= 1e-12,
        format!("B=2 on binary data vs binary path: max |diff| {worst:.1e}"),
    );
    Ok(())
}
