use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use tempfile::TempDir;
use tscan_cli::config::{read_json, BenchConfig};
use tscan_cli::pipeline::BenchSummary;
use tscan_core::data::TreatmentKind;

use crate::support::{config_path, err, guard, tscan, Checks, Outcome};

const CONFIG: &str = "benchmark_binary.json";

struct Run {
    _dir: TempDir,
    out: PathBuf,
    summary: BenchSummary,
    seconds_per_seed: f64,
}

/// The committed binary benchmark, run once through the CLI and shared by
/// every criterion that reads it.
fn shared() -> Result<&'static Run, String> {
    static RUN: OnceLock<Result<Run, String>> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = TempDir::new().map_err(err)?;
        let out = dir.path().join("first");
        let config = config_path(CONFIG);
        let started = Instant::now();
        tscan(&["bench", "--config", path_str(&config)?, "--out", path_str(&out)?])?;
        let secs = started.elapsed().as_secs_f64();
        let summary: BenchSummary = read_json(&out.join("summary.json")).map_err(err)?;
        let seconds_per_seed = secs / summary.seeds.len().max(1) as f64;
        Ok(Run {
            _dir: dir,
            out,
            summary,
            seconds_per_seed,
        })
    })
    .as_ref()
    .map_err(Clone::clone)
}

fn path_str(p: &Path) -> Result<&str, String> {
    p.to_str().ok_or_else(|| format!("non-UTF-8 path {}", p.display()))
}

fn metric(summary: &BenchSummary, model: &str, f: fn(&tscan_cli::pipeline::SummaryRow) -> Option<f64>) -> Result<f64, String> {
    summary
        .row(model)
        .and_then(f)
        .ok_or_else(|| format!("{model} has no value in the summary"))
}

fn auuc(s: &BenchSummary, model: &str) -> Result<f64, String> {
    metric(s, model, |r| r.auuc)
}

fn cauuc(s: &BenchSummary, model: &str) -> Result<f64, String> {
    metric(s, model, |r| r.cauuc)
}

/// The committed config must be the one the criteria describe.
fn check_config(checks: &mut Checks) -> Result<(), String> {
    let cfg: BenchConfig = read_json(&config_path(CONFIG)).map_err(err)?;
    let s = &cfg.data.synthetic;
    checks.check(
        s.n == 50_000
            && s.treatment_kind == TreatmentKind::Binary
            && s.bias_strength > 0.0
            && s.context_modulation > 0.0
            && cfg.seeds.len() == 5,
        format!(
            "config n={} bias={} modulation={} seeds={}",
            s.n,
            s.bias_strength,
            s.context_modulation,
            cfg.seeds.len()
        ),
    );
    Ok(())
}

pub fn run_headline() -> Outcome {
    guard(|| {
        let mut checks = Checks::default();
        check_config(&mut checks)?;
        let run = shared()?;
        let s = &run.summary;
        let tscan = auuc(s, "tscan")?;
        let s_learner = auuc(s, "s_learner")?;
        let t_learner = auuc(s, "t_learner")?;
        checks.check(
            tscan >= s_learner + 0.02,
            format!("TSCAN AUUC {tscan:.4} >= S-learner {s_learner:.4} + 0.02"),
        );
        checks.check(tscan >= t_learner, format!("TSCAN {tscan:.4} >= T-learner {t_learner:.4}"));
        let oracle = auuc(s, "oracle")?;
        let best_other = s
            .means
            .iter()
            .filter(|r| r.model != "oracle")
            .filter_map(|r| r.auuc.map(|a| (a, r.model.as_str())))
            .fold((f64::NEG_INFINITY, ""), |a, b| if b.0 > a.0 { b } else { a });
        checks.check(
            oracle >= best_other.0,
            format!("oracle {oracle:.4} >= best other {:.4} ({})", best_other.0, best_other.1),
        );
        checks.check(
            run.seconds_per_seed < 900.0,
            format!("{:.0}s per seed < 900s", run.seconds_per_seed),
        );
        Ok(checks.outcome())
    })
}

pub fn run_ablations() -> Outcome {
    guard(|| {
        let mut checks = Checks::default();
        let s = &shared()?.summary;
        let full = cauuc(s, "tscan")?;
        for other in ["tscan_rc", "tscan_ra", "tscan_riso", "can_u"] {
            let v = cauuc(s, other)?;
            checks.check(full >= v, format!("TSCAN CAUUC {full:.4} >= {other} {v:.4}"));
        }
        let rc = cauuc(s, "tscan_rc")?;
        checks.check(full - rc >= 0.03, format!("TSCAN - RC = {:.4} >= 0.03", full - rc));
        Ok(checks.outcome())
    })
}

pub fn run_balancing() -> Outcome {
    guard(|| {
        let s = &shared()?.summary;
        let lower = s
            .per_seed
            .iter()
            .filter(|o| o.stage1.best_epoch_mmd < o.stage1.epoch0_mmd)
            .count();
        let detail: Vec<String> = s
            .per_seed
            .iter()
            .map(|o| {
                format!(
                    "seed {}: {:.4}->{:.4}@{}",
                    o.seed, o.stage1.epoch0_mmd, o.stage1.best_epoch_mmd, o.stage1.best_epoch
                )
            })
            .collect();
        let mut checks = Checks::default();
        checks.check(
            lower >= 4,
            format!("MMD lower at best epoch in {lower}/{} seeds ({})", s.per_seed.len(), detail.join(" ")),
        );
        Ok(checks.outcome())
    })
}

pub fn run_reproducibility() -> Outcome {
    guard(|| {
        let run = shared()?;
        let again = run.out.with_file_name("rerun");
        let manifest = run.out.join("manifest.json");
        tscan(&["bench", "--from-manifest", path_str(&manifest)?, "--out", path_str(&again)?])?;
        let mut checks = Checks::default();
        for file in ["summary.json", "table.txt", "curves.csv"] {
            let a = std::fs::read(run.out.join(file)).map_err(err)?;
            let b = std::fs::read(again.join(file)).map_err(err)?;
            checks.check(a == b, format!("{file} identical"));
        }
        let rerun: BenchSummary = read_json(&again.join("summary.json")).map_err(err)?;
        let bits = |s: &BenchSummary| -> Vec<Option<u64>> {
            s.means
                .iter()
                .flat_map(|r| [r.auuc, r.qini, r.cauuc, r.cqini, r.uplift_rmse])
                .map(|v| v.map(f64::to_bits))
                .collect()
        };
        checks.check(bits(&run.summary) == bits(&rerun), "summary metrics bit-exact".to_string());
        Ok(checks.outcome())
    })
}
