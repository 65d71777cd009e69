//! The benchmark run for one seed, and the cross-seed summary.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tscan_core::data::{InstanceRecord, TreatmentKind};
use tscan_core::eval::{binarize_continuous, evaluate_binarized, evaluate_scored, EvalOptions, EvalReport, ModelEvaluation, ScoredRecord};
use tscan_core::model::{Ablations, ModelConfig};
use tscan_core::training::{train_baseline, train_two_stage, BaselineKind, UpliftModel};
use tscan_core::{Error, Result};

use crate::config::BenchConfig;
use crate::error::CliResult;

/// Scorers of a benchmark run, in table order.
pub const SCORERS: &[&str] = &[
    "tscan",
    "can_u",
    "tscan_rc",
    "tscan_ra",
    "tscan_riso",
    "s_learner",
    "t_learner",
    "oracle",
    "random",
];

/// Scores each record with its known effect.
pub struct OracleScorer;

impl UpliftModel for OracleScorer {
    /// For a monotone dose response the true uplift between two doses is the
    /// stored effect times a positive constant, so rankings agree.
    fn uplift(&self, records: &[InstanceRecord], _from: &[f64], _to: &[f64]) -> Result<Vec<f64>> {
        records
            .iter()
            .enumerate()
            .map(|(i, r)| r.true_ite.ok_or_else(|| Error::Contract(format!("record {i} has no true_ite"))))
            .collect()
    }
}

/// Uniform random scores, reproducible per seed and call size.
pub struct RandomScorer {
    pub seed: u64,
}

impl UpliftModel for RandomScorer {
    fn uplift(&self, records: &[InstanceRecord], _from: &[f64], _to: &[f64]) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ records.len() as u64);
        Ok(records.iter().map(|_| rng.random::<f64>()).collect())
    }
}

fn undefined(name: &str) -> ModelEvaluation {
    ModelEvaluation {
        model: name.into(),
        auuc: None,
        qini: None,
        cauuc: None,
        cqini: None,
        uplift_rmse: None,
        groups: Vec::new(),
        bin_pairs: None,
        curve: None,
    }
}

/// Binary treatment: uplift from 0 to 1 per record. Continuous: averaged
/// over adjacent treatment-bin pairs.
pub fn evaluate_model(
    name: &str,
    model: &dyn UpliftModel,
    test: &[InstanceRecord],
    kind: TreatmentKind,
    opts: &EvalOptions,
) -> Result<ModelEvaluation> {
    match kind {
        TreatmentKind::Binary => {
            let n = test.len();
            let scores = model.uplift(test, &vec![0.0; n], &vec![1.0; n])?;
            let scored: Vec<ScoredRecord> = test
                .iter()
                .zip(scores)
                .map(|(r, score)| ScoredRecord {
                    score,
                    treated: r.treatment == 1.0,
                    outcome: r.outcome,
                    group_key: r.group_key.clone(),
                    true_ite: r.true_ite,
                })
                .collect();
            evaluate_scored(name, &scored, opts)
        }
        TreatmentKind::Continuous => {
            let binarized = binarize_continuous(test, opts.bins, |r, f, t| model.uplift(r, f, t))?;
            evaluate_binarized(name, &binarized, opts)
        }
    }
}

/// Validation MMD of the full model's stage 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalanceTrace {
    pub epoch0_mmd: f64,
    pub best_epoch: usize,
    pub best_epoch_mmd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub report: EvalReport,
    pub stage1: BalanceTrace,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    #[serde(skip)]
    pub seconds: f64,
}

fn ablated(model: &ModelConfig, f: impl FnOnce(&mut Ablations)) -> ModelConfig {
    let mut m = model.clone();
    f(&mut m.ablations);
    m
}

pub fn run_seed(cfg: &BenchConfig, seed: u64) -> CliResult<SeedOutcome> {
    let started = Instant::now();
    let mut data = cfg.data.clone();
    data.synthetic.seed = seed;
    let (train, test) = data.generate()?;
    let schema = data.synthetic.schema();
    let kind = schema.treatment_kind;
    let train_cfg = tscan_core::training::TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let opts = &cfg.eval;
    let mut models = Vec::new();

    log::info!("seed {seed}: training TSCAN");
    let full = train_two_stage(&train, &schema, &cfg.model, &train_cfg)?;
    models.push(evaluate_model("tscan", &full.can_d.model, &test, kind, opts)?);
    models.push(evaluate_model("can_u", &full.can_u.model, &test, kind, opts)?);
    let curve = &full.can_u.curve;
    let stage1 = BalanceTrace {
        epoch0_mmd: curve[0].validation.ipm,
        best_epoch: full.can_u.best_epoch,
        best_epoch_mmd: curve[full.can_u.best_epoch].validation.ipm,
    };

    let variants: [(&str, ModelConfig); 3] = [
        ("tscan_rc", ablated(&cfg.model, |a| a.remove_context = true)),
        ("tscan_ra", ablated(&cfg.model, |a| a.replace_attention_with_dense = true)),
        ("tscan_riso", ablated(&cfg.model, |a| a.replace_isotonic_with_dense = true)),
    ];
    for (name, model) in &variants {
        log::info!("seed {seed}: training {name}");
        let out = train_two_stage(&train, &schema, model, &train_cfg)?;
        models.push(evaluate_model(name, &out.can_d.model, &test, kind, opts)?);
    }

    for (name, kind_b) in [("s_learner", BaselineKind::SLearner), ("t_learner", BaselineKind::TLearner)] {
        log::info!("seed {seed}: training {name}");
        match train_baseline(kind_b, &train, &schema, &cfg.baseline, &train_cfg) {
            Ok(b) => models.push(evaluate_model(name, &b, &test, kind, opts)?),
            Err(Error::Unsupported(msg)) => {
                log::warn!("{name}: {msg}");
                models.push(undefined(name));
            }
            Err(e) => return Err(e.into()),
        }
    }
    models.push(evaluate_model("oracle", &OracleScorer, &test, kind, opts)?);
    models.push(evaluate_model("random", &RandomScorer { seed }, &test, kind, opts)?);

    Ok(SeedOutcome {
        seed,
        report: EvalReport {
            options: opts.clone(),
            models,
        },
        stage1,
        stage1_epochs: full.can_u.curve.len(),
        stage2_epochs: full.can_d.curve.len(),
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Mean of each metric over the seeds where it is defined.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: String,
    pub auuc: Option<f64>,
    pub qini: Option<f64>,
    pub cauuc: Option<f64>,
    pub cqini: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub uplift_rmse: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub seeds: Vec<u64>,
    pub means: Vec<SummaryRow>,
    pub per_seed: Vec<SeedOutcome>,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn summarize(outcomes: Vec<SeedOutcome>) -> BenchSummary {
    let names: Vec<String> = outcomes
        .first()
        .map(|o| o.report.models.iter().map(|m| m.model.clone()).collect())
        .unwrap_or_default();
    let pick = |name: &str, f: fn(&ModelEvaluation) -> Option<f64>| {
        mean(outcomes.iter().map(|o| o.report.models.iter().find(|m| m.model == name).and_then(f)))
    };
    let means = names
        .iter()
        .map(|name| SummaryRow {
            model: name.clone(),
            auuc: pick(name, |m| m.auuc),
            qini: pick(name, |m| m.qini),
            cauuc: pick(name, |m| m.cauuc),
            cqini: pick(name, |m| m.cqini),
            uplift_rmse: pick(name, |m| m.uplift_rmse),
        })
        .collect();
    BenchSummary {
        seeds: outcomes.iter().map(|o| o.seed).collect(),
        means,
        per_seed: outcomes,
    }
}

impl BenchSummary {
    pub fn row(&self, model: &str) -> Option<&SummaryRow> {
        self.means.iter().find(|r| r.model == model)
    }

    /// Mean-metric table in the same layout as the evaluation report.
    pub fn table(&self) -> String {
        let report = EvalReport {
            options: EvalOptions::default(),
            models: self
                .means
                .iter()
                .map(|r| ModelEvaluation {
                    auuc: r.auuc,
                    qini: r.qini,
                    cauuc: r.cauuc,
                    cqini: r.cqini,
                    uplift_rmse: r.uplift_rmse,
                    ..undefined(&r.model)
                })
                .collect(),
        };
        report.table()
    }
}

/// Runs every seed, `jobs` at a time on separate threads. Results are in
/// seed order and independent of `jobs`.
pub fn run_bench(cfg: &BenchConfig, jobs: usize) -> CliResult<BenchSummary> {
    cfg.validate()?;
    let jobs = jobs.max(1);
    let mut outcomes = Vec::with_capacity(cfg.seeds.len());
    for chunk in cfg.seeds.chunks(jobs) {
        let results: Vec<CliResult<SeedOutcome>> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk.iter().map(|&seed| s.spawn(move || run_seed(cfg, seed))).collect();
            handles.into_iter().map(|h| h.join().expect("seed worker panicked")).collect()
        });
        for r in results {
            let o = r?;
            log::info!("seed {} finished in {:.1}s", o.seed, o.seconds);
            outcomes.push(o);
        }
    }
    Ok(summarize(outcomes))
}
