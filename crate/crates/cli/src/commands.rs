//! One function per subcommand.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tscan_core::data::{
    describe_dgp, load_dataset, normalize_treatment, save_dataset,
    CounterfactualSampler, DataFormat, DgpDescription, FeatureSchema, InstanceRecord, LoadOptions,
    NormalizationParams, PseudoLabeledRecord, SyntheticConfig, TreatmentKind,
};
use tscan_core::eval::{export_gain_curves, EvalOptions, EvalReport, ModelEvaluation};
use tscan_core::model::{load_checkpoint, save_checkpoint, CanModel, Variant};
use tscan_core::training::{stage1_train, stage2_from_can_u, stage2_train, StageArtifacts, TrainConfig, UpliftModel};
use tscan_core::Error;

use crate::cli::{AblateArg, BenchArgs, DescribeDgpArgs, EvaluateArgs, GenDataArgs, PredictArgs, StageArg, TrainArgs};
use crate::config::{read_json, write_json, BenchConfig, GenDataConfig, TrainRunConfig};
use crate::error::{CliError, CliResult};
use crate::manifest::Manifest;
use crate::pipeline::{evaluate_model, run_bench, OracleScorer, RandomScorer};

fn io_error(path: &Path, source: std::io::Error) -> CliError {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
    .into()
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

fn load_schema(path: &Path) -> CliResult<FeatureSchema> {
    FeatureSchema::load(path).map_err(|e| CliError::config(path, e))
}

/// Dataset/schema disagreements are artifact mismatches rather than internal errors.
fn load_records(path: &Path, schema: &FeatureSchema) -> CliResult<Vec<InstanceRecord>> {
    load_dataset(path, schema, LoadOptions::default()).map_err(|e| match e {
        Error::Schema(_) | Error::Parse { .. } | Error::Oov { .. } => CliError::Mismatch(format!("{}: {e}", path.display())),
        e => e.into(),
    })
}

/// `dgp.json`: the generator settings next to the generating equations.
#[derive(Serialize)]
struct DgpFile<'a> {
    synthetic: &'a SyntheticConfig,
    /// True when assignment ignores the features.
    constant_propensity: bool,
    description: DgpDescription,
}

pub fn gen_data(args: &GenDataArgs) -> CliResult<()> {
    let started = Instant::now();
    let mut cfg: GenDataConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => GenDataConfig::default(),
    };
    let s = &mut cfg.synthetic;
    if let Some(n) = args.n {
        s.n = n;
    }
    if let Some(seed) = args.seed {
        s.seed = seed;
    }
    if let Some(t) = args.treatment {
        s.treatment_kind = t.into();
    }
    if let Some(b) = args.bias_strength {
        s.bias_strength = b;
    }
    if let Some(c) = args.context_modulation {
        s.context_modulation = c;
    }
    if let Some(f) = args.test_fraction {
        cfg.test_fraction = f;
    }
    if let Some(b) = args.test_bias_strength {
        cfg.test_bias_strength = Some(b);
    }
    cfg.validate()?;

    let (train, test) = cfg.generate()?;
    let schema = cfg.synthetic.schema();
    create_dir(&args.out)?;
    let mut manifest = Manifest::new("gen-data", &cfg)?;
    let train_path = args.out.join("train.csv");
    let test_path = args.out.join("test.csv");
    let schema_path = args.out.join("schema.json");
    let dgp_path = args.out.join("dgp.json");
    save_dataset(&train_path, &schema, &train)?;
    save_dataset(&test_path, &schema, &test)?;
    schema.save(&schema_path)?;
    write_json(
        &dgp_path,
        &DgpFile {
            synthetic: &cfg.synthetic,
            constant_propensity: cfg.synthetic.bias_strength == 0.0,
            description: describe_dgp(),
        },
    )?;
    for p in [&train_path, &test_path, &schema_path, &dgp_path] {
        manifest.output(p)?;
    }
    manifest.finish(&args.out, started)?;
    log::info!("wrote {} train and {} test records to {}", train.len(), test.len(), args.out.display());
    Ok(())
}

pub fn describe(args: &DescribeDgpArgs) -> CliResult<()> {
    let d = describe_dgp();
    match &args.out {
        Some(p) => write_json(p, &d),
        None => {
            println!("{}", serde_json::to_string_pretty(&d).map_err(Error::from)?);
            Ok(())
        }
    }
}

/// Resolved configuration of a `train` run, echoed into its manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainCommandConfig {
    pub stage: String,
    pub can_u_only: bool,
    #[serde(flatten)]
    pub run: TrainRunConfig,
}

/// Pseudo-label CSV row; `t_cf` is on the raw treatment scale.
#[derive(Debug, Serialize, Deserialize)]
struct PseudoLabelRow {
    record_id: usize,
    t_cf: f64,
    u_tilde: f64,
}

fn write_pseudo_labels(path: &Path, pseudo: &[PseudoLabeledRecord], norm: NormalizationParams) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(Error::from)?;
    for (record_id, p) in pseudo.iter().enumerate() {
        w.serialize(PseudoLabelRow {
            record_id,
            t_cf: norm.invert(p.t_cf),
            u_tilde: p.u_tilde,
        })
        .map_err(Error::from)?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

fn read_pseudo_labels(path: &Path, normalized: &[InstanceRecord], norm: NormalizationParams) -> CliResult<Vec<PseudoLabeledRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::config(path, e))?;
    let rows: Vec<PseudoLabelRow> = r
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::config(path, e))?;
    if rows.len() != normalized.len() || rows.iter().enumerate().any(|(i, row)| row.record_id != i) {
        return Err(CliError::Mismatch(format!(
            "{}: pseudo-labels must list record_id 0..{} in order",
            path.display(),
            normalized.len()
        )));
    }
    Ok(rows
        .into_iter()
        .zip(normalized)
        .map(|(row, base)| PseudoLabeledRecord {
            base: base.clone(),
            t_cf: norm.apply(row.t_cf),
            u_tilde: row.u_tilde,
        })
        .collect())
}

fn save_stage(out: &Path, file: &str, stage: &str, art: &StageArtifacts, manifest: &mut Manifest) -> CliResult<()> {
    let ckpt = out.join(file);
    save_checkpoint(&art.model, &ckpt)?;
    let log_path = out.join(format!("{stage}_log.json"));
    write_json(&log_path, &art.log(stage))?;
    manifest.output(&ckpt)?;
    manifest.output(&log_path)
}

pub fn train(args: &TrainArgs) -> CliResult<()> {
    let started = Instant::now();
    let mut run: TrainRunConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => TrainRunConfig::default(),
    };
    if let Some(seed) = args.seed {
        run.train.seed = seed;
    }
    if let Some(e) = args.max_epochs {
        run.train.max_epochs = e;
    }
    match args.ablate {
        Some(AblateArg::Rc) => run.model.ablations.remove_context = true,
        Some(AblateArg::Ra) => run.model.ablations.replace_attention_with_dense = true,
        Some(AblateArg::Riso) => run.model.ablations.replace_isotonic_with_dense = true,
        None => {}
    }
    if args.can_u_only && args.stage == StageArg::Two {
        return Err(CliError::Config("--can-u-only conflicts with --stage 2".into()));
    }
    run.model.validate()?;
    run.train.validate()?;
    let resolved = TrainCommandConfig {
        stage: match args.stage {
            StageArg::One => "1",
            StageArg::Two => "2",
            StageArg::Both => "both",
        }
        .into(),
        can_u_only: args.can_u_only,
        run: run.clone(),
    };

    let mut schema = load_schema(&args.schema)?;
    if run.model.ablations.remove_context {
        // Context columns are not read at all.
        schema = schema.without_context();
    }
    let records = load_records(&args.data, &schema)?;
    let mut manifest = Manifest::new("train", &resolved)?;
    manifest.input(&args.data)?;
    manifest.input(&args.schema)?;
    create_dir(&args.out)?;

    let run_stage1 = args.can_u_only || args.stage != StageArg::Two;
    let run_stage2 = !args.can_u_only && args.stage != StageArg::One;
    let mut can_u: Option<CanModel> = None;
    if run_stage1 {
        log::info!("stage 1 on {} records", records.len());
        let art = stage1_train(&records, &schema, &run.model.with_variant(Variant::CanU), &run.train)?;
        save_stage(&args.out, "canu.ckpt", "stage1", &art, &mut manifest)?;
        can_u = Some(art.model);
    }
    if run_stage2 {
        if can_u.is_none() {
            let path = args.can_u.clone().unwrap_or_else(|| args.out.join("canu.ckpt"));
            if path.exists() {
                let model = load_checkpoint(&path)?;
                if model.schema != schema {
                    return Err(CliError::Mismatch(format!(
                        "{}: checkpoint schema differs from {}",
                        path.display(),
                        args.schema.display()
                    )));
                }
                manifest.input(&path)?;
                can_u = Some(model);
            } else if args.pseudo_labels.is_none() {
                return Err(CliError::Order(format!(
                    "stage 2 needs a CAN-U checkpoint ({} not found) or --pseudo-labels; run --stage 1 first",
                    path.display()
                )));
            }
        }
        log::info!("stage 2 on {} records", records.len());
        let labels_path = args.out.join("pseudo_labels.csv");
        let art = match &can_u {
            Some(labeler) => {
                let (pseudo, art) = stage2_from_can_u(labeler, &records, &schema, &run.model, &run.train)?;
                write_pseudo_labels(&labels_path, &pseudo, labeler.normalization)?;
                manifest.output(&labels_path)?;
                art
            }
            None => {
                if run.train.resample_counterfactuals {
                    return Err(CliError::Order(
                        "resample_counterfactuals needs a CAN-U checkpoint, not only pseudo-labels".into(),
                    ));
                }
                let path = args.pseudo_labels.as_ref().expect("checked above");
                let (normalized, norm) = normalize_treatment(&records, schema.treatment_kind)?;
                let pseudo = read_pseudo_labels(path, &normalized, norm)?;
                manifest.input(path)?;
                stage2_train(&pseudo, &schema, norm, &run.model.with_variant(Variant::CanD), &run.train, None)?
            }
        };
        save_stage(&args.out, "cand.ckpt", "stage2", &art, &mut manifest)?;
    }
    manifest.finish(&args.out, started)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionRow {
    record_id: usize,
    y_hat_factual: f64,
    t_cf: f64,
    y_hat_counterfactual: f64,
    uplift_hat: f64,
}

/// Resolved configuration of a `predict` run.
#[derive(Serialize)]
struct PredictCommandConfig {
    seed: u64,
    t_cf: Option<f64>,
}

pub fn predict(args: &PredictArgs) -> CliResult<()> {
    let started = Instant::now();
    let model = load_checkpoint(&args.checkpoint)?;
    if let Some(p) = &args.schema {
        let given = load_schema(p)?;
        let expected = &model.schema;
        let matches = &given == expected || (!expected.has_context() && &given.without_context() == expected);
        if !matches {
            return Err(CliError::Mismatch(format!(
                "{} does not match the schema stored in {}",
                p.display(),
                args.checkpoint.display()
            )));
        }
    }
    let records = load_records(&args.data, &model.schema)?;
    let norm = model.normalization;
    let t_cf: Vec<f64> = match (model.schema.treatment_kind, args.t_cf) {
        (TreatmentKind::Binary, Some(_)) => {
            return Err(CliError::Config("--t-cf applies to continuous treatments only".into()));
        }
        (TreatmentKind::Binary, None) => records.iter().map(|r| 1.0 - r.treatment).collect(),
        (TreatmentKind::Continuous, Some(t)) => vec![t; records.len()],
        (TreatmentKind::Continuous, None) => {
            let observed: Vec<f64> = records.iter().map(|r| norm.apply(r.treatment)).collect();
            let sampler = CounterfactualSampler::new(TrainConfig::default().cf_strategy, model.config.isotonic_m, &observed)?;
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            observed
                .iter()
                .map(|&t| sampler.sample(t, &mut rng).map(|u| norm.invert(u)))
                .collect::<Result<_, _>>()?
        }
    };
    let normalized = norm.apply_all(&records);
    let t_f: Vec<f64> = normalized.iter().map(|r| r.treatment).collect();
    let t_cf_norm: Vec<f64> = t_cf.iter().map(|&t| norm.apply(t)).collect();
    let out = model.predict_outcomes_at(&normalized, &[&t_f, &t_cf_norm])?;

    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let mut w = csv::Writer::from_path(&args.out).map_err(Error::from)?;
    for (i, &t) in t_cf.iter().enumerate() {
        let (f, cf) = (out[0][i], out[1][i]);
        w.serialize(PredictionRow {
            record_id: i,
            y_hat_factual: f,
            t_cf: t,
            y_hat_counterfactual: cf,
            uplift_hat: cf - f,
        })
        .map_err(Error::from)?;
    }
    w.flush().map_err(|e| io_error(&args.out, e))?;

    let mut manifest = Manifest::new(
        "predict",
        &PredictCommandConfig {
            seed: args.seed,
            t_cf: args.t_cf,
        },
    )?;
    manifest.input(&args.checkpoint)?;
    manifest.input(&args.data)?;
    manifest.output(&args.out)?;
    let dir = args.out.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    manifest.finish(dir, started)?;
    Ok(())
}

/// Splits `NAME=PATH`; a bare path is named by its file stem.
fn named_path(spec: &str) -> (String, PathBuf) {
    match spec.split_once('=') {
        Some((name, path)) if !name.is_empty() => (name.to_string(), PathBuf::from(path)),
        _ => {
            let path = PathBuf::from(spec);
            let name = path.file_stem().map_or_else(|| spec.to_string(), |s| s.to_string_lossy().into_owned());
            (name, path)
        }
    }
}

/// Scores read from a prediction file, oriented as the effect of moving
/// from control to treated.
struct FixedScores(Vec<f64>);

impl UpliftModel for FixedScores {
    fn uplift(&self, records: &[InstanceRecord], _from: &[f64], _to: &[f64]) -> tscan_core::Result<Vec<f64>> {
        if records.len() != self.0.len() {
            return Err(Error::Contract("fixed scores cover the full dataset only".into()));
        }
        Ok(self.0.clone())
    }
}

/// A model trained without context, fed records with context present.
struct WithoutContext(CanModel);

impl UpliftModel for WithoutContext {
    fn uplift(&self, records: &[InstanceRecord], from: &[f64], to: &[f64]) -> tscan_core::Result<Vec<f64>> {
        let stripped: Vec<InstanceRecord> = records.iter().map(InstanceRecord::without_context).collect();
        self.0.uplift(&stripped, from, to)
    }
}

fn read_prediction_scores(path: &Path, records: &[InstanceRecord]) -> CliResult<FixedScores> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::config(path, e))?;
    let rows: Vec<PredictionRow> = r
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::config(path, e))?;
    if rows.len() != records.len() {
        return Err(CliError::Mismatch(format!(
            "{}: {} predictions for {} records",
            path.display(),
            rows.len(),
            records.len()
        )));
    }
    rows.iter()
        .zip(records)
        .enumerate()
        .map(|(i, (row, rec))| {
            if row.record_id != i || row.t_cf != 1.0 - rec.treatment {
                return Err(CliError::Mismatch(format!(
                    "{}: row {i} does not belong to this dataset",
                    path.display()
                )));
            }
            // uplift_hat is y(t_cf) - y(t); flip treated rows to y(1) - y(0).
            Ok(row.uplift_hat * (row.t_cf - rec.treatment))
        })
        .collect::<CliResult<Vec<f64>>>()
        .map(FixedScores)
}

/// Values of `columns` per data row, joined by `|`.
fn group_keys(path: &Path, columns: &[String]) -> CliResult<Vec<String>> {
    let missing = |c: &str| CliError::Config(format!("--group-by column `{c}` not found in {}", path.display()));
    match DataFormat::from_path(path) {
        DataFormat::Csv => {
            let mut r = csv::Reader::from_path(path).map_err(|e| CliError::config(path, e))?;
            let header = r.headers().map_err(|e| CliError::config(path, e))?.clone();
            let idx: Vec<usize> = columns
                .iter()
                .map(|c| header.iter().position(|h| h == c).ok_or_else(|| missing(c)))
                .collect::<CliResult<_>>()?;
            r.records()
                .map(|row| {
                    let row = row.map_err(|e| CliError::config(path, e))?;
                    Ok(idx.iter().map(|&i| row.get(i).unwrap_or("")).collect::<Vec<_>>().join("|"))
                })
                .collect()
        }
        DataFormat::JsonLines => {
            let file = File::open(path).map_err(|e| io_error(path, e))?;
            let mut keys = Vec::new();
            for line in BufReader::new(file).lines() {
                let line = line.map_err(|e| io_error(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let obj: serde_json::Map<String, serde_json::Value> =
                    serde_json::from_str(&line).map_err(|e| CliError::config(path, e))?;
                let parts = columns
                    .iter()
                    .map(|c| match obj.get(c).ok_or_else(|| missing(c))? {
                        serde_json::Value::String(s) => Ok(s.clone()),
                        v => Ok(v.to_string()),
                    })
                    .collect::<CliResult<Vec<_>>>()?;
                keys.push(parts.join("|"));
            }
            Ok(keys)
        }
    }
}

/// Resolved configuration of an `evaluate` run.
#[derive(Serialize)]
struct EvaluateCommandConfig<'a> {
    eval: &'a EvalOptions,
    group_by: &'a Option<Vec<String>>,
    models: Vec<String>,
    seed: u64,
}

pub fn evaluate(args: &EvaluateArgs) -> CliResult<()> {
    let started = Instant::now();
    let mut opts: EvalOptions = match &args.config {
        Some(p) => read_json(p)?,
        None => EvalOptions::default(),
    };
    if let Some(t) = args.ties {
        opts.ties = t.into();
    }
    if let Some(m) = args.min_group_size {
        opts.min_group_size = m;
    }
    if let Some(b) = args.bins {
        opts.bins = b;
    }
    let schema = load_schema(&args.schema)?;
    let mut records = load_records(&args.data, &schema)?;
    if let Some(cols) = &args.group_by {
        let keys = group_keys(&args.data, cols)?;
        for (r, k) in records.iter_mut().zip(keys) {
            r.group_key = Some(k);
        }
    }
    let kind = schema.treatment_kind;
    let mut manifest = Manifest::new("evaluate", &())?;
    manifest.input(&args.data)?;
    manifest.input(&args.schema)?;

    let mut scorers: Vec<(String, Box<dyn UpliftModel>)> = Vec::new();
    for spec in &args.predictions {
        let (name, path) = named_path(spec);
        if kind == TreatmentKind::Continuous {
            return Err(CliError::Config(format!(
                "{}: continuous treatments are evaluated from checkpoints, not prediction files",
                path.display()
            )));
        }
        scorers.push((name, Box::new(read_prediction_scores(&path, &records)?)));
        manifest.input(&path)?;
    }
    for spec in &args.checkpoints {
        let (name, path) = named_path(spec);
        let model = load_checkpoint(&path)?;
        let scorer: Box<dyn UpliftModel> = if model.schema == schema {
            Box::new(model)
        } else if model.schema == schema.without_context() {
            Box::new(WithoutContext(model))
        } else {
            return Err(CliError::Mismatch(format!(
                "{}: checkpoint schema differs from {}",
                path.display(),
                args.schema.display()
            )));
        };
        scorers.push((name, scorer));
        manifest.input(&path)?;
    }
    if args.oracle {
        if records.iter().any(|r| r.true_ite.is_none()) {
            return Err(CliError::Config("--oracle needs a true_ite column".into()));
        }
        scorers.push(("oracle".into(), Box::new(OracleScorer)));
    }
    if args.random {
        scorers.push(("random".into(), Box::new(RandomScorer { seed: args.seed })));
    }
    if scorers.is_empty() {
        return Err(CliError::Config(
            "nothing to evaluate: give --predictions, --checkpoint, --oracle or --random".into(),
        ));
    }

    let models = scorers
        .iter()
        .map(|(name, s)| evaluate_model(name, s.as_ref(), &records, kind, &opts))
        .collect::<tscan_core::Result<Vec<ModelEvaluation>>>()?;
    let report = EvalReport {
        options: opts.clone(),
        models,
    };
    manifest.config = serde_json::to_value(EvaluateCommandConfig {
        eval: &opts,
        group_by: &args.group_by,
        models: scorers.iter().map(|(n, _)| n.clone()).collect(),
        seed: args.seed,
    })
    .map_err(Error::from)?;

    create_dir(&args.out)?;
    let report_path = args.out.join("report.json");
    let curves_path = args.out.join("curves.csv");
    write_json(&report_path, &report)?;
    let curves: Vec<_> = report
        .models
        .iter()
        .filter_map(|m| m.curve.clone().map(|c| (m.model.clone(), c)))
        .collect();
    export_gain_curves(&curves, &curves_path)?;
    manifest.output(&report_path)?;
    manifest.output(&curves_path)?;
    manifest.finish(&args.out, started)?;
    print!("{}", report.table());
    if report.models.iter().all(ModelEvaluation::all_undefined) {
        return Err(Error::MetricUndefined("every metric of every model is undefined".into()).into());
    }
    Ok(())
}

pub fn bench(args: &BenchArgs) -> CliResult<()> {
    let started = Instant::now();
    let mut cfg: BenchConfig = match (&args.from_manifest, &args.config) {
        (Some(m), _) => Manifest::load(m)?.config_for("bench")?,
        (None, Some(p)) => read_json(p)?,
        (None, None) => BenchConfig::default(),
    };
    if let Some(seeds) = &args.seeds {
        cfg.seeds = seeds.clone();
    }
    let summary = run_bench(&cfg, args.jobs)?;

    create_dir(&args.out)?;
    let mut manifest = Manifest::new("bench", &cfg)?;
    if let Some(m) = &args.from_manifest {
        manifest.input(m)?;
    }
    let summary_path = args.out.join("summary.json");
    let table_path = args.out.join("table.txt");
    let curves_path = args.out.join("curves.csv");
    write_json(&summary_path, &summary)?;
    let decreased = summary
        .per_seed
        .iter()
        .filter(|o| o.stage1.best_epoch_mmd < o.stage1.epoch0_mmd)
        .count();
    let table = format!(
        "{}\nstage-1 validation MMD below epoch 0 at the best epoch: {decreased}/{} seeds\n",
        summary.table(),
        summary.per_seed.len()
    );
    std::fs::write(&table_path, &table).map_err(|e| io_error(&table_path, e))?;
    let curves: Vec<_> = summary
        .per_seed
        .iter()
        .flat_map(|o| {
            o.report
                .models
                .iter()
                .filter_map(move |m| m.curve.clone().map(|c| (format!("seed{}/{}", o.seed, m.model), c)))
        })
        .collect();
    export_gain_curves(&curves, &curves_path)?;
    for p in [&summary_path, &table_path, &curves_path] {
        manifest.output(p)?;
    }
    manifest.finish(&args.out, started)?;
    print!("{table}");
    Ok(())
}
