use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn tscan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tscan"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("tscan runs")
}

fn ok(args: &[&str]) -> String {
    let out = tscan(args);
    assert!(
        out.status.success(),
        "tscan {} failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    /// A small biased binary dataset.
    fn new(extra: &[&str]) -> Self {
        Self::sized("800", extra)
    }

    fn sized(n: &str, extra: &[&str]) -> Self {
        let dir = TempDir::new().unwrap();
        let out = dir.path().join("data");
        let mut args = vec!["gen-data", "--n", n, "--seed", "5", "--out", s(&out)];
        args.extend_from_slice(extra);
        ok(&args);
        Fixture { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn train(&self, out: &str, extra: &[&str]) -> Output {
        let (data, schema, out) = (self.path("data/train.csv"), self.path("data/schema.json"), self.path(out));
        let mut args = vec![
            "train",
            "--data",
            s(&data),
            "--schema",
            s(&schema),
            "--max-epochs",
            "2",
            "--out",
            s(&out),
        ];
        args.extend_from_slice(extra);
        tscan(&args)
    }
}

fn read_csv(p: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(p).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"))
}

#[test]
fn gen_data_is_deterministic_per_seed() {
    let a = Fixture::new(&[]);
    let b = Fixture::new(&[]);
    for f in ["train.csv", "test.csv", "schema.json", "dgp.json"] {
        let pa = a.path(&format!("data/{f}"));
        let pb = b.path(&format!("data/{f}"));
        assert_eq!(std::fs::read(pa).unwrap(), std::fs::read(pb).unwrap(), "{f}");
    }
    let (_, train) = read_csv(&a.path("data/train.csv"));
    let (_, test) = read_csv(&a.path("data/test.csv"));
    assert_eq!(train.len() + test.len(), 800);
}

#[test]
fn zero_bias_is_described_as_constant_propensity() {
    let f = Fixture::new(&["--bias-strength", "0"]);
    assert_eq!(json(&f.path("data/dgp.json"))["constant_propensity"], Value::Bool(true));
    let biased = Fixture::new(&[]);
    assert_eq!(json(&biased.path("data/dgp.json"))["constant_propensity"], Value::Bool(false));
}

#[test]
fn describe_dgp_prints_the_coefficient_tables() {
    let out = ok(&["describe-dgp"]);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert!(v.get("equations").is_some() && v.get("coefficients").is_some(), "{out}");
}

#[test]
fn stage_two_without_stage_one_is_an_order_error() {
    let f = Fixture::new(&[]);
    let out = f.train("model", &["--stage", "2"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn separate_stages_match_a_combined_run() {
    let f = Fixture::new(&[]);
    assert!(f.train("split", &["--stage", "1"]).status.success());
    assert!(f.path("split/canu.ckpt").exists() && !f.path("split/cand.ckpt").exists());
    assert!(f.train("split", &["--stage", "2"]).status.success());
    assert!(f.train("both", &[]).status.success());
    for file in ["canu.ckpt", "cand.ckpt", "pseudo_labels.csv"] {
        assert_eq!(
            std::fs::read(f.path(&format!("split/{file}"))).unwrap(),
            std::fs::read(f.path(&format!("both/{file}"))).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn predictions_flip_binary_treatment_and_telescope() {
    let f = Fixture::new(&[]);
    assert!(f.train("model", &[]).status.success());
    let (ckpt, test, out) = (f.path("model/cand.ckpt"), f.path("data/test.csv"), f.path("pred/p.csv"));
    ok(&["predict", "--checkpoint", s(&ckpt), "--data", s(&test), "--out", s(&out)]);
    let (dh, data) = read_csv(&test);
    let (ph, preds) = read_csv(&out);
    assert_eq!(data.len(), preds.len());
    let t = column(&dh, "treatment");
    let [yf, tcf, ycf, u] = ["y_hat_factual", "t_cf", "y_hat_counterfactual", "uplift_hat"].map(|c| column(&ph, c));
    for (d, p) in data.iter().zip(&preds) {
        let num = |s: &str| s.parse::<f64>().unwrap();
        assert_eq!(num(&p[tcf]), 1.0 - num(&d[t]));
        assert_eq!((num(&p[ycf]) - num(&p[yf])).to_bits(), num(&p[u]).to_bits());
    }

    let fixed = tscan(&["predict", "--checkpoint", s(&ckpt), "--data", s(&test), "--t-cf", "0.5", "--out", s(&out)]);
    assert_eq!(fixed.status.code(), Some(2));
}

#[test]
fn predicting_with_a_different_schema_is_a_mismatch() {
    let f = Fixture::new(&[]);
    assert!(f.train("model", &[]).status.success());
    let mut schema = json(&f.path("data/schema.json"));
    schema["merchant_numeric"][0] = Value::String("renamed".into());
    let other = f.path("other_schema.json");
    std::fs::write(&other, serde_json::to_vec(&schema).unwrap()).unwrap();
    let out = tscan(&[
        "predict",
        "--checkpoint",
        s(&f.path("model/cand.ckpt")),
        "--data",
        s(&f.path("data/test.csv")),
        "--schema",
        s(&other),
        "--out",
        s(&f.path("pred/p.csv")),
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

fn evaluate(f: &Fixture, out: &str, extra: &[&str]) -> Output {
    let (data, schema, out) = (f.path("data/test.csv"), f.path("data/schema.json"), f.path(out));
    let mut args = vec!["evaluate", "--data", s(&data), "--schema", s(&schema), "--out", s(&out)];
    args.extend_from_slice(extra);
    tscan(&args)
}

#[test]
fn oracle_scores_dominate_random_scores() {
    let f = Fixture::sized("4000", &["--test-bias-strength", "0"]);
    let out = evaluate(&f, "eval", &["--oracle", "--random", "--min-group-size", "20"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&f.path("eval/report.json"));
    let models = report["models"].as_array().unwrap();
    let get = |name: &str| models.iter().find(|m| m["model"] == name).unwrap().clone();
    let (oracle, random) = (get("oracle"), get("random"));
    for metric in ["auuc", "qini", "cauuc", "cqini"] {
        let (o, r) = (oracle[metric].as_f64().unwrap(), random[metric].as_f64().unwrap());
        assert!(o > r, "{metric}: oracle {o} vs random {r}");
    }
    assert!(f.path("eval/curves.csv").exists() && f.path("eval/manifest.json").exists());
}

#[test]
fn grouping_by_a_missing_column_names_it() {
    let f = Fixture::new(&[]);
    let out = evaluate(&f, "eval", &["--oracle", "--group-by", "district,no_such_column"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_column"));
}

#[test]
fn single_group_cauuc_equals_auuc() {
    let f = Fixture::sized("2000", &[]);
    // A constant column puts every record in the same stratum.
    let (h, rows) = read_csv(&f.path("data/test.csv"));
    let mut w = csv::Writer::from_path(f.path("data/one_group.csv")).unwrap();
    let mut header = h.clone();
    header.push("segment".into());
    w.write_record(&header).unwrap();
    for r in rows {
        let mut r = r.clone();
        r.push("all".into());
        w.write_record(&r).unwrap();
    }
    w.flush().unwrap();
    let (data, schema, eval) = (f.path("data/one_group.csv"), f.path("data/schema.json"), f.path("one"));
    ok(&[
        "evaluate",
        "--data",
        s(&data),
        "--schema",
        s(&schema),
        "--oracle",
        "--group-by",
        "segment",
        "--out",
        s(&eval),
    ]);
    let report = json(&eval.join("report.json"));
    let m = &report["models"][0];
    assert_eq!(m["auuc"], m["cauuc"]);
    assert_eq!(m["qini"], m["cqini"]);
}

#[test]
fn context_ablation_is_recorded_and_evaluable_on_the_full_schema() {
    let f = Fixture::new(&[]);
    assert!(f.train("rc", &["--ablate", "rc"]).status.success());
    let manifest = std::fs::read_to_string(f.path("rc/manifest.json")).unwrap();
    assert!(manifest.contains("\"remove_context\": true"), "{manifest}");
    let ckpt = f.path("rc/cand.ckpt");
    let out = evaluate(&f, "eval", &["--checkpoint", &format!("rc={}", s(&ckpt)), "--min-group-size", "10"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn bench_reruns_bit_exactly_from_its_manifest() {
    let dir = TempDir::new().unwrap();
    let cfg = serde_json::json!({
        "data": {"synthetic": {"n": 1200, "seed": 0}, "test_fraction": 0.25, "test_bias_strength": 0.0},
        "model": {"embedding_dim": 4, "context_mlp_widths": [8], "head_mlp_widths": [8]},
        "train": {"max_epochs": 2, "patience": 2},
        "baseline": {"hidden": [8]},
        "eval": {"min_group_size": 20},
        "seeds": [0, 1]
    });
    let cfg_path = dir.path().join("bench.json");
    std::fs::write(&cfg_path, serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();
    let (first, second) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["bench", "--config", s(&cfg_path), "--out", s(&first)]);
    ok(&["bench", "--from-manifest", s(&first.join("manifest.json")), "--out", s(&second)]);
    for f in ["summary.json", "table.txt", "curves.csv"] {
        assert_eq!(std::fs::read(first.join(f)).unwrap(), std::fs::read(second.join(f)).unwrap(), "{f}");
    }
    let summary = json(&first.join("summary.json"));
    assert_eq!(summary["seeds"], serde_json::json!([0, 1]));
}
