//! Per-model metric bundles and the side-by-side summary table.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::continuous::{mean_over_pairs, Binarized};
use crate::eval::curve::{qini, uplift_curve, uplift_rmse, GainCurve, ScoredRecord, TieMode};
use crate::eval::stratified::{stratified_metric, Exclusion, Metric, DEFAULT_MIN_GROUP_SIZE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    pub min_group_size: usize,
    pub ties: TieMode,
    /// Points of the reported gain curve; 0 keeps one point per record.
    pub curve_points: usize,
    /// Treatment bins for continuous treatments.
    pub bins: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            min_group_size: DEFAULT_MIN_GROUP_SIZE,
            ties: TieMode::Stable,
            curve_points: 101,
            bins: 4,
        }
    }
}

/// One row of the per-group table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub group_key: String,
    pub n: usize,
    pub auuc: Option<f64>,
    pub qini: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub excluded: Option<Exclusion>,
}

/// Metrics of one scorer; `None` marks an undefined metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelEvaluation {
    pub model: String,
    pub auuc: Option<f64>,
    pub qini: Option<f64>,
    pub cauuc: Option<f64>,
    pub cqini: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub uplift_rmse: Option<f64>,
    pub groups: Vec<GroupRow>,
    /// Number of bin pairs averaged over (continuous treatment only).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub bin_pairs: Option<usize>,
    pub curve: Option<GainCurve>,
}

impl ModelEvaluation {
    pub fn all_undefined(&self) -> bool {
        [self.auuc, self.qini, self.cauuc, self.cqini].iter().all(Option::is_none)
    }
}

fn defined<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::MetricUndefined(msg)) => {
            log::warn!("metric undefined: {msg}");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

fn has_groups(scored: &[ScoredRecord]) -> bool {
    !scored.is_empty() && scored.iter().all(|r| r.group_key.is_some())
}

fn shaped(curve: GainCurve, points: usize) -> GainCurve {
    if points == 0 {
        curve
    } else {
        curve.resample(points)
    }
}

/// Binary-treatment evaluation of one scorer.
pub fn evaluate_scored(model: &str, scored: &[ScoredRecord], opts: &EvalOptions) -> Result<ModelEvaluation> {
    let curve = defined(uplift_curve(scored, opts.ties))?;
    let auuc = curve.as_ref().map(GainCurve::area);
    let qini = defined(qini(scored, opts.ties))?;
    let (mut cauuc, mut cqini, mut groups) = (None, None, Vec::new());
    if has_groups(scored) {
        let a = defined(stratified_metric(scored, Metric::Auuc, opts.min_group_size, opts.ties))?;
        let q = defined(stratified_metric(scored, Metric::Qini, opts.min_group_size, opts.ties))?;
        cauuc = a.as_ref().map(|s| s.value);
        cqini = q.as_ref().map(|s| s.value);
        if let (Some(a), Some(q)) = (&a, &q) {
            groups = a
                .groups
                .iter()
                .zip(&q.groups)
                .map(|(ga, gq)| GroupRow {
                    group_key: ga.group_key.clone(),
                    n: ga.n,
                    auuc: ga.value,
                    qini: gq.value,
                    excluded: ga.excluded.or(gq.excluded),
                })
                .collect();
        }
    }
    let uplift_rmse = if scored.iter().all(|r| r.true_ite.is_some()) && !scored.is_empty() {
        Some(uplift_rmse(scored)?)
    } else {
        None
    };
    Ok(ModelEvaluation {
        model: model.into(),
        auuc,
        qini,
        cauuc,
        cqini,
        uplift_rmse,
        groups,
        bin_pairs: None,
        curve: curve.map(|c| shaped(c, opts.curve_points)),
    })
}

/// Continuous-treatment evaluation: every metric is the unweighted mean over
/// the adjacent bin pairs; the curve is the pointwise mean of the pair curves.
pub fn evaluate_binarized(model: &str, binarized: &Binarized, opts: &EvalOptions) -> Result<ModelEvaluation> {
    let pairs = &binarized.pairs;
    let ties = opts.ties;
    let auuc = defined(mean_over_pairs(pairs, |s| uplift_curve(s, ties).map(|c| c.area())))?;
    let qini = defined(mean_over_pairs(pairs, |s| qini(s, ties)))?;
    let grouped = pairs.iter().all(|p| has_groups(&p.scored));
    let (cauuc, cqini) = if grouped {
        let m = opts.min_group_size;
        (
            defined(mean_over_pairs(pairs, |s| stratified_metric(s, Metric::Auuc, m, ties).map(|x| x.value)))?,
            defined(mean_over_pairs(pairs, |s| stratified_metric(s, Metric::Qini, m, ties).map(|x| x.value)))?,
        )
    } else {
        (None, None)
    };
    let points = if opts.curve_points == 0 { 101 } else { opts.curve_points };
    let curves: Vec<GainCurve> = pairs
        .iter()
        .filter_map(|p| uplift_curve(&p.scored, ties).ok())
        .map(|c| c.resample(points))
        .collect();
    let curve = (!curves.is_empty()).then(|| GainCurve {
        points: (0..points)
            .map(|i| {
                let y = curves.iter().map(|c| c.points[i].1).sum::<f64>() / curves.len() as f64;
                (curves[0].points[i].0, y)
            })
            .collect(),
    });
    Ok(ModelEvaluation {
        model: model.into(),
        auuc,
        qini,
        cauuc,
        cqini,
        uplift_rmse: None,
        groups: Vec::new(),
        bin_pairs: Some(pairs.len()),
        curve,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub options: EvalOptions,
    pub models: Vec<ModelEvaluation>,
}

impl EvalReport {
    /// Plain-text table with columns CQINI, QINI, CAUUC, AUUC (and RMSE when known).
    pub fn table(&self) -> String {
        let width = self.models.iter().map(|m| m.model.len()).max().unwrap_or(5).max(5);
        let with_rmse = self.models.iter().any(|m| m.uplift_rmse.is_some());
        let cell = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
        let mut out = format!("{:<width$}  {:>8}  {:>8}  {:>8}  {:>8}", "model", "CQINI", "QINI", "CAUUC", "AUUC");
        if with_rmse {
            let _ = write!(out, "  {:>8}", "RMSE");
        }
        out.push('\n');
        for m in &self.models {
            let _ = write!(
                out,
                "{:<width$}  {:>8}  {:>8}  {:>8}  {:>8}",
                m.model,
                cell(m.cqini),
                cell(m.qini),
                cell(m.cauuc),
                cell(m.auuc)
            );
            if with_rmse {
                let _ = write!(out, "  {:>8}", cell(m.uplift_rmse));
            }
            out.push('\n');
        }
        out
    }
}
