//! Context-stratified metrics: the group-size weighted mean of a per-group
//! AUUC or Qini.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::curve::{auuc, qini, ScoredRecord, TieMode};

pub const DEFAULT_MIN_GROUP_SIZE: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Auuc,
    Qini,
}

impl Metric {
    pub fn compute(self, scored: &[ScoredRecord], ties: TieMode) -> Result<f64> {
        match self {
            Metric::Auuc => auuc(scored, ties),
            Metric::Qini => qini(scored, ties),
        }
    }
}

/// Why a group did not enter the weighted mean.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exclusion {
    TooSmall,
    SingleArm,
    /// Both arms present but the curve's terminal value is zero.
    Undefined,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupMetric {
    pub group_key: String,
    pub n: usize,
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub excluded: Option<Exclusion>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stratified {
    pub value: f64,
    /// Sorted by group key.
    pub groups: Vec<GroupMetric>,
}

/// Weighted mean of the included groups' values. A single included group
/// returns its value unchanged (`n * v / n` is not always `v` in floating point).
pub fn weighted_mean(groups: &[GroupMetric]) -> Option<f64> {
    let included: Vec<(f64, f64)> = groups.iter().filter_map(|g| g.value.map(|v| (g.n as f64, v))).collect();
    if let [(_, v)] = included[..] {
        return Some(v);
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (n, v) in included {
        num += n * v;
        den += n;
    }
    (den > 0.0).then(|| num / den)
}

/// Splits records by `group_key`, preserving input order within each group.
pub fn group_records(scored: &[ScoredRecord]) -> Result<BTreeMap<String, Vec<ScoredRecord>>> {
    let mut groups: BTreeMap<String, Vec<ScoredRecord>> = BTreeMap::new();
    for (i, r) in scored.iter().enumerate() {
        let key = r
            .group_key
            .as_ref()
            .ok_or_else(|| Error::Contract(format!("record {i} has no group_key")))?;
        groups.entry(key.clone()).or_default().push(r.clone());
    }
    Ok(groups)
}

pub fn stratified_metric(
    scored: &[ScoredRecord],
    metric: Metric,
    min_group_size: usize,
    ties: TieMode,
) -> Result<Stratified> {
    let mut groups = Vec::new();
    for (key, members) in group_records(scored)? {
        let n = members.len();
        let both_arms = members.iter().any(|r| r.treated) && members.iter().any(|r| !r.treated);
        let (value, excluded) = if n < min_group_size {
            (None, Some(Exclusion::TooSmall))
        } else if !both_arms {
            (None, Some(Exclusion::SingleArm))
        } else {
            match metric.compute(&members, ties) {
                Ok(v) => (Some(v), None),
                Err(Error::MetricUndefined(_)) => (None, Some(Exclusion::Undefined)),
                Err(e) => return Err(e),
            }
        };
        groups.push(GroupMetric {
            group_key: key,
            n,
            value,
            excluded,
        });
    }
    let value = weighted_mean(&groups).ok_or_else(|| Error::MetricUndefined("no group qualifies".into()))?;
    Ok(Stratified { value, groups })
}
