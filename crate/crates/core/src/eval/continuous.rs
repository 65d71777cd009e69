//! Continuous treatments are scored as several binary problems: treatment
//! values are cut into equal-mass bins and each adjacent pair of bins becomes
//! a control (lower bin) versus treated (upper bin) comparison.

use serde::{Deserialize, Serialize};

use crate::data::InstanceRecord;
use crate::error::{Error, Result};
use crate::eval::curve::ScoredRecord;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreatmentBin {
    pub count: usize,
    /// Smallest and largest treatment in the bin; NaN when empty.
    pub min: f64,
    pub max: f64,
}

impl TreatmentBin {
    pub fn midpoint(&self) -> f64 {
        (self.min + self.max) / 2.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinPair {
    pub low: usize,
    pub high: usize,
    pub t_from: f64,
    pub t_to: f64,
    pub scored: Vec<ScoredRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedPair {
    pub low: usize,
    pub high: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Binarized {
    pub bins: Vec<TreatmentBin>,
    pub pairs: Vec<BinPair>,
    pub skipped: Vec<SkippedPair>,
}

/// Bin index of every treatment value. Cut points target equal counts and
/// are moved to the nearest change of value so equal treatments share a bin;
/// bins can therefore be empty.
pub fn assign_bins(ts: &[f64], bins: usize) -> Result<(Vec<usize>, Vec<TreatmentBin>)> {
    if bins < 2 {
        return Err(Error::Contract(format!("need at least 2 bins, got {bins}")));
    }
    if let Some(t) = ts.iter().find(|t| !t.is_finite()) {
        return Err(Error::Contract(format!("non-finite treatment {t}")));
    }
    let n = ts.len();
    let mut sorted = ts.to_vec();
    sorted.sort_by(f64::total_cmp);
    let changes: Vec<usize> = (1..n).filter(|&p| sorted[p - 1] < sorted[p]).collect();
    // Threshold values: a record goes above cut j when t >= threshold[j].
    let thresholds: Vec<f64> = (1..bins)
        .map(|j| {
            let target = (j as f64 * n as f64 / bins as f64).round() as usize;
            let nearest = changes
                .iter()
                .min_by_key(|&&p| (p.abs_diff(target), p))
                .copied();
            nearest.map_or(f64::INFINITY, |p| sorted[p])
        })
        .collect();
    let mut out = vec![
        TreatmentBin {
            count: 0,
            min: f64::NAN,
            max: f64::NAN,
        };
        bins
    ];
    let assignment: Vec<usize> = ts
        .iter()
        .map(|&t| {
            let b = thresholds.partition_point(|&th| th <= t);
            let bin = &mut out[b];
            bin.count += 1;
            bin.min = if bin.count == 1 { t } else { bin.min.min(t) };
            bin.max = if bin.count == 1 { t } else { bin.max.max(t) };
            b
        })
        .collect();
    Ok((assignment, out))
}

/// Builds one scored set per adjacent bin pair. `predict(records, t_from,
/// t_to)` returns the predicted uplift of each record between raw treatments.
pub fn binarize_continuous<F>(records: &[InstanceRecord], bins: usize, mut predict: F) -> Result<Binarized>
where
    F: FnMut(&[InstanceRecord], &[f64], &[f64]) -> Result<Vec<f64>>,
{
    let ts: Vec<f64> = records.iter().map(|r| r.treatment).collect();
    let (assignment, bin_info) = assign_bins(&ts, bins)?;
    let mut pairs = Vec::new();
    let mut skipped = Vec::new();
    for low in 0..bins - 1 {
        let high = low + 1;
        if bin_info[low].count == 0 || bin_info[high].count == 0 {
            skipped.push(SkippedPair {
                low,
                high,
                reason: "empty_bin".into(),
            });
            continue;
        }
        let members: Vec<usize> = (0..records.len()).filter(|&i| assignment[i] == low || assignment[i] == high).collect();
        let subset: Vec<InstanceRecord> = members.iter().map(|&i| records[i].clone()).collect();
        let (t_from, t_to) = (bin_info[low].midpoint(), bin_info[high].midpoint());
        let scores = predict(&subset, &vec![t_from; subset.len()], &vec![t_to; subset.len()])?;
        if scores.len() != subset.len() {
            return Err(Error::Contract(format!("{} scores for {} records", scores.len(), subset.len())));
        }
        let scored = members
            .iter()
            .zip(scores)
            .map(|(&i, score)| ScoredRecord {
                score,
                treated: assignment[i] == high,
                outcome: records[i].outcome,
                group_key: records[i].group_key.clone(),
                true_ite: None,
            })
            .collect();
        pairs.push(BinPair {
            low,
            high,
            t_from,
            t_to,
            scored,
        });
    }
    if pairs.is_empty() {
        return Err(Error::MetricUndefined("every adjacent bin pair has an empty bin".into()));
    }
    Ok(Binarized {
        bins: bin_info,
        pairs,
        skipped,
    })
}

/// Unweighted mean of `metric` over the pairs where it is defined.
pub fn mean_over_pairs<F>(pairs: &[BinPair], mut metric: F) -> Result<f64>
where
    F: FnMut(&[ScoredRecord]) -> Result<f64>,
{
    let mut values = Vec::new();
    for p in pairs {
        match metric(&p.scored) {
            Ok(v) => values.push(v),
            Err(Error::MetricUndefined(msg)) => log::warn!("bins {}-{}: {msg}", p.low, p.high),
            Err(e) => return Err(e),
        }
    }
    if values.is_empty() {
        return Err(Error::MetricUndefined("metric undefined on every bin pair".into()));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}
