//! Uplift and Qini curves over records ranked by predicted uplift, and the
//! normalized areas derived from them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One record as seen by the ranking metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredRecord {
    /// Predicted uplift; higher is targeted first.
    pub score: f64,
    pub treated: bool,
    pub outcome: f64,
    pub group_key: Option<String>,
    pub true_ite: Option<f64>,
}

/// How records with equal scores are ordered.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieMode {
    /// Input order within a tie.
    #[default]
    Stable,
    /// The curve is evaluated at tie-block boundaries and interpolated
    /// linearly inside a block, which makes it invariant to the order of
    /// tied records.
    Average,
}

/// Normalized cumulative curve: `points[k] = (k / N, C(k) / C(N))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainCurve {
    pub points: Vec<(f64, f64)>,
}

impl GainCurve {
    /// Trapezoidal area under the curve.
    pub fn area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
            .sum()
    }

    /// Linear interpolation at `n >= 2` evenly spaced fractions.
    pub fn resample(&self, n: usize) -> GainCurve {
        let n = n.max(2);
        let mut j = 0;
        let points = (0..n)
            .map(|i| {
                let x = i as f64 / (n - 1) as f64;
                while j + 2 < self.points.len() && self.points[j + 1].0 < x {
                    j += 1;
                }
                let (a, b) = (self.points[j], self.points[(j + 1).min(self.points.len() - 1)]);
                let y = if b.0 > a.0 { a.1 + (x - a.0) / (b.0 - a.0) * (b.1 - a.1) } else { b.1 };
                (x, y)
            })
            .collect();
        GainCurve { points }
    }
}

/// Running sums of a ranked prefix.
#[derive(Clone, Copy, Debug, Default)]
struct Prefix {
    n1: f64,
    s1: f64,
    n0: f64,
    s0: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum CurveKind {
    Uplift,
    Qini,
}

impl CurveKind {
    /// Value at a prefix, or `None` when it is undefined there.
    fn value(self, p: &Prefix) -> Option<f64> {
        match self {
            CurveKind::Uplift => {
                (p.n1 > 0.0 && p.n0 > 0.0).then(|| (p.n1 + p.n0) * (p.s1 / p.n1 - p.s0 / p.n0))
            }
            CurveKind::Qini => Some(if p.n0 > 0.0 { p.s1 - p.s0 * (p.n1 / p.n0) } else { p.s1 }),
        }
    }
}

fn ranking(scored: &[ScoredRecord]) -> Result<Vec<usize>> {
    if let Some(r) = scored.iter().find(|r| !r.score.is_finite()) {
        return Err(Error::Contract(format!("non-finite score {}", r.score)));
    }
    if !scored.iter().any(|r| r.treated) || scored.iter().all(|r| r.treated) {
        return Err(Error::MetricUndefined("one treatment group is empty".into()));
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[b].score.total_cmp(&scored[a].score));
    Ok(order)
}

/// Unnormalized curve values `C(0..=N)`.
fn raw_curve(scored: &[ScoredRecord], kind: CurveKind, ties: TieMode) -> Result<Vec<f64>> {
    let order = ranking(scored)?;
    let n = order.len();
    let mut values = vec![0.0; n + 1];
    let mut p = Prefix::default();
    let mut last = 0.0;
    // Start of the current tie block, in prefix length.
    let mut block_start = 0;
    for (k, &i) in order.iter().enumerate() {
        let r = &scored[i];
        if r.treated {
            p.n1 += 1.0;
            p.s1 += r.outcome;
        } else {
            p.n0 += 1.0;
            p.s0 += r.outcome;
        }
        let block_end = ties == TieMode::Stable || k + 1 == n || scored[order[k + 1]].score != r.score;
        if !block_end {
            continue;
        }
        last = kind.value(&p).unwrap_or(last);
        let len = k + 1 - block_start;
        let base = values[block_start];
        for j in 1..=len {
            values[block_start + j] = base + (last - base) * (j as f64 / len as f64);
        }
        values[k + 1] = last;
        block_start = k + 1;
    }
    Ok(values)
}

fn normalize(values: Vec<f64>) -> Result<GainCurve> {
    let n = values.len() - 1;
    let total = values[n];
    if total == 0.0 || !total.is_finite() {
        return Err(Error::MetricUndefined(format!("terminal curve value is {total}")));
    }
    let points = values
        .into_iter()
        .enumerate()
        .map(|(k, v)| (k as f64 / n as f64, v / total))
        .collect();
    Ok(GainCurve { points })
}

/// Uplift curve with `U(k) = k * (mean treated outcome - mean control outcome)`
/// over the top-`k` prefix; prefixes missing a group repeat the last defined
/// value (0 before any).
pub fn uplift_curve(scored: &[ScoredRecord], ties: TieMode) -> Result<GainCurve> {
    normalize(raw_curve(scored, CurveKind::Uplift, ties)?)
}

/// Qini curve `Q(k) = S1(k) - S0(k) * N1(k) / N0(k)`, or `S1(k)` while no
/// control record has been seen.
pub fn qini_curve(scored: &[ScoredRecord], ties: TieMode) -> Result<GainCurve> {
    normalize(raw_curve(scored, CurveKind::Qini, ties)?)
}

/// Area under the normalized uplift curve; random ranking gives about 0.5.
pub fn auuc(scored: &[ScoredRecord], ties: TieMode) -> Result<f64> {
    Ok(uplift_curve(scored, ties)?.area())
}

/// Area under the normalized Qini curve minus the diagonal's 0.5.
pub fn qini(scored: &[ScoredRecord], ties: TieMode) -> Result<f64> {
    Ok(qini_curve(scored, ties)?.area() - 0.5)
}

/// Root mean squared error of scores against the known effects.
pub fn uplift_rmse(scored: &[ScoredRecord]) -> Result<f64> {
    if scored.is_empty() {
        return Err(Error::Contract("no records".into()));
    }
    let mut se = 0.0;
    for (i, r) in scored.iter().enumerate() {
        let ite = r
            .true_ite
            .ok_or_else(|| Error::Contract(format!("record {i} has no true_ite")))?;
        se += (r.score - ite).powi(2);
    }
    Ok((se / scored.len() as f64).sqrt())
}
