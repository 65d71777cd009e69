//! Isotonic encoding and level-weight arithmetic shared by prediction and tests.

use crate::data::isotonic_level;
use crate::error::{Error, Result};

/// `k + 1` ones followed by `m - k` zeros, `k = floor(t * m)`.
pub fn isotonic_encode(t: f64, m: usize) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Contract(format!("isotonic encoding needs t in [0, 1], got {t}")));
    }
    let k = isotonic_level(t, m);
    Ok((0..=m).map(|j| if j <= k { 1.0 } else { 0.0 }).collect())
}

/// Running sums `v_0, v_0 + v_1, ...`, accumulated left to right.
pub fn prefix_sums(v: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    v.iter()
        .map(|x| {
            acc += x;
            acc
        })
        .collect()
}

/// Outcome at `t`: the prefix sum up to the level of `t`.
pub fn outcome_from_levels(v: &[f64], t: f64) -> f64 {
    let m = v.len() - 1;
    prefix_sums(v)[isotonic_level(t, m)]
}

/// Uplift from `t_f` to `t_cf` as a difference of prefix sums, so it equals
/// the difference of the two outcomes exactly.
pub fn uplift_from_levels(v: &[f64], t_f: f64, t_cf: f64) -> f64 {
    outcome_from_levels(v, t_cf) - outcome_from_levels(v, t_f)
}
