//! Counterfactual treatment draws for pseudo-labelling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::record::InstanceRecord;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CounterfactualStrategy {
    #[default]
    Uniform,
    Empirical,
}

/// Isotonic level `floor(t * m)` of a normalized treatment; `t = 1` sits in level `m`.
pub fn isotonic_level(t: f64, m: usize) -> usize {
    ((t.clamp(0.0, 1.0) * m as f64).floor() as usize).min(m)
}

/// A factual record with its sampled counterfactual treatment and pseudo-uplift label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabeledRecord {
    pub base: InstanceRecord,
    pub t_cf: f64,
    pub u_tilde: f64,
}

/// Draws `t_cf` with a different isotonic level than the factual treatment.
///
/// `m == 1` is the binary case and always returns `1 - t_f`.
#[derive(Clone, Debug)]
pub struct CounterfactualSampler {
    strategy: CounterfactualStrategy,
    levels: usize,
    /// Observed treatments bucketed by level (empirical strategy only).
    by_level: Vec<Vec<f64>>,
}

impl CounterfactualSampler {
    /// `observed` are the normalized training treatments; only the empirical
    /// strategy reads them.
    pub fn new(strategy: CounterfactualStrategy, m: usize, observed: &[f64]) -> Result<Self> {
        if m == 0 {
            return Err(Error::Contract("isotonic level count M must be at least 1".into()));
        }
        let mut by_level = vec![Vec::new(); m + 1];
        if strategy == CounterfactualStrategy::Empirical && m > 1 {
            for &t in observed {
                by_level[isotonic_level(t, m)].push(t);
            }
            if by_level.iter().filter(|b| !b.is_empty()).count() < 2 {
                return Err(Error::Contract(
                    "empirical counterfactual sampling needs observed treatments in at least two levels".into(),
                ));
            }
        }
        Ok(Self {
            strategy,
            levels: m,
            by_level,
        })
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn sample<R: Rng + ?Sized>(&self, t_f: f64, rng: &mut R) -> Result<f64> {
        if self.levels == 1 {
            if t_f != 0.0 && t_f != 1.0 {
                return Err(Error::Contract(format!("binary treatment must be 0 or 1, got {t_f}")));
            }
            return Ok(1.0 - t_f);
        }
        let factual = isotonic_level(t_f, self.levels);
        match self.strategy {
            CounterfactualStrategy::Uniform => loop {
                let t: f64 = rng.random();
                if isotonic_level(t, self.levels) != factual {
                    return Ok(t);
                }
            },
            CounterfactualStrategy::Empirical => {
                let total: usize = self
                    .by_level
                    .iter()
                    .enumerate()
                    .filter(|&(l, _)| l != factual)
                    .map(|(_, b)| b.len())
                    .sum();
                if total == 0 {
                    return Err(Error::Contract(format!(
                        "no observed treatments outside level {factual}"
                    )));
                }
                let mut k = rng.random_range(0..total);
                for (l, bucket) in self.by_level.iter().enumerate() {
                    if l == factual {
                        continue;
                    }
                    if k < bucket.len() {
                        return Ok(bucket[k]);
                    }
                    k -= bucket.len();
                }
                unreachable!("index within total count")
            }
        }
    }
}

/// One-shot form of [`CounterfactualSampler::sample`].
pub fn sample_counterfactual<R: Rng + ?Sized>(
    t_f: f64,
    strategy: CounterfactualStrategy,
    m: usize,
    observed: &[f64],
    rng: &mut R,
) -> Result<f64> {
    CounterfactualSampler::new(strategy, m, observed)?.sample(t_f, rng)
}
