use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Seeded shuffle split; the first part holds `round(n * ratio)` items.
pub fn split_train_test<T: Clone>(records: &[T], ratio: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    let (a, b) = split_indices(records.len(), ratio, seed)?;
    Ok((
        a.iter().map(|&i| records[i].clone()).collect(),
        b.iter().map(|&i| records[i].clone()).collect(),
    ))
}

/// Index form of [`split_train_test`].
pub fn split_indices(n: usize, ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Contract(format!("split ratio must lie in (0, 1), got {ratio}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = ((n as f64) * ratio).round() as usize;
    let second = idx.split_off(cut.min(n));
    Ok((idx, second))
}
