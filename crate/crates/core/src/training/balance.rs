//! Treatment splits and the MMD balancing term.

use crate::autodiff::{rbf_mmd2, Tape, Var};
use crate::data::TreatmentKind;
use crate::error::Result;
use crate::tensor::Tensor;
use crate::training::config::MmdBandwidth;

/// Index sets `(lower, upper)` of a batch, both in ascending index order.
///
/// Binary: `t = 0` against `t = 1`. Continuous: stable sort by `t`, the lower
/// half (with the extra element for odd sizes) against the rest. Batches with
/// fewer than two records or a single treatment value give two empty groups.
pub fn split_by_treatment(ts: &[f64], kind: TreatmentKind) -> (Vec<usize>, Vec<usize>) {
    let distinct = ts.iter().any(|&t| t != ts[0]);
    if ts.len() < 2 || !distinct {
        return (Vec::new(), Vec::new());
    }
    match kind {
        TreatmentKind::Binary => (0..ts.len()).partition(|&i| ts[i] == 0.0),
        TreatmentKind::Continuous => {
            let mut order: Vec<usize> = (0..ts.len()).collect();
            order.sort_by(|&a, &b| ts[a].total_cmp(&ts[b]));
            let cut = ts.len().div_ceil(2);
            let mut lower = order[..cut].to_vec();
            let mut upper = order[cut..].to_vec();
            lower.sort_unstable();
            upper.sort_unstable();
            (lower, upper)
        }
    }
}

/// Median pairwise Euclidean distance between rows of `x: [n, d]`;
/// 1 when undefined or zero.
pub fn median_bandwidth(x: &Tensor) -> f64 {
    let (n, d) = (x.shape()[0], x.shape()[1]);
    let mut dists = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        let a = &x.data()[i * d..(i + 1) * d];
        for j in i + 1..n {
            let b = &x.data()[j * d..(j + 1) * d];
            dists.push(a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    let mid = dists.len() / 2;
    let (_, m, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
    let m = *m;
    if m > 0.0 && m.is_finite() {
        m
    } else {
        1.0
    }
}

pub fn resolve_bandwidth(mode: MmdBandwidth, pooled: &Tensor) -> f64 {
    match mode {
        MmdBandwidth::Fixed(bw) => bw,
        MmdBandwidth::Median => median_bandwidth(pooled),
    }
}

/// MMD² between the two treatment groups of `pooled: [B, d]` on the tape.
/// Returns `None` (after a warning) when a group is empty.
pub fn mmd_loss(
    tape: &mut Tape,
    pooled: Var,
    ts: &[f64],
    kind: TreatmentKind,
    bandwidth: MmdBandwidth,
) -> Result<Option<Var>> {
    let (lower, upper) = split_by_treatment(ts, kind);
    if lower.is_empty() || upper.is_empty() {
        log::warn!("batch has a single treatment group; MMD term skipped");
        return Ok(None);
    }
    let bw = resolve_bandwidth(bandwidth, tape.value(pooled));
    let a = tape.select_rows(pooled, &lower)?;
    let b = tape.select_rows(pooled, &upper)?;
    tape.rbf_mmd(a, b, bw).map(Some)
}

/// Value-only MMD² between the treatment groups of `pooled: [n, d]`; 0 when
/// a group is empty.
pub fn mmd_value(pooled: &Tensor, ts: &[f64], kind: TreatmentKind, bandwidth: MmdBandwidth) -> Result<f64> {
    let (lower, upper) = split_by_treatment(ts, kind);
    if lower.is_empty() || upper.is_empty() {
        return Ok(0.0);
    }
    let d = pooled.shape()[1];
    let take = |idx: &[usize]| {
        let data = idx.iter().flat_map(|&i| pooled.data()[i * d..(i + 1) * d].iter().copied()).collect();
        Tensor::matrix(idx.len(), d, data)
    };
    rbf_mmd2(&take(&lower)?, &take(&upper)?, resolve_bandwidth(bandwidth, pooled))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_split() {
        assert_eq!(
            split_by_treatment(&[0.0, 1.0, 1.0, 0.0], TreatmentKind::Binary),
            (vec![0, 3], vec![1, 2])
        );
    }

    #[test]
    fn odd_continuous_split_gives_lower_the_extra() {
        let ts = [0.1, 0.9, 0.5, 0.7, 0.3];
        let (lo, hi) = split_by_treatment(&ts, TreatmentKind::Continuous);
        assert_eq!(lo, vec![0, 2, 4]);
        assert_eq!(hi, vec![1, 3]);
    }

    #[test]
    fn ties_broken_by_input_order() {
        let (lo, hi) = split_by_treatment(&[0.5, 0.2, 0.5, 0.5], TreatmentKind::Continuous);
        assert_eq!(lo, vec![0, 1]);
        assert_eq!(hi, vec![2, 3]);
    }

    #[test]
    fn constant_batch_gives_empty_groups() {
        assert_eq!(
            split_by_treatment(&[0.5; 4], TreatmentKind::Continuous),
            (vec![], vec![])
        );
        let pooled = Tensor::matrix(4, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(mmd_value(&pooled, &[0.5; 4], TreatmentKind::Continuous, MmdBandwidth::Median).unwrap(), 0.0);
        let mut tape = Tape::new();
        let p = tape.leaf(pooled);
        assert!(mmd_loss(&mut tape, p, &[1.0; 4], TreatmentKind::Binary, MmdBandwidth::Median)
            .unwrap()
            .is_none());
    }

    #[test]
    fn median_of_pairwise_distances() {
        // Distances 1, 3, 2: median 2.
        let x = Tensor::matrix(3, 1, vec![0.0, 1.0, 3.0]).unwrap();
        assert_eq!(median_bandwidth(&x), 2.0);
        assert_eq!(median_bandwidth(&Tensor::matrix(2, 1, vec![1.0, 1.0]).unwrap()), 1.0);
    }

    #[test]
    fn singleton_groups_match_closed_form() {
        let pooled = Tensor::matrix(2, 1, vec![0.0, 1.0]).unwrap();
        let v = mmd_value(&pooled, &[0.0, 1.0], TreatmentKind::Binary, MmdBandwidth::Fixed(1.0)).unwrap();
        assert!((v - (2.0 - 2.0 * (-0.5f64).exp())).abs() < 1e-12);
    }
}
