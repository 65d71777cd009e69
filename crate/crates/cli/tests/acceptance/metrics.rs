use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tscan_core::eval::{auuc, qini, qini_curve, stratified_metric, uplift_curve, Metric, ScoredRecord, TieMode};

use crate::support::{err, guard, Checks, Outcome};

/// Small committed instances: (scores, treated, outcomes).
const INSTANCES: &[(&[f64], &[u8], &[f64])] = &[
    (&[0.9, 0.7, 0.4, 0.1], &[1, 0, 1, 0], &[3.0, 1.0, 2.0, 0.5]),
    (&[0.2, 0.8, 0.5, 0.6, 0.1], &[0, 1, 1, 0, 1], &[1.0, 4.0, 0.0, 2.0, 3.0]),
    (&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[1, 1, 0, 1, 0, 0], &[0.3, 1.2, 0.7, 2.5, 0.1, 0.9]),
    (&[0.5, 0.5, 0.3, 0.9, 0.1, 0.7], &[1, 0, 1, 0, 1, 0], &[2.0, 1.0, 1.5, 0.5, 3.0, 0.2]),
    (&[3.0, -1.0, 0.0, 2.0], &[0, 1, 0, 1], &[-1.0, 2.0, 0.5, 1.0]),
    (&[0.6, 0.4, 0.9, 0.2, 0.3, 0.8], &[0, 0, 1, 1, 0, 1], &[1.0, 0.0, 5.0, 1.0, 2.0, 0.0]),
];

fn scored(scores: &[f64], treated: &[u8], outcomes: &[f64]) -> Vec<ScoredRecord> {
    (0..scores.len())
        .map(|i| ScoredRecord {
            score: scores[i],
            treated: treated[i] == 1,
            outcome: outcomes[i],
            group_key: Some("all".into()),
            true_ite: None,
        })
        .collect()
}

/// Curves by enumerating every prefix of the ranking from scratch:
/// (uplift curve, qini curve), both normalized by their terminal value.
fn brute_force(records: &[ScoredRecord]) -> (Vec<f64>, Vec<f64>) {
    let mut order: Vec<usize> = (0..records.len()).collect();
    // Stable sort: ties keep input order.
    order.sort_by(|&a, &b| records[b].score.partial_cmp(&records[a].score).unwrap());
    let n = records.len();
    let mut uplift = Vec::with_capacity(n + 1);
    let mut qini = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let prefix: Vec<&ScoredRecord> = order[..k].iter().map(|&i| &records[i]).collect();
        let treated: Vec<f64> = prefix.iter().filter(|r| r.treated).map(|r| r.outcome).collect();
        let control: Vec<f64> = prefix.iter().filter(|r| !r.treated).map(|r| r.outcome).collect();
        let (n1, n0) = (treated.len() as f64, control.len() as f64);
        let (s1, s0): (f64, f64) = (treated.iter().sum(), control.iter().sum());
        let u = if n1 > 0.0 && n0 > 0.0 {
            k as f64 * (s1 / n1 - s0 / n0)
        } else {
            // Carry the last defined value.
            *uplift.last().unwrap_or(&0.0)
        };
        uplift.push(u);
        qini.push(if n0 > 0.0 { s1 - s0 * n1 / n0 } else { s1 });
    }
    let norm = |v: Vec<f64>| {
        let total = v[n];
        v.into_iter().map(|x| x / total).collect::<Vec<f64>>()
    };
    (norm(uplift), norm(qini))
}

fn trapezoid(ys: &[f64]) -> f64 {
    let n = (ys.len() - 1) as f64;
    ys.windows(2).map(|w| (w[0] + w[1]) / (2.0 * n)).sum()
}

fn max_gap(a: &[(f64, f64)], b: &[f64]) -> f64 {
    let n = (b.len() - 1) as f64;
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(k, (p, y))| (p.0 - k as f64 / n).abs().max((p.1 - y).abs()))
        .fold(0.0, f64::max)
}

pub fn run() -> Outcome {
    let started = std::time::Instant::now();
    guard(|| {
        let mut checks = Checks::default();

        let mut worst = 0.0f64;
        for &(s, t, y) in INSTANCES {
            let recs = scored(s, t, y);
            let (u, q) = brute_force(&recs);
            let uc = uplift_curve(&recs, TieMode::Stable).map_err(err)?;
            let qc = qini_curve(&recs, TieMode::Stable).map_err(err)?;
            worst = worst
                .max(max_gap(&uc.points, &u))
                .max(max_gap(&qc.points, &q))
                .max((auuc(&recs, TieMode::Stable).map_err(err)? - trapezoid(&u)).abs())
                .max((qini(&recs, TieMode::Stable).map_err(err)? - (trapezoid(&q) - 0.5)).abs());
        }
        checks.check(worst < 1e-12, format!("{} brute-force instances, max |err| {worst:.1e}", INSTANCES.len()));

        let mut rng = ChaCha8Rng::seed_from_u64(20_000);
        let n = 20_000;
        let treated: Vec<u8> = (0..n).map(|_| rng.random_bool(0.5) as u8).collect();
        let outcomes: Vec<f64> = treated
            .iter()
            .map(|&t| 1.0 + 0.5 * t as f64 + rng.sample::<f64, _>(StandardNormal))
            .collect();
        let (mut auuc_sum, mut qini_sum) = (0.0, 0.0);
        let draws = 20;
        for _ in 0..draws {
            let scores: Vec<f64> = (0..n).map(|_| rng.random()).collect();
            let recs = scored(&scores, &treated, &outcomes);
            auuc_sum += auuc(&recs, TieMode::Stable).map_err(err)?;
            qini_sum += qini(&recs, TieMode::Stable).map_err(err)?;
        }
        let (mean_auuc, mean_qini) = (auuc_sum / draws as f64, qini_sum / draws as f64);
        checks.check((mean_auuc - 0.5).abs() <= 0.02, format!("random AUUC {mean_auuc:.4}"));
        checks.check(mean_qini.abs() <= 0.02, format!("random QINI {mean_qini:.4}"));

        let mut mismatches = 0;
        let scores: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let recs = scored(&scores, &treated, &outcomes);
        for ties in [TieMode::Stable, TieMode::Average] {
            let plain = auuc(&recs, ties).map_err(err)?;
            let strat = stratified_metric(&recs, Metric::Auuc, 100, ties).map_err(err)?.value;
            mismatches += usize::from(plain.to_bits() != strat.to_bits());
        }
        checks.check(mismatches == 0, "single-group CAUUC == AUUC bit-exact".to_string());

        let secs = started.elapsed().as_secs_f64();
        checks.check(secs < 120.0, format!("{secs:.1}s < 120s"));
        Ok(checks.outcome())
    })
}
