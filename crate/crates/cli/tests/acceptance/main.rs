//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.
//!
//! `cargo test --test acceptance -- 1 4 9` runs a subset.

mod benchmark;
mod continuous;
mod gradients;
mod isotonic;
mod metrics;
mod mmd;
mod plain_regression;
mod support;

use std::time::Instant;

use support::Outcome;

type Criterion = (u32, &'static str, fn() -> Outcome);

const CRITERIA: &[Criterion] = &[
    (1, "gradient fidelity", gradients::run),
    (2, "isotonic invariants", isotonic::run),
    (3, "MMD correctness", mmd::run),
    (4, "metric oracles", metrics::run),
    (5, "binary benchmark vs meta-learners", benchmark::run_headline),
    (6, "ablation ordering", benchmark::run_ablations),
    (7, "stage-1 balancing", run_balancing),
    (8, "reproducibility from manifest", benchmark::run_reproducibility),
    (9, "continuous-treatment path", continuous::run),
];

fn run_balancing() -> Outcome {
    let mmd = benchmark::run_balancing();
    let plain = plain_regression::run();
    mmd.and(plain)
}

fn main() {
    let selected: Vec<u32> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    let mut ran = 0;
    for &(id, name, run) in CRITERIA {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let started = Instant::now();
        let outcome = run();
        ran += 1;
        let verdict = if outcome.passed { "PASS" } else { "FAIL" };
        if !outcome.passed {
            failed += 1;
        }
        println!(
            "criterion {id} ({name}): {verdict} [{:.1}s] {}",
            started.elapsed().as_secs_f64(),
            outcome.detail
        );
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
