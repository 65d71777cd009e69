use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tscan_core::autodiff::{rbf_mmd2, Reduction, Tape};
use tscan_core::data::{generate_synthetic, NormalizationParams, SyntheticConfig, TreatmentKind};
use tscan_core::eval::{auuc, ScoredRecord, TieMode};
use tscan_core::model::{CanModel, ModelConfig};
use tscan_core::Tensor;

fn can_step(c: &mut Criterion) {
    let synth = SyntheticConfig {
        n: 256,
        treatment_kind: TreatmentKind::Continuous,
        ..Default::default()
    };
    let records = generate_synthetic(&synth).unwrap();
    let model = CanModel::new(
        ModelConfig {
            isotonic_m: 5,
            ..Default::default()
        },
        synth.schema(),
        NormalizationParams::identity(TreatmentKind::Continuous),
        0,
    )
    .unwrap();
    let inputs = model.inputs(&records).unwrap();
    let ts = inputs.treatments().to_vec();
    let y = Tensor::new(vec![records.len(), 1], records.iter().map(|r| r.outcome).collect()).unwrap();
    c.bench_function("can_forward_backward_batch256", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let fwd = model.forward(&mut tape, &inputs, 0.5).unwrap();
            let y_hat = model.outcome_at(&mut tape, &fwd, &ts).unwrap();
            let target = tape.leaf(y.clone());
            let loss = tape.squared_error(y_hat, target, Reduction::Mean).unwrap();
            black_box(tape.backward(loss, model.params()).unwrap());
        })
    });
    c.bench_function("can_predict_outcomes_256", |b| {
        b.iter(|| black_box(model.predict_outcomes_at(&records, &[&ts]).unwrap()))
    });
}

fn metrics(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let scored: Vec<ScoredRecord> = (0..50_000)
        .map(|_| ScoredRecord {
            score: rng.random(),
            treated: rng.random_bool(0.5),
            outcome: rng.random(),
            group_key: None,
            true_ite: None,
        })
        .collect();
    for ties in [TieMode::Stable, TieMode::Average] {
        c.bench_function(&format!("auuc_50k_{ties:?}").to_lowercase(), |b| {
            b.iter_batched(|| scored.clone(), |s| black_box(auuc(&s, ties).unwrap()), BatchSize::LargeInput)
        });
    }
}

fn mmd(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut set = |n: usize| Tensor::new(vec![n, 8], (0..n * 8).map(|_| rng.random()).collect()).unwrap();
    let (a, b) = (set(256), set(256));
    c.bench_function("rbf_mmd_256x256_d8", |bench| bench.iter(|| black_box(rbf_mmd2(&a, &b, 1.0).unwrap())));
}

criterion_group!(benches, can_step, metrics, mmd);
criterion_main!(benches);
