use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tscan_core::autodiff::{rbf_mmd2, Tape};
use tscan_core::Tensor;

use crate::support::{err, guard, Checks, Outcome};

fn random_set(rng: &mut ChaCha8Rng, n: usize, d: usize, shift: f64) -> Tensor {
    let data = (0..n * d).map(|_| rng.sample::<f64, _>(StandardNormal) + shift).collect();
    Tensor::new(vec![n, d], data).expect("sized")
}

fn on_tape(a: &Tensor, b: &Tensor, bandwidth: f64) -> Result<f64, String> {
    let mut tape = Tape::new();
    let (va, vb) = (tape.leaf(a.clone()), tape.leaf(b.clone()));
    let m = tape.rbf_mmd(va, vb, bandwidth).map_err(err)?;
    Ok(tape.value(m).item())
}

pub fn run() -> Outcome {
    guard(|| {
        let mut checks = Checks::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);

        let mut worst_identical = 0.0f64;
        for _ in 0..20 {
            let n = rng.random_range(1..40);
            let d = rng.random_range(1..6);
            let a = random_set(&mut rng, n, d, 0.0);
            let bw = rng.random_range(0.2..3.0);
            worst_identical = worst_identical.max(rbf_mmd2(&a, &a, bw).map_err(err)?.abs());
            worst_identical = worst_identical.max(on_tape(&a, &a, bw)?.abs());
        }
        checks.check(worst_identical < 1e-12, format!("identical sets {worst_identical:.1e}"));

        let zero = Tensor::new(vec![1, 1], vec![0.0]).map_err(err)?;
        let one = Tensor::new(vec![1, 1], vec![1.0]).map_err(err)?;
        let expected = 2.0 - 2.0 * (-0.5f64).exp();
        let got = rbf_mmd2(&zero, &one, 1.0).map_err(err)?;
        let got_tape = on_tape(&zero, &one, 1.0)?;
        let dev = (got - expected).abs().max((got_tape - expected).abs());
        checks.check(dev < 1e-9, format!("{{0}}/{{1}} = {got:.12} (|err| {dev:.1e})"));

        let mut asymmetric = 0;
        for _ in 0..50 {
            let d = rng.random_range(1..6);
            let (na, nb) = (rng.random_range(1..30), rng.random_range(1..30));
            let a = random_set(&mut rng, na, d, 0.0);
            let b = random_set(&mut rng, nb, d, 0.7);
            let bw = rng.random_range(0.2..3.0);
            let ab = rbf_mmd2(&a, &b, bw).map_err(err)?;
            let ba = rbf_mmd2(&b, &a, bw).map_err(err)?;
            let (tab, tba) = (on_tape(&a, &b, bw)?, on_tape(&b, &a, bw)?);
            if ab.to_bits() != ba.to_bits() || tab.to_bits() != tba.to_bits() || tab.to_bits() != ab.to_bits() {
                asymmetric += 1;
            }
        }
        checks.check(asymmetric == 0, format!("{asymmetric}/50 asymmetric pairs"));
        Ok(checks.outcome())
    })
}
