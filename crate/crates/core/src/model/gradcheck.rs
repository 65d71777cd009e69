//! Finite-difference check of the whole CAN forward pass.

use crate::autodiff::gradcheck::{check_gradients, GradCheck};
use crate::autodiff::{ParamKind, ParamStore, Reduction, Tape, Var};
use crate::data::InstanceRecord;
use crate::error::Result;
use crate::model::CanModel;
use crate::tensor::Tensor;

fn store_of(m: &mut CanModel) -> &mut ParamStore {
    m.params_mut()
}

fn column(tape: &mut Tape, v: Vec<f64>) -> Result<Var> {
    let n = v.len();
    Ok(tape.leaf(Tensor::new(vec![n, 1], v)?))
}

/// Checks two losses on normalized `records`:
///
/// * factual MSE + squared error of the uplift to `t_cf` against `targets`
///   + MMD between the treatment halves (bandwidth 1) + a small l2 term;
/// * the propensity MSE behind a gradient reversal with weight `lambda`
///   (CAN-U only), where backbone gradients must equal `-lambda` times the
///   numeric derivative.
///
/// Returns the worse of the two results.
pub fn check_can_gradients(
    model: &mut CanModel,
    records: &[InstanceRecord],
    t_cf: &[f64],
    targets: &[f64],
    lambda: f64,
    step: f64,
) -> Result<GradCheck> {
    let inputs = model.inputs(records)?;
    let ts = inputs.treatments().to_vec();
    let half = records.len() / 2;
    let main = |m: &CanModel, tape: &mut Tape| -> Result<Var> {
        let fwd = m.forward(tape, &inputs, lambda)?;
        let y_hat = m.outcome_at(tape, &fwd, &ts)?;
        let y = column(tape, records.iter().map(|r| r.outcome).collect())?;
        let factual = tape.squared_error(y_hat, y, Reduction::Mean)?;
        let u_hat = m.uplift_between(tape, &fwd, &ts, t_cf)?;
        let u = column(tape, targets.to_vec())?;
        let uplift = tape.squared_error(u_hat, u, Reduction::Mean)?;
        let mut terms = vec![(1.0, factual), (0.6, uplift)];
        if half > 0 {
            let lo: Vec<usize> = (0..half).collect();
            let hi: Vec<usize> = (half..records.len()).collect();
            let a = tape.select_rows(fwd.h_cal_pooled, &lo)?;
            let b = tape.select_rows(fwd.h_cal_pooled, &hi)?;
            terms.push((0.5, tape.rbf_mmd(a, b, 1.0)?));
        }
        for id in m.params().ids() {
            if m.params().entry(id).kind == ParamKind::Weight {
                let w = tape.param(m.params(), id);
                let z = tape.leaf(Tensor::zeros(m.params().get(id).shape()));
                terms.push((1e-2, tape.squared_error(w, z, Reduction::Sum)?));
            }
        }
        tape.weighted_sum(&terms, 0.0)
    };
    let mut worst = check_gradients(model, store_of, step, &|_| 1.0, &main)?;
    if model.params().find("propensity.0.w").is_some() {
        let prop = |m: &CanModel, tape: &mut Tape| -> Result<Var> {
            let fwd = m.forward(tape, &inputs, lambda)?;
            let t = column(tape, ts.clone())?;
            tape.squared_error(fwd.propensity.expect("CAN-U"), t, Reduction::Mean)
        };
        let scale = |name: &str| if name.starts_with("propensity.") { 1.0 } else { -lambda };
        let second = check_gradients(model, store_of, step, &scale, &prop)?;
        worst.checked += second.checked;
        if second.max_relative_error > worst.max_relative_error {
            worst.max_relative_error = second.max_relative_error;
            worst.worst = second.worst;
        }
    }
    Ok(worst)
}
