//! Central finite-difference checks of recorded gradients, plus a catalogue
//! of small random test problems covering every op on the tape.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::params::{ParamId, ParamKind, ParamStore};
use crate::autodiff::tape::{Reduction, Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Denominator floor of the relative error, so that tiny gradients are
/// compared absolutely.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    /// Parameter name and element index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Compares `backward` against central differences with step `step` for
/// every scalar of every parameter. `grad_scale(name)` multiplies the numeric
/// derivative before comparison (`-lambda` under a gradient reversal).
pub fn check_gradients<M>(
    model: &mut M,
    store: fn(&mut M) -> &mut ParamStore,
    step: f64,
    grad_scale: &dyn Fn(&str) -> f64,
    loss: &dyn Fn(&M, &mut Tape) -> Result<Var>,
) -> Result<GradCheck> {
    let mut tape = Tape::new();
    let l = loss(model, &mut tape)?;
    let grads = tape.backward(l, store(model))?;
    let ids: Vec<ParamId> = store(model).ids().collect();
    let eval = |m: &M| -> Result<f64> {
        let mut t = Tape::new();
        let v = loss(m, &mut t)?;
        Ok(t.value(v).item())
    };
    let mut out = GradCheck {
        max_relative_error: 0.0,
        worst: None,
        checked: 0,
    };
    for id in ids {
        let analytic = grads.get(id).data().to_vec();
        let scale = grad_scale(&store(model).entry(id).name);
        for (k, &a) in analytic.iter().enumerate() {
            let orig = store(model).get(id).data()[k];
            store(model).get_mut(id).data_mut()[k] = orig + step;
            let up = eval(model)?;
            store(model).get_mut(id).data_mut()[k] = orig - step;
            let down = eval(model)?;
            store(model).get_mut(id).data_mut()[k] = orig;
            let numeric = scale * (up - down) / (2.0 * step);
            let err = relative_error(a, numeric);
            out.checked += 1;
            if out.worst.is_none() || err > out.max_relative_error {
                out.max_relative_error = err;
                out.worst = Some((store(model).entry(id).name.clone(), k));
            }
        }
    }
    Ok(out)
}

fn store_of(p: &mut ParamStore) -> &mut ParamStore {
    p
}

/// Checks a loss over a bare parameter store.
pub fn check_store(
    params: &mut ParamStore,
    step: f64,
    grad_scale: f64,
    loss: &dyn Fn(&ParamStore, &mut Tape) -> Result<Var>,
) -> Result<GradCheck> {
    check_gradients(params, store_of, step, &|_| grad_scale, loss)
}

pub type LossFn = Box<dyn Fn(&ParamStore, &mut Tape) -> Result<Var>>;

/// A randomly drawn test problem for one op.
pub struct OpProblem {
    pub params: ParamStore,
    pub loss: LossFn,
    /// Factor applied to the numeric derivative (see [`check_gradients`]).
    pub grad_scale: f64,
}

fn randn<R: Rng + ?Sized>(rng: &mut R, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.sample(StandardNormal)).collect()).expect("sized")
}

fn input<R: Rng + ?Sized>(p: &mut ParamStore, rng: &mut R, name: &str, shape: &[usize]) -> ParamId {
    p.insert(name, ParamKind::Weight, randn(rng, shape))
}

/// Reduces `out` to a scalar with a fixed random target so every output
/// element carries a distinct upstream gradient.
fn reduce(tape: &mut Tape, out: Var, target: &Tensor) -> Result<Var> {
    let t = tape.leaf(target.clone());
    tape.squared_error(out, t, Reduction::Sum)
}

macro_rules! problem {
    ($params:expr, $target:expr, |$p:ident, $t:ident| $body:expr) => {{
        let target: Tensor = $target;
        OpProblem {
            params: $params,
            loss: Box::new(move |$p: &ParamStore, $t: &mut Tape| {
                let out = $body?;
                reduce($t, out, &target)
            }),
            grad_scale: 1.0,
        }
    }};
}

/// Names of the ops covered by [`op_problem`].
pub const OPS: &[&str] = &[
    "matmul_shared",
    "matmul_per_token",
    "add_bias",
    "concat",
    "mul",
    "add",
    "sigmoid",
    "softplus",
    "relu",
    "mean_pool",
    "softmax",
    "scaled_dot",
    "batch_matmul",
    "squared_error_mean",
    "squared_error_sum",
    "weighted_sum",
    "gradient_reversal",
    "select_rows",
    "reshape",
    "slice",
    "rbf_mmd",
];

/// A random problem exercising `op` (one of [`OPS`]).
pub fn op_problem<R: Rng + ?Sized>(op: &str, rng: &mut R) -> Option<OpProblem> {
    let mut p = ParamStore::new();
    let b = rng.random_range(1..4);
    let t = rng.random_range(1..4);
    let d = rng.random_range(2..5);
    let m = rng.random_range(1..4);
    Some(match op {
        "matmul_shared" => {
            let x = input(&mut p, rng, "x", &[b, t, d]);
            let w = input(&mut p, rng, "w", &[d, m]);
            let target = randn(rng, &[b, t, m]);
            problem!(p, target, |s, tape| {
                let (x, w) = (tape.param(s, x), tape.param(s, w));
                tape.matmul(x, w)
            })
        }
        "matmul_per_token" => {
            let x = input(&mut p, rng, "x", &[b, t, d]);
            let w = input(&mut p, rng, "w", &[t, d, m]);
            let target = randn(rng, &[b, t, m]);
            problem!(p, target, |s, tape| {
                let (x, w) = (tape.param(s, x), tape.param(s, w));
                tape.matmul(x, w)
            })
        }
        "add_bias" => {
            let x = input(&mut p, rng, "x", &[b, t, d]);
            let bias = input(&mut p, rng, "b", &[t, d]);
            let target = randn(rng, &[b, t, d]);
            problem!(p, target, |s, tape| {
                let (x, bias) = (tape.param(s, x), tape.param(s, bias));
                tape.add_bias(x, bias)
            })
        }
        "concat" => {
            let axis = rng.random_range(0..3);
            let mut s2 = [b, t, d];
            s2[axis] += 1;
            let x = input(&mut p, rng, "x", &[b, t, d]);
            let y = input(&mut p, rng, "y", &s2);
            let mut out = [b, t, d];
            out[axis] += s2[axis];
            let target = randn(rng, &out);
            problem!(p, target, |s, tape| {
                let (x, y) = (tape.param(s, x), tape.param(s, y));
                tape.concat(&[x, y, x], axis).and_then(|c| tape.slice(c, axis, 0, out[axis]))
            })
        }
        "mul" | "add" => {
            let x = input(&mut p, rng, "x", &[b, d]);
            let y = input(&mut p, rng, "y", &[b, d]);
            let target = randn(rng, &[b, d]);
            let is_mul = op == "mul";
            problem!(p, target, |s, tape| {
                let (x, y) = (tape.param(s, x), tape.param(s, y));
                if is_mul {
                    // Squaring exercises both operand slots of the same node.
                    tape.mul(x, y).and_then(|z| tape.mul(z, x))
                } else {
                    tape.add(x, y).and_then(|z| tape.add(z, z))
                }
            })
        }
        "sigmoid" | "softplus" | "relu" => {
            let x = input(&mut p, rng, "x", &[b, d]);
            let target = randn(rng, &[b, d]);
            let which = op.to_string();
            problem!(p, target, |s, tape| {
                let x = tape.param(s, x);
                Ok::<Var, crate::Error>(match which.as_str() {
                    "sigmoid" => tape.sigmoid(x),
                    "softplus" => tape.softplus(x),
                    _ => tape.relu(x),
                })
            })
        }
        "mean_pool" => {
            let axis = rng.random_range(0..3);
            let x = input(&mut p, rng, "x", &[b, t, d]);
            let mut out = vec![b, t, d];
            out.remove(axis);
            let target = randn(rng, &out);
            problem!(p, target, |s, tape| {
                let x = tape.param(s, x);
                tape.mean_pool(x, axis)
            })
        }
        "softmax" => {
            let x = input(&mut p, rng, "x", &[b, t, d]);
            let target = randn(rng, &[b, t, d]);
            problem!(p, target, |s, tape| {
                let x = tape.param(s, x);
                tape.softmax(x)
            })
        }
        "scaled_dot" => {
            let q = input(&mut p, rng, "q", &[b, t, d]);
            let k = input(&mut p, rng, "k", &[b, m, d]);
            let target = randn(rng, &[b, t, m]);
            problem!(p, target, |s, tape| {
                let (q, k) = (tape.param(s, q), tape.param(s, k));
                tape.scaled_dot(q, k)
            })
        }
        "batch_matmul" => {
            let a = input(&mut p, rng, "a", &[b, t, m]);
            let v = input(&mut p, rng, "v", &[b, m, d]);
            let target = randn(rng, &[b, t, d]);
            problem!(p, target, |s, tape| {
                let (a, v) = (tape.param(s, a), tape.param(s, v));
                tape.batch_matmul(a, v)
            })
        }
        "squared_error_mean" | "squared_error_sum" => {
            let reduction = if op.ends_with("mean") { Reduction::Mean } else { Reduction::Sum };
            let x = input(&mut p, rng, "x", &[b, d]);
            let y = input(&mut p, rng, "y", &[b, d]);
            OpProblem {
                params: p,
                loss: Box::new(move |s, tape| {
                    let (x, y) = (tape.param(s, x), tape.param(s, y));
                    tape.squared_error(x, y, reduction)
                }),
                grad_scale: 1.0,
            }
        }
        "weighted_sum" => {
            let x = input(&mut p, rng, "x", &[b, d]);
            let y = input(&mut p, rng, "y", &[b, d]);
            let (wx, wy, c): (f64, f64, f64) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random());
            let target = randn(rng, &[b, d]);
            problem!(p, target, |s, tape| {
                let (x, y) = (tape.param(s, x), tape.param(s, y));
                tape.weighted_sum(&[(wx, x), (wy, y), (0.5, x)], c)
            })
        }
        "gradient_reversal" => {
            let lambda: f64 = rng.random_range(0.1..2.0);
            let x = input(&mut p, rng, "x", &[b, d]);
            let target = randn(rng, &[b, d]);
            let mut prob = problem!(p, target, |s, tape| {
                let x = tape.param(s, x);
                let y = tape.sigmoid(x);
                tape.gradient_reversal(y, lambda)
            });
            prob.grad_scale = -lambda;
            prob
        }
        "select_rows" => {
            let rows_total = b + 2;
            let x = input(&mut p, rng, "x", &[rows_total, d]);
            let rows: Vec<usize> = (0..t + 2).map(|_| rng.random_range(0..rows_total)).collect();
            let target = randn(rng, &[rows.len(), d]);
            problem!(p, target, |s, tape| {
                let x = tape.param(s, x);
                tape.select_rows(x, &rows)
            })
        }
        "reshape" => {
            let x = input(&mut p, rng, "x", &[b, t, d]);
            let target = randn(rng, &[b, t * d]);
            problem!(p, target, |s, tape| {
                let x = tape.param(s, x);
                tape.reshape(x, &[b, t * d])
            })
        }
        "slice" => {
            let axis = rng.random_range(0..3);
            let shape = [b + 1, t + 1, d];
            let len = rng.random_range(1..=shape[axis]);
            let start = rng.random_range(0..=shape[axis] - len);
            let x = input(&mut p, rng, "x", &shape);
            let mut out = shape;
            out[axis] = len;
            let target = randn(rng, &out);
            problem!(p, target, |s, tape| {
                let x = tape.param(s, x);
                tape.slice(x, axis, start, len)
            })
        }
        "rbf_mmd" => {
            let a = input(&mut p, rng, "a", &[b + 1, d]);
            let c = input(&mut p, rng, "b", &[t + 1, d]);
            let bw: f64 = rng.random_range(0.5..3.0);
            OpProblem {
                params: p,
                loss: Box::new(move |s, tape| {
                    let (a, c) = (tape.param(s, a), tape.param(s, c));
                    tape.rbf_mmd(a, c, bw)
                }),
                grad_scale: 1.0,
            }
        }
        _ => return None,
    })
}
