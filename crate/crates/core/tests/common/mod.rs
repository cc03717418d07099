//! Independent oracles shared by the integration tests. Nothing here calls
//! into the code paths it is used to check.
#![allow(dead_code)]

pub mod checks;
pub mod gradsuite;
pub mod scenarios;

use mambatab::tensor::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_REL_TOL: f64 = 1e-4;

/// `|n - a| / max(|n| + |a|, 1e-6)`; the floor keeps exact zeros (dead ReLU
/// units, unused slices) from turning round-off into a large ratio.
pub fn relative_error(numerical: f64, analytical: f64) -> f64 {
    (numerical - analytical).abs() / (numerical.abs() + analytical.abs()).max(1e-6)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Central differences of a scalar function of several tensors.
pub fn numeric_grads(f: &dyn Fn(&[Tensor]) -> f64, inputs: &[Tensor]) -> Vec<Vec<f64>> {
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut g = vec![0.0; inputs[i].numel()];
        for j in 0..g.len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + FD_STEP;
            let up = f(&work);
            work[i].data_mut()[j] = orig - FD_STEP;
            let down = f(&work);
            work[i].data_mut()[j] = orig;
            g[j] = (up - down) / (2.0 * FD_STEP);
        }
        out.push(g);
    }
    out
}

/// Largest relative error between tape gradients and finite differences for
/// `build`, which must reduce its inputs to a scalar.
pub fn gradcheck(build: &dyn Fn(&mut Tape, &[Var]) -> Var, inputs: &[Tensor]) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = build(&mut tape, &vars);
    tape.backward(loss).unwrap();
    let analytic: Vec<Tensor> = vars.iter().map(|&v| tape.grad(v)).collect();

    let f = |xs: &[Tensor]| {
        let mut t = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|x| t.param(x.clone())).collect();
        let l = build(&mut t, &vs);
        t.value(l).item()
    };
    let numeric = numeric_grads(&f, inputs);
    let mut worst: f64 = 0.0;
    for (a, n) in analytic.iter().zip(&numeric) {
        for (&x, &y) in a.data().iter().zip(n) {
            worst = worst.max(relative_error(y, x));
        }
    }
    worst
}

/// Fixed random weighting so non-scalar outputs reduce without symmetric
/// gradients.
pub fn weighted_sum(tape: &mut Tape, y: Var, seed: u64) -> Var {
    let shape = tape.shape(y).to_vec();
    let w = rand_tensor(&mut rng(seed), &shape, -1.0, 1.0);
    let w = tape.constant(w);
    let p = tape.mul(y, w).unwrap();
    tape.sum(p)
}

/// Plain per-step recurrence for a single batch element, channel and state:
/// `h_k = exp(delta_k a) h_{k-1} + bbar_k u_k`.
#[allow(clippy::too_many_arguments)]
pub fn naive_scan(
    u: &Tensor,
    delta: &Tensor,
    b: &Tensor,
    c: &Tensor,
    a: &Tensor,
    d: &Tensor,
    exact_zoh: bool,
) -> Vec<f64> {
    let (bs, l, di) = (u.shape()[0], u.shape()[1], u.shape()[2]);
    let n = a.shape()[1];
    let at3 = |t: &Tensor, i: usize, k: usize, j: usize, w: usize| t.data()[(i * l + k) * w + j];
    let mut y = vec![0.0; bs * l * di];
    for i in 0..bs {
        for ch in 0..di {
            let mut h = vec![0.0; n];
            for k in 0..l {
                let uk = at3(u, i, k, ch, di);
                let dk = at3(delta, i, k, ch, di);
                let mut out = 0.0;
                for s in 0..n {
                    let av = a.data()[ch * n + s];
                    let bbar = if exact_zoh {
                        ((dk * av).exp() - 1.0) / av
                    } else {
                        dk
                    } * at3(b, i, k, s, n);
                    h[s] = (dk * av).exp() * h[s] + bbar * uk;
                    out += at3(c, i, k, s, n) * h[s];
                }
                y[(i * l + k) * di + ch] = out + d.data()[ch] * uk;
            }
        }
    }
    y
}

/// O(m^2) pair counting, ties credited one half.
pub fn pairwise_auroc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &yi) in labels.iter().enumerate() {
        if yi != 1 {
            continue;
        }
        for (j, &yj) in labels.iter().enumerate() {
            if yj != 0 {
                continue;
            }
            den += 1.0;
            if scores[i] > scores[j] {
                num += 1.0;
            } else if scores[i] == scores[j] {
                num += 0.5;
            }
        }
    }
    num / den
}
