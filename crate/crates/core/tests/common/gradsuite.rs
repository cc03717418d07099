//! Finite-difference checks for every differentiable operation and for the
//! full model.

use mambatab::model::{HeadKind, MambaTabModel, ModelConfig};
use mambatab::ssm::{self, InputDiscretization};
use mambatab::tensor::{Tape, Tensor, Var};
use mambatab::training::{bce_with_logits, mse};

use super::{gradcheck, numeric_grads, rand_tensor, relative_error, rng, weighted_sum};

pub const CASES_PER_OP: u64 = 20;

type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Var>;

struct OpCase {
    name: &'static str,
    shapes: Box<dyn Fn(u64) -> Vec<Vec<usize>>>,
    build: Box<dyn Fn(u64) -> Build>,
}

fn unary(name: &'static str, f: fn(&mut Tape, Var) -> Var) -> OpCase {
    OpCase {
        name,
        shapes: Box::new(|s| vec![vec![2 + (s % 3) as usize, 3]]),
        build: Box::new(move |s| Box::new(move |t, v| {
            let y = f(t, v[0]);
            weighted_sum(t, y, s)
        })),
    }
}

fn cases() -> Vec<OpCase> {
    vec![
        OpCase {
            name: "matmul",
            shapes: Box::new(|s| {
                let (m, k, n) = (1 + (s % 3) as usize, 2 + (s % 2) as usize, 1 + (s % 4) as usize);
                vec![vec![m, k], vec![k, n]]
            }),
            build: Box::new(|s| Box::new(move |t, v| {
                let y = t.matmul(v[0], v[1]).unwrap();
                weighted_sum(t, y, s)
            })),
        },
        OpCase {
            name: "add_bias",
            shapes: Box::new(|s| vec![vec![2, 1 + (s % 3) as usize, 3], vec![3]]),
            build: Box::new(|s| Box::new(move |t, v| {
                let y = t.add_bias(v[0], v[1]).unwrap();
                weighted_sum(t, y, s)
            })),
        },
        OpCase {
            name: "linear",
            shapes: Box::new(|s| vec![vec![2, 1 + (s % 2) as usize, 3], vec![3, 4], vec![4]]),
            build: Box::new(|s| Box::new(move |t, v| {
                let y = t.linear(v[0], v[1], Some(v[2])).unwrap();
                weighted_sum(t, y, s)
            })),
        },
        OpCase {
            name: "add/sub/mul",
            shapes: Box::new(|_| vec![vec![3, 2], vec![3, 2], vec![3, 2]]),
            build: Box::new(|s| Box::new(move |t, v| {
                let a = t.add(v[0], v[1]).unwrap();
                let b = t.sub(a, v[2]).unwrap();
                let c = t.mul(b, v[0]).unwrap();
                weighted_sum(t, c, s)
            })),
        },
        unary("scale", |t, x| t.scale(x, -1.7)),
        unary("exp", |t, x| t.exp(x)),
        unary("relu", |t, x| t.relu(x)),
        unary("sigmoid", |t, x| t.sigmoid(x)),
        unary("silu", |t, x| t.silu(x)),
        unary("softplus", |t, x| t.softplus(x)),
        unary("mean", |t, x| {
            let sq = t.mul(x, x).unwrap();
            t.mean(sq)
        }),
        unary("sum", |t, x| {
            let e = t.exp(x);
            t.sum(e)
        }),
        OpCase {
            name: "reshape/narrow/concat",
            shapes: Box::new(|_| vec![vec![2, 6], vec![2, 2]]),
            build: Box::new(|s| Box::new(move |t, v| {
                let r = t.reshape(v[0], vec![4, 3]).unwrap();
                let r = t.reshape(r, vec![2, 6]).unwrap();
                let a = t.narrow(r, 1, 3).unwrap();
                let c = t.concat(&[v[1], a, v[1]]).unwrap();
                weighted_sum(t, c, s)
            })),
        },
        OpCase {
            name: "causal_conv1d",
            shapes: Box::new(|s| {
                let (b, l, d, w) = (1 + (s % 2) as usize, 1 + (s % 5) as usize, 1 + (s % 3) as usize, 1 + (s % 4) as usize);
                vec![vec![b, l, d], vec![d, w], vec![d]]
            }),
            build: Box::new(|s| Box::new(move |t, v| {
                let y = t.causal_conv1d(v[0], v[1], v[2]).unwrap();
                weighted_sum(t, y, s)
            })),
        },
        OpCase {
            name: "layer_norm",
            shapes: Box::new(|s| {
                let d = 2 + (s % 4) as usize;
                vec![vec![3, d], vec![d], vec![d]]
            }),
            build: Box::new(|s| Box::new(move |t, v| {
                let y = t.layer_norm(v[0], v[1], v[2], 1e-5).unwrap();
                weighted_sum(t, y, s)
            })),
        },
        scan_case("selective_scan", InputDiscretization::Euler),
        scan_case("selective_scan_exact_zoh", InputDiscretization::ExactZoh),
        OpCase {
            name: "bce_with_logits",
            shapes: Box::new(|s| vec![vec![2 + (s % 4) as usize, 1]]),
            build: Box::new(|s| Box::new(move |t, v| {
                let n = t.shape(v[0])[0];
                let labels: Vec<u8> = (0..n).map(|i| ((i as u64 + s) % 2) as u8).collect();
                let z = t.scale(v[0], 3.0);
                bce_with_logits(t, z, &labels).unwrap()
            })),
        },
        OpCase {
            name: "mse",
            shapes: Box::new(|_| vec![vec![3, 4]]),
            build: Box::new(|s| Box::new(move |t, v| {
                let target = rand_tensor(&mut rng(s + 1000), &[3, 4], 0.0, 1.0);
                mse(t, v[0], &target).unwrap()
            })),
        },
    ]
}

fn scan_case(name: &'static str, mode: InputDiscretization) -> OpCase {
    OpCase {
        name,
        shapes: Box::new(|s| {
            let (b, l, d, n) = (1 + (s % 2) as usize, 1 + (s % 4) as usize, 1 + (s % 3) as usize, 1 + (s % 3) as usize);
            // u, delta precursor, B, C, A_log, D
            vec![vec![b, l, d], vec![b, l, d], vec![b, l, n], vec![b, l, n], vec![d, n], vec![d]]
        }),
        build: Box::new(move |s| Box::new(move |t, v| {
            let delta = t.softplus(v[1]);
            let a_pos = t.exp(v[4]);
            let a = t.neg(a_pos);
            let y = ssm::selective_scan(t, v[0], delta, v[2], v[3], a, v[5], mode).unwrap();
            weighted_sum(t, y, s)
        })),
    }
}

/// Worst relative error per operation over `CASES_PER_OP` random instances
/// with entries drawn from U(-1, 1).
pub fn op_gradient_suite() -> Vec<(&'static str, f64)> {
    cases()
        .into_iter()
        .map(|case| {
            let mut worst: f64 = 0.0;
            for s in 0..CASES_PER_OP {
                let mut r = rng(s * 7919 + 13);
                let inputs: Vec<Tensor> = (case.shapes)(s).iter().map(|sh| rand_tensor(&mut r, sh, -1.0, 1.0)).collect();
                let build = (case.build)(s);
                worst = worst.max(gradcheck(&*build, &inputs));
            }
            (case.name, worst)
        })
        .collect()
}

/// Worst relative error over every parameter of a small full model
/// (D=4, E=2, N=4, M=2, five features, batch 3) under the logistic loss.
pub fn model_gradient_check(mode: InputDiscretization, head: HeadKind, seed: u64) -> f64 {
    let cfg = ModelConfig {
        embed_dim: 4,
        expand: 2,
        state_size: 4,
        n_blocks: 2,
        head,
        discretization: mode,
        ..ModelConfig::new(5)
    };
    let mut model = MambaTabModel::new(cfg, seed).unwrap();
    let mut r = rng(seed + 77);
    let x = rand_tensor(&mut r, &[3, 5], 0.0, 1.0);
    let labels = [1u8, 0, 1];

    let loss_on = |m: &MambaTabModel, tape: &mut Tape| -> (Var, mambatab::params::BoundParams) {
        let bound = m.params().bind(tape);
        let xv = tape.constant(x.clone());
        let y = m.forward(tape, &bound, xv).unwrap();
        let loss = match head {
            HeadKind::Classification => bce_with_logits(tape, y, &labels).unwrap(),
            HeadKind::Reconstruction => mse(tape, y, &x).unwrap(),
        };
        (loss, bound)
    };

    let mut tape = Tape::new();
    let (loss, bound) = loss_on(&model, &mut tape);
    tape.backward(loss).unwrap();
    let analytic = bound.grads(&tape);

    let base = model.params().tensors().to_vec();
    let f = |ps: &[Tensor]| {
        let mut m = model.clone();
        m.params_mut().tensors_mut().clone_from_slice(ps);
        let mut t = Tape::new();
        let (l, _) = loss_on(&m, &mut t);
        t.value(l).item()
    };
    let numeric = numeric_grads(&f, &base);
    model.params_mut().tensors_mut().clone_from_slice(&base);

    let mut worst: f64 = 0.0;
    for (a, n) in analytic.iter().zip(&numeric) {
        for (&x, &y) in a.data().iter().zip(n) {
            worst = worst.max(relative_error(y, x));
        }
    }
    worst
}
