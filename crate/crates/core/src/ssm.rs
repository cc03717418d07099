//! Structured state-space machinery: zero-order-hold discretization, the
//! input-dependent (selective) coefficients, the sequential scan and the
//! gated Mamba block built around it.
//!
//! Shapes follow the `[batch, length, channels]` convention. The diagonal
//! state matrix is stored as `A_log[d_inner, n]` with `A = -exp(A_log)`, so the
//! continuous system is stable for any parameter value.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::params::{uniform, BoundParams, ParamId, ParamStore};
use crate::tensor::{CustomOp, Result, Tape, Tensor, TensorError, Var};

/// Below this magnitude the diagonal entry of `A` is treated as zero and the
/// input coefficient takes its analytic limit `delta * b`.
pub const ZERO_A_THRESHOLD: f64 = 1e-12;

/// Zero-order-hold discretization of one diagonal entry.
///
/// Returns `(a_bar, b_bar)` with `a_bar = exp(delta * a)` and
/// `b_bar = (exp(delta * a) - 1) / a * b`.
pub fn discretize(a: f64, b: f64, delta: f64) -> (f64, f64) {
    let x = delta * a;
    let a_bar = x.exp();
    (a_bar, zoh_input_gain(a, delta) * b)
}

/// `(exp(delta * a) - 1) / a`, i.e. `b_bar / b`.
fn zoh_input_gain(a: f64, delta: f64) -> f64 {
    if a.abs() < ZERO_A_THRESHOLD {
        delta
    } else {
        (delta * a).exp_m1() / a
    }
}

/// `d/da [(exp(delta * a) - 1) / a]`.
fn zoh_input_gain_da(a: f64, delta: f64) -> f64 {
    let x = delta * a;
    if x.abs() < 1e-4 {
        delta * delta * (0.5 + x / 3.0 + x * x / 8.0)
    } else {
        (x * x.exp() - x.exp_m1()) / (a * a)
    }
}

/// How the input matrix is discretized inside the scan.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputDiscretization {
    /// `B_bar = delta * B`, the usual Mamba simplification.
    #[default]
    Euler,
    /// `B_bar = (exp(delta * A) - 1) / A * B`.
    ExactZoh,
}

struct ScanDims {
    batch: usize,
    len: usize,
    inner: usize,
    state: usize,
}

fn scan_dims(u: &Tensor, delta: &Tensor, b: &Tensor, c: &Tensor, a: &Tensor, d: &Tensor) -> Result<ScanDims> {
    let bad = || {
        Err(TensorError::Shape {
            op: "selective_scan",
            detail: format!(
                "u {:?}, delta {:?}, B {:?}, C {:?}, A {:?}, D {:?}",
                u.shape(),
                delta.shape(),
                b.shape(),
                c.shape(),
                a.shape(),
                d.shape()
            ),
        })
    };
    if u.rank() != 3 || a.rank() != 2 {
        return bad();
    }
    let (batch, len, inner) = (u.shape()[0], u.shape()[1], u.shape()[2]);
    let state = a.shape()[1];
    if delta.shape() != u.shape()
        || b.shape() != [batch, len, state]
        || c.shape() != [batch, len, state]
        || a.shape()[0] != inner
        || d.shape() != [inner]
    {
        return bad();
    }
    Ok(ScanDims {
        batch,
        len,
        inner,
        state,
    })
}

struct SelectiveScanOp {
    mode: InputDiscretization,
    /// hidden states `h[b, k, d, n]` after each step
    states: Vec<f64>,
}

fn input_gain(mode: InputDiscretization, a: f64, delta: f64) -> f64 {
    match mode {
        InputDiscretization::Euler => delta,
        InputDiscretization::ExactZoh => zoh_input_gain(a, delta),
    }
}

/// Forward recurrence shared by the tape op and plain evaluation.
fn scan_forward(
    dims: &ScanDims,
    mode: InputDiscretization,
    u: &[f64],
    delta: &[f64],
    bm: &[f64],
    cm: &[f64],
    a: &[f64],
    dskip: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let ScanDims {
        batch,
        len,
        inner,
        state,
    } = *dims;
    let mut y = vec![0.0; batch * len * inner];
    let mut states = vec![0.0; batch * len * inner * state];
    for bi in 0..batch {
        let mut h = vec![0.0; inner * state];
        for k in 0..len {
            let tok = bi * len + k;
            let brow = &bm[tok * state..(tok + 1) * state];
            let crow = &cm[tok * state..(tok + 1) * state];
            for d in 0..inner {
                let uk = u[tok * inner + d];
                let dk = delta[tok * inner + d];
                let hd = &mut h[d * state..(d + 1) * state];
                let arow = &a[d * state..(d + 1) * state];
                let mut acc = 0.0;
                for n in 0..state {
                    let an = arow[n];
                    let carry = if k == 0 { 0.0 } else { (dk * an).exp() * hd[n] };
                    hd[n] = carry + input_gain(mode, an, dk) * brow[n] * uk;
                    acc += crow[n] * hd[n];
                }
                y[tok * inner + d] = acc + dskip[d] * uk;
                states[(tok * inner + d) * state..(tok * inner + d + 1) * state].copy_from_slice(hd);
            }
        }
    }
    (y, states)
}

impl CustomOp for SelectiveScanOp {
    fn name(&self) -> &'static str {
        "selective_scan"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, gy: &[f64]) -> Vec<Option<Vec<f64>>> {
        let [u, delta, bm, cm, a, dskip] = inputs else {
            unreachable!("selective_scan has six inputs")
        };
        let (batch, len, inner) = (u.shape()[0], u.shape()[1], u.shape()[2]);
        let state = a.shape()[1];
        let (u, delta, bm, cm, a, dskip) = (u.data(), delta.data(), bm.data(), cm.data(), a.data(), dskip.data());

        let mut gu = vec![0.0; u.len()];
        let mut gdelta = vec![0.0; delta.len()];
        let mut gb = vec![0.0; bm.len()];
        let mut gc = vec![0.0; cm.len()];
        let mut ga = vec![0.0; a.len()];
        let mut gd = vec![0.0; dskip.len()];

        let h_at = |tok: usize, d: usize, n: usize| self.states[(tok * inner + d) * state + n];

        for bi in 0..batch {
            // gradient flowing into h_k from later steps
            let mut gh = vec![0.0; inner * state];
            for k in (0..len).rev() {
                let tok = bi * len + k;
                for d in 0..inner {
                    let idx = tok * inner + d;
                    let (uk, dk, g) = (u[idx], delta[idx], gy[idx]);
                    gd[d] += g * uk;
                    gu[idx] += g * dskip[d];
                    for n in 0..state {
                        let an = a[d * state + n];
                        let bn = bm[tok * state + n];
                        let cn = cm[tok * state + n];
                        let hk = h_at(tok, d, n);
                        let hprev = if k == 0 { 0.0 } else { h_at(tok - 1, d, n) };

                        gc[tok * state + n] += g * hk;
                        let ghk = gh[d * state + n] + g * cn;

                        // h_k = abar * h_{k-1} + gain * b * u; h_0 = 0 so the first
                        // step has no carry term
                        let abar = if k == 0 && self.mode == InputDiscretization::Euler {
                            0.0
                        } else {
                            (dk * an).exp()
                        };
                        if k > 0 {
                            let g_abar = ghk * hprev;
                            gdelta[idx] += g_abar * an * abar;
                            ga[d * state + n] += g_abar * dk * abar;
                        }

                        let gain = input_gain(self.mode, an, dk);
                        gb[tok * state + n] += ghk * gain * uk;
                        gu[idx] += ghk * gain * bn;
                        let g_gain = ghk * bn * uk;
                        match self.mode {
                            InputDiscretization::Euler => gdelta[idx] += g_gain,
                            InputDiscretization::ExactZoh => {
                                gdelta[idx] += g_gain * abar;
                                if an.abs() >= ZERO_A_THRESHOLD {
                                    ga[d * state + n] += g_gain * zoh_input_gain_da(an, dk);
                                } else {
                                    ga[d * state + n] += g_gain * dk * dk * 0.5;
                                }
                            }
                        }

                        gh[d * state + n] = ghk * abar;
                    }
                }
            }
        }
        vec![Some(gu), Some(gdelta), Some(gb), Some(gc), Some(ga), Some(gd)]
    }
}

/// Selective scan over `u[B, L, D_inner]` with per-token `delta`, `B_t`, `C_t`.
///
/// Per channel `d` and state `n`, starting from `h_0 = 0`:
/// `h_k = exp(delta_k a) h_{k-1} + bbar_k u_k` and
/// `y_k = sum_n C_t[k, n] h_k[n] + D_skip[d] u_k`.
#[allow(clippy::too_many_arguments)]
pub fn selective_scan(
    tape: &mut Tape,
    u: Var,
    delta: Var,
    b_t: Var,
    c_t: Var,
    a: Var,
    d_skip: Var,
    mode: InputDiscretization,
) -> Result<Var> {
    let (uv, dv, bv, cv, av, sv) = (
        tape.value(u),
        tape.value(delta),
        tape.value(b_t),
        tape.value(c_t),
        tape.value(a),
        tape.value(d_skip),
    );
    let dims = scan_dims(uv, dv, bv, cv, av, sv)?;
    let (y, states) = scan_forward(&dims, mode, uv.data(), dv.data(), bv.data(), cv.data(), av.data(), sv.data());
    let out = Tensor::new(uv.shape().to_vec(), y)?;
    Ok(tape.custom(&[u, delta, b_t, c_t, a, d_skip], out, Box::new(SelectiveScanOp { mode, states })))
}

/// Sizes of one Mamba block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockDims {
    pub d_model: usize,
    pub expand: usize,
    pub d_state: usize,
    pub d_conv: usize,
}

impl BlockDims {
    pub fn d_inner(&self) -> usize {
        self.expand * self.d_model
    }

    /// `ceil(D / 16)`, at least 1.
    pub fn dt_rank(&self) -> usize {
        self.d_model.div_ceil(16).max(1)
    }

    /// Closed-form number of trainable scalars in one block.
    pub fn param_count(&self) -> usize {
        let (d, ed, n, w, r) = (self.d_model, self.d_inner(), self.d_state, self.d_conv, self.dt_rank());
        let in_proj = d * 2 * ed + 2 * ed;
        let conv = ed * w + ed;
        let x_proj = ed * (r + 2 * n);
        let dt_proj = r * ed + ed;
        let a_log = ed * n;
        let d_skip = ed;
        let out_proj = ed * d + d;
        in_proj + conv + x_proj + dt_proj + a_log + d_skip + out_proj
    }
}

/// Parameter handles for the SSM core of a block.
#[derive(Clone, Debug)]
pub struct SsmParams {
    pub a_log: ParamId,
    pub d_skip: ParamId,
    pub x_proj_w: ParamId,
    pub dt_proj_w: ParamId,
    pub dt_proj_b: ParamId,
}

/// Parameter handles for one Mamba block.
#[derive(Clone, Debug)]
pub struct MambaBlockParams {
    pub dims: BlockDims,
    pub in_proj_w: ParamId,
    pub in_proj_b: ParamId,
    pub conv_w: ParamId,
    pub conv_b: ParamId,
    pub ssm: SsmParams,
    pub out_proj_w: ParamId,
    pub out_proj_b: ParamId,
}

const DT_MIN: f64 = 1e-3;
const DT_MAX: f64 = 1e-1;

impl MambaBlockParams {
    /// Registers a freshly initialised block under `prefix` in `store`.
    pub fn init(store: &mut ParamStore, prefix: &str, dims: BlockDims, rng: &mut ChaCha8Rng) -> Self {
        let (d, ed, n, w, r) = (dims.d_model, dims.d_inner(), dims.d_state, dims.d_conv, dims.dt_rank());
        let inv_sqrt = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();
        let name = |s: &str| format!("{prefix}.{s}");

        let in_proj_w = store.insert(name("in_proj.weight"), uniform(rng, [d, 2 * ed], inv_sqrt(d)));
        let in_proj_b = store.insert(name("in_proj.bias"), uniform(rng, [2 * ed], inv_sqrt(d)));
        let conv_w = store.insert(name("conv.weight"), uniform(rng, [ed, w], inv_sqrt(w)));
        let conv_b = store.insert(name("conv.bias"), uniform(rng, [ed], inv_sqrt(w)));
        let x_proj_w = store.insert(name("x_proj.weight"), uniform(rng, [ed, r + 2 * n], inv_sqrt(ed)));
        let dt_proj_w = store.insert(name("dt_proj.weight"), uniform(rng, [r, ed], inv_sqrt(r)));

        // softplus(bias) lands log-uniformly in [DT_MIN, DT_MAX]
        let mut dt_bias = Tensor::zeros([ed]);
        for v in dt_bias.data_mut() {
            let dt = rng.gen_range(DT_MIN.ln()..DT_MAX.ln()).exp();
            *v = dt + (-(-dt).exp_m1()).ln();
        }
        let dt_proj_b = store.insert(name("dt_proj.bias"), dt_bias);

        let mut a_log = Tensor::zeros([ed, n]);
        for row in a_log.data_mut().chunks_mut(n) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = ((j + 1) as f64).ln();
            }
        }
        let a_log = store.insert(name("A_log"), a_log);
        let d_skip = store.insert(name("D"), Tensor::full([ed], 1.0));
        let out_proj_w = store.insert(name("out_proj.weight"), uniform(rng, [ed, d], inv_sqrt(ed)));
        let out_proj_b = store.insert(name("out_proj.bias"), uniform(rng, [d], inv_sqrt(ed)));

        Self {
            dims,
            in_proj_w,
            in_proj_b,
            conv_w,
            conv_b,
            ssm: SsmParams {
                a_log,
                d_skip,
                x_proj_w,
                dt_proj_w,
                dt_proj_b,
            },
            out_proj_w,
            out_proj_b,
        }
    }

    /// Handles in registration order.
    pub fn ids(&self) -> [ParamId; 11] {
        [
            self.in_proj_w,
            self.in_proj_b,
            self.conv_w,
            self.conv_b,
            self.ssm.x_proj_w,
            self.ssm.dt_proj_w,
            self.ssm.dt_proj_b,
            self.ssm.a_log,
            self.ssm.d_skip,
            self.out_proj_w,
            self.out_proj_b,
        ]
    }
}

/// Per-token `(delta, B_t, C_t)` from the convolved branch.
pub fn generate_selective_coeffs(
    tape: &mut Tape,
    bound: &BoundParams,
    ssm: &SsmParams,
    dims: &BlockDims,
    conv_out: Var,
) -> Result<(Var, Var, Var)> {
    let (r, n) = (dims.dt_rank(), dims.d_state);
    let proj = tape.linear(conv_out, bound.var(ssm.x_proj_w), None)?;
    let dt_pre = tape.narrow(proj, 0, r)?;
    let b_t = tape.narrow(proj, r, n)?;
    let c_t = tape.narrow(proj, r + n, n)?;
    let dt = tape.linear(dt_pre, bound.var(ssm.dt_proj_w), Some(bound.var(ssm.dt_proj_b)))?;
    let delta = tape.softplus(dt);
    Ok((delta, b_t, c_t))
}

/// `out_proj(scan(silu(conv(LP1 u))) * silu(LP2 u))`, shape-preserving on
/// `[B, L, D]`.
pub fn mamba_block_forward(
    tape: &mut Tape,
    bound: &BoundParams,
    block: &MambaBlockParams,
    u: Var,
    mode: InputDiscretization,
) -> Result<Var> {
    let ed = block.dims.d_inner();
    let xz = tape.linear(u, bound.var(block.in_proj_w), Some(bound.var(block.in_proj_b)))?;
    let x = tape.narrow(xz, 0, ed)?;
    let z = tape.narrow(xz, ed, ed)?;

    let xc = tape.causal_conv1d(x, bound.var(block.conv_w), bound.var(block.conv_b))?;
    let xc = tape.silu(xc);

    let (delta, b_t, c_t) = generate_selective_coeffs(tape, bound, &block.ssm, &block.dims, xc)?;
    let a_pos = tape.exp(bound.var(block.ssm.a_log));
    let a = tape.neg(a_pos);
    let y = selective_scan(tape, xc, delta, b_t, c_t, a, bound.var(block.ssm.d_skip), mode)?;

    let gate = tape.silu(z);
    let y = tape.mul(y, gate)?;
    tape.linear(y, bound.var(block.out_proj_w), Some(bound.var(block.out_proj_b)))
}
