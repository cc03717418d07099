//! Oracle comparisons that return the worst observed error, shared between
//! the per-crate tests and the acceptance gate.

use mambatab::metrics::auroc;
use mambatab::ssm::{self, InputDiscretization};
use mambatab::tensor::Tape;
use rand::Rng;

use super::{naive_scan, pairwise_auroc, rand_tensor, rng};

/// Largest |fast - naive| over `configs` random scans with every size drawn
/// from `1..=max` for `[batch, length, d_inner, d_state]`.
pub fn scan_vs_naive(configs: u64, max: [usize; 4], mode: InputDiscretization) -> f64 {
    let mut worst: f64 = 0.0;
    for s in 0..configs {
        let mut r = rng(0x5ca7 + s);
        let b = r.gen_range(1..=max[0]);
        let l = r.gen_range(1..=max[1]);
        let d = r.gen_range(1..=max[2]);
        let n = r.gen_range(1..=max[3]);
        let u = rand_tensor(&mut r, &[b, l, d], -1.0, 1.0);
        let delta = rand_tensor(&mut r, &[b, l, d], 1e-3, 1.0);
        let bt = rand_tensor(&mut r, &[b, l, n], -1.0, 1.0);
        let ct = rand_tensor(&mut r, &[b, l, n], -1.0, 1.0);
        let mut a = rand_tensor(&mut r, &[d, n], -2.0, 2.0);
        a.data_mut().iter_mut().for_each(|v| *v = -v.exp());
        let dk = rand_tensor(&mut r, &[d], -1.0, 1.0);

        let expected = naive_scan(&u, &delta, &bt, &ct, &a, &dk, mode == InputDiscretization::ExactZoh);
        let mut tape = Tape::new();
        let vars: Vec<_> = [u, delta, bt, ct, a, dk].into_iter().map(|t| tape.constant(t)).collect();
        let y = ssm::selective_scan(&mut tape, vars[0], vars[1], vars[2], vars[3], vars[4], vars[5], mode).unwrap();
        for (x, e) in tape.value(y).data().iter().zip(&expected) {
            worst = worst.max((x - e).abs());
        }
    }
    worst
}

/// `(exp(x) - 1) / x` by its Taylor series for small `x` and directly
/// otherwise; both pieces are accurate to a few ulps on their ranges.
fn phi(x: f64) -> f64 {
    if x.abs() < 0.5 {
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 2..30 {
            term *= x / k as f64;
            sum += term;
        }
        sum
    } else {
        (x.exp() - 1.0) / x
    }
}

/// Largest scaled error `|got - want| / max(1, |want|)` of
/// `discretize(a, b, delta)` against `(a_bar, (exp(delta a) - 1) / a * b)`
/// over `n` scalars. A fifth of the draws have `|a| < 1e-12`, where the
/// closed form is evaluated through its limit `delta * b`.
pub fn discretize_vs_closed_form(n: usize) -> (f64, usize) {
    let mut r = rng(0xd15c);
    let mut worst: f64 = 0.0;
    let mut tiny = 0;
    for i in 0..n {
        let a = match i % 5 {
            0 => {
                tiny += 1;
                let mag = if i % 10 == 0 { 0.0 } else { 10f64.powf(r.gen_range(-20.0..-12.0)) };
                if r.gen_bool(0.5) { mag } else { -mag }
            }
            1 => -10f64.powf(r.gen_range(-12.0..-4.0)),
            _ => -r.gen_range(-4.0f64..2.5).exp(),
        };
        let b = r.gen_range(-2.0..2.0);
        let delta = 10f64.powf(r.gen_range(-3.0..0.0));
        let (a_bar, b_bar) = ssm::discretize(a, b, delta);
        let want_a = (delta * a).exp();
        let want_b = if a.abs() < ssm::ZERO_A_THRESHOLD { delta * b } else { phi(delta * a) * delta * b };
        let err = |g: f64, w: f64| (g - w).abs() / w.abs().max(1.0);
        worst = worst.max(err(a_bar, want_a)).max(err(b_bar, want_b));
    }
    (worst, tiny)
}

/// Largest |fast - pairwise| over `instances` random score vectors of
/// length 2..=200 with coarse quantisation so ties are frequent.
pub fn auroc_vs_pairwise(instances: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for s in 0..instances {
        let mut r = rng(0xa0c + s);
        let m = r.gen_range(2..=200);
        let levels = *[3usize, 10, 1000, 1 << 30].get(s as usize % 4).unwrap();
        let mut labels: Vec<u8> = (0..m).map(|_| u8::from(r.gen_bool(0.4))).collect();
        labels[0] = 1;
        labels[1] = 0;
        let scores: Vec<f64> = (0..m).map(|_| r.gen_range(0..levels) as f64 / levels as f64).collect();
        let fast = auroc(&scores, &labels).unwrap();
        worst = worst.max((fast - pairwise_auroc(&scores, &labels)).abs());
    }
    worst
}

/// Block size from the closed form, written out term by term.
pub fn block_formula(d: usize, e: usize, n: usize, d_conv: usize) -> usize {
    let ed = e * d;
    let r = d.div_ceil(16).max(1);
    d * 2 * ed + 2 * ed + ed * d_conv + ed + ed * (r + 2 * n) + r * ed + ed + ed * n + ed + ed * d + d
}

/// `(count(M) for M in 1..=10, least-squares residual, fitted slope)`.
pub fn param_count_linearity(base: &mambatab::ModelConfig) -> (Vec<usize>, f64, f64) {
    let counts: Vec<usize> = (1..=10)
        .map(|m| {
            let cfg = mambatab::ModelConfig { n_blocks: m, ..base.clone() };
            mambatab::MambaTabModel::new(cfg, 0).unwrap().count_parameters()
        })
        .collect();
    let xs: Vec<f64> = (1..=10).map(|m| m as f64).collect();
    let ys: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / 10.0, ys.iter().sum::<f64>() / 10.0);
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    let icept = my - slope * mx;
    let residual = xs.iter().zip(&ys).map(|(x, y)| (y - (icept + slope * x)).abs()).fold(0.0, f64::max);
    (counts, residual, slope)
}
