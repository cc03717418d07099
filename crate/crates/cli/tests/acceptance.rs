//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.
//!
//! The public-data criterion runs when `MAMBATAB_DATASETS` names a directory
//! holding `ca.csv`, `cg.csv`, `cb.csv` and matching `.schema` files.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use common::checks::{auroc_vs_pairwise, discretize_vs_closed_form, param_count_linearity, scan_vs_naive};
use common::gradsuite::{model_gradient_check, op_gradient_suite};
use common::{rng, scenarios, GRAD_REL_TOL};
use mambatab::model::{HeadKind, MambaTabModel, ModelConfig};
use mambatab::ssm::InputDiscretization;
use mambatab::synthetic::SyntheticSpec;
use mambatab::training::corruption_mask;
use mambatab_cli::commands::generate::cmd_generate;
use mambatab_cli::commands::train::{cmd_train, Summary};
use mambatab_cli::config::{Regime, RunSpec};

struct Gate {
    failed: Vec<u32>,
}

impl Gate {
    fn report(&mut self, n: u32, pass: bool, detail: String) {
        println!("criterion {n:>2}: {} | {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failed.push(n);
        }
    }
}

fn spec_for(data: &Path, out: &Path, seeds: Vec<u64>) -> RunSpec {
    RunSpec {
        data: Some(data.to_path_buf()),
        schema: Some(data.with_extension("schema")),
        out: out.to_path_buf(),
        seeds,
        ..RunSpec::default()
    }
}

fn gradients(g: &mut Gate) {
    let start = Instant::now();
    let ops = op_gradient_suite();
    let (op_name, op_worst) = ops.iter().fold(("", 0.0f64), |acc, &(n, w)| if w > acc.1 { (n, w) } else { acc });
    let mut model_worst: f64 = 0.0;
    for mode in [InputDiscretization::Euler, InputDiscretization::ExactZoh] {
        model_worst = model_worst.max(model_gradient_check(mode, HeadKind::Classification, 3));
    }
    let secs = start.elapsed().as_secs_f64();
    g.report(
        1,
        op_worst < GRAD_REL_TOL && model_worst < GRAD_REL_TOL && secs < 10.0,
        format!(
            "{} ops, worst op rel err {op_worst:.2e} ({op_name}), full model {model_worst:.2e}, {secs:.2}s",
            ops.len()
        ),
    );
}

fn scan_oracle(g: &mut Gate) {
    let e = scan_vs_naive(100, [4, 8, 8, 8], InputDiscretization::Euler);
    let z = scan_vs_naive(100, [4, 8, 8, 8], InputDiscretization::ExactZoh);
    g.report(2, e < 1e-12 && z < 1e-12, format!("100 configs, max abs err {e:.2e} (euler), {z:.2e} (exact zoh)"));
}

fn discretization(g: &mut Gate) {
    let (worst, tiny) = discretize_vs_closed_form(1000);
    g.report(3, worst < 1e-12 && tiny > 0, format!("1000 scalars ({tiny} with |a| < 1e-12), max err {worst:.2e}"));
}

fn auroc_oracle(g: &mut Gate) {
    let worst = auroc_vs_pairwise(100);
    g.report(4, worst < 1e-12, format!("100 instances with ties, max err {worst:.2e}"));
}

fn parameter_counts(g: &mut Gate) {
    let count = MambaTabModel::new(ModelConfig::new(20), 0).unwrap().count_parameters();
    let (counts, residual, slope) = param_count_linearity(&ModelConfig::new(20));
    let per_block = ModelConfig::new(20).block_dims().param_count();
    g.report(
        5,
        (12_000..=16_000).contains(&count) && residual == 0.0 && slope == per_block as f64,
        format!(
            "20 features: {count} params; M=1..10 -> {}..{}, slope {slope} (per block {per_block}), residual {residual}",
            counts[0], counts[9]
        ),
    );
}

fn public_data(g: &mut Gate) -> bool {
    let Some(dir) = std::env::var_os("MAMBATAB_DATASETS").map(PathBuf::from) else {
        println!("criterion  6: SKIP | MAMBATAB_DATASETS not set; replaced by criterion 7");
        return false;
    };
    let tmp = tempfile::tempdir().unwrap();
    let mut all = true;
    let mut parts = Vec::new();
    for (name, floor) in [("ca", 0.93), ("cg", 0.72), ("cb", 0.82)] {
        let data = dir.join(format!("{name}.csv"));
        if !data.is_file() {
            all = false;
            parts.push(format!("{name}: missing"));
            continue;
        }
        let start = Instant::now();
        match cmd_train(&spec_for(&data, &tmp.path().join(name), (0..10).collect())) {
            Ok(s) => {
                let secs = start.elapsed().as_secs_f64();
                // the time budget is per dataset, i.e. all ten seeds
                all &= s.auroc.mean >= floor && secs < 300.0;
                parts.push(format!("{name}: {:.4} +/- {:.4} (>= {floor}), {secs:.0}s", s.auroc.mean, s.auroc.std));
            }
            Err(e) => {
                all = false;
                parts.push(format!("{name}: {e}"));
            }
        }
    }
    g.report(6, all, parts.join("; "));
    true
}

fn synthetic(g: &mut Gate, dir: &Path) -> Summary {
    let data = dir.join("signal.csv");
    cmd_generate(&SyntheticSpec::new(1000, 6, 6, 0), &data).unwrap();
    let start = Instant::now();
    let signal = cmd_train(&spec_for(&data, &dir.join("signal"), vec![0])).unwrap();
    let secs = start.elapsed().as_secs_f64();

    let noise_data = dir.join("noise.csv");
    cmd_generate(&SyntheticSpec::new(5000, 0, 12, 0), &noise_data).unwrap();
    let noise = cmd_train(&spec_for(&noise_data, &dir.join("noise"), vec![0])).unwrap();
    let (a, n) = (signal.auroc.mean, noise.auroc.mean);
    g.report(
        7,
        a >= 0.90 && secs < 60.0 && (0.45..=0.55).contains(&n),
        format!("6+6 informative/noise: AUROC {a:.4} in {secs:.1}s; all-noise (5000 rows): AUROC {n:.4}"),
    );
    signal
}

fn incremental(g: &mut Gate) {
    let out = scenarios::incremental(0);
    let gain = out.final_auroc - out.stage1_auroc;
    g.report(
        8,
        gain >= 0.10 && out.transfer_bit_exact,
        format!(
            "stage 1 only {:.4}, after stage 3 {:.4} (gain {gain:.4}); non-embedding transfer bit-exact: {}",
            out.stage1_auroc, out.final_auroc, out.transfer_bit_exact
        ),
    );
}

fn ssl(g: &mut Gate) {
    let mut r = rng(99);
    let masks_ok = (1..=40).all(|n| (0..50).all(|_| corruption_mask(&mut r, n).iter().filter(|&&b| b).count() == n / 2));
    let out = scenarios::ssl(&SyntheticSpec::new(1000, 6, 6, 0), 0);
    let reduction = 1.0 - out.best_val_l2 / out.initial_val_l2;
    let f = &out.finetuned;
    let valid = (0.0..=1.0).contains(&f.auroc) && (0.0..=1.0).contains(&f.accuracy) && f.n_pos + f.n_neg == 200;
    g.report(
        9,
        masks_ok && reduction >= 0.5 && valid,
        format!(
            "masks zero floor(n/2): {masks_ok}; val L2 {:.4} -> {:.4} ({:.1}% lower); fine-tuned AUROC {:.4}",
            out.initial_val_l2,
            out.best_val_l2,
            100.0 * reduction,
            f.auroc
        ),
    );
}

fn layer_norm_ablation(g: &mut Gate, dir: &Path, with_ln: &Summary) {
    let data = dir.join("signal.csv");
    let mut spec = spec_for(&data, &dir.join("no-ln"), vec![0]);
    spec.model.layer_norm = false;
    let result = cmd_train(&spec);
    let Ok(without) = result else {
        g.report(10, false, format!("no-layer-norm run failed: {}", result.unwrap_err()));
        return;
    };
    let csv = |p: &str| fs::read_to_string(dir.join(p).join("summary.csv")).unwrap();
    let (on, off) = (csv("signal"), csv("no-ln"));
    let distinct = with_ln.use_layer_norm && !without.use_layer_norm && on != off;
    let delta = with_ln.param_count - without.param_count;
    g.report(
        10,
        distinct && delta == 2 * spec.model.embed_dim,
        format!(
            "layer norm on: AUROC {:.4}, {} params; off: AUROC {:.4}, {} params; summaries differ: {distinct}",
            with_ln.auroc.mean, with_ln.param_count, without.auroc.mean, without.param_count
        ),
    );
}

fn same_bytes(a: &Path, b: &Path, files: &[&str]) -> Vec<String> {
    files
        .iter()
        .filter(|f| fs::read(a.join(f)).ok() != fs::read(b.join(f)).ok())
        .map(|f| f.to_string())
        .collect()
}

fn determinism(g: &mut Gate, dir: &Path) {
    let data = dir.join("signal.csv");
    let files = [
        "run.json",
        "summary.json",
        "summary.csv",
        "summary.txt",
        "seed-0/report.json",
        "seed-0/model.ckpt",
        "seed-0/model.meta.json",
        "seed-1/report.json",
        "seed-1/model.ckpt",
    ];
    let mut differing = Vec::new();
    for regime in [Regime::Supervised, Regime::Incremental, Regime::Ssl] {
        let mut spec = spec_for(&data, &dir.join(format!("det-{regime}-a")), vec![0, 1]);
        spec.regime = regime;
        spec.train.max_epochs = 30;
        cmd_train(&spec).unwrap();
        spec.out = dir.join(format!("det-{regime}-b"));
        cmd_train(&spec).unwrap();
        let diff = same_bytes(&dir.join(format!("det-{regime}-a")), &dir.join(format!("det-{regime}-b")), &files);
        differing.extend(diff.into_iter().map(|f| format!("{regime}/{f}")));
    }
    // the uncapped default run from criterion 7, repeated
    cmd_train(&spec_for(&data, &dir.join("signal-repeat"), vec![0])).unwrap();
    let full = &files[..7];
    differing.extend(
        same_bytes(&dir.join("signal"), &dir.join("signal-repeat"), full)
            .into_iter()
            .map(|f| format!("default/{f}")),
    );
    g.report(
        11,
        differing.is_empty(),
        if differing.is_empty() {
            format!("3 regimes x 2 seeds plus the full default run, {} artifacts each byte-identical across invocations", files.len())
        } else {
            format!("differing: {}", differing.join(", "))
        },
    );
}

fn main() {
    // `cargo test` passes harness flags; a name filter that excludes this
    // target means "do not run"
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return;
    }
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let mut g = Gate { failed: Vec::new() };

    gradients(&mut g);
    scan_oracle(&mut g);
    discretization(&mut g);
    auroc_oracle(&mut g);
    parameter_counts(&mut g);
    public_data(&mut g);
    let with_ln = synthetic(&mut g, dir);
    incremental(&mut g);
    ssl(&mut g);
    layer_norm_ablation(&mut g, dir, &with_ln);
    determinism(&mut g, dir);

    println!("acceptance finished in {:.1}s", start.elapsed().as_secs_f64());
    if !g.failed.is_empty() {
        println!("failed criteria: {:?}", g.failed);
        std::process::exit(1);
    }
}
