mod common;

use common::scenarios;
use common::{rand_tensor, rng};
use mambatab::model::{MambaTabModel, ModelConfig};
use mambatab::synthetic::SyntheticSpec;
use mambatab::tensor::Tape;
use mambatab::training::{bce_with_logits, Adam};

#[test]
fn one_adam_step_descends() {
    let cfg = ModelConfig { embed_dim: 4, state_size: 2, ..ModelConfig::new(3) };
    let mut model = MambaTabModel::new(cfg, 2).unwrap();
    let x = rand_tensor(&mut rng(5), &[8, 3], 0.0, 1.0);
    let labels = [1, 0, 1, 1, 0, 0, 1, 0];
    let loss_and_grads = |m: &MambaTabModel| {
        let mut tape = Tape::new();
        let bound = m.params().bind(&mut tape);
        let xv = tape.constant(x.clone());
        let y = m.forward(&mut tape, &bound, xv).unwrap();
        let l = bce_with_logits(&mut tape, y, &labels).unwrap();
        tape.backward(l).unwrap();
        (tape.value(l).item(), bound.grads(&tape))
    };
    let (before, grads) = loss_and_grads(&model);
    let mut opt = Adam::new(model.params().tensors(), 0.9, 0.999, 1e-8);
    opt.step(model.params_mut().tensors_mut(), &grads, 1e-3);
    let (after, _) = loss_and_grads(&model);
    assert!(after < before, "{after} >= {before}");
}

#[test]
fn supervised_learns_signal_and_not_noise() {
    let signal = scenarios::supervised(&SyntheticSpec::new(1000, 6, 6, 0), 0, true);
    assert!(signal.eval.auroc >= 0.90, "{}", signal.eval.auroc);
    let noise = scenarios::supervised(&SyntheticSpec::new(5000, 0, 12, 0), 0, true);
    assert!((0.45..=0.55).contains(&noise.eval.auroc), "{}", noise.eval.auroc);
}

#[test]
fn incremental_beats_first_stage() {
    let out = scenarios::incremental(0);
    assert!(out.transfer_bit_exact);
    assert!(out.final_auroc - out.stage1_auroc >= 0.10);
}

#[test]
fn ssl_halves_reconstruction_loss() {
    let out = scenarios::ssl(&SyntheticSpec::new(1000, 6, 6, 0), 0);
    assert!(out.best_val_l2 <= 0.5 * out.initial_val_l2);
    let f = &out.finetuned;
    assert!((0.0..=1.0).contains(&f.auroc) && (0.0..=1.0).contains(&f.accuracy));
    assert_eq!(f.n_pos + f.n_neg, 200);
}
