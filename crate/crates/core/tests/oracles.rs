mod common;

use common::checks::{auroc_vs_pairwise, discretize_vs_closed_form, scan_vs_naive};
use mambatab::ssm::InputDiscretization;

#[test]
fn scan_matches_naive_recurrence() {
    for mode in [InputDiscretization::Euler, InputDiscretization::ExactZoh] {
        let worst = scan_vs_naive(100, [4, 8, 8, 8], mode);
        assert!(worst < 1e-12, "{mode:?}: {worst:e}");
        let worst = scan_vs_naive(100, [4, 8, 4, 4], mode);
        assert!(worst < 1e-12, "{mode:?}: {worst:e}");
    }
}

#[test]
fn discretize_matches_closed_form() {
    let (worst, tiny) = discretize_vs_closed_form(1000);
    assert!(tiny >= 100);
    assert!(worst < 1e-12, "{worst:e}");
}

#[test]
fn auroc_matches_pair_counting() {
    let worst = auroc_vs_pairwise(100);
    assert!(worst < 1e-12, "{worst:e}");
}
