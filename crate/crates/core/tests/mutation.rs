//! The verification suite must notice a corrupted gradient.

use owm::error::Result;
use owm::harness::check::{print_report, run_checks, CheckOptions, Hooks};
use owm::imagination::ImaginedBatch;
use owm::losses::optimistic_dynamics_gradient;
use owm::mdp::Transition;
use owm::world_model::{nll_gradient, GradientTensor, SoftmaxDynamicsModel};

fn flipped_nll(m: &SoftmaxDynamicsModel<f64>, batch: &[Transition<f64>]) -> Result<GradientTensor<f64>> {
    nll_gradient(m, batch).map(|g| -g)
}

fn halved_entropy_term(m: &SoftmaxDynamicsModel<f64>, batch: &ImaginedBatch<f64>, alpha: f64, eta: f64) -> Result<GradientTensor<f64>> {
    optimistic_dynamics_gradient(m, batch, alpha, eta / 2.0)
}

fn failing(hooks: Hooks) -> (Vec<&'static str>, String) {
    let results = run_checks(&CheckOptions {
        hooks,
        instances: 20,
        seed: 3,
    });
    let mut out = Vec::new();
    let all_passed = print_report(&results, &mut out).unwrap();
    assert!(!all_passed);
    (
        results.iter().filter(|r| !r.passed).map(|r| r.name).collect(),
        String::from_utf8(out).unwrap(),
    )
}

#[test]
fn sign_flip_in_likelihood_gradient_is_named() {
    let (names, text) = failing(Hooks {
        nll_gradient: flipped_nll,
        ..Hooks::default()
    });
    assert_eq!(names, vec!["nll_gradient_matches_finite_differences", "composite_model_gradient_matches_finite_differences"]);
    assert!(text.contains("FAIL nll_gradient_matches_finite_differences"));
}

#[test]
fn scaled_entropy_term_is_caught() {
    let (names, _) = failing(Hooks {
        optimistic_gradient: halved_entropy_term,
        ..Hooks::default()
    });
    assert!(names.contains(&"optimistic_gradient_matches_finite_differences"));
}
