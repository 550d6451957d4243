//! Analytic gradients of every training loss against central differences.

mod common;

use common::grad::{self, TOL};

#[test]
fn latent_model_loss() {
    let err = grad::latent_model();
    assert!(err <= TOL, "relative error {err}");
}

#[test]
fn reward_surrogate_loss() {
    let err = grad::reward_surrogate();
    assert!(err <= TOL, "relative error {err}");
}

#[test]
fn regret_with_respect_to_latent() {
    let err = grad::regret_latent();
    assert!(err <= TOL, "relative error {err}");
}

#[test]
fn behaviour_cloning_loss() {
    for use_latent in [true, false] {
        let err = grad::behaviour_cloning(use_latent);
        assert!(err <= TOL, "latent {use_latent}: relative error {err}");
    }
}

#[test]
fn policy_gradient_loss() {
    let err = grad::policy_gradient();
    assert!(err <= TOL, "relative error {err}");
}

#[test]
fn combined_policy_objective() {
    let err = grad::combined_policy();
    assert!(err <= TOL, "relative error {err}");
}

#[test]
fn value_baseline_loss() {
    let err = grad::value_baseline();
    assert!(err <= TOL, "relative error {err}");
}
