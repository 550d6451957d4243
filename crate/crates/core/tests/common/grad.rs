//! Relative finite-difference errors of every training loss.

use advbid_core::diff::{finite_diff_check, finite_diff_check_vec, Graph, ParamSet, Tensor, Var};
use advbid_core::miro::{penalized_objective, surrogate_regret, TeacherConfig, ValueNet};
use advbid_core::policy::{causal_bc_loss, policy_objective, rl_loss, BcBatch, RlBatch, UpdateWeights};
use advbid_core::seed;
use advbid_core::world::{Batch, EpisodeFeatures};
use rand_distr::{Distribution, StandardNormal};

use super::*;

pub const TOL: f64 = 1e-4;
pub const STEP: f64 = 1e-5;

fn check(params: &ParamSet, build: impl Fn(&mut Graph) -> Var) -> f64 {
    let grads = {
        let mut g = Graph::new(params);
        let l = build(&mut g);
        g.backward(l).into_params()
    };
    finite_diff_check(
        |p| {
            let mut g = Graph::new(p);
            let l = build(&mut g);
            g.value(l).item()
        },
        params,
        &grads,
        STEP,
    )
}

fn normal(rows: usize, cols: usize, tag: &str) -> Tensor {
    let mut rng = seed::rng(21, tag);
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| StandardNormal.sample(&mut rng)).collect())
}

fn fixture() -> (Vec<EpisodeFeatures>, Vec<EpisodeFeatures>) {
    let days = tiny_days();
    let mut mixed = episodes(&days, 1.0, true);
    mixed[1].expert = false;
    (mixed, episodes(&days, 0.6, false))
}

pub fn latent_model() -> f64 {
    let (eps, _) = fixture();
    let world = tiny_world("grad/vib");
    let batch = Batch::new(eps.iter().collect()).unwrap();
    let noise: Vec<Tensor> = (0..H).map(|t| normal(eps.len(), 3, &format!("vib/{t}"))).collect();
    check(&world.params, |g| world.vib_loss(g, &batch, &noise, 0.3).loss)
}

pub fn reward_surrogate() -> f64 {
    let (eps, _) = fixture();
    let world = tiny_world("grad/reward");
    let batch = Batch::new(eps.iter().collect()).unwrap();
    let omega = normal(eps.len(), 3, "reward/omega");
    check(&world.params, |g| {
        let w = g.input(omega.clone());
        world.reward_loss(g, &batch, w)
    })
}

/// Worst error of `dReg/dw` and of the penalised teacher objective over the fixture days.
pub fn regret_latent() -> f64 {
    let (experts, rollouts) = fixture();
    let world = tiny_world("grad/regret");
    let mut worst = 0.0f64;
    for i in 0..experts.len() {
        let w = normal(1, 3, &format!("regret/{i}")).data;
        let (_, grad) = surrogate_regret(&world, &experts[i], &rollouts[i], &w).unwrap();
        worst = worst.max(finite_diff_check_vec(|x| surrogate_regret(&world, &experts[i], &rollouts[i], x).unwrap().0.regret, &w, &grad, STEP));
        let origin: Vec<f64> = w.iter().map(|x| x - 0.2).collect();
        let cfg = TeacherConfig { penalty: 0.7, ..TeacherConfig::default() };
        let (_, _, pg) = penalized_objective(&world, &experts[i], &rollouts[i], &w, &origin, &cfg).unwrap();
        worst = worst.max(finite_diff_check_vec(|x| penalized_objective(&world, &experts[i], &rollouts[i], x, &origin, &cfg).unwrap().0, &w, &pg, STEP));
    }
    worst
}

pub fn behaviour_cloning(use_latent: bool) -> f64 {
    let (eps, _) = fixture();
    let world = tiny_world("grad/bc");
    let policy = tiny_policy(&world, use_latent, "grad/bc");
    let bc = BcBatch::new(&world, eps.iter().collect(), &mut seed::rng(3, "bc")).unwrap();
    check(&policy.params, |g| causal_bc_loss(g, &policy, &bc, 0.4).loss)
}

pub fn policy_gradient() -> f64 {
    let (_, rollouts) = fixture();
    let world = tiny_world("grad/rl");
    let policy = tiny_policy(&world, true, "grad/rl");
    let rl = RlBatch { batch: Batch::new(rollouts.iter().collect()).unwrap(), advantages: normal(rollouts.len(), H, "rl/adv") };
    check(&policy.params, |g| {
        let (pg, ent) = rl_loss(g, &policy, &rl);
        let e = g.scale(ent, -0.01);
        g.add(pg, e)
    })
}

pub fn combined_policy() -> f64 {
    let (eps, rollouts) = fixture();
    let world = tiny_world("grad/total");
    let policy = tiny_policy(&world, true, "grad/total");
    let rl = RlBatch { batch: Batch::new(rollouts.iter().collect()).unwrap(), advantages: normal(rollouts.len(), H, "total/adv") };
    let bc = BcBatch::new(&world, eps.iter().collect(), &mut seed::rng(4, "bc")).unwrap();
    let w = UpdateWeights { rl: 1.0, bc: 0.5, beta2: 0.1 };
    check(&policy.params, |g| policy_objective(g, &policy, Some(&rl), Some(&bc), w).0)
}

pub fn value_baseline() -> f64 {
    let (_, rollouts) = fixture();
    let mut value = ValueNet::new(3, 6, Default::default(), &mut seed::rng(5, "value"));
    jitter(&mut value.params, 0.1, "grad/value");
    let batch = Batch::new(rollouts.iter().collect()).unwrap();
    let omega = normal(rollouts.len(), 3, "value/omega");
    let returns = normal(rollouts.len(), H, "value/returns");
    check(&value.params, |g| value.loss(g, &batch, &omega, &returns).1)
}

/// Every loss with its error.
pub fn all() -> Vec<(&'static str, f64)> {
    vec![
        ("latent model", latent_model()),
        ("reward surrogate", reward_surrogate()),
        ("regret wrt latent", regret_latent()),
        ("bc with latent", behaviour_cloning(true)),
        ("bc without latent", behaviour_cloning(false)),
        ("policy gradient", policy_gradient()),
        ("combined objective", combined_policy()),
        ("value baseline", value_baseline()),
    ]
}
