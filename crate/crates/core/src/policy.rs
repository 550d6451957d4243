//! Bid-ratio policies.
//!
//! A policy emits a Gaussian over the log ratio from the current observation
//! and, when latent conditioning is on, an inferred latent `w_hat_t` drawn
//! from its own copy of the causal encoder. The encoder copy starts from the
//! world model's weights and is trained with the policy, so world-model
//! parameters never change during policy updates.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diff::{kl_graph, nll_graph, sample_graph, AdamConfig, GaussVar, Graph, Mlp, ParamId, ParamSet, Tensor, Var};
use crate::env::{reset_episode, EpisodeRecord, Trajectory, TrajectoryStep, OBS_DIM};
use crate::error::{Error, Result};
use crate::market::EnvironmentDay;
use crate::world::{step_token, Batch, Encoder, EpisodeFeatures, WorldModel, TOKEN_DIM};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub hidden: usize,
    pub use_latent: bool,
    /// Initial standard deviation of the log-ratio Gaussian, in log space.
    pub init_log_std: f64,
    pub adam: AdamConfig,
    pub grad_clip: f64,
    pub entropy_coef: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            hidden: 32,
            use_latent: true,
            init_log_std: -2.0,
            adam: AdamConfig { lr: 1e-3, ..AdamConfig::default() },
            grad_clip: 5.0,
            entropy_coef: 1e-3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActMode {
    /// Sample `w_hat` and then the action.
    Stochastic,
    /// Use the posterior mean of `w_hat`, sample the action.
    MeanLatent,
    /// Means throughout.
    Deterministic,
}

#[derive(Clone, Debug)]
pub struct Policy {
    pub cfg: PolicyConfig,
    pub params: ParamSet,
    pub encoder: Option<Encoder>,
    pub body: Mlp,
    pub log_std: ParamId,
    pub latent_dim: usize,
}

impl Policy {
    /// Fresh policy. With latent conditioning the encoder copies the world
    /// model's encoder weights.
    pub fn new<R: Rng>(cfg: PolicyConfig, world: &WorldModel, init_log_ratio: f64, rng: &mut R) -> Self {
        let d = world.latent_dim();
        let mut ps = ParamSet::new();
        let encoder = cfg.use_latent.then(|| Encoder::new(&mut ps, "enc", world.encoder.hidden(), d, rng));
        let input = OBS_DIM + if cfg.use_latent { d } else { 0 };
        let body = Mlp::new(&mut ps, "pi", &[input, cfg.hidden, cfg.hidden, 1], rng);
        let log_std = ps.add("pi.log_std", Tensor::scalar(cfg.init_log_std));
        // start as the constant `init_log_ratio` policy
        let last = body.layers.last().unwrap();
        ps.value_mut(last.w).data.iter_mut().for_each(|x| *x = 0.0);
        ps.value_mut(last.b).data[0] = init_log_ratio;
        let mut p = Policy { cfg, params: ps, encoder, body, log_std, latent_dim: d };
        if cfg.use_latent {
            p.copy_encoder_from(world);
        }
        p
    }

    pub fn copy_encoder_from(&mut self, world: &WorldModel) {
        for id in self.params.ids().collect::<Vec<_>>() {
            let name = self.params.name(id).to_string();
            if name.starts_with("enc.") {
                let src = world.params.find(&name).expect("encoder layouts match");
                *self.params.value_mut(id) = world.params.value(src).clone();
            }
        }
    }

    fn dist(&self, g: &mut Graph, obs: Var, latent: Option<Var>) -> GaussVar {
        let x = match latent {
            Some(w) => g.concat(&[obs, w]),
            None => obs,
        };
        let mean = self.body.forward(g, x);
        let ls = g.param(self.log_std);
        let zeros = g.input(Tensor::zeros(g.shape(mean).0, 1));
        let raw = g.add_row(zeros, ls);
        let log_std = g.clamp(raw, crate::diff::LOG_STD_MIN, 1.0);
        GaussVar { mean, log_std }
    }

    /// Action for one step given the recurrent state over the history.
    /// `noise = (latent noise, action noise)`; zeros give the deterministic
    /// action.
    pub fn act_graph(&self, g: &mut Graph, state: Option<Var>, obs: Var, latent_noise: Option<Var>, action_noise: Var) -> Var {
        let latent = match (&self.encoder, state) {
            (Some(enc), Some(s)) => {
                let q = enc.posterior(g, s, obs);
                Some(match latent_noise {
                    Some(e) => sample_graph(g, q, e),
                    None => q.mean,
                })
            }
            _ => None,
        };
        let d = self.dist(g, obs, latent);
        sample_graph(g, d, action_noise)
    }

    /// Ratio for one observation with the given history (one episode).
    pub fn act(&self, history: &[[f64; TOKEN_DIM]], obs: &[f64; OBS_DIM], mode: ActMode, rng: &mut impl Rng) -> f64 {
        let mut g = Graph::new(&self.params);
        let state = self.encoder.map(|enc| {
            let mut s = enc.initial_state(&mut g, 1);
            for tok in history {
                let t = g.input(Tensor::row(tok));
                s = enc.advance(&mut g, s, t);
            }
            s
        });
        let o = g.input(Tensor::row(obs));
        let (ln, an) = self.noise(1, mode, rng);
        let ln = ln.map(|t| g.input(t));
        let an = g.input(an);
        let la = self.act_graph(&mut g, state, o, ln, an);
        g.value(la).item().exp()
    }

    fn noise(&self, n: usize, mode: ActMode, rng: &mut impl Rng) -> (Option<Tensor>, Tensor) {
        let mut draw = |cols: usize| Tensor::from_vec(n, cols, (0..n * cols).map(|_| rng.sample(StandardNormal)).collect());
        match mode {
            ActMode::Stochastic => {
                let l = self.encoder.is_some().then(|| draw(self.latent_dim));
                (l, draw(1))
            }
            ActMode::MeanLatent => (None, draw(1)),
            ActMode::Deterministic => (None, Tensor::zeros(n, 1)),
        }
    }

    /// Log-density of the logged actions under the policy with the posterior
    /// mean latent, per step: `N x H`.
    pub fn log_probs(&self, g: &mut Graph, batch: &Batch) -> Var {
        let h = batch.horizon();
        let states = self.encoder.map(|enc| enc.filter(g, batch).1);
        let mut cols = Vec::with_capacity(h);
        for t in 0..h {
            let obs = g.input(batch.obs(t));
            let latent = states.as_ref().map(|p| p[t].mean);
            let d = self.dist(g, obs, latent);
            let la = g.input(batch.log_action(t));
            let nll = nll_graph(g, d, la);
            cols.push(g.neg(nll));
        }
        g.concat(&cols)
    }

    pub fn hash(&self) -> String {
        self.params.hash()
    }
}

/// Roll the policy out on several days in lockstep, one row per day.
pub fn rollout_days<R: Rng>(policy: &Policy, days: &[&EnvironmentDay], mode: ActMode, tag: &str, rng: &mut R) -> Result<Vec<EpisodeRecord>> {
    let Some(first) = days.first() else { return Ok(Vec::new()) };
    let h = first.slots();
    if days.iter().any(|d| d.slots() != h) {
        return Err(Error::Shape("lockstep rollout needs days with equal slot counts".into()));
    }
    let n = days.len();
    let mut episodes: Vec<_> = days.iter().map(|d| reset_episode(d)).collect();
    let mut trajs = vec![Trajectory::default(); n];
    let mut state: Option<Tensor> = policy.encoder.map(|e| Tensor::zeros(n, e.hidden()));
    for _ in 0..h {
        let obs_rows: Vec<Vec<f64>> = episodes.iter().map(|(o, _)| o.features().to_vec()).collect();
        let (ln, an) = policy.noise(n, mode, rng);
        let mut g = Graph::new(&policy.params);
        let s = state.as_ref().map(|s| g.input(s.clone()));
        let o = g.input(Tensor::from_rows(&obs_rows));
        let ln = ln.map(|t| g.input(t));
        let an = g.input(an);
        let la = policy.act_graph(&mut g, s, o, ln, an);
        let ratios: Vec<f64> = g.value(la).data.iter().map(|x| x.exp()).collect();
        let mut tokens = Vec::with_capacity(n);
        for (i, (obs, ep)) in episodes.iter_mut().enumerate() {
            let day = ep.day();
            let step = ep.step(ratios[i])?;
            let scale = day.roi_target * day.budget;
            let ts = TrajectoryStep { obs: *obs, action: ratios[i], reward: step.stats.utility / scale, slot: step.stats };
            tokens.push(step_token(day, &ts).to_vec());
            trajs[i].steps.push(ts);
            *obs = step.obs;
        }
        if let (Some(enc), Some(sv)) = (policy.encoder, s) {
            let tok = g.input(Tensor::from_rows(&tokens));
            let next = enc.advance(&mut g, sv, tok);
            state = Some(g.value(next).clone());
        }
    }
    Ok(episodes
        .into_iter()
        .zip(trajs)
        .map(|((_, ep), trajectory)| {
            let day = ep.day();
            let outcome = ep.outcome();
            EpisodeRecord {
                day_id: day.day_id,
                policy: tag.to_string(),
                trajectory,
                outcome,
                reward_h: crate::env::episode_reward(&outcome, day.roi_target) / (day.roi_target * day.budget),
            }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UpdateWeights {
    pub rl: f64,
    pub bc: f64,
    pub beta2: f64,
}

impl Default for UpdateWeights {
    fn default() -> Self {
        UpdateWeights { rl: 1.0, bc: 0.5, beta2: 0.1 }
    }
}

/// Rollouts relabelled for the policy-gradient term.
pub struct RlBatch<'a> {
    pub batch: Batch<'a>,
    /// `N x H` advantages, already normalised; constants for the gradient.
    pub advantages: Tensor,
}

/// Expert demonstrations with smoothing-posterior targets.
pub struct BcBatch<'a> {
    pub batch: Batch<'a>,
    /// Per step `t`: `(mean, log_std)` of the smoothing posterior, `N x D` each.
    pub targets: Vec<(Tensor, Tensor)>,
    /// Per step `t`: `N x D` noise for the reparameterised `w_hat`.
    pub noise: Vec<Tensor>,
}

impl<'a> BcBatch<'a> {
    /// Smoothing-posterior targets from the (frozen) world model.
    pub fn new<R: Rng>(world: &WorldModel, episodes: Vec<&'a EpisodeFeatures>, rng: &mut R) -> Result<Self> {
        let batch = Batch::new(episodes)?;
        let mut g = Graph::new(&world.params);
        let (states, _) = world.encoder.filter(&mut g, &batch);
        let posts = world.smooth(&mut g, &batch, &states);
        let targets = posts.iter().map(|p| (g.value(p.mean).clone(), g.value(p.log_std).clone())).collect();
        let d = world.latent_dim();
        let n = batch.len();
        let noise = (0..batch.horizon())
            .map(|_| Tensor::from_vec(n, d, (0..n * d).map(|_| rng.sample(StandardNormal)).collect()))
            .collect();
        Ok(BcBatch { batch, targets, noise })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub rl: f64,
    pub entropy: f64,
    pub bc_nll: f64,
    pub kl: f64,
    pub total: f64,
    pub grad_norm: f64,
}

/// Policy-gradient surrogate `-mean(A * log pi) - c * entropy`.
pub fn rl_loss(g: &mut Graph, policy: &Policy, rl: &RlBatch) -> (Var, Var) {
    let lp = policy.log_probs(g, &rl.batch);
    let adv = g.input(rl.advantages.clone());
    let weighted = g.mul(lp, adv);
    let m = g.mean(weighted);
    let pg = g.neg(m);
    // Gaussian entropy is log sigma plus a constant
    let ls = g.param(policy.log_std);
    let ent = g.sum(ls);
    (pg, ent)
}

/// Behaviour-cloning terms.
pub struct BcTerms {
    /// `nll + beta2 * kl`.
    pub loss: Var,
    pub nll: Var,
    pub kl: Var,
}

/// `E[-log pi(a* | o, w_hat)] + beta2 * KL(p(w | h*) || q(w_hat | h))`, per
/// step means. Without latent conditioning only the first term remains.
pub fn causal_bc_loss(g: &mut Graph, policy: &Policy, bc: &BcBatch, beta2: f64) -> BcTerms {
    let h = bc.batch.horizon();
    let posts = policy.encoder.map(|enc| enc.filter(g, &bc.batch).1);
    let mut nll_cols = Vec::with_capacity(h);
    let mut kl_cols = Vec::with_capacity(h);
    for t in 0..h {
        let obs = g.input(bc.batch.obs(t));
        let latent = posts.as_ref().map(|p| {
            let eps = g.input(bc.noise[t].clone());
            sample_graph(g, p[t], eps)
        });
        let d = policy.dist(g, obs, latent);
        let la = g.input(bc.batch.log_action(t));
        nll_cols.push(nll_graph(g, d, la));
        if let Some(p) = &posts {
            let target = GaussVar { mean: g.input(bc.targets[t].0.clone()), log_std: g.input(bc.targets[t].1.clone()) };
            kl_cols.push(kl_graph(g, target, p[t]));
        }
    }
    let nll = g.concat(&nll_cols);
    let nll = g.mean(nll);
    let kl = if kl_cols.is_empty() {
        g.input(Tensor::scalar(0.0))
    } else {
        let k = g.concat(&kl_cols);
        g.mean(k)
    };
    let bkl = g.scale(kl, beta2);
    let loss = g.add(nll, bkl);
    BcTerms { loss, nll, kl }
}

/// Weighted objective used by every policy update.
pub fn policy_objective(g: &mut Graph, policy: &Policy, rl: Option<&RlBatch>, bc: Option<&BcBatch>, w: UpdateWeights) -> (Var, LossParts) {
    let mut parts = LossParts::default();
    let mut total = g.input(Tensor::scalar(0.0));
    if let (Some(rl), true) = (rl, w.rl != 0.0) {
        let (pg, ent) = rl_loss(g, policy, rl);
        parts.rl = g.value(pg).item();
        parts.entropy = g.value(ent).item();
        let a = g.scale(pg, w.rl);
        let b = g.scale(ent, -policy.cfg.entropy_coef);
        total = g.add(total, a);
        total = g.add(total, b);
    }
    if let (Some(bc), true) = (bc, w.bc != 0.0) {
        let terms = causal_bc_loss(g, policy, bc, w.beta2);
        parts.bc_nll = g.value(terms.nll).item();
        parts.kl = g.value(terms.kl).item();
        let a = g.scale(terms.loss, w.bc);
        total = g.add(total, a);
    }
    parts.total = g.value(total).item();
    (total, parts)
}

/// One clipped Adam step on the weighted objective.
pub fn policy_update(policy: &mut Policy, rl: Option<&RlBatch>, bc: Option<&BcBatch>, w: UpdateWeights) -> LossParts {
    let (mut parts, mut grads) = {
        let mut g = Graph::new(&policy.params);
        let (loss, parts) = policy_objective(&mut g, policy, rl, bc, w);
        (parts, g.backward(loss).into_params())
    };
    parts.grad_norm = ParamSet::clip_grads(&mut grads, policy.cfg.grad_clip);
    policy.params.adam_step(&grads, &policy.cfg.adam);
    parts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::replay_sequence;
    use crate::market::{generate_dataset, DayGroup, GeneratorConfig, Mechanism, Split};
    use crate::seed;
    use crate::world::WorldModelConfig;

    fn setup(use_latent: bool) -> (Vec<EnvironmentDay>, Vec<EpisodeFeatures>, WorldModel, Policy) {
        let h = 4;
        let cfg = GeneratorConfig {
            auctions_per_day: 50 * h,
            slots: h,
            groups: vec![
                DayGroup { split: Split::Train, mechanism: Mechanism::Gsp, days: 2, k_range: (0.0, 0.0) },
                DayGroup { split: Split::Train, mechanism: Mechanism::Mix, days: 1, k_range: (0.5, 0.9) },
            ],
            ..GeneratorConfig::default()
        };
        let days = generate_dataset(&cfg).unwrap();
        let eps = days
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let r: Vec<f64> = (0..h).map(|t| 0.7 + 0.05 * (t + i) as f64).collect();
                EpisodeFeatures::new(d, &replay_sequence(d, "x", &r).unwrap(), true)
            })
            .collect();
        let mut rng = seed::rng(4, "test/policy");
        let world = WorldModel::new(WorldModelConfig { latent_dim: 3, hidden: 6, ..WorldModelConfig::default() }, &mut rng);
        let pc = PolicyConfig { hidden: 8, use_latent, ..PolicyConfig::default() };
        let policy = Policy::new(pc, &world, -0.2, &mut rng);
        (days, eps, world, policy)
    }

    #[test]
    fn deterministic_actions_repeat_and_match_zero_noise() {
        let (_, eps, _, policy) = setup(true);
        let hist: Vec<[f64; TOKEN_DIM]> = (0..2).map(|t| eps[0].token(t)).collect();
        let obs: [f64; OBS_DIM] = eps[0].obs[2];
        let mut rng = seed::rng(0, "a");
        let a = policy.act(&hist, &obs, ActMode::Deterministic, &mut rng);
        let b = policy.act(&hist, &obs, ActMode::Deterministic, &mut rng);
        assert_eq!(a, b);
        assert!(a > 0.0);

        let mut g = Graph::new(&policy.params);
        let enc = policy.encoder.unwrap();
        let mut s = enc.initial_state(&mut g, 1);
        for tok in &hist {
            let t = g.input(Tensor::row(tok));
            s = enc.advance(&mut g, s, t);
        }
        let o = g.input(Tensor::row(&obs));
        let ln = g.input(Tensor::zeros(1, policy.latent_dim));
        let an = g.input(Tensor::zeros(1, 1));
        let la = policy.act_graph(&mut g, Some(s), o, Some(ln), an);
        assert_eq!(g.value(la).item().exp(), a);
    }

    #[test]
    fn ratio_positive_for_extreme_outputs() {
        let (_, eps, _, mut policy) = setup(false);
        let last = policy.body.layers.last().unwrap().b;
        policy.params.value_mut(last).data[0] = -800.0;
        let r = policy.act(&[], &eps[0].obs[0], ActMode::Deterministic, &mut seed::rng(0, "b"));
        assert!(r >= 0.0 && r.is_finite());
        policy.params.value_mut(last).data[0] = -30.0;
        assert!(policy.act(&[], &eps[0].obs[0], ActMode::Deterministic, &mut seed::rng(0, "b")) > 0.0);
    }

    #[test]
    fn nll_at_mean_with_unit_sigma() {
        let (_, eps, world, mut policy) = setup(false);
        for id in policy.params.ids().collect::<Vec<_>>() {
            policy.params.value_mut(id).data.iter_mut().for_each(|x| *x = 0.0);
        }
        let last = policy.body.layers.last().unwrap().b;
        let target = eps[0].log_action[0];
        policy.params.value_mut(last).data[0] = target;
        let mut ep = eps[0].clone();
        ep.log_action.iter_mut().for_each(|a| *a = target);
        let bc = BcBatch::new(&world, vec![&ep], &mut seed::rng(0, "c")).unwrap();
        let mut g = Graph::new(&policy.params);
        let terms = causal_bc_loss(&mut g, &policy, &bc, 0.1);
        let want = 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((g.value(terms.nll).item() - want).abs() < 1e-12);
        assert_eq!(g.value(terms.kl).item(), 0.0);
    }

    #[test]
    fn kl_vanishes_when_target_equals_filter() {
        let (_, eps, world, policy) = setup(true);
        let mut bc = BcBatch::new(&world, eps.iter().collect(), &mut seed::rng(0, "d")).unwrap();
        let mut g = Graph::new(&policy.params);
        let (_, posts) = policy.encoder.unwrap().filter(&mut g, &bc.batch);
        bc.targets = (0..bc.batch.horizon()).map(|t| (g.value(posts[t].mean).clone(), g.value(posts[t].log_std).clone())).collect();
        let mut g = Graph::new(&policy.params);
        let terms = causal_bc_loss(&mut g, &policy, &bc, 0.1);
        assert!(g.value(terms.kl).item().abs() < 1e-12);
        assert!((g.value(terms.loss).item() - g.value(terms.nll).item()).abs() < 1e-12);
    }

    #[test]
    fn zero_bc_weight_is_the_rl_step() {
        let (_, eps, world, policy) = setup(true);
        let batch = Batch::new(eps.iter().collect()).unwrap();
        let adv = Tensor::from_vec(3, 4, (0..12).map(|i| (i as f64 * 0.37).sin()).collect());
        let rl = RlBatch { batch, advantages: adv };
        let bc = BcBatch::new(&world, eps.iter().collect(), &mut seed::rng(0, "e")).unwrap();
        let mut a = policy.clone();
        let mut b = policy.clone();
        policy_update(&mut a, Some(&rl), Some(&bc), UpdateWeights { rl: 1.0, bc: 0.0, beta2: 0.1 });
        policy_update(&mut b, Some(&rl), None, UpdateWeights { rl: 1.0, bc: 0.5, beta2: 0.1 });
        assert_eq!(a.params.flatten(), b.params.flatten());
    }

    #[test]
    fn plain_bc_is_the_weighted_objective_without_rl() {
        let (_, eps, world, policy) = setup(false);
        let batch = Batch::new(eps.iter().collect()).unwrap();
        let rl = RlBatch { batch, advantages: Tensor::filled(3, 4, 1.0) };
        let bc = BcBatch::new(&world, eps.iter().collect(), &mut seed::rng(0, "f")).unwrap();
        let mut a = policy.clone();
        let mut b = policy.clone();
        policy_update(&mut a, Some(&rl), Some(&bc), UpdateWeights { rl: 0.0, bc: 1.0, beta2: 0.0 });
        policy_update(&mut b, None, Some(&bc), UpdateWeights { rl: 1.0, bc: 1.0, beta2: 0.7 });
        assert_eq!(a.params.flatten(), b.params.flatten());
    }

    #[test]
    fn updates_leave_world_model_untouched() {
        let (days, eps, world, mut policy) = setup(true);
        let before = world.params.hash();
        let refs: Vec<&EnvironmentDay> = days.iter().collect();
        let recs = rollout_days(&policy, &refs, ActMode::MeanLatent, "p", &mut seed::rng(0, "g")).unwrap();
        assert!(recs.iter().all(|r| r.trajectory.len() == 4));
        let bc = BcBatch::new(&world, eps.iter().collect(), &mut seed::rng(0, "h")).unwrap();
        for _ in 0..3 {
            policy_update(&mut policy, None, Some(&bc), UpdateWeights::default());
        }
        assert_eq!(world.params.hash(), before);
    }

    #[test]
    fn lockstep_rollout_matches_single_step_acting() {
        let (days, _, _, policy) = setup(true);
        let refs: Vec<&EnvironmentDay> = days.iter().collect();
        let recs = rollout_days(&policy, &refs, ActMode::Deterministic, "p", &mut seed::rng(0, "i")).unwrap();
        for (day, rec) in days.iter().zip(&recs) {
            let mut hist = Vec::new();
            for s in &rec.trajectory.steps {
                let a = policy.act(&hist, &s.obs.features(), ActMode::Deterministic, &mut seed::rng(0, "j"));
                assert!((a - s.action).abs() < 1e-12);
                hist.push(step_token(day, s));
            }
        }
    }
}
