//! Minimax-regret machinery: surrogate regret, the penalised teacher search
//! over latents, and the learner's policy-gradient step on relabelled
//! rewards.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{AdamConfig, Graph, Mlp, ParamSet, Tensor, Var};
use crate::env::OBS_DIM;
use crate::error::{Error, Result};
use crate::policy::{policy_update, LossParts, Policy, RlBatch, UpdateWeights};
use crate::world::{Batch, EpisodeFeatures, WorldModel};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretEstimate {
    pub expert_return: f64,
    pub policy_return: f64,
    pub regret: f64,
}

/// `sum_t r(o_t^xi, a_t^xi, w) - sum_t r(o_t^pi, a_t^pi, w)` and its gradient
/// with respect to `w`.
pub fn surrogate_regret(world: &WorldModel, expert: &EpisodeFeatures, policy: &EpisodeFeatures, omega: &[f64]) -> Result<(RegretEstimate, Vec<f64>)> {
    if omega.len() != world.latent_dim() {
        return Err(Error::Shape(format!("latent has {} entries, model uses {}", omega.len(), world.latent_dim())));
    }
    let mut g = Graph::new(&world.params);
    let w = g.input(Tensor::row(omega));
    let e = world.reward_sum(&mut g, &Batch::new(vec![expert])?, w);
    let p = world.reward_sum(&mut g, &Batch::new(vec![policy])?, w);
    let diff = g.sub(e, p);
    let reg = g.sum(diff);
    let est = RegretEstimate { expert_return: g.value(e).item(), policy_return: g.value(p).item(), regret: g.value(reg).item() };
    let grads = g.backward(reg);
    let grad = grads.of(w).map_or_else(|| vec![0.0; omega.len()], |t| t.data.clone());
    Ok((est, grad))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherConfig {
    pub step_size: f64,
    /// Weight of the distance penalty, the dual of the ball radius.
    pub penalty: f64,
    pub steps: usize,
    pub batch_days: usize,
    /// Smoothing of the Euclidean norm at the search origin.
    pub smoothing: f64,
    pub max_halvings: usize,
    /// Entropy temperature. Recorded only; the search does not use it.
    pub temperature: f64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig { step_size: 0.05, penalty: 1.0, steps: 10, batch_days: 16, smoothing: 1e-3, max_halvings: 5, temperature: 0.0 }
    }
}

impl TeacherConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size >= 0.0 && self.penalty >= 0.0 && self.smoothing > 0.0) {
            return Err(Error::InvalidConfig("teacher needs step_size >= 0, penalty >= 0, smoothing > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversarialPair {
    pub day_id: u32,
    pub omega_tilde: Vec<f64>,
    pub omega_prime: Vec<f64>,
    /// Penalised objective at every accepted point, starting at `omega_tilde`.
    pub trace: Vec<f64>,
    pub regret_tilde: f64,
    pub regret_prime: f64,
}

fn penalty(omega: &[f64], origin: &[f64], eps: f64) -> (f64, Vec<f64>) {
    let d: Vec<f64> = omega.iter().zip(origin).map(|(a, b)| a - b).collect();
    let norm = (d.iter().map(|x| x * x).sum::<f64>() + eps * eps).sqrt();
    (norm, d.iter().map(|x| x / norm).collect())
}

/// Penalised objective `Reg(w) - lambda * sqrt(|w - w~|^2 + eps^2)` and its gradient.
pub fn penalized_objective(world: &WorldModel, expert: &EpisodeFeatures, policy: &EpisodeFeatures, omega: &[f64], origin: &[f64], cfg: &TeacherConfig) -> Result<(f64, f64, Vec<f64>)> {
    let (est, grad) = surrogate_regret(world, expert, policy, omega)?;
    let (norm, ngrad) = penalty(omega, origin, cfg.smoothing);
    let value = est.regret - cfg.penalty * norm;
    let g = grad.iter().zip(&ngrad).map(|(r, n)| r - cfg.penalty * n).collect();
    Ok((value, est.regret, g))
}

/// Gradient ascent from each day latent with greedy acceptance: a step that
/// lowers the penalised objective is rejected and the step size halved.
pub fn teacher_search(world: &WorldModel, items: &[(&EpisodeFeatures, &EpisodeFeatures, Vec<f64>)], cfg: &TeacherConfig) -> Result<Vec<AdversarialPair>> {
    cfg.validate()?;
    items
        .iter()
        .map(|(expert, policy, origin)| {
            let mut omega = origin.clone();
            let (mut value, regret_tilde, mut grad) = penalized_objective(world, expert, policy, &omega, origin, cfg)?;
            let mut regret = regret_tilde;
            let mut trace = vec![value];
            let mut eta = cfg.step_size;
            for _ in 0..cfg.steps {
                if eta == 0.0 {
                    break;
                }
                let mut accepted = false;
                for _ in 0..=cfg.max_halvings {
                    let cand: Vec<f64> = omega.iter().zip(&grad).map(|(w, g)| w + eta * g).collect();
                    let (v, r, gr) = penalized_objective(world, expert, policy, &cand, origin, cfg)?;
                    if v >= value {
                        (omega, value, regret, grad) = (cand, v, r, gr);
                        trace.push(value);
                        accepted = true;
                        break;
                    }
                    eta *= 0.5;
                }
                if !accepted {
                    break;
                }
            }
            Ok(AdversarialPair {
                day_id: expert.day_id,
                omega_tilde: origin.clone(),
                omega_prime: omega,
                trace,
                regret_tilde,
                regret_prime: regret,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub value_hidden: usize,
    pub value_adam: AdamConfig,
    pub weights: UpdateWeights,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            value_hidden: 32,
            value_adam: AdamConfig { lr: 3e-3, ..AdamConfig::default() },
            weights: UpdateWeights { rl: 1.0, bc: 0.0, beta2: 0.0 },
        }
    }
}

/// State-value baseline `V(o_t, w)`.
#[derive(Clone, Debug)]
pub struct ValueNet {
    pub params: ParamSet,
    pub mlp: Mlp,
    pub adam: AdamConfig,
}

impl ValueNet {
    pub fn new<R: Rng>(latent_dim: usize, hidden: usize, adam: AdamConfig, rng: &mut R) -> Self {
        let mut params = ParamSet::new();
        let mlp = Mlp::new(&mut params, "v", &[OBS_DIM + latent_dim, hidden, 1], rng);
        ValueNet { params, mlp, adam }
    }

    /// Predictions (`N x H`) and their mean squared error against `returns`.
    pub fn loss(&self, g: &mut Graph, batch: &Batch, omega: &Tensor, returns: &Tensor) -> (Var, Var) {
        let w = g.input(omega.clone());
        let cols: Vec<_> = (0..batch.horizon())
            .map(|t| {
                let o = g.input(batch.obs(t));
                let x = g.concat(&[o, w]);
                self.mlp.forward(g, x)
            })
            .collect();
        let v = g.concat(&cols);
        let target = g.input(returns.clone());
        let d = g.sub(target, v);
        let sq = g.square(d);
        (v, g.mean(sq))
    }

    /// Fit one step towards `returns` (`N x H`) and return the predictions
    /// made before the step.
    pub fn fit_step(&mut self, batch: &Batch, omega: &Tensor, returns: &Tensor) -> (Tensor, f64) {
        let (pred, mut grads, loss) = {
            let mut g = Graph::new(&self.params);
            let (v, l) = self.loss(&mut g, batch, omega, returns);
            (g.value(v).clone(), g.backward(l).into_params(), g.value(l).item())
        };
        ParamSet::clip_grads(&mut grads, 10.0);
        self.params.adam_step(&grads, &self.adam);
        (pred, loss)
    }
}

/// Per-step surrogate rewards `r(o_t, a_t, w)` with one latent row per episode.
pub fn relabel_rewards(world: &WorldModel, batch: &Batch, omega: &Tensor) -> Tensor {
    let mut g = Graph::new(&world.params);
    let w = g.input(omega.clone());
    let cols: Vec<_> = (0..batch.horizon())
        .map(|t| {
            let o = g.input(batch.obs(t));
            let la = g.input(batch.log_action(t));
            world.reward_step(&mut g, o, la, w)
        })
        .collect();
    let r = g.concat(&cols);
    g.value(r).clone()
}

/// Reward-to-go along each row.
pub fn returns_to_go(rewards: &Tensor) -> Tensor {
    let mut out = rewards.clone();
    for r in 0..out.rows {
        let row = &mut out.data[r * out.cols..(r + 1) * out.cols];
        for t in (0..row.len().saturating_sub(1)).rev() {
            row[t] += row[t + 1];
        }
    }
    out
}

/// Standardised `G - V`; all zeros when every advantage is equal.
pub fn normalized_advantages(returns: &Tensor, values: &Tensor) -> Tensor {
    let adv = returns.zip(values, |g, v| g - v);
    let n = adv.len() as f64;
    let mean = adv.sum() / n;
    let var = adv.data.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    if var <= 1e-24 {
        return Tensor::zeros(adv.rows, adv.cols);
    }
    let sd = var.sqrt();
    adv.map(|a| (a - mean) / sd)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LearnerStats {
    pub mean_return: f64,
    pub value_loss: f64,
    pub loss: LossParts,
}

/// Build the policy-gradient batch for rollouts relabelled under `omega`.
pub fn rl_batch<'a>(world: &WorldModel, value: &mut ValueNet, rollouts: Vec<&'a EpisodeFeatures>, omega: &Tensor) -> Result<(RlBatch<'a>, f64, f64)> {
    let batch = Batch::new(rollouts)?;
    let rewards = relabel_rewards(world, &batch, omega);
    let returns = returns_to_go(&rewards);
    let (values, vloss) = value.fit_step(&batch, omega, &returns);
    let advantages = normalized_advantages(&returns, &values);
    let mean_return = (0..returns.rows).map(|r| returns.get(r, 0)).sum::<f64>() / returns.rows as f64;
    Ok((RlBatch { batch, advantages }, mean_return, vloss))
}

/// One learner step: maximise relabelled surrogate return on fresh rollouts.
/// `omega` holds the adversarial latent of each rollout's day.
pub fn learner_update(policy: &mut Policy, value: &mut ValueNet, world: &WorldModel, rollouts: Vec<&EpisodeFeatures>, omega: &Tensor, cfg: &LearnerConfig) -> Result<LearnerStats> {
    let (rl, mean_return, value_loss) = rl_batch(world, value, rollouts, omega)?;
    let w = UpdateWeights { bc: 0.0, ..cfg.weights };
    let loss = policy_update(policy, Some(&rl), None, w);
    Ok(LearnerStats { mean_return, value_loss, loss })
}

/// Rows of `omega_prime` ordered like `rollouts`.
pub fn pair_latents(pairs: &[AdversarialPair], rollouts: &[&EpisodeFeatures]) -> Result<Tensor> {
    let rows: Vec<Vec<f64>> = rollouts
        .iter()
        .map(|e| {
            pairs
                .iter()
                .find(|p| p.day_id == e.day_id)
                .map(|p| p.omega_prime.clone())
                .ok_or_else(|| Error::Runtime(format!("no adversarial latent for day {}", e.day_id)))
        })
        .collect::<Result<_>>()?;
    Ok(Tensor::from_rows(&rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::replay_sequence;
    use crate::market::{generate_dataset, DayGroup, GeneratorConfig, Mechanism, Split};
    use crate::policy::PolicyConfig;
    use crate::seed;
    use crate::world::WorldModelConfig;

    fn setup() -> (Vec<EpisodeFeatures>, Vec<EpisodeFeatures>, WorldModel) {
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
        let play = |scale: f64, expert: bool| -> Vec<EpisodeFeatures> {
            days.iter()
                .enumerate()
                .map(|(i, d)| {
                    let r: Vec<f64> = (0..h).map(|t| scale * (0.7 + 0.05 * (t + i) as f64)).collect();
                    EpisodeFeatures::new(d, &replay_sequence(d, "x", &r).unwrap(), expert)
                })
                .collect()
        };
        let world = WorldModel::new(WorldModelConfig { latent_dim: 3, hidden: 6, ..WorldModelConfig::default() }, &mut seed::rng(5, "test/miro"));
        (play(1.0, true), play(0.6, false), world)
    }

    fn items<'a>(experts: &'a [EpisodeFeatures], rollouts: &'a [EpisodeFeatures]) -> Vec<(&'a EpisodeFeatures, &'a EpisodeFeatures, Vec<f64>)> {
        experts.iter().zip(rollouts).enumerate().map(|(i, (e, p))| (e, p, vec![0.3 * i as f64, -0.2, 0.1])).collect()
    }

    #[test]
    fn identical_episodes_have_zero_regret() {
        let (experts, _, world) = setup();
        let (est, grad) = surrogate_regret(&world, &experts[0], &experts[0], &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(est.regret, 0.0);
        assert!(grad.iter().all(|g| g.abs() < 1e-12), "{grad:?}");
        assert!(surrogate_regret(&world, &experts[0], &experts[0], &[0.1]).is_err());
    }

    #[test]
    fn regret_is_the_difference_of_relabelled_sums() {
        let (experts, rollouts, world) = setup();
        let w = [0.4, -0.1, 0.2];
        let (est, _) = surrogate_regret(&world, &experts[1], &rollouts[1], &w).unwrap();
        let sum = |e: &EpisodeFeatures| relabel_rewards(&world, &Batch::new(vec![e]).unwrap(), &Tensor::row(&w)).sum();
        assert!((est.expert_return - sum(&experts[1])).abs() < 1e-12);
        assert!((est.policy_return - sum(&rollouts[1])).abs() < 1e-12);
        assert!((est.regret - (est.expert_return - est.policy_return)).abs() < 1e-12);
    }

    #[test]
    fn no_steps_keep_the_origin() {
        let (experts, rollouts, world) = setup();
        let it = items(&experts, &rollouts);
        for cfg in [TeacherConfig { steps: 0, ..TeacherConfig::default() }, TeacherConfig { step_size: 0.0, ..TeacherConfig::default() }] {
            for p in teacher_search(&world, &it, &cfg).unwrap() {
                assert_eq!(p.omega_prime, p.omega_tilde);
                assert_eq!(p.regret_prime, p.regret_tilde);
                assert_eq!(p.trace.len(), 1);
            }
        }
    }

    #[test]
    fn accepted_path_never_decreases() {
        let (experts, rollouts, world) = setup();
        let it = items(&experts, &rollouts);
        let cfg = TeacherConfig { step_size: 0.5, penalty: 0.1, steps: 20, ..TeacherConfig::default() };
        for p in teacher_search(&world, &it, &cfg).unwrap() {
            assert!(p.trace.windows(2).all(|w| w[1] >= w[0]), "{:?}", p.trace);
            assert!(p.trace[p.trace.len() - 1] <= p.regret_prime);
        }
    }

    #[test]
    fn unpenalized_search_raises_regret() {
        let (experts, rollouts, world) = setup();
        let it = items(&experts, &rollouts);
        let cfg = TeacherConfig { penalty: 0.0, step_size: 0.2, ..TeacherConfig::default() };
        for p in teacher_search(&world, &it, &cfg).unwrap() {
            assert!(p.regret_prime >= p.regret_tilde);
        }
    }

    #[test]
    fn returns_accumulate_backwards() {
        let r = Tensor::from_vec(2, 3, vec![1.0, 2.0, 3.0, 0.5, 0.0, -1.0]);
        assert_eq!(returns_to_go(&r).data, vec![6.0, 5.0, 3.0, -0.5, -1.0, -1.0]);
    }

    #[test]
    fn advantages_are_standardised() {
        let g = Tensor::from_vec(2, 2, vec![1.0, 2.0, 3.0, 6.0]);
        let a = normalized_advantages(&g, &Tensor::zeros(2, 2));
        assert!(a.sum().abs() < 1e-12);
        assert!((a.data.iter().map(|x| x * x).sum::<f64>() / 4.0 - 1.0).abs() < 1e-12);
        assert!(normalized_advantages(&g, &g).data.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn learner_step_is_the_rl_policy_step() {
        let (_, rollouts, world) = setup();
        let mut rng = seed::rng(2, "test/learner");
        let policy = Policy::new(PolicyConfig { hidden: 8, ..PolicyConfig::default() }, &world, -0.2, &mut rng);
        let value = ValueNet::new(3, 5, AdamConfig::default(), &mut rng);
        let omega = Tensor::from_rows(&[vec![0.1, 0.2, 0.3], vec![0.0, 0.0, 0.0], vec![-0.3, 0.5, 0.1]]);
        let refs: Vec<&EpisodeFeatures> = rollouts.iter().collect();
        let cfg = LearnerConfig { weights: UpdateWeights { rl: 1.0, bc: 0.7, beta2: 0.2 }, ..LearnerConfig::default() };
        let (mut pa, mut va) = (policy.clone(), value.clone());
        let stats = learner_update(&mut pa, &mut va, &world, refs.clone(), &omega, &cfg).unwrap();
        let (mut pb, mut vb) = (policy.clone(), value.clone());
        let (rl, ret, _) = rl_batch(&world, &mut vb, refs, &omega).unwrap();
        policy_update(&mut pb, Some(&rl), None, UpdateWeights { rl: 1.0, bc: 0.0, beta2: 0.2 });
        assert_eq!(pa.params.flatten(), pb.params.flatten());
        assert_eq!(va.params.flatten(), vb.params.flatten());
        assert_eq!(stats.mean_return, ret);
        assert_ne!(pa.params.flatten(), policy.params.flatten());
    }

    #[test]
    fn latents_follow_rollout_order() {
        let pair = |day_id: u32, w: f64| AdversarialPair {
            day_id,
            omega_tilde: vec![0.0],
            omega_prime: vec![w],
            trace: vec![0.0],
            regret_tilde: 0.0,
            regret_prime: 0.0,
        };
        let (_, rollouts, _) = setup();
        let pairs: Vec<AdversarialPair> = rollouts.iter().rev().map(|e| pair(e.day_id, e.day_id as f64)).collect();
        let refs: Vec<&EpisodeFeatures> = rollouts.iter().collect();
        let t = pair_latents(&pairs, &refs).unwrap();
        assert_eq!(t.data, rollouts.iter().map(|e| e.day_id as f64).collect::<Vec<_>>());
        assert!(pair_latents(&pairs[..1], &refs).is_err());
    }
}
