//! Latent world model.
//!
//! Each logged step becomes a token `[o_t, ln a_t, y_t]` where `y_t` are the
//! slot outcome statistics. A recurrent encoder summarises the tokens before
//! `t`; together with `o_t` it parameterises the filtering posterior
//! `q(w_t | h_t)`. The smoothing posterior adds a backward pass over the
//! remaining tokens through the same recurrent cell.
//!
//! Training minimises
//!
//! ```text
//! -log p(y_t | w_t, o_t, a_t) - [expert] log p(a_t | w_t) + beta * KL(q(w_t | h_t) || p(w_t | w_{t-1}, a_{t-1}))
//! ```
//!
//! and, on alternating minibatches, the least-squares fit of per-step rewards
//! `r(o_t, a_t, w)` to the episode reward, with `w` the day latent held fixed.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diff::{
    kl_graph, nll_graph, sample_graph, AdamConfig, GaussVar, GaussianHead, GaussianParams, Graph, GruCell, Linear, Mlp,
    ParamId, ParamSet, Tensor, Var, LOG_STD_MAX, LOG_STD_MIN,
};
use crate::env::{observation_from_prefix, EpisodeRecord, SlotStats, TrajectoryStep, OBS_DIM, ROI_CAP};
use crate::error::{Error, Result};
use crate::market::EnvironmentDay;

pub const OUTCOME_DIM: usize = 4;
pub const TOKEN_DIM: usize = OBS_DIM + 1 + OUTCOME_DIM;
/// Ratios below this are treated as this value in log space.
pub const RATIO_FLOOR: f64 = 1e-3;

pub fn log_ratio(a: f64) -> f64 {
    a.max(RATIO_FLOOR).ln()
}

/// Slot outcome `y_t`: win rate, utility and cost scaled so an evenly paced
/// day is O(1) per slot, and the slot ROI relative to the target.
pub fn outcome_features(day: &EnvironmentDay, st: &SlotStats) -> [f64; OUTCOME_DIM] {
    let h = day.slots() as f64;
    let (l, b) = (day.roi_target, day.budget);
    [
        if st.auctions > 0 { st.wins as f64 / st.auctions as f64 } else { 0.0 },
        st.utility * h / (l * b),
        st.cost * h / b,
        if st.cost > 0.0 { (st.utility / st.cost / l).min(ROI_CAP) } else { 0.0 },
    ]
}

/// Encoder token `[o_t, ln a_t, y_t]` for a logged step.
pub fn step_token(day: &EnvironmentDay, step: &TrajectoryStep) -> [f64; TOKEN_DIM] {
    let mut x = [0.0; TOKEN_DIM];
    x[..OBS_DIM].copy_from_slice(&step.obs.features());
    x[OBS_DIM] = log_ratio(step.action);
    x[OBS_DIM + 1..].copy_from_slice(&outcome_features(day, &step.slot));
    x
}

/// Network-ready view of one episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeFeatures {
    pub day_id: u32,
    pub expert: bool,
    /// `H + 1` observations, the last one after the final slot.
    pub obs: Vec<[f64; OBS_DIM]>,
    pub log_action: Vec<f64>,
    pub outcome: Vec<[f64; OUTCOME_DIM]>,
    /// Episode reward in units of `L * B`.
    pub reward_h: f64,
}

impl EpisodeFeatures {
    pub fn new(day: &EnvironmentDay, rec: &EpisodeRecord, expert: bool) -> Self {
        let steps = &rec.trajectory.steps;
        let mut obs: Vec<[f64; OBS_DIM]> = steps.iter().map(|s| s.obs.features()).collect();
        obs.push(observation_from_prefix(day, steps).features());
        let outcome = steps.iter().map(|s| outcome_features(day, &s.slot)).collect();
        EpisodeFeatures {
            day_id: rec.day_id,
            expert,
            obs,
            log_action: steps.iter().map(|s| log_ratio(s.action)).collect(),
            outcome,
            reward_h: rec.reward_h,
        }
    }

    pub fn horizon(&self) -> usize {
        self.log_action.len()
    }

    pub fn token(&self, t: usize) -> [f64; TOKEN_DIM] {
        let mut x = [0.0; TOKEN_DIM];
        x[..OBS_DIM].copy_from_slice(&self.obs[t]);
        x[OBS_DIM] = self.log_action[t];
        x[OBS_DIM + 1..].copy_from_slice(&self.outcome[t]);
        x
    }

    /// Copy with the first `t` steps kept and later steps replaced by zeros,
    /// used to probe causality.
    pub fn with_future_scrambled(&self, t: usize, value: f64) -> Self {
        let mut out = self.clone();
        for s in t..self.horizon() {
            out.log_action[s] = value;
            out.outcome[s] = [value; OUTCOME_DIM];
            out.obs[s + 1] = [value; OBS_DIM];
        }
        out
    }
}

/// Row-stacked slices of equally long episodes.
pub struct Batch<'a> {
    pub episodes: Vec<&'a EpisodeFeatures>,
}

impl<'a> Batch<'a> {
    pub fn new(episodes: Vec<&'a EpisodeFeatures>) -> Result<Self> {
        let h = episodes.first().map(|e| e.horizon()).ok_or_else(|| Error::Shape("empty batch".into()))?;
        if episodes.iter().any(|e| e.horizon() != h) {
            return Err(Error::Shape("episodes in a batch must share the horizon".into()));
        }
        Ok(Batch { episodes })
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.episodes[0].horizon()
    }

    fn stack<const D: usize>(&self, f: impl Fn(&EpisodeFeatures) -> [f64; D]) -> Tensor {
        let mut data = Vec::with_capacity(self.len() * D);
        for e in &self.episodes {
            data.extend_from_slice(&f(e));
        }
        Tensor::from_vec(self.len(), D, data)
    }

    pub fn obs(&self, t: usize) -> Tensor {
        self.stack(|e| e.obs[t])
    }

    pub fn log_action(&self, t: usize) -> Tensor {
        self.stack(|e| [e.log_action[t]])
    }

    pub fn outcome(&self, t: usize) -> Tensor {
        self.stack(|e| e.outcome[t])
    }

    pub fn token(&self, t: usize) -> Tensor {
        self.stack(|e| e.token(t))
    }

    pub fn expert_mask(&self) -> Tensor {
        self.stack(|e| [if e.expert { 1.0 } else { 0.0 }])
    }

    pub fn reward_h(&self) -> Tensor {
        self.stack(|e| [e.reward_h])
    }
}

/// Causal encoder: recurrent summary of past tokens plus a Gaussian head on
/// `[state, o_t]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Encoder {
    pub gru: GruCell,
    pub head: GaussianHead,
}

impl Encoder {
    pub fn new<R: Rng>(ps: &mut ParamSet, name: &str, hidden: usize, latent: usize, rng: &mut R) -> Self {
        Encoder {
            gru: GruCell::new(ps, &format!("{name}.gru"), TOKEN_DIM, hidden, rng),
            head: GaussianHead::new(ps, &format!("{name}.q"), hidden + OBS_DIM, latent, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.gru.hidden
    }

    pub fn initial_state(&self, g: &mut Graph, n: usize) -> Var {
        g.input(Tensor::zeros(n, self.gru.hidden))
    }

    pub fn advance(&self, g: &mut Graph, state: Var, token: Var) -> Var {
        self.gru.step(g, token, state)
    }

    pub fn posterior(&self, g: &mut Graph, state: Var, obs: Var) -> GaussVar {
        let x = g.concat(&[state, obs]);
        self.head.forward(g, x)
    }

    /// Recurrent states `s_0..=s_H` and filtering posteriors at every `t`.
    pub fn filter(&self, g: &mut Graph, batch: &Batch) -> (Vec<Var>, Vec<GaussVar>) {
        let h = batch.horizon();
        let mut states = vec![self.initial_state(g, batch.len())];
        let mut posts = Vec::with_capacity(h + 1);
        for t in 0..=h {
            let obs = g.input(batch.obs(t));
            posts.push(self.posterior(g, states[t], obs));
            if t < h {
                let tok = g.input(batch.token(t));
                let next = self.advance(g, states[t], tok);
                states.push(next);
            }
        }
        (states, posts)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldModelConfig {
    pub latent_dim: usize,
    pub hidden: usize,
    pub beta: f64,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub grad_clip: f64,
}

impl Default for WorldModelConfig {
    fn default() -> Self {
        WorldModelConfig {
            latent_dim: 8,
            hidden: 32,
            beta: 1e-2,
            adam: AdamConfig { lr: 3e-3, ..AdamConfig::default() },
            batch_size: 16,
            grad_clip: 10.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InferenceMode {
    Filtering,
    Smoothing,
}

#[derive(Clone, Debug)]
pub struct WorldModel {
    pub cfg: WorldModelConfig,
    pub params: ParamSet,
    pub encoder: Encoder,
    smooth_head: GaussianHead,
    prior_mean: ParamId,
    prior_log_std: ParamId,
    dyn_body: Linear,
    dyn_head: GaussianHead,
    obs_model: Mlp,
    act_model: Mlp,
    reward: Mlp,
}

/// Scalar pieces of the latent-model objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VibTerms {
    pub loss: Var,
    pub observation_nll: Var,
    pub action_nll: Var,
    pub kl: Var,
}

impl WorldModel {
    pub fn new<R: Rng>(cfg: WorldModelConfig, rng: &mut R) -> Self {
        let (d, hid) = (cfg.latent_dim, cfg.hidden);
        let mut ps = ParamSet::new();
        let encoder = Encoder::new(&mut ps, "enc", hid, d, rng);
        let smooth_head = GaussianHead::new(&mut ps, "smooth", 2 * hid + OBS_DIM, d, rng);
        let prior_mean = ps.add("prior0.mean", Tensor::zeros(1, d));
        let prior_log_std = ps.add("prior0.log_std", Tensor::zeros(1, d));
        let dyn_body = Linear::new(&mut ps, "dyn.body", d + 1, hid, rng);
        let dyn_head = GaussianHead::new(&mut ps, "dyn.head", hid, d, rng);
        let obs_model = Mlp::new(&mut ps, "obs", &[d + OBS_DIM + 1, hid, OUTCOME_DIM], rng);
        let act_model = Mlp::new(&mut ps, "act", &[d, hid, 2], rng);
        let reward = Mlp::new(&mut ps, "reward", &[OBS_DIM + 1 + d, hid, 1], rng);
        WorldModel { cfg, params: ps, encoder, smooth_head, prior_mean, prior_log_std, dyn_body, dyn_head, obs_model, act_model, reward }
    }

    pub fn latent_dim(&self) -> usize {
        self.cfg.latent_dim
    }

    /// Learned belief before any step, repeated over `n` rows.
    pub fn prior0(&self, g: &mut Graph, n: usize) -> GaussVar {
        let zeros = g.input(Tensor::zeros(n, self.cfg.latent_dim));
        let m = g.param(self.prior_mean);
        let s = g.param(self.prior_log_std);
        let mean = g.add_row(zeros, m);
        let raw = g.add_row(zeros, s);
        let log_std = g.clamp(raw, LOG_STD_MIN, LOG_STD_MAX);
        GaussVar { mean, log_std }
    }

    /// `p(w_t | w_{t-1}, a_{t-1})`.
    pub fn dynamics(&self, g: &mut Graph, omega_prev: Var, log_action_prev: Var) -> GaussVar {
        let x = g.concat(&[omega_prev, log_action_prev]);
        let hdn = self.dyn_body.forward(g, x);
        let hdn = g.tanh(hdn);
        self.dyn_head.forward(g, hdn)
    }

    /// Smoothing posteriors for `t < H` given the forward states.
    pub fn smooth(&self, g: &mut Graph, batch: &Batch, states: &[Var]) -> Vec<GaussVar> {
        let h = batch.horizon();
        let mut back = vec![self.encoder.initial_state(g, batch.len()); h + 1];
        for t in (0..h).rev() {
            let tok = g.input(batch.token(t));
            back[t] = self.encoder.advance(g, back[t + 1], tok);
        }
        (0..h)
            .map(|t| {
                let obs = g.input(batch.obs(t));
                let x = g.concat(&[states[t], obs, back[t]]);
                self.smooth_head.forward(g, x)
            })
            .collect()
    }

    fn action_dist(&self, g: &mut Graph, omega: Var) -> GaussVar {
        let out = self.act_model.forward(g, omega);
        let mean = g.slice(out, 0, 1);
        let raw = g.slice(out, 1, 2);
        let log_std = g.clamp(raw, LOG_STD_MIN, LOG_STD_MAX);
        GaussVar { mean, log_std }
    }

    /// Latent objective averaged over episodes and steps. `noise[t]` is the
    /// `N x D` standard-normal draw used to sample `w_t`.
    pub fn vib_loss(&self, g: &mut Graph, batch: &Batch, noise: &[Tensor], beta: f64) -> VibTerms {
        let h = batch.horizon();
        let n = batch.len();
        let (_, posts) = self.encoder.filter(g, batch);
        let mask = g.input(batch.expert_mask());
        let mut obs_terms = Vec::with_capacity(h);
        let mut act_terms = Vec::with_capacity(h);
        let mut kl_terms = Vec::with_capacity(h);
        let mut prev: Option<(Var, Var)> = None;
        for t in 0..h {
            let eps = g.input(noise[t].clone());
            let omega = sample_graph(g, posts[t], eps);
            let obs = g.input(batch.obs(t));
            let la = g.input(batch.log_action(t));
            let y = g.input(batch.outcome(t));
            let x = g.concat(&[omega, obs, la]);
            let pred = self.obs_model.forward(g, x);
            let diff = g.sub(y, pred);
            let sq = g.square(diff);
            let sq = g.sum_cols(sq);
            let obs_nll = g.scale(sq, 0.5);
            let obs_nll = g.add_scalar(obs_nll, 0.5 * OUTCOME_DIM as f64 * 1.8378770664093453);
            obs_terms.push(obs_nll);
            let adist = self.action_dist(g, omega);
            let a_nll = nll_graph(g, adist, la);
            act_terms.push(g.mul(a_nll, mask));
            let prior = match prev {
                None => self.prior0(g, n),
                Some((w, a)) => self.dynamics(g, w, a),
            };
            kl_terms.push(kl_graph(g, posts[t], prior));
            prev = Some((omega, la));
        }
        let denom = (n * h) as f64;
        let total = |g: &mut Graph, parts: &[Var]| {
            let cat = g.concat(parts);
            let s = g.sum(cat);
            g.scale(s, 1.0 / denom)
        };
        let observation_nll = total(g, &obs_terms);
        let action_nll = total(g, &act_terms);
        let kl = total(g, &kl_terms);
        let recon = g.add(observation_nll, action_nll);
        let bkl = g.scale(kl, beta);
        let loss = g.add(recon, bkl);
        VibTerms { loss, observation_nll, action_nll, kl }
    }

    /// Per-step surrogate reward `r(o, a, w)` as an `N x 1` column.
    pub fn reward_step(&self, g: &mut Graph, obs: Var, log_action: Var, omega: Var) -> Var {
        let x = g.concat(&[obs, log_action, omega]);
        self.reward.forward(g, x)
    }

    /// `sum_t r(o_t, a_t, w)` for every episode, `N x 1`.
    pub fn reward_sum(&self, g: &mut Graph, batch: &Batch, omega: Var) -> Var {
        let mut parts = Vec::with_capacity(batch.horizon());
        for t in 0..batch.horizon() {
            let obs = g.input(batch.obs(t));
            let la = g.input(batch.log_action(t));
            parts.push(self.reward_step(g, obs, la, omega));
        }
        let cat = g.concat(&parts);
        g.sum_cols(cat)
    }

    /// Mean squared error between `r^H` and summed surrogate rewards.
    pub fn reward_loss(&self, g: &mut Graph, batch: &Batch, omega: Var) -> Var {
        let pred = self.reward_sum(g, batch, omega);
        let target = g.input(batch.reward_h());
        let d = g.sub(target, pred);
        let sq = g.square(d);
        g.mean(sq)
    }

    /// Filtering or smoothing belief at step `t` (`t <= H` for filtering). With
    /// no history the filtering belief depends only on the fixed initial
    /// observation, so it acts as a learned step-0 prior.
    pub fn infer_latent(&self, ep: &EpisodeFeatures, t: usize, mode: InferenceMode) -> Result<GaussianParams> {
        let batch = Batch::new(vec![ep])?;
        let mut g = Graph::new(&self.params);
        match mode {
            InferenceMode::Filtering => {
                if t > ep.horizon() {
                    return Err(Error::InvalidSlot { slot: t, slots: ep.horizon() });
                }
                let (_, posts) = self.encoder.filter(&mut g, &batch);
                Ok(posts[t].to_params(&g, 0))
            }
            InferenceMode::Smoothing => {
                if t >= ep.horizon() {
                    return Err(Error::InvalidSlot { slot: t, slots: ep.horizon() });
                }
                let (states, _) = self.encoder.filter(&mut g, &batch);
                let posts = self.smooth(&mut g, &batch, &states);
                Ok(posts[t].to_params(&g, 0))
            }
        }
    }

    /// Day latents: filtered posterior means after the final step, one row
    /// per episode.
    pub fn day_latents(&self, episodes: &[&EpisodeFeatures]) -> Result<Tensor> {
        let batch = Batch::new(episodes.to_vec())?;
        let mut g = Graph::new(&self.params);
        let (_, posts) = self.encoder.filter(&mut g, &batch);
        Ok(g.value(posts[batch.horizon()].mean).clone())
    }

    /// Chain the dynamics means from `w_0` through `actions`.
    pub fn latent_prior_rollout(&self, omega0: &[f64], actions: &[f64]) -> Vec<GaussianParams> {
        let mut out = Vec::with_capacity(actions.len());
        let mut w = omega0.to_vec();
        for &a in actions {
            let mut g = Graph::new(&self.params);
            let wv = g.input(Tensor::row(&w));
            let av = g.input(Tensor::scalar(log_ratio(a)));
            let p = self.dynamics(&mut g, wv, av).to_params(&g, 0);
            w = p.mean.clone();
            out.push(p);
        }
        out
    }

    /// Surrogate rewards per step for one episode under latent `omega`.
    pub fn step_rewards(&self, ep: &EpisodeFeatures, omega: &[f64]) -> Result<Vec<f64>> {
        let batch = Batch::new(vec![ep])?;
        let mut g = Graph::new(&self.params);
        let w = g.input(Tensor::row(omega));
        Ok((0..ep.horizon())
            .map(|t| {
                let obs = g.input(batch.obs(t));
                let la = g.input(batch.log_action(t));
                let r = self.reward_step(&mut g, obs, la, w);
                g.value(r).item()
            })
            .collect())
    }

    fn noise<R: Rng>(&self, n: usize, h: usize, rng: &mut R) -> Vec<Tensor> {
        (0..h)
            .map(|_| Tensor::from_vec(n, self.cfg.latent_dim, (0..n * self.cfg.latent_dim).map(|_| rng.sample(StandardNormal)).collect()))
            .collect()
    }

    /// One latent-model step on `batch`. Returns the loss before the update.
    pub fn vib_step<R: Rng>(&mut self, batch: &Batch, rng: &mut R) -> f64 {
        let noise = self.noise(batch.len(), batch.horizon(), rng);
        let mut g = Graph::new(&self.params);
        let terms = self.vib_loss(&mut g, batch, &noise, self.cfg.beta);
        let loss = g.value(terms.loss).item();
        let mut grads = g.backward(terms.loss).into_params();
        ParamSet::clip_grads(&mut grads, self.cfg.grad_clip);
        self.params.adam_step(&grads, &self.cfg.adam);
        loss
    }

    /// One reward-surrogate step. `omega` holds the fixed day latent of each
    /// episode row, so no gradient reaches the encoder.
    pub fn reward_step_update(&mut self, batch: &Batch, omega: &Tensor) -> f64 {
        let mut g = Graph::new(&self.params);
        let w = g.input(omega.clone());
        let l = self.reward_loss(&mut g, batch, w);
        let loss = g.value(l).item();
        let mut grads = g.backward(l).into_params();
        ParamSet::clip_grads(&mut grads, self.cfg.grad_clip);
        self.params.adam_step(&grads, &self.cfg.adam);
        loss
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    pub vib: Vec<f64>,
    pub reward: Vec<f64>,
}

/// Interleave latent-model and reward-surrogate minibatches 1:1. Reward
/// episodes use the latent of their day's expert episode, recomputed from the
/// current encoder every 20 steps.
pub fn fit_world_model<R: Rng>(
    model: &mut WorldModel,
    latent_data: &[EpisodeFeatures],
    reward_data: &[EpisodeFeatures],
    experts: &[EpisodeFeatures],
    steps: usize,
    rng: &mut R,
) -> Result<FitTrace> {
    let mut trace = FitTrace::default();
    if latent_data.is_empty() || reward_data.is_empty() {
        return Err(Error::Shape("world model needs latent and reward data".into()));
    }
    let bs = model.cfg.batch_size;
    let refresh = 20;
    let mut latents = day_latent_map(model, experts)?;
    for step in 0..steps {
        if step > 0 && step % refresh == 0 {
            latents = day_latent_map(model, experts)?;
        }
        let pick: Vec<&EpisodeFeatures> = (0..bs.min(latent_data.len())).map(|_| &latent_data[rng.random_range(0..latent_data.len())]).collect();
        trace.vib.push(model.vib_step(&Batch::new(pick)?, rng));
        let pick: Vec<&EpisodeFeatures> = (0..bs.min(reward_data.len())).map(|_| &reward_data[rng.random_range(0..reward_data.len())]).collect();
        let omega = latent_rows(&latents, &pick)?;
        trace.reward.push(model.reward_step_update(&Batch::new(pick)?, &omega));
    }
    Ok(trace)
}

/// Day latents from each day's expert episode, keyed by day id.
pub fn day_latent_map(model: &WorldModel, experts: &[EpisodeFeatures]) -> Result<Vec<(u32, Vec<f64>)>> {
    if experts.is_empty() {
        return Ok(Vec::new());
    }
    let refs: Vec<&EpisodeFeatures> = experts.iter().collect();
    let t = model.day_latents(&refs)?;
    Ok(experts.iter().enumerate().map(|(i, e)| (e.day_id, t.row_slice(i).to_vec())).collect())
}

pub fn latent_rows(latents: &[(u32, Vec<f64>)], episodes: &[&EpisodeFeatures]) -> Result<Tensor> {
    let rows: Vec<Vec<f64>> = episodes
        .iter()
        .map(|e| {
            latents
                .iter()
                .find(|(d, _)| *d == e.day_id)
                .map(|(_, w)| w.clone())
                .ok_or_else(|| Error::Runtime(format!("no latent for day {}", e.day_id)))
        })
        .collect::<Result<_>>()?;
    Ok(Tensor::from_rows(&rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::kl_diag_gaussians;
    use crate::env::replay_sequence;
    use crate::market::{generate_dataset, DayGroup, GeneratorConfig, Mechanism, Split};
    use crate::seed;

    fn episodes(h: usize) -> (Vec<EnvironmentDay>, Vec<EpisodeFeatures>) {
        let cfg = GeneratorConfig {
            auctions_per_day: 60 * h,
            slots: h,
            groups: vec![
                DayGroup { split: Split::Train, mechanism: Mechanism::Gsp, days: 1, k_range: (0.0, 0.0) },
                DayGroup { split: Split::Train, mechanism: Mechanism::Mix, days: 1, k_range: (0.2, 0.8) },
            ],
            ..GeneratorConfig::default()
        };
        let days = generate_dataset(&cfg).unwrap();
        let eps = days
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let ratios: Vec<f64> = (0..h).map(|t| 0.6 + 0.1 * t as f64 + 0.2 * i as f64).collect();
                EpisodeFeatures::new(d, &replay_sequence(d, "x", &ratios).unwrap(), i == 0)
            })
            .collect();
        (days, eps)
    }

    fn model() -> WorldModel {
        let cfg = WorldModelConfig { latent_dim: 3, hidden: 5, ..WorldModelConfig::default() };
        WorldModel::new(cfg, &mut seed::rng(1, "test/world"))
    }

    #[test]
    fn filtering_ignores_the_future() {
        let (_, eps) = episodes(5);
        let m = model();
        for t in 0..=5 {
            let a = m.infer_latent(&eps[0], t, InferenceMode::Filtering).unwrap();
            let b = m.infer_latent(&eps[0].with_future_scrambled(t, 3.7), t, InferenceMode::Filtering).unwrap();
            assert_eq!(a, b, "t = {t}");
        }
        let s0 = m.infer_latent(&eps[0], 1, InferenceMode::Smoothing).unwrap();
        let s1 = m.infer_latent(&eps[0].with_future_scrambled(3, 3.7), 1, InferenceMode::Smoothing).unwrap();
        assert_ne!(s0, s1);
    }

    #[test]
    fn beta_zero_leaves_reconstruction_only() {
        let (_, eps) = episodes(3);
        let m = model();
        let batch = Batch::new(eps.iter().collect()).unwrap();
        let mut rng = seed::rng(2, "noise");
        let noise = m.noise(2, 3, &mut rng);
        let mut g = Graph::new(&m.params);
        let terms = m.vib_loss(&mut g, &batch, &noise, 0.0);
        let recon = g.value(terms.observation_nll).item() + g.value(terms.action_nll).item();
        assert_eq!(g.value(terms.loss).item(), recon);
    }

    #[test]
    fn single_step_loss_by_hand() {
        let (_, eps) = episodes(1);
        let m = model();
        let ep = &eps[0];
        assert!(ep.expert);
        let batch = Batch::new(vec![ep]).unwrap();
        let noise = vec![Tensor::zeros(1, 3)];
        let mut g = Graph::new(&m.params);
        let terms = m.vib_loss(&mut g, &batch, &noise, 0.3);
        let (_, posts) = m.encoder.filter(&mut g, &batch);
        let q = posts[0].to_params(&g, 0);
        let p0 = m.prior0(&mut g, 1).to_params(&g, 0);
        // zero noise samples the posterior mean
        let w = g.input(Tensor::row(&q.mean));
        let obs = g.input(batch.obs(0));
        let la = g.input(batch.log_action(0));
        let x = g.concat(&[w, obs, la]);
        let pred = m.obs_model.forward(&mut g, x);
        let pred = g.value(pred).clone();
        let y = &ep.outcome[0];
        let obs_nll: f64 = (0..OUTCOME_DIM).map(|i| 0.5 * (y[i] - pred.data[i]).powi(2)).sum::<f64>()
            + 0.5 * OUTCOME_DIM as f64 * (2.0 * std::f64::consts::PI).ln();
        let ad = m.action_dist(&mut g, w).to_params(&g, 0);
        let act_nll = -ad.log_prob(&[ep.log_action[0]]);
        let kl = kl_diag_gaussians(&q, &p0).unwrap();
        let expected = obs_nll + act_nll + 0.3 * kl;
        assert!((g.value(terms.loss).item() - expected).abs() < 1e-12);
    }

    #[test]
    fn reward_loss_hand_case() {
        let (_, eps) = episodes(2);
        let mut m = model();
        let mut ep = eps[0].clone();
        ep.reward_h = 10.0;
        for id in m.params.ids().collect::<Vec<_>>() {
            if m.params.name(id).starts_with("reward.") {
                let v = m.params.value_mut(id);
                v.data.iter_mut().for_each(|x| *x = 0.0);
            }
        }
        // r = 3 + tanh(time_frac) / tanh(0.5): 3 at t = 0 and 4 at t = 1
        let w0 = m.params.find("reward.0.w").unwrap();
        m.params.value_mut(w0).data[0] = 1.0;
        let w1 = m.params.find("reward.1.w").unwrap();
        m.params.value_mut(w1).data[0] = 1.0 / 0.5f64.tanh();
        let b1 = m.params.find("reward.1.b").unwrap();
        m.params.value_mut(b1).data[0] = 3.0;
        let r = m.step_rewards(&ep, &[0.1, 0.2, 0.3]).unwrap();
        assert!((r[0] - 3.0).abs() < 1e-12 && (r[1] - 4.0).abs() < 1e-12, "{r:?}");
        let batch = Batch::new(vec![&ep]).unwrap();
        let mut g = Graph::new(&m.params);
        let w = g.input(Tensor::row(&[0.1, 0.2, 0.3]));
        let l = m.reward_loss(&mut g, &batch, w);
        assert!((g.value(l).item() - 9.0).abs() < 1e-12);
    }

    #[test]
    fn prior_rollout_chains_dynamics() {
        let m = model();
        assert!(m.latent_prior_rollout(&[0.0; 3], &[]).is_empty());
        let out = m.latent_prior_rollout(&[0.1, -0.2, 0.3], &[0.8, 1.3]);
        let one = m.latent_prior_rollout(&[0.1, -0.2, 0.3], &[0.8]);
        assert_eq!(out[0], one[0]);
        let two = m.latent_prior_rollout(&one[0].mean, &[1.3]);
        assert_eq!(out[1], two[0]);
    }
}
