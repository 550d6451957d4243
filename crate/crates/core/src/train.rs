//! Training drivers for every algorithm and evaluation of trained agents.
//!
//! Learned algorithms share one loop. Per round: sample a batch of training
//! days, roll the policy out on them, pick the latent each rollout is
//! relabelled under (the teacher's `w'` or the day's own `w~`), then take
//! `learner_steps` weighted policy steps. The world model is pre-trained on
//! expert and exploration episodes and refreshed with policy rollouts every
//! `world_refresh_every` rounds.

use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{cem_rollouts, pid_rollout, CemConfig, CemState, PidConfig};
use crate::diff::{TrainingState, Tensor};
use crate::env::{replay_sequence, EpisodeRecord};
use crate::error::{Error, Result};
use crate::expert::DayExpert;
use crate::market::EnvironmentDay;
use crate::metrics::{score_day, DayScore, MetricsConfig, RunScores};
use crate::miro::{pair_latents, rl_batch, teacher_search, AdversarialPair, LearnerConfig, TeacherConfig, ValueNet};
use crate::policy::{policy_update, rollout_days, ActMode, BcBatch, LossParts, Policy, PolicyConfig, UpdateWeights};
use crate::seed;
use crate::world::{day_latent_map, fit_world_model, EpisodeFeatures, WorldModel, WorldModelConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algo {
    Mirocl,
    MiroP,
    MiroD,
    Erm,
    Bc,
    Pid,
    Cem,
}

impl Algo {
    pub const ALL: [Algo; 7] = [Algo::Mirocl, Algo::MiroP, Algo::MiroD, Algo::Erm, Algo::Bc, Algo::Pid, Algo::Cem];

    pub fn as_str(self) -> &'static str {
        match self {
            Algo::Mirocl => "mirocl",
            Algo::MiroP => "miro-p",
            Algo::MiroD => "miro-d",
            Algo::Erm => "erm",
            Algo::Bc => "bc",
            Algo::Pid => "pid",
            Algo::Cem => "cem",
        }
    }

    pub fn is_learned(self) -> bool {
        !matches!(self, Algo::Pid | Algo::Cem)
    }

    pub fn uses_latent(self) -> bool {
        matches!(self, Algo::Mirocl | Algo::MiroP)
    }

    pub fn uses_teacher(self) -> bool {
        matches!(self, Algo::Mirocl | Algo::MiroP)
    }

    pub fn uses_rl(self) -> bool {
        matches!(self, Algo::Mirocl | Algo::MiroP | Algo::Erm)
    }

    /// Loss weights, with the configured BC weight and `beta2` for MiROCL.
    pub fn weights(self, cfg: &TrainConfig) -> UpdateWeights {
        match self {
            Algo::Mirocl => UpdateWeights { rl: 1.0, bc: cfg.bc_weight, beta2: cfg.beta2 },
            Algo::MiroP | Algo::Erm => UpdateWeights { rl: 1.0, bc: 0.0, beta2: 0.0 },
            Algo::MiroD | Algo::Bc => UpdateWeights { rl: 0.0, bc: 1.0, beta2: 0.0 },
            Algo::Pid | Algo::Cem => UpdateWeights { rl: 0.0, bc: 0.0, beta2: 0.0 },
        }
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algo::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Usage(format!("unknown algorithm {s:?}; expected one of mirocl, miro-p, miro-d, erm, bc, pid, cem")))
    }
}

impl std::fmt::Display for Algo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub world: WorldModelConfig,
    /// Warm-up steps of the world model before policy training.
    pub world_steps: usize,
    pub world_refresh_every: usize,
    pub world_refresh_steps: usize,
    /// Most recent policy rollouts kept for world-model refreshes.
    pub world_buffer: usize,
    /// Perturbed expert episodes per training day for world-model coverage.
    pub exploration_episodes: usize,
    /// Std of the per-slot log-ratio perturbation of exploration episodes.
    pub exploration_noise: f64,
    /// Std of the per-episode log-ratio shift of exploration episodes.
    pub exploration_shift: f64,
    pub policy: PolicyConfig,
    pub teacher: TeacherConfig,
    pub learner: LearnerConfig,
    pub bc_weight: f64,
    pub beta2: f64,
    pub rounds: usize,
    pub learner_steps: usize,
    pub checkpoint_every: usize,
    pub pid: PidConfig,
    pub cem: CemConfig,
    pub metrics: MetricsConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            world: WorldModelConfig::default(),
            world_steps: 400,
            world_refresh_every: 10,
            world_refresh_steps: 20,
            world_buffer: 256,
            exploration_episodes: 6,
            exploration_noise: 0.3,
            exploration_shift: 0.5,
            policy: PolicyConfig::default(),
            teacher: TeacherConfig::default(),
            learner: LearnerConfig::default(),
            bc_weight: 0.5,
            beta2: 0.1,
            rounds: 300,
            learner_steps: 2,
            checkpoint_every: 25,
            pid: PidConfig::default(),
            cem: CemConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.teacher.validate()?;
        self.metrics.validate()?;
        if self.teacher.batch_days == 0 || self.world.batch_size == 0 {
            return Err(Error::InvalidConfig("batch sizes must be positive".into()));
        }
        if self.world.latent_dim == 0 || self.world.hidden == 0 || self.policy.hidden == 0 {
            return Err(Error::InvalidConfig("network widths must be positive".into()));
        }
        Ok(())
    }
}

/// Training days with their oracle solutions.
pub struct TrainingSet<'a> {
    pub days: Vec<&'a EnvironmentDay>,
    pub experts: Vec<&'a DayExpert>,
    /// Expert demonstrations of days with a nonzero oracle value.
    pub demos: Vec<EpisodeFeatures>,
}

impl<'a> TrainingSet<'a> {
    pub fn new(days: Vec<&'a EnvironmentDay>, all_experts: &'a [DayExpert]) -> Result<Self> {
        if days.is_empty() {
            return Err(Error::Dependency("no training days".into()));
        }
        let experts: Vec<&DayExpert> = days
            .iter()
            .map(|d| all_experts.iter().find(|e| e.day_id == d.day_id).ok_or_else(|| Error::Dependency(format!("no expert for day {}", d.day_id))))
            .collect::<Result<_>>()?;
        let demos: Vec<EpisodeFeatures> = days
            .iter()
            .zip(&experts)
            .filter(|(_, e)| e.value() > 0.0)
            .map(|(d, e)| EpisodeFeatures::new(d, &e.demonstration, true))
            .collect();
        if demos.is_empty() {
            return Err(Error::Runtime("every training day has an empty oracle solution".into()));
        }
        Ok(TrainingSet { days, experts, demos })
    }

    pub fn day(&self, day_id: u32) -> Option<&'a EnvironmentDay> {
        self.days.iter().copied().find(|d| d.day_id == day_id)
    }

    /// Mean expert log ratio over demonstrated slots with a nonzero ratio.
    pub fn mean_expert_log_ratio(&self) -> f64 {
        let xs: Vec<f64> =
            self.experts.iter().flat_map(|e| e.demonstration.trajectory.steps.iter()).filter(|s| s.action > 0.0).map(|s| s.action.ln()).collect();
        if xs.is_empty() {
            0.0
        } else {
            xs.iter().sum::<f64>() / xs.len() as f64
        }
    }

    /// Expert ratios perturbed in log space, replayed with budget enforcement.
    pub fn exploration<R: Rng>(&self, per_day: usize, noise: f64, shift: f64, rng: &mut R) -> Result<Vec<EpisodeFeatures>> {
        let base = self.mean_expert_log_ratio();
        let mut out = Vec::with_capacity(per_day * self.days.len());
        for (day, e) in self.days.iter().zip(&self.experts) {
            for _ in 0..per_day {
                let s: f64 = shift * rng.sample::<f64, _>(rand_distr::StandardNormal);
                let ratios: Vec<f64> = e
                    .solution
                    .ratios
                    .iter()
                    .map(|&a| {
                        let la = if a > 0.0 { a.ln() } else { base };
                        (la + s + noise * rng.sample::<f64, _>(rand_distr::StandardNormal)).exp()
                    })
                    .collect();
                out.push(EpisodeFeatures::new(day, &replay_sequence(day, "explore", &ratios)?, false));
            }
        }
        Ok(out)
    }
}

/// Untrained world model for `seed`.
pub fn initial_world(cfg: &TrainConfig, seed: u64) -> WorldModel {
    WorldModel::new(cfg.world, &mut seed::rng(seed, "init/world"))
}

/// Expert demonstrations plus seeded exploration episodes.
pub fn world_pool(cfg: &TrainConfig, data: &TrainingSet, seed: u64) -> Result<Vec<EpisodeFeatures>> {
    let mut rng = seed::rng(seed, "data/exploration");
    let explore = data.exploration(cfg.exploration_episodes, cfg.exploration_noise, cfg.exploration_shift, &mut rng)?;
    let mut pool = data.demos.clone();
    pool.extend(explore);
    Ok(pool)
}

/// Pre-train the world model on expert and exploration episodes.
pub fn pretrain_world(cfg: &TrainConfig, data: &TrainingSet, seed: u64) -> Result<(WorldModel, Vec<EpisodeFeatures>, crate::world::FitTrace)> {
    let mut world = initial_world(cfg, seed);
    let pool = world_pool(cfg, data, seed)?;
    let mut rng = seed::rng(seed, "train/world");
    let trace = fit_world_model(&mut world, &pool, &pool, &data.demos, cfg.world_steps, &mut rng)?;
    Ok((world, pool, trace))
}

/// One structured record per training round.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub regret_tilde: f64,
    pub regret_prime: f64,
    pub latent_shift: f64,
    pub surrogate_return: f64,
    pub value_loss: f64,
    pub loss: LossParts,
    /// Mean true episode reward of the round's rollouts, units of `L * B`.
    pub rollout_reward: f64,
    /// Mean TACR of the round's rollouts against the oracle.
    pub rollout_tacr: f64,
    pub world_loss: Option<f64>,
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResumeState {
    pub next_round: usize,
    pub policy: TrainingState,
    pub value: TrainingState,
    pub world: TrainingState,
    /// `(day_id, ratios)` of buffered policy rollouts, replayed on load.
    pub buffer: Vec<(u32, Vec<f64>)>,
}

pub struct Learner<'a> {
    pub algo: Algo,
    pub seed: u64,
    pub cfg: TrainConfig,
    pub data: &'a TrainingSet<'a>,
    pub world: WorldModel,
    pub policy: Policy,
    pub value: ValueNet,
    /// World-model training pool: demonstrations plus exploration.
    pub pool: Vec<EpisodeFeatures>,
    /// Recent policy rollouts added at refreshes, as `(day_id, ratios)`.
    pub buffer: Vec<(u32, Vec<f64>)>,
    pub next_round: usize,
}

impl<'a> Learner<'a> {
    /// Fresh learner around a pre-trained world model.
    pub fn new(algo: Algo, seed: u64, cfg: TrainConfig, data: &'a TrainingSet<'a>, world: WorldModel, pool: Vec<EpisodeFeatures>) -> Result<Self> {
        if !algo.is_learned() {
            return Err(Error::Usage(format!("{algo} is not a learned algorithm")));
        }
        cfg.validate()?;
        let mut rng = seed::rng(seed, "init/policy");
        let pcfg = PolicyConfig { use_latent: algo.uses_latent(), ..cfg.policy };
        let policy = Policy::new(pcfg, &world, data.mean_expert_log_ratio(), &mut rng);
        let value = ValueNet::new(world.latent_dim(), cfg.learner.value_hidden, cfg.learner.value_adam, &mut seed::rng(seed, "init/value"));
        Ok(Learner { algo, seed, cfg, data, world, policy, value, pool, buffer: Vec::new(), next_round: 0 })
    }

    pub fn resume_state(&self) -> ResumeState {
        ResumeState {
            next_round: self.next_round,
            policy: self.policy.params.training_state(),
            value: self.value.params.training_state(),
            world: self.world.params.training_state(),
            buffer: self.buffer.clone(),
        }
    }

    pub fn restore(&mut self, st: &ResumeState) -> Result<()> {
        self.policy.params.restore_training_state(&st.policy)?;
        self.value.params.restore_training_state(&st.value)?;
        self.world.params.restore_training_state(&st.world)?;
        self.buffer = st.buffer.clone();
        self.next_round = st.next_round;
        Ok(())
    }

    fn buffered_episodes(&self) -> Result<Vec<EpisodeFeatures>> {
        self.buffer
            .iter()
            .map(|(id, ratios)| {
                let day = self.data.day(*id).ok_or_else(|| Error::Runtime(format!("buffered day {id} is not a training day")))?;
                Ok(EpisodeFeatures::new(day, &replay_sequence(day, "buffer", ratios)?, false))
            })
            .collect()
    }

    fn oracle_value(&self, day_id: u32) -> f64 {
        self.data.experts.iter().find(|e| e.day_id == day_id).map_or(0.0, |e| e.value())
    }

    fn pick_days<R: Rng>(&self, rng: &mut R) -> Vec<&'a EnvironmentDay> {
        let n = self.cfg.teacher.batch_days.min(self.data.days.len());
        sample(rng, self.data.days.len(), n).into_iter().map(|i| self.data.days[i]).collect()
    }

    fn rollout_features(&self, days: &[&EnvironmentDay], rng: &mut impl Rng) -> Result<(Vec<EpisodeRecord>, Vec<EpisodeFeatures>)> {
        let mode = if self.algo.uses_latent() { ActMode::MeanLatent } else { ActMode::Stochastic };
        let recs = rollout_days(&self.policy, days, mode, self.algo.as_str(), rng)?;
        let feats = days.iter().zip(&recs).map(|(d, r)| EpisodeFeatures::new(d, r, false)).collect();
        Ok((recs, feats))
    }

    /// Adversarial (or identity) latents for a batch of rollouts.
    fn latents(&self, feats: &[EpisodeFeatures]) -> Result<Vec<AdversarialPair>> {
        let experts: Vec<EpisodeFeatures> = feats
            .iter()
            .map(|f| {
                let day = self.data.day(f.day_id).expect("rollout on a training day");
                let e = self.data.experts.iter().find(|e| e.day_id == f.day_id).expect("expert for training day");
                EpisodeFeatures::new(day, &e.demonstration, true)
            })
            .collect();
        let tilde = day_latent_map(&self.world, &experts)?;
        let items: Vec<(&EpisodeFeatures, &EpisodeFeatures, Vec<f64>)> =
            experts.iter().zip(feats).zip(&tilde).map(|((e, p), (_, w))| (e, p, w.clone())).collect();
        let teacher = if self.algo.uses_teacher() { self.cfg.teacher } else { TeacherConfig { steps: 0, ..self.cfg.teacher } };
        teacher_search(&self.world, &items, &teacher)
    }

    /// Run one round and return its metrics.
    pub fn round(&mut self) -> Result<RoundMetrics> {
        let r = self.next_round;
        let mut rng = seed::rng(self.seed, &format!("train/{}/round/{r}", self.algo));
        let days = self.pick_days(&mut rng);
        let w = self.algo.weights(&self.cfg);
        let mut m = RoundMetrics { round: r, ..RoundMetrics::default() };
        let mut last_recs = Vec::new();
        for k in 0..self.cfg.learner_steps.max(1) {
            let bc = if w.bc != 0.0 {
                let n = self.cfg.teacher.batch_days.min(self.data.demos.len());
                let picks: Vec<&EpisodeFeatures> = sample(&mut rng, self.data.demos.len(), n).into_iter().map(|i| &self.data.demos[i]).collect();
                Some(BcBatch::new(&self.world, picks, &mut rng)?)
            } else {
                None
            };
            let loss = if self.algo.uses_rl() {
                let (recs, feats) = self.rollout_features(&days, &mut rng)?;
                let pairs = self.latents(&feats)?;
                let refs: Vec<&EpisodeFeatures> = feats.iter().collect();
                let omega: Tensor = pair_latents(&pairs, &refs)?;
                let (rl, ret, vloss) = rl_batch(&self.world, &mut self.value, refs, &omega)?;
                if k == 0 {
                    let n = pairs.len() as f64;
                    m.regret_tilde = pairs.iter().map(|p| p.regret_tilde).sum::<f64>() / n;
                    m.regret_prime = pairs.iter().map(|p| p.regret_prime).sum::<f64>() / n;
                    m.latent_shift = pairs
                        .iter()
                        .map(|p| p.omega_prime.iter().zip(&p.omega_tilde).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
                        .sum::<f64>()
                        / n;
                    m.surrogate_return = ret;
                    m.value_loss = vloss;
                }
                last_recs = recs;
                policy_update(&mut self.policy, Some(&rl), bc.as_ref(), w)
            } else {
                policy_update(&mut self.policy, None, bc.as_ref(), w)
            };
            m.loss = loss;
        }
        if last_recs.is_empty() {
            last_recs = self.rollout_features(&days, &mut rng)?.0;
        }
        m.rollout_reward = last_recs.iter().map(|r| r.reward_h).sum::<f64>() / last_recs.len() as f64;
        m.rollout_tacr = last_recs
            .iter()
            .zip(&days)
            .map(|(rec, d)| score_day(d, &rec.outcome, self.oracle_value(d.day_id), &self.cfg.metrics).tacr)
            .sum::<f64>()
            / last_recs.len() as f64;
        if self.algo.uses_rl() && self.cfg.world_refresh_every > 0 && (r + 1) % self.cfg.world_refresh_every == 0 {
            for rec in &last_recs {
                self.buffer.push((rec.day_id, rec.trajectory.actions()));
            }
            let excess = self.buffer.len().saturating_sub(self.cfg.world_buffer);
            self.buffer.drain(..excess);
            let mut data = self.pool.clone();
            data.extend(self.buffered_episodes()?);
            let mut wrng = seed::rng(self.seed, &format!("train/{}/world/{r}", self.algo));
            let trace = fit_world_model(&mut self.world, &data, &data, &self.data.demos, self.cfg.world_refresh_steps, &mut wrng)?;
            m.world_loss = trace.vib.last().copied();
        }
        self.next_round += 1;
        Ok(m)
    }
}

/// A trained agent ready for evaluation.
pub enum Agent {
    Policy(Box<Policy>),
    Pid(PidConfig),
    Cem { cfg: CemConfig, init: CemState, history: Vec<u32> },
}

/// Baseline agents fitted from training data.
pub fn baseline_agent(algo: Algo, cfg: &TrainConfig, data: &TrainingSet) -> Result<Agent> {
    let base = data.mean_expert_log_ratio();
    match algo {
        Algo::Pid => Ok(Agent::Pid(PidConfig { base_log_ratio: base, ..cfg.pid })),
        Algo::Cem => {
            let from = data.days.len().saturating_sub(cfg.cem.trailing_days);
            Ok(Agent::Cem { cfg: cfg.cem, init: CemState::new(base, &cfg.cem), history: data.days[from..].iter().map(|d| d.day_id).collect() })
        }
        _ => Err(Error::Usage(format!("{algo} is a learned algorithm"))),
    }
}

/// Evaluate on `days` (deterministic actions for learned policies). `lookup`
/// resolves any day id, including CEM history days, with its oracle value.
pub fn evaluate<'d>(
    agent: &Agent,
    days: &[&'d EnvironmentDay],
    lookup: &dyn Fn(u32) -> Option<(&'d EnvironmentDay, f64)>,
    metrics: &MetricsConfig,
    seed: u64,
) -> Result<(Vec<EpisodeRecord>, Vec<DayScore>)> {
    let mut rng = seed::rng(seed, "eval");
    let recs = match agent {
        Agent::Policy(p) => rollout_days(p, days, ActMode::Deterministic, "eval", &mut rng)?,
        Agent::Pid(cfg) => days.iter().map(|d| pid_rollout(*cfg, d)).collect::<Result<_>>()?,
        Agent::Cem { cfg, init, history } => {
            let hist: Vec<(&EnvironmentDay, f64)> =
                history.iter().map(|id| lookup(*id).ok_or_else(|| Error::Dependency(format!("CEM history day {id} missing")))).collect::<Result<_>>()?;
            let play: Vec<(&EnvironmentDay, f64)> =
                days.iter().map(|d| lookup(d.day_id).ok_or_else(|| Error::Dependency(format!("oracle for day {} missing", d.day_id)))).collect::<Result<_>>()?;
            cem_rollouts(*init, &hist, &play, cfg, metrics, &mut rng)?
        }
    };
    let scores = days
        .iter()
        .zip(&recs)
        .map(|(d, r)| {
            let u_star = lookup(d.day_id).map(|(_, u)| u).ok_or_else(|| Error::Dependency(format!("oracle for day {} missing", d.day_id)))?;
            Ok(score_day(d, &r.outcome, u_star, metrics))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((recs, scores))
}

pub fn run_scores(algo: Algo, seed: u64, scores: Vec<DayScore>) -> RunScores {
    RunScores { algo: algo.as_str().to_string(), seed, scores }
}

/// Log ratio of a policy's deterministic action, for probes.
pub fn deterministic_log_ratio(policy: &Policy, history: &[[f64; crate::world::TOKEN_DIM]], obs: &[f64; crate::env::OBS_DIM]) -> f64 {
    policy.act(history, obs, ActMode::Deterministic, &mut seed::rng(0, "probe")).ln()
}
