//! Non-learned comparison policies: a PID controller on the log bid ratio and
//! a cross-entropy search over constant ratios.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::env::{replay_sequence, rollout, EpisodeRecord, SlotObservation};
use crate::error::{Error, Result};
use crate::market::EnvironmentDay;
use crate::metrics::{score_day, MetricsConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PidConfig {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// The integral accumulator is clamped to `[-bound, bound]`.
    pub integral_bound: f64,
    /// Log ratio the controller starts from and corrects around.
    pub base_log_ratio: f64,
}

impl Default for PidConfig {
    fn default() -> Self {
        PidConfig { kp: 0.2, ki: 0.02, kd: 0.0, integral_bound: 5.0, base_log_ratio: 0.0 }
    }
}

/// Error signals, positive when the controller may bid higher.
///
/// * ROI: `roi / L - 1`, active once anything has been spent.
/// * Pacing: `t / H - spent / B`, the lag behind a linear spend schedule.
///
/// The smaller of the two drives the update.
pub fn pid_error(obs: &SlotObservation) -> f64 {
    let pacing = obs.time_frac - obs.cost;
    if obs.cost > 0.0 {
        (obs.roi - 1.0).min(pacing)
    } else {
        pacing
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PidState {
    pub cfg: PidConfig,
    pub integral: f64,
    pub prev_error: f64,
    pub log_ratio: f64,
}

impl PidState {
    pub fn new(cfg: PidConfig) -> Self {
        PidState { cfg, integral: 0.0, prev_error: 0.0, log_ratio: cfg.base_log_ratio }
    }

    /// Positional update `u = base + kp*e + ki*sum(e) + kd*(e - e_prev)`.
    pub fn update(&mut self, error: f64) -> f64 {
        let b = self.cfg.integral_bound;
        self.integral = (self.integral + error).clamp(-b, b);
        let d = error - self.prev_error;
        self.prev_error = error;
        self.log_ratio = self.cfg.base_log_ratio + self.cfg.kp * error + self.cfg.ki * self.integral + self.cfg.kd * d;
        self.log_ratio.exp()
    }
}

pub fn pid_step(state: &mut PidState, obs: &SlotObservation) -> f64 {
    state.update(pid_error(obs))
}

pub fn pid_rollout(cfg: PidConfig, day: &EnvironmentDay) -> Result<EpisodeRecord> {
    let mut st = PidState::new(cfg);
    rollout(day, "pid", |obs, _| Ok(pid_step(&mut st, obs)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CemConfig {
    pub population: usize,
    pub elite_frac: f64,
    pub init_std: f64,
    pub std_floor: f64,
    /// Refits per re-planning.
    pub iterations: usize,
    /// Number of most recent days scored when re-planning.
    pub trailing_days: usize,
}

impl Default for CemConfig {
    fn default() -> Self {
        CemConfig { population: 32, elite_frac: 0.2, init_std: 2.0, std_floor: 1e-3, iterations: 10, trailing_days: 5 }
    }
}

/// Gaussian over a constant log ratio.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CemState {
    pub mean: f64,
    pub std: f64,
    pub iteration: usize,
}

impl CemState {
    pub fn new(mean: f64, cfg: &CemConfig) -> Self {
        CemState { mean, std: cfg.init_std.max(cfg.std_floor), iteration: 0 }
    }

    pub fn sample<R: Rng>(&self, cfg: &CemConfig, rng: &mut R) -> Vec<f64> {
        (0..cfg.population).map(|_| self.mean + self.std * rng.sample::<f64, _>(StandardNormal)).collect()
    }
}

/// Refit the Gaussian to the elite fraction of `candidates`.
pub fn cem_iterate(state: &CemState, candidates: &[f64], scores: &[f64], cfg: &CemConfig) -> Result<CemState> {
    if candidates.len() != cfg.population || scores.len() != cfg.population {
        return Err(Error::Shape(format!(
            "population of {} needs as many candidates and scores, got {} and {}",
            cfg.population,
            candidates.len(),
            scores.len()
        )));
    }
    let elite = ((cfg.elite_frac * cfg.population as f64).round() as usize).clamp(1, cfg.population);
    let mut order: Vec<usize> = (0..cfg.population).collect();
    // stable sort: equal scores keep sampling order
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let top: Vec<f64> = order[..elite].iter().map(|&i| candidates[i]).collect();
    let mean = top.iter().sum::<f64>() / elite as f64;
    let var = top.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / elite as f64;
    let std = var.sqrt().max(cfg.std_floor);
    if !(mean.is_finite() && std.is_finite()) {
        return Ok(CemState { iteration: state.iteration + 1, ..*state });
    }
    Ok(CemState { mean, std, iteration: state.iteration + 1 })
}

/// Score a constant log ratio on `days` by average TACR contribution.
/// Each entry pairs a day with its oracle utility.
pub fn constant_ratio_score(log_ratio: f64, days: &[(&EnvironmentDay, f64)], metrics: &MetricsConfig) -> Result<f64> {
    if days.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (day, u_star) in days {
        let rec = replay_sequence(day, "cem", &[log_ratio.exp()])?;
        total += score_day(day, &rec.outcome, *u_star, metrics).tacr;
    }
    Ok(total / days.len() as f64)
}

/// Re-plan the constant ratio from the trailing days' scores.
pub fn cem_plan<R: Rng>(state: CemState, trailing: &[(&EnvironmentDay, f64)], cfg: &CemConfig, metrics: &MetricsConfig, rng: &mut R) -> Result<CemState> {
    let mut st = state;
    for _ in 0..cfg.iterations {
        let cands = st.sample(cfg, rng);
        let scores = cands.iter().map(|&x| constant_ratio_score(x, trailing, metrics)).collect::<Result<Vec<_>>>()?;
        st = cem_iterate(&st, &cands, &scores, cfg)?;
    }
    Ok(st)
}

/// Play days in order. Before each day the ratio is re-planned on the
/// `trailing_days` most recent days of `history` followed by the days already
/// played, whose oracle values become known in hindsight.
pub fn cem_rollouts<R: Rng>(
    init: CemState,
    history: &[(&EnvironmentDay, f64)],
    days: &[(&EnvironmentDay, f64)],
    cfg: &CemConfig,
    metrics: &MetricsConfig,
    rng: &mut R,
) -> Result<Vec<EpisodeRecord>> {
    let mut seen: Vec<(&EnvironmentDay, f64)> = history.to_vec();
    let mut st = init;
    let mut out = Vec::with_capacity(days.len());
    for &(day, u_star) in days {
        let from = seen.len().saturating_sub(cfg.trailing_days);
        st = cem_plan(CemState::new(st.mean, cfg), &seen[from..], cfg, metrics, rng)?;
        out.push(replay_sequence(day, "cem", &[st.mean.exp()])?);
        seen.push((day, u_star));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn obs(time_frac: f64, roi: f64, cost: f64) -> SlotObservation {
        SlotObservation { time_frac, win_rate: 0.0, roi, utility: 0.0, cost, budget_remaining: 1.0 - cost, prev_ratio: 1.0 }
    }

    #[test]
    fn zero_error_keeps_ratio() {
        let mut st = PidState::new(PidConfig { base_log_ratio: 0.3, ..PidConfig::default() });
        let r = pid_step(&mut st, &obs(0.0, 5.0, 0.0));
        assert_eq!(r, 0.3f64.exp());
    }

    #[test]
    fn low_roi_lowers_ratio() {
        let cfg = PidConfig { kp: 0.5, ki: 0.0, kd: 0.0, ..PidConfig::default() };
        let mut st = PidState::new(cfg);
        let r = pid_step(&mut st, &obs(0.5, 0.8, 0.5));
        assert!(r < 1.0);
    }

    #[test]
    fn recurrence_by_hand() {
        let cfg = PidConfig { kp: 0.2, ki: 0.02, kd: 0.1, integral_bound: 10.0, base_log_ratio: 0.0 };
        let mut st = PidState::new(cfg);
        let e = -0.5;
        let expected = [0.2 * e + 0.02 * e + 0.1 * e, 0.2 * e + 0.02 * 2.0 * e, 0.2 * e + 0.02 * 3.0 * e];
        for want in expected {
            let r = st.update(e);
            assert!((r.ln() - want).abs() < 1e-12);
        }
    }

    #[test]
    fn integral_is_clamped() {
        let mut st = PidState::new(PidConfig { integral_bound: 1.0, ..PidConfig::default() });
        for _ in 0..50 {
            st.update(-1.0);
        }
        assert_eq!(st.integral, -1.0);
    }

    #[test]
    fn elite_fraction_one_gives_sample_mean() {
        let cfg = CemConfig { population: 4, elite_frac: 1.0, ..CemConfig::default() };
        let st = CemState::new(0.0, &cfg);
        let c = [1.0, 2.0, 3.0, 6.0];
        let next = cem_iterate(&st, &c, &[0.0, 1.0, 2.0, 3.0], &cfg).unwrap();
        assert!((next.mean - 3.0).abs() < 1e-12);
        assert!(cem_iterate(&st, &c[..3], &[0.0; 3], &cfg).is_err());
    }

    #[test]
    fn converges_on_quadratic() {
        let cfg = CemConfig::default();
        let run = || {
            let mut rng = seed::rng(3, "test/cem");
            let mut st = CemState::new(0.0, &cfg);
            for _ in 0..30 {
                let c = st.sample(&cfg, &mut rng);
                let s: Vec<f64> = c.iter().map(|x| -(x - 2.0) * (x - 2.0)).collect();
                st = cem_iterate(&st, &c, &s, &cfg).unwrap();
                assert!(st.mean.is_finite() && st.std >= cfg.std_floor);
            }
            st
        };
        let st = run();
        assert!((st.mean - 2.0).abs() < 0.05, "{}", st.mean);
        assert_eq!(st, run());
    }
}
