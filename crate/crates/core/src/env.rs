//! Slot-wise episodic bidding environment.
//!
//! One episode replays one day. At each of the `H` slots the agent picks a
//! bid ratio; every auction in the slot is bid at `ratio * utility_estimate`.
//! The budget is enforced inside the slot: the first auction whose charge
//! would push spend past `B` is not won and the rest of the day is forfeited.
//!
//! Observations only carry statistics of past slots. Ratios of cumulative
//! quantities are normalised by the day's constraints:
//! `roi = (U / C) / L` (capped at [`ROI_CAP`], and equal to the cap while no
//! cost has been incurred), `utility = U / (L * B)` and `cost = C / B`.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{price_auction, EnvironmentDay};

pub const OBS_DIM: usize = 7;
pub const ROI_CAP: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotObservation {
    pub time_frac: f64,
    pub win_rate: f64,
    pub roi: f64,
    pub utility: f64,
    pub cost: f64,
    pub budget_remaining: f64,
    pub prev_ratio: f64,
}

impl SlotObservation {
    /// Network input: the seven statistics with the previous ratio in log space.
    pub fn features(&self) -> [f64; OBS_DIM] {
        [
            self.time_frac,
            self.win_rate,
            self.roi,
            self.utility,
            self.cost,
            self.budget_remaining,
            self.prev_ratio.max(1e-3).ln(),
        ]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SlotStats {
    pub auctions: usize,
    pub wins: usize,
    pub utility: f64,
    pub realized: f64,
    pub cost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub obs: SlotObservation,
    pub action: f64,
    /// Utility gained in the slot, in units of `L * B`.
    pub reward: f64,
    pub slot: SlotStats,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// The history `h_t`: every step strictly before `t`.
    pub fn prefix(&self, t: usize) -> &[TrajectoryStep] {
        &self.steps[..t.min(self.steps.len())]
    }

    pub fn actions(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.action).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub utility: f64,
    pub realized_utility: f64,
    pub cost: f64,
    /// `U / C`, infinite when nothing was spent. Serialised as `null` then.
    #[serde(with = "roi_serde")]
    pub roi: f64,
    pub roi_feasible: bool,
    pub budget_feasible: bool,
    pub truncated: bool,
}

pub(crate) mod roi_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// `U / C` with the zero-spend convention.
pub fn roi(utility: f64, cost: f64) -> f64 {
    if cost > 0.0 {
        utility / cost
    } else {
        f64::INFINITY
    }
}

/// Episode-level reward: utility when the ROI target is met, zero otherwise.
pub fn episode_reward(outcome: &EpisodeOutcome, roi_target: f64) -> f64 {
    if outcome.roi >= roi_target {
        outcome.utility
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug)]
pub struct StepOutcome {
    pub obs: SlotObservation,
    pub stats: SlotStats,
    pub done: bool,
}

/// Full simulator state of one episode. Holds the day, including market
/// prices and the pricing rule, which never reach the observation.
#[derive(Clone, Debug)]
pub struct Episode<'a> {
    day: &'a EnvironmentDay,
    slot: usize,
    utility: f64,
    realized: f64,
    cost: f64,
    wins: usize,
    seen: usize,
    prev_ratio: f64,
    done: bool,
    truncated: bool,
}

pub fn reset_episode(day: &EnvironmentDay) -> (SlotObservation, Episode<'_>) {
    let ep = Episode {
        day,
        slot: 0,
        utility: 0.0,
        realized: 0.0,
        cost: 0.0,
        wins: 0,
        seen: 0,
        prev_ratio: 0.0,
        done: false,
        truncated: false,
    };
    (ep.observation(), ep)
}

impl<'a> Episode<'a> {
    pub fn day(&self) -> &'a EnvironmentDay {
        self.day
    }

    pub fn slot(&self) -> usize {
        self.slot
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn observation(&self) -> SlotObservation {
        observe(self.day, self.slot, self.seen, self.wins, self.utility, self.cost, self.prev_ratio)
    }

    pub fn step(&mut self, ratio: f64) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::EpisodeFinished);
        }
        if !(ratio >= 0.0 && ratio.is_finite()) {
            return Err(Error::Usage(format!("bid ratio must be a finite nonnegative number, got {ratio}")));
        }
        let slot = self.slot;
        let auctions = self.day.slot_auctions(slot)?;
        let mut stats = SlotStats { auctions: auctions.len(), ..SlotStats::default() };
        // once the budget has run out the rest of the day is forfeited
        for a in auctions.iter().take(if self.truncated { 0 } else { auctions.len() }) {
            let out = price_auction(ratio * a.utility_estimate, a, &self.day.pricing, slot);
            if !out.won {
                continue;
            }
            if self.cost + stats.cost + out.cost > self.day.budget {
                self.truncated = true;
                break;
            }
            stats.wins += 1;
            stats.utility += a.utility_estimate;
            stats.realized += a.realized_utility;
            stats.cost += out.cost;
        }
        self.utility += stats.utility;
        self.realized += stats.realized;
        self.cost += stats.cost;
        self.wins += stats.wins;
        self.seen += stats.auctions;
        self.prev_ratio = ratio;
        self.slot += 1;
        self.done = self.slot >= self.day.slots();
        Ok(StepOutcome { obs: self.observation(), stats, done: self.done })
    }

    pub fn outcome(&self) -> EpisodeOutcome {
        let r = roi(self.utility, self.cost);
        EpisodeOutcome {
            utility: self.utility,
            realized_utility: self.realized,
            cost: self.cost,
            roi: r,
            roi_feasible: r >= self.day.roi_target,
            budget_feasible: self.cost <= self.day.budget,
            truncated: self.truncated,
        }
    }
}

fn observe(day: &EnvironmentDay, slot: usize, seen: usize, wins: usize, utility: f64, cost: f64, prev_ratio: f64) -> SlotObservation {
    let (l, b) = (day.roi_target, day.budget);
    SlotObservation {
        time_frac: slot as f64 / day.slots() as f64,
        win_rate: if seen > 0 { wins as f64 / seen as f64 } else { 0.0 },
        roi: (roi(utility, cost) / l).min(ROI_CAP),
        utility: utility / (l * b),
        cost: cost / b,
        budget_remaining: (1.0 - cost / b).clamp(0.0, 1.0),
        prev_ratio,
    }
}

/// Recompute the observation at step `prefix.len()` from logged slot
/// statistics and actions alone.
pub fn observation_from_prefix(day: &EnvironmentDay, prefix: &[TrajectoryStep]) -> SlotObservation {
    let (mut seen, mut wins, mut u, mut c) = (0usize, 0usize, 0.0, 0.0);
    for s in prefix {
        seen += s.slot.auctions;
        wins += s.slot.wins;
        u += s.slot.utility;
        c += s.slot.cost;
    }
    let prev = prefix.last().map_or(0.0, |s| s.action);
    observe(day, prefix.len(), seen, wins, u, c, prev)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub day_id: u32,
    pub policy: String,
    pub trajectory: Trajectory,
    pub outcome: EpisodeOutcome,
    /// `r^H` in units of `L * B`.
    pub reward_h: f64,
}

/// Run one episode with `policy(observation, history) -> ratio`.
pub fn rollout<F>(day: &EnvironmentDay, tag: &str, mut policy: F) -> Result<EpisodeRecord>
where
    F: FnMut(&SlotObservation, &Trajectory) -> Result<f64>,
{
    let (mut obs, mut ep) = reset_episode(day);
    let mut traj = Trajectory::default();
    let scale = day.roi_target * day.budget;
    while !ep.is_done() {
        let action = policy(&obs, &traj)?;
        let step = ep.step(action)?;
        traj.steps.push(TrajectoryStep { obs, action, reward: step.stats.utility / scale, slot: step.stats });
        obs = step.obs;
    }
    let outcome = ep.outcome();
    Ok(EpisodeRecord {
        day_id: day.day_id,
        policy: tag.to_string(),
        trajectory: traj,
        outcome,
        reward_h: episode_reward(&outcome, day.roi_target) / scale,
    })
}

/// Replay a fixed ratio sequence; slots beyond the sequence reuse its last entry.
pub fn replay_sequence(day: &EnvironmentDay, tag: &str, ratios: &[f64]) -> Result<EpisodeRecord> {
    rollout(day, tag, |_, h| Ok(ratios.get(h.len()).or(ratios.last()).copied().unwrap_or(0.0)))
}

#[derive(Serialize, Deserialize)]
struct StepLine {
    day_id: u32,
    policy: String,
    t: usize,
    #[serde(flatten)]
    step: TrajectoryStep,
}

/// Write trajectories as one JSON record per slot.
pub fn write_trajectory_log(path: &Path, records: &[EpisodeRecord]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for rec in records {
        for (t, step) in rec.trajectory.steps.iter().enumerate() {
            let line = StepLine { day_id: rec.day_id, policy: rec.policy.clone(), t, step: step.clone() };
            serde_json::to_writer(&mut w, &line).map_err(|e| Error::format(path, e.to_string()))?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read a trajectory log back as `(day_id, policy, trajectory)` triples.
pub fn read_trajectory_log(path: &Path) -> Result<Vec<(u32, String, Trajectory)>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out: Vec<(u32, String, Trajectory)> = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let rec: StepLine = serde_json::from_str(&line).map_err(|e| Error::format(path, format!("line {}: {e}", n + 1)))?;
        let new_episode = rec.t == 0 || out.last().is_none_or(|(d, p, _)| *d != rec.day_id || *p != rec.policy);
        if new_episode {
            if rec.t != 0 {
                return Err(Error::format(path, format!("line {}: episode does not start at t = 0", n + 1)));
            }
            out.push((rec.day_id, rec.policy.clone(), Trajectory::default()));
        }
        out.last_mut().unwrap().2.steps.push(rec.step);
    }
    Ok(out)
}
