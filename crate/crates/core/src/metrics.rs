//! Competitive ratio, tolerance-aware competitive ratio (TACR) and
//! split-wise aggregates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::env::EpisodeOutcome;
use crate::error::{Error, Result};
use crate::market::{EnvironmentDay, Mechanism, Split};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Largest tolerated relative ROI shortfall.
    pub gamma: f64,
    /// Utility discount per percentage point of shortfall.
    pub zeta: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig { gamma: 0.02, zeta: 0.05 }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        if !((0.0..1.0).contains(&self.gamma) && self.zeta >= 0.0) {
            return Err(Error::InvalidConfig("metrics need gamma in [0, 1) and zeta >= 0".into()));
        }
        Ok(())
    }
}

pub fn competitive_ratio(utility: f64, expert_utility: f64) -> f64 {
    utility / expert_utility
}

/// ROI shortfall in whole percentage points, zero when the target is met.
pub fn tolerance_level(roi: f64, roi_target: f64) -> u32 {
    let shortfall = (1.0 - roi / roi_target).max(0.0);
    // the guard keeps exact multiples like 0.99 from rounding up to 2
    (100.0 * shortfall - 1e-9).ceil().max(0.0) as u32
}

fn tolerated(roi: f64, roi_target: f64, cfg: &MetricsConfig) -> bool {
    roi >= roi_target * (1.0 - cfg.gamma)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DayScore {
    pub day_id: u32,
    pub split: Split,
    pub mechanism: Mechanism,
    pub utility: f64,
    pub expert_utility: f64,
    #[serde(with = "crate::env::roi_serde")]
    pub roi: f64,
    pub roi_target: f64,
    pub tolerance: u32,
    pub cr: f64,
    pub tacr: f64,
    pub cr_at_gamma: f64,
    /// False when the oracle found nothing (`U* = 0`).
    pub included: bool,
}

/// Score one day. `utility`, `roi` come from the evaluated episode.
pub fn score_day(day: &EnvironmentDay, outcome: &EpisodeOutcome, expert_utility: f64, cfg: &MetricsConfig) -> DayScore {
    let included = expert_utility > 0.0;
    let tolerance = tolerance_level(outcome.roi, day.roi_target);
    let ok = tolerated(outcome.roi, day.roi_target, cfg);
    let (cr, tacr, cr_at_gamma) = if included {
        let cr = competitive_ratio(outcome.utility, expert_utility);
        let gate = if ok { 1.0 } else { 0.0 };
        (cr, gate * cr / (1.0 + cfg.zeta).powi(tolerance as i32), gate * cr)
    } else {
        (0.0, 0.0, 0.0)
    };
    DayScore {
        day_id: day.day_id,
        split: day.split,
        mechanism: day.mechanism,
        utility: outcome.utility,
        expert_utility,
        roi: outcome.roi,
        roi_target: day.roi_target,
        tolerance,
        cr,
        tacr,
        cr_at_gamma,
        included,
    }
}

/// Mean TACR over included days; `None` for an empty set.
pub fn tacr(scores: &[DayScore]) -> Option<f64> {
    mean(scores.iter().filter(|s| s.included).map(|s| s.tacr))
}

pub fn cr_at_gamma(scores: &[DayScore]) -> Option<f64> {
    mean(scores.iter().filter(|s| s.included).map(|s| s.cr_at_gamma))
}

fn mean(it: impl Iterator<Item = f64>) -> Option<f64> {
    let (n, s) = it.fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    (n > 0).then(|| s / n as f64)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Report groups: every (split, mechanism) pair present plus `all`.
pub fn group_key(s: &DayScore) -> String {
    format!("{}/{}", s.split.as_str(), s.mechanism.as_str())
}

/// Evaluation of one policy run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunScores {
    pub algo: String,
    pub seed: u64,
    pub scores: Vec<DayScore>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    /// Per-seed values, ordered like `seeds`.
    pub seeds: Vec<u64>,
    pub tacr: Vec<f64>,
    pub cr_at_gamma: Vec<f64>,
    pub median_tacr: f64,
    pub mean_tacr: f64,
    pub median_cr_at_gamma: f64,
    pub mean_cr_at_gamma: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: MetricsConfig,
    /// `algo -> group -> summary`. Groups without included days are absent.
    pub algos: BTreeMap<String, BTreeMap<String, GroupSummary>>,
}

impl MetricsReport {
    pub fn median_tacr(&self, algo: &str, group: &str) -> Option<f64> {
        self.algos.get(algo)?.get(group).map(|g| g.median_tacr)
    }
}

pub fn aggregate_report(runs: &[RunScores], cfg: &MetricsConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    if runs.is_empty() {
        return Err(Error::Usage("report needs at least one run".into()));
    }
    let mut report = MetricsReport { config: *cfg, algos: BTreeMap::new() };
    let mut ordered: Vec<&RunScores> = runs.iter().collect();
    ordered.sort_by(|a, b| (&a.algo, a.seed).cmp(&(&b.algo, b.seed)));
    for run in ordered {
        let mut groups: BTreeMap<String, Vec<DayScore>> = BTreeMap::new();
        for s in &run.scores {
            groups.entry(group_key(s)).or_default().push(s.clone());
            groups.entry("all".into()).or_default().push(s.clone());
        }
        let entry = report.algos.entry(run.algo.clone()).or_default();
        for (key, scores) in groups {
            let (Some(t), Some(c)) = (tacr(&scores), cr_at_gamma(&scores)) else { continue };
            let g = entry.entry(key).or_default();
            g.seeds.push(run.seed);
            g.tacr.push(t);
            g.cr_at_gamma.push(c);
        }
    }
    for groups in report.algos.values_mut() {
        for g in groups.values_mut() {
            g.median_tacr = median(&g.tacr).unwrap_or(0.0);
            g.mean_tacr = mean(g.tacr.iter().copied()).unwrap_or(0.0);
            g.median_cr_at_gamma = median(&g.cr_at_gamma).unwrap_or(0.0);
            g.mean_cr_at_gamma = mean(g.cr_at_gamma.iter().copied()).unwrap_or(0.0);
        }
    }
    Ok(report)
}

/// Flat table: one row per (algo, group, seed).
pub fn report_csv(report: &MetricsReport) -> String {
    let mut out = String::from("algo,group,seed,tacr,cr_at_gamma\n");
    for (algo, groups) in &report.algos {
        for (group, g) in groups {
            for i in 0..g.seeds.len() {
                out.push_str(&format!("{algo},{group},{},{},{}\n", g.seeds[i], g.tacr[i], g.cr_at_gamma[i]));
            }
        }
    }
    out
}
