//! Synthetic day generator.
//!
//! Competition and value intensity follow per-day sinusoids across slots and
//! shift the log-scale location of the market-price and utility marginals.
//! Mixed-mechanism days get a piecewise-linear `k` schedule through sampled
//! inflection points, held constant within each slot.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{AuctionRecord, EnvironmentDay, Mechanism, PricingRule, Split};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sinusoid {
    pub amplitude: f64,
    /// Period measured in slots.
    pub period: f64,
    pub phase: f64,
}

impl Sinusoid {
    pub fn at(&self, slot: f64, phase_offset: f64) -> f64 {
        self.amplitude * (std::f64::consts::TAU * slot / self.period + self.phase + phase_offset).sin()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DayGroup {
    pub split: Split,
    pub mechanism: Mechanism,
    pub days: usize,
    /// Range the mix-ratio inflection values are drawn from (MIX days only).
    #[serde(default = "default_k_range")]
    pub k_range: (f64, f64),
}

fn default_k_range() -> (f64, f64) {
    (0.0, 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub auctions_per_day: usize,
    pub slots: usize,
    pub groups: Vec<DayGroup>,
    pub competition: Sinusoid,
    pub value: Sinusoid,
    /// Each day draws phase offsets uniformly from `[0, phase_jitter)`.
    pub phase_jitter: f64,
    pub value_log_mean: f64,
    pub value_log_std: f64,
    pub price_log_mean: f64,
    pub price_log_std: f64,
    /// Correlation between the log-utility and log-price noise.
    pub price_value_correlation: f64,
    /// Std of a per-day shift of the log market price.
    pub day_shift_std: f64,
    /// Realised utility is `(u / p) * Bernoulli(p)`.
    pub feedback_probability: f64,
    pub inflection_count: usize,
    /// Quantile of the achievable second-price ROI curve used as the target.
    pub roi_quantile: f64,
    /// Budget as a fraction of the ROI-constrained greedy spend.
    pub budget_fraction: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            auctions_per_day: 20_000,
            slots: 24,
            groups: vec![
                DayGroup { split: Split::Train, mechanism: Mechanism::Gsp, days: 6, k_range: (0.0, 0.0) },
                DayGroup { split: Split::Train, mechanism: Mechanism::Mix, days: 12, k_range: (0.0, 0.6) },
                DayGroup { split: Split::TestIid, mechanism: Mechanism::Gsp, days: 8, k_range: (0.0, 0.0) },
                DayGroup { split: Split::TestOod, mechanism: Mechanism::Mix, days: 14, k_range: (0.3, 1.0) },
            ],
            competition: Sinusoid { amplitude: 0.35, period: 24.0, phase: 0.0 },
            value: Sinusoid { amplitude: 0.2, period: 12.0, phase: 1.0 },
            phase_jitter: std::f64::consts::TAU,
            value_log_mean: 0.0,
            value_log_std: 0.6,
            price_log_mean: 0.0,
            price_log_std: 0.5,
            price_value_correlation: 0.5,
            day_shift_std: 0.15,
            feedback_probability: 0.5,
            inflection_count: 3,
            roi_quantile: 0.6,
            budget_fraction: 0.5,
        }
    }
}

impl GeneratorConfig {
    /// Second-price days (k = 0) against heavily first-price days (k = 0.9),
    /// `train` and `test` days of each regime.
    pub fn two_regime(train: usize, test: usize) -> Self {
        let group = |split, mechanism, days, k| DayGroup { split, mechanism, days, k_range: (k, k) };
        GeneratorConfig {
            groups: vec![
                group(Split::Train, Mechanism::Gsp, train, 0.0),
                group(Split::Train, Mechanism::Mix, train, 0.9),
                group(Split::TestIid, Mechanism::Gsp, test, 0.0),
                group(Split::TestIid, Mechanism::Mix, test, 0.9),
            ],
            ..GeneratorConfig::default()
        }
    }

    pub fn total_days(&self) -> usize {
        self.groups.iter().map(|g| g.days).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("generator: {m}")));
        if self.auctions_per_day == 0 || self.slots == 0 || self.total_days() == 0 {
            return bad("days, auctions_per_day and slots must be positive");
        }
        if self.auctions_per_day < self.slots {
            return bad("need at least one auction per slot");
        }
        if self.competition.amplitude < 0.0 || self.value.amplitude < 0.0 {
            return bad("amplitudes must be nonnegative");
        }
        if !(self.competition.period > 0.0 && self.value.period > 0.0) {
            return bad("periods must be positive");
        }
        if !(self.value_log_std >= 0.0 && self.price_log_std >= 0.0 && self.day_shift_std >= 0.0) {
            return bad("log-scale spreads must be nonnegative");
        }
        if !(-1.0..=1.0).contains(&self.price_value_correlation) {
            return bad("price_value_correlation must lie in [-1, 1]");
        }
        if !(self.feedback_probability > 0.0 && self.feedback_probability <= 1.0) {
            return bad("feedback_probability must lie in (0, 1]");
        }
        if !(self.roi_quantile > 0.0 && self.roi_quantile < 1.0) {
            return bad("roi_quantile must lie in (0, 1)");
        }
        if !(self.budget_fraction > 0.0) {
            return bad("budget_fraction must be positive");
        }
        for g in &self.groups {
            let (lo, hi) = g.k_range;
            if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                return bad("k_range must be an ordered subrange of [0, 1]");
            }
        }
        Ok(())
    }

    /// Split and mechanism of every day, in day-id order.
    pub fn layout(&self) -> Vec<&DayGroup> {
        self.groups.iter().flat_map(|g| std::iter::repeat_n(g, g.days)).collect()
    }
}

pub fn generate_dataset(cfg: &GeneratorConfig) -> Result<Vec<EnvironmentDay>> {
    cfg.validate()?;
    cfg.layout()
        .into_iter()
        .enumerate()
        .map(|(id, group)| generate_day(cfg, group, id as u32))
        .collect()
}

pub fn generate_day(cfg: &GeneratorConfig, group: &DayGroup, day_id: u32) -> Result<EnvironmentDay> {
    let mut rng = seed::rng(cfg.seed, &format!("data/day/{day_id}"));
    let h = cfg.slots;
    let n = cfg.auctions_per_day;

    let comp_offset = rng.random::<f64>() * cfg.phase_jitter;
    let value_offset = rng.random::<f64>() * cfg.phase_jitter;
    let day_shift = Normal::new(0.0, cfg.day_shift_std)
        .map_err(|e| Error::InvalidConfig(e.to_string()))?
        .sample(&mut rng);

    let pricing = match group.mechanism {
        Mechanism::Gsp => PricingRule::SecondPrice,
        Mechanism::Mix => PricingRule::Mixed { schedule: mix_schedule(&mut rng, h, cfg.inflection_count, group.k_range) },
    };

    let slot_boundaries: Vec<usize> = (0..=h).map(|t| t * n / h).collect();
    let rho = cfg.price_value_correlation;
    let rho_c = (1.0 - rho * rho).sqrt();
    let p = cfg.feedback_probability;
    let mut auctions = Vec::with_capacity(n);
    for t in 0..h {
        let comp = cfg.competition.at(t as f64, comp_offset);
        let val = cfg.value.at(t as f64, value_offset);
        for i in slot_boundaries[t]..slot_boundaries[t + 1] {
            let z1: f64 = StandardNormal.sample(&mut rng);
            let z2: f64 = StandardNormal.sample(&mut rng);
            let u = (cfg.value_log_mean + val + cfg.value_log_std * z1).exp();
            let m = (cfg.price_log_mean + day_shift + comp + cfg.price_log_std * (rho * z1 + rho_c * z2)).exp();
            let realized = if rng.random::<f64>() < p { u / p } else { 0.0 };
            auctions.push(AuctionRecord { index: i as u32, utility_estimate: u, realized_utility: realized, market_price: m });
        }
    }

    let (roi_target, budget) = calibrate_constraints(&auctions, cfg.roi_quantile, cfg.budget_fraction);
    let day = EnvironmentDay {
        day_id,
        split: group.split,
        mechanism: group.mechanism,
        budget,
        roi_target,
        pricing,
        slot_boundaries,
        auctions,
    };
    day.validate()?;
    Ok(day)
}

fn mix_schedule(rng: &mut ChaCha8Rng, slots: usize, inflections: usize, (lo, hi): (f64, f64)) -> Vec<f64> {
    let draw = |rng: &mut ChaCha8Rng| if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let mut knots: Vec<(f64, f64)> = Vec::with_capacity(inflections + 2);
    knots.push((0.0, draw(rng)));
    let mut interior: Vec<f64> = (0..inflections).map(|_| rng.random::<f64>()).collect();
    interior.sort_by(f64::total_cmp);
    for x in interior {
        knots.push((x, draw(rng)));
    }
    knots.push((1.0, draw(rng)));

    (0..slots)
        .map(|t| {
            let x = (t as f64 + 0.5) / slots as f64;
            let j = knots.partition_point(|&(kx, _)| kx <= x).clamp(1, knots.len() - 1);
            let (x0, y0) = knots[j - 1];
            let (x1, y1) = knots[j];
            let w = if x1 > x0 { (x - x0) / (x1 - x0) } else { 1.0 };
            (y0 + w * (y1 - y0)).clamp(0.0, 1.0)
        })
        .collect()
}

/// Pick `(roi_target, budget)` from the second-price view of the day.
///
/// Sorting auctions by `u / m` gives every ROI reachable by a constant ratio
/// as a prefix ROI. The target is the `roi_quantile` quantile of those prefix
/// ROIs, and the budget is `budget_fraction` times the spend of the largest
/// prefix that still meets the target.
fn calibrate_constraints(auctions: &[AuctionRecord], roi_quantile: f64, budget_fraction: f64) -> (f64, f64) {
    let mut pairs: Vec<(f64, f64)> = auctions.iter().map(|a| (a.utility_estimate, a.market_price)).collect();
    pairs.sort_by(|a, b| (b.0 / b.1).total_cmp(&(a.0 / a.1)));
    let mut prefix_roi = Vec::with_capacity(pairs.len());
    let mut prefix_cost = Vec::with_capacity(pairs.len());
    let (mut u, mut c) = (0.0, 0.0);
    for (ui, mi) in &pairs {
        u += ui;
        c += mi;
        prefix_roi.push(u / c);
        prefix_cost.push(c);
    }
    let mut sorted = prefix_roi.clone();
    sorted.sort_by(f64::total_cmp);
    let idx = ((sorted.len() - 1) as f64 * roi_quantile).round() as usize;
    let target = sorted[idx];
    // prefix ROI is nonincreasing, so the feasible prefixes form a head
    let last_feasible = prefix_roi.partition_point(|&r| r >= target).max(1) - 1;
    (target, budget_fraction * prefix_cost[last_feasible])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GeneratorConfig {
        GeneratorConfig {
            auctions_per_day: 600,
            slots: 6,
            groups: vec![
                DayGroup { split: Split::Train, mechanism: Mechanism::Gsp, days: 2, k_range: (0.0, 0.0) },
                DayGroup { split: Split::Train, mechanism: Mechanism::Mix, days: 2, k_range: (0.2, 0.8) },
            ],
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        let a = generate_dataset(&small()).unwrap();
        let b = generate_dataset(&small()).unwrap();
        assert_eq!(a, b);
        let mut other = small();
        other.seed = 1;
        assert_ne!(a, generate_dataset(&other).unwrap());
    }

    #[test]
    fn gsp_days_use_second_price_and_mix_days_stay_in_range() {
        let days = generate_dataset(&small()).unwrap();
        assert_eq!(days[0].pricing, PricingRule::SecondPrice);
        match &days[3].pricing {
            PricingRule::Mixed { schedule } => {
                assert_eq!(schedule.len(), 6);
                assert!(schedule.iter().all(|k| (0.2..=0.8).contains(k)));
            }
            other => panic!("expected mixed pricing, got {other:?}"),
        }
    }

    #[test]
    fn zero_inflections_with_zero_endpoints_is_second_price() {
        let mut cfg = small();
        cfg.inflection_count = 0;
        cfg.groups[1].k_range = (0.0, 0.0);
        let days = generate_dataset(&cfg).unwrap();
        let PricingRule::Mixed { schedule } = &days[2].pricing else { panic!() };
        assert!(schedule.iter().all(|&k| k == 0.0));
    }

    #[test]
    fn constraints_are_positive() {
        for d in generate_dataset(&small()).unwrap() {
            assert!(d.budget > 0.0 && d.roi_target > 0.0);
            assert_eq!(d.slot_boundaries.len(), 7);
        }
    }

    #[test]
    fn schedule_interpolates_between_knots() {
        let mut rng = seed::rng(3, "t");
        let s = mix_schedule(&mut rng, 10, 2, (0.1, 0.9));
        assert!(s.iter().all(|k| (0.1..=0.9).contains(k)));
        // piecewise linear with 2 interior knots: at most 3 distinct slopes
        let diffs: Vec<f64> = s.windows(2).map(|w| w[1] - w[0]).collect();
        let mut changes = 0;
        for w in diffs.windows(2) {
            if (w[1] - w[0]).abs() > 1e-9 {
                changes += 1;
            }
        }
        assert!(changes <= 4, "{s:?}");
    }

    #[test]
    fn invalid_parameters_rejected() {
        let mut cfg = small();
        cfg.value_log_std = -1.0;
        assert!(generate_dataset(&cfg).is_err());
        let mut cfg = small();
        cfg.groups[1].k_range = (0.5, 1.5);
        assert!(generate_dataset(&cfg).is_err());
        let mut cfg = small();
        cfg.competition.amplitude = -0.1;
        assert!(generate_dataset(&cfg).is_err());
    }
}
