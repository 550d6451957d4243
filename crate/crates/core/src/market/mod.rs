//! Auction-level market simulation.
//!
//! A day is an ordered stream of sealed-bid auctions split into `H` time
//! slots. Bids are always formed as `ratio * utility_estimate`; an auction is
//! won when the bid strictly exceeds the market price (the highest competing
//! bid). The charge for a won auction depends on the pricing rule of the day.

mod generator;
pub mod io;

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use generator::{generate_dataset, generate_day, DayGroup, GeneratorConfig, Sinusoid};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuctionRecord {
    pub index: u32,
    /// Expected utility `E[u | x]`, the quantity bids are scaled from.
    pub utility_estimate: f64,
    /// Stochastic utility feedback with expectation `utility_estimate`.
    pub realized_utility: f64,
    /// Highest competing bid.
    pub market_price: f64,
}

impl AuctionRecord {
    pub fn validate(&self) -> Result<()> {
        let ok = self.market_price > 0.0
            && self.market_price.is_finite()
            && self.utility_estimate >= 0.0
            && self.utility_estimate.is_finite()
            && self.realized_utility >= 0.0
            && self.realized_utility.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("malformed auction record {self:?}")))
        }
    }
}

/// Charge rule for won auctions.
///
/// `Mixed` charges `k * bid + (1 - k) * market_price` with a per-slot `k`;
/// `k = 0` is second price and `k = 1` is first price.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PricingRule {
    SecondPrice,
    Mixed { schedule: Vec<f64> },
}

impl PricingRule {
    pub fn mix_ratio(&self, slot: usize) -> f64 {
        match self {
            PricingRule::SecondPrice => 0.0,
            PricingRule::Mixed { schedule } => schedule[slot],
        }
    }

    pub fn validate(&self, slots: usize) -> Result<()> {
        if let PricingRule::Mixed { schedule } = self {
            if schedule.len() != slots {
                return Err(Error::InvalidConfig(format!(
                    "mix schedule has {} entries for {slots} slots",
                    schedule.len()
                )));
            }
            if let Some(k) = schedule.iter().find(|k| !(0.0..=1.0).contains(*k)) {
                return Err(Error::InvalidConfig(format!("mix ratio {k} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    TestIid,
    TestOod,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::TestIid => "test-iid",
            Split::TestOod => "test-ood",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "test-iid" | "iid" => Some(Split::TestIid),
            "test-ood" | "ood" => Some(Split::TestOod),
            _ => None,
        }
    }

    pub fn is_test(self) -> bool {
        self != Split::Train
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Mechanism {
    Gsp,
    Mix,
}

impl Mechanism {
    pub fn as_str(self) -> &'static str {
        match self {
            Mechanism::Gsp => "GSP",
            Mechanism::Mix => "MIX",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentDay {
    pub day_id: u32,
    pub split: Split,
    pub mechanism: Mechanism,
    pub budget: f64,
    pub roi_target: f64,
    pub pricing: PricingRule,
    /// `H + 1` cut points into `auctions`; slot `t` is `[b[t], b[t + 1])`.
    pub slot_boundaries: Vec<usize>,
    pub auctions: Vec<AuctionRecord>,
}

impl EnvironmentDay {
    pub fn slots(&self) -> usize {
        self.slot_boundaries.len().saturating_sub(1)
    }

    pub fn slot_range(&self, slot: usize) -> Result<Range<usize>> {
        if slot >= self.slots() {
            return Err(Error::InvalidSlot { slot, slots: self.slots() });
        }
        Ok(self.slot_boundaries[slot]..self.slot_boundaries[slot + 1])
    }

    pub fn slot_auctions(&self, slot: usize) -> Result<&[AuctionRecord]> {
        Ok(&self.auctions[self.slot_range(slot)?])
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.budget > 0.0 && self.budget.is_finite()) {
            return Err(Error::InvalidConfig(format!("day {}: budget must be positive", self.day_id)));
        }
        if !(self.roi_target > 0.0 && self.roi_target.is_finite()) {
            return Err(Error::InvalidConfig(format!("day {}: ROI target must be positive", self.day_id)));
        }
        let b = &self.slot_boundaries;
        if b.len() < 2 || b[0] != 0 || *b.last().unwrap() != self.auctions.len() {
            return Err(Error::InvalidConfig(format!(
                "day {}: slot boundaries must run from 0 to {}",
                self.day_id,
                self.auctions.len()
            )));
        }
        if b.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(format!(
                "day {}: slot boundaries must be strictly increasing",
                self.day_id
            )));
        }
        self.pricing.validate(self.slots())?;
        self.auctions.iter().try_for_each(AuctionRecord::validate)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WinOutcome {
    pub won: bool,
    pub cost: f64,
}

/// Resolve one auction. Ties with the market price lose.
pub fn price_auction(bid: f64, auction: &AuctionRecord, rule: &PricingRule, slot: usize) -> WinOutcome {
    debug_assert!(bid >= 0.0);
    if bid > auction.market_price {
        let k = rule.mix_ratio(slot);
        WinOutcome { won: true, cost: k * bid + (1.0 - k) * auction.market_price }
    } else {
        WinOutcome { won: false, cost: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SlotResult {
    /// Sum of expected utility over won auctions.
    pub utility_sum: f64,
    /// Sum of realised utility feedback over won auctions.
    pub realized_sum: f64,
    pub cost_sum: f64,
    pub win_count: usize,
}

/// Replay one slot with bids `ratio * utility_estimate`, ignoring the budget.
pub fn replay_slot_aggregate(day: &EnvironmentDay, slot: usize, ratio: f64) -> Result<SlotResult> {
    let mut out = SlotResult::default();
    for auction in day.slot_auctions(slot)? {
        let outcome = price_auction(ratio * auction.utility_estimate, auction, &day.pricing, slot);
        if outcome.won {
            out.utility_sum += auction.utility_estimate;
            out.realized_sum += auction.realized_utility;
            out.cost_sum += outcome.cost;
            out.win_count += 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(u: f64, m: f64) -> AuctionRecord {
        AuctionRecord { index: 0, utility_estimate: u, realized_utility: u, market_price: m }
    }

    fn day(auctions: Vec<AuctionRecord>, boundaries: Vec<usize>, pricing: PricingRule) -> EnvironmentDay {
        EnvironmentDay {
            day_id: 0,
            split: Split::Train,
            mechanism: Mechanism::Gsp,
            budget: 100.0,
            roi_target: 1.0,
            pricing,
            slot_boundaries: boundaries,
            auctions,
        }
    }

    #[test]
    fn second_price_charges_market_price() {
        let out = price_auction(5.0, &rec(1.0, 3.0), &PricingRule::SecondPrice, 0);
        assert_eq!(out, WinOutcome { won: true, cost: 3.0 });
    }

    #[test]
    fn losing_bid_costs_nothing() {
        for rule in [PricingRule::SecondPrice, PricingRule::Mixed { schedule: vec![0.7] }] {
            let out = price_auction(2.0, &rec(1.0, 3.0), &rule, 0);
            assert_eq!(out, WinOutcome { won: false, cost: 0.0 });
        }
        // a tie is not a win
        assert!(!price_auction(3.0, &rec(1.0, 3.0), &PricingRule::SecondPrice, 0).won);
    }

    #[test]
    fn mixed_half_is_average_of_bid_and_price() {
        let out = price_auction(4.0, &rec(1.0, 2.0), &PricingRule::Mixed { schedule: vec![0.5] }, 0);
        assert!(out.won);
        assert!((out.cost - 3.0).abs() < 1e-12);
    }

    #[test]
    fn first_price_limit_charges_the_bid() {
        let out = price_auction(4.0, &rec(1.0, 2.0), &PricingRule::Mixed { schedule: vec![1.0] }, 0);
        assert_eq!(out.cost, 4.0);
    }

    #[test]
    fn slot_replay_by_hand() {
        let d = day(vec![rec(2.0, 1.0), rec(1.0, 3.0)], vec![0, 2], PricingRule::SecondPrice);
        let r = replay_slot_aggregate(&d, 0, 1.0).unwrap();
        assert_eq!(r.utility_sum, 2.0);
        assert_eq!(r.cost_sum, 1.0);
        assert_eq!(r.win_count, 1);
        let zero = replay_slot_aggregate(&d, 0, 0.0).unwrap();
        assert_eq!(zero, SlotResult::default());
    }

    #[test]
    fn invalid_slot_is_usage_error() {
        let d = day(vec![rec(2.0, 1.0)], vec![0, 1], PricingRule::SecondPrice);
        assert!(matches!(replay_slot_aggregate(&d, 1, 1.0), Err(Error::InvalidSlot { slot: 1, slots: 1 })));
    }

    #[test]
    fn validation_rejects_bad_boundaries() {
        let mut d = day(vec![rec(2.0, 1.0), rec(1.0, 1.0)], vec![0, 1, 1, 2], PricingRule::SecondPrice);
        assert!(d.validate().is_err());
        d.slot_boundaries = vec![0, 1, 2];
        assert!(d.validate().is_ok());
        d.pricing = PricingRule::Mixed { schedule: vec![0.2, 1.3] };
        assert!(d.validate().is_err());
    }
}
