//! Hindsight-optimal slot ratio sequences.
//!
//! Every slot picks one ratio from a fixed grid. Replaying each slot at each
//! grid ratio yields a table of slot utilities and costs, and the expert is
//! the best sequence subject to the day's budget and ROI target:
//!
//! ```text
//! max  sum_t U[t][k_t]
//! s.t. sum_t C[t][k_t] <= B,   sum_t U[t][k_t] >= L * sum_t C[t][k_t]
//! ```
//!
//! Small instances are solved by exhaustive search. The general solver takes
//! the assignment LP (each slot a convex combination of grid points), solves
//! it with a dense simplex, and rounds the at-most-two fractional slots.
//! The table ignores the order in which budget runs out inside a day; any
//! sequence it admits spends at most `B` in total and so is never truncated.

use serde::{Deserialize, Serialize};

use crate::env::{self, EpisodeRecord};
use crate::error::{Error, Result};
use crate::market::{replay_slot_aggregate, EnvironmentDay};

/// Relative safety margin applied to both constraints by every solver here,
/// so that sums evaluated in a different order still replay as feasible.
pub const CONSTRAINT_MARGIN: f64 = 1e-9;
pub const BRUTEFORCE_LIMIT: f64 = 1e7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constraints {
    pub budget: f64,
    pub roi_target: f64,
}

impl Constraints {
    pub fn of(day: &EnvironmentDay) -> Self {
        Constraints { budget: day.budget, roi_target: day.roi_target }
    }

    fn budget_cap(&self) -> f64 {
        self.budget * (1.0 - CONSTRAINT_MARGIN)
    }

    fn roi_floor(&self) -> f64 {
        self.roi_target * (1.0 + CONSTRAINT_MARGIN)
    }

    pub fn admits(&self, utility: f64, cost: f64) -> bool {
        cost <= self.budget_cap() && utility >= self.roi_floor() * cost
    }
}

/// Candidate ratios. Index 0 is always the abstain ratio 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioGrid {
    ratios: Vec<f64>,
}

impl RatioGrid {
    pub fn new(mut positive: Vec<f64>) -> Result<Self> {
        positive.sort_by(f64::total_cmp);
        positive.dedup();
        if positive.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::InvalidConfig("grid ratios must be positive and finite".into()));
        }
        let mut ratios = Vec::with_capacity(positive.len() + 1);
        ratios.push(0.0);
        ratios.extend(positive);
        Ok(RatioGrid { ratios })
    }

    pub fn log_spaced(min: f64, max: f64, points: usize) -> Result<Self> {
        if !(min > 0.0 && max > min) || points < 2 {
            return Err(Error::InvalidConfig(format!("bad log grid [{min}, {max}] x {points}")));
        }
        let step = (max / min).ln() / (points - 1) as f64;
        Self::new((0..points).map(|i| min * (step * i as f64).exp()).collect())
    }

    /// `points` log-spaced ratios with `max` at the 99th percentile of
    /// `m / u` over the day and `min = max / 100`.
    pub fn for_day(day: &EnvironmentDay, points: usize) -> Result<Self> {
        let mut thresholds: Vec<f64> = day
            .auctions
            .iter()
            .filter(|a| a.utility_estimate > 0.0)
            .map(|a| a.market_price / a.utility_estimate)
            .collect();
        if thresholds.is_empty() {
            return Err(Error::InvalidConfig(format!("day {} has no positive utilities", day.day_id)));
        }
        thresholds.sort_by(f64::total_cmp);
        let max = thresholds[((thresholds.len() - 1) as f64 * 0.99).round() as usize];
        Self::log_spaced(max / 100.0, max, points)
    }

    /// One ratio just above every auction's win threshold `m / u`, so every
    /// achievable win set of a constant ratio is represented.
    pub fn breakpoints(day: &EnvironmentDay) -> Result<Self> {
        Self::new(
            day.auctions
                .iter()
                .filter(|a| a.utility_estimate > 0.0)
                .map(|a| a.market_price / a.utility_estimate * (1.0 + 1e-9))
                .collect(),
        )
    }

    pub fn ratios(&self) -> &[f64] {
        &self.ratios
    }

    pub fn len(&self) -> usize {
        self.ratios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratios.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotAggregateTable {
    /// `utility[t][k]`: expected utility won in slot `t` at grid ratio `k`.
    pub utility: Vec<Vec<f64>>,
    pub cost: Vec<Vec<f64>>,
}

impl SlotAggregateTable {
    pub fn slots(&self) -> usize {
        self.utility.len()
    }

    pub fn columns(&self) -> usize {
        self.utility.first().map_or(0, Vec::len)
    }

    pub fn totals(&self, choice: &[usize]) -> (f64, f64) {
        choice.iter().enumerate().fold((0.0, 0.0), |(u, c), (t, &k)| (u + self.utility[t][k], c + self.cost[t][k]))
    }
}

pub fn build_slot_aggregates(day: &EnvironmentDay, grid: &RatioGrid) -> Result<SlotAggregateTable> {
    let mut utility = Vec::with_capacity(day.slots());
    let mut cost = Vec::with_capacity(day.slots());
    for t in 0..day.slots() {
        let mut u_row = Vec::with_capacity(grid.len());
        let mut c_row = Vec::with_capacity(grid.len());
        for &a in grid.ratios() {
            let r = replay_slot_aggregate(day, t, a)?;
            u_row.push(r.utility_sum);
            c_row.push(r.cost_sum);
        }
        utility.push(u_row);
        cost.push(c_row);
    }
    Ok(SlotAggregateTable { utility, cost })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveMethod {
    Bruteforce,
    Relaxed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertSolution {
    /// Grid column chosen per slot.
    pub choice: Vec<usize>,
    pub ratios: Vec<f64>,
    pub utility: f64,
    pub cost: f64,
    #[serde(with = "crate::env::roi_serde")]
    pub roi: f64,
    /// Upper bound on the optimum over the grid.
    pub bound: f64,
    pub gap: f64,
    pub method: SolveMethod,
    pub converged: bool,
}

impl ExpertSolution {
    fn from_choice(table: &SlotAggregateTable, grid: Option<&RatioGrid>, choice: Vec<usize>, bound: f64, method: SolveMethod, converged: bool) -> Self {
        let (utility, cost) = table.totals(&choice);
        let ratios = match grid {
            Some(g) => choice.iter().map(|&k| g.ratios()[k]).collect(),
            None => Vec::new(),
        };
        let bound = bound.max(utility);
        ExpertSolution { ratios, utility, cost, roi: env::roi(utility, cost), bound, gap: bound - utility, method, converged, choice }
    }

    pub fn with_grid(mut self, grid: &RatioGrid) -> Self {
        self.ratios = self.choice.iter().map(|&k| grid.ratios()[k]).collect();
        self
    }

    pub fn is_abstain(&self) -> bool {
        self.choice.iter().all(|&k| k == 0)
    }
}

/// Exact optimum by enumerating every grid sequence.
pub fn solve_bruteforce(table: &SlotAggregateTable, cons: Constraints) -> Result<ExpertSolution> {
    let h = table.slots();
    let k = table.columns();
    let combinations = (k as f64).powi(h as i32);
    if combinations > BRUTEFORCE_LIMIT {
        return Err(Error::InstanceTooLarge { combinations, limit: BRUTEFORCE_LIMIT });
    }
    let mut best = Search { choice: vec![0; h], utility: 0.0, cost: 0.0 };
    let mut current = vec![0usize; h];
    enumerate(table, cons, 0, 0.0, 0.0, &mut current, &mut best);
    Ok(ExpertSolution::from_choice(table, None, best.choice, best.utility, SolveMethod::Bruteforce, true))
}

struct Search {
    choice: Vec<usize>,
    utility: f64,
    cost: f64,
}

// Depth-first in lexicographic order; a later sequence only replaces the
// incumbent when strictly better, which keeps the lexicographically smallest
// among ties.
fn enumerate(table: &SlotAggregateTable, cons: Constraints, t: usize, u: f64, c: f64, current: &mut Vec<usize>, best: &mut Search) {
    if t == table.slots() {
        if cons.admits(u, c) && (u > best.utility || (u == best.utility && c < best.cost)) {
            best.choice.copy_from_slice(current);
            best.utility = u;
            best.cost = c;
        }
        return;
    }
    for k in 0..table.columns() {
        let c2 = c + table.cost[t][k];
        if c2 > cons.budget_cap() {
            continue;
        }
        current[t] = k;
        enumerate(table, cons, t + 1, u + table.utility[t][k], c2, current, best);
    }
    current[t] = 0;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelaxedConfig {
    pub max_pivots: usize,
    /// Fractional slots are rounded exhaustively while `K^f` stays below this.
    pub rounding_limit: usize,
    /// Additional Lagrangian starting points polished by local search.
    pub restarts: usize,
    /// Node budget of the branch and bound that polishes the rounded solution.
    pub node_limit: usize,
}

impl Default for RelaxedConfig {
    fn default() -> Self {
        RelaxedConfig { max_pivots: 20_000, rounding_limit: 100_000, restarts: 4, node_limit: 200_000 }
    }
}

/// LP relaxation plus rounding. `bound` is the LP optimum when the simplex
/// converged, otherwise the trivial bound `sum_t max_k U[t][k]`.
pub fn solve_relaxed(table: &SlotAggregateTable, cons: Constraints, cfg: RelaxedConfig) -> ExpertSolution {
    let lp = solve_assignment_lp(table, cons, cfg.max_pivots);
    let trivial_bound: f64 = table.utility.iter().map(|row| row.iter().cloned().fold(0.0, f64::max)).sum();
    let bound = if lp.converged { lp.objective } else { trivial_bound };

    let h = table.slots();
    let k = table.columns();
    let mut choice = vec![0usize; h];
    let mut fractional = Vec::new();
    for t in 0..h {
        let row = &lp.z[t];
        let (arg, max) = row.iter().enumerate().fold((0, f64::MIN), |acc, (j, &v)| if v > acc.1 { (j, v) } else { acc });
        choice[t] = arg;
        if max < 1.0 - 1e-9 {
            fractional.push(t);
        }
    }

    let mut best: Option<(Vec<usize>, f64, f64)> = None;
    let mut consider = |cand: &[usize]| {
        let (u, c) = table.totals(cand);
        if cons.admits(u, c) && best.as_ref().is_none_or(|(_, bu, bc)| u > *bu || (u == *bu && c < *bc)) {
            best = Some((cand.to_vec(), u, c));
        }
    };
    if !fractional.is_empty() && (k as f64).powi(fractional.len() as i32) <= cfg.rounding_limit as f64 {
        let mut cand = choice.clone();
        let mut idx = vec![0usize; fractional.len()];
        loop {
            for (slot, &j) in fractional.iter().zip(&idx) {
                cand[*slot] = j;
            }
            consider(&cand);
            let mut pos = 0;
            while pos < idx.len() {
                idx[pos] += 1;
                if idx[pos] < k {
                    break;
                }
                idx[pos] = 0;
                pos += 1;
            }
            if pos == idx.len() {
                break;
            }
        }
    } else {
        consider(&choice);
        let mut dropped = choice.clone();
        for &t in &fractional {
            dropped[t] = 0;
        }
        consider(&dropped);
    }
    let mut starts: Vec<Vec<usize>> = best.into_iter().map(|(c, _, _)| c).collect();
    starts.extend(price_sweep(table, cons, cfg.restarts));
    starts.push(vec![0; h]);
    starts.dedup();
    let mut incumbent = vec![0; h];
    let mut inc_u = 0.0;
    let mut inc_c = 0.0;
    for start in starts {
        let cand = local_search(table, cons, start);
        let (u, c) = table.totals(&cand);
        if u > inc_u || (u == inc_u && c < inc_c) {
            (incumbent, inc_u, inc_c) = (cand, u, c);
        }
    }
    let incumbent = bounded_search(table, cons, incumbent, cfg.node_limit);
    ExpertSolution::from_choice(table, None, incumbent, bound, SolveMethod::Relaxed, lp.converged)
}

/// Depth-first branch and bound seeded with an incumbent. Prunes on budget,
/// on the best reachable ROI slack `U - L*C` and on the best reachable
/// utility. Stops after `node_limit` nodes and keeps the best found.
fn bounded_search(table: &SlotAggregateTable, cons: Constraints, incumbent: Vec<usize>, node_limit: usize) -> Vec<usize> {
    let h = table.slots();
    let floor = cons.roi_floor();
    let mut u_suffix = vec![0.0; h + 1];
    let mut slack_suffix = vec![0.0; h + 1];
    for t in (0..h).rev() {
        u_suffix[t] = u_suffix[t + 1] + table.utility[t].iter().cloned().fold(0.0, f64::max);
        let best_slack = (0..table.columns()).map(|k| table.utility[t][k] - floor * table.cost[t][k]).fold(0.0, f64::max);
        slack_suffix[t] = slack_suffix[t + 1] + best_slack;
    }
    let (u, c) = table.totals(&incumbent);
    let mut st = BranchState { best: incumbent, best_u: u, best_c: c, current: vec![0; h], nodes: 0, node_limit };
    branch(table, cons, &u_suffix, &slack_suffix, 0, 0.0, 0.0, &mut st);
    st.best
}

struct BranchState {
    best: Vec<usize>,
    best_u: f64,
    best_c: f64,
    current: Vec<usize>,
    nodes: usize,
    node_limit: usize,
}

#[allow(clippy::too_many_arguments)]
fn branch(table: &SlotAggregateTable, cons: Constraints, u_suffix: &[f64], slack_suffix: &[f64], t: usize, u: f64, c: f64, st: &mut BranchState) {
    st.nodes += 1;
    if t == table.slots() {
        if cons.admits(u, c) && (u > st.best_u || (u == st.best_u && c < st.best_c)) {
            st.best.copy_from_slice(&st.current);
            st.best_u = u;
            st.best_c = c;
        }
        return;
    }
    // high ratios first: good solutions appear early and tighten the bound
    for k in (0..table.columns()).rev() {
        if st.nodes >= st.node_limit {
            return;
        }
        let u2 = u + table.utility[t][k];
        let c2 = c + table.cost[t][k];
        if c2 > cons.budget_cap()
            || u2 + u_suffix[t + 1] < st.best_u
            || u2 - cons.roi_floor() * c2 + slack_suffix[t + 1] < 0.0
        {
            continue;
        }
        st.current[t] = k;
        branch(table, cons, u_suffix, slack_suffix, t + 1, u2, c2, st);
    }
    st.current[t] = 0;
}

/// Feasible per-slot maximisers of `U - theta * C`, best first. Relaxing both
/// coupling constraints with multipliers reduces to this one-parameter family,
/// so sweeping `theta` over every slope where some slot changes its choice
/// visits every Lagrangian solution.
fn price_sweep(table: &SlotAggregateTable, cons: Constraints, keep: usize) -> Vec<Vec<usize>> {
    let mut thetas = vec![0.0];
    for (u_row, c_row) in table.utility.iter().zip(&table.cost) {
        for i in 0..u_row.len() {
            for j in i + 1..u_row.len() {
                let dc = c_row[j] - c_row[i];
                if dc.abs() > 0.0 {
                    let slope = (u_row[j] - u_row[i]) / dc;
                    if slope > 0.0 {
                        thetas.push(slope * (1.0 - 1e-9));
                        thetas.push(slope * (1.0 + 1e-9));
                    }
                }
            }
        }
    }
    thetas.sort_by(f64::total_cmp);
    thetas.dedup();
    let mut found: Vec<(Vec<usize>, f64, f64)> = Vec::new();
    for theta in thetas {
        let choice: Vec<usize> = (0..table.slots())
            .map(|t| {
                let score = |j: usize| table.utility[t][j] - theta * table.cost[t][j];
                (0..table.columns()).fold(0, |b, j| if score(j) > score(b) { j } else { b })
            })
            .collect();
        let (u, c) = table.totals(&choice);
        if cons.admits(u, c) && !found.iter().any(|f| f.0 == choice) {
            found.push((choice, u, c));
        }
    }
    found.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.2.total_cmp(&b.2)));
    found.into_iter().take(keep).map(|f| f.0).collect()
}

/// Improving single-slot and two-slot moves until none remains.
fn local_search(table: &SlotAggregateTable, cons: Constraints, mut choice: Vec<usize>) -> Vec<usize> {
    let h = table.slots();
    let k = table.columns();
    let better = |u2: f64, c2: f64, u: f64, c: f64| {
        cons.admits(u2, c2) && (u2 > u * (1.0 + 1e-12) || (u2 >= u && c2 < c * (1.0 - 1e-12)))
    };
    let (mut u, mut c) = table.totals(&choice);
    loop {
        let mut moved = false;
        for t in 0..h {
            for j in 0..k {
                let u2 = u - table.utility[t][choice[t]] + table.utility[t][j];
                let c2 = c - table.cost[t][choice[t]] + table.cost[t][j];
                if j != choice[t] && better(u2, c2, u, c) {
                    choice[t] = j;
                    (u, c) = (u2, c2);
                    moved = true;
                }
            }
        }
        if !moved {
            let mut best: Option<(usize, usize, usize, usize, f64, f64)> = None;
            for t in 0..h {
                let (bu, bc) = (u - table.utility[t][choice[t]], c - table.cost[t][choice[t]]);
                for s in t + 1..h {
                    let (su, sc) = (bu - table.utility[s][choice[s]], bc - table.cost[s][choice[s]]);
                    for i in 0..k {
                        for j in 0..k {
                            let u2 = su + table.utility[t][i] + table.utility[s][j];
                            let c2 = sc + table.cost[t][i] + table.cost[s][j];
                            let (ru, rc) = best.map_or((u, c), |b| (b.4, b.5));
                            if better(u2, c2, ru, rc) {
                                best = Some((t, i, s, j, u2, c2));
                            }
                        }
                    }
                }
            }
            if let Some((t, i, s, j, u2, c2)) = best {
                choice[t] = i;
                choice[s] = j;
                (u, c) = (u2, c2);
                moved = true;
            }
        }
        if !moved {
            // recompute to shed accumulated drift before the final check
            let (u, c) = table.totals(&choice);
            if cons.admits(u, c) {
                return choice;
            }
            return vec![0; h];
        }
    }
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    /// `z[t][k]`, rows sum to one.
    pub z: Vec<Vec<f64>>,
    pub objective: f64,
    pub converged: bool,
    pub pivots: usize,
}

/// Dense primal simplex on the assignment LP, in units where `B = 1` and
/// `L * B = 1`. The all-abstain assignment is the starting basis.
pub fn solve_assignment_lp(table: &SlotAggregateTable, cons: Constraints, max_pivots: usize) -> LpSolution {
    let h = table.slots();
    let k = table.columns();
    let scale_u = cons.roi_target * cons.budget;
    let scale_c = cons.budget;
    let nz = h * k;
    let n = nz + 2; // + budget slack + roi slack
    let m = h + 2;
    let width = n + 1;
    let mut tab = vec![0.0; (m + 1) * width];
    let at = |r: usize, c: usize| r * width + c;
    let roi_mult = CONSTRAINT_MARGIN + 1.0;
    for t in 0..h {
        for j in 0..k {
            let col = t * k + j;
            let u = table.utility[t][j] / scale_u;
            let c = table.cost[t][j] / scale_c;
            tab[at(t, col)] = 1.0;
            tab[at(h, col)] = c;
            tab[at(h + 1, col)] = c * roi_mult - u;
            // objective row holds reduced costs of a maximisation
            tab[at(m, col)] = u;
        }
        tab[at(t, n)] = 1.0;
    }
    tab[at(h, nz)] = 1.0;
    tab[at(h, n)] = 1.0 - CONSTRAINT_MARGIN;
    tab[at(h + 1, nz + 1)] = 1.0;
    let mut basis: Vec<usize> = (0..h).map(|t| t * k).chain([nz, nz + 1]).collect();
    // price out the initial basis (abstain columns have zero objective)
    for r in 0..m {
        let cb = if basis[r] < nz { tab[at(m, basis[r])] } else { 0.0 };
        if cb != 0.0 {
            for c in 0..width {
                tab[at(m, c)] -= cb * tab[at(r, c)];
            }
        }
    }

    const EPS: f64 = 1e-11;
    let mut pivots = 0;
    let mut converged = false;
    while pivots < max_pivots {
        // Bland's rule: lowest-index improving column
        let Some(enter) = (0..n).find(|&c| tab[at(m, c)] > EPS) else {
            converged = true;
            break;
        };
        let mut leave: Option<(usize, f64)> = None;
        for r in 0..m {
            let a = tab[at(r, enter)];
            if a > EPS {
                let ratio = tab[at(r, n)] / a;
                match leave {
                    None => leave = Some((r, ratio)),
                    Some((lr, lratio)) => {
                        if ratio < lratio - 1e-14 || (ratio <= lratio + 1e-14 && basis[r] < basis[lr]) {
                            leave = Some((r, ratio));
                        }
                    }
                }
            }
        }
        // bounded: every column has a positive entry in its convexity row
        let (pr, _) = leave.expect("assignment LP is bounded");
        let pivot = tab[at(pr, enter)];
        for c in 0..width {
            tab[at(pr, c)] /= pivot;
        }
        for r in 0..=m {
            if r == pr {
                continue;
            }
            let f = tab[at(r, enter)];
            if f != 0.0 {
                for c in 0..width {
                    tab[at(r, c)] -= f * tab[at(pr, c)];
                }
            }
        }
        basis[pr] = enter;
        pivots += 1;
    }

    let mut z = vec![vec![0.0; k]; h];
    for (r, &b) in basis.iter().enumerate() {
        if b < nz {
            z[b / k][b % k] = tab[at(r, n)].max(0.0);
        }
    }
    let objective = z
        .iter()
        .enumerate()
        .map(|(t, row)| row.iter().zip(&table.utility[t]).map(|(w, u)| w * u).sum::<f64>())
        .sum();
    LpSolution { z, objective, converged, pivots }
}

/// Best constant ratio on the grid under full budget-enforced replay.
pub fn best_constant_ratio(day: &EnvironmentDay, grid: &RatioGrid) -> Result<(f64, f64)> {
    let mut best = (0.0, 0.0);
    for &a in grid.ratios() {
        let rec = env::replay_sequence(day, "constant", &[a])?;
        if rec.outcome.roi >= day.roi_target && rec.outcome.utility > best.1 {
            best = (a, rec.outcome.utility);
        }
    }
    Ok(best)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpertConfig {
    pub grid_points: usize,
    pub relaxed: RelaxedConfig,
    /// Replay mismatch (fraction of `U*`) above which a day is flagged.
    pub mismatch_tolerance: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        ExpertConfig { grid_points: 32, relaxed: RelaxedConfig::default(), mismatch_tolerance: 0.005 }
    }
}

/// Expert for one day, re-validated by budget-enforced replay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DayExpert {
    pub day_id: u32,
    pub solution: ExpertSolution,
    /// Replayed demonstration (observations paired with expert ratios).
    pub demonstration: EpisodeRecord,
    pub flagged: bool,
}

impl DayExpert {
    /// Value used as `U*` by the metrics; zero marks an infeasible day.
    pub fn value(&self) -> f64 {
        self.solution.utility
    }
}

pub fn solve_day(day: &EnvironmentDay, cfg: &ExpertConfig) -> Result<DayExpert> {
    let grid = RatioGrid::for_day(day, cfg.grid_points)?;
    let table = build_slot_aggregates(day, &grid)?;
    let cons = Constraints::of(day);
    let solution = if (grid.len() as f64).powi(day.slots() as i32) <= BRUTEFORCE_LIMIT {
        solve_bruteforce(&table, cons)?
    } else {
        solve_relaxed(&table, cons, cfg.relaxed)
    }
    .with_grid(&grid);
    let demonstration = env::replay_sequence(day, "expert", &solution.ratios)?;
    let mismatch = (demonstration.outcome.utility - solution.utility).abs();
    let flagged = mismatch > cfg.mismatch_tolerance * solution.utility.max(f64::MIN_POSITIVE) || demonstration.outcome.truncated;
    Ok(DayExpert { day_id: day.day_id, solution, demonstration, flagged })
}
