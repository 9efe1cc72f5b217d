//! Centralized exact reference solver.
//!
//! The coordination loop never needs this module; it exists to certify runs.
//! [`solve_central`] computes the true minimum generation cost over every
//! joint appliance schedule in every household — the quantity the distributed
//! run approaches from above — and [`unsmoothed_dual`] evaluates the plain
//! (no-smoothing) dual, which lower-bounds that optimum at any prices, so
//! gap and weak-duality checks have an independent yardstick.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coordinator::HouseholdAssignment;
use crate::model::{
    choice_demand, ApplianceChoice, ApplianceKind, ChoiceDecision, DemandProfile, HouseholdSpec,
};
use crate::scenario::{Scenario, ScenarioError};
use crate::solver::{solve_aggregator, solve_household_exact};

/// Default limit on branch-and-bound nodes before giving up.
pub const DEFAULT_NODE_BUDGET: u64 = 10_000_000;

/// Largest joint choice space [`solve_central`] accepts, in leaf schedules.
/// Instances beyond it are refused up front rather than ground through.
pub const CENTRAL_CHOICE_CAP: u128 = 10_000_000;

/// Cap on exhaustive enumeration, in joint schedules.
pub const DEFAULT_CENTRAL_BRUTEFORCE_CAP: u128 = 2_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    /// Minimum generation cost over all cap-respecting joint schedules.
    pub objective: f64,
    /// One entry per household, ascending household id.
    pub assignments: Vec<HouseholdAssignment>,
    /// Summed demand of the optimal schedules, one entry per slot.
    pub total_demand: Vec<f64>,
    /// Search nodes expanded (combinations evaluated, for the exhaustive
    /// solver).
    pub nodes_explored: u64,
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error(transparent)]
    Invalid(#[from] ScenarioError),
    #[error("search exceeded its budget of {budget} nodes; raise the budget or shrink the instance")]
    BudgetExceeded { budget: u64 },
    #[error("joint choice space of {count} schedules exceeds the enumeration cap {cap}")]
    ChoiceSpaceTooLarge { count: u128, cap: u128 },
    #[error("no joint schedule satisfies the supply caps")]
    Infeasible,
}

/// Exact centralized optimum by depth-first branch and bound.
///
/// Instances whose joint choice space exceeds [`CENTRAL_CHOICE_CAP`] leaf
/// schedules are refused up front; `node_budget` additionally limits the
/// search work on admitted instances.
///
/// Appliances across all households are assigned in descending-energy order
/// (ties broken by household and appliance id) while the running total
/// demand and its generation cost are maintained incrementally. Each node is
/// bounded below by the larger of two admissible completions: the sum of
/// every unassigned appliance's cheapest marginal cost against the current
/// total, and a linearization of the convex generation cost around the
/// incumbent's own placements for the unassigned appliances — the latter
/// undershoots only by the squared deviation from the incumbent, so
/// near-incumbent subtrees are fathomed almost exactly. Children are
/// explored cheapest-first, a greedy best-response pass seeds the incumbent,
/// and only strict improvements replace it. Interruptible appliances branch
/// one active slot at a time in ascending order. Placements that would break
/// a supply cap are pruned as infeasible.
pub fn solve_central(scenario: &Scenario, node_budget: u64) -> Result<OracleResult, OracleError> {
    scenario.validate()?;
    let count = scenario
        .households
        .iter()
        .fold(1u128, |acc, h| acc.saturating_mul(h.joint_choice_count()));
    if count > CENTRAL_CHOICE_CAP {
        return Err(OracleError::ChoiceSpaceTooLarge { count, cap: CENTRAL_CHOICE_CAP });
    }
    let mut search = CentralSearch::new(scenario, node_budget);
    search.seed_greedy();
    search.polish_incumbent();
    search.dfs_appliance(0)?;
    search.into_result(scenario)
}

/// Exhaustive centralized reference: enumerates every joint schedule, keeps
/// the first strict minimum, and refuses instances larger than `cap`.
pub fn solve_central_bruteforce(
    scenario: &Scenario,
    cap: u128,
) -> Result<OracleResult, OracleError> {
    use itertools::Itertools;
    scenario.validate()?;
    let households = sorted_households(scenario);
    let count = households
        .iter()
        .fold(1u128, |acc, h| acc.saturating_mul(h.joint_choice_count()));
    if count > cap {
        return Err(OracleError::ChoiceSpaceTooLarge { count, cap });
    }

    // One lex-ordered choice list per appliance, flattened household-major.
    let mut flat: Vec<(usize, &crate::model::Appliance)> = Vec::new();
    for (pos, household) in households.iter().enumerate() {
        let mut appliances: Vec<&crate::model::Appliance> = household.appliances.iter().collect();
        appliances.sort_by_key(|a| a.id);
        for appliance in appliances {
            flat.push((pos, appliance));
        }
    }
    let per_appliance: Vec<Vec<ApplianceChoice>> = flat
        .iter()
        .map(|(_, a)| {
            a.choices()
                .into_iter()
                .map(|decision| ApplianceChoice { appliance_id: a.id, decision })
                .collect()
        })
        .collect();

    let horizon = &scenario.horizon;
    let mut best: Option<(f64, Vec<ApplianceChoice>, Vec<f64>)> = None;
    let mut evaluated: u64 = 0;
    for combo in per_appliance.iter().multi_cartesian_product() {
        evaluated += 1;
        let mut total = vec![0.0; horizon.num_slots];
        for ((_, appliance), choice) in flat.iter().zip(&combo) {
            let demand = choice_demand(appliance, choice, horizon)
                .expect("enumerated choices are valid by construction");
            for (acc, x) in total.iter_mut().zip(demand.values()) {
                *acc += x;
            }
        }
        if total.iter().zip(&scenario.cost.slots).any(|(y, c)| *y > c.supply_cap) {
            continue;
        }
        let cost = scenario.cost.total_cost(&DemandProfile::from_raw(total.clone()));
        if best.as_ref().map_or(true, |(b, _, _)| cost < *b) {
            best = Some((cost, combo.into_iter().cloned().collect(), total));
        }
    }

    let (objective, choices, total_demand) = best.ok_or(OracleError::Infeasible)?;
    let assignments = group_choices(&households, &flat, &choices);
    Ok(OracleResult { objective, assignments, total_demand, nodes_explored: evaluated })
}

/// Plain dual value at `lambda`: the aggregator's optimal profit term plus
/// each household's cheapest schedule cost at those prices, with no proximal
/// or concave smoothing. Never exceeds the centralized optimum.
pub fn unsmoothed_dual(scenario: &Scenario, lambda: &[f64]) -> f64 {
    let (_, d0) = solve_aggregator(&scenario.cost, lambda);
    let mut value = d0;
    for spec in sorted_households(scenario) {
        value += solve_household_exact(spec, lambda, 0.0, &scenario.horizon).objective;
    }
    value
}

fn sorted_households(scenario: &Scenario) -> Vec<&HouseholdSpec> {
    let mut households: Vec<&HouseholdSpec> = scenario.households.iter().collect();
    households.sort_by_key(|h| h.id);
    households
}

fn group_choices(
    households: &[&HouseholdSpec],
    flat: &[(usize, &crate::model::Appliance)],
    choices: &[ApplianceChoice],
) -> Vec<HouseholdAssignment> {
    let mut assignments: Vec<HouseholdAssignment> = households
        .iter()
        .map(|h| HouseholdAssignment { household_id: h.id, choices: Vec::new() })
        .collect();
    for ((pos, _), choice) in flat.iter().zip(choices) {
        assignments[*pos].choices.push(choice.clone());
    }
    assignments
}

enum CentralKind {
    Profile(Vec<f64>),
    Uniform { duration: usize, power: f64 },
}

struct CentralApp {
    household_pos: usize,
    appliance_id: u32,
    /// Window bounds as 0-based offsets into the horizon.
    first: usize,
    last: usize,
    kind: CentralKind,
}

impl CentralApp {
    fn path_len(&self) -> usize {
        match &self.kind {
            CentralKind::Profile(_) => 1,
            CentralKind::Uniform { duration, .. } => *duration,
        }
    }
}

/// Total energy the appliance draws, regardless of placement.
fn app_energy(app: &CentralApp) -> f64 {
    match &app.kind {
        CentralKind::Profile(profile) => profile.iter().sum(),
        CentralKind::Uniform { duration, power } => *duration as f64 * power,
    }
}

/// Sum of the `count` smallest values yielded by `scores`, without sorting
/// or allocating for the window sizes that occur in practice. Yields
/// infinity when fewer than `count` values arrive, which any caller treats
/// as "no placement exists".
fn sum_smallest(count: usize, scores: impl Iterator<Item = f64>) -> f64 {
    if count == 0 {
        return 0.0;
    }
    if count <= 64 {
        let mut keep = [f64::INFINITY; 64];
        let keep = &mut keep[..count];
        for s in scores {
            if s < keep[count - 1] {
                let mut pos = count - 1;
                while pos > 0 && keep[pos - 1] > s {
                    keep[pos] = keep[pos - 1];
                    pos -= 1;
                }
                keep[pos] = s;
            }
        }
        keep.iter().sum()
    } else {
        let mut all: Vec<f64> = scores.collect();
        if all.len() < count {
            return f64::INFINITY;
        }
        all.sort_by(f64::total_cmp);
        all[..count].iter().sum()
    }
}

/// Marginal generation cost of adding `p` at slot `t` on top of `agg`.
fn slot_delta_on(agg: &[f64], c2: &[f64], c1: &[f64], t: usize, p: f64) -> f64 {
    c2[t] * p * (2.0 * agg[t] + p) + c1[t] * p
}

/// Marginal cost of a concrete placement (`slots` holds the start for a
/// profile appliance, or the active slots for an interruptible one).
fn placement_delta_on(
    agg: &[f64],
    c2: &[f64],
    c1: &[f64],
    app: &CentralApp,
    slots: &[usize],
) -> f64 {
    match &app.kind {
        CentralKind::Profile(profile) => profile
            .iter()
            .enumerate()
            .map(|(k, q)| slot_delta_on(agg, c2, c1, slots[0] + k, *q))
            .sum(),
        CentralKind::Uniform { power, .. } => {
            slots.iter().map(|&t| slot_delta_on(agg, c2, c1, t, *power)).sum()
        }
    }
}

/// Cheapest cap-respecting placement of `app` against `agg`, or `None` when
/// no placement fits under the caps. Ties keep the earliest slots.
fn best_placement_on(
    agg: &[f64],
    c2: &[f64],
    c1: &[f64],
    cap: &[f64],
    app: &CentralApp,
) -> Option<(f64, Vec<usize>)> {
    match &app.kind {
        CentralKind::Profile(profile) => {
            let mut best: Option<(f64, usize)> = None;
            for start in app.first..=app.last + 1 - profile.len() {
                let fits = profile
                    .iter()
                    .enumerate()
                    .all(|(k, q)| agg[start + k] + q <= cap[start + k]);
                if !fits {
                    continue;
                }
                let delta = placement_delta_on(agg, c2, c1, app, &[start]);
                if best.map_or(true, |(b, _)| delta < b) {
                    best = Some((delta, start));
                }
            }
            best.map(|(delta, start)| (delta, vec![start]))
        }
        CentralKind::Uniform { duration, power } => {
            let mut scored: Vec<(f64, usize)> = (app.first..=app.last)
                .filter(|&t| agg[t] + power <= cap[t])
                .map(|t| (slot_delta_on(agg, c2, c1, t, *power), t))
                .collect();
            if scored.len() < *duration {
                return None;
            }
            scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let delta: f64 = scored[..*duration].iter().map(|s| s.0).sum();
            let mut slots: Vec<usize> = scored[..*duration].iter().map(|s| s.1).collect();
            slots.sort_unstable();
            Some((delta, slots))
        }
    }
}

/// Add (`sign` = 1) or remove (`sign` = −1) a placed appliance's load.
fn apply_load(agg: &mut [f64], app: &CentralApp, slots: &[usize], sign: f64) {
    match &app.kind {
        CentralKind::Profile(profile) => {
            for (k, q) in profile.iter().enumerate() {
                agg[slots[0] + k] += sign * q;
            }
        }
        CentralKind::Uniform { power, .. } => {
            for &t in slots {
                agg[t] += sign * power;
            }
        }
    }
}

struct CentralSearch {
    c2: Vec<f64>,
    c1: Vec<f64>,
    cap: Vec<f64>,
    apps: Vec<CentralApp>,
    /// Running total demand of the assigned prefix.
    agg: Vec<f64>,
    /// Generation cost of `agg`, maintained incrementally.
    objective: f64,
    path: Vec<u32>,
    /// Saved values for exact restoration on backtrack.
    undo: Vec<f64>,
    /// Row `i` (of `apps.len() + 1` rows, one column per slot) holds the
    /// summed per-slot load of appliances `i..` as placed by the current
    /// incumbent — the reference point for [`Self::reference_bound`]. All
    /// zeros until a first incumbent exists.
    ref_suffix: Vec<f64>,
    best: Option<(f64, Vec<u32>)>,
    nodes: u64,
    budget: u64,
}

impl CentralSearch {
    fn new(scenario: &Scenario, budget: u64) -> Self {
        let horizon = &scenario.horizon;
        let mut apps = Vec::new();
        for (pos, household) in sorted_households(scenario).iter().enumerate() {
            let mut appliances: Vec<&crate::model::Appliance> =
                household.appliances.iter().collect();
            appliances.sort_by_key(|a| a.id);
            for appliance in appliances {
                let kind = match &appliance.kind {
                    ApplianceKind::NonInterruptible { profile } => {
                        CentralKind::Profile(profile.clone())
                    }
                    ApplianceKind::Interruptible { duration, power } => {
                        CentralKind::Uniform { duration: *duration, power: *power }
                    }
                };
                apps.push(CentralApp {
                    household_pos: pos,
                    appliance_id: appliance.id,
                    first: horizon.offset_of(appliance.window.first),
                    last: horizon.offset_of(appliance.window.last),
                    kind,
                });
            }
        }
        // Assign high-energy appliances first: they dominate the quadratic
        // interaction, so placing them early makes both bounds sharp near
        // the root. Ties fall back to (household, appliance) order.
        apps.sort_by(|a, b| {
            app_energy(b)
                .total_cmp(&app_energy(a))
                .then(a.household_pos.cmp(&b.household_pos))
                .then(a.appliance_id.cmp(&b.appliance_id))
        });
        let num_slots = horizon.num_slots;
        CentralSearch {
            c2: scenario.cost.slots.iter().map(|c| c.quadratic).collect(),
            c1: scenario.cost.slots.iter().map(|c| c.linear).collect(),
            cap: scenario.cost.slots.iter().map(|c| c.supply_cap).collect(),
            ref_suffix: vec![0.0; (apps.len() + 1) * num_slots],
            apps,
            agg: vec![0.0; num_slots],
            objective: 0.0,
            path: Vec::new(),
            undo: Vec::new(),
            best: None,
            nodes: 0,
            budget,
        }
    }

    /// Marginal generation cost of adding `p` at slot `t` on top of `agg`.
    fn slot_delta(&self, t: usize, p: f64) -> f64 {
        slot_delta_on(&self.agg, &self.c2, &self.c1, t, p)
    }

    fn profile_delta(&self, start: usize, profile: &[f64]) -> f64 {
        let mut delta = 0.0;
        for (j, q) in profile.iter().enumerate() {
            delta += self.slot_delta(start + j, *q);
        }
        delta
    }

    fn slot_feasible(&self, t: usize, p: f64) -> bool {
        self.agg[t] + p <= self.cap[t]
    }

    fn profile_feasible(&self, start: usize, profile: &[f64]) -> bool {
        profile.iter().enumerate().all(|(j, q)| self.slot_feasible(start + j, *q))
    }

    fn push_slot(&mut self, t: usize, p: f64) {
        self.undo.push(self.objective);
        self.objective += self.slot_delta(t, p);
        self.undo.push(self.agg[t]);
        self.agg[t] += p;
        self.path.push(t as u32);
    }

    fn pop_slot(&mut self, t: usize) {
        self.path.pop();
        self.agg[t] = self.undo.pop().expect("undo stack misaligned");
        self.objective = self.undo.pop().expect("undo stack misaligned");
    }

    fn push_profile(&mut self, start: usize, profile: &[f64]) {
        self.undo.push(self.objective);
        self.objective += self.profile_delta(start, profile);
        for (j, q) in profile.iter().enumerate() {
            self.undo.push(self.agg[start + j]);
            self.agg[start + j] += q;
        }
        self.path.push(start as u32);
    }

    fn pop_profile(&mut self, start: usize, profile: &[f64]) {
        self.path.pop();
        for j in (0..profile.len()).rev() {
            self.agg[start + j] = self.undo.pop().expect("undo stack misaligned");
        }
        self.objective = self.undo.pop().expect("undo stack misaligned");
    }

    /// Cheapest marginal cost of appliance `app` against the current total,
    /// ignoring caps (a relaxation, so the value never overestimates).
    fn min_marginal(&self, app: &CentralApp) -> f64 {
        match &app.kind {
            CentralKind::Profile(profile) => {
                let mut best = f64::INFINITY;
                for start in app.first..=app.last + 1 - profile.len() {
                    let delta = self.profile_delta(start, profile);
                    if delta < best {
                        best = delta;
                    }
                }
                best
            }
            CentralKind::Uniform { duration, power } => {
                // At a fixed total the chosen slots do not interact, so the
                // exact minimum is the sum of the `duration` cheapest slots.
                sum_smallest(
                    *duration,
                    (app.first..=app.last).map(|t| self.slot_delta(t, *power)),
                )
            }
        }
    }

    /// Marginal price of slot `t` if the appliances in `ref_suffix` row
    /// `from` were added on top of the current total.
    fn reference_price(&self, from: usize, t: usize) -> f64 {
        let r = self.ref_suffix[from * self.agg.len() + t];
        2.0 * self.c2[t] * (self.agg[t] + r) + self.c1[t]
    }

    /// Cheapest placement of `app` when each slot charges the fixed price
    /// `price(t)` per unit of energy.
    fn cheapest_at_prices(&self, app: &CentralApp, price: impl Fn(usize) -> f64) -> f64 {
        match &app.kind {
            CentralKind::Profile(profile) => {
                let mut best = f64::INFINITY;
                for start in app.first..=app.last + 1 - profile.len() {
                    let cost: f64 =
                        profile.iter().enumerate().map(|(j, q)| price(start + j) * q).sum();
                    best = best.min(cost);
                }
                best
            }
            CentralKind::Uniform { duration, power } => {
                sum_smallest(*duration, (app.first..=app.last).map(|t| price(t) * power))
            }
        }
    }

    /// Linearization of the completion cost around the incumbent's own
    /// placements of appliances `from..`.
    ///
    /// With reference loads `R` (row `from` of `ref_suffix`) on top of the
    /// current total `A`, any completion `Z` costs
    /// `Σ_t c2·((A+Z)² − A²) + c1·Z = Σ_t p̄·Z − c2·R² + c2·(Z − R)²`
    /// at prices `p̄ = 2·c2·(A+R) + c1`. Dropping the final square and
    /// minimizing `Σ p̄·Z` separately per appliance (windows kept, caps and
    /// cross-appliance coupling relaxed) never overestimates, and it
    /// undershoots only by the squared deviation from the incumbent — so
    /// subtrees whose best completion resembles the incumbent's are fathomed
    /// almost exactly.
    fn reference_bound(&self, from: usize) -> f64 {
        let num_slots = self.agg.len();
        let mut bound = 0.0;
        for t in 0..num_slots {
            let r = self.ref_suffix[from * num_slots + t];
            bound -= self.c2[t] * r * r;
        }
        for app in &self.apps[from..] {
            bound += self.cheapest_at_prices(app, |t| self.reference_price(from, t));
        }
        bound
    }

    /// Lower bound on the cost the unassigned suffix must still add: the
    /// larger of the per-appliance cheapest-marginal sum (exact when one
    /// appliance remains, since it includes that appliance's own quadratic)
    /// and the incumbent linearization (tight whenever the subtree's best
    /// completion stays close to the incumbent's placements).
    ///
    /// Any return value at or above `stop_at` already prunes the caller, so
    /// the pricier linearization is skipped once the marginal sum clears it;
    /// pass infinity to force the full bound.
    fn tail_bound(&self, from: usize, stop_at: f64) -> f64 {
        let marginal: f64 = self.apps[from..].iter().map(|app| self.min_marginal(app)).sum();
        if marginal >= stop_at {
            return marginal;
        }
        marginal.max(self.reference_bound(from))
    }

    fn beats_incumbent(&self, bound: f64) -> bool {
        self.best.as_ref().map_or(true, |(b, _)| bound < *b)
    }

    fn offer_leaf(&mut self) {
        if self.best.as_ref().map_or(true, |(b, _)| self.objective < *b) {
            self.best = Some((self.objective, self.path.clone()));
            self.rebuild_reference();
        }
    }

    /// Refresh `ref_suffix` from the incumbent: row `i` holds the summed
    /// per-slot loads of appliances `i..` at the incumbent's placements.
    fn rebuild_reference(&mut self) {
        let num_slots = self.agg.len();
        let path = match &self.best {
            Some((_, path)) => path.clone(),
            None => return,
        };
        self.ref_suffix.iter_mut().for_each(|v| *v = 0.0);
        let mut cursor = 0;
        for (i, app) in self.apps.iter().enumerate() {
            let row = i * num_slots;
            match &app.kind {
                CentralKind::Profile(profile) => {
                    let start = path[cursor] as usize;
                    for (j, q) in profile.iter().enumerate() {
                        self.ref_suffix[row + start + j] += q;
                    }
                }
                CentralKind::Uniform { duration, power } => {
                    for k in 0..*duration {
                        self.ref_suffix[row + path[cursor + k] as usize] += power;
                    }
                }
            }
            cursor += app.path_len();
        }
        for i in (0..self.apps.len()).rev() {
            for t in 0..num_slots {
                self.ref_suffix[i * num_slots + t] += self.ref_suffix[(i + 1) * num_slots + t];
            }
        }
    }

    fn charge_node(&mut self) -> Result<(), OracleError> {
        self.nodes += 1;
        if self.nodes > self.budget {
            return Err(OracleError::BudgetExceeded { budget: self.budget });
        }
        Ok(())
    }

    fn dfs_appliance(&mut self, i: usize) -> Result<(), OracleError> {
        if i == self.apps.len() {
            self.offer_leaf();
            return Ok(());
        }
        self.charge_node()?;
        let stop_at =
            self.best.as_ref().map_or(f64::INFINITY, |(b, _)| *b) - self.objective;
        if !self.beats_incumbent(self.objective + self.tail_bound(i, stop_at)) {
            return Ok(());
        }
        // Frozen for the child loop, so it must be the full-strength bound.
        let tail = self.tail_bound(i + 1, f64::INFINITY);
        match &self.apps[i].kind {
            CentralKind::Profile(profile) => {
                let profile = profile.clone();
                let (first, last) = (self.apps[i].first, self.apps[i].last);
                let mut children: Vec<(f64, usize)> = (first..=last + 1 - profile.len())
                    .filter(|s| self.profile_feasible(*s, &profile))
                    .map(|s| (self.profile_delta(s, &profile), s))
                    .collect();
                children.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                for (delta, start) in children {
                    if !self.beats_incumbent(self.objective + delta + tail) {
                        break; // children are sorted; no later one can do better
                    }
                    self.push_profile(start, &profile);
                    self.dfs_appliance(i + 1)?;
                    self.pop_profile(start, &profile);
                }
            }
            CentralKind::Uniform { duration, power } => {
                let (duration, power) = (*duration, *power);
                self.dfs_slots(i, duration, self.apps[i].first, power, tail)?;
            }
        }
        Ok(())
    }

    /// Branch the next active slot of interruptible appliance `i`, choosing
    /// slots in ascending order starting no earlier than `lo`.
    fn dfs_slots(
        &mut self,
        i: usize,
        remaining: usize,
        lo: usize,
        power: f64,
        tail: f64,
    ) -> Result<(), OracleError> {
        if remaining == 0 {
            return self.dfs_appliance(i + 1);
        }
        self.charge_node()?;
        let last = self.apps[i].last;
        let mut children: Vec<(f64, usize)> = (lo..=last)
            .filter(|t| self.slot_feasible(*t, power))
            .map(|t| (self.slot_delta(t, power), t))
            .collect();
        if children.len() < remaining {
            return Ok(()); // not enough feasible slots left
        }
        // Completing the appliance needs `remaining − 1` further slots; the
        // cheapest that could possibly cost is the sum of the smallest
        // feasible scores, regardless of position.
        let mut sorted: Vec<f64> = children.iter().map(|c| c.0).collect();
        sorted.sort_by(f64::total_cmp);
        let completion: f64 = sorted[..remaining - 1].iter().sum();
        children.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (delta, t) in children {
            if t + remaining - 1 > last {
                continue; // no room for the remaining slots after `t`
            }
            if !self.beats_incumbent(self.objective + delta + completion + tail) {
                break;
            }
            self.push_slot(t, power);
            self.dfs_slots(i, remaining - 1, t + 1, power, tail)?;
            self.pop_slot(t);
        }
        Ok(())
    }

    /// Assign each appliance in order to its cheapest cap-respecting
    /// placement against the running total, offer the leaf as the starting
    /// incumbent, and rewind. Uses the same float paths as the search so the
    /// incumbent is bit-identical to the equivalent leaf.
    fn seed_greedy(&mut self) {
        let mut pushed: Vec<(usize, Option<usize>)> = Vec::new(); // (app index, profile start)
        let mut complete = true;
        for i in 0..self.apps.len() {
            match &self.apps[i].kind {
                CentralKind::Profile(profile) => {
                    let profile = profile.clone();
                    let (first, last) = (self.apps[i].first, self.apps[i].last);
                    let mut best: Option<(f64, usize)> = None;
                    for start in first..=last + 1 - profile.len() {
                        if !self.profile_feasible(start, &profile) {
                            continue;
                        }
                        let delta = self.profile_delta(start, &profile);
                        if best.map_or(true, |(b, _)| delta < b) {
                            best = Some((delta, start));
                        }
                    }
                    let Some((_, start)) = best else {
                        complete = false;
                        break;
                    };
                    self.push_profile(start, &profile);
                    pushed.push((i, Some(start)));
                }
                CentralKind::Uniform { duration, power } => {
                    let (duration, power) = (*duration, *power);
                    let (first, last) = (self.apps[i].first, self.apps[i].last);
                    let mut scores: Vec<(f64, usize)> = (first..=last)
                        .filter(|t| self.slot_feasible(*t, power))
                        .map(|t| (self.slot_delta(t, power), t))
                        .collect();
                    if scores.len() < duration {
                        complete = false;
                        break;
                    }
                    scores.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                    let mut slots: Vec<usize> = scores[..duration].iter().map(|s| s.1).collect();
                    slots.sort_unstable();
                    for t in slots {
                        self.push_slot(t, power);
                    }
                    pushed.push((i, None));
                }
            }
        }
        if complete {
            self.offer_leaf();
        }
        for (i, start) in pushed.into_iter().rev() {
            match (&self.apps[i].kind, start) {
                (CentralKind::Profile(profile), Some(start)) => {
                    let profile = profile.clone();
                    self.pop_profile(start, &profile);
                }
                (CentralKind::Uniform { duration, .. }, _) => {
                    for _ in 0..*duration {
                        let t = *self.path.last().expect("path misaligned") as usize;
                        self.pop_slot(t);
                    }
                }
                _ => unreachable!("profile pushes always record their start"),
            }
        }
        debug_assert!(self.path.is_empty() && self.undo.is_empty());
        debug_assert_eq!(self.objective, 0.0);
    }

    /// Improve the incumbent by cyclic best response: repeatedly re-place
    /// each appliance optimally against everything else until a full pass
    /// changes nothing. Selection runs on a scratch total (floating-point
    /// drift there can only affect which candidate is proposed); the final
    /// schedule is re-evaluated through the exact incremental path before it
    /// may replace the incumbent, so the incumbent stays bit-identical to
    /// the equivalent search leaf. A near-optimal incumbent matters twice:
    /// it prunes directly, and it sharpens the reference linearization.
    fn polish_incumbent(&mut self) {
        let Some((_, path)) = &self.best else { return };
        let path = path.clone();
        let mut placements: Vec<Vec<usize>> = Vec::with_capacity(self.apps.len());
        let mut cursor = 0;
        for app in &self.apps {
            let len = app.path_len();
            placements.push(path[cursor..cursor + len].iter().map(|t| *t as usize).collect());
            cursor += len;
        }
        let mut scratch = vec![0.0; self.agg.len()];
        for (app, slots) in self.apps.iter().zip(&placements) {
            apply_load(&mut scratch, app, slots, 1.0);
        }
        for _pass in 0..32 {
            let mut improved = false;
            for j in 0..self.apps.len() {
                let app = &self.apps[j];
                apply_load(&mut scratch, app, &placements[j], -1.0);
                let current = placement_delta_on(&scratch, &self.c2, &self.c1, app, &placements[j]);
                if let Some((delta, slots)) =
                    best_placement_on(&scratch, &self.c2, &self.c1, &self.cap, app)
                {
                    if delta < current && slots != placements[j] {
                        placements[j] = slots;
                        improved = true;
                    }
                }
                apply_load(&mut scratch, app, &placements[j], 1.0);
            }
            if !improved {
                break;
            }
        }
        for (j, slots) in placements.iter().enumerate() {
            match &self.apps[j].kind {
                CentralKind::Profile(profile) => {
                    let profile = profile.clone();
                    self.push_profile(slots[0], &profile);
                }
                CentralKind::Uniform { power, .. } => {
                    let power = *power;
                    for &t in slots {
                        self.push_slot(t, power);
                    }
                }
            }
        }
        // Caps were only checked against the drifting scratch total, so
        // confirm them on the exactly maintained one.
        if self.agg.iter().zip(&self.cap).all(|(a, c)| a <= c) {
            self.offer_leaf();
        }
        for (j, slots) in placements.iter().enumerate().rev() {
            match &self.apps[j].kind {
                CentralKind::Profile(profile) => {
                    let profile = profile.clone();
                    self.pop_profile(slots[0], &profile);
                }
                CentralKind::Uniform { .. } => {
                    for &t in slots.iter().rev() {
                        self.pop_slot(t);
                    }
                }
            }
        }
        debug_assert!(self.path.is_empty() && self.undo.is_empty());
        debug_assert_eq!(self.objective, 0.0);
    }

    fn into_result(self, scenario: &Scenario) -> Result<OracleResult, OracleError> {
        let (_, encoding) = self.best.ok_or(OracleError::Infeasible)?;
        let households = sorted_households(scenario);
        let mut assignments: Vec<HouseholdAssignment> = households
            .iter()
            .map(|h| HouseholdAssignment { household_id: h.id, choices: Vec::new() })
            .collect();
        let start_slot = scenario.horizon.start_slot;
        let mut cursor = 0;
        for app in &self.apps {
            let decision = match &app.kind {
                CentralKind::Profile(_) => {
                    let start = encoding[cursor] as usize + start_slot;
                    ChoiceDecision::Start(start)
                }
                CentralKind::Uniform { duration, .. } => {
                    let slots: Vec<usize> = encoding[cursor..cursor + duration]
                        .iter()
                        .map(|t| *t as usize + start_slot)
                        .collect();
                    ChoiceDecision::Slots(slots)
                }
            };
            cursor += app.path_len();
            assignments[app.household_pos]
                .choices
                .push(ApplianceChoice { appliance_id: app.appliance_id, decision });
        }
        // The search assigns appliances in energy order; report them in id
        // order like every other producer of assignments.
        for assignment in &mut assignments {
            assignment.choices.sort_by_key(|c| c.appliance_id);
        }

        // Recompute demand and cost from the decoded assignment so the
        // reported numbers are an audit of the schedule, not of the search's
        // incremental arithmetic.
        let mut total = DemandProfile::zeros(scenario.horizon.num_slots);
        for (household, assignment) in households.iter().zip(&assignments) {
            let demand =
                crate::model::household_demand(household, &assignment.choices, &scenario.horizon)
                    .expect("search produces exactly one valid choice per appliance");
            total.add_assign(&demand);
        }
        let objective = scenario.cost.total_cost(&total);
        Ok(OracleResult {
            objective,
            assignments,
            total_demand: total.values().to_vec(),
            nodes_explored: self.nodes,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Appliance, SlotRange, TimeHorizon};
    use crate::scenario::{generate_scenario, GenerationConfig, ScenarioMetadata};
    use crate::solver::AggregatorCostModel;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scenario_from_parts(
        num_slots: usize,
        households: Vec<HouseholdSpec>,
        cost: AggregatorCostModel,
    ) -> Scenario {
        Scenario {
            horizon: TimeHorizon::new(0, num_slots, 1.0),
            households,
            cost,
            metadata: ScenarioMetadata { name: "test".into(), seed: 0 },
        }
    }

    fn tiny_generated(seed: u64) -> Scenario {
        let config = GenerationConfig {
            noninterruptible_duration: (1, 2),
            interruptible_duration: (2, 3),
            noninterruptible_window_slack: 1,
            interruptible_window_slack: 1,
            ..GenerationConfig::default()
        };
        generate_scenario(seed, 2, 6, 2, &config).unwrap()
    }

    #[test]
    fn single_appliance_picks_the_cheap_slot() {
        let household = HouseholdSpec {
            id: 0,
            appliances: vec![Appliance {
                id: 0,
                window: SlotRange::new(0, 1),
                kind: ApplianceKind::NonInterruptible { profile: vec![1.0] },
            }],
        };
        let cost = AggregatorCostModel {
            slots: vec![
                crate::solver::SlotCost { quadratic: 1.0, linear: 0.5, supply_cap: 10.0 },
                crate::solver::SlotCost { quadratic: 1.0, linear: 0.1, supply_cap: 10.0 },
            ],
        };
        let scenario = scenario_from_parts(2, vec![household], cost);
        let result = solve_central(&scenario, DEFAULT_NODE_BUDGET).unwrap();
        assert_relative_eq!(result.objective, 1.1, max_relative = 1e-12);
        assert_eq!(
            result.assignments[0].choices[0].decision,
            ChoiceDecision::Start(1)
        );
        assert_eq!(result.total_demand, vec![0.0, 1.0]);
    }

    #[test]
    fn quadratic_cost_spreads_identical_loads() {
        // Two households, one unit-power single-slot appliance each. With a
        // purely quadratic cost, stacking costs 4 and splitting costs 2.
        let household = |id: u32| HouseholdSpec {
            id,
            appliances: vec![Appliance {
                id: 0,
                window: SlotRange::new(0, 1),
                kind: ApplianceKind::Interruptible { duration: 1, power: 1.0 },
            }],
        };
        let cost = AggregatorCostModel::uniform(2, 1.0, 0.0, 10.0);
        let scenario = scenario_from_parts(2, vec![household(0), household(1)], cost);
        let result = solve_central(&scenario, DEFAULT_NODE_BUDGET).unwrap();
        assert_relative_eq!(result.objective, 2.0, max_relative = 1e-12);
        let mut total = result.total_demand.clone();
        total.sort_by(f64::total_cmp);
        assert_eq!(total, vec![1.0, 1.0]);
    }

    #[test]
    fn supply_caps_force_detours() {
        // Both appliances prefer slot 0 (linear cost 0 vs 1) but the cap
        // admits only one; the optimum pays the expensive slot once.
        let household = |id: u32| HouseholdSpec {
            id,
            appliances: vec![Appliance {
                id: 0,
                window: SlotRange::new(0, 1),
                kind: ApplianceKind::Interruptible { duration: 1, power: 1.0 },
            }],
        };
        let cost = AggregatorCostModel {
            slots: vec![
                crate::solver::SlotCost { quadratic: 0.0, linear: 0.0, supply_cap: 1.0 },
                crate::solver::SlotCost { quadratic: 0.0, linear: 1.0, supply_cap: 1.0 },
            ],
        };
        let scenario = scenario_from_parts(2, vec![household(0), household(1)], cost);
        let result = solve_central(&scenario, DEFAULT_NODE_BUDGET).unwrap();
        assert_relative_eq!(result.objective, 1.0, max_relative = 1e-12);
        assert_eq!(result.total_demand, vec![1.0, 1.0]);

        // Halve the caps and nothing fits at all.
        let mut strangled = scenario.clone();
        for slot in &mut strangled.cost.slots {
            slot.supply_cap = 0.5;
        }
        assert!(matches!(
            solve_central(&strangled, DEFAULT_NODE_BUDGET),
            Err(OracleError::Infeasible)
        ));
        assert!(matches!(
            solve_central_bruteforce(&strangled, DEFAULT_CENTRAL_BRUTEFORCE_CAP),
            Err(OracleError::Infeasible)
        ));
    }

    #[test]
    fn branch_and_bound_matches_exhaustive_enumeration() {
        for seed in 0..25 {
            let scenario = tiny_generated(seed);
            let fast = solve_central(&scenario, DEFAULT_NODE_BUDGET).unwrap();
            let slow =
                solve_central_bruteforce(&scenario, DEFAULT_CENTRAL_BRUTEFORCE_CAP).unwrap();
            assert_relative_eq!(fast.objective, slow.objective, max_relative = 1e-9);

            // Both reported schedules must actually cost what they claim.
            for result in [&fast, &slow] {
                let mut total = DemandProfile::zeros(scenario.horizon.num_slots);
                for (household, assignment) in
                    sorted_households(&scenario).iter().zip(&result.assignments)
                {
                    assert_eq!(household.id, assignment.household_id);
                    let demand = crate::model::household_demand(
                        household,
                        &assignment.choices,
                        &scenario.horizon,
                    )
                    .unwrap();
                    total.add_assign(&demand);
                }
                assert_relative_eq!(
                    scenario.cost.total_cost(&total),
                    result.objective,
                    max_relative = 1e-12
                );
                assert!(scenario.cost.within_caps(&total));
            }
        }
    }

    #[test]
    fn node_budget_is_enforced() {
        let scenario = tiny_generated(0);
        assert!(matches!(
            solve_central(&scenario, 1),
            Err(OracleError::BudgetExceeded { budget: 1 })
        ));
    }

    #[test]
    fn oracle_is_deterministic() {
        let scenario = tiny_generated(3);
        let a = solve_central(&scenario, DEFAULT_NODE_BUDGET).unwrap();
        let b = solve_central(&scenario, DEFAULT_NODE_BUDGET).unwrap();
        assert_eq!(a, b);
        assert!(a.nodes_explored > 0);
    }

    #[test]
    fn dual_never_exceeds_the_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for seed in 0..15 {
            let scenario = tiny_generated(seed);
            let optimum = solve_central(&scenario, DEFAULT_NODE_BUDGET).unwrap().objective;
            for _ in 0..5 {
                let lambda: Vec<f64> = (0..scenario.horizon.num_slots)
                    .map(|_| rng.gen_range(-50..=50) as f64 * 0.01)
                    .collect();
                let dual = unsmoothed_dual(&scenario, &lambda);
                assert!(
                    dual <= optimum + 1e-9,
                    "weak duality violated: D={dual} > J*={optimum} (seed {seed})"
                );
            }
        }
    }

    #[test]
    fn zero_prices_give_zero_dual() {
        let scenario = tiny_generated(7);
        let zeros = vec![0.0; scenario.horizon.num_slots];
        // At zero prices the aggregator supplies nothing and household
        // schedules are free, so the dual collapses to zero.
        assert_eq!(unsmoothed_dual(&scenario, &zeros), 0.0);
    }

    #[test]
    fn results_roundtrip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let scenario = tiny_generated(4);
        let result = solve_central(&scenario, DEFAULT_NODE_BUDGET).unwrap();
        let path = dir.path().join("oracle.toml");
        crate::scenario::save_oracle_result(&result, &path).unwrap();
        assert_eq!(crate::scenario::load_oracle_result(&path).unwrap(), result);
    }

    #[test]
    fn acceptance_scale_instances_solve_within_budget() {
        let scenario = generate_scenario(42, 8, 12, 3, &GenerationConfig::default()).unwrap();
        let result = solve_central(&scenario, DEFAULT_NODE_BUDGET).unwrap();
        assert!(result.objective > 0.0);
        assert!(result.nodes_explored <= DEFAULT_NODE_BUDGET);
    }
}
