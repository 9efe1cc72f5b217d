//! Exact subproblem solvers.
//!
//! Each iteration asks every household to minimize
//! `Σ_t λ^t·x^t + (μ/2)·‖x‖²` over its joint appliance choices, and asks the
//! aggregator to minimize `Σ_t C^t(y^t) − λ^t·y^t` over its supply box. The
//! aggregator side has a per-slot closed form. The household side is a small
//! coupled quadratic mixed-integer problem: for μ > 0 the squared norm couples
//! appliances through their overlaps, so it is solved exactly by
//! branch-and-bound; for μ = 0 it separates per appliance.
//!
//! Determinism contract: every tie between equal-objective assignments is
//! broken toward the lexicographically smallest choice encoding (appliances in
//! ascending id order; a start slot encodes as itself, an interruptible
//! appliance as its ascending slot list). The brute-force solver enumerates in
//! exactly that order, so both solvers return identical assignments.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    Appliance, ApplianceChoice, ApplianceKind, ChoiceDecision, DemandProfile, HouseholdSpec,
    TimeHorizon,
};

/// Joint-choice-count ceiling for [`solve_household_bruteforce`].
pub const DEFAULT_BRUTEFORCE_CAP: u128 = 1_000_000;

/// Optimal joint choice for one household at given prices and smoothing.
#[derive(Debug, Clone, PartialEq)]
pub struct HouseholdSolution {
    /// One choice per appliance, in ascending appliance-id order.
    pub choices: Vec<ApplianceChoice>,
    pub demand: DemandProfile,
    /// Minimal value of `Σ_t λ^t·x^t + (μ/2)·‖x‖²`.
    pub objective: f64,
}

/// Convex quadratic generation cost `c2·y² + c1·y` with supply box
/// `[0, supply_cap]`, one entry per slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotCost {
    pub quadratic: f64,
    pub linear: f64,
    pub supply_cap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatorCostModel {
    pub slots: Vec<SlotCost>,
}

impl AggregatorCostModel {
    /// Same cost and cap in every slot; mostly for tests.
    pub fn uniform(num_slots: usize, quadratic: f64, linear: f64, supply_cap: f64) -> Self {
        AggregatorCostModel {
            slots: vec![SlotCost { quadratic, linear, supply_cap }; num_slots],
        }
    }

    pub fn num_slots(&self) -> usize {
        self.slots.len()
    }

    pub fn slot_cost(&self, slot_index: usize, y: f64) -> f64 {
        let c = &self.slots[slot_index];
        c.quadratic * y * y + c.linear * y
    }

    /// Total generation cost of serving `demand`.
    pub fn total_cost(&self, demand: &DemandProfile) -> f64 {
        debug_assert_eq!(demand.len(), self.slots.len());
        demand
            .values()
            .iter()
            .enumerate()
            .map(|(t, y)| self.slot_cost(t, *y))
            .sum()
    }

    /// Whether `demand` fits under every slot's supply cap.
    pub fn within_caps(&self, demand: &DemandProfile) -> bool {
        demand
            .values()
            .iter()
            .zip(&self.slots)
            .all(|(y, c)| *y <= c.supply_cap)
    }

    pub fn validate(&self, num_slots: usize) -> Result<(), SolveError> {
        if self.slots.len() != num_slots {
            return Err(SolveError::LengthMismatch {
                expected: num_slots,
                found: self.slots.len(),
            });
        }
        for (t, c) in self.slots.iter().enumerate() {
            if !(c.quadratic.is_finite() && c.quadratic >= 0.0) {
                return Err(SolveError::InvalidCost {
                    slot: t,
                    reason: format!("quadratic coefficient must be >= 0, got {}", c.quadratic),
                });
            }
            if !(c.linear.is_finite() && c.linear >= 0.0) {
                return Err(SolveError::InvalidCost {
                    slot: t,
                    reason: format!("linear coefficient must be >= 0, got {}", c.linear),
                });
            }
            if !(c.supply_cap.is_finite() && c.supply_cap > 0.0) {
                return Err(SolveError::InvalidCost {
                    slot: t,
                    reason: format!("supply cap must be > 0, got {}", c.supply_cap),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SolveError {
    #[error("choice space of {count} joint choices exceeds cap {cap}")]
    ChoiceSpaceTooLarge { count: u128, cap: u128 },
    #[error("length mismatch: expected {expected} slots, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("invalid cost model at slot {slot}: {reason}")]
    InvalidCost { slot: usize, reason: String },
}

/// `Σ_t λ^t·x^t + (μ/2)·‖x‖²` for a given demand profile.
pub fn household_objective(
    demand: &DemandProfile,
    lambda: &[f64],
    mu: f64,
) -> Result<f64, SolveError> {
    if demand.len() != lambda.len() {
        return Err(SolveError::LengthMismatch {
            expected: lambda.len(),
            found: demand.len(),
        });
    }
    Ok(demand.dot(lambda) + 0.5 * mu * demand.norm_sq())
}

/// Aggregator response: per-slot minimizer of `C^t(y) − λ^t·y` over
/// `[0, supply_cap]`, plus the summed optimal value.
pub fn solve_aggregator(cost: &AggregatorCostModel, lambda: &[f64]) -> (DemandProfile, f64) {
    debug_assert_eq!(cost.slots.len(), lambda.len());
    let mut supply = Vec::with_capacity(cost.slots.len());
    let mut value = 0.0;
    for (c, l) in cost.slots.iter().zip(lambda) {
        let y = if c.quadratic > 0.0 {
            ((l - c.linear) / (2.0 * c.quadratic)).clamp(0.0, c.supply_cap)
        } else if *l > c.linear {
            // Linear slot cost: corner solution; ties resolve to zero supply.
            c.supply_cap
        } else {
            0.0
        };
        supply.push(y);
        value += c.quadratic * y * y + c.linear * y - l * y;
    }
    (DemandProfile::from_raw(supply), value)
}

/// Exact minimizer of `Σ_t λ^t·x^t + (μ/2)·‖x‖²` over the household's joint
/// appliance choices.
///
/// For μ = 0 the objective separates per appliance and each appliance picks
/// its cheapest placement directly. For μ > 0 overlaps couple the appliances
/// and a depth-first branch-and-bound runs over appliances in ascending id
/// order (interruptible appliances branch slot-by-slot). The bound at a
/// partial assignment adds, to the assigned part's exact objective, each
/// unassigned appliance's cheapest standalone score — admissible because
/// every dropped cross term `μ·x_a^t·x_b^t` is nonnegative. A greedy
/// best-response pass seeds the incumbent; subtrees that cannot beat it are
/// pruned, and subtrees that could only tie it are pruned unless they can
/// yield a lexicographically smaller encoding.
pub fn solve_household_exact(
    spec: &HouseholdSpec,
    lambda: &[f64],
    mu: f64,
    horizon: &TimeHorizon,
) -> HouseholdSolution {
    assert!(
        !spec.appliances.is_empty(),
        "household {} must be validated before solving",
        spec.id
    );
    assert_eq!(lambda.len(), horizon.num_slots, "price vector must cover the horizon");
    assert!(mu >= 0.0 && mu.is_finite(), "smoothing weight must be finite and nonnegative");

    let mut order: Vec<&Appliance> = spec.appliances.iter().collect();
    order.sort_by_key(|a| a.id);

    if mu == 0.0 {
        return solve_separable(spec, &order, lambda, horizon);
    }

    let mut search = JointSearch::new(&order, lambda, mu, horizon);
    search.seed_greedy();
    search.dfs_appliance(0);
    search.into_solution(spec, horizon)
}

/// Exhaustive reference solver: enumerates every joint choice in
/// lexicographic order and keeps the first strict minimum, which is exactly
/// the tie-break rule of [`solve_household_exact`].
pub fn solve_household_bruteforce(
    spec: &HouseholdSpec,
    lambda: &[f64],
    mu: f64,
    horizon: &TimeHorizon,
    cap: u128,
) -> Result<HouseholdSolution, SolveError> {
    use itertools::Itertools;
    assert!(!spec.appliances.is_empty(), "household must be validated before solving");
    let count = spec.joint_choice_count();
    if count > cap {
        return Err(SolveError::ChoiceSpaceTooLarge { count, cap });
    }
    let mut order: Vec<&Appliance> = spec.appliances.iter().collect();
    order.sort_by_key(|a| a.id);
    let per_appliance: Vec<Vec<ApplianceChoice>> = order
        .iter()
        .map(|a| {
            a.choices()
                .into_iter()
                .map(|decision| ApplianceChoice { appliance_id: a.id, decision })
                .collect()
        })
        .collect();
    let mut best: Option<HouseholdSolution> = None;
    for combo in per_appliance.iter().multi_cartesian_product() {
        let choices: Vec<ApplianceChoice> = combo.into_iter().cloned().collect();
        let demand = household_demand_for(spec, &choices, horizon);
        let objective =
            household_objective(&demand, lambda, mu).expect("lambda length checked above");
        if best.as_ref().map_or(true, |b| objective < b.objective) {
            best = Some(HouseholdSolution { choices, demand, objective });
        }
    }
    Ok(best.expect("validated household has at least one joint choice"))
}

/// Largest achievable ½‖x‖² over the household's joint choices — the
/// pessimistic counterpart of [`crate::model::prox_constant`], exposed as an
/// experimentation switch for scaling the proximal weight. Only the value is
/// specified; ties between maximizers are irrelevant.
///
/// Branch-and-bound with an elementwise capacity bound: no completion of a
/// partial aggregate `A` can exceed `A + U` where `U` stacks every unassigned
/// appliance's peak power across its window, so ½‖A + U‖² is an admissible
/// upper bound. Intended for small households; the bound is loose, so expect
/// exponential behavior on large tie-heavy instances.
pub fn prox_constant_max(spec: &HouseholdSpec, horizon: &TimeHorizon) -> f64 {
    assert!(!spec.appliances.is_empty(), "household must be validated before solving");
    let mut order: Vec<&Appliance> = spec.appliances.iter().collect();
    order.sort_by_key(|a| a.id);
    let mut search = MaxNormSearch::new(&order, horizon);
    search.seed_greedy();
    search.dfs_appliance(0);
    search.best
}

// ---------------------------------------------------------------------------
// μ = 0: per-appliance separable solve.
// ---------------------------------------------------------------------------

fn solve_separable(
    spec: &HouseholdSpec,
    order: &[&Appliance],
    lambda: &[f64],
    horizon: &TimeHorizon,
) -> HouseholdSolution {
    let mut choices = Vec::with_capacity(order.len());
    for appliance in order {
        let first = horizon.offset_of(appliance.window.first);
        let last = horizon.offset_of(appliance.window.last);
        let decision = match &appliance.kind {
            ApplianceKind::NonInterruptible { profile } => {
                let mut best_start = first;
                let mut best_score = f64::INFINITY;
                for s in first..=last + 1 - profile.len() {
                    let score: f64 =
                        profile.iter().enumerate().map(|(j, q)| lambda[s + j] * q).sum();
                    if score < best_score {
                        best_score = score;
                        best_start = s;
                    }
                }
                ChoiceDecision::Start(best_start + horizon.start_slot)
            }
            ApplianceKind::Interruptible { duration, power } => {
                let mut scored: Vec<(f64, usize)> =
                    (first..=last).map(|t| (lambda[t] * power, t)).collect();
                // Ascending (score, slot): takes the d cheapest slots and, on
                // score ties, the earliest — the lex-smallest optimal subset.
                scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                let mut chosen: Vec<usize> =
                    scored[..*duration].iter().map(|(_, t)| t + horizon.start_slot).collect();
                chosen.sort_unstable();
                ChoiceDecision::Slots(chosen)
            }
        };
        choices.push(ApplianceChoice { appliance_id: appliance.id, decision });
    }
    let demand = household_demand_for(spec, &choices, horizon);
    let objective = household_objective(&demand, lambda, 0.0).expect("lambda length asserted");
    HouseholdSolution { choices, demand, objective }
}

fn household_demand_for(
    spec: &HouseholdSpec,
    choices: &[ApplianceChoice],
    horizon: &TimeHorizon,
) -> DemandProfile {
    crate::model::household_demand(spec, choices, horizon)
        .expect("solver emits one valid choice per appliance")
}

// ---------------------------------------------------------------------------
// μ > 0: depth-first branch-and-bound over the joint choice space.
// ---------------------------------------------------------------------------

/// Objective increase from adding a consecutive `profile` at `start` on top
/// of the aggregate `agg`: Σ_j λ·q + μ·(agg·q + q²/2). Shared by the greedy
/// seeding pass and the search so identical assignments accumulate identical
/// floating-point objectives.
fn profile_delta(lambda: &[f64], mu: f64, agg: &[f64], start: usize, profile: &[f64]) -> f64 {
    let mut delta = 0.0;
    for (j, q) in profile.iter().enumerate() {
        let t = start + j;
        delta += lambda[t] * q + mu * (agg[t] * q + 0.5 * q * q);
    }
    delta
}

/// Objective increase from adding `power` at a single slot.
fn slot_delta(lambda: &[f64], mu: f64, agg: &[f64], t: usize, power: f64) -> f64 {
    lambda[t] * power + mu * (agg[t] * power + 0.5 * power * power)
}

fn sort_children(children: &mut [(f64, usize)]) {
    children.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite scores").then(a.1.cmp(&b.1)));
}

struct SearchAppliance {
    first: usize,
    last: usize,
    kind: SearchKind,
    /// Cheapest standalone score: min over own choices of λ·x + (μ/2)‖x‖².
    standalone_min: f64,
}

enum SearchKind {
    Profile(Vec<f64>),
    Uniform { duration: usize, power: f64 },
}

impl SearchAppliance {
    fn encoding_len(&self) -> usize {
        match &self.kind {
            SearchKind::Profile(_) => 1,
            SearchKind::Uniform { duration, .. } => *duration,
        }
    }
}

struct Incumbent {
    objective: f64,
    encoding: Vec<u32>,
}

struct JointSearch<'a> {
    lambda: &'a [f64],
    mu: f64,
    apps: Vec<SearchAppliance>,
    /// suffix_min[i] = Σ over appliances i.. of standalone_min.
    suffix_min: Vec<f64>,
    agg: Vec<f64>,
    objective: f64,
    path: Vec<u32>,
    undo: Vec<f64>,
    best: Incumbent,
}

impl<'a> JointSearch<'a> {
    fn new(order: &[&Appliance], lambda: &'a [f64], mu: f64, horizon: &TimeHorizon) -> Self {
        let apps: Vec<SearchAppliance> = order
            .iter()
            .map(|a| {
                let first = horizon.offset_of(a.window.first);
                let last = horizon.offset_of(a.window.last);
                let (kind, standalone_min) = match &a.kind {
                    ApplianceKind::NonInterruptible { profile } => {
                        let base = 0.5 * mu * profile.iter().map(|q| q * q).sum::<f64>();
                        let min = (first..=last + 1 - profile.len())
                            .map(|s| {
                                base + profile
                                    .iter()
                                    .enumerate()
                                    .map(|(j, q)| lambda[s + j] * q)
                                    .sum::<f64>()
                            })
                            .fold(f64::INFINITY, f64::min);
                        (SearchKind::Profile(profile.clone()), min)
                    }
                    ApplianceKind::Interruptible { duration, power } => {
                        let mut scores: Vec<f64> = (first..=last)
                            .map(|t| lambda[t] * power + 0.5 * mu * power * power)
                            .collect();
                        scores.sort_by(|x, y| x.partial_cmp(y).expect("finite scores"));
                        let min = scores[..*duration].iter().sum();
                        (SearchKind::Uniform { duration: *duration, power: *power }, min)
                    }
                };
                SearchAppliance { first, last, kind, standalone_min }
            })
            .collect();
        let mut suffix_min = vec![0.0; apps.len() + 1];
        for i in (0..apps.len()).rev() {
            suffix_min[i] = apps[i].standalone_min + suffix_min[i + 1];
        }
        JointSearch {
            lambda,
            mu,
            apps,
            suffix_min,
            agg: vec![0.0; lambda.len()],
            objective: 0.0,
            path: Vec::new(),
            undo: Vec::new(),
            best: Incumbent { objective: f64::INFINITY, encoding: Vec::new() },
        }
    }

    /// Sequential best response: each appliance, in order, takes its cheapest
    /// placement against the aggregate so far. Produces a feasible incumbent
    /// whose objective is accumulated through the same helpers as the search,
    /// so an identical DFS leaf reproduces it bit-for-bit.
    fn seed_greedy(&mut self) {
        for i in 0..self.apps.len() {
            match &self.apps[i].kind {
                SearchKind::Profile(profile) => {
                    let profile = profile.clone();
                    let (first, last) = (self.apps[i].first, self.apps[i].last);
                    let mut best_s = first;
                    let mut best_delta = f64::INFINITY;
                    for s in first..=last + 1 - profile.len() {
                        let delta = profile_delta(self.lambda, self.mu, &self.agg, s, &profile);
                        if delta < best_delta {
                            best_delta = delta;
                            best_s = s;
                        }
                    }
                    self.push_profile(best_s, &profile);
                }
                SearchKind::Uniform { duration, power } => {
                    let (duration, power) = (*duration, *power);
                    let (first, last) = (self.apps[i].first, self.apps[i].last);
                    let mut scored: Vec<(f64, usize)> = (first..=last)
                        .map(|t| (slot_delta(self.lambda, self.mu, &self.agg, t, power), t))
                        .collect();
                    sort_children(&mut scored);
                    let mut chosen: Vec<usize> =
                        scored[..duration].iter().map(|&(_, t)| t).collect();
                    chosen.sort_unstable();
                    for t in chosen {
                        self.push_slot(t, power);
                    }
                }
            }
        }
        self.best = Incumbent { objective: self.objective, encoding: self.path.clone() };
        // Rewind to a clean root state for the exhaustive search.
        self.path.clear();
        self.undo.clear();
        self.agg.iter_mut().for_each(|v| *v = 0.0);
        self.objective = 0.0;
    }

    fn push_profile(&mut self, start: usize, profile: &[f64]) {
        self.objective += profile_delta(self.lambda, self.mu, &self.agg, start, profile);
        for (j, q) in profile.iter().enumerate() {
            self.undo.push(self.agg[start + j]);
            self.agg[start + j] += q;
        }
        self.path.push(start as u32);
    }

    fn pop_profile(&mut self, start: usize, profile_len: usize, saved_objective: f64) {
        self.path.pop();
        for j in (0..profile_len).rev() {
            self.agg[start + j] = self.undo.pop().expect("undo stack balanced");
        }
        self.objective = saved_objective;
    }

    fn push_slot(&mut self, t: usize, power: f64) {
        self.objective += slot_delta(self.lambda, self.mu, &self.agg, t, power);
        self.undo.push(self.agg[t]);
        self.agg[t] += power;
        self.path.push(t as u32);
    }

    fn pop_slot(&mut self, t: usize, saved_objective: f64) {
        self.path.pop();
        self.agg[t] = self.undo.pop().expect("undo stack balanced");
        self.objective = saved_objective;
    }

    /// Would extending the current path with `next` make it lexicographically
    /// greater than the incumbent's encoding? Such a subtree can at best tie
    /// the incumbent, and a tie would not displace it.
    fn extension_is_lex_after(&self, next: u32) -> bool {
        let inc = &self.best.encoding;
        for (i, p) in self.path.iter().enumerate() {
            match p.cmp(&inc[i]) {
                std::cmp::Ordering::Less => return false,
                std::cmp::Ordering::Greater => return true,
                std::cmp::Ordering::Equal => {}
            }
        }
        next > inc[self.path.len()]
    }

    fn offer_leaf(&mut self) {
        if self.objective < self.best.objective
            || (self.objective == self.best.objective
                && self.path.as_slice() < self.best.encoding.as_slice())
        {
            self.best.objective = self.objective;
            self.best.encoding.clear();
            self.best.encoding.extend_from_slice(&self.path);
        }
    }

    fn dfs_appliance(&mut self, i: usize) {
        if i == self.apps.len() {
            self.offer_leaf();
            return;
        }
        match &self.apps[i].kind {
            SearchKind::Profile(profile) => {
                let profile = profile.clone();
                let (first, last) = (self.apps[i].first, self.apps[i].last);
                let mut children: Vec<(f64, usize)> = (first..=last + 1 - profile.len())
                    .map(|s| (profile_delta(self.lambda, self.mu, &self.agg, s, &profile), s))
                    .collect();
                sort_children(&mut children);
                for (delta, s) in children {
                    let bound = self.objective + delta + self.suffix_min[i + 1];
                    if bound > self.best.objective {
                        break; // children sorted: the rest bound even higher
                    }
                    if bound == self.best.objective && self.extension_is_lex_after(s as u32) {
                        continue;
                    }
                    let saved = self.objective;
                    self.push_profile(s, &profile);
                    self.dfs_appliance(i + 1);
                    self.pop_profile(s, profile.len(), saved);
                }
            }
            SearchKind::Uniform { duration, power } => {
                let (duration, power) = (*duration, *power);
                let first = self.apps[i].first;
                self.dfs_slots(i, power, duration, first);
            }
        }
    }

    /// Branch over the next active slot of interruptible appliance `i`:
    /// `remaining` slots still to place, candidates at offset ≥ `lo`.
    fn dfs_slots(&mut self, i: usize, power: f64, remaining: usize, lo: usize) {
        if remaining == 0 {
            self.dfs_appliance(i + 1);
            return;
        }
        let last = self.apps[i].last;
        let scores: Vec<f64> = (lo..=last)
            .map(|t| slot_delta(self.lambda, self.mu, &self.agg, t, power))
            .collect();
        // Cheapest possible remainder after committing one more slot: the
        // (remaining − 1) smallest scores anywhere in the tail. Choosing a
        // specific slot only shrinks the candidate pool, so this lower-bounds
        // every completion.
        let completion = if remaining > 1 {
            let mut sorted = scores.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
            sorted[..remaining - 1].iter().sum::<f64>()
        } else {
            0.0
        };
        let mut children: Vec<(f64, usize)> = (lo..=last + 1 - remaining)
            .map(|t| (scores[t - lo], t))
            .collect();
        sort_children(&mut children);
        for (delta, t) in children {
            let bound = self.objective + delta + completion + self.suffix_min[i + 1];
            if bound > self.best.objective {
                break;
            }
            if bound == self.best.objective && self.extension_is_lex_after(t as u32) {
                continue;
            }
            let saved = self.objective;
            self.push_slot(t, power);
            self.dfs_slots(i, power, remaining - 1, t + 1);
            self.pop_slot(t, saved);
        }
    }

    fn into_solution(self, spec: &HouseholdSpec, horizon: &TimeHorizon) -> HouseholdSolution {
        let mut order: Vec<&Appliance> = spec.appliances.iter().collect();
        order.sort_by_key(|a| a.id);
        let mut choices = Vec::with_capacity(order.len());
        let mut cursor = 0usize;
        for (appliance, search) in order.iter().zip(&self.apps) {
            let entries = search.encoding_len();
            let enc = &self.best.encoding[cursor..cursor + entries];
            cursor += entries;
            let decision = match &search.kind {
                SearchKind::Profile(_) => {
                    ChoiceDecision::Start(enc[0] as usize + horizon.start_slot)
                }
                SearchKind::Uniform { .. } => ChoiceDecision::Slots(
                    enc.iter().map(|t| *t as usize + horizon.start_slot).collect(),
                ),
            };
            choices.push(ApplianceChoice { appliance_id: appliance.id, decision });
        }
        let demand = household_demand_for(spec, &choices, horizon);
        debug_assert!({
            let recomputed = household_objective(&demand, self.lambda, self.mu).unwrap();
            (recomputed - self.best.objective).abs()
                <= 1e-9 * self.best.objective.abs().max(1.0)
        });
        HouseholdSolution { choices, demand, objective: self.best.objective }
    }
}

// ---------------------------------------------------------------------------
// Norm maximization for the pessimistic prox-constant variant.
// ---------------------------------------------------------------------------

struct MaxNormSearch {
    apps: Vec<SearchAppliance>,
    /// suffix_peak[i][t] = summed peak power of appliances i.. at slot t:
    /// an elementwise cap on anything they could still add.
    suffix_peak: Vec<Vec<f64>>,
    agg: Vec<f64>,
    half_norm_sq: f64,
    undo: Vec<f64>,
    best: f64,
    zero_lambda: Vec<f64>,
}

impl MaxNormSearch {
    fn new(order: &[&Appliance], horizon: &TimeHorizon) -> Self {
        let t_len = horizon.num_slots;
        let apps: Vec<SearchAppliance> = order
            .iter()
            .map(|a| {
                let first = horizon.offset_of(a.window.first);
                let last = horizon.offset_of(a.window.last);
                let kind = match &a.kind {
                    ApplianceKind::NonInterruptible { profile } => {
                        SearchKind::Profile(profile.clone())
                    }
                    ApplianceKind::Interruptible { duration, power } => {
                        SearchKind::Uniform { duration: *duration, power: *power }
                    }
                };
                SearchAppliance { first, last, kind, standalone_min: 0.0 }
            })
            .collect();
        let mut suffix_peak = vec![vec![0.0; t_len]; apps.len() + 1];
        for i in (0..apps.len()).rev() {
            let search = &apps[i];
            let mut peak = suffix_peak[i + 1].clone();
            match &search.kind {
                SearchKind::Profile(profile) => {
                    // Largest profile entry that some valid start can place
                    // at slot t.
                    for t in search.first..=search.last {
                        let mut bound = 0.0f64;
                        for s in search.first..=search.last + 1 - profile.len() {
                            if t >= s && t - s < profile.len() {
                                bound = bound.max(profile[t - s]);
                            }
                        }
                        peak[t] += bound;
                    }
                }
                SearchKind::Uniform { power, .. } => {
                    for t in search.first..=search.last {
                        peak[t] += power;
                    }
                }
            }
            suffix_peak[i] = peak;
        }
        MaxNormSearch {
            apps,
            suffix_peak,
            agg: vec![0.0; t_len],
            half_norm_sq: 0.0,
            undo: Vec::new(),
            best: f64::NEG_INFINITY,
            zero_lambda: vec![0.0; t_len],
        }
    }

    fn upper_bound(&self, i: usize, own_remaining: Option<(f64, usize)>) -> f64 {
        let peaks = &self.suffix_peak[i];
        let mut total = 0.0;
        for (t, a) in self.agg.iter().enumerate() {
            let own = match own_remaining {
                Some((power, lo)) if t >= lo => power,
                _ => 0.0,
            };
            let v = a + peaks[t] + own;
            total += 0.5 * v * v;
        }
        total
    }

    fn push_profile(&mut self, start: usize, profile: &[f64]) {
        self.half_norm_sq += profile_delta(&self.zero_lambda, 1.0, &self.agg, start, profile);
        for (j, q) in profile.iter().enumerate() {
            self.undo.push(self.agg[start + j]);
            self.agg[start + j] += q;
        }
    }

    fn pop_profile(&mut self, start: usize, profile_len: usize, saved: f64) {
        for j in (0..profile_len).rev() {
            self.agg[start + j] = self.undo.pop().expect("undo stack balanced");
        }
        self.half_norm_sq = saved;
    }

    fn seed_greedy(&mut self) {
        for i in 0..self.apps.len() {
            match &self.apps[i].kind {
                SearchKind::Profile(profile) => {
                    let profile = profile.clone();
                    let (first, last) = (self.apps[i].first, self.apps[i].last);
                    let mut best_s = first;
                    let mut best_delta = f64::NEG_INFINITY;
                    for s in first..=last + 1 - profile.len() {
                        let delta =
                            profile_delta(&self.zero_lambda, 1.0, &self.agg, s, &profile);
                        if delta > best_delta {
                            best_delta = delta;
                            best_s = s;
                        }
                    }
                    self.push_profile(best_s, &profile);
                }
                SearchKind::Uniform { duration, power } => {
                    let (duration, power) = (*duration, *power);
                    let (first, last) = (self.apps[i].first, self.apps[i].last);
                    let mut scored: Vec<(f64, usize)> = (first..=last)
                        .map(|t| (slot_delta(&self.zero_lambda, 1.0, &self.agg, t, power), t))
                        .collect();
                    // Descending score, earliest slot on ties.
                    scored.sort_by(|a, b| {
                        b.0.partial_cmp(&a.0).expect("finite scores").then(a.1.cmp(&b.1))
                    });
                    let mut chosen: Vec<usize> =
                        scored[..duration].iter().map(|&(_, t)| t).collect();
                    chosen.sort_unstable();
                    for t in chosen {
                        self.half_norm_sq +=
                            slot_delta(&self.zero_lambda, 1.0, &self.agg, t, power);
                        self.undo.push(self.agg[t]);
                        self.agg[t] += power;
                    }
                }
            }
        }
        self.best = self.half_norm_sq;
        self.undo.clear();
        self.agg.iter_mut().for_each(|v| *v = 0.0);
        self.half_norm_sq = 0.0;
    }

    fn dfs_appliance(&mut self, i: usize) {
        if i == self.apps.len() {
            if self.half_norm_sq > self.best {
                self.best = self.half_norm_sq;
            }
            return;
        }
        if self.upper_bound(i, None) <= self.best {
            return;
        }
        match &self.apps[i].kind {
            SearchKind::Profile(profile) => {
                let profile = profile.clone();
                let (first, last) = (self.apps[i].first, self.apps[i].last);
                for s in first..=last + 1 - profile.len() {
                    let saved = self.half_norm_sq;
                    self.push_profile(s, &profile);
                    if self.upper_bound(i + 1, None) > self.best {
                        self.dfs_appliance(i + 1);
                    }
                    self.pop_profile(s, profile.len(), saved);
                }
            }
            SearchKind::Uniform { duration, power } => {
                let (duration, power) = (*duration, *power);
                let first = self.apps[i].first;
                self.dfs_slots(i, power, duration, first);
            }
        }
    }

    fn dfs_slots(&mut self, i: usize, power: f64, remaining: usize, lo: usize) {
        if remaining == 0 {
            self.dfs_appliance(i + 1);
            return;
        }
        let last = self.apps[i].last;
        for t in lo..=last + 1 - remaining {
            let saved = self.half_norm_sq;
            self.half_norm_sq += slot_delta(&self.zero_lambda, 1.0, &self.agg, t, power);
            self.undo.push(self.agg[t]);
            self.agg[t] += power;
            let own = if remaining > 1 { Some((power, t + 1)) } else { None };
            if self.upper_bound(i + 1, own) > self.best {
                self.dfs_slots(i, power, remaining - 1, t + 1);
            }
            self.agg[t] = self.undo.pop().expect("undo stack balanced");
            self.half_norm_sq = saved;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{prox_constant, SlotRange};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn horizon(num_slots: usize) -> TimeHorizon {
        TimeHorizon::new(0, num_slots, 1.0)
    }

    fn noninterruptible(id: u32, window: (usize, usize), profile: &[f64]) -> Appliance {
        Appliance {
            id,
            window: SlotRange::new(window.0, window.1),
            kind: ApplianceKind::NonInterruptible { profile: profile.to_vec() },
        }
    }

    fn interruptible(id: u32, window: (usize, usize), duration: usize, power: f64) -> Appliance {
        Appliance {
            id,
            window: SlotRange::new(window.0, window.1),
            kind: ApplianceKind::Interruptible { duration, power },
        }
    }

    #[test]
    fn objective_evaluation() {
        let x = DemandProfile::from_values(vec![1.0, 2.0]).unwrap();
        assert_eq!(household_objective(&x, &[3.0, 1.0], 2.0).unwrap(), 10.0);
        assert_eq!(household_objective(&x, &[3.0, 1.0], 0.0).unwrap(), 5.0);
        let zero = DemandProfile::zeros(2);
        assert_eq!(household_objective(&zero, &[3.0, 1.0], 2.0).unwrap(), 0.0);
        assert!(matches!(
            household_objective(&x, &[1.0], 0.0),
            Err(SolveError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn separable_noninterruptible_picks_cheapest_start() {
        let spec = HouseholdSpec {
            id: 0,
            appliances: vec![noninterruptible(0, (0, 2), &[1.0])],
        };
        let sol = solve_household_exact(&spec, &[3.0, 1.0, 2.0], 0.0, &horizon(3));
        assert_eq!(sol.choices[0].decision, ChoiceDecision::Start(1));
        assert!((sol.objective - 1.0).abs() < 1e-12);
    }

    #[test]
    fn separable_interruptible_picks_cheapest_slots() {
        let spec = HouseholdSpec {
            id: 0,
            appliances: vec![interruptible(0, (0, 3), 2, 1.0)],
        };
        let sol = solve_household_exact(&spec, &[3.0, 1.0, 2.0, 5.0], 0.0, &horizon(4));
        assert_eq!(sol.choices[0].decision, ChoiceDecision::Slots(vec![1, 2]));
        assert!((sol.objective - 3.0).abs() < 1e-12);
    }

    #[test]
    fn coupled_appliances_split_slots() {
        // With μ = 1 and flat prices, stacking both single-slot appliances
        // costs 2.0 while splitting costs 1.0; the lex rule picks ({0},{1}).
        let spec = HouseholdSpec {
            id: 0,
            appliances: vec![interruptible(0, (0, 1), 1, 1.0), interruptible(1, (0, 1), 1, 1.0)],
        };
        let h = horizon(2);
        let sol = solve_household_exact(&spec, &[0.0, 0.0], 1.0, &h);
        assert!((sol.objective - 1.0).abs() < 1e-12);
        assert_eq!(sol.choices[0].decision, ChoiceDecision::Slots(vec![0]));
        assert_eq!(sol.choices[1].decision, ChoiceDecision::Slots(vec![1]));
        let brute = solve_household_bruteforce(&spec, &[0.0, 0.0], 1.0, &h, 100).unwrap();
        assert_eq!(brute.choices, sol.choices);
        assert!((brute.objective - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bruteforce_cap_is_enforced() {
        let spec = HouseholdSpec {
            id: 0,
            appliances: (0..10).map(|i| interruptible(i, (0, 23), 12, 1.0)).collect(),
        };
        let lambda = vec![0.0; 24];
        let err = solve_household_bruteforce(&spec, &lambda, 0.5, &horizon(24), 1_000_000)
            .unwrap_err();
        assert!(matches!(err, SolveError::ChoiceSpaceTooLarge { cap: 1_000_000, .. }));
    }

    #[test]
    fn exact_matches_bruteforce_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mus = [0.0, 1e-3, 0.1, 1.0];
        for trial in 0..60 {
            let t = rng.gen_range(4..9);
            let h = horizon(t);
            let spec = random_household(&mut rng, t, 3);
            let lambda: Vec<f64> = (0..t).map(|_| rng.gen_range(-1.0..2.0)).collect();
            let mu = mus[trial % mus.len()];
            let exact = solve_household_exact(&spec, &lambda, mu, &h);
            let brute =
                solve_household_bruteforce(&spec, &lambda, mu, &h, DEFAULT_BRUTEFORCE_CAP)
                    .unwrap();
            let tol = 1e-9 * exact.objective.abs().max(1.0);
            assert!(
                (exact.objective - brute.objective).abs() <= tol,
                "objective mismatch on trial {trial}: {} vs {}",
                exact.objective,
                brute.objective
            );
            for (a, b) in exact.demand.values().iter().zip(brute.demand.values()) {
                assert!((a - b).abs() <= 1e-9, "demand mismatch on trial {trial}");
            }
        }
    }

    #[test]
    fn lex_tie_break_matches_bruteforce_under_flat_prices() {
        // Flat zero prices make every placement of equal-power appliances
        // tie; both solvers must agree on the lex-smallest optimum.
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..30 {
            let t = rng.gen_range(3..7);
            let h = horizon(t);
            let spec = random_household(&mut rng, t, 2);
            let lambda = vec![0.0; t];
            let exact = solve_household_exact(&spec, &lambda, 1.0, &h);
            let brute =
                solve_household_bruteforce(&spec, &lambda, 1.0, &h, DEFAULT_BRUTEFORCE_CAP)
                    .unwrap();
            assert_eq!(exact.choices, brute.choices);
        }
    }

    #[test]
    fn smoothed_objective_is_monotone_in_mu() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        for _ in 0..20 {
            let t = rng.gen_range(4..8);
            let h = horizon(t);
            let spec = random_household(&mut rng, t, 2);
            let lambda: Vec<f64> = (0..t).map(|_| rng.gen_range(-1.0..2.0)).collect();
            let mut previous = f64::NEG_INFINITY;
            for mu in [0.0, 1e-3, 0.1, 1.0] {
                let value = solve_household_exact(&spec, &lambda, mu, &h).objective;
                assert!(value >= previous - 1e-12);
                previous = value;
            }
        }
    }

    #[test]
    fn household_value_is_concave_in_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        for _ in 0..30 {
            let t = rng.gen_range(4..8);
            let h = horizon(t);
            let spec = random_household(&mut rng, t, 2);
            let l1: Vec<f64> = (0..t).map(|_| rng.gen_range(-1.0..2.0)).collect();
            let l2: Vec<f64> = (0..t).map(|_| rng.gen_range(-1.0..2.0)).collect();
            let theta: f64 = rng.gen_range(0.1..0.9);
            let mid: Vec<f64> =
                l1.iter().zip(&l2).map(|(a, b)| theta * a + (1.0 - theta) * b).collect();
            let mu = 0.1;
            let v1 = solve_household_exact(&spec, &l1, mu, &h).objective;
            let v2 = solve_household_exact(&spec, &l2, mu, &h).objective;
            let vm = solve_household_exact(&spec, &mid, mu, &h).objective;
            assert!(vm >= theta * v1 + (1.0 - theta) * v2 - 1e-9);
        }
    }

    #[test]
    fn aggregator_interior_and_clamped_cases() {
        let cost = AggregatorCostModel::uniform(1, 1.0, 0.0, 10.0);
        let (x0, value) = solve_aggregator(&cost, &[4.0]);
        assert_eq!(x0.values(), &[2.0]);
        assert!((value - (-4.0)).abs() < 1e-12);

        let clamped = AggregatorCostModel::uniform(1, 1.0, 0.0, 1.0);
        let (x0, value) = solve_aggregator(&clamped, &[4.0]);
        assert_eq!(x0.values(), &[1.0]);
        assert!((value - (-3.0)).abs() < 1e-12);
    }

    #[test]
    fn aggregator_zero_and_corner_cases() {
        let cost = AggregatorCostModel::uniform(3, 0.5, 1.0, 10.0);
        let (x0, value) = solve_aggregator(&cost, &[1.0, 1.0, 1.0]);
        assert_eq!(x0.values(), &[0.0, 0.0, 0.0]);
        assert_eq!(value, 0.0);

        // Linear slots: supply nothing below the marginal price, everything
        // above it, nothing on an exact tie.
        let linear = AggregatorCostModel::uniform(3, 0.0, 1.0, 5.0);
        let (x0, _) = solve_aggregator(&linear, &[0.5, 2.0, 1.0]);
        assert_eq!(x0.values(), &[0.0, 5.0, 0.0]);

        // Negative prices never induce negative supply.
        let (x0, _) = solve_aggregator(&cost, &[-3.0, -0.1, 0.0]);
        assert_eq!(x0.values(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn aggregator_beats_gridded_candidates() {
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        for _ in 0..50 {
            let c2 = rng.gen_range(0..=20) as f64 * 1e-4;
            let c1 = rng.gen_range(20..=80) as f64 * 1e-3;
            let cap = rng.gen_range(1..=40) as f64 * 0.5;
            let lambda = rng.gen_range(-0.05..0.2);
            let cost = AggregatorCostModel {
                slots: vec![SlotCost { quadratic: c2, linear: c1, supply_cap: cap }],
            };
            let (_, value) = solve_aggregator(&cost, &[lambda]);
            for i in 0..=24 {
                let y = cap * i as f64 / 24.0;
                let candidate = c2 * y * y + c1 * y - lambda * y;
                assert!(value <= candidate + 1e-12);
            }
        }
    }

    #[test]
    fn max_norm_constant_bounds_min() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        for _ in 0..20 {
            let t = rng.gen_range(3..7);
            let h = horizon(t);
            let spec = random_household(&mut rng, t, 2);
            let lo = prox_constant(&spec, &h);
            let hi = prox_constant_max(&spec, &h);
            assert!(hi >= lo - 1e-12);
            // Exhaustive maximum for comparison.
            let exhaustive = brute_force_max_half_norm(&spec, &h);
            assert!((hi - exhaustive).abs() <= 1e-9 * exhaustive.max(1.0));
        }
    }

    #[test]
    fn max_norm_constant_stacks_overlapping_appliances() {
        // Both appliances on the same two slots: profile [2,2,0], ½·8 = 4.
        let spec = HouseholdSpec {
            id: 0,
            appliances: vec![interruptible(0, (0, 2), 2, 1.0), interruptible(1, (0, 2), 2, 1.0)],
        };
        assert!((prox_constant_max(&spec, &horizon(3)) - 4.0).abs() < 1e-12);
        // A single appliance has the same norm everywhere.
        let single = HouseholdSpec { id: 0, appliances: vec![interruptible(0, (0, 3), 2, 1.0)] };
        assert!((prox_constant_max(&single, &horizon(4)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cost_model_validation() {
        let mut cost = AggregatorCostModel::uniform(3, 1.0, 0.5, 4.0);
        assert!(cost.validate(3).is_ok());
        assert!(cost.validate(4).is_err());
        cost.slots[1].quadratic = -0.1;
        assert!(matches!(cost.validate(3), Err(SolveError::InvalidCost { slot: 1, .. })));
        cost.slots[1].quadratic = 0.1;
        cost.slots[2].supply_cap = 0.0;
        assert!(matches!(cost.validate(3), Err(SolveError::InvalidCost { slot: 2, .. })));
    }

    fn brute_force_max_half_norm(spec: &HouseholdSpec, h: &TimeHorizon) -> f64 {
        use itertools::Itertools;
        let per: Vec<Vec<ApplianceChoice>> = spec
            .appliances
            .iter()
            .map(|a| {
                a.choices()
                    .into_iter()
                    .map(|decision| ApplianceChoice { appliance_id: a.id, decision })
                    .collect()
            })
            .collect();
        per.iter()
            .multi_cartesian_product()
            .map(|combo| {
                let choices: Vec<ApplianceChoice> = combo.into_iter().cloned().collect();
                0.5 * crate::model::household_demand(spec, &choices, h).unwrap().norm_sq()
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub(crate) fn random_household(
        rng: &mut ChaCha8Rng,
        t: usize,
        max_appliances: usize,
    ) -> HouseholdSpec {
        let n = rng.gen_range(1..=max_appliances);
        let appliances = (0..n as u32)
            .map(|id| {
                let first = rng.gen_range(0..t);
                let last = rng.gen_range(first..t);
                let window_len = last - first + 1;
                if rng.gen_bool(0.5) {
                    let d = rng.gen_range(1..=window_len);
                    let profile: Vec<f64> =
                        (0..d).map(|_| rng.gen_range(2..=30) as f64 * 0.1).collect();
                    noninterruptible(id, (first, last), &profile)
                } else {
                    let d = rng.gen_range(1..=window_len);
                    let power = rng.gen_range(2..=30) as f64 * 0.1;
                    interruptible(id, (first, last), d, power)
                }
            })
            .collect();
        HouseholdSpec { id: 0, appliances }
    }
}
