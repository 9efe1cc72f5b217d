//! The price-coordination loop.
//!
//! Each iteration broadcasts the current prices and proximal weight, collects
//! one best-response schedule per household (in parallel, merged in ascending
//! household-id order so results are bit-reproducible at any worker count),
//! assembles the smoothed dual value and its gradient, recovers an
//! integer-feasible primal candidate from the household schedules, and then
//! advances the prices with a momentum step and the smoothing weights with
//! one geometric decay.
//!
//! The coordinator only ever sees [`Broadcast`] and [`HouseholdReply`]
//! messages; it never inspects appliance data. [`LocalHousehold`] is the
//! in-process endpoint used by [`run`], and [`run_with_endpoints`] accepts
//! any other transport that implements [`HouseholdEndpoint`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{self, EngineState, SmoothingSchedule};
use crate::model::{self, ApplianceChoice, DemandProfile, HouseholdSpec, TimeHorizon};
use crate::scenario::{AlgoParams, ProxMode, Scenario, ScenarioError};
use crate::solver::{self, solve_aggregator, AggregatorCostModel};

/// Per-iteration announcement from the coordinator to every household.
#[derive(Debug, Clone, PartialEq)]
pub struct Broadcast {
    /// 1-based iteration number.
    pub iteration: usize,
    /// One price per slot; may be negative.
    pub prices: Vec<f64>,
    /// The floored proximal weight households must apply this iteration.
    pub prox_weight: f64,
}

/// A household's best response: the schedule minimizing
/// `Σ_t price^t·x^t + (w/2)·‖x‖²` over its feasible appliance placements.
#[derive(Debug, Clone, PartialEq)]
pub struct HouseholdReply {
    pub household_id: u32,
    pub choices: Vec<ApplianceChoice>,
    pub demand: DemandProfile,
    pub objective: f64,
}

/// A household's side of the protocol. Implementations must answer every
/// broadcast with an exact best response for the loop's guarantees to hold.
pub trait HouseholdEndpoint: Send + Sync {
    fn household_id(&self) -> u32;

    /// The household's ½‖x‖² scaling constant, reported once before the run
    /// so the coordinator can size the proximal weight. Must be positive.
    fn prox_scale(&self) -> f64;

    fn respond(&self, broadcast: &Broadcast) -> HouseholdReply;
}

/// In-process endpoint backed by the exact household solver.
#[derive(Debug, Clone)]
pub struct LocalHousehold {
    spec: HouseholdSpec,
    horizon: TimeHorizon,
    prox_scale: f64,
}

impl LocalHousehold {
    pub fn new(spec: HouseholdSpec, horizon: TimeHorizon, prox_mode: ProxMode) -> Self {
        let prox_scale = match prox_mode {
            ProxMode::Min => model::prox_constant(&spec, &horizon),
            ProxMode::Max => solver::prox_constant_max(&spec, &horizon),
        };
        LocalHousehold { spec, horizon, prox_scale }
    }
}

impl HouseholdEndpoint for LocalHousehold {
    fn household_id(&self) -> u32 {
        self.spec.id
    }

    fn prox_scale(&self) -> f64 {
        self.prox_scale
    }

    fn respond(&self, broadcast: &Broadcast) -> HouseholdReply {
        let sol = solver::solve_household_exact(
            &self.spec,
            &broadcast.prices,
            broadcast.prox_weight,
            &self.horizon,
        );
        HouseholdReply {
            household_id: self.spec.id,
            choices: sol.choices,
            demand: sol.demand,
            objective: sol.objective,
        }
    }
}

/// One row of the convergence trace when serialized to CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 1-based iteration number.
    pub k: usize,
    /// Doubly smoothed dual value at the prices the households solved.
    pub dual: f64,
    /// Recovered primal cost of serving the summed household schedules;
    /// `None` when that total violates a supply cap.
    pub primal: Option<f64>,
    /// Euclidean norm of the smoothed dual gradient.
    pub grad_norm: f64,
    /// Unfloored proximal weight used in the step length.
    pub mu: f64,
    /// Floored proximal weight actually broadcast.
    pub mu_hat: f64,
    pub kappa: f64,
}

/// The lowest-cost integer-feasible assignment seen during a run, with
/// everything needed to audit or re-issue it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestIterate {
    pub k: usize,
    /// Generation cost of serving `total_demand`.
    pub objective: f64,
    /// Prices the households responded to at iteration `k`.
    pub prices: Vec<f64>,
    /// Proximal weight in force at iteration `k`.
    pub mu_hat: f64,
    pub assignments: Vec<HouseholdAssignment>,
    pub total_demand: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HouseholdAssignment {
    pub household_id: u32,
    pub choices: Vec<ApplianceChoice>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub records: Vec<IterationRecord>,
    /// Absent when no iteration produced a cap-respecting total.
    pub best: Option<BestIterate>,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Invalid(#[from] ScenarioError),
    #[error("no household endpoints were supplied")]
    NoEndpoints,
    #[error("two endpoints claim household id {household_id}")]
    DuplicateEndpoint { household_id: u32 },
    #[error("initial prices have {found} entries but the horizon has {expected} slots")]
    PriceLength { expected: usize, found: usize },
    #[error("endpoint for household {household_id} reported a non-positive schedule norm")]
    BadProxScale { household_id: u32 },
    #[error("household {household_id} returned a malformed reply")]
    BadReply { household_id: u32 },
    #[error("dual value became non-finite at iteration {iteration}")]
    NonFiniteDual { iteration: usize },
}

/// Run the full coordination loop on a scenario with in-process households.
pub fn run(scenario: &Scenario, params: &AlgoParams) -> Result<RunTrace, RunError> {
    run_observed(scenario, params, |_, _| {})
}

/// Like [`run`], but invokes `observer` once per iteration — with the
/// just-completed record and the prices the households solved at — before
/// the multiplier step, so callers can evaluate per-iterate diagnostics.
pub fn run_observed(
    scenario: &Scenario,
    params: &AlgoParams,
    observer: impl FnMut(&IterationRecord, &[f64]),
) -> Result<RunTrace, RunError> {
    scenario.validate()?;
    params.validate()?;
    let endpoints: Vec<LocalHousehold> = scenario
        .households
        .iter()
        .map(|spec| LocalHousehold::new(spec.clone(), scenario.horizon, params.prox_mode))
        .collect();
    drive(&scenario.horizon, &scenario.cost, &endpoints, params, observer)
}

/// Run against caller-supplied endpoints (remote transports, mocks). The
/// coordinator interacts with them purely through the message types.
pub fn run_with_endpoints<E: HouseholdEndpoint>(
    horizon: &TimeHorizon,
    cost: &AggregatorCostModel,
    endpoints: &[E],
    params: &AlgoParams,
) -> Result<RunTrace, RunError> {
    params.validate()?;
    cost.validate(horizon.num_slots).map_err(ScenarioError::from)?;
    drive(horizon, cost, endpoints, params, |_, _| {})
}

fn drive<E: HouseholdEndpoint>(
    horizon: &TimeHorizon,
    cost: &AggregatorCostModel,
    endpoints: &[E],
    params: &AlgoParams,
    mut observer: impl FnMut(&IterationRecord, &[f64]),
) -> Result<RunTrace, RunError> {
    let t_len = horizon.num_slots;
    let initial = match &params.lambda1 {
        Some(l) if l.len() != t_len => {
            return Err(RunError::PriceLength { expected: t_len, found: l.len() });
        }
        Some(l) => l.clone(),
        None => vec![0.0; t_len],
    };
    if endpoints.is_empty() {
        return Err(RunError::NoEndpoints);
    }
    let mut order: Vec<&E> = endpoints.iter().collect();
    order.sort_by_key(|e| e.household_id());
    for pair in order.windows(2) {
        if pair[0].household_id() == pair[1].household_id() {
            return Err(RunError::DuplicateEndpoint { household_id: pair[0].household_id() });
        }
    }
    let num_households = order.len();

    let mut d_x = 0.0;
    for endpoint in &order {
        let scale = endpoint.prox_scale();
        if !(scale.is_finite() && scale > 0.0) {
            return Err(RunError::BadProxScale { household_id: endpoint.household_id() });
        }
        d_x += scale;
    }

    let coupling = engine::coupling_norm_sq(num_households);
    let schedule = SmoothingSchedule::new(
        params.alpha1_coeff * coupling * d_x,
        params.alpha_maxiter_coeff * coupling * d_x,
        params.kappa1,
        params.kappa_maxiter,
        params.mu_hat_min,
        d_x,
        params.maxiter,
    );
    let mut state = EngineState::new(initial, schedule, num_households);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(params.worker_count)
        .build()
        .expect("failed to build worker pool");

    let mut records: Vec<IterationRecord> = Vec::with_capacity(params.maxiter);
    let mut best: Option<BestIterate> = None;

    for k in 1..=params.maxiter {
        let lambda_hat = state.multipliers.lambda_hat.clone();
        if lambda_hat.iter().any(|l| !l.is_finite()) {
            return Err(RunError::NonFiniteDual { iteration: k });
        }
        let mu = state.schedule.mu;
        let mu_hat = state.schedule.mu_hat;
        let kappa = state.schedule.kappa;

        let (x0, d0) = solve_aggregator(cost, &lambda_hat);
        let broadcast =
            Broadcast { iteration: k, prices: lambda_hat.clone(), prox_weight: mu_hat };
        let replies: Vec<HouseholdReply> =
            pool.install(|| order.par_iter().map(|e| e.respond(&broadcast)).collect());

        let mut households_obj = 0.0;
        let mut total = vec![0.0; t_len];
        let mut demands: Vec<DemandProfile> = Vec::with_capacity(num_households);
        let mut assignments: Vec<HouseholdAssignment> = Vec::with_capacity(num_households);
        for (endpoint, reply) in order.iter().zip(replies) {
            if reply.household_id != endpoint.household_id()
                || reply.demand.len() != t_len
                || !reply.objective.is_finite()
            {
                return Err(RunError::BadReply { household_id: endpoint.household_id() });
            }
            households_obj += reply.objective;
            for (acc, x) in total.iter_mut().zip(reply.demand.values()) {
                *acc += x;
            }
            assignments.push(HouseholdAssignment {
                household_id: reply.household_id,
                choices: reply.choices,
            });
            demands.push(reply.demand);
        }
        let total = DemandProfile::from_raw(total);

        let grad = engine::gradient(&demands, &x0, &lambda_hat, kappa)
            .expect("reply lengths were checked above");
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let primal =
            if cost.within_caps(&total) { Some(cost.total_cost(&total)) } else { None };
        let lambda_norm_sq: f64 = lambda_hat.iter().map(|l| l * l).sum();
        let dual = d0 + households_obj - 0.5 * kappa * lambda_norm_sq;
        if !dual.is_finite() {
            return Err(RunError::NonFiniteDual { iteration: k });
        }

        let record = IterationRecord { k, dual, primal, grad_norm, mu, mu_hat, kappa };
        if let Some(p) = primal {
            // Strict improvement keeps the earliest iteration on ties.
            if best.as_ref().map_or(true, |b| p < b.objective) {
                best = Some(BestIterate {
                    k,
                    objective: p,
                    prices: lambda_hat.clone(),
                    mu_hat,
                    assignments,
                    total_demand: total.values().to_vec(),
                });
            }
        }
        observer(&record, &lambda_hat);
        records.push(record);

        state.step(&grad);
        state.schedule.advance();
    }

    Ok(RunTrace { records, best })
}
