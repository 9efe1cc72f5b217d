//! Smoothed-dual machinery: gradient assembly, step-size constants, the
//! accelerated multiplier update, and the geometric parameter schedules.
//!
//! The relaxed coupling constraint `Σ_i x_i^t − x_0^t = 0` makes the dual
//! gradient at prices λ equal to the constraint residual of the subproblem
//! minimizers, minus `κ·λ` from the concave regularizer. With the proximal
//! weight μ on households, the gradient is Lipschitz with constant
//! `‖A_c‖²/μ + κ`, where `A_c` is the coupling matrix whose squared spectral
//! norm is `I + 1` for `I` households plus the aggregator. The multipliers
//! advance by a constant-step fast gradient method with extrapolation; both
//! smoothing weights decay geometrically so the surrogate dual approaches the
//! true one as iterations proceed.

use thiserror::Error;

use crate::model::DemandProfile;
use crate::scenario::Scenario;
use crate::solver::{solve_aggregator, solve_household_exact};

/// Current and extrapolated price vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Multipliers {
    pub lambda: Vec<f64>,
    pub lambda_hat: Vec<f64>,
}

impl Multipliers {
    /// Both vectors start at the same point, as the first iteration requires.
    pub fn from_initial(lambda: Vec<f64>) -> Self {
        Multipliers { lambda_hat: lambda.clone(), lambda }
    }

    pub fn zeros(num_slots: usize) -> Self {
        Multipliers::from_initial(vec![0.0; num_slots])
    }
}

/// Smoothing weights and their geometric decay state.
///
/// `alpha` scales the household proximal weight via `mu = alpha / d_x`;
/// `mu_hat` is the floored value actually broadcast to households; `kappa`
/// weights the concave dual regularizer. Both decay factors are fixed at
/// construction so that after `maxiter` applications the weights land on
/// their configured endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingSchedule {
    pub mu: f64,
    pub mu_hat: f64,
    pub kappa: f64,
    pub alpha: f64,
    pub mu_hat_min: f64,
    pub alpha_decay: f64,
    pub kappa_decay: f64,
    pub d_x: f64,
    pub maxiter: usize,
}

impl SmoothingSchedule {
    pub fn new(
        alpha_start: f64,
        alpha_end: f64,
        kappa_start: f64,
        kappa_end: f64,
        mu_hat_min: f64,
        d_x: f64,
        maxiter: usize,
    ) -> Self {
        assert!(alpha_start > 0.0 && alpha_end > 0.0 && alpha_start > alpha_end);
        assert!(kappa_start > 0.0 && kappa_end > 0.0 && kappa_start > kappa_end);
        assert!(d_x > 0.0 && maxiter >= 1);
        let alpha_decay = ((alpha_end / alpha_start).ln() / maxiter as f64).exp();
        let kappa_decay = ((kappa_end / kappa_start).ln() / maxiter as f64).exp();
        let mu = alpha_start / d_x;
        SmoothingSchedule {
            mu,
            mu_hat: mu.max(mu_hat_min),
            kappa: kappa_start,
            alpha: alpha_start,
            mu_hat_min,
            alpha_decay,
            kappa_decay,
            d_x,
            maxiter,
        }
    }

    /// One geometric decay of α and κ, with μ tied to α and μ̂ floored.
    pub fn advance(&mut self) {
        self.alpha *= self.alpha_decay;
        self.kappa *= self.kappa_decay;
        self.mu = self.alpha / self.d_x;
        self.mu_hat = self.mu.max(self.mu_hat_min);
    }
}

/// Multiplier iterate plus schedule, advanced once per iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineState {
    pub multipliers: Multipliers,
    pub schedule: SmoothingSchedule,
    /// 1-based iteration counter.
    pub iteration: usize,
    num_households: usize,
}

impl EngineState {
    pub fn new(initial_lambda: Vec<f64>, schedule: SmoothingSchedule, num_households: usize) -> Self {
        EngineState {
            multipliers: Multipliers::from_initial(initial_lambda),
            schedule,
            iteration: 1,
            num_households,
        }
    }

    /// Fast-gradient update at the extrapolated point: ascend by `1/L` along
    /// `grad`, then extrapolate with the momentum coefficient. The step
    /// length uses the unfloored μ of the current iteration. No projection
    /// is applied; multipliers may go negative.
    pub fn step(&mut self, grad: &[f64]) {
        debug_assert_eq!(grad.len(), self.multipliers.lambda.len());
        let l = lipschitz_constant(self.schedule.mu, self.schedule.kappa, self.num_households);
        let beta = momentum_beta(l, self.schedule.kappa);
        let m = &mut self.multipliers;
        for t in 0..m.lambda.len() {
            let next = m.lambda_hat[t] + grad[t] / l;
            m.lambda_hat[t] = next + beta * (next - m.lambda[t]);
            m.lambda[t] = next;
        }
        self.iteration += 1;
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("length mismatch: expected {expected} slots, found {found}")]
    LengthMismatch { expected: usize, found: usize },
}

/// Squared spectral norm of the coupling matrix for `I` households: the
/// matrix stacks one identity block per household and one negated block for
/// the aggregator, so `A_c·A_cᵀ = (I+1)·Id` and the norm is `I + 1`.
pub fn coupling_norm_sq(num_households: usize) -> f64 {
    assert!(num_households >= 1);
    (num_households + 1) as f64
}

/// Gradient of the doubly smoothed dual at the point where the subproblems
/// were solved: per slot, `Σ_i x_i^t − x_0^t − κ·λ̂^t`. Households are summed
/// in the given (ascending-id) order so reductions are bit-reproducible.
pub fn gradient(
    household_demands: &[DemandProfile],
    x0: &DemandProfile,
    lambda_hat: &[f64],
    kappa: f64,
) -> Result<Vec<f64>, EngineError> {
    let t_len = lambda_hat.len();
    if x0.len() != t_len {
        return Err(EngineError::LengthMismatch { expected: t_len, found: x0.len() });
    }
    let mut grad = vec![0.0; t_len];
    for demand in household_demands {
        if demand.len() != t_len {
            return Err(EngineError::LengthMismatch { expected: t_len, found: demand.len() });
        }
        for (g, x) in grad.iter_mut().zip(demand.values()) {
            *g += x;
        }
    }
    for (t, g) in grad.iter_mut().enumerate() {
        *g -= x0.values()[t] + kappa * lambda_hat[t];
    }
    Ok(grad)
}

/// `‖A_c‖²/μ + κ` — the gradient's Lipschitz constant; its reciprocal is the
/// step size.
pub fn lipschitz_constant(mu: f64, kappa: f64, num_households: usize) -> f64 {
    coupling_norm_sq(num_households) / mu + kappa
}

/// `(√L − √κ) / (√L + √κ)`, in `[0, 1)` for `L ≥ κ > 0`.
pub fn momentum_beta(l: f64, kappa: f64) -> f64 {
    let (sl, sk) = (l.sqrt(), kappa.sqrt());
    (sl - sk) / (sl + sk)
}

/// Value and gradient of the doubly smoothed dual at `lambda`, from exact
/// subproblem re-solves. Supports μ = 0 and κ = 0 for the unsmoothed dual.
#[derive(Debug, Clone, PartialEq)]
pub struct DualEval {
    pub value: f64,
    pub gradient: Vec<f64>,
}

pub fn smoothed_dual(scenario: &Scenario, lambda: &[f64], mu: f64, kappa: f64) -> DualEval {
    let (x0, d0) = solve_aggregator(&scenario.cost, lambda);
    let mut order: Vec<&crate::model::HouseholdSpec> = scenario.households.iter().collect();
    order.sort_by_key(|h| h.id);
    let mut value = d0;
    let mut demands = Vec::with_capacity(order.len());
    for spec in order {
        let sol = solve_household_exact(spec, lambda, mu, &scenario.horizon);
        value += sol.objective;
        demands.push(sol.demand);
    }
    let norm_sq: f64 = lambda.iter().map(|l| l * l).sum();
    value -= 0.5 * kappa * norm_sq;
    let gradient = gradient(&demands, &x0, lambda, kappa).expect("lengths agree by construction");
    DualEval { value, gradient }
}
