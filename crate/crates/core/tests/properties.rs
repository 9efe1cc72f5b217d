//! Cross-module invariants: the committed golden fixture against both exact
//! solvers, audits of what a run reports, and sampled properties tying the
//! dual machinery to the independent reference solvers.

use std::path::PathBuf;

use dr_core::engine::smoothed_dual;
use dr_core::model::household_demand;
use dr_core::oracle::{
    self, unsmoothed_dual, DEFAULT_CENTRAL_BRUTEFORCE_CAP, DEFAULT_NODE_BUDGET,
};
use dr_core::scenario::{
    generate_scenario, load_scenario, AlgoParams, GenerationConfig, Scenario,
};
use proptest::prelude::*;

/// Exact optimum of the committed desk-scale fixture, frozen the day the
/// fixture was generated. Exhaustive enumeration of all 622,080 joint
/// schedules and the branch-and-bound search both land on it.
const DESK_SCALE_OPTIMUM: f64 = 7.188866;

fn fixture_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/desk_scale.toml")
}

fn desk_fixture() -> Scenario {
    load_scenario(&fixture_path()).expect("committed fixture stays readable")
}

fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

#[test]
fn fixture_matches_its_generator() {
    let regenerated = generate_scenario(1, 8, 12, 3, &GenerationConfig::default())
        .expect("consistent generation");
    assert_eq!(
        regenerated,
        desk_fixture(),
        "seed-1 generation no longer reproduces the committed fixture; either the \
         generator changed (regenerate the fixture deliberately) or the file was edited"
    );
}

#[test]
fn both_exact_solvers_agree_with_the_frozen_optimum() {
    let scenario = desk_fixture();
    let searched = oracle::solve_central(&scenario, DEFAULT_NODE_BUDGET)
        .expect("fixture fits the choice-space cap");
    let enumerated = oracle::solve_central_bruteforce(&scenario, DEFAULT_CENTRAL_BRUTEFORCE_CAP)
        .expect("fixture fits the enumeration cap");
    assert!(rel_diff(searched.objective, DESK_SCALE_OPTIMUM) <= 1e-9);
    assert!(rel_diff(enumerated.objective, DESK_SCALE_OPTIMUM) <= 1e-9);
    assert!(rel_diff(searched.objective, enumerated.objective) <= 1e-9);
    // Audit both answers against the cost model they claim to minimize.
    for result in [&searched, &enumerated] {
        let demand = dr_core::model::DemandProfile::from_values(result.total_demand.clone())
            .expect("solver demands are nonnegative");
        assert!(rel_diff(scenario.cost.total_cost(&demand), result.objective) <= 1e-12);
    }
}

/// Everything a run reports about its best iterate must be reconstructible
/// from the scenario alone: the demand is the sum of the household demands
/// implied by the stored choices, and the objective is the cost of serving
/// that demand.
#[test]
fn best_iterate_report_is_auditable() {
    let scenario = desk_fixture();
    let params = AlgoParams { maxiter: 300, worker_count: 1, ..AlgoParams::default() };
    let trace = dr_core::run(&scenario, &params).expect("run succeeds");
    let best = trace.best.expect("fixture runs recover a feasible iterate");

    let mut rebuilt = dr_core::model::DemandProfile::zeros(scenario.horizon.num_slots);
    assert_eq!(best.assignments.len(), scenario.num_households());
    for assignment in &best.assignments {
        let spec = scenario
            .households
            .iter()
            .find(|h| h.id == assignment.household_id)
            .expect("assignment names a real household");
        let demand = household_demand(spec, &assignment.choices, &scenario.horizon)
            .expect("stored choices are feasible for their household");
        rebuilt.add_assign(&demand);
    }
    assert_eq!(rebuilt.values(), best.total_demand.as_slice());
    assert!(rel_diff(scenario.cost.total_cost(&rebuilt), best.objective) <= 1e-12);
    assert_eq!(best.prices.len(), scenario.horizon.num_slots);
    assert!(trace.records[best.k - 1].primal == Some(best.objective));
}

/// The run's recovered cost can never undercut the exhaustive optimum, no
/// matter the iteration budget (here deliberately tiny ones).
#[test]
fn recovered_costs_never_undercut_enumeration() {
    for seed in [11u64, 12, 13] {
        let scenario = generate_scenario(seed, 2, 8, 2, &GenerationConfig::default())
            .expect("consistent generation");
        let optimum = oracle::solve_central_bruteforce(&scenario, DEFAULT_CENTRAL_BRUTEFORCE_CAP)
            .expect("tiny instances enumerate")
            .objective;
        for maxiter in [1usize, 3, 10] {
            let params = AlgoParams { maxiter, worker_count: 1, ..AlgoParams::default() };
            let trace = dr_core::run(&scenario, &params).expect("run succeeds");
            for record in &trace.records {
                if let Some(primal) = record.primal {
                    assert!(
                        primal >= optimum * (1.0 - 1e-9),
                        "iterate {} reports cost {primal} below the optimum {optimum}",
                        record.k
                    );
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    /// With both smoothing weights at zero the engine's dual evaluation and
    /// the reference implementation are the same function.
    #[test]
    fn zero_smoothing_dual_equals_reference(
        seed in 0u64..2_000,
        raw in prop::collection::vec(-0.2f64..0.4, 8),
    ) {
        let scenario = generate_scenario(seed, 2, 8, 2, &GenerationConfig::default())
            .expect("consistent generation");
        let eval = smoothed_dual(&scenario, &raw, 0.0, 0.0);
        let reference = unsmoothed_dual(&scenario, &raw);
        prop_assert!((eval.value - reference).abs() <= 1e-12 * reference.abs().max(1.0));
    }

    /// Weak duality against the enumerated optimum at arbitrary prices.
    #[test]
    fn unsmoothed_dual_lower_bounds_enumeration(
        seed in 0u64..2_000,
        raw in prop::collection::vec(-0.2f64..0.4, 8),
    ) {
        let scenario = generate_scenario(seed, 2, 8, 2, &GenerationConfig::default())
            .expect("consistent generation");
        let optimum = oracle::solve_central_bruteforce(&scenario, DEFAULT_CENTRAL_BRUTEFORCE_CAP)
            .expect("tiny instances enumerate")
            .objective;
        let dual = unsmoothed_dual(&scenario, &raw);
        prop_assert!(dual <= optimum * (1.0 + 1e-9) + 1e-12);
    }

    /// The doubly smoothed dual is strongly concave with parameter kappa:
    /// its value at any second point lies below the gradient extrapolation
    /// from the first by at least (kappa/2)·distance².
    #[test]
    fn smoothed_dual_is_strongly_concave(
        seed in 0u64..2_000,
        first in prop::collection::vec(-0.2f64..0.4, 8),
        second in prop::collection::vec(-0.2f64..0.4, 8),
        mu in 1e-4f64..1e-2,
        kappa in 1e-3f64..1.0,
    ) {
        let scenario = generate_scenario(seed, 2, 8, 2, &GenerationConfig::default())
            .expect("consistent generation");
        let at_first = smoothed_dual(&scenario, &first, mu, kappa);
        let at_second = smoothed_dual(&scenario, &second, mu, kappa);
        let mut extrapolated = at_first.value;
        let mut dist_sq = 0.0;
        for t in 0..first.len() {
            extrapolated += at_first.gradient[t] * (second[t] - first[t]);
            dist_sq += (second[t] - first[t]) * (second[t] - first[t]);
        }
        let slack = 1e-9 * at_first.value.abs().max(1.0);
        prop_assert!(at_second.value <= extrapolated - 0.5 * kappa * dist_sq + slack);
    }
}
