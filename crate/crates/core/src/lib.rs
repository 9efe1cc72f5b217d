//! Distributed demand-response load scheduling.
//!
//! The library schedules household appliances against a time-varying
//! generation cost. Each household owns a small set of deferrable appliances;
//! an aggregator buys the energy they consume. The coupled mixed-integer
//! problem is decomposed by relaxing the supply/demand balance with per-slot
//! prices (multipliers). Two smoothing terms — a proximal term on household
//! demand and a concave regularizer on the prices — make the dual smooth and
//! strongly concave, so an accelerated first-order method converges at a
//! geometric rate while both smoothing weights are driven to zero on a
//! geometric schedule.
//!
//! Modules:
//! - [`model`]: appliances, households, demand profiles, and their rules.
//! - [`solver`]: exact household subproblem solver and the aggregator's
//!   closed-form response.
//! - [`engine`]: multiplier state, smoothing schedule, accelerated update.
//! - [`coordinator`]: the broadcast/respond iteration loop and run traces.
//! - [`oracle`]: an independent centralized solver used to measure gaps.
//! - [`scenario`]: problem instances, random generation, file formats.
//! - [`report`]: gap summaries and convergence plots.

pub mod coordinator;
pub mod engine;
pub mod model;
pub mod oracle;
pub mod report;
pub mod scenario;
pub mod solver;

pub use coordinator::{run, run_observed, IterationRecord, RunTrace};
pub use model::{Appliance, ApplianceChoice, DemandProfile, HouseholdSpec, TimeHorizon};
pub use oracle::{solve_central, OracleResult};
pub use scenario::{generate_scenario, AlgoParams, Scenario};
