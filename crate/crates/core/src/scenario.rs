//! Problem instances, seeded random generation, and file formats.
//!
//! All persisted files are versioned TOML documents; traces additionally
//! export to CSV with the fixed header `k,dual,primal,grad_norm,mu,mu_hat,kappa`.
//! Generation draws nothing but integers from a seeded ChaCha8 stream and
//! scales them onto fixed grids, so identical seeds yield byte-identical
//! scenarios on every platform.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coordinator::{BestIterate, IterationRecord, RunTrace};
use crate::model::{Appliance, ApplianceKind, HouseholdSpec, SlotRange, TimeHorizon};
use crate::oracle::OracleResult;
use crate::solver::{AggregatorCostModel, SlotCost};

/// Version stamped into every persisted file.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMetadata {
    pub name: String,
    pub seed: u64,
}

/// A complete problem instance: horizon, households, and generation cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub horizon: TimeHorizon,
    pub households: Vec<HouseholdSpec>,
    pub cost: AggregatorCostModel,
    pub metadata: ScenarioMetadata,
}

impl Scenario {
    pub fn num_households(&self) -> usize {
        self.households.len()
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.horizon.validate()?;
        if self.households.is_empty() {
            return Err(ScenarioError::InvalidScenario(
                "scenario must contain at least one household".into(),
            ));
        }
        for (i, household) in self.households.iter().enumerate() {
            household.validate(&self.horizon)?;
            if self.households[..i].iter().any(|other| other.id == household.id) {
                return Err(ScenarioError::InvalidScenario(format!(
                    "duplicate household id {}",
                    household.id
                )));
            }
        }
        self.cost.validate(self.horizon.num_slots)?;
        Ok(())
    }
}

/// Which extremum of ½‖x‖² households report for scaling the proximal
/// weight. `Min` is the stated rule; `Max` is an experimentation switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxMode {
    #[default]
    Min,
    Max,
}

/// Algorithm parameters. The α coefficients are multiples of `‖A_c‖²·D_X`,
/// resolved at run start once `D_X` is known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlgoParams {
    /// Initial prices; `None` means all zeros.
    pub lambda1: Option<Vec<f64>>,
    pub kappa1: f64,
    pub kappa_maxiter: f64,
    pub alpha1_coeff: f64,
    pub alpha_maxiter_coeff: f64,
    pub mu_hat_min: f64,
    pub maxiter: usize,
    /// Worker threads for household solves; 0 picks the machine default.
    pub worker_count: usize,
    /// Reserved for randomized protocol extensions; the run itself is
    /// deterministic and never consumes it.
    pub rng_seed: u64,
    pub prox_mode: ProxMode,
}

impl Default for AlgoParams {
    fn default() -> Self {
        AlgoParams {
            lambda1: None,
            kappa1: 10.0,
            kappa_maxiter: 1e-4,
            alpha1_coeff: 3e-4,
            alpha_maxiter_coeff: 8e-8,
            mu_hat_min: 1e-3,
            maxiter: 1000,
            worker_count: 0,
            rng_seed: 0,
            prox_mode: ProxMode::Min,
        }
    }
}

impl AlgoParams {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |msg: String| Err(ScenarioError::InvalidParams(msg));
        if !(self.kappa1 > self.kappa_maxiter && self.kappa_maxiter > 0.0) {
            return bad(format!(
                "kappa must decay: need kappa1 > kappa_maxiter > 0, got {} and {}",
                self.kappa1, self.kappa_maxiter
            ));
        }
        if !(self.alpha1_coeff > self.alpha_maxiter_coeff && self.alpha_maxiter_coeff > 0.0) {
            return bad(format!(
                "alpha must decay: need alpha1_coeff > alpha_maxiter_coeff > 0, got {} and {}",
                self.alpha1_coeff, self.alpha_maxiter_coeff
            ));
        }
        if !(0.0001..=0.005).contains(&self.mu_hat_min) {
            return bad(format!(
                "mu_hat_min must lie in [0.0001, 0.005], got {}",
                self.mu_hat_min
            ));
        }
        if self.maxiter == 0 {
            return bad("maxiter must be at least 1".into());
        }
        if let Some(lambda1) = &self.lambda1 {
            if lambda1.iter().any(|l| !l.is_finite()) {
                return bad("initial prices must be finite".into());
            }
        }
        Ok(())
    }
}

/// Grid-valued generation ranges. Powers live on a 0.1 kWh grid, quadratic
/// cost coefficients on a 1e-4 grid, linear coefficients on a 1e-3 grid;
/// ranges are inclusive in grid steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub noninterruptible_duration: (usize, usize),
    pub interruptible_duration: (usize, usize),
    /// Per-slot power in tenths of a kWh, e.g. (2, 30) = 0.2 ..= 3.0.
    pub power_tenths: (u32, u32),
    /// A non-interruptible window is `duration` plus 0..=slack slots long
    /// (each extra slot adds one start choice).
    pub noninterruptible_window_slack: usize,
    /// An interruptible window is `duration` plus 0..=slack slots long
    /// (choice counts grow binomially, so keep this small).
    pub interruptible_window_slack: usize,
    /// Quadratic coefficient in 1e-4 units, e.g. (5, 20) = 0.0005 ..= 0.002.
    pub quadratic_grid: (u32, u32),
    /// Linear coefficient in 1e-3 units, e.g. (20, 80) = 0.02 ..= 0.08.
    pub linear_grid: (u32, u32),
    /// Uniform supply cap = factor × the summed peak power of all appliances.
    pub supply_cap_factor: f64,
    /// Ceiling on the instance's joint choice count (the product of every
    /// appliance's choice count across all households). Once the running
    /// product would pass it, later appliances get windows equal to their
    /// duration (a single choice). This keeps generated instances inside
    /// the centralized solver's enforced choice-space cap; set `None` for
    /// scale runs that never meet that solver.
    pub max_central_choices: Option<u128>,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            noninterruptible_duration: (1, 4),
            interruptible_duration: (2, 4),
            power_tenths: (2, 30),
            noninterruptible_window_slack: 2,
            interruptible_window_slack: 1,
            quadratic_grid: (5, 20),
            linear_grid: (20, 80),
            supply_cap_factor: 1.5,
            max_central_choices: Some(1_000_000),
        }
    }
}

/// Deterministically generate a scenario from a seed: appliance kinds are a
/// 50/50 draw, durations and window slacks are uniform within the configured
/// ranges, and every continuous quantity is drawn as an integer on a fixed
/// grid. The draw order is fixed (households, then appliances, then per-slot
/// costs), so a seed fully determines the instance. The joint choice count
/// is kept at or below `max_central_choices` by rigidifying the windows of
/// whatever appliances would overflow it.
pub fn generate_scenario(
    seed: u64,
    num_households: usize,
    num_slots: usize,
    appliances_per_household: usize,
    config: &GenerationConfig,
) -> Result<Scenario, ScenarioError> {
    let inconsistent = |msg: String| Err(ScenarioError::InconsistentRanges(msg));
    if num_households == 0 || num_slots == 0 || appliances_per_household == 0 {
        return inconsistent("households, slots, and appliances must all be at least 1".into());
    }
    for (label, (lo, hi)) in [
        ("noninterruptible_duration", config.noninterruptible_duration),
        ("interruptible_duration", config.interruptible_duration),
    ] {
        if lo == 0 || lo > hi {
            return inconsistent(format!("{label} range ({lo}, {hi}) is empty"));
        }
        if lo > num_slots {
            return inconsistent(format!(
                "{label} minimum {lo} cannot fit in {num_slots} slots"
            ));
        }
    }
    if config.max_central_choices == Some(0) {
        return inconsistent("max_central_choices must be at least 1 when set".into());
    }
    if config.power_tenths.0 == 0 || config.power_tenths.0 > config.power_tenths.1 {
        return inconsistent(format!("power range {:?} is empty", config.power_tenths));
    }
    if config.quadratic_grid.0 > config.quadratic_grid.1 {
        return inconsistent(format!("quadratic range {:?} is empty", config.quadratic_grid));
    }
    if config.linear_grid.0 > config.linear_grid.1 {
        return inconsistent(format!("linear range {:?} is empty", config.linear_grid));
    }
    if !(config.supply_cap_factor.is_finite() && config.supply_cap_factor > 0.0) {
        return inconsistent(format!(
            "supply cap factor must be positive, got {}",
            config.supply_cap_factor
        ));
    }

    let horizon = TimeHorizon::new(0, num_slots, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut households = Vec::with_capacity(num_households);
    let mut peak_sum = 0.0f64;
    let mut joint_choices: u128 = 1;
    for household_id in 0..num_households {
        let mut appliances = Vec::with_capacity(appliances_per_household);
        for appliance_id in 0..appliances_per_household {
            let interruptible = rng.gen_range(0..2u8) == 1;
            let ((lo, hi), max_slack) = if interruptible {
                (config.interruptible_duration, config.interruptible_window_slack)
            } else {
                (config.noninterruptible_duration, config.noninterruptible_window_slack)
            };
            let duration = rng.gen_range(lo..=hi.min(num_slots).max(lo));
            let mut slack = rng.gen_range(0..=max_slack).min(num_slots - duration);
            let choices = |slack: usize| -> u128 {
                if interruptible {
                    crate::model::binomial((duration + slack) as u128, duration as u128)
                } else {
                    (slack + 1) as u128
                }
            };
            if let Some(limit) = config.max_central_choices {
                if joint_choices.saturating_mul(choices(slack)) > limit {
                    slack = 0;
                }
            }
            joint_choices = joint_choices.saturating_mul(choices(slack));
            let window_len = duration + slack;
            let window_start = rng.gen_range(0..=num_slots - window_len);
            let window = SlotRange::new(window_start, window_start + window_len - 1);
            let kind = if interruptible {
                let power = rng.gen_range(config.power_tenths.0..=config.power_tenths.1) as f64 * 0.1;
                peak_sum += power;
                ApplianceKind::Interruptible { duration, power }
            } else {
                let profile: Vec<f64> = (0..duration)
                    .map(|_| rng.gen_range(config.power_tenths.0..=config.power_tenths.1) as f64 * 0.1)
                    .collect();
                peak_sum += profile.iter().copied().fold(0.0, f64::max);
                ApplianceKind::NonInterruptible { profile }
            };
            appliances.push(Appliance { id: appliance_id as u32, window, kind });
        }
        households.push(HouseholdSpec { id: household_id as u32, appliances });
    }
    let supply_cap = config.supply_cap_factor * peak_sum;
    let slots = (0..num_slots)
        .map(|_| {
            let quadratic =
                rng.gen_range(config.quadratic_grid.0..=config.quadratic_grid.1) as f64 * 1e-4;
            let linear = rng.gen_range(config.linear_grid.0..=config.linear_grid.1) as f64 * 1e-3;
            SlotCost { quadratic, linear, supply_cap }
        })
        .collect();
    let scenario = Scenario {
        horizon,
        households,
        cost: AggregatorCostModel { slots },
        metadata: ScenarioMetadata {
            name: format!(
                "gen-s{seed}-h{num_households}-t{num_slots}-a{appliances_per_household}"
            ),
            seed,
        },
    };
    scenario.validate()?;
    Ok(scenario)
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("unsupported file version {found} (this build reads version {expected})")]
    Version { found: u32, expected: u32 },
    #[error("failed to parse {path}: {message}")]
    Schema { path: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    InvalidModel(#[from] crate::model::ModelError),
    #[error(transparent)]
    InvalidCost(#[from] crate::solver::SolveError),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("inconsistent generation ranges: {0}")]
    InconsistentRanges(String),
    #[error("malformed trace CSV, line {line}: {message}")]
    Csv { line: usize, message: String },
}

// ---------------------------------------------------------------------------
// Versioned TOML persistence.
// ---------------------------------------------------------------------------

// Each file type carries its version as an ordinary field (no serde
// flattening — it would buffer the document and strip line/column spans
// from parse errors).

#[derive(Deserialize)]
struct VersionProbe {
    version: u32,
}

#[derive(Serialize, Deserialize)]
struct ScenarioFile {
    version: u32,
    scenario: Scenario,
}

#[derive(Serialize, Deserialize)]
struct ParamsFile {
    version: u32,
    params: AlgoParams,
}

#[derive(Serialize, Deserialize)]
struct TraceFile {
    version: u32,
    trace: RunTrace,
}

#[derive(Serialize, Deserialize)]
struct OracleFile {
    version: u32,
    oracle: OracleResult,
}

#[derive(Serialize, Deserialize)]
struct SolutionFile {
    version: u32,
    solution: BestIterate,
}

fn write_file(path: &Path, contents: &str) -> Result<(), ScenarioError> {
    fs::write(path, contents).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn read_file(path: &Path) -> Result<String, ScenarioError> {
    fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn render<T: Serialize>(file: &T) -> String {
    toml::to_string_pretty(file).expect("all persisted types serialize to TOML")
}

/// Check the version stamp, then parse the full document; schema errors keep
/// toml's line/column context and field path.
fn parse_versioned<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T, ScenarioError> {
    let schema_err = |e: toml::de::Error| ScenarioError::Schema {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let probe: VersionProbe = toml::from_str(text).map_err(schema_err)?;
    if probe.version != FORMAT_VERSION {
        return Err(ScenarioError::Version { found: probe.version, expected: FORMAT_VERSION });
    }
    toml::from_str(text).map_err(schema_err)
}

pub fn save_scenario(scenario: &Scenario, path: &Path) -> Result<(), ScenarioError> {
    let file = ScenarioFile { version: FORMAT_VERSION, scenario: scenario.clone() };
    write_file(path, &render(&file))
}

/// Load and fully validate a scenario file.
pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let file: ScenarioFile = parse_versioned(path, &read_file(path)?)?;
    file.scenario.validate()?;
    Ok(file.scenario)
}

pub fn save_params(params: &AlgoParams, path: &Path) -> Result<(), ScenarioError> {
    let file = ParamsFile { version: FORMAT_VERSION, params: params.clone() };
    write_file(path, &render(&file))
}

pub fn load_params(path: &Path) -> Result<AlgoParams, ScenarioError> {
    let file: ParamsFile = parse_versioned(path, &read_file(path)?)?;
    file.params.validate()?;
    Ok(file.params)
}

pub fn save_trace(trace: &RunTrace, path: &Path) -> Result<(), ScenarioError> {
    let file = TraceFile { version: FORMAT_VERSION, trace: trace.clone() };
    write_file(path, &render(&file))
}

pub fn load_trace(path: &Path) -> Result<RunTrace, ScenarioError> {
    Ok(parse_versioned::<TraceFile>(path, &read_file(path)?)?.trace)
}

pub fn save_oracle_result(result: &OracleResult, path: &Path) -> Result<(), ScenarioError> {
    let file = OracleFile { version: FORMAT_VERSION, oracle: result.clone() };
    write_file(path, &render(&file))
}

pub fn load_oracle_result(path: &Path) -> Result<OracleResult, ScenarioError> {
    Ok(parse_versioned::<OracleFile>(path, &read_file(path)?)?.oracle)
}

pub fn save_solution(solution: &BestIterate, path: &Path) -> Result<(), ScenarioError> {
    let file = SolutionFile { version: FORMAT_VERSION, solution: solution.clone() };
    write_file(path, &render(&file))
}

pub fn load_solution(path: &Path) -> Result<BestIterate, ScenarioError> {
    Ok(parse_versioned::<SolutionFile>(path, &read_file(path)?)?.solution)
}

// ---------------------------------------------------------------------------
// CSV trace export.
// ---------------------------------------------------------------------------

pub const TRACE_CSV_HEADER: &str = "k,dual,primal,grad_norm,mu,mu_hat,kappa";

/// One row per iteration; an infeasible recovered primal prints as `inf`.
/// Numbers use Rust's shortest round-trip decimal form, locale-independent.
pub fn trace_to_csv(records: &[IterationRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(TRACE_CSV_HEADER);
    out.push('\n');
    for r in records {
        let primal = match r.primal {
            Some(p) => format!("{p}"),
            None => "inf".to_string(),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.k, r.dual, primal, r.grad_norm, r.mu, r.mu_hat, r.kappa
        ));
    }
    out
}

pub fn save_trace_csv(records: &[IterationRecord], path: &Path) -> Result<(), ScenarioError> {
    write_file(path, &trace_to_csv(records))
}

pub fn parse_trace_csv(text: &str) -> Result<Vec<IterationRecord>, ScenarioError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end() == TRACE_CSV_HEADER => {}
        Some((_, header)) => {
            return Err(ScenarioError::Csv {
                line: 1,
                message: format!("expected header `{TRACE_CSV_HEADER}`, found `{header}`"),
            });
        }
        None => {
            return Err(ScenarioError::Csv { line: 1, message: "empty file".into() });
        }
    }
    let mut records = Vec::new();
    for (index, line) in lines {
        let line_no = index + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(ScenarioError::Csv {
                line: line_no,
                message: format!("expected 7 fields, found {}", fields.len()),
            });
        }
        let csv_err = |what: &str| ScenarioError::Csv {
            line: line_no,
            message: format!("could not parse {what}"),
        };
        let k: usize = fields[0].parse().map_err(|_| csv_err("k"))?;
        let dual: f64 = fields[1].parse().map_err(|_| csv_err("dual"))?;
        let primal = if fields[2] == "inf" {
            None
        } else {
            Some(fields[2].parse().map_err(|_| csv_err("primal"))?)
        };
        let grad_norm: f64 = fields[3].parse().map_err(|_| csv_err("grad_norm"))?;
        let mu: f64 = fields[4].parse().map_err(|_| csv_err("mu"))?;
        let mu_hat: f64 = fields[5].parse().map_err(|_| csv_err("mu_hat"))?;
        let kappa: f64 = fields[6].parse().map_err(|_| csv_err("kappa"))?;
        records.push(IterationRecord { k, dual, primal, grad_norm, mu, mu_hat, kappa });
    }
    Ok(records)
}

pub fn load_trace_csv(path: &Path) -> Result<Vec<IterationRecord>, ScenarioError> {
    parse_trace_csv(&read_file(path)?)
}
