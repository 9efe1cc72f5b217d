//! End-to-end tests of the `drsim` binary: the documented pipeline, the
//! exit-code table, and the guarantee that the CLI is a thin shell whose
//! results are identical to direct library calls.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dr_core::model::{Appliance, ApplianceKind, HouseholdSpec, SlotRange, TimeHorizon};
use dr_core::scenario::{
    self, AlgoParams, Scenario, ScenarioMetadata,
};
use dr_core::solver::AggregatorCostModel;
use tempfile::TempDir;

fn drsim(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drsim"))
        .args(args)
        .current_dir(dir)
        .env_remove("DRSIM_WORKERS")
        .output()
        .expect("binary launches")
}

fn drsim_with_workers(args: &[&str], dir: &Path, workers: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drsim"))
        .args(args)
        .current_dir(dir)
        .env("DRSIM_WORKERS", workers)
        .output()
        .expect("binary launches")
}

fn stdout(output: &Output) -> String {
    String::from_utf8(output.stdout.clone()).expect("stdout is UTF-8")
}

fn assert_exit(output: &Output, code: i32) {
    assert_eq!(
        output.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        stdout(output),
        String::from_utf8_lossy(&output.stderr)
    );
}

/// generate → run → oracle → gap → plot on the desk-scale shape, checking
/// each documented output along the way.
#[test]
fn documented_pipeline_end_to_end() {
    let dir = TempDir::new().expect("tempdir");
    let root = dir.path();

    let generated = drsim(
        &[
            "generate", "--seed", "1", "--households", "8", "--slots", "12",
            "--appliances", "3", "--out", "scen.toml",
        ],
        root,
    );
    assert_exit(&generated, 0);

    let ran = drsim(
        &[
            "run", "--scenario", "scen.toml", "--trace-out", "trace.csv",
            "--solution-out", "solution.toml",
        ],
        root,
    );
    assert_exit(&ran, 0);
    let run_report = stdout(&ran);
    assert!(run_report.contains("iterations: 1000"), "got: {run_report}");
    assert!(run_report.contains("best primal: "), "got: {run_report}");

    let oracled = drsim(&["oracle", "--scenario", "scen.toml", "--out", "oracle.toml"], root);
    assert_exit(&oracled, 0);
    assert!(stdout(&oracled).contains("optimum: "), "got: {}", stdout(&oracled));

    let gapped = drsim(&["gap", "--trace", "trace.csv", "--oracle", "oracle.toml"], root);
    assert_exit(&gapped, 0);
    let gap_report = stdout(&gapped);
    let gap_line = gap_report
        .lines()
        .find(|l| l.starts_with("gap: "))
        .unwrap_or_else(|| panic!("no gap line in: {gap_report}"));
    let percent: f64 = gap_line
        .trim_start_matches("gap: ")
        .trim_end_matches('%')
        .parse()
        .expect("gap is numeric");
    assert!(
        (0.0..=5.0).contains(&percent),
        "desk-scale gap should land within 5%, got {percent}%"
    );

    let plotted = drsim(&["plot", "--trace", "trace.csv", "--out", "chart.svg"], root);
    assert_exit(&plotted, 0);
    let svg = fs::read_to_string(root.join("chart.svg")).expect("plot written");
    let polylines: Vec<&str> = svg.matches("<polyline").collect();
    assert_eq!(polylines.len(), 2, "one line for recovered cost, one for the dual");
    for points in svg.split("points=\"").skip(1) {
        let list = points.split('"').next().expect("quoted attribute");
        assert_eq!(
            list.split_whitespace().count(),
            1000,
            "each curve carries one point per iteration"
        );
    }

    // A second identical run must reproduce the trace byte for byte.
    let rerun = drsim(
        &["run", "--scenario", "scen.toml", "--trace-out", "again.csv"],
        root,
    );
    assert_exit(&rerun, 0);
    assert_eq!(
        fs::read(root.join("trace.csv")).expect("first trace"),
        fs::read(root.join("again.csv")).expect("second trace"),
    );
}

/// The CLI adds nothing to the library: the same scenario file run through
/// the binary (worker count from the environment) and through direct library
/// calls yields byte-identical trace CSV.
#[test]
fn cli_run_equals_library_run() {
    let dir = TempDir::new().expect("tempdir");
    let root = dir.path();
    assert_exit(
        &drsim(
            &[
                "generate", "--seed", "9", "--households", "4", "--slots", "10",
                "--appliances", "2", "--out", "scen.toml",
            ],
            root,
        ),
        0,
    );
    let ran = drsim_with_workers(
        &["run", "--scenario", "scen.toml", "--trace-out", "trace.csv"],
        root,
        "3",
    );
    assert_exit(&ran, 0);

    let scenario = scenario::load_scenario(&root.join("scen.toml")).expect("readable");
    let params = AlgoParams { worker_count: 3, ..AlgoParams::default() };
    let trace = dr_core::run(&scenario, &params).expect("library run succeeds");
    let expected = scenario::trace_to_csv(&trace.records);

    let from_cli = fs::read_to_string(root.join("trace.csv")).expect("trace written");
    assert_eq!(from_cli, expected);
}

/// The flag beats the environment variable: --workers 1 under a conflicting
/// DRSIM_WORKERS still runs (and still produces the canonical trace).
#[test]
fn workers_flag_overrides_environment() {
    let dir = TempDir::new().expect("tempdir");
    let root = dir.path();
    assert_exit(
        &drsim(
            &[
                "generate", "--seed", "9", "--households", "2", "--slots", "8",
                "--appliances", "2", "--out", "scen.toml",
            ],
            root,
        ),
        0,
    );
    let flag_wins = drsim_with_workers(
        &["run", "--scenario", "scen.toml", "--workers", "1", "--trace-out", "a.csv"],
        root,
        "not-a-number",
    );
    assert_exit(&flag_wins, 0);

    let env_alone = drsim_with_workers(
        &["run", "--scenario", "scen.toml", "--trace-out", "b.csv"],
        root,
        "not-a-number",
    );
    assert_exit(&env_alone, 2);
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = TempDir::new().expect("tempdir");
    let output = drsim(&["run", "--scenario", "nowhere.toml"], dir.path());
    assert_exit(&output, 3);
    assert!(String::from_utf8_lossy(&output.stderr).contains("nowhere.toml"));
}

#[test]
fn malformed_and_misversioned_files_are_schema_errors() {
    let dir = TempDir::new().expect("tempdir");
    let root = dir.path();
    fs::write(root.join("junk.toml"), "version = 1\n[scenario]\nbanana = true\n")
        .expect("write");
    assert_exit(&drsim(&["run", "--scenario", "junk.toml"], root), 4);

    fs::write(root.join("future.toml"), "version = 99\n").expect("write");
    let output = drsim(&["oracle", "--scenario", "future.toml"], root);
    assert_exit(&output, 4);
    assert!(String::from_utf8_lossy(&output.stderr).contains("version"));
}

#[test]
fn oversized_choice_space_is_refused_with_its_own_code() {
    let dir = TempDir::new().expect("tempdir");
    let root = dir.path();
    assert_exit(
        &drsim(
            &[
                "generate", "--seed", "3", "--households", "40", "--slots", "24",
                "--appliances", "10", "--no-choice-limit", "--out", "big.toml",
            ],
            root,
        ),
        0,
    );
    let output = drsim(&["oracle", "--scenario", "big.toml"], root);
    assert_exit(&output, 5);
    assert!(String::from_utf8_lossy(&output.stderr).contains("choice space"));
}

/// A supply cap below every possible schedule: the oracle reports
/// infeasibility, and a run asked to save a best schedule has none to save.
#[test]
fn infeasible_instances_use_the_infeasible_code() {
    let dir = TempDir::new().expect("tempdir");
    let root = dir.path();
    let horizon = TimeHorizon::new(0, 4, 1.0);
    let scenario = Scenario {
        horizon,
        households: vec![HouseholdSpec {
            id: 0,
            appliances: vec![Appliance {
                id: 0,
                window: SlotRange::new(0, 3),
                kind: ApplianceKind::Interruptible { duration: 2, power: 5.0 },
            }],
        }],
        cost: AggregatorCostModel::uniform(4, 1e-3, 0.05, 1.0),
        metadata: ScenarioMetadata { name: "uncappable".into(), seed: 0 },
    };
    scenario::save_scenario(&scenario, &root.join("tight.toml")).expect("write");

    assert_exit(&drsim(&["oracle", "--scenario", "tight.toml"], root), 6);

    let without_solution = drsim(&["run", "--scenario", "tight.toml"], root);
    assert_exit(&without_solution, 0);
    assert!(stdout(&without_solution).contains("best primal: none"));

    let with_solution = drsim(
        &["run", "--scenario", "tight.toml", "--solution-out", "sol.toml"],
        root,
    );
    assert_exit(&with_solution, 6);
}

#[test]
fn gap_without_oracle_reports_primal_only() {
    let dir = TempDir::new().expect("tempdir");
    let root = dir.path();
    assert_exit(
        &drsim(
            &[
                "generate", "--seed", "2", "--households", "2", "--slots", "8",
                "--appliances", "2", "--out", "scen.toml",
            ],
            root,
        ),
        0,
    );
    assert_exit(
        &drsim(&["run", "--scenario", "scen.toml", "--trace-out", "t.csv"], root),
        0,
    );
    let output = drsim(&["gap", "--trace", "t.csv"], root);
    assert_exit(&output, 0);
    assert!(stdout(&output).contains("none supplied"));
}

#[test]
fn usage_errors_exit_with_two_and_help_documents_exit_codes() {
    let dir = TempDir::new().expect("tempdir");
    let output = drsim(&["frobnicate"], dir.path());
    assert_exit(&output, 2);

    let help = drsim(&["--help"], dir.path());
    assert_exit(&help, 0);
    let text = stdout(&help);
    for needle in ["Exit codes", "usage error", "infeasible"] {
        assert!(text.contains(needle), "--help must document exit codes, got: {text}");
    }
}
