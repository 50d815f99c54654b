//! End-to-end tests of the command-line interface: exit codes, diagnostics,
//! and a frozen golden error map.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture_dir(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    if dir.exists() {
        std::fs::remove_dir_all(&dir).unwrap();
    }
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write(dir: &Path, name: &str, contents: &str) {
    std::fs::write(dir.join(name), contents).unwrap();
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_synthpop"))
        .args(args)
        .output()
        .unwrap()
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("process exited")
}

const RACE_SCHEMA: &str = r#"{
    "attributes": [{"name": "race", "labels": ["black", "white"]}],
    "geo_prefix_lengths": {"county": 1, "tract": 2, "block_group": 3, "block": 4}
}"#;

const RACE_TABLES: &str = "table,block,predicate,count\n\
by_race,1010,race=black,4\nby_race,1010,race=white,96\n\
by_race,1020,race=black,6\nby_race,1020,race=white,94\n\
by_race,2010,race=black,30\nby_race,2010,race=white,70\n\
by_race,2020,race=black,35\nby_race,2020,race=white,65\n\
by_race,3010,race=black,60\nby_race,3010,race=white,40\n\
by_race,3020,race=black,65\nby_race,3020,race=white,35\n";

fn race_config(dir: &Path) -> String {
    write(dir, "schema.json", RACE_SCHEMA);
    write(dir, "tables.csv", RACE_TABLES);
    write(
        dir,
        "config.json",
        r#"{
            "schema_path": "schema.json",
            "tables_path": "tables.csv",
            "output_dir": "out",
            "dp": {"epsilon": 1.0, "runs": 50, "seed": 7},
            "log_level": "quiet"
        }"#,
    );
    dir.join("config.json").to_str().unwrap().to_string()
}

/// Frozen output of `errmap --target race=black` on the fixture above
/// (epsilon 1, 50 runs, seed 7). Guards both the noise path and the CSV
/// rendering against regressions.
const GOLDEN_ERRMAP: &str = "tract,true_percentage,smape,runs\n\
10,5,14.27348386369966,50\n\
20,32.5,1.8708581290726125,50\n\
30,62.5,0.7965550505176759,50\n";

#[test]
fn errmap_matches_the_golden_file() {
    let dir = fixture_dir("golden_errmap");
    let config = race_config(&dir);
    let out = run(&["errmap", "--config", &config, "--target", "race=black"]);
    assert_eq!(exit_code(&out), 0, "{out:?}");
    let errmap = std::fs::read_to_string(dir.join("out/errmap.csv")).unwrap();
    assert_eq!(errmap, GOLDEN_ERRMAP);
    let flagged = std::fs::read_to_string(dir.join("out/errmap_flagged.csv")).unwrap();
    assert_eq!(flagged, "tract,reason\n");
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(
        stdout.contains("rank correlation of true percentage vs smape: -1"),
        "{stdout}"
    );
}

#[test]
fn errmap_with_huge_epsilon_reports_zero_error() {
    let dir = fixture_dir("errmap_eps50");
    let config = race_config(&dir);
    let out = run(&[
        "errmap",
        "--config",
        &config,
        "--target",
        "race=black",
        "--epsilon",
        "50",
    ]);
    assert_eq!(exit_code(&out), 0);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("min 0 median 0 max 0"), "{stdout}");
}

#[test]
fn errmap_rejects_an_unknown_predicate() {
    let dir = fixture_dir("errmap_bad_predicate");
    let config = race_config(&dir);
    let out = run(&["errmap", "--config", &config, "--target", "race=purple"]);
    assert_eq!(exit_code(&out), 1);
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("purple"), "{stderr}");
}

#[test]
fn synth_reports_missing_input_files_by_path() {
    let dir = fixture_dir("synth_missing_tables");
    write(&dir, "schema.json", RACE_SCHEMA);
    write(
        &dir,
        "config.json",
        r#"{"schema_path": "schema.json", "tables_path": "nope.csv", "output_dir": "out"}"#,
    );
    let out = run(&["synth", "--config", dir.join("config.json").to_str().unwrap()]);
    assert_eq!(exit_code(&out), 1);
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("nope.csv"), "{stderr}");
}

#[test]
fn require_exact_gates_inconsistent_instances() {
    let dir = fixture_dir("require_exact");
    write(&dir, "schema.json", RACE_SCHEMA);
    // Two tables that disagree on every block total: no exact fit exists.
    write(
        &dir,
        "tables.csv",
        "table,block,predicate,count\n\
         by_race,1010,race=black,3\nby_race,1010,race=white,3\n\
         totals,1010,,10\n",
    );
    write(
        &dir,
        "config.json",
        r#"{"schema_path": "schema.json", "tables_path": "tables.csv",
            "output_dir": "out", "log_level": "quiet"}"#,
    );
    let config = dir.join("config.json");
    let config = config.to_str().unwrap();
    let gated = run(&["synth", "--config", config, "--require-exact"]);
    assert_eq!(exit_code(&gated), 2);
    // Outputs are still written for inspection.
    assert!(dir.join("out/solver_summary.csv").exists());
    let ungated = run(&["synth", "--config", config]);
    assert_eq!(exit_code(&ungated), 0);
}

#[test]
fn validate_without_microdata_is_internal_only() {
    let dir = fixture_dir("validate_internal");
    let config = race_config(&dir);
    assert_eq!(exit_code(&run(&["synth", "--config", &config])), 0);
    let persons = dir.join("out/persons.csv");
    let out = run(&[
        "validate",
        "--config",
        &config,
        "--persons",
        persons.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0);
    let report = std::fs::read_to_string(dir.join("out/validation_report.csv")).unwrap();
    assert!(report.contains("race,"), "{report}");
    assert!(!report.contains("external"), "{report}");
    assert!(report.ends_with("overall,12,1\n"), "{report}");
    assert!(!dir.join("out/validation_scatter.csv").exists());
}

#[test]
fn validate_rejects_microdata_with_unknown_labels() {
    let dir = fixture_dir("validate_bad_microdata");
    let config = race_config(&dir);
    assert_eq!(exit_code(&run(&["synth", "--config", &config])), 0);
    write(&dir, "microdata.csv", "weight,race\n1,green\n");
    let persons = dir.join("out/persons.csv");
    let out = run(&[
        "validate",
        "--config",
        &config,
        "--persons",
        persons.to_str().unwrap(),
        "--microdata",
        dir.join("microdata.csv").to_str().unwrap(),
        "--county",
        "1",
    ]);
    assert_eq!(exit_code(&out), 1);
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("green"), "{stderr}");
}

#[test]
fn validate_reports_external_r_for_exact_microdata() {
    let dir = fixture_dir("validate_external");
    let config = race_config(&dir);
    assert_eq!(exit_code(&run(&["synth", "--config", &config])), 0);
    // The fixture spans counties 1, 2 and 3, so the county is passed
    // explicitly; the microdata carries county 1's exact shares
    // (10 black, 190 white) as weights.
    let micro = "weight,race\n10,black\n190,white\n";
    write(&dir, "microdata.csv", micro);
    let persons = dir.join("out/persons.csv");
    let out = run(&[
        "validate",
        "--config",
        &config,
        "--persons",
        persons.to_str().unwrap(),
        "--microdata",
        dir.join("microdata.csv").to_str().unwrap(),
        "--county",
        "1",
    ]);
    assert_eq!(exit_code(&out), 0, "{out:?}");
    let report = std::fs::read_to_string(dir.join("out/validation_report.csv")).unwrap();
    assert!(report.contains("external,2,1\n"), "{report}");
}

#[test]
fn check_prints_the_consistency_report() {
    let dir = fixture_dir("check_report");
    write(&dir, "schema.json", RACE_SCHEMA);
    write(
        &dir,
        "tables.csv",
        "table,block,predicate,count\n\
         by_race,1010,race=black,3\nby_race,1010,race=white,3\n\
         totals,1010,,7\n",
    );
    write(
        &dir,
        "config.json",
        r#"{"schema_path": "schema.json", "tables_path": "tables.csv", "output_dir": "out"}"#,
    );
    let out = run(&["check", "--config", dir.join("config.json").to_str().unwrap()]);
    assert_eq!(exit_code(&out), 0);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("max discrepancy 1"), "{stdout}");
    assert!(stdout.contains("by_race"), "{stdout}");
}

#[test]
fn unknown_flags_are_input_errors() {
    let out = run(&["synth", "--bogus"]);
    assert_eq!(exit_code(&out), 1);
}
