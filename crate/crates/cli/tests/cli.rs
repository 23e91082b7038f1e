use std::path::{Path, PathBuf};
use std::process::Command;

use regsync::{
    cmd_modelcheck, cmd_simulate, cmd_sync, cmd_transition, EXIT_INPUT, EXIT_OK, EXIT_VIOLATION,
};
use regsync_core::engine::{Engine, Mutation};
use regsync_core::modelcheck::Bounds;
use regsync_core::scenario::parse_scenario;
use regsync_core::{RegAction, RegState};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(name)
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_regsync"))
}

#[test]
fn transition_table_and_cells() {
    let full = cmd_transition(None);
    assert_eq!(full.code, EXIT_OK);
    let defined = full
        .stdout
        .lines()
        .skip(1)
        .flat_map(|l| l.split_whitespace().skip(1))
        .filter(|c| *c != "--")
        .count();
    assert_eq!(defined, 12);
    assert_eq!(
        cmd_transition(Some((RegState::Seized, RegAction::Release))).stdout,
        "ACTIVE\n"
    );
    assert_eq!(
        cmd_transition(Some((RegState::Confiscated, RegAction::Freeze))).stdout,
        "--\n"
    );
}

#[test]
fn transition_rejects_unknown_names_with_usage() {
    let out = bin()
        .args(["transition", "--from", "MOLTEN", "--action", "FREEZE"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("MOLTEN"));
    let out = bin()
        .args(["transition", "--from", "ACTIVE"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn two_chain_freeze_ends_frozen_everywhere() {
    let out = cmd_sync(&scenario("two_chain_freeze.json"), Engine::FAITHFUL);
    assert_eq!(out.code, EXIT_OK, "{}", out.stdout);
    let last_state = out
        .stdout
        .lines()
        .rfind(|l| l.starts_with("state "))
        .unwrap();
    assert_eq!(last_state.matches("\"FROZEN\"").count(), 2);
    assert!(!last_state.contains("ACTIVE"));
}

#[test]
fn prelocked_asset_fails_as_expected() {
    let out = cmd_sync(&scenario("prelocked.json"), Engine::FAITHFUL);
    assert_eq!(out.code, EXIT_OK);
    assert!(out.stdout.contains("-> Locked"));
}

#[test]
fn wrong_expectation_exits_one_with_diff() {
    let out = cmd_sync(&scenario("wrong_expectation.json"), Engine::FAITHFUL);
    assert_eq!(out.code, EXIT_VIOLATION);
    assert!(out
        .stdout
        .contains("step 2: expected ok, got InvalidTransition"));
}

#[test]
fn mutant_fails_replay_of_faithful_scenario() {
    let out = cmd_sync(
        &scenario("two_chain_freeze.json"),
        Engine::mutated(Mutation::SkipReleaseLock),
    );
    assert_eq!(out.code, EXIT_VIOLATION);
    assert!(out.stdout.contains("state differs"));
}

#[test]
fn sync_input_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = cmd_sync(&dir.path().join("nope.json"), Engine::FAITHFUL);
    assert_eq!(missing.code, EXIT_INPUT);

    let bad = dir.path().join("bad.json");
    std::fs::write(
        &bad,
        "{\"initial\": {\"chains\": {}}, \"syncs\": [{\"source\": \"c1\"}]}",
    )
    .unwrap();
    let out = cmd_sync(&bad, Engine::FAITHFUL);
    assert_eq!(out.code, EXIT_INPUT);
    assert!(out.stderr.contains("line 1"), "{}", out.stderr);

    let dangling = dir.path().join("dangling.json");
    let text = std::fs::read_to_string(scenario("two_chain_freeze.json"))
        .unwrap()
        .replace("\"source\": \"c1\"", "\"source\": \"c7\"");
    std::fs::write(&dangling, text).unwrap();
    let out = cmd_sync(&dangling, Engine::FAITHFUL);
    assert_eq!(out.code, EXIT_INPUT);
    assert!(out.stderr.contains("syncs[0].source"), "{}", out.stderr);
}

#[test]
fn scenario_files_are_canonical() {
    for entry in std::fs::read_dir(scenario("")).unwrap() {
        let path = entry.unwrap().path();
        let text = std::fs::read_to_string(&path).unwrap();
        let parsed = parse_scenario(&path).unwrap();
        assert_eq!(parsed.to_canonical_json(), text, "{}", path.display());
    }
}

#[test]
fn modelcheck_reports_and_emits_counterexample() {
    let ok = cmd_modelcheck(
        Bounds {
            domains: 2,
            assets: 1,
            depth: 2,
        },
        Engine::FAITHFUL,
        1_000_000,
        None,
    );
    assert_eq!(ok.code, EXIT_OK);
    assert!(ok.stdout.contains("initial states: 15"));
    assert!(ok.stdout.contains("violations: 0"));

    let dir = tempfile::tempdir().unwrap();
    let emit = dir.path().join("cx.json");
    let bad = cmd_modelcheck(
        Bounds {
            domains: 2,
            assets: 1,
            depth: 2,
        },
        Engine::mutated(Mutation::SkipOneTarget),
        1_000_000,
        Some(&emit),
    );
    assert_eq!(bad.code, EXIT_VIOLATION);
    assert!(bad.stdout.contains("counterexample at depth 1"));
    assert_eq!(cmd_sync(&emit, Engine::FAITHFUL).code, EXIT_OK);
    assert_eq!(
        cmd_sync(&emit, Engine::mutated(Mutation::SkipOneTarget)).code,
        EXIT_VIOLATION
    );
}

#[test]
fn modelcheck_budget_exceeded_exits_two() {
    let out = cmd_modelcheck(
        Bounds {
            domains: 3,
            assets: 2,
            depth: 2,
        },
        Engine::FAITHFUL,
        1000,
        None,
    );
    assert_eq!(out.code, EXIT_INPUT);
    assert!(out.stderr.contains("budget"));
    let out = bin()
        .args([
            "modelcheck",
            "--domains",
            "3",
            "--assets",
            "2",
            "--depth",
            "2",
        ])
        .env("REGSYNC_BUDGET", "5")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin()
        .arg("modelcheck")
        .env("REGSYNC_BUDGET", "lots")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_fair_and_adversarial_drain() {
    for adversarial in [false, true] {
        let out = cmd_simulate(&scenario("sim_n4.json"), Some(3), adversarial, 1000);
        assert_eq!(out.code, EXIT_OK, "{}", out.stderr);
        let last = out.stdout.lines().last().unwrap();
        assert!(last.contains("\"pending_after\":0"));
        assert!(out.stdout.lines().count() <= 5 * 3 + 2);
        assert!(out.stderr.contains("starvation_bound: ok"));
    }
}

#[test]
fn simulate_rejects_n3_citing_threshold() {
    let out = cmd_simulate(&scenario("sim_n3_invalid.json"), None, false, 100);
    assert_eq!(out.code, EXIT_INPUT);
    assert!(out.stderr.contains("bft_threshold"));
}

#[test]
fn simulate_truncated_run_reports_incomplete() {
    let out = cmd_simulate(&scenario("sim_n4.json"), Some(1), true, 2);
    assert_eq!(out.code, EXIT_VIOLATION);
    assert!(out.stderr.contains("eventual_completion: 1 violations"));
}

#[test]
fn simulate_requires_sim_block() {
    let out = cmd_simulate(&scenario("two_chain_freeze.json"), None, false, 10);
    assert_eq!(out.code, EXIT_INPUT);
    assert!(out.stderr.contains("sim"));
}
