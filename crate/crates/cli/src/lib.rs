//! The `regsync` command-line harness.
//!
//! Each subcommand returns an [`Output`] instead of printing, so the exit-code
//! contract can be tested in-process: 0 when every check passes, 1 on a
//! property violation, 2 on an input or configuration error.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use regsync_core::engine::{Engine, Mutation};
use regsync_core::liveness::{
    check_eventual_completion, check_starvation_bound, gen_adversarial_schedule, gen_fair_schedule,
    run_until_drained, validate_bft_config, SimState,
};
use regsync_core::modelcheck::{budget_from_env, model_check, Bounds};
use regsync_core::regulatory::{reg_transition, render_matrix};
use regsync_core::scenario::{parse_scenario, Outcome, Scenario};
use regsync_core::{RegAction, RegState};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VIOLATION: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "regsync",
    version,
    about = "Cross-domain regulatory state synchronization harness"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the transition matrix, or one cell of it.
    Transition {
        #[arg(long, requires = "action")]
        from: Option<RegState>,
        #[arg(long, requires = "from")]
        action: Option<RegAction>,
    },
    /// Replay a scenario's sync sequence and compare against its expectations.
    Sync {
        file: PathBuf,
        /// Run a deliberately defective engine.
        #[arg(long)]
        mutant: Option<Mutation>,
    },
    /// Exhaustively check the engine over small bounds.
    Modelcheck {
        #[arg(long, default_value_t = 2)]
        domains: usize,
        #[arg(long, default_value_t = 1)]
        assets: usize,
        #[arg(long, default_value_t = 3)]
        depth: usize,
        #[arg(long)]
        mutant: Option<Mutation>,
        /// Write the counterexample scenario here when one is found.
        #[arg(long)]
        emit: Option<PathBuf>,
    },
    /// Run the epoch simulator on a scenario's requests and sim block.
    Simulate {
        file: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        adversarial: bool,
        #[arg(long, default_value_t = 1000)]
        max_epochs: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Output {
    pub stdout: String,
    pub stderr: String,
    pub code: i32,
}

impl Output {
    fn input_error(msg: impl std::fmt::Display) -> Self {
        Self {
            stdout: String::new(),
            stderr: format!("error: {msg}\n"),
            code: EXIT_INPUT,
        }
    }
}

pub fn run(cli: Cli) -> Output {
    match cli.command {
        Command::Transition { from, action } => cmd_transition(from.zip(action)),
        Command::Sync { file, mutant } => cmd_sync(&file, engine_for(mutant)),
        Command::Modelcheck {
            domains,
            assets,
            depth,
            mutant,
            emit,
        } => match budget_from_env() {
            Ok(budget) => cmd_modelcheck(
                Bounds {
                    domains,
                    assets,
                    depth,
                },
                engine_for(mutant),
                budget,
                emit.as_deref(),
            ),
            Err(e) => Output::input_error(e),
        },
        Command::Simulate {
            file,
            seed,
            adversarial,
            max_epochs,
        } => cmd_simulate(&file, seed, adversarial, max_epochs),
    }
}

fn engine_for(m: Option<Mutation>) -> Engine {
    m.map_or(Engine::FAITHFUL, Engine::mutated)
}

pub fn cmd_transition(cell: Option<(RegState, RegAction)>) -> Output {
    let stdout = match cell {
        None => render_matrix(),
        Some((s, a)) => format!("{}\n", reg_transition(s, a).map_or("--", RegState::name)),
    };
    Output {
        stdout,
        ..Output::default()
    }
}

pub fn cmd_sync(path: &Path, engine: Engine) -> Output {
    let scenario = match parse_scenario(path) {
        Ok(s) => s,
        Err(e) => return Output::input_error(e),
    };
    replay(&scenario, engine)
}

/// Applies every step in order, printing the result tag and canonical state
/// after each, and reports every mismatch with its expectation.
pub fn replay(scenario: &Scenario, engine: Engine) -> Output {
    let mut out = String::new();
    let mut mismatches = Vec::new();
    let mut gs = scenario.initial.clone();
    writeln!(out, "initial {}", gs.to_canonical_json()).unwrap();
    for (i, step) in scenario.syncs.iter().enumerate() {
        let n = i + 1;
        let result = engine.sync(&step.source, step.action, &step.asset, &gs);
        let outcome = Outcome::of(&result);
        if let Ok(next) = result {
            gs = next;
        }
        writeln!(
            out,
            "step {n}: sync({}, {}, {}) -> {outcome}",
            step.source, step.action, step.asset
        )
        .unwrap();
        writeln!(out, "state {}", gs.to_canonical_json()).unwrap();
        if let Some(expected) = step.expect.filter(|&e| e != outcome) {
            mismatches.push(format!("step {n}: expected {expected}, got {outcome}"));
        }
        if let Some(expected) = step.expect_state.as_ref().filter(|&e| *e != gs) {
            mismatches.push(format!(
                "step {n}: state differs\n  - expected {}\n  + actual   {}",
                expected.to_canonical_json(),
                gs.to_canonical_json()
            ));
        }
    }
    let code = if mismatches.is_empty() {
        writeln!(out, "result: all {} steps match", scenario.syncs.len()).unwrap();
        EXIT_OK
    } else {
        writeln!(out, "result: {} mismatches", mismatches.len()).unwrap();
        for m in &mismatches {
            writeln!(out, "{m}").unwrap();
        }
        EXIT_VIOLATION
    };
    Output {
        stdout: out,
        stderr: String::new(),
        code,
    }
}

pub fn cmd_modelcheck(bounds: Bounds, engine: Engine, budget: u64, emit: Option<&Path>) -> Output {
    let report = match model_check(bounds, engine, budget) {
        Ok(r) => r,
        Err(e) => return Output::input_error(e),
    };
    if let (Some(path), Some(cx)) = (emit, &report.counterexample) {
        if let Err(e) = std::fs::write(path, cx.scenario.to_canonical_json()) {
            return Output::input_error(format!("cannot write {}: {e}", path.display()));
        }
    }
    Output {
        stdout: report.to_string(),
        stderr: String::new(),
        code: if report.passed() {
            EXIT_OK
        } else {
            EXIT_VIOLATION
        },
    }
}

/// Trace JSON lines go to stdout; the summary goes to stderr.
pub fn cmd_simulate(path: &Path, seed: Option<u64>, adversarial: bool, max_epochs: u64) -> Output {
    let scenario = match parse_scenario(path) {
        Ok(s) => s,
        Err(e) => return Output::input_error(e),
    };
    let Some(spec) = &scenario.sim else {
        return Output::input_error("scenario has no `sim` block");
    };
    let Some(requests) = &scenario.requests else {
        return Output::input_error("scenario has no `requests` list");
    };
    let cfg = spec.to_config(seed);
    let bft = validate_bft_config(&cfg);
    if !bft.is_empty() {
        let mut msg = String::from("invalid BFT configuration");
        for v in bft.violations() {
            write!(msg, "\n  {v}").unwrap();
        }
        return Output::input_error(msg);
    }
    let schedule = if adversarial {
        gen_adversarial_schedule(&cfg, max_epochs)
    } else {
        gen_fair_schedule(&cfg, max_epochs)
    };
    let schedule = match schedule {
        Ok(s) => s,
        Err(e) => return Output::input_error(e),
    };
    let s0 = SimState::new(scenario.initial.clone(), requests.iter().cloned());
    let (trace, _) = match run_until_drained(&s0, &schedule, &cfg, max_epochs) {
        Ok(r) => r,
        Err(e) => return Output::input_error(e),
    };
    let starvation = check_starvation_bound(&trace, cfg.fairness_bound);
    let completion = check_eventual_completion(&trace);

    let mut err = String::new();
    writeln!(
        err,
        "simulate: schedule={} seed={} withholding={} epochs={} initial_pending={} final_pending={}",
        if adversarial { "adversarial" } else { "fair" },
        cfg.seed,
        cfg.withholding.name(),
        trace.len(),
        trace.initial_pending,
        trace.final_pending()
    )
    .unwrap();
    for (name, report) in [
        ("starvation_bound", &starvation),
        ("eventual_completion", &completion),
    ] {
        if report.is_empty() {
            writeln!(err, "{name}: ok").unwrap();
        } else {
            writeln!(err, "{name}: {} violations", report.len()).unwrap();
            for v in report.violations() {
                writeln!(err, "  {v}").unwrap();
            }
        }
    }
    let passed = starvation.is_empty() && completion.is_empty();
    Output {
        stdout: trace.to_jsonl(),
        stderr: err,
        code: if passed { EXIT_OK } else { EXIT_VIOLATION },
    }
}
