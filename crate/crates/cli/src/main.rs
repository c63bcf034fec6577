//! `afcsim`: run AFC memory scenarios from TOML files or canned names.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical or model error,
//! 1 for I/O failures while writing output.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use afc_core::scenario::{
    canned, cmd_capacity, cmd_design, cmd_dump_comb, cmd_dump_pulse, cmd_echo, cmd_store, cmd_sweep, parse_scenario,
    CommandOutput, ConfigError, RunOptions, Scenario, ScenarioError,
};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "afcsim", version, about = "AFC quantum memory simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Scenario file or canned name (pr_fig2, pr_narrow, eu_sectionV).
    #[arg(long, global = true, env = "AFCSIM_SCENARIO")]
    scenario: Option<String>,

    /// Output directory; overrides [output].dir.
    #[arg(long, global = true, env = "AFCSIM_OUT")]
    out: Option<PathBuf>,

    /// Integrator tolerance.
    #[arg(long, global = true, env = "AFCSIM_TOL", default_value_t = 1e-9)]
    tol: f64,

    /// Solve the Bloch equations at every detuning.
    #[arg(long, global = true, env = "AFCSIM_NO_DECIMATION")]
    no_decimation: bool,

    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "AFCSIM_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Two-level echo without control pulses.
    Echo,
    /// Full storage run with the configured control pulses.
    Store,
    /// Rabi-frequency sweep per pulse family.
    Sweep,
    /// Multimode capacity for each available Rabi frequency.
    Capacity,
    /// Pulse-design report.
    Design,
    /// Optical depth and phase of the comb.
    DumpComb,
    /// Control-pulse envelope and chirp.
    DumpPulse,
}

fn load(spec: &str) -> Result<Scenario, ConfigError> {
    let text = match canned(spec) {
        Some(t) => t.to_string(),
        None => fs::read_to_string(spec).map_err(|e| ConfigError {
            key: "--scenario".into(),
            line: None,
            message: format!("cannot read `{spec}`: {e}"),
        })?,
    };
    parse_scenario(&text)
}

fn write_outputs(dir: &Path, out: &CommandOutput) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    for f in &out.files {
        fs::write(dir.join(&f.name), &f.contents)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    let Some(spec) = cli.scenario.as_deref() else {
        eprintln!("configuration error: no scenario given (use --scenario or AFCSIM_SCENARIO)");
        return ExitCode::from(2);
    };
    let scenario = match load(spec) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("configuration error: {e}");
            return ExitCode::from(2);
        }
    };
    if !(1e-12..=1e-4).contains(&cli.tol) {
        eprintln!("configuration error: --tol must lie in [1e-12, 1e-4], got {}", cli.tol);
        return ExitCode::from(2);
    }
    let opts = RunOptions { tol: cli.tol, decimate: !cli.no_decimation };
    let run = match cli.command {
        Command::Echo => cmd_echo,
        Command::Store => cmd_store,
        Command::Sweep => cmd_sweep,
        Command::Capacity => cmd_capacity,
        Command::Design => cmd_design,
        Command::DumpComb => cmd_dump_comb,
        Command::DumpPulse => cmd_dump_pulse,
    };
    let output = match run(&scenario, &opts) {
        Ok(o) => o,
        Err(e @ ScenarioError::Config(_)) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
        Err(e @ ScenarioError::Model(_)) => {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    };
    let dir = cli.out.unwrap_or_else(|| PathBuf::from(&scenario.output_dir));
    if let Err(e) = write_outputs(&dir, &output) {
        eprintln!("error: cannot write to {}: {e}", dir.display());
        return ExitCode::from(1);
    }
    print!("{}", output.summary);
    println!("config_sha256 = {}", scenario.hash);
    println!("output: {}", dir.display());
    ExitCode::SUCCESS
}
