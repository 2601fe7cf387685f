use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;

use commands::{Outcome, RunError};

/// Excitation and entanglement transfer through gapped spin and harmonic
/// chains.
///
/// Every subcommand reads a flat `key = value` config file, writes a trace
/// (CSV with `#` header lines) and a `key = value` report, and prints the
/// report to stdout.
///
/// Exit codes: 0 success with all requested tolerances met; 1 a tolerance
/// was violated (files are still written); 2 unusable command line or
/// config; 3 the computation failed.
///
/// The environment variable GAPCHANNEL_THREADS caps the number of worker
/// threads.
#[derive(Debug, Parser)]
#[command(name = "gapchannel", version, about, long_about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Log progress (-v) or every step (-vv) to stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, clap::Args)]
struct Io {
    /// Config file with flat `key = value` lines.
    config: PathBuf,

    /// Trace output path [default: <config stem>.<subcommand>.csv in the
    /// working directory].
    #[arg(short, long)]
    out: Option<PathBuf>,

    /// Report output path [default: the trace path with extension
    /// `.report`].
    #[arg(long)]
    report: Option<PathBuf>,

    /// Override or add a config entry; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Spin chain with sender and receiver spins, on the `mps` (default) or
    /// `ed` backend. Run keys: t_final, dt_record, backend, chi_max, cutoff,
    /// dt, max_energy_drift.
    SpinRun(Io),
    /// Harmonic ring with oscillator ancillas, Gaussian second-moment
    /// dynamics. Run keys: t_final, dt_record, max_energy_drift.
    HarmonicRun(Io),
    /// Closed-form master-equation occupations and coefficients for a
    /// harmonic config. Run keys: t_final, dt_record.
    MasterSolve(Io),
    /// Gaussian dynamics against the master solution on one harmonic config.
    /// Run keys: t_final [default min(1e5, revival time)], dt_record,
    /// threshold [0.05], tolerance [0.05].
    Compare(Io),
    /// Gap-probe sweep of the ancilla energy. Keys: backend (ed, mps or
    /// harmonic), low, high, resolution, expected_threshold; spin backends
    /// also take t_final, dt_record, chi_max, cutoff, dt; the harmonic one
    /// takes samples and t_max.
    Sweep(Io),
    /// Exact entanglement transfer from a control spin to the receiver. Run
    /// keys: t_final, dt_record, tolerance.
    EntanglementRun(Io),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::SpinRun(_) => "spin-run",
            Command::HarmonicRun(_) => "harmonic-run",
            Command::MasterSolve(_) => "master-solve",
            Command::Compare(_) => "compare",
            Command::Sweep(_) => "sweep",
            Command::EntanglementRun(_) => "entanglement-run",
        }
    }

    fn io(&self) -> &Io {
        match self {
            Command::SpinRun(io)
            | Command::HarmonicRun(io)
            | Command::MasterSolve(io)
            | Command::Compare(io)
            | Command::Sweep(io)
            | Command::EntanglementRun(io) => io,
        }
    }
}

fn default_out(config: &Path, command: &str) -> PathBuf {
    let stem = config
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    PathBuf::from(format!("{stem}.{command}.csv"))
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(raw) = std::env::var("GAPCHANNEL_THREADS") {
        let n: usize = raw
            .trim()
            .parse()
            .map_err(|_| anyhow::anyhow!("GAPCHANNEL_THREADS = `{raw}` is not a thread count"))?;
        if n > 0 {
            rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
        }
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<Outcome, RunError> {
    configure_threads().map_err(RunError::Usage)?;
    let io = cli.command.io();
    let mut kv = gapchannel::config::KeyValues::from_file(&io.config)
        .map_err(|e| RunError::Usage(anyhow::anyhow!("{}: {e}", io.config.display())))?;
    for item in &io.overrides {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| RunError::Usage(anyhow::anyhow!("--set expects KEY=VALUE, got `{item}`")))?;
        kv.insert(k.trim(), v.trim());
    }
    let name = cli.command.name();
    let out = io.out.clone().unwrap_or_else(|| default_out(&io.config, name));
    let report = io.report.clone().unwrap_or_else(|| out.with_extension("report"));
    let outcome = match &cli.command {
        Command::SpinRun(_) => commands::spin_run(&kv, &out)?,
        Command::HarmonicRun(_) => commands::harmonic_run(&kv, &out)?,
        Command::MasterSolve(_) => commands::master_solve(&kv, &out)?,
        Command::Compare(_) => commands::compare(&kv, &out)?,
        Command::Sweep(_) => commands::sweep(&kv, &out)?,
        Command::EntanglementRun(_) => commands::entanglement_run(&kv, &out)?,
    };
    let mut text = format!("# gapchannel {name} report\n");
    text.push_str(&outcome.report.to_text());
    gapchannel::trace::write_atomic(&report, text.as_bytes()).map_err(|e| RunError::Failed(e.into()))?;
    print!("{text}");
    Ok(outcome)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(outcome) if outcome.passed => ExitCode::SUCCESS,
        Ok(_) => {
            eprintln!("gapchannel: tolerance violated; see the report");
            ExitCode::from(1)
        }
        Err(RunError::Usage(e)) => {
            eprintln!("gapchannel: {e:#}");
            ExitCode::from(2)
        }
        Err(RunError::Failed(e)) => {
            eprintln!("gapchannel: {e:#}");
            ExitCode::from(3)
        }
    }
}
