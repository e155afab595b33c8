use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use uisim::harness::probe::TargetState;
use uisim::harness::pto::Mix;
use uisim_cli::commands::{self, CliError, EXIT_OK, EXIT_USAGE};
use uisim_cli::config::{parse_list, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "uisim", version, about = "User-level interrupt simulator experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_parser = ["base", "v1", "v2", "v3", "v4", "v5"])]
    variant: Option<String>,
    #[arg(long, global = true, value_parser = ["ext", "kernel", "intel", "software"])]
    scheme: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for CSV files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for independent cells.
    #[arg(long, global = true, default_value_t = 4)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check idle-machine entry latencies against the reference totals.
    VerifyLatency,
    #[command(subcommand)]
    Run(Run),
    /// Print the entry Gantt and write the machine trace of a probe run.
    Trace {
        #[arg(long, default_value = "active", value_parser = ["active", "inactive"])]
        state: String,
        #[arg(long, default_value_t = 1)]
        samples: usize,
    },
}

#[derive(Subcommand)]
enum Run {
    Latency {
        #[arg(long, value_parser = ["active", "inactive"])]
        state: Vec<String>,
        #[arg(long)]
        samples: Option<usize>,
    },
    Isolate,
    Pto {
        #[arg(long, value_parser = ["active", "inactive", "mixed"])]
        mix: Vec<String>,
        #[arg(long)]
        freq: Vec<u64>,
        /// Also search for the highest sustainable frequency.
        #[arg(long)]
        max: bool,
    },
    Modbus {
        #[arg(long)]
        baud: Vec<u64>,
        #[arg(long)]
        window: Option<u64>,
    },
    /// Every experiment over the configured matrix.
    Sweep,
}

fn dispatch(cli: Cli, out: &mut String) -> Result<(), CliError> {
    let c = &cli.common;
    let ov = Overrides { variant: c.variant.clone(), scheme: c.scheme.clone(), seed: c.seed, out: c.out.clone() };
    let mut cfg = RunConfig::resolve(c.config.as_deref(), &ov)?;
    let jobs = c.jobs.max(1);
    match cli.cmd {
        Cmd::VerifyLatency => commands::verify_latency(&cfg, out),
        Cmd::Trace { state, samples } => {
            let st = TargetState::parse(&state).expect("clap checked");
            commands::trace(&cfg, st, samples, out).map(drop)
        }
        Cmd::Run(r) => match r {
            Run::Latency { state, samples } => {
                if !state.is_empty() {
                    cfg.experiment.states = state;
                }
                let samples = samples.unwrap_or(cfg.samples());
                commands::run_latency(&cfg, cfg.states()?, samples, jobs, out).map(drop)
            }
            Run::Isolate => commands::run_isolate(&cfg, out).map(drop),
            Run::Pto { mix, freq, max } => {
                let mixes = if mix.is_empty() { cfg.mixes()? } else { parse_list(&mix, &Mix::ALL, "mix", Mix::parse)? };
                let freqs = if freq.is_empty() { cfg.freqs() } else { freq };
                commands::run_pto(&cfg, mixes, freqs, max, jobs, out).map(drop)
            }
            Run::Modbus { baud, window } => {
                let bauds = if baud.is_empty() { cfg.bauds() } else { baud };
                commands::run_modbus(&cfg, bauds, window.unwrap_or(cfg.window()), jobs, out).map(drop)
            }
            Run::Sweep => commands::run_sweep(&cfg, jobs, out).map(drop),
        },
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let mut out = String::new();
    let res = dispatch(cli, &mut out);
    print!("{out}");
    match res {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
