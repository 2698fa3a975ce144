//! Command line front end for the mean-field Atlas laboratory.
//!
//! Every subcommand reads one JSON configuration file, applies any
//! `--set` overrides, and either prints a report (validate) or writes a
//! self-describing run directory under `--out`: manifest first, result
//! tables as CSV, a summary, then the manifest again with checksums.
//!
//! Exit codes: 0 success, 1 configuration or assumption failure, 2
//! runtime error, 3 acceptance check failed, 64 usage error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

const CONFIG_HELP: &str = "\
CONFIGURATION FILE (JSON, unknown keys are errors):
  {
    \"model\": {
      \"gamma\":  <coefficient>,   growth profile on [0, 1]
      \"sigma2\": <coefficient>,   variance profile on [0, 1]
      \"m\":      <law>            initial distribution
    },
    \"sim\":        { ... }        optional, defaults below
    \"experiment\": { ... }        optional, defaults below
  }

  <coefficient> is one of
    {\"kind\": \"constant\", \"c\": C}
    {\"kind\": \"linear\", \"a\": A, \"b\": B}            a + b u
    {\"kind\": \"atlas_alpha\", \"g\": G, \"alpha\": A}   g (alpha + 1) (1 - u)^alpha
    {\"kind\": \"example31\"}                          1 - 2u
    {\"kind\": \"example51_sigma2\", \"g\": G, \"alpha\": A}
    {\"kind\": \"tabulated\", \"knots\": [[u, value], ...]}

  <law> is one of
    {\"kind\": \"gaussian\", \"mean\": M, \"sd\": S}
    {\"kind\": \"uniform\", \"lo\": A, \"hi\": B}
    {\"kind\": \"shifted_exponential\", \"rate\": R, \"shift\": S, \"sign\": -1|1}
    {\"kind\": \"equilibrium\"}                        sample the limit law
    {\"kind\": \"tabulated_quantile\", \"knots\": [[u, value], ...]}

  sim defaults:        n = 2000, dt = 0.001, t_end = 10.0, seed = 42,
                       snapshot_times = 41 evenly spaced step multiples
  experiment defaults: p_grid = [0, 0.5, 1, 2, 4], replicas = 10,
                       n_grid = [200, 2000, 10000], window = [5, 10],
                       tol = 0.03, grid_points = 4097

  --set sim.n=500 (repeatable) overrides any existing key; values parse
  as JSON, bare words as strings.

EXIT CODES:
  0  success, and any built-in check passed
  1  invalid configuration or a model assumption failed
  2  runtime error (diverged simulation, I/O failure, ...)
  3  an acceptance check ran and failed
  64 usage error";

#[derive(Parser)]
#[command(
    name = "atlaslab",
    version,
    about = "Mean-field Atlas model laboratory: closed-form equilibrium against simulation",
    after_long_help = CONFIG_HELP
)]
struct Cli {
    /// Path to the JSON configuration file
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory for run artifacts
    #[arg(long, global = true, default_value = "out", value_name = "DIR")]
    out: PathBuf,

    /// Override the base RNG seed from the configuration
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Worker threads (0 or unset: all cores)
    #[arg(long, global = true, env = "ATLASLAB_THREADS", value_name = "N")]
    threads: Option<usize>,

    /// Override a configuration key, e.g. --set sim.n=500 (repeatable)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the standing assumptions on the configured model
    Validate,
    /// Closed-form tables: quantile, capital measures, growth rates
    Equilibrium {
        /// Weight exponent to tabulate (repeatable; default: config p_grid)
        #[arg(long = "p", value_name = "P")]
        p: Vec<f64>,
    },
    /// One particle-system run, snapshots to CSV
    Simulate,
    /// Capital distribution curve, empirical against closed form
    CapitalCurve,
    /// Race diversity-weighted portfolios across the p grid
    Portfolio,
    /// Sweep p across the phase transition and compare long-run means
    PhaseScan,
    /// Propagation of chaos: Wasserstein distance to the limit law per n
    Chaos,
    /// Law-of-large-numbers check on the mean log capitalization
    MeanDrift,
    /// Order-of-limits probe for the long-time mean rank
    Interversion,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 64,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };

    if let Some(threads) = cli.threads {
        if threads > 0 {
            // A second initialization in the same process is harmless.
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build_global();
        }
    }

    let Some(config_path) = cli.config.as_deref() else {
        eprintln!("usage: atlaslab --config <PATH> [--out <DIR>] [--seed <U64>] <COMMAND>");
        eprintln!("run 'atlaslab --help' for details");
        return ExitCode::from(64);
    };

    let mut cfg = match config::FileConfig::load(config_path, &cli.set) {
        Ok(cfg) => cfg,
        Err(err) => {
            eprintln!("error: {err}");
            return ExitCode::from(1);
        }
    };
    if let Some(seed) = cli.seed {
        cfg.sim.seed = seed;
    }

    let result = match &cli.command {
        Command::Validate => commands::validate(&cfg),
        Command::Equilibrium { p } => commands::equilibrium(&cfg, &cli.out, p),
        Command::Simulate => commands::simulate(&cfg, &cli.out),
        Command::CapitalCurve => commands::capital_curve(&cfg, &cli.out),
        Command::Portfolio => commands::portfolio(&cfg, &cli.out),
        Command::PhaseScan => commands::phase_scan(&cfg, &cli.out),
        Command::Chaos => commands::chaos(&cfg, &cli.out),
        Command::MeanDrift => commands::mean_drift(&cfg, &cli.out),
        Command::Interversion => commands::interversion(&cfg, &cli.out),
    };

    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(commands::exit_code_for(&err) as u8)
        }
    }
}

// Keep the derived command definition honest.
#[test]
fn cli_definition_is_consistent() {
    use clap::CommandFactory;
    Cli::command().debug_assert();
}
