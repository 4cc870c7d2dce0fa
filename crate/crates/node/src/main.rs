use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use poi_node::commands::{cmd_gen_fixtures, cmd_run, cmd_verify_chain, GenFixturesArgs, RunArgs};
use poi_node::error::{CliError, EXIT_ASSERTION, EXIT_OK, EXIT_USAGE};
use poi_node::genesis_file::ModeName;

const LOG_ENV: &str = "POI_LOG_LEVEL";
const LOG_LEVELS: [&str; 4] = ["error", "warn", "info", "debug"];

#[derive(Parser)]
#[command(name = "poi", version, about = "Proof-of-Integrity network simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a genesis configuration and per-miner identity files.
    GenFixtures {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        miners: usize,
        #[arg(long, default_value_t = 16)]
        accounts: usize,
        #[arg(long, default_value_t = 1_000_000)]
        initial_balance: u64,
        #[arg(long, value_enum, default_value = "round-robin")]
        election_mode: ModeArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a scenario file and check its assertions.
    Run {
        scenario: PathBuf,
        /// Metrics table (CSV).
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Metrics summary (JSON).
        #[arg(long)]
        metrics_json: Option<PathBuf>,
        #[arg(long)]
        dump_chain: Option<PathBuf>,
        /// Genesis configuration the run started from.
        #[arg(long)]
        dump_genesis: Option<PathBuf>,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Rebuild a dumped chain from genesis without executing transactions.
    VerifyChain { chain: PathBuf, genesis: PathBuf },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ModeArg {
    RoundRobin,
    Vrf,
}

fn init_logging() -> Result<(), CliError> {
    let level = match std::env::var(LOG_ENV) {
        Ok(v) if LOG_LEVELS.contains(&v.as_str()) => v,
        Ok(v) => {
            return Err(CliError::Usage(format!("{LOG_ENV}={v}: expected one of {}", LOG_LEVELS.join(", "))));
        }
        Err(_) => "warn".into(),
    };
    env_logger::Builder::new().parse_filters(&level).format_timestamp(None).init();
    Ok(())
}

fn execute(cli: Cli) -> Result<u8, CliError> {
    match cli.command {
        Command::GenFixtures { seed, miners, accounts, initial_balance, election_mode, out } => {
            let mode = match election_mode {
                ModeArg::RoundRobin => ModeName::RoundRobin,
                ModeArg::Vrf => ModeName::Vrf,
            };
            let written = cmd_gen_fixtures(&GenFixturesArgs {
                seed,
                miners,
                accounts,
                initial_balance,
                election_mode: mode.into(),
                out_dir: out,
            })?;
            for p in written {
                println!("{}", p.display());
            }
            Ok(EXIT_OK)
        }
        Command::Run { scenario, metrics, metrics_json, dump_chain, dump_genesis, seed } => {
            let report =
                cmd_run(&RunArgs { scenario, metrics_csv: metrics, metrics_json, dump_chain, dump_genesis, seed })?;
            print!("{}", report.summary());
            Ok(if report.failures.is_empty() { EXIT_OK } else { EXIT_ASSERTION })
        }
        Command::VerifyChain { chain, genesis } => {
            print!("{}", cmd_verify_chain(&chain, &genesis)?.render());
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    let result = init_logging().and_then(|()| execute(cli));
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("poi: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
