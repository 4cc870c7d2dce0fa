//! The three operator commands, independent of argument parsing.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{debug, info};
use poi_core::consensus::{rebuild_from_genesis, ElectionMode, MinerRecord};
use poi_core::fixtures::{self, GenesisSpec};
use poi_core::sim::{run_scenario, Metrics, SimOutcome};
use poi_core::{hex, Digest, Encode};

use crate::chain_file::{decode_chain, write_chain};
use crate::error::CliError;
use crate::genesis_file::{load_genesis, render_genesis};
use crate::metrics_io::{write_metrics_csv, write_metrics_json};
use crate::scenario::load_scenario;

pub const GENESIS_FILE: &str = "genesis.toml";
pub const MINERS_DIR: &str = "miners";

#[derive(Debug, Clone)]
pub struct GenFixturesArgs {
    pub seed: u64,
    pub miners: usize,
    pub accounts: usize,
    pub initial_balance: u64,
    pub election_mode: ElectionMode,
    pub out_dir: PathBuf,
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

/// Writes `genesis.toml` and one identity file per miner; returns the
/// paths written.
pub fn cmd_gen_fixtures(args: &GenFixturesArgs) -> Result<Vec<PathBuf>, CliError> {
    if args.miners == 0 {
        return Err(CliError::Usage("--miners must be at least 1".into()));
    }
    let fx = fixtures::generate(&GenesisSpec {
        seed: args.seed,
        miners: args.miners,
        accounts: args.accounts,
        initial_balance: args.initial_balance,
        election_mode: args.election_mode,
    });
    let miners_dir = args.out_dir.join(MINERS_DIR);
    std::fs::create_dir_all(&miners_dir).map_err(|e| CliError::io(&miners_dir, e))?;
    let mut written = Vec::new();

    let genesis = args.out_dir.join(GENESIS_FILE);
    write(&genesis, &render_genesis(&fx.genesis))?;
    written.push(genesis);

    for m in &fx.miners {
        let path = miners_dir.join(format!("miner-{:03}.toml", m.index));
        let label = m.boot().identity_label();
        let text = format!(
            "index = {}\nlabel = \"{}\"\ntpm_seed = \"{}\"\ncertificate = \"{}\"\n",
            m.index,
            label,
            hex::encode(&m.tpm_seed),
            hex::encode(&m.certificate.to_bytes()),
        );
        write(&path, &text)?;
        written.push(path);
    }
    info!("wrote {} fixture files to {}", written.len(), args.out_dir.display());
    Ok(written)
}

#[derive(Debug, Clone, Default)]
pub struct RunArgs {
    pub scenario: PathBuf,
    pub metrics_csv: Option<PathBuf>,
    pub metrics_json: Option<PathBuf>,
    pub dump_chain: Option<PathBuf>,
    pub dump_genesis: Option<PathBuf>,
    pub seed: Option<u64>,
}

pub struct RunReport {
    pub name: String,
    pub outcome: SimOutcome,
    pub failures: Vec<String>,
}

impl RunReport {
    pub fn metrics(&self) -> &Metrics {
        &self.outcome.metrics
    }

    pub fn summary(&self) -> String {
        let m = self.metrics();
        let mut s = String::new();
        let _ = writeln!(s, "scenario {}: height {} hash {}", self.name, m.final_height, m.final_chain_hash);
        let _ = writeln!(
            s,
            "forks {} executions {} offchain {} results_overhead {:.4}",
            m.forks,
            m.total_executions(),
            m.total_offchain_requests(),
            m.results_overhead
        );
        if self.failures.is_empty() {
            let _ = writeln!(s, "all assertions hold");
        }
        for f in &self.failures {
            let _ = writeln!(s, "assertion failed: {f}");
        }
        s
    }
}

pub fn cmd_run(args: &RunArgs) -> Result<RunReport, CliError> {
    let mut scenario = load_scenario(&args.scenario)?;
    if let Some(seed) = args.seed {
        scenario.params.seed = seed;
    }
    info!("running {} with seed {}", scenario.name, scenario.params.seed);
    let outcome = run_scenario(scenario.params.clone()).map_err(|e| CliError::Usage(e.to_string()))?;
    debug!("transcript {}", outcome.metrics.transcript);
    if let Some(p) = &args.metrics_csv {
        write_metrics_csv(p, &outcome.metrics)?;
    }
    if let Some(p) = &args.metrics_json {
        write_metrics_json(p, &outcome.metrics)?;
    }
    if let Some(p) = &args.dump_chain {
        write_chain(p, outcome.reference_chain().blocks()).map_err(|e| CliError::io(p, e))?;
    }
    if let Some(p) = &args.dump_genesis {
        write(p, &render_genesis(&outcome.genesis))?;
    }
    let failures = scenario.failures(&outcome);
    Ok(RunReport { name: scenario.name, outcome, failures })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifyReport {
    pub height: u64,
    pub tip_hash: Digest,
    pub state_root: Digest,
    pub miners: Vec<MinerRecord>,
    pub executions: u64,
}

impl VerifyReport {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "height {}", self.height);
        let _ = writeln!(s, "tip_hash {}", self.tip_hash);
        let _ = writeln!(s, "state_root {}", self.state_root);
        let _ = writeln!(s, "executions {}", self.executions);
        let _ = writeln!(s, "miners {}", self.miners.len());
        for (i, m) in self.miners.iter().enumerate() {
            let _ = writeln!(s, "  {i} {} joined_at {}", m.label, m.join_height);
        }
        s
    }
}

pub fn cmd_verify_chain(chain: &Path, genesis: &Path) -> Result<VerifyReport, CliError> {
    let cfg = load_genesis(genesis)?;
    let bytes = std::fs::read(chain).map_err(|e| CliError::io(chain, e))?;
    let blocks = decode_chain(&bytes).map_err(|e| CliError::Failed(format!("{}: {e}", chain.display())))?;
    let rebuilt =
        rebuild_from_genesis(&blocks, &cfg).map_err(|e| CliError::Failed(format!("{}: {e}", chain.display())))?;
    let c = &rebuilt.chain;
    Ok(VerifyReport {
        height: c.height(),
        tip_hash: c.tip_hash(),
        state_root: c.state_root(),
        miners: c.miner_list().records().to_vec(),
        executions: rebuilt.executions.0,
    })
}
