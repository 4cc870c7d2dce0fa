//! Scenario files: a TOML rendering of the simulation parameters plus the
//! assertions `poi run` checks afterwards.
//!
//! ```toml
//! schema_version = 1
//! name = "honest-10"
//! seed = 7
//! election_mode = "round_robin"     # or "vrf"
//! target_height = 200
//! # optional: block_interval_ms, election_timeout_ms, max_txs_per_block,
//! # max_joins_per_block, paranoid_validation, max_sim_time_ms
//!
//! [network]                         # optional, defaults shown
//! latency_min_ms = 5
//! latency_max_ms = 50
//! drop_rate = 0.0
//! max_attempts = 4
//!
//! [roster]
//! miners = 10                       # genesis miners, listed first
//! relays = 2
//! [[roster.nodes]]                  # extra nodes, appended in order
//! kind = "trusted_miner"            # or "untrusted_relay"
//! join_at_ms = 5000                 # enroll mid-run instead of at genesis
//! offline_after_ms = 9000
//! adversary = "tampered_pcr_miner"
//!
//! [workload]                        # optional
//! accounts = 16
//! initial_balance = 1000000
//! transfers = 2000
//! counter_calls = 0
//! random_draws = 0
//! oracle_fetches = 0
//! oracle_fault_period = 5
//! submit_at_ms = 0
//!
//! adversaries = ["equivocating_miner"]   # top-level, before any table
//!
//! [assertions]                      # all optional
//! converged = true
//! invariants = true                 # default true
//! adversaries_rejected = true       # default true when adversaries exist
//! final_height = 200
//! max_forks = 0
//! total_executions = 2000
//! total_offchain_requests = 10
//! miner_list_size = 10
//! max_results_overhead = 0.5
//! [assertions.min_rejections]       # per honest node
//! integrity_not_listed = 1
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use poi_core::consensus::Rejection;
use poi_core::sim::{adversary_inject, AdversaryKind, NetworkParams, NodeKind, NodeSpec, SimOutcome, SimParams};
use serde::Deserialize;

use crate::error::{CliError, Diagnostic};
use crate::genesis_file::ModeName;

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
enum KindName {
    TrustedMiner,
    UntrustedRelay,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
enum AdversaryName {
    ForgedCertJoin,
    TamperedPcrMiner,
    QuoteReplayBlock,
    EquivocatingMiner,
    SpamInvalidBlocks,
}

impl From<AdversaryName> for AdversaryKind {
    fn from(a: AdversaryName) -> Self {
        match a {
            AdversaryName::ForgedCertJoin => AdversaryKind::ForgedCertJoin,
            AdversaryName::TamperedPcrMiner => AdversaryKind::TamperedPcrMiner,
            AdversaryName::QuoteReplayBlock => AdversaryKind::QuoteReplayBlock,
            AdversaryName::EquivocatingMiner => AdversaryKind::EquivocatingMiner,
            AdversaryName::SpamInvalidBlocks => AdversaryKind::SpamInvalidBlocks,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioDoc {
    schema_version: u32,
    name: Option<String>,
    seed: u64,
    election_mode: ModeName,
    target_height: u64,
    block_interval_ms: Option<u64>,
    election_timeout_ms: Option<u64>,
    max_txs_per_block: Option<usize>,
    max_joins_per_block: Option<usize>,
    paranoid_validation: Option<bool>,
    max_sim_time_ms: Option<u64>,
    #[serde(default)]
    network: NetworkDoc,
    roster: RosterDoc,
    #[serde(default)]
    workload: WorkloadDoc,
    #[serde(default)]
    adversaries: Vec<AdversaryName>,
    #[serde(default)]
    assertions: Assertions,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkDoc {
    latency_min_ms: Option<u64>,
    latency_max_ms: Option<u64>,
    drop_rate: Option<f64>,
    max_attempts: Option<u32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RosterDoc {
    #[serde(default)]
    miners: usize,
    #[serde(default)]
    relays: usize,
    #[serde(default)]
    nodes: Vec<NodeDoc>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    kind: KindName,
    genesis_member: Option<bool>,
    join_at_ms: Option<u64>,
    offline_after_ms: Option<u64>,
    adversary: Option<AdversaryName>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct WorkloadDoc {
    accounts: Option<usize>,
    initial_balance: Option<u64>,
    #[serde(default)]
    transfers: usize,
    #[serde(default)]
    counter_calls: usize,
    #[serde(default)]
    random_draws: usize,
    #[serde(default)]
    oracle_fetches: usize,
    oracle_fault_period: Option<u64>,
    #[serde(default)]
    submit_at_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Assertions {
    pub converged: Option<bool>,
    pub invariants: Option<bool>,
    pub adversaries_rejected: Option<bool>,
    pub final_height: Option<u64>,
    pub max_forks: Option<u64>,
    pub total_executions: Option<u64>,
    pub total_offchain_requests: Option<u64>,
    pub miner_list_size: Option<usize>,
    pub max_results_overhead: Option<f64>,
    #[serde(default)]
    pub min_rejections: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub params: SimParams,
    pub assertions: Assertions,
    min_rejections: Vec<(Rejection, u64)>,
}

pub fn parse_scenario(path: &Path, text: &str) -> Result<Scenario, Diagnostic> {
    let doc: ScenarioDoc = toml::from_str(text).map_err(|e| Diagnostic::from_toml(path, text, &e))?;
    if doc.schema_version != SCENARIO_SCHEMA_VERSION {
        return Err(Diagnostic::at_field(
            path,
            text,
            "schema_version",
            format!("unsupported version {} (expected {SCENARIO_SCHEMA_VERSION})", doc.schema_version),
        ));
    }
    let mut p =
        SimParams::new(doc.seed, doc.roster.miners, doc.roster.relays, doc.election_mode.into(), doc.target_height);
    let d = NetworkParams::default();
    p.network = NetworkParams {
        latency_min_ms: doc.network.latency_min_ms.unwrap_or(d.latency_min_ms),
        latency_max_ms: doc.network.latency_max_ms.unwrap_or(d.latency_max_ms),
        drop_rate: doc.network.drop_rate.unwrap_or(d.drop_rate),
        max_attempts: doc.network.max_attempts.unwrap_or(d.max_attempts),
    };
    if let Some(v) = doc.block_interval_ms {
        p.block_interval_ms = v;
    }
    if let Some(v) = doc.election_timeout_ms {
        p.election_timeout_ms = v;
    }
    if let Some(v) = doc.max_txs_per_block {
        p.max_txs_per_block = v;
    }
    if let Some(v) = doc.max_joins_per_block {
        p.max_joins_per_block = v;
    }
    p.paranoid_validation = doc.paranoid_validation.unwrap_or(false);
    p.max_sim_time_ms = doc.max_sim_time_ms;
    for n in &doc.roster.nodes {
        let kind = match n.kind {
            KindName::TrustedMiner => NodeKind::TrustedMiner,
            KindName::UntrustedRelay => NodeKind::UntrustedRelay,
        };
        p.roster.push(NodeSpec {
            kind,
            genesis_member: n.genesis_member.unwrap_or(kind == NodeKind::TrustedMiner && n.join_at_ms.is_none()),
            join_at_ms: n.join_at_ms,
            offline_after_ms: n.offline_after_ms,
            adversary: n.adversary.map(Into::into),
        });
    }
    let w = &doc.workload;
    p.workload.accounts = w.accounts.unwrap_or(p.workload.accounts);
    p.workload.initial_balance = w.initial_balance.unwrap_or(p.workload.initial_balance);
    p.workload.transfers = w.transfers;
    p.workload.counter_calls = w.counter_calls;
    p.workload.random_draws = w.random_draws;
    p.workload.oracle_fetches = w.oracle_fetches;
    p.workload.oracle_fault_period = w.oracle_fault_period;
    p.workload.submit_at_ms = w.submit_at_ms;
    if w.oracle_fault_period == Some(0) {
        return Err(Diagnostic::at_field(path, text, "workload.oracle_fault_period", "must be positive"));
    }
    for &a in &doc.adversaries {
        p = adversary_inject(&p, a.into());
    }
    p.validate().map_err(|e| Diagnostic::at_field(path, text, e.field, e.reason))?;

    let mut min_rejections = Vec::new();
    for (name, &count) in &doc.assertions.min_rejections {
        let r = Rejection::ALL.into_iter().find(|r| r.as_str() == name).ok_or_else(|| {
            let known: Vec<&str> = Rejection::ALL.iter().map(|r| r.as_str()).collect();
            Diagnostic::at_field(
                path,
                text,
                &format!("assertions.min_rejections.{name}"),
                format!("unknown verdict, expected one of {}", known.join(", ")),
            )
        })?;
        min_rejections.push((r, count));
    }
    let name = doc
        .name
        .unwrap_or_else(|| path.file_stem().map_or_else(|| "scenario".into(), |s| s.to_string_lossy().into_owned()));
    Ok(Scenario { name, params: p, assertions: doc.assertions, min_rejections })
}

pub fn load_scenario(path: &Path) -> Result<Scenario, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(parse_scenario(path, &text)?)
}

impl Scenario {
    /// Every assertion that does not hold for `out`.
    pub fn failures(&self, out: &SimOutcome) -> Vec<String> {
        let a = &self.assertions;
        let m = &out.metrics;
        let mut f = Vec::new();
        if a.invariants.unwrap_or(true) {
            f.extend(out.invariant_violations(&self.params));
        }
        let has_adversaries = self.params.roster.iter().any(|s| s.adversary.is_some());
        if a.adversaries_rejected.unwrap_or(has_adversaries) {
            f.extend(out.adversary_failures());
        }
        if let Some(want) = a.converged {
            if m.converged != want {
                f.push(format!("converged is {}, expected {want}", m.converged));
            }
        }
        if let Some(want) = a.final_height {
            if m.final_height != want {
                f.push(format!("final height {} != {want}", m.final_height));
            }
        }
        if let Some(max) = a.max_forks {
            if m.forks > max {
                f.push(format!("{} forks > {max}", m.forks));
            }
        }
        if let Some(want) = a.total_executions {
            if m.total_executions() != want {
                f.push(format!("total executions {} != {want}", m.total_executions()));
            }
        }
        if let Some(want) = a.total_offchain_requests {
            if m.total_offchain_requests() != want {
                f.push(format!("off-chain requests {} != {want}", m.total_offchain_requests()));
            }
        }
        if let Some(want) = a.miner_list_size {
            let got = out.reference_chain().miner_list().len();
            if got != want {
                f.push(format!("miner list size {got} != {want}"));
            }
        }
        if let Some(max) = a.max_results_overhead {
            if m.results_overhead > max {
                f.push(format!("results overhead {:.4} > {max}", m.results_overhead));
            }
        }
        for &(r, min) in &self.min_rejections {
            for n in m.honest_nodes() {
                if n.metrics.rejections(r) < min {
                    f.push(format!(
                        "node {} rejected {} blocks as {}, expected at least {min}",
                        n.id,
                        n.metrics.rejections(r),
                        r.as_str()
                    ));
                }
            }
        }
        f
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use poi_core::consensus::ElectionMode;

    const BASIC: &str = r#"
schema_version = 1
seed = 3
election_mode = "vrf"
target_height = 6
adversaries = ["tampered_pcr_miner"]

[network]
drop_rate = 0.05

[roster]
miners = 4
relays = 1
[[roster.nodes]]
kind = "trusted_miner"
join_at_ms = 2500

[workload]
transfers = 12

[assertions]
final_height = 6
[assertions.min_rejections]
integrity_not_listed = 1
"#;

    #[test]
    fn parses_and_runs() {
        let s = parse_scenario(Path::new("basic.toml"), BASIC).unwrap();
        assert_eq!(s.name, "basic");
        assert_eq!(s.params.election_mode, ElectionMode::Vrf);
        assert_eq!(s.params.roster.len(), 6);
        assert!(!s.params.roster[5].genesis_member);
        assert_eq!(s.params.roster[3].adversary, Some(AdversaryKind::TamperedPcrMiner));
        let out = poi_core::sim::run_scenario(s.params.clone()).unwrap();
        assert_eq!(s.failures(&out), Vec::<String>::new());
    }

    fn diag(text: &str) -> Diagnostic {
        parse_scenario(Path::new("s.toml"), text).unwrap_err()
    }

    #[test]
    fn diagnostics() {
        let d = diag(&BASIC.replace("drop_rate = 0.05", "drop_rate = 1.5"));
        assert_eq!(d.field.as_deref(), Some("drop_rate"));
        assert_eq!(d.line, Some(9));

        let d = diag(&BASIC.replace("transfers = 12", "transfer = 12"));
        assert_eq!(d.line, Some(19));
        assert!(d.message.contains("transfer"), "{d}");

        let d = diag(&BASIC.replace("\"vrf\"", "\"pow\""));
        assert_eq!(d.line, Some(4));

        let d = diag(&BASIC.replace("integrity_not_listed", "integrity"));
        assert_eq!(d.line, Some(24));

        let d = diag(&BASIC.replace("miners = 4", "miners = 0"));
        assert_eq!(d.field.as_deref(), Some("roster"));

        let d = diag("seed = 1\n");
        assert!(d.message.contains("missing field"), "{d}");
    }
}
