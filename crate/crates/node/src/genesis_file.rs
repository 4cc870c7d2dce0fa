//! Genesis configuration as a TOML document.
//!
//! ```toml
//! schema_version = 1
//! election_mode = "round_robin"        # or "vrf"
//! integrity_list = ["<composite hex>"]
//!
//! [[trusted_roots]]
//! issuer = "<issuer id hex>"
//! public_key = "<ed25519 key hex>"
//!
//! [[miners]]
//! label = "<identity label hex>"
//! join_request = "<canonical join request hex>"
//!
//! [[balances]]
//! account = "<account label hex>"
//! amount = 1000000
//! ```

use std::path::Path;

use poi_core::attestation::IntegrityList;
use poi_core::consensus::{ChainState, ElectionMode, GenesisConfig, JoinRequest};
use poi_core::crypto::{PublicKey, TrustedRoots};
use poi_core::{hex, Decode, Digest, Encode};
use serde::{Deserialize, Serialize};

use crate::error::{line_at, CliError, Diagnostic};

pub const GENESIS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    RoundRobin,
    Vrf,
}

impl From<ModeName> for ElectionMode {
    fn from(m: ModeName) -> Self {
        match m {
            ModeName::RoundRobin => ElectionMode::RoundRobin,
            ModeName::Vrf => ElectionMode::Vrf,
        }
    }
}

impl From<ElectionMode> for ModeName {
    fn from(m: ElectionMode) -> Self {
        match m {
            ElectionMode::RoundRobin => ModeName::RoundRobin,
            ElectionMode::Vrf => ModeName::Vrf,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenesisDoc {
    schema_version: u32,
    election_mode: ModeName,
    integrity_list: Vec<String>,
    trusted_roots: Vec<RootEntry>,
    miners: Vec<MinerEntry>,
    #[serde(default)]
    balances: Vec<BalanceEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RootEntry {
    issuer: String,
    public_key: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MinerEntry {
    label: String,
    join_request: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BalanceEntry {
    account: String,
    amount: u64,
}

pub fn render_genesis(cfg: &GenesisConfig) -> String {
    let doc = GenesisDoc {
        schema_version: GENESIS_SCHEMA_VERSION,
        election_mode: cfg.election_mode.into(),
        integrity_list: cfg.integrity_list.iter().map(Digest::to_hex).collect(),
        trusted_roots: cfg
            .trusted_roots
            .iter()
            .map(|(id, key)| RootEntry { issuer: id.to_hex(), public_key: hex::encode(&key.to_bytes()) })
            .collect(),
        miners: cfg
            .initial_miners
            .iter()
            .map(|j| MinerEntry { label: j.label().to_hex(), join_request: hex::encode(&j.to_bytes()) })
            .collect(),
        balances: cfg
            .balances
            .iter()
            .map(|(a, amount)| BalanceEntry { account: a.to_hex(), amount: *amount })
            .collect(),
    };
    toml::to_string(&doc).expect("genesis document serializes")
}

/// Line of the `n`-th assignment to `key` (0-based).
fn nth_assignment(text: &str, key: &str, n: usize) -> Option<usize> {
    let mut offset = 0;
    let mut seen = 0;
    for line in text.split_inclusive('\n') {
        let t = line.trim_start();
        if t.strip_prefix(key).is_some_and(|r| r.trim_start().starts_with('=')) {
            if seen == n {
                return Some(line_at(text, offset));
            }
            seen += 1;
        }
        offset += line.len();
    }
    None
}

pub fn parse_genesis(path: &Path, text: &str) -> Result<GenesisConfig, Diagnostic> {
    let doc: GenesisDoc = toml::from_str(text).map_err(|e| Diagnostic::from_toml(path, text, &e))?;
    let bad = |key: &str, n: usize, field: String, msg: String| Diagnostic {
        path: path.to_path_buf(),
        line: nth_assignment(text, key, n),
        field: Some(field),
        message: msg,
    };
    if doc.schema_version != GENESIS_SCHEMA_VERSION {
        return Err(bad(
            "schema_version",
            0,
            "schema_version".into(),
            format!("unsupported version {} (expected {GENESIS_SCHEMA_VERSION})", doc.schema_version),
        ));
    }
    let digest = |key: &str, n: usize, field: String, s: &str| {
        Digest::from_hex(s).map_err(|_| bad(key, n, field, "expected 64 hex characters".into()))
    };

    let mut composites = Vec::new();
    for (i, c) in doc.integrity_list.iter().enumerate() {
        composites.push(Digest::from_hex(c).map_err(|_| {
            bad("integrity_list", 0, format!("integrity_list[{i}]"), "expected 64 hex characters".into())
        })?);
    }

    let mut roots = Vec::new();
    for (i, r) in doc.trusted_roots.iter().enumerate() {
        let id = digest("issuer", i, format!("trusted_roots[{i}].issuer"), &r.issuer)?;
        let key = hex::decode(&r.public_key).ok().and_then(|b| PublicKey::from_bytes(&b).ok()).ok_or_else(|| {
            bad("public_key", i, format!("trusted_roots[{i}].public_key"), "not an ed25519 key".into())
        })?;
        roots.push((id, key));
    }

    let mut miners = Vec::new();
    for (i, m) in doc.miners.iter().enumerate() {
        let field = format!("miners[{i}].join_request");
        let bytes =
            hex::decode(&m.join_request).map_err(|_| bad("join_request", i, field.clone(), "invalid hex".into()))?;
        let join = JoinRequest::from_bytes(&bytes).map_err(|e| bad("join_request", i, field, e.to_string()))?;
        let label = digest("label", i, format!("miners[{i}].label"), &m.label)?;
        if label != join.label() {
            return Err(bad(
                "label",
                i,
                format!("miners[{i}].label"),
                format!("does not match the join request ({})", join.label()),
            ));
        }
        miners.push(join);
    }

    let mut balances = Vec::new();
    for (i, b) in doc.balances.iter().enumerate() {
        balances.push((digest("account", i, format!("balances[{i}].account"), &b.account)?, b.amount));
    }

    let cfg = GenesisConfig {
        trusted_roots: TrustedRoots::from_iter(roots),
        initial_miners: miners,
        integrity_list: IntegrityList::from_iter(composites),
        balances,
        election_mode: doc.election_mode.into(),
    };
    ChainState::from_genesis(&cfg).map_err(|e| Diagnostic::new(path, format!("invalid genesis: {e}")))?;
    Ok(cfg)
}

pub fn load_genesis(path: &Path) -> Result<GenesisConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(parse_genesis(path, &text)?)
}
