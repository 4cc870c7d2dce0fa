use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use poi_core::consensus::{rebuild_from_genesis, Block};
use poi_node::chain_file::{decode_chain, encode_chain, ChainFileError};
use poi_node::commands::{cmd_verify_chain, GENESIS_FILE};
use poi_node::error::CliError;
use poi_node::genesis_file::load_genesis;

fn poi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_poi")).args(args).env_remove("POI_LOG_LEVEL").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

const SMALL: &str = r#"schema_version = 1
seed = 21
election_mode = "vrf"
target_height = 30

[roster]
miners = 3
relays = 1

[[roster.nodes]]
kind = "trusted_miner"
join_at_ms = 6000

[workload]
accounts = 8
initial_balance = 5000
transfers = 80

[assertions]
converged = true
miner_list_size = 4
"#;

fn write(dir: &Path, name: &str, contents: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, contents).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_run_verify_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let fx = dir.path().join("fx");
    let o = poi(&[
        "gen-fixtures",
        "--seed",
        "21",
        "--miners",
        "3",
        "--accounts",
        "8",
        "--initial-balance",
        "5000",
        "--election-mode",
        "vrf",
        "--out",
        s(&fx),
    ]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    assert!(fx.join("miners/miner-002.toml").exists());

    let scenario = write(dir.path(), "small.toml", SMALL);
    let chain = dir.path().join("run.chain");
    let dumped = dir.path().join("run-genesis.toml");
    let csv = dir.path().join("m.csv");
    let json = dir.path().join("m.json");
    let o = poi(&[
        "run",
        s(&scenario),
        "--metrics",
        s(&csv),
        "--metrics-json",
        s(&json),
        "--dump-chain",
        s(&chain),
        "--dump-genesis",
        s(&dumped),
    ]);
    assert_eq!(code(&o), 0, "{}{}", text(&o.stdout), text(&o.stderr));
    assert!(text(&o.stdout).contains("all assertions hold"));
    assert_eq!(std::fs::read(&dumped).unwrap(), std::fs::read(fx.join(GENESIS_FILE)).unwrap());
    assert!(std::fs::read_to_string(&csv).unwrap().starts_with("schema_version,node,metric,value\n"));
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(&json).unwrap()).unwrap();
    assert_eq!(summary["summary"]["final_height"], 30);

    let o = poi(&["verify-chain", s(&chain), s(&fx.join(GENESIS_FILE))]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let out = text(&o.stdout);
    assert!(out.contains("height 30\n"), "{out}");
    assert!(out.contains("executions 0\n"), "{out}");
    assert!(out.contains("miners 4\n"), "{out}");
    let root = summary["summary"]["final_state_root"].as_str().unwrap();
    assert!(out.contains(&format!("state_root {root}\n")), "{out}");
}

#[test]
fn gen_fixtures_is_deterministic_and_validates_input() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        assert_eq!(code(&poi(&["gen-fixtures", "--seed", "4", "--miners", "5", "--out", s(d)])), 0);
    }
    for f in ["genesis.toml", "miners/miner-000.toml", "miners/miner-004.toml"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    load_genesis(&a.join(GENESIS_FILE)).unwrap();

    let o = poi(&["gen-fixtures", "--seed", "4", "--miners", "0", "--out", s(&a)]);
    assert_eq!(code(&o), 2);
    assert!(text(&o.stderr).contains("--miners"));

    let blocker = write(dir.path(), "file", "x");
    let o = poi(&["gen-fixtures", "--seed", "4", "--miners", "1", "--out", s(&blocker.join("sub"))]);
    assert_eq!(code(&o), 2);
    assert!(text(&o.stderr).contains("file"), "{}", text(&o.stderr));
}

#[test]
fn exit_codes_and_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let broken = write(dir.path(), "broken.toml", &SMALL.replace("target_height = 30", "target_height = \"thirty\""));
    let o = poi(&["run", s(&broken)]);
    assert_eq!(code(&o), 2);
    let err = text(&o.stderr);
    assert!(err.contains("broken.toml:4"), "{err}");

    let bad_timing =
        write(dir.path(), "timing.toml", &SMALL.replace("[roster]", "election_timeout_ms = 900\n\n[roster]"));
    let o = poi(&["run", s(&bad_timing)]);
    assert_eq!(code(&o), 2);
    let err = text(&o.stderr);
    assert!(err.contains("timing.toml:6") && err.contains("election_timeout_ms"), "{err}");

    let failing = write(dir.path(), "failing.toml", &SMALL.replace("miner_list_size = 4", "miner_list_size = 9"));
    let o = poi(&["run", s(&failing)]);
    assert_eq!(code(&o), 1);
    assert!(text(&o.stdout).contains("miner list size 4 != 9"));

    assert_eq!(code(&poi(&["run"])), 2);
    assert_eq!(code(&poi(&["frobnicate"])), 2);
    assert_eq!(code(&poi(&["run", s(&dir.path().join("missing.toml"))])), 2);
    assert_eq!(code(&poi(&["--help"])), 0);

    let o = Command::new(env!("CARGO_BIN_EXE_poi"))
        .args(["run", s(&failing)])
        .env("POI_LOG_LEVEL", "chatty")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
    assert!(text(&o.stderr).contains("POI_LOG_LEVEL"));
    let o = Command::new(env!("CARGO_BIN_EXE_poi"))
        .args(["run", s(&write(dir.path(), "ok.toml", SMALL))])
        .env("POI_LOG_LEVEL", "info")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(text(&o.stderr).contains("running"), "{}", text(&o.stderr));
}

#[test]
fn seed_override_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write(dir.path(), "s.toml", SMALL);
    let run = |seed: Option<&str>| {
        let mut args = vec!["run", s(&scenario)];
        if let Some(seed) = seed {
            args.extend(["--seed", seed]);
        }
        text(&poi(&args).stdout)
    };
    assert_eq!(run(None), run(Some("21")));
    assert_ne!(run(None), run(Some("22")));
}

/// A chain dump plus its genesis, produced by running the small scenario.
fn saved_chain(dir: &Path) -> (PathBuf, PathBuf, Vec<u8>) {
    let scenario = write(dir, "s.toml", SMALL);
    let chain = dir.join("run.chain");
    let genesis = dir.join("genesis.toml");
    let o = poi(&["run", s(&scenario), "--dump-chain", s(&chain), "--dump-genesis", s(&genesis)]);
    assert_eq!(code(&o), 0);
    let bytes = std::fs::read(&chain).unwrap();
    (chain, genesis, bytes)
}

#[test]
fn framing_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (chain, genesis, bytes) = saved_chain(dir.path());
    let empty = write(dir.path(), "empty.chain", "");
    let o = poi(&["verify-chain", s(&empty), s(&genesis)]);
    assert_eq!(code(&o), 1);
    assert!(text(&o.stderr).contains("framing error at byte 0: empty file"), "{}", text(&o.stderr));

    let truncated = dir.path().join("truncated.chain");
    std::fs::write(&truncated, &bytes[..bytes.len() - 3]).unwrap();
    let o = poi(&["verify-chain", s(&truncated), s(&genesis)]);
    assert_eq!(code(&o), 1);
    let frames = decode_chain(&bytes).unwrap();
    let last_frame = bytes.len() - frames.last().unwrap().to_bytes_len() - 4;
    assert!(text(&o.stderr).contains(&format!("framing error at byte {last_frame}")), "{}", text(&o.stderr));

    let o = poi(&["verify-chain", s(&chain), s(&dir.path().join("nope.toml"))]);
    assert_eq!(code(&o), 2);
}

trait EncodedLen {
    fn to_bytes_len(&self) -> usize;
}

impl EncodedLen for Block {
    fn to_bytes_len(&self) -> usize {
        poi_core::Encode::to_bytes(self).len()
    }
}

/// Flipping any bit inside block `h` must make verification fail at height
/// `h`, either because the frame no longer decodes or because the block is
/// rejected, and never earlier.
#[test]
fn bit_flip_fuzz_fails_at_the_flipped_height() {
    let dir = tempfile::tempdir().unwrap();
    let (_, genesis_path, bytes) = saved_chain(dir.path());
    let genesis = load_genesis(&genesis_path).unwrap();
    let blocks = decode_chain(&bytes).unwrap();
    let mut starts = Vec::new();
    let mut pos = 0;
    for b in &blocks {
        starts.push(pos);
        pos += 4 + b.to_bytes_len();
    }
    let mut rng = 0x9e37_79b9_7f4a_7c15u64;
    let mut next = || {
        rng ^= rng << 13;
        rng ^= rng >> 7;
        rng ^= rng << 17;
        rng
    };
    let mut trials = 0;
    for (h, &start) in starts.iter().enumerate().skip(1) {
        let len = blocks[h].to_bytes_len();
        for _ in 0..40 {
            let offset = start + 4 + (next() as usize % len);
            let bit = 1u8 << (next() % 8);
            let mut corrupt = bytes.clone();
            corrupt[offset] ^= bit;
            let failed_at = match decode_chain(&corrupt) {
                Err(ChainFileError::Block { index, .. }) => index,
                Err(ChainFileError::Framing { offset: o, .. }) => panic!("framing error at {o} for flip at {offset}"),
                Ok(decoded) => match rebuild_from_genesis(&decoded, &genesis) {
                    Err(poi_core::consensus::RebuildError::InvalidBlock { height, .. }) => height,
                    other => panic!("flip at byte {offset} (height {h}) gave {:?}", other.map(|r| r.chain.height())),
                },
            };
            assert_eq!(failed_at, h as u64, "flip at byte {offset}");
            trials += 1;
        }
    }
    assert!(trials >= 1000);

    // the same through the command
    let mut corrupt = bytes.clone();
    corrupt[starts[7] + 40] ^= 0x10;
    let path = write(dir.path(), "corrupt.chain", "");
    std::fs::write(&path, &corrupt).unwrap();
    match cmd_verify_chain(&path, &genesis_path) {
        Err(CliError::Failed(msg)) => assert!(msg.contains("7"), "{msg}"),
        other => panic!("{other:?}"),
    }
    assert_eq!(encode_chain(&blocks), bytes);
}

#[test]
fn shipped_scenarios_pass() {
    let mut ran = 0;
    for entry in std::fs::read_dir(scenarios_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let o = poi(&["run", s(&path)]);
            assert_eq!(code(&o), 0, "{}: {}{}", path.display(), text(&o.stdout), text(&o.stderr));
            ran += 1;
        }
    }
    assert!(ran >= 9);
}
