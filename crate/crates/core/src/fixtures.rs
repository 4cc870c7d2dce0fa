//! Deterministic identities, manifests and genesis configurations derived
//! from a single 64-bit seed.

use alloc::vec::Vec;

use crate::attestation::{simulate_measured_boot, Component, IntegrityList, MeasurementManifest, Stage};
use crate::consensus::{ElectionMode, GenesisConfig, JoinRequest};
use crate::crypto::{self, Certificate, CertificateAuthority, Digest, KeyPair, TrustedRoots};
use crate::tpm::TpmState;

/// The reference software stack every honest miner boots.
pub fn golden_manifest() -> MeasurementManifest {
    let c = |stage, name: &str| Component::new(stage, name, crypto::hash_parts(&[b"poi/golden/", name.as_bytes()]));
    MeasurementManifest::new(alloc::vec![
        c(Stage::Static, "bios"),
        c(Stage::Static, "bootloader"),
        c(Stage::Dynamic, "kernel"),
        c(Stage::Dynamic, "initrd"),
        c(Stage::Ima, "poi-node"),
    ])
    .expect("golden manifest is well-formed")
}

/// The golden stack with a modified node binary.
pub fn tampered_manifest() -> MeasurementManifest {
    golden_manifest().with_digest(4, crypto::hash(b"poi/tampered/poi-node"))
}

pub fn derive_seed(master: u64, purpose: &str, index: u64) -> [u8; 32] {
    crypto::hash_parts(&[b"poi/fixture/", purpose.as_bytes(), b"/", &master.to_be_bytes(), &index.to_be_bytes()]).0
}

pub fn ca_seed(master: u64) -> [u8; 32] {
    derive_seed(master, "ca", 0)
}

pub fn miner_seed(master: u64, index: usize) -> [u8; 32] {
    derive_seed(master, "miner", index as u64)
}

pub fn account_keys(master: u64, count: usize) -> Vec<KeyPair> {
    (0..count).map(|i| KeyPair::from_seed(&derive_seed(master, "account", i as u64))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenesisSpec {
    pub seed: u64,
    pub miners: usize,
    pub accounts: usize,
    pub initial_balance: u64,
    pub election_mode: ElectionMode,
}

#[derive(Debug, Clone)]
pub struct MinerIdentity {
    pub index: usize,
    pub tpm_seed: [u8; 32],
    pub certificate: Certificate,
}

impl MinerIdentity {
    /// Fresh TPM that has measured the golden stack.
    pub fn boot(&self) -> TpmState {
        self.boot_with(&golden_manifest())
    }

    pub fn boot_with(&self, manifest: &MeasurementManifest) -> TpmState {
        let mut tpm = TpmState::create(&self.tpm_seed);
        simulate_measured_boot(&mut tpm, manifest).expect("fresh TPM accepts a valid manifest");
        tpm
    }
}

#[derive(Debug, Clone)]
pub struct Fixtures {
    pub seed: u64,
    pub ca: CertificateAuthority,
    pub miners: Vec<MinerIdentity>,
    pub accounts: Vec<KeyPair>,
    pub genesis: GenesisConfig,
}

pub fn identity(master: u64, ca: &CertificateAuthority, index: usize) -> MinerIdentity {
    let tpm_seed = miner_seed(master, index);
    let certificate = ca.issue(&TpmState::create(&tpm_seed).attestation_public_key());
    MinerIdentity { index, tpm_seed, certificate }
}

/// Boots miner `index` with `manifest` and builds its join request.
pub fn enroll_miner(
    fx: &Fixtures,
    index: usize,
    manifest: &MeasurementManifest,
    requested_at: u64,
) -> (TpmState, JoinRequest) {
    let id = identity(fx.seed, &fx.ca, index);
    let tpm = id.boot_with(manifest);
    let join = JoinRequest::create(&tpm, &id.certificate, requested_at).expect("certificate matches the TPM");
    (tpm, join)
}

/// Genesis with miners `0..spec.miners`.
pub fn generate(spec: &GenesisSpec) -> Fixtures {
    let members: Vec<usize> = (0..spec.miners).collect();
    generate_for(spec, &members)
}

/// Genesis whose initial miners are the identities at `members`;
/// `spec.miners` is ignored.
pub fn generate_for(spec: &GenesisSpec, members: &[usize]) -> Fixtures {
    let ca = CertificateAuthority::from_seed(&ca_seed(spec.seed));
    let miners: Vec<MinerIdentity> = members.iter().map(|&i| identity(spec.seed, &ca, i)).collect();
    let initial_miners = miners
        .iter()
        .map(|m| JoinRequest::create(&m.boot(), &m.certificate, 0).expect("certificate matches the TPM"))
        .collect();
    let accounts = account_keys(spec.seed, spec.accounts);
    let balances: Vec<(Digest, u64)> = accounts.iter().map(|k| (k.public.label(), spec.initial_balance)).collect();
    let genesis = GenesisConfig {
        trusted_roots: TrustedRoots::from_iter([ca.root()]),
        initial_miners,
        integrity_list: IntegrityList::from_iter([golden_manifest().expected_composite()]),
        balances,
        election_mode: spec.election_mode,
    };
    Fixtures { seed: spec.seed, ca, miners, accounts, genesis }
}
