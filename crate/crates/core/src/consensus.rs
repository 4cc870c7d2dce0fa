//! Proof-of-Integrity chain state machine.
//!
//! A block is valid when it extends the tip, comes from a listed miner whose
//! fresh quote both covers an allowed PCR composite and is bound to the
//! header, and the miner was elected for that height. Accepted blocks are
//! final.

use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use crate::attestation::{
    build_report, verify_report, AttestationError, AttestationFailure, AttestationVerdict, IntegrityList,
    IntegrityReport,
};
use crate::codec::{Decode, DecodeError, DecodeErrorKind, Decoder, Encode, Encoder};
use crate::crypto::{self, vrf_verify, Certificate, Digest, PublicKey, TrustedRoots, VrfOutput, VrfProver};
use crate::execution::{
    apply_results, execute_transactions, ExecutionContext, ExecutionCounter, ExecutionResult, OffchainClient,
    Transaction, WorldState,
};
use crate::tpm::{self, AttestationQuote, TpmError, TpmState, CONSENSUS_PCRS};

/// Binary SHA-256 Merkle root. Leaves are hashed, an odd node is paired with
/// itself, and the empty list hashes the empty string.
pub fn merkle_root<T: AsRef<[u8]>>(items: &[T]) -> Digest {
    if items.is_empty() {
        return crypto::hash(b"");
    }
    let mut level: Vec<Digest> = items.iter().map(|i| crypto::hash(i.as_ref())).collect();
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|pair| {
                let right = pair.get(1).unwrap_or(&pair[0]);
                crypto::hash_parts(&[&pair[0].0, &right.0])
            })
            .collect();
    }
    level[0]
}

/// `d` read as a big-endian integer, reduced mod `n`.
pub fn digest_mod(d: &Digest, n: u64) -> u64 {
    assert!(n > 0, "modulus must be positive");
    d.0.iter().fold(0u128, |acc, &b| (acc * 256 + b as u128) % n as u128) as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ElectionMode {
    RoundRobin,
    Vrf,
}

impl ElectionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ElectionMode::RoundRobin => "round_robin",
            ElectionMode::Vrf => "vrf",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "round_robin" => Some(ElectionMode::RoundRobin),
            "vrf" => Some(ElectionMode::Vrf),
            _ => None,
        }
    }

    fn code(self) -> u8 {
        self as u8
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(ElectionMode::RoundRobin),
            1 => Some(ElectionMode::Vrf),
            _ => None,
        }
    }
}

impl fmt::Display for ElectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinerRecord {
    pub label: Digest,
    pub certificate: Certificate,
    pub join_height: u64,
}

impl Encode for MinerRecord {
    fn encode_fields(&self, enc: &mut Encoder) {
        enc.nested(&self.label).nested(&self.certificate).u64(self.join_height);
    }
}

/// Enrolled miners sorted by label.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MinerList {
    records: Vec<MinerRecord>,
}

impl MinerList {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[MinerRecord] {
        &self.records
    }

    pub fn get(&self, index: usize) -> Option<&MinerRecord> {
        self.records.get(index)
    }

    pub fn index_of(&self, label: &Digest) -> Option<usize> {
        self.records.binary_search_by(|r| r.label.cmp(label)).ok()
    }

    pub fn contains(&self, label: &Digest) -> bool {
        self.index_of(label).is_some()
    }

    /// Inserts in label order; returns false if the label is already listed.
    pub fn insert(&mut self, record: MinerRecord) -> bool {
        match self.records.binary_search_by(|r| r.label.cmp(&record.label)) {
            Ok(_) => false,
            Err(at) => {
                self.records.insert(at, record);
                true
            }
        }
    }
}

impl Encode for MinerList {
    fn encode_fields(&self, enc: &mut Encoder) {
        enc.list(&self.records);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JoinRequest {
    pub report: IntegrityReport,
    pub requested_at: u64,
}

impl JoinRequest {
    /// Qualifying data a join report must carry.
    pub fn binding(cert: &Certificate, requested_at: u64) -> [u8; 32] {
        let mut e = Encoder::new();
        e.bytes(b"poi/join").nested(cert).u64(requested_at);
        crypto::hash(&e.finish()).0
    }

    pub fn create(tpm: &TpmState, cert: &Certificate, requested_at: u64) -> Result<Self, AttestationError> {
        let report = build_report(tpm, &Self::binding(cert, requested_at), cert, true)?;
        Ok(JoinRequest { report, requested_at })
    }

    pub fn label(&self) -> Digest {
        self.report.identity_certificate.subject_label
    }

    pub fn hash(&self) -> Digest {
        crypto::hash(&self.to_bytes())
    }
}

impl Encode for JoinRequest {
    fn encode_fields(&self, enc: &mut Encoder) {
        enc.nested(&self.report).u64(self.requested_at);
    }
}

impl Decode for JoinRequest {
    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let at = dec.offset();
        let report: IntegrityReport = dec.nested()?;
        if report.event_log.is_none() {
            return Err(DecodeError { offset: at, kind: DecodeErrorKind::Invalid("join request without event log") });
        }
        Ok(JoinRequest { report, requested_at: dec.u64()? })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockHeader {
    pub height: u64,
    pub prev_hash: Digest,
    pub tx_root: Digest,
    pub results_root: Digest,
    pub joins_root: Digest,
    pub state_root: Digest,
    pub miner_label: Digest,
    pub election_mode: ElectionMode,
    /// Number of election timeouts skipped before this round-robin block.
    pub fallback: u32,
    pub vrf_output: Option<VrfOutput>,
    pub quote: AttestationQuote,
}

impl BlockHeader {
    fn encode_unquoted(&self, enc: &mut Encoder) {
        enc.u64(self.height)
            .nested(&self.prev_hash)
            .nested(&self.tx_root)
            .nested(&self.results_root)
            .nested(&self.joins_root)
            .nested(&self.state_root)
            .nested(&self.miner_label)
            .u8(self.election_mode.code())
            .u32(self.fallback)
            .option(self.vrf_output.as_ref());
    }

    /// Hash of every header field except the quote; the quote's qualifying
    /// data must equal it.
    pub fn binding_hash(&self) -> Digest {
        let mut e = Encoder::new();
        self.encode_unquoted(&mut e);
        crypto::hash(&e.finish())
    }

    pub fn hash(&self) -> Digest {
        crypto::hash(&self.to_bytes())
    }
}

impl Encode for BlockHeader {
    fn encode_fields(&self, enc: &mut Encoder) {
        self.encode_unquoted(enc);
        enc.nested(&self.quote);
    }
}

impl Decode for BlockHeader {
    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let height = dec.u64()?;
        let prev_hash = dec.nested()?;
        let tx_root = dec.nested()?;
        let results_root = dec.nested()?;
        let joins_root = dec.nested()?;
        let state_root = dec.nested()?;
        let miner_label = dec.nested()?;
        let at = dec.offset();
        let code = dec.u8()?;
        let election_mode =
            ElectionMode::from_code(code).ok_or(DecodeError { offset: at, kind: DecodeErrorKind::UnknownTag(code) })?;
        Ok(BlockHeader {
            height,
            prev_hash,
            tx_root,
            results_root,
            joins_root,
            state_root,
            miner_label,
            election_mode,
            fallback: dec.u32()?,
            vrf_output: dec.option()?,
            quote: dec.nested()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub header: BlockHeader,
    pub transactions: Vec<Transaction>,
    pub results: Vec<ExecutionResult>,
    pub join_requests: Vec<JoinRequest>,
}

/// Encoded size of each top-level block field, length prefixes included.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BlockSizes {
    pub header: usize,
    pub transactions: usize,
    pub results: usize,
    pub joins: usize,
}

impl BlockSizes {
    pub fn total(&self) -> usize {
        self.header + self.transactions + self.results + self.joins
    }
}

impl Block {
    pub fn hash(&self) -> Digest {
        self.header.hash()
    }

    pub fn sizes(&self) -> BlockSizes {
        fn field(f: impl FnOnce(&mut Encoder)) -> usize {
            let mut e = Encoder::new();
            f(&mut e);
            e.len()
        }
        BlockSizes {
            header: field(|e| {
                e.nested(&self.header);
            }),
            transactions: field(|e| {
                e.list(&self.transactions);
            }),
            results: field(|e| {
                e.list(&self.results);
            }),
            joins: field(|e| {
                e.list(&self.join_requests);
            }),
        }
    }
}

impl Encode for Block {
    fn encode_fields(&self, enc: &mut Encoder) {
        enc.nested(&self.header).list(&self.transactions).list(&self.results).list(&self.join_requests);
    }
}

impl Decode for Block {
    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Block { header: dec.nested()?, transactions: dec.list()?, results: dec.list()?, join_requests: dec.list()? })
    }
}

pub fn tx_root(txs: &[Transaction]) -> Digest {
    merkle_root(&txs.iter().map(Encode::to_bytes).collect::<Vec<_>>())
}

pub fn results_root(results: &[ExecutionResult]) -> Digest {
    merkle_root(&results.iter().map(Encode::to_bytes).collect::<Vec<_>>())
}

pub fn joins_root(joins: &[JoinRequest]) -> Digest {
    merkle_root(&joins.iter().map(Encode::to_bytes).collect::<Vec<_>>())
}

/// Why a block was not accepted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Rejection {
    Stale,
    UnknownMiner,
    IntegrityNotListed,
    BadQuote,
    NotElected,
    BadRoots,
    Equivocation,
    /// Byte-identical to the block already final at that height.
    Duplicate,
}

impl Rejection {
    pub const ALL: [Rejection; 8] = [
        Rejection::Stale,
        Rejection::UnknownMiner,
        Rejection::IntegrityNotListed,
        Rejection::BadQuote,
        Rejection::NotElected,
        Rejection::BadRoots,
        Rejection::Equivocation,
        Rejection::Duplicate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Rejection::Stale => "stale",
            Rejection::UnknownMiner => "unknown_miner",
            Rejection::IntegrityNotListed => "integrity_not_listed",
            Rejection::BadQuote => "bad_quote",
            Rejection::NotElected => "not_elected",
            Rejection::BadRoots => "bad_roots",
            Rejection::Equivocation => "equivocation",
            Rejection::Duplicate => "duplicate",
        }
    }
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElectionError {
    EmptyMinerList,
}

pub fn elect_round_robin(height: u64, miners: &MinerList) -> Result<usize, ElectionError> {
    if miners.is_empty() {
        return Err(ElectionError::EmptyMinerList);
    }
    Ok((height % miners.len() as u64) as usize)
}

/// Self-election: the miner evaluates the VRF over the previous block hash
/// with its own key and is eligible when the output lands on its index.
pub fn vrf_eligibility(
    prover: &mut impl VrfProver,
    prev_block_hash: &Digest,
    miner_index: usize,
    n: usize,
) -> (bool, VrfOutput) {
    let out = prover.vrf_prove(&prev_block_hash.0);
    (vrf_output_eligible(&out, miner_index, n), out)
}

pub fn vrf_output_eligible(out: &VrfOutput, miner_index: usize, n: usize) -> bool {
    digest_mod(&out.hash, n as u64) == miner_index as u64
}

/// Public-data check of a VRF election claim.
pub fn verify_vrf_eligibility(
    key: &PublicKey,
    prev_block_hash: &Digest,
    out: &VrfOutput,
    miner_index: usize,
    n: usize,
) -> bool {
    vrf_verify(key, &prev_block_hash.0, out) && vrf_output_eligible(out, miner_index, n)
}

/// Deterministic preference between two valid candidates for one height:
/// VRF-elected before fallback, then smaller VRF hash, then fewer timeouts,
/// then smaller block hash.
pub fn candidate_order(a: &Block, b: &Block) -> Ordering {
    fn key(b: &Block) -> (u8, Digest, u32, Digest) {
        let h = &b.header;
        let rank = match h.election_mode {
            ElectionMode::Vrf => 0,
            ElectionMode::RoundRobin => 1,
        };
        (rank, h.vrf_output.map(|o| o.hash).unwrap_or(Digest::ZERO), h.fallback, b.hash())
    }
    key(a).cmp(&key(b))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenesisConfig {
    pub trusted_roots: TrustedRoots,
    pub initial_miners: Vec<JoinRequest>,
    pub integrity_list: IntegrityList,
    pub balances: Vec<(Digest, u64)>,
    pub election_mode: ElectionMode,
}

impl GenesisConfig {
    pub fn genesis_block(&self) -> Block {
        let empty = merkle_root::<&[u8]>(&[]);
        Block {
            header: BlockHeader {
                height: 0,
                prev_hash: Digest::ZERO,
                tx_root: empty,
                results_root: empty,
                joins_root: joins_root(&self.initial_miners),
                state_root: WorldState::with_balances(&self.balances).state_root(),
                miner_label: Digest::ZERO,
                election_mode: self.election_mode,
                fallback: 0,
                vrf_output: None,
                quote: AttestationQuote::placeholder(),
            },
            transactions: Vec::new(),
            results: Vec::new(),
            join_requests: self.initial_miners.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JoinVerdict {
    Accepted,
    Rejected(AttestationFailure),
    Duplicate,
}

impl JoinVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            JoinVerdict::Accepted => "accepted",
            JoinVerdict::Rejected(f) => f.as_str(),
            JoinVerdict::Duplicate => "duplicate_label",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JoinOutcome {
    pub label: Digest,
    pub verdict: JoinVerdict,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GenesisError {
    NoMiners,
    InitialMiner { index: usize, verdict: JoinVerdict },
}

impl fmt::Display for GenesisError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GenesisError::NoMiners => f.write_str("genesis lists no miners"),
            GenesisError::InitialMiner { index, verdict } => {
                write!(f, "initial miner {index} rejected: {}", verdict.as_str())
            }
        }
    }
}

/// A block that passed validation together with the state it produces.
#[derive(Debug, Clone)]
pub struct PreparedBlock {
    pub block: Block,
    pub hash: Digest,
    pub post_state: WorldState,
    pub miner_index: usize,
}

#[derive(Debug)]
pub enum ProduceError {
    UnknownMiner,
    NotElected,
    WrongElectionMode,
    Tpm(TpmError),
}

impl fmt::Display for ProduceError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProduceError::UnknownMiner => f.write_str("producer is not in the miner list"),
            ProduceError::NotElected => f.write_str("producer is not elected for this height"),
            ProduceError::WrongElectionMode => f.write_str("chain does not use VRF election"),
            ProduceError::Tpm(e) => write!(f, "tpm: {e}"),
        }
    }
}

/// How the producer claims the height.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Election {
    RoundRobin { fallback: u32 },
    Vrf,
}

#[derive(Debug, Clone)]
pub struct ChainState {
    blocks: Vec<Block>,
    hashes: Vec<Digest>,
    miner_list: MinerList,
    integrity_list: IntegrityList,
    trusted_roots: TrustedRoots,
    world_state: WorldState,
    election_mode: ElectionMode,
}

impl ChainState {
    pub fn from_genesis(config: &GenesisConfig) -> Result<Self, GenesisError> {
        if config.initial_miners.is_empty() {
            return Err(GenesisError::NoMiners);
        }
        let block = config.genesis_block();
        let mut state = ChainState {
            hashes: alloc::vec![block.hash()],
            blocks: alloc::vec![block],
            miner_list: MinerList::new(),
            integrity_list: config.integrity_list.clone(),
            trusted_roots: config.trusted_roots.clone(),
            world_state: WorldState::with_balances(&config.balances),
            election_mode: config.election_mode,
        };
        for (index, join) in config.initial_miners.iter().enumerate() {
            let outcome = state.process_join_request(join, 0);
            if outcome.verdict != JoinVerdict::Accepted {
                return Err(GenesisError::InitialMiner { index, verdict: outcome.verdict });
            }
        }
        Ok(state)
    }

    pub fn height(&self) -> u64 {
        self.blocks.len() as u64 - 1
    }

    pub fn tip_hash(&self) -> Digest {
        *self.hashes.last().expect("chain always holds genesis")
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block_hash(&self, height: u64) -> Option<Digest> {
        self.hashes.get(height as usize).copied()
    }

    pub fn miner_list(&self) -> &MinerList {
        &self.miner_list
    }

    pub fn integrity_list(&self) -> &IntegrityList {
        &self.integrity_list
    }

    /// Operators may narrow the list locally, e.g. after a component is
    /// found vulnerable.
    pub fn integrity_list_mut(&mut self) -> &mut IntegrityList {
        &mut self.integrity_list
    }

    pub fn trusted_roots(&self) -> &TrustedRoots {
        &self.trusted_roots
    }

    pub fn world_state(&self) -> &WorldState {
        &self.world_state
    }

    pub fn state_root(&self) -> Digest {
        self.blocks.last().expect("chain always holds genesis").header.state_root
    }

    pub fn election_mode(&self) -> ElectionMode {
        self.election_mode
    }

    /// Verifies a join and enrolls the miner. Rejections leave the list
    /// untouched; re-submitting an enrolled label is a no-op.
    pub fn process_join_request(&mut self, req: &JoinRequest, inclusion_height: u64) -> JoinOutcome {
        let label = req.label();
        let expected = JoinRequest::binding(&req.report.identity_certificate, req.requested_at);
        let verdict = match verify_report(&req.report, &self.trusted_roots, &self.integrity_list, &expected) {
            AttestationVerdict::Rejected(f) => JoinVerdict::Rejected(f),
            AttestationVerdict::Accepted => {
                let record = MinerRecord {
                    label,
                    certificate: req.report.identity_certificate.clone(),
                    join_height: inclusion_height,
                };
                if self.miner_list.insert(record) {
                    JoinVerdict::Accepted
                } else {
                    JoinVerdict::Duplicate
                }
            }
        };
        JoinOutcome { label, verdict }
    }

    pub fn validate_block(&self, block: &Block) -> Result<PreparedBlock, Rejection> {
        self.check(block, None, &mut ExecutionCounter::default())
    }

    /// Validation that also re-runs every transaction and requires the
    /// block's results to match. Used by the everyone-executes baseline.
    pub fn validate_block_reexecuting(
        &self,
        block: &Block,
        ctx: &mut ExecutionContext<'_>,
        counter: &mut ExecutionCounter,
    ) -> Result<PreparedBlock, Rejection> {
        self.check(block, Some(ctx), counter)
    }

    fn check(
        &self,
        block: &Block,
        reexecute: Option<&mut ExecutionContext<'_>>,
        counter: &mut ExecutionCounter,
    ) -> Result<PreparedBlock, Rejection> {
        let h = &block.header;
        let hash = block.hash();
        if h.height <= self.height() {
            return Err(if self.hashes[h.height as usize] == hash {
                Rejection::Duplicate
            } else {
                Rejection::Equivocation
            });
        }
        if h.height != self.height() + 1 || h.prev_hash != self.tip_hash() {
            return Err(Rejection::Stale);
        }
        let index = self.miner_list.index_of(&h.miner_label).ok_or(Rejection::UnknownMiner)?;
        let record = &self.miner_list.records()[index];

        if h.quote.pcr_selection != CONSENSUS_PCRS || !self.integrity_list.contains(&h.quote.pcr_composite) {
            return Err(Rejection::IntegrityNotListed);
        }
        let key = record.certificate.subject_key().map_err(|_| Rejection::BadQuote)?;
        if !tpm::verify_quote(&key, &h.quote) || h.quote.qualifying_data != h.binding_hash().0 {
            return Err(Rejection::BadQuote);
        }

        let n = self.miner_list.len();
        let elected = match (h.election_mode, &h.vrf_output) {
            (ElectionMode::RoundRobin, None) => (h.height + h.fallback as u64) % n as u64 == index as u64,
            (ElectionMode::Vrf, Some(out)) => {
                self.election_mode == ElectionMode::Vrf
                    && h.fallback == 0
                    && verify_vrf_eligibility(&key, &h.prev_hash, out, index, n)
            }
            _ => false,
        };
        if !elected {
            return Err(Rejection::NotElected);
        }

        if block.results.len() != block.transactions.len()
            || tx_root(&block.transactions) != h.tx_root
            || results_root(&block.results) != h.results_root
            || joins_root(&block.join_requests) != h.joins_root
        {
            return Err(Rejection::BadRoots);
        }
        if let Some(ctx) = reexecute {
            let ex = execute_transactions(&self.world_state, &block.transactions, ctx, counter);
            if ex.results != block.results {
                return Err(Rejection::BadRoots);
            }
        }
        let (post_state, root) =
            apply_results(&self.world_state, &block.transactions, &block.results).map_err(|_| Rejection::BadRoots)?;
        if root != h.state_root {
            return Err(Rejection::BadRoots);
        }
        Ok(PreparedBlock { block: block.clone(), hash, post_state, miner_index: index })
    }

    /// Appends a block prepared against the current tip and processes its
    /// joins. Panics if `prepared` does not extend the tip.
    pub fn commit(&mut self, prepared: PreparedBlock) -> Vec<JoinOutcome> {
        assert_eq!(prepared.block.header.prev_hash, self.tip_hash(), "prepared block does not extend the tip");
        let height = prepared.block.header.height;
        self.world_state = prepared.post_state;
        let outcomes = prepared.block.join_requests.iter().map(|j| self.process_join_request(j, height)).collect();
        self.hashes.push(prepared.hash);
        self.blocks.push(prepared.block);
        outcomes
    }

    pub fn append(&mut self, block: &Block) -> Result<Vec<JoinOutcome>, Rejection> {
        let prepared = self.validate_block(block)?;
        Ok(self.commit(prepared))
    }

    /// Builds, executes and quotes the next block. Randomness for contracts
    /// comes from the producer's own TPM.
    pub fn produce_block(
        &self,
        tpm: &mut TpmState,
        election: Election,
        transactions: Vec<Transaction>,
        join_requests: Vec<JoinRequest>,
        offchain: &mut dyn OffchainClient,
        counter: &mut ExecutionCounter,
    ) -> Result<PreparedBlock, ProduceError> {
        let label = tpm.identity_label();
        let index = self.miner_list.index_of(&label).ok_or(ProduceError::UnknownMiner)?;
        let n = self.miner_list.len();
        let height = self.height() + 1;
        let prev_hash = self.tip_hash();
        let (election_mode, fallback, vrf_output) = match election {
            Election::RoundRobin { fallback } => {
                if (height + fallback as u64) % n as u64 != index as u64 {
                    return Err(ProduceError::NotElected);
                }
                (ElectionMode::RoundRobin, fallback, None)
            }
            Election::Vrf => {
                if self.election_mode != ElectionMode::Vrf {
                    return Err(ProduceError::WrongElectionMode);
                }
                let (eligible, out) = vrf_eligibility(tpm, &prev_hash, index, n);
                if !eligible {
                    return Err(ProduceError::NotElected);
                }
                (ElectionMode::Vrf, 0, Some(out))
            }
        };
        let ex = {
            let mut ctx = ExecutionContext { randomness: tpm, offchain };
            execute_transactions(&self.world_state, &transactions, &mut ctx, counter)
        };
        let mut header = BlockHeader {
            height,
            prev_hash,
            tx_root: tx_root(&transactions),
            results_root: results_root(&ex.results),
            joins_root: joins_root(&join_requests),
            state_root: ex.state_root,
            miner_label: label,
            election_mode,
            fallback,
            vrf_output,
            quote: AttestationQuote::placeholder(),
        };
        header.quote = tpm.quote(&CONSENSUS_PCRS, &header.binding_hash().0).map_err(ProduceError::Tpm)?;
        let block = Block { header, transactions, results: ex.results, join_requests };
        Ok(PreparedBlock { hash: block.hash(), block, post_state: ex.post_state, miner_index: index })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RebuildError {
    Empty,
    GenesisMismatch,
    Genesis(GenesisError),
    InvalidBlock { height: u64, rejection: Rejection },
}

impl fmt::Display for RebuildError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RebuildError::Empty => f.write_str("no blocks"),
            RebuildError::GenesisMismatch => f.write_str("block 0 does not match the genesis configuration"),
            RebuildError::Genesis(e) => write!(f, "genesis: {e}"),
            RebuildError::InvalidBlock { height, rejection } => write!(f, "block {height} rejected: {rejection}"),
        }
    }
}

/// Result of a cold-start replay.
#[derive(Debug, Clone)]
pub struct Rebuilt {
    pub chain: ChainState,
    /// Transactions executed during the replay; results are only applied.
    pub executions: ExecutionCounter,
}

/// Replays a stored chain from genesis, validating each block and applying
/// its results without executing any transaction.
pub fn rebuild_from_genesis(blocks: &[Block], genesis: &GenesisConfig) -> Result<Rebuilt, RebuildError> {
    let first = blocks.first().ok_or(RebuildError::Empty)?;
    if *first != genesis.genesis_block() {
        return Err(RebuildError::GenesisMismatch);
    }
    let mut chain = ChainState::from_genesis(genesis).map_err(RebuildError::Genesis)?;
    let mut executions = ExecutionCounter::default();
    for (position, block) in blocks.iter().enumerate().skip(1) {
        // report the position in the stream; a corrupted header may claim any height
        let prepared = chain
            .check(block, None, &mut executions)
            .map_err(|rejection| RebuildError::InvalidBlock { height: position as u64, rejection })?;
        chain.commit(prepared);
    }
    Ok(Rebuilt { chain, executions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attestation::AttestationFailure;
    use crate::crypto::{CertificateAuthority, KeyPair};
    use crate::execution::{transfer, FixtureOracle};
    use crate::fixtures::{self, GenesisSpec};
    use alloc::vec;

    #[test]
    fn merkle_golden() {
        assert_eq!(
            merkle_root::<&[u8]>(&[]).to_hex(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_eq!(merkle_root(&[b"a"]), crypto::hash(b"a"));
        assert_eq!(
            merkle_root(&[b"a", b"b", b"c", b"d"]).to_hex(),
            "14ede5e8e97ad9372327728f5099b95604a39593cac3bd38a343ad76205213e7"
        );
        assert_eq!(
            merkle_root(&[b"a", b"b", b"c"]).to_hex(),
            "d31a37ef6ac14a2db1470c4316beb5592e6afd4465022339adafda76a18ffabe"
        );
    }

    #[test]
    fn digest_mod_matches_small_values() {
        let mut d = Digest::ZERO;
        d.0[31] = 12;
        assert_eq!(digest_mod(&d, 5), 2);
        d.0[30] = 1; // 268
        assert_eq!(digest_mod(&d, 10), 8);
        assert_eq!(digest_mod(&Digest([0xff; 32]), 1), 0);
        // 2^256 - 1 mod 10 = 5
        assert_eq!(digest_mod(&Digest([0xff; 32]), 10), 5);
    }

    fn list_of(n: usize) -> MinerList {
        let mut l = MinerList::new();
        for i in 0..n {
            let ca = CertificateAuthority::from_seed(&[1; 32]);
            let k = KeyPair::from_seed(&[i as u8 + 10; 32]);
            let cert = ca.issue(&k.public);
            assert!(l.insert(MinerRecord { label: cert.subject_label, certificate: cert, join_height: 0 }));
        }
        l
    }

    #[test]
    fn round_robin_formula() {
        assert_eq!(elect_round_robin(12, &list_of(5)), Ok(2));
        assert_eq!(elect_round_robin(0, &list_of(3)), Ok(0));
        assert_eq!(elect_round_robin(3, &MinerList::new()), Err(ElectionError::EmptyMinerList));
        for n in [1usize, 2, 3, 5, 10] {
            let l = list_of(n);
            for h in 0..10 * n as u64 {
                assert_eq!(elect_round_robin(h, &l).unwrap(), h as usize % n);
            }
        }
    }

    #[test]
    fn miner_list_sorted_and_idempotent() {
        let l = list_of(6);
        assert!(l.records().windows(2).all(|w| w[0].label < w[1].label));
        let mut l2 = l.clone();
        assert!(!l2.insert(l.records()[3].clone()));
        assert_eq!(l2, l);
    }

    fn spec(miners: usize, mode: ElectionMode) -> GenesisSpec {
        GenesisSpec { seed: 7, miners, accounts: 4, initial_balance: 1_000, election_mode: mode }
    }

    struct Net {
        chain: ChainState,
        tpms: Vec<TpmState>,
        fx: fixtures::Fixtures,
    }

    fn net(miners: usize, mode: ElectionMode) -> Net {
        let fx = fixtures::generate(&spec(miners, mode));
        let chain = ChainState::from_genesis(&fx.genesis).unwrap();
        let tpms = fx.miners.iter().map(|m| m.boot()).collect();
        Net { chain, tpms, fx }
    }

    impl Net {
        fn tpm_for_index(&mut self, index: usize) -> &mut TpmState {
            let label = self.chain.miner_list().records()[index].label;
            self.tpms.iter_mut().find(|t| t.identity_label() == label).unwrap()
        }

        fn produce(&mut self, txs: Vec<Transaction>) -> PreparedBlock {
            let h = self.chain.height() + 1;
            let idx = elect_round_robin(h, self.chain.miner_list()).unwrap();
            let chain = self.chain.clone();
            chain
                .produce_block(
                    self.tpm_for_index(idx),
                    Election::RoundRobin { fallback: 0 },
                    txs,
                    vec![],
                    &mut FixtureOracle::new(),
                    &mut ExecutionCounter::default(),
                )
                .unwrap()
        }
    }

    #[test]
    fn produced_block_validates_and_round_trips() {
        let mut n = net(3, ElectionMode::RoundRobin);
        let p = n.produce(vec![]);
        assert_eq!(p.block.header.tx_root, crypto::hash(b""));
        assert_eq!(p.block.header.results_root, crypto::hash(b""));
        let bytes = p.block.to_bytes();
        assert_eq!(Block::from_bytes(&bytes).unwrap(), p.block);
        assert_eq!(Block::from_bytes(&bytes).unwrap().to_bytes(), bytes);
        let fresh = ChainState::from_genesis(&n.fx.genesis).unwrap();
        fresh.validate_block(&p.block).unwrap();
        n.chain.append(&p.block).unwrap();
        assert_eq!(n.chain.height(), 1);
        // finality: the same block again is a duplicate, a different one equivocation
        assert_eq!(n.chain.validate_block(&p.block).unwrap_err(), Rejection::Duplicate);
        let mut other = p.block.clone();
        other.header.fallback = 9;
        assert_eq!(n.chain.validate_block(&other).unwrap_err(), Rejection::Equivocation);
    }

    #[test]
    fn verdict_taxonomy() {
        let mut n = net(3, ElectionMode::RoundRobin);
        let good = n.produce(vec![]).block;
        let chain = n.chain.clone();

        let mut stale = good.clone();
        stale.header.prev_hash = Digest([1; 32]);
        assert_eq!(chain.validate_block(&stale).unwrap_err(), Rejection::Stale);
        let mut future = good.clone();
        future.header.height = 5;
        assert_eq!(chain.validate_block(&future).unwrap_err(), Rejection::Stale);

        let mut unknown = good.clone();
        unknown.header.miner_label = Digest([2; 32]);
        assert_eq!(chain.validate_block(&unknown).unwrap_err(), Rejection::UnknownMiner);

        let mut delisted = chain.clone();
        delisted.integrity_list_mut().remove(&fixtures::golden_manifest().expected_composite());
        assert_eq!(delisted.validate_block(&good).unwrap_err(), Rejection::IntegrityNotListed);

        let mut tampered_body = good.clone();
        tampered_body.header.state_root = Digest([3; 32]);
        assert_eq!(chain.validate_block(&tampered_body).unwrap_err(), Rejection::BadQuote);

        let mut bad_sig = good.clone();
        bad_sig.header.quote.signature.0[0] ^= 1;
        assert_eq!(chain.validate_block(&bad_sig).unwrap_err(), Rejection::BadQuote);

        // a correctly quoted block from a non-elected miner
        let h = chain.height() + 1;
        let wrong = (elect_round_robin(h, chain.miner_list()).unwrap() + 1) % 3;
        let err = chain
            .produce_block(
                n.tpm_for_index(wrong),
                Election::RoundRobin { fallback: 0 },
                vec![],
                vec![],
                &mut FixtureOracle::new(),
                &mut ExecutionCounter::default(),
            )
            .unwrap_err();
        assert!(matches!(err, ProduceError::NotElected));
        let forged = chain
            .produce_block(
                n.tpm_for_index(wrong),
                Election::RoundRobin { fallback: 1 },
                vec![],
                vec![],
                &mut FixtureOracle::new(),
                &mut ExecutionCounter::default(),
            )
            .unwrap()
            .block;
        let mut relabeled = forged.clone();
        relabeled.header.fallback = 0;
        let q = n.tpm_for_index(wrong).quote(&CONSENSUS_PCRS, &relabeled.header.binding_hash().0).unwrap();
        relabeled.header.quote = q;
        assert_eq!(chain.validate_block(&relabeled).unwrap_err(), Rejection::NotElected);
        // the fallback claim itself is legitimate
        chain.validate_block(&forged).unwrap();
    }

    #[test]
    fn bad_roots_detected() {
        let mut n = net(2, ElectionMode::RoundRobin);
        let sender = &n.fx.accounts[0];
        let tx = transfer(sender, 0, n.fx.accounts[1].public.label(), 5);
        let good = n.produce(vec![tx]).block;
        let idx = elect_round_robin(1, n.chain.miner_list()).unwrap();
        let requote = |n: &mut Net, mut b: Block| {
            b.header.quote = n.tpm_for_index(idx).quote(&CONSENSUS_PCRS, &b.header.binding_hash().0).unwrap();
            b
        };
        let mut no_results = good.clone();
        no_results.results.clear();
        no_results.header.results_root = results_root(&[]);
        let no_results = requote(&mut n, no_results);
        assert_eq!(n.chain.validate_block(&no_results).unwrap_err(), Rejection::BadRoots);

        let mut wrong_state = good.clone();
        wrong_state.header.state_root = Digest([9; 32]);
        let wrong_state = requote(&mut n, wrong_state);
        assert_eq!(n.chain.validate_block(&wrong_state).unwrap_err(), Rejection::BadRoots);

        let mut body = good.clone();
        body.transactions[0].nonce = 1;
        assert_eq!(n.chain.validate_block(&body).unwrap_err(), Rejection::BadRoots);
    }

    #[test]
    fn reexecution_catches_fabricated_results() {
        let mut n = net(2, ElectionMode::RoundRobin);
        let a = n.fx.accounts[0].clone();
        let b = n.fx.accounts[1].public.label();
        let honest = n.produce(vec![transfer(&a, 0, b, 5)]).block;
        let mut rng = crate::execution::NoRandomness;
        let mut oracle = FixtureOracle::new();
        let mut ctx = ExecutionContext { randomness: &mut rng, offchain: &mut oracle };
        let mut counter = ExecutionCounter::default();
        n.chain.validate_block_reexecuting(&honest, &mut ctx, &mut counter).unwrap();
        assert_eq!(counter.0, 1);

        // a miner that credits itself: apply-only validation trusts it
        let mut fabricated = honest.clone();
        fabricated.results[0].state_delta[1].1 = crate::execution::Account { balance: 500, nonce: 0 }.to_value();
        let (_, root) = apply_results(n.chain.world_state(), &fabricated.transactions, &fabricated.results).unwrap();
        fabricated.header.results_root = results_root(&fabricated.results);
        fabricated.header.state_root = root;
        let idx = elect_round_robin(1, n.chain.miner_list()).unwrap();
        fabricated.header.quote =
            n.tpm_for_index(idx).quote(&CONSENSUS_PCRS, &fabricated.header.binding_hash().0).unwrap();
        n.chain.validate_block(&fabricated).unwrap();
        assert_eq!(
            n.chain.validate_block_reexecuting(&fabricated, &mut ctx, &mut counter).unwrap_err(),
            Rejection::BadRoots
        );
    }

    #[test]
    fn vrf_blocks_verify_from_public_data() {
        let mut n = net(4, ElectionMode::Vrf);
        for _ in 0..12 {
            let h = n.chain.height();
            let prev = n.chain.tip_hash();
            let count = n.chain.miner_list().len();
            let mut winners = vec![];
            for i in 0..count {
                let (ok, out) = vrf_eligibility(n.tpm_for_index(i), &prev, i, count);
                let key = n.chain.miner_list().records()[i].certificate.subject_key().unwrap();
                assert!(verify_vrf_eligibility(&key, &prev, &out, digest_mod(&out.hash, count as u64) as usize, count));
                if ok {
                    winners.push(i);
                }
            }
            let chain = n.chain.clone();
            let mut candidates = vec![];
            for &i in &winners {
                candidates.push(
                    chain
                        .produce_block(
                            n.tpm_for_index(i),
                            Election::Vrf,
                            vec![],
                            vec![],
                            &mut FixtureOracle::new(),
                            &mut ExecutionCounter::default(),
                        )
                        .unwrap()
                        .block,
                );
            }
            if candidates.is_empty() {
                let idx = elect_round_robin(h + 1, chain.miner_list()).unwrap();
                candidates.push(
                    chain
                        .produce_block(
                            n.tpm_for_index(idx),
                            Election::RoundRobin { fallback: 0 },
                            vec![],
                            vec![],
                            &mut FixtureOracle::new(),
                            &mut ExecutionCounter::default(),
                        )
                        .unwrap()
                        .block,
                );
            }
            for c in &candidates {
                chain.validate_block(c).unwrap();
            }
            candidates.sort_by(candidate_order);
            n.chain.append(&candidates[0]).unwrap();
        }
        // a non-eligible VRF claim is refused
        let prev = n.chain.tip_hash();
        let count = n.chain.miner_list().len();
        let loser = (0..count).find(|&i| !vrf_eligibility(n.tpm_for_index(i), &prev, i, count).0);
        if let Some(i) = loser {
            let chain = n.chain.clone();
            let err = chain
                .produce_block(
                    n.tpm_for_index(i),
                    Election::Vrf,
                    vec![],
                    vec![],
                    &mut FixtureOracle::new(),
                    &mut ExecutionCounter::default(),
                )
                .unwrap_err();
            assert!(matches!(err, ProduceError::NotElected));
        }
    }

    #[test]
    fn joins_take_effect_next_height() {
        let mut n = net(3, ElectionMode::RoundRobin);
        let (tpm, join) = fixtures::enroll_miner(&n.fx, 3, &fixtures::golden_manifest(), 1);
        n.tpms.push(tpm);
        let h = n.chain.height() + 1;
        let idx = elect_round_robin(h, n.chain.miner_list()).unwrap();
        let chain = n.chain.clone();
        let p = chain
            .produce_block(
                n.tpm_for_index(idx),
                Election::RoundRobin { fallback: 0 },
                vec![],
                vec![join.clone()],
                &mut FixtureOracle::new(),
                &mut ExecutionCounter::default(),
            )
            .unwrap();
        let outcomes = n.chain.commit(p);
        assert_eq!(outcomes, vec![JoinOutcome { label: join.label(), verdict: JoinVerdict::Accepted }]);
        assert_eq!(n.chain.miner_list().len(), 4);
        assert!(n.chain.miner_list().records().windows(2).all(|w| w[0].label < w[1].label));
        let rec = &n.chain.miner_list().records()[n.chain.miner_list().index_of(&join.label()).unwrap()];
        assert_eq!(rec.join_height, 1);
        // re-submitting is idempotent
        assert_eq!(n.chain.process_join_request(&join, 2).verdict, JoinVerdict::Duplicate);
        assert_eq!(n.chain.miner_list().len(), 4);
    }

    #[test]
    fn sybil_joins_never_enter_the_list() {
        let n = net(3, ElectionMode::RoundRobin);
        let mut chain = n.chain.clone();
        let before = chain.miner_list().clone();
        let golden = fixtures::golden_manifest();

        // certificate from a CA nobody trusts
        let rogue = CertificateAuthority::from_seed(&[0xee; 32]);
        let mut tpm = TpmState::create(&[0x51; 32]);
        crate::attestation::simulate_measured_boot(&mut tpm, &golden).unwrap();
        let forged = JoinRequest::create(&tpm, &rogue.issue(&tpm.attestation_public_key()), 1).unwrap();
        assert_eq!(
            chain.process_join_request(&forged, 1).verdict,
            JoinVerdict::Rejected(AttestationFailure::BadCertificate)
        );

        // self-signed: issuer id set to the trusted CA, signature from the subject
        let own = KeyPair::from_seed(&[0x52; 32]);
        let mut self_signed = n.fx.ca.issue(&tpm.attestation_public_key());
        self_signed.issuer_signature = crypto::sign(
            &own.secret,
            &Certificate::signed_bytes(
                &self_signed.subject_public_key,
                &self_signed.subject_label,
                &self_signed.issuer_id,
            ),
        );
        let req = JoinRequest::create(&tpm, &self_signed, 1).unwrap();
        assert_eq!(
            chain.process_join_request(&req, 1).verdict,
            JoinVerdict::Rejected(AttestationFailure::BadCertificate)
        );

        // stolen quote: a genuine miner's report re-wrapped with the attacker's certificate
        let genuine = &n.fx.genesis.initial_miners[0];
        let attacker_cert = n.fx.ca.issue(&KeyPair::from_seed(&[0x53; 32]).public);
        let mut stolen = genuine.clone();
        stolen.report.identity_certificate = attacker_cert;
        assert_eq!(
            chain.process_join_request(&stolen, 1).verdict,
            JoinVerdict::Rejected(AttestationFailure::BadSignature)
        );

        // replayed report with a new request tag
        let mut replayed = genuine.clone();
        replayed.requested_at = 99;
        assert_eq!(
            chain.process_join_request(&replayed, 1).verdict,
            JoinVerdict::Rejected(AttestationFailure::BadQualifyingData)
        );

        // verbatim replay of an enrolled miner's join
        assert_eq!(chain.process_join_request(genuine, 1).verdict, JoinVerdict::Duplicate);

        // a CA-certified miner running modified software
        let (_, tampered) = fixtures::enroll_miner(&n.fx, 5, &fixtures::tampered_manifest(), 1);
        assert_eq!(
            chain.process_join_request(&tampered, 1).verdict,
            JoinVerdict::Rejected(AttestationFailure::IntegrityNotListed)
        );

        assert_eq!(chain.miner_list(), &before);
    }

    fn grow(n: &mut Net, blocks: usize) {
        let accounts = n.fx.accounts.clone();
        for i in 0..blocks {
            let a = &accounts[i % accounts.len()];
            let nonce = n.chain.world_state().account(&a.public.label()).nonce;
            let to = accounts[(i + 1) % accounts.len()].public.label();
            let p = n.produce(vec![transfer(a, nonce, to, 3)]);
            n.chain.commit(p);
        }
    }

    #[test]
    fn rebuild_matches_live_state_without_executing() {
        let mut n = net(3, ElectionMode::RoundRobin);
        grow(&mut n, 20);
        let rebuilt = rebuild_from_genesis(n.chain.blocks(), &n.fx.genesis).unwrap();
        assert_eq!(rebuilt.executions.0, 0);
        assert_eq!(rebuilt.chain.miner_list().to_bytes(), n.chain.miner_list().to_bytes());
        assert_eq!(rebuilt.chain.world_state(), n.chain.world_state());
        assert_eq!(rebuilt.chain.tip_hash(), n.chain.tip_hash());
    }

    #[test]
    fn rebuild_reports_first_bad_block() {
        let mut n = net(2, ElectionMode::RoundRobin);
        grow(&mut n, 12);
        let mut blocks = n.chain.blocks().to_vec();
        blocks[7].header.quote.signature.0[5] ^= 0x40;
        assert_eq!(
            rebuild_from_genesis(&blocks, &n.fx.genesis).unwrap_err(),
            RebuildError::InvalidBlock { height: 7, rejection: Rejection::BadQuote }
        );
        let mut other = n.fx.genesis.clone();
        other.balances[0].1 += 1;
        assert_eq!(rebuild_from_genesis(n.chain.blocks(), &other).unwrap_err(), RebuildError::GenesisMismatch);
        assert_eq!(rebuild_from_genesis(&[], &n.fx.genesis).unwrap_err(), RebuildError::Empty);
    }

    #[test]
    fn candidate_preference() {
        let mut n = net(2, ElectionMode::Vrf);
        let chain = n.chain.clone();
        let idx0 = elect_round_robin(1, chain.miner_list()).unwrap();
        let mk = |n: &mut Net, idx: usize, k: u32| {
            chain
                .produce_block(
                    n.tpm_for_index(idx),
                    Election::RoundRobin { fallback: k },
                    vec![],
                    vec![],
                    &mut FixtureOracle::new(),
                    &mut ExecutionCounter::default(),
                )
                .unwrap()
                .block
        };
        let a = mk(&mut n, idx0, 0);
        let b = mk(&mut n, 1 - idx0, 1);
        assert_eq!(candidate_order(&a, &b), Ordering::Less);
        assert_eq!(candidate_order(&b, &a), Ordering::Greater);
        assert_eq!(candidate_order(&a, &a), Ordering::Equal);
    }
}
