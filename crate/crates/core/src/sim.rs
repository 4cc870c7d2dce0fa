//! Deterministic discrete-event simulation of a full-mesh network of trusted
//! miners and untrusted relays.
//!
//! Every link delivers with a latency drawn uniformly from the configured
//! range. A dropped attempt is retransmitted after three times the maximum
//! latency, and the last allowed attempt always gets through, so each
//! message reaches every online peer within [`NetworkParams::max_delivery_ms`].
//! Nodes collect valid candidates for the next height for twice that bound
//! after the first one arrives and then finalize the preferred candidate,
//! which makes every honest node pick the same block.

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet, BinaryHeap};
use alloc::format;
use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::{Ordering, Reverse};
use core::fmt;

use rand_chacha::ChaCha20Rng;
use rand_core::{Rng, SeedableRng};

use crate::attestation::MeasurementManifest;
use crate::codec::{Decode, Encode};
use crate::consensus::{
    candidate_order, Block, BlockHeader, ChainState, Election, ElectionMode, GenesisConfig, JoinRequest, PreparedBlock,
    ProduceError, Rejection,
};
use crate::crypto::{self, CertificateAuthority, Digest, KeyPair};
use crate::execution::{
    self, ExecutionContext, ExecutionCounter, FaultInjector, FixtureOracle, NoRandomness, OffchainClient, Transaction,
};
use crate::fixtures::{self, GenesisSpec};
use crate::tpm::{AttestationQuote, TpmState, CONSENSUS_PCRS, TPM_GENERATED_VALUE};

/// Orphan blocks (ahead of the tip) a node buffers before dropping more.
pub const MAX_ORPHANS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkParams {
    pub latency_min_ms: u64,
    pub latency_max_ms: u64,
    pub drop_rate: f64,
    /// Delivery attempts per message and link, the last one never dropped.
    pub max_attempts: u32,
}

impl Default for NetworkParams {
    fn default() -> Self {
        NetworkParams { latency_min_ms: 5, latency_max_ms: 50, drop_rate: 0.0, max_attempts: 4 }
    }
}

impl NetworkParams {
    pub fn retransmit_after_ms(&self) -> u64 {
        3 * self.latency_max_ms
    }

    /// Worst-case time from send to delivery on one link.
    pub fn max_delivery_ms(&self) -> u64 {
        (self.max_attempts.max(1) as u64 - 1) * self.retransmit_after_ms() + self.latency_max_ms
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    TrustedMiner,
    UntrustedRelay,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::TrustedMiner => "trusted_miner",
            NodeKind::UntrustedRelay => "untrusted_relay",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum AdversaryKind {
    /// Joins with a certificate from a CA nobody trusts.
    ForgedCertJoin,
    /// Enrolled miner that reboots into a modified software stack.
    TamperedPcrMiner,
    /// Enrolled miner that pastes its enrollment quote onto new blocks.
    QuoteReplayBlock,
    /// Enrolled miner that signs several blocks for each height it wins.
    EquivocatingMiner,
    /// Relay that floods garbage bytes and forged blocks.
    SpamInvalidBlocks,
}

impl AdversaryKind {
    pub const ALL: [AdversaryKind; 5] = [
        AdversaryKind::ForgedCertJoin,
        AdversaryKind::TamperedPcrMiner,
        AdversaryKind::QuoteReplayBlock,
        AdversaryKind::EquivocatingMiner,
        AdversaryKind::SpamInvalidBlocks,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AdversaryKind::ForgedCertJoin => "forged_cert_join",
            AdversaryKind::TamperedPcrMiner => "tampered_pcr_miner",
            AdversaryKind::QuoteReplayBlock => "quote_replay_block",
            AdversaryKind::EquivocatingMiner => "equivocating_miner",
            AdversaryKind::SpamInvalidBlocks => "spam_invalid_blocks",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeSpec {
    pub kind: NodeKind,
    pub genesis_member: bool,
    pub join_at_ms: Option<u64>,
    pub offline_after_ms: Option<u64>,
    pub adversary: Option<AdversaryKind>,
}

impl NodeSpec {
    pub fn miner() -> Self {
        NodeSpec {
            kind: NodeKind::TrustedMiner,
            genesis_member: true,
            join_at_ms: None,
            offline_after_ms: None,
            adversary: None,
        }
    }

    pub fn relay() -> Self {
        NodeSpec { kind: NodeKind::UntrustedRelay, genesis_member: false, ..Self::miner() }
    }

    pub fn joiner(at_ms: u64) -> Self {
        NodeSpec { genesis_member: false, join_at_ms: Some(at_ms), ..Self::miner() }
    }

    pub fn is_honest(&self) -> bool {
        self.adversary.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workload {
    pub accounts: usize,
    pub initial_balance: u64,
    pub transfers: usize,
    pub counter_calls: usize,
    pub random_draws: usize,
    pub oracle_fetches: usize,
    /// Every `p`-th off-chain call on each miner fails.
    pub oracle_fault_period: Option<u64>,
    pub submit_at_ms: u64,
}

impl Default for Workload {
    fn default() -> Self {
        Workload {
            accounts: 16,
            initial_balance: 1_000_000,
            transfers: 0,
            counter_calls: 0,
            random_draws: 0,
            oracle_fetches: 0,
            oracle_fault_period: None,
            submit_at_ms: 0,
        }
    }
}

impl Workload {
    pub fn total(&self) -> usize {
        self.transfers + self.counter_calls + self.random_draws + self.oracle_fetches
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimParams {
    pub seed: u64,
    pub network: NetworkParams,
    pub roster: Vec<NodeSpec>,
    pub election_mode: ElectionMode,
    pub election_timeout_ms: u64,
    pub block_interval_ms: u64,
    pub target_height: u64,
    pub max_txs_per_block: usize,
    pub max_joins_per_block: usize,
    pub paranoid_validation: bool,
    pub workload: Workload,
    /// Simulated-time budget; derived from the other timings when unset.
    pub max_sim_time_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub field: &'static str,
    pub reason: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.reason)
    }
}

fn config_err(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError { field, reason: reason.into() }
}

impl SimParams {
    pub fn new(seed: u64, miners: usize, relays: usize, election_mode: ElectionMode, target_height: u64) -> Self {
        let mut roster: Vec<NodeSpec> = (0..miners).map(|_| NodeSpec::miner()).collect();
        roster.extend((0..relays).map(|_| NodeSpec::relay()));
        SimParams {
            seed,
            network: NetworkParams::default(),
            roster,
            election_mode,
            election_timeout_ms: 2000,
            block_interval_ms: 1000,
            target_height,
            max_txs_per_block: 10,
            max_joins_per_block: 4,
            paranoid_validation: false,
            workload: Workload::default(),
            max_sim_time_ms: None,
        }
    }

    /// Candidate collection window.
    pub fn window_ms(&self) -> u64 {
        2 * self.network.max_delivery_ms()
    }

    pub fn sim_time_budget_ms(&self) -> u64 {
        self.max_sim_time_ms.unwrap_or_else(|| {
            let per_height = self.block_interval_ms + self.window_ms() + 4 * self.election_timeout_ms;
            (self.target_height + 5) * per_height + self.workload.submit_at_ms
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let n = &self.network;
        if n.latency_min_ms > n.latency_max_ms {
            return Err(config_err("latency_min_ms", "exceeds latency_max_ms"));
        }
        if !(0.0..1.0).contains(&n.drop_rate) {
            return Err(config_err("drop_rate", "must lie in [0, 1)"));
        }
        if n.max_attempts == 0 {
            return Err(config_err("max_attempts", "must be at least 1"));
        }
        if self.election_timeout_ms <= self.window_ms() {
            return Err(config_err(
                "election_timeout_ms",
                format!("must exceed twice the worst-case delivery time ({} ms)", self.window_ms()),
            ));
        }
        if self.block_interval_ms == 0 {
            return Err(config_err("block_interval_ms", "must be positive"));
        }
        if self.target_height == 0 {
            return Err(config_err("target_height", "must be positive"));
        }
        if self.max_txs_per_block == 0 {
            return Err(config_err("max_txs_per_block", "must be positive"));
        }
        let members: Vec<&NodeSpec> =
            self.roster.iter().filter(|s| s.genesis_member && s.kind == NodeKind::TrustedMiner).collect();
        if members.is_empty() {
            return Err(config_err("roster", "needs at least one trusted genesis miner"));
        }
        if !members.iter().any(|s| s.is_honest()) {
            return Err(config_err("roster", "needs at least one honest genesis miner"));
        }
        for s in &self.roster {
            if s.kind == NodeKind::UntrustedRelay && (s.genesis_member || s.join_at_ms.is_some()) {
                return Err(config_err("roster", "relays cannot be miners"));
            }
            if s.genesis_member && s.join_at_ms.is_some() {
                return Err(config_err("roster", "a genesis miner cannot also join later"));
            }
            match s.adversary {
                Some(AdversaryKind::SpamInvalidBlocks) if s.kind != NodeKind::UntrustedRelay => {
                    return Err(config_err("adversary", "spam_invalid_blocks runs on a relay"));
                }
                Some(AdversaryKind::ForgedCertJoin) if s.join_at_ms.is_none() => {
                    return Err(config_err("adversary", "forged_cert_join needs join_at_ms"));
                }
                Some(
                    AdversaryKind::TamperedPcrMiner
                    | AdversaryKind::QuoteReplayBlock
                    | AdversaryKind::EquivocatingMiner,
                ) if !s.genesis_member => {
                    return Err(config_err("adversary", "enrolled-miner adversaries must be genesis members"));
                }
                _ => {}
            }
        }
        if self.workload.total() > 0 && self.workload.accounts == 0 {
            return Err(config_err("workload.accounts", "transactions need at least one account"));
        }
        Ok(())
    }
}

/// Attaches `kind` to one roster slot: the last honest genesis miner for
/// enrolled-miner behaviors, or a new node otherwise.
pub fn adversary_inject(params: &SimParams, kind: AdversaryKind) -> SimParams {
    let mut p = params.clone();
    match kind {
        AdversaryKind::ForgedCertJoin => {
            p.roster.push(NodeSpec { adversary: Some(kind), ..NodeSpec::joiner(3 * p.block_interval_ms) })
        }
        AdversaryKind::SpamInvalidBlocks => p.roster.push(NodeSpec { adversary: Some(kind), ..NodeSpec::relay() }),
        _ => {
            if let Some(slot) =
                p.roster.iter().rposition(|s| s.genesis_member && s.kind == NodeKind::TrustedMiner && s.is_honest())
            {
                p.roster[slot].adversary = Some(kind);
            }
        }
    }
    p
}

/// Input to [`Node::step`].
#[derive(Debug, Clone)]
pub enum Message {
    SubmitTransaction(Rc<Vec<u8>>),
    GossipBlock(Rc<Vec<u8>>),
    SubmitJoin(Rc<Vec<u8>>),
    /// Election timer: `k` counts timeouts already elapsed for `height`.
    TimeoutFire {
        height: u64,
        k: u32,
    },
    WindowClose {
        height: u64,
    },
    /// Local: a scheduled miner starts enrolling.
    JoinNow,
    /// Local: the spam adversary's tick.
    Spam,
    /// Local: broadcast a block prepared earlier.
    Emit(Rc<Vec<u8>>),
}

impl Message {
    fn code(&self) -> u8 {
        match self {
            Message::SubmitTransaction(_) => 0,
            Message::GossipBlock(_) => 1,
            Message::SubmitJoin(_) => 2,
            Message::TimeoutFire { .. } => 3,
            Message::WindowClose { .. } => 4,
            Message::JoinNow => 5,
            Message::Spam => 6,
            Message::Emit(_) => 7,
        }
    }

    fn wire_len(&self) -> usize {
        match self {
            Message::SubmitTransaction(b) | Message::GossipBlock(b) | Message::SubmitJoin(b) | Message::Emit(b) => {
                b.len()
            }
            _ => 0,
        }
    }
}

/// Output of [`Node::step`].
#[derive(Debug, Clone)]
pub enum Action {
    /// Send to every other node.
    Broadcast(Message),
    /// Deliver to this node after `delay_ms`.
    Schedule { delay_ms: u64, message: Message },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NodeMetrics {
    pub executions: u64,
    pub blocks_produced: u64,
    pub blocks_accepted: u64,
    pub rejected: BTreeMap<Rejection, u64>,
    /// Valid candidates that lost the preference order to another miner.
    pub superseded: u64,
    /// Extra conflicting blocks this node signed.
    pub equivocations_sent: u64,
    pub malformed: u64,
    pub orphans_dropped: u64,
    pub offchain_requests: u64,
    pub join_verdicts: BTreeMap<&'static str, u64>,
}

impl NodeMetrics {
    pub fn rejections(&self, r: Rejection) -> u64 {
        self.rejected.get(&r).copied().unwrap_or(0)
    }

    pub fn total_rejections(&self) -> u64 {
        self.rejected.values().sum()
    }
}

#[derive(Debug, Clone)]
pub struct NodeConfig {
    pub block_interval_ms: u64,
    pub election_timeout_ms: u64,
    pub window_ms: u64,
    pub late_emit_ms: u64,
    pub target_height: u64,
    pub max_txs_per_block: usize,
    pub max_joins_per_block: usize,
    pub paranoid_validation: bool,
}

struct PooledTx {
    hash: Digest,
    tx: Transaction,
}

/// One participant's state machine.
pub struct Node {
    id: usize,
    spec: NodeSpec,
    cfg: NodeConfig,
    chain: ChainState,
    tpm: Option<TpmState>,
    certificate: Option<crypto::Certificate>,
    offchain: Box<dyn OffchainClient>,
    seen: BTreeSet<Digest>,
    pool: Vec<PooledTx>,
    joins: Vec<(Digest, JoinRequest)>,
    candidates: Vec<PreparedBlock>,
    orphans: BTreeMap<u64, Vec<Block>>,
    orphan_count: usize,
    replay_quote: Option<AttestationQuote>,
    forger: Option<KeyPair>,
    spam_counter: u64,
    executions: ExecutionCounter,
    metrics: NodeMetrics,
}

impl Node {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn spec(&self) -> &NodeSpec {
        &self.spec
    }

    pub fn chain(&self) -> &ChainState {
        &self.chain
    }

    pub fn metrics(&self) -> NodeMetrics {
        let mut m = self.metrics.clone();
        m.executions = self.executions.0;
        m.offchain_requests = self.offchain.calls();
        m
    }

    pub fn online(&self, now: u64) -> bool {
        self.spec.offline_after_ms.is_none_or(|t| now < t)
    }

    fn is_miner(&self) -> bool {
        self.tpm.is_some()
    }

    /// Actions to run at time zero.
    pub fn start(&mut self) -> Vec<Action> {
        let mut out = Vec::new();
        if self.is_miner() {
            out.push(Action::Schedule {
                delay_ms: self.cfg.block_interval_ms,
                message: Message::TimeoutFire { height: 1, k: 0 },
            });
        }
        if let Some(at) = self.spec.join_at_ms {
            out.push(Action::Schedule { delay_ms: at, message: Message::JoinNow });
        }
        if self.spec.adversary == Some(AdversaryKind::SpamInvalidBlocks) {
            out.push(Action::Schedule { delay_ms: self.cfg.block_interval_ms, message: Message::Spam });
        }
        out
    }

    /// Processes one message. The result depends only on the node state,
    /// the message and `now`.
    pub fn step(&mut self, msg: &Message, now: u64) -> Vec<Action> {
        let mut out = Vec::new();
        match msg {
            Message::SubmitTransaction(bytes) => self.on_transaction(bytes),
            Message::SubmitJoin(bytes) => self.on_join(bytes),
            Message::GossipBlock(bytes) => self.on_block_bytes(bytes, &mut out),
            Message::TimeoutFire { height, k } => self.on_timeout(*height, *k, &mut out),
            Message::WindowClose { height } => self.on_window_close(*height, &mut out),
            Message::JoinNow => self.on_join_now(now, &mut out),
            Message::Spam => self.on_spam(&mut out),
            Message::Emit(bytes) => out.push(Action::Broadcast(Message::GossipBlock(bytes.clone()))),
        }
        out
    }

    fn on_transaction(&mut self, bytes: &Rc<Vec<u8>>) {
        let hash = crypto::hash(bytes);
        if !self.seen.insert(hash) {
            return;
        }
        let Ok(tx) = Transaction::from_bytes(bytes) else {
            self.metrics.malformed += 1;
            return;
        };
        if self.is_miner() {
            self.pool.push(PooledTx { hash, tx });
        }
    }

    fn on_join(&mut self, bytes: &Rc<Vec<u8>>) {
        let hash = crypto::hash(bytes);
        if !self.seen.insert(hash) {
            return;
        }
        let Ok(join) = JoinRequest::from_bytes(bytes) else {
            self.metrics.malformed += 1;
            return;
        };
        if self.is_miner() && !self.chain.miner_list().contains(&join.label()) {
            self.joins.push((hash, join));
        }
    }

    fn on_block_bytes(&mut self, bytes: &Rc<Vec<u8>>, out: &mut Vec<Action>) {
        if !self.seen.insert(crypto::hash(bytes)) {
            return;
        }
        match Block::from_bytes(bytes) {
            Ok(block) => self.on_block(block, Some(bytes), out),
            Err(_) => self.metrics.malformed += 1,
        }
    }

    fn on_block(&mut self, block: Block, bytes: Option<&Rc<Vec<u8>>>, out: &mut Vec<Action>) {
        let height = block.header.height;
        if height > self.chain.height() + 1 {
            if self.orphan_count < MAX_ORPHANS {
                self.orphans.entry(height).or_default().push(block);
                self.orphan_count += 1;
                if let Some(b) = bytes {
                    out.push(Action::Broadcast(Message::GossipBlock(b.clone())));
                }
            } else {
                self.metrics.orphans_dropped += 1;
            }
            return;
        }
        let verdict = if self.cfg.paranoid_validation {
            let mut rng = NoRandomness;
            let mut ctx = ExecutionContext { randomness: &mut rng, offchain: &mut *self.offchain };
            self.chain.validate_block_reexecuting(&block, &mut ctx, &mut self.executions)
        } else {
            self.chain.validate_block(&block)
        };
        match verdict {
            Err(r) => *self.metrics.rejected.entry(r).or_default() += 1,
            Ok(prepared) => {
                if let Some(b) = bytes {
                    out.push(Action::Broadcast(Message::GossipBlock(b.clone())));
                }
                self.add_candidate(prepared, out);
            }
        }
    }

    fn add_candidate(&mut self, prepared: PreparedBlock, out: &mut Vec<Action>) {
        if self.candidates.is_empty() {
            out.push(Action::Schedule {
                delay_ms: self.cfg.window_ms,
                message: Message::WindowClose { height: prepared.block.header.height },
            });
        }
        self.candidates.push(prepared);
    }

    fn on_window_close(&mut self, height: u64, out: &mut Vec<Action>) {
        if height != self.chain.height() + 1 || self.candidates.is_empty() {
            return;
        }
        let mut candidates = core::mem::take(&mut self.candidates);
        candidates.sort_by(|a, b| candidate_order(&a.block, &b.block));
        let winner = candidates.remove(0);
        let mut signers = BTreeSet::from([winner.block.header.miner_label]);
        for loser in &candidates {
            // every block beyond a miner's first at this height is an equivocation
            if signers.insert(loser.block.header.miner_label) {
                self.metrics.superseded += 1;
            } else {
                *self.metrics.rejected.entry(Rejection::Equivocation).or_default() += 1;
            }
        }
        self.commit(winner, out);
    }

    fn commit(&mut self, winner: PreparedBlock, out: &mut Vec<Action>) {
        let included_txs: BTreeSet<Digest> = winner.block.transactions.iter().map(Transaction::hash).collect();
        let included_joins: BTreeSet<Digest> = winner.block.join_requests.iter().map(JoinRequest::hash).collect();
        for outcome in self.chain.commit(winner) {
            *self.metrics.join_verdicts.entry(outcome.verdict.as_str()).or_default() += 1;
        }
        self.metrics.blocks_accepted += 1;

        let state = self.chain.world_state();
        self.pool.retain(|p| !included_txs.contains(&p.hash) && p.tx.nonce >= state.account(&p.tx.sender()).nonce);
        let list = self.chain.miner_list();
        self.joins.retain(|(h, j)| !included_joins.contains(h) && !list.contains(&j.label()));

        let tip = self.chain.height();
        if self.is_miner() && tip < self.cfg.target_height {
            out.push(Action::Schedule {
                delay_ms: self.cfg.block_interval_ms,
                message: Message::TimeoutFire { height: tip + 1, k: 0 },
            });
        }
        let later = self.orphans.split_off(&(tip + 1));
        let stale = core::mem::replace(&mut self.orphans, later);
        self.orphan_count -= stale.values().map(Vec::len).sum::<usize>();
        if let Some(ready) = self.orphans.remove(&(tip + 1)) {
            self.orphan_count -= ready.len();
            for block in ready {
                self.on_block(block, None, out);
            }
        }
    }

    fn on_timeout(&mut self, height: u64, k: u32, out: &mut Vec<Action>) {
        if height != self.chain.height() + 1 || height > self.cfg.target_height || !self.candidates.is_empty() {
            return;
        }
        let Some(tpm) = &self.tpm else { return };
        out.push(Action::Schedule {
            delay_ms: self.cfg.election_timeout_ms,
            message: Message::TimeoutFire { height, k: k + 1 },
        });
        let Some(index) = self.chain.miner_list().index_of(&tpm.identity_label()) else { return };
        let n = self.chain.miner_list().len() as u64;
        let election = match (self.chain.election_mode(), k) {
            (ElectionMode::RoundRobin, k) => {
                ((height + k as u64) % n == index as u64).then_some(Election::RoundRobin { fallback: k })
            }
            (ElectionMode::Vrf, 0) => Some(Election::Vrf),
            // the first timeout falls back to plain round-robin from offset 0
            (ElectionMode::Vrf, k) => {
                ((height + k as u64 - 1) % n == index as u64).then_some(Election::RoundRobin { fallback: k - 1 })
            }
        };
        if let Some(election) = election {
            self.produce(election, out);
        }
    }

    fn select_transactions(&self) -> Vec<Transaction> {
        let state = self.chain.world_state();
        let mut next: BTreeMap<Digest, u64> = BTreeMap::new();
        let mut taken = alloc::vec![false; self.pool.len()];
        let mut picked = Vec::new();
        loop {
            let before = picked.len();
            for (i, p) in self.pool.iter().enumerate() {
                if taken[i] || picked.len() == self.cfg.max_txs_per_block {
                    continue;
                }
                let sender = p.tx.sender();
                let expected = next.entry(sender).or_insert_with(|| state.account(&sender).nonce);
                if p.tx.nonce == *expected {
                    *expected += 1;
                    taken[i] = true;
                    picked.push(p.tx.clone());
                }
            }
            if picked.len() == before || picked.len() == self.cfg.max_txs_per_block {
                return picked;
            }
        }
    }

    fn select_joins(&self) -> Vec<JoinRequest> {
        self.joins.iter().take(self.cfg.max_joins_per_block).map(|(_, j)| j.clone()).collect()
    }

    fn build(&mut self, election: Election, txs: Vec<Transaction>) -> Option<PreparedBlock> {
        let joins = self.select_joins();
        let tpm = self.tpm.as_mut()?;
        match self.chain.produce_block(tpm, election, txs, joins, &mut *self.offchain, &mut self.executions) {
            Ok(p) => Some(p),
            Err(ProduceError::NotElected) => None,
            Err(e) => panic!("node {} failed to produce: {e}", self.id),
        }
    }

    fn produce(&mut self, election: Election, out: &mut Vec<Action>) {
        let txs = self.select_transactions();
        let Some(mut prepared) = self.build(election, txs.clone()) else { return };
        self.metrics.blocks_produced += 1;
        match self.spec.adversary {
            Some(AdversaryKind::TamperedPcrMiner) => {
                self.emit(&prepared.block, out);
            }
            Some(AdversaryKind::QuoteReplayBlock) => {
                prepared.block.header.quote = self.replay_quote.clone().expect("replaying miner holds a quote");
                self.emit(&prepared.block, out);
            }
            Some(AdversaryKind::EquivocatingMiner) => {
                self.emit(&prepared.block, out);
                let height = prepared.block.header.height;
                self.add_candidate(prepared, out);
                for variant in 1..=2u64 {
                    let mut alt = txs.clone();
                    alt.push(self.junk_transaction(height, variant));
                    let Some(p) = self.build(election, alt) else { continue };
                    self.metrics.equivocations_sent += 1;
                    let bytes = Rc::new(p.block.to_bytes());
                    self.seen.insert(crypto::hash(&bytes));
                    if variant == 1 {
                        out.push(Action::Broadcast(Message::GossipBlock(bytes)));
                        self.add_candidate(p, out);
                    } else {
                        out.push(Action::Schedule { delay_ms: self.cfg.late_emit_ms, message: Message::Emit(bytes) });
                    }
                }
            }
            _ => {
                self.emit(&prepared.block, out);
                self.add_candidate(prepared, out);
            }
        }
    }

    fn emit(&mut self, block: &Block, out: &mut Vec<Action>) {
        let bytes = Rc::new(block.to_bytes());
        self.seen.insert(crypto::hash(&bytes));
        out.push(Action::Broadcast(Message::GossipBlock(bytes)));
    }

    /// A well-formed transfer from an unfunded key; it executes to a
    /// rejected result and only serves to change the block bytes.
    fn junk_transaction(&self, height: u64, variant: u64) -> Transaction {
        let seed = crypto::hash_parts(&[b"poi/sim/junk", &(self.id as u64).to_be_bytes(), &height.to_be_bytes()]).0;
        execution::transfer(&KeyPair::from_seed(&seed), 0, Digest::ZERO, variant)
    }

    fn on_join_now(&mut self, now: u64, out: &mut Vec<Action>) {
        let (Some(tpm), Some(cert)) = (&self.tpm, &self.certificate) else { return };
        let join = JoinRequest::create(tpm, cert, now).expect("certificate matches the TPM");
        let bytes = Rc::new(join.to_bytes());
        self.on_join(&bytes);
        out.push(Action::Broadcast(Message::SubmitJoin(bytes)));
    }

    fn on_spam(&mut self, out: &mut Vec<Action>) {
        if self.chain.height() >= self.cfg.target_height {
            return;
        }
        let Some(forger) = self.forger.clone() else { return };
        self.spam_counter += 1;
        let tag = self.spam_counter.to_be_bytes();
        let mut garbage = crypto::hash_parts(&[b"poi/sim/garbage", &tag]).0.to_vec();
        garbage.extend_from_slice(&crypto::hash(&garbage).0);
        out.push(Action::Broadcast(Message::GossipBlock(Rc::new(garbage))));

        let list = self.chain.miner_list();
        let height = self.chain.height() + 1;
        let elected = list.records()[(height % list.len() as u64) as usize].label;
        let composite = *self.chain.integrity_list().iter().next().expect("integrity list is non-empty");
        for label in [elected, forger.public.label()] {
            let mut header = BlockHeader {
                height,
                prev_hash: self.chain.tip_hash(),
                tx_root: crypto::hash(b""),
                results_root: crypto::hash(b""),
                joins_root: crypto::hash(b""),
                state_root: self.chain.world_state().state_root(),
                miner_label: label,
                election_mode: ElectionMode::RoundRobin,
                fallback: 0,
                vrf_output: None,
                quote: AttestationQuote::placeholder(),
            };
            let qd = header.binding_hash().0;
            let tbs = AttestationQuote::signed_bytes(&TPM_GENERATED_VALUE, &CONSENSUS_PCRS, &composite, &qd);
            header.quote = AttestationQuote {
                magic: TPM_GENERATED_VALUE,
                pcr_selection: CONSENSUS_PCRS.to_vec(),
                pcr_composite: composite,
                qualifying_data: qd,
                signature: crypto::sign(&forger.secret, &tbs),
            };
            let block = Block { header, transactions: Vec::new(), results: Vec::new(), join_requests: Vec::new() };
            self.emit(&block, out);
        }
        out.push(Action::Schedule { delay_ms: self.cfg.block_interval_ms, message: Message::Spam });
    }
}

/// Metrics for one node, tagged with its role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeReport {
    pub id: usize,
    pub kind: NodeKind,
    pub adversary: Option<AdversaryKind>,
    pub metrics: NodeMetrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub nodes: Vec<NodeReport>,
    pub converged: bool,
    pub final_height: u64,
    pub final_chain_hash: Digest,
    pub final_state_root: Digest,
    /// Heights at which two honest nodes hold different blocks.
    pub forks: u64,
    /// Blocks that replaced an already accepted block (impossible by
    /// construction, reported for completeness).
    pub reorgs: u64,
    pub empty_vrf_rounds: u64,
    pub fallback_rounds: u64,
    pub messages_sent: u64,
    pub attempts_dropped: u64,
    pub bytes_on_wire: u64,
    pub header_bytes: u64,
    pub tx_bytes: u64,
    pub results_bytes: u64,
    pub join_bytes: u64,
    pub blocks_with_txs: u64,
    /// Mean over blocks with transactions of results / (header + transactions).
    pub results_overhead: f64,
    pub sim_time_ms: u64,
    pub transcript: Digest,
}

/// One `(node, metric, value)` row of the flat metrics table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetricRow {
    pub node: String,
    pub metric: String,
    pub value: String,
}

impl Metrics {
    pub fn total_executions(&self) -> u64 {
        self.nodes.iter().map(|n| n.metrics.executions).sum()
    }

    pub fn total_offchain_requests(&self) -> u64 {
        self.nodes.iter().map(|n| n.metrics.offchain_requests).sum()
    }

    pub fn honest_nodes(&self) -> impl Iterator<Item = &NodeReport> {
        self.nodes.iter().filter(|n| n.adversary.is_none())
    }

    pub fn rows(&self) -> Vec<MetricRow> {
        let mut rows = Vec::new();
        let mut push = |node: &str, metric: &str, value: String| {
            rows.push(MetricRow { node: node.into(), metric: metric.into(), value });
        };
        for n in &self.nodes {
            let id = format!("{}", n.id);
            let m = &n.metrics;
            push(&id, "kind", n.kind.as_str().into());
            push(&id, "adversary", n.adversary.map_or("none", AdversaryKind::as_str).into());
            push(&id, "executions", format!("{}", m.executions));
            push(&id, "blocks_produced", format!("{}", m.blocks_produced));
            push(&id, "blocks_accepted", format!("{}", m.blocks_accepted));
            for r in Rejection::ALL {
                push(&id, &format!("rejected_{}", r.as_str()), format!("{}", m.rejections(r)));
            }
            push(&id, "superseded", format!("{}", m.superseded));
            push(&id, "equivocations_sent", format!("{}", m.equivocations_sent));
            push(&id, "malformed", format!("{}", m.malformed));
            push(&id, "orphans_dropped", format!("{}", m.orphans_dropped));
            push(&id, "offchain_requests", format!("{}", m.offchain_requests));
            for (verdict, count) in &m.join_verdicts {
                push(&id, &format!("join_{verdict}"), format!("{count}"));
            }
        }
        let all = "all";
        push(all, "converged", format!("{}", self.converged));
        push(all, "final_height", format!("{}", self.final_height));
        push(all, "final_chain_hash", self.final_chain_hash.to_hex());
        push(all, "final_state_root", self.final_state_root.to_hex());
        push(all, "forks", format!("{}", self.forks));
        push(all, "reorgs", format!("{}", self.reorgs));
        push(all, "empty_vrf_rounds", format!("{}", self.empty_vrf_rounds));
        push(all, "fallback_rounds", format!("{}", self.fallback_rounds));
        push(all, "total_executions", format!("{}", self.total_executions()));
        push(all, "total_offchain_requests", format!("{}", self.total_offchain_requests()));
        push(all, "messages_sent", format!("{}", self.messages_sent));
        push(all, "attempts_dropped", format!("{}", self.attempts_dropped));
        push(all, "bytes_on_wire", format!("{}", self.bytes_on_wire));
        push(all, "header_bytes", format!("{}", self.header_bytes));
        push(all, "tx_bytes", format!("{}", self.tx_bytes));
        push(all, "results_bytes", format!("{}", self.results_bytes));
        push(all, "join_bytes", format!("{}", self.join_bytes));
        push(all, "blocks_with_txs", format!("{}", self.blocks_with_txs));
        push(all, "results_overhead", format!("{:.6}", self.results_overhead));
        push(all, "sim_time_ms", format!("{}", self.sim_time_ms));
        push(all, "transcript", self.transcript.to_hex());
        rows
    }
}

pub struct SimOutcome {
    pub metrics: Metrics,
    pub chains: Vec<ChainState>,
    /// Honest nodes still online at the end.
    pub honest: Vec<usize>,
    /// TPM identity label of every trusted node.
    pub identities: Vec<Option<Digest>>,
    pub genesis: GenesisConfig,
}

impl SimOutcome {
    pub fn reference_chain(&self) -> &ChainState {
        &self.chains[self.honest[0]]
    }

    /// Checks that every honest node turned away each malicious block or
    /// join with the verdict its adversary kind calls for.
    pub fn adversary_failures(&self) -> Vec<String> {
        let mut v = Vec::new();
        for adv in self.metrics.nodes.iter().filter(|n| n.adversary.is_some()) {
            let kind = adv.adversary.expect("filtered");
            let (verdict, expected) = match kind {
                AdversaryKind::TamperedPcrMiner => (Rejection::IntegrityNotListed, adv.metrics.blocks_produced),
                AdversaryKind::QuoteReplayBlock => (Rejection::BadQuote, adv.metrics.blocks_produced),
                AdversaryKind::EquivocatingMiner => (Rejection::Equivocation, adv.metrics.equivocations_sent),
                AdversaryKind::SpamInvalidBlocks => {
                    for h in self.metrics.honest_nodes() {
                        if h.metrics.blocks_accepted != self.chains[h.id].height() {
                            v.push(format!("node {} accepted a forged block", h.id));
                        }
                    }
                    continue;
                }
                AdversaryKind::ForgedCertJoin => {
                    let label = self.identities[adv.id].expect("joiner holds a TPM");
                    for h in self.metrics.honest_nodes() {
                        if self.chains[h.id].miner_list().contains(&label) {
                            v.push(format!("node {} enrolled the forged joiner {}", h.id, adv.id));
                        }
                    }
                    continue;
                }
            };
            if expected == 0 {
                v.push(format!("{} node {} never acted", kind.as_str(), adv.id));
            }
            for h in self.metrics.honest_nodes() {
                let got = h.metrics.rejections(verdict);
                if got != expected {
                    v.push(format!(
                        "node {} rejected {got} of {expected} blocks from {} node {} as {}",
                        h.id,
                        kind.as_str(),
                        adv.id,
                        verdict.as_str()
                    ));
                }
            }
        }
        v
    }

    /// Properties every run must satisfy.
    pub fn invariant_violations(&self, params: &SimParams) -> Vec<String> {
        let mut v = Vec::new();
        let m = &self.metrics;
        if !m.converged {
            v.push(format!("honest nodes did not all reach height {}", params.target_height));
        }
        if m.forks != 0 {
            v.push(format!("{} fork heights between honest nodes", m.forks));
        }
        let first = self.reference_chain();
        for &i in &self.honest {
            let c = &self.chains[i];
            let common = c.height().min(first.height());
            if c.block_hash(common) != first.block_hash(common) {
                v.push(format!("node {i} diverges from node {}", self.honest[0]));
            }
            if c.miner_list().to_bytes() != first.miner_list().to_bytes() && c.height() == first.height() {
                v.push(format!("node {i} holds a different miner list"));
            }
        }
        for n in &m.nodes {
            if n.kind == NodeKind::UntrustedRelay && n.metrics.blocks_produced != 0 {
                v.push(format!("relay {} produced blocks", n.id));
            }
            if n.kind == NodeKind::UntrustedRelay && !params.paranoid_validation && n.metrics.executions != 0 {
                v.push(format!("relay {} executed transactions", n.id));
            }
        }
        v
    }
}

#[derive(Debug, Clone)]
struct Scheduled {
    time: u64,
    seq: u64,
    target: usize,
    message: Message,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

/// Deterministic transaction mix for a workload, in submission order.
pub fn workload_transactions(seed: u64, w: &Workload) -> Vec<Transaction> {
    let keys = fixtures::account_keys(seed, w.accounts);
    let mut remaining = [w.transfers, w.counter_calls, w.random_draws, w.oracle_fetches];
    let mut nonces = alloc::vec![0u64; w.accounts];
    let mut txs = Vec::with_capacity(w.total());
    let mut i = 0usize;
    while remaining.iter().any(|&r| r > 0) {
        for (kind, left) in remaining.iter_mut().enumerate() {
            if *left == 0 {
                continue;
            }
            *left -= 1;
            let s = i % w.accounts;
            let key = &keys[s];
            let nonce = nonces[s];
            nonces[s] += 1;
            let tx = match kind {
                0 => {
                    let to = keys[(i * 7 + 1) % w.accounts].public.label();
                    execution::transfer(key, nonce, to, 1 + (i % 10) as u64)
                }
                1 => execution::counter_call(key, nonce, &format!("c{}", i % 4)),
                2 => execution::random_draw_call(key, nonce, format!("r{i}").as_bytes(), 16),
                _ => execution::oracle_fetch_call(
                    key,
                    nonce,
                    format!("o{i}").as_bytes(),
                    format!("price:{}", i % 8).as_bytes(),
                ),
            };
            txs.push(tx);
            i += 1;
        }
    }
    txs
}

/// Oracle table shared by every miner in a scenario.
pub fn fixture_oracle() -> FixtureOracle {
    let mut o = FixtureOracle::new();
    for j in 0..8u64 {
        o.insert(format!("price:{j}").as_bytes(), format!("{}", 40 + j).as_bytes());
    }
    o
}

pub struct Simulation {
    params: SimParams,
    genesis: GenesisConfig,
    nodes: Vec<Node>,
    queue: BinaryHeap<Reverse<Scheduled>>,
    seq: u64,
    rng: ChaCha20Rng,
    now: u64,
    transcript: Digest,
    messages_sent: u64,
    attempts_dropped: u64,
    bytes_on_wire: u64,
}

impl Simulation {
    pub fn new(params: SimParams) -> Result<Self, ConfigError> {
        params.validate()?;
        let members: Vec<usize> = params
            .roster
            .iter()
            .enumerate()
            .filter(|(_, s)| s.genesis_member && s.kind == NodeKind::TrustedMiner)
            .map(|(i, _)| i)
            .collect();
        let spec = GenesisSpec {
            seed: params.seed,
            miners: members.len(),
            accounts: params.workload.accounts,
            initial_balance: params.workload.initial_balance,
            election_mode: params.election_mode,
        };
        let fx = fixtures::generate_for(&spec, &members);
        let genesis_chain = ChainState::from_genesis(&fx.genesis).expect("generated genesis is valid");
        let cfg = NodeConfig {
            block_interval_ms: params.block_interval_ms,
            election_timeout_ms: params.election_timeout_ms,
            window_ms: params.window_ms(),
            late_emit_ms: params.window_ms() + params.network.max_delivery_ms() + 1,
            target_height: params.target_height,
            max_txs_per_block: params.max_txs_per_block,
            max_joins_per_block: params.max_joins_per_block,
            paranoid_validation: params.paranoid_validation,
        };
        let rogue_ca = CertificateAuthority::from_seed(&fixtures::derive_seed(params.seed, "rogue-ca", 0));
        let nodes = params
            .roster
            .iter()
            .enumerate()
            .map(|(id, spec)| {
                let mut node = Node {
                    id,
                    spec: spec.clone(),
                    cfg: cfg.clone(),
                    chain: genesis_chain.clone(),
                    tpm: None,
                    certificate: None,
                    offchain: Box::new(FixtureOracle::new()),
                    seen: BTreeSet::new(),
                    pool: Vec::new(),
                    joins: Vec::new(),
                    candidates: Vec::new(),
                    orphans: BTreeMap::new(),
                    orphan_count: 0,
                    replay_quote: None,
                    forger: None,
                    spam_counter: 0,
                    executions: ExecutionCounter::default(),
                    metrics: NodeMetrics::default(),
                };
                match spec.kind {
                    NodeKind::TrustedMiner => {
                        let ca = if spec.adversary == Some(AdversaryKind::ForgedCertJoin) { &rogue_ca } else { &fx.ca };
                        let id_ = fixtures::identity(params.seed, ca, id);
                        let manifest: MeasurementManifest = if spec.adversary == Some(AdversaryKind::TamperedPcrMiner) {
                            fixtures::tampered_manifest()
                        } else {
                            fixtures::golden_manifest()
                        };
                        let tpm = id_.boot_with(&manifest);
                        node.replay_quote = fx
                            .genesis
                            .initial_miners
                            .iter()
                            .find(|j| j.label() == tpm.identity_label())
                            .map(|j| j.report.quote.clone());
                        node.tpm = Some(tpm);
                        node.certificate = Some(id_.certificate);
                        let oracle = fixture_oracle();
                        node.offchain = match params.workload.oracle_fault_period {
                            Some(p) => Box::new(FaultInjector::new(oracle, p)),
                            None => Box::new(oracle),
                        };
                    }
                    NodeKind::UntrustedRelay => {
                        if spec.adversary == Some(AdversaryKind::SpamInvalidBlocks) {
                            node.forger =
                                Some(KeyPair::from_seed(&fixtures::derive_seed(params.seed, "forger", id as u64)));
                        }
                    }
                }
                node
            })
            .collect();
        let mut sim = Simulation {
            rng: ChaCha20Rng::seed_from_u64(params.seed),
            params,
            genesis: fx.genesis,
            nodes,
            queue: BinaryHeap::new(),
            seq: 0,
            now: 0,
            transcript: Digest::ZERO,
            messages_sent: 0,
            attempts_dropped: 0,
            bytes_on_wire: 0,
        };
        for id in 0..sim.nodes.len() {
            let actions = sim.nodes[id].start();
            sim.apply(id, actions);
        }
        let submit_at = sim.params.workload.submit_at_ms;
        for tx in workload_transactions(sim.params.seed, &sim.params.workload) {
            let msg = Message::SubmitTransaction(Rc::new(tx.to_bytes()));
            for to in 0..sim.nodes.len() {
                sim.send(to, msg.clone(), submit_at);
            }
        }
        Ok(sim)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    fn push(&mut self, time: u64, target: usize, message: Message) {
        self.seq += 1;
        self.queue.push(Reverse(Scheduled { time, seq: self.seq, target, message }));
    }

    fn uniform_unit(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    fn latency(&mut self) -> u64 {
        let n = &self.params.network;
        let span = n.latency_max_ms - n.latency_min_ms + 1;
        n.latency_min_ms + self.rng.next_u64() % span
    }

    /// Sends over one link, retransmitting dropped attempts.
    fn send(&mut self, to: usize, message: Message, at: u64) {
        let net = self.params.network;
        let len = message.wire_len() as u64;
        self.messages_sent += 1;
        for attempt in 0..net.max_attempts {
            self.bytes_on_wire += len;
            let start = at + attempt as u64 * net.retransmit_after_ms();
            let last = attempt + 1 == net.max_attempts;
            if !last && net.drop_rate > 0.0 && self.uniform_unit() < net.drop_rate {
                self.attempts_dropped += 1;
                continue;
            }
            let t = start + self.latency();
            self.push(t, to, message);
            return;
        }
    }

    fn apply(&mut self, from: usize, actions: Vec<Action>) {
        for action in actions {
            match action {
                Action::Broadcast(msg) => {
                    for to in 0..self.nodes.len() {
                        if to != from {
                            self.send(to, msg.clone(), self.now);
                        }
                    }
                }
                Action::Schedule { delay_ms, message } => self.push(self.now + delay_ms, from, message),
            }
        }
    }

    fn honest_online(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| n.spec.is_honest() && n.spec.offline_after_ms.is_none())
    }

    fn done(&self) -> bool {
        self.honest_online().all(|n| n.chain.height() >= self.params.target_height)
    }

    /// Runs until every honest online node reaches the target height or the
    /// time budget is spent.
    pub fn run(mut self) -> SimOutcome {
        let budget = self.params.sim_time_budget_ms();
        while let Some(Reverse(ev)) = self.queue.pop() {
            if ev.time > budget {
                break;
            }
            self.now = ev.time;
            self.transcript = crypto::hash_parts(&[
                &self.transcript.0,
                &ev.time.to_be_bytes(),
                &(ev.target as u64).to_be_bytes(),
                &[ev.message.code()],
                &(ev.message.wire_len() as u64).to_be_bytes(),
            ]);
            if !self.nodes[ev.target].online(self.now) {
                continue;
            }
            let closes = matches!(ev.message, Message::WindowClose { .. });
            let actions = self.nodes[ev.target].step(&ev.message, self.now);
            self.apply(ev.target, actions);
            if closes && self.done() {
                break;
            }
        }
        self.finish()
    }

    fn finish(self) -> SimOutcome {
        let target = self.params.target_height;
        let honest: Vec<usize> = self
            .nodes
            .iter()
            .filter(|n| n.spec.is_honest() && n.spec.offline_after_ms.is_none())
            .map(|n| n.id)
            .collect();
        let reference = &self.nodes[honest[0]].chain;
        let min_height = honest.iter().map(|&i| self.nodes[i].chain.height()).min().unwrap_or(0);
        let forks = (0..=min_height)
            .filter(|&h| {
                let first = reference.block_hash(h);
                honest.iter().any(|&i| self.nodes[i].chain.block_hash(h) != first)
            })
            .count() as u64;
        let converged = forks == 0 && min_height >= target;

        let vrf_chain = reference.election_mode() == ElectionMode::Vrf;
        let mut m = Metrics {
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeReport { id: n.id, kind: n.spec.kind, adversary: n.spec.adversary, metrics: n.metrics() })
                .collect(),
            converged,
            final_height: reference.height(),
            final_chain_hash: reference.tip_hash(),
            final_state_root: reference.state_root(),
            forks,
            reorgs: 0,
            empty_vrf_rounds: 0,
            fallback_rounds: 0,
            messages_sent: self.messages_sent,
            attempts_dropped: self.attempts_dropped,
            bytes_on_wire: self.bytes_on_wire,
            header_bytes: 0,
            tx_bytes: 0,
            results_bytes: 0,
            join_bytes: 0,
            blocks_with_txs: 0,
            results_overhead: 0.0,
            sim_time_ms: self.now,
            transcript: self.transcript,
        };
        let mut ratio_sum = 0.0;
        for b in &reference.blocks()[1..] {
            let h = &b.header;
            if vrf_chain && h.election_mode == ElectionMode::RoundRobin {
                m.empty_vrf_rounds += 1;
            }
            if h.fallback > 0 || (vrf_chain && h.election_mode == ElectionMode::RoundRobin) {
                m.fallback_rounds += 1;
            }
            let s = b.sizes();
            m.header_bytes += s.header as u64;
            m.tx_bytes += s.transactions as u64;
            m.results_bytes += s.results as u64;
            m.join_bytes += s.joins as u64;
            if !b.transactions.is_empty() {
                m.blocks_with_txs += 1;
                ratio_sum += s.results as f64 / (s.header + s.transactions) as f64;
            }
        }
        if m.blocks_with_txs > 0 {
            m.results_overhead = ratio_sum / m.blocks_with_txs as f64;
        }
        let identities = self.nodes.iter().map(|n| n.tpm.as_ref().map(TpmState::identity_label)).collect();
        let chains = self.nodes.into_iter().map(|n| n.chain).collect();
        SimOutcome { metrics: m, chains, honest, identities, genesis: self.genesis }
    }
}

pub fn run_scenario(params: SimParams) -> Result<SimOutcome, ConfigError> {
    Ok(Simulation::new(params)?.run())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rr(miners: usize, relays: usize, target: u64) -> SimParams {
        SimParams::new(3, miners, relays, ElectionMode::RoundRobin, target)
    }

    #[test]
    fn single_miner_no_relays() {
        let out = run_scenario(rr(1, 0, 10)).unwrap();
        assert_eq!(out.metrics.final_height, 10);
        assert_eq!(out.metrics.forks, 0);
        assert!(out.invariant_violations(&rr(1, 0, 10)).is_empty());
    }

    #[test]
    fn round_robin_minting_order() {
        let p = rr(5, 1, 40);
        let out = run_scenario(p.clone()).unwrap();
        assert!(out.invariant_violations(&p).is_empty());
        let chain = out.reference_chain();
        for b in &chain.blocks()[1..] {
            let idx = chain.miner_list().index_of(&b.header.miner_label).unwrap() as u64;
            assert_eq!(idx, b.header.height % 5);
            assert_eq!(b.header.fallback, 0);
        }
    }

    #[test]
    fn identical_params_identical_transcript() {
        let mut p = SimParams::new(9, 4, 1, ElectionMode::Vrf, 15);
        p.network.drop_rate = 0.1;
        p.workload.transfers = 30;
        let a = run_scenario(p.clone()).unwrap();
        let b = run_scenario(p.clone()).unwrap();
        assert_eq!(a.metrics, b.metrics);
        p.seed = 10;
        let c = run_scenario(p).unwrap();
        assert_ne!(a.metrics.transcript, c.metrics.transcript);
    }

    #[test]
    fn relays_apply_without_executing() {
        let mut p = rr(3, 2, 12);
        p.workload.transfers = 40;
        let out = run_scenario(p.clone()).unwrap();
        assert!(out.invariant_violations(&p).is_empty());
        assert_eq!(out.metrics.total_executions(), 40);
        for n in out.metrics.nodes.iter().filter(|n| n.kind == NodeKind::UntrustedRelay) {
            assert_eq!(n.metrics.blocks_produced, 0);
            assert_eq!(n.metrics.executions, 0);
            assert_eq!(n.metrics.blocks_accepted, 12);
        }
        let root = out.reference_chain().state_root();
        assert!(out.chains.iter().all(|c| c.state_root() == root));
    }

    #[test]
    fn node_step_units() {
        let p = rr(2, 1, 5);
        let mut sim = Simulation::new(p).unwrap();
        // relay: a timer for a filled or future height does nothing
        let relay = &mut sim.nodes[2];
        assert!(relay.step(&Message::TimeoutFire { height: 1, k: 0 }, 1000).is_empty());
        // malformed bytes are counted and dropped
        assert!(relay.step(&Message::GossipBlock(Rc::new(alloc::vec![1, 2, 3])), 10).is_empty());
        assert_eq!(relay.metrics().malformed, 1);
        // the elected miner emits exactly one block at its height
        let chain = sim.nodes[0].chain.clone();
        let elected = (1 % chain.miner_list().len() as u64) as usize;
        let label = chain.miner_list().records()[elected].label;
        let idx = (0..2).find(|&i| sim.nodes[i].tpm.as_ref().unwrap().identity_label() == label).unwrap();
        let actions = sim.nodes[idx].step(&Message::TimeoutFire { height: 1, k: 0 }, 1000);
        let blocks: Vec<_> = actions
            .iter()
            .filter_map(|a| match a {
                Action::Broadcast(Message::GossipBlock(b)) => Some(b.clone()),
                _ => None,
            })
            .collect();
        assert_eq!(blocks.len(), 1);
        // a relay forwards it and produces nothing of its own
        let relay = &mut sim.nodes[2];
        let forwarded = relay.step(&Message::GossipBlock(blocks[0].clone()), 1050);
        assert!(forwarded.iter().any(|a| matches!(a, Action::Broadcast(Message::GossipBlock(_)))));
        let closes = relay.step(&Message::WindowClose { height: 1 }, 3000);
        assert!(closes.is_empty());
        assert_eq!(relay.chain().height(), 1);
        // repeated timer for the filled height: no-op
        assert!(sim.nodes[idx].step(&Message::TimeoutFire { height: 1, k: 1 }, 3000).is_empty());
    }

    #[test]
    fn offline_miner_triggers_fallback() {
        let mut p = rr(4, 0, 16);
        p.roster[1].offline_after_ms = Some(0);
        let out = run_scenario(p.clone()).unwrap();
        assert!(out.invariant_violations(&p).is_empty(), "{:?}", out.invariant_violations(&p));
        assert!(out.metrics.fallback_rounds >= 3);
    }

    #[test]
    fn config_errors() {
        let mut p = rr(2, 0, 5);
        p.election_timeout_ms = 100;
        assert_eq!(p.validate().unwrap_err().field, "election_timeout_ms");
        let p = rr(0, 2, 5);
        assert_eq!(p.validate().unwrap_err().field, "roster");
        let mut p = rr(2, 0, 5);
        p.network.drop_rate = 1.0;
        assert_eq!(p.validate().unwrap_err().field, "drop_rate");
        assert!(run_scenario(rr(0, 1, 3)).is_err());
    }

    fn honest_rejections(out: &SimOutcome, r: Rejection) -> Vec<u64> {
        out.metrics.honest_nodes().map(|n| n.metrics.rejections(r)).collect()
    }

    fn adversary_run(kind: AdversaryKind, mode: ElectionMode) -> (SimParams, SimOutcome) {
        let mut base = SimParams::new(5, 4, 1, mode, 20);
        base.workload.transfers = 20;
        let p = adversary_inject(&base, kind);
        let out = run_scenario(p.clone()).unwrap();
        assert!(out.invariant_violations(&p).is_empty(), "{kind:?}: {:?}", out.invariant_violations(&p));
        assert!(out.adversary_failures().is_empty(), "{kind:?}: {:?}", out.adversary_failures());
        (p, out)
    }

    fn adversary_report(out: &SimOutcome) -> &NodeReport {
        out.metrics.nodes.iter().find(|n| n.adversary.is_some()).unwrap()
    }

    #[test]
    fn tampered_miner_blocks_rejected_everywhere() {
        for mode in [ElectionMode::RoundRobin, ElectionMode::Vrf] {
            let (_, out) = adversary_run(AdversaryKind::TamperedPcrMiner, mode);
            let produced = adversary_report(&out).metrics.blocks_produced;
            assert!(produced > 0);
            for count in honest_rejections(&out, Rejection::IntegrityNotListed) {
                assert_eq!(count, produced);
            }
        }
    }

    #[test]
    fn replayed_quote_rejected() {
        let (_, out) = adversary_run(AdversaryKind::QuoteReplayBlock, ElectionMode::RoundRobin);
        let produced = adversary_report(&out).metrics.blocks_produced;
        assert!(produced > 0);
        assert!(honest_rejections(&out, Rejection::BadQuote).iter().all(|&c| c == produced));
    }

    #[test]
    fn equivocation_detected() {
        let (_, out) = adversary_run(AdversaryKind::EquivocatingMiner, ElectionMode::RoundRobin);
        let sent = adversary_report(&out).metrics.equivocations_sent;
        assert!(sent > 0);
        assert!(honest_rejections(&out, Rejection::Equivocation).iter().all(|&c| c == sent));
    }

    #[test]
    fn forged_join_never_listed() {
        let (p, out) = adversary_run(AdversaryKind::ForgedCertJoin, ElectionMode::RoundRobin);
        let joiner = p.roster.len() - 1;
        assert_eq!(out.chains[joiner].miner_list().len(), 4);
        for &i in &out.honest {
            assert_eq!(out.chains[i].miner_list().len(), 4);
        }
        for n in out.metrics.honest_nodes() {
            assert!(!n.metrics.join_verdicts.contains_key("accepted"));
            assert!(
                n.metrics.join_verdicts.get("bad_certificate").copied().unwrap_or(0) > 0,
                "{:?}",
                n.metrics.join_verdicts
            );
        }
    }

    #[test]
    fn spam_is_absorbed() {
        let (_, out) = adversary_run(AdversaryKind::SpamInvalidBlocks, ElectionMode::Vrf);
        for n in out.metrics.honest_nodes() {
            assert!(n.metrics.malformed > 0);
            assert!(n.metrics.rejections(Rejection::BadQuote) > 0);
            assert!(n.metrics.rejections(Rejection::UnknownMiner) > 0);
        }
    }

    #[test]
    fn joiners_enter_the_list() {
        let mut p = rr(3, 1, 12);
        p.roster.push(NodeSpec::joiner(2500));
        p.roster.push(NodeSpec::joiner(4500));
        let out = run_scenario(p.clone()).unwrap();
        assert!(out.invariant_violations(&p).is_empty());
        assert!(out.chains.iter().all(|c| c.miner_list().len() == 5));
        assert!(out.metrics.nodes[5].metrics.blocks_produced > 0);
    }

    #[test]
    fn workload_mix_is_deterministic() {
        let w = Workload { accounts: 3, transfers: 4, random_draws: 2, oracle_fetches: 1, ..Workload::default() };
        let a = workload_transactions(1, &w);
        assert_eq!(a.len(), 7);
        assert_eq!(a, workload_transactions(1, &w));
        assert_eq!(a[0].nonce, 0);
        assert_eq!(a[3].nonce, 1);
    }
}
