//! Single-execution ledger.
//!
//! The elected miner runs [`execute_transactions`] and ships the resulting
//! [`ExecutionResult`]s inside its block; every other node calls
//! [`apply_results`], which writes the recorded deltas verbatim without
//! checking signatures, nonces or balances and without touching randomness
//! or off-chain services.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::codec::{Decode, DecodeError, DecodeErrorKind, Decoder, Encode, Encoder};
use crate::consensus::merkle_root;
use crate::crypto::{self, Digest, KeyPair, PublicKey, Signature};
use crate::tpm::TpmState;

pub const ACCOUNT_PREFIX: &[u8] = b"acct/";
pub const CONTRACT_PREFIX: &[u8] = b"ctr/";

pub const CONTRACT_COUNTER: &str = "counter";
pub const CONTRACT_RANDOM_DRAW: &str = "random_draw";
pub const CONTRACT_ORACLE_FETCH: &str = "oracle_fetch";

/// Largest draw a single `random_draw` call may request.
pub const MAX_RANDOM_DRAW: u32 = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Account {
    pub balance: u64,
    pub nonce: u64,
}

impl Account {
    pub fn to_value(self) -> Vec<u8> {
        let mut v = Vec::with_capacity(16);
        v.extend_from_slice(&self.balance.to_be_bytes());
        v.extend_from_slice(&self.nonce.to_be_bytes());
        v
    }

    pub fn from_value(v: &[u8]) -> Option<Account> {
        let v: &[u8; 16] = v.try_into().ok()?;
        Some(Account {
            balance: u64::from_be_bytes(v[..8].try_into().unwrap()),
            nonce: u64::from_be_bytes(v[8..].try_into().unwrap()),
        })
    }
}

pub fn account_key(address: &Digest) -> Vec<u8> {
    [ACCOUNT_PREFIX, &address.0[..]].concat()
}

pub fn contract_key(contract_id: &str, key: &[u8]) -> Vec<u8> {
    [CONTRACT_PREFIX, contract_id.as_bytes(), b"/", key].concat()
}

/// Whether `(key, value)` is a well-formed state entry.
pub fn is_well_formed_entry(key: &[u8], value: &[u8]) -> bool {
    if let Some(addr) = key.strip_prefix(ACCOUNT_PREFIX) {
        return addr.len() == 32 && value.len() == 16;
    }
    if let Some(rest) = key.strip_prefix(CONTRACT_PREFIX) {
        return match rest.iter().position(|&b| b == b'/') {
            Some(slash) => slash > 0 && slash + 1 < rest.len(),
            None => false,
        };
    }
    false
}

/// Account and contract state keyed by byte strings.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WorldState {
    entries: BTreeMap<Vec<u8>, Vec<u8>>,
}

impl WorldState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_balances<'a>(balances: impl IntoIterator<Item = &'a (Digest, u64)>) -> Self {
        let mut s = WorldState::new();
        for (addr, balance) in balances {
            s.set_account(addr, Account { balance: *balance, nonce: 0 });
        }
        s
    }

    pub fn get(&self, key: &[u8]) -> Option<&[u8]> {
        self.entries.get(key).map(Vec::as_slice)
    }

    pub fn insert(&mut self, key: Vec<u8>, value: Vec<u8>) {
        self.entries.insert(key, value);
    }

    pub fn account(&self, address: &Digest) -> Account {
        self.get(&account_key(address)).and_then(Account::from_value).unwrap_or_default()
    }

    pub fn set_account(&mut self, address: &Digest, account: Account) {
        self.insert(account_key(address), account.to_value());
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Vec<u8>, &Vec<u8>)> {
        self.entries.iter()
    }

    /// Merkle root over the canonical encodings of the sorted `(key, value)`
    /// pairs.
    pub fn state_root(&self) -> Digest {
        let leaves: Vec<Vec<u8>> = self
            .entries
            .iter()
            .map(|(k, v)| {
                let mut e = Encoder::new();
                e.bytes(k).bytes(v);
                e.finish()
            })
            .collect();
        merkle_root(&leaves)
    }

    pub fn total_balance(&self) -> u128 {
        self.entries
            .iter()
            .filter(|(k, _)| k.starts_with(ACCOUNT_PREFIX))
            .filter_map(|(_, v)| Account::from_value(v))
            .map(|a| a.balance as u128)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TxKind {
    Transfer { to: Digest, amount: u64 },
    ContractCall { contract_id: String, method: String, args: Vec<u8> },
}

impl Encode for TxKind {
    fn encode_fields(&self, enc: &mut Encoder) {
        match self {
            TxKind::Transfer { to, amount } => {
                enc.u8(0).nested(to).u64(*amount);
            }
            TxKind::ContractCall { contract_id, method, args } => {
                enc.u8(1).bytes(contract_id.as_bytes()).bytes(method.as_bytes()).bytes(args);
            }
        }
    }
}

fn utf8(dec: &mut Decoder<'_>) -> Result<String, DecodeError> {
    let at = dec.offset();
    let raw = dec.bytes()?;
    core::str::from_utf8(raw)
        .map(String::from)
        .map_err(|_| DecodeError { offset: at, kind: DecodeErrorKind::Invalid("utf-8 string") })
}

impl Decode for TxKind {
    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let at = dec.offset();
        match dec.u8()? {
            0 => Ok(TxKind::Transfer { to: dec.nested()?, amount: dec.u64()? }),
            1 => Ok(TxKind::ContractCall { contract_id: utf8(dec)?, method: utf8(dec)?, args: dec.bytes()?.to_vec() }),
            t => Err(DecodeError { offset: at, kind: DecodeErrorKind::UnknownTag(t) }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub sender_public_key: PublicKey,
    pub nonce: u64,
    pub kind: TxKind,
    pub signature: Signature,
}

impl Transaction {
    pub fn signing_bytes(sender: &PublicKey, nonce: u64, kind: &TxKind) -> Vec<u8> {
        let mut e = Encoder::new();
        e.nested(sender).u64(nonce).nested(kind);
        e.finish()
    }

    pub fn new_signed(keys: &KeyPair, nonce: u64, kind: TxKind) -> Self {
        let signature = crypto::sign(&keys.secret, &Self::signing_bytes(&keys.public, nonce, &kind));
        Transaction { sender_public_key: keys.public, nonce, kind, signature }
    }

    pub fn sender(&self) -> Digest {
        self.sender_public_key.label()
    }

    pub fn hash(&self) -> Digest {
        crypto::hash(&self.to_bytes())
    }

    pub fn signature_valid(&self) -> bool {
        crypto::verify(
            &self.sender_public_key,
            &Self::signing_bytes(&self.sender_public_key, self.nonce, &self.kind),
            &self.signature,
        )
    }
}

impl Encode for Transaction {
    fn encode_fields(&self, enc: &mut Encoder) {
        enc.nested(&self.sender_public_key).u64(self.nonce).nested(&self.kind).nested(&self.signature);
    }
}

impl Decode for Transaction {
    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Transaction {
            sender_public_key: dec.nested()?,
            nonce: dec.u64()?,
            kind: dec.nested()?,
            signature: dec.nested()?,
        })
    }
}

pub fn transfer(keys: &KeyPair, nonce: u64, to: Digest, amount: u64) -> Transaction {
    Transaction::new_signed(keys, nonce, TxKind::Transfer { to, amount })
}

pub fn counter_call(keys: &KeyPair, nonce: u64, name: &str) -> Transaction {
    Transaction::new_signed(
        keys,
        nonce,
        TxKind::ContractCall {
            contract_id: CONTRACT_COUNTER.into(),
            method: "increment".into(),
            args: name.as_bytes().to_vec(),
        },
    )
}

pub fn random_draw_call(keys: &KeyPair, nonce: u64, key: &[u8], n: u32) -> Transaction {
    let mut args = Encoder::new();
    args.bytes(key).u32(n);
    Transaction::new_signed(
        keys,
        nonce,
        TxKind::ContractCall { contract_id: CONTRACT_RANDOM_DRAW.into(), method: "draw".into(), args: args.finish() },
    )
}

pub fn oracle_fetch_call(keys: &KeyPair, nonce: u64, key: &[u8], request: &[u8]) -> Transaction {
    let mut args = Encoder::new();
    args.bytes(key).bytes(request);
    Transaction::new_signed(
        keys,
        nonce,
        TxKind::ContractCall { contract_id: CONTRACT_ORACLE_FETCH.into(), method: "fetch".into(), args: args.finish() },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum RejectReason {
    BadSignature,
    BadNonce,
    InsufficientBalance,
    BalanceOverflow,
    UnknownContract,
    BadArguments,
    RandomnessUnavailable,
    OffchainUnavailable,
}

impl RejectReason {
    const ALL: [RejectReason; 8] = [
        RejectReason::BadSignature,
        RejectReason::BadNonce,
        RejectReason::InsufficientBalance,
        RejectReason::BalanceOverflow,
        RejectReason::UnknownContract,
        RejectReason::BadArguments,
        RejectReason::RandomnessUnavailable,
        RejectReason::OffchainUnavailable,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::BadSignature => "bad_signature",
            RejectReason::BadNonce => "bad_nonce",
            RejectReason::InsufficientBalance => "insufficient_balance",
            RejectReason::BalanceOverflow => "balance_overflow",
            RejectReason::UnknownContract => "unknown_contract",
            RejectReason::BadArguments => "bad_arguments",
            RejectReason::RandomnessUnavailable => "randomness_unavailable",
            RejectReason::OffchainUnavailable => "offchain_unavailable",
        }
    }

    fn code(self) -> u8 {
        RejectReason::ALL.iter().position(|r| *r == self).unwrap() as u8
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxStatus {
    Ok,
    Rejected(RejectReason),
}

/// What the executing node observed for one transaction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionResult {
    pub status: TxStatus,
    pub state_delta: Vec<(Vec<u8>, Vec<u8>)>,
    pub consumed_randomness: Option<Vec<u8>>,
    pub offchain_record: Option<(Vec<u8>, Vec<u8>)>,
}

impl ExecutionResult {
    pub fn rejected(reason: RejectReason) -> Self {
        ExecutionResult {
            status: TxStatus::Rejected(reason),
            state_delta: Vec::new(),
            consumed_randomness: None,
            offchain_record: None,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == TxStatus::Ok
    }
}

struct Bytes(Vec<u8>);

impl Encode for Bytes {
    fn encode_fields(&self, enc: &mut Encoder) {
        enc.bytes(&self.0);
    }
}

impl Decode for Bytes {
    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Bytes(dec.bytes()?.to_vec()))
    }
}

struct BytePair(Vec<u8>, Vec<u8>);

impl Encode for BytePair {
    fn encode_fields(&self, enc: &mut Encoder) {
        enc.bytes(&self.0).bytes(&self.1);
    }
}

impl Decode for BytePair {
    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(BytePair(dec.bytes()?.to_vec(), dec.bytes()?.to_vec()))
    }
}

impl Encode for ExecutionResult {
    fn encode_fields(&self, enc: &mut Encoder) {
        match self.status {
            TxStatus::Ok => enc.bytes(&[0]),
            TxStatus::Rejected(r) => enc.bytes(&[1, r.code()]),
        };
        // delta entries are flattened key, value, key, value, ...
        let mut delta = Encoder::new();
        for (k, v) in &self.state_delta {
            delta.bytes(k).bytes(v);
        }
        enc.bytes(&delta.finish());
        enc.option(self.consumed_randomness.clone().map(Bytes).as_ref());
        enc.option(self.offchain_record.clone().map(|(a, b)| BytePair(a, b)).as_ref());
    }
}

impl Decode for ExecutionResult {
    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let at = dec.offset();
        let status = match dec.bytes()? {
            [0] => TxStatus::Ok,
            [1, code] => TxStatus::Rejected(
                *RejectReason::ALL
                    .get(*code as usize)
                    .ok_or(DecodeError { offset: at, kind: DecodeErrorKind::UnknownTag(*code) })?,
            ),
            _ => return Err(DecodeError { offset: at, kind: DecodeErrorKind::Invalid("result status") }),
        };
        let at = dec.offset();
        let flat = dec.byte_list()?;
        if flat.len() % 2 != 0 {
            return Err(DecodeError { offset: at, kind: DecodeErrorKind::Invalid("state delta") });
        }
        let mut state_delta = Vec::with_capacity(flat.len() / 2);
        let mut it = flat.into_iter();
        while let (Some(k), Some(v)) = (it.next(), it.next()) {
            state_delta.push((k, v));
        }
        Ok(ExecutionResult {
            status,
            state_delta,
            consumed_randomness: dec.option::<Bytes>()?.map(|b| b.0),
            offchain_record: dec.option::<BytePair>()?.map(|p| (p.0, p.1)),
        })
    }
}

/// Source of non-deterministic bytes for `random_draw`.
pub trait RandomSource {
    fn random_bytes(&mut self, n: usize) -> Option<Vec<u8>>;
}

impl RandomSource for TpmState {
    fn random_bytes(&mut self, n: usize) -> Option<Vec<u8>> {
        Some(self.get_random(n))
    }
}

/// A node without a TPM has no acceptable randomness.
pub struct NoRandomness;

impl RandomSource for NoRandomness {
    fn random_bytes(&mut self, _n: usize) -> Option<Vec<u8>> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OffchainError {
    Unavailable,
    Timeout,
}

/// Synchronous call to a system outside the chain. Only the executing node
/// ever invokes it.
pub trait OffchainClient {
    fn call(&mut self, request: &[u8]) -> Result<Vec<u8>, OffchainError>;

    /// Requests issued so far, successful or not.
    fn calls(&self) -> u64;
}

/// In-memory lookup table; unknown requests fail as unavailable.
#[derive(Debug, Clone, Default)]
pub struct FixtureOracle {
    table: BTreeMap<Vec<u8>, Vec<u8>>,
    calls: u64,
}

impl FixtureOracle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_entry(mut self, request: &[u8], response: &[u8]) -> Self {
        self.table.insert(request.to_vec(), response.to_vec());
        self
    }

    pub fn insert(&mut self, request: &[u8], response: &[u8]) {
        self.table.insert(request.to_vec(), response.to_vec());
    }
}

impl OffchainClient for FixtureOracle {
    fn call(&mut self, request: &[u8]) -> Result<Vec<u8>, OffchainError> {
        self.calls += 1;
        self.table.get(request).cloned().ok_or(OffchainError::Unavailable)
    }

    fn calls(&self) -> u64 {
        self.calls
    }
}

/// Wraps a client and fails every `period`-th call (every call when 1).
pub struct FaultInjector<C> {
    inner: C,
    period: u64,
    calls: u64,
}

impl<C: OffchainClient> FaultInjector<C> {
    pub fn new(inner: C, period: u64) -> Self {
        FaultInjector { inner, period: period.max(1), calls: 0 }
    }
}

impl<C: OffchainClient> OffchainClient for FaultInjector<C> {
    fn call(&mut self, request: &[u8]) -> Result<Vec<u8>, OffchainError> {
        self.calls += 1;
        if self.calls.is_multiple_of(self.period) {
            return Err(OffchainError::Timeout);
        }
        self.inner.call(request)
    }

    fn calls(&self) -> u64 {
        self.calls
    }
}

/// Everything the executing node needs besides the state.
pub struct ExecutionContext<'a> {
    pub randomness: &'a mut dyn RandomSource,
    pub offchain: &'a mut dyn OffchainClient,
}

/// Number of transactions this node has executed (not merely applied).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExecutionCounter(pub u64);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Execution {
    pub results: Vec<ExecutionResult>,
    pub post_state: WorldState,
    pub state_root: Digest,
}

/// Output of a built-in contract: writes plus what must be recorded so that
/// non-executing nodes reproduce the state.
#[derive(Debug, Default)]
pub struct ContractOutput {
    pub delta: Vec<(Vec<u8>, Vec<u8>)>,
    pub consumed_randomness: Option<Vec<u8>>,
    pub offchain_record: Option<(Vec<u8>, Vec<u8>)>,
}

pub fn contract_counter(state: &WorldState, args: &[u8]) -> Result<ContractOutput, RejectReason> {
    if args.is_empty() || args.len() > 64 {
        return Err(RejectReason::BadArguments);
    }
    let key = contract_key(CONTRACT_COUNTER, args);
    let current = match state.get(&key) {
        Some(v) => u64::from_be_bytes(v.try_into().map_err(|_| RejectReason::BadArguments)?),
        None => 0,
    };
    let next = current.checked_add(1).ok_or(RejectReason::BalanceOverflow)?;
    Ok(ContractOutput { delta: alloc::vec![(key, next.to_be_bytes().to_vec())], ..Default::default() })
}

fn decode_args<const N: usize>(args: &[u8]) -> Result<[Vec<u8>; N], RejectReason> {
    let mut d = Decoder::new(args);
    let mut out: [Vec<u8>; N] = core::array::from_fn(|_| Vec::new());
    for slot in out.iter_mut() {
        *slot = d.bytes().map_err(|_| RejectReason::BadArguments)?.to_vec();
    }
    d.finish().map_err(|_| RejectReason::BadArguments)?;
    Ok(out)
}

pub fn contract_random_draw(
    _state: &WorldState,
    args: &[u8],
    randomness: &mut dyn RandomSource,
) -> Result<ContractOutput, RejectReason> {
    let [key, n] = decode_args::<2>(args)?;
    let n: [u8; 4] = n.as_slice().try_into().map_err(|_| RejectReason::BadArguments)?;
    let n = u32::from_be_bytes(n);
    if key.is_empty() || n == 0 || n > MAX_RANDOM_DRAW {
        return Err(RejectReason::BadArguments);
    }
    let bytes = randomness.random_bytes(n as usize).ok_or(RejectReason::RandomnessUnavailable)?;
    Ok(ContractOutput {
        delta: alloc::vec![(contract_key(CONTRACT_RANDOM_DRAW, &key), bytes.clone())],
        consumed_randomness: Some(bytes),
        offchain_record: None,
    })
}

pub fn contract_oracle_fetch(
    _state: &WorldState,
    args: &[u8],
    offchain: &mut dyn OffchainClient,
) -> Result<ContractOutput, RejectReason> {
    let [key, request] = decode_args::<2>(args)?;
    if key.is_empty() {
        return Err(RejectReason::BadArguments);
    }
    let response = offchain.call(&request).map_err(|_| RejectReason::OffchainUnavailable)?;
    Ok(ContractOutput {
        delta: alloc::vec![(contract_key(CONTRACT_ORACLE_FETCH, &key), response.clone())],
        consumed_randomness: None,
        offchain_record: Some((request, response)),
    })
}

fn execute_one(state: &WorldState, tx: &Transaction, ctx: &mut ExecutionContext<'_>) -> ExecutionResult {
    if !tx.signature_valid() {
        return ExecutionResult::rejected(RejectReason::BadSignature);
    }
    let sender = tx.sender();
    let mut account = state.account(&sender);
    if tx.nonce != account.nonce {
        return ExecutionResult::rejected(RejectReason::BadNonce);
    }
    match &tx.kind {
        TxKind::Transfer { to, amount } => {
            if *amount > account.balance {
                return ExecutionResult::rejected(RejectReason::InsufficientBalance);
            }
            account.balance -= amount;
            account.nonce += 1;
            let mut delta = alloc::vec![(account_key(&sender), account.to_value())];
            if *to == sender {
                account.balance += amount;
                delta[0].1 = account.to_value();
            } else {
                let mut recipient = state.account(to);
                let Some(credited) = recipient.balance.checked_add(*amount) else {
                    return ExecutionResult::rejected(RejectReason::BalanceOverflow);
                };
                recipient.balance = credited;
                delta.push((account_key(to), recipient.to_value()));
            }
            ExecutionResult {
                status: TxStatus::Ok,
                state_delta: delta,
                consumed_randomness: None,
                offchain_record: None,
            }
        }
        TxKind::ContractCall { contract_id, args, .. } => {
            let out = match contract_id.as_str() {
                CONTRACT_COUNTER => contract_counter(state, args),
                CONTRACT_RANDOM_DRAW => contract_random_draw(state, args, ctx.randomness),
                CONTRACT_ORACLE_FETCH => contract_oracle_fetch(state, args, ctx.offchain),
                _ => Err(RejectReason::UnknownContract),
            };
            match out {
                Ok(out) => {
                    account.nonce += 1;
                    let mut delta = alloc::vec![(account_key(&sender), account.to_value())];
                    delta.extend(out.delta);
                    ExecutionResult {
                        status: TxStatus::Ok,
                        state_delta: delta,
                        consumed_randomness: out.consumed_randomness,
                        offchain_record: out.offchain_record,
                    }
                }
                Err(reason) => ExecutionResult::rejected(reason),
            }
        }
    }
}

/// Runs `txs` in order against `pre_state`. Per-transaction failures become
/// rejected results; nothing is dropped.
pub fn execute_transactions(
    pre_state: &WorldState,
    txs: &[Transaction],
    ctx: &mut ExecutionContext<'_>,
    counter: &mut ExecutionCounter,
) -> Execution {
    let mut state = pre_state.clone();
    let mut results = Vec::with_capacity(txs.len());
    for tx in txs {
        counter.0 += 1;
        let result = execute_one(&state, tx, ctx);
        for (k, v) in &result.state_delta {
            state.insert(k.clone(), v.clone());
        }
        results.push(result);
    }
    let state_root = state.state_root();
    Execution { results, post_state: state, state_root }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApplyError {
    LengthMismatch { transactions: usize, results: usize },
    MalformedKey { result_index: usize },
    RejectedWithDelta { result_index: usize },
}

impl fmt::Display for ApplyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ApplyError::LengthMismatch { transactions, results } => {
                write!(f, "{transactions} transactions but {results} results")
            }
            ApplyError::MalformedKey { result_index } => write!(f, "result {result_index} writes a malformed key"),
            ApplyError::RejectedWithDelta { result_index } => {
                write!(f, "rejected result {result_index} carries state writes")
            }
        }
    }
}

/// Writes every result's delta verbatim.
pub fn apply_results(
    pre_state: &WorldState,
    txs: &[Transaction],
    results: &[ExecutionResult],
) -> Result<(WorldState, Digest), ApplyError> {
    if txs.len() != results.len() {
        return Err(ApplyError::LengthMismatch { transactions: txs.len(), results: results.len() });
    }
    let mut state = pre_state.clone();
    for (i, r) in results.iter().enumerate() {
        if !r.is_ok() && !r.state_delta.is_empty() {
            return Err(ApplyError::RejectedWithDelta { result_index: i });
        }
        for (k, v) in &r.state_delta {
            if !is_well_formed_entry(k, v) {
                return Err(ApplyError::MalformedKey { result_index: i });
            }
            state.insert(k.clone(), v.clone());
        }
    }
    let root = state.state_root();
    Ok((state, root))
}
