//! Proof-of-Integrity consensus core.
//!
//! Everything in this crate is pure computation over owned values: a
//! software TPM, remote attestation, the miner-list consensus state machine,
//! the single-execution ledger and a deterministic discrete-event network
//! simulator. The crate is `no_std` and only needs `alloc`; file formats,
//! sockets and the command line live in the `poi-node` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod attestation;
pub mod codec;
pub mod consensus;
pub mod crypto;
pub mod execution;
pub mod fixtures;
pub mod hex;
pub mod sim;
pub mod tpm;

pub use codec::{Decode, DecodeError, Encode};
pub use crypto::{Digest, KeyPair, PublicKey, Signature};
