//! Functional software TPM: PCR bank, event log, quotes, RNG, sealed storage
//! and EK-derived keys.
//!
//! All key material is expanded from a 32-byte seed so that a simulated
//! network can be rebuilt bit-for-bit. Secrets (endorsement seed, attestation
//! signing key, storage key) never leave a [`TpmState`]: there is no accessor
//! for them, `Debug` redacts them and the `Encode` impl serializes only the
//! public view.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use aes_gcm::aead::consts::U16;
use aes_gcm::aead::{AeadInOut, KeyInit};
use aes_gcm::aes::Aes256;
use aes_gcm::AesGcm;

use crate::codec::{Decode, DecodeError, DecodeErrorKind, Decoder, Encode, Encoder};
use crate::crypto::{self, hash, hash_parts, Digest, KeyPair, PublicKey, Signature, VrfOutput, VrfProver};

pub const PCR_COUNT: usize = 24;

/// `TPM_GENERATED_VALUE`: every structure the TPM signs about its own state
/// starts with these bytes, and external data starting with them is refused.
pub const TPM_GENERATED_VALUE: [u8; 4] = [0xFF, 0x54, 0x43, 0x47];

/// PCR roles for the three measurement stages.
pub const PCR_STATIC: u8 = 0;
pub const PCR_DYNAMIC: u8 = 1;
pub const PCR_IMA: u8 = 2;

/// Selection quoted for consensus.
pub const CONSENSUS_PCRS: [u8; 3] = [PCR_STATIC, PCR_DYNAMIC, PCR_IMA];

pub const QUALIFYING_DATA_LEN: usize = 32;
pub const SEAL_NONCE_LEN: usize = 16;
pub const SEAL_TAG_LEN: usize = 16;

type SealCipher = AesGcm<Aes256, U16>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TpmError {
    PcrIndexOutOfRange(u8),
    EmptySelection,
    UnsortedSelection,
    QualifyingDataTooLong(usize),
    /// External data carried the `TPM_GENERATED_VALUE` prefix.
    RefusedForgedQuote,
    /// Wrong TPM, or the blob was modified.
    UnsealFailed,
}

impl fmt::Display for TpmError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TpmError::PcrIndexOutOfRange(i) => write!(f, "PCR index {i} out of range 0..{PCR_COUNT}"),
            TpmError::EmptySelection => f.write_str("empty PCR selection"),
            TpmError::UnsortedSelection => f.write_str("PCR selection must be strictly ascending"),
            TpmError::QualifyingDataTooLong(n) => {
                write!(f, "qualifying data is {n} bytes, at most {QUALIFYING_DATA_LEN} allowed")
            }
            TpmError::RefusedForgedQuote => f.write_str("refusing to sign data carrying TPM_GENERATED_VALUE"),
            TpmError::UnsealFailed => f.write_str("unseal failed: authentication error"),
        }
    }
}

pub fn check_pcr_index(index: u8) -> Result<usize, TpmError> {
    if (index as usize) < PCR_COUNT {
        Ok(index as usize)
    } else {
        Err(TpmError::PcrIndexOutOfRange(index))
    }
}

/// Extend semantics: `SHA-256(old || measured)`.
pub fn extend_digest(old: &Digest, measured: &Digest) -> Digest {
    hash_parts(&[&old.0, &measured.0])
}

/// SHA-256 over the concatenation of register values in selection order.
pub fn pcr_composite<'a>(values: impl IntoIterator<Item = &'a Digest>) -> Digest {
    let mut buf = Vec::new();
    for v in values {
        buf.extend_from_slice(&v.0);
    }
    hash(&buf)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PcrBank {
    registers: [Digest; PCR_COUNT],
}

impl Default for PcrBank {
    fn default() -> Self {
        PcrBank { registers: [Digest::ZERO; PCR_COUNT] }
    }
}

impl PcrBank {
    pub fn get(&self, index: u8) -> Result<Digest, TpmError> {
        Ok(self.registers[check_pcr_index(index)?])
    }

    pub fn extend(&mut self, index: u8, measured: &Digest) -> Result<Digest, TpmError> {
        let i = check_pcr_index(index)?;
        self.registers[i] = extend_digest(&self.registers[i], measured);
        Ok(self.registers[i])
    }

    pub fn composite(&self, selection: &[u8]) -> Result<Digest, TpmError> {
        let values = selection.iter().map(|&i| self.get(i)).collect::<Result<Vec<_>, _>>()?;
        Ok(pcr_composite(&values))
    }

    pub fn is_reset(&self) -> bool {
        self.registers.iter().all(|r| *r == Digest::ZERO)
    }

    pub fn registers(&self) -> &[Digest; PCR_COUNT] {
        &self.registers
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventLogEntry {
    pub pcr_index: u8,
    pub measured_digest: Digest,
    pub message: String,
}

impl Encode for EventLogEntry {
    fn encode_fields(&self, enc: &mut Encoder) {
        enc.u8(self.pcr_index).nested(&self.measured_digest).bytes(self.message.as_bytes());
    }
}

impl Decode for EventLogEntry {
    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let pcr_index = dec.u8()?;
        let measured_digest = dec.nested()?;
        let at = dec.offset();
        let message = core::str::from_utf8(dec.bytes()?)
            .map_err(|_| DecodeError { offset: at, kind: DecodeErrorKind::Invalid("utf-8 log message") })?;
        Ok(EventLogEntry { pcr_index, measured_digest, message: message.into() })
    }
}

/// Signed PCR evidence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttestationQuote {
    pub magic: [u8; 4],
    pub pcr_selection: Vec<u8>,
    pub pcr_composite: Digest,
    pub qualifying_data: [u8; QUALIFYING_DATA_LEN],
    pub signature: Signature,
}

impl AttestationQuote {
    /// Bytes covered by the signature: the raw magic followed by the
    /// canonical encoding of the remaining unsigned fields. Keeping the magic
    /// unprefixed is what lets `sign_external` recognise and refuse them.
    pub fn signed_bytes(
        magic: &[u8; 4],
        pcr_selection: &[u8],
        pcr_composite: &Digest,
        qualifying_data: &[u8; QUALIFYING_DATA_LEN],
    ) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.bytes(pcr_selection).nested(pcr_composite).bytes(qualifying_data);
        let body = enc.finish();
        let mut out = Vec::with_capacity(4 + body.len());
        out.extend_from_slice(magic);
        out.extend_from_slice(&body);
        out
    }

    pub fn tbs(&self) -> Vec<u8> {
        Self::signed_bytes(&self.magic, &self.pcr_selection, &self.pcr_composite, &self.qualifying_data)
    }

    /// A structurally valid quote with a zero signature; never verifies.
    pub fn placeholder() -> Self {
        AttestationQuote {
            magic: TPM_GENERATED_VALUE,
            pcr_selection: CONSENSUS_PCRS.to_vec(),
            pcr_composite: Digest::ZERO,
            qualifying_data: [0; QUALIFYING_DATA_LEN],
            signature: Signature::ZERO,
        }
    }
}

impl Encode for AttestationQuote {
    fn encode_fields(&self, enc: &mut Encoder) {
        enc.bytes(&self.magic)
            .bytes(&self.pcr_selection)
            .nested(&self.pcr_composite)
            .bytes(&self.qualifying_data)
            .nested(&self.signature);
    }
}

impl Decode for AttestationQuote {
    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(AttestationQuote {
            magic: dec.array()?,
            pcr_selection: dec.bytes()?.to_vec(),
            pcr_composite: dec.nested()?,
            qualifying_data: dec.array()?,
            signature: dec.nested()?,
        })
    }
}

/// Magic check plus signature check under `key`.
pub fn verify_quote(key: &PublicKey, quote: &AttestationQuote) -> bool {
    quote.magic == TPM_GENERATED_VALUE && crypto::verify(key, &quote.tbs(), &quote.signature)
}

pub fn pad_qualifying_data(data: &[u8]) -> Result<[u8; QUALIFYING_DATA_LEN], TpmError> {
    if data.len() > QUALIFYING_DATA_LEN {
        return Err(TpmError::QualifyingDataTooLong(data.len()));
    }
    let mut out = [0u8; QUALIFYING_DATA_LEN];
    out[..data.len()].copy_from_slice(data);
    Ok(out)
}

pub fn validate_selection(selection: &[u8]) -> Result<(), TpmError> {
    if selection.is_empty() {
        return Err(TpmError::EmptySelection);
    }
    for &i in selection {
        check_pcr_index(i)?;
    }
    if selection.windows(2).any(|w| w[0] >= w[1]) {
        return Err(TpmError::UnsortedSelection);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SealedBlob {
    pub nonce: [u8; SEAL_NONCE_LEN],
    pub ciphertext: Vec<u8>,
    pub tag: [u8; SEAL_TAG_LEN],
}

impl Encode for SealedBlob {
    fn encode_fields(&self, enc: &mut Encoder) {
        enc.bytes(&self.nonce).bytes(&self.ciphertext).bytes(&self.tag);
    }
}

impl Decode for SealedBlob {
    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(SealedBlob { nonce: dec.array()?, ciphertext: dec.bytes()?.to_vec(), tag: dec.array()? })
    }
}

/// SHA-256 counter-mode byte stream.
#[derive(Clone)]
struct RngStream {
    state: [u8; 32],
    counter: u64,
    block: [u8; 32],
    used: usize,
}

impl RngStream {
    fn new(state: [u8; 32]) -> Self {
        RngStream { state, counter: 0, block: [0; 32], used: 32 }
    }

    fn fill(&mut self, out: &mut [u8]) {
        for b in out {
            if self.used == 32 {
                self.block = hash_parts(&[&self.state, &self.counter.to_be_bytes()]).0;
                self.counter += 1;
                self.used = 0;
            }
            *b = self.block[self.used];
            self.used += 1;
        }
    }
}

fn expand(seed: &[u8; 32], purpose: &str) -> [u8; 32] {
    hash_parts(&[b"poi/tpm/", purpose.as_bytes(), b"/", seed]).0
}

pub struct TpmState {
    endorsement_secret: [u8; 32],
    attestation: KeyPair,
    storage_secret: [u8; 32],
    pcrs: PcrBank,
    event_log: Vec<EventLogEntry>,
    rng: RngStream,
}

impl TpmState {
    /// Deterministically manufactures a TPM from `seed`.
    pub fn create(seed: &[u8; 32]) -> Self {
        let endorsement_secret = expand(seed, "ek");
        TpmState {
            attestation: KeyPair::from_seed(&expand(&endorsement_secret, "aik")),
            storage_secret: expand(&endorsement_secret, "srk"),
            endorsement_secret,
            pcrs: PcrBank::default(),
            event_log: Vec::new(),
            rng: RngStream::new(expand(seed, "rng")),
        }
    }

    pub fn attestation_public_key(&self) -> PublicKey {
        self.attestation.public
    }

    /// SHA-256 of the attestation public key: this TPM's miner label.
    pub fn identity_label(&self) -> Digest {
        self.attestation.public.label()
    }

    pub fn pcrs(&self) -> &PcrBank {
        &self.pcrs
    }

    pub fn event_log(&self) -> &[EventLogEntry] {
        &self.event_log
    }

    /// True before any measurement has been extended.
    pub fn is_fresh(&self) -> bool {
        self.event_log.is_empty() && self.pcrs.is_reset()
    }

    pub fn pcr_extend(&mut self, index: u8, measured: Digest, message: &str) -> Result<Digest, TpmError> {
        let value = self.pcrs.extend(index, &measured)?;
        self.event_log.push(EventLogEntry { pcr_index: index, measured_digest: measured, message: message.into() });
        Ok(value)
    }

    pub fn quote(&self, pcr_selection: &[u8], qualifying_data: &[u8]) -> Result<AttestationQuote, TpmError> {
        validate_selection(pcr_selection)?;
        let qualifying_data = pad_qualifying_data(qualifying_data)?;
        let pcr_composite = self.pcrs.composite(pcr_selection)?;
        let tbs = AttestationQuote::signed_bytes(&TPM_GENERATED_VALUE, pcr_selection, &pcr_composite, &qualifying_data);
        Ok(AttestationQuote {
            magic: TPM_GENERATED_VALUE,
            pcr_selection: pcr_selection.to_vec(),
            pcr_composite,
            qualifying_data,
            signature: crypto::sign(&self.attestation.secret, &tbs),
        })
    }

    /// Signs caller-supplied data with the attestation key, refusing anything
    /// that could pass for TPM-generated content.
    pub fn sign_external(&self, data: &[u8]) -> Result<Signature, TpmError> {
        if data.starts_with(&TPM_GENERATED_VALUE) {
            return Err(TpmError::RefusedForgedQuote);
        }
        Ok(crypto::sign(&self.attestation.secret, data))
    }

    pub fn get_random(&mut self, n: usize) -> Vec<u8> {
        let mut out = alloc::vec![0u8; n];
        self.rng.fill(&mut out);
        out
    }

    pub fn seal(&mut self, data: &[u8]) -> SealedBlob {
        let nonce: [u8; SEAL_NONCE_LEN] = self.get_random(SEAL_NONCE_LEN).try_into().expect("16 bytes");
        let cipher = SealCipher::new(&self.storage_secret.into());
        let mut buf = data.to_vec();
        let tag = cipher
            .encrypt_inout_detached(&nonce.into(), b"", buf.as_mut_slice().into())
            .expect("AES-GCM encryption of in-memory data");
        SealedBlob { nonce, ciphertext: buf, tag: tag.into() }
    }

    pub fn unseal(&self, blob: &SealedBlob) -> Result<Vec<u8>, TpmError> {
        let cipher = SealCipher::new(&self.storage_secret.into());
        let mut buf = blob.ciphertext.clone();
        cipher
            .decrypt_inout_detached(&blob.nonce.into(), b"", buf.as_mut_slice().into(), &blob.tag.into())
            .map_err(|_| TpmError::UnsealFailed)?;
        Ok(buf)
    }

    /// Hierarchical key derived from the endorsement seed, restorable on the
    /// same TPM and unreachable from any other.
    pub fn derive_key(&self, label: &str) -> KeyPair {
        let seed = hash_parts(&[b"poi/tpm/derive/", &self.endorsement_secret, b"/", label.as_bytes()]);
        KeyPair::from_seed(&seed.0)
    }
}

impl VrfProver for TpmState {
    fn vrf_public_key(&self) -> PublicKey {
        self.attestation.public
    }

    fn vrf_prove(&mut self, input: &[u8]) -> VrfOutput {
        crypto::vrf_prove(&self.attestation.secret, input)
    }
}

/// Only the public view: attestation key, registers and event log.
impl Encode for TpmState {
    fn encode_fields(&self, enc: &mut Encoder) {
        enc.nested(&self.attestation.public).list(self.pcrs.registers()).list(&self.event_log);
    }
}

impl fmt::Debug for TpmState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TpmState")
            .field("attestation_public_key", &self.attestation.public)
            .field("endorsement_secret", &"<redacted>")
            .field("storage_secret", &"<redacted>")
            .field("pcrs", &self.pcrs)
            .field("event_log_len", &self.event_log.len())
            .finish()
    }
}
