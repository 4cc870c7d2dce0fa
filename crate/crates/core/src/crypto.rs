//! Hashing, deterministic signatures, issuer certificates and a
//! signature-based VRF.
//!
//! SHA-256 is used for every digest. Signatures are Ed25519, whose signing is
//! deterministic; the VRF relies on that uniqueness (`hash = SHA-256(proof)`,
//! `proof = sign(sk, "VRF" || input)`). Signature uniqueness does not hold for
//! adversarially generated keys, which is acceptable here because every
//! signing key in the system lives in an attested TPM.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

use ed25519_dalek::{Signer, SigningKey, VerifyingKey};
use sha2::{Digest as _, Sha256};

use crate::codec::{Decode, DecodeError, DecodeErrorKind, Decoder, Encode, Encoder};

pub const DIGEST_LEN: usize = 32;
pub const PUBLIC_KEY_LEN: usize = 32;
pub const SIGNATURE_LEN: usize = 64;

/// Domain prefix for VRF evaluations.
pub const VRF_DOMAIN: &[u8] = b"VRF";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CryptoError {
    /// The bytes do not encode a valid Ed25519 public key.
    MalformedPublicKey,
}

impl fmt::Display for CryptoError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CryptoError::MalformedPublicKey => f.write_str("malformed public key"),
        }
    }
}

/// A SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; DIGEST_LEN]);

    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn from_hex(s: &str) -> Result<Self, crate::hex::HexError> {
        crate::hex::decode_array(s).map(Digest)
    }

    pub fn to_hex(&self) -> alloc::string::String {
        crate::hex::encode(&self.0)
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        crate::hex::write(f, &self.0)
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Digest(")?;
        crate::hex::write(f, &self.0[..8])?;
        f.write_str("..)")
    }
}

impl Encode for Digest {
    fn encode_fields(&self, enc: &mut Encoder) {
        enc.bytes(&self.0);
    }
}

impl Decode for Digest {
    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        dec.array().map(Digest)
    }
}

pub fn hash(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}

/// SHA-256 over the concatenation of `parts`.
pub fn hash_parts(parts: &[&[u8]]) -> Digest {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    Digest(h.finalize().into())
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Signature(pub [u8; SIGNATURE_LEN]);

impl Signature {
    pub const ZERO: Signature = Signature([0u8; SIGNATURE_LEN]);
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Signature(")?;
        crate::hex::write(f, &self.0[..8])?;
        f.write_str("..)")
    }
}

impl Encode for Signature {
    fn encode_fields(&self, enc: &mut Encoder) {
        enc.bytes(&self.0);
    }
}

impl Decode for Signature {
    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        dec.array().map(Signature)
    }
}

/// A validated Ed25519 verification key.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct PublicKey(VerifyingKey);

impl PublicKey {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let arr: &[u8; PUBLIC_KEY_LEN] = bytes.try_into().map_err(|_| CryptoError::MalformedPublicKey)?;
        VerifyingKey::from_bytes(arr).map(PublicKey).map_err(|_| CryptoError::MalformedPublicKey)
    }

    pub fn to_bytes(&self) -> [u8; PUBLIC_KEY_LEN] {
        self.0.to_bytes()
    }

    /// SHA-256 of the key bytes; used as account address and miner label.
    pub fn label(&self) -> Digest {
        hash(&self.to_bytes())
    }
}

impl PartialOrd for PublicKey {
    fn partial_cmp(&self, other: &Self) -> Option<core::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for PublicKey {
    fn cmp(&self, other: &Self) -> core::cmp::Ordering {
        self.to_bytes().cmp(&other.to_bytes())
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("PublicKey(")?;
        crate::hex::write(f, &self.to_bytes())?;
        f.write_str(")")
    }
}

impl Encode for PublicKey {
    fn encode_fields(&self, enc: &mut Encoder) {
        enc.bytes(&self.to_bytes());
    }
}

impl Decode for PublicKey {
    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let at = dec.offset();
        let raw = dec.bytes()?;
        PublicKey::from_bytes(raw).map_err(|_| DecodeError { offset: at, kind: DecodeErrorKind::Invalid("public key") })
    }
}

/// Signing key material. Deliberately has no `Debug`, `Encode` or byte
/// accessor.
#[derive(Clone)]
pub struct SecretKey(SigningKey);

impl SecretKey {
    pub fn from_seed(seed: &[u8; 32]) -> Self {
        SecretKey(SigningKey::from_bytes(seed))
    }

    pub fn public_key(&self) -> PublicKey {
        PublicKey(self.0.verifying_key())
    }
}

#[derive(Clone)]
pub struct KeyPair {
    pub secret: SecretKey,
    pub public: PublicKey,
}

impl KeyPair {
    pub fn from_seed(seed: &[u8; 32]) -> Self {
        let secret = SecretKey::from_seed(seed);
        let public = secret.public_key();
        KeyPair { secret, public }
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair").field("public", &self.public).field("secret", &"<redacted>").finish()
    }
}

pub fn sign(secret: &SecretKey, message: &[u8]) -> Signature {
    Signature(secret.0.sign(message).to_bytes())
}

pub fn verify(public: &PublicKey, message: &[u8], sig: &Signature) -> bool {
    let sig = ed25519_dalek::Signature::from_bytes(&sig.0);
    public.0.verify_strict(message, &sig).is_ok()
}

/// Verification against raw key bytes; malformed keys are an error rather
/// than a silent `false`.
pub fn verify_raw(public: &[u8], message: &[u8], sig: &Signature) -> Result<bool, CryptoError> {
    let key = PublicKey::from_bytes(public)?;
    Ok(verify(&key, message, sig))
}

/// An issuer-signed binding of a subject public key to its label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Certificate {
    pub subject_public_key: [u8; PUBLIC_KEY_LEN],
    pub subject_label: Digest,
    pub issuer_id: Digest,
    pub issuer_signature: Signature,
}

impl Certificate {
    /// Bytes covered by `issuer_signature`.
    pub fn signed_bytes(
        subject_public_key: &[u8; PUBLIC_KEY_LEN],
        subject_label: &Digest,
        issuer_id: &Digest,
    ) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.bytes(subject_public_key).nested(subject_label).nested(issuer_id);
        enc.finish()
    }

    pub fn subject_key(&self) -> Result<PublicKey, CryptoError> {
        PublicKey::from_bytes(&self.subject_public_key)
    }
}

impl Encode for Certificate {
    fn encode_fields(&self, enc: &mut Encoder) {
        enc.bytes(&self.subject_public_key)
            .nested(&self.subject_label)
            .nested(&self.issuer_id)
            .nested(&self.issuer_signature);
    }
}

impl Decode for Certificate {
    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Certificate {
            subject_public_key: dec.array()?,
            subject_label: dec.nested()?,
            issuer_id: dec.nested()?,
            issuer_signature: dec.nested()?,
        })
    }
}

pub fn issue_certificate(issuer_secret: &SecretKey, issuer_id: Digest, subject_public_key: &PublicKey) -> Certificate {
    let subject_public_key = subject_public_key.to_bytes();
    let subject_label = hash(&subject_public_key);
    let tbs = Certificate::signed_bytes(&subject_public_key, &subject_label, &issuer_id);
    Certificate { subject_public_key, subject_label, issuer_id, issuer_signature: sign(issuer_secret, &tbs) }
}

/// The set of issuers whose certificates a node accepts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrustedRoots {
    roots: BTreeMap<Digest, PublicKey>,
}

impl TrustedRoots {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, issuer_id: Digest, key: PublicKey) {
        self.roots.insert(issuer_id, key);
    }

    pub fn get(&self, issuer_id: &Digest) -> Option<&PublicKey> {
        self.roots.get(issuer_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Digest, &PublicKey)> {
        self.roots.iter()
    }

    pub fn len(&self) -> usize {
        self.roots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }
}

impl FromIterator<(Digest, PublicKey)> for TrustedRoots {
    fn from_iter<I: IntoIterator<Item = (Digest, PublicKey)>>(iter: I) -> Self {
        TrustedRoots { roots: iter.into_iter().collect() }
    }
}

pub fn verify_certificate(cert: &Certificate, trusted_roots: &TrustedRoots) -> bool {
    let Some(issuer_key) = trusted_roots.get(&cert.issuer_id) else {
        return false;
    };
    if cert.subject_label != hash(&cert.subject_public_key) {
        return false;
    }
    let tbs = Certificate::signed_bytes(&cert.subject_public_key, &cert.subject_label, &cert.issuer_id);
    verify(issuer_key, &tbs, &cert.issuer_signature)
}

/// A certificate issuer. Its id is the SHA-256 of its public key.
#[derive(Debug, Clone)]
pub struct CertificateAuthority {
    keys: KeyPair,
    id: Digest,
}

impl CertificateAuthority {
    pub fn from_seed(seed: &[u8; 32]) -> Self {
        let keys = KeyPair::from_seed(seed);
        let id = keys.public.label();
        CertificateAuthority { keys, id }
    }

    pub fn id(&self) -> Digest {
        self.id
    }

    pub fn public_key(&self) -> PublicKey {
        self.keys.public
    }

    pub fn issue(&self, subject: &PublicKey) -> Certificate {
        issue_certificate(&self.keys.secret, self.id, subject)
    }

    pub fn root(&self) -> (Digest, PublicKey) {
        (self.id, self.keys.public)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VrfOutput {
    pub hash: Digest,
    pub proof: Signature,
}

impl Encode for VrfOutput {
    fn encode_fields(&self, enc: &mut Encoder) {
        enc.nested(&self.hash).nested(&self.proof);
    }
}

impl Decode for VrfOutput {
    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(VrfOutput { hash: dec.nested()?, proof: dec.nested()? })
    }
}

fn vrf_message(input: &[u8]) -> Vec<u8> {
    let mut m = Vec::with_capacity(VRF_DOMAIN.len() + input.len());
    m.extend_from_slice(VRF_DOMAIN);
    m.extend_from_slice(input);
    m
}

pub fn vrf_prove(secret: &SecretKey, input: &[u8]) -> VrfOutput {
    let proof = sign(secret, &vrf_message(input));
    VrfOutput { hash: hash(&proof.0), proof }
}

pub fn vrf_verify(public: &PublicKey, input: &[u8], out: &VrfOutput) -> bool {
    out.hash == hash(&out.proof.0) && verify(public, &vrf_message(input), &out.proof)
}

/// Anything able to evaluate the VRF under a key it holds.
pub trait VrfProver {
    fn vrf_public_key(&self) -> PublicKey;
    fn vrf_prove(&mut self, input: &[u8]) -> VrfOutput;
}

impl VrfProver for KeyPair {
    fn vrf_public_key(&self) -> PublicKey {
        self.public
    }

    fn vrf_prove(&mut self, input: &[u8]) -> VrfOutput {
        vrf_prove(&self.secret, input)
    }
}
