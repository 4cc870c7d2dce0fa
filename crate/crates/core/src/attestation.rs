//! Measured boot and remote attestation.
//!
//! A node proves its identity and integrity with an [`IntegrityReport`]: a
//! quote over the consensus PCRs bound to a caller-chosen value, the
//! CA-issued certificate of the attestation key, and optionally the event
//! log that produced the PCR values.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::codec::{Decode, DecodeError, DecodeErrorKind, Decoder, Encode, Encoder};
use crate::crypto::{verify_certificate, Certificate, Digest, TrustedRoots};
use crate::tpm::{
    self, AttestationQuote, EventLogEntry, PcrBank, TpmError, TpmState, CONSENSUS_PCRS, PCR_DYNAMIC, PCR_IMA,
    PCR_STATIC, QUALIFYING_DATA_LEN,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Static,
    Dynamic,
    Ima,
}

impl Stage {
    pub fn pcr(self) -> u8 {
        match self {
            Stage::Static => PCR_STATIC,
            Stage::Dynamic => PCR_DYNAMIC,
            Stage::Ima => PCR_IMA,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Static => "static",
            Stage::Dynamic => "dynamic",
            Stage::Ima => "ima",
        }
    }

    pub fn parse(s: &str) -> Option<Stage> {
        match s {
            "static" => Some(Stage::Static),
            "dynamic" => Some(Stage::Dynamic),
            "ima" => Some(Stage::Ima),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    pub stage: Stage,
    pub name: String,
    pub digest: Digest,
}

impl Component {
    pub fn new(stage: Stage, name: &str, digest: Digest) -> Self {
        Component { stage, name: name.into(), digest }
    }
}

/// What a platform measures at boot, in measurement order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MeasurementManifest {
    components: Vec<Component>,
}

impl MeasurementManifest {
    pub fn new(components: Vec<Component>) -> Result<Self, AttestationError> {
        if components.is_empty() {
            return Err(AttestationError::EmptyManifest);
        }
        if components.windows(2).any(|w| w[0].stage > w[1].stage) {
            return Err(AttestationError::StageOrder);
        }
        Ok(MeasurementManifest { components })
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    /// Copy with the digest of component `index` replaced.
    pub fn with_digest(&self, index: usize, digest: Digest) -> Self {
        let mut components = self.components.clone();
        components[index].digest = digest;
        MeasurementManifest { components }
    }

    /// The composite a TPM reports after booting this manifest, computed
    /// without a TPM.
    pub fn expected_composite(&self) -> Digest {
        let mut bank = PcrBank::default();
        for c in &self.components {
            bank.extend(c.stage.pcr(), &c.digest).expect("stage PCRs are in range");
        }
        bank.composite(&CONSENSUS_PCRS).expect("consensus selection is valid")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AttestationError {
    EmptyManifest,
    StageOrder,
    /// Measured boot requires a TPM that has not been extended yet.
    NotFresh,
    CertificateKeyMismatch,
    Tpm(TpmError),
}

impl From<TpmError> for AttestationError {
    fn from(e: TpmError) -> Self {
        AttestationError::Tpm(e)
    }
}

impl fmt::Display for AttestationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttestationError::EmptyManifest => f.write_str("measurement manifest is empty"),
            AttestationError::StageOrder => f.write_str("manifest stages must run static, dynamic, ima"),
            AttestationError::NotFresh => f.write_str("measured boot on a TPM that is not fresh"),
            AttestationError::CertificateKeyMismatch => {
                f.write_str("certificate subject is not this TPM's attestation key")
            }
            AttestationError::Tpm(e) => write!(f, "tpm: {e}"),
        }
    }
}

pub fn simulate_measured_boot(tpm: &mut TpmState, manifest: &MeasurementManifest) -> Result<(), AttestationError> {
    if !tpm.is_fresh() {
        return Err(AttestationError::NotFresh);
    }
    for c in manifest.components() {
        tpm.pcr_extend(c.stage.pcr(), c.digest, &c.name)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntegrityReport {
    pub quote: AttestationQuote,
    pub identity_certificate: Certificate,
    pub event_log: Option<Vec<EventLogEntry>>,
}

struct LogList(Vec<EventLogEntry>);

impl Encode for LogList {
    fn encode_fields(&self, enc: &mut Encoder) {
        enc.list(&self.0);
    }
}

impl Decode for LogList {
    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        dec.list().map(LogList)
    }
}

impl Encode for IntegrityReport {
    fn encode_fields(&self, enc: &mut Encoder) {
        let log = self.event_log.clone().map(LogList);
        enc.nested(&self.quote).nested(&self.identity_certificate).option(log.as_ref());
    }
}

impl Decode for IntegrityReport {
    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(IntegrityReport {
            quote: dec.nested()?,
            identity_certificate: dec.nested()?,
            event_log: dec.option::<LogList>()?.map(|l| l.0),
        })
    }
}

pub fn build_report(
    tpm: &TpmState,
    qualifying_data: &[u8; QUALIFYING_DATA_LEN],
    cert: &Certificate,
    include_log: bool,
) -> Result<IntegrityReport, AttestationError> {
    if cert.subject_public_key != tpm.attestation_public_key().to_bytes() {
        return Err(AttestationError::CertificateKeyMismatch);
    }
    Ok(IntegrityReport {
        quote: tpm.quote(&CONSENSUS_PCRS, qualifying_data)?,
        identity_certificate: cert.clone(),
        event_log: include_log.then(|| tpm.event_log().to_vec()),
    })
}

/// Allowed PCR composites.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IntegrityList {
    allowed: BTreeSet<Digest>,
}

impl IntegrityList {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, composite: Digest) {
        self.allowed.insert(composite);
    }

    pub fn remove(&mut self, composite: &Digest) {
        self.allowed.remove(composite);
    }

    pub fn contains(&self, composite: &Digest) -> bool {
        self.allowed.contains(composite)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Digest> {
        self.allowed.iter()
    }

    pub fn len(&self) -> usize {
        self.allowed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.allowed.is_empty()
    }
}

impl FromIterator<Digest> for IntegrityList {
    fn from_iter<I: IntoIterator<Item = Digest>>(iter: I) -> Self {
        IntegrityList { allowed: iter.into_iter().collect() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AttestationFailure {
    BadCertificate,
    BadSignature,
    BadQualifyingData,
    IntegrityNotListed,
    LogMismatch,
}

impl AttestationFailure {
    pub const ALL: [AttestationFailure; 5] = [
        AttestationFailure::BadCertificate,
        AttestationFailure::BadSignature,
        AttestationFailure::BadQualifyingData,
        AttestationFailure::IntegrityNotListed,
        AttestationFailure::LogMismatch,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttestationFailure::BadCertificate => "bad_certificate",
            AttestationFailure::BadSignature => "bad_signature",
            AttestationFailure::BadQualifyingData => "bad_qualifying_data",
            AttestationFailure::IntegrityNotListed => "integrity_not_listed",
            AttestationFailure::LogMismatch => "log_mismatch",
        }
    }
}

impl fmt::Display for AttestationFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttestationVerdict {
    Accepted,
    Rejected(AttestationFailure),
}

impl AttestationVerdict {
    pub fn accepted(&self) -> bool {
        matches!(self, AttestationVerdict::Accepted)
    }

    pub fn failure(&self) -> Option<AttestationFailure> {
        match self {
            AttestationVerdict::Accepted => None,
            AttestationVerdict::Rejected(f) => Some(*f),
        }
    }
}

/// Remote-attestation checks in fixed order: certificate, quote signature,
/// binding, integrity membership, then event-log replay when a log is
/// attached. The first failing check names the verdict.
pub fn verify_report(
    report: &IntegrityReport,
    trusted_roots: &TrustedRoots,
    integrity_list: &IntegrityList,
    expected_qualifying_data: &[u8; QUALIFYING_DATA_LEN],
) -> AttestationVerdict {
    use AttestationFailure::*;
    let cert = &report.identity_certificate;
    if !verify_certificate(cert, trusted_roots) {
        return AttestationVerdict::Rejected(BadCertificate);
    }
    let signed = cert.subject_key().is_ok_and(|key| tpm::verify_quote(&key, &report.quote));
    if !signed {
        return AttestationVerdict::Rejected(BadSignature);
    }
    if &report.quote.qualifying_data != expected_qualifying_data {
        return AttestationVerdict::Rejected(BadQualifyingData);
    }
    if !integrity_list.contains(&report.quote.pcr_composite) {
        return AttestationVerdict::Rejected(IntegrityNotListed);
    }
    if let Some(log) = &report.event_log {
        match replay_event_log(log, &report.quote.pcr_selection) {
            Ok(c) if c == report.quote.pcr_composite => {}
            _ => return AttestationVerdict::Rejected(LogMismatch),
        }
    }
    AttestationVerdict::Accepted
}

/// Re-derives the composite over `selection` by replaying `log` into an
/// all-zero bank.
pub fn replay_event_log(log: &[EventLogEntry], selection: &[u8]) -> Result<Digest, TpmError> {
    let mut bank = PcrBank::default();
    for entry in log {
        bank.extend(entry.pcr_index, &entry.measured_digest)?;
    }
    bank.composite(selection)
}

impl Encode for MeasurementManifest {
    fn encode_fields(&self, enc: &mut Encoder) {
        let mut inner = Encoder::new();
        for c in &self.components {
            let mut e = Encoder::new();
            e.u8(c.stage as u8).bytes(c.name.as_bytes()).nested(&c.digest);
            inner.bytes(&e.finish());
        }
        enc.bytes(&inner.finish());
    }
}

impl Decode for MeasurementManifest {
    fn decode_fields(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let at = dec.offset();
        let raw = dec.byte_list()?;
        let mut components = Vec::with_capacity(raw.len());
        for item in raw {
            let mut d = Decoder::new(&item);
            let stage = match d.u8()? {
                0 => Stage::Static,
                1 => Stage::Dynamic,
                2 => Stage::Ima,
                t => return Err(DecodeError { offset: at, kind: DecodeErrorKind::UnknownTag(t) }),
            };
            let name = core::str::from_utf8(d.bytes()?)
                .map_err(|_| DecodeError { offset: at, kind: DecodeErrorKind::Invalid("component name") })?
                .into();
            let digest = d.nested()?;
            d.finish()?;
            components.push(Component { stage, name, digest });
        }
        MeasurementManifest::new(components)
            .map_err(|_| DecodeError { offset: at, kind: DecodeErrorKind::Invalid("measurement manifest") })
    }
}
