// SPDX-License-Identifier: Apache-2.0

//! Command and response marshalling for the simulated TPM.
//!
//! Commands travel over the secure bus as `bincode`-encoded [`TpmCommand`]
//! values; the device answers with an encoded `Result<TpmResponse, TpmError>`.

use serde::{Deserialize, Serialize};
use std::fmt;

use super::pcr::PcrSelection;
use super::policy::IdentityAssertion;
use super::TpmError;
use crate::crypto::{hash, Digest32, MacTag32, Signature, SymKey128};

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Handle(pub u32);

impl fmt::Debug for Handle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Handle({:#010x})", self.0)
    }
}

impl fmt::Display for Handle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#010x}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObjectKind {
    HmacKey,
    SigningKey,
    SymmetricKey,
    AttestationKey,
}

impl ObjectKind {
    pub fn label(&self) -> &'static str {
        match self {
            ObjectKind::HmacKey => "HMAC-KEY",
            ObjectKind::SigningKey => "SIGNING-KEY",
            ObjectKind::SymmetricKey => "SYMMETRIC-KEY",
            ObjectKind::AttestationKey => "ATTESTATION-KEY",
        }
    }

    pub fn key_len(&self) -> usize {
        match self {
            ObjectKind::SymmetricKey => 16,
            _ => 32,
        }
    }

    pub fn has_public(&self) -> bool {
        matches!(self, ObjectKind::SigningKey | ObjectKind::AttestationKey)
    }

    pub(crate) fn to_byte(self) -> u8 {
        match self {
            ObjectKind::HmacKey => 1,
            ObjectKind::SigningKey => 2,
            ObjectKind::SymmetricKey => 3,
            ObjectKind::AttestationKey => 4,
        }
    }

    pub(crate) fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            1 => ObjectKind::HmacKey,
            2 => ObjectKind::SigningKey,
            3 => ObjectKind::SymmetricKey,
            4 => ObjectKind::AttestationKey,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectTemplate {
    pub kind: ObjectKind,
    pub creation_context: Vec<u8>,
    pub auth_policy: Digest32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NvKind {
    Counter,
    Data,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NvValue {
    Counter(u64),
    Data(Vec<u8>),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NvPublic {
    pub index: Handle,
    pub kind: NvKind,
    pub size: u32,
    pub auth_policy: Digest32,
}

/// Signed PCR report.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quote {
    pub selection: PcrSelection,
    pub composite: Digest32,
    pub clock: u64,
    pub qualifying: Vec<u8>,
    pub signature: Signature,
}

impl Quote {
    /// `"QUOTE" || selection || composite || clock || len(qualifying) || qualifying`.
    pub fn signed_body(selection: &PcrSelection, composite: &Digest32, clock: u64, qualifying: &[u8]) -> Vec<u8> {
        let mut out = b"QUOTE".to_vec();
        out.extend_from_slice(&selection.to_be_bytes());
        out.extend_from_slice(composite.as_bytes());
        out.extend_from_slice(&clock.to_be_bytes());
        out.extend_from_slice(&(qualifying.len() as u32).to_be_bytes());
        out.extend_from_slice(qualifying);
        out
    }

    pub fn signed_digest(&self) -> Digest32 {
        hash(&Self::signed_body(&self.selection, &self.composite, self.clock, &self.qualifying))
    }
}

/// Signed clock reading.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeRecord {
    pub ticks: u64,
    pub qualifying: Vec<u8>,
    pub signature: Signature,
}

impl TimeRecord {
    pub fn signed_body(ticks: u64, qualifying: &[u8]) -> Vec<u8> {
        let mut out = b"TIME".to_vec();
        out.extend_from_slice(&ticks.to_be_bytes());
        out.extend_from_slice(&(qualifying.len() as u32).to_be_bytes());
        out.extend_from_slice(qualifying);
        out
    }

    pub fn signed_digest(&self) -> Digest32 {
        hash(&Self::signed_body(self.ticks, &self.qualifying))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, strum::IntoStaticStr)]
pub enum TpmCommand {
    TakeOwnership { owner_secret: Vec<u8> },
    PolicyStartSession,
    PolicyLocality { session: Handle, min: u8 },
    PolicyPcr { session: Handle, selection: PcrSelection },
    PolicyIdentity { session: Handle, identity: IdentityAssertion },
    PolicyGetDigest { session: Handle },
    CreatePrimary { template: ObjectTemplate },
    CreateWrapped { parent: Handle, session: Option<Handle>, template: ObjectTemplate },
    Load { parent: Handle, session: Option<Handle>, blob: Vec<u8> },
    HmacSign { handle: Handle, session: Option<Handle>, msg: Vec<u8> },
    Sign { handle: Handle, session: Option<Handle>, digest: Digest32 },
    EncryptDecrypt { handle: Handle, session: Option<Handle>, nonce: u64, data: Vec<u8> },
    ReleaseSymmetric { handle: Handle, session: Option<Handle> },
    VerifySignature { public: Vec<u8>, digest: Digest32, signature: Signature },
    HashSequenceStart,
    HashSequenceUpdate { seq: Handle, chunk: Vec<u8> },
    HashSequenceComplete { seq: Handle },
    PcrExtend { index: u8, value: Digest32 },
    PcrReset { index: u8 },
    PcrRead { index: u8 },
    NvDefineSpace { index: Handle, kind: NvKind, size: u32, auth_policy: Digest32 },
    NvReadPublic { index: Handle },
    NvIncrement { index: Handle, session: Option<Handle> },
    NvRead { index: Handle, session: Option<Handle> },
    NvWrite { index: Handle, session: Option<Handle>, payload: Vec<u8> },
    ReadClock,
    GetTime { handle: Handle, session: Option<Handle>, qualifying: Vec<u8> },
    Quote { handle: Handle, session: Option<Handle>, selection: PcrSelection, qualifying: Vec<u8> },
}

impl TpmCommand {
    pub fn name(&self) -> &'static str {
        self.into()
    }

    pub fn encode(&self) -> Vec<u8> {
        bincode::serialize(self).expect("command serialization is infallible")
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, TpmError> {
        bincode::deserialize(bytes).map_err(|_| TpmError::BadCommand)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TpmResponse {
    Ok,
    Psk(SymKey128),
    Handle(Handle),
    Created { handle: Handle, public: Option<Vec<u8>> },
    Digest(Digest32),
    WrapBlob(Vec<u8>),
    Mac(MacTag32),
    Signature(Signature),
    Data(Vec<u8>),
    SymKey(SymKey128),
    Bool(bool),
    Nv(NvValue),
    NvPublic(NvPublic),
    Clock(u64),
    Time(TimeRecord),
    Quote(Quote),
}

pub type TpmResult = Result<TpmResponse, TpmError>;

pub fn encode_result(result: &TpmResult) -> Vec<u8> {
    bincode::serialize(result).expect("response serialization is infallible")
}

pub fn decode_result(bytes: &[u8]) -> Result<TpmResult, TpmError> {
    bincode::deserialize(bytes).map_err(|_| TpmError::BadCommand)
}
