// SPDX-License-Identifier: Apache-2.0

//! Policy digest chaining.
//!
//! Each policy command folds `tag || canonical-args` into the running digest
//! with `hash_extend`, starting from all-zero. The same functions drive the
//! TPM's session evolution and trial (expected) policy computation.

use serde::{Deserialize, Serialize};

use super::pcr::{composite_of, PcrSelection};
use crate::crypto::{hash_extend, Digest32};

pub const TAG_LOCALITY: &[u8] = b"POLICY_LOCALITY";
pub const TAG_PCR: &[u8] = b"POLICY_PCR";
pub const TAG_IDENTITY: &[u8] = b"POLICY_ID";

pub const ID_MRENCLAVE: u8 = 0b0001;
pub const ID_MRSIGNER: u8 = 0b0010;
pub const ID_ISVPRODID: u8 = 0b0100;
pub const ID_ISVSVN: u8 = 0b1000;

/// Enclave identity fields asserted by microcode inside a policy session.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentityAssertion {
    pub mrenclave: Option<Digest32>,
    pub mrsigner: Option<Digest32>,
    pub isvprodid: Option<u16>,
    pub isvsvn: Option<u16>,
}

impl IdentityAssertion {
    pub fn bitmap(&self) -> u8 {
        let mut b = 0;
        if self.mrenclave.is_some() {
            b |= ID_MRENCLAVE;
        }
        if self.mrsigner.is_some() {
            b |= ID_MRSIGNER;
        }
        if self.isvprodid.is_some() {
            b |= ID_ISVPRODID;
        }
        if self.isvsvn.is_some() {
            b |= ID_ISVSVN;
        }
        b
    }

    /// `bitmap || mrenclave? || mrsigner? || isvprodid? || isvsvn?`, big-endian.
    pub fn canonical(&self) -> Vec<u8> {
        let mut out = vec![self.bitmap()];
        if let Some(d) = &self.mrenclave {
            out.extend_from_slice(d.as_bytes());
        }
        if let Some(d) = &self.mrsigner {
            out.extend_from_slice(d.as_bytes());
        }
        if let Some(v) = self.isvprodid {
            out.extend_from_slice(&v.to_be_bytes());
        }
        if let Some(v) = self.isvsvn {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out
    }
}

pub fn extend_locality(digest: &Digest32, min_locality: u8) -> Digest32 {
    let mut buf = TAG_LOCALITY.to_vec();
    buf.push(min_locality);
    hash_extend(digest, &buf)
}

/// `pcr_values` are the selected PCRs in ascending index order.
pub fn extend_pcr(digest: &Digest32, selection: &PcrSelection, pcr_values: &[Digest32]) -> Digest32 {
    let mut buf = TAG_PCR.to_vec();
    buf.extend_from_slice(&selection.to_be_bytes());
    buf.extend_from_slice(composite_of(pcr_values).as_bytes());
    hash_extend(digest, &buf)
}

pub fn extend_identity(digest: &Digest32, identity: &IdentityAssertion) -> Digest32 {
    let mut buf = TAG_IDENTITY.to_vec();
    buf.extend_from_slice(&identity.canonical());
    hash_extend(digest, &buf)
}

/// Offline computation of the digest a policy session must reach.
#[derive(Clone, Debug, Default)]
pub struct TrialPolicy {
    digest: Digest32,
}

impl TrialPolicy {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn locality(mut self, min: u8) -> Self {
        self.digest = extend_locality(&self.digest, min);
        self
    }

    pub fn pcr(mut self, selection: &PcrSelection, values: &[Digest32]) -> Self {
        self.digest = extend_pcr(&self.digest, selection, values);
        self
    }

    pub fn identity(mut self, identity: &IdentityAssertion) -> Self {
        self.digest = extend_identity(&self.digest, identity);
        self
    }

    pub fn digest(&self) -> Digest32 {
        self.digest
    }
}
