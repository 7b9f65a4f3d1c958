// SPDX-License-Identifier: Apache-2.0

//! Enclave identity, signed enclave descriptors, key selectors, and the
//! attestation artifacts produced by the CPU.

use serde::{Deserialize, Serialize};

use crate::crypto::{self, Digest32, MacTag32, PublicKey, SigKeyPair, Signature};
use crate::tpm::policy::IdentityAssertion;
use crate::tpm::ObjectKind;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EnclaveIdentity {
    pub mrenclave: Digest32,
    pub mrsigner: Digest32,
    pub isvprodid: u16,
    pub isvsvn: u16,
    pub attributes: u64,
}

impl EnclaveIdentity {
    pub const CANONICAL_LEN: usize = 32 + 32 + 2 + 2 + 8;

    /// `mrenclave || mrsigner || isvprodid || isvsvn || attributes`, big-endian.
    pub fn canonical(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::CANONICAL_LEN);
        out.extend_from_slice(self.mrenclave.as_bytes());
        out.extend_from_slice(self.mrsigner.as_bytes());
        out.extend_from_slice(&self.isvprodid.to_be_bytes());
        out.extend_from_slice(&self.isvsvn.to_be_bytes());
        out.extend_from_slice(&self.attributes.to_be_bytes());
        out
    }

    pub fn from_canonical(bytes: &[u8]) -> Option<Self> {
        if bytes.len() != Self::CANONICAL_LEN {
            return None;
        }
        Some(Self {
            mrenclave: Digest32::from_slice(&bytes[0..32])?,
            mrsigner: Digest32::from_slice(&bytes[32..64])?,
            isvprodid: u16::from_be_bytes(bytes[64..66].try_into().ok()?),
            isvsvn: u16::from_be_bytes(bytes[66..68].try_into().ok()?),
            attributes: u64::from_be_bytes(bytes[68..76].try_into().ok()?),
        })
    }

    /// Value extended into the launch attributes PCR.
    pub fn attrs_digest(&self) -> Digest32 {
        let mut buf = Vec::with_capacity(12);
        buf.extend_from_slice(&self.isvprodid.to_be_bytes());
        buf.extend_from_slice(&self.isvsvn.to_be_bytes());
        buf.extend_from_slice(&self.attributes.to_be_bytes());
        crypto::hash(&buf)
    }
}

/// Enclave author's signed description of the expected enclave.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SigStruct {
    pub author_public: PublicKey,
    pub expected_mrenclave: Digest32,
    pub isvprodid: u16,
    pub isvsvn: u16,
    pub attributes: u64,
    pub signature: Signature,
}

impl SigStruct {
    pub fn body(
        author_public: &[u8],
        expected_mrenclave: &Digest32,
        isvprodid: u16,
        isvsvn: u16,
        attributes: u64,
    ) -> Vec<u8> {
        let mut out = (author_public.len() as u32).to_be_bytes().to_vec();
        out.extend_from_slice(author_public);
        out.extend_from_slice(expected_mrenclave.as_bytes());
        out.extend_from_slice(&isvprodid.to_be_bytes());
        out.extend_from_slice(&isvsvn.to_be_bytes());
        out.extend_from_slice(&attributes.to_be_bytes());
        out
    }

    pub fn body_digest(&self) -> Digest32 {
        crypto::hash(&Self::body(
            &self.author_public,
            &self.expected_mrenclave,
            self.isvprodid,
            self.isvsvn,
            self.attributes,
        ))
    }

    pub fn sign(
        author: &SigKeyPair,
        expected_mrenclave: Digest32,
        isvprodid: u16,
        isvsvn: u16,
        attributes: u64,
    ) -> Self {
        let digest = crypto::hash(&Self::body(&author.public, &expected_mrenclave, isvprodid, isvsvn, attributes));
        let signature = crypto::sign(author.secret_bytes(), &digest).expect("keypair secret is well formed");
        Self { author_public: author.public.clone(), expected_mrenclave, isvprodid, isvsvn, attributes, signature }
    }
}

/// Streaming-hash record contributed by one added page.
pub fn page_record(offset: u64, content: &[u8]) -> [u8; 40] {
    let mut rec = [0u8; 40];
    rec[..8].copy_from_slice(&offset.to_be_bytes());
    rec[8..].copy_from_slice(crypto::hash(content).as_bytes());
    rec
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KeyName {
    SealSym,
    SealMac,
    Launch,
    Sign,
    Attest,
}

impl KeyName {
    pub fn code(&self) -> u8 {
        match self {
            KeyName::SealSym => 1,
            KeyName::SealMac => 2,
            KeyName::Launch => 3,
            KeyName::Sign => 4,
            KeyName::Attest => 5,
        }
    }

    pub fn object_kind(&self) -> ObjectKind {
        match self {
            KeyName::SealSym => ObjectKind::SymmetricKey,
            KeyName::SealMac | KeyName::Launch => ObjectKind::HmacKey,
            KeyName::Sign => ObjectKind::SigningKey,
            KeyName::Attest => ObjectKind::AttestationKey,
        }
    }
}

/// Which identity fields an enclave-bound TPM object or NV index is tied to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IdentityBinding {
    pub mrenclave: bool,
    pub mrsigner: bool,
    pub isv: bool,
}

impl IdentityBinding {
    pub const ENCLAVE: IdentityBinding = IdentityBinding { mrenclave: true, mrsigner: true, isv: true };
    pub const SIGNER: IdentityBinding = IdentityBinding { mrenclave: false, mrsigner: true, isv: true };
    pub const SIGNER_ONLY: IdentityBinding = IdentityBinding { mrenclave: false, mrsigner: true, isv: false };

    pub fn assertion(&self, id: &EnclaveIdentity) -> IdentityAssertion {
        IdentityAssertion {
            mrenclave: self.mrenclave.then_some(id.mrenclave),
            mrsigner: self.mrsigner.then_some(id.mrsigner),
            isvprodid: self.isv.then_some(id.isvprodid),
            isvsvn: self.isv.then_some(id.isvsvn),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KeySelector {
    pub keyname: KeyName,
    pub use_mrenclave: bool,
    pub use_mrsigner: bool,
    pub keyid: Digest32,
}

impl KeySelector {
    pub fn new(keyname: KeyName, use_mrenclave: bool, use_mrsigner: bool, keyid: Digest32) -> Self {
        Self { keyname, use_mrenclave, use_mrsigner, keyid }
    }

    pub fn flags(&self) -> u8 {
        u8::from(self.use_mrenclave) | (u8::from(self.use_mrsigner) << 1)
    }

    /// Authorization binding: the selected measurement fields plus product id and SVN.
    pub fn binding(&self) -> IdentityBinding {
        IdentityBinding { mrenclave: self.use_mrenclave, mrsigner: self.use_mrsigner, isv: true }
    }
}

/// Key derivation material handed to the TPM as the creation context.
///
/// `keyname || flags || mrenclave? || mrsigner? || isvprodid || isvsvn ||
/// attributes || keyid || cpusvn || owner_binding`, big-endian.
pub fn kdm_context(selector: &KeySelector, id: &EnclaveIdentity, cpusvn: u16, owner_binding: &Digest32) -> Vec<u8> {
    let mut out = vec![selector.keyname.code(), selector.flags()];
    if selector.use_mrenclave {
        out.extend_from_slice(id.mrenclave.as_bytes());
    }
    if selector.use_mrsigner {
        out.extend_from_slice(id.mrsigner.as_bytes());
    }
    out.extend_from_slice(&id.isvprodid.to_be_bytes());
    out.extend_from_slice(&id.isvsvn.to_be_bytes());
    out.extend_from_slice(&id.attributes.to_be_bytes());
    out.extend_from_slice(selector.keyid.as_bytes());
    out.extend_from_slice(&cpusvn.to_be_bytes());
    out.extend_from_slice(owner_binding.as_bytes());
    out
}

/// Launch authorization: HMAC under the launch key over the token body.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EinitToken {
    pub body: Vec<u8>,
    pub tag: MacTag32,
}

impl EinitToken {
    /// `identity.canonical() || keyid`.
    pub fn body_for(id: &EnclaveIdentity, keyid: &Digest32) -> Vec<u8> {
        let mut out = id.canonical();
        out.extend_from_slice(keyid.as_bytes());
        out
    }

    pub fn identity(&self) -> Option<EnclaveIdentity> {
        EnclaveIdentity::from_canonical(self.body.get(..EnclaveIdentity::CANONICAL_LEN)?)
    }
}

/// Local attestation report.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub target: EnclaveIdentity,
    pub reporting: EnclaveIdentity,
    pub user_data: Vec<u8>,
    pub tag: MacTag32,
}

pub const REPORT_DATA_LEN: usize = 64;

impl Report {
    pub fn body(target: &EnclaveIdentity, reporting: &EnclaveIdentity, user_data: &[u8]) -> Vec<u8> {
        let mut out = target.canonical();
        out.extend_from_slice(&reporting.canonical());
        out.extend_from_slice(user_data);
        out
    }

    /// Body and tag together; this is what gets extended into the attestation PCR.
    pub fn canonical(&self) -> Vec<u8> {
        let mut out = Self::body(&self.target, &self.reporting, &self.user_data);
        out.extend_from_slice(self.tag.as_bytes());
        out
    }

    pub fn digest(&self) -> Digest32 {
        crypto::hash(&self.canonical())
    }
}
