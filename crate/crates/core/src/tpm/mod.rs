// SPDX-License-Identifier: Apache-2.0

//! A simulated TPM 2.0 subset.
//!
//! Covers the commands the enclave engine maps onto the coprocessor: key
//! creation from the primary seed, wrapped keys, policy sessions, PCRs with
//! locality masks, NV counters and data, hash sequences, the 30 ns clock,
//! HMAC/sign/encrypt, quotes, and a persistable state image.
//!
//! The device is a single-owner state machine. Every command enters through
//! [`TpmDevice::execute`] together with the locality it arrived on.

pub mod client;
pub mod command;
pub mod pcr;
pub mod policy;
mod state;

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

use crate::crypto::{self, Digest32, StreamHasher, SymKey128};
pub use client::{LocalityPort, TpmCall};
pub use command::{
    Handle, NvKind, NvPublic, NvValue, ObjectKind, ObjectTemplate, Quote, TimeRecord, TpmCommand, TpmResponse,
    TpmResult,
};
use pcr::{composite_of, PcrBank, PcrSelection};
use policy::IdentityAssertion;
pub use state::STATE_HEADER;

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, Error, Serialize, Deserialize, strum::EnumIter, strum::IntoStaticStr,
)]
#[strum(serialize_all = "SCREAMING_SNAKE_CASE")]
pub enum TpmError {
    #[error("ownership already taken")]
    AlreadyOwned,
    #[error("device has no owner")]
    NotOwned,
    #[error("locality out of range 0..=4")]
    InvalidLocality,
    #[error("unknown policy session")]
    UnknownSession,
    #[error("identity assertions require a locality-4 session")]
    IdentityLocality,
    #[error("wrapped object failed integrity check")]
    BadWrap,
    #[error("unknown parent object")]
    UnknownParent,
    #[error("policy digest does not match the object's authorization policy")]
    PolicyFail,
    #[error("object or index kind does not support this command")]
    KindMismatch,
    #[error("malformed key material")]
    MalformedKey,
    #[error("unknown hash sequence")]
    UnknownSequence,
    #[error("command not permitted at this locality")]
    LocalityFail,
    #[error("PCR index out of range")]
    BadIndex,
    #[error("unknown handle")]
    UnknownHandle,
    #[error("PCR selection is empty")]
    EmptySelection,
    #[error("persisted state is corrupt")]
    CorruptState,
    #[error("persisted state has an unsupported version")]
    VersionMismatch,
    #[error("NV index already defined")]
    NvDefined,
    #[error("payload exceeds NV index size")]
    NvTooLarge,
    #[error("malformed command")]
    BadCommand,
}

impl TpmError {
    pub fn code(&self) -> &'static str {
        self.into()
    }
}

/// Command origin privilege, 0 (public) through 4 (CPU microcode).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Locality(u8);

impl Locality {
    pub const L0: Locality = Locality(0);
    pub const L1: Locality = Locality(1);
    pub const L2: Locality = Locality(2);
    pub const L3: Locality = Locality(3);
    pub const L4: Locality = Locality(4);

    pub fn new(value: u8) -> Result<Self, TpmError> {
        if value <= 4 {
            Ok(Self(value))
        } else {
            Err(TpmError::InvalidLocality)
        }
    }

    pub fn value(&self) -> u8 {
        self.0
    }

    pub(crate) fn bit(&self) -> u8 {
        1 << self.0
    }
}

impl fmt::Debug for Locality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}", self.0)
    }
}

const SESSION_BASE: u32 = 0x0300_0000;
const TRANSIENT_BASE: u32 = 0x8000_0000;
/// Start of the NV index range.
pub const NV_BASE: u32 = 0x0100_0000;

#[derive(Clone)]
pub struct TpmObject {
    pub handle: Handle,
    pub kind: ObjectKind,
    secret: Vec<u8>,
    pub public: Option<Vec<u8>>,
    pub auth_policy: Digest32,
    pub creation_context: Vec<u8>,
}

impl fmt::Debug for TpmObject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TpmObject")
            .field("handle", &self.handle)
            .field("kind", &self.kind)
            .field("auth_policy", &self.auth_policy)
            .finish_non_exhaustive()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NvIndex {
    pub index: Handle,
    pub kind: NvKind,
    pub size: u32,
    pub counter: u64,
    pub data: Vec<u8>,
    pub auth_policy: Digest32,
}

#[derive(Clone, Debug)]
pub struct PolicySession {
    pub handle: Handle,
    pub digest: Digest32,
    pub locality: Locality,
}

struct HashSequence {
    locality: Locality,
    hasher: StreamHasher,
}

/// Tick cost per command name, in 30 ns units.
#[derive(Clone, Debug)]
pub struct ClockModel {
    pub default_cost: u64,
    pub costs: BTreeMap<&'static str, u64>,
}

impl Default for ClockModel {
    fn default() -> Self {
        Self { default_cost: 1, costs: BTreeMap::new() }
    }
}

impl ClockModel {
    pub fn cost(&self, command: &str) -> u64 {
        self.costs.get(command).copied().unwrap_or(self.default_cost)
    }
}

pub struct TpmDevice {
    primary_seed: Digest32,
    endorsement_seed: Digest32,
    owner_secret: Option<Vec<u8>>,
    channel_psk: Option<SymKey128>,
    pcrs: PcrBank,
    objects: BTreeMap<Handle, TpmObject>,
    nv: BTreeMap<Handle, NvIndex>,
    sessions: BTreeMap<Handle, PolicySession>,
    sequences: BTreeMap<Handle, HashSequence>,
    ticks: u64,
    clock_model: ClockModel,
    create_counter: u64,
    next_session: u32,
    next_transient: u32,
}

impl fmt::Debug for TpmDevice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TpmDevice")
            .field("owned", &self.owner_secret.is_some())
            .field("objects", &self.objects.len())
            .field("nv", &self.nv.len())
            .field("ticks", &self.ticks)
            .finish_non_exhaustive()
    }
}

impl TpmDevice {
    pub fn new(primary_seed: Digest32, endorsement_seed: Digest32) -> Self {
        Self::with_parts(primary_seed, endorsement_seed, PcrBank::default())
    }

    /// Device whose seeds are derived from a manufacturing seed.
    pub fn from_manufacturing_seed(seed: &[u8]) -> Self {
        let seed = if seed.is_empty() { b"\0".as_slice() } else { seed };
        let primary = crypto::kdf_digest(seed, "PRIMARY-SEED", b"").expect("non-empty seed");
        let endorsement = crypto::kdf_digest(seed, "ENDORSEMENT-SEED", b"").expect("non-empty seed");
        Self::new(primary, endorsement)
    }

    fn with_parts(primary_seed: Digest32, endorsement_seed: Digest32, pcrs: PcrBank) -> Self {
        Self {
            primary_seed,
            endorsement_seed,
            owner_secret: None,
            channel_psk: None,
            pcrs,
            objects: BTreeMap::new(),
            nv: BTreeMap::new(),
            sessions: BTreeMap::new(),
            sequences: BTreeMap::new(),
            ticks: 0,
            clock_model: ClockModel::default(),
            create_counter: 0,
            next_session: 0,
            next_transient: 0,
        }
    }

    pub fn set_clock_model(&mut self, model: ClockModel) {
        self.clock_model = model;
    }

    pub fn is_owned(&self) -> bool {
        self.owner_secret.is_some()
    }

    /// Pre-shared channel key, available to platform provisioning once owned.
    pub fn channel_psk(&self) -> Option<SymKey128> {
        self.channel_psk
    }

    /// Hash of the owner secret, shared with the CPU as its owner epoch.
    pub fn owner_epoch(&self) -> Option<Digest32> {
        self.owner_secret.as_deref().map(crypto::hash)
    }

    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    pub fn pcr_bank(&self) -> &PcrBank {
        &self.pcrs
    }

    pub fn nv_indices(&self) -> impl Iterator<Item = &NvIndex> {
        self.nv.values()
    }

    pub fn objects(&self) -> impl Iterator<Item = &TpmObject> {
        self.objects.values()
    }

    /// Test-harness hook: raw key material of a loaded object.
    #[doc(hidden)]
    pub fn debug_object_secret(&self, handle: Handle) -> Option<Vec<u8>> {
        self.objects.get(&handle).map(|o| o.secret.clone())
    }

    /// Direct command port at a fixed locality.
    pub fn at(&mut self, locality: Locality) -> LocalityPort<'_> {
        LocalityPort::new(self, locality)
    }

    /// Decodes and executes one marshalled command; always yields an encoded result.
    pub fn process(&mut self, locality: u8, payload: &[u8]) -> Vec<u8> {
        let result = Locality::new(locality)
            .and_then(|l| TpmCommand::decode(payload).map(|c| (l, c)))
            .and_then(|(l, c)| self.execute(l, &c));
        command::encode_result(&result)
    }

    pub fn execute(&mut self, locality: Locality, cmd: &TpmCommand) -> TpmResult {
        self.ticks = self.ticks.saturating_add(self.clock_model.cost(cmd.name()));
        self.dispatch(locality, cmd)
    }

    fn dispatch(&mut self, locality: Locality, cmd: &TpmCommand) -> TpmResult {
        use TpmCommand as C;
        use TpmResponse as R;
        match cmd {
            C::TakeOwnership { owner_secret } => self.take_ownership(owner_secret).map(R::Psk),
            C::PolicyStartSession => Ok(R::Handle(self.start_session(locality))),
            C::PolicyLocality { session, min } => self.policy_locality(locality, *session, *min).map(R::Digest),
            C::PolicyPcr { session, selection } => self.policy_pcr(locality, *session, selection).map(R::Digest),
            C::PolicyIdentity { session, identity } => {
                self.policy_identity(locality, *session, identity).map(R::Digest)
            }
            C::PolicyGetDigest { session } => self.session(locality, *session).map(|s| R::Digest(s.digest)),
            C::CreatePrimary { template } => self.create_primary(template),
            C::CreateWrapped { parent, session, template } => {
                self.create_wrapped(locality, *parent, *session, template).map(R::WrapBlob)
            }
            C::Load { parent, session, blob } => self.load(locality, *parent, *session, blob),
            C::HmacSign { handle, session, msg } => {
                let key = self.use_object(locality, *handle, *session, &[ObjectKind::HmacKey])?;
                Ok(R::Mac(crypto::mac(&key.secret, msg).map_err(|_| TpmError::MalformedKey)?))
            }
            C::Sign { handle, session, digest } => {
                let key = self.use_object(locality, *handle, *session, &[ObjectKind::SigningKey])?;
                Ok(R::Signature(crypto::sign(&key.secret, digest).map_err(|_| TpmError::MalformedKey)?))
            }
            C::EncryptDecrypt { handle, session, nonce, data } => {
                let key = self.use_object(locality, *handle, *session, &[ObjectKind::SymmetricKey])?;
                let key = SymKey128::from_slice(&key.secret).ok_or(TpmError::MalformedKey)?;
                Ok(R::Data(crypto::ctr_crypt(&key, *nonce, data)))
            }
            C::ReleaseSymmetric { handle, session } => {
                // Raw key material only leaves toward microcode.
                if locality != Locality::L4 {
                    self.discard_session(*session);
                    return Err(TpmError::LocalityFail);
                }
                let key = self.use_object(locality, *handle, *session, &[ObjectKind::SymmetricKey])?;
                Ok(R::SymKey(SymKey128::from_slice(&key.secret).ok_or(TpmError::MalformedKey)?))
            }
            C::VerifySignature { public, digest, signature } => {
                crypto::verify(public, digest, signature).map(R::Bool).map_err(|_| TpmError::MalformedKey)
            }
            C::HashSequenceStart => {
                let h = self.alloc_transient();
                self.sequences.insert(h, HashSequence { locality, hasher: StreamHasher::new() });
                Ok(R::Handle(h))
            }
            C::HashSequenceUpdate { seq, chunk } => {
                let s = self.sequences.get_mut(seq).ok_or(TpmError::UnknownSequence)?;
                if s.locality != locality {
                    return Err(TpmError::LocalityFail);
                }
                s.hasher.update(chunk);
                Ok(R::Ok)
            }
            C::HashSequenceComplete { seq } => {
                let s = self.sequences.get(seq).ok_or(TpmError::UnknownSequence)?;
                if s.locality != locality {
                    return Err(TpmError::LocalityFail);
                }
                let s = self.sequences.remove(seq).expect("sequence present");
                Ok(R::Digest(s.hasher.finish()))
            }
            C::PcrExtend { index, value } => self.pcrs.extend(*index, locality, value).map(|_| R::Ok),
            C::PcrReset { index } => self.pcrs.reset(*index, locality).map(|_| R::Ok),
            C::PcrRead { index } => self.pcrs.read(*index, locality).map(R::Digest),
            C::NvDefineSpace { index, kind, size, auth_policy } => {
                self.nv_define(*index, *kind, *size, *auth_policy).map(|_| R::Handle(*index))
            }
            C::NvReadPublic { index } => {
                let nv = self.nv.get(index).ok_or(TpmError::UnknownHandle)?;
                Ok(R::NvPublic(NvPublic { index: nv.index, kind: nv.kind, size: nv.size, auth_policy: nv.auth_policy }))
            }
            C::NvIncrement { index, session } => {
                let nv = self.use_nv(locality, *index, *session, NvKind::Counter)?;
                nv.counter = nv.counter.checked_add(1).ok_or(TpmError::NvTooLarge)?;
                Ok(R::Nv(NvValue::Counter(nv.counter)))
            }
            C::NvRead { index, session } => {
                let kind = self.nv.get(index).ok_or(TpmError::UnknownHandle)?.kind;
                let nv = self.use_nv(locality, *index, *session, kind)?;
                Ok(R::Nv(match nv.kind {
                    NvKind::Counter => NvValue::Counter(nv.counter),
                    NvKind::Data => NvValue::Data(nv.data.clone()),
                }))
            }
            C::NvWrite { index, session, payload } => {
                let nv = self.use_nv(locality, *index, *session, NvKind::Data)?;
                if payload.len() > nv.size as usize {
                    return Err(TpmError::NvTooLarge);
                }
                nv.data = payload.clone();
                Ok(R::Ok)
            }
            C::ReadClock => Ok(R::Clock(self.ticks)),
            C::GetTime { handle, session, qualifying } => {
                let ak = self.use_object(locality, *handle, *session, &[ObjectKind::AttestationKey])?;
                let ticks = self.ticks;
                let signature = crypto::sign(&ak.secret, &crypto::hash(&TimeRecord::signed_body(ticks, qualifying)))
                    .map_err(|_| TpmError::MalformedKey)?;
                Ok(R::Time(TimeRecord { ticks, qualifying: qualifying.clone(), signature }))
            }
            C::Quote { handle, session, selection, qualifying } => {
                if selection.is_empty() {
                    self.discard_session(*session);
                    return Err(TpmError::EmptySelection);
                }
                let ak = self.use_object(locality, *handle, *session, &[ObjectKind::AttestationKey])?;
                let composite = composite_of(&self.pcrs.selected(selection)?);
                let clock = self.ticks;
                let body = Quote::signed_body(selection, &composite, clock, qualifying);
                let signature = crypto::sign(&ak.secret, &crypto::hash(&body)).map_err(|_| TpmError::MalformedKey)?;
                Ok(R::Quote(Quote {
                    selection: *selection,
                    composite,
                    clock,
                    qualifying: qualifying.clone(),
                    signature,
                }))
            }
        }
    }

    fn take_ownership(&mut self, owner_secret: &[u8]) -> Result<SymKey128, TpmError> {
        if self.owner_secret.is_some() {
            return Err(TpmError::AlreadyOwned);
        }
        let psk = crypto::kdf_key128(self.endorsement_seed.as_bytes(), "CHANNEL", owner_secret)
            .expect("endorsement seed is non-empty");
        self.owner_secret = Some(owner_secret.to_vec());
        self.channel_psk = Some(psk);
        Ok(psk)
    }

    /// Direct provisioning entry point, used before any channel exists.
    pub fn provision_owner(&mut self, owner_secret: &[u8]) -> Result<SymKey128, TpmError> {
        match self.execute(Locality::L4, &TpmCommand::TakeOwnership { owner_secret: owner_secret.to_vec() })? {
            TpmResponse::Psk(k) => Ok(k),
            _ => Err(TpmError::BadCommand),
        }
    }

    fn alloc_transient(&mut self) -> Handle {
        self.next_transient += 1;
        Handle(TRANSIENT_BASE | self.next_transient)
    }

    fn start_session(&mut self, locality: Locality) -> Handle {
        self.next_session += 1;
        let handle = Handle(SESSION_BASE | self.next_session);
        self.sessions.insert(handle, PolicySession { handle, digest: Digest32::zero(), locality });
        handle
    }

    fn session(&self, locality: Locality, handle: Handle) -> Result<&PolicySession, TpmError> {
        let s = self.sessions.get(&handle).ok_or(TpmError::UnknownSession)?;
        if s.locality != locality {
            return Err(TpmError::LocalityFail);
        }
        Ok(s)
    }

    fn session_mut(&mut self, locality: Locality, handle: Handle) -> Result<&mut PolicySession, TpmError> {
        self.session(locality, handle)?;
        Ok(self.sessions.get_mut(&handle).expect("checked above"))
    }

    fn policy_locality(&mut self, locality: Locality, handle: Handle, min: u8) -> Result<Digest32, TpmError> {
        let min_loc = Locality::new(min)?;
        let s = self.session_mut(locality, handle)?;
        if s.locality < min_loc {
            return Err(TpmError::LocalityFail);
        }
        s.digest = policy::extend_locality(&s.digest, min);
        Ok(s.digest)
    }

    fn policy_pcr(
        &mut self,
        locality: Locality,
        handle: Handle,
        selection: &PcrSelection,
    ) -> Result<Digest32, TpmError> {
        self.session(locality, handle)?;
        if selection.is_empty() {
            return Err(TpmError::EmptySelection);
        }
        let values = self.pcrs.selected(selection)?;
        let s = self.session_mut(locality, handle)?;
        s.digest = policy::extend_pcr(&s.digest, selection, &values);
        Ok(s.digest)
    }

    fn policy_identity(
        &mut self,
        locality: Locality,
        handle: Handle,
        identity: &IdentityAssertion,
    ) -> Result<Digest32, TpmError> {
        let s = self.session_mut(locality, handle)?;
        if s.locality != Locality::L4 {
            return Err(TpmError::IdentityLocality);
        }
        s.digest = policy::extend_identity(&s.digest, identity);
        Ok(s.digest)
    }

    fn discard_session(&mut self, session: Option<Handle>) {
        if let Some(h) = session {
            self.sessions.remove(&h);
        }
    }

    /// Checks a (consumed) policy session against `policy`.
    ///
    /// An all-zero policy needs no session; a supplied session is still
    /// consumed and still checked.
    fn authorize(&mut self, locality: Locality, session: Option<Handle>, policy: &Digest32) -> Result<(), TpmError> {
        let Some(h) = session else {
            return if *policy == Digest32::zero() { Ok(()) } else { Err(TpmError::PolicyFail) };
        };
        let s = self.sessions.remove(&h).ok_or(TpmError::UnknownSession)?;
        if s.locality != locality {
            return Err(TpmError::LocalityFail);
        }
        if s.digest == *policy {
            Ok(())
        } else {
            Err(TpmError::PolicyFail)
        }
    }

    fn use_object(
        &mut self,
        locality: Locality,
        handle: Handle,
        session: Option<Handle>,
        kinds: &[ObjectKind],
    ) -> Result<TpmObject, TpmError> {
        let Some(obj) = self.objects.get(&handle).cloned() else {
            self.discard_session(session);
            return Err(TpmError::UnknownHandle);
        };
        self.authorize(locality, session, &obj.auth_policy)?;
        if !kinds.contains(&obj.kind) {
            return Err(TpmError::KindMismatch);
        }
        Ok(obj)
    }

    fn use_nv(
        &mut self,
        locality: Locality,
        index: Handle,
        session: Option<Handle>,
        kind: NvKind,
    ) -> Result<&mut NvIndex, TpmError> {
        let Some(nv) = self.nv.get(&index) else {
            self.discard_session(session);
            return Err(TpmError::UnknownHandle);
        };
        let policy = nv.auth_policy;
        let actual = nv.kind;
        self.authorize(locality, session, &policy)?;
        if actual != kind {
            return Err(TpmError::KindMismatch);
        }
        Ok(self.nv.get_mut(&index).expect("checked above"))
    }

    fn build_object(
        &mut self,
        kind: ObjectKind,
        secret: Vec<u8>,
        template: &ObjectTemplate,
    ) -> Result<TpmObject, TpmError> {
        let public = if kind.has_public() {
            Some(crypto::sig_public(&secret).map_err(|_| TpmError::MalformedKey)?)
        } else {
            None
        };
        let handle = self.alloc_transient();
        Ok(TpmObject {
            handle,
            kind,
            secret,
            public,
            auth_policy: template.auth_policy,
            creation_context: template.creation_context.clone(),
        })
    }

    /// Key derivation input: the creation context, then the auth policy, so the
    /// same context under a different policy yields unrelated key material.
    fn derivation_context(template: &ObjectTemplate, suffix: &[u8]) -> Vec<u8> {
        let mut ctx = template.creation_context.clone();
        ctx.extend_from_slice(template.auth_policy.as_bytes());
        ctx.extend_from_slice(suffix);
        ctx
    }

    fn create_primary(&mut self, template: &ObjectTemplate) -> TpmResult {
        if !self.is_owned() {
            return Err(TpmError::NotOwned);
        }
        let secret = crypto::kdf(
            self.primary_seed.as_bytes(),
            template.kind.label(),
            &Self::derivation_context(template, &[]),
            template.kind.key_len(),
        )
        .expect("primary seed is non-empty");
        let obj = self.build_object(template.kind, secret, template)?;
        let resp = TpmResponse::Created { handle: obj.handle, public: obj.public.clone() };
        self.objects.insert(obj.handle, obj);
        Ok(resp)
    }

    fn parent_secret(
        &mut self,
        locality: Locality,
        parent: Handle,
        session: Option<Handle>,
    ) -> Result<Vec<u8>, TpmError> {
        let Some(p) = self.objects.get(&parent) else {
            self.discard_session(session);
            return Err(TpmError::UnknownParent);
        };
        let policy = p.auth_policy;
        let secret = p.secret.clone();
        self.authorize(locality, session, &policy)?;
        Ok(secret)
    }

    fn wrap_keys(parent_secret: &[u8]) -> (SymKey128, Vec<u8>) {
        let enc = crypto::kdf_key128(parent_secret, "WRAP-ENC", b"").expect("parent secret is non-empty");
        let mac = crypto::kdf(parent_secret, "WRAP-MAC", b"", 32).expect("parent secret is non-empty");
        (enc, mac)
    }

    fn create_wrapped(
        &mut self,
        locality: Locality,
        parent: Handle,
        session: Option<Handle>,
        template: &ObjectTemplate,
    ) -> Result<Vec<u8>, TpmError> {
        let parent_secret = self.parent_secret(locality, parent, session)?;
        self.create_counter += 1;
        let nonce = self.create_counter;
        let ctx = Self::derivation_context(template, &nonce.to_be_bytes());
        let secret = crypto::kdf(&parent_secret, template.kind.label(), &ctx, template.kind.key_len())
            .expect("parent secret is non-empty");

        let mut plain = vec![template.kind.to_byte()];
        plain.extend_from_slice(template.auth_policy.as_bytes());
        plain.extend_from_slice(&(template.creation_context.len() as u32).to_be_bytes());
        plain.extend_from_slice(&template.creation_context);
        plain.extend_from_slice(&secret);

        let (enc, mac_key) = Self::wrap_keys(&parent_secret);
        let mut blob = nonce.to_be_bytes().to_vec();
        blob.extend_from_slice(&crypto::ctr_crypt(&enc, nonce, &plain));
        let tag = crypto::mac(&mac_key, &blob).expect("non-empty key");
        blob.extend_from_slice(tag.as_bytes());
        Ok(blob)
    }

    fn load(&mut self, locality: Locality, parent: Handle, session: Option<Handle>, blob: &[u8]) -> TpmResult {
        let parent_secret = self.parent_secret(locality, parent, session)?;
        if blob.len() < 8 + 32 {
            return Err(TpmError::BadWrap);
        }
        let (body, tag) = blob.split_at(blob.len() - 32);
        let (enc, mac_key) = Self::wrap_keys(&parent_secret);
        let expect = crypto::mac(&mac_key, body).expect("non-empty key");
        if !crypto::tags_equal(expect.as_bytes(), tag) {
            return Err(TpmError::BadWrap);
        }
        let nonce = u64::from_be_bytes(body[..8].try_into().expect("8 bytes"));
        let plain = crypto::ctr_crypt(&enc, nonce, &body[8..]);
        let parse = || -> Option<(ObjectKind, Digest32, Vec<u8>, Vec<u8>)> {
            let kind = ObjectKind::from_byte(*plain.first()?)?;
            let policy = Digest32::from_slice(plain.get(1..33)?)?;
            let ctx_len = u32::from_be_bytes(plain.get(33..37)?.try_into().ok()?) as usize;
            let ctx = plain.get(37..37 + ctx_len)?.to_vec();
            let secret = plain.get(37 + ctx_len..)?.to_vec();
            (secret.len() == kind.key_len()).then_some((kind, policy, ctx, secret))
        };
        let (kind, auth_policy, creation_context, secret) = parse().ok_or(TpmError::BadWrap)?;
        let template = ObjectTemplate { kind, creation_context, auth_policy };
        let obj = self.build_object(kind, secret, &template)?;
        let resp = TpmResponse::Created { handle: obj.handle, public: obj.public.clone() };
        self.objects.insert(obj.handle, obj);
        Ok(resp)
    }

    fn nv_define(&mut self, index: Handle, kind: NvKind, size: u32, auth_policy: Digest32) -> Result<(), TpmError> {
        if !self.is_owned() {
            return Err(TpmError::NotOwned);
        }
        if index.0 & 0xff00_0000 != NV_BASE {
            return Err(TpmError::UnknownHandle);
        }
        if self.nv.contains_key(&index) {
            return Err(TpmError::NvDefined);
        }
        self.nv.insert(index, NvIndex { index, kind, size, counter: 0, data: Vec::new(), auth_policy });
        Ok(())
    }
}
