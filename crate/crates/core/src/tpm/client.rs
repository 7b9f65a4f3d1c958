// SPDX-License-Identifier: Apache-2.0

//! Typed command helpers over any transport that can carry a [`TpmCommand`].

use super::command::{Handle, NvKind, NvPublic, NvValue, ObjectTemplate, Quote, TimeRecord, TpmCommand, TpmResponse};
use super::pcr::PcrSelection;
use super::policy::IdentityAssertion;
use super::{Locality, TpmDevice, TpmError};
use crate::crypto::{Digest32, MacTag32, Signature, SymKey128};

macro_rules! expect {
    ($resp:expr, $pat:pat => $out:expr) => {
        match $resp {
            $pat => Ok($out),
            _ => Err(TpmError::BadCommand.into()),
        }
    };
}

/// A channel to the TPM. Implementors supply [`TpmCall::call`]; the typed
/// helpers unpack the expected response variant.
pub trait TpmCall {
    type Error: From<TpmError>;

    fn call(&mut self, cmd: TpmCommand) -> Result<TpmResponse, Self::Error>;

    fn take_ownership(&mut self, owner_secret: &[u8]) -> Result<SymKey128, Self::Error> {
        expect!(self.call(TpmCommand::TakeOwnership { owner_secret: owner_secret.to_vec() })?, TpmResponse::Psk(k) => k)
    }

    fn policy_start_session(&mut self) -> Result<Handle, Self::Error> {
        expect!(self.call(TpmCommand::PolicyStartSession)?, TpmResponse::Handle(h) => h)
    }

    fn policy_locality(&mut self, session: Handle, min: u8) -> Result<Digest32, Self::Error> {
        expect!(self.call(TpmCommand::PolicyLocality { session, min })?, TpmResponse::Digest(d) => d)
    }

    fn policy_pcr(&mut self, session: Handle, selection: &PcrSelection) -> Result<Digest32, Self::Error> {
        expect!(self.call(TpmCommand::PolicyPcr { session, selection: *selection })?, TpmResponse::Digest(d) => d)
    }

    fn policy_identity(&mut self, session: Handle, identity: &IdentityAssertion) -> Result<Digest32, Self::Error> {
        expect!(
            self.call(TpmCommand::PolicyIdentity { session, identity: identity.clone() })?,
            TpmResponse::Digest(d) => d
        )
    }

    fn policy_get_digest(&mut self, session: Handle) -> Result<Digest32, Self::Error> {
        expect!(self.call(TpmCommand::PolicyGetDigest { session })?, TpmResponse::Digest(d) => d)
    }

    fn create_primary(&mut self, template: &ObjectTemplate) -> Result<(Handle, Option<Vec<u8>>), Self::Error> {
        expect!(
            self.call(TpmCommand::CreatePrimary { template: template.clone() })?,
            TpmResponse::Created { handle, public } => (handle, public)
        )
    }

    fn create_wrapped(
        &mut self,
        parent: Handle,
        session: Option<Handle>,
        template: &ObjectTemplate,
    ) -> Result<Vec<u8>, Self::Error> {
        expect!(
            self.call(TpmCommand::CreateWrapped { parent, session, template: template.clone() })?,
            TpmResponse::WrapBlob(b) => b
        )
    }

    fn load(
        &mut self,
        parent: Handle,
        session: Option<Handle>,
        blob: &[u8],
    ) -> Result<(Handle, Option<Vec<u8>>), Self::Error> {
        expect!(
            self.call(TpmCommand::Load { parent, session, blob: blob.to_vec() })?,
            TpmResponse::Created { handle, public } => (handle, public)
        )
    }

    fn hmac_sign(&mut self, handle: Handle, session: Option<Handle>, msg: &[u8]) -> Result<MacTag32, Self::Error> {
        expect!(self.call(TpmCommand::HmacSign { handle, session, msg: msg.to_vec() })?, TpmResponse::Mac(t) => t)
    }

    fn sign(&mut self, handle: Handle, session: Option<Handle>, digest: &Digest32) -> Result<Signature, Self::Error> {
        expect!(self.call(TpmCommand::Sign { handle, session, digest: *digest })?, TpmResponse::Signature(s) => s)
    }

    fn encrypt_decrypt(
        &mut self,
        handle: Handle,
        session: Option<Handle>,
        nonce: u64,
        data: &[u8],
    ) -> Result<Vec<u8>, Self::Error> {
        expect!(
            self.call(TpmCommand::EncryptDecrypt { handle, session, nonce, data: data.to_vec() })?,
            TpmResponse::Data(d) => d
        )
    }

    fn release_symmetric(&mut self, handle: Handle, session: Option<Handle>) -> Result<SymKey128, Self::Error> {
        expect!(self.call(TpmCommand::ReleaseSymmetric { handle, session })?, TpmResponse::SymKey(k) => k)
    }

    fn verify_signature(
        &mut self,
        public: &[u8],
        digest: &Digest32,
        signature: &Signature,
    ) -> Result<bool, Self::Error> {
        expect!(
            self.call(TpmCommand::VerifySignature {
                public: public.to_vec(),
                digest: *digest,
                signature: signature.clone(),
            })?,
            TpmResponse::Bool(b) => b
        )
    }

    fn hash_sequence_start(&mut self) -> Result<Handle, Self::Error> {
        expect!(self.call(TpmCommand::HashSequenceStart)?, TpmResponse::Handle(h) => h)
    }

    fn hash_sequence_update(&mut self, seq: Handle, chunk: &[u8]) -> Result<(), Self::Error> {
        expect!(self.call(TpmCommand::HashSequenceUpdate { seq, chunk: chunk.to_vec() })?, TpmResponse::Ok => ())
    }

    fn hash_sequence_complete(&mut self, seq: Handle) -> Result<Digest32, Self::Error> {
        expect!(self.call(TpmCommand::HashSequenceComplete { seq })?, TpmResponse::Digest(d) => d)
    }

    fn pcr_extend(&mut self, index: u8, value: &Digest32) -> Result<(), Self::Error> {
        expect!(self.call(TpmCommand::PcrExtend { index, value: *value })?, TpmResponse::Ok => ())
    }

    fn pcr_reset(&mut self, index: u8) -> Result<(), Self::Error> {
        expect!(self.call(TpmCommand::PcrReset { index })?, TpmResponse::Ok => ())
    }

    fn pcr_read(&mut self, index: u8) -> Result<Digest32, Self::Error> {
        expect!(self.call(TpmCommand::PcrRead { index })?, TpmResponse::Digest(d) => d)
    }

    fn nv_define_space(
        &mut self,
        index: Handle,
        kind: NvKind,
        size: u32,
        auth_policy: Digest32,
    ) -> Result<Handle, Self::Error> {
        expect!(
            self.call(TpmCommand::NvDefineSpace { index, kind, size, auth_policy })?,
            TpmResponse::Handle(h) => h
        )
    }

    fn nv_read_public(&mut self, index: Handle) -> Result<NvPublic, Self::Error> {
        expect!(self.call(TpmCommand::NvReadPublic { index })?, TpmResponse::NvPublic(p) => p)
    }

    fn nv_increment(&mut self, index: Handle, session: Option<Handle>) -> Result<u64, Self::Error> {
        expect!(
            self.call(TpmCommand::NvIncrement { index, session })?,
            TpmResponse::Nv(NvValue::Counter(v)) => v
        )
    }

    fn nv_read(&mut self, index: Handle, session: Option<Handle>) -> Result<NvValue, Self::Error> {
        expect!(self.call(TpmCommand::NvRead { index, session })?, TpmResponse::Nv(v) => v)
    }

    fn nv_write(&mut self, index: Handle, session: Option<Handle>, payload: &[u8]) -> Result<(), Self::Error> {
        expect!(
            self.call(TpmCommand::NvWrite { index, session, payload: payload.to_vec() })?,
            TpmResponse::Ok => ()
        )
    }

    fn read_clock(&mut self) -> Result<u64, Self::Error> {
        expect!(self.call(TpmCommand::ReadClock)?, TpmResponse::Clock(t) => t)
    }

    fn get_time(
        &mut self,
        handle: Handle,
        session: Option<Handle>,
        qualifying: &[u8],
    ) -> Result<TimeRecord, Self::Error> {
        expect!(
            self.call(TpmCommand::GetTime { handle, session, qualifying: qualifying.to_vec() })?,
            TpmResponse::Time(t) => t
        )
    }

    fn quote(
        &mut self,
        handle: Handle,
        session: Option<Handle>,
        selection: &PcrSelection,
        qualifying: &[u8],
    ) -> Result<Quote, Self::Error> {
        expect!(
            self.call(TpmCommand::Quote { handle, session, selection: *selection, qualifying: qualifying.to_vec() })?,
            TpmResponse::Quote(q) => q
        )
    }
}

/// Direct, unencrypted access to a device at a fixed locality.
pub struct LocalityPort<'a> {
    device: &'a mut TpmDevice,
    locality: Locality,
}

impl<'a> LocalityPort<'a> {
    pub(crate) fn new(device: &'a mut TpmDevice, locality: Locality) -> Self {
        Self { device, locality }
    }
}

impl TpmCall for LocalityPort<'_> {
    type Error = TpmError;

    fn call(&mut self, cmd: TpmCommand) -> Result<TpmResponse, TpmError> {
        self.device.execute(self.locality, &cmd)
    }
}
