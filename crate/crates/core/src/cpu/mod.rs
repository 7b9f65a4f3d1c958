// SPDX-License-Identifier: Apache-2.0

//! SGX-like enclave engine whose key store, measurement, and attestation
//! primitives live in the TPM.
//!
//! Microcode operations reach the TPM over the secure bus at locality 4. The
//! capability needed for that is minted only here, so software can never
//! originate a locality-4 frame.

pub mod exec;
pub mod identity;
mod microcode;

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

use crate::bus::{BusError, ChannelError, SecureBus};
use crate::crypto::{self, Digest32, MacTag32, PublicKey, SymKey128};
use crate::tpm::pcr::{PcrSelection, PCR_ENCLAVE_ATTEST, PCR_LAUNCH_ATTRS, PCR_LAUNCH_MRENCLAVE, PCR_LAUNCH_MRSIGNER};
use crate::tpm::policy::TrialPolicy;
use crate::tpm::{Handle, NvKind, NvValue, ObjectTemplate, Quote, TpmCall, TpmError};
pub use exec::{Instr, LeakSource, LeakTrace, RegisterFile, SsaFrame, BND_COUNT, GPR_COUNT};
pub use identity::{
    kdm_context, page_record, EinitToken, EnclaveIdentity, IdentityBinding, KeyName, KeySelector, Report, SigStruct,
    REPORT_DATA_LEN,
};
use microcode::MicrocodePort;

/// Proof of microcode origin; required to open a locality-4 bus session.
#[derive(Clone)]
pub struct Locality4Capability {
    _seal: (),
}

impl fmt::Debug for Locality4Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Locality4Capability")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum CpuError {
    #[error("unknown enclave")]
    UnknownEnclave,
    #[error("enclave not initialized")]
    NotInit,
    #[error("enclave already initialized")]
    AlreadyInit,
    #[error("measurement sequence closed")]
    SequenceClosed,
    #[error("measurement already finalized")]
    MeasurementFinal,
    #[error("measurement or signature check still pending")]
    MeasurementPending,
    #[error("measured enclave does not match its signed descriptor")]
    MeasurementMismatch,
    #[error("enclave descriptor signature invalid")]
    BadSignature,
    #[error("launch token rejected")]
    BadToken,
    #[error("no running execution context")]
    NotRunning,
    #[error("an execution context is live")]
    Running,
    #[error("invalid instruction operand")]
    BadOperand,
    #[error("report failed verification")]
    BadReport,
    #[error("sealed blob failed verification")]
    UnsealFail,
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

impl From<BusError> for CpuError {
    fn from(e: BusError) -> Self {
        CpuError::Channel(e.into())
    }
}

impl From<TpmError> for CpuError {
    fn from(e: TpmError) -> Self {
        CpuError::Channel(e.into())
    }
}

impl CpuError {
    pub fn code(&self) -> &'static str {
        match self {
            CpuError::UnknownEnclave => "UNKNOWN_ENCLAVE",
            CpuError::NotInit => "NOT_INIT",
            CpuError::AlreadyInit => "ALREADY_INIT",
            CpuError::SequenceClosed => "SEQUENCE_CLOSED",
            CpuError::MeasurementFinal => "MEASUREMENT_FINAL",
            CpuError::MeasurementPending => "MEASUREMENT_PENDING",
            CpuError::MeasurementMismatch => "MEASUREMENT_MISMATCH",
            CpuError::BadSignature => "BAD_SIGNATURE",
            CpuError::BadToken => "BAD_TOKEN",
            CpuError::NotRunning => "NOT_RUNNING",
            CpuError::Running => "RUNNING",
            CpuError::BadOperand => "BAD_OPERAND",
            CpuError::BadReport => "BAD_REPORT",
            CpuError::UnsealFail => "UNSEAL_FAIL",
            CpuError::Channel(e) => e.code(),
        }
    }

    pub const LOCAL_CODES: [&'static str; 14] = [
        "UNKNOWN_ENCLAVE",
        "NOT_INIT",
        "ALREADY_INIT",
        "SEQUENCE_CLOSED",
        "MEASUREMENT_FINAL",
        "MEASUREMENT_PENDING",
        "MEASUREMENT_MISMATCH",
        "BAD_SIGNATURE",
        "BAD_TOKEN",
        "NOT_RUNNING",
        "RUNNING",
        "BAD_OPERAND",
        "BAD_REPORT",
        "UNSEAL_FAIL",
    ];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EnclaveId(pub u32);

#[derive(Clone, Debug)]
pub struct Secs {
    pub identity: EnclaveIdentity,
    pub init: bool,
    pub keyid: Digest32,
    pub aex_count: u64,
    pub exit_count: u64,
    pub pages: Vec<(u64, Digest32)>,
    measurement_seq: Option<Handle>,
    measured: bool,
    verified: bool,
}

impl Secs {
    pub fn is_measured(&self) -> bool {
        self.measured
    }

    pub fn is_verified(&self) -> bool {
        self.verified
    }
}

struct ExecContext {
    program: Vec<Instr>,
    pc: usize,
    regs: RegisterFile,
    input: Vec<u8>,
    ssa: Option<SsaFrame>,
}

struct Enclave {
    secs: Secs,
    ssa_key: Option<SymKey128>,
    ctx: Option<ExecContext>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Running,
    Exited,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContextState {
    Running,
    Interrupted,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyHandle {
    pub handle: Handle,
    pub public: Option<PublicKey>,
}

/// Payload protected under identity-bound TPM keys.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SealedBlob {
    pub binding: IdentityBinding,
    pub nonce: u64,
    pub ciphertext: Vec<u8>,
    pub tag: MacTag32,
}

impl SealedBlob {
    fn mac_input(nonce: u64, ciphertext: &[u8]) -> Vec<u8> {
        let mut m = nonce.to_be_bytes().to_vec();
        m.extend_from_slice(ciphertext);
        m
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        bincode::serialize(self).expect("blob serializes")
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        bincode::deserialize(bytes).ok()
    }
}

fn launch_selection() -> PcrSelection {
    PcrSelection::from_indices(&[PCR_LAUNCH_MRENCLAVE, PCR_LAUNCH_MRSIGNER, PCR_LAUNCH_ATTRS]).expect("valid indices")
}

/// Authorization policy of the launch key for `id`, assuming all-zero PCR defaults.
pub fn launch_key_policy(id: &EnclaveIdentity) -> Digest32 {
    let zero = Digest32::zero();
    let values = [
        crypto::hash_extend(&zero, id.mrenclave.as_bytes()),
        crypto::hash_extend(&zero, id.mrsigner.as_bytes()),
        crypto::hash_extend(&zero, id.attrs_digest().as_bytes()),
    ];
    TrialPolicy::new().locality(4).pcr(&launch_selection(), &values).digest()
}

/// Authorization policy of an identity-bound key or NV index.
pub fn identity_policy(id: &EnclaveIdentity, binding: IdentityBinding) -> Digest32 {
    TrialPolicy::new().identity(&binding.assertion(id)).digest()
}

const SEAL_KEYID: &[u8] = b"SEALED-DATA";
const SSA_EXIT_NONCE_BIT: u64 = 1 << 63;

pub struct Cpu {
    seal_fuses: Digest32,
    cpusvn: u16,
    owner_binding: Digest32,
    mee_salt: Digest32,
    cap: Locality4Capability,
    enclaves: BTreeMap<EnclaveId, Enclave>,
    next_enclave: u32,
    leaks: LeakTrace,
    memory: BTreeMap<u64, Vec<u8>>,
}

impl fmt::Debug for Cpu {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Cpu")
            .field("cpusvn", &self.cpusvn)
            .field("enclaves", &self.enclaves.len())
            .field("leaks", &self.leaks.len())
            .finish_non_exhaustive()
    }
}

impl Cpu {
    pub fn new(seal_fuses: Digest32, cpusvn: u16, owner_epoch: &Digest32, mee_salt: Digest32) -> Self {
        let owner_binding = crypto::kdf_digest(seal_fuses.as_bytes(), "OWNERBIND", owner_epoch.as_bytes())
            .expect("seal fuses are non-empty");
        Self {
            seal_fuses,
            cpusvn,
            owner_binding,
            mee_salt,
            cap: Locality4Capability { _seal: () },
            enclaves: BTreeMap::new(),
            next_enclave: 0,
            leaks: LeakTrace::default(),
            memory: BTreeMap::new(),
        }
    }

    pub fn cpusvn(&self) -> u16 {
        self.cpusvn
    }

    pub fn leaks(&self) -> &LeakTrace {
        &self.leaks
    }

    /// Untrusted memory as written by enclaves, keyed by address.
    pub fn memory(&self) -> &BTreeMap<u64, Vec<u8>> {
        &self.memory
    }

    pub fn read_memory(&self, addr: u64) -> Option<&[u8]> {
        self.memory.get(&addr).map(Vec::as_slice)
    }

    pub fn enclave_ids(&self) -> impl Iterator<Item = EnclaveId> + '_ {
        self.enclaves.keys().copied()
    }

    pub fn secs(&self, eid: EnclaveId) -> Result<&Secs, CpuError> {
        self.enclaves.get(&eid).map(|e| &e.secs).ok_or(CpuError::UnknownEnclave)
    }

    pub fn identity(&self, eid: EnclaveId) -> Result<EnclaveIdentity, CpuError> {
        Ok(self.secs(eid)?.identity)
    }

    pub fn context_state(&self, eid: EnclaveId) -> Result<Option<ContextState>, CpuError> {
        let e = self.enclave(eid)?;
        Ok(e.ctx.as_ref().map(|c| if c.ssa.is_some() { ContextState::Interrupted } else { ContextState::Running }))
    }

    pub fn kdm_context(&self, selector: &KeySelector, id: &EnclaveIdentity) -> Vec<u8> {
        kdm_context(selector, id, self.cpusvn, &self.owner_binding)
    }

    #[doc(hidden)]
    pub fn debug_seal_fuses(&self) -> Digest32 {
        self.seal_fuses
    }

    #[doc(hidden)]
    pub fn debug_ssa_key(&self, eid: EnclaveId) -> Option<SymKey128> {
        self.enclaves.get(&eid).and_then(|e| e.ssa_key)
    }

    #[doc(hidden)]
    pub fn debug_registers(&self, eid: EnclaveId) -> Option<RegisterFile> {
        self.enclaves.get(&eid)?.ctx.as_ref().map(|c| c.regs.clone())
    }

    #[doc(hidden)]
    pub fn debug_set_registers(&mut self, eid: EnclaveId, regs: RegisterFile) -> Result<(), CpuError> {
        self.running_mut(eid)?.regs = regs;
        Ok(())
    }

    fn enclave(&self, eid: EnclaveId) -> Result<&Enclave, CpuError> {
        self.enclaves.get(&eid).ok_or(CpuError::UnknownEnclave)
    }

    fn enclave_mut(&mut self, eid: EnclaveId) -> Result<&mut Enclave, CpuError> {
        self.enclaves.get_mut(&eid).ok_or(CpuError::UnknownEnclave)
    }

    fn running(&self, eid: EnclaveId) -> Result<&ExecContext, CpuError> {
        match self.enclave(eid)?.ctx.as_ref() {
            Some(c) if c.ssa.is_none() => Ok(c),
            _ => Err(CpuError::NotRunning),
        }
    }

    fn running_mut(&mut self, eid: EnclaveId) -> Result<&mut ExecContext, CpuError> {
        match self.enclave_mut(eid)?.ctx.as_mut() {
            Some(c) if c.ssa.is_none() => Ok(c),
            _ => Err(CpuError::NotRunning),
        }
    }

    fn microcode<'a>(&self, bus: &'a mut SecureBus, op: &'static str) -> Result<MicrocodePort<'a>, CpuError> {
        Ok(MicrocodePort::open(bus, &self.cap, op)?)
    }

    fn epc_write(&mut self, content: &[u8]) {
        let token = crypto::hash_parts(&[self.mee_salt.as_bytes(), content]);
        self.leaks.push(LeakSource::Epc, token.as_bytes().to_vec());
    }

    fn mem_write(&mut self, addr: u64, bytes: Vec<u8>) {
        self.leaks.push(LeakSource::Buffer, bytes.clone());
        self.memory.insert(addr, bytes);
    }

    /// Runs `f` while microcode holds the bus in a locality-4 I/O session.
    pub fn with_microcode_session<R>(
        &self,
        bus: &mut SecureBus,
        f: impl FnOnce(&mut SecureBus) -> R,
    ) -> Result<R, CpuError> {
        let mut port = self.microcode(bus, "HOLD")?;
        Ok(f(port.bus_mut()))
    }

    fn assert_identity<T: TpmCall<Error = ChannelError>>(
        port: &mut T,
        id: &EnclaveIdentity,
        binding: IdentityBinding,
    ) -> Result<Handle, CpuError> {
        let s = port.policy_start_session()?;
        port.policy_identity(s, &binding.assertion(id))?;
        Ok(s)
    }

    fn reset_launch_pcrs<T: TpmCall<Error = ChannelError>>(port: &mut T) -> Result<(), CpuError> {
        for pcr in [PCR_LAUNCH_MRENCLAVE, PCR_LAUNCH_MRSIGNER, PCR_LAUNCH_ATTRS] {
            port.pcr_reset(pcr)?;
        }
        Ok(())
    }

    fn load_launch_pcrs<T: TpmCall<Error = ChannelError>>(port: &mut T, id: &EnclaveIdentity) -> Result<(), CpuError> {
        Self::reset_launch_pcrs(port)?;
        port.pcr_extend(PCR_LAUNCH_MRENCLAVE, &id.mrenclave)?;
        port.pcr_extend(PCR_LAUNCH_MRSIGNER, &id.mrsigner)?;
        port.pcr_extend(PCR_LAUNCH_ATTRS, &id.attrs_digest())?;
        Ok(())
    }

    fn launch_key_template(&self, id: &EnclaveIdentity, keyid: &Digest32) -> ObjectTemplate {
        let selector = KeySelector::new(KeyName::Launch, true, true, *keyid);
        ObjectTemplate {
            kind: KeyName::Launch.object_kind(),
            creation_context: self.kdm_context(&selector, id),
            auth_policy: launch_key_policy(id),
        }
    }

    /// HMAC of `body` under the launch key, authorized against the launch PCRs as they stand.
    fn launch_mac<T: TpmCall<Error = ChannelError>>(
        &self,
        port: &mut T,
        id: &EnclaveIdentity,
        keyid: &Digest32,
        body: &[u8],
    ) -> Result<MacTag32, CpuError> {
        let (lk, _) = port.create_primary(&self.launch_key_template(id, keyid))?;
        let s = port.policy_start_session()?;
        port.policy_locality(s, 4)?;
        port.policy_pcr(s, &launch_selection())?;
        Ok(port.hmac_sign(lk, Some(s), body)?)
    }

    // ---- creation ----

    /// Creates an enclave. The author key is hashed by the TPM into MRSIGNER
    /// and a TPM hash sequence is opened for the page measurement.
    pub fn ecreate(
        &mut self,
        bus: &mut SecureBus,
        attributes: u64,
        keyid: Digest32,
        author_public: &[u8],
    ) -> Result<EnclaveId, CpuError> {
        let mut port = self.microcode(bus, "ECREATE")?;
        let s = port.hash_sequence_start()?;
        port.hash_sequence_update(s, author_public)?;
        let mrsigner = port.hash_sequence_complete(s)?;
        let seq = port.hash_sequence_start()?;
        drop(port);

        self.next_enclave += 1;
        let eid = EnclaveId(self.next_enclave);
        let secs = Secs {
            identity: EnclaveIdentity { mrsigner, attributes, ..Default::default() },
            init: false,
            keyid,
            aex_count: 0,
            exit_count: 0,
            pages: Vec::new(),
            measurement_seq: Some(seq),
            measured: false,
            verified: false,
        };
        self.enclaves.insert(eid, Enclave { secs, ssa_key: None, ctx: None });
        Ok(eid)
    }

    pub fn eadd(&mut self, bus: &mut SecureBus, eid: EnclaveId, offset: u64, content: &[u8]) -> Result<(), CpuError> {
        let seq = self.enclave(eid)?.secs.measurement_seq.ok_or(CpuError::SequenceClosed)?;
        let record = page_record(offset, content);
        self.microcode(bus, "EADD")?.hash_sequence_update(seq, &record)?;
        self.epc_write(content);
        self.enclave_mut(eid)?.secs.pages.push((offset, crypto::hash(content)));
        Ok(())
    }

    pub fn finalize_measurement(&mut self, bus: &mut SecureBus, eid: EnclaveId) -> Result<Digest32, CpuError> {
        let secs = &self.enclave(eid)?.secs;
        if secs.init {
            return Err(CpuError::AlreadyInit);
        }
        let seq = secs.measurement_seq.ok_or(CpuError::MeasurementFinal)?;
        let mrenclave = self.microcode(bus, "EFINALIZE")?.hash_sequence_complete(seq)?;
        let secs = &mut self.enclave_mut(eid)?.secs;
        secs.measurement_seq = None;
        secs.measured = true;
        secs.identity.mrenclave = mrenclave;
        Ok(mrenclave)
    }

    /// Checks the author's signed descriptor through the TPM and adopts its product id and SVN.
    pub fn verify_sigstruct(&mut self, bus: &mut SecureBus, eid: EnclaveId, sig: &SigStruct) -> Result<(), CpuError> {
        let secs = &self.enclave(eid)?.secs;
        if !secs.measured {
            return Err(CpuError::MeasurementPending);
        }
        if secs.init {
            return Err(CpuError::AlreadyInit);
        }
        let id = secs.identity;
        let valid = match self.microcode(bus, "EVERIFY")?.verify_signature(
            &sig.author_public,
            &sig.body_digest(),
            &sig.signature,
        ) {
            Ok(v) => v,
            Err(ChannelError::Tpm(TpmError::MalformedKey)) => false,
            Err(e) => return Err(e.into()),
        };
        if !valid || crypto::hash(&sig.author_public) != id.mrsigner {
            return Err(CpuError::BadSignature);
        }
        if sig.expected_mrenclave != id.mrenclave || sig.attributes != id.attributes {
            return Err(CpuError::MeasurementMismatch);
        }
        let secs = &mut self.enclave_mut(eid)?.secs;
        secs.identity.isvprodid = sig.isvprodid;
        secs.identity.isvsvn = sig.isvsvn;
        secs.verified = true;
        Ok(())
    }

    // ---- launch ----

    fn launch_candidate(&self, eid: EnclaveId) -> Result<(EnclaveIdentity, Digest32), CpuError> {
        let secs = &self.enclave(eid)?.secs;
        if secs.init {
            return Err(CpuError::AlreadyInit);
        }
        if !secs.verified {
            return Err(CpuError::MeasurementPending);
        }
        Ok((secs.identity, secs.keyid))
    }

    /// Loads the candidate identity into the launch PCRs.
    pub fn launch_prepare(&mut self, bus: &mut SecureBus, eid: EnclaveId) -> Result<(), CpuError> {
        let (id, _) = self.launch_candidate(eid)?;
        let mut port = self.microcode(bus, "LAUNCH")?;
        Self::load_launch_pcrs(&mut port, &id)
    }

    /// Mints the launch token from whatever the launch PCRs currently hold,
    /// then resets them.
    pub fn launch_mint(&mut self, bus: &mut SecureBus, eid: EnclaveId) -> Result<EinitToken, CpuError> {
        let (id, keyid) = self.launch_candidate(eid)?;
        let body = EinitToken::body_for(&id, &keyid);
        let mut port = self.microcode(bus, "LAUNCH")?;
        let tag = self.launch_mac(&mut port, &id, &keyid, &body);
        Self::reset_launch_pcrs(&mut port)?;
        Ok(EinitToken { body, tag: tag? })
    }

    pub fn einit(&mut self, bus: &mut SecureBus, eid: EnclaveId, token: &EinitToken) -> Result<(), CpuError> {
        let (id, keyid) = self.launch_candidate(eid)?;
        let body = EinitToken::body_for(&id, &keyid);
        let mut port = self.microcode(bus, "EINIT")?;
        Self::load_launch_pcrs(&mut port, &id)?;
        let tag = self.launch_mac(&mut port, &id, &keyid, &body);
        Self::reset_launch_pcrs(&mut port)?;
        drop(port);
        let tag = tag?;
        if token.body != body || !crypto::tags_equal(tag.as_bytes(), token.tag.as_bytes()) {
            return Err(CpuError::BadToken);
        }
        self.enclave_mut(eid)?.secs.init = true;
        Ok(())
    }

    // ---- execution ----

    pub fn eenter(
        &mut self,
        bus: &mut SecureBus,
        eid: EnclaveId,
        program: Vec<Instr>,
        input: &[u8],
    ) -> Result<(), CpuError> {
        let e = self.enclave(eid)?;
        if !e.secs.init {
            return Err(CpuError::NotInit);
        }
        if e.ctx.is_some() {
            return Err(CpuError::Running);
        }
        if e.ssa_key.is_none() {
            let id = e.secs.identity;
            let selector = KeySelector::new(KeyName::SealSym, true, true, e.secs.keyid);
            let key = self.release_key(bus, &id, &selector, "EENTER")?;
            self.enclave_mut(eid)?.ssa_key = Some(key);
        }
        self.epc_write(input);
        self.enclave_mut(eid)?.ctx =
            Some(ExecContext { program, pc: 0, regs: RegisterFile::default(), input: input.to_vec(), ssa: None });
        Ok(())
    }

    fn key_template(&self, id: &EnclaveIdentity, selector: &KeySelector) -> ObjectTemplate {
        ObjectTemplate {
            kind: selector.keyname.object_kind(),
            creation_context: self.kdm_context(selector, id),
            auth_policy: identity_policy(id, selector.binding()),
        }
    }

    fn release_key(
        &self,
        bus: &mut SecureBus,
        id: &EnclaveIdentity,
        selector: &KeySelector,
        op: &'static str,
    ) -> Result<SymKey128, CpuError> {
        let mut port = self.microcode(bus, op)?;
        let (h, _) = port.create_primary(&self.key_template(id, selector))?;
        let s = Self::assert_identity(&mut port, id, selector.binding())?;
        Ok(port.release_symmetric(h, Some(s))?)
    }

    pub fn pc(&self, eid: EnclaveId) -> Result<usize, CpuError> {
        self.enclave(eid)?.ctx.as_ref().map(|c| c.pc).ok_or(CpuError::NotRunning)
    }

    pub fn remaining_instructions(&self, eid: EnclaveId) -> Result<usize, CpuError> {
        let c = self.enclave(eid)?.ctx.as_ref().ok_or(CpuError::NotRunning)?;
        Ok(c.program.len().saturating_sub(c.pc))
    }

    /// Executes one instruction. Running off the end of the program exits.
    pub fn step(&mut self, bus: &mut SecureBus, eid: EnclaveId) -> Result<StepOutcome, CpuError> {
        let ctx = self.running(eid)?;
        let Some(instr) = ctx.program.get(ctx.pc).cloned() else {
            self.eexit(eid)?;
            return Ok(StepOutcome::Exited);
        };
        let bnd_ok = |i: u8| usize::from(i) < BND_COUNT;
        match instr {
            Instr::Nop => {}
            Instr::LoadSecretToBnd { slot, handle, selector } => {
                if !bnd_ok(slot) {
                    return Err(CpuError::BadOperand);
                }
                let id = self.enclave(eid)?.secs.identity;
                let mut port = self.microcode(bus, "LOADBND")?;
                let s = Self::assert_identity(&mut port, &id, selector.binding())?;
                let key = port.release_symmetric(handle, Some(s))?;
                drop(port);
                self.running_mut(eid)?.regs.bnd[usize::from(slot)] = key.0;
            }
            Instr::MoveBndToGpr { bnd, gpr } => {
                if !bnd_ok(bnd) || usize::from(gpr) + 1 >= GPR_COUNT {
                    return Err(CpuError::BadOperand);
                }
                let regs = &mut self.running_mut(eid)?.regs;
                let b = regs.bnd[usize::from(bnd)];
                regs.gprs[usize::from(gpr)] = u64::from_be_bytes(b[..8].try_into().expect("8 bytes"));
                regs.gprs[usize::from(gpr) + 1] = u64::from_be_bytes(b[8..].try_into().expect("8 bytes"));
            }
            Instr::XorBnd { dst, src } => {
                if !bnd_ok(dst) || !bnd_ok(src) {
                    return Err(CpuError::BadOperand);
                }
                let regs = &mut self.running_mut(eid)?.regs;
                let s = regs.bnd[usize::from(src)];
                for (d, s) in regs.bnd[usize::from(dst)].iter_mut().zip(s) {
                    *d ^= s;
                }
            }
            Instr::EncryptBlockWithBnd { bnd, nonce, block, addr } => {
                if !bnd_ok(bnd) {
                    return Err(CpuError::BadOperand);
                }
                let ctx = self.running(eid)?;
                let start = usize::try_from(block).ok().and_then(|b| b.checked_mul(16)).ok_or(CpuError::BadOperand)?;
                if start >= ctx.input.len() {
                    return Err(CpuError::BadOperand);
                }
                let end = (start + 16).min(ctx.input.len());
                let key = SymKey128(ctx.regs.bnd[usize::from(bnd)]);
                let ct = crypto::ctr_crypt_at(&key, nonce, block, &ctx.input[start..end]);
                self.mem_write(addr, ct);
            }
            Instr::WriteMem { addr, gpr } => {
                let ctx = self.running(eid)?;
                let value = *ctx.regs.gprs.get(usize::from(gpr)).ok_or(CpuError::BadOperand)?;
                self.mem_write(addr, value.to_be_bytes().to_vec());
            }
            Instr::Exit => {
                self.running_mut(eid)?.pc += 1;
                self.eexit(eid)?;
                return Ok(StepOutcome::Exited);
            }
        }
        self.running_mut(eid)?.pc += 1;
        Ok(StepOutcome::Running)
    }

    /// Steps until the program exits; returns the number of instructions executed.
    pub fn run(&mut self, bus: &mut SecureBus, eid: EnclaveId) -> Result<u64, CpuError> {
        let mut n = 0;
        loop {
            n += 1;
            if self.step(bus, eid)? == StepOutcome::Exited {
                return Ok(n);
            }
        }
    }

    /// Asynchronous exit: spill registers to the SSA with BND encrypted under a fresh nonce.
    pub fn aex(&mut self, eid: EnclaveId) -> Result<SsaFrame, CpuError> {
        self.running(eid)?;
        let e = self.enclave_mut(eid)?;
        let key = e.ssa_key.ok_or(CpuError::NotRunning)?;
        e.secs.aex_count += 1;
        let nonce = e.secs.aex_count;
        let ctx = e.ctx.as_mut().expect("running");
        let frame = SsaFrame::seal(&key, nonce, &ctx.regs);
        ctx.regs.scrub();
        ctx.ssa = Some(frame.clone());
        self.leaks.push(LeakSource::Ssa, frame.to_bytes());
        Ok(frame)
    }

    pub fn eresume(&mut self, eid: EnclaveId) -> Result<(), CpuError> {
        let e = self.enclave_mut(eid)?;
        let key = e.ssa_key.ok_or(CpuError::NotRunning)?;
        let ctx = e.ctx.as_mut().ok_or(CpuError::NotRunning)?;
        let frame = ctx.ssa.take().ok_or(CpuError::NotRunning)?;
        ctx.regs = frame.unseal(&key);
        Ok(())
    }

    /// Leaves the enclave, spilling registers under the exit nonce domain.
    pub fn eexit(&mut self, eid: EnclaveId) -> Result<(), CpuError> {
        self.running(eid)?;
        let e = self.enclave_mut(eid)?;
        let key = e.ssa_key.ok_or(CpuError::NotRunning)?;
        e.secs.exit_count += 1;
        let nonce = SSA_EXIT_NONCE_BIT | e.secs.exit_count;
        let ctx = e.ctx.take().expect("running");
        let frame = SsaFrame::seal(&key, nonce, &ctx.regs);
        self.leaks.push(LeakSource::Ssa, frame.to_bytes());
        Ok(())
    }

    pub fn eremove(&mut self, eid: EnclaveId) -> Result<(), CpuError> {
        if self.enclave(eid)?.ctx.is_some() {
            return Err(CpuError::Running);
        }
        self.enclaves.remove(&eid);
        Ok(())
    }

    // ---- keys and attestation ----

    /// Creates the selected identity-bound TPM key. Symmetric sealing keys are
    /// also released straight into BND0.
    pub fn egetkey(
        &mut self,
        bus: &mut SecureBus,
        eid: EnclaveId,
        selector: &KeySelector,
    ) -> Result<KeyHandle, CpuError> {
        self.running(eid)?;
        let id = self.enclave(eid)?.secs.identity;
        let mut port = self.microcode(bus, "EGETKEY")?;
        let (handle, public) = port.create_primary(&self.key_template(&id, selector))?;
        if selector.keyname == KeyName::SealSym {
            let s = Self::assert_identity(&mut port, &id, selector.binding())?;
            let key = port.release_symmetric(handle, Some(s))?;
            drop(port);
            self.running_mut(eid)?.regs.bnd[0] = key.0;
        }
        Ok(KeyHandle { handle, public })
    }

    /// TPM-side CTR operation with an identity-bound symmetric key; the key stays in the TPM.
    pub fn tpm_crypt(
        &mut self,
        bus: &mut SecureBus,
        eid: EnclaveId,
        key: Handle,
        selector: &KeySelector,
        nonce: u64,
        data: &[u8],
    ) -> Result<Vec<u8>, CpuError> {
        self.running(eid)?;
        let id = self.enclave(eid)?.secs.identity;
        let mut port = self.microcode(bus, "ECRYPT")?;
        let s = Self::assert_identity(&mut port, &id, selector.binding())?;
        Ok(port.encrypt_decrypt(key, Some(s), nonce, data)?)
    }

    fn report_key(&self, target: &EnclaveIdentity) -> Vec<u8> {
        crypto::kdf(self.seal_fuses.as_bytes(), "REPORT", &target.canonical(), 32).expect("seal fuses are non-empty")
    }

    pub fn ereport(&self, eid: EnclaveId, target: &EnclaveIdentity, user_data: &[u8]) -> Result<Report, CpuError> {
        self.running(eid)?;
        if user_data.len() != REPORT_DATA_LEN {
            return Err(CpuError::BadOperand);
        }
        let reporting = self.enclave(eid)?.secs.identity;
        let body = Report::body(target, &reporting, user_data);
        let tag = crypto::mac(&self.report_key(target), &body).expect("non-empty key");
        Ok(Report { target: *target, reporting, user_data: user_data.to_vec(), tag })
    }

    /// Checks a report inside the target enclave's context.
    pub fn verify_report(&self, eid: EnclaveId, report: &Report) -> Result<bool, CpuError> {
        self.running(eid)?;
        let own = self.enclave(eid)?.secs.identity;
        if report.target != own || report.user_data.len() != REPORT_DATA_LEN {
            return Ok(false);
        }
        let expect = crypto::mac(&self.report_key(&own), &Report::body(&own, &report.reporting, &report.user_data))
            .expect("non-empty key");
        Ok(crypto::tags_equal(expect.as_bytes(), report.tag.as_bytes()))
    }

    /// Quoting-enclave path: verify the report, record QE and report in the
    /// attestation PCR, and quote it with the QE's attestation key.
    pub fn attest_quote(
        &mut self,
        bus: &mut SecureBus,
        qe: EnclaveId,
        ak: Handle,
        report: &Report,
        nonce: &[u8],
    ) -> Result<Quote, CpuError> {
        if !self.verify_report(qe, report)? {
            return Err(CpuError::BadReport);
        }
        let id = self.enclave(qe)?.secs.identity;
        let mut port = self.microcode(bus, "ATTEST")?;
        port.pcr_reset(PCR_ENCLAVE_ATTEST)?;
        port.pcr_extend(PCR_ENCLAVE_ATTEST, &id.mrenclave)?;
        port.pcr_extend(PCR_ENCLAVE_ATTEST, &report.digest())?;
        let s = Self::assert_identity(&mut port, &id, IdentityBinding::ENCLAVE)?;
        let sel = PcrSelection::from_indices(&[PCR_ENCLAVE_ATTEST]).expect("valid index");
        Ok(port.quote(ak, Some(s), &sel, nonce)?)
    }

    pub fn trusted_time(&mut self, bus: &mut SecureBus, eid: EnclaveId, gpr: u8) -> Result<u64, CpuError> {
        self.running(eid)?;
        if usize::from(gpr) >= GPR_COUNT {
            return Err(CpuError::BadOperand);
        }
        let ticks = self.microcode(bus, "TIME")?.read_clock()?;
        self.running_mut(eid)?.regs.gprs[usize::from(gpr)] = ticks;
        Ok(ticks)
    }

    // ---- sealing and NV ----

    fn seal_selectors(binding: IdentityBinding) -> (KeySelector, KeySelector) {
        let keyid = crypto::hash(SEAL_KEYID);
        let sym = KeySelector::new(KeyName::SealSym, binding.mrenclave, binding.mrsigner, keyid);
        let mac = KeySelector::new(KeyName::SealMac, binding.mrenclave, binding.mrsigner, keyid);
        (sym, mac)
    }

    pub fn seal(
        &mut self,
        bus: &mut SecureBus,
        eid: EnclaveId,
        binding: IdentityBinding,
        payload: &[u8],
    ) -> Result<SealedBlob, CpuError> {
        self.running(eid)?;
        let id = self.enclave(eid)?.secs.identity;
        let (sym, mac) = Self::seal_selectors(binding);
        let mut port = self.microcode(bus, "SEAL")?;
        let nonce = port.read_clock()?;
        let (hs, _) = port.create_primary(&self.key_template(&id, &sym))?;
        let (hm, _) = port.create_primary(&self.key_template(&id, &mac))?;
        let s = Self::assert_identity(&mut port, &id, sym.binding())?;
        let ciphertext = port.encrypt_decrypt(hs, Some(s), nonce, payload)?;
        let s = Self::assert_identity(&mut port, &id, mac.binding())?;
        let tag = port.hmac_sign(hm, Some(s), &SealedBlob::mac_input(nonce, &ciphertext))?;
        Ok(SealedBlob { binding, nonce, ciphertext, tag })
    }

    pub fn unseal(&mut self, bus: &mut SecureBus, eid: EnclaveId, blob: &SealedBlob) -> Result<Vec<u8>, CpuError> {
        self.running(eid)?;
        let id = self.enclave(eid)?.secs.identity;
        let (sym, mac) = Self::seal_selectors(blob.binding);
        let mut port = self.microcode(bus, "UNSEAL")?;
        let (hs, _) = port.create_primary(&self.key_template(&id, &sym))?;
        let (hm, _) = port.create_primary(&self.key_template(&id, &mac))?;
        let s = Self::assert_identity(&mut port, &id, mac.binding())?;
        let tag = port.hmac_sign(hm, Some(s), &SealedBlob::mac_input(blob.nonce, &blob.ciphertext))?;
        if !crypto::tags_equal(tag.as_bytes(), blob.tag.as_bytes()) {
            return Err(CpuError::UnsealFail);
        }
        let s = Self::assert_identity(&mut port, &id, sym.binding())?;
        Ok(port.encrypt_decrypt(hs, Some(s), blob.nonce, &blob.ciphertext)?)
    }

    pub fn nv_define(
        &mut self,
        bus: &mut SecureBus,
        eid: EnclaveId,
        index: Handle,
        kind: NvKind,
        size: u32,
        binding: IdentityBinding,
    ) -> Result<(), CpuError> {
        self.running(eid)?;
        let id = self.enclave(eid)?.secs.identity;
        self.microcode(bus, "NVDEFINE")?.nv_define_space(index, kind, size, identity_policy(&id, binding))?;
        Ok(())
    }

    pub fn nv_exists(&self, bus: &mut SecureBus, index: Handle) -> Result<bool, CpuError> {
        match self.microcode(bus, "NVDEFINE")?.nv_read_public(index) {
            Ok(_) => Ok(true),
            Err(ChannelError::Tpm(TpmError::UnknownHandle)) => Ok(false),
            Err(e) => Err(e.into()),
        }
    }

    pub fn nv_increment(
        &mut self,
        bus: &mut SecureBus,
        eid: EnclaveId,
        index: Handle,
        binding: IdentityBinding,
    ) -> Result<u64, CpuError> {
        self.running(eid)?;
        let id = self.enclave(eid)?.secs.identity;
        let mut port = self.microcode(bus, "NVINC")?;
        let s = Self::assert_identity(&mut port, &id, binding)?;
        Ok(port.nv_increment(index, Some(s))?)
    }

    pub fn nv_read(
        &mut self,
        bus: &mut SecureBus,
        eid: EnclaveId,
        index: Handle,
        binding: IdentityBinding,
    ) -> Result<NvValue, CpuError> {
        self.running(eid)?;
        let id = self.enclave(eid)?.secs.identity;
        let mut port = self.microcode(bus, "NVREAD")?;
        let s = Self::assert_identity(&mut port, &id, binding)?;
        Ok(port.nv_read(index, Some(s))?)
    }

    pub fn nv_write(
        &mut self,
        bus: &mut SecureBus,
        eid: EnclaveId,
        index: Handle,
        binding: IdentityBinding,
        payload: &[u8],
    ) -> Result<(), CpuError> {
        self.running(eid)?;
        let id = self.enclave(eid)?.secs.identity;
        let mut port = self.microcode(bus, "NVWRITE")?;
        let s = Self::assert_identity(&mut port, &id, binding)?;
        Ok(port.nv_write(index, Some(s), payload)?)
    }
}
