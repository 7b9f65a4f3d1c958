// SPDX-License-Identifier: Apache-2.0

//! End-to-end protocols over the simulated platform: measured creation,
//! TPM-backed launch, attestation through the enclave PCR, direct-to-register
//! data encryption, trusted time, and the restart guard.

pub mod guard;

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::cpu::{
    CpuError, EinitToken, EnclaveId, EnclaveIdentity, Instr, KeyHandle, KeyName, KeySelector, Report, SigStruct,
    StepOutcome, REPORT_DATA_LEN,
};
use crate::crypto::{self, Digest32, PublicKey, SigKeyPair, StreamHasher, SymKey128};
use crate::platform::Platform;
use crate::tpm::pcr::{composite_of, PCR_ENCLAVE_ATTEST};
use crate::tpm::{Locality, Quote, TpmCall};

pub use guard::{
    guard_provision, guard_record_interrupts, read_guard_state, restart_guard, GuardDecision, GuardOutcome, GuardState,
    RestartPolicy, GUARD_COUNTER, GUARD_STATE,
};

pub const PAGE_SIZE: usize = 4096;
/// Untrusted buffer that receives data-encryption output.
pub const OUTPUT_BASE: u64 = 0x4000_0000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum InterruptMode {
    #[default]
    None,
    /// AEX + ERESUME before every instruction.
    Storm,
}

/// Everything an author ships: pages plus the signing identity and descriptor fields.
#[derive(Clone, Debug)]
pub struct EnclaveBlueprint {
    pub pages: Vec<(u64, Vec<u8>)>,
    pub author: SigKeyPair,
    pub isvprodid: u16,
    pub isvsvn: u16,
    pub attributes: u64,
}

impl EnclaveBlueprint {
    /// Deterministic pseudo-random enclave for a seed and name.
    pub fn synthetic(seed: u64, name: &str, page_count: usize) -> Self {
        let mut material = seed.to_be_bytes().to_vec();
        material.extend_from_slice(name.as_bytes());
        let author = crypto::sig_keygen(&crypto::kdf_digest(&material, "AUTHOR", b"").expect("non-empty"));
        let page_key = crypto::kdf_key128(&material, "PAGES", b"").expect("non-empty");
        let pages = (0..page_count)
            .map(|i| ((i * PAGE_SIZE) as u64, crypto::ctr_crypt(&page_key, i as u64, &[0u8; PAGE_SIZE])))
            .collect();
        let meta = crypto::kdf(&material, "META", b"", 4).expect("non-empty");
        Self {
            pages,
            author,
            isvprodid: u16::from_be_bytes([meta[0], meta[1]]),
            isvsvn: u16::from(meta[2]),
            attributes: u64::from(meta[3]) << 8 | 0x04,
        }
    }

    pub fn expected_mrenclave(&self) -> Digest32 {
        let mut h = StreamHasher::new();
        for (offset, content) in &self.pages {
            h.update(&crate::cpu::page_record(*offset, content));
        }
        h.finish()
    }

    pub fn sigstruct(&self) -> SigStruct {
        SigStruct::sign(&self.author, self.expected_mrenclave(), self.isvprodid, self.isvsvn, self.attributes)
    }

    pub fn identity(&self) -> EnclaveIdentity {
        EnclaveIdentity {
            mrenclave: self.expected_mrenclave(),
            mrsigner: crypto::hash(&self.author.public),
            isvprodid: self.isvprodid,
            isvsvn: self.isvsvn,
            attributes: self.attributes,
        }
    }
}

/// Per-instance key id from the TPM clock, so instances never share SSA keys.
pub fn fresh_keyid(p: &mut Platform) -> Result<Digest32, CpuError> {
    let ticks = p.os(Locality::L0).read_clock()?;
    Ok(crypto::hash_parts(&[b"KEYID", &ticks.to_be_bytes()]))
}

pub fn create_enclave(
    p: &mut Platform,
    pages: &[(u64, Vec<u8>)],
    sigstruct: &SigStruct,
) -> Result<EnclaveId, CpuError> {
    let keyid = fresh_keyid(p)?;
    let eid = p.cpu.ecreate(&mut p.bus, sigstruct.attributes, keyid, &sigstruct.author_public)?;
    let result = (|| {
        for (offset, content) in pages {
            p.cpu.eadd(&mut p.bus, eid, *offset, content)?;
        }
        p.cpu.finalize_measurement(&mut p.bus, eid)?;
        p.cpu.verify_sigstruct(&mut p.bus, eid, sigstruct)
    })();
    let outcome = result.map_or_else(|e| e.code(), |_| "OK");
    p.note("flow", "create_enclave", sigstruct.body_digest().as_bytes(), outcome);
    match result {
        Ok(()) => Ok(eid),
        Err(e) => {
            let _ = p.cpu.eremove(eid);
            Err(e)
        }
    }
}

pub fn launch_enclave(p: &mut Platform, eid: EnclaveId) -> Result<EinitToken, CpuError> {
    let result = (|| {
        p.cpu.launch_prepare(&mut p.bus, eid)?;
        let token = p.cpu.launch_mint(&mut p.bus, eid)?;
        p.cpu.einit(&mut p.bus, eid, &token)?;
        Ok(token)
    })();
    let id = p.cpu.identity(eid).map(|i| i.canonical()).unwrap_or_default();
    p.note("flow", "launch_enclave", &id, result.as_ref().map_or_else(|e: &CpuError| e.code(), |_| "OK"));
    result
}

/// Measured creation followed by launch.
pub fn build_enclave(p: &mut Platform, bp: &EnclaveBlueprint) -> Result<EnclaveId, CpuError> {
    let eid = create_enclave(p, &bp.pages, &bp.sigstruct())?;
    launch_enclave(p, eid)?;
    Ok(eid)
}

/// Runs the entered program to completion, optionally interrupting before every instruction.
pub fn execute(p: &mut Platform, eid: EnclaveId, mode: InterruptMode) -> Result<u64, CpuError> {
    let mut executed = 0;
    loop {
        if mode == InterruptMode::Storm {
            p.cpu.aex(eid)?;
            p.cpu.eresume(eid)?;
        }
        executed += 1;
        if p.cpu.step(&mut p.bus, eid)? == StepOutcome::Exited {
            return Ok(executed);
        }
    }
}

/// Enters with an empty program unless a context is already live; returns whether it entered.
fn enter_idle(p: &mut Platform, eid: EnclaveId) -> Result<bool, CpuError> {
    if p.cpu.context_state(eid)?.is_some() {
        return Ok(false);
    }
    p.cpu.eenter(&mut p.bus, eid, vec![Instr::Exit], &[])?;
    Ok(true)
}

fn leave(p: &mut Platform, eid: EnclaveId, entered: bool) -> Result<(), CpuError> {
    if entered {
        p.cpu.eexit(eid)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuotePackage {
    pub report: Report,
    pub qe_identity: EnclaveIdentity,
    pub quote: Quote,
    pub ak_public: PublicKey,
}

/// Attestation key selector of a quoting enclave.
pub fn qe_ak_selector(qe_keyid: Digest32) -> KeySelector {
    KeySelector::new(KeyName::Attest, true, true, qe_keyid)
}

pub fn attest_enclave(
    p: &mut Platform,
    eid: EnclaveId,
    qe: EnclaveId,
    nonce: &[u8],
    user_data: &[u8],
) -> Result<QuotePackage, CpuError> {
    if user_data.len() != REPORT_DATA_LEN {
        return Err(CpuError::BadOperand);
    }
    let qe_identity = p.cpu.identity(qe)?;
    let entered = enter_idle(p, eid)?;
    let report = p.cpu.ereport(eid, &qe_identity, user_data);
    leave(p, eid, entered)?;
    let report = report?;

    let entered = enter_idle(p, qe)?;
    let result = (|| -> Result<_, CpuError> {
        let keyid = p.cpu.secs(qe)?.keyid;
        let ak = p.cpu.egetkey(&mut p.bus, qe, &qe_ak_selector(keyid))?;
        let quote = p.cpu.attest_quote(&mut p.bus, qe, ak.handle, &report, nonce)?;
        Ok((ak, quote))
    })();
    leave(p, qe, entered)?;
    let (ak, quote) = result?;
    p.note("flow", "attest_enclave", &report.canonical(), "OK");
    Ok(QuotePackage { report, qe_identity, quote, ak_public: ak.public.ok_or(CpuError::BadReport)? })
}

/// Attestation PCR value after reset, QE measurement, and report digest.
pub fn expected_attestation_pcr(qe_mrenclave: &Digest32, report_digest: &Digest32) -> Digest32 {
    let v = crypto::hash_extend(&Digest32::zero(), qe_mrenclave.as_bytes());
    crypto::hash_extend(&v, report_digest.as_bytes())
}

/// Verifier side: recomputes the quoted composite from first principles.
pub fn verify_quote_package(pkg: &QuotePackage, expected_qe_mrenclave: &Digest32, nonce: &[u8]) -> bool {
    let q = &pkg.quote;
    if pkg.qe_identity.mrenclave != *expected_qe_mrenclave
        || pkg.report.target != pkg.qe_identity
        || q.qualifying != nonce
        || q.selection.indices().collect::<Vec<_>>() != [PCR_ENCLAVE_ATTEST]
    {
        return false;
    }
    let pcr = expected_attestation_pcr(&pkg.qe_identity.mrenclave, &pkg.report.digest());
    if q.composite != composite_of(&[pcr]) {
        return false;
    }
    crypto::verify(&pkg.ak_public, &q.signed_digest(), &q.signature).unwrap_or(false)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncryptOutput {
    pub nonce: u64,
    pub ciphertext: Vec<u8>,
    pub key: KeyHandle,
    pub instructions: u64,
}

fn encrypt_program(len: usize, nonce: u64) -> Vec<Instr> {
    let blocks = len.div_ceil(16) as u64;
    let mut prog: Vec<Instr> = (0..blocks)
        .map(|b| Instr::EncryptBlockWithBnd { bnd: 0, nonce, block: b, addr: OUTPUT_BASE + 16 * b })
        .collect();
    prog.push(Instr::Exit);
    prog
}

/// Program that routes the key through general-purpose registers into memory before encrypting.
fn insecure_program(len: usize, nonce: u64) -> Vec<Instr> {
    let spill = OUTPUT_BASE - 0x100;
    let mut prog = vec![
        Instr::MoveBndToGpr { bnd: 0, gpr: 0 },
        Instr::WriteMem { addr: spill, gpr: 0 },
        Instr::WriteMem { addr: spill + 8, gpr: 1 },
    ];
    prog.extend(encrypt_program(len, nonce));
    prog
}

fn run_encrypt(
    p: &mut Platform,
    eid: EnclaveId,
    selector: &KeySelector,
    plaintext: &[u8],
    mode: InterruptMode,
    insecure: bool,
) -> Result<EncryptOutput, CpuError> {
    if selector.keyname != KeyName::SealSym {
        return Err(CpuError::BadOperand);
    }
    let nonce = p.os(Locality::L0).read_clock()?;
    let program =
        if insecure { insecure_program(plaintext.len(), nonce) } else { encrypt_program(plaintext.len(), nonce) };
    p.cpu.eenter(&mut p.bus, eid, program, plaintext)?;
    let key = match p.cpu.egetkey(&mut p.bus, eid, selector) {
        Ok(k) => k,
        Err(e) => {
            p.cpu.eexit(eid)?;
            return Err(e);
        }
    };
    let instructions = execute(p, eid, mode)?;
    let blocks = plaintext.len().div_ceil(16) as u64;
    let mut ciphertext = Vec::with_capacity(plaintext.len());
    for b in 0..blocks {
        ciphertext.extend_from_slice(p.cpu.read_memory(OUTPUT_BASE + 16 * b).unwrap_or_default());
    }
    p.note("flow", "data_encrypt", &ciphertext, "OK");
    Ok(EncryptOutput { nonce, ciphertext, key, instructions })
}

/// Encrypts `plaintext` inside the enclave with a TPM key released straight into BND0.
pub fn data_encrypt(
    p: &mut Platform,
    eid: EnclaveId,
    selector: &KeySelector,
    plaintext: &[u8],
    mode: InterruptMode,
) -> Result<EncryptOutput, CpuError> {
    run_encrypt(p, eid, selector, plaintext, mode, false)
}

/// Baseline variant that copies the key through memory; it must leak.
pub fn data_encrypt_insecure(
    p: &mut Platform,
    eid: EnclaveId,
    selector: &KeySelector,
    plaintext: &[u8],
    mode: InterruptMode,
) -> Result<EncryptOutput, CpuError> {
    run_encrypt(p, eid, selector, plaintext, mode, true)
}

/// Decrypts through the TPM with the same identity-bound key.
pub fn data_decrypt(
    p: &mut Platform,
    eid: EnclaveId,
    selector: &KeySelector,
    out: &EncryptOutput,
) -> Result<Vec<u8>, CpuError> {
    let entered = enter_idle(p, eid)?;
    let r = p.cpu.tpm_crypt(&mut p.bus, eid, out.key.handle, selector, out.nonce, &out.ciphertext);
    leave(p, eid, entered)?;
    r
}

/// Default data-encryption key selector for an enclave.
pub fn data_key_selector() -> KeySelector {
    KeySelector::new(KeyName::SealSym, true, true, crypto::hash(b"DATA-KEY"))
}

pub fn trusted_time(p: &mut Platform, eid: EnclaveId) -> Result<u64, CpuError> {
    let entered = enter_idle(p, eid)?;
    let t = p.cpu.trusted_time(&mut p.bus, eid, 0);
    leave(p, eid, entered)?;
    t
}

/// Deterministic cost of a flow run in TPM commands and bus frames.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowMetrics {
    pub tpm_command_count: u64,
    pub bus_frame_count: u64,
    pub per_command: BTreeMap<String, u64>,
}

pub fn measure<R>(p: &mut Platform, f: impl FnOnce(&mut Platform) -> R) -> (R, FlowMetrics) {
    let before = p.bus.stats().clone();
    let r = f(p);
    let after = p.bus.stats();
    let mut per_command = BTreeMap::new();
    for (name, n) in &after.per_command {
        let d = n - before.per_command.get(name).copied().unwrap_or(0);
        if d > 0 {
            per_command.insert(name.clone(), d);
        }
    }
    let m = FlowMetrics {
        tpm_command_count: after.commands - before.commands,
        bus_frame_count: after.frames - before.frames,
        per_command,
    };
    (r, m)
}

/// Raw key of a released symmetric object, for harness checks only.
#[doc(hidden)]
pub fn debug_key_bytes(p: &Platform, key: &KeyHandle) -> Option<SymKey128> {
    p.tpm().debug_object_secret(key.handle).and_then(|s| SymKey128::from_slice(&s))
}
