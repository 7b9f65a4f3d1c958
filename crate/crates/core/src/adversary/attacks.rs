// SPDX-License-Identifier: Apache-2.0

//! Attack catalog. Each case starts from a fresh fixture platform, drives the
//! attack through the interfaces an OS-level attacker has, and must be
//! stopped with its designated error. Afterwards the honest flows are rerun on
//! the same platform and compared with a clean run.

use serde::{Deserialize, Serialize};

use super::{leaked_secrets, Observables};
use crate::bus::{BusError, ChannelError, Cycle, Direction, SecureBus};
use crate::cpu::{CpuError, EinitToken, EnclaveId, IdentityBinding, Instr, KeyHandle, SealedBlob, REPORT_DATA_LEN};
use crate::crypto::{Digest32, Signature};
use crate::flows::{
    self, attest_enclave, build_enclave, create_enclave, data_decrypt, data_encrypt, data_key_selector,
    guard_provision, launch_enclave, qe_ak_selector, restart_guard, verify_quote_package, EnclaveBlueprint,
    GuardDecision, InterruptMode, RestartPolicy, GUARD_COUNTER,
};
use crate::platform::Platform;
use crate::tpm::pcr::{PcrSelection, PCR_ENCLAVE_ATTEST, PCR_LAUNCH_MRENCLAVE};
use crate::tpm::{
    command::decode_result, Handle, Locality, NvKind, NvValue, ObjectKind, ObjectTemplate, TpmCall, TpmCommand,
    TpmDevice, TpmError, NV_BASE,
};

trait ErrorCode {
    fn error_code(&self) -> &'static str;
}

impl ErrorCode for CpuError {
    fn error_code(&self) -> &'static str {
        self.code()
    }
}

impl ErrorCode for ChannelError {
    fn error_code(&self) -> &'static str {
        self.code()
    }
}

impl ErrorCode for BusError {
    fn error_code(&self) -> &'static str {
        self.code()
    }
}

impl ErrorCode for TpmError {
    fn error_code(&self) -> &'static str {
        self.code()
    }
}

/// Why an attack did not get through.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Blocked(pub String);

impl<E: ErrorCode> From<E> for Blocked {
    fn from(e: E) -> Self {
        Blocked(e.error_code().to_string())
    }
}

/// `Ok(())` means the attack achieved its goal.
type Attempt = Result<(), Blocked>;

fn setup<E: ErrorCode>(e: E) -> Blocked {
    Blocked(format!("SETUP:{}", e.error_code()))
}

fn outcome(code: &str) -> Blocked {
    Blocked(code.to_string())
}

/// Every try must fail; differing codes are reported together.
fn all_rejected<T, E: ErrorCode>(results: Vec<Result<T, E>>) -> Attempt {
    let mut codes: Vec<&'static str> = Vec::new();
    for r in results {
        match r {
            Ok(_) => return Ok(()),
            Err(e) => {
                if !codes.contains(&e.error_code()) {
                    codes.push(e.error_code());
                }
            }
        }
    }
    Err(Blocked(codes.join("|")))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    /// Stopped with the designated error, honest flows unaffected.
    Pass,
    SecurityViolation,
    UnexpectedError,
    /// Stopped, but later honest flows behaved differently from a clean run.
    Interference,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackReport {
    pub attack: String,
    pub expected_error: String,
    pub observed: String,
    pub verdict: Verdict,
}

/// Platform state every attack starts from: a launched victim with a data key
/// and a provisioned restart guard, a launched intruder from another author,
/// and a launched quoting enclave.
pub struct Fixture {
    pub seed: u64,
    pub victim: EnclaveBlueprint,
    pub victim_eid: EnclaveId,
    pub victim_token: EinitToken,
    pub victim_key: KeyHandle,
    pub guard_blob: SealedBlob,
    pub intruder: EnclaveBlueprint,
    pub intruder_eid: EnclaveId,
    pub qe: EnclaveBlueprint,
    pub qe_eid: EnclaveId,
}

impl Fixture {
    pub fn setup(seed: u64) -> Result<(Platform, Fixture), CpuError> {
        let mut p = Platform::new(seed);
        let victim = EnclaveBlueprint::synthetic(seed, "victim", 2);
        let victim_eid = create_enclave(&mut p, &victim.pages, &victim.sigstruct())?;
        let victim_token = launch_enclave(&mut p, victim_eid)?;
        let intruder = EnclaveBlueprint::synthetic(seed, "intruder", 2);
        let intruder_eid = build_enclave(&mut p, &intruder)?;
        let qe = EnclaveBlueprint::synthetic(seed, "quoting", 1);
        let qe_eid = build_enclave(&mut p, &qe)?;
        let victim_key = data_encrypt(&mut p, victim_eid, &data_key_selector(), b"fixture", InterruptMode::None)?.key;
        let guard_blob = inside(&mut p, victim_eid, |p| guard_provision(p, victim_eid, RestartPolicy::starts(3)))?;
        let fx = Fixture {
            seed,
            victim,
            victim_eid,
            victim_token,
            victim_key,
            guard_blob,
            intruder,
            intruder_eid,
            qe,
            qe_eid,
        };
        Ok((p, fx))
    }
}

/// Runs `f` inside an idle context of `eid` and always leaves again.
fn inside<R>(
    p: &mut Platform,
    eid: EnclaveId,
    f: impl FnOnce(&mut Platform) -> Result<R, CpuError>,
) -> Result<R, CpuError> {
    p.cpu.eenter(&mut p.bus, eid, vec![Instr::Exit], &[])?;
    let r = f(p);
    p.cpu.eexit(eid)?;
    r
}

fn os_template(kind: ObjectKind) -> ObjectTemplate {
    ObjectTemplate { kind, creation_context: b"os-owned".to_vec(), auth_policy: Digest32::zero() }
}

fn os_key(p: &mut Platform, kind: ObjectKind) -> Result<Handle, Blocked> {
    Ok(p.os(Locality::L0).create_primary(&os_template(kind)).map_err(setup)?.0)
}

/// Tap frames written since `from`, as (request, reply) pairs.
fn exchanges(bus: &SecureBus, from: usize) -> Vec<(Vec<u8>, Vec<u8>)> {
    bus.tap_ref().frames()[from..].chunks_exact(2).map(|c| (c[0].clone(), c[1].clone())).collect()
}

fn tapped_os_exchange(p: &mut Platform) -> Result<(Vec<u8>, Vec<u8>), Blocked> {
    let before = p.bus.tap_ref().len();
    p.os(Locality::L0).read_clock().map_err(setup)?;
    exchanges(&p.bus, before).pop().ok_or_else(|| outcome("SETUP:NO_FRAME"))
}

// ---- bus ----

fn replay_launch_frames(p: &mut Platform, fx: &Fixture) -> Attempt {
    let eid = create_enclave(p, &fx.victim.pages, &fx.victim.sigstruct()).map_err(setup)?;
    let before = p.bus.tap_ref().len();
    launch_enclave(p, eid).map_err(setup)?;
    let mut results = Vec::new();
    for (request, _) in exchanges(&p.bus, before) {
        results.push(p.bus.inject(Direction::ToTpm, &request));
    }
    all_rejected(results)
}

fn replay_reply_to_host(p: &mut Platform, _fx: &Fixture) -> Attempt {
    let (_, reply) = tapped_os_exchange(p)?;
    p.bus.inject(Direction::ToHost, &reply)?;
    Ok(())
}

fn tamper_ciphertext(p: &mut Platform, _fx: &Fixture) -> Attempt {
    let (mut request, _) = tapped_os_exchange(p)?;
    request[14] ^= 0x01;
    p.bus.inject(Direction::ToTpm, &request)?;
    Ok(())
}

fn relabel_locality(p: &mut Platform, _fx: &Fixture) -> Attempt {
    let (mut request, _) = tapped_os_exchange(p)?;
    request[1] = 4;
    p.bus.inject(Direction::ToTpm, &request)?;
    Ok(())
}

fn relabel_cycle(p: &mut Platform, _fx: &Fixture) -> Attempt {
    let (mut request, _) = tapped_os_exchange(p)?;
    request[0] = Cycle::Dma.to_byte();
    p.bus.inject(Direction::ToTpm, &request)?;
    Ok(())
}

fn truncated_frame(p: &mut Platform, _fx: &Fixture) -> Attempt {
    let (request, _) = tapped_os_exchange(p)?;
    p.bus.inject(Direction::ToTpm, &request[..request.len() - 1])?;
    Ok(())
}

fn dma_during_io(p: &mut Platform, _fx: &Fixture) -> Attempt {
    let cmd = TpmCommand::ReadClock.encode();
    p.cpu.with_microcode_session(&mut p.bus, |bus| bus.send(Locality::L0, Cycle::Dma, &cmd)).map_err(setup)??;
    Ok(())
}

fn io_during_microcode_session(p: &mut Platform, _fx: &Fixture) -> Attempt {
    let cmd = TpmCommand::PcrReset { index: PCR_ENCLAVE_ATTEST }.encode();
    p.cpu.with_microcode_session(&mut p.bus, |bus| bus.send(Locality::L3, Cycle::Io, &cmd)).map_err(setup)??;
    Ok(())
}

fn hijack_io_session(p: &mut Platform, _fx: &Fixture) -> Attempt {
    p.cpu.with_microcode_session(&mut p.bus, |bus| bus.io_session_open(Locality::L3)).map_err(setup)??;
    Ok(())
}

fn low_locality_session(p: &mut Platform, _fx: &Fixture) -> Attempt {
    all_rejected(vec![p.bus.io_session_open(Locality::L0), p.bus.io_session_open(Locality::L1)])
}

fn claim_locality4(p: &mut Platform, _fx: &Fixture) -> Attempt {
    let cmd = TpmCommand::PcrReset { index: PCR_ENCLAVE_ATTEST }.encode();
    all_rejected(vec![p.bus.send(Locality::L4, Cycle::Io, &cmd).map(|_| ()), p.bus.io_session_open(Locality::L4)])
}

fn interpose_unkeyed_channel(_p: &mut Platform, fx: &Fixture) -> Attempt {
    let device = TpmDevice::from_manufacturing_seed(&fx.seed.to_be_bytes());
    let mut bus = SecureBus::new(device);
    bus.send(Locality::L0, Cycle::Io, &TpmCommand::ReadClock.encode())?;
    Ok(())
}

// ---- tpm ----

fn retake_ownership(p: &mut Platform, _fx: &Fixture) -> Attempt {
    p.os(Locality::L0).take_ownership(b"attacker")?;
    Ok(())
}

fn unowned_device_keys(_p: &mut Platform, fx: &Fixture) -> Attempt {
    let mut blank = TpmDevice::from_manufacturing_seed(&fx.seed.to_be_bytes());
    blank.at(Locality::L0).create_primary(&os_template(ObjectKind::HmacKey))?;
    Ok(())
}

fn out_of_range_locality(p: &mut Platform, _fx: &Fixture) -> Attempt {
    let reply = p.bus.tpm_mut().process(5, &TpmCommand::ReadClock.encode());
    decode_result(&reply)??;
    Ok(())
}

fn forged_session_handle(p: &mut Platform, fx: &Fixture) -> Attempt {
    let guessed = Handle(0x0300_0000 | 0x0fff);
    p.os(Locality::L0).encrypt_decrypt(fx.victim_key.handle, Some(guessed), 0, b"chosen plaintext")?;
    Ok(())
}

fn identity_assertion_from_os(p: &mut Platform, fx: &Fixture) -> Attempt {
    let assertion = IdentityBinding::ENCLAVE.assertion(&fx.victim.identity());
    let mut results = Vec::new();
    for l in 0..=3 {
        let mut os = p.os(Locality::new(l).expect("valid"));
        let s = os.policy_start_session().map_err(setup)?;
        results.push(os.policy_identity(s, &assertion));
    }
    all_rejected(results)
}

fn forged_wrap_blob(p: &mut Platform, _fx: &Fixture) -> Attempt {
    let parent = os_key(p, ObjectKind::HmacKey)?;
    let mut os = p.os(Locality::L0);
    let blob = os.create_wrapped(parent, None, &os_template(ObjectKind::SymmetricKey)).map_err(setup)?;
    let mut results = Vec::new();
    for i in [0, 8, blob.len() / 2, blob.len() - 1] {
        let mut forged = blob.clone();
        forged[i] ^= 0x80;
        results.push(os.load(parent, None, &forged));
    }
    all_rejected(results)
}

fn load_under_unknown_parent(p: &mut Platform, _fx: &Fixture) -> Attempt {
    p.os(Locality::L0).load(Handle(0x8000_0000 | 0xfff0), None, &[0u8; 64])?;
    Ok(())
}

fn cross_enclave_key_use(p: &mut Platform, fx: &Fixture) -> Attempt {
    let eid = fx.intruder_eid;
    let program = vec![
        Instr::LoadSecretToBnd { slot: 0, handle: fx.victim_key.handle, selector: data_key_selector() },
        Instr::Exit,
    ];
    p.cpu.eenter(&mut p.bus, eid, program, &[]).map_err(setup)?;
    let step = p.cpu.step(&mut p.bus, eid);
    if p.cpu.context_state(eid).map_err(setup)?.is_some() {
        p.cpu.eexit(eid).map_err(setup)?;
    }
    step?;
    Ok(())
}

fn launch_pcr_interference(p: &mut Platform, fx: &Fixture) -> Attempt {
    let eid = create_enclave(p, &fx.intruder.pages, &fx.intruder.sigstruct()).map_err(setup)?;
    p.cpu.launch_prepare(&mut p.bus, eid).map_err(setup)?;
    let victim = fx.victim.identity();
    p.os(Locality::L0).pcr_extend(PCR_LAUNCH_MRENCLAVE, &victim.mrenclave).map_err(setup)?;
    p.cpu.launch_mint(&mut p.bus, eid)?;
    Ok(())
}

fn hmac_with_symmetric_key(p: &mut Platform, _fx: &Fixture) -> Attempt {
    let key = os_key(p, ObjectKind::SymmetricKey)?;
    p.os(Locality::L0).hmac_sign(key, None, b"message")?;
    Ok(())
}

fn malformed_public_key(p: &mut Platform, _fx: &Fixture) -> Attempt {
    let verified = p.os(Locality::L0).verify_signature(&[0xff; 7], &Digest32::zero(), &Signature(vec![0; 64]))?;
    if verified {
        Ok(())
    } else {
        Err(outcome("REJECTED"))
    }
}

fn unknown_hash_sequence(p: &mut Platform, _fx: &Fixture) -> Attempt {
    p.os(Locality::L0).hash_sequence_update(Handle(0x8000_0000 | 0xfff1), b"chunk")?;
    Ok(())
}

/// Guesses the handle of a live measurement sequence and feeds it a page.
fn hijack_measurement_sequence(p: &mut Platform, fx: &Fixture) -> Attempt {
    let mut os = p.os(Locality::L0);
    let probe = os.hash_sequence_start().map_err(setup)?;
    os.hash_sequence_complete(probe).map_err(setup)?;
    let sig = fx.victim.sigstruct();
    let keyid = flows::fresh_keyid(p).map_err(setup)?;
    let eid = p.cpu.ecreate(&mut p.bus, sig.attributes, keyid, &sig.author_public).map_err(setup)?;
    let mut results = Vec::new();
    for guess in probe.0 + 1..probe.0 + 6 {
        results.push(p.os(Locality::L0).hash_sequence_update(Handle(guess), b"forged page"));
    }
    let verdict = all_rejected(
        results.into_iter().filter(|r| !matches!(r, Err(ChannelError::Tpm(TpmError::UnknownSequence)))).collect(),
    );
    let _ = p.cpu.eremove(eid);
    verdict
}

fn reset_attestation_pcr(p: &mut Platform, _fx: &Fixture) -> Attempt {
    let mut results = Vec::new();
    for l in 0..=3 {
        let mut os = p.os(Locality::new(l).expect("valid"));
        results.push(os.pcr_reset(PCR_ENCLAVE_ATTEST));
        results.push(os.pcr_extend(PCR_ENCLAVE_ATTEST, &Digest32([0xaa; 32])));
    }
    all_rejected(results)
}

fn release_key_to_software(p: &mut Platform, fx: &Fixture) -> Attempt {
    let mut results = Vec::new();
    for l in 0..=3 {
        results.push(p.os(Locality::new(l).expect("valid")).release_symmetric(fx.victim_key.handle, None));
    }
    all_rejected(results)
}

fn out_of_range_pcr(p: &mut Platform, _fx: &Fixture) -> Attempt {
    p.os(Locality::L0).pcr_extend(24, &Digest32::zero())?;
    Ok(())
}

fn read_undefined_nv(p: &mut Platform, _fx: &Fixture) -> Attempt {
    p.os(Locality::L0).nv_read(Handle(NV_BASE | 0xbeef), None)?;
    Ok(())
}

fn quote_nothing(p: &mut Platform, _fx: &Fixture) -> Attempt {
    let ak = os_key(p, ObjectKind::AttestationKey)?;
    p.os(Locality::L0).quote(ak, None, &PcrSelection::empty(), b"nonce")?;
    Ok(())
}

fn corrupt_state_image(p: &mut Platform, _fx: &Fixture) -> Attempt {
    let image = p.persist();
    let damaged: Vec<String> = vec![
        image.replacen("clock = ", "clock = zz", 1),
        image.lines().take(2).collect::<Vec<_>>().join("\n"),
        format!("{image}unknown_key = 00\n"),
    ];
    all_rejected(damaged.iter().map(|s| TpmDevice::restore(s)).collect())
}

fn downgrade_state_version(p: &mut Platform, _fx: &Fixture) -> Attempt {
    let image = p.persist().replacen(" v1", " v0", 1);
    TpmDevice::restore(&image)?;
    Ok(())
}

fn redefine_guard_counter(p: &mut Platform, _fx: &Fixture) -> Attempt {
    p.os(Locality::L0).nv_define_space(GUARD_COUNTER, NvKind::Counter, 8, Digest32::zero())?;
    Ok(())
}

fn overflow_nv_data(p: &mut Platform, _fx: &Fixture) -> Attempt {
    let index = Handle(NV_BASE | 0x0099);
    let mut os = p.os(Locality::L0);
    os.nv_define_space(index, NvKind::Data, 4, Digest32::zero()).map_err(setup)?;
    os.nv_write(index, None, &[0; 5])?;
    Ok(())
}

fn malformed_command(p: &mut Platform, _fx: &Fixture) -> Attempt {
    let reply = p.bus.send(Locality::L0, Cycle::Io, &[0xff, 0xff, 0xff])?;
    decode_result(&reply)??;
    Ok(())
}

fn guard_counter(p: &mut Platform, eid: EnclaveId) -> Result<u64, CpuError> {
    inside(p, eid, |p| match p.cpu.nv_read(&mut p.bus, eid, GUARD_COUNTER, IdentityBinding::SIGNER_ONLY)? {
        NvValue::Counter(v) => Ok(v),
        NvValue::Data(_) => Err(CpuError::BadOperand),
    })
}

/// Tries every software path to lower the restart counter, including a power cycle.
fn rollback_counter(p: &mut Platform, fx: &Fixture) -> Attempt {
    inside(p, fx.victim_eid, |p| restart_guard(p, fx.victim_eid, &fx.guard_blob)).map_err(setup)?;
    let before = guard_counter(p, fx.victim_eid).map_err(setup)?;

    let mut os = p.os(Locality::L0);
    let _ = os.nv_write(GUARD_COUNTER, None, &0u64.to_be_bytes());
    let _ = os.nv_define_space(GUARD_COUNTER, NvKind::Counter, 8, Digest32::zero());
    let intruder = fx.intruder_eid;
    let _ = inside(p, intruder, |p| {
        p.cpu.nv_write(&mut p.bus, intruder, GUARD_COUNTER, IdentityBinding::SIGNER_ONLY, &[0; 8])
    });

    let taken = std::mem::replace(p, Platform::new(fx.seed));
    *p = taken.power_cycle().map_err(setup)?;
    let victim = build_enclave(p, &fx.victim).map_err(setup)?;
    let after = guard_counter(p, victim).map_err(setup)?;
    if after < before {
        Ok(())
    } else {
        Err(outcome("NO_DECREASE"))
    }
}

/// The owner lowers the threshold; the attacker replays the older, larger one.
fn replay_stale_threshold(p: &mut Platform, fx: &Fixture) -> Attempt {
    let eid = fx.victim_eid;
    let lowered = inside(p, eid, |p| guard_provision(p, eid, RestartPolicy::starts(1))).map_err(setup)?;
    inside(p, eid, |p| restart_guard(p, eid, &lowered)).map_err(setup)?;
    let replayed = inside(p, eid, |p| restart_guard(p, eid, &fx.guard_blob))?;
    match replayed.decision {
        GuardDecision::Proceed => Ok(()),
        GuardDecision::Abort => Err(outcome("ABORT")),
    }
}

// ---- cpu and flows ----

fn forge_token_swap_identity(p: &mut Platform, fx: &Fixture) -> Attempt {
    let eid = create_enclave(p, &fx.intruder.pages, &fx.intruder.sigstruct()).map_err(setup)?;
    let id = p.cpu.identity(eid).map_err(setup)?;
    let mut forged = fx.victim_token.clone();
    forged.body[..32].copy_from_slice(id.mrenclave.as_bytes());
    let results = vec![p.cpu.einit(&mut p.bus, eid, &forged), p.cpu.einit(&mut p.bus, eid, &fx.victim_token)];
    all_rejected(results)
}

fn flip_token_tag(p: &mut Platform, fx: &Fixture) -> Attempt {
    let eid = create_enclave(p, &fx.victim.pages, &fx.victim.sigstruct()).map_err(setup)?;
    p.cpu.launch_prepare(&mut p.bus, eid).map_err(setup)?;
    let mut token = p.cpu.launch_mint(&mut p.bus, eid).map_err(setup)?;
    token.tag.0[0] ^= 0x01;
    p.cpu.einit(&mut p.bus, eid, &token)?;
    Ok(())
}

fn tampered_page(p: &mut Platform, fx: &Fixture) -> Attempt {
    let mut pages = fx.victim.pages.clone();
    pages[1].1[100] ^= 0x04;
    create_enclave(p, &pages, &fx.victim.sigstruct())?;
    Ok(())
}

fn foreign_author_signature(p: &mut Platform, fx: &Fixture) -> Attempt {
    let mut sig = fx.victim.sigstruct();
    sig.signature = fx.intruder.sigstruct().signature;
    let mut claimed = fx.victim.sigstruct();
    claimed.author_public = fx.intruder.author.public.clone();
    all_rejected(vec![create_enclave(p, &fx.victim.pages, &sig), create_enclave(p, &fx.victim.pages, &claimed)])
}

fn add_page_after_launch(p: &mut Platform, fx: &Fixture) -> Attempt {
    p.cpu.eadd(&mut p.bus, fx.victim_eid, 0x10_0000, &[0xcc; 64])?;
    Ok(())
}

fn refinalize_measurement(p: &mut Platform, fx: &Fixture) -> Attempt {
    let eid = create_enclave(p, &fx.victim.pages, &fx.victim.sigstruct()).map_err(setup)?;
    p.cpu.finalize_measurement(&mut p.bus, eid)?;
    Ok(())
}

fn launch_unmeasured(p: &mut Platform, fx: &Fixture) -> Attempt {
    let sig = fx.victim.sigstruct();
    let keyid = flows::fresh_keyid(p).map_err(setup)?;
    let eid = p.cpu.ecreate(&mut p.bus, sig.attributes, keyid, &sig.author_public).map_err(setup)?;
    all_rejected(vec![
        p.cpu.launch_prepare(&mut p.bus, eid).map(|_| ()),
        p.cpu.einit(&mut p.bus, eid, &fx.victim_token),
    ])
}

fn relaunch(p: &mut Platform, fx: &Fixture) -> Attempt {
    p.cpu.einit(&mut p.bus, fx.victim_eid, &fx.victim_token)?;
    Ok(())
}

fn enter_unlaunched(p: &mut Platform, fx: &Fixture) -> Attempt {
    let eid = create_enclave(p, &fx.intruder.pages, &fx.intruder.sigstruct()).map_err(setup)?;
    p.cpu.eenter(&mut p.bus, eid, vec![Instr::Exit], &[])?;
    Ok(())
}

fn interrupt_idle_enclave(p: &mut Platform, fx: &Fixture) -> Attempt {
    all_rejected(vec![p.cpu.aex(fx.victim_eid).map(|_| ()), p.cpu.eresume(fx.victim_eid)])
}

fn remove_running_enclave(p: &mut Platform, fx: &Fixture) -> Attempt {
    let eid = fx.victim_eid;
    p.cpu.eenter(&mut p.bus, eid, vec![Instr::Nop, Instr::Exit], &[]).map_err(setup)?;
    let removed = p.cpu.eremove(eid);
    p.cpu.run(&mut p.bus, eid).map_err(setup)?;
    removed?;
    Ok(())
}

fn use_removed_enclave(p: &mut Platform, fx: &Fixture) -> Attempt {
    let eid = build_enclave(p, &fx.intruder).map_err(setup)?;
    p.cpu.eremove(eid).map_err(setup)?;
    p.cpu.eenter(&mut p.bus, eid, vec![Instr::Exit], &[])?;
    Ok(())
}

fn malformed_report_data(p: &mut Platform, fx: &Fixture) -> Attempt {
    attest_enclave(p, fx.victim_eid, fx.qe_eid, b"nonce", &[0; REPORT_DATA_LEN - 1])?;
    Ok(())
}

/// Presents the quoting enclave with altered or misdirected reports.
fn forged_report(p: &mut Platform, fx: &Fixture) -> Attempt {
    let qe_id = p.cpu.identity(fx.qe_eid).map_err(setup)?;
    let intruder_id = p.cpu.identity(fx.intruder_eid).map_err(setup)?;
    let victim = fx.victim_eid;
    let honest = inside(p, victim, |p| p.cpu.ereport(victim, &qe_id, &[7; REPORT_DATA_LEN])).map_err(setup)?;
    let misdirected =
        inside(p, victim, |p| p.cpu.ereport(victim, &intruder_id, &[7; REPORT_DATA_LEN])).map_err(setup)?;
    let mut altered = honest.clone();
    altered.user_data[0] ^= 1;
    let mut relabeled = honest;
    relabeled.reporting = intruder_id;

    let qe = fx.qe_eid;
    let keyid = p.cpu.secs(qe).map_err(setup)?.keyid;
    let results = inside(p, qe, |p| {
        let ak = p.cpu.egetkey(&mut p.bus, qe, &qe_ak_selector(keyid))?;
        Ok([altered, misdirected, relabeled]
            .iter()
            .map(|r| p.cpu.attest_quote(&mut p.bus, qe, ak.handle, r, b"nonce"))
            .collect::<Vec<_>>())
    })
    .map_err(setup)?;
    all_rejected(results)
}

fn unseal_across_signers(p: &mut Platform, fx: &Fixture) -> Attempt {
    let (victim, intruder) = (fx.victim_eid, fx.intruder_eid);
    let blob = inside(p, victim, |p| p.cpu.seal(&mut p.bus, victim, IdentityBinding::SIGNER, b"victim data"))
        .map_err(setup)?;
    let mut tampered = blob.clone();
    tampered.ciphertext[0] ^= 1;
    let mut renonced = blob.clone();
    renonced.nonce += 1;
    let results = vec![
        inside(p, intruder, |p| p.cpu.unseal(&mut p.bus, intruder, &blob)),
        inside(p, victim, |p| p.cpu.unseal(&mut p.bus, victim, &tampered)),
        inside(p, victim, |p| p.cpu.unseal(&mut p.bus, victim, &renonced)),
    ];
    all_rejected(results)
}

fn tamper_quote_package(p: &mut Platform, fx: &Fixture) -> Attempt {
    let nonce = b"verifier nonce";
    let pkg = attest_enclave(p, fx.victim_eid, fx.qe_eid, nonce, &[3; REPORT_DATA_LEN]).map_err(setup)?;
    let expected = fx.qe.expected_mrenclave();
    if !verify_quote_package(&pkg, &expected, nonce) {
        return Err(outcome("SETUP:HONEST_QUOTE_REJECTED"));
    }
    let mut altered = pkg.clone();
    altered.report.user_data[5] ^= 0x10;
    let mut swapped = pkg.clone();
    swapped.report.reporting = fx.intruder.identity();
    let accepted = verify_quote_package(&altered, &expected, nonce)
        || verify_quote_package(&swapped, &expected, nonce)
        || verify_quote_package(&pkg, &expected, b"other nonce");
    if accepted {
        Ok(())
    } else {
        Err(outcome("REJECTED"))
    }
}

/// Runs the data-encryption flow under an interrupt storm and searches
/// everything observable for every tracked secret.
fn storm_secret_search(p: &mut Platform, fx: &Fixture) -> Attempt {
    let out =
        data_encrypt(p, fx.victim_eid, &data_key_selector(), &[0x5a; 100], InterruptMode::Storm).map_err(setup)?;
    data_decrypt(p, fx.victim_eid, &data_key_selector(), &out).map_err(setup)?;
    if leaked_secrets(p, &Observables::capture(p)).is_empty() {
        Err(outcome("NOT_FOUND"))
    } else {
        Ok(())
    }
}

pub struct Attack {
    pub name: &'static str,
    pub expected: &'static str,
    run: fn(&mut Platform, &Fixture) -> Attempt,
}

macro_rules! attack {
    ($f:ident, $code:expr) => {
        Attack { name: stringify!($f), expected: $code, run: $f }
    };
}

pub const CATALOG: &[Attack] = &[
    attack!(replay_launch_frames, "REPLAY"),
    attack!(replay_reply_to_host, "REPLAY"),
    attack!(tamper_ciphertext, "TAMPER"),
    attack!(relabel_locality, "TAMPER"),
    attack!(relabel_cycle, "TAMPER"),
    attack!(truncated_frame, "TAMPER"),
    attack!(dma_during_io, "BUS_BUSY"),
    attack!(io_during_microcode_session, "BUS_BUSY"),
    attack!(hijack_io_session, "SESSION_BUSY"),
    attack!(low_locality_session, "SESSION_LOCALITY"),
    attack!(claim_locality4, "PRIVILEGED_LOCALITY"),
    attack!(interpose_unkeyed_channel, "NOT_ESTABLISHED"),
    attack!(retake_ownership, "ALREADY_OWNED"),
    attack!(unowned_device_keys, "NOT_OWNED"),
    attack!(out_of_range_locality, "INVALID_LOCALITY"),
    attack!(forged_session_handle, "UNKNOWN_SESSION"),
    attack!(identity_assertion_from_os, "IDENTITY_LOCALITY"),
    attack!(forged_wrap_blob, "BAD_WRAP"),
    attack!(load_under_unknown_parent, "UNKNOWN_PARENT"),
    attack!(cross_enclave_key_use, "POLICY_FAIL"),
    attack!(launch_pcr_interference, "POLICY_FAIL"),
    attack!(hmac_with_symmetric_key, "KIND_MISMATCH"),
    attack!(malformed_public_key, "MALFORMED_KEY"),
    attack!(unknown_hash_sequence, "UNKNOWN_SEQUENCE"),
    attack!(hijack_measurement_sequence, "LOCALITY_FAIL"),
    attack!(reset_attestation_pcr, "LOCALITY_FAIL"),
    attack!(release_key_to_software, "LOCALITY_FAIL"),
    attack!(out_of_range_pcr, "BAD_INDEX"),
    attack!(read_undefined_nv, "UNKNOWN_HANDLE"),
    attack!(quote_nothing, "EMPTY_SELECTION"),
    attack!(corrupt_state_image, "CORRUPT_STATE"),
    attack!(downgrade_state_version, "VERSION_MISMATCH"),
    attack!(redefine_guard_counter, "NV_DEFINED"),
    attack!(overflow_nv_data, "NV_TOO_LARGE"),
    attack!(malformed_command, "BAD_COMMAND"),
    attack!(rollback_counter, "NO_DECREASE"),
    attack!(replay_stale_threshold, "ABORT"),
    attack!(forge_token_swap_identity, "BAD_TOKEN"),
    attack!(flip_token_tag, "BAD_TOKEN"),
    attack!(tampered_page, "MEASUREMENT_MISMATCH"),
    attack!(foreign_author_signature, "BAD_SIGNATURE"),
    attack!(add_page_after_launch, "SEQUENCE_CLOSED"),
    attack!(refinalize_measurement, "MEASUREMENT_FINAL"),
    attack!(launch_unmeasured, "MEASUREMENT_PENDING"),
    attack!(relaunch, "ALREADY_INIT"),
    attack!(enter_unlaunched, "NOT_INIT"),
    attack!(interrupt_idle_enclave, "NOT_RUNNING"),
    attack!(remove_running_enclave, "RUNNING"),
    attack!(use_removed_enclave, "UNKNOWN_ENCLAVE"),
    attack!(malformed_report_data, "BAD_OPERAND"),
    attack!(forged_report, "BAD_REPORT"),
    attack!(unseal_across_signers, "UNSEAL_FAIL"),
    attack!(tamper_quote_package, "REJECTED"),
    attack!(storm_secret_search, "NOT_FOUND"),
];

const PROBE_TEXT: &[u8] = b"honest flows must not notice failed attacks";

/// Clock-independent results of the honest flows.
#[derive(Debug, PartialEq, Eq)]
struct HonestOutcome {
    mrenclave: Digest32,
    mrsigner: Digest32,
    quote_verified: bool,
    decrypted: Vec<u8>,
    unsealed: Vec<u8>,
}

fn honest_probe(p: &mut Platform, fx: &Fixture) -> Result<HonestOutcome, CpuError> {
    let eid = build_enclave(p, &fx.victim)?;
    let qe = build_enclave(p, &fx.qe)?;
    let nonce = b"probe nonce";
    let pkg = attest_enclave(p, eid, qe, nonce, &[0x42; REPORT_DATA_LEN])?;
    let sel = data_key_selector();
    let out = data_encrypt(p, eid, &sel, PROBE_TEXT, InterruptMode::None)?;
    let decrypted = data_decrypt(p, eid, &sel, &out)?;
    let unsealed = inside(p, eid, |p| {
        let blob = p.cpu.seal(&mut p.bus, eid, IdentityBinding::ENCLAVE, PROBE_TEXT)?;
        p.cpu.unseal(&mut p.bus, eid, &blob)
    })?;
    let id = p.cpu.identity(eid)?;
    Ok(HonestOutcome {
        mrenclave: id.mrenclave,
        mrsigner: id.mrsigner,
        quote_verified: verify_quote_package(&pkg, &fx.qe.expected_mrenclave(), nonce),
        decrypted,
        unsealed,
    })
}

fn evaluate(attack: &Attack, seed: u64, baseline: &HonestOutcome) -> Result<AttackReport, CpuError> {
    let (mut p, fx) = Fixture::setup(seed)?;
    let observed = match (attack.run)(&mut p, &fx) {
        Ok(()) => "SUCCESS".to_string(),
        Err(Blocked(code)) => code,
    };
    let verdict = if observed == "SUCCESS" {
        Verdict::SecurityViolation
    } else if observed != attack.expected {
        Verdict::UnexpectedError
    } else if honest_probe(&mut p, &fx).as_ref() != Ok(baseline) {
        Verdict::Interference
    } else {
        Verdict::Pass
    };
    Ok(AttackReport { attack: attack.name.to_string(), expected_error: attack.expected.to_string(), observed, verdict })
}

/// Runs the whole catalog, each attack on its own fixture platform.
pub fn run_attack_suite(seed: u64) -> Result<Vec<AttackReport>, CpuError> {
    let (mut clean, fx) = Fixture::setup(seed)?;
    let baseline = honest_probe(&mut clean, &fx)?;
    CATALOG.iter().map(|a| evaluate(a, seed, &baseline)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_attack_is_stopped() {
        let reports = run_attack_suite(11).unwrap();
        let failing: Vec<_> = reports.iter().filter(|r| r.verdict != Verdict::Pass).collect();
        assert!(failing.is_empty(), "{failing:#?}");
    }
}
