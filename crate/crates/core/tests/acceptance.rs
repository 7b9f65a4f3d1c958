// SPDX-License-Identifier: Apache-2.0

//! Acceptance gate: ten criteria, one status line each. The lines are written
//! straight to stdout so they show up even when libtest captures output.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::Write;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use strum::IntoEnumIterator;

use talus_core::adversary::{contains_secret, leaked_secrets, run_attack_suite, Observables, Verdict};
use talus_core::bus::BusError;
use talus_core::cpu::{
    identity_policy, launch_key_policy, CpuError, EinitToken, EnclaveIdentity, IdentityBinding, Instr, RegisterFile,
    Report, BND_COUNT, GPR_COUNT, REPORT_DATA_LEN,
};
use talus_core::crypto::{self, Digest32};
use talus_core::flows::{
    attest_enclave, build_enclave, create_enclave, data_decrypt, data_encrypt_insecure, data_key_selector,
    debug_key_bytes, verify_quote_package, EnclaveBlueprint, InterruptMode, RestartPolicy, PAGE_SIZE,
};
use talus_core::scenario::{self, flow_metrics, Scenario, ScenarioConfig, Status, GUARD_BLOB_FILE};
use talus_core::tpm::pcr::PCR_ENCLAVE_ATTEST;
use talus_core::tpm::{Locality, TpmCall, TpmError};
use talus_core::Platform;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn code(e: CpuError) -> String {
    e.code().to_string()
}

fn rng(tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0x7a1u64 << 32 | tag)
}

fn kind_of(name: &str) -> &str {
    name.split('@').next().unwrap_or(name)
}

// 1 -------------------------------------------------------------------------

fn secrecy_suite() -> Outcome {
    let start = Instant::now();
    let flows = [Scenario::Create, Scenario::Launch, Scenario::Attest, Scenario::Encrypt, Scenario::CounterDemo];
    let mut r = rng(1);
    let (mut runs, mut checks) = (0usize, 0usize);
    let mut kinds = BTreeSet::new();
    for _ in 0..100 {
        let seed: u64 = r.gen();
        let pages = r.gen_range(1..=4);
        for flow in flows {
            for interrupts in [InterruptMode::None, InterruptMode::Storm] {
                let cfg = ScenarioConfig { seed, pages, threshold: 3, interrupts };
                let mut p = Platform::new(seed);
                let report = scenario::run(&mut p, flow, &cfg);
                ensure!(report.status == Status::Ok, "{flow} seed {seed}: {:?}", report.status);
                let obs = Observables::capture(&p);
                for (name, secret) in p.tracked_secrets() {
                    checks += 1;
                    kinds.insert(kind_of(&name).to_string());
                    ensure!(
                        !contains_secret(&obs, &secret).map_err(|e| e.code().to_string())?,
                        "{name} leaked in {flow} ({interrupts:?}) seed {seed}"
                    );
                }
                runs += 1;
            }
        }
    }
    for k in ["HmacKey", "SymmetricKey", "seal_fuses", "ssa_key"] {
        ensure!(kinds.contains(k), "no tracked secret of kind {k}");
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!("{runs} runs, {checks} secret checks, 0 violations, {:.1}s", elapsed.as_secs_f64()))
}

// 2 -------------------------------------------------------------------------

fn positive_control() -> Outcome {
    let mut found = 0;
    for (seed, mode) in [(21u64, InterruptMode::None), (22, InterruptMode::Storm)] {
        let mut p = Platform::new(seed);
        let eid = build_enclave(&mut p, &EnclaveBlueprint::synthetic(seed, "baseline", 1)).map_err(code)?;
        let sel = data_key_selector();
        let plaintext = scenario::demo_plaintext(seed);
        let out = data_encrypt_insecure(&mut p, eid, &sel, &plaintext, mode).map_err(code)?;
        ensure!(data_decrypt(&mut p, eid, &sel, &out).map_err(code)? == plaintext, "baseline output does not decrypt");
        let key = debug_key_bytes(&p, &out.key).ok_or("released key not found")?;
        let obs = Observables::capture(&p);
        ensure!(contains_secret(&obs, key.as_bytes()).unwrap(), "insecure baseline key not detected ({mode:?})");
        ensure!(
            leaked_secrets(&p, &obs).iter().any(|n| kind_of(n) == "SymmetricKey"),
            "leak not attributed to the symmetric key"
        );
        found += 1;
    }
    Ok(format!("insecure baseline leak detected in {found}/2 runs"))
}

// 3 -------------------------------------------------------------------------

const FIELDS: [&str; 5] = ["mrenclave", "mrsigner", "isvprodid", "isvsvn", "attributes"];

fn flip_bit(d: &Digest32, r: &mut ChaCha8Rng) -> Digest32 {
    let mut out = *d;
    out.0[r.gen_range(0..32)] ^= 1 << r.gen_range(0..8);
    out
}

fn nonzero_u16(r: &mut ChaCha8Rng) -> u16 {
    r.gen_range(1..=u16::MAX)
}

fn perturb_identity(id: &EnclaveIdentity, field: usize, r: &mut ChaCha8Rng) -> EnclaveIdentity {
    let mut p = *id;
    match field {
        0 => p.mrenclave = flip_bit(&id.mrenclave, r),
        1 => p.mrsigner = flip_bit(&id.mrsigner, r),
        2 => p.isvprodid ^= nonzero_u16(r),
        3 => p.isvsvn ^= nonzero_u16(r),
        _ => p.attributes ^= r.gen_range(1..=u64::MAX),
    }
    p
}

fn perturb_blueprint(bp: &EnclaveBlueprint, field: usize, r: &mut ChaCha8Rng) -> EnclaveBlueprint {
    let mut p = bp.clone();
    match field {
        0 => {
            let page = r.gen_range(0..p.pages.len());
            let byte = r.gen_range(0..p.pages[page].1.len());
            p.pages[page].1[byte] ^= 1 << r.gen_range(0..8);
        }
        1 => p.author = crypto::sig_keygen(&Digest32(r.gen())),
        2 => p.isvprodid ^= nonzero_u16(r),
        3 => p.isvsvn ^= nonzero_u16(r),
        _ => p.attributes ^= r.gen_range(1..=u64::MAX),
    }
    p
}

fn differing_fields(a: &EnclaveIdentity, b: &EnclaveIdentity) -> Vec<usize> {
    let same = [
        a.mrenclave == b.mrenclave,
        a.mrsigner == b.mrsigner,
        a.isvprodid == b.isvprodid,
        a.isvsvn == b.isvsvn,
        a.attributes == b.attributes,
    ];
    (0..5).filter(|&i| !same[i]).collect()
}

fn launch_control() -> Outcome {
    let seed = 0x3a;
    let mut r = rng(3);
    let mut p = Platform::new(seed);
    let bp = EnclaveBlueprint::synthetic(seed, "launch-target", 1);
    let eid = create_enclave(&mut p, &bp.pages, &bp.sigstruct()).map_err(code)?;
    p.cpu.launch_prepare(&mut p.bus, eid).map_err(code)?;
    let token = p.cpu.launch_mint(&mut p.bus, eid).map_err(code)?;
    let id = p.cpu.identity(eid).map_err(code)?;
    let keyid = Digest32::from_slice(&token.body[EnclaveIdentity::CANONICAL_LEN..]).ok_or("token body layout")?;
    ensure!(token.body == EinitToken::body_for(&id, &keyid), "token not minted for the enclave's identity");

    let mut tally: BTreeMap<String, usize> = BTreeMap::new();
    let mut record = |res: Result<(), CpuError>, what: &str| -> Result<(), String> {
        match res {
            Err(e @ (CpuError::BadToken | CpuError::Channel(_))) if matches!(e.code(), "BAD_TOKEN" | "POLICY_FAIL") => {
                *tally.entry(e.code().to_string()).or_default() += 1;
                Ok(())
            }
            other => Err(format!("{what}: expected BAD_TOKEN or POLICY_FAIL, got {other:?}")),
        }
    };
    for i in 0..500 {
        let field = r.gen_range(0..5);
        let forged =
            EinitToken { body: EinitToken::body_for(&perturb_identity(&id, field, &mut r), &keyid), tag: token.tag };
        record(p.cpu.einit(&mut p.bus, eid, &forged), &format!("#{i} forged {} in token", FIELDS[field]))?;

        let other_bp = perturb_blueprint(&bp, field, &mut r);
        let other = create_enclave(&mut p, &other_bp.pages, &other_bp.sigstruct()).map_err(code)?;
        let other_id = p.cpu.identity(other).map_err(code)?;
        ensure!(differing_fields(&id, &other_id) == [field], "#{i}: perturbation of {} not isolated", FIELDS[field]);
        record(p.cpu.einit(&mut p.bus, other, &token), &format!("#{i} {} enclave with honest token", FIELDS[field]))?;
        p.cpu.launch_prepare(&mut p.bus, other).map_err(code)?;
        record(p.cpu.launch_mint(&mut p.bus, eid).map(|_| ()), &format!("#{i} mint over {} PCRs", FIELDS[field]))?;
        p.cpu.eremove(other).map_err(code)?;
    }
    p.cpu.einit(&mut p.bus, eid, &token).map_err(|e| format!("honest token rejected: {}", e.code()))?;
    ensure!(p.cpu.secs(eid).map_err(code)?.init, "honest enclave not initialized");
    Ok(format!("500 perturbations, 1500 launches refused {tally:?}, honest launch accepted"))
}

// 4 -------------------------------------------------------------------------

fn flip_any(bytes: &mut [u8], r: &mut ChaCha8Rng) {
    let i = r.gen_range(0..bytes.len());
    bytes[i] ^= 1 << r.gen_range(0..8);
}

fn attestation() -> Outcome {
    let mut r = rng(4);
    let mut honest = 0;
    let mut tampers = [0usize; 3];
    for round in 0..4u64 {
        let seed = 0x40 + round;
        let mut p = Platform::new(seed);
        let app = build_enclave(&mut p, &EnclaveBlueprint::synthetic(seed, "app", 2)).map_err(code)?;
        let qe_bp = EnclaveBlueprint::synthetic(seed, "quoting", 1);
        let qe = build_enclave(&mut p, &qe_bp).map_err(code)?;
        let nonce: [u8; 32] = r.gen();
        let user_data: Vec<u8> = (0..REPORT_DATA_LEN).map(|_| r.gen()).collect();
        let pkg = attest_enclave(&mut p, app, qe, &nonce, &user_data).map_err(code)?;
        let expected_qe = qe_bp.expected_mrenclave();
        ensure!(verify_quote_package(&pkg, &expected_qe, &nonce), "honest quote rejected (seed {seed})");
        honest += 1;

        for _ in 0..50 {
            let mut bad = pkg.clone();
            let mut bad_nonce = nonce.to_vec();
            let target = r.gen_range(0..3);
            match target {
                0 => {
                    let mut b = bad.report.canonical();
                    flip_any(&mut b, &mut r);
                    let n = EnclaveIdentity::CANONICAL_LEN;
                    bad.report = Report {
                        target: EnclaveIdentity::from_canonical(&b[..n]).expect("length"),
                        reporting: EnclaveIdentity::from_canonical(&b[n..2 * n]).expect("length"),
                        user_data: b[2 * n..2 * n + REPORT_DATA_LEN].to_vec(),
                        tag: crypto::MacTag32::from_slice(&b[2 * n + REPORT_DATA_LEN..]).expect("length"),
                    };
                }
                1 => {
                    let mut b = bad.qe_identity.canonical();
                    flip_any(&mut b, &mut r);
                    bad.qe_identity = EnclaveIdentity::from_canonical(&b).expect("length");
                }
                _ => {
                    if r.gen() {
                        flip_any(&mut bad_nonce, &mut r);
                    } else {
                        flip_any(&mut bad.quote.qualifying, &mut r);
                    }
                }
            }
            ensure!(!verify_quote_package(&bad, &expected_qe, &bad_nonce), "tamper of target {target} accepted");
            tampers[target] += 1;
        }

        for l in 0..=3 {
            let mut os = p.os(Locality::new(l).expect("valid"));
            let tries = [
                os.pcr_reset(PCR_ENCLAVE_ATTEST).map(|_| ()),
                os.pcr_extend(PCR_ENCLAVE_ATTEST, &Digest32([1; 32])).map(|_| ()),
                os.pcr_read(PCR_ENCLAVE_ATTEST).map(|_| ()),
            ];
            for t in tries {
                ensure!(t.as_ref().map_err(|e| e.code()) == Err("LOCALITY_FAIL"), "PCR21 access at L{l}: {t:?}");
            }
        }
    }
    Ok(format!(
        "{honest} honest quotes verified; {} tampers rejected (report {}, qe identity {}, nonce {}); PCR21 locked at L0-L3",
        tampers.iter().sum::<usize>(),
        tampers[0],
        tampers[1],
        tampers[2]
    ))
}

// 5 -------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
enum Event {
    Start,
    Restart,
    Rollback,
    Reseal(u64),
}

fn schedule(r: &mut ChaCha8Rng, threshold: u64) -> Vec<Event> {
    let starts = threshold + r.gen_range(2..=6);
    // The first start provisions the guard at `threshold`.
    let mut events = vec![Event::Start];
    let mut placed = 1;
    while placed < starts {
        match r.gen_range(0..10) {
            0..=4 => {
                events.push(Event::Start);
                placed += 1;
            }
            5 | 6 => events.push(Event::Restart),
            7 | 8 => events.push(Event::Rollback),
            _ => events.push(Event::Reseal(threshold + r.gen_range(0..=10))),
        }
    }
    events
}

fn reseal(p: &mut Platform, cfg: &ScenarioConfig, threshold: u64) -> Result<(), String> {
    let eid = build_enclave(p, &scenario::app_blueprint(cfg)).map_err(code)?;
    p.cpu.eenter(&mut p.bus, eid, vec![Instr::Exit], &[]).map_err(code)?;
    let blob = talus_core::flows::guard_provision(p, eid, RestartPolicy::starts(threshold));
    p.cpu.eexit(eid).map_err(code)?;
    p.os_files.insert(GUARD_BLOB_FILE.into(), blob.map_err(code)?.to_bytes());
    p.cpu.eremove(eid).map_err(code)?;
    Ok(())
}

fn restart_limiting() -> Outcome {
    let mut r = rng(5);
    let mut totals = Vec::new();
    for threshold in [1u64, 3, 10] {
        let (mut restarts, mut rollbacks, mut reseals) = (0, 0, 0);
        for n in 0..50u64 {
            let events = schedule(&mut r, threshold);
            let cfg = ScenarioConfig { seed: 0x500 + n, pages: 1, threshold, interrupts: InterruptMode::None };
            let mut p = Platform::new(cfg.seed);
            let mut history: Vec<Vec<u8>> = Vec::new();
            let mut proceeds = 0u64;
            for ev in &events {
                match *ev {
                    Event::Start => {
                        let report = scenario::run(&mut p, Scenario::CounterDemo, &cfg);
                        match report.status {
                            Status::Ok => proceeds += 1,
                            Status::ProtocolError(ref c) if c == "ABORT" => {}
                            ref other => return Err(format!("T={threshold} schedule {n}: {other:?}")),
                        }
                    }
                    Event::Restart => {
                        p = p.power_cycle().map_err(|e| e.code().to_string())?;
                        restarts += 1;
                    }
                    Event::Rollback => {
                        if !history.is_empty() {
                            let old = history[r.gen_range(0..history.len())].clone();
                            p.os_files.insert(GUARD_BLOB_FILE.into(), old);
                            rollbacks += 1;
                        }
                    }
                    Event::Reseal(t) => {
                        reseal(&mut p, &cfg, t)?;
                        reseals += 1;
                    }
                }
                if let Some(b) = p.os_files.get(GUARD_BLOB_FILE) {
                    if !history.contains(b) {
                        history.push(b.clone());
                    }
                }
            }
            ensure!(proceeds == threshold, "T={threshold} schedule {n}: {proceeds} PROCEED over {events:?}");
        }
        totals.push(format!(
            "T={threshold}: 50 schedules ({restarts} restarts, {rollbacks} rollbacks, {reseals} reseals)"
        ));
    }
    Ok(format!("exactly T PROCEED in every schedule; {}", totals.join("; ")))
}

// 6 -------------------------------------------------------------------------

fn random_regs(r: &mut ChaCha8Rng) -> RegisterFile {
    let mut regs = RegisterFile::default();
    for g in regs.gprs.iter_mut() {
        *g = r.gen();
    }
    for b in regs.bnd.iter_mut() {
        *b = r.gen();
    }
    regs
}

fn one_shot_ciphertext() -> Outcome {
    let mut r = rng(6);
    let seed = 0x60;
    let mut p = Platform::new(seed);
    let eid = build_enclave(&mut p, &EnclaveBlueprint::synthetic(seed, "one-shot", 1)).map_err(code)?;
    let mut program = vec![Instr::Nop; 100];
    program.push(Instr::Exit);
    p.cpu.eenter(&mut p.bus, eid, program, &[]).map_err(code)?;
    let fixed = random_regs(&mut r);
    p.cpu.debug_set_registers(eid, fixed.clone()).map_err(code)?;
    let ssa_key = p.cpu.debug_ssa_key(eid).ok_or("no SSA key")?;

    let mut sets = HashSet::new();
    let mut per_slot: Vec<HashSet<[u8; 16]>> = vec![HashSet::new(); BND_COUNT];
    for i in 0..100 {
        let frame = p.cpu.aex(eid).map_err(code)?;
        for (slot, ct) in frame.bnd_ct.iter().enumerate() {
            let expect = common::ctr_oracle(&ssa_key.0, frame.aex_nonce, 4 * slot as u64, &fixed.bnd[slot]);
            ensure!(ct.as_slice() == expect, "AEX {i} slot {slot} differs from the keystream oracle");
            per_slot[slot].insert(*ct);
        }
        ensure!(frame.gpr_snapshot == fixed.gprs, "AEX {i}: GPR snapshot differs");
        sets.insert(frame.bnd_ct);
        p.cpu.eresume(eid).map_err(code)?;
        p.cpu.step(&mut p.bus, eid).map_err(code)?;
        ensure!(p.cpu.debug_registers(eid).as_ref() == Some(&fixed), "AEX {i}: registers changed across resume");
    }
    ensure!(sets.len() == 100, "only {} distinct ciphertext sets", sets.len());
    ensure!(per_slot.iter().all(|s| s.len() == 100), "a BND slot repeated its ciphertext");

    for trial in 0..1000 {
        let regs = random_regs(&mut r);
        p.cpu.debug_set_registers(eid, regs.clone()).map_err(code)?;
        p.cpu.aex(eid).map_err(code)?;
        ensure!(
            p.cpu.debug_registers(eid).map(|x| x == RegisterFile::default()).unwrap_or(false),
            "trial {trial}: registers not scrubbed"
        );
        p.cpu.eresume(eid).map_err(code)?;
        ensure!(p.cpu.debug_registers(eid) == Some(regs), "trial {trial}: round trip mismatch");
    }
    p.cpu.run(&mut p.bus, eid).map_err(code)?;
    Ok(format!("100/100 distinct ciphertext sets, 1000/1000 exact round trips ({GPR_COUNT} GPRs, {BND_COUNT} BND)"))
}

// 7 -------------------------------------------------------------------------

fn oracle_equivalence() -> Outcome {
    let mut r = rng(7);
    let seed = 0x70;
    let mut p = Platform::new(seed);
    let mut policies = 0;
    for n in 0..100 {
        let count = r.gen_range(1..=16usize);
        let pages: Vec<(u64, Vec<u8>)> = (0..count)
            .map(|i| {
                let len = if r.gen_bool(0.5) { PAGE_SIZE } else { r.gen_range(1..=PAGE_SIZE) };
                ((i * PAGE_SIZE) as u64, (0..len).map(|_| r.gen()).collect())
            })
            .collect();
        let bp = EnclaveBlueprint {
            pages,
            author: crypto::sig_keygen(&Digest32(r.gen())),
            isvprodid: r.gen(),
            isvsvn: r.gen(),
            attributes: r.gen(),
        };
        let oracle = common::mrenclave(&bp.pages);
        let eid = create_enclave(&mut p, &bp.pages, &bp.sigstruct()).map_err(code)?;
        let id = p.cpu.identity(eid).map_err(code)?;
        ensure!(id.mrenclave.0 == oracle, "enclave {n} ({count} pages): TPM measurement differs from oracle");
        ensure!(id.mrsigner.0 == common::sha256(&bp.author.public), "enclave {n}: mrsigner differs");

        let launch = common::launch_policy(&oracle, &id.mrsigner.0, id.isvprodid, id.isvsvn, id.attributes);
        ensure!(launch_key_policy(&id).0 == launch, "enclave {n}: launch policy differs");
        talus_core::flows::launch_enclave(&mut p, eid).map_err(code)?;
        ensure!(
            p.tpm().objects().any(|o| o.auth_policy.0 == launch),
            "enclave {n}: no TPM launch key carries the oracle policy"
        );
        let (m, s) = (Some(&id.mrenclave.0), Some(&id.mrsigner.0));
        let (prod, svn) = (Some(id.isvprodid), Some(id.isvsvn));
        let cases = [
            (IdentityBinding::ENCLAVE, common::identity_policy(m, s, prod, svn)),
            (IdentityBinding::SIGNER, common::identity_policy(None, s, prod, svn)),
            (IdentityBinding::SIGNER_ONLY, common::identity_policy(None, s, None, None)),
            (
                IdentityBinding { mrenclave: true, mrsigner: false, isv: true },
                common::identity_policy(m, None, prod, svn),
            ),
        ];
        for (binding, expect) in cases {
            ensure!(identity_policy(&id, binding).0 == expect, "enclave {n}: key policy for {binding:?} differs");
            policies += 1;
        }
        p.cpu.eremove(eid).map_err(code)?;
    }
    Ok(format!("100 enclaves bit-exact with the streaming oracle; {} policy digests match", policies + 100))
}

// 8 -------------------------------------------------------------------------

fn crypto_vectors() -> Outcome {
    let million_a = vec![b'a'; 1_000_000];
    let sha = [
        (b"abc".as_slice(), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"),
        (b"".as_slice(), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"),
        (
            b"abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq".as_slice(),
            "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1",
        ),
        (
            b"abcdefghbcdefghicdefghijdefghijkefghijklfghijklmghijklmnhijklmnoijklmnopjklmnopqklmnopqrlmnopqrsmnopqrstnopqrstu"
                .as_slice(),
            "cf5b16a778af8380036ce59e7b0492370b249b11e8f07a51afac45037afee9d1",
        ),
        (million_a.as_slice(), "cdc76e5c9914fb9281a1c7e284d73e67f1809a48a497200e046d39ccc7112cd0"),
    ];
    for (i, (msg, want)) in sha.iter().enumerate() {
        ensure!(crypto::hash(msg).to_hex() == *want, "SHA-256 vector {i}");
    }

    let key4: Vec<u8> = (1..=25).collect();
    let hmac: [(Vec<u8>, Vec<u8>, &str); 6] = [
        (vec![0x0b; 20], b"Hi There".to_vec(), "b0344c61d8db38535ca8afceaf0bf12b881dc200c9833da726e9376c2e32cff7"),
        (
            b"Jefe".to_vec(),
            b"what do ya want for nothing?".to_vec(),
            "5bdcc146bf60754e6a042426089575c75a003f089d2739839dec58b964ec3843",
        ),
        (vec![0xaa; 20], vec![0xdd; 50], "773ea91e36800e46854db8ebd09181a72959098b3ef8c122d9635514ced565fe"),
        (key4, vec![0xcd; 50], "82558a389a443c0ea4cc819899f2083a85f0faa3e578f8077a2e3ff46729665b"),
        (
            vec![0xaa; 131],
            b"Test Using Larger Than Block-Size Key - Hash Key First".to_vec(),
            "60e431591ee0b67f0d8a26aacbf5b77f8e0bc6213728c5140546040f0ee37f54",
        ),
        (
            vec![0xaa; 131],
            b"This is a test using a larger than block-size key and a larger than block-size data. The key needs to be hashed before being used by the HMAC algorithm.".to_vec(),
            "9b09ffa71b942fcb27635fbcd5b0e944bfdc63644f0713938a7f51535c3a35e2",
        ),
    ];
    for (i, (key, msg, want)) in hmac.iter().enumerate() {
        let got = crypto::mac(key, msg).map_err(|e| e.code().to_string())?;
        ensure!(got.to_hex() == *want, "RFC 4231 vector {i}");
        ensure!(hex::encode(common::hmac_sha256(key, msg)) == *want, "HMAC oracle fails RFC 4231 vector {i}");
    }
    let truncated = crypto::mac(&[0x0c; 20], b"Test With Truncation").map_err(|e| e.code().to_string())?;
    ensure!(hex::encode(&truncated.0[..16]) == "a3b6167473100ee06e0c796c2955552b", "RFC 4231 truncation vector");

    let mut r = rng(8);
    for i in 0..10 {
        let seed: Vec<u8> = (0..r.gen_range(1..=64)).map(|_| r.gen()).collect();
        let label: String = (0..r.gen_range(1..=16)).map(|_| r.gen_range(b'A'..=b'Z') as char).collect();
        let context: Vec<u8> = (0..r.gen_range(0..=48)).map(|_| r.gen()).collect();
        let len = r.gen_range(1..=100);
        let got = crypto::kdf(&seed, &label, &context, len).map_err(|e| e.code().to_string())?;
        ensure!(got == common::sp800_108(&seed, label.as_bytes(), &context, len), "KDF input {i} differs from oracle");
    }
    Ok("5 SHA-256 + 7 HMAC vectors, 10/10 random KDF inputs bit-exact".into())
}

// 9 -------------------------------------------------------------------------

fn bus_discipline() -> Outcome {
    let reports = run_attack_suite(0x90).map_err(code)?;
    let mut passed: BTreeMap<&str, usize> = BTreeMap::new();
    for rep in &reports {
        ensure!(
            rep.verdict == Verdict::Pass,
            "{} -> {} (expected {}): {:?}",
            rep.attack,
            rep.observed,
            rep.expected_error,
            rep.verdict
        );
        *passed.entry(rep.expected_error.as_str()).or_default() += 1;
    }
    for required in ["REPLAY", "TAMPER", "BUS_BUSY"] {
        ensure!(passed.contains_key(required), "no attack exercised {required}");
    }
    let defined: Vec<&'static str> = BusError::iter()
        .map(|e| e.code())
        .chain(TpmError::iter().map(|e| e.code()))
        .chain(CpuError::LOCAL_CODES)
        .collect();
    let missing: Vec<_> = defined.iter().filter(|c| !passed.contains_key(**c)).collect();
    ensure!(missing.is_empty(), "error paths never triggered: {missing:?}");
    Ok(format!("{} attacks stopped; coverage {}/{} defined error codes", reports.len(), defined.len(), defined.len()))
}

// 10 ------------------------------------------------------------------------

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("golden")
}

fn metrics_determinism() -> Outcome {
    let metrics = flow_metrics(1, 4).map_err(code)?;
    let bless = std::env::var_os("TALUS_BLESS").is_some();
    for (flow, m) in &metrics {
        let path = golden_dir().join(format!("metrics_{flow}.json"));
        let text = serde_json::to_string_pretty(m).expect("serializes") + "\n";
        if bless {
            std::fs::write(&path, &text).map_err(|e| e.to_string())?;
        }
        let frozen = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        ensure!(frozen == text, "{flow} metrics differ from {}", path.display());
    }
    ensure!(metrics["empty"].tpm_command_count == 0 && metrics["empty"].bus_frame_count == 0, "empty flow not zero");
    for seed in [2, 99, u64::MAX] {
        ensure!(flow_metrics(seed, 4).map_err(code)? == metrics, "metrics depend on seed {seed}");
    }
    let mut creates = Vec::new();
    for n in 1..=16 {
        let m = flow_metrics(7, n).map_err(code)?;
        creates.push((
            m["create"].tpm_command_count,
            m["create"].per_command["HashSequenceUpdate"],
            m["launch"].clone(),
        ));
    }
    for w in creates.windows(2) {
        ensure!(w[1].0 - w[0].0 == 1, "create command count not affine with slope 1: {} -> {}", w[0].0, w[1].0);
        ensure!(w[1].1 - w[0].1 == 1, "HashSequenceUpdate slope differs from 1");
        ensure!(w[1].2 == w[0].2, "launch metrics depend on page count");
    }
    let base = creates[0].0 - 1;
    Ok(format!("{} golden flows match; create = {base} + n commands for n = 1..16", metrics.len()))
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 10] = [
        ("secrecy suite", secrecy_suite),
        ("positive-control leak", positive_control),
        ("launch control", launch_control),
        ("attestation", attestation),
        ("restart limiting", restart_limiting),
        ("one-shot ciphertext", one_shot_ciphertext),
        ("oracle equivalence", oracle_equivalence),
        ("crypto vectors", crypto_vectors),
        ("bus discipline", bus_discipline),
        ("metrics determinism", metrics_determinism),
    ];
    let mut failed = Vec::new();
    let mut out = std::io::stdout().lock();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let secs = start.elapsed().as_secs_f64();
        let line = match &result {
            Ok(detail) => format!("acceptance {:>2} PASS {name}: {detail} [{secs:.1}s]", i + 1),
            Err(why) => {
                failed.push(i + 1);
                format!("acceptance {:>2} FAIL {name}: {why} [{secs:.1}s]", i + 1)
            }
        };
        let _ = writeln!(out, "{line}");
    }
    drop(out);
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
