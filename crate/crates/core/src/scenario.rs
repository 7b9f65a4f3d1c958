// SPDX-License-Identifier: Apache-2.0

//! Named end-to-end scenarios, shared by the command-line runner and the test suites.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use strum::{Display, EnumIter, EnumString, IntoStaticStr};

use crate::adversary::{run_attack_suite, Verdict};
use crate::cpu::{CpuError, EnclaveId, Instr, SealedBlob, REPORT_DATA_LEN};
use crate::crypto;
use crate::flows::{
    self, attest_enclave, build_enclave, create_enclave, data_decrypt, data_encrypt, data_key_selector,
    guard_provision, guard_record_interrupts, launch_enclave, measure, restart_guard, verify_quote_package,
    EnclaveBlueprint, FlowMetrics, GuardDecision, InterruptMode, RestartPolicy,
};
use crate::platform::Platform;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Display, EnumString, EnumIter, IntoStaticStr)]
#[strum(serialize_all = "kebab-case")]
pub enum Scenario {
    Create,
    Launch,
    Attest,
    Encrypt,
    CounterDemo,
    TimeDemo,
    AttackSuite,
    Metrics,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub pages: usize,
    pub threshold: u64,
    pub interrupts: InterruptMode,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self { seed: 0, pages: 4, threshold: 3, interrupts: InterruptMode::None }
    }
}

/// OS file holding the restart guard's sealed threshold between runs.
pub const GUARD_BLOB_FILE: &str = "guard.sealed";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "code", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Status {
    Ok,
    ProtocolError(String),
    SecurityViolation(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub status: Status,
    pub detail: Value,
}

enum Failure {
    Protocol(String, Value),
    Violation(String, Value),
}

impl From<CpuError> for Failure {
    fn from(e: CpuError) -> Self {
        Failure::Protocol(e.code().to_string(), Value::Null)
    }
}

type Step = Result<Value, Failure>;

pub fn app_blueprint(cfg: &ScenarioConfig) -> EnclaveBlueprint {
    EnclaveBlueprint::synthetic(cfg.seed, "app", cfg.pages)
}

pub fn qe_blueprint(cfg: &ScenarioConfig) -> EnclaveBlueprint {
    EnclaveBlueprint::synthetic(cfg.seed, "quoting", 1)
}

pub fn demo_plaintext(seed: u64) -> Vec<u8> {
    format!("enclave payload for seed {seed}, encrypted with a register-resident key").into_bytes()
}

pub fn verifier_nonce(seed: u64) -> Vec<u8> {
    crypto::hash_parts(&[b"VERIFIER-NONCE", &seed.to_be_bytes()]).as_bytes().to_vec()
}

/// Encrypt-and-decrypt workload the enclave runs after its flow, interrupted per `cfg`.
fn workload(p: &mut Platform, eid: EnclaveId, cfg: &ScenarioConfig) -> Step {
    let sel = data_key_selector();
    let plaintext = demo_plaintext(cfg.seed);
    let out = data_encrypt(p, eid, &sel, &plaintext, cfg.interrupts)?;
    if data_decrypt(p, eid, &sel, &out)? != plaintext {
        return Err(Failure::Protocol("DECRYPT_MISMATCH".into(), Value::Null));
    }
    Ok(json!({
        "nonce": out.nonce,
        "ciphertext_digest": crypto::hash(&out.ciphertext).to_hex(),
        "instructions": out.instructions,
        "aex_count": p.cpu.secs(eid)?.aex_count,
    }))
}

fn with_workload(p: &mut Platform, eid: EnclaveId, cfg: &ScenarioConfig, mut detail: Value) -> Step {
    if cfg.interrupts == InterruptMode::Storm {
        detail["workload"] = workload(p, eid, cfg)?;
    }
    Ok(detail)
}

fn run_create(p: &mut Platform, cfg: &ScenarioConfig) -> Step {
    let bp = app_blueprint(cfg);
    let eid = create_enclave(p, &bp.pages, &bp.sigstruct())?;
    let id = p.cpu.identity(eid)?;
    Ok(json!({
        "enclave": eid.0,
        "pages": cfg.pages,
        "mrenclave": id.mrenclave.to_hex(),
        "mrsigner": id.mrsigner.to_hex(),
    }))
}

fn run_launch(p: &mut Platform, cfg: &ScenarioConfig) -> Step {
    let bp = app_blueprint(cfg);
    let eid = create_enclave(p, &bp.pages, &bp.sigstruct())?;
    let token = launch_enclave(p, eid)?;
    let detail = json!({
        "enclave": eid.0,
        "mrenclave": p.cpu.identity(eid)?.mrenclave.to_hex(),
        "token_digest": crypto::hash(&token.body).to_hex(),
    });
    with_workload(p, eid, cfg, detail)
}

fn run_attest(p: &mut Platform, cfg: &ScenarioConfig) -> Step {
    let app = build_enclave(p, &app_blueprint(cfg))?;
    let qe_bp = qe_blueprint(cfg);
    let qe = build_enclave(p, &qe_bp)?;
    let nonce = verifier_nonce(cfg.seed);
    let user_data = [crypto::hash(b"app public key").0, [0; 32]].concat();
    debug_assert_eq!(user_data.len(), REPORT_DATA_LEN);
    let pkg = attest_enclave(p, app, qe, &nonce, &user_data)?;
    let verified = verify_quote_package(&pkg, &qe_bp.expected_mrenclave(), &nonce);
    let detail = json!({
        "verified": verified,
        "report_digest": pkg.report.digest().to_hex(),
        "composite": pkg.quote.composite.to_hex(),
    });
    if !verified {
        return Err(Failure::Violation("QUOTE_REJECTED".into(), detail));
    }
    with_workload(p, app, cfg, detail)
}

fn run_encrypt(p: &mut Platform, cfg: &ScenarioConfig) -> Step {
    let eid = build_enclave(p, &app_blueprint(cfg))?;
    workload(p, eid, cfg)
}

/// One application start under the restart guard. The sealed threshold is
/// read from and written to the OS file store.
fn run_counter_demo(p: &mut Platform, cfg: &ScenarioConfig) -> Step {
    let eid = build_enclave(p, &app_blueprint(cfg))?;
    let stored = p.os_files.get(GUARD_BLOB_FILE).and_then(|b| SealedBlob::from_bytes(b));
    p.cpu.eenter(&mut p.bus, eid, vec![Instr::Exit], &[])?;
    let guarded = (|| -> Result<_, CpuError> {
        let blob = match stored {
            Some(b) => b,
            None => guard_provision(p, eid, RestartPolicy::starts(cfg.threshold))?,
        };
        Ok((restart_guard(p, eid, &blob)?, blob))
    })();
    p.cpu.eexit(eid)?;
    let (outcome, blob) = guarded?;
    p.os_files.insert(GUARD_BLOB_FILE.into(), blob.to_bytes());
    let mut detail = json!({
        "decision": outcome.decision.as_str(),
        "starts": outcome.starts,
        "threshold": outcome.policy.max_starts,
    });
    if outcome.decision == GuardDecision::Abort {
        return Err(Failure::Protocol("ABORT".into(), detail));
    }
    detail = with_workload(p, eid, cfg, detail)?;
    p.cpu.eenter(&mut p.bus, eid, vec![Instr::Exit], &[])?;
    let recorded = guard_record_interrupts(p, eid);
    p.cpu.eexit(eid)?;
    detail["cumulative_aex"] = json!(recorded?);
    Ok(detail)
}

fn run_time_demo(p: &mut Platform, cfg: &ScenarioConfig) -> Step {
    let eid = build_enclave(p, &app_blueprint(cfg))?;
    let t1 = flows::trusted_time(p, eid)?;
    let work = workload(p, eid, cfg)?;
    let t2 = flows::trusted_time(p, eid)?;
    let detail = json!({ "t1": t1, "t2": t2, "workload": work });
    if t2 <= t1 {
        return Err(Failure::Violation("CLOCK_REGRESSION".into(), detail));
    }
    Ok(detail)
}

fn run_attacks(cfg: &ScenarioConfig) -> Step {
    let reports = run_attack_suite(cfg.seed)?;
    let detail = serde_json::to_value(&reports).expect("reports serialize");
    if let Some(r) = reports.iter().find(|r| r.verdict == Verdict::SecurityViolation) {
        return Err(Failure::Violation(r.attack.clone(), detail));
    }
    if let Some(r) = reports.iter().find(|r| r.verdict != Verdict::Pass) {
        return Err(Failure::Protocol(format!("ATTACK_{}", r.observed), detail));
    }
    Ok(detail)
}

/// Per-flow TPM command and bus frame counts on a fresh platform.
pub fn flow_metrics(seed: u64, pages: usize) -> Result<BTreeMap<String, FlowMetrics>, CpuError> {
    let cfg = ScenarioConfig { seed, pages, ..Default::default() };
    let mut p = Platform::new(seed);
    let mut out = BTreeMap::new();
    let bp = app_blueprint(&cfg);
    let qe_bp = qe_blueprint(&cfg);

    out.insert("empty".into(), measure(&mut p, |_| ()).1);
    let (eid, m) = measure(&mut p, |p| create_enclave(p, &bp.pages, &bp.sigstruct()));
    out.insert("create".into(), m);
    let eid = eid?;
    let (r, m) = measure(&mut p, |p| launch_enclave(p, eid));
    out.insert("launch".into(), m);
    r?;
    let qe = build_enclave(&mut p, &qe_bp)?;
    let nonce = verifier_nonce(seed);
    let (r, m) = measure(&mut p, |p| attest_enclave(p, eid, qe, &nonce, &[0; REPORT_DATA_LEN]));
    out.insert("attest".into(), m);
    r?;
    let sel = data_key_selector();
    let plaintext = demo_plaintext(seed);
    let (enc, m) = measure(&mut p, |p| data_encrypt(p, eid, &sel, &plaintext, InterruptMode::None));
    out.insert("encrypt".into(), m);
    let enc = enc?;
    let (r, m) = measure(&mut p, |p| data_decrypt(p, eid, &sel, &enc));
    out.insert("decrypt".into(), m);
    r?;
    p.cpu.eenter(&mut p.bus, eid, vec![Instr::Exit], &[])?;
    let blob = guard_provision(&mut p, eid, RestartPolicy::starts(3))?;
    let (r, m) = measure(&mut p, |p| restart_guard(p, eid, &blob));
    out.insert("restart_guard".into(), m);
    r?;
    p.cpu.eexit(eid)?;
    let (r, m) = measure(&mut p, |p| flows::trusted_time(p, eid));
    out.insert("trusted_time".into(), m);
    r?;
    Ok(out)
}

fn run_metrics(cfg: &ScenarioConfig) -> Step {
    let metrics = flow_metrics(cfg.seed, cfg.pages)?;
    Ok(serde_json::to_value(metrics).expect("metrics serialize"))
}

/// Runs `scenario` against `p`; the platform keeps whatever state the scenario left.
pub fn run(p: &mut Platform, scenario: Scenario, cfg: &ScenarioConfig) -> ScenarioReport {
    let result = match scenario {
        Scenario::Create => run_create(p, cfg),
        Scenario::Launch => run_launch(p, cfg),
        Scenario::Attest => run_attest(p, cfg),
        Scenario::Encrypt => run_encrypt(p, cfg),
        Scenario::CounterDemo => run_counter_demo(p, cfg),
        Scenario::TimeDemo => run_time_demo(p, cfg),
        Scenario::AttackSuite => run_attacks(cfg),
        Scenario::Metrics => run_metrics(cfg),
    };
    let (status, detail) = match result {
        Ok(detail) => (Status::Ok, detail),
        Err(Failure::Protocol(code, detail)) => (Status::ProtocolError(code), detail),
        Err(Failure::Violation(code, detail)) => (Status::SecurityViolation(code), detail),
    };
    let name: &'static str = scenario.into();
    let outcome = match &status {
        Status::Ok => "OK",
        Status::ProtocolError(c) | Status::SecurityViolation(c) => c.as_str(),
    };
    p.note("scenario", name, &cfg.seed.to_be_bytes(), outcome);
    ScenarioReport { scenario: name.to_string(), status, detail }
}
