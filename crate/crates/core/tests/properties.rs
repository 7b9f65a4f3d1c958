// SPDX-License-Identifier: Apache-2.0

//! Property tests against reference models and the independent oracles.

mod common;

use proptest::prelude::*;

use talus_core::cpu::{Instr, RegisterFile, SealedBlob};
use talus_core::crypto::{self, SymKey128};
use talus_core::flows::{
    build_enclave, execute, guard_provision, guard_record_interrupts, restart_guard, EnclaveBlueprint, GuardDecision,
    InterruptMode, RestartPolicy,
};
use talus_core::Platform;

#[derive(Debug, Clone, Copy)]
enum Op {
    Start,
    /// Start that loses power right after the guard decision.
    Crash,
    Restart,
    /// Hand the guard the oldest blob ever issued.
    Rollback,
    Reseal(u64),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        4 => Just(Op::Start),
        2 => Just(Op::Crash),
        1 => Just(Op::Restart),
        1 => Just(Op::Rollback),
        1 => (0u64..6).prop_map(Op::Reseal),
    ]
}

struct Guarded {
    p: Platform,
    bp: EnclaveBlueprint,
    blobs: Vec<SealedBlob>,
    current: Option<SealedBlob>,
}

impl Guarded {
    fn new(seed: u64) -> Self {
        Self {
            p: Platform::new(seed),
            bp: EnclaveBlueprint::synthetic(seed, "guarded", 1),
            blobs: vec![],
            current: None,
        }
    }

    /// Runs one start; `threshold` provisions the guard when no blob exists yet.
    fn start(&mut self, threshold: u64, crash: bool) -> GuardDecision {
        let p = &mut self.p;
        let eid = build_enclave(p, &self.bp).unwrap();
        p.cpu.eenter(&mut p.bus, eid, vec![Instr::Exit], &[]).unwrap();
        let blob = match &self.current {
            Some(b) => b.clone(),
            None => {
                let b = guard_provision(p, eid, RestartPolicy::starts(threshold)).unwrap();
                self.blobs.push(b.clone());
                self.current = Some(b.clone());
                b
            }
        };
        let decision = restart_guard(p, eid, &blob).unwrap().decision;
        if crash {
            self.power_cycle();
        } else {
            p.cpu.eexit(eid).unwrap();
            p.cpu.eremove(eid).unwrap();
        }
        decision
    }

    fn reseal(&mut self, threshold: u64) {
        let p = &mut self.p;
        let eid = build_enclave(p, &self.bp).unwrap();
        p.cpu.eenter(&mut p.bus, eid, vec![Instr::Exit], &[]).unwrap();
        let b = guard_provision(p, eid, RestartPolicy::starts(threshold)).unwrap();
        p.cpu.eexit(eid).unwrap();
        p.cpu.eremove(eid).unwrap();
        self.blobs.push(b.clone());
        self.current = Some(b);
    }

    fn power_cycle(&mut self) {
        let p = std::mem::replace(&mut self.p, Platform::new(0));
        self.p = p.power_cycle().unwrap();
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    /// Every start attempt, crashed or not, consumes one count; a start
    /// proceeds exactly when its count is within the smallest limit ever sealed.
    #[test]
    fn guard_matches_reference_model(threshold in 1u64..5, ops in proptest::collection::vec(op(), 1..24)) {
        let mut g = Guarded::new(threshold);
        let mut attempts = 0u64;
        let mut budget: Option<u64> = None;
        let mut completed = 0u64;
        let mut first_limit = None;
        for op in ops {
            match op {
                Op::Start | Op::Crash => {
                    let crash = matches!(op, Op::Crash);
                    if budget.is_none() {
                        budget = Some(threshold);
                        first_limit = Some(threshold);
                    }
                    attempts += 1;
                    let decision = g.start(threshold, crash);
                    let expect = if attempts <= budget.unwrap() { GuardDecision::Proceed } else { GuardDecision::Abort };
                    prop_assert_eq!(decision, expect, "attempt {}", attempts);
                    if decision == GuardDecision::Proceed && !crash {
                        completed += 1;
                    }
                }
                Op::Restart => g.power_cycle(),
                Op::Rollback => g.current = g.blobs.first().cloned(),
                Op::Reseal(extra) => {
                    let t = threshold + extra;
                    budget = Some(budget.map_or(t, |b| b.min(t)));
                    first_limit.get_or_insert(t);
                    g.reseal(t);
                }
            }
        }
        // Limits only tighten, so the first one bounds every completed run.
        prop_assert!(completed <= first_limit.unwrap_or(0));
    }

    #[test]
    fn ssa_round_trip_and_keystream(gprs in any::<[u64; 16]>(), bnd in any::<[[u8; 16]; 4]>(), aexes in 1usize..6) {
        let mut p = Platform::new(77);
        let eid = build_enclave(&mut p, &EnclaveBlueprint::synthetic(77, "ssa", 1)).unwrap();
        p.cpu.eenter(&mut p.bus, eid, vec![Instr::Nop, Instr::Exit], &[]).unwrap();
        let regs = RegisterFile { gprs, bnd };
        p.cpu.debug_set_registers(eid, regs.clone()).unwrap();
        let key = p.cpu.debug_ssa_key(eid).unwrap();
        for _ in 0..aexes {
            let frame = p.cpu.aex(eid).unwrap();
            for (i, ct) in frame.bnd_ct.iter().enumerate() {
                prop_assert_eq!(common::ctr_oracle(&key.0, frame.aex_nonce, 4 * i as u64, ct), bnd[i].to_vec());
            }
            p.cpu.eresume(eid).unwrap();
            prop_assert_eq!(p.cpu.debug_registers(eid).unwrap(), regs.clone());
        }
        p.cpu.run(&mut p.bus, eid).unwrap();
    }

    #[test]
    fn hmac_matches_oracle(key in proptest::collection::vec(any::<u8>(), 1..200), msg in proptest::collection::vec(any::<u8>(), 0..300)) {
        prop_assert_eq!(crypto::mac(&key, &msg).unwrap().0, common::hmac_sha256(&key, &msg));
    }

    #[test]
    fn kdf_matches_oracle(
        seed in proptest::collection::vec(any::<u8>(), 1..64),
        label in "[A-Z-]{1,20}",
        ctx in proptest::collection::vec(any::<u8>(), 0..64),
        len in 1usize..130,
    ) {
        prop_assert_eq!(crypto::kdf(&seed, &label, &ctx, len).unwrap(), common::sp800_108(&seed, label.as_bytes(), &ctx, len));
    }

    #[test]
    fn ctr_matches_oracle(key in any::<[u8; 16]>(), nonce in any::<u64>(), block in 0u64..1000, data in proptest::collection::vec(any::<u8>(), 0..200)) {
        let k = SymKey128(key);
        prop_assert_eq!(crypto::ctr_crypt_at(&k, nonce, block, &data), common::ctr_oracle(&key, nonce, block, &data));
        prop_assert_eq!(crypto::ctr_crypt(&k, nonce, &data), common::ctr_oracle(&key, nonce, 0, &data));
    }
}

#[test]
fn interrupt_budget_tracks_cumulative_aex() {
    let mut p = Platform::new(91);
    let bp = EnclaveBlueprint::synthetic(91, "budget", 1);
    let policy = RestartPolicy { max_starts: 100, max_interrupts: Some(20) };
    let mut blob = None;
    let mut total = 0;
    let mut decisions = vec![];
    for _ in 0..6 {
        let eid = build_enclave(&mut p, &bp).unwrap();
        let mut program = vec![Instr::Nop; 6];
        program.push(Instr::Exit);
        p.cpu.eenter(&mut p.bus, eid, program, &[]).unwrap();
        let b = match &blob {
            Some(b) => b,
            None => blob.insert(guard_provision(&mut p, eid, policy).unwrap()),
        };
        let outcome = restart_guard(&mut p, eid, b).unwrap();
        assert_eq!(outcome.cumulative_aex, total);
        assert_eq!(outcome.decision == GuardDecision::Proceed, total <= 20);
        decisions.push(outcome.decision);
        execute(&mut p, eid, InterruptMode::Storm).unwrap();
        p.cpu.eenter(&mut p.bus, eid, vec![Instr::Exit], &[]).unwrap();
        total = guard_record_interrupts(&mut p, eid).unwrap();
        p.cpu.eexit(eid).unwrap();
        p.cpu.eremove(eid).unwrap();
    }
    assert_eq!(decisions.first(), Some(&GuardDecision::Proceed));
    assert_eq!(decisions.last(), Some(&GuardDecision::Abort));
}
