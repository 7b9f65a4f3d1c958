// SPDX-License-Identifier: Apache-2.0

//! Restart limiting with a TPM NV counter and a sealed threshold.
//!
//! Each start increments the counter before anything else, then reads it,
//! unseals the threshold, and compares. Crashing after the increment can only
//! burn starts. The data index also keeps the smallest limits ever sealed, so
//! replaying an older, more generous blob does not raise the budget either.

use serde::{Deserialize, Serialize};

use crate::cpu::{CpuError, EnclaveId, IdentityBinding, SealedBlob};
use crate::platform::Platform;
use crate::tpm::{Handle, NvKind, NvValue, NV_BASE};

/// Start counter index.
pub const GUARD_COUNTER: Handle = Handle(NV_BASE | 0x0010);
/// Cumulative interrupt count and smallest sealed limits.
pub const GUARD_STATE: Handle = Handle(NV_BASE | 0x0011);
const BINDING: IdentityBinding = IdentityBinding::SIGNER_ONLY;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RestartPolicy {
    pub max_starts: u64,
    pub max_interrupts: Option<u64>,
}

impl RestartPolicy {
    pub fn starts(max_starts: u64) -> Self {
        Self { max_starts, max_interrupts: None }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.max_starts.to_be_bytes().to_vec();
        match self.max_interrupts {
            Some(n) => {
                out.push(1);
                out.extend_from_slice(&n.to_be_bytes());
            }
            None => out.push(0),
        }
        out
    }

    pub fn from_bytes(b: &[u8]) -> Option<Self> {
        let max_starts = u64::from_be_bytes(b.get(..8)?.try_into().ok()?);
        let max_interrupts = match (b.get(8)?, b.len()) {
            (0, 9) => None,
            (1, 17) => Some(u64::from_be_bytes(b[9..17].try_into().ok()?)),
            _ => return None,
        };
        Some(Self { max_starts, max_interrupts })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GuardDecision {
    Proceed,
    Abort,
}

impl GuardDecision {
    pub fn as_str(&self) -> &'static str {
        match self {
            GuardDecision::Proceed => "PROCEED",
            GuardDecision::Abort => "ABORT",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuardOutcome {
    pub decision: GuardDecision,
    pub starts: u64,
    pub cumulative_aex: u64,
    pub policy: RestartPolicy,
}

/// Contents of [`GUARD_STATE`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GuardState {
    pub cumulative_aex: u64,
    pub min_starts: u64,
    pub min_interrupts: Option<u64>,
}

impl GuardState {
    const LEN: usize = 24;

    fn to_bytes(self) -> Vec<u8> {
        let mut out = self.cumulative_aex.to_be_bytes().to_vec();
        out.extend_from_slice(&self.min_starts.to_be_bytes());
        out.extend_from_slice(&self.min_interrupts.unwrap_or(u64::MAX).to_be_bytes());
        out
    }

    fn from_bytes(b: &[u8]) -> Option<Self> {
        if b.is_empty() {
            return Some(Self { cumulative_aex: 0, min_starts: u64::MAX, min_interrupts: None });
        }
        if b.len() != Self::LEN {
            return None;
        }
        let word = |i: usize| u64::from_be_bytes(b[8 * i..8 * i + 8].try_into().expect("8 bytes"));
        let min_interrupts = Some(word(2)).filter(|&m| m != u64::MAX);
        Some(Self { cumulative_aex: word(0), min_starts: word(1), min_interrupts })
    }

    fn tighten(mut self, policy: &RestartPolicy) -> Self {
        self.min_starts = self.min_starts.min(policy.max_starts);
        self.min_interrupts = match (self.min_interrupts, policy.max_interrupts) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        self
    }
}

pub fn read_guard_state(p: &mut Platform, eid: EnclaveId) -> Result<GuardState, CpuError> {
    match p.cpu.nv_read(&mut p.bus, eid, GUARD_STATE, BINDING)? {
        NvValue::Data(d) => GuardState::from_bytes(&d).ok_or(CpuError::UnsealFail),
        NvValue::Counter(_) => Err(CpuError::BadOperand),
    }
}

fn write_guard_state(p: &mut Platform, eid: EnclaveId, state: GuardState) -> Result<(), CpuError> {
    p.cpu.nv_write(&mut p.bus, eid, GUARD_STATE, BINDING, &state.to_bytes())
}

/// Defines the guard indices (bound to the enclave's signer) if needed and seals `policy`.
/// The enclave must be running.
pub fn guard_provision(p: &mut Platform, eid: EnclaveId, policy: RestartPolicy) -> Result<SealedBlob, CpuError> {
    if !p.cpu.nv_exists(&mut p.bus, GUARD_COUNTER)? {
        p.cpu.nv_define(&mut p.bus, eid, GUARD_COUNTER, NvKind::Counter, 8, BINDING)?;
    }
    if !p.cpu.nv_exists(&mut p.bus, GUARD_STATE)? {
        p.cpu.nv_define(&mut p.bus, eid, GUARD_STATE, NvKind::Data, GuardState::LEN as u32, BINDING)?;
    }
    let state = read_guard_state(p, eid)?.tighten(&policy);
    write_guard_state(p, eid, state)?;
    p.cpu.seal(&mut p.bus, eid, BINDING, &policy.to_bytes())
}

/// Start check for a running enclave: increment, read, unseal, compare.
pub fn restart_guard(p: &mut Platform, eid: EnclaveId, threshold: &SealedBlob) -> Result<GuardOutcome, CpuError> {
    p.cpu.nv_increment(&mut p.bus, eid, GUARD_COUNTER, BINDING)?;
    let starts = match p.cpu.nv_read(&mut p.bus, eid, GUARD_COUNTER, BINDING)? {
        NvValue::Counter(v) => v,
        NvValue::Data(_) => return Err(CpuError::BadOperand),
    };
    let policy = RestartPolicy::from_bytes(&p.cpu.unseal(&mut p.bus, eid, threshold)?).ok_or(CpuError::UnsealFail)?;
    let state = read_guard_state(p, eid)?.tighten(&policy);
    let cumulative_aex = state.cumulative_aex;
    let within = starts <= state.min_starts && state.min_interrupts.is_none_or(|m| cumulative_aex <= m);
    let decision = if within { GuardDecision::Proceed } else { GuardDecision::Abort };
    p.note("flow", "restart_guard", &starts.to_be_bytes(), decision.as_str());
    Ok(GuardOutcome { decision, starts, cumulative_aex, policy })
}

/// Adds this run's interrupt count to the persisted total. Call before exit.
pub fn guard_record_interrupts(p: &mut Platform, eid: EnclaveId) -> Result<u64, CpuError> {
    let mut state = read_guard_state(p, eid)?;
    state.cumulative_aex += p.cpu.secs(eid)?.aex_count;
    write_guard_state(p, eid, state)?;
    Ok(state.cumulative_aex)
}
