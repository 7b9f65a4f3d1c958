// SPDX-License-Identifier: Apache-2.0

//! Executable threat model. The attacker runs the OS (localities 0 to 3),
//! taps every bus frame, reads everything the CPU writes to the memory
//! hierarchy, injects interrupts, replays frames, restarts enclaves and
//! rolls back sealed blobs. Register contents are out of reach.

pub mod attacks;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::bus::TapLog;
use crate::cpu::{CpuError, EnclaveId, LeakSource, LeakTrace};
use crate::crypto::find_subslice;
use crate::flows::{self, InterruptMode};
use crate::platform::Platform;

pub use attacks::{run_attack_suite, AttackReport, Verdict};

/// Shortest secret the leak oracle accepts.
pub const MIN_SECRET_LEN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum AdversaryError {
    #[error("secret shorter than {MIN_SECRET_LEN} bytes")]
    SecretTooShort,
}

impl AdversaryError {
    pub fn code(&self) -> &'static str {
        match self {
            AdversaryError::SecretTooShort => "SECRET_TOO_SHORT",
        }
    }
}

/// Everything outside CPU registers and TPM internals.
#[derive(Clone, Debug, Default)]
pub struct Observables {
    pub tap: TapLog,
    pub leaks: LeakTrace,
    pub os_files: BTreeMap<String, Vec<u8>>,
}

impl Observables {
    /// Snapshot of what the attacker can see right now. Besides the files the
    /// OS already stores, this includes the TPM's software-visible state and
    /// the protocol transcript.
    pub fn capture(p: &Platform) -> Self {
        let mut os_files = p.os_files.clone();
        os_files.insert("tpm/public-state".into(), p.tpm().public_view().into_bytes());
        os_files.insert("transcript.jsonl".into(), p.bus.transcript().to_jsonl().into_bytes());
        Self { tap: p.bus.tap(), leaks: p.cpu.leaks().clone(), os_files }
    }

    fn haystacks(&self) -> Vec<Vec<u8>> {
        let mut out: Vec<Vec<u8>> = self.tap.frames().to_vec();
        // Consecutive writes can split a value across records, so each source
        // is also searched as one stream.
        for source in [LeakSource::Ssa, LeakSource::Epc, LeakSource::Buffer] {
            out.push(self.leaks.by_source(source).flatten().copied().collect());
        }
        out.push(self.leaks.records().iter().flat_map(|(_, b)| b.iter().copied()).collect());
        out.extend(self.os_files.values().cloned());
        out
    }
}

/// Leak oracle: is `secret` anywhere in `obs`, raw or hex-encoded?
pub fn contains_secret(obs: &Observables, secret: &[u8]) -> Result<bool, AdversaryError> {
    if secret.len() < MIN_SECRET_LEN {
        return Err(AdversaryError::SecretTooShort);
    }
    let lower = hex::encode(secret).into_bytes();
    let upper = hex::encode_upper(secret).into_bytes();
    Ok(obs.haystacks().iter().any(|h| {
        find_subslice(h, secret).is_some() || find_subslice(h, &lower).is_some() || find_subslice(h, &upper).is_some()
    }))
}

/// Names of the platform's tracked secrets that appear in `obs`.
pub fn leaked_secrets(p: &Platform, obs: &Observables) -> Vec<String> {
    p.tracked_secrets()
        .into_iter()
        .filter(|(_, s)| contains_secret(obs, s).unwrap_or(false))
        .map(|(name, _)| name)
        .collect()
}

/// Interrupts the entered program before every instruction until it exits,
/// then returns what the attacker observed.
pub fn interrupt_storm(p: &mut Platform, eid: EnclaveId) -> Result<Observables, CpuError> {
    flows::execute(p, eid, InterruptMode::Storm)?;
    Ok(Observables::capture(p))
}
