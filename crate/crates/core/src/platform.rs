// SPDX-License-Identifier: Apache-2.0

//! A complete simulated machine: CPU, bus, TPM, and the OS-visible file store.

use std::collections::BTreeMap;

use crate::bus::{Cycle, SecureBus, SoftwarePort};
use crate::cpu::Cpu;
use crate::crypto::{self, Digest32};
use crate::tpm::{Locality, TpmDevice, TpmError};

/// Platform-unique values derived from the 64-bit scenario seed.
fn derive(seed: u64, label: &str) -> Digest32 {
    let mut material = b"TALUS-PLATFORM".to_vec();
    material.extend_from_slice(&seed.to_be_bytes());
    crypto::kdf_digest(&material, label, b"").expect("non-empty seed material")
}

pub const CPUSVN: u16 = 1;

pub struct Platform {
    pub cpu: Cpu,
    pub bus: SecureBus,
    /// Files the operating system stores on behalf of enclaves.
    pub os_files: BTreeMap<String, Vec<u8>>,
    seed: u64,
}

impl std::fmt::Debug for Platform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Platform").field("seed", &self.seed).field("cpu", &self.cpu).finish_non_exhaustive()
    }
}

impl Platform {
    /// Fresh machine with a newly manufactured and owned TPM.
    pub fn new(seed: u64) -> Self {
        let tpm = TpmDevice::from_manufacturing_seed(derive(seed, "TPM-MANUFACTURE").as_bytes());
        Self::with_tpm(seed, tpm).expect("fresh device accepts ownership")
    }

    /// Machine around an existing (possibly restored) TPM; takes ownership if unowned.
    pub fn with_tpm(seed: u64, mut tpm: TpmDevice) -> Result<Self, TpmError> {
        let owner_secret = derive(seed, "OWNER-SECRET");
        let psk = match tpm.channel_psk() {
            Some(psk) => psk,
            None => tpm.provision_owner(owner_secret.as_bytes())?,
        };
        let owner_epoch = tpm.owner_epoch().ok_or(TpmError::NotOwned)?;
        let cpu = Cpu::new(derive(seed, "SEAL-FUSES"), CPUSVN, &owner_epoch, derive(seed, "MEE-SALT"));
        let mut bus = SecureBus::new(tpm);
        bus.establish(&psk);
        Ok(Self { cpu, bus, os_files: BTreeMap::new(), seed })
    }

    /// Restores the TPM from its persisted image.
    pub fn restore(seed: u64, state: &str) -> Result<Self, TpmError> {
        Self::with_tpm(seed, TpmDevice::restore(state)?)
    }

    /// Power cycle: the TPM survives through its persisted image, everything else is lost.
    pub fn power_cycle(self) -> Result<Self, TpmError> {
        let state = self.bus.tpm().persist();
        let files = self.os_files;
        let mut p = Self::restore(self.seed, &state)?;
        p.os_files = files;
        Ok(p)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn tpm(&self) -> &TpmDevice {
        self.bus.tpm()
    }

    pub fn persist(&self) -> String {
        self.bus.tpm().persist()
    }

    /// Software (OS) access to the TPM.
    pub fn os(&mut self, locality: Locality) -> SoftwarePort<'_> {
        self.bus.port(locality, Cycle::Io)
    }

    pub fn note(&mut self, actor: &str, op: &str, args: &[u8], result: &str) {
        self.bus.transcript_mut().record(actor, op, args, result);
    }

    /// Key material the adversary must never observe: every TPM-held secret
    /// plus the CPU fuse secret.
    pub fn tracked_secrets(&self) -> Vec<(String, Vec<u8>)> {
        let tpm = self.bus.tpm();
        let mut out: Vec<(String, Vec<u8>)> = tpm
            .objects()
            .filter_map(|o| tpm.debug_object_secret(o.handle).map(|s| (format!("{:?}@{}", o.kind, o.handle), s)))
            .collect();
        out.push(("seal_fuses".to_string(), self.cpu.debug_seal_fuses().as_bytes().to_vec()));
        for eid in self.cpu.enclave_ids() {
            if let Some(k) = self.cpu.debug_ssa_key(eid) {
                out.push((format!("ssa_key@{}", eid.0), k.as_bytes().to_vec()));
            }
        }
        out
    }
}
