// SPDX-License-Identifier: Apache-2.0

//! Register file, the abstract enclave instruction set, the state save area,
//! and the leak trace.

use serde::{Deserialize, Serialize};

use super::identity::KeySelector;
use crate::crypto::{self, SymKey128};
use crate::tpm::Handle;

pub const GPR_COUNT: usize = 16;
pub const BND_COUNT: usize = 4;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RegisterFile {
    pub gprs: [u64; GPR_COUNT],
    pub bnd: [[u8; 16]; BND_COUNT],
}

impl RegisterFile {
    pub fn scrub(&mut self) {
        *self = Self::default();
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Instr {
    Nop,
    /// Release a TPM symmetric key into a BND register, asserting the
    /// running enclave's identity fields chosen by `selector`.
    LoadSecretToBnd {
        slot: u8,
        handle: Handle,
        selector: KeySelector,
    },
    /// Copies BND `bnd` into GPRs `gpr` (high half) and `gpr + 1` (low half).
    MoveBndToGpr {
        bnd: u8,
        gpr: u8,
    },
    XorBnd {
        dst: u8,
        src: u8,
    },
    /// CTR-encrypts 16-byte block `block` of the enclave's private input with
    /// BND `bnd` as key and writes it to untrusted memory at `addr`.
    EncryptBlockWithBnd {
        bnd: u8,
        nonce: u64,
        block: u64,
        addr: u64,
    },
    WriteMem {
        addr: u64,
        gpr: u8,
    },
    Exit,
}

/// Register spill written on asynchronous exit (and on exit).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SsaFrame {
    pub gpr_snapshot: [u64; GPR_COUNT],
    pub bnd_ct: [[u8; 16]; BND_COUNT],
    pub aex_nonce: u64,
}

impl SsaFrame {
    /// BND slot `i` is encrypted with block indices `4i..4i+3` under `nonce`.
    pub fn seal(key: &SymKey128, nonce: u64, regs: &RegisterFile) -> Self {
        let mut bnd_ct = [[0u8; 16]; BND_COUNT];
        for (i, ct) in bnd_ct.iter_mut().enumerate() {
            let out = crypto::ctr_crypt_at(key, nonce, 4 * i as u64, &regs.bnd[i]);
            ct.copy_from_slice(&out);
        }
        Self { gpr_snapshot: regs.gprs, bnd_ct, aex_nonce: nonce }
    }

    pub fn unseal(&self, key: &SymKey128) -> RegisterFile {
        let mut regs = RegisterFile { gprs: self.gpr_snapshot, ..Default::default() };
        for (i, slot) in regs.bnd.iter_mut().enumerate() {
            let out = crypto::ctr_crypt_at(key, self.aex_nonce, 4 * i as u64, &self.bnd_ct[i]);
            slot.copy_from_slice(&out);
        }
        regs
    }

    /// `gprs (16 x 8, BE) || bnd_ct (4 x 16) || nonce (8, BE)`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(GPR_COUNT * 8 + BND_COUNT * 16 + 8);
        for g in &self.gpr_snapshot {
            out.extend_from_slice(&g.to_be_bytes());
        }
        for b in &self.bnd_ct {
            out.extend_from_slice(b);
        }
        out.extend_from_slice(&self.aex_nonce.to_be_bytes());
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LeakSource {
    Ssa,
    Epc,
    Buffer,
}

/// Everything the CPU wrote to the memory hierarchy, in order.
#[derive(Clone, Debug, Default)]
pub struct LeakTrace {
    records: Vec<(LeakSource, Vec<u8>)>,
}

impl LeakTrace {
    pub(crate) fn push(&mut self, source: LeakSource, bytes: Vec<u8>) {
        self.records.push((source, bytes));
    }

    pub fn records(&self) -> &[(LeakSource, Vec<u8>)] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn by_source(&self, source: LeakSource) -> impl Iterator<Item = &[u8]> {
        self.records.iter().filter(move |(s, _)| *s == source).map(|(_, b)| b.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ssa_round_trip_and_layout() {
        let key = SymKey128([5; 16]);
        let mut regs = RegisterFile::default();
        regs.gprs[3] = 0xdead_beef;
        regs.bnd[2] = [0xab; 16];
        let f = SsaFrame::seal(&key, 9, &regs);
        assert_eq!(f.unseal(&key), regs);
        let bytes = f.to_bytes();
        assert_eq!(bytes.len(), 128 + 64 + 8);
        assert_eq!(&bytes[24..32], &0xdead_beefu64.to_be_bytes());
        assert_eq!(&bytes[128 + 32..128 + 48], &crypto::ctr_crypt_at(&key, 9, 8, &[0xab; 16])[..]);
    }
}
