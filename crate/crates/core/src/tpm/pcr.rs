// SPDX-License-Identifier: Apache-2.0

//! PCR bank with per-index locality masks.

use serde::{Deserialize, Serialize};

use super::{Locality, TpmError};
use crate::crypto::{hash, hash_extend, Digest32};

pub const PCR_COUNT: usize = 24;

/// PCRs used by the launch flow for the candidate enclave identity.
pub const PCR_LAUNCH_MRENCLAVE: u8 = 11;
pub const PCR_LAUNCH_MRSIGNER: u8 = 12;
pub const PCR_LAUNCH_ATTRS: u8 = 13;
pub const PCR_DEBUG: u8 = 16;
pub const PCR_DRTM: u8 = 17;
/// Enclave attestation PCR.
pub const PCR_ENCLAVE_ATTEST: u8 = 21;

/// A set of PCR indices, bit `i` selecting PCR `i`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PcrSelection(u32);

impl PcrSelection {
    pub fn empty() -> Self {
        Self(0)
    }

    pub fn from_indices(indices: &[u8]) -> Result<Self, TpmError> {
        let mut mask = 0u32;
        for &i in indices {
            if usize::from(i) >= PCR_COUNT {
                return Err(TpmError::BadIndex);
            }
            mask |= 1 << i;
        }
        Ok(Self(mask))
    }

    pub fn mask(&self) -> u32 {
        self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn contains(&self, index: u8) -> bool {
        index < 32 && self.0 & (1 << index) != 0
    }

    /// Selected indices in ascending order.
    pub fn indices(&self) -> impl Iterator<Item = u8> + '_ {
        (0..32u8).filter(move |i| self.0 & (1 << i) != 0)
    }

    pub fn to_be_bytes(&self) -> [u8; 4] {
        self.0.to_be_bytes()
    }
}

/// Hash over the concatenation of PCR values in ascending index order.
pub fn composite_of(values: &[Digest32]) -> Digest32 {
    let mut buf = Vec::with_capacity(values.len() * 32);
    for v in values {
        buf.extend_from_slice(v.as_bytes());
    }
    hash(&buf)
}

const ALL: u8 = 0b1_1111;
const L4_ONLY: u8 = 0b1_0000;
const NONE: u8 = 0;

#[derive(Clone, Copy, Debug)]
struct Masks {
    extend: u8,
    reset: u8,
}

fn masks_for(index: usize) -> Masks {
    match index {
        11..=13 => Masks { extend: ALL, reset: L4_ONLY },
        0..=15 => Masks { extend: ALL, reset: NONE },
        16 | 23 => Masks { extend: ALL, reset: ALL },
        17..=22 => Masks { extend: L4_ONLY, reset: L4_ONLY },
        _ => unreachable!("PCR index out of range"),
    }
}

#[derive(Clone, Debug)]
pub struct PcrBank {
    values: [Digest32; PCR_COUNT],
    defaults: [Digest32; PCR_COUNT],
}

impl PcrBank {
    pub fn new(defaults: [Digest32; PCR_COUNT]) -> Self {
        Self { values: defaults, defaults }
    }

    fn slot(index: u8) -> Result<usize, TpmError> {
        let i = usize::from(index);
        if i < PCR_COUNT {
            Ok(i)
        } else {
            Err(TpmError::BadIndex)
        }
    }

    pub fn can_extend(index: u8, locality: Locality) -> bool {
        Self::slot(index).is_ok_and(|i| masks_for(i).extend & locality.bit() != 0)
    }

    pub fn can_reset(index: u8, locality: Locality) -> bool {
        Self::slot(index).is_ok_and(|i| masks_for(i).reset & locality.bit() != 0)
    }

    pub fn can_read(index: u8, locality: Locality) -> bool {
        index != PCR_ENCLAVE_ATTEST || locality == Locality::L4
    }

    pub fn extend(&mut self, index: u8, locality: Locality, value: &Digest32) -> Result<(), TpmError> {
        let i = Self::slot(index)?;
        if !Self::can_extend(index, locality) {
            return Err(TpmError::LocalityFail);
        }
        self.values[i] = hash_extend(&self.values[i], value.as_bytes());
        Ok(())
    }

    pub fn reset(&mut self, index: u8, locality: Locality) -> Result<(), TpmError> {
        let i = Self::slot(index)?;
        if !Self::can_reset(index, locality) {
            return Err(TpmError::LocalityFail);
        }
        self.values[i] = self.defaults[i];
        Ok(())
    }

    pub fn read(&self, index: u8, locality: Locality) -> Result<Digest32, TpmError> {
        let i = Self::slot(index)?;
        if !Self::can_read(index, locality) {
            return Err(TpmError::LocalityFail);
        }
        Ok(self.values[i])
    }

    /// Values of the selected PCRs in index order, without locality gating.
    pub(crate) fn selected(&self, selection: &PcrSelection) -> Result<Vec<Digest32>, TpmError> {
        selection.indices().map(|i| Self::slot(i).map(|s| self.values[s])).collect()
    }

    pub fn defaults(&self) -> &[Digest32; PCR_COUNT] {
        &self.defaults
    }

    pub fn values(&self) -> &[Digest32; PCR_COUNT] {
        &self.values
    }
}

impl Default for PcrBank {
    fn default() -> Self {
        Self::new([Digest32::zero(); PCR_COUNT])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attestation_pcrs_are_locality4_only() {
        let mut bank = PcrBank::default();
        for l in 0..=3 {
            let loc = Locality::new(l).unwrap();
            for pcr in [PCR_DRTM, PCR_ENCLAVE_ATTEST] {
                assert_eq!(bank.reset(pcr, loc), Err(TpmError::LocalityFail));
                assert_eq!(bank.extend(pcr, loc, &Digest32::zero()), Err(TpmError::LocalityFail));
            }
            for pcr in 11..=13 {
                assert_eq!(bank.reset(pcr, loc), Err(TpmError::LocalityFail));
            }
            assert_eq!(bank.read(PCR_ENCLAVE_ATTEST, loc), Err(TpmError::LocalityFail));
        }
        assert!(bank.reset(PCR_ENCLAVE_ATTEST, Locality::L4).is_ok());
        assert!(bank.read(PCR_ENCLAVE_ATTEST, Locality::L4).is_ok());
    }

    #[test]
    fn reset_then_extend() {
        let mut bank = PcrBank::default();
        let d = crate::crypto::hash(b"x");
        bank.reset(11, Locality::L4).unwrap();
        bank.extend(11, Locality::L4, &d).unwrap();
        assert_eq!(bank.read(11, Locality::L0).unwrap(), hash_extend(&Digest32::zero(), d.as_bytes()));
        assert!(bank.extend(PCR_DEBUG, Locality::L0, &d).is_ok());
        assert_eq!(bank.reset(3, Locality::L4), Err(TpmError::LocalityFail));
        assert_eq!(bank.read(24, Locality::L4), Err(TpmError::BadIndex));
    }

    #[test]
    fn selection_order() {
        let s = PcrSelection::from_indices(&[13, 11, 12]).unwrap();
        assert_eq!(s.indices().collect::<Vec<_>>(), vec![11, 12, 13]);
        assert_eq!(PcrSelection::from_indices(&[24]), Err(TpmError::BadIndex));
    }
}
