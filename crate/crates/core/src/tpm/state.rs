// SPDX-License-Identifier: Apache-2.0

//! Persisted device image.
//!
//! ```text
//! TALUS-TPM-STATE v1
//! primary_seed = <hex>
//! ...
//! nv.01000000 = <kind || counter || size || policy || payload>
//! ```
//!
//! Sessions, hash sequences and loaded objects are volatile and are dropped.
//! PCRs come back at their defaults, as after a platform reset.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::command::{Handle, NvKind};
use super::pcr::{PcrBank, PCR_COUNT};
use super::{NvIndex, TpmDevice, TpmError};
use crate::crypto::{Digest32, SymKey128};

pub const STATE_HEADER: &str = "TALUS-TPM-STATE";
const VERSION: &str = "v1";

fn nv_bytes(nv: &NvIndex) -> Vec<u8> {
    let mut out = vec![match nv.kind {
        NvKind::Counter => 0u8,
        NvKind::Data => 1u8,
    }];
    out.extend_from_slice(&nv.counter.to_be_bytes());
    out.extend_from_slice(&nv.size.to_be_bytes());
    out.extend_from_slice(nv.auth_policy.as_bytes());
    out.extend_from_slice(&nv.data);
    out
}

fn parse_nv(index: Handle, b: &[u8]) -> Option<NvIndex> {
    let kind = match *b.first()? {
        0 => NvKind::Counter,
        1 => NvKind::Data,
        _ => return None,
    };
    let counter = u64::from_be_bytes(b.get(1..9)?.try_into().ok()?);
    let size = u32::from_be_bytes(b.get(9..13)?.try_into().ok()?);
    let auth_policy = Digest32::from_slice(b.get(13..45)?)?;
    let data = b.get(45..)?.to_vec();
    if data.len() > size as usize || (kind == NvKind::Counter && !data.is_empty()) {
        return None;
    }
    Some(NvIndex { index, kind, size, counter, data, auth_policy })
}

impl TpmDevice {
    pub fn persist(&self) -> String {
        let mut out = format!("{STATE_HEADER} {VERSION}\n");
        let mut put = |k: &str, v: &[u8]| {
            let _ = writeln!(out, "{k} = {}", hex::encode(v));
        };
        put("primary_seed", self.primary_seed.as_bytes());
        put("endorsement_seed", self.endorsement_seed.as_bytes());
        if let (Some(secret), Some(psk)) = (&self.owner_secret, &self.channel_psk) {
            put("owner_secret", secret);
            put("channel_psk", psk.as_bytes());
        }
        put("clock", &self.ticks.to_be_bytes());
        put("create_counter", &self.create_counter.to_be_bytes());
        for (i, d) in self.pcrs.defaults().iter().enumerate() {
            put(&format!("pcr_default.{i:02}"), d.as_bytes());
        }
        for nv in self.nv.values() {
            put(&format!("nv.{:08x}", nv.index.0), &nv_bytes(nv));
        }
        out
    }

    /// What software can learn through unauthorized commands: clock, PCR
    /// values, and NV public areas. Seeds, owner secrets and NV payloads stay inside.
    pub fn public_view(&self) -> String {
        let mut out = String::from("TALUS-TPM-PUBLIC v1\n");
        let _ = writeln!(out, "clock = {}", self.ticks);
        for (i, v) in self.pcrs.values().iter().enumerate() {
            let _ = writeln!(out, "pcr.{i:02} = {}", v.to_hex());
        }
        for nv in self.nv.values() {
            let _ = writeln!(
                out,
                "nv.{:08x} = {:?} size={} policy={}",
                nv.index.0,
                nv.kind,
                nv.size,
                nv.auth_policy.to_hex()
            );
        }
        out
    }

    pub fn restore(text: &str) -> Result<TpmDevice, TpmError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or(TpmError::CorruptState)?;
        match header.split_once(' ') {
            Some((STATE_HEADER, VERSION)) => {}
            Some((STATE_HEADER, _)) => return Err(TpmError::VersionMismatch),
            _ => return Err(TpmError::CorruptState),
        }

        let mut fields: BTreeMap<&str, Vec<u8>> = BTreeMap::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once(" = ").ok_or(TpmError::CorruptState)?;
            let bytes = hex::decode(v.trim()).map_err(|_| TpmError::CorruptState)?;
            if fields.insert(k.trim(), bytes).is_some() {
                return Err(TpmError::CorruptState);
            }
        }

        let digest = |v: Option<Vec<u8>>| v.and_then(|b| Digest32::from_slice(&b)).ok_or(TpmError::CorruptState);
        let u64_of = |v: Option<Vec<u8>>| {
            v.and_then(|b| <[u8; 8]>::try_from(b.as_slice()).ok()).map(u64::from_be_bytes).ok_or(TpmError::CorruptState)
        };

        let primary = digest(fields.remove("primary_seed"))?;
        let endorsement = digest(fields.remove("endorsement_seed"))?;
        let ticks = u64_of(fields.remove("clock"))?;
        let create_counter = u64_of(fields.remove("create_counter"))?;
        let owner = fields.remove("owner_secret");
        let psk = fields.remove("channel_psk");
        let mut defaults = [Digest32::zero(); PCR_COUNT];
        for (i, d) in defaults.iter_mut().enumerate() {
            *d = digest(fields.remove(format!("pcr_default.{i:02}").as_str()))?;
        }

        let mut dev = TpmDevice::with_parts(primary, endorsement, PcrBank::new(defaults));
        dev.ticks = ticks;
        dev.create_counter = create_counter;
        match (owner, psk) {
            (Some(o), Some(p)) => {
                let psk = SymKey128::from_slice(&p).ok_or(TpmError::CorruptState)?;
                dev.owner_secret = Some(o);
                dev.channel_psk = Some(psk);
            }
            (None, None) => {}
            _ => return Err(TpmError::CorruptState),
        }

        for (k, v) in fields {
            let idx = k
                .strip_prefix("nv.")
                .filter(|h| h.len() == 8)
                .and_then(|h| u32::from_str_radix(h, 16).ok())
                .ok_or(TpmError::CorruptState)?;
            let nv = parse_nv(Handle(idx), &v).ok_or(TpmError::CorruptState)?;
            dev.nv.insert(nv.index, nv);
        }
        Ok(dev)
    }
}
