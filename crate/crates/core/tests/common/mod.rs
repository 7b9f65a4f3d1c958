// SPDX-License-Identifier: Apache-2.0

//! Independent reference implementations. Nothing here calls into
//! `talus_core::crypto`; HMAC is built by hand on top of `sha2`, and the
//! keystream comes from the `ctr` crate.

#![allow(dead_code)]

use aes::cipher::{KeyIvInit, StreamCipher};
use sha2::{Digest, Sha256};

pub fn sha256(data: &[u8]) -> [u8; 32] {
    Sha256::digest(data).into()
}

pub fn sha256_parts(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}

/// HMAC-SHA-256 written out from its definition.
pub fn hmac_sha256(key: &[u8], msg: &[u8]) -> [u8; 32] {
    let mut k0 = [0u8; 64];
    if key.len() > 64 {
        k0[..32].copy_from_slice(&sha256(key));
    } else {
        k0[..key.len()].copy_from_slice(key);
    }
    let ipad: Vec<u8> = k0.iter().map(|b| b ^ 0x36).collect();
    let opad: Vec<u8> = k0.iter().map(|b| b ^ 0x5c).collect();
    let inner = sha256_parts(&[&ipad, msg]);
    sha256_parts(&[&opad, &inner])
}

/// SP800-108 counter-mode KDF with HMAC-SHA-256:
/// `K(i) = HMAC(seed, [i]_32 || label || 0x00 || context || [L]_32)`.
pub fn sp800_108(seed: &[u8], label: &[u8], context: &[u8], out_len: usize) -> Vec<u8> {
    let l_bits = (out_len as u32) * 8;
    let mut out = Vec::new();
    let mut i: u32 = 1;
    while out.len() < out_len {
        let mut m = i.to_be_bytes().to_vec();
        m.extend_from_slice(label);
        m.push(0);
        m.extend_from_slice(context);
        m.extend_from_slice(&l_bits.to_be_bytes());
        out.extend_from_slice(&hmac_sha256(seed, &m));
        i += 1;
    }
    out.truncate(out_len);
    out
}

/// AES-128-CTR with a 128-bit big-endian counter starting at `nonce || first_block`.
pub fn ctr_oracle(key: &[u8; 16], nonce: u64, first_block: u64, data: &[u8]) -> Vec<u8> {
    let mut iv = [0u8; 16];
    iv[..8].copy_from_slice(&nonce.to_be_bytes());
    iv[8..].copy_from_slice(&first_block.to_be_bytes());
    let mut cipher = ctr::Ctr128BE::<aes::Aes128>::new(key.into(), &iv.into());
    let mut buf = data.to_vec();
    cipher.apply_keystream(&mut buf);
    buf
}

pub fn extend(old: &[u8; 32], data: &[u8]) -> [u8; 32] {
    sha256_parts(&[old, data])
}

/// Streaming measurement over `offset (BE8) || SHA-256(page)` records.
pub fn mrenclave(pages: &[(u64, Vec<u8>)]) -> [u8; 32] {
    let mut h = Sha256::new();
    for (offset, content) in pages {
        h.update(offset.to_be_bytes());
        h.update(sha256(content));
    }
    h.finalize().into()
}

/// Launch-key policy: locality 4, then PCR 11..13 each holding one extend from zero.
pub fn launch_policy(mrenclave: &[u8; 32], mrsigner: &[u8; 32], prodid: u16, svn: u16, attrs: u64) -> [u8; 32] {
    let zero = [0u8; 32];
    let attrs_digest = sha256_parts(&[&prodid.to_be_bytes(), &svn.to_be_bytes(), &attrs.to_be_bytes()]);
    let pcrs = [extend(&zero, mrenclave), extend(&zero, mrsigner), extend(&zero, &attrs_digest)];
    let composite = sha256(&pcrs.concat());
    let mask: u32 = (1 << 11) | (1 << 12) | (1 << 13);
    let d = extend(&zero, &[b"POLICY_LOCALITY".as_slice(), &[4]].concat());
    extend(&d, &[b"POLICY_PCR".as_slice(), &mask.to_be_bytes(), &composite].concat())
}

/// Identity policy over the chosen fields; the bitmap marks which are present.
pub fn identity_policy(
    mrenclave: Option<&[u8; 32]>,
    mrsigner: Option<&[u8; 32]>,
    prodid: Option<u16>,
    svn: Option<u16>,
) -> [u8; 32] {
    let bitmap = u8::from(mrenclave.is_some())
        | u8::from(mrsigner.is_some()) << 1
        | u8::from(prodid.is_some()) << 2
        | u8::from(svn.is_some()) << 3;
    let mut arg = b"POLICY_ID".to_vec();
    arg.push(bitmap);
    if let Some(m) = mrenclave {
        arg.extend_from_slice(m);
    }
    if let Some(m) = mrsigner {
        arg.extend_from_slice(m);
    }
    if let Some(v) = prodid {
        arg.extend_from_slice(&v.to_be_bytes());
    }
    if let Some(v) = svn {
        arg.extend_from_slice(&v.to_be_bytes());
    }
    extend(&[0u8; 32], &arg)
}

pub fn unhex(s: &str) -> Vec<u8> {
    hex::decode(s.replace([' ', '\n'], "")).expect("valid hex literal")
}
