// SPDX-License-Identifier: Apache-2.0

//! Deterministic primitives shared by the TPM device and CPU microcode.
//!
//! Everything here is a pure function of its inputs: SHA-256 hashing and
//! hash-extend chaining, HMAC-SHA-256, an SP800-108 counter-mode KDF with an
//! HMAC PRF, AES-128 in counter mode, and Ed25519 signatures with seed-based
//! key generation.

use aes::cipher::{BlockEncrypt, KeyInit};
use aes::Aes128;
use ed25519_dalek::{Signer, Verifier};
use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use std::fmt;
use thiserror::Error;

type HmacSha256 = Hmac<Sha256>;

/// Errors raised by the primitives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("MAC key must not be empty")]
    EmptyKey,
    #[error("KDF seed must not be empty")]
    EmptySeed,
    #[error("malformed key material")]
    MalformedKey,
}

impl CryptoError {
    pub fn code(&self) -> &'static str {
        match self {
            CryptoError::EmptyKey => "EMPTY_KEY",
            CryptoError::EmptySeed => "EMPTY_SEED",
            CryptoError::MalformedKey => "MALFORMED_KEY",
        }
    }
}

macro_rules! byte_newtype {
    ($(#[$meta:meta])* $name:ident, $len:expr) => {
        $(#[$meta])*
        #[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub struct $name(pub [u8; $len]);

        impl $name {
            pub const LEN: usize = $len;

            pub const fn zero() -> Self {
                Self([0u8; $len])
            }

            pub fn as_bytes(&self) -> &[u8] {
                &self.0
            }

            /// Fails unless `bytes` is exactly the right length.
            pub fn from_slice(bytes: &[u8]) -> Option<Self> {
                <[u8; $len]>::try_from(bytes).ok().map(Self)
            }

            pub fn to_hex(&self) -> String {
                hex::encode(self.0)
            }
        }

        impl Default for $name {
            fn default() -> Self {
                Self::zero()
            }
        }

        impl AsRef<[u8]> for $name {
            fn as_ref(&self) -> &[u8] {
                &self.0
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($name), hex::encode(self.0))
            }
        }
    };
}

byte_newtype!(
    /// A SHA-256 output: measurements, PCR values, policy digests.
    Digest32,
    32
);
byte_newtype!(
    /// An AES-128 key.
    SymKey128,
    16
);
byte_newtype!(
    /// An HMAC-SHA-256 tag.
    MacTag32,
    32
);

pub fn hash(data: &[u8]) -> Digest32 {
    Digest32(Sha256::digest(data).into())
}

/// Hash of several byte strings concatenated in order.
pub fn hash_parts(parts: &[&[u8]]) -> Digest32 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    Digest32(h.finalize().into())
}

/// `hash(old || data)`.
pub fn hash_extend(old: &Digest32, data: &[u8]) -> Digest32 {
    hash_parts(&[old.as_bytes(), data])
}

/// Incremental SHA-256 used by TPM hash sequences.
#[derive(Clone, Default)]
pub struct StreamHasher(Sha256);

impl StreamHasher {
    pub fn new() -> Self {
        Self(Sha256::new())
    }

    pub fn update(&mut self, chunk: &[u8]) {
        self.0.update(chunk);
    }

    pub fn finish(self) -> Digest32 {
        Digest32(self.0.finalize().into())
    }
}

pub fn mac(key: &[u8], msg: &[u8]) -> Result<MacTag32, CryptoError> {
    if key.is_empty() {
        return Err(CryptoError::EmptyKey);
    }
    let mut m = <HmacSha256 as Mac>::new_from_slice(key).map_err(|_| CryptoError::EmptyKey)?;
    m.update(msg);
    Ok(MacTag32(m.finalize().into_bytes().into()))
}

/// Tag comparison without early exit.
pub fn tags_equal(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

/// SP800-108 KDF in counter mode with HMAC-SHA-256 as PRF.
///
/// Block `i` (starting at 1) is `HMAC(seed, [i]_32 || label || 0x00 || context || [L]_32)`
/// where `L` is the output length in bits; blocks are concatenated and
/// truncated to `out_len`.
pub fn kdf(seed: &[u8], label: &str, context: &[u8], out_len: usize) -> Result<Vec<u8>, CryptoError> {
    if seed.is_empty() {
        return Err(CryptoError::EmptySeed);
    }
    let bits = u32::try_from(out_len * 8).expect("KDF output length overflows 32 bits");
    let prf = <HmacSha256 as Mac>::new_from_slice(seed).map_err(|_| CryptoError::EmptySeed)?;
    let mut out = Vec::with_capacity(out_len + 32);
    let mut counter: u32 = 1;
    while out.len() < out_len {
        let mut m = prf.clone();
        m.update(&counter.to_be_bytes());
        m.update(label.as_bytes());
        m.update(&[0x00]);
        m.update(context);
        m.update(&bits.to_be_bytes());
        out.extend_from_slice(&m.finalize().into_bytes());
        counter += 1;
    }
    out.truncate(out_len);
    Ok(out)
}

pub fn kdf_digest(seed: &[u8], label: &str, context: &[u8]) -> Result<Digest32, CryptoError> {
    kdf(seed, label, context, 32).map(|v| Digest32::from_slice(&v).expect("32-byte KDF output"))
}

pub fn kdf_key128(seed: &[u8], label: &str, context: &[u8]) -> Result<SymKey128, CryptoError> {
    kdf(seed, label, context, 16).map(|v| SymKey128::from_slice(&v).expect("16-byte KDF output"))
}

/// AES-128 counter mode with the counter block `nonce || block_index`
/// (both 64-bit big-endian), block indices starting at 0.
pub fn ctr_crypt(key: &SymKey128, nonce: u64, data: &[u8]) -> Vec<u8> {
    ctr_crypt_at(key, nonce, 0, data)
}

/// Counter mode starting at `first_block` instead of 0.
pub fn ctr_crypt_at(key: &SymKey128, nonce: u64, first_block: u64, data: &[u8]) -> Vec<u8> {
    let cipher = Aes128::new(&key.0.into());
    let mut out = Vec::with_capacity(data.len());
    for (i, chunk) in data.chunks(16).enumerate() {
        let mut block = [0u8; 16];
        block[..8].copy_from_slice(&nonce.to_be_bytes());
        block[8..].copy_from_slice(&(first_block.wrapping_add(i as u64)).to_be_bytes());
        let mut ks = block.into();
        cipher.encrypt_block(&mut ks);
        out.extend(chunk.iter().zip(ks.iter()).map(|(d, k)| d ^ k));
    }
    out
}

/// Ed25519 public key bytes.
pub type PublicKey = Vec<u8>;

#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signature(pub Vec<u8>);

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({})", hex::encode(&self.0))
    }
}

#[derive(Clone)]
pub struct SigKeyPair {
    pub public: PublicKey,
    secret: [u8; 32],
}

impl fmt::Debug for SigKeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SigKeyPair").field("public", &hex::encode(&self.public)).finish_non_exhaustive()
    }
}

impl SigKeyPair {
    pub fn secret_bytes(&self) -> &[u8; 32] {
        &self.secret
    }
}

pub fn sig_keygen(seed: &Digest32) -> SigKeyPair {
    let sk = ed25519_dalek::SigningKey::from_bytes(&seed.0);
    SigKeyPair { public: sk.verifying_key().to_bytes().to_vec(), secret: seed.0 }
}

/// Public half for a private key given as its 32-byte seed.
pub fn sig_public(private: &[u8]) -> Result<PublicKey, CryptoError> {
    let seed = Digest32::from_slice(private).ok_or(CryptoError::MalformedKey)?;
    Ok(sig_keygen(&seed).public)
}

pub fn sign(private: &[u8], digest: &Digest32) -> Result<Signature, CryptoError> {
    let seed: [u8; 32] = private.try_into().map_err(|_| CryptoError::MalformedKey)?;
    let sk = ed25519_dalek::SigningKey::from_bytes(&seed);
    Ok(Signature(sk.sign(digest.as_bytes()).to_bytes().to_vec()))
}

/// `Ok(false)` for a bad signature, `Err` only when the public key itself is unusable.
pub fn verify(public: &[u8], digest: &Digest32, sig: &Signature) -> Result<bool, CryptoError> {
    let pk: [u8; 32] = public.try_into().map_err(|_| CryptoError::MalformedKey)?;
    let vk = ed25519_dalek::VerifyingKey::from_bytes(&pk).map_err(|_| CryptoError::MalformedKey)?;
    let Ok(sig) = ed25519_dalek::Signature::from_slice(&sig.0) else {
        return Ok(false);
    };
    Ok(vk.verify(digest.as_bytes(), &sig).is_ok())
}

/// Finds `needle` as a contiguous run inside `haystack`.
pub fn find_subslice(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return None;
    }
    haystack.windows(needle.len()).position(|w| w == needle)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_fips_vectors() {
        assert_eq!(hash(b"").to_hex(), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
        assert_eq!(hash(b"abc").to_hex(), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert_eq!(hash(b"abc"), hash(b"abc"));
    }

    #[test]
    fn extend_is_hash_of_concatenation() {
        let d = b"page";
        let mut buf = vec![0u8; 32];
        buf.extend_from_slice(d);
        assert_eq!(hash_extend(&Digest32::zero(), d), hash(&buf));
        assert_ne!(hash_extend(&Digest32::zero(), b"a"), hash_extend(&Digest32::zero(), b"b"));
    }

    #[test]
    fn hmac_rfc4231_case1() {
        let key = [0x0bu8; 20];
        let tag = mac(&key, b"Hi There").unwrap();
        assert_eq!(tag.to_hex(), "b0344c61d8db38535ca8afceaf0bf12b881dc200c9833da726e9376c2e32cff7");
        assert_eq!(mac(&[], b"x"), Err(CryptoError::EmptyKey));
    }

    #[test]
    fn kdf_contract() {
        for n in [16, 32, 64, 1, 33] {
            assert_eq!(kdf(b"seed", "L", b"ctx", n).unwrap().len(), n);
        }
        assert_ne!(kdf(b"s", "A", b"c", 32).unwrap(), kdf(b"s", "B", b"c", 32).unwrap());
        assert_eq!(kdf(b"", "A", b"c", 32), Err(CryptoError::EmptySeed));
        // The length field is part of the PRF input, so a shorter request is not a prefix.
        assert_ne!(kdf(b"s", "A", b"c", 16).unwrap(), kdf(b"s", "A", b"c", 32).unwrap()[..16]);
    }

    #[test]
    fn ctr_involution_and_nonce_separation() {
        let k = SymKey128([7u8; 16]);
        let p = b"sixteen byte msg".to_vec();
        let c = ctr_crypt(&k, 5, &p);
        assert_eq!(c.len(), p.len());
        assert_eq!(ctr_crypt(&k, 5, &c), p);
        assert_ne!(c, ctr_crypt(&k, 6, &p));
        assert!(ctr_crypt(&k, 5, &[]).is_empty());
        // Offset variant continues the same keystream.
        let long = vec![0u8; 48];
        let ks = ctr_crypt(&k, 9, &long);
        assert_eq!(ctr_crypt_at(&k, 9, 2, &long[..16]), ks[32..48]);
    }

    #[test]
    fn signatures() {
        let kp = sig_keygen(&hash(b"author"));
        let kp2 = sig_keygen(&hash(b"author"));
        assert_eq!(kp.public, kp2.public);
        assert_eq!(kp.secret_bytes(), kp2.secret_bytes());
        let d = hash(b"doc");
        let s = sign(kp.secret_bytes(), &d).unwrap();
        assert!(verify(&kp.public, &d, &s).unwrap());
        assert!(!verify(&kp.public, &hash(b"other"), &s).unwrap());
        let other = sig_keygen(&hash(b"mallory"));
        assert!(!verify(&other.public, &d, &s).unwrap());
        assert_eq!(verify(&[1, 2, 3], &d, &s), Err(CryptoError::MalformedKey));
        assert_eq!(sign(&[0u8; 5], &d).unwrap_err(), CryptoError::MalformedKey);
    }

    #[test]
    fn subslice_search() {
        assert_eq!(find_subslice(b"hello world", b"o w"), Some(4));
        assert_eq!(find_subslice(b"abc", b"abcd"), None);
        assert_eq!(find_subslice(b"abc", b""), None);
    }
}
