//! Seed derivation.
//!
//! One master seed is the only entropy source. Every derived stream is keyed by
//! a splitmix64 chain over the master seed and a list of labels, so the value
//! depends only on *what* is being drawn, never on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// splitmix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// A seed-derivation key component.
#[derive(Clone, Copy, Debug)]
pub enum Key<'a> {
    Str(&'a str),
    Int(u64),
}

impl<'a> From<&'a str> for Key<'a> {
    fn from(s: &'a str) -> Self {
        Key::Str(s)
    }
}

impl<'a> From<&'a String> for Key<'a> {
    fn from(s: &'a String) -> Self {
        Key::Str(s)
    }
}

impl From<u64> for Key<'_> {
    fn from(v: u64) -> Self {
        Key::Int(v)
    }
}

impl From<usize> for Key<'_> {
    fn from(v: usize) -> Self {
        Key::Int(v as u64)
    }
}

/// Derives a child seed from `seed` and an ordered list of keys.
pub fn derive(seed: u64, keys: &[Key<'_>]) -> u64 {
    let mut h = mix64(seed);
    for k in keys {
        let v = match *k {
            // length prefix keeps ("ab","c") and ("a","bc") apart
            Key::Str(s) => fnv1a(s.as_bytes()) ^ (s.len() as u64).rotate_left(32),
            Key::Int(i) => mix64(i ^ 0x5851_F42D_4C95_7F2D),
        };
        h = mix64(h ^ v);
    }
    h
}

/// Maps a 64-bit hash to a uniform double in [0, 1).
pub fn unit_f64(h: u64) -> f64 {
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(seed: u64, keys: &[Key<'_>]) -> Rng {
    rng(derive(seed, keys))
}

/// Hex SHA-256 of `bytes`, used to fingerprint datasets and configs.
pub fn digest_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

#[macro_export]
#[doc(hidden)]
macro_rules! keys {
    ($($k:expr),* $(,)?) => {
        &[$($crate::seed::Key::from($k)),*]
    };
}
