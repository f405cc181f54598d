//! One-time polynomial-evaluation tags.
//!
//! A [`TagKey`] is a pair (kappa, beta) of GF(2^64) elements taken from
//! l = 16 bytes of fresh shared randomness. The message is split into
//! 64-bit big-endian blocks (the last one zero-padded on the right),
//! followed by one block holding the message length in bits, and
//!
//! ```text
//! tag = beta + (((b_1 * kappa + b_2) * kappa + ...) + b_L) * kappa
//! ```
//!
//! evaluated by Horner's rule. For a fixed key pair, two distinct messages
//! of at most L blocks (length block included) collide or admit a chosen
//! tag difference with probability at most L / 2^64. Keys must never be
//! reused: beta is a one-time pad over the polynomial value.

use crate::finite_field::{Gf256, Gf64, Gf64MulTable};

/// Tag key length l in bytes.
pub const TAG_KEY_LEN: usize = 16;
/// Tag length r in bytes.
pub const TAG_LEN: usize = 8;

// Below this many blocks, building the window table costs more than it saves.
const TABLE_THRESHOLD_BLOCKS: usize = 64;

/// A field the polynomial hash can be evaluated in.
pub trait HashField: Copy + Eq {
    /// Block width in bytes.
    const BYTES: usize;
    const ZERO: Self;
    /// Big-endian block, zero-padded on the right when short.
    fn from_block(block: &[u8]) -> Self;
    /// Message bit length, truncated to the field width.
    fn from_bit_len(bits: u64) -> Self;
    fn add(self, other: Self) -> Self;
    fn mul(self, other: Self) -> Self;
}

impl HashField for Gf64 {
    const BYTES: usize = 8;
    const ZERO: Self = Gf64::ZERO;

    fn from_block(block: &[u8]) -> Self {
        let mut buf = [0u8; 8];
        buf[..block.len()].copy_from_slice(block);
        Gf64(u64::from_be_bytes(buf))
    }

    fn from_bit_len(bits: u64) -> Self {
        Gf64(bits)
    }

    fn add(self, other: Self) -> Self {
        self + other
    }

    fn mul(self, other: Self) -> Self {
        self * other
    }
}

impl HashField for Gf256 {
    const BYTES: usize = 1;
    const ZERO: Self = Gf256::ZERO;

    fn from_block(block: &[u8]) -> Self {
        Gf256(block.first().copied().unwrap_or(0))
    }

    fn from_bit_len(bits: u64) -> Self {
        Gf256(bits as u8)
    }

    fn add(self, other: Self) -> Self {
        self + other
    }

    fn mul(self, other: Self) -> Self {
        self * other
    }
}

/// Number of blocks hashed for a message of `len` bytes, length block included.
pub fn block_count<F: HashField>(len: usize) -> usize {
    len.div_ceil(F::BYTES) + 1
}

/// The tag construction over any [`HashField`].
pub fn poly_hash<F: HashField>(kappa: F, beta: F, message: &[u8]) -> F {
    let mut acc = F::ZERO;
    for block in message.chunks(F::BYTES) {
        acc = acc.add(F::from_block(block)).mul(kappa);
    }
    acc = acc.add(F::from_bit_len(message.len() as u64 * 8)).mul(kappa);
    acc.add(beta)
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub struct TagKey {
    pub kappa: Gf64,
    pub beta: Gf64,
}

impl std::fmt::Debug for TagKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("TagKey(..)")
    }
}

impl TagKey {
    pub fn new(kappa: Gf64, beta: Gf64) -> Self {
        TagKey { kappa, beta }
    }

    /// Reads (kappa, beta) big-endian from the first 16 bytes.
    ///
    /// Panics if fewer than [`TAG_KEY_LEN`] bytes are supplied.
    pub fn from_bytes(bytes: &[u8]) -> Self {
        let kappa = u64::from_be_bytes(bytes[0..8].try_into().expect("tag key length"));
        let beta = u64::from_be_bytes(bytes[8..16].try_into().expect("tag key length"));
        TagKey { kappa: Gf64(kappa), beta: Gf64(beta) }
    }

    pub fn to_bytes(&self) -> [u8; TAG_KEY_LEN] {
        let mut out = [0u8; TAG_KEY_LEN];
        out[..8].copy_from_slice(&self.kappa.0.to_be_bytes());
        out[8..].copy_from_slice(&self.beta.0.to_be_bytes());
        out
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Tag(pub [u8; TAG_LEN]);

impl std::fmt::Debug for Tag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tag({:016x})", u64::from_be_bytes(self.0))
    }
}

impl Tag {
    pub fn from_u64(v: u64) -> Self {
        Tag(v.to_be_bytes())
    }

    pub fn to_u64(self) -> u64 {
        u64::from_be_bytes(self.0)
    }
}

pub fn compute_tag(key: &TagKey, message: &[u8]) -> Tag {
    if block_count::<Gf64>(message.len()) < TABLE_THRESHOLD_BLOCKS {
        return Tag::from_u64(poly_hash(key.kappa, key.beta, message).0);
    }
    let table = Gf64MulTable::new(key.kappa);
    let mut acc = 0u64;
    let mut blocks = message.chunks_exact(8);
    for block in &mut blocks {
        acc = table.mul(acc ^ u64::from_be_bytes(block.try_into().expect("8-byte chunk")));
    }
    let rest = blocks.remainder();
    if !rest.is_empty() {
        acc = table.mul(acc ^ Gf64::from_block(rest).0);
    }
    acc = table.mul(acc ^ (message.len() as u64 * 8));
    Tag::from_u64(acc ^ key.beta.0)
}

/// Compares without exiting early on the first differing byte.
pub fn verify_tag(key: &TagKey, message: &[u8], tag: &Tag) -> bool {
    let expected = compute_tag(key, message);
    let diff = expected.0.iter().zip(tag.0.iter()).fold(0u8, |acc, (a, b)| acc | (a ^ b));
    diff == 0
}
