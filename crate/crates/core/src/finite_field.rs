//! Binary extension fields.
//!
//! [`Gf256`] is GF(2^8) reduced by the AES polynomial x^8 + x^4 + x^3 + x + 1
//! (0x11B); it carries the Shamir shares, one element per byte offset.
//! [`Gf64`] is GF(2^64) reduced by x^64 + x^4 + x^3 + x + 1 and is the field
//! the message and key tags are evaluated in.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, MulAssign};

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum FieldError {
    #[error("zero has no multiplicative inverse")]
    ZeroInverse,
}

/// Low byte of the GF(2^8) reduction polynomial (x^8 is implicit).
pub const GF256_POLY: u8 = 0x1B;

/// Low word of the GF(2^64) reduction polynomial (x^64 is implicit).
pub const GF64_POLY: u64 = 0x1B;

const fn xtime(a: u8) -> u8 {
    let hi = a & 0x80;
    let shifted = a << 1;
    if hi != 0 {
        shifted ^ GF256_POLY
    } else {
        shifted
    }
}

struct LogTables {
    exp: [u8; 512],
    log: [u8; 256],
}

// 0x03 generates the multiplicative group under 0x11B.
const fn build_log_tables() -> LogTables {
    let mut exp = [0u8; 512];
    let mut log = [0u8; 256];
    let mut x: u8 = 1;
    let mut i = 0;
    while i < 255 {
        exp[i] = x;
        log[x as usize] = i as u8;
        x ^= xtime(x);
        i += 1;
    }
    while i < 512 {
        exp[i] = exp[i - 255];
        i += 1;
    }
    LogTables { exp, log }
}

static TABLES: LogTables = build_log_tables();

/// An element of GF(2^8).
#[repr(transparent)]
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct Gf256(pub u8);

impl Gf256 {
    pub const ZERO: Gf256 = Gf256(0);
    pub const ONE: Gf256 = Gf256(1);

    pub const fn new(v: u8) -> Self {
        Gf256(v)
    }

    pub const fn value(self) -> u8 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn inv(self) -> Result<Gf256, FieldError> {
        if self.0 == 0 {
            return Err(FieldError::ZeroInverse);
        }
        let l = TABLES.log[self.0 as usize] as usize;
        Ok(Gf256(TABLES.exp[255 - l]))
    }

    pub fn pow(self, mut e: u32) -> Gf256 {
        let mut base = self;
        let mut acc = Gf256::ONE;
        while e > 0 {
            if e & 1 == 1 {
                acc *= base;
            }
            base = base * base;
            e >>= 1;
        }
        acc
    }
}

impl fmt::Debug for Gf256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Gf256({:#04x})", self.0)
    }
}

impl fmt::Display for Gf256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#04x}", self.0)
    }
}

impl From<u8> for Gf256 {
    fn from(v: u8) -> Self {
        Gf256(v)
    }
}

#[allow(clippy::suspicious_arithmetic_impl)]
impl Add for Gf256 {
    type Output = Gf256;
    fn add(self, rhs: Gf256) -> Gf256 {
        Gf256(self.0 ^ rhs.0)
    }
}

impl AddAssign for Gf256 {
    #[allow(clippy::suspicious_op_assign_impl)]
    fn add_assign(&mut self, rhs: Gf256) {
        self.0 ^= rhs.0;
    }
}

impl Mul for Gf256 {
    type Output = Gf256;
    fn mul(self, rhs: Gf256) -> Gf256 {
        if self.0 == 0 || rhs.0 == 0 {
            return Gf256::ZERO;
        }
        let l = TABLES.log[self.0 as usize] as usize + TABLES.log[rhs.0 as usize] as usize;
        Gf256(TABLES.exp[l])
    }
}

impl MulAssign for Gf256 {
    fn mul_assign(&mut self, rhs: Gf256) {
        *self = *self * rhs;
    }
}

pub fn gf256_add(a: Gf256, b: Gf256) -> Gf256 {
    a + b
}

pub fn gf256_mul(a: Gf256, b: Gf256) -> Gf256 {
    a * b
}

pub fn gf256_inv(a: Gf256) -> Result<Gf256, FieldError> {
    a.inv()
}

/// Multiplication by one fixed element, as a 256-entry lookup row.
///
/// Bulk share arithmetic multiplies long byte strings by a handful of
/// per-subset constants, so one row lookup per byte replaces the log/exp
/// round trip.
#[derive(Clone)]
pub struct MulRow {
    row: [u8; 256],
}

impl MulRow {
    pub fn new(c: Gf256) -> Self {
        let mut row = [0u8; 256];
        for (v, out) in row.iter_mut().enumerate() {
            *out = (Gf256(v as u8) * c).0;
        }
        MulRow { row }
    }

    #[inline]
    pub fn apply(&self, v: u8) -> u8 {
        self.row[v as usize]
    }

    /// `acc[p] ^= c * src[p]` for every offset.
    pub fn mul_add_into(&self, acc: &mut [u8], src: &[u8]) {
        debug_assert_eq!(acc.len(), src.len());
        for (a, &s) in acc.iter_mut().zip(src) {
            *a ^= self.row[s as usize];
        }
    }
}

/// An element of GF(2^64).
#[repr(transparent)]
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Gf64(pub u64);

impl Gf64 {
    pub const ZERO: Gf64 = Gf64(0);
    pub const ONE: Gf64 = Gf64(1);

    pub const fn new(v: u64) -> Self {
        Gf64(v)
    }

    pub const fn value(self) -> u64 {
        self.0
    }
}

impl fmt::Debug for Gf64 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Gf64({:#018x})", self.0)
    }
}

#[allow(clippy::suspicious_arithmetic_impl)]
impl Add for Gf64 {
    type Output = Gf64;
    fn add(self, rhs: Gf64) -> Gf64 {
        Gf64(self.0 ^ rhs.0)
    }
}

impl AddAssign for Gf64 {
    #[allow(clippy::suspicious_op_assign_impl)]
    fn add_assign(&mut self, rhs: Gf64) {
        self.0 ^= rhs.0;
    }
}

impl Mul for Gf64 {
    type Output = Gf64;
    fn mul(self, rhs: Gf64) -> Gf64 {
        gf64ext_mul(self, rhs)
    }
}

#[inline]
fn gf64_xtime(v: u64) -> u64 {
    let carry = v >> 63;
    (v << 1) ^ (carry.wrapping_neg() & GF64_POLY)
}

/// Shift-and-add product in GF(2^64).
pub fn gf64ext_mul(a: Gf64, b: Gf64) -> Gf64 {
    let mut acc = 0u64;
    let mut x = a.0;
    let mut y = b.0;
    while y != 0 {
        if y & 1 == 1 {
            acc ^= x;
        }
        x = gf64_xtime(x);
        y >>= 1;
    }
    Gf64(acc)
}

/// Multiplication by one fixed GF(2^64) element using byte-window tables.
///
/// Horner evaluation multiplies by the same evaluation point once per block;
/// eight lookups replace the 64-step shift-and-add loop.
pub struct Gf64MulTable {
    windows: Box<[[u64; 256]; 8]>,
}

impl Gf64MulTable {
    pub fn new(c: Gf64) -> Self {
        let mut windows = Box::new([[0u64; 256]; 8]);
        let mut basis = c.0; // c * x^(8w + bit)
        for window in windows.iter_mut() {
            let mut bits = [0u64; 8];
            for b in bits.iter_mut() {
                *b = basis;
                basis = gf64_xtime(basis);
            }
            for v in 1..256usize {
                let low = v.trailing_zeros() as usize;
                window[v] = window[v & (v - 1)] ^ bits[low];
            }
        }
        Gf64MulTable { windows }
    }

    #[inline]
    pub fn mul(&self, v: u64) -> u64 {
        let w = &self.windows;
        w[0][(v & 0xFF) as usize]
            ^ w[1][((v >> 8) & 0xFF) as usize]
            ^ w[2][((v >> 16) & 0xFF) as usize]
            ^ w[3][((v >> 24) & 0xFF) as usize]
            ^ w[4][((v >> 32) & 0xFF) as usize]
            ^ w[5][((v >> 40) & 0xFF) as usize]
            ^ w[6][((v >> 48) & 0xFF) as usize]
            ^ w[7][(v >> 56) as usize]
    }
}
