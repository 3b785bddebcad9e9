//! Software IEEE 754 binary16.
//!
//! Conversions round to nearest, ties to even. Subnormals are kept, never
//! flushed. Invalid operations produce the single canonical quiet NaN
//! (`0x7E00`); payloads are not propagated.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// A binary16 value stored as its raw bit pattern.
///
/// Equality is bitwise, so `+0 != -0` and a NaN equals itself when the bits match.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Half16(u16);

impl Half16 {
    pub const ZERO: Half16 = Half16(0x0000);
    pub const NEG_ZERO: Half16 = Half16(0x8000);
    pub const ONE: Half16 = Half16(0x3C00);
    pub const INFINITY: Half16 = Half16(0x7C00);
    pub const NEG_INFINITY: Half16 = Half16(0xFC00);
    pub const NAN: Half16 = Half16(0x7E00);
    /// 65504
    pub const MAX: Half16 = Half16(0x7BFF);
    /// 2^-14
    pub const MIN_POSITIVE: Half16 = Half16(0x0400);
    /// 2^-24
    pub const MIN_POSITIVE_SUBNORMAL: Half16 = Half16(0x0001);

    pub const fn from_bits(bits: u16) -> Self {
        Half16(bits)
    }

    pub const fn to_bits(self) -> u16 {
        self.0
    }

    pub fn from_f32(x: f32) -> Self {
        f32_to_f16(x)
    }

    pub fn from_f64(x: f64) -> Self {
        f64_to_f16(x)
    }

    pub fn to_f32(self) -> f32 {
        f16_to_f32(self)
    }

    pub fn to_f64(self) -> f64 {
        f16_to_f32(self) as f64
    }

    pub const fn is_nan(self) -> bool {
        self.0 & 0x7C00 == 0x7C00 && self.0 & 0x03FF != 0
    }

    pub const fn is_infinite(self) -> bool {
        self.0 & 0x7FFF == 0x7C00
    }

    pub const fn is_finite(self) -> bool {
        self.0 & 0x7C00 != 0x7C00
    }

    pub const fn is_zero(self) -> bool {
        self.0 & 0x7FFF == 0
    }

    pub const fn is_subnormal(self) -> bool {
        self.0 & 0x7C00 == 0 && self.0 & 0x03FF != 0
    }

    pub const fn is_sign_negative(self) -> bool {
        self.0 & 0x8000 != 0
    }
}

impl fmt::Debug for Half16 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Half16({:#06x} = {})", self.0, self.to_f32())
    }
}

impl fmt::Display for Half16 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.to_f32(), f)
    }
}

impl PartialOrd for Half16 {
    /// Numeric ordering; NaN is unordered and `-0 == +0`.
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        self.to_f32().partial_cmp(&other.to_f32())
    }
}

impl From<Half16> for f32 {
    fn from(h: Half16) -> f32 {
        h.to_f32()
    }
}

/// Rounds `x` once to binary16.
pub fn f32_to_f16(x: f32) -> Half16 {
    let bits = x.to_bits();
    let sign = ((bits >> 16) & 0x8000) as u16;
    let exp = ((bits >> 23) & 0xFF) as i32;
    let man = bits & 0x007F_FFFF;

    if exp == 0xFF {
        return if man == 0 {
            Half16(sign | 0x7C00)
        } else {
            Half16::NAN
        };
    }

    let e = exp - 127 + 15;
    if e >= 31 {
        return Half16(sign | 0x7C00);
    }
    if e <= 0 {
        // Result is subnormal or zero; binary32 subnormals land here too and round to zero.
        if e < -10 || exp == 0 {
            return Half16(sign);
        }
        let m = man | 0x0080_0000;
        let shift = (14 - e) as u32;
        return Half16(sign | round_shift(m as u64, shift) as u16);
    }

    let h = ((e as u32) << 10) | (man >> 13);
    let rem = man & 0x1FFF;
    let h = if rem > 0x1000 || (rem == 0x1000 && h & 1 == 1) {
        h + 1
    } else {
        h
    };
    // a carry out of the significand bumps the exponent, possibly to infinity
    Half16(sign | h as u16)
}

/// Rounds `x` once to binary16, without passing through binary32.
pub fn f64_to_f16(x: f64) -> Half16 {
    let bits = x.to_bits();
    let sign = ((bits >> 48) & 0x8000) as u16;
    let exp = ((bits >> 52) & 0x7FF) as i64;
    let man = bits & 0x000F_FFFF_FFFF_FFFF;

    if exp == 0x7FF {
        return if man == 0 {
            Half16(sign | 0x7C00)
        } else {
            Half16::NAN
        };
    }

    let e = exp - 1023 + 15;
    if e >= 31 {
        return Half16(sign | 0x7C00);
    }
    if e <= 0 {
        if e < -10 || exp == 0 {
            return Half16(sign);
        }
        let m = man | (1u64 << 52);
        let shift = (43 - e) as u32;
        return Half16(sign | round_shift(m, shift) as u16);
    }

    let h = ((e as u64) << 10) | (man >> 42);
    let rem = man & ((1u64 << 42) - 1);
    let halfway = 1u64 << 41;
    let h = if rem > halfway || (rem == halfway && h & 1 == 1) {
        h + 1
    } else {
        h
    };
    Half16(sign | h as u16)
}

/// `m >> shift` rounded to nearest, ties to even.
fn round_shift(m: u64, shift: u32) -> u64 {
    let q = m >> shift;
    let rem = m & ((1u64 << shift) - 1);
    let halfway = 1u64 << (shift - 1);
    if rem > halfway || (rem == halfway && q & 1 == 1) {
        q + 1
    } else {
        q
    }
}

/// Exact widening.
pub fn f16_to_f32(h: Half16) -> f32 {
    let bits = h.0 as u32;
    let sign = (bits & 0x8000) << 16;
    let exp = (bits >> 10) & 0x1F;
    let man = bits & 0x03FF;
    match exp {
        0 => {
            // zero or subnormal: man * 2^-24 is exact in binary32
            let magnitude = man as f32 * f32::from_bits(0x3380_0000);
            f32::from_bits(sign | magnitude.to_bits())
        }
        0x1F if man == 0 => f32::from_bits(sign | 0x7F80_0000),
        0x1F => f32::from_bits(sign | 0x7FC0_0000 | (man << 13)),
        _ => f32::from_bits(sign | ((exp + 112) << 23) | (man << 13)),
    }
}

/// The value `x` takes after a store into binary16 storage.
pub fn quantize(x: f32) -> f32 {
    f16_to_f32(f32_to_f16(x))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// Binary16 arithmetic with a single rounding.
///
/// Operands are widened to binary64, where add, sub and mul are exact for
/// binary16 inputs; the quotient is rounded to 53 bits first, which cannot
/// change the final binary16 rounding since 53 >= 2*11 + 2.
pub fn f16_arith(op: ArithOp, a: Half16, b: Half16) -> Half16 {
    if a.is_nan() || b.is_nan() {
        return Half16::NAN;
    }
    let (x, y) = (a.to_f64(), b.to_f64());
    let wide = match op {
        ArithOp::Add => x + y,
        ArithOp::Sub => x - y,
        ArithOp::Mul => x * y,
        ArithOp::Div => x / y,
    };
    f64_to_f16(wide)
}

impl Add for Half16 {
    type Output = Half16;
    fn add(self, rhs: Half16) -> Half16 {
        f16_arith(ArithOp::Add, self, rhs)
    }
}

impl Sub for Half16 {
    type Output = Half16;
    fn sub(self, rhs: Half16) -> Half16 {
        f16_arith(ArithOp::Sub, self, rhs)
    }
}

impl Mul for Half16 {
    type Output = Half16;
    fn mul(self, rhs: Half16) -> Half16 {
        f16_arith(ArithOp::Mul, self, rhs)
    }
}

impl Div for Half16 {
    type Output = Half16;
    fn div(self, rhs: Half16) -> Half16 {
        f16_arith(ArithOp::Div, self, rhs)
    }
}

impl Neg for Half16 {
    type Output = Half16;
    fn neg(self) -> Half16 {
        if self.is_nan() {
            Half16::NAN
        } else {
            Half16(self.0 ^ 0x8000)
        }
    }
}

/// Number of nonzero inputs whose binary16 image is a signed zero.
pub fn count_flushed(values: &[f32]) -> usize {
    values
        .iter()
        .filter(|&&v| v != 0.0 && f32_to_f16(v).is_zero())
        .count()
}
