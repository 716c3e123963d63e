use crate::error::{Error, Result};

/// Largest finite binary16 value.
pub const F16_MAX: f64 = 65504.0;
/// Smallest positive normal binary16 value, 2⁻¹⁴.
pub const F16_MIN_POSITIVE: f64 = 6.103_515_625e-5;

/// IEEE 754 binary16 value stored as raw bits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct F16(u16);

impl F16 {
    pub const ZERO: F16 = F16(0);

    pub const fn from_bits(bits: u16) -> Self {
        F16(bits)
    }

    pub const fn to_bits(self) -> u16 {
        self.0
    }

    /// Rounds to nearest binary16, ties to even. Values beyond ±65504 and
    /// non-finite values are rejected rather than saturated.
    pub fn from_f64(x: f64) -> Result<F16> {
        if !x.is_finite() || x.abs() > F16_MAX {
            return Err(Error::Range(x));
        }
        let sign: u16 = if x.is_sign_negative() { 0x8000 } else { 0 };
        let a = x.abs();
        if a == 0.0 {
            return Ok(F16(sign));
        }
        // quantum of the binade that holds `a`; subnormals share 2⁻²⁴
        let q_exp = if a < F16_MIN_POSITIVE {
            -24
        } else {
            exponent_of(a) - 10
        };
        let q = pow2(q_exp);
        let n = (a / q).round_ties_even();
        let r = n * q;
        let bits = if r < F16_MIN_POSITIVE {
            // subnormal, or exactly 2⁻¹⁴ when n carried to 1024
            n as u16
        } else {
            let e = exponent_of(r);
            let mant = (r / pow2(e - 10)) as u16 - 1024;
            (((e + 15) as u16) << 10) | mant
        };
        Ok(F16(sign | bits))
    }

    /// Exact widening conversion.
    pub fn to_f64(self) -> f64 {
        let sign = if self.0 & 0x8000 != 0 { -1.0 } else { 1.0 };
        let exp = ((self.0 >> 10) & 0x1f) as i32;
        let mant = (self.0 & 0x3ff) as f64;
        let mag = match exp {
            0 => mant * pow2(-24),
            31 => {
                if mant == 0.0 {
                    f64::INFINITY
                } else {
                    f64::NAN
                }
            }
            _ => (1024.0 + mant) * pow2(exp - 25),
        };
        sign * mag
    }
}

/// Unbiased exponent of a positive normal f64.
fn exponent_of(a: f64) -> i32 {
    ((a.to_bits() >> 52) & 0x7ff) as i32 - 1023
}

fn pow2(e: i32) -> f64 {
    f64::from_bits(((e + 1023) as u64) << 52)
}

/// `x` rounded through binary16.
pub fn round_to_f16(x: f64) -> Result<f64> {
    F16::from_f64(x).map(F16::to_f64)
}
