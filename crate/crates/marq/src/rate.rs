//! Exact rational rates.
//!
//! Frame rates are carried as reduced `num/den` fractions so that metadata
//! like `16000 / 1024 = 15.625 Hz` never drifts through float arithmetic,
//! and frame-index arithmetic (resampling, chunk sizing) stays exact.

use serde::{Deserialize, Serialize};
use std::fmt;

/// A positive rational rate in Hz, kept in lowest terms.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rate {
    num: u64,
    den: u64,
}

impl Rate {
    /// Build `num/den` Hz, reducing to lowest terms.
    ///
    /// Panics if either part is zero; rates are positive by construction.
    pub fn new(num: u64, den: u64) -> Self {
        assert!(num > 0 && den > 0, "rate parts must be positive");
        let g = gcd(num, den);
        Rate { num: num / g, den: den / g }
    }

    /// Integer rate in Hz.
    pub fn from_hz(hz: u64) -> Self {
        Rate::new(hz, 1)
    }

    /// Frame rate of a hop-based extractor: `sample_rate / hop`.
    pub fn per_hop(sample_rate: u32, hop: usize) -> Self {
        Rate::new(u64::from(sample_rate), hop as u64)
    }

    /// Exact conversion from a finite positive f64.
    ///
    /// Every finite f64 is a dyadic rational, so this is lossless for the
    /// rates that appear in configs (`15.625`, `18.75`, `25.0`, ...).
    pub fn from_f64_exact(value: f64) -> Option<Self> {
        if !value.is_finite() || value <= 0.0 {
            return None;
        }
        let bits = value.to_bits();
        let exp = ((bits >> 52) & 0x7ff) as i64;
        let frac = bits & ((1u64 << 52) - 1);
        let (mut mant, mut e2) = if exp == 0 {
            (frac, -1074i64)
        } else {
            (frac | (1u64 << 52), exp - 1075)
        };
        while mant % 2 == 0 && e2 < 0 {
            mant /= 2;
            e2 += 1;
        }
        if e2 >= 0 {
            mant.checked_mul(1u64.checked_shl(e2 as u32)?)
                .map(|n| Rate::new(n, 1))
        } else {
            let shift = (-e2) as u32;
            if shift > 63 {
                return None;
            }
            Some(Rate::new(mant, 1u64 << shift))
        }
    }

    pub fn num(&self) -> u64 {
        self.num
    }

    pub fn den(&self) -> u64 {
        self.den
    }

    pub fn to_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `round(index * self / other)`, half away from zero, exact in integers.
    pub fn map_index(&self, index: u64, other: Rate) -> u64 {
        round_ratio(
            index as u128 * self.num as u128 * other.den as u128,
            self.den as u128 * other.num as u128,
        ) as u64
    }

    /// `round(seconds * self)`: frame count spanned by a duration.
    pub fn frames_for_seconds(&self, seconds: f64) -> u64 {
        (seconds * self.to_f64()).round() as u64
    }
}

impl fmt::Debug for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{} Hz", self.num, self.den)
    }
}

impl fmt::Display for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{} Hz", self.num)
        } else {
            write!(f, "{} Hz", self.to_f64())
        }
    }
}

/// `round(a / b)` for positive integers, half rounded up.
pub fn round_ratio(a: u128, b: u128) -> u128 {
    (2 * a + b) / (2 * b)
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduces_to_lowest_terms() {
        let r = Rate::new(16000, 1024);
        assert_eq!((r.num(), r.den()), (125, 8));
        assert_eq!(r.to_f64(), 15.625);
    }

    #[test]
    fn f64_round_trip_is_exact_for_config_rates() {
        for hz in [15.625, 18.75, 25.0, 75.0, 31.25] {
            let r = Rate::from_f64_exact(hz).unwrap();
            assert_eq!(r.to_f64(), hz);
        }
        assert!(Rate::from_f64_exact(0.0).is_none());
        assert!(Rate::from_f64_exact(-1.0).is_none());
        assert!(Rate::from_f64_exact(f64::NAN).is_none());
    }

    #[test]
    fn index_mapping_rounds_half_up() {
        let ten = Rate::from_hz(10);
        let twenty = Rate::from_hz(20);
        // Downsample by 2: output frame t reads input frame 2t.
        assert_eq!(twenty.map_index(3, ten), 6);
        // Upsample by 2: t=1 maps to round(0.5) = 1.
        assert_eq!(ten.map_index(1, twenty), 1);
        assert_eq!(ten.map_index(2, twenty), 1);
    }
}
