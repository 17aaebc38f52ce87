//! Signed log-magnitude arithmetic.
//!
//! Series terms in the shape densities carry factors such as Γ(M/2 + t) that
//! overflow `f64` long before the series converges, and the Kotz terms change
//! sign. Every such quantity is carried as `sign · exp(ln_abs)`.

use std::cmp::Ordering;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignedLog {
    pub ln_abs: f64,
    pub sign: i8,
}

impl SignedLog {
    pub const ZERO: SignedLog = SignedLog {
        ln_abs: f64::NEG_INFINITY,
        sign: 0,
    };
    pub const ONE: SignedLog = SignedLog { ln_abs: 0.0, sign: 1 };

    pub fn new(ln_abs: f64, sign: i8) -> Self {
        if sign == 0 || ln_abs == f64::NEG_INFINITY {
            Self::ZERO
        } else {
            SignedLog { ln_abs, sign: sign.signum() }
        }
    }

    pub fn from_value(v: f64) -> Self {
        if v == 0.0 {
            Self::ZERO
        } else {
            SignedLog {
                ln_abs: v.abs().ln(),
                sign: if v > 0.0 { 1 } else { -1 },
            }
        }
    }

    pub fn positive(ln_abs: f64) -> Self {
        Self::new(ln_abs, 1)
    }

    pub fn is_zero(&self) -> bool {
        self.sign == 0
    }

    pub fn value(&self) -> f64 {
        match self.sign {
            0 => 0.0,
            s => f64::from(s) * self.ln_abs.exp(),
        }
    }

    pub fn mul(self, other: SignedLog) -> SignedLog {
        if self.is_zero() || other.is_zero() {
            return Self::ZERO;
        }
        SignedLog {
            ln_abs: self.ln_abs + other.ln_abs,
            sign: self.sign * other.sign,
        }
    }

    pub fn scale_ln(self, ln_factor: f64) -> SignedLog {
        if self.is_zero() {
            return self;
        }
        SignedLog {
            ln_abs: self.ln_abs + ln_factor,
            sign: self.sign,
        }
    }

    pub fn add(self, other: SignedLog) -> SignedLog {
        if self.is_zero() {
            return other;
        }
        if other.is_zero() {
            return self;
        }
        let (hi, lo) = match self.ln_abs.partial_cmp(&other.ln_abs) {
            Some(Ordering::Less) => (other, self),
            _ => (self, other),
        };
        let ratio = (lo.ln_abs - hi.ln_abs).exp();
        let mix = if hi.sign == lo.sign { 1.0 + ratio } else { 1.0 - ratio };
        if mix <= 0.0 {
            return Self::ZERO;
        }
        SignedLog {
            ln_abs: hi.ln_abs + mix.ln(),
            sign: hi.sign,
        }
    }
}

/// Accumulates many signed log terms with a single rescaling pass.
pub fn sum(terms: &[SignedLog]) -> SignedLog {
    let max = terms
        .iter()
        .filter(|t| !t.is_zero())
        .map(|t| t.ln_abs)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return SignedLog::ZERO;
    }
    let total: f64 = terms
        .iter()
        .filter(|t| !t.is_zero())
        .map(|t| f64::from(t.sign) * (t.ln_abs - max).exp())
        .sum();
    SignedLog::from_value(total).scale_ln(max)
}

/// `ln(exp(a) + exp(b))` for plain log values.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}
