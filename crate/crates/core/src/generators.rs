//! Kotz type I density generators `h(y) = c·y^{τ−1}·e^{−Ry}` (Gaussian is
//! τ = 1, R = ½), their derivatives and the radial integrals
//! `∫_0^∞ r^{M+2t−1} h^{(2t)}(r²a + b) dr` appearing in the shape densities.
//!
//! The constant `c` normalizes `h(tr YY′)` over `M`-dimensional `Y`:
//! `c = R^{τ−1+M/2} Γ(M/2) / (π^{M/2} Γ(τ−1+M/2))`.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use std::f64::consts::PI;

use crate::error::{Result, ShapeError};
use crate::logspace::{self, SignedLog};
use crate::quadrature::{integrate_semi_infinite, QuadratureOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    tau: f64,
    rate: f64,
}

impl GeneratorSpec {
    pub fn kotz(tau: f64, rate: f64) -> Result<Self> {
        if !(tau >= 1.0) || !tau.is_finite() {
            return Err(ShapeError::Domain(format!("Kotz τ must be >= 1, got {tau}")));
        }
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(ShapeError::Domain(format!("Kotz R must be positive, got {rate}")));
        }
        Ok(GeneratorSpec { tau, rate })
    }

    pub fn gaussian() -> Self {
        GeneratorSpec { tau: 1.0, rate: 0.5 }
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn is_gaussian(&self) -> bool {
        self.tau == 1.0 && self.rate == 0.5
    }

    /// τ when it is a (small) positive integer.
    pub fn integer_tau(&self) -> Option<u32> {
        (self.tau.fract() == 0.0 && self.tau <= 1e6).then_some(self.tau as u32)
    }

    /// ln c for generator dimension `big_m`.
    pub fn ln_normalizing_constant(&self, big_m: usize) -> f64 {
        let half = big_m as f64 / 2.0;
        let shape = self.tau - 1.0 + half;
        shape * self.rate.ln() + ln_gamma(half) - half * PI.ln() - ln_gamma(shape)
    }
}

fn check_dimension(big_m: usize) -> Result<()> {
    if big_m == 0 {
        return Err(ShapeError::Dimension("generator dimension must be >= 1".into()));
    }
    Ok(())
}

/// `h(y)` for generator dimension `big_m`.
pub fn generator_value(spec: &GeneratorSpec, big_m: usize, y: f64) -> Result<f64> {
    Ok(ln_generator_value(spec, big_m, y)?.value())
}

pub fn ln_generator_value(spec: &GeneratorSpec, big_m: usize, y: f64) -> Result<SignedLog> {
    check_dimension(big_m)?;
    if !(y >= 0.0) {
        return Err(ShapeError::Domain(format!("generator argument must be >= 0, got {y}")));
    }
    if y == 0.0 && spec.tau > 1.0 {
        return Ok(SignedLog::ZERO);
    }
    let power = if spec.tau == 1.0 { 0.0 } else { (spec.tau - 1.0) * y.ln() };
    Ok(SignedLog::positive(
        spec.ln_normalizing_constant(big_m) + power - spec.rate * y,
    ))
}

/// `(x)(x−1)…(x−j+1)`.
fn falling_factorial(x: f64, j: usize) -> f64 {
    (0..j).map(|i| x - i as f64).product()
}

fn ln_binomial(n: usize, k: usize) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// `h^{(k)}(y)` in signed log form.
pub fn ln_generator_derivative(
    spec: &GeneratorSpec,
    big_m: usize,
    k: usize,
    y: f64,
) -> Result<SignedLog> {
    check_dimension(big_m)?;
    if !(y >= 0.0) || !y.is_finite() {
        return Err(ShapeError::Domain(format!(
            "derivative argument must be finite and >= 0, got {y}"
        )));
    }
    let r = spec.rate;
    let a = spec.tau - 1.0;
    let mut terms = Vec::with_capacity(k + 1);
    for j in 0..=k {
        let ff = falling_factorial(a, j);
        if ff == 0.0 {
            continue;
        }
        let power = a - j as f64;
        let ln_y_part = if y == 0.0 {
            if power < 0.0 {
                return Err(ShapeError::Domain(format!(
                    "h^({k}) is singular at y = 0 for τ = {}",
                    spec.tau
                )));
            } else if power > 0.0 {
                continue;
            } else {
                0.0
            }
        } else {
            power * y.ln()
        };
        let sign = if (k - j) % 2 == 1 { -1 } else { 1 } * if ff < 0.0 { -1 } else { 1 };
        terms.push(SignedLog::new(
            ln_binomial(k, j) + ff.abs().ln() + (k - j) as f64 * r.ln() + ln_y_part,
            sign,
        ));
    }
    Ok(logspace::sum(&terms).scale_ln(spec.ln_normalizing_constant(big_m) - r * y))
}

/// `h^{(k)}(y)`, the exact k-th derivative including the constant `c`.
pub fn generator_derivative(spec: &GeneratorSpec, big_m: usize, k: usize, y: f64) -> Result<f64> {
    Ok(ln_generator_derivative(spec, big_m, k, y)?.value())
}

fn check_radial_args(a: f64, b: f64) -> Result<()> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(ShapeError::Domain(format!("radial integral needs a > 0, got {a}")));
    }
    if !(b >= 0.0) || !b.is_finite() {
        return Err(ShapeError::Domain(format!("radial integral needs b >= 0, got {b}")));
    }
    Ok(())
}

/// `∫_0^∞ r^{M+2t−1} h^{(2t)}(r²a + b) dr` in signed log form.
///
/// Integer τ uses the closed binomial expansion; other τ fall back to
/// quadrature.
pub fn ln_radial_integral(
    spec: &GeneratorSpec,
    big_m: usize,
    t: usize,
    a: f64,
    b: f64,
) -> Result<SignedLog> {
    check_dimension(big_m)?;
    check_radial_args(a, b)?;
    let Some(tau) = spec.integer_tau() else {
        return Ok(SignedLog::from_value(
            radial_integral_quadrature(spec, big_m, t, a, b, &QuadratureOptions::default())?,
        ));
    };
    let r = spec.rate;
    let beta = r * b;
    let half = big_m as f64 / 2.0 + t as f64;
    let q = radial_polynomial(tau, t, beta, half);
    Ok(SignedLog::from_value(q).scale_ln(
        spec.ln_normalizing_constant(big_m)
            + (2.0 * t as f64 - tau as f64 + 1.0) * r.ln()
            - beta
            - half * (r * a).ln()
            - std::f64::consts::LN_2
            + ln_gamma(half),
    ))
}

/// `Σ_j (−1)^j C(2t,j) (τ−1)_{(j)} Σ_l C(q,l) β^{q−l} (half)_l`, `q = τ−1−j`.
fn radial_polynomial(tau: u32, t: usize, beta: f64, half: f64) -> f64 {
    let top = (tau as usize - 1).min(2 * t);
    let mut q_total = 0.0;
    for j in 0..=top {
        let q = tau as usize - 1 - j;
        let mut inner = 0.0;
        let mut rising = 1.0;
        for l in 0..=q {
            if l > 0 {
                rising *= half + (l - 1) as f64;
            }
            inner += ln_binomial(q, l).exp() * beta.powi((q - l) as i32) * rising;
        }
        let sign = if j % 2 == 1 { -1.0 } else { 1.0 };
        q_total += sign
            * ln_binomial(2 * t, j).exp()
            * falling_factorial(tau as f64 - 1.0, j)
            * inner;
    }
    q_total
}

/// Plain value of [`ln_radial_integral`].
pub fn radial_integral(spec: &GeneratorSpec, big_m: usize, t: usize, a: f64, b: f64) -> Result<f64> {
    Ok(ln_radial_integral(spec, big_m, t, a, b)?.value())
}

/// Adaptive quadrature of the radial integral, used to cross-check the
/// closed forms.
pub fn radial_integral_quadrature(
    spec: &GeneratorSpec,
    big_m: usize,
    t: usize,
    a: f64,
    b: f64,
    opts: &QuadratureOptions,
) -> Result<f64> {
    check_dimension(big_m)?;
    check_radial_args(a, b)?;
    let k = 2 * t;
    let r = spec.rate;
    let power = (big_m + 2 * t - 1) as f64;
    // h^{(k)} without c and e^{−Rb}: everything is O(Γ(M/2 + t)) after this
    let shift = spec.ln_normalizing_constant(big_m) - r * b;
    let half = big_m as f64 / 2.0 + t as f64;
    let ln_offset =
        ln_gamma(half) - half * (r * a).ln() + (2.0 * t as f64 - spec.tau + 1.0) * r.ln();
    let integrand = |x: f64| {
        if x == 0.0 {
            return 0.0;
        }
        let y = x * x * a + b;
        match ln_generator_derivative(spec, big_m, k, y) {
            Ok(d) => d
                .scale_ln(power * x.ln() - shift - ln_offset)
                .value(),
            Err(_) => f64::NAN,
        }
    };
    let res = integrate_semi_infinite(integrand, 1.0 / (r * a).sqrt(), opts)?;
    if res.value.is_nan() {
        return Err(ShapeError::Numerical(
            "radial integrand is singular at the origin".into(),
        ));
    }
    Ok(res.value * (shift + ln_offset).exp())
}

/// `∫_0^∞ r^{M−1} h(r²) dr = Γ(M/2) / (2π^{M/2})` for any normalized generator.
pub fn central_radial_constant(big_m: usize) -> f64 {
    ln_central_radial_constant(big_m).exp()
}

pub fn ln_central_radial_constant(big_m: usize) -> f64 {
    let half = big_m as f64 / 2.0;
    ln_gamma(half) - std::f64::consts::LN_2 - half * PI.ln()
}

/// Quadrature of `∫_0^∞ r^{M−1} h(r²) dr` for a specific generator.
pub fn central_radial_quadrature(spec: &GeneratorSpec, big_m: usize) -> Result<f64> {
    check_dimension(big_m)?;
    let ln_c = ln_central_radial_constant(big_m);
    let power = (big_m - 1) as f64;
    let integrand = |x: f64| {
        if x == 0.0 {
            return 0.0;
        }
        ln_generator_value(spec, big_m, x * x)
            .map(|h| h.scale_ln(power * x.ln() - ln_c).value())
            .unwrap_or(f64::NAN)
    };
    let scale = ((spec.tau - 1.0 + big_m as f64 / 2.0) / spec.rate).sqrt();
    let res = integrate_semi_infinite(integrand, scale, &QuadratureOptions::default())?;
    Ok(res.value * ln_c.exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn gaussian_value_examples() {
        let g = GeneratorSpec::gaussian();
        assert!(rel(generator_value(&g, 2, 0.0).unwrap(), 1.0 / (2.0 * PI)) < 1e-14);
        let y: f64 = 3.7;
        let expected = (2.0 * PI).powf(-3.0) * (-y / 2.0).exp();
        assert!(rel(generator_value(&g, 6, y).unwrap(), expected) < 1e-13);
    }

    #[test]
    fn exponential_ratio_and_zero() {
        let k = GeneratorSpec::kotz(1.0, 1.7).unwrap();
        let h0 = generator_value(&k, 4, 0.0).unwrap();
        assert!(rel(generator_value(&k, 4, 2.0).unwrap() / h0, (-3.4f64).exp()) < 1e-13);
        let k2 = GeneratorSpec::kotz(2.0, 0.5).unwrap();
        assert_eq!(generator_value(&k2, 4, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn invalid_specs() {
        assert!(GeneratorSpec::kotz(0.5, 1.0).is_err());
        assert!(GeneratorSpec::kotz(2.0, 0.0).is_err());
        assert!(generator_value(&GeneratorSpec::gaussian(), 2, -1.0).is_err());
    }

    #[test]
    fn derivative_examples() {
        let g = GeneratorSpec::gaussian();
        for k in 0..5 {
            let d = generator_derivative(&g, 4, k, 1.1).unwrap();
            let expected = (-0.5f64).powi(k as i32) * generator_value(&g, 4, 1.1).unwrap();
            assert!(rel(d, expected) < 1e-13);
        }
        let k2 = GeneratorSpec::kotz(2.0, 0.5).unwrap();
        let c = k2.ln_normalizing_constant(4).exp();
        let y = 1.3;
        let expected = c * (1.0 - 0.5 * y) * (-0.5 * y).exp();
        assert!(rel(generator_derivative(&k2, 4, 1, y).unwrap(), expected) < 1e-13);
        // integer τ is smooth at 0; non-integer τ is not
        assert!(generator_derivative(&k2, 4, 3, 0.0).is_ok());
        let frac = GeneratorSpec::kotz(1.5, 0.5).unwrap();
        assert!(generator_derivative(&frac, 4, 1, 0.0).is_err());
    }

    #[test]
    fn radial_gaussian_examples() {
        let g = GeneratorSpec::gaussian();
        assert!(rel(radial_integral(&g, 2, 0, 1.0, 0.0).unwrap(), 1.0 / (2.0 * PI)) < 1e-14);
        let v0 = radial_integral(&g, 6, 3, 1.4, 0.0).unwrap();
        let vb = radial_integral(&g, 6, 3, 1.4, 2.5).unwrap();
        assert!(rel(vb, (-1.25f64).exp() * v0) < 1e-13);
    }

    #[test]
    fn radial_kotz2_against_quadrature() {
        let k2 = GeneratorSpec::kotz(2.0, 0.5).unwrap();
        let closed = radial_integral(&k2, 10, 0, 1.0, 2.0).unwrap();
        let quad =
            radial_integral_quadrature(&k2, 10, 0, 1.0, 2.0, &QuadratureOptions::default()).unwrap();
        assert!(rel(closed, quad) < 1e-8, "{closed} vs {quad}");
    }

    #[test]
    fn central_constant_examples() {
        assert!(rel(central_radial_constant(2), 1.0 / (2.0 * PI)) < 1e-14);
        assert!(rel(central_radial_constant(10), 24.0 / (2.0 * PI.powi(5))) < 1e-13);
        for spec in [
            GeneratorSpec::gaussian(),
            GeneratorSpec::kotz(2.0, 0.5).unwrap(),
            GeneratorSpec::kotz(3.0, 1.3).unwrap(),
        ] {
            let q = central_radial_quadrature(&spec, 10).unwrap();
            assert!(rel(q, central_radial_constant(10)) < 1e-10);
        }
    }
}
