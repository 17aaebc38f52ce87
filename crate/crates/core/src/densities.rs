//! Noncentral elliptical QR size-and-shape and shape densities.
//!
//! Every density is returned as a natural log together with the diagnostics
//! of the zonal series it was summed from. The model is stated for the
//! Helmertized, Θ-whitened configuration `Y` with mean `μΘ^{−1/2}` and row
//! covariance `Σ`; the noncentrality enters only through the eigenvalues of
//! `W′Σ^{−1}μΘ^{−1}μ′Σ^{−1}W` (or the same with `T`).

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use std::f64::consts::{LN_2, PI};

use crate::error::{Result, ShapeError};
use crate::generators::{ln_generator_derivative, ln_radial_integral, GeneratorSpec};
use crate::geometry::{
    check_symmetric, log_polar_jacobian, numerical_rank, pd_inv_sqrt, Dimensions,
    ReflectionMode, ShapeCoordinates, SizeAndShape,
};
use crate::logspace::SignedLog;
use crate::zonal::{
    ln_multivariate_gamma, weighted_zonal_series, PochhammerTable, SeriesControl,
    SeriesDiagnostics,
};

/// Row covariance of the Helmertized configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    Isotropic(f64),
    Full(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    mu: DMatrix<f64>,
    covariance: Covariance,
    theta: Option<DMatrix<f64>>,
    generator: GeneratorSpec,
    mode: ReflectionMode,
    dims: Dimensions,
    mu_white: DMatrix<f64>,
    sigma_inv: Option<DMatrix<f64>>,
    ln_det_sigma: f64,
    trace_omega: f64,
    rank: usize,
}

impl ModelSpec {
    /// `mu` is the Helmertized mean ((N−1)×K); `theta = None` means Θ = I.
    pub fn new(
        mu: DMatrix<f64>,
        covariance: Covariance,
        theta: Option<DMatrix<f64>>,
        generator: GeneratorSpec,
        mode: ReflectionMode,
    ) -> Result<Self> {
        let dims = Dimensions::new(mu.nrows() + 1, mu.ncols())?;
        if mu.iter().any(|v| !v.is_finite()) {
            return Err(ShapeError::Domain("mean entries must be finite".into()));
        }
        let mu_white = match &theta {
            None => mu.clone(),
            Some(th) => {
                if th.nrows() != dims.dims || th.ncols() != dims.dims {
                    return Err(ShapeError::Dimension(format!(
                        "Θ must be {0}x{0}",
                        dims.dims
                    )));
                }
                &mu * pd_inv_sqrt(th)?
            }
        };
        let (sigma_inv, ln_det_sigma, trace_omega) = match &covariance {
            Covariance::Isotropic(s2) => {
                if !(*s2 > 0.0) || !s2.is_finite() {
                    return Err(ShapeError::Domain(format!("σ² must be positive, got {s2}")));
                }
                let m = dims.rows() as f64;
                (None, m * s2.ln(), mu_white.norm_squared() / s2)
            }
            Covariance::Full(sigma) => {
                if sigma.nrows() != dims.rows() {
                    return Err(ShapeError::Dimension(format!(
                        "Σ must be {0}x{0}",
                        dims.rows()
                    )));
                }
                check_symmetric(sigma, "Σ")?;
                let sym = (sigma + sigma.transpose()) * 0.5;
                let chol = sym
                    .cholesky()
                    .ok_or_else(|| ShapeError::Domain("Σ is not positive definite".into()))?;
                let ln_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
                let inv = chol.inverse();
                let omega_trace = (&inv * &mu_white * mu_white.transpose()).trace();
                (Some(inv), ln_det, omega_trace)
            }
        };
        let rank = numerical_rank(&mu_white);
        Ok(ModelSpec {
            mu,
            covariance,
            theta,
            generator,
            mode,
            dims,
            mu_white,
            sigma_inv,
            ln_det_sigma,
            trace_omega,
            rank,
        })
    }

    /// Σ = σ²I, Θ = I.
    pub fn isotropic(
        mu: DMatrix<f64>,
        sigma2: f64,
        generator: GeneratorSpec,
        mode: ReflectionMode,
    ) -> Result<Self> {
        Self::new(mu, Covariance::Isotropic(sigma2), None, generator, mode)
    }

    /// Replaces the numerically detected rank of μ.
    pub fn with_rank(mut self, p: usize) -> Result<Self> {
        if p > self.dims.rank {
            return Err(ShapeError::Domain(format!(
                "rank {p} exceeds min(N−1, K) = {}",
                self.dims.rank
            )));
        }
        self.rank = p;
        Ok(self)
    }

    pub fn mu(&self) -> &DMatrix<f64> {
        &self.mu
    }

    pub fn covariance(&self) -> &Covariance {
        &self.covariance
    }

    pub fn theta(&self) -> Option<&DMatrix<f64>> {
        self.theta.as_ref()
    }

    pub fn generator(&self) -> GeneratorSpec {
        self.generator
    }

    pub fn mode(&self) -> ReflectionMode {
        self.mode
    }

    pub fn dimensions(&self) -> Dimensions {
        self.dims
    }

    /// Rank p of μ.
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn trace_omega(&self) -> f64 {
        self.trace_omega
    }

    /// Ω = Σ^{−1} μ Θ^{−1} μ′.
    pub fn omega(&self) -> DMatrix<f64> {
        let mm = &self.mu_white * self.mu_white.transpose();
        match (&self.covariance, &self.sigma_inv) {
            (Covariance::Isotropic(s2), _) => mm / *s2,
            (_, Some(inv)) => inv * mm,
            _ => unreachable!("full covariance always stores its inverse"),
        }
    }

    /// Eigenvalues of `ΩΣ^{−1}ZZ′` via `B B′`, `B = Z′Σ^{−1}μΘ^{−1/2}`, and
    /// `tr Σ^{−1}ZZ′`.
    fn noncentral_inputs(&self, z: &DMatrix<f64>) -> (Vec<f64>, f64) {
        let (b, a) = match (&self.covariance, &self.sigma_inv) {
            (Covariance::Isotropic(s2), _) => {
                (z.transpose() * &self.mu_white / *s2, z.norm_squared() / s2)
            }
            (_, Some(inv)) => {
                let sz = inv * z;
                (sz.transpose() * &self.mu_white, (z.transpose() * sz).trace())
            }
            _ => unreachable!("full covariance always stores its inverse"),
        };
        if self.rank == 0 {
            return (Vec::new(), a);
        }
        let bb = &b * b.transpose();
        let eig = SymmetricEigen::new((&bb + bb.transpose()) * 0.5);
        (eig.eigenvalues.iter().map(|v| v.max(0.0)).collect(), a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityValue {
    pub log_density: f64,
    pub diagnostics: SeriesDiagnostics,
}

/// Multiplicative factor of a reflection-excluded density relative to the
/// reflection density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariantFactor {
    pub factor: f64,
    /// `t_KK` (and `w_KK`) may take either sign.
    pub last_diagonal_unrestricted: bool,
}

pub fn reflection_variant_factor(
    landmarks: usize,
    dims: usize,
    p: usize,
    mode: ReflectionMode,
) -> Result<VariantFactor> {
    let d = Dimensions::new(landmarks, dims)?;
    if p > d.rank {
        return Err(ShapeError::Domain(format!(
            "rank {p} exceeds min(N−1, K) = {}",
            d.rank
        )));
    }
    let same = VariantFactor {
        factor: 1.0,
        last_diagonal_unrestricted: false,
    };
    match mode {
        ReflectionMode::IncludesReflection => Ok(same),
        ReflectionMode::ExcludesReflection if !d.has_reflection_entry() => Ok(same),
        ReflectionMode::ExcludesReflection if p < dims => Ok(VariantFactor {
            factor: 0.5,
            last_diagonal_unrestricted: true,
        }),
        ReflectionMode::ExcludesReflection => Err(ShapeError::Unsupported(
            "reflection-excluded densities with a full-rank mean (p = K) have no halving rule"
                .into(),
        )),
    }
}

fn check_compatible(spec: &ModelSpec, dims: Dimensions, mode: ReflectionMode) -> Result<()> {
    if dims != spec.dims {
        return Err(ShapeError::Dimension(format!(
            "observation is {}x{}, model is {}x{}",
            dims.landmarks, dims.dims, spec.dims.landmarks, spec.dims.dims
        )));
    }
    if mode != spec.mode {
        return Err(ShapeError::Domain(
            "observation and model use different reflection modes".into(),
        ));
    }
    Ok(())
}

/// ln[2ⁿ π^{nK/2} / Γ_n(K/2)], the Stiefel volume.
fn ln_stiefel_volume(dims: Dimensions) -> Result<f64> {
    let n = dims.rank as f64;
    let k = dims.dims as f64;
    Ok(n * LN_2 + n * k / 2.0 * PI.ln() - ln_multivariate_gamma(dims.rank, k / 2.0)?)
}

/// Σ_i (K−i) ln|z_ii|.
fn ln_diagonal_product(z: &DMatrix<f64>, dims: Dimensions) -> Result<f64> {
    let mut acc = 0.0;
    for i in 0..dims.rank {
        let power = (dims.dims - 1 - i) as f64;
        if power > 0.0 {
            let d = z[(i, i)].abs();
            if d == 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            acc += power * d.ln();
        }
    }
    Ok(acc)
}

fn ln_variant(spec: &ModelSpec) -> Result<f64> {
    Ok(reflection_variant_factor(spec.dims.landmarks, spec.dims.dims, spec.rank, spec.mode)?
        .factor
        .ln())
}

/// Series `Σ_t d(t) Σ_κ C_κ(λ)/(K/2)_κ` for a degree weight `d`.
fn degree_series<F>(
    eigs: &[f64],
    k: usize,
    mut degree_weight: F,
    ctrl: &SeriesControl,
) -> Result<(SignedLog, SeriesDiagnostics)>
where
    F: FnMut(usize) -> Result<SignedLog>,
{
    let mut poch = PochhammerTable::new(k as f64 / 2.0);
    let mut cache: Vec<SignedLog> = Vec::new();
    let mut failure = None;
    let series = weighted_zonal_series(
        eigs,
        |t, kappa| {
            while cache.len() <= t {
                match degree_weight(cache.len()) {
                    Ok(w) => cache.push(w),
                    Err(e) => {
                        failure.get_or_insert(e);
                        cache.push(SignedLog::ZERO);
                    }
                }
            }
            let p = poch.get(kappa);
            SignedLog::new(cache[t].ln_abs - p.ln_abs, cache[t].sign * p.sign)
        },
        ctrl,
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok((series.value, series.diagnostics))
}

fn finish(sum: SignedLog, rest: f64, diagnostics: SeriesDiagnostics) -> Result<DensityValue> {
    if sum.sign < 0 {
        return Err(ShapeError::Numerical(
            "series summed to a negative density; raise --max-degree".into(),
        ));
    }
    Ok(DensityValue {
        log_density: sum.ln_abs + rest,
        diagnostics,
    })
}

fn ln_factorial(t: usize) -> f64 {
    ln_gamma(t as f64 + 1.0)
}

/// Log density of the QR size-and-shape `T`.
pub fn size_and_shape_logdensity(
    spec: &ModelSpec,
    t: &SizeAndShape,
    ctrl: &SeriesControl,
) -> Result<DensityValue> {
    check_compatible(spec, t.dimensions(), t.mode())?;
    let dims = spec.dims;
    let tm = t.matrix();
    let (eigs, a) = spec.noncentral_inputs(tm);
    let y = a + spec.trace_omega;
    let generator = spec.generator;
    let (sum, diagnostics) = degree_series(
        &eigs,
        dims.dims,
        |deg| {
            Ok(ln_generator_derivative(&generator, dims.big_m, 2 * deg, y)?
                .scale_ln(-ln_factorial(deg)))
        },
        ctrl,
    )?;
    let rest = ln_stiefel_volume(dims)? - dims.dims as f64 / 2.0 * spec.ln_det_sigma
        + ln_diagonal_product(tm, dims)?
        + ln_variant(spec)?;
    finish(sum, rest, diagnostics)
}

fn shape_prefactor(spec: &ModelSpec, w: &ShapeCoordinates) -> Result<f64> {
    Ok(log_polar_jacobian(w.angles())? + ln_diagonal_product(w.w(), spec.dims)? + ln_variant(spec)?)
}

/// Log shape density through the generic radial-integral series.
pub fn shape_logdensity(
    spec: &ModelSpec,
    w: &ShapeCoordinates,
    ctrl: &SeriesControl,
) -> Result<DensityValue> {
    check_compatible(spec, w.dimensions(), w.mode())?;
    let dims = spec.dims;
    let (eigs, a) = spec.noncentral_inputs(w.w());
    let b = spec.trace_omega;
    let generator = spec.generator;
    let (sum, diagnostics) = degree_series(
        &eigs,
        dims.dims,
        |deg| Ok(ln_radial_integral(&generator, dims.big_m, deg, a, b)?.scale_ln(-ln_factorial(deg))),
        ctrl,
    )?;
    let rest = ln_stiefel_volume(dims)? - dims.dims as f64 / 2.0 * spec.ln_det_sigma
        + shape_prefactor(spec, w)?;
    finish(sum, rest, diagnostics)
}

/// Closed-form Gaussian shape density with the Γ(M/2+t)/(t! aᵗ) weights.
pub fn gaussian_shape_logdensity(
    spec: &ModelSpec,
    w: &ShapeCoordinates,
    ctrl: &SeriesControl,
) -> Result<DensityValue> {
    if !spec.generator.is_gaussian() {
        return Err(ShapeError::Unsupported(
            "the Gaussian closed form needs τ = 1, R = ½".into(),
        ));
    }
    check_compatible(spec, w.dimensions(), w.mode())?;
    let dims = spec.dims;
    let half_m = dims.big_m as f64 / 2.0;
    let (eigs, a) = spec.noncentral_inputs(w.w());
    let halved: Vec<f64> = eigs.iter().map(|v| v / 2.0).collect();
    let ln_a = a.ln();
    let (sum, diagnostics) = degree_series(
        &halved,
        dims.dims,
        |deg| {
            let t = deg as f64;
            Ok(SignedLog::positive(ln_gamma(half_m + t) - ln_factorial(deg) - t * ln_a))
        },
        ctrl,
    )?;
    let n = dims.rank as f64;
    let k = dims.dims as f64;
    let constant = (n - 1.0) * LN_2 + (n * k - dims.big_m as f64) / 2.0 * PI.ln()
        - ln_multivariate_gamma(dims.rank, k / 2.0)?
        - k / 2.0 * spec.ln_det_sigma;
    let rest = constant - spec.trace_omega / 2.0 - half_m * ln_a + shape_prefactor(spec, w)?;
    finish(sum, rest, diagnostics)
}

/// Kotz shape density. τ = 2 and τ = 3 with isotropic Σ use the expanded
/// closed forms; other integer τ (or full Σ) go through the generic series.
pub fn kotz_shape_logdensity(
    spec: &ModelSpec,
    w: &ShapeCoordinates,
    ctrl: &SeriesControl,
) -> Result<DensityValue> {
    let tau = match spec.generator.integer_tau() {
        Some(tau) if tau >= 1 => tau,
        _ => {
            return Err(ShapeError::Unsupported(format!(
                "Kotz shape density needs an integer τ >= 1, got {}",
                spec.generator.tau()
            )))
        }
    };
    match (tau, &spec.covariance) {
        (2 | 3, Covariance::Isotropic(s2)) => kotz_isotropic(spec, *s2, tau, w, ctrl),
        _ => shape_logdensity(spec, w, ctrl),
    }
}

fn kotz_isotropic(
    spec: &ModelSpec,
    sigma2: f64,
    tau: u32,
    w: &ShapeCoordinates,
    ctrl: &SeriesControl,
) -> Result<DensityValue> {
    check_compatible(spec, w.dimensions(), w.mode())?;
    let dims = spec.dims;
    let r = spec.generator.rate();
    let big_m = dims.big_m as f64;
    let half_m = big_m / 2.0;
    let beta = r * spec.mu_white.norm_squared() / sigma2;
    let wm = w.w();
    let b = wm.transpose() * &spec.mu_white;
    let bb = &b * b.transpose() * (r / sigma2);
    let eigs: Vec<f64> = if spec.rank == 0 {
        Vec::new()
    } else {
        SymmetricEigen::new((&bb + bb.transpose()) * 0.5)
            .eigenvalues
            .iter()
            .map(|v| v.max(0.0))
            .collect()
    };
    let (sum, diagnostics) = degree_series(
        &eigs,
        dims.dims,
        |deg| {
            let t = deg as f64;
            let g0 = ln_gamma(half_m + t);
            let braces = if tau == 2 {
                // (β − 2t)Γ(M/2+t) + Γ(M/2+t+1)
                SignedLog::from_value(beta - 2.0 * t + half_m + t).scale_ln(g0)
            } else {
                // Γ(M/2+t+2) + 2(β−2t)Γ(M/2+t+1) + ((β−2t)² − 2t)Γ(M/2+t)
                let g1 = half_m + t;
                let g2 = g1 * (g1 + 1.0);
                let d = beta - 2.0 * t;
                SignedLog::from_value(g2 + 2.0 * d * g1 + d * d - 2.0 * t).scale_ln(g0)
            };
            Ok(braces.scale_ln(-ln_factorial(deg)))
        },
        ctrl,
    )?;
    let n = dims.rank as f64;
    let k = dims.dims as f64;
    let prefactor = if tau == 2 {
        n * LN_2 - big_m.ln()
    } else {
        (n + 1.0) * LN_2 - big_m.ln() - (big_m + 2.0).ln()
    };
    let constant = prefactor + (n * k - big_m) / 2.0 * PI.ln()
        - ln_multivariate_gamma(dims.rank, k / 2.0)?;
    let rest = constant - beta + shape_prefactor(spec, w)?;
    finish(sum, rest, diagnostics)
}

/// Central shape density with general Σ; free of the generator.
pub fn central_shape_logdensity(
    sigma: &Covariance,
    w: &ShapeCoordinates,
    mode: ReflectionMode,
) -> Result<f64> {
    let dims = w.dimensions();
    let spec = ModelSpec::new(
        DMatrix::zeros(dims.rows(), dims.dims),
        sigma.clone(),
        None,
        GeneratorSpec::gaussian(),
        mode,
    )?;
    check_compatible(&spec, dims, w.mode())?;
    let (_, a) = spec.noncentral_inputs(w.w());
    let half_m = dims.big_m as f64 / 2.0;
    let n = dims.rank as f64;
    let k = dims.dims as f64;
    Ok((n - 1.0) * LN_2 + (n * k - dims.big_m as f64) / 2.0 * PI.ln() + ln_gamma(half_m)
        - ln_multivariate_gamma(dims.rank, k / 2.0)?
        - k / 2.0 * spec.ln_det_sigma
        - half_m * a.ln()
        + shape_prefactor(&spec, w)?)
}

/// Dispatches to the specialised closed form for the model's generator.
pub fn model_shape_logdensity(
    spec: &ModelSpec,
    w: &ShapeCoordinates,
    ctrl: &SeriesControl,
) -> Result<DensityValue> {
    if spec.generator.is_gaussian() {
        gaussian_shape_logdensity(spec, w, ctrl)
    } else if spec.generator.integer_tau().is_some() {
        kotz_shape_logdensity(spec, w, ctrl)
    } else {
        shape_logdensity(spec, w, ctrl)
    }
}
