//! Self-check suites: zonal identities, Stiefel moments, density
//! normalization and invariance. Used by the `verify` command and the
//! acceptance tests.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::densities::{central_shape_logdensity, model_shape_logdensity, shape_logdensity, Covariance, ModelSpec};
use crate::error::{Result, ShapeError};
use crate::generators::GeneratorSpec;
use crate::geometry::{angle_domain, extract_shape, LandmarkConfiguration, ReflectionMode, ShapeCoordinates};
use crate::simulate::{ln_stiefel_volume, mc_stiefel_moment, seeded_rng, stiefel_moment_closed_form};
use crate::zonal::{partitions_of, symmetric_eigenvalues, zonal_polynomial, Partition, SeriesControl};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Zonal,
    Stiefel,
    Normalization,
    Invariance,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Zonal, Suite::Stiefel, Suite::Normalization, Suite::Invariance];
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::Zonal => "zonal",
            Suite::Stiefel => "stiefel",
            Suite::Normalization => "normalization",
            Suite::Invariance => "invariance",
        })
    }
}

impl FromStr for Suite {
    type Err = ShapeError;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.to_string() == s.to_ascii_lowercase())
            .ok_or_else(|| ShapeError::Unsupported(format!("unknown suite '{s}'")))
    }
}

/// One named comparison: `|value − target| ≤ tolerance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub target: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, value: f64, target: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            value,
            target,
            tolerance,
            passed: (value - target).abs() <= tolerance,
        }
    }

    /// Relative comparison against `target`.
    pub fn relative(name: impl Into<String>, value: f64, target: f64, tolerance: f64) -> Self {
        Self::new(name, value, target, tolerance * target.abs().max(f64::MIN_POSITIVE))
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<Vec<Check>> {
    match suite {
        Suite::Zonal => zonal_suite(seed),
        Suite::Stiefel => stiefel_suite(seed, 1_000_000),
        Suite::Normalization => normalization_suite(400),
        Suite::Invariance => invariance_suite(seed, 1000),
    }
}

fn random_symmetric(rng: &mut impl Rng, n: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    (&g + g.transpose()) * 0.5
}

/// Sum identity Σ_{κ⊢t} C_κ(A) = (tr A)^t for t ≤ 12 and homogeneity
/// C_κ(aA) = a^t C_κ(A), on a random symmetric 3×3 A.
pub fn zonal_suite(seed: u64) -> Result<Vec<Check>> {
    let mut rng = seeded_rng(seed);
    let a = random_symmetric(&mut rng, 3);
    let eigs = symmetric_eigenvalues(&a)?;
    let trace = a.trace();
    let scale = 1.7;
    let scaled: Vec<f64> = eigs.iter().map(|e| e * scale).collect();
    let mut checks = Vec::new();
    for t in 0..=12 {
        let parts: Vec<Partition> = partitions_of(t).into_iter().filter(|k| k.len() <= 3).collect();
        let sum: f64 = parts.iter().map(|k| zonal_polynomial(k, &eigs)).sum();
        // tr A can nearly cancel, so errors are measured against (Σ|λ|)^t
        let magnitude = eigs.iter().map(|e| e.abs()).sum::<f64>().powi(t as i32);
        checks.push(Check::new(format!("sum identity t={t}"), sum, trace.powi(t as i32), 1e-9 * magnitude));
        for k in &parts {
            let base = zonal_polynomial(k, &eigs);
            let lhs = zonal_polynomial(k, &scaled);
            let target = scale.powi(t as i32) * base;
            checks.push(Check::new(
                format!("homogeneity {:?}", k.parts()),
                lhs,
                target,
                1e-10 * target.abs().max(1e-300),
            ));
        }
    }
    Ok(checks)
}

/// Monte Carlo vs closed form for Stiefel moments, s=2, m=3: t=0 volume,
/// even powers 2t (t ≤ 3) and odd powers, all within 3 standard errors.
pub fn stiefel_suite(seed: u64, count: usize) -> Result<Vec<Check>> {
    let (s, m) = (2, 3);
    let mut rng = seeded_rng(seed);
    let a = DMatrix::from_fn(m, s, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut checks = Vec::new();
    let volume = ln_stiefel_volume(s, m)?.exp();
    let mc0 = mc_stiefel_moment(&a, 0, m, count, seed)?;
    checks.push(Check::relative("volume t=0", mc0.estimate, volume, 1e-12));
    for t in 1..=3u32 {
        let exact = stiefel_moment_closed_form(&a, t as usize, m)?;
        let even = mc_stiefel_moment(&a, 2 * t, m, count, seed.wrapping_add(t as u64))?;
        checks.push(Check::new(format!("power {}", 2 * t), even.estimate, exact, 3.0 * even.std_error));
        let odd = mc_stiefel_moment(&a, 2 * t - 1, m, count, seed.wrapping_add(100 + t as u64))?;
        checks.push(Check::new(format!("power {}", 2 * t - 1), odd.estimate, 0.0, 3.0 * odd.std_error));
    }
    Ok(checks)
}

/// Midpoint-rule integral of `density` (a density in the angles) over the
/// angle domain of the given dimensions, `cells` points per axis.
pub fn integrate_over_angles<F>(domain: &[(f64, f64)], cells: usize, mut density: F) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let m = domain.len();
    if m == 0 || cells == 0 {
        return Err(ShapeError::Dimension("need at least one angle and one cell".into()));
    }
    let widths: Vec<f64> = domain.iter().map(|(lo, hi)| (hi - lo) / cells as f64).collect();
    let cell_volume: f64 = widths.iter().product();
    let mut idx = vec![0usize; m];
    let mut point = vec![0.0; m];
    let mut total = 0.0;
    loop {
        for d in 0..m {
            point[d] = domain[d].0 + (idx[d] as f64 + 0.5) * widths[d];
        }
        total += density(&point)?;
        let mut d = 0;
        loop {
            if d == m {
                return Ok(total * cell_volume);
            }
            idx[d] += 1;
            if idx[d] < cells {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

/// Total mass of the shape density of `spec` over its angle domain.
pub fn normalization_integral(spec: &ModelSpec, cells: usize) -> Result<f64> {
    let dims = spec.dimensions();
    let mode = spec.mode();
    let ctrl = SeriesControl::default();
    integrate_over_angles(&angle_domain(dims, mode), cells, |u| {
        let w = ShapeCoordinates::from_angles(u, 1.0, dims, mode)?;
        Ok(model_shape_logdensity(spec, &w, &ctrl)?.log_density.exp())
    })
}

/// N=3, K=2 shape densities (Gaussian and Kotz τ=2, central and with a
/// small mean) integrate to 1 ± 1e−3.
pub fn normalization_suite(cells: usize) -> Result<Vec<Check>> {
    let mode = ReflectionMode::IncludesReflection;
    let means = [
        ("central", DMatrix::zeros(2, 2)),
        ("noncentral", DMatrix::from_row_slice(2, 2, &[0.6, 0.1, -0.3, 0.4])),
    ];
    let generators = [
        ("gaussian", GeneratorSpec::gaussian()),
        ("kotz2", GeneratorSpec::kotz(2.0, 0.5)?),
    ];
    let mut checks = Vec::new();
    for (gname, g) in generators {
        for (mname, mu) in &means {
            let spec = ModelSpec::isotropic(mu.clone(), 1.0, g, mode)?;
            let total = normalization_integral(&spec, cells)?;
            checks.push(Check::new(format!("{gname} {mname} mass"), total, 1.0, 1e-3));
        }
    }
    Ok(checks)
}

/// Central shape log-densities agree across Gaussian and Kotz generators
/// at `points` random shapes (N=4, K=2, anisotropic Σ), and shape
/// coordinates are unchanged by translation, scaling and rotation.
pub fn invariance_suite(seed: u64, points: usize) -> Result<Vec<Check>> {
    let mode = ReflectionMode::IncludesReflection;
    let mut rng = seeded_rng(seed);
    let (n, k) = (4usize, 2usize);
    let l = DMatrix::from_fn(n - 1, n - 1, |i, j| if i >= j { rng.sample::<f64, _>(StandardNormal) * 0.3 + if i == j { 1.0 } else { 0.0 } } else { 0.0 });
    let sigma = Covariance::Full(&l * l.transpose());
    let generators = [
        GeneratorSpec::gaussian(),
        GeneratorSpec::kotz(2.0, 0.5)?,
        GeneratorSpec::kotz(3.0, 0.5)?,
    ];
    let ctrl = SeriesControl::default();
    let mut worst: f64 = 0.0;
    let mut worst_closed: f64 = 0.0;
    let mut worst_coords: f64 = 0.0;
    for _ in 0..points {
        let x = LandmarkConfiguration::new(DMatrix::from_fn(n, k, |_, _| rng.sample::<f64, _>(StandardNormal)))?;
        let w = extract_shape(&x, None, mode)?;
        let closed = central_shape_logdensity(&sigma, &w, mode)?;
        let mut values = Vec::new();
        for g in generators {
            let spec = ModelSpec::new(DMatrix::zeros(n - 1, k), sigma.clone(), None, g, mode)?;
            values.push(shape_logdensity(&spec, &w, &ctrl)?.log_density);
        }
        for v in &values {
            worst = worst.max((v - values[0]).abs());
            worst_closed = worst_closed.max((v - closed).abs());
        }

        let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let rot = DMatrix::from_row_slice(2, 2, &[angle.cos(), -angle.sin(), angle.sin(), angle.cos()]);
        let shift = DMatrix::from_fn(1, k, |_, _| rng.sample::<f64, _>(StandardNormal));
        let moved = (x.data() * &rot) * 2.5 + DMatrix::from_fn(n, k, |_, j| shift[(0, j)]);
        let w2 = extract_shape(&LandmarkConfiguration::new(moved)?, None, mode)?;
        worst_coords = worst_coords.max((w.w() - w2.w()).amax());
    }
    Ok(vec![
        Check::new("central log-density spread across generators", worst, 0.0, 1e-9),
        Check::new("generic path vs central closed form", worst_closed, 0.0, 1e-9),
        Check::new("similarity invariance of W", worst_coords, 0.0, 1e-10),
    ])
}
