//! Samplers for matrix elliptical laws and uniform Stiefel matrices, and the
//! Monte Carlo oracles built on them.
//!
//! Draws use `X = μ + r·Σ^{1/2} U Θ^{1/2}` with `U` uniform on the unit sphere
//! and `r²` Gamma distributed, which is exact for every Kotz generator.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::densities::{Covariance, ModelSpec};
use crate::error::{Result, ShapeError};
use crate::generators::GeneratorSpec;
use crate::geometry::{
    angle_domain, extract_shape, helmert_submatrix, pd_sqrt, LandmarkConfiguration,
    ShapeCoordinates,
};
use crate::zonal::{
    ln_multivariate_gamma, partitions_of, symmetric_eigenvalues, zonal_polynomial,
    gen_pochhammer,
};

pub type RngSeed = u64;

/// The generator used everywhere in the crate: identical seeds give
/// bit-identical streams.
pub fn seeded_rng(seed: RngSeed) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn standard_normal_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn radial_law(generator: &GeneratorSpec, dimension: usize) -> Result<Gamma<f64>> {
    let shape = generator.tau() - 1.0 + dimension as f64 / 2.0;
    Gamma::new(shape, 1.0 / generator.rate())
        .map_err(|e| ShapeError::Domain(format!("radial law: {e}")))
}

/// One draw of `r·U` with `U` uniform on the sphere in `rows·cols`
/// dimensions and `r²` from the Kotz radial law of that dimension.
fn spherical_draw<R: Rng>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    radial: &Gamma<f64>,
) -> DMatrix<f64> {
    let mut g = standard_normal_matrix(rng, rows, cols);
    let norm = g.norm();
    let r = radial.sample(rng).sqrt();
    g *= r / norm;
    g
}

/// i.i.d. draws of the N×K matrix `X ~ E(μ_X, Σ_X, Θ, h)` with `h` a Kotz
/// generator in dimension NK.
pub fn sample_elliptical(
    mu_x: &DMatrix<f64>,
    sigma_x: &DMatrix<f64>,
    theta: &DMatrix<f64>,
    generator: &GeneratorSpec,
    count: usize,
    seed: RngSeed,
) -> Result<Vec<LandmarkConfiguration>> {
    let (n, k) = mu_x.shape();
    if sigma_x.shape() != (n, n) || theta.shape() != (k, k) {
        return Err(ShapeError::Dimension(format!(
            "Σ_X must be {n}x{n} and Θ {k}x{k}"
        )));
    }
    let left = pd_sqrt(sigma_x)?;
    let right = pd_sqrt(theta)?;
    let radial = radial_law(generator, n * k)?;
    let mut rng = seeded_rng(seed);
    (0..count)
        .map(|_| {
            let u = spherical_draw(&mut rng, n, k, &radial);
            LandmarkConfiguration::new(mu_x + &left * u * &right)
        })
        .collect()
}

/// Draws of the Helmertized configuration `Y` ((N−1)×K) under `spec`, the
/// generator acting in dimension M = (N−1)K.
pub fn sample_helmertized(spec: &ModelSpec, count: usize, seed: RngSeed) -> Result<Vec<DMatrix<f64>>> {
    let dims = spec.dimensions();
    let left = match spec.covariance() {
        Covariance::Isotropic(s2) => DMatrix::identity(dims.rows(), dims.rows()) * s2.sqrt(),
        Covariance::Full(sigma) => pd_sqrt(sigma)?,
    };
    let right = match spec.theta() {
        None => DMatrix::identity(dims.dims, dims.dims),
        Some(th) => pd_sqrt(th)?,
    };
    let radial = radial_law(&spec.generator(), dims.big_m)?;
    let mut rng = seeded_rng(seed);
    Ok((0..count)
        .map(|_| {
            let u = spherical_draw(&mut rng, dims.rows(), dims.dims, &radial);
            spec.mu() + &left * u * &right
        })
        .collect())
}

/// Landmark configurations `X = L′Y` whose Helmertized form follows `spec`.
pub fn sample_configurations(
    spec: &ModelSpec,
    count: usize,
    seed: RngSeed,
) -> Result<Vec<LandmarkConfiguration>> {
    let l = helmert_submatrix(spec.dimensions().landmarks)?;
    sample_helmertized(spec, count, seed)?
        .into_iter()
        .map(|y| LandmarkConfiguration::new(l.transpose() * y))
        .collect()
}

/// Shape coordinates of draws from `spec` (extracted with its Θ).
pub fn sample_shapes(spec: &ModelSpec, count: usize, seed: RngSeed) -> Result<Vec<ShapeCoordinates>> {
    sample_configurations(spec, count, seed)?
        .iter()
        .map(|x| extract_shape(x, spec.theta(), spec.mode()))
        .collect()
}

/// Uniform draws on the Stiefel manifold of s×m matrices with orthonormal
/// rows.
pub fn sample_stiefel_uniform(
    s: usize,
    m: usize,
    count: usize,
    seed: RngSeed,
) -> Result<Vec<DMatrix<f64>>> {
    if s == 0 || s > m {
        return Err(ShapeError::Dimension(format!(
            "Stiefel sampling needs 1 <= s <= m, got s={s}, m={m}"
        )));
    }
    let mut rng = seeded_rng(seed);
    Ok((0..count).map(|_| stiefel_draw(&mut rng, s, m)).collect())
}

fn stiefel_draw<R: Rng>(rng: &mut R, s: usize, m: usize) -> DMatrix<f64> {
    let g = standard_normal_matrix(rng, m, s);
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..s {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q.transpose()
}

/// ln Vol(V_{s,m}) = ln[2^s π^{sm/2} / Γ_s(m/2)].
pub fn ln_stiefel_volume(s: usize, m: usize) -> Result<f64> {
    let sf = s as f64;
    Ok(sf * std::f64::consts::LN_2 + sf * m as f64 / 2.0 * std::f64::consts::PI.ln()
        - ln_multivariate_gamma(s, m as f64 / 2.0)?)
}

/// `∫_{V_{s,m}} (tr AH)^{2t} (dH) = Vol · (½)_t Σ_{κ⊢t} C_κ(A′A)/(m/2)_κ`
/// for an m×s matrix `A`.
pub fn stiefel_moment_closed_form(a: &DMatrix<f64>, t: usize, m: usize) -> Result<f64> {
    let s = a.ncols();
    if a.nrows() != m {
        return Err(ShapeError::Dimension(format!("A must be {m}x{s}")));
    }
    let eigs = symmetric_eigenvalues(&(a.transpose() * a))?;
    let half_t: f64 = (0..t).map(|i| 0.5 + i as f64).product();
    let series: f64 = partitions_of(t)
        .iter()
        .filter(|k| k.len() <= s)
        .map(|k| zonal_polynomial(k, &eigs) / gen_pochhammer(m as f64 / 2.0, k))
        .sum();
    Ok(ln_stiefel_volume(s, m)?.exp() * half_t * series)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub count: usize,
}

impl McEstimate {
    fn from_samples(values: impl Iterator<Item = f64>, scale: f64) -> Self {
        let (mut n, mut mean, mut m2) = (0usize, 0.0, 0.0);
        for v in values {
            n += 1;
            let delta = v - mean;
            mean += delta / n as f64;
            m2 += delta * (v - mean);
        }
        let var = if n > 1 { m2 / (n - 1) as f64 } else { 0.0 };
        McEstimate {
            estimate: mean * scale,
            std_error: (var / n as f64).sqrt() * scale,
            count: n,
        }
    }

    /// |estimate − target| in standard errors.
    pub fn z_score(&self, target: f64) -> f64 {
        (self.estimate - target).abs() / self.std_error.max(f64::MIN_POSITIVE)
    }
}

/// Monte Carlo estimate of `Vol(V_{s,m}) · E[(tr AH)^power]`.
pub fn mc_stiefel_moment(
    a: &DMatrix<f64>,
    power: u32,
    m: usize,
    count: usize,
    seed: RngSeed,
) -> Result<McEstimate> {
    let s = a.ncols();
    if a.nrows() != m {
        return Err(ShapeError::Dimension(format!("A must be {m}x{s}")));
    }
    if s > m {
        return Err(ShapeError::Dimension("need s <= m".into()));
    }
    let volume = ln_stiefel_volume(s, m)?.exp();
    let mut rng = seeded_rng(seed);
    let at = a.transpose();
    let values = (0..count).map(|_| {
        let h = stiefel_draw(&mut rng, s, m);
        // tr(AH) = Σ_ij A_ji H_ij
        let tr = at.component_mul(&h).sum();
        tr.powi(power as i32)
    });
    Ok(McEstimate::from_samples(values, volume))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellCheck {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub observed: usize,
    pub expected: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityCheck {
    pub cells: Vec<CellCheck>,
    pub max_abs_z: f64,
    /// Draws outside every cell (boundary ties); should be 0.
    pub unbinned: usize,
}

/// Fixed product Gauss–Legendre rule (8 nodes per axis) over a box.
fn cell_integral<F: FnMut(&[f64]) -> f64>(lower: &[f64], upper: &[f64], f: &mut F) -> f64 {
    const NODES: [f64; 4] = [
        0.183_434_642_495_649_8,
        0.525_532_409_916_329,
        0.796_666_477_413_626_7,
        0.960_289_856_497_536_3,
    ];
    const WEIGHTS: [f64; 4] = [
        0.362_683_783_378_362,
        0.313_706_645_877_887_3,
        0.222_381_034_453_374_5,
        0.101_228_536_290_376_3,
    ];
    let dim = lower.len();
    let mut idx = vec![0usize; dim];
    let mut point = vec![0.0; dim];
    let mut total = 0.0;
    loop {
        let mut weight = 1.0;
        for d in 0..dim {
            let half = 0.5 * (upper[d] - lower[d]);
            let mid = 0.5 * (upper[d] + lower[d]);
            let node = idx[d] % 4;
            let sign = if idx[d] < 4 { -1.0 } else { 1.0 };
            point[d] = mid + sign * half * NODES[node];
            weight *= WEIGHTS[node] * half;
        }
        total += weight * f(&point);
        let mut d = 0;
        loop {
            if d == dim {
                return total;
            }
            idx[d] += 1;
            if idx[d] < 8 {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

/// Simulates shapes under `spec`, bins their angles on a tensor grid with
/// `cells_per_axis` cells per angle and compares each count with the
/// integrated analytic density `density(u)`.
pub fn mc_density_check<F>(
    spec: &ModelSpec,
    mut density: F,
    cells_per_axis: usize,
    count: usize,
    seed: RngSeed,
) -> Result<DensityCheck>
where
    F: FnMut(&[f64]) -> f64,
{
    let dims = spec.dimensions();
    let domain = angle_domain(dims, spec.mode());
    let m = domain.len();
    if m == 0 || m > 3 || cells_per_axis == 0 {
        return Err(ShapeError::Dimension(
            "density checks need 1 to 3 angles and at least one cell".into(),
        ));
    }
    let total_cells = cells_per_axis.pow(m as u32);
    let mut counts = vec![0usize; total_cells];
    let mut unbinned = 0;
    for s in sample_shapes(spec, count, seed)? {
        let mut flat = 0;
        let mut ok = true;
        for (d, &(lo, hi)) in domain.iter().enumerate() {
            let u = s.angles()[d];
            let pos = ((u - lo) / (hi - lo) * cells_per_axis as f64).floor();
            if !(0.0..cells_per_axis as f64).contains(&pos) {
                ok = false;
                break;
            }
            flat = flat * cells_per_axis + pos as usize;
        }
        if ok {
            counts[flat] += 1;
        } else {
            unbinned += 1;
        }
    }
    let mut cells = Vec::with_capacity(total_cells);
    let mut max_abs_z: f64 = 0.0;
    for (flat, &observed) in counts.iter().enumerate() {
        let mut rem = flat;
        let mut lower = vec![0.0; m];
        let mut upper = vec![0.0; m];
        for d in (0..m).rev() {
            let i = rem % cells_per_axis;
            rem /= cells_per_axis;
            let (lo, hi) = domain[d];
            let w = (hi - lo) / cells_per_axis as f64;
            lower[d] = lo + i as f64 * w;
            upper[d] = lower[d] + w;
        }
        let expected = count as f64 * cell_integral(&lower, &upper, &mut density);
        let z = (observed as f64 - expected) / expected.max(1e-12).sqrt();
        max_abs_z = max_abs_z.max(z.abs());
        cells.push(CellCheck {
            lower,
            upper,
            observed,
            expected,
            z,
        });
    }
    Ok(DensityCheck {
        cells,
        max_abs_z,
        unbinned,
    })
}

/// Pearson two-sample homogeneity test on paired histograms; cells empty in
/// both samples are dropped. Returns (statistic, df, p-value).
pub fn two_sample_chi_square(a: &[usize], b: &[usize]) -> Result<(f64, usize, f64)> {
    if a.len() != b.len() {
        return Err(ShapeError::Dimension("histograms differ in length".into()));
    }
    let na: f64 = a.iter().sum::<usize>() as f64;
    let nb: f64 = b.iter().sum::<usize>() as f64;
    let total = na + nb;
    let mut stat = 0.0;
    let mut used = 0;
    for (&x, &y) in a.iter().zip(b) {
        let cell = (x + y) as f64;
        if cell == 0.0 {
            continue;
        }
        used += 1;
        let ea = cell * na / total;
        let eb = cell * nb / total;
        stat += (x as f64 - ea).powi(2) / ea + (y as f64 - eb).powi(2) / eb;
    }
    if used < 2 {
        return Err(ShapeError::Domain("need at least two nonempty cells".into()));
    }
    let df = used - 1;
    Ok((stat, df, chi_square_sf(stat, df as f64)?))
}

/// Upper tail of the χ² distribution.
pub fn chi_square_sf(x: f64, df: f64) -> Result<f64> {
    let dist = ChiSquared::new(df).map_err(|e| ShapeError::Domain(format!("χ²: {e}")))?;
    Ok(dist.sf(x.max(0.0)))
}

/// Two-sample Kolmogorov–Smirnov statistic and its asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(ShapeError::Domain("KS test needs nonempty samples".into()));
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let en = (n * m / (n + m)).sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    Ok((d, kolmogorov_sf(lambda)))
}

/// `Q_KS(λ) = 2 Σ_{j≥1} (−1)^{j−1} e^{−2j²λ²}`.
fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=200 {
        let jf = j as f64;
        let term = (-2.0 * jf * jf * lambda * lambda).exp();
        sum += if j % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}
