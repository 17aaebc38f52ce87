//! QR shape coordinates.
//!
//! A raw landmark matrix `X` (N×K) is reduced to shape in four steps:
//! Helmert centring `L X`, whitening by `Θ^{-1/2}`, the decomposition
//! `Y = T H` with `T` lower triangular and `H` row-orthonormal, and finally
//! generalized polar coordinates of `vech T`.
//!
//! `vech` always lists the structurally nonzero entries of a lower-triangular
//! (N−1)×n matrix column by column. The spherical convention is
//! `x_i = r cos θ_i ∏_{j<i} sin θ_j` for `i ≤ m` and
//! `x_{m+1} = r ∏_{j≤m} sin θ_j`, so the angle `θ_i` (i < m) lives in `[0, π]`
//! and the last angle lives in `(−π, π]`. Diagonal entries that must be
//! positive shrink the corresponding interval.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{Result, ShapeError};

/// Relative pivot tolerance used for rank decisions on `Y` and on `μ`.
pub const RANK_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ReflectionMode {
    /// `H ∈ O(K)`; every diagonal entry of `T` is nonnegative.
    IncludesReflection,
    /// `H ∈ SO(K)`; `t_KK` carries the reflection and is unrestricted.
    ExcludesReflection,
}

/// Dimension bookkeeping shared by every object derived from an N×K
/// landmark configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dimensions {
    /// Landmark count N.
    pub landmarks: usize,
    /// Ambient dimension K.
    pub dims: usize,
    /// n = min(N−1, K), the column count of `T`.
    pub rank: usize,
    /// M = (N−1)K.
    pub big_m: usize,
    /// m, the number of polar angles.
    pub angles: usize,
}

impl Dimensions {
    pub fn new(landmarks: usize, dims: usize) -> Result<Self> {
        if landmarks < 2 {
            return Err(ShapeError::Dimension(format!(
                "need at least 2 landmarks, got {landmarks}"
            )));
        }
        if dims < 1 {
            return Err(ShapeError::Dimension("need at least 1 dimension".into()));
        }
        let rows = landmarks - 1;
        let rank = rows.min(dims);
        let big_m = rows * dims;
        let angles = big_m - rank * dims + rank * (rank + 1) / 2 - 1;
        Ok(Dimensions {
            landmarks,
            dims,
            rank,
            big_m,
            angles,
        })
    }

    /// N − 1, the row count of every Helmertized matrix.
    pub fn rows(&self) -> usize {
        self.landmarks - 1
    }

    /// Number of structurally nonzero entries of `T` (= m + 1).
    pub fn vech_len(&self) -> usize {
        self.angles + 1
    }

    /// Position of `t_jj` inside `vech T` (0-based column `j`).
    pub fn diagonal_position(&self, j: usize) -> usize {
        let rows = self.rows();
        (0..j).map(|l| rows - l).sum()
    }

    /// Diagonal indices (0-based) whose entries must be strictly positive.
    pub fn positive_diagonals(&self, mode: ReflectionMode) -> Vec<usize> {
        let bound = match mode {
            ReflectionMode::IncludesReflection => self.rank,
            ReflectionMode::ExcludesReflection => self.rank.min(self.dims - 1),
        };
        (0..bound).collect()
    }

    /// Whether the two reflection modes give different coordinates.
    pub fn has_reflection_entry(&self) -> bool {
        self.rows() >= self.dims
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkConfiguration {
    data: DMatrix<f64>,
    dims: Dimensions,
}

impl LandmarkConfiguration {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        let dims = Dimensions::new(data.nrows(), data.ncols())?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(ShapeError::Domain("landmark entries must be finite".into()));
        }
        Ok(LandmarkConfiguration { data, dims })
    }

    /// Builds a configuration from row-major values (landmark by landmark).
    pub fn from_row_slice(landmarks: usize, dims: usize, values: &[f64]) -> Result<Self> {
        if values.len() != landmarks * dims {
            return Err(ShapeError::Dimension(format!(
                "expected {} values for {landmarks}x{dims}, got {}",
                landmarks * dims,
                values.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(landmarks, dims, values))
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn dimensions(&self) -> Dimensions {
        self.dims
    }
}

/// Lower-triangular QR size-and-shape `T`, (N−1)×n.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeAndShape {
    t: DMatrix<f64>,
    mode: ReflectionMode,
    dims: Dimensions,
}

impl SizeAndShape {
    /// Validates the triangular pattern and the sign constraints.
    pub fn new(t: DMatrix<f64>, dims: Dimensions, mode: ReflectionMode) -> Result<Self> {
        if t.nrows() != dims.rows() || t.ncols() != dims.rank {
            return Err(ShapeError::Dimension(format!(
                "T must be {}x{}, got {}x{}",
                dims.rows(),
                dims.rank,
                t.nrows(),
                t.ncols()
            )));
        }
        for i in 0..t.nrows() {
            for j in (i + 1)..t.ncols() {
                if t[(i, j)] != 0.0 {
                    return Err(ShapeError::Domain(format!(
                        "T must be lower triangular; t[{i},{j}] = {}",
                        t[(i, j)]
                    )));
                }
            }
        }
        for j in dims.positive_diagonals(mode) {
            if t[(j, j)] < 0.0 {
                return Err(ShapeError::Domain(format!(
                    "diagonal entry t[{j},{j}] = {} violates the sign convention",
                    t[(j, j)]
                )));
            }
        }
        Ok(SizeAndShape { t, mode, dims })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.t
    }

    pub fn mode(&self) -> ReflectionMode {
        self.mode
    }

    pub fn dimensions(&self) -> Dimensions {
        self.dims
    }

    pub fn vech(&self) -> Vec<f64> {
        vech(&self.t)
    }

    /// Centroid size ‖T‖_F.
    pub fn centroid_size(&self) -> f64 {
        self.t.norm()
    }
}

/// Unit-norm shape `W`, its polar angles and the centroid size `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeCoordinates {
    w: DMatrix<f64>,
    angles: Vec<f64>,
    size: f64,
    mode: ReflectionMode,
    dims: Dimensions,
}

impl ShapeCoordinates {
    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn size(&self) -> f64 {
        self.size
    }

    pub fn mode(&self) -> ReflectionMode {
        self.mode
    }

    pub fn dimensions(&self) -> Dimensions {
        self.dims
    }

    pub fn vech_w(&self) -> Vec<f64> {
        vech(&self.w)
    }

    /// Shape at a new angle vector (size kept), used for grid integration.
    pub fn from_angles(
        angles: &[f64],
        size: f64,
        dims: Dimensions,
        mode: ReflectionMode,
    ) -> Result<Self> {
        if angles.len() != dims.angles {
            return Err(ShapeError::Dimension(format!(
                "expected {} angles, got {}",
                dims.angles,
                angles.len()
            )));
        }
        if !(size > 0.0) {
            return Err(ShapeError::Domain("centroid size must be positive".into()));
        }
        let x = spherical_to_cartesian(angles, 1.0);
        let w = unvech(&x, dims);
        Ok(ShapeCoordinates {
            w,
            angles: angles.to_vec(),
            size,
            mode,
            dims,
        })
    }
}

/// (N−1)×N Helmert submatrix with ascending rows.
pub fn helmert_submatrix(landmarks: usize) -> Result<DMatrix<f64>> {
    if landmarks < 2 {
        return Err(ShapeError::Dimension(format!(
            "Helmert submatrix needs N >= 2, got {landmarks}"
        )));
    }
    let mut l = DMatrix::zeros(landmarks - 1, landmarks);
    for j in 0..landmarks - 1 {
        let k = (j + 1) as f64;
        let scale = 1.0 / (k * (k + 1.0)).sqrt();
        for c in 0..=j {
            l[(j, c)] = scale;
        }
        l[(j, j + 1)] = -k * scale;
    }
    Ok(l)
}

pub(crate) fn check_symmetric(a: &DMatrix<f64>, what: &str) -> Result<()> {
    if !a.is_square() {
        return Err(ShapeError::Dimension(format!("{what} must be square")));
    }
    let scale = a.amax().max(f64::MIN_POSITIVE);
    if (a - a.transpose()).amax() > 1e-10 * scale {
        return Err(ShapeError::Domain(format!("{what} is not symmetric")));
    }
    Ok(())
}

fn spd_eigen(a: &DMatrix<f64>, what: &str) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    check_symmetric(a, what)?;
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let max = eig.eigenvalues.amax();
    if eig.eigenvalues.iter().any(|&l| l <= RANK_TOLERANCE * max) || max <= 0.0 {
        return Err(ShapeError::Domain(format!("{what} is not positive definite")));
    }
    Ok(eig)
}

fn spectral_power(eig: &SymmetricEigen<f64, nalgebra::Dyn>, power: f64) -> DMatrix<f64> {
    let v = &eig.eigenvectors;
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.powf(power)));
    let out = v * d * v.transpose();
    (&out + out.transpose()) * 0.5
}

/// Symmetric positive-definite square root.
pub fn pd_sqrt(theta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(spectral_power(&spd_eigen(theta, "Θ")?, 0.5))
}

/// Symmetric positive-definite inverse square root.
pub fn pd_inv_sqrt(theta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(spectral_power(&spd_eigen(theta, "Θ")?, -0.5))
}

/// `Y = L X Θ^{-1/2}`; `None` stands for Θ = I.
pub fn whiten_and_center(
    x: &LandmarkConfiguration,
    theta: Option<&DMatrix<f64>>,
) -> Result<DMatrix<f64>> {
    let dims = x.dimensions();
    let l = helmert_submatrix(dims.landmarks)?;
    let centered = &l * x.data();
    match theta {
        None => Ok(centered),
        Some(theta) => {
            if theta.nrows() != dims.dims {
                return Err(ShapeError::Dimension(format!(
                    "Θ must be {}x{}, got {}x{}",
                    dims.dims,
                    dims.dims,
                    theta.nrows(),
                    theta.ncols()
                )));
            }
            Ok(centered * pd_inv_sqrt(theta)?)
        }
    }
}

/// `Y = T H` with the sign convention of `mode`.
pub fn qr_size_and_shape(
    y: &DMatrix<f64>,
    mode: ReflectionMode,
) -> Result<(SizeAndShape, DMatrix<f64>)> {
    let dims = Dimensions::new(y.nrows() + 1, y.ncols())?;
    let n = dims.rank;
    let scale = y.norm();
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(ShapeError::Degenerate(
            "configuration has zero (or non-finite) size".into(),
        ));
    }
    let qr = y.transpose().qr();
    let mut t = qr.r().transpose();
    let mut h = qr.q().transpose();
    debug_assert_eq!(t.ncols(), n);
    for i in 0..n {
        let d = t[(i, i)];
        if d.abs() < RANK_TOLERANCE * scale {
            return Err(ShapeError::Degenerate(format!(
                "rank-deficient configuration (pivot {i} = {d:e})"
            )));
        }
        if d < 0.0 {
            t.column_mut(i).neg_mut();
            h.row_mut(i).neg_mut();
        }
    }
    if mode == ReflectionMode::ExcludesReflection && n == dims.dims && h.determinant() < 0.0 {
        t.column_mut(n - 1).neg_mut();
        h.row_mut(n - 1).neg_mut();
    }
    for i in 0..t.nrows() {
        for j in (i + 1)..n {
            t[(i, j)] = 0.0;
        }
    }
    Ok((SizeAndShape::new(t, dims, mode)?, h))
}

/// Nonzero entries of a lower-triangular matrix, column by column.
pub fn vech(t: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::new();
    for j in 0..t.ncols() {
        for i in j..t.nrows() {
            out.push(t[(i, j)]);
        }
    }
    out
}

/// Inverse of [`vech`] for the (N−1)×n pattern of `dims`.
pub fn unvech(x: &[f64], dims: Dimensions) -> DMatrix<f64> {
    let mut t = DMatrix::zeros(dims.rows(), dims.rank);
    let mut k = 0;
    for j in 0..dims.rank {
        for i in j..dims.rows() {
            t[(i, j)] = x[k];
            k += 1;
        }
    }
    t
}

fn spherical_to_cartesian(angles: &[f64], r: f64) -> Vec<f64> {
    let m = angles.len();
    let mut x = Vec::with_capacity(m + 1);
    let mut prod = r;
    for &theta in angles {
        x.push(prod * theta.cos());
        prod *= theta.sin();
    }
    x.push(prod);
    x
}

fn cartesian_to_spherical(x: &[f64]) -> Vec<f64> {
    let m = x.len() - 1;
    let mut angles = Vec::with_capacity(m);
    if m == 0 {
        return angles;
    }
    // tail[i] = ‖x[i..]‖
    let mut tail = vec![0.0f64; x.len() + 1];
    for i in (0..x.len()).rev() {
        tail[i] = tail[i + 1].hypot(x[i]);
    }
    for i in 0..m - 1 {
        angles.push(tail[i + 1].atan2(x[i]));
    }
    angles.push(x[m].atan2(x[m - 1]));
    angles
}

/// Open interval of each polar angle for the given dimensions and mode.
pub fn angle_domain(dims: Dimensions, mode: ReflectionMode) -> Vec<(f64, f64)> {
    let m = dims.angles;
    if m == 0 {
        return Vec::new();
    }
    let positive: Vec<usize> = dims
        .positive_diagonals(mode)
        .into_iter()
        .map(|j| dims.diagonal_position(j))
        .collect();
    let constrained = |pos: usize| positive.contains(&pos);
    let mut domain = Vec::with_capacity(m);
    for i in 0..m - 1 {
        domain.push(if constrained(i) { (0.0, FRAC_PI_2) } else { (0.0, PI) });
    }
    let last = match (constrained(m - 1), constrained(m)) {
        (true, true) => (0.0, FRAC_PI_2),
        (true, false) => (-FRAC_PI_2, FRAC_PI_2),
        (false, true) => (0.0, PI),
        (false, false) => (-PI, PI),
    };
    domain.push(last);
    domain
}

/// `W = T / r` together with its polar angles.
pub fn to_polar(t: &SizeAndShape) -> Result<ShapeCoordinates> {
    let r = t.centroid_size();
    if !(r > 0.0) {
        return Err(ShapeError::Degenerate("size-and-shape has zero size".into()));
    }
    let w = t.matrix() / r;
    let angles = cartesian_to_spherical(&vech(&w));
    Ok(ShapeCoordinates {
        w,
        angles,
        size: r,
        mode: t.mode(),
        dims: t.dimensions(),
    })
}

/// Rebuilds `T = r W(u)` from polar coordinates.
pub fn from_polar(s: &ShapeCoordinates) -> Result<SizeAndShape> {
    let x = spherical_to_cartesian(s.angles(), s.size());
    SizeAndShape::new(unvech(&x, s.dimensions()), s.dimensions(), s.mode())
}

/// `J(u) = ∏_{i=1}^{m} sin^{m−i} θ_i`.
pub fn polar_jacobian(angles: &[f64]) -> Result<f64> {
    Ok(log_polar_jacobian(angles)?.exp())
}

/// Natural log of [`polar_jacobian`].
pub fn log_polar_jacobian(angles: &[f64]) -> Result<f64> {
    let m = angles.len();
    let mut acc = 0.0;
    for (i, &theta) in angles.iter().enumerate() {
        let last = i + 1 == m;
        let ok = theta.is_finite()
            && if last {
                (-PI..=PI).contains(&theta)
            } else {
                (0.0..=PI).contains(&theta)
            };
        if !ok {
            return Err(ShapeError::Domain(format!(
                "angle {} = {theta} is outside its domain",
                i + 1
            )));
        }
        let power = (m - 1 - i) as f64;
        if power > 0.0 {
            acc += power * theta.sin().ln();
        }
    }
    Ok(acc)
}

/// Full pipeline from raw landmarks to shape coordinates.
pub fn extract_shape(
    x: &LandmarkConfiguration,
    theta: Option<&DMatrix<f64>>,
    mode: ReflectionMode,
) -> Result<ShapeCoordinates> {
    let y = whiten_and_center(x, theta)?;
    let (t, _) = qr_size_and_shape(&y, mode)?;
    to_polar(&t)
}

/// Numerical rank with the library's relative tolerance.
pub fn numerical_rank(a: &DMatrix<f64>) -> usize {
    if a.is_empty() {
        return 0;
    }
    let sv = a.singular_values();
    let max = sv.amax();
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOLERANCE * max).count()
}
