//! Likelihood, maximum-likelihood fitting, BIC* model selection and the
//! likelihood-ratio test for equal mean shapes.
//!
//! For isotropic models (Σ = σ²I, Θ = I) the shape density depends on the
//! mean and scale only through `ν = μ/σ`, and only up to a right rotation of
//! `ν`. Fits therefore optimize the lower-triangular canonical form of `ν`
//! (the same triangular pattern as `T`) and recover σ² from the centroid
//! sizes: `E r² = σ²(‖ν‖² + (τ − 1 + M/2)/R)`.

use std::cell::Cell;
use std::fmt;
use std::str::FromStr;

use argmin::core::{CostFunction, Error as ArgminError, Executor, State, TerminationReason, TerminationStatus};
use argmin::solver::neldermead::NelderMead;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::densities::{model_shape_logdensity, ModelSpec};
use crate::error::{Result, ShapeError};
use crate::generators::GeneratorSpec;
use crate::geometry::{
    extract_shape, qr_size_and_shape, unvech, vech, Dimensions, LandmarkConfiguration,
    ReflectionMode, ShapeCoordinates,
};
use crate::simulate::{chi_square_sf, seeded_rng};
use crate::zonal::{SeriesControl, SeriesDiagnostics};

/// Homogeneous, nonempty collection of shape observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    observations: Vec<ShapeCoordinates>,
    dims: Dimensions,
    mode: ReflectionMode,
}

impl Sample {
    pub fn new(observations: Vec<ShapeCoordinates>) -> Result<Self> {
        let first = observations
            .first()
            .ok_or_else(|| ShapeError::Domain("a sample needs at least one observation".into()))?;
        let (dims, mode) = (first.dimensions(), first.mode());
        if observations
            .iter()
            .any(|o| o.dimensions() != dims || o.mode() != mode)
        {
            return Err(ShapeError::Dimension(
                "observations differ in dimensions or reflection mode".into(),
            ));
        }
        Ok(Sample {
            observations,
            dims,
            mode,
        })
    }

    pub fn from_configurations(
        configs: &[LandmarkConfiguration],
        theta: Option<&DMatrix<f64>>,
        mode: ReflectionMode,
    ) -> Result<Self> {
        Self::new(
            configs
                .iter()
                .map(|x| extract_shape(x, theta, mode))
                .collect::<Result<_>>()?,
        )
    }

    pub fn observations(&self) -> &[ShapeCoordinates] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn dimensions(&self) -> Dimensions {
        self.dims
    }

    pub fn mode(&self) -> ReflectionMode {
        self.mode
    }

    /// Same observations in a canonical order (by size, then vech W), so
    /// fits do not depend on input order.
    fn canonical(&self) -> Sample {
        let mut obs = self.observations.clone();
        obs.sort_by(|a, b| {
            a.size()
                .total_cmp(&b.size())
                .then_with(|| {
                    a.vech_w()
                        .iter()
                        .zip(b.vech_w().iter())
                        .map(|(x, y)| x.total_cmp(y))
                        .find(|o| o.is_ne())
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
        });
        Sample {
            observations: obs,
            dims: self.dims,
            mode: self.mode,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLikelihood {
    pub value: f64,
    pub diagnostics: SeriesDiagnostics,
}

/// Σ_i ln f(u_i) with the closed form matching the model's generator.
pub fn log_likelihood(spec: &ModelSpec, sample: &Sample, ctrl: &SeriesControl) -> Result<LogLikelihood> {
    let mut value = 0.0;
    let mut diagnostics = SeriesDiagnostics::trivial();
    for w in sample.observations() {
        let d = model_shape_logdensity(spec, w, ctrl)?;
        value += d.log_density;
        diagnostics = diagnostics.merge(d.diagnostics);
    }
    Ok(LogLikelihood { value, diagnostics })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeModel {
    Gaussian,
    Kotz2,
    Kotz3,
}

impl ShapeModel {
    pub const ALL: [ShapeModel; 3] = [ShapeModel::Gaussian, ShapeModel::Kotz2, ShapeModel::Kotz3];

    /// Kotz generator with R = ½ (Gaussian is τ = 1).
    pub fn generator(&self) -> GeneratorSpec {
        match self {
            ShapeModel::Gaussian => GeneratorSpec::gaussian(),
            ShapeModel::Kotz2 => GeneratorSpec::kotz(2.0, 0.5).expect("valid constants"),
            ShapeModel::Kotz3 => GeneratorSpec::kotz(3.0, 0.5).expect("valid constants"),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ShapeModel::Gaussian => "gaussian",
            ShapeModel::Kotz2 => "kotz2",
            ShapeModel::Kotz3 => "kotz3",
        }
    }
}

impl fmt::Display for ShapeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeModel {
    type Err = ShapeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" => Ok(ShapeModel::Gaussian),
            "kotz2" => Ok(ShapeModel::Kotz2),
            "kotz3" => Ok(ShapeModel::Kotz3),
            other => Err(ShapeError::Unsupported(format!(
                "unknown model '{other}' (expected gaussian, kotz2 or kotz3)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub seed: u64,
    /// Randomly perturbed starts in addition to the data-driven one.
    pub restarts: usize,
    pub max_iterations: u64,
    /// Simplex standard-deviation tolerance on −log-likelihood.
    pub tolerance: f64,
    pub series: SeriesControl,
    /// Upper bound on ‖ν‖², i.e. a lower bound on σ² relative to the mean.
    pub max_noncentrality: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            seed: 0,
            restarts: 5,
            max_iterations: 4000,
            tolerance: 1e-8,
            series: SeriesControl::default(),
            max_noncentrality: 1e8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub model: ShapeModel,
    /// Canonical (lower-triangular) mean, (N−1)×K.
    pub mu: DMatrix<f64>,
    pub sigma2: f64,
    /// μ/σ, the part of the mean the shape likelihood identifies.
    pub nu: DMatrix<f64>,
    pub loglik: f64,
    pub n_p: usize,
    pub sample_size: usize,
    pub bic_star: f64,
    /// Optimizer converged and every series at the optimum converged.
    pub converged: bool,
    pub optimizer_converged: bool,
    pub evaluations: u64,
    pub diagnostics: SeriesDiagnostics,
}

/// `−2 L + n_p (ln(n+2) − ln 24)`.
pub fn bic_star(loglik: f64, n_p: usize, n: usize) -> f64 {
    -2.0 * loglik + n_p as f64 * ((n as f64 + 2.0).ln() - 24f64.ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EvidenceGrade {
    Weak,
    Positive,
    Strong,
    VeryStrong,
}

impl fmt::Display for EvidenceGrade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvidenceGrade::Weak => "weak",
            EvidenceGrade::Positive => "positive",
            EvidenceGrade::Strong => "strong",
            EvidenceGrade::VeryStrong => "very strong",
        })
    }
}

/// Grade of a nonnegative BIC* difference: [0,2) weak, [2,6) positive,
/// [6,10] strong, above 10 very strong.
pub fn evidence_grade(bic_difference: f64) -> Result<EvidenceGrade> {
    if !(bic_difference >= 0.0) {
        return Err(ShapeError::Domain(format!(
            "BIC* difference must be nonnegative, got {bic_difference}"
        )));
    }
    Ok(if bic_difference < 2.0 {
        EvidenceGrade::Weak
    } else if bic_difference < 6.0 {
        EvidenceGrade::Positive
    } else if bic_difference <= 10.0 {
        EvidenceGrade::Strong
    } else {
        EvidenceGrade::VeryStrong
    })
}

/// Number of free parameters reported for an isotropic fit: (N−1)K + 1.
pub fn parameter_count(dims: Dimensions) -> usize {
    dims.big_m + 1
}

/// Lower-triangular representative of the right-rotation class of `mu`.
pub fn canonical_mean(mu: &DMatrix<f64>, mode: ReflectionMode) -> Result<DMatrix<f64>> {
    let dims = Dimensions::new(mu.nrows() + 1, mu.ncols())?;
    let t = match qr_size_and_shape(mu, mode) {
        Ok((t, _)) => t.matrix().clone(),
        Err(ShapeError::Degenerate(_)) if mu.norm() == 0.0 => DMatrix::zeros(dims.rows(), dims.rank),
        Err(e) => return Err(e),
    };
    Ok(pad_columns(&t, dims.dims))
}

fn pad_columns(t: &DMatrix<f64>, cols: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(t.nrows(), cols);
    out.view_mut((0, 0), (t.nrows(), t.ncols())).copy_from(t);
    out
}

fn nu_from_params(theta: &[f64], dims: Dimensions) -> DMatrix<f64> {
    pad_columns(&unvech(theta, dims), dims.dims)
}

/// Flips columns so the diagonal is nonnegative.
fn canonical_signs(nu: &mut DMatrix<f64>, dims: Dimensions) {
    for j in 0..dims.rank {
        if nu[(j, j)] < 0.0 {
            nu.column_mut(j).neg_mut();
        }
    }
}

struct Objective<'a> {
    f: &'a dyn Fn(&[f64]) -> f64,
    evaluations: &'a Cell<u64>,
}

impl CostFunction for Objective<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Self::Param) -> std::result::Result<f64, ArgminError> {
        self.evaluations.set(self.evaluations.get() + 1);
        Ok((self.f)(p))
    }
}

struct Minimum {
    x: Vec<f64>,
    value: f64,
    converged: bool,
}

const PENALTY: f64 = 1e12;

fn nelder_mead(
    f: &dyn Fn(&[f64]) -> f64,
    x0: &[f64],
    step: f64,
    opts: &FitOptions,
    evaluations: &Cell<u64>,
) -> Result<Minimum> {
    let mut simplex = vec![x0.to_vec()];
    for i in 0..x0.len() {
        let mut v = x0.to_vec();
        v[i] += if v[i] >= 0.0 { step } else { -step };
        simplex.push(v);
    }
    let solver = NelderMead::new(simplex)
        .with_sd_tolerance(opts.tolerance)
        .map_err(|e| ShapeError::Numerical(e.to_string()))?;
    let problem = Objective { f, evaluations };
    let res = Executor::new(problem, solver)
        .configure(|s| s.max_iters(opts.max_iterations))
        .run()
        .map_err(|e| ShapeError::Numerical(format!("optimizer failed: {e}")))?;
    let state = res.state();
    let x = state
        .get_best_param()
        .cloned()
        .ok_or_else(|| ShapeError::Numerical("optimizer returned no parameters".into()))?;
    let converged = matches!(
        state.get_termination_status(),
        TerminationStatus::Terminated(TerminationReason::SolverConverged)
    );
    Ok(Minimum {
        value: state.get_best_cost(),
        x,
        converged,
    })
}

/// Multi-start simplex search: the given start, `restarts` perturbed
/// starts, then a polish from the best point.
fn multistart(
    f: &dyn Fn(&[f64]) -> f64,
    x0: &[f64],
    opts: &FitOptions,
    evaluations: &Cell<u64>,
) -> Result<Minimum> {
    let scale = (x0.iter().map(|v| v * v).sum::<f64>() / x0.len() as f64).sqrt().max(0.1);
    let mut best = nelder_mead(f, x0, 0.2 * scale, opts, evaluations)?;
    let mut rng = seeded_rng(opts.seed);
    for _ in 0..opts.restarts {
        let start: Vec<f64> = x0
            .iter()
            .map(|v| v + 0.3 * scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let candidate = nelder_mead(f, &start, 0.2 * scale, opts, evaluations)?;
        if candidate.value < best.value {
            best = candidate;
        }
    }
    let polished = nelder_mead(f, &best.x, 0.05 * scale, opts, evaluations)?;
    if polished.value <= best.value {
        best = Minimum {
            converged: polished.converged,
            ..polished
        };
    }
    Ok(best)
}

fn check_fit_sample(sample: &Sample) -> Result<()> {
    let dims = sample.dimensions();
    if sample.mode() == ReflectionMode::ExcludesReflection && dims.has_reflection_entry() {
        return Err(ShapeError::Unsupported(
            "isotropic fits need reflection-included coordinates when N−1 >= K".into(),
        ));
    }
    Ok(())
}

fn negative_loglik(
    model: ShapeModel,
    sample: &Sample,
    nu: DMatrix<f64>,
    opts: &FitOptions,
) -> f64 {
    if nu.norm_squared() > opts.max_noncentrality || nu.iter().any(|v| !v.is_finite()) {
        return PENALTY * (1.0 + nu.norm_squared().min(1e12).ln_1p());
    }
    let spec = match ModelSpec::isotropic(nu, 1.0, model.generator(), sample.mode()) {
        Ok(s) => s,
        Err(_) => return PENALTY,
    };
    match log_likelihood(&spec, sample, &opts.series) {
        Ok(ll) if ll.value.is_finite() => -ll.value,
        _ => PENALTY,
    }
}

/// Data-driven start: mean canonical shape scaled to a concentration guess.
fn initial_params(sample: &Sample) -> Vec<f64> {
    let dims = sample.dimensions();
    let mut mean = vec![0.0; dims.vech_len()];
    for w in sample.observations() {
        for (m, v) in mean.iter_mut().zip(w.vech_w()) {
            *m += v;
        }
    }
    let n = sample.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    let rho2 = mean.iter().map(|v| v * v).sum::<f64>();
    let spread = (1.0 - rho2).max(1e-6);
    let norm2 = (dims.angles.max(1) as f64 / spread).clamp(0.5, 1e4);
    let scale = (norm2 / rho2.max(1e-12)).sqrt();
    mean.iter().map(|v| v * scale).collect()
}

fn moment_sigma2(sample: &Sample, nu: &DMatrix<f64>, model: ShapeModel) -> f64 {
    let dims = sample.dimensions();
    let g = model.generator();
    let mean_r2 =
        sample.observations().iter().map(|w| w.size() * w.size()).sum::<f64>() / sample.len() as f64;
    let radial = (g.tau() - 1.0 + dims.big_m as f64 / 2.0) / g.rate();
    mean_r2 / (nu.norm_squared() + radial)
}

fn finish_fit(
    model: ShapeModel,
    sample: &Sample,
    params: &[f64],
    optimizer_converged: bool,
    evaluations: u64,
    opts: &FitOptions,
) -> Result<FitResult> {
    let dims = sample.dimensions();
    let mut nu = nu_from_params(params, dims);
    canonical_signs(&mut nu, dims);
    let spec = ModelSpec::isotropic(nu.clone(), 1.0, model.generator(), sample.mode())?;
    let ll = log_likelihood(&spec, sample, &opts.series)?;
    let sigma2 = moment_sigma2(sample, &nu, model);
    let n_p = parameter_count(dims);
    let at_bound = nu.norm_squared() >= 0.99 * opts.max_noncentrality;
    Ok(FitResult {
        model,
        mu: &nu * sigma2.sqrt(),
        sigma2,
        nu,
        loglik: ll.value,
        n_p,
        sample_size: sample.len(),
        bic_star: bic_star(ll.value, n_p, sample.len()),
        converged: optimizer_converged && ll.diagnostics.converged && !at_bound,
        optimizer_converged,
        evaluations,
        diagnostics: ll.diagnostics,
    })
}

/// Maximum-likelihood fit of an isotropic model.
pub fn fit_mle(model: ShapeModel, sample: &Sample, opts: &FitOptions) -> Result<FitResult> {
    check_fit_sample(sample)?;
    let sample = sample.canonical();
    let dims = sample.dimensions();
    let evaluations = Cell::new(0);
    let f = |theta: &[f64]| negative_loglik(model, &sample, nu_from_params(theta, dims), opts);
    let best = multistart(&f, &initial_params(&sample), opts, &evaluations)?;
    finish_fit(model, &sample, &best.x, best.converged, evaluations.get(), opts)
}

/// Single simplex search started at `nu`; returns the better of that and
/// `current`.
fn refine(model: ShapeModel, sample: &Sample, nu: &DMatrix<f64>, current: FitResult, opts: &FitOptions) -> Result<FitResult> {
    let sample = sample.canonical();
    let dims = sample.dimensions();
    let evaluations = Cell::new(0);
    let f = |theta: &[f64]| negative_loglik(model, &sample, nu_from_params(theta, dims), opts);
    let canon = canonical_mean(nu, sample.mode())?;
    let x0 = vech(&canon.columns(0, dims.rank).into_owned());
    let m = nelder_mead(&f, &x0, 0.05 * canon.norm().max(0.1), opts, &evaluations)?;
    let fit = finish_fit(model, &sample, &m.x, m.converged, evaluations.get() + current.evaluations, opts)?;
    Ok(if fit.loglik > current.loglik { fit } else { current })
}

/// How the null hypothesis treats the two group variances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NullVariance {
    PerGroup,
    Pooled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LrTestResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub null_loglik: f64,
    pub alt_loglik: f64,
    /// Degrees of freedom the shape likelihood can actually resolve.
    pub identifiable_df: usize,
    pub null_nu: DMatrix<f64>,
    /// σ₁/σ₂ under the null (1 when pooled).
    pub null_scale_ratio: f64,
    pub alternatives: [FitResult; 2],
    pub converged: bool,
}

/// Likelihood-ratio test of a common mean shape in two groups.
pub fn lr_test_equal_mean_shape(
    sample1: &Sample,
    sample2: &Sample,
    model: ShapeModel,
    null: NullVariance,
    opts: &FitOptions,
) -> Result<LrTestResult> {
    check_fit_sample(sample1)?;
    check_fit_sample(sample2)?;
    if sample1.dimensions() != sample2.dimensions() || sample1.mode() != sample2.mode() {
        return Err(ShapeError::Dimension(
            "groups differ in dimensions or reflection mode".into(),
        ));
    }
    let s1 = sample1.canonical();
    let s2 = sample2.canonical();
    let dims = s1.dimensions();
    let k = dims.vech_len();

    let evaluations = Cell::new(0);
    let null_cost = |theta: &[f64]| {
        let nu = nu_from_params(&theta[..k], dims);
        let c = if null == NullVariance::PerGroup { theta[k].exp() } else { 1.0 };
        negative_loglik(model, &s1, nu.clone(), opts) + negative_loglik(model, &s2, nu * c, opts)
    };
    let fit1 = fit_mle(model, &s1, opts)?;
    let fit2 = fit_mle(model, &s2, opts)?;
    let ratio = (fit2.nu.norm() / fit1.nu.norm().max(1e-12)).max(1e-6);
    let mut starts = Vec::new();
    for nu in [fit1.nu.clone(), &fit2.nu / ratio] {
        let mut x = vech(&nu.columns(0, dims.rank).into_owned());
        if null == NullVariance::PerGroup {
            x.push(ratio.ln());
        }
        starts.push(x);
    }
    let x0 = starts
        .iter()
        .min_by(|a, b| null_cost(a).total_cmp(&null_cost(b)))
        .expect("two starts");
    let null_best = multistart(&null_cost, x0, &FitOptions { restarts: 0, ..*opts }, &evaluations)?;
    let null_loglik = -null_best.value;
    let mut null_nu = nu_from_params(&null_best.x[..k], dims);
    canonical_signs(&mut null_nu, dims);
    let c = if null == NullVariance::PerGroup { null_best.x[k].exp() } else { 1.0 };

    // the alternative nests the null: refine each group from the null fit
    let alt1 = refine(model, &s1, &null_nu, fit1, opts)?;
    let alt2 = refine(model, &s2, &(&null_nu * c), fit2, opts)?;
    let alt_loglik = alt1.loglik + alt2.loglik;
    let statistic = -2.0 * (null_loglik - alt_loglik);
    let df = dims.big_m;
    let identifiable_df = match null {
        NullVariance::PerGroup => k - 1,
        NullVariance::Pooled => k,
    };
    let p_value = chi_square_sf(statistic.max(0.0), df as f64)?;
    let converged = null_best.converged && alt1.converged && alt2.converged;
    Ok(LrTestResult {
        statistic,
        df,
        p_value,
        null_loglik,
        alt_loglik,
        identifiable_df,
        null_nu,
        null_scale_ratio: 1.0 / c,
        alternatives: [alt1, alt2],
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bic_star_examples() {
        assert_eq!(bic_star(-100.0, 11, 22), 200.0);
        assert_eq!(bic_star(0.0, 0, 5), 0.0);
        assert!((bic_star(-100.0, 11, 30) - 203.164503).abs() < 1e-5);
    }

    #[test]
    fn evidence_grades() {
        assert_eq!(evidence_grade(1.5).unwrap(), EvidenceGrade::Weak);
        assert_eq!(evidence_grade(0.0).unwrap(), EvidenceGrade::Weak);
        assert_eq!(evidence_grade(2.0).unwrap(), EvidenceGrade::Positive);
        assert_eq!(evidence_grade(7.0).unwrap(), EvidenceGrade::Strong);
        assert_eq!(evidence_grade(10.0).unwrap(), EvidenceGrade::Strong);
        assert_eq!(evidence_grade(14.2).unwrap(), EvidenceGrade::VeryStrong);
        assert!(evidence_grade(-0.1).is_err());
        assert!(evidence_grade(f64::NAN).is_err());
    }

    #[test]
    fn model_names_round_trip() {
        for m in ShapeModel::ALL {
            assert_eq!(m.name().parse::<ShapeModel>().unwrap(), m);
        }
        assert!("pearson".parse::<ShapeModel>().is_err());
    }

    #[test]
    fn parameter_count_for_mouse_layout() {
        assert_eq!(parameter_count(Dimensions::new(6, 2).unwrap()), 11);
    }

    #[test]
    fn canonical_mean_is_rotation_free() {
        let mu = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -0.3, 0.8, 0.2, -0.6]);
        let (c, s) = (0.6f64, 0.8f64);
        let rot = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let a = canonical_mean(&mu, ReflectionMode::IncludesReflection).unwrap();
        let b = canonical_mean(&(&mu * rot), ReflectionMode::IncludesReflection).unwrap();
        assert!((a - b).amax() < 1e-12);
    }
}
