//! Partitions, generalized Pochhammer symbols, multivariate gamma and zonal
//! polynomials, plus the truncated double series `Σ_t Σ_{κ⊢t} w(t,κ) C_κ(A)`.
//!
//! Zonal polynomials are evaluated from the eigenvalues of their argument with
//! the Jack-function recursion (α = 2) over the number of variables:
//! `C_κ(x_1..x_i) = Σ_μ ζ_{κμ} C_μ(x_1..x_{i−1}) x_i^{|κ|−|μ|}`, summed over the
//! partitions `μ ⊆ κ` for which `κ/μ` is a horizontal strip. The coefficients
//! `ζ` depend only on the partitions and are kept in a process-wide table that
//! grows on demand.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock, RwLock};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma, ln_gamma};

use crate::error::{Result, ShapeError};
use crate::logspace::SignedLog;

const ALPHA: f64 = 2.0;
const TABLE_CHUNK: usize = 16;

/// Eigenvalues below this fraction of the largest magnitude are treated as 0.
pub const EIGEN_ZERO_TOLERANCE: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Partition(Vec<usize>);

impl Partition {
    pub fn new(parts: Vec<usize>) -> Result<Self> {
        if parts.iter().any(|&p| p == 0) {
            return Err(ShapeError::Domain("partition parts must be positive".into()));
        }
        if parts.windows(2).any(|w| w[0] < w[1]) {
            return Err(ShapeError::Domain(
                "partition parts must be non-increasing".into(),
            ));
        }
        Ok(Partition(parts))
    }

    pub fn empty() -> Self {
        Partition(Vec::new())
    }

    pub fn parts(&self) -> &[usize] {
        &self.0
    }

    pub fn weight(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Conjugate partition κ'.
    pub fn conjugate(&self) -> Vec<usize> {
        let first = self.0.first().copied().unwrap_or(0);
        (1..=first)
            .map(|j| self.0.iter().filter(|&&p| p >= j).count())
            .collect()
    }
}

fn push_partitions(
    remaining: usize,
    max_part: usize,
    max_parts: usize,
    prefix: &mut Vec<usize>,
    out: &mut Vec<Partition>,
) {
    if remaining == 0 {
        out.push(Partition(prefix.clone()));
        return;
    }
    if prefix.len() == max_parts {
        return;
    }
    for first in (1..=remaining.min(max_part)).rev() {
        prefix.push(first);
        push_partitions(remaining - first, first, max_parts, prefix, out);
        prefix.pop();
    }
}

/// All partitions of `t` in reverse-lexicographic order.
pub fn partitions_of(t: usize) -> Vec<Partition> {
    partitions_with_max_parts(t, usize::MAX)
}

/// Partitions of `t` with at most `max_parts` parts, reverse-lexicographic.
pub fn partitions_with_max_parts(t: usize, max_parts: usize) -> Vec<Partition> {
    let mut out = Vec::new();
    push_partitions(t, t, max_parts, &mut Vec::new(), &mut out);
    out
}

/// `(a)_κ = ∏_j (a − (j−1)/2)_{κ_j}`.
pub fn gen_pochhammer(a: f64, kappa: &Partition) -> f64 {
    let mut acc = 1.0;
    for (j, &part) in kappa.parts().iter().enumerate() {
        let base = a - j as f64 / 2.0;
        for i in 0..part {
            acc *= base + i as f64;
        }
    }
    acc
}

/// `(a)_κ` in signed log form.
pub fn ln_gen_pochhammer(a: f64, kappa: &Partition) -> SignedLog {
    let mut acc = SignedLog::ONE;
    for (j, &part) in kappa.parts().iter().enumerate() {
        let base = a - j as f64 / 2.0;
        for i in 0..part {
            acc = acc.mul(SignedLog::from_value(base + i as f64));
        }
    }
    acc
}

/// Cumulative log-Pochhammer table for a fixed `a`, reused across a series.
#[derive(Debug, Clone)]
pub struct PochhammerTable {
    a: f64,
    // rows[j][k] = ln|(a − j/2)_k|, signs[j][k] its sign
    rows: Vec<Vec<f64>>,
    signs: Vec<Vec<i8>>,
}

impl PochhammerTable {
    pub fn new(a: f64) -> Self {
        PochhammerTable {
            a,
            rows: Vec::new(),
            signs: Vec::new(),
        }
    }

    fn ensure(&mut self, j: usize, k: usize) {
        while self.rows.len() <= j {
            self.rows.push(vec![0.0]);
            self.signs.push(vec![1]);
        }
        let base = self.a - j as f64 / 2.0;
        let (row, sign) = (&mut self.rows[j], &mut self.signs[j]);
        while row.len() <= k {
            let i = row.len() - 1;
            let f = base + i as f64;
            let last = *row.last().unwrap();
            let s = *sign.last().unwrap();
            if f == 0.0 || s == 0 {
                row.push(f64::NEG_INFINITY);
                sign.push(0);
            } else {
                row.push(last + f.abs().ln());
                sign.push(if f < 0.0 { -s } else { s });
            }
        }
    }

    pub fn get(&mut self, kappa: &Partition) -> SignedLog {
        let mut acc = SignedLog::ONE;
        for (j, &part) in kappa.parts().iter().enumerate() {
            self.ensure(j, part);
            acc = acc.mul(SignedLog::new(self.rows[j][part], self.signs[j][part]));
        }
        acc
    }
}

fn check_multigamma_args(s: usize, a: f64) -> Result<()> {
    if s == 0 {
        return Err(ShapeError::Dimension("multivariate gamma needs s >= 1".into()));
    }
    for j in 0..s {
        let x = a - j as f64 / 2.0;
        if x <= 0.0 && x == x.round() {
            return Err(ShapeError::Domain(format!(
                "Γ_{s}({a}) hits a pole at argument {x}"
            )));
        }
    }
    Ok(())
}

/// `Γ_s(a) = π^{s(s−1)/4} ∏_{j=1}^{s} Γ(a − (j−1)/2)`.
pub fn multivariate_gamma(s: usize, a: f64) -> Result<f64> {
    check_multigamma_args(s, a)?;
    let sf = s as f64;
    let mut acc = std::f64::consts::PI.powf(sf * (sf - 1.0) / 4.0);
    for j in 0..s {
        acc *= gamma(a - j as f64 / 2.0);
    }
    Ok(acc)
}

/// `ln Γ_s(a)`, defined when every factor argument is positive.
pub fn ln_multivariate_gamma(s: usize, a: f64) -> Result<f64> {
    check_multigamma_args(s, a)?;
    let sf = s as f64;
    let mut acc = sf * (sf - 1.0) / 4.0 * std::f64::consts::PI.ln();
    for j in 0..s {
        let x = a - j as f64 / 2.0;
        if x <= 0.0 {
            return Err(ShapeError::Domain(format!(
                "ln Γ_{s}({a}) needs positive arguments, got {x}"
            )));
        }
        acc += ln_gamma(x);
    }
    Ok(acc)
}

#[derive(Debug, Clone, Copy)]
struct Link {
    mu: usize,
    mu_len: usize,
    step: usize,
    coef: f64,
}

#[derive(Debug, Clone)]
struct ZonalTable {
    max_parts: usize,
    degree: usize,
    partitions: Vec<Partition>,
    offsets: Vec<usize>,
    index: HashMap<Vec<usize>, usize>,
    ln_j: Vec<f64>,
    links: Vec<Vec<Link>>,
}

fn upper_hook(nu: &[usize], nu_conj: &[usize], i: usize, j: usize) -> f64 {
    // 1-based cell (i, j)
    nu_conj[j - 1] as f64 - i as f64 + ALPHA * (nu[i - 1] as f64 - j as f64 + 1.0)
}

fn lower_hook(nu: &[usize], nu_conj: &[usize], i: usize, j: usize) -> f64 {
    nu_conj[j - 1] as f64 - i as f64 + 1.0 + ALPHA * (nu[i - 1] as f64 - j as f64)
}

fn ln_j(kappa: &Partition) -> f64 {
    let parts = kappa.parts();
    let conj = kappa.conjugate();
    let mut acc = 0.0;
    for (i0, &row) in parts.iter().enumerate() {
        for j in 1..=row {
            acc += upper_hook(parts, &conj, i0 + 1, j).ln();
            acc += lower_hook(parts, &conj, i0 + 1, j).ln();
        }
    }
    acc
}

fn ln_factorial(n: usize) -> f64 {
    ln_gamma(n as f64 + 1.0)
}

/// ζ_{κμ} for a horizontal strip κ/μ, given ln j_κ and ln j_μ.
fn strip_coefficient(kappa: &Partition, mu: &Partition, ln_j_kappa: f64, ln_j_mu: f64) -> f64 {
    let kp = kappa.parts();
    let mp = mu.parts();
    let kc = kappa.conjugate();
    let mc = mu.conjugate();
    let same_column = |j: usize| kc.get(j - 1).copied().unwrap_or(0) == mc.get(j - 1).copied().unwrap_or(0);
    let mut ln_beta = 0.0;
    for (i0, &row) in kp.iter().enumerate() {
        for j in 1..=row {
            let b = if same_column(j) {
                upper_hook(kp, &kc, i0 + 1, j)
            } else {
                lower_hook(kp, &kc, i0 + 1, j)
            };
            ln_beta += b.ln();
        }
    }
    for (i0, &row) in mp.iter().enumerate() {
        for j in 1..=row {
            let b = if same_column(j) {
                upper_hook(mp, &mc, i0 + 1, j)
            } else {
                lower_hook(mp, &mc, i0 + 1, j)
            };
            ln_beta -= b.ln();
        }
    }
    let step = kappa.weight() - mu.weight();
    (step as f64 * ALPHA.ln() + ln_factorial(kappa.weight()) - ln_factorial(mu.weight())
        + ln_beta
        + ln_j_mu
        - ln_j_kappa)
    .exp()
}

/// Partitions μ with κ/μ a horizontal strip: κ_{i+1} ≤ μ_i ≤ κ_i.
fn horizontal_strips(kappa: &Partition) -> Vec<Partition> {
    let kp = kappa.parts();
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(kp.len());
    fn rec(kp: &[usize], i: usize, current: &mut Vec<usize>, out: &mut Vec<Partition>) {
        if i == kp.len() {
            let parts: Vec<usize> = current.iter().copied().filter(|&p| p > 0).collect();
            out.push(Partition(parts));
            return;
        }
        let lo = kp.get(i + 1).copied().unwrap_or(0);
        for v in lo..=kp[i] {
            current.push(v);
            rec(kp, i + 1, current, out);
            current.pop();
        }
    }
    rec(kp, 0, &mut current, &mut out);
    out
}

impl ZonalTable {
    fn new(max_parts: usize) -> Self {
        let mut index = HashMap::new();
        index.insert(Vec::new(), 0);
        ZonalTable {
            max_parts,
            degree: 0,
            partitions: vec![Partition::empty()],
            offsets: vec![0, 1],
            index,
            ln_j: vec![0.0],
            links: vec![Vec::new()],
        }
    }

    fn grow_to(&mut self, degree: usize) {
        while self.degree < degree {
            let t = self.degree + 1;
            for kappa in partitions_with_max_parts(t, self.max_parts) {
                let ln_j_kappa = ln_j(&kappa);
                let own = self.partitions.len();
                // with k variables the recursion only ever reads μ with < k parts
                let links = horizontal_strips(&kappa)
                    .into_iter()
                    .filter(|mu| mu.len() < self.max_parts)
                    .map(|mu| {
                        if mu == kappa {
                            return Link {
                                mu: own,
                                mu_len: mu.len(),
                                step: 0,
                                coef: 1.0,
                            };
                        }
                        let mu_idx = self.index[mu.parts()];
                        Link {
                            mu: mu_idx,
                            mu_len: mu.len(),
                            step: t - mu.weight(),
                            coef: strip_coefficient(&kappa, &mu, ln_j_kappa, self.ln_j[mu_idx]),
                        }
                    })
                    .collect();
                self.index.insert(kappa.parts().to_vec(), self.partitions.len());
                self.ln_j.push(ln_j_kappa);
                self.partitions.push(kappa);
                self.links.push(links);
            }
            self.offsets.push(self.partitions.len());
            self.degree = t;
        }
    }
}

fn table_registry() -> &'static RwLock<HashMap<usize, Arc<ZonalTable>>> {
    static REGISTRY: OnceLock<RwLock<HashMap<usize, Arc<ZonalTable>>>> = OnceLock::new();
    REGISTRY.get_or_init(|| RwLock::new(HashMap::new()))
}

fn zonal_table(max_parts: usize, degree: usize) -> Arc<ZonalTable> {
    if let Some(table) = table_registry()
        .read()
        .expect("zonal table lock poisoned")
        .get(&max_parts)
    {
        if table.degree >= degree {
            return Arc::clone(table);
        }
    }
    let mut registry = table_registry().write().expect("zonal table lock poisoned");
    let entry = registry
        .entry(max_parts)
        .or_insert_with(|| Arc::new(ZonalTable::new(max_parts)));
    if entry.degree < degree {
        let target = degree.div_ceil(TABLE_CHUNK) * TABLE_CHUNK;
        let mut grown = (**entry).clone();
        grown.grow_to(target);
        *entry = Arc::new(grown);
    }
    Arc::clone(entry)
}

/// Incremental evaluator of `C_κ(x)` for a fixed eigenvalue vector,
/// degree by degree.
#[derive(Debug)]
pub struct ZonalEvaluator {
    table: Arc<ZonalTable>,
    x: Vec<f64>,
    ln_scale: f64,
    // levels[i][κ] = C_κ(x_1..x_i) for the scaled eigenvalues
    levels: Vec<Vec<f64>>,
    powers: Vec<Vec<f64>>,
    done: usize,
}

impl ZonalEvaluator {
    /// Zero (relative to the largest magnitude) eigenvalues are discarded.
    pub fn new(eigs: &[f64]) -> Result<Self> {
        if eigs.iter().any(|v| !v.is_finite()) {
            return Err(ShapeError::Domain("eigenvalues must be finite".into()));
        }
        let max = eigs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let x: Vec<f64> = if max == 0.0 {
            Vec::new()
        } else {
            eigs.iter()
                .filter(|v| v.abs() > EIGEN_ZERO_TOLERANCE * max)
                .map(|v| v / max)
                .collect()
        };
        let k = x.len();
        let table = zonal_table(k, TABLE_CHUNK);
        let mut levels = vec![vec![0.0; 1]; k + 1];
        for level in levels.iter_mut() {
            level[0] = 1.0;
        }
        Ok(ZonalEvaluator {
            table,
            powers: x.iter().map(|&v| vec![1.0, v]).collect(),
            x,
            ln_scale: if max == 0.0 { 0.0 } else { max.ln() },
            levels,
            done: 0,
        })
    }

    /// Number of nonzero eigenvalues retained.
    pub fn variables(&self) -> usize {
        self.x.len()
    }

    fn power(&mut self, i: usize, s: usize) -> f64 {
        let row = &mut self.powers[i];
        while row.len() <= s {
            let next = row[row.len() - 1] * self.x[i];
            row.push(next);
        }
        row[s]
    }

    fn ensure_degree(&mut self, degree: usize) {
        if self.done >= degree {
            return;
        }
        if self.table.degree < degree {
            self.table = zonal_table(self.x.len(), degree);
        }
        let k = self.x.len();
        let table = Arc::clone(&self.table);
        let end = table.offsets[degree + 1];
        for level in self.levels.iter_mut() {
            level.resize(end, 0.0);
        }
        for t in (self.done + 1)..=degree {
            for idx in table.offsets[t]..table.offsets[t + 1] {
                let len = table.partitions[idx].len();
                for i in 1..=k {
                    if len > i {
                        self.levels[i][idx] = 0.0;
                        continue;
                    }
                    let mut acc = 0.0;
                    for link in &table.links[idx] {
                        if link.mu_len > i - 1 {
                            continue;
                        }
                        let prev = self.levels[i - 1][link.mu];
                        if prev != 0.0 {
                            acc += link.coef * prev * self.power(i - 1, link.step);
                        }
                    }
                    self.levels[i][idx] = acc;
                }
            }
        }
        self.done = degree;
    }

    /// Calls `visit(κ, C_κ)` for every partition of `degree` with at most
    /// [`variables`](Self::variables) parts.
    pub fn for_each_term<F: FnMut(&Partition, SignedLog)>(&mut self, degree: usize, mut visit: F) {
        let k = self.x.len();
        if k == 0 {
            if degree == 0 {
                visit(&Partition::empty(), SignedLog::ONE);
            }
            return;
        }
        self.ensure_degree(degree);
        let shift = degree as f64 * self.ln_scale;
        let table = &self.table;
        for idx in table.offsets[degree]..table.offsets[degree + 1] {
            visit(
                &table.partitions[idx],
                SignedLog::from_value(self.levels[k][idx]).scale_ln(shift),
            );
        }
    }

    /// `C_κ` in signed log form.
    pub fn ln_value(&mut self, kappa: &Partition) -> SignedLog {
        let k = self.x.len();
        if kappa.len() > k {
            return SignedLog::ZERO;
        }
        if k == 0 {
            return SignedLog::ONE;
        }
        self.ensure_degree(kappa.weight());
        let idx = self.table.index[kappa.parts()];
        SignedLog::from_value(self.levels[k][idx]).scale_ln(kappa.weight() as f64 * self.ln_scale)
    }
}

/// `C_κ` evaluated at the eigenvalues of a symmetric argument.
pub fn zonal_polynomial(kappa: &Partition, eigs: &[f64]) -> f64 {
    if kappa.len() > eigs.len() {
        return 0.0;
    }
    match ZonalEvaluator::new(eigs) {
        Ok(mut ev) => ev.ln_value(kappa).value(),
        Err(_) => f64::NAN,
    }
}

/// Eigenvalues of a symmetric matrix (symmetrized first).
pub fn symmetric_eigenvalues(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    if !a.is_square() {
        return Err(ShapeError::Dimension("matrix argument must be square".into()));
    }
    let sym = (a + a.transpose()) * 0.5;
    Ok(SymmetricEigen::new(sym).eigenvalues.iter().copied().collect())
}

/// `C_κ(A)` for a symmetric matrix `A`.
pub fn zonal_polynomial_matrix(kappa: &Partition, a: &DMatrix<f64>) -> Result<f64> {
    Ok(zonal_polynomial(kappa, &symmetric_eigenvalues(a)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesControl {
    pub max_degree: usize,
    pub rel_tol: f64,
}

impl Default for SeriesControl {
    fn default() -> Self {
        SeriesControl {
            max_degree: 120,
            rel_tol: 1e-10,
        }
    }
}

impl SeriesControl {
    pub fn new(max_degree: usize, rel_tol: f64) -> Result<Self> {
        if !(rel_tol > 0.0) || !rel_tol.is_finite() {
            return Err(ShapeError::Domain(format!(
                "rel_tol must be positive, got {rel_tol}"
            )));
        }
        Ok(SeriesControl {
            max_degree,
            rel_tol,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesDiagnostics {
    /// Highest degree summed.
    pub degrees_used: usize,
    /// |last degree contribution| / |partial sum|.
    pub last_term_ratio: f64,
    pub converged: bool,
}

impl SeriesDiagnostics {
    /// Worst-case merge used when a likelihood sums many series.
    pub fn merge(self, other: SeriesDiagnostics) -> SeriesDiagnostics {
        SeriesDiagnostics {
            degrees_used: self.degrees_used.max(other.degrees_used),
            last_term_ratio: self.last_term_ratio.max(other.last_term_ratio),
            converged: self.converged && other.converged,
        }
    }

    pub fn trivial() -> Self {
        SeriesDiagnostics {
            degrees_used: 0,
            last_term_ratio: 0.0,
            converged: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesValue {
    pub value: SignedLog,
    pub diagnostics: SeriesDiagnostics,
}

/// `Σ_t Σ_{κ⊢t} weight(t, κ) C_κ(x)` from eigenvalues `x`, truncated once
/// two consecutive degree contributions fall below `rel_tol · |partial sum|`
/// or at `max_degree`.
pub fn weighted_zonal_series<F>(eigs: &[f64], mut weight: F, ctrl: &SeriesControl) -> Result<SeriesValue>
where
    F: FnMut(usize, &Partition) -> SignedLog,
{
    let mut ev = ZonalEvaluator::new(eigs)?;
    let ln_tol = ctrl.rel_tol.ln();
    let mut partial = SignedLog::ZERO;
    let mut quiet = 0;
    let mut last_ratio = f64::INFINITY;
    let mut used = 0;
    for t in 0..=ctrl.max_degree {
        let mut contribution = SignedLog::ZERO;
        ev.for_each_term(t, |kappa, c| {
            contribution = contribution.add(weight(t, kappa).mul(c));
        });
        if contribution.ln_abs.is_nan() {
            return Err(ShapeError::Numerical(format!(
                "series term at degree {t} is not a number"
            )));
        }
        partial = partial.add(contribution);
        used = t;
        last_ratio = if partial.is_zero() {
            if contribution.is_zero() { 0.0 } else { f64::INFINITY }
        } else {
            (contribution.ln_abs - partial.ln_abs).exp()
        };
        if t > 0 && !partial.is_zero() && contribution.ln_abs < ln_tol + partial.ln_abs {
            quiet += 1;
            if quiet >= 2 {
                return Ok(SeriesValue {
                    value: partial,
                    diagnostics: SeriesDiagnostics {
                        degrees_used: used,
                        last_term_ratio: last_ratio,
                        converged: true,
                    },
                });
            }
        } else {
            quiet = 0;
        }
    }
    Ok(SeriesValue {
        value: partial,
        diagnostics: SeriesDiagnostics {
            degrees_used: used,
            last_term_ratio: last_ratio,
            converged: false,
        },
    })
}

/// Matrix-argument front end to [`weighted_zonal_series`].
pub fn weighted_zonal_series_matrix<F>(
    a: &DMatrix<f64>,
    weight: F,
    ctrl: &SeriesControl,
) -> Result<SeriesValue>
where
    F: FnMut(usize, &Partition) -> SignedLog,
{
    weighted_zonal_series(&symmetric_eigenvalues(a)?, weight, ctrl)
}
