//! Missing-data machinery for a single multivariate Gaussian.
//!
//! An observation is split into observed coordinates `x` and missing
//! coordinates `z`. The exact E-step replaces `z` by its conditional mean
//! and carries the conditional covariance; the partial E-step instead moves
//! the stored imputation (`ẑ`, `Ẑ`) towards the conditional distribution by
//! coordinate sweeps that never increase the KL divergence to it.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg::{
    self, chol_logdet, cholesky, logdet_observed_block, schur_via_precision, select, select_vec,
    submatrix_inverse_via_precision, CovPrecisionPair, IndexSplit, LinalgError, SubmatrixInverse,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GaussianError {
    #[error("observation has no observed coordinates")]
    NoObservedValues,
    #[error("observed value at coordinate {0} is not finite")]
    NonFinite(usize),
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("imputation state is inconsistent with the observation: {0}")]
    InvalidState(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, GaussianError>;

/// One row of ratings with a mask of which entries were observed.
#[derive(Debug, Clone)]
pub struct IncompleteObservation {
    values: DVector<f64>,
    mask: Vec<bool>,
    split: IndexSplit,
}

impl PartialEq for IncompleteObservation {
    fn eq(&self, other: &Self) -> bool {
        self.mask == other.mask && (0..self.dim()).all(|j| self.value(j) == other.value(j))
    }
}

impl IncompleteObservation {
    /// `mask[j] == true` marks coordinate `j` observed. Values at missing
    /// coordinates are discarded.
    pub fn new(values: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        if values.len() != mask.len() {
            return Err(GaussianError::DimensionMismatch {
                expected: mask.len(),
                found: values.len(),
            });
        }
        if !mask.iter().any(|&m| m) {
            return Err(GaussianError::NoObservedValues);
        }
        let mut values = values;
        for (j, v) in values.iter_mut().enumerate() {
            if mask[j] {
                if !v.is_finite() {
                    return Err(GaussianError::NonFinite(j));
                }
            } else {
                *v = f64::NAN;
            }
        }
        let split = IndexSplit::from_mask(&mask)?;
        Ok(Self {
            values: DVector::from_vec(values),
            mask,
            split,
        })
    }

    pub fn from_options(cells: &[Option<f64>]) -> Result<Self> {
        let values = cells.iter().map(|c| c.unwrap_or(f64::NAN)).collect();
        let mask = cells.iter().map(Option::is_some).collect();
        Self::new(values, mask)
    }

    pub fn complete(values: Vec<f64>) -> Result<Self> {
        let mask = vec![true; values.len()];
        Self::new(values, mask)
    }

    pub fn dim(&self) -> usize {
        self.mask.len()
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn split(&self) -> &IndexSplit {
        &self.split
    }

    pub fn is_observed(&self, j: usize) -> bool {
        self.mask[j]
    }

    pub fn value(&self, j: usize) -> Option<f64> {
        self.mask[j].then(|| self.values[j])
    }

    pub fn n_missing(&self) -> usize {
        self.split.n_missing()
    }

    pub fn observed_values(&self) -> DVector<f64> {
        select_vec(&self.values, self.split.observed())
    }
}

/// Mean vector plus covariance/precision pair.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    mu: DVector<f64>,
    sigma: CovPrecisionPair,
}

impl GaussianParams {
    pub fn new(mu: DVector<f64>, sigma: CovPrecisionPair) -> Result<Self> {
        if mu.len() != sigma.dim() {
            return Err(GaussianError::DimensionMismatch {
                expected: sigma.dim(),
                found: mu.len(),
            });
        }
        Ok(Self { mu, sigma })
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn sigma(&self) -> &CovPrecisionPair {
        &self.sigma
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// `(y − μ)' Ξ (y − μ)`.
    pub fn mahalanobis_sq(&self, y: &DVector<f64>) -> f64 {
        let d = y - &self.mu;
        d.dot(&(self.sigma.prec().as_matrix() * &d))
    }
}

/// Imputed sufficient statistics for one observation: `ŷ` (data on the
/// observed coordinates, `ẑ` elsewhere) and `Ŷ` (zero except for the `Ẑ`
/// block on the missing coordinates).
#[derive(Debug, Clone, PartialEq)]
pub struct ImputationState {
    y_hat: DVector<f64>,
    y_cov: DMatrix<f64>,
}

impl ImputationState {
    /// Starting state: `ẑ = μ_z` and `Ẑ = diag(Σ_zz)`.
    pub fn initial(params: &GaussianParams, obs: &IncompleteObservation) -> Self {
        let p = obs.dim();
        let mut y_hat = DVector::zeros(p);
        let mut y_cov = DMatrix::zeros(p, p);
        let cov = params.sigma().cov();
        for j in 0..p {
            match obs.value(j) {
                Some(v) => y_hat[j] = v,
                None => {
                    y_hat[j] = params.mu()[j];
                    y_cov[(j, j)] = cov.get(j, j);
                }
            }
        }
        Self { y_hat, y_cov }
    }

    /// Builds a state from full-length `ŷ` and `Ŷ`, checking the padding
    /// invariants against `obs`.
    pub fn new(
        y_hat: DVector<f64>,
        y_cov: DMatrix<f64>,
        obs: &IncompleteObservation,
    ) -> Result<Self> {
        let p = obs.dim();
        if y_hat.len() != p || y_cov.nrows() != p || y_cov.ncols() != p {
            return Err(GaussianError::DimensionMismatch {
                expected: p,
                found: y_hat.len(),
            });
        }
        for j in 0..p {
            if let Some(v) = obs.value(j) {
                if y_hat[j] != v {
                    return Err(GaussianError::InvalidState(format!(
                        "observed coordinate {j} differs from the data"
                    )));
                }
                if y_cov.row(j).iter().any(|&c| c != 0.0) || y_cov.column(j).iter().any(|&c| c != 0.0)
                {
                    return Err(GaussianError::InvalidState(format!(
                        "row/column {j} of the covariance is not zero"
                    )));
                }
            }
        }
        linalg::SymMatrix::new(y_cov.clone())?;
        Ok(Self { y_hat, y_cov })
    }

    pub fn y_hat(&self) -> &DVector<f64> {
        &self.y_hat
    }

    pub fn y_cov(&self) -> &DMatrix<f64> {
        &self.y_cov
    }

    pub fn missing_block(&self, obs: &IncompleteObservation) -> DMatrix<f64> {
        let z = obs.split().missing();
        select(&self.y_cov, z, z)
    }

    fn set_missing_block(&mut self, obs: &IncompleteObservation, block: &DMatrix<f64>) {
        let z = obs.split().missing();
        for (a, &ja) in z.iter().enumerate() {
            for (b, &jb) in z.iter().enumerate() {
                self.y_cov[(ja, jb)] = block[(a, b)];
            }
        }
    }
}

/// Exact conditional-distribution machinery for one (parameters,
/// missingness pattern) pair. Building a plan performs the single block
/// inversion the exact E-step needs for that pattern.
#[derive(Debug, Clone)]
pub struct ConditionalPlan {
    split: IndexSplit,
    coef: DMatrix<f64>,
    cond_cov: DMatrix<f64>,
    logdet_observed: f64,
    via_precision: bool,
}

impl ConditionalPlan {
    pub fn new(params: &GaussianParams, split: &IndexSplit) -> Result<Self> {
        let pair = params.sigma();
        if split.dim() != pair.dim() {
            return Err(GaussianError::DimensionMismatch {
                expected: pair.dim(),
                found: split.dim(),
            });
        }
        let (x, z) = (split.observed(), split.missing());
        if z.is_empty() {
            return Ok(Self {
                split: split.clone(),
                coef: DMatrix::zeros(0, x.len()),
                cond_cov: DMatrix::zeros(0, 0),
                logdet_observed: pair.logdet_cov(),
                via_precision: false,
            });
        }
        if z.len() < x.len() {
            let (cond, coef) = schur_via_precision(pair, split)?;
            let logdet_observed = logdet_observed_block(pair, split)?;
            Ok(Self {
                split: split.clone(),
                coef,
                cond_cov: cond.into_matrix(),
                logdet_observed,
                via_precision: true,
            })
        } else {
            let cov = pair.cov().as_matrix();
            let sxx = select(cov, x, x);
            let sxz = select(cov, x, z);
            let ch = cholesky(&sxx, "observed covariance block")?;
            let solved = ch.solve(&sxz);
            let coef = solved.transpose();
            let cond = select(cov, z, z) - &coef * &sxz;
            Ok(Self {
                split: split.clone(),
                coef,
                cond_cov: (cond.clone() + cond.transpose()) * 0.5,
                logdet_observed: chol_logdet(&ch),
                via_precision: false,
            })
        }
    }

    pub fn split(&self) -> &IndexSplit {
        &self.split
    }

    /// `ln|Σ_xx|` for this pattern.
    pub fn logdet_observed(&self) -> f64 {
        self.logdet_observed
    }

    /// Whether the plan was built from precision blocks.
    pub fn via_precision(&self) -> bool {
        self.via_precision
    }

    /// Conditional covariance `Σ_z.x`.
    pub fn cond_cov(&self) -> &DMatrix<f64> {
        &self.cond_cov
    }

    /// Regression coefficients `Σ_zx Σ_xx⁻¹`.
    pub fn coef(&self) -> &DMatrix<f64> {
        &self.coef
    }

    pub fn conditional_mean(&self, params: &GaussianParams, obs: &IncompleteObservation) -> DVector<f64> {
        let (x, z) = (self.split.observed(), self.split.missing());
        let dx = obs.observed_values() - select_vec(params.mu(), x);
        select_vec(params.mu(), z) + &self.coef * dx
    }

    pub fn apply(&self, params: &GaussianParams, obs: &IncompleteObservation) -> ImputationState {
        debug_assert_eq!(obs.split(), &self.split);
        let p = obs.dim();
        let mut y_hat = DVector::zeros(p);
        for &j in self.split.observed() {
            y_hat[j] = obs.values[j];
        }
        let z = self.split.missing();
        let z_hat = self.conditional_mean(params, obs);
        let mut y_cov = DMatrix::zeros(p, p);
        for (a, &ja) in z.iter().enumerate() {
            y_hat[ja] = z_hat[a];
            for (b, &jb) in z.iter().enumerate() {
                y_cov[(ja, jb)] = self.cond_cov[(a, b)];
            }
        }
        ImputationState { y_hat, y_cov }
    }
}

/// Exact E-step quantities: `ẑ = μ_z.x` and `Ẑ = Σ_z.x`, padded.
pub fn exact_conditional(
    params: &GaussianParams,
    obs: &IncompleteObservation,
) -> Result<ImputationState> {
    Ok(ConditionalPlan::new(params, obs.split())?.apply(params, obs))
}

/// KL divergence split into the part that depends on `ẑ` and the part that
/// depends on `Ẑ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlParts {
    pub mean: f64,
    pub cov: f64,
}

impl KlParts {
    pub fn total(&self) -> f64 {
        self.mean + self.cov
    }
}

/// `½[tr(Ξ_zz Ẑ) − ln|Ẑ| − ln|Ξ_zz| − l]`; infinite when `Ẑ` is not
/// positive definite.
pub(crate) fn kl_cov_part(xi_zz: &DMatrix<f64>, logdet_xi_zz: f64, z_cov: &DMatrix<f64>) -> f64 {
    let l = z_cov.nrows();
    if l == 0 {
        return 0.0;
    }
    let Some(ch) = nalgebra::Cholesky::new(z_cov.clone()) else {
        return f64::INFINITY;
    };
    let tr = xi_zz.component_mul(z_cov).sum();
    0.5 * (tr - chol_logdet(&ch) - logdet_xi_zz - l as f64)
}

/// `D_KL(N(ẑ, Ẑ) ‖ N(μ_z.x, Σ_z.x))`, zero exactly at the conditional.
pub fn kl_missing_parts(
    state: &ImputationState,
    params: &GaussianParams,
    obs: &IncompleteObservation,
) -> Result<KlParts> {
    let z = obs.split().missing();
    if z.is_empty() {
        return Ok(KlParts { mean: 0.0, cov: 0.0 });
    }
    let prec = params.sigma().prec().as_matrix();
    let xi_zz = select(prec, z, z);
    let ch = cholesky(&xi_zz, "missing precision block")?;
    // Ξ_zz (ẑ − μ_z.x) is the z-part of Ξ (ŷ − μ).
    let resid = prec * (&state.y_hat - params.mu());
    let r = select_vec(&resid, z);
    let mean = 0.5 * r.dot(&ch.solve(&r));
    let cov = kl_cov_part(&xi_zz, chol_logdet(&ch), &state.missing_block(obs));
    if !cov.is_finite() {
        return Err(LinalgError::NotPositiveDefinite {
            context: "imputed covariance block",
        }
        .into());
    }
    Ok(KlParts { mean, cov })
}

pub fn kl_missing(
    state: &ImputationState,
    params: &GaussianParams,
    obs: &IncompleteObservation,
) -> Result<f64> {
    Ok(kl_missing_parts(state, params, obs)?.total())
}

/// One Gauss–Seidel pass over the missing coordinates (ascending), each set
/// to `μ_j − ξ_j'(ŷ_{−j} − μ_{−j}) / ξ_jj`.
pub fn sweep_mean_in_place(
    state: &mut ImputationState,
    params: &GaussianParams,
    obs: &IncompleteObservation,
) {
    let prec = params.sigma().prec().as_matrix();
    let mu = params.mu();
    let p = obs.dim();
    for &j in obs.split().missing() {
        let mut acc = 0.0;
        for k in 0..p {
            if k != j {
                acc += prec[(j, k)] * (state.y_hat[k] - mu[k]);
            }
        }
        state.y_hat[j] = mu[j] - acc / prec[(j, j)];
    }
}

pub fn sweep_mean(
    state: &ImputationState,
    params: &GaussianParams,
    obs: &IncompleteObservation,
) -> ImputationState {
    let mut next = state.clone();
    sweep_mean_in_place(&mut next, params, obs);
    next
}

/// `Σ_j⁻¹` for every coordinate `j` of one covariance, obtained from the
/// precision matrix by the rank-one identity. Shared by every observation
/// fitted against that covariance.
#[derive(Debug, Clone)]
pub struct SubmatrixInverseCache {
    inverses: Vec<SubmatrixInverse>,
}

impl SubmatrixInverseCache {
    pub fn new(pair: &CovPrecisionPair) -> Result<Self> {
        let inverses = (0..pair.dim())
            .map(|j| submatrix_inverse_via_precision(pair, j))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self { inverses })
    }

    pub fn get(&self, j: usize) -> &SubmatrixInverse {
        &self.inverses[j]
    }

    /// How many coordinates needed the direct-inversion fallback.
    pub fn fallbacks(&self) -> usize {
        self.inverses.iter().filter(|s| s.used_fallback).count()
    }
}

/// What happened to each row during a covariance sweep.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CovSweepReport {
    /// Rows replaced by the submatrix-inverse update.
    pub rank_one_rows: usize,
    /// Rows replaced by the closed-form KL row minimizer.
    pub exact_rows: usize,
    /// Rows left unchanged because neither update decreased both objectives.
    pub held_rows: usize,
    /// Covariance part of the KL divergence after the sweep.
    pub kl_cov: f64,
}

impl std::ops::AddAssign for CovSweepReport {
    fn add_assign(&mut self, rhs: Self) {
        self.rank_one_rows += rhs.rank_one_rows;
        self.exact_rows += rhs.exact_rows;
        self.held_rows += rhs.held_rows;
        self.kl_cov += rhs.kl_cov;
    }
}

/// `γ` restricted to the missing block, up to the constant `tr Σ`:
/// `−2 tr Z + tr(Z Ξ_zz Z)`.
fn gamma_block(z_cov: &DMatrix<f64>, xi_zz: &DMatrix<f64>) -> f64 {
    let zx = z_cov * xi_zz;
    -2.0 * z_cov.trace() + zx.component_mul(&z_cov.transpose()).sum()
}

fn slack(v: f64) -> f64 {
    1e-14 * (1.0 + v.abs())
}

fn replace_row(z_cov: &DMatrix<f64>, a: usize, row: &DVector<f64>) -> DMatrix<f64> {
    let mut next = z_cov.clone();
    for b in 0..row.len() {
        next[(a, b)] = row[b];
        next[(b, a)] = row[b];
    }
    next
}

/// One row/column pass over the missing block of `Ŷ` (ascending
/// coordinates), holding the rest of the block fixed at each step.
///
/// Each row first tries `Ŷ_j ← Σ_j − D_{j,−j} Σ_j⁻¹ D_{−j,·}` with
/// `D = Σ − Ŷ`, whose fixed point is the conditional covariance. That
/// update is not a descent step for every matrix, so it is kept only when
/// neither the KL divergence nor `γ` goes up. Otherwise the row is set to
/// the exact KL minimizer with the rest of the block fixed, again only if
/// `γ` does not go up; failing both, the row is left alone.
pub fn sweep_cov_in_place(
    state: &mut ImputationState,
    params: &GaussianParams,
    obs: &IncompleteObservation,
    cache: &SubmatrixInverseCache,
) -> Result<CovSweepReport> {
    let miss = obs.split().missing();
    let l = miss.len();
    let mut report = CovSweepReport::default();
    if l == 0 {
        return Ok(report);
    }
    let p = obs.dim();
    let sigma = params.sigma().cov().as_matrix();
    let prec = params.sigma().prec().as_matrix();
    let xi_zz = select(prec, miss, miss);
    let logdet_xi_zz = chol_logdet(&cholesky(&xi_zz, "missing precision block")?);

    let mut pos = vec![usize::MAX; p];
    for (a, &j) in miss.iter().enumerate() {
        pos[j] = a;
    }

    let mut z_cov = state.missing_block(obs);
    let mut gamma_cur = gamma_block(&z_cov, &xi_zz);
    let mut kl_cur = kl_cov_part(&xi_zz, logdet_xi_zz, &z_cov);

    for (a, &j) in miss.iter().enumerate() {
        let inv = cache.get(j).inv.as_matrix();
        let rest: Vec<usize> = (0..p).filter(|&k| k != j).collect();
        let yhat = |r: usize, c: usize| -> f64 {
            if pos[r] == usize::MAX || pos[c] == usize::MAX {
                0.0
            } else {
                z_cov[(pos[r], pos[c])]
            }
        };
        let d = DVector::from_fn(rest.len(), |i, _| sigma[(rest[i], j)] - yhat(rest[i], j));
        let v = inv * d;
        let rank_one = DVector::from_fn(l, |b, _| {
            let k = miss[b];
            let mut acc = 0.0;
            for (i, &r) in rest.iter().enumerate() {
                acc += v[i] * (sigma[(r, k)] - yhat(r, k));
            }
            sigma[(j, k)] - acc
        });
        let cand = replace_row(&z_cov, a, &rank_one);
        let kl_c = kl_cov_part(&xi_zz, logdet_xi_zz, &cand);
        let gamma_c = gamma_block(&cand, &xi_zz);
        if kl_c.is_finite() && kl_c <= kl_cur + slack(kl_cur) && gamma_c <= gamma_cur + slack(gamma_cur) {
            z_cov = cand;
            kl_cur = kl_c;
            gamma_cur = gamma_c;
            report.rank_one_rows += 1;
            continue;
        }

        // Closed-form minimizer of tr(Ξ_zz Z) − ln|Z| over row `a` with the
        // complementary block C fixed: off-diagonal −C ξ / ξ_jj, diagonal
        // 1/ξ_jj + ξ'Cξ / ξ_jj².
        let xjj = xi_zz[(a, a)];
        let others: Vec<usize> = (0..l).filter(|&b| b != a).collect();
        let mut exact = DVector::zeros(l);
        let mut quad = 0.0;
        for &b in &others {
            let mut cx = 0.0;
            for &c in &others {
                cx += z_cov[(b, c)] * xi_zz[(c, a)];
            }
            exact[b] = -cx / xjj;
            quad += xi_zz[(b, a)] * cx;
        }
        exact[a] = 1.0 / xjj + quad / (xjj * xjj);
        let cand = replace_row(&z_cov, a, &exact);
        let kl_c = kl_cov_part(&xi_zz, logdet_xi_zz, &cand);
        let gamma_c = gamma_block(&cand, &xi_zz);
        if kl_c.is_finite() && kl_c <= kl_cur + slack(kl_cur) && gamma_c <= gamma_cur + slack(gamma_cur) {
            z_cov = cand;
            kl_cur = kl_c;
            gamma_cur = gamma_c;
            report.exact_rows += 1;
        } else {
            report.held_rows += 1;
        }
    }
    state.set_missing_block(obs, &z_cov);
    report.kl_cov = kl_cur;
    Ok(report)
}

pub fn sweep_cov(
    state: &ImputationState,
    params: &GaussianParams,
    obs: &IncompleteObservation,
) -> Result<ImputationState> {
    let cache = SubmatrixInverseCache::new(params.sigma())?;
    let mut next = state.clone();
    sweep_cov_in_place(&mut next, params, obs, &cache)?;
    Ok(next)
}

/// `tr[(Σ − Ŷ) Σ⁻¹ (Σ − Ŷ)]`.
pub fn gamma_surrogate(state: &ImputationState, params: &GaussianParams) -> f64 {
    let d = params.sigma().cov().as_matrix() - &state.y_cov;
    let dx = &d * params.sigma().prec().as_matrix();
    dx.component_mul(&d.transpose()).sum()
}

/// `−½[m ln 2π + ln|Σ_xx| + (ŷ − μ)' Ξ (ŷ − μ)]` with a precomputed
/// `ln|Σ_xx|`.
pub fn observed_loglik_with_logdet(
    params: &GaussianParams,
    obs: &IncompleteObservation,
    state: &ImputationState,
    logdet_observed: f64,
) -> f64 {
    let m = obs.split().n_observed() as f64;
    -0.5 * (m * (2.0 * PI).ln() + logdet_observed + params.mahalanobis_sq(state.y_hat()))
}

/// Observed-data log-density evaluated through the imputed vector. Exact
/// when `ẑ` is the conditional mean and a lower bound otherwise.
pub fn observed_loglik(
    params: &GaussianParams,
    obs: &IncompleteObservation,
    state: &ImputationState,
) -> Result<f64> {
    let logdet = logdet_observed_block(params.sigma(), obs.split())?;
    Ok(observed_loglik_with_logdet(params, obs, state, logdet))
}
