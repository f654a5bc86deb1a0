//! Dense symmetric-matrix utilities built around covariance/precision pairs.
//!
//! Everything here works on small dense matrices (a dozen or two rows). The
//! central type is [`CovPrecisionPair`], which keeps a covariance matrix, its
//! inverse and its log-determinant together so that conditional Gaussian
//! quantities can be read off precision blocks instead of re-inverting
//! covariance blocks for every missingness pattern.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

/// Relative tolerance used when checking symmetry of incoming matrices.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Below this magnitude the rank-one denominator `1 - xi_j' sigma_j` is
/// treated as degenerate and the principal submatrix is inverted directly.
pub const RANK_ONE_DENOM_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("{context}: matrix is not positive definite")]
    NotPositiveDefinite { context: &'static str },
    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("operation needs dimension >= {needed}, got {dim}")]
    DimensionTooSmall { dim: usize, needed: usize },
    #[error("invalid index split: {0}")]
    InvalidSplit(String),
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

pub type Result<T> = std::result::Result<T, LinalgError>;

/// A dense real symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Wraps `m` after checking it is square and symmetric to within
    /// [`SYMMETRY_TOL`] relative to its largest entry.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(LinalgError::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        let scale = m.amax().max(f64::MIN_POSITIVE);
        let asym = max_asymmetry(&m);
        if asym > SYMMETRY_TOL * scale {
            return Err(LinalgError::NotSymmetric { asymmetry: asym });
        }
        Ok(Self(m))
    }

    /// Symmetrizes `m` as `(m + m') / 2`.
    pub fn symmetrized(m: DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "symmetrized needs a square matrix");
        let t = m.transpose();
        Self((m + t) * 0.5)
    }

    pub fn identity(dim: usize) -> Self {
        Self(DMatrix::identity(dim, dim))
    }

    pub fn from_diagonal(diag: &DVector<f64>) -> Self {
        Self(DMatrix::from_diagonal(diag))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    /// Extracts the principal block on `idx` (rows and columns).
    pub fn block(&self, idx: &[usize]) -> SymMatrix {
        SymMatrix(select(&self.0, idx, idx))
    }
}

impl AsRef<DMatrix<f64>> for SymMatrix {
    fn as_ref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Copies the `rows` x `cols` sub-block of `m`.
pub fn select(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

pub fn select_vec(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_fn(idx.len(), |i, _| v[idx[i]])
}

/// Cholesky factorization used as the positive-definiteness test.
pub fn cholesky(m: &DMatrix<f64>, context: &'static str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone()).ok_or(LinalgError::NotPositiveDefinite { context })
}

pub fn chol_logdet(ch: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Log-determinant of a positive definite matrix via Cholesky.
pub fn logdet_spd(m: &DMatrix<f64>, context: &'static str) -> Result<f64> {
    Ok(chol_logdet(&cholesky(m, context)?))
}

/// Inverse of a positive definite matrix via Cholesky, symmetrized.
pub fn inverse_spd(m: &DMatrix<f64>, context: &'static str) -> Result<SymMatrix> {
    Ok(SymMatrix::symmetrized(cholesky(m, context)?.inverse()))
}

/// Observed/missing partition of the coordinates `0..dim`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IndexSplit {
    observed: Vec<usize>,
    missing: Vec<usize>,
}

impl IndexSplit {
    /// Both lists must be sorted, disjoint and cover `0..dim`; `observed`
    /// must be non-empty.
    pub fn new(observed: Vec<usize>, missing: Vec<usize>, dim: usize) -> Result<Self> {
        if observed.is_empty() {
            return Err(LinalgError::InvalidSplit("no observed coordinates".into()));
        }
        if observed.len() + missing.len() != dim {
            return Err(LinalgError::InvalidSplit(format!(
                "{} observed + {} missing != dimension {dim}",
                observed.len(),
                missing.len()
            )));
        }
        let mut seen = vec![false; dim];
        for list in [&observed, &missing] {
            if list.windows(2).any(|w| w[0] >= w[1]) {
                return Err(LinalgError::InvalidSplit("indices must be strictly ascending".into()));
            }
            for &i in list.iter() {
                if i >= dim {
                    return Err(LinalgError::IndexOutOfRange { index: i, dim });
                }
                if seen[i] {
                    return Err(LinalgError::InvalidSplit(format!("index {i} appears twice")));
                }
                seen[i] = true;
            }
        }
        Ok(Self { observed, missing })
    }

    /// `mask[j] == true` means coordinate `j` is observed.
    pub fn from_mask(mask: &[bool]) -> Result<Self> {
        let observed = (0..mask.len()).filter(|&j| mask[j]).collect();
        let missing = (0..mask.len()).filter(|&j| !mask[j]).collect();
        Self::new(observed, missing, mask.len())
    }

    pub fn observed(&self) -> &[usize] {
        &self.observed
    }

    pub fn missing(&self) -> &[usize] {
        &self.missing
    }

    pub fn dim(&self) -> usize {
        self.observed.len() + self.missing.len()
    }

    pub fn n_observed(&self) -> usize {
        self.observed.len()
    }

    pub fn n_missing(&self) -> usize {
        self.missing.len()
    }
}

/// A covariance matrix travelling with its inverse and log-determinant.
#[derive(Debug, Clone, PartialEq)]
pub struct CovPrecisionPair {
    cov: SymMatrix,
    prec: SymMatrix,
    logdet_cov: f64,
}

impl CovPrecisionPair {
    /// Factorizes `cov` (which must be positive definite) and stores its
    /// inverse and log-determinant.
    pub fn from_cov(cov: SymMatrix) -> Result<Self> {
        let ch = cholesky(cov.as_matrix(), "covariance")?;
        let logdet_cov = chol_logdet(&ch);
        let prec = SymMatrix::symmetrized(ch.inverse());
        Ok(Self {
            cov,
            prec,
            logdet_cov,
        })
    }

    /// Builds the pair for `Λ Λ' + diag(ψ)` through the Woodbury identity,
    /// so only a `q x q` system (`I + Λ' Ψ⁻¹ Λ`) is factorized.
    pub fn from_factor_model(lambda: &DMatrix<f64>, psi: &DVector<f64>) -> Result<Self> {
        let p = lambda.nrows();
        if psi.len() != p {
            return Err(LinalgError::DimensionMismatch {
                expected: p,
                found: psi.len(),
            });
        }
        if psi.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(LinalgError::NotPositiveDefinite {
                context: "diagonal noise variances",
            });
        }
        let q = lambda.ncols();
        let psi_inv = psi.map(|v| 1.0 / v);
        // Ψ⁻¹Λ
        let mut scaled = lambda.clone();
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            row *= psi_inv[i];
        }
        let mut core = lambda.transpose() * &scaled;
        for k in 0..q {
            core[(k, k)] += 1.0;
        }
        let ch = cholesky(&core, "Woodbury core I + Λ'Ψ⁻¹Λ")?;
        let logdet_cov = psi.iter().map(|v| v.ln()).sum::<f64>() + chol_logdet(&ch);
        let correction = &scaled * ch.solve(&scaled.transpose());
        let mut prec = -correction;
        for i in 0..p {
            prec[(i, i)] += psi_inv[i];
        }
        let cov = lambda * lambda.transpose() + DMatrix::from_diagonal(psi);
        Ok(Self {
            cov: SymMatrix::symmetrized(cov),
            prec: SymMatrix::symmetrized(prec),
            logdet_cov,
        })
    }

    pub fn cov(&self) -> &SymMatrix {
        &self.cov
    }

    pub fn prec(&self) -> &SymMatrix {
        &self.prec
    }

    pub fn logdet_cov(&self) -> f64 {
        self.logdet_cov
    }

    pub fn dim(&self) -> usize {
        self.cov.dim()
    }
}

/// The pieces of a symmetric matrix around coordinate `j`: the principal
/// submatrix with row and column `j` removed, the diagonal entry and the
/// rest of row `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrincipalParts {
    pub sub: SymMatrix,
    pub diag: f64,
    pub row: DVector<f64>,
}

fn others(dim: usize, j: usize) -> Vec<usize> {
    (0..dim).filter(|&k| k != j).collect()
}

/// Deletes row and column `j` (0-based).
pub fn principal_submatrix(m: &SymMatrix, j: usize) -> Result<PrincipalParts> {
    let dim = m.dim();
    if dim < 2 {
        return Err(LinalgError::DimensionTooSmall { dim, needed: 2 });
    }
    if j >= dim {
        return Err(LinalgError::IndexOutOfRange { index: j, dim });
    }
    let rest = others(dim, j);
    Ok(PrincipalParts {
        sub: m.block(&rest),
        diag: m.get(j, j),
        row: DVector::from_fn(rest.len(), |i, _| m.get(j, rest[i])),
    })
}

fn check_split(dim: usize, split: &IndexSplit, need_missing: bool) -> Result<()> {
    if split.dim() != dim {
        return Err(LinalgError::DimensionMismatch {
            expected: dim,
            found: split.dim(),
        });
    }
    if need_missing && split.missing().is_empty() {
        return Err(LinalgError::InvalidSplit("no missing coordinates".into()));
    }
    Ok(())
}

/// `Σ_zz − Σ_zx Σ_xx⁻¹ Σ_xz`, computed from covariance blocks.
pub fn schur_complement(m: &SymMatrix, split: &IndexSplit) -> Result<SymMatrix> {
    check_split(m.dim(), split, true)?;
    let (x, z) = (split.observed(), split.missing());
    let sxx = select(m.as_matrix(), x, x);
    let sxz = select(m.as_matrix(), x, z);
    let szz = select(m.as_matrix(), z, z);
    let ch = cholesky(&sxx, "observed covariance block")?;
    let schur = szz - sxz.transpose() * ch.solve(&sxz);
    Ok(SymMatrix::symmetrized(schur))
}

/// Conditional covariance `Σ_z.x = Ξ_zz⁻¹` and regression coefficients
/// `Σ_zx Σ_xx⁻¹ = −Ξ_zz⁻¹ Ξ_zx`, using only precision blocks. The one
/// factorization is of the missing block.
pub fn schur_via_precision(
    pair: &CovPrecisionPair,
    split: &IndexSplit,
) -> Result<(SymMatrix, DMatrix<f64>)> {
    check_split(pair.dim(), split, true)?;
    let (x, z) = (split.observed(), split.missing());
    let prec = pair.prec().as_matrix();
    let xzz = select(prec, z, z);
    let xzx = select(prec, z, x);
    let ch = cholesky(&xzz, "missing precision block")?;
    let cond = SymMatrix::symmetrized(ch.inverse());
    let coef = -ch.solve(&xzx);
    Ok((cond, coef))
}

/// Result of [`submatrix_inverse_via_precision`].
#[derive(Debug, Clone, PartialEq)]
pub struct SubmatrixInverse {
    pub inv: SymMatrix,
    /// True when the rank-one route was degenerate and `Σ_j` was inverted
    /// directly.
    pub used_fallback: bool,
}

/// Inverse of the principal submatrix `Σ_j` from the precision matrix:
/// `Σ_j⁻¹ = [I + ξ_j σ_j' / (1 − ξ_j'σ_j)] Ξ_j`.
pub fn submatrix_inverse_via_precision(
    pair: &CovPrecisionPair,
    j: usize,
) -> Result<SubmatrixInverse> {
    let cov = principal_submatrix(pair.cov(), j)?;
    let prec = principal_submatrix(pair.prec(), j)?;
    let denom = 1.0 - prec.row.dot(&cov.row);
    if denom.abs() < RANK_ONE_DENOM_TOL {
        return Ok(SubmatrixInverse {
            inv: inverse_spd(cov.sub.as_matrix(), "principal submatrix")?,
            used_fallback: true,
        });
    }
    let xi_j = prec.sub.as_matrix();
    // (I + a b'/d) Ξ_j = Ξ_j + a (b' Ξ_j) / d
    let bt_xi = cov.row.transpose() * xi_j;
    let inv = xi_j + (&prec.row * bt_xi) / denom;
    Ok(SubmatrixInverse {
        inv: SymMatrix::symmetrized(inv),
        used_fallback: false,
    })
}

/// `ln|Σ_xx|`. Uses `ln|Σ| + ln|Ξ_zz|` when the missing block is no larger
/// than the observed block, and factorizes `Σ_xx` directly otherwise.
pub fn logdet_observed_block(pair: &CovPrecisionPair, split: &IndexSplit) -> Result<f64> {
    check_split(pair.dim(), split, false)?;
    let (x, z) = (split.observed(), split.missing());
    if z.is_empty() {
        return Ok(pair.logdet_cov());
    }
    if z.len() > x.len() {
        return logdet_spd(&select(pair.cov().as_matrix(), x, x), "observed covariance block");
    }
    let xzz = select(pair.prec().as_matrix(), z, z);
    Ok(pair.logdet_cov() + logdet_spd(&xzz, "missing precision block")?)
}

/// `y'S⁻¹y` split as `y_x'S_xx⁻¹y_x` plus
/// `(y_z − S_zx S_xx⁻¹ y_x)' S_z.x⁻¹ (y_z − S_zx S_xx⁻¹ y_x)`.
pub fn split_quadratic_form(m: &SymMatrix, split: &IndexSplit, y: &DVector<f64>) -> Result<(f64, f64)> {
    check_split(m.dim(), split, true)?;
    if y.len() != m.dim() {
        return Err(LinalgError::DimensionMismatch {
            expected: m.dim(),
            found: y.len(),
        });
    }
    let (x, z) = (split.observed(), split.missing());
    let sxx = select(m.as_matrix(), x, x);
    let sxz = select(m.as_matrix(), x, z);
    let ch = cholesky(&sxx, "observed covariance block")?;
    let yx = select_vec(y, x);
    let solved = ch.solve(&yx);
    let resid = select_vec(y, z) - sxz.transpose() * &solved;
    let schur = schur_complement(m, split)?;
    let sch = cholesky(schur.as_matrix(), "schur complement")?;
    Ok((yx.dot(&solved), resid.dot(&sch.solve(&resid))))
}

/// `h(Θ) = tr{(S − Θ̃) S⁻¹ (S − Θ̃)}` where `Θ̃` holds `Θ` on the missing
/// block of `split` and zeros elsewhere. Minimized at the Schur complement
/// of the observed block, with minimum `tr{S_xx⁻¹ S_xz S_zx} + tr{S_xx}`.
pub fn schur_objective(pair: &CovPrecisionPair, split: &IndexSplit, theta: &DMatrix<f64>) -> Result<f64> {
    check_split(pair.dim(), split, true)?;
    let z = split.missing();
    if theta.shape() != (z.len(), z.len()) {
        return Err(LinalgError::DimensionMismatch {
            expected: z.len(),
            found: theta.nrows(),
        });
    }
    let mut d = pair.cov().as_matrix().clone();
    for (a, &i) in z.iter().enumerate() {
        for (b, &k) in z.iter().enumerate() {
            d[(i, k)] -= theta[(a, b)];
        }
    }
    let dx = &d * pair.prec().as_matrix();
    Ok(dx.component_mul(&d.transpose()).sum())
}
