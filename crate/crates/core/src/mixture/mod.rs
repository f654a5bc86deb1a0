//! Mixture of factor analyzers with one loading matrix shared by all
//! components: `Σ_g = Λ Λ' + Ψ_g`.

mod fit;
mod select;

pub use fit::{
    fit, fit_em, fit_from_init, fit_pem, initialize, initialize_seeded, Algorithm, FitConfig,
    FitResult, Initialization, IterationCounters,
};
pub use select::{
    bic, bic_value, label_agreement, model_search, param_count, BicConvention, SearchCell,
    SearchConfig, SearchResult,
};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::gaussian::{
    exact_conditional, observed_loglik, GaussianError, GaussianParams, ImputationState,
    IncompleteObservation,
};
use crate::linalg::{CovPrecisionPair, LinalgError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("component {component} collapsed (effective size {mass:.3} < {min})")]
    DegenerateComponent {
        component: usize,
        mass: f64,
        min: f64,
    },
    #[error("observation {observation} has zero density under every component")]
    ResponsibilityUnderflow { observation: usize },
    #[error("loading update is singular at row {row}; try fewer factors")]
    SingularLoadingSystem { row: usize },
    #[error("all {attempts} initializations failed; last error: {last}")]
    AllRestartsFailed { attempts: usize, last: Box<FitError> },
    #[error(transparent)]
    Numerical(#[from] GaussianError),
}

impl From<LinalgError> for FitError {
    fn from(e: LinalgError) -> Self {
        FitError::Numerical(e.into())
    }
}

impl FitError {
    /// Failures that a fresh initialization may avoid.
    pub fn is_restartable(&self) -> bool {
        !matches!(self, FitError::InvalidInput(_))
    }
}

pub type Result<T> = std::result::Result<T, FitError>;

/// Mixing proportions, component means, the common loadings and the
/// per-component diagonal noise variances.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams {
    pi: Vec<f64>,
    mu: Vec<DVector<f64>>,
    lambda: DMatrix<f64>,
    psi: Vec<DVector<f64>>,
}

impl MixtureParams {
    pub fn new(
        pi: Vec<f64>,
        mu: Vec<DVector<f64>>,
        lambda: DMatrix<f64>,
        psi: Vec<DVector<f64>>,
    ) -> Result<Self> {
        let g = pi.len();
        let p = lambda.nrows();
        if g == 0 {
            return Err(FitError::InvalidInput("need at least one component".into()));
        }
        if mu.len() != g || psi.len() != g {
            return Err(FitError::InvalidInput("component counts disagree".into()));
        }
        if lambda.ncols() >= p {
            return Err(FitError::InvalidInput(format!(
                "need q < p, got q = {} with p = {p}",
                lambda.ncols()
            )));
        }
        if mu.iter().any(|m| m.len() != p) || psi.iter().any(|s| s.len() != p) {
            return Err(FitError::InvalidInput("parameter dimensions disagree".into()));
        }
        if pi.iter().any(|&w| !(w > 0.0)) {
            return Err(FitError::InvalidInput("mixing proportions must be positive".into()));
        }
        let total: f64 = pi.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(FitError::InvalidInput(format!(
                "mixing proportions sum to {total}"
            )));
        }
        if psi.iter().flat_map(|s| s.iter()).any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(FitError::InvalidInput("noise variances must be positive".into()));
        }
        let pi = pi.iter().map(|w| w / total).collect();
        Ok(Self { pi, mu, lambda, psi })
    }

    pub fn n_components(&self) -> usize {
        self.pi.len()
    }

    pub fn dim(&self) -> usize {
        self.lambda.nrows()
    }

    pub fn n_factors(&self) -> usize {
        self.lambda.ncols()
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn mu(&self, g: usize) -> &DVector<f64> {
        &self.mu[g]
    }

    pub fn lambda(&self) -> &DMatrix<f64> {
        &self.lambda
    }

    pub fn psi(&self, g: usize) -> &DVector<f64> {
        &self.psi[g]
    }

    /// Component `g` as a Gaussian, with its precision built by Woodbury.
    pub fn component(&self, g: usize) -> Result<GaussianParams> {
        let pair = CovPrecisionPair::from_factor_model(&self.lambda, &self.psi[g])?;
        Ok(GaussianParams::new(self.mu[g].clone(), pair)?)
    }

    pub fn components(&self) -> Result<Vec<GaussianParams>> {
        (0..self.n_components()).map(|g| self.component(g)).collect()
    }

    /// Reorders components; `order[new] = old`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            pi: order.iter().map(|&g| self.pi[g]).collect(),
            mu: order.iter().map(|&g| self.mu[g].clone()).collect(),
            lambda: self.lambda.clone(),
            psi: order.iter().map(|&g| self.psi[g].clone()).collect(),
        }
    }
}

/// Posterior component probabilities, one row per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    w: DMatrix<f64>,
}

impl Responsibilities {
    /// Rows must be non-negative and sum to one (to 1e-10).
    pub fn new(w: DMatrix<f64>) -> Result<Self> {
        for (i, row) in w.row_iter().enumerate() {
            if row.iter().any(|&v| !(0.0..=1.0).contains(&v)) || (row.sum() - 1.0).abs() > 1e-10 {
                return Err(FitError::InvalidInput(format!(
                    "responsibility row {i} is not a probability vector"
                )));
            }
        }
        Ok(Self { w })
    }

    /// Row-wise softmax of `log_terms` (`ln π_g + ln f_g(x_i)`), returning
    /// the per-row log-sum-exp alongside.
    pub fn from_log_terms(log_terms: &DMatrix<f64>) -> Result<(Self, Vec<f64>)> {
        let (n, g) = log_terms.shape();
        let mut w = DMatrix::zeros(n, g);
        let mut lse = Vec::with_capacity(n);
        for i in 0..n {
            let row = log_terms.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if !max.is_finite() {
                return Err(FitError::ResponsibilityUnderflow { observation: i });
            }
            let mut sum = 0.0;
            for k in 0..g {
                let e = (row[k] - max).exp();
                w[(i, k)] = e;
                sum += e;
            }
            for k in 0..g {
                w[(i, k)] /= sum;
            }
            lse.push(max + sum.ln());
        }
        Ok((Self { w }, lse))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn get(&self, i: usize, g: usize) -> f64 {
        self.w[(i, g)]
    }

    pub fn n_obs(&self) -> usize {
        self.w.nrows()
    }

    pub fn n_components(&self) -> usize {
        self.w.ncols()
    }

    /// Maximum a posteriori component per row; ties go to the lower index.
    pub fn map_labels(&self) -> Vec<usize> {
        self.w
            .row_iter()
            .map(|row| {
                let mut best = 0;
                for k in 1..row.len() {
                    if row[k] > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }
}

/// Imputation state for every (observation, component) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTable {
    n_components: usize,
    states: Vec<ImputationState>,
}

impl StateTable {
    pub fn initial(components: &[GaussianParams], data: &[IncompleteObservation]) -> Self {
        let states = data
            .iter()
            .flat_map(|obs| components.iter().map(move |c| ImputationState::initial(c, obs)))
            .collect();
        Self {
            n_components: components.len(),
            states,
        }
    }

    pub fn exact(components: &[GaussianParams], data: &[IncompleteObservation]) -> Result<Self> {
        let mut states = Vec::with_capacity(data.len() * components.len());
        for obs in data {
            for c in components {
                states.push(exact_conditional(c, obs)?);
            }
        }
        Ok(Self {
            n_components: components.len(),
            states,
        })
    }

    pub fn get(&self, i: usize, g: usize) -> &ImputationState {
        &self.states[i * self.n_components + g]
    }

    pub fn get_mut(&mut self, i: usize, g: usize) -> &mut ImputationState {
        &mut self.states[i * self.n_components + g]
    }

    pub fn set(&mut self, i: usize, g: usize, state: ImputationState) {
        self.states[i * self.n_components + g] = state;
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }
}

/// Posterior weights from `ln π_g` plus the observed-data log-density of
/// each component, evaluated through the stored imputations.
pub fn responsibilities(
    params: &MixtureParams,
    data: &[IncompleteObservation],
    states: &StateTable,
) -> Result<Responsibilities> {
    let comps = params.components()?;
    let g = params.n_components();
    let mut terms = DMatrix::zeros(data.len(), g);
    for (i, obs) in data.iter().enumerate() {
        for (k, comp) in comps.iter().enumerate() {
            terms[(i, k)] = params.pi[k].ln() + observed_loglik(comp, obs, states.get(i, k))?;
        }
    }
    Ok(Responsibilities::from_log_terms(&terms)?.0)
}

/// Effective sizes, weighted means and weighted scatter matrices (divisor
/// `n_g`, imputed covariances weighted by the responsibilities).
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentStats {
    pub n_g: Vec<f64>,
    pub ybar: Vec<DVector<f64>>,
    pub scatter: Vec<DMatrix<f64>>,
}

impl ComponentStats {
    pub fn total(&self) -> f64 {
        self.n_g.iter().sum()
    }
}

pub fn weighted_stats(
    data: &[IncompleteObservation],
    states: &StateTable,
    resp: &Responsibilities,
    min_component_mass: f64,
) -> Result<ComponentStats> {
    let g = resp.n_components();
    let p = data.first().map(|o| o.dim()).unwrap_or(0);
    let mut n_g = vec![0.0; g];
    let mut ybar = vec![DVector::zeros(p); g];
    let mut scatter = vec![DMatrix::zeros(p, p); g];
    for k in 0..g {
        for i in 0..data.len() {
            let w = resp.get(i, k);
            n_g[k] += w;
            ybar[k].axpy(w, states.get(i, k).y_hat(), 1.0);
        }
        if n_g[k] < min_component_mass {
            return Err(FitError::DegenerateComponent {
                component: k,
                mass: n_g[k],
                min: min_component_mass,
            });
        }
        ybar[k] /= n_g[k];
        for i in 0..data.len() {
            let w = resp.get(i, k);
            if w == 0.0 {
                continue;
            }
            let st = states.get(i, k);
            let d = st.y_hat() - &ybar[k];
            scatter[k].ger(w, &d, &d, 1.0);
            scatter[k] += st.y_cov() * w;
        }
        scatter[k] /= n_g[k];
        let s = &scatter[k];
        scatter[k] = (s + s.transpose()) * 0.5;
    }
    Ok(ComponentStats { n_g, ybar, scatter })
}

/// One M-step: `π_g = n_g/n`, `μ_g = ȳ_g`, the common loadings from the
/// pooled normal equations, then `Ψ_g` given the new loadings.
///
/// `components` must hold the current `(μ_g, Σ_g)` pairs; they supply
/// `β_g = Λ'Σ_g⁻¹`.
pub fn mstep_common_factors(
    stats: &ComponentStats,
    params: &MixtureParams,
    components: &[GaussianParams],
    psi_floor: &DVector<f64>,
) -> Result<MixtureParams> {
    let g = params.n_components();
    let p = params.dim();
    let q = params.n_factors();
    let lambda = params.lambda();
    let n = stats.total();

    let mut betas = Vec::with_capacity(g);
    let mut thetas = Vec::with_capacity(g);
    let mut beta_s = Vec::with_capacity(g);
    for k in 0..g {
        let beta = lambda.transpose() * components[k].sigma().prec().as_matrix();
        let bs = &beta * &stats.scatter[k];
        let theta = DMatrix::<f64>::identity(q, q) - &beta * lambda + &bs * beta.transpose();
        betas.push(beta);
        thetas.push((theta.clone() + theta.transpose()) * 0.5);
        beta_s.push(bs);
    }

    // Ψ_g⁻¹ is diagonal, so the pq x pq Kronecker system splits into one
    // q x q solve per row of Λ.
    let mut new_lambda = DMatrix::zeros(p, q);
    if q > 0 {
        for i in 0..p {
            let mut a = DMatrix::<f64>::zeros(q, q);
            let mut b = DVector::<f64>::zeros(q);
            for k in 0..g {
                let w = stats.n_g[k] / params.psi(k)[i];
                a += &thetas[k] * w;
                b.axpy(w, &beta_s[k].column(i), 1.0);
            }
            let row = match a.clone().cholesky() {
                Some(ch) => ch.solve(&b),
                None => a
                    .lu()
                    .solve(&b)
                    .ok_or(FitError::SingularLoadingSystem { row: i })?,
            };
            if row.iter().any(|v| !v.is_finite()) {
                return Err(FitError::SingularLoadingSystem { row: i });
            }
            new_lambda.set_row(i, &row.transpose());
        }
    }

    let mut psi = Vec::with_capacity(g);
    for k in 0..g {
        let s = &stats.scatter[k];
        let lb_s = &new_lambda * &beta_s[k];
        let lt_l = &new_lambda * &thetas[k] * new_lambda.transpose();
        psi.push(DVector::from_fn(p, |j, _| {
            let v = s[(j, j)] - 2.0 * lb_s[(j, j)] + lt_l[(j, j)];
            v.max(psi_floor[j])
        }));
    }

    let pi = stats.n_g.iter().map(|&m| m / n).collect();
    MixtureParams::new(pi, stats.ybar.clone(), new_lambda, psi)
}
