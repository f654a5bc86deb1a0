use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    bic_value, mstep_common_factors, param_count, weighted_stats, FitError, MixtureParams,
    Responsibilities, Result, StateTable,
};
use crate::gaussian::{
    exact_conditional, observed_loglik_with_logdet, sweep_cov_in_place, sweep_mean_in_place,
    ConditionalPlan, GaussianParams, IncompleteObservation, SubmatrixInverseCache,
};
use crate::linalg::{logdet_observed_block, IndexSplit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    /// Exact conditional expectations every iteration.
    Em,
    /// Coordinate sweeps over the stored imputations.
    Pem,
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algorithm::Em => "em",
            Algorithm::Pem => "pem",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub restarts: usize,
    pub seed: u64,
    pub sweeps_per_iter: usize,
    /// Stop when `|l_t − l_{t−1}| ≤ tolerance · |l_t|`.
    pub tolerance: f64,
    pub max_iter: usize,
    /// `Ψ` entries are floored at this multiple of the pooled variance.
    pub psi_floor: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            restarts: 10,
            seed: 0,
            sweeps_per_iter: 1,
            tolerance: 1e-8,
            max_iter: 5000,
            psi_floor: 1e-6,
        }
    }
}

impl FitConfig {
    fn validate(&self) -> Result<()> {
        if self.sweeps_per_iter == 0 {
            return Err(FitError::InvalidInput("sweeps_per_iter must be at least 1".into()));
        }
        if self.max_iter == 0 {
            return Err(FitError::InvalidInput("max_iter must be at least 1".into()));
        }
        if !(self.tolerance >= 0.0) {
            return Err(FitError::InvalidInput("tolerance must be non-negative".into()));
        }
        if !(self.psi_floor > 0.0) {
            return Err(FitError::InvalidInput("psi_floor must be positive".into()));
        }
        Ok(())
    }
}

/// Work done in one outer iteration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationCounters {
    /// p x p covariance inversions (one Woodbury refresh per component).
    pub covariance_inversions: usize,
    /// q x q solves inside those refreshes.
    pub woodbury_solves: usize,
    /// Per-pattern block inversions of the exact E-step.
    pub block_inversions: usize,
    /// Per-pattern `ln|Σ_xx|` factorizations of the partial E-step.
    pub logdet_factorizations: usize,
    /// Rank-one submatrix inverses that fell back to direct inversion.
    pub rank_one_fallbacks: usize,
    pub rank_one_rows: usize,
    pub exact_rows: usize,
    pub held_rows: usize,
}

impl std::ops::AddAssign for IterationCounters {
    fn add_assign(&mut self, rhs: Self) {
        self.covariance_inversions += rhs.covariance_inversions;
        self.woodbury_solves += rhs.woodbury_solves;
        self.block_inversions += rhs.block_inversions;
        self.logdet_factorizations += rhs.logdet_factorizations;
        self.rank_one_fallbacks += rhs.rank_one_fallbacks;
        self.rank_one_rows += rhs.rank_one_rows;
        self.exact_rows += rhs.exact_rows;
        self.held_rows += rhs.held_rows;
    }
}

/// Starting point of one run: the soft assignments that drive the first
/// M-step, and the parameters the first E-step is evaluated at.
#[derive(Debug, Clone, PartialEq)]
pub struct Initialization {
    pub resp: Responsibilities,
    pub params: MixtureParams,
}

impl Initialization {
    /// Deterministic parameters around given responsibilities: equal
    /// weights, pooled means, loadings from the leading eigenvectors of the
    /// pairwise-available covariance.
    pub fn from_responsibilities(
        data: &[IncompleteObservation],
        resp: Responsibilities,
        q: usize,
    ) -> Result<Self> {
        validate_data(data, resp.n_components(), q)?;
        if resp.n_obs() != data.len() {
            return Err(FitError::InvalidInput(format!(
                "{} responsibility rows for {} observations",
                resp.n_obs(),
                data.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = base_params(data, resp.n_components(), q, &mut rng)?;
        Ok(Self { resp, params })
    }
}

pub fn initialize<R: Rng>(
    data: &[IncompleteObservation],
    g: usize,
    q: usize,
    rng: &mut R,
) -> Result<Initialization> {
    validate_data(data, g, q)?;
    let n = data.len();
    let mut w = DMatrix::zeros(n, g);
    for i in 0..n {
        // Dirichlet(1, ..., 1) as normalized unit exponentials.
        let draws: Vec<f64> = (0..g).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        let total: f64 = draws.iter().sum();
        for k in 0..g {
            w[(i, k)] = draws[k] / total;
        }
    }
    let resp = Responsibilities { w };
    let params = base_params(data, g, q, rng)?;
    Ok(Initialization { resp, params })
}

/// Initialization for restart `restart` under `seed`; each restart draws
/// from its own ChaCha stream.
pub fn initialize_seeded(
    data: &[IncompleteObservation],
    g: usize,
    q: usize,
    seed: u64,
    restart: usize,
) -> Result<Initialization> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64);
    initialize(data, g, q, &mut rng)
}

fn validate_data(data: &[IncompleteObservation], g: usize, q: usize) -> Result<()> {
    let Some(first) = data.first() else {
        return Err(FitError::InvalidInput("no observations".into()));
    };
    let p = first.dim();
    if let Some(i) = data.iter().position(|o| o.dim() != p) {
        return Err(FitError::InvalidInput(format!(
            "observation {i} has dimension {} (expected {p})",
            data[i].dim()
        )));
    }
    if g == 0 {
        return Err(FitError::InvalidInput("G must be at least 1".into()));
    }
    if data.len() <= g {
        return Err(FitError::InvalidInput(format!(
            "need more observations than components (n = {}, G = {g})",
            data.len()
        )));
    }
    if q >= p {
        return Err(FitError::InvalidInput(format!(
            "need fewer factors than variables (q = {q}, p = {p})"
        )));
    }
    Ok(())
}

/// Per-coordinate mean and variance over the observed entries.
fn pooled_moments(data: &[IncompleteObservation]) -> (DVector<f64>, DVector<f64>) {
    let p = data[0].dim();
    let mut count = vec![0usize; p];
    let mut mean = DVector::<f64>::zeros(p);
    for obs in data {
        for j in 0..p {
            if let Some(v) = obs.value(j) {
                count[j] += 1;
                mean[j] += v;
            }
        }
    }
    for j in 0..p {
        mean[j] /= count[j].max(1) as f64;
    }
    let mut var = DVector::<f64>::zeros(p);
    for obs in data {
        for j in 0..p {
            if let Some(v) = obs.value(j) {
                var[j] += (v - mean[j]).powi(2);
            }
        }
    }
    for j in 0..p {
        var[j] /= count[j].max(1) as f64;
        if !(var[j] > 0.0) {
            var[j] = 1.0;
        }
    }
    (mean, var)
}

pub(crate) fn psi_floor(data: &[IncompleteObservation], scale: f64) -> DVector<f64> {
    pooled_moments(data).1 * scale
}

fn base_params<R: Rng>(
    data: &[IncompleteObservation],
    g: usize,
    q: usize,
    rng: &mut R,
) -> Result<MixtureParams> {
    let p = data[0].dim();
    let (mean, var) = pooled_moments(data);

    // Pairwise-available covariance: each entry from the rows observing both
    // coordinates.
    let mut sum = DMatrix::<f64>::zeros(p, p);
    let mut cnt = DMatrix::<f64>::zeros(p, p);
    for obs in data {
        let idx = obs.split().observed();
        for &a in idx {
            let da = obs.value(a).unwrap() - mean[a];
            for &b in idx {
                sum[(a, b)] += da * (obs.value(b).unwrap() - mean[b]);
                cnt[(a, b)] += 1.0;
            }
        }
    }
    let cov = DMatrix::from_fn(p, p, |a, b| {
        if cnt[(a, b)] > 0.0 {
            sum[(a, b)] / cnt[(a, b)]
        } else {
            0.0
        }
    });

    let mut lambda = DMatrix::zeros(p, q);
    if q > 0 {
        let eig = SymmetricEigen::new((cov.clone() + cov.transpose()) * 0.5);
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let rest = &order[q..];
        let noise = (rest.iter().map(|&k| eig.eigenvalues[k]).sum::<f64>() / rest.len() as f64)
            .max(0.0);
        for (c, &k) in order[..q].iter().enumerate() {
            let e = eig.eigenvalues[k];
            let scale = (e - noise).max(0.05 * e.max(0.0)).sqrt();
            for j in 0..p {
                lambda[(j, c)] = eig.eigenvectors[(j, k)] * scale;
            }
        }
        let usable = lambda.iter().all(|v| v.is_finite()) && lambda.amax() > 0.0;
        if !usable {
            lambda = DMatrix::from_fn(p, q, |j, _| {
                0.1 * var[j].sqrt() * rng.sample::<f64, _>(StandardNormal)
            });
        }
    }

    let psi = DVector::from_fn(p, |j, _| {
        let common: f64 = lambda.row(j).iter().map(|v| v * v).sum();
        (var[j] - common).max(0.1 * var[j])
    });
    MixtureParams::new(
        vec![1.0 / g as f64; g],
        vec![mean; g],
        lambda,
        vec![psi; g],
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub algorithm: Algorithm,
    pub params: MixtureParams,
    pub resp: Responsibilities,
    pub map_labels: Vec<usize>,
    /// Objective after each E-step. For EM this is the observed-data
    /// log-likelihood; for PEM the free energy of the stored imputations,
    /// which is a lower bound that meets the log-likelihood at the exact
    /// conditionals.
    pub loglik_trace: Vec<f64>,
    /// Observed-data log-likelihood at the final parameters.
    pub loglik: f64,
    pub bic: f64,
    pub n_params: usize,
    pub n_obs: usize,
    pub iterations: usize,
    pub converged: bool,
    pub restarts_used: usize,
    pub failed_restarts: usize,
    pub best_restart: usize,
    pub distinct_patterns: usize,
    pub counters: Vec<IterationCounters>,
}

impl FitResult {
    /// `E[u | y, g]` under each row's MAP component with the exact
    /// conditional imputation: `β_g (ŷ − μ_g)` with `β_g = Λ'Σ_g⁻¹`.
    pub fn factor_scores(&self, data: &[IncompleteObservation]) -> Result<DMatrix<f64>> {
        let comps = self.params.components()?;
        let lambda_t = self.params.lambda().transpose();
        let betas: Vec<DMatrix<f64>> = comps
            .iter()
            .map(|c| &lambda_t * c.sigma().prec().as_matrix())
            .collect();
        let q = self.params.n_factors();
        let mut scores = DMatrix::zeros(data.len(), q);
        for (i, obs) in data.iter().enumerate() {
            let g = self.map_labels[i];
            let st = exact_conditional(&comps[g], obs)?;
            let u = &betas[g] * (st.y_hat() - comps[g].mu());
            scores.set_row(i, &u.transpose());
        }
        Ok(scores)
    }
}

struct Patterns {
    splits: Vec<IndexSplit>,
    rows: Vec<Vec<usize>>,
}

impl Patterns {
    fn new(data: &[IncompleteObservation]) -> Self {
        let mut groups: BTreeMap<Vec<bool>, Vec<usize>> = BTreeMap::new();
        for (i, obs) in data.iter().enumerate() {
            groups.entry(obs.mask().to_vec()).or_default().push(i);
        }
        let mut splits = Vec::with_capacity(groups.len());
        let mut rows = Vec::with_capacity(groups.len());
        for (_, idx) in groups {
            splits.push(data[idx[0]].split().clone());
            rows.push(idx);
        }
        Self { splits, rows }
    }
}

fn refresh(params: &MixtureParams, counters: &mut IterationCounters) -> Result<Vec<GaussianParams>> {
    let comps = params.components()?;
    counters.covariance_inversions += comps.len();
    if params.n_factors() > 0 {
        counters.woodbury_solves += comps.len();
    }
    Ok(comps)
}

/// Exact E-step: one plan per (component, pattern).
fn exact_estep(
    params: &MixtureParams,
    comps: &[GaussianParams],
    data: &[IncompleteObservation],
    patterns: &Patterns,
    states: &mut StateTable,
    counters: &mut IterationCounters,
) -> Result<DMatrix<f64>> {
    let mut terms = DMatrix::zeros(data.len(), comps.len());
    for (g, comp) in comps.iter().enumerate() {
        let ln_pi = params.pi()[g].ln();
        for (split, rows) in patterns.splits.iter().zip(&patterns.rows) {
            let plan = ConditionalPlan::new(comp, split)?;
            if split.n_missing() > 0 {
                counters.block_inversions += 1;
            }
            for &i in rows {
                let st = plan.apply(comp, &data[i]);
                terms[(i, g)] =
                    ln_pi + observed_loglik_with_logdet(comp, &data[i], &st, plan.logdet_observed());
                states.set(i, g, st);
            }
        }
    }
    Ok(terms)
}

/// Partial E-step: sweeps over the stored imputations, and log terms that
/// subtract the remaining covariance part of the KL divergence.
fn partial_estep(
    params: &MixtureParams,
    comps: &[GaussianParams],
    data: &[IncompleteObservation],
    patterns: &Patterns,
    sweeps: usize,
    states: &mut StateTable,
    counters: &mut IterationCounters,
) -> Result<DMatrix<f64>> {
    let mut terms = DMatrix::zeros(data.len(), comps.len());
    for (g, comp) in comps.iter().enumerate() {
        let ln_pi = params.pi()[g].ln();
        let cache = SubmatrixInverseCache::new(comp.sigma())?;
        counters.rank_one_fallbacks += cache.fallbacks();
        for (split, rows) in patterns.splits.iter().zip(&patterns.rows) {
            let logdet = logdet_observed_block(comp.sigma(), split)?;
            if split.n_missing() > 0 {
                counters.logdet_factorizations += 1;
            }
            for &i in rows {
                let obs = &data[i];
                let st = states.get_mut(i, g);
                let mut kl_cov = 0.0;
                for _ in 0..sweeps {
                    sweep_mean_in_place(st, comp, obs);
                    let rep = sweep_cov_in_place(st, comp, obs, &cache)?;
                    counters.rank_one_rows += rep.rank_one_rows;
                    counters.exact_rows += rep.exact_rows;
                    counters.held_rows += rep.held_rows;
                    kl_cov = rep.kl_cov;
                }
                terms[(i, g)] = ln_pi + observed_loglik_with_logdet(comp, obs, st, logdet) - kl_cov;
            }
        }
    }
    Ok(terms)
}

/// Runs one fit from a fixed initialization. The first M-step uses
/// `init.resp`; the E-step before it is evaluated at `init.params`.
pub fn fit_from_init(
    data: &[IncompleteObservation],
    init: &Initialization,
    algorithm: Algorithm,
    config: &FitConfig,
) -> Result<FitResult> {
    config.validate()?;
    let g = init.params.n_components();
    let q = init.params.n_factors();
    validate_data(data, g, q)?;
    if init.params.dim() != data[0].dim() || init.resp.n_obs() != data.len() || init.resp.n_components() != g {
        return Err(FitError::InvalidInput("initialization does not match the data".into()));
    }
    let n = data.len();
    let floor = psi_floor(data, config.psi_floor);
    let min_mass = ((q + 1) as f64).max(2.0);
    let patterns = Patterns::new(data);

    let estep = |params: &MixtureParams,
                 comps: &[GaussianParams],
                 states: &mut StateTable,
                 counters: &mut IterationCounters|
     -> Result<DMatrix<f64>> {
        match algorithm {
            Algorithm::Em => exact_estep(params, comps, data, &patterns, states, counters),
            Algorithm::Pem => partial_estep(
                params,
                comps,
                data,
                &patterns,
                config.sweeps_per_iter,
                states,
                counters,
            ),
        }
    };

    let mut scratch = IterationCounters::default();
    let mut params = init.params.clone();
    let mut comps = refresh(&params, &mut scratch)?;
    let mut states = StateTable::initial(&comps, data);
    estep(&params, &comps, &mut states, &mut scratch)?;
    let stats = weighted_stats(data, &states, &init.resp, min_mass)?;
    params = mstep_common_factors(&stats, &params, &comps, &floor)?;

    let mut trace = Vec::new();
    let mut counters = Vec::new();
    let mut converged = false;
    let mut resp;
    loop {
        let mut c = IterationCounters::default();
        comps = refresh(&params, &mut c)?;
        let terms = estep(&params, &comps, &mut states, &mut c)?;
        let (r, lse) = Responsibilities::from_log_terms(&terms)?;
        resp = r;
        let obj: f64 = lse.iter().sum();
        if !obj.is_finite() {
            return Err(FitError::Numerical(
                crate::gaussian::GaussianError::InvalidState("objective is not finite".into()),
            ));
        }
        counters.push(c);
        if let Some(&prev) = trace.last() {
            let prev: f64 = prev;
            if (obj - prev).abs() <= config.tolerance * obj.abs() {
                converged = true;
            }
        }
        trace.push(obj);
        if converged || trace.len() >= config.max_iter {
            break;
        }
        let stats = weighted_stats(data, &states, &resp, min_mass)?;
        params = mstep_common_factors(&stats, &params, &comps, &floor)?;
    }

    let loglik = match algorithm {
        Algorithm::Em => *trace.last().unwrap(),
        Algorithm::Pem => {
            let mut c = IterationCounters::default();
            let terms = exact_estep(&params, &comps, data, &patterns, &mut states, &mut c)?;
            let (r, lse) = Responsibilities::from_log_terms(&terms)?;
            resp = r;
            lse.iter().sum()
        }
    };
    let n_params = param_count(g, q, params.dim());
    Ok(FitResult {
        algorithm,
        map_labels: resp.map_labels(),
        params,
        resp,
        iterations: trace.len(),
        loglik_trace: trace,
        loglik,
        bic: bic_value(loglik, n_params, n),
        n_params,
        n_obs: n,
        converged,
        restarts_used: 1,
        failed_restarts: 0,
        best_restart: 0,
        distinct_patterns: patterns.splits.len(),
        counters,
    })
}

/// Best of `config.restarts` seeded initializations by final
/// log-likelihood. Runs that hit a numerical failure are skipped; if every
/// run fails the last error is returned.
pub fn fit(
    data: &[IncompleteObservation],
    g: usize,
    q: usize,
    algorithm: Algorithm,
    config: &FitConfig,
) -> Result<FitResult> {
    config.validate()?;
    validate_data(data, g, q)?;
    let attempts = config.restarts.max(1);
    let mut best: Option<FitResult> = None;
    let mut failed = 0;
    let mut last_err = None;
    for r in 0..attempts {
        let init = initialize_seeded(data, g, q, config.seed, r)?;
        match fit_from_init(data, &init, algorithm, config) {
            Ok(mut res) => {
                res.best_restart = r;
                if best.as_ref().is_none_or(|b| res.loglik > b.loglik) {
                    best = Some(res);
                }
            }
            Err(e) if e.is_restartable() => {
                failed += 1;
                last_err = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    match best {
        Some(mut res) => {
            res.restarts_used = attempts;
            res.failed_restarts = failed;
            Ok(res)
        }
        None => Err(FitError::AllRestartsFailed {
            attempts,
            last: Box::new(last_err.expect("at least one attempt")),
        }),
    }
}

pub fn fit_em(data: &[IncompleteObservation], g: usize, q: usize, config: &FitConfig) -> Result<FitResult> {
    fit(data, g, q, Algorithm::Em, config)
}

pub fn fit_pem(data: &[IncompleteObservation], g: usize, q: usize, config: &FitConfig) -> Result<FitResult> {
    fit(data, g, q, Algorithm::Pem, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::label_agreement;

    fn sample(
        rng: &mut ChaCha8Rng,
        params: &MixtureParams,
        n: usize,
        keep: usize,
    ) -> (Vec<IncompleteObservation>, Vec<usize>) {
        let p = params.dim();
        let q = params.n_factors();
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut g = params.n_components() - 1;
            for (k, &w) in params.pi().iter().enumerate() {
                acc += w;
                if u < acc {
                    g = k;
                    break;
                }
            }
            let f = DVector::from_fn(q, |_, _| rng.sample::<f64, _>(StandardNormal));
            let lf = params.lambda() * f;
            let y: Vec<f64> = (0..p)
                .map(|j| {
                    params.mu(g)[j]
                        + lf[j]
                        + params.psi(g)[j].sqrt() * rng.sample::<f64, _>(StandardNormal)
                })
                .collect();
            let mask: Vec<bool> = (0..p).map(|j| (j + i) % p < keep).collect();
            let vals = y.iter().zip(&mask).map(|(&v, &m)| if m { v } else { f64::NAN }).collect();
            data.push(IncompleteObservation::new(vals, mask).unwrap());
            labels.push(g);
        }
        (data, labels)
    }

    fn truth(p: usize) -> MixtureParams {
        MixtureParams::new(
            vec![0.4, 0.6],
            vec![DVector::from_element(p, -1.5), DVector::from_element(p, 1.5)],
            DMatrix::from_fn(p, 1, |j, _| 0.6 + 0.05 * j as f64),
            vec![DVector::from_element(p, 0.5), DVector::from_element(p, 0.8)],
        )
        .unwrap()
    }

    #[test]
    fn diagonal_single_component_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = 3;
        let data: Vec<_> = (0..50)
            .map(|_| {
                IncompleteObservation::complete((0..p).map(|j| j as f64 + rng.sample::<f64, _>(StandardNormal)).collect())
                    .unwrap()
            })
            .collect();
        let res = fit_em(&data, 1, 0, &FitConfig { restarts: 1, ..FitConfig::default() }).unwrap();
        assert!(res.converged);
        assert!(res.iterations <= 2);
        for j in 0..p {
            let m = data.iter().map(|o| o.value(j).unwrap()).sum::<f64>() / 50.0;
            let v = data.iter().map(|o| (o.value(j).unwrap() - m).powi(2)).sum::<f64>() / 50.0;
            assert!((res.params.mu(0)[j] - m).abs() < 1e-12);
            assert!((res.params.psi(0)[j] - v).abs() < 1e-12);
        }
    }

    #[test]
    fn em_trace_is_monotone_with_missing_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (data, _) = sample(&mut rng, &truth(6), 200, 4);
        let res = fit_em(&data, 2, 1, &FitConfig { restarts: 2, ..FitConfig::default() }).unwrap();
        for w in res.loglik_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-8, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn pem_matches_em_on_complete_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (data, _) = sample(&mut rng, &truth(5), 150, 5);
        let init = initialize_seeded(&data, 2, 1, 3, 0).unwrap();
        let cfg = FitConfig::default();
        let em = fit_from_init(&data, &init, Algorithm::Em, &cfg).unwrap();
        let pem = fit_from_init(&data, &init, Algorithm::Pem, &cfg).unwrap();
        assert_eq!(em.loglik_trace.len(), pem.loglik_trace.len());
        for (a, b) in em.loglik_trace.iter().zip(&pem.loglik_trace) {
            assert!((a - b).abs() <= 1e-9 * a.abs());
        }
    }

    #[test]
    fn pem_agrees_with_em_and_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (data, _) = sample(&mut rng, &truth(8), 250, 4);
        let init = initialize_seeded(&data, 2, 1, 11, 0).unwrap();
        let cfg = FitConfig::default();
        let em = fit_from_init(&data, &init, Algorithm::Em, &cfg).unwrap();
        let pem = fit_from_init(&data, &init, Algorithm::Pem, &cfg).unwrap();
        for w in pem.loglik_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-8);
        }
        assert!((em.loglik - pem.loglik).abs() <= 1e-4 * em.loglik.abs());
        assert!(label_agreement(&em.map_labels, &pem.map_labels, 2) >= 0.99);
        // the free-energy trace sits below the log-likelihood
        assert!(*pem.loglik_trace.last().unwrap() <= pem.loglik + 1e-8);
    }

    #[test]
    fn inversion_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (data, _) = sample(&mut rng, &truth(6), 60, 3);
        let init = initialize_seeded(&data, 2, 1, 1, 0).unwrap();
        let cfg = FitConfig { max_iter: 5, ..FitConfig::default() };
        let em = fit_from_init(&data, &init, Algorithm::Em, &cfg).unwrap();
        let pem = fit_from_init(&data, &init, Algorithm::Pem, &cfg).unwrap();
        assert_eq!(em.distinct_patterns, 6);
        for c in &em.counters {
            assert_eq!(c.covariance_inversions, 2);
            assert_eq!(c.block_inversions, 2 * 6);
        }
        for c in &pem.counters {
            assert_eq!(c.covariance_inversions, 2);
            assert_eq!(c.block_inversions, 0);
        }
    }

    #[test]
    fn permuting_initialization_permutes_result() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (data, _) = sample(&mut rng, &truth(5), 120, 5);
        let init = initialize_seeded(&data, 2, 1, 4, 0).unwrap();
        let swapped = Initialization {
            resp: Responsibilities {
                w: DMatrix::from_fn(data.len(), 2, |i, k| init.resp.get(i, 1 - k)),
            },
            params: init.params.permuted(&[1, 0]),
        };
        let cfg = FitConfig { max_iter: 30, ..FitConfig::default() };
        let a = fit_from_init(&data, &init, Algorithm::Em, &cfg).unwrap();
        let b = fit_from_init(&data, &swapped, Algorithm::Em, &cfg).unwrap();
        assert!((a.loglik - b.loglik).abs() < 1e-9 * a.loglik.abs());
        for k in 0..2 {
            assert!((a.params.mu(k) - b.params.mu(1 - k)).amax() < 1e-8);
            assert!((a.params.pi()[k] - b.params.pi()[1 - k]).abs() < 1e-10);
        }
        assert!(a.map_labels.iter().zip(&b.map_labels).all(|(x, y)| *x == 1 - *y));
    }

    #[test]
    fn seeded_fit_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (data, _) = sample(&mut rng, &truth(6), 80, 4);
        let cfg = FitConfig { restarts: 2, max_iter: 50, ..FitConfig::default() };
        let a = fit_pem(&data, 2, 1, &cfg).unwrap();
        let b = fit_pem(&data, 2, 1, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_shapes() {
        let data = vec![IncompleteObservation::complete(vec![1.0, 2.0]).unwrap(); 3];
        assert!(matches!(fit_em(&data, 3, 0, &FitConfig::default()), Err(FitError::InvalidInput(_))));
        assert!(matches!(fit_em(&data, 1, 2, &FitConfig::default()), Err(FitError::InvalidInput(_))));
    }

    #[test]
    fn dirichlet_rows_are_probabilities() {
        let data = vec![IncompleteObservation::complete(vec![1.0, 2.0, 0.0]).unwrap(); 10];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let init = initialize(&data, 4, 1, &mut rng).unwrap();
        for row in init.resp.matrix().row_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }
}
