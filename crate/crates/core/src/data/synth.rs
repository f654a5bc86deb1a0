use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{DataError, RatingTable, Result};
use crate::gaussian::IncompleteObservation;
use crate::mixture::MixtureParams;

/// Ground truth for a synthetic block-design data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub groups: usize,
    pub pi: Vec<f64>,
    pub mu: Vec<Vec<f64>>,
    /// `p` rows of `q` loadings.
    pub lambda: Vec<Vec<f64>>,
    pub psi: Vec<Vec<f64>>,
    /// Products rated per consumer.
    pub observed_per_row: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub spec: SyntheticSpec,
    /// Generating component of every row (0-based).
    pub labels: Vec<usize>,
    /// Times each product was rated.
    pub product_counts: Vec<usize>,
}

impl SyntheticSpec {
    /// Random truth on a 1 to 9 liking scale: means around 6, loadings of
    /// moderate size, noise variances between 0.4 and 1.
    pub fn random_truth(n: usize, p: usize, q: usize, groups: usize, k: usize, seed: u64) -> Result<Self> {
        if groups == 0 || p == 0 {
            return Err(DataError::InvalidSpec("need p >= 1 and G >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let raw: Vec<f64> = (0..groups).map(|_| 1.0 + 0.5 * rng.random::<f64>()).collect();
        let total: f64 = raw.iter().sum();
        let pi = raw.iter().map(|w| w / total).collect();
        let mu = (0..groups)
            .map(|_| (0..p).map(|_| 6.0 + 1.2 * rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let lambda = (0..p)
            .map(|_| (0..q).map(|_| 0.8 * rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let psi = (0..groups)
            .map(|_| (0..p).map(|_| 0.4 + 0.6 * rng.random::<f64>()).collect())
            .collect();
        let spec = Self {
            n,
            p,
            q,
            groups,
            pi,
            mu,
            lambda,
            psi,
            observed_per_row: k,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// 369 consumers, 12 products, 6 rated each.
    pub fn study_shaped(groups: usize, q: usize, seed: u64) -> Result<Self> {
        Self::random_truth(369, 12, q, groups, 6, seed)
    }

    pub fn params(&self) -> Result<MixtureParams> {
        if self.lambda.len() != self.p || self.lambda.iter().any(|r| r.len() != self.q) {
            return Err(DataError::InvalidSpec("lambda must be p rows of q entries".into()));
        }
        if self.pi.len() != self.groups || self.mu.len() != self.groups || self.psi.len() != self.groups {
            return Err(DataError::InvalidSpec("pi, mu and psi need one entry per group".into()));
        }
        let lambda = DMatrix::from_fn(self.p, self.q, |i, j| self.lambda[i][j]);
        MixtureParams::new(
            self.pi.clone(),
            self.mu.iter().map(|m| DVector::from_vec(m.clone())).collect(),
            lambda,
            self.psi.iter().map(|s| DVector::from_vec(s.clone())).collect(),
        )
        .map_err(|e| DataError::InvalidSpec(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(DataError::InvalidSpec("n must be positive".into()));
        }
        if self.observed_per_row == 0 || self.observed_per_row > self.p {
            return Err(DataError::InvalidSpec(format!(
                "observed_per_row must be in 1..={}, got {}",
                self.p, self.observed_per_row
            )));
        }
        self.params().map(|_| ())
    }
}

fn product_name(j: usize, p: usize) -> String {
    if p <= 26 {
        char::from(b'A' + j as u8).to_string()
    } else {
        format!("P{}", j + 1)
    }
}

/// Draws rows from the truth and keeps `k` entries per row. Each row rates
/// the `k` products rated least so far (ties broken at random), so product
/// counts never differ by more than one.
pub fn generate_bib(spec: &SyntheticSpec) -> Result<(RatingTable, TruthRecord)> {
    let params = spec.params()?;
    spec.validate()?;
    let (n, p, q, k) = (spec.n, spec.p, spec.q, spec.observed_per_row);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut counts = vec![0usize; p];
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut order: Vec<usize> = (0..p).collect();
    for _ in 0..n {
        let u: f64 = rng.random();
        let mut g = spec.groups - 1;
        let mut acc = 0.0;
        for (c, &w) in params.pi().iter().enumerate() {
            acc += w;
            if u < acc {
                g = c;
                break;
            }
        }
        let f = DVector::from_fn(q, |_, _| rng.sample::<f64, _>(StandardNormal));
        let lf = params.lambda() * f;
        let y: Vec<f64> = (0..p)
            .map(|j| params.mu(g)[j] + lf[j] + params.psi(g)[j].sqrt() * rng.sample::<f64, _>(StandardNormal))
            .collect();

        order.shuffle(&mut rng);
        order.sort_by_key(|&j| counts[j]);
        let mut mask = vec![false; p];
        for &j in &order[..k] {
            mask[j] = true;
            counts[j] += 1;
        }
        rows.push(IncompleteObservation::new(y, mask)?);
        labels.push(g);
    }
    let table = RatingTable {
        product_names: (0..p).map(|j| product_name(j, p)).collect(),
        consumer_ids: (1..=n).map(|i| i.to_string()).collect(),
        rows,
    };
    let truth = TruthRecord {
        spec: spec.clone(),
        labels,
        product_counts: counts,
    };
    Ok((table, truth))
}
