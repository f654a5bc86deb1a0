use serde::{Deserialize, Serialize};

use super::{fit, Algorithm, FitConfig, FitError, FitResult, Result};
use crate::gaussian::IncompleteObservation;

/// Free parameters: mixing weights, means, common loadings (less the
/// rotational freedom) and per-component diagonal noise.
pub fn param_count(g: usize, q: usize, p: usize) -> usize {
    (g - 1) + g * p + (p * q - q * q.saturating_sub(1) / 2) + g * p
}

/// `2 l − m ln n`; larger is better.
pub fn bic_value(loglik: f64, n_params: usize, n: usize) -> f64 {
    2.0 * loglik - n_params as f64 * (n as f64).ln()
}

pub fn bic(result: &FitResult, n: usize) -> f64 {
    bic_value(
        result.loglik,
        param_count(
            result.params.n_components(),
            result.params.n_factors(),
            result.params.dim(),
        ),
        n,
    )
}

/// How BIC is reported. Both select the same model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BicConvention {
    /// `2 l − m ln n`, larger is better.
    #[default]
    Standard,
    /// `m ln n − 2 l`, smaller is better.
    Deviance,
}

impl BicConvention {
    pub fn report(self, bic: f64) -> f64 {
        match self {
            BicConvention::Standard => bic,
            BicConvention::Deviance => -bic,
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            BicConvention::Standard => "2*loglik - m*ln(n), larger is better",
            BicConvention::Deviance => "m*ln(n) - 2*loglik, smaller is better",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    pub groups: Vec<usize>,
    pub factors: Vec<usize>,
    pub algorithm: Algorithm,
    pub fit: FitConfig,
    pub convention: BicConvention,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            groups: (1..=6).collect(),
            factors: (1..=3).collect(),
            algorithm: Algorithm::Em,
            fit: FitConfig::default(),
            convention: BicConvention::Standard,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchCell {
    pub groups: usize,
    pub factors: usize,
    pub outcome: std::result::Result<FitResult, FitError>,
}

impl SearchCell {
    pub fn bic(&self) -> Option<f64> {
        self.outcome.as_ref().ok().map(|r| r.bic)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub cells: Vec<SearchCell>,
    /// Index into `cells` of the selected model.
    pub selected: Option<usize>,
    pub convention: BicConvention,
}

impl SearchResult {
    pub fn selected_cell(&self) -> Option<&SearchCell> {
        self.selected.map(|k| &self.cells[k])
    }

    pub fn cell(&self, g: usize, q: usize) -> Option<&SearchCell> {
        self.cells.iter().find(|c| c.groups == g && c.factors == q)
    }
}

/// Fits every `(G, q)` pair; failures are kept per cell.
pub fn model_search(data: &[IncompleteObservation], config: &SearchConfig) -> Result<SearchResult> {
    if config.groups.is_empty() || config.factors.is_empty() {
        return Err(FitError::InvalidInput("search ranges must be non-empty".into()));
    }
    let mut cells = Vec::new();
    for &g in &config.groups {
        for &q in &config.factors {
            let outcome = fit(data, g, q, config.algorithm, &config.fit);
            cells.push(SearchCell {
                groups: g,
                factors: q,
                outcome,
            });
        }
    }
    let mut selected: Option<usize> = None;
    for (k, cell) in cells.iter().enumerate() {
        let Some(b) = cell.bic() else { continue };
        if selected.is_none_or(|s| b > cells[s].bic().unwrap()) {
            selected = Some(k);
        }
    }
    Ok(SearchResult {
        cells,
        selected,
        convention: config.convention,
    })
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for perm in permutations(n - 1) {
        for pos in 0..=perm.len() {
            let mut next = perm.clone();
            next.insert(pos, n - 1);
            out.push(next);
        }
    }
    out
}

/// Fraction of positions where `a` and `b` agree after the best relabeling
/// of `a`. Exhaustive for up to eight labels, greedy beyond.
pub fn label_agreement(a: &[usize], b: &[usize], g: usize) -> f64 {
    assert_eq!(a.len(), b.len());
    if a.is_empty() {
        return 1.0;
    }
    let mut table = vec![vec![0usize; g]; g];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let best = if g <= 8 {
        permutations(g)
            .iter()
            .map(|perm| (0..g).map(|k| table[k][perm[k]]).sum::<usize>())
            .max()
            .unwrap_or(0)
    } else {
        let mut used_a = vec![false; g];
        let mut used_b = vec![false; g];
        let mut total = 0;
        for _ in 0..g {
            let mut pick = (0, 0, 0);
            for x in (0..g).filter(|&x| !used_a[x]) {
                for y in (0..g).filter(|&y| !used_b[y]) {
                    if table[x][y] >= pick.2 {
                        pick = (x, y, table[x][y]);
                    }
                }
            }
            used_a[pick.0] = true;
            used_b[pick.1] = true;
            total += pick.2;
        }
        total
    };
    best as f64 / a.len() as f64
}
