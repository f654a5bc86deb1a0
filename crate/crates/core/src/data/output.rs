use std::fs;
use std::path::Path;

use serde::Serialize;

use super::{RatingTable, Result};
use crate::mixture::{Algorithm, BicConvention, FitResult, IterationCounters, SearchResult};

pub const SUMMARY_FILE: &str = "fit_summary.json";
pub const ASSIGNMENTS_FILE: &str = "assignments.csv";
pub const CLUSTER_MEANS_FILE: &str = "cluster_means.csv";
pub const TRACE_FILE: &str = "trace.tsv";
pub const BIC_TABLE_FILE: &str = "bic_table.csv";

const FACTOR_SCORE_METHOD: &str =
    "posterior mean of the factors under the MAP component: beta_g (y_hat - mu_g), beta_g = Lambda' Sigma_g^-1, y_hat the exact conditional imputation";

/// Writes `bytes` to `dir/name` through a temporary file and a rename.
pub fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, dir.join(name))?;
    Ok(())
}

#[derive(Serialize)]
struct ParamsRecord {
    pi: Vec<f64>,
    mu: Vec<Vec<f64>>,
    lambda: Vec<Vec<f64>>,
    psi: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct BicRow {
    groups: usize,
    factors: usize,
    ok: bool,
    loglik: Option<f64>,
    bic: Option<f64>,
    selected: bool,
    error: Option<String>,
}

#[derive(Serialize)]
struct Summary<'a> {
    algorithm: Algorithm,
    groups: usize,
    factors: usize,
    n_obs: usize,
    products: &'a [String],
    loglik: f64,
    final_objective: f64,
    bic: f64,
    bic_convention: &'static str,
    n_params: usize,
    iterations: usize,
    converged: bool,
    restarts_used: usize,
    failed_restarts: usize,
    best_restart: usize,
    distinct_patterns: usize,
    counters_total: IterationCounters,
    counters_last_iteration: IterationCounters,
    factor_scores: &'static str,
    params: ParamsRecord,
    #[serde(skip_serializing_if = "Option::is_none")]
    bic_table: Option<Vec<BicRow>>,
}

fn bic_rows(search: &SearchResult) -> Vec<BicRow> {
    search
        .cells
        .iter()
        .enumerate()
        .map(|(k, cell)| BicRow {
            groups: cell.groups,
            factors: cell.factors,
            ok: cell.outcome.is_ok(),
            loglik: cell.outcome.as_ref().ok().map(|r| r.loglik),
            bic: cell.bic().map(|b| search.convention.report(b)),
            selected: search.selected == Some(k),
            error: cell.outcome.as_ref().err().map(|e| e.to_string()),
        })
        .collect()
}

fn csv_bytes<F>(fill: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> Result<()>,
{
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        fill(&mut w)?;
        w.flush()?;
    }
    Ok(buf)
}

fn write_fit_inner(
    result: &FitResult,
    table: &RatingTable,
    convention: BicConvention,
    search: Option<&SearchResult>,
    dir: &Path,
) -> Result<()> {
    let params = &result.params;
    let g = params.n_components();
    let q = params.n_factors();
    let p = params.dim();

    let mut total = IterationCounters::default();
    for c in &result.counters {
        total += *c;
    }
    let summary = Summary {
        algorithm: result.algorithm,
        groups: g,
        factors: q,
        n_obs: result.n_obs,
        products: &table.product_names,
        loglik: result.loglik,
        final_objective: result.loglik_trace.last().copied().unwrap_or(result.loglik),
        bic: convention.report(result.bic),
        bic_convention: convention.describe(),
        n_params: result.n_params,
        iterations: result.iterations,
        converged: result.converged,
        restarts_used: result.restarts_used,
        failed_restarts: result.failed_restarts,
        best_restart: result.best_restart,
        distinct_patterns: result.distinct_patterns,
        counters_total: total,
        counters_last_iteration: result.counters.last().copied().unwrap_or_default(),
        factor_scores: FACTOR_SCORE_METHOD,
        params: ParamsRecord {
            pi: params.pi().to_vec(),
            mu: (0..g).map(|k| params.mu(k).iter().copied().collect()).collect(),
            lambda: (0..p).map(|j| params.lambda().row(j).iter().copied().collect()).collect(),
            psi: (0..g).map(|k| params.psi(k).iter().copied().collect()).collect(),
        },
        bic_table: search.map(bic_rows),
    };
    let mut json = serde_json::to_vec_pretty(&summary)?;
    json.push(b'\n');
    write_atomic(dir, SUMMARY_FILE, &json)?;

    let scores = result.factor_scores(&table.rows)?;
    let assignments = csv_bytes(|w| {
        let mut header = vec!["consumer".to_string(), "map_label".to_string()];
        header.extend((1..=g).map(|k| format!("w_{k}")));
        header.extend((1..=q).map(|k| format!("factor_{k}")));
        w.write_record(&header)?;
        for i in 0..table.n_consumers() {
            let mut rec = vec![table.consumer_ids[i].clone(), (result.map_labels[i] + 1).to_string()];
            rec.extend((0..g).map(|k| result.resp.get(i, k).to_string()));
            rec.extend((0..q).map(|k| scores[(i, k)].to_string()));
            w.write_record(&rec)?;
        }
        Ok(())
    })?;
    write_atomic(dir, ASSIGNMENTS_FILE, &assignments)?;

    let means = csv_bytes(|w| {
        let mut header = vec!["cluster".to_string(), "weight".to_string()];
        header.extend(table.product_names.iter().cloned());
        w.write_record(&header)?;
        for k in 0..g {
            let mut rec = vec![(k + 1).to_string(), params.pi()[k].to_string()];
            rec.extend(params.mu(k).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        Ok(())
    })?;
    write_atomic(dir, CLUSTER_MEANS_FILE, &means)?;

    let mut trace = String::from("iteration\tloglik\n");
    for (t, v) in result.loglik_trace.iter().enumerate() {
        trace.push_str(&format!("{}\t{}\n", t + 1, v));
    }
    write_atomic(dir, TRACE_FILE, trace.as_bytes())?;
    Ok(())
}

/// Summary, per-consumer assignments, cluster means and the trace.
pub fn write_fit(result: &FitResult, table: &RatingTable, convention: BicConvention, dir: &Path) -> Result<()> {
    write_fit_inner(result, table, convention, None, dir)
}

/// The BIC grid, plus the artifacts of the selected model if any cell
/// succeeded.
pub fn write_search(search: &SearchResult, table: &RatingTable, dir: &Path) -> Result<()> {
    let grid = csv_bytes(|w| {
        w.write_record([
            "groups", "factors", "status", "loglik", "bic", "n_params", "iterations", "converged",
            "selected", "convention", "message",
        ])?;
        for (k, cell) in search.cells.iter().enumerate() {
            let selected = if search.selected == Some(k) { "*" } else { "" };
            let conv = search.convention.describe();
            let rec: Vec<String> = match &cell.outcome {
                Ok(r) => vec![
                    cell.groups.to_string(),
                    cell.factors.to_string(),
                    "ok".into(),
                    r.loglik.to_string(),
                    search.convention.report(r.bic).to_string(),
                    r.n_params.to_string(),
                    r.iterations.to_string(),
                    r.converged.to_string(),
                    selected.into(),
                    conv.into(),
                    String::new(),
                ],
                Err(e) => vec![
                    cell.groups.to_string(),
                    cell.factors.to_string(),
                    "failed".into(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    conv.into(),
                    e.to_string(),
                ],
            };
            w.write_record(&rec)?;
        }
        Ok(())
    })?;
    write_atomic(dir, BIC_TABLE_FILE, &grid)?;
    if let Some(cell) = search.selected_cell() {
        if let Ok(best) = &cell.outcome {
            write_fit_inner(best, table, search.convention, Some(search), dir)?;
        }
    }
    Ok(())
}
