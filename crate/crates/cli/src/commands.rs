use std::fs;
use std::path::Path;

use pemfa::data::{
    generate_bib, parse_table, write_atomic, write_fit, write_search, write_table, DataError,
    ParseOptions, RatingTable, SyntheticSpec,
};
use pemfa::mixture::{
    fit as run_fit, fit_from_init, initialize_seeded, label_agreement, model_search, Algorithm,
    BicConvention, FitConfig, FitError, FitResult, Initialization, Responsibilities,
    SearchConfig,
};
use pemfa::nalgebra::DMatrix;

use crate::{
    check_paths, AlgorithmArg, CompareArgs, ConventionArg, FitArgs, GenerateArgs, InputArgs,
    SearchArgs, TuningArgs,
};

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Code {
    Validation = 2,
    Parse = 3,
    FitFailed = 4,
    NotConverged = 5,
    Io = 6,
    AllCellsFailed = 7,
}

#[derive(Debug)]
pub struct Failure {
    pub code: Code,
    pub message: String,
}

impl Failure {
    pub fn new(code: Code, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(Code::Validation, message)
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        let code = match &e {
            e if e.is_parse_error() => Code::Parse,
            DataError::Io(_) => Code::Io,
            DataError::InvalidSpec(_) => Code::Validation,
            DataError::Fit(f) => return f.clone().into(),
            _ => Code::Io,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<FitError> for Failure {
    fn from(e: FitError) -> Self {
        let code = match e {
            FitError::InvalidInput(_) => Code::Validation,
            _ => Code::FitFailed,
        };
        Failure::new(code, e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::new(Code::Io, format!("{}: {e}", path.display()))
}

fn read_table(args: &InputArgs) -> Result<RatingTable, Failure> {
    if !args.delimiter.is_ascii() {
        return Err(Failure::validation("delimiter must be a single ASCII character"));
    }
    let options = ParseOptions {
        delimiter: args.delimiter as u8,
        scale: args.scale_check.then_some((1.0, 9.0)),
    };
    let file = fs::File::open(&args.input).map_err(|e| io_err(&args.input, e))?;
    parse_table(std::io::BufReader::new(file), &options).map_err(|e| match e {
        DataError::Io(io) => io_err(&args.input, io),
        other => Failure::new(
            if other.is_parse_error() { Code::Parse } else { Code::Io },
            format!("{}: {other}", args.input.display()),
        ),
    })
}

fn algorithm(a: AlgorithmArg) -> Algorithm {
    match a {
        AlgorithmArg::Em => Algorithm::Em,
        AlgorithmArg::Pem => Algorithm::Pem,
    }
}

fn convention(c: ConventionArg) -> BicConvention {
    match c {
        ConventionArg::Standard => BicConvention::Standard,
        ConventionArg::Deviance => BicConvention::Deviance,
    }
}

fn fit_config(t: &TuningArgs, seed: u64) -> Result<FitConfig, Failure> {
    if t.restarts == 0 {
        return Err(Failure::validation("--restarts must be at least 1"));
    }
    Ok(FitConfig {
        restarts: t.restarts,
        seed,
        sweeps_per_iter: t.sweeps_per_iter,
        tolerance: t.tolerance,
        max_iter: t.max_iter,
        psi_floor: t.psi_floor,
    })
}

fn check_shape(table: &RatingTable, g: usize, q: usize) -> Outcome {
    let (n, p) = (table.n_consumers(), table.n_products());
    if g == 0 || g >= n {
        return Err(Failure::validation(format!(
            "G = {g} needs 1 <= G < n = {n}"
        )));
    }
    if q >= p {
        return Err(Failure::validation(format!(
            "q = {q} needs q < p = {p}"
        )));
    }
    Ok(())
}

fn report(res: &FitResult, conv: BicConvention) {
    println!(
        "{} G={} q={}: loglik {:.6} bic {:.4} ({}), {} iterations, converged {}",
        res.algorithm,
        res.params.n_components(),
        res.params.n_factors(),
        res.loglik,
        conv.report(res.bic),
        conv.describe(),
        res.iterations,
        res.converged
    );
}

pub fn fit(args: FitArgs) -> Outcome {
    check_paths(&args.input.input, &args.out)?;
    let config = fit_config(&args.tuning, args.seed)?;
    let table = read_table(&args.input)?;
    check_shape(&table, args.groups, args.factors)?;
    let conv = convention(args.bic_convention);
    let res = run_fit(&table.rows, args.groups, args.factors, algorithm(args.algorithm), &config)?;
    write_fit(&res, &table, conv, &args.out)?;
    report(&res, conv);
    if !res.converged {
        return Err(Failure::new(
            Code::NotConverged,
            format!("no convergence within {} iterations; artifacts written", config.max_iter),
        ));
    }
    Ok(())
}

pub fn search(args: SearchArgs) -> Outcome {
    check_paths(&args.input.input, &args.out)?;
    let config = fit_config(&args.tuning, args.seed)?;
    let table = read_table(&args.input)?;
    let search = SearchConfig {
        groups: args.groups.0.clone(),
        factors: args.factors.0.clone(),
        algorithm: algorithm(args.algorithm),
        fit: config,
        convention: convention(args.bic_convention),
    };
    let result = model_search(&table.rows, &search)?;
    write_search(&result, &table, &args.out)?;
    for cell in &result.cells {
        match &cell.outcome {
            Ok(r) => println!(
                "G={} q={}: bic {:.4}",
                cell.groups,
                cell.factors,
                search.convention.report(r.bic)
            ),
            Err(e) => println!("G={} q={}: failed ({e})", cell.groups, cell.factors),
        }
    }
    match result.selected_cell() {
        Some(cell) => {
            println!(
                "selected G={} q={} ({})",
                cell.groups,
                cell.factors,
                search.convention.describe()
            );
            Ok(())
        }
        None => Err(Failure::new(Code::AllCellsFailed, "every cell of the grid failed")),
    }
}

pub fn generate(args: GenerateArgs) -> Outcome {
    let spec = match &args.spec {
        Some(path) => {
            let text = fs::read(path).map_err(|e| io_err(path, e))?;
            let mut spec: SyntheticSpec = serde_json::from_slice(&text)
                .map_err(|e| Failure::validation(format!("{}: {e}", path.display())))?;
            spec.seed = args.seed;
            spec.validate()?;
            spec
        }
        None => SyntheticSpec::random_truth(
            args.n,
            args.p,
            args.factors,
            args.groups,
            args.observed_per_row,
            args.seed,
        )?,
    };
    let (table, truth) = generate_bib(&spec)?;
    let mut buf = Vec::new();
    write_table(&table, &mut buf, b',')?;
    write_atomic(&args.out, "data.csv", &buf)?;
    let mut json = serde_json::to_vec_pretty(&truth).map_err(|e| Failure::new(Code::Io, e.to_string()))?;
    json.push(b'\n');
    write_atomic(&args.out, "truth.json", &json)?;
    println!(
        "wrote {} consumers x {} products ({} rated each) to {}",
        spec.n,
        spec.p,
        spec.observed_per_row,
        args.out.display()
    );
    Ok(())
}

const INIT_FILE: &str = "initial_responsibilities.csv";

fn write_responsibilities(resp: &Responsibilities, dir: &Path) -> Outcome {
    let mut text = (1..=resp.n_components())
        .map(|k| format!("w_{k}"))
        .collect::<Vec<_>>()
        .join(",");
    text.push('\n');
    for row in resp.matrix().row_iter() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    write_atomic(dir, INIT_FILE, text.as_bytes())?;
    Ok(())
}

fn read_responsibilities(dir: &Path) -> Result<Responsibilities, Failure> {
    let path = dir.join(INIT_FILE);
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let mut rows = Vec::new();
    for line in text.lines().skip(1) {
        let row: Vec<f64> = line
            .split(',')
            .map(|c| c.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| Failure::new(Code::Parse, format!("{}: {e}", path.display())))?;
        rows.push(row);
    }
    let g = rows.first().map(Vec::len).unwrap_or(0);
    let w = DMatrix::from_fn(rows.len(), g, |i, k| rows[i][k]);
    Ok(Responsibilities::new(w)?)
}

pub fn compare(args: CompareArgs) -> Outcome {
    check_paths(&args.input.input, &args.out)?;
    let table = read_table(&args.input)?;
    check_shape(&table, args.groups, args.factors)?;
    let config = FitConfig {
        restarts: 1,
        seed: args.seed,
        sweeps_per_iter: args.sweeps_per_iter,
        tolerance: args.tolerance,
        max_iter: args.max_iter,
        psi_floor: args.psi_floor,
    };

    // Both runs start from the serialized responsibilities, not from the
    // in-memory draw.
    let drawn = initialize_seeded(&table.rows, args.groups, args.factors, args.seed, 0)?;
    write_responsibilities(&drawn.resp, &args.out)?;
    let resp = read_responsibilities(&args.out)?;
    let init = Initialization::from_responsibilities(&table.rows, resp, args.factors)?;

    let em = fit_from_init(&table.rows, &init, Algorithm::Em, &config)?;
    let pem = fit_from_init(&table.rows, &init, Algorithm::Pem, &config)?;
    write_fit(&em, &table, BicConvention::Standard, &args.out.join("em"))?;
    write_fit(&pem, &table, BicConvention::Standard, &args.out.join("pem"))?;

    let len = em.loglik_trace.len().max(pem.loglik_trace.len());
    let mut paired = String::from("iteration\tem\tpem\n");
    let cell = |t: &[f64], i: usize| t.get(i).map(|v| v.to_string()).unwrap_or_default();
    for i in 0..len {
        paired.push_str(&format!(
            "{}\t{}\t{}\n",
            i + 1,
            cell(&em.loglik_trace, i),
            cell(&pem.loglik_trace, i)
        ));
    }
    write_atomic(&args.out, "paired_trace.tsv", paired.as_bytes())?;

    let abs_gap = (em.loglik - pem.loglik).abs();
    let rel_gap = abs_gap / em.loglik.abs();
    let max_trace_gap = em
        .loglik_trace
        .iter()
        .zip(&pem.loglik_trace)
        .skip(5)
        .map(|(a, b)| (a - b).abs() / a.abs())
        .fold(0.0, f64::max);
    let agreement = label_agreement(&em.map_labels, &pem.map_labels, args.groups);
    let side = |r: &FitResult| {
        serde_json::json!({
            "loglik": r.loglik,
            "final_objective": r.loglik_trace.last(),
            "iterations": r.iterations,
            "converged": r.converged,
            "covariance_inversions_per_iteration": r.counters.iter().map(|c| c.covariance_inversions).max(),
            "block_inversions_per_iteration": r.counters.iter().map(|c| c.block_inversions).max(),
            "logdet_factorizations_per_iteration": r.counters.iter().map(|c| c.logdet_factorizations).max(),
        })
    };
    let summary = serde_json::json!({
        "groups": args.groups,
        "factors": args.factors,
        "seed": args.seed,
        "distinct_patterns": em.distinct_patterns,
        "em": side(&em),
        "pem": side(&pem),
        "abs_gap": abs_gap,
        "rel_gap": rel_gap,
        "max_rel_trace_gap_after_iteration_5": max_trace_gap,
        "map_label_agreement": agreement,
    });
    let mut json = serde_json::to_vec_pretty(&summary).map_err(|e| Failure::new(Code::Io, e.to_string()))?;
    json.push(b'\n');
    write_atomic(&args.out, "compare_summary.json", &json)?;
    println!(
        "em {:.6} ({} it) pem {:.6} ({} it) abs gap {:.3e} rel gap {:.3e} label agreement {:.4}",
        em.loglik, em.iterations, pem.loglik, pem.iterations, abs_gap, rel_gap, agreement
    );
    if !em.converged || !pem.converged {
        return Err(Failure::new(Code::NotConverged, "a run did not converge; artifacts written"));
    }
    Ok(())
}
