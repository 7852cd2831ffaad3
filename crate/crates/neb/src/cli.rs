//! Command implementations behind the `neb` binary: CSV ingestion, the
//! estimate/simulate pipelines and their output files, and the selftest
//! report. Everything here is deterministic given the configuration, so
//! reruns produce byte-identical files.

use crate::bandwidth::select_lambda;
use crate::config::RunConfig;
use crate::dle::{CountSample, DleModel};
use crate::error::{Error, Result};
use crate::selftest::{self, FaultInjection};
use crate::sim::{render_series_csv, render_table, EstimatorKind, ScenarioSpec, TableFormat};
use serde::Serialize;
use std::fs;
use std::path::{Path, PathBuf};

/// A parsed input file: counts plus the binomial trial column when present.
#[derive(Debug)]
pub struct InputData {
    pub y: Vec<u32>,
    pub m: Option<u32>,
}

/// Read a count CSV: header required, column `y` mandatory, optional
/// constant `m` column for binomial trials. Errors carry 1-based line
/// numbers.
pub fn read_counts_csv(path: &Path) -> Result<InputData> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?
        .clone();
    let y_col = headers
        .iter()
        .position(|h| h.trim() == "y")
        .ok_or_else(|| Error::data(format!("{}: no 'y' column in header", path.display())))?;
    let m_col = headers.iter().position(|h| h.trim() == "m");

    let mut y = Vec::new();
    let mut m_value: Option<u32> = None;
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2; // header is line 1
        let record = record.map_err(|e| Error::Data(format!("line {line}: {e}")))?;
        let raw = record
            .get(y_col)
            .ok_or_else(|| Error::Data(format!("line {line}: missing y field")))?;
        let value: u32 = raw
            .trim()
            .parse()
            .map_err(|_| Error::Data(format!("line {line}: '{raw}' is not a nonnegative integer")))?;
        y.push(value);
        if let Some(col) = m_col {
            let raw_m = record
                .get(col)
                .ok_or_else(|| Error::Data(format!("line {line}: missing m field")))?;
            let m: u32 = raw_m.trim().parse().map_err(|_| {
                Error::Data(format!("line {line}: '{raw_m}' is not a nonnegative integer"))
            })?;
            match m_value {
                None => m_value = Some(m),
                Some(prev) if prev != m => {
                    return Err(Error::Data(format!(
                        "line {line}: non-constant m ({prev} then {m}); the binomial analysis fixes m"
                    )))
                }
                Some(_) => {}
            }
        }
    }
    if y.is_empty() {
        return Err(Error::data(format!("{}: no data rows", path.display())));
    }
    Ok(InputData { y, m: m_value })
}

#[derive(Debug, Serialize)]
struct SolverSummary {
    iterations: usize,
    primal_residual: f64,
    dual_residual: f64,
    converged: bool,
    objective: f64,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config: &'a RunConfig,
    model: String,
    n: usize,
    lambda_hat: Option<f64>,
    solver: Option<SolverSummary>,
    outputs: Vec<String>,
    versions: Versions,
}

#[derive(Debug, Serialize)]
struct Versions {
    neb: &'static str,
}

impl Versions {
    fn current() -> Self {
        Versions {
            neb: env!("CARGO_PKG_VERSION"),
        }
    }
}

fn out_dir(config: &RunConfig) -> Result<PathBuf> {
    let dir = config
        .io
        .out_dir
        .as_ref()
        .ok_or_else(|| Error::Config("no output directory set (--out)".into()))?;
    let path = PathBuf::from(dir);
    fs::create_dir_all(&path)?;
    Ok(path)
}

/// Format a float with full round-trip precision.
fn full(x: f64) -> String {
    format!("{x}")
}

/// Fit the estimator on a count CSV and write estimates, the bandwidth
/// curve, and a manifest.
pub fn cmd_estimate(config: &RunConfig) -> Result<Vec<PathBuf>> {
    config.validate()?;
    let input = config
        .io
        .input
        .as_ref()
        .ok_or_else(|| Error::Config("estimate needs an input CSV (--input)".into()))?;
    let data = read_counts_csv(Path::new(input))?;
    let model = config.resolve_model(data.m)?;
    if model == DleModel::Poisson && data.m.is_some() {
        return Err(Error::data(
            "input has an m column but the configured family is poisson",
        ));
    }
    let sample = CountSample::new(data.y, model)?;
    let grid = config.lambda_grid();
    let curve = select_lambda(
        &sample,
        config.model.k,
        &grid,
        config.constraint_flags(),
        None,
    )?;
    let sol = curve.solution();

    let dir = out_dir(config)?;
    let estimates_path = dir.join("estimates.csv");
    let mut estimates = String::from("index,y,h_hat,w_hat,delta,flag\n");
    for i in 0..sample.len() {
        estimates.push_str(&format!(
            "{},{},{},{},{},{}\n",
            i,
            sample.y[i],
            full(sol.h_hat[i]),
            full(sol.w_hat[i]),
            full(sol.delta[i]),
            sol.flags[i].label()
        ));
    }
    fs::write(&estimates_path, estimates)?;

    let curve_path = dir.join("are_curve.csv");
    let mut curve_csv = String::from("lambda,are,loss_if_oracle\n");
    for (i, lambda) in curve.grid.iter().enumerate() {
        let loss_col = match &curve.realized_loss {
            Some(losses) => full(losses[i]),
            None => String::new(),
        };
        curve_csv.push_str(&format!("{},{},{loss_col}\n", full(*lambda), full(curve.are[i])));
    }
    fs::write(&curve_path, curve_csv)?;

    let manifest_path = dir.join("manifest.json");
    let manifest = Manifest {
        command: "estimate",
        config,
        model: model.to_string(),
        n: sample.len(),
        lambda_hat: Some(curve.lambda_hat()),
        solver: Some(SolverSummary {
            iterations: sol.diagnostics.iterations,
            primal_residual: sol.diagnostics.primal_residual,
            dual_residual: sol.diagnostics.dual_residual,
            converged: sol.diagnostics.converged,
            objective: sol.diagnostics.objective,
        }),
        outputs: vec![
            estimates_path.display().to_string(),
            curve_path.display().to_string(),
        ],
        versions: Versions::current(),
    };
    fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).map_err(|e| Error::Data(e.to_string()))? + "\n",
    )?;

    Ok(vec![estimates_path, curve_path, manifest_path])
}

/// Run a simulation scenario and write the risk table, the per-n series,
/// and a manifest.
pub fn cmd_simulate(config: &RunConfig) -> Result<Vec<PathBuf>> {
    config.validate()?;
    let scenario_id = config
        .sim
        .scenario
        .as_ref()
        .ok_or_else(|| Error::Config("simulate needs a scenario id (--scenario)".into()))?;
    let spec = ScenarioSpec::by_id(scenario_id)?;
    let estimators: Vec<EstimatorKind> = config
        .sim
        .estimators
        .iter()
        .map(|s| EstimatorKind::parse(s))
        .collect::<Result<_>>()?;
    let format = TableFormat::parse(&config.io.format)?;
    let table = crate::sim::run_scenario(
        &spec,
        config.model.k,
        &config.sim.n,
        config.sim.reps,
        &estimators,
        config.seed,
        &config.lambda_grid(),
        config.constraint_flags(),
    )?;

    let dir = out_dir(config)?;
    let ext = match format {
        TableFormat::Csv => "csv",
        TableFormat::Text => "txt",
        TableFormat::Json => "json",
    };
    let table_path = dir.join(format!("risk_table.{ext}"));
    fs::write(&table_path, render_table(&table, format)?)?;
    let series_path = dir.join("series.csv");
    fs::write(&series_path, render_series_csv(&table))?;

    let manifest_path = dir.join("manifest.json");
    let manifest = Manifest {
        command: "simulate",
        config,
        model: spec.fit_model.to_string(),
        n: *config.sim.n.iter().max().unwrap_or(&0),
        lambda_hat: None,
        solver: None,
        outputs: vec![
            table_path.display().to_string(),
            series_path.display().to_string(),
        ],
        versions: Versions::current(),
    };
    fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).map_err(|e| Error::Data(e.to_string()))? + "\n",
    )?;

    Ok(vec![table_path, series_path, manifest_path])
}

/// Run the fast health checks, print one line per check, and report overall
/// success.
pub fn cmd_selftest(faults: FaultInjection, mut sink: impl std::io::Write) -> Result<bool> {
    let results = selftest::run(faults);
    for r in &results {
        writeln!(
            sink,
            "{} {} — {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.detail
        )?;
    }
    let ok = selftest::all_passed(&results);
    writeln!(
        sink,
        "{}: {} of {} checks passed",
        if ok { "OK" } else { "FAILED" },
        results.iter().filter(|r| r.passed).count(),
        results.len()
    )?;
    Ok(ok)
}
