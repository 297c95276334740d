//! Instance files, the dispatch and pricing workflow as commands, and report rendering.

use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dispatch::{self, DispatchError, DispatchSolution, RecoveryDiagnosis, SolveOptions};
use crate::model::{self, CostCoefficients, DemandBid, EnergyVector, GeneratorSpec, MarketInstance, Violation};
use crate::pricing::{self, PricingError, PricingMode, PricingSolution, SettlementReport};
use crate::region::{self, HalfSpace, OperatingRegion};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INFEASIBLE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl From<serde_json::Error> for ParseError {
    fn from(e: serde_json::Error) -> Self {
        ParseError { line: e.line(), column: e.column(), message: e.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CliError {
    #[error("parse error: {0}")]
    Parse(#[from] ParseError),
    #[error("invalid instance:\n{}", .0.iter().map(|v| format!("  {v}")).collect::<Vec<_>>().join("\n"))]
    Validation(Vec<Violation>),
    #[error("{0}")]
    Io(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("solver failure: {0}")]
    Solver(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) | CliError::Validation(_) | CliError::Io(_) => EXIT_INPUT,
            CliError::Infeasible(_) => EXIT_INFEASIBLE,
            CliError::Solver(_) => EXIT_SOLVER,
        }
    }
}

impl From<DispatchError> for CliError {
    fn from(e: DispatchError) -> Self {
        match e {
            DispatchError::Invalid(v) => CliError::Validation(v),
            DispatchError::Infeasible => CliError::Infeasible(e.to_string()),
            DispatchError::SolverFailure(msg) => CliError::Solver(msg),
        }
    }
}

impl From<PricingError> for CliError {
    fn from(e: PricingError) -> Self {
        match e {
            // Utilities sum to the settlement welfare, so a dispatch whose welfare is negative
            // admits no non-confiscatory pricing.
            PricingError::Infeasible => CliError::Infeasible(e.to_string()),
            other => CliError::Solver(other.to_string()),
        }
    }
}

// Input schema.

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceFile {
    label: String,
    generators: Vec<GeneratorFile>,
    electric_demands: Vec<DemandFile>,
    heat_demands: Vec<DemandFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GeneratorFile {
    id: String,
    cost: CostFile,
    region: RegionFile,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CostFile {
    c2p: f64,
    c1p: f64,
    c2h: f64,
    c1h: f64,
    chp: f64,
    c0: f64,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegionFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bounds: Option<Vec<BoundFile>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vertices: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoundFile {
    kp: f64,
    kh: f64,
    k0: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DemandFile {
    id: String,
    max_demand_mwh: f64,
    bid_usd_per_mwh: f64,
}

/// Parses and validates an instance file. Structural problems are reported with their
/// position; semantic problems are collected and reported together.
pub fn parse_instance(text: &[u8]) -> Result<MarketInstance, CliError> {
    let file: InstanceFile = serde_json::from_slice(text).map_err(ParseError::from)?;
    let mut violations = Vec::new();
    let mut generators = Vec::with_capacity(file.generators.len());
    for g in file.generators {
        let region = match (g.region.bounds, g.region.vertices) {
            (Some(bounds), None) => {
                OperatingRegion::new(bounds.into_iter().map(|b| HalfSpace::new(b.kp, b.kh, b.k0)).collect())
            }
            (None, Some(vertices)) => {
                let points: Vec<(f64, f64)> = vertices.iter().map(|v| (v[0], v[1])).collect();
                match region::halfspaces_from_vertices(&points) {
                    Ok(r) => r,
                    Err(e) => {
                        violations.push(Violation { entity: g.id.clone(), rule: format!("vertex list rejected: {e}") });
                        OperatingRegion::default()
                    }
                }
            }
            _ => {
                violations.push(Violation {
                    entity: g.id.clone(),
                    rule: "region must give exactly one of \"bounds\" or \"vertices\"".into(),
                });
                OperatingRegion::default()
            }
        };
        let c = g.cost;
        let cost = CostCoefficients { c2p: c.c2p, c1p: c.c1p, c2h: c.c2h, c1h: c.c1h, chp: c.chp, c0: c.c0 };
        generators.push(GeneratorSpec::new(g.id, cost, region));
    }
    let inst = MarketInstance {
        label: file.label,
        generators,
        electric_demands: file
            .electric_demands
            .into_iter()
            .map(|d| DemandBid::electricity(d.id, d.max_demand_mwh, d.bid_usd_per_mwh))
            .collect(),
        heat_demands: file
            .heat_demands
            .into_iter()
            .map(|d| DemandBid::heat(d.id, d.max_demand_mwh, d.bid_usd_per_mwh))
            .collect(),
    };
    if violations.is_empty() {
        violations = model::validate_instance(&inst);
    }
    if violations.is_empty() {
        Ok(inst)
    } else {
        Err(CliError::Validation(violations))
    }
}

/// Serializes an instance in the input schema, regions as half-spaces.
pub fn render_instance(inst: &MarketInstance) -> String {
    let demand =
        |d: &DemandBid| DemandFile { id: d.id.clone(), max_demand_mwh: d.max_quantity, bid_usd_per_mwh: d.bid };
    let file = InstanceFile {
        label: inst.label.clone(),
        generators: inst
            .generators
            .iter()
            .map(|g| GeneratorFile {
                id: g.id.clone(),
                cost: CostFile {
                    c2p: g.cost.c2p,
                    c1p: g.cost.c1p,
                    c2h: g.cost.c2h,
                    c1h: g.cost.c1h,
                    chp: g.cost.chp,
                    c0: g.cost.c0,
                },
                region: RegionFile {
                    bounds: Some(g.region.bounds.iter().map(|b| BoundFile { kp: b.kp, kh: b.kh, k0: b.k0 }).collect()),
                    vertices: None,
                },
            })
            .collect(),
        electric_demands: inst.electric_demands.iter().map(demand).collect(),
        heat_demands: inst.heat_demands.iter().map(demand).collect(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("instance serialization cannot fail");
    s.push('\n');
    s
}

pub fn load_instance(path: &Path) -> Result<MarketInstance, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    parse_instance(&bytes)
}

// Configuration.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Dispatch,
    Price,
    Run,
    VerticesToHalfspaces,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum OutputFormat {
    #[default]
    Table,
    Json,
    Csv,
}

impl fmt::Display for OutputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputFormat::Table => "table",
            OutputFormat::Json => "json",
            OutputFormat::Csv => "csv",
        })
    }
}

impl FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "table" => Ok(OutputFormat::Table),
            "json" => Ok(OutputFormat::Json),
            "csv" => Ok(OutputFormat::Csv),
            other => Err(format!("unknown format {other:?}, expected table, json or csv")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Instance file, vertex file, or a directory of instance files.
    pub input: PathBuf,
    pub command: Command,
    /// Used by `price` and `run` only.
    pub mode: PricingMode,
    pub format: OutputFormat,
    pub tol: Option<f64>,
    /// Standard output when absent.
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(command: Command, input: impl Into<PathBuf>) -> Self {
        Self {
            input: input.into(),
            command,
            mode: PricingMode::default(),
            format: OutputFormat::default(),
            tol: None,
            out: None,
        }
    }

    pub fn solve_options(&self) -> SolveOptions {
        let mut opts = SolveOptions::default();
        if let Some(tol) = self.tol {
            opts.tol = tol;
        }
        opts
    }

    fn check(&self) -> Result<(), CliError> {
        match self.tol {
            Some(t) if !(t > 0.0 && t.is_finite()) => {
                Err(CliError::Io(format!("tolerance must be positive and finite, got {t}")))
            }
            _ => Ok(()),
        }
    }
}

// Reports.

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub label: String,
    pub command: Command,
    pub mode: Option<PricingMode>,
    /// Whether corrected prices and uplifts were computed.
    pub pricing_applied: bool,
    pub dispatch: DispatchSolution,
    pub recovery: RecoveryDiagnosis,
    pub pricing: Option<PricingSolution>,
    pub settlement: Option<SettlementReport>,
}

/// Solves one instance for `dispatch`, `price` or `run`.
pub fn build_report(
    inst: &MarketInstance,
    command: Command,
    mode: PricingMode,
    opts: &SolveOptions,
) -> Result<Report, CliError> {
    let sol = dispatch::solve_ihpd_with(inst, opts)?;
    let recovery = dispatch::diagnose_recovery(inst, &sol);
    let apply = match command {
        Command::Dispatch => false,
        Command::Price => true,
        Command::Run => recovery.any_failure(),
        Command::VerticesToHalfspaces => {
            return Err(CliError::Io("region conversion does not produce a market report".into()));
        }
    };
    let (pricing, settlement) = if apply {
        let p = pricing::solve_pm_with(inst, &sol, mode, opts)?;
        let s = pricing::settle(inst, &sol, &p);
        (Some(p), Some(s))
    } else {
        (None, None)
    };
    Ok(Report {
        label: inst.label.clone(),
        command,
        mode: (command != Command::Dispatch).then_some(mode),
        pricing_applied: apply,
        dispatch: sol,
        recovery,
        pricing,
        settlement,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineOutput {
    pub exit_code: i32,
    /// Rendered report, empty on failure.
    pub output: Vec<u8>,
    /// Messages for standard error.
    pub diagnostics: String,
}

impl PipelineOutput {
    fn failure(e: &CliError) -> Self {
        Self { exit_code: e.exit_code(), output: Vec::new(), diagnostics: format!("error: {e}\n") }
    }
}

/// Runs one command and renders its report without touching the output path.
pub fn run_pipeline(cfg: &RunConfig) -> PipelineOutput {
    if let Err(e) = cfg.check() {
        return PipelineOutput::failure(&e);
    }
    if cfg.command == Command::VerticesToHalfspaces {
        return match convert_vertex_file(&cfg.input) {
            Ok(r) => {
                PipelineOutput { exit_code: EXIT_OK, output: render_region(&r, cfg.format), diagnostics: String::new() }
            }
            Err(e) => PipelineOutput::failure(&e),
        };
    }
    if cfg.input.is_dir() {
        return run_directory(cfg);
    }
    let report =
        load_instance(&cfg.input).and_then(|inst| build_report(&inst, cfg.command, cfg.mode, &cfg.solve_options()));
    match report {
        Ok(r) => {
            PipelineOutput { exit_code: EXIT_OK, output: render_report(&r, cfg.format), diagnostics: String::new() }
        }
        Err(e) => PipelineOutput::failure(&e),
    }
}

/// Solves every `*.json` file of a directory concurrently; output follows file-name order and
/// the exit code is that of the first failing file.
fn run_directory(cfg: &RunConfig) -> PipelineOutput {
    let mut files: Vec<PathBuf> = match fs::read_dir(&cfg.input) {
        Ok(rd) => rd
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "json"))
            .collect(),
        Err(e) => return PipelineOutput::failure(&CliError::Io(format!("cannot read {}: {e}", cfg.input.display()))),
    };
    files.sort();
    if files.is_empty() {
        return PipelineOutput::failure(&CliError::Io(format!("no .json instances in {}", cfg.input.display())));
    }
    let opts = cfg.solve_options();
    let results: Vec<Result<Report, CliError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = files
            .iter()
            .map(|f| {
                scope.spawn(move || load_instance(f).and_then(|inst| build_report(&inst, cfg.command, cfg.mode, &opts)))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(CliError::Solver("worker panicked".into()))))
            .collect()
    });

    let mut out = PipelineOutput { exit_code: EXIT_OK, output: Vec::new(), diagnostics: String::new() };
    let mut reports = Vec::new();
    for (file, result) in files.iter().zip(results) {
        match result {
            Ok(r) => reports.push((file, r)),
            Err(e) => {
                if out.exit_code == EXIT_OK {
                    out.exit_code = e.exit_code();
                }
                let _ = writeln!(out.diagnostics, "error: {}: {e}", file.display());
            }
        }
    }
    match cfg.format {
        OutputFormat::Json => {
            let all: Vec<&Report> = reports.iter().map(|(_, r)| r).collect();
            out.output = serde_json::to_vec_pretty(&all).expect("report serialization cannot fail");
            out.output.push(b'\n');
        }
        _ => {
            for (i, (file, r)) in reports.iter().enumerate() {
                if i > 0 {
                    out.output.push(b'\n');
                }
                let name = file.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
                out.output.extend_from_slice(format!("## {name}\n").as_bytes());
                out.output.extend(render_report(r, cfg.format));
            }
        }
    }
    out
}

/// Runs the pipeline, writes the report to `cfg.out` or standard output and diagnostics to
/// standard error. Returns the process exit code.
pub fn execute(cfg: &RunConfig) -> i32 {
    let result = run_pipeline(cfg);
    if !result.diagnostics.is_empty() {
        eprint!("{}", result.diagnostics);
    }
    if result.output.is_empty() {
        return result.exit_code;
    }
    let written = match &cfg.out {
        Some(path) => fs::write(path, &result.output).map_err(|e| format!("cannot write {}: {e}", path.display())),
        None => std::io::stdout().write_all(&result.output).map_err(|e| e.to_string()),
    };
    match written {
        Ok(()) => result.exit_code,
        Err(msg) => {
            eprintln!("error: {msg}");
            EXIT_INPUT
        }
    }
}

// Region conversion.

#[derive(Deserialize)]
#[serde(untagged)]
enum VertexFile {
    Wrapped(VertexList),
    Bare(Vec<[f64; 2]>),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VertexList {
    vertices: Vec<[f64; 2]>,
}

/// Reads `{"vertices": [[p, h], ...]}` or a bare vertex array and returns the half-spaces.
pub fn parse_vertices(text: &[u8]) -> Result<OperatingRegion, CliError> {
    let file: VertexFile = serde_json::from_slice(text).map_err(ParseError::from)?;
    let vertices = match file {
        VertexFile::Wrapped(v) => v.vertices,
        VertexFile::Bare(v) => v,
    };
    let points: Vec<(f64, f64)> = vertices.iter().map(|v| (v[0], v[1])).collect();
    region::halfspaces_from_vertices(&points)
        .map_err(|e| CliError::Validation(vec![Violation { entity: "region".into(), rule: e.to_string() }]))
}

fn convert_vertex_file(path: &Path) -> Result<OperatingRegion, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    parse_vertices(&bytes)
}

pub fn render_region(r: &OperatingRegion, format: OutputFormat) -> Vec<u8> {
    match format {
        OutputFormat::Json => {
            let mut v = serde_json::to_vec_pretty(r).expect("region serialization cannot fail");
            v.push(b'\n');
            v
        }
        OutputFormat::Csv => {
            let rows = r.bounds.iter().map(|b| vec![full(b.kp), full(b.kh), full(b.k0)]).collect();
            let mut out = Vec::new();
            csv_section(&mut out, "bounds", &["kp", "kh", "k0"], rows);
            out
        }
        OutputFormat::Table => {
            let rows = r
                .bounds
                .iter()
                .enumerate()
                .map(|(i, b)| {
                    vec![(i + 1).to_string(), format!("{:.4}", b.kp), format!("{:.4}", b.kh), format!("{:.4}", b.k0)]
                })
                .collect::<Vec<_>>();
            let mut s = String::new();
            text_table(&mut s, &["l", "K^p", "K^h", "K^0"], &rows);
            s.into_bytes()
        }
    }
}

// Rendering.

pub fn render_report(report: &Report, format: OutputFormat) -> Vec<u8> {
    match format {
        OutputFormat::Json => {
            let mut v = serde_json::to_vec_pretty(report).expect("report serialization cannot fail");
            v.push(b'\n');
            v
        }
        OutputFormat::Csv => render_csv(report),
        OutputFormat::Table => render_table(report).into_bytes(),
    }
}

/// Full-precision number text that parses back to the same value.
fn full(v: f64) -> String {
    format!("{v}")
}

fn money(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

const NA: &str = "--";

fn csv_section(out: &mut Vec<u8>, name: &str, header: &[&str], rows: Vec<Vec<String>>) {
    if !out.is_empty() {
        out.push(b'\n');
    }
    out.extend_from_slice(format!("# {name}\n").as_bytes());
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("writing to memory cannot fail");
    for row in rows {
        w.write_record(&row).expect("writing to memory cannot fail");
    }
    out.extend(w.into_inner().expect("flushing to memory cannot fail"));
}

fn opt_full(v: Option<f64>) -> String {
    v.map_or_else(String::new, full)
}

fn render_csv(r: &Report) -> Vec<u8> {
    let d = &r.dispatch;
    let mut out = Vec::new();
    csv_section(
        &mut out,
        "summary",
        &["label", "command", "mode", "pricing_applied", "lambda", "gamma", "objective_welfare", "settlement_welfare"],
        vec![vec![
            r.label.clone(),
            command_name(r.command).into(),
            r.mode.map_or_else(String::new, |m| m.to_string()),
            r.pricing_applied.to_string(),
            full(d.lambda),
            full(d.gamma),
            full(d.objective_welfare),
            full(d.settlement_welfare),
        ]],
    );
    csv_section(
        &mut out,
        "dispatch_users",
        &["id", "vector", "max_demand_mwh", "bid_usd_per_mwh", "quantity", "dispatched", "surplus"],
        d.electric_demands
            .iter()
            .chain(&d.heat_demands)
            .map(|u| {
                vec![
                    u.id.clone(),
                    u.vector.to_string(),
                    full(u.max_quantity),
                    full(u.bid),
                    full(u.quantity),
                    u.dispatched.to_string(),
                    full(u.surplus),
                ]
            })
            .collect(),
    );
    csv_section(
        &mut out,
        "dispatch_generators",
        &[
            "id",
            "kind",
            "electricity",
            "heat",
            "marginal_electricity_cost",
            "marginal_heat_cost",
            "electric_surplus",
            "heat_surplus",
        ],
        d.generators
            .iter()
            .map(|g| {
                vec![
                    g.id.clone(),
                    kind_name(g.kind).into(),
                    full(g.electricity),
                    full(g.heat),
                    full(g.marginal_electricity_cost),
                    full(g.marginal_heat_cost),
                    full(g.electric_surplus),
                    full(g.heat_surplus),
                ]
            })
            .collect(),
    );
    let mut rec_rows = Vec::new();
    for g in &r.recovery.generators {
        for v in [&g.electricity, &g.heat].into_iter().flatten() {
            rec_rows.push(vec![
                g.id.clone(),
                v.vector.to_string(),
                full(v.marginal_cost),
                full(v.price),
                full(v.gap),
                full(v.bound_term),
                v.recovered.to_string(),
            ]);
        }
    }
    csv_section(
        &mut out,
        "recovery",
        &["id", "vector", "marginal_cost", "price", "gap", "bound_term", "recovered"],
        rec_rows,
    );

    if let (Some(p), Some(s)) = (&r.pricing, &r.settlement) {
        csv_section(
            &mut out,
            "pricing",
            &[
                "mode",
                "lambda_pm",
                "gamma_pm",
                "uplift_objective",
                "price_deviation",
                "neutrality_residual_electricity",
                "neutrality_residual_heat",
                "settlement_welfare",
            ],
            vec![vec![
                p.mode.to_string(),
                full(p.lambda_pm),
                full(p.gamma_pm),
                full(p.uplift_objective),
                full(p.price_deviation),
                full(p.neutrality_residual_electricity),
                full(p.neutrality_residual_heat),
                full(s.settlement_welfare),
            ]],
        );
        csv_section(
            &mut out,
            "user_uplifts",
            &["id", "quantity", "u_pd", "u_cd", "v_pd", "v_cd", "electric_surplus", "heat_surplus"],
            p.electric_demands
                .iter()
                .chain(&p.heat_demands)
                .map(|a| {
                    let e = a.vector == EnergyVector::Electricity;
                    let (ep, ec, eu) =
                        if e { (Some(a.payment), Some(a.charge), Some(a.utility)) } else { (None, None, None) };
                    let (hp, hc, hu) =
                        if e { (None, None, None) } else { (Some(a.payment), Some(a.charge), Some(a.utility)) };
                    vec![
                        a.id.clone(),
                        full(a.quantity),
                        opt_full(ep),
                        opt_full(ec),
                        opt_full(hp),
                        opt_full(hc),
                        opt_full(eu),
                        opt_full(hu),
                    ]
                })
                .collect(),
        );
        csv_section(
            &mut out,
            "generator_uplifts",
            &["id", "electricity", "heat", "u_pg", "u_cg", "v_pg", "v_cg", "electric_surplus", "heat_surplus"],
            d.generators
                .iter()
                .map(|g| {
                    let e =
                        g.kind.produces_electricity().then(|| p.generator(&g.id, EnergyVector::Electricity)).flatten();
                    let h = g.kind.produces_heat().then(|| p.generator(&g.id, EnergyVector::Heat)).flatten();
                    vec![
                        g.id.clone(),
                        full(g.electricity),
                        full(g.heat),
                        opt_full(e.map(|a| a.payment)),
                        opt_full(e.map(|a| a.charge)),
                        opt_full(h.map(|a| a.payment)),
                        opt_full(h.map(|a| a.charge)),
                        opt_full(e.map(|a| a.utility)),
                        opt_full(h.map(|a| a.utility)),
                    ]
                })
                .collect(),
        );
        csv_section(
            &mut out,
            "settlement",
            &["id", "role", "vector", "quantity", "price", "uplift_payment", "uplift_charge", "cash_flow", "surplus"],
            s.rows
                .iter()
                .map(|row| {
                    vec![
                        row.id.clone(),
                        role_name(row.role).into(),
                        row.vector.to_string(),
                        full(row.quantity),
                        full(row.price),
                        full(row.uplift_payment),
                        full(row.uplift_charge),
                        full(row.cash_flow),
                        full(row.surplus),
                    ]
                })
                .collect(),
        );
        csv_section(
            &mut out,
            "settlement_totals",
            &["vector", "collected", "disbursed", "balance", "neutrality_residual"],
            s.totals
                .iter()
                .map(|t| {
                    vec![
                        t.vector.to_string(),
                        full(t.collected),
                        full(t.disbursed),
                        full(t.balance),
                        full(t.neutrality_residual),
                    ]
                })
                .collect(),
        );
        csv_section(
            &mut out,
            "recovery_verdicts",
            &["id", "vector", "recovered_at_dispatch_prices", "recovered_after_pricing"],
            s.recovery
                .iter()
                .map(|v| {
                    vec![
                        v.id.clone(),
                        v.vector.to_string(),
                        v.recovered_at_dispatch_prices.to_string(),
                        v.recovered_after_pricing.to_string(),
                    ]
                })
                .collect(),
        );
    }
    out
}

fn command_name(c: Command) -> &'static str {
    match c {
        Command::Dispatch => "dispatch",
        Command::Price => "price",
        Command::Run => "run",
        Command::VerticesToHalfspaces => "vertices-to-halfspaces",
    }
}

fn kind_name(k: model::GeneratorKind) -> &'static str {
    match k {
        model::GeneratorKind::Cogeneration => "cogeneration",
        model::GeneratorKind::ElectricOnly => "electric-only",
        model::GeneratorKind::HeatOnly => "heat-only",
    }
}

fn role_name(r: pricing::AgentRole) -> &'static str {
    match r {
        pricing::AgentRole::User => "user",
        pricing::AgentRole::Generator => "generator",
    }
}

/// Left-aligns the first column and right-aligns the rest.
fn text_table(out: &mut String, header: &[&str], rows: &[Vec<String>]) {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |out: &mut String, cells: &mut dyn Iterator<Item = &str>| {
        let mut parts = Vec::new();
        for (i, (cell, w)) in cells.zip(&widths).enumerate() {
            parts.push(if i == 0 { format!("{cell:<w$}") } else { format!("{cell:>w$}") });
        }
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(out, &mut header.iter().copied());
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    let _ = writeln!(out, "{}", rule.join("  "));
    for row in rows {
        line(out, &mut row.iter().map(String::as_str));
    }
}

fn user_names(d: &DispatchSolution) -> Vec<String> {
    (1..=d.electric_demands.len() + d.heat_demands.len()).map(|i| format!("User {i}")).collect()
}

fn render_table(r: &Report) -> String {
    let d = &r.dispatch;
    let mut s = String::new();
    let _ = writeln!(s, "{}: integrated dispatch", r.label);
    let _ = writeln!(
        s,
        "SW = $ {}   lambda = {} $/MWh   gamma = {} $/MWh\n",
        money(d.settlement_welfare),
        money(d.lambda),
        money(d.gamma)
    );

    let users = user_names(d);
    let rows: Vec<Vec<String>> = d
        .electric_demands
        .iter()
        .chain(&d.heat_demands)
        .zip(&users)
        .map(|(u, name)| {
            let e = u.vector == EnergyVector::Electricity;
            vec![
                name.clone(),
                u.id.clone(),
                if e { "D".into() } else { "Q".into() },
                money(u.quantity),
                if e { money(u.surplus) } else { NA.into() },
                if e { NA.into() } else { money(u.surplus) },
            ]
        })
        .collect();
    text_table(&mut s, &["User", "Id", "Type", "Dispatched [MWh]", "Electric surplus [$]", "Heat surplus [$]"], &rows);
    s.push('\n');

    let rows: Vec<Vec<String>> = d
        .generators
        .iter()
        .enumerate()
        .map(|(i, g)| {
            vec![
                format!("Generator {}", i + 1),
                g.id.clone(),
                money(g.electricity),
                money(g.heat),
                if g.kind.produces_electricity() { money(g.electric_surplus) } else { NA.into() },
                if g.kind.produces_heat() { money(g.heat_surplus) } else { NA.into() },
            ]
        })
        .collect();
    text_table(
        &mut s,
        &["Generator", "Id", "Electricity [MWh]", "Heat [MWh]", "Electric surplus [$]", "Heat surplus [$]"],
        &rows,
    );
    s.push('\n');

    let mut rows = Vec::new();
    for (i, g) in r.recovery.generators.iter().enumerate() {
        for v in [&g.electricity, &g.heat].into_iter().flatten() {
            rows.push(vec![
                format!("Generator {}", i + 1),
                g.id.clone(),
                v.vector.to_string(),
                money(v.marginal_cost),
                money(v.price),
                money(v.gap),
                if v.recovered { "yes".into() } else { "no".into() },
            ]);
        }
    }
    let _ = writeln!(s, "Cost recovery at dispatch prices");
    text_table(&mut s, &["Generator", "Id", "Vector", "Marginal cost", "Price", "Gap", "Recovered"], &rows);

    if r.command == Command::Run {
        let _ = writeln!(s, "\npricing applied: {}", if r.pricing_applied { "yes" } else { "no" });
    }
    if let (Some(p), Some(st)) = (&r.pricing, &r.settlement) {
        s.push('\n');
        pricing_table(&mut s, r, p, st);
    }
    s
}

fn pricing_table(s: &mut String, r: &Report, p: &PricingSolution, st: &SettlementReport) {
    let d = &r.dispatch;
    let _ = writeln!(s, "{}: pricing ({})", r.label, p.mode);
    let _ = writeln!(
        s,
        "SW = $ {}   lambda_PM = {} $/MWh   gamma_PM = {} $/MWh   uplift = $ {}\n",
        money(st.settlement_welfare),
        money(p.lambda_pm),
        money(p.gamma_pm),
        money(p.uplift_objective)
    );

    let users = user_names(d);
    let rows: Vec<Vec<String>> = p
        .electric_demands
        .iter()
        .chain(&p.heat_demands)
        .zip(&users)
        .map(|(a, name)| {
            let e = a.vector == EnergyVector::Electricity;
            let (pay, ch, util) = (money(a.payment), money(a.charge), money(a.utility));
            let na = || NA.to_string();
            if e {
                vec![name.clone(), a.id.clone(), pay, ch, na(), na(), util, na()]
            } else {
                vec![name.clone(), a.id.clone(), na(), na(), pay, ch, na(), util]
            }
        })
        .collect();
    text_table(s, &["User", "Id", "u_pd", "u_cd", "v_pd", "v_cd", "Electric surplus [$]", "Heat surplus [$]"], &rows);
    s.push('\n');

    let rows: Vec<Vec<String>> = d
        .generators
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let e = g.kind.produces_electricity().then(|| p.generator(&g.id, EnergyVector::Electricity)).flatten();
            let h = g.kind.produces_heat().then(|| p.generator(&g.id, EnergyVector::Heat)).flatten();
            let cell = |a: Option<&pricing::AgentUplift>, f: fn(&pricing::AgentUplift) -> f64| {
                a.map_or_else(|| NA.to_string(), |a| money(f(a)))
            };
            vec![
                format!("Generator {}", i + 1),
                g.id.clone(),
                cell(e, |a| a.payment),
                cell(e, |a| a.charge),
                cell(h, |a| a.payment),
                cell(h, |a| a.charge),
                cell(e, |a| a.utility),
                cell(h, |a| a.utility),
            ]
        })
        .collect();
    text_table(
        s,
        &["Generator", "Id", "u_pg", "u_cg", "v_pg", "v_cg", "Electric surplus [$]", "Heat surplus [$]"],
        &rows,
    );
    s.push('\n');

    let rows: Vec<Vec<String>> = st
        .totals
        .iter()
        .map(|t| vec![t.vector.to_string(), money(t.collected), money(t.disbursed), money(t.balance)])
        .collect();
    let _ = writeln!(s, "Settlement totals");
    text_table(s, &["Vector", "Collected [$]", "Disbursed [$]", "Balance [$]"], &rows);
}
