//! Python bindings: instances, dispatch, recovery diagnosis, pricing, settlement and
//! region conversion. Results convert to plain dicts with `to_dict()`.

use ihpm_core::cli::{self, CliError};
use ihpm_core::dispatch::{self, DispatchError, SolveOptions};
use ihpm_core::pricing::{self, PricingError};
use ihpm_core::region::{self, HalfSpace, OperatingRegion};
use ihpm_core::{
    model, CostCoefficients, DispatchSolution, GeneratorSpec, MarketInstance, PricingMode, PricingSolution,
};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

create_exception!(ihpm, InfeasibleError, PyException, "No feasible dispatch or pricing exists.");
create_exception!(ihpm, SolverError, PyException, "The interior point solver did not converge.");

fn input_error(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn dispatch_error(e: DispatchError) -> PyErr {
    match e {
        DispatchError::Invalid(_) => input_error(e),
        DispatchError::Infeasible => InfeasibleError::new_err(e.to_string()),
        DispatchError::SolverFailure(_) => SolverError::new_err(e.to_string()),
    }
}

fn pricing_error(e: PricingError) -> PyErr {
    match e {
        PricingError::Infeasible => InfeasibleError::new_err(e.to_string()),
        PricingError::SolverFailure(_) => SolverError::new_err(e.to_string()),
        PricingError::Mismatch(_) => input_error(e),
    }
}

fn cli_error(e: CliError) -> PyErr {
    match e {
        CliError::Infeasible(_) => InfeasibleError::new_err(e.to_string()),
        CliError::Solver(_) => SolverError::new_err(e.to_string()),
        _ => input_error(e),
    }
}

/// Serializes through JSON into Python objects.
fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(input_error)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn options(tol: Option<f64>) -> PyResult<SolveOptions> {
    let mut opts = SolveOptions::default();
    if let Some(tol) = tol {
        if !(tol.is_finite() && tol > 0.0) {
            return Err(input_error(format!("tolerance must be positive and finite, got {tol}")));
        }
        opts.tol = tol;
    }
    Ok(opts)
}

fn parse_mode(mode: &str) -> PyResult<PricingMode> {
    match mode {
        "per-vector" => Ok(PricingMode::PerVector),
        "net" => Ok(PricingMode::Net),
        _ => Err(input_error(format!("unknown pricing mode {mode:?}, expected \"per-vector\" or \"net\""))),
    }
}

/// A validated market instance.
#[pyclass(module = "ihpm", frozen)]
struct Instance {
    inner: MarketInstance,
}

#[pymethods]
impl Instance {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        cli::parse_instance(text.as_bytes()).map(|inner| Instance { inner }).map_err(cli_error)
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        cli::load_instance(&path).map(|inner| Instance { inner }).map_err(cli_error)
    }

    fn to_json(&self) -> String {
        cli::render_instance(&self.inner)
    }

    #[getter]
    fn label(&self) -> &str {
        &self.inner.label
    }

    #[getter]
    fn generator_ids(&self) -> Vec<String> {
        self.inner.generators.iter().map(|g| g.id.clone()).collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Instance(label={:?}, generators={}, electric_demands={}, heat_demands={})",
            self.inner.label,
            self.inner.generators.len(),
            self.inner.electric_demands.len(),
            self.inner.heat_demands.len()
        )
    }
}

#[pyclass(module = "ihpm", frozen)]
struct Dispatch {
    inner: DispatchSolution,
}

#[pymethods]
impl Dispatch {
    /// Electricity price, $/MWh.
    #[getter]
    fn lambda_(&self) -> f64 {
        self.inner.lambda
    }

    /// Heat price, $/MWh.
    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma
    }

    #[getter]
    fn objective_welfare(&self) -> f64 {
        self.inner.objective_welfare
    }

    #[getter]
    fn settlement_welfare(&self) -> f64 {
        self.inner.settlement_welfare
    }

    /// `(electricity, heat)` of one generator.
    fn output(&self, id: &str) -> PyResult<(f64, f64)> {
        let g = self.inner.generator(id).ok_or_else(|| input_error(format!("no generator {id:?}")))?;
        Ok((g.electricity, g.heat))
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner)
    }

    fn __repr__(&self) -> String {
        format!("Dispatch(lambda={:.4}, gamma={:.4})", self.inner.lambda, self.inner.gamma)
    }
}

#[pyclass(module = "ihpm", frozen)]
struct Pricing {
    inner: PricingSolution,
}

#[pymethods]
impl Pricing {
    #[getter]
    fn lambda_pm(&self) -> f64 {
        self.inner.lambda_pm
    }

    #[getter]
    fn gamma_pm(&self) -> f64 {
        self.inner.gamma_pm
    }

    #[getter]
    fn uplift_objective(&self) -> f64 {
        self.inner.uplift_objective
    }

    #[getter]
    fn mode(&self) -> String {
        self.inner.mode.to_string()
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner)
    }

    fn __repr__(&self) -> String {
        format!(
            "Pricing(mode={}, lambda_pm={:.4}, gamma_pm={:.4}, uplift={:.4})",
            self.inner.mode, self.inner.lambda_pm, self.inner.gamma_pm, self.inner.uplift_objective
        )
    }
}

#[pyfunction]
#[pyo3(signature = (instance, tol=None))]
fn solve_ihpd(py: Python<'_>, instance: &Instance, tol: Option<f64>) -> PyResult<Dispatch> {
    let opts = options(tol)?;
    let inst = &instance.inner;
    py.detach(|| dispatch::solve_ihpd_with(inst, &opts)).map(|inner| Dispatch { inner }).map_err(dispatch_error)
}

#[pyfunction]
fn diagnose_recovery<'py>(py: Python<'py>, instance: &Instance, dispatch: &Dispatch) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &dispatch::diagnose_recovery(&instance.inner, &dispatch.inner))
}

#[pyfunction]
#[pyo3(signature = (instance, dispatch, mode="per-vector", tol=None))]
fn solve_pm(
    py: Python<'_>,
    instance: &Instance,
    dispatch: &Dispatch,
    mode: &str,
    tol: Option<f64>,
) -> PyResult<Pricing> {
    let (mode, opts) = (parse_mode(mode)?, options(tol)?);
    let (inst, sol) = (&instance.inner, &dispatch.inner);
    py.detach(|| pricing::solve_pm_with(inst, sol, mode, &opts)).map(|inner| Pricing { inner }).map_err(pricing_error)
}

#[pyfunction]
fn settle<'py>(
    py: Python<'py>,
    instance: &Instance,
    dispatch: &Dispatch,
    pricing: &Pricing,
) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &pricing::settle(&instance.inner, &dispatch.inner, &pricing.inner))
}

fn unit(c2p: f64, c1p: f64, c2h: f64, c1h: f64, chp: f64, c0: f64) -> GeneratorSpec {
    GeneratorSpec::new("unit", CostCoefficients { c2p, c1p, c2h, c1h, chp, c0 }, OperatingRegion::default())
}

/// Cost `c2p p^2 + c1p p + c2h h^2 + c1h h + chp h p + c0` in $.
#[pyfunction]
#[pyo3(signature = (p, h, *, c2p=0.0, c1p=0.0, c2h=0.0, c1h=0.0, chp=0.0, c0=0.0))]
#[allow(clippy::too_many_arguments)]
fn total_cost(p: f64, h: f64, c2p: f64, c1p: f64, c2h: f64, c1h: f64, chp: f64, c0: f64) -> f64 {
    model::total_cost(&unit(c2p, c1p, c2h, c1h, chp, c0), p, h)
}

/// `(dC/dp, dC/dh)` in $/MWh.
#[pyfunction]
#[pyo3(signature = (p, h, *, c2p=0.0, c1p=0.0, c2h=0.0, c1h=0.0, chp=0.0, c0=0.0))]
#[allow(clippy::too_many_arguments)]
fn marginal_costs(p: f64, h: f64, c2p: f64, c1p: f64, c2h: f64, c1h: f64, chp: f64, c0: f64) -> (f64, f64) {
    model::marginal_costs(&unit(c2p, c1p, c2h, c1h, chp, c0), p, h)
}

/// Half-spaces `(kp, kh, k0)` with `kp p + kh h <= k0` of the convex hull of the points.
#[pyfunction]
fn halfspaces_from_vertices(points: Vec<(f64, f64)>) -> PyResult<Vec<(f64, f64, f64)>> {
    let r = region::halfspaces_from_vertices(&points).map_err(input_error)?;
    Ok(r.bounds.iter().map(|b| (b.kp, b.kh, b.k0)).collect())
}

/// Counterclockwise vertices of the region cut out by `(kp, kh, k0)` half-spaces.
#[pyfunction]
fn enumerate_vertices(bounds: Vec<(f64, f64, f64)>) -> PyResult<Vec<(f64, f64)>> {
    let r = OperatingRegion::new(bounds.into_iter().map(|(kp, kh, k0)| HalfSpace::new(kp, kh, k0)).collect());
    region::enumerate_vertices(&r).map_err(input_error)
}

#[pymodule]
fn ihpm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("InfeasibleError", py.get_type::<InfeasibleError>())?;
    m.add("SolverError", py.get_type::<SolverError>())?;
    m.add_class::<Instance>()?;
    m.add_class::<Dispatch>()?;
    m.add_class::<Pricing>()?;
    m.add_function(wrap_pyfunction!(solve_ihpd, m)?)?;
    m.add_function(wrap_pyfunction!(diagnose_recovery, m)?)?;
    m.add_function(wrap_pyfunction!(solve_pm, m)?)?;
    m.add_function(wrap_pyfunction!(settle, m)?)?;
    m.add_function(wrap_pyfunction!(total_cost, m)?)?;
    m.add_function(wrap_pyfunction!(marginal_costs, m)?)?;
    m.add_function(wrap_pyfunction!(halfspaces_from_vertices, m)?)?;
    m.add_function(wrap_pyfunction!(enumerate_vertices, m)?)?;
    Ok(())
}
