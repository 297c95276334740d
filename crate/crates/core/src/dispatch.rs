//! Welfare-maximizing integrated heat and power dispatch.
//!
//! The dispatch is assembled as a convex QP: the variables are the served electric and
//! heat demands and each unit's electricity and heat output. The two balance rows carry
//! the energy prices as duals, and the operating-region rows carry the bound duals `mu`.
//! At the optimum every unit satisfies
//!
//! ```text
//!     lambda = m_p + sum_l mu_l * kp_l
//!     gamma  = m_h + sum_l mu_l * kh_l
//! ```
//!
//! so a unit sitting on a bound can be paid less than its marginal cost.

use serde::Serialize;
use thiserror::Error;

use crate::model::{self, EnergyVector, GeneratorKind, MarketInstance, Violation};
use crate::qpsolver::{self, KktResiduals, QuadraticProgram, SolveStatus, SolverError};
use crate::region;

/// Quantities at or below this are treated as not dispatched (MWh).
pub const DISPATCH_THRESHOLD: f64 = 1e-6;

/// Slack in the cost-recovery test ($/MWh).
pub const RECOVERY_TOL: f64 = 1e-6;

/// Allowed violation of the price identities before the dual mapping is considered broken.
const PRICE_IDENTITY_TOL: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DispatchError {
    #[error("invalid instance: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("no dispatch satisfies the balances and operating regions")]
    Infeasible,
    #[error("solver failure: {0}")]
    SolverFailure(String),
}

impl From<SolverError> for DispatchError {
    fn from(e: SolverError) -> Self {
        DispatchError::SolverFailure(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tol: qpsolver::DEFAULT_TOL, max_iter: qpsolver::DEFAULT_MAX_ITER }
    }
}

/// Column and row indices of an assembled dispatch problem.
#[derive(Debug, Clone, PartialEq)]
pub struct IhpdLayout {
    pub electric_demand: Vec<usize>,
    pub heat_demand: Vec<usize>,
    /// `None` for heat-only units.
    pub electricity: Vec<Option<usize>>,
    /// `None` for electric-only units.
    pub heat: Vec<Option<usize>>,
    pub power_balance_row: usize,
    pub heat_balance_row: usize,
    /// Inequality row of bound `l` of generator `g` at `[g][l]`.
    pub region_rows: Vec<Vec<usize>>,
}

pub(crate) fn assemble(inst: &MarketInstance) -> Result<(QuadraticProgram, IhpdLayout), DispatchError> {
    let violations = model::validate_instance(inst);
    if !violations.is_empty() {
        return Err(DispatchError::Invalid(violations));
    }

    let mut names = Vec::new();
    let electric_demand: Vec<usize> = inst
        .electric_demands
        .iter()
        .map(|d| {
            names.push(format!("d[{}]", d.id));
            names.len() - 1
        })
        .collect();
    let heat_demand: Vec<usize> = inst
        .heat_demands
        .iter()
        .map(|d| {
            names.push(format!("q[{}]", d.id));
            names.len() - 1
        })
        .collect();
    let mut electricity = Vec::new();
    let mut heat = Vec::new();
    for gen in &inst.generators {
        let kind = gen.kind();
        electricity.push(kind.produces_electricity().then(|| {
            names.push(format!("p[{}]", gen.id));
            names.len() - 1
        }));
        heat.push(kind.produces_heat().then(|| {
            names.push(format!("h[{}]", gen.id));
            names.len() - 1
        }));
    }

    let mut qp = QuadraticProgram::new(names.len());
    qp.var_names = names;

    // Objective: minimize -(bids) + costs without the constant terms.
    for (d, &col) in inst.electric_demands.iter().zip(&electric_demand) {
        qp.c[col] = -d.bid;
    }
    for (d, &col) in inst.heat_demands.iter().zip(&heat_demand) {
        qp.c[col] = -d.bid;
    }
    for (g, gen) in inst.generators.iter().enumerate() {
        let c = &gen.cost;
        if let Some(p) = electricity[g] {
            qp.q[(p, p)] = 2.0 * c.c2p;
            qp.c[p] = c.c1p;
        }
        if let Some(h) = heat[g] {
            qp.q[(h, h)] = 2.0 * c.c2h;
            qp.c[h] = c.c1h;
        }
        if let (Some(p), Some(h)) = (electricity[g], heat[g]) {
            qp.q[(p, h)] = c.chp;
            qp.q[(h, p)] = c.chp;
        }
    }

    let mut row: Vec<(usize, f64)> = electric_demand.iter().map(|&j| (j, 1.0)).collect();
    row.extend(electricity.iter().flatten().map(|&j| (j, -1.0)));
    let power_balance_row = qp.add_eq("power_balance", &row, 0.0);
    let mut row: Vec<(usize, f64)> = heat_demand.iter().map(|&j| (j, 1.0)).collect();
    row.extend(heat.iter().flatten().map(|&j| (j, -1.0)));
    let heat_balance_row = qp.add_eq("heat_balance", &row, 0.0);

    let mut region_rows = Vec::new();
    for (g, gen) in inst.generators.iter().enumerate() {
        let rows = gen
            .region
            .bounds
            .iter()
            .enumerate()
            .map(|(l, b)| {
                let mut coeffs = Vec::new();
                if let Some(p) = electricity[g] {
                    coeffs.push((p, b.kp));
                }
                if let Some(h) = heat[g] {
                    coeffs.push((h, b.kh));
                }
                qp.add_ineq(format!("region[{}][{}]", gen.id, l + 1), &coeffs, b.k0)
            })
            .collect();
        region_rows.push(rows);
    }
    for (d, &col) in inst.electric_demands.iter().zip(&electric_demand) {
        qp.add_ineq(format!("d_max[{}]", d.id), &[(col, 1.0)], d.max_quantity);
    }
    for (d, &col) in inst.heat_demands.iter().zip(&heat_demand) {
        qp.add_ineq(format!("q_max[{}]", d.id), &[(col, 1.0)], d.max_quantity);
    }
    for (d, &col) in inst.electric_demands.iter().zip(&electric_demand) {
        qp.add_ineq(format!("d_min[{}]", d.id), &[(col, -1.0)], 0.0);
    }
    for (d, &col) in inst.heat_demands.iter().zip(&heat_demand) {
        qp.add_ineq(format!("q_min[{}]", d.id), &[(col, -1.0)], 0.0);
    }

    Ok((
        qp,
        IhpdLayout {
            electric_demand,
            heat_demand,
            electricity,
            heat,
            power_balance_row,
            heat_balance_row,
            region_rows,
        },
    ))
}

/// The dispatch QP in minimization form.
pub fn build_ihpd(inst: &MarketInstance) -> Result<QuadraticProgram, DispatchError> {
    assemble(inst).map(|(qp, _)| qp)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemandOutcome {
    pub id: String,
    pub vector: EnergyVector,
    pub max_quantity: f64,
    pub bid: f64,
    pub quantity: f64,
    pub dispatched: bool,
    /// `quantity * (bid - price)`
    pub surplus: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratorOutcome {
    pub id: String,
    pub kind: GeneratorKind,
    pub electricity: f64,
    pub heat: f64,
    pub marginal_electricity_cost: f64,
    pub marginal_heat_cost: f64,
    pub dispatched_electricity: bool,
    pub dispatched_heat: bool,
    /// `p * (lambda - m_p)`
    pub electric_surplus: f64,
    /// `h * (gamma - m_h)`
    pub heat_surplus: f64,
    /// One dual per operating-region bound, in bound order.
    pub bound_duals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DispatchSolution {
    pub label: String,
    pub lambda: f64,
    pub gamma: f64,
    pub electric_demands: Vec<DemandOutcome>,
    pub heat_demands: Vec<DemandOutcome>,
    pub generators: Vec<GeneratorOutcome>,
    /// Bid value minus total generation cost, constants included.
    pub objective_welfare: f64,
    /// Sum of all agents' marginal-price surpluses.
    pub settlement_welfare: f64,
    pub kkt: KktResiduals,
    pub iterations: usize,
}

impl DispatchSolution {
    pub fn generator(&self, id: &str) -> Option<&GeneratorOutcome> {
        self.generators.iter().find(|g| g.id == id)
    }

    pub fn demand(&self, id: &str) -> Option<&DemandOutcome> {
        self.electric_demands.iter().chain(&self.heat_demands).find(|d| d.id == id)
    }

    pub fn price(&self, vector: EnergyVector) -> f64 {
        match vector {
            EnergyVector::Electricity => self.lambda,
            EnergyVector::Heat => self.gamma,
        }
    }
}

pub fn solve_ihpd(inst: &MarketInstance) -> Result<DispatchSolution, DispatchError> {
    solve_ihpd_with(inst, &SolveOptions::default())
}

pub fn solve_ihpd_with(inst: &MarketInstance, opts: &SolveOptions) -> Result<DispatchSolution, DispatchError> {
    let (qp, layout) = assemble(inst)?;
    let sol = qpsolver::solve_qp(&qp, opts.tol, opts.max_iter)?;
    match sol.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => return Err(DispatchError::Infeasible),
        other => return Err(DispatchError::SolverFailure(format!("solver stopped with status {other:?}"))),
    }

    // With the balance rows written as demand - generation = 0, stationarity in p reads
    // m_p - y + sum mu kp = 0, so the equality dual is the price itself.
    let lambda = sol.y[layout.power_balance_row];
    let gamma = sol.y[layout.heat_balance_row];

    let demand_outcomes = |bids: &[model::DemandBid], cols: &[usize], price: f64| -> Vec<DemandOutcome> {
        bids.iter()
            .zip(cols)
            .map(|(d, &col)| {
                let quantity = sol.x[col];
                DemandOutcome {
                    id: d.id.clone(),
                    vector: d.vector,
                    max_quantity: d.max_quantity,
                    bid: d.bid,
                    quantity,
                    dispatched: quantity > DISPATCH_THRESHOLD,
                    surplus: quantity * (d.bid - price),
                }
            })
            .collect()
    };
    let electric_demands = demand_outcomes(&inst.electric_demands, &layout.electric_demand, lambda);
    let heat_demands = demand_outcomes(&inst.heat_demands, &layout.heat_demand, gamma);

    let mut generators = Vec::new();
    for (g, gen) in inst.generators.iter().enumerate() {
        let p = layout.electricity[g].map_or(0.0, |j| sol.x[j]);
        let h = layout.heat[g].map_or(0.0, |j| sol.x[j]);
        let (mp, mh) = model::marginal_costs(gen, p, h);
        let bound_duals: Vec<f64> = layout.region_rows[g].iter().map(|&r| sol.z[r]).collect();

        for (present, price, marginal, coeff) in
            [(layout.electricity[g].is_some(), lambda, mp, 0usize), (layout.heat[g].is_some(), gamma, mh, 1usize)]
        {
            if !present {
                continue;
            }
            let term: f64 = gen
                .region
                .bounds
                .iter()
                .zip(&bound_duals)
                .map(|(b, mu)| mu * if coeff == 0 { b.kp } else { b.kh })
                .sum();
            let residual = price - marginal - term;
            if residual.abs() > PRICE_IDENTITY_TOL * (1.0 + price.abs()) {
                return Err(DispatchError::SolverFailure(format!(
                    "price identity violated for generator {} by {residual:e}",
                    gen.id
                )));
            }
        }

        generators.push(GeneratorOutcome {
            id: gen.id.clone(),
            kind: gen.kind(),
            electricity: p,
            heat: h,
            marginal_electricity_cost: mp,
            marginal_heat_cost: mh,
            dispatched_electricity: layout.electricity[g].is_some() && p > DISPATCH_THRESHOLD,
            dispatched_heat: layout.heat[g].is_some() && h > DISPATCH_THRESHOLD,
            electric_surplus: if layout.electricity[g].is_some() { p * (lambda - mp) } else { 0.0 },
            heat_surplus: if layout.heat[g].is_some() { h * (gamma - mh) } else { 0.0 },
            bound_duals,
        });
    }

    let constants: f64 = inst.generators.iter().map(|g| g.cost.c0).sum();
    let objective_welfare = -sol.objective - constants;
    let settlement_welfare = electric_demands.iter().chain(&heat_demands).map(|d| d.surplus).sum::<f64>()
        + generators.iter().map(|g| g.electric_surplus + g.heat_surplus).sum::<f64>();

    Ok(DispatchSolution {
        label: inst.label.clone(),
        lambda,
        gamma,
        electric_demands,
        heat_demands,
        generators,
        objective_welfare,
        settlement_welfare,
        kkt: sol.kkt,
        iterations: sol.iterations,
    })
}

/// How an active bound shifts prices relative to marginal costs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundClass {
    /// Electricity price below marginal electricity cost.
    ElectricityBelowMarginal,
    HeatBelowMarginal,
    BothBelowMarginal,
    /// Both prices at or above marginal cost.
    AboveMarginal,
    /// Binding with a zero dual; prices equal marginal costs.
    Unpriced,
}

impl BoundClass {
    fn from_terms(electric: f64, heat: f64) -> Self {
        const EPS: f64 = 1e-9;
        match (electric < -EPS, heat < -EPS) {
            (true, true) => BoundClass::BothBelowMarginal,
            (true, false) => BoundClass::ElectricityBelowMarginal,
            (false, true) => BoundClass::HeatBelowMarginal,
            (false, false) if electric > EPS || heat > EPS => BoundClass::AboveMarginal,
            (false, false) => BoundClass::Unpriced,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActiveBound {
    /// Zero-based bound index.
    pub index: usize,
    pub dual: f64,
    /// `mu * kp`
    pub electric_term: f64,
    /// `mu * kh`
    pub heat_term: f64,
    pub class: BoundClass,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VectorRecovery {
    pub vector: EnergyVector,
    pub marginal_cost: f64,
    pub price: f64,
    /// `price - marginal_cost`
    pub gap: f64,
    pub recovered: bool,
    /// `sum_l mu_l * k_l` for this vector; equals `gap` at a KKT point.
    pub bound_term: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratorRecovery {
    pub id: String,
    /// Present when the unit is dispatched for electricity.
    pub electricity: Option<VectorRecovery>,
    /// Present when the unit is dispatched for heat.
    pub heat: Option<VectorRecovery>,
    pub active_bounds: Vec<ActiveBound>,
}

impl GeneratorRecovery {
    pub fn fails(&self, vector: EnergyVector) -> bool {
        let v = match vector {
            EnergyVector::Electricity => &self.electricity,
            EnergyVector::Heat => &self.heat,
        };
        v.as_ref().is_some_and(|r| !r.recovered)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryDiagnosis {
    pub generators: Vec<GeneratorRecovery>,
}

impl RecoveryDiagnosis {
    pub fn any_failure(&self) -> bool {
        self.generators.iter().any(|g| g.fails(EnergyVector::Electricity) || g.fails(EnergyVector::Heat))
    }

    pub fn generator(&self, id: &str) -> Option<&GeneratorRecovery> {
        self.generators.iter().find(|g| g.id == id)
    }
}

/// Cost-recovery check of every dispatched unit, with the bound decomposition of each gap.
pub fn diagnose_recovery(inst: &MarketInstance, sol: &DispatchSolution) -> RecoveryDiagnosis {
    let generators = inst
        .generators
        .iter()
        .zip(&sol.generators)
        .map(|(gen, out)| {
            let electric_term: f64 = gen.region.bounds.iter().zip(&out.bound_duals).map(|(b, mu)| mu * b.kp).sum();
            let heat_term: f64 = gen.region.bounds.iter().zip(&out.bound_duals).map(|(b, mu)| mu * b.kh).sum();
            let check = |vector, marginal_cost: f64, price: f64, bound_term| {
                let gap = price - marginal_cost;
                VectorRecovery { vector, marginal_cost, price, gap, recovered: gap >= -RECOVERY_TOL, bound_term }
            };
            let electricity = out
                .dispatched_electricity
                .then(|| check(EnergyVector::Electricity, out.marginal_electricity_cost, sol.lambda, electric_term));
            let heat =
                out.dispatched_heat.then(|| check(EnergyVector::Heat, out.marginal_heat_cost, sol.gamma, heat_term));
            let active_bounds = region::active_bounds(&gen.region, out.electricity, out.heat, region::DEFAULT_TOL)
                .into_iter()
                .map(|l| {
                    let b = &gen.region.bounds[l];
                    let dual = out.bound_duals[l];
                    let (et, ht) = (dual * b.kp, dual * b.kh);
                    ActiveBound {
                        index: l,
                        dual,
                        electric_term: et,
                        heat_term: ht,
                        class: BoundClass::from_terms(et, ht),
                    }
                })
                .collect();
            GeneratorRecovery { id: gen.id.clone(), electricity, heat, active_bounds }
        })
        .collect();
    RecoveryDiagnosis { generators }
}
