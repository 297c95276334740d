//! Market instance types and generator cost functions.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::region::{self, OperatingRegion, RegionError};

/// Coefficients of the quadratic generation cost
/// `c2p p^2 + c1p p + c2h h^2 + c1h h + chp h p + c0`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostCoefficients {
    pub c2p: f64,
    pub c1p: f64,
    pub c2h: f64,
    pub c1h: f64,
    pub chp: f64,
    pub c0: f64,
}

impl CostCoefficients {
    /// Determinant `4 c2p c2h - chp^2` of the cost Hessian.
    pub fn hessian_determinant(&self) -> f64 {
        4.0 * self.c2p * self.c2h - self.chp * self.chp
    }

    pub fn is_convex(&self) -> bool {
        self.c2p >= 0.0 && self.c2h >= 0.0 && self.hessian_determinant() >= 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    Cogeneration,
    ElectricOnly,
    HeatOnly,
}

impl GeneratorKind {
    /// Whether the unit belongs to the electricity generator set.
    pub fn produces_electricity(self) -> bool {
        !matches!(self, GeneratorKind::HeatOnly)
    }

    pub fn produces_heat(self) -> bool {
        !matches!(self, GeneratorKind::ElectricOnly)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub id: String,
    pub cost: CostCoefficients,
    pub region: OperatingRegion,
}

impl GeneratorSpec {
    pub fn new(id: impl Into<String>, cost: CostCoefficients, region: OperatingRegion) -> Self {
        Self { id: id.into(), cost, region }
    }

    /// Classification by exact zero tests on the bound coefficients.
    pub fn kind(&self) -> GeneratorKind {
        if self.region.bounds.iter().all(|b| b.kh == 0.0) {
            GeneratorKind::ElectricOnly
        } else if self.region.bounds.iter().all(|b| b.kp == 0.0) {
            GeneratorKind::HeatOnly
        } else {
            GeneratorKind::Cogeneration
        }
    }

    pub fn total_cost(&self, p: f64, h: f64) -> f64 {
        total_cost(self, p, h)
    }

    pub fn marginal_costs(&self, p: f64, h: f64) -> (f64, f64) {
        marginal_costs(self, p, h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnergyVector {
    Electricity,
    Heat,
}

impl fmt::Display for EnergyVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnergyVector::Electricity => f.write_str("electricity"),
            EnergyVector::Heat => f.write_str("heat"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemandBid {
    pub id: String,
    pub vector: EnergyVector,
    /// MWh
    pub max_quantity: f64,
    /// $/MWh
    pub bid: f64,
}

impl DemandBid {
    pub fn electricity(id: impl Into<String>, max_quantity: f64, bid: f64) -> Self {
        Self { id: id.into(), vector: EnergyVector::Electricity, max_quantity, bid }
    }

    pub fn heat(id: impl Into<String>, max_quantity: f64, bid: f64) -> Self {
        Self { id: id.into(), vector: EnergyVector::Heat, max_quantity, bid }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarketInstance {
    pub label: String,
    pub generators: Vec<GeneratorSpec>,
    pub electric_demands: Vec<DemandBid>,
    pub heat_demands: Vec<DemandBid>,
}

/// A broken invariant, naming the entity and the rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub entity: String,
    pub rule: String,
}

impl Violation {
    fn new(entity: impl Into<String>, rule: impl Into<String>) -> Self {
        Self { entity: entity.into(), rule: rule.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.entity, self.rule)
    }
}

pub fn total_cost(gen: &GeneratorSpec, p: f64, h: f64) -> f64 {
    let c = &gen.cost;
    c.c2p * p * p + c.c1p * p + c.c2h * h * h + c.c1h * h + c.chp * h * p + c.c0
}

/// Partial derivatives `(dC/dp, dC/dh)` of the cost polynomial.
pub fn marginal_costs(gen: &GeneratorSpec, p: f64, h: f64) -> (f64, f64) {
    let c = &gen.cost;
    (2.0 * c.c2p * p + c.c1p + c.chp * h, 2.0 * c.c2h * h + c.c1h + c.chp * p)
}

fn check_region(gen: &GeneratorSpec, out: &mut Vec<Violation>) {
    let entity = format!("generator {}", gen.id);
    let region = &gen.region;
    let before = out.len();
    if region.is_empty() {
        out.push(Violation::new(entity, "operating region has no bounds"));
        return;
    }
    for (l, b) in region.bounds.iter().enumerate() {
        if b.is_degenerate() {
            out.push(Violation::new(&entity, format!("bound {} has kp = kh = 0", l + 1)));
        }
        if !(b.kp.is_finite() && b.kh.is_finite() && b.k0.is_finite()) {
            out.push(Violation::new(&entity, format!("bound {} is not finite", l + 1)));
        }
    }
    if out.len() > before {
        return;
    }
    match gen.kind() {
        GeneratorKind::Cogeneration => match region::enumerate_vertices(region) {
            Ok(v) if v.is_empty() => out.push(Violation::new(entity, "operating region is empty")),
            Ok(v) => {
                if v.iter().any(|&(p, _)| p < -region::DEFAULT_TOL) {
                    out.push(Violation::new(entity, "operating region admits negative electricity output"));
                }
            }
            Err(RegionError::Unbounded) => out.push(Violation::new(entity, "operating region is unbounded")),
            Err(e) => out.push(Violation::new(entity, e.to_string())),
        },
        GeneratorKind::ElectricOnly => match region::coordinate_interval(region, |b| b.kp) {
            None => out.push(Violation::new(entity, "operating region is empty")),
            Some((lo, hi)) if !lo.is_finite() || !hi.is_finite() => {
                out.push(Violation::new(entity, "operating region is unbounded"))
            }
            Some((lo, _)) if lo < -region::DEFAULT_TOL => {
                out.push(Violation::new(entity, "operating region admits negative electricity output"))
            }
            Some(_) => {}
        },
        GeneratorKind::HeatOnly => match region::coordinate_interval(region, |b| b.kh) {
            None => out.push(Violation::new(entity, "operating region is empty")),
            Some((lo, hi)) if !lo.is_finite() || !hi.is_finite() => {
                out.push(Violation::new(entity, "operating region is unbounded"))
            }
            Some(_) => {}
        },
    }
}

/// Checks every instance invariant; an empty result means the instance is valid.
pub fn validate_instance(inst: &MarketInstance) -> Vec<Violation> {
    let mut out = Vec::new();
    if inst.generators.is_empty() {
        out.push(Violation::new("instance", "at least one generator is required"));
    }

    let mut seen = HashSet::new();
    for gen in &inst.generators {
        if !seen.insert(gen.id.as_str()) {
            out.push(Violation::new(format!("generator {}", gen.id), "duplicate id"));
        }
        let c = &gen.cost;
        let coeffs = [c.c2p, c.c1p, c.c2h, c.c1h, c.chp, c.c0];
        if coeffs.iter().any(|x| !x.is_finite()) {
            out.push(Violation::new(format!("generator {}", gen.id), "cost coefficient is not finite"));
        } else if !c.is_convex() {
            out.push(Violation::new(
                format!("generator {}", gen.id),
                format!(
                    "cost is not convex (c2p = {}, c2h = {}, 4 c2p c2h - chp^2 = {})",
                    c.c2p,
                    c.c2h,
                    c.hessian_determinant()
                ),
            ));
        }
        check_region(gen, &mut out);
    }

    for (list, vector, what) in [
        (&inst.electric_demands, EnergyVector::Electricity, "electric demand"),
        (&inst.heat_demands, EnergyVector::Heat, "heat demand"),
    ] {
        let mut seen = HashSet::new();
        for bid in list {
            let entity = format!("{what} {}", bid.id);
            if !seen.insert(bid.id.as_str()) {
                out.push(Violation::new(&entity, "duplicate id"));
            }
            if bid.vector != vector {
                out.push(Violation::new(&entity, format!("listed as {what} but bids for {}", bid.vector)));
            }
            if !(bid.max_quantity.is_finite() && bid.max_quantity >= 0.0) {
                out.push(Violation::new(&entity, format!("max quantity {} must be finite and >= 0", bid.max_quantity)));
            }
            if !bid.bid.is_finite() {
                out.push(Violation::new(&entity, "bid is not finite"));
            }
        }
    }
    out
}
