//! Market clearing and uplift pricing for integrated heat and power markets.
//!
//! The workflow is two-step: [`dispatch::solve_ihpd`] co-optimizes electricity and heat
//! and reads energy prices off the balance-constraint duals; when some dispatched unit
//! fails to recover its marginal cost, [`pricing::solve_pm`] computes corrected prices
//! and the minimal set of revenue-neutral uplifts.

pub mod cli;
pub mod dispatch;
pub mod model;
pub mod pricing;
pub mod qpsolver;
pub mod region;

pub use dispatch::{diagnose_recovery, solve_ihpd, DispatchSolution, RecoveryDiagnosis};
pub use model::{CostCoefficients, DemandBid, EnergyVector, GeneratorKind, GeneratorSpec, MarketInstance};
pub use pricing::{settle, solve_pm, PricingMode, PricingSolution, SettlementReport};
pub use region::{HalfSpace, OperatingRegion};
