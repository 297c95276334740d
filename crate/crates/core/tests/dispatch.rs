mod support;

use ihpm_core::dispatch::{build_ihpd, solve_ihpd, DispatchError};
use ihpm_core::{
    diagnose_recovery, CostCoefficients, DemandBid, GeneratorSpec, HalfSpace, MarketInstance, OperatingRegion,
};
use proptest::prelude::*;
use support::{cost, marginal_h, marginal_p};

#[test]
fn summer_program_shape() {
    let qp = build_ihpd(&support::fixture("summer")).unwrap();
    assert_eq!(qp.n(), 8);
    assert_eq!(qp.n_eq(), 2);
    assert_eq!(qp.n_ineq(), 9 + 8);
    assert!(qp.eq_names[0].contains("power"), "{:?}", qp.eq_names);
    assert!(qp.eq_names[1].contains("heat"), "{:?}", qp.eq_names);
}

#[test]
fn fixture_regions_cannot_serve_zero_demand() {
    let mut inst = support::fixture("summer");
    inst.electric_demands.clear();
    inst.heat_demands.clear();
    assert_eq!(solve_ihpd(&inst), Err(DispatchError::Infeasible));
}

#[test]
fn heat_only_units_idle_without_heat_demand() {
    let boiler = GeneratorSpec::new(
        "boiler",
        CostCoefficients { c2h: 0.1, c1h: 1.0, ..Default::default() },
        OperatingRegion::new(vec![HalfSpace::new(0.0, 1.0, 50.0), HalfSpace::new(0.0, -1.0, 0.0)]),
    );
    let inst = MarketInstance {
        label: "boiler".into(),
        generators: vec![support::electric_box("e", 0.0, 20.0, 0.5, 1.0), boiler],
        electric_demands: vec![DemandBid::electricity("d", 5.0, 40.0)],
        heat_demands: vec![],
    };
    let sol = solve_ihpd(&inst).unwrap();
    assert!(sol.generators.iter().all(|g| g.heat.abs() < 1e-6));
    assert!(!sol.generator("boiler").unwrap().dispatched_heat);
}

#[test]
fn single_unit_clears_at_its_marginal_cost() {
    let inst = MarketInstance {
        label: "one".into(),
        generators: vec![support::electric_box("g", 0.0, 10.0, 1.0, 0.0)],
        electric_demands: vec![DemandBid::electricity("d", 4.0, 100.0)],
        heat_demands: vec![],
    };
    let sol = solve_ihpd(&inst).unwrap();
    assert!((sol.lambda - 8.0).abs() < 1e-6);
    assert!((sol.demand("d").unwrap().quantity - 4.0).abs() < 1e-6);
}

#[test]
fn interior_unit_recovers_on_both_vectors() {
    let chp = GeneratorSpec::new(
        "chp",
        CostCoefficients { c2p: 1.0, c2h: 1.0, ..Default::default() },
        OperatingRegion::new(vec![
            HalfSpace::new(1.0, 0.0, 100.0),
            HalfSpace::new(-1.0, 0.0, 0.0),
            HalfSpace::new(0.0, 1.0, 100.0),
            HalfSpace::new(0.0, -1.0, 0.0),
        ]),
    );
    let inst = MarketInstance {
        label: "interior".into(),
        generators: vec![chp],
        electric_demands: vec![DemandBid::electricity("d", 4.0, 100.0)],
        heat_demands: vec![DemandBid::heat("q", 3.0, 100.0)],
    };
    let sol = solve_ihpd(&inst).unwrap();
    assert!((sol.lambda - 8.0).abs() < 1e-6 && (sol.gamma - 6.0).abs() < 1e-6);
    let diag = diagnose_recovery(&inst, &sol);
    let g = diag.generator("chp").unwrap();
    assert!(g.active_bounds.is_empty());
    for v in [g.electricity.as_ref().unwrap(), g.heat.as_ref().unwrap()] {
        assert!(v.recovered && v.gap.abs() < 1e-6, "{v:?}");
    }
}

fn scenarios() -> Vec<MarketInstance> {
    vec![support::fixture("summer"), support::fixture("winter")]
}

#[test]
fn balances_regions_and_boxes_hold() {
    for inst in scenarios() {
        let sol = solve_ihpd(&inst).unwrap();
        let d: f64 = sol.electric_demands.iter().map(|x| x.quantity).sum();
        let q: f64 = sol.heat_demands.iter().map(|x| x.quantity).sum();
        let p: f64 = sol.generators.iter().map(|g| g.electricity).sum();
        let h: f64 = sol.generators.iter().map(|g| g.heat).sum();
        assert!((d - p).abs() <= 1e-6 && (q - h).abs() <= 1e-6, "{}", inst.label);
        for (spec, out) in inst.generators.iter().zip(&sol.generators) {
            for (b, mu) in spec.region.bounds.iter().zip(&out.bound_duals) {
                let slack = b.k0 - b.kp * out.electricity - b.kh * out.heat;
                assert!(slack >= -1e-6, "{} {}: slack {slack}", inst.label, spec.id);
                assert!(
                    *mu >= -1e-9 && (mu * slack).abs() <= 1e-6,
                    "{} {}: mu {mu} slack {slack}",
                    inst.label,
                    spec.id
                );
            }
        }
        for x in sol.electric_demands.iter().chain(&sol.heat_demands) {
            assert!(x.quantity >= -1e-6 && x.quantity <= x.max_quantity + 1e-6);
        }
    }
}

#[test]
fn stationarity_identities_hold_for_every_unit() {
    for inst in scenarios() {
        let sol = solve_ihpd(&inst).unwrap();
        for (spec, out) in inst.generators.iter().zip(&sol.generators) {
            let (p, h) = (out.electricity, out.heat);
            let kp: f64 = spec.region.bounds.iter().zip(&out.bound_duals).map(|(b, mu)| mu * b.kp).sum();
            let kh: f64 = spec.region.bounds.iter().zip(&out.bound_duals).map(|(b, mu)| mu * b.kh).sum();
            let ep = sol.lambda - marginal_p(&spec.cost, p, h) - kp;
            let eh = sol.gamma - marginal_h(&spec.cost, p, h) - kh;
            assert!(ep.abs() <= 1e-5 && eh.abs() <= 1e-5, "{} {}: {ep:e} {eh:e}", inst.label, spec.id);
        }
    }
}

#[test]
fn objective_and_settlement_welfare_identities() {
    for inst in scenarios() {
        let sol = solve_ihpd(&inst).unwrap();
        let value: f64 = sol.electric_demands.iter().chain(&sol.heat_demands).map(|x| x.bid * x.quantity).sum();
        let costs: f64 =
            inst.generators.iter().zip(&sol.generators).map(|(g, o)| cost(&g.cost, o.electricity, o.heat)).sum();
        let objective = value - costs;
        assert!((sol.objective_welfare - objective).abs() <= 1e-6 * objective.abs(), "{}", inst.label);

        let correction: f64 = inst
            .generators
            .iter()
            .zip(&sol.generators)
            .map(|(g, o)| {
                let (p, h) = (o.electricity, o.heat);
                cost(&g.cost, p, h) - p * marginal_p(&g.cost, p, h) - h * marginal_h(&g.cost, p, h)
            })
            .sum();
        let expected = objective + correction;
        assert!(
            (sol.settlement_welfare - expected).abs() <= 1e-6 * expected.abs(),
            "{}: {} vs {}",
            inst.label,
            sol.settlement_welfare,
            expected
        );
    }
}

#[test]
fn winter_is_dearer_and_richer_than_summer() {
    let s = solve_ihpd(&support::fixture("summer")).unwrap();
    let w = solve_ihpd(&support::fixture("winter")).unwrap();
    assert!(w.gamma > s.gamma);
    assert!(w.settlement_welfare > s.settlement_welfare);
}

#[test]
fn recovery_gaps_decompose_over_active_bounds() {
    for inst in scenarios() {
        let sol = solve_ihpd(&inst).unwrap();
        for g in &diagnose_recovery(&inst, &sol).generators {
            for v in [&g.electricity, &g.heat].into_iter().flatten() {
                assert!((v.gap - v.bound_term).abs() <= 1e-5, "{} {}: {v:?}", inst.label, g.id);
                assert_eq!(v.recovered, v.gap >= -1e-6);
            }
        }
    }
}

/// Welfare of the best point on a 200 x 200 grid over the two units' boxes, with
/// demand served greedily by bid.
fn grid_welfare(units: &[(f64, f64, f64, f64); 2], bids: &[(f64, f64); 2]) -> Option<f64> {
    let mut sorted = *bids;
    sorted.sort_by(|a, b| b.1.total_cmp(&a.1));
    let cap: f64 = bids.iter().map(|b| b.0).sum();
    let mut best: Option<f64> = None;
    let steps = 200;
    for i in 0..steps {
        let p1 = units[0].0 + (units[0].1 - units[0].0) * i as f64 / (steps - 1) as f64;
        for j in 0..steps {
            let p2 = units[1].0 + (units[1].1 - units[1].0) * j as f64 / (steps - 1) as f64;
            let total = p1 + p2;
            if total > cap {
                continue;
            }
            let mut left = total;
            let mut value = 0.0;
            for (q, b) in sorted {
                let take = left.min(q);
                value += take * b;
                left -= take;
            }
            let w = value - units[0].2 * p1 * p1 - units[0].3 * p1 - units[1].2 * p2 * p2 - units[1].3 * p2;
            best = Some(best.map_or(w, |b: f64| b.max(w)));
        }
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn two_unit_markets_match_grid_search(
        lo1 in 0.0..5.0f64, w1 in 2.0..20.0f64, a1 in 0.05..1.0f64, b1 in 1.0..15.0f64,
        lo2 in 0.0..5.0f64, w2 in 2.0..20.0f64, a2 in 0.05..1.0f64, b2 in 1.0..15.0f64,
        q1 in 5.0..20.0f64, bid1 in 20.0..60.0f64, q2 in 5.0..20.0f64, bid2 in 20.0..60.0f64,
    ) {
        let units = [(lo1, lo1 + w1, a1, b1), (lo2, lo2 + w2, a2, b2)];
        let bids = [(q1, bid1), (q2, bid2)];
        let inst = MarketInstance {
            label: "grid".into(),
            generators: vec![
                support::electric_box("g1", units[0].0, units[0].1, a1, b1),
                support::electric_box("g2", units[1].0, units[1].1, a2, b2),
            ],
            electric_demands: vec![DemandBid::electricity("d1", q1, bid1), DemandBid::electricity("d2", q2, bid2)],
            heat_demands: vec![],
        };
        let sol = solve_ihpd(&inst).unwrap();
        let oracle = grid_welfare(&units, &bids).unwrap();
        let rel = (sol.objective_welfare - oracle) / oracle.abs().max(1.0);
        prop_assert!(rel >= -1e-9, "solver {} below grid {}", sol.objective_welfare, oracle);
        prop_assert!(rel <= 5e-3, "solver {} grid {} rel {:e}", sol.objective_welfare, oracle, rel);
    }
}
