//! Fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use ihpm_core::cli;
use ihpm_core::region::contains;
use ihpm_core::{
    CostCoefficients, DemandBid, DispatchSolution, GeneratorSpec, HalfSpace, MarketInstance, OperatingRegion,
};
use rand::Rng;

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(format!("{name}.json"))
}

pub fn fixture(name: &str) -> MarketInstance {
    cli::load_instance(&fixture_path(name)).expect("fixture parses")
}

/// Cost polynomial written out by hand.
pub fn cost(c: &CostCoefficients, p: f64, h: f64) -> f64 {
    c.c2p * p * p + c.c1p * p + c.c2h * h * h + c.c1h * h + c.chp * h * p + c.c0
}

pub fn marginal_p(c: &CostCoefficients, p: f64, h: f64) -> f64 {
    2.0 * c.c2p * p + c.c1p + c.chp * h
}

pub fn marginal_h(c: &CostCoefficients, p: f64, h: f64) -> f64 {
    2.0 * c.c2h * h + c.c1h + c.chp * p
}

pub fn electric_box(id: &str, lo: f64, hi: f64, c2p: f64, c1p: f64) -> GeneratorSpec {
    GeneratorSpec::new(
        id,
        CostCoefficients { c2p, c1p, ..Default::default() },
        OperatingRegion::new(vec![HalfSpace::new(1.0, 0.0, hi), HalfSpace::new(-1.0, 0.0, -lo)]),
    )
}

/// Two or three electric-only box units, some with minimum output, and two or three bids.
pub fn random_electric_market(rng: &mut impl Rng) -> MarketInstance {
    let n_gen = rng.random_range(2..=3);
    let n_dem = rng.random_range(2..=3);
    let mut generators = Vec::new();
    let mut min_total = 0.0;
    for g in 0..n_gen {
        let lo = if rng.random_bool(0.6) { rng.random_range(1.0..8.0) } else { 0.0 };
        let hi = lo + rng.random_range(2.0..15.0);
        min_total += lo;
        generators.push(electric_box(
            &format!("g{g}"),
            lo,
            hi,
            rng.random_range(0.05..1.0),
            rng.random_range(1.0..20.0),
        ));
    }
    let mut electric_demands = Vec::new();
    for d in 0..n_dem {
        let q = rng.random_range(2.0..12.0) + min_total / n_dem as f64;
        electric_demands.push(DemandBid::electricity(format!("d{d}"), q, rng.random_range(15.0..60.0)));
    }
    MarketInstance { label: "random".into(), generators, electric_demands, heat_demands: vec![] }
}

/// Minimum total uplift payment for an electric-only dispatch.
///
/// For a fixed price the cheapest uplift pays each agent exactly its shortfall, so the
/// payment total is `P(l) = sum d (l - b)+ + sum p (m - l)+`, and neutrality is feasible iff
/// the chargeable surplus `C(l) = sum d (b - l)+ + sum p (l - m)+` covers it. Both are
/// piecewise linear in the price, so the optimum sits at a breakpoint or at a root of
/// `C - P` on one of the linear pieces; this enumerates all of them.
pub fn min_uplift_oracle(users: &[(f64, f64)], units: &[(f64, f64)]) -> Option<f64> {
    let pay = |l: f64| {
        users.iter().map(|&(d, b)| d * (l - b).max(0.0)).sum::<f64>()
            + units.iter().map(|&(p, m)| p * (m - l).max(0.0)).sum::<f64>()
    };
    let cap = |l: f64| {
        users.iter().map(|&(d, b)| d * (b - l).max(0.0)).sum::<f64>()
            + units.iter().map(|&(p, m)| p * (l - m).max(0.0)).sum::<f64>()
    };
    let slack = |l: f64| cap(l) - pay(l);

    let mut breaks: Vec<f64> = vec![0.0];
    breaks.extend(users.iter().map(|u| u.1).filter(|&b| b > 0.0));
    breaks.extend(units.iter().map(|u| u.1).filter(|&m| m > 0.0));
    breaks.sort_by(f64::total_cmp);
    let far = breaks.last().copied().unwrap_or(0.0) + 1e4;
    breaks.push(far);

    let mut candidates = breaks.clone();
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (sa, sb) = (slack(a), slack(b));
        if sa != sb && sa * sb <= 0.0 {
            candidates.push(a + (b - a) * sa / (sa - sb));
        }
    }
    candidates.into_iter().filter(|&l| slack(l) >= -1e-9 * (1.0 + pay(l))).map(pay).min_by(f64::total_cmp)
}

pub type Pairs = Vec<(f64, f64)>;

/// Oracle inputs from a dispatch: (quantity, bid) for dispatched users and
/// (output, marginal cost) for dispatched units, marginals recomputed by hand.
pub fn oracle_inputs(inst: &MarketInstance, sol: &DispatchSolution) -> (Pairs, Pairs) {
    let users = sol.electric_demands.iter().filter(|d| d.dispatched).map(|d| (d.quantity, d.bid)).collect();
    let units = inst
        .generators
        .iter()
        .zip(&sol.generators)
        .filter(|(_, o)| o.dispatched_electricity)
        .map(|(g, o)| (o.electricity, marginal_p(&g.cost, o.electricity, o.heat)))
        .collect();
    (users, units)
}

/// Minimum of `1/2 x'Qx + c'x` over the box `[lo, hi]`: best point of a coarse grid,
/// polished by projected gradient descent.
pub fn box_qp_oracle(q: &[Vec<f64>], c: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    let n = c.len();
    let f = |x: &[f64]| {
        let mut v = 0.0;
        for i in 0..n {
            v += c[i] * x[i];
            for j in 0..n {
                v += 0.5 * x[i] * q[i][j] * x[j];
            }
        }
        v
    };
    let per_dim: usize = match n {
        0..=2 => 41,
        3 => 21,
        4 => 11,
        _ => 6,
    };
    let mut best = vec![0.0; n];
    let mut best_val = f64::INFINITY;
    let mut idx = vec![0usize; n];
    let mut x = vec![0.0; n];
    loop {
        for i in 0..n {
            x[i] = lo[i] + (hi[i] - lo[i]) * idx[i] as f64 / (per_dim - 1) as f64;
        }
        let v = f(&x);
        if v < best_val {
            best_val = v;
            best.clone_from(&x);
        }
        let mut k = 0;
        while k < n {
            idx[k] += 1;
            if idx[k] < per_dim {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == n {
            break;
        }
    }

    let lipschitz = q.iter().flatten().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    let step = 1.0 / lipschitz;
    let mut x = best;
    for _ in 0..200_000 {
        let mut moved = 0.0_f64;
        let grad: Vec<f64> = (0..n).map(|i| c[i] + (0..n).map(|j| q[i][j] * x[j]).sum::<f64>()).collect();
        for i in 0..n {
            let next = (x[i] - step * grad[i]).clamp(lo[i], hi[i]);
            moved = moved.max((next - x[i]).abs());
            x[i] = next;
        }
        if moved < 1e-13 {
            break;
        }
    }
    f(&x).min(best_val)
}

pub fn max_excess(r: &OperatingRegion, p: f64, h: f64) -> f64 {
    r.bounds.iter().map(|b| b.kp * p + b.kh * h - b.k0).fold(f64::NEG_INFINITY, f64::max)
}

/// First point of a 100 x 100 grid, spanning the vertices plus a margin, that the two
/// regions classify differently at tolerance 1e-6.
pub fn grid_disagreement(a: &OperatingRegion, b: &OperatingRegion, vertices: &[(f64, f64)]) -> Option<(f64, f64)> {
    let (mut p0, mut p1, mut h0, mut h1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(p, h) in vertices {
        p0 = p0.min(p);
        p1 = p1.max(p);
        h0 = h0.min(h);
        h1 = h1.max(h);
    }
    let (mp, mh) = (0.1 * (p1 - p0) + 1.0, 0.1 * (h1 - h0) + 1.0);
    for i in 0..100 {
        let p = p0 - mp + (p1 - p0 + 2.0 * mp) * i as f64 / 99.0;
        for j in 0..100 {
            let h = h0 - mh + (h1 - h0 + 2.0 * mh) * j as f64 / 99.0;
            if contains(a, p, h, 1e-6) != contains(b, p, h, 1e-6) {
                return Some((p, h));
            }
        }
    }
    None
}
