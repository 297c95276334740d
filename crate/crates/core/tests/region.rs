mod support;

use std::f64::consts::PI;

use ihpm_core::region::{contains, enumerate_vertices, halfspaces_from_vertices};
use ihpm_core::{HalfSpace, OperatingRegion};
use proptest::prelude::*;

fn assert_same_grid_verdicts(a: &OperatingRegion, b: &OperatingRegion, vertices: &[(f64, f64)]) {
    if let Some((p, h)) = support::grid_disagreement(a, b, vertices) {
        panic!("({p}, {h}): excess {} vs {}", support::max_excess(a, p, h), support::max_excess(b, p, h));
    }
}

fn is_normalized(b: &HalfSpace) -> bool {
    if b.kp != 0.0 {
        (b.kp.abs() - 1.0).abs() <= 1e-12
    } else {
        (b.kh.abs() - 1.0).abs() <= 1e-12
    }
}

/// Bounded region from tangent lines of a circle whose angles leave no gap of `PI` or more.
fn tangent_region(center: (f64, f64), radius: f64, mut angles: Vec<f64>) -> Option<OperatingRegion> {
    angles.sort_by(f64::total_cmp);
    let gaps = angles.windows(2).map(|w| w[1] - w[0]).chain([angles[0] + 2.0 * PI - angles[angles.len() - 1]]);
    if gaps.fold(0.0, f64::max) >= PI - 1e-3 {
        return None;
    }
    Some(OperatingRegion::new(
        angles
            .iter()
            .map(|t| {
                let (kp, kh) = (t.cos(), t.sin());
                HalfSpace::new(kp, kh, kp * center.0 + kh * center.1 + radius)
            })
            .collect(),
    ))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn hull_then_vertices_round_trips(points in prop::collection::vec((-50.0..150.0f64, -50.0..150.0f64), 3..20)) {
        let Ok(r) = halfspaces_from_vertices(&points) else {
            return Ok(());
        };
        for b in &r.bounds {
            prop_assert!(is_normalized(b), "{b:?}");
        }
        for &(p, h) in &points {
            prop_assert!(support::max_excess(&r, p, h) <= 1e-9);
        }
        let vertices = enumerate_vertices(&r).unwrap();
        prop_assert_eq!(vertices.len(), r.len());
        for &(p, h) in &vertices {
            prop_assert!(contains(&r, p, h, 1e-6));
            prop_assert!(points.iter().any(|&(q, g)| (q - p).hypot(g - h) < 1e-6), "vertex ({p}, {h}) is not an input point");
        }
        let again = halfspaces_from_vertices(&vertices).unwrap();
        assert_same_grid_verdicts(&r, &again, &vertices);
    }

    #[test]
    fn vertices_then_hull_round_trips(
        cp in -20.0..80.0f64, ch in -20.0..80.0f64, radius in 1.0..40.0f64,
        angles in prop::collection::vec(0.0..(2.0 * PI), 3..9),
    ) {
        let Some(r) = tangent_region((cp, ch), radius, angles) else {
            return Ok(());
        };
        let vertices = enumerate_vertices(&r).unwrap();
        prop_assert!(vertices.len() >= 3);
        for &(p, h) in &vertices {
            prop_assert!(contains(&r, p, h, 1e-6));
        }
        // Counterclockwise order: every consecutive turn is to the left.
        for i in 0..vertices.len() {
            let (a, b, c) = (vertices[i], vertices[(i + 1) % vertices.len()], vertices[(i + 2) % vertices.len()]);
            prop_assert!((b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0) > 0.0);
        }
        let rebuilt = halfspaces_from_vertices(&vertices).unwrap();
        assert_same_grid_verdicts(&r, &rebuilt, &vertices);
    }
}

#[test]
fn generator_two_vertices_from_table_bounds() {
    let inst = support::fixture("summer");
    let gen2 = &inst.generators[1];
    let vertices = enumerate_vertices(&gen2.region).unwrap();
    for want in [(35.0, 20.0), (105.0, 0.0)] {
        assert!(
            vertices.iter().any(|&(p, h)| (p - want.0).abs() <= 1e-6 && (h - want.1).abs() <= 1e-6),
            "{want:?} not in {vertices:?}"
        );
    }
    assert_same_grid_verdicts(&gen2.region, &halfspaces_from_vertices(&vertices).unwrap(), &vertices);
}

#[test]
fn reference_points_against_fixture_bounds() {
    let inst = support::fixture("summer");
    let (gen1, gen2) = (&inst.generators[0].region, &inst.generators[1].region);
    assert!(contains(gen2, 69.44, 0.0, 1e-6));
    assert!(!contains(gen1, 10000.0, 0.0, 1e-6));
    assert!(!contains(gen1, 40.27, 70.0, 0.0));
    assert!(contains(gen1, 40.27, 70.0, 0.25));
    assert_eq!(ihpm_core::region::active_bounds(gen2, 65.62, 33.92, 0.05), vec![1]);
}
