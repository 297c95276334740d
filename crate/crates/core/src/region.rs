//! Convex polygonal operating regions in the (electricity, heat) plane.
//!
//! A region is an intersection of half-spaces `kp * p + kh * h <= k0`. Regions can be
//! built from sampled operating points (convex hull) and expanded back into their
//! vertices, which is also how boundedness and emptiness are decided.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default containment tolerance, MWh scale.
pub const DEFAULT_TOL: f64 = 1e-6;

/// Tolerance used when testing a candidate vertex against the remaining bounds.
const VERTEX_FEASIBILITY_TOL: f64 = 1e-7;

/// Candidate vertices closer than this are merged.
const VERTEX_DEDUP_DIST: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegionError {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("region is unbounded")]
    Unbounded,
}

/// One linear bound `kp * p + kh * h <= k0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfSpace {
    pub kp: f64,
    pub kh: f64,
    pub k0: f64,
}

impl HalfSpace {
    pub fn new(kp: f64, kh: f64, k0: f64) -> Self {
        Self { kp, kh, k0 }
    }

    /// `kp * p + kh * h - k0`; nonpositive when the point satisfies the bound.
    pub fn excess(&self, p: f64, h: f64) -> f64 {
        self.kp * p + self.kh * h - self.k0
    }

    pub fn is_degenerate(&self) -> bool {
        self.kp == 0.0 && self.kh == 0.0
    }
}

/// Ordered list of bounds; the bound index `l` is the position in `bounds`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OperatingRegion {
    pub bounds: Vec<HalfSpace>,
}

impl OperatingRegion {
    pub fn new(bounds: Vec<HalfSpace>) -> Self {
        Self { bounds }
    }

    pub fn len(&self) -> usize {
        self.bounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bounds.is_empty()
    }

    pub fn contains(&self, p: f64, h: f64, tol: f64) -> bool {
        contains(self, p, h, tol)
    }
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Convex hull by monotone chain. Collinear points on edges are dropped.
/// Returns the hull vertices counterclockwise, starting at the lexicographically
/// smallest point.
fn convex_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let scale = pts.iter().fold(1.0_f64, |m, &(p, h)| m.max(p.abs()).max(h.abs()));
    let eps = 1e-12 * scale * scale;

    let mut lower: Vec<(f64, f64)> = Vec::new();
    for &pt in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], pt) <= eps {
            lower.pop();
        }
        lower.push(pt);
    }
    let mut upper: Vec<(f64, f64)> = Vec::new();
    for &pt in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], pt) <= eps {
            upper.pop();
        }
        upper.push(pt);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Scales a bound so the first nonzero of `(kp, kh)` has magnitude one.
fn normalize(kp: f64, kh: f64, k0: f64) -> HalfSpace {
    let norm = kp.hypot(kh);
    let kp = if kp.abs() <= 1e-12 * norm { 0.0 } else { kp };
    let kh = if kh.abs() <= 1e-12 * norm { 0.0 } else { kh };
    let s = if kp != 0.0 { kp.abs() } else { kh.abs() };
    HalfSpace::new(kp / s, kh / s, k0 / s)
}

/// Half-space representation of the convex hull of sampled operating points.
pub fn halfspaces_from_vertices(points: &[(f64, f64)]) -> Result<OperatingRegion, RegionError> {
    if points.iter().any(|(p, h)| !p.is_finite() || !h.is_finite()) {
        return Err(RegionError::DegenerateInput("non-finite point".into()));
    }
    let mut distinct = points.to_vec();
    distinct.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(RegionError::DegenerateInput(format!("need at least 3 distinct points, got {}", distinct.len())));
    }
    let hull = convex_hull(&distinct);
    if hull.len() < 3 {
        return Err(RegionError::DegenerateInput("points are collinear".into()));
    }
    let bounds = (0..hull.len())
        .map(|i| {
            let a = hull[i];
            let b = hull[(i + 1) % hull.len()];
            // Outward normal of a counterclockwise edge.
            let kp = b.1 - a.1;
            let kh = a.0 - b.0;
            normalize(kp, kh, kp * a.0 + kh * a.1)
        })
        .collect();
    Ok(OperatingRegion::new(bounds))
}

/// Feasible interval of `t` for constraints `a * t <= b`, with constraints where
/// `a == 0` checked for consistency. `None` means empty.
fn interval_1d(rows: impl Iterator<Item = (f64, f64)>) -> Option<(f64, f64)> {
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for (a, b) in rows {
        if a > 0.0 {
            hi = hi.min(b / a);
        } else if a < 0.0 {
            lo = lo.max(b / a);
        } else if b < -VERTEX_FEASIBILITY_TOL {
            return None;
        }
    }
    (lo <= hi + VERTEX_FEASIBILITY_TOL).then_some((lo, hi))
}

/// Vertices of the region, counterclockwise. An empty list means the region is empty.
pub fn enumerate_vertices(region: &OperatingRegion) -> Result<Vec<(f64, f64)>, RegionError> {
    let bounds: Vec<&HalfSpace> = region.bounds.iter().filter(|b| !b.is_degenerate()).collect();
    // Degenerate rows 0 <= k0 either hold everywhere or make the region empty.
    if region.bounds.iter().any(|b| b.is_degenerate() && b.k0 < -VERTEX_FEASIBILITY_TOL) {
        return Ok(Vec::new());
    }

    let mut candidates: Vec<(f64, f64)> = Vec::new();
    for i in 0..bounds.len() {
        for j in (i + 1)..bounds.len() {
            let (a, b) = (bounds[i], bounds[j]);
            let det = a.kp * b.kh - a.kh * b.kp;
            let scale = a.kp.hypot(a.kh) * b.kp.hypot(b.kh);
            if det.abs() <= 1e-12 * scale {
                continue;
            }
            let p = (a.k0 * b.kh - a.kh * b.k0) / det;
            let h = (a.kp * b.k0 - a.k0 * b.kp) / det;
            if bounds.iter().all(|c| c.excess(p, h) <= VERTEX_FEASIBILITY_TOL) {
                let dup = candidates.iter().any(|&(q, g)| (q - p).hypot(g - h) < VERTEX_DEDUP_DIST);
                if !dup {
                    candidates.push((p, h));
                }
            }
        }
    }

    if candidates.is_empty() {
        // No vertex: either empty, or all normals are parallel and the region
        // (if nonempty) contains a line.
        let Some(first) = bounds.first() else {
            return Err(RegionError::Unbounded);
        };
        let norm = first.kp.hypot(first.kh);
        let (ux, uy) = (first.kp / norm, first.kh / norm);
        let parallel = bounds.iter().all(|b| (b.kp * uy - b.kh * ux).abs() <= 1e-12 * b.kp.hypot(b.kh));
        if !parallel {
            return Ok(Vec::new());
        }
        // Project each bound onto the common normal direction.
        let feasible = interval_1d(bounds.iter().map(|b| (b.kp * ux + b.kh * uy, b.k0))).is_some();
        return if feasible { Err(RegionError::Unbounded) } else { Ok(Vec::new()) };
    }

    // Nonempty and pointed: bounded iff no direction d != 0 has K d <= 0 for all rows.
    // Extreme rays of that cone run along some bound's edge direction.
    for b in &bounds {
        let norm = b.kp.hypot(b.kh);
        for sign in [1.0, -1.0] {
            let d = (-sign * b.kh / norm, sign * b.kp / norm);
            let recedes = bounds.iter().all(|c| c.kp * d.0 + c.kh * d.1 <= 1e-12 * c.kp.hypot(c.kh));
            if recedes {
                return Err(RegionError::Unbounded);
            }
        }
    }

    let n = candidates.len() as f64;
    let cp = candidates.iter().map(|v| v.0).sum::<f64>() / n;
    let ch = candidates.iter().map(|v| v.1).sum::<f64>() / n;
    candidates.sort_by(|a, b| {
        let ta = (a.1 - ch).atan2(a.0 - cp);
        let tb = (b.1 - ch).atan2(b.0 - cp);
        ta.total_cmp(&tb)
    });
    Ok(candidates)
}

/// True iff every bound holds within `tol`.
pub fn contains(region: &OperatingRegion, p: f64, h: f64, tol: f64) -> bool {
    region.bounds.iter().all(|b| b.excess(p, h) <= tol)
}

/// Indices of the bounds that hold with equality within `tol`.
pub fn active_bounds(region: &OperatingRegion, p: f64, h: f64, tol: f64) -> Vec<usize> {
    region.bounds.iter().enumerate().filter(|(_, b)| b.excess(p, h).abs() <= tol).map(|(l, _)| l).collect()
}

/// Feasible range of a single coordinate for regions whose bounds only involve it.
pub(crate) fn coordinate_interval(
    region: &OperatingRegion,
    coefficient: impl Fn(&HalfSpace) -> f64,
) -> Option<(f64, f64)> {
    interval_1d(region.bounds.iter().map(|b| (coefficient(b), b.k0)))
}
