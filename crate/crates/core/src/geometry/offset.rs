//! Wall-parallel rings used by the concentric baseline.

use cavalier_contours::polyline::{PlineSource, PlineSourceMut, PlineVertex, Polyline};
use serde::{Deserialize, Serialize};

use super::{signed_distance, Domain, GeometryError, Loop, Point2, ARC_CHORD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RingSide {
    /// Rings around the holes.
    Inner,
    /// Rings inside the outer wall.
    Outer,
    AllWalls,
}

fn to_polyline(l: &Loop) -> Polyline<f64> {
    let mut p = Polyline::new_closed();
    for v in &l.vertices {
        p.add(v.x, v.y, 0.0);
    }
    p
}

fn arc_points(v0: PlineVertex<f64>, v1: PlineVertex<f64>, out: &mut Vec<Point2>) {
    let p0 = Point2::new(v0.x, v0.y);
    let p1 = Point2::new(v1.x, v1.y);
    out.push(p0);
    if v0.bulge.abs() < 1e-12 {
        return;
    }
    let d = p1 - p0;
    let c = d.norm();
    let sweep = 4.0 * v0.bulge.atan();
    let n = d.perp() * (1.0 / c);
    let center = p0.lerp(p1, 0.5) + n * ((c / 2.0) / (sweep / 2.0).tan());
    let r = (p0 - center).norm();
    let a0 = (p0 - center).y.atan2((p0 - center).x);
    let m = ((sweep.abs() * r) / ARC_CHORD).ceil().max(1.0) as usize;
    for k in 1..m {
        let a = a0 + sweep * k as f64 / m as f64;
        out.push(center + Point2::new(r * a.cos(), r * a.sin()));
    }
}

fn from_polyline(p: &Polyline<f64>, role: super::LoopRole) -> Loop {
    let n = p.vertex_count();
    let mut pts = Vec::new();
    for i in 0..n {
        arc_points(p.at(i), p.at((i + 1) % n), &mut pts);
    }
    pts.dedup_by(|a, b| (*a - *b).norm() < 1e-9);
    while pts.len() > 1 && (pts[0] - *pts.last().unwrap()).norm() < 1e-9 {
        pts.pop();
    }
    Loop::new(pts, role)
}

/// Offset distance of ring `ring_index` (1-based) from its source wall.
pub fn ring_offset(ring_index: usize, d_min: f64, w_fiber: f64) -> f64 {
    d_min + (ring_index as f64 - 0.5) * w_fiber
}

/// Offsets the selected walls into the material by `d_min + (ring_index - 0.5) * w_fiber`.
///
/// Loops that collapse, or that come closer than `d_min` to another wall, are dropped. The
/// result keeps the orientation of the source loops.
pub fn offset_loops(
    domain: &Domain,
    side: RingSide,
    ring_index: usize,
    d_min: f64,
    w_fiber: f64,
) -> Result<Vec<Loop>, GeometryError> {
    if ring_index == 0 {
        return Err(GeometryError::BadRingIndex);
    }
    let dist = ring_offset(ring_index, d_min, w_fiber);
    let sources: Vec<&Loop> = match side {
        RingSide::Inner => domain.holes.iter().collect(),
        RingSide::Outer => vec![&domain.outer],
        RingSide::AllWalls => domain.holes.iter().chain(std::iter::once(&domain.outer)).collect(),
    };
    let mut out = Vec::new();
    for src in sources {
        // material lies to the left of every loop, which is the positive offset side
        for pl in to_polyline(src).parallel_offset(dist) {
            let l = from_polyline(&pl, src.role);
            if l.len() < 3 || l.signed_area().abs() < 1e-9 {
                continue;
            }
            if l.vertices.iter().all(|&p| signed_distance(domain, p) >= d_min - 1e-9) {
                out.push(l);
            }
        }
    }
    if out.is_empty() {
        return Err(GeometryError::AllCollapsed);
    }
    Ok(out)
}
