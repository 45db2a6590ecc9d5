//! Part geometry: outlines with holes, distance queries, meshing and offsets.

mod distance;
mod mesh;
mod offset;
mod point;
mod shapes;

pub use distance::{segment_closest, signed_distance, signed_distance_with_gradient};
pub use mesh::{mesh, BoundaryEdge, Mesh, MeshStats, PointLocator};
pub use offset::{offset_loops, ring_offset, RingSide};
pub use point::Point2;
pub use shapes::{build_domain, BoundaryRef, Primitive, ShapeSpec, ARC_CHORD};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("loop {0} has fewer than 3 vertices")]
    TooFewVertices(usize),
    #[error("loop {0} has coincident consecutive vertices at index {1}")]
    DuplicateVertex(usize, usize),
    #[error("loop {0} is self-intersecting")]
    SelfIntersecting(usize),
    #[error("hole {0} is not strictly inside the outer loop")]
    HoleOutside(usize),
    #[error("holes {0} and {1} overlap")]
    HolesOverlap(usize, usize),
    #[error("corner radius {radius} too large at vertex {vertex} (limit {limit})")]
    RadiusTooLarge { vertex: usize, radius: f64, limit: f64 },
    #[error("invalid primitive: {0}")]
    InvalidPrimitive(String),
    #[error("boundary tag {tag:?} refers to unknown side {side:?} on loop {loop_index}")]
    UnknownSide { tag: String, loop_index: usize, side: String },
    #[error("meshing failed: {0}")]
    Meshing(String),
    #[error("target edge length must be positive, got {0}")]
    BadTargetEdge(f64),
    #[error("ring index must be at least 1")]
    BadRingIndex,
    #[error("all offset loops collapsed")]
    AllCollapsed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopRole {
    Outer,
    Hole,
}

/// Closed polygon; the last vertex connects back to the first.
#[derive(Debug, Clone, PartialEq)]
pub struct Loop {
    pub vertices: Vec<Point2>,
    pub role: LoopRole,
}

impl Loop {
    pub fn new(vertices: Vec<Point2>, role: LoopRole) -> Self {
        Self { vertices, role }
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Segment `i` runs from vertex `i` to vertex `i + 1` (wrapping).
    pub fn segment(&self, i: usize) -> (Point2, Point2) {
        let n = self.vertices.len();
        (self.vertices[i], self.vertices[(i + 1) % n])
    }

    pub fn segments(&self) -> impl Iterator<Item = (Point2, Point2)> + '_ {
        (0..self.vertices.len()).map(move |i| self.segment(i))
    }

    /// Shoelace area, positive for counter-clockwise loops.
    pub fn signed_area(&self) -> f64 {
        self.segments().map(|(a, b)| a.cross(b)).sum::<f64>() * 0.5
    }

    pub fn perimeter(&self) -> f64 {
        self.segments().map(|(a, b)| (b - a).norm()).sum()
    }

    /// Even-odd containment test (points on the boundary are unspecified).
    pub fn contains(&self, p: Point2) -> bool {
        let mut inside = false;
        for (a, b) in self.segments() {
            if (a.y > p.y) != (b.y > p.y) {
                let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
                if p.x < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    pub fn bounding_box(&self) -> (Point2, Point2) {
        bbox(self.vertices.iter().copied())
    }

    pub(crate) fn validate(&self, index: usize) -> Result<(), GeometryError> {
        let n = self.vertices.len();
        if n < 3 {
            return Err(GeometryError::TooFewVertices(index));
        }
        for i in 0..n {
            if !self.vertices[i].is_finite() {
                return Err(GeometryError::InvalidPrimitive(format!("non-finite vertex {i} on loop {index}")));
            }
            let (a, b) = self.segment(i);
            if (b - a).norm() <= 1e-12 {
                return Err(GeometryError::DuplicateVertex(index, i));
            }
        }
        if self.self_intersects() {
            return Err(GeometryError::SelfIntersecting(index));
        }
        Ok(())
    }

    fn self_intersects(&self) -> bool {
        let n = self.vertices.len();
        for i in 0..n {
            let (a, b) = self.segment(i);
            for j in (i + 1)..n {
                // adjacent segments share an endpoint
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                let (c, d) = self.segment(j);
                if segments_intersect(a, b, c, d) {
                    return true;
                }
            }
        }
        false
    }

    pub(crate) fn intersects(&self, other: &Loop) -> bool {
        self.segments().any(|(a, b)| other.segments().any(|(c, d)| segments_intersect(a, b, c, d)))
    }
}

/// Vertex-index range `[start, end]` on one loop of a domain, covering segments `start..end`.
///
/// `end` may equal the loop length, standing for vertex 0 after wrap-around.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagRange {
    pub loop_index: usize,
    pub start: usize,
    pub end: usize,
}

impl TagRange {
    pub fn contains_segment(&self, loop_index: usize, segment: usize) -> bool {
        self.loop_index == loop_index && self.start <= segment && segment < self.end
    }
}

/// Polygon-with-holes part outline. Loop index 0 is the outer loop, hole `k` is loop `k + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    pub outer: Loop,
    pub holes: Vec<Loop>,
    pub boundary_tags: BTreeMap<String, Vec<TagRange>>,
}

impl Domain {
    /// Validates the invariants and normalizes orientation (outer CCW, holes CW).
    pub fn new(
        mut outer: Loop,
        mut holes: Vec<Loop>,
        boundary_tags: BTreeMap<String, Vec<TagRange>>,
    ) -> Result<Self, GeometryError> {
        let mut boundary_tags = boundary_tags;
        outer.role = LoopRole::Outer;
        outer.validate(0)?;
        if outer.signed_area() < 0.0 {
            reverse_keep_first(&mut outer, 0, &mut boundary_tags);
        }
        for (k, h) in holes.iter_mut().enumerate() {
            h.role = LoopRole::Hole;
            h.validate(k + 1)?;
            if h.signed_area() > 0.0 {
                reverse_keep_first(h, k + 1, &mut boundary_tags);
            }
            if h.intersects(&outer) || !h.vertices.iter().all(|&p| outer.contains(p)) {
                return Err(GeometryError::HoleOutside(k));
            }
        }
        for i in 0..holes.len() {
            for j in (i + 1)..holes.len() {
                let (a, b) = (&holes[i], &holes[j]);
                if a.intersects(b) || a.contains(b.vertices[0]) || b.contains(a.vertices[0]) {
                    return Err(GeometryError::HolesOverlap(i, j));
                }
            }
        }
        let domain = Self { outer, holes, boundary_tags };
        for (name, ranges) in &domain.boundary_tags {
            for r in ranges {
                let ok = domain.loop_at(r.loop_index).map(|l| r.start < r.end && r.end <= l.len()).unwrap_or(false);
                if !ok {
                    return Err(GeometryError::UnknownSide {
                        tag: name.clone(),
                        loop_index: r.loop_index,
                        side: format!("{}..={}", r.start, r.end),
                    });
                }
            }
        }
        Ok(domain)
    }

    pub fn loops(&self) -> impl Iterator<Item = &Loop> {
        std::iter::once(&self.outer).chain(self.holes.iter())
    }

    pub fn loop_at(&self, index: usize) -> Option<&Loop> {
        if index == 0 {
            Some(&self.outer)
        } else {
            self.holes.get(index - 1)
        }
    }

    pub fn loop_count(&self) -> usize {
        1 + self.holes.len()
    }

    /// Material area: outer area minus hole areas.
    pub fn area(&self) -> f64 {
        self.outer.signed_area() + self.holes.iter().map(Loop::signed_area).sum::<f64>()
    }

    pub fn contains(&self, p: Point2) -> bool {
        self.outer.contains(p) && !self.holes.iter().any(|h| h.contains(p))
    }

    pub fn bounding_box(&self) -> (Point2, Point2) {
        self.outer.bounding_box()
    }

    pub fn tag_ranges(&self, tag: &str) -> Option<&[TagRange]> {
        self.boundary_tags.get(tag).map(Vec::as_slice)
    }
}

/// Reverses a loop while keeping vertex 0 in place, remapping tag ranges on it.
fn reverse_keep_first(l: &mut Loop, index: usize, tags: &mut BTreeMap<String, Vec<TagRange>>) {
    let n = l.vertices.len();
    l.vertices = (0..n).map(|j| l.vertices[(n - j) % n]).collect();
    for r in tags.values_mut().flatten() {
        if r.loop_index == index && r.end <= n {
            *r = TagRange { loop_index: index, start: n - r.end, end: n - r.start };
        }
    }
}

pub(crate) fn bbox(points: impl Iterator<Item = Point2>) -> (Point2, Point2) {
    let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    (lo, hi)
}

fn orient(a: Point2, b: Point2, c: Point2) -> f64 {
    (b - a).cross(c - a)
}

pub(crate) fn segments_intersect(a: Point2, b: Point2, c: Point2, d: Point2) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    let on = |p: Point2, q: Point2, r: Point2, o: f64| {
        o == 0.0 && r.x >= p.x.min(q.x) && r.x <= p.x.max(q.x) && r.y >= p.y.min(q.y) && r.y <= p.y.max(q.y)
    };
    on(c, d, a, d1) || on(c, d, b, d2) || on(a, b, c, d3) || on(a, b, d, d4)
}
