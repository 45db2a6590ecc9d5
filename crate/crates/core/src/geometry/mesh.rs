//! Conforming triangulation of a domain via constrained Delaunay refinement.

use std::collections::{BTreeMap, HashSet};

use spade::{AngleLimit, ConstrainedDelaunayTriangulation, RefinementParameters, Triangulation};

use super::{bbox, segment_closest, Domain, GeometryError, Point2};

/// Minimum interior angle requested from the refiner, in degrees.
const REFINE_ANGLE_DEG: f64 = 25.0;
/// Target triangle area relative to an equilateral triangle with edge `target_edge`.
const AREA_FACTOR: f64 = 1.1;

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    pub loop_index: usize,
    /// Segment of the source loop this edge lies on.
    pub segment: usize,
    pub tag: Option<String>,
}

/// Linear triangle mesh. Triangles are counter-clockwise.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub nodes: Vec<Point2>,
    pub triangles: Vec<[usize; 3]>,
    pub boundary_edges: Vec<BoundaryEdge>,
    pub target_edge: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct MeshStats {
    pub max_edge: f64,
    pub min_angle_deg: f64,
    pub min_area: f64,
    pub total_area: f64,
}

impl Mesh {
    pub fn corners(&self, t: usize) -> [Point2; 3] {
        let [a, b, c] = self.triangles[t];
        [self.nodes[a], self.nodes[b], self.nodes[c]]
    }

    pub fn area(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        0.5 * (b - a).cross(c - a)
    }

    pub fn centroid(&self, t: usize) -> Point2 {
        let [a, b, c] = self.corners(t);
        Point2::new((a.x + b.x + c.x) / 3.0, (a.y + b.y + c.y) / 3.0)
    }

    pub fn centroids(&self) -> Vec<Point2> {
        (0..self.triangles.len()).map(|t| self.centroid(t)).collect()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.area(t)).sum()
    }

    pub fn stats(&self) -> MeshStats {
        let mut max_edge = 0.0f64;
        let mut min_angle = f64::INFINITY;
        let mut min_area = f64::INFINITY;
        for t in 0..self.triangles.len() {
            let p = self.corners(t);
            for i in 0..3 {
                let (a, b, c) = (p[i], p[(i + 1) % 3], p[(i + 2) % 3]);
                max_edge = max_edge.max((b - a).norm());
                let (u, v) = ((b - a).normalized(), (c - a).normalized());
                min_angle = min_angle.min(u.dot(v).clamp(-1.0, 1.0).acos().to_degrees());
            }
            min_area = min_area.min(self.area(t));
        }
        MeshStats { max_edge, min_angle_deg: min_angle, min_area, total_area: self.total_area() }
    }

    /// Sorted, deduplicated nodes lying on boundary edges carrying any of the domain ranges of `tag`.
    pub fn tagged_nodes(&self, domain: &Domain, tag: &str) -> Option<Vec<usize>> {
        let ranges = domain.tag_ranges(tag)?;
        let mut nodes: Vec<usize> = self
            .boundary_edges
            .iter()
            .filter(|e| ranges.iter().any(|r| r.contains_segment(e.loop_index, e.segment)))
            .flat_map(|e| e.nodes)
            .collect();
        nodes.sort_unstable();
        nodes.dedup();
        Some(nodes)
    }

    /// Node adjacency (each list sorted), used for fill-reducing orderings.
    pub fn node_adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for t in &self.triangles {
            for i in 0..3 {
                for j in 0..3 {
                    if i != j {
                        adj[t[i]].push(t[j]);
                    }
                }
            }
        }
        for a in &mut adj {
            a.sort_unstable();
            a.dedup();
        }
        adj
    }
}

/// Splits every loop segment into pieces no longer than `target`, remembering the source segment.
fn boundary_points(domain: &Domain, target: f64) -> Vec<Vec<Point2>> {
    domain
        .loops()
        .map(|l| {
            let mut pts = Vec::new();
            for (a, b) in l.segments() {
                let k = ((b - a).norm() / target).ceil().max(1.0) as usize;
                for i in 0..k {
                    pts.push(a.lerp(b, i as f64 / k as f64));
                }
            }
            pts
        })
        .collect()
}

/// Triangulates the domain with edges close to `target_edge`.
pub fn mesh(domain: &Domain, target_edge: f64) -> Result<Mesh, GeometryError> {
    if !(target_edge > 0.0 && target_edge.is_finite()) {
        return Err(GeometryError::BadTargetEdge(target_edge));
    }
    let loops = boundary_points(domain, target_edge);
    let mut vertices = Vec::new();
    let mut edges = Vec::new();
    for pts in &loops {
        let base = vertices.len();
        let n = pts.len();
        for (i, p) in pts.iter().enumerate() {
            vertices.push(spade::Point2::new(p.x, p.y));
            edges.push([base + i, base + (i + 1) % n]);
        }
    }
    let mut cdt = ConstrainedDelaunayTriangulation::<spade::Point2<f64>>::bulk_load_cdt(vertices, edges)
        .map_err(|e| GeometryError::Meshing(format!("{e:?}")))?;
    let max_area = AREA_FACTOR * 3f64.sqrt() / 4.0 * target_edge * target_edge;
    let expected = (domain.area() / max_area * 4.0) as usize + 10_000;
    let result = cdt.refine(
        RefinementParameters::<f64>::new()
            .exclude_outer_faces(true)
            .with_angle_limit(AngleLimit::from_deg(REFINE_ANGLE_DEG))
            .with_max_allowed_area(max_area)
            .with_max_additional_vertices(expected),
    );
    if !result.refinement_complete {
        return Err(GeometryError::Meshing("refinement did not complete".into()));
    }
    let excluded: HashSet<_> = result.excluded_faces.iter().copied().collect();

    let mut remap = vec![usize::MAX; cdt.num_vertices()];
    let mut nodes = Vec::new();
    let mut triangles = Vec::new();
    for face in cdt.inner_faces() {
        if excluded.contains(&face.fix()) {
            continue;
        }
        let vs = face.vertices();
        let mut tri = [0usize; 3];
        for (k, v) in vs.iter().enumerate() {
            let i = v.fix().index();
            if remap[i] == usize::MAX {
                remap[i] = nodes.len();
                let p = v.position();
                nodes.push(Point2::new(p.x, p.y));
            }
            tri[k] = remap[i];
        }
        let [a, b, c] = tri.map(|i| nodes[i]);
        if (b - a).cross(c - a) < 0.0 {
            tri.swap(1, 2);
        }
        triangles.push(tri);
    }

    let boundary_edges = find_boundary_edges(domain, &nodes, &triangles)?;
    let m = Mesh { nodes, triangles, boundary_edges, target_edge };
    let stats = m.stats();
    let area = domain.area();
    if (stats.total_area - area).abs() > 1e-6 * area {
        return Err(GeometryError::Meshing(format!("mesh area {} differs from domain area {area}", stats.total_area)));
    }
    if stats.min_area < 1e-12 {
        return Err(GeometryError::Meshing("degenerate triangle".into()));
    }
    Ok(m)
}

fn find_boundary_edges(
    domain: &Domain,
    nodes: &[Point2],
    triangles: &[[usize; 3]],
) -> Result<Vec<BoundaryEdge>, GeometryError> {
    let mut count: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for t in triangles {
        for i in 0..3 {
            let (a, b) = (t[i], t[(i + 1) % 3]);
            *count.entry((a.min(b), a.max(b))).or_default() += 1;
        }
    }
    let (lo, hi) = domain.bounding_box();
    let tol = 1e-9 * (hi - lo).norm().max(1.0);
    let mut out = Vec::new();
    // keep the traversal direction of the owning triangle so edges follow the loop orientation
    for t in triangles {
        for i in 0..3 {
            let (a, b) = (t[i], t[(i + 1) % 3]);
            if count[&(a.min(b), a.max(b))] != 1 {
                continue;
            }
            let (pa, pb) = (nodes[a], nodes[b]);
            let mid = pa.lerp(pb, 0.5);
            let mut found = None;
            'search: for (li, l) in domain.loops().enumerate() {
                for s in 0..l.len() {
                    let (sa, sb) = l.segment(s);
                    if segment_closest(sa, sb, pa).2.sqrt() <= tol
                        && segment_closest(sa, sb, pb).2.sqrt() <= tol
                        && segment_closest(sa, sb, mid).2.sqrt() <= tol
                    {
                        found = Some((li, s));
                        break 'search;
                    }
                }
            }
            let (loop_index, segment) = found
                .ok_or_else(|| GeometryError::Meshing(format!("boundary edge {pa:?}-{pb:?} is not on the outline")))?;
            let tag = domain
                .boundary_tags
                .iter()
                .find(|(_, rs)| rs.iter().any(|r| r.contains_segment(loop_index, segment)))
                .map(|(name, _)| name.clone());
            out.push(BoundaryEdge { nodes: [a, b], loop_index, segment, tag });
        }
    }
    Ok(out)
}

/// Uniform-grid bucket index for locating the triangle containing a point.
#[derive(Debug, Clone)]
pub struct PointLocator {
    origin: Point2,
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<u32>>,
}

impl PointLocator {
    pub fn new(mesh: &Mesh) -> Self {
        let (lo, hi) = bbox(mesh.nodes.iter().copied());
        let cell = (2.0 * mesh.target_edge).max(1e-6);
        let nx = (((hi.x - lo.x) / cell).ceil() as usize).max(1);
        let ny = (((hi.y - lo.y) / cell).ceil() as usize).max(1);
        let mut buckets = vec![Vec::new(); nx * ny];
        for t in 0..mesh.triangles.len() {
            let (a, b) = bbox(mesh.corners(t).into_iter());
            let (i0, j0) = Self::index(lo, cell, nx, ny, a);
            let (i1, j1) = Self::index(lo, cell, nx, ny, b);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    buckets[j * nx + i].push(t as u32);
                }
            }
        }
        Self { origin: lo, cell, nx, ny, buckets }
    }

    fn index(lo: Point2, cell: f64, nx: usize, ny: usize, p: Point2) -> (usize, usize) {
        let i = ((p.x - lo.x) / cell).floor().clamp(0.0, (nx - 1) as f64) as usize;
        let j = ((p.y - lo.y) / cell).floor().clamp(0.0, (ny - 1) as f64) as usize;
        (i, j)
    }

    /// Index of a triangle containing `p`, if any. Ties on shared edges go to the lowest index.
    pub fn locate(&self, mesh: &Mesh, p: Point2) -> Option<usize> {
        let (i, j) = Self::index(self.origin, self.cell, self.nx, self.ny, p);
        let mut best: Option<usize> = None;
        for &t in &self.buckets[j * self.nx + i] {
            let t = t as usize;
            let [a, b, c] = mesh.corners(t);
            let eps = -1e-12 * mesh.target_edge * mesh.target_edge;
            if (b - a).cross(p - a) >= eps && (c - b).cross(p - b) >= eps && (a - c).cross(p - c) >= eps {
                best = Some(best.map_or(t, |bt| bt.min(t)));
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_domain, signed_distance, Primitive, ShapeSpec};

    fn square(s: f64) -> Domain {
        build_domain(&ShapeSpec {
            outer: Primitive::Rect { origin: [0.0, 0.0], width: s, height: s, corner_radius: 0.0 },
            holes: vec![],
            tags: BTreeMap::new(),
        })
        .unwrap()
    }

    #[test]
    fn square_area_conserved() {
        let m = mesh(&square(10.0), 5.0).unwrap();
        assert!((m.total_area() - 100.0).abs() <= 1e-6 * 100.0);
        let s = m.stats();
        assert!(s.max_edge <= 7.5, "{s:?}");
        assert!(s.min_angle_deg >= 15.0, "{s:?}");
    }

    #[test]
    fn triangles_positive_and_nodes_used() {
        let m = mesh(&square(10.0), 1.0).unwrap();
        let mut used = vec![false; m.nodes.len()];
        for (t, tri) in m.triangles.iter().enumerate() {
            assert!(m.area(t) > 0.0);
            for &v in tri {
                used[v] = true;
            }
        }
        assert!(used.iter().all(|&u| u));
    }

    #[test]
    fn rejects_nonpositive_target() {
        assert_eq!(mesh(&square(1.0), 0.0).unwrap_err(), GeometryError::BadTargetEdge(0.0));
    }

    #[test]
    fn boundary_nodes_on_outline() {
        let d = build_domain(&ShapeSpec {
            outer: Primitive::Rect { origin: [0.0, 0.0], width: 20.0, height: 12.0, corner_radius: 0.0 },
            holes: vec![Primitive::Circle { center: [10.0, 6.0], radius: 3.0 }],
            tags: BTreeMap::new(),
        })
        .unwrap();
        let m = mesh(&d, 0.5).unwrap();
        for e in &m.boundary_edges {
            for &n in &e.nodes {
                assert!(signed_distance(&d, m.nodes[n]).abs() < 1e-9);
            }
        }
        let loc = PointLocator::new(&m);
        assert!(loc.locate(&m, Point2::new(10.0, 6.0)).is_none());
        let t = loc.locate(&m, Point2::new(1.0, 1.0)).unwrap();
        let [a, b, c] = m.corners(t);
        let p = Point2::new(1.0, 1.0);
        assert!((b - a).cross(p - a) >= -1e-12 && (c - b).cross(p - b) >= -1e-12 && (a - c).cross(p - c) >= -1e-12);
    }
}
