//! Shape primitives and their conversion into a validated [`Domain`].

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{Domain, GeometryError, Loop, LoopRole, Point2, TagRange};

/// Maximum chord length used when discretizing arcs, in mm.
pub const ARC_CHORD: f64 = 0.2;

/// A closed outline primitive. Corners are filleted with `corner_radius` (0 keeps them sharp).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Primitive {
    /// Axis-aligned rectangle with lower-left corner `origin`. Sides: bottom, right, top, left.
    Rect {
        origin: [f64; 2],
        width: f64,
        height: f64,
        #[serde(default)]
        corner_radius: f64,
    },
    /// Arbitrary simple polygon. Side `e{i}` runs from vertex `i` to vertex `i + 1`.
    Polygon {
        vertices: Vec<[f64; 2]>,
        #[serde(default)]
        corner_radius: f64,
    },
    /// Isosceles trapezoid centred at `center`; the short parallel side faces direction
    /// `facing_deg`. Sides: leg_a, short, leg_b, long.
    Trapezoid {
        center: [f64; 2],
        short_side: f64,
        long_side: f64,
        height: f64,
        facing_deg: f64,
        #[serde(default)]
        corner_radius: f64,
    },
    /// Circle, discretized into chords of at most [`ARC_CHORD`]. Single side: all.
    Circle { center: [f64; 2], radius: f64 },
}

/// Named reference to one side of one loop (0 = outer, `k + 1` = hole `k`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryRef {
    #[serde(rename = "loop")]
    pub loop_index: usize,
    pub side: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeSpec {
    pub outer: Primitive,
    #[serde(default)]
    pub holes: Vec<Primitive>,
    #[serde(default)]
    pub tags: BTreeMap<String, Vec<BoundaryRef>>,
}

struct Outline {
    vertices: Vec<Point2>,
    /// `(name, segment start, segment end)`, counter-clockwise order.
    sides: Vec<(String, usize, usize)>,
}

impl Primitive {
    fn corners_and_names(&self) -> Result<(Vec<Point2>, Vec<String>, f64), GeometryError> {
        let positive = |v: f64, what: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(GeometryError::InvalidPrimitive(format!("{what} must be positive, got {v}")))
            }
        };
        match self {
            Primitive::Rect { origin, width, height, corner_radius } => {
                positive(*width, "width")?;
                positive(*height, "height")?;
                let o = Point2::from(*origin);
                let c = vec![
                    o,
                    o + Point2::new(*width, 0.0),
                    o + Point2::new(*width, *height),
                    o + Point2::new(0.0, *height),
                ];
                let names = ["bottom", "right", "top", "left"].map(String::from).to_vec();
                Ok((c, names, *corner_radius))
            }
            Primitive::Polygon { vertices, corner_radius } => {
                let mut c: Vec<Point2> = vertices.iter().map(|&v| v.into()).collect();
                let area: f64 = (0..c.len()).map(|i| c[i].cross(c[(i + 1) % c.len()])).sum();
                if area < 0.0 {
                    return Err(GeometryError::InvalidPrimitive(
                        "polygon vertices must be listed counter-clockwise".into(),
                    ));
                }
                let names = (0..c.len()).map(|i| format!("e{i}")).collect();
                c.shrink_to_fit();
                Ok((c, names, *corner_radius))
            }
            Primitive::Trapezoid { center, short_side, long_side, height, facing_deg, corner_radius } => {
                positive(*short_side, "short_side")?;
                positive(*long_side, "long_side")?;
                positive(*height, "height")?;
                let n = Point2::new(1.0, 0.0).rotated(facing_deg.to_radians());
                let t = n.perp();
                let c0 = Point2::from(*center);
                let at = |u: f64, v: f64| c0 + n * u + t * v;
                let (h, a, b) = (height / 2.0, short_side / 2.0, long_side / 2.0);
                let c = vec![at(-h, -b), at(h, -a), at(h, a), at(-h, b)];
                let names = ["leg_a", "short", "leg_b", "long"].map(String::from).to_vec();
                Ok((c, names, *corner_radius))
            }
            Primitive::Circle { .. } => unreachable!("circles are handled separately"),
        }
    }

    fn outline(&self) -> Result<Outline, GeometryError> {
        if let Primitive::Circle { center, radius } = self {
            if !(*radius > 0.0 && radius.is_finite()) {
                return Err(GeometryError::InvalidPrimitive(format!("bad circle radius {radius}")));
            }
            let c = Point2::from(*center);
            let n = ((2.0 * PI * radius) / ARC_CHORD).ceil().max(8.0) as usize;
            let vertices =
                (0..n).map(|i| c + Point2::new(*radius, 0.0).rotated(2.0 * PI * i as f64 / n as f64)).collect();
            return Ok(Outline { vertices, sides: vec![("all".into(), 0, n)] });
        }
        let (corners, names, radius) = self.corners_and_names()?;
        round_corners(&corners, names, radius)
    }
}

/// Tangent points and arc samples for a filleted corner, from the incoming to the outgoing side.
fn fillet(prev: Point2, v: Point2, next: Point2, r: f64) -> Vec<Point2> {
    let u1 = (prev - v).normalized();
    let u2 = (next - v).normalized();
    let theta = u1.dot(u2).clamp(-1.0, 1.0).acos();
    if r == 0.0 || theta >= PI - 1e-12 {
        return vec![v];
    }
    let t = r / (theta / 2.0).tan();
    let t1 = v + u1 * t;
    let t2 = v + u2 * t;
    let center = v + (u1 + u2).normalized() * (r / (theta / 2.0).sin());
    let a1 = (t1 - center).y.atan2((t1 - center).x);
    let a2 = (t2 - center).y.atan2((t2 - center).x);
    let mut sweep = a2 - a1;
    while sweep > PI {
        sweep -= 2.0 * PI;
    }
    while sweep < -PI {
        sweep += 2.0 * PI;
    }
    let m = ((sweep.abs() * r) / ARC_CHORD).ceil().max(1.0) as usize;
    let mut pts = Vec::with_capacity(m + 1);
    pts.push(t1);
    for k in 1..m {
        let a = a1 + sweep * k as f64 / m as f64;
        pts.push(center + Point2::new(r * a.cos(), r * a.sin()));
    }
    pts.push(t2);
    pts
}

fn round_corners(corners: &[Point2], names: Vec<String>, r: f64) -> Result<Outline, GeometryError> {
    let n = corners.len();
    if n < 3 {
        return Err(GeometryError::TooFewVertices(0));
    }
    if !(r >= 0.0 && r.is_finite()) {
        return Err(GeometryError::InvalidPrimitive(format!("bad corner radius {r}")));
    }
    if r > 0.0 {
        for i in 0..n {
            let prev = corners[(i + n - 1) % n];
            let next = corners[(i + 1) % n];
            let v = corners[i];
            let (l1, l2) = ((prev - v).norm(), (next - v).norm());
            let theta = (prev - v).normalized().dot((next - v).normalized()).clamp(-1.0, 1.0).acos();
            let tangent = r / (theta / 2.0).tan();
            let limit = 0.5 * l1.min(l2);
            if tangent >= limit {
                return Err(GeometryError::RadiusTooLarge { vertex: i, radius: r, limit });
            }
        }
    }
    let arcs: Vec<Vec<Point2>> =
        (0..n).map(|i| fillet(corners[(i + n - 1) % n], corners[i], corners[(i + 1) % n], r)).collect();
    // Vertex 0 is the outgoing tangent point of corner 0, so every side is a contiguous range.
    let mut vertices = vec![*arcs[0].last().unwrap()];
    let mut sides = Vec::with_capacity(n);
    for k in 0..n {
        let start = vertices.len() - 1;
        let arc = &arcs[(k + 1) % n];
        let end = vertices.len();
        if k + 1 < n {
            vertices.extend_from_slice(arc);
        } else {
            vertices.extend_from_slice(&arc[..arc.len() - 1]);
        }
        sides.push((names[k].clone(), start, end));
    }
    Ok(Outline { vertices, sides })
}

/// Builds and validates a domain from primitives, resolving named side tags to vertex ranges.
pub fn build_domain(spec: &ShapeSpec) -> Result<Domain, GeometryError> {
    let outer = spec.outer.outline()?;
    let holes: Vec<Outline> = spec.holes.iter().map(Primitive::outline).collect::<Result<_, _>>()?;
    let outlines: Vec<&Outline> = std::iter::once(&outer).chain(holes.iter()).collect();
    let mut tags = BTreeMap::new();
    for (name, refs) in &spec.tags {
        let mut ranges = Vec::with_capacity(refs.len());
        for r in refs {
            let unknown =
                || GeometryError::UnknownSide { tag: name.clone(), loop_index: r.loop_index, side: r.side.clone() };
            let outline = outlines.get(r.loop_index).ok_or_else(unknown)?;
            let &(_, start, end) = outline.sides.iter().find(|(s, _, _)| *s == r.side).ok_or_else(unknown)?;
            ranges.push(TagRange { loop_index: r.loop_index, start, end });
        }
        tags.insert(name.clone(), ranges);
    }
    let to_loop = |o: &Outline, role| Loop::new(o.vertices.clone(), role);
    Domain::new(to_loop(&outer, LoopRole::Outer), holes.iter().map(|h| to_loop(h, LoopRole::Hole)).collect(), tags)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(w: f64, h: f64, r: f64) -> Primitive {
        Primitive::Rect { origin: [0.0, 0.0], width: w, height: h, corner_radius: r }
    }

    fn trapezoid(cx: f64, facing: f64) -> Primitive {
        Primitive::Trapezoid {
            center: [cx, 15.0],
            short_side: 11.0,
            long_side: 14.0,
            height: 11.0,
            facing_deg: facing,
            corner_radius: 1.0,
        }
    }

    #[test]
    fn plain_rectangle_has_four_vertices() {
        let d =
            build_domain(&ShapeSpec { outer: rect(45.0, 30.0, 0.0), holes: vec![], tags: BTreeMap::new() }).unwrap();
        assert_eq!(d.loop_count(), 1);
        assert_eq!(d.outer.len(), 4);
        assert_eq!(d.area(), 45.0 * 30.0);
    }

    #[test]
    fn zero_radius_passes_polygon_through() {
        let verts = vec![[0.0, 0.0], [4.0, 0.0], [4.0, 3.0], [1.0, 5.0]];
        let d = build_domain(&ShapeSpec {
            outer: Primitive::Polygon { vertices: verts.clone(), corner_radius: 0.0 },
            holes: vec![],
            tags: BTreeMap::new(),
        })
        .unwrap();
        let got: Vec<[f64; 2]> = d.outer.vertices.iter().map(|&p| p.into()).collect();
        assert_eq!(got, verts);
    }

    #[test]
    fn two_hole_plate() {
        let mut tags = BTreeMap::new();
        tags.insert("left".to_string(), vec![BoundaryRef { loop_index: 1, side: "short".into() }]);
        let spec =
            ShapeSpec { outer: rect(46.0, 30.0, 0.0), holes: vec![trapezoid(10.5, 180.0), trapezoid(35.5, 0.0)], tags };
        let d = build_domain(&spec).unwrap();
        assert_eq!(d.loop_count(), 3);
        // arcs are finely discretized
        for h in &d.holes {
            assert!(h.signed_area() < 0.0);
            for (a, b) in h.segments() {
                let len = (b - a).norm();
                assert!(len <= ARC_CHORD + 1e-12 || len > 5.0, "segment {len}");
            }
        }
        // the tagged short side is the straight edge at x = 10.5 - 5.5 = 5
        let r = d.tag_ranges("left").unwrap()[0];
        let h = d.loop_at(r.loop_index).unwrap();
        for s in r.start..r.end {
            let (a, b) = h.segment(s);
            assert!((a.x - 5.0).abs() < 1e-12 && (b.x - 5.0).abs() < 1e-12);
        }
        assert_eq!(r.end - r.start, 1);
        let (a, b) = h.segment(r.start);
        let len = (b - a).norm();
        assert!(len > 8.0 && len < 11.0, "short side {len}");
    }

    #[test]
    fn radius_too_large() {
        let e = build_domain(&ShapeSpec { outer: rect(4.0, 4.0, 2.5), holes: vec![], tags: BTreeMap::new() });
        assert!(matches!(e, Err(GeometryError::RadiusTooLarge { .. })));
    }

    #[test]
    fn hole_outside_outer() {
        let e = build_domain(&ShapeSpec {
            outer: rect(10.0, 10.0, 0.0),
            holes: vec![Primitive::Circle { center: [12.0, 5.0], radius: 1.0 }],
            tags: BTreeMap::new(),
        });
        assert_eq!(e, Err(GeometryError::HoleOutside(0)));
    }

    #[test]
    fn self_intersecting_polygon() {
        let e = build_domain(&ShapeSpec {
            outer: Primitive::Polygon {
                vertices: vec![[0.0, 0.0], [4.0, 0.0], [4.0, 4.0], [6.0, -1.0], [0.0, 4.0]],
                corner_radius: 0.0,
            },
            holes: vec![],
            tags: BTreeMap::new(),
        });
        assert!(matches!(e, Err(GeometryError::SelfIntersecting(0))));
    }

    #[test]
    fn rounded_rect_area() {
        let d =
            build_domain(&ShapeSpec { outer: rect(10.0, 10.0, 2.0), holes: vec![], tags: BTreeMap::new() }).unwrap();
        let exact = 100.0 - (4.0 - PI) * 4.0;
        assert!((d.area() - exact).abs() < 0.05);
        for (a, b) in d.outer.segments() {
            assert!((b - a).norm() <= ARC_CHORD + 1e-12 || (b - a).norm() > 5.0);
        }
    }
}
