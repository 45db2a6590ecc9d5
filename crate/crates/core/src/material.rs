//! Fiber-dependent "soft" modulus field and its derivatives with respect to fiber vertices.
//!
//! Each fiber path contributes a Gaussian occupancy `exp(-(d / (w/2))^2) * h_fiber`, where `d` is
//! the distance to the path. The thickness-integrated modulus is
//! `E_plastic * (h_object - min(alpha_fiber, h_fiber)) + E_fiber * alpha_fiber`, in GPa·mm.

use serde::{Deserialize, Serialize};

use crate::geometry::{segment_closest, Point2};

/// Occupancy terms with `(d / (w/2))^2` above this are dropped (`exp(-40) ≈ 4e-18`).
const CUTOFF_EXPONENT: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaterialParams {
    /// Young's modulus of the matrix plastic, GPa.
    pub e_plastic: f64,
    /// Young's modulus of the reinforcing fiber, GPa.
    pub e_fiber: f64,
    pub nu: f64,
    /// Fiber width, mm.
    pub w_fiber: f64,
    /// Laminate height, mm.
    pub h_object: f64,
    /// Total height of the fiber layers, mm.
    pub h_fiber: f64,
    /// Shortest printable fiber, mm.
    pub l_min: f64,
    /// Minimum fiber clearance from the part boundary, mm.
    pub d_min: f64,
}

impl Default for MaterialParams {
    fn default() -> Self {
        Self {
            e_plastic: 0.40,
            e_fiber: 20.1,
            nu: 0.3,
            w_fiber: 0.9,
            h_object: 2.0,
            h_fiber: 0.5,
            l_min: 30.0,
            d_min: 1.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid material parameters: {0}")]
pub struct MaterialError(pub String);

impl MaterialParams {
    pub fn validate(&self) -> Result<(), MaterialError> {
        let pos = [
            ("e_plastic", self.e_plastic),
            ("e_fiber", self.e_fiber),
            ("nu", self.nu),
            ("w_fiber", self.w_fiber),
            ("h_object", self.h_object),
            ("h_fiber", self.h_fiber),
            ("l_min", self.l_min),
            ("d_min", self.d_min),
        ];
        for (name, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(MaterialError(format!("{name} must be positive, got {v}")));
            }
        }
        if self.h_fiber > self.h_object {
            return Err(MaterialError("h_fiber exceeds h_object".into()));
        }
        if self.nu >= 0.5 {
            return Err(MaterialError(format!("nu must be below 0.5, got {}", self.nu)));
        }
        Ok(())
    }

    /// Gaussian falloff length `w_fiber / 2`.
    pub fn falloff(&self) -> f64 {
        self.w_fiber / 2.0
    }

    pub fn cutoff_radius(&self) -> f64 {
        self.falloff() * CUTOFF_EXPONENT.sqrt()
    }

    /// Modulus of pure plastic, `E_plastic * h_object`.
    pub fn plain_modulus(&self) -> f64 {
        self.e_plastic * self.h_object
    }

    pub fn alpha_plastic(&self, alpha_fiber: f64) -> f64 {
        self.h_object - alpha_fiber.min(self.h_fiber)
    }

    pub fn modulus_from_alpha(&self, alpha_fiber: f64) -> f64 {
        self.e_plastic * self.alpha_plastic(alpha_fiber) + self.e_fiber * alpha_fiber
    }

    /// `dE/dalpha_fiber`; the clamp uses its left derivative, so `alpha == h_fiber` counts as unclamped.
    pub fn modulus_slope(&self, alpha_fiber: f64) -> f64 {
        if alpha_fiber <= self.h_fiber {
            self.e_fiber - self.e_plastic
        } else {
            self.e_fiber
        }
    }

    /// Fraction of the stress carried by plastic: `E_p α_p / (E_p α_p + E_f α_f)`.
    pub fn plastic_fraction(&self, alpha_fiber: f64) -> f64 {
        let p = self.e_plastic * self.alpha_plastic(alpha_fiber);
        p / (p + self.e_fiber * alpha_fiber)
    }
}

/// Open polyline fiber path.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FiberPath {
    pub vertices: Vec<Point2>,
}

impl FiberPath {
    pub fn new(vertices: Vec<Point2>) -> Self {
        Self { vertices }
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn length(&self) -> f64 {
        self.vertices.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }

    pub fn segments(&self) -> impl Iterator<Item = (Point2, Point2)> + '_ {
        self.vertices.windows(2).map(|w| (w[0], w[1]))
    }

    /// Path invariants: at least two vertices, all finite, consecutive vertices distinct.
    pub fn is_valid(&self) -> bool {
        self.vertices.len() >= 2
            && self.vertices.iter().all(|p| p.is_finite())
            && self.vertices.windows(2).all(|w| w[0] != w[1])
    }

    /// Nearest segment to `x` as `(segment, t, squared distance, closest point)`; ties go to the
    /// lower segment index.
    pub fn nearest_segment(&self, x: Point2) -> Option<(usize, f64, f64, Point2)> {
        let mut best: Option<(usize, f64, f64, Point2)> = None;
        for (s, (a, b)) in self.segments().enumerate() {
            let (q, t, d2) = segment_closest(a, b, x);
            if best.is_none_or(|(_, _, bd, _)| d2 < bd) {
                best = Some((s, t, d2, q));
            }
        }
        best
    }
}

/// Ordered set of fiber paths; paths may overlap.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FiberLayout {
    pub paths: Vec<FiberPath>,
}

impl FiberLayout {
    pub fn new(paths: Vec<FiberPath>) -> Self {
        Self { paths }
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn total_length(&self) -> f64 {
        self.paths.iter().map(FiberPath::length).sum()
    }

    pub fn vertex_count(&self) -> usize {
        self.paths.iter().map(FiberPath::len).sum()
    }

    /// Total number of segments over all paths.
    pub fn segment_count(&self) -> usize {
        self.paths.iter().map(|p| p.len().saturating_sub(1)).sum()
    }

    /// Offset of each path's first vertex in the flattened vertex list.
    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.paths
            .iter()
            .map(|p| {
                let o = acc;
                acc += p.len();
                o
            })
            .collect()
    }

    /// Vertex coordinates as `[x0, y0, x1, y1, ...]` over all paths in order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.paths.iter().flat_map(|p| p.vertices.iter().flat_map(|v| [v.x, v.y])).collect()
    }

    /// Same path structure as `self`, with coordinates taken from `flat`.
    pub fn with_flat(&self, flat: &[f64]) -> FiberLayout {
        assert_eq!(flat.len(), 2 * self.vertex_count());
        let mut it = flat.chunks_exact(2);
        FiberLayout {
            paths: self
                .paths
                .iter()
                .map(|p| {
                    FiberPath::new(
                        p.vertices
                            .iter()
                            .map(|_| {
                                let c = it.next().unwrap();
                                Point2::new(c[0], c[1])
                            })
                            .collect(),
                    )
                })
                .collect(),
        }
    }
}

/// Minimum distance from `x` to any segment of the path.
pub fn dist_point_to_path(path: &FiberPath, x: Point2) -> f64 {
    match path.vertices.len() {
        0 => f64::INFINITY,
        1 => (x - path.vertices[0]).norm(),
        _ => path.nearest_segment(x).map_or(f64::INFINITY, |(_, _, d2, _)| d2.sqrt()),
    }
}

/// Uncapped fiber occupancy at `x`, in mm.
pub fn alpha_fiber(layout: &FiberLayout, params: &MaterialParams, x: Point2) -> f64 {
    let r = params.falloff();
    layout
        .paths
        .iter()
        .map(|p| {
            let d = dist_point_to_path(p, x);
            (-(d / r) * (d / r)).exp() * params.h_fiber
        })
        .sum()
}

/// Thickness-integrated Young's modulus at `x`, GPa·mm.
pub fn modulus(layout: &FiberLayout, params: &MaterialParams, x: Point2) -> f64 {
    params.modulus_from_alpha(alpha_fiber(layout, params, x))
}

/// Shear modulus `E / (2 (1 + nu))`.
pub fn shear_modulus(e: f64, nu: f64) -> f64 {
    e / (2.0 * (1.0 + nu))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VertexGradient {
    pub path: usize,
    pub vertex: usize,
    pub grad: Point2,
}

/// Exact gradient of [`modulus`] at `x` with respect to each fiber vertex, listing only the
/// endpoints of each path's nearest segment.
pub fn modulus_gradient(layout: &FiberLayout, params: &MaterialParams, x: Point2) -> Vec<VertexGradient> {
    let alpha = alpha_fiber(layout, params, x);
    let slope = params.modulus_slope(alpha);
    let r2 = params.falloff() * params.falloff();
    let mut out = Vec::new();
    for (pi, p) in layout.paths.iter().enumerate() {
        let Some((s, t, d2, q)) = p.nearest_segment(x) else { continue };
        // d(d²)/da = 2(1-t)(q-x), d(d²)/db = 2t(q-x); the t-dependence drops out at the optimum
        let c = slope * params.h_fiber * (-d2 / r2).exp() * (-1.0 / r2) * 2.0;
        let g = (q - x) * c;
        out.push(VertexGradient { path: pi, vertex: s, grad: g * (1.0 - t) });
        out.push(VertexGradient { path: pi, vertex: s + 1, grad: g * t });
    }
    out
}

/// Bucket grid over a fixed point set for range queries.
#[derive(Debug, Clone)]
pub struct PointGrid {
    pub points: Vec<Point2>,
    origin: Point2,
    cell: f64,
    nx: usize,
    ny: usize,
    /// CSR layout: points of cell `c` are `order[start[c]..start[c + 1]]`.
    start: Vec<u32>,
    order: Vec<u32>,
}

impl PointGrid {
    pub fn new(points: Vec<Point2>, cell: f64) -> Self {
        let (lo, hi) = crate::geometry::bbox(points.iter().copied());
        let lo = if points.is_empty() { Point2::ZERO } else { lo };
        let hi = if points.is_empty() { Point2::ZERO } else { hi };
        let nx = (((hi.x - lo.x) / cell).floor() as usize) + 1;
        let ny = (((hi.y - lo.y) / cell).floor() as usize) + 1;
        let cell_of = |p: Point2| {
            let i = (((p.x - lo.x) / cell).floor() as usize).min(nx - 1);
            let j = (((p.y - lo.y) / cell).floor() as usize).min(ny - 1);
            j * nx + i
        };
        let mut count = vec![0u32; nx * ny + 1];
        for &p in &points {
            count[cell_of(p) + 1] += 1;
        }
        for c in 0..nx * ny {
            count[c + 1] += count[c];
        }
        let start = count.clone();
        let mut fill = count;
        let mut order = vec![0u32; points.len()];
        for (k, &p) in points.iter().enumerate() {
            let c = cell_of(p);
            order[fill[c] as usize] = k as u32;
            fill[c] += 1;
        }
        Self { points, origin: lo, cell, nx, ny, start, order }
    }

    /// Calls `f` with every point index inside the axis-aligned box `[lo, hi]` (cell granularity).
    pub fn for_each_in_box(&self, lo: Point2, hi: Point2, mut f: impl FnMut(usize)) {
        if self.points.is_empty() {
            return;
        }
        let ci = |v: f64, o: f64, n: usize| ((((v - o) / self.cell).floor()).max(0.0) as usize).min(n - 1);
        if hi.x < self.origin.x || hi.y < self.origin.y {
            return;
        }
        let (i0, i1) = (ci(lo.x, self.origin.x, self.nx), ci(hi.x, self.origin.x, self.nx));
        let (j0, j1) = (ci(lo.y, self.origin.y, self.ny), ci(hi.y, self.origin.y, self.ny));
        for j in j0..=j1 {
            for i in i0..=i1 {
                let c = j * self.nx + i;
                for &k in &self.order[self.start[c] as usize..self.start[c + 1] as usize] {
                    f(k as usize);
                }
            }
        }
    }
}

/// Nearest-segment record for one (point, path) pair within the cutoff radius.
#[derive(Debug, Clone, Copy)]
struct Contribution {
    point: u32,
    path: u32,
    segment: u32,
    t: f64,
    /// `q - x`, closest point on the path minus the sample point.
    offset: Point2,
    /// `exp(-d² / r²)`.
    weight: f64,
}

/// Modulus sampled at every point of a [`PointGrid`], retaining what is needed for gradients.
#[derive(Debug, Clone)]
pub struct ModulusField {
    pub alpha_fiber: Vec<f64>,
    pub modulus: Vec<f64>,
    contributions: Vec<Contribution>,
}

impl ModulusField {
    pub fn evaluate(grid: &PointGrid, layout: &FiberLayout, params: &MaterialParams) -> Self {
        let n = grid.points.len();
        let r2 = params.falloff() * params.falloff();
        let cut = params.cutoff_radius();
        let cut2 = cut * cut;
        let mut alpha = vec![0.0; n];
        let mut contributions = Vec::new();
        // per-path scratch: best (d², segment, t, q) for touched points
        let mut best: Vec<(f64, u32, f64, Point2)> = vec![(f64::INFINITY, 0, 0.0, Point2::ZERO); n];
        let mut touched: Vec<u32> = Vec::new();
        for (pi, path) in layout.paths.iter().enumerate() {
            for (s, (a, b)) in path.segments().enumerate() {
                let lo = Point2::new(a.x.min(b.x) - cut, a.y.min(b.y) - cut);
                let hi = Point2::new(a.x.max(b.x) + cut, a.y.max(b.y) + cut);
                grid.for_each_in_box(lo, hi, |k| {
                    let x = grid.points[k];
                    let (q, t, d2) = segment_closest(a, b, x);
                    if d2 > cut2 {
                        return;
                    }
                    let e = &mut best[k];
                    if e.0 == f64::INFINITY {
                        touched.push(k as u32);
                    }
                    if d2 < e.0 {
                        *e = (d2, s as u32, t, q);
                    }
                });
            }
            touched.sort_unstable();
            for &k in &touched {
                let (d2, s, t, q) = best[k as usize];
                let w = (-d2 / r2).exp();
                alpha[k as usize] += w * params.h_fiber;
                contributions.push(Contribution {
                    point: k,
                    path: pi as u32,
                    segment: s,
                    t,
                    offset: q - grid.points[k as usize],
                    weight: w,
                });
                best[k as usize].0 = f64::INFINITY;
            }
            touched.clear();
        }
        let modulus = alpha.iter().map(|&a| params.modulus_from_alpha(a)).collect();
        Self { alpha_fiber: alpha, modulus, contributions }
    }

    /// Adds `Σ_k sens[k] · dE_k/dθ` into `grad`, indexed like [`FiberLayout::to_flat`].
    pub fn accumulate_gradient(&self, sens: &[f64], layout: &FiberLayout, params: &MaterialParams, grad: &mut [f64]) {
        let offsets = layout.offsets();
        let r2 = params.falloff() * params.falloff();
        for c in &self.contributions {
            let k = c.point as usize;
            if sens[k] == 0.0 {
                continue;
            }
            let slope = params.modulus_slope(self.alpha_fiber[k]);
            let coef = sens[k] * slope * params.h_fiber * c.weight * (-2.0 / r2);
            let g = c.offset * coef;
            let v = offsets[c.path as usize] + c.segment as usize;
            grad[2 * v] += g.x * (1.0 - c.t);
            grad[2 * v + 1] += g.y * (1.0 - c.t);
            grad[2 * v + 2] += g.x * c.t;
            grad[2 * v + 3] += g.y * c.t;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(x: f64, y: f64) -> Point2 {
        Point2::new(x, y)
    }

    fn line() -> FiberPath {
        FiberPath::new(vec![p(0.0, 0.0), p(10.0, 0.0)])
    }

    #[test]
    fn distance_examples() {
        assert_eq!(dist_point_to_path(&line(), p(5.0, 3.0)), 3.0);
        assert_eq!(dist_point_to_path(&line(), p(10.0, 0.0)), 0.0);
        assert_eq!(dist_point_to_path(&line(), p(-4.0, 3.0)), 5.0);
    }

    #[test]
    fn alpha_examples() {
        let mp = MaterialParams::default();
        assert_eq!(alpha_fiber(&FiberLayout::default(), &mp, p(1.0, 1.0)), 0.0);
        let l = FiberLayout::new(vec![line()]);
        assert_eq!(alpha_fiber(&l, &mp, p(3.0, 0.0)), 0.5);
        let a = alpha_fiber(&l, &mp, p(3.0, 0.45));
        assert!((a - 0.5 * (-1.0f64).exp()).abs() < 1e-15);
        assert!((a - 0.18394).abs() < 1e-5);
    }

    #[test]
    fn modulus_examples() {
        let mp = MaterialParams::default();
        assert!((modulus(&FiberLayout::default(), &mp, p(0.0, 0.0)) - 0.80).abs() < 1e-15);
        let one = FiberLayout::new(vec![line()]);
        assert!((modulus(&one, &mp, p(2.0, 0.0)) - 10.65).abs() < 1e-12);
        let two = FiberLayout::new(vec![line(), line()]);
        assert!((alpha_fiber(&two, &mp, p(2.0, 0.0)) - 1.0).abs() < 1e-15);
        assert!((modulus(&two, &mp, p(2.0, 0.0)) - 20.7).abs() < 1e-12);
        assert!((shear_modulus(1.0, 0.3) - 1.0 / 2.6).abs() < 1e-15);
    }

    #[test]
    fn gradient_empty_layout() {
        assert!(modulus_gradient(&FiberLayout::default(), &MaterialParams::default(), p(0.0, 0.0)).is_empty());
    }

    fn fd_check(layout: &FiberLayout, x: Point2) {
        let mp = MaterialParams::default();
        let g = modulus_gradient(layout, &mp, x);
        let mut dense = vec![0.0; 2 * layout.vertex_count()];
        let off = layout.offsets();
        for vg in &g {
            dense[2 * (off[vg.path] + vg.vertex)] += vg.grad.x;
            dense[2 * (off[vg.path] + vg.vertex) + 1] += vg.grad.y;
        }
        let flat = layout.to_flat();
        let h = 1e-6;
        let scale = dense.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        for i in 0..flat.len() {
            let mut fp = flat.clone();
            fp[i] += h;
            let mut fm = flat.clone();
            fm[i] -= h;
            let fd = (modulus(&layout.with_flat(&fp), &mp, x) - modulus(&layout.with_flat(&fm), &mp, x)) / (2.0 * h);
            assert!((fd - dense[i]).abs() <= 1e-5 * scale + 1e-8, "coord {i}: fd {fd} analytic {}", dense[i]);
        }
    }

    #[test]
    fn gradient_matches_finite_differences_single_segment() {
        fd_check(&FiberLayout::new(vec![line()]), p(3.0, 0.3));
    }

    #[test]
    fn tie_goes_to_lower_segment() {
        // both segments reach x at the shared vertex
        let path = FiberPath::new(vec![p(0.0, 0.0), p(1.0, 0.0), p(2.0, 0.0)]);
        let (s, t, _, _) = path.nearest_segment(p(1.0, 0.3)).unwrap();
        assert_eq!((s, t), (0, 1.0));
        let g = modulus_gradient(&FiberLayout::new(vec![path]), &MaterialParams::default(), p(1.0, 0.3));
        assert_eq!(g.iter().map(|v| v.vertex).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn field_matches_pointwise_evaluation() {
        let mp = MaterialParams::default();
        let layout = FiberLayout::new(vec![
            FiberPath::new(vec![p(1.0, 1.0), p(4.0, 2.0), p(6.0, 1.5)]),
            FiberPath::new(vec![p(2.0, 3.0), p(2.5, 0.5)]),
        ]);
        let pts: Vec<Point2> = (0..400).map(|k| p(0.02 * k as f64, 0.3 + 0.007 * k as f64)).collect();
        let grid = PointGrid::new(pts.clone(), 0.7);
        let field = ModulusField::evaluate(&grid, &layout, &mp);
        for (k, &x) in pts.iter().enumerate() {
            assert!((field.modulus[k] - modulus(&layout, &mp, x)).abs() < 1e-12);
        }
        // gradient of Σ_k E_k against per-point gradients
        let sens = vec![1.0; pts.len()];
        let mut g = vec![0.0; 2 * layout.vertex_count()];
        field.accumulate_gradient(&sens, &layout, &mp, &mut g);
        let mut want = vec![0.0; g.len()];
        let off = layout.offsets();
        for &x in &pts {
            for vg in modulus_gradient(&layout, &mp, x) {
                want[2 * (off[vg.path] + vg.vertex)] += vg.grad.x;
                want[2 * (off[vg.path] + vg.vertex) + 1] += vg.grad.y;
            }
        }
        for i in 0..g.len() {
            assert!((g[i] - want[i]).abs() < 1e-9 * want[i].abs().max(1.0), "{i}: {} vs {}", g[i], want[i]);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn gradient_random_configurations(
            coords in proptest::collection::vec(-2.0..2.0f64, 6),
            xx in -2.5..2.5f64, xy in -2.5..2.5f64,
        ) {
            let verts: Vec<Point2> = coords.chunks(2).map(|c| p(c[0], c[1])).collect();
            let path = FiberPath::new(verts);
            prop_assume!(path.is_valid());
            let x = p(xx, xy);
            // stay away from the measure-zero switching set between nearest segments
            let ds: Vec<f64> = path.segments().map(|(a, b)| segment_closest(a, b, x).2.sqrt()).collect();
            prop_assume!((ds[0] - ds[1]).abs() > 1e-3);
            let layout = FiberLayout::new(vec![path]);
            let a = alpha_fiber(&layout, &MaterialParams::default(), x);
            prop_assume!((a - 0.5).abs() > 1e-4);
            fd_check(&layout, x);
        }

        #[test]
        fn fiber_only_stiffens(
            coords in proptest::collection::vec(-3.0..3.0f64, 4),
            extra in proptest::collection::vec(-3.0..3.0f64, 4),
            xx in -3.0..3.0f64, xy in -3.0..3.0f64,
        ) {
            let mp = MaterialParams::default();
            let pts = |c: &Vec<f64>| FiberPath::new(c.chunks(2).map(|c| p(c[0], c[1])).collect());
            let base = FiberLayout::new(vec![pts(&coords)]);
            let x = p(xx, xy);
            let e0 = modulus(&base, &mp, x);
            prop_assert!(e0 >= mp.e_plastic * (mp.h_object - mp.h_fiber) - 1e-15);
            let mut more = base.clone();
            more.paths.push(pts(&extra));
            prop_assert!(modulus(&more, &mp, x) >= e0);
        }
    }
}
