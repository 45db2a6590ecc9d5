//! Comparison strategies: concentric wall rings, greedy extraction only, and greedy extraction
//! along a smoothed orientation field.

use serde::{Deserialize, Serialize};

use crate::extraction::{extract_candidate, extract_with, principal, DirectionField, StressState};
use crate::fem::StressTensor2;
use crate::geometry::{offset_loops, Domain, GeometryError, Mesh, Point2, PointLocator, RingSide};
use crate::material::{FiberLayout, FiberPath};
use crate::optim::{minimize, BfgsConfig, BfgsResult};
use crate::planner::{run_with, PlanConfig, PlanError, PlanReport};
use crate::scenario::Scenario;

/// Closed wall-parallel rings `1..=n_rings`; each ring repeats its first vertex at the end.
/// Rings stop at the first index where every loop collapses, so the result may be empty.
pub fn concentric(
    domain: &Domain,
    side: RingSide,
    n_rings: usize,
    d_min: f64,
    w_fiber: f64,
) -> Result<FiberLayout, GeometryError> {
    let mut paths = Vec::new();
    for ring in 1..=n_rings {
        let loops = match offset_loops(domain, side, ring, d_min, w_fiber) {
            Err(GeometryError::AllCollapsed) => break,
            r => r?,
        };
        for l in loops {
            let mut v = l.vertices.clone();
            v.push(v[0]);
            paths.push(FiberPath::new(v));
        }
    }
    Ok(FiberLayout::new(paths))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldWeights {
    pub alpha_stress: f64,
    pub alpha_smooth: f64,
}

impl Default for FieldWeights {
    fn default() -> Self {
        Self { alpha_stress: 1.0, alpha_smooth: 0.02 }
    }
}

/// One direction per lattice cell whose center lies inside the domain.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientationField {
    /// Center of lattice cell (0, 0).
    pub origin: Point2,
    pub h: f64,
    pub nx: usize,
    pub ny: usize,
    /// Index into `centers`/`vectors` for each lattice cell, row-major by y.
    cells: Vec<Option<usize>>,
    pub centers: Vec<Point2>,
    pub vectors: Vec<Point2>,
}

impl OrientationField {
    /// Lattice over the domain's bounding box with all vectors zero.
    pub fn new(domain: &Domain, h: f64) -> Self {
        assert!(h > 0.0, "cell spacing must be positive");
        let (lo, hi) = domain.bounding_box();
        let nx = ((hi.x - lo.x) / h).ceil().max(1.0) as usize;
        let ny = ((hi.y - lo.y) / h).ceil().max(1.0) as usize;
        let origin = lo + Point2::new(0.5 * h, 0.5 * h);
        let mut cells = Vec::with_capacity(nx * ny);
        let mut centers = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                let c = origin + Point2::new(i as f64 * h, j as f64 * h);
                if domain.contains(c) {
                    cells.push(Some(centers.len()));
                    centers.push(c);
                } else {
                    cells.push(None);
                }
            }
        }
        let vectors = vec![Point2::default(); centers.len()];
        Self { origin, h, nx, ny, cells, centers, vectors }
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn cell_area(&self) -> f64 {
        self.h * self.h
    }

    fn cell(&self, i: isize, j: isize) -> Option<usize> {
        if i < 0 || j < 0 || i as usize >= self.nx || j as usize >= self.ny {
            return None;
        }
        self.cells[j as usize * self.nx + i as usize]
    }

    /// Pairs of in-domain cells adjacent along +x or +y.
    pub fn neighbor_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for j in 0..self.ny as isize {
            for i in 0..self.nx as isize {
                let Some(a) = self.cell(i, j) else { continue };
                for (di, dj) in [(1, 0), (0, 1)] {
                    if let Some(b) = self.cell(i + di, j + dj) {
                        out.push((a, b));
                    }
                }
            }
        }
        out
    }

    /// Index of the in-domain cell nearest to `p`, if any lies within one cell.
    pub fn nearest(&self, p: Point2) -> Option<usize> {
        let fi = ((p.x - self.origin.x) / self.h).round() as isize;
        let fj = ((p.y - self.origin.y) / self.h).round() as isize;
        if let Some(c) = self.cell(fi, fj) {
            return Some(c);
        }
        let mut best: Option<(f64, usize)> = None;
        for dj in -1..=1 {
            for di in -1..=1 {
                if let Some(c) = self.cell(fi + di, fj + dj) {
                    let d = self.centers[c].distance(p);
                    if best.is_none_or(|(bd, _)| d < bd) {
                        best = Some((d, c));
                    }
                }
            }
        }
        best.map(|(_, c)| c)
    }

    pub fn normalized(mut self) -> Self {
        for v in &mut self.vectors {
            let n = v.norm();
            if n > 0.0 {
                *v = *v * (1.0 / n);
            }
        }
        self
    }

    /// Element stress at each cell center; zero where a center falls outside the mesh.
    pub fn sample_stress(&self, mesh: &Mesh, stress: &[StressTensor2]) -> Vec<StressTensor2> {
        let locator = PointLocator::new(mesh);
        self.centers.iter().map(|&c| locator.locate(mesh, c).map(|e| stress[e]).unwrap_or_default()).collect()
    }
}

impl DirectionField for OrientationField {
    fn direction(&self, p: Point2) -> Option<Point2> {
        let v = self.vectors[self.nearest(p)?];
        (v.norm_sq() > 0.0).then_some(v)
    }
}

fn unit(v: Point2) -> Option<(Point2, f64)> {
    let n = v.norm();
    (n > 0.0).then(|| (v * (1.0 / n), n))
}

/// `−Σ v̂ᵀ σ v̂ · cell_area` over cells.
pub fn field_stress_term(field: &OrientationField, stress: &[StressTensor2]) -> f64 {
    let a = field.cell_area();
    -field.vectors.iter().zip(stress).filter_map(|(&v, s)| unit(v).map(|(u, _)| s.quadratic(u))).sum::<f64>() * a
}

/// Flip-invariant squared finite-difference gradient: `Σ min(‖(b̂ − â)/h‖², ‖(b̂ + â)/h‖²) · cell_area`.
pub fn field_smooth_term(field: &OrientationField) -> f64 {
    let k = field.cell_area() / (field.h * field.h);
    field
        .neighbor_pairs()
        .iter()
        .map(|&(i, j)| match (unit(field.vectors[i]), unit(field.vectors[j])) {
            (Some((a, _)), Some((b, _))) => 2.0 - 2.0 * a.dot(b).abs(),
            _ => 0.0,
        })
        .sum::<f64>()
        * k
}

pub fn field_objective(field: &OrientationField, stress: &[StressTensor2], w: &FieldWeights) -> f64 {
    w.alpha_stress * field_stress_term(field, stress) + w.alpha_smooth * field_smooth_term(field)
}

/// Field objective and its gradient over the raw (unnormalized) vectors, flattened as `[x0, y0, ...]`.
fn objective_with_gradient(
    x: &[f64],
    field: &OrientationField,
    pairs: &[(usize, usize)],
    stress: &[StressTensor2],
    w: &FieldWeights,
) -> (f64, Vec<f64>) {
    let n = field.len();
    let a = field.cell_area();
    let k = a / (field.h * field.h);
    let units: Vec<Option<(Point2, f64)>> = (0..n).map(|i| unit(Point2::new(x[2 * i], x[2 * i + 1]))).collect();
    let mut g = vec![0.0; 2 * n];
    let mut add = |i: usize, v: Point2| {
        g[2 * i] += v.x;
        g[2 * i + 1] += v.y;
    };
    let mut f = 0.0;
    for (i, u) in units.iter().enumerate() {
        let Some((u, len)) = *u else { continue };
        let su = stress[i].apply(u);
        let q = u.dot(su);
        f -= w.alpha_stress * a * q;
        // d(v̂ᵀσv̂)/dv = 2 (σv̂ − (v̂ᵀσv̂) v̂) / |v|
        add(i, (su - u * q) * (-2.0 * w.alpha_stress * a / len));
    }
    for &(i, j) in pairs {
        let (Some((ua, la)), Some((ub, lb))) = (units[i], units[j]) else { continue };
        let c = ua.dot(ub);
        f += w.alpha_smooth * k * (2.0 - 2.0 * c.abs());
        let s = -2.0 * w.alpha_smooth * k * c.signum();
        if c != 0.0 {
            add(i, (ub - ua * c) * (s / la));
            add(j, (ua - ub * c) * (s / lb));
        }
    }
    (f, g)
}

/// Minimizes the field objective from `init` (normalized inside the objective), returning the
/// normalized result and the optimizer record.
pub fn optimize_field_from(
    init: &OrientationField,
    stress: &[StressTensor2],
    w: &FieldWeights,
) -> (OrientationField, BfgsResult) {
    let pairs = init.neighbor_pairs();
    let x0: Vec<f64> = init.vectors.iter().flat_map(|v| [v.x, v.y]).collect();
    let cfg = BfgsConfig { max_iterations: 100, gradient_tolerance: 1e-6, memory: Some(10), ..BfgsConfig::default() };
    let res =
        minimize(|x| Ok::<_, std::convert::Infallible>(objective_with_gradient(x, init, &pairs, stress, w)), x0, &cfg)
            .unwrap_or_else(|e| match e {});
    let mut out = init.clone();
    for (i, v) in out.vectors.iter_mut().enumerate() {
        *v = Point2::new(res.x[2 * i], res.x[2 * i + 1]);
    }
    (out.normalized(), res)
}

/// Field on an `h`-spaced lattice initialized to the principal walk directions of the sampled
/// stress and then optimized.
pub fn optimize_field(
    domain: &Domain,
    mesh: &Mesh,
    stress: &[StressTensor2],
    w: &FieldWeights,
    h: f64,
) -> OrientationField {
    let mut init = OrientationField::new(domain, h);
    let cell_stress = init.sample_stress(mesh, stress);
    for (v, s) in init.vectors.iter_mut().zip(&cell_stress) {
        *v = principal(s).1;
    }
    optimize_field_from(&init, &cell_stress, w).0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldConfig {
    pub weights: FieldWeights,
    /// Lattice spacing, mm.
    pub h: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self { weights: FieldWeights::default(), h: 1.0 }
    }
}

/// Greedy extraction rounds without any layout optimization.
pub fn greedy_only(scenario: &Scenario, cfg: &PlanConfig) -> Result<PlanReport, PlanError> {
    run_with(scenario, cfg, false, |layout, walk| extract_candidate(scenario, layout, walk))
}

/// Greedy extraction rounds that walk along an optimized orientation field, re-solved and
/// re-optimized before each path. Start points are still drawn from the raw plastic stress.
pub fn field_opt_greedy(scenario: &Scenario, cfg: &PlanConfig, field: &FieldConfig) -> Result<PlanReport, PlanError> {
    run_with(scenario, cfg, false, |layout, walk| {
        let state = StressState::solve(scenario, layout)?;
        let f = optimize_field(&scenario.domain, &scenario.model.mesh, &state.plastic, &field.weights, field.h);
        extract_with(scenario, layout, &state, &f, walk)
    })
}

/// Sum over paths of the absolute turning angle at every interior vertex, radians.
pub fn total_turning(layout: &FiberLayout) -> f64 {
    layout
        .paths
        .iter()
        .flat_map(|p| {
            p.vertices.windows(3).map(|w| {
                let (a, b) = (w[1] - w[0], w[2] - w[1]);
                a.cross(b).atan2(a.dot(b)).abs()
            })
        })
        .sum()
}
