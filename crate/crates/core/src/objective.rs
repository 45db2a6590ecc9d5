//! Layout objective: negative mean strain energy plus smoothness, length and clearance penalties.

use serde::{Deserialize, Serialize};

use crate::fem::{stiffness_sensitivity, FemError, FemModel};
use crate::geometry::{signed_distance, signed_distance_with_gradient, Domain, Point2};
use crate::material::{FiberLayout, FiberPath, MaterialParams};
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveWeights {
    pub w_lap: f64,
    pub w_min_l: f64,
    pub w_bdy: f64,
    /// Weight of the per-path length-budget hinge used by the planner.
    pub w_max_l: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self { w_lap: 1e-8, w_min_l: 1.0, w_bdy: 1.0, w_max_l: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveBreakdown {
    pub total: f64,
    /// Negative mean strain energy, N·mm.
    pub neg_energy: f64,
    pub lap: f64,
    pub min_l: f64,
    pub bdy: f64,
    /// Strain energy of each load case, N·mm.
    pub energies: Vec<f64>,
}

impl ObjectiveBreakdown {
    pub fn mean_energy(&self) -> f64 {
        -self.neg_energy
    }
}

/// Segment-count-cubed weighted sum of squared vertex deviations from neighbour midpoints.
pub fn laplacian_reg(layout: &FiberLayout) -> f64 {
    let s = layout.segment_count() as f64;
    let sum: f64 =
        layout.paths.iter().flat_map(|p| p.vertices.windows(3).map(|w| (w[1] - (w[0] + w[2]) * 0.5).norm_sq())).sum();
    s * s * s * sum
}

/// Mean squared vertex Laplacian `‖p_i - (p_{i-1} + p_{i+1})/2‖²` over all interior vertices.
pub fn mean_squared_laplacian(layout: &FiberLayout) -> f64 {
    let (sum, n) = layout
        .paths
        .iter()
        .flat_map(|p| p.vertices.windows(3).map(|w| (w[1] - (w[0] + w[2]) * 0.5).norm_sq()))
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn min_length_reg(path: &FiberPath, l_min: f64) -> f64 {
    let short = (l_min - path.length()).max(0.0);
    short * short
}

pub fn boundary_reg(path: &FiberPath, domain: &Domain, d_min: f64) -> f64 {
    path.vertices
        .iter()
        .map(|&p| {
            let v = (d_min - signed_distance(domain, p)).max(0.0);
            v * v
        })
        .sum()
}

fn add(grad: &mut [f64], v: usize, g: Point2) {
    grad[2 * v] += g.x;
    grad[2 * v + 1] += g.y;
}

/// Adds `c · ∂length/∂vertex` for the path whose first vertex has flat index `base`.
fn add_length_gradient(grad: &mut [f64], base: usize, v: &[Point2], c: f64) {
    for k in 0..v.len().saturating_sub(1) {
        let d = v[k + 1] - v[k];
        let n = d.norm();
        if n > 0.0 {
            let u = d * (1.0 / n);
            add(grad, base + k + 1, u * c);
            add(grad, base + k, u * -c);
        }
    }
}

/// `w · Σ max(length_i − budget_i, 0)²` over paths; its gradient is added into `grad` if given.
pub fn length_budget_penalty(layout: &FiberLayout, budgets: &[f64], w: f64, mut grad: Option<&mut [f64]>) -> f64 {
    let mut total = 0.0;
    let mut base = 0;
    for (path, &b) in layout.paths.iter().zip(budgets) {
        let over = (path.length() - b).max(0.0);
        total += over * over;
        if over > 0.0 {
            if let Some(g) = grad.as_deref_mut() {
                add_length_gradient(g, base, &path.vertices, 2.0 * w * over);
            }
        }
        base += path.len();
    }
    w * total
}

struct Regs {
    lap: f64,
    min_l: f64,
    bdy: f64,
}

/// Adds the weighted regularizer gradients into `grad` and returns the unweighted terms.
fn regularizers(
    layout: &FiberLayout,
    domain: &Domain,
    params: &MaterialParams,
    w: &ObjectiveWeights,
    mut grad: Option<&mut [f64]>,
) -> Regs {
    let s = layout.segment_count() as f64;
    let s3 = s * s * s;
    let (mut lap, mut min_l, mut bdy) = (0.0, 0.0, 0.0);
    let mut base = 0;
    for path in &layout.paths {
        let v = &path.vertices;
        for i in 1..v.len().saturating_sub(1) {
            let r = v[i] - (v[i - 1] + v[i + 1]) * 0.5;
            lap += r.norm_sq();
            if let Some(g) = grad.as_deref_mut() {
                let c = w.w_lap * s3;
                add(g, base + i, r * (2.0 * c));
                add(g, base + i - 1, r * -c);
                add(g, base + i + 1, r * -c);
            }
        }
        let short = (params.l_min - path.length()).max(0.0);
        min_l += short * short;
        if short > 0.0 {
            if let Some(g) = grad.as_deref_mut() {
                add_length_gradient(g, base, v, -2.0 * short * w.w_min_l);
            }
        }
        for (k, &p) in v.iter().enumerate() {
            let (sd, n) = signed_distance_with_gradient(domain, p);
            let viol = (params.d_min - sd).max(0.0);
            bdy += viol * viol;
            if viol > 0.0 {
                if let Some(g) = grad.as_deref_mut() {
                    add(g, base + k, n * (-2.0 * viol * w.w_bdy));
                }
            }
        }
        base += v.len();
    }
    Regs { lap: s3 * lap, min_l, bdy }
}

fn assemble(neg_energy: f64, energies: Vec<f64>, r: Regs, w: &ObjectiveWeights) -> ObjectiveBreakdown {
    ObjectiveBreakdown {
        total: neg_energy + w.w_lap * r.lap + w.w_min_l * r.min_l + w.w_bdy * r.bdy,
        neg_energy,
        lap: r.lap,
        min_l: r.min_l,
        bdy: r.bdy,
        energies,
    }
}

/// Objective on a specific FEM model of the scenario.
pub fn evaluate_on(
    model: &FemModel,
    layout: &FiberLayout,
    scenario: &Scenario,
) -> Result<ObjectiveBreakdown, FemError> {
    let params = scenario.material();
    let field = model.modulus_field(layout, params);
    let energies = (0..model.case_count())
        .map(|c| model.solve_case(c, &field.modulus).map(|r| r.strain_energy))
        .collect::<Result<Vec<_>, _>>()?;
    let mean = energies.iter().sum::<f64>() / energies.len() as f64;
    let regs = regularizers(layout, &scenario.domain, params, scenario.weights(), None);
    Ok(assemble(-mean, energies, regs, scenario.weights()))
}

pub fn evaluate(layout: &FiberLayout, scenario: &Scenario) -> Result<ObjectiveBreakdown, FemError> {
    evaluate_on(&scenario.model, layout, scenario)
}

/// Objective value and its gradient over the flattened vertex coordinates.
pub fn gradient(layout: &FiberLayout, scenario: &Scenario) -> Result<(ObjectiveBreakdown, Vec<f64>), FemError> {
    let params = scenario.material();
    let model = &scenario.model;
    let field = model.modulus_field(layout, params);
    let cases = model.case_count() as f64;
    let mut grad = vec![0.0; 2 * layout.vertex_count()];
    let mut energies = Vec::with_capacity(model.case_count());
    for c in 0..model.case_count() {
        let r = model.solve_case(c, &field.modulus)?;
        energies.push(r.strain_energy);
        for (g, d) in grad.iter_mut().zip(stiffness_sensitivity(&field, layout, params, &r)) {
            *g -= d / cases;
        }
    }
    let mean = energies.iter().sum::<f64>() / cases;
    let regs = regularizers(layout, &scenario.domain, params, scenario.weights(), Some(&mut grad));
    Ok((assemble(-mean, energies, regs, scenario.weights()), grad))
}

#[derive(Debug, Clone)]
pub struct Subsequence {
    pub path: FiberPath,
    /// First vertex of the chosen subsequence in the input path.
    pub start: usize,
    pub objective: ObjectiveBreakdown,
    pub evaluations: usize,
}

/// Replaces `layout.paths[index]` by each contiguous subsequence (≥ 2 vertices) and keeps the
/// one with the lowest objective; ties go to the longer, then the earlier, subsequence.
pub fn best_subsequence(layout: &FiberLayout, index: usize, scenario: &Scenario) -> Result<Subsequence, FemError> {
    let verts = &layout.paths[index].vertices;
    let n = verts.len();
    assert!(n >= 2, "best_subsequence needs at least two vertices");
    let model = scenario.subsequence_model();
    let mut trial = layout.clone();
    let mut best: Option<Subsequence> = None;
    let mut evaluations = 0;
    for len in (2..=n).rev() {
        for start in 0..=n - len {
            let cand = FiberPath::new(verts[start..start + len].to_vec());
            trial.paths[index] = cand.clone();
            let obj = evaluate_on(model, &trial, scenario)?;
            evaluations += 1;
            if best.as_ref().is_none_or(|b| obj.total < b.objective.total) {
                best = Some(Subsequence { path: cand, start, objective: obj, evaluations: 0 });
            }
        }
    }
    let mut best = best.expect("at least one candidate");
    best.evaluations = evaluations;
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{rectangle, ScenarioSpec};

    fn p(x: f64, y: f64) -> Point2 {
        Point2::new(x, y)
    }

    fn path(pts: &[(f64, f64)]) -> FiberPath {
        FiberPath::new(pts.iter().map(|&(x, y)| p(x, y)).collect())
    }

    #[test]
    fn laplacian_examples() {
        let straight = FiberLayout::new(vec![path(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (3.0, 0.0)])]);
        assert_eq!(laplacian_reg(&straight), 0.0);
        let tent = path(&[(0.0, 0.0), (1.0, 1.0), (2.0, 0.0)]);
        assert_eq!(laplacian_reg(&FiberLayout::new(vec![tent.clone()])), 8.0);
        // doubling: s goes 2 -> 4 (8x multiplier), sum doubles
        assert_eq!(laplacian_reg(&FiberLayout::new(vec![tent.clone(), tent])), 128.0);
    }

    #[test]
    fn laplacian_rigid_invariance() {
        let l = FiberLayout::new(vec![path(&[(0.0, 0.0), (1.0, 0.7), (2.3, 0.1), (3.0, 1.5)])]);
        let moved = FiberLayout::new(vec![FiberPath::new(
            l.paths[0].vertices.iter().map(|&v| v.rotated(0.7) + p(3.0, -2.0)).collect(),
        )]);
        assert!((laplacian_reg(&l) - laplacian_reg(&moved)).abs() < 1e-12 * laplacian_reg(&l));
    }

    #[test]
    fn min_length_examples() {
        let seg = |l: f64| path(&[(0.0, 0.0), (l, 0.0)]);
        assert_eq!(min_length_reg(&seg(100.0), 30.0), 0.0);
        assert_eq!(min_length_reg(&seg(20.0), 30.0), 100.0);
        assert_eq!(min_length_reg(&seg(30.0), 30.0), 0.0);
    }

    #[test]
    fn boundary_examples() {
        let d = crate::geometry::build_domain(&rectangle().shape).unwrap();
        assert_eq!(boundary_reg(&path(&[(10.0, 10.0), (20.0, 10.0)]), &d, 1.3), 0.0);
        assert!((boundary_reg(&path(&[(10.0, 0.3), (20.0, 10.0)]), &d, 1.3) - 1.0).abs() < 1e-12);
        assert!((boundary_reg(&path(&[(10.0, -1.0), (20.0, 10.0)]), &d, 1.3) - 5.29).abs() < 1e-12);
    }

    fn coarse(mut s: ScenarioSpec) -> Scenario {
        s.mesh.target_edge = 1.5;
        Scenario::new(s).unwrap()
    }

    fn fd_gradient(layout: &FiberLayout, sc: &Scenario, h: f64) -> Vec<f64> {
        let flat = layout.to_flat();
        (0..flat.len())
            .map(|i| {
                let mut a = flat.clone();
                a[i] += h;
                let mut b = flat.clone();
                b[i] -= h;
                (evaluate(&layout.with_flat(&a), sc).unwrap().total
                    - evaluate(&layout.with_flat(&b), sc).unwrap().total)
                    / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn regularizer_gradient_matches_finite_differences() {
        // equal plastic and fiber moduli make the energy independent of the layout
        let mut s = rectangle();
        s.material.e_fiber = s.material.e_plastic;
        s.weights.w_lap = 1e-3;
        let sc = coarse(s);
        let layout = FiberLayout::new(vec![
            path(&[(0.5, 0.4), (5.0, 3.1), (9.0, 2.2), (12.0, 6.0)]),
            path(&[(20.0, 29.0), (24.0, 27.5), (30.0, 28.9)]),
        ]);
        let (obj, g) = gradient(&layout, &sc).unwrap();
        assert!(obj.min_l > 0.0 && obj.bdy > 0.0 && obj.lap > 0.0);
        let fd = fd_gradient(&layout, &sc, 1e-5);
        for i in 0..g.len() {
            assert!((g[i] - fd[i]).abs() <= 1e-7 * g[i].abs().max(1.0), "{i}: {} vs {}", g[i], fd[i]);
        }
    }

    #[test]
    fn length_budget_gradient_matches_finite_differences() {
        let layout = FiberLayout::new(vec![
            path(&[(0.0, 0.0), (5.0, 3.0), (9.0, 2.0), (12.0, 6.0)]),
            path(&[(20.0, 29.0), (24.0, 27.5)]),
            path(&[(1.0, 1.0), (30.0, 1.0)]),
        ]);
        let budgets = [10.0, 50.0, 20.0];
        let mut g = vec![0.0; 2 * layout.vertex_count()];
        let v = length_budget_penalty(&layout, &budgets, 0.7, Some(&mut g));
        let over0 = layout.paths[0].length() - 10.0;
        assert!((v - 0.7 * (over0 * over0 + 81.0)).abs() < 1e-9);
        assert!(g[8..12].iter().all(|&x| x == 0.0));
        let flat = layout.to_flat();
        let h = 1e-6;
        for i in 0..flat.len() {
            let (mut a, mut b) = (flat.clone(), flat.clone());
            a[i] += h;
            b[i] -= h;
            let fd = (length_budget_penalty(&layout.with_flat(&a), &budgets, 0.7, None)
                - length_budget_penalty(&layout.with_flat(&b), &budgets, 0.7, None))
                / (2.0 * h);
            assert!((g[i] - fd).abs() < 1e-6 * g[i].abs().max(1.0), "{i}: {} vs {fd}", g[i]);
        }
    }

    #[test]
    fn breakdown_is_additive() {
        let sc = coarse(rectangle());
        let layout = FiberLayout::new(vec![path(&[(0.5, 0.4), (5.0, 3.1), (9.0, 2.2)])]);
        let o = evaluate(&layout, &sc).unwrap();
        let w = sc.weights();
        let sum = o.neg_energy + w.w_lap * o.lap + w.w_min_l * o.min_l + w.w_bdy * o.bdy;
        assert!((o.total - sum).abs() <= 1e-12 * o.total.abs());
        assert_eq!(o.energies.len(), 1);
        assert_eq!(o.neg_energy, -o.energies[0]);
    }

    #[test]
    fn empty_layout_is_plain_energy() {
        let sc = coarse(rectangle());
        let o = evaluate(&FiberLayout::default(), &sc).unwrap();
        assert_eq!(o.total, o.neg_energy);
        assert!(o.neg_energy < 0.0);
        let (_, g) = gradient(&FiberLayout::default(), &sc).unwrap();
        assert!(g.is_empty());
    }

    #[test]
    fn regularizers_vanish_for_interior_long_straight_path() {
        let sc = coarse(rectangle());
        let layout = FiberLayout::new(vec![path(&[(5.0, 15.0), (17.0, 15.0), (29.0, 15.0), (41.0, 15.0)])]);
        let (o, g) = gradient(&layout, &sc).unwrap();
        assert_eq!((o.lap, o.min_l, o.bdy), (0.0, 0.0, 0.0));
        let field = sc.model.modulus_field(&layout, sc.material());
        let r = sc.model.solve_case(0, &field.modulus).unwrap();
        let du = stiffness_sensitivity(&field, &layout, sc.material(), &r);
        for (a, b) in g.iter().zip(&du) {
            assert_eq!(*a, -b);
        }
    }

    #[test]
    fn subsequence_counts_and_trivial_case() {
        let sc = coarse(rectangle());
        let two = FiberLayout::new(vec![path(&[(5.0, 15.0), (40.0, 15.0)])]);
        let r = best_subsequence(&two, 0, &sc).unwrap();
        assert_eq!(r.path, two.paths[0]);
        assert_eq!(r.evaluations, 1);
        let five = FiberLayout::new(vec![path(&[(5.0, 15.0), (12.0, 15.0), (20.0, 15.0), (28.0, 15.0), (36.0, 15.0)])]);
        assert_eq!(best_subsequence(&five, 0, &sc).unwrap().evaluations, 10);
    }

    #[test]
    fn subsequence_drops_dangling_tail() {
        let sc = coarse(rectangle());
        // a horizontal run whose tail turns across the load and out through the top edge
        let l = FiberLayout::new(vec![path(&[
            (3.0, 15.0),
            (12.0, 15.0),
            (22.0, 15.0),
            (32.0, 15.0),
            (41.0, 15.0),
            (41.0, 22.0),
            (41.0, 30.5),
            (41.0, 34.0),
        ])]);
        let r = best_subsequence(&l, 0, &sc).unwrap();
        assert_eq!(r.start, 0);
        assert_eq!(r.path.len(), 6);
        assert!(r.objective.bdy == 0.0);
    }
}
