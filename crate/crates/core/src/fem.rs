//! Plane-stress linear elasticity on constant-strain triangles under prescribed displacements.
//!
//! Moduli are thickness-integrated (GPa·mm); stiffness is assembled in N/mm so energies come out
//! in N·mm and stresses in N/mm.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::geometry::{Domain, Mesh, Point2};
use crate::material::{FiberLayout, MaterialParams, ModulusField, PointGrid};
use crate::sparse::{nested_dissection, LdlFactor, LdlSymbolic, SparseError, UpperPattern};

/// GPa·mm to N/mm.
const GPA_MM: f64 = 1000.0;
const RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FemError {
    #[error("unknown boundary tag {0:?}")]
    UnknownTag(String),
    #[error("boundary tag {0:?} selects no mesh nodes")]
    EmptyTag(String),
    #[error("node {node} is prescribed two different displacements")]
    ConflictingConstraint { node: usize },
    #[error("load case has no constraints")]
    Unconstrained,
    #[error("stiffness matrix is singular; constraints do not remove rigid-body motion ({0})")]
    Singular(SparseError),
    #[error("linear solve residual {0:e} above tolerance")]
    NotConverged(f64),
    #[error("modulus array has {got} entries for {want} elements")]
    ModulusLength { got: usize, want: usize },
    #[error("load case index {0} out of range")]
    BadCase(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentMask {
    X,
    Y,
    #[default]
    Both,
}

impl ComponentMask {
    fn components(self) -> &'static [usize] {
        match self {
            ComponentMask::X => &[0],
            ComponentMask::Y => &[1],
            ComponentMask::Both => &[0, 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirichletBc {
    pub tag: String,
    /// Prescribed displacement, mm.
    pub displacement: [f64; 2],
    #[serde(default)]
    pub mask: ComponentMask,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadCase {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub name: String,
    pub dirichlet: Vec<DirichletBc>,
}

/// Symmetric 2×2 stress, N/mm.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StressTensor2 {
    pub s11: f64,
    pub s22: f64,
    pub s12: f64,
}

impl StressTensor2 {
    pub fn new(s11: f64, s22: f64, s12: f64) -> Self {
        Self { s11, s22, s12 }
    }

    pub fn scaled(self, k: f64) -> Self {
        Self::new(self.s11 * k, self.s22 * k, self.s12 * k)
    }

    /// `vᵀ σ v`.
    pub fn quadratic(&self, v: Point2) -> f64 {
        self.s11 * v.x * v.x + 2.0 * self.s12 * v.x * v.y + self.s22 * v.y * v.y
    }

    /// `σ v`.
    pub fn apply(&self, v: Point2) -> Point2 {
        Point2::new(self.s11 * v.x + self.s12 * v.y, self.s12 * v.x + self.s22 * v.y)
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    /// Per-node displacement, mm.
    pub displacement: Vec<Point2>,
    /// `½ uᵀ K u`, N·mm.
    pub strain_energy: f64,
    pub element_stress: Vec<StressTensor2>,
    /// Element energy per unit modulus, `∂U/∂E_e` in N·mm per GPa·mm.
    pub energy_sensitivity: Vec<f64>,
    /// Relative residual of the free-DOF solve.
    pub residual: f64,
}

/// Plane-stress isotropic constitutive matrix for engineering shear strain.
pub fn constitutive_matrix(e: f64, nu: f64) -> [[f64; 3]; 3] {
    let c = e / (1.0 - nu * nu);
    let mu = e / (2.0 * (1.0 + nu));
    [[c, c * nu, 0.0], [c * nu, c, 0.0], [0.0, 0.0, mu]]
}

/// Strain-displacement matrix of a CST element (rows εxx, εyy, γxy) and its area.
fn strain_matrix(p: [Point2; 3]) -> ([[f64; 6]; 3], f64) {
    let area2 = (p[1] - p[0]).cross(p[2] - p[0]);
    let mut b = [[0.0; 6]; 3];
    for i in 0..3 {
        let j = (i + 1) % 3;
        let k = (i + 2) % 3;
        let bi = (p[j].y - p[k].y) / area2;
        let ci = (p[k].x - p[j].x) / area2;
        b[0][2 * i] = bi;
        b[1][2 * i + 1] = ci;
        b[2][2 * i] = ci;
        b[2][2 * i + 1] = bi;
    }
    (b, area2 / 2.0)
}

/// Per-element data valid for every modulus: stiffness and stress operators at unit modulus.
#[derive(Debug, Clone)]
struct Element {
    nodes: [usize; 3],
    /// `A Bᵀ D₁ B` in N/mm per GPa·mm.
    ke: [[f64; 6]; 6],
    /// `D₁ B`, stress per unit modulus.
    db: [[f64; 6]; 3],
}

/// Constrained system for one load case: fixed DOF values, ordering, and symbolic factor.
#[derive(Debug, Clone)]
struct CaseSystem {
    /// Prescribed value per DOF, `None` when free.
    fixed: Vec<Option<f64>>,
    /// Permuted equation index per DOF (free DOFs only).
    eq: Vec<usize>,
    symbolic: LdlSymbolic,
    /// Value-array position for each element's 21 upper local pairs; `usize::MAX` if either DOF is fixed.
    scatter: Vec<[usize; 21]>,
}

const LOCAL_PAIRS: [(usize, usize); 21] = {
    let mut out = [(0, 0); 21];
    let mut k = 0;
    let mut i = 0;
    while i < 6 {
        let mut j = i;
        while j < 6 {
            out[k] = (i, j);
            k += 1;
            j += 1;
        }
        i += 1;
    }
    out
};

/// Mesh plus precomputed element operators and per-load-case factorization structure.
#[derive(Debug, Clone)]
pub struct FemModel {
    pub mesh: Mesh,
    pub nu: f64,
    centroids: PointGrid,
    elements: Vec<Element>,
    cases: Vec<CaseSystem>,
}

impl FemModel {
    /// Resolves each load case's boundary tags on `mesh` and prepares the constrained systems.
    pub fn new(mesh: Mesh, domain: &Domain, nu: f64, loads: &[LoadCase]) -> Result<Self, FemError> {
        let constraints = loads.iter().map(|l| resolve_constraints(&mesh, domain, l)).collect::<Result<Vec<_>, _>>()?;
        Self::with_constraints(mesh, nu, constraints)
    }

    /// Builds from explicit per-case `(dof, value)` lists, with DOF `2 n + c` for node `n`, component `c`.
    pub fn with_constraints(mesh: Mesh, nu: f64, constraints: Vec<Vec<(usize, f64)>>) -> Result<Self, FemError> {
        let d1 = constitutive_matrix(1.0, nu);
        let elements: Vec<Element> = mesh
            .triangles
            .iter()
            .map(|&t| {
                let (b, area) = strain_matrix([mesh.nodes[t[0]], mesh.nodes[t[1]], mesh.nodes[t[2]]]);
                let mut db = [[0.0; 6]; 3];
                for r in 0..3 {
                    for c in 0..6 {
                        db[r][c] = (0..3).map(|k| d1[r][k] * b[k][c]).sum();
                    }
                }
                let mut ke = [[0.0; 6]; 6];
                for i in 0..6 {
                    for j in 0..6 {
                        ke[i][j] = GPA_MM * area * (0..3).map(|k| b[k][i] * db[k][j]).sum::<f64>();
                    }
                }
                Element { nodes: t, ke, db }
            })
            .collect();
        let order = nested_dissection(&mesh.nodes, &mesh.node_adjacency());
        let ndof = 2 * mesh.nodes.len();
        let mut cases = Vec::with_capacity(constraints.len());
        for list in constraints {
            if list.is_empty() {
                return Err(FemError::Unconstrained);
            }
            let mut fixed = vec![None; ndof];
            for (dof, v) in list {
                match fixed[dof] {
                    Some(old) if old != v => return Err(FemError::ConflictingConstraint { node: dof / 2 }),
                    _ => fixed[dof] = Some(v),
                }
            }
            let mut eq = vec![usize::MAX; ndof];
            let mut n = 0;
            for &node in &order {
                for c in 0..2 {
                    if fixed[2 * node + c].is_none() {
                        eq[2 * node + c] = n;
                        n += 1;
                    }
                }
            }
            let mut pairs = Vec::with_capacity(elements.len() * 21);
            for el in &elements {
                let d = element_dofs(el);
                for &(i, j) in &LOCAL_PAIRS {
                    let (a, b) = (eq[d[i]], eq[d[j]]);
                    if a != usize::MAX && b != usize::MAX {
                        pairs.push((a, b));
                    }
                }
            }
            let pattern = UpperPattern::from_pairs(n, pairs);
            let scatter = elements
                .iter()
                .map(|el| {
                    let d = element_dofs(el);
                    let mut s = [usize::MAX; 21];
                    for (k, &(i, j)) in LOCAL_PAIRS.iter().enumerate() {
                        let (a, b) = (eq[d[i]], eq[d[j]]);
                        if a != usize::MAX && b != usize::MAX {
                            s[k] = pattern.position(a, b).expect("pattern covers element pairs");
                        }
                    }
                    s
                })
                .collect();
            cases.push(CaseSystem { fixed, eq, symbolic: LdlSymbolic::new(pattern), scatter });
        }
        let centroids = PointGrid::new(mesh.centroids(), 1.0);
        Ok(Self { mesh, nu, centroids, elements, cases })
    }

    pub fn case_count(&self) -> usize {
        self.cases.len()
    }

    pub fn element_count(&self) -> usize {
        self.elements.len()
    }

    pub fn centroids(&self) -> &PointGrid {
        &self.centroids
    }

    /// Modulus sampled at element centroids.
    pub fn modulus_field(&self, layout: &FiberLayout, params: &MaterialParams) -> ModulusField {
        ModulusField::evaluate(&self.centroids, layout, params)
    }

    /// Solves load case `case` with per-element moduli in GPa·mm.
    pub fn solve_case(&self, case: usize, modulus: &[f64]) -> Result<SolveResult, FemError> {
        let sys = self.cases.get(case).ok_or(FemError::BadCase(case))?;
        if modulus.len() != self.elements.len() {
            return Err(FemError::ModulusLength { got: modulus.len(), want: self.elements.len() });
        }
        let n = sys.symbolic.n();
        let mut values = vec![0.0; sys.symbolic.pattern().nnz()];
        let mut rhs = vec![0.0; n];
        for ((el, scatter), &e) in self.elements.iter().zip(&sys.scatter).zip(modulus) {
            for (k, &(i, j)) in LOCAL_PAIRS.iter().enumerate() {
                if scatter[k] != usize::MAX {
                    values[scatter[k]] += e * el.ke[i][j];
                }
            }
            let d = element_dofs(el);
            for i in 0..6 {
                let ei = sys.eq[d[i]];
                if ei == usize::MAX {
                    continue;
                }
                for j in 0..6 {
                    if let Some(g) = sys.fixed[d[j]] {
                        rhs[ei] -= e * el.ke[i][j] * g;
                    }
                }
            }
        }
        let factor: LdlFactor = sys.symbolic.factor(&values).map_err(FemError::Singular)?;
        let mut x = rhs.clone();
        factor.solve_in_place(&mut x);
        let pattern = sys.symbolic.pattern();
        let rhs_norm = norm(&rhs);
        let mut residual = relative_residual(pattern, &values, &x, &rhs, rhs_norm);
        if residual > RESIDUAL_TOL {
            // one round of iterative refinement
            let ax = pattern.sym_mul(&values, &x);
            let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
            factor.solve_in_place(&mut r);
            for (xi, ri) in x.iter_mut().zip(&r) {
                *xi += ri;
            }
            residual = relative_residual(pattern, &values, &x, &rhs, rhs_norm);
            if residual > RESIDUAL_TOL {
                return Err(FemError::NotConverged(residual));
            }
        }
        let u_dof = |dof: usize| sys.fixed[dof].unwrap_or_else(|| x[sys.eq[dof]]);
        let displacement: Vec<Point2> =
            (0..self.mesh.nodes.len()).map(|k| Point2::new(u_dof(2 * k), u_dof(2 * k + 1))).collect();
        let mut energy = 0.0;
        let mut sens = Vec::with_capacity(self.elements.len());
        let mut stress = Vec::with_capacity(self.elements.len());
        for (el, &e) in self.elements.iter().zip(modulus) {
            let ue = element_dofs(el).map(|d| if d % 2 == 0 { displacement[d / 2].x } else { displacement[d / 2].y });
            let mut psi = 0.0;
            for i in 0..6 {
                let ki: f64 = (0..6).map(|j| el.ke[i][j] * ue[j]).sum();
                psi += ue[i] * ki;
            }
            psi *= 0.5;
            sens.push(psi);
            energy += e * psi;
            let s: [f64; 3] = std::array::from_fn(|r| e * GPA_MM * (0..6).map(|c| el.db[r][c] * ue[c]).sum::<f64>());
            stress.push(StressTensor2::new(s[0], s[1], s[2]));
        }
        Ok(SolveResult {
            displacement,
            strain_energy: energy,
            element_stress: stress,
            energy_sensitivity: sens,
            residual,
        })
    }

    /// Solves every load case for `layout`.
    pub fn solve_layout(
        &self,
        layout: &FiberLayout,
        params: &MaterialParams,
    ) -> Result<(ModulusField, Vec<SolveResult>), FemError> {
        let field = self.modulus_field(layout, params);
        let results =
            (0..self.cases.len()).map(|c| self.solve_case(c, &field.modulus)).collect::<Result<Vec<_>, _>>()?;
        Ok((field, results))
    }
}

fn element_dofs(el: &Element) -> [usize; 6] {
    let t = el.nodes;
    [2 * t[0], 2 * t[0] + 1, 2 * t[1], 2 * t[1] + 1, 2 * t[2], 2 * t[2] + 1]
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn relative_residual(p: &UpperPattern, values: &[f64], x: &[f64], b: &[f64], b_norm: f64) -> f64 {
    let ax = p.sym_mul(values, x);
    let r: f64 = ax.iter().zip(b).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    if b_norm > 0.0 {
        r / b_norm
    } else {
        r
    }
}

/// Maps a load case to `(dof, value)` constraints on the mesh nodes of each tag.
pub fn resolve_constraints(mesh: &Mesh, domain: &Domain, load: &LoadCase) -> Result<Vec<(usize, f64)>, FemError> {
    let mut out: BTreeMap<usize, f64> = BTreeMap::new();
    for bc in &load.dirichlet {
        let nodes = mesh.tagged_nodes(domain, &bc.tag).ok_or_else(|| FemError::UnknownTag(bc.tag.clone()))?;
        if nodes.is_empty() {
            return Err(FemError::EmptyTag(bc.tag.clone()));
        }
        for n in nodes {
            for &c in bc.mask.components() {
                let v = bc.displacement[c];
                if let Some(&old) = out.get(&(2 * n + c)) {
                    if old != v {
                        return Err(FemError::ConflictingConstraint { node: n });
                    }
                }
                out.insert(2 * n + c, v);
            }
        }
    }
    if out.is_empty() {
        return Err(FemError::Unconstrained);
    }
    Ok(out.into_iter().collect())
}

/// One-shot solve of a single load case.
pub fn solve(
    mesh: &Mesh,
    domain: &Domain,
    layout: &FiberLayout,
    params: &MaterialParams,
    load: &LoadCase,
) -> Result<SolveResult, FemError> {
    let model = FemModel::new(mesh.clone(), domain, params.nu, std::slice::from_ref(load))?;
    let field = model.modulus_field(layout, params);
    model.solve_case(0, &field.modulus)
}

/// Stress carried by the plastic at an element, `σ E_p α_p / (E_p α_p + E_f α_f)`.
pub fn plastic_stress(
    result: &SolveResult,
    field: &ModulusField,
    params: &MaterialParams,
    element: usize,
) -> StressTensor2 {
    result.element_stress[element].scaled(params.plastic_fraction(field.alpha_fiber[element]))
}

/// `σ_plastic` for every element.
pub fn plastic_stress_field(result: &SolveResult, field: &ModulusField, params: &MaterialParams) -> Vec<StressTensor2> {
    (0..result.element_stress.len()).map(|e| plastic_stress(result, field, params, e)).collect()
}

/// `dU/dθ` over the flattened vertex coordinates of `layout`.
///
/// With only prescribed displacements and no loads, the adjoint solution equals the forward one
/// and the sensitivity reduces to `½ uᵀ (∂K/∂θ) u = Σ_e ψ_e ∂E_e/∂θ`.
pub fn stiffness_sensitivity(
    field: &ModulusField,
    layout: &FiberLayout,
    params: &MaterialParams,
    result: &SolveResult,
) -> Vec<f64> {
    let mut g = vec![0.0; 2 * layout.vertex_count()];
    field.accumulate_gradient(&result.energy_sensitivity, layout, params, &mut g);
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_domain, mesh, Primitive, ShapeSpec};
    use crate::material::FiberPath;

    fn square(side: f64) -> Domain {
        build_domain(&ShapeSpec {
            outer: Primitive::Rect { origin: [0.0, 0.0], width: side, height: side, corner_radius: 0.0 },
            holes: vec![],
            tags: Default::default(),
        })
        .unwrap()
    }

    #[test]
    fn constitutive_examples() {
        let d = constitutive_matrix(1.0, 0.3);
        assert!((d[0][0] - 1.0989010989010988).abs() < 1e-15);
        assert!((d[0][1] - 0.32967032967032966).abs() < 1e-15);
        assert!((d[2][2] - 0.38461538461538464).abs() < 1e-15);
        assert_eq!(d[0][1], d[1][0]);
        let d0 = constitutive_matrix(2.0, 0.0);
        assert_eq!(d0, [[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.0]]);
        // SPD: leading minors positive
        assert!(d[0][0] > 0.0 && d[0][0] * d[1][1] - d[0][1] * d[1][0] > 0.0 && d[2][2] > 0.0);
    }

    /// Affine field u = A x + c imposed on all boundary nodes.
    fn patch_constraints(m: &Mesh, a: [[f64; 2]; 2], c: [f64; 2]) -> Vec<(usize, f64)> {
        let mut nodes: Vec<usize> = m.boundary_edges.iter().flat_map(|e| e.nodes).collect();
        nodes.sort_unstable();
        nodes.dedup();
        nodes
            .into_iter()
            .flat_map(|n| {
                let p = m.nodes[n];
                (0..2).map(move |k| (2 * n + k, a[k][0] * p.x + a[k][1] * p.y + c[k]))
            })
            .collect()
    }

    #[test]
    fn patch_test_reproduces_constant_strain() {
        let d = square(10.0);
        let m = mesh(&d, 1.5).unwrap();
        let a = [[1e-3, 4e-4], [-2e-4, -5e-4]];
        let cons = patch_constraints(&m, a, [0.1, -0.2]);
        let model = FemModel::with_constraints(m.clone(), 0.3, vec![cons]).unwrap();
        let e = 0.8;
        let r = model.solve_case(0, &vec![e; m.triangles.len()]).unwrap();
        for (k, p) in m.nodes.iter().enumerate() {
            let want = Point2::new(a[0][0] * p.x + a[0][1] * p.y + 0.1, a[1][0] * p.x + a[1][1] * p.y - 0.2);
            assert!((r.displacement[k] - want).norm() < 1e-12);
        }
        let eps = [a[0][0], a[1][1], a[0][1] + a[1][0]];
        let dm = constitutive_matrix(e * GPA_MM, 0.3);
        let sig: Vec<f64> = (0..3).map(|i| (0..3).map(|j| dm[i][j] * eps[j]).sum()).collect();
        let exact = 0.5 * 100.0 * (0..3).map(|i| sig[i] * eps[i]).sum::<f64>();
        assert!((r.strain_energy - exact).abs() <= 1e-8 * exact, "{} vs {exact}", r.strain_energy);
        for s in &r.element_stress {
            assert!((s.s11 - sig[0]).abs() < 1e-9 && (s.s22 - sig[1]).abs() < 1e-9 && (s.s12 - sig[2]).abs() < 1e-9);
        }
        assert!(r.residual <= RESIDUAL_TOL);
    }

    #[test]
    fn unconstrained_is_error() {
        let m = mesh(&square(4.0), 2.0).unwrap();
        assert_eq!(FemModel::with_constraints(m.clone(), 0.3, vec![vec![]]).unwrap_err(), FemError::Unconstrained);
        // a single pinned node leaves rotation free
        let model = FemModel::with_constraints(m.clone(), 0.3, vec![vec![(0, 0.0), (1, 0.0)]]).unwrap();
        assert!(matches!(model.solve_case(0, &vec![1.0; m.triangles.len()]), Err(FemError::Singular(_))));
    }

    #[test]
    fn plastic_fraction_examples() {
        let mp = MaterialParams::default();
        assert_eq!(mp.plastic_fraction(0.0), 1.0);
        // E_p (h_o - a) = E_f a
        let a = mp.e_plastic * mp.h_object / (mp.e_fiber + mp.e_plastic);
        assert!((mp.plastic_fraction(a) - 0.5).abs() < 1e-12);
        for k in 0..50 {
            let f = mp.plastic_fraction(k as f64 * 0.05);
            assert!(f > 0.0 && f <= 1.0);
        }
    }

    #[test]
    fn sensitivity_matches_finite_differences_on_square() {
        let mut spec = ShapeSpec {
            outer: Primitive::Rect { origin: [0.0, 0.0], width: 12.0, height: 8.0, corner_radius: 0.0 },
            holes: vec![],
            tags: Default::default(),
        };
        spec.tags.insert("left".into(), vec![crate::geometry::BoundaryRef { loop_index: 0, side: "left".into() }]);
        spec.tags.insert("right".into(), vec![crate::geometry::BoundaryRef { loop_index: 0, side: "right".into() }]);
        let d = build_domain(&spec).unwrap();
        let m = mesh(&d, 0.8).unwrap();
        let load = LoadCase {
            name: String::new(),
            dirichlet: vec![
                DirichletBc { tag: "left".into(), displacement: [-0.5, 0.0], mask: ComponentMask::Both },
                DirichletBc { tag: "right".into(), displacement: [0.5, 0.0], mask: ComponentMask::Both },
            ],
        };
        let mp = MaterialParams::default();
        let model = FemModel::new(m, &d, mp.nu, &[load]).unwrap();
        let layout = FiberLayout::new(vec![FiberPath::new(vec![
            Point2::new(2.0, 3.0),
            Point2::new(5.0, 4.1),
            Point2::new(8.3, 3.7),
            Point2::new(10.0, 5.2),
        ])]);
        let energy = |l: &FiberLayout| model.solve_case(0, &model.modulus_field(l, &mp).modulus).unwrap().strain_energy;
        let (field, res) = model.solve_layout(&layout, &mp).unwrap();
        let g = stiffness_sensitivity(&field, &layout, &mp, &res[0]);
        let flat = layout.to_flat();
        let h = 1e-4;
        let scale = g.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        for i in 0..flat.len() {
            let mut p = flat.clone();
            p[i] += h;
            let mut q = flat.clone();
            q[i] -= h;
            let fd = (energy(&layout.with_flat(&p)) - energy(&layout.with_flat(&q))) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-4 * g[i].abs().max(1e-3 * scale), "{i}: fd {fd} adj {}", g[i]);
        }
    }
}
