//! A part, its material, the load cases it must carry, and the meshes it is analysed on.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::fem::{ComponentMask, DirichletBc, FemError, FemModel, LoadCase};
use crate::geometry::{build_domain, mesh, BoundaryRef, Domain, GeometryError, Primitive, ShapeSpec};
use crate::material::{MaterialError, MaterialParams};
use crate::objective::ObjectiveWeights;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Material(#[from] MaterialError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error("scenario has no load cases")]
    NoLoadCases,
    #[error("invalid mesh configuration: {0}")]
    Mesh(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeshConfig {
    /// Target element edge for the optimization mesh, mm.
    pub target_edge: f64,
    /// Optional coarser mesh used only by the subsequence search.
    pub subsequence_edge: Option<f64>,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self { target_edge: 0.4, subsequence_edge: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    pub shape: ShapeSpec,
    #[serde(default)]
    pub material: MaterialParams,
    pub load_cases: Vec<LoadCase>,
    #[serde(default)]
    pub weights: ObjectiveWeights,
    #[serde(default)]
    pub mesh: MeshConfig,
}

/// A validated scenario with its FEM models ready to solve.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub domain: Domain,
    pub model: FemModel,
    subsequence_model: Option<FemModel>,
}

impl Scenario {
    pub fn new(spec: ScenarioSpec) -> Result<Self, ScenarioError> {
        spec.material.validate()?;
        if spec.load_cases.is_empty() {
            return Err(ScenarioError::NoLoadCases);
        }
        let edge_ok = |e: f64| e > 0.0 && e.is_finite();
        if !edge_ok(spec.mesh.target_edge) || spec.mesh.subsequence_edge.is_some_and(|e| !edge_ok(e)) {
            return Err(ScenarioError::Mesh(format!("{:?}", spec.mesh)));
        }
        let w = &spec.weights;
        if [w.w_lap, w.w_min_l, w.w_bdy].iter().any(|v| !(*v >= 0.0)) {
            return Err(ScenarioError::Mesh("objective weights must be non-negative".into()));
        }
        let domain = build_domain(&spec.shape)?;
        let model = FemModel::new(mesh(&domain, spec.mesh.target_edge)?, &domain, spec.material.nu, &spec.load_cases)?;
        let subsequence_model = match spec.mesh.subsequence_edge {
            Some(e) if e != spec.mesh.target_edge => {
                Some(FemModel::new(mesh(&domain, e)?, &domain, spec.material.nu, &spec.load_cases)?)
            }
            _ => None,
        };
        Ok(Self { spec, domain, model, subsequence_model })
    }

    pub fn material(&self) -> &MaterialParams {
        &self.spec.material
    }

    pub fn weights(&self) -> &ObjectiveWeights {
        &self.spec.weights
    }

    /// Model used by the subsequence search (the coarse one when configured).
    pub fn subsequence_model(&self) -> &FemModel {
        self.subsequence_model.as_ref().unwrap_or(&self.model)
    }

    /// Same scenario with different objective weights, reusing the meshes.
    pub fn with_weights(&self, weights: ObjectiveWeights) -> Self {
        let mut s = self.clone();
        s.spec.weights = weights;
        s
    }
}

fn pull(tag: &str, dx: f64) -> DirichletBc {
    DirichletBc { tag: tag.into(), displacement: [dx, 0.0], mask: ComponentMask::Both }
}

fn tension(left: &str, right: &str) -> LoadCase {
    LoadCase { name: format!("{left}-{right}"), dirichlet: vec![pull(left, -0.5), pull(right, 0.5)] }
}

fn tags(entries: &[(&str, usize, &str)]) -> BTreeMap<String, Vec<BoundaryRef>> {
    entries
        .iter()
        .map(|&(name, l, side)| (name.to_string(), vec![BoundaryRef { loop_index: l, side: side.into() }]))
        .collect()
}

fn trapezoid(cx: f64, cy: f64, facing_deg: f64) -> Primitive {
    Primitive::Trapezoid {
        center: [cx, cy],
        short_side: 11.0,
        long_side: 14.0,
        height: 11.0,
        facing_deg,
        corner_radius: 1.0,
    }
}

fn spec(name: &str, shape: ShapeSpec, load_cases: Vec<LoadCase>) -> ScenarioSpec {
    ScenarioSpec {
        name: name.into(),
        shape,
        material: MaterialParams::default(),
        load_cases,
        weights: ObjectiveWeights::default(),
        mesh: MeshConfig::default(),
    }
}

/// 45×30 mm rectangle pulled apart at its short sides.
pub fn rectangle() -> ScenarioSpec {
    spec(
        "rectangle",
        ShapeSpec {
            outer: Primitive::Rect { origin: [0.0, 0.0], width: 45.0, height: 30.0, corner_radius: 0.0 },
            holes: vec![],
            tags: tags(&[("left", 0, "left"), ("right", 0, "right")]),
        },
        vec![tension("left", "right")],
    )
}

/// Plus shape with 15 mm edges, pulled apart at the ends of its horizontal arms.
pub fn plus() -> ScenarioSpec {
    let v = [
        [15.0, 0.0],
        [30.0, 0.0],
        [30.0, 15.0],
        [45.0, 15.0],
        [45.0, 30.0],
        [30.0, 30.0],
        [30.0, 45.0],
        [15.0, 45.0],
        [15.0, 30.0],
        [0.0, 30.0],
        [0.0, 15.0],
        [15.0, 15.0],
    ];
    spec(
        "plus",
        ShapeSpec {
            outer: Primitive::Polygon { vertices: v.to_vec(), corner_radius: 0.0 },
            holes: vec![],
            tags: tags(&[("left", 0, "e9"), ("right", 0, "e3")]),
        },
        vec![tension("left", "right")],
    )
}

/// 46×30 mm plate with two rounded trapezoid holes, pulled apart at the holes' short sides.
pub fn two_hole() -> ScenarioSpec {
    spec(
        "two_hole",
        ShapeSpec {
            outer: Primitive::Rect { origin: [0.0, 0.0], width: 46.0, height: 30.0, corner_radius: 0.0 },
            holes: vec![trapezoid(10.5, 15.0, 180.0), trapezoid(35.5, 15.0, 0.0)],
            tags: tags(&[("left_hole_short_side", 1, "short"), ("right_hole_short_side", 2, "short")]),
        },
        vec![tension("left_hole_short_side", "right_hole_short_side")],
    )
}

/// 84×28 mm plate with four trapezoid holes; each load case pulls one of the two left holes
/// against one of the two right holes.
pub fn four_hole() -> ScenarioSpec {
    let xs = [16.8, 33.6, 50.4, 67.2];
    let holes = xs.iter().enumerate().map(|(k, &x)| trapezoid(x, 14.0, if k < 2 { 180.0 } else { 0.0 })).collect();
    let names: Vec<String> = (1..=4).map(|k| format!("hole{k}_short_side")).collect();
    let t: Vec<(&str, usize, &str)> = names.iter().enumerate().map(|(k, n)| (n.as_str(), k + 1, "short")).collect();
    let cases = [(0, 2), (0, 3), (1, 2), (1, 3)].iter().map(|&(a, b)| tension(&names[a], &names[b])).collect();
    spec(
        "four_hole",
        ShapeSpec {
            outer: Primitive::Rect { origin: [0.0, 0.0], width: 84.0, height: 28.0, corner_radius: 0.0 },
            holes,
            tags: tags(&t),
        },
        cases,
    )
}

/// Built-in scenario by name.
pub fn preset(name: &str) -> Option<ScenarioSpec> {
    match name {
        "rectangle" => Some(rectangle()),
        "plus" => Some(plus()),
        "two_hole" => Some(two_hole()),
        "four_hole" => Some(four_hole()),
        _ => None,
    }
}

pub const PRESETS: [&str; 4] = ["rectangle", "plus", "two_hole", "four_hole"];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_build_and_conserve_area() {
        for name in PRESETS {
            let mut s = preset(name).unwrap();
            s.mesh.target_edge = 1.0;
            let sc = Scenario::new(s).unwrap();
            let m = &sc.model.mesh;
            let rel = (m.total_area() - sc.domain.area()).abs() / sc.domain.area();
            assert!(rel < 1e-6, "{name}: {rel}");
            assert_eq!(sc.model.case_count(), sc.spec.load_cases.len());
        }
    }

    #[test]
    fn json_round_trip_and_unknown_keys() {
        let s = four_hole();
        let text = serde_json::to_string(&s).unwrap();
        let back: ScenarioSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
        let bad = text.replacen("\"name\"", "\"bogus\":1,\"name\"", 1);
        assert!(serde_json::from_str::<ScenarioSpec>(&bad).is_err());
    }
}
