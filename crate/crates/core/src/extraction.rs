//! Greedy fiber extraction: walk along the plastic's principal stress directions from weighted
//! random starts, downsample, and keep the best subsequence.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::fem::{plastic_stress_field, FemError, SolveResult, StressTensor2};
use crate::geometry::{signed_distance, Domain, Mesh, Point2, PointLocator};
use crate::material::{FiberLayout, FiberPath, ModulusField};
use crate::objective::{best_subsequence, ObjectiveBreakdown};
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WalkConfig {
    pub step: f64,
    pub clearance: f64,
    pub max_retries: usize,
    /// Retry rotations are drawn uniformly from `[-rotation_range, rotation_range]`, radians.
    pub rotation_range: f64,
    pub max_length: f64,
    pub restarts: usize,
    pub downsample_keep: usize,
    pub rng_seed: u64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        Self {
            step: 0.5,
            clearance: 1.3,
            max_retries: 19,
            rotation_range: std::f64::consts::PI / 12.0,
            max_length: 400.0,
            restarts: 10,
            downsample_keep: 20,
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExtractionError {
    #[error("no element is far enough from the boundary to start a walk")]
    NoAdmissibleStart,
    #[error("every walk produced fewer than two vertices")]
    AllCandidatesDegenerate,
    #[error(transparent)]
    Fem(#[from] FemError),
}

/// Seed of child stream `stream` of `seed`: `splitmix64(seed ^ splitmix64(stream + 1))`.
pub fn child_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream.wrapping_add(1)))
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Signed eigenvalue of largest magnitude (ties toward tension) and the walk direction: its
/// eigenvector under tension, the perpendicular under compression.
pub fn principal(st: &StressTensor2) -> (f64, Point2) {
    let m = 0.5 * (st.s11 + st.s22);
    let r = (0.25 * (st.s11 - st.s22).powi(2) + st.s12 * st.s12).sqrt();
    let (hi, lo) = (m + r, m - r);
    let lambda = if hi.abs() >= lo.abs() { hi } else { lo };
    // the major eigenvector is also the perpendicular of the minor one
    let theta = 0.5 * (2.0 * st.s12).atan2(st.s11 - st.s22);
    (lambda, Point2::new(theta.cos(), theta.sin()))
}

/// `|λ| · area` per element, zero where the centroid is closer than `clearance` to the boundary.
/// When every weight vanishes the admissible elements are weighted by area alone.
pub fn sampling_weights(stress: &[StressTensor2], mesh: &Mesh, domain: &Domain, clearance: f64) -> Vec<f64> {
    let admissible: Vec<bool> =
        (0..mesh.triangles.len()).map(|e| signed_distance(domain, mesh.centroid(e)) >= clearance).collect();
    let w: Vec<f64> = (0..mesh.triangles.len())
        .map(|e| if admissible[e] { principal(&stress[e]).0.abs() * mesh.area(e) } else { 0.0 })
        .collect();
    if w.iter().any(|&v| v > 0.0) {
        return w;
    }
    (0..mesh.triangles.len()).map(|e| if admissible[e] { mesh.area(e) } else { 0.0 }).collect()
}

/// Draws an element index by weight; `None` if all weights are zero.
pub fn sample_element(weights: &[f64], rng: &mut impl Rng) -> Option<usize> {
    WeightedIndex::new(weights).ok().map(|d| d.sample(rng))
}

/// Unsigned walk direction at a point; `None` stops the walk.
pub trait DirectionField {
    fn direction(&self, p: Point2) -> Option<Point2>;
}

/// Principal directions of a per-element stress field, constant on each element.
pub struct StressDirections<'a> {
    mesh: &'a Mesh,
    locator: PointLocator,
    stress: &'a [StressTensor2],
}

impl<'a> StressDirections<'a> {
    pub fn new(mesh: &'a Mesh, stress: &'a [StressTensor2]) -> Self {
        Self { mesh, locator: PointLocator::new(mesh), stress }
    }
}

impl DirectionField for StressDirections<'_> {
    fn direction(&self, p: Point2) -> Option<Point2> {
        self.locator.locate(self.mesh, p).map(|e| principal(&self.stress[e]).1)
    }
}

impl<F: Fn(Point2) -> Option<Point2>> DirectionField for F {
    fn direction(&self, p: Point2) -> Option<Point2> {
        self(p)
    }
}

struct Side {
    pos: Point2,
    dir: Point2,
    alive: bool,
}

/// Grows a path from `start` in both directions, alternating one step per side.
pub fn walk(
    field: &dyn DirectionField,
    domain: &Domain,
    cfg: &WalkConfig,
    start: Point2,
    rng: &mut impl Rng,
) -> FiberPath {
    let Some(d0) = field.direction(start) else { return FiberPath::new(vec![start]) };
    let mut sides = [Side { pos: start, dir: d0, alive: true }, Side { pos: start, dir: -d0, alive: true }];
    let mut fwd = vec![start];
    let mut bwd: Vec<Point2> = Vec::new();
    let mut length = 0.0;
    while sides.iter().any(|s| s.alive) {
        for (k, side) in sides.iter_mut().enumerate() {
            if !side.alive {
                continue;
            }
            if length + cfg.step > cfg.max_length + 1e-9 {
                side.alive = false;
                continue;
            }
            match step(field, domain, cfg, side, rng) {
                Some((p, d)) => {
                    side.pos = p;
                    side.dir = d;
                    length += cfg.step;
                    if k == 0 {
                        fwd.push(p)
                    } else {
                        bwd.push(p)
                    }
                }
                None => side.alive = false,
            }
        }
    }
    bwd.reverse();
    bwd.extend(fwd);
    FiberPath::new(bwd)
}

fn step(
    field: &dyn DirectionField,
    domain: &Domain,
    cfg: &WalkConfig,
    side: &Side,
    rng: &mut impl Rng,
) -> Option<(Point2, Point2)> {
    let raw = field.direction(side.pos)?;
    let nominal = if raw.dot(side.dir) >= 0.0 { raw } else { -raw };
    for attempt in 0..=cfg.max_retries {
        let d = if attempt == 0 {
            nominal
        } else {
            nominal.rotated(rng.random_range(-cfg.rotation_range..=cfg.rotation_range))
        };
        if d.dot(side.dir) <= 0.0 {
            continue;
        }
        let p = side.pos + d * cfg.step;
        if signed_distance(domain, p) >= cfg.clearance {
            return Some((p, d));
        }
    }
    None
}

/// Keeps vertices `0, keep, 2 keep, ...` plus the last one.
pub fn downsample(path: &FiberPath, keep: usize) -> FiberPath {
    let v = &path.vertices;
    if v.is_empty() || keep <= 1 {
        return path.clone();
    }
    let mut out: Vec<Point2> = v.iter().step_by(keep).copied().collect();
    if !(v.len() - 1).is_multiple_of(keep) {
        out.push(*v.last().unwrap());
    }
    FiberPath::new(out)
}

/// Plastic stress state of a layout, averaged over load cases.
#[derive(Debug, Clone)]
pub struct StressState {
    pub field: ModulusField,
    pub results: Vec<SolveResult>,
    pub plastic: Vec<StressTensor2>,
}

impl StressState {
    pub fn solve(scenario: &Scenario, layout: &FiberLayout) -> Result<Self, FemError> {
        let params = scenario.material();
        let (field, results) = scenario.model.solve_layout(layout, params)?;
        let n = scenario.model.element_count();
        let mut plastic = vec![StressTensor2::default(); n];
        let k = 1.0 / results.len() as f64;
        for r in &results {
            for (acc, s) in plastic.iter_mut().zip(plastic_stress_field(r, &field, params)) {
                acc.s11 += k * s.s11;
                acc.s22 += k * s.s22;
                acc.s12 += k * s.s12;
            }
        }
        Ok(Self { field, results, plastic })
    }

    pub fn energies(&self) -> Vec<f64> {
        self.results.iter().map(|r| r.strain_energy).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Candidate {
    /// Selected subsequence of the downsampled walk.
    pub path: FiberPath,
    pub raw: FiberPath,
    pub downsampled: FiberPath,
    pub objective: ObjectiveBreakdown,
    pub restart: usize,
}

/// Runs `cfg.restarts` walks through `directions`, starting from elements drawn by the plastic
/// stress weights, and returns the candidate whose best subsequence scores lowest when appended
/// to `layout`. Ties go to the earlier restart.
pub fn extract_with(
    scenario: &Scenario,
    layout: &FiberLayout,
    state: &StressState,
    directions: &dyn DirectionField,
    cfg: &WalkConfig,
) -> Result<Candidate, ExtractionError> {
    let mesh = &scenario.model.mesh;
    let weights = sampling_weights(&state.plastic, mesh, &scenario.domain, cfg.clearance);
    if !weights.iter().any(|&w| w > 0.0) {
        return Err(ExtractionError::NoAdmissibleStart);
    }
    let mut best: Option<Candidate> = None;
    for r in 0..cfg.restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(child_seed(cfg.rng_seed, r as u64));
        let e = sample_element(&weights, &mut rng).ok_or(ExtractionError::NoAdmissibleStart)?;
        let raw = walk(directions, &scenario.domain, cfg, mesh.centroid(e), &mut rng);
        if raw.len() < 2 {
            continue;
        }
        let downsampled = downsample(&raw, cfg.downsample_keep);
        let mut trial = layout.clone();
        trial.paths.push(downsampled.clone());
        let sub = best_subsequence(&trial, trial.paths.len() - 1, scenario)?;
        log::debug!("restart {r}: {} raw vertices, objective {:.4}", raw.len(), sub.objective.total);
        if best.as_ref().is_none_or(|b| sub.objective.total < b.objective.total) {
            best = Some(Candidate { path: sub.path, raw, downsampled, objective: sub.objective, restart: r });
        }
    }
    best.ok_or(ExtractionError::AllCandidatesDegenerate)
}

/// Solves the current layout and extracts one new path along its plastic principal directions.
pub fn extract_candidate(
    scenario: &Scenario,
    layout: &FiberLayout,
    cfg: &WalkConfig,
) -> Result<Candidate, ExtractionError> {
    let state = StressState::solve(scenario, layout)?;
    let dirs = StressDirections::new(&scenario.model.mesh, &state.plastic);
    extract_with(scenario, layout, &state, &dirs, cfg)
}
