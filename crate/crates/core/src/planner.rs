//! Full pipeline: extract a path, optimize all paths, repeat; then refine by upsampling.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::extraction::{child_seed, extract_candidate, Candidate, ExtractionError, WalkConfig};
use crate::fem::FemError;
use crate::geometry::Point2;
use crate::material::{FiberLayout, FiberPath};
use crate::objective::{
    best_subsequence, evaluate, gradient, length_budget_penalty, mean_squared_laplacian, ObjectiveWeights,
};
use crate::optim::{minimize, BfgsConfig, Termination};
use crate::scenario::Scenario;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanConfig {
    pub n_paths: usize,
    /// Iteration cap for the optimization after each extracted path.
    pub max_iterations: usize,
    /// Iteration cap for the optimization after each upsampling round.
    pub upsample_max_iterations: usize,
    pub gradient_tolerance: f64,
    pub upsample_rounds: usize,
    pub walk: WalkConfig,
    pub rng_seed: u64,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            n_paths: 1,
            max_iterations: 500,
            upsample_max_iterations: 100,
            gradient_tolerance: 3e-9,
            upsample_rounds: 1,
            walk: WalkConfig::default(),
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlanError {
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Extraction(#[from] ExtractionError),
    #[error("cannot optimize an empty layout")]
    EmptyLayout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Stage {
    /// Optimization after extracting path `index`.
    Extract { index: usize },
    /// Optimization after upsampling round `round`.
    Upsample { round: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundReport {
    pub stage: Stage,
    /// Objective after each accepted optimizer step, starting value first.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub termination: Option<Termination>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanReport {
    pub layout: FiberLayout,
    /// Layout right after each extraction, before optimizing.
    pub pre_optimization: Vec<FiberLayout>,
    /// Per-path length budget: the extracted length of each path, mm.
    pub length_budgets: Vec<f64>,
    pub rounds: Vec<RoundReport>,
    /// Strain energy per load case at the prescribed displacement, N·mm.
    pub energies: Vec<f64>,
    pub mean_energy: f64,
    /// `2 ×` mean energy: stiffness in N/mm at 1 mm relative displacement.
    pub stiffness: f64,
    pub fiber_length: f64,
    pub wall_time_s: f64,
    pub extraction_time_s: f64,
    pub optimization_time_s: f64,
    pub warnings: Vec<String>,
}

impl PlanReport {
    pub fn line_search_failed(&self) -> bool {
        self.rounds.iter().any(|r| r.termination == Some(Termination::LineSearchFailed))
    }
}

#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    pub layout: FiberLayout,
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
}

/// Shortens a path to `budget` mm by cutting the excess equally from both ends.
pub fn trim_to_length(path: &FiberPath, budget: f64) -> FiberPath {
    let excess = path.length() - budget;
    if excess <= 0.0 || path.len() < 2 {
        return path.clone();
    }
    let cut_front = |v: &[Point2], amount: f64| -> Vec<Point2> {
        let mut left = amount;
        for k in 0..v.len() - 1 {
            let seg = v[k].distance(v[k + 1]);
            if left < seg {
                let mut out = vec![v[k].lerp(v[k + 1], left / seg)];
                out.extend_from_slice(&v[k + 1..]);
                return out;
            }
            left -= seg;
        }
        vec![v[v.len() - 1]]
    };
    let mut v = cut_front(&path.vertices, 0.5 * excess);
    v.reverse();
    let mut v = cut_front(&v, 0.5 * excess);
    v.reverse();
    FiberPath::new(v)
}

/// BFGS over all vertex coordinates, with each path's length held near `budgets` by a hinge
/// penalty; overshoot is then trimmed and the best subsequence of each path taken in turn.
pub fn optimize_layout(
    layout: &FiberLayout,
    budgets: &[f64],
    scenario: &Scenario,
    max_iterations: usize,
    gradient_tolerance: f64,
) -> Result<OptimizeOutcome, PlanError> {
    if layout.is_empty() {
        return Err(PlanError::EmptyLayout);
    }
    assert_eq!(budgets.len(), layout.paths.len(), "one length budget per path");
    let w = scenario.weights().w_max_l;
    let cfg = BfgsConfig { max_iterations, gradient_tolerance, ..BfgsConfig::default() };
    let res = minimize(
        |x| {
            let trial = layout.with_flat(x);
            let (o, mut g) = gradient(&trial, scenario)?;
            let pen = length_budget_penalty(&trial, budgets, w, Some(&mut g));
            Ok::<_, FemError>((o.total + pen, g))
        },
        layout.to_flat(),
        &cfg,
    )?;
    if res.line_search_failed() {
        log::warn!("line search failed after {} iterations; keeping best iterate", res.iterations);
    }
    let mut out = layout.with_flat(&res.x);
    for (path, &b) in out.paths.iter_mut().zip(budgets) {
        *path = trim_to_length(path, b);
    }
    for i in 0..out.paths.len() {
        out.paths[i] = best_subsequence(&out, i, scenario)?.path;
    }
    Ok(OptimizeOutcome { layout: out, trace: res.trace, iterations: res.iterations, termination: res.termination })
}

/// Solves the tridiagonal system `a[i] x[i-1] + b[i] x[i] + c[i] x[i+1] = d[i]`.
fn thomas(a: &[f64], mut b: Vec<f64>, c: &[f64], mut d: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for i in 1..n {
        let w = a[i] / b[i - 1];
        b[i] -= w * c[i - 1];
        d[i] -= w * d[i - 1];
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1] / b[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = (d[i] - c[i] * x[i + 1]) / b[i];
    }
    x
}

/// Second derivatives of the not-a-knot cubic interpolant of `y` at knots with spacings `h`.
/// Needs at least four knots.
fn spline_moments(h: &[f64], y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let m = n - 2;
    let slope: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
    let mut a = vec![0.0; m];
    let mut b = vec![0.0; m];
    let mut c = vec![0.0; m];
    let mut d = vec![0.0; m];
    for k in 0..m {
        let i = k + 1;
        a[k] = h[i - 1];
        b[k] = 2.0 * (h[i - 1] + h[i]);
        c[k] = h[i];
        d[k] = 6.0 * (slope[i] - slope[i - 1]);
    }
    // M0 = ((h0 + h1) M1 - h0 M2) / h1, and symmetrically at the far end
    let (h0, h1) = (h[0], h[1]);
    b[0] += h0 * (h0 + h1) / h1;
    c[0] -= h0 * h0 / h1;
    let (ha, hb) = (h[n - 3], h[n - 2]);
    b[m - 1] += hb * (ha + hb) / ha;
    a[m - 1] -= hb * hb / ha;
    let inner = thomas(&a, b, &c, d);
    let mut out = Vec::with_capacity(n);
    out.push(((h0 + h1) * inner[0] - h0 * inner[1]) / h1);
    out.extend(&inner);
    out.push(((ha + hb) * inner[m - 1] - hb * inner[m - 2]) / ha);
    out
}

/// Interpolating cubic spline (chord-length parameter, not-a-knot ends) sampled at the original
/// vertices and every parameter midpoint: `n` vertices become `2n - 1`. Fewer than four vertices
/// (or any repeated vertex) are refined linearly.
pub fn upsample(path: &FiberPath) -> FiberPath {
    let v = &path.vertices;
    let n = v.len();
    if n < 2 {
        return path.clone();
    }
    let mut out = Vec::with_capacity(2 * n - 1);
    let h: Vec<f64> = v.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
    if n < 4 || h.iter().any(|&l| l < 1e-12) {
        for w in v.windows(2) {
            out.push(w[0]);
            out.push(w[0].lerp(w[1], 0.5));
        }
        out.push(v[n - 1]);
        return FiberPath::new(out);
    }
    let xs: Vec<f64> = v.iter().map(|p| p.x).collect();
    let ys: Vec<f64> = v.iter().map(|p| p.y).collect();
    let mx = spline_moments(&h, &xs);
    let my = spline_moments(&h, &ys);
    for i in 0..n - 1 {
        out.push(v[i]);
        let k = h[i] * h[i] / 16.0;
        out.push(Point2::new(
            0.5 * (xs[i] + xs[i + 1]) - k * (mx[i] + mx[i + 1]),
            0.5 * (ys[i] + ys[i + 1]) - k * (my[i] + my[i + 1]),
        ));
    }
    out.push(v[n - 1]);
    FiberPath::new(out)
}

/// Drops interior vertices closer than `fraction` of the mean segment length to the previous kept
/// vertex (or to the last vertex), so the spline never sees near-zero knot spacings.
pub fn merge_close_vertices(path: &FiberPath, fraction: f64) -> FiberPath {
    let v = &path.vertices;
    if v.len() < 3 {
        return path.clone();
    }
    let tol = fraction * path.length() / (v.len() - 1) as f64;
    let last = v[v.len() - 1];
    let mut out = vec![v[0]];
    for &p in &v[1..v.len() - 1] {
        if p.distance(*out.last().unwrap()) >= tol && p.distance(last) >= tol {
            out.push(p);
        }
    }
    out.push(last);
    FiberPath::new(out)
}

/// Fraction of the mean segment length below which vertices are merged before upsampling.
const MERGE_FRACTION: f64 = 0.2;

fn finish(
    scenario: &Scenario,
    layout: FiberLayout,
    pre_optimization: Vec<FiberLayout>,
    length_budgets: Vec<f64>,
    rounds: Vec<RoundReport>,
    times: (Instant, f64, f64),
    warnings: Vec<String>,
) -> Result<PlanReport, PlanError> {
    let obj = evaluate(&layout, scenario)?;
    let mean_energy = obj.mean_energy();
    Ok(PlanReport {
        fiber_length: layout.total_length(),
        layout,
        pre_optimization,
        length_budgets,
        rounds,
        energies: obj.energies,
        mean_energy,
        stiffness: 2.0 * mean_energy,
        wall_time_s: times.0.elapsed().as_secs_f64(),
        extraction_time_s: times.1,
        optimization_time_s: times.2,
        warnings,
    })
}

/// The plan loop with a custom extraction step; `optimize = false` skips every optimization and
/// all upsampling rounds.
pub fn run_with(
    scenario: &Scenario,
    cfg: &PlanConfig,
    optimize: bool,
    mut extract: impl FnMut(&FiberLayout, &WalkConfig) -> Result<Candidate, ExtractionError>,
) -> Result<PlanReport, PlanError> {
    let start = Instant::now();
    let (mut t_extract, mut t_opt) = (0.0, 0.0);
    let mut layout = FiberLayout::default();
    let mut budgets = Vec::new();
    let mut pre = Vec::new();
    let mut rounds = Vec::new();
    let mut warnings = Vec::new();
    for k in 0..cfg.n_paths {
        let walk = WalkConfig { rng_seed: child_seed(cfg.rng_seed, k as u64), ..cfg.walk };
        let t = Instant::now();
        let cand = match extract(&layout, &walk) {
            Ok(c) => c,
            Err(ExtractionError::Fem(e)) => return Err(e.into()),
            Err(e) => {
                log::warn!("extraction of path {k} failed: {e}");
                warnings.push(format!("extraction of path {k} failed: {e}"));
                break;
            }
        };
        t_extract += t.elapsed().as_secs_f64();
        log::info!("path {k}: extracted {} vertices (restart {})", cand.path.len(), cand.restart);
        budgets.push(cand.path.length());
        layout.paths.push(cand.path);
        pre.push(layout.clone());
        if optimize {
            let t = Instant::now();
            let o = optimize_layout(&layout, &budgets, scenario, cfg.max_iterations, cfg.gradient_tolerance)?;
            let dt = t.elapsed().as_secs_f64();
            t_opt += dt;
            record(&mut rounds, &mut warnings, Stage::Extract { index: k }, &o, dt);
            layout = o.layout;
        }
    }
    if optimize && !layout.is_empty() {
        for r in 0..cfg.upsample_rounds {
            let up = FiberLayout::new(
                layout.paths.iter().map(|p| upsample(&merge_close_vertices(p, MERGE_FRACTION))).collect(),
            );
            let t = Instant::now();
            let o = optimize_layout(&up, &budgets, scenario, cfg.upsample_max_iterations, cfg.gradient_tolerance)?;
            let dt = t.elapsed().as_secs_f64();
            t_opt += dt;
            record(&mut rounds, &mut warnings, Stage::Upsample { round: r }, &o, dt);
            layout = o.layout;
        }
    }
    finish(scenario, layout, pre, budgets, rounds, (start, t_extract, t_opt), warnings)
}

fn record(rounds: &mut Vec<RoundReport>, warnings: &mut Vec<String>, stage: Stage, o: &OptimizeOutcome, dt: f64) {
    log::info!(
        "{stage:?}: {} iterations, objective {:.4} -> {:.4} ({:?})",
        o.iterations,
        o.trace[0],
        o.trace.last().unwrap(),
        o.termination
    );
    if o.termination == Termination::LineSearchFailed {
        warnings.push(format!("{stage:?}: line search failed"));
    }
    rounds.push(RoundReport {
        stage,
        trace: o.trace.clone(),
        iterations: o.iterations,
        termination: Some(o.termination),
        wall_time_s: dt,
    });
}

/// Extract-and-optimize rounds followed by upsampling rounds.
pub fn plan(scenario: &Scenario, cfg: &PlanConfig) -> Result<PlanReport, PlanError> {
    run_with(scenario, cfg, true, |layout, walk| extract_candidate(scenario, layout, walk))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    NoLaplacian,
    SingleResolution,
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub report: PlanReport,
    /// Mean squared vertex Laplacian of the final layout.
    pub smoothness: f64,
}

/// Single-resolution settings: every other walk vertex kept, no upsampling, 400 iterations.
pub fn single_resolution_config(cfg: &PlanConfig) -> PlanConfig {
    PlanConfig {
        walk: WalkConfig { downsample_keep: 2, ..cfg.walk },
        upsample_rounds: 0,
        max_iterations: 400,
        ..cfg.clone()
    }
}

pub fn run_ablation(scenario: &Scenario, mode: AblationMode, cfg: &PlanConfig) -> Result<AblationReport, PlanError> {
    let report = match mode {
        AblationMode::NoLaplacian => {
            let w = ObjectiveWeights { w_lap: 0.0, ..*scenario.weights() };
            plan(&scenario.with_weights(w), cfg)?
        }
        AblationMode::SingleResolution => plan(scenario, &single_resolution_config(cfg))?,
    };
    let smoothness = mean_squared_laplacian(&report.layout);
    Ok(AblationReport { report, smoothness })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(x: f64, y: f64) -> Point2 {
        Point2::new(x, y)
    }

    #[test]
    fn trim_cuts_both_ends_equally() {
        let path = FiberPath::new(vec![p(0.0, 0.0), p(4.0, 0.0), p(10.0, 0.0)]);
        let t = trim_to_length(&path, 6.0);
        assert_eq!(t.vertices, vec![p(2.0, 0.0), p(4.0, 0.0), p(8.0, 0.0)]);
        let t = trim_to_length(&path, 1.0);
        assert_eq!(t.vertices, vec![p(4.5, 0.0), p(5.5, 0.0)]);
        assert_eq!(trim_to_length(&path, 20.0), path);
    }

    #[test]
    fn merge_drops_near_duplicates_only() {
        let path =
            FiberPath::new(vec![p(0.0, 0.0), p(4.0, 0.0), p(4.001, 0.0), p(8.0, 0.0), p(11.999, 0.0), p(12.0, 0.0)]);
        let m = merge_close_vertices(&path, 0.2);
        assert_eq!(m.vertices, vec![p(0.0, 0.0), p(4.0, 0.0), p(8.0, 0.0), p(12.0, 0.0)]);
        let even = FiberPath::new((0..6).map(|i| p(i as f64, 0.0)).collect());
        assert_eq!(merge_close_vertices(&even, 0.2), even);
    }

    #[test]
    fn upsample_counts_and_endpoints() {
        for n in 2..12 {
            let path = FiberPath::new((0..n).map(|i| p(i as f64, (i as f64 * 0.7).sin())).collect());
            let up = upsample(&path);
            assert_eq!(up.len(), 2 * n - 1);
            assert_eq!(up.vertices[0], path.vertices[0]);
            assert_eq!(up.vertices[2 * n - 2], path.vertices[n - 1]);
            for i in 0..n {
                assert_eq!(up.vertices[2 * i], path.vertices[i]);
            }
        }
    }

    #[test]
    fn upsample_keeps_lines_straight() {
        let three = FiberPath::new(vec![p(0.0, 0.0), p(1.0, 2.0), p(3.0, 6.0)]);
        let up = upsample(&three);
        assert_eq!(up.len(), 5);
        for v in &up.vertices {
            assert!((v.y - 2.0 * v.x).abs() < 1e-9);
        }
        let uneven = FiberPath::new(vec![p(0.0, 0.0), p(1.0, 1.0), p(1.5, 1.5), p(4.0, 4.0), p(4.2, 4.2)]);
        for v in &upsample(&uneven).vertices {
            assert!((v.y - v.x).abs() < 1e-9);
        }
    }

    #[test]
    fn upsample_quarter_circle() {
        let r = 10.0;
        let path = FiberPath::new(
            (0..=9).map(|k| (k as f64 * 10.0).to_radians()).map(|a| p(r * a.cos(), r * a.sin())).collect(),
        );
        let up = upsample(&path);
        for v in up.vertices.iter().skip(1).step_by(2) {
            assert!((v.norm() - r).abs() < 1e-3 * r, "{}", v.norm());
        }
    }

    #[test]
    fn upsample_reproduces_cubics() {
        // not-a-knot interpolation is exact for a single cubic in the chord parameter; check on
        // equally spaced x with a cubic profile, where the chord parameter is close to x
        let f = |x: f64| 0.01 * x * x * x - 0.1 * x * x + 0.3 * x;
        let path = FiberPath::new((0..8).map(|i| p(i as f64, f(i as f64))).collect());
        let up = upsample(&path);
        for v in &up.vertices {
            assert!((v.y - f(v.x)).abs() < 2e-3, "{} vs {}", v.y, f(v.x));
        }
    }
}
