//! BFGS (dense or limited-memory) with a strong-Wolfe line search.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BfgsConfig {
    pub max_iterations: usize,
    /// Stop when the gradient infinity-norm falls to this value.
    pub gradient_tolerance: f64,
    /// Stop when an accepted step lowers `f` by at most this fraction of `max(|f|, 1)`.
    pub function_tolerance: f64,
    /// Length of the very first trial step along `-g`, in the units of `x`.
    pub initial_step: f64,
    pub c1: f64,
    pub c2: f64,
    pub max_line_search: usize,
    /// Keep only this many correction pairs instead of a dense inverse Hessian.
    pub memory: Option<usize>,
}

impl Default for BfgsConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            gradient_tolerance: 3e-9,
            function_tolerance: 1e-13,
            initial_step: 0.5,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 30,
            memory: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    FunctionTolerance,
    MaxIterations,
    /// No step satisfying the Wolfe conditions was found; the best iterate is returned.
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    /// `f` at the start and after every accepted step.
    pub trace: Vec<f64>,
    pub termination: Termination,
}

impl BfgsResult {
    pub fn line_search_failed(&self) -> bool {
        self.termination == Termination::LineSearchFailed
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

struct Point {
    alpha: f64,
    f: f64,
    g: Vec<f64>,
    slope: f64,
}

/// Minimizes `fg`, which returns the value and gradient at a point.
pub fn minimize<E>(
    mut fg: impl FnMut(&[f64]) -> Result<(f64, Vec<f64>), E>,
    x0: Vec<f64>,
    cfg: &BfgsConfig,
) -> Result<BfgsResult, E> {
    let n = x0.len();
    let mut x = x0;
    let (mut f, mut g) = fg(&x)?;
    let mut evaluations = 1;
    let mut trace = vec![f];
    let mut h = InverseHessian::new(n, cfg.memory);
    let mut iterations = 0;
    let mut first = true;
    let termination = loop {
        if !f.is_finite() {
            break Termination::LineSearchFailed;
        }
        if inf_norm(&g) <= cfg.gradient_tolerance {
            break Termination::GradientTolerance;
        }
        if iterations >= cfg.max_iterations {
            break Termination::MaxIterations;
        }
        let mut d = h.direction(&g);
        if dot(&d, &g) >= 0.0 {
            h.reset();
            d = g.iter().map(|v| -v).collect();
        }
        let alpha0 = if first { (cfg.initial_step / norm(&d)).min(1.0) } else { 1.0 };
        let mut ls = line_search(&mut fg, &x, f, &g, &d, alpha0, cfg, &mut evaluations)?;
        if ls.is_none() && !h.is_identity() {
            // retry once along steepest descent from a fresh scaled identity
            h.reset();
            d = g.iter().map(|v| -v).collect();
            let a0 = (cfg.initial_step / norm(&d)).min(1.0);
            ls = line_search(&mut fg, &x, f, &g, &d, a0, cfg, &mut evaluations)?;
        }
        let Some(p) = ls else { break Termination::LineSearchFailed };
        let s: Vec<f64> = d.iter().map(|v| p.alpha * v).collect();
        let y: Vec<f64> = p.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        for (xi, si) in x.iter_mut().zip(&s) {
            *xi += si;
        }
        let decrease = f - p.f;
        f = p.f;
        g = p.g;
        iterations += 1;
        trace.push(f);
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            h.update(s, y, sy);
        }
        first = false;
        if decrease <= cfg.function_tolerance * f.abs().max(1.0) {
            break Termination::FunctionTolerance;
        }
    };
    Ok(BfgsResult { x, f, gradient: g, iterations, evaluations, trace, termination })
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

enum InverseHessian {
    /// Row-major matrix, built at the first update from the scaled identity.
    Dense { n: usize, h: Option<Vec<f64>> },
    /// Most recent `(s, y, 1/yᵀs)` pairs, applied by the two-loop recursion.
    Limited { memory: usize, pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>, scale: f64 },
}

impl InverseHessian {
    fn new(n: usize, memory: Option<usize>) -> Self {
        match memory {
            None => Self::Dense { n, h: None },
            Some(m) => Self::Limited { memory: m.max(1), pairs: VecDeque::new(), scale: 1.0 },
        }
    }

    fn is_identity(&self) -> bool {
        match self {
            Self::Dense { h, .. } => h.is_none(),
            Self::Limited { pairs, .. } => pairs.is_empty(),
        }
    }

    fn reset(&mut self) {
        match self {
            Self::Dense { h, .. } => *h = None,
            Self::Limited { pairs, scale, .. } => {
                pairs.clear();
                *scale = 1.0;
            }
        }
    }

    fn direction(&self, g: &[f64]) -> Vec<f64> {
        match self {
            Self::Dense { n, h: None } => {
                debug_assert_eq!(*n, g.len());
                g.iter().map(|v| -v).collect()
            }
            Self::Dense { n, h: Some(h) } => (0..*n).map(|i| -dot(&h[i * n..(i + 1) * n], g)).collect(),
            Self::Limited { pairs, scale, .. } => {
                let mut q = g.to_vec();
                let mut a = vec![0.0; pairs.len()];
                for (k, (s, y, rho)) in pairs.iter().enumerate().rev() {
                    a[k] = rho * dot(s, &q);
                    q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a[k] * yi);
                }
                q.iter_mut().for_each(|v| *v *= scale);
                for (k, (s, y, rho)) in pairs.iter().enumerate() {
                    let b = rho * dot(y, &q);
                    q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a[k] - b) * si);
                }
                q.iter_mut().for_each(|v| *v = -*v);
                q
            }
        }
    }

    fn update(&mut self, s: Vec<f64>, y: Vec<f64>, sy: f64) {
        match self {
            Self::Dense { n, h } => {
                let n = *n;
                let h = h.get_or_insert_with(|| {
                    let scale = sy / dot(&y, &y);
                    let mut m = vec![0.0; n * n];
                    for i in 0..n {
                        m[i * n + i] = scale;
                    }
                    m
                });
                bfgs_update(h, n, &s, &y, sy);
            }
            Self::Limited { memory, pairs, scale } => {
                *scale = sy / dot(&y, &y);
                if pairs.len() == *memory {
                    pairs.pop_front();
                }
                pairs.push_back((s, y, 1.0 / sy));
            }
        }
    }
}

/// `H ← (I - ρ s yᵀ) H (I - ρ y sᵀ) + ρ s sᵀ`.
fn bfgs_update(h: &mut [f64], n: usize, s: &[f64], y: &[f64], sy: f64) {
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| dot(&h[i * n..(i + 1) * n], y)).collect();
    let yhy = dot(y, &hy);
    let c = (1.0 + rho * yhy) * rho;
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += c * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn line_search<E>(
    fg: &mut impl FnMut(&[f64]) -> Result<(f64, Vec<f64>), E>,
    x: &[f64],
    f0: f64,
    g0: &[f64],
    d: &[f64],
    alpha0: f64,
    cfg: &BfgsConfig,
    evaluations: &mut usize,
) -> Result<Option<Point>, E> {
    let slope0 = dot(g0, d);
    let mut eval = |alpha: f64, evaluations: &mut usize| -> Result<Point, E> {
        let xt: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + alpha * b).collect();
        let (f, g) = fg(&xt)?;
        *evaluations += 1;
        let f = if f.is_finite() { f } else { f64::INFINITY };
        let slope = dot(&g, d);
        Ok(Point { alpha, f, g, slope })
    };
    let armijo = |p: &Point| p.f <= f0 + cfg.c1 * p.alpha * slope0;
    let curvature = |p: &Point| p.slope.abs() <= -cfg.c2 * slope0;
    let mut prev = Point { alpha: 0.0, f: f0, g: g0.to_vec(), slope: slope0 };
    let mut alpha = alpha0;
    let mut count = 0;
    let (mut lo, mut hi) = loop {
        if count >= cfg.max_line_search {
            return Ok(None);
        }
        let cur = eval(alpha, evaluations)?;
        count += 1;
        if !armijo(&cur) || (count > 1 && cur.f >= prev.f) {
            break (prev, cur);
        }
        if curvature(&cur) {
            return Ok(Some(cur));
        }
        if cur.slope >= 0.0 {
            break (cur, prev);
        }
        alpha = cur.alpha * 2.0;
        prev = cur;
    };
    // zoom: lo satisfies Armijo with the lowest f seen; the minimizer lies between lo and hi
    while count < cfg.max_line_search {
        let (a, b) = (lo.alpha.min(hi.alpha), lo.alpha.max(hi.alpha));
        let width = b - a;
        if width <= 1e-14 * b.max(1.0) {
            break;
        }
        let mut t = interpolate(&lo, &hi);
        if !(t > a + 0.1 * width && t < b - 0.1 * width) {
            t = 0.5 * (a + b);
        }
        let cur = eval(t, evaluations)?;
        count += 1;
        if !armijo(&cur) || cur.f >= lo.f {
            hi = cur;
        } else {
            if curvature(&cur) {
                return Ok(Some(cur));
            }
            if cur.slope * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
    }
    // accept a sufficient-decrease point even if the curvature condition was never met
    if lo.alpha > 0.0 && lo.f < f0 {
        return Ok(Some(lo));
    }
    Ok(None)
}

/// Cubic interpolation of the minimizer between two bracketing points, falling back to the
/// quadratic through `lo`'s value and slope and `hi`'s value.
fn interpolate(lo: &Point, hi: &Point) -> f64 {
    if !hi.f.is_finite() {
        return 0.5 * (lo.alpha + hi.alpha);
    }
    let (a0, a1) = (lo.alpha, hi.alpha);
    let d1 = lo.slope + hi.slope - 3.0 * (lo.f - hi.f) / (a0 - a1);
    let disc = d1 * d1 - lo.slope * hi.slope;
    if disc >= 0.0 {
        let d2 = (a1 - a0).signum() * disc.sqrt();
        let t = a1 - (a1 - a0) * (hi.slope + d2 - d1) / (hi.slope - lo.slope + 2.0 * d2);
        if t.is_finite() {
            return t;
        }
    }
    let da = a1 - a0;
    let denom = 2.0 * (hi.f - lo.f - lo.slope * da);
    if denom > 0.0 {
        a0 - lo.slope * da * da / denom
    } else {
        0.5 * (a0 + a1)
    }
}
