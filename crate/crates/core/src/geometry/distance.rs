use super::{Domain, Point2};

/// Closest point on segment `[a, b]` to `p`: returns `(q, t, |p - q|²)` with `q = a + t (b - a)`.
#[inline]
pub fn segment_closest(a: Point2, b: Point2, p: Point2) -> (Point2, f64, f64) {
    let ab = b - a;
    let len_sq = ab.norm_sq();
    let t = if len_sq > 0.0 { ((p - a).dot(ab) / len_sq).clamp(0.0, 1.0) } else { 0.0 };
    let q = a + ab * t;
    (q, t, (p - q).norm_sq())
}

/// Exact distance to the nearest boundary segment; positive inside the material, negative
/// outside the outer loop or inside a hole.
pub fn signed_distance(domain: &Domain, p: Point2) -> f64 {
    signed_distance_with_gradient(domain, p).0
}

/// Signed distance together with its gradient with respect to `p`.
///
/// On the boundary itself the gradient is the inward unit normal of the nearest segment.
pub fn signed_distance_with_gradient(domain: &Domain, p: Point2) -> (f64, Point2) {
    let mut best = f64::INFINITY;
    let mut best_q = p;
    let mut best_seg = (p, p);
    for l in domain.loops() {
        for (a, b) in l.segments() {
            let (q, _, d2) = segment_closest(a, b, p);
            if d2 < best {
                best = d2;
                best_q = q;
                best_seg = (a, b);
            }
        }
    }
    let d = best.sqrt();
    if d == 0.0 {
        // outer loops are CCW and holes CW, so the material lies to the left of every segment
        let n = (best_seg.1 - best_seg.0).perp().normalized();
        return (0.0, n);
    }
    let away = (p - best_q) * (1.0 / d);
    if domain.contains(p) {
        (d, away)
    } else {
        (-d, -away)
    }
}
