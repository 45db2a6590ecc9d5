use fiberpath::extraction::{child_seed, extract_candidate, WalkConfig};
use fiberpath::geometry::signed_distance;
use fiberpath::material::{FiberLayout, FiberPath};
use fiberpath::objective::evaluate;
use fiberpath::scenario::{two_hole, Scenario};

fn scenario() -> Scenario {
    let mut spec = two_hole();
    spec.mesh.target_edge = 0.8;
    Scenario::new(spec).unwrap()
}

#[test]
fn two_hole_candidate_regression() {
    let sc = scenario();
    let cfg = WalkConfig { max_length: 90.0, rng_seed: child_seed(0, 0), ..WalkConfig::default() };
    let c = extract_candidate(&sc, &FiberLayout::default(), &cfg).unwrap();
    let again = extract_candidate(&sc, &FiberLayout::default(), &cfg).unwrap();
    assert_eq!(c.path, again.path);

    for p in &c.raw.vertices {
        assert!(signed_distance(&sc.domain, *p) >= cfg.clearance - cfg.step);
    }
    assert!(c.raw.length() <= cfg.max_length + 1e-9);
    for w in c.raw.vertices.windows(2) {
        assert!((w[0].distance(w[1]) - cfg.step).abs() < 1e-9);
    }

    let truncated = FiberPath::new(c.raw.vertices[..c.path.len()].to_vec());
    let raw_obj = evaluate(&FiberLayout::new(vec![truncated]), &sc).unwrap().total;
    assert!(c.objective.total < raw_obj, "{} vs {raw_obj}", c.objective.total);

    let plastic = evaluate(&FiberLayout::default(), &sc).unwrap().mean_energy();
    assert!(c.objective.mean_energy() > plastic);
}
