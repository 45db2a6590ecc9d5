use fiberpath::baselines::greedy_only;
use fiberpath::geometry::Point2;
use fiberpath::material::{FiberLayout, FiberPath};
use fiberpath::objective::evaluate;
use fiberpath::optim::Termination;
use fiberpath::planner::{optimize_layout, plan, PlanConfig};
use fiberpath::scenario::{rectangle, Scenario};

fn scenario() -> Scenario {
    let mut spec = rectangle();
    spec.mesh.target_edge = 1.0;
    Scenario::new(spec).unwrap()
}

fn small_cfg() -> PlanConfig {
    let mut cfg =
        PlanConfig { max_iterations: 8, upsample_rounds: 1, upsample_max_iterations: 4, ..Default::default() };
    cfg.walk.max_length = 40.0;
    cfg.walk.restarts = 3;
    cfg
}

#[test]
fn loose_tolerance_leaves_layout_untouched() {
    let sc = scenario();
    let p = FiberPath::new((0..6).map(|i| Point2::new(4.0 + 7.0 * i as f64, 15.0)).collect());
    let layout = FiberLayout::new(vec![p.clone()]);
    let o = optimize_layout(&layout, &[p.length()], &sc, 50, 1e9).unwrap();
    assert_eq!(o.iterations, 0);
    assert_eq!(o.termination, Termination::GradientTolerance);
    assert_eq!(o.layout, layout);
}

#[test]
fn zero_paths_reports_plain_plastic() {
    let sc = scenario();
    let r = plan(&sc, &PlanConfig { n_paths: 0, ..small_cfg() }).unwrap();
    assert!(r.layout.is_empty());
    let plain = evaluate(&FiberLayout::default(), &sc).unwrap().mean_energy();
    assert!((r.mean_energy - plain).abs() < 1e-12 * plain);
    assert_eq!(r.stiffness, 2.0 * r.mean_energy);
}

#[test]
fn greedy_matches_plan_before_optimization() {
    let sc = scenario();
    let cfg = PlanConfig { n_paths: 2, ..small_cfg() };
    let g = greedy_only(&sc, &cfg).unwrap();
    let p = plan(&sc, &PlanConfig { n_paths: 1, ..cfg.clone() }).unwrap();
    assert_eq!(g.layout.paths[0], p.pre_optimization[0].paths[0]);
    assert!(g.rounds.is_empty());
    assert_eq!(g.layout.paths.len(), 2);
    // optimization keeps each path within its extracted length
    for (path, budget) in p.layout.paths.iter().zip(&p.length_budgets) {
        assert!(path.length() <= budget + 1e-9);
    }
    assert!(p.mean_energy >= evaluate(&p.pre_optimization[0], &sc).unwrap().mean_energy());
}
