use std::path::Path;
use std::process::Command;

use fiberpath::objective::evaluate;
use fiberpath::scenario::{two_hole, Scenario};
use fiberpath_cli::output::{read_paths_json, read_report_csv};
use fiberpath_cli::pareto::compare;
use fiberpath_cli::{plan_command, ScenarioFile, Strategy};

fn coarse_file(strategy: Strategy) -> ScenarioFile {
    let mut f = ScenarioFile::from_spec(two_hole());
    f.mesh.target_edge = 1.0;
    f.strategy = strategy;
    f.plan.walk.max_length = 40.0;
    f.plan.walk.restarts = 2;
    f.plan.max_iterations = 5;
    f.plan.upsample_rounds = 0;
    f
}

fn assert_xml(path: &Path) {
    let text = std::fs::read_to_string(path).unwrap();
    let doc = roxmltree::Document::parse(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(doc.root_element().tag_name().name(), "svg");
}

#[test]
fn concentric_artifacts_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let file = coarse_file(Strategy::Concentric { side: fiberpath::geometry::RingSide::Inner, rings: 1 });
    let s = plan_command(&file, dir.path(), false, 1).unwrap();
    assert!(s.failures.is_empty());
    let row = &s.rows[0];
    assert_eq!(row.strategy, "concentric_inner_1");
    assert_eq!(row.n_paths, 2);
    assert_eq!(row.stiffness, 2.0 * row.mean_energy);

    let paths = read_paths_json(&dir.path().join("paths.json")).unwrap();
    assert!(paths.paths.iter().all(|p| p.closed));
    let layout = paths.layout();
    let sc = Scenario::new(file.spec()).unwrap();
    let e = evaluate(&layout, &sc).unwrap().mean_energy();
    assert!((e - row.mean_energy).abs() < 1e-9 * e);
    assert_eq!(read_report_csv(&dir.path().join("report.csv")).unwrap(), s.rows);

    for name in ["render.svg", "stress_glyphs.svg"] {
        assert_xml(&dir.path().join(name));
    }
    let render = std::fs::read_to_string(dir.path().join("render.svg")).unwrap();
    assert_eq!(render.matches("class=\"fiber\"").count(), 2);
    assert_eq!(render.matches("class=\"dirichlet\"").count(), 2);
}

#[test]
fn greedy_report_and_pareto_svg() {
    let dir = tempfile::tempdir().unwrap();
    let s = plan_command(&coarse_file(Strategy::Greedy), dir.path(), false, 1).unwrap();
    assert!(s.failures.is_empty());
    assert!(dir.path().join("plan_report.json").exists());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("plan_report.json")).unwrap()).unwrap();
    assert!(!report["layout"].is_null() && report["energies"].is_array());

    let out = dir.path().join("cmp");
    let (points, front) = compare(&[dir.path().join("report.csv")], &out).unwrap();
    assert_eq!(points.len(), 1);
    assert_eq!(front, vec![true]);
    assert_xml(&out.join("pareto.svg"));
}

#[test]
fn binary_preset_then_plan() {
    let bin = env!("CARGO_BIN_EXE_fiberpath");
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(bin).args(["preset", "two_hole"]).output().unwrap();
    assert!(out.status.success());
    let mut file = ScenarioFile::parse(std::str::from_utf8(&out.stdout).unwrap()).unwrap();
    file.mesh.target_edge = 1.2;
    let scenario = dir.path().join("two_hole.json");
    std::fs::write(&scenario, serde_json::to_string_pretty(&file).unwrap()).unwrap();

    let status = Command::new(bin)
        .arg("plan")
        .arg(&scenario)
        .args(["--strategy", "concentric:outer:1", "--out"])
        .arg(dir.path().join("run"))
        .env("RUST_LOG", "warn")
        .status()
        .unwrap();
    assert!(status.success());
    let rows = read_report_csv(&dir.path().join("run/report.csv")).unwrap();
    assert_eq!(rows[0].strategy, "concentric_outer_1");
    assert_eq!(rows[0].n_paths, 1);

    let bad = Command::new(bin).args(["preset", "hexagon"]).output().unwrap();
    assert!(!bad.status.success());
    let missing = Command::new(bin).arg("plan").arg(dir.path().join("nope.json")).output().unwrap();
    assert!(!missing.status.success());
}
