use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use anyhow::Context;
use fiberpath::baselines::{concentric, field_opt_greedy, greedy_only};
use fiberpath::extraction::StressState;
use fiberpath::material::FiberLayout;
use fiberpath::objective::evaluate;
use fiberpath::planner::{plan, PlanReport};
use fiberpath::scenario::Scenario;

use crate::output::{write_glyphs_svg, write_paths_json, write_render_svg, write_report_csv, ReportRow};
use crate::scenario_file::{ScenarioFile, Strategy};

/// Result of running one strategy on a scenario.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub strategy: Strategy,
    pub layout: FiberLayout,
    pub energies: Vec<f64>,
    pub mean_energy: f64,
    pub wall_time_s: f64,
    /// Present for the extraction-based strategies.
    pub plan: Option<PlanReport>,
}

impl Outcome {
    pub fn row(&self) -> ReportRow {
        ReportRow {
            strategy: self.strategy.label(),
            n_paths: self.layout.paths.len(),
            fiber_length_mm: self.layout.total_length(),
            energies: self.energies.clone(),
            mean_energy: self.mean_energy,
            stiffness: 2.0 * self.mean_energy,
            wall_time_s: self.wall_time_s,
        }
    }
}

pub fn run_strategy(scenario: &Scenario, file: &ScenarioFile, strategy: Strategy) -> anyhow::Result<Outcome> {
    let start = Instant::now();
    let cfg = file.plan_config();
    let report = match strategy {
        Strategy::Optimized => Some(plan(scenario, &cfg)?),
        Strategy::Greedy => Some(greedy_only(scenario, &cfg)?),
        Strategy::FieldOptGreedy => Some(field_opt_greedy(scenario, &cfg, &file.field)?),
        Strategy::Concentric { .. } => None,
    };
    let outcome = match report {
        Some(r) => Outcome {
            strategy,
            layout: r.layout.clone(),
            energies: r.energies.clone(),
            mean_energy: r.mean_energy,
            wall_time_s: start.elapsed().as_secs_f64(),
            plan: Some(r),
        },
        None => {
            let Strategy::Concentric { side, rings } = strategy else { unreachable!() };
            let m = scenario.material();
            let layout = concentric(&scenario.domain, side, rings, m.d_min, m.w_fiber)?;
            if layout.is_empty() {
                log::warn!("{}: every ring collapsed", strategy.label());
            }
            let obj = evaluate(&layout, scenario)?;
            Outcome {
                strategy,
                mean_energy: obj.mean_energy(),
                energies: obj.energies,
                layout,
                wall_time_s: start.elapsed().as_secs_f64(),
                plan: None,
            }
        }
    };
    for w in outcome.plan.iter().flat_map(|p| &p.warnings) {
        log::warn!("{}: {w}", strategy.label());
    }
    log::info!(
        "{}: {} paths, {:.1} mm, mean energy {:.3} N·mm in {:.1} s",
        strategy.label(),
        outcome.layout.paths.len(),
        outcome.layout.total_length(),
        outcome.mean_energy,
        outcome.wall_time_s
    );
    Ok(outcome)
}

/// Runs `strategies` on up to `jobs` worker threads; results keep the input order.
pub fn run_all(
    scenario: &Scenario,
    file: &ScenarioFile,
    strategies: &[Strategy],
    jobs: usize,
) -> Vec<anyhow::Result<Outcome>> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<anyhow::Result<Outcome>>>> = strategies.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, strategies.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&st) = strategies.get(i) else { break };
                *slots[i].lock().unwrap() = Some(run_strategy(scenario, file, st));
            });
        }
    });
    slots.into_iter().map(|m| m.into_inner().unwrap().expect("every strategy ran")).collect()
}

/// Writes the per-strategy artifacts into `dir`.
pub fn write_artifacts(dir: &Path, scenario: &Scenario, file: &ScenarioFile, out: &Outcome) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_paths_json(&dir.join("paths.json"), &file.name, &out.strategy.label(), &out.layout)?;
    write_render_svg(&dir.join("render.svg"), scenario, &out.layout)?;
    let state = StressState::solve(scenario, &out.layout)?;
    write_glyphs_svg(&dir.join("stress_glyphs.svg"), scenario, &state.plastic)?;
    if let Some(p) = &out.plan {
        let text = serde_json::to_string_pretty(p)?;
        std::fs::write(dir.join("plan_report.json"), text)?;
    }
    Ok(())
}

#[derive(Debug)]
pub struct PlanSummary {
    pub out_dir: PathBuf,
    pub rows: Vec<ReportRow>,
    pub failures: Vec<(String, String)>,
}

/// Runs the scenario's strategy, or every strategy when `sweep` is set, and writes all artifacts.
/// Failures are collected in `error.json` next to whatever artifacts were produced.
pub fn plan_command(file: &ScenarioFile, out_dir: &Path, sweep: bool, jobs: usize) -> anyhow::Result<PlanSummary> {
    let scenario = Scenario::new(file.spec()).context("building scenario")?;
    let strategies = if sweep {
        let rings = match file.strategy {
            Strategy::Concentric { rings, .. } => rings,
            _ => 1,
        };
        Strategy::sweep(rings)
    } else {
        vec![file.strategy]
    };
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let results = run_all(&scenario, file, &strategies, jobs);
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (st, res) in strategies.iter().zip(results) {
        let dir = if sweep { out_dir.join(st.label()) } else { out_dir.to_path_buf() };
        let written = res.and_then(|o| {
            write_artifacts(&dir, &scenario, file, &o)?;
            Ok(o)
        });
        match written {
            Ok(o) => rows.push(o.row()),
            Err(e) => {
                log::error!("{}: {e:#}", st.label());
                failures.push((st.label(), format!("{e:#}")));
            }
        }
    }
    let names: Vec<String> = file.load_cases.iter().enumerate().map(|(i, c)| case_name(i, &c.name)).collect();
    write_report_csv(&out_dir.join("report.csv"), &names, &rows)?;
    if !failures.is_empty() {
        let manifest: Vec<_> = failures.iter().map(|(s, e)| serde_json::json!({ "strategy": s, "error": e })).collect();
        std::fs::write(out_dir.join("error.json"), serde_json::to_string_pretty(&manifest)?)?;
    }
    Ok(PlanSummary { out_dir: out_dir.to_path_buf(), rows, failures })
}

fn case_name(i: usize, name: &str) -> String {
    if name.is_empty() {
        format!("case{i}")
    } else {
        name.to_string()
    }
}
