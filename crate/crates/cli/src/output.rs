use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context};
use fiberpath::extraction::principal;
use fiberpath::fem::StressTensor2;
use fiberpath::geometry::Point2;
use fiberpath::material::{FiberLayout, FiberPath};
use fiberpath::scenario::Scenario;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathRecord {
    pub length_mm: f64,
    pub closed: bool,
    pub vertices: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsFile {
    pub scenario: String,
    pub strategy: String,
    pub total_length_mm: f64,
    pub paths: Vec<PathRecord>,
}

impl PathsFile {
    pub fn new(scenario: &str, strategy: &str, layout: &FiberLayout) -> Self {
        let paths = layout
            .paths
            .iter()
            .map(|p| PathRecord {
                length_mm: p.length(),
                closed: p.len() > 2 && p.vertices.first() == p.vertices.last(),
                vertices: p.vertices.iter().map(|v| [v.x, v.y]).collect(),
            })
            .collect();
        Self { scenario: scenario.into(), strategy: strategy.into(), total_length_mm: layout.total_length(), paths }
    }

    pub fn layout(&self) -> FiberLayout {
        FiberLayout::new(
            self.paths
                .iter()
                .map(|p| FiberPath::new(p.vertices.iter().map(|v| Point2::new(v[0], v[1])).collect()))
                .collect(),
        )
    }
}

pub fn write_paths_json(path: &Path, scenario: &str, strategy: &str, layout: &FiberLayout) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(&PathsFile::new(scenario, strategy, layout))?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn read_paths_json(path: &Path) -> anyhow::Result<PathsFile> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub strategy: String,
    pub n_paths: usize,
    pub fiber_length_mm: f64,
    /// Strain energy per load case, N·mm.
    pub energies: Vec<f64>,
    pub mean_energy: f64,
    pub stiffness: f64,
    pub wall_time_s: f64,
}

pub fn write_report_csv(path: &Path, case_names: &[String], rows: &[ReportRow]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    let mut header = vec!["strategy".to_string(), "n_paths".into(), "fiber_length_mm".into()];
    header.extend(case_names.iter().map(|c| format!("energy_Nmm:{c}")));
    header.extend(["mean_energy_Nmm".into(), "stiffness_N_per_mm".into(), "wall_time_s".into()]);
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.strategy.clone(), r.n_paths.to_string(), r.fiber_length_mm.to_string()];
        rec.extend(r.energies.iter().map(f64::to_string));
        rec.extend([r.mean_energy.to_string(), r.stiffness.to_string(), r.wall_time_s.to_string()]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_report_csv(path: &Path) -> anyhow::Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let header = r.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h == name).with_context(|| format!("missing column {name}"));
    let (c_strategy, c_n, c_len) = (col("strategy")?, col("n_paths")?, col("fiber_length_mm")?);
    let (c_mean, c_stiff, c_time) = (col("mean_energy_Nmm")?, col("stiffness_N_per_mm")?, col("wall_time_s")?);
    let energy_cols: Vec<usize> =
        header.iter().enumerate().filter(|(_, h)| h.starts_with("energy_Nmm:")).map(|(i, _)| i).collect();
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let num = |c: usize| -> anyhow::Result<f64> {
            rec[c].parse().with_context(|| format!("row {}: bad number {:?}", line + 1, &rec[c]))
        };
        rows.push(ReportRow {
            strategy: rec[c_strategy].to_string(),
            n_paths: rec[c_n].parse().with_context(|| format!("row {}: bad n_paths", line + 1))?,
            fiber_length_mm: num(c_len)?,
            energies: energy_cols.iter().map(|&c| num(c)).collect::<anyhow::Result<_>>()?,
            mean_energy: num(c_mean)?,
            stiffness: num(c_stiff)?,
            wall_time_s: num(c_time)?,
        });
    }
    Ok(rows)
}

/// Maps part coordinates (mm, y up) to SVG user units (mm, y down).
struct Frame {
    x0: f64,
    y1: f64,
    width: f64,
    height: f64,
}

const MARGIN: f64 = 2.0;

impl Frame {
    fn new(scenario: &Scenario) -> Self {
        let (lo, hi) = scenario.domain.bounding_box();
        Self {
            x0: lo.x - MARGIN,
            y1: hi.y + MARGIN,
            width: hi.x - lo.x + 2.0 * MARGIN,
            height: hi.y - lo.y + 2.0 * MARGIN,
        }
    }

    fn map(&self, p: Point2) -> (f64, f64) {
        (p.x - self.x0, self.y1 - p.y)
    }

    fn header(&self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.3}mm\" height=\"{h:.3}mm\" viewBox=\"0 0 {w:.3} {h:.3}\">\n",
            w = self.width,
            h = self.height
        )
    }

    fn points(&self, pts: &[Point2]) -> String {
        let mut s = String::new();
        for (i, &p) in pts.iter().enumerate() {
            let (x, y) = self.map(p);
            if i > 0 {
                s.push(' ');
            }
            let _ = write!(s, "{x:.4},{y:.4}");
        }
        s
    }
}

fn outline(frame: &Frame, scenario: &Scenario) -> String {
    let mut d = String::new();
    for l in scenario.domain.loops() {
        let _ = write!(d, "M {} Z ", frame.points(&l.vertices));
    }
    format!(
        "  <path class=\"domain\" d=\"{}\" fill=\"#e6e6e6\" fill-rule=\"evenodd\" stroke=\"#333\" stroke-width=\"0.15\"/>\n",
        d.trim_end()
    )
}

/// Domain, holes, fiber paths, and every Dirichlet region of every load case as a dotted line.
pub fn render_svg(scenario: &Scenario, layout: &FiberLayout) -> String {
    let frame = Frame::new(scenario);
    let mut s = frame.header();
    s += &outline(&frame, scenario);
    let w = scenario.material().w_fiber;
    for (i, p) in layout.paths.iter().enumerate() {
        let _ = writeln!(
            s,
            "  <polyline class=\"fiber\" id=\"path{i}\" points=\"{}\" fill=\"none\" stroke=\"#1f5fbf\" stroke-width=\"{w}\" stroke-linejoin=\"round\" stroke-linecap=\"round\" stroke-opacity=\"0.85\"/>",
            frame.points(&p.vertices)
        );
    }
    let mut tags: Vec<&str> =
        scenario.spec.load_cases.iter().flat_map(|c| c.dirichlet.iter().map(|b| b.tag.as_str())).collect();
    tags.sort_unstable();
    tags.dedup();
    for tag in tags {
        for r in scenario.domain.tag_ranges(tag).unwrap_or_default() {
            let Some(l) = scenario.domain.loop_at(r.loop_index) else { continue };
            let pts: Vec<Point2> = (r.start..=r.end).map(|k| l.vertices[k % l.len()]).collect();
            let _ = writeln!(
                s,
                "  <polyline class=\"dirichlet\" data-tag=\"{tag}\" points=\"{}\" fill=\"none\" stroke=\"#c0392b\" stroke-width=\"0.35\" stroke-dasharray=\"0.4 0.6\"/>",
                frame.points(&pts)
            );
        }
    }
    s += "</svg>\n";
    s
}

pub fn write_render_svg(path: &Path, scenario: &Scenario, layout: &FiberLayout) -> anyhow::Result<()> {
    std::fs::write(path, render_svg(scenario, layout)).with_context(|| format!("writing {}", path.display()))
}

/// One segment per element along its principal walk direction, length scaled by `|λ|`.
pub fn glyphs_svg(scenario: &Scenario, stress: &[StressTensor2]) -> anyhow::Result<String> {
    let mesh = &scenario.model.mesh;
    if stress.len() != mesh.triangles.len() {
        bail!("stress field has {} entries for {} elements", stress.len(), mesh.triangles.len());
    }
    let frame = Frame::new(scenario);
    let mut s = frame.header();
    s += &outline(&frame, scenario);
    let pr: Vec<(f64, Point2)> = stress.iter().map(principal).collect();
    let max = pr.iter().fold(0.0f64, |m, (l, _)| m.max(l.abs()));
    s += "  <g class=\"glyphs\" stroke-width=\"0.08\" stroke-linecap=\"round\">\n";
    if max > 0.0 {
        for (e, &(l, d)) in pr.iter().enumerate() {
            let size = (2.0 * mesh.area(e)).sqrt() * 0.9 * l.abs() / max;
            if size < 1e-3 {
                continue;
            }
            let c = mesh.centroid(e);
            let (a, b) = (frame.map(c - d * (0.5 * size)), frame.map(c + d * (0.5 * size)));
            let color = if l >= 0.0 { "#b03a2e" } else { "#2e5cb0" };
            let _ = writeln!(
                s,
                "    <line x1=\"{:.4}\" y1=\"{:.4}\" x2=\"{:.4}\" y2=\"{:.4}\" stroke=\"{color}\"/>",
                a.0, a.1, b.0, b.1
            );
        }
    }
    s += "  </g>\n</svg>\n";
    Ok(s)
}

pub fn write_glyphs_svg(path: &Path, scenario: &Scenario, stress: &[StressTensor2]) -> anyhow::Result<()> {
    std::fs::write(path, glyphs_svg(scenario, stress)?).with_context(|| format!("writing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("report.csv");
        let rows = vec![
            ReportRow {
                strategy: "greedy".into(),
                n_paths: 2,
                fiber_length_mm: 101.25,
                energies: vec![60.0, 70.5],
                mean_energy: 65.25,
                stiffness: 130.5,
                wall_time_s: 1.5,
            },
            ReportRow {
                strategy: "concentric_inner_1".into(),
                n_paths: 0,
                fiber_length_mm: 0.0,
                energies: vec![1.0 / 3.0, 2.0],
                mean_energy: 7.0 / 6.0,
                stiffness: 7.0 / 3.0,
                wall_time_s: 0.0,
            },
        ];
        write_report_csv(&p, &["a".into(), "b".into()], &rows).unwrap();
        assert_eq!(read_report_csv(&p).unwrap(), rows);
    }
}
