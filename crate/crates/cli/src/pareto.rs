use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context};

use crate::output::read_report_csv;

#[derive(Debug, Clone, PartialEq)]
pub struct ParetoPoint {
    /// Report file the row came from.
    pub source: String,
    pub strategy: String,
    pub fiber_length_mm: f64,
    pub mean_energy: f64,
}

/// `true` for every point no other point dominates (at least as much energy with at most as much
/// fiber, strictly better in one). Identical points do not dominate each other.
pub fn non_dominated(points: &[ParetoPoint]) -> Vec<bool> {
    points
        .iter()
        .map(|p| {
            !points.iter().any(|q| {
                q.mean_energy >= p.mean_energy
                    && q.fiber_length_mm <= p.fiber_length_mm
                    && (q.mean_energy > p.mean_energy || q.fiber_length_mm < p.fiber_length_mm)
            })
        })
        .collect()
}

pub fn load_points(reports: &[impl AsRef<Path>]) -> anyhow::Result<Vec<ParetoPoint>> {
    let mut out = Vec::new();
    for r in reports {
        let r = r.as_ref();
        for row in read_report_csv(r)? {
            out.push(ParetoPoint {
                source: r.display().to_string(),
                strategy: row.strategy,
                fiber_length_mm: row.fiber_length_mm,
                mean_energy: row.mean_energy,
            });
        }
    }
    Ok(out)
}

fn scatter_svg(points: &[ParetoPoint], front: &[bool]) -> String {
    let (w, h, m) = (160.0, 110.0, 14.0);
    let max_l = points.iter().fold(0.0f64, |a, p| a.max(p.fiber_length_mm)).max(1.0) * 1.05;
    let max_e = points.iter().fold(0.0f64, |a, p| a.max(p.mean_energy)).max(1.0) * 1.05;
    let sx = |l: f64| m + (w - 2.0 * m) * l / max_l;
    let sy = |e: f64| h - m - (h - 2.0 * m) * e / max_e;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}mm\" height=\"{h}mm\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"3\">\n"
    );
    let _ = writeln!(
        s,
        "  <path d=\"M {m} {y0} L {x1} {y0} M {m} {y0} L {m} {m}\" stroke=\"#000\" stroke-width=\"0.3\" fill=\"none\"/>",
        y0 = h - m,
        x1 = w - m
    );
    let _ = writeln!(s, "  <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">fiber length (mm)</text>", w / 2.0, h - 4.0);
    let _ = writeln!(
        s,
        "  <text x=\"4\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 4 {})\">strain energy (N·mm)</text>",
        h / 2.0,
        h / 2.0
    );
    let mut idx: Vec<usize> = (0..points.len()).filter(|&i| front[i]).collect();
    idx.sort_by(|&a, &b| points[a].fiber_length_mm.total_cmp(&points[b].fiber_length_mm));
    if idx.len() > 1 {
        let pts: Vec<String> = idx
            .iter()
            .map(|&i| format!("{:.3},{:.3}", sx(points[i].fiber_length_mm), sy(points[i].mean_energy)))
            .collect();
        let _ = writeln!(
            s,
            "  <polyline class=\"front\" points=\"{}\" fill=\"none\" stroke=\"#c0392b\" stroke-width=\"0.3\" stroke-dasharray=\"1 0.8\"/>",
            pts.join(" ")
        );
    }
    for (p, &nd) in points.iter().zip(front) {
        let (x, y) = (sx(p.fiber_length_mm), sy(p.mean_energy));
        let fill = if nd { "#c0392b" } else { "#7f8c8d" };
        let _ = writeln!(s, "  <circle cx=\"{x:.3}\" cy=\"{y:.3}\" r=\"1\" fill=\"{fill}\"/>");
        let _ = writeln!(s, "  <text x=\"{:.3}\" y=\"{:.3}\">{}</text>", x + 1.5, y - 1.0, xml_escape(&p.strategy));
    }
    s += "</svg>\n";
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Labels every report row and writes `pareto.csv` and `pareto.svg` into `out_dir`.
pub fn compare(reports: &[impl AsRef<Path>], out_dir: &Path) -> anyhow::Result<(Vec<ParetoPoint>, Vec<bool>)> {
    let points = load_points(reports)?;
    if points.is_empty() {
        bail!("no report rows to compare");
    }
    let front = non_dominated(&points);
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut w = csv::Writer::from_path(out_dir.join("pareto.csv"))?;
    w.write_record(["source", "strategy", "fiber_length_mm", "mean_energy_Nmm", "label"])?;
    for (p, &nd) in points.iter().zip(&front) {
        w.write_record([
            p.source.as_str(),
            p.strategy.as_str(),
            &p.fiber_length_mm.to_string(),
            &p.mean_energy.to_string(),
            if nd { "non_dominated" } else { "dominated" },
        ])?;
    }
    w.flush()?;
    std::fs::write(out_dir.join("pareto.svg"), scatter_svg(&points, &front))?;
    Ok((points, front))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(l: f64, e: f64) -> ParetoPoint {
        ParetoPoint { source: String::new(), strategy: "s".into(), fiber_length_mm: l, mean_energy: e }
    }

    #[test]
    fn dominance_rules() {
        assert_eq!(non_dominated(&[pt(100.0, 50.0), pt(120.0, 40.0)]), vec![true, false]);
        assert_eq!(non_dominated(&[pt(100.0, 50.0)]), vec![true]);
        assert_eq!(non_dominated(&[pt(100.0, 50.0), pt(100.0, 50.0)]), vec![true, true]);
        // equal energy, less fiber wins; trade-offs both survive
        assert_eq!(non_dominated(&[pt(90.0, 50.0), pt(100.0, 50.0), pt(200.0, 80.0)]), vec![true, false, true]);
    }
}
