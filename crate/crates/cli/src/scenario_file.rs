use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context};
use fiberpath::baselines::FieldConfig;
use fiberpath::fem::LoadCase;
use fiberpath::geometry::{RingSide, ShapeSpec};
use fiberpath::material::MaterialParams;
use fiberpath::objective::ObjectiveWeights;
use fiberpath::planner::PlanConfig;
use fiberpath::scenario::{MeshConfig, ScenarioSpec};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Strategy {
    Optimized,
    Greedy,
    FieldOptGreedy,
    Concentric { side: RingSide, rings: usize },
}

impl Strategy {
    /// Short name used for report rows and output directories.
    pub fn label(&self) -> String {
        match self {
            Strategy::Optimized => "optimized".into(),
            Strategy::Greedy => "greedy".into(),
            Strategy::FieldOptGreedy => "field_opt_greedy".into(),
            Strategy::Concentric { side, rings } => {
                let s = match side {
                    RingSide::Inner => "inner",
                    RingSide::Outer => "outer",
                    RingSide::AllWalls => "all_walls",
                };
                format!("concentric_{s}_{rings}")
            }
        }
    }

    /// Every strategy compared by a sweep; concentric variants use `rings` rings.
    pub fn sweep(rings: usize) -> Vec<Strategy> {
        let mut out = vec![Strategy::Optimized, Strategy::Greedy, Strategy::FieldOptGreedy];
        for side in [RingSide::Inner, RingSide::Outer, RingSide::AllWalls] {
            out.push(Strategy::Concentric { side, rings });
        }
        out
    }
}

impl FromStr for Strategy {
    type Err = anyhow::Error;

    /// `optimized`, `greedy`, `field_opt_greedy`, or `concentric[:inner|outer|all_walls[:RINGS]]`.
    fn from_str(s: &str) -> anyhow::Result<Self> {
        let mut parts = s.split(':');
        let out = match parts.next().unwrap_or("") {
            "optimized" => Strategy::Optimized,
            "greedy" => Strategy::Greedy,
            "field_opt_greedy" => Strategy::FieldOptGreedy,
            "concentric" => {
                let side = match parts.next().unwrap_or("inner") {
                    "inner" => RingSide::Inner,
                    "outer" => RingSide::Outer,
                    "all_walls" => RingSide::AllWalls,
                    other => bail!("unknown ring side {other:?}"),
                };
                let rings = match parts.next() {
                    Some(r) => r.parse().with_context(|| format!("bad ring count {r:?}"))?,
                    None => 1,
                };
                if rings == 0 {
                    bail!("ring count must be at least 1");
                }
                Strategy::Concentric { side, rings }
            }
            other => bail!("unknown strategy {other:?}"),
        };
        if parts.next().is_some() {
            bail!("trailing fields in strategy {s:?}");
        }
        Ok(out)
    }
}

fn default_strategy() -> Strategy {
    Strategy::Optimized
}

/// Everything needed to run one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    pub shape: ShapeSpec,
    #[serde(default)]
    pub material: MaterialParams,
    pub load_cases: Vec<LoadCase>,
    #[serde(default)]
    pub weights: ObjectiveWeights,
    #[serde(default)]
    pub mesh: MeshConfig,
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
    #[serde(default)]
    pub plan: PlanConfig,
    #[serde(default)]
    pub field: FieldConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioFile {
    pub fn from_spec(spec: ScenarioSpec) -> Self {
        Self {
            name: spec.name,
            shape: spec.shape,
            material: spec.material,
            load_cases: spec.load_cases,
            weights: spec.weights,
            mesh: spec.mesh,
            strategy: Strategy::Optimized,
            plan: PlanConfig::default(),
            field: FieldConfig::default(),
            output_dir: None,
            seed: 0,
        }
    }

    pub fn spec(&self) -> ScenarioSpec {
        ScenarioSpec {
            name: self.name.clone(),
            shape: self.shape.clone(),
            material: self.material,
            load_cases: self.load_cases.clone(),
            weights: self.weights,
            mesh: self.mesh,
        }
    }

    /// Plan settings with the file's seed applied.
    pub fn plan_config(&self) -> PlanConfig {
        PlanConfig { rng_seed: self.seed, ..self.plan.clone() }
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let file: Self = serde_json::from_str(text)
            .map_err(|e| anyhow::anyhow!("invalid scenario at line {}, column {}: {e}", e.line(), e.column()))?;
        file.validate()?;
        Ok(file)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let p = &self.plan;
        if p.max_iterations == 0 || p.upsample_max_iterations == 0 {
            bail!("plan: iteration limits must be positive");
        }
        if !(p.gradient_tolerance > 0.0) {
            bail!("plan.gradient_tolerance must be positive");
        }
        let w = &p.walk;
        if !(w.step > 0.0) || !(w.max_length > 0.0) || w.restarts == 0 || w.downsample_keep == 0 {
            bail!("plan.walk: step, max_length, restarts and downsample_keep must be positive");
        }
        if !(self.field.h > 0.0) || self.field.weights.alpha_stress < 0.0 || self.field.weights.alpha_smooth < 0.0 {
            bail!("field: h must be positive and weights non-negative");
        }
        if let Strategy::Concentric { rings: 0, .. } = self.strategy {
            bail!("strategy: concentric needs at least one ring");
        }
        Ok(())
    }
}
