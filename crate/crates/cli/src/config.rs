use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vcplan_core::composite::{GridLayout, DEFAULT_CELL_SIZE};
use vcplan_core::objective::LossWeights;
use vcplan_core::planner::PlannerConfig;
use vcplan_core::scenario::Scenario;
use vcplan_core::trainer::TrainConfig;

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayoutConfig {
    /// Camera cell side S in pixels; the composite frame is 3·S.
    pub cell_size: u32,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        Self {
            cell_size: DEFAULT_CELL_SIZE,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub scenarios: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub planner: PlannerConfig,
    pub train: TrainConfig,
    pub loss: LossWeights,
    pub layout: LayoutConfig,
    pub paths: PathsConfig,
    /// When set, overrides both `train.seed` and `planner.init_seed`.
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        cfg.apply_seed();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Defaults, or the file at `path` when given.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    pub fn apply_seed(&mut self) {
        if let Some(seed) = self.seed {
            self.train.seed = seed;
            self.planner.init_seed = seed;
        }
    }

    pub fn layout(&self) -> GridLayout {
        GridLayout::standard(self.layout.cell_size)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.planner.validate()?;
        self.train.validate()?;
        self.loss.validate()?;
        self.layout().validate()?;
        let extent = 3.0 * self.layout.cell_size as f64;
        if self.planner.pixel_scale != extent {
            return Err(CliError::Usage(format!(
                "planner.pixel_scale {} must equal the composite side 3·layout.cell_size = {extent}",
                self.planner.pixel_scale
            )));
        }
        Ok(())
    }

    /// Every scenario must match the planner's horizons.
    pub fn check_scenarios(&self, scenarios: &[Scenario]) -> Result<(), CliError> {
        for s in scenarios {
            if s.t_past != self.planner.t_past {
                return Err(CliError::Usage(format!(
                    "scenario {}: t_past {} differs from planner.t_past {}",
                    s.id, s.t_past, self.planner.t_past
                )));
            }
            if s.t_future != self.planner.t_future {
                return Err(CliError::Usage(format!(
                    "scenario {}: T_future {} differs from planner.t_future {}",
                    s.id, s.t_future, self.planner.t_future
                )));
            }
        }
        Ok(())
    }
}
