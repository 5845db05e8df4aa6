use std::path::Path;

use serde::{Deserialize, Serialize};
use tournav::eval::SuiteConfig;
use tournav::goalfinder::GoalFinderConfig;
use tournav::localization::LocalizerConfig;
use tournav::sim::{NoiseModel, WorldSpec};
use tournav::topograph::EdgeRule;

use crate::CliError;

/// Every tunable default in one JSON document; missing keys keep their
/// built-in values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub world: WorldSpec,
    pub tour: TourSettings,
    pub edge_rule: EdgeRule,
    pub graph_scale: f64,
    pub localizer: LocalizerConfig,
    pub noise: NoiseModel,
    pub goal_finder: GoalFinderConfig,
    pub suite: SuiteConfig,
    pub remote: RemoteSettings,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            world: WorldSpec::default(),
            tour: TourSettings::default(),
            edge_rule: EdgeRule::default(),
            graph_scale: 1.0,
            localizer: LocalizerConfig::default(),
            noise: NoiseModel::default(),
            goal_finder: GoalFinderConfig::default(),
            suite: SuiteConfig::default(),
            remote: RemoteSettings::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TourSettings {
    pub frames: usize,
    pub fps: f64,
}

impl Default for TourSettings {
    fn default() -> Self {
        Self { frames: 948, fps: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteSettings {
    pub model: String,
    pub timeout_secs: u64,
    pub retries: usize,
}

impl Default for RemoteSettings {
    fn default() -> Self {
        Self {
            model: "default".into(),
            timeout_secs: 60,
            retries: 2,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("bad config {}: {e}", path.display())))
    }

    /// `--seed` overrides every seed in the file.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.world.seed = seed;
        self.suite.seed = seed;
        self.localizer.ransac.seed = seed;
        self
    }
}
