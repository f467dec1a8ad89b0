//! Run configuration. Every section has defaults, so a config file only
//! needs the keys it overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frenet_smooth::FeasibilityLimits;
use crate::metrics::MetricSettings;
use crate::policy::{DecisionParams, PolicyKind};

/// Disposition weights for spawned agents; must sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BehaviorMix {
    pub straight: f64,
    pub left_turn: f64,
    pub right_turn: f64,
    pub lane_change: f64,
    pub overtake: f64,
}

impl Default for BehaviorMix {
    fn default() -> Self {
        BehaviorMix {
            straight: 0.4,
            left_turn: 0.15,
            right_turn: 0.15,
            lane_change: 0.15,
            overtake: 0.15,
        }
    }
}

impl BehaviorMix {
    pub fn all_straight() -> Self {
        BehaviorMix {
            straight: 1.0,
            left_turn: 0.0,
            right_turn: 0.0,
            lane_change: 0.0,
            overtake: 0.0,
        }
    }

    pub fn weight(&self, kind: PolicyKind) -> f64 {
        match kind {
            PolicyKind::Straight => self.straight,
            PolicyKind::LeftTurn => self.left_turn,
            PolicyKind::RightTurn => self.right_turn,
            PolicyKind::LaneChange => self.lane_change,
            PolicyKind::Overtake => self.overtake,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w: Vec<f64> = PolicyKind::ALL.iter().map(|k| self.weight(*k)).collect();
        if w.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
            return Err(Error::Config("behavior_mix fractions must be non-negative".into()));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("behavior_mix fractions sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    pub disable_topology: bool,
    pub disable_collision: bool,
    pub disable_smoothing: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Step length (s).
    pub dt: f64,
    /// Number of steps; logs hold `horizon + 1` states.
    pub horizon: u32,
    pub seed: u64,
    pub n_generated: usize,
    /// Initial speed range (m/s).
    pub speed_range: [f64; 2],
    pub behavior_mix: BehaviorMix,
    /// Steps of constant-speed look-ahead for conflict prediction.
    pub prediction_horizon: u32,
    /// Margin added around each footprint in conflict prediction (m).
    pub clearance: f64,
    /// Consecutive deferrals before the maneuver branches are masked.
    pub max_deferrals: u32,
    pub ablation: Ablation,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 0.1,
            horizon: 110,
            seed: 42,
            n_generated: 10,
            speed_range: [6.0, 12.0],
            behavior_mix: BehaviorMix::default(),
            prediction_horizon: 30,
            clearance: 0.5,
            max_deferrals: 3,
            ablation: Ablation::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        let [lo, hi] = self.speed_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::Config(format!("speed_range must satisfy 0 < min <= max, got [{lo}, {hi}]")));
        }
        if !(self.clearance >= 0.0) {
            return Err(Error::Config("clearance must be non-negative".into()));
        }
        if self.max_deferrals == 0 {
            return Err(Error::Config("max_deferrals must be at least 1".into()));
        }
        self.behavior_mix.validate()
    }
}

fn default_scenarios() -> usize {
    1
}

/// Everything needed to reproduce a batch. `out_dir` and `parallelism` are
/// not echoed into outputs since they do not affect the generated content.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub decision: DecisionParams,
    #[serde(default)]
    pub limits: FeasibilityLimits,
    #[serde(default)]
    pub metrics: MetricSettings,
    #[serde(default = "default_scenarios")]
    pub scenarios: usize,
    #[serde(default)]
    pub map: Option<PathBuf>,
    #[serde(default)]
    pub originals: Option<PathBuf>,
    /// Embed the full map in each scenario file instead of its path.
    #[serde(default)]
    pub embed_map: bool,
    #[serde(default, skip_serializing)]
    pub out_dir: Option<PathBuf>,
    /// Worker threads; 0 means one per available core.
    #[serde(default, skip_serializing)]
    pub parallelism: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            sim: SimConfig::default(),
            decision: DecisionParams::default(),
            limits: FeasibilityLimits::default(),
            metrics: MetricSettings::default(),
            scenarios: default_scenarios(),
            map: None,
            originals: None,
            embed_map: false,
            out_dir: None,
            parallelism: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.decision.validate()?;
        self.limits.validate()?;
        if !(self.metrics.iou_threshold >= 0.0 && self.metrics.iou_threshold <= 1.0) {
            return Err(Error::Config("iou_threshold must lie in [0, 1]".into()));
        }
        if !(self.metrics.vehicle.length > 0.0 && self.metrics.vehicle.width > 0.0) {
            return Err(Error::Config("vehicle footprint must be positive".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|source| Error::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_json(&text, path)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Per-scenario seed: the batch seed xor the scenario index.
    pub fn scenario_seed(&self, index: usize) -> u64 {
        self.sim.seed ^ index as u64
    }
}
