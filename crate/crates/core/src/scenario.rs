//! Scenario file format: one JSON document per scenario.
//!
//! ```json
//! {
//!   "map": {"path": "../maps/junction.json"},
//!   "agents": [{"id": 0, "kind": "generated", "policy": "lane_change",
//!               "samples": [[0.0, 12.0, 3.5, 9.0, 0.0], ...]}],
//!   "metadata": {"seed": 42, "scenario_index": 0, "generator_version": "0.1.0",
//!                "config": {...}, "originals_source": null, "stats": {...}}
//! }
//! ```
//!
//! Samples are `[t, x, y, v, heading]` at 10 Hz. The map is either a path
//! (resolved against the scenario file's directory, then the working
//! directory) or an embedded map document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::engine::{OriginalTrack, ScenarioStats, TrackSample};
use crate::error::{Error, Result};
use crate::frenet_smooth::SmoothingReport;
use crate::geom::Vec2;
use crate::gridify::{AgentId, OccupantKind};
use crate::map_model::{MapDocument, MapModel};
use crate::policy::PolicyKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapRef {
    Path(PathBuf),
    Embedded(MapDocument),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 5]", into = "[f64; 5]")]
pub struct Sample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub heading: f64,
}

impl From<[f64; 5]> for Sample {
    fn from(a: [f64; 5]) -> Self {
        Sample {
            t: a[0],
            x: a[1],
            y: a[2],
            v: a[3],
            heading: a[4],
        }
    }
}

impl From<Sample> for [f64; 5] {
    fn from(s: Sample) -> Self {
        [s.t, s.x, s.y, s.v, s.heading]
    }
}

impl Sample {
    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentRecord {
    pub id: u32,
    pub kind: OccupantKind,
    pub policy: PolicyKind,
    pub samples: Vec<Sample>,
}

/// Per-scenario smoothing totals over generated agents.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoothingSummary {
    pub agents: usize,
    pub unsmoothable_segments: usize,
    pub dilated_segments: usize,
    pub max_kappa: f64,
    pub max_ay: f64,
}

impl SmoothingSummary {
    pub fn add(&mut self, r: &SmoothingReport) {
        self.agents += 1;
        self.unsmoothable_segments += r.unsmoothable_segments;
        self.dilated_segments += r.dilated_segments;
        self.max_kappa = self.max_kappa.max(r.max_kappa);
        self.max_ay = self.max_ay.max(r.max_ay);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    /// Seed the scenario was simulated with.
    pub seed: u64,
    pub scenario_index: usize,
    pub generator_version: String,
    #[serde(default)]
    pub config: Option<RunConfig>,
    #[serde(default)]
    pub originals_source: Option<String>,
    #[serde(default)]
    pub stats: Option<ScenarioStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smoothing: Option<SmoothingSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub map: MapRef,
    pub agents: Vec<AgentRecord>,
    pub metadata: Metadata,
}

impl ScenarioFile {
    pub fn validate(&self) -> Result<()> {
        for a in &self.agents {
            if a.samples.windows(2).any(|w| !(w[1].t > w[0].t)) {
                return Err(Error::domain(format!("agent {} samples are not strictly time-ordered", a.id)));
            }
            if a.samples.iter().any(|s| !<[f64; 5]>::from(*s).iter().all(|v| v.is_finite())) {
                return Err(Error::domain(format!("agent {} has non-finite samples", a.id)));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let f: ScenarioFile = serde_json::from_str(text).map_err(|source| Error::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        f.validate()?;
        Ok(f)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ScenarioFile::parse(&text, path)
    }

    /// Compact JSON plus a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("scenario serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    /// Loads the referenced map; `file_path` is where this scenario lives.
    pub fn resolve_map(&self, file_path: &Path) -> Result<MapModel> {
        match &self.map {
            MapRef::Embedded(doc) => MapModel::from_document(doc.clone()),
            MapRef::Path(p) => crate::map_model::load_map(resolve_relative(p, file_path)),
        }
    }

    /// All agents as replayable tracks.
    pub fn tracks(&self) -> Vec<OriginalTrack> {
        self.agents
            .iter()
            .map(|a| OriginalTrack {
                id: AgentId(a.id),
                samples: a
                    .samples
                    .iter()
                    .map(|s| TrackSample {
                        t: s.t,
                        position: s.position(),
                        speed: s.v,
                        heading: s.heading,
                    })
                    .collect(),
            })
            .collect()
    }
}

/// Resolves `p` against the directory of `anchor_file`, falling back to the
/// working directory when that does not exist.
pub fn resolve_relative(p: &Path, anchor_file: &Path) -> PathBuf {
    if p.is_absolute() {
        return p.to_path_buf();
    }
    if let Some(dir) = anchor_file.parent() {
        let cand = dir.join(p);
        if cand.exists() {
            return cand;
        }
    }
    p.to_path_buf()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_file() -> ScenarioFile {
        ScenarioFile {
            map: MapRef::Path("maps/x.json".into()),
            agents: vec![AgentRecord {
                id: 3,
                kind: OccupantKind::Generated,
                policy: PolicyKind::Overtake,
                samples: vec![
                    Sample::from([0.0, 1.0 / 3.0, 2.0, 9.1, 0.1]),
                    Sample::from([0.1, 0.7, 2.0, 9.1, -3.0]),
                ],
            }],
            metadata: Metadata {
                seed: 42,
                scenario_index: 0,
                generator_version: "test".into(),
                config: Some(RunConfig::default()),
                originals_source: None,
                stats: Some(ScenarioStats::default()),
                smoothing: None,
            },
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let f = sample_file();
        let back = ScenarioFile::parse(&f.to_json(), Path::new("x")).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn sample_is_an_array() {
        let json = serde_json::to_string(&Sample::from([0.5, 1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(json, "[0.5,1.0,2.0,3.0,4.0]");
    }

    #[test]
    fn rejects_unordered_samples() {
        let mut f = sample_file();
        f.agents[0].samples[1].t = 0.0;
        assert!(ScenarioFile::parse(&f.to_json(), Path::new("x")).is_err());
    }

    #[test]
    fn rejects_unknown_policy() {
        let text = sample_file().to_json().replace("overtake", "teleport");
        assert!(ScenarioFile::parse(&text, Path::new("x")).is_err());
    }
}
