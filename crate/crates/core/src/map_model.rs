//! Static lane-level map: centerlines with arc-length tables, boundaries,
//! connectivity and the drivable area, plus the JSON interchange loader.
//!
//! # Interchange format
//!
//! ```json
//! {
//!   "lanes": [{
//!     "id": "A",
//!     "centerline": [[0.0, 0.0], [40.0, 0.0]],
//!     "left_boundary": [[0.0, 1.75], [40.0, 1.75]],
//!     "right_boundary": [[0.0, -1.75], [40.0, -1.75]],
//!     "lane_type": "straight",
//!     "successors": ["B"], "predecessors": [],
//!     "left_neighbor": null, "right_neighbor": "C",
//!     "neighbor_same_direction": true
//!   }],
//!   "drivable_area": [[[0.0, -1.75], [40.0, -1.75], [40.0, 1.75], [0.0, 1.75]]]
//! }
//! ```
//!
//! `lane_type` is one of `straight`, `left_turn`, `right_turn`. Boundaries,
//! connectivity lists and neighbors are optional. `neighbor_same_direction`
//! (default `true`) applies to both neighbors unless overridden per side with
//! `left_same_direction` / `right_same_direction`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{project_onto_segment, resample, Vec2};

/// Lane width used when a lane has no boundary geometry.
pub const DEFAULT_LANE_WIDTH: f64 = 3.5;
/// Number of points both boundaries are resampled to before pairing.
pub const WIDTH_PAIRING_SAMPLES: usize = 32;
const MIN_POINT_SEPARATION: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LaneId(pub String);

impl LaneId {
    pub fn new(s: impl Into<String>) -> Self {
        LaneId(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for LaneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for LaneId {
    fn from(s: &str) -> Self {
        LaneId(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaneType {
    Straight,
    LeftTurn,
    RightTurn,
}

/// Cumulative arc length at each centerline vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct ArcLengthTable {
    pub cumulative_s: Vec<f64>,
    pub total_length: f64,
}

impl ArcLengthTable {
    /// Index of the segment `[i, i+1]` containing arc length `s`.
    fn segment_at(&self, s: f64) -> usize {
        let n = self.cumulative_s.len();
        match self
            .cumulative_s
            .binary_search_by(|v| v.partial_cmp(&s).unwrap_or(std::cmp::Ordering::Less))
        {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        }
    }
}

/// Builds the arc-length table of a polyline.
pub fn arc_length_param(centerline: &[Vec2]) -> Result<ArcLengthTable> {
    if centerline.len() < 2 {
        return Err(Error::domain("polyline needs at least 2 points"));
    }
    let mut cumulative_s = Vec::with_capacity(centerline.len());
    cumulative_s.push(0.0);
    let mut acc = 0.0;
    for (i, w) in centerline.windows(2).enumerate() {
        let d = w[0].dist(w[1]);
        if d <= MIN_POINT_SEPARATION {
            return Err(Error::domain(format!(
                "repeated point at index {} of polyline",
                i + 1
            )));
        }
        acc += d;
        cumulative_s.push(acc);
    }
    Ok(ArcLengthTable {
        cumulative_s,
        total_length: acc,
    })
}

/// Point at arc length `s` on the polyline.
pub fn point_at_arclength(table: &ArcLengthTable, centerline: &[Vec2], s: f64) -> Result<Vec2> {
    if !(0.0..=table.total_length).contains(&s) {
        return Err(Error::domain(format!(
            "arc length {s} outside [0, {}]",
            table.total_length
        )));
    }
    Ok(interpolate(table, centerline, s))
}

fn interpolate(table: &ArcLengthTable, centerline: &[Vec2], s: f64) -> Vec2 {
    let i = table.segment_at(s);
    let s0 = table.cumulative_s[i];
    let s1 = table.cumulative_s[i + 1];
    let t = ((s - s0) / (s1 - s0)).clamp(0.0, 1.0);
    centerline[i].lerp(centerline[i + 1], t)
}

/// Heading of the segment containing `s`. At a vertex the following segment
/// is used, at the final vertex the preceding one.
pub fn heading_at_arclength(table: &ArcLengthTable, centerline: &[Vec2], s: f64) -> f64 {
    let s = s.clamp(0.0, table.total_length);
    let n = table.cumulative_s.len();
    let mut i = table.segment_at(s);
    // segment_at returns the preceding segment on an exact vertex hit
    if i + 2 < n && s >= table.cumulative_s[i + 1] {
        i += 1;
    }
    (centerline[i + 1] - centerline[i]).angle()
}

/// Closest point on a polyline: `(s, signed d, unsigned distance)`.
/// `d` is positive to the left of the travel direction.
pub fn project_onto_polyline(table: &ArcLengthTable, centerline: &[Vec2], p: Vec2) -> (f64, f64, f64) {
    let mut best = (0.0, 0.0, f64::INFINITY);
    for (i, w) in centerline.windows(2).enumerate() {
        let (t, foot) = project_onto_segment(p, w[0], w[1]);
        let dist = p.dist(foot);
        if dist < best.2 {
            let dir = w[1] - w[0];
            let side = dir.cross(p - foot);
            let d = if side >= 0.0 { dist } else { -dist };
            let s = table.cumulative_s[i] + t * (table.cumulative_s[i + 1] - table.cumulative_s[i]);
            best = (s, d, dist);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lane {
    pub id: LaneId,
    pub centerline: Vec<Vec2>,
    pub left_boundary: Option<Vec<Vec2>>,
    pub right_boundary: Option<Vec<Vec2>>,
    pub lane_type: LaneType,
    pub successors: Vec<LaneId>,
    pub predecessors: Vec<LaneId>,
    pub left_neighbor: Option<LaneId>,
    pub right_neighbor: Option<LaneId>,
    pub left_same_direction: bool,
    pub right_same_direction: bool,
    pub arc: ArcLengthTable,
}

impl Lane {
    pub fn length(&self) -> f64 {
        self.arc.total_length
    }

    /// Point at arc length `s`, clamped to the lane.
    pub fn point_at(&self, s: f64) -> Vec2 {
        interpolate(&self.arc, &self.centerline, s.clamp(0.0, self.length()))
    }

    pub fn heading_at(&self, s: f64) -> f64 {
        heading_at_arclength(&self.arc, &self.centerline, s)
    }

    /// `(s, d, |d|)` of the foot point of `p` on this lane's centerline.
    pub fn project(&self, p: Vec2) -> (f64, f64, f64) {
        project_onto_polyline(&self.arc, &self.centerline, p)
    }

    /// Neighbors admissible for lane changes (same travel direction).
    pub fn same_direction_neighbors(&self) -> impl Iterator<Item = &LaneId> {
        let left = self.left_neighbor.as_ref().filter(|_| self.left_same_direction);
        let right = self.right_neighbor.as_ref().filter(|_| self.right_same_direction);
        left.into_iter().chain(right)
    }
}

/// Mean distance between index-paired boundary points, or the default width
/// when either boundary is missing.
pub fn estimate_lane_width(lane: &Lane) -> f64 {
    match (&lane.left_boundary, &lane.right_boundary) {
        (Some(l), Some(r)) if l.len() >= 2 && r.len() >= 2 => {
            let l = resample(l, WIDTH_PAIRING_SAMPLES);
            let r = resample(r, WIDTH_PAIRING_SAMPLES);
            l.iter().zip(&r).map(|(a, b)| a.dist(*b)).sum::<f64>() / WIDTH_PAIRING_SAMPLES as f64
        }
        _ => DEFAULT_LANE_WIDTH,
    }
}

#[derive(Debug, Clone)]
pub struct MapModel {
    lanes: BTreeMap<LaneId, Lane>,
    pub drivable_area: Vec<Vec<Vec2>>,
}

impl MapModel {
    pub fn lane(&self, id: &LaneId) -> Option<&Lane> {
        self.lanes.get(id)
    }

    /// Lanes in ascending id order.
    pub fn lanes(&self) -> impl Iterator<Item = &Lane> {
        self.lanes.values()
    }

    pub fn len(&self) -> usize {
        self.lanes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lanes.is_empty()
    }

    /// Lane whose centerline is nearest to `p`; ties go to the smallest id.
    pub fn project_to_lane(&self, p: Vec2) -> Result<(LaneId, f64, f64)> {
        let mut best: Option<(&Lane, f64, f64, f64)> = None;
        for lane in self.lanes.values() {
            let (s, d, dist) = lane.project(p);
            if best.as_ref().is_none_or(|b| dist < b.3) {
                best = Some((lane, s, d, dist));
            }
        }
        best.map(|(l, s, d, _)| (l.id.clone(), s, d))
            .ok_or_else(|| Error::domain("cannot project onto an empty map"))
    }

    /// Builds and validates a map from lanes and drivable-area polygons.
    pub fn new(lanes: Vec<LaneSpec>, drivable_area: Vec<Vec<Vec2>>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for spec in lanes {
            let id = LaneId(spec.id.clone());
            if map.contains_key(&id) {
                return Err(Error::validation(&spec.id, "duplicate lane id"));
            }
            let arc = arc_length_param(&spec.centerline)
                .map_err(|e| Error::validation(&spec.id, format!("degenerate centerline: {e}")))?;
            let default_same = spec.neighbor_same_direction.unwrap_or(true);
            let lane = Lane {
                id: id.clone(),
                centerline: spec.centerline,
                left_boundary: spec.left_boundary,
                right_boundary: spec.right_boundary,
                lane_type: spec.lane_type,
                successors: spec.successors.into_iter().map(LaneId).collect(),
                predecessors: spec.predecessors.into_iter().map(LaneId).collect(),
                left_neighbor: spec.left_neighbor.map(LaneId),
                right_neighbor: spec.right_neighbor.map(LaneId),
                left_same_direction: spec.left_same_direction.unwrap_or(default_same),
                right_same_direction: spec.right_same_direction.unwrap_or(default_same),
                arc,
            };
            map.insert(id, lane);
        }
        validate_references(&map)?;
        Ok(MapModel {
            lanes: map,
            drivable_area,
        })
    }

    pub fn from_document(doc: MapDocument) -> Result<Self> {
        MapModel::new(doc.lanes, doc.drivable_area)
    }

    pub fn to_document(&self) -> MapDocument {
        MapDocument {
            lanes: self.lanes.values().map(LaneSpec::from).collect(),
            drivable_area: self.drivable_area.clone(),
        }
    }
}

fn validate_references(lanes: &BTreeMap<LaneId, Lane>) -> Result<()> {
    for lane in lanes.values() {
        for (what, list) in [("successor", &lane.successors), ("predecessor", &lane.predecessors)] {
            for other in list {
                if !lanes.contains_key(other) {
                    return Err(Error::validation(
                        lane.id.as_str(),
                        format!("{what} {other} does not exist"),
                    ));
                }
            }
        }
        let sides = [
            ("left", &lane.left_neighbor, lane.left_same_direction),
            ("right", &lane.right_neighbor, lane.right_same_direction),
        ];
        for (side, neighbor, same) in sides {
            let Some(nid) = neighbor else { continue };
            // a neighbor absent from the map is tolerated (clipped map extracts)
            let Some(other) = lanes.get(nid) else { continue };
            let back = match (side, same) {
                ("left", true) | ("right", false) => &other.right_neighbor,
                _ => &other.left_neighbor,
            };
            if back.as_ref() != Some(&lane.id) {
                return Err(Error::validation(
                    lane.id.as_str(),
                    format!("{side} neighbor {nid} does not link back"),
                ));
            }
        }
    }
    Ok(())
}

/// Serialized lane record of the interchange format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaneSpec {
    pub id: String,
    pub centerline: Vec<Vec2>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left_boundary: Option<Vec<Vec2>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right_boundary: Option<Vec<Vec2>>,
    pub lane_type: LaneType,
    #[serde(default)]
    pub successors: Vec<String>,
    #[serde(default)]
    pub predecessors: Vec<String>,
    #[serde(default)]
    pub left_neighbor: Option<String>,
    #[serde(default)]
    pub right_neighbor: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neighbor_same_direction: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left_same_direction: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right_same_direction: Option<bool>,
}

impl From<&Lane> for LaneSpec {
    fn from(l: &Lane) -> Self {
        LaneSpec {
            id: l.id.0.clone(),
            centerline: l.centerline.clone(),
            left_boundary: l.left_boundary.clone(),
            right_boundary: l.right_boundary.clone(),
            lane_type: l.lane_type,
            successors: l.successors.iter().map(|x| x.0.clone()).collect(),
            predecessors: l.predecessors.iter().map(|x| x.0.clone()).collect(),
            left_neighbor: l.left_neighbor.as_ref().map(|x| x.0.clone()),
            right_neighbor: l.right_neighbor.as_ref().map(|x| x.0.clone()),
            neighbor_same_direction: None,
            left_same_direction: Some(l.left_same_direction),
            right_same_direction: Some(l.right_same_direction),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapDocument {
    pub lanes: Vec<LaneSpec>,
    #[serde(default)]
    pub drivable_area: Vec<Vec<Vec2>>,
}

pub fn parse_map(text: &str, path: &Path) -> Result<MapModel> {
    let doc: MapDocument = serde_json::from_str(text).map_err(|source| Error::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    MapModel::from_document(doc)
}

pub fn load_map(path: impl AsRef<Path>) -> Result<MapModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_map(&text, path)
}
