//! Lane discretization into fixed-length cells, the cell-level topology and
//! the occupancy ledger.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::map_model::{estimate_lane_width, LaneId, LaneType, MapModel};

/// Default longitudinal cell length in meters.
pub const DEFAULT_CELL_LENGTH: f64 = 4.0;
/// Recorded agents farther than this from every lane are left out of the ledger.
pub const MAX_ORIGINAL_OFFSET: f64 = 10.0;

/// Reference to a cell: interned lane index plus longitudinal index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellRef {
    pub lane: u32,
    pub index: u32,
}

impl CellRef {
    pub const fn new(lane: u32, index: u32) -> Self {
        CellRef { lane, index }
    }
}

impl fmt::Display for CellRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.lane, self.index)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub cref: CellRef,
    pub center: Vec2,
    pub heading: f64,
    /// Arc length at which the cell starts.
    pub s_start: f64,
    pub length: f64,
    pub lane_type: LaneType,
    pub width: f64,
}

impl GridCell {
    pub fn s_center(&self) -> f64 {
        self.s_start + 0.5 * self.length
    }
}

#[derive(Debug, Clone)]
pub struct LaneGrid {
    pub id: LaneId,
    pub lane_type: LaneType,
    pub length: f64,
    pub width: f64,
    pub cells: Vec<GridCell>,
    /// Interned successor lanes (inter-lane links from the last cell).
    pub successors: Vec<u32>,
    /// Same-direction neighbor lanes, left first.
    pub lateral: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct GridTopology {
    pub cell_length: f64,
    lanes: Vec<LaneGrid>,
    index: HashMap<LaneId, u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Neighbors {
    pub forward: Option<CellRef>,
    pub lateral: Vec<CellRef>,
    pub successors: Vec<CellRef>,
}

/// Partitions every lane into `ceil(L / cell_length)` cells.
pub fn build_grid(map: &MapModel, cell_length: f64) -> Result<GridTopology> {
    if !(cell_length > 0.0 && cell_length.is_finite()) {
        return Err(Error::domain(format!("cell length must be positive, got {cell_length}")));
    }
    let index: HashMap<LaneId, u32> = map
        .lanes()
        .enumerate()
        .map(|(i, l)| (l.id.clone(), i as u32))
        .collect();
    let mut lanes = Vec::with_capacity(map.len());
    for (li, lane) in map.lanes().enumerate() {
        let length = lane.length();
        let n = cell_count(length, cell_length);
        let width = estimate_lane_width(lane);
        let cells = (0..n)
            .map(|j| {
                let s_start = j as f64 * cell_length;
                let len = if j + 1 == n { length - s_start } else { cell_length };
                let mid = s_start + 0.5 * len;
                GridCell {
                    cref: CellRef::new(li as u32, j as u32),
                    center: lane.point_at(mid),
                    heading: lane.heading_at(mid),
                    s_start,
                    length: len,
                    lane_type: lane.lane_type,
                    width,
                }
            })
            .collect();
        let successors = lane
            .successors
            .iter()
            .filter_map(|s| index.get(s).copied())
            .collect();
        let lateral = lane
            .same_direction_neighbors()
            .filter_map(|s| index.get(s).copied())
            .collect();
        lanes.push(LaneGrid {
            id: lane.id.clone(),
            lane_type: lane.lane_type,
            length,
            width,
            cells,
            successors,
            lateral,
        });
    }
    Ok(GridTopology {
        cell_length,
        lanes,
        index,
    })
}

/// `ceil(length / cell_length)`, at least one. A remainder below 1e-9 m is
/// treated as float noise rather than an extra sliver cell.
pub fn cell_count(length: f64, cell_length: f64) -> usize {
    let q = length / cell_length;
    let n = (q - 1e-9).ceil();
    (n.max(1.0)) as usize
}

impl GridTopology {
    pub fn lanes(&self) -> &[LaneGrid] {
        &self.lanes
    }

    pub fn lane(&self, lane: u32) -> &LaneGrid {
        &self.lanes[lane as usize]
    }

    pub fn lane_index(&self, id: &LaneId) -> Option<u32> {
        self.index.get(id).copied()
    }

    pub fn lane_id(&self, lane: u32) -> &LaneId {
        &self.lanes[lane as usize].id
    }

    pub fn cell(&self, c: CellRef) -> &GridCell {
        &self.lanes[c.lane as usize].cells[c.index as usize]
    }

    pub fn contains(&self, c: CellRef) -> bool {
        self.lanes
            .get(c.lane as usize)
            .is_some_and(|l| (c.index as usize) < l.cells.len())
    }

    pub fn cell_count(&self) -> usize {
        self.lanes.iter().map(|l| l.cells.len()).sum()
    }

    pub fn all_cells(&self) -> impl Iterator<Item = &GridCell> {
        self.lanes.iter().flat_map(|l| l.cells.iter())
    }

    /// Cell of `lane` whose arc-length interval contains `s` (clamped).
    pub fn locate(&self, lane: u32, s: f64) -> CellRef {
        let n = self.lanes[lane as usize].cells.len();
        let j = if s <= 0.0 {
            0
        } else {
            ((s / self.cell_length).floor() as usize).min(n - 1)
        };
        CellRef::new(lane, j as u32)
    }

    pub fn is_last(&self, c: CellRef) -> bool {
        c.index as usize + 1 == self.lanes[c.lane as usize].cells.len()
    }

    pub fn forward(&self, c: CellRef) -> Option<CellRef> {
        if self.is_last(c) {
            None
        } else {
            Some(CellRef::new(c.lane, c.index + 1))
        }
    }

    /// Same-index cell in `lane`, if that lane is long enough.
    pub fn aligned(&self, lane: u32, index: u32) -> Option<CellRef> {
        let c = CellRef::new(lane, index);
        self.contains(c).then_some(c)
    }

    pub fn neighbors(&self, c: CellRef) -> Result<Neighbors> {
        if !self.contains(c) {
            return Err(Error::domain(format!("unknown cell {c}")));
        }
        let lane = &self.lanes[c.lane as usize];
        let lateral = lane
            .lateral
            .iter()
            .filter_map(|&l| self.aligned(l, c.index))
            .collect();
        let successors = if self.is_last(c) {
            lane.successors.iter().map(|&l| CellRef::new(l, 0)).collect()
        } else {
            Vec::new()
        };
        Ok(Neighbors {
            forward: self.forward(c),
            lateral,
            successors,
        })
    }

    /// Copy with lateral and inter-lane links removed.
    pub fn without_links(&self) -> GridTopology {
        let mut g = self.clone();
        for l in &mut g.lanes {
            l.successors.clear();
            l.lateral.clear();
        }
        g
    }

    /// True when `to` is reachable from `from` through one link (forward,
    /// lateral, lateral-diagonal or inter-lane).
    pub fn is_linked(&self, from: CellRef, to: CellRef) -> bool {
        if from.lane == to.lane {
            return to.index == from.index + 1;
        }
        let lane = &self.lanes[from.lane as usize];
        if lane.lateral.contains(&to.lane) {
            return to.index == from.index || to.index == from.index + 1;
        }
        self.is_last(from) && to.index == 0 && lane.successors.contains(&to.lane)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AgentId(pub u32);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OccupantKind {
    Original,
    Generated,
}

/// Occupancy state of a cell: 0 free, 1 original, 2 generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sigma {
    Free = 0,
    Original = 1,
    Generated = 2,
}

impl Sigma {
    pub fn is_free(self) -> bool {
        self == Sigma::Free
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClaimOutcome {
    Granted,
    /// Granted to an original agent; the generated holder lost the cell.
    GrantedEvicting(AgentId),
    Refused,
}

impl ClaimOutcome {
    pub fn is_granted(self) -> bool {
        !matches!(self, ClaimOutcome::Refused)
    }
}

/// One cell's holders at a logged tick.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnapshotEntry {
    pub cell: CellRef,
    pub sigma: Sigma,
    pub owners: Vec<AgentId>,
}

/// Current occupancy of every cell plus an optional per-tick history.
///
/// Claims through [`try_claim`](OccupancyLedger::try_claim) keep at most one
/// owner per cell. [`force_occupy`](OccupancyLedger::force_occupy) bypasses
/// arbitration and may stack owners; each stacking is counted.
#[derive(Debug, Clone)]
pub struct OccupancyLedger {
    slots: Vec<Vec<Vec<(OccupantKind, AgentId)>>>,
    held: HashMap<AgentId, CellRef>,
    tick: u32,
    co_occupancy_events: u64,
    history: Option<Vec<(u32, Vec<SnapshotEntry>)>>,
}

impl OccupancyLedger {
    pub fn new(topology: &GridTopology) -> Self {
        let slots = topology
            .lanes()
            .iter()
            .map(|l| vec![Vec::new(); l.cells.len()])
            .collect();
        OccupancyLedger {
            slots,
            held: HashMap::new(),
            tick: 0,
            co_occupancy_events: 0,
            history: None,
        }
    }

    pub fn with_history(mut self) -> Self {
        self.history = Some(Vec::new());
        self
    }

    pub fn tick(&self) -> u32 {
        self.tick
    }

    pub fn set_tick(&mut self, tick: u32) {
        self.tick = tick;
    }

    fn slot(&self, c: CellRef) -> &Vec<(OccupantKind, AgentId)> {
        &self.slots[c.lane as usize][c.index as usize]
    }

    fn slot_mut(&mut self, c: CellRef) -> &mut Vec<(OccupantKind, AgentId)> {
        &mut self.slots[c.lane as usize][c.index as usize]
    }

    pub fn sigma(&self, c: CellRef) -> Sigma {
        let slot = self.slot(c);
        if slot.iter().any(|(k, _)| *k == OccupantKind::Original) {
            Sigma::Original
        } else if slot.is_empty() {
            Sigma::Free
        } else {
            Sigma::Generated
        }
    }

    pub fn owner(&self, c: CellRef) -> Option<AgentId> {
        self.slot(c).first().map(|(_, a)| *a)
    }

    pub fn owners(&self, c: CellRef) -> impl Iterator<Item = AgentId> + '_ {
        self.slot(c).iter().map(|(_, a)| *a)
    }

    pub fn cell_of(&self, agent: AgentId) -> Option<CellRef> {
        self.held.get(&agent).copied()
    }

    pub fn co_occupancy_events(&self) -> u64 {
        self.co_occupancy_events
    }

    /// Records `agent` in `cell` iff the cell is free, or the claimant is an
    /// original agent (which evicts a generated holder). The claimant's
    /// previously held cell is released on success.
    pub fn try_claim(&mut self, cell: CellRef, tick: u32, agent: AgentId, kind: OccupantKind) -> ClaimOutcome {
        self.tick = tick;
        let slot = self.slot(cell);
        if slot.iter().any(|(_, a)| *a == agent) {
            return ClaimOutcome::Granted;
        }
        let outcome = match (slot.first().copied(), kind) {
            (None, _) => ClaimOutcome::Granted,
            (Some((OccupantKind::Generated, holder)), OccupantKind::Original) => {
                ClaimOutcome::GrantedEvicting(holder)
            }
            _ => ClaimOutcome::Refused,
        };
        if let ClaimOutcome::GrantedEvicting(holder) = outcome {
            self.slot_mut(cell).clear();
            self.held.remove(&holder);
        }
        if outcome.is_granted() {
            self.release(agent);
            self.slot_mut(cell).push((kind, agent));
            self.held.insert(agent, cell);
        }
        outcome
    }

    /// Occupies without arbitration. Returns true if another agent already
    /// held the cell (a co-occupancy event).
    pub fn force_occupy(&mut self, cell: CellRef, tick: u32, agent: AgentId, kind: OccupantKind) -> bool {
        self.tick = tick;
        if self.held.get(&agent) == Some(&cell) {
            return false;
        }
        self.release(agent);
        let slot = self.slot_mut(cell);
        let clash = !slot.is_empty();
        slot.push((kind, agent));
        self.held.insert(agent, cell);
        if clash {
            self.co_occupancy_events += 1;
        }
        clash
    }

    /// Frees whatever cell `agent` holds.
    pub fn release(&mut self, agent: AgentId) -> Option<CellRef> {
        let cell = self.held.remove(&agent)?;
        self.slot_mut(cell).retain(|(_, a)| *a != agent);
        Some(cell)
    }

    /// Cells currently holding more than one agent.
    pub fn co_occupied_cells(&self) -> usize {
        self.slots.iter().flatten().filter(|s| s.len() > 1).count()
    }

    pub fn snapshot(&self) -> Vec<SnapshotEntry> {
        let mut out = Vec::new();
        for (li, lane) in self.slots.iter().enumerate() {
            for (j, slot) in lane.iter().enumerate() {
                if slot.is_empty() {
                    continue;
                }
                let cell = CellRef::new(li as u32, j as u32);
                out.push(SnapshotEntry {
                    cell,
                    sigma: self.sigma(cell),
                    owners: slot.iter().map(|(_, a)| *a).collect(),
                });
            }
        }
        out
    }

    /// Appends the current state to the history (no-op without history).
    pub fn record(&mut self, tick: u32) {
        if self.history.is_some() {
            let snap = self.snapshot();
            if let Some(h) = self.history.as_mut() {
                h.push((tick, snap));
            }
        }
    }

    pub fn history(&self) -> Option<&[(u32, Vec<SnapshotEntry>)]> {
        self.history.as_deref()
    }
}

/// Result of mapping recorded agents onto the grid for one tick.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OriginalMapping {
    pub evicted: Vec<AgentId>,
    pub skipped: usize,
}

/// Projects each recorded agent to its nearest lane, then to the cell whose
/// interval contains the foot point, and claims it with original priority.
/// Agents missing from `positions` release their cells.
pub fn map_original_agents(
    topology: &GridTopology,
    map: &MapModel,
    ledger: &mut OccupancyLedger,
    positions: &[(AgentId, Vec2)],
    all_originals: &[AgentId],
    tick: u32,
) -> OriginalMapping {
    let mut out = OriginalMapping::default();
    for id in all_originals {
        if !positions.iter().any(|(a, _)| a == id) {
            ledger.release(*id);
        }
    }
    for &(agent, p) in positions {
        let Some(cell) = original_cell(topology, map, p) else {
            ledger.release(agent);
            out.skipped += 1;
            continue;
        };
        if let ClaimOutcome::GrantedEvicting(g) = ledger.try_claim(cell, tick, agent, OccupantKind::Original) {
            out.evicted.push(g);
        }
    }
    out
}

/// Nearest-lane then interval lookup; `None` when the point is off-map.
pub fn original_cell(topology: &GridTopology, map: &MapModel, p: Vec2) -> Option<CellRef> {
    let mut best: Option<(&LaneGrid, u32, f64, f64)> = None;
    for lane in map.lanes() {
        let (s, _, dist) = lane.project(p);
        if best.as_ref().is_none_or(|b| dist < b.3) {
            let li = topology.lane_index(&lane.id)?;
            best = Some((topology.lane(li), li, s, dist));
        }
    }
    let (_, li, s, dist) = best?;
    (dist <= MAX_ORIGINAL_OFFSET).then(|| topology.locate(li, s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map_model::{LaneSpec, MapModel};

    pub(crate) fn lane_spec(id: &str, y: f64, len: f64) -> LaneSpec {
        LaneSpec {
            id: id.into(),
            centerline: vec![Vec2::new(0.0, y), Vec2::new(len, y)],
            left_boundary: None,
            right_boundary: None,
            lane_type: LaneType::Straight,
            successors: vec![],
            predecessors: vec![],
            left_neighbor: None,
            right_neighbor: None,
            neighbor_same_direction: None,
            left_same_direction: None,
            right_same_direction: None,
        }
    }

    fn single(len: f64) -> GridTopology {
        let map = MapModel::new(vec![lane_spec("A", 0.0, len)], vec![]).unwrap();
        build_grid(&map, 4.0).unwrap()
    }

    #[test]
    fn cell_counts() {
        let g = single(40.0);
        assert_eq!(g.lane(0).cells.len(), 10);
        assert!(g.lane(0).cells.iter().all(|c| c.length == 4.0));
        let g = single(41.0);
        assert_eq!(g.lane(0).cells.len(), 11);
        assert!((g.lane(0).cells[10].length - 1.0).abs() < 1e-12);
        assert!((g.lane(0).cells[10].center.x - 40.5).abs() < 1e-12);
        let g = single(2.0);
        assert_eq!(g.lane(0).cells.len(), 1);
        assert_eq!(g.lane(0).cells[0].length, 2.0);
    }

    #[test]
    fn rejects_nonpositive_resolution() {
        let map = MapModel::new(vec![lane_spec("A", 0.0, 10.0)], vec![]).unwrap();
        assert!(build_grid(&map, 0.0).is_err());
        assert!(build_grid(&map, -1.0).is_err());
    }

    #[test]
    fn forward_and_successor_links() {
        let mut a = lane_spec("A", 0.0, 40.0);
        a.successors = vec!["B".into()];
        let b = LaneSpec {
            centerline: vec![Vec2::new(40.0, 0.0), Vec2::new(80.0, 0.0)],
            ..lane_spec("B", 0.0, 40.0)
        };
        let map = MapModel::new(vec![a, b], vec![]).unwrap();
        let g = build_grid(&map, 4.0).unwrap();
        let n = g.neighbors(CellRef::new(0, 3)).unwrap();
        assert_eq!(n.forward, Some(CellRef::new(0, 4)));
        assert!(n.successors.is_empty());
        let n = g.neighbors(CellRef::new(0, 9)).unwrap();
        assert_eq!(n.forward, None);
        assert_eq!(n.successors, vec![CellRef::new(1, 0)]);
        assert!(g.neighbors(CellRef::new(0, 10)).is_err());
        let stripped = g.without_links();
        assert!(stripped.neighbors(CellRef::new(0, 9)).unwrap().successors.is_empty());
    }

    #[test]
    fn claims_follow_priority() {
        let g = single(40.0);
        let mut l = OccupancyLedger::new(&g);
        let c = CellRef::new(0, 2);
        assert_eq!(l.try_claim(c, 0, AgentId(1), OccupantKind::Generated), ClaimOutcome::Granted);
        assert_eq!(l.sigma(c), Sigma::Generated);
        assert_eq!(l.try_claim(c, 0, AgentId(2), OccupantKind::Generated), ClaimOutcome::Refused);
        assert_eq!(
            l.try_claim(c, 0, AgentId(9), OccupantKind::Original),
            ClaimOutcome::GrantedEvicting(AgentId(1))
        );
        assert_eq!(l.sigma(c), Sigma::Original);
        assert_eq!(l.cell_of(AgentId(1)), None);
        assert_eq!(l.try_claim(c, 0, AgentId(1), OccupantKind::Generated), ClaimOutcome::Refused);
        // originals never displace originals
        assert_eq!(l.try_claim(c, 0, AgentId(10), OccupantKind::Original), ClaimOutcome::Refused);
    }

    #[test]
    fn claim_moves_agent() {
        let g = single(40.0);
        let mut l = OccupancyLedger::new(&g);
        l.try_claim(CellRef::new(0, 2), 0, AgentId(1), OccupantKind::Generated);
        l.try_claim(CellRef::new(0, 3), 1, AgentId(1), OccupantKind::Generated);
        assert!(l.sigma(CellRef::new(0, 2)).is_free());
        assert_eq!(l.owner(CellRef::new(0, 3)), Some(AgentId(1)));
    }

    #[test]
    fn force_occupy_counts_clashes() {
        let g = single(40.0);
        let mut l = OccupancyLedger::new(&g);
        let c = CellRef::new(0, 0);
        assert!(!l.force_occupy(c, 0, AgentId(1), OccupantKind::Generated));
        assert!(l.force_occupy(c, 0, AgentId(2), OccupantKind::Generated));
        assert_eq!(l.co_occupancy_events(), 1);
        assert_eq!(l.co_occupied_cells(), 1);
        l.release(AgentId(1));
        assert_eq!(l.owner(c), Some(AgentId(2)));
    }

    #[test]
    fn original_mapping_hands_over() {
        let map = MapModel::new(vec![lane_spec("A", 0.0, 40.0)], vec![]).unwrap();
        let g = build_grid(&map, 4.0).unwrap();
        let mut l = OccupancyLedger::new(&g);
        let ids = [AgentId(0), AgentId(1)];
        let r = map_original_agents(&g, &map, &mut l, &[(ids[0], Vec2::new(10.0, 0.0)), (ids[1], Vec2::new(30.0, 0.5))], &ids, 0);
        assert_eq!(r, OriginalMapping::default());
        assert_eq!(l.sigma(CellRef::new(0, 2)), Sigma::Original);
        assert_eq!(l.owner(CellRef::new(0, 7)), Some(ids[1]));
        map_original_agents(&g, &map, &mut l, &[(ids[0], Vec2::new(12.5, 0.0))], &ids, 1);
        assert!(l.sigma(CellRef::new(0, 2)).is_free());
        assert_eq!(l.owner(CellRef::new(0, 3)), Some(ids[0]));
        assert!(l.sigma(CellRef::new(0, 7)).is_free());
        let r = map_original_agents(&g, &map, &mut l, &[(ids[0], Vec2::new(12.5, 30.0))], &ids, 2);
        assert_eq!(r.skipped, 1);
    }
}
