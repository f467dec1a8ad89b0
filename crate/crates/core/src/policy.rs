//! Per-agent decision rule: lane change first (once triggered), then overtake
//! evaluation when a blocker is in view, else the lane-type default.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::gridify::{AgentId, CellRef, GridTopology, OccupancyLedger};
use crate::map_model::LaneType;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Straight,
    LeftTurn,
    RightTurn,
    LaneChange,
    Overtake,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::Straight,
        PolicyKind::LeftTurn,
        PolicyKind::RightTurn,
        PolicyKind::LaneChange,
        PolicyKind::Overtake,
    ];

    /// Short behavior label used in distribution reports.
    pub fn label(self) -> &'static str {
        match self {
            PolicyKind::Straight => "ST",
            PolicyKind::LeftTurn => "LT",
            PolicyKind::RightTurn => "RT",
            PolicyKind::LaneChange => "LC",
            PolicyKind::Overtake => "OT",
        }
    }

    pub fn for_lane(t: LaneType) -> Self {
        match t {
            LaneType::Straight => PolicyKind::Straight,
            LaneType::LeftTurn => PolicyKind::LeftTurn,
            LaneType::RightTurn => PolicyKind::RightTurn,
        }
    }

    /// Rank used to pick one label for an agent that executed several
    /// policies: the rarer maneuver wins.
    pub fn salience(self) -> u8 {
        match self {
            PolicyKind::Straight => 0,
            PolicyKind::RightTurn => 1,
            PolicyKind::LeftTurn => 2,
            PolicyKind::LaneChange => 3,
            PolicyKind::Overtake => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub position: Vec2,
    pub speed: f64,
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedAgent {
    pub id: AgentId,
    pub state: AgentState,
    pub cell: CellRef,
    pub policy: PolicyKind,
    /// Behavior the agent was spawned to exhibit.
    pub disposition: PolicyKind,
    pub trigger_time: Option<u32>,
    /// Remaining cells of an active lane-change or overtake maneuver.
    pub maneuver_plan: Vec<CellRef>,
    /// Speed at the entrance of the current lane, for turn shaping.
    pub entry_speed: f64,
    pub lane_changed: bool,
}

impl GeneratedAgent {
    pub fn is_executing(&self) -> bool {
        !self.maneuver_plan.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecisionParams {
    pub d_obs: f64,
    pub safe_gap_front: f64,
    pub safe_gap_rear: f64,
    pub d_overtake: f64,
    pub cell_length: f64,
    pub f_left_min: f64,
    pub f_right_min: f64,
}

impl Default for DecisionParams {
    fn default() -> Self {
        DecisionParams {
            d_obs: 30.0,
            safe_gap_front: 10.0,
            safe_gap_rear: 8.0,
            d_overtake: 20.0,
            cell_length: 4.0,
            f_left_min: 0.5,
            f_right_min: 0.75,
        }
    }
}

impl DecisionParams {
    pub fn validate(&self) -> Result<()> {
        let lengths = [
            ("d_obs", self.d_obs),
            ("safe_gap_front", self.safe_gap_front),
            ("safe_gap_rear", self.safe_gap_rear),
            ("d_overtake", self.d_overtake),
            ("cell_length", self.cell_length),
        ];
        for (name, v) in lengths {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0 < self.f_left_min && self.f_left_min < self.f_right_min && self.f_right_min <= 1.0) {
            return Err(Error::Config(format!(
                "need 0 < f_left_min < f_right_min <= 1, got {} / {}",
                self.f_left_min, self.f_right_min
            )));
        }
        Ok(())
    }

    /// Cells scanned ahead for a blocker.
    pub fn horizon_cells(&self) -> u32 {
        (self.d_obs / self.cell_length).floor() as u32
    }

    /// Lane length that must remain past the current index for a lane change.
    pub fn min_lane_change_room(&self) -> f64 {
        2.0 * self.cell_length + self.safe_gap_front
    }
}

/// Branches suppressed when re-deciding after repeated deferrals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BranchMask {
    pub lane_change: bool,
    pub overtake: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    Move {
        next: CellRef,
        policy: PolicyKind,
        /// Cells to follow after `next` (maneuvers only).
        plan: Vec<CellRef>,
    },
    /// Lane end without a usable successor.
    Terminal,
}

pub fn decide(
    agent: &GeneratedAgent,
    ledger: &OccupancyLedger,
    topology: &GridTopology,
    tick: u32,
    params: &DecisionParams,
    mask: BranchMask,
) -> Decision {
    if let Some((&next, rest)) = agent.maneuver_plan.split_first() {
        if topology.is_linked(agent.cell, next) {
            return Decision::Move {
                next,
                policy: agent.policy,
                plan: rest.to_vec(),
            };
        }
    }

    let triggered = agent.trigger_time.is_some_and(|t| tick >= t);
    if agent.disposition == PolicyKind::LaneChange && !agent.lane_changed && triggered && !mask.lane_change {
        if let Some(next) = lane_change_feasible(agent, ledger, topology, params) {
            return Decision::Move {
                next,
                policy: PolicyKind::LaneChange,
                plan: Vec::new(),
            };
        }
    }

    if first_blocker(agent.cell, ledger, topology, params).is_some()
        && agent.disposition == PolicyKind::Overtake
        && !mask.overtake
    {
        if let Some(plan) = overtake_feasible(agent, ledger, topology, params) {
            let (&next, rest) = plan.split_first().expect("overtake plans are non-empty");
            return Decision::Move {
                next,
                policy: PolicyKind::Overtake,
                plan: rest.to_vec(),
            };
        }
    }

    match next_along_route(agent.cell, agent.disposition, topology) {
        Some(next) => Decision::Move {
            next,
            policy: PolicyKind::for_lane(topology.lane(next.lane).lane_type),
            plan: Vec::new(),
        },
        None => Decision::Terminal,
    }
}

/// Forward cell, or at a lane end the successor lane preferred by the
/// agent's disposition. Straight-disposed agents only take straight lanes.
pub fn next_along_route(cell: CellRef, disposition: PolicyKind, topology: &GridTopology) -> Option<CellRef> {
    if let Some(f) = topology.forward(cell) {
        return Some(f);
    }
    route_successor(cell.lane, disposition, topology).map(|l| CellRef::new(l, 0))
}

pub fn route_successor(lane: u32, disposition: PolicyKind, topology: &GridTopology) -> Option<u32> {
    let succ = &topology.lane(lane).successors;
    let of_type = |t: LaneType| succ.iter().copied().find(|&l| topology.lane(l).lane_type == t);
    match disposition {
        PolicyKind::Straight => of_type(LaneType::Straight),
        PolicyKind::LeftTurn => of_type(LaneType::LeftTurn).or_else(|| of_type(LaneType::Straight)),
        PolicyKind::RightTurn => of_type(LaneType::RightTurn).or_else(|| of_type(LaneType::Straight)),
        PolicyKind::LaneChange | PolicyKind::Overtake => {
            of_type(LaneType::Straight).or_else(|| succ.first().copied())
        }
    }
}

/// Offset (in cells) of the nearest occupied cell ahead in the same lane,
/// within the observation horizon.
pub fn first_blocker(
    cell: CellRef,
    ledger: &OccupancyLedger,
    topology: &GridTopology,
    params: &DecisionParams,
) -> Option<u32> {
    let n = topology.lane(cell.lane).cells.len() as u32;
    (1..=params.horizon_cells())
        .take_while(|k| cell.index + k < n)
        .find(|k| !ledger.sigma(CellRef::new(cell.lane, cell.index + k)).is_free())
}

/// Target `(l', j+1)` if a same-direction neighbor has cells `j-1..=j+1`
/// free and enough lane left to finish the maneuver.
pub fn lane_change_feasible(
    agent: &GeneratedAgent,
    ledger: &OccupancyLedger,
    topology: &GridTopology,
    params: &DecisionParams,
) -> Option<CellRef> {
    let j = agent.cell.index;
    for &target_lane in &topology.lane(agent.cell.lane).lateral {
        let lane = topology.lane(target_lane);
        let n = lane.cells.len() as u32;
        if j + 1 >= n {
            continue;
        }
        let window_free = [j.checked_sub(1), Some(j), Some(j + 1)]
            .into_iter()
            .flatten()
            .all(|idx| ledger.sigma(CellRef::new(target_lane, idx)).is_free());
        if !window_free {
            continue;
        }
        let cell = &lane.cells[j as usize];
        let remaining = lane.length - (cell.s_start + cell.length);
        if remaining <= params.min_lane_change_room() {
            continue;
        }
        return Some(CellRef::new(target_lane, j + 1));
    }
    None
}

/// Longitudinal gaps in lane `lane` around index `j`: distance to the nearest
/// occupied cell ahead and behind, `INFINITY` when none.
pub fn lane_gaps(lane: u32, j: u32, ledger: &OccupancyLedger, topology: &GridTopology, cell_length: f64) -> (f64, f64) {
    let n = topology.lane(lane).cells.len() as u32;
    let occupied = |idx: u32| !ledger.sigma(CellRef::new(lane, idx)).is_free();
    let ahead = (j + 1..n)
        .find(|&i| occupied(i))
        .map_or(f64::INFINITY, |i| (i - j) as f64 * cell_length);
    let behind = (0..j)
        .rev()
        .find(|&i| occupied(i))
        .map_or(f64::INFINITY, |i| (j - i) as f64 * cell_length);
    (ahead, behind)
}

/// Enter-pass-return plan around the nearest blocker, or `None` when any of
/// the three conditions fails: a free adjacent lane, safe gaps in it, and a
/// free corridor of at least `d_overtake`.
pub fn overtake_feasible(
    agent: &GeneratedAgent,
    ledger: &OccupancyLedger,
    topology: &GridTopology,
    params: &DecisionParams,
) -> Option<Vec<CellRef>> {
    let blocker = first_blocker(agent.cell, ledger, topology, params)?;
    let home = agent.cell.lane;
    let j = agent.cell.index;
    let home_len = topology.lane(home).cells.len() as u32;
    let ds = params.cell_length;

    for &side in &topology.lane(home).lateral {
        let n = topology.lane(side).cells.len() as u32;
        let free = |idx: u32| idx < n && ledger.sigma(CellRef::new(side, idx)).is_free();
        if !(free(j) && free(j + 1)) {
            continue;
        }
        let (ahead, behind) = lane_gaps(side, j, ledger, topology, ds);
        if ahead < params.safe_gap_front || behind < params.safe_gap_rear {
            continue;
        }
        let corridor = (j..n).take_while(|&i| free(i)).count() as u32;
        if (corridor as f64) * ds < params.d_overtake {
            continue;
        }
        let wanted = (blocker + 1).max((params.d_overtake / ds).ceil() as u32);
        let pass = wanted.min(corridor - 1);
        if pass < blocker + 1 || j + pass + 1 >= home_len {
            continue;
        }
        let mut plan: Vec<CellRef> = (1..=pass).map(|k| CellRef::new(side, j + k)).collect();
        plan.push(CellRef::new(home, j + pass + 1));
        return Some(plan);
    }
    None
}

/// Speed factor on turn lanes: a sinusoidal dip to the lane-type floor at
/// mid-lane, unity at both ends.
pub fn speed_factor(alpha: f64, lane_type: LaneType, params: &DecisionParams) -> f64 {
    let alpha = alpha.clamp(0.0, 1.0);
    let floor = match lane_type {
        LaneType::Straight => return 1.0,
        LaneType::LeftTurn => params.f_left_min,
        LaneType::RightTurn => params.f_right_min,
    };
    if alpha == 0.0 || alpha == 1.0 {
        return 1.0;
    }
    1.0 - (1.0 - floor) * (PI * alpha).sin()
}

pub fn turn_speed(v0: f64, alpha: f64, lane_type: LaneType, params: &DecisionParams) -> f64 {
    v0 * speed_factor(alpha, lane_type, params)
}

/// Straight lanes keep the current speed.
pub fn straight_speed(v: f64) -> f64 {
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridify::{build_grid, OccupantKind};
    use crate::map_model::{LaneSpec, MapModel};

    fn lane(id: &str, y: f64, len: f64) -> LaneSpec {
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

    /// Two parallel lanes: "A" (index 0, y=0) with left neighbor "B" (index 1).
    fn two_lane(len: f64) -> GridTopology {
        let mut a = lane("A", 0.0, len);
        a.left_neighbor = Some("B".into());
        let mut b = lane("B", 3.5, len);
        b.right_neighbor = Some("A".into());
        build_grid(&MapModel::new(vec![a, b], vec![]).unwrap(), 4.0).unwrap()
    }

    fn agent(cell: CellRef, disposition: PolicyKind) -> GeneratedAgent {
        GeneratedAgent {
            id: AgentId(100),
            state: AgentState {
                position: Vec2::ZERO,
                speed: 10.0,
                heading: 0.0,
            },
            cell,
            policy: PolicyKind::Straight,
            disposition,
            trigger_time: Some(5),
            maneuver_plan: vec![],
            entry_speed: 10.0,
            lane_changed: false,
        }
    }

    fn occupy(l: &mut OccupancyLedger, c: CellRef, id: u32, kind: OccupantKind) {
        assert!(l.try_claim(c, 0, AgentId(id), kind).is_granted());
    }

    #[test]
    fn default_branch_goes_forward() {
        let g = two_lane(80.0);
        let l = OccupancyLedger::new(&g);
        let a = agent(CellRef::new(0, 3), PolicyKind::LaneChange);
        let d = decide(&a, &l, &g, 2, &DecisionParams::default(), BranchMask::default());
        assert_eq!(
            d,
            Decision::Move {
                next: CellRef::new(0, 4),
                policy: PolicyKind::Straight,
                plan: vec![]
            }
        );
    }

    #[test]
    fn lane_change_after_trigger() {
        let g = two_lane(80.0);
        let l = OccupancyLedger::new(&g);
        let a = agent(CellRef::new(0, 3), PolicyKind::LaneChange);
        let d = decide(&a, &l, &g, 5, &DecisionParams::default(), BranchMask::default());
        assert_eq!(
            d,
            Decision::Move {
                next: CellRef::new(1, 4),
                policy: PolicyKind::LaneChange,
                plan: vec![]
            }
        );
        let masked = BranchMask {
            lane_change: true,
            overtake: false,
        };
        let d = decide(&a, &l, &g, 5, &DecisionParams::default(), masked);
        assert!(matches!(d, Decision::Move { policy: PolicyKind::Straight, .. }));
    }

    #[test]
    fn lane_change_window_must_be_free() {
        let g = two_lane(80.0);
        let p = DecisionParams::default();
        let a = agent(CellRef::new(0, 3), PolicyKind::LaneChange);
        for blocked in [2, 3, 4] {
            let mut l = OccupancyLedger::new(&g);
            occupy(&mut l, CellRef::new(1, blocked), 1, OccupantKind::Generated);
            assert_eq!(lane_change_feasible(&a, &l, &g, &p), None, "index {blocked}");
        }
        let mut l = OccupancyLedger::new(&g);
        occupy(&mut l, CellRef::new(1, 5), 1, OccupantKind::Generated);
        assert_eq!(lane_change_feasible(&a, &l, &g, &p), Some(CellRef::new(1, 4)));
    }

    #[test]
    fn lane_change_needs_room() {
        // 40 m lanes: at index 5 only 16 m remain after the cell (< 18 m)
        let g = two_lane(40.0);
        let l = OccupancyLedger::new(&g);
        let p = DecisionParams::default();
        assert_eq!(lane_change_feasible(&agent(CellRef::new(0, 5), PolicyKind::LaneChange), &l, &g, &p), None);
        // index 4: 20 m remain
        assert!(lane_change_feasible(&agent(CellRef::new(0, 4), PolicyKind::LaneChange), &l, &g, &p).is_some());
    }

    #[test]
    fn overtake_plan_shape() {
        let g = two_lane(120.0);
        let p = DecisionParams::default();
        let mut l = OccupancyLedger::new(&g);
        occupy(&mut l, CellRef::new(0, 4), 1, OccupantKind::Original);
        // blocker one cell ahead, side lane free from index 3 to 8 (6 cells)
        occupy(&mut l, CellRef::new(1, 9), 2, OccupantKind::Generated);
        let a = agent(CellRef::new(0, 3), PolicyKind::Overtake);
        let plan = overtake_feasible(&a, &l, &g, &p).unwrap();
        assert!(plan.len() >= 5);
        let last = *plan.last().unwrap();
        assert_eq!(last.lane, 0);
        assert!(last.index > 4);
        assert!(plan[..plan.len() - 1].iter().all(|c| c.lane == 1 && l.sigma(*c).is_free()));
        let d = decide(&a, &l, &g, 0, &p, BranchMask::default());
        assert!(matches!(d, Decision::Move { next, policy: PolicyKind::Overtake, .. } if next == CellRef::new(1, 4)));
    }

    #[test]
    fn short_corridor_rejected() {
        let g = two_lane(120.0);
        let p = DecisionParams::default();
        let mut l = OccupancyLedger::new(&g);
        occupy(&mut l, CellRef::new(0, 4), 1, OccupantKind::Original);
        // side lane free at 3..=6 only: 4 cells * 4 m = 16 m < 20 m
        occupy(&mut l, CellRef::new(1, 7), 2, OccupantKind::Generated);
        let a = agent(CellRef::new(0, 3), PolicyKind::Overtake);
        assert_eq!(overtake_feasible(&a, &l, &g, &p), None);
        // a non-overtaker just queues forward
        let d = decide(&agent(CellRef::new(0, 3), PolicyKind::Straight), &l, &g, 0, &p, BranchMask::default());
        assert!(matches!(d, Decision::Move { next, .. } if next == CellRef::new(0, 4)));
    }

    #[test]
    fn rear_gap_rejected() {
        let p = DecisionParams {
            cell_length: 3.0,
            ..DecisionParams::default()
        };
        let g3 = {
            let mut a = lane("A", 0.0, 120.0);
            a.left_neighbor = Some("B".into());
            let mut b = lane("B", 3.5, 120.0);
            b.right_neighbor = Some("A".into());
            build_grid(&MapModel::new(vec![a, b], vec![]).unwrap(), 3.0).unwrap()
        };
        let mut l = OccupancyLedger::new(&g3);
        occupy(&mut l, CellRef::new(0, 6), 1, OccupantKind::Original);
        // occupied one cell behind in the side lane: 3 m < 8 m
        occupy(&mut l, CellRef::new(1, 4), 2, OccupantKind::Generated);
        let a = agent(CellRef::new(0, 5), PolicyKind::Overtake);
        let (_, behind) = lane_gaps(1, 5, &l, &g3, 3.0);
        assert_eq!(behind, 3.0);
        assert_eq!(overtake_feasible(&a, &l, &g3, &p), None);
    }

    #[test]
    fn terminal_at_dead_end() {
        let g = two_lane(40.0);
        let l = OccupancyLedger::new(&g);
        let a = agent(CellRef::new(0, 9), PolicyKind::Straight);
        assert_eq!(decide(&a, &l, &g, 0, &DecisionParams::default(), BranchMask::default()), Decision::Terminal);
    }

    #[test]
    fn turn_speed_values() {
        let p = DecisionParams::default();
        assert_eq!(turn_speed(10.0, 0.0, LaneType::LeftTurn, &p), 10.0);
        assert!((turn_speed(10.0, 0.5, LaneType::LeftTurn, &p) - 5.0).abs() < 1e-12);
        assert!((turn_speed(10.0, 0.5, LaneType::RightTurn, &p) - 7.5).abs() < 1e-12);
        assert_eq!(turn_speed(10.0, 1.0, LaneType::RightTurn, &p), 10.0);
        assert_eq!(turn_speed(10.0, 1.7, LaneType::LeftTurn, &p), 10.0);
        assert_eq!(turn_speed(10.0, 0.3, LaneType::Straight, &p), 10.0);
        for v in [8.0, 0.0, 31.4] {
            assert_eq!(straight_speed(v), v);
        }
    }

    #[test]
    fn right_factor_exceeds_left() {
        let p = DecisionParams::default();
        for k in 1..1000 {
            let a = k as f64 / 1000.0;
            assert!(speed_factor(a, LaneType::RightTurn, &p) > speed_factor(a, LaneType::LeftTurn, &p));
        }
    }

    #[test]
    fn params_validation() {
        assert!(DecisionParams::default().validate().is_ok());
        let bad = DecisionParams {
            f_left_min: 0.8,
            ..DecisionParams::default()
        };
        assert!(bad.validate().is_err());
        let bad = DecisionParams {
            d_obs: 0.0,
            ..DecisionParams::default()
        };
        assert!(bad.validate().is_err());
    }
}
