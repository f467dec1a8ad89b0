//! Scenario stepping: spawning, dwell-time motion between cell centers,
//! claim arbitration and per-tick logging.
//!
//! Within a tick the order is fixed: transits advance, recorded agents are
//! mapped onto the ledger (evicting generated holders if needed), generated
//! agents a recorded one has run into are withdrawn, agents that reached
//! their cell decide and claim, claims are arbitrated, and one record per
//! active agent is logged. Ready agents are processed in
//! `(lane, cell index, id)` order.

use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::Result;
use crate::geom::{wrap_angle, Vec2};
use crate::gridify::{
    build_grid, map_original_agents, AgentId, CellRef, ClaimOutcome, GridTopology, OccupancyLedger, OccupantKind,
    Sigma, SnapshotEntry,
};
use crate::map_model::{LaneType, MapModel};
use crate::metrics::{Footprint, OrientedBox};
use crate::policy::{
    decide, next_along_route, straight_speed, turn_speed, AgentState, BranchMask, Decision, GeneratedAgent, PolicyKind,
};

/// Outcome of the dwell formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dwell {
    /// Zero speed: stay put and decide again next tick.
    Hold,
    Steps(u32),
}

/// `n = ceil((ds / v) / dt)`, at least one step.
pub fn dwell_steps(ds: f64, v: f64, dt: f64) -> Dwell {
    if !(v > 0.0) || !(dt > 0.0) {
        return Dwell::Hold;
    }
    let x = ds / v / dt;
    Dwell::Steps(((x - 1e-9).ceil().max(1.0)) as u32)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackSample {
    pub t: f64,
    pub position: Vec2,
    pub speed: f64,
    pub heading: f64,
}

/// A recorded agent replayed verbatim.
#[derive(Debug, Clone, PartialEq)]
pub struct OriginalTrack {
    pub id: AgentId,
    pub samples: Vec<TrackSample>,
}

impl OriginalTrack {
    /// Linear interpolation inside the recorded time span.
    pub fn state_at(&self, t: f64) -> Option<TrackSample> {
        let s = &self.samples;
        let (first, last) = (s.first()?, s.last()?);
        if t < first.t - 1e-9 || t > last.t + 1e-9 {
            return None;
        }
        let i = s.partition_point(|x| x.t <= t);
        if i == 0 {
            return Some(TrackSample { t, ..*first });
        }
        if i == s.len() {
            return Some(TrackSample { t, ..*last });
        }
        let (a, b) = (s[i - 1], s[i]);
        let u = (t - a.t) / (b.t - a.t);
        Some(TrackSample {
            t,
            position: a.position.lerp(b.position, u),
            speed: a.speed + (b.speed - a.speed) * u,
            heading: wrap_angle(a.heading + wrap_angle(b.heading - a.heading) * u),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogRecord {
    pub tick: u32,
    pub position: Vec2,
    pub speed: f64,
    pub heading: f64,
    /// Cell held in the ledger at this tick (none while drifting).
    pub cell: Option<CellRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentLog {
    pub id: AgentId,
    pub disposition: PolicyKind,
    /// Most salient policy the agent executed.
    pub label: PolicyKind,
    /// Every cell the agent claimed, starting with its spawn cell.
    pub cells: Vec<CellRef>,
    pub records: Vec<LogRecord>,
    pub drifted: bool,
    pub retired_at: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryLog {
    pub dt: f64,
    pub agents: Vec<AgentLog>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioStats {
    pub requested: usize,
    pub spawned: usize,
    pub shortfall: usize,
    pub originals: usize,
    /// Generated agents per behavior label.
    pub per_policy: BTreeMap<String, usize>,
    pub claims: u64,
    pub granted: u64,
    pub rejected_original: u64,
    pub rejected_occupied: u64,
    pub lost_priority: u64,
    pub deferred_prediction: u64,
    pub exempted: u64,
    pub reroutes: u64,
    pub evictions: u64,
    /// Generated agents removed just before a recorded agent ran into them.
    pub withdrawn: u64,
    pub retired: u64,
    pub drifted: u64,
    pub co_occupancy_events: u64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub log: TrajectoryLog,
    pub stats: ScenarioStats,
    /// Per-tick ledger snapshots, when requested.
    pub history: Option<Vec<(u32, Vec<SnapshotEntry>)>>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub record_history: bool,
}

/// Result of spawning.
#[derive(Debug, Clone, PartialEq)]
pub struct SpawnResult {
    pub agents: Vec<GeneratedAgent>,
    pub shortfall: usize,
}

/// Prebuilt grids for one map and config, reusable across scenarios.
#[derive(Debug, Clone)]
pub struct Engine<'a> {
    map: &'a MapModel,
    cfg: &'a RunConfig,
    full: GridTopology,
    stepping: GridTopology,
}

#[derive(Debug, Clone, Copy)]
struct Transit {
    from: Vec2,
    to: Vec2,
    start: u32,
    n: u32,
    speed: f64,
}

/// Cells an agent advances along its lane after spawning or after a lateral
/// move before it may start another one, so every lateral maneuver has room
/// to be smoothed over.
pub const RUNUP_CELLS: usize = 4;
/// Speed factors tried, in order, for a forward move that fails the
/// prediction check.
pub const SLOWDOWN_LADDER: [f64; 4] = [1.0, 0.75, 0.5, 0.3];

#[derive(Debug, Clone)]
struct Active {
    agent: GeneratedAgent,
    cruise: f64,
    transit: Option<Transit>,
    prev_cell: CellRef,
    deferrals: u32,
    mask: BranchMask,
    drift: Option<Vec2>,
    done: bool,
    /// Seconds behind the constant-speed schedule from dwell rounding.
    lag: f64,
    /// Length of `log.cells` right after the last lateral move (or spawn).
    lateral_at: usize,
    log: AgentLog,
}

impl Active {
    fn heading(&self) -> f64 {
        if let Some(tr) = self.transit {
            if tr.to.dist(tr.from) > 1e-9 {
                return (tr.to - tr.from).angle();
            }
        }
        if let Some(v) = self.drift {
            return v.angle();
        }
        self.agent.state.heading
    }
}

type Pose = (Vec2, f64);

#[derive(Debug, Clone)]
struct Claim {
    idx: usize,
    target: CellRef,
    policy: PolicyKind,
    plan: Vec<CellRef>,
    executing: bool,
    distance: f64,
    n: u32,
    speed: f64,
    /// Transit time at the unrounded speed.
    ideal: f64,
    forward: bool,
}

impl<'a> Engine<'a> {
    pub fn new(map: &'a MapModel, cfg: &'a RunConfig) -> Result<Self> {
        cfg.validate()?;
        let full = build_grid(map, cfg.decision.cell_length)?;
        let stepping = if cfg.sim.ablation.disable_topology {
            full.without_links()
        } else {
            full.clone()
        };
        Ok(Engine {
            map,
            cfg,
            full,
            stepping,
        })
    }

    pub fn topology(&self) -> &GridTopology {
        &self.full
    }

    pub fn run(&self, originals: &[OriginalTrack], seed: u64) -> Result<RunOutput> {
        self.run_with(originals, seed, RunOptions::default())
    }

    pub fn run_with(&self, originals: &[OriginalTrack], seed: u64, opts: RunOptions) -> Result<RunOutput> {
        let mut sim = Sim::new(self, originals, opts);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sim.map_originals(0);
        let first_id = originals.iter().map(|o| o.id.0 + 1).max().unwrap_or(0);
        let spawn = sim.spawn(first_id, &mut rng);
        sim.stats.requested = self.cfg.sim.n_generated;
        sim.stats.spawned = spawn.agents.len();
        sim.stats.shortfall = spawn.shortfall;
        sim.stats.originals = originals.len();
        sim.adopt(spawn.agents);
        for t in 0..=self.cfg.sim.horizon {
            sim.tick(t);
        }
        Ok(sim.finish())
    }
}

/// Runs one scenario (builds the grid on every call; use [`Engine`] for
/// batches).
pub fn run(map: &MapModel, originals: &[OriginalTrack], cfg: &RunConfig, seed: u64) -> Result<RunOutput> {
    Engine::new(map, cfg)?.run(originals, seed)
}

struct Sim<'e, 'a> {
    eng: &'e Engine<'a>,
    originals: &'e [OriginalTrack],
    /// `orig_states[t][k]`: recorded state of original `k` at tick `t`.
    orig_states: Vec<Vec<Option<TrackSample>>>,
    ledger: OccupancyLedger,
    agents: Vec<Active>,
    stats: ScenarioStats,
}

impl<'e, 'a> Sim<'e, 'a> {
    fn new(eng: &'e Engine<'a>, originals: &'e [OriginalTrack], opts: RunOptions) -> Self {
        let sim = &eng.cfg.sim;
        let ticks = sim.horizon + sim.prediction_horizon + 1;
        let orig_states = (0..ticks)
            .map(|t| originals.iter().map(|o| o.state_at(t as f64 * sim.dt)).collect())
            .collect();
        let mut ledger = OccupancyLedger::new(&eng.full);
        if opts.record_history {
            ledger = ledger.with_history();
        }
        Sim {
            eng,
            originals,
            orig_states,
            ledger,
            agents: Vec::new(),
            stats: ScenarioStats::default(),
        }
    }

    fn cfg(&self) -> &RunConfig {
        self.eng.cfg
    }

    fn topo(&self) -> &GridTopology {
        &self.eng.stepping
    }

    fn footprint(&self) -> Footprint {
        self.eng.cfg.metrics.vehicle
    }

    fn inflated(&self, pose: Pose) -> OrientedBox {
        let c = self.cfg().sim.clearance;
        let f = self.footprint();
        OrientedBox {
            center: pose.0,
            length: f.length + 2.0 * c,
            width: f.width + 2.0 * c,
            heading: pose.1,
        }
    }

    fn overlap(&self, a: Pose, b: Pose) -> bool {
        self.inflated(a).intersection_area(&self.inflated(b)) > 1e-9
    }

    fn original_state(&self, tick: u32, k: usize) -> Option<TrackSample> {
        self.orig_states.get(tick as usize).and_then(|v| v[k])
    }

    fn map_originals(&mut self, t: u32) {
        if self.originals.is_empty() {
            return;
        }
        let positions: Vec<(AgentId, Vec2)> = self
            .originals
            .iter()
            .enumerate()
            .filter_map(|(k, o)| self.original_state(t, k).map(|s| (o.id, s.position)))
            .collect();
        let ids: Vec<AgentId> = self.originals.iter().map(|o| o.id).collect();
        if self.cfg().sim.ablation.disable_collision {
            for id in &ids {
                if !positions.iter().any(|(a, _)| a == id) {
                    self.ledger.release(*id);
                }
            }
            for (id, p) in positions {
                match crate::gridify::original_cell(&self.eng.full, self.eng.map, p) {
                    Some(c) => {
                        self.ledger.force_occupy(c, t, id, OccupantKind::Original);
                    }
                    None => {
                        self.ledger.release(id);
                    }
                }
            }
            return;
        }
        let mapping = map_original_agents(&self.eng.full, self.eng.map, &mut self.ledger, &positions, &ids, t);
        for evicted in mapping.evicted {
            if let Some(idx) = self.agents.iter().position(|a| a.agent.id == evicted) {
                self.evict(idx, t);
            }
        }
    }

    fn evict(&mut self, idx: usize, t: u32) {
        self.stats.evictions += 1;
        let id = self.agents[idx].agent.id;
        let prev = self.agents[idx].prev_cell;
        let pos = self.agents[idx].agent.state.position;
        let a = &mut self.agents[idx];
        a.transit = None;
        a.agent.state.position = pos;
        a.agent.maneuver_plan.clear();
        if self.ledger.sigma(prev).is_free() && self.ledger.try_claim(prev, t, id, OccupantKind::Generated).is_granted() {
            let a = &mut self.agents[idx];
            a.agent.cell = prev;
            a.log.cells.push(prev);
            a.lateral_at = a.log.cells.len();
        } else {
            self.retire(idx, t);
        }
    }

    /// Recorded agents do not react, so a generated agent about to be run
    /// into is removed; its log ends at the previous tick.
    fn withdraw_overlapping(&mut self, t: u32) {
        if t == 0 || self.originals.is_empty() {
            return;
        }
        for idx in 0..self.agents.len() {
            let a = &self.agents[idx];
            if a.done {
                continue;
            }
            let pose = (a.agent.state.position, a.heading());
            let hit = (0..self.originals.len())
                .any(|k| self.original_state(t, k).is_some_and(|st| self.overlap(pose, (st.position, st.heading))));
            if hit {
                self.stats.withdrawn += 1;
                self.retire(idx, t - 1);
            }
        }
    }

    fn retire(&mut self, idx: usize, t: u32) {
        let a = &mut self.agents[idx];
        if a.done {
            return;
        }
        a.done = true;
        a.transit = None;
        a.log.retired_at = Some(t);
        self.ledger.release(a.agent.id);
        self.stats.retired += 1;
    }

    /// Lane speed after matching recorded traffic in the target lane: no
    /// slower than a recorded agent closing in from behind, no faster than
    /// one ahead.
    fn harmonized_speed(&self, cruise: f64, lane: u32, at: Vec2, t: u32) -> f64 {
        if self.originals.is_empty() {
            return cruise;
        }
        let id = self.eng.full.lane_id(lane);
        let Some(geom) = self.eng.map.lane(id) else {
            return cruise;
        };
        let (s_self, _, _) = geom.project(at);
        let mut behind: Option<(f64, f64)> = None;
        let mut ahead: Option<(f64, f64)> = None;
        for k in 0..self.originals.len() {
            let Some(st) = self.original_state(t, k) else { continue };
            let (s, _, dist) = geom.project(st.position);
            if dist > 1.0 {
                continue;
            }
            let gap = s - s_self;
            if (0.0..=40.0).contains(&gap) && ahead.is_none_or(|a| gap < a.0) {
                ahead = Some((gap, st.speed));
            }
            if (-40.0..0.0).contains(&gap) && behind.is_none_or(|b| -gap < b.0) {
                behind = Some((-gap, st.speed));
            }
        }
        let mut v = cruise;
        if let Some((_, vb)) = behind {
            v = v.max(vb);
        }
        if let Some((_, va)) = ahead {
            v = v.min(va);
        }
        v
    }

    fn lane_speed(&self, cruise: f64, next: CellRef, at: Vec2, t: u32) -> f64 {
        let v = self.harmonized_speed(cruise, next.lane, at, t);
        let lane = self.eng.full.lane(next.lane);
        match lane.lane_type {
            LaneType::Straight => straight_speed(v),
            kind => {
                let alpha = self.eng.full.cell(next).s_center() / lane.length;
                turn_speed(v, alpha, kind, &self.cfg().decision)
            }
        }
    }

    fn spawn(&mut self, first_id: u32, rng: &mut ChaCha8Rng) -> SpawnResult {
        let sim = self.cfg().sim;
        let weights: Vec<f64> = PolicyKind::ALL.iter().map(|k| sim.behavior_mix.weight(*k)).collect();
        let mix = WeightedIndex::new(&weights).expect("validated behavior mix");
        let cells: Vec<CellRef> = self.eng.full.all_cells().map(|c| c.cref).collect();
        let mut placed: Vec<GeneratedAgent> = Vec::new();
        for i in 0..sim.n_generated {
            let disposition = PolicyKind::ALL[mix.sample(rng)];
            let speed = rng.gen_range(sim.speed_range[0]..=sim.speed_range[1]);
            let trigger = rng.gen_range(0..(sim.horizon / 2).max(1));
            let mut order = cells.clone();
            order.shuffle(rng);
            let id = AgentId(first_id + i as u32);
            let pick = order
                .iter()
                .copied()
                .filter(|c| self.prefers(*c, disposition))
                .find_map(|c| self.spawn_candidate(c, disposition, speed, &placed))
                .or_else(|| {
                    order
                        .iter()
                        .copied()
                        .find_map(|c| self.spawn_candidate(c, disposition, speed, &placed))
                });
            let Some((cell, v)) = pick else { continue };
            let gc = self.eng.full.cell(cell);
            self.ledger.try_claim(cell, 0, id, OccupantKind::Generated);
            placed.push(GeneratedAgent {
                id,
                state: AgentState {
                    position: gc.center,
                    speed: v,
                    heading: gc.heading,
                },
                cell,
                policy: PolicyKind::for_lane(gc.lane_type),
                disposition,
                trigger_time: (disposition == PolicyKind::LaneChange).then_some(trigger),
                maneuver_plan: Vec::new(),
                entry_speed: v,
                lane_changed: false,
            });
        }
        let shortfall = sim.n_generated - placed.len();
        SpawnResult {
            agents: placed,
            shortfall,
        }
    }

    /// Cells from which the disposition can actually play out.
    fn prefers(&self, c: CellRef, disposition: PolicyKind) -> bool {
        let topo = &self.eng.full;
        let lane = topo.lane(c.lane);
        let remaining = lane.length - topo.cell(c).s_center();
        let feeds = |t: LaneType| lane.successors.iter().any(|&l| topo.lane(l).lane_type == t);
        let params = &self.cfg().decision;
        match disposition {
            PolicyKind::Straight => lane.lane_type == LaneType::Straight,
            PolicyKind::LeftTurn => {
                lane.lane_type == LaneType::LeftTurn || (feeds(LaneType::LeftTurn) && remaining <= 80.0)
            }
            PolicyKind::RightTurn => {
                lane.lane_type == LaneType::RightTurn || (feeds(LaneType::RightTurn) && remaining <= 80.0)
            }
            PolicyKind::LaneChange => {
                lane.lane_type == LaneType::Straight
                    && !lane.lateral.is_empty()
                    && remaining > params.min_lane_change_room() + 40.0
            }
            PolicyKind::Overtake => {
                lane.lane_type == LaneType::Straight && !lane.lateral.is_empty() && remaining > params.d_overtake + 40.0
            }
        }
    }

    /// Returns the cell and harmonized speed if `c` is a legal spawn cell:
    /// free, two cells from any holder in its lane, clear of every present
    /// footprint, and not on a predicted collision course with recorded
    /// agents.
    fn spawn_candidate(
        &self,
        c: CellRef,
        disposition: PolicyKind,
        speed: f64,
        placed: &[GeneratedAgent],
    ) -> Option<(CellRef, f64)> {
        let topo = &self.eng.full;
        if !self.ledger.sigma(c).is_free() {
            return None;
        }
        let n = topo.lane(c.lane).cells.len() as u32;
        for k in [c.index.checked_sub(1), Some(c.index + 1)].into_iter().flatten() {
            if k < n && !self.ledger.sigma(CellRef::new(c.lane, k)).is_free() {
                return None;
            }
        }
        let gc = topo.cell(c);
        let pose = (gc.center, gc.heading);
        if placed.iter().any(|a| self.overlap(pose, (a.state.position, a.state.heading))) {
            return None;
        }
        for k in 0..self.originals.len() {
            if let Some(st) = self.original_state(0, k) {
                if self.overlap(pose, (st.position, st.heading)) {
                    return None;
                }
            }
        }
        let v = self.lane_speed(speed, c, gc.center, 0);
        if !self.originals.is_empty() {
            let path = self.path_poses(gc.center, c, &[], disposition, v, &self.eng.full);
            if self.conflicts_with_originals(&path, 0) {
                return None;
            }
        }
        Some((c, v))
    }

    fn adopt(&mut self, agents: Vec<GeneratedAgent>) {
        for agent in agents {
            let label = PolicyKind::for_lane(self.eng.full.cell(agent.cell).lane_type);
            self.agents.push(Active {
                cruise: agent.state.speed,
                transit: None,
                prev_cell: agent.cell,
                deferrals: 0,
                mask: BranchMask::default(),
                drift: None,
                done: false,
                lag: 0.0,
                lateral_at: 1,
                log: AgentLog {
                    id: agent.id,
                    disposition: agent.disposition,
                    label,
                    cells: vec![agent.cell],
                    records: Vec::new(),
                    drifted: false,
                    retired_at: None,
                },
                agent,
            });
        }
    }

    fn tick(&mut self, t: u32) {
        let dt = self.cfg().sim.dt;
        if t > 0 {
            for a in self.agents.iter_mut().filter(|a| !a.done) {
                if let Some(v) = a.drift {
                    a.agent.state.position = a.agent.state.position + v * dt;
                    continue;
                }
                if let Some(tr) = a.transit {
                    let k = t - tr.start;
                    if k >= tr.n {
                        a.agent.state.position = tr.to;
                        a.agent.state.heading = self.eng.full.cell(a.agent.cell).heading;
                        a.transit = None;
                    } else {
                        a.agent.state.position = tr.from.lerp(tr.to, k as f64 / tr.n as f64);
                    }
                }
            }
        }
        self.map_originals(t);
        if !self.cfg().sim.ablation.disable_collision {
            self.withdraw_overlapping(t);
        }
        self.decide_and_resolve(t);
        self.log_tick(t);
        self.ledger.record(t);
    }

    fn decide_and_resolve(&mut self, t: u32) {
        let mut ready: Vec<usize> = (0..self.agents.len())
            .filter(|&i| {
                let a = &self.agents[i];
                !a.done && a.drift.is_none() && a.transit.is_none()
            })
            .collect();
        ready.sort_by_key(|&i| {
            let a = &self.agents[i].agent;
            (a.cell.lane, a.cell.index, a.id)
        });
        let mut claims = Vec::new();
        for idx in ready {
            let a = &self.agents[idx];
            let mut mask = a.mask;
            if a.log.cells.len() - a.lateral_at < RUNUP_CELLS {
                mask.lane_change = true;
                mask.overtake = true;
            }
            let decision = decide(&a.agent, &self.ledger, self.topo(), t, &self.cfg().decision, mask);
            match decision {
                Decision::Terminal => {
                    if self.cfg().sim.ablation.disable_topology {
                        let a = &mut self.agents[idx];
                        let v = Vec2::from_angle(a.agent.state.heading) * a.cruise;
                        a.drift = Some(v);
                        a.log.drifted = true;
                        let id = a.agent.id;
                        self.ledger.release(id);
                        self.stats.drifted += 1;
                    } else {
                        self.retire(idx, t);
                    }
                }
                Decision::Move { next, policy, plan } => {
                    let pos = a.agent.state.position;
                    let target = self.eng.full.cell(next).center;
                    let speed = self.lane_speed(a.cruise, next, pos, t);
                    let distance = pos.dist(target);
                    let dt = self.cfg().sim.dt;
                    if speed <= 0.0 {
                        continue;
                    }
                    // rounding debt from earlier transits is paid back here
                    let ideal = distance / speed;
                    let v_in = distance / (ideal - a.lag).max(0.5 * dt);
                    let Dwell::Steps(n) = dwell_steps(distance, v_in, dt) else {
                        continue;
                    };
                    let forward = next.lane == a.agent.cell.lane
                        || self.topo().lane(a.agent.cell.lane).successors.contains(&next.lane);
                    claims.push(Claim {
                        idx,
                        target: next,
                        policy,
                        plan,
                        executing: a.agent.is_executing(),
                        distance,
                        n,
                        speed: distance / (n as f64 * dt),
                        ideal,
                        forward,
                    });
                }
            }
        }
        self.stats.claims += claims.len() as u64;
        if self.cfg().sim.ablation.disable_collision {
            for c in claims {
                self.grant(c, t);
            }
            return;
        }
        self.resolve_conflicts(claims, t);
    }

    /// Cases in order: claims on cells held by recorded agents are rejected;
    /// among claims on one cell, executing beats pending, then the closer
    /// claimant, then the smaller id; each surviving claim is checked against
    /// everyone's predicted motion and deferred on a predicted overlap.
    fn resolve_conflicts(&mut self, claims: Vec<Claim>, t: u32) {
        let mut survivors: Vec<Claim> = Vec::new();
        let mut by_target: BTreeMap<CellRef, Vec<Claim>> = BTreeMap::new();
        for c in claims {
            match self.ledger.sigma(c.target) {
                Sigma::Original => {
                    self.stats.rejected_original += 1;
                    self.defer(c.idx);
                }
                Sigma::Generated => {
                    self.stats.rejected_occupied += 1;
                    self.defer(c.idx);
                }
                Sigma::Free => by_target.entry(c.target).or_default().push(c),
            }
        }
        for (_, mut group) in by_target {
            group.sort_by(|a, b| {
                b.executing
                    .cmp(&a.executing)
                    .then(a.distance.total_cmp(&b.distance))
                    .then(self.agents[a.idx].agent.id.cmp(&self.agents[b.idx].agent.id))
            });
            let mut it = group.into_iter();
            survivors.extend(it.next());
            for lost in it {
                self.stats.lost_priority += 1;
                self.defer(lost.idx);
            }
        }
        survivors.sort_by_key(|c| {
            let a = &self.agents[c.idx].agent;
            (a.cell.lane, a.cell.index, a.id)
        });
        let mut predictions: Vec<Vec<Option<Pose>>> = (0..self.agents.len()).map(|i| self.predict(i)).collect();
        for c in survivors {
            let Some(c) = self.admissible(c, &predictions, t) else {
                continue;
            };
            let idx = c.idx;
            self.grant(c, t);
            predictions[idx] = self.predict(idx);
        }
    }

    /// Runs the prediction check, retrying a forward claim at lower speeds
    /// before deferring it.
    fn admissible(&mut self, c: Claim, predictions: &[Vec<Option<Pose>>], t: u32) -> Option<Claim> {
        let dt = self.cfg().sim.dt;
        let base = c.distance / c.ideal.max(1e-9);
        let ladder: &[f64] = if c.forward { &SLOWDOWN_LADDER } else { &[1.0] };
        for &f in ladder {
            let mut cand = c.clone();
            if f < 1.0 {
                let v = base * f;
                let Dwell::Steps(n) = dwell_steps(c.distance, v, dt) else { break };
                cand.n = n;
                cand.speed = c.distance / (n as f64 * dt);
                cand.ideal = c.distance / v;
            }
            match self.check_claim(&cand, predictions, t) {
                Verdict::Clear => return Some(cand),
                Verdict::OnlyOriginalsBehind if cand.forward => {
                    self.stats.exempted += 1;
                    return Some(cand);
                }
                Verdict::OnlyOriginalsBehind | Verdict::Conflict => {}
            }
        }
        self.stats.deferred_prediction += 1;
        self.defer(c.idx);
        None
    }

    fn check_claim(&self, c: &Claim, predictions: &[Vec<Option<Pose>>], t: u32) -> Verdict {
        let me = &self.agents[c.idx];
        let target = self.eng.full.cell(c.target);
        let rest = (target.center, target.heading);
        // stopping points must stay clear of everyone else's
        for (j, other) in self.agents.iter().enumerate() {
            if j == c.idx || other.done || other.drift.is_some() {
                continue;
            }
            let other_rest = match other.transit {
                Some(tr) => (tr.to, self.eng.full.cell(other.agent.cell).heading),
                None => (other.agent.state.position, other.agent.state.heading),
            };
            if self.overlap(rest, other_rest) {
                return Verdict::Conflict;
            }
        }
        let mine = self.path_poses(
            me.agent.state.position,
            c.target,
            &c.plan,
            me.agent.disposition,
            c.speed,
            self.topo(),
        );
        for (j, other) in predictions.iter().enumerate() {
            if j == c.idx {
                continue;
            }
            if mine
                .iter()
                .zip(other)
                .any(|(a, b)| matches!((a, b), (Some(a), Some(b)) if self.overlap(*a, *b)))
            {
                return Verdict::Conflict;
            }
        }
        let mut only_behind = true;
        let mut any = false;
        let here = me.agent.state.position;
        let dir = Vec2::from_angle(me.agent.state.heading);
        for k in 0..self.originals.len() {
            let hit = mine.iter().enumerate().any(|(h, p)| match (p, self.original_state(t + 1 + h as u32, k)) {
                (Some(p), Some(st)) => self.overlap(*p, (st.position, st.heading)),
                _ => false,
            });
            if hit {
                any = true;
                let now = self.original_state(t, k).map(|s| s.position);
                if now.is_none_or(|p| (p - here).dot(dir) >= 0.0) {
                    only_behind = false;
                }
            }
        }
        match (any, only_behind) {
            (false, _) => Verdict::Clear,
            (true, true) => Verdict::OnlyOriginalsBehind,
            (true, false) => Verdict::Conflict,
        }
    }

    fn conflicts_with_originals(&self, path: &[Option<Pose>], t: u32) -> bool {
        (0..self.originals.len()).any(|k| {
            path.iter().enumerate().any(|(h, p)| match (p, self.original_state(t + 1 + h as u32, k)) {
                (Some(p), Some(st)) => self.overlap(*p, (st.position, st.heading)),
                _ => false,
            })
        })
    }

    fn defer(&mut self, idx: usize) {
        let max = self.cfg().sim.max_deferrals;
        let a = &mut self.agents[idx];
        a.lag = 0.0;
        a.deferrals += 1;
        if a.deferrals >= max {
            a.deferrals = 0;
            if !(a.mask.lane_change && a.mask.overtake) || a.agent.is_executing() {
                a.mask = BranchMask {
                    lane_change: true,
                    overtake: true,
                };
                a.agent.maneuver_plan.clear();
                self.stats.reroutes += 1;
            }
        }
    }

    fn grant(&mut self, c: Claim, t: u32) {
        let collision_off = self.cfg().sim.ablation.disable_collision;
        let id = self.agents[c.idx].agent.id;
        if collision_off {
            self.ledger.force_occupy(c.target, t, id, OccupantKind::Generated);
        } else if self.ledger.try_claim(c.target, t, id, OccupantKind::Generated) != ClaimOutcome::Granted {
            self.stats.rejected_occupied += 1;
            self.defer(c.idx);
            return;
        }
        self.stats.granted += 1;
        let to = self.eng.full.cell(c.target).center;
        let a = &mut self.agents[c.idx];
        a.transit = Some(Transit {
            from: a.agent.state.position,
            to,
            start: t,
            n: c.n,
            speed: c.speed,
        });
        a.prev_cell = a.agent.cell;
        if c.target.lane != a.agent.cell.lane {
            a.agent.entry_speed = c.speed;
        }
        a.agent.cell = c.target;
        a.agent.policy = c.policy;
        a.agent.maneuver_plan = c.plan;
        if c.policy == PolicyKind::LaneChange {
            a.agent.lane_changed = true;
        }
        if c.policy.salience() > a.log.label.salience() {
            a.log.label = c.policy;
        }
        a.log.cells.push(c.target);
        if !c.forward {
            a.lateral_at = a.log.cells.len();
        }
        a.lag = (a.lag + c.n as f64 * self.eng.cfg.sim.dt - c.ideal).max(0.0);
        a.deferrals = 0;
        a.mask = BranchMask::default();
    }

    /// Constant-speed poses for ticks `t+1 ..= t+H` along the planned cells.
    fn predict(&self, idx: usize) -> Vec<Option<Pose>> {
        let h = self.cfg().sim.prediction_horizon as usize;
        let a = &self.agents[idx];
        if a.done {
            return vec![None; h];
        }
        let dt = self.cfg().sim.dt;
        if let Some(v) = a.drift {
            let p = a.agent.state.position;
            return (1..=h).map(|k| Some((p + v * (k as f64 * dt), v.angle()))).collect();
        }
        match a.transit {
            Some(tr) => {
                let here = a.agent.state.position;
                self.path_poses(here, a.agent.cell, &a.agent.maneuver_plan, a.agent.disposition, tr.speed, self.topo())
            }
            None => vec![Some((a.agent.state.position, a.agent.state.heading)); h],
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn path_poses(
        &self,
        start: Vec2,
        first: CellRef,
        plan: &[CellRef],
        disposition: PolicyKind,
        speed: f64,
        topo: &GridTopology,
    ) -> Vec<Option<Pose>> {
        let h = self.cfg().sim.prediction_horizon as usize;
        let dt = self.cfg().sim.dt;
        let need = speed * h as f64 * dt;
        let mut pts = vec![start, self.eng.full.cell(first).center];
        let mut len = start.dist(pts[1]);
        let mut cur = first;
        for c in plan {
            let p = self.eng.full.cell(*c).center;
            len += pts.last().unwrap().dist(p);
            pts.push(p);
            cur = *c;
        }
        let mut terminal = false;
        while len < need {
            match next_along_route(cur, disposition, topo) {
                Some(n) => {
                    let p = self.eng.full.cell(n).center;
                    len += pts.last().unwrap().dist(p);
                    pts.push(p);
                    cur = n;
                }
                None => {
                    terminal = true;
                    break;
                }
            }
        }
        let drift_on = self.cfg().sim.ablation.disable_topology;
        let end_heading = self.eng.full.cell(cur).heading;
        (1..=h)
            .map(|k| along(&pts, speed * k as f64 * dt, terminal && !drift_on, end_heading))
            .collect()
    }

    fn log_tick(&mut self, t: u32) {
        for a in &mut self.agents {
            if a.done && a.log.retired_at != Some(t) {
                continue;
            }
            let speed = match (a.transit, a.drift) {
                (Some(tr), _) => tr.speed,
                (None, Some(v)) => v.norm(),
                _ => 0.0,
            };
            let heading = a.heading();
            let cell = if a.done { None } else { self.ledger.cell_of(a.agent.id) };
            a.log.records.push(LogRecord {
                tick: t,
                position: a.agent.state.position,
                speed,
                heading,
                cell,
            });
        }
    }

    fn finish(mut self) -> RunOutput {
        self.stats.co_occupancy_events = self.ledger.co_occupancy_events();
        let mut per_policy = BTreeMap::new();
        for a in &self.agents {
            *per_policy.entry(a.log.label.label().to_string()).or_insert(0) += 1;
        }
        self.stats.per_policy = per_policy;
        let history = self.ledger.history().map(|h| h.to_vec());
        RunOutput {
            log: TrajectoryLog {
                dt: self.cfg().sim.dt,
                agents: self.agents.into_iter().map(|a| a.log).collect(),
            },
            stats: self.stats,
            history,
        }
    }
}

enum Verdict {
    Clear,
    OnlyOriginalsBehind,
    Conflict,
}

/// Pose at arc distance `d` along a waypoint polyline. Past the end the
/// path either stops existing (`vanish`) or continues straight.
fn along(pts: &[Vec2], d: f64, vanish: bool, end_heading: f64) -> Option<Pose> {
    let mut acc = 0.0;
    let mut heading = end_heading;
    for w in pts.windows(2) {
        let seg = w[0].dist(w[1]);
        if seg <= 1e-9 {
            continue;
        }
        heading = (w[1] - w[0]).angle();
        if acc + seg >= d {
            return Some((w[0].lerp(w[1], (d - acc) / seg), heading));
        }
        acc += seg;
    }
    if vanish {
        return None;
    }
    let last = *pts.last()?;
    Some((last + Vec2::from_angle(heading) * (d - acc), heading))
}

/// Places up to `n_generated` agents on a fresh ledger that already holds the
/// recorded agents at tick 0.
pub fn spawn_agents(
    map: &MapModel,
    cfg: &RunConfig,
    originals: &[OriginalTrack],
    seed: u64,
) -> Result<(SpawnResult, OccupancyLedger)> {
    let eng = Engine::new(map, cfg)?;
    let mut sim = Sim::new(&eng, originals, RunOptions::default());
    sim.map_originals(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first_id = originals.iter().map(|o| o.id.0 + 1).max().unwrap_or(0);
    let res = sim.spawn(first_id, &mut rng);
    Ok((res, sim.ledger))
}
