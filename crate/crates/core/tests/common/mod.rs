#![allow(dead_code)]

use std::collections::HashMap;
use std::path::PathBuf;

use scenegen::cli_io::load_config;
use scenegen::config::RunConfig;
use scenegen::engine::RunOutput;
use scenegen::geom::Vec2;
use scenegen::gridify::{AgentId, CellRef, GridTopology};
use scenegen::map_model::{load_map, MapModel};
use scenegen::metrics::{obb_iou, ScenarioBoxes};

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(rel)
}

pub fn config(name: &str) -> RunConfig {
    load_config(&fixture(&format!("configs/{name}.json"))).expect("fixture config loads")
}

pub fn corridor() -> MapModel {
    load_map(fixture("maps/corridor3.json")).unwrap()
}

pub fn junction() -> MapModel {
    load_map(fixture("maps/junction.json")).unwrap()
}

/// Corridor config used by the mutual-exclusion checks: 20 generated agents,
/// 110 ticks of 0.1 s, no recorded agents.
pub fn corridor_config() -> RunConfig {
    let mut cfg = RunConfig {
        map: Some(fixture("maps/corridor3.json")),
        ..RunConfig::default()
    };
    cfg.sim.n_generated = 20;
    cfg.sim.horizon = 110;
    cfg.sim.dt = 0.1;
    cfg
}

/// Number of (tick, cell) pairs with more than one holder in a run's ledger
/// history.
pub fn co_occupancy(out: &RunOutput) -> usize {
    out.history
        .as_ref()
        .expect("history recorded")
        .iter()
        .flat_map(|(_, snap)| snap.iter())
        .filter(|e| e.owners.len() > 1)
        .count()
}

/// Independent re-check that no agent sits in two cells and no cell holds
/// two agents at any logged tick.
pub fn audit_history(out: &RunOutput) -> Result<(), String> {
    for (tick, snap) in out.history.as_ref().expect("history recorded") {
        let mut seen: HashMap<AgentId, CellRef> = HashMap::new();
        for e in snap {
            if e.owners.len() > 1 {
                return Err(format!("tick {tick}: cell {} held by {:?}", e.cell, e.owners));
            }
            for a in &e.owners {
                if let Some(prev) = seen.insert(*a, e.cell) {
                    return Err(format!("tick {tick}: agent {a} in {prev} and {}", e.cell));
                }
            }
        }
    }
    Ok(())
}

/// Every consecutive pair of claimed cells is a topology link.
pub fn cells_follow_links(topo: &GridTopology, cells: &[CellRef]) -> bool {
    cells.windows(2).all(|w| topo.is_linked(w[0], w[1]))
}

/// All pairs, all ticks, no shortcuts.
pub fn scr_oracle(scenarios: &[ScenarioBoxes], threshold: f64) -> Option<f64> {
    let mut rates = Vec::new();
    for s in scenarios {
        if s.vehicle_count == 0 {
            continue;
        }
        let mut hit = vec![false; s.vehicle_count];
        for boxes in &s.ticks {
            for a in boxes {
                for b in boxes {
                    if a.0 != b.0 && obb_iou(&a.1, &b.1) > threshold {
                        hit[a.0] = true;
                    }
                }
            }
        }
        rates.push(hit.iter().filter(|h| **h).count() as f64 / s.vehicle_count as f64);
    }
    (!rates.is_empty()).then(|| rates.iter().sum::<f64>() / rates.len() as f64)
}

/// Even-odd rule with a vertical ray towards +y (the library casts along x).
pub fn inside_oracle(p: Vec2, poly: &[Vec2]) -> bool {
    let n = poly.len();
    let mut crossings = 0;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        let (lo, hi) = if a.x <= b.x { (a, b) } else { (b, a) };
        if lo.x == hi.x {
            continue;
        }
        if p.x >= lo.x && p.x < hi.x {
            let y = lo.y + (p.x - lo.x) * (hi.y - lo.y) / (hi.x - lo.x);
            if y > p.y {
                crossings += 1;
            }
        }
    }
    crossings % 2 == 1
}

/// Random star-shaped (hence simple) polygon around `c`.
pub fn star_polygon(rng: &mut impl rand::Rng, c: Vec2, vertices: usize) -> Vec<Vec2> {
    let mut angles: Vec<f64> = (0..vertices).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
    angles.sort_by(f64::total_cmp);
    angles
        .into_iter()
        .map(|a| c + Vec2::from_angle(a) * rng.gen_range(2.0..10.0))
        .collect()
}
