//! Post-run audits of the engine: ledger history, topology-only moves,
//! retirement, determinism, and smoothing endpoints.

mod common;

use scenegen::cli_io::{load_originals, reference_frame};
use scenegen::engine::{Engine, RunOptions, RunOutput};
use scenegen::frenet_smooth::{smooth_path, TrajPoint};
use scenegen::gridify::OccupantKind;

const HISTORY: RunOptions = RunOptions { record_history: true };

fn junction_runs(n: usize) -> Vec<(Engine<'static>, RunOutput)> {
    // leaked so the engine may borrow them for the test's lifetime
    let cfg = Box::leak(Box::new(common::config("default")));
    let map = Box::leak(Box::new(common::junction()));
    let originals = load_originals(cfg.originals.as_ref().unwrap()).unwrap();
    (0..n)
        .map(|i| {
            let eng = Engine::new(map, cfg).unwrap();
            let tracks = originals[i % originals.len()].1.tracks();
            let out = eng.run_with(&tracks, cfg.scenario_seed(i), HISTORY).unwrap();
            (eng, out)
        })
        .collect()
}

#[test]
fn corridor_ledger_history_is_exclusive() {
    let map = common::corridor();
    let cfg = common::corridor_config();
    let eng = Engine::new(&map, &cfg).unwrap();
    for seed in 0..20 {
        let out = eng.run_with(&[], seed, HISTORY).unwrap();
        common::audit_history(&out).unwrap();
        assert_eq!(out.stats.co_occupancy_events, 0);
    }
}

#[test]
fn junction_with_originals_is_exclusive_and_linked() {
    for (eng, out) in junction_runs(8) {
        common::audit_history(&out).unwrap();
        for a in &out.log.agents {
            assert!(
                common::cells_follow_links(eng.topology(), &a.cells),
                "agent {} teleported: {:?}",
                a.id,
                a.cells
            );
        }
    }
}

#[test]
fn generated_agents_never_share_a_cell_with_originals() {
    for (_, out) in junction_runs(8) {
        let generated: std::collections::HashSet<_> = out.log.agents.iter().map(|a| a.id).collect();
        for (tick, snap) in out.history.as_ref().unwrap() {
            for e in snap {
                let gen = e.owners.iter().filter(|o| generated.contains(o)).count();
                assert!(gen == 0 || e.owners.len() == 1, "tick {tick}: {:?}", e.owners);
            }
        }
    }
}

#[test]
fn retired_agents_stay_retired() {
    for (_, out) in junction_runs(8) {
        for a in &out.log.agents {
            if let Some(r) = a.retired_at {
                assert!(a.records.iter().all(|rec| rec.tick <= r), "agent {} logged after {r}", a.id);
                for (tick, snap) in out.history.as_ref().unwrap() {
                    if *tick > r {
                        assert!(snap.iter().all(|e| !e.owners.contains(&a.id)));
                    }
                }
            }
        }
    }
}

#[test]
fn logs_span_the_horizon_at_most() {
    let map = common::corridor();
    let cfg = common::corridor_config();
    let out = Engine::new(&map, &cfg).unwrap().run(&[], 3).unwrap();
    for a in &out.log.agents {
        let first = a.records.first().unwrap().tick;
        let last = a.records.last().unwrap().tick;
        assert!((last - first) as f64 * cfg.sim.dt <= 11.0 + 1e-9);
    }
}

#[test]
fn runs_are_deterministic_under_every_ablation() {
    let map = common::junction();
    let base = common::config("default");
    let originals = load_originals(base.originals.as_ref().unwrap()).unwrap();
    let tracks = originals[0].1.tracks();
    for flags in 0..8u8 {
        let mut cfg = base.clone();
        cfg.sim.ablation.disable_topology = flags & 1 != 0;
        cfg.sim.ablation.disable_collision = flags & 2 != 0;
        cfg.sim.ablation.disable_smoothing = flags & 4 != 0;
        let eng = Engine::new(&map, &cfg).unwrap();
        let a = eng.run(&tracks, 11).unwrap();
        let b = eng.run(&tracks, 11).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.stats, b.stats);
    }
}

#[test]
fn disabling_collision_handling_creates_grid_overlaps() {
    let map = common::corridor();
    let mut cfg = common::corridor_config();
    cfg.sim.n_generated = 40;
    let base: u64 = (0..5)
        .map(|s| Engine::new(&map, &cfg).unwrap().run(&[], s).unwrap().stats.co_occupancy_events)
        .sum();
    cfg.sim.ablation.disable_collision = true;
    let ablated: u64 = (0..5)
        .map(|s| Engine::new(&map, &cfg).unwrap().run(&[], s).unwrap().stats.co_occupancy_events)
        .sum();
    assert_eq!(base, 0);
    assert!(ablated > base, "ablated {ablated} vs baseline {base}");
}

#[test]
fn smoothing_keeps_the_endpoints() {
    let map = common::junction();
    let cfg = common::config("default");
    for (eng, out) in junction_runs(4) {
        for a in &out.log.agents {
            let raw: Vec<TrajPoint> = a
                .records
                .iter()
                .map(|r| TrajPoint {
                    t: r.tick as f64 * cfg.sim.dt,
                    position: r.position,
                    speed: r.speed,
                    heading: r.heading,
                })
                .collect();
            if raw.len() < 2 {
                continue;
            }
            let frame = reference_frame(&map, eng.topology(), &a.cells).unwrap();
            let sm = smooth_path(&raw, &frame, &cfg.limits, cfg.sim.dt).unwrap();
            let (p0, p1) = (sm.points.first().unwrap(), sm.points.last().unwrap());
            assert!(p0.position.dist(raw[0].position) < 1e-6, "agent {} start", a.id);
            assert!(p1.position.dist(raw.last().unwrap().position) < 1e-6, "agent {} end", a.id);
            assert_eq!(sm.report.unsmoothable_segments, 0);
        }
    }
}

#[test]
fn originals_pass_through_generation_unchanged() {
    let cfg = common::config("default");
    let files = scenegen::cli_io::generate_batch(&{
        let mut c = cfg.clone();
        c.scenarios = 2;
        c
    })
    .unwrap();
    let originals = load_originals(cfg.originals.as_ref().unwrap()).unwrap();
    for (i, f) in files.iter().enumerate() {
        let src = &originals[i].1;
        let kept: Vec<_> = f.agents.iter().filter(|a| a.kind == OccupantKind::Original).collect();
        assert_eq!(kept.len(), src.agents.len());
        for (a, b) in kept.iter().zip(&src.agents) {
            assert_eq!(a.samples, b.samples);
        }
    }
}
