//! End-to-end tests of the command-line binary: exit codes, determinism,
//! provenance, the golden report and the stats histograms.

mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use scenegen::cli_io::{stats_dir, EvaluationReport, StatsReport};
use scenegen::scenario::ScenarioFile;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_scenegen"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn generate(out: &Path, n: usize, seed: u64, extra: &[&str]) -> Output {
    let cfg = common::fixture("configs/default.json");
    let n = n.to_string();
    let seed = seed.to_string();
    let mut args = vec!["generate", "--config", s(&cfg), "--out", s(out), "-n", &n, "--seed", &seed];
    args.extend_from_slice(extra);
    run(&args)
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn generate_is_byte_identical_across_runs_and_job_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    assert_eq!(code(&generate(&a, 5, 42, &["--jobs", "1"])), 0);
    assert_eq!(code(&generate(&b, 5, 42, &["--jobs", "4"])), 0);
    assert_eq!(code(&generate(&c, 5, 42, &[])), 0);
    let fa = files(&a);
    assert_eq!(fa.len(), 5);
    assert_eq!(fa, files(&b));
    assert_eq!(fa, files(&c));
}

#[test]
fn outputs_rebuild_from_their_config_echo() {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("first");
    assert_eq!(code(&generate(&first, 3, 9, &[])), 0);
    for (name, bytes) in files(&first) {
        let f = ScenarioFile::parse(std::str::from_utf8(&bytes).unwrap(), Path::new(&name)).unwrap();
        let cfg = f.metadata.config.as_ref().expect("config echoed");
        assert_eq!(cfg.scenario_seed(f.metadata.scenario_index), f.metadata.seed);
        let cfg_path = tmp.path().join("echo.json");
        fs::write(&cfg_path, cfg.to_json()).unwrap();
        let again = tmp.path().join(format!("again_{name}"));
        let o = run(&["generate", "--config", s(&cfg_path), "--out", s(&again)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let rebuilt = fs::read(again.join(&name)).unwrap();
        assert!(rebuilt == bytes, "{name} differs when rebuilt from its echo");
    }
}

#[test]
fn spawn_shortfall_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("crowded.json");
    fs::write(&cfg, r#"{"sim": {"n_generated": 400}}"#).unwrap();
    let map = common::fixture("maps/corridor3.json");
    let out = tmp.path().join("out");
    let o = run(&["generate", "--config", s(&cfg), "--map", s(&map), "--out", s(&out), "-n", "1", "--seed", "1"]);
    assert_eq!(code(&o), 2);
    let f = ScenarioFile::load(out.join("scenario_00000.json")).unwrap();
    assert!(f.metadata.stats.unwrap().shortfall > 0);
}

#[test]
fn errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing.json");
    let o = run(&["generate", "--config", s(&missing), "--out", s(tmp.path())]);
    assert_eq!(code(&o), 1);

    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"sim": {"dt": -1}}"#).unwrap();
    let map = common::fixture("maps/corridor3.json");
    assert_eq!(code(&run(&["generate", "--config", s(&bad), "--map", s(&map), "--out", s(tmp.path())])), 1);

    // output "directory" is an existing file
    let file = tmp.path().join("taken");
    fs::write(&file, "x").unwrap();
    let cfg = common::fixture("configs/default.json");
    assert_eq!(code(&run(&["generate", "--config", s(&cfg), "--out", s(&file), "-n", "1"])), 1);

    let abl = common::fixture("configs/ablation.json");
    assert_eq!(code(&run(&["ablate", "--config", s(&abl), "--which", "lanes"])), 1);
    assert_eq!(code(&run(&["frobnicate"])), 1);

    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let out = tmp.path().join("r.json");
    assert_eq!(code(&run(&["evaluate", "--data", s(&empty), "--out", s(&out)])), 1);
    assert_eq!(code(&run(&["stats", "--data", s(&missing)])), 1);
}

#[test]
fn golden_report_is_reproduced() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("report.json");
    let data = common::fixture("golden/data");
    let o = run(&["evaluate", "--data", s(&data), "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(&out).unwrap(), fs::read(common::fixture("golden/report.json")).unwrap());
    assert!(tmp.path().join("report.txt").exists());
}

#[test]
fn corrupt_files_are_skipped() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    fs::create_dir(&data).unwrap();
    for e in fs::read_dir(common::fixture("golden/data")).unwrap() {
        let p = e.unwrap().path();
        let text = fs::read_to_string(&p).unwrap();
        // keep the relative map reference valid from the copy
        let abs = common::fixture("maps/corridor3.json");
        let text = text.replace("../../maps/corridor3.json", s(&abs));
        fs::write(data.join(p.file_name().unwrap()), text).unwrap();
    }
    fs::write(data.join("zz_broken.json"), "{ not json").unwrap();
    let out = tmp.path().join("r.json");
    let o = run(&["evaluate", "--data", s(&data), "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    let r: EvaluationReport = serde_json::from_slice(&fs::read(&out).unwrap()).unwrap();
    assert_eq!(r.n_scenarios, 2);
    assert_eq!(r.skipped.len(), 1);
    assert_eq!(r.skipped[0].file, "zz_broken.json");
}

#[test]
fn evaluate_and_ablate_run_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert_eq!(code(&generate(&data, 2, 3, &[])), 0);
    let out = tmp.path().join("m.json");
    assert_eq!(code(&run(&["evaluate", "--data", s(&data), "--out", s(&out)])), 0);
    let r: EvaluationReport = serde_json::from_slice(&fs::read(&out).unwrap()).unwrap();
    assert_eq!(r.n_scenarios, 2);
    assert!((0.0..=1.0).contains(&r.scr) && (0.0..=1.0).contains(&r.orr));

    let cfg = tmp.path().join("small.json");
    fs::write(
        &cfg,
        format!(
            r#"{{"sim": {{"n_generated": 5}}, "scenarios": 2, "map": "{}"}}"#,
            s(&common::fixture("maps/junction.json"))
        ),
    )
    .unwrap();
    let rep = tmp.path().join("ablate.json");
    for which in ["topology", "collision", "smooth"] {
        let o = run(&["ablate", "--config", s(&cfg), "--which", which, "--out", s(&rep)]);
        assert_eq!(code(&o), 0, "{which}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stdout).contains("full"));
    }
}

#[test]
fn all_straight_mix_labels_everything_straight() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("straight.json");
    fs::write(
        &cfg,
        r#"{"sim": {"n_generated": 15, "behavior_mix": {"straight": 1.0, "left_turn": 0.0, "right_turn": 0.0, "lane_change": 0.0, "overtake": 0.0}}}"#,
    )
    .unwrap();
    let map = common::fixture("maps/junction.json");
    let out = tmp.path().join("out");
    let o = run(&["generate", "--config", s(&cfg), "--map", s(&map), "--out", s(&out), "-n", "3"]);
    assert!(code(&o) == 0 || code(&o) == 2);
    let st = stats_dir(&out).unwrap();
    let total: usize = st.behavior_agents.values().sum();
    assert!(total > 0);
    assert_eq!(st.behavior_agents["ST"], total);
}

#[test]
fn stats_histograms_match_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let template = ScenarioFile::load(common::fixture("originals/recorded_000.json")).unwrap();
    let agent = template.agents[0].clone();
    for (i, n) in [10usize, 50, 90].into_iter().enumerate() {
        let mut f = template.clone();
        f.agents = (0..n).map(|k| scenegen::scenario::AgentRecord { id: k as u32, ..agent.clone() }).collect();
        f.save(tmp.path().join(format!("s{i}.json"))).unwrap();
    }
    let o = run(&["stats", "--data", s(tmp.path())]);
    assert_eq!(code(&o), 0);
    let st = stats_dir(tmp.path()).unwrap();
    assert_eq!(st.n_scenarios, 3);
    for bin in [10, 50, 90] {
        assert_eq!(st.density[&bin], 1);
    }
    assert_eq!(st.density.values().sum::<usize>(), 3);
    assert_eq!(st.above[&40], 2);
    assert_eq!(st.above[&50], 1);
    assert!(fs::read_to_string(tmp.path().join("stats.csv")).unwrap().starts_with("kind,key"));
}

#[test]
fn stats_equal_a_brute_force_label_count() {
    let dir = common::fixture("originals");
    let st: StatsReport = stats_dir(&dir).unwrap();
    let mut agents = std::collections::BTreeMap::<String, usize>::new();
    let mut n = 0;
    for e in fs::read_dir(&dir).unwrap() {
        let v: serde_json::Value = serde_json::from_slice(&fs::read(e.unwrap().path()).unwrap()).unwrap();
        n += 1;
        for a in v["agents"].as_array().unwrap() {
            let label = match a["policy"].as_str().unwrap() {
                "straight" => "ST",
                "left_turn" => "LT",
                "right_turn" => "RT",
                "lane_change" => "LC",
                "overtake" => "OT",
                other => panic!("unknown label {other}"),
            };
            *agents.entry(label.into()).or_default() += 1;
        }
    }
    assert_eq!(st.n_scenarios, n);
    for (k, v) in &st.behavior_agents {
        assert_eq!(agents.get(k).copied().unwrap_or(0), *v, "{k}");
    }
}
