//! Command-line surface: `generate`, `evaluate`, `ablate` and `stats`, plus
//! the batch plumbing they share.
//!
//! Exit codes: 0 success, 2 partial success (some scenario could not place
//! every requested agent), 1 error.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::engine::{AgentLog, Engine, ScenarioStats};
use crate::error::{Error, Result};
use crate::frenet_smooth::{smooth_path, FrenetFrame, TrajPoint};
use crate::geom::{wrap_angle, Vec2};
use crate::gridify::{CellRef, GridTopology, OccupantKind};
use crate::map_model::{load_map, MapModel};
use crate::metrics::{evaluate_dataset, AgentTrack, DatasetMetrics, MetricSettings, ScenarioTracks};
use crate::policy::PolicyKind;
use crate::scenario::{AgentRecord, MapRef, Metadata, Sample, ScenarioFile, SmoothingSummary};

/// Output sampling period (s).
pub const OUTPUT_DT: f64 = 0.1;
pub const GENERATOR_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "scenegen", version, about = "Dense traffic scenario synthesis on lane maps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate scenario files.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        map: Option<PathBuf>,
        /// Directory of recorded scenarios to densify.
        #[arg(long)]
        originals: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(short = 'n')]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (default: available cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Compute LO, LA, JE, SCR and ORR over a directory of scenarios.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Config whose metric settings to use.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Compare a baseline batch with one component switched off.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        which: AblationKind,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Agent-count and behavior histograms of a dataset.
    Stats {
        #[arg(long)]
        data: PathBuf,
        /// CSV output (default: stats.csv inside the data directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationKind {
    Topology,
    Collision,
    Smooth,
}

impl AblationKind {
    pub fn apply(self, cfg: &mut RunConfig) {
        let a = &mut cfg.sim.ablation;
        match self {
            AblationKind::Topology => a.disable_topology = true,
            AblationKind::Collision => a.disable_collision = true,
            AblationKind::Smooth => a.disable_smoothing = true,
        }
    }

    fn label(self) -> &'static str {
        match self {
            AblationKind::Topology => "w/o topology",
            AblationKind::Collision => "w/o collision",
            AblationKind::Smooth => "w/o smoothing",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Partial,
}

impl Outcome {
    pub fn code(self) -> u8 {
        match self {
            Outcome::Success => 0,
            Outcome::Partial => 2,
        }
    }
}

pub fn run_cli(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Generate {
            config,
            map,
            originals,
            out,
            n,
            seed,
            jobs,
        } => {
            let mut cfg = match &config {
                Some(p) => load_config(p)?,
                None => RunConfig::default(),
            };
            if let Some(m) = map {
                cfg.map = Some(m);
            }
            if originals.is_some() {
                cfg.originals = originals;
            }
            if out.is_some() {
                cfg.out_dir = out;
            }
            if let Some(n) = n {
                cfg.scenarios = n;
            }
            if let Some(s) = seed {
                cfg.sim.seed = s;
            }
            if let Some(j) = jobs {
                cfg.parallelism = j;
            }
            // absolute inputs keep the echoed config usable from any directory
            for p in [&mut cfg.map, &mut cfg.originals].into_iter().flatten() {
                if let Ok(abs) = std::fs::canonicalize(&*p) {
                    *p = abs;
                }
            }
            cmd_generate(&cfg)
        }
        Command::Evaluate { data, out, config } => {
            let settings = match config {
                Some(p) => RunConfig::load(p)?.metrics,
                None => MetricSettings::default(),
            };
            let report = cmd_evaluate(&data, &out, &settings)?;
            print!("{}", report.table());
            Ok(Outcome::Success)
        }
        Command::Ablate { config, which, out } => {
            let cfg = load_config(&config)?;
            let report = cmd_ablate(&cfg, which)?;
            print!("{}", report.table());
            if let Some(out) = out {
                write_json(&out, &report)?;
            }
            Ok(Outcome::Success)
        }
        Command::Stats { data, out } => {
            let report = stats_dir(&data)?;
            print!("{}", report.table());
            let csv = out.unwrap_or_else(|| data.join("stats.csv"));
            std::fs::write(&csv, report.csv()).map_err(|e| Error::io(&csv, e))?;
            Ok(Outcome::Success)
        }
    }
}

/// Loads a config file. Relative map/originals paths are taken relative to
/// the working directory when they exist there, else to the config's
/// directory.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    for p in [&mut cfg.map, &mut cfg.originals].into_iter().flatten() {
        if !p.exists() {
            *p = crate::scenario::resolve_relative(p, path);
        }
    }
    Ok(cfg)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Recorded scenarios (`*.json`) of a directory, sorted by file name.
pub fn load_originals(dir: &Path) -> Result<Vec<(String, ScenarioFile)>> {
    json_files(dir)?
        .into_iter()
        .map(|p| {
            let name = file_name(&p);
            ScenarioFile::load(&p).map(|f| (name, f))
        })
        .collect()
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn json_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    Ok(files)
}

/// Everything shared by the scenarios of one batch.
pub struct Batch<'a> {
    pub cfg: &'a RunConfig,
    pub map: &'a MapModel,
    pub map_ref: MapRef,
    pub originals: &'a [(String, ScenarioFile)],
    engine: Engine<'a>,
}

impl<'a> Batch<'a> {
    pub fn new(cfg: &'a RunConfig, map: &'a MapModel, originals: &'a [(String, ScenarioFile)]) -> Result<Self> {
        let map_ref = if cfg.embed_map {
            MapRef::Embedded(map.to_document())
        } else {
            let p = cfg.map.clone().unwrap_or_default();
            MapRef::Path(std::fs::canonicalize(&p).unwrap_or(p))
        };
        Ok(Batch {
            cfg,
            map,
            map_ref,
            originals,
            engine: Engine::new(map, cfg)?,
        })
    }

    /// Simulates and smooths scenario `index`.
    pub fn scenario(&self, index: usize) -> Result<ScenarioFile> {
        let seed = self.cfg.scenario_seed(index);
        let source = (!self.originals.is_empty()).then(|| &self.originals[index % self.originals.len()]);
        let tracks = source.map(|(_, f)| f.tracks()).unwrap_or_default();
        let out = self.engine.run(&tracks, seed)?;
        let mut agents: Vec<AgentRecord> = source
            .map(|(_, f)| {
                f.agents
                    .iter()
                    .map(|a| AgentRecord {
                        kind: OccupantKind::Original,
                        ..a.clone()
                    })
                    .collect()
            })
            .unwrap_or_default();
        let mut summary = SmoothingSummary::default();
        let t_max = self.cfg.sim.horizon as f64 * self.cfg.sim.dt;
        for log in &out.log.agents {
            let raw = raw_points(log, self.cfg.sim.dt);
            let points = if self.cfg.sim.ablation.disable_smoothing || raw.len() < 2 {
                raw
            } else {
                self.smooth(log, &raw, &mut summary)
            };
            let samples = resample(&points, OUTPUT_DT, t_max);
            agents.push(AgentRecord {
                id: log.id.0,
                kind: OccupantKind::Generated,
                policy: log.label,
                samples,
            });
        }
        Ok(ScenarioFile {
            map: self.map_ref.clone(),
            agents,
            metadata: Metadata {
                seed,
                scenario_index: index,
                generator_version: GENERATOR_VERSION.to_string(),
                config: Some(self.cfg.clone()),
                originals_source: source.map(|(n, _)| n.clone()),
                stats: Some(out.stats),
                smoothing: (!self.cfg.sim.ablation.disable_smoothing).then_some(summary),
            },
        })
    }

    fn smooth(&self, log: &AgentLog, raw: &[TrajPoint], summary: &mut SmoothingSummary) -> Vec<TrajPoint> {
        let topo = self.engine.topology();
        let frame = reference_frame(self.map, topo, &log.cells);
        match frame.and_then(|f| smooth_path(raw, &f, &self.cfg.limits, self.cfg.sim.dt)) {
            Ok(s) => {
                summary.add(&s.report);
                s.points
            }
            Err(e) => {
                log::warn!("agent {} kept unsmoothed: {e}", log.id);
                summary.agents += 1;
                summary.unsmoothable_segments += 1;
                raw.to_vec()
            }
        }
    }
}

fn raw_points(log: &AgentLog, dt: f64) -> Vec<TrajPoint> {
    log.records
        .iter()
        .map(|r| TrajPoint {
            t: r.tick as f64 * dt,
            position: r.position,
            speed: r.speed,
            heading: r.heading,
        })
        .collect()
}

/// Lanes the agent's reference line follows: successor moves extend the
/// chain, lateral moves swap in the parallel lanes.
pub fn lane_chain(topo: &GridTopology, cells: &[CellRef]) -> Vec<u32> {
    let mut chain: Vec<u32> = Vec::new();
    for c in cells {
        let Some(&last) = chain.last() else {
            chain.push(c.lane);
            continue;
        };
        if last == c.lane {
            continue;
        }
        if topo.lane(last).successors.contains(&c.lane) {
            chain.push(c.lane);
            continue;
        }
        // lateral: replace the tail, then re-link earlier lanes to the new one
        *chain.last_mut().unwrap() = c.lane;
        let mut k = chain.len() - 1;
        while k > 0 {
            let next = chain[k];
            if topo.lane(chain[k - 1]).successors.contains(&next) {
                break;
            }
            let parallel = topo
                .lane(chain[k - 1])
                .lateral
                .iter()
                .copied()
                .find(|&l| topo.lane(l).successors.contains(&next));
            match parallel {
                Some(l) => chain[k - 1] = l,
                None => {
                    chain.drain(..k);
                    break;
                }
            }
            k -= 1;
        }
    }
    chain
}

pub fn reference_frame(map: &MapModel, topo: &GridTopology, cells: &[CellRef]) -> Result<FrenetFrame> {
    let chain = lane_chain(topo, cells);
    let lines: Vec<&[Vec2]> = chain
        .iter()
        .map(|&l| {
            map.lane(topo.lane_id(l))
                .map(|lane| lane.centerline.as_slice())
                .ok_or_else(|| Error::domain(format!("lane {} missing from map", topo.lane_id(l))))
        })
        .collect::<Result<_>>()?;
    FrenetFrame::from_chain(&lines)
}

/// Linear resampling at `period` from the first sample, up to `t_max`.
pub fn resample(points: &[TrajPoint], period: f64, t_max: f64) -> Vec<Sample> {
    let Some(first) = points.first() else {
        return Vec::new();
    };
    let last_t = points.last().unwrap().t.min(t_max);
    let count = ((last_t - first.t) / period + 1e-6).floor() as usize + 1;
    let mut out = Vec::with_capacity(count);
    let mut j = 0;
    for k in 0..count {
        let t = first.t + k as f64 * period;
        while j + 1 < points.len() && points[j + 1].t <= t + 1e-9 {
            j += 1;
        }
        let a = points[j];
        let p = if j + 1 < points.len() && (t - a.t).abs() > 1e-9 {
            let b = points[j + 1];
            let u = (t - a.t) / (b.t - a.t);
            TrajPoint {
                t,
                position: a.position.lerp(b.position, u),
                speed: a.speed + (b.speed - a.speed) * u,
                heading: wrap_angle(a.heading + wrap_angle(b.heading - a.heading) * u),
            }
        } else {
            a
        };
        out.push(Sample {
            t,
            x: p.position.x,
            y: p.position.y,
            v: p.speed,
            heading: p.heading,
        });
    }
    out
}

fn thread_pool(parallelism: usize) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if parallelism > 0 {
        b = b.num_threads(parallelism);
    }
    b.build().map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Generates all scenarios of `cfg` in memory, in index order.
pub fn generate_batch(cfg: &RunConfig) -> Result<Vec<ScenarioFile>> {
    let (map, originals) = batch_inputs(cfg)?;
    let batch = Batch::new(cfg, &map, &originals)?;
    thread_pool(cfg.parallelism)?.install(|| (0..cfg.scenarios).into_par_iter().map(|i| batch.scenario(i)).collect())
}

fn batch_inputs(cfg: &RunConfig) -> Result<(MapModel, Vec<(String, ScenarioFile)>)> {
    cfg.validate()?;
    let map_path = cfg.map.as_ref().ok_or_else(|| Error::Config("no map given".into()))?;
    let map = load_map(map_path)?;
    let originals = match &cfg.originals {
        Some(dir) => load_originals(dir)?,
        None => Vec::new(),
    };
    Ok((map, originals))
}

pub fn cmd_generate(cfg: &RunConfig) -> Result<Outcome> {
    let out_dir = cfg.out_dir.clone().ok_or_else(|| Error::Config("no output directory given".into()))?;
    let (map, originals) = batch_inputs(cfg)?;
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let batch = Batch::new(cfg, &map, &originals)?;
    let shortfalls: Vec<usize> = thread_pool(cfg.parallelism)?.install(|| {
        (0..cfg.scenarios)
            .into_par_iter()
            .map(|i| {
                let sc = batch.scenario(i)?;
                sc.save(out_dir.join(format!("scenario_{i:05}.json")))?;
                Ok(sc.metadata.stats.as_ref().map_or(0, |s| s.shortfall))
            })
            .collect::<Result<Vec<usize>>>()
    })?;
    let short: usize = shortfalls.iter().sum();
    log::info!("wrote {} scenarios to {}", cfg.scenarios, out_dir.display());
    if short > 0 {
        log::warn!("{short} requested agents could not be placed");
        Ok(Outcome::Partial)
    } else {
        Ok(Outcome::Success)
    }
}

/// Converts a scenario into metric inputs (samples as stored).
pub fn scenario_tracks(f: &ScenarioFile, map: &MapModel) -> ScenarioTracks {
    ScenarioTracks {
        agents: f
            .agents
            .iter()
            .map(|a| AgentTrack {
                times: a.samples.iter().map(|s| s.t).collect(),
                positions: a.samples.iter().map(|s| s.position()).collect(),
                headings: a.samples.iter().map(|s| s.heading).collect(),
            })
            .collect(),
        drivable_area: map.drivable_area.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedFile {
    pub file: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub lo: f64,
    pub la: f64,
    pub je: f64,
    pub scr: f64,
    pub orr: f64,
    pub n_scenarios: usize,
    pub n_agents: usize,
    pub skipped: Vec<SkippedFile>,
    pub config_echo: MetricSettings,
}

impl EvaluationReport {
    fn from_metrics(m: DatasetMetrics, skipped: Vec<SkippedFile>, settings: &MetricSettings) -> Self {
        EvaluationReport {
            lo: m.lo,
            la: m.la,
            je: m.je,
            scr: m.scr,
            orr: m.orr,
            n_scenarios: m.n_scenarios,
            n_agents: m.n_agents,
            skipped,
            config_echo: *settings,
        }
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:>10} {:>10} {:>10} {:>10} {:>10}", "LO", "LA", "JE", "SCR", "ORR");
        let _ = writeln!(
            s,
            "{:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4}",
            self.lo, self.la, self.je, self.scr, self.orr
        );
        let _ = writeln!(s, "scenarios: {}  agents: {}  skipped: {}", self.n_scenarios, self.n_agents, self.skipped.len());
        for sk in &self.skipped {
            let _ = writeln!(s, "  skipped {}: {}", sk.file, sk.error);
        }
        s
    }
}

/// Loads every `*.json` in `dir` (sorted); unreadable files are reported,
/// not fatal. An empty or entirely unreadable directory is an error.
pub fn evaluate_dir(dir: &Path, settings: &MetricSettings) -> Result<EvaluationReport> {
    let files = json_files(dir)?;
    let loaded: Vec<std::result::Result<ScenarioTracks, SkippedFile>> = files
        .par_iter()
        .map(|p| {
            let skip = |e: Error| SkippedFile {
                file: file_name(p),
                error: e.to_string().replace(&dir.display().to_string(), "<data>"),
            };
            let f = ScenarioFile::load(p).map_err(skip)?;
            let map = f.resolve_map(p).map_err(skip)?;
            Ok(scenario_tracks(&f, &map))
        })
        .collect();
    let mut scenarios = Vec::new();
    let mut skipped = Vec::new();
    for r in loaded {
        match r {
            Ok(s) => scenarios.push(s),
            Err(s) => skipped.push(s),
        }
    }
    if scenarios.is_empty() {
        return Err(Error::domain(format!("no readable scenario files in {}", dir.display())));
    }
    let m = evaluate_dataset(&scenarios, settings);
    Ok(EvaluationReport::from_metrics(m, skipped, settings))
}

pub fn cmd_evaluate(dir: &Path, out: &Path, settings: &MetricSettings) -> Result<EvaluationReport> {
    let report = evaluate_dir(dir, settings)?;
    write_json(out, &report)?;
    let txt = out.with_extension("txt");
    std::fs::write(&txt, report.table()).map_err(|e| Error::io(&txt, e))?;
    Ok(report)
}

/// In-memory evaluation of a generated batch.
pub fn evaluate_batch(files: &[ScenarioFile], map: &MapModel, settings: &MetricSettings) -> DatasetMetrics {
    let tracks: Vec<ScenarioTracks> = files.iter().map(|f| scenario_tracks(f, map)).collect();
    evaluate_dataset(&tracks, settings)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub which: AblationKind,
    pub scenarios: usize,
    pub seed: u64,
    pub baseline: DatasetMetrics,
    pub ablated: DatasetMetrics,
}

impl AblationReport {
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<16} {:>9} {:>9} {:>9} {:>9} {:>9}", "variant", "LO", "LA", "JE", "SCR", "ORR");
        for (name, m) in [("full", &self.baseline), (self.which.label(), &self.ablated)] {
            let _ = writeln!(
                s,
                "{:<16} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
                name, m.lo, m.la, m.je, m.scr, m.orr
            );
        }
        s
    }
}

pub fn cmd_ablate(cfg: &RunConfig, which: AblationKind) -> Result<AblationReport> {
    let (map, originals) = batch_inputs(cfg)?;
    let mut ablated_cfg = cfg.clone();
    which.apply(&mut ablated_cfg);
    let pool = thread_pool(cfg.parallelism)?;
    let run = |c: &RunConfig| -> Result<DatasetMetrics> {
        let batch = Batch::new(c, &map, &originals)?;
        let files: Vec<ScenarioFile> =
            pool.install(|| (0..c.scenarios).into_par_iter().map(|i| batch.scenario(i)).collect::<Result<_>>())?;
        Ok(evaluate_batch(&files, &map, &c.metrics))
    };
    Ok(AblationReport {
        which,
        scenarios: cfg.scenarios,
        seed: cfg.sim.seed,
        baseline: run(cfg)?,
        ablated: run(&ablated_cfg)?,
    })
}

/// Thresholds reported as "more than N agents" counts.
pub const DENSITY_THRESHOLDS: [usize; 4] = [40, 50, 70, 90];

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StatsReport {
    pub n_scenarios: usize,
    /// Scenarios per agent-count bin `[10k, 10k + 10)`, keyed by the bin start.
    pub density: BTreeMap<usize, usize>,
    /// Scenarios with strictly more than N agents.
    pub above: BTreeMap<usize, usize>,
    /// Agents per behavior label.
    pub behavior_agents: BTreeMap<String, usize>,
    /// Scenarios containing at least one agent with the label.
    pub behavior_scenarios: BTreeMap<String, usize>,
    pub skipped: Vec<SkippedFile>,
}

impl StatsReport {
    pub fn add_scenario(&mut self, labels: &[PolicyKind]) {
        let n = labels.len();
        self.n_scenarios += 1;
        *self.density.entry(n / 10 * 10).or_insert(0) += 1;
        for t in DENSITY_THRESHOLDS {
            *self.above.entry(t).or_insert(0) += usize::from(n > t);
        }
        for k in PolicyKind::ALL {
            let count = labels.iter().filter(|l| **l == k).count();
            *self.behavior_agents.entry(k.label().into()).or_insert(0) += count;
            *self.behavior_scenarios.entry(k.label().into()).or_insert(0) += usize::from(count > 0);
        }
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scenarios: {}", self.n_scenarios);
        let _ = writeln!(s, "{:<12} {:>9}", "agents", "scenarios");
        for (bin, c) in &self.density {
            let _ = writeln!(s, "{:<12} {:>9}", format!("{}-{}", bin, bin + 9), c);
        }
        for (t, c) in &self.above {
            let _ = writeln!(s, "{:<12} {:>9}", format!(">{t}"), c);
        }
        let _ = writeln!(s, "{:<12} {:>9} {:>9}", "behavior", "agents", "scenarios");
        for k in PolicyKind::ALL {
            let l = k.label();
            let _ = writeln!(
                s,
                "{:<12} {:>9} {:>9}",
                l,
                self.behavior_agents.get(l).copied().unwrap_or(0),
                self.behavior_scenarios.get(l).copied().unwrap_or(0)
            );
        }
        s
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("kind,key,agents,scenarios\n");
        for (bin, c) in &self.density {
            let _ = writeln!(s, "density,{bin},,{c}");
        }
        for (t, c) in &self.above {
            let _ = writeln!(s, "above,{t},,{c}");
        }
        for k in PolicyKind::ALL {
            let l = k.label();
            let _ = writeln!(
                s,
                "behavior,{l},{},{}",
                self.behavior_agents.get(l).copied().unwrap_or(0),
                self.behavior_scenarios.get(l).copied().unwrap_or(0)
            );
        }
        s
    }
}

pub fn stats_dir(dir: &Path) -> Result<StatsReport> {
    let mut report = StatsReport::default();
    for p in json_files(dir)? {
        match ScenarioFile::load(&p) {
            Ok(f) => report.add_scenario(&f.agents.iter().map(|a| a.policy).collect::<Vec<_>>()),
            Err(e) => report.skipped.push(SkippedFile {
                file: file_name(&p),
                error: e.to_string(),
            }),
        }
    }
    Ok(report)
}

/// Stats of an in-memory batch.
pub fn stats_of(files: &[ScenarioFile]) -> StatsReport {
    let mut report = StatsReport::default();
    for f in files {
        report.add_scenario(&f.agents.iter().map(|a| a.policy).collect::<Vec<_>>());
    }
    report
}

/// Placeholder stats for files without engine stats.
pub fn stats_or_default(f: &ScenarioFile) -> ScenarioStats {
    f.metadata.stats.clone().unwrap_or_default()
}
