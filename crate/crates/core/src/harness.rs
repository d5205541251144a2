//! Experiment configuration, orchestration and output files.
//!
//! A config is a strict TOML document. Exactly one of the `[trajectory]` and
//! `[caching]` sections selects the mode. Each seed of a run writes
//! `seed-<n>/metrics.jsonl` and `seed-<n>/manifest.json`; after all seeds
//! finish, one `summary.csv` is written next to them.
//!
//! The output directory is `experiment.output_dir` relative to the working
//! directory, or `$UAVNET_OUTPUT_ROOT/<experiment.name>` when that variable
//! is set.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::cache::{run_caching_experiment, CachingConfig, CachingSlot};
use crate::channel::{ChannelParams, LossMode};
use crate::error::{Error, Result};
use crate::mobility::{load_trace, place_from_trace, MobilityModel, WaypointParams};
use crate::reservoir::{PositionForecaster, PositionScaler, ReservoirConfig};
use crate::seed::{rng_for, seed_stream};
use crate::trajectory::{
    self, mobility_sequences, static_baseline, tail_mean_sum_rate, train, EpisodeLog, HyperParams, Placement,
    SlotRecord,
};
use crate::world::{validate_scenario, Bounds, Clock, Position3, Scenario, UavState, UserState};

pub const OUTPUT_ROOT_ENV: &str = "UAVNET_OUTPUT_ROOT";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Trajectory,
    Caching,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    /// Optional; must agree with the mode section when given.
    #[serde(default)]
    pub mode: Option<Mode>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlacementKind {
    Centroid,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSection {
    pub x_max: f64,
    pub y_max: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub cell_size: f64,
    pub n_uavs: usize,
    pub n_users: usize,
    pub uav_altitude: f64,
    pub placement: PlacementKind,
    /// `[x, y, z]` per UAV when `placement = "fixed"`.
    pub uav_positions: Vec<[f64; 3]>,
    /// Seconds.
    pub slot_duration: f64,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        let b = Bounds::default();
        Self {
            x_max: b.x_max,
            y_max: b.y_max,
            z_min: b.z_min,
            z_max: b.z_max,
            cell_size: 100.0,
            n_uavs: 2,
            n_users: 20,
            uav_altitude: 100.0,
            placement: PlacementKind::Centroid,
            uav_positions: Vec::new(),
            slot_duration: 1.0,
        }
    }
}

impl ScenarioSection {
    pub fn bounds(&self) -> Bounds {
        Bounds {
            x_max: self.x_max,
            y_max: self.y_max,
            z_min: self.z_min,
            z_max: self.z_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSection {
    pub carrier_frequency: f64,
    pub los_a: f64,
    pub los_b: f64,
    pub eta_los: f64,
    pub eta_nlos: f64,
    /// W/Hz.
    pub noise_power_density: f64,
    /// W, strictly decreasing.
    pub power_ladder: Vec<f64>,
    pub mode: LossMode,
    /// Hz per UAV.
    pub bandwidth: f64,
}

impl Default for ChannelSection {
    fn default() -> Self {
        let c = ChannelParams::default();
        Self {
            carrier_frequency: c.carrier_frequency,
            los_a: c.los_a,
            los_b: c.los_b,
            eta_los: c.eta_los,
            eta_nlos: c.eta_nlos,
            noise_power_density: c.noise_power_density,
            power_ladder: c.power_ladder,
            mode: c.mode,
            bandwidth: 1e6,
        }
    }
}

impl ChannelSection {
    pub fn params(&self) -> ChannelParams {
        ChannelParams {
            carrier_frequency: self.carrier_frequency,
            los_a: self.los_a,
            los_b: self.los_b,
            eta_los: self.eta_los,
            eta_nlos: self.eta_nlos,
            noise_power_density: self.noise_power_density,
            power_ladder: self.power_ladder.clone(),
            mode: self.mode,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MobilityKind {
    Static,
    RandomWaypoint,
    Trace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MobilitySection {
    pub model: MobilityKind,
    pub speed_min: f64,
    pub speed_max: f64,
    pub pause: f64,
    /// CSV trace, relative to the config file.
    pub trace: Option<PathBuf>,
}

impl Default for MobilitySection {
    fn default() -> Self {
        Self {
            model: MobilityKind::RandomWaypoint,
            speed_min: 0.5,
            speed_max: 1.5,
            pause: 0.0,
            trace: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryPolicy {
    /// Learned movement and power control.
    Maql,
    /// Learned movement at maximum power only.
    MaqlMaxPower,
    /// UAVs fixed at the centroid placement, maximum power.
    Static,
}

impl TrajectoryPolicy {
    pub fn name(self) -> &'static str {
        match self {
            TrajectoryPolicy::Maql => "maql",
            TrajectoryPolicy::MaqlMaxPower => "maql-max-power",
            TrajectoryPolicy::Static => "static",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectorySection {
    pub policies: Vec<TrajectoryPolicy>,
    /// Fraction of final episodes averaged for the summary.
    pub tail_fraction: f64,
    /// Feed echo-state forecasts of user positions into the agents' states.
    pub forecast: bool,
    pub forecaster_sequences: usize,
    pub forecaster_slots: usize,
}

impl Default for TrajectorySection {
    fn default() -> Self {
        Self {
            policies: vec![TrajectoryPolicy::Maql, TrajectoryPolicy::Static],
            tail_fraction: 0.1,
            forecast: false,
            forecaster_sequences: 4,
            forecaster_slots: 200,
        }
    }
}

/// A parsed and validated experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub channel: ChannelSection,
    #[serde(default)]
    pub mobility: MobilitySection,
    #[serde(default)]
    pub esn: ReservoirConfig,
    #[serde(default)]
    pub lsm: ReservoirConfig,
    #[serde(default)]
    pub rl: HyperParams,
    #[serde(default)]
    pub trajectory: Option<TrajectorySection>,
    #[serde(default)]
    pub caching: Option<CachingConfig>,
    /// Directory of the config file; relative paths resolve against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
    #[serde(skip)]
    pub source: PathBuf,
    /// Hex SHA-256 of the config file bytes.
    #[serde(skip)]
    pub sha256: String,
    #[serde(skip)]
    pub mobility_model: Option<MobilityModel>,
}

impl ExperimentConfig {
    pub fn mode(&self) -> Mode {
        if self.caching.is_some() {
            Mode::Caching
        } else {
            Mode::Trajectory
        }
    }

    pub fn trajectory_section(&self) -> TrajectorySection {
        self.trajectory.clone().unwrap_or_default()
    }

    pub fn caching_section(&self) -> CachingConfig {
        self.caching.clone().unwrap_or_default()
    }

    /// Mobility model with any trace already loaded.
    pub fn mobility(&self) -> Result<MobilityModel> {
        match &self.mobility_model {
            Some(m) => Ok(m.clone()),
            None => build_mobility(&self.mobility, &self.base_dir),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn build_mobility(m: &MobilitySection, base_dir: &Path) -> Result<MobilityModel> {
    Ok(match m.model {
        MobilityKind::Static => MobilityModel::Static,
        MobilityKind::RandomWaypoint => MobilityModel::RandomWaypoint(WaypointParams {
            speed_min: m.speed_min,
            speed_max: m.speed_max,
            pause: m.pause,
        }),
        MobilityKind::Trace => {
            let rel = m
                .trace
                .as_ref()
                .ok_or_else(|| Error::Config(vec!["mobility.trace: required when model = \"trace\"".into()]))?;
            MobilityModel::TracePlayback(load_trace(base_dir.join(rel))?)
        }
    })
}

/// Parses TOML text; `base_dir` anchors relative paths.
pub fn parse_config_str(text: &str, base_dir: &Path) -> Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(vec![e.to_string()]))?;
    cfg.base_dir = base_dir.to_path_buf();
    cfg.sha256 = sha256_hex(text.as_bytes());
    let mut v = violations(&cfg);
    match build_mobility(&cfg.mobility, base_dir) {
        Ok(m) => {
            v.extend(m.violations(cfg.scenario.n_users).into_iter().map(|e| format!("mobility: {e}")));
            cfg.mobility_model = Some(m);
        }
        Err(Error::Config(errs)) => v.extend(errs),
        Err(e) => v.push(format!("mobility.trace: {e}")),
    }
    if v.is_empty() && cfg.mode() == Mode::Trajectory {
        let s = build_scenario(&cfg, 0)?;
        v.extend(validate_scenario(&s).iter().map(ToString::to_string));
    }
    if v.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::Config(v))
    }
}

/// Reads and validates a config file, reporting every violation found.
pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut cfg = parse_config_str(&text, &base)?;
    cfg.source = path.to_path_buf();
    Ok(cfg)
}

fn violations(cfg: &ExperimentConfig) -> Vec<String> {
    let mut v = Vec::new();
    let e = &cfg.experiment;
    if e.name.is_empty() || !e.name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
        v.push("experiment.name: must be non-empty and use only [A-Za-z0-9._-]".into());
    }
    if e.seeds.is_empty() {
        v.push("experiment.seeds: needs at least one seed".into());
    }
    if e.seeds.iter().collect::<BTreeSet<_>>().len() != e.seeds.len() {
        v.push("experiment.seeds: seeds must be distinct".into());
    }
    if e.workers == 0 {
        v.push("experiment.workers: must be at least 1".into());
    }
    match (cfg.trajectory.is_some(), cfg.caching.is_some()) {
        (true, true) => v.push("mode: [trajectory] and [caching] are mutually exclusive; give exactly one".into()),
        (false, false) => v.push("mode: one of [trajectory] or [caching] is required".into()),
        _ => {
            if let Some(m) = e.mode {
                if m != cfg.mode() {
                    v.push(format!("experiment.mode: {m:?} does not match the mode section given"));
                }
            }
        }
    }

    let s = &cfg.scenario;
    for (name, x) in [("x_max", s.x_max), ("y_max", s.y_max), ("cell_size", s.cell_size)] {
        if !(x > 0.0 && x.is_finite()) {
            v.push(format!("scenario.{name}: must be positive"));
        }
    }
    if !(s.z_min >= 0.0 && s.z_max > s.z_min && s.z_max.is_finite()) {
        v.push("scenario.z_max: require 0 <= z_min < z_max".into());
    }
    if s.n_uavs == 0 {
        v.push("scenario.n_uavs: must be at least 1".into());
    }
    if s.n_users == 0 {
        v.push("scenario.n_users: must be at least 1".into());
    }
    if !(s.slot_duration > 0.0 && s.slot_duration.is_finite()) {
        v.push("scenario.slot_duration: must be positive".into());
    }
    if s.placement == PlacementKind::Fixed && s.uav_positions.len() != s.n_uavs {
        v.push(format!(
            "scenario.uav_positions: fixed placement needs {} positions, got {}",
            s.n_uavs,
            s.uav_positions.len()
        ));
    }

    v.extend(cfg.channel.params().violations("channel").iter().map(ToString::to_string));
    if !(cfg.channel.bandwidth > 0.0 && cfg.channel.bandwidth.is_finite()) {
        v.push("channel.bandwidth: must be positive".into());
    }

    let m = &cfg.mobility;
    if m.model == MobilityKind::Trace && m.trace.is_none() {
        v.push("mobility.trace: required when model = \"trace\"".into());
    }
    if m.model != MobilityKind::Trace && m.trace.is_some() {
        v.push("mobility.trace: only allowed with model = \"trace\"".into());
    }

    v.extend(cfg.esn.violations("esn"));
    v.extend(cfg.lsm.violations("lsm"));
    v.extend(cfg.rl.violations("rl"));
    if cfg.rl.episodes == 0 {
        v.push("rl.episodes: must be at least 1".into());
    }
    if let Some(t) = &cfg.trajectory {
        if t.policies.is_empty() {
            v.push("trajectory.policies: needs at least one policy".into());
        }
        if !(t.tail_fraction > 0.0 && t.tail_fraction <= 1.0) {
            v.push("trajectory.tail_fraction: must lie in (0, 1]".into());
        }
        if t.forecast && (t.forecaster_sequences == 0 || t.forecaster_slots <= cfg.esn.washout + 1) {
            v.push("trajectory.forecaster_slots: forecaster needs sequences with post-washout samples".into());
        }
    }
    if let Some(c) = &cfg.caching {
        v.extend(c.violations("caching"));
    }
    v
}

/// Scenario for one seed: users uniform over the ground area (or at their
/// trace positions at time 0), UAVs at the configured placement.
pub fn build_scenario(cfg: &ExperimentConfig, seed: u64) -> Result<Scenario> {
    let sc = &cfg.scenario;
    let bounds = sc.bounds();
    let mut rng = rng_for(seed, &["users"]);
    let mut users: Vec<UserState> = (0..sc.n_users)
        .map(|id| UserState {
            id,
            position: Position3::ground(rng.random::<f64>() * bounds.x_max, rng.random::<f64>() * bounds.y_max),
            serving_uav: None,
        })
        .collect();
    if let MobilityModel::TracePlayback(t) = cfg.mobility()? {
        place_from_trace(&t, &bounds, &mut users, 0.0);
    }
    let uavs = (0..sc.n_uavs)
        .map(|id| UavState {
            id,
            position: Position3::new(bounds.x_max / 2.0, bounds.y_max / 2.0, sc.uav_altitude),
            power_level_index: 0,
            bandwidth: cfg.channel.bandwidth,
        })
        .collect();
    let s = Scenario {
        bounds,
        cell_size: sc.cell_size,
        uavs,
        users,
        channel: cfg.channel.params(),
        clock: Clock {
            slot: 0,
            slot_duration: sc.slot_duration,
        },
    };
    let placement = match sc.placement {
        PlacementKind::Centroid => Placement::Centroid,
        PlacementKind::Fixed => Placement::Fixed(sc.uav_positions.iter().map(|p| Position3::new(p[0], p[1], p[2])).collect()),
    };
    trajectory::static_scenario(&s, &placement)
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MetricLine {
    Episode {
        policy: String,
        episode: usize,
        epsilon: f64,
        mean_sum_rate: f64,
        cumulative_reward: f64,
    },
    /// Slot records of a policy's final episode.
    Slot {
        policy: String,
        #[serde(flatten)]
        record: SlotRecord,
    },
    Forecaster {
        holdout_mse: f64,
        persistence_mse: f64,
    },
    CachingSlot {
        policy: String,
        n_uavs: usize,
        #[serde(flatten)]
        slot: CachingSlot,
    },
}

/// One row of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub seed: u64,
    pub policy: String,
    /// Empty in trajectory mode.
    pub n_uavs: Option<usize>,
    /// Tail-mean sum rate (bit/s) or tail-mean stable users.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub experiment: String,
    pub mode: Mode,
    pub config_path: PathBuf,
    pub config_sha256: String,
    pub seed: u64,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub status: String,
    pub error: Option<String>,
    /// Files relative to the manifest's directory.
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seeds: Option<Vec<u64>>,
    pub workers: Option<usize>,
    pub output_root: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedOutcome {
    pub seed: u64,
    pub manifest: PathBuf,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub output_dir: PathBuf,
    pub summary: PathBuf,
    pub seeds: Vec<SeedOutcome>,
    pub rows: Vec<SummaryRow>,
}

impl RunReport {
    pub fn all_ok(&self) -> bool {
        self.seeds.iter().all(|s| s.error.is_none())
    }
}

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis())
}

pub fn output_dir(cfg: &ExperimentConfig, opts: &RunOptions) -> PathBuf {
    let root = opts
        .output_root
        .clone()
        .or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from));
    match root {
        Some(r) => r.join(&cfg.experiment.name),
        None => cfg.experiment.output_dir.clone(),
    }
}

/// Runs every seed (concurrently up to the worker count), then writes the
/// combined summary. A failing seed is recorded in its manifest and does not
/// stop the others.
pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunReport> {
    let seeds = opts.seeds.clone().unwrap_or_else(|| cfg.experiment.seeds.clone());
    let workers = opts.workers.unwrap_or(cfg.experiment.workers).max(1);
    let dir = output_dir(cfg, opts);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Contract(format!("worker pool: {e}")))?;
    let results: Vec<(SeedOutcome, Vec<SummaryRow>)> =
        pool.install(|| seeds.par_iter().map(|&seed| run_seed_to_disk(cfg, seed, &dir)).collect());

    let mut rows = Vec::new();
    let mut outcomes = Vec::new();
    for (o, r) in results {
        outcomes.push(o);
        rows.extend(r);
    }
    let summary = dir.join(SUMMARY_FILE);
    write_summary(&summary, cfg.mode(), &rows)?;
    Ok(RunReport {
        output_dir: dir,
        summary,
        seeds: outcomes,
        rows,
    })
}

fn write_summary(path: &Path, mode: Mode, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serde(e.to_string()))?;
    let csv_err = |e: csv::Error| Error::Serde(e.to_string());
    match mode {
        Mode::Trajectory => {
            w.write_record(["seed", "policy", "tail_mean_sum_rate"]).map_err(csv_err)?;
            for r in rows {
                w.write_record([r.seed.to_string(), r.policy.clone(), r.value.to_string()]).map_err(csv_err)?;
            }
        }
        Mode::Caching => {
            w.write_record(["seed", "policy", "n_uavs", "tail_mean_stable_users"]).map_err(csv_err)?;
            for r in rows {
                let n = r.n_uavs.map(|n| n.to_string()).unwrap_or_default();
                w.write_record([r.seed.to_string(), r.policy.clone(), n, r.value.to_string()]).map_err(csv_err)?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn run_seed_to_disk(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> (SeedOutcome, Vec<SummaryRow>) {
    let seed_dir = dir.join(format!("seed-{seed}"));
    let manifest_path = seed_dir.join(MANIFEST_FILE);
    let started = now_ms();
    let partial = seed_dir.join(format!("{METRICS_FILE}.partial"));
    let result = (|| {
        fs::create_dir_all(&seed_dir).map_err(|e| Error::io(&seed_dir, e))?;
        let (lines, rows) = run_seed(cfg, seed)?;
        let file = fs::File::create(&partial).map_err(|e| Error::io(&partial, e))?;
        let mut w = BufWriter::new(file);
        for line in &lines {
            serde_json::to_writer(&mut w, line)?;
            w.write_all(b"\n").map_err(|e| Error::io(&partial, e))?;
        }
        w.flush().map_err(|e| Error::io(&partial, e))?;
        Ok::<_, Error>(rows)
    })();
    let (status, error, outputs, rows) = match result {
        Ok(rows) => ("ok", None, vec![METRICS_FILE.to_string()], rows),
        Err(e) => {
            let _ = fs::remove_file(&partial);
            ("error", Some(e.to_string()), vec![], vec![])
        }
    };
    let manifest = RunManifest {
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        experiment: cfg.experiment.name.clone(),
        mode: cfg.mode(),
        config_path: cfg.source.clone(),
        config_sha256: cfg.sha256.clone(),
        seed,
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
        status: status.into(),
        error: error.clone(),
        outputs,
    };
    let written = (|| {
        fs::create_dir_all(&seed_dir).map_err(|e| Error::io(&seed_dir, e))?;
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))?;
        if error.is_none() {
            let fin = seed_dir.join(METRICS_FILE);
            fs::rename(&partial, &fin).map_err(|e| Error::io(&fin, e))?;
        }
        Ok::<(), Error>(())
    })();
    let error = match (error, written) {
        (Some(e), _) => Some(e),
        (None, Err(e)) => Some(e.to_string()),
        (None, Ok(())) => None,
    };
    let rows = if error.is_some() { vec![] } else { rows };
    (
        SeedOutcome {
            seed,
            manifest: manifest_path,
            error,
        },
        rows,
    )
}

/// Runs one seed in memory and returns its metric lines and summary rows.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<(Vec<MetricLine>, Vec<SummaryRow>)> {
    match cfg.mode() {
        Mode::Trajectory => run_trajectory_seed(cfg, seed),
        Mode::Caching => run_caching_seed(cfg, seed),
    }
}

fn episode_lines(policy: &str, logs: &[EpisodeLog], lines: &mut Vec<MetricLine>) {
    for l in logs {
        lines.push(MetricLine::Episode {
            policy: policy.to_string(),
            episode: l.episode,
            epsilon: l.epsilon,
            mean_sum_rate: l.mean_sum_rate,
            cumulative_reward: l.cumulative_reward,
        });
    }
    if let Some(last) = logs.last() {
        for r in &last.rows {
            lines.push(MetricLine::Slot {
                policy: policy.to_string(),
                record: r.clone(),
            });
        }
    }
}

fn trained_forecaster(
    cfg: &ExperimentConfig,
    s: &Scenario,
    mobility: &MobilityModel,
    seed: u64,
    lines: &mut Vec<MetricLine>,
) -> Result<PositionForecaster> {
    let t = cfg.trajectory_section();
    let esn = ReservoirConfig {
        seed: seed_stream(seed, &["esn", &cfg.esn.seed.to_string()]),
        ..cfg.esn.clone()
    };
    let scaler = PositionScaler {
        x_max: s.bounds.x_max,
        y_max: s.bounds.y_max,
    };
    let mut f = PositionForecaster::new(&esn, s.users.len(), scaler)?;
    let mut seqs = mobility_sequences(s, mobility, t.forecaster_sequences + 1, t.forecaster_slots, seed)?;
    let holdout = seqs.pop().expect("at least one sequence");
    f.train(&seqs)?;
    let split = esn.washout.max(1).min(holdout.len() - 1);
    let forecast = f.predict_next_positions(&holdout[..split], 0, Some(&holdout[split..]))?;
    let mut persist = 0.0;
    let mut n = 0usize;
    for pair in holdout[split - 1..].windows(2) {
        for (a, b) in pair[0].iter().zip(&pair[1]) {
            persist += (a.x - b.x).powi(2) + (a.y - b.y).powi(2);
            n += 2;
        }
    }
    lines.push(MetricLine::Forecaster {
        holdout_mse: forecast.holdout_mse.unwrap_or(f64::NAN),
        persistence_mse: persist / n.max(1) as f64,
    });
    Ok(f)
}

fn run_trajectory_seed(cfg: &ExperimentConfig, seed: u64) -> Result<(Vec<MetricLine>, Vec<SummaryRow>)> {
    let t = cfg.trajectory_section();
    let s = build_scenario(cfg, seed)?;
    let mobility = cfg.mobility()?;
    let mut lines = Vec::new();
    let forecaster = if t.forecast {
        Some(trained_forecaster(cfg, &s, &mobility, seed, &mut lines)?)
    } else {
        None
    };
    let rate_norm = match cfg.rl.rate_norm {
        Some(r) => r,
        None => trajectory::default_rate_norm(&s)?,
    };
    let hp = HyperParams {
        rate_norm: Some(rate_norm),
        ..cfg.rl.clone()
    };
    let mut rows = Vec::new();
    for policy in &t.policies {
        let logs = match policy {
            TrajectoryPolicy::Maql | TrajectoryPolicy::MaqlMaxPower => {
                let mut scen = s.clone();
                if *policy == TrajectoryPolicy::MaqlMaxPower {
                    scen.channel.power_ladder.truncate(1);
                }
                let mut f = forecaster.clone();
                train(&scen, &hp, &mobility, f.as_mut(), seed)?.logs
            }
            TrajectoryPolicy::Static => (0..hp.episodes)
                .map(|e| static_baseline(&s, &Placement::Centroid, &mobility, hp.slots_per_episode, rate_norm, seed, e))
                .collect::<Result<Vec<_>>>()?,
        };
        episode_lines(policy.name(), &logs, &mut lines);
        rows.push(SummaryRow {
            seed,
            policy: policy.name().into(),
            n_uavs: None,
            value: tail_mean_sum_rate(&logs, t.tail_fraction),
        });
    }
    Ok((lines, rows))
}

fn run_caching_seed(cfg: &ExperimentConfig, seed: u64) -> Result<(Vec<MetricLine>, Vec<SummaryRow>)> {
    let c = cfg.caching_section();
    let base = build_scenario_users_only(cfg, seed)?;
    let mut lines = Vec::new();
    let mut rows = Vec::new();
    for &n in &c.n_uavs {
        for &policy in &c.policies {
            let run = run_caching_experiment(&base, &c, &cfg.lsm, n, policy, seed)?;
            for slot in &run.slots {
                lines.push(MetricLine::CachingSlot {
                    policy: policy.name().into(),
                    n_uavs: n,
                    slot: slot.clone(),
                });
            }
            rows.push(SummaryRow {
                seed,
                policy: policy.name().into(),
                n_uavs: Some(n),
                value: run.tail_mean_stable_users,
            });
        }
    }
    Ok((lines, rows))
}

fn build_scenario_users_only(cfg: &ExperimentConfig, seed: u64) -> Result<Scenario> {
    let mut s = build_scenario(cfg, seed)?;
    s.uavs.clear();
    Ok(s)
}

/// Parses a metrics file back into lines.
pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricLine>> {
    let path = path.as_ref();
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(f)
        .lines()
        .enumerate()
        .map(|(i, line)| {
            let line = line.map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Geographic anchor of the local frame's origin, in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoAnchor {
    pub lat: f64,
    pub lon: f64,
}

/// Meters per degree of latitude (and of longitude at the equator).
pub const METERS_PER_DEGREE: f64 = 111_320.0;

impl GeoAnchor {
    /// Equirectangular offset of local `(x east, y north)` meters.
    pub fn to_lon_lat(&self, x: f64, y: f64) -> (f64, f64) {
        let lat = self.lat + y / METERS_PER_DEGREE;
        let lon = self.lon + x / (METERS_PER_DEGREE * self.lat.to_radians().cos());
        (lon, lat)
    }
}

fn position(anchor: &GeoAnchor, p: &Position3, with_altitude: bool) -> Value {
    let (lon, lat) = anchor.to_lon_lat(p.x, p.y);
    if with_altitude {
        json!([lon, lat, p.z])
    } else {
        json!([lon, lat])
    }
}

/// GeoJSON FeatureCollection of one episode: a LineString per UAV (with
/// altitude) and a MultiPoint of the users' final positions.
pub fn export_trajectory_geojson(rows: &[SlotRecord], anchor: GeoAnchor) -> Result<Value> {
    let last = rows
        .last()
        .ok_or_else(|| Error::Contract("episode has no slots to export".into()))?;
    let n_uavs = last.uav_positions.len();
    let mut features = Vec::with_capacity(n_uavs + 1);
    for j in 0..n_uavs {
        let coords: Vec<Value> = rows.iter().map(|r| position(&anchor, &r.uav_positions[j], true)).collect();
        features.push(json!({
            "type": "Feature",
            "properties": { "role": "uav", "uav": j },
            "geometry": { "type": "LineString", "coordinates": coords },
        }));
    }
    let users: Vec<Value> = last.user_positions.iter().map(|p| position(&anchor, p, false)).collect();
    features.push(json!({
        "type": "Feature",
        "properties": { "role": "users", "episode": last.episode, "slot": last.slot },
        "geometry": { "type": "MultiPoint", "coordinates": users },
    }));
    Ok(json!({ "type": "FeatureCollection", "features": features }))
}

/// Exports the final logged episode of a run's learned policy (or of the
/// first policy with slot records) next to the manifest, or to `out`.
pub fn export_run_geojson(manifest: impl AsRef<Path>, anchor: GeoAnchor, out: Option<&Path>) -> Result<PathBuf> {
    let manifest = manifest.as_ref();
    let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let m: RunManifest = serde_json::from_str(&text)?;
    if m.status != "ok" {
        return Err(Error::Contract(format!("run for seed {} did not complete: {:?}", m.seed, m.error)));
    }
    let dir = manifest.parent().unwrap_or(Path::new("."));
    let metrics = dir.join(METRICS_FILE);
    let mut by_policy: Vec<(String, Vec<SlotRecord>)> = Vec::new();
    for line in read_metrics(&metrics)? {
        if let MetricLine::Slot { policy, record } = line {
            match by_policy.iter_mut().find(|(p, _)| *p == policy) {
                Some((_, v)) => v.push(record),
                None => by_policy.push((policy, vec![record])),
            }
        }
    }
    let rows = by_policy
        .iter()
        .find(|(p, _)| p == TrajectoryPolicy::Maql.name())
        .or_else(|| by_policy.first())
        .map(|(_, r)| r.as_slice())
        .unwrap_or(&[]);
    let doc = export_trajectory_geojson(rows, anchor)?;
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| dir.join("trajectory.geojson"));
    fs::write(&path, serde_json::to_string_pretty(&doc)?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const MINIMAL: &str = r#"
[experiment]
name = "t"

[trajectory]
"#;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        parse_config_str(text, Path::new("."))
    }

    fn config_errors(text: &str) -> Vec<String> {
        match parse(text) {
            Err(Error::Config(v)) => v,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config_parses() {
        let c = parse(MINIMAL).unwrap();
        assert_eq!(c.mode(), Mode::Trajectory);
        assert_eq!(c.experiment.seeds, vec![0]);
        assert_eq!(c.sha256.len(), 64);
    }

    #[test]
    fn negative_bandwidth_names_field() {
        let v = config_errors(&format!("{MINIMAL}\n[channel]\nbandwidth = -1.0\n"));
        assert!(v.iter().any(|m| m.contains("channel.bandwidth")), "{v:?}");
    }

    #[test]
    fn both_modes_is_a_violation() {
        let v = config_errors(&format!("{MINIMAL}\n[caching]\n"));
        assert!(v.iter().any(|m| m.contains("mutually exclusive")), "{v:?}");
    }

    #[test]
    fn unknown_key_is_named() {
        let v = config_errors(&format!("{MINIMAL}\n[channel]\nbandwith = 1.0\n"));
        assert!(v[0].contains("bandwith"), "{v:?}");
    }

    #[test]
    fn every_violation_is_reported() {
        let text = "[experiment]\nname = \"t\"\nworkers = 0\n[trajectory]\ntail_fraction = 2.0\n[rl]\nalpha = 0.0\n[channel]\nbandwidth = -5.0\n";
        let v = config_errors(text);
        for key in ["experiment.workers", "trajectory.tail_fraction", "rl.alpha", "channel.bandwidth"] {
            assert!(v.iter().any(|m| m.contains(key)), "missing {key} in {v:?}");
        }
    }

    #[test]
    fn missing_trace_file_is_a_violation() {
        let v = config_errors(&format!("{MINIMAL}\n[mobility]\nmodel = \"trace\"\ntrace = \"nope.csv\"\n"));
        assert!(v.iter().any(|m| m.contains("mobility.trace")), "{v:?}");
    }

    #[test]
    fn hash_tracks_bytes() {
        let a = parse(MINIMAL).unwrap().sha256;
        let b = parse(&format!("{MINIMAL}# trailing comment\n")).unwrap().sha256;
        assert_ne!(a, b);
        assert_eq!(a, parse(MINIMAL).unwrap().sha256);
    }

    #[test]
    fn equator_degree() {
        let a = GeoAnchor { lat: 0.0, lon: 0.0 };
        let (lon, lat) = a.to_lon_lat(111_320.0, 0.0);
        assert_abs_diff_eq!(lon, 1.0, epsilon = 1e-12);
        assert_eq!(lat, 0.0);
    }

    fn record(slot: usize, n_uavs: usize) -> SlotRecord {
        SlotRecord {
            episode: 0,
            slot,
            actions: vec![],
            uav_positions: (0..n_uavs).map(|j| Position3::new(10.0 * slot as f64, 5.0 * j as f64, 100.0)).collect(),
            power_levels: vec![0; n_uavs],
            user_positions: vec![Position3::ground(1.0, 2.0); 3],
            association: vec![0; 3],
            per_user_rates: vec![0.0; 3],
            sum_rate: 0.0,
            rate_norm: 1.0,
            violations: vec![0; n_uavs],
            rewards: vec![0.0; n_uavs],
        }
    }

    #[test]
    fn geojson_shape() {
        let rows: Vec<SlotRecord> = (0..10).map(|t| record(t, 2)).collect();
        let doc = export_trajectory_geojson(&rows, GeoAnchor { lat: 48.0, lon: 11.0 }).unwrap();
        let features = doc["features"].as_array().unwrap();
        assert_eq!(features.len(), 3);
        for f in &features[..2] {
            assert_eq!(f["geometry"]["type"], "LineString");
            assert_eq!(f["geometry"]["coordinates"].as_array().unwrap().len(), 10);
        }
        assert_eq!(features[2]["geometry"]["type"], "MultiPoint");
        assert!(export_trajectory_geojson(&[], GeoAnchor { lat: 0.0, lon: 0.0 }).is_err());
    }
}
