//! Scenario definitions, the Monte Carlo runner and CSV output.
//!
//! Trial `t` of a run with seed `s` draws its fading realization from seed
//! `s ^ t`. The same realization is shared by every scheme and sweep point
//! of that trial.
//!
//! # Scenario files
//!
//! Custom scenarios are TOML documents:
//!
//! ```toml
//! lanes = [0, 1, 2]            # one lane cluster per entry
//! vehicles_per_lc = 6          # integer, or one integer per LC
//! gap_m = 5.0                  # optional, default 5
//! offsets_m = [0.0, 3.0, 0.0]  # optional lead-vehicle shifts
//! msg = [[0, 1, 1], [1, 0, 1], [1, 1, 0]]   # msg[n][k]: k sends to n
//! bcast = [0, 0, 0]            # optional, default all zero
//! r_min = [[0, 0.1, 0.2], [0.1, 0, 0.1], [0.2, 0.1, 0]]  # optional
//! knife_edge = true            # optional
//! path_loss_exponent = 2.7     # optional
//! fading = "rayleigh"          # optional, or "unit"
//! ```
//!
//! Without `r_min` the floor of a message between lanes `i` and `j` is
//! `0.1 * |i - j|`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::Deserialize;
use thiserror::Error;

use crate::allocation::{
    chs_exhaustive_fpa, epa_fractions, evaluate_fixed, fpa_fractions, gpa_from_fpa, pa_oracle,
    AllocationError, AllocationResult, Evaluator, GpaConfig, DEFAULT_BUDGET,
};
use crate::channel::{ChannelError, ChannelMatrix, ChannelParams, Fading, LargeScale, PowerConfig};
use crate::schemes::{Scenario, Scheme, SchemeError, SicConfig};
use crate::topology::{
    md_chs, ChSelection, RoadConfig, ScTopology, TopologyBuilder, TopologyError, VehicleDims,
};

pub const BUILTIN_SCENARIOS: [&str; 4] =
    ["4lc-unicast", "4lc-broadcast", "4lc-hybrid", "3lc-unicast"];

pub const DEFAULT_VEHICLES_PER_LC: usize = 6;
pub const DEFAULT_GAP_M: f64 = 5.0;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("unknown scenario '{0}'")]
    UnknownScenario(String),
    #[error("invalid run specification: {0}")]
    InvalidSpec(String),
    #[error("invalid scenario file {path}: {message}")]
    ScenarioFile { path: PathBuf, message: String },
    #[error("trial {trial} ({scheme}, zeta {zeta}, SNR {snr_db} dB, Q {q}): {source}")]
    Trial {
        trial: usize,
        scheme: Scheme,
        zeta: f64,
        snr_db: f64,
        q: u32,
        #[source]
        source: AllocationError,
    },
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Scheme(#[from] SchemeError),
    #[error(transparent)]
    Allocation(#[from] AllocationError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Topology, traffic and channel model of one experiment.
#[derive(Debug, Clone)]
pub struct ScenarioDef {
    pub name: String,
    pub topology: ScTopology,
    pub scenario: Scenario,
    pub channel: ChannelParams,
}

impl ScenarioDef {
    pub fn large_scale(&self) -> Result<LargeScale, HarnessError> {
        Ok(LargeScale::new(&self.topology, &self.channel)?)
    }
}

fn lane_rule_r_min(lanes: &[usize], msg: &[Vec<u8>]) -> Vec<Vec<f64>> {
    let n = lanes.len();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if msg[i][j] != 0 {
                        0.1 * lanes[i].abs_diff(lanes[j]) as f64
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

fn topology_on_lanes(
    lanes: &[usize],
    sizes: &[usize],
    offsets: &[f64],
    gap_m: f64,
) -> Result<ScTopology, TopologyError> {
    let mut b = TopologyBuilder::new(RoadConfig::highway(), VehicleDims::sedan()).gap_m(gap_m);
    for ((&lane, &size), &off) in lanes.iter().zip(sizes).zip(offsets) {
        b = b.cluster(lane, size, off);
    }
    b.build()
}

fn unicast_msg(n: usize) -> Vec<Vec<u8>> {
    (0..n)
        .map(|i| (0..n).map(|j| u8::from(i != j)).collect())
        .collect()
}

/// The four scenarios of the evaluation: rows are receivers, columns are
/// transmitters, LC `i` drives in lane `i - 1` except for `3lc-unicast`,
/// which drops the leftmost lane.
pub fn builtin_scenario(name: &str) -> Result<ScenarioDef, HarnessError> {
    let (lanes, msg, bcast): (Vec<usize>, Vec<Vec<u8>>, Vec<u8>) = match name {
        "4lc-unicast" => (vec![0, 1, 2, 3], unicast_msg(4), vec![0; 4]),
        "4lc-broadcast" => (vec![0, 1, 2, 3], unicast_msg(4), vec![1; 4]),
        "4lc-hybrid" => (
            vec![0, 1, 2, 3],
            vec![
                vec![0, 1, 1, 0],
                vec![1, 0, 0, 0],
                vec![1, 1, 0, 0],
                vec![1, 1, 1, 0],
            ],
            vec![0, 1, 1, 0],
        ),
        "3lc-unicast" => (vec![1, 2, 3], unicast_msg(3), vec![0; 3]),
        other => return Err(HarnessError::UnknownScenario(other.to_string())),
    };
    let n = lanes.len();
    let topology = topology_on_lanes(
        &lanes,
        &vec![DEFAULT_VEHICLES_PER_LC; n],
        &vec![0.0; n],
        DEFAULT_GAP_M,
    )?;
    let r_min = lane_rule_r_min(&lanes, &msg);
    let scenario = Scenario::new(&msg, &bcast, &r_min)?;
    Ok(ScenarioDef {
        name: name.to_string(),
        topology,
        scenario,
        channel: ChannelParams::default(),
    })
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum SizeSpec {
    Uniform(usize),
    PerLc(Vec<usize>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: Option<String>,
    lanes: Vec<usize>,
    vehicles_per_lc: Option<SizeSpec>,
    gap_m: Option<f64>,
    offsets_m: Option<Vec<f64>>,
    msg: Vec<Vec<u8>>,
    bcast: Option<Vec<u8>>,
    r_min: Option<Vec<Vec<f64>>>,
    knife_edge: Option<bool>,
    path_loss_exponent: Option<f64>,
    fading: Option<String>,
}

pub fn parse_scenario_str(text: &str, origin: &Path) -> Result<ScenarioDef, HarnessError> {
    let bad = |message: String| HarnessError::ScenarioFile {
        path: origin.to_path_buf(),
        message,
    };
    let file: ScenarioFile = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
    let n = file.lanes.len();
    let sizes = match file.vehicles_per_lc {
        None => vec![DEFAULT_VEHICLES_PER_LC; n],
        Some(SizeSpec::Uniform(v)) => vec![v; n],
        Some(SizeSpec::PerLc(v)) => v,
    };
    let offsets = file.offsets_m.unwrap_or_else(|| vec![0.0; n]);
    if sizes.len() != n || offsets.len() != n {
        return Err(bad(
            "vehicles_per_lc and offsets_m need one entry per lane".into()
        ));
    }
    if file.msg.len() != n || file.msg.iter().any(|r| r.len() != n) {
        return Err(bad(format!("msg must be {n} x {n}")));
    }
    let bcast = file.bcast.unwrap_or_else(|| vec![0; n]);
    let r_min = file
        .r_min
        .unwrap_or_else(|| lane_rule_r_min(&file.lanes, &file.msg));
    let fading = match file.fading.as_deref() {
        None | Some("rayleigh") => Fading::Rayleigh,
        Some("unit") => Fading::Unit,
        Some(other) => return Err(bad(format!("unknown fading model '{other}'"))),
    };
    let defaults = ChannelParams::default();
    let channel = ChannelParams {
        knife_edge_enabled: file.knife_edge.unwrap_or(defaults.knife_edge_enabled),
        path_loss_exponent: file
            .path_loss_exponent
            .unwrap_or(defaults.path_loss_exponent),
        fading,
        ..defaults
    };
    channel.validate()?;
    let topology = topology_on_lanes(
        &file.lanes,
        &sizes,
        &offsets,
        file.gap_m.unwrap_or(DEFAULT_GAP_M),
    )?;
    let scenario = Scenario::new(&file.msg, &bcast, &r_min)?;
    let name = file.name.unwrap_or_else(|| origin.display().to_string());
    Ok(ScenarioDef {
        name,
        topology,
        scenario,
        channel,
    })
}

pub fn load_scenario_file(path: &Path) -> Result<ScenarioDef, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    parse_scenario_str(&text, path)
}

/// A builtin name, or a path to a scenario file.
pub fn resolve_scenario(name_or_path: &str) -> Result<ScenarioDef, HarnessError> {
    if BUILTIN_SCENARIOS.contains(&name_or_path) {
        return builtin_scenario(name_or_path);
    }
    let path = Path::new(name_or_path);
    if path.is_file() {
        load_scenario_file(path)
    } else {
        Err(HarnessError::UnknownScenario(name_or_path.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PaMethod {
    Epa,
    Fpa,
    Gpa,
    Oracle,
}

impl PaMethod {
    pub fn name(&self) -> &'static str {
        match self {
            PaMethod::Epa => "epa",
            PaMethod::Fpa => "fpa",
            PaMethod::Gpa => "gpa",
            PaMethod::Oracle => "oracle",
        }
    }
}

impl fmt::Display for PaMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PaMethod {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "epa" => Ok(PaMethod::Epa),
            "fpa" => Ok(PaMethod::Fpa),
            "gpa" => Ok(PaMethod::Gpa),
            "oracle" | "opa" => Ok(PaMethod::Oracle),
            _ => Err(HarnessError::InvalidSpec(format!(
                "unknown PA method '{s}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ChsMethod {
    ExhaustiveFpa,
    Md,
    Oracle,
    Fixed,
}

impl ChsMethod {
    pub fn name(&self) -> &'static str {
        match self {
            ChsMethod::ExhaustiveFpa => "exhaustive-fpa",
            ChsMethod::Md => "md",
            ChsMethod::Oracle => "oracle",
            ChsMethod::Fixed => "fixed",
        }
    }
}

impl fmt::Display for ChsMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ChsMethod {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "exhaustive-fpa" | "exhaustive" | "o-chs" => Ok(ChsMethod::ExhaustiveFpa),
            "md" | "md-chs" => Ok(ChsMethod::Md),
            "oracle" => Ok(ChsMethod::Oracle),
            "fixed" | "front" => Ok(ChsMethod::Fixed),
            _ => Err(HarnessError::InvalidSpec(format!(
                "unknown CHS method '{s}'"
            ))),
        }
    }
}

/// Parses `oma`, `dm`, `um`, `udm` or `all`.
pub fn parse_schemes(s: &str) -> Result<Vec<Scheme>, HarnessError> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(Scheme::ALL.to_vec());
    }
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<Scheme>()
                .map_err(|_| HarnessError::InvalidSpec(format!("unknown scheme '{p}'")))
        })
        .collect()
}

/// Method settings shared by every point of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub pa: PaMethod,
    pub chs: ChsMethod,
    pub max_iterations: usize,
    pub budget: u64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            pa: PaMethod::Gpa,
            chs: ChsMethod::ExhaustiveFpa,
            max_iterations: 100,
            budget: DEFAULT_BUDGET,
        }
    }
}

/// One point of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub scheme: Scheme,
    pub zeta: f64,
    pub snr_db: f64,
    pub q: u32,
}

fn pa_on_chs(
    def: &ScenarioDef,
    channel: &ChannelMatrix,
    chs: ChSelection,
    point: &SweepPoint,
    settings: &SolverSettings,
) -> Result<AllocationResult, AllocationError> {
    let power = PowerConfig::from_snr_db(point.snr_db);
    let sic = SicConfig::new(point.zeta)?;
    let mut ev = Evaluator::from_channel(
        point.scheme,
        channel,
        &def.topology,
        &chs,
        &def.scenario,
        power,
        sic,
    )?;
    match settings.pa {
        PaMethod::Epa => {
            let f = epa_fractions(&def.scenario)?;
            Ok(evaluate_fixed(&mut ev, chs, &f))
        }
        PaMethod::Fpa => {
            let f = fpa_fractions(&def.scenario, ev.gains())?;
            Ok(evaluate_fixed(&mut ev, chs, &f))
        }
        PaMethod::Gpa => {
            let cfg = GpaConfig {
                q_levels: point.q,
                max_iterations: settings.max_iterations,
                strict_gate: false,
            };
            gpa_from_fpa(&mut ev, chs, &cfg)
        }
        PaMethod::Oracle => pa_oracle(&mut ev, chs, point.q, settings.budget),
    }
}

/// Solves CHS and PA on one channel realization.
pub fn solve_point(
    def: &ScenarioDef,
    channel: &ChannelMatrix,
    point: &SweepPoint,
    settings: &SolverSettings,
) -> Result<AllocationResult, AllocationError> {
    if point.q == 0 {
        return Err(AllocationError::InvalidConfig(
            "q_levels must be at least 1".into(),
        ));
    }
    let chs = match settings.chs {
        ChsMethod::Fixed => ChSelection::front(&def.topology),
        ChsMethod::Md => md_chs(&def.topology),
        ChsMethod::ExhaustiveFpa => {
            let power = PowerConfig::from_snr_db(point.snr_db);
            let sic = SicConfig::new(point.zeta)?;
            chs_exhaustive_fpa(
                &def.scenario,
                channel,
                &def.topology,
                power,
                sic,
                point.scheme,
                settings.budget,
            )?
            .0
        }
        ChsMethod::Oracle => {
            let combos = def.topology.ch_combinations() as u64;
            if combos > settings.budget {
                return Err(AllocationError::BudgetExceeded {
                    required: combos as u128,
                    budget: settings.budget,
                });
            }
            let mut best: Option<AllocationResult> = None;
            let mut evaluations = 0;
            for chs in ChSelection::enumerate(&def.topology) {
                let res = pa_on_chs(def, channel, chs, point, settings)?;
                evaluations += res.evaluations;
                if best
                    .as_ref()
                    .map_or(true, |b| res.objective().beats(&b.objective()))
                {
                    best = Some(res);
                }
            }
            let mut best = best.expect("at least one selection");
            best.evaluations = evaluations;
            return Ok(best);
        }
    };
    pa_on_chs(def, channel, chs, point, settings)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub scenario: String,
    pub schemes: Vec<Scheme>,
    pub settings: SolverSettings,
    pub zetas: Vec<f64>,
    pub snrs_db: Vec<f64>,
    /// Empty means `N_LC (N_LC - 1)`.
    pub qs: Vec<u32>,
    pub trials: usize,
    pub seed: u64,
    /// Record wall-clock time per point. Off by default so that output is
    /// byte-reproducible.
    pub timing: bool,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            scenario: "4lc-unicast".into(),
            schemes: Scheme::ALL.to_vec(),
            settings: SolverSettings::default(),
            zetas: vec![0.0, 0.01, 0.1],
            snrs_db: vec![50.0],
            qs: Vec::new(),
            trials: 200,
            seed: 1,
            timing: false,
        }
    }
}

impl RunSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |s: &str| Err(HarnessError::InvalidSpec(s.to_string()));
        if self.schemes.is_empty() || self.zetas.is_empty() || self.snrs_db.is_empty() {
            return bad("scheme, zeta and SNR lists must be non-empty");
        }
        if self.trials == 0 {
            return bad("trials must be at least 1");
        }
        if self.qs.contains(&0) {
            return bad("Q must be at least 1");
        }
        if self.zetas.iter().any(|z| !(0.0..=1.0).contains(z)) {
            return bad("zeta must lie in [0, 1]");
        }
        if self.snrs_db.iter().any(|s| !s.is_finite()) {
            return bad("SNR must be finite");
        }
        if self.settings.max_iterations == 0 {
            return bad("max_iterations must be at least 1");
        }
        Ok(())
    }

    fn q_list(&self, n_lc: usize) -> Vec<u32> {
        if self.qs.is_empty() {
            vec![GpaConfig::for_lcs(n_lc).q_levels]
        } else {
            self.qs.clone()
        }
    }

    pub fn expected_records(&self, n_lc: usize) -> usize {
        self.trials
            * self.zetas.len()
            * self.snrs_db.len()
            * self.q_list(n_lc).len()
            * self.schemes.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputRecord {
    pub scenario: String,
    pub scheme: Scheme,
    pub pa_method: PaMethod,
    pub chs_method: ChsMethod,
    pub zeta: f64,
    pub snr_db: f64,
    pub q: u32,
    pub trial: usize,
    pub sum_rate_bps_hz: f64,
    pub feasible: bool,
    pub iterations: usize,
    pub wall_time_s: f64,
}

pub const RECORD_HEADER: [&str; 12] = [
    "scenario",
    "scheme",
    "pa_method",
    "chs_method",
    "zeta",
    "snr_db",
    "q",
    "trial",
    "sum_rate_bps_hz",
    "feasible",
    "iterations",
    "wall_time_s",
];

impl OutputRecord {
    fn fields(&self) -> [String; 12] {
        [
            self.scenario.clone(),
            self.scheme.name().to_string(),
            self.pa_method.name().to_string(),
            self.chs_method.name().to_string(),
            format!("{:.4}", self.zeta),
            format!("{:.2}", self.snr_db),
            self.q.to_string(),
            self.trial.to_string(),
            format!("{:.9}", self.sum_rate_bps_hz),
            self.feasible.to_string(),
            self.iterations.to_string(),
            format!("{:.6}", self.wall_time_s),
        ]
    }
}

/// Aggregate over the trials of one sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRecord {
    pub scenario: String,
    pub scheme: Scheme,
    pub pa_method: PaMethod,
    pub chs_method: ChsMethod,
    pub zeta: f64,
    pub snr_db: f64,
    pub q: u32,
    pub trials: usize,
    pub mean_sum_rate: f64,
    pub std_sum_rate: f64,
    /// Half-width of the normal-approximation 95% interval.
    pub ci95: f64,
    pub feasible_fraction: f64,
    pub mean_iterations: f64,
}

pub const SUMMARY_HEADER: [&str; 13] = [
    "scenario",
    "scheme",
    "pa_method",
    "chs_method",
    "zeta",
    "snr_db",
    "q",
    "trials",
    "mean_sum_rate",
    "std_sum_rate",
    "ci95",
    "feasible_fraction",
    "mean_iterations",
];

impl SummaryRecord {
    fn fields(&self) -> [String; 13] {
        [
            self.scenario.clone(),
            self.scheme.name().to_string(),
            self.pa_method.name().to_string(),
            self.chs_method.name().to_string(),
            format!("{:.4}", self.zeta),
            format!("{:.2}", self.snr_db),
            self.q.to_string(),
            self.trials.to_string(),
            format!("{:.9}", self.mean_sum_rate),
            format!("{:.9}", self.std_sum_rate),
            format!("{:.9}", self.ci95),
            format!("{:.6}", self.feasible_fraction),
            format!("{:.6}", self.mean_iterations),
        ]
    }
}

/// Sample mean, sample standard deviation and 95% half-width.
pub fn mean_ci95(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    (mean, sd, 1.96 * sd / (n as f64).sqrt())
}

/// Groups records by sweep point, in first-appearance order.
pub fn summarize(records: &[OutputRecord]) -> Vec<SummaryRecord> {
    let mut groups: Vec<(SummaryRecord, Vec<f64>, usize, usize)> = Vec::new();
    for r in records {
        let pos = groups.iter().position(|(s, ..)| {
            s.scenario == r.scenario
                && s.scheme == r.scheme
                && s.pa_method == r.pa_method
                && s.chs_method == r.chs_method
                && s.zeta == r.zeta
                && s.snr_db == r.snr_db
                && s.q == r.q
        });
        let idx = match pos {
            Some(i) => i,
            None => {
                groups.push((
                    SummaryRecord {
                        scenario: r.scenario.clone(),
                        scheme: r.scheme,
                        pa_method: r.pa_method,
                        chs_method: r.chs_method,
                        zeta: r.zeta,
                        snr_db: r.snr_db,
                        q: r.q,
                        trials: 0,
                        mean_sum_rate: 0.0,
                        std_sum_rate: 0.0,
                        ci95: 0.0,
                        feasible_fraction: 0.0,
                        mean_iterations: 0.0,
                    },
                    Vec::new(),
                    0,
                    0,
                ));
                groups.len() - 1
            }
        };
        let g = &mut groups[idx];
        g.1.push(r.sum_rate_bps_hz);
        g.2 += usize::from(r.feasible);
        g.3 += r.iterations;
    }
    groups
        .into_iter()
        .map(|(mut s, rates, feasible, iterations)| {
            let (mean, sd, ci) = mean_ci95(&rates);
            s.trials = rates.len();
            s.mean_sum_rate = mean;
            s.std_sum_rate = sd;
            s.ci95 = ci;
            s.feasible_fraction = feasible as f64 / rates.len() as f64;
            s.mean_iterations = iterations as f64 / rates.len() as f64;
            s
        })
        .collect()
}

pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    seed ^ trial as u64
}

/// Runs every (trial, zeta, SNR, Q, scheme) point. Records are ordered by
/// trial, then by those sweep indices.
pub fn run(spec: &RunSpec) -> Result<Vec<OutputRecord>, HarnessError> {
    spec.validate()?;
    let def = resolve_scenario(&spec.scenario)?;
    run_with(&def, spec)
}

pub fn run_with(def: &ScenarioDef, spec: &RunSpec) -> Result<Vec<OutputRecord>, HarnessError> {
    spec.validate()?;
    let large = def.large_scale()?;
    let qs = spec.q_list(def.scenario.num_lcs());
    let per_trial: Result<Vec<Vec<OutputRecord>>, HarnessError> = (0..spec.trials)
        .into_par_iter()
        .map(|trial| {
            let channel = large.sample(def.channel.fading, trial_seed(spec.seed, trial));
            let mut out = Vec::new();
            for &zeta in &spec.zetas {
                for &snr_db in &spec.snrs_db {
                    for &q in &qs {
                        for &scheme in &spec.schemes {
                            let point = SweepPoint {
                                scheme,
                                zeta,
                                snr_db,
                                q,
                            };
                            let start = Instant::now();
                            let res = solve_point(def, &channel, &point, &spec.settings).map_err(
                                |source| HarnessError::Trial {
                                    trial,
                                    scheme,
                                    zeta,
                                    snr_db,
                                    q,
                                    source,
                                },
                            )?;
                            let wall = if spec.timing {
                                start.elapsed().as_secs_f64()
                            } else {
                                0.0
                            };
                            out.push(OutputRecord {
                                scenario: def.name.clone(),
                                scheme,
                                pa_method: spec.settings.pa,
                                chs_method: spec.settings.chs,
                                zeta,
                                snr_db,
                                q,
                                trial,
                                sum_rate_bps_hz: res.sum_rate,
                                feasible: res.feasible,
                                iterations: res.iterations_used,
                                wall_time_s: wall,
                            });
                        }
                    }
                }
            }
            Ok(out)
        })
        .collect();
    Ok(per_trial?.into_iter().flatten().collect())
}

pub fn write_records<W: std::io::Write>(
    records: &[OutputRecord],
    out: W,
) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RECORD_HEADER)?;
    for r in records {
        w.write_record(r.fields())?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_csv(records: &[OutputRecord], path: &Path) -> Result<(), HarnessError> {
    write_records(records, std::fs::File::create(path)?)
}

pub fn write_summaries<W: std::io::Write>(
    summaries: &[SummaryRecord],
    out: W,
) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for s in summaries {
        w.write_record(s.fields())?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_summary_csv(summaries: &[SummaryRecord], path: &Path) -> Result<(), HarnessError> {
    write_summaries(summaries, std::fs::File::create(path)?)
}

/// GPA against the grid oracle on one realization.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleComparison {
    pub trial: usize,
    pub zeta: f64,
    pub q: u32,
    pub gpa: AllocationResult,
    pub oracle: AllocationResult,
}

impl OracleComparison {
    pub fn ratio(&self) -> f64 {
        if self.oracle.sum_rate > 0.0 {
            self.gpa.sum_rate / self.oracle.sum_rate
        } else {
            1.0
        }
    }
}

/// GPA and the exhaustive PA oracle on the same CHS (exhaustive-FPA
/// stage 1) for each trial, zeta and Q.
pub fn oracle_check(
    def: &ScenarioDef,
    scheme: Scheme,
    zetas: &[f64],
    qs: &[u32],
    snr_db: f64,
    trials: usize,
    seed: u64,
) -> Result<Vec<OracleComparison>, HarnessError> {
    let large = def.large_scale()?;
    let power = PowerConfig::from_snr_db(snr_db);
    let per: Result<Vec<Vec<OracleComparison>>, HarnessError> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let channel = large.sample(def.channel.fading, trial_seed(seed, trial));
            let mut out = Vec::new();
            for &zeta in zetas {
                let sic = SicConfig::new(zeta)?;
                let (chs, _) = chs_exhaustive_fpa(
                    &def.scenario,
                    &channel,
                    &def.topology,
                    power,
                    sic,
                    scheme,
                    DEFAULT_BUDGET,
                )?;
                for &q in qs {
                    let mut ev = Evaluator::from_channel(
                        scheme,
                        &channel,
                        &def.topology,
                        &chs,
                        &def.scenario,
                        power,
                        sic,
                    )?;
                    let cfg = GpaConfig::new(q, 100)?;
                    let gpa = gpa_from_fpa(&mut ev, chs.clone(), &cfg)?;
                    let oracle = pa_oracle(&mut ev, chs.clone(), q, DEFAULT_BUDGET)?;
                    out.push(OracleComparison {
                        trial,
                        zeta,
                        q,
                        gpa,
                        oracle,
                    });
                }
            }
            Ok(out)
        })
        .collect();
    Ok(per?.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schemes::bandwidth_factors;

    #[test]
    fn builtin_matrices() {
        let u = builtin_scenario("4lc-unicast").unwrap();
        assert_eq!(u.scenario.num_vars(), 12);
        assert_eq!(u.topology.num_vehicles(), 24);
        assert!((u.scenario.r_min(3, 0) - 0.3).abs() < 1e-12);
        assert!((u.scenario.r_min(1, 0) - 0.1).abs() < 1e-12);

        let b = builtin_scenario("4lc-broadcast").unwrap();
        assert_eq!(b.scenario.num_vars(), 4);

        let h = builtin_scenario("4lc-hybrid").unwrap();
        let s = &h.scenario;
        // LC1 unicasts to 2, 3, 4
        assert!(s.has_msg(1, 0) && s.has_msg(2, 0) && s.has_msg(3, 0) && !s.is_bcast(0));
        // LC2 broadcasts
        assert!(s.has_msg(0, 1) && s.has_msg(2, 1) && s.has_msg(3, 1) && s.is_bcast(1));
        // LC3 multicasts to LC1 and LC4
        assert!(s.has_msg(0, 2) && s.has_msg(3, 2) && !s.has_msg(1, 2) && s.is_bcast(2));
        // LC4 silent
        assert!((0..4).all(|n| !s.has_msg(n, 3)));
        assert_eq!(s.num_vars(), 5);

        let t = builtin_scenario("3lc-unicast").unwrap();
        assert_eq!(
            t.topology
                .clusters
                .iter()
                .map(|c| c.lane_index)
                .collect::<Vec<_>>(),
            vec![1, 2, 3]
        );
        assert!((t.scenario.r_min(2, 0) - 0.2).abs() < 1e-12);
        assert!(builtin_scenario("5lc").is_err());
    }

    #[test]
    fn builtin_factors() {
        let f = |n: &str| bandwidth_factors(&builtin_scenario(n).unwrap().scenario).unwrap();
        assert_eq!(f("4lc-unicast").f_o, 1.0 / 12.0);
        assert_eq!(f("3lc-unicast").f_o, 1.0 / 6.0);
        let h = f("4lc-hybrid");
        assert_eq!(h.f_d, 1.0 / 3.0);
        assert_eq!(h.f_u, 1.0 / 4.0);
        assert_eq!(h.f_o, 1.0 / 5.0);
    }

    #[test]
    fn scenario_file_round_trip() {
        let text = r#"
            name = "tiny"
            lanes = [0, 2]
            vehicles_per_lc = [2, 3]
            msg = [[0, 1], [1, 0]]
            fading = "unit"
        "#;
        let def = parse_scenario_str(text, Path::new("tiny.toml")).unwrap();
        assert_eq!(def.name, "tiny");
        assert_eq!(def.topology.num_vehicles(), 5);
        assert!((def.scenario.r_min(0, 1) - 0.2).abs() < 1e-12);
        assert_eq!(def.channel.fading, Fading::Unit);

        let bad = "lanes = [0, 1]\nmsg = [[0, 1], [1, 0]]\ncolour = 3\n";
        assert!(matches!(
            parse_scenario_str(bad, Path::new("x")),
            Err(HarnessError::ScenarioFile { .. })
        ));
        let short = "lanes = [0, 1]\nmsg = [[0, 1]]\n";
        assert!(parse_scenario_str(short, Path::new("x")).is_err());
    }

    #[test]
    fn parsers() {
        assert_eq!(parse_schemes("all").unwrap(), Scheme::ALL.to_vec());
        assert_eq!(
            parse_schemes("udm,oma").unwrap(),
            vec![Scheme::Udm, Scheme::Oma]
        );
        assert!(parse_schemes("tdma").is_err());
        assert_eq!(
            "exhaustive-fpa".parse::<ChsMethod>().unwrap(),
            ChsMethod::ExhaustiveFpa
        );
        assert_eq!("gpa".parse::<PaMethod>().unwrap(), PaMethod::Gpa);
        assert!("foo".parse::<PaMethod>().is_err());
    }

    #[test]
    fn ci_of_constant_is_zero() {
        let (m, s, c) = mean_ci95(&[2.0, 2.0, 2.0]);
        assert_eq!((m, s, c), (2.0, 0.0, 0.0));
        let (m, s, _) = mean_ci95(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-12);
    }
}
