//! Per-message SINR, selection combining and network sum rate for OMA and
//! the three many-to-many NOMA schemes (DM, UM, UDM) with imperfect SIC.
//!
//! Matrices are indexed `(receiver LC, transmitter LC)`. A broadcast or
//! multicast LC sends one physical message whose single power coefficient
//! is shared by all of its recipients.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{ChannelMatrix, PowerConfig};
use crate::topology::{ChSelection, ScTopology, TopologyError, VehicleRef};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchemeError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("scenario has no messages")]
    NoMessages,
    #[error("lane cluster {lc} must receive but has no non-CH member")]
    InfeasibleChs { lc: usize },
    #[error("invalid power allocation: {0}")]
    InvalidPa(String),
    #[error("zeta must lie in [0, 1], got {0}")]
    InvalidZeta(f64),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

/// Dense square matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(n: usize, value: T) -> Self {
        Self {
            n,
            data: vec![value; n * n],
        }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Option<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return None;
        }
        Some(Self {
            n,
            data: rows.iter().flat_map(|r| r.iter().cloned()).collect(),
        })
    }
}

impl<T> Grid<T> {
    pub fn size(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }
}

impl<T> std::ops::Index<(usize, usize)> for Grid<T> {
    type Output = T;
    fn index(&self, (r, c): (usize, usize)) -> &T {
        &self.data[r * self.n + c]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Grid<T> {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut T {
        &mut self.data[r * self.n + c]
    }
}

/// One independently powered physical transmission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PowerVar {
    Unicast {
        rx: usize,
        tx: usize,
    },
    /// Broadcast or multicast from `tx`, one coefficient for all recipients.
    Shared {
        tx: usize,
    },
}

impl PowerVar {
    pub fn tx(&self) -> usize {
        match *self {
            PowerVar::Unicast { tx, .. } | PowerVar::Shared { tx } => tx,
        }
    }
}

impl fmt::Display for PowerVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PowerVar::Unicast { rx, tx } => write!(f, "x{}<-{}", rx + 1, tx + 1),
            PowerVar::Shared { tx } => write!(f, "x*<-{}", tx + 1),
        }
    }
}

/// Message matrix, broadcast indicators and rate floors.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    msg: Grid<bool>,
    bcast: Vec<bool>,
    r_min: Grid<f64>,
    vars: Vec<PowerVar>,
    var_of: Grid<Option<usize>>,
    col_vars: Vec<Vec<usize>>,
}

impl Scenario {
    /// `msg[n][k] = 1` when LC `k` has a message for LC `n`.
    pub fn new(msg: &[Vec<u8>], bcast: &[u8], r_min: &[Vec<f64>]) -> Result<Self, SchemeError> {
        let n = msg.len();
        let bad = |s: &str| SchemeError::InvalidScenario(s.to_string());
        if n < 2 {
            return Err(bad("at least two lane clusters required"));
        }
        let msg_grid = Grid::from_rows(
            &msg.iter()
                .map(|r| r.iter().map(|&v| v != 0).collect())
                .collect::<Vec<_>>(),
        )
        .ok_or_else(|| bad("message matrix must be square"))?;
        if msg.iter().flatten().any(|&v| v > 1) {
            return Err(bad("message matrix must be binary"));
        }
        if bcast.len() != n || bcast.iter().any(|&v| v > 1) {
            return Err(bad("broadcast vector must be binary with one entry per LC"));
        }
        let r_min_grid = Grid::from_rows(r_min).ok_or_else(|| bad("r_min must be square"))?;
        if r_min_grid.size() != n {
            return Err(bad("r_min dimension differs from message matrix"));
        }
        if r_min_grid
            .as_slice()
            .iter()
            .any(|v| !(*v >= 0.0) || !v.is_finite())
        {
            return Err(bad("r_min entries must be finite and non-negative"));
        }
        for i in 0..n {
            if msg_grid[(i, i)] {
                return Err(bad("message matrix diagonal must be zero"));
            }
        }
        let bcast: Vec<bool> = bcast.iter().map(|&v| v != 0).collect();
        for k in 0..n {
            if bcast[k] && !(0..n).any(|i| msg_grid[(i, k)]) {
                return Err(SchemeError::InvalidScenario(format!(
                    "LC {} is flagged broadcast but has no recipients",
                    k + 1
                )));
            }
        }

        let mut vars = Vec::new();
        let mut var_of = Grid::filled(n, None);
        let mut col_vars = vec![Vec::new(); n];
        for k in 0..n {
            if bcast[k] {
                let v = vars.len();
                vars.push(PowerVar::Shared { tx: k });
                col_vars[k].push(v);
                for i in 0..n {
                    if msg_grid[(i, k)] {
                        var_of[(i, k)] = Some(v);
                    }
                }
            } else {
                for i in 0..n {
                    if msg_grid[(i, k)] {
                        let v = vars.len();
                        vars.push(PowerVar::Unicast { rx: i, tx: k });
                        col_vars[k].push(v);
                        var_of[(i, k)] = Some(v);
                    }
                }
            }
        }
        Ok(Self {
            msg: msg_grid,
            bcast,
            r_min: r_min_grid,
            vars,
            var_of,
            col_vars,
        })
    }

    pub fn num_lcs(&self) -> usize {
        self.msg.size()
    }

    pub fn has_msg(&self, rx: usize, tx: usize) -> bool {
        self.msg[(rx, tx)]
    }

    pub fn is_bcast(&self, tx: usize) -> bool {
        self.bcast[tx]
    }

    pub fn r_min(&self, rx: usize, tx: usize) -> f64 {
        self.r_min[(rx, tx)]
    }

    pub fn msg_matrix(&self) -> &Grid<bool> {
        &self.msg
    }

    pub fn r_min_matrix(&self) -> &Grid<f64> {
        &self.r_min
    }

    pub fn bcast_vector(&self) -> &[bool] {
        &self.bcast
    }

    pub fn recipients(&self, tx: usize) -> usize {
        (0..self.num_lcs()).filter(|&i| self.msg[(i, tx)]).count()
    }

    /// Physical transmissions in scan order: transmitter ascending, then
    /// receiver ascending.
    pub fn power_vars(&self) -> &[PowerVar] {
        &self.vars
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    /// The power variable carrying message `(rx, tx)`.
    pub fn var_of(&self, rx: usize, tx: usize) -> Option<usize> {
        self.var_of[(rx, tx)]
    }

    pub fn column_vars(&self, tx: usize) -> &[usize] {
        &self.col_vars[tx]
    }

    /// Largest rate floor among the recipients of a variable.
    pub fn var_floor(&self, var: usize) -> f64 {
        match self.vars[var] {
            PowerVar::Unicast { rx, tx } => self.r_min[(rx, tx)],
            PowerVar::Shared { tx } => (0..self.num_lcs())
                .filter(|&i| self.msg[(i, tx)])
                .map(|i| self.r_min[(i, tx)])
                .fold(0.0, f64::max),
        }
    }
}

/// Fraction of `P_max` per message.
#[derive(Debug, Clone, PartialEq)]
pub struct PaMatrix {
    pub alpha: Grid<f64>,
}

impl PaMatrix {
    /// Expands per-variable fractions into the matrix form.
    pub fn from_var_fractions(scenario: &Scenario, fractions: &[f64]) -> Self {
        let n = scenario.num_lcs();
        let mut alpha = Grid::filled(n, 0.0);
        for rx in 0..n {
            for tx in 0..n {
                if let Some(v) = scenario.var_of(rx, tx) {
                    alpha[(rx, tx)] = fractions[v];
                }
            }
        }
        Self { alpha }
    }

    /// Per-variable fractions; fails when a broadcast column is not uniform
    /// or power sits on a non-message entry.
    pub fn var_fractions(&self, scenario: &Scenario) -> Result<Vec<f64>, SchemeError> {
        let n = scenario.num_lcs();
        if self.alpha.size() != n {
            return Err(SchemeError::InvalidPa(
                "dimension differs from scenario".into(),
            ));
        }
        let mut fr: Vec<Option<f64>> = vec![None; scenario.num_vars()];
        for rx in 0..n {
            for tx in 0..n {
                let a = self.alpha[(rx, tx)];
                if !(a >= 0.0) || !a.is_finite() {
                    return Err(SchemeError::InvalidPa(format!(
                        "alpha[{rx}][{tx}] = {a} is not a non-negative number"
                    )));
                }
                match scenario.var_of(rx, tx) {
                    None if a != 0.0 => {
                        return Err(SchemeError::InvalidPa(format!(
                            "alpha[{rx}][{tx}] = {a} on an entry without a message"
                        )))
                    }
                    None => {}
                    Some(v) => match fr[v] {
                        None => fr[v] = Some(a),
                        Some(prev) if (prev - a).abs() > 1e-12 => {
                            return Err(SchemeError::InvalidPa(format!(
                                "broadcast column {tx} has unequal coefficients"
                            )))
                        }
                        Some(_) => {}
                    },
                }
            }
        }
        Ok(fr.into_iter().map(|v| v.unwrap_or(0.0)).collect())
    }

    /// Sum over physical transmissions.
    pub fn physical_sum(&self, scenario: &Scenario) -> Result<f64, SchemeError> {
        Ok(self.var_fractions(scenario)?.iter().sum())
    }

    pub fn validate(&self, scenario: &Scenario) -> Result<(), SchemeError> {
        let s = self.physical_sum(scenario)?;
        if (s - 1.0).abs() > 1e-9 {
            return Err(SchemeError::InvalidPa(format!(
                "physical power sum is {s}, expected 1"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SicConfig {
    pub zeta: f64,
}

impl SicConfig {
    pub fn new(zeta: f64) -> Result<Self, SchemeError> {
        if !(0.0..=1.0).contains(&zeta) {
            return Err(SchemeError::InvalidZeta(zeta));
        }
        Ok(Self { zeta })
    }

    pub fn perfect() -> Self {
        Self { zeta: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scheme {
    Oma,
    Dm,
    Um,
    Udm,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Oma, Scheme::Dm, Scheme::Um, Scheme::Udm];

    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Oma => "oma",
            Scheme::Dm => "dm",
            Scheme::Um => "um",
            Scheme::Udm => "udm",
        }
    }

    /// Bandwidth factor applied to SINR denominators and to the sum rate.
    pub fn factor(&self, f: &BandwidthFactors) -> f64 {
        match self {
            Scheme::Oma => f.f_o,
            Scheme::Dm => f.f_d,
            Scheme::Um => f.f_u,
            Scheme::Udm => 1.0,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "oma" => Ok(Scheme::Oma),
            "dm" | "dm-noma" => Ok(Scheme::Dm),
            "um" | "um-noma" => Ok(Scheme::Um),
            "udm" | "udm-noma" => Ok(Scheme::Udm),
            other => Err(format!("unknown scheme '{other}'")),
        }
    }
}

/// Reciprocal of the number of orthogonal RBs each scheme consumes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandwidthFactors {
    pub f_o: f64,
    pub f_u: f64,
    pub f_d: f64,
}

impl BandwidthFactors {
    pub fn rb_counts(scenario: &Scenario) -> (usize, usize, usize) {
        let n = scenario.num_lcs();
        let physical = scenario.num_vars();
        let transmitting = (0..n)
            .filter(|&k| (0..n).any(|j| scenario.has_msg(j, k)))
            .count();
        let receiving = (0..n)
            .filter(|&j| (0..n).any(|k| scenario.has_msg(j, k)))
            .count();
        (physical, receiving, transmitting)
    }
}

pub fn bandwidth_factors(scenario: &Scenario) -> Result<BandwidthFactors, SchemeError> {
    let (physical, receiving, transmitting) = BandwidthFactors::rb_counts(scenario);
    if physical == 0 {
        return Err(SchemeError::NoMessages);
    }
    Ok(BandwidthFactors {
        f_o: 1.0 / physical as f64,
        f_u: 1.0 / receiving as f64,
        f_d: 1.0 / transmitting as f64,
    })
}

/// SINR of `sigma[intended]` after SIC.
///
/// Entries are decoded strongest first; equal powers are decoded in slice
/// order, so callers list entries by ascending (transmitter, receiver).
/// Weaker entries count as interference and stronger ones leave a residual
/// `zeta` of their power. The whole denominator is scaled by `factor`.
pub fn sic_sinr(sigma: &[f64], intended: usize, noise: f64, zeta: f64, factor: f64) -> f64 {
    let s = sigma[intended];
    if s <= 0.0 {
        return 0.0;
    }
    let mut stronger = 0.0;
    let mut weaker = 0.0;
    for (j, &p) in sigma.iter().enumerate() {
        if j == intended {
            continue;
        }
        if p > s || (p == s && j < intended) {
            stronger += p;
        } else {
            weaker += p;
        }
    }
    s / (factor * (noise + weaker + zeta * stronger))
}

/// `|h|^2` from every selected CH to every receiving (non-CH) member.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkGains {
    n_lc: usize,
    /// `receivers[n]` holds one row per NCH member of LC `n`; row entry `k`
    /// is the gain from the CH of LC `k`.
    receivers: Vec<Vec<Vec<f64>>>,
}

impl LinkGains {
    pub fn from_channel(
        channel: &ChannelMatrix,
        topology: &ScTopology,
        chs: &ChSelection,
    ) -> Result<Self, SchemeError> {
        chs.validate(topology)?;
        let n_lc = topology.num_clusters();
        let ch_flat: Vec<usize> = (0..n_lc)
            .map(|k| topology.flat_index(VehicleRef::new(k, chs.get(k))))
            .collect();
        let receivers = (0..n_lc)
            .map(|n| {
                (0..topology.clusters[n].size())
                    .filter(|&m| m != chs.get(n))
                    .map(|m| {
                        let rx = topology.flat_index(VehicleRef::new(n, m));
                        (0..n_lc)
                            .map(|k| {
                                if k == n {
                                    0.0
                                } else {
                                    channel.gain_power(ch_flat[k], rx)
                                }
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Ok(Self { n_lc, receivers })
    }

    /// Explicit gains, mainly for fixtures: `receivers[n][m][k]`.
    pub fn from_rows(receivers: Vec<Vec<Vec<f64>>>) -> Self {
        Self {
            n_lc: receivers.len(),
            receivers,
        }
    }

    pub fn num_lcs(&self) -> usize {
        self.n_lc
    }

    pub fn receivers(&self, lc: usize) -> &[Vec<f64>] {
        &self.receivers[lc]
    }

    /// Best receiving-member gain from CH `tx` to LC `rx`.
    pub fn best_gain(&self, rx: usize, tx: usize) -> f64 {
        self.receivers[rx].iter().map(|g| g[tx]).fold(0.0, f64::max)
    }

    /// Every LC that must receive has at least one NCH member.
    pub fn check_receivers(&self, scenario: &Scenario) -> Result<(), SchemeError> {
        for n in 0..self.n_lc {
            let must_receive = (0..self.n_lc).any(|k| scenario.has_msg(n, k));
            if must_receive && self.receivers[n].is_empty() {
                return Err(SchemeError::InfeasibleChs { lc: n });
            }
        }
        Ok(())
    }
}

/// Per-message outcome of one scheme on one realization.
#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub scheme: Scheme,
    /// Selection-combined SINR.
    pub sinr: Grid<f64>,
    /// `W log2(1 + sinr)`.
    pub rate: Grid<f64>,
    pub factor: f64,
    pub sum_rate: f64,
    /// `rate - M * r_min`.
    pub slack: Grid<f64>,
    pub feasible: bool,
}

impl RateReport {
    /// Smallest slack among messages that exist; 0 without messages.
    pub fn worst_slack(&self, scenario: &Scenario) -> f64 {
        worst_slack(scenario, &self.rate)
    }
}

pub(crate) fn worst_slack(scenario: &Scenario, rate: &Grid<f64>) -> f64 {
    let n = scenario.num_lcs();
    let mut worst = f64::INFINITY;
    for rx in 0..n {
        for tx in 0..n {
            if scenario.has_msg(rx, tx) {
                worst = worst.min(rate[(rx, tx)] - scenario.r_min(rx, tx));
            }
        }
    }
    if worst.is_finite() {
        worst
    } else {
        0.0
    }
}

/// Network sum rate from per-message rates. Broadcast and multicast rates
/// are averaged over their recipients; entries without a message are skipped.
pub fn sum_rate(rates: &Grid<f64>, scenario: &Scenario, factor: f64) -> f64 {
    let n = scenario.num_lcs();
    let mut total = 0.0;
    for k in 0..n {
        let recipients = scenario.recipients(k);
        for rx in 0..n {
            if rx == k || !scenario.has_msg(rx, k) {
                continue;
            }
            let r = rates[(rx, k)];
            if scenario.is_bcast(k) {
                if recipients > 0 {
                    total += r / recipients as f64;
                }
            } else {
                total += r;
            }
        }
    }
    factor * total
}

/// Reusable SINR computation shared by the public rate functions and the
/// allocators.
#[derive(Debug, Default)]
pub(crate) struct RateKernel {
    sigma: Vec<f64>,
    slot: Vec<usize>,
}

impl RateKernel {
    /// Writes selection-combined SINRs into `sinr` (flat `n x n`).
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn sinr_into(
        &mut self,
        scheme: Scheme,
        gains: &LinkGains,
        scenario: &Scenario,
        fractions: &[f64],
        power: &PowerConfig,
        zeta: f64,
        factor: f64,
        sinr: &mut [f64],
    ) {
        let n = scenario.num_lcs();
        sinr.iter_mut().for_each(|v| *v = 0.0);
        let noise = power.noise_power();
        let p = power.p_max;
        for rx in 0..n {
            for g in gains.receivers(rx) {
                match scheme {
                    Scheme::Oma => {
                        for tx in 0..n {
                            if let Some(v) = scenario.var_of(rx, tx) {
                                let s = fractions[v] * p * g[tx] / (factor * noise);
                                let e = &mut sinr[rx * n + tx];
                                *e = e.max(s);
                            }
                        }
                    }
                    Scheme::Dm => {
                        for tx in 0..n {
                            let Some(target) = scenario.var_of(rx, tx) else {
                                continue;
                            };
                            self.sigma.clear();
                            let mut intended = 0;
                            for &v in scenario.column_vars(tx) {
                                if v == target {
                                    intended = self.sigma.len();
                                }
                                self.sigma.push(fractions[v] * p * g[tx]);
                            }
                            let s = sic_sinr(&self.sigma, intended, noise, zeta, factor);
                            let e = &mut sinr[rx * n + tx];
                            *e = e.max(s);
                        }
                    }
                    Scheme::Um => {
                        self.sigma.clear();
                        self.slot.clear();
                        for tx in 0..n {
                            if let Some(v) = scenario.var_of(rx, tx) {
                                self.slot.push(tx);
                                self.sigma.push(fractions[v] * p * g[tx]);
                            }
                        }
                        for (i, &tx) in self.slot.iter().enumerate() {
                            let s = sic_sinr(&self.sigma, i, noise, zeta, factor);
                            let e = &mut sinr[rx * n + tx];
                            *e = e.max(s);
                        }
                    }
                    Scheme::Udm => {
                        self.sigma.clear();
                        self.slot.clear();
                        for tx in 0..n {
                            if tx == rx {
                                continue;
                            }
                            let target = scenario.var_of(rx, tx);
                            for &v in scenario.column_vars(tx) {
                                if Some(v) == target {
                                    self.slot.push(self.sigma.len() * n + tx);
                                }
                                self.sigma.push(fractions[v] * p * g[tx]);
                            }
                        }
                        for &code in &self.slot {
                            let (i, tx) = (code / n, code % n);
                            let s = sic_sinr(&self.sigma, i, noise, zeta, factor);
                            let e = &mut sinr[rx * n + tx];
                            *e = e.max(s);
                        }
                    }
                }
            }
        }
    }
}

/// Evaluates a scheme from precomputed link gains.
pub fn evaluate(
    scheme: Scheme,
    gains: &LinkGains,
    scenario: &Scenario,
    pa: &PaMatrix,
    power: &PowerConfig,
    sic: SicConfig,
) -> Result<RateReport, SchemeError> {
    let fractions = pa.var_fractions(scenario)?;
    evaluate_fractions(scheme, gains, scenario, &fractions, power, sic)
}

pub(crate) fn evaluate_fractions(
    scheme: Scheme,
    gains: &LinkGains,
    scenario: &Scenario,
    fractions: &[f64],
    power: &PowerConfig,
    sic: SicConfig,
) -> Result<RateReport, SchemeError> {
    if !(0.0..=1.0).contains(&sic.zeta) {
        return Err(SchemeError::InvalidZeta(sic.zeta));
    }
    if gains.num_lcs() != scenario.num_lcs() {
        return Err(SchemeError::InvalidScenario(
            "link gains and scenario differ in size".into(),
        ));
    }
    gains.check_receivers(scenario)?;
    let factors = bandwidth_factors(scenario)?;
    let factor = scheme.factor(&factors);
    let n = scenario.num_lcs();
    let mut sinr = Grid::filled(n, 0.0);
    RateKernel::default().sinr_into(
        scheme,
        gains,
        scenario,
        fractions,
        power,
        sic.zeta,
        factor,
        sinr.as_mut_slice(),
    );
    Ok(report_from_sinr(
        scheme,
        scenario,
        sinr,
        factor,
        power.bandwidth_hz,
    ))
}

pub(crate) fn report_from_sinr(
    scheme: Scheme,
    scenario: &Scenario,
    sinr: Grid<f64>,
    factor: f64,
    bandwidth_hz: f64,
) -> RateReport {
    let n = scenario.num_lcs();
    let mut rate = Grid::filled(n, 0.0);
    let mut slack = Grid::filled(n, 0.0);
    let mut feasible = true;
    for rx in 0..n {
        for tx in 0..n {
            let r = bandwidth_hz * (1.0 + sinr[(rx, tx)]).log2();
            rate[(rx, tx)] = r;
            let need = if scenario.has_msg(rx, tx) {
                scenario.r_min(rx, tx)
            } else {
                0.0
            };
            slack[(rx, tx)] = r - need;
            if rx != tx && r - need < 0.0 {
                feasible = false;
            }
        }
    }
    let total = sum_rate(&rate, scenario, factor);
    RateReport {
        scheme,
        sinr,
        rate,
        factor,
        sum_rate: total,
        slack,
        feasible,
    }
}

fn rates_for(
    scheme: Scheme,
    channel: &ChannelMatrix,
    topology: &ScTopology,
    chs: &ChSelection,
    scenario: &Scenario,
    pa: &PaMatrix,
    power: &PowerConfig,
    sic: SicConfig,
) -> Result<RateReport, SchemeError> {
    let gains = LinkGains::from_channel(channel, topology, chs)?;
    evaluate(scheme, &gains, scenario, pa, power, sic)
}

pub fn oma_rates(
    channel: &ChannelMatrix,
    topology: &ScTopology,
    chs: &ChSelection,
    scenario: &Scenario,
    pa: &PaMatrix,
    power: &PowerConfig,
) -> Result<RateReport, SchemeError> {
    rates_for(
        Scheme::Oma,
        channel,
        topology,
        chs,
        scenario,
        pa,
        power,
        SicConfig::perfect(),
    )
}

pub fn dm_rates(
    channel: &ChannelMatrix,
    topology: &ScTopology,
    chs: &ChSelection,
    scenario: &Scenario,
    pa: &PaMatrix,
    power: &PowerConfig,
    sic: SicConfig,
) -> Result<RateReport, SchemeError> {
    rates_for(Scheme::Dm, channel, topology, chs, scenario, pa, power, sic)
}

pub fn um_rates(
    channel: &ChannelMatrix,
    topology: &ScTopology,
    chs: &ChSelection,
    scenario: &Scenario,
    pa: &PaMatrix,
    power: &PowerConfig,
    sic: SicConfig,
) -> Result<RateReport, SchemeError> {
    rates_for(Scheme::Um, channel, topology, chs, scenario, pa, power, sic)
}

pub fn udm_rates(
    channel: &ChannelMatrix,
    topology: &ScTopology,
    chs: &ChSelection,
    scenario: &Scenario,
    pa: &PaMatrix,
    power: &PowerConfig,
    sic: SicConfig,
) -> Result<RateReport, SchemeError> {
    rates_for(
        Scheme::Udm,
        channel,
        topology,
        chs,
        scenario,
        pa,
        power,
        sic,
    )
}
