//! Joint CH selection and power allocation.
//!
//! Power is allocated per physical transmission ([`PowerVar`]); a broadcast
//! coefficient is a single decision variable. Discrete allocations are
//! integer level vectors summing to `Q`, each level worth `P_max / Q`.
//!
//! Allocations are ranked by [`Objective`]: any allocation meeting every
//! rate floor beats any that does not; feasible allocations are ranked by
//! sum rate, infeasible ones by their shortfalls (leximin) and then sum rate.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::channel::{ChannelMatrix, PowerConfig};
use crate::schemes::{
    bandwidth_factors, report_from_sinr, Grid, LinkGains, PaMatrix, PowerVar, RateKernel,
    RateReport, Scenario, Scheme, SchemeError, SicConfig,
};
use crate::topology::{ChSelection, ScTopology};

/// Default cap on exhaustive enumeration.
pub const DEFAULT_BUDGET: u64 = 10_000_000;

#[derive(Debug, Error)]
pub enum AllocationError {
    #[error("search space of {required} evaluations exceeds the budget of {budget}")]
    BudgetExceeded { required: u128, budget: u64 },
    #[error("invalid allocation configuration: {0}")]
    InvalidConfig(String),
    #[error("level vector has {got} entries for {expected} power variables")]
    LevelLength { expected: usize, got: usize },
    #[error("levels sum to {got}, expected {expected}")]
    LevelSum { expected: u32, got: u32 },
    #[error(transparent)]
    Scheme(#[from] SchemeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpaConfig {
    pub q_levels: u32,
    pub max_iterations: usize,
    /// Continue the inner transfer loop only while the previous allocation
    /// is infeasible and the sum rate rises. Off by default: the loop
    /// continues while the allocation objective strictly improves.
    pub strict_gate: bool,
}

impl GpaConfig {
    pub fn new(q_levels: u32, max_iterations: usize) -> Result<Self, AllocationError> {
        if q_levels == 0 || max_iterations == 0 {
            return Err(AllocationError::InvalidConfig(
                "q_levels and max_iterations must be at least 1".into(),
            ));
        }
        Ok(Self {
            q_levels,
            max_iterations,
            strict_gate: false,
        })
    }

    /// `Q = N_LC (N_LC - 1)` and 100 iterations.
    pub fn for_lcs(n_lc: usize) -> Self {
        Self {
            q_levels: (n_lc * (n_lc - 1)).max(1) as u32,
            max_iterations: 100,
            strict_gate: false,
        }
    }
}

/// Summary of one evaluated allocation.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub feasible: bool,
    pub worst_slack: f64,
    pub sum_rate: f64,
    /// Negative slacks, most negative first; empty when feasible.
    pub shortfalls: Vec<f64>,
}

impl Objective {
    pub fn from_slacks(sum_rate: f64, slacks: impl IntoIterator<Item = f64>) -> Self {
        let mut worst = f64::INFINITY;
        let mut shortfalls = Vec::new();
        for s in slacks {
            worst = worst.min(s);
            if s < 0.0 {
                shortfalls.push(s);
            }
        }
        shortfalls.sort_by(f64::total_cmp);
        let worst = if worst.is_finite() { worst } else { 0.0 };
        Self {
            feasible: shortfalls.is_empty(),
            worst_slack: worst,
            sum_rate,
            shortfalls,
        }
    }

    /// Leximin order on shortfalls: the worst violation first, ties broken
    /// by the next worst. Missing entries count as met floors.
    pub fn cmp_shortfalls(&self, other: &Objective) -> Ordering {
        let n = self.shortfalls.len().max(other.shortfalls.len());
        for i in 0..n {
            let a = self.shortfalls.get(i).copied().unwrap_or(0.0);
            let b = other.shortfalls.get(i).copied().unwrap_or(0.0);
            match a.total_cmp(&b) {
                Ordering::Equal => continue,
                o => return o,
            }
        }
        Ordering::Equal
    }

    /// Total order used by every search in this module.
    pub fn cmp_rank(&self, other: &Objective) -> Ordering {
        match (self.feasible, other.feasible) {
            (true, false) => Ordering::Greater,
            (false, true) => Ordering::Less,
            (true, true) => self.sum_rate.total_cmp(&other.sum_rate),
            (false, false) => self
                .cmp_shortfalls(other)
                .then(self.sum_rate.total_cmp(&other.sum_rate)),
        }
    }

    pub fn beats(&self, other: &Objective) -> bool {
        self.cmp_rank(other) == Ordering::Greater
    }
}

/// Scheme, gains and budget of one CHS-PA instance with a fixed CHS.
pub struct Evaluator<'a> {
    scheme: Scheme,
    gains: LinkGains,
    scenario: &'a Scenario,
    power: PowerConfig,
    zeta: f64,
    factor: f64,
    kernel: RateKernel,
    sinr: Vec<f64>,
    fractions: Vec<f64>,
    evaluations: u64,
}

impl<'a> Evaluator<'a> {
    pub fn new(
        scheme: Scheme,
        gains: LinkGains,
        scenario: &'a Scenario,
        power: PowerConfig,
        sic: SicConfig,
    ) -> Result<Self, AllocationError> {
        SicConfig::new(sic.zeta)?;
        if gains.num_lcs() != scenario.num_lcs() {
            return Err(SchemeError::InvalidScenario(
                "link gains and scenario differ in size".into(),
            )
            .into());
        }
        gains.check_receivers(scenario)?;
        let factor = scheme.factor(&bandwidth_factors(scenario)?);
        let n = scenario.num_lcs();
        Ok(Self {
            scheme,
            gains,
            scenario,
            power,
            zeta: sic.zeta,
            factor,
            kernel: RateKernel::default(),
            sinr: vec![0.0; n * n],
            fractions: vec![0.0; scenario.num_vars()],
            evaluations: 0,
        })
    }

    pub fn from_channel(
        scheme: Scheme,
        channel: &ChannelMatrix,
        topology: &ScTopology,
        chs: &ChSelection,
        scenario: &'a Scenario,
        power: PowerConfig,
        sic: SicConfig,
    ) -> Result<Self, AllocationError> {
        let gains = LinkGains::from_channel(channel, topology, chs)?;
        Self::new(scheme, gains, scenario, power, sic)
    }

    pub fn scenario(&self) -> &Scenario {
        self.scenario
    }

    pub fn gains(&self) -> &LinkGains {
        &self.gains
    }

    pub fn num_vars(&self) -> usize {
        self.scenario.num_vars()
    }

    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    fn run_kernel(&mut self) {
        self.evaluations += 1;
        self.kernel.sinr_into(
            self.scheme,
            &self.gains,
            self.scenario,
            &self.fractions,
            &self.power,
            self.zeta,
            self.factor,
            &mut self.sinr,
        );
    }

    fn summarize(&self) -> Objective {
        let s = self.scenario;
        let n = s.num_lcs();
        let w = self.power.bandwidth_hz;
        let mut total = 0.0;
        let mut worst = f64::INFINITY;
        let mut shortfalls = Vec::new();
        for tx in 0..n {
            let recipients = s.recipients(tx);
            for rx in 0..n {
                if !s.has_msg(rx, tx) {
                    continue;
                }
                let r = w * (1.0 + self.sinr[rx * n + tx]).log2();
                let slack = r - s.r_min(rx, tx);
                worst = worst.min(slack);
                if slack < 0.0 {
                    shortfalls.push(slack);
                }
                total += if s.is_bcast(tx) {
                    r / recipients as f64
                } else {
                    r
                };
            }
        }
        let worst = if worst.is_finite() { worst } else { 0.0 };
        shortfalls.sort_by(f64::total_cmp);
        Objective {
            feasible: shortfalls.is_empty(),
            worst_slack: worst,
            sum_rate: self.factor * total,
            shortfalls,
        }
    }

    pub fn objective_fractions(&mut self, fractions: &[f64]) -> Objective {
        self.fractions.copy_from_slice(fractions);
        self.run_kernel();
        self.summarize()
    }

    pub fn objective_levels(&mut self, levels: &[u32], q: u32) -> Objective {
        let scale = 1.0 / q as f64;
        for (f, &l) in self.fractions.iter_mut().zip(levels) {
            *f = l as f64 * scale;
        }
        self.run_kernel();
        self.summarize()
    }

    pub fn report_fractions(&mut self, fractions: &[f64]) -> RateReport {
        self.fractions.copy_from_slice(fractions);
        self.run_kernel();
        let n = self.scenario.num_lcs();
        let mut sinr = Grid::filled(n, 0.0);
        sinr.as_mut_slice().copy_from_slice(&self.sinr);
        report_from_sinr(
            self.scheme,
            self.scenario,
            sinr,
            self.factor,
            self.power.bandwidth_hz,
        )
    }
}

pub fn levels_to_fractions(levels: &[u32], q: u32) -> Vec<f64> {
    levels.iter().map(|&l| l as f64 / q as f64).collect()
}

/// Equal split over physical transmissions.
pub fn epa(scenario: &Scenario) -> Result<PaMatrix, AllocationError> {
    Ok(PaMatrix::from_var_fractions(
        scenario,
        &epa_fractions(scenario)?,
    ))
}

pub fn epa_fractions(scenario: &Scenario) -> Result<Vec<f64>, AllocationError> {
    let v = scenario.num_vars();
    if v == 0 {
        return Err(SchemeError::NoMessages.into());
    }
    Ok(vec![1.0 / v as f64; v])
}

/// Gain of each power variable as seen by FPA: the best receiving member
/// for unicast, the mean of the recipients' best gains for broadcast.
pub fn fpa_var_gains(scenario: &Scenario, gains: &LinkGains) -> Vec<f64> {
    scenario
        .power_vars()
        .iter()
        .map(|var| match *var {
            PowerVar::Unicast { rx, tx } => gains.best_gain(rx, tx),
            PowerVar::Shared { tx } => {
                let best: Vec<f64> = (0..scenario.num_lcs())
                    .filter(|&rx| scenario.has_msg(rx, tx))
                    .map(|rx| gains.best_gain(rx, tx))
                    .collect();
                best.iter().sum::<f64>() / best.len() as f64
            }
        })
        .collect()
}

/// Fractions proportional to [`fpa_var_gains`], normalized to unit sum.
pub fn fpa_fractions(scenario: &Scenario, gains: &LinkGains) -> Result<Vec<f64>, AllocationError> {
    let g = fpa_var_gains(scenario, gains);
    let total: f64 = g.iter().sum();
    if !(total > 0.0) {
        return epa_fractions(scenario);
    }
    Ok(g.iter().map(|v| v / total).collect())
}

pub fn fpa(
    scenario: &Scenario,
    channel: &ChannelMatrix,
    topology: &ScTopology,
    chs: &ChSelection,
) -> Result<PaMatrix, AllocationError> {
    let gains = LinkGains::from_channel(channel, topology, chs)?;
    Ok(PaMatrix::from_var_fractions(
        scenario,
        &fpa_fractions(scenario, &gains)?,
    ))
}

/// Largest-remainder rounding of unit-sum fractions onto `q` levels. Ties
/// in the remainder go to the lower variable index.
pub fn round_to_levels(fractions: &[f64], q: u32) -> Vec<u32> {
    let scaled: Vec<f64> = fractions.iter().map(|f| f * q as f64).collect();
    let mut levels: Vec<u32> = scaled.iter().map(|s| s.floor().max(0.0) as u32).collect();
    let assigned: u32 = levels.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = scaled[a] - scaled[a].floor();
        let rb = scaled[b] - scaled[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    if assigned <= q {
        for &i in order.iter().cycle().take((q - assigned) as usize) {
            levels[i] += 1;
        }
    } else {
        // floors cannot exceed q for unit-sum input; guard against drift
        let mut excess = assigned - q;
        for &i in order.iter().rev() {
            while excess > 0 && levels[i] > 0 {
                levels[i] -= 1;
                excess -= 1;
            }
        }
    }
    levels
}

/// One accepted single-level transfer inside the greedy allocator.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferStep {
    pub iteration: usize,
    pub source: usize,
    pub destination: usize,
    pub objective: Objective,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationResult {
    pub chs: ChSelection,
    pub alpha: PaMatrix,
    /// Integer levels when the allocation lives on a grid.
    pub levels: Option<Vec<u32>>,
    pub q_levels: Option<u32>,
    pub iterations_used: usize,
    pub feasible: bool,
    pub sum_rate: f64,
    pub worst_slack: f64,
    /// Negative slacks of the final allocation, most negative first.
    pub shortfalls: Vec<f64>,
    pub trace: Vec<TransferStep>,
    pub repeated_allocation: bool,
    pub evaluations: u64,
    /// Size of the search space for exhaustive methods.
    pub search_space: u128,
}

impl AllocationResult {
    pub fn objective(&self) -> Objective {
        Objective {
            feasible: self.feasible,
            worst_slack: self.worst_slack,
            sum_rate: self.sum_rate,
            shortfalls: self.shortfalls.clone(),
        }
    }

    /// Writes `iteration,source,destination,feasible,worst_slack,sum_rate`.
    pub fn write_trace_csv(&self, path: &Path) -> Result<(), AllocationError> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(
            out,
            "iteration,source,destination,feasible,worst_slack,sum_rate"
        )?;
        for s in &self.trace {
            writeln!(
                out,
                "{},{},{},{},{:.9},{:.9}",
                s.iteration,
                s.source,
                s.destination,
                s.objective.feasible,
                s.objective.worst_slack,
                s.objective.sum_rate
            )?;
        }
        out.flush()?;
        Ok(())
    }

    fn from_fractions(
        chs: ChSelection,
        scenario: &Scenario,
        fractions: &[f64],
        objective: Objective,
    ) -> Self {
        Self {
            chs,
            alpha: PaMatrix::from_var_fractions(scenario, fractions),
            levels: None,
            q_levels: None,
            iterations_used: 0,
            feasible: objective.feasible,
            sum_rate: objective.sum_rate,
            worst_slack: objective.worst_slack,
            shortfalls: objective.shortfalls,
            trace: Vec::new(),
            repeated_allocation: false,
            evaluations: 1,
            search_space: 1,
        }
    }
}

/// Best single-level transfer found by [`opsa`].
#[derive(Debug, Clone, PartialEq)]
pub struct OpsaOutcome {
    pub found: bool,
    /// `(source, destination)` power variables.
    pub pair: Option<(usize, usize)>,
    pub current: Objective,
    pub best: Objective,
}

/// Whether `candidate` ranks above `incumbent` under the criterion OPSA
/// applies from `start`: sum rate without new violations when `start` is
/// feasible, shortfalls (then sum rate) when not.
fn improves_from(candidate: &Objective, incumbent: &Objective, start: &Objective) -> bool {
    if start.feasible {
        candidate.feasible && candidate.sum_rate > incumbent.sum_rate
    } else {
        candidate
            .cmp_shortfalls(incumbent)
            .then(candidate.sum_rate.total_cmp(&incumbent.sum_rate))
            == Ordering::Greater
    }
}

fn improves(candidate: &Objective, current: &Objective) -> bool {
    improves_from(candidate, current, current)
}

/// Picks, over every ordered pair of distinct power variables, the single
/// level transfer that most improves the applicable criterion.
pub fn opsa(evaluator: &mut Evaluator<'_>, levels: &mut [u32], q: u32) -> OpsaOutcome {
    let current = evaluator.objective_levels(levels, q);
    let mut best = current.clone();
    let mut pair = None;
    let v = levels.len();
    for src in 0..v {
        if levels[src] == 0 {
            continue;
        }
        for dst in 0..v {
            if dst == src {
                continue;
            }
            levels[src] -= 1;
            levels[dst] += 1;
            let cand = evaluator.objective_levels(levels, q);
            levels[src] += 1;
            levels[dst] -= 1;
            if improves_from(&cand, &best, &current) {
                best = cand;
                pair = Some((src, dst));
            }
        }
    }
    OpsaOutcome {
        found: pair.is_some(),
        pair,
        current,
        best,
    }
}

fn check_levels(levels: &[u32], vars: usize, q: u32) -> Result<(), AllocationError> {
    if levels.len() != vars {
        return Err(AllocationError::LevelLength {
            expected: vars,
            got: levels.len(),
        });
    }
    let s: u32 = levels.iter().sum();
    if s != q {
        return Err(AllocationError::LevelSum {
            expected: q,
            got: s,
        });
    }
    Ok(())
}

/// Greedy power allocation from `initial` levels.
pub fn gpa(
    evaluator: &mut Evaluator<'_>,
    chs: ChSelection,
    config: &GpaConfig,
    initial: Vec<u32>,
) -> Result<AllocationResult, AllocationError> {
    let q = config.q_levels;
    check_levels(&initial, evaluator.num_vars(), q)?;
    let start_evals = evaluator.evaluations();
    let mut levels = initial;
    let mut visited: HashSet<Vec<u32>> = HashSet::new();
    visited.insert(levels.clone());
    let mut repeated = false;
    let mut trace = Vec::new();
    let mut current = evaluator.objective_levels(&levels, q);
    let mut iterations = 0;

    while iterations < config.max_iterations {
        iterations += 1;
        let outcome = opsa(evaluator, &mut levels, q);
        let Some((src, dst)) = outcome.pair else {
            break;
        };
        levels[src] -= 1;
        levels[dst] += 1;
        current = outcome.best;
        repeated |= !visited.insert(levels.clone());
        trace.push(TransferStep {
            iteration: iterations,
            source: src,
            destination: dst,
            objective: current.clone(),
        });

        while levels[src] > 0 {
            levels[src] -= 1;
            levels[dst] += 1;
            let next = evaluator.objective_levels(&levels, q);
            let keep = if config.strict_gate {
                !current.feasible && next.sum_rate > current.sum_rate
            } else {
                improves(&next, &current)
            };
            if keep {
                current = next;
                repeated |= !visited.insert(levels.clone());
                trace.push(TransferStep {
                    iteration: iterations,
                    source: src,
                    destination: dst,
                    objective: current.clone(),
                });
            } else {
                levels[src] += 1;
                levels[dst] -= 1;
                break;
            }
        }
    }

    let fractions = levels_to_fractions(&levels, q);
    Ok(AllocationResult {
        chs,
        alpha: PaMatrix::from_var_fractions(evaluator.scenario(), &fractions),
        levels: Some(levels),
        q_levels: Some(q),
        iterations_used: iterations,
        feasible: current.feasible,
        sum_rate: current.sum_rate,
        worst_slack: current.worst_slack,
        shortfalls: current.shortfalls,
        trace,
        repeated_allocation: repeated,
        evaluations: evaluator.evaluations() - start_evals,
        search_space: 0,
    })
}

/// GPA started from FPA rounded onto the grid.
pub fn gpa_from_fpa(
    evaluator: &mut Evaluator<'_>,
    chs: ChSelection,
    config: &GpaConfig,
) -> Result<AllocationResult, AllocationError> {
    let start = round_to_levels(
        &fpa_fractions(evaluator.scenario(), evaluator.gains())?,
        config.q_levels,
    );
    gpa(evaluator, chs, config, start)
}

/// `C(n, k)` saturating at `u128::MAX`.
pub fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// Number of level vectors of `vars` entries summing to `q`.
pub fn allocation_count(q: u32, vars: usize) -> u128 {
    if vars == 0 {
        return u128::from(q == 0);
    }
    binomial(q as u64 + vars as u64 - 1, vars as u64 - 1)
}

/// Level pairs OPSA scans per iteration for an all-unicast network,
/// `N^4 - 2N^3 + N`.
pub fn opsa_pairs_per_iteration(n_lc: usize) -> u64 {
    let n = n_lc as u64;
    n.pow(4) + n - 2 * n.pow(3)
}

/// Loose bound on GPA iterations, `C(Q + N^2 + N - 1, N^2 + N - 1)`.
pub fn gpa_iteration_upper_bound(q: u32, n_lc: usize) -> u128 {
    let m = (n_lc * n_lc + n_lc - 1) as u64;
    binomial(q as u64 + m, m)
}

/// Visits every level vector with `levels[i] >= lower[i]` summing to `q`
/// in lexicographic order.
fn for_each_composition(q: u32, lower: &[u32], mut visit: impl FnMut(&[u32])) {
    let v = lower.len();
    let base: u32 = lower.iter().sum();
    if v == 0 || base > q {
        return;
    }
    let mut extra = vec![0u32; v];
    extra[v - 1] = q - base;
    let mut levels = lower.to_vec();
    loop {
        for i in 0..v {
            levels[i] = lower[i] + extra[i];
        }
        visit(&levels);
        // rightmost non-final slot with something to its right
        let mut tail = extra[v - 1];
        let mut i = v - 1;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if tail > 0 {
                break;
            }
            tail += extra[i];
        }
        extra[i] += 1;
        for e in extra[i + 1..].iter_mut() {
            *e = 0;
        }
        extra[v - 1] = tail - 1;
    }
}

/// Exhaustive discrete allocation over the `Q`-level grid.
///
/// When every rate floor is positive, allocations that starve a floored
/// message are infeasible, so the floored variables are first searched with
/// at least one level each; the unrestricted grid is only scanned when that
/// subset contains no feasible point. Ties keep the lexicographically
/// smallest level vector.
pub fn pa_oracle(
    evaluator: &mut Evaluator<'_>,
    chs: ChSelection,
    q: u32,
    budget: u64,
) -> Result<AllocationResult, AllocationError> {
    if q == 0 {
        return Err(AllocationError::InvalidConfig(
            "q_levels must be at least 1".into(),
        ));
    }
    let vars = evaluator.num_vars();
    let space = allocation_count(q, vars);
    if space > budget as u128 {
        return Err(AllocationError::BudgetExceeded {
            required: space,
            budget,
        });
    }
    let start_evals = evaluator.evaluations();
    let floored: Vec<u32> = (0..vars)
        .map(|v| u32::from(evaluator.scenario().var_floor(v) > 0.0))
        .collect();

    let mut best: Option<(Objective, Vec<u32>)> = None;
    let mut search = |lower: &[u32], best: &mut Option<(Objective, Vec<u32>)>| {
        for_each_composition(q, lower, |levels| {
            let obj = evaluator.objective_levels(levels, q);
            if best.as_ref().map_or(true, |(b, _)| obj.beats(b)) {
                *best = Some((obj, levels.to_vec()));
            }
        });
    };
    if floored.iter().any(|&f| f > 0) {
        search(&floored, &mut best);
    }
    if !best.as_ref().is_some_and(|(o, _)| o.feasible) {
        best = None;
        search(&vec![0; vars], &mut best);
    }
    let (obj, levels) = best.expect("grid is non-empty");
    let fractions = levels_to_fractions(&levels, q);
    let mut res = AllocationResult::from_fractions(chs, evaluator.scenario(), &fractions, obj);
    res.levels = Some(levels);
    res.q_levels = Some(q);
    res.evaluations = evaluator.evaluations() - start_evals;
    res.search_space = space;
    Ok(res)
}

/// Stage 1: every CH combination evaluated under continuous FPA.
pub fn chs_exhaustive_fpa(
    scenario: &Scenario,
    channel: &ChannelMatrix,
    topology: &ScTopology,
    power: PowerConfig,
    sic: SicConfig,
    scheme: Scheme,
    budget: u64,
) -> Result<(ChSelection, Objective), AllocationError> {
    let combos = topology.ch_combinations() as u128;
    if combos > budget as u128 {
        return Err(AllocationError::BudgetExceeded {
            required: combos,
            budget,
        });
    }
    let mut best: Option<(Objective, ChSelection)> = None;
    for chs in ChSelection::enumerate(topology) {
        let mut ev =
            Evaluator::from_channel(scheme, channel, topology, &chs, scenario, power, sic)?;
        let fr = fpa_fractions(scenario, ev.gains())?;
        let obj = ev.objective_fractions(&fr);
        if best.as_ref().map_or(true, |(b, _)| obj.beats(b)) {
            best = Some((obj, chs));
        }
    }
    let (obj, chs) = best.expect("at least one selection");
    Ok((chs, obj))
}

/// Two-stage sub-optimal solver: exhaustive CHS under FPA, then GPA from
/// rounded FPA on the chosen CHs.
pub fn solve_s_chs_pa(
    scenario: &Scenario,
    channel: &ChannelMatrix,
    topology: &ScTopology,
    power: PowerConfig,
    sic: SicConfig,
    scheme: Scheme,
    config: &GpaConfig,
) -> Result<AllocationResult, AllocationError> {
    let (chs, _) = chs_exhaustive_fpa(
        scenario,
        channel,
        topology,
        power,
        sic,
        scheme,
        DEFAULT_BUDGET,
    )?;
    let mut ev = Evaluator::from_channel(scheme, channel, topology, &chs, scenario, power, sic)?;
    gpa_from_fpa(&mut ev, chs, config)
}

/// Joint exhaustive search over CH combinations and grid allocations.
pub fn o_chs_pa_oracle(
    scenario: &Scenario,
    channel: &ChannelMatrix,
    topology: &ScTopology,
    power: PowerConfig,
    sic: SicConfig,
    scheme: Scheme,
    q: u32,
    budget: u64,
) -> Result<AllocationResult, AllocationError> {
    let per = allocation_count(q, scenario.num_vars());
    let space = per.saturating_mul(topology.ch_combinations() as u128);
    if space > budget as u128 {
        return Err(AllocationError::BudgetExceeded {
            required: space,
            budget,
        });
    }
    let mut best: Option<AllocationResult> = None;
    let mut evaluations = 0;
    for chs in ChSelection::enumerate(topology) {
        let mut ev =
            Evaluator::from_channel(scheme, channel, topology, &chs, scenario, power, sic)?;
        let res = pa_oracle(&mut ev, chs, q, budget)?;
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
    best.search_space = space;
    Ok(best)
}

/// Evaluates a continuous allocation on a fixed CHS.
pub fn evaluate_fixed(
    evaluator: &mut Evaluator<'_>,
    chs: ChSelection,
    fractions: &[f64],
) -> AllocationResult {
    let obj = evaluator.objective_fractions(fractions);
    AllocationResult::from_fractions(chs, evaluator.scenario(), fractions, obj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unicast(n: usize, floor: f64) -> Scenario {
        let msg: Vec<Vec<u8>> = (0..n)
            .map(|i| (0..n).map(|j| u8::from(i != j)).collect())
            .collect();
        let r_min: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 0.0 } else { floor }).collect())
            .collect();
        Scenario::new(&msg, &vec![0; n], &r_min).unwrap()
    }

    fn two_lc_gains(g01: f64, g10: f64) -> LinkGains {
        LinkGains::from_rows(vec![vec![vec![0.0, g01]], vec![vec![g10, 0.0]]])
    }

    fn compositions(q: u32, lower: &[u32]) -> Vec<Vec<u32>> {
        let mut out = Vec::new();
        for_each_composition(q, lower, |l| out.push(l.to_vec()));
        out
    }

    /// Independent recursive enumeration.
    fn brute(q: u32, v: usize) -> Vec<Vec<u32>> {
        if v == 1 {
            return vec![vec![q]];
        }
        let mut out = Vec::new();
        for first in 0..=q {
            for mut rest in brute(q - first, v - 1) {
                rest.insert(0, first);
                out.push(rest);
            }
        }
        out
    }

    #[test]
    fn composition_enumeration_matches_brute_force() {
        for (q, v) in [(0, 1), (3, 1), (2, 2), (4, 3), (4, 6), (5, 4)] {
            let got = compositions(q, &vec![0; v]);
            assert_eq!(got, brute(q, v), "q={q} v={v}");
            assert_eq!(got.len() as u128, allocation_count(q, v));
        }
        assert_eq!(compositions(2, &[1, 1]), vec![vec![1, 1]]);
        assert_eq!(
            compositions(3, &[1, 0, 1]),
            vec![vec![1, 0, 2], vec![1, 1, 1], vec![2, 0, 1]]
        );
        assert!(compositions(1, &[1, 1]).is_empty());
    }

    #[test]
    fn counts() {
        assert_eq!(allocation_count(4, 6), 126);
        assert_eq!(binomial(9, 5), 126);
        assert_eq!(allocation_count(2, 2), 3);
        assert_eq!(allocation_count(12, 12), 1_352_078);
        assert_eq!(opsa_pairs_per_iteration(4), 132);
        assert_eq!(opsa_pairs_per_iteration(3), 30);
        assert!(gpa_iteration_upper_bound(12, 4) > 1_000_000);
    }

    #[test]
    fn epa_cases() {
        let f = epa_fractions(&unicast(4, 0.0)).unwrap();
        assert_eq!(f.len(), 12);
        assert!(f.iter().all(|&v| v == 1.0 / 12.0));
        let b = Scenario::new(
            &(0..4)
                .map(|i| (0..4).map(|j| u8::from(i != j)).collect())
                .collect::<Vec<_>>(),
            &[1, 1, 1, 1],
            &vec![vec![0.0; 4]; 4],
        )
        .unwrap();
        assert_eq!(epa_fractions(&b).unwrap(), vec![0.25; 4]);
        let empty =
            Scenario::new(&[vec![0, 0], vec![0, 0]], &[0, 0], &vec![vec![0.0; 2]; 2]).unwrap();
        assert!(epa(&empty).is_err());
    }

    #[test]
    fn fpa_cases() {
        let s = unicast(2, 0.0);
        // var 0 = (rx 1, tx 0), var 1 = (rx 0, tx 1)
        let f = fpa_fractions(&s, &two_lc_gains(3.0, 1.0)).unwrap();
        assert_relative_eq!(f[0], 0.25);
        assert_relative_eq!(f[1], 0.75);
        let f = fpa_fractions(&s, &two_lc_gains(2.0, 2.0)).unwrap();
        assert_eq!(f, epa_fractions(&s).unwrap());
        let one =
            Scenario::new(&[vec![0, 1], vec![0, 0]], &[0, 0], &vec![vec![0.0; 2]; 2]).unwrap();
        assert_eq!(
            fpa_fractions(&one, &two_lc_gains(0.3, 9.0)).unwrap(),
            vec![1.0]
        );
    }

    #[test]
    fn largest_remainder_rounding() {
        assert_eq!(round_to_levels(&[0.25, 0.75], 4), vec![1, 3]);
        assert_eq!(round_to_levels(&[0.3, 0.3, 0.4], 4), vec![1, 1, 2]);
        assert_eq!(round_to_levels(&[1.0 / 3.0; 3], 4), vec![2, 1, 1]);
        let r = round_to_levels(&[0.05, 0.05, 0.9], 12);
        assert_eq!(r.iter().sum::<u32>(), 12);
        assert_eq!(r, vec![1, 0, 11]);
    }

    fn power(p: f64) -> PowerConfig {
        PowerConfig::new(p, 1.0, 1.0).unwrap()
    }

    #[test]
    fn opsa_at_oracle_optimum_finds_nothing() {
        let s = unicast(2, 0.0);
        for &(g01, g10) in &[(1.0, 1.0), (1.0, 100.0), (7.0, 0.2)] {
            let mut ev = Evaluator::new(
                Scheme::Udm,
                two_lc_gains(g01, g10),
                &s,
                power(10.0),
                SicConfig::perfect(),
            )
            .unwrap();
            let q = 8;
            let best = brute(q, 2)
                .into_iter()
                .max_by(|a, b| {
                    let oa = ev.objective_levels(a, q);
                    let ob = ev.objective_levels(b, q);
                    oa.cmp_rank(&ob)
                })
                .unwrap();
            let mut levels = best.clone();
            let out = opsa(&mut ev, &mut levels, q);
            assert!(
                !out.found,
                "gains {g01},{g10}: oracle optimum {best:?} improved"
            );
            assert_eq!(levels, best);
        }
    }

    #[test]
    fn opsa_moves_power_toward_strong_link() {
        // Under OMA with floors off, more power on the 100x link wins.
        let s = unicast(2, 0.0);
        let mut ev = Evaluator::new(
            Scheme::Oma,
            two_lc_gains(100.0, 1.0),
            &s,
            power(1.0),
            SicConfig::perfect(),
        )
        .unwrap();
        let q = 8;
        let mut levels = vec![4, 4];
        let before = ev.objective_levels(&levels, q);
        let out = opsa(&mut ev, &mut levels, q);
        assert!(out.found);
        // var 0 is (rx 1 <- tx 0) with gain g10 = 1; var 1 has gain 100
        assert_eq!(out.pair, Some((0, 1)));
        let mut moved = vec![3, 5];
        let after = ev.objective_levels(&moved, q);
        assert!(after.sum_rate > before.sum_rate);
        moved = vec![5, 3];
        assert!(ev.objective_levels(&moved, q).sum_rate < before.sum_rate);
    }

    #[test]
    fn opsa_repairs_violated_floor() {
        let s = unicast(2, 1.0);
        let mut ev = Evaluator::new(
            Scheme::Oma,
            two_lc_gains(1.0, 1.0),
            &s,
            power(2.0),
            SicConfig::perfect(),
        )
        .unwrap();
        let q = 8;
        let mut levels = vec![1, 7];
        let before = ev.report_fractions(&levels_to_fractions(&levels, q));
        assert!(!before.feasible);
        let out = opsa(&mut ev, &mut levels, q);
        assert_eq!(out.pair, Some((1, 0)));
        let after = ev.report_fractions(&levels_to_fractions(&[2, 6], q));
        assert!(after.rate[(1, 0)] > before.rate[(1, 0)]);
    }

    #[test]
    fn gpa_symmetric_instance_stays_put() {
        let s = unicast(2, 0.0);
        let mut ev = Evaluator::new(
            Scheme::Oma,
            two_lc_gains(1.0, 1.0),
            &s,
            power(10.0),
            SicConfig::perfect(),
        )
        .unwrap();
        let cfg = GpaConfig::new(4, 100).unwrap();
        let res = gpa(&mut ev, ChSelection(vec![0, 0]), &cfg, vec![2, 2]).unwrap();
        assert_eq!(res.levels, Some(vec![2, 2]));
        assert_eq!(res.iterations_used, 1);
        assert!(res.trace.is_empty());
    }

    #[test]
    fn gpa_rejects_bad_levels() {
        let s = unicast(2, 0.0);
        let mut ev = Evaluator::new(
            Scheme::Oma,
            two_lc_gains(1.0, 1.0),
            &s,
            power(1.0),
            SicConfig::perfect(),
        )
        .unwrap();
        let cfg = GpaConfig::new(4, 10).unwrap();
        assert!(matches!(
            gpa(&mut ev, ChSelection(vec![0, 0]), &cfg, vec![1, 2]),
            Err(AllocationError::LevelSum { .. })
        ));
        assert!(GpaConfig::new(0, 10).is_err());
    }

    #[test]
    fn pa_oracle_single_and_pair() {
        let one =
            Scenario::new(&[vec![0, 1], vec![0, 0]], &[0, 0], &vec![vec![0.0; 2]; 2]).unwrap();
        let mut ev = Evaluator::new(
            Scheme::Oma,
            two_lc_gains(1.0, 1.0),
            &one,
            power(1.0),
            SicConfig::perfect(),
        )
        .unwrap();
        let res = pa_oracle(&mut ev, ChSelection(vec![0, 0]), 5, DEFAULT_BUDGET).unwrap();
        assert_eq!(res.levels, Some(vec![5]));

        let s = unicast(2, 0.0);
        let mut ev = Evaluator::new(
            Scheme::Udm,
            two_lc_gains(4.0, 1.0),
            &s,
            power(3.0),
            SicConfig::perfect(),
        )
        .unwrap();
        let res = pa_oracle(&mut ev, ChSelection(vec![0, 0]), 2, DEFAULT_BUDGET).unwrap();
        let mut direct: Vec<(f64, Vec<u32>)> = [[0u32, 2], [1, 1], [2, 0]]
            .iter()
            .map(|l| {
                let rep = ev.report_fractions(&levels_to_fractions(l, 2));
                (rep.sum_rate, l.to_vec())
            })
            .collect();
        direct.sort_by(|a, b| b.0.total_cmp(&a.0));
        assert_eq!(res.levels.as_ref(), Some(&direct[0].1));
        assert_relative_eq!(res.sum_rate, direct[0].0, epsilon = 1e-12);
        assert_eq!(res.search_space, 3);
    }

    #[test]
    fn pa_oracle_budget() {
        let s = unicast(3, 0.0);
        let gains = LinkGains::from_rows(vec![
            vec![vec![0.0, 1.0, 1.0]],
            vec![vec![1.0, 0.0, 1.0]],
            vec![vec![1.0, 1.0, 0.0]],
        ]);
        let mut ev =
            Evaluator::new(Scheme::Udm, gains, &s, power(1.0), SicConfig::perfect()).unwrap();
        let res = pa_oracle(&mut ev, ChSelection(vec![0, 0, 0]), 4, DEFAULT_BUDGET).unwrap();
        assert_eq!(res.search_space, 126);
        assert_eq!(res.evaluations, 126);
        match pa_oracle(&mut ev, ChSelection(vec![0, 0, 0]), 4, 100) {
            Err(AllocationError::BudgetExceeded { required, budget }) => {
                assert_eq!(required, 126);
                assert_eq!(budget, 100);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn objective_ordering() {
        let f = |feasible: bool, ws: f64, sr: f64| Objective {
            feasible,
            worst_slack: ws,
            sum_rate: sr,
            shortfalls: if feasible { vec![] } else { vec![ws] },
        };
        assert!(f(true, 0.0, 1.0).beats(&f(false, -0.1, 5.0)));
        assert!(f(true, 0.0, 2.0).beats(&f(true, 3.0, 1.0)));
        assert!(f(false, -0.1, 1.0).beats(&f(false, -0.2, 5.0)));
        assert!(f(false, -0.1, 2.0).beats(&f(false, -0.1, 1.0)));
        assert!(!f(true, 0.0, 1.0).beats(&f(true, 0.0, 1.0)));
    }

    #[test]
    fn shortfalls_rank_leximin() {
        let o = |sr: f64, slacks: &[f64]| Objective::from_slacks(sr, slacks.iter().copied());
        // same worst violation, fewer further violations wins
        assert!(o(1.0, &[-0.3, 0.2, 0.1]).beats(&o(9.0, &[-0.3, -0.1, 0.1])));
        // same worst, smaller second violation wins
        assert!(o(1.0, &[-0.3, -0.05]).beats(&o(9.0, &[-0.3, -0.2])));
        // the worst violation dominates the count of violations
        assert!(o(1.0, &[-0.1, -0.1, -0.1]).beats(&o(9.0, &[-0.2, 0.5, 0.5])));
        // identical shortfalls fall back to sum rate
        assert!(o(2.0, &[-0.3, 0.4]).beats(&o(1.0, &[0.1, -0.3])));
        let x = o(1.0, &[-0.2, 0.1]);
        assert_eq!(x.worst_slack, -0.2);
        assert_eq!(x.shortfalls, vec![-0.2]);
        assert!(!x.feasible);
    }
}
