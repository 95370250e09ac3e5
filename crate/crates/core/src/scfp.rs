//! Distributed super-cluster formation between lane-cluster heads.
//!
//! A CH that belongs to no super cluster periodically broadcasts an
//! invitation carrying a proposed RB. CHs driving behind it (smaller `x`)
//! answer with an acceptance listing their NCH locations and the RBs they
//! believe free. After one invite period the inviter confirms the nearest
//! acceptors, up to the size limit, and becomes the super-cluster head.
//!
//! Control messages are delivered reliably to every agent within
//! communication range after a uniform random latency. Each agent keeps
//! its own view of reserved RBs, learned from overheard invitations and
//! confirmations.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub type RbId = u32;
pub type AgentId = usize;

#[derive(Debug, Error)]
pub enum ScfpError {
    #[error("invalid SCFP configuration: {0}")]
    InvalidConfig(String),
    #[error("formation needs at least one agent")]
    NoAgents,
    #[error("agent ids must equal their position in the agent list")]
    BadIds,
    #[error("no RB is available")]
    NoRbAvailable,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AgentState {
    Unclustered,
    Inviting,
    AwaitingConfirm,
    ScMember,
    ScHead,
}

impl AgentState {
    pub fn name(&self) -> &'static str {
        match self {
            AgentState::Unclustered => "UNCLUSTERED",
            AgentState::Inviting => "INVITING",
            AgentState::AwaitingConfirm => "AWAITING_CONFIRM",
            AgentState::ScMember => "SC_MEMBER",
            AgentState::ScHead => "SC_HEAD",
        }
    }

    pub fn in_sc(&self) -> bool {
        matches!(self, AgentState::ScMember | AgentState::ScHead)
    }

    /// Whether the protocol can move an agent from `self` to `next`.
    pub fn can_move_to(&self, next: AgentState) -> bool {
        use AgentState::*;
        matches!(
            (self, next),
            (Unclustered, Inviting)
                | (Unclustered, AwaitingConfirm)
                | (Inviting, AwaitingConfirm)
                | (Inviting, ScHead)
                | (AwaitingConfirm, Unclustered)
                | (AwaitingConfirm, ScMember)
        )
    }
}

impl fmt::Display for AgentState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reservation {
    pub rb: RbId,
    pub expires_at: f64,
}

/// An acceptance as the inviter stores it.
#[derive(Debug, Clone, PartialEq)]
pub struct Acceptance {
    pub sender: AgentId,
    pub position: (f64, f64),
    pub nch_locations: Vec<(f64, f64)>,
    pub available_rbs: Vec<RbId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChAgent {
    pub id: AgentId,
    pub position: (f64, f64),
    pub nch_locations: Vec<(f64, f64)>,
    pub state: AgentState,
    pub current_rb: Option<RbId>,
    /// Latest reservation heard from each owner.
    pub known_reserved_rbs: BTreeMap<AgentId, Reservation>,
    pub sc_id: Option<AgentId>,
    /// Members of the SC this agent heads.
    pub members: Vec<AgentId>,
    proposed_rb: Option<RbId>,
    acceptances: Vec<Acceptance>,
    pending_inviter: Option<AgentId>,
    pending_x: f64,
    awaiting_epoch: u64,
    /// Invitations heard while busy: inviter -> (position, heard at).
    open_invites: BTreeMap<AgentId, ((f64, f64), f64)>,
    confirmed_at: Option<f64>,
}

impl ChAgent {
    pub fn new(id: AgentId, position: (f64, f64)) -> Self {
        Self {
            id,
            position,
            nch_locations: Vec::new(),
            state: AgentState::Unclustered,
            current_rb: None,
            known_reserved_rbs: BTreeMap::new(),
            sc_id: None,
            members: Vec::new(),
            proposed_rb: None,
            acceptances: Vec::new(),
            pending_inviter: None,
            pending_x: f64::NEG_INFINITY,
            awaiting_epoch: 0,
            open_invites: BTreeMap::new(),
            confirmed_at: None,
        }
    }

    pub fn with_nch(mut self, nch: Vec<(f64, f64)>) -> Self {
        self.nch_locations = nch;
        self
    }

    pub fn distance_to(&self, p: (f64, f64)) -> f64 {
        ((self.position.0 - p.0).powi(2) + (self.position.1 - p.1).powi(2)).sqrt()
    }

    fn forget_expired(&mut self, now: f64) {
        self.known_reserved_rbs.retain(|_, r| r.expires_at > now);
    }

    fn reserved_by_others(&self, rb: RbId, now: f64, except: Option<AgentId>) -> bool {
        self.known_reserved_rbs.iter().any(|(&owner, r)| {
            r.rb == rb && r.expires_at > now && Some(owner) != except && owner != self.id
        })
    }

    /// RBs of the pool not reserved by anyone but `except` and this agent.
    pub fn available_rbs(&self, pool_size: u32, now: f64, except: Option<AgentId>) -> Vec<RbId> {
        (1..=pool_size)
            .filter(|&rb| !self.reserved_by_others(rb, now, except))
            .collect()
    }

    fn note_reservation(&mut self, owner: AgentId, rb: RbId, expires_at: f64) {
        self.known_reserved_rbs
            .insert(owner, Reservation { rb, expires_at });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MessageKind {
    Invite,
    Accept,
    Confirm,
}

impl MessageKind {
    pub fn name(&self) -> &'static str {
        match self {
            MessageKind::Invite => "SC-INV-MSG",
            MessageKind::Accept => "SC-ACP-MSG",
            MessageKind::Confirm => "SC-CON-MSG",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Invite {
        rb: RbId,
    },
    Accept {
        inviter: AgentId,
        nch_locations: Vec<(f64, f64)>,
        available_rbs: Vec<RbId>,
    },
    Confirm {
        members: Vec<AgentId>,
        chs_pa: String,
        rb: RbId,
        confirmed_at: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScfpMessage {
    pub sender: AgentId,
    pub sender_position: (f64, f64),
    pub payload: Payload,
}

impl ScfpMessage {
    pub fn kind(&self) -> MessageKind {
        match self.payload {
            Payload::Invite { .. } => MessageKind::Invite,
            Payload::Accept { .. } => MessageKind::Accept,
            Payload::Confirm { .. } => MessageKind::Confirm,
        }
    }

    pub fn summary(&self) -> String {
        match &self.payload {
            Payload::Invite { rb } => format!("rb={rb}"),
            Payload::Accept {
                inviter,
                available_rbs,
                nch_locations,
            } => format!(
                "inviter={inviter} nch={} available={}",
                nch_locations.len(),
                join(available_rbs)
            ),
            Payload::Confirm {
                members,
                rb,
                confirmed_at,
                ..
            } => {
                format!(
                    "members={} rb={rb} confirmed_at={confirmed_at:.6}",
                    join(members)
                )
            }
        }
    }
}

fn join<T: fmt::Display>(v: &[T]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

/// Produces the CHS-PA payload of a confirmation from the head and its
/// members. The protocol carries it verbatim.
pub type ChsPaProvider = dyn Fn(AgentId, &[AgentId]) -> String + Send + Sync;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScfpConfig {
    pub sc_size_limit: usize,
    pub invite_period_s: f64,
    pub rb_reservation_timeout_s: f64,
    pub comm_range_m: f64,
    pub rb_pool_size: u32,
    pub seed: u64,
}

impl Default for ScfpConfig {
    fn default() -> Self {
        Self {
            sc_size_limit: 4,
            invite_period_s: 0.1,
            rb_reservation_timeout_s: 30.0,
            comm_range_m: 100.0,
            rb_pool_size: 10,
            seed: 1,
        }
    }
}

impl ScfpConfig {
    pub fn validate(&self) -> Result<(), ScfpError> {
        let bad = |s: &str| Err(ScfpError::InvalidConfig(s.to_string()));
        if self.sc_size_limit < 2 {
            return bad("sc_size_limit must be at least 2");
        }
        if !(self.invite_period_s > 0.0) || !(self.rb_reservation_timeout_s > 0.0) {
            return bad("times must be positive");
        }
        if !(self.comm_range_m > 0.0) {
            return bad("communication range must be positive");
        }
        if self.rb_pool_size == 0 {
            return bad("RB pool must be non-empty");
        }
        Ok(())
    }

    fn max_latency(&self) -> f64 {
        0.2 * self.invite_period_s
    }

    fn await_timeout(&self) -> f64 {
        2.0 * self.invite_period_s
    }
}

/// Response of an agent to an invitation: an acceptance when the agent is
/// in no SC, free to answer and driving behind the inviter.
pub fn on_invite(
    agent: &ChAgent,
    msg: &ScfpMessage,
    now: f64,
    config: &ScfpConfig,
) -> Option<ScfpMessage> {
    if !matches!(msg.payload, Payload::Invite { .. }) || msg.sender == agent.id {
        return None;
    }
    if !matches!(agent.state, AgentState::Unclustered | AgentState::Inviting) {
        return None;
    }
    if !(agent.position.0 < msg.sender_position.0) {
        return None;
    }
    Some(acceptance_for(agent, msg.sender, now, config))
}

fn acceptance_for(agent: &ChAgent, inviter: AgentId, now: f64, config: &ScfpConfig) -> ScfpMessage {
    ScfpMessage {
        sender: agent.id,
        sender_position: agent.position,
        payload: Payload::Accept {
            inviter,
            nch_locations: agent.nch_locations.clone(),
            available_rbs: agent.available_rbs(config.rb_pool_size, now, Some(inviter)),
        },
    }
}

/// The `limit - 1` acceptors nearest to the inviter, ties by id.
pub fn select_members(inviter: &ChAgent, acceptances: &[Acceptance], limit: usize) -> Vec<AgentId> {
    let mut ranked: Vec<(f64, AgentId)> = acceptances
        .iter()
        .map(|a| (inviter.distance_to(a.position), a.sender))
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    ranked.dedup_by_key(|r| r.1);
    ranked
        .into_iter()
        .take(limit.saturating_sub(1))
        .map(|r| r.1)
        .collect()
}

/// Uniform choice among the RBs the agent believes free.
pub fn select_rb(
    agent: &ChAgent,
    now: f64,
    config: &ScfpConfig,
    rng: &mut impl Rng,
) -> Result<RbId, ScfpError> {
    let free = agent.available_rbs(config.rb_pool_size, now, None);
    pick(&free, rng)
}

fn pick(free: &[RbId], rng: &mut impl Rng) -> Result<RbId, ScfpError> {
    if free.is_empty() {
        return Err(ScfpError::NoRbAvailable);
    }
    Ok(free[rng.random_range(0..free.len())])
}

/// Builds the confirmation for the collected acceptances. The proposed RB
/// is kept unless some acceptor or the inviter itself knows it reserved,
/// in which case an RB free for everyone is drawn.
pub fn on_acceptances(
    inviter: &ChAgent,
    acceptances: &[Acceptance],
    now: f64,
    config: &ScfpConfig,
    chs_pa: &str,
    rng: &mut impl Rng,
) -> Result<ScfpMessage, ScfpError> {
    let members = select_members(inviter, acceptances, config.sc_size_limit);
    let proposed = inviter.proposed_rb;
    let clean = proposed.is_some_and(|rb| {
        !inviter.reserved_by_others(rb, now, None)
            && acceptances.iter().all(|a| a.available_rbs.contains(&rb))
    });
    let rb = match proposed {
        Some(rb) if clean => rb,
        _ => {
            let free: Vec<RbId> = inviter
                .available_rbs(config.rb_pool_size, now, None)
                .into_iter()
                .filter(|rb| acceptances.iter().all(|a| a.available_rbs.contains(rb)))
                .collect();
            pick(&free, rng)?
        }
    };
    Ok(ScfpMessage {
        sender: inviter.id,
        sender_position: inviter.position,
        payload: Payload::Confirm {
            members,
            chs_pa: chs_pa.to_string(),
            rb,
            confirmed_at: now,
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum TraceKind {
    Send(MessageKind),
    Receive(MessageKind),
    State { from: AgentState, to: AgentState },
    Abort,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub time_s: f64,
    pub kind: TraceKind,
    pub sender: AgentId,
    pub receiver: Option<AgentId>,
    pub summary: String,
}

impl TraceEntry {
    fn kind_name(&self) -> String {
        match &self.kind {
            TraceKind::Send(k) => format!("send {}", k.name()),
            TraceKind::Receive(k) => format!("recv {}", k.name()),
            TraceKind::State { .. } => "state".into(),
            TraceKind::Abort => "abort".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuperCluster {
    pub head: AgentId,
    pub members: Vec<AgentId>,
    pub rb: RbId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FormationOutcome {
    pub agents: Vec<ChAgent>,
    pub super_clusters: Vec<SuperCluster>,
    pub trace: Vec<TraceEntry>,
    pub comm_range_m: f64,
    pub sc_size_limit: usize,
}

impl FormationOutcome {
    pub fn write_trace_csv<W: std::io::Write>(&self, out: W) -> Result<(), ScfpError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time_s", "event", "sender", "receiver", "payload"])?;
        for e in &self.trace {
            w.write_record([
                format!("{:.6}", e.time_s),
                e.kind_name(),
                e.sender.to_string(),
                e.receiver
                    .map(|r| r.to_string())
                    .unwrap_or_else(|| "*".into()),
                e.summary.clone(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_assignment_csv<W: std::io::Write>(&self, out: W) -> Result<(), ScfpError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["agent_id", "state", "sc_id", "rb"])?;
        for a in &self.agents {
            w.write_record([
                a.id.to_string(),
                a.state.name().to_string(),
                a.sc_id.map(|s| s.to_string()).unwrap_or_default(),
                a.current_rb.map(|r| r.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    fn in_range(&self, a: AgentId, b: AgentId) -> bool {
        self.agents[a].distance_to(self.agents[b].position) <= self.comm_range_m
    }

    /// Every violated formation property, empty when all hold.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for a in &self.agents {
            if a.state.in_sc() != a.sc_id.is_some() {
                out.push(format!(
                    "agent {} in {} with sc_id {:?}",
                    a.id, a.state, a.sc_id
                ));
            }
            let rb_allowed = matches!(
                a.state,
                AgentState::AwaitingConfirm | AgentState::ScMember | AgentState::ScHead
            );
            if a.current_rb.is_some() && !rb_allowed {
                out.push(format!("agent {} in {} holds an RB", a.id, a.state));
            }
        }
        for sc in &self.super_clusters {
            if sc.members.len() + 1 > self.sc_size_limit {
                out.push(format!("SC {} has {} LCs", sc.head, sc.members.len() + 1));
            }
            let hx = self.agents[sc.head].position.0;
            for &m in &sc.members {
                if !(self.agents[m].position.0 < hx) {
                    out.push(format!(
                        "member {m} of SC {} is not behind its head",
                        sc.head
                    ));
                }
                let a = &self.agents[m];
                if a.state != AgentState::ScMember
                    || a.sc_id != Some(sc.head)
                    || a.current_rb != Some(sc.rb)
                {
                    out.push(format!("member {m} disagrees with SC {}", sc.head));
                }
            }
        }
        for (i, a) in self.super_clusters.iter().enumerate() {
            for b in &self.super_clusters[i + 1..] {
                if a.rb != b.rb {
                    continue;
                }
                let la: Vec<AgentId> = std::iter::once(a.head)
                    .chain(a.members.iter().copied())
                    .collect();
                let lb: Vec<AgentId> = std::iter::once(b.head)
                    .chain(b.members.iter().copied())
                    .collect();
                if la.iter().all(|&x| lb.iter().all(|&y| self.in_range(x, y))) {
                    out.push(format!(
                        "SCs {} and {} share RB {} within range",
                        a.head, b.head, a.rb
                    ));
                }
            }
        }
        let mut state: Vec<AgentState> = vec![AgentState::Unclustered; self.agents.len()];
        for e in &self.trace {
            if let TraceKind::State { from, to } = e.kind {
                if state[e.sender] != from || !from.can_move_to(to) {
                    out.push(format!(
                        "agent {} moved {} -> {} at {:.6}",
                        e.sender, from, to, e.time_s
                    ));
                }
                state[e.sender] = to;
            }
        }
        for a in &self.agents {
            if state[a.id] != a.state {
                out.push(format!(
                    "trace of agent {} ends in {} but agent is {}",
                    a.id, state[a.id], a.state
                ));
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
enum EventKind {
    InviteTimer { agent: AgentId },
    Deliver { to: AgentId, msg: ScfpMessage },
    AwaitTimeout { agent: AgentId, epoch: u64 },
}

#[derive(Debug, Clone)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // reversed: BinaryHeap pops the earliest event
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then(other.seq.cmp(&self.seq))
    }
}

struct Sim<'a> {
    agents: Vec<ChAgent>,
    config: ScfpConfig,
    rng: ChaCha8Rng,
    heap: BinaryHeap<Event>,
    seq: u64,
    trace: Vec<TraceEntry>,
    /// Latest scheduled delivery per (sender, receiver); links are FIFO.
    link_clock: BTreeMap<(AgentId, AgentId), f64>,
    chs_pa: &'a ChsPaProvider,
}

impl Sim<'_> {
    fn schedule(&mut self, time: f64, kind: EventKind) {
        self.seq += 1;
        self.heap.push(Event {
            time,
            seq: self.seq,
            kind,
        });
    }

    fn set_state(&mut self, id: AgentId, to: AgentState, now: f64) {
        let from = self.agents[id].state;
        self.agents[id].state = to;
        self.trace.push(TraceEntry {
            time_s: now,
            kind: TraceKind::State { from, to },
            sender: id,
            receiver: None,
            summary: format!("{from}->{to}"),
        });
    }

    fn broadcast(&mut self, msg: ScfpMessage, now: f64) {
        self.trace.push(TraceEntry {
            time_s: now,
            kind: TraceKind::Send(msg.kind()),
            sender: msg.sender,
            receiver: None,
            summary: msg.summary(),
        });
        let range = self.config.comm_range_m;
        let max_lat = self.config.max_latency();
        for to in 0..self.agents.len() {
            if to == msg.sender || self.agents[to].distance_to(msg.sender_position) > range {
                continue;
            }
            let mut lat = 0.0;
            while lat <= 0.0 {
                lat = self.rng.random_range(0.0..max_lat);
            }
            let clock = self
                .link_clock
                .entry((msg.sender, to))
                .or_insert(f64::NEG_INFINITY);
            let at = (now + lat).max(*clock);
            *clock = at;
            self.schedule(
                at,
                EventKind::Deliver {
                    to,
                    msg: msg.clone(),
                },
            );
        }
    }

    fn on_timer(&mut self, id: AgentId, now: f64) {
        let period = self.config.invite_period_s;
        match self.agents[id].state {
            AgentState::Inviting if !self.agents[id].acceptances.is_empty() => {
                self.confirm(id, now);
            }
            AgentState::Inviting | AgentState::Unclustered => self.invite(id, now),
            _ => {}
        }
        if !self.agents[id].state.in_sc() {
            self.schedule(now + period, EventKind::InviteTimer { agent: id });
        }
    }

    fn invite(&mut self, id: AgentId, now: f64) {
        self.agents[id].forget_expired(now);
        let rb = match select_rb(&self.agents[id], now, &self.config, &mut self.rng) {
            Ok(rb) => rb,
            Err(_) => {
                self.trace.push(TraceEntry {
                    time_s: now,
                    kind: TraceKind::Abort,
                    sender: id,
                    receiver: None,
                    summary: "no RB available for invitation".into(),
                });
                return;
            }
        };
        if self.agents[id].state == AgentState::Unclustered {
            self.set_state(id, AgentState::Inviting, now);
        }
        self.agents[id].proposed_rb = Some(rb);
        let msg = ScfpMessage {
            sender: id,
            sender_position: self.agents[id].position,
            payload: Payload::Invite { rb },
        };
        self.broadcast(msg, now);
    }

    fn confirm(&mut self, id: AgentId, now: f64) {
        self.agents[id].forget_expired(now);
        let acceptances = std::mem::take(&mut self.agents[id].acceptances);
        let members = select_members(&self.agents[id], &acceptances, self.config.sc_size_limit);
        let payload = (self.chs_pa)(id, &members);
        match on_acceptances(
            &self.agents[id],
            &acceptances,
            now,
            &self.config,
            &payload,
            &mut self.rng,
        ) {
            Ok(msg) => {
                let Payload::Confirm {
                    ref members, rb, ..
                } = msg.payload
                else {
                    unreachable!()
                };
                let agent = &mut self.agents[id];
                agent.members = members.clone();
                agent.current_rb = Some(rb);
                agent.sc_id = Some(id);
                agent.proposed_rb = None;
                agent.confirmed_at = Some(now);
                self.set_state(id, AgentState::ScHead, now);
                self.broadcast(msg, now);
            }
            Err(_) => {
                self.trace.push(TraceEntry {
                    time_s: now,
                    kind: TraceKind::Abort,
                    sender: id,
                    receiver: None,
                    summary: "no common RB for confirmation".into(),
                });
            }
        }
    }

    fn accept(&mut self, id: AgentId, inviter: AgentId, inviter_x: f64, now: f64) {
        let msg = acceptance_for(&self.agents[id], inviter, now, &self.config);
        let agent = &mut self.agents[id];
        agent.acceptances.clear();
        agent.proposed_rb = None;
        agent.pending_inviter = Some(inviter);
        agent.pending_x = inviter_x;
        agent.current_rb = agent.known_reserved_rbs.get(&inviter).map(|r| r.rb);
        agent.open_invites.remove(&inviter);
        agent.awaiting_epoch += 1;
        let epoch = agent.awaiting_epoch;
        if self.agents[id].state != AgentState::AwaitingConfirm {
            self.set_state(id, AgentState::AwaitingConfirm, now);
        }
        self.schedule(
            now + self.config.await_timeout(),
            EventKind::AwaitTimeout { agent: id, epoch },
        );
        self.broadcast(msg, now);
    }

    /// Leaves AWAITING_CONFIRM and answers the frontmost invitation still
    /// believed open.
    fn release(&mut self, id: AgentId, now: f64) {
        let agent = &mut self.agents[id];
        agent.pending_inviter = None;
        agent.pending_x = f64::NEG_INFINITY;
        agent.current_rb = None;
        self.set_state(id, AgentState::Unclustered, now);
        let horizon = self.config.invite_period_s;
        let agent = &mut self.agents[id];
        agent
            .open_invites
            .retain(|_, (_, heard)| now - *heard <= horizon);
        let x = agent.position.0;
        let best = agent
            .open_invites
            .iter()
            .filter(|(_, (pos, _))| pos.0 > x)
            .max_by(|a, b| a.1 .0 .0.total_cmp(&b.1 .0 .0).then(b.0.cmp(a.0)))
            .map(|(&inv, (pos, _))| (inv, pos.0));
        if let Some((inviter, x)) = best {
            self.accept(id, inviter, x, now);
        }
    }

    fn deliver(&mut self, to: AgentId, msg: ScfpMessage, now: f64) {
        self.trace.push(TraceEntry {
            time_s: now,
            kind: TraceKind::Receive(msg.kind()),
            sender: msg.sender,
            receiver: Some(to),
            summary: msg.summary(),
        });
        let expiry = now + self.config.rb_reservation_timeout_s;
        match &msg.payload {
            Payload::Invite { rb } => {
                // an inviter behind the listener gives up its round as soon as the
                // listener invites, so only invitations from ahead block an RB
                if msg.sender_position.0 > self.agents[to].position.0 {
                    self.agents[to].note_reservation(msg.sender, *rb, expiry);
                }
                if let Some(reply) = on_invite(&self.agents[to], &msg, now, &self.config) {
                    let Payload::Accept { inviter, .. } = reply.payload else {
                        unreachable!()
                    };
                    self.accept(to, inviter, msg.sender_position.0, now);
                } else if self.agents[to].state == AgentState::AwaitingConfirm
                    && self.agents[to].position.0 < msg.sender_position.0
                {
                    // an awaiting CH is in no SC yet: it answers a new round of its
                    // inviter and moves to an inviter further ahead
                    if self.agents[to].pending_inviter == Some(msg.sender)
                        || msg.sender_position.0 > self.agents[to].pending_x
                    {
                        self.accept(to, msg.sender, msg.sender_position.0, now);
                    } else {
                        self.agents[to]
                            .open_invites
                            .insert(msg.sender, (msg.sender_position, now));
                    }
                }
            }
            Payload::Accept {
                inviter,
                nch_locations,
                available_rbs,
            } => {
                let sender = msg.sender;
                let freed_rb = {
                    let agent = &mut self.agents[to];
                    agent.open_invites.remove(&sender);
                    agent.known_reserved_rbs.remove(&sender).is_some()
                };
                if *inviter == to && self.agents[to].state == AgentState::Inviting {
                    let acc = Acceptance {
                        sender,
                        position: msg.sender_position,
                        nch_locations: nch_locations.clone(),
                        available_rbs: available_rbs.clone(),
                    };
                    let list = &mut self.agents[to].acceptances;
                    list.retain(|a| a.sender != sender);
                    list.push(acc);
                } else if self.agents[to].state == AgentState::Inviting {
                    self.agents[to].acceptances.retain(|a| a.sender != sender);
                } else if self.agents[to].state == AgentState::ScHead && *inviter != to {
                    // confirmed a CH that had already moved on
                    self.agents[to].members.retain(|&m| m != sender);
                }
                if self.agents[to].state == AgentState::AwaitingConfirm {
                    if self.agents[to].pending_inviter == Some(sender) {
                        self.release(to, now);
                    } else if freed_rb {
                        // the abandoned invitation no longer blocks its RB
                        let (inviter, x) = (
                            self.agents[to].pending_inviter.unwrap(),
                            self.agents[to].pending_x,
                        );
                        self.accept(to, inviter, x, now);
                    }
                }
            }
            Payload::Confirm {
                members,
                rb,
                confirmed_at,
                ..
            } => {
                let sender = msg.sender;
                self.agents[to].note_reservation(sender, *rb, expiry);
                self.agents[to].open_invites.remove(&sender);
                let listed = members.contains(&to);
                match self.agents[to].state {
                    AgentState::AwaitingConfirm
                        if self.agents[to].pending_inviter == Some(sender) =>
                    {
                        if listed {
                            let agent = &mut self.agents[to];
                            agent.pending_inviter = None;
                            agent.open_invites.clear();
                            agent.current_rb = Some(*rb);
                            agent.sc_id = Some(sender);
                            self.set_state(to, AgentState::ScMember, now);
                        } else {
                            self.release(to, now);
                        }
                    }
                    AgentState::ScMember if self.agents[to].sc_id == Some(sender) => {
                        self.agents[to].current_rb = Some(*rb);
                    }
                    AgentState::ScHead if self.agents[to].current_rb == Some(*rb) => {
                        let mine = (self.agents[to].confirmed_at.unwrap_or(now), to);
                        let theirs = (*confirmed_at, sender);
                        if mine.0.total_cmp(&theirs.0).then(mine.1.cmp(&theirs.1))
                            == Ordering::Greater
                        {
                            self.reannounce(to, now);
                        }
                    }
                    _ => {}
                }
            }
        }
    }

    /// Moves a head to another RB after a conflicting confirmation.
    fn reannounce(&mut self, id: AgentId, now: f64) {
        self.agents[id].forget_expired(now);
        let Ok(rb) = select_rb(&self.agents[id], now, &self.config, &mut self.rng) else {
            self.trace.push(TraceEntry {
                time_s: now,
                kind: TraceKind::Abort,
                sender: id,
                receiver: None,
                summary: "no RB available to resolve a conflict".into(),
            });
            return;
        };
        let agent = &mut self.agents[id];
        agent.current_rb = Some(rb);
        let confirmed_at = agent.confirmed_at.unwrap_or(now);
        let msg = ScfpMessage {
            sender: id,
            sender_position: agent.position,
            payload: Payload::Confirm {
                members: agent.members.clone(),
                chs_pa: (self.chs_pa)(id, &agent.members),
                rb,
                confirmed_at,
            },
        };
        self.broadcast(msg, now);
    }
}

/// Runs the protocol until `duration_s`, then drains messages still in
/// flight without starting new rounds.
pub fn run_formation(
    agents: &[ChAgent],
    config: &ScfpConfig,
    duration_s: f64,
) -> Result<FormationOutcome, ScfpError> {
    run_formation_with(agents, config, duration_s, &|head, members| {
        format!("head={head};members={}", join(members))
    })
}

pub fn run_formation_with(
    agents: &[ChAgent],
    config: &ScfpConfig,
    duration_s: f64,
    chs_pa: &ChsPaProvider,
) -> Result<FormationOutcome, ScfpError> {
    config.validate()?;
    if agents.is_empty() {
        return Err(ScfpError::NoAgents);
    }
    if agents.iter().enumerate().any(|(i, a)| a.id != i) {
        return Err(ScfpError::BadIds);
    }
    if !(duration_s >= 0.0) {
        return Err(ScfpError::InvalidConfig(
            "duration must be non-negative".into(),
        ));
    }
    let mut sim = Sim {
        agents: agents
            .iter()
            .map(|a| ChAgent::new(a.id, a.position).with_nch(a.nch_locations.clone()))
            .collect(),
        config: *config,
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        heap: BinaryHeap::new(),
        seq: 0,
        trace: Vec::new(),
        link_clock: BTreeMap::new(),
        chs_pa,
    };
    for id in 0..agents.len() {
        let t = sim.rng.random_range(0.0..0.5 * config.invite_period_s);
        sim.schedule(t, EventKind::InviteTimer { agent: id });
    }
    while let Some(ev) = sim.heap.pop() {
        let now = ev.time;
        let draining = now > duration_s;
        match ev.kind {
            EventKind::InviteTimer { agent } => {
                if !draining {
                    sim.on_timer(agent, now);
                }
            }
            EventKind::Deliver { to, msg } => sim.deliver(to, msg, now),
            EventKind::AwaitTimeout { agent, epoch } => {
                let a = &sim.agents[agent];
                if a.state == AgentState::AwaitingConfirm && a.awaiting_epoch == epoch {
                    if draining {
                        let a = &mut sim.agents[agent];
                        a.pending_inviter = None;
                        a.current_rb = None;
                        sim.set_state(agent, AgentState::Unclustered, now);
                    } else {
                        sim.release(agent, now);
                    }
                }
            }
        }
    }
    let super_clusters = sim
        .agents
        .iter()
        .filter(|a| a.state == AgentState::ScHead)
        .map(|a| SuperCluster {
            head: a.id,
            members: a.members.clone(),
            rb: a.current_rb.expect("heads hold an RB"),
        })
        .collect();
    Ok(FormationOutcome {
        agents: sim.agents,
        super_clusters,
        trace: sim.trace,
        comm_range_m: config.comm_range_m,
        sc_size_limit: config.sc_size_limit,
    })
}

/// Random CH layout on a road segment of the given length and width. Each
/// CH gets a line of five NCHs behind it at 9.5 m spacing.
pub fn random_agents(count: usize, length_m: f64, width_m: f64, seed: u64) -> Vec<ChAgent> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|id| {
            let x = rng.random_range(0.0..length_m);
            let y = rng.random_range(0.0..width_m);
            let nch = (1..=5).map(|i| (x - 9.5 * i as f64, y)).collect();
            ChAgent::new(id, (x, y)).with_nch(nch)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ScfpConfig {
        ScfpConfig::default()
    }

    fn invite_from(sender: AgentId, x: f64, rb: RbId) -> ScfpMessage {
        ScfpMessage {
            sender,
            sender_position: (x, 0.0),
            payload: Payload::Invite { rb },
        }
    }

    #[test]
    fn behind_rule() {
        let a = ChAgent::new(0, (10.0, 0.0));
        let reply = on_invite(&a, &invite_from(1, 30.0, 2), 0.0, &cfg()).unwrap();
        match reply.payload {
            Payload::Accept {
                inviter,
                available_rbs,
                ..
            } => {
                assert_eq!(inviter, 1);
                assert_eq!(available_rbs, (1..=10).collect::<Vec<_>>());
            }
            _ => panic!("expected acceptance"),
        }
        let ahead = ChAgent::new(0, (50.0, 0.0));
        assert!(on_invite(&ahead, &invite_from(1, 30.0, 2), 0.0, &cfg()).is_none());
        let mut member = ChAgent::new(0, (10.0, 0.0));
        member.state = AgentState::ScMember;
        assert!(on_invite(&member, &invite_from(1, 30.0, 2), 0.0, &cfg()).is_none());
        let level = ChAgent::new(0, (30.0, 3.0));
        assert!(on_invite(&level, &invite_from(1, 30.0, 2), 0.0, &cfg()).is_none());
    }

    fn acc(sender: AgentId, x: f64, rbs: Vec<RbId>) -> Acceptance {
        Acceptance {
            sender,
            position: (x, 0.0),
            nch_locations: Vec::new(),
            available_rbs: rbs,
        }
    }

    #[test]
    fn member_selection() {
        let inviter = ChAgent::new(9, (100.0, 0.0));
        let accs: Vec<_> = [(0, 10.0), (1, 90.0), (2, 50.0), (3, 95.0), (4, 70.0)]
            .iter()
            .map(|&(i, x)| acc(i, x, vec![1]))
            .collect();
        assert_eq!(select_members(&inviter, &accs, 4), vec![3, 1, 4]);
        assert!(select_members(&inviter, &[], 4).is_empty());
        let tie = vec![acc(5, 80.0, vec![1]), acc(2, 80.0, vec![1])];
        assert_eq!(select_members(&inviter, &tie, 2), vec![2]);
    }

    #[test]
    fn rb_selection_and_expiry() {
        let c = cfg();
        let mut a = ChAgent::new(0, (0.0, 0.0));
        let mut seen = std::collections::BTreeSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            seen.insert(select_rb(&a, 0.0, &c, &mut rng).unwrap());
        }
        assert_eq!(seen.len(), 10);
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(
            select_rb(&a, 0.0, &c, &mut r1).unwrap(),
            select_rb(&a, 0.0, &c, &mut r2).unwrap()
        );

        a.note_reservation(7, 3, 1.0);
        for _ in 0..200 {
            assert_ne!(select_rb(&a, 0.5, &c, &mut rng).unwrap(), 3);
        }
        assert!(a.available_rbs(10, 1.5, None).contains(&3));
        for rb in 1..=10 {
            a.known_reserved_rbs.insert(
                20 + rb as usize,
                Reservation {
                    rb,
                    expires_at: 9.0,
                },
            );
        }
        assert!(matches!(
            select_rb(&a, 0.5, &c, &mut rng),
            Err(ScfpError::NoRbAvailable)
        ));
    }

    #[test]
    fn confirmation_rb() {
        let c = cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut inviter = ChAgent::new(9, (100.0, 0.0));
        inviter.proposed_rb = Some(4);
        let all: Vec<RbId> = (1..=10).collect();
        let msg = on_acceptances(
            &inviter,
            &[acc(0, 90.0, all.clone())],
            0.0,
            &c,
            "x",
            &mut rng,
        )
        .unwrap();
        assert!(matches!(msg.payload, Payload::Confirm { rb: 4, .. }));

        let without4: Vec<RbId> = all.iter().copied().filter(|&r| r != 4).collect();
        let msg = on_acceptances(
            &inviter,
            &[acc(0, 90.0, all.clone()), acc(1, 80.0, without4)],
            0.0,
            &c,
            "x",
            &mut rng,
        )
        .unwrap();
        match msg.payload {
            Payload::Confirm {
                rb,
                ref members,
                ref chs_pa,
                ..
            } => {
                assert_ne!(rb, 4);
                assert_eq!(members, &vec![0, 1]);
                assert_eq!(chs_pa, "x");
            }
            _ => panic!(),
        }
        let none = on_acceptances(&inviter, &[acc(0, 90.0, vec![])], 0.0, &c, "x", &mut rng);
        assert!(matches!(none, Err(ScfpError::NoRbAvailable)));
    }

    #[test]
    fn four_in_range_form_one_sc_under_frontmost() {
        let agents: Vec<ChAgent> = [0.0, 20.0, 40.0, 60.0]
            .iter()
            .enumerate()
            .map(|(i, &x)| ChAgent::new(i, (x, 0.0)))
            .collect();
        for seed in 0..20 {
            let out = run_formation(&agents, &ScfpConfig { seed, ..cfg() }, 2.0).unwrap();
            assert!(out.violations().is_empty(), "{:?}", out.violations());
            assert_eq!(out.super_clusters.len(), 1, "seed {seed}");
            assert_eq!(out.super_clusters[0].head, 3);
            assert_eq!(out.super_clusters[0].members.len(), 3);
        }
    }

    #[test]
    fn distant_groups_form_separately() {
        let xs = [0.0, 20.0, 1000.0, 1020.0];
        let agents: Vec<ChAgent> = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| ChAgent::new(i, (x, 0.0)))
            .collect();
        let out = run_formation(&agents, &cfg(), 2.0).unwrap();
        assert!(out.violations().is_empty());
        let heads: Vec<_> = out.super_clusters.iter().map(|s| s.head).collect();
        assert_eq!(heads, vec![1, 3]);
    }

    #[test]
    fn single_agent_never_clusters() {
        let out = run_formation(&[ChAgent::new(0, (0.0, 0.0))], &cfg(), 1.0).unwrap();
        assert!(matches!(
            out.agents[0].state,
            AgentState::Inviting | AgentState::Unclustered
        ));
        assert!(out.super_clusters.is_empty());
        assert!(run_formation(&[], &cfg(), 1.0).is_err());
        assert!(ScfpConfig {
            sc_size_limit: 1,
            ..cfg()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn trace_is_seed_deterministic() {
        let agents = random_agents(12, 300.0, 12.0, 4);
        let a = run_formation(&agents, &cfg(), 3.0).unwrap();
        let b = run_formation(&agents, &cfg(), 3.0).unwrap();
        assert_eq!(a, b);
        let mut buf = Vec::new();
        a.write_trace_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("time_s,event,sender,receiver,payload\n"));
    }
}
