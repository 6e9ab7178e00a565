//! Deterministic discrete-event network simulator.
//!
//! Nodes run the gossip engine (or the eventing baseline) and talk only
//! through the simulator's event queue. Each transmission pays a sender-side
//! cost (sends from one node are serialized) plus a fixed network delay, and
//! gossip datagrams are dropped independently with the configured loss rate.
//! A run is a pure function of its [`SimConfig`], seed included.

mod metrics;
mod queue;
mod txlog;

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use self::metrics::{MessageMetrics, Receipt, RunMetrics};
pub use self::queue::EventQueue;
pub use self::txlog::{write_tx_log, TxRecord};
use self::metrics::{Totals, Tracker};
use crate::engine::{EngineError, Filter, GossipConfig, Message, NodeCounters, NodeState, Send};
use crate::envelope::{Envelope, MessageId, NodeAddr, Payload, Style};
use crate::membership::{PeerEntry, PeerView, Registry};
use crate::time::SimTime;

pub const SERVICE_TYPE: &str = "float-setter";

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("writing transmission log: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Protocol {
    Gossip,
    Eventing,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Gossip => "gossip",
            Protocol::Eventing => "eventing",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gossip" => Ok(Protocol::Gossip),
            "eventing" => Ok(Protocol::Eventing),
            other => Err(SimError::InvalidConfig(format!("unknown protocol {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatencyModel {
    pub network_delay: Duration,
    /// Sender-side serialization cost paid once per transmission.
    pub per_send_cost: Duration,
    /// Extra uniform delay in `[0, jitter]` per transmission.
    pub jitter: Duration,
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel {
            network_delay: Duration::from_millis(1),
            per_send_cost: Duration::from_micros(400),
            jitter: Duration::ZERO,
        }
    }
}

impl LatencyModel {
    /// Every hop takes exactly one network delay and sending is free, so
    /// copies at depth d all arrive together in round d.
    pub fn lockstep() -> Self {
        LatencyModel {
            network_delay: Duration::from_millis(1),
            per_send_cost: Duration::ZERO,
            jitter: Duration::ZERO,
        }
    }
}

/// Where gossip nodes get their peers from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MembershipMode {
    /// Every node is seeded with the registry's full snapshot of its scope.
    Registry,
    /// Every node starts knowing `bootstrap` random peers and shuffles views.
    Newscast {
        capacity: usize,
        exchange_timeframe: Duration,
        bootstrap: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n: usize,
    pub protocol: Protocol,
    pub gossip: GossipConfig,
    pub loss: f64,
    pub seed: u64,
    pub events: usize,
    pub interval: Duration,
    /// Virtual time of the first emission.
    pub start: Duration,
    pub latency: LatencyModel,
    pub warmup_discard: usize,
    pub cooldown_discard: usize,
    pub membership: MembershipMode,
    /// Housekeeping period for gossip nodes (pull variants tick on their
    /// pull schedule instead).
    pub tick_period: Duration,
    /// How long nodes keep ticking after the last origination.
    pub drain: Duration,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: 10,
            protocol: Protocol::Gossip,
            gossip: GossipConfig::default(),
            loss: 0.0,
            seed: 0,
            events: 120,
            interval: Duration::from_secs(5),
            start: Duration::from_secs(1),
            latency: LatencyModel::default(),
            warmup_discard: 10,
            cooldown_discard: 10,
            membership: MembershipMode::Registry,
            tick_period: Duration::from_secs(1),
            drain: Duration::from_secs(5),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if self.n < 2 {
            return bad(format!("need at least 2 nodes, got {}", self.n));
        }
        if u32::try_from(self.n).is_err() {
            return bad(format!("too many nodes: {}", self.n));
        }
        if !(0.0..=1.0).contains(&self.loss) {
            return bad(format!("loss must be within [0, 1], got {}", self.loss));
        }
        if self.events <= self.warmup_discard + self.cooldown_discard {
            return bad(format!(
                "events ({}) must exceed warmup + cooldown discards ({} + {})",
                self.events, self.warmup_discard, self.cooldown_discard
            ));
        }
        if self.tick_period.is_zero() {
            return bad("tick_period must be positive".into());
        }
        if let MembershipMode::Newscast {
            capacity,
            exchange_timeframe,
            ..
        } = self.membership
        {
            if capacity == 0 || exchange_timeframe.is_zero() {
                return bad("newscast needs a positive capacity and exchange timeframe".into());
            }
        }
        if self.protocol == Protocol::Gossip {
            self.gossip.validate()?;
        }
        Ok(())
    }

    /// Loss actually applied: the eventing baseline runs over a reliable
    /// transport.
    pub fn effective_loss(&self) -> f64 {
        match self.protocol {
            Protocol::Gossip => self.loss,
            Protocol::Eventing => 0.0,
        }
    }
}

/// One simulated transmission.
#[derive(Debug, Clone, PartialEq)]
pub struct Transmission {
    pub from: NodeAddr,
    pub to: NodeAddr,
    pub message: Message,
    pub send_time: SimTime,
    pub deliver_time: SimTime,
    pub dropped: bool,
}

/// Sequential unicast from an eventing publisher: the k-th subscriber's
/// copy leaves at `now + k * per_send_cost` (k counted from 1).
pub fn eventing_publish(
    publisher: NodeAddr,
    subscribers: &[NodeAddr],
    envelope: &Envelope,
    now: SimTime,
    latency: &LatencyModel,
) -> Vec<Transmission> {
    subscribers
        .iter()
        .zip(1u32..)
        .map(|(&to, k)| {
            let send_time = now + latency.per_send_cost * k;
            Transmission {
                from: publisher,
                to,
                message: Message::Notify {
                    envelope: envelope.clone(),
                },
                send_time,
                deliver_time: send_time + latency.network_delay,
                dropped: false,
            }
        })
        .collect()
}

/// Drops the transmission with probability `loss`.
pub fn inject_loss<R: Rng + ?Sized>(mut t: Transmission, loss: f64, rng: &mut R) -> Transmission {
    if rng.gen_bool(loss.clamp(0.0, 1.0)) {
        t.dropped = true;
    }
    t
}

/// Something a client asks a node to originate.
#[derive(Debug, Clone, PartialEq)]
pub struct Origination {
    pub action: String,
    pub payload: f64,
    pub style: Style,
    pub filter: Option<Filter>,
}

impl Origination {
    pub fn set(value: f64) -> Self {
        Origination {
            action: "set".into(),
            payload: value,
            style: Style::OneWay,
            filter: None,
        }
    }

    pub fn query(filter: Option<Filter>) -> Self {
        Origination {
            action: "get".into(),
            payload: 0.0,
            style: Style::RequestResponse,
            filter,
        }
    }
}

enum Event {
    Deliver(Box<Transmission>),
    Tick(NodeAddr),
    Originate(NodeAddr, Origination),
}

pub struct Simulator {
    config: SimConfig,
    nodes: Vec<NodeState>,
    registry: Registry,
    queue: EventQueue<Event>,
    now: SimTime,
    rng: ChaCha8Rng,
    busy_until: Vec<SimTime>,
    tracker: Tracker,
    log: Option<Vec<TxRecord>>,
    producer: NodeAddr,
    horizon: SimTime,
    total: u64,
    producer_sent: u64,
    delivered: u64,
    dropped: u64,
    in_flight: u64,
    next_event_seq: u64,
}

impl Simulator {
    pub fn new(config: SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        let n = config.n;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let addrs: Vec<NodeAddr> = (0..n as u32).map(NodeAddr).collect();

        let mut registry = Registry::new();
        for &a in &addrs {
            registry.announce(PeerEntry::new(a, SERVICE_TYPE), config.gossip.scope.clone());
        }
        let snapshot = registry.snapshot(&config.gossip.scope);

        let producer = match config.protocol {
            Protocol::Eventing => NodeAddr(0),
            Protocol::Gossip => NodeAddr(rng.gen_range(0..n as u32)),
        };

        let mut nodes = Vec::with_capacity(n);
        for &a in &addrs {
            let owner = PeerEntry::new(a, SERVICE_TYPE);
            let node = match (config.protocol, config.membership) {
                (Protocol::Eventing, _) => NodeState::new(
                    GossipConfig::default(),
                    PeerView::new(owner, 1, config.interval * 10),
                )?,
                (Protocol::Gossip, MembershipMode::Registry) => {
                    let view = PeerView::new(owner, n, config.interval * 10)
                        .with_entries(snapshot.iter().filter(|e| e.address != a).cloned());
                    NodeState::new(config.gossip.clone(), view)?
                }
                (
                    Protocol::Gossip,
                    MembershipMode::Newscast {
                        capacity,
                        exchange_timeframe,
                        bootstrap,
                    },
                ) => {
                    let peers = rand::seq::index::sample(&mut rng, n - 1, bootstrap.min(n - 1))
                        .into_iter()
                        .map(|i| addrs[(a.index() + 1 + i) % n])
                        .map(|p| PeerEntry::new(p, SERVICE_TYPE))
                        .collect::<Vec<_>>();
                    let view = PeerView::new(owner, capacity, exchange_timeframe).with_entries(peers);
                    NodeState::new(config.gossip.clone(), view)?.with_shuffle()
                }
            };
            nodes.push(node);
        }

        let mut sim = Simulator {
            busy_until: vec![SimTime::ZERO; n],
            nodes,
            registry,
            queue: EventQueue::new(),
            now: SimTime::ZERO,
            rng,
            tracker: Tracker::default(),
            log: None,
            producer,
            horizon: SimTime::ZERO,
            total: 0,
            producer_sent: 0,
            delivered: 0,
            dropped: 0,
            in_flight: 0,
            next_event_seq: 0,
            config,
        };

        if sim.config.protocol == Protocol::Gossip {
            let period = sim.config.tick_period;
            let pull_period = sim.config.gossip.pull_period;
            let pull = sim.config.gossip.variant.is_pull();
            for i in 0..n {
                let phase = if pull { pull_period } else { period };
                let offset = Duration::from_nanos(sim.rng.gen_range(1..=phase.as_nanos() as u64));
                let first = SimTime::ZERO + offset;
                if pull {
                    sim.nodes[i].schedule_first_pull(first);
                }
                sim.queue.push(first, Event::Tick(NodeAddr(i as u32)));
            }
        }
        Ok(sim)
    }

    /// Records every transmission for [`Simulator::tx_log`].
    pub fn with_tx_log(mut self) -> Self {
        self.log = Some(Vec::new());
        self
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn producer(&self) -> NodeAddr {
        self.producer
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    pub fn node(&self, addr: NodeAddr) -> &NodeState {
        &self.nodes[addr.index()]
    }

    pub fn node_mut(&mut self, addr: NodeAddr) -> &mut NodeState {
        &mut self.nodes[addr.index()]
    }

    pub fn tx_log(&self) -> Option<&[TxRecord]> {
        self.log.as_deref()
    }

    pub fn messages(&self) -> &[MessageMetrics] {
        self.tracker.messages()
    }

    /// Keep nodes ticking at least until `t`.
    pub fn extend_horizon(&mut self, t: SimTime) {
        self.horizon = self.horizon.max(t);
    }

    pub fn schedule(&mut self, at: SimTime, node: NodeAddr, what: Origination) {
        self.extend_horizon(at + self.config.drain);
        self.queue.push(at, Event::Originate(node, what));
    }

    /// Schedules the periodic event stream from the producer.
    pub fn schedule_events(&mut self) {
        for k in 0..self.config.events {
            let at = SimTime::ZERO + self.config.start + self.config.interval * k as u32;
            let value = 20.0 + (k % 40) as f64 * 0.25;
            self.schedule(at, self.producer, Origination::set(value));
        }
    }

    /// Processes every event with a timestamp up to and including `until`.
    pub fn run_until(&mut self, until: SimTime) -> Result<(), SimError> {
        while let Some(t) = self.queue.peek_time() {
            if t > until {
                break;
            }
            self.step()?;
        }
        self.now = self.now.max(until);
        Ok(())
    }

    pub fn run_to_completion(&mut self) -> Result<(), SimError> {
        while !self.queue.is_empty() {
            self.step()?;
        }
        Ok(())
    }

    fn step(&mut self) -> Result<(), SimError> {
        let Some((at, event)) = self.queue.pop() else {
            return Ok(());
        };
        debug_assert!(at >= self.now, "event queue went back in time");
        self.now = at;
        match event {
            Event::Deliver(t) => {
                self.in_flight -= 1;
                self.delivered += 1;
                let to = t.to;
                let sends = self.nodes[to.index()].handle(t.message, t.from, at, &mut self.rng);
                self.collect_deliveries(to);
                self.transmit(to, sends);
            }
            Event::Tick(addr) => {
                let sends = self.nodes[addr.index()].tick(at, &mut self.rng);
                self.transmit(addr, sends);
                let next = match self.nodes[addr.index()].next_pull() {
                    Some(pull) if self.config.gossip.variant.is_pull() => pull,
                    _ => at + self.config.tick_period,
                };
                if next <= self.horizon {
                    self.queue.push(next, Event::Tick(addr));
                }
            }
            Event::Originate(addr, what) => self.originate(addr, what)?,
        }
        Ok(())
    }

    fn originate(&mut self, addr: NodeAddr, what: Origination) -> Result<(), SimError> {
        let payload = Payload::new(what.payload).map_err(EngineError::from)?;
        let n = self.config.n;
        match self.config.protocol {
            Protocol::Gossip => {
                let sends = self.nodes[addr.index()].initiate(
                    &what.action,
                    payload,
                    what.style,
                    what.filter,
                    self.now,
                    &mut self.rng,
                )?;
                let origin_delivery = self.nodes[addr.index()]
                    .take_deliveries()
                    .into_iter()
                    .find(|d| d.from.is_none())
                    .expect("initiate delivers locally");
                self.tracker
                    .originated(origin_delivery.envelope.id().clone(), addr, self.now, n);
                self.transmit(addr, sends);
            }
            Protocol::Eventing => {
                let id = MessageId::new(format!("n{}-e{}", addr, self.next_event_seq))
                    .map_err(EngineError::from)?;
                self.next_event_seq += 1;
                let reply_to = (what.style == Style::RequestResponse).then_some(addr);
                let envelope = Envelope::new(id.clone(), what.action, what.style, reply_to, payload, None)
                    .map_err(EngineError::from)?;
                self.tracker.originated(id, addr, self.now, n);
                let subscribers: Vec<NodeAddr> =
                    (0..n as u32).map(NodeAddr).filter(|&a| a != addr).collect();
                let start = self.now.max(self.busy_until[addr.index()]);
                let txs = eventing_publish(addr, &subscribers, &envelope, start, &self.config.latency);
                if let Some(last) = txs.last() {
                    self.busy_until[addr.index()] = last.send_time;
                }
                for t in txs {
                    self.enqueue(t);
                }
            }
        }
        Ok(())
    }

    fn collect_deliveries(&mut self, addr: NodeAddr) {
        for d in self.nodes[addr.index()].take_deliveries() {
            if d.from.is_some() {
                self.tracker
                    .delivered(d.envelope.id(), addr, d.at, d.envelope.hop_depth());
            }
        }
    }

    fn transmit(&mut self, from: NodeAddr, sends: Vec<Send>) {
        let latency = self.config.latency;
        let loss = self.config.effective_loss();
        for Send { to, message } in sends {
            let start = self.now.max(self.busy_until[from.index()]);
            let send_time = start + latency.per_send_cost;
            self.busy_until[from.index()] = send_time;
            let mut deliver_time = send_time + latency.network_delay;
            if !latency.jitter.is_zero() {
                let extra = self.rng.gen_range(0..=latency.jitter.as_nanos() as u64);
                deliver_time = deliver_time + Duration::from_nanos(extra);
            }
            let t = Transmission {
                from,
                to,
                message,
                send_time,
                deliver_time,
                dropped: false,
            };
            let t = inject_loss(t, loss, &mut self.rng);
            self.enqueue(t);
        }
    }

    fn enqueue(&mut self, t: Transmission) {
        self.total += 1;
        if t.from == self.producer {
            self.producer_sent += 1;
        }
        if let Some(log) = &mut self.log {
            log.push(TxRecord::from(&t));
        }
        if t.dropped {
            self.dropped += 1;
        } else {
            self.in_flight += 1;
            self.queue.push(t.deliver_time, Event::Deliver(Box::new(t)));
        }
    }

    pub fn counters(&self) -> NodeCounters {
        self.nodes.iter().fold(NodeCounters::default(), |mut acc, n| {
            let c = n.counters();
            acc.scope_mismatch += c.scope_mismatch;
            acc.duplicates += c.duplicates;
            acc.unknown_replies += c.unknown_replies;
            acc.late_replies += c.late_replies;
            acc.unsupported_filter += c.unsupported_filter;
            acc.missing_header += c.missing_header;
            acc
        })
    }

    /// Metrics for everything originated so far; consumers are all nodes
    /// except the producer.
    pub fn metrics(&self) -> RunMetrics {
        self.build_metrics(self.tracker.messages().to_vec())
    }

    pub fn into_metrics(mut self) -> RunMetrics {
        let messages = std::mem::take(&mut self.tracker).into_messages();
        self.build_metrics(messages)
    }

    fn build_metrics(&self, messages: Vec<MessageMetrics>) -> RunMetrics {
        metrics::summarize(
            self.producer,
            self.config.n - 1,
            messages,
            self.config.warmup_discard,
            self.config.cooldown_discard,
            Totals {
                total: self.total,
                producer: self.producer_sent,
                delivered: self.delivered,
                dropped: self.dropped,
                in_flight: self.in_flight,
            },
            self.counters(),
        )
    }
}

/// Runs the periodic-event experiment described by `config`.
pub fn run(config: &SimConfig) -> Result<RunMetrics, SimError> {
    let mut sim = Simulator::new(config.clone())?;
    sim.schedule_events();
    sim.run_to_completion()?;
    Ok(sim.into_metrics())
}

/// Like [`run`], also returning the transmission log.
pub fn run_logged(config: &SimConfig) -> Result<(RunMetrics, Vec<TxRecord>), SimError> {
    let mut sim = Simulator::new(config.clone())?.with_tx_log();
    sim.schedule_events();
    sim.run_to_completion()?;
    let log = sim.log.take().unwrap_or_default();
    Ok((sim.into_metrics(), log))
}

#[cfg(test)]
mod tests;
