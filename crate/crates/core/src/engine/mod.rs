//! Per-node gossip state machine.
//!
//! A [`NodeState`] plays the shadow gossip service attached to one hosted
//! service. It turns plain invocations into gossip (adding a header from its
//! defaults), relays received copies to random peers, answers the gossip
//! port operations (`Push`, `PushIds`, `Pull`, `PullIds`, `Fetch`) and routes
//! request-response replies back along the dissemination tree, optionally
//! folding them through a [`Filter`].
//!
//! Every operation is a pure step: it takes the current virtual time and a
//! random source and returns the messages to transmit as [`Send`] actions.
//! Nothing here touches a clock or a socket.

mod config;
mod filter;

use std::collections::BTreeMap;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::config::{DuplicatePolicy, GossipConfig, Variant};
pub use self::filter::{Filter, UnknownFilter};
use crate::envelope::{
    Envelope, EnvelopeError, Fault, GossipHeader, MessageId, NodeAddr, Payload, ReplyEnvelope,
    Style,
};
use crate::membership::{MembershipEvent, PeerEntry, PeerView};
use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("node {0} knows no peers to gossip to")]
    EmptyView(NodeAddr),
    #[error("envelope {0} carries no gossip header")]
    MissingHeader(MessageId),
    #[error(transparent)]
    UnknownFilter(#[from] UnknownFilter),
    #[error("invalid gossip configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Envelope(#[from] EnvelopeError),
}

/// Everything that travels between nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Message {
    /// A single eager copy, sent through the hosted service's own port type.
    Gossip { envelope: Envelope },
    /// Several envelopes submitted at once; also the answer to `Fetch` and `Pull`.
    Push { envelopes: Vec<Envelope> },
    /// Advertises buffered messages by id.
    PushIds { ids: Vec<MessageId> },
    /// Asks for buffered messages received within `interval`.
    Pull { interval: Duration },
    PullIds,
    PullIdsReply { ids: Vec<MessageId> },
    Fetch { ids: Vec<MessageId> },
    Reply { reply: ReplyEnvelope },
    Exchange { entries: Vec<PeerEntry> },
    ExchangeReply { entries: Vec<PeerEntry> },
    /// Plain notification from an eventing publisher; not gossiped further.
    Notify { envelope: Envelope },
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Gossip { .. } => "gossip",
            Message::Push { .. } => "push",
            Message::PushIds { .. } => "push-ids",
            Message::Pull { .. } => "pull",
            Message::PullIds => "pull-ids",
            Message::PullIdsReply { .. } => "pull-ids-reply",
            Message::Fetch { .. } => "fetch",
            Message::Reply { .. } => "reply",
            Message::Exchange { .. } => "exchange",
            Message::ExchangeReply { .. } => "exchange-reply",
            Message::Notify { .. } => "notify",
        }
    }

    /// Envelopes whose payload travels inside this message.
    pub fn envelopes(&self) -> &[Envelope] {
        match self {
            Message::Gossip { envelope } | Message::Notify { envelope } => {
                std::slice::from_ref(envelope)
            }
            Message::Push { envelopes } => envelopes,
            _ => &[],
        }
    }
}

/// A transmission the caller must perform.
#[derive(Debug, Clone, PartialEq)]
pub struct Send {
    pub to: NodeAddr,
    pub message: Message,
}

impl Send {
    fn new(to: NodeAddr, message: Message) -> Self {
        Send { to, message }
    }
}

/// A local delivery to the hosted service.
#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub envelope: Envelope,
    /// `None` when the node originated the message itself.
    pub from: Option<NodeAddr>,
    pub at: SimTime,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DuplicateEntry {
    pub id: MessageId,
    pub expires_at: SimTime,
    /// Upstream node replies are routed to.
    pub initiator: Option<NodeAddr>,
    pub filter: Option<Filter>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PayloadEntry {
    pub envelope: Envelope,
    pub received_at: SimTime,
    pub expires_at: SimTime,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PendingAggregation {
    pub request_id: MessageId,
    pub upstream: NodeAddr,
    pub filter: Filter,
    pub expected: usize,
    pub received: Vec<ReplyEnvelope>,
    /// This node's own answer, already lifted into the filter's domain.
    pub local: f64,
    pub deadline: SimTime,
}

impl PendingAggregation {
    fn result(&self) -> f64 {
        self.received
            .iter()
            .filter(|r| r.fault.is_none())
            .fold(self.local, |acc, r| self.filter.combine(acc, r.payload.value()))
    }
}

/// Drop and suppression counts, surfaced in run metrics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeCounters {
    pub scope_mismatch: u64,
    pub duplicates: u64,
    pub unknown_replies: u64,
    pub late_replies: u64,
    pub unsupported_filter: u64,
    pub missing_header: u64,
}

/// The hosted test service: a single float variable that one-way invocations
/// overwrite and request-response invocations read.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FloatService {
    pub value: f64,
}

impl FloatService {
    fn invoke(&mut self, envelope: &Envelope) -> Option<f64> {
        match envelope.style() {
            Style::OneWay => {
                self.value = envelope.payload().value();
                None
            }
            Style::RequestResponse => Some(self.value),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NodeState {
    address: NodeAddr,
    config: GossipConfig,
    pub service: FloatService,
    view: PeerView,
    dedup: BTreeMap<MessageId, DuplicateEntry>,
    store: BTreeMap<MessageId, PayloadEntry>,
    /// Ids with an outstanding `Fetch`, mapped to when the request lapses.
    requested: BTreeMap<MessageId, SimTime>,
    pending: BTreeMap<MessageId, PendingAggregation>,
    delivered: Vec<Delivery>,
    /// Replies addressed to this node as a client.
    inbox: Vec<ReplyEnvelope>,
    counters: NodeCounters,
    next_seq: u64,
    next_pull: Option<SimTime>,
    shuffle: bool,
}

impl NodeState {
    pub fn new(config: GossipConfig, view: PeerView) -> Result<Self, EngineError> {
        config.validate()?;
        Ok(NodeState {
            address: view.owner().address,
            config,
            service: FloatService { value: 0.0 },
            view,
            dedup: BTreeMap::new(),
            store: BTreeMap::new(),
            requested: BTreeMap::new(),
            pending: BTreeMap::new(),
            delivered: Vec::new(),
            inbox: Vec::new(),
            counters: NodeCounters::default(),
            next_seq: 0,
            next_pull: None,
            shuffle: false,
        })
    }

    /// Enables periodic membership exchanges on `tick`.
    pub fn with_shuffle(mut self) -> Self {
        self.shuffle = true;
        self
    }

    /// First pull round happens at `at` (pull variants only).
    pub fn with_first_pull(mut self, at: SimTime) -> Self {
        self.schedule_first_pull(at);
        self
    }

    pub fn schedule_first_pull(&mut self, at: SimTime) {
        self.next_pull = Some(at);
    }

    pub fn address(&self) -> NodeAddr {
        self.address
    }

    pub fn config(&self) -> &GossipConfig {
        &self.config
    }

    pub fn view(&self) -> &PeerView {
        &self.view
    }

    pub fn view_mut(&mut self) -> &mut PeerView {
        &mut self.view
    }

    pub fn counters(&self) -> NodeCounters {
        self.counters
    }

    pub fn deliveries(&self) -> &[Delivery] {
        &self.delivered
    }

    pub fn take_deliveries(&mut self) -> Vec<Delivery> {
        std::mem::take(&mut self.delivered)
    }

    pub fn inbox(&self) -> &[ReplyEnvelope] {
        &self.inbox
    }

    pub fn pending(&self, id: &MessageId) -> Option<&PendingAggregation> {
        self.pending.get(id)
    }

    pub fn dedup_entry(&self, id: &MessageId, now: SimTime) -> Option<&DuplicateEntry> {
        self.dedup.get(id).filter(|e| e.expires_at > now)
    }

    pub fn stored(&self, id: &MessageId, now: SimTime) -> Option<&PayloadEntry> {
        self.store.get(id).filter(|e| e.expires_at > now)
    }

    pub fn default_header(&self, filter: Option<Filter>) -> Result<GossipHeader, EngineError> {
        Ok(GossipHeader::new(
            self.config.scope.clone(),
            self.config.fanout,
            self.config.initial_hops,
            self.config.id_ttl,
            self.config.data_ttl,
            filter.map(|f| f.name().to_owned()),
        )?)
    }

    /// Originates a new message on behalf of a local client.
    pub fn initiate<R: Rng + ?Sized>(
        &mut self,
        action: &str,
        payload: Payload,
        style: Style,
        filter: Option<Filter>,
        now: SimTime,
        rng: &mut R,
    ) -> Result<Vec<Send>, EngineError> {
        let id = MessageId::new(format!("n{}-{}", self.address, self.next_seq))?;
        self.next_seq += 1;
        let reply_to = (style == Style::RequestResponse).then_some(self.address);
        let envelope = Envelope::new(id, action, style, reply_to, payload, None)?;
        self.initiate_envelope(envelope.with_header(self.default_header(filter)?), now, rng)
    }

    /// Starts gossiping an invocation received from a client. Envelopes
    /// without a header get this node's defaults; a gossip-aware client may
    /// supply its own header to pick custom parameters.
    pub fn initiate_envelope<R: Rng + ?Sized>(
        &mut self,
        envelope: Envelope,
        now: SimTime,
        rng: &mut R,
    ) -> Result<Vec<Send>, EngineError> {
        if self.view.is_empty() {
            return Err(EngineError::EmptyView(self.address));
        }
        let envelope = match envelope.header() {
            Some(_) => envelope,
            None => envelope.with_header(self.default_header(None)?),
        };
        let header = envelope.header().expect("header attached above").clone();
        let filter = header.filter().map(str::parse::<Filter>).transpose()?;
        let upstream = envelope.reply_to();

        let local = self.deliver(&envelope, None, now);
        self.remember(&envelope, upstream, filter, now);

        let targets = self
            .view
            .sample(header.fanout() as usize, &[self.address], rng);
        let mut sends = Vec::with_capacity(targets.len());
        for &to in &targets {
            sends.push(Send::new(to, self.outgoing(&envelope)));
        }
        if let (Some(local), Some(upstream)) = (local, upstream) {
            self.answer(&envelope, filter, local, upstream, targets.len(), &header, now, &mut sends);
        }
        Ok(sends)
    }

    /// Continues a gossip interaction for a received copy.
    pub fn handle_receive<R: Rng + ?Sized>(
        &mut self,
        envelope: Envelope,
        from: NodeAddr,
        now: SimTime,
        rng: &mut R,
    ) -> Result<Vec<Send>, EngineError> {
        let Some(header) = envelope.header().cloned() else {
            return Err(EngineError::MissingHeader(envelope.id().clone()));
        };
        if header.scope() != self.config.scope {
            self.counters.scope_mismatch += 1;
            return Ok(Vec::new());
        }
        let filter = match header.filter().map(str::parse::<Filter>).transpose() {
            Ok(f) => f,
            Err(_) => {
                self.counters.unsupported_filter += 1;
                return Ok(Vec::new());
            }
        };
        if !header.is_balls_and_bins() && self.dedup_entry(envelope.id(), now).is_some() {
            self.counters.duplicates += 1;
            let mut sends = Vec::new();
            if envelope.style() == Style::RequestResponse && filter.is_some() {
                // The sender counts on one answer per target.
                sends.push(Send::new(
                    from,
                    Message::Reply {
                        reply: ReplyEnvelope::fault(envelope.id().clone(), Fault::Duplicate),
                    },
                ));
            }
            return Ok(sends);
        }
        self.requested.remove(envelope.id());

        let local = self.deliver(&envelope, Some(from), now);
        self.remember(&envelope, Some(from), filter, now);

        let mut sends = Vec::new();
        let mut fanned_out = 0;
        if self.config.variant.is_push() && header.decremented().is_some() {
            let targets = self
                .view
                .sample(header.fanout() as usize, &[self.address, from], rng);
            let relayed = envelope.relayed().expect("hops checked above");
            fanned_out = targets.len();
            for to in targets {
                sends.push(Send::new(to, self.outgoing(&relayed)));
            }
        }
        if let Some(local) = local {
            self.answer(&envelope, filter, local, from, fanned_out, &header, now, &mut sends);
        }
        Ok(sends)
    }

    /// `handle_receive` applied to each envelope in order.
    pub fn push<R: Rng + ?Sized>(
        &mut self,
        envelopes: Vec<Envelope>,
        from: NodeAddr,
        now: SimTime,
        rng: &mut R,
    ) -> Result<Vec<Send>, EngineError> {
        let mut sends = Vec::new();
        for envelope in envelopes {
            sends.extend(self.handle_receive(envelope, from, now, rng)?);
        }
        Ok(sends)
    }

    /// Returns the advertised ids this node has neither seen nor already
    /// asked for, and marks them as requested.
    pub fn push_ids(&mut self, ids: &[MessageId], _from: NodeAddr, now: SimTime) -> Vec<MessageId> {
        let mut wanted = Vec::new();
        for id in ids {
            let known = self.dedup_entry(id, now).is_some()
                || self.stored(id, now).is_some()
                || self.requested.get(id).is_some_and(|&until| until > now);
            if !known && !wanted.contains(id) {
                self.requested.insert(id.clone(), now + self.config.fetch_timeout);
                wanted.push(id.clone());
            }
        }
        wanted
    }

    /// Buffered envelopes received within `interval` of `now`.
    pub fn pull(&self, interval: Duration, now: SimTime) -> Vec<Envelope> {
        let since = now - interval;
        self.store
            .values()
            .filter(|e| e.expires_at > now && e.received_at >= since)
            .map(|e| e.envelope.clone())
            .collect()
    }

    pub fn pull_ids(&self, now: SimTime) -> Vec<MessageId> {
        self.store
            .iter()
            .filter(|(_, e)| e.expires_at > now)
            .map(|(id, _)| id.clone())
            .collect()
    }

    /// Buffered envelopes for the requested ids; unknown or expired ids are
    /// simply absent from the result.
    pub fn fetch(&self, ids: &[MessageId], now: SimTime) -> Vec<Envelope> {
        ids.iter()
            .filter_map(|id| self.stored(id, now))
            .map(|e| e.envelope.clone())
            .collect()
    }

    /// Routes a reply towards the initiator, aggregating it first when the
    /// request carried a filter.
    pub fn handle_reply(&mut self, reply: ReplyEnvelope, now: SimTime) -> Option<Send> {
        let id = reply.in_reply_to.clone();
        if let Some(pending) = self.pending.get_mut(&id) {
            pending.received.push(reply);
            if pending.received.len() >= pending.expected {
                return self.resolve(&id);
            }
            return None;
        }
        let Some(entry) = self.dedup_entry(&id, now) else {
            self.counters.unknown_replies += 1;
            return None;
        };
        if entry.filter.is_some() {
            // The aggregate for this request already went upstream.
            self.counters.late_replies += 1;
            return None;
        }
        let upstream = entry.initiator?;
        self.route_reply(upstream, reply)
    }

    /// Periodic housekeeping: drops expired buffers, resolves overdue
    /// aggregations, and issues pull rounds and membership exchanges.
    pub fn tick<R: Rng + ?Sized>(&mut self, now: SimTime, rng: &mut R) -> Vec<Send> {
        self.dedup.retain(|_, e| e.expires_at > now);
        self.store.retain(|_, e| e.expires_at > now);
        self.requested.retain(|_, &mut until| until > now);

        let overdue: Vec<MessageId> = self
            .pending
            .values()
            .filter(|p| p.deadline <= now)
            .map(|p| p.request_id.clone())
            .collect();
        let mut sends: Vec<Send> = overdue.iter().filter_map(|id| self.resolve(id)).collect();

        if self.config.variant.is_pull() {
            let due = *self.next_pull.get_or_insert(now);
            if due <= now {
                let mut next = due;
                while next <= now {
                    next = next + self.config.pull_period;
                }
                self.next_pull = Some(next);
                let request = match self.config.variant {
                    Variant::EagerPull => Message::Pull {
                        interval: self.config.pull_window,
                    },
                    _ => Message::PullIds,
                };
                for to in self
                    .view
                    .sample(self.config.fanout as usize, &[self.address], rng)
                {
                    sends.push(Send::new(to, request.clone()));
                }
            }
        }

        if self.shuffle {
            if let Some((to, entries)) = self.view.exchange_request(now, rng) {
                sends.push(Send::new(to, Message::Exchange { entries }));
            }
        }
        sends
    }

    /// Next time `tick` has scheduled work for, if any.
    pub fn next_pull(&self) -> Option<SimTime> {
        self.next_pull
    }

    /// Dispatches any received message to the matching operation.
    pub fn handle<R: Rng + ?Sized>(
        &mut self,
        message: Message,
        from: NodeAddr,
        now: SimTime,
        rng: &mut R,
    ) -> Vec<Send> {
        self.view.observe(MembershipEvent::MessageFrom(from));
        match message {
            Message::Gossip { envelope } => self.receive_or_count(vec![envelope], from, now, rng),
            Message::Push { envelopes } => self.receive_or_count(envelopes, from, now, rng),
            Message::PushIds { ids } | Message::PullIdsReply { ids } => {
                let wanted = self.push_ids(&ids, from, now);
                if wanted.is_empty() {
                    Vec::new()
                } else {
                    vec![Send::new(from, Message::Fetch { ids: wanted })]
                }
            }
            Message::Fetch { ids } => {
                let envelopes = self.fetch(&ids, now);
                self.serve(envelopes, from)
            }
            Message::Pull { interval } => {
                let envelopes = self.pull(interval, now);
                self.serve(envelopes, from)
            }
            Message::PullIds => {
                let ids: Vec<MessageId> = self
                    .store
                    .iter()
                    .filter(|(_, e)| e.expires_at > now && e.envelope.relayed().is_some())
                    .map(|(id, _)| id.clone())
                    .collect();
                if ids.is_empty() {
                    Vec::new()
                } else {
                    vec![Send::new(from, Message::PullIdsReply { ids })]
                }
            }
            Message::Reply { reply } => self.handle_reply(reply, now).into_iter().collect(),
            Message::Exchange { entries } => {
                let reply = self.view.handle_exchange(entries, now);
                vec![Send::new(from, Message::ExchangeReply { entries: reply })]
            }
            Message::ExchangeReply { entries } => {
                self.view.merge(entries);
                Vec::new()
            }
            Message::Notify { envelope } => {
                self.deliver(&envelope, Some(from), now);
                Vec::new()
            }
        }
    }

    fn receive_or_count<R: Rng + ?Sized>(
        &mut self,
        envelopes: Vec<Envelope>,
        from: NodeAddr,
        now: SimTime,
        rng: &mut R,
    ) -> Vec<Send> {
        let mut sends = Vec::new();
        for envelope in envelopes {
            match self.handle_receive(envelope, from, now, rng) {
                Ok(s) => sends.extend(s),
                Err(_) => self.counters.missing_header += 1,
            }
        }
        sends
    }

    /// Serving buffered payloads to another node is a relay: the copies
    /// lose one hop, and exhausted ones are not sent.
    fn serve(&self, envelopes: Vec<Envelope>, to: NodeAddr) -> Vec<Send> {
        let envelopes: Vec<Envelope> = envelopes.iter().filter_map(Envelope::relayed).collect();
        if envelopes.is_empty() {
            Vec::new()
        } else {
            vec![Send::new(to, Message::Push { envelopes })]
        }
    }

    /// Eager copy or id advertisement, depending on variant and remaining hops.
    fn outgoing(&self, copy: &Envelope) -> Message {
        let header = copy.header().expect("outgoing copies carry a header");
        let lazy = self.config.variant.is_lazy()
            && !header.is_always_eager()
            && header.hops() <= self.config.eager_threshold();
        if lazy {
            Message::PushIds {
                ids: vec![copy.id().clone()],
            }
        } else {
            Message::Gossip {
                envelope: copy.clone(),
            }
        }
    }

    fn deliver(&mut self, envelope: &Envelope, from: Option<NodeAddr>, now: SimTime) -> Option<f64> {
        self.delivered.push(Delivery {
            envelope: envelope.clone(),
            from,
            at: now,
        });
        self.service.invoke(envelope)
    }

    fn remember(
        &mut self,
        envelope: &Envelope,
        initiator: Option<NodeAddr>,
        filter: Option<Filter>,
        now: SimTime,
    ) {
        let header = envelope.header().expect("remembered envelopes carry a header");
        if !header.is_balls_and_bins() {
            self.dedup.insert(
                envelope.id().clone(),
                DuplicateEntry {
                    id: envelope.id().clone(),
                    expires_at: now + header.id_ttl(),
                    initiator,
                    filter,
                },
            );
        }
        if !header.is_always_eager() {
            self.store.insert(
                envelope.id().clone(),
                PayloadEntry {
                    envelope: envelope.clone(),
                    received_at: now,
                    expires_at: now + header.data_ttl(),
                },
            );
        }
    }

    /// Produces (or schedules) this node's reply to a request.
    #[allow(clippy::too_many_arguments)]
    fn answer(
        &mut self,
        envelope: &Envelope,
        filter: Option<Filter>,
        local: f64,
        upstream: NodeAddr,
        downstream: usize,
        header: &GossipHeader,
        now: SimTime,
        sends: &mut Vec<Send>,
    ) {
        let id = envelope.id().clone();
        let Some(filter) = filter else {
            let reply = ReplyEnvelope::value(id, payload(local));
            sends.extend(self.route_reply(upstream, reply));
            return;
        };
        let pending = PendingAggregation {
            request_id: id.clone(),
            upstream,
            filter,
            expected: downstream,
            received: Vec::new(),
            local: filter.lift(local),
            // Nodes further up wait longer, so a subtree that times out still
            // reports before its parent gives up on it.
            deadline: now + self.config.aggregation_timeout * header.hops().max(1),
        };
        self.pending.insert(id.clone(), pending);
        if downstream == 0 {
            sends.extend(self.resolve(&id));
        }
    }

    fn resolve(&mut self, id: &MessageId) -> Option<Send> {
        let pending = self.pending.remove(id)?;
        let reply = ReplyEnvelope::value(pending.request_id.clone(), payload(pending.result()));
        self.route_reply(pending.upstream, reply)
    }

    fn route_reply(&mut self, upstream: NodeAddr, reply: ReplyEnvelope) -> Option<Send> {
        if upstream == self.address {
            self.inbox.push(reply);
            None
        } else {
            Some(Send::new(upstream, Message::Reply { reply }))
        }
    }
}

fn payload(value: f64) -> Payload {
    // Service values and filter folds of them are never NaN.
    Payload::new(value).expect("aggregate of non-NaN values")
}
