//! The gossiped unit: an envelope carrying an operation invocation plus an
//! optional gossip header that tells each node how to keep relaying it.
//!
//! Envelopes have a canonical byte form used for logs and golden tests. Every
//! field is written as a 4-byte big-endian length followed by that many bytes
//! of UTF-8, in this fixed order:
//!
//! ```text
//! id, action, style, reply_to, payload, scope, fanout, hops,
//! id_ttl, data_ttl, filter, origin_hops
//! ```
//!
//! Absent optional values are written as zero-length fields. An envelope
//! without a gossip header has all six header fields (scope through filter)
//! empty; a header always has a non-empty scope, so the two cases never
//! collide. Numbers are written in decimal, durations in whole milliseconds,
//! and the payload float in Rust's shortest round-trip notation.

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_ID_LEN: usize = 128;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnvelopeError {
    #[error("malformed envelope at field `{field}`: {reason}")]
    Malformed { field: &'static str, reason: String },
    #[error("invalid {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
}

impl EnvelopeError {
    fn malformed(field: &'static str, reason: impl Into<String>) -> Self {
        EnvelopeError::Malformed {
            field,
            reason: reason.into(),
        }
    }

    fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        EnvelopeError::Invalid {
            field,
            reason: reason.into(),
        }
    }
}

/// Address of a node in the simulated network.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct NodeAddr(pub u32);

impl NodeAddr {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Unique identifier of an originated message.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct MessageId(String);

impl MessageId {
    pub fn new(value: impl Into<String>) -> Result<Self, EnvelopeError> {
        let value = value.into();
        let len = value.chars().count();
        if len == 0 || len > MAX_ID_LEN {
            return Err(EnvelopeError::invalid(
                "id",
                format!("length {len} outside 1..={MAX_ID_LEN}"),
            ));
        }
        Ok(MessageId(value))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for MessageId {
    type Error = EnvelopeError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        MessageId::new(value)
    }
}

impl From<MessageId> for String {
    fn from(id: MessageId) -> String {
        id.0
    }
}

impl fmt::Display for MessageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A float payload. NaN is rejected so that equality can be bitwise, which
/// keeps the encoding canonical (`-0.0` and `0.0` are distinct values).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Payload(f64);

impl Payload {
    pub fn new(value: f64) -> Result<Self, EnvelopeError> {
        if value.is_nan() {
            return Err(EnvelopeError::invalid("payload", "NaN is not a valid payload"));
        }
        Ok(Payload(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl PartialEq for Payload {
    fn eq(&self, other: &Self) -> bool {
        self.0.to_bits() == other.0.to_bits()
    }
}

impl Eq for Payload {}

impl TryFrom<f64> for Payload {
    type Error = EnvelopeError;

    fn try_from(value: f64) -> Result<Self, Self::Error> {
        Payload::new(value)
    }
}

impl From<Payload> for f64 {
    fn from(p: Payload) -> f64 {
        p.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Style {
    OneWay,
    RequestResponse,
}

impl Style {
    pub fn as_str(self) -> &'static str {
        match self {
            Style::OneWay => "one-way",
            Style::RequestResponse => "request-response",
        }
    }
}

impl FromStr for Style {
    type Err = EnvelopeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "one-way" => Ok(Style::OneWay),
            "request-response" => Ok(Style::RequestResponse),
            other => Err(EnvelopeError::invalid("style", format!("unknown style {other:?}"))),
        }
    }
}

/// Relay control block attached to every gossiped envelope.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GossipHeader {
    scope: String,
    fanout: u32,
    hops: u32,
    id_ttl_ms: u64,
    data_ttl_ms: u64,
    filter: Option<String>,
}

impl GossipHeader {
    pub fn new(
        scope: impl Into<String>,
        fanout: u32,
        hops: u32,
        id_ttl: Duration,
        data_ttl: Duration,
        filter: Option<String>,
    ) -> Result<Self, EnvelopeError> {
        let scope = scope.into();
        if scope.is_empty() {
            return Err(EnvelopeError::invalid("scope", "scope label must not be empty"));
        }
        if fanout == 0 {
            return Err(EnvelopeError::invalid("fanout", "fanout must be at least 1"));
        }
        if matches!(filter.as_deref(), Some("")) {
            return Err(EnvelopeError::invalid("filter", "filter name must not be empty"));
        }
        Ok(GossipHeader {
            scope,
            fanout,
            hops,
            id_ttl_ms: millis(id_ttl),
            data_ttl_ms: millis(data_ttl),
            filter,
        })
    }

    pub fn scope(&self) -> &str {
        &self.scope
    }

    pub fn fanout(&self) -> u32 {
        self.fanout
    }

    pub fn hops(&self) -> u32 {
        self.hops
    }

    pub fn id_ttl(&self) -> Duration {
        Duration::from_millis(self.id_ttl_ms)
    }

    pub fn data_ttl(&self) -> Duration {
        Duration::from_millis(self.data_ttl_ms)
    }

    pub fn filter(&self) -> Option<&str> {
        self.filter.as_deref()
    }

    /// No identifier is buffered, so duplicates are relayed again.
    pub fn is_balls_and_bins(&self) -> bool {
        self.id_ttl_ms == 0
    }

    /// No payload is buffered, so only eager transmission is possible.
    pub fn is_always_eager(&self) -> bool {
        self.data_ttl_ms == 0
    }

    /// Header for the next hop, or `None` once no hops remain.
    pub fn decremented(&self) -> Option<GossipHeader> {
        (self.hops > 1).then(|| GossipHeader {
            hops: self.hops - 1,
            ..self.clone()
        })
    }
}

fn millis(d: Duration) -> u64 {
    u64::try_from(d.as_millis()).unwrap_or(u64::MAX)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Envelope {
    id: MessageId,
    action: String,
    style: Style,
    reply_to: Option<NodeAddr>,
    payload: Payload,
    header: Option<GossipHeader>,
    origin_hops: u32,
}

impl Envelope {
    pub fn new(
        id: MessageId,
        action: impl Into<String>,
        style: Style,
        reply_to: Option<NodeAddr>,
        payload: Payload,
        header: Option<GossipHeader>,
    ) -> Result<Self, EnvelopeError> {
        let action = action.into();
        if action.is_empty() {
            return Err(EnvelopeError::invalid("action", "action must not be empty"));
        }
        if style == Style::RequestResponse && reply_to.is_none() {
            return Err(EnvelopeError::invalid(
                "reply_to",
                "request-response envelopes need a reply address",
            ));
        }
        let origin_hops = header.as_ref().map_or(0, GossipHeader::hops);
        Ok(Envelope {
            id,
            action,
            style,
            reply_to,
            payload,
            header,
            origin_hops,
        })
    }

    pub fn id(&self) -> &MessageId {
        &self.id
    }

    pub fn action(&self) -> &str {
        &self.action
    }

    pub fn style(&self) -> Style {
        self.style
    }

    pub fn reply_to(&self) -> Option<NodeAddr> {
        self.reply_to
    }

    pub fn payload(&self) -> Payload {
        self.payload
    }

    pub fn header(&self) -> Option<&GossipHeader> {
        self.header.as_ref()
    }

    pub fn origin_hops(&self) -> u32 {
        self.origin_hops
    }

    /// Number of links this copy has travelled from the originator,
    /// counting the link that delivered it.
    pub fn hop_depth(&self) -> u32 {
        match &self.header {
            Some(h) => self.origin_hops.saturating_sub(h.hops) + 1,
            None => 1,
        }
    }

    /// Attach (or replace) the gossip header, resetting `origin_hops`.
    pub fn with_header(mut self, header: GossipHeader) -> Self {
        self.origin_hops = header.hops;
        self.header = Some(header);
        self
    }

    /// The copy a relaying node transmits: identical except for one fewer hop.
    /// `None` when the header is missing or exhausted.
    pub fn relayed(&self) -> Option<Envelope> {
        let header = self.header.as_ref()?.decremented()?;
        Some(Envelope {
            header: Some(header),
            ..self.clone()
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.id.0.len() + self.action.len());
        put(&mut out, self.id.as_str());
        put(&mut out, &self.action);
        put(&mut out, self.style.as_str());
        put(&mut out, &self.reply_to.map(|a| a.0.to_string()).unwrap_or_default());
        put(&mut out, &self.payload.0.to_string());
        match &self.header {
            Some(h) => {
                put(&mut out, &h.scope);
                put(&mut out, &h.fanout.to_string());
                put(&mut out, &h.hops.to_string());
                put(&mut out, &h.id_ttl_ms.to_string());
                put(&mut out, &h.data_ttl_ms.to_string());
                put(&mut out, h.filter.as_deref().unwrap_or(""));
            }
            None => {
                for _ in 0..6 {
                    put(&mut out, "");
                }
            }
        }
        put(&mut out, &self.origin_hops.to_string());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Envelope, EnvelopeError> {
        let mut r = Reader { bytes, pos: 0 };
        let id = MessageId::new(r.field("id")?).map_err(|e| as_malformed("id", e))?;
        let action = r.field("action")?;
        if action.is_empty() {
            return Err(EnvelopeError::malformed("action", "empty action"));
        }
        let style: Style = r.field("style")?.parse().map_err(|e| as_malformed("style", e))?;
        let reply_to = r
            .opt_field("reply_to")?
            .map(|s| parse_num("reply_to", &s).map(NodeAddr))
            .transpose()?;
        let payload_text = r.field("payload")?;
        let payload = payload_text
            .parse::<f64>()
            .map_err(|e| EnvelopeError::malformed("payload", e.to_string()))
            .and_then(|v| Payload::new(v).map_err(|e| as_malformed("payload", e)))?;
        if payload.0.to_string() != payload_text {
            return Err(EnvelopeError::malformed(
                "payload",
                format!("{payload_text:?} is not in canonical form"),
            ));
        }

        let scope = r.field("scope")?;
        let fanout = r.opt_field("fanout")?;
        let hops = r.opt_field("hops")?;
        let id_ttl = r.opt_field("id_ttl")?;
        let data_ttl = r.opt_field("data_ttl")?;
        let filter = r.opt_field("filter")?;
        let header = if scope.is_empty() {
            for (field, value) in [
                ("fanout", &fanout),
                ("hops", &hops),
                ("id_ttl", &id_ttl),
                ("data_ttl", &data_ttl),
                ("filter", &filter),
            ] {
                if value.is_some() {
                    return Err(EnvelopeError::malformed(field, "header field without a scope"));
                }
            }
            None
        } else {
            let fanout: u32 = parse_num("fanout", &required("fanout", fanout)?)?;
            if fanout == 0 {
                return Err(EnvelopeError::malformed("fanout", "fanout must be at least 1"));
            }
            Some(GossipHeader {
                scope,
                fanout,
                hops: parse_num("hops", &required("hops", hops)?)?,
                id_ttl_ms: parse_num("id_ttl", &required("id_ttl", id_ttl)?)?,
                data_ttl_ms: parse_num("data_ttl", &required("data_ttl", data_ttl)?)?,
                filter,
            })
        };
        let origin_hops = parse_num("origin_hops", &r.field("origin_hops")?)?;
        if r.pos != bytes.len() {
            return Err(EnvelopeError::malformed(
                "origin_hops",
                format!("{} trailing bytes", bytes.len() - r.pos),
            ));
        }
        if style == Style::RequestResponse && reply_to.is_none() {
            return Err(EnvelopeError::malformed(
                "reply_to",
                "request-response envelope without reply address",
            ));
        }
        Ok(Envelope {
            id,
            action,
            style,
            reply_to,
            payload,
            header,
            origin_hops,
        })
    }
}

fn put(out: &mut Vec<u8>, value: &str) {
    let len = u32::try_from(value.len()).expect("field longer than 4 GiB");
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(value.as_bytes());
}

fn as_malformed(field: &'static str, err: EnvelopeError) -> EnvelopeError {
    EnvelopeError::malformed(field, err.to_string())
}

fn required(field: &'static str, value: Option<String>) -> Result<String, EnvelopeError> {
    value.ok_or_else(|| EnvelopeError::malformed(field, "missing value in header"))
}

fn parse_num<T: FromStr>(field: &'static str, text: &str) -> Result<T, EnvelopeError>
where
    T::Err: fmt::Display,
{
    // `u64::from_str` accepts a leading '+', which would give two encodings
    // for one value.
    if !text.bytes().all(|b| b.is_ascii_digit()) || (text.len() > 1 && text.starts_with('0')) {
        return Err(EnvelopeError::malformed(
            field,
            format!("{text:?} is not a canonical non-negative integer"),
        ));
    }
    text.parse()
        .map_err(|e: T::Err| EnvelopeError::malformed(field, e.to_string()))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn field(&mut self, name: &'static str) -> Result<String, EnvelopeError> {
        let rest = &self.bytes[self.pos..];
        if rest.len() < 4 {
            return Err(EnvelopeError::malformed(name, "truncated length prefix"));
        }
        let len = u32::from_be_bytes([rest[0], rest[1], rest[2], rest[3]]) as usize;
        let body = rest
            .get(4..4 + len)
            .ok_or_else(|| EnvelopeError::malformed(name, format!("truncated: needs {len} bytes")))?;
        let text = std::str::from_utf8(body)
            .map_err(|e| EnvelopeError::malformed(name, e.to_string()))?
            .to_owned();
        self.pos += 4 + len;
        Ok(text)
    }

    fn opt_field(&mut self, name: &'static str) -> Result<Option<String>, EnvelopeError> {
        self.field(name).map(|s| (!s.is_empty()).then_some(s))
    }
}

/// Why a reply carries no usable value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    /// The target had already seen the request and is answering elsewhere.
    Duplicate,
    /// The target's hosted service could not answer the request.
    ServiceFailed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplyEnvelope {
    pub in_reply_to: MessageId,
    pub payload: Payload,
    pub fault: Option<Fault>,
}

impl ReplyEnvelope {
    pub fn value(in_reply_to: MessageId, payload: Payload) -> Self {
        ReplyEnvelope {
            in_reply_to,
            payload,
            fault: None,
        }
    }

    pub fn fault(in_reply_to: MessageId, fault: Fault) -> Self {
        ReplyEnvelope {
            in_reply_to,
            payload: Payload(0.0),
            fault: Some(fault),
        }
    }
}
