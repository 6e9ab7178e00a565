use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::Transmission;
use crate::engine::Message;
use crate::envelope::{MessageId, NodeAddr};

/// One line of the transmission log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxRecord {
    pub from: NodeAddr,
    pub to: NodeAddr,
    pub kind: String,
    /// Ids whose payload travels in this transmission.
    pub payload_ids: Vec<MessageId>,
    /// Remaining hops of each carried envelope, parallel to `payload_ids`.
    pub hops: Vec<u32>,
    /// Ids referenced without payload (advertisements, fetches, replies).
    pub ref_ids: Vec<MessageId>,
    pub send_ns: u64,
    pub deliver_ns: u64,
    pub dropped: bool,
}

impl From<&Transmission> for TxRecord {
    fn from(t: &Transmission) -> Self {
        let envelopes = t.message.envelopes();
        let ref_ids = match &t.message {
            Message::PushIds { ids } | Message::PullIdsReply { ids } | Message::Fetch { ids } => {
                ids.clone()
            }
            Message::Reply { reply } => vec![reply.in_reply_to.clone()],
            _ => Vec::new(),
        };
        TxRecord {
            from: t.from,
            to: t.to,
            kind: t.message.kind().to_owned(),
            payload_ids: envelopes.iter().map(|e| e.id().clone()).collect(),
            hops: envelopes
                .iter()
                .map(|e| e.header().map_or(0, |h| h.hops()))
                .collect(),
            ref_ids,
            send_ns: t.send_time.as_nanos(),
            deliver_ns: t.deliver_time.as_nanos(),
            dropped: t.dropped,
        }
    }
}

/// Writes one JSON object per line.
pub fn write_tx_log<W: Write>(mut out: W, records: &[TxRecord]) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}
