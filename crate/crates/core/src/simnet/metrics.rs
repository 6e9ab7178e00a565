use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::engine::NodeCounters;
use crate::envelope::{MessageId, NodeAddr};
use crate::time::SimTime;

/// First delivery of one message at one consumer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub node: NodeAddr,
    pub latency_ns: u64,
    pub hops: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageMetrics {
    pub id: MessageId,
    pub origin: NodeAddr,
    pub origin_time: SimTime,
    pub receipts: Vec<Receipt>,
}

/// Per-run measurements. Latency and hop aggregates skip the warm-up and
/// cool-down messages; delivery accounting covers every message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub producer: NodeAddr,
    pub consumers: usize,
    pub messages: Vec<MessageMetrics>,
    pub delivery_rate: f64,
    pub atomic_fraction: f64,
    pub mean_latency_ms: f64,
    pub p99_latency_ms: f64,
    pub mean_hops: f64,
    pub total_transmissions: u64,
    pub producer_transmissions: u64,
    pub delivered_transmissions: u64,
    pub dropped_transmissions: u64,
    pub in_flight_at_end: u64,
    pub counters: NodeCounters,
}

impl RunMetrics {
    pub fn delivered_pairs(&self) -> usize {
        self.messages.iter().map(|m| m.receipts.len()).sum()
    }
}

/// Records first deliveries while a run is in progress.
#[derive(Debug, Default)]
pub(crate) struct Tracker {
    index: HashMap<MessageId, usize>,
    messages: Vec<MessageMetrics>,
    seen: Vec<Vec<bool>>,
}

impl Tracker {
    pub(crate) fn originated(&mut self, id: MessageId, origin: NodeAddr, at: SimTime, n: usize) {
        self.index.insert(id.clone(), self.messages.len());
        self.messages.push(MessageMetrics {
            id,
            origin,
            origin_time: at,
            receipts: Vec::new(),
        });
        let mut seen = vec![false; n];
        seen[origin.index()] = true;
        self.seen.push(seen);
    }

    pub(crate) fn delivered(&mut self, id: &MessageId, node: NodeAddr, at: SimTime, hops: u32) {
        let Some(&i) = self.index.get(id) else {
            return;
        };
        if std::mem::replace(&mut self.seen[i][node.index()], true) {
            return;
        }
        let m = &mut self.messages[i];
        m.receipts.push(Receipt {
            node,
            latency_ns: at.since(m.origin_time).as_nanos() as u64,
            hops,
        });
    }

    pub(crate) fn messages(&self) -> &[MessageMetrics] {
        &self.messages
    }

    pub(crate) fn into_messages(self) -> Vec<MessageMetrics> {
        self.messages
    }
}

pub(crate) struct Totals {
    pub total: u64,
    pub producer: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub in_flight: u64,
}

pub(crate) fn summarize(
    producer: NodeAddr,
    consumers: usize,
    messages: Vec<MessageMetrics>,
    warmup: usize,
    cooldown: usize,
    totals: Totals,
    counters: NodeCounters,
) -> RunMetrics {
    let pairs = messages.len() * consumers;
    let delivered: usize = messages.iter().map(|m| m.receipts.len()).sum();
    let atomic = messages
        .iter()
        .filter(|m| m.receipts.len() == consumers)
        .count();

    let window_end = messages.len().saturating_sub(cooldown);
    let window = messages.get(warmup.min(window_end)..window_end).unwrap_or(&[]);
    let mut latencies: Vec<u64> = window
        .iter()
        .flat_map(|m| m.receipts.iter().map(|r| r.latency_ns))
        .collect();
    latencies.sort_unstable();
    let hops: Vec<u32> = window
        .iter()
        .flat_map(|m| m.receipts.iter().map(|r| r.hops))
        .collect();

    RunMetrics {
        producer,
        consumers,
        delivery_rate: ratio(delivered, pairs),
        atomic_fraction: ratio(atomic, messages.len()),
        mean_latency_ms: mean(latencies.iter().map(|&l| l as f64)) / 1e6,
        p99_latency_ms: percentile(&latencies, 0.99) as f64 / 1e6,
        mean_hops: mean(hops.iter().map(|&h| f64::from(h))),
        messages,
        total_transmissions: totals.total,
        producer_transmissions: totals.producer,
        delivered_transmissions: totals.delivered,
        dropped_transmissions: totals.dropped,
        in_flight_at_end: totals.in_flight,
        counters,
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Nearest-rank percentile of sorted values.
fn percentile(sorted: &[u64], q: f64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}
