//! Gossip dissemination engine, peer membership and a deterministic
//! discrete-event network simulator with a sequential-unicast baseline.

pub mod engine;
pub mod envelope;
pub mod fanout;
pub mod membership;
pub mod simnet;
pub mod time;

pub use engine::{DuplicatePolicy, GossipConfig, NodeState, Variant};
pub use envelope::{Envelope, GossipHeader, MessageId, NodeAddr, Payload, Style};
pub use fanout::{compute_fanout, ReliabilityTarget};
pub use membership::{PeerEntry, PeerView};
pub use simnet::{run, run_logged, RunMetrics, SimConfig, SimError, Simulator};
pub use time::SimTime;
