//! Fanout from a reliability target, and a Monte-Carlo check of it.

use rayon::prelude::*;
use thiserror::Error;

use crate::simnet::{self, LatencyModel, SimConfig, SimError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FanoutError {
    #[error("participant count must be at least 1")]
    NoParticipants,
    #[error("error rate {0} must lie in [0, 1)")]
    ErrorRate(f64),
    #[error("delivery assurance {0} must lie in (0.5, 1)")]
    Assurance(f64),
}

/// Participants, expected per-transmission error rate and required
/// probability that a message reaches everyone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReliabilityTarget {
    n: usize,
    error_rate: f64,
    assurance: f64,
}

impl ReliabilityTarget {
    pub fn new(n: usize, error_rate: f64, assurance: f64) -> Result<Self, FanoutError> {
        if n == 0 {
            return Err(FanoutError::NoParticipants);
        }
        if !(0.0..1.0).contains(&error_rate) {
            return Err(FanoutError::ErrorRate(error_rate));
        }
        if !(assurance > 0.5 && assurance < 1.0) {
            return Err(FanoutError::Assurance(assurance));
        }
        Ok(ReliabilityTarget {
            n,
            error_rate,
            assurance,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn error_rate(&self) -> f64 {
        self.error_rate
    }

    pub fn assurance(&self) -> f64 {
        self.assurance
    }
}

/// `ceil((ln n + ln(1 / ln(1/p))) / (1 - e))`, never below 1.
///
/// Atomic delivery with fanout f happens with probability about
/// `exp(-n e^-f)`; solving for f at probability p and inflating by the
/// fraction of transmissions that survive loss gives the expression above.
pub fn compute_fanout(target: &ReliabilityTarget) -> u32 {
    let n = target.n as f64;
    let p = target.assurance;
    let raw = (n.ln() + (1.0 / (1.0 / p).ln()).ln()) / (1.0 - target.error_rate);
    (raw.ceil() as u32).max(1)
}

/// Outcome of [`expected_atomicity`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtomicityEstimate {
    /// Fraction of runs in which every node received the message.
    pub atomic: f64,
    /// Standard error of `atomic`.
    pub std_error: f64,
    /// Mean fraction of non-origin nodes reached.
    pub mean_receivers: f64,
    pub runs: usize,
}

/// Simulates `runs` independent single-message disseminations from a random
/// node with the given fanout and initial hop count. Run `i` uses seed
/// `seed + i`.
///
/// Runs use [`LatencyModel::lockstep`], so a node's first copy is always one
/// from the shallowest depth that reaches it. Under a sender-queue model a
/// deeper copy can overtake a shallower one and arrive with fewer hops left.
pub fn expected_atomicity(
    n: usize,
    fanout: u32,
    hops: u32,
    runs: usize,
    seed: u64,
    loss: f64,
) -> Result<AtomicityEstimate, SimError> {
    let results = (0..runs)
        .into_par_iter()
        .map(|i| {
            let mut config = SimConfig {
                n,
                events: 1,
                warmup_discard: 0,
                cooldown_discard: 0,
                loss,
                seed: seed.wrapping_add(i as u64),
                latency: LatencyModel::lockstep(),
                ..SimConfig::default()
            };
            config.gossip.fanout = fanout;
            config.gossip.initial_hops = hops;
            simnet::run(&config).map(|m| (m.atomic_fraction == 1.0, m.delivery_rate))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let runs = results.len();
    let atomic_runs = results.iter().filter(|(a, _)| *a).count();
    let atomic = atomic_runs as f64 / runs.max(1) as f64;
    let mean_receivers = results.iter().map(|(_, d)| d).sum::<f64>() / runs.max(1) as f64;
    let std_error = (atomic * (1.0 - atomic) / runs.max(1) as f64).sqrt();
    Ok(AtomicityEstimate {
        atomic,
        std_error,
        mean_receivers,
        runs,
    })
}
