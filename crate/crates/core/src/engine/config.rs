use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::EngineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    EagerPush,
    LazyPush,
    EagerPull,
    LazyPull,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::EagerPush,
        Variant::LazyPush,
        Variant::EagerPull,
        Variant::LazyPull,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::EagerPush => "eager-push",
            Variant::LazyPush => "lazy-push",
            Variant::EagerPull => "eager-pull",
            Variant::LazyPull => "lazy-pull",
        }
    }

    pub fn is_push(self) -> bool {
        matches!(self, Variant::EagerPush | Variant::LazyPush)
    }

    pub fn is_pull(self) -> bool {
        !self.is_push()
    }

    pub fn is_lazy(self) -> bool {
        matches!(self, Variant::LazyPush | Variant::LazyPull)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = EngineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| EngineError::InvalidConfig(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DuplicatePolicy {
    InfectAndDie,
    BallsAndBins,
}

impl DuplicatePolicy {
    pub fn name(self) -> &'static str {
        match self {
            DuplicatePolicy::InfectAndDie => "infect-and-die",
            DuplicatePolicy::BallsAndBins => "balls-and-bins",
        }
    }
}

impl fmt::Display for DuplicatePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DuplicatePolicy {
    type Err = EngineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "infect-and-die" => Ok(DuplicatePolicy::InfectAndDie),
            "balls-and-bins" => Ok(DuplicatePolicy::BallsAndBins),
            other => Err(EngineError::InvalidConfig(format!(
                "unknown duplicate policy {other:?}"
            ))),
        }
    }
}

/// Default gossip parameters a node applies to invocations that arrive
/// without a gossip header.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GossipConfig {
    pub variant: Variant,
    pub fanout: u32,
    /// Maximum relay depth.
    pub initial_hops: u32,
    pub id_ttl: Duration,
    pub data_ttl: Duration,
    pub scope: String,
    pub duplicate_policy: DuplicatePolicy,
    pub pull_period: Duration,
    /// How far back a `Pull` request looks into the responder's buffer.
    pub pull_window: Duration,
    pub aggregation_timeout: Duration,
    /// Lazy push: copies whose remaining hops exceed this are sent eagerly,
    /// the rest are advertised by id. `None` means `initial_hops - 2`.
    pub eager_hops_threshold: Option<u32>,
    /// How long an outstanding `Fetch` suppresses re-requesting the same id.
    pub fetch_timeout: Duration,
}

impl Default for GossipConfig {
    fn default() -> Self {
        GossipConfig {
            variant: Variant::EagerPush,
            fanout: 8,
            initial_hops: 5,
            id_ttl: Duration::from_secs(60),
            data_ttl: Duration::ZERO,
            scope: "default".to_owned(),
            duplicate_policy: DuplicatePolicy::InfectAndDie,
            pull_period: Duration::from_secs(1),
            pull_window: Duration::from_secs(60),
            aggregation_timeout: Duration::from_millis(500),
            eager_hops_threshold: None,
            fetch_timeout: Duration::from_secs(1),
        }
    }
}

impl GossipConfig {
    /// Sets the duplicate policy together with a matching `id_ttl`.
    pub fn with_policy(mut self, policy: DuplicatePolicy) -> Self {
        self.duplicate_policy = policy;
        match policy {
            DuplicatePolicy::BallsAndBins => self.id_ttl = Duration::ZERO,
            DuplicatePolicy::InfectAndDie if self.id_ttl.is_zero() => {
                self.id_ttl = GossipConfig::default().id_ttl
            }
            DuplicatePolicy::InfectAndDie => {}
        }
        self
    }

    /// Sets the variant, giving lazy and pull variants a payload buffer if
    /// none was configured.
    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        if (variant.is_lazy() || variant.is_pull()) && self.data_ttl.is_zero() {
            self.data_ttl = Duration::from_secs(60);
        }
        self
    }

    pub fn eager_threshold(&self) -> u32 {
        self.eager_hops_threshold
            .unwrap_or_else(|| self.initial_hops.saturating_sub(2))
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |msg: &str| Err(EngineError::InvalidConfig(msg.to_owned()));
        if self.fanout == 0 {
            return bad("fanout must be at least 1");
        }
        if self.initial_hops == 0 {
            return bad("initial_hops must be at least 1");
        }
        if self.scope.is_empty() {
            return bad("scope must not be empty");
        }
        let bins = self.duplicate_policy == DuplicatePolicy::BallsAndBins;
        if bins != self.id_ttl.is_zero() {
            return bad("balls-and-bins requires id_ttl = 0 and infect-and-die requires id_ttl > 0");
        }
        if self.variant.is_pull() && self.pull_period.is_zero() {
            return bad("pull variants require pull_period > 0");
        }
        if (self.variant.is_lazy() || self.variant.is_pull()) && self.data_ttl.is_zero() {
            return bad("lazy and pull variants require data_ttl > 0");
        }
        Ok(())
    }
}
