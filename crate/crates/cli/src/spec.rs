//! Experiment specifications and their text format.
//!
//! A config file is a list of `key = value` lines. `#` starts a comment,
//! blank lines are ignored, and sweep keys accept either a single value or a
//! bracketed list such as `nodes = [10, 50, 250]`. See `experiment.conf` at
//! the crate root for every key with its default.

use std::fmt;
use std::time::Duration;

use gossip_core::engine::{DuplicatePolicy, Variant};
use gossip_core::fanout::{compute_fanout, ReliabilityTarget};
use gossip_core::simnet::{Protocol, SimConfig};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub struct SpecError {
    /// 1-based line in the config file, when the value came from one.
    pub line: Option<usize>,
    pub field: String,
    pub message: String,
}

impl fmt::Display for SpecError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(line) = self.line {
            write!(f, "line {line}: ")?;
        }
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl SpecError {
    fn new(field: &str, message: impl Into<String>) -> Self {
        SpecError {
            line: None,
            field: field.to_owned(),
            message: message.into(),
        }
    }

    fn at(mut self, line: usize) -> Self {
        self.line = Some(line);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FanoutChoice {
    Fixed(u32),
    /// Derived per point from the node count, `error_rate` and `assurance`.
    Auto,
}

impl fmt::Display for FanoutChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FanoutChoice::Fixed(v) => write!(f, "{v}"),
            FanoutChoice::Auto => f.write_str("auto"),
        }
    }
}

/// A parameter sweep. Every combination of the list-valued fields is one
/// point; each point runs `runs` times with seeds `seed_base + run`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub name: String,
    pub protocol: Protocol,
    pub nodes: Vec<usize>,
    pub fanout: Vec<FanoutChoice>,
    pub loss: Vec<f64>,
    pub variant: Vec<Variant>,
    pub policy: Vec<DuplicatePolicy>,
    pub hops: u32,
    pub error_rate: f64,
    pub assurance: f64,
    pub runs: usize,
    pub seed_base: u64,
    /// Everything not swept: event schedule, latency model, TTLs.
    pub template: SimConfig,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            name: "experiment".to_owned(),
            protocol: Protocol::Gossip,
            nodes: vec![10],
            fanout: vec![FanoutChoice::Auto],
            loss: vec![0.0],
            variant: vec![Variant::EagerPush],
            policy: vec![DuplicatePolicy::InfectAndDie],
            hops: 5,
            error_rate: 0.05,
            assurance: 0.99,
            runs: 5,
            seed_base: 1,
            template: SimConfig::default(),
        }
    }
}

/// One resolved combination of sweep values.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub n: usize,
    pub fanout: u32,
    pub loss: f64,
    pub variant: Variant,
    pub policy: DuplicatePolicy,
}

pub const KEYS: &[&str] = &[
    "name",
    "protocol",
    "nodes",
    "fanout",
    "loss",
    "variant",
    "policy",
    "hops",
    "error_rate",
    "assurance",
    "runs",
    "seed",
    "events",
    "interval_ms",
    "start_ms",
    "warmup",
    "cooldown",
    "network_delay_ms",
    "per_send_cost_ms",
    "jitter_ms",
    "id_ttl_ms",
    "data_ttl_ms",
    "pull_period_ms",
    "aggregation_timeout_ms",
    "scope",
];

impl ExperimentSpec {
    /// Parses a config file. Keys not present keep their defaults.
    pub fn parse(text: &str) -> Result<Self, SpecError> {
        let mut spec = ExperimentSpec::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                SpecError::new(line, "expected `key = value`").at(i + 1)
            })?;
            spec.set(key.trim(), value.trim()).map_err(|e| e.at(i + 1))?;
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Applies one setting. Used for config lines and command-line flags.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), SpecError> {
        let t = &mut self.template;
        match key {
            "name" => {
                if value.is_empty()
                    || !value
                        .chars()
                        .all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
                {
                    return Err(SpecError::new(key, "use letters, digits, '-', '_' or '.'"));
                }
                self.name = value.to_owned();
            }
            "protocol" => self.protocol = parse_one(key, value)?,
            "nodes" => {
                self.nodes = parse_list(key, value)?;
                if let Some(&n) = self.nodes.iter().find(|&&n| n < 2) {
                    return Err(SpecError::new(key, format!("{n} is below the minimum of 2")));
                }
            }
            "fanout" => {
                self.fanout = list_items(key, value)?
                    .into_iter()
                    .map(|item| match item {
                        "auto" => Ok(FanoutChoice::Auto),
                        _ => match item.parse::<u32>() {
                            Ok(v) if v >= 1 => Ok(FanoutChoice::Fixed(v)),
                            _ => Err(SpecError::new(
                                key,
                                format!("{item:?} is neither a positive integer nor auto"),
                            )),
                        },
                    })
                    .collect::<Result<_, _>>()?;
            }
            "loss" => {
                self.loss = parse_list(key, value)?;
                if let Some(l) = self.loss.iter().find(|l| !(0.0..=1.0).contains(*l)) {
                    return Err(SpecError::new(key, format!("{l} is outside [0, 1]")));
                }
            }
            "variant" => self.variant = parse_list(key, value)?,
            "policy" => self.policy = parse_list(key, value)?,
            "hops" => {
                self.hops = parse_one(key, value)?;
                if self.hops == 0 {
                    return Err(SpecError::new(key, "must be at least 1"));
                }
            }
            "error_rate" => {
                self.error_rate = parse_one(key, value)?;
                if !(0.0..1.0).contains(&self.error_rate) {
                    return Err(SpecError::new(key, format!("{value} is outside [0, 1)")));
                }
            }
            "assurance" => {
                self.assurance = parse_one(key, value)?;
                if !(self.assurance > 0.5 && self.assurance < 1.0) {
                    return Err(SpecError::new(key, format!("{value} is outside (0.5, 1)")));
                }
            }
            "runs" => {
                self.runs = parse_one(key, value)?;
                if self.runs == 0 {
                    return Err(SpecError::new(key, "must be at least 1"));
                }
            }
            "seed" => self.seed_base = parse_one(key, value)?,
            "events" => t.events = parse_one(key, value)?,
            "warmup" => t.warmup_discard = parse_one(key, value)?,
            "cooldown" => t.cooldown_discard = parse_one(key, value)?,
            "interval_ms" => t.interval = parse_ms(key, value)?,
            "start_ms" => t.start = parse_ms(key, value)?,
            "network_delay_ms" => t.latency.network_delay = parse_ms(key, value)?,
            "per_send_cost_ms" => t.latency.per_send_cost = parse_ms(key, value)?,
            "jitter_ms" => t.latency.jitter = parse_ms(key, value)?,
            "id_ttl_ms" => t.gossip.id_ttl = parse_ms(key, value)?,
            "data_ttl_ms" => t.gossip.data_ttl = parse_ms(key, value)?,
            "pull_period_ms" => t.gossip.pull_period = parse_ms(key, value)?,
            "aggregation_timeout_ms" => t.gossip.aggregation_timeout = parse_ms(key, value)?,
            "scope" => {
                if value.is_empty() {
                    return Err(SpecError::new(key, "must not be empty"));
                }
                t.gossip.scope = value.to_owned();
            }
            _ => {
                return Err(SpecError::new(
                    key,
                    format!("unknown key (expected one of {})", KEYS.join(", ")),
                ))
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        for (field, empty) in [
            ("nodes", self.nodes.is_empty()),
            ("fanout", self.fanout.is_empty()),
            ("loss", self.loss.is_empty()),
            ("variant", self.variant.is_empty()),
            ("policy", self.policy.is_empty()),
        ] {
            if empty {
                return Err(SpecError::new(field, "sweep list is empty"));
            }
        }
        let t = &self.template;
        if t.events <= t.warmup_discard + t.cooldown_discard {
            return Err(SpecError::new(
                "events",
                format!(
                    "{} events leave nothing after discarding {} + {}",
                    t.events, t.warmup_discard, t.cooldown_discard
                ),
            ));
        }
        if t.interval.is_zero() {
            return Err(SpecError::new("interval_ms", "must be positive"));
        }
        for point in self.points() {
            self.sim_config(&point, 0)
                .validate()
                .map_err(|e| SpecError::new("config", e.to_string()))?;
        }
        Ok(())
    }

    pub fn resolve_fanout(&self, choice: FanoutChoice, n: usize) -> u32 {
        match choice {
            FanoutChoice::Fixed(f) => f,
            FanoutChoice::Auto => {
                let target = ReliabilityTarget::new(n, self.error_rate, self.assurance)
                    .expect("error_rate and assurance are validated on set");
                compute_fanout(&target)
            }
        }
    }

    /// Sweep points in nested order: nodes, fanout, loss, variant, policy.
    pub fn points(&self) -> Vec<Point> {
        let mut points = Vec::new();
        for &n in &self.nodes {
            for &choice in &self.fanout {
                let fanout = self.resolve_fanout(choice, n);
                for &loss in &self.loss {
                    for &variant in &self.variant {
                        for &policy in &self.policy {
                            points.push(Point {
                                n,
                                fanout,
                                loss,
                                variant,
                                policy,
                            });
                        }
                    }
                }
            }
        }
        points
    }

    pub fn seed(&self, run: usize) -> u64 {
        self.seed_base.wrapping_add(run as u64)
    }

    pub fn sim_config(&self, point: &Point, run: usize) -> SimConfig {
        let mut config = self.template.clone();
        config.n = point.n;
        config.protocol = self.protocol;
        config.loss = point.loss;
        config.seed = self.seed(run);
        config.gossip = config
            .gossip
            .with_variant(point.variant)
            .with_policy(point.policy);
        config.gossip.fanout = point.fanout;
        config.gossip.initial_hops = self.hops;
        config
    }
}

fn parse_one<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, SpecError>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| SpecError::new(key, format!("cannot parse {value:?}: {e}")))
}

fn list_items<'a>(key: &str, value: &'a str) -> Result<Vec<&'a str>, SpecError> {
    let inner = match value.strip_prefix('[') {
        Some(rest) => rest
            .strip_suffix(']')
            .ok_or_else(|| SpecError::new(key, "unterminated list"))?,
        None => value,
    };
    let items: Vec<&str> = inner.split(',').map(str::trim).collect();
    if items.iter().any(|s| s.is_empty()) {
        return Err(SpecError::new(key, "empty list item"));
    }
    Ok(items)
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, SpecError>
where
    T::Err: fmt::Display,
{
    list_items(key, value)?
        .into_iter()
        .map(|item| parse_one(key, item))
        .collect()
}

fn parse_ms(key: &str, value: &str) -> Result<Duration, SpecError> {
    let ms: f64 = parse_one(key, value)?;
    if !ms.is_finite() || ms < 0.0 {
        return Err(SpecError::new(key, format!("{value} is not a non-negative duration")));
    }
    Ok(Duration::from_nanos((ms * 1e6).round() as u64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let spec = ExperimentSpec::parse("nodes = [10]\nruns = 1\n").unwrap();
        let expected = ExperimentSpec {
            runs: 1,
            ..ExperimentSpec::default()
        };
        assert_eq!(spec, expected);
        assert_eq!(spec.template.events, 120);
        assert_eq!(spec.template.interval, Duration::from_secs(5));
        assert_eq!((spec.template.warmup_discard, spec.template.cooldown_discard), (10, 10));
    }

    #[test]
    fn auto_fanout_resolves_per_node_count() {
        let spec = ExperimentSpec::parse("nodes = [10, 250]\nfanout = auto\n").unwrap();
        let fanouts: Vec<u32> = spec.points().iter().map(|p| p.fanout).collect();
        assert_eq!(fanouts, vec![8, 11]);
    }

    #[test]
    fn loss_out_of_range_names_the_field_and_line() {
        let err = ExperimentSpec::parse("nodes = 10\n\nloss = 1.5\n").unwrap_err();
        assert_eq!(err.field, "loss");
        assert_eq!(err.line, Some(3));
        assert_eq!(err.to_string(), "line 3: loss: 1.5 is outside [0, 1]");
    }

    #[test]
    fn parse_errors_are_specific() {
        let cases = [
            ("nodes = [10, 20\n", "nodes"),
            ("fanout = 0\n", "fanout"),
            ("variant = gossip\n", "variant"),
            ("colour = red\n", "colour"),
            ("runs = 0\n", "runs"),
            ("events = 20\n", "events"),
            ("nodes = [1]\n", "nodes"),
            ("interval_ms = -5\n", "interval_ms"),
        ];
        for (text, field) in cases {
            let err = ExperimentSpec::parse(text).unwrap_err();
            assert_eq!(err.field, field, "{text:?} gave {err}");
        }
        let err = ExperimentSpec::parse("nodes 10\n").unwrap_err();
        assert_eq!(err.line, Some(1));
    }

    #[test]
    fn comments_and_lists() {
        let text = "# sweep\nnodes = [10, 50] # two sizes\nloss = [0, 0.1]\n\
                    variant = [eager-push, lazy-push]\npolicy = balls-and-bins\n";
        let spec = ExperimentSpec::parse(text).unwrap();
        assert_eq!(spec.points().len(), 2 * 2 * 2);
        let p = &spec.points()[0];
        let config = spec.sim_config(p, 3);
        assert_eq!(config.seed, 4);
        assert!(config.gossip.id_ttl.is_zero());
    }

    #[test]
    fn bundled_example_parses() {
        let text = include_str!("../experiment.conf");
        let spec = ExperimentSpec::parse(text).unwrap();
        assert_eq!(spec.nodes, vec![10, 50, 100, 150, 200, 250]);
        assert_eq!(spec.fanout, vec![FanoutChoice::Auto]);
    }
}
