use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Reply filters a deployment can enable. Each node folds its own answer
/// together with everything received from downstream and forwards a single
/// value upstream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Filter {
    Max,
    Min,
    Sum,
    Count,
}

impl Filter {
    pub const ALL: [Filter; 4] = [Filter::Max, Filter::Min, Filter::Sum, Filter::Count];

    pub fn name(self) -> &'static str {
        match self {
            Filter::Max => "max",
            Filter::Min => "min",
            Filter::Sum => "sum",
            Filter::Count => "count",
        }
    }

    /// A node's own answer as a partial aggregate.
    pub fn lift(self, local: f64) -> f64 {
        match self {
            Filter::Count => 1.0,
            _ => local,
        }
    }

    pub fn combine(self, acc: f64, partial: f64) -> f64 {
        match self {
            Filter::Max => acc.max(partial),
            Filter::Min => acc.min(partial),
            Filter::Sum | Filter::Count => acc + partial,
        }
    }

    /// Filter applied directly to a multiset of node values.
    pub fn apply(self, values: impl IntoIterator<Item = f64>) -> Option<f64> {
        values
            .into_iter()
            .map(|v| self.lift(v))
            .reduce(|a, b| self.combine(a, b))
    }
}

impl fmt::Display for Filter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown filter {0:?} (expected max, min, sum or count)")]
pub struct UnknownFilter(pub String);

impl FromStr for Filter {
    type Err = UnknownFilter;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Filter::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| UnknownFilter(s.to_owned()))
    }
}
