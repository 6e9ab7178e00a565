use std::io::Write;

use gossip_core::fanout::expected_atomicity;
use gossip_core::simnet::{self, Protocol, RunMetrics, SimError, TxRecord};
use rayon::prelude::*;
use serde::Serialize;

use crate::spec::{ExperimentSpec, Point};

/// One CSV line. Raw rows carry a run index and seed; the aggregate row for
/// a point has `run = "mean"` and an empty seed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub scenario: String,
    pub n: usize,
    pub fanout: u32,
    pub hops: u32,
    pub loss: f64,
    pub variant: String,
    pub policy: String,
    pub run: String,
    pub seed: Option<u64>,
    pub delivery_rate: f64,
    pub atomic: f64,
    pub mean_hops: f64,
    pub mean_latency_ms: f64,
    pub p99_latency_ms: f64,
    pub total_transmissions: f64,
    pub producer_transmissions: f64,
}

impl Row {
    pub fn is_aggregate(&self) -> bool {
        self.run == "mean"
    }
}

/// A transmission record tagged with the run it came from.
#[derive(Debug, Clone, Serialize)]
pub struct LoggedTx<'a> {
    pub n: usize,
    pub fanout: u32,
    pub loss: f64,
    pub variant: &'a str,
    pub policy: &'a str,
    pub run: usize,
    pub seed: u64,
    #[serde(flatten)]
    pub tx: &'a TxRecord,
}

pub struct RunOutcome {
    pub point: Point,
    pub run: usize,
    pub seed: u64,
    pub metrics: RunMetrics,
    pub log: Vec<TxRecord>,
}

pub struct ExperimentOutput {
    pub rows: Vec<Row>,
    pub runs: Vec<RunOutcome>,
}

/// Runs every (point, run) pair, in parallel, and assembles rows in sweep
/// order: the raw rows of a point followed by its aggregate.
pub fn run_experiment(spec: &ExperimentSpec, keep_logs: bool) -> Result<ExperimentOutput, SimError> {
    let jobs: Vec<(Point, usize)> = spec
        .points()
        .into_iter()
        .flat_map(|p| (0..spec.runs).map(move |r| (p.clone(), r)))
        .collect();
    let runs = jobs
        .into_par_iter()
        .map(|(point, run)| {
            let config = spec.sim_config(&point, run);
            let (metrics, log) = if keep_logs {
                simnet::run_logged(&config)?
            } else {
                (simnet::run(&config)?, Vec::new())
            };
            Ok(RunOutcome {
                seed: config.seed,
                point,
                run,
                metrics,
                log,
            })
        })
        .collect::<Result<Vec<_>, SimError>>()?;

    let mut rows = Vec::with_capacity(runs.len() + runs.len() / spec.runs);
    for chunk in runs.chunks(spec.runs) {
        let raw: Vec<Row> = chunk.iter().map(|o| raw_row(spec, o)).collect();
        let mean = mean_row(&raw);
        rows.extend(raw);
        rows.push(mean);
    }
    Ok(ExperimentOutput { rows, runs })
}

fn labels(spec: &ExperimentSpec, point: &Point) -> (u32, u32, String, String) {
    match spec.protocol {
        // The baseline always unicasts to every subscriber in one step.
        Protocol::Eventing => (
            point.n as u32 - 1,
            1,
            "eventing".to_owned(),
            "none".to_owned(),
        ),
        Protocol::Gossip => (
            point.fanout,
            spec.hops,
            point.variant.name().to_owned(),
            point.policy.name().to_owned(),
        ),
    }
}

fn raw_row(spec: &ExperimentSpec, o: &RunOutcome) -> Row {
    let (fanout, hops, variant, policy) = labels(spec, &o.point);
    let m = &o.metrics;
    Row {
        scenario: spec.name.clone(),
        n: o.point.n,
        fanout,
        hops,
        loss: o.point.loss,
        variant,
        policy,
        run: o.run.to_string(),
        seed: Some(o.seed),
        delivery_rate: m.delivery_rate,
        atomic: m.atomic_fraction,
        mean_hops: m.mean_hops,
        mean_latency_ms: m.mean_latency_ms,
        p99_latency_ms: m.p99_latency_ms,
        total_transmissions: m.total_transmissions as f64,
        producer_transmissions: m.producer_transmissions as f64,
    }
}

fn mean_row(raw: &[Row]) -> Row {
    let mean = |f: fn(&Row) -> f64| raw.iter().map(f).sum::<f64>() / raw.len() as f64;
    Row {
        run: "mean".to_owned(),
        seed: None,
        delivery_rate: mean(|r| r.delivery_rate),
        atomic: mean(|r| r.atomic),
        mean_hops: mean(|r| r.mean_hops),
        mean_latency_ms: mean(|r| r.mean_latency_ms),
        p99_latency_ms: mean(|r| r.p99_latency_ms),
        total_transmissions: mean(|r| r.total_transmissions),
        producer_transmissions: mean(|r| r.producer_transmissions),
        ..raw[0].clone()
    }
}

pub fn write_rows<W: Write, T: Serialize>(out: W, rows: &[T]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the transmission logs of every run as JSON lines, in row order.
pub fn write_logs<W: Write>(mut out: W, runs: &[RunOutcome]) -> std::io::Result<()> {
    for o in runs {
        for tx in &o.log {
            let line = LoggedTx {
                n: o.point.n,
                fanout: o.point.fanout,
                loss: o.point.loss,
                variant: o.point.variant.name(),
                policy: o.point.policy.name(),
                run: o.run,
                seed: o.seed,
                tx,
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()
}

/// One fanout of a reliability curve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveRow {
    pub n: usize,
    pub hops: u32,
    pub fanout: u32,
    pub loss: f64,
    pub runs: usize,
    pub average_receivers_pct: f64,
    pub atomic_runs_pct: f64,
    pub atomic_std_error_pct: f64,
}

/// Single-message disseminations at each fanout: the percentage of nodes an
/// average run reaches, and the percentage of runs that reach everyone.
pub fn reliability_curve(
    n: usize,
    hops: u32,
    fanouts: impl IntoIterator<Item = u32>,
    runs: usize,
    seed: u64,
    loss: f64,
) -> Result<Vec<CurveRow>, SimError> {
    fanouts
        .into_iter()
        .map(|fanout| {
            let est = expected_atomicity(n, fanout, hops, runs, seed, loss)?;
            Ok(CurveRow {
                n,
                hops,
                fanout,
                loss,
                runs,
                average_receivers_pct: 100.0 * est.mean_receivers,
                atomic_runs_pct: 100.0 * est.atomic,
                atomic_std_error_pct: 100.0 * est.std_error,
            })
        })
        .collect()
}
