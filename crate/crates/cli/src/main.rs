use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gossip_cli::{reliability_curve, run_experiment, write_logs, write_rows, ExperimentSpec, Row};
use gossip_core::fanout::{compute_fanout, ReliabilityTarget};

/// Gossip versus eventing dissemination experiments on a simulated network.
///
/// Without a subcommand, runs the sweep described by `--config` and the
/// override flags, writing one CSV row per run plus a mean row per point.
#[derive(Parser)]
#[command(name = "gossipsim", version, args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Subcommand)]
enum Command {
    /// Atomic-delivery and coverage percentages over a range of fanouts.
    Curve(CurveArgs),
    /// Fanout needed for a delivery assurance under an expected loss rate.
    Fanout(FanoutArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config file (`key = value` lines).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Node counts, comma separated.
    #[arg(long, value_name = "LIST")]
    nodes: Option<String>,
    /// Fanout, or `auto` to derive it from the node count.
    #[arg(long, value_name = "INT|auto")]
    fanout: Option<String>,
    #[arg(long, value_name = "INT")]
    hops: Option<String>,
    #[arg(long, value_name = "FLOAT")]
    loss: Option<String>,
    #[arg(long, value_name = "NAME")]
    variant: Option<String>,
    #[arg(long, value_name = "NAME")]
    policy: Option<String>,
    #[arg(long, value_name = "INT")]
    runs: Option<String>,
    /// Seed of run 0; run i uses seed + i.
    #[arg(long, value_name = "INT")]
    seed: Option<String>,
    #[arg(long, value_name = "gossip|eventing")]
    protocol: Option<String>,
    /// CSV destination; stdout when absent.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Write every transmission as a JSON line.
    #[arg(long, value_name = "PATH")]
    tx_log: Option<PathBuf>,
}

#[derive(Args)]
struct CurveArgs {
    #[arg(long, default_value_t = 250)]
    nodes: usize,
    #[arg(long, default_value_t = 5)]
    hops: u32,
    #[arg(long, default_value_t = 1)]
    min_fanout: u32,
    #[arg(long, default_value_t = 12)]
    max_fanout: u32,
    #[arg(long, default_value_t = 100)]
    runs: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    loss: f64,
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FanoutArgs {
    #[arg(long)]
    nodes: usize,
    #[arg(long, default_value_t = 0.05)]
    error_rate: f64,
    #[arg(long, default_value_t = 0.99)]
    assurance: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Some(Command::Curve(args)) => curve(args),
        Some(Command::Fanout(args)) => fanout(args),
        None => run(cli.run),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("gossipsim: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn run(args: RunArgs) -> Result<(), String> {
    let mut spec = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
            ExperimentSpec::parse(&text).map_err(|e| format!("{}: {e}", path.display()))?
        }
        None => ExperimentSpec::default(),
    };
    let overrides = [
        ("protocol", &args.protocol),
        ("nodes", &args.nodes),
        ("fanout", &args.fanout),
        ("hops", &args.hops),
        ("loss", &args.loss),
        ("variant", &args.variant),
        ("policy", &args.policy),
        ("runs", &args.runs),
        ("seed", &args.seed),
    ];
    for (key, value) in overrides {
        if let Some(value) = value {
            spec.set(key, value)
                .map_err(|e| format!("--{}: {}", key, e.message))?;
        }
    }
    spec.validate().map_err(|e| e.to_string())?;

    let out = run_experiment(&spec, args.tx_log.is_some()).map_err(|e| e.to_string())?;
    emit(args.out.as_deref(), |w| write_rows(w, &out.rows).map_err(io::Error::from))?;
    if let Some(path) = &args.tx_log {
        let file = create(path)?;
        write_logs(BufWriter::new(file), &out.runs)
            .map_err(|e| format!("cannot write {}: {e}", path.display()))?;
    }
    summarize(&out.rows);
    Ok(())
}

fn curve(args: CurveArgs) -> Result<(), String> {
    if args.min_fanout == 0 || args.min_fanout > args.max_fanout {
        return Err("fanout range must satisfy 1 <= min-fanout <= max-fanout".to_owned());
    }
    if args.runs == 0 {
        return Err("--runs must be at least 1".to_owned());
    }
    let rows = reliability_curve(
        args.nodes,
        args.hops,
        args.min_fanout..=args.max_fanout,
        args.runs,
        args.seed,
        args.loss,
    )
    .map_err(|e| e.to_string())?;
    emit(args.out.as_deref(), |w| write_rows(w, &rows).map_err(io::Error::from))
}

fn fanout(args: FanoutArgs) -> Result<(), String> {
    let target = ReliabilityTarget::new(args.nodes, args.error_rate, args.assurance)
        .map_err(|e| e.to_string())?;
    println!("{}", compute_fanout(&target));
    Ok(())
}

fn create(path: &Path) -> Result<File, String> {
    File::create(path).map_err(|e| format!("cannot create {}: {e}", path.display()))
}

fn emit(
    path: Option<&Path>,
    write: impl FnOnce(&mut dyn Write) -> io::Result<()>,
) -> Result<(), String> {
    match path {
        Some(path) => {
            let mut w = BufWriter::new(create(path)?);
            write(&mut w).map_err(|e| format!("cannot write {}: {e}", path.display()))
        }
        None => write(&mut io::stdout().lock()).map_err(|e| format!("cannot write stdout: {e}")),
    }
}

fn summarize(rows: &[Row]) {
    eprintln!(
        "{:>6} {:>6} {:>6} {:>12} {:>10} {:>8} {:>8} {:>10}",
        "n", "fanout", "loss", "variant", "delivery", "atomic", "hops", "latency"
    );
    for r in rows.iter().filter(|r| r.is_aggregate()) {
        eprintln!(
            "{:>6} {:>6} {:>6.2} {:>12} {:>10.5} {:>8.3} {:>8.3} {:>8.3}ms",
            r.n, r.fanout, r.loss, r.variant, r.delivery_rate, r.atomic, r.mean_hops, r.mean_latency_ms
        );
    }
}
