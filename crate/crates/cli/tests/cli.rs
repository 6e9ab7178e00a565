use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn gossipsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gossipsim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("gossipsim-{}-{name}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    dir
}

const SMALL: &str = "nodes = [8, 20]\nloss = 0.1\nruns = 2\nevents = 25\n";

#[test]
fn rerun_gives_identical_csv_and_tx_log() {
    let dir = scratch("rerun");
    let config = dir.join("small.conf");
    fs::write(&config, SMALL).unwrap();
    let mut outputs = Vec::new();
    for i in 0..2 {
        let csv = dir.join(format!("out{i}.csv"));
        let log = dir.join(format!("tx{i}.jsonl"));
        let out = gossipsim(&[
            "--config",
            config.to_str().unwrap(),
            "--out",
            csv.to_str().unwrap(),
            "--tx-log",
            log.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        outputs.push((fs::read(csv).unwrap(), fs::read(log).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
    let csv = String::from_utf8(outputs[0].0.clone()).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 3);
    let first = String::from_utf8(outputs[0].1.clone()).unwrap();
    let line: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    for field in ["run", "seed", "from", "to", "kind", "send_ns", "deliver_ns", "dropped"] {
        assert!(line.get(field).is_some(), "missing {field}");
    }
}

#[test]
fn flags_override_the_config_file() {
    let dir = scratch("flags");
    let config = dir.join("small.conf");
    fs::write(&config, SMALL).unwrap();
    let out = gossipsim(&[
        "--config",
        config.to_str().unwrap(),
        "--nodes",
        "12",
        "--fanout",
        "3",
        "--runs",
        "1",
    ]);
    assert!(out.status.success());
    let csv = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("experiment,12,3,5,0.1,eager-push,infect-and-die,0,1,"));
}

#[test]
fn eventing_protocol_flag() {
    let out = gossipsim(&["--protocol", "eventing", "--nodes", "4", "--runs", "1"]);
    assert!(out.status.success());
    let csv = String::from_utf8(out.stdout).unwrap();
    assert!(csv.lines().nth(1).unwrap().contains(",eventing,none,"));
}

#[test]
fn errors_exit_nonzero_with_a_message() {
    let dir = scratch("errors");
    let bad = dir.join("bad.conf");
    fs::write(&bad, "nodes = 10\nloss = 1.5\n").unwrap();
    let cases: Vec<(Vec<&str>, &str)> = vec![
        (vec!["--config", bad.to_str().unwrap()], "line 2: loss"),
        (vec!["--loss", "2"], "--loss"),
        (vec!["--fanout", "many"], "--fanout"),
        (vec!["--variant", "flood"], "--variant"),
        (vec!["--config", "/nonexistent/x.conf"], "cannot read"),
    ];
    for (args, needle) in cases {
        let out = gossipsim(&args);
        assert!(!out.status.success(), "{args:?} succeeded");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(needle), "{args:?}: {err}");
    }
}

#[test]
fn fanout_subcommand_prints_the_fanout() {
    for (n, f) in [("10", "8"), ("250", "11")] {
        let out = gossipsim(&["fanout", "--nodes", n]);
        assert!(out.status.success());
        assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), f);
    }
    assert!(!gossipsim(&["fanout", "--nodes", "10", "--assurance", "1.2"]).status.success());
}

#[test]
fn curve_subcommand_writes_one_row_per_fanout() {
    let out = gossipsim(&[
        "curve", "--nodes", "30", "--min-fanout", "1", "--max-fanout", "4", "--runs", "20",
    ]);
    assert!(out.status.success());
    let csv = String::from_utf8(out.stdout).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "n,hops,fanout,loss,runs,average_receivers_pct,atomic_runs_pct,atomic_std_error_pct"
    );
    assert_eq!(lines.count(), 4);
}
