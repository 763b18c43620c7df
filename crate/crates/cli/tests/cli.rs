use std::fs;
use std::path::Path;
use std::process::Command;

fn volroute(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_volroute"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn shrink_config(path: &Path) {
    let text = fs::read_to_string(path).unwrap();
    let small = [
        ("walk.min_history", "150"),
        ("walk.train_window", "150"),
        ("walk.benchmark_window", "60"),
        ("walk.static_selection_window", "60"),
        ("market.state_window", "150"),
        ("kernel.history_len", "60"),
        ("routing.window", "60"),
        ("pools.calm", "GRU,HAR-RV"),
        ("pools.stress", "GARCH-t,HAR-RV"),
        ("report.ablations", "false"),
    ];
    let out: String = text
        .lines()
        .map(|l| {
            let key = l.split('=').next().unwrap().trim();
            match small.iter().find(|(k, _)| *k == key) {
                Some((k, v)) => format!("{k} = {v}\n"),
                None => format!("{l}\n"),
            }
        })
        .collect();
    fs::write(path, out).unwrap();
}

#[test]
fn simulate_run_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("syn");
    let o = volroute(&[
        "simulate",
        "--seed",
        "2",
        "--days",
        "300",
        "--out",
        data.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cfg = data.join("volroute.conf");
    assert!(data.join("SYN1.csv").is_file() && data.join("macro.csv").is_file());
    shrink_config(&cfg);

    let out = dir.path().join("out");
    let o = volroute(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--assets",
        "SYN1,SYN4",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(out.join("SYN4/routing_log.csv").is_file());
    assert!(!out.join("SYN2").exists());
    let table2 = fs::read_to_string(out.join("table2.csv")).unwrap();

    fs::remove_file(out.join("table2.csv")).unwrap();
    let o = volroute(&["report", "--in", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(fs::read_to_string(out.join("table2.csv")).unwrap(), table2);
}

#[test]
fn bad_config_exits_with_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.conf");
    fs::write(&cfg, "routing.alpha = 1.5\n").unwrap();
    let o = volroute(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("routing.alpha"));
}

#[test]
fn missing_asset_gives_nonzero_exit_but_others_complete() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("syn");
    let o = volroute(&[
        "simulate",
        "--seed",
        "5",
        "--days",
        "300",
        "--out",
        data.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let cfg = data.join("volroute.conf");
    shrink_config(&cfg);
    fs::remove_file(data.join("SYN2.csv")).unwrap();
    let o = volroute(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--assets",
        "SYN1,SYN2",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(data.join("run/SYN1/losses.csv").is_file());
    assert!(data.join("run/table2.csv").is_file());
}

#[test]
fn report_on_missing_directory_fails() {
    let o = volroute(&["report", "--in", "/nonexistent/volroute-out"]);
    assert_eq!(o.status.code(), Some(1));
}
