use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::Duration;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_datacube"));
    cmd.env("RUST_LOG", "warn");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

#[test]
fn validate_reports_schema_and_exit_status() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.csv");
    std::fs::write(&good, "id,year,zipcode,glucose\np1,2020,92093,98.5\np1,2021,92093,101.0\n").unwrap();
    let out = run(&["validate", good.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("glucose") && text.contains("Numeric"), "{text}");
    assert!(text.contains("rows: 2") && text.contains("individuals: 1"), "{text}");

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "id,zipcode,glucose\np1,92093,1\n").unwrap();
    let out = run(&["validate", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("line 1"), "{}", stdout(&out));

    let several = dir.path().join("several.csv");
    std::fs::write(&several, "id,year,glucose\np1,2020,abc\np2,2020,1\np2,2020,2\n").unwrap();
    let text = stdout(&run(&["validate", several.to_str().unwrap()]));
    assert!(text.contains("errors: 2") && text.contains("line 2") && text.contains("line 4"), "{text}");

    let missing = run(&["validate", dir.path().join("nope.csv").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn generated_ten_thousand_rows_validate() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("big.csv");
    let out = run(&["export", "--individuals", "2500", "--seed", "3", "--out", file.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&run(&["validate", file.to_str().unwrap()]));
    assert!(text.contains("rows: 10000"), "{text}");
    assert!(text.contains("individuals: 2500"), "{text}");
}

#[test]
fn export_applies_filters() {
    let out = run(&["export", "--individuals", "10", "--years", "2021:2021", "--regions", "92093"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.contains(",2021,92093,")), "{text}");

    let bad = run(&["export", "--range", "glucose"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn export_scenario_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = scenarios().join("five_users.toml");
    let out = run(&["export", "--scenario", scenario.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let session = dir.path().join("sim-42");
    assert!(session.join("watchlist.csv").exists());
    let snaps = std::fs::read_dir(session.join("snapshots")).unwrap().count();
    assert!(stdout(&out).starts_with(&format!("{snaps} snapshot(s)")), "{}", stdout(&out));

    let again = tempfile::tempdir().unwrap();
    run(&["export", "--scenario", scenario.to_str().unwrap(), "--out-dir", again.path().to_str().unwrap()]);
    let a = std::fs::read(session.join("watchlist.csv")).unwrap();
    let b = std::fs::read(again.path().join("sim-42/watchlist.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn simulate_is_deterministic_and_reports_capacity() {
    let five = scenarios().join("five_users.toml");
    let a = run(&["simulate", "--scenario", five.to_str().unwrap()]);
    let b = run(&["simulate", "--scenario", five.to_str().unwrap()]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    assert!(stdout(&a).contains("result: PASS"));

    let other_seed = run(&["simulate", "--scenario", five.to_str().unwrap(), "--seed", "43"]);
    assert_eq!(other_seed.status.code(), Some(0));
    assert_ne!(other_seed.stdout, a.stdout);

    let seventh = run(&["simulate", "--scenario", scenarios().join("seventh_join.toml").to_str().unwrap()]);
    assert_eq!(seventh.status.code(), Some(0));
    assert!(stdout(&seventh).contains("SessionFull=1"), "{}", stdout(&seventh));

    let rejoin = run(&["simulate", "--scenario", scenarios().join("disconnect_rejoin.toml").to_str().unwrap()]);
    assert_eq!(rejoin.status.code(), Some(0));
    assert!(stdout(&rejoin).contains("rejoins=1"), "{}", stdout(&rejoin));
}

#[test]
fn simulate_over_loopback_sockets() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("small.toml");
    std::fs::write(&file, "name = \"small\"\nparticipants = 3\nobservers = 1\nops = 150\n").unwrap();
    let out = run(&["simulate", "--scenario", file.to_str().unwrap(), "--real-sockets"]);
    assert_eq!(out.status.code(), Some(0), "{}{}", stdout(&out), String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("loopback sockets"));

    let gap = dir.path().join("gap.toml");
    std::fs::write(&gap, "[[gap]]\nclient = 0\nat_seq = 5\n").unwrap();
    let out = run(&["simulate", "--scenario", gap.to_str().unwrap(), "--real-sockets"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(run(&["simulate"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "participants = \"five\"\n").unwrap();
    assert_eq!(run(&["simulate", "--scenario", bad.to_str().unwrap()]).status.code(), Some(2));
    std::fs::write(&bad, "unknown_key = 1\n").unwrap();
    assert_eq!(run(&["simulate", "--scenario", bad.to_str().unwrap()]).status.code(), Some(2));
    let table = dir.path().join("strings.tsv");
    std::fs::write(&table, "no tabs here\n").unwrap();
    let out = run(&["--lang-table", table.to_str().unwrap(), "validate", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn serve_rejects_occupied_port() {
    let blocker = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = blocker.local_addr().unwrap().port().to_string();
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "serve", "--bind", "127.0.0.1", "--port", &port, "--ws-port", "0", "--discovery-port", "0",
        "--data-dir", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("already in use"));
}

#[cfg(unix)]
#[test]
fn serve_persists_artifacts_on_sigterm() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("serve.toml");
    std::fs::write(&config, "bind = \"127.0.0.1\"\nport = 0\nws_port = 0\ndiscovery_port = 0\nsession_id = \"desk\"\n").unwrap();
    let mut child = bin()
        .args(["serve", "--config", config.to_str().unwrap(), "--data-dir", dir.path().to_str().unwrap()])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
    let mut seen = Vec::new();
    for _ in 0..4 {
        seen.push(lines.next().unwrap().unwrap());
    }
    assert_eq!(seen[0], "session desk");
    let tcp: std::net::SocketAddr = seen[1].strip_prefix("tcp ").unwrap().parse().unwrap();
    assert_ne!(tcp.port(), 0);
    std::thread::sleep(Duration::from_millis(100));
    let killed = Command::new("kill").args(["-TERM", &child.id().to_string()]).status().unwrap();
    assert!(killed.success());
    let status = child.wait().unwrap();
    assert_eq!(status.code(), Some(0));
    let last = lines.next().unwrap().unwrap();
    assert!(last.starts_with("artifacts "), "{last}");
    let watchlist = std::fs::read_to_string(dir.path().join("desk/watchlist.csv")).unwrap();
    assert_eq!(watchlist.lines().count(), 1);
    assert!(dir.path().join("desk/snapshots").is_dir());
}
