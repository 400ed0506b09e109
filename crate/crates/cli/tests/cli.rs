use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use crosslayer_core::scenario::PRESETS;

fn crosslayer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crosslayer")).args(args).output().expect("binary runs")
}

fn preset_text(name: &str) -> &'static str {
    PRESETS.iter().find(|(n, _)| *n == name).unwrap().1
}

fn summary(dir: &Path) -> BTreeMap<String, String> {
    fs::read_to_string(dir.join("summary.toml"))
        .unwrap()
        .lines()
        .filter_map(|l| l.split_once(" = ").map(|(k, v)| (k.to_string(), v.to_string())))
        .collect()
}

#[test]
fn characterize_prints_dwell_and_frames() {
    let out = crosslayer(&["characterize", "--fov-m", "22", "--speed-mps", "20", "--fps", "30", "--uplink-share", "1.0"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("dwell_ms = 1100\n"), "{text}");
    assert!(text.contains("frames_in_fov = 33\n"), "{text}");
}

#[test]
fn usage_errors_exit_2() {
    for args in [
        vec!["train"],
        vec!["--no-such-flag"],
        vec!["frobnicate"],
        vec!["baseline", "--scenario", "a1_30ms", "--profile", "7", "--phy", "A"],
        vec!["baseline", "--scenario", "a1_30ms", "--profile", "1", "--phy", "Z"],
        vec!["eval", "--scenario", "a1_30ms"],
        vec!["characterize", "--fov-m", "22", "--speed-mps", "0", "--fps", "30", "--uplink-share", "1"],
        vec!["train", "--scenario", "no_such_preset"],
    ] {
        let out = crosslayer(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(!out.stderr.is_empty(), "{args:?}");
    }
}

#[test]
fn invalid_scenario_file_names_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, preset_text("a1_30ms").replace("value = 10", "value = 17")).unwrap();
    let out = crosslayer(&["baseline", "--scenario", bad.to_str().unwrap(), "--profile", "1", "--phy", "A"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cqi out of 1..15"));

    fs::write(&bad, preset_text("a1_30ms").replace("seed = 42", "seed = 42\nspeed = 3")).unwrap();
    let out = crosslayer(&["baseline", "--scenario", bad.to_str().unwrap(), "--profile", "1", "--phy", "A"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("speed"));
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let out = crosslayer(&["baseline", "--scenario", "a1_30ms", "--profile", "1", "--phy", "A", "--out", blocker.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));

    let missing = dir.path().join("missing.bin");
    let out = crosslayer(&["eval", "--scenario", "a1_30ms", "--checkpoint", missing.to_str().unwrap(), "--out", dir.path().join("e").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn metric_rows_scale_with_ues() {
    let dir = tempfile::tempdir().unwrap();
    for (name, rows) in [("a1_30ms", 150), ("b2_30ms", 300)] {
        let run = dir.path().join(name);
        let out = crosslayer(&["baseline", "--scenario", name, "--profile", "3", "--phy", "B", "--out", run.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0));
        let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
        let mut lines = metrics.lines();
        assert_eq!(lines.next().unwrap(), crosslayer_cli::METRICS_HEADER);
        assert_eq!(lines.count(), rows);
        assert_eq!(fs::read_to_string(run.join("scenario.toml")).unwrap(), preset_text(name));
    }
}

#[test]
fn summary_matches_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("t");
    let out = crosslayer(&["train", "--scenario", "b2_30ms", "--episodes", "1", "--out", run.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(&run);
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    let mut per_window: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    let (mut met, mut rows) = (0usize, 0usize);
    for line in metrics.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let req: f64 = f[2].parse().unwrap();
        let obs: f64 = f[3].parse().unwrap();
        met += usize::from(obs <= req);
        rows += 1;
        per_window.entry(f[0].parse().unwrap()).or_default().push(f[15].parse().unwrap());
    }
    let total: f64 = per_window.values().map(|r| r.iter().sum::<f64>() / r.len() as f64).sum();
    assert_eq!(s["metric_rows"], rows.to_string());
    let reported: f64 = s["total_reward"].parse().unwrap();
    assert!((reported - total).abs() <= 1e-9 * total.max(1.0), "{reported} vs {total}");
    assert_eq!(s["compliance"].parse::<f64>().unwrap(), met as f64 / rows as f64);

    let episodes = fs::read_to_string(run.join("episodes.csv")).unwrap();
    let row: Vec<&str> = episodes.lines().nth(1).unwrap().split(',').collect();
    assert!((row[1].parse::<f64>().unwrap() - total).abs() <= 1e-9 * total.max(1.0));
}

#[test]
fn seed_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let no_seed = dir.path().join("s.toml");
    fs::write(&no_seed, preset_text("a1_30ms").replace("seed = 42\n", "")).unwrap();
    let with_seed = dir.path().join("s5.toml");
    fs::write(&with_seed, preset_text("a1_30ms").replace("seed = 42", "seed = 5")).unwrap();
    let cases = [(&no_seed, None, "42"), (&with_seed, None, "5"), (&with_seed, Some("9"), "9")];
    for (i, (file, flag, expected)) in cases.into_iter().enumerate() {
        let run = dir.path().join(format!("r{i}"));
        let mut args = vec!["baseline", "--scenario", file.to_str().unwrap(), "--profile", "1", "--phy", "A", "--out", run.to_str().unwrap()];
        if let Some(f) = flag {
            args.extend(["--seed", f]);
        }
        assert_eq!(crosslayer(&args).status.code(), Some(0));
        assert_eq!(summary(&run)["seed"], expected);
    }
}

#[test]
fn periodic_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("s.toml");
    fs::write(&file, format!("{}\n[training]\ncheckpoint_every = 1\n", preset_text("a1_30ms"))).unwrap();
    let run = dir.path().join("t");
    let out = crosslayer(&["train", "--scenario", file.to_str().unwrap(), "--episodes", "2", "--out", run.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["checkpoint_ep0001.bin", "checkpoint_ep0002.bin", "checkpoint.bin"] {
        assert!(run.join(f).exists(), "{f}");
    }
    assert_eq!(fs::read(run.join("checkpoint_ep0002.bin")).unwrap(), fs::read(run.join("checkpoint.bin")).unwrap());
    assert_eq!(fs::read_to_string(run.join("episodes.csv")).unwrap().lines().count(), 3);

    let eval = dir.path().join("e");
    let ck = run.join("checkpoint.bin");
    let out = crosslayer(&["eval", "--scenario", "a1_30ms", "--checkpoint", ck.to_str().unwrap(), "--episodes", "2", "--out", eval.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(fs::read_to_string(eval.join("metrics.csv")).unwrap().lines().count(), 301);

    let wrong = dir.path().join("w");
    let out = crosslayer(&["eval", "--scenario", "a2_24ms", "--checkpoint", ck.to_str().unwrap(), "--out", wrong.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("input dimension"));
}

#[test]
fn oracle_writes_sweep_table() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("o");
    let out = crosslayer(&["oracle", "--scenario", "a1_40ms", "--out", run.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let table = fs::read_to_string(run.join("oracle.csv")).unwrap();
    assert_eq!(table.lines().count(), 81);
    assert!(table.starts_with("action_index,phy_dl,phy_ul,mac,rlc_kb_0,fps_0,total_reward,compliance,feasible\n"));
    let s = summary(&run);
    assert_eq!(s["best_feasible"], "6");
}
