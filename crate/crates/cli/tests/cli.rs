use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use predator_core::events::{parse_events, write_csv, Event, EventFormat, Polarity};

fn predator(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_predator"))
        .args(args)
        .output()
        .expect("spawn predator")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&predator(&[])), 1);
    assert_eq!(code(&predator(&["no-such-command"])), 1);
    assert_eq!(code(&predator(&["sim", "--seed", "x"])), 1);
    assert_eq!(code(&predator(&["--help"])), 0);
}

#[test]
fn missing_input_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = predator(&["filter", "--input", "/nonexistent/ev.csv", "--output", p(&dir.path().join("o.csv"))]);
    assert_eq!(code(&out), 2);
    let out = predator(&["infer", "--weights", "/nonexistent/w.txt", "--frame", "/nonexistent/f.pgm"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn bad_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"duration_s": -1}"#).unwrap();
    assert_eq!(code(&predator(&["sim", "--config", p(&cfg)])), 1);
    fs::write(&cfg, "not json").unwrap();
    assert_eq!(code(&predator(&["sim", "--config", p(&cfg)])), 1);
}

#[test]
fn filter_drops_isolated_events() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.csv");
    let output = dir.path().join("out.csv");
    let events = vec![
        Event::new(0, 10, 10, Polarity::On),
        Event::new(100, 11, 10, Polarity::On),
        Event::new(50_000, 200, 150, Polarity::Off),
    ];
    fs::write(&input, write_csv(&events)).unwrap();
    let out = predator(&["filter", "--input", p(&input), "--output", p(&output)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let kept = parse_events(&fs::read(&output).unwrap(), EventFormat::Csv).unwrap();
    assert_eq!(kept, vec![events[1]]);
}

#[test]
fn sim_trace_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let csv = dir.path().join(format!("{name}.csv"));
        let json = dir.path().join(format!("{name}.json"));
        let out = predator(&["sim", "--seed", "3", "--duration", "2", "--out", p(&csv), "--summary", p(&json)]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        (fs::read(csv).unwrap(), fs::read(json).unwrap())
    };
    let a = run("a");
    let b = run("b");
    assert_eq!(a, b);
    let summary: serde_json::Value = serde_json::from_slice(&a.1).unwrap();
    assert_eq!(summary["seed"], 3);
    let header = String::from_utf8(a.0).unwrap();
    assert!(header.lines().count() > 1000);
    assert!(header.starts_with("t,"));
}

#[test]
fn synth_train_infer_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = predator(&["synth-data", "--out", p(&data), "--n", "24", "--seed", "5"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = data.join("manifest.json");
    assert!(manifest.exists());

    let weights = dir.path().join("w.txt");
    let out = predator(&[
        "train", "--manifest", p(&manifest), "--out", p(&weights), "--epochs", "1", "--test", p(&manifest),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("accuracy"));

    let frame = data.join("frames").join("000000.pgm");
    let infer = |w: &Path| predator(&["infer", "--weights", p(w), "--frame", p(&frame)]);
    let a = infer(&weights);
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    let text = String::from_utf8(a.stdout.clone()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 14);
    let total: f64 = lines[..10]
        .iter()
        .map(|l| l.split_whitespace().nth(1).unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((total - 1.0).abs() < 1e-5, "{total}");
    assert!(lines[10].starts_with("decision "));
    assert_eq!(infer(&weights).stdout, a.stdout);
}

#[test]
fn divergent_training_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(code(&predator(&["synth-data", "--out", p(&data), "--n", "16"])), 0);
    let manifest = data.join("manifest.json");
    let weights = dir.path().join("w.txt");
    let out = predator(&["train", "--manifest", p(&manifest), "--out", p(&weights), "--epochs", "1"]);
    assert_eq!(code(&out), 0);

    // Finite but absurd weights overflow the forward pass.
    let blown: String = fs::read_to_string(&weights)
        .unwrap()
        .lines()
        .map(|l| {
            if l.starts_with(|c: char| c == '-' || c.is_ascii_digit()) {
                l.split_whitespace()
                    .map(|v| format!("{:e}", v.parse::<f64>().unwrap() * 1e200))
                    .collect::<Vec<_>>()
                    .join(" ")
            } else {
                l.to_string()
            }
        })
        .map(|l| l + "\n")
        .collect();
    let init = dir.path().join("blown.txt");
    fs::write(&init, blown).unwrap();
    let out = predator(&[
        "train", "--manifest", p(&manifest), "--init", p(&init), "--out", p(&dir.path().join("w2.txt")), "--epochs", "1",
    ]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}
