use std::collections::BTreeSet;
use std::path::Path;

use spinosc::cli::{main_with_args, parse_config, Config};

fn run(args: &[&str]) -> i32 {
    let mut all = vec!["spinosc"];
    all.extend_from_slice(args);
    main_with_args(all)
}

fn listing(dir: &Path) -> BTreeSet<String> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect()
}

#[test]
fn written_config_reads_back() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.conf");
    let mut cfg = Config::default();
    cfg.set("feedback.theta", "90").unwrap();
    cfg.set("feedback.gain", "2500.5").unwrap();
    cfg.set("sim.seed", "42").unwrap();
    std::fs::write(&path, cfg.to_text()).unwrap();
    assert_eq!(parse_config(&path).unwrap(), cfg);
}

#[test]
fn bad_config_fails_with_key_in_message() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.conf");
    std::fs::write(&path, "# comment\n\ncoupling.q = 0.5\n").unwrap();
    let e = parse_config(&path).unwrap_err().to_string();
    assert!(e.contains("coupling.q"), "{e}");
    assert!(e.contains(":3:"), "{e}");
    let out = dir.path().join("out");
    let code = run(&[
        "simulate",
        "--config",
        path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_ne!(code, 0);
    assert!(!out.exists());
}

#[test]
fn malformed_input_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.csv");
    std::fs::write(&input, "t,mx_rb\n0,1\n0.001,oops\n").unwrap();
    let e = spinosc::series::TimeSeries::read_csv(&input)
        .unwrap_err()
        .to_string();
    assert!(e.contains(":3:"), "{e}");
    let out = dir.path().join("out");
    assert_ne!(
        run(&[
            "analyze",
            input.to_str().unwrap(),
            "--out",
            out.to_str().unwrap()
        ]),
        0
    );
}

#[test]
fn seeded_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let code = run(&[
            "simulate",
            "--seed",
            "11",
            "--set",
            "sim.loop=closed",
            "--set",
            "feedback.gain=2000",
            "--set",
            "feedback.noise_std=1e-7",
            "--set",
            "sim.duration=20",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        csv.push(std::fs::read(out.join("timeseries.csv")).unwrap());
    }
    assert_eq!(csv[0], csv[1]);
}

#[test]
fn outputs_stay_inside_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("nested").join("out");
    let code = run(&[
        "simulate",
        "--set",
        "sim.duration=20",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    assert_eq!(listing(dir.path()), BTreeSet::from(["nested".to_string()]));
    let files = listing(&out);
    let manifest = std::fs::read_to_string(out.join("manifest.txt")).unwrap();
    let mut listed: BTreeSet<String> = manifest
        .lines()
        .filter_map(|l| l.strip_prefix("output = "))
        .map(str::to_string)
        .collect();
    listed.insert("manifest.txt".into());
    assert_eq!(files, listed);
    assert!(manifest.contains("command = simulate"));
    assert!(manifest.contains("sim.duration = 20\n"));
}

#[test]
fn analyze_reads_simulate_output() {
    let dir = tempfile::tempdir().unwrap();
    let sim_out = dir.path().join("sim");
    assert_eq!(
        run(&[
            "simulate",
            "--set",
            "sim.duration=20",
            "--out",
            sim_out.to_str().unwrap()
        ]),
        0
    );
    let out = dir.path().join("an");
    let input = sim_out.join("timeseries.csv");
    assert_eq!(
        run(&[
            "analyze",
            input.to_str().unwrap(),
            "--out",
            out.to_str().unwrap()
        ]),
        0
    );
    let summary = std::fs::read_to_string(out.join("summary.txt")).unwrap();
    let f: f64 = summary
        .lines()
        .find_map(|l| l.strip_prefix("fit.freq_hz = "))
        .unwrap()
        .parse()
        .unwrap();
    let expected = Config::default().sys.xe_open_loop_frequency();
    assert!((f - expected).abs() < 1e-3, "{f} vs {expected}");
}

#[test]
fn unknown_subcommand_is_usage_error() {
    assert_eq!(run(&["teleport"]), 2);
}
