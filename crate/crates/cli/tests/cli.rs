use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn turnstile(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_turnstile"))
        .args(args)
        .current_dir(dir)
        .env_remove("TURNSTILE_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn read(path: impl AsRef<Path>) -> String {
    fs::read_to_string(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

/// Summary rows without the wall-time column, which is the only
/// nondeterministic output.
fn summary_without_time(path: impl AsRef<Path>) -> Vec<String> {
    read(path).lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect()
}

#[test]
fn run_writes_one_transcript_per_run_and_a_summary() {
    let tmp = TempDir::new().unwrap();
    let out = turnstile(
        tmp.path(),
        &[
            "run",
            "--p",
            "2",
            "--alpha",
            "0.5",
            "--m",
            "1000",
            "--adversary",
            "flip",
            "--runs",
            "10",
            "--k",
            "20",
            "--out",
            "o",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = tmp.path().join("o");
    for r in 0..10 {
        let t = read(dir.join(format!("run-{r:04}.csv")));
        let mut lines = t.lines();
        assert_eq!(lines.next(), Some("step,index,delta,output,true_value,correct,regime,words_used"));
        let truths: Vec<&str> = lines.map(|l| l.split(',').nth(4).unwrap()).collect();
        assert_eq!(truths.len(), 1000);
        assert!(truths.iter().enumerate().all(|(j, v)| *v == if j % 2 == 0 { "1" } else { "0" }));
    }
    let summary = read(dir.join("summary.csv"));
    let rows: Vec<&str> = summary.lines().collect();
    assert_eq!(rows[0], "run,all_correct,first_failure,max_words,wall_time");
    assert_eq!(rows.len(), 11);
    assert!(rows[1..].iter().all(|r| r.split(',').nth(1) == Some("true") && r.split(',').nth(2) == Some("NA")));
}

#[test]
fn same_seed_gives_identical_outputs() {
    let tmp = TempDir::new().unwrap();
    let args = |o: &'static str| {
        [
            "run",
            "--p",
            "1",
            "--m",
            "3000",
            "--adversary",
            "oscillator",
            "--T",
            "12",
            "--k",
            "20",
            "--runs",
            "3",
            "--seed",
            "9",
            "--out",
            o,
        ]
    };
    assert!(turnstile(tmp.path(), &args("a")).status.success());
    assert!(turnstile(tmp.path(), &args("b")).status.success());
    for r in 0..3 {
        let name = format!("run-{r:04}.csv");
        assert_eq!(
            fs::read(tmp.path().join("a").join(&name)).unwrap(),
            fs::read(tmp.path().join("b").join(&name)).unwrap()
        );
    }
    assert_eq!(
        summary_without_time(tmp.path().join("a/summary.csv")),
        summary_without_time(tmp.path().join("b/summary.csv"))
    );
    // A different seed changes the game.
    let mut other = args("c");
    other[14] = "10";
    assert!(turnstile(tmp.path(), &other).status.success());
    assert_ne!(
        fs::read(tmp.path().join("a/run-0000.csv")).unwrap(),
        fs::read(tmp.path().join("c/run-0000.csv")).unwrap()
    );
}

#[test]
fn sequential_and_parallel_runs_agree() {
    let tmp = TempDir::new().unwrap();
    let base = ["run", "--p", "0", "--m", "2000", "--adversary", "random", "--T", "10", "--k", "20", "--runs", "4"];
    let seq: Vec<&str> = base.iter().copied().chain(["--sequential", "--out", "s"]).collect();
    let par: Vec<&str> = base.iter().copied().chain(["--out", "p"]).collect();
    assert!(turnstile(tmp.path(), &seq).status.success());
    assert!(turnstile(tmp.path(), &par).status.success());
    for r in 0..4 {
        let name = format!("run-{r:04}.csv");
        assert_eq!(read(tmp.path().join("s").join(&name)), read(tmp.path().join("p").join(&name)));
    }
}

#[test]
fn bad_configurations_exit_with_two() {
    let tmp = TempDir::new().unwrap();
    let cases: &[&[&str]] = &[
        &["run", "--p", "2", "--m", "10^x"],
        &["run", "--p", "2", "--m", "100", "--bogus"],
        &["run", "--p", "3", "--m", "100"],
        &["run", "--p", "2"],
        &["run", "--p", "2", "--m", "100", "--alpha", "1.5"],
        &["run", "--p", "2", "--m", "100", "--T", "5"],
        &["run", "--p", "2", "--m", "100", "--k-scale", "2"],
        &["run", "--p", "2", "--m", "100", "--T", "20", "--auto-T"],
        &["run", "--p", "2", "--m", "100", "--stream-file", "missing.txt"],
        &["sweep", "--config", "missing.toml"],
    ];
    for args in cases {
        let out = turnstile(tmp.path(), args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn config_file_is_overridden_by_flags_and_rejects_unknown_keys() {
    let tmp = TempDir::new().unwrap();
    fs::write(
        tmp.path().join("exp.toml"),
        "p = 2.0\nm = \"10^3\"\nadversary = \"flip\"\nalgorithm = \"exact-oracle\"\nruns = 5\nout = \"from-file\"\n",
    )
    .unwrap();
    let out = turnstile(tmp.path(), &["run", "--config", "exp.toml", "--runs", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read(tmp.path().join("from-file/summary.csv")).lines().count(), 3);
    assert!(!tmp.path().join("from-file/run-0002.csv").exists());

    fs::write(tmp.path().join("bad.toml"), "p = 2.0\nm = 1000\nmystery = 1\n").unwrap();
    let out = turnstile(tmp.path(), &["run", "--config", "bad.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mystery"));
}

#[test]
fn output_directory_defaults_to_the_environment() {
    let tmp = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_turnstile"))
        .args(["run", "--p", "1", "--m", "50", "--algorithm", "exact-oracle"])
        .current_dir(tmp.path())
        .env("TURNSTILE_OUT_DIR", tmp.path().join("env-out"))
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(tmp.path().join("env-out/summary.csv").exists());
}

#[test]
fn stream_file_is_replayed() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("s.txt"), "# three inserts and a delete\n5 1\n7 1\n5 1\n7 -1\n").unwrap();
    let out = turnstile(
        tmp.path(),
        &["run", "--p", "2", "--stream-file", "s.txt", "--algorithm", "exact-oracle", "--out", "o"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let t = read(tmp.path().join("o/run-0000.csv"));
    let truths: Vec<&str> = t.lines().skip(1).map(|l| l.split(',').nth(4).unwrap()).collect();
    assert_eq!(truths, ["1", "2", "5", "4"]);

    fs::write(tmp.path().join("bad.txt"), "5 1\n5 x\n").unwrap();
    let out = turnstile(tmp.path(), &["run", "--p", "2", "--stream-file", "bad.txt"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn bare_sketch_falls_to_the_attack() {
    let tmp = TempDir::new().unwrap();
    let out = turnstile(
        tmp.path(),
        &[
            "run",
            "--p",
            "2",
            "--m",
            "5000",
            "--algorithm",
            "bare-sketch",
            "--adversary",
            "sketch",
            "--runs",
            "3",
            "--out",
            "o",
        ],
    );
    assert!(out.status.success());
    let summary = read(tmp.path().join("o/summary.csv"));
    assert!(summary.lines().skip(1).all(|r| r.split(',').nth(1) == Some("false")));
}

#[test]
fn sweep_reports_scaling_and_slopes() {
    let tmp = TempDir::new().unwrap();
    let out = turnstile(
        tmp.path(),
        &[
            "sweep",
            "--p",
            "1",
            "--m",
            "10^3,3000,10^4",
            "--auto-T",
            "--k-scale",
            "3e-7",
            "--adversary",
            "oscillator",
            "--out",
            "sw",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let scaling = read(tmp.path().join("sw/scaling.csv"));
    let rows: Vec<Vec<&str>> = scaling.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows.iter().map(|r| r[0]).collect::<Vec<_>>(), ["1000", "3000", "10000"]);
    // Independent fit of the reported points.
    let pts: Vec<(f64, f64)> =
        rows.iter().map(|r| (r[0].parse::<f64>().unwrap().ln(), r[5].parse::<f64>().unwrap().ln())).collect();
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / 3.0;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / 3.0;
    let slope =
        pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    let slopes = read(tmp.path().join("sw/slopes.csv"));
    let line = slopes.lines().nth(1).unwrap();
    let reported: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
    assert!(line.starts_with("T=auto,m,3,"));
    assert!((reported - slope).abs() < 1e-5);
    assert!(slope > 0.0);
}

#[test]
fn fixed_threshold_sparse_workload_has_flat_space() {
    let tmp = TempDir::new().unwrap();
    let out = turnstile(
        tmp.path(),
        &["sweep", "--p", "1", "--m", "10^3,10^4", "--T", "20", "--k", "20", "--adversary", "flip", "--out", "sw"],
    );
    assert!(out.status.success());
    let scaling = read(tmp.path().join("sw/scaling.csv"));
    let words: Vec<&str> = scaling.lines().skip(1).map(|l| l.split(',').nth(5).unwrap()).collect();
    assert_eq!(words[0], words[1]);
    assert!(read(tmp.path().join("sw/slopes.csv")).contains("T=20,m,2,0.000000"));
}

#[test]
fn single_point_sweep_matches_run() {
    let tmp = TempDir::new().unwrap();
    let common = ["--p", "2", "--m", "1500", "--T", "10", "--k", "20", "--adversary", "oscillator", "--runs", "2"];
    let run: Vec<&str> = ["run"].into_iter().chain(common).chain(["--out", "r"]).collect();
    let sweep: Vec<&str> = ["sweep"].into_iter().chain(common).chain(["--transcripts", "--out", "s"]).collect();
    assert!(turnstile(tmp.path(), &run).status.success());
    assert!(turnstile(tmp.path(), &sweep).status.success());
    let point = tmp.path().join("s/m1500_T10");
    assert_eq!(read(tmp.path().join("r/run-0001.csv")), read(point.join("run-0001.csv")));
    assert_eq!(summary_without_time(tmp.path().join("r/summary.csv")), summary_without_time(point.join("summary.csv")));
}
