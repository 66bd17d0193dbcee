//! The `mgadn` binary driven as a user would, through its subcommands.

#![allow(clippy::needless_range_loop)]

use std::path::{Path, PathBuf};
use std::process::Command;

use mgadn::plot::Layout;
use mgadn::scoring::parse_score_csv;

struct Out {
    ok: bool,
    stdout: String,
    stderr: String,
}

fn mgadn(args: &[&str]) -> Out {
    let o = Command::new(env!("CARGO_BIN_EXE_mgadn")).args(args).output().unwrap();
    Out {
        ok: o.status.success(),
        stdout: String::from_utf8(o.stdout).unwrap(),
        stderr: String::from_utf8(o.stderr).unwrap(),
    }
}

fn ok(args: &[&str]) -> String {
    let o = mgadn(args);
    assert!(o.ok, "mgadn {args:?} failed: {}{}", o.stdout, o.stderr);
    o.stdout
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        Fixture {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn synth(&self, name: &str, seed: u64) -> PathBuf {
        let p = self.path(name);
        ok(&[
            "synth",
            "--sensors",
            "5",
            "--steps",
            "600",
            "--seed",
            &seed.to_string(),
            "--out",
            s(&p),
        ]);
        p
    }

    fn train(&self, data: &Path, name: &str, extra: &[&str]) -> (PathBuf, String) {
        let p = self.path(name);
        let mut args = vec![
            "train",
            "--data",
            s(data),
            "--out",
            s(&p),
            "--epochs",
            "2",
            "--k",
            "2",
            "--embed-dim",
            "4",
        ];
        args.extend_from_slice(extra);
        let stdout = ok(&args);
        (p, stdout)
    }
}

fn read_matrix(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().unwrap().split(',').skip(1).map(str::to_owned).collect();
    let rows = lines
        .map(|l| l.split(',').skip(1).map(|v| v.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

fn attr(svg: &str, key: &str) -> f64 {
    let start = svg.find(&format!("{key}=\"")).unwrap() + key.len() + 2;
    let end = start + svg[start..].find('"').unwrap();
    svg[start..end].parse().unwrap()
}

#[test]
fn synth_train_eval_graph_plot_round_trip() {
    let fx = Fixture::new();
    let data = fx.synth("data.csv", 1);
    let log = fx.path("train.log");
    let (ckpt, stdout) = fx.train(&data, "model.json", &["--log", s(&log)]);
    let epoch_lines: Vec<&str> = stdout.lines().filter(|l| l.starts_with("epoch=")).collect();
    assert_eq!(epoch_lines.len(), 2);
    for key in ["l_pred=", "l_recon=", "alpha=", "wall_ms="] {
        assert!(epoch_lines[0].contains(key));
    }
    assert_eq!(std::fs::read_to_string(&log).unwrap().lines().count(), 2);
    assert!(stdout.contains("threshold=") && stdout.contains("wrote checkpoint"));

    let scores = fx.path("scores.csv");
    let eval = ok(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&data),
        "--out",
        s(&scores),
        "--per-sensor",
    ]);
    assert!(eval.contains("precision=") && eval.contains("f1="), "{eval}");
    let text = std::fs::read_to_string(&scores).unwrap();
    let trace = parse_score_csv(&text).unwrap();
    assert_eq!(trace.t.len(), 120);
    assert!(trace.label.is_some());
    assert!(text.lines().nth(1).unwrap().contains("pred_s0"));

    let graph = fx.path("graph");
    std::fs::create_dir(&graph).unwrap();
    ok(&["export-graph", "--checkpoint", s(&ckpt), "--out-dir", s(&graph)]);
    let (names, adj) = read_matrix(&graph.join("adjacency.csv"));
    assert_eq!(names.len(), 5);
    for i in 0..5 {
        let incoming: f64 = (0..5).map(|j| adj[j][i]).sum();
        assert_eq!(incoming, 2.0, "destination {i}");
        assert_eq!(adj[i][i], 0.0);
    }
    let (_, sim) = read_matrix(&graph.join("similarity.csv"));
    for i in 0..5 {
        assert!((sim[i][i] - 1.0).abs() <= 1e-12);
        for j in 0..5 {
            assert_eq!(sim[i][j], sim[j][i]);
        }
    }

    let svg_path = fx.path("scores.svg");
    ok(&["plot", "--scores", s(&scores), "--out", s(&svg_path)]);
    let svg = std::fs::read_to_string(&svg_path).unwrap();
    let lay = Layout {
        t_min: attr(&svg, "data-t-min"),
        t_max: attr(&svg, "data-t-max"),
        y_min: attr(&svg, "data-y-min"),
        y_max: attr(&svg, "data-y-max"),
    };
    let line = &svg[svg.find("class=\"threshold\"").unwrap()..];
    assert_eq!(attr(line, "data-threshold"), trace.threshold);
    let back = lay.value_of(attr(line, "y1"));
    assert!((back - trace.threshold).abs() <= 1e-9 * (1.0 + trace.threshold.abs()));
    ok(&["plot", "--scores", s(&scores), "--out", s(&fx.path("again.svg"))]);
    assert_eq!(std::fs::read(fx.path("again.svg")).unwrap(), svg.as_bytes());
}

#[test]
fn synth_output_depends_only_on_its_arguments() {
    let fx = Fixture::new();
    let a = std::fs::read(fx.synth("a.csv", 4)).unwrap();
    let b = std::fs::read(fx.synth("b.csv", 4)).unwrap();
    let c = std::fs::read(fx.synth("c.csv", 5)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    let header = String::from_utf8(a).unwrap().lines().next().unwrap().to_owned();
    assert_eq!(header, "s0,s1,s2,s3,s4,label");
}

#[test]
fn validation_split_has_no_alarms_and_unlabelled_data_skips_metrics() {
    let fx = Fixture::new();
    let data = fx.synth("data.csv", 2);
    let (ckpt, _) = fx.train(&data, "model.json", &[]);
    let out = ok(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&data),
        "--split",
        "val",
        "--out",
        s(&fx.path("v.csv")),
    ]);
    assert!(out.contains("alarms=0"), "{out}");

    let text = std::fs::read_to_string(&data).unwrap();
    let stripped: String = text
        .lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_owned() + "\n")
        .collect();
    let unlabelled = fx.path("unlabelled.csv");
    std::fs::write(&unlabelled, stripped).unwrap();
    let out = ok(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&unlabelled),
        "--out",
        s(&fx.path("u.csv")),
    ]);
    assert!(out.contains("no labels in data: metrics skipped"), "{out}");
    assert!(!out.contains("precision="));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let fx = Fixture::new();
    let data = fx.synth("data.csv", 3);
    let cfg = fx.path("run.toml");
    std::fs::write(&cfg, "epochs = 1\nk = 2\nembed_dim = 4\n").unwrap();
    let only_file = ok(&[
        "train",
        "--data",
        s(&data),
        "--out",
        s(&fx.path("a.json")),
        "--config",
        s(&cfg),
    ]);
    assert_eq!(only_file.lines().filter(|l| l.starts_with("epoch=")).count(), 1);
    let flagged = ok(&[
        "train",
        "--data",
        s(&data),
        "--out",
        s(&fx.path("b.json")),
        "--config",
        s(&cfg),
        "--epochs",
        "3",
    ]);
    assert_eq!(flagged.lines().filter(|l| l.starts_with("epoch=")).count(), 3);

    std::fs::write(&cfg, "epocs = 1\n").unwrap();
    let bad = mgadn(&[
        "train",
        "--data",
        s(&data),
        "--out",
        s(&fx.path("c.json")),
        "--config",
        s(&cfg),
    ]);
    assert!(!bad.ok);
    assert!(bad.stderr.contains("error:"), "{}", bad.stderr);
    assert!(!fx.path("c.json").exists());
}

#[test]
fn graph_export_needs_a_forecast_head() {
    let fx = Fixture::new();
    let data = fx.synth("data.csv", 6);
    let (ckpt, _) = fx.train(&data, "model.json", &["--no-pred-head"]);
    let graph = fx.path("graph");
    std::fs::create_dir(&graph).unwrap();
    let o = mgadn(&["export-graph", "--checkpoint", s(&ckpt), "--out-dir", s(&graph)]);
    assert!(!o.ok);
    assert!(o.stderr.contains("no forecast head"), "{}", o.stderr);
    assert_eq!(std::fs::read_dir(&graph).unwrap().count(), 0);
}

#[test]
fn bad_inputs_fail_without_writing_outputs() {
    let fx = Fixture::new();
    let empty = fx.path("empty.csv");
    std::fs::write(&empty, "").unwrap();
    let svg = fx.path("out.svg");
    let o = mgadn(&["plot", "--scores", s(&empty), "--out", s(&svg)]);
    assert!(!o.ok && o.stderr.starts_with("error:"));
    assert!(!svg.exists());

    let header_only = fx.path("header.csv");
    std::fs::write(&header_only, "# threshold=1.0\nt,A,verdict\n").unwrap();
    assert!(!mgadn(&["plot", "--scores", s(&header_only), "--out", s(&svg)]).ok);
    assert!(!svg.exists());

    let data = fx.synth("data.csv", 7);
    let (ckpt, _) = fx.train(&data, "model.json", &[]);
    let other = fx.path("other.csv");
    ok(&["synth", "--sensors", "4", "--steps", "600", "--out", s(&other)]);
    let scores = fx.path("scores.csv");
    let o = mgadn(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&other),
        "--out",
        s(&scores),
    ]);
    assert!(!o.ok && o.stderr.contains("do not match"), "{}", o.stderr);
    assert!(!scores.exists());

    let missing = mgadn(&[
        "train",
        "--data",
        s(&fx.path("nope.csv")),
        "--out",
        s(&fx.path("m.json")),
    ]);
    assert!(!missing.ok && missing.stderr.contains("nope.csv"));

    let garbled = fx.path("garbled.json");
    std::fs::write(&garbled, "{\"format\":\"something-else\",\"version\":1}").unwrap();
    let o = mgadn(&[
        "eval",
        "--checkpoint",
        s(&garbled),
        "--data",
        s(&data),
        "--out",
        s(&scores),
    ]);
    assert!(!o.ok && o.stderr.contains("checkpoint"), "{}", o.stderr);
}
