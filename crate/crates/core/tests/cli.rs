use std::path::Path;

use taskquant::harness::cli::run_cli_with;
use taskquant::harness::{format, CSV_HEADER};

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("tbq").chain(args.iter().copied());
    let code = run_cli_with(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

const ISI: &str = "scenario = isi\nmethods = task_based, mmse_then_quantize\ntrials = 500\nseed = 9\n\
                   [sweep]\ngrid = 8/120, 16/120, 24/120\n[design]\np = 8\neta = 3\n";

#[test]
fn sweep_writes_csv_with_fixed_header() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "isi.cfg", ISI);
    let out = dir.path().join("out.csv");
    let (code, _, _) = run(&["sweep", "--config", &cfg, "--output", out.to_str().unwrap()]);
    assert_eq!(code, 0);
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], CSV_HEADER);
    // two methods plus the bound row at each of three points
    assert_eq!(lines.len(), 1 + 3 * 3);
    assert_eq!(lines.iter().filter(|l| l.contains(",task_based,")).count(), 3);
    assert_eq!(lines.iter().filter(|l| l.contains(",bound,")).count(), 3);
    assert!(!text.contains('\r'));
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "isi.cfg", ISI);
    let (code, a, _) = run(&["simulate", "--config", &cfg, "--trials", "50", "--seed", "1"]);
    assert_eq!(code, 0);
    let (_, b, _) = run(&["simulate", "--config", &cfg, "--trials", "50", "--seed", "2"]);
    assert_ne!(a, b);
    assert!(a.lines().skip(1).all(|l| l.ends_with(",50") || l.contains(",bound,")));
}

#[test]
fn bound_single_eigenvalue() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "b.cfg", "[sweep]\ngrid = 1\n[bound]\neigenvalues = 2\nmmse_floor = 0.5\nn = 1\n");
    let (code, out, err) = run(&["bound", "--config", &cfg]);
    assert_eq!(code, 0, "{err}");
    let line = out.lines().nth(1).unwrap();
    let estimate: f64 = line.split(',').nth(3).unwrap().parse().unwrap();
    assert!((estimate - (0.5 + 2.0 / 4.0)).abs() < 1e-12);
}

#[test]
fn missing_config_is_a_config_error_naming_the_path() {
    let (code, _, err) = run(&["sweep", "--config", "/no/such/dir/exp.cfg"]);
    assert_eq!(code, 1);
    assert!(err.contains("/no/such/dir/exp.cfg"), "{err}");
}

#[test]
fn bad_config_line_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.cfg", "scenario = isi\n[sweep]\ngrid = 1\nbogus = 3\n");
    let (code, _, err) = run(&["sweep", "--config", &cfg]);
    assert_eq!(code, 1);
    assert!(err.contains("bad.cfg:4"), "{err}");
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&["sweep", "--frobnicate"]).0, 1);
    assert_eq!(run(&["launch"]).0, 1);
    assert_eq!(run(&[]).0, 1);
    assert_eq!(run(&["--help"]).0, 0);
}

#[test]
fn divergent_training_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "div.cfg",
        "scenario = isi\ntrials = 100\n[sweep]\ngrid = 1\n[train]\nlearning_rate = 1e9\nepochs = 3\nsamples = 256\n",
    );
    let (code, _, err) = run(&["train", "--config", &cfg]);
    assert_eq!(code, 2, "{err}");
}

#[test]
fn design_train_and_harden_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "t.cfg",
        "scenario = isi\ntrials = 200\n[sweep]\ngrid = 16/120\n[design]\np = 8\n[train]\nepochs = 2\nsamples = 512\n",
    );
    let design_file = dir.path().join("d.tbq");
    let (code, out, err) = run(&["design", "--config", &cfg, "--output", design_file.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("levels = 4"));
    let d = format::load_design(&design_file).unwrap();
    assert_eq!((d.p(), d.n(), d.k()), (8, 120, 8));
    assert_eq!(&std::fs::read(&design_file).unwrap()[..4], b"TBQ1");

    let model = dir.path().join("net.tbq");
    let (code, out, err) = run(&["train", "--config", &cfg, "--output", model.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("hardened test mse"));
    let (code, out, err) = run(&["harden", model.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(out.lines().filter(|l| l.starts_with("channel ")).count(), 8);

    let (code, _, _) = run(&["harden", dir.path().join("none.tbq").to_str().unwrap()]);
    assert_eq!(code, 1);
}
