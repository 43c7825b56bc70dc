use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const MICRO: &str = "\
horizon = 10
history = 10
embed_dim = 8
heads = 2
encoder_layers = 1
decoder_layers = 1
modalities = 2
map_waypoints = 4
batch_size = 4
";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_socialmpc"))
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = run(args, cwd);
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn setup() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("micro.toml"), MICRO).unwrap();
    std::fs::write(dir.path().join("short.toml"), "horizon_s = 20.0\n").unwrap();
    let p = dir.path().to_path_buf();
    (dir, p)
}

fn read(p: PathBuf) -> Vec<u8> {
    std::fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn losses(csv: &[u8]) -> Vec<f64> {
    String::from_utf8_lossy(csv)
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect()
}

#[test]
fn gen_data_is_reproducible_and_reports_count() {
    let (_d, p) = setup();
    let a = ok(&["gen-data", "--scenario", "short.toml", "--episodes", "2", "--out", "a.jsonl", "--seed", "5"], &p);
    ok(&["gen-data", "--scenario", "short.toml", "--episodes", "2", "--out", "b.jsonl", "--seed", "5"], &p);
    ok(&["gen-data", "--scenario", "short.toml", "--episodes", "2", "--out", "c.jsonl", "--seed", "6"], &p);
    assert!(stdout(&a).contains("frames from 2 episodes"));
    assert!(stderr(&a).contains("# seed = 5"));
    assert!(stderr(&a).contains("# resolved config"));
    let (fa, fb, fc) = (read(p.join("a.jsonl")), read(p.join("b.jsonl")), read(p.join("c.jsonl")));
    assert!(!fa.is_empty());
    assert_eq!(fa, fb);
    assert_ne!(fa, fc);
}

#[test]
fn validation_errors_exit_with_two() {
    let (_d, p) = setup();
    let o = run(&["gen-data", "--scenario", "missing.toml", "--out", "x.jsonl"], &p);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing.toml"));

    std::fs::write(p.join("bad.toml"), "no_such_key = 1\n").unwrap();
    let o = run(&["--config", "bad.toml", "gen-data", "--out", "x.jsonl"], &p);
    assert_eq!(o.status.code(), Some(2));

    std::fs::write(p.join("window.toml"), "ramp_start = 600.0\nramp_end = 500.0\n").unwrap();
    let o = run(&["gen-data", "--scenario", "window.toml", "--out", "x.jsonl"], &p);
    assert_eq!(o.status.code(), Some(2));

    let o = run(&["simulate", "--planner", "mpcformer", "--out", "sim"], &p);
    assert_eq!(o.status.code(), Some(2));

    let o = run(&["frobnicate"], &p);
    assert_eq!(o.status.code(), Some(2));

    std::fs::write(p.join("broken.jsonl"), "{not json}\n").unwrap();
    let o = run(&["predict", "--data", "broken.jsonl", "--out", "pred"], &p);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_writes_one_row_per_step_and_is_reproducible() {
    let (_d, p) = setup();
    ok(&["--config", "micro.toml", "gen-data", "--scenario", "short.toml", "--episodes", "1", "--egos", "2", "--out", "f.jsonl"], &p);
    // Micro data: a 20 s episode with a 10+10 step window gives several frames per vehicle.
    ok(&["--config", "micro.toml", "train", "--data", "f.jsonl", "--out", "full", "--steps", "200", "--max-val-frames", "1"], &p);
    let full = losses(&read(p.join("full/train_report.csv")));
    assert_eq!(full.len(), 200);
    assert!(full.iter().all(|l| l.is_finite()));

    ok(&["--config", "micro.toml", "train", "--data", "f.jsonl", "--out", "again", "--steps", "200", "--max-val-frames", "1"], &p);
    assert_eq!(read(p.join("full/train_report.csv")), read(p.join("again/train_report.csv")));
    assert_eq!(read(p.join("full/model.bin")), read(p.join("again/model.bin")));

    ok(&["--config", "micro.toml", "train", "--data", "f.jsonl", "--out", "flat", "--steps", "5", "--lr", "0"], &p);
    ok(&["--config", "micro.toml", "train", "--data", "f.jsonl", "--out", "flat2", "--steps", "5", "--lr", "0"], &p);
    assert_eq!(read(p.join("flat/model.bin")), read(p.join("flat2/model.bin")));
    let fresh = read(p.join("flat/checkpoints/epoch_0.bin"));
    assert_eq!(read(p.join("flat/model.bin")), fresh, "zero learning rate leaves the weights alone");
}

#[test]
fn resume_picks_up_where_training_stopped() {
    let (_d, p) = setup();
    std::fs::write(p.join("whole.toml"), format!("{MICRO}batch_size = 64\n").replace("batch_size = 4\n", "")).unwrap();
    ok(&["--config", "whole.toml", "gen-data", "--scenario", "short.toml", "--episodes", "1", "--egos", "1", "--out", "f.jsonl"], &p);
    // One batch holds the whole training split, so the loss depends on the weights only.
    ok(&["--config", "whole.toml", "train", "--data", "f.jsonl", "--out", "long", "--steps", "10", "--max-val-frames", "1"], &p);
    ok(&["--config", "whole.toml", "train", "--data", "f.jsonl", "--out", "first", "--steps", "5", "--max-val-frames", "1"], &p);
    ok(
        &["--config", "whole.toml", "train", "--data", "f.jsonl", "--out", "second", "--steps", "5", "--max-val-frames", "1", "--resume", "first/model.bin"],
        &p,
    );
    let long = losses(&read(p.join("long/train_report.csv")));
    let second = losses(&read(p.join("second/train_report.csv")));
    let rel = (second[0] - long[5]).abs() / long[5].abs();
    assert!(rel < 1e-9, "resumed {} vs uninterrupted {}", second[0], long[5]);
}

#[test]
fn predict_table_and_zero_model_matches_constant_velocity() {
    let (_d, p) = setup();
    ok(&["gen-data", "--scenario", "short.toml", "--episodes", "1", "--egos", "2", "--out", "f.jsonl"], &p);
    let o = ok(&["predict", "--data", "f.jsonl", "--out", "pred"], &p);
    assert!(stdout(&o).starts_with("predictor\tADE@1s"));
    let table = String::from_utf8(read(p.join("pred/errors.csv"))).unwrap();
    let rows: Vec<Vec<&str>> = table.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows[0], ["predictor", "ADE@1s", "ADE@2s", "ADE@3s", "ADE@4s", "ADE@5s", "FDE"]);
    assert_eq!(rows[1][0], "model");
    assert_eq!(rows[2][0], "constant_velocity");
    assert_eq!(rows[1][1..], rows[2][1..]);
    let preds = String::from_utf8(read(p.join("pred/predictions.jsonl"))).unwrap();
    let frames = String::from_utf8(read(p.join("f.jsonl"))).unwrap();
    assert_eq!(preds.lines().count(), frames.lines().count());

    let o = ok(&["predict", "--data", "f.jsonl", "--out", "pred2", "--json"], &p);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v[0]["ade"].as_array().unwrap().len(), 5);
}

#[test]
fn plan_prints_a_full_horizon() {
    let (_d, p) = setup();
    ok(&["gen-data", "--scenario", "short.toml", "--episodes", "1", "--egos", "1", "--out", "f.jsonl"], &p);
    let o = ok(&["plan", "--data", "f.jsonl", "--frame", "0"], &p);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["u_ego"].as_array().unwrap().len(), 50);
    assert_eq!(v["x_pred"].as_array().unwrap().len(), 51);
    assert_eq!(v["status"], "optimal");
    let o = run(&["plan", "--data", "f.jsonl", "--frame", "100000"], &p);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_then_evaluate_reproduces_outcomes() {
    let (_d, p) = setup();
    ok(&["simulate", "--scenario", "short.toml", "--episodes", "3", "--out", "pas"], &p);
    ok(&["simulate", "--scenario", "short.toml", "--episodes", "3", "--out", "pas2"], &p);
    for i in 0..3 {
        let name = format!("ep_{i:04}.jsonl");
        assert_eq!(read(p.join("pas").join(&name)), read(p.join("pas2").join(&name)));
    }
    let mut counted = [0usize; 3];
    for i in 0..3 {
        let s: serde_json::Value = serde_json::from_slice(&read(p.join(format!("pas/ep_{i:04}.summary.json")))).unwrap();
        match s["outcome"].as_str().unwrap() {
            "success" => counted[0] += 1,
            "failure" => counted[1] += 1,
            _ => counted[2] += 1,
        }
    }
    ok(&["evaluate", "--logs", "pas", "--out", "eval"], &p);
    ok(&["evaluate", "--logs", "pas", "--out", "eval2"], &p);
    assert_eq!(read(p.join("eval/report.json")), read(p.join("eval2/report.json")));
    let report: serde_json::Value = serde_json::from_slice(&read(p.join("eval/report.json"))).unwrap();
    let o = &report["pas"]["outcomes"];
    assert_eq!([o["success"].as_u64().unwrap(), o["failure"].as_u64().unwrap(), o["collision"].as_u64().unwrap()], counted.map(|c| c as u64));

    let mut rdr = csv::Reader::from_path(p.join("eval/outcomes.csv")).unwrap();
    let rec = rdr.records().next().unwrap().unwrap();
    assert_eq!(&rec[0], "pas");
    assert_eq!(rec[3].parse::<usize>().unwrap(), counted[0]);
    assert_eq!(rec[6].parse::<f64>().unwrap(), report["pas"]["success_pct"].as_f64().unwrap());

    ok(&["simulate", "--scenario", "short.toml", "--episodes", "3", "--out", "other", "--seed", "9"], &p);
    ok(&["evaluate", "--logs", "pas", "pas2", "--out", "paired", "--csv"], &p);
    assert!(!p.join("paired/report.json").exists());
    let paired = String::from_utf8(read(p.join("paired/paired.csv"))).unwrap();
    assert_eq!(paired.lines().count(), 4);
    let o = ok(&["evaluate", "--logs", "pas", "other", "--out", "unpaired"], &p);
    assert!(stdout(&o).contains("paired 0 episodes"));
}
