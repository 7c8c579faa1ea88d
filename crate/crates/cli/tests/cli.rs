use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hava(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hava"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn toy_table_writes_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let o = hava(tmp.path(), &["toy-table", "--out", "t"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("best pi_R"));
    let csv = fs::read_to_string(tmp.path().join("t/table1.csv")).unwrap();
    assert_eq!(csv.lines().count(), 8);
    assert!(csv.starts_with("alpha,recovery_steps,pi_R,pi_Y,pi_G,best"));
}

#[test]
fn single_alpha_gives_one_row() {
    let tmp = tempfile::tempdir().unwrap();
    let o = hava(tmp.path(), &["toy-table", "--alphas", "10", "--out", "t"]);
    assert!(o.status.success());
    let csv = fs::read_to_string(tmp.path().join("t/table1.csv")).unwrap();
    let row: Vec<f64> = csv
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .skip(2)
        .take(3)
        .map(|v| v.parse().unwrap())
        .collect();
    for (j, p) in row.iter().zip([86.0, 76.0, 67.0]) {
        assert!((j - p).abs() <= 1.0, "{row:?}");
    }
}

#[test]
fn empty_alpha_list_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = hava(tmp.path(), &["toy-table", "--alphas", ""]);
    assert!(!o.status.success());

    fs::write(tmp.path().join("c.json"), r#"{"alphas": []}"#).unwrap();
    let o = hava(tmp.path(), &["toy-table", "c.json"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("usage"), "{}", stderr(&o));
}

#[test]
fn config_errors_report_line() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("c.json"),
        "{\n  \"alpha\": 1,\n  \"alpah\": 2\n}",
    )
    .unwrap();
    let o = hava(tmp.path(), &["toy-table", "c.json"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn eval_before_training_fails_with_hint() {
    let tmp = tempfile::tempdir().unwrap();
    let o = hava(tmp.path(), &["eval", "--out", "nothing"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("hava train"), "{}", stderr(&o));
}

#[test]
fn train_without_dd_model_fails_with_hint() {
    let tmp = tempfile::tempdir().unwrap();
    let o = hava(tmp.path(), &["train", "--out", "x"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("fit-dd"), "{}", stderr(&o));
}

#[test]
fn gen_humans_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    for dir in ["a", "b"] {
        let o = hava(tmp.path(), &["gen-humans", "--out", dir]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).contains("100 human trajectories"));
    }
    let read = |d: &str| fs::read(tmp.path().join(d).join("humans_manifest.json")).unwrap();
    assert_eq!(read("a"), read("b"));
    let files = fs::read_dir(tmp.path().join("a/trajectories"))
        .unwrap()
        .count();
    assert_eq!(files, 100);

    let o = hava(tmp.path(), &["gen-humans", "--out", "c", "--seed", "8"]);
    assert!(o.status.success());
    assert_ne!(read("a"), read("c"));
}

#[test]
fn profile_count_sets_file_count() {
    let tmp = tempfile::tempdir().unwrap();
    let profiles: Vec<String> = (0..5)
        .map(|i| format!(r#"{{"max_speed_kmh": {}, "max_accel_kmh": 1.2}}"#, 48 + i))
        .collect();
    let cfg = format!(
        r#"{{"humans": {{"profiles": [{}], "episodes_per_profile": 20}}}}"#,
        profiles.join(",")
    );
    fs::write(tmp.path().join("c.json"), cfg).unwrap();
    let o = hava(tmp.path(), &["gen-humans", "c.json", "--out", "h"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read_dir(tmp.path().join("h/trajectories"))
            .unwrap()
            .count(),
        100
    );
}

#[test]
fn fit_dd_refuses_a_foreign_model_without_force() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(hava(tmp.path(), &["gen-humans", "--out", "d"])
        .status
        .success());
    assert!(hava(tmp.path(), &["fit-dd", "--out", "d"]).status.success());
    // refitting on the same data is fine
    assert!(hava(tmp.path(), &["fit-dd", "--out", "d"]).status.success());

    assert!(
        hava(tmp.path(), &["gen-humans", "--out", "d", "--seed", "99"])
            .status
            .success()
    );
    let o = hava(tmp.path(), &["fit-dd", "--out", "d"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("--force"), "{}", stderr(&o));
    assert!(hava(tmp.path(), &["fit-dd", "--out", "d", "--force"])
        .status
        .success());
}

#[test]
fn grid_training_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = r#"{"environment": "grid", "alpha": 10, "runs": 2,
        "train": {"episodes": 500, "epsilon_decay": 0.99}}"#;
    fs::write(tmp.path().join("g.json"), cfg).unwrap();
    for dir in ["a", "b"] {
        let o = hava(tmp.path(), &["train", "g.json", "--out", dir]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(hava(tmp.path(), &["eval", "g.json", "--out", dir])
            .status
            .success());
    }
    for f in [
        "curves.csv",
        "train_manifest.json",
        "eval_report.json",
        "q_tables/seed_1.json",
        "trajectories/agent_s0_greedy.csv",
    ] {
        let a = fs::read(tmp.path().join("a").join(f)).unwrap();
        let b = fs::read(tmp.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    let curves = fs::read_to_string(tmp.path().join("a/curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 1 + 2 * 500);
}

#[test]
fn reputation_trace_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let o = hava(
        tmp.path(),
        &[
            "reputation-trace",
            "--alphas",
            "10,0.1",
            "--steps",
            "50",
            "--out",
            "r",
        ],
    );
    assert!(o.status.success());
    assert!(stdout(&o).contains("45 steps"));
    let csv = fs::read_to_string(tmp.path().join("r/reputation_trace.csv")).unwrap();
    let last = csv.lines().last().unwrap();
    assert_eq!(last, "50,1,1");
    assert_eq!(csv.lines().count(), 52);
}
