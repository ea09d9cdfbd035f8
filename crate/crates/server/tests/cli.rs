use std::path::Path;
use std::process::{Command, Output};

fn gazeboard(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_gazeboard")).args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "gazeboard {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_evaluate_export_split_replay() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    gazeboard(&["simulate", "--store", arg(&store), "--sessions", "2", "--wearers", "2", "--seed", "3"]);
    gazeboard(&["simulate", "--store", arg(&store), "--mode", "standard", "--sessions", "1", "--wearers", "1", "--seed", "4"]);

    let report = dir.path().join("report");
    let out = gazeboard(&[
        "evaluate",
        "--store",
        arg(&store),
        "--condition",
        "gamified",
        "--compare",
        "standard",
        "--out",
        arg(&report),
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("condition gamified"));
    for f in ["report.json", "errors.csv", "boxplot.csv", "scatter.csv"] {
        assert!(report.join(f).is_file(), "{f} missing");
    }

    let export = dir.path().join("export");
    gazeboard(&["export", "--store", arg(&store), "--out", arg(&export), "--eyetracker", "all"]);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(export.join("manifest.json")).unwrap()).unwrap();
    // 2 pairs of 2 words x 3 hidden letters, plus 50 standard stimuli
    assert_eq!(manifest["samples"].as_array().unwrap().len(), 2 * 6 + 50);

    let split = dir.path().join("split.json");
    gazeboard(&["split", "--dataset", arg(&export), "--folds", "3", "--out", arg(&split)]);
    let split: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&split).unwrap()).unwrap();
    assert_eq!(split["k"], 3);

    let sessions: Vec<String> = std::fs::read_dir(store.join("sessions"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(sessions.len(), 3);
    for s in &sessions {
        let out = gazeboard(&["replay", "--store", arg(&store), "--session", s]);
        assert!(String::from_utf8_lossy(&out.stdout).contains("events replayed"));
    }
}

#[test]
fn replay_of_unknown_session_fails() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    gazeboard(&["simulate", "--store", arg(&store), "--sessions", "1", "--seed", "1"]);
    let out = Command::new(env!("CARGO_BIN_EXE_gazeboard"))
        .args(["replay", "--store", arg(&store), "--session", "nope"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
