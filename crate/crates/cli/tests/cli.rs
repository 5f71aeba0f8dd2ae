use std::path::PathBuf;
use std::process::Command;

fn polling() -> Command {
    Command::new(env!("CARGO_BIN_EXE_polling"))
}

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn scratch(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("polling-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

#[test]
fn screen_reports_stability_and_cycle() {
    let out = polling().args(["screen", "--scenario"]).arg(scenario("asym_var.json")).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("rho = 0.6400"), "{text}");
    assert!(text.contains("PureBowTie"));
    assert!(text.contains("recommended capacity"));

    let out = polling().args(["screen", "--json", "--scenario"]).arg(scenario("slow_mode.json")).output().unwrap();
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["cycle"]["kind"], "TruncatedBowTie");
    assert!((v["cycle"]["slow_mode_value"].as_f64().unwrap() + 1.03).abs() < 1e-9);
}

#[test]
fn unstable_scenario_fails() {
    let dir = scratch("unstable");
    std::fs::create_dir_all(&dir).unwrap();
    let text = std::fs::read_to_string(scenario("slow_mode.json")).unwrap().replace("\"lambda1\": 1.5", "\"lambda1\": 15.0");
    let path = dir.join("bad.json");
    std::fs::write(&path, text).unwrap();
    let out = polling().args(["screen", "--scenario"]).arg(&path).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unstable"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn solve_writes_only_the_policy() {
    let dir = scratch("solve");
    let out = polling()
        .args(["solve", "--model", "ctmdp", "--algo", "value-iteration", "--scenario"])
        .arg(scenario("slow_mode.json"))
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let files: Vec<_> = std::fs::read_dir(&dir).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(files, vec!["policy_ctmdp.csv"]);
    let csv = std::fs::read_to_string(dir.join("policy_ctmdp.csv")).unwrap();
    assert!(csv.starts_with("n1,n2,l1,action"));
    assert_eq!(csv.lines().count(), 1 + 41 * 41 * 2);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn simulate_then_test_is_reproducible() {
    let run = |dir: &PathBuf| {
        let out = polling()
            .args(["simulate", "--policies", "exhaustive,heuristic", "--rollouts", "200", "--horizon", "50", "--seed", "7", "--workers", "2", "--scenario"])
            .arg(scenario("slow_mode.json"))
            .arg("--out")
            .arg(dir)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let out = polling().args(["test", "--input"]).arg(dir).output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    };
    let (a, b) = (scratch("sim-a"), scratch("sim-b"));
    run(&a);
    run(&b);
    for f in ["eta_exhaustive.csv", "eta_heuristic.csv", "summary.csv", "pearson.csv", "test_welch.csv", "test_mann-whitney.csv", "test_student.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(std::fs::read_to_string(a.join("eta_heuristic.csv")).unwrap().lines().count(), 201);
    std::fs::remove_dir_all(&a).ok();
    std::fs::remove_dir_all(&b).ok();
}

#[test]
fn rejects_unknown_policy() {
    let out = polling().args(["simulate", "--policies", "greedy", "--scenario"]).arg(scenario("slow_mode.json")).output().unwrap();
    assert!(!out.status.success());
}
