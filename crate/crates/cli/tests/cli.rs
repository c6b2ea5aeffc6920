use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const GOLDEN: &str = include_str!("../../core/tests/golden/of-worker-a-0.manifest");
const MEASURED: &str = "n,makespan_s\n1,1249\n2,1410\n3,1446\n4,1604\n5,1670\n";

fn colocate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_colocate")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = colocate(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    colocate(args).status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_column(path: &Path, col: usize) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(col).unwrap().to_string())
        .collect()
}

#[test]
fn reference_corpus_recovers_group_means() {
    let dir = tempfile::tempdir().unwrap();
    let traces = dir.path().join("traces");
    let out = dir.path().join("report");
    ok(&["gen-traces", "--out", p(&traces), "--jitter", "0.005"]);
    ok(&["analyze", p(&traces), "--reference-groups", "--out", p(&out)]);
    let report = json(&out.join("report.json"));
    for (g, want) in [("sparse", 0.050), ("medium", 0.115), ("dense", 0.194)] {
        let got = report["report"]["groups"][g].as_f64().unwrap();
        assert!((got - want).abs() <= 0.001, "{g}: {got}");
    }
    assert_eq!(csv_column(&out.join("duties.csv"), 0).len(), 16);
    let eq = report["reclaimable_equal"]["fraction_of_budget"].as_f64().unwrap();
    assert!(eq > 0.85 && eq < 0.95, "{eq}");
}

#[test]
fn single_rank_corpus_gives_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    ok(&["gen-traces", "--out", p(&dir.path().join("t")), "--duties", "0.3", "--iterations", "20"]);
    ok(&["analyze", p(&dir.path().join("t")), "--out", p(&out)]);
    let rows = csv_column(&out.join("duties.csv"), 1);
    assert_eq!(rows.len(), 1);
    assert!((rows[0].parse::<f64>().unwrap() - 0.3).abs() < 1e-3);
}

#[test]
fn custom_group_labels() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("t");
    let labels = dir.path().join("groups.csv");
    fs::write(&labels, "rank,group\n0,lo\n1,hi\n2,hi\n").unwrap();
    ok(&["gen-traces", "--out", p(&t), "--duties", "0.1,0.3,0.5", "--iterations", "20"]);
    let stdout = ok(&["analyze", p(&t), "--groups", p(&labels)]);
    assert!(stdout.contains("group hi: 40.0%"), "{stdout}");
    assert!(stdout.contains("group lo: 10.0%"), "{stdout}");
}

#[test]
fn unreadable_traces_are_input_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&["analyze", p(dir.path())]), 2);
    fs::write(dir.path().join("rank_0000.csv"), "rank,call,t_enter_us,t_exit_us\n0,Bogus,1,2\n").unwrap();
    assert_eq!(code(&["analyze", p(dir.path())]), 2);
    assert_eq!(code(&["analyze", p(&dir.path().join("missing"))]), 2);
}

#[test]
fn three_zone_plan_and_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("plan");
    let manifests = dir.path().join("m");
    ok(&["plan", "--three-zone", "--out", p(&out), "--manifests", p(&manifests)]);
    let reqs = csv_column(&out.join("plan.csv"), 1);
    let want: Vec<&str> = [["67"; 8].as_slice(), &["335"; 4], &["1005"; 4]].concat();
    assert_eq!(reqs, want);
    let written = fs::read_to_string(manifests.join("A").join("of-worker-a-0.manifest")).unwrap();
    assert_eq!(written, GOLDEN);
    assert_eq!(fs::read_dir(manifests.join("A")).unwrap().count(), 16);
}

#[test]
fn explicit_weights_match_three_zone() {
    let weights = "1,1,1,1,1,1,1,1,5,5,5,5,15,15,15,15";
    assert_eq!(ok(&["plan", "--weights", weights]), ok(&["plan", "--three-zone"]));
}

#[test]
fn uniform_plan_is_equal() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["plan", "--uniform", "16", "--out", p(dir.path())]);
    let reqs = csv_column(&dir.path().join("plan.csv"), 1);
    assert_eq!(reqs.len(), 16);
    assert!(reqs.iter().all(|r| r == &reqs[0]));
}

#[test]
fn plan_constraints_exit_three() {
    assert_eq!(code(&["plan", "--uniform", "16", "--budget", "100"]), 3);
    assert_eq!(code(&["plan", "--three-zone", "--sims", "20"]), 3);
    assert_eq!(code(&["plan", "--three-zone", "--sims", "2", "--quota", "10000"]), 3);
    assert_eq!(code(&["plan", "--three-zone", "--sims", "2", "--quota", "12000"]), 0);
}

#[test]
fn plan_input_errors_exit_two() {
    assert_eq!(code(&["plan"]), 2);
    assert_eq!(code(&["plan", "--weights", "1,0,3"]), 2);
    assert_eq!(code(&["plan", "--uniform", "4", "--three-zone"]), 2);
    assert_eq!(code(&["plan", "--duties", "/nonexistent.csv"]), 2);
}

#[test]
fn duty_plan_from_analyze_output() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("t");
    let r = dir.path().join("r");
    ok(&["gen-traces", "--out", p(&t)]);
    ok(&["analyze", p(&t), "--out", p(&r)]);
    ok(&["plan", "--duties", p(&r.join("duties.csv")), "--out", p(dir.path())]);
    let reqs: Vec<u32> = csv_column(&dir.path().join("plan.csv"), 1).iter().map(|s| s.parse().unwrap()).collect();
    assert_eq!(reqs.len(), 16);
    assert!(reqs.iter().sum::<u32>() <= 5900);
    assert!(reqs[0] < reqs[8] && reqs[8] < reqs[12]);
}

#[test]
fn predict_reports_both_fits() {
    let dir = tempfile::tempdir().unwrap();
    let points = dir.path().join("points.csv");
    fs::write(&points, MEASURED).unwrap();
    let out = dir.path().join("model");
    let stdout = ok(&["predict", p(&points), "--up-to", "7", "--out", p(&out)]);
    assert!(stdout.contains("extrapolated"));
    let m = json(&out.join("model.json"));
    assert!((m["fit_n2"]["beta"].as_f64().unwrap() - 0.773).abs() < 0.001);
    let blind: Vec<f64> = csv_column(&out.join("predictions_n2.csv"), 3)[2..5]
        .iter()
        .map(|s| s.parse().unwrap())
        .collect();
    for (got, want) in blind.iter().zip([0.086, 0.080, 0.134]) {
        assert!((got - want).abs() <= 0.003, "{got} vs {want}");
    }
    assert_eq!(m["pareto"]["knee"], 3);
    assert_eq!(csv_column(&out.join("predictions.csv"), 0).len(), 7);
    assert_eq!(csv_column(&out.join("cost.csv"), 0).len(), 5);
}

#[test]
fn predict_is_exact_on_model_data() {
    let dir = tempfile::tempdir().unwrap();
    let points = dir.path().join("points.csv");
    // T_N = 1000 (1 + 0.5 (N - 1)/6) on the reference cluster.
    let rows: String = (1..=4).map(|n| format!("{n},{}\n", 1000.0 * (1.0 + 0.5 * f64::from(n - 1) / 6.0))).collect();
    fs::write(&points, rows).unwrap();
    let out = dir.path().join("model");
    ok(&["predict", p(&points), "--out", p(&out)]);
    let m = json(&out.join("model.json"));
    assert!((m["fit_all"]["beta"].as_f64().unwrap() - 0.5).abs() < 1e-9);
    for row in m["predictions"].as_array().unwrap() {
        assert!(row["error"].as_f64().unwrap().abs() < 1e-9);
    }
}

#[test]
fn malformed_points_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let points = dir.path().join("points.csv");
    fs::write(&points, "1,1249\n2,abc\n").unwrap();
    assert_eq!(code(&["predict", p(&points)]), 2);
    fs::write(&points, "2,1410\n").unwrap();
    assert_eq!(code(&["predict", p(&points)]), 2);
}

const SINGLE: &str = r#"
[cluster]
nodes = 12
vcpus_per_node = 8
price_per_hour = 4.12

[[jobs]]
id = "A"
iterations = 200
t1_s = 1249.0
duties = [0.05, 0.05, 0.05, 0.05, 0.05, 0.05, 0.05, 0.05, 0.115, 0.115, 0.115, 0.115, 0.194, 0.194, 0.194, 0.194]
allocation = "duty"
"#;

#[test]
fn calibrated_job_takes_t1() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("s.toml");
    fs::write(&scenario, SINGLE).unwrap();
    let out = dir.path().join("out");
    ok(&["simulate", p(&scenario), "--out", p(&out), "--sample-interval", "10"]);
    let r = json(&out.join("result.json"));
    let makespan = r["makespan"].as_f64().unwrap();
    assert!((makespan / 1249.0 - 1.0).abs() <= 0.001, "{makespan}");
    let samples = fs::read_to_string(out.join("utilization.csv")).unwrap();
    assert!(samples.starts_with("time_s,node,cores_used\n"));
    assert!(samples.lines().count() > 100);
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("s.toml");
    let two = format!("{SINGLE}replicas = 2\njitter = 0.05\n");
    fs::write(&scenario, two).unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["simulate", p(&scenario), "--out", p(&a)]);
    ok(&["simulate", p(&scenario), "--out", p(&b)]);
    for f in ["result.json", "jobs.csv", "utilization.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = dir.path().join("c");
    ok(&["simulate", p(&scenario), "--seed", "7", "--out", p(&c)]);
    assert_ne!(fs::read(a.join("result.json")).unwrap(), fs::read(c.join("result.json")).unwrap());
}

#[test]
fn invalid_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("s.toml");
    fs::write(&scenario, "[[jobs]]\nid = \"A\"\nbogus = 1\n").unwrap();
    assert_eq!(code(&["simulate", p(&scenario)]), 2);
    let crowded = SINGLE.replace("allocation = \"duty\"", "allocation = \"equal\"\nreplicas = 7");
    fs::write(&scenario, crowded).unwrap();
    assert_eq!(code(&["simulate", p(&scenario)]), 3);
}

#[test]
fn control_reference_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c");
    ok(&["control", "--out", p(&out)]);
    let s = json(&out.join("summary.json"));
    assert_eq!(s["counts"]["resizes"], 64);
    assert_eq!(s["counts"]["deployments"], 3);
    assert_eq!(s["restarts"], 0);
    let actions = fs::read_to_string(out.join("actions.jsonl")).unwrap();
    let lines: Vec<Value> = actions.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(lines.iter().all(|l| l["t"].is_f64() && l["kind"].is_string()));
    assert_eq!(lines.iter().filter(|l| l["kind"] == "resize").count(), 64);
}

#[test]
fn control_single_sim_and_tiny_cluster() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("one");
    ok(&["control", "--max-sims", "1", "--out", p(&out)]);
    assert_eq!(json(&out.join("summary.json"))["counts"]["resizes"], 16);

    let scenario = dir.path().join("tiny.toml");
    fs::write(&scenario, "[cluster]\nnodes = 2\nvcpus_per_node = 8\nprice_per_hour = 1.0\n").unwrap();
    let tiny = dir.path().join("tiny");
    ok(&["control", p(&scenario), "--out", p(&tiny)]);
    assert_eq!(json(&tiny.join("summary.json"))["counts"]["deployments"], 0);
}

#[test]
fn control_rejects_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("bad.toml");
    fs::write(&scenario, "[controller]\nfairness_threshold = 0.5\n").unwrap();
    assert_eq!(code(&["control", p(&scenario)]), 2);
    fs::write(&scenario, "first_sim = \"a\"\n").unwrap();
    assert_eq!(code(&["control", p(&scenario)]), 2);
}

#[test]
fn emit_subcommands() {
    assert_eq!(ok(&["emit", "manifest", "--rank", "0", "--cpu", "67"]), GOLDEN);
    let cm = ok(&["emit", "hostfile", "--sim", "B", "10.0.0.1", "10.0.0.2"]);
    assert!(cm.contains("name: hostfile-b"));
    assert!(cm.contains("10.0.0.2 slots=1"));
    let resize = ok(&["emit", "resize", "--pod", "of-worker-a-0", "--cpu", "179"]);
    assert!(resize.contains("\"cpu\":\"179m\""));
    assert!(resize.contains("--subresource resize"));
    let mpirun = ok(&["emit", "mpirun", "--ranks", "16"]);
    assert!(mpirun.starts_with("mpirun -np 16 --hostfile"));
}

#[test]
fn emit_rejects_bad_input() {
    assert_eq!(code(&["emit", "hostfile", "10.0.0.1", "not-an-ip"]), 2);
    assert_eq!(code(&["emit", "manifest", "--sim", "a", "--rank", "0", "--cpu", "67"]), 2);
    assert_eq!(code(&["emit", "manifest", "--rank", "0", "--cpu", "5"]), 2);
    assert_eq!(code(&["no-such-command"]), 2);
}
