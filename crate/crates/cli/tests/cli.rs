use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use deconflict::io::{read_metrics_csv, read_plan_csv, ScenarioFile};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_deconflict"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).env_remove("DECONFLICT_THREADS").output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const ONE_UAV: &str = r#"version = "1"
area_width = 100.0
area_height = 100.0
dt = 1.0
num_slots = 10
seed = 0

[[uavs]]
id = 0
start = [10.0, 10.0]
goal = [60.0, 40.0]
gps_error_radius = 5.0
v_max = 15.0
energy = 70.0
compute_capacity = 3.0
"#;

/// Two UAVs whose starts overlap; loadable only without endpoint checks.
const CROWDED: &str = r#"version = "1"
endpoint_separation = false
area_width = 100.0
area_height = 100.0
dt = 1.0
num_slots = 10
seed = 0

[[uavs]]
id = 0
start = [50.0, 50.0]
goal = [10.0, 50.0]
gps_error_radius = 5.0
v_max = 15.0
energy = 70.0
compute_capacity = 3.0

[[uavs]]
id = 1
start = [53.0, 50.0]
goal = [90.0, 50.0]
gps_error_radius = 5.0
v_max = 15.0
energy = 60.0
compute_capacity = 3.0
"#;

#[test]
fn gen_writes_the_requested_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["gen", "--uavs", "10", "--area", "10000", "--gps-error", "5", "--seed", "7", "-o", "a.toml"]);
    assert_eq!(code(&out), 0, "{out:?}");
    let file = ScenarioFile::load(&dir.path().join("a.toml")).unwrap();
    assert_eq!(file.scenario.num_uavs(), 10);
    assert_eq!((file.scenario.area_width, file.scenario.area_height), (100.0, 100.0));
    assert!(file.scenario.uavs.iter().all(|u| u.gps_error_radius == 5.0));

    run(dir.path(), &["gen", "--uavs", "10", "--seed", "7", "-o", "b.toml"]);
    let a = std::fs::read(dir.path().join("a.toml")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.toml")).unwrap());
}

#[test]
fn gen_reports_exhaustion() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["gen", "--uavs", "150", "-o", "x.toml"]);
    assert_eq!(code(&out), 3);
    assert!(!dir.path().join("x.toml").exists());
    let relaxed = run(dir.path(), &["gen", "--uavs", "150", "--no-endpoint-separation", "-o", "x.toml"]);
    assert_eq!(code(&relaxed), 0);
}

#[test]
fn plan_writes_a_verified_csv() {
    let dir = tempfile::tempdir().unwrap();
    run(dir.path(), &["gen", "--uavs", "6", "--area", "40000", "--seed", "3", "-o", "s.toml"]);
    for (mode, horizon) in [("signed-l1", "full"), ("scp", "full"), ("signed-l1", "receding:5")] {
        let out = run(dir.path(), &["plan", "s.toml", "--mode", mode, "--horizon", horizon, "-o", "p.csv"]);
        assert_eq!(code(&out), 0, "{mode} {horizon}: {}", stdout(&out));
        assert!(stdout(&out).contains("verification PASSED"));
        let rows = read_plan_csv(&std::fs::read(dir.path().join("p.csv")).unwrap()).unwrap();
        assert_eq!(rows.len(), 6 * 21);
    }
    let literal = run(dir.path(), &["plan", "s.toml", "--mode", "literal", "-o", "l.csv"]);
    assert_eq!(code(&literal), 0);
    assert!(stdout(&literal).contains("not enforced"));
}

#[test]
fn plan_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "crowded.toml", CROWDED);
    assert_eq!(code(&run(dir.path(), &["plan", "crowded.toml", "-o", "p.csv"])), 2);

    run(dir.path(), &["gen", "--uavs", "6", "--seed", "3", "-o", "s.toml"]);
    let capped = run(dir.path(), &["plan", "s.toml", "--max-iterations", "1", "-o", "p.csv"]);
    assert_eq!(code(&capped), 4, "{capped:?}");

    write(dir.path(), "bad.toml", "version = \"1\"\nuavs = 3\n");
    assert_eq!(code(&run(dir.path(), &["plan", "bad.toml", "-o", "p.csv"])), 1);
    assert_eq!(code(&run(dir.path(), &["plan", "missing.toml", "-o", "p.csv"])), 1);
    assert_eq!(code(&run(dir.path(), &["plan", "s.toml", "--horizon", "receding:0", "-o", "p.csv"])), 1);
    assert_eq!(code(&run(dir.path(), &["plan", "s.toml", "--mode", "magic", "-o", "p.csv"])), 1);
    assert_eq!(code(&run(dir.path(), &["frobnicate"])), 1);
}

#[test]
fn simulate_single_uav() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "one.toml", ONE_UAV);
    let out = run(dir.path(), &["simulate", "one.toml", "--mode", "signed-l1", "--seed", "4", "--metrics", "m.csv", "--log", "log.csv"]);
    assert_eq!(code(&out), 0, "{out:?}");
    let rows = read_metrics_csv(&std::fs::read(dir.path().join("m.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!((rows[0].pair_slot_collisions, rows[0].distinct_pair_collisions, rows[0].completed), (0.0, 0.0, 1));
    let log = read_plan_csv(&std::fs::read(dir.path().join("log.csv")).unwrap()).unwrap();
    assert_eq!(log.len(), 11);
    assert_eq!((log[10].x, log[10].y), (60.0, 40.0));
}

#[test]
fn simulate_crowded_scenario() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "crowded.toml", CROWDED);
    let base = run(dir.path(), &["simulate", "crowded.toml", "--mode", "baseline", "--metrics", "m.csv"]);
    assert_eq!(code(&base), 0);
    let rows = read_metrics_csv(&std::fs::read(dir.path().join("m.csv")).unwrap()).unwrap();
    assert!(rows[0].pair_slot_collisions >= 1.0);
    let avoid = run(dir.path(), &["simulate", "crowded.toml", "--mode", "signed-l1"]);
    assert_eq!(code(&avoid), 2);
}

fn without_time_column(csv: &[u8]) -> Vec<String> {
    let text = String::from_utf8(csv.to_vec()).unwrap();
    text.lines()
        .map(|l| {
            let mut f: Vec<&str> = l.split(',').collect();
            f.remove(6);
            f.join(",")
        })
        .collect()
}

#[test]
fn sweep_bookkeeping_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["sweep", "--param", "uavs", "--values", "10,20,30,40,50", "--runs", "30", "--mode", "baseline"];
    let first = run(dir.path(), &[&args[..], &["-o", "a.csv", "--threads", "1"]].concat());
    assert_eq!(code(&first), 0, "{first:?}");
    let out = bin()
        .current_dir(dir.path())
        .args(args)
        .args(["-o", "b.csv", "--chart", "charts"])
        .env("DECONFLICT_THREADS", "3")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    let a = std::fs::read(dir.path().join("a.csv")).unwrap();
    let rows = read_metrics_csv(&a).unwrap();
    assert_eq!(rows.len(), 155);
    assert_eq!(rows.iter().filter(|r| r.is_aggregate()).count(), 5);
    assert_eq!(without_time_column(&a), without_time_column(&std::fs::read(dir.path().join("b.csv")).unwrap()));
    assert_eq!(std::fs::read_dir(dir.path().join("charts")).unwrap().count(), 4);
}

#[test]
fn avoidance_sweep_records_wall_time() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["sweep", "--param", "gps-error", "--values", "1,2", "--runs", "2", "--uavs", "4", "--mode", "scp", "-o", "s.csv"]);
    assert_eq!(code(&out), 0, "{out:?}");
    let rows = read_metrics_csv(&std::fs::read(dir.path().join("s.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().filter(|r| !r.is_aggregate()).all(|r| r.completed == 1 && r.total_planning_time_s > 0.0));
    assert!(rows.iter().all(|r| r.swept_param == "gps-error"));
}

#[test]
fn report_prints_fits_and_writes_charts() {
    let dir = tempfile::tempdir().unwrap();
    run(dir.path(), &["sweep", "--param", "uavs", "--values", "10,20,30,40", "--runs", "5", "--mode", "baseline", "-o", "s.csv"]);
    let out = run(dir.path(), &["report", "s.csv", "--out-dir", "figs"]);
    assert_eq!(code(&out), 0, "{out:?}");
    let text = stdout(&out);
    assert!(text.contains("swept parameter: uavs"));
    assert!(text.contains("quadratic R^2"));
    let svg = std::fs::read_to_string(dir.path().join("figs/uavs_pair_slot_collisions.svg")).unwrap();
    assert!(svg.starts_with("<svg"));

    write(dir.path(), "junk.csv", "a,b\n1,2\n");
    assert_eq!(code(&run(dir.path(), &["report", "junk.csv", "--out-dir", "figs"])), 1);
}
