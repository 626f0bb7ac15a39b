use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

use phforge::corpus;

fn phforge(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phforge"))
        .args(args)
        .current_dir(cwd)
        .env_remove("PHFORGE_TOL")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn lines(o: &Output) -> Vec<Value> {
    String::from_utf8(o.stdout.clone())
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn matrix(v: &Value) -> Vec<Vec<f64>> {
    v.as_array()
        .unwrap()
        .iter()
        .map(|r| r.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect())
        .collect()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut it = text.lines();
    let header = it.next().unwrap().split(',').map(String::from).collect();
    let rows = it
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

fn write_system(dir: &Path, name: &str, json: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, json).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn audit_rigid_body_passes() {
    let tmp = TempDir::new().unwrap();
    let o = phforge(
        &["audit", "--corpus", "rigid-body", "--param", "I1=1", "--param", "I2=2", "--param", "I3=3",
          "--samples", "100", "--seed", "7"],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["passed"], Value::Bool(true));
    assert_eq!(report["records"].as_array().unwrap().len(), 100);
}

#[test]
fn audit_antipassive_fails_and_names_the_flag() {
    let tmp = TempDir::new().unwrap();
    let path = write_system(
        tmp.path(),
        "antipassive.json",
        r#"{"name":"antipassive","n":1,"m":0,"H":"z1^2/2","f":["z1"]}"#,
    );
    let o = phforge(&["audit", "--system", &path, "--out", "report"], tmp.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("passivity_sample"));
    let report: Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("report/audit.json")).unwrap()).unwrap();
    assert_eq!(report["failed_flags"], serde_json::json!(["passivity_sample"]));
    assert!(tmp.path().join("report/manifest.json").exists());
}

#[test]
fn usage_and_io_failures_exit_2() {
    let tmp = TempDir::new().unwrap();
    let cases: &[&[&str]] = &[
        &["audit", "--system", "missing.json"],
        &["audit"],
        &["audit", "--corpus", "rigid-body", "--system", "x.json"],
        &["audit", "--corpus", "no-such-system"],
        &["audit", "--corpus", "rigid-body", "--param", "I9=1"],
        &["audit", "--corpus", "rigid-body", "--box", "1,0"],
        &["decompose", "--corpus", "rigid-body"],
        &["decompose", "--corpus", "rigid-body", "--at", "1,2"],
        &["decompose", "--corpus", "rigid-body", "--at", "1,1,1", "--quad-nodes", "0"],
        &["decompose", "--corpus", "rigid-body", "--at", "1,1,1", "--policy", "magic"],
        &["simulate", "--corpus", "rigid-body", "--z0", "1,1,1", "--T", "1", "--dt", "0", "--out", "o"],
        &["simulate", "--corpus", "rigid-body", "--z0", "1,1,1", "--T", "-1", "--dt", "0.1", "--out", "o"],
        &["simulate", "--corpus", "wave", "--param", "N=2", "--z0", "1,1,0", "--T", "1", "--dt", "0.1",
          "--u", "1", "--out", "o"],
    ];
    for args in cases {
        let o = phforge(args, tmp.path());
        assert_eq!(code(&o), 2, "{args:?}: {}", stderr(&o));
    }
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn invalid_tolerance_override_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_phforge"))
        .args(["decompose", "--corpus", "rigid-body", "--at", "1,1,1"])
        .env("PHFORGE_TOL", "-3")
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn tolerance_override_is_recorded() {
    let tmp = TempDir::new().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_phforge"))
        .args(["decompose", "--corpus", "rigid-body", "--at", "1,1,1", "--out", "d"])
        .env("PHFORGE_TOL", "1e-7")
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    let m: Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("d/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["tol"].as_f64(), Some(1e-7));
}

#[test]
fn rigid_body_conservative_record_matches_closed_form() {
    let tmp = TempDir::new().unwrap();
    let o = phforge(
        &["decompose", "--corpus", "rigid-body", "--at", "1,1,1", "--policy", "conservative"],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let recs = lines(&o);
    assert_eq!(recs.len(), 1);
    let r = &recs[0];
    assert_eq!(r["strategy"], "conservative-tridiagonal");
    let facts = corpus::build_rigid_body(1.0, 2.0, 3.0).unwrap().facts;
    let z = [1.0, 1.0, 1.0];
    let m_expected = [[0.0, -1.0 / 6.0, -0.25], [1.0 / 3.0, 0.0, 1.0], [-0.25, -0.5, 0.0]];
    let m = matrix(&r["m"]);
    let j = matrix(&r["j"]);
    let rr = matrix(&r["r"]);
    let j_ref = facts.j(&z).unwrap();
    let r_ref = facts.r(&z).unwrap();
    for a in 0..3 {
        for b in 0..3 {
            assert!((m[a][b] - m_expected[a][b]).abs() <= 1e-12);
            assert!((j[a][b] - j_ref[(a, b)]).abs() <= 1e-12);
            assert!((rr[a][b] - r_ref[(a, b)]).abs() <= 1e-12);
        }
    }
}

#[test]
fn linear_kq_random_points_are_all_raw() {
    let tmp = TempDir::new().unwrap();
    let o = phforge(&["decompose", "--corpus", "linear-kq", "--random", "50", "--seed", "3"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let recs = lines(&o);
    assert_eq!(recs.len(), 50);
    assert!(recs.iter().all(|r| r["strategy"] == "raw"));
    let idx: Vec<u64> = recs.iter().map(|r| r["index"].as_u64().unwrap()).collect();
    assert_eq!(idx, (0..50).collect::<Vec<_>>());
}

#[test]
fn equilibrium_point_uses_eta_zero_fallback() {
    let tmp = TempDir::new().unwrap();
    let o = phforge(&["decompose", "--corpus", "rigid-body", "--at", "0,0,0"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(lines(&o)[0]["strategy"], "eta-zero-fallback");
}

#[test]
fn per_point_failures_are_recorded_inline() {
    let tmp = TempDir::new().unwrap();
    // Dη(sz) = 3s²z² drops below the singular-value guard at the first node for tiny z
    let path = write_system(
        tmp.path(),
        "quartic.json",
        r#"{"name":"quartic","n":1,"m":0,"H":"z1^4/4","f":["-z1^3"]}"#,
    );
    let o = phforge(&["decompose", "--system", &path, "--at", "1", "--at", "1e-5", "--out", "d"], tmp.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("1 of 2 points failed"));
    let text = fs::read_to_string(tmp.path().join("d/decompositions.jsonl")).unwrap();
    let recs: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(recs.len(), 2);
    assert_eq!(recs[0]["strategy"], "raw");
    assert_eq!(recs[1]["index"].as_u64(), Some(1));
    assert_eq!(recs[1]["error"]["kind"], "singular-deta");
    let summary = fs::read_to_string(tmp.path().join("d/summary.csv")).unwrap();
    assert!(summary.lines().nth(2).unwrap().ends_with(",singular-deta"));
}

#[test]
fn grid_and_random_points_follow_explicit_ones() {
    let tmp = TempDir::new().unwrap();
    let o = phforge(
        &["decompose", "--corpus", "rigid-body", "--at", "1,1,1", "--grid", "2", "--box", "-1,1",
          "--random", "3"],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let recs = lines(&o);
    assert_eq!(recs.len(), 1 + 8 + 3);
    assert_eq!(recs[1]["z"], serde_json::json!([-1.0, -1.0, -1.0]));
    assert_eq!(recs[8]["z"], serde_json::json!([1.0, 1.0, 1.0]));
}

#[test]
fn rigid_body_simulation_conserves_energy() {
    let tmp = TempDir::new().unwrap();
    let o = phforge(
        &["simulate", "--corpus", "rigid-body", "--z0", "1,1,1", "--T", "100", "--dt", "0.01", "--out", "run"],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (header, rows) = read_csv(&tmp.path().join("run/trajectory.csv"));
    assert_eq!(header, ["t", "z1", "z2", "z3", "H"]);
    assert_eq!(rows.len(), 10001);
    let h0 = rows[0][4];
    let drift = rows.iter().map(|r| (r[4] - h0).abs()).fold(0.0, f64::max);
    assert!(drift <= 1e-10, "drift {drift:e}");
    assert!((rows[10000][0] - 100.0).abs() < 1e-9);
    let (lh, ledger) = read_csv(&tmp.path().join("run/ledger.csv"));
    assert_eq!(lh, ["step", "dH", "dissipation", "supply", "residual"]);
    assert_eq!(ledger.len(), 10000);
}

#[test]
fn wave_simulation_dissipation_is_nonnegative() {
    let tmp = TempDir::new().unwrap();
    let n = 20;
    let dx = 1.0 / n as f64;
    let mut z0: Vec<String> = (0..n)
        .map(|i| {
            let x = (i as f64 + 0.5) * dx;
            format!("{}", 1.0 + 0.5 * (-((x - 0.5) / 0.1f64).powi(2)).exp())
        })
        .collect();
    z0.extend((1..n).map(|i| format!("{}", 0.2 * (2.0 * std::f64::consts::PI * i as f64 * dx).sin())));
    let z0 = z0.join(",");
    let o = phforge(
        &["simulate", "--corpus", "wave", "--param", "gamma=0.1", "--z0", &z0, "--T", "1", "--dt", "0.005",
          "--out", "wave"],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (header, rows) = read_csv(&tmp.path().join("wave/trajectory.csv"));
    assert_eq!(header.len(), 1 + 39 + 2 + 1);
    assert_eq!(header[40], "y1");
    assert_eq!(rows.len(), 201);
    let (_, ledger) = read_csv(&tmp.path().join("wave/ledger.csv"));
    assert!(ledger.iter().all(|r| r[2] >= -1e-10));
    assert!(ledger.iter().all(|r| r[4].abs() <= 1e-9));
}

#[test]
fn other_schemes_run_with_a_constant_input() {
    let tmp = TempDir::new().unwrap();
    let path = write_system(
        tmp.path(),
        "port.json",
        r#"{"name":"port","n":2,"m":1,"H":"z1^2/2 + z2^2","f":["2*z2","-z1 - 2*z2"],"B":[["0"],["1"]]}"#,
    );
    for scheme in ["jr", "b", "rk4"] {
        let out = format!("o-{scheme}");
        let o = phforge(
            &["simulate", "--system", &path, "--z0", "1,0", "--T", "1", "--dt", "0.01", "--u", "0.5",
              "--scheme", scheme, "--residual-bound", "1e-6", "--out", &out],
            tmp.path(),
        );
        assert_eq!(code(&o), 0, "{scheme}: {}", stderr(&o));
        let (header, rows) = read_csv(&tmp.path().join(&out).join("trajectory.csv"));
        assert_eq!(header, ["t", "z1", "z2", "y1", "H"]);
        // y = Bᵀη = 2 z2
        assert!(rows.iter().all(|r| (r[3] - 2.0 * r[2]).abs() <= 1e-12));
    }
}

#[test]
fn step_failure_exits_1_with_last_good_index() {
    let tmp = TempDir::new().unwrap();
    let path = write_system(
        tmp.path(),
        "root.json",
        r#"{"name":"root","n":1,"m":0,"H":"z1^2/2","f":["-sqrt(z1)"]}"#,
    );
    let o = phforge(
        &["simulate", "--system", &path, "--z0", "1", "--T", "20", "--dt", "5", "--scheme", "b", "--out", "o"],
        tmp.path(),
    );
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("last good state index 0"), "{}", stderr(&o));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let runs: &[&[&str]] = &[
        &["decompose", "--corpus", "rigid-body", "--random", "40", "--seed", "11", "--out", "out"],
        &["audit", "--corpus", "wave", "--param", "N=6", "--samples", "30", "--seed", "5", "--out", "out"],
        &["simulate", "--corpus", "rigid-body", "--z0", "0.3,-1,2", "--T", "2", "--dt", "0.05", "--out", "out"],
        &["export", "--corpus", "wave", "--param", "N=4", "--param", "law=gamma", "--out", "out"],
    ];
    for args in runs {
        for dir in [&a, &b] {
            let _ = fs::remove_dir_all(dir.path().join("out"));
            let o = phforge(args, dir.path());
            assert_eq!(code(&o), 0, "{args:?}: {}", stderr(&o));
        }
        let mut names: Vec<_> = fs::read_dir(a.path().join("out"))
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        assert!(names.len() >= 2);
        for name in names {
            let x = fs::read(a.path().join("out").join(&name)).unwrap();
            let y = fs::read(b.path().join("out").join(&name)).unwrap();
            assert!(x == y, "{args:?}: {name:?} differs");
        }
    }
    let o1 = phforge(&["decompose", "--corpus", "linear-kq", "--random", "25"], a.path());
    let o2 = phforge(&["decompose", "--corpus", "linear-kq", "--random", "25"], b.path());
    assert_eq!(o1.stdout, o2.stdout);
}

#[test]
fn exported_document_reloads() {
    let tmp = TempDir::new().unwrap();
    let o = phforge(&["export", "--corpus", "rigid-body", "--param", "I2=4", "--out", "x"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let doc = fs::read_to_string(tmp.path().join("x/system.json")).unwrap();
    let s = phforge::model::load_system(&doc).unwrap();
    assert_eq!(s.n, 3);
    let o = phforge(&["audit", "--system", "x/system.json", "--samples", "10"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}
