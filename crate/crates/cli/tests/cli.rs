use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn icpm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_icpm")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("config.json");
    fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

fn data_lines(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).collect()
}

#[test]
fn malformed_config_exits_2_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), &format!(r#"{{"output_dir": {:?}, "unknown_key": 1}}"#, out));
    let o = icpm(&["--config", &cfg, "design"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "config");

    let cfg = write_config(tmp.path(), "{ not json");
    assert_eq!(icpm(&["--config", &cfg, "simulate"]).status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn design_is_deterministic_and_complete() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let o = icpm(&["design", "--model", "cart-pendulum", "--anchor", "0", "0.45", "--section", "0", "--g", "9.81", "--out", dir.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let ta = fs::read(a.join("design.json")).unwrap();
    assert_eq!(ta, fs::read(b.join("design.json")).unwrap());
    let v: serde_json::Value = serde_json::from_slice(&ta).unwrap();
    for key in ["z_star", "A", "B", "K", "floquet_open_loop", "floquet_closed_loop", "eps1", "eps2", "tolerances"] {
        assert!(!v[key].is_null(), "missing {key}");
    }
    assert_eq!(v["metadata"]["tool"], "icpm");
    assert_eq!(v["A"].as_array().unwrap().len(), 3);
    assert!(v["spectral_radius_closed_loop"].as_f64().unwrap() < 1.0);
}

#[test]
fn simulate_writes_fixed_dialect() {
    let tmp = tempfile::tempdir().unwrap();
    let design_dir = tmp.path().join("design");
    assert!(icpm(&["design", "--out", design_dir.to_str().unwrap()]).status.success());
    let report = design_dir.join("design.json");
    let run = |dir: &Path| {
        icpm(&[
            "simulate",
            "--design",
            report.to_str().unwrap(),
            "--initial-state",
            "0.1,0.4,-0.1,-0.2",
            "--t-end",
            "6",
            "--out",
            dir.to_str().unwrap(),
        ])
    };
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let o = run(&a);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(run(&b).status.success());
    for f in ["trajectory.csv", "events.csv", "summary.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs between runs");
    }

    let traj = fs::read_to_string(a.join("trajectory.csv")).unwrap();
    assert!(!traj.contains('\r'));
    assert!(traj.lines().any(|l| l.starts_with("# config_sha256: ")));
    let rows = data_lines(&traj);
    assert_eq!(rows[0], "t,x,theta,x_dot,theta_dot,rho_0,E,event_flag");
    let first: Vec<&str> = rows[1].split(',').collect();
    assert_eq!(first.len(), 8);
    let mantissa = first[1].split('e').next().unwrap();
    assert_eq!(mantissa.trim_start_matches('-').replace('.', "").len(), 17);
    assert!(rows.iter().skip(1).any(|r| r.ends_with(",1")));

    let events = fs::read_to_string(a.join("events.csv")).unwrap();
    let rows = data_lines(&events);
    assert_eq!(rows[0], "k,t_k,z_minus_0,z_minus_1,z_minus_2,z_plus_0,z_plus_1,z_plus_2,impulse_0");
    assert!(rows.len() > 1);

    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["status"], "completed");
    assert!(!summary["error_norms"].as_array().unwrap().is_empty());
}

#[test]
fn divergence_exits_5_and_keeps_trajectory() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(
        tmp.path(),
        &format!(
            r#"{{"integrator": {{"divergence_bound": 1e-6}}, "initial": {{"kind": "state", "values": [0.1, 0.4, -0.1, -0.2]}}, "t_end": 10, "output_dir": {:?}}}"#,
            out
        ),
    );
    let o = icpm(&["--config", &cfg, "simulate"]);
    assert_eq!(o.status.code(), Some(5), "{}", String::from_utf8_lossy(&o.stderr));
    let traj = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(data_lines(&traj).len() > 2);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["status"], "diverged");
}

#[test]
fn rank_deficient_design_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), &format!(r#"{{"design": {{"tol_rank": 1e6}}, "output_dir": {:?}}}"#, out));
    let o = icpm(&["--config", &cfg, "design"]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn empty_portrait_grid_has_header_only() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), &format!(r#"{{"portrait": {{"n_q2": 0, "n_q2_dot": 0}}, "output_dir": {:?}}}"#, out));
    assert!(icpm(&["--config", &cfg, "phase-portrait"]).status.success());
    let grid = fs::read_to_string(out.join("phase_portrait.csv")).unwrap();
    assert_eq!(data_lines(&grid), vec!["q2,q2_dot,E,E_minus_c_d"]);
    assert!(grid.lines().any(|l| l.starts_with("# c_d: ")));
    let table = fs::read_to_string(out.join("reduced_table.csv")).unwrap();
    assert!(data_lines(&table).len() > 100);
}

#[test]
fn tiptoebot_portrait_has_center_at_origin() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = icpm(&["phase-portrait", "--model", "tiptoebot", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let grid = fs::read_to_string(out.join("phase_portrait.csv")).unwrap();
    let mut min = (f64::INFINITY, 0.0, 0.0);
    for row in data_lines(&grid).iter().skip(1) {
        let v: Vec<f64> = row.split(',').map(|s| s.parse().unwrap()).collect();
        if v[2] < min.0 {
            min = (v[2], v[0], v[1]);
        }
    }
    assert!(min.1.abs() < 1e-12 && min.2.abs() < 1e-12, "minimum at ({}, {})", min.1, min.2);
}

#[test]
fn verify_reports_selected_criteria() {
    let o = icpm(&["verify", "--only", "8a", "--only", "8b"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().all(|l| l.starts_with("PASS [8")));
    assert_eq!(text.lines().count(), 2);
    assert_eq!(icpm(&["verify", "--only", "99"]).status.code(), Some(2));
}

#[test]
fn high_gain_flags_require_mu() {
    let o = icpm(&["simulate", "--mode", "high-gain", "--t-end", "1"]);
    assert_eq!(o.status.code(), Some(2));
}
