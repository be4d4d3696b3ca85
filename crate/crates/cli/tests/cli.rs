use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"{
  "device": {"nx": 12, "nz_free": 6, "nz_layer": 6},
  "comparison_grid": {"nx": 16, "nz": 16},
  "boundary": {"kind": "grounded", "voltage": 2.0}
}"#;

fn mems(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mems")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("config.json");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn sweep_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = mems(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap(), "--jobs", "2", "--samples", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["sweep.csv", "sweep.json", "audit.csv", "config_echo.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "delta,e_mech,e_elec,e_total,err_u_h2,err_e,err_psi,touched,iters,wall_ms");
    assert_eq!(lines.len(), 5);
    assert!(lines[4].starts_with("0.0000000000000000e0,"));
    assert!(!csv.contains('\r'));
    let audit = fs::read_to_string(out.join("audit.csv")).unwrap();
    assert!(audit.starts_with("name,sample_id,lhs,rhs,margin,pass\n"));
    assert!(audit.lines().skip(1).all(|l| l.ends_with(",true")));
    assert!(audit.contains("min_delta:0.05"));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("sweep.json")).unwrap()).unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 3);
    assert!(json["rows"][0]["deflection"]["slopes"].is_array());
}

#[test]
fn sweep_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (out, jobs) in [(&a, "1"), (&b, "3")] {
        let o = mems(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap(), "--jobs", jobs, "--samples", "2"]);
        assert!(o.status.success());
    }
    for f in ["sweep.csv", "audit.csv", "sweep.json", "config_echo.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn audit_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("audit");
    let o = mems(&["audit", "--config", &cfg, "--samples", "5", "--seed", "9", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let audit = fs::read_to_string(out.join("audit.csv")).unwrap();
    assert_eq!(audit.lines().count(), 1 + 8 * 12);
}

#[test]
fn solve_prints_potential() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let u = dir.path().join("u.csv");
    let mut text = String::from("x,value,slope\n");
    for k in 0..=12 {
        let x = -1.0 + k as f64 / 6.0;
        let q = 1.0 - x * x;
        text.push_str(&format!("{x},{},{}\n", -0.2 * q * q, 0.8 * x * q));
    }
    fs::write(&u, text).unwrap();
    for model in ["delta:0.1", "reduced"] {
        let o = mems(&["solve", "--config", &cfg, "--model", model, "--deflection", u.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let out = String::from_utf8(o.stdout).unwrap();
        let mut lines = out.lines();
        assert_eq!(lines.next(), Some("x,z,psi"));
        let vals: Vec<f64> = lines.map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
        assert!(vals.len() > 100);
        // grounded data with V = 2: the potential stays in [0, V]
        assert!(vals.iter().all(|&p| (-1e-9..=2.0 + 1e-9).contains(&p)));
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let bad = write_config(dir.path(), r#"{"device": {"nx": 12, "colour": 1}}"#);
    let o = mems(&["sweep", "--config", &bad, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = mems(&["audit", "--config", "/nonexistent.json", "--samples", "1", "--seed", "0", "--out", "x"]);
    assert_eq!(o.status.code(), Some(2));
    let cfg = write_config(dir.path(), SMALL);
    let u = dir.path().join("u.json");
    fs::write(&u, r#"{"nodes": [-1, 0, 1], "values": [0, 0.1, 0], "slopes": [0, 0, 0]}"#).unwrap();
    let o = mems(&["solve", "--config", &cfg, "--model", "delta:1.5", "--deflection", u.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    fs::write(&u, r#"{"nodes": [-1, 0, 1], "values": [0, -3, 0], "slopes": [0, 0, 0]}"#).unwrap();
    let o = mems(&["solve", "--config", &cfg, "--model", "reduced", "--deflection", u.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    // admissible input that closes the gap below the solver floor
    fs::write(&u, r#"{"nodes": [-1, 0, 1], "values": [0, -1, 0], "slopes": [0, 0, 0]}"#).unwrap();
    let o = mems(&["solve", "--config", &cfg, "--model", "reduced", "--deflection", u.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let default = mems_core::RunConfig::from_path(&dir.join("default.json")).unwrap();
    assert_eq!(default.hash(), mems_core::RunConfig::default().hash());
    let quick = mems_core::RunConfig::from_path(&dir.join("quick.json")).unwrap();
    assert_eq!(quick.device.nx, 16);
}
