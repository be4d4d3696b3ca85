use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::Result;

use super::audit::AuditReport;
use super::config::RunConfig;
use super::sweep::SweepReport;

pub const SWEEP_HEADER: &str = "delta,e_mech,e_elec,e_total,err_u_h2,err_e,err_psi,touched,iters,wall_ms";
pub const AUDIT_HEADER: &str = "name,sample_id,lhs,rhs,margin,pass";

/// Seventeen significant digits, locale free.
pub fn fmt_f64(v: f64) -> String {
    if v == 0.0 {
        // collapse -0
        return "0.0000000000000000e0".to_string();
    }
    format!("{v:.16e}")
}

/// CSV rendering of a sweep. Wall times are written as 0 unless
/// `timings` is set so that repeated runs compare byte for byte.
pub fn sweep_csv(report: &SweepReport, timings: bool) -> String {
    let mut s = String::new();
    s.push_str(SWEEP_HEADER);
    s.push('\n');
    for r in report.all_rows() {
        let wall = if timings { r.wall_ms } else { 0 };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            fmt_f64(r.delta),
            fmt_f64(r.e_mech),
            fmt_f64(r.e_elec),
            fmt_f64(r.e_total),
            fmt_f64(r.err_u_h2),
            fmt_f64(r.err_e),
            fmt_f64(r.err_psi),
            r.touched,
            r.iters,
            wall
        );
    }
    s
}

pub fn audit_csv(report: &AuditReport) -> String {
    let mut s = String::new();
    s.push_str(AUDIT_HEADER);
    s.push('\n');
    for r in &report.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.name,
            r.sample_id,
            fmt_f64(r.lhs),
            fmt_f64(r.rhs),
            fmt_f64(r.margin),
            r.pass
        );
    }
    s
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[derive(Serialize)]
struct SweepJson<'a> {
    #[serde(flatten)]
    report: &'a SweepReport,
    timings_recorded: bool,
}

/// Writes `config_echo.json`.
pub fn write_config_echo(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    fs::create_dir_all(out)?;
    let p = out.join("config_echo.json");
    let mut v: serde_json::Value = serde_json::from_str(&cfg.canonical_json())?;
    if let serde_json::Value::Object(m) = &mut v {
        m.insert("config_hash".into(), serde_json::Value::String(cfg.hash()));
    }
    write_json(&p, &v)?;
    Ok(p)
}

/// Writes `sweep.csv` and `sweep.json`.
pub fn write_sweep(report: &SweepReport, out: &Path, timings: bool) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out)?;
    let csv = out.join("sweep.csv");
    fs::write(&csv, sweep_csv(report, timings))?;
    let json = out.join("sweep.json");
    if timings {
        write_json(&json, &SweepJson { report, timings_recorded: true })?;
    } else {
        let mut r = report.clone();
        r.rows.iter_mut().chain(std::iter::once(&mut r.reduced)).for_each(|row| row.wall_ms = 0);
        write_json(&json, &SweepJson { report: &r, timings_recorded: false })?;
    }
    Ok(vec![csv, json])
}

/// Writes `audit.csv` and `audit.json`.
pub fn write_audit(report: &AuditReport, out: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out)?;
    let csv = out.join("audit.csv");
    fs::write(&csv, audit_csv(report))?;
    let json = out.join("audit.json");
    write_json(&json, report)?;
    Ok(vec![csv, json])
}
