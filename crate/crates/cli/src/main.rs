use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mems_core::geometry::{build_deflection_from_samples, DeflectionSnapshot};
use mems_core::harness::export::{self, fmt_f64};
use mems_core::harness::{run_delta_sweep, verify_inequalities, AuditProfile, RunConfig};
use mems_core::{solve_model, Deflection, MemsError, Model};

#[derive(Parser)]
#[command(name = "mems", version, about = "Thin-layer electrostatic MEMS experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Minimize the layered energies and the reduced energy, compare, audit.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
        /// Random audit profiles added to the canonical ones.
        #[arg(long, default_value_t = 50)]
        samples: usize,
        /// Seed of the audit profiles; defaults to the optimizer seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Record wall times (the CSV is then no longer reproducible).
        #[arg(long)]
        timings: bool,
    },
    /// Check the analytic inequalities on seeded random profiles.
    Audit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        samples: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Solve one field problem and print the potential as CSV.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// `delta:<d>` or `reduced`.
        #[arg(long)]
        model: String,
        /// JSON snapshot (`nodes`, `values`, `slopes`) or CSV `x,value,slope`.
        #[arg(long)]
        deflection: PathBuf,
    },
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("MEMS_LOG", "error");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

fn init_pool(jobs: Option<usize>) -> Result<(), MemsError> {
    if let Some(n) = jobs {
        if n == 0 {
            return Err(MemsError::Config("--jobs must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| MemsError::Config(e.to_string()))?;
    }
    Ok(())
}

fn read_deflection(path: &Path, cfg: &RunConfig) -> Result<Deflection, MemsError> {
    let text = fs::read_to_string(path)
        .map_err(|e| MemsError::Config(format!("cannot read {}: {e}", path.display())))?;
    if text.trim_start().starts_with('{') {
        let snap: DeflectionSnapshot = serde_json::from_str(&text)?;
        return Deflection::from_snapshot(&snap, &cfg.device);
    }
    let mut samples = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: Result<Vec<f64>, _> = cols.iter().map(|c| c.parse::<f64>()).collect();
        match parsed {
            Ok(v) if v.len() == 3 => samples.push((v[0], v[1], v[2])),
            Err(_) if k == 0 => continue,
            _ => {
                return Err(MemsError::InvalidSamples(format!(
                    "{}:{}: expected x,value,slope",
                    path.display(),
                    k + 1
                )))
            }
        }
    }
    build_deflection_from_samples(&samples, &cfg.device)
}

fn sweep(
    config: &Path,
    out: &Path,
    samples: usize,
    seed: Option<u64>,
    timings: bool,
) -> Result<(), MemsError> {
    let cfg = RunConfig::from_path(config)?;
    export::write_config_echo(&cfg, out)?;
    let report = run_delta_sweep(&cfg)?;
    export::write_sweep(&report, out, timings)?;
    let extra: Vec<AuditProfile> = report
        .minimizers
        .iter()
        .filter_map(|(model, u, _)| {
            model.delta().map(|d| AuditProfile {
                id: format!("min_{model}"),
                u: u.clone(),
                force_delta: Some(vec![d]),
            })
        })
        .collect();
    let audit = verify_inequalities(&cfg, samples, seed.unwrap_or(cfg.optimizer.seed), &extra)?;
    export::write_audit(&audit, out)?;
    for row in report.all_rows() {
        log::info!(
            "{}: e_total {} err_u_h2 {} err_e {}",
            row.model,
            fmt_f64(row.e_total),
            fmt_f64(row.err_u_h2),
            fmt_f64(row.err_e)
        );
    }
    log::info!("audit {}/{} rows pass", audit.pass_count(), audit.rows.len());
    Ok(())
}

fn audit(config: &Path, samples: usize, seed: u64, out: &Path) -> Result<(), MemsError> {
    let cfg = RunConfig::from_path(config)?;
    export::write_config_echo(&cfg, out)?;
    let audit = verify_inequalities(&cfg, samples, seed, &[])?;
    export::write_audit(&audit, out)?;
    log::info!("audit {}/{} rows pass", audit.pass_count(), audit.rows.len());
    Ok(())
}

fn solve(config: &Path, model: &str, deflection: &Path) -> Result<(), MemsError> {
    let cfg = RunConfig::from_path(config)?;
    let setup = cfg.setup()?;
    let model: Model = model.parse()?;
    let u = read_deflection(deflection, &cfg)?;
    let field = solve_model(&u, model, &setup.bd, &setup.sigma, &cfg.device)?;
    let d = &cfg.device;
    let (l, h) = (d.half_width, d.gap_height);
    let top = h + u.max_sampled(8).max(0.0);
    let (nx, nz) = (cfg.comparison_grid.nx, cfg.comparison_grid.nz);
    let mut rows = Vec::new();
    for i in 0..=nx {
        let x = -l + 2.0 * l * i as f64 / nx as f64;
        let ux = u.eval(x)?.value;
        for j in 0..=nz {
            let z = -h + (top + h) * j as f64 / nz as f64;
            if z > ux {
                break;
            }
            rows.push((x, z, field.psi_at(x, z)?.0));
        }
    }
    let stdout = io::stdout();
    let mut w = BufWriter::new(stdout.lock());
    let written = writeln!(w, "x,z,psi")
        .and_then(|_| {
            rows.iter().try_for_each(|(x, z, p)| writeln!(w, "{},{},{}", fmt_f64(*x), fmt_f64(*z), fmt_f64(*p)))
        })
        .and_then(|_| w.flush());
    match written {
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn run(cli: Cli) -> Result<(), MemsError> {
    match cli.command {
        Command::Sweep { config, out, jobs, samples, seed, timings } => {
            init_pool(jobs)?;
            sweep(&config, &out, samples, seed, timings)
        }
        Command::Audit { config, samples, seed, out, jobs } => {
            init_pool(jobs)?;
            audit(&config, samples, seed, &out)
        }
        Command::Solve { config, model, deflection } => solve(&config, &model, &deflection),
    }
}

fn main() -> ExitCode {
    init_logging();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
