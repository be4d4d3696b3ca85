use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::boundary_data::{Model, PermittivityProfile};
use crate::error::Result;
use crate::field_solver::{lift_energy, solve_transmission};
use crate::geometry::{chebyshev_bump, sobolev_norms, Deflection, DeviceConfig};
use crate::mechanics::{electrostatic_force, mechanical_energy};

use super::config::{RunConfig, Setup};

/// One checked inequality `lhs <= rhs` on one profile.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditRow {
    pub name: String,
    pub sample_id: String,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub pass: bool,
}

impl AuditRow {
    pub fn new(name: impl Into<String>, sample_id: impl Into<String>, lhs: f64, rhs: f64) -> Self {
        let pass = lhs <= rhs + 1e-9 * (1.0 + rhs.abs());
        AuditRow { name: name.into(), sample_id: sample_id.into(), lhs, rhs, margin: rhs - lhs, pass }
    }
}

/// Constants the audited bounds are built from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConstantsLedger {
    pub m: f64,
    pub k: f64,
    pub sigma_max: f64,
    pub c0: f64,
    /// `None` when `a = 0`.
    pub c1: Option<f64>,
    pub poincare: f64,
}

impl ConstantsLedger {
    pub fn new(setup: &Setup, device: &DeviceConfig) -> Self {
        let l = device.half_width;
        let d_len = 2.0 * l;
        let m = setup.growth.m;
        let sigma_max = setup.sigma.sigma_max;
        let c0 = m * (1.0 + sigma_max) * (3.0 * d_len).max(3.0);
        let a = device.a;
        let c1 = (a > 0.0).then(|| a / 8.0 + c0 + c0 * c0 * (1.0 + 16.0 * l * l).powi(2) / a);
        ConstantsLedger { m, k: setup.growth.k, sigma_max, c0, c1, poincare: 4.0 * l }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AuditReport {
    pub config_hash: String,
    pub constants: ConstantsLedger,
    pub rows: Vec<AuditRow>,
    /// Inequalities not evaluated, with the reason.
    pub skipped: Vec<String>,
}

impl AuditReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn pass_count(&self) -> usize {
        self.rows.iter().filter(|r| r.pass).count()
    }
}

/// A named profile to audit; `force_delta` requests the force bound on the
/// layered field for that thickness only.
#[derive(Clone, Debug)]
pub struct AuditProfile {
    pub id: String,
    pub u: Deflection,
    pub force_delta: Option<Vec<f64>>,
}

/// The zero profile and `±A (1 - (x/L)²)²` with `A` half the smaller
/// extent of the certified range.
pub fn canonical_profiles(cfg: &RunConfig) -> Result<Vec<AuditProfile>> {
    let d = &cfg.device;
    let (lo, hi) = cfg.w_range();
    let amp = 0.5 * (d.gap_height + lo).min(hi);
    let bump = chebyshev_bump(d, &[1.0])?;
    Ok(vec![
        AuditProfile { id: "zero".into(), u: Deflection::zero(d), force_delta: None },
        AuditProfile { id: "bump_up".into(), u: bump.scaled(amp), force_delta: None },
        AuditProfile { id: "bump_down".into(), u: bump.scaled(-amp), force_delta: None },
    ])
}

/// `n` seeded random clamped profiles with values inside 0.9 of the
/// certified range.
pub fn random_profiles(cfg: &RunConfig, n: usize, seed: u64) -> Result<Vec<AuditProfile>> {
    let d = &cfg.device;
    let (lo, hi) = cfg.w_range();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|k| {
            let coeffs: Vec<f64> = (0..6).map(|j| rng.gen_range(-1.0..1.0) / (1.0 + j as f64)).collect();
            // |Σ c_k T_k| <= Σ |c_k| < 2.5, so this pilot stays above the floor
            let pilot = 1e-2 * d.gap_height;
            let scaled: Vec<f64> = coeffs.iter().map(|c| c * pilot).collect();
            let raw = chebyshev_bump(d, &scaled)?;
            let (mx, mn) = (raw.max_sampled(8).max(1e-12), (-raw.min_sampled(8).1).max(1e-12));
            let fit = (0.9 * hi / mx).min(0.9 * (-lo) / mn);
            let scale = fit * rng.gen_range(0.2..1.0);
            Ok(AuditProfile { id: format!("s{k:03}"), u: raw.scaled(scale), force_delta: None })
        })
        .collect()
}

fn norms(u: &Deflection, order: usize) -> (f64, f64, f64) {
    let n = sobolev_norms(u, order);
    (n.l2_sq.sqrt(), n.h1_semi_sq.sqrt(), n.h2_semi_sq.sqrt())
}

fn audit_profile(
    cfg: &RunConfig,
    setup: &Setup,
    c: &ConstantsLedger,
    p: &AuditProfile,
    deltas: &[f64],
) -> Result<Vec<AuditRow>> {
    let d = &cfg.device;
    let id = p.id.as_str();
    let u = &p.u;
    let (n0, n1, n2) = norms(u, d.quadrature_order);
    let mut rows = vec![
        AuditRow::new("pi", id, n0, c.poincare * n1),
        AuditRow::new("pi_slope", id, n1, c.poincare * n2),
        AuditRow::new("e21", id, n1 * n1, n0 * n2),
    ];
    let sigma: &PermittivityProfile = &setup.sigma;
    let e_m = mechanical_energy(u, d);
    let d_len = 2.0 * d.half_width;
    for &delta in deltas {
        if let Some(list) = &p.force_delta {
            if !list.contains(&delta) {
                continue;
            }
        }
        let tag = format!("d{delta}");
        let lift = lift_energy(u, Model::Delta(delta), &setup.bd, sigma, d)?;
        let bound = c.m * (1.0 + c.sigma_max) * (3.0 * (d_len + n0 * n0) + 2.0 * n1 * n1);
        rows.push(AuditRow::new(format!("lift_{tag}"), id, lift, bound));
        let field = solve_transmission(u, delta, &setup.bd, sigma, d)?;
        if let Some(c1) = c.c1 {
            let e_total = e_m + crate::field_solver::electrostatic_energy(&field);
            let lhs = 0.5 * d.beta * n2 * n2 + 0.25 * d.a * n1 * n1;
            rows.push(AuditRow::new(format!("vs_{tag}"), id, lhs, e_total + c1));
        }
        let g = electrostatic_force(&field)?;
        rows.push(AuditRow::new(format!("force_{tag}"), id, -c.k * c.k, g.min()));
    }
    Ok(rows)
}

/// Audits every inequality on the canonical profiles, `n_samples` seeded
/// random profiles and any `extra` profiles (typically minimizers).
pub fn verify_inequalities(
    cfg: &RunConfig,
    n_samples: usize,
    seed: u64,
    extra: &[AuditProfile],
) -> Result<AuditReport> {
    cfg.validate()?;
    let setup = cfg.setup()?;
    let c = ConstantsLedger::new(&setup, &cfg.device);
    let mut profiles = canonical_profiles(cfg)?;
    profiles.extend(random_profiles(cfg, n_samples, seed)?);
    profiles.extend(extra.iter().cloned());
    let mut deltas = cfg.device.delta_list.clone();
    deltas.sort_by(|a, b| b.total_cmp(a));
    let per: Vec<Vec<AuditRow>> = profiles
        .par_iter()
        .map(|p| audit_profile(cfg, &setup, &c, p, &deltas))
        .collect::<Result<_>>()?;
    let mut skipped = Vec::new();
    if c.c1.is_none() {
        skipped.push("vs: requires a > 0".to_string());
    }
    let rows: Vec<AuditRow> = per.into_iter().flatten().collect();
    let failed = rows.iter().filter(|r| !r.pass).count();
    if failed > 0 {
        log::warn!("{failed} audit rows failed");
    }
    Ok(AuditReport { config_hash: cfg.hash(), constants: c, rows, skipped })
}
