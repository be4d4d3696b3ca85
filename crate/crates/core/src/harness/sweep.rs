use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::boundary_data::{GrowthConstants, Model, ValidationReport};
use crate::error::{MemsError, Result};
use crate::field_solver::PotentialField;
use crate::geometry::{sobolev_norms, Deflection, DeflectionSnapshot};
use crate::mechanics::{EnergyModel, ForceProfile};
use crate::optimizer::{multistart, MinimizeResult, Termination};

use super::config::RunConfig;

/// One minimization of the sweep and its distances to the reduced
/// minimizer.
#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    /// Layer thickness; 0 marks the reduced model.
    pub delta: f64,
    pub model: String,
    pub e_mech: f64,
    pub e_elec: f64,
    pub e_total: f64,
    /// Total energy of the rest state `u = 0` in the same model.
    pub e_zero: f64,
    pub err_u_h2: f64,
    pub err_e: f64,
    pub err_psi: f64,
    pub err_psi_h1: f64,
    pub touched: bool,
    pub converged: bool,
    pub termination: Termination,
    pub iters: usize,
    pub projected_grad_norm: f64,
    pub wall_ms: u64,
    /// Final energies of every start, lowest first.
    pub basins: Vec<f64>,
    pub min_force: Option<f64>,
    pub deflection: DeflectionSnapshot,
}

#[derive(Clone, Debug, Serialize)]
pub struct MeshInfo {
    pub nx: usize,
    pub nz_free: usize,
    pub nz_layer: usize,
    pub comparison_nx: usize,
    pub comparison_nz: usize,
    /// Top of the comparison rectangle `D x (-H, M)`.
    pub comparison_top: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepReport {
    pub config_hash: String,
    pub mesh: MeshInfo,
    pub growth: GrowthConstants,
    pub validation: ValidationReport,
    /// Layered rows by decreasing `delta`.
    pub rows: Vec<SweepRow>,
    pub reduced: SweepRow,
    #[serde(skip)]
    pub minimizers: Vec<(Model, Deflection, Option<ForceProfile>)>,
}

impl SweepReport {
    /// Layered rows followed by the reduced sentinel row.
    pub fn all_rows(&self) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().chain(std::iter::once(&self.reduced))
    }
}

struct Run {
    model: Model,
    best: MinimizeResult,
    basins: Vec<f64>,
    e_zero: f64,
    field: PotentialField,
    force: Option<ForceProfile>,
    wall_ms: u64,
}

fn run_model(cfg: &RunConfig, em: &EnergyModel) -> Result<Run> {
    let t0 = Instant::now();
    let runs = multistart(em, &cfg.optimizer)?;
    let basins = runs.iter().map(|r| r.energy.e_total).collect();
    let best = runs.into_iter().next().expect("at least one start");
    let e_zero = em.energy(&Deflection::zero(&em.config))?.e_total;
    let field = em.solve(&best.u_star)?;
    let force = match em.model {
        Model::Delta(_) => Some(crate::mechanics::electrostatic_force(&field)?),
        Model::Reduced => None,
    };
    let wall_ms = t0.elapsed().as_millis() as u64;
    log::info!(
        "{}: E = {:.12e} after {} iterations ({:?})",
        em.model,
        best.energy.e_total,
        best.iterations,
        best.termination
    );
    Ok(Run { model: em.model, best, basins, e_zero, field, force, wall_ms })
}

/// `L2` and `H1`-seminorm distances between the homogeneous parts of two
/// fields, both extended by zero above their plates, by the midpoint rule
/// on `D x (-H, top)`.
pub fn field_distance(a: &PotentialField, b: &PotentialField, nx: usize, nz: usize, top: f64) -> Result<(f64, f64)> {
    let l = a.plate().half_width();
    let h = a.mesh.gap_height();
    let (dx, dz) = (2.0 * l / nx as f64, (top + h) / nz as f64);
    let mut l2 = 0.0;
    let mut h1 = 0.0;
    for i in 0..nx {
        let x = -l + (i as f64 + 0.5) * dx;
        for j in 0..nz {
            let z = -h + (j as f64 + 0.5) * dz;
            let (va, gxa, gza) = a.theta_at(x, z)?;
            let (vb, gxb, gzb) = b.theta_at(x, z)?;
            l2 += (va - vb).powi(2);
            h1 += (gxa - gxb).powi(2) + (gza - gzb).powi(2);
        }
    }
    Ok(((l2 * dx * dz).sqrt(), (h1 * dx * dz).sqrt()))
}

/// Minimizes the reduced energy and the layered energy for every `delta`
/// of the configuration, all from the same initial profiles, and measures
/// how far each layered minimizer is from the reduced one.
pub fn run_delta_sweep(cfg: &RunConfig) -> Result<SweepReport> {
    cfg.validate()?;
    let setup = cfg.setup()?;
    let dev = &cfg.device;
    let mut deltas = dev.delta_list.clone();
    deltas.sort_by(|a, b| b.total_cmp(a));
    let models: Vec<Model> =
        std::iter::once(Model::Reduced).chain(deltas.iter().map(|&d| Model::Delta(d))).collect();
    let runs: Vec<Run> = models
        .par_iter()
        .map(|&model| {
            let em = EnergyModel::new(dev, &setup.bd, &setup.sigma, model);
            run_model(cfg, &em).map_err(|e| match model {
                Model::Delta(delta) => MemsError::AtDelta { delta, source: Box::new(e) },
                Model::Reduced => e,
            })
        })
        .collect::<Result<_>>()?;

    let top = runs
        .iter()
        .map(|r| r.best.u_star.max_sampled(8) + dev.gap_height)
        .fold(dev.gap_height, f64::max);
    let (cnx, cnz) = (cfg.comparison_grid.nx, cfg.comparison_grid.nz);
    let reduced = &runs[0];
    let reference_norm = |u: &Deflection| sobolev_norms(u, dev.quadrature_order).h2_full_sq().sqrt();

    let row = |r: &Run| -> Result<SweepRow> {
        let (err_u_h2, err_e, err_psi, err_psi_h1) = match r.model {
            Model::Reduced => (0.0, 0.0, 0.0, 0.0),
            Model::Delta(_) => {
                let diff = r.best.u_star.axpy(-1.0, &reduced.best.u_star);
                let (p, ph1) = field_distance(&r.field, &reduced.field, cnx, cnz, top)?;
                (reference_norm(&diff), (r.best.energy.e_total - reduced.best.energy.e_total).abs(), p, ph1)
            }
        };
        let e = r.best.energy;
        Ok(SweepRow {
            delta: r.model.delta().unwrap_or(0.0),
            model: r.model.to_string(),
            e_mech: e.e_mech,
            e_elec: e.e_elec,
            e_total: e.e_total,
            e_zero: r.e_zero,
            err_u_h2,
            err_e,
            err_psi,
            err_psi_h1,
            touched: r.best.touched,
            converged: r.best.converged,
            termination: r.best.termination,
            iters: r.best.iterations,
            projected_grad_norm: r.best.projected_grad_norm,
            wall_ms: r.wall_ms,
            basins: r.basins.clone(),
            min_force: r.force.as_ref().map(|f| f.min()),
            deflection: r.best.u_star.snapshot(),
        })
    };
    let rows: Vec<SweepRow> = runs[1..].iter().map(row).collect::<Result<_>>()?;
    let reduced_row = row(reduced)?;
    Ok(SweepReport {
        config_hash: cfg.hash(),
        mesh: MeshInfo {
            nx: dev.nx,
            nz_free: dev.nz_free,
            nz_layer: dev.nz_layer,
            comparison_nx: cnx,
            comparison_nz: cnz,
            comparison_top: top,
        },
        growth: setup.growth,
        validation: setup.validation,
        rows,
        reduced: reduced_row,
        minimizers: runs.into_iter().map(|r| (r.model, r.best.u_star, r.force)).collect(),
    })
}
