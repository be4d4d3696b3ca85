//! Projected gradient descent for the total energy over clamped profiles
//! above the obstacle.
//!
//! Search directions are Riesz representers of the gradient in the discrete
//! H² inner product, so the step size does not degrade with mesh
//! refinement. Iterates are projected nodewise onto `u >= -H + eps_gap H`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::banded::BandedCholesky;
use crate::error::{MemsError, Result};
use crate::geometry::{chebyshev_bump, Deflection, DeviceConfig};
use crate::mechanics::{hermite_gram, EnergyBreakdown, EnergyModel, GradientMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObstacleMode {
    #[default]
    NodalProjection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinimizeOptions {
    pub max_iters: usize,
    /// Absolute tolerance on the projected gradient norm; `None` uses
    /// `1e-6 (1 + |E(init)|)`.
    pub grad_tol: Option<f64>,
    pub step0: f64,
    pub backtrack_factor: f64,
    pub armijo_c: f64,
    pub obstacle_mode: ObstacleMode,
    pub seed: u64,
    pub gradient: GradientMode,
    /// Random restarts in addition to the zero profile.
    pub restarts: usize,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions {
            max_iters: 500,
            grad_tol: None,
            step0: 1.0,
            backtrack_factor: 0.5,
            armijo_c: 1e-4,
            obstacle_mode: ObstacleMode::NodalProjection,
            seed: 0,
            gradient: GradientMode::Discrete,
            restarts: 0,
        }
    }
}

impl MinimizeOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(MemsError::Config(format!("optimizer: {m}")));
        if self.max_iters == 0 {
            return bad("max_iters must be positive");
        }
        if let Some(t) = self.grad_tol {
            if !(t > 0.0) {
                return bad("grad_tol must be positive");
            }
        }
        if !(self.step0 > 0.0) {
            return bad("step0 must be positive");
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return bad("backtrack_factor must lie in (0, 1)");
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return bad("armijo_c must lie in (0, 1)");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxItersExceeded,
    LineSearchStalled,
}

#[derive(Clone, Debug, Serialize)]
pub struct MinimizeResult {
    #[serde(skip)]
    pub u_star: Deflection,
    pub energy: EnergyBreakdown,
    pub iterations: usize,
    pub projected_grad_norm: f64,
    pub grad_tol: f64,
    /// Some iterate reached the gap floor.
    pub touched: bool,
    pub converged: bool,
    pub termination: Termination,
    /// Total energy after every accepted step, starting with the initial one.
    pub history: Vec<f64>,
}

/// Lowest admissible nodal value during descent.
pub fn gap_floor_value(config: &DeviceConfig) -> f64 {
    // a hair above the solver floor so a flat contact segment still passes
    // the gap check after rounding
    -config.gap_height + config.eps_gap * config.gap_height * (1.0 + 1e-6)
}

/// Nodal projection onto `u >= -H`: values below are lifted to `-H` and
/// their slopes zeroed. Clamped ends are left alone.
pub fn project_obstacle(u: &Deflection, gap_height: f64) -> Deflection {
    project_to(u, -gap_height).0
}

fn project_to(u: &Deflection, floor: f64) -> (Deflection, bool) {
    let mut dofs = u.interior_dofs();
    let mut hit = false;
    for k in 0..dofs.len() / 2 {
        if dofs[2 * k] < floor {
            dofs[2 * k] = floor;
            dofs[2 * k + 1] = 0.0;
            hit = true;
        } else if dofs[2 * k] == floor {
            hit = true;
        }
    }
    (u.with_interior_dofs(&dofs), hit)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Metric {
    gram: crate::banded::BandedSpd,
    chol: BandedCholesky,
}

impl Metric {
    fn new(u: &Deflection, order: usize) -> Result<Self> {
        let gram = hermite_gram(u, [1.0, 1.0, 1.0], order);
        let chol = gram.cholesky()?;
        Ok(Metric { gram, chol })
    }

    fn norm(&self, v: &[f64]) -> f64 {
        dot(v, &self.gram.mul_vec(v)).max(0.0).sqrt()
    }
}

/// Minimizes the total energy of `model` starting from `init`.
pub fn minimize_total(model: &EnergyModel, init: &Deflection, opts: &MinimizeOptions) -> Result<MinimizeResult> {
    opts.validate()?;
    let config = &model.config;
    let floor = gap_floor_value(config);
    let metric = Metric::new(init, config.quadrature_order)?;
    let (mut u, mut touched) = project_to(init, floor);
    let with_iter = |iteration: usize| move |e: MemsError| MemsError::Iterate { iteration, source: Box::new(e) };
    let (mut energy, mut grad) = model.energy_and_gradient(&u, opts.gradient).map_err(with_iter(0))?;
    let tol = opts.grad_tol.unwrap_or(1e-6 * (1.0 + energy.e_total.abs()));
    let mut history = vec![energy.e_total];
    let mut t_prev = opts.step0;
    let mut pg_norm = f64::INFINITY;
    let mut termination = Termination::MaxItersExceeded;
    let mut iterations = 0;

    for it in 0..opts.max_iters {
        iterations = it;
        let p = u.interior_dofs();
        let dir: Vec<f64> = metric.chol.solve(&grad).iter().map(|v| -v).collect();
        let unit: Vec<f64> = {
            let trial: Vec<f64> = p.iter().zip(&dir).map(|(a, b)| a + b).collect();
            let (q, _) = project_to(&u.with_interior_dofs(&trial), floor);
            q.interior_dofs().iter().zip(&p).map(|(a, b)| a - b).collect()
        };
        pg_norm = metric.norm(&unit);
        log::debug!("iter {it}: E = {:.15e}, |pg| = {pg_norm:.3e}", energy.e_total);
        if pg_norm <= tol {
            termination = Termination::Converged;
            break;
        }
        let mut t = (2.0 * t_prev).min(opts.step0);
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = p.iter().zip(&dir).map(|(a, b)| a + t * b).collect();
            let (cand, hit) = project_to(&u.with_interior_dofs(&trial), floor);
            let step: Vec<f64> = cand.interior_dofs().iter().zip(&p).map(|(a, b)| a - b).collect();
            match model.energy_and_gradient(&cand, opts.gradient) {
                Ok((e, g)) if e.e_total <= energy.e_total + opts.armijo_c * dot(&grad, &step) => {
                    accepted = Some((cand, e, g, hit));
                    break;
                }
                Ok(_) | Err(MemsError::TouchdownGeometry { .. }) => t *= opts.backtrack_factor,
                Err(e) => return Err(with_iter(it)(e)),
            }
        }
        let Some((cand, e, g, hit)) = accepted else {
            termination = Termination::LineSearchStalled;
            break;
        };
        touched |= hit;
        t_prev = t;
        u = cand;
        energy = e;
        grad = g;
        history.push(energy.e_total);
        iterations = it + 1;
    }
    if termination == Termination::MaxItersExceeded {
        log::warn!("minimization stopped after {} iterations, |pg| = {pg_norm:.3e}", opts.max_iters);
    }
    Ok(MinimizeResult {
        u_star: u,
        energy,
        iterations,
        projected_grad_norm: pg_norm,
        grad_tol: tol,
        touched,
        converged: termination == Termination::Converged,
        termination,
        history,
    })
}

/// A seeded random clamped profile with values inside `(-H, amplitude]`.
pub fn random_profile(config: &DeviceConfig, rng: &mut ChaCha8Rng, amplitude: f64) -> Result<Deflection> {
    // Σ |c_k| < 2.3, so the pilot profile clears the obstacle
    let pilot = 1e-2 * config.gap_height;
    let coeffs: Vec<f64> = (0..5).map(|k| pilot * rng.gen_range(-1.0..1.0) / (1.0 + k as f64)).collect();
    let raw = chebyshev_bump(config, &coeffs)?;
    let peak = raw.max_abs_sampled(8).max(1e-12);
    let amp = amplitude.min(0.5 * config.gap_height);
    Ok(raw.scaled(amp / peak))
}

/// One run from the zero profile plus `opts.restarts` seeded random starts,
/// all independent. The lowest final energy comes first.
pub fn multistart(model: &EnergyModel, opts: &MinimizeOptions) -> Result<Vec<MinimizeResult>> {
    let config = &model.config;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut inits = vec![Deflection::zero(config)];
    for _ in 0..opts.restarts {
        inits.push(random_profile(config, &mut rng, 0.3 * config.gap_height)?);
    }
    let mut runs: Vec<MinimizeResult> =
        inits.par_iter().map(|u0| minimize_total(model, u0, opts)).collect::<Result<_>>()?;
    runs.sort_by(|a, b| a.energy.e_total.total_cmp(&b.energy.e_total));
    Ok(runs)
}

/// Largest relative mismatch between gradient pairings and central
/// differences of the total energy along `directions` random clamped
/// directions.
pub fn fd_gradient_check(
    model: &EnergyModel,
    u: &Deflection,
    directions: usize,
    eps: f64,
    seed: u64,
    mode: GradientMode,
) -> Result<f64> {
    let (_, g) = model.energy_and_gradient(u, mode)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dirs: Vec<Deflection> = (0..directions)
        .map(|_| random_profile(&model.config, &mut rng, 0.5 * model.config.gap_height))
        .collect::<Result<_>>()?;
    let errs: Vec<f64> = dirs
        .par_iter()
        .map(|v| {
            let pair = dot(&g, &v.interior_dofs());
            let ep = model.energy(&u.axpy(eps, v))?.e_total;
            let em = model.energy(&u.axpy(-eps, v))?.e_total;
            let fd = (ep - em) / (2.0 * eps);
            Ok((pair - fd).abs() / fd.abs().max(1e-12))
        })
        .collect::<Result<_>>()?;
    Ok(errs.into_iter().fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary_data::{default_grounded_family, Model, PermittivityProfile};

    fn setup(v: f64, nx: usize, model: Model) -> EnergyModel {
        let c = DeviceConfig { nx, nz_free: 8, nz_layer: 8, ..DeviceConfig::default() };
        let s = PermittivityProfile::constant(2.0, 1.0, 1.0).unwrap();
        let bd = default_grounded_family(v, &s, 1.0);
        EnergyModel::new(&c, &bd, &s, model)
    }

    #[test]
    fn projection_examples() {
        let c = DeviceConfig { nx: 8, ..DeviceConfig::default() };
        let u = Deflection::from_fn(&c, |x| (0.3 * (1.0 - x * x).powi(2), -1.2 * x * (1.0 - x * x))).unwrap();
        assert_eq!(project_obstacle(&u, 1.0), u);
        let mut d = u.interior_dofs();
        d[6] = -1.2;
        d[7] = 0.4;
        let p = project_obstacle(&u.with_interior_dofs(&d), 1.0);
        assert_eq!(p.values()[4], -1.0);
        assert_eq!(p.slopes()[4], 0.0);
        assert_eq!(project_obstacle(&p, 1.0), p);
        assert_eq!(p.values()[0], 0.0);
    }

    #[test]
    fn zero_voltage_stays_at_rest() {
        let m = setup(0.0, 8, Model::Delta(0.1));
        let r = minimize_total(&m, &Deflection::zero(&m.config), &MinimizeOptions::default()).unwrap();
        assert!(r.converged && r.iterations <= 2);
        assert!(r.u_star.values().iter().all(|&v| v == 0.0));
        assert_eq!(r.energy.e_total, 0.0);
    }

    #[test]
    fn descent_is_monotone_and_converges() {
        for model in [Model::Delta(0.1), Model::Reduced] {
            let m = setup(2.0, 12, model);
            let r = minimize_total(&m, &Deflection::zero(&m.config), &MinimizeOptions::default()).unwrap();
            assert!(r.converged, "{model}: {:?} after {}", r.termination, r.iterations);
            assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
            assert!(r.energy.e_total <= r.history[0] && r.history[0] <= 0.0);
            assert!(!r.touched);
            let dev = r.u_star.max_abs_sampled(4);
            assert!(dev > 0.01 && dev < 0.5, "{dev}");
            // interior minimizer: the unprojected gradient is small too
            let (_, g) = m.energy_and_gradient(&r.u_star, GradientMode::Discrete).unwrap();
            let metric = Metric::new(&r.u_star, 4).unwrap();
            let rep = metric.chol.solve(&g);
            assert!(metric.norm(&rep) <= 10.0 * r.grad_tol);
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let m = setup(2.0, 8, Model::Delta(0.2));
        let opts = MinimizeOptions { restarts: 2, seed: 7, max_iters: 40, ..MinimizeOptions::default() };
        let a = multistart(&m, &opts).unwrap();
        let b = multistart(&m, &opts).unwrap();
        assert_eq!(a.len(), 3);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.u_star, y.u_star);
            assert_eq!(x.history, y.history);
        }
    }

    #[test]
    fn strong_voltage_hits_the_gap_floor() {
        let m = setup(12.0, 8, Model::Delta(0.1));
        let opts = MinimizeOptions { max_iters: 200, ..MinimizeOptions::default() };
        let r = minimize_total(&m, &Deflection::zero(&m.config), &opts).unwrap();
        assert!(r.touched);
        let floor = gap_floor_value(&m.config);
        assert!(r.u_star.values().iter().all(|&v| v >= floor));
        assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn gradient_check_without_field() {
        let m = setup(0.0, 10, Model::Delta(0.1));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = random_profile(&m.config, &mut rng, 0.3).unwrap();
        let err = fd_gradient_check(&m, &u, 5, 1e-5, 11, GradientMode::Force).unwrap();
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn options_validation() {
        assert!(MinimizeOptions::default().validate().is_ok());
        let bad = MinimizeOptions { backtrack_factor: 1.0, ..MinimizeOptions::default() };
        assert!(bad.validate().is_err());
        let bad = MinimizeOptions { grad_tol: Some(0.0), ..MinimizeOptions::default() };
        assert!(bad.validate().is_err());
    }
}
