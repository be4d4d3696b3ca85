//! Beam energy, the electrostatic force on the plate and total energies.

use rayon::prelude::*;
use serde::Serialize;

use crate::banded::BandedSpd;
use crate::boundary_data::{BoundaryData, Model, PermittivityProfile};
use crate::error::{MemsError, Result};
use crate::field_solver::{electrostatic_energy, solve_model, PotentialField};
use crate::geometry::{hermite_basis, sobolev_norms, Deflection, DeviceConfig};
use crate::quadrature::GaussRule;

/// `E_m`, `E_e` and their sum for one deflection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EnergyBreakdown {
    pub e_mech: f64,
    pub e_elec: f64,
    pub e_total: f64,
    #[serde(serialize_with = "model_str")]
    pub model: Model,
}

fn model_str<S: serde::Serializer>(m: &Model, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&m.to_string())
}

/// `beta/2 |u''|² + (tau/2 + a/4 |u'|²) |u'|²`.
pub fn mechanical_energy(u: &Deflection, config: &DeviceConfig) -> f64 {
    let n = sobolev_norms(u, config.quadrature_order.max(3));
    0.5 * config.beta * n.h2_semi_sq + (0.5 * config.tau + 0.25 * config.a * n.h1_semi_sq) * n.h1_semi_sq
}

/// Integrates `f(element, x, basis)` against every interior Hermite dof.
fn pair_with_basis(u: &Deflection, order: usize, mut f: impl FnMut(usize, f64, f64, f64) -> f64) -> Vec<f64> {
    let rule = GaussRule::new(order);
    let nodes = u.nodes();
    let nn = nodes.len();
    let mut out = vec![0.0; u.num_dofs()];
    for e in 0..nn - 1 {
        let h = nodes[e + 1] - nodes[e];
        for (x, wx) in rule.mapped(nodes[e], nodes[e + 1]) {
            let basis = hermite_basis((x - nodes[e]) / h, h);
            for (k, &(v, d, _)) in basis.iter().enumerate() {
                let node = e + k / 2;
                if node == 0 || node + 1 == nn {
                    continue;
                }
                out[2 * (node - 1) + k % 2] += wx * f(e, x, v, d);
            }
        }
    }
    out
}

/// Gradient of `E_m` on the interior dofs:
/// `v -> beta ∫u''v'' + (tau + a |u'|²) ∫u'v'`.
pub fn mechanical_gradient(u: &Deflection, config: &DeviceConfig) -> Vec<f64> {
    let n = sobolev_norms(u, config.quadrature_order.max(3));
    let stretch = config.tau + config.a * n.h1_semi_sq;
    let rule = GaussRule::new(config.quadrature_order.max(3));
    let nodes = u.nodes();
    let nn = nodes.len();
    let mut out = vec![0.0; u.num_dofs()];
    for e in 0..nn - 1 {
        let h = nodes[e + 1] - nodes[e];
        for (x, wx) in rule.mapped(nodes[e], nodes[e + 1]) {
            let d = u.eval_in_element(e, x);
            let basis = hermite_basis((x - nodes[e]) / h, h);
            for (k, &(_, bd, bdd)) in basis.iter().enumerate() {
                let node = e + k / 2;
                if node == 0 || node + 1 == nn {
                    continue;
                }
                out[2 * (node - 1) + k % 2] += wx * (config.beta * d.curvature * bdd + stretch * d.slope * bd);
            }
        }
    }
    out
}

/// Gram matrix of `c0 (u,v) + c1 (u',v') + c2 (u'',v'')` on the interior
/// Hermite dofs.
pub fn hermite_gram(u: &Deflection, weights: [f64; 3], order: usize) -> BandedSpd {
    let rule = GaussRule::new(order.max(3));
    let nodes = u.nodes();
    let nn = nodes.len();
    let mut m = BandedSpd::zeros(u.num_dofs(), 3);
    for e in 0..nn - 1 {
        let h = nodes[e + 1] - nodes[e];
        for (x, wx) in rule.mapped(nodes[e], nodes[e + 1]) {
            let basis = hermite_basis((x - nodes[e]) / h, h);
            let dof = |k: usize| {
                let node = e + k / 2;
                (node != 0 && node + 1 != nn).then(|| 2 * (node - 1) + k % 2)
            };
            for p in 0..4 {
                let Some(ip) = dof(p) else { continue };
                for q in 0..4 {
                    let Some(iq) = dof(q) else { continue };
                    if iq > ip {
                        continue;
                    }
                    let (a, b) = (basis[p], basis[q]);
                    m.add(ip, iq, wx * (weights[0] * a.0 * b.0 + weights[1] * a.1 * b.1 + weights[2] * a.2 * b.2));
                }
            }
        }
    }
    m
}

/// Which formula produced a force value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ForceBranch {
    FreeRegion,
    Coincidence,
}

/// Electrostatic force `g_delta(u)` at the beam nodes.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ForceProfile {
    pub x: Vec<f64>,
    pub values: Vec<f64>,
    pub branch: Vec<ForceBranch>,
}

impl ForceProfile {
    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `∫ g v` for every interior Hermite dof, `g` interpolated linearly.
    pub fn pair(&self, u: &Deflection, order: usize) -> Vec<f64> {
        let xs = &self.x;
        pair_with_basis(u, order.max(3), |e, x, v, _| {
            let s = (x - xs[e]) / (xs[e + 1] - xs[e]);
            ((1.0 - s) * self.values[e] + s * self.values[e + 1]) * v
        })
    }
}

/// Plate normal flux `∇psi · (-u', 1)` at the mesh nodes, from the weak
/// residual of the top row of elements.
pub fn plate_normal_flux(field: &PotentialField) -> Vec<f64> {
    let r = field.plate_flux_residual();
    let xs = field.mesh.x();
    let n = xs.len() - 1;
    if n < 3 {
        return r.iter().zip(xs.windows(2)).map(|(ri, w)| ri / (w[1] - w[0])).chain([0.0]).collect();
    }
    // Mass system for nodes 1..n-1 closed by linear extrapolation at the ends.
    let m = n - 1;
    let (mut lo, mut di, mut up) = (vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    let rhs: Vec<f64> = r[1..n].to_vec();
    for k in 0..m {
        let i = k + 1;
        let (hl, hr) = (xs[i] - xs[i - 1], xs[i + 1] - xs[i]);
        lo[k] = hl / 6.0;
        di[k] = (hl + hr) / 3.0;
        up[k] = hr / 6.0;
    }
    // q_0 = q_1 + (q_1 - q_2) (x_1 - x_0) / (x_2 - x_1), likewise at the right
    let a0 = (xs[1] - xs[0]) / (xs[2] - xs[1]);
    di[0] += lo[0] * (1.0 + a0);
    up[0] -= lo[0] * a0;
    let an = (xs[n] - xs[n - 1]) / (xs[n - 1] - xs[n - 2]);
    di[m - 1] += up[m - 1] * (1.0 + an);
    lo[m - 1] -= up[m - 1] * an;
    let inner = thomas(&lo, &di, &up, &rhs);
    let mut q = Vec::with_capacity(n + 1);
    q.push(inner[0] + (inner[0] - inner[1]) * a0);
    q.extend_from_slice(&inner);
    q.push(inner[m - 1] + (inner[m - 1] - inner[m - 2]) * an);
    q
}

fn thomas(lo: &[f64], di: &[f64], up: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = di.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = up[0] / di[0];
    d[0] = rhs[0] / di[0];
    for i in 1..n {
        let den = di[i] - lo[i] * c[i - 1];
        c[i] = up[i] / den;
        d[i] = (rhs[i] - lo[i] * d[i - 1]) / den;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    d
}

/// Force from nodal traces. `flux` is `∇psi · (-u', 1)` on the plate;
/// `layer_trace` is `sigma_delta ∂_z psi` on the layer side of `z = -H`,
/// needed only at nodes where the plate touches the layer.
pub fn force_from_traces(
    u: &Deflection,
    bd: &BoundaryData,
    flux: &[f64],
    layer_trace: Option<&[f64]>,
    contact_tol: f64,
) -> Result<ForceProfile> {
    let h = bd.gap_height;
    let xs = u.nodes();
    let mut out = ForceProfile { x: xs.to_vec(), values: Vec::with_capacity(xs.len()), branch: Vec::with_capacity(xs.len()) };
    for (i, &x) in xs.iter().enumerate() {
        let d = u.eval_unchecked(x);
        let (w, s) = (d.value, d.slope);
        let p = bd.h(x, w, w);
        let correction = 0.5 * (p.dx * p.dx + (p.dz + p.dw).powi(2));
        let frak_g = if w + h <= contact_tol {
            let trace = layer_trace.ok_or_else(|| {
                MemsError::TraceUnavailable(format!("plate touches the layer at x = {x} and no layer trace was given"))
            })?;
            out.branch.push(ForceBranch::Coincidence);
            let pb = bd.h(x, -h, w);
            0.5 * (trace[i] - pb.dz - pb.dw).powi(2)
        } else {
            out.branch.push(ForceBranch::FreeRegion);
            let hu_x = p.dx + s * p.dw;
            let lambda = (flux[i] - (-s * hu_x + p.dz)) / (1.0 + s * s);
            0.5 * (1.0 + s * s) * (lambda - p.dw).powi(2)
        };
        out.values.push(frak_g - correction);
    }
    Ok(out)
}

/// `g_delta(u)` for a solved layered field. The coincidence branch uses the
/// field's own layer trace.
pub fn electrostatic_force(field: &PotentialField) -> Result<ForceProfile> {
    if field.model == Model::Reduced {
        return Err(MemsError::ModelMismatch { expected: "delta", found: field.model.to_string() });
    }
    let flux = plate_normal_flux(field);
    let bd = &field.lift.bd;
    let tol = 1e-10 * bd.gap_height;
    let u = field.plate();
    let touches = u.nodes().iter().any(|&x| u.eval_unchecked(x).value + bd.gap_height <= tol);
    let trace = if touches { Some(field.layer_top_flux()?) } else { None };
    force_from_traces(u, bd, &flux, trace.as_deref(), tol)
}

/// How the electrostatic part of the total gradient is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    /// Derivative of the discrete energy at fixed nodal coefficients.
    #[default]
    Discrete,
    /// Pairing of the force `g_delta` with the basis (layered model); the
    /// reduced model falls back to finite differences.
    Force,
    /// Central differences of `E_e` along every dof.
    FiniteDifference,
}

/// A device, its boundary data and one electrostatic model.
#[derive(Clone, Debug)]
pub struct EnergyModel {
    pub config: DeviceConfig,
    pub bd: BoundaryData,
    pub sigma: PermittivityProfile,
    pub model: Model,
}

impl EnergyModel {
    pub fn new(config: &DeviceConfig, bd: &BoundaryData, sigma: &PermittivityProfile, model: Model) -> Self {
        EnergyModel { config: config.clone(), bd: bd.clone(), sigma: sigma.clone(), model }
    }

    pub fn solve(&self, u: &Deflection) -> Result<PotentialField> {
        solve_model(u, self.model, &self.bd, &self.sigma, &self.config)
    }

    pub fn breakdown(&self, u: &Deflection, field: &PotentialField) -> EnergyBreakdown {
        let e_mech = mechanical_energy(u, &self.config);
        let e_elec = electrostatic_energy(field);
        EnergyBreakdown { e_mech, e_elec, e_total: e_mech + e_elec, model: self.model }
    }

    pub fn energy(&self, u: &Deflection) -> Result<EnergyBreakdown> {
        let field = self.solve(u)?;
        Ok(self.breakdown(u, &field))
    }

    /// Electrostatic energy alone.
    pub fn elec(&self, u: &Deflection) -> Result<f64> {
        Ok(electrostatic_energy(&self.solve(u)?))
    }

    /// Electrostatic gradient by central differences; one pair of solves
    /// per dof, run in parallel.
    pub fn fd_elec_gradient(&self, u: &Deflection, eps: f64) -> Result<Vec<f64>> {
        let dofs = u.interior_dofs();
        (0..dofs.len())
            .into_par_iter()
            .map(|k| {
                let mut p = dofs.clone();
                p[k] += eps;
                let ep = self.elec(&u.with_interior_dofs(&p))?;
                p[k] -= 2.0 * eps;
                let em = self.elec(&u.with_interior_dofs(&p))?;
                Ok((ep - em) / (2.0 * eps))
            })
            .collect()
    }

    /// Energy and gradient on the interior dofs.
    pub fn energy_and_gradient(&self, u: &Deflection, mode: GradientMode) -> Result<(EnergyBreakdown, Vec<f64>)> {
        let field = self.solve(u)?;
        let br = self.breakdown(u, &field);
        let elec = match (mode, self.model) {
            (GradientMode::Discrete, _) => field.energy_gradient(),
            (GradientMode::Force, Model::Delta(_)) => {
                electrostatic_force(&field)?.pair(u, self.config.quadrature_order)
            }
            (GradientMode::Force, Model::Reduced) | (GradientMode::FiniteDifference, _) => {
                self.fd_elec_gradient(u, 1e-6)?
            }
        };
        let mut g = mechanical_gradient(u, &self.config);
        g.iter_mut().zip(elec).for_each(|(a, b)| *a += b);
        Ok((br, g))
    }
}

/// `E_m + E_e` for the chosen model.
pub fn total_energy(
    u: &Deflection,
    model: Model,
    bd: &BoundaryData,
    sigma: &PermittivityProfile,
    config: &DeviceConfig,
) -> Result<EnergyBreakdown> {
    EnergyModel::new(config, bd, sigma, model).energy(u)
}

/// Gradient of the total energy on the interior dofs.
pub fn total_gradient(
    u: &Deflection,
    model: Model,
    bd: &BoundaryData,
    sigma: &PermittivityProfile,
    config: &DeviceConfig,
    mode: GradientMode,
) -> Result<Vec<f64>> {
    Ok(EnergyModel::new(config, bd, sigma, model).energy_and_gradient(u, mode)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary_data::{default_grounded_family, FamilySpec};
    use proptest::prelude::*;

    fn quartic_cfg(nx: usize, a: f64) -> DeviceConfig {
        DeviceConfig { nx, beta: 1.0, tau: 1.0, a, ..DeviceConfig::default() }
    }

    fn quartic(c: &DeviceConfig, amp: f64) -> Deflection {
        Deflection::from_fn(c, |x| {
            let s = 1.0 - x * x;
            (amp * s * s, -4.0 * amp * x * s)
        })
        .unwrap()
    }

    #[test]
    fn zero_deflection_has_zero_mechanics() {
        let c = DeviceConfig::default();
        let u = Deflection::zero(&c);
        assert_eq!(mechanical_energy(&u, &c), 0.0);
        assert!(mechanical_gradient(&u, &c).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn quartic_mechanical_energy() {
        let exact = 12.8 + (0.5 + 64.0 / 105.0) * (256.0 / 105.0);
        let exact_a0 = 12.8 + 0.5 * 256.0 / 105.0;
        let mut prev = f64::INFINITY;
        for nx in [16, 32, 64, 128] {
            let c = quartic_cfg(nx, 1.0);
            let err = (mechanical_energy(&quartic(&c, 1.0), &c) - exact).abs();
            assert!(err < prev);
            prev = err;
        }
        assert!(prev < 1e-3, "{prev}");
        assert!((exact - 15.50512).abs() < 1e-5);
        let c = quartic_cfg(128, 0.0);
        assert!((mechanical_energy(&quartic(&c, 1.0), &c) - exact_a0).abs() < 1e-3);
        assert!((exact_a0 - 14.019048).abs() < 1e-6);
    }

    #[test]
    fn pure_bending_gradient_is_twice_energy() {
        let c = DeviceConfig { nx: 12, beta: 1.0, tau: 0.0, a: 0.0, ..DeviceConfig::default() };
        let u = quartic(&c, 0.4);
        let g = mechanical_gradient(&u, &c);
        let pair: f64 = g.iter().zip(u.interior_dofs()).map(|(a, b)| a * b).sum();
        assert!((pair - 2.0 * mechanical_energy(&u, &c)).abs() < 1e-10);
    }

    fn random_clamped(c: &DeviceConfig, coef: &[f64]) -> Deflection {
        Deflection::from_fn(c, |x| {
            let s = 1.0 - x * x;
            let (mut p, mut dp) = (0.0, 0.0);
            for (k, &a) in coef.iter().enumerate() {
                p += a * x.powi(k as i32);
                if k > 0 {
                    dp += a * k as f64 * x.powi(k as i32 - 1);
                }
            }
            (s * s * p, s * s * dp - 4.0 * x * s * p)
        })
        .unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn mechanical_gradient_matches_central_differences(
            cu in proptest::collection::vec(-0.5f64..0.5, 4),
            cv in proptest::collection::vec(-0.4f64..0.4, 4),
        ) {
            let c = DeviceConfig { nx: 10, ..DeviceConfig::default() };
            let u = random_clamped(&c, &cu);
            let v = random_clamped(&c, &cv);
            let g = mechanical_gradient(&u, &c);
            let dir: f64 = g.iter().zip(v.interior_dofs()).map(|(a, b)| a * b).sum();
            let eps = 1e-5;
            let fd = (mechanical_energy(&u.axpy(eps, &v), &c) - mechanical_energy(&u.axpy(-eps, &v), &c)) / (2.0 * eps);
            prop_assert!((dir - fd).abs() <= 1e-6 * (1.0 + fd.abs()), "{} vs {}", dir, fd);
        }
    }

    #[test]
    fn gram_matrix_reproduces_sobolev_norm() {
        let c = DeviceConfig { nx: 10, ..DeviceConfig::default() };
        let u = quartic(&c, 0.7);
        let m = hermite_gram(&u, [1.0, 1.0, 1.0], 4);
        let d = u.interior_dofs();
        let q: f64 = m.mul_vec(&d).iter().zip(&d).map(|(a, b)| a * b).sum();
        assert!((q - sobolev_norms(&u, 4).h2_full_sq()).abs() < 1e-11);
    }

    #[test]
    fn zero_voltage_force_vanishes() {
        let c = DeviceConfig { nx: 12, nz_free: 8, nz_layer: 4, ..DeviceConfig::default() };
        let s = PermittivityProfile::constant(2.0, 1.0, 1.0).unwrap();
        let bd = default_grounded_family(0.0, &s, 1.0);
        let u = quartic(&c, 0.2);
        let f = crate::field_solver::solve_transmission(&u, 0.1, &bd, &s, &c).unwrap();
        let g = electrostatic_force(&f).unwrap();
        assert!(g.values.iter().all(|&v| v == 0.0));
        let m = EnergyModel::new(&c, &bd, &s, Model::Delta(0.1));
        let (_, tg) = m.energy_and_gradient(&u, GradientMode::Force).unwrap();
        assert_eq!(tg, mechanical_gradient(&u, &c));
    }

    #[test]
    fn grounded_force_is_nonnegative() {
        let c = DeviceConfig { nx: 16, nz_free: 8, nz_layer: 4, ..DeviceConfig::default() };
        let s = PermittivityProfile::constant(2.0, 1.0, 1.0).unwrap();
        let bd = default_grounded_family(2.0, &s, 1.0);
        let u = quartic(&c, -0.4);
        let f = crate::field_solver::solve_transmission(&u, 0.05, &bd, &s, &c).unwrap();
        let g = electrostatic_force(&f).unwrap();
        assert!(g.min() >= 0.0);
        assert!(g.branch.iter().all(|&b| b == ForceBranch::FreeRegion));
        for &x in u.nodes() {
            let w = u.eval_unchecked(x).value;
            let p = bd.h(x, w, w);
            assert_eq!(p.dx, 0.0);
            assert!((p.dz + p.dw).abs() < 1e-15);
        }
    }

    #[test]
    fn coincidence_branch_uses_layer_trace() {
        let c = DeviceConfig { nx: 4, ..DeviceConfig::default() };
        let s = PermittivityProfile::constant(2.0, 1.0, 1.0).unwrap();
        let bd = default_grounded_family(1.0, &s, 1.0);
        // touches the layer at x = 0
        let u = Deflection::from_fn(&c, |x| {
            let q = 1.0 - x * x;
            (-q * q, 4.0 * x * q)
        })
        .unwrap();
        let flux = vec![0.0; 5];
        assert!(matches!(force_from_traces(&u, &bd, &flux, None, 1e-12), Err(MemsError::TraceUnavailable(_))));
        let trace = vec![0.0, 0.0, 3.0, 0.0, 0.0];
        let g = force_from_traces(&u, &bd, &flux, Some(&trace), 1e-12).unwrap();
        assert_eq!(g.branch[2], ForceBranch::Coincidence);
        // h_z + h_w at (0, -H, -H) with H + w = 0 is singular for this
        // family; the series family is regular there
        let sc = FamilySpec::SeriesCapacitor { voltage: 1.0, s: 2.0 }.build(&s);
        let g = force_from_traces(&u, &sc, &flux, Some(&trace), 1e-12).unwrap();
        let p = sc.h(0.0, -1.0, -1.0);
        let expect = 0.5 * (3.0 - p.dz - p.dw).powi(2) - 0.5 * (p.dz + p.dw).powi(2);
        assert!((g.values[2] - expect).abs() < 1e-14);
        assert!(g.branch.iter().filter(|&&b| b == ForceBranch::Coincidence).count() == 1);
    }

    #[test]
    fn manufactured_total_energy() {
        let c = DeviceConfig { nx: 8, nz_free: 4, nz_layer: 4, ..DeviceConfig::default() };
        let s = PermittivityProfile::constant(2.0, 1.0, 1.0).unwrap();
        let bd = FamilySpec::SeriesCapacitor { voltage: 1.0, s: 2.0 }.build(&s);
        let u = Deflection::zero(&c);
        for model in [Model::Delta(0.1), Model::Reduced] {
            let e = total_energy(&u, model, &bd, &s, &c).unwrap();
            assert_eq!(e.e_mech, 0.0);
            assert!((e.e_total + 2.0 / 3.0).abs() < 1e-12);
        }
    }
}
