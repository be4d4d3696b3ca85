//! Electrostatic potentials for the layered and the reduced model.
//!
//! Both problems are solved as quadratic minimizations over the homogeneous
//! part `theta = psi - lift` with bilinear elements on mapped tensor grids:
//!
//! ```text
//! G_delta[theta] = 1/2 ∫ sigma_delta |∇(theta + h_delta)|²
//! G[theta]       = 1/2 ∫ |∇(theta + h)|² + 1/2 ∫_D sigma(x,-H) (theta + h - 𝔥)²(x,-H) dx
//! ```
//!
//! Nodes are numbered column by column; a column holds the layer rows
//! (layered model only) followed by the free-region rows, with the interface
//! row shared.

use crate::banded::{solve_refined, BandedSpd};
use crate::boundary_data::{BoundaryData, LiftField, LiftPoint, Model, PermittivityProfile};
use crate::error::{MemsError, Result};
use crate::geometry::{build_free_mesh, build_meshes, hermite_basis, Deflection, DeviceConfig, MeshPair};
use crate::quadrature::GaussRule;

/// Discrete potential `psi = theta + lift` for one deflection and model.
#[derive(Clone, Debug)]
pub struct PotentialField {
    pub model: Model,
    pub mesh: MeshPair,
    pub lift: LiftField,
    pub sigma: PermittivityProfile,
    /// Nodal `theta`, column-major, `rows()` values per column.
    pub theta: Vec<f64>,
    /// `G_delta[theta]` or `G[theta]` at the computed minimizer.
    pub functional_value: f64,
    /// `|A theta + b| / |b|` of the discrete stationarity system.
    pub residual: f64,
    quadrature_order: usize,
}

/// Local basis data at one point of one element.
struct Frame {
    nodes: [usize; 4],
    vals: [f64; 4],
    grads: [[f64; 2]; 4],
    z: f64,
    /// `dA / (dx dt)`.
    jac: f64,
    sigma: f64,
}

/// Shared geometry of a discretization; borrowed by every integration loop.
struct Disc<'a> {
    mesh: &'a MeshPair,
    lift: &'a LiftField,
    sigma: &'a PermittivityProfile,
    model: Model,
    nzl: usize,
    rows: usize,
    rule: GaussRule,
}

impl<'a> Disc<'a> {
    fn new(
        mesh: &'a MeshPair,
        lift: &'a LiftField,
        sigma: &'a PermittivityProfile,
        model: Model,
        order: usize,
    ) -> Self {
        let nzl = mesh.layer_mesh.as_ref().map_or(0, |g| g.eta.len() - 1);
        let rows = nzl + mesh.free_mesh.eta.len();
        Disc { mesh, lift, sigma, model, nzl, rows, rule: GaussRule::new(order.max(1)) }
    }

    fn ncols(&self) -> usize {
        self.mesh.interface_x.len()
    }

    fn nrow_elems(&self) -> usize {
        self.rows - 1
    }

    fn first_free_row(&self) -> usize {
        match self.model {
            Model::Delta(_) => 1,
            Model::Reduced => 0,
        }
    }

    fn unknowns_per_col(&self) -> usize {
        self.rows - 1 - self.first_free_row()
    }

    fn num_unknowns(&self) -> usize {
        (self.ncols() - 2) * self.unknowns_per_col()
    }

    #[inline]
    fn unknown(&self, node: usize) -> Option<usize> {
        let (i, r) = (node / self.rows, node % self.rows);
        let r0 = self.first_free_row();
        if i == 0 || i + 1 >= self.ncols() || r < r0 || r + 1 >= self.rows {
            None
        } else {
            Some((i - 1) * self.unknowns_per_col() + r - r0)
        }
    }

    /// Grid and local row of row element `r`.
    #[inline]
    fn strip(&self, r: usize) -> (&crate::geometry::TensorGrid, usize, bool) {
        if r < self.nzl {
            (self.mesh.layer_mesh.as_ref().expect("layer rows without layer mesh"), r, true)
        } else {
            (&self.mesh.free_mesh, r - self.nzl, false)
        }
    }

    #[inline]
    fn frame(&self, e: usize, r: usize, x: f64, t: f64, w: f64, w_dx: f64) -> Frame {
        let xs = &self.mesh.interface_x;
        let hx = xs[e + 1] - xs[e];
        let s = (x - xs[e]) / hx;
        let (grid, j, layer) = self.strip(r);
        let (eta0, eta1) = (grid.eta[j], grid.eta[j + 1]);
        let he = eta1 - eta0;
        let eta = eta0 + t * he;
        let map = self.mesh.column_map_with(grid, w, w_dx);
        let z = map.z(eta);
        let t_x = map.eta_dx(eta) / he;
        let t_z = 1.0 / (map.gap * he);
        let n = [(1.0 - s) * (1.0 - t), s * (1.0 - t), (1.0 - s) * t, s * t];
        let ns = [-(1.0 - t), 1.0 - t, -t, t];
        let nt = [-(1.0 - s), -s, 1.0 - s, s];
        let mut grads = [[0.0; 2]; 4];
        for a in 0..4 {
            grads[a] = [ns[a] / hx + nt[a] * t_x, nt[a] * t_z];
        }
        let base = e * self.rows + r;
        let sigma = if layer {
            self.model.delta().unwrap_or(1.0) * self.sigma.value(x, z)
        } else {
            1.0
        };
        Frame {
            nodes: [base, base + self.rows, base + 1, base + self.rows + 1],
            vals: n,
            grads,
            z,
            jac: map.gap * he,
            sigma,
        }
    }

    #[inline]
    fn lift_at(&self, x: f64, z: f64, w: f64, w_dx: f64) -> LiftPoint {
        self.lift.eval_with(x, z, w, w_dx)
    }

    /// Robin term data on the bottom edge at `x`: `(sigma(x,-H), h(x,-H,w) - 𝔥(x,w))`.
    #[inline]
    fn robin_at(&self, x: f64, w: f64) -> (f64, f64) {
        let h = self.mesh.gap_height();
        let bd = &self.lift.bd;
        (self.sigma.value(x, -h), bd.h(x, -h, w).value - bd.frak_h(x, w))
    }

    fn assemble(&self) -> (BandedSpd, Vec<f64>, f64) {
        let n = self.num_unknowns();
        let mut a = BandedSpd::zeros(n, self.unknowns_per_col() + 1);
        let mut b = vec![0.0; n];
        let mut c = 0.0;
        let plate = self.mesh.plate();
        let xs = &self.mesh.interface_x;
        for e in 0..self.ncols() - 1 {
            for (x, wx) in self.rule.mapped(xs[e], xs[e + 1]) {
                let d = plate.eval_in_element(e, x);
                for r in 0..self.nrow_elems() {
                    for (t, wt) in self.rule.mapped(0.0, 1.0) {
                        let f = self.frame(e, r, x, t, d.value, d.slope);
                        let lp = self.lift_at(x, f.z, d.value, d.slope);
                        let wgt = wx * wt * f.jac * f.sigma;
                        c += 0.5 * wgt * (lp.grad_x * lp.grad_x + lp.grad_z * lp.grad_z);
                        for p in 0..4 {
                            let Some(ip) = self.unknown(f.nodes[p]) else { continue };
                            let gp = f.grads[p];
                            b[ip] += wgt * (gp[0] * lp.grad_x + gp[1] * lp.grad_z);
                            for q in 0..=p {
                                if let Some(iq) = self.unknown(f.nodes[q]) {
                                    let gq = f.grads[q];
                                    a.add(ip, iq, wgt * (gp[0] * gq[0] + gp[1] * gq[1]));
                                }
                            }
                        }
                    }
                }
                if self.model == Model::Reduced {
                    let (s0, g) = self.robin_at(x, d.value);
                    let hx = xs[e + 1] - xs[e];
                    let s = (x - xs[e]) / hx;
                    let nodes = [e * self.rows, (e + 1) * self.rows];
                    let vals = [1.0 - s, s];
                    c += 0.5 * wx * s0 * g * g;
                    for p in 0..2 {
                        let Some(ip) = self.unknown(nodes[p]) else { continue };
                        b[ip] += wx * s0 * vals[p] * g;
                        for q in 0..=p {
                            if let Some(iq) = self.unknown(nodes[q]) {
                                a.add(ip, iq, wx * s0 * vals[p] * vals[q]);
                            }
                        }
                    }
                }
            }
        }
        (a, b, c)
    }

    /// Functional density integrated over one column at abscissa `x`
    /// (per unit `x`) for plate height `w` and slope `w_dx`.
    fn column_density(&self, e: usize, x: f64, w: f64, w_dx: f64, theta: &[f64]) -> f64 {
        let mut acc = 0.0;
        for r in 0..self.nrow_elems() {
            for (t, wt) in self.rule.mapped(0.0, 1.0) {
                let f = self.frame(e, r, x, t, w, w_dx);
                let lp = self.lift_at(x, f.z, w, w_dx);
                let (mut gx, mut gz) = (lp.grad_x, lp.grad_z);
                for p in 0..4 {
                    let th = theta[f.nodes[p]];
                    gx += th * f.grads[p][0];
                    gz += th * f.grads[p][1];
                }
                acc += 0.5 * wt * f.jac * f.sigma * (gx * gx + gz * gz);
            }
        }
        acc + self.robin_density(e, x, w, theta)
    }

    fn robin_density(&self, e: usize, x: f64, w: f64, theta: &[f64]) -> f64 {
        if self.model != Model::Reduced {
            return 0.0;
        }
        let xs = &self.mesh.interface_x;
        let s = (x - xs[e]) / (xs[e + 1] - xs[e]);
        let th = (1.0 - s) * theta[e * self.rows] + s * theta[(e + 1) * self.rows];
        let (s0, g) = self.robin_at(x, w);
        0.5 * s0 * (th + g).powi(2)
    }

    fn functional(&self, theta: &[f64]) -> f64 {
        let plate = self.mesh.plate();
        let xs = &self.mesh.interface_x;
        let mut total = 0.0;
        for e in 0..self.ncols() - 1 {
            for (x, wx) in self.rule.mapped(xs[e], xs[e + 1]) {
                let d = plate.eval_in_element(e, x);
                total += wx * self.column_density(e, x, d.value, d.slope, theta);
            }
        }
        total
    }

    /// `theta` and its gradient at `(x, z)` inside column `e`; zero above the
    /// plate.
    fn theta_local(&self, e: usize, x: f64, z: f64, w: f64, w_dx: f64, theta: &[f64]) -> Result<(f64, f64, f64)> {
        let h = self.mesh.gap_height();
        if z > w {
            return Ok((0.0, 0.0, 0.0));
        }
        let (r, t) = if z < -h {
            let Some(layer) = self.mesh.layer_mesh.as_ref() else {
                return Err(MemsError::OutOfDomain { coord: "z", value: z, lo: -h, hi: w });
            };
            let map = self.mesh.column_map_with(layer, w, w_dx);
            if z < map.base - 1e-12 * (1.0 + h) {
                return Err(MemsError::OutOfDomain { coord: "z", value: z, lo: map.base, hi: w });
            }
            locate(&layer.eta, (z - map.base) / map.gap)
        } else {
            let map = self.mesh.column_map_with(&self.mesh.free_mesh, w, w_dx);
            let (j, t) = locate(&self.mesh.free_mesh.eta, (z - map.base) / map.gap);
            (j + self.nzl, t)
        };
        let f = self.frame(e, r, x, t, w, w_dx);
        let mut out = (0.0, 0.0, 0.0);
        for p in 0..4 {
            let th = theta[f.nodes[p]];
            out.0 += th * f.vals[p];
            out.1 += th * f.grads[p][0];
            out.2 += th * f.grads[p][1];
        }
        Ok(out)
    }
}

/// Row index and local coordinate of `eta` in a sorted `[0, 1]` partition.
fn locate(eta: &[f64], v: f64) -> (usize, f64) {
    let v = v.clamp(0.0, 1.0);
    let j = eta.partition_point(|&e| e <= v).clamp(1, eta.len() - 1) - 1;
    (j, (v - eta[j]) / (eta[j + 1] - eta[j]))
}

fn solve_on(mesh: MeshPair, model: Model, bd: &BoundaryData, sigma: &PermittivityProfile, order: usize) -> Result<PotentialField> {
    let lift = LiftField::new(model, bd, mesh.plate());
    let (theta, functional_value, residual) = {
        let disc = Disc::new(&mesh, &lift, sigma, model, order);
        let (a, b, c) = disc.assemble();
        let rhs: Vec<f64> = b.iter().map(|v| -v).collect();
        let x = solve_refined(&a, &rhs)?;
        let ax = a.mul_vec(&x);
        let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let rnorm = ax.iter().zip(&b).map(|(p, q)| (p + q).powi(2)).sum::<f64>().sqrt();
        let residual = if bnorm > 0.0 { rnorm / bnorm } else { rnorm };
        let xb: f64 = x.iter().zip(&b).map(|(p, q)| p * q).sum();
        let xax: f64 = x.iter().zip(&ax).map(|(p, q)| p * q).sum();
        let mut theta = vec![0.0; disc.ncols() * disc.rows];
        for (node, th) in theta.iter_mut().enumerate() {
            if let Some(k) = disc.unknown(node) {
                *th = x[k];
            }
        }
        (theta, 0.5 * xax + xb + c, residual)
    };
    log::debug!("{model} solve: G = {functional_value:.12e}, residual {residual:.2e}");
    Ok(PotentialField { model, mesh, lift, sigma: sigma.clone(), theta, functional_value, residual, quadrature_order: order })
}

/// Layered-model potential for deflection `u` and layer thickness `delta`.
pub fn solve_transmission(
    u: &Deflection,
    delta: f64,
    bd: &BoundaryData,
    sigma: &PermittivityProfile,
    config: &DeviceConfig,
) -> Result<PotentialField> {
    let mesh = build_meshes(u, delta, config)?;
    solve_on(mesh, Model::Delta(delta), bd, sigma, config.quadrature_order)
}

/// Reduced-model potential with the Robin condition on the layer top.
pub fn solve_robin(
    u: &Deflection,
    bd: &BoundaryData,
    sigma: &PermittivityProfile,
    config: &DeviceConfig,
) -> Result<PotentialField> {
    let mesh = build_free_mesh(u, config)?;
    solve_on(mesh, Model::Reduced, bd, sigma, config.quadrature_order)
}

/// Either model through one entry point.
pub fn solve_model(
    u: &Deflection,
    model: Model,
    bd: &BoundaryData,
    sigma: &PermittivityProfile,
    config: &DeviceConfig,
) -> Result<PotentialField> {
    match model {
        Model::Delta(d) => solve_transmission(u, d, bd, sigma, config),
        Model::Reduced => solve_robin(u, bd, sigma, config),
    }
}

impl PotentialField {
    fn disc(&self) -> Disc<'_> {
        Disc::new(&self.mesh, &self.lift, &self.sigma, self.model, self.quadrature_order)
    }

    pub fn plate(&self) -> &Deflection {
        self.mesh.plate()
    }

    /// Values per mesh column (layer rows, then free rows).
    pub fn rows(&self) -> usize {
        self.disc().rows
    }

    /// Number of layer row elements (zero for the reduced model).
    pub fn layer_rows(&self) -> usize {
        self.disc().nzl
    }

    /// Physical height of node `(i, r)`.
    pub fn node_z(&self, i: usize, r: usize) -> f64 {
        let disc = self.disc();
        if r < disc.nzl {
            self.mesh.node_z(self.mesh.layer_mesh.as_ref().expect("layer"), i, r)
        } else {
            self.mesh.node_z(&self.mesh.free_mesh, i, r - disc.nzl)
        }
    }

    pub fn theta_node(&self, i: usize, r: usize) -> f64 {
        self.theta[i * self.rows() + r]
    }

    fn locate_x(&self, x: f64) -> Result<(usize, f64, f64)> {
        let d = self.plate().eval(x)?;
        let x = x.clamp(-self.plate().half_width(), self.plate().half_width());
        Ok((self.plate().element_of(x), d.value, d.slope))
    }

    /// `theta` and its gradient; zero above the plate.
    pub fn theta_at(&self, x: f64, z: f64) -> Result<(f64, f64, f64)> {
        let (e, w, w_dx) = self.locate_x(x)?;
        self.disc().theta_local(e, x, z, w, w_dx, &self.theta)
    }

    /// `psi = theta + lift` and its gradient at a point of the domain.
    pub fn psi_at(&self, x: f64, z: f64) -> Result<(f64, f64, f64)> {
        let (e, w, w_dx) = self.locate_x(x)?;
        if z > w + 1e-12 * (1.0 + w.abs()) {
            return Err(MemsError::OutOfDomain { coord: "z", value: z, lo: f64::NEG_INFINITY, hi: w });
        }
        let z = z.min(w);
        let (t, tx, tz) = self.disc().theta_local(e, x, z, w, w_dx, &self.theta)?;
        let lp = self.lift.eval_with(x, z, w, w_dx);
        Ok((t + lp.value, tx + lp.grad_x, tz + lp.grad_z))
    }

    /// Functional re-evaluated by quadrature from the nodal solution.
    pub fn functional(&self) -> f64 {
        self.disc().functional(&self.theta)
    }

    /// Weak normal-flux residual `∫ ∇psi · ∇N_i` over the top row of
    /// elements for every plate node `i`.
    pub fn plate_flux_residual(&self) -> Vec<f64> {
        let disc = self.disc();
        let plate = self.plate();
        let xs = &self.mesh.interface_x;
        let r = disc.nrow_elems() - 1;
        let mut out = vec![0.0; disc.ncols()];
        for e in 0..disc.ncols() - 1 {
            for (x, wx) in disc.rule.mapped(xs[e], xs[e + 1]) {
                let d = plate.eval_in_element(e, x);
                for (t, wt) in disc.rule.mapped(0.0, 1.0) {
                    let f = disc.frame(e, r, x, t, d.value, d.slope);
                    let lp = disc.lift_at(x, f.z, d.value, d.slope);
                    let (mut gx, mut gz) = (lp.grad_x, lp.grad_z);
                    for p in 0..4 {
                        let th = self.theta[f.nodes[p]];
                        gx += th * f.grads[p][0];
                        gz += th * f.grads[p][1];
                    }
                    let wgt = wx * wt * f.jac * f.sigma;
                    // top nodes of the element are local 2 and 3
                    out[e] += wgt * (gx * f.grads[2][0] + gz * f.grads[2][1]);
                    out[e + 1] += wgt * (gx * f.grads[3][0] + gz * f.grads[3][1]);
                }
            }
        }
        out
    }

    /// `sigma_delta ∂_z psi` on the layer side of `z = -H`, at the mesh
    /// abscissae.
    pub fn layer_top_flux(&self) -> Result<Vec<f64>> {
        let Model::Delta(delta) = self.model else {
            return Err(MemsError::TraceUnavailable("the reduced model has no layer".into()));
        };
        let h = self.mesh.gap_height();
        let disc = self.disc();
        let plate = self.plate();
        let xs = &self.mesh.interface_x;
        let r = disc.nzl - 1;
        Ok(xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let e = i.min(xs.len() - 2);
                let d = plate.eval_in_element(e, x);
                let f = disc.frame(e, r, x, 1.0, d.value, d.slope);
                let lp = disc.lift_at(x, -h - 1e-14, d.value, d.slope);
                let gz: f64 = (0..4).map(|p| self.theta[f.nodes[p]] * f.grads[p][1]).sum();
                delta * self.sigma.value(x, -h) * (gz + lp.grad_z)
            })
            .collect())
    }

    /// Exact gradient of the discrete energy with respect to the interior
    /// Hermite dofs of the plate, by the envelope identity
    /// `E = -min G` at fixed nodal coefficients.
    pub fn energy_gradient(&self) -> Vec<f64> {
        let disc = self.disc();
        let plate = self.plate();
        let xs = &self.mesh.interface_x;
        let h = self.mesh.gap_height();
        let mut grad = vec![0.0; plate.num_dofs()];
        let nn = plate.nodes().len();
        for e in 0..disc.ncols() - 1 {
            let he = xs[e + 1] - xs[e];
            for (x, wx) in disc.rule.mapped(xs[e], xs[e + 1]) {
                let d = plate.eval_in_element(e, x);
                let ew = 1e-5 * (d.value + h);
                let es = 1e-5 * (1.0 + d.slope.abs());
                let dens = |w: f64, s: f64| disc.column_density(e, x, w, s, &self.theta);
                let dw = (dens(d.value + ew, d.slope) - dens(d.value - ew, d.slope)) / (2.0 * ew);
                let ds = (dens(d.value, d.slope + es) - dens(d.value, d.slope - es)) / (2.0 * es);
                let basis = hermite_basis((x - xs[e]) / he, he);
                for (k, &(phi, phi_x, _)) in basis.iter().enumerate() {
                    let node = e + k / 2;
                    if node == 0 || node + 1 == nn {
                        continue;
                    }
                    let dof = 2 * (node - 1) + k % 2;
                    grad[dof] -= wx * (dw * phi + ds * phi_x);
                }
            }
        }
        grad
    }
}

fn require(field: &PotentialField, reduced: bool) -> Result<()> {
    match (field.model, reduced) {
        (Model::Delta(_), false) | (Model::Reduced, true) => Ok(()),
        (m, true) => Err(MemsError::ModelMismatch { expected: "reduced", found: m.to_string() }),
        (m, false) => Err(MemsError::ModelMismatch { expected: "delta", found: m.to_string() }),
    }
}

/// `-1/2 ∫ sigma_delta |∇psi|²`, integrated from `psi` directly.
pub fn energy_transmission(field: &PotentialField) -> Result<f64> {
    require(field, false)?;
    Ok(-field.functional())
}

/// `-1/2 ∫ |∇psi|² - 1/2 ∫_D sigma(x,-H) (psi(x,-H) - 𝔥(x))² dx`.
pub fn energy_reduced(field: &PotentialField) -> Result<f64> {
    require(field, true)?;
    Ok(-field.functional())
}

/// Electrostatic energy of a solved field in either model.
pub fn electrostatic_energy(field: &PotentialField) -> f64 {
    -field.functional()
}

/// `∫ sigma_delta |∇h_delta|²` (layered) or `∫_{Ω(u)} |∇h|²` (reduced).
pub fn lift_energy(
    u: &Deflection,
    model: Model,
    bd: &BoundaryData,
    sigma: &PermittivityProfile,
    config: &DeviceConfig,
) -> Result<f64> {
    let mesh = match model {
        Model::Delta(d) => build_meshes(u, d, config)?,
        Model::Reduced => build_free_mesh(u, config)?,
    };
    let lift = LiftField::new(model, bd, u);
    let disc = Disc::new(&mesh, &lift, sigma, model, config.quadrature_order);
    let zero = vec![0.0; disc.ncols() * disc.rows];
    let xs = &mesh.interface_x;
    let mut total = 0.0;
    for e in 0..disc.ncols() - 1 {
        for (x, wx) in disc.rule.mapped(xs[e], xs[e + 1]) {
            let d = u.eval_in_element(e, x);
            let robin = disc.robin_density(e, x, d.value, &zero);
            total += 2.0 * wx * (disc.column_density(e, x, d.value, d.slope, &zero) - robin);
        }
    }
    Ok(total)
}

/// The recovery field `theta_delta` built from a reduced solution for a
/// fixed deflection, and `G_delta[theta_delta]`.
#[derive(Clone, Debug)]
pub struct RecoverySequence {
    pub delta: f64,
    /// `G_delta[theta_delta]`.
    pub g_delta: f64,
    /// Free-region part of `g_delta`.
    pub free_part: f64,
    /// Layer part of `g_delta`.
    pub layer_part: f64,
    /// `theta_delta` at the nodes of the layered mesh, column-major.
    pub nodal: Vec<f64>,
    pub rows: usize,
    pub layer_rows: usize,
}

struct RecoveryPoint {
    theta: f64,
    psi_grad: (f64, f64),
}

fn recovery_point(
    reduced: &PotentialField,
    disc: &Disc<'_>,
    delta: f64,
    x: f64,
    z: f64,
    e: usize,
    d: (f64, f64),
) -> Result<RecoveryPoint> {
    let bd = &reduced.lift.bd;
    let h = bd.gap_height;
    let l = bd.half_width;
    let (w, w_dx) = d;
    let sq = delta.sqrt();
    let (tau, tau_x) = if l - x.abs() > sq { (1.0, 0.0) } else { ((l - x.abs()) / sq, -x.signum() / sq) };
    let zeta = -2.0 * h - z;
    let (tb, tbx, tbz) = disc.theta_local(e, x, zeta, w, w_dx, &reduced.theta)?;
    let (tbx, tbz) = (tbx, -tbz);
    let top = bd.h(x, -h, w);
    let bot = bd.h_b(x, -h - 1.0, w);
    let dd = top.value - bot.value;
    let dd_x = (top.dx + w_dx * top.dw) - (bot.dx + w_dx * bot.dw);
    let fh = bot.value;
    let fh_x = bot.dx + w_dx * bot.dw;
    let lp = reduced.lift.bd.h_b(x, -h + (z + h) / delta, w);
    let (hv, hx, hz) = (lp.value, lp.dx + w_dx * lp.dw, lp.dz / delta);
    let s = (z + h + delta) / delta;
    let theta = s * tb + s * dd * tau - (hv - fh) * tau;
    let gz = tb / delta + s * tbz + dd * tau / delta + (1.0 - tau) * hz;
    let gx = s * tbx + s * (dd_x * tau + dd * tau_x) + (1.0 - tau) * hx - tau_x * hv + tau_x * fh + tau * fh_x;
    Ok(RecoveryPoint { theta, psi_grad: (gx, gz) })
}

/// Recovery sequence for a fixed deflection: `theta` reflected into the
/// layer, blended with the interface datum through the lateral cutoff
/// `tau_delta`, and `G_delta` of the result.
pub fn build_recovery_sequence(
    reduced: &PotentialField,
    delta: f64,
    config: &DeviceConfig,
) -> Result<RecoverySequence> {
    require(reduced, true)?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(MemsError::Config(format!("delta {delta} is not in (0, 1)")));
    }
    let u = reduced.plate();
    let layered = build_meshes(u, delta, config)?;
    let disc = reduced.disc();
    let h = config.gap_height;
    let l = config.half_width;
    let xs = &reduced.mesh.interface_x;
    let robin: f64 = {
        let mut acc = 0.0;
        for e in 0..xs.len() - 1 {
            for (x, wx) in disc.rule.mapped(xs[e], xs[e + 1]) {
                let d = u.eval_in_element(e, x);
                acc += wx * disc.robin_density(e, x, d.value, &reduced.theta);
            }
        }
        acc
    };
    let free_part = reduced.functional() - robin;

    let sq = delta.sqrt();
    let mut layer_part = 0.0;
    for e in 0..xs.len() - 1 {
        let mut cuts = vec![xs[e], xs[e + 1]];
        for c in [-(l - sq), l - sq] {
            if c > xs[e] && c < xs[e + 1] {
                cuts.push(c);
            }
        }
        cuts.sort_by(f64::total_cmp);
        for win in cuts.windows(2) {
            for (x, wx) in disc.rule.mapped(win[0], win[1]) {
                let d = u.eval_in_element(e, x);
                let gap = d.value + h;
                let mut zc = vec![-h - delta, -h];
                for &eta in &reduced.mesh.free_mesh.eta {
                    let zb = -2.0 * h - (-h + eta * gap);
                    if zb > -h - delta && zb < -h {
                        zc.push(zb);
                    }
                }
                let zp = -2.0 * h - d.value;
                if zp > -h - delta && zp < -h {
                    zc.push(zp);
                }
                zc.sort_by(f64::total_cmp);
                for zw in zc.windows(2) {
                    for (z, wz) in disc.rule.mapped(zw[0], zw[1]) {
                        let p = recovery_point(reduced, &disc, delta, x, z, e, (d.value, d.slope))?;
                        let sd = delta * reduced.sigma.value(x, z);
                        let (gx, gz) = p.psi_grad;
                        layer_part += 0.5 * wx * wz * sd * (gx * gx + gz * gz);
                    }
                }
            }
        }
    }

    let ldisc_rows = config.nz_layer + config.nz_free + 1;
    let mut nodal = vec![0.0; xs.len() * ldisc_rows];
    let layer = layered.layer_mesh.as_ref().expect("layered mesh");
    for (i, &x) in xs.iter().enumerate() {
        let e = i.min(xs.len() - 2);
        let d = u.eval_in_element(e, x);
        for r in 0..ldisc_rows {
            nodal[i * ldisc_rows + r] = if r < config.nz_layer {
                let z = layered.node_z(layer, i, r);
                recovery_point(reduced, &disc, delta, x, z, e, (d.value, d.slope))?.theta
            } else {
                reduced.theta[i * disc.rows + r - config.nz_layer]
            };
        }
    }
    Ok(RecoverySequence {
        delta,
        g_delta: free_part + layer_part,
        free_part,
        layer_part,
        nodal,
        rows: ldisc_rows,
        layer_rows: config.nz_layer,
    })
}
