//! Device geometry, clamped Hermite deflections and the mapped meshes for
//! the free region and the dielectric layer.

use serde::{Deserialize, Serialize};

use crate::error::{MemsError, Result};
use crate::quadrature::GaussRule;

/// Physical constants and discretization parameters of the device.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceConfig {
    /// Half-width `L` of the plate, `D = (-L, L)`.
    #[serde(rename = "L")]
    pub half_width: f64,
    /// Gap height `H` between the undeflected plate and the layer top.
    #[serde(rename = "H")]
    pub gap_height: f64,
    pub beta: f64,
    pub tau: f64,
    pub a: f64,
    pub delta_list: Vec<f64>,
    #[serde(default = "default_eps_gap")]
    pub eps_gap: f64,
    pub nx: usize,
    pub nz_free: usize,
    pub nz_layer: usize,
    #[serde(default = "default_quadrature_order")]
    pub quadrature_order: usize,
}

fn default_eps_gap() -> f64 {
    1e-3
}

fn default_quadrature_order() -> usize {
    4
}

impl Default for DeviceConfig {
    fn default() -> Self {
        DeviceConfig {
            half_width: 1.0,
            gap_height: 1.0,
            beta: 1.0,
            tau: 0.1,
            a: 1.0,
            delta_list: vec![0.2, 0.1, 0.05],
            eps_gap: default_eps_gap(),
            nx: 48,
            nz_free: 16,
            nz_layer: 16,
            quadrature_order: default_quadrature_order(),
        }
    }
}

impl DeviceConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("L", self.half_width),
            ("H", self.gap_height),
            ("beta", self.beta),
            ("eps_gap", self.eps_gap),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(MemsError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("tau", self.tau), ("a", self.a)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(MemsError::Config(format!("{name} must be nonnegative, got {v}")));
            }
        }
        if self.eps_gap >= 1.0 {
            return Err(MemsError::Config(format!(
                "eps_gap is a fraction of H and must be below 1, got {}",
                self.eps_gap
            )));
        }
        if let Some(d) = self.delta_list.iter().find(|d| !(**d > 0.0 && **d < 1.0)) {
            return Err(MemsError::Config(format!("delta {d} is not in (0, 1)")));
        }
        for (name, n) in [
            ("nx", self.nx),
            ("nz_free", self.nz_free),
            ("nz_layer", self.nz_layer),
        ] {
            if n < 2 {
                return Err(MemsError::Config(format!("{name} must be at least 2, got {n}")));
            }
        }
        if self.quadrature_order == 0 {
            return Err(MemsError::Config("quadrature_order must be positive".into()));
        }
        Ok(())
    }

    /// `|D| = 2L`.
    pub fn domain_length(&self) -> f64 {
        2.0 * self.half_width
    }

    /// Lowest admissible plate height for field solves.
    pub fn gap_floor(&self) -> f64 {
        -self.gap_height + self.eps_gap * self.gap_height
    }

    pub fn uniform_nodes(&self) -> Vec<f64> {
        uniform_nodes(self.half_width, self.nx)
    }
}

/// `n + 1` equally spaced nodes on `[-half_width, half_width]` with exact
/// endpoints.
pub fn uniform_nodes(half_width: f64, n: usize) -> Vec<f64> {
    (0..=n)
        .map(|i| {
            if i == 0 {
                -half_width
            } else if i == n {
                half_width
            } else {
                -half_width + 2.0 * half_width * i as f64 / n as f64
            }
        })
        .collect()
}

/// Value, first and second derivative of a deflection at a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeflectionEval {
    pub value: f64,
    pub slope: f64,
    pub curvature: f64,
}

/// A clamped beam profile in cubic Hermite form.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Deflection {
    nodes: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

/// Plain-data form of a [`Deflection`] used for file I/O.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeflectionSnapshot {
    pub nodes: Vec<f64>,
    pub values: Vec<f64>,
    pub slopes: Vec<f64>,
}

/// Builds a clamped, admissible deflection interpolating `(x, value, slope)`
/// samples.
pub fn build_deflection_from_samples(
    samples: &[(f64, f64, f64)],
    config: &DeviceConfig,
) -> Result<Deflection> {
    let l = config.half_width;
    if samples.len() < 2 {
        return Err(MemsError::InvalidSamples("need at least two samples".into()));
    }
    let tol = 1e-12 * l.max(1.0);
    if samples.windows(2).any(|w| !(w[1].0 > w[0].0)) {
        return Err(MemsError::InvalidSamples("sample abscissae must increase strictly".into()));
    }
    let (x0, xn) = (samples[0].0, samples[samples.len() - 1].0);
    if (x0 + l).abs() > tol || (xn - l).abs() > tol {
        return Err(MemsError::InvalidSamples(format!(
            "samples span [{x0}, {xn}] instead of [{}, {l}]",
            -l
        )));
    }
    for &(x, v, s) in [samples[0], samples[samples.len() - 1]].iter() {
        if v.abs() > tol || s.abs() > tol {
            return Err(MemsError::NotClamped { x, value: v, slope: s });
        }
    }
    let floor = -config.gap_height;
    if let Some(&(x, v, _)) = samples.iter().find(|(_, v, _)| *v < floor || !v.is_finite()) {
        return Err(MemsError::BelowObstacle { x, value: v, floor });
    }
    let n = samples.len();
    let mut nodes: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let mut values: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let mut slopes: Vec<f64> = samples.iter().map(|s| s.2).collect();
    nodes[0] = -l;
    nodes[n - 1] = l;
    for k in [0, n - 1] {
        values[k] = 0.0;
        slopes[k] = 0.0;
    }
    Ok(Deflection { nodes, values, slopes })
}

impl Deflection {
    /// The rest state on the uniform grid of `config`.
    pub fn zero(config: &DeviceConfig) -> Self {
        let nodes = config.uniform_nodes();
        let n = nodes.len();
        Deflection {
            nodes,
            values: vec![0.0; n],
            slopes: vec![0.0; n],
        }
    }

    /// Samples `f(x) -> (value, slope)` on the uniform grid of `config`.
    pub fn from_fn(config: &DeviceConfig, f: impl Fn(f64) -> (f64, f64)) -> Result<Self> {
        let samples: Vec<_> = config
            .uniform_nodes()
            .into_iter()
            .map(|x| {
                let (v, s) = f(x);
                (x, v, s)
            })
            .collect();
        build_deflection_from_samples(&samples, config)
    }

    pub fn from_snapshot(snap: &DeflectionSnapshot, config: &DeviceConfig) -> Result<Self> {
        let n = snap.nodes.len();
        if snap.values.len() != n || snap.slopes.len() != n {
            return Err(MemsError::InvalidSamples(
                "nodes, values and slopes must have equal length".into(),
            ));
        }
        let samples: Vec<_> = (0..n)
            .map(|i| (snap.nodes[i], snap.values[i], snap.slopes[i]))
            .collect();
        build_deflection_from_samples(&samples, config)
    }

    pub fn snapshot(&self) -> DeflectionSnapshot {
        DeflectionSnapshot {
            nodes: self.nodes.clone(),
            values: self.values.clone(),
            slopes: self.slopes.clone(),
        }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn half_width(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    pub fn num_elements(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Number of free (interior) Hermite degrees of freedom.
    pub fn num_dofs(&self) -> usize {
        2 * (self.nodes.len() - 2)
    }

    /// Interior degrees of freedom `[v_1, s_1, ..., v_{n-1}, s_{n-1}]`.
    pub fn interior_dofs(&self) -> Vec<f64> {
        let n = self.nodes.len();
        (1..n - 1).flat_map(|i| [self.values[i], self.slopes[i]]).collect()
    }

    /// Same nodes, new interior degrees of freedom; boundary stays clamped.
    /// Admissibility is not checked.
    pub fn with_interior_dofs(&self, dofs: &[f64]) -> Self {
        let n = self.nodes.len();
        assert_eq!(dofs.len(), 2 * (n - 2));
        let mut out = self.clone();
        for i in 1..n - 1 {
            out.values[i] = dofs[2 * (i - 1)];
            out.slopes[i] = dofs[2 * (i - 1) + 1];
        }
        out
    }

    /// Linear combination `self + t * other` on identical nodes.
    pub fn axpy(&self, t: f64, other: &Deflection) -> Self {
        assert_eq!(self.nodes, other.nodes, "deflections live on different grids");
        let mut out = self.clone();
        for i in 0..self.nodes.len() {
            out.values[i] += t * other.values[i];
            out.slopes[i] += t * other.slopes[i];
        }
        out
    }

    pub fn scaled(&self, t: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= t);
        out.slopes.iter_mut().for_each(|s| *s *= t);
        out
    }

    /// Index of the element containing `x`; `x` must be inside the grid.
    #[inline]
    pub fn element_of(&self, x: f64) -> usize {
        let k = self.nodes.partition_point(|&n| n <= x);
        k.clamp(1, self.nodes.len() - 1) - 1
    }

    /// Hermite evaluation of value, slope and curvature.
    pub fn eval(&self, x: f64) -> Result<DeflectionEval> {
        let (lo, hi) = (self.nodes[0], self.half_width());
        let tol = 1e-12 * hi.abs().max(1.0);
        if !(x >= lo - tol && x <= hi + tol) {
            return Err(MemsError::OutOfDomain { coord: "x", value: x, lo, hi });
        }
        Ok(self.eval_unchecked(x.clamp(lo, hi)))
    }

    #[inline]
    pub fn eval_unchecked(&self, x: f64) -> DeflectionEval {
        let e = self.element_of(x);
        self.eval_in_element(e, x)
    }

    #[inline]
    pub fn eval_in_element(&self, e: usize, x: f64) -> DeflectionEval {
        let (a, b) = (self.nodes[e], self.nodes[e + 1]);
        let h = b - a;
        let t = (x - a) / h;
        let basis = hermite_basis(t, h);
        let coef = [self.values[e], self.slopes[e], self.values[e + 1], self.slopes[e + 1]];
        let mut out = DeflectionEval { value: 0.0, slope: 0.0, curvature: 0.0 };
        for k in 0..4 {
            out.value += coef[k] * basis[k].0;
            out.slope += coef[k] * basis[k].1;
            out.curvature += coef[k] * basis[k].2;
        }
        out
    }

    /// Minimum of the profile sampled at `refine` points per element.
    pub fn min_sampled(&self, refine: usize) -> (f64, f64) {
        self.dense_samples(refine)
            .into_iter()
            .fold((f64::NAN, f64::INFINITY), |acc, (x, v)| if v < acc.1 { (x, v) } else { acc })
    }

    /// Maximum of `|value|` sampled at `refine` points per element.
    pub fn max_abs_sampled(&self, refine: usize) -> f64 {
        self.dense_samples(refine).into_iter().map(|(_, v)| v.abs()).fold(0.0, f64::max)
    }

    pub fn max_sampled(&self, refine: usize) -> f64 {
        self.dense_samples(refine).into_iter().map(|(_, v)| v).fold(f64::NEG_INFINITY, f64::max)
    }

    fn dense_samples(&self, refine: usize) -> Vec<(f64, f64)> {
        let refine = refine.max(1);
        let mut out = Vec::with_capacity(self.num_elements() * refine + 1);
        for e in 0..self.num_elements() {
            let (a, b) = (self.nodes[e], self.nodes[e + 1]);
            for k in 0..refine {
                let x = a + (b - a) * k as f64 / refine as f64;
                out.push((x, self.eval_in_element(e, x).value));
            }
        }
        let l = self.half_width();
        out.push((l, self.values[self.values.len() - 1]));
        out
    }
}

/// Cubic Hermite shape functions on an element of length `h` at local
/// coordinate `t`: `(value, d/dx, d2/dx2)` for `[v0, s0, v1, s1]`.
#[inline]
pub fn hermite_basis(t: f64, h: f64) -> [(f64, f64, f64); 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        (2.0 * t3 - 3.0 * t2 + 1.0, (6.0 * t2 - 6.0 * t) / h, (12.0 * t - 6.0) / (h * h)),
        (h * (t3 - 2.0 * t2 + t), 3.0 * t2 - 4.0 * t + 1.0, (6.0 * t - 4.0) / h),
        (-2.0 * t3 + 3.0 * t2, (-6.0 * t2 + 6.0 * t) / h, (-12.0 * t + 6.0) / (h * h)),
        (h * (t3 - t2), 3.0 * t2 - 2.0 * t, (6.0 * t - 2.0) / h),
    ]
}

/// `(||u||^2, ||u'||^2, ||u''||^2)` over `D`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SobolevNorms {
    pub l2_sq: f64,
    pub h1_semi_sq: f64,
    pub h2_semi_sq: f64,
}

impl SobolevNorms {
    /// Full H² norm squared.
    pub fn h2_full_sq(&self) -> f64 {
        self.l2_sq + self.h1_semi_sq + self.h2_semi_sq
    }
}

/// `(1 - (x/L)²)² Σ c_k T_k(x/L)` sampled on the grid of `config`, with
/// Chebyshev polynomials `T_k`.
pub fn chebyshev_bump(config: &DeviceConfig, coeffs: &[f64]) -> Result<Deflection> {
    let l = config.half_width;
    Deflection::from_fn(config, |x| {
        let t = x / l;
        // T_k and T_k' by the three-term recurrence
        let (mut p0, mut p1, mut d0, mut d1) = (1.0, t, 0.0, 1.0);
        let (mut sum, mut dsum) = (0.0, 0.0);
        for (k, &c) in coeffs.iter().enumerate() {
            let (tk, dk) = match k {
                0 => (1.0, 0.0),
                1 => (t, 1.0),
                _ => {
                    let p2 = 2.0 * t * p1 - p0;
                    let d2 = 2.0 * p1 + 2.0 * t * d1 - d0;
                    (p0, p1, d0, d1) = (p1, p2, d1, d2);
                    (p2, d2)
                }
            };
            sum += c * tk;
            dsum += c * dk;
        }
        let q = 1.0 - t * t;
        (q * q * sum, (q * q * dsum - 4.0 * t * q * sum) / l)
    })
}

/// Gauss quadrature of `∫u²`, `∫(u')²`, `∫(u'')²`.
pub fn sobolev_norms(u: &Deflection, quadrature_order: usize) -> SobolevNorms {
    let rule = GaussRule::new(quadrature_order.max(1));
    let mut n = SobolevNorms { l2_sq: 0.0, h1_semi_sq: 0.0, h2_semi_sq: 0.0 };
    for e in 0..u.num_elements() {
        for (x, w) in rule.mapped(u.nodes[e], u.nodes[e + 1]) {
            let d = u.eval_in_element(e, x);
            n.l2_sq += w * d.value * d.value;
            n.h1_semi_sq += w * d.slope * d.slope;
            n.h2_semi_sq += w * d.curvature * d.curvature;
        }
    }
    n
}

/// Maximal intervals where `u + H <= tol`, detected on a grid ten times
/// denser than the nodes. Isolated hits come back as degenerate intervals.
pub fn coincidence_set(u: &Deflection, gap_height: f64, tol: f64) -> Vec<(f64, f64)> {
    let samples = u.dense_samples(10);
    let mut out = Vec::new();
    let mut open: Option<(f64, f64)> = None;
    for (x, v) in samples {
        if v + gap_height <= tol {
            open = Some(match open {
                Some((a, _)) => (a, x),
                None => (x, x),
            });
        } else if let Some(iv) = open.take() {
            out.push(iv);
        }
    }
    out.extend(open);
    out
}

/// Lower or upper edge of a mapped tensor grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Edge {
    Level(f64),
    Plate,
}

/// Tensor grid on a reference rectangle `[x] x [eta]`, mapped vertically by
/// `z = bottom(x) + eta * (top(x) - bottom(x))`.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorGrid {
    pub x: Vec<f64>,
    pub eta: Vec<f64>,
    pub bottom: Edge,
    pub top: Edge,
}

impl TensorGrid {
    pub fn shape(&self) -> (usize, usize) {
        (self.x.len(), self.eta.len())
    }
}

/// Vertical map at one abscissa: `z = base + eta * gap`,
/// `dz/dx = base_dx + eta * gap_dx`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColumnMap {
    pub base: f64,
    pub base_dx: f64,
    pub gap: f64,
    pub gap_dx: f64,
}

impl ColumnMap {
    #[inline]
    pub fn z(&self, eta: f64) -> f64 {
        self.base + eta * self.gap
    }

    /// `d eta / dx` at fixed physical `z`.
    #[inline]
    pub fn eta_dx(&self, eta: f64) -> f64 {
        -(self.base_dx + eta * self.gap_dx) / self.gap
    }
}

/// Conforming meshes for the free region and (for the layered model) the
/// dielectric layer, sharing their interface abscissae.
#[derive(Clone, Debug)]
pub struct MeshPair {
    pub free_mesh: TensorGrid,
    pub layer_mesh: Option<TensorGrid>,
    pub interface_x: Vec<f64>,
    pub delta: Option<f64>,
    gap_height: f64,
    plate: Deflection,
}

impl MeshPair {
    pub fn plate(&self) -> &Deflection {
        &self.plate
    }

    pub fn gap_height(&self) -> f64 {
        self.gap_height
    }

    pub fn x(&self) -> &[f64] {
        &self.interface_x
    }

    /// Vertical map of `grid` at `x`.
    pub fn column_map(&self, grid: &TensorGrid, x: f64) -> ColumnMap {
        let d = self.plate.eval_unchecked(x);
        self.column_map_with(grid, d.value, d.slope)
    }

    /// Vertical map given the plate value and slope at the abscissa.
    #[inline]
    pub fn column_map_with(&self, grid: &TensorGrid, w: f64, w_dx: f64) -> ColumnMap {
        let edge = |e: Edge| match e {
            Edge::Level(z) => (z, 0.0),
            Edge::Plate => (w, w_dx),
        };
        let (b, b_dx) = edge(grid.bottom);
        let (t, t_dx) = edge(grid.top);
        ColumnMap { base: b, base_dx: b_dx, gap: t - b, gap_dx: t_dx - b_dx }
    }

    /// Physical height of node `(i, j)` of `grid`.
    pub fn node_z(&self, grid: &TensorGrid, i: usize, j: usize) -> f64 {
        let x = grid.x[i];
        let w = self.plate.eval_unchecked(x).value;
        self.column_map_with(grid, w, 0.0).z(grid.eta[j])
    }
}

fn check_gap(u: &Deflection, config: &DeviceConfig) -> Result<()> {
    let (x, min_v) = u.min_sampled(10);
    let gap = min_v + config.gap_height;
    let required = config.eps_gap * config.gap_height;
    if gap < required {
        return Err(MemsError::TouchdownGeometry { x, min_gap: gap, required });
    }
    Ok(())
}

fn free_grid(x: &[f64], config: &DeviceConfig) -> TensorGrid {
    TensorGrid {
        x: x.to_vec(),
        eta: (0..=config.nz_free).map(|j| j as f64 / config.nz_free as f64).collect(),
        bottom: Edge::Level(-config.gap_height),
        top: Edge::Plate,
    }
}

/// Meshes for the layered model: the mapped free region over the plate and
/// the layer rectangle `D x (-H - delta, -H)`.
pub fn build_meshes(u: &Deflection, delta: f64, config: &DeviceConfig) -> Result<MeshPair> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(MemsError::Config(format!("delta {delta} is not in (0, 1)")));
    }
    check_gap(u, config)?;
    let x = uniform_nodes(config.half_width, config.nx);
    let h = config.gap_height;
    let layer = TensorGrid {
        x: x.clone(),
        eta: (0..=config.nz_layer).map(|j| j as f64 / config.nz_layer as f64).collect(),
        bottom: Edge::Level(-h - delta),
        top: Edge::Level(-h),
    };
    Ok(MeshPair {
        free_mesh: free_grid(&x, config),
        layer_mesh: Some(layer),
        interface_x: x,
        delta: Some(delta),
        gap_height: h,
        plate: u.clone(),
    })
}

/// Mesh of the free region alone, for the Robin model.
pub fn build_free_mesh(u: &Deflection, config: &DeviceConfig) -> Result<MeshPair> {
    check_gap(u, config)?;
    let x = uniform_nodes(config.half_width, config.nx);
    Ok(MeshPair {
        free_mesh: free_grid(&x, config),
        layer_mesh: None,
        interface_x: x,
        delta: None,
        gap_height: config.gap_height,
        plate: u.clone(),
    })
}
