//! Boundary-data families `(h_b, h)`, the rescaled device lift, the Robin
//! datum and the layer permittivity.
//!
//! A family supplies `h` on the free region and `h_b` on the reference layer
//! `[-H-1, -H]`, both as functions of `(x, z, w)` where `w` is the plate
//! height above `x`. The layered lift compresses `h_b` into the physical layer
//! of thickness `delta`:
//!
//! ```text
//! h_delta(x, z, w) = h_b(x, -H + (z + H) / delta, w)   for z <  -H
//!                  = h(x, z, w)                          for z >= -H
//! ```

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{MemsError, Result};
use crate::geometry::Deflection;

/// Which electrostatic model a field or energy refers to.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Model {
    /// Layer of thickness `delta` with permittivity `delta * sigma`.
    Delta(f64),
    /// Robin limit on the layer top.
    Reduced,
}

impl Model {
    pub fn delta(&self) -> Option<f64> {
        match *self {
            Model::Delta(d) => Some(d),
            Model::Reduced => None,
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Model::Delta(d) => write!(f, "delta:{d}"),
            Model::Reduced => write!(f, "reduced"),
        }
    }
}

impl FromStr for Model {
    type Err = MemsError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "reduced" {
            return Ok(Model::Reduced);
        }
        let d = s
            .strip_prefix("delta:")
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(|| MemsError::Config(format!("model must be delta:<d> or reduced, got {s}")))?;
        if !(d > 0.0 && d < 1.0) {
            return Err(MemsError::Config(format!("delta {d} is not in (0, 1)")));
        }
        Ok(Model::Delta(d))
    }
}

/// Value and first partials of a boundary-data function at `(x, z, w)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Partials {
    pub value: f64,
    pub dx: f64,
    pub dz: f64,
    pub dw: f64,
}

/// A pair `(h, h_b)` of boundary-data functions with analytic partials.
pub trait BoundaryFamily: Send + Sync + fmt::Debug {
    /// `h(x, z, w)` on `z >= -H`.
    fn h(&self, x: f64, z: f64, w: f64) -> Partials;
    /// `h_b(x, z, w)` on the reference layer `z in [-H-1, -H]`.
    fn h_b(&self, x: f64, z: f64, w: f64) -> Partials;
}

/// Permittivity `sigma` on the reference layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SigmaSpec {
    Constant { value: f64 },
    /// `base + slope_x * x + slope_z * (z + H)`.
    Affine { base: f64, slope_x: f64, slope_z: f64 },
}

impl Default for SigmaSpec {
    fn default() -> Self {
        SigmaSpec::Constant { value: 2.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PermittivityProfile {
    spec: SigmaSpec,
    half_width: f64,
    gap_height: f64,
    /// `1 + max sigma` over the validation grid.
    pub sigma_max: f64,
}

impl PermittivityProfile {
    pub fn new(spec: SigmaSpec, half_width: f64, gap_height: f64) -> Result<Self> {
        let mut p = PermittivityProfile { spec, half_width, gap_height, sigma_max: 0.0 };
        let n = 64;
        let mut max = f64::NEG_INFINITY;
        for i in 0..=n {
            let x = -half_width + 2.0 * half_width * i as f64 / n as f64;
            for j in 0..=n {
                let z = -gap_height - 1.0 + j as f64 / n as f64;
                let s = p.value(x, z);
                if !(s > 0.0 && s.is_finite()) {
                    return Err(MemsError::Config(format!(
                        "permittivity must be positive; sigma({x}, {z}) = {s}"
                    )));
                }
                max = max.max(s);
            }
        }
        p.sigma_max = 1.0 + max;
        Ok(p)
    }

    pub fn constant(value: f64, half_width: f64, gap_height: f64) -> Result<Self> {
        Self::new(SigmaSpec::Constant { value }, half_width, gap_height)
    }

    pub fn spec(&self) -> &SigmaSpec {
        &self.spec
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn gap_height(&self) -> f64 {
        self.gap_height
    }

    #[inline]
    pub fn value(&self, x: f64, z: f64) -> f64 {
        match self.spec {
            SigmaSpec::Constant { value } => value,
            SigmaSpec::Affine { base, slope_x, slope_z } => {
                base + slope_x * x + slope_z * (z + self.gap_height)
            }
        }
    }

    #[inline]
    pub fn dx(&self, _x: f64, _z: f64) -> f64 {
        match self.spec {
            SigmaSpec::Constant { .. } => 0.0,
            SigmaSpec::Affine { slope_x, .. } => slope_x,
        }
    }

    /// A copy with every value multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let spec = match self.spec {
            SigmaSpec::Constant { value } => SigmaSpec::Constant { value: factor * value },
            SigmaSpec::Affine { base, slope_x, slope_z } => SigmaSpec::Affine {
                base: factor * base,
                slope_x: factor * slope_x,
                slope_z: factor * slope_z,
            },
        };
        Self::new(spec, self.half_width, self.gap_height)
    }
}

/// `sigma_delta`: `delta * sigma` inside the layer, 1 above it.
pub fn sigma_delta(sigma: &PermittivityProfile, delta: f64, x: f64, z: f64) -> f64 {
    if z < -sigma.gap_height {
        delta * sigma.value(x, z)
    } else {
        1.0
    }
}

/// `h = V (H + z) / (H + w)`,
/// `h_b = V (z + H)(z + H + 1) / (sigma(x, -H) (H + w))`.
///
/// The plate sits at potential `V`, the layer top and the ground plate at 0;
/// continuity and flux matching hold identically and `h_b` vanishes on the
/// ground plate for every `w`.
#[derive(Clone, Debug)]
pub struct GroundedFamily {
    pub voltage: f64,
    pub gap_height: f64,
    pub sigma: PermittivityProfile,
}

impl BoundaryFamily for GroundedFamily {
    fn h(&self, _x: f64, z: f64, w: f64) -> Partials {
        let v = self.voltage;
        let g = self.gap_height + w;
        let s = self.gap_height + z;
        Partials { value: v * s / g, dx: 0.0, dz: v / g, dw: -v * s / (g * g) }
    }

    fn h_b(&self, x: f64, z: f64, w: f64) -> Partials {
        let v = self.voltage;
        let g = self.gap_height + w;
        let s0 = self.sigma.value(x, -self.gap_height);
        let s0_dx = self.sigma.dx(x, -self.gap_height);
        let r = z + self.gap_height;
        let p = r * (r + 1.0);
        Partials {
            value: v * p / (s0 * g),
            dx: -v * p * s0_dx / (s0 * s0 * g),
            dz: v * (2.0 * r + 1.0) / (s0 * g),
            dw: -v * p / (s0 * g * g),
        }
    }
}

/// Exact two-material solution for a flat plate and constant permittivity
/// `s`: linear in `z` on each side of the interface with fluxes matched.
///
/// `h = V (1 + s (z + H)) / (1 + s (H + w))`,
/// `h_b = V (z + H + 1) / (1 + s (H + w))`.
#[derive(Clone, Debug)]
pub struct SeriesCapacitorFamily {
    pub voltage: f64,
    pub s: f64,
    pub gap_height: f64,
}

impl BoundaryFamily for SeriesCapacitorFamily {
    fn h(&self, _x: f64, z: f64, w: f64) -> Partials {
        let (v, s, hh) = (self.voltage, self.s, self.gap_height);
        let den = 1.0 + s * (hh + w);
        let num = 1.0 + s * (z + hh);
        Partials { value: v * num / den, dx: 0.0, dz: v * s / den, dw: -v * num * s / (den * den) }
    }

    fn h_b(&self, _x: f64, z: f64, w: f64) -> Partials {
        let (v, s, hh) = (self.voltage, self.s, self.gap_height);
        let den = 1.0 + s * (hh + w);
        let r = z + hh + 1.0;
        Partials { value: v * r / den, dx: 0.0, dz: v / den, dw: -v * r * s / (den * den) }
    }
}

/// Boundary-data family selection as it appears in run configurations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilySpec {
    Grounded { voltage: f64 },
    SeriesCapacitor { voltage: f64, s: f64 },
}

impl FamilySpec {
    pub fn voltage(&self) -> f64 {
        match *self {
            FamilySpec::Grounded { voltage } | FamilySpec::SeriesCapacitor { voltage, .. } => voltage,
        }
    }

    pub fn build(&self, sigma: &PermittivityProfile) -> BoundaryData {
        let (l, h) = (sigma.half_width, sigma.gap_height);
        match *self {
            FamilySpec::Grounded { voltage } => default_grounded_family(voltage, sigma, h),
            FamilySpec::SeriesCapacitor { voltage, s } => BoundaryData::new(
                Arc::new(SeriesCapacitorFamily { voltage, s, gap_height: h }),
                l,
                h,
            ),
        }
    }
}

/// Growth constants `m` and `K` certified on a grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GrowthConstants {
    pub m: f64,
    pub k: f64,
    pub w_range: (f64, f64),
}

/// A boundary-data family bound to a device, with its certified constants.
#[derive(Clone, Debug)]
pub struct BoundaryData {
    family: Arc<dyn BoundaryFamily>,
    pub half_width: f64,
    pub gap_height: f64,
    /// Range of plate heights used for validation and certification.
    pub w_range: (f64, f64),
    pub growth: Option<GrowthConstants>,
}

impl BoundaryData {
    pub fn new(family: Arc<dyn BoundaryFamily>, half_width: f64, gap_height: f64) -> Self {
        BoundaryData {
            family,
            half_width,
            gap_height,
            w_range: (-0.5 * gap_height, gap_height),
            growth: None,
        }
    }

    pub fn family(&self) -> &dyn BoundaryFamily {
        self.family.as_ref()
    }

    #[inline]
    pub fn h(&self, x: f64, z: f64, w: f64) -> Partials {
        self.family.h(x, z, w)
    }

    #[inline]
    pub fn h_b(&self, x: f64, z: f64, w: f64) -> Partials {
        self.family.h_b(x, z, w)
    }

    /// Robin datum `h_b(x, -H-1, w)`.
    #[inline]
    pub fn frak_h(&self, x: f64, w: f64) -> f64 {
        self.family.h_b(x, -self.gap_height - 1.0, w).value
    }

    /// Certified `m`, or an error if not yet certified.
    pub fn m_const(&self) -> Result<f64> {
        self.growth
            .map(|g| g.m)
            .ok_or_else(|| MemsError::Config("growth constants have not been certified".into()))
    }

    pub fn k_const(&self) -> Result<f64> {
        self.growth
            .map(|g| g.k)
            .ok_or_else(|| MemsError::Config("growth constants have not been certified".into()))
    }
}

/// The grounded family for plate voltage `voltage`.
pub fn default_grounded_family(voltage: f64, sigma: &PermittivityProfile, gap_height: f64) -> BoundaryData {
    BoundaryData::new(
        Arc::new(GroundedFamily { voltage, gap_height, sigma: sigma.clone() }),
        sigma.half_width,
        gap_height,
    )
}

/// Rescaled device lift `h_delta(x, z, w)`.
pub fn eval_h_delta(bd: &BoundaryData, delta: f64, x: f64, z: f64, w: f64) -> Result<f64> {
    let h = bd.gap_height;
    if z < -h - delta {
        return Err(MemsError::OutOfDomain { coord: "z", value: z, lo: -h - delta, hi: f64::INFINITY });
    }
    Ok(if z < -h {
        bd.h_b(x, -h + (z + h) / delta, w).value
    } else {
        bd.h(x, z, w).value
    })
}

/// Largest violations of the compatibility identities on a grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    /// `max |h_b(x,-H,w) - h(x,-H,w)|`.
    pub continuity: f64,
    /// `max |sigma(x,-H) d_z h_b(x,-H,w) - d_z h(x,-H,w)|`.
    pub flux: f64,
    /// `max |d_w h_b(x,-H-1,w)|`.
    pub ground_dw: f64,
    /// Largest relative mismatch between supplied partials and central
    /// differences.
    pub partials_mismatch: f64,
    pub passed: bool,
}

const IDENTITY_TOL: f64 = 1e-10;
const PARTIALS_TOL: f64 = 1e-5;

pub fn validate_compatibility(
    bd: &BoundaryData,
    sigma: &PermittivityProfile,
    grid_density: usize,
) -> ValidationReport {
    let n = grid_density.max(2);
    let (l, h) = (bd.half_width, bd.gap_height);
    let (w0, w1) = bd.w_range;
    let mut rep = ValidationReport {
        continuity: 0.0,
        flux: 0.0,
        ground_dw: 0.0,
        partials_mismatch: 0.0,
        passed: false,
    };
    for i in 0..=n {
        let x = -l + 2.0 * l * i as f64 / n as f64;
        for k in 0..=n {
            let w = w0 + (w1 - w0) * k as f64 / n as f64;
            let hb = bd.h_b(x, -h, w);
            let hf = bd.h(x, -h, w);
            rep.continuity = rep.continuity.max((hb.value - hf.value).abs());
            rep.flux = rep.flux.max((sigma.value(x, -h) * hb.dz - hf.dz).abs());
            rep.ground_dw = rep.ground_dw.max(bd.h_b(x, -h - 1.0, w).dw.abs());
            for j in 0..=n {
                let zb = -h - 1.0 + j as f64 / n as f64;
                let zf = -h + (w + h) * j as f64 / n as f64;
                let m1 = partials_mismatch(|x, z, w| bd.h_b(x, z, w), x, zb, w);
                let m2 = partials_mismatch(|x, z, w| bd.h(x, z, w), x, zf, w);
                rep.partials_mismatch = rep.partials_mismatch.max(m1).max(m2);
            }
        }
    }
    rep.passed = rep.continuity <= IDENTITY_TOL
        && rep.flux <= IDENTITY_TOL
        && rep.ground_dw <= IDENTITY_TOL
        && rep.partials_mismatch <= PARTIALS_TOL;
    rep
}

fn partials_mismatch(f: impl Fn(f64, f64, f64) -> Partials, x: f64, z: f64, w: f64) -> f64 {
    let p = f(x, z, w);
    let cd = |a: f64, b: f64, step: f64| (a - b) / (2.0 * step);
    let step = |c: f64| 1e-6 * c.abs().max(1.0);
    let (sx, sz, sw) = (step(x), step(z), step(w));
    let fd = [
        cd(f(x + sx, z, w).value, f(x - sx, z, w).value, sx),
        cd(f(x, z + sz, w).value, f(x, z - sz, w).value, sz),
        cd(f(x, z, w + sw).value, f(x, z, w - sw).value, sw),
    ];
    [p.dx, p.dz, p.dw]
        .iter()
        .zip(fd)
        .map(|(a, b)| (a - b).abs() / (1.0 + a.abs()))
        .fold(0.0, f64::max)
}

/// Smallest `m` and `K` for which the growth bounds on `h_b`, `h` and the
/// plate bound hold on a grid over `D x z x w_range`.
///
/// For `h` the `z` grid covers `[-H, w]`, the part of the free region the
/// lift is evaluated on.
pub fn certify_growth_constants(
    bd: &mut BoundaryData,
    w_range: (f64, f64),
    grid_density: usize,
) -> Result<GrowthConstants> {
    let (l, h) = (bd.half_width, bd.gap_height);
    let (w0, w1) = w_range;
    if !(w0 > -h) || !(w1 >= w0) {
        return Err(MemsError::DegenerateRange { lo: w0, hi: w1, floor: -h });
    }
    let n = grid_density.max(2);
    let mut m: f64 = 0.0;
    let mut k: f64 = 0.0;
    for i in 0..=n {
        let x = -l + 2.0 * l * i as f64 / n as f64;
        for q in 0..=n {
            let w = w0 + (w1 - w0) * q as f64 / n as f64;
            let g = h + w;
            let growth = 1.0 + w * w;
            for j in 0..=n {
                let zb = -h - 1.0 + j as f64 / n as f64;
                let pb = bd.h_b(x, zb, w);
                m = m.max((pb.dx.abs() + pb.dz.abs()).powi(2) / growth);
                m = m.max(pb.dw * pb.dw);
                let zf = -h + g * j as f64 / n as f64;
                let pf = bd.h(x, zf, w);
                m = m.max((pf.dx.abs() + pf.dz.abs()).powi(2) * g / growth);
                m = m.max(pf.dw * pf.dw * g);
            }
            let on_plate = bd.h(x, w, w);
            k = k.max(on_plate.dx.abs() + (on_plate.dz + on_plate.dw).abs());
        }
    }
    let c = GrowthConstants { m, k, w_range };
    bd.w_range = w_range;
    bd.growth = Some(c);
    Ok(c)
}

/// The lift `h_{u,delta}` (or `h_u`) attached to one deflection.
#[derive(Clone, Debug)]
pub struct LiftField {
    pub model: Model,
    pub bd: BoundaryData,
    pub plate: Deflection,
}

/// Lift value and physical gradient at a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LiftPoint {
    pub value: f64,
    pub grad_x: f64,
    pub grad_z: f64,
}

impl LiftField {
    pub fn new(model: Model, bd: &BoundaryData, plate: &Deflection) -> Self {
        LiftField { model, bd: bd.clone(), plate: plate.clone() }
    }

    /// Lift at `(x, z)` given the plate height `w` and slope `w_dx` above `x`.
    #[inline]
    pub fn eval_with(&self, x: f64, z: f64, w: f64, w_dx: f64) -> LiftPoint {
        let h = self.bd.gap_height;
        match self.model {
            Model::Delta(delta) if z < -h => {
                let p = self.bd.h_b(x, -h + (z + h) / delta, w);
                LiftPoint { value: p.value, grad_x: p.dx + w_dx * p.dw, grad_z: p.dz / delta }
            }
            _ => {
                let p = self.bd.h(x, z, w);
                LiftPoint { value: p.value, grad_x: p.dx + w_dx * p.dw, grad_z: p.dz }
            }
        }
    }

    pub fn eval(&self, x: f64, z: f64) -> LiftPoint {
        let d = self.plate.eval_unchecked(x);
        self.eval_with(x, z, d.value, d.slope)
    }

    /// Robin datum `h_b(x, -H-1, u(x))`.
    pub fn frak_h(&self, x: f64) -> f64 {
        self.bd.frak_h(x, self.plate.eval_unchecked(x).value)
    }
}
