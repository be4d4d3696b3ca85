use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::boundary_data::{
    certify_growth_constants, validate_compatibility, BoundaryData, FamilySpec, GrowthConstants,
    PermittivityProfile, SigmaSpec, ValidationReport,
};
use crate::error::{MemsError, Result};
use crate::geometry::DeviceConfig;
use crate::optimizer::MinimizeOptions;

/// Range of plate heights the growth constants are certified on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrowthConfig {
    /// Defaults to `-H/2`.
    pub w_min: Option<f64>,
    /// Defaults to `H`.
    pub w_max: Option<f64>,
    pub grid_density: usize,
}

impl Default for GrowthConfig {
    fn default() -> Self {
        GrowthConfig { w_min: None, w_max: None, grid_density: 32 }
    }
}

/// Tensor grid on `D x (-H, M)` where layered and reduced potentials are
/// compared.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComparisonGrid {
    pub nx: usize,
    pub nz: usize,
}

impl Default for ComparisonGrid {
    fn default() -> Self {
        ComparisonGrid { nx: 64, nz: 64 }
    }
}

/// One run configuration, read from a single JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub device: DeviceConfig,
    pub permittivity: SigmaSpec,
    pub boundary: FamilySpec,
    pub growth: GrowthConfig,
    pub optimizer: MinimizeOptions,
    pub comparison_grid: ComparisonGrid,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            device: DeviceConfig::default(),
            permittivity: SigmaSpec::default(),
            boundary: FamilySpec::Grounded { voltage: 3.0 },
            growth: GrowthConfig::default(),
            optimizer: MinimizeOptions::default(),
            comparison_grid: ComparisonGrid::default(),
        }
    }
}

/// Permittivity and certified boundary data built from a configuration.
#[derive(Clone, Debug)]
pub struct Setup {
    pub sigma: PermittivityProfile,
    pub bd: BoundaryData,
    pub growth: GrowthConstants,
    pub validation: ValidationReport,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| MemsError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| MemsError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Certification range `[w_min, w_max]` with defaults resolved.
    pub fn w_range(&self) -> (f64, f64) {
        let h = self.device.gap_height;
        (self.growth.w_min.unwrap_or(-0.5 * h), self.growth.w_max.unwrap_or(h))
    }

    pub fn validate(&self) -> Result<()> {
        self.device.validate()?;
        self.optimizer.validate()?;
        let h = self.device.gap_height;
        let g = &self.growth;
        let (lo, hi) = self.w_range();
        if !(lo > -h && hi > lo) {
            return Err(MemsError::Config(format!(
                "growth range [{lo}, {hi}] must satisfy -H < w_min < w_max"
            )));
        }
        if g.grid_density < 2 || self.comparison_grid.nx < 2 || self.comparison_grid.nz < 2 {
            return Err(MemsError::Config("grid densities must be at least 2".into()));
        }
        if !self.boundary.voltage().is_finite() {
            return Err(MemsError::Config("voltage must be finite".into()));
        }
        if let FamilySpec::SeriesCapacitor { s, .. } = self.boundary {
            if !(s > 0.0) {
                return Err(MemsError::Config("series capacitor s must be positive".into()));
            }
        }
        Ok(())
    }

    /// Canonical JSON of the parsed configuration, defaults included.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("configuration serializes")
    }

    /// SHA-256 of the canonical JSON, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    /// Builds the permittivity, validates the boundary-data family and
    /// certifies its growth constants.
    pub fn setup(&self) -> Result<Setup> {
        let d = &self.device;
        let sigma = PermittivityProfile::new(self.permittivity.clone(), d.half_width, d.gap_height)?;
        let mut bd = self.boundary.build(&sigma);
        bd.w_range = self.w_range();
        let validation = validate_compatibility(&bd, &sigma, self.growth.grid_density.min(24));
        if !validation.passed {
            return Err(MemsError::Config(format!("boundary data fails the compatibility checks: {validation:?}")));
        }
        let growth = certify_growth_constants(&mut bd, self.w_range(), self.growth.grid_density)?;
        Ok(Setup { sigma, bd, growth, validation })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = RunConfig::from_json("{}").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.hash().len(), 64);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json(r#"{"device": {"L": 1.0, "colour": 3}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"extra": 1}"#).is_err());
        let e = RunConfig::from_json(r#"{"boundary": {"kind": "floating", "voltage": 1}}"#).unwrap_err();
        assert!(e.is_config_error());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::from_json(r#"{"device": {"nx": 32}}"#).unwrap();
        let b = RunConfig::from_json(r#"{"device": {"nx": 32, "L": 1.0}}"#).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), RunConfig::default().hash());
    }

    #[test]
    fn setup_certifies_constants() {
        let mut c = RunConfig::default();
        c.boundary = FamilySpec::Grounded { voltage: 1.0 };
        let s = c.setup().unwrap();
        assert!((s.growth.m - 2.0).abs() < 1e-12);
        assert!(s.validation.passed);
        c.growth.w_min = Some(-1.5);
        assert!(c.validate().is_err());
    }
}
