//! Fixtures shared by the benchmarks.

use mems_core::banded::BandedSpd;
use mems_core::boundary_data::{BoundaryData, FamilySpec, PermittivityProfile, SigmaSpec};
use mems_core::geometry::{chebyshev_bump, Deflection, DeviceConfig};

pub struct Fixture {
    pub config: DeviceConfig,
    pub sigma: PermittivityProfile,
    pub bd: BoundaryData,
    pub bump: Deflection,
}

/// Default device on an `nx` grid with a downward bump of depth `0.3 H`.
pub fn fixture(nx: usize, nz: usize) -> Fixture {
    let config = DeviceConfig { nx, nz_free: nz, nz_layer: nz, ..DeviceConfig::default() };
    let sigma = PermittivityProfile::new(SigmaSpec::default(), config.half_width, config.gap_height)
        .expect("valid permittivity");
    let bd = FamilySpec::Grounded { voltage: 3.0 }.build(&sigma);
    let bump = chebyshev_bump(&config, &[-0.3]).expect("admissible bump");
    Fixture { config, sigma, bd, bump }
}

/// 1D Laplacian plus identity with `bw` off-diagonal bands.
pub fn banded_laplacian(n: usize, bw: usize) -> BandedSpd {
    let mut a = BandedSpd::zeros(n, bw);
    for i in 0..n {
        a.add(i, i, 1.0 + 2.0 * bw as f64);
        for k in 1..=bw.min(i) {
            a.add(i, i - k, -1.0);
        }
    }
    a
}
