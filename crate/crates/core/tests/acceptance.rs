//! End-to-end acceptance gate. Every check writes one `PASS`/`FAIL` line to
//! stderr (uncaptured) and then asserts.

use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mems_core::boundary_data::{default_grounded_family, FamilySpec, Model, PermittivityProfile};
use mems_core::field_solver::{
    build_recovery_sequence, electrostatic_energy, energy_reduced, energy_transmission, solve_robin,
    solve_transmission,
};
use mems_core::geometry::{chebyshev_bump, Deflection, DeviceConfig};
use mems_core::harness::export::{audit_csv, sweep_csv};
use mems_core::harness::{run_delta_sweep, verify_inequalities, AuditProfile, RunConfig, SweepReport};
use mems_core::mechanics::{electrostatic_force, mechanical_energy, mechanical_gradient, EnergyModel};
use mems_core::optimizer::random_profile;

fn report(id: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "acceptance {id} {verdict} {detail}");
    assert!(pass, "{id} failed: {detail}");
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sci(v: &[f64]) -> String {
    v.iter().map(|d| format!("{d:.3e}")).collect::<Vec<_>>().join(" ")
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn unit_setup() -> (PermittivityProfile, mems_core::BoundaryData) {
    let s = PermittivityProfile::constant(2.0, 1.0, 1.0).unwrap();
    let bd = FamilySpec::SeriesCapacitor { voltage: 1.0, s: 2.0 }.build(&s);
    (s, bd)
}

#[test]
fn ac1_manufactured_transmission() {
    let c = DeviceConfig { nx: 64, nz_free: 48, nz_layer: 16, ..DeviceConfig::default() };
    let (s, bd) = unit_setup();
    let u = Deflection::zero(&c);
    let (mut e_err, mut nodal, mut slowest) = (0.0f64, 0.0f64, 0.0f64);
    for delta in [0.2, 0.1, 0.05] {
        let t0 = Instant::now();
        let f = solve_transmission(&u, delta, &bd, &s, &c).unwrap();
        slowest = slowest.max(t0.elapsed().as_secs_f64());
        e_err = e_err.max((energy_transmission(&f).unwrap() + 2.0 / 3.0).abs());
        // series capacitor: slope 1/(3 delta) in the layer, 2/3 above it
        let exact = |z: f64| if z < -1.0 { (z + 1.0 + delta) / (3.0 * delta) } else { 2.0 / 3.0 * (z + 1.0) + 1.0 / 3.0 };
        for i in 0..=c.nx {
            let x = -1.0 + 2.0 * i as f64 / c.nx as f64;
            for r in 0..f.rows() {
                let z = f.node_z(i, r);
                nodal = nodal.max((f.psi_at(x, z).unwrap().0 - exact(z)).abs());
            }
        }
    }
    let pass = e_err <= 1e-8 && nodal <= 1e-10 && slowest < 1.0;
    report("AC1", pass, &format!("max|E+2/3| {e_err:.2e} nodal {nodal:.2e} slowest solve {slowest:.3}s"));
}

#[test]
fn ac2_manufactured_robin() {
    let c = DeviceConfig { nx: 64, nz_free: 64, ..DeviceConfig::default() };
    let (s, bd) = unit_setup();
    let f = solve_robin(&Deflection::zero(&c), &bd, &s, &c).unwrap();
    let e_err = (energy_reduced(&f).unwrap() + 2.0 / 3.0).abs();
    let trace_err = (0..=c.nx)
        .map(|i| -1.0 + 2.0 * i as f64 / c.nx as f64)
        .map(|x| (f.psi_at(x, -1.0).unwrap().0 - 1.0 / 3.0).abs())
        .fold(0.0, f64::max);
    report("AC2", e_err <= 1e-8 && trace_err <= 1e-8, &format!("|E+2/3| {e_err:.2e} trace {trace_err:.2e}"));
}

const LADDER: [f64; 4] = [0.2, 0.1, 0.05, 0.025];

fn default_setup() -> (RunConfig, PermittivityProfile, mems_core::BoundaryData) {
    let cfg = RunConfig::default();
    let setup = cfg.setup().unwrap();
    (cfg, setup.sigma, setup.bd)
}

fn ladder_profiles(c: &DeviceConfig) -> Vec<(&'static str, Deflection)> {
    // downward bump leaving a gap of 0.4 H
    let bump = chebyshev_bump(c, &[-0.6 * c.gap_height]).unwrap();
    vec![("zero", Deflection::zero(c)), ("bump", bump)]
}

#[test]
fn ac3_reduced_limit_fixed_deflection() {
    let (cfg, s, bd) = default_setup();
    let c = &cfg.device;
    let mut pass = true;
    let mut detail = String::new();
    for (name, u) in ladder_profiles(c) {
        let e0 = electrostatic_energy(&solve_robin(&u, &bd, &s, c).unwrap());
        let diffs: Vec<f64> = LADDER
            .iter()
            .map(|&d| (electrostatic_energy(&solve_transmission(&u, d, &bd, &s, c).unwrap()) - e0).abs())
            .collect();
        let ok = strictly_decreasing(&diffs) && diffs[3] <= 0.5 * diffs[0];
        pass &= ok;
        detail += &format!("{name}: {} ", sci(&diffs));
    }
    report("AC3", pass, &detail);
}

#[test]
fn ac4_recovery_sequence() {
    let (cfg, s, bd) = default_setup();
    let c = &cfg.device;
    let mut pass = true;
    let mut detail = String::new();
    for (name, u) in ladder_profiles(c) {
        let reduced = solve_robin(&u, &bd, &s, c).unwrap();
        let g = reduced.functional_value;
        let diffs: Vec<f64> = LADDER
            .iter()
            .map(|&d| (build_recovery_sequence(&reduced, d, c).unwrap().g_delta - g).abs())
            .collect();
        pass &= strictly_decreasing(&diffs);
        detail += &format!("{name}: {} ", sci(&diffs));
    }
    report("AC4", pass, &detail);
}

#[test]
fn ac5_force_gradient_oracle() {
    // the force formula is consistent to first order in the mesh; 1e-3 needs
    // a finer grid than the sweep default
    let (mut cfg, _, _) = default_setup();
    (cfg.device.nx, cfg.device.nz_free, cfg.device.nz_layer) = (96, 32, 32);
    let setup = cfg.setup().unwrap();
    let (s, bd) = (setup.sigma, setup.bd);
    let c = &cfg.device;
    let em = EnergyModel::new(c, &bd, &s, Model::Delta(0.1));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut worst_force, mut worst_mech, mut checked) = (0.0f64, 0.0f64, 0);
    for _ in 0..3 {
        let u = random_profile(c, &mut rng, 0.3 * c.gap_height).unwrap();
        let field = em.solve(&u).unwrap();
        let force = electrostatic_force(&field).unwrap().pair(&u, c.quadrature_order);
        let g_mech = mechanical_gradient(&u, c);
        for _ in 0..5 {
            let v = random_profile(c, &mut rng, 0.5 * c.gap_height).unwrap();
            let dofs = v.interior_dofs();
            let eps = 1e-4;
            let (up, um) = (u.axpy(eps, &v), u.axpy(-eps, &v));
            let fd = (em.elec(&up).unwrap() - em.elec(&um).unwrap()) / (2.0 * eps);
            worst_force = worst_force.max((dot(&force, &dofs) - fd).abs() / fd.abs());
            let fd_m = (mechanical_energy(&up, c) - mechanical_energy(&um, c)) / (2.0 * eps);
            worst_mech = worst_mech.max((dot(&g_mech, &dofs) - fd_m).abs() / fd_m.abs().max(1.0));
            checked += 1;
        }
    }
    let pass = worst_force <= 1e-3 && worst_mech <= 1e-6;
    report("AC5", pass, &format!("{checked} pairings on {}x{}+{}, force rel {worst_force:.2e}, mechanical {worst_mech:.2e}", c.nx, c.nz_free, c.nz_layer));
}

fn sweep_checks(r: &SweepReport) -> (bool, String) {
    let err_u: Vec<f64> = r.rows.iter().map(|x| x.err_u_h2).collect();
    let err_e: Vec<f64> = r.rows.iter().map(|x| x.err_e).collect();
    let ordered = r.all_rows().all(|x| x.e_total <= x.e_zero && x.e_zero <= 0.0) && r.reduced.e_total <= 0.0;
    let pass = strictly_decreasing(&err_u) && strictly_decreasing(&err_e) && ordered;
    (pass, format!("err_u_h2 {} err_e {} energies ordered {ordered}", sci(&err_u), sci(&err_e)))
}

fn minimizer_profiles(r: &SweepReport) -> Vec<AuditProfile> {
    r.minimizers
        .iter()
        .filter_map(|(m, u, _)| {
            m.delta().map(|d| AuditProfile { id: format!("min_{m}"), u: u.clone(), force_delta: Some(vec![d]) })
        })
        .collect()
}

// AC6 to AC8 share one default sweep.
#[test]
fn ac6_to_ac8_default_sweep_audit_determinism() {
    let cfg = RunConfig::default();
    assert_eq!(cfg.device.nx, 48);
    let t0 = Instant::now();
    let sweep = run_delta_sweep(&cfg).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let (ok, detail) = sweep_checks(&sweep);
    let pass6 = ok && secs <= 600.0 && sweep.rows.len() == 3;
    let extra = minimizer_profiles(&sweep);
    let audit = verify_inequalities(&cfg, 50, cfg.optimizer.seed, &extra).unwrap();
    let kinds = ["pi", "pi_slope", "e21", "lift_", "vs_", "force_"];
    let covered = kinds.iter().all(|k| audit.rows.iter().any(|r| r.name.starts_with(k)));
    let pass7 = audit.all_pass() && covered && extra.len() == 3 && audit.rows.iter().any(|r| r.sample_id == "s049");

    let again = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| {
        let s = run_delta_sweep(&cfg).unwrap();
        let a = verify_inequalities(&cfg, 50, cfg.optimizer.seed, &minimizer_profiles(&s)).unwrap();
        (sweep_csv(&s, false), audit_csv(&a))
    });
    let pass8 = again.0 == sweep_csv(&sweep, false) && again.1 == audit_csv(&audit);

    let results = [
        ("AC6", pass6, format!("{detail} wall {secs:.1}s")),
        ("AC7", pass7, format!("{}/{} rows pass", audit.pass_count(), audit.rows.len())),
        ("AC8", pass8, "sweep.csv and audit.csv identical across thread counts".to_string()),
    ];
    for (id, pass, detail) in &results {
        let verdict = if *pass { "PASS" } else { "FAIL" };
        let _ = writeln!(std::io::stderr(), "acceptance {id} {verdict} {detail}");
    }
    assert!(results.iter().all(|r| r.1));
}

#[test]
fn grounded_zero_voltage_is_inert() {
    let c = DeviceConfig { nx: 16, nz_free: 8, nz_layer: 8, ..DeviceConfig::default() };
    let s = PermittivityProfile::constant(2.0, 1.0, 1.0).unwrap();
    let bd = default_grounded_family(0.0, &s, 1.0);
    let u = chebyshev_bump(&c, &[0.2]).unwrap();
    assert_eq!(electrostatic_energy(&solve_transmission(&u, 0.1, &bd, &s, &c).unwrap()), 0.0);
}
