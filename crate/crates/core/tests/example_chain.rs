//! End-to-end checks of the semiclassical chain on the driven isotropic oscillator.

use nalgebra::{DMatrix, DVector};
use qetcs::model::{ExampleModel, ExampleParams};
use qetcs::phase::{angle_distance, wrap_two_pi, PhasePoint, C64};
use qetcs::semiclassics::{ChainOptions, Germ};
use qetcs::wavepacket::{annihilation_residual, vacuum_state, SpatialGrid};

fn germ(p: ExampleParams) -> (ExampleModel, Germ) {
    let model = ExampleModel::new(p).unwrap();
    let g = Germ::build(&model, &PhasePoint::from_vector(&p.orbit(0.0)), ChainOptions::default()).unwrap();
    (model, g)
}

#[test]
fn orbit_and_frequencies() {
    let p = ExampleParams::default();
    let (_, g) = germ(p);
    let err = g.times.iter().zip(&g.z0).map(|(&t, z)| (z - p.orbit(t)).amax()).fold(0.0, f64::max);
    assert!(err < 1e-8, "orbit error {err}");
    for w in g.plain.omegas() {
        assert!((w - 3f64.sqrt()).abs() < 1e-8, "{w}");
    }
}

#[test]
fn quasi_energies_and_phases() {
    let p = ExampleParams::default();
    let (model, g) = germ(p);
    for hbar in [0.1, 0.01] {
        for nu in [[0, 0, 0], [1, 0, 0], [1, 1, 1]] {
            let sd = g.state_data(&model, &nu, hbar).unwrap();
            let target = p.quasi_energy(&nu, hbar);
            assert!((sd.phase.e - target).abs() < 1e-6 * hbar, "E {} vs {target}", sd.phase.e);
            assert!(angle_distance(sd.phase.gamma, wrap_two_pi(p.aa_phase(hbar))) < 1e-6);
            assert!(sd.phase.breakdown.z1_term.abs() < 1e-6);
            assert!(sd.phase.breakdown.germ_term.abs() < 1e-6);
            assert!(sd.phase.decomposition_residual < 1e-8);
        }
    }
    let e0 = g.state_data(&model, &[0, 0, 0], 0.1).unwrap().phase.e;
    assert!((e0 - (-0.5 + 2.1650635 * 0.1)).abs() < 1e-7);
}

#[test]
fn germ_frame_on_the_example() {
    let p = ExampleParams::default();
    let (model, g) = germ(p);
    let (a, b, c) = g.frame.identity_residuals();
    assert!(a < 1e-8 && b < 1e-8 && c < 1e-8);
    let target = DMatrix::<C64>::identity(3, 3) * C64::new(0.0, 3f64.sqrt());
    assert!((&g.frame.q[17] - target).camax() < 1e-8);

    let sd = g.state_data(&model, &[0, 0, 0], 0.1).unwrap();
    let snap = sd.snapshot(&g, 0);
    let center: Vec<f64> = snap.x.iter().copied().collect();
    let grid = SpatialGrid::around(&center, &snap.vacuum_sigma(), 10.0, 2.5).unwrap();
    let vac = vacuum_state(&snap);
    for k in 0..3 {
        assert!(annihilation_residual(&vac, k, &grid).unwrap() < 1e-6);
    }
}

#[test]
fn full_correction_path_agrees() {
    let p = ExampleParams::default();
    let model = ExampleModel::new(p).unwrap();
    let opts = ChainOptions { full_correction: true, ..ChainOptions::default() };
    let g = Germ::build(&model, &PhasePoint::from_vector(&p.orbit(0.0)), opts).unwrap();
    let sd = g.state_data(&model, &[1, 0, 0], 0.1).unwrap();
    assert!(angle_distance(sd.phase.gamma, wrap_two_pi(p.aa_phase(0.1))) < 1e-6);
    assert!(sd.phase.breakdown.full_correction);
}

#[test]
fn off_orbit_guess_converges() {
    // At omega = 1 the free motion has period pi, so every guess is already periodic.
    let p = ExampleParams { omega: 1.2, ..ExampleParams::default() };
    let model = ExampleModel::new(p).unwrap();
    let guess = p.orbit(0.0) + DVector::from_element(6, 0.05);
    let g = Germ::build(&model, &PhasePoint::from_vector(&guess), ChainOptions::default()).unwrap();
    let err = (&g.z0[0] - p.orbit(0.0)).amax();
    assert!(err < 1e-8, "{err} {:?}", g.periodic.residual_history);
}
