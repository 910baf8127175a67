//! Property tests over model parameters and wave-packet algebra.

use std::sync::OnceLock;

use nalgebra::DVector;
use proptest::prelude::*;
use qetcs::model::{ExampleModel, ExampleParams};
use qetcs::phase::{angle_distance, wrap_two_pi, PhasePoint, C64};
use qetcs::semiclassics::{ChainOptions, Germ};
use qetcs::wavepacket::{FrameSnapshot, Poly};

fn snapshot() -> &'static FrameSnapshot {
    static S: OnceLock<FrameSnapshot> = OnceLock::new();
    S.get_or_init(|| {
        let p = ExampleParams::default();
        let model = ExampleModel::new(p).unwrap();
        let g = Germ::build(&model, &PhasePoint::from_vector(&p.orbit(0.0)), ChainOptions::default()).unwrap();
        g.state_data(&model, &[0, 0, 0], 0.05).unwrap().snapshot(&g, 321)
    })
}

fn poly_from(coeffs: &[(f64, f64)]) -> Poly {
    let mut p = Poly::constant(3, C64::new(1.0, 0.0));
    for chunk in coeffs.chunks(3) {
        let l = DVector::from_iterator(3, chunk.iter().map(|&(a, b)| C64::new(a, b)));
        p = p.add(&p.mul_linear(&l));
    }
    p
}

fn light() -> ProptestConfig {
    ProptestConfig { cases: 6, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(light())]

    #[test]
    fn quasi_energy_tracks_closed_form(field in 0.5f64..5.0, omega in 1.05f64..1.3, hbar in 0.005f64..0.2) {
        let p = ExampleParams { field, omega, ..ExampleParams::default() };
        let model = ExampleModel::new(p).unwrap();
        let g = Germ::build(&model, &PhasePoint::from_vector(&p.orbit(0.0)), ChainOptions::default()).unwrap();
        for nu in [[0, 0, 0], [2, 0, 1]] {
            let sd = g.state_data(&model, &nu, hbar).unwrap();
            prop_assert!((sd.phase.e - p.quasi_energy(&nu, hbar)).abs() < 1e-6 * hbar);
            prop_assert!(angle_distance(sd.phase.gamma, wrap_two_pi(p.aa_phase(hbar))) < 1e-6);
            prop_assert!(sd.phase.decomposition_residual < 1e-8);
            prop_assert!(sd.phase.e_mod >= 0.0 && sd.phase.e_mod < hbar * omega);
        }
    }

    #[test]
    fn ladder_spacing_is_uniform(nu in proptest::collection::vec(0usize..4, 3)) {
        let p = ExampleParams::default();
        let model = ExampleModel::new(p).unwrap();
        let g = Germ::build(&model, &PhasePoint::from_vector(&p.orbit(0.0)), ChainOptions { samples_per_period: 800, ..ChainOptions::default() }).unwrap();
        let hbar = 0.1;
        let e0 = g.state_data(&model, &[0, 0, 0], hbar).unwrap().phase.e;
        let e = g.state_data(&model, &nu, hbar).unwrap().phase.e;
        // Equal spacing in |nu|, shifted below hbar Omega by the self-interaction.
        let shift = p.quasi_energy(&nu, hbar) - p.quasi_energy(&[0, 0, 0], hbar);
        prop_assert!((e - e0 - shift).abs() < 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn ladder_commutators_on_polynomials(
        coeffs in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 6),
        j in 0usize..3,
        k in 0usize..3,
    ) {
        let s = snapshot();
        let p = poly_from(&coeffs);
        let ac = s.annihilate(j, &s.create(k, &p));
        let ca = s.create(k, &s.annihilate(j, &p));
        let mut comm = ac.add(&ca.scale(C64::new(-1.0, 0.0)));
        if j == k {
            comm = comm.add(&p.scale(C64::new(-1.0, 0.0)));
        }
        let scale = p.terms().map(|(_, c)| c.norm()).fold(1.0, f64::max);
        prop_assert!(comm.max_abs_diff(&Poly::zero(3)) < 1e-8 * scale);
        let aa = s.annihilate(j, &s.annihilate(k, &p)).add(&s.annihilate(k, &s.annihilate(j, &p)).scale(C64::new(-1.0, 0.0)));
        prop_assert!(aa.max_abs_diff(&Poly::zero(3)) < 1e-8 * scale);
    }

    #[test]
    fn annihilation_lowers_degree(coeffs in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 6), k in 0usize..3) {
        let s = snapshot();
        let p = poly_from(&coeffs);
        let lowered = s.annihilate(k, &p).prune(1e-14);
        prop_assert!(lowered.degree() < p.degree().max(1));
    }
}
