use qetcs::model::TrapModel1D;
use qetcs::pipeline::{run, ModelConfig, RunConfig, Stage};
use qetcs::ErrorClass;

fn trap() -> TrapModel1D {
    TrapModel1D { m: 1.0, k: 4.0, a3: 0.0, a4: 0.5, drive: 1.0, omega: 1.0, v0: 1.0, gamma: 1.0, kappa_tilde: 1.0 }
}

#[test]
fn custom_trap_runs_through_tcs_and_spectra() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        model: ModelConfig { builtin: None, custom: Some(trap()), orbit_guess: None },
        nu_list: vec![vec![0], vec![2]],
        stages: vec![Stage::Spectra, Stage::Tcs],
        output_dir: dir.path().to_path_buf(),
        ..RunConfig::default()
    };
    let out = run(&cfg);
    assert!(out.error.is_none(), "{:?}", out.error);
    assert_eq!(out.summary.stages_run, vec![Stage::Orbit, Stage::Floquet, Stage::Tcs, Stage::Spectra]);
    assert!(out.summary.all_passed());
    // No closed form for the anharmonic trap, so criteria 1-3 are not reported.
    assert!(out.summary.checks.iter().all(|c| c.criterion > 3));
    for f in ["orbit.csv", "floquet.json", "tcs.json", "spectra.json", "summary.json", "tcs_h0_nu2.csv", "trajectory_h1_nu0.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let back = RunConfig::from_path(&dir.path().join("summary.json")).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn stage_failure_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig { stages: vec![Stage::Floquet], output_dir: dir.path().to_path_buf(), ..RunConfig::default() };
    // Non-resonant drive, a far guess and an unreachable Newton tolerance.
    cfg.params.omega = 1.2;
    cfg.model.orbit_guess = Some(vec![50.0; 6]);
    cfg.tolerances.orbit = 1e-300;
    let out = run(&cfg);
    assert!(out.error.is_some());
    let f = out.summary.failure.as_ref().unwrap();
    assert_eq!(f.stage, "orbit");
    assert_eq!(f.class, ErrorClass::Numerical);
    let text = std::fs::read_to_string(dir.path().join("summary.json")).unwrap();
    assert!(text.contains("\"failed\""));
}

#[test]
fn invalid_config_is_rejected_before_running() {
    let cfg = RunConfig { hbar: qetcs::pipeline::HbarSpec::One(-1.0), ..RunConfig::default() };
    let out = run(&cfg);
    assert_eq!(out.error.map(|e| e.class()), Some(ErrorClass::Config));
}

#[test]
fn shipped_config_matches_defaults() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/example.toml");
    let cfg = RunConfig::from_path(&path).unwrap();
    assert_eq!(cfg, RunConfig::default());
}
