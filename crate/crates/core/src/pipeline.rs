//! Configuration, stage orchestration and artifacts for a complete run.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::ehrenfest::{check_uncertainty, EhrenfestTrajectory};
use crate::error::{Error, ErrorClass, Result};
use crate::floquet::{classify_stability, FloquetOptions};
use crate::model::{ExampleModel, ExampleParams, SymbolModel, TrapModel1D};
use crate::monodromy::{identity_limit_study, monodromy_residual, GreensKernel};
use crate::oracle::{compare_with_semiclassics, StudyOptions};
use crate::phase::{angle_distance, wrap_two_pi, PhasePoint, C64};
use crate::semiclassics::{ChainOptions, Germ, StateData};
use crate::wavepacket::{annihilation_residual, fock_state, multi_indices, quasi_periodicity_check, vacuum_state, Poly, SpatialGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Orbit,
    Floquet,
    Tcs,
    Spectra,
    Monodromy,
    Oracle,
}

impl Stage {
    pub const ALL: [Stage; 6] = [Stage::Orbit, Stage::Floquet, Stage::Tcs, Stage::Spectra, Stage::Monodromy, Stage::Oracle];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Orbit => "orbit",
            Stage::Floquet => "floquet",
            Stage::Tcs => "tcs",
            Stage::Spectra => "spectra",
            Stage::Monodromy => "monodromy",
            Stage::Oracle => "oracle",
        }
    }

    pub fn parse(s: &str) -> Result<Stage> {
        Stage::ALL.into_iter().find(|st| st.name() == s).ok_or_else(|| Error::Config(format!("unknown stage '{s}'")))
    }

    fn prerequisites(self) -> &'static [Stage] {
        match self {
            Stage::Orbit | Stage::Oracle => &[],
            Stage::Floquet => &[Stage::Orbit],
            Stage::Tcs | Stage::Spectra | Stage::Monodromy => &[Stage::Orbit, Stage::Floquet],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Builtin {
    Example,
}

/// Either the built-in three-dimensional example or a custom one-dimensional trap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<Builtin>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom: Option<TrapModel1D>,
    /// Starting point for the periodic-orbit search, `(p..., x...)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orbit_guess: Option<Vec<f64>>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { builtin: Some(Builtin::Example), custom: None, orbit_guess: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HbarSpec {
    One(f64),
    Many(Vec<f64>),
}

impl HbarSpec {
    pub fn values(&self) -> Vec<f64> {
        match self {
            HbarSpec::One(h) => vec![*h],
            HbarSpec::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Half-width in vacuum standard deviations.
    pub margin: f64,
    /// Nodes per vacuum standard deviation.
    pub per_sigma: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { margin: 12.0, per_sigma: 2.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub ode: f64,
    pub orbit: f64,
    pub floquet: f64,
    /// Time samples per period for every quadrature.
    pub quadrature: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { ode: 1e-13, orbit: 1e-10, floquet: 1e-6, quadrature: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TcsConfig {
    /// Largest total degree in the Gram-matrix check.
    pub gram_degree: usize,
    /// Write wavefunction samples of every state at `t = 0`.
    pub write_states: bool,
}

impl Default for TcsConfig {
    fn default() -> Self {
        Self { gram_degree: 3, write_states: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonodromyConfig {
    pub nu_list: Vec<usize>,
    pub points: usize,
    pub margin: f64,
    /// `hbar` for the short-time kernel study.
    pub kernel_hbar: f64,
}

impl Default for MonodromyConfig {
    fn default() -> Self {
        Self { nu_list: vec![0, 1], points: 256, margin: 14.0, kernel_hbar: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    pub model: TrapModel1D,
    pub hbar: Vec<f64>,
    pub study: StudyOptions,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self {
            model: TrapModel1D { m: 1.0, k: 4.0, a3: 0.0, a4: 0.5, drive: 1.0, omega: 1.0, v0: 1.0, gamma: 1.0, kappa_tilde: 1.0 },
            hbar: vec![0.1, 0.03, 0.01],
            study: StudyOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub params: ExampleParams,
    pub hbar: HbarSpec,
    pub nu_list: Vec<Vec<usize>>,
    pub grid: GridConfig,
    pub tolerances: Tolerances,
    pub stages: Vec<Stage>,
    pub output_dir: PathBuf,
    pub full_correction: bool,
    pub tcs: TcsConfig,
    pub monodromy: MonodromyConfig,
    pub oracle: OracleSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            params: ExampleParams::default(),
            hbar: HbarSpec::Many(vec![0.1, 0.01]),
            nu_list: vec![vec![0, 0, 0], vec![1, 0, 0], vec![1, 1, 1]],
            grid: GridConfig::default(),
            tolerances: Tolerances::default(),
            stages: Stage::ALL.to_vec(),
            output_dir: PathBuf::from("out"),
            full_correction: false,
            tcs: TcsConfig::default(),
            monodromy: MonodromyConfig::default(),
            oracle: OracleSection::default(),
        }
    }
}

impl RunConfig {
    /// Parses TOML, or JSON when the text starts with `{`; a run summary is accepted as well.
    pub fn from_text(text: &str) -> Result<Self> {
        if text.trim_start().starts_with('{') {
            let v: Value = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
            let inner = match v.get("config") {
                Some(c) if v.get("checks").is_some() => c.clone(),
                _ => v,
            };
            serde_json::from_value(inner).map_err(|e| Error::Config(e.to_string()))
        } else {
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
        }
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    pub fn hbars(&self) -> Vec<f64> {
        self.hbar.values()
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Config("no stages requested".into()));
        }
        let mut seen = self.stages.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.stages.len() {
            return Err(Error::Config("stages must not repeat".into()));
        }
        match (&self.model.builtin, &self.model.custom) {
            (Some(_), None) => self.params.validate()?,
            (None, Some(m)) => m.validate()?,
            _ => return Err(Error::Config("model needs exactly one of 'builtin' or 'custom'".into())),
        }
        let hb = self.hbars();
        if hb.is_empty() || hb.iter().any(|h| !(*h > 0.0)) {
            return Err(Error::Config("hbar values must be positive".into()));
        }
        let n = self.dim();
        if self.nu_list.is_empty() || self.nu_list.iter().any(|nu| nu.len() != n) {
            return Err(Error::Config(format!("every multi-index needs {n} entries")));
        }
        if let Some(g) = &self.model.orbit_guess {
            if g.len() != 2 * n {
                return Err(Error::Config(format!("orbit_guess needs {} entries", 2 * n)));
            }
        }
        if !(self.grid.margin > 0.0 && self.grid.per_sigma > 0.0) {
            return Err(Error::Config("grid margin and per_sigma must be positive".into()));
        }
        if self.stages.contains(&Stage::Oracle) {
            self.oracle.model.validate()?;
            if self.oracle.hbar.len() < 2 || self.oracle.hbar.iter().any(|h| !(*h > 0.0)) {
                return Err(Error::Config("the oracle needs at least two positive hbar values".into()));
            }
        }
        if self.monodromy.points < 16 {
            return Err(Error::Config("monodromy grid needs at least 16 points".into()));
        }
        self.chain_options().validate()
    }

    pub fn dim(&self) -> usize {
        if self.model.custom.is_some() {
            1
        } else {
            3
        }
    }

    pub fn chain_options(&self) -> ChainOptions {
        ChainOptions {
            samples_per_period: self.tolerances.quadrature,
            periods: 2,
            ode_tol: self.tolerances.ode,
            orbit_tol: self.tolerances.orbit,
            full_correction: self.full_correction,
            floquet: FloquetOptions { stability_tol: self.tolerances.floquet, ..FloquetOptions::default() },
        }
    }

    /// Requested stages plus their prerequisites, in dependency order.
    pub fn resolved_stages(&self) -> Vec<Stage> {
        let mut out: Vec<Stage> = Vec::new();
        for s in &self.stages {
            out.extend_from_slice(s.prerequisites());
            out.push(*s);
        }
        out.sort();
        out.dedup();
        out
    }
}

/// One acceptance metric.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub criterion: u8,
    pub name: String,
    pub value: f64,
    /// `"le"` for `value <= threshold`, `"ge"` for `value >= threshold`.
    pub relation: &'static str,
    pub threshold: f64,
    pub passed: bool,
}

impl Check {
    fn le(criterion: u8, name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self { criterion, name: name.into(), value, relation: "le", threshold, passed: value <= threshold }
    }
    fn ge(criterion: u8, name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self { criterion, name: name.into(), value, relation: "ge", threshold, passed: value >= threshold }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub stage: String,
    pub class: ErrorClass,
    pub message: String,
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub config: RunConfig,
    pub status: &'static str,
    pub stages_requested: Vec<Stage>,
    pub stages_run: Vec<Stage>,
    pub failure: Option<Failure>,
    pub metrics: BTreeMap<String, Value>,
    pub checks: Vec<Check>,
}

impl Summary {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Result of [`run`]: the summary that was written and the error that stopped the run, if any.
pub struct RunOutcome {
    pub summary: Summary,
    pub error: Option<Error>,
    pub timings: BTreeMap<String, f64>,
}

enum Built {
    Example(ExampleModel),
    Trap(TrapModel1D),
}

impl Built {
    fn model(&self) -> &dyn SymbolModel {
        match self {
            Built::Example(m) => m,
            Built::Trap(m) => m,
        }
    }
    fn reduction(&self) -> TrapModel1D {
        match self {
            Built::Example(m) => m.transverse_reduction(),
            Built::Trap(m) => *m,
        }
    }
    fn example(&self) -> Option<&ExampleParams> {
        match self {
            Built::Example(m) => Some(&m.params),
            Built::Trap(_) => None,
        }
    }
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    out: PathBuf,
    built: Built,
    germ: Option<Germ>,
    metrics: BTreeMap<String, Value>,
    checks: Vec<Check>,
}

fn to_json<T: Serialize>(v: &T) -> Result<Value> {
    serde_json::to_value(v).map_err(|e| Error::Serde(e.to_string()))
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| Error::Serde(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn nu_tag(nu: &[usize]) -> String {
    nu.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("")
}

/// Runs every resolved stage, writing artifacts and `summary.json` into the output directory.
pub fn run(cfg: &RunConfig) -> RunOutcome {
    let mut timings = BTreeMap::new();
    let stages = cfg.resolved_stages();
    let mut summary = Summary {
        config: cfg.clone(),
        status: "ok",
        stages_requested: cfg.stages.clone(),
        stages_run: vec![],
        failure: None,
        metrics: BTreeMap::new(),
        checks: vec![],
    };
    let fail = |summary: &mut Summary, stage: &str, e: &Error| {
        summary.status = "failed";
        summary.failure = Some(Failure { stage: stage.into(), class: e.class(), message: e.to_string() });
    };
    if let Err(e) = cfg.validate() {
        fail(&mut summary, "config", &e);
        return RunOutcome { summary, error: Some(e), timings };
    }
    if let Err(e) = fs::create_dir_all(&cfg.output_dir) {
        let e = Error::Io(e);
        fail(&mut summary, "config", &e);
        return RunOutcome { summary, error: Some(e), timings };
    }
    let built = match (&cfg.model.builtin, &cfg.model.custom) {
        (_, Some(m)) => Built::Trap(*m),
        _ => match ExampleModel::new(cfg.params) {
            Ok(m) => Built::Example(m),
            Err(e) => {
                fail(&mut summary, "config", &e);
                return RunOutcome { summary, error: Some(e), timings };
            }
        },
    };
    let mut ctx = Ctx { cfg, out: cfg.output_dir.clone(), built, germ: None, metrics: BTreeMap::new(), checks: vec![] };
    let mut error = None;
    for st in stages {
        let clock = std::time::Instant::now();
        let r = match st {
            Stage::Orbit => stage_orbit(&mut ctx),
            Stage::Floquet => stage_floquet(&mut ctx),
            Stage::Tcs => stage_tcs(&mut ctx),
            Stage::Spectra => stage_spectra(&mut ctx),
            Stage::Monodromy => stage_monodromy(&mut ctx),
            Stage::Oracle => stage_oracle(&mut ctx),
        };
        timings.insert(st.name().to_string(), clock.elapsed().as_secs_f64());
        match r {
            Ok(()) => summary.stages_run.push(st),
            Err(e) => {
                fail(&mut summary, st.name(), &e);
                error = Some(e);
                break;
            }
        }
    }
    summary.metrics = std::mem::take(&mut ctx.metrics);
    summary.checks = std::mem::take(&mut ctx.checks);
    if let Err(e) = write_json(&cfg.output_dir.join("summary.json"), &summary) {
        error.get_or_insert(e);
    }
    let _ = write_json(&cfg.output_dir.join("timings.json"), &timings);
    RunOutcome { summary, error, timings }
}

fn guess(ctx: &Ctx) -> PhasePoint {
    if let Some(g) = &ctx.cfg.model.orbit_guess {
        return PhasePoint::from_vector(&DVector::from_vec(g.clone()));
    }
    match ctx.built.example() {
        Some(p) => PhasePoint::from_vector(&p.orbit(0.0)),
        None => PhasePoint::zeros(ctx.cfg.dim()),
    }
}

fn germ<'a>(ctx: &'a Ctx) -> Result<&'a Germ> {
    ctx.germ.as_ref().ok_or_else(|| Error::Contract("floquet stage has not run".into()))
}

fn stage_orbit(ctx: &mut Ctx) -> Result<()> {
    let model = ctx.built.model();
    let opts = ctx.cfg.chain_options();
    let po = crate::ehrenfest::find_periodic_orbit(model, &guess(ctx), opts.orbit_tol)?;
    let period = model.period();
    let orbit = crate::ehrenfest::integrate_z0(model, &po.point(), (0.0, 2.0 * period), opts.ode_tol)?;
    let n = opts.samples_per_period;
    let mut rows = Vec::new();
    let mut max_err: f64 = 0.0;
    for j in 0..=2 * n {
        let t = period * j as f64 / n as f64;
        let z = orbit.state(t)?;
        if let Some(p) = ctx.built.example() {
            max_err = max_err.max((&z - p.orbit(t)).amax());
        }
        rows.push((t, z));
    }
    let mut w = csv::Writer::from_path(ctx.out.join("orbit.csv")).map_err(|e| Error::Serde(e.to_string()))?;
    let d = model.dim();
    let mut header = vec!["t".to_string()];
    header.extend((0..d).map(|i| format!("P{i}")));
    header.extend((0..d).map(|i| format!("X{i}")));
    w.write_record(&header).map_err(|e| Error::Serde(e.to_string()))?;
    for (t, z) in &rows {
        let mut rec = vec![format!("{t:e}")];
        rec.extend(z.iter().map(|v| format!("{v:e}")));
        w.write_record(&rec).map_err(|e| Error::Serde(e.to_string()))?;
    }
    w.flush()?;
    let mut m = json!({
        "z_init": po.z,
        "residual": po.residual(),
        "residual_history": po.residual_history,
        "iterations": po.iterations,
        "period": period,
    });
    if ctx.built.example().is_some() {
        m["max_error_vs_closed_form"] = json!(max_err);
        ctx.checks.push(Check::le(1, "orbit max pointwise error vs closed form", max_err, 1e-8));
    }
    write_json(&ctx.out.join("orbit.json"), &m)?;
    ctx.metrics.insert("orbit".into(), m);
    Ok(())
}

fn stage_floquet(ctx: &mut Ctx) -> Result<()> {
    let model = ctx.built.model();
    let opts = ctx.cfg.chain_options();
    let g = Germ::build(model, &guess(ctx), opts)?;
    let plain = g.plain.report(&opts.floquet);
    let tilde = g.tilde.report(&opts.floquet);
    let st = classify_stability(&g.plain.monodromy, opts.floquet.stability_tol);
    let unit = st.moduli.iter().map(|m| (m - 1.0).abs()).fold(0.0, f64::max);
    let mut m = json!({ "plain": to_json(&plain)?, "tilde": to_json(&tilde)?, "max_unit_circle_deviation": unit });
    if let Some(p) = ctx.built.example() {
        let ws = p.omega_s();
        let err = g.plain.omegas().iter().map(|w| (w - ws).abs()).fold(0.0, f64::max);
        m["omega_s"] = json!(ws);
        m["max_omega_error"] = json!(err);
        ctx.checks.push(Check::le(2, "multipliers on the unit circle", unit, 1e-8));
        ctx.checks.push(Check::le(2, "Floquet frequencies equal omega_s", err, 1e-8));
    }
    // Germ identities on 200 evenly spaced samples.
    let fr = &g.frame;
    let p = g.period_index();
    let idx: Vec<usize> = (0..200).map(|k| k * p / 200).collect();
    let sub = crate::wavepacket::GermFrame {
        times: idx.iter().map(|&j| fr.times[j]).collect(),
        b: idx.iter().map(|&j| fr.b[j].clone()).collect(),
        c: idx.iter().map(|&j| fr.c[j].clone()).collect(),
        q: idx.iter().map(|&j| fr.q[j].clone()).collect(),
        sqrt_detc_phase: idx.iter().map(|&j| fr.sqrt_detc_phase[j]).collect(),
        phase0: fr.phase0,
    };
    let (r_sym, r_norm, r_q) = sub.identity_residuals();
    let min_im = sub.min_im_q_eigenvalue();
    m["germ"] = json!({ "samples": 200, "ctb_residual": r_sym, "hermitian_residual": r_norm, "q_asymmetry": r_q, "min_im_q_eigenvalue": min_im });
    ctx.checks.push(Check::le(5, "C^T B - B^T C = 0", r_sym, 1e-8));
    ctx.checks.push(Check::le(5, "(C^+ B - B^+ C)/2i = I", r_norm, 1e-8));
    ctx.checks.push(Check::le(5, "Q symmetric", r_q, 1e-8));
    ctx.checks.push(Check::ge(5, "min eigenvalue of Im Q", min_im, f64::MIN_POSITIVE));
    if let Some(pp) = ctx.built.example() {
        let target = DMatrix::<C64>::identity(3, 3) * C64::new(0.0, pp.m * pp.omega_s());
        let err = sub.q.iter().map(|q| (q - &target).camax()).fold(0.0, f64::max);
        m["germ"]["max_q_error"] = json!(err);
        ctx.checks.push(Check::le(5, "Q = i m omega_s I", err, 1e-8));
    }
    write_json(&ctx.out.join("floquet.json"), &m)?;
    ctx.metrics.insert("floquet".into(), m);
    ctx.germ = Some(g);
    Ok(())
}

fn state_grid(ctx: &Ctx, sd: &StateData, g: &Germ, j: usize) -> Result<SpatialGrid> {
    let snap = sd.snapshot(g, j);
    let center: Vec<f64> = snap.x.iter().copied().collect();
    SpatialGrid::around(&center, &snap.vacuum_sigma(), ctx.cfg.grid.margin, ctx.cfg.grid.per_sigma)
}

/// `max |[a_j, a_k^+] - delta_jk|` and `max |[a_j, a_k]|` on a few test polynomials.
fn commutator_residual(snap: &crate::wavepacket::FrameSnapshot) -> f64 {
    let n = snap.dim();
    let one = Poly::constant(n, C64::new(1.0, 0.0));
    let l1 = DVector::from_fn(n, |i, _| C64::new(0.3 + i as f64, -0.2 * i as f64));
    let l2 = DVector::from_fn(n, |i, _| C64::new(-0.1 * i as f64, 0.7));
    let tests = [one.clone(), one.mul_linear(&l1), one.mul_linear(&l1).mul_linear(&l2)];
    let mut worst: f64 = 0.0;
    for p in &tests {
        for j in 0..n {
            for k in 0..n {
                let ac = snap.annihilate(j, &snap.create(k, p));
                let ca = snap.create(k, &snap.annihilate(j, p));
                let mut comm = ac.add(&ca.scale(C64::new(-1.0, 0.0)));
                if j == k {
                    comm = comm.add(&p.scale(C64::new(-1.0, 0.0)));
                }
                let scale = p.terms().map(|(_, c)| c.norm()).fold(1.0, f64::max);
                worst = worst.max(comm.max_abs_diff(&Poly::zero(n)) / scale);
                let aa = snap.annihilate(j, &snap.annihilate(k, p)).add(&snap.annihilate(k, &snap.annihilate(j, p)).scale(C64::new(-1.0, 0.0)));
                worst = worst.max(aa.max_abs_diff(&Poly::zero(n)) / scale);
            }
        }
    }
    worst
}

fn stage_tcs(ctx: &mut Ctx) -> Result<()> {
    let g = germ(ctx)?;
    let model = ctx.built.model();
    let n = g.dim();
    let p = g.period_index();
    let mut per_hbar = Vec::new();
    let (mut worst_ann, mut worst_comm, mut worst_gram, mut worst_qp) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let (mut min_margin, mut worst_sat) = (f64::INFINITY, 0.0f64);
    for (hi, &hbar) in ctx.cfg.hbars().iter().enumerate() {
        let sd0 = g.state_data(model, &vec![0; n], hbar)?;
        let snap = sd0.snapshot(g, 0);
        let grid = state_grid(ctx, &sd0, g, 0)?;
        let vac = vacuum_state(&snap);
        let ann: Vec<f64> = (0..n).map(|k| annihilation_residual(&vac, k, &grid)).collect::<Result<_>>()?;
        let comm = commutator_residual(&snap);
        let basis = multi_indices(n, ctx.cfg.tcs.gram_degree);
        let samples: Vec<Vec<C64>> = basis.iter().map(|nu| fock_state(&snap, nu).sample_checked(&grid)).collect::<Result<_>>()?;
        let mut gram_err: f64 = 0.0;
        for a in 0..basis.len() {
            for b in a..basis.len() {
                let v = grid.inner(&samples[a], &samples[b]);
                let target = if a == b { 1.0 } else { 0.0 };
                gram_err = gram_err.max((v - C64::new(target, 0.0)).norm());
            }
        }
        // Pairwise saturation of the vacuum: s_pp s_xx - s_xp^2 = hbar^2 / 4 per axis.
        for d in &sd0.delta2 {
            for i in 0..n {
                let v = d[(i, i)] * d[(n + i, n + i)] - d[(i, n + i)].powi(2);
                worst_sat = worst_sat.max((v - hbar * hbar / 4.0).abs());
            }
        }
        let mut states = Vec::new();
        for nu in &ctx.cfg.nu_list {
            let sd = g.state_data(model, nu, hbar)?;
            let grid0 = state_grid(ctx, &sd, g, 0)?;
            let early = sd.state(g, 0);
            let late = sd.state(g, p);
            let qp = quasi_periodicity_check(&late, &early, sd.quasi_energy(), g.period(), &grid0)?;
            let margin = sd.delta2.iter().map(|d| check_uncertainty(d, hbar).margin).fold(f64::INFINITY, f64::min);
            min_margin = min_margin.min(margin);
            worst_qp = worst_qp.max(qp);
            let traj = EhrenfestTrajectory {
                times: g.times.clone(),
                z0: g.z0.clone(),
                z1: sd.z1.clone(),
                delta2: sd.delta2.clone(),
                a: g.plain.a_samples.clone(),
            };
            traj.write_csv(&ctx.out.join(format!("trajectory_h{hi}_nu{}.csv", nu_tag(nu))))?;
            if ctx.cfg.tcs.write_states {
                let psi = early.sample(&grid0);
                let path = ctx.out.join(format!("tcs_h{hi}_nu{}", nu_tag(nu)));
                if n == 1 {
                    grid0.write_csv(&psi, &path.with_extension("csv"))?;
                } else {
                    grid0.write_binary(&psi, 0.0, &path.with_extension("bin"))?;
                }
            }
            states.push(json!({ "nu": nu, "quasi_periodicity_residual": qp, "min_uncertainty_margin": margin, "grid_points": grid0.len() }));
        }
        worst_ann = ann.iter().fold(worst_ann, |a, &b| a.max(b));
        worst_comm = worst_comm.max(comm);
        worst_gram = worst_gram.max(gram_err);
        per_hbar.push(json!({
            "hbar": hbar,
            "annihilation_residuals": ann,
            "commutator_residual": comm,
            "gram_degree": ctx.cfg.tcs.gram_degree,
            "gram_size": basis.len(),
            "gram_max_error": gram_err,
            "grid_points": grid.len(),
            "states": states,
        }));
    }
    ctx.checks.push(Check::le(6, "annihilation residual ||a_k Phi_0||", worst_ann, 1e-6));
    ctx.checks.push(Check::le(6, "ladder commutators", worst_comm, 1e-8));
    ctx.checks.push(Check::le(6, "Gram matrix of Fock states", worst_gram, 1e-6));
    ctx.checks.push(Check::le(7, "quasi-periodicity ||Phi(t+T) - e^{-iET/hbar} Phi(t)||", worst_qp, 1e-6));
    ctx.checks.push(Check::ge(8, "min eigenvalue of Delta2 - (i hbar/2) J", min_margin, -1e-12));
    ctx.checks.push(Check::le(8, "vacuum saturation s_pp s_xx - s_xp^2 - hbar^2/4", worst_sat, 1e-10));
    let m = json!({ "per_hbar": per_hbar });
    write_json(&ctx.out.join("tcs.json"), &m)?;
    ctx.metrics.insert("tcs".into(), m);
    Ok(())
}

fn stage_spectra(ctx: &mut Ctx) -> Result<()> {
    let g = germ(ctx)?;
    let model = ctx.built.model();
    let mut results = Vec::new();
    let (mut e_err, mut g_err, mut z1_max, mut germ_max, mut dec_max) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for &hbar in &ctx.cfg.hbars() {
        for nu in &ctx.cfg.nu_list {
            let sd = g.state_data(model, nu, hbar)?;
            let mut v = to_json(&sd.phase)?;
            v["hbar"] = json!(hbar);
            if let Some(p) = ctx.built.example() {
                let e = p.quasi_energy(nu, hbar);
                let ga = wrap_two_pi(p.aa_phase(hbar));
                let de = (sd.phase.e - e).abs() / hbar;
                let dg = angle_distance(sd.phase.gamma, ga);
                v["E_closed_form"] = json!(e);
                v["gamma_closed_form"] = json!(ga);
                e_err = e_err.max(de);
                g_err = g_err.max(dg);
                z1_max = z1_max.max(sd.phase.breakdown.z1_term.abs());
                germ_max = germ_max.max(sd.phase.breakdown.germ_term.abs());
            }
            dec_max = dec_max.max(sd.phase.decomposition_residual);
            results.push(v);
        }
    }
    if ctx.built.example().is_some() {
        ctx.checks.push(Check::le(3, "|E_nu - closed form| / hbar", e_err, 1e-6));
        ctx.checks.push(Check::le(4, "gamma vs T omega^2 m xi^2 / hbar (mod 2 pi)", g_err, 1e-6));
        ctx.checks.push(Check::le(4, "Z1 term of gamma", z1_max, 1e-6));
        ctx.checks.push(Check::le(4, "germ term of gamma", germ_max, 1e-6));
    }
    ctx.checks.push(Check::le(4, "gamma + delta = -E T / hbar (mod 2 pi)", dec_max, 1e-8));
    let m = json!({ "results": results });
    write_json(&ctx.out.join("spectra.json"), &m)?;
    ctx.metrics.insert("spectra".into(), m);
    Ok(())
}

fn stage_monodromy(ctx: &mut Ctx) -> Result<()> {
    let red = ctx.built.reduction();
    let opts = ctx.cfg.chain_options();
    let g = Germ::build(&red, &PhasePoint::zeros(1), opts)?;
    let p = g.period_index();
    let mc = &ctx.cfg.monodromy;
    let mut reports = Vec::new();
    let mut worst: f64 = 0.0;
    for (hi, &hbar) in ctx.cfg.hbars().iter().enumerate() {
        for &nu in &mc.nu_list {
            let sd = g.state_data(&red, &[nu], hbar)?;
            let st = sd.state(&g, 0);
            let sig = st.frame.vacuum_sigma()[0];
            let center = st.frame.x[0];
            let grid = SpatialGrid::around(&[center], &[sig], mc.margin, (mc.points - 1) as f64 / (2.0 * mc.margin))?;
            let phi = st.sample_checked(&grid)?;
            let k = GreensKernel::from_variational(
                &red,
                &g.plain.variational,
                g.period(),
                0.0,
                &sd.center(&g, p),
                &sd.center(&g, 0),
                sd.action.s[p] - sd.action.s[0],
                hbar,
            )?;
            let rep = monodromy_residual(&[nu], &phi, &grid, &k, sd.quasi_energy(), g.period())?;
            worst = worst.max(rep.residual);
            let out = crate::monodromy::apply_evolution(&phi, &grid, &k, &grid)?;
            grid.write_csv(&out, &ctx.out.join(format!("monodromy_h{hi}_nu{nu}.csv")))?;
            let mut v = to_json(&rep)?;
            v["hbar"] = json!(hbar);
            v["branch_arg"] = json!(k.branch_arg);
            reports.push(v);
        }
    }
    ctx.checks.push(Check::le(7, "grid monodromy residual on the 1D reduction", worst, 1e-4));
    let id = identity_limit_study(1.0, mc.kernel_hbar)?;
    ctx.checks.push(Check::le(10, "free-particle kernel vs closed form", id.free_kernel_max_error, 1e-10));
    ctx.checks.push(Check::ge(10, "grid convergence order of the short-time kernel", id.grid_order, 2.0));
    ctx.checks.push(Check::ge(10, "reproduction error order in dt", id.dt_order, 0.9));
    let m = json!({ "reduction": to_json(&red)?, "reports": reports, "identity_limit": to_json(&id)? });
    write_json(&ctx.out.join("monodromy.json"), &m)?;
    ctx.metrics.insert("monodromy".into(), m);
    Ok(())
}

fn stage_oracle(ctx: &mut Ctx) -> Result<()> {
    let o = &ctx.cfg.oracle;
    let rep = compare_with_semiclassics(&o.model, &o.hbar, &o.study)?;
    ctx.checks.push(Check::ge(9, "oracle first-moment order alpha", rep.alpha_first, 1.4));
    ctx.checks.push(Check::ge(9, "oracle second-moment order alpha", rep.alpha_second, 1.4));
    let m = to_json(&rep)?;
    write_json(&ctx.out.join("oracle.json"), &m)?;
    ctx.metrics.insert("oracle".into(), m);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_toml_and_rejects_unknown_keys() {
        let c = RunConfig::from_text("hbar = 0.1\nstages = [\"spectra\"]\n[params]\nm = 1.0\n").unwrap();
        assert_eq!(c.hbars(), vec![0.1]);
        assert_eq!(c.resolved_stages(), vec![Stage::Orbit, Stage::Floquet, Stage::Spectra]);
        assert!(matches!(RunConfig::from_text("bogus = 1\n"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_text("[params]\nmass = 1\n"), Err(Error::Config(_))));
        let j = RunConfig::from_text("{\"hbar\": [0.1, 0.2], \"stages\": [\"orbit\"]}").unwrap();
        assert_eq!(j.hbars(), vec![0.1, 0.2]);
    }

    #[test]
    fn validation() {
        let mut c = RunConfig::default();
        assert!(c.validate().is_ok());
        c.stages.clear();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = RunConfig { nu_list: vec![vec![0, 0]], ..RunConfig::default() };
        assert!(c.validate().is_err());
        let c = RunConfig { stages: vec![Stage::Orbit, Stage::Orbit], ..RunConfig::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn round_trip_through_json() {
        let c = RunConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_text(&text).unwrap(), c);
        let t = toml::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_text(&t).unwrap(), c);
    }
}
