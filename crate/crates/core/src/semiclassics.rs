//! The full semiclassical chain for one model: periodic orbit, both variational
//! systems, the germ frame, and per-state moments, corrections and phases.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ehrenfest::{drive_term_f, find_periodic_orbit, integrate_z0, integrate_z1, Orbit, PeriodicOrbit};
use crate::error::{Error, Result};
use crate::floquet::{analyze, periodic_b_coefficients, BCoefficients, FloquetOptions, FloquetSystem};
use crate::model::{SymbolModel, VariationalKind};
use crate::phase::{PhasePoint, C64};
use crate::spectra::{phases, PeriodData, PhaseResult};
use crate::wavepacket::{action_s, assemble_frame, fock_state, ActionProfile, FrameSnapshot, GermFrame, TCState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainOptions {
    pub samples_per_period: usize,
    pub periods: usize,
    pub ode_tol: f64,
    pub orbit_tol: f64,
    pub full_correction: bool,
    pub floquet: FloquetOptions,
}

impl Default for ChainOptions {
    fn default() -> Self {
        Self { samples_per_period: 2000, periods: 2, ode_tol: 1e-13, orbit_tol: 1e-10, full_correction: false, floquet: FloquetOptions::default() }
    }
}

impl ChainOptions {
    pub fn validate(&self) -> Result<()> {
        if self.samples_per_period < 8 || self.periods < 1 {
            return Err(Error::Config("need at least 8 samples per period and one period".into()));
        }
        if !(self.ode_tol > 0.0 && self.orbit_tol > 0.0) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// The `hbar`-independent part: orbit, Floquet systems and germ frame.
#[derive(Debug, Clone)]
pub struct Germ {
    pub periodic: PeriodicOrbit,
    pub orbit: Orbit,
    pub times: Vec<f64>,
    pub z0: Vec<DVector<f64>>,
    pub plain: FloquetSystem,
    pub tilde: FloquetSystem,
    pub frame: GermFrame,
    pub options: ChainOptions,
}

impl Germ {
    pub fn build(model: &dyn SymbolModel, guess: &PhasePoint, options: ChainOptions) -> Result<Self> {
        options.validate()?;
        let period = model.period();
        let periodic = find_periodic_orbit(model, guess, options.orbit_tol)?;
        let t_end = period * options.periods as f64;
        let orbit = integrate_z0(model, &periodic.point(), (0.0, t_end), options.ode_tol)?;
        let n = options.samples_per_period;
        let times: Vec<f64> = (0..=n * options.periods).map(|j| period * j as f64 / n as f64).collect();
        let z0 = times.iter().map(|&t| orbit.state(t)).collect::<Result<Vec<_>>>()?;
        let plain = analyze(model, &orbit, VariationalKind::Plain, &times, options.ode_tol, &options.floquet)?;
        let report = crate::floquet::classify_stability(&plain.monodromy, options.floquet.stability_tol);
        if !report.stable {
            return Err(Error::Instability {
                multipliers: report.multipliers.iter().map(|m| C64::new(m[0], m[1])).collect(),
            });
        }
        let tilde = analyze(model, &orbit, VariationalKind::Tilde, &times, options.ode_tol, &options.floquet)?;
        let frame = assemble_frame(&plain.modes, &times)?;
        Ok(Self { periodic, orbit, times, z0, plain, tilde, frame, options })
    }

    pub fn dim(&self) -> usize {
        self.frame.dim()
    }

    pub fn period(&self) -> f64 {
        self.plain.period
    }

    pub fn period_index(&self) -> usize {
        self.plain.period_index()
    }

    /// Moments, action, first correction and phases of the state `nu`.
    pub fn state_data(&self, model: &dyn SymbolModel, nu: &[usize], hbar: f64) -> Result<StateData> {
        if nu.len() != self.dim() {
            return Err(Error::Contract(format!("multi-index needs {} entries", self.dim())));
        }
        if !(hbar > 0.0) {
            return Err(Error::Config("hbar must be positive".into()));
        }
        let delta2: Vec<DMatrix<f64>> = (0..self.times.len()).map(|j| self.frame.delta2(j, nu, hbar)).collect();
        let action = action_s(model, &self.times, &self.z0, &delta2)?;
        let drive: Vec<DVector<f64>> = self
            .times
            .iter()
            .zip(self.z0.iter().zip(&delta2))
            .map(|(&t, (z, d))| drive_term_f(model, z, d, t, hbar))
            .collect();
        let b = periodic_b_coefficients(&drive, &self.tilde.modes, &self.times, self.period(), &self.options.floquet)?;
        let z1 = integrate_z1(&self.tilde.modes, &b.b)?;
        let data = PeriodData::from_model(model, &self.times, &self.z0, &z1, &self.plain.modes, Some((&self.tilde.modes, &b)))?;
        let s_t = action.s[self.period_index()];
        let phase = phases(&data, s_t, nu, hbar, self.options.full_correction)?;
        Ok(StateData { nu: nu.to_vec(), hbar, delta2, action, b, z1, phase })
    }
}

/// Per-state quantities for one `hbar`.
#[derive(Debug, Clone)]
pub struct StateData {
    pub nu: Vec<usize>,
    pub hbar: f64,
    pub delta2: Vec<DMatrix<f64>>,
    pub action: ActionProfile,
    pub b: BCoefficients,
    pub z1: Vec<DVector<f64>>,
    pub phase: PhaseResult,
}

impl StateData {
    /// Mean `Z0 + hbar Z1` at sample `j`.
    pub fn center(&self, germ: &Germ, j: usize) -> DVector<f64> {
        &germ.z0[j] + &self.z1[j] * self.hbar
    }

    pub fn snapshot(&self, germ: &Germ, j: usize) -> FrameSnapshot {
        FrameSnapshot::from_frame(&germ.frame, j, &self.center(germ, j), self.action.s[j], self.hbar)
    }

    /// `Phi_nu(t_j)`.
    pub fn state(&self, germ: &Germ, j: usize) -> TCState {
        fock_state(&self.snapshot(germ, j), &self.nu)
    }

    pub fn quasi_energy(&self) -> f64 {
        self.phase.e
    }
}
