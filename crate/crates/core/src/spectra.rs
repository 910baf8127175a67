//! Quasi-energies, dynamic phases and Aharonov–Anandan phases over one period.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::floquet::{period_index, BCoefficients, FloquetMode};
use crate::model::{effective_gradient, effective_value, moment_hessian, variational_hessian, SymbolModel, VariationalKind};
use crate::phase::{skew, skew_real, wrap_two_pi, C64};
use crate::quad::integrate;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuasiEnergyResult {
    pub nu: Vec<usize>,
    #[serde(rename = "E")]
    pub e: f64,
    #[serde(rename = "E_mod")]
    pub e_mod: f64,
    #[serde(rename = "S_T")]
    pub s_t: f64,
    pub omegas: Vec<f64>,
}

/// `E = -S_T / T + hbar sum_k Omega_k (nu_k + 1/2)`, with `E_mod` in `[0, hbar omega)`.
pub fn quasi_energy(s_t: f64, omegas: &[f64], nu: &[usize], hbar: f64, period: f64) -> QuasiEnergyResult {
    let osc: f64 = omegas.iter().zip(nu).map(|(w, &v)| w * (v as f64 + 0.5)).sum();
    let e = -s_t / period + hbar * osc;
    let quantum = hbar * std::f64::consts::TAU / period;
    QuasiEnergyResult { nu: nu.to_vec(), e, e_mod: e.rem_euclid(quantum), s_t, omegas: omegas.to_vec() }
}

/// One period of orbit, correction and germ data, sampled on a uniform grid.
#[derive(Debug, Clone)]
pub struct PeriodData {
    pub times: Vec<f64>,
    pub period: f64,
    pub z0: Vec<DVector<f64>>,
    pub z0_dot: Vec<DVector<f64>>,
    pub z1: Vec<DVector<f64>>,
    /// `H + k V` along `z0`.
    pub energy: Vec<f64>,
    /// `H_zz + k V_zz + k V_ww` along `z0`.
    pub moment_hessian: Vec<DMatrix<f64>>,
    /// Plain modes `a_k(t_j)` and their derivatives, indexed `[k][j]`.
    pub modes: ModeSamples,
    pub modes_dot: ModeSamples,
    pub omegas: Vec<f64>,
    /// Tilde modes and `b_k(t)` for the expanded correction path.
    pub correction: Option<(ModeSamples, Vec<Vec<C64>>)>,
}

/// Mode `k` at sample `j` is `modes[k][j]`.
pub type ModeSamples = Vec<Vec<DVector<C64>>>;

fn truncate<T: Clone>(v: &[T], n: usize) -> Vec<T> {
    v[..n].to_vec()
}

impl PeriodData {
    /// Collects samples on `times[0..=p]` with `times[p] = T`, checking periodicity.
    pub fn from_model(
        model: &dyn SymbolModel,
        times: &[f64],
        z0: &[DVector<f64>],
        z1: &[DVector<f64>],
        modes: &[FloquetMode],
        correction: Option<(&[FloquetMode], &BCoefficients)>,
    ) -> Result<Self> {
        let period = model.period();
        let p = period_index(times, period)?;
        if z0.len() <= p || z1.len() <= p || modes.iter().any(|m| m.samples.len() <= p) {
            return Err(Error::Contract("samples must cover one full period".into()));
        }
        let n = p + 1;
        let scale = z0.iter().map(|z| z.amax()).fold(1.0, f64::max);
        if (&z0[p] - &z0[0]).amax() > 1e-6 * scale {
            return Err(Error::Contract("Z0 is not periodic".into()));
        }
        let z1scale = z1.iter().map(|z| z.amax()).fold(1.0, f64::max);
        if (&z1[p] - &z1[0]).amax() > 1e-6 * z1scale {
            return Err(Error::Contract("Z1 is not periodic".into()));
        }
        for m in modes {
            if (m.reduced(p, period) - m.reduced(0, 0.0)).camax() > 1e-6 * m.a0.camax().max(1.0) {
                return Err(Error::Contract("germ modes are not Floquet solutions".into()));
            }
        }
        let ts = truncate(times, n);
        let z0v = truncate(z0, n);
        let j = crate::phase::symplectic_unit(model.dim());
        let z0_dot: Vec<DVector<f64>> = ts.iter().zip(&z0v).map(|(&t, z)| &j * effective_gradient(model, z, t)).collect();
        let jc = j.map(|r| C64::new(r, 0.0));
        let modes_dot = modes
            .iter()
            .map(|m| {
                ts.iter()
                    .zip(&z0v)
                    .zip(&m.samples)
                    .map(|((&t, z), a)| &jc * variational_hessian(model, z, t, VariationalKind::Plain).map(|r| C64::new(r, 0.0)) * a)
                    .collect()
            })
            .collect();
        let correction = correction.map(|(tm, b)| {
            (tm.iter().map(|m| truncate(&m.samples, n)).collect(), b.b.iter().map(|bk| truncate(bk, n)).collect())
        });
        Ok(Self {
            energy: ts.iter().zip(&z0v).map(|(&t, z)| effective_value(model, z, t)).collect(),
            moment_hessian: ts.iter().zip(&z0v).map(|(&t, z)| moment_hessian(model, z, t)).collect(),
            times: ts,
            period,
            z0_dot,
            z1: truncate(z1, n),
            z0: z0v,
            modes: modes.iter().map(|m| truncate(&m.samples, n)).collect(),
            modes_dot,
            omegas: modes.iter().map(|m| m.omega).collect(),
            correction,
        })
    }

    fn step(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    /// `Sp[M Delta2^nu] = (hbar/2) sum_k (2 nu_k + 1) a_k^+ M a_k` at sample `j`.
    fn moment_trace(&self, j: usize, nu: &[usize], hbar: f64) -> f64 {
        let m = self.moment_hessian[j].map(|r| C64::new(r, 0.0));
        let s: f64 = self
            .modes
            .iter()
            .zip(nu)
            .map(|(a, &v)| (2.0 * v as f64 + 1.0) * (a[j].adjoint() * &m * &a[j])[(0, 0)].re)
            .sum();
        s * hbar / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DynamicPhase {
    /// `-(1/hbar) int (H + k V)`.
    pub mean_term: f64,
    /// `-(1/2 hbar) int Sp[M Delta2^nu]`.
    pub moment_term: f64,
    /// First-order shift of the mean from `Z1`, `int {Z0', Z1}`.
    pub z1_term: f64,
    pub total: f64,
}

/// Unreduced dynamic phase `-(1/hbar) int <H + k V>` on the state `nu`, linear in `Z1`.
pub fn dynamic_phase(data: &PeriodData, nu: &[usize], hbar: f64) -> Result<DynamicPhase> {
    check_nu(data, nu)?;
    let h = data.step();
    let mean_term = -integrate(&data.energy, h)? / hbar;
    let tr: Vec<f64> = (0..data.times.len()).map(|j| data.moment_trace(j, nu, hbar)).collect();
    let moment_term = -integrate(&tr, h)? / (2.0 * hbar);
    let z1_term = z1_integral(data)?;
    Ok(DynamicPhase { mean_term, moment_term, z1_term, total: mean_term + moment_term + z1_term })
}

fn check_nu(data: &PeriodData, nu: &[usize]) -> Result<()> {
    if nu.len() != data.modes.len() {
        return Err(Error::Contract(format!("multi-index has {} entries for {} modes", nu.len(), data.modes.len())));
    }
    Ok(())
}

fn z1_integral(data: &PeriodData) -> Result<f64> {
    let g: Vec<f64> = data.z0_dot.iter().zip(&data.z1).map(|(d, z)| skew_real(d, z)).collect();
    integrate(&g, data.step())
}

/// `int_0^T {d/dt a~, a~*}` with `a~ = exp(-i Omega t) a`, from samples of `a` and `a'`.
pub fn germ_integral(times: &[f64], a: &[DVector<C64>], a_dot: &[DVector<C64>], omega: f64) -> Result<C64> {
    if a.len() != times.len() || a_dot.len() != times.len() {
        return Err(Error::Contract("germ samples must share the time grid".into()));
    }
    let g: Vec<C64> = a
        .iter()
        .zip(a_dot)
        .map(|(a, d)| skew(&(d - a * C64::new(0.0, omega)), &a.map(|c| c.conj())))
        .collect();
    integrate(&g, times[1] - times[0])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseBreakdown {
    /// `(1/hbar) int <P0, X0'>`.
    pub orbit_term: f64,
    /// `-int {Z0', Z1}`.
    pub z1_term: f64,
    /// `-(1/2) sum_k (nu_k + 1/2) int {d/dt a~_k, a~_k*}`.
    pub germ_term: f64,
    /// Largest imaginary part of the germ integrals.
    pub germ_imag_residue: f64,
    pub full_correction: bool,
}

/// Unreduced geometric phase and its three contributions.
pub fn aa_phase(data: &PeriodData, nu: &[usize], hbar: f64, full_correction: bool) -> Result<(f64, PhaseBreakdown)> {
    check_nu(data, nu)?;
    let h = data.step();
    let n = data.z0[0].len() / 2;
    let px: Vec<f64> = data.z0.iter().zip(&data.z0_dot).map(|(z, d)| (0..n).map(|i| z[i] * d[n + i]).sum()).collect();
    let orbit_term = integrate(&px, h)? / hbar;
    let z1_term = if full_correction {
        let (tm, b) = data
            .correction
            .as_ref()
            .ok_or_else(|| Error::Contract("full correction needs tilde modes and b coefficients".into()))?;
        // Z1 = 2 Re sum_k b_k a~_k, so {Z0', Z1} = 2 Re sum_k b_k {Z0', a~_k}.
        let g: Vec<f64> = (0..data.times.len())
            .map(|j| {
                let d = data.z0_dot[j].map(|r| C64::new(r, 0.0));
                tm.iter().zip(b).map(|(a, bk)| 2.0 * (bk[j] * skew(&d, &a[j])).re).sum()
            })
            .collect();
        -integrate(&g, h)?
    } else {
        -z1_integral(data)?
    };
    let mut germ_term = 0.0;
    let mut residue = 0.0f64;
    for ((a, d), (&w, &v)) in data.modes.iter().zip(&data.modes_dot).zip(data.omegas.iter().zip(nu)) {
        let g = germ_integral(&data.times, a, d, w)?;
        residue = residue.max(g.im.abs());
        germ_term -= 0.5 * (v as f64 + 0.5) * g.re;
    }
    let b = PhaseBreakdown { orbit_term, z1_term, germ_term, germ_imag_residue: residue, full_correction };
    Ok((orbit_term + z1_term + germ_term, b))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseResult {
    pub nu: Vec<usize>,
    #[serde(rename = "E")]
    pub e: f64,
    #[serde(rename = "E_mod")]
    pub e_mod: f64,
    #[serde(rename = "S_T")]
    pub s_t: f64,
    pub omegas: Vec<f64>,
    pub gamma: f64,
    pub delta: f64,
    pub total: f64,
    /// `gamma + delta - total` folded into `(-pi, pi]`.
    pub decomposition_residual: f64,
    pub breakdown: PhaseBreakdown,
    pub dynamic: DynamicPhase,
}

/// Quasi-energy, geometric and dynamic phases for the state `nu`, reduced to `[0, 2 pi)`.
pub fn phases(data: &PeriodData, s_t: f64, nu: &[usize], hbar: f64, full_correction: bool) -> Result<PhaseResult> {
    let q = quasi_energy(s_t, &data.omegas, nu, hbar, data.period);
    let (g, breakdown) = aa_phase(data, nu, hbar, full_correction)?;
    let dynamic = dynamic_phase(data, nu, hbar)?;
    let total = -q.e * data.period / hbar;
    let res = crate::phase::angle_distance(wrap_two_pi(g + dynamic.total), wrap_two_pi(total));
    Ok(PhaseResult {
        nu: q.nu,
        e: q.e,
        e_mod: q.e_mod,
        s_t,
        omegas: q.omegas,
        gamma: wrap_two_pi(g),
        delta: wrap_two_pi(dynamic.total),
        total: wrap_two_pi(total),
        decomposition_residual: res,
        breakdown,
        dynamic,
    })
}
