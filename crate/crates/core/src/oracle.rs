//! Split-step solver for the one-dimensional nonlocal equation
//! `i hbar psi_t = [p^2/2m + U(x,t) + kappa int K(x-y)|psi(y)|^2 dy] psi`,
//! and a convergence study against the Hamilton–Ehrenfest moments.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::Serialize;

use crate::ehrenfest::{integrate_cauchy, integrate_z0, CauchySolution};
use crate::error::{Error, Result};
use crate::model::TrapModel1D;
use crate::monodromy::extract_moments;
use crate::phase::{PhasePoint, C64};
use crate::wavepacket::{vacuum_state, Axis, FrameSnapshot, SpatialGrid};

#[derive(Debug, Clone)]
pub struct OracleConfig {
    pub grid: SpatialGrid,
    pub dt: f64,
    pub hbar: f64,
    pub model: TrapModel1D,
}

impl OracleConfig {
    /// Validates the grid and the step against `dt <= 0.5 min(hbar / max|U|, m dx^2 / hbar)`.
    pub fn new(grid: SpatialGrid, dt: f64, hbar: f64, model: TrapModel1D, t_final: f64) -> Result<Self> {
        model.validate()?;
        if grid.dim() != 1 {
            return Err(Error::Config("the oracle is one-dimensional".into()));
        }
        if !(hbar > 0.0 && dt > 0.0) {
            return Err(Error::Config("hbar and dt must be positive".into()));
        }
        let limit = Self::step_limit(&grid, hbar, &model, t_final);
        if dt > limit {
            return Err(Error::Config(format!("time step {dt:e} exceeds the stability bound {limit:e}")));
        }
        Ok(Self { grid, dt, hbar, model })
    }

    fn step_limit(grid: &SpatialGrid, hbar: f64, model: &TrapModel1D, t_final: f64) -> f64 {
        let dx = grid.axes[0].spacing();
        let samples = 64;
        let mut umax: f64 = 0.0;
        for j in 0..=samples {
            let t = t_final * j as f64 / samples as f64;
            for k in 0..grid.len() {
                umax = umax.max(model.potential(grid.point(k)[0], t).abs());
            }
        }
        0.5 * (hbar / umax.max(f64::MIN_POSITIVE)).min(model.m * dx * dx / hbar)
    }

    /// Grid of `points` nodes covering `excursion + margin * sigma` on both sides of zero,
    /// with the largest step under the bound that divides `t_final` evenly.
    pub fn auto(model: TrapModel1D, hbar: f64, excursion: f64, margin: f64, points: usize, t_final: f64) -> Result<Self> {
        model.validate()?;
        let sigma = (hbar / (2.0 * model.m * model.omega_s())).sqrt();
        let half = excursion + margin * sigma;
        let grid = SpatialGrid::new(vec![Axis { min: -half, max: half, points }])?;
        let limit = Self::step_limit(&grid, hbar, &model, t_final);
        let steps = (t_final / limit).ceil().max(1.0);
        Self::new(grid, t_final / steps, hbar, model, t_final)
    }
}

/// Precomputed transforms for one configuration.
pub struct Propagator {
    cfg: OracleConfig,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    pad_fft: Arc<dyn Fft<f64>>,
    pad_ifft: Arc<dyn Fft<f64>>,
    half_kinetic: Vec<C64>,
    kernel_hat: Vec<C64>,
}

/// A stored state.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub t: f64,
    pub psi: Vec<C64>,
}

impl Propagator {
    pub fn new(cfg: OracleConfig) -> Self {
        let n = cfg.grid.len();
        let dx = cfg.grid.axes[0].spacing();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(n);
        let ifft = planner.plan_fft_inverse(n);
        let pad_fft = planner.plan_fft_forward(2 * n);
        let pad_ifft = planner.plan_fft_inverse(2 * n);
        let len = n as f64 * dx;
        let half_kinetic = (0..n)
            .map(|j| {
                let m = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
                let k = std::f64::consts::TAU * m / len;
                C64::from_polar(1.0, -cfg.hbar * k * k / (2.0 * cfg.model.m) * cfg.dt / 2.0)
            })
            .collect();
        // Linear (not periodic) convolution: kernel offsets -(n-1)..(n-1) in a 2n buffer.
        let mut kernel_hat: Vec<C64> = (0..2 * n)
            .map(|j| {
                let off = if j < n { j as f64 } else { j as f64 - 2.0 * n as f64 };
                if j == n {
                    C64::new(0.0, 0.0)
                } else {
                    C64::new(cfg.model.kernel_u(off * dx) * dx, 0.0)
                }
            })
            .collect();
        pad_fft.process(&mut kernel_hat);
        Self { cfg, fft, ifft, pad_fft, pad_ifft, half_kinetic, kernel_hat }
    }

    pub fn config(&self) -> &OracleConfig {
        &self.cfg
    }

    /// `int K(x - y) rho(y) dy` on the grid.
    pub fn convolve(&self, rho: &[f64]) -> Vec<f64> {
        self.convolve_raw(rho).iter().map(|c| c.re).collect()
    }

    /// Largest imaginary part left by the transform round trip, relative to the largest real part.
    pub fn convolution_imag_residue(&self, rho: &[f64]) -> f64 {
        let c = self.convolve_raw(rho);
        let re = c.iter().map(|v| v.re.abs()).fold(0.0, f64::max);
        c.iter().map(|v| v.im.abs()).fold(0.0, f64::max) / re.max(f64::MIN_POSITIVE)
    }

    fn convolve_raw(&self, rho: &[f64]) -> Vec<C64> {
        let n = rho.len();
        let mut buf: Vec<C64> = rho.iter().map(|&r| C64::new(r, 0.0)).chain(std::iter::repeat_n(C64::new(0.0, 0.0), n)).collect();
        self.pad_fft.process(&mut buf);
        for (b, k) in buf.iter_mut().zip(&self.kernel_hat) {
            *b *= k;
        }
        self.pad_ifft.process(&mut buf);
        buf[..n].iter().map(|c| c / (2 * n) as f64).collect()
    }

    /// Effective potential `W = U + kappa K * |psi|^2`.
    pub fn effective_potential(&self, psi: &[C64], t: f64) -> Vec<f64> {
        let rho: Vec<f64> = psi.iter().map(|v| v.norm_sqr()).collect();
        let conv = self.convolve(&rho);
        let m = &self.cfg.model;
        (0..psi.len()).map(|k| m.potential(self.cfg.grid.axes[0].coord(k), t) + m.kappa_tilde * conv[k]).collect()
    }

    fn kinetic_half(&self, psi: &mut [C64]) {
        let n = psi.len() as f64;
        self.fft.process(psi);
        for (v, k) in psi.iter_mut().zip(&self.half_kinetic) {
            *v *= k / n;
        }
        self.ifft.process(psi);
    }

    /// One Strang step from `t` to `t + dt`, or to `t - dt` when running backwards.
    fn step(&self, psi: &mut [C64], t: f64, forward: bool) {
        let dt = if forward { self.cfg.dt } else { -self.cfg.dt };
        if forward {
            self.kinetic_half(psi);
        } else {
            self.kinetic_half_conj(psi);
        }
        let w = self.effective_potential(psi, t + dt / 2.0);
        for (v, wk) in psi.iter_mut().zip(&w) {
            *v *= C64::from_polar(1.0, -wk * dt / self.cfg.hbar);
        }
        if forward {
            self.kinetic_half(psi);
        } else {
            self.kinetic_half_conj(psi);
        }
    }

    fn kinetic_half_conj(&self, psi: &mut [C64]) {
        let n = psi.len() as f64;
        self.fft.process(psi);
        for (v, k) in psi.iter_mut().zip(&self.half_kinetic) {
            *v *= k.conj() / n;
        }
        self.ifft.process(psi);
    }

    /// Evolves from `t0` and stores the state every `every` steps, `steps` steps in total.
    pub fn evolve(&self, psi0: &[C64], t0: f64, steps: usize, every: usize, forward: bool) -> Result<Vec<Snapshot>> {
        let grid = &self.cfg.grid;
        if psi0.len() != grid.len() {
            return Err(Error::Contract("initial state does not match the grid".into()));
        }
        let edge = grid.edge_ratio(psi0);
        if edge > 1e-10 {
            return Err(Error::Truncation { edge });
        }
        let n0 = grid.norm(psi0);
        let mut psi = psi0.to_vec();
        let mut out = vec![Snapshot { t: t0, psi: psi.clone() }];
        let sign = if forward { 1.0 } else { -1.0 };
        for s in 0..steps {
            let t = t0 + sign * s as f64 * self.cfg.dt;
            self.step(&mut psi, t, forward);
            if (s + 1) % every.max(1) == 0 || s + 1 == steps {
                let drift = (grid.norm(&psi) - n0).abs() / n0;
                if drift > 1e-8 {
                    return Err(Error::NormDrift { drift });
                }
                out.push(Snapshot { t: t0 + sign * (s + 1) as f64 * self.cfg.dt, psi: psi.clone() });
            }
        }
        Ok(out)
    }
}

/// Vacuum packet at `(p0, x0)` with `Q = i m omega_s`.
pub fn initial_packet(model: &TrapModel1D, p0: f64, x0: f64, hbar: f64, grid: &SpatialGrid) -> Vec<C64> {
    let g = (model.m * model.omega_s()).sqrt();
    let c = DMatrix::from_element(1, 1, C64::new(0.0, -1.0 / g));
    let snap = FrameSnapshot {
        t: 0.0,
        hbar,
        p: DVector::from_element(1, p0),
        x: DVector::from_element(1, x0),
        b: DMatrix::from_element(1, 1, C64::new(g, 0.0)),
        q: DMatrix::from_element(1, 1, C64::new(0.0, g * g)),
        sqrt_det_c: c[(0, 0)].sqrt(),
        c,
        s: 0.0,
    };
    vacuum_state(&snap).sample(grid)
}

/// Exact second moments of [`initial_packet`], `diag(hbar g^2 / 2, hbar / (2 g^2))` with `g^2 = m omega_s`.
pub fn initial_moments(model: &TrapModel1D, hbar: f64) -> DMatrix<f64> {
    let g2 = model.m * model.omega_s();
    DMatrix::from_diagonal(&DVector::from_vec(vec![hbar * g2 / 2.0, hbar / (2.0 * g2)]))
}

/// Largest first- and second-moment deviations from the Cauchy solution, and the
/// smallest overlap with the Gaussian that has the predicted moments.
pub fn moment_errors(snapshots: &[Snapshot], grid: &SpatialGrid, cauchy: &CauchySolution) -> Result<(f64, f64, f64)> {
    let hbar = cauchy.hbar;
    let (mut e1, mut e2, mut ov) = (0.0f64, 0.0f64, 1.0f64);
    for s in snapshots {
        let mo = extract_moments(&s.psi, hbar, grid)?;
        let mean = cauchy.mean(s.t)?;
        let d2 = cauchy.delta2(s.t)?;
        e1 = e1.max((mo.mean_vector() - &mean).amax());
        e2 = e2.max((mo.delta2_matrix() - &d2).amax());
        // Pure Gaussian with these moments: Q = (s_xp + i hbar/2) / s_xx.
        let q = C64::new(d2[(0, 1)], hbar / 2.0) / d2[(1, 1)];
        let g: Vec<C64> = grid
            .points()
            .iter()
            .map(|x| {
                let dx = x[0] - mean[1];
                ((C64::new(mean[0] * dx, 0.0) + q * (0.5 * dx * dx)) * C64::new(0.0, 1.0 / hbar)).exp()
            })
            .collect();
        let ng = grid.norm(&g);
        let o = grid.inner(&g, &s.psi).norm() / (ng * grid.norm(&s.psi));
        ov = ov.min(o);
    }
    Ok((e1, e2, ov))
}

/// Least-squares slope of `log e` against `log hbar`.
pub fn fit_order(hbars: &[f64], errors: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = hbars.iter().zip(errors).map(|(h, e)| (h.ln(), e.max(f64::MIN_POSITIVE).ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaxErrors {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub min_overlap: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub hbar: Vec<f64>,
    pub alpha_first: f64,
    pub alpha_second: f64,
    pub max_errors: MaxErrors,
    pub steps: Vec<usize>,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyOptions {
    pub p0: f64,
    pub x0: f64,
    /// Lower bound on the half-width before the margin; the classical excursion is used if larger.
    pub excursion: f64,
    pub margin: f64,
    pub points: usize,
    pub t_final: f64,
    pub snapshots: usize,
    pub ode_tol: f64,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self { p0: 0.0, x0: 0.5, excursion: 0.0, margin: 12.0, points: 2048, t_final: std::f64::consts::TAU, snapshots: 32, ode_tol: 1e-11 }
    }
}

/// Runs the oracle for every `hbar` and fits the error orders.
pub fn compare_with_semiclassics(model: &TrapModel1D, hbars: &[f64], opts: &StudyOptions) -> Result<ComparisonReport> {
    if hbars.len() < 2 {
        return Err(Error::Config("the convergence study needs at least two hbar values".into()));
    }
    let mut report = ComparisonReport {
        hbar: hbars.to_vec(),
        alpha_first: 0.0,
        alpha_second: 0.0,
        max_errors: MaxErrors { first: vec![], second: vec![], min_overlap: vec![] },
        steps: vec![],
        passed: false,
    };
    let start = PhasePoint::from_slices(&[opts.p0], &[opts.x0])?;
    let classical = integrate_z0(model, &start, (0.0, opts.t_final), opts.ode_tol)?;
    let excursion = (0..=256)
        .map(|j| classical.state(opts.t_final * j as f64 / 256.0).map(|z| z[1].abs()))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(opts.excursion, f64::max);
    let runs: Vec<(f64, f64, f64, usize)> = hbars
        .par_iter()
        .map(|&hbar| {
            let cfg = OracleConfig::auto(*model, hbar, excursion, opts.margin, opts.points, opts.t_final)?;
            let steps = (opts.t_final / cfg.dt).round() as usize;
            let psi0 = initial_packet(model, opts.p0, opts.x0, hbar, &cfg.grid);
            let d0 = initial_moments(model, hbar);
            let grid = cfg.grid.clone();
            let prop = Propagator::new(cfg);
            let snaps = prop.evolve(&psi0, 0.0, steps, (steps / opts.snapshots.max(1)).max(1), true)?;
            let cauchy = integrate_cauchy(model, &start, &d0, hbar, opts.t_final, opts.ode_tol)?;
            let (e1, e2, ov) = moment_errors(&snaps, &grid, &cauchy)?;
            Ok((e1, e2, ov, steps))
        })
        .collect::<Result<_>>()?;
    for (e1, e2, ov, steps) in runs {
        report.max_errors.first.push(e1);
        report.max_errors.second.push(e2);
        report.max_errors.min_overlap.push(ov);
        report.steps.push(steps);
    }
    report.alpha_first = fit_order(hbars, &report.max_errors.first);
    report.alpha_second = fit_order(hbars, &report.max_errors.second);
    report.passed = report.alpha_first >= 1.4 && report.alpha_second >= 1.4;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn harmonic(kappa: f64) -> TrapModel1D {
        TrapModel1D { m: 1.0, k: 4.0, a3: 0.0, a4: 0.0, drive: 0.0, omega: 1.0, v0: 1.0, gamma: 1.0, kappa_tilde: kappa }
    }

    #[test]
    fn convolution_matches_direct_sum() {
        let cfg = OracleConfig::auto(harmonic(1.0), 0.1, 0.5, 12.0, 128, 0.1).unwrap();
        let grid = cfg.grid.clone();
        let p = Propagator::new(cfg);
        let rho: Vec<f64> = grid.points().iter().map(|x| (-(x[0] - 0.3).powi(2) * 5.0).exp()).collect();
        let c = p.convolve(&rho);
        let dx = grid.axes[0].spacing();
        for k in [0, 17, 64, 127] {
            let xk = grid.point(k)[0];
            let direct: f64 = (0..grid.len()).map(|j| harmonic(1.0).kernel_u(xk - grid.point(j)[0]) * rho[j] * dx).sum();
            assert!((c[k] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_large_steps() {
        let grid = SpatialGrid::new(vec![Axis { min: -2.0, max: 2.0, points: 256 }]).unwrap();
        assert!(matches!(OracleConfig::new(grid, 0.1, 0.1, harmonic(0.0), 1.0), Err(Error::Config(_))));
    }

    #[test]
    fn quadratic_means_follow_classical_orbit() {
        let model = harmonic(0.0);
        let hbar = 0.05;
        let cfg = OracleConfig::auto(model, hbar, 0.6, 12.0, 512, 1.0).unwrap();
        let steps = (1.0 / cfg.dt).round() as usize;
        let psi0 = initial_packet(&model, 0.0, 0.5, hbar, &cfg.grid);
        let grid = cfg.grid.clone();
        let prop = Propagator::new(cfg);
        let snaps = prop.evolve(&psi0, 0.0, steps, steps / 4, true).unwrap();
        let w = 2.0f64;
        for s in &snaps {
            let mo = extract_moments(&s.psi, hbar, &grid).unwrap();
            assert!((mo.mean[1] - 0.5 * (w * s.t).cos()).abs() < 1e-6, "{} {}", s.t, mo.mean[1]);
        }
        // Time reversal.
        let last = snaps.last().unwrap();
        let back = prop.evolve(&last.psi, last.t, steps, steps, false).unwrap();
        let diff: Vec<C64> = back.last().unwrap().psi.iter().zip(&psi0).map(|(a, b)| a - b).collect();
        assert!(grid.norm(&diff) < 1e-6);
    }

    #[test]
    fn nonlocal_norm_and_real_potential() {
        let model = harmonic(1.0);
        let hbar = 0.1;
        let cfg = OracleConfig::auto(model, hbar, 0.6, 12.0, 256, 0.5).unwrap();
        let steps = (0.5 / cfg.dt).round() as usize;
        let psi0 = initial_packet(&model, 0.2, 0.3, hbar, &cfg.grid);
        let grid = cfg.grid.clone();
        let prop = Propagator::new(cfg);
        let snaps = prop.evolve(&psi0, 0.0, steps, steps, true).unwrap();
        let n = grid.norm(&snaps.last().unwrap().psi);
        assert!((n * n - grid.norm(&psi0).powi(2)).abs() < 1e-10);
    }

    #[test]
    fn order_fit() {
        let h = [0.1, 0.03, 0.01];
        let e: Vec<f64> = h.iter().map(|x: &f64| 2.0 * x.powf(1.5)).collect();
        assert!((fit_order(&h, &e) - 1.5).abs() < 1e-12);
    }
}
