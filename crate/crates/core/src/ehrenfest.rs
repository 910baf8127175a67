//! Hamilton–Ehrenfest dynamics: the mean-field orbit, periodic-orbit shooting,
//! the variational flows, second moments and the first correction drive.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{effective_gradient, trace_gradient, variational_hessian, SymbolModel, VariationalKind};
use crate::ode::{dopri5, DenseSolution, OdeOptions};
use crate::phase::{symplectic_defect, symplectic_unit, uncertainty_matrix, PhasePoint};

/// Right-hand side `J grad h` with `J = [[0,-I],[I,0]]`, written without forming `J`.
fn apply_j(g: &DVector<f64>) -> DVector<f64> {
    let n = g.len() / 2;
    DVector::from_fn(2 * n, |i, _| if i < n { -g[n + i] } else { g[i - n] })
}

/// Dense mean-field orbit `z0(t)`.
#[derive(Debug, Clone)]
pub struct Orbit {
    sol: DenseSolution,
}

impl Orbit {
    pub fn dim(&self) -> usize {
        self.sol.dim() / 2
    }
    pub fn start(&self) -> f64 {
        self.sol.start()
    }
    pub fn end(&self) -> f64 {
        self.sol.end()
    }
    pub fn state(&self, t: f64) -> Result<DVector<f64>> {
        Ok(DVector::from_vec(self.sol.eval(t)?))
    }
    pub fn point(&self, t: f64) -> Result<PhasePoint> {
        Ok(PhasePoint::from_vector(&self.state(t)?))
    }
    /// `dz0/dt` from the vector field, not from differentiating the interpolant.
    pub fn velocity(&self, model: &dyn SymbolModel, t: f64) -> Result<DVector<f64>> {
        let z = self.state(t)?;
        Ok(apply_j(&effective_gradient(model, &z, t)))
    }
}

fn check_dims(model: &dyn SymbolModel, z: &PhasePoint) -> Result<()> {
    if z.dim() != model.dim() {
        return Err(Error::Contract(format!(
            "initial point has dimension {} but the model has {}",
            z.dim(),
            model.dim()
        )));
    }
    Ok(())
}

/// Integrates `z0' = J d/dz [H + k V]|_{w=z}` over `[t0, t1]`.
pub fn integrate_z0(model: &dyn SymbolModel, z_init: &PhasePoint, t_span: (f64, f64), tol: f64) -> Result<Orbit> {
    check_dims(model, z_init)?;
    if !(tol > 0.0) {
        return Err(Error::Contract("tolerance must be positive".into()));
    }
    let rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
        let z = DVector::from_column_slice(y);
        dy.copy_from_slice(apply_j(&effective_gradient(model, &z, t)).as_slice());
    };
    let sol = dopri5(rhs, t_span.0, z_init.to_vector().as_slice(), t_span.1, &OdeOptions::with_tol(tol))?;
    Ok(Orbit { sol })
}

/// Flow map over `[t0, t0 + dt]` together with its Jacobian.
pub fn flow_with_jacobian(
    model: &dyn SymbolModel,
    z: &DVector<f64>,
    t0: f64,
    dt: f64,
    tol: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let d = z.len();
    let mut y0 = z.as_slice().to_vec();
    y0.extend(DMatrix::<f64>::identity(d, d).as_slice());
    let rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
        let zz = DVector::from_column_slice(&y[..d]);
        let a = DMatrix::from_column_slice(d, d, &y[d..]);
        dy[..d].copy_from_slice(apply_j(&effective_gradient(model, &zz, t)).as_slice());
        let h = variational_hessian(model, &zz, t, VariationalKind::Tilde);
        let da = symplectic_unit(d / 2) * h * a;
        dy[d..].copy_from_slice(da.as_slice());
    };
    let sol = dopri5(rhs, t0, &y0, t0 + dt, &OdeOptions::with_tol(tol))?;
    let y = sol.final_state();
    Ok((DVector::from_column_slice(&y[..d]), DMatrix::from_column_slice(d, d, &y[d..])))
}

#[derive(Debug, Clone, Serialize)]
pub struct PeriodicOrbit {
    pub z: Vec<f64>,
    pub residual_history: Vec<f64>,
    pub iterations: usize,
}

impl PeriodicOrbit {
    pub fn point(&self) -> PhasePoint {
        PhasePoint::from_vector(&DVector::from_column_slice(&self.z))
    }
    pub fn residual(&self) -> f64 {
        *self.residual_history.last().unwrap_or(&f64::INFINITY)
    }
}

/// Damped Newton shooting on `r(z) = Phi_T(z) - z`.
pub fn find_periodic_orbit(model: &dyn SymbolModel, guess: &PhasePoint, tol: f64) -> Result<PeriodicOrbit> {
    check_dims(model, guess)?;
    let period = model.period();
    let ode_tol = (tol * 1e-2).max(1e-13);
    let d = 2 * model.dim();
    let id = DMatrix::<f64>::identity(d, d);
    let mut z = guess.to_vector();
    let mut history = Vec::new();
    let (zt, mut m) = flow_with_jacobian(model, &z, 0.0, period, ode_tol)?;
    let mut r = &zt - &z;
    let mut rn = r.norm();
    history.push(rn);
    for it in 0..50 {
        if rn <= tol {
            return Ok(PeriodicOrbit { z: z.as_slice().to_vec(), residual_history: history, iterations: it });
        }
        let jac = &m - &id;
        let svd = jac.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if smin <= 1e-10 * smax.max(1.0) {
            return Err(Error::DegenerateOrbit { sigma_min: smin });
        }
        let step = svd.solve(&(-&r), 0.0).map_err(|e| Error::Contract(e.into()))?;
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial = &z + &step * lambda;
            let (tt, mt) = flow_with_jacobian(model, &trial, 0.0, period, ode_tol)?;
            let rt = &tt - &trial;
            if rt.norm() <= (1.0 - 1e-4 * lambda) * rn {
                z = trial;
                m = mt;
                r = rt;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        rn = r.norm();
        history.push(rn);
        if !accepted {
            return Err(Error::NoConvergence { history });
        }
    }
    if rn <= tol {
        return Ok(PeriodicOrbit { z: z.as_slice().to_vec(), residual_history: history, iterations: 50 });
    }
    Err(Error::NoConvergence { history })
}

/// Fundamental matrix `A(t)` of a variational system along an orbit.
#[derive(Debug, Clone)]
pub struct Variational {
    sol: DenseSolution,
    pub kind: VariationalKind,
    d: usize,
}

impl Variational {
    pub fn matrix(&self, t: f64) -> Result<DMatrix<f64>> {
        Ok(DMatrix::from_column_slice(self.d, self.d, &self.sol.eval(t)?))
    }
    pub fn end(&self) -> f64 {
        self.sol.end()
    }
}

/// `A' = J h_zz(z0(t), t) A`, `A(0) = I`, on `[orbit.start, t_end]`.
pub fn integrate_variational_a(
    model: &dyn SymbolModel,
    orbit: &Orbit,
    kind: VariationalKind,
    t_end: f64,
    tol: f64,
) -> Result<Variational> {
    let t0 = orbit.start();
    if t_end > orbit.end() * (1.0 + 1e-12) + 1e-12 {
        return Err(Error::Domain { t: t_end, start: t0, end: orbit.end() });
    }
    let d = 2 * orbit.dim();
    let j = symplectic_unit(orbit.dim());
    let mut failure = None;
    let rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
        let z = match orbit.state(t.min(orbit.end())) {
            Ok(z) => z,
            Err(e) => {
                failure.get_or_insert(e);
                dy.fill(0.0);
                return;
            }
        };
        let a = DMatrix::from_column_slice(d, d, y);
        let da = &j * variational_hessian(model, &z, t, kind) * a;
        dy.copy_from_slice(da.as_slice());
    };
    let id = DMatrix::<f64>::identity(d, d);
    let sol = dopri5(rhs, t0, id.as_slice(), t_end, &OdeOptions::with_tol(tol))?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(Variational { sol, kind, d })
}

/// Largest symplectic defect over a set of samples.
pub fn max_symplectic_defect(samples: &[DMatrix<f64>]) -> f64 {
    samples.iter().map(symplectic_defect).fold(0.0, f64::max)
}

/// Result of the Schrödinger–Robertson check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UncertaintyCheck {
    pub ok: bool,
    pub margin: f64,
}

/// Smallest eigenvalue of the Hermitian matrix `D - (i hbar / 2) J`.
pub fn check_uncertainty(delta2: &DMatrix<f64>, hbar: f64) -> UncertaintyCheck {
    let sym = (delta2 + delta2.transpose()) * 0.5;
    let h = uncertainty_matrix(&sym, hbar);
    let margin = h.symmetric_eigenvalues().min();
    UncertaintyCheck { ok: margin >= -1e-12, margin }
}

/// `Delta2(t) = A D0 A^T` for every sample; rejects `D0` violating the uncertainty relation.
pub fn propagate_delta2(a: &[DMatrix<f64>], d0: &DMatrix<f64>, hbar: f64) -> Result<Vec<DMatrix<f64>>> {
    if (d0 - d0.transpose()).amax() > 1e-12 * d0.amax().max(1.0) {
        return Err(Error::Contract("initial moment matrix is not symmetric".into()));
    }
    let chk = check_uncertainty(d0, hbar);
    if !chk.ok {
        return Err(Error::Uncertainty { margin: chk.margin });
    }
    Ok(a
        .iter()
        .map(|m| {
            let p = m * d0 * m.transpose();
            (&p + p.transpose()) * 0.5
        })
        .collect())
}

/// `F(t) = (1/2 hbar) J d/dz Sp[(H_zz + k V_zz + k V_ww) Delta2]` at `w = z = z0(t)`.
pub fn drive_term_f(model: &dyn SymbolModel, z0: &DVector<f64>, delta2: &DMatrix<f64>, t: f64, hbar: f64) -> DVector<f64> {
    apply_j(&trace_gradient(model, z0, delta2, t)) / (2.0 * hbar)
}

/// `Z1(t) = sum_k b_k(t) a_k(t) + c.c.` from normalized modes of the tilde system.
pub fn integrate_z1(modes: &[crate::floquet::FloquetMode], b: &[Vec<crate::phase::C64>]) -> Result<Vec<DVector<f64>>> {
    use crate::phase::{skew, C64};
    if modes.len() != b.len() {
        return Err(Error::Contract("one coefficient series per mode is required".into()));
    }
    for (k, mk) in modes.iter().enumerate() {
        for (l, ml) in modes.iter().enumerate() {
            let target = if k == l { C64::new(0.0, 2.0) } else { C64::new(0.0, 0.0) };
            let dev = (skew(&mk.a0, &ml.a0.map(|c| c.conj())) - target).norm() + skew(&mk.a0, &ml.a0).norm();
            if dev > 1e-8 {
                return Err(Error::Contract(format!("modes {k}, {l} are not skew-orthonormal ({dev:e})")));
            }
        }
    }
    let ns = modes.first().map_or(0, |m| m.samples.len());
    if b.iter().any(|bk| bk.len() != ns) {
        return Err(Error::Contract("coefficient series and mode samples differ in length".into()));
    }
    Ok((0..ns)
        .map(|j| {
            let d = modes[0].samples[j].len();
            let mut z = DVector::<C64>::zeros(d);
            for (mode, bk) in modes.iter().zip(b) {
                z += &mode.samples[j] * bk[j];
            }
            z.map(|c| 2.0 * c.re)
        })
        .collect())
}

/// Time-sampled mean, correction, moments and fundamental matrix.
#[derive(Debug, Clone)]
pub struct EhrenfestTrajectory {
    pub times: Vec<f64>,
    pub z0: Vec<DVector<f64>>,
    pub z1: Vec<DVector<f64>>,
    pub delta2: Vec<DMatrix<f64>>,
    pub a: Vec<DMatrix<f64>>,
}

impl EhrenfestTrajectory {
    pub fn dim(&self) -> usize {
        self.z0.first().map_or(0, |z| z.len() / 2)
    }

    pub fn csv_header(&self) -> Vec<String> {
        let n = self.dim();
        let mut h = vec!["t".to_string()];
        h.extend((1..=n).map(|i| format!("P_{i}")));
        h.extend((1..=n).map(|i| format!("X_{i}")));
        h.extend((1..=n).map(|i| format!("Z1_P_{i}")));
        h.extend((1..=n).map(|i| format!("Z1_X_{i}")));
        for i in 0..2 * n {
            for j in i..2 * n {
                h.push(format!("Delta2_{}{}", i + 1, j + 1));
            }
        }
        h
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serde(e.to_string()))?;
        w.write_record(self.csv_header()).map_err(|e| Error::Serde(e.to_string()))?;
        for (k, t) in self.times.iter().enumerate() {
            let mut row = vec![format!("{t:e}")];
            row.extend(self.z0[k].iter().map(|v| format!("{v:e}")));
            row.extend(self.z1[k].iter().map(|v| format!("{v:e}")));
            let d = &self.delta2[k];
            for i in 0..d.nrows() {
                for j in i..d.ncols() {
                    row.push(format!("{:e}", d[(i, j)]));
                }
            }
            w.write_record(&row).map_err(|e| Error::Serde(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn max_uncertainty_violation(&self, hbar: f64) -> f64 {
        self.delta2.iter().map(|d| check_uncertainty(d, hbar).margin).fold(f64::INFINITY, f64::min)
    }
}

/// Cauchy problem for the full second-order system: mean, first correction and moments.
#[derive(Debug, Clone)]
pub struct CauchySolution {
    sol: DenseSolution,
    n: usize,
    pub hbar: f64,
}

impl CauchySolution {
    fn parts(&self, t: f64) -> Result<(DVector<f64>, DVector<f64>, DMatrix<f64>)> {
        let y = self.sol.eval(t)?;
        let d = 2 * self.n;
        Ok((
            DVector::from_column_slice(&y[..d]),
            DVector::from_column_slice(&y[d..2 * d]),
            DMatrix::from_column_slice(d, d, &y[2 * d..]),
        ))
    }
    /// Mean `z0 + hbar z1`.
    pub fn mean(&self, t: f64) -> Result<DVector<f64>> {
        let (z0, z1, _) = self.parts(t)?;
        Ok(z0 + z1 * self.hbar)
    }
    pub fn z0(&self, t: f64) -> Result<DVector<f64>> {
        Ok(self.parts(t)?.0)
    }
    pub fn delta2(&self, t: f64) -> Result<DMatrix<f64>> {
        Ok(self.parts(t)?.2)
    }
}

/// Integrates `z0`, `z1` (with `z1(0) = 0`) and `Delta2` from given initial data.
pub fn integrate_cauchy(
    model: &dyn SymbolModel,
    z_init: &PhasePoint,
    d0: &DMatrix<f64>,
    hbar: f64,
    t_end: f64,
    tol: f64,
) -> Result<CauchySolution> {
    check_dims(model, z_init)?;
    let chk = check_uncertainty(d0, hbar);
    if !chk.ok {
        return Err(Error::Uncertainty { margin: chk.margin });
    }
    let n = model.dim();
    let d = 2 * n;
    let j = symplectic_unit(n);
    let mut y0 = z_init.to_vector().as_slice().to_vec();
    y0.extend(std::iter::repeat_n(0.0, d));
    y0.extend(d0.as_slice());
    let rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
        let z0 = DVector::from_column_slice(&y[..d]);
        let z1 = DVector::from_column_slice(&y[d..2 * d]);
        let del = DMatrix::from_column_slice(d, d, &y[2 * d..]);
        dy[..d].copy_from_slice(apply_j(&effective_gradient(model, &z0, t)).as_slice());
        let ht = variational_hessian(model, &z0, t, VariationalKind::Tilde);
        let dz1 = &j * ht * z1 + drive_term_f(model, &z0, &del, t, hbar);
        dy[d..2 * d].copy_from_slice(dz1.as_slice());
        let hp = variational_hessian(model, &z0, t, VariationalKind::Plain);
        let jh = &j * hp;
        let dd = &jh * &del + &del * jh.transpose();
        dy[2 * d..].copy_from_slice(dd.as_slice());
    };
    // Scale tolerances to the moment size so Delta2 is resolved as well as z0.
    let opts = OdeOptions { atol: tol * hbar.min(1.0), rtol: tol, ..OdeOptions::default() };
    let sol = dopri5(rhs, 0.0, &y0, t_end, &opts)?;
    Ok(CauchySolution { sol, n, hbar })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ExampleModel, ExampleParams, QuadraticModel, TrapModel1D};
    use std::f64::consts::PI;

    #[test]
    fn oscillator_quarter_period() {
        let m = QuadraticModel::oscillator(1.0, 2.0, PI).unwrap();
        let z = PhasePoint::from_slices(&[0.0], &[1.0]).unwrap();
        let o = integrate_z0(&m, &z, (0.0, PI / 4.0), 1e-12).unwrap();
        let s = o.state(PI / 4.0).unwrap();
        assert!((s[0] + 2.0).abs() < 1e-9 && s[1].abs() < 1e-9);
    }

    #[test]
    fn equilibrium_stays_put() {
        let m = ExampleModel::new(ExampleParams { field: 0.0, ..Default::default() }).unwrap();
        let o = integrate_z0(&m, &PhasePoint::zeros(3), (0.0, 2.0 * PI), 1e-10).unwrap();
        assert!(o.state(5.0).unwrap().amax() == 0.0);
    }

    #[test]
    fn example_orbit_matches_circle() {
        let p = ExampleParams::default();
        let m = ExampleModel::new(p).unwrap();
        let z = PhasePoint::from_vector(&p.orbit(0.0));
        let o = integrate_z0(&m, &z, (0.0, p.period()), 1e-10).unwrap();
        let worst = (0..=200)
            .map(|i| {
                let t = p.period() * i as f64 / 200.0;
                (o.state(t).unwrap() - p.orbit(t)).amax()
            })
            .fold(0.0, f64::max);
        assert!(worst < 1e-8, "{worst}");
    }

    #[test]
    fn constant_coefficient_monodromy_trace() {
        let ws = 3f64.sqrt();
        let m = QuadraticModel::oscillator(1.0, ws, 2.0 * PI).unwrap();
        let o = integrate_z0(&m, &PhasePoint::zeros(1), (0.0, 2.0 * PI), 1e-12).unwrap();
        let v = integrate_variational_a(&m, &o, VariationalKind::Plain, 2.0 * PI, 1e-12).unwrap();
        let a = v.matrix(2.0 * PI).unwrap();
        assert!((a.trace() - 2.0 * (ws * 2.0 * PI).cos()).abs() < 1e-9);
        assert!((v.matrix(0.0).unwrap() - DMatrix::identity(2, 2)).amax() == 0.0);
        assert!(symplectic_defect(&a) < 1e-9);
    }

    #[test]
    fn variational_beyond_orbit_is_domain_error() {
        let m = QuadraticModel::oscillator(1.0, 1.0, 1.0).unwrap();
        let o = integrate_z0(&m, &PhasePoint::zeros(1), (0.0, 1.0), 1e-10).unwrap();
        assert!(matches!(
            integrate_variational_a(&m, &o, VariationalKind::Plain, 2.0, 1e-10),
            Err(Error::Domain { .. })
        ));
    }

    #[test]
    fn vacuum_is_stationary_and_saturates() {
        let (mass, ws, hbar) = (1.0, 3f64.sqrt(), 0.01);
        let m = QuadraticModel::oscillator(mass, ws, 2.0 * PI).unwrap();
        let o = integrate_z0(&m, &PhasePoint::zeros(1), (0.0, 2.0 * PI), 1e-12).unwrap();
        let v = integrate_variational_a(&m, &o, VariationalKind::Plain, 2.0 * PI, 1e-12).unwrap();
        let d0 = DMatrix::from_diagonal(&DVector::from_vec(vec![hbar * mass * ws / 2.0, hbar / (2.0 * mass * ws)]));
        let a: Vec<_> = (0..50).map(|i| v.matrix(i as f64 * 0.1).unwrap()).collect();
        let del = propagate_delta2(&a, &d0, hbar).unwrap();
        for d in &del {
            assert!((d - &d0).amax() < 1e-10);
            let det = d[(0, 0)] * d[(1, 1)] - d[(0, 1)].powi(2);
            assert!((det - hbar * hbar / 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn uncertainty_examples() {
        let h = 0.1;
        let vac = DMatrix::from_diagonal(&DVector::from_vec(vec![h / 2.0, h / 2.0]));
        let c = check_uncertainty(&vac, h);
        assert!(c.ok && c.margin.abs() < 1e-15);
        let bad = DMatrix::from_diagonal(&DVector::from_vec(vec![h / 4.0, h / 4.0]));
        assert!(!check_uncertainty(&bad, h).ok);
        assert!(matches!(propagate_delta2(&[], &bad, h), Err(Error::Uncertainty { .. })));
    }

    #[test]
    fn drive_term_of_cubic_symbol() {
        let cubic = TrapModel1D { m: 1.0, k: 0.0, a3: 1.0, a4: 0.0, drive: 0.0, omega: 1.0, v0: 0.0, gamma: 1.0, kappa_tilde: 0.0 };
        let h = 0.02;
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![h / 2.0, h / 2.0]));
        let f = drive_term_f(&cubic, &DVector::from_vec(vec![0.0, 0.4]), &d, 0.0, h);
        // grad Sp = (0, 2 * sigma_xx), so F = J (0, h) / (2h) = (-1/2, 0)
        assert!((f[0] + 0.5).abs() < 1e-14 && f[1].abs() < 1e-14);
        let quad = QuadraticModel::oscillator(1.0, 1.0, 1.0).unwrap();
        assert_eq!(drive_term_f(&quad, &DVector::from_vec(vec![0.3, 0.1]), &d, 0.0, h).amax(), 0.0);
    }

    #[test]
    fn newton_converges_off_resonance() {
        let p = ExampleParams { omega: 1.5, ..Default::default() };
        let m = ExampleModel::new(p).unwrap();
        let guess = PhasePoint::from_vector(&(p.orbit(0.0) * 1.1));
        let res = find_periodic_orbit(&m, &guess, 1e-10).unwrap();
        assert!((res.point().to_vector() - p.orbit(0.0)).amax() < 1e-10);
        assert!(res.residual() <= 1e-10);
        let h = &res.residual_history;
        assert!(h.len() >= 2 && h[1] < h[0] * 1e-3);
    }

    #[test]
    fn degenerate_orbit_is_reported() {
        let p = ExampleParams::default();
        let m = ExampleModel::new(p).unwrap();
        // Every initial condition is 2 pi periodic here; a guess that is exact stays accepted.
        let res = find_periodic_orbit(&m, &PhasePoint::from_vector(&p.orbit(0.0)), 1e-10).unwrap();
        assert_eq!(res.iterations, 0);
        // Free drift: I - M is singular and no periodic orbit passes through p != 0.
        let free = QuadraticModel::new(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0])), 1.0).unwrap();
        let g = PhasePoint::from_slices(&[0.3], &[0.1]).unwrap();
        assert!(matches!(find_periodic_orbit(&free, &g, 1e-10), Err(Error::DegenerateOrbit { .. })));
    }
}
