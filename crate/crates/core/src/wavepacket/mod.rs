//! Germ frames, the action, and trajectory-coherent states built on them.

mod grid;
mod poly;

pub use grid::{read_binary, Axis, SpatialGrid};
pub use poly::Poly;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::floquet::FloquetMode;
use crate::linalg::det_c;
use crate::model::{effective_gradient, SymbolModel};
use crate::phase::{skew, C64};
use crate::quad::cumulative;

/// Columns `W_k` (in `B`) and `Z_k` (in `C`) of the germ modes at every sample.
#[derive(Debug, Clone)]
pub struct GermFrame {
    pub times: Vec<f64>,
    pub b: Vec<DMatrix<C64>>,
    pub c: Vec<DMatrix<C64>>,
    pub q: Vec<DMatrix<C64>>,
    /// Continuous phase increment of `sqrt(det C)`, zero at the first sample.
    pub sqrt_detc_phase: Vec<f64>,
    /// Principal argument of `sqrt(det C)` at the first sample.
    pub phase0: f64,
}

impl GermFrame {
    pub fn dim(&self) -> usize {
        self.b[0].nrows()
    }

    pub fn sqrt_det_c(&self, j: usize) -> C64 {
        let m = det_c(&self.c[j]).norm().sqrt();
        C64::from_polar(m, self.phase0 + self.sqrt_detc_phase[j])
    }

    /// Mode `a_k` at sample `j` as a stacked `(W, Z)` vector.
    pub fn mode(&self, j: usize, k: usize) -> DVector<C64> {
        let n = self.dim();
        DVector::from_fn(2 * n, |i, _| if i < n { self.b[j][(i, k)] } else { self.c[j][(i - n, k)] })
    }

    /// Largest residuals of `C^T B - B^T C = 0`, `(C^+ B - B^+ C)/2i = I`, `Q - Q^T` over all samples.
    pub fn identity_residuals(&self) -> (f64, f64, f64) {
        let n = self.dim();
        let id = DMatrix::<C64>::identity(n, n);
        let mut r = (0.0f64, 0.0f64, 0.0f64);
        for j in 0..self.times.len() {
            let (b, c, q) = (&self.b[j], &self.c[j], &self.q[j]);
            r.0 = r.0.max((c.transpose() * b - b.transpose() * c).camax());
            let h = (c.adjoint() * b - b.adjoint() * c) / C64::new(0.0, 2.0);
            r.1 = r.1.max((h - &id).camax());
            r.2 = r.2.max((q - q.transpose()).camax());
        }
        r
    }

    /// Smallest eigenvalue of `Im Q` over all samples.
    pub fn min_im_q_eigenvalue(&self) -> f64 {
        self.q
            .iter()
            .map(|q| {
                let im = q.map(|c| c.im);
                ((&im + im.transpose()) * 0.5).symmetric_eigenvalues().min()
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// `Delta2^nu = (hbar/2) sum_k (2 nu_k + 1) Re(a_k a_k^+)` at sample `j`.
    pub fn delta2(&self, j: usize, nu: &[usize], hbar: f64) -> DMatrix<f64> {
        let n = self.dim();
        let mut d = DMatrix::zeros(2 * n, 2 * n);
        for (k, &v) in nu.iter().enumerate() {
            let a = self.mode(j, k);
            d += (&a * a.adjoint()).map(|c| c.re) * (2.0 * v as f64 + 1.0);
        }
        d * (hbar / 2.0)
    }
}

/// Continuous phase of `sqrt(det C)` relative to the first sample.
pub fn track_sqrt_detc(c: &[DMatrix<C64>]) -> Result<Vec<f64>> {
    let dets: Vec<C64> = c.iter().map(det_c).collect();
    let mut out = Vec::with_capacity(dets.len());
    let mut acc = 0.0;
    out.push(acc);
    for j in 1..dets.len() {
        let half = (dets[j] / dets[j - 1]).arg() / 2.0;
        if half.abs() > std::f64::consts::FRAC_PI_4 {
            return Err(Error::Undersampled { index: j, jump: half });
        }
        acc += half;
        out.push(acc);
    }
    Ok(out)
}

/// Germ frame from normalized modes sampled on `times`.
pub fn assemble_frame(modes: &[FloquetMode], times: &[f64]) -> Result<GermFrame> {
    let n = modes.len();
    if n == 0 || modes.iter().any(|m| m.samples.len() != times.len() || m.a0.len() != 2 * n) {
        return Err(Error::Contract("modes must be n complete sample series of dimension 2n".into()));
    }
    for (k, mk) in modes.iter().enumerate() {
        for (l, ml) in modes.iter().enumerate() {
            let target = if k == l { C64::new(0.0, 2.0) } else { C64::new(0.0, 0.0) };
            if (skew(&mk.a0, &ml.a0.map(|c| c.conj())) - target).norm() > 1e-8 {
                return Err(Error::Contract("germ modes are not normalized".into()));
            }
        }
    }
    let mut b = Vec::with_capacity(times.len());
    let mut c = Vec::with_capacity(times.len());
    let mut q = Vec::with_capacity(times.len());
    for (j, &t) in times.iter().enumerate() {
        let bj = DMatrix::from_fn(n, n, |r, k| modes[k].samples[j][r]);
        let cj = DMatrix::from_fn(n, n, |r, k| modes[k].samples[j][n + r]);
        let scale: f64 = (0..n).map(|k| cj.column(k).norm()).product();
        let det = det_c(&cj);
        if det.norm() < 1e-12 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::Caustic { t, det_abs: det.norm() });
        }
        // Q C = B, solved as C^T Q^T = B^T.
        let qt = cj.transpose().lu().solve(&bj.transpose()).ok_or(Error::Caustic { t, det_abs: det.norm() })?;
        b.push(bj);
        c.push(cj);
        q.push(qt.transpose());
    }
    let sqrt_detc_phase = track_sqrt_detc(&c)?;
    let phase0 = det_c(&c[0]).arg() / 2.0;
    Ok(GermFrame { times: times.to_vec(), b, c, q, sqrt_detc_phase, phase0 })
}

/// Running action `S(t)` on a uniform grid.
#[derive(Debug, Clone)]
pub struct ActionProfile {
    pub times: Vec<f64>,
    pub s: Vec<f64>,
}

/// `S(t) = int_0^t <P, X'> - H - k V - (k/2) Sp[V_ww Delta2]` along the samples.
pub fn action_s(
    model: &dyn SymbolModel,
    times: &[f64],
    z: &[DVector<f64>],
    delta2: &[DMatrix<f64>],
) -> Result<ActionProfile> {
    if z.len() != times.len() || delta2.len() != times.len() {
        return Err(Error::Contract("trajectory and moment samples must share the time grid".into()));
    }
    if times.len() < 4 {
        return Err(Error::Contract("action needs at least 4 samples".into()));
    }
    let h = times[1] - times[0];
    if times.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * h.abs().max(1e-300)) {
        return Err(Error::Contract("action quadrature needs a uniform grid".into()));
    }
    let k = model.kappa_tilde();
    let n = model.dim();
    let integrand: Vec<f64> = times
        .iter()
        .zip(z.iter().zip(delta2))
        .map(|(&t, (zz, d))| {
            let g = effective_gradient(model, zz, t);
            let pxdot: f64 = (0..n).map(|i| zz[i] * g[i]).sum();
            let vww = model.kernel_ww(zz, zz, t);
            pxdot - model.hamiltonian(zz, t) - k * model.kernel(zz, zz, t) - 0.5 * k * vww.component_mul(d).sum()
        })
        .collect();
    Ok(ActionProfile { times: times.to_vec(), s: cumulative(&integrand, h)? })
}

/// Germ data frozen at one instant, enough to evaluate and transform states.
#[derive(Debug, Clone)]
pub struct FrameSnapshot {
    pub t: f64,
    pub hbar: f64,
    pub p: DVector<f64>,
    pub x: DVector<f64>,
    pub b: DMatrix<C64>,
    pub c: DMatrix<C64>,
    pub q: DMatrix<C64>,
    pub sqrt_det_c: C64,
    pub s: f64,
}

impl FrameSnapshot {
    /// Snapshot at sample `j`; `center` is the phase-space mean `(P, X)`.
    pub fn from_frame(frame: &GermFrame, j: usize, center: &DVector<f64>, s: f64, hbar: f64) -> Self {
        let n = frame.dim();
        Self {
            t: frame.times[j],
            hbar,
            p: center.rows(0, n).into_owned(),
            x: center.rows(n, n).into_owned(),
            b: frame.b[j].clone(),
            c: frame.c[j].clone(),
            q: frame.q[j].clone(),
            sqrt_det_c: frame.sqrt_det_c(j),
            s,
        }
    }

    pub fn dim(&self) -> usize {
        self.p.len()
    }

    /// Position standard deviations of the vacuum, `sqrt(hbar/2 (Im Q)^-1_ii)`.
    pub fn vacuum_sigma(&self) -> Vec<f64> {
        let im = self.q.map(|c| c.im);
        let inv = im.try_inverse().unwrap_or_else(|| DMatrix::from_element(self.dim(), self.dim(), f64::NAN));
        (0..self.dim()).map(|i| (self.hbar / 2.0 * inv[(i, i)]).sqrt()).collect()
    }

    fn w(&self, k: usize) -> DVector<C64> {
        self.b.column(k).into_owned()
    }
    fn z(&self, k: usize) -> DVector<C64> {
        self.c.column(k).into_owned()
    }

    /// `a_k^+ (P G) = (2 hbar)^(-1/2) [<Q Z* - W*, dx> P - i hbar <Z*, grad P>] G`.
    pub fn create(&self, k: usize, p: &Poly) -> Poly {
        let zc = self.z(k).map(|c| c.conj());
        let lin = &self.q * &zc - self.w(k).map(|c| c.conj());
        self.ladder(p, &lin, &zc)
    }

    /// `a_k (P G) = (2 hbar)^(-1/2) [<Q Z - W, dx> P - i hbar <Z, grad P>] G`.
    pub fn annihilate(&self, k: usize, p: &Poly) -> Poly {
        let z = self.z(k);
        let lin = &self.q * &z - self.w(k);
        self.ladder(p, &lin, &z)
    }

    fn ladder(&self, p: &Poly, lin: &DVector<C64>, dir: &DVector<C64>) -> Poly {
        let s = C64::new((2.0 * self.hbar).powf(-0.5), 0.0);
        p.mul_linear(lin)
            .add(&p.directional(dir).scale(C64::new(0.0, -self.hbar)))
            .scale(s)
            .prune(1e-15)
    }
}

/// Trajectory-coherent state `P(dx) * Gaussian` built on a frame snapshot.
#[derive(Debug, Clone)]
pub struct TCState {
    pub nu: Vec<usize>,
    pub poly: Poly,
    pub frame: FrameSnapshot,
}

impl TCState {
    pub fn value(&self, x: &[f64]) -> C64 {
        let f = &self.frame;
        let n = f.dim();
        let dx: Vec<f64> = (0..n).map(|i| x[i] - f.x[i]).collect();
        let dxv = DVector::from_fn(n, |i, _| C64::new(dx[i], 0.0));
        let quad = (dxv.transpose() * &f.q * &dxv)[(0, 0)] * 0.5;
        let lin: f64 = (0..n).map(|i| f.p[i] * dx[i]).sum();
        let phase = (C64::new(f.s + lin, 0.0) + quad) * C64::new(0.0, 1.0 / f.hbar);
        let norm = (std::f64::consts::PI * f.hbar).powf(-(n as f64) / 4.0);
        self.poly.eval(&dx) * phase.exp() * norm / f.sqrt_det_c
    }

    pub fn sample(&self, grid: &SpatialGrid) -> Vec<C64> {
        (0..grid.len()).into_par_iter().map(|k| self.value(&grid.point(k))).collect()
    }

    /// Samples on `grid` after checking it covers `8 + deg` vacuum widths at spacing `sigma / 1.5`.
    pub fn sample_checked(&self, grid: &SpatialGrid) -> Result<Vec<C64>> {
        let sigma = self.frame.vacuum_sigma();
        let center: Vec<f64> = self.frame.x.iter().copied().collect();
        grid.check_resolution(&center, &sigma, 8.0 + self.poly.degree() as f64, 1.5)?;
        Ok(self.sample(grid))
    }
}

/// `Phi_0 = (pi hbar)^(-n/4) det C^(-1/2) exp{(i/hbar)[S + <P, dx> + dx^T Q dx / 2]}`.
pub fn vacuum_state(frame: &FrameSnapshot) -> TCState {
    TCState { nu: vec![0; frame.dim()], poly: Poly::constant(frame.dim(), C64::new(1.0, 0.0)), frame: frame.clone() }
}

/// Applies `a_k^+ / sqrt(nu_k + 1)`.
pub fn raise_state(state: &TCState, k: usize) -> TCState {
    let mut nu = state.nu.clone();
    let f = 1.0 / ((nu[k] + 1) as f64).sqrt();
    nu[k] += 1;
    TCState { nu, poly: state.frame.create(k, &state.poly).scale(C64::new(f, 0.0)), frame: state.frame.clone() }
}

/// Fock state `prod_k (a_k^+)^nu_k / sqrt(nu_k!) |0>`.
pub fn fock_state(frame: &FrameSnapshot, nu: &[usize]) -> TCState {
    let mut s = vacuum_state(frame);
    for (k, &v) in nu.iter().enumerate() {
        for _ in 0..v {
            s = raise_state(&s, k);
        }
    }
    s
}

/// Grid norm of `a_k Phi` with the momentum operator applied spectrally.
pub fn annihilation_residual(state: &TCState, k: usize, grid: &SpatialGrid) -> Result<f64> {
    let f = &state.frame;
    let n = f.dim();
    let psi = state.sample_checked(grid)?;
    let pts = grid.points();
    // Strip the carrier exp(i <P, dx>/hbar) so the spectral derivative sees a smooth envelope.
    let carrier: Vec<C64> = pts
        .iter()
        .map(|x| C64::from_polar(1.0, (0..n).map(|i| f.p[i] * (x[i] - f.x[i])).sum::<f64>() / f.hbar))
        .collect();
    let env: Vec<C64> = psi.iter().zip(&carrier).map(|(a, c)| a / c).collect();
    let (w, z) = (f.b.column(k), f.c.column(k));
    let mut out: Vec<C64> = pts
        .iter()
        .zip(&psi)
        .map(|(x, v)| -(0..n).map(|i| w[i] * (x[i] - f.x[i])).sum::<C64>() * v)
        .collect();
    for axis in 0..n {
        let d = grid.spectral_derivative(&env, axis);
        for (m, o) in out.iter_mut().enumerate() {
            *o += z[axis] * d[m] * carrier[m] * C64::new(0.0, -f.hbar);
        }
    }
    let s = (2.0 * f.hbar).powf(-0.5);
    Ok(grid.norm(&out) * s)
}

/// `|| Phi(t+T) - exp(-i E T / hbar) Phi(t) ||` on `grid`.
pub fn quasi_periodicity_check(
    later: &TCState,
    earlier: &TCState,
    energy: f64,
    period: f64,
    grid: &SpatialGrid,
) -> Result<f64> {
    let hbar = earlier.frame.hbar;
    let a = later.sample_checked(grid)?;
    let b = earlier.sample_checked(grid)?;
    let ph = C64::from_polar(1.0, -energy * period / hbar);
    let diff: Vec<C64> = a.iter().zip(&b).map(|(x, y)| x - y * ph).collect();
    Ok(grid.norm(&diff))
}

/// Multi-indices with total degree at most `max`, in graded lexicographic order.
pub fn multi_indices(n: usize, max: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for total in 0..=max {
        let mut cur = vec![0; n];
        fn rec(i: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if i + 1 == cur.len() {
                cur[i] = left;
                out.push(cur.clone());
                return;
            }
            for v in (0..=left).rev() {
                cur[i] = v;
                rec(i + 1, left - v, cur, out);
            }
        }
        rec(0, total, &mut cur, &mut out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ehrenfest::integrate_z0;
    use crate::floquet::{analyze, FloquetOptions};
    use crate::model::{QuadraticModel, VariationalKind};
    use crate::phase::PhasePoint;
    use std::f64::consts::PI;

    fn oscillator_frame(m: f64, w: f64, n: usize) -> (GermFrame, f64) {
        let period = 2.0 * PI;
        let q = QuadraticModel::oscillator(m, w, period).unwrap();
        let o = integrate_z0(&q, &PhasePoint::zeros(1), (0.0, 2.0 * period), 1e-12).unwrap();
        let times: Vec<f64> = (0..=2 * n).map(|j| period * j as f64 / n as f64).collect();
        let sys = analyze(&q, &o, VariationalKind::Plain, &times, 1e-12, &FloquetOptions::default()).unwrap();
        (assemble_frame(&sys.modes, &times).unwrap(), sys.modes[0].omega)
    }

    #[test]
    fn oscillator_frame_identities() {
        let (fr, w) = oscillator_frame(1.0, 3f64.sqrt(), 400);
        let (r1, r2, r3) = fr.identity_residuals();
        assert!(r1 < 1e-10 && r2 < 1e-10 && r3 < 1e-12);
        assert!((fr.min_im_q_eigenvalue() - 3f64.sqrt()).abs() < 1e-8);
        assert!((fr.sqrt_detc_phase[400] - w * 2.0 * PI / 2.0).abs() < 1e-8);
    }

    #[test]
    fn constant_c_has_zero_phase() {
        let c = vec![DMatrix::from_element(1, 1, C64::new(0.3, 0.4)); 10];
        assert!(track_sqrt_detc(&c).unwrap().iter().all(|&p| p == 0.0));
        let jump = vec![DMatrix::from_element(1, 1, C64::new(1.0, 0.0)), DMatrix::from_element(1, 1, C64::new(-1.0, 0.1))];
        assert!(matches!(track_sqrt_detc(&jump), Err(Error::Undersampled { .. })));
    }

    #[test]
    fn free_particle_action() {
        let free = QuadraticModel::new(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0])), 1.0).unwrap();
        let p0 = 0.7;
        let times: Vec<f64> = (0..=100).map(|j| j as f64 * 0.02).collect();
        let z: Vec<DVector<f64>> = times.iter().map(|&t| DVector::from_vec(vec![p0, p0 * t])).collect();
        let d = vec![DMatrix::zeros(2, 2); times.len()];
        let s = action_s(&free, &times, &z, &d).unwrap();
        assert!((s.s[100] - p0 * p0 * 2.0 / 2.0).abs() < 1e-13);
        assert!(action_s(&free, &times[..50], &z, &d).is_err());
    }

    #[test]
    fn oscillator_states() {
        let hbar = 0.05;
        let (fr, _) = oscillator_frame(1.0, 2.0, 200);
        let snap = FrameSnapshot::from_frame(&fr, 37, &DVector::from_vec(vec![0.4, -0.3]), 0.0, hbar);
        let sig = snap.vacuum_sigma()[0];
        assert!((sig * sig - hbar / 4.0).abs() < 1e-10);
        let grid = SpatialGrid::around(&[-0.3], &[sig * 2.0], 10.0, 12.0).unwrap();
        let v0 = vacuum_state(&snap);
        let s0 = v0.sample_checked(&grid).unwrap();
        assert!((grid.norm(&s0) - 1.0).abs() < 1e-6);
        assert!(annihilation_residual(&v0, 0, &grid).unwrap() < 1e-6);
        let v1 = raise_state(&v0, 0);
        let s1 = v1.sample(&grid);
        assert!(grid.inner(&s0, &s1).norm() < 1e-8);
        assert!((grid.norm(&s1) - 1.0).abs() < 1e-6);
        // |Phi_1| is the first Hermite function of the ground frame.
        let a = 2.0 / hbar;
        for (x, v) in grid.points().iter().zip(&s1).step_by(7) {
            let y = x[0] + 0.3;
            let h1 = (a / PI).powf(0.25) * (2.0 * a).sqrt() * y * (-a * y * y / 2.0).exp();
            assert!((v.norm() - h1.abs()).abs() < 1e-8);
        }
    }

    #[test]
    fn commutators_on_polynomials() {
        let (fr, _) = oscillator_frame(1.3, 1.1, 100);
        let snap = FrameSnapshot::from_frame(&fr, 11, &DVector::from_vec(vec![0.1, 0.2]), 0.0, 0.1);
        let p = Poly::constant(1, C64::new(0.5, 0.0))
            .mul_linear(&DVector::from_vec(vec![C64::new(1.0, 2.0)]))
            .mul_linear(&DVector::from_vec(vec![C64::new(0.0, 1.0)]));
        let ac = snap.annihilate(0, &snap.create(0, &p));
        let ca = snap.create(0, &snap.annihilate(0, &p));
        let comm = ac.add(&ca.scale(C64::new(-1.0, 0.0)));
        assert!(comm.max_abs_diff(&p) < 1e-8);
    }

    #[test]
    fn multi_index_enumeration() {
        let m = multi_indices(3, 3);
        assert_eq!(m.len(), 20);
        assert_eq!(m[0], vec![0, 0, 0]);
        assert_eq!(m[1], vec![1, 0, 0]);
    }
}
