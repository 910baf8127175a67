//! Green's function of the quadratic equation, grid evolution and moment extraction.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::ehrenfest::Variational;
use crate::error::{Error, Result};
use crate::model::SymbolModel;
use crate::phase::C64;
use crate::wavepacket::SpatialGrid;

/// Blocks of a fundamental matrix, `Phi = [[l4^T, l2^T], [l3^T, l1^T]]` in `(p, x)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct FundamentalBlocks {
    pub lambda1: DMatrix<f64>,
    pub lambda2: DMatrix<f64>,
    pub lambda3: DMatrix<f64>,
    pub lambda4: DMatrix<f64>,
}

impl FundamentalBlocks {
    pub fn from_matrix(a: &DMatrix<f64>) -> Self {
        let n = a.nrows() / 2;
        Self {
            lambda4: a.view((0, 0), (n, n)).transpose(),
            lambda2: a.view((0, n), (n, n)).transpose(),
            lambda3: a.view((n, 0), (n, n)).transpose(),
            lambda1: a.view((n, n), (n, n)).transpose(),
        }
    }

    pub fn assemble(&self) -> DMatrix<f64> {
        let n = self.lambda1.nrows();
        let mut a = DMatrix::zeros(2 * n, 2 * n);
        a.view_mut((0, 0), (n, n)).copy_from(&self.lambda4.transpose());
        a.view_mut((0, n), (n, n)).copy_from(&self.lambda2.transpose());
        a.view_mut((n, 0), (n, n)).copy_from(&self.lambda3.transpose());
        a.view_mut((n, n), (n, n)).copy_from(&self.lambda1.transpose());
        a
    }

    /// Largest violation of `l4^T l1 - l2^T l3 = I` with `l3^T l1` and `l4^T l2` symmetric.
    pub fn symplectic_residual(&self) -> f64 {
        let n = self.lambda1.nrows();
        let (l1, l2, l3, l4) = (&self.lambda1, &self.lambda2, &self.lambda3, &self.lambda4);
        let a = (l4.transpose() * l1 - l2.transpose() * l3 - DMatrix::identity(n, n)).amax();
        let s1 = l3.transpose() * l1;
        let s2 = l4.transpose() * l2;
        a.max((&s1 - s1.transpose()).amax()).max((&s2 - s2.transpose()).amax())
    }
}

/// Block samples for every fundamental-matrix sample.
pub fn fundamental_blocks(a: &[DMatrix<f64>]) -> Vec<FundamentalBlocks> {
    a.iter().map(FundamentalBlocks::from_matrix).collect()
}

/// Continuous argument of `f` along `[a, b]`, refined until every step turns by at most `pi/8`.
fn track_arg<F: Fn(f64) -> Result<C64>>(f: &F, a: f64, b: f64, arg0: f64) -> Result<(f64, C64)> {
    const COARSE: usize = 64;
    const MAX_DEPTH: u32 = 40;
    fn seg<F: Fn(f64) -> Result<C64>>(f: &F, a: f64, fa: C64, b: f64, depth: u32) -> Result<(f64, C64)> {
        let fb = f(b)?;
        let d = (fb / fa).arg();
        if d.abs() <= std::f64::consts::PI / 8.0 {
            return Ok((d, fb));
        }
        if depth == 0 {
            return Err(Error::Undersampled { index: 0, jump: d });
        }
        let m = 0.5 * (a + b);
        let (d1, fm) = seg(f, a, fa, m, depth - 1)?;
        let (d2, fb) = seg(f, m, fm, b, depth - 1)?;
        Ok((d1 + d2, fb))
    }
    let mut arg = arg0;
    let mut fa = f(a)?;
    for k in 0..COARSE {
        let (u0, u1) = (a + (b - a) * k as f64 / COARSE as f64, a + (b - a) * (k + 1) as f64 / COARSE as f64);
        let (d, fb) = seg(f, u0, fa, u1, MAX_DEPTH)?;
        arg += d;
        fa = fb;
    }
    Ok((arg, fa))
}

fn to_c(m: &DMatrix<f64>) -> DMatrix<C64> {
    m.map(|r| C64::new(r, 0.0))
}

/// Gaussian kernel of `U(t, s)` for the quadratic equation along a reference trajectory.
#[derive(Debug, Clone)]
pub struct GreensKernel {
    pub hbar: f64,
    pub dt: f64,
    pub p_t: DVector<f64>,
    pub x_t: DVector<f64>,
    pub p_s: DVector<f64>,
    pub x_s: DVector<f64>,
    pub action_increment: f64,
    pub blocks: FundamentalBlocks,
    /// Continuous argument of `det(2 pi i hbar l3)`.
    pub branch_arg: f64,
    lam3_inv: DMatrix<f64>,
    lam3_inv_lam4: DMatrix<f64>,
    lam1_lam3_inv: DMatrix<f64>,
    prefactor: C64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelOptions {
    /// Relative threshold on `|det l3|` below which evaluation is refused.
    pub focal_tol: f64,
}

impl Default for KernelOptions {
    fn default() -> Self {
        Self { focal_tol: 1e-8 }
    }
}

impl GreensKernel {
    /// Kernel from `phi(tau) = Phi(s + tau, s)` for `tau` in `[0, dt]`.
    ///
    /// The branch of `det(2 pi i hbar l3)^(-1/2)` is carried along the regularized path
    /// `l3 - i eps l1`: first in `tau` at fixed `eps`, then `eps -> 0` at `tau = dt`.
    /// Along it the determinant never vanishes, which passes focal points in between.
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: Fn(f64) -> Result<DMatrix<f64>>>(
        phi: F,
        dt: f64,
        z_t: &DVector<f64>,
        z_s: &DVector<f64>,
        action_increment: f64,
        hbar: f64,
        opts: KernelOptions,
    ) -> Result<Self> {
        if !(dt > 0.0) || !(hbar > 0.0) {
            return Err(Error::Contract("kernel needs dt > 0 and hbar > 0".into()));
        }
        let end = phi(dt)?;
        let n = end.nrows() / 2;
        if z_t.len() != 2 * n || z_s.len() != 2 * n {
            return Err(Error::Contract("trajectory points must match the fundamental matrix".into()));
        }
        let blocks = FundamentalBlocks::from_matrix(&end);
        let det3 = blocks.lambda3.determinant();
        let scale = end.norm().max(1.0).powi(n as i32);
        if det3.abs() < opts.focal_tol * scale {
            return Err(Error::FocalPoint { dt, det_abs: det3.abs() });
        }
        let c = C64::new(0.0, std::f64::consts::TAU * hbar);
        let eps0 = blocks.lambda3.norm().max(f64::MIN_POSITIVE);
        let reg = |tau: f64, eps: f64| -> Result<C64> {
            let b = FundamentalBlocks::from_matrix(&phi(tau)?);
            let m = to_c(&b.lambda3) - to_c(&b.lambda1) * C64::new(0.0, eps);
            Ok((m * c).determinant())
        };
        let (arg1, _) = track_arg(&|tau| reg(tau, eps0), 0.0, dt, 0.0)?;
        let (branch_arg, _) = track_arg(&|u| reg(dt, eps0 * (1.0 - u)), 0.0, 1.0, arg1)?;
        let modulus = (std::f64::consts::TAU * hbar).powi(n as i32) * det3.abs();
        let prefactor = C64::from_polar(modulus.powf(-0.5), -branch_arg / 2.0);
        let lam3_inv = blocks.lambda3.clone().try_inverse().ok_or(Error::FocalPoint { dt, det_abs: det3.abs() })?;
        Ok(Self {
            hbar,
            dt,
            p_t: z_t.rows(0, n).into_owned(),
            x_t: z_t.rows(n, n).into_owned(),
            p_s: z_s.rows(0, n).into_owned(),
            x_s: z_s.rows(n, n).into_owned(),
            action_increment,
            lam3_inv_lam4: &lam3_inv * &blocks.lambda4,
            lam1_lam3_inv: &blocks.lambda1 * &lam3_inv,
            lam3_inv,
            blocks,
            branch_arg,
            prefactor,
        })
    }

    /// Kernel of `U(t, s)` from a dense variational solution, checking `det H_pp != 0` at `s`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_variational(
        model: &dyn SymbolModel,
        var: &Variational,
        t: f64,
        s: f64,
        z_t: &DVector<f64>,
        z_s: &DVector<f64>,
        action_increment: f64,
        hbar: f64,
    ) -> Result<Self> {
        let n = model.dim();
        let hpp = model.hamiltonian_hess(z_s, s).view((0, 0), (n, n)).into_owned();
        if hpp.determinant().abs() < 1e-12 * hpp.norm().max(1.0).powi(n as i32) {
            return Err(Error::Contract("H_pp is singular; the kernel form does not apply".into()));
        }
        let a_s_inv = var.matrix(s)?.try_inverse().ok_or_else(|| Error::Contract("singular fundamental matrix".into()))?;
        Self::new(|tau| Ok(var.matrix(s + tau)? * &a_s_inv), t - s, z_t, z_s, action_increment, hbar, KernelOptions::default())
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> C64 {
        let n = self.x_t.len();
        let dx = DVector::from_fn(n, |i, _| x[i] - self.x_t[i]);
        let dy = DVector::from_fn(n, |i, _| y[i] - self.x_s[i]);
        let phase = self.action_increment + self.p_t.dot(&dx) - self.p_s.dot(&dy)
            + 0.5 * dx.dot(&(&self.lam3_inv_lam4 * &dx))
            - dx.dot(&(&self.lam3_inv * &dy))
            + 0.5 * dy.dot(&(&self.lam1_lam3_inv * &dy));
        self.prefactor * C64::from_polar(1.0, phase / self.hbar)
    }
}

/// `psi(x) = sum_y G(x, y) psi0(y) dV` on `grid_out`, after an edge-decay check on the input.
pub fn apply_evolution(psi0: &[C64], grid_in: &SpatialGrid, kernel: &GreensKernel, grid_out: &SpatialGrid) -> Result<Vec<C64>> {
    if psi0.len() != grid_in.len() {
        return Err(Error::Contract("samples do not match the input grid".into()));
    }
    let edge = grid_in.edge_ratio(psi0);
    if edge > 1e-10 {
        return Err(Error::Truncation { edge });
    }
    let ys = grid_in.points();
    let dv = grid_in.cell_volume();
    let support: Vec<(usize, C64)> = psi0.iter().copied().enumerate().filter(|(_, v)| v.norm() > 0.0).collect();
    Ok((0..grid_out.len())
        .into_par_iter()
        .map(|k| {
            let x = grid_out.point(k);
            support.iter().map(|&(j, v)| kernel.eval(&x, &ys[j]) * v).sum::<C64>() * dv
        })
        .collect())
}

/// Means and centered second moments in `(p, x)` order, normalized by `||psi||^2`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentVector {
    pub norm: f64,
    pub mean: Vec<f64>,
    /// Row-major `2n x 2n` symmetric moment matrix.
    pub delta2: Vec<f64>,
}

impl MomentVector {
    pub fn mean_vector(&self) -> DVector<f64> {
        DVector::from_vec(self.mean.clone())
    }
    pub fn delta2_matrix(&self) -> DMatrix<f64> {
        let d = self.mean.len();
        DMatrix::from_row_slice(d, d, &self.delta2)
    }
}

/// Moments by quadrature; momenta by 4th-order differences of the envelope left after
/// removing the dominant carrier `exp(i p_c x / hbar)`.
pub fn extract_moments(psi: &[C64], hbar: f64, grid: &SpatialGrid) -> Result<MomentVector> {
    let n = grid.dim();
    if psi.len() != grid.len() {
        return Err(Error::Contract("samples do not match the grid".into()));
    }
    let norm2 = grid.inner(psi, psi).re;
    if !(norm2 > 1e-24) {
        return Err(Error::DegenerateInput(format!("squared norm {norm2:e} is too small")));
    }
    let edge = grid.edge_ratio(psi);
    if edge > 1e-6 {
        return Err(Error::Truncation { edge });
    }
    let pts = grid.points();
    let peak = psi.iter().enumerate().max_by(|a, b| a.1.norm().total_cmp(&b.1.norm())).map(|(k, _)| k).unwrap_or(0);
    // Carrier wavenumber from the local phase slope at the peak along each axis.
    let pc: Vec<f64> = (0..n)
        .map(|ax| {
            let d = grid.fd4_derivative(psi, ax);
            (d[peak] / psi[peak]).im * hbar
        })
        .collect();
    let carrier: Vec<C64> = pts.iter().map(|x| C64::from_polar(1.0, (0..n).map(|i| pc[i] * x[i]).sum::<f64>() / hbar)).collect();
    let env: Vec<C64> = psi.iter().zip(&carrier).map(|(a, c)| a / c).collect();
    // p_i psi = carrier (pc_i env - i hbar d_i env)
    let ppsi: Vec<Vec<C64>> = (0..n)
        .map(|ax| {
            let d = grid.fd4_derivative(&env, ax);
            env.iter()
                .zip(&d)
                .zip(&carrier)
                .map(|((e, de), c)| (e * pc[ax] - de * C64::new(0.0, hbar)) * c)
                .collect()
        })
        .collect();
    let xpsi: Vec<Vec<C64>> = (0..n).map(|ax| pts.iter().zip(psi).map(|(x, v)| v * x[ax]).collect()).collect();
    let mut mean = vec![0.0; 2 * n];
    for i in 0..n {
        mean[i] = grid.inner(psi, &ppsi[i]).re / norm2;
        mean[n + i] = grid.inner(psi, &xpsi[i]).re / norm2;
    }
    let centered: Vec<Vec<C64>> = (0..2 * n)
        .map(|r| {
            let src = if r < n { &ppsi[r] } else { &xpsi[r - n] };
            src.iter().zip(psi).map(|(a, v)| a - v * mean[r]).collect()
        })
        .collect();
    let d = 2 * n;
    let mut delta2 = vec![0.0; d * d];
    for r in 0..d {
        for c in r..d {
            let v = grid.inner(&centered[r], &centered[c]).re / norm2;
            delta2[r * d + c] = v;
            delta2[c * d + r] = v;
        }
    }
    Ok(MomentVector { norm: norm2.sqrt(), mean, delta2 })
}

/// One monodromy check `||U(T) Phi - exp(-i E T / hbar) Phi||`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonodromyReport {
    pub nu: Vec<usize>,
    pub eigvalue_expected: [f64; 2],
    pub residual: f64,
}

/// Applies `kernel` to `phi` and compares with the expected eigenvalue times `phi`.
pub fn monodromy_residual(
    nu: &[usize],
    phi: &[C64],
    grid: &SpatialGrid,
    kernel: &GreensKernel,
    energy: f64,
    period: f64,
) -> Result<MonodromyReport> {
    let out = apply_evolution(phi, grid, kernel, grid)?;
    let ev = C64::from_polar(1.0, -energy * period / kernel.hbar);
    let diff: Vec<C64> = out.iter().zip(phi).map(|(a, b)| a - b * ev).collect();
    Ok(MonodromyReport { nu: nu.to_vec(), eigvalue_expected: [ev.re, ev.im], residual: grid.norm(&diff) })
}

/// Free Gaussian `(pi hbar)^(-1/4) exp(-(x-x0)^2/(2 hbar) + i p0 (x-x0)/hbar)` evolved for time `t`.
pub fn free_packet(x: f64, t: f64, m: f64, hbar: f64, x0: f64, p0: f64) -> C64 {
    let s = C64::new(1.0, t / m);
    let d = x - x0 - p0 * t / m;
    let phase = C64::new(0.0, p0 * (x - x0) / hbar - p0 * p0 * t / (2.0 * m * hbar));
    (std::f64::consts::PI * hbar).powf(-0.25) / s.sqrt() * (-(d * d) / (2.0 * hbar * s) + phase).exp()
}

/// Short-time behaviour of the free kernel: pointwise match with the closed form,
/// `O(dt)` reproduction of a packet and the grid-convergence order of the quadrature.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityLimitReport {
    pub hbar: f64,
    pub free_kernel_max_error: f64,
    pub dts: Vec<f64>,
    pub reproduction_errors: Vec<f64>,
    pub dt_order: f64,
    pub spacings: Vec<f64>,
    pub grid_errors: Vec<f64>,
    pub grid_order: f64,
}

fn log_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.max(f64::MIN_POSITIVE).ln()).collect();
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

pub fn identity_limit_study(m: f64, hbar: f64) -> Result<IdentityLimitReport> {
    let (x0, p0) = (0.1, 0.5);
    let zero = DVector::zeros(2);
    let free = move |tau: f64| Ok(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, tau / m, 1.0]));
    let kernel = |dt: f64| GreensKernel::new(free, dt, &zero, &zero, 0.0, hbar, KernelOptions::default());
    let mut free_err: f64 = 0.0;
    for dt in [0.05, 0.3, 1.0] {
        let k = kernel(dt)?;
        for i in 0..21 {
            for j in 0..21 {
                let (x, y) = (-1.0 + 0.1 * i as f64, -1.0 + 0.1 * j as f64);
                let exact = C64::new(0.0, std::f64::consts::TAU * hbar * dt / m).powf(-0.5)
                    * C64::from_polar(1.0, m * (x - y) * (x - y) / (2.0 * hbar * dt));
                free_err = free_err.max((k.eval(&[x], &[y]) - exact).norm());
            }
        }
    }
    // Box of +-8 packet widths; the kernel chirp at |x - y| = L needs h < pi hbar dt / (m L).
    let (lo, hi) = (x0 - 8.0 * hbar.sqrt(), x0 + 8.0 * hbar.sqrt());
    let axis = |points: usize| SpatialGrid::new(vec![crate::wavepacket::Axis { min: lo, max: hi, points }]);
    let packet = |g: &SpatialGrid, t: f64| -> Vec<C64> { g.points().iter().map(|x| free_packet(x[0], t, m, hbar, x0, p0)).collect() };
    let nyquist = |dt: f64| ((hi - lo).powi(2) * m / (std::f64::consts::PI * hbar * dt)).ceil() as usize;
    let dts = vec![0.2, 0.1, 0.05];
    let mut reproduction_errors = Vec::new();
    for &dt in &dts {
        let g = axis(2 * nyquist(dt))?;
        let psi0 = packet(&g, 0.0);
        let out = apply_evolution(&psi0, &g, &kernel(dt)?, &g)?;
        let d: Vec<C64> = out.iter().zip(&psi0).map(|(a, b)| a - b).collect();
        reproduction_errors.push(g.norm(&d));
    }
    let dt = 0.1;
    let k = kernel(dt)?;
    let mut spacings = Vec::new();
    let mut grid_errors = Vec::new();
    // Spacings between aliasing and the round-off floor; trapezoid convergence is super-algebraic there.
    for f in [0.3, 0.35, 0.4, 0.45] {
        let g = axis((f * nyquist(dt) as f64) as usize)?;
        let out = apply_evolution(&packet(&g, 0.0), &g, &k, &g)?;
        let exact = packet(&g, dt);
        let d: Vec<C64> = out.iter().zip(&exact).map(|(a, b)| a - b).collect();
        spacings.push(g.axes[0].spacing());
        grid_errors.push(g.norm(&d));
    }
    Ok(IdentityLimitReport {
        hbar,
        free_kernel_max_error: free_err,
        dt_order: log_slope(&dts, &reproduction_errors),
        grid_order: log_slope(&spacings, &grid_errors),
        dts,
        reproduction_errors,
        spacings,
        grid_errors,
    })
}
