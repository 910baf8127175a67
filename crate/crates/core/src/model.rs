//! Classical symbols `H(z, t)` and `V(z, w, t)` with their derivative blocks.
//!
//! Every evaluator takes stacked phase vectors `z = (p, x)` and `w = (p', y)`
//! of length `2n`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which system in variations to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariationalKind {
    /// `h_zz = H_zz + k V_zz |_{w=z}`
    Plain,
    /// plain plus `k V_zw |_{w=z}`
    Tilde,
}

pub trait SymbolModel: Send + Sync {
    fn dim(&self) -> usize;
    fn period(&self) -> f64;
    fn kappa_tilde(&self) -> f64;

    fn hamiltonian(&self, z: &DVector<f64>, t: f64) -> f64;
    fn hamiltonian_grad(&self, z: &DVector<f64>, t: f64) -> DVector<f64>;
    fn hamiltonian_hess(&self, z: &DVector<f64>, t: f64) -> DMatrix<f64>;

    fn kernel(&self, z: &DVector<f64>, w: &DVector<f64>, t: f64) -> f64;
    fn kernel_grad_z(&self, z: &DVector<f64>, w: &DVector<f64>, t: f64) -> DVector<f64>;
    fn kernel_zz(&self, z: &DVector<f64>, w: &DVector<f64>, t: f64) -> DMatrix<f64>;
    fn kernel_ww(&self, z: &DVector<f64>, w: &DVector<f64>, t: f64) -> DMatrix<f64>;
    fn kernel_zw(&self, z: &DVector<f64>, w: &DVector<f64>, t: f64) -> DMatrix<f64>;

    /// Analytic `d/dz Sp[(H_zz + k V_zz + k V_ww) D]` at `w = z`, if available.
    fn trace_gradient(&self, _z: &DVector<f64>, _d: &DMatrix<f64>, _t: f64) -> Option<DVector<f64>> {
        None
    }
}

/// `d/dz [H + k V(z, w)]` at `w = z`.
pub fn effective_gradient(model: &dyn SymbolModel, z: &DVector<f64>, t: f64) -> DVector<f64> {
    model.hamiltonian_grad(z, t) + model.kernel_grad_z(z, z, t) * model.kappa_tilde()
}

/// Effective Hamiltonian value `H + k V(z, z)`.
pub fn effective_value(model: &dyn SymbolModel, z: &DVector<f64>, t: f64) -> f64 {
    model.hamiltonian(z, t) + model.kappa_tilde() * model.kernel(z, z, t)
}

/// Coefficient matrix of the chosen variational system along `z`.
pub fn variational_hessian(
    model: &dyn SymbolModel,
    z: &DVector<f64>,
    t: f64,
    kind: VariationalKind,
) -> DMatrix<f64> {
    let k = model.kappa_tilde();
    let mut h = model.hamiltonian_hess(z, t) + model.kernel_zz(z, z, t) * k;
    if kind == VariationalKind::Tilde {
        h += model.kernel_zw(z, z, t) * k;
    }
    h
}

/// `H_zz + k V_zz + k V_ww` at `w = z`.
pub fn moment_hessian(model: &dyn SymbolModel, z: &DVector<f64>, t: f64) -> DMatrix<f64> {
    let k = model.kappa_tilde();
    model.hamiltonian_hess(z, t) + (model.kernel_zz(z, z, t) + model.kernel_ww(z, z, t)) * k
}

/// Trace gradient, analytic when the model provides it, else central differences
/// of the Hessian blocks in `z` with `w` held fixed.
pub fn trace_gradient(
    model: &dyn SymbolModel,
    z: &DVector<f64>,
    d: &DMatrix<f64>,
    t: f64,
) -> DVector<f64> {
    if let Some(g) = model.trace_gradient(z, d, t) {
        return g;
    }
    let k = model.kappa_tilde();
    let scale = z.amax().max(1.0);
    let h = f64::EPSILON.cbrt() * scale;
    let trace_at = |zz: &DVector<f64>| {
        let m = model.hamiltonian_hess(zz, t)
            + (model.kernel_zz(zz, z, t) + model.kernel_ww(zz, z, t)) * k;
        m.component_mul(d).sum()
    };
    DVector::from_fn(z.len(), |i, _| {
        let mut zp = z.clone();
        let mut zm = z.clone();
        zp[i] += h;
        zm[i] -= h;
        (trace_at(&zp) - trace_at(&zm)) / (2.0 * h)
    })
}

fn split(z: &DVector<f64>) -> (usize, DVector<f64>, DVector<f64>) {
    let n = z.len() / 2;
    (n, z.rows(0, n).into_owned(), z.rows(n, n).into_owned())
}

/// Gaussian kernel `V0 exp(-|x - y|^2 / (2 g^2))` in position blocks only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianKernel {
    pub v0: f64,
    pub gamma: f64,
}

impl GaussianKernel {
    pub fn value_u(&self, u: &DVector<f64>) -> f64 {
        self.v0 * (-u.norm_squared() / (2.0 * self.gamma * self.gamma)).exp()
    }

    /// Hessian of `K(u)` in `u`.
    fn hess_u(&self, u: &DVector<f64>) -> DMatrix<f64> {
        let g2 = self.gamma * self.gamma;
        let v = self.value_u(u);
        let n = u.len();
        (u * u.transpose() / (g2 * g2) - DMatrix::identity(n, n) / g2) * v
    }

    fn diff(z: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        let (_, _, x) = split(z);
        let (_, _, y) = split(w);
        x - y
    }

    fn embed_xx(n: usize, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        m.view_mut((n, n), (n, n)).copy_from(b);
        m
    }

    pub fn value(&self, z: &DVector<f64>, w: &DVector<f64>) -> f64 {
        self.value_u(&Self::diff(z, w))
    }

    pub fn grad_z(&self, z: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        let u = Self::diff(z, w);
        let n = u.len();
        let g = &u * (-self.value_u(&u) / (self.gamma * self.gamma));
        let mut out = DVector::zeros(2 * n);
        out.rows_mut(n, n).copy_from(&g);
        out
    }

    pub fn zz(&self, z: &DVector<f64>, w: &DVector<f64>) -> DMatrix<f64> {
        let u = Self::diff(z, w);
        Self::embed_xx(u.len(), &self.hess_u(&u))
    }

    pub fn zw(&self, z: &DVector<f64>, w: &DVector<f64>) -> DMatrix<f64> {
        let u = Self::diff(z, w);
        Self::embed_xx(u.len(), &(-self.hess_u(&u)))
    }
}

/// Parameters of the driven isotropic oscillator with a Gaussian self-interaction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExampleParams {
    pub m: f64,
    pub e: f64,
    #[serde(rename = "E")]
    pub field: f64,
    pub omega: f64,
    pub k: f64,
    #[serde(rename = "V0")]
    pub v0: f64,
    pub gamma: f64,
    pub kappa_tilde: f64,
}

impl Default for ExampleParams {
    fn default() -> Self {
        Self { m: 1.0, e: 1.0, field: 3.0, omega: 1.0, k: 4.0, v0: 1.0, gamma: 1.0, kappa_tilde: 1.0 }
    }
}

impl ExampleParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.m, self.e, self.field, self.omega, self.k, self.v0, self.gamma, self.kappa_tilde];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("example parameters must be finite".into()));
        }
        if self.m <= 0.0 || self.k <= 0.0 || self.gamma <= 0.0 {
            return Err(Error::Config("m, k and gamma must be positive".into()));
        }
        if self.omega <= 0.0 {
            return Err(Error::Config("drive frequency must be positive".into()));
        }
        if (self.omega0() - self.omega).abs() < 1e-12 {
            return Err(Error::Config("drive frequency equals the trap frequency".into()));
        }
        if self.omega0().powi(2) - self.eta() * self.omega_nl().powi(2) <= 0.0 {
            return Err(Error::Config("omega_0^2 - eta omega_nl^2 must be positive".into()));
        }
        Ok(())
    }

    pub fn omega0(&self) -> f64 {
        (self.k / self.m).sqrt()
    }

    pub fn xi(&self) -> f64 {
        self.e * self.field / (self.m * (self.omega0().powi(2) - self.omega.powi(2)))
    }

    pub fn omega_nl(&self) -> f64 {
        ((self.kappa_tilde * self.v0).abs() / (self.m * self.gamma * self.gamma)).sqrt()
    }

    pub fn eta(&self) -> f64 {
        let s = self.kappa_tilde * self.v0;
        if s > 0.0 {
            1.0
        } else if s < 0.0 {
            -1.0
        } else {
            0.0
        }
    }

    pub fn omega_s(&self) -> f64 {
        (self.omega0().powi(2) - self.eta() * self.omega_nl().powi(2)).sqrt()
    }

    pub fn g_s(&self) -> f64 {
        (self.m * self.omega_s()).sqrt()
    }

    pub fn period(&self) -> f64 {
        std::f64::consts::TAU / self.omega
    }

    /// Closed-form quasi-energy of the Fock state `nu`.
    pub fn quasi_energy(&self, nu: &[usize], hbar: f64) -> f64 {
        let ws = self.omega_s();
        let level = ws - self.eta() * self.omega_nl().powi(2) / (2.0 * ws);
        let occ: f64 = nu.iter().map(|&v| v as f64 + 0.5).sum();
        -self.e * self.field * self.xi() / 2.0 + self.kappa_tilde * self.v0 + hbar * level * occ
    }

    /// Closed-form geometric phase (unreduced).
    pub fn aa_phase(&self, hbar: f64) -> f64 {
        self.period() * self.omega.powi(2) * self.m * self.xi().powi(2) / hbar
    }

    /// Circular periodic orbit `(P(t), X(t))`.
    pub fn orbit(&self, t: f64) -> DVector<f64> {
        let (xi, w, m) = (self.xi(), self.omega, self.m);
        let (s, c) = (w * t).sin_cos();
        DVector::from_vec(vec![-m * w * xi * s, m * w * xi * c, 0.0, xi * c, xi * s, 0.0])
    }
}

/// Three-dimensional driven isotropic oscillator with a Gaussian kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExampleModel {
    pub params: ExampleParams,
    kernel: GaussianKernel,
}

impl ExampleModel {
    pub fn new(params: ExampleParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params, kernel: GaussianKernel { v0: params.v0, gamma: params.gamma } })
    }

    pub fn field(&self, t: f64) -> DVector<f64> {
        let (s, c) = (self.params.omega * t).sin_cos();
        DVector::from_vec(vec![self.params.field * c, self.params.field * s, 0.0])
    }

    /// The undriven transverse degree of freedom as a one-dimensional model.
    pub fn transverse_reduction(&self) -> TrapModel1D {
        let p = &self.params;
        TrapModel1D {
            m: p.m,
            k: p.k,
            a3: 0.0,
            a4: 0.0,
            drive: 0.0,
            omega: p.omega,
            v0: p.v0,
            gamma: p.gamma,
            kappa_tilde: p.kappa_tilde,
        }
    }
}

impl SymbolModel for ExampleModel {
    fn dim(&self) -> usize {
        3
    }
    fn period(&self) -> f64 {
        self.params.period()
    }
    fn kappa_tilde(&self) -> f64 {
        self.params.kappa_tilde
    }

    fn hamiltonian(&self, z: &DVector<f64>, t: f64) -> f64 {
        let (_, p, x) = split(z);
        let pr = &self.params;
        p.norm_squared() / (2.0 * pr.m) - pr.e * self.field(t).dot(&x) + pr.k * x.norm_squared() / 2.0
    }

    fn hamiltonian_grad(&self, z: &DVector<f64>, t: f64) -> DVector<f64> {
        let (n, p, x) = split(z);
        let pr = &self.params;
        let mut g = DVector::zeros(2 * n);
        g.rows_mut(0, n).copy_from(&(p / pr.m));
        g.rows_mut(n, n).copy_from(&(x * pr.k - self.field(t) * pr.e));
        g
    }

    fn hamiltonian_hess(&self, _z: &DVector<f64>, _t: f64) -> DMatrix<f64> {
        let pr = &self.params;
        DMatrix::from_diagonal(&DVector::from_fn(6, |i, _| if i < 3 { 1.0 / pr.m } else { pr.k }))
    }

    fn kernel(&self, z: &DVector<f64>, w: &DVector<f64>, _t: f64) -> f64 {
        self.kernel.value(z, w)
    }
    fn kernel_grad_z(&self, z: &DVector<f64>, w: &DVector<f64>, _t: f64) -> DVector<f64> {
        self.kernel.grad_z(z, w)
    }
    fn kernel_zz(&self, z: &DVector<f64>, w: &DVector<f64>, _t: f64) -> DMatrix<f64> {
        self.kernel.zz(z, w)
    }
    fn kernel_ww(&self, z: &DVector<f64>, w: &DVector<f64>, _t: f64) -> DMatrix<f64> {
        self.kernel.zz(z, w)
    }
    fn kernel_zw(&self, z: &DVector<f64>, w: &DVector<f64>, _t: f64) -> DMatrix<f64> {
        self.kernel.zw(z, w)
    }

    // H is quadratic and the kernel's third derivatives vanish at coincidence.
    fn trace_gradient(&self, z: &DVector<f64>, _d: &DMatrix<f64>, _t: f64) -> Option<DVector<f64>> {
        Some(DVector::zeros(z.len()))
    }
}

/// One-dimensional trap `p^2/2m + k x^2/2 + a3 x^3/3 + a4 x^4/4 - f cos(wt) x`
/// with a Gaussian self-interaction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrapModel1D {
    pub m: f64,
    pub k: f64,
    pub a3: f64,
    pub a4: f64,
    pub drive: f64,
    pub omega: f64,
    pub v0: f64,
    pub gamma: f64,
    pub kappa_tilde: f64,
}

impl TrapModel1D {
    pub fn validate(&self) -> Result<()> {
        if !(self.m > 0.0 && self.omega > 0.0 && self.gamma > 0.0) {
            return Err(Error::Config("trap model needs positive m, omega and gamma".into()));
        }
        Ok(())
    }

    /// External potential `U(x, t)`.
    pub fn potential(&self, x: f64, t: f64) -> f64 {
        self.k * x * x / 2.0 + self.a3 * x.powi(3) / 3.0 + self.a4 * x.powi(4) / 4.0
            - self.drive * (self.omega * t).cos() * x
    }

    pub fn potential_dx(&self, x: f64, t: f64) -> f64 {
        self.k * x + self.a3 * x * x + self.a4 * x.powi(3) - self.drive * (self.omega * t).cos()
    }

    pub fn potential_dxx(&self, x: f64) -> f64 {
        self.k + 2.0 * self.a3 * x + 3.0 * self.a4 * x * x
    }

    pub fn potential_dxxx(&self, x: f64) -> f64 {
        2.0 * self.a3 + 6.0 * self.a4 * x
    }

    /// Interaction kernel `K(u)`.
    pub fn kernel_u(&self, u: f64) -> f64 {
        self.v0 * (-u * u / (2.0 * self.gamma * self.gamma)).exp()
    }

    /// Level spacing of the undriven harmonic reduction (zero orbit).
    pub fn omega_s(&self) -> f64 {
        ((self.k - self.kappa_tilde * self.v0 / (self.gamma * self.gamma)) / self.m).sqrt()
    }

    fn gk(&self) -> GaussianKernel {
        GaussianKernel { v0: self.v0, gamma: self.gamma }
    }
}

impl SymbolModel for TrapModel1D {
    fn dim(&self) -> usize {
        1
    }
    fn period(&self) -> f64 {
        std::f64::consts::TAU / self.omega
    }
    fn kappa_tilde(&self) -> f64 {
        self.kappa_tilde
    }
    fn hamiltonian(&self, z: &DVector<f64>, t: f64) -> f64 {
        z[0] * z[0] / (2.0 * self.m) + self.potential(z[1], t)
    }
    fn hamiltonian_grad(&self, z: &DVector<f64>, t: f64) -> DVector<f64> {
        DVector::from_vec(vec![z[0] / self.m, self.potential_dx(z[1], t)])
    }
    fn hamiltonian_hess(&self, z: &DVector<f64>, _t: f64) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_vec(vec![1.0 / self.m, self.potential_dxx(z[1])]))
    }
    fn kernel(&self, z: &DVector<f64>, w: &DVector<f64>, _t: f64) -> f64 {
        self.gk().value(z, w)
    }
    fn kernel_grad_z(&self, z: &DVector<f64>, w: &DVector<f64>, _t: f64) -> DVector<f64> {
        self.gk().grad_z(z, w)
    }
    fn kernel_zz(&self, z: &DVector<f64>, w: &DVector<f64>, _t: f64) -> DMatrix<f64> {
        self.gk().zz(z, w)
    }
    fn kernel_ww(&self, z: &DVector<f64>, w: &DVector<f64>, _t: f64) -> DMatrix<f64> {
        self.gk().zz(z, w)
    }
    fn kernel_zw(&self, z: &DVector<f64>, w: &DVector<f64>, _t: f64) -> DMatrix<f64> {
        self.gk().zw(z, w)
    }
    fn trace_gradient(&self, z: &DVector<f64>, d: &DMatrix<f64>, _t: f64) -> Option<DVector<f64>> {
        Some(DVector::from_vec(vec![0.0, self.potential_dxxx(z[1]) * d[(1, 1)]]))
    }
}

/// Time-independent quadratic model `H = z^T H z / 2` with no interaction.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticModel {
    pub hess: DMatrix<f64>,
    pub period: f64,
}

impl QuadraticModel {
    pub fn new(hess: DMatrix<f64>, period: f64) -> Result<Self> {
        if hess.nrows() != hess.ncols() || !hess.nrows().is_multiple_of(2) || hess.nrows() == 0 {
            return Err(Error::Config("quadratic model needs a square even-sized matrix".into()));
        }
        if !(period > 0.0) {
            return Err(Error::Config("period must be positive".into()));
        }
        let sym = (&hess + hess.transpose()) * 0.5;
        Ok(Self { hess: sym, period })
    }

    /// `p^2/2m + m w^2 x^2/2` in one dimension.
    pub fn oscillator(m: f64, w: f64, period: f64) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0 / m, m * w * w])), period)
    }
}

impl SymbolModel for QuadraticModel {
    fn dim(&self) -> usize {
        self.hess.nrows() / 2
    }
    fn period(&self) -> f64 {
        self.period
    }
    fn kappa_tilde(&self) -> f64 {
        0.0
    }
    fn hamiltonian(&self, z: &DVector<f64>, _t: f64) -> f64 {
        0.5 * z.dot(&(&self.hess * z))
    }
    fn hamiltonian_grad(&self, z: &DVector<f64>, _t: f64) -> DVector<f64> {
        &self.hess * z
    }
    fn hamiltonian_hess(&self, _z: &DVector<f64>, _t: f64) -> DMatrix<f64> {
        self.hess.clone()
    }
    fn kernel(&self, _z: &DVector<f64>, _w: &DVector<f64>, _t: f64) -> f64 {
        0.0
    }
    fn kernel_grad_z(&self, z: &DVector<f64>, _w: &DVector<f64>, _t: f64) -> DVector<f64> {
        DVector::zeros(z.len())
    }
    fn kernel_zz(&self, z: &DVector<f64>, _w: &DVector<f64>, _t: f64) -> DMatrix<f64> {
        DMatrix::zeros(z.len(), z.len())
    }
    fn kernel_ww(&self, z: &DVector<f64>, _w: &DVector<f64>, _t: f64) -> DMatrix<f64> {
        DMatrix::zeros(z.len(), z.len())
    }
    fn kernel_zw(&self, z: &DVector<f64>, _w: &DVector<f64>, _t: f64) -> DMatrix<f64> {
        DMatrix::zeros(z.len(), z.len())
    }
    fn trace_gradient(&self, z: &DVector<f64>, _d: &DMatrix<f64>, _t: f64) -> Option<DVector<f64>> {
        Some(DVector::zeros(z.len()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fd_hess(f: impl Fn(&DVector<f64>) -> DVector<f64>, z: &DVector<f64>) -> DMatrix<f64> {
        let h = 1e-5;
        let n = z.len();
        let mut m = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[j] += h;
            zm[j] -= h;
            let col = (f(&zp) - f(&zm)) / (2.0 * h);
            m.set_column(j, &col);
        }
        m
    }

    #[test]
    fn derived_constants() {
        let p = ExampleParams::default();
        assert!((p.xi() - 1.0).abs() < 1e-15);
        assert!((p.omega0() - 2.0).abs() < 1e-15);
        assert!((p.omega_s() - 3f64.sqrt()).abs() < 1e-15);
        assert!((p.omega_nl() - 1.0).abs() < 1e-15);
        let lin = ExampleParams { kappa_tilde: 0.0, ..p };
        assert_eq!(lin.omega_nl(), 0.0);
        assert_eq!(lin.omega_s(), lin.omega0());
        let e0 = p.quasi_energy(&[0, 0, 0], 1.0) + 0.5;
        assert!((e0 - 2.1650635).abs() < 1e-7);
    }

    #[test]
    fn invalid_params_are_config_errors() {
        let bad = ExampleParams { k: -1.0, ..Default::default() };
        assert!(matches!(ExampleModel::new(bad), Err(Error::Config(_))));
        let res = ExampleParams { omega: 2.0, ..Default::default() };
        assert!(matches!(ExampleModel::new(res), Err(Error::Config(_))));
        let imag = ExampleParams { v0: 10.0, ..Default::default() };
        assert!(ExampleModel::new(imag).is_err());
    }

    #[test]
    fn kernel_blocks_at_coincidence() {
        let m = ExampleModel::new(ExampleParams::default()).unwrap();
        let z = DVector::from_vec(vec![0.3, -0.1, 0.2, 0.5, 0.7, -0.4]);
        let vzz = m.kernel_zz(&z, &z, 0.0);
        let vzw = m.kernel_zw(&z, &z, 0.0);
        assert!(vzz.view((0, 0), (3, 6)).amax() == 0.0);
        assert!((vzz.view((3, 3), (3, 3)) + vzw.view((3, 3), (3, 3))).amax() < 1e-15);
    }

    #[test]
    fn period_of_symbols() {
        let m = ExampleModel::new(ExampleParams::default()).unwrap();
        let z = DVector::from_vec(vec![0.3, -0.1, 0.2, 0.5, 0.7, -0.4]);
        let t = 0.37;
        let d = m.hamiltonian(&z, t) - m.hamiltonian(&z, t + m.period());
        assert!(d.abs() < 1e-12);
    }

    #[test]
    fn fd_trace_gradient_matches_cubic() {
        let cubic = TrapModel1D {
            m: 1.0, k: 0.0, a3: 1.0, a4: 0.0, drive: 0.0, omega: 1.0, v0: 0.0, gamma: 1.0, kappa_tilde: 0.0,
        };
        struct NoAnalytic(TrapModel1D);
        impl SymbolModel for NoAnalytic {
            fn dim(&self) -> usize { 1 }
            fn period(&self) -> f64 { self.0.period() }
            fn kappa_tilde(&self) -> f64 { 0.0 }
            fn hamiltonian(&self, z: &DVector<f64>, t: f64) -> f64 { self.0.hamiltonian(z, t) }
            fn hamiltonian_grad(&self, z: &DVector<f64>, t: f64) -> DVector<f64> { self.0.hamiltonian_grad(z, t) }
            fn hamiltonian_hess(&self, z: &DVector<f64>, t: f64) -> DMatrix<f64> { self.0.hamiltonian_hess(z, t) }
            fn kernel(&self, z: &DVector<f64>, w: &DVector<f64>, t: f64) -> f64 { self.0.kernel(z, w, t) }
            fn kernel_grad_z(&self, z: &DVector<f64>, w: &DVector<f64>, t: f64) -> DVector<f64> { self.0.kernel_grad_z(z, w, t) }
            fn kernel_zz(&self, z: &DVector<f64>, w: &DVector<f64>, t: f64) -> DMatrix<f64> { self.0.kernel_zz(z, w, t) }
            fn kernel_ww(&self, z: &DVector<f64>, w: &DVector<f64>, t: f64) -> DMatrix<f64> { self.0.kernel_ww(z, w, t) }
            fn kernel_zw(&self, z: &DVector<f64>, w: &DVector<f64>, t: f64) -> DMatrix<f64> { self.0.kernel_zw(z, w, t) }
        }
        let hbar = 0.1;
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![hbar / 2.0, hbar / 2.0]));
        let z = DVector::from_vec(vec![0.2, 0.7]);
        let g = trace_gradient(&NoAnalytic(cubic), &z, &d, 0.0);
        // d/dx [2x * hbar/2] = hbar
        assert!(g[0].abs() < 1e-9);
        assert!((g[1] - hbar).abs() < 1e-8);
        let ga = trace_gradient(&cubic, &z, &d, 0.0);
        assert!((ga[1] - hbar).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn hessians_match_fd(v in prop::collection::vec(-1.0f64..1.0, 12), t in 0.0f64..7.0) {
            let m = ExampleModel::new(ExampleParams::default()).unwrap();
            let z = DVector::from_column_slice(&v[..6]);
            let w = DVector::from_column_slice(&v[6..]);
            let hh = fd_hess(|zz| m.hamiltonian_grad(zz, t), &z);
            prop_assert!((hh - m.hamiltonian_hess(&z, t)).amax() < 1e-6);
            let vzz = fd_hess(|zz| m.kernel_grad_z(zz, &w, t), &z);
            prop_assert!((vzz - m.kernel_zz(&z, &w, t)).amax() < 1e-6);
            let vzw = fd_hess(|ww| m.kernel_grad_z(&z, ww, t), &w);
            prop_assert!((vzw - m.kernel_zw(&z, &w, t)).amax() < 1e-6);
            // V_ww from the gradient in w (kernel symmetric under z <-> w)
            let vww = fd_hess(|ww| m.kernel_grad_z(ww, &z, t), &w);
            prop_assert!((vww - m.kernel_ww(&z, &w, t)).amax() < 1e-6);
            let vzz = m.kernel_zz(&z, &w, t);
            prop_assert!((&vzz - vzz.transpose()).amax() < 1e-12);
        }

        #[test]
        fn trap_hessian_matches_fd(x in -2.0f64..2.0, p in -2.0f64..2.0, t in 0.0f64..7.0) {
            let m = TrapModel1D { m: 1.3, k: 4.0, a3: 0.3, a4: 0.5, drive: 1.0, omega: 1.0, v0: 1.0, gamma: 1.0, kappa_tilde: 1.0 };
            let z = DVector::from_vec(vec![p, x]);
            let hh = fd_hess(|zz| m.hamiltonian_grad(zz, t), &z);
            prop_assert!((hh - m.hamiltonian_hess(&z, t)).amax() < 1e-6);
        }
    }
}
