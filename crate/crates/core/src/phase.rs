//! Real and complexified phase space with momentum-first ordering `z = (p, x)`.
//!
//! All block indices (`pp`, `px`, `xp`, `xx`) used across the crate follow this
//! ordering, and the symplectic unit is `J = [[0, -I], [I, 0]]`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// A point of the real phase space `R^{2n}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub p: DVector<f64>,
    pub x: DVector<f64>,
}

impl PhasePoint {
    pub fn new(p: DVector<f64>, x: DVector<f64>) -> Result<Self> {
        if p.len() != x.len() || p.is_empty() {
            return Err(Error::Contract(format!(
                "phase point needs equal non-zero block sizes, got {} and {}",
                p.len(),
                x.len()
            )));
        }
        if p.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Contract("phase point has non-finite entries".into()));
        }
        Ok(Self { p, x })
    }

    pub fn zeros(n: usize) -> Self {
        Self { p: DVector::zeros(n), x: DVector::zeros(n) }
    }

    pub fn from_slices(p: &[f64], x: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(p), DVector::from_column_slice(x))
    }

    pub fn dim(&self) -> usize {
        self.p.len()
    }

    /// Stacked `(p, x)` vector of length `2n`.
    pub fn to_vector(&self) -> DVector<f64> {
        let n = self.dim();
        DVector::from_fn(2 * n, |i, _| if i < n { self.p[i] } else { self.x[i - n] })
    }

    pub fn from_vector(z: &DVector<f64>) -> Self {
        let n = z.len() / 2;
        Self { p: z.rows(0, n).into_owned(), x: z.rows(n, n).into_owned() }
    }
}

/// A vector of the complexified phase space, `a = (W, Z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexPhaseVector {
    pub w: DVector<C64>,
    pub z: DVector<C64>,
}

impl ComplexPhaseVector {
    pub fn new(w: DVector<C64>, z: DVector<C64>) -> Result<Self> {
        if w.len() != z.len() || w.is_empty() {
            return Err(Error::Contract("complex phase vector blocks differ in size".into()));
        }
        if w.iter().chain(z.iter()).any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::Contract("complex phase vector has non-finite entries".into()));
        }
        Ok(Self { w, z })
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn to_vector(&self) -> DVector<C64> {
        let n = self.dim();
        DVector::from_fn(2 * n, |i, _| if i < n { self.w[i] } else { self.z[i - n] })
    }

    pub fn from_vector(a: &DVector<C64>) -> Self {
        let n = a.len() / 2;
        Self { w: a.rows(0, n).into_owned(), z: a.rows(n, n).into_owned() }
    }

    pub fn from_real(v: &DVector<f64>) -> Self {
        Self::from_vector(&v.map(|r| C64::new(r, 0.0)))
    }

    pub fn conj(&self) -> Self {
        Self { w: self.w.map(|c| c.conj()), z: self.z.map(|c| c.conj()) }
    }
}

/// `J = [[0, -I], [I, 0]]` of size `2n x 2n`.
pub fn symplectic_unit(n: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        j[(i, n + i)] = -1.0;
        j[(n + i, i)] = 1.0;
    }
    j
}

/// Skew-scalar product `{a, b} = <W_a, Z_b> - <Z_a, W_b>`, bilinear, no conjugation.
pub fn skew_product(a: &ComplexPhaseVector, b: &ComplexPhaseVector) -> Result<C64> {
    if a.dim() != b.dim() {
        return Err(Error::Contract(format!(
            "skew product of vectors with dimensions {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(skew(&a.to_vector(), &b.to_vector()))
}

/// Skew product on stacked `(W, Z)` vectors. Lengths must agree.
pub fn skew(a: &DVector<C64>, b: &DVector<C64>) -> C64 {
    let n = a.len() / 2;
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..n {
        acc += a[i] * b[n + i] - a[n + i] * b[i];
    }
    acc
}

/// Real skew product `{u, v} = <p_u, x_v> - <x_u, p_v>`.
pub fn skew_real(u: &DVector<f64>, v: &DVector<f64>) -> f64 {
    let n = u.len() / 2;
    (0..n).map(|i| u[i] * v[n + i] - u[n + i] * v[i]).sum()
}

/// Max-abs entry of `A^T J A - J`.
pub fn symplectic_defect(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows() / 2;
    let j = symplectic_unit(n);
    (a.transpose() * &j * a - j).amax()
}

/// Hermitian matrix `Delta - (i hbar / 2) J` used by the uncertainty relation.
pub fn uncertainty_matrix(delta: &DMatrix<f64>, hbar: f64) -> DMatrix<C64> {
    let n = delta.nrows() / 2;
    let j = symplectic_unit(n);
    DMatrix::from_fn(delta.nrows(), delta.ncols(), |r, c| {
        C64::new(delta[(r, c)], -0.5 * hbar * j[(r, c)])
    })
}

pub fn to_complex(m: &DMatrix<f64>) -> DMatrix<C64> {
    m.map(|v| C64::new(v, 0.0))
}

/// Wraps an angle into `[0, 2 pi)`.
pub fn wrap_two_pi(theta: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let r = theta.rem_euclid(two_pi);
    if r >= two_pi {
        0.0
    } else {
        r
    }
}

/// Distance between two angles on the circle.
pub fn angle_distance(a: f64, b: f64) -> f64 {
    let d = wrap_two_pi(a - b);
    d.min(std::f64::consts::TAU - d)
}

/// Real symplectic matrix `exp(J S)` for symmetric `S`, by scaling and squaring.
pub fn symplectic_exp(s: &DMatrix<f64>) -> DMatrix<f64> {
    let n = s.nrows() / 2;
    let sym = (s + s.transpose()) * 0.5;
    let gen = symplectic_unit(n) * sym;
    let norm = gen.amax() * gen.nrows() as f64;
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let scaled = &gen / 2f64.powi(squarings);
    let dim = gen.nrows();
    let mut term = DMatrix::<f64>::identity(dim, dim);
    let mut acc = DMatrix::<f64>::identity(dim, dim);
    for k in 1..=20 {
        term = &term * &scaled / k as f64;
        acc += &term;
    }
    for _ in 0..squarings {
        acc = &acc * &acc;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cv(w: &[C64], z: &[C64]) -> ComplexPhaseVector {
        ComplexPhaseVector::new(DVector::from_column_slice(w), DVector::from_column_slice(z))
            .unwrap()
    }

    #[test]
    fn unit_matrix_identities() {
        let j = symplectic_unit(3);
        let id = DMatrix::<f64>::identity(6, 6);
        assert_eq!(&j * &j, -&id);
        assert_eq!(j.transpose(), -&j);
    }

    #[test]
    fn skew_of_simple_pair() {
        let i = C64::i();
        let one = C64::new(1.0, 0.0);
        let zero = C64::new(0.0, 0.0);
        let a = cv(&[one], &[i]);
        let b = cv(&[zero], &[one]);
        assert_eq!(skew_product(&a, &b).unwrap(), one);
        assert_eq!(skew_product(&a, &a).unwrap(), zero);
    }

    #[test]
    fn example_mode_is_normalized() {
        let g = 3f64.sqrt().sqrt();
        let zero = C64::new(0.0, 0.0);
        let a = cv(
            &[C64::new(g, 0.0), zero, zero],
            &[C64::new(0.0, -1.0 / g), zero, zero],
        );
        let s = skew_product(&a, &a.conj()).unwrap();
        assert!((s - C64::new(0.0, 2.0)).norm() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let one = C64::new(1.0, 0.0);
        let a = cv(&[one], &[one]);
        let b = cv(&[one, one], &[one, one]);
        assert!(matches!(skew_product(&a, &b), Err(Error::Contract(_))));
    }

    #[test]
    fn phase_point_rejects_bad_input() {
        assert!(PhasePoint::from_slices(&[1.0], &[1.0, 2.0]).is_err());
        assert!(PhasePoint::from_slices(&[f64::NAN], &[1.0]).is_err());
        let p = PhasePoint::from_slices(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(PhasePoint::from_vector(&p.to_vector()), p);
    }

    fn sym_strategy(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
        prop::collection::vec(-1.0f64..1.0, 4 * n * n)
            .prop_map(move |v| DMatrix::from_vec(2 * n, 2 * n, v))
    }

    fn cvec_strategy(n: usize) -> impl Strategy<Value = DVector<C64>> {
        prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 2 * n)
            .prop_map(|v| DVector::from_iterator(v.len(), v.into_iter().map(|(r, i)| C64::new(r, i))))
    }

    proptest! {
        #[test]
        fn skew_is_antisymmetric_and_bilinear(a in cvec_strategy(2), b in cvec_strategy(2), c in cvec_strategy(2), s in -3.0f64..3.0) {
            prop_assert!((skew(&a, &b) + skew(&b, &a)).norm() < 1e-12);
            let lhs = skew(&(&a * C64::new(s, 0.0) + &c), &b);
            let rhs = skew(&a, &b) * s + skew(&c, &b);
            prop_assert!((lhs - rhs).norm() < 1e-10);
        }

        #[test]
        fn skew_is_symplectic_invariant(s in sym_strategy(2), a in cvec_strategy(2), b in cvec_strategy(2)) {
            let m = symplectic_exp(&s);
            prop_assert!(symplectic_defect(&m) < 1e-9);
            let mc = to_complex(&m);
            let lhs = skew(&(&mc * &a), &(&mc * &b));
            let rhs = skew(&a, &b);
            prop_assert!((lhs - rhs).norm() < 1e-8 * (1.0 + rhs.norm()));
        }
    }
}
