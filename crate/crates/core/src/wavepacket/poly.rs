//! Sparse complex polynomials in the displacement `dx`.

use std::collections::BTreeMap;

use nalgebra::DVector;

use crate::phase::C64;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Poly {
    n: usize,
    terms: BTreeMap<Vec<u32>, C64>,
}

impl Poly {
    pub fn constant(n: usize, c: C64) -> Self {
        let mut terms = BTreeMap::new();
        terms.insert(vec![0; n], c);
        Self { n, terms }
    }

    pub fn zero(n: usize) -> Self {
        Self { n, terms: BTreeMap::new() }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|e| e.iter().sum()).max().unwrap_or(0)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Vec<u32>, &C64)> {
        self.terms.iter()
    }

    fn add_term(&mut self, e: Vec<u32>, c: C64) {
        let v = self.terms.entry(e).or_insert(C64::new(0.0, 0.0));
        *v += c;
    }

    pub fn scale(&self, s: C64) -> Self {
        Self { n: self.n, terms: self.terms.iter().map(|(e, c)| (e.clone(), c * s)).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (e, c) in &other.terms {
            out.add_term(e.clone(), *c);
        }
        out
    }

    /// Product with the linear form `sum_i l_i dx_i`.
    pub fn mul_linear(&self, l: &DVector<C64>) -> Self {
        let mut out = Self::zero(self.n);
        for (e, c) in &self.terms {
            for i in 0..self.n {
                if l[i] != C64::new(0.0, 0.0) {
                    let mut e2 = e.clone();
                    e2[i] += 1;
                    out.add_term(e2, c * l[i]);
                }
            }
        }
        out
    }

    /// Directional derivative `sum_i v_i d/dx_i`.
    pub fn directional(&self, v: &DVector<C64>) -> Self {
        let mut out = Self::zero(self.n);
        for (e, c) in &self.terms {
            for i in 0..self.n {
                if e[i] > 0 {
                    let mut e2 = e.clone();
                    e2[i] -= 1;
                    out.add_term(e2, c * v[i] * e[i] as f64);
                }
            }
        }
        out
    }

    pub fn eval(&self, dx: &[f64]) -> C64 {
        self.terms
            .iter()
            .map(|(e, c)| c * e.iter().zip(dx).map(|(&k, &x)| x.powi(k as i32)).product::<f64>())
            .sum()
    }

    /// Drops coefficients smaller than `tol` times the largest.
    pub fn prune(mut self, tol: f64) -> Self {
        let big = self.terms.values().map(|c| c.norm()).fold(0.0, f64::max);
        self.terms.retain(|_, c| c.norm() > tol * big);
        self
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.add(&other.scale(C64::new(-1.0, 0.0))).terms.values().map(|c| c.norm()).fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn algebra() {
        let one = Poly::constant(2, C64::new(1.0, 0.0));
        let l = DVector::from_vec(vec![C64::new(2.0, 0.0), C64::new(0.0, 1.0)]);
        let p = one.mul_linear(&l).mul_linear(&l);
        // (2x + i y)^2 at (1, 2) = (2 + 2i)^2 = 8i
        assert!((p.eval(&[1.0, 2.0]) - C64::new(0.0, 8.0)).norm() < 1e-14);
        assert_eq!(p.degree(), 2);
        let d = p.directional(&DVector::from_vec(vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)]));
        // d/dx = 4 (2x + i y)
        assert!((d.eval(&[1.0, 2.0]) - C64::new(8.0, 8.0)).norm() < 1e-14);
    }
}
