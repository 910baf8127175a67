//! Monodromy matrices, normalized Floquet modes and the periodic `b_k` coefficients.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::ehrenfest::{integrate_variational_a, Orbit, Variational};
use crate::error::{Error, Result};
use crate::linalg::{complex_null_space, det_c, real_null_space, unwrap_phase};
use crate::model::{variational_hessian, SymbolModel, VariationalKind};
use crate::phase::{skew, skew_real, symplectic_unit, to_complex, C64};
use crate::quad::cumulative;

#[derive(Debug, Clone, Copy, Serialize, serde::Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct FloquetOptions {
    /// Allowed `| |lambda| - 1 |`.
    pub stability_tol: f64,
    /// Multipliers closer than this are treated as one eigenvalue.
    pub cluster_tol: f64,
    /// `|exp(i Omega T) - 1|` below this is a resonance.
    pub resonance_tol: f64,
}

impl Default for FloquetOptions {
    fn default() -> Self {
        Self { stability_tol: 1e-6, cluster_tol: 1e-6, resonance_tol: 1e-8 }
    }
}

/// A normalized Floquet solution `a(t+T) = exp(i Omega T) a(t)`.
#[derive(Debug, Clone)]
pub struct FloquetMode {
    pub a0: DVector<C64>,
    pub omega: f64,
    pub multiplier: C64,
    /// `a(t_j)` on the caller's time grid.
    pub samples: Vec<DVector<C64>>,
}

impl FloquetMode {
    /// `exp(-i Omega t) a(t)`, the periodic part.
    pub fn reduced(&self, j: usize, t: f64) -> DVector<C64> {
        &self.samples[j] * C64::from_polar(1.0, -self.omega * t)
    }
}

/// Uniform grid starting at zero that contains the period as a node.
pub(crate) fn period_index(times: &[f64], period: f64) -> Result<usize> {
    if times.len() < 5 || times[0] != 0.0 {
        return Err(Error::Contract("time grid must start at 0 and hold at least 5 samples".into()));
    }
    let h = times[1] - times[0];
    let p = (period / h).round() as usize;
    if p >= times.len() || (times[p] - period).abs() > 1e-9 * period {
        return Err(Error::Contract("time grid must contain the period as a node".into()));
    }
    Ok(p)
}

/// `A(T)` of the chosen variational system; the orbit must close after one period.
pub fn monodromy_matrix(
    model: &dyn SymbolModel,
    orbit: &Orbit,
    kind: VariationalKind,
    tol: f64,
) -> Result<DMatrix<f64>> {
    let t = model.period();
    let z0 = orbit.state(0.0)?;
    let zt = orbit.state(t)?;
    let gap = (&zt - &z0).amax();
    if gap > 1e-6 * z0.amax().max(1.0) {
        return Err(Error::Contract(format!("orbit is not periodic: |z(T) - z(0)| = {gap:e}")));
    }
    integrate_variational_a(model, orbit, kind, t, tol)?.matrix(t)
}

/// Multiplier classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityClass {
    Stable,
    Unstable,
    /// On the unit circle at `+1` or `-1`, where modes may collide.
    Marginal,
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    pub multipliers: Vec<[f64; 2]>,
    pub moduli: Vec<f64>,
    pub classes: Vec<StabilityClass>,
    pub stable: bool,
    pub degenerate: bool,
}

pub fn classify_stability(m: &DMatrix<f64>, tol: f64) -> StabilityReport {
    let ev = m.complex_eigenvalues();
    let mut classes = Vec::new();
    for l in ev.iter() {
        let c = if (l.norm() - 1.0).abs() > tol {
            StabilityClass::Unstable
        } else if (l - 1.0).norm() <= tol.sqrt() || (l + 1.0).norm() <= tol.sqrt() {
            StabilityClass::Marginal
        } else {
            StabilityClass::Stable
        };
        classes.push(c);
    }
    StabilityReport {
        multipliers: ev.iter().map(|l| [l.re, l.im]).collect(),
        moduli: ev.iter().map(|l| l.norm()).collect(),
        stable: classes.iter().all(|c| *c != StabilityClass::Unstable),
        degenerate: classes.contains(&StabilityClass::Marginal),
        classes,
    }
}

fn cluster(ev: &[C64], tol: f64) -> Vec<(C64, usize)> {
    let mut groups: Vec<(C64, Vec<C64>)> = Vec::new();
    for &l in ev {
        match groups.iter_mut().find(|(c, _)| (c - l).norm() <= tol) {
            Some((c, members)) => {
                members.push(l);
                *c = members.iter().sum::<C64>() / members.len() as f64;
            }
            None => groups.push((l, vec![l])),
        }
    }
    groups.into_iter().map(|(c, m)| (c, m.len())).collect()
}

/// Rotates a skew-orthonormal family by a unitary so that a fixed set of pivot
/// rows becomes lower triangular with a positive diagonal.
fn canonicalize(modes: Vec<DVector<C64>>) -> Vec<DVector<C64>> {
    let k = modes.len();
    if k == 0 {
        return modes;
    }
    let a = DMatrix::from_columns(&modes);
    let d = a.nrows();
    let mut res: Vec<DVector<C64>> = (0..d).map(|i| a.row(i).transpose()).collect();
    let mut chosen = Vec::new();
    for _ in 0..k {
        let mut best = None::<(usize, f64)>;
        for (i, r) in res.iter().enumerate() {
            if chosen.contains(&i) {
                continue;
            }
            let nr = r.norm();
            match best {
                Some((_, bn)) if nr <= bn * (1.0 + 1e-9) => {}
                _ => best = Some((i, nr)),
            }
        }
        let (i, nr) = best.expect("enough rows");
        chosen.push(i);
        let q = &res[i] / C64::new(nr, 0.0);
        for r in res.iter_mut() {
            let proj = q.dotc(r);
            *r -= &q * proj;
        }
    }
    chosen.sort_unstable();
    let s = DMatrix::from_fn(k, k, |r, c| a[(chosen[r], c)]);
    let mut q = s.adjoint().qr().q();
    let sq = &s * &q;
    for c in 0..k {
        let v = sq[(c, c)];
        if v.norm() > 0.0 {
            let ph = v / v.norm();
            let mut col = q.column_mut(c);
            col *= ph.conj();
        }
    }
    let out = a * q;
    (0..k).map(|c| out.column(c).into_owned()).collect()
}

/// Skew-orthonormalizes a basis of an invariant subspace on which the form
/// `{u, v*}/2i` is definite. Returns the modes and whether the basis was conjugated.
fn normalize_definite(mut u: Vec<DVector<C64>>) -> Result<(Vec<DVector<C64>>, bool)> {
    let k = u.len();
    let gram = |u: &[DVector<C64>]| {
        let g = DMatrix::from_fn(k, k, |j, l| skew(&u[j], &u[l].map(|c| c.conj())) / C64::new(0.0, 2.0));
        (&g + g.adjoint()) * C64::new(0.5, 0.0)
    };
    let mut g = gram(&u);
    let eig = g.clone().symmetric_eigen();
    let (lo, hi) = (eig.eigenvalues.min(), eig.eigenvalues.max());
    let scale = lo.abs().max(hi.abs());
    let mut conjugated = false;
    if hi < 0.0 {
        u = u.iter().map(|v| v.map(|c| c.conj())).collect();
        g = gram(&u);
        conjugated = true;
    }
    if lo * hi <= 0.0 || lo.abs().min(hi.abs()) < 1e-8 * scale {
        return Err(Error::Degeneracy(format!(
            "skew form on the eigenspace is indefinite or singular (eigenvalues {lo:e}..{hi:e})"
        )));
    }
    let eig = g.symmetric_eigen();
    let modes = (0..k)
        .map(|m| {
            let vk = eig.eigenvectors.column(m);
            let s = 1.0 / eig.eigenvalues[m].sqrt();
            let mut a = DVector::zeros(u[0].len());
            for j in 0..k {
                a += &u[j] * (vk[j].conj() * s);
            }
            a
        })
        .collect();
    Ok((canonicalize(modes), conjugated))
}

/// Modes of a complex eigenvalue cluster `mu` (with `Im mu > 0`) of `mat`.
fn complex_cluster_modes(mat: &DMatrix<f64>, mu: C64, mult: usize) -> Result<(Vec<DVector<C64>>, bool)> {
    let d = mat.nrows();
    let shifted = to_complex(mat) - DMatrix::<C64>::identity(d, d) * mu;
    let (u, s, smax) = complex_null_space(&shifted, mult);
    if s.iter().any(|&v| v > 1e-7 * smax.max(1.0)) {
        return Err(Error::Degeneracy(format!(
            "eigenvalue {mu} has a deficient eigenspace (singular values {s:?})"
        )));
    }
    normalize_definite(u)
}

/// Symplectic Gram–Schmidt on a real invariant subspace, seeded by projecting
/// the canonical basis (p_1, x_1, p_2, x_2, ...).
fn real_cluster_modes(basis: &[DVector<f64>]) -> Result<Vec<DVector<C64>>> {
    let d = basis[0].len();
    let n = d / 2;
    let nb = DMatrix::from_columns(basis);
    let proj = &nb * nb.transpose();
    let mut cands: Vec<DVector<f64>> = Vec::new();
    for k in 0..n {
        for idx in [k, n + k] {
            let mut e = DVector::zeros(d);
            e[idx] = 1.0;
            cands.push(&proj * e);
        }
    }
    let mut modes = Vec::new();
    let want = basis.len() / 2;
    while modes.len() < want {
        let Some(ie) = (0..cands.len()).max_by(|&a, &b| cands[a].norm().partial_cmp(&cands[b].norm()).unwrap().then(b.cmp(&a))) else {
            break;
        };
        if cands[ie].norm() < 1e-8 {
            break;
        }
        let e = cands.remove(ie);
        let Some(jf) = (0..cands.len()).max_by(|&a, &b| {
            skew_real(&e, &cands[a]).abs().partial_cmp(&skew_real(&e, &cands[b]).abs()).unwrap().then(b.cmp(&a))
        }) else {
            break;
        };
        let mut f = cands.remove(jf);
        let mut ef = skew_real(&e, &f);
        if ef.abs() < 1e-8 {
            return Err(Error::Degeneracy("real eigenspace is not symplectic".into()));
        }
        if ef > 0.0 {
            f = -f;
            ef = -ef;
        }
        let s = (-2.0 / ef).sqrt();
        let (e, f) = (e * s, f * s);
        for v in cands.iter_mut() {
            let beta = skew_real(v, &e) / -2.0;
            let alpha = -skew_real(v, &f) / -2.0;
            *v += &e * alpha + &f * beta;
        }
        let a = (e.map(|r| C64::new(r, 0.0)) + f.map(|r| C64::new(0.0, r))) / C64::new(2f64.sqrt(), 0.0);
        modes.push(a);
    }
    if modes.len() != want {
        return Err(Error::Degeneracy("could not build a symplectic basis of the real eigenspace".into()));
    }
    Ok(canonicalize(modes))
}

fn largest_component(a: &DVector<C64>) -> usize {
    let mut best = 0;
    for i in 1..a.len() {
        if a[i].norm() > a[best].norm() * (1.0 + 1e-9) {
            best = i;
        }
    }
    best
}

/// Normalized Floquet modes of `M` propagated with `a_samples[j] = A(t_j)`.
///
/// `mean_hessian` (the period average of the variational Hessian) picks
/// positive-frequency modes when `M = +-I`, where every vector is a Floquet solution.
pub fn floquet_modes(
    m: &DMatrix<f64>,
    period: f64,
    times: &[f64],
    a_samples: &[DMatrix<f64>],
    mean_hessian: Option<&DMatrix<f64>>,
    opts: &FloquetOptions,
) -> Result<Vec<FloquetMode>> {
    let d = m.nrows();
    let n = d / 2;
    let p = period_index(times, period)?;
    if a_samples.len() != times.len() {
        return Err(Error::Contract("one fundamental matrix per time sample is required".into()));
    }
    let ev: Vec<C64> = m.complex_eigenvalues().iter().copied().collect();
    if ev.iter().any(|l| (l.norm() - 1.0).abs() > opts.stability_tol) {
        return Err(Error::Instability { multipliers: ev });
    }
    let mut raw: Vec<(DVector<C64>, C64)> = Vec::new();
    for (mu, mult) in cluster(&ev, opts.cluster_tol) {
        if mu.im.abs() <= opts.cluster_tol {
            let lam = C64::new(mu.re.signum(), 0.0);
            let full = mult == d;
            let hint_modes = match mean_hessian {
                Some(h) if full && h.clone().cholesky().is_some() => Some(normal_modes(&(symplectic_unit(n) * h), opts)?),
                _ => None,
            };
            let modes = match hint_modes {
                Some(v) => v,
                None => {
                    let (basis, s, smax) = real_null_space(&(m - DMatrix::identity(d, d) * lam.re), mult);
                    if mult % 2 != 0 || s.iter().any(|&v| v > 1e-7 * smax.max(1.0)) {
                        return Err(Error::Degeneracy(format!("multiplier {lam} is not semisimple")));
                    }
                    real_cluster_modes(&basis)?
                }
            };
            raw.extend(modes.into_iter().map(|a| (a, lam)));
        } else if mu.im > 0.0 {
            let (modes, conj) = complex_cluster_modes(m, mu, mult)?;
            let lam = if conj { mu.conj() } else { mu };
            raw.extend(modes.into_iter().map(|a| (a, lam / lam.norm())));
        }
    }
    if raw.len() != n {
        return Err(Error::Degeneracy(format!("found {} modes, expected {n}", raw.len())));
    }
    raw.sort_by_key(|(a, _)| largest_component(a));

    let mut modes: Vec<FloquetMode> = raw
        .into_iter()
        .map(|(a0, lam)| {
            let samples = a_samples.iter().map(|a| to_complex(a) * &a0).collect();
            FloquetMode { a0, omega: 0.0, multiplier: lam, samples }
        })
        .collect();

    // Frequency branch from the continuous phase of the most robust coordinate component.
    let mut reliability = Vec::new();
    for mode in modes.iter_mut() {
        let (idx, minmod) = (n..d)
            .map(|i| (i, mode.samples[..=p].iter().map(|a| a[i].norm()).fold(f64::INFINITY, f64::min)))
            .fold((n, -1.0), |acc, x| if x.1 > acc.1 * (1.0 + 1e-9) { x } else { acc });
        let comp: Vec<C64> = mode.samples[..=p].iter().map(|a| a[idx]).collect();
        let phases = unwrap_phase(&comp, std::f64::consts::FRAC_PI_2)
            .map_err(|(index, jump)| Error::Undersampled { index, jump })?;
        let winding = phases[p] - phases[0];
        let arg = mode.multiplier.arg();
        let k = ((winding - arg) / TAU).round();
        mode.omega = (arg + TAU * k) / period;
        reliability.push(minmod);
    }

    // The frequency sum must match the winding of det C.
    let dets: Vec<C64> = (0..=p)
        .map(|j| {
            let c = DMatrix::from_fn(n, n, |r, col| modes[col].samples[j][n + r]);
            det_c(&c)
        })
        .collect();
    if dets.iter().all(|v| v.norm() > 1e-12) {
        if let Ok(ph) = unwrap_phase(&dets, std::f64::consts::FRAC_PI_2) {
            let sum: f64 = modes.iter().map(|m| m.omega * period).sum();
            let shift = ((ph[p] - ph[0] - sum) / TAU).round();
            if shift != 0.0 {
                let worst = (0..n).min_by(|&a, &b| reliability[a].partial_cmp(&reliability[b]).unwrap()).unwrap();
                modes[worst].omega += TAU * shift / period;
            }
        }
    }
    Ok(modes)
}

/// Positive-frequency normal modes of the constant system `a' = K a`.
fn normal_modes(k: &DMatrix<f64>, opts: &FloquetOptions) -> Result<Vec<DVector<C64>>> {
    let ev: Vec<C64> = k.complex_eigenvalues().iter().copied().collect();
    let scale = ev.iter().map(|l| l.norm()).fold(1.0, f64::max);
    let mut out = Vec::new();
    for (mu, mult) in cluster(&ev, opts.cluster_tol * scale) {
        if mu.im > opts.cluster_tol * scale {
            let (modes, _) = complex_cluster_modes(k, C64::new(0.0, mu.im), mult)?;
            out.extend(modes);
        }
    }
    Ok(out)
}

/// Largest deviation from `{a_k, a_l} = 0`, `{a_k, a_l*} = 2i delta_kl` over all samples.
pub fn normalization_residual(modes: &[FloquetMode]) -> Vec<f64> {
    let ns = modes.first().map_or(0, |m| m.samples.len());
    (0..ns)
        .map(|j| {
            let mut worst: f64 = 0.0;
            for (k, mk) in modes.iter().enumerate() {
                for (l, ml) in modes.iter().enumerate() {
                    let a = &mk.samples[j];
                    let b = &ml.samples[j];
                    let target = if k == l { C64::new(0.0, 2.0) } else { C64::new(0.0, 0.0) };
                    worst = worst.max((skew(a, &b.map(|c| c.conj())) - target).norm());
                    worst = worst.max(skew(a, b).norm());
                }
            }
            worst
        })
        .collect()
}

/// Everything the downstream modules need from one variational system.
#[derive(Debug, Clone)]
pub struct FloquetSystem {
    pub kind: VariationalKind,
    pub period: f64,
    pub times: Vec<f64>,
    pub monodromy: DMatrix<f64>,
    pub modes: Vec<FloquetMode>,
    pub a_samples: Vec<DMatrix<f64>>,
    pub variational: Variational,
}

impl FloquetSystem {
    pub fn omegas(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.omega).collect()
    }

    pub fn period_index(&self) -> usize {
        period_index(&self.times, self.period).expect("validated at construction")
    }

    pub fn report(&self, opts: &FloquetOptions) -> FloquetReport {
        let st = classify_stability(&self.monodromy, opts.stability_tol);
        let res = normalization_residual(&self.modes);
        FloquetReport {
            kind: self.kind,
            multipliers: st.multipliers,
            omegas: self.omegas(),
            stable: st.stable,
            normalization_residuals: vec![res.iter().cloned().fold(0.0, f64::max)],
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FloquetReport {
    pub kind: VariationalKind,
    pub multipliers: Vec<[f64; 2]>,
    pub omegas: Vec<f64>,
    pub stable: bool,
    pub normalization_residuals: Vec<f64>,
}

/// Integrates the variational system along `orbit`, samples it on `times` and builds the modes.
pub fn analyze(
    model: &dyn SymbolModel,
    orbit: &Orbit,
    kind: VariationalKind,
    times: &[f64],
    tol: f64,
    opts: &FloquetOptions,
) -> Result<FloquetSystem> {
    let period = model.period();
    let p = period_index(times, period)?;
    let t_end = *times.last().expect("non-empty");
    let var = integrate_variational_a(model, orbit, kind, t_end, tol)?;
    let a_samples: Vec<DMatrix<f64>> = times.iter().map(|&t| var.matrix(t)).collect::<Result<_>>()?;
    let monodromy = a_samples[p].clone();
    let d = monodromy.nrows();
    let mut mean = DMatrix::zeros(d, d);
    for &t in &times[..p] {
        mean += variational_hessian(model, &orbit.state(t)?, t, kind);
    }
    mean /= p as f64;
    let modes = floquet_modes(&monodromy, period, times, &a_samples, Some(&mean), opts)?;
    Ok(FloquetSystem { kind, period, times: times.to_vec(), monodromy, modes, a_samples, variational: var })
}

/// `b_k(t)` samples and the constants `B_k` that make `Z1` periodic.
#[derive(Debug, Clone, Serialize)]
pub struct BCoefficients {
    #[serde(skip)]
    pub b: Vec<Vec<C64>>,
    pub big_b: Vec<C64>,
    pub integral_at_period: Vec<C64>,
    /// Modes that are resonant but unforced, for which `B_k = 0` was chosen.
    pub resonant_unforced: Vec<usize>,
}

pub fn periodic_b_coefficients(
    f: &[DVector<f64>],
    modes: &[FloquetMode],
    times: &[f64],
    period: f64,
    opts: &FloquetOptions,
) -> Result<BCoefficients> {
    let p = period_index(times, period)?;
    if f.len() != times.len() {
        return Err(Error::Contract("one drive sample per time node is required".into()));
    }
    let h = times[1] - times[0];
    let scale = f.iter().map(|v| v.amax()).fold(0.0, f64::max).max(1.0);
    let mut b = Vec::new();
    let mut big_b = Vec::new();
    let mut ints = Vec::new();
    let mut flagged = Vec::new();
    for (k, mode) in modes.iter().enumerate() {
        let g: Vec<C64> = f
            .iter()
            .zip(&mode.samples)
            .map(|(fv, a)| skew(&fv.map(|r| C64::new(r, 0.0)), &a.map(|c| c.conj())) / C64::new(0.0, 2.0))
            .collect();
        let integral = cumulative(&g, h)?;
        let ik = integral[p];
        let denom = C64::from_polar(1.0, -mode.omega * period) - 1.0;
        let bk = if denom.norm() < opts.resonance_tol {
            if ik.norm() <= 1e-10 * scale * period {
                flagged.push(k);
                C64::new(0.0, 0.0)
            } else {
                return Err(Error::Resonance { k, distance: denom.norm() });
            }
        } else {
            ik / denom
        };
        b.push(integral.iter().map(|v| v + bk).collect());
        big_b.push(bk);
        ints.push(ik);
    }
    Ok(BCoefficients { b, big_b, integral_at_period: ints, resonant_unforced: flagged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ehrenfest::integrate_z0;
    use crate::model::{ExampleModel, ExampleParams, QuadraticModel};
    use crate::phase::PhasePoint;
    use std::f64::consts::PI;

    fn grid(period: f64, n: usize, periods: usize) -> Vec<f64> {
        (0..=n * periods).map(|j| period * j as f64 / n as f64).collect()
    }

    fn oscillator_system(m: f64, w: f64, period: f64) -> FloquetSystem {
        let q = QuadraticModel::oscillator(m, w, period).unwrap();
        let o = integrate_z0(&q, &PhasePoint::zeros(1), (0.0, 2.0 * period), 1e-12).unwrap();
        analyze(&q, &o, VariationalKind::Plain, &grid(period, 2000, 2), 1e-12, &FloquetOptions::default()).unwrap()
    }

    #[test]
    fn constant_coefficient_monodromy() {
        let (m, w, t) = (1.0, 3f64.sqrt(), 2.0 * PI);
        let q = QuadraticModel::oscillator(m, w, t).unwrap();
        let o = integrate_z0(&q, &PhasePoint::zeros(1), (0.0, t), 1e-12).unwrap();
        let mm = monodromy_matrix(&q, &o, VariationalKind::Plain, 1e-12).unwrap();
        let (c, s) = ((w * t).cos(), (w * t).sin());
        let expect = DMatrix::from_row_slice(2, 2, &[c, -m * w * s, s / (m * w), c]);
        assert!((mm - expect).amax() < 1e-9);
    }

    #[test]
    fn branch_unwinding_resonant_oscillator() {
        let sys = oscillator_system(1.0, 2.0, 2.0 * PI);
        assert!((sys.modes[0].omega - 2.0).abs() < 1e-8);
        let a = &sys.modes[0].a0;
        let g = 2f64.sqrt();
        assert!((a[0] - C64::new(g, 0.0)).norm() < 1e-8);
        assert!((a[1] - C64::new(0.0, -1.0 / g)).norm() < 1e-8);
    }

    #[test]
    fn generic_oscillator_mode() {
        let sys = oscillator_system(1.0, 3f64.sqrt(), 2.0 * PI);
        assert!((sys.modes[0].omega - 3f64.sqrt()).abs() < 1e-8);
        let res = normalization_residual(&sys.modes);
        assert!(res.iter().all(|&r| r < 1e-10));
    }

    #[test]
    fn example_modes_match_closed_form() {
        let p = ExampleParams::default();
        let m = ExampleModel::new(p).unwrap();
        let o = integrate_z0(&m, &PhasePoint::from_vector(&p.orbit(0.0)), (0.0, 2.0 * p.period()), 1e-12).unwrap();
        let opts = FloquetOptions::default();
        let sys = analyze(&m, &o, VariationalKind::Plain, &grid(p.period(), 400, 2), 1e-12, &opts).unwrap();
        let g = p.g_s();
        for (k, mode) in sys.modes.iter().enumerate() {
            assert!((mode.omega - p.omega_s()).abs() < 1e-8, "omega {}", mode.omega);
            let mut expect = DVector::zeros(6);
            expect[k] = C64::new(g, 0.0);
            expect[3 + k] = C64::new(0.0, -1.0 / g);
            assert!((&mode.a0 - expect).camax() < 1e-8);
        }
        let st = classify_stability(&sys.monodromy, 1e-6);
        assert!(st.stable && st.moduli.iter().all(|r| (r - 1.0).abs() < 1e-8));

        let tilde = analyze(&m, &o, VariationalKind::Tilde, &grid(p.period(), 400, 2), 1e-12, &opts).unwrap();
        assert!(tilde.modes.iter().all(|md| (md.omega - 2.0).abs() < 1e-8));
        assert!(classify_stability(&tilde.monodromy, 1e-6).degenerate);
    }

    #[test]
    fn inverted_oscillator_is_unstable() {
        let q = QuadraticModel::new(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0])), 1.0).unwrap();
        let o = integrate_z0(&q, &PhasePoint::zeros(1), (0.0, 2.0), 1e-12).unwrap();
        let mm = monodromy_matrix(&q, &o, VariationalKind::Plain, 1e-12).unwrap();
        let st = classify_stability(&mm, 1e-6);
        assert!(!st.stable);
        let mut mods = st.moduli.clone();
        mods.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((mods[1] - 1f64.exp()).abs() < 1e-8 && (mods[0] - (-1f64).exp()).abs() < 1e-8);
        let ts = grid(1.0, 10, 1);
        let a = vec![mm.clone(); ts.len()];
        assert!(matches!(
            floquet_modes(&mm, 1.0, &ts, &a, None, &FloquetOptions::default()),
            Err(Error::Instability { .. })
        ));
    }

    #[test]
    fn identity_is_marginal() {
        let st = classify_stability(&DMatrix::identity(4, 4), 1e-6);
        assert!(st.stable && st.degenerate);
    }

    #[test]
    fn b_coefficients_closed_form() {
        let sys = oscillator_system(1.0, 3f64.sqrt(), 2.0 * PI);
        let opts = FloquetOptions::default();
        let zero: Vec<DVector<f64>> = sys.times.iter().map(|_| DVector::zeros(2)).collect();
        let b0 = periodic_b_coefficients(&zero, &sys.modes, &sys.times, sys.period, &opts).unwrap();
        assert_eq!(b0.big_b[0], C64::new(0.0, 0.0));

        // Constant drive on a constant system: compare with direct quadrature of the closed form.
        let f: Vec<DVector<f64>> = sys.times.iter().map(|_| DVector::from_vec(vec![0.3, -0.2])).collect();
        let bc = periodic_b_coefficients(&f, &sys.modes, &sys.times, sys.period, &opts).unwrap();
        let a0 = &sys.modes[0].a0;
        let w = sys.modes[0].omega;
        let c = skew(&f[0].map(|r| C64::new(r, 0.0)), &a0.map(|v| v.conj())) / C64::new(0.0, 2.0);
        let t = sys.period;
        let exact = c * (C64::new(1.0, 0.0) - C64::from_polar(1.0, -w * t)) / C64::new(0.0, w);
        let qerr = (bc.integral_at_period[0] - exact).norm();
        assert!(qerr < 1e-10, "quadrature error {qerr:e}");
        let p = sys.period_index();
        let bk = bc.big_b[0];
        assert!((bk - C64::from_polar(1.0, w * t) * bc.b[0][p]).norm() < 1e-10);
        for j in 0..=p {
            let lhs = bc.b[0][j + p];
            let rhs = bc.b[0][j] * C64::from_polar(1.0, -w * t);
            assert!((lhs - rhs).norm() < 1e-8);
        }
    }

    #[test]
    fn forced_resonance_is_an_error() {
        let sys = oscillator_system(1.0, 2.0, 2.0 * PI);
        let f: Vec<DVector<f64>> =
            sys.times.iter().map(|&t| DVector::from_vec(vec![(2.0 * t).cos(), 0.0])).collect();
        let r = periodic_b_coefficients(&f, &sys.modes, &sys.times, sys.period, &FloquetOptions::default());
        assert!(matches!(r, Err(Error::Resonance { k: 0, .. })));
    }
}
