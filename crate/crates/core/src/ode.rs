//! Explicit Runge–Kutta integrators: adaptive Dormand–Prince 5(4) with
//! continuous output, and a fixed-step classical RK4.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_max: f64,
    pub max_steps: usize,
    /// Smallest step allowed relative to the span before declaring failure.
    pub h_min_rel: f64,
}

impl OdeOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { rtol: tol, atol: tol, ..Self::default() }
    }
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self { rtol: 1e-10, atol: 1e-10, h_max: f64::INFINITY, max_steps: 2_000_000, h_min_rel: 1e-14 }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// One accepted step with its interpolation coefficients.
#[derive(Debug, Clone)]
struct Segment {
    t: f64,
    h: f64,
    /// Five coefficient rows, each of length `dim`, stored contiguously.
    rcont: Vec<f64>,
}

/// Piecewise quintic-accurate continuous solution.
#[derive(Debug, Clone)]
pub struct DenseSolution {
    dim: usize,
    t0: f64,
    t1: f64,
    segments: Vec<Segment>,
    y_end: Vec<f64>,
}

impl DenseSolution {
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn start(&self) -> f64 {
        self.t0
    }
    pub fn end(&self) -> f64 {
        self.t1
    }
    pub fn steps(&self) -> usize {
        self.segments.len()
    }
    pub fn final_state(&self) -> &[f64] {
        &self.y_end
    }

    /// Evaluates the solution at `t`, tolerating round-off just outside the window.
    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        let slack = 1e-12 * (self.t1 - self.t0).abs().max(1.0);
        if t < self.t0 - slack || t > self.t1 + slack {
            return Err(Error::Domain { t, start: self.t0, end: self.t1 });
        }
        if t >= self.t1 {
            return Ok(self.y_end.clone());
        }
        let idx = match self.segments.binary_search_by(|s| s.t.partial_cmp(&t).unwrap()) {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) => i - 1,
        };
        let s = &self.segments[idx];
        let th = (t - s.t) / s.h;
        let th1 = 1.0 - th;
        let d = self.dim;
        let r = &s.rcont;
        Ok((0..d)
            .map(|i| {
                r[i] + th * (r[d + i] + th1 * (r[2 * d + i] + th * (r[3 * d + i] + th1 * r[4 * d + i])))
            })
            .collect())
    }

    pub fn sample(&self, times: &[f64]) -> Result<Vec<Vec<f64>>> {
        times.iter().map(|&t| self.eval(t)).collect()
    }
}

fn error_norm(err: &[f64], y0: &[f64], y1: &[f64], o: &OdeOptions) -> f64 {
    let n = err.len() as f64;
    let s: f64 = err
        .iter()
        .zip(y0.iter().zip(y1))
        .map(|(e, (a, b))| {
            let sc = o.atol + o.rtol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (s / n).sqrt()
}

/// Integrates `y' = f(t, y)` from `t0` to `t1 > t0` with step-size control.
pub fn dopri5<F>(mut f: F, t0: f64, y0: &[f64], t1: f64, opts: &OdeOptions) -> Result<DenseSolution>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    if !(t1 > t0) {
        return Err(Error::Contract(format!("integration span [{t0}, {t1}] is empty")));
    }
    let dim = y0.len();
    let span = t1 - t0;
    let mut y = y0.to_vec();
    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut k5 = vec![0.0; dim];
    let mut k6 = vec![0.0; dim];
    let mut k7 = vec![0.0; dim];
    let mut ytmp = vec![0.0; dim];
    let mut ynew = vec![0.0; dim];
    let mut err = vec![0.0; dim];
    f(t0, &y, &mut k1);

    // Starting step from the derivative scale.
    let scale: Vec<f64> = y.iter().map(|v| opts.atol + opts.rtol * v.abs()).collect();
    let d0 = (y.iter().zip(&scale).map(|(v, s)| (v / s).powi(2)).sum::<f64>() / dim as f64).sqrt();
    let d1 = (k1.iter().zip(&scale).map(|(v, s)| (v / s).powi(2)).sum::<f64>() / dim as f64).sqrt();
    let mut h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h = h.min(opts.h_max).min(span).max(span * 1e-10);

    let mut t = t0;
    let mut segments = Vec::new();
    let mut last_rejected = false;
    let mut steps = 0usize;
    while t < t1 {
        steps += 1;
        if steps > opts.max_steps {
            return Err(Error::Integration { t, reason: "maximum number of steps exceeded".into() });
        }
        if t + h > t1 || (t1 - (t + h)) < 1e-12 * span {
            h = t1 - t;
        }
        if h < opts.h_min_rel * span.max(1.0) {
            return Err(Error::Integration { t, reason: format!("step size underflow (h = {h:e})") });
        }
        for i in 0..dim {
            ytmp[i] = y[i] + h * A21 * k1[i];
        }
        f(t + C2 * h, &ytmp, &mut k2);
        for i in 0..dim {
            ytmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        f(t + C3 * h, &ytmp, &mut k3);
        for i in 0..dim {
            ytmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        f(t + C4 * h, &ytmp, &mut k4);
        for i in 0..dim {
            ytmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        f(t + C5 * h, &ytmp, &mut k5);
        for i in 0..dim {
            ytmp[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        f(t + h, &ytmp, &mut k6);
        for i in 0..dim {
            ynew[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        f(t + h, &ynew, &mut k7);
        for i in 0..dim {
            err[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        }
        if ynew.iter().any(|v| !v.is_finite()) {
            h *= 0.1;
            last_rejected = true;
            continue;
        }
        let en = error_norm(&err, &y, &ynew, opts);
        let fac = if en == 0.0 { 10.0 } else { (0.9 * en.powf(-0.2)).clamp(0.2, 10.0) };
        if en <= 1.0 {
            let mut rcont = vec![0.0; 5 * dim];
            for i in 0..dim {
                let ydiff = ynew[i] - y[i];
                let bspl = h * k1[i] - ydiff;
                rcont[i] = y[i];
                rcont[dim + i] = ydiff;
                rcont[2 * dim + i] = bspl;
                rcont[3 * dim + i] = ydiff - h * k7[i] - bspl;
                rcont[4 * dim + i] = h
                    * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
            }
            segments.push(Segment { t, h, rcont });
            t += h;
            if (t1 - t).abs() < 1e-12 * span {
                t = t1;
            }
            std::mem::swap(&mut y, &mut ynew);
            std::mem::swap(&mut k1, &mut k7);
            let grow = if last_rejected { fac.min(1.0) } else { fac };
            h = (h * grow).min(opts.h_max);
            last_rejected = false;
        } else {
            h *= fac.min(1.0);
            last_rejected = true;
        }
    }
    Ok(DenseSolution { dim, t0, t1, segments, y_end: y })
}

/// Classical RK4 on a uniform grid of `steps` intervals; returns all `steps + 1` states.
pub fn rk4<F>(mut f: F, t0: f64, y0: &[f64], t1: f64, steps: usize) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    if steps == 0 || !(t1 > t0) {
        return Err(Error::Contract("rk4 needs a positive span and at least one step".into()));
    }
    let dim = y0.len();
    let h = (t1 - t0) / steps as f64;
    let mut out = Vec::with_capacity(steps + 1);
    let mut y = y0.to_vec();
    out.push(y.clone());
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]);
    let mut tmp = vec![0.0; dim];
    for s in 0..steps {
        let t = t0 + s as f64 * h;
        f(t, &y, &mut k1);
        for i in 0..dim {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        f(t + 0.5 * h, &tmp, &mut k2);
        for i in 0..dim {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        f(t + 0.5 * h, &tmp, &mut k3);
        for i in 0..dim {
            tmp[i] = y[i] + h * k3[i];
        }
        f(t + h, &tmp, &mut k4);
        for i in 0..dim {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integration { t: t + h, reason: "non-finite state".into() });
        }
        out.push(y.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn osc(_t: f64, y: &[f64], dy: &mut [f64]) {
        dy[0] = -4.0 * y[1];
        dy[1] = y[0];
    }

    #[test]
    fn oscillator_quarter_period() {
        let opts = OdeOptions::with_tol(1e-12);
        let sol = dopri5(osc, 0.0, &[0.0, 1.0], std::f64::consts::PI / 4.0, &opts).unwrap();
        let y = sol.final_state();
        assert!((y[0] + 2.0).abs() < 1e-9);
        assert!(y[1].abs() < 1e-9);
    }

    #[test]
    fn dense_output_is_accurate_between_steps() {
        let opts = OdeOptions::with_tol(1e-11);
        let sol = dopri5(osc, 0.0, &[0.0, 1.0], 10.0, &opts).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..997 {
            let t = i as f64 * 0.01003;
            let y = sol.eval(t).unwrap();
            worst = worst.max((y[1] - (2.0 * t).cos()).abs());
            worst = worst.max((y[0] + 2.0 * (2.0 * t).sin()).abs());
        }
        assert!(worst < 1e-8, "dense output error {worst}");
    }

    #[test]
    fn eval_outside_window_is_domain_error() {
        let sol = dopri5(osc, 0.0, &[0.0, 1.0], 1.0, &OdeOptions::default()).unwrap();
        assert!(matches!(sol.eval(1.5), Err(Error::Domain { .. })));
    }

    #[test]
    fn blowup_reports_integration_failure() {
        let opts = OdeOptions { max_steps: 100_000, ..OdeOptions::with_tol(1e-8) };
        let r = dopri5(|_, y, dy| dy[0] = y[0] * y[0], 0.0, &[1.0], 2.0, &opts);
        match r {
            Err(Error::Integration { t, .. }) => assert!(t < 1.0 + 1e-3 && t > 0.9),
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn rk4_fourth_order() {
        let err = |n: usize| {
            let out = rk4(osc, 0.0, &[0.0, 1.0], 1.0, n).unwrap();
            (out[n][1] - 2f64.cos()).abs()
        };
        let ratio = err(50) / err(100);
        assert!(ratio > 14.0 && ratio < 18.0, "ratio {ratio}");
    }
}
