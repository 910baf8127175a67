//! Uniform tensor grids, spectral and finite-difference derivatives, and
//! wavefunction file formats.

use std::io::Write;
use std::path::Path;

use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phase::C64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl Axis {
    pub fn spacing(&self) -> f64 {
        (self.max - self.min) / (self.points - 1) as f64
    }
    pub fn coord(&self, i: usize) -> f64 {
        self.min + i as f64 * self.spacing()
    }
}

/// Row-major tensor grid; the last axis varies fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialGrid {
    pub axes: Vec<Axis>,
}

impl SpatialGrid {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() || axes.len() > 3 {
            return Err(Error::Resolution("grids support 1 to 3 axes".into()));
        }
        if axes.iter().any(|a| a.points < 4 || !(a.max > a.min)) {
            return Err(Error::Resolution("each axis needs at least 4 points and max > min".into()));
        }
        Ok(Self { axes })
    }

    /// Grid spanning `margin` standard deviations around `center` with spacing at most `sigma / per_sigma`.
    pub fn around(center: &[f64], sigma: &[f64], margin: f64, per_sigma: f64) -> Result<Self> {
        let axes = center
            .iter()
            .zip(sigma)
            .map(|(&c, &s)| {
                let half = margin * s;
                let pts = ((2.0 * half) / (s / per_sigma)).ceil() as usize + 1;
                Axis { min: c - half, max: c + half, points: pts }
            })
            .collect();
        Self::new(axes)
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.points).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(Axis::spacing).product()
    }

    fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.dim()];
        for d in (0..self.dim().saturating_sub(1)).rev() {
            s[d] = s[d + 1] * self.axes[d + 1].points;
        }
        s
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for d in (0..self.dim()).rev() {
            out[d] = flat % self.axes[d].points;
            flat /= self.axes[d].points;
        }
        out
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat).iter().zip(&self.axes).map(|(&i, a)| a.coord(i)).collect()
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    /// Checks that the grid covers `margin` deviations around `center` at resolution `sigma / per_sigma`.
    pub fn check_resolution(&self, center: &[f64], sigma: &[f64], margin: f64, per_sigma: f64) -> Result<()> {
        for (d, a) in self.axes.iter().enumerate() {
            let (c, s) = (center[d], sigma[d]);
            if a.min > c - margin * s || a.max < c + margin * s {
                return Err(Error::Resolution(format!(
                    "axis {d} [{}, {}] does not cover {margin} deviations around {c}",
                    a.min, a.max
                )));
            }
            if a.spacing() > s / per_sigma * (1.0 + 1e-12) {
                return Err(Error::Resolution(format!(
                    "axis {d} spacing {} exceeds sigma/{per_sigma} = {}",
                    a.spacing(),
                    s / per_sigma
                )));
            }
        }
        Ok(())
    }

    /// `<f, g> = sum conj(f) g dV` (trapezoid; end weights are negligible for decayed data).
    pub fn inner(&self, f: &[C64], g: &[C64]) -> C64 {
        f.iter().zip(g).map(|(a, b)| a.conj() * b).sum::<C64>() * self.cell_volume()
    }

    pub fn norm(&self, f: &[C64]) -> f64 {
        self.inner(f, f).re.max(0.0).sqrt()
    }

    /// Largest boundary amplitude relative to the largest amplitude.
    pub fn edge_ratio(&self, f: &[C64]) -> f64 {
        let peak = f.iter().map(|v| v.norm()).fold(0.0, f64::max);
        if peak == 0.0 {
            return 0.0;
        }
        let mut edge: f64 = 0.0;
        for (k, v) in f.iter().enumerate() {
            let idx = self.multi_index(k);
            if idx.iter().zip(&self.axes).any(|(&i, a)| i == 0 || i + 1 == a.points) {
                edge = edge.max(v.norm());
            }
        }
        edge / peak
    }

    fn lines(&self, axis: usize) -> impl Iterator<Item = Vec<usize>> + '_ {
        let stride = self.strides()[axis];
        let n = self.axes[axis].points;
        let total = self.len();
        (0..total).filter(move |&k| self.multi_index(k)[axis] == 0).map(move |start| (0..n).map(|i| start + i * stride).collect())
    }

    /// Spectral derivative along `axis` (assumes the data are decayed at both ends).
    pub fn spectral_derivative(&self, f: &[C64], axis: usize) -> Vec<C64> {
        let n = self.axes[axis].points;
        let h = self.axes[axis].spacing();
        let mut planner = FftPlanner::<f64>::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let len = n as f64 * h;
        let k: Vec<f64> = (0..n)
            .map(|j| {
                let m = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
                if n.is_multiple_of(2) && j == n / 2 { 0.0 } else { std::f64::consts::TAU * m / len }
            })
            .collect();
        let mut out = vec![C64::new(0.0, 0.0); f.len()];
        for line in self.lines(axis) {
            let mut buf: Vec<C64> = line.iter().map(|&i| f[i]).collect();
            fwd.process(&mut buf);
            for (b, kk) in buf.iter_mut().zip(&k) {
                *b *= C64::new(0.0, *kk) / n as f64;
            }
            inv.process(&mut buf);
            for (&i, v) in line.iter().zip(buf) {
                out[i] = v;
            }
        }
        out
    }

    /// Fourth-order central difference along `axis`, second order at the two outermost points.
    pub fn fd4_derivative(&self, f: &[C64], axis: usize) -> Vec<C64> {
        let n = self.axes[axis].points;
        let h = self.axes[axis].spacing();
        let mut out = vec![C64::new(0.0, 0.0); f.len()];
        for line in self.lines(axis) {
            for i in 0..n {
                let v = |j: usize| f[line[j]];
                out[line[i]] = if i >= 2 && i + 2 < n {
                    (v(i - 2) - v(i - 1) * 8.0 + v(i + 1) * 8.0 - v(i + 2)) / (12.0 * h)
                } else if i >= 1 && i + 1 < n {
                    (v(i + 1) - v(i - 1)) / (2.0 * h)
                } else if i == 0 {
                    (v(1) - v(0)) / h
                } else {
                    (v(n - 1) - v(n - 2)) / h
                };
            }
        }
        out
    }

    pub fn write_csv(&self, values: &[C64], path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serde(e.to_string()))?;
        let mut header: Vec<String> = (1..=self.dim()).map(|i| format!("x_{i}")).collect();
        header.push("re".into());
        header.push("im".into());
        w.write_record(&header).map_err(|e| Error::Serde(e.to_string()))?;
        for (k, v) in values.iter().enumerate() {
            let mut row: Vec<String> = self.point(k).iter().map(|x| format!("{x:e}")).collect();
            row.push(format!("{:e}", v.re));
            row.push(format!("{:e}", v.im));
            w.write_record(&row).map_err(|e| Error::Serde(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    /// One header line `TCS v1 n=<n> pts=<p1>x<p2>.. t=<t>` followed by
    /// little-endian `f64` tuples `(x_1..x_n, re, im)`.
    pub fn write_binary(&self, values: &[C64], t: f64, path: &Path) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        let pts: Vec<String> = self.axes.iter().map(|a| a.points.to_string()).collect();
        writeln!(file, "TCS v1 n={} pts={} t={t:e}", self.dim(), pts.join("x"))?;
        for (k, v) in values.iter().enumerate() {
            for x in self.point(k) {
                file.write_all(&x.to_le_bytes())?;
            }
            file.write_all(&v.re.to_le_bytes())?;
            file.write_all(&v.im.to_le_bytes())?;
        }
        file.flush()?;
        Ok(())
    }
}

/// Reads a file written by [`SpatialGrid::write_binary`]: returns `(n, t, tuples)`.
pub fn read_binary(path: &Path) -> Result<(usize, f64, Vec<Vec<f64>>)> {
    let bytes = std::fs::read(path)?;
    let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| Error::Serde("missing header".into()))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|e| Error::Serde(e.to_string()))?;
    let mut n = None;
    let mut t = None;
    for tok in header.split_whitespace() {
        if let Some(v) = tok.strip_prefix("n=") {
            n = v.parse::<usize>().ok();
        } else if let Some(v) = tok.strip_prefix("t=") {
            t = v.parse::<f64>().ok();
        }
    }
    let (n, t) = match (header.starts_with("TCS v1"), n, t) {
        (true, Some(n), Some(t)) => (n, t),
        _ => return Err(Error::Serde(format!("bad header {header:?}"))),
    };
    let body = &bytes[nl + 1..];
    let width = (n + 2) * 8;
    if body.len() % width != 0 {
        return Err(Error::Serde("truncated body".into()));
    }
    let rows = body
        .chunks(width)
        .map(|c| c.chunks(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect())
        .collect();
    Ok((n, t, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian(grid: &SpatialGrid, k0: f64) -> Vec<C64> {
        grid.points()
            .iter()
            .map(|p| C64::from_polar((-p.iter().map(|x| x * x).sum::<f64>()).exp(), k0 * p[0]))
            .collect()
    }

    #[test]
    fn derivatives_of_gaussian() {
        let g = SpatialGrid::new(vec![Axis { min: -6.0, max: 6.0, points: 121 }]).unwrap();
        let f = gaussian(&g, 0.0);
        let exact: Vec<C64> = g.points().iter().map(|p| C64::new(-2.0 * p[0] * (-p[0] * p[0]).exp(), 0.0)).collect();
        let sp = g.spectral_derivative(&f, 0);
        let fd = g.fd4_derivative(&f, 0);
        let es = sp.iter().zip(&exact).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        let ef = fd.iter().zip(&exact).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(es < 1e-12, "spectral {es}");
        assert!(ef < 5e-4 && ef > es, "fd4 {ef}");
    }

    #[test]
    fn multi_axis_layout_and_norm() {
        let g = SpatialGrid::new(vec![Axis { min: -5.0, max: 5.0, points: 81 }, Axis { min: -5.0, max: 5.0, points: 61 }]).unwrap();
        assert_eq!(g.point(61), vec![-5.0 + 0.125, -5.0]);
        let f = gaussian(&g, 1.0);
        // int exp(-2 r^2) = pi / 2
        assert!((g.norm(&f).powi(2) - std::f64::consts::PI / 2.0).abs() < 1e-10);
        let dy = g.spectral_derivative(&f, 1);
        let k = g.points().iter().position(|p| (p[0] - 0.5).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12).unwrap();
        let expect = f[k] * -1.0;
        assert!((dy[k] - expect).norm() < 1e-9);
    }

    #[test]
    fn resolution_checks() {
        let g = SpatialGrid::around(&[0.3], &[0.1], 8.0, 6.0).unwrap();
        assert!(g.check_resolution(&[0.3], &[0.1], 8.0, 6.0).is_ok());
        assert!(g.check_resolution(&[0.3], &[0.05], 8.0, 6.0).is_err());
        assert!(g.check_resolution(&[0.6], &[0.1], 8.0, 6.0).is_err());
    }

    #[test]
    fn binary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("psi.bin");
        let g = SpatialGrid::new(vec![Axis { min: -1.0, max: 1.0, points: 5 }]).unwrap();
        let v: Vec<C64> = (0..5).map(|i| C64::new(i as f64, -(i as f64))).collect();
        g.write_binary(&v, 0.25, &path).unwrap();
        let (n, t, rows) = read_binary(&path).unwrap();
        assert_eq!((n, t, rows.len()), (1, 0.25, 5));
        assert_eq!(rows[3], vec![0.5, 3.0, -3.0]);
    }
}
