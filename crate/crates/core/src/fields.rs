//! Discretisations of frequency space: a radial Gauss–Legendre panel grid for
//! linear work and a periodic FFT grid for the nonlinear solver.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use crate::error::{LabError, Result};
use crate::model::{epsilon0, n0_default, sphere_area, ModelParams};
use crate::spectral::root_set;
use crate::spectral::RootSet;

pub const GL_NODES: usize = 32;

/// Gauss–Legendre nodes and weights on [−1, 1].
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; m];
    let mut w = vec![0.0; m];
    for i in 0..(m + 1) / 2 {
        let mut z = (PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for j in 2..=m {
                let p2 = ((2 * j - 1) as f64 * z * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            let pm = if m == 1 { z } else { p1 };
            let pm1 = if m == 1 { 1.0 } else { p0 };
            dp = m as f64 * (z * pm - pm1) / (z * z - 1.0);
            let dz = pm / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[m - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[m - 1 - i] = w[i];
    }
    (x, w)
}

/// Quadrature nodes on [0, k_cut] (radial) or [−k_cut, k_cut] (signed line).
#[derive(Debug, Clone, PartialEq)]
pub struct RadialGrid {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub dim: usize,
    /// Signed 1-d line instead of a radial half-line.
    pub line: bool,
}

pub const K_FLOOR: f64 = 1e-6;
pub const PANELS_PER_DECADE: f64 = 12.0;

impl RadialGrid {
    /// Panels: [0, 1e−6], then geometric with 12 panels per decade up to
    /// `k_cut`, each split until width·t_max ≤ π/2.
    pub fn build(dim: usize, k_cut: f64, t_max: f64, line: bool) -> Self {
        let (gx, gw) = gauss_legendre(GL_NODES);
        let mut edges = vec![0.0];
        let mut a = K_FLOOR.min(k_cut);
        edges.push(a);
        let ratio = 10f64.powf(1.0 / PANELS_PER_DECADE);
        while a < k_cut {
            let b = (a * ratio).min(k_cut);
            let pieces = if t_max > 0.0 { ((b - a) * t_max / (PI / 2.0)).ceil().max(1.0) as usize } else { 1 };
            for i in 1..=pieces {
                edges.push(a + (b - a) * i as f64 / pieces as f64);
            }
            a = b;
        }
        let mut nodes = Vec::with_capacity(edges.len() * GL_NODES);
        let mut weights = Vec::with_capacity(edges.len() * GL_NODES);
        for e in edges.windows(2) {
            let (lo, hi) = (e[0], e[1]);
            if hi <= lo {
                continue;
            }
            let half = 0.5 * (hi - lo);
            let mid = 0.5 * (hi + lo);
            for (x, w) in gx.iter().zip(&gw) {
                nodes.push(mid + half * x);
                weights.push(half * w);
            }
        }
        if line {
            let mut n2: Vec<f64> = nodes.iter().rev().map(|k| -k).collect();
            let mut w2: Vec<f64> = weights.iter().rev().copied().collect();
            n2.extend_from_slice(&nodes);
            w2.extend_from_slice(&weights);
            nodes = n2;
            weights = w2;
        }
        RadialGrid { nodes, weights, dim, line }
    }

    /// Grid adapted to the solution at time `t` for data of width `sigma`:
    /// frequencies whose amplitude is certainly below e^{−46} are dropped.
    pub fn adapted(p: &ModelParams, sigma: f64, t: f64, line: bool) -> Arc<Self> {
        Arc::new(Self::build(p.dim, cutoff(p, sigma, t), t, line))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Measure factor for node i (everything except |f̂|² and |ξ|^{2s}).
    fn measure(&self, i: usize) -> f64 {
        let n = self.dim;
        if self.line {
            self.weights[i] / (2.0 * PI)
        } else {
            self.weights[i] * sphere_area(n) * self.nodes[i].powi(n as i32 - 1) / (2.0 * PI).powi(n as i32)
        }
    }
}

/// Slowest decay rate among the modes and the heat factor e^{−δk²t/2}.
fn decay_rate(p: &ModelParams, k: f64) -> f64 {
    let r = match root_set(p, k) {
        RootSet::Pair { l1, mr, .. } => -(l1.max(mr)),
        RootSet::ThreeReal(r) => -r[2],
    };
    r.min(p.delta * k * k / 2.0).max(0.0)
}

/// Upper frequency for the radial quadrature at time t.
pub fn cutoff(p: &ModelParams, sigma: f64, t: f64) -> f64 {
    let k_max = 50.0 / sigma;
    let budget = 46.0;
    let mut last = 0.0;
    let mut k = 1e-4f64;
    let step = 10f64.powf(1.0 / 40.0);
    while k <= k_max {
        if decay_rate(p, k) * t + sigma * sigma * k * k / 4.0 < budget {
            last = k;
        }
        k *= step;
    }
    (last * 1.25).clamp(1e-3, k_max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadialSpectralField {
    pub grid: Arc<RadialGrid>,
    pub values: Vec<Complex64>,
}

impl RadialSpectralField {
    pub fn from_fn(grid: &Arc<RadialGrid>, f: impl Fn(f64) -> Complex64) -> Self {
        RadialSpectralField { grid: grid.clone(), values: grid.nodes.iter().map(|&k| f(k)).collect() }
    }

    pub fn zeros(grid: &Arc<RadialGrid>) -> Self {
        RadialSpectralField { grid: grid.clone(), values: vec![Complex64::new(0.0, 0.0); grid.len()] }
    }

    pub fn scale(&self, c: f64) -> Self {
        RadialSpectralField { grid: self.grid.clone(), values: self.values.iter().map(|v| v * c).collect() }
    }

    pub fn sub(&self, o: &Self) -> Self {
        assert!(Arc::ptr_eq(&self.grid, &o.grid) || *self.grid == *o.grid, "fields on different grids");
        RadialSpectralField {
            grid: self.grid.clone(),
            values: self.values.iter().zip(&o.values).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn add(&self, o: &Self) -> Self {
        self.sub(&o.scale(-1.0))
    }

    /// Homogeneous Sobolev norm with the (2π)^{−n} Parseval factor.
    pub fn hs_norm(&self, s: f64) -> f64 {
        let g = &self.grid;
        let mut acc = 0.0;
        for (i, v) in self.values.iter().enumerate() {
            let k = g.nodes[i].abs();
            let pw = if s == 0.0 { 1.0 } else { k.powf(2.0 * s) };
            acc += g.measure(i) * pw * v.norm_sqr();
        }
        acc.sqrt()
    }

    /// ∫|f̂| dξ/(2π)^n, an upper bound for the sup norm.
    pub fn linf_surrogate(&self) -> f64 {
        let g = &self.grid;
        (0..g.len())
            .map(|i| {
                let m = if g.line {
                    g.weights[i] / (2.0 * PI)
                } else {
                    g.weights[i] * sphere_area(g.dim) * g.nodes[i].powi(g.dim as i32 - 1) / (2.0 * PI).powi(g.dim as i32)
                };
                m * self.values[i].norm()
            })
            .sum()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "k,weight,re,im")?;
        for i in 0..self.values.len() {
            writeln!(f, "{:e},{:e},{:e},{:e}", self.grid.nodes[i], self.grid.weights[i], self.values[i].re, self.values[i].im)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    Physical,
    Frequency,
}

/// Periodic box [−L, L)^n with N points per axis. In frequency space the
/// values approximate the continuous transform ∫ f e^{−ix·ξ} dx.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub dim: usize,
    pub n: usize,
    pub half_len: f64,
    pub values: Vec<Complex64>,
    pub space: Space,
}

impl GridField {
    pub fn zeros(dim: usize, n: usize, half_len: f64, space: Space) -> Self {
        assert!(n.is_power_of_two(), "points per axis must be a power of two");
        GridField { dim, n, half_len, values: vec![Complex64::new(0.0, 0.0); n.pow(dim as u32)], space }
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.half_len / self.n as f64
    }

    pub fn dxi(&self) -> f64 {
        PI / self.half_len
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Multi-index of a flat position (row-major).
    pub fn index(&self, mut flat: usize) -> [usize; 3] {
        let mut idx = [0; 3];
        for a in (0..self.dim).rev() {
            idx[a] = flat % self.n;
            flat /= self.n;
        }
        idx
    }

    pub fn coord(&self, i: usize) -> f64 {
        -self.half_len + i as f64 * self.dx()
    }

    /// Signed wavenumber for FFT index q.
    pub fn wavenumber(&self, q: usize) -> f64 {
        let m = if q < self.n / 2 { q as i64 } else { q as i64 - self.n as i64 };
        m as f64 * self.dxi()
    }

    pub fn from_physical_fn(dim: usize, n: usize, half_len: f64, f: impl Fn(&[f64]) -> f64) -> Self {
        let mut g = Self::zeros(dim, n, half_len, Space::Physical);
        let mut x = [0.0; 3];
        for flat in 0..g.values.len() {
            let idx = g.index(flat);
            for a in 0..dim {
                x[a] = g.coord(idx[a]);
            }
            g.values[flat] = Complex64::new(f(&x[..dim]), 0.0);
        }
        g
    }

    pub fn from_frequency_fn(dim: usize, n: usize, half_len: f64, f: impl Fn(&[f64]) -> Complex64) -> Self {
        let mut g = Self::zeros(dim, n, half_len, Space::Frequency);
        let mut xi = [0.0; 3];
        for flat in 0..g.values.len() {
            let idx = g.index(flat);
            for a in 0..dim {
                xi[a] = g.wavenumber(idx[a]);
            }
            g.values[flat] = f(&xi[..dim]);
        }
        g
    }

    pub fn to_frequency(&self) -> GridField {
        match self.space {
            Space::Frequency => self.clone(),
            Space::Physical => {
                let mut out = self.clone();
                FftPair::new(self.n).forward(self.dim, &mut out.values);
                out.space = Space::Frequency;
                apply_phase(&mut out, self.dx().powi(self.dim as i32));
                out
            }
        }
    }

    pub fn to_physical(&self) -> GridField {
        match self.space {
            Space::Physical => self.clone(),
            Space::Frequency => {
                let mut out = self.clone();
                let total = (self.n as f64 * self.dx()).powi(self.dim as i32);
                apply_phase(&mut out, 1.0 / total);
                FftPair::new(self.n).inverse(self.dim, &mut out.values);
                out.space = Space::Physical;
                out
            }
        }
    }

    /// Ḣ^s norm via discrete Parseval; frequency space only.
    pub fn hs_norm(&self, s: f64) -> Result<f64> {
        if self.space != Space::Frequency {
            return Err(LabError::BackendMismatch);
        }
        let cell = self.dxi().powi(self.dim as i32) / (2.0 * PI).powi(self.dim as i32);
        let mut acc = 0.0;
        for flat in 0..self.values.len() {
            let w = if s == 0.0 {
                1.0
            } else {
                let idx = self.index(flat);
                let k2: f64 = (0..self.dim).map(|a| self.wavenumber(idx[a]).powi(2)).sum();
                k2.powf(s)
            };
            acc += w * self.values[flat].norm_sqr();
        }
        Ok((acc * cell).sqrt())
    }

    /// Physical-space L² norm.
    pub fn l2_physical(&self) -> f64 {
        assert_eq!(self.space, Space::Physical);
        (self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.dx().powi(self.dim as i32)).sqrt()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "index,re,im")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(f, "{i},{:e},{:e}", v.re, v.im)?;
        }
        Ok(())
    }
}

/// Continuous-transform phase (−1)^{Σq} from centring the box at 0.
fn apply_phase(g: &mut GridField, scale: f64) {
    for flat in 0..g.values.len() {
        let idx = g.index(flat);
        let parity: usize = idx[..g.dim].iter().sum();
        let sgn = if parity % 2 == 0 { scale } else { -scale };
        g.values[flat] *= sgn;
    }
}

/// Forward/inverse FFT plans for an N^dim box.
#[derive(Clone)]
pub struct FftPair {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl FftPair {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        FftPair { n, fwd: planner.plan_fft_forward(n), inv: planner.plan_fft_inverse(n) }
    }

    fn run(&self, plan: &Arc<dyn Fft<f64>>, dim: usize, data: &mut [Complex64]) {
        let n = self.n;
        // last axis is contiguous
        plan.process(data);
        if dim == 1 {
            return;
        }
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for axis in 0..dim - 1 {
            let stride = n.pow((dim - 1 - axis) as u32);
            let block = stride * n;
            for base in (0..data.len()).step_by(block) {
                for off in 0..stride {
                    for i in 0..n {
                        buf[i] = data[base + off + i * stride];
                    }
                    plan.process(&mut buf);
                    for i in 0..n {
                        data[base + off + i * stride] = buf[i];
                    }
                }
            }
        }
    }

    pub fn forward(&self, dim: usize, data: &mut [Complex64]) {
        self.run(&self.fwd, dim, data);
    }

    /// Unnormalised inverse.
    pub fn inverse(&self, dim: usize, data: &mut [Complex64]) {
        self.run(&self.inv, dim, data);
    }
}

/// Smooth step: 0 for x ≤ 0, 1 for x ≥ 1, C^∞ in between.
fn smooth_step(x: f64) -> f64 {
    let bump = |y: f64| if y <= 0.0 { 0.0 } else { (-1.0 / y).exp() };
    let a = bump(x);
    let b = bump(1.0 - x);
    if a + b == 0.0 {
        0.0
    } else {
        a / (a + b)
    }
}

/// Partition of unity (χ_int, χ_bdd, χ_ext) at frequency k. χ_int drops over
/// [ε0/10, ε0], χ_ext rises over [N0, 10·N0].
pub fn zone_weights(p: &ModelParams, k: f64, eps0: f64, n0: f64) -> (f64, f64, f64) {
    let _ = p;
    let int = if k <= 0.0 { 1.0 } else { 1.0 - smooth_step((k / eps0).log10() + 1.0) };
    let ext = if k <= 0.0 { 0.0 } else { smooth_step((k / n0).log10()) };
    (int, 1.0 - int - ext, ext)
}

/// Zone weights at every node of a radial field.
pub fn zone_masks(p: &ModelParams, field: &RadialSpectralField) -> Vec<(f64, f64, f64)> {
    let eps0 = epsilon0(p).unwrap_or(1.0);
    let n0 = n0_default(p);
    field.grid.nodes.iter().map(|&k| zone_weights(p, k.abs(), eps0, n0)).collect()
}
