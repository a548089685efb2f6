//! Model parameters, regimes, reference decay functions and initial-data presets.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::{E, PI};

use crate::error::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub tau: f64,
    pub delta: f64,
    /// B/(2A); only read by the nonlinear solver.
    #[serde(default)]
    pub nonlin_ratio: f64,
    pub dim: usize,
}

impl ModelParams {
    pub fn new(tau: f64, delta: f64, dim: usize) -> Result<Self> {
        let p = ModelParams { tau, delta, nonlin_ratio: 0.0, dim };
        p.validate()?;
        Ok(p)
    }

    pub fn with_nonlin_ratio(mut self, r: f64) -> Result<Self> {
        self.nonlin_ratio = r;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(LabError::InvalidParams(format!("tau must be > 0, got {}", self.tau)));
        }
        if !self.delta.is_finite() {
            return Err(LabError::InvalidParams("delta must be finite".into()));
        }
        if !(1..=3).contains(&self.dim) {
            return Err(LabError::InvalidParams(format!("dim must be 1, 2 or 3, got {}", self.dim)));
        }
        if !(self.nonlin_ratio >= 0.0) {
            return Err(LabError::InvalidParams("nonlin_ratio must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Viscous,
    Inviscid,
    Chaotic,
}

pub fn classify_regime(p: &ModelParams) -> Regime {
    if p.delta > 0.0 {
        Regime::Viscous
    } else if p.delta == 0.0 {
        Regime::Inviscid
    } else {
        Regime::Chaotic
    }
}

/// Radius of the small-frequency zone. Below it the discriminant of the
/// characteristic cubic stays negative.
pub fn epsilon0(p: &ModelParams) -> Result<f64> {
    let (t, d) = (p.tau, p.delta);
    let den = (d + t) * (d + 19.0 * t) - 27.0 * t * t;
    if den <= 0.0 {
        return Err(LabError::DegenerateThreshold(den));
    }
    Ok((1.0 / den).min(1.0))
}

/// Default large-frequency threshold N0.
pub fn n0_default(p: &ModelParams) -> f64 {
    10.0 * f64::max(1.0, 1.0 / (p.delta + p.tau))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RateFamily {
    D,
    Dns,
    TildeD,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFunction {
    pub family: RateFamily,
    pub n: usize,
    pub s: f64,
}

impl RateFunction {
    pub fn d(n: usize) -> Self {
        RateFunction { family: RateFamily::D, n, s: 0.0 }
    }
    pub fn dns(n: usize, s: f64) -> Self {
        RateFunction { family: RateFamily::Dns, n, s }
    }
    pub fn tilde(n: usize, s: f64) -> Self {
        RateFunction { family: RateFamily::TildeD, n, s }
    }
    pub fn eval(&self, t: f64) -> f64 {
        rate_eval(self, t)
    }
}

fn d_n(n: usize, t: f64) -> f64 {
    match n {
        1 => (1.0 + t).sqrt(),
        2 => (E + t).ln().sqrt(),
        _ => (1.0 + t).powf(0.5 - n as f64 / 4.0),
    }
}

pub fn rate_eval(r: &RateFunction, t: f64) -> f64 {
    let nf = r.n as f64;
    match r.family {
        RateFamily::D => d_n(r.n, t),
        RateFamily::Dns => {
            if r.s == 0.0 {
                d_n(r.n, t)
            } else {
                (1.0 + t).powf(-(r.s - 1.0) / 2.0 - nf / 4.0)
            }
        }
        RateFamily::TildeD => match r.n {
            1 => (1.0 + t).powf(-r.s / 2.0 + 0.25),
            2 => (1.0 + t).powf(-r.s / 2.0 - 0.5) * (E + t).ln(),
            _ => (1.0 + t).powf(-r.s / 2.0 - nf / 4.0),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresetKind {
    Gaussian,
    ShiftedGaussian,
    /// A·σ·∂_{x_1} of a Gaussian.
    DerivativeGaussian,
    /// A·(n/2 − |x−x0|²/σ²)·exp(−|x−x0|²/σ²), mass zero.
    ZeroMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPreset {
    pub kind: PresetKind,
    pub amplitude: f64,
    pub width: f64,
    #[serde(default)]
    pub center: Vec<f64>,
}

impl DataPreset {
    pub fn gaussian(amplitude: f64, width: f64) -> Self {
        DataPreset { kind: PresetKind::Gaussian, amplitude, width, center: vec![] }
    }
    pub fn shifted(amplitude: f64, width: f64, center: Vec<f64>) -> Self {
        DataPreset { kind: PresetKind::ShiftedGaussian, amplitude, width, center }
    }
    pub fn derivative(amplitude: f64, width: f64) -> Self {
        DataPreset { kind: PresetKind::DerivativeGaussian, amplitude, width, center: vec![] }
    }
    pub fn zero_mean(amplitude: f64, width: f64) -> Self {
        DataPreset { kind: PresetKind::ZeroMean, amplitude, width, center: vec![] }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.width > 0.0 && self.width.is_finite()) {
            return Err(LabError::InvalidParams(format!("preset width must be > 0, got {}", self.width)));
        }
        if !self.center.is_empty() && self.center.len() != dim {
            return Err(LabError::InvalidParams(format!(
                "preset center has {} components, dimension is {}",
                self.center.len(),
                dim
            )));
        }
        Ok(())
    }

    fn x0(&self, i: usize) -> f64 {
        self.center.get(i).copied().unwrap_or(0.0)
    }

    /// True when the transform depends on |ξ| only.
    pub fn is_radial(&self) -> bool {
        self.kind != PresetKind::DerivativeGaussian && self.center.iter().all(|&c| c == 0.0)
    }

    fn base_mass(&self, n: usize) -> f64 {
        self.amplitude * (self.width * PI.sqrt()).powi(n as i32)
    }

    /// Mass M and first moment P.
    pub fn moments(&self, n: usize) -> (f64, Vec<f64>) {
        let m0 = self.base_mass(n);
        match self.kind {
            PresetKind::Gaussian | PresetKind::ShiftedGaussian => {
                (m0, (0..n).map(|i| self.x0(i) * m0).collect())
            }
            PresetKind::DerivativeGaussian => {
                let mut p = vec![0.0; n];
                p[0] = -self.width * m0;
                (0.0, p)
            }
            PresetKind::ZeroMean => (0.0, vec![0.0; n]),
        }
    }

    /// Fourier transform f̂(ξ) = ∫ f(x) e^{−ix·ξ} dx.
    pub fn hat(&self, xi: &[f64]) -> Complex64 {
        let n = xi.len();
        let s = self.width;
        let k2: f64 = xi.iter().map(|v| v * v).sum();
        let env = self.base_mass(n) * (-s * s * k2 / 4.0).exp();
        let phase: f64 = xi.iter().enumerate().map(|(i, v)| self.x0(i) * v).sum();
        let shift = Complex64::from_polar(1.0, -phase);
        let core = match self.kind {
            PresetKind::Gaussian | PresetKind::ShiftedGaussian => Complex64::new(env, 0.0),
            PresetKind::DerivativeGaussian => Complex64::new(0.0, s * xi[0] * env),
            PresetKind::ZeroMean => Complex64::new(env * s * s * k2 / 4.0, 0.0),
        };
        core * shift
    }

    /// Transform along a radial ray; only meaningful for radial presets.
    pub fn hat_radial(&self, k: f64, n: usize) -> f64 {
        let mut xi = [0.0; 3];
        xi[0] = k;
        self.hat(&xi[..n]).re
    }

    /// Physical-space value.
    pub fn value(&self, x: &[f64]) -> f64 {
        let s2 = self.width * self.width;
        let r2: f64 = x.iter().enumerate().map(|(i, v)| (v - self.x0(i)).powi(2)).sum();
        let g = (-r2 / s2).exp();
        let a = self.amplitude;
        match self.kind {
            PresetKind::Gaussian | PresetKind::ShiftedGaussian => a * g,
            PresetKind::DerivativeGaussian => a * self.width * (-2.0 * (x[0] - self.x0(0)) / s2) * g,
            PresetKind::ZeroMean => a * (x.len() as f64 / 2.0 - r2 / s2) * g,
        }
    }
}

/// Initial data (ψ0, ψ1, ψ2) as sums of presets per slot.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InitialData {
    pub slots: [Vec<DataPreset>; 3],
}

impl InitialData {
    pub fn new(psi0: Vec<DataPreset>, psi1: Vec<DataPreset>, psi2: Vec<DataPreset>) -> Self {
        InitialData { slots: [psi0, psi1, psi2] }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        self.slots.iter().flatten().try_for_each(|p| p.validate(dim))
    }

    pub fn is_radial(&self) -> bool {
        self.slots.iter().flatten().all(|p| p.is_radial())
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        for p in out.slots.iter_mut().flatten() {
            p.amplitude *= c;
        }
        out
    }

    pub fn min_width(&self) -> f64 {
        self.slots.iter().flatten().map(|p| p.width).fold(f64::INFINITY, f64::min)
    }

    pub fn hat(&self, slot: usize, xi: &[f64]) -> Complex64 {
        self.slots[slot].iter().map(|p| p.hat(xi)).sum()
    }

    pub fn hat_radial(&self, slot: usize, k: f64, n: usize) -> f64 {
        self.slots[slot].iter().map(|p| p.hat_radial(k, n)).sum()
    }

    pub fn value(&self, slot: usize, x: &[f64]) -> f64 {
        self.slots[slot].iter().map(|p| p.value(x)).sum()
    }

    pub fn moments(&self, slot: usize, n: usize) -> (f64, Vec<f64>) {
        let mut m = 0.0;
        let mut pv = vec![0.0; n];
        for p in &self.slots[slot] {
            let (mm, pp) = p.moments(n);
            m += mm;
            pv.iter_mut().zip(pp).for_each(|(a, b)| *a += b);
        }
        (m, pv)
    }
}

pub fn moments(p: &DataPreset, n: usize) -> (f64, Vec<f64>) {
    p.moments(n)
}

pub fn data_hat(p: &DataPreset, xi: &[f64]) -> Complex64 {
    p.hat(xi)
}

/// Surface area of the unit sphere S^{n−1}.
pub fn sphere_area(n: usize) -> f64 {
    match n {
        1 => 2.0,
        2 => 2.0 * PI,
        3 => 4.0 * PI,
        _ => unreachable!("dimension checked at construction"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regimes() {
        let mk = |d| ModelParams { tau: 0.5, delta: d, nonlin_ratio: 0.0, dim: 1 };
        assert_eq!(classify_regime(&mk(1.0)), Regime::Viscous);
        assert_eq!(classify_regime(&mk(0.0)), Regime::Inviscid);
        assert_eq!(classify_regime(&mk(-0.1)), Regime::Chaotic);
    }

    #[test]
    fn eps0_values() {
        let p = ModelParams::new(1.0, 1.0, 1).unwrap();
        assert!((epsilon0(&p).unwrap() - 1.0 / 13.0).abs() < 1e-15);
        let p = ModelParams::new(0.5, 2.0, 1).unwrap();
        assert!((epsilon0(&p).unwrap() - 1.0 / 22.0).abs() < 1e-15);
        // the closed form needs δ/τ > √108 − 10; δ = 0.01τ falls outside
        let p = ModelParams::new(1.0, 0.01, 1).unwrap();
        assert!(matches!(epsilon0(&p), Err(LabError::DegenerateThreshold(_))));
        let p = ModelParams::new(1.0, 0.5, 1).unwrap();
        let e = epsilon0(&p).unwrap();
        assert!(e > 0.0 && e < 1.0);
        // tiny tau pushes the raw formula above 1
        let p = ModelParams::new(0.01, 0.1, 1).unwrap();
        assert_eq!(epsilon0(&p).unwrap(), 1.0);
        let p = ModelParams::new(1.0, -0.9, 1).unwrap();
        assert!(matches!(epsilon0(&p), Err(LabError::DegenerateThreshold(_))));
    }

    #[test]
    fn rates() {
        assert_eq!(rate_eval(&RateFunction::d(1), 3.0), 2.0);
        assert_eq!(rate_eval(&RateFunction::d(3), 0.0), 1.0);
        assert!((rate_eval(&RateFunction::dns(2, 2.0), 15.0) - 0.0625).abs() < 1e-15);
        for n in 1..=3 {
            for t in [0.0, 1.0, 77.0] {
                assert_eq!(rate_eval(&RateFunction::dns(n, 0.0), t), rate_eval(&RateFunction::d(n), t));
            }
        }
        assert!((rate_eval(&RateFunction::tilde(1, 0.0), 15.0) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn preset_moments() {
        let g = DataPreset::gaussian(1.0, 1.0);
        let (m, p) = g.moments(1);
        assert!((m - PI.sqrt()).abs() < 1e-15 && p[0] == 0.0);
        let g = DataPreset::shifted(2.0, 1.0, vec![1.0]);
        let (m, p) = g.moments(1);
        assert!((m - 2.0 * PI.sqrt()).abs() < 1e-14 && (p[0] - 2.0 * PI.sqrt()).abs() < 1e-14);
        for n in 1..=3 {
            assert_eq!(DataPreset::zero_mean(3.0, 0.7).moments(n).0, 0.0);
        }
    }

    #[test]
    fn hat_at_origin_is_mass() {
        let presets = [
            DataPreset::gaussian(1.3, 0.8),
            DataPreset::shifted(-0.4, 1.7, vec![0.3, -2.0]),
            DataPreset::derivative(2.0, 1.1),
            DataPreset::zero_mean(0.9, 0.6),
        ];
        for p in &presets {
            let (m, _) = p.moments(2);
            let h = p.hat(&[0.0, 0.0]);
            assert!((h.re - m).abs() <= 1e-12 * m.abs().max(1.0) && h.im.abs() < 1e-15);
        }
    }

    // Trapezoid on a wide window converges spectrally for Gaussian-type integrands.
    fn quad_hat_1d(p: &DataPreset, k: f64) -> Complex64 {
        let (a, b, m) = (-30.0, 30.0, 6000);
        let h = (b - a) / m as f64;
        (0..=m)
            .map(|j| {
                let x = a + j as f64 * h;
                let w = if j == 0 || j == m { 0.5 } else { 1.0 };
                Complex64::from_polar(w * h * p.value(&[x]), -k * x)
            })
            .sum()
    }

    #[test]
    fn hat_matches_quadrature() {
        let presets = [
            DataPreset::gaussian(1.0, 1.0),
            DataPreset::shifted(2.0, 1.0, vec![1.0]),
            DataPreset::derivative(1.5, 0.9),
            DataPreset::zero_mean(0.8, 1.3),
        ];
        for p in &presets {
            for k in [0.0, 0.3, 1.1, 2.5] {
                let d = (p.hat(&[k]) - quad_hat_1d(p, k)).norm();
                assert!(d < 1e-11, "{:?} k={k} diff={d}", p.kind);
            }
        }
    }
}
