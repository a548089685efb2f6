//! Vanishing-relaxation limit: MGT solutions with compatible third datum
//! against the linear Kuznetsov (strongly damped wave) equation.

use num_complex::Complex64;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use crate::error::{LabError, Result};
use crate::fields::{cutoff, RadialGrid, RadialSpectralField};
use crate::linear::geometric_times;
use crate::model::{InitialData, ModelParams};
use crate::spectral::ModeKernels;

#[derive(Debug, Clone, PartialEq)]
pub struct LimitProblem {
    pub delta: f64,
    pub dim: usize,
    /// ψ0 and ψ1; the ψ2 slot must be empty, it is derived.
    pub data: InitialData,
    pub taus: Vec<f64>,
}

impl LimitProblem {
    pub fn new(delta: f64, dim: usize, data: InitialData, taus: Vec<f64>) -> Result<Self> {
        let pb = LimitProblem { delta, dim, data, taus };
        pb.validate()?;
        Ok(pb)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) {
            return Err(LabError::InvalidParams(format!("delta = {} must be positive", self.delta)));
        }
        if !self.data.slots[2].is_empty() {
            return Err(LabError::InvalidParams("the second time derivative is fixed by compatibility; leave psi2 empty".into()));
        }
        if !self.data.is_radial() && self.dim != 1 {
            return Err(LabError::InvalidParams("non-radial data need dim = 1".into()));
        }
        self.data.validate(self.dim)?;
        for &t in &self.taus {
            if !(t > 0.0 && t < self.delta) {
                return Err(LabError::InvalidParams(format!("tau = {t} must lie in (0, delta)")));
            }
        }
        Ok(())
    }

    fn params(&self, tau: f64) -> Result<ModelParams> {
        ModelParams::new(tau, self.delta, self.dim)
    }

    fn slot_hat(&self, grid: &RadialGrid, slot: usize, k: f64) -> Complex64 {
        if grid.line {
            self.data.hat(slot, &[k])
        } else {
            Complex64::new(self.data.hat_radial(slot, k, self.dim), 0.0)
        }
    }

    /// ψ̂2 = −k²ψ̂0 − δk²ψ̂1.
    pub fn psi2_hat(&self, grid: &RadialGrid, k: f64) -> Complex64 {
        -(self.slot_hat(grid, 0, k) + self.slot_hat(grid, 1, k) * self.delta) * (k * k)
    }

    /// Grid that resolves both equations at time t for every τ of the sweep.
    pub fn grid(&self, t: f64) -> Result<Arc<RadialGrid>> {
        let sigma = self.data.min_width();
        let mut k_cut: f64 = 0.0;
        let mut taus = self.taus.clone();
        taus.push(1e-3 * self.delta);
        for tau in taus {
            k_cut = k_cut.max(cutoff(&self.params(tau)?, sigma, t));
        }
        Ok(Arc::new(RadialGrid::build(self.dim, k_cut, t, !self.data.is_radial())))
    }
}

/// e^{−at}·(C, S) for y'' + 2ay' + k²y = 0, where C and S are the cosine-
/// and sine-like fundamental pair (S(0)=0, S'(0)=1). Stable across the
/// critically damped point and for strongly overdamped modes.
fn damped_pair(a: f64, k: f64, t: f64) -> (f64, f64) {
    let w2 = k * k - a * a;
    if w2 >= 0.0 {
        let w = w2.sqrt();
        let e = (-a * t).exp();
        let wt = w * t;
        let s = if wt.abs() < 1e-4 { t * (1.0 - wt * wt / 6.0) } else { (wt).sin() / w };
        (e * wt.cos(), e * s)
    } else {
        let b = (-w2).sqrt();
        let bt = b * t;
        // a − b without cancellation
        let slow = k * k / (a + b);
        let fast = a + b;
        let ep = (-slow * t).exp();
        let em = (-fast * t).exp();
        let s = if bt < 1e-4 { (-a * t).exp() * t * (1.0 + bt * bt / 6.0) } else { (ep - em) / (2.0 * b) };
        (0.5 * (ep + em), s)
    }
}

/// ∂_t^ℓ φ̂(t) for φ_tt − Δφ − δΔφ_t = 0 with φ(0)=ψ0, φ_t(0)=ψ1.
pub fn kuznetsov_mode(delta: f64, k: f64, y0: Complex64, y1: Complex64, t: f64, ell: u32) -> Complex64 {
    let a = 0.5 * delta * k * k;
    let k2 = k * k;
    // derivatives at zero: y'' = −2a y' − k² y
    let mut d = [y0, y1];
    for _ in 0..ell {
        d = [d[1], -d[1] * (2.0 * a) - d[0] * k2];
    }
    let (c, s) = damped_pair(a, k, t);
    d[0] * c + (d[1] + d[0] * a) * s
}

pub fn kuznetsov_solve_hat(pb: &LimitProblem, grid: &Arc<RadialGrid>, t: f64, ell: u32) -> RadialSpectralField {
    RadialSpectralField::from_fn(grid, |k| {
        kuznetsov_mode(pb.delta, k.abs(), pb.slot_hat(grid, 0, k), pb.slot_hat(grid, 1, k), t, ell)
    })
}

/// MGT solution with the compatible third datum.
pub fn mgt_solve_hat(pb: &LimitProblem, tau: f64, grid: &Arc<RadialGrid>, t: f64, ell: u32) -> Result<RadialSpectralField> {
    let p = pb.params(tau)?;
    Ok(RadialSpectralField::from_fn(grid, |k| {
        let m = ModeKernels::new(&p, k.abs());
        let d = [pb.slot_hat(grid, 0, k), pb.slot_hat(grid, 1, k), pb.psi2_hat(grid, k)];
        (0..3).map(|j| d[j] * m.eval(j, ell, t)).sum()
    }))
}

/// max|ψ̂_tt(0) − (−k²ψ̂0 − δk²ψ̂1)| / max|ψ̂2| over the grid.
pub fn compatibility_residual(pb: &LimitProblem, tau: f64) -> Result<f64> {
    let g = pb.grid(1.0)?;
    let f = mgt_solve_hat(pb, tau, &g, 0.0, 2)?;
    let (mut err, mut scale) = (0.0f64, 0.0f64);
    for (&k, v) in g.nodes.iter().zip(&f.values) {
        let w = pb.psi2_hat(&g, k);
        err = err.max((v - w).norm());
        scale = scale.max(w.norm());
    }
    Ok(if scale > 0.0 { err / scale } else { err })
}

/// (‖ψ−φ‖_{L²}, L^∞ surrogate) at time t.
pub fn gap_at(pb: &LimitProblem, tau: f64, t: f64) -> Result<(f64, f64)> {
    let g = pb.grid(t)?;
    let d = mgt_solve_hat(pb, tau, &g, t, 0)?.sub(&kuznetsov_solve_hat(pb, &g, t, 0));
    Ok((d.hs_norm(0.0), d.linf_surrogate()))
}

/// Golden-section search for the maximum of `f` on [a, b].
fn golden_max(mut a: f64, mut b: f64, iters: usize, f: impl Fn(f64) -> Result<f64>) -> Result<(f64, f64)> {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    for _ in 0..iters {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d)?;
        }
    }
    Ok(if fc > fd { (c, fc) } else { (d, fd) })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapSup {
    pub tau: f64,
    pub sup: f64,
    pub argmax_t: f64,
}

/// Sup over the grid, refined by golden-section search between the
/// neighbours of the coarse argmax.
fn sup_of(pb: &LimitProblem, tau: f64, t_grid: &[f64], which: usize) -> Result<GapSup> {
    if t_grid.is_empty() {
        return Err(LabError::MissingData("empty time grid".into()));
    }
    let eval = |t: f64| -> Result<f64> {
        let g = gap_at(pb, tau, t)?;
        Ok(if which == 0 { g.0 } else { g.1 })
    };
    let vals = t_grid.iter().map(|&t| eval(t)).collect::<Result<Vec<_>>>()?;
    let (mut i, mut best) = (0, vals[0]);
    for (j, &v) in vals.iter().enumerate() {
        if v > best {
            i = j;
            best = v;
        }
    }
    let mut arg = t_grid[i];
    if i > 0 && i + 1 < t_grid.len() {
        let (tr, vr) = golden_max(t_grid[i - 1], t_grid[i + 1], 40, eval)?;
        if vr > best {
            best = vr;
            arg = tr;
        }
    }
    Ok(GapSup { tau, sup: best, argmax_t: arg })
}

pub fn limit_gap(pb: &LimitProblem, tau: f64, t_grid: &[f64]) -> Result<GapSup> {
    sup_of(pb, tau, t_grid, 0)
}

/// L^∞ analogue via ∫|f̂|/(2π)^n, an upper bound for the sup norm.
pub fn limit_gap_sup(pb: &LimitProblem, tau: f64, t_grid: &[f64]) -> Result<GapSup> {
    sup_of(pb, tau, t_grid, 1)
}

/// Default sup-in-time grid: 1e−2 to 1e4, 12 points per decade.
pub fn default_time_grid() -> Vec<f64> {
    geometric_times(1e-2, 1e4, 12)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimitReport {
    pub l2: Vec<GapSup>,
    pub linf: Vec<GapSup>,
    pub slope_l2: f64,
    pub slope_linf: f64,
    /// gap(τ_{i+1})/gap(τ_i)
    pub ratios_l2: Vec<f64>,
    pub ratios_linf: Vec<f64>,
}

fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

pub fn limit_sweep(pb: &LimitProblem, t_grid: &[f64]) -> Result<LimitReport> {
    pb.validate()?;
    if pb.taus.len() < 2 {
        return Err(LabError::DegenerateSeries("need at least two values of tau".into()));
    }
    let l2 = pb.taus.iter().map(|&t| limit_gap(pb, t, t_grid)).collect::<Result<Vec<_>>>()?;
    let linf = pb.taus.iter().map(|&t| limit_gap_sup(pb, t, t_grid)).collect::<Result<Vec<_>>>()?;
    let ratios = |v: &[GapSup]| v.windows(2).map(|w| w[1].sup / w[0].sup).collect::<Vec<_>>();
    let slope = |v: &[GapSup]| loglog_slope(&pb.taus, &v.iter().map(|g| g.sup).collect::<Vec<_>>());
    Ok(LimitReport {
        slope_l2: slope(&l2),
        slope_linf: slope(&linf),
        ratios_l2: ratios(&l2),
        ratios_linf: ratios(&linf),
        l2,
        linf,
    })
}

impl LimitReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "tau,sup_gap_l2,argmax_t,sup_gap_linf_surrogate,argmax_t_linf,fitted_rate_l2,fitted_rate_linf")?;
        for (a, b) in self.l2.iter().zip(&self.linf) {
            writeln!(f, "{:e},{:e},{:e},{:e},{:e},{:.6},{:.6}", a.tau, a.sup, a.argmax_t, b.sup, b.argmax_t, self.slope_l2, self.slope_linf)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DataPreset;

    fn pb() -> LimitProblem {
        let d = InitialData::new(vec![DataPreset::gaussian(1.0, 1.0)], vec![DataPreset::gaussian(0.5, 1.0)], vec![]);
        LimitProblem::new(1.0, 3, d, vec![0.2, 0.1]).unwrap()
    }

    #[test]
    fn kuznetsov_initial_values_and_free_mode() {
        let y0 = Complex64::new(0.7, 0.0);
        let y1 = Complex64::new(-0.3, 0.0);
        assert!((kuznetsov_mode(1.0, 0.8, y0, y1, 0.0, 0) - y0).norm() < 1e-15);
        assert!((kuznetsov_mode(1.0, 0.8, y0, y1, 0.0, 1) - y1).norm() < 1e-15);
        let v = kuznetsov_mode(1.0, 0.0, y0, y1, 2.5, 0);
        assert!((v - (y0 + y1 * 2.5)).norm() < 1e-14);
    }

    #[test]
    fn critical_damping_is_continuous() {
        let y0 = Complex64::new(1.0, 0.0);
        let y1 = Complex64::new(0.4, 0.0);
        let kc = 2.0;
        let c = kuznetsov_mode(1.0, kc, y0, y1, 1.3, 0);
        for e in [1e-6, -1e-6] {
            let v = kuznetsov_mode(1.0, kc + e, y0, y1, 1.3, 0);
            assert!((v - c).norm() < 1e-5, "{v} vs {c}");
        }
    }

    #[test]
    fn rejects_tau_beyond_delta() {
        let d = InitialData::new(vec![DataPreset::gaussian(1.0, 1.0)], vec![], vec![]);
        assert!(LimitProblem::new(1.0, 1, d, vec![1.5]).is_err());
    }

    #[test]
    fn zero_data_gives_zero_gap() {
        let d = InitialData::new(vec![DataPreset::gaussian(0.0, 1.0)], vec![], vec![]);
        let p = LimitProblem::new(1.0, 3, d, vec![0.1, 0.05]).unwrap();
        let g = limit_gap(&p, 0.1, &[0.5, 1.0, 2.0]).unwrap();
        assert_eq!(g.sup, 0.0);
        assert_eq!(limit_gap_sup(&p, 0.1, &[0.5, 1.0]).unwrap().sup, 0.0);
    }

    #[test]
    fn compatible_datum_installed() {
        let r = compatibility_residual(&pb(), 0.1).unwrap();
        assert!(r < 1e-12, "{r}");
    }
}
