//! Characteristic roots of the mode cubic τλ³ + λ² + (δ+τ)k²λ + k² = 0 and
//! the Fourier multipliers built from them.

use num_complex::Complex64;

use crate::error::{LabError, Result};
use crate::model::{epsilon0, ModelParams};
use crate::ode::dopri5;

/// Three roots λ1 (real) and μR ± iμI.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootTriple {
    pub lambda1: f64,
    pub mu_r: f64,
    pub mu_i: f64,
    pub small_zone: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneralRoots {
    pub roots: [Complex64; 3],
}

/// Internal root layout used by the kernels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RootSet {
    /// One real root and a conjugate pair (μI may be 0 at a double root).
    Pair { l1: f64, mr: f64, mi: f64 },
    ThreeReal([f64; 3]),
}

impl RootSet {
    pub fn to_general(&self) -> GeneralRoots {
        match *self {
            RootSet::Pair { l1, mr, mi } => GeneralRoots {
                roots: [Complex64::new(l1, 0.0), Complex64::new(mr, mi), Complex64::new(mr, -mi)],
            },
            RootSet::ThreeReal(r) => GeneralRoots { roots: r.map(|x| Complex64::new(x, 0.0)) },
        }
    }
}

/// Discriminant of τλ³ + λ² + (δ+τ)k²λ + k² in λ.
pub fn discriminant(p: &ModelParams, k: f64) -> f64 {
    let (t, d) = (p.tau, p.delta);
    let k2 = k * k;
    -4.0 * k2 * (1.0 + (2.0 * t * t - 5.0 * t * d - d * d / 4.0) * k2 + t * (d + t).powi(3) * k2 * k2)
}

/// The cubic written in ν = λ + 1/τ: τν³ − 2ν² + (1/τ + (δ+τ)k²)ν − δk²/τ.
/// Its small root carries λ1 + 1/τ with full relative precision.
fn nu_poly(p: &ModelParams, k: f64, nu: f64) -> (f64, f64, f64) {
    let (t, d) = (p.tau, p.delta);
    let c1 = 1.0 / t + (d + t) * k * k;
    let c0 = -d * k * k / t;
    let v = ((t * nu - 2.0) * nu + c1) * nu + c0;
    let dv = (3.0 * t * nu - 4.0) * nu + c1;
    let scale = (t * nu.powi(3)).abs() + 2.0 * nu * nu + c1 * nu.abs() + c0.abs();
    (v, dv, scale)
}

fn cubic(p: &ModelParams, k: f64, l: Complex64) -> (Complex64, Complex64, f64) {
    let (t, d) = (p.tau, p.delta);
    let c = (d + t) * k * k;
    let v = ((l * t + 1.0) * l + c) * l + k * k;
    let dv = (l * (3.0 * t) + 2.0) * l + c;
    let a = l.norm();
    let scale = t * a.powi(3) + a * a + c * a + k * k;
    (v, dv, scale)
}

fn polish(p: &ModelParams, k: f64, mut l: Complex64) -> Complex64 {
    for _ in 0..5 {
        let (v, dv, scale) = cubic(p, k, l);
        if v.norm() < 1e-13 * scale || dv.norm() == 0.0 {
            break;
        }
        l -= v / dv;
    }
    l
}

/// Roots with the internal layout used by kernel evaluation.
/// Newton on the shifted cubic in ν = λ1 + 1/τ, whose coefficients carry no
/// cancellation, so ν keeps full relative precision as k → 0.
fn polish_nu(p: &ModelParams, k: f64, mut nu: f64) -> f64 {
    for _ in 0..8 {
        let (v, dv, _) = nu_poly(p, k, nu);
        if v == 0.0 || dv == 0.0 {
            break;
        }
        let step = v / dv;
        nu -= step;
        if step.abs() <= 4.0 * f64::EPSILON * nu.abs() {
            break;
        }
    }
    nu
}

pub fn root_set(p: &ModelParams, k: f64) -> RootSet {
    let tau = p.tau;
    if k == 0.0 {
        return RootSet::Pair { l1: -1.0 / tau, mr: 0.0, mi: 0.0 };
    }
    // depressed cubic y³ + A y + B = 0 with λ = y − 1/(3τ)
    let k2 = k * k;
    let a = (p.delta + tau) * k2 / tau - 1.0 / (3.0 * tau * tau);
    let b = (2.0 * tau - p.delta) * k2 / (3.0 * tau * tau) + 2.0 / (27.0 * tau.powi(3));
    let disc = discriminant(p, k);
    if disc < 0.0 {
        // Δ_D = −disc/(108τ⁴) > 0: one real root by real cube roots
        let dd = -disc / (108.0 * tau.powi(4));
        let sq = dd.sqrt();
        let y = (-b / 2.0 + sq).cbrt() + (-b / 2.0 - sq).cbrt();
        let nu = polish_nu(p, k, y - 1.0 / (3.0 * tau) + 1.0 / tau);
        let mr = -nu / 2.0;
        let mi2 = k2 / (1.0 - tau * nu) - nu * nu / 4.0;
        RootSet::Pair { l1: nu - 1.0 / tau, mr, mi: mi2.max(0.0).sqrt() }
    } else {
        // three real roots, trigonometric form
        let m = 2.0 * (-a / 3.0).sqrt();
        let arg = ((3.0 * b / (a * m)).clamp(-1.0, 1.0)).acos() / 3.0;
        let mut r = [0.0; 3];
        for (j, rj) in r.iter_mut().enumerate() {
            let y = m * (arg - 2.0 * std::f64::consts::PI * j as f64 / 3.0).cos();
            *rj = polish(p, k, Complex64::new(y - 1.0 / (3.0 * tau), 0.0)).re;
        }
        r.sort_by(|x, y| x.partial_cmp(y).unwrap());
        RootSet::ThreeReal(r)
    }
}

/// All three roots, Newton-polished.
pub fn roots_exact(p: &ModelParams, k: f64) -> GeneralRoots {
    root_set(p, k).to_general()
}

/// The (λ1, μR, μI) triple in the one-real-root regime.
pub fn roots_triple(p: &ModelParams, k: f64) -> Option<RootTriple> {
    let eps0 = epsilon0(p).unwrap_or(0.0);
    match root_set(p, k) {
        RootSet::Pair { l1, mr, mi } => Some(RootTriple { lambda1: l1, mu_r: mr, mu_i: mi, small_zone: k <= eps0 }),
        RootSet::ThreeReal(_) => None,
    }
}

/// Small-frequency expansions kept through k^order.
pub fn roots_series(p: &ModelParams, k: f64, order: u32) -> Result<RootTriple> {
    let eps0 = epsilon0(p)?;
    if k > eps0 {
        return Err(LabError::OutOfZone { k, eps0 });
    }
    if !(2..=4).contains(&order) {
        return Err(LabError::InvalidParams(format!("series order must be 2, 3 or 4, got {order}")));
    }
    let (t, d) = (p.tau, p.delta);
    let k2 = k * k;
    let mut l1 = -1.0 / t + d * k2;
    let mut mr = -d * k2 / 2.0;
    let mut mi = k;
    if order >= 3 {
        mi += d * (4.0 * t - d) / 8.0 * k2 * k;
    }
    if order >= 4 {
        l1 += t * d * (d - t) * k2 * k2;
        mr -= t * d * (d - t) / 2.0 * k2 * k2;
    }
    Ok(RootTriple { lambda1: l1, mu_r: mr, mu_i: mi, small_zone: true })
}

/// |exact − series| for (λ1, μR, μI) in the small zone. The comparison is
/// made on λ1 + 1/τ so that differences far below 1/τ stay resolved.
pub fn series_deviation(p: &ModelParams, k: f64, order: u32) -> Result<[f64; 3]> {
    let s = roots_series(p, k, order)?;
    let nu = match root_set(p, k) {
        RootSet::Pair { l1, .. } => polish_nu(p, k, l1 + 1.0 / p.tau),
        RootSet::ThreeReal(_) => return Err(LabError::OutOfZone { k, eps0: epsilon0(p)? }),
    };
    let (t, d) = (p.tau, p.delta);
    let k2 = k * k;
    let mut shift = d * k2;
    if order >= 4 {
        shift += t * d * (d - t) * k2 * k2;
    }
    let mi = (k2 / (1.0 - t * nu) - nu * nu / 4.0).sqrt();
    Ok([(nu - shift).abs(), (-nu / 2.0 - s.mu_r).abs(), (mi - s.mu_i).abs()])
}

/// sin(a t)/a with the a → 0 limit.
pub fn sinc_t(a: f64, t: f64) -> f64 {
    let x = a * t;
    if x.abs() < 1e-4 {
        t * (1.0 - x * x / 6.0)
    } else {
        (x).sin() / a
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelId {
    K0,
    K1,
    K2,
    J0,
    J1,
    N0,
    N1,
    N2,
    N3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultiplierQuery {
    pub kernel: KernelId,
    pub ell: u32,
    pub t: f64,
    pub k: f64,
}

/// Per-mode kernel evaluator: roots are computed once per frequency and the
/// K̂0/K̂1/K̂2 multipliers (and their first three time derivatives) can then be
/// sampled at any time.
#[derive(Debug, Clone)]
pub struct ModeKernels {
    params: ModelParams,
    k: f64,
    roots: RootSet,
    degenerate: bool,
}

const GAP_TOL: f64 = 1e-6;

impl ModeKernels {
    pub fn new(p: &ModelParams, k: f64) -> Self {
        let roots = root_set(p, k);
        let degenerate = match roots {
            RootSet::Pair { l1, mr, mi } => {
                // the pair itself is handled analytically when μI → 0; only a
                // near-triple root needs the fallback
                let gap = ((mr - l1).powi(2) + mi * mi).sqrt();
                gap < GAP_TOL * l1.abs().max(1.0)
            }
            RootSet::ThreeReal(r) => {
                let gap = (r[1] - r[0]).min(r[2] - r[1]);
                let scale = r.iter().fold(1.0f64, |m, x| m.max(x.abs()));
                gap < GAP_TOL * scale
            }
        };
        ModeKernels { params: *p, k, roots, degenerate }
    }

    pub fn roots(&self) -> RootSet {
        self.roots
    }

    pub fn uses_fallback(&self) -> bool {
        self.degenerate
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    /// Coefficients of λ^ℓ g_j(λ), lowest degree first.
    fn poly(&self, j: usize, ell: u32) -> [f64; 6] {
        let tau = self.params.tau;
        let e2 = (self.params.delta + tau) * self.k * self.k / tau;
        let base: [f64; 3] = match j {
            0 => [e2, 1.0 / tau, 1.0],
            1 => [1.0 / tau, 1.0, 0.0],
            _ => [1.0, 0.0, 0.0],
        };
        let mut c = [0.0; 6];
        for (i, b) in base.iter().enumerate() {
            c[i + ell as usize] = *b;
        }
        c
    }

    /// ∂_t^ℓ K̂_j(t, k), j ∈ {0,1,2}, ℓ ≤ 3.
    pub fn eval(&self, j: usize, ell: u32, t: f64) -> f64 {
        assert!(j < 3 && ell <= 3);
        if self.degenerate {
            return self.fallback(j, ell, t);
        }
        let g = self.poly(j, ell);
        let horner = |x: f64| g.iter().rev().fold(0.0, |acc, c| acc * x + c);
        match self.roots {
            RootSet::Pair { l1, mr, mi } => {
                let u = mr - l1;
                let d2 = u * u + mi * mi;
                let real_term = (l1 * t).exp() * horner(l1) / d2;
                // λ+^m = a_m + i μI b_m
                let (mut a, mut b) = (1.0, 0.0);
                let (mut re_g, mut im_g) = (0.0, 0.0);
                for &gm in g.iter() {
                    re_g += gm * a;
                    im_g += gm * b;
                    let na = mr * a - mi * mi * b;
                    let nb = a + mr * b;
                    a = na;
                    b = nb;
                }
                let re_q = (re_g * u + mi * mi * im_g) / d2;
                let im_q_over = (im_g * u - re_g) / d2;
                let pair = (mr * t).exp() * (sinc_t(mi, t) * re_q + (mi * t).cos() * im_q_over);
                real_term + pair
            }
            RootSet::ThreeReal(r) => (0..3)
                .map(|i| {
                    let den: f64 = (0..3).filter(|&m| m != i).map(|m| r[i] - r[m]).product();
                    (r[i] * t).exp() * horner(r[i]) / den
                })
                .sum(),
        }
    }

    /// All ∂_t^ℓ K̂_j for j = 0..3, ℓ = 0..=3 at one time.
    pub fn eval_all(&self, t: f64) -> [[f64; 4]; 3] {
        let mut out = [[0.0; 4]; 3];
        if self.degenerate {
            let s = self.fallback_state(t);
            for j in 0..3 {
                out[j] = s[j];
            }
            return out;
        }
        for (j, row) in out.iter_mut().enumerate() {
            for (l, v) in row.iter_mut().enumerate() {
                *v = self.eval(j, l as u32, t);
            }
        }
        out
    }

    fn fallback(&self, j: usize, ell: u32, t: f64) -> f64 {
        self.fallback_state(t)[j][ell as usize]
    }

    /// Fundamental matrix of the mode ODE by adaptive integration over a short
    /// interval followed by repeated squaring.
    fn fallback_state(&self, t: f64) -> [[f64; 4]; 3] {
        mode_ode_fundamental(&self.params, self.k, t)
    }
}

/// Columns j = 0..3 of exp(C t) for the companion system of the mode ODE,
/// each extended by its third derivative.
pub fn mode_ode_fundamental(p: &ModelParams, k: f64, t: f64) -> [[f64; 4]; 3] {
    let tau = p.tau;
    let c1 = (p.delta + tau) * k * k / tau;
    let c0 = k * k / tau;
    let rhs = move |_t: f64, y: &[f64], dy: &mut [f64]| {
        // 3 columns stacked: (y, y', y'') each
        for col in 0..3 {
            let o = 3 * col;
            dy[o] = y[o + 1];
            dy[o + 1] = y[o + 2];
            dy[o + 2] = -y[o + 2] / tau - c1 * y[o + 1] - c0 * y[o];
        }
    };
    let mut squarings = 0;
    let mut s = t;
    while s > 1.0 {
        s /= 2.0;
        squarings += 1;
    }
    let eye = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    let y = dopri5(rhs, &eye, s, 1e-11);
    // phi[r][c]: row r (derivative order), column c (initial-data slot)
    let mut phi = [[0.0; 3]; 3];
    for c in 0..3 {
        for r in 0..3 {
            phi[r][c] = y[3 * c + r];
        }
    }
    for _ in 0..squarings {
        let mut q = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                q[r][c] = (0..3).map(|m| phi[r][m] * phi[m][c]).sum();
            }
        }
        phi = q;
    }
    let mut out = [[0.0; 4]; 3];
    for j in 0..3 {
        for r in 0..3 {
            out[j][r] = phi[r][j];
        }
        out[j][3] = -phi[2][j] / tau - c1 * phi[1][j] - c0 * phi[0][j];
    }
    out
}

/// e^{−δk²t/2}·∂_t^ℓ[sin(kt)]/k.
pub fn wave_sin(ell: u32, t: f64, k: f64, delta: f64) -> f64 {
    let h = (-delta * k * k * t / 2.0).exp();
    let (s, c) = (k * t).sin_cos();
    h * match ell {
        0 => sinc_t(k, t),
        1 => c,
        2 => -k * s,
        _ => -k * k * c,
    }
}

/// e^{−δk²t/2}·∂_t^ℓ[cos(kt)].
pub fn wave_cos(ell: u32, t: f64, k: f64, delta: f64) -> f64 {
    let h = (-delta * k * k * t / 2.0).exp();
    let (s, c) = (k * t).sin_cos();
    h * match ell {
        0 => c,
        1 => -k * s,
        2 => -k * k * c,
        _ => k * k * k * s,
    }
}

/// Diffusion-wave multipliers Ĵ0 = sin(kt)/k·e^{−δk²t/2}, Ĵ1 = cos(kt)·e^{−δk²t/2}.
pub fn jhat(kernel: KernelId, t: f64, k: f64, delta: f64) -> f64 {
    match kernel {
        KernelId::J0 => wave_sin(0, t, k, delta),
        KernelId::J1 => wave_cos(0, t, k, delta),
        other => panic!("jhat called with {other:?}"),
    }
}

/// Second-order correction multipliers, c = δ(4τ−δ)/8:
/// N̂0 = c·t·k²·Ĵ1, N̂1 = −δ(ck²t/δ + 1/2)k²Ĵ0, … (N̂0 taken with the sign that
/// the expansion of sin(μI t) produces).
pub fn nhat(kernel: KernelId, t: f64, k: f64, p: &ModelParams) -> f64 {
    let (tau, d) = (p.tau, p.delta);
    let c = (4.0 * tau - d) / 8.0;
    let k2 = k * k;
    let j0 = wave_sin(0, t, k, d);
    let j1 = wave_cos(0, t, k, d);
    match kernel {
        KernelId::N0 => t * d * c * k2 * j1,
        KernelId::N1 => -d * (c * k2 * t + 0.5) * k2 * j0,
        KernelId::N2 => -d * (c * k2 * t + 1.0) * k2 * j1,
        KernelId::N3 => d * (c * k2 * t + 1.5) * k2 * k2 * j0,
        other => panic!("nhat called with {other:?}"),
    }
}

/// Generic multiplier lookup.
pub fn multiplier(q: &MultiplierQuery, p: &ModelParams) -> f64 {
    match q.kernel {
        KernelId::K0 => ModeKernels::new(p, q.k).eval(0, q.ell, q.t),
        KernelId::K1 => ModeKernels::new(p, q.k).eval(1, q.ell, q.t),
        KernelId::K2 => ModeKernels::new(p, q.k).eval(2, q.ell, q.t),
        KernelId::J0 => wave_sin(q.ell, q.t, q.k, p.delta),
        KernelId::J1 => wave_cos(q.ell, q.t, q.k, p.delta),
        _ => {
            assert!(q.ell == 0, "N multipliers are indexed by kernel id, not ℓ");
            nhat(q.kernel, q.t, q.k, p)
        }
    }
}

/// ∂_t^ℓ K̂_j(t, k).
pub fn khat(kernel: KernelId, ell: u32, t: f64, k: f64, p: &ModelParams) -> f64 {
    multiplier(&MultiplierQuery { kernel, ell, t, k }, p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn par(t: f64, d: f64) -> ModelParams {
        ModelParams::new(t, d, 1).unwrap()
    }

    #[test]
    fn k_zero_roots() {
        let r = roots_exact(&par(0.5, 1.0), 0.0).roots;
        assert_eq!(r[0], Complex64::new(-2.0, 0.0));
        assert_eq!(r[1], Complex64::new(0.0, 0.0));
        assert_eq!(r[2], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn discriminant_bound() {
        let p = par(1.0, 1.0);
        assert!(discriminant(&p, 0.05) < -0.005);
        assert_eq!(discriminant(&p, 0.0), 0.0);
    }

    #[test]
    fn vieta_small_and_large() {
        for &(t, d) in &[(1.0, 1.0), (0.5, 2.0), (0.02, 1.0), (1.0, 0.0)] {
            let p = par(t, d);
            for &k in &[1e-5, 1e-3, 0.1, 1.0, 10.0, 1e3] {
                if let Some(rt) = roots_triple(&p, k) {
                    let s = rt.lambda1 + 2.0 * rt.mu_r + 1.0 / t;
                    let m2 = rt.mu_r * rt.mu_r + rt.mu_i * rt.mu_i;
                    let e2 = 2.0 * rt.lambda1 * rt.mu_r + m2 - (d + t) * k * k / t;
                    let e3 = rt.lambda1 * m2 + k * k / t;
                    assert!(s.abs() < 1e-10 * (1.0 / t), "sum {s}");
                    assert!(e2.abs() < 1e-10 * ((d + t) * k * k / t).max(m2), "e2 {e2}");
                    assert!(e3.abs() < 1e-10 * (k * k / t), "e3 {e3}");
                }
            }
        }
    }

    #[test]
    fn series_zone_check() {
        let p = par(1.0, 1.0);
        let s = roots_series(&p, 0.05, 4).unwrap();
        assert!((s.lambda1 - (-1.0 + 0.0025)).abs() < 1e-15);
        assert!(matches!(roots_series(&p, 0.5, 4), Err(LabError::OutOfZone { .. })));
    }

    #[test]
    fn kernel_initial_values() {
        let p = par(0.7, 1.3);
        for &k in &[0.0, 1e-7, 0.01, 0.3, 2.0, 50.0] {
            let m = ModeKernels::new(&p, k);
            let v = m.eval_all(0.0);
            assert!((v[0][0] - 1.0).abs() < 1e-12);
            assert!(v[1][0].abs() < 1e-12 && (v[1][1] - 1.0).abs() < 1e-12);
            assert!(v[2][0].abs() < 1e-12 && v[2][1].abs() < 1e-12 && (v[2][2] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn k2_at_zero_frequency() {
        let p = par(0.5, 1.0);
        let m = ModeKernels::new(&p, 0.0);
        for &t in &[0.1, 1.0, 5.0] {
            let want = 0.5 * t - 0.25 * (1.0 - (-t / 0.5f64).exp());
            assert!((m.eval(2, 0, t) - want).abs() < 1e-13);
        }
    }

    #[test]
    fn fallback_agrees_with_eigen_form() {
        let p = par(0.8, 0.6);
        for &k in &[0.05, 0.7, 3.0] {
            let m = ModeKernels::new(&p, k);
            for &t in &[0.3, 2.5, 7.0] {
                let a = m.eval_all(t);
                let b = mode_ode_fundamental(&p, k, t);
                for j in 0..3 {
                    for l in 0..4 {
                        assert!((a[j][l] - b[j][l]).abs() < 1e-9, "k={k} t={t} j={j} l={l}");
                    }
                }
            }
        }
    }

    #[test]
    fn n2_transcription() {
        let p = par(1.0, 1.0);
        let want = -1.0 * (3.0 / 8.0 * 0.01 + 1.0) * 0.01 * 0.1f64.cos() * (-0.005f64).exp();
        assert!((nhat(KernelId::N2, 1.0, 0.1, &p) - want).abs() < 1e-16);
        assert_eq!(nhat(KernelId::N0, 0.0, 0.4, &p), 0.0);
        assert_eq!(nhat(KernelId::N1, 3.0, 0.0, &p), 0.0);
    }

    #[test]
    fn jhat_limits() {
        assert_eq!(jhat(KernelId::J1, 0.0, 0.3, 1.0), 1.0);
        assert_eq!(jhat(KernelId::J0, 7.0, 0.0, 1.0), 7.0);
        let k = 0.37;
        assert!(jhat(KernelId::J0, std::f64::consts::PI / k, k, 2.0).abs() < 1e-15);
    }
}
