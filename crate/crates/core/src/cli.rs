//! Scenario files, the experiment runner, CSV/report emission and plot sources.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::error::{LabError, Result};
use crate::limit::{compatibility_residual, limit_sweep, LimitProblem};
use crate::linear::{
    fit_decay, geometric_times, lower_bound_check, lower_bound_check_second, residual_norm, solve_linear_hat, DecayReport, LinearProblem, Order,
    ProfileSpec,
};
use crate::model::{rate_eval, DataPreset, InitialData, ModelParams, RateFunction};
use crate::nonlinear::{
    difference_norm, linear_march, max_relative_l2, nonlinear_decay_suite, nonlinear_moments, nonlinear_profile_residual, picard_solve,
    rk_march_oracle, write_iterations_csv, write_trajectory_csv, NonlinearProblem, Nonlinearity, ProfileConstants, ProfileVariant, Sampling,
    StorePolicy,
};
use crate::spectral::{roots_exact, series_deviation, ModeKernels};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Scenario catalog shipped with the binary.
pub const BUNDLED: &[(&str, &str)] = &[
    ("roots", include_str!("../scenarios/roots.toml")),
    ("kernel-estimates", include_str!("../scenarios/kernel-estimates.toml")),
    ("decay-rates", include_str!("../scenarios/decay-rates.toml")),
    ("first-order-profiles", include_str!("../scenarios/first-order-profiles.toml")),
    ("second-order-profiles", include_str!("../scenarios/second-order-profiles.toml")),
    ("optimality-leading", include_str!("../scenarios/optimality-leading.toml")),
    ("optimality-refined", include_str!("../scenarios/optimality-refined.toml")),
    ("solver-cross-check", include_str!("../scenarios/solver-cross-check.toml")),
    ("nonlinear-decay", include_str!("../scenarios/nonlinear-decay.toml")),
    ("nonlinear-first-profile", include_str!("../scenarios/nonlinear-first-profile.toml")),
    ("nonlinear-second-profile", include_str!("../scenarios/nonlinear-second-profile.toml")),
    ("singular-limit", include_str!("../scenarios/singular-limit.toml")),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Roots,
    Kernels,
    LinearRates,
    Profiles,
    Optimality,
    Nonlinear,
    NonlinearProfiles,
    SingularLimit,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub tau: f64,
    pub delta: f64,
    pub dims: Vec<usize>,
    #[serde(default)]
    pub nonlin_ratio: f64,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default)]
    pub psi0: Vec<DataPreset>,
    #[serde(default)]
    pub psi1: Vec<DataPreset>,
    #[serde(default)]
    pub psi2: Vec<DataPreset>,
}

fn twelve() -> usize {
    12
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Window {
    pub t0: f64,
    pub t1: f64,
    #[serde(default = "twelve")]
    pub per_decade: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RootsSection {
    /// (τ, δ) pairs
    pub pairs: Vec<[f64; 2]>,
    pub k_min: f64,
    pub k_max: f64,
    pub points: usize,
    pub min_slope_lambda1: f64,
    pub min_slope_mu_r: f64,
    pub min_slope_mu_i: f64,
    /// Vieta residual sweep over [1e−4, 1e3]
    pub vieta_points: usize,
    pub vieta_tol: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateSpec {
    pub ell: u32,
    pub s: u32,
    pub tol: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelsSection {
    pub frequencies: usize,
    pub k_min: f64,
    pub k_max: f64,
    pub identity_tol: f64,
    #[serde(default)]
    pub estimates: Vec<EstimateSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateModel {
    #[default]
    Power,
    /// ‖·‖² fits a + b·ln t better than any power law
    Log,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateSpec {
    pub dim: usize,
    pub ell: u32,
    #[serde(default)]
    pub k: u32,
    #[serde(default)]
    pub model: RateModel,
    #[serde(default)]
    pub expected: Option<f64>,
    #[serde(default)]
    pub tol: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileEntry {
    pub ell: u32,
    pub k: u32,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfilesSection {
    /// include the second-order residual and its gain
    pub second_order: bool,
    pub first_tol: f64,
    pub gain: f64,
    pub gain_tol: f64,
    pub cases: Vec<ProfileEntry>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimalitySection {
    /// 1: ‖ψ‖/D_n against |M1+τM2|; 2: profile-subtracted norm
    pub order: u32,
    pub factor: f64,
    pub spread: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearSection {
    pub eps: f64,
    #[serde(default = "kuznetsov")]
    pub mode: Nonlinearity,
    pub points: usize,
    pub half_len: f64,
    pub h: f64,
    pub t_end: f64,
    #[serde(default)]
    pub min_points_per_sigma: Option<f64>,
    /// geometric sampling from this time; uniform every step when absent
    #[serde(default)]
    pub sample_from: Option<f64>,
    #[serde(default = "twelve")]
    pub per_decade: usize,
    #[serde(default)]
    pub sample_every: Option<usize>,
    #[serde(default)]
    pub fit_from: Option<f64>,
    pub self_consistency: f64,
}

fn kuznetsov() -> Nonlinearity {
    Nonlinearity::Kuznetsov
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectation {
    pub norm: String,
    pub expected: f64,
    pub tol: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossCheck {
    pub rk_h: f64,
    pub max_rel: f64,
    pub eps_values: Vec<f64>,
    pub slope: f64,
    pub slope_tol: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearProfileSection {
    pub order: u32,
    #[serde(default)]
    pub ell: u32,
    #[serde(default)]
    pub k: u32,
    pub variants: Vec<ProfileVariant>,
    /// start of the window on which residual/rate must decrease
    pub final_from: f64,
    pub lower_factor: f64,
    /// largest admissible tail bound relative to M_non
    pub tail_fraction: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitSection {
    pub taus: Vec<f64>,
    pub slope: f64,
    pub slope_tol: f64,
    pub ratio_min: f64,
    pub ratio_max: f64,
    pub compat_tol: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub kind: Kind,
    #[serde(default)]
    pub description: String,
    pub model: ModelSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub window: Option<Window>,
    #[serde(default)]
    pub roots: Option<RootsSection>,
    #[serde(default)]
    pub kernels: Option<KernelsSection>,
    #[serde(default)]
    pub rates: Vec<RateSpec>,
    #[serde(default)]
    pub profiles: Option<ProfilesSection>,
    #[serde(default)]
    pub optimality: Option<OptimalitySection>,
    #[serde(default)]
    pub nonlinear: Option<NonlinearSection>,
    #[serde(default)]
    pub expect: Vec<Expectation>,
    #[serde(default)]
    pub cross_check: Option<CrossCheck>,
    #[serde(default)]
    pub profile: Option<NonlinearProfileSection>,
    #[serde(default)]
    pub limit: Option<LimitSection>,
}

fn cfg(msg: impl Into<String>) -> LabError {
    LabError::Config(msg.into())
}

fn need<'a, T>(v: &'a Option<T>, key: &str, kind: Kind) -> Result<&'a T> {
    v.as_ref().ok_or_else(|| cfg(format!("kind {kind:?} needs a [{key}] section")))
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(cfg(format!("{key} must be a positive number, got {v}")))
    }
}

impl Scenario {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let sc: Scenario = toml::from_str(text).map_err(|e| cfg(format!("{origin}: {e}")))?;
        sc.validate().map_err(|e| match e {
            LabError::Config(m) => cfg(format!("{origin}: {m}")),
            other => cfg(format!("{origin}: {other}")),
        })?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(path).map_err(|e| cfg(format!("{}: {e}", path.display())))?;
        Ok((Self::parse(&text, &path.display().to_string())?, text))
    }

    fn initial_data(&self) -> InitialData {
        InitialData::new(self.data.psi0.clone(), self.data.psi1.clone(), self.data.psi2.clone())
    }

    fn params(&self, dim: usize) -> Result<ModelParams> {
        ModelParams::new(self.model.tau, self.model.delta, dim)?.with_nonlin_ratio(self.model.nonlin_ratio)
    }

    fn times(&self) -> Result<Vec<f64>> {
        let w = need(&self.window, "window", self.kind)?;
        Ok(geometric_times(w.t0, w.t1, w.per_decade))
    }

    /// Every field is checked here, before any computation starts.
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(cfg(format!("name must be non-empty ASCII [A-Za-z0-9_-], got {:?}", self.name)));
        }
        if self.model.dims.is_empty() {
            return Err(cfg("model.dims must list at least one dimension"));
        }
        for &n in &self.model.dims {
            self.params(n).map_err(|e| cfg(format!("model: {e}")))?;
            self.initial_data().validate(n).map_err(|e| cfg(format!("data: {e}")))?;
        }
        if let Some(w) = &self.window {
            positive("window.t0", w.t0)?;
            if !(w.t1 > w.t0) {
                return Err(cfg("window.t1 must exceed window.t0"));
            }
            if w.per_decade == 0 {
                return Err(cfg("window.per_decade must be >= 1"));
            }
        }
        let kind = self.kind;
        let no_data = self.data.psi0.is_empty() && self.data.psi1.is_empty() && self.data.psi2.is_empty();
        match kind {
            Kind::Roots => {
                let r = need(&self.roots, "roots", kind)?;
                if r.pairs.is_empty() || r.points < 2 || r.vieta_points < 2 {
                    return Err(cfg("roots: need pairs, points >= 2 and vieta_points >= 2"));
                }
                positive("roots.k_min", r.k_min)?;
                if !(r.k_max > r.k_min) {
                    return Err(cfg("roots.k_max must exceed roots.k_min"));
                }
                for [t, d] in &r.pairs {
                    ModelParams::new(*t, *d, 1).map_err(|e| cfg(format!("roots.pairs: {e}")))?;
                }
            }
            Kind::Kernels => {
                let k = need(&self.kernels, "kernels", kind)?;
                positive("kernels.k_min", k.k_min)?;
                positive("kernels.identity_tol", k.identity_tol)?;
                if k.frequencies == 0 || !(k.k_max > k.k_min) {
                    return Err(cfg("kernels: need frequencies >= 1 and k_max > k_min"));
                }
                if !k.estimates.is_empty() {
                    need(&self.window, "window", kind)?;
                    if self.data.psi2.len() != 1 {
                        return Err(cfg("kernels.estimates need exactly one data.psi2 preset"));
                    }
                }
            }
            Kind::LinearRates => {
                need(&self.window, "window", kind)?;
                if self.rates.is_empty() {
                    return Err(cfg("linear-rates needs at least one [[rates]] entry"));
                }
                for r in &self.rates {
                    if !self.model.dims.contains(&r.dim) {
                        return Err(cfg(format!("rates.dim = {} is not listed in model.dims", r.dim)));
                    }
                    if r.model == RateModel::Power && r.expected.is_none() {
                        return Err(cfg("rates.expected is required for power-law entries"));
                    }
                }
            }
            Kind::Profiles => {
                need(&self.window, "window", kind)?;
                let p = need(&self.profiles, "profiles", kind)?;
                if p.cases.is_empty() {
                    return Err(cfg("profiles.cases is empty"));
                }
            }
            Kind::Optimality => {
                need(&self.window, "window", kind)?;
                let o = need(&self.optimality, "optimality", kind)?;
                if !(1..=2).contains(&o.order) {
                    return Err(cfg(format!("optimality.order must be 1 or 2, got {}", o.order)));
                }
                positive("optimality.factor", o.factor)?;
                positive("optimality.spread", o.spread)?;
            }
            Kind::Nonlinear | Kind::NonlinearProfiles => {
                let nl = need(&self.nonlinear, "nonlinear", kind)?;
                if self.model.dims.len() != 1 {
                    return Err(cfg("nonlinear scenarios take exactly one entry in model.dims"));
                }
                for (k, v) in [("eps", nl.eps), ("half_len", nl.half_len), ("h", nl.h), ("t_end", nl.t_end), ("self_consistency", nl.self_consistency)] {
                    positive(&format!("nonlinear.{k}"), v)?;
                }
                if nl.sample_from.is_some() == nl.sample_every.is_some() {
                    return Err(cfg("nonlinear: give exactly one of sample_from, sample_every"));
                }
                self.nonlinear_problem(nl.eps)?.validate().map_err(|e| cfg(format!("nonlinear: {e}")))?;
                if kind == Kind::NonlinearProfiles {
                    let p = need(&self.profile, "profile", kind)?;
                    if p.variants.is_empty() || !(1..=2).contains(&p.order) {
                        return Err(cfg("profile: need order 1 or 2 and at least one variant"));
                    }
                }
                if let Some(c) = &self.cross_check {
                    positive("cross_check.rk_h", c.rk_h)?;
                    if c.eps_values.len() < 2 {
                        return Err(cfg("cross_check.eps_values needs at least two entries"));
                    }
                }
                for e in &self.expect {
                    if !["psi_l2", "psi_h1", "psi_t_l2", "psi_tt_l2"].contains(&e.norm.as_str()) {
                        return Err(cfg(format!("expect.norm = {:?} is not one of psi_l2, psi_h1, psi_t_l2, psi_tt_l2", e.norm)));
                    }
                }
            }
            Kind::SingularLimit => {
                let l = need(&self.limit, "limit", kind)?;
                need(&self.window, "window", kind)?;
                if !self.data.psi2.is_empty() {
                    return Err(cfg("singular-limit derives psi2 from psi0 and psi1; remove data.psi2"));
                }
                if l.taus.len() < 2 {
                    return Err(cfg("limit.taus needs at least two values"));
                }
                for &n in &self.model.dims {
                    LimitProblem::new(self.model.delta, n, self.initial_data(), l.taus.clone()).map_err(|e| cfg(format!("limit: {e}")))?;
                }
            }
        }
        if no_data && !matches!(kind, Kind::Roots | Kind::Kernels) {
            return Err(cfg("data: at least one preset is required"));
        }
        Ok(())
    }

    fn nonlinear_problem(&self, eps: f64) -> Result<NonlinearProblem> {
        let nl = need(&self.nonlinear, "nonlinear", self.kind)?;
        let mut pb = NonlinearProblem::new(self.params(self.model.dims[0])?, self.initial_data(), eps, nl.points, nl.half_len, nl.h, nl.t_end);
        pb.mode = nl.mode;
        if let Some(m) = nl.min_points_per_sigma {
            pb.min_points_per_sigma = m;
        }
        pb.sampling = match (nl.sample_from, nl.sample_every) {
            (Some(t0), _) => Sampling::Geometric { t0, per_decade: nl.per_decade },
            (_, Some(e)) => Sampling::Uniform { every: e },
            _ => Sampling::Uniform { every: 1 },
        };
        Ok(pb)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
    /// preconditions for the check are not met; recorded, not counted
    Skip,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub verdict: Verdict,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Check { name: name.into(), verdict: if pass { Verdict::Pass } else { Verdict::Fail }, detail: detail.into() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub scenario: String,
    pub scenario_sha256: String,
    pub tool_version: String,
    pub wall_clock_s: f64,
    pub passed: bool,
    pub checks: Vec<Check>,
}

/// A fitted series: one plot source per entry.
#[derive(Debug, Clone)]
struct Series {
    label: String,
    x: Vec<f64>,
    y: Vec<f64>,
    expected: f64,
    slope: f64,
}

#[derive(Debug, Default)]
struct Artifacts {
    checks: Vec<Check>,
    series: Vec<Series>,
    fits: Vec<String>,
    /// extra tables: file name → (header, rows)
    tables: BTreeMap<String, (String, Vec<String>)>,
}

fn num(v: f64) -> String {
    format!("{v:.12e}")
}

impl Artifacts {
    fn check(&mut self, c: Check) {
        self.checks.push(c);
    }

    fn fit(&mut self, r: &DecayReport) {
        self.fits.push(r.csv_row());
        self.series.push(Series { label: r.label.clone(), x: r.times.clone(), y: r.values.clone(), expected: r.expected, slope: r.slope });
    }

    fn fit_check(&mut self, r: &DecayReport) {
        self.fit(r);
        self.check(Check::new(
            format!("slope {}", r.label),
            r.pass,
            format!("slope {:.4}, expected {:.4} ± {:.3}", r.slope, r.expected, r.tolerance),
        ));
    }

    fn row(&mut self, file: &str, header: &str, row: String) {
        self.tables.entry(file.to_string()).or_insert_with(|| (header.to_string(), vec![])).1.push(row);
    }
}

fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn run_roots(sc: &Scenario, a: &mut Artifacts) -> Result<()> {
    let r = need(&sc.roots, "roots", sc.kind)?;
    let ks: Vec<f64> = (0..r.points).map(|i| r.k_min * (r.k_max / r.k_min).powf(i as f64 / (r.points - 1) as f64)).collect();
    let names = ["lambda1", "mu_r", "mu_i"];
    let mins = [r.min_slope_lambda1, r.min_slope_mu_r, r.min_slope_mu_i];
    for [tau, delta] in &r.pairs {
        let p = ModelParams::new(*tau, *delta, 1)?;
        let devs = ks.iter().map(|&k| series_deviation(&p, k, 4)).collect::<Result<Vec<_>>>()?;
        for (k, d) in ks.iter().zip(&devs) {
            a.row("series_errors.csv", "tau,delta,k,err_lambda1,err_mu_r,err_mu_i", format!("{tau},{delta},{},{},{},{}", num(*k), num(d[0]), num(d[1]), num(d[2])));
        }
        for c in 0..3 {
            let y: Vec<f64> = devs.iter().map(|d| d[c]).collect();
            let slope = loglog_slope(&ks, &y);
            let label = format!("err_{}_tau{tau}_delta{delta}", names[c]);
            a.series.push(Series { label: label.clone(), x: ks.clone(), y, expected: mins[c], slope });
            a.fits.push(format!("{label},{:.6},{slope:.6},,,,{}", mins[c], if slope >= mins[c] { "PASS" } else { "FAIL" }));
            a.check(Check::new(format!("series order {} (tau={tau}, delta={delta})", names[c]), slope >= mins[c], format!("slope {slope:.4} >= {}", mins[c])));
        }
        // Vieta identities over the full frequency range
        let mut worst: f64 = 0.0;
        for i in 0..r.vieta_points {
            let k = 1e-4 * 1e7f64.powf(i as f64 / (r.vieta_points - 1) as f64);
            let z = roots_exact(&p, k).roots;
            let s = z[0] + z[1] + z[2];
            let e2 = z[0] * z[1] + z[0] * z[2] + z[1] * z[2];
            let e3 = z[0] * z[1] * z[2];
            let c = (delta + tau) * k * k / tau;
            worst = worst
                .max((s.re + 1.0 / tau).abs() * tau)
                .max((e2 - c).norm() / c)
                .max((e3 + k * k / tau).norm() / (k * k / tau));
        }
        a.check(Check::new(format!("vieta (tau={tau}, delta={delta})"), worst <= r.vieta_tol, format!("max relative residual {worst:.3e} <= {:.1e}", r.vieta_tol)));
    }
    Ok(())
}

fn run_kernels(sc: &Scenario, a: &mut Artifacts) -> Result<()> {
    let kc = need(&sc.kernels, "kernels", sc.kind)?;
    let want = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for &n in &sc.model.dims {
        let p = sc.params(n)?;
        let mut worst: f64 = 0.0;
        for i in 0..kc.frequencies {
            let k = kc.k_min * (kc.k_max / kc.k_min).powf(i as f64 / (kc.frequencies.max(2) - 1) as f64);
            let m = ModeKernels::new(&p, k);
            // ∂_t^ℓ K̂_j(0) = δ_{jℓ}
            for (j, row) in want.iter().enumerate() {
                for (l, w) in row.iter().enumerate() {
                    worst = worst.max((m.eval(j, l as u32, 0.0) - w).abs());
                }
            }
        }
        a.check(Check::new(format!("initial identities n={n}"), worst <= kc.identity_tol, format!("max deviation {worst:.3e} <= {:.1e}", kc.identity_tol)));
        if !kc.estimates.is_empty() {
            let times = sc.times()?;
            for e in &kc.estimates {
                let r = crate::linear::kernel_estimate_sweep(&p, &sc.data.psi2[0], e.ell, e.s, &times)?;
                let expected = r.expected;
                let r = r.with_expectation(&format!("n{n}_dt{}K2_s{}", e.ell + 1, e.s), expected, e.tol);
                a.fit_check(&r);
            }
        }
    }
    Ok(())
}

fn run_linear_rates(sc: &Scenario, a: &mut Artifacts) -> Result<()> {
    let times = sc.times()?;
    for r in &sc.rates {
        let pb = LinearProblem::new(sc.params(r.dim)?, sc.initial_data())?;
        let vals = times
            .iter()
            .map(|&t| Ok(solve_linear_hat(&pb, &pb.grid(t)?, t, r.ell).hs_norm(r.k as f64)))
            .collect::<Result<Vec<f64>>>()?;
        let label = format!("n{}_dt{}_h{}", r.dim, r.ell, r.k);
        let fit = fit_decay(&times, &vals)?;
        match r.model {
            RateModel::Power => a.fit_check(&fit.with_expectation(&label, r.expected.unwrap(), r.tol)),
            RateModel::Log => {
                let (aa, bb, lr) = fit.log_fit.unwrap();
                let ok = fit.prefers_log_model();
                let fit = fit.with_expectation(&label, r.expected.unwrap_or(0.0), r.tol);
                a.fit(&fit);
                a.check(Check::new(
                    format!("log model {label}"),
                    ok,
                    format!("norm² ≈ {aa:.4} + {bb:.4}·ln t (rel. residual {lr:.2e}) vs power slope {:.4}", fit.slope),
                ));
            }
        }
    }
    Ok(())
}

fn run_profiles(sc: &Scenario, a: &mut Artifacts) -> Result<()> {
    let ps = need(&sc.profiles, "profiles", sc.kind)?;
    let times = sc.times()?;
    for &n in &sc.model.dims {
        let pb = LinearProblem::new(sc.params(n)?, sc.initial_data())?;
        for c in &ps.cases {
            let first_expect = -(n as f64) / 4.0 - (c.k + c.ell) as f64 / 2.0;
            let spec = ProfileSpec { order: Order::First, ell: c.ell, k: c.k };
            let v = times.iter().map(|&t| residual_norm(&pb, spec, t)).collect::<Result<Vec<_>>>()?;
            let first = fit_decay(&times, &v)?.with_expectation(&format!("n{n}_first_l{}_k{}", c.ell, c.k), first_expect, ps.first_tol);
            a.fit_check(&first);
            if ps.second_order {
                let spec = ProfileSpec { order: Order::Second, ..spec };
                let v = times.iter().map(|&t| residual_norm(&pb, spec, t)).collect::<Result<Vec<_>>>()?;
                let second = fit_decay(&times, &v)?.with_expectation(&format!("n{n}_second_l{}_k{}", c.ell, c.k), first.slope - ps.gain, ps.gain_tol);
                a.fit_check(&second);
            }
        }
    }
    Ok(())
}

fn run_optimality(sc: &Scenario, a: &mut Artifacts) -> Result<()> {
    let o = need(&sc.optimality, "optimality", sc.kind)?;
    let times = sc.times()?;
    for &n in &sc.model.dims {
        let pb = LinearProblem::new(sc.params(n)?, sc.initial_data())?;
        let (rep, constant, what) = if o.order == 1 {
            (lower_bound_check(&pb, 0, 0, &times)?, pb.moments().m12.abs(), "|M1+tau*M2|")
        } else {
            (lower_bound_check_second(&pb, &times)?, crate::linear::second_order_constant(&pb), "C_inf")
        };
        let thr = o.factor * constant;
        let spread = rep.max / rep.min;
        for (t, r) in rep.times.iter().zip(&rep.ratios) {
            a.row("ratios.csv", "dim,order,t,ratio,threshold", format!("{n},{},{},{},{}", o.order, num(*t), num(*r), num(thr)));
        }
        a.check(Check::new(
            format!("lower bound n={n} order {}", o.order),
            rep.min >= thr,
            format!("min ratio {:.4} >= {} x {what} = {thr:.4}", rep.min, o.factor),
        ));
        a.check(Check::new(format!("ratio spread n={n} order {}", o.order), spread <= o.spread, format!("max/min {spread:.3} <= {}", o.spread)));
    }
    Ok(())
}

fn expected_slope(r: &DecayReport, ex: &[Expectation]) -> Option<(f64, f64)> {
    ex.iter().find(|e| e.norm == r.label).map(|e| (e.expected, e.tol))
}

fn run_nonlinear(sc: &Scenario, a: &mut Artifacts, out: &Path) -> Result<()> {
    let nl = need(&sc.nonlinear, "nonlinear", sc.kind)?;
    let mut pb = sc.nonlinear_problem(nl.eps)?;
    let with_states = sc.cross_check.is_some() || sc.kind == Kind::NonlinearProfiles;
    pb.store = if sc.cross_check.is_some() { StorePolicy::Full } else if with_states { StorePolicy::Psi } else { StorePolicy::None };
    let sol = picard_solve(&pb)?;
    let diag = sol.diag.clone().unwrap();
    write_trajectory_csv(&sol, &out.join("trajectory.csv"))?;
    write_iterations_csv(&diag, &out.join("iterations.csv"))?;
    a.check(Check::new(
        "picard self-consistency",
        diag.self_consistency <= nl.self_consistency,
        format!("{:.3e} <= {:.1e} after {} iterates", diag.self_consistency, nl.self_consistency, diag.levels),
    ));
    if let Some(t_fit) = nl.fit_from {
        for r in nonlinear_decay_suite(&sol, t_fit)? {
            match expected_slope(&r, &sc.expect) {
                Some((e, tol)) => a.fit_check(&r.clone().with_expectation(&r.label, e, tol)),
                None => a.fit(&r),
            }
        }
    }
    if let Some(c) = &sc.cross_check {
        let oracle = rk_march_oracle(&pb, c.rk_h)?;
        let rel = max_relative_l2(&sol, &oracle);
        a.check(Check::new("picard vs rk4", rel <= c.max_rel, format!("max relative L2 {rel:.3e} <= {:.1e}", c.max_rel)));
        let mut norms = vec![];
        for &eps in &c.eps_values {
            let mut q = sc.nonlinear_problem(eps)?;
            q.store = StorePolicy::Full;
            let full = picard_solve(&q)?;
            let lin = linear_march(&q)?;
            let d = difference_norm(&full, &lin, q.s)?.value;
            a.row("eps_scaling.csv", "eps,nonlinear_part_norm", format!("{},{}", num(eps), num(d)));
            norms.push(d);
        }
        let slope = loglog_slope(&c.eps_values, &norms);
        a.series.push(Series { label: "eps_scaling".into(), x: c.eps_values.clone(), y: norms, expected: c.slope, slope });
        a.check(Check::new("quadratic smallness", (slope - c.slope).abs() <= c.slope_tol, format!("slope {slope:.4}, expected {} ± {}", c.slope, c.slope_tol)));
    }
    if sc.kind == Kind::NonlinearProfiles {
        run_nonlinear_profile(sc, &pb, &sol, a)?;
    }
    Ok(())
}

fn run_nonlinear_profile(sc: &Scenario, pb: &NonlinearProblem, sol: &crate::nonlinear::Solution, a: &mut Artifacts) -> Result<()> {
    let pr = need(&sc.profile, "profile", sc.kind)?;
    let n = pb.params.dim;
    let tau = pb.params.tau;
    let m = nonlinear_moments(sol)?;
    let consts = ProfileConstants::from_problem(pb, sol, m.m_non);
    a.row(
        "constants.csv",
        "m12,m00,m_non,tail_bound,f0_decay_exponent,first_order_derived,first_order_printed",
        format!("{},{},{},{},{},{},{}", num(consts.m12), num(m.m00), num(m.m_non), num(m.tail_bound), num(m.f0_decay_exponent), num(consts.m12 - consts.m00), num(consts.m12 - tau * consts.m00)),
    );
    let tail_ok = m.tail_bound.is_finite() && m.tail_bound < pr.tail_fraction * m.m_non.abs();
    let mut rate = RateFunction::dns(n, (pr.k + pr.ell) as f64);
    if n == 2 && pr.k + pr.ell == 0 {
        rate = RateFunction::d(2);
    }
    let extra = |t: f64| if pr.order == 2 { (1.0 + t).powf(0.5) } else { 1.0 };
    if pr.order == 2 && !tail_ok {
        a.check(Check {
            name: "second-order profile".into(),
            verdict: Verdict::Skip,
            detail: format!("tail bound {:.3e} is not below {} x M_non = {:.3e}", m.tail_bound, pr.tail_fraction, pr.tail_fraction * m.m_non.abs()),
        });
    }
    for &v in &pr.variants {
        let res = nonlinear_profile_residual(pb, sol, &consts, pr.order, pr.ell, pr.k, v)?;
        let scaled: Vec<(f64, f64)> = res.iter().map(|&(t, r)| (t, r * extra(t) / rate_eval(&rate, t))).collect();
        for (t, s) in &scaled {
            a.row("profile_residual.csv", "variant,t,residual_over_rate", format!("{v:?},{},{}", num(*t), num(*s)));
        }
        if pr.order == 2 && !tail_ok {
            continue;
        }
        let tail: Vec<f64> = scaled.iter().filter(|(t, _)| *t >= pr.final_from * (1.0 - 1e-12)).map(|x| x.1).collect();
        let decreasing = tail.len() >= 2 && tail.windows(2).all(|w| w[1] < w[0]);
        a.check(Check::new(
            format!("residual/rate decreasing ({v:?})"),
            decreasing,
            format!("{} samples on [{}, {}], first {:.4e}, last {:.4e}", tail.len(), pr.final_from, pb.t_end, tail.first().copied().unwrap_or(f64::NAN), tail.last().copied().unwrap_or(f64::NAN)),
        ));
    }
    if pr.order == 1 {
        let constant = consts.m12 - tau * consts.m00;
        let ratios: Vec<f64> = sol.samples.iter().filter(|s| s.t >= pr.final_from * (1.0 - 1e-12)).map(|s| s.l2 / rate_eval(&rate, s.t)).collect();
        let min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        let thr = pr.lower_factor * constant.abs();
        a.check(Check::new(
            "lower bound |M1+tau*M2-tau*M00|",
            constant != 0.0 && min >= thr,
            format!("min ratio {min:.4} >= {} x {:.4} = {thr:.4}", pr.lower_factor, constant.abs()),
        ));
    }
    Ok(())
}

fn run_limit(sc: &Scenario, a: &mut Artifacts, out: &Path) -> Result<()> {
    let l = need(&sc.limit, "limit", sc.kind)?;
    let times = sc.times()?;
    for &n in &sc.model.dims {
        let pb = LimitProblem::new(sc.model.delta, n, sc.initial_data(), l.taus.clone())?;
        let worst = l.taus.iter().map(|&t| compatibility_residual(&pb, t)).collect::<Result<Vec<_>>>()?.into_iter().fold(0.0, f64::max);
        a.check(Check::new(format!("compatible datum n={n}"), worst <= l.compat_tol, format!("relative max |psi_tt(0) - (lap psi0 + delta lap psi1)|^ = {worst:.3e} <= {:.1e}", l.compat_tol)));
        let rep = limit_sweep(&pb, &times)?;
        rep.write_csv(&out.join(format!("limit_n{n}.csv")))?;
        for (what, slope, ratios, gaps) in [("l2", rep.slope_l2, &rep.ratios_l2, &rep.l2), ("linf", rep.slope_linf, &rep.ratios_linf, &rep.linf)] {
            a.series.push(Series { label: format!("n{n}_gap_{what}"), x: l.taus.clone(), y: gaps.iter().map(|g| g.sup).collect(), expected: l.slope, slope });
            a.check(Check::new(format!("rate in tau n={n} {what}"), (slope - l.slope).abs() <= l.slope_tol, format!("slope {slope:.4}, expected {} ± {}", l.slope, l.slope_tol)));
            let ok = ratios.iter().all(|r| *r >= l.ratio_min && *r <= l.ratio_max);
            let list: Vec<String> = ratios.iter().map(|r| format!("{r:.4}")).collect();
            a.check(Check::new(format!("halving ratios n={n} {what}"), ok, format!("[{}] within [{}, {}]", list.join(", "), l.ratio_min, l.ratio_max)));
        }
    }
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| LabError::Io(format!("{}: {e}", path.display())))
}

/// Run one scenario and write its artifacts under `out_root/<name>/`.
pub fn run(sc: &Scenario, source: &str, out_root: &Path) -> Result<RunManifest> {
    let start = Instant::now();
    let out = out_root.join(&sc.name);
    std::fs::create_dir_all(&out).map_err(|e| LabError::Io(format!("{}: {e}", out.display())))?;
    let mut a = Artifacts::default();
    let res = match sc.kind {
        Kind::Roots => run_roots(sc, &mut a),
        Kind::Kernels => run_kernels(sc, &mut a),
        Kind::LinearRates => run_linear_rates(sc, &mut a),
        Kind::Profiles => run_profiles(sc, &mut a),
        Kind::Optimality => run_optimality(sc, &mut a),
        Kind::Nonlinear | Kind::NonlinearProfiles => run_nonlinear(sc, &mut a, &out),
        Kind::SingularLimit => run_limit(sc, &mut a, &out),
    };
    res.map_err(|e| in_scenario(&sc.name, e))?;
    let mut checks_csv = String::from("check,verdict,detail\n");
    let mut summary = format!("{} ({:?})\n{}\n\n", sc.name, sc.kind, sc.description);
    for c in &a.checks {
        let v = match c.verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Skip => "SKIP",
        };
        let _ = writeln!(checks_csv, "{},{v},\"{}\"", c.name, c.detail.replace('"', "'"));
        let _ = writeln!(summary, "{v} {}: {}", c.name, c.detail);
    }
    write_text(&out.join("checks.csv"), &checks_csv)?;
    if !a.series.is_empty() {
        let mut s = String::from("label,x,y\n");
        for se in &a.series {
            for (x, y) in se.x.iter().zip(&se.y) {
                let _ = writeln!(s, "{},{},{}", se.label, num(*x), num(*y));
            }
        }
        write_text(&out.join("series.csv"), &s)?;
        let mut f = format!("{}\n", DecayReport::csv_header());
        for r in &a.fits {
            let _ = writeln!(f, "{r}");
        }
        for se in &a.series {
            if !a.fits.iter().any(|r| r.starts_with(&format!("{},", se.label))) {
                let _ = writeln!(f, "{},{:.6},{:.6},,,,", se.label, se.expected, se.slope);
            }
        }
        write_text(&out.join("fits.csv"), &f)?;
        emit_plots(&out)?;
    }
    for (file, (header, rows)) in &a.tables {
        let mut s = format!("{header}\n");
        for r in rows {
            let _ = writeln!(s, "{r}");
        }
        write_text(&out.join(file), &s)?;
    }
    let passed = a.checks.iter().all(|c| c.verdict != Verdict::Fail);
    let _ = writeln!(summary, "\n{}", if passed { "ALL CHECKS PASS" } else { "SOME CHECKS FAIL" });
    write_text(&out.join("summary.txt"), &summary)?;
    let manifest = RunManifest {
        scenario: sc.name.clone(),
        scenario_sha256: sha256_hex(source.as_bytes()),
        tool_version: TOOL_VERSION.to_string(),
        wall_clock_s: start.elapsed().as_secs_f64(),
        passed,
        checks: a.checks,
    };
    let text = toml::to_string(&manifest).map_err(|e| LabError::Io(e.to_string()))?;
    write_text(&out.join("manifest.toml"), &text)?;
    Ok(manifest)
}

/// Prefix the scenario name, keeping the error variant.
fn in_scenario(name: &str, e: LabError) -> LabError {
    let ctx = |m: String| format!("scenario {name}: {m}");
    match e {
        LabError::Config(m) => LabError::Config(ctx(m)),
        LabError::Io(m) => LabError::Io(ctx(m)),
        LabError::MissingData(m) => LabError::MissingData(ctx(m)),
        LabError::InvalidParams(m) => LabError::InvalidParams(ctx(m)),
        LabError::DegenerateSeries(m) => LabError::DegenerateSeries(ctx(m)),
        LabError::HypothesisViolated(m) => LabError::HypothesisViolated(ctx(m)),
        other => other,
    }
}

/// Gnuplot sources for every fitted series in `dir`: log-log data with a
/// guide line of the expected slope through the first point.
pub fn emit_plots(dir: &Path) -> Result<Vec<PathBuf>> {
    let series = std::fs::read_to_string(dir.join("series.csv")).map_err(|_| LabError::MissingData(format!("{}/series.csv not found", dir.display())))?;
    let fits = std::fs::read_to_string(dir.join("fits.csv")).unwrap_or_default();
    let mut expected: BTreeMap<String, f64> = BTreeMap::new();
    for line in fits.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() >= 2 {
            if let Ok(v) = f[1].parse::<f64>() {
                expected.insert(f[0].to_string(), v);
            }
        }
    }
    let mut data: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    let mut order: Vec<String> = vec![];
    for line in series.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            continue;
        }
        let (Ok(x), Ok(y)) = (f[1].parse::<f64>(), f[2].parse::<f64>()) else { continue };
        if !data.contains_key(f[0]) {
            order.push(f[0].to_string());
        }
        data.entry(f[0].to_string()).or_default().push((x, y));
    }
    if data.is_empty() {
        return Err(LabError::MissingData(format!("{}/series.csv has no rows", dir.display())));
    }
    let pdir = dir.join("plots");
    std::fs::create_dir_all(&pdir)?;
    let mut written = vec![];
    for label in order {
        let pts = &data[&label];
        let mut d = String::from("x,y\n");
        for (x, y) in pts {
            let _ = writeln!(d, "{},{}", num(*x), num(*y));
        }
        write_text(&pdir.join(format!("{label}.csv")), &d)?;
        let mut gp = format!(
            "set terminal pngcairo size 800,600\nset output '{label}.png'\nset datafile separator ','\nset logscale xy\nset key left bottom\nset title '{label}'\n"
        );
        match expected.get(&label) {
            Some(s) if s.is_finite() => {
                let (x0, y0) = pts[0];
                let _ = writeln!(gp, "slope = {s}\nc = {} / ({} ** slope)", num(y0), num(x0));
                let _ = writeln!(gp, "plot '{label}.csv' using 1:2 skip 1 with linespoints title '{label}', c * x ** slope with lines dashtype 2 title sprintf('slope %.3f', slope)");
            }
            _ => {
                let _ = writeln!(gp, "plot '{label}.csv' using 1:2 skip 1 with linespoints title '{label}'");
            }
        }
        let path = pdir.join(format!("{label}.gp"));
        write_text(&path, &gp)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_scenarios_parse() {
        for (name, text) in BUNDLED {
            let sc = Scenario::parse(text, name).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(&sc.name, name);
        }
    }

    #[test]
    fn unknown_key_is_named() {
        let text = BUNDLED[0].1.replace("[roots]", "[roots]\nbogus_key = 1");
        let err = Scenario::parse(&text, "x.toml").unwrap_err();
        assert!(matches!(&err, LabError::Config(m) if m.contains("bogus_key")), "{err}");
    }

    #[test]
    fn missing_section_rejected() {
        let text = "name = \"a\"\nkind = \"optimality\"\n[model]\ntau = 0.5\ndelta = 1.0\ndims = [1]\n";
        assert!(matches!(Scenario::parse(text, "a.toml"), Err(LabError::Config(_))));
    }

    #[test]
    fn empty_series_is_missing_data() {
        let dir = std::env::temp_dir().join(format!("mgtlab-empty-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join("series.csv"), "label,x,y\n").unwrap();
        assert!(matches!(emit_plots(&dir), Err(LabError::MissingData(_))));
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
