use mgt_lab::fields::{GridField, Space};
use mgt_lab::model::{DataPreset, InitialData, ModelParams};
use mgt_lab::nonlinear::*;
use mgt_lab::spectral::ModeKernels;

fn problem(eps: f64, n: usize) -> NonlinearProblem {
    let p = ModelParams::new(0.5, 1.0, n).unwrap().with_nonlin_ratio(2.0).unwrap();
    let d = InitialData::new(vec![DataPreset::gaussian(1.0, 1.0)], vec![DataPreset::gaussian(0.8, 1.0)], vec![DataPreset::gaussian(-0.4, 1.0)]);
    let points = if n == 1 { 512 } else { 64 };
    let mut pb = NonlinearProblem::new(p, d, eps, points, 12.0, 0.05, 2.0);
    pb.sampling = Sampling::Uniform { every: 10 };
    pb.store = StorePolicy::Full;
    pb
}

fn state(pb: &NonlinearProblem, g: &SpectralGrid, t: f64) -> StateSnapshot {
    StateSnapshot { t, psi: linear_on_grid(pb, g, t, 0), psi_t: linear_on_grid(pb, g, t, 1), psi_tt: linear_on_grid(pb, g, t, 2) }
}

fn x(g: &SpectralGrid, i: usize) -> f64 {
    GridField::zeros(1, g.n, g.half_len, Space::Physical).coord(i)
}

fn max_abs(v: impl Iterator<Item = f64>) -> f64 {
    v.fold(0.0, f64::max)
}

#[test]
fn source_is_time_derivative_of_quadratic_term() {
    for (mode, n) in [(Nonlinearity::Kuznetsov, 1), (Nonlinearity::Kuznetsov, 2), (Nonlinearity::Westervelt, 1)] {
        let pb = problem(1.0, n);
        let g = SpectralGrid::new(n, pb.points, pb.half_len);
        let t = 0.7;
        let f = f_eval(&g, &state(&pb, &g, t), mode, 2.0);
        let err = |dt: f64| {
            let up = f0_eval(&g, &state(&pb, &g, t + dt), mode, 2.0);
            let dn = f0_eval(&g, &state(&pb, &g, t - dt), mode, 2.0);
            max_abs((0..g.len()).map(|i| ((up.values[i] - dn.values[i]) / (2.0 * dt) - f.values[i]).norm()))
        };
        let (e1, e2) = (err(1e-2), err(5e-3));
        assert!(e1 / e2 > 3.5, "{mode:?} n={n}: {e1} {e2}");
        let fmax = max_abs(f.values.iter().map(|v| v.norm()));
        assert!(e2 < 1e-3 * fmax, "{mode:?} n={n}: {e2} vs {fmax}");
    }
}

#[test]
fn duhamel_of_constant_source() {
    // τy''' + y'' + (δ+τ)k²y' + k²y = F with zero data: y = F(1 − K0(t))/k²
    let pb = problem(1.0, 1);
    let g = SpectralGrid::new(1, 128, 10.0);
    let phys: Vec<f64> = (0..g.len()).map(|i| (-x(&g, i).powi(2)).exp()).collect();
    let fhat = g.forward_real(&phys);
    let h = 0.01;
    let t = 3.0;
    let hist = SourceHistory { h, values: vec![fhat.clone(); 301] };
    let got = duhamel_apply(&pb.params, &g, &hist, t, 0).unwrap();
    let mut worst: f64 = 0.0;
    for i in 1..g.len() {
        let k = g.xi(i)[0].abs();
        let want = fhat[i] * (1.0 - ModeKernels::new(&pb.params, k).eval(0, 0, t)) / (k * k);
        worst = worst.max((got[i] - want).norm() / fhat.iter().map(|v| v.norm()).fold(0.0, f64::max));
    }
    assert!(worst < 1e-8, "{worst}");
}

#[test]
fn split_form_agrees_with_direct_form() {
    // f0(σ) = sin(σ)·v, f = cos(σ)·v
    let pb = problem(1.0, 1);
    let g = SpectralGrid::new(1, 128, 10.0);
    let phys: Vec<f64> = (0..g.len()).map(|i| (-x(&g, i).powi(2) / 2.0).exp()).collect();
    let v = g.forward_real(&phys);
    let h = 0.005;
    let steps = 400;
    let make = |w: fn(f64) -> f64| SourceHistory { h, values: (0..=steps).map(|q| v.iter().map(|z| z * w(q as f64 * h)).collect()).collect() };
    let (f0, f) = (make(f64::sin), make(f64::cos));
    for ell in 0..=1 {
        let a = duhamel_apply(&pb.params, &g, &f, 2.0, ell).unwrap();
        let b = duhamel_apply_split(&pb.params, &g, &f0, &f, 2.0, ell).unwrap();
        let scale = max_abs(a.iter().map(|z| z.norm()));
        let diff = max_abs(a.iter().zip(&b).map(|(x, y)| (x - y).norm()));
        assert!(diff < 1e-6 * scale, "ell={ell}: {diff} vs {scale}");
    }
    let odd = duhamel_apply_split(&pb.params, &g, &f0, &f, 0.005 * 3.0, 0);
    assert!(odd.is_err());
}

#[test]
fn rk_oracle_is_fourth_order() {
    // coarse grid keeps the explicit scheme stable at h = 0.05
    let mut pb = problem(0.3, 1);
    pb.points = 128;
    pb.min_points_per_sigma = 4.0;
    let sols: Vec<Solution> = [0.05, 0.025, 0.0125].iter().map(|&h| rk_march_oracle(&pb, h).unwrap()).collect();
    let e1 = max_relative_l2(&sols[0], &sols[1]);
    let e2 = max_relative_l2(&sols[1], &sols[2]);
    assert!(e1 / e2 >= 8.0, "{e1} {e2}");
}

#[test]
fn picard_converges_to_oracle_under_refinement() {
    let coarse = problem(0.3, 1);
    let mut fine = coarse.clone();
    fine.h = 0.025;
    fine.sampling = Sampling::Uniform { every: 20 };
    let rk = rk_march_oracle(&coarse, 0.01).unwrap();
    let e1 = max_relative_l2(&picard_solve(&coarse).unwrap(), &rk);
    let e2 = max_relative_l2(&picard_solve(&fine).unwrap(), &rk);
    assert!(e2 < e1 / 3.0, "{e1} {e2}");
}

#[test]
fn difference_norm_scales_quadratically() {
    let norms: Vec<f64> = [0.02, 0.01]
        .iter()
        .map(|&e| {
            let pb = problem(e, 1);
            difference_norm(&picard_solve(&pb).unwrap(), &linear_march(&pb).unwrap(), pb.s).unwrap().value
        })
        .collect();
    let ratio = norms[0] / norms[1];
    assert!((ratio - 4.0).abs() < 0.3, "{ratio}");
}

#[test]
fn evolution_norm_of_nothing_is_zero() {
    let s = NormSample { t: 1.0, l2: 0.0, h1: 0.0, dt_l2: 0.0, dtt_l2: 0.0, top: [0.0; 3], f0_mass: 0.0, f0_l1: 0.0 };
    for n in 1..=3 {
        assert_eq!(evolution_norm(&[s, NormSample { t: 2.0, ..s }], n, 1.0).value, 0.0);
    }
}
