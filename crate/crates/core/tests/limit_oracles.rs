use mgt_lab::limit::{gap_at, kuznetsov_mode, kuznetsov_solve_hat, mgt_solve_hat, LimitProblem};
use mgt_lab::model::{DataPreset, InitialData};
use num_complex::Complex64 as C;

/// y'' + δk²y' + k²y = 0 by classical RK4 with a fine step.
fn ode(delta: f64, k: f64, y0: f64, y1: f64, t: f64) -> [f64; 3] {
    let rhs = |y: [f64; 2]| [y[1], -delta * k * k * y[1] - k * k * y[0]];
    let steps = 20000;
    let h = t / steps as f64;
    let mut y = [y0, y1];
    for _ in 0..steps {
        let a = rhs(y);
        let b = rhs([y[0] + 0.5 * h * a[0], y[1] + 0.5 * h * a[1]]);
        let c = rhs([y[0] + 0.5 * h * b[0], y[1] + 0.5 * h * b[1]]);
        let d = rhs([y[0] + h * c[0], y[1] + h * c[1]]);
        for i in 0..2 {
            y[i] += h / 6.0 * (a[i] + 2.0 * b[i] + 2.0 * c[i] + d[i]);
        }
    }
    let acc = rhs(y)[1];
    [y[0], y[1], acc]
}

#[test]
fn kuznetsov_mode_matches_ode() {
    // under-, critically and overdamped modes
    for (delta, k) in [(1.0, 0.3), (1.0, 2.0), (0.5, 4.0), (1.0, 5.0)] {
        let want = ode(delta, k, 0.7, -0.4, 3.0);
        for ell in 0..=2 {
            let got = kuznetsov_mode(delta, k, C::new(0.7, 0.0), C::new(-0.4, 0.0), 3.0, ell as u32);
            assert!((got.re - want[ell]).abs() < 1e-10 * want[ell].abs().max(1.0), "delta={delta} k={k} ell={ell}: {} vs {}", got.re, want[ell]);
            assert_eq!(got.im, 0.0);
        }
    }
}

fn problem(taus: Vec<f64>) -> LimitProblem {
    let d = InitialData::new(vec![DataPreset::gaussian(1.0, 1.0)], vec![DataPreset::gaussian(0.5, 1.0)], vec![]);
    LimitProblem::new(1.0, 1, d, taus).unwrap()
}

#[test]
fn mgt_solution_approaches_kuznetsov() {
    let pb = problem(vec![0.1, 0.01, 0.001]);
    let t = 2.0;
    let g = pb.grid(t).unwrap();
    let kz = kuznetsov_solve_hat(&pb, &g, t, 0);
    let gaps: Vec<f64> = pb.taus.iter().map(|&tau| mgt_solve_hat(&pb, tau, &g, t, 0).unwrap().sub(&kz).hs_norm(0.0)).collect();
    for w in gaps.windows(2) {
        let r = w[0] / w[1];
        assert!((r - 10.0).abs() < 1.5, "{gaps:?}");
    }
}

#[test]
fn linf_surrogate_bounds_value_at_origin() {
    let pb = problem(vec![0.05]);
    for t in [0.5, 5.0, 50.0] {
        let g = pb.grid(t).unwrap();
        let diff = mgt_solve_hat(&pb, 0.05, &g, t, 0).unwrap().sub(&kuznetsov_solve_hat(&pb, &g, t, 0));
        // ψ(0) = ∫ψ̂ dξ/2π, on a signed line or twice the half-line
        let fold = if g.line { 1.0 } else { 2.0 };
        let at_origin: f64 = g.weights.iter().zip(&diff.values).map(|(w, v)| fold * w * v.re).sum::<f64>() / (2.0 * std::f64::consts::PI);
        let (_, linf) = gap_at(&pb, 0.05, t).unwrap();
        assert!(at_origin.abs() > 0.0);
        assert!(linf >= at_origin.abs() * (1.0 - 1e-12), "t={t}: {linf} < {}", at_origin.abs());
    }
}
