use mgt_lab::linear::{fit_decay, geometric_times, residual_norm, solve_linear_hat, LinearProblem, Order, ProfileSpec};
use mgt_lab::model::{DataPreset, InitialData, ModelParams};
use proptest::prelude::*;

fn data(a: [f64; 3], w: f64) -> InitialData {
    InitialData::new(vec![DataPreset::gaussian(a[0], w)], vec![DataPreset::gaussian(a[1], w)], vec![DataPreset::gaussian(a[2], w)])
}

fn join(a: &InitialData, b: &InitialData) -> InitialData {
    let cat = |i: usize| [a.slots[i].clone(), b.slots[i].clone()].concat();
    InitialData::new(cat(0), cat(1), cat(2))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn solution_is_linear_in_data(
        a in prop::array::uniform3(-2.0f64..2.0),
        b in prop::array::uniform3(-2.0f64..2.0),
        c in -3.0f64..3.0,
        n in 1usize..=3,
        ell in 0u32..=2,
        t in 0.0f64..50.0,
    ) {
        let p = ModelParams::new(0.5, 1.0, n).unwrap();
        let (da, db) = (data(a, 1.0), data(b, 0.7));
        let pa = LinearProblem::new(p, da.clone()).unwrap();
        let pb = LinearProblem::new(p, db.clone()).unwrap();
        let pab = LinearProblem::new(p, join(&da, &db)).unwrap();
        let pc = LinearProblem::new(p, da.scaled(c)).unwrap();
        let g = pab.grid(t).unwrap();
        let sa = solve_linear_hat(&pa, &g, t, ell);
        let sb = solve_linear_hat(&pb, &g, t, ell);
        let sab = solve_linear_hat(&pab, &g, t, ell);
        let sc = solve_linear_hat(&pc, &g, t, ell);
        let scale = sab.hs_norm(0.0).max(sa.hs_norm(0.0)).max(1e-300);
        prop_assert!(sab.sub(&sa.add(&sb)).hs_norm(0.0) <= 1e-12 * scale);
        prop_assert!(sc.sub(&sa.scale(c)).hs_norm(0.0) <= 1e-12 * (c.abs() * sa.hs_norm(0.0)).max(1e-300));
    }
}

#[test]
fn second_order_profile_gains_half_a_power() {
    let times = geometric_times(1e2, 1e4, 8);
    for n in 1..=3 {
        let pb = LinearProblem::new(ModelParams::new(0.5, 1.0, n).unwrap(), data([1.0, 0.5, -0.3], 1.0)).unwrap();
        let slope = |order| {
            let v: Vec<f64> = times.iter().map(|&t| residual_norm(&pb, ProfileSpec { order, ell: 0, k: 0 }, t).unwrap()).collect();
            fit_decay(&times, &v).unwrap().slope
        };
        let (s1, s2) = (slope(Order::First), slope(Order::Second));
        assert!(s2 <= s1 - 0.4, "n={n}: first {s1}, second {s2}");
    }
}
