//! Adaptive Dormand–Prince 5(4) integrator for small dense systems.

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
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Integrates y' = f(t, y) from 0 to `t_end` with mixed tolerance `tol`.
pub fn dopri5<F>(f: F, y0: &[f64], t_end: f64, tol: f64) -> Vec<f64>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let n = y0.len();
    let mut y = y0.to_vec();
    if t_end <= 0.0 {
        return y;
    }
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    let mut tmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];
    let mut t = 0.0;
    let mut h = (t_end * 1e-3).min(1e-2);
    f(t, &y, &mut k[0]);
    let mut steps = 0usize;
    while t < t_end {
        steps += 1;
        assert!(steps < 50_000_000, "dopri5 step budget exhausted");
        if t + h > t_end {
            h = t_end - t;
        }
        let stage = |coef: &[(usize, f64)], tmp: &mut [f64], k: &[Vec<f64>], y: &[f64]| {
            for i in 0..n {
                let mut s = y[i];
                for &(j, a) in coef {
                    s += h * a * k[j][i];
                }
                tmp[i] = s;
            }
        };
        stage(&[(0, A21)], &mut tmp, &k, &y);
        f(t + C2 * h, &tmp, &mut k[1]);
        stage(&[(0, A31), (1, A32)], &mut tmp, &k, &y);
        f(t + C3 * h, &tmp, &mut k[2]);
        stage(&[(0, A41), (1, A42), (2, A43)], &mut tmp, &k, &y);
        f(t + C4 * h, &tmp, &mut k[3]);
        stage(&[(0, A51), (1, A52), (2, A53), (3, A54)], &mut tmp, &k, &y);
        f(t + C5 * h, &tmp, &mut k[4]);
        stage(&[(0, A61), (1, A62), (2, A63), (3, A64), (4, A65)], &mut tmp, &k, &y);
        f(t + h, &tmp, &mut k[5]);
        for i in 0..n {
            ynew[i] = y[i] + h * (B1 * k[0][i] + B3 * k[2][i] + B4 * k[3][i] + B5 * k[4][i] + B6 * k[5][i]);
        }
        f(t + h, &ynew, &mut k[6]);
        let mut err = 0.0f64;
        for i in 0..n {
            let e = h
                * (E1 * k[0][i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i] + E6 * k[5][i] + E7 * k[6][i]);
            let sc = tol * (1.0 + y[i].abs().max(ynew[i].abs()));
            err = err.max((e / sc).abs());
        }
        if err <= 1.0 {
            t += h;
            std::mem::swap(&mut y, &mut ynew);
            let last = k.pop().unwrap();
            k[0].copy_from_slice(&last);
            k.push(last);
        }
        let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= fac;
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_oscillator() {
        let y = dopri5(|_, y, d| { d[0] = y[1]; d[1] = -y[0]; }, &[1.0, 0.0], 10.0, 1e-12);
        assert!((y[0] - 10f64.cos()).abs() < 1e-9);
        assert!((y[1] + 10f64.sin()).abs() < 1e-9);
    }
}
