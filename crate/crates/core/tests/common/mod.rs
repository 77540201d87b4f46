//! Independent oracles shared by the integration tests. Nothing here calls
//! into the code paths it is used to check.
#![allow(dead_code)]

use lettuce_bnode::physics::{derivatives, ControlInput, Disturbance, GreenhouseState, ModelParameters};

pub const NOMINAL_X0: [f64; 4] = [0.0035, 0.001, 15.0, 0.008];

/// Dormand–Prince 5(4) with embedded error control. Integrates `f` over
/// `[0, t_end]` with relative tolerance `tol` (the absolute floor is far
/// below any state magnitude in the model).
pub fn dopri5<F>(f: F, y0: [f64; 4], t_end: f64, tol: f64) -> [f64; 4]
where
    F: Fn(&[f64; 4]) -> [f64; 4],
{
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [
            19372.0 / 6561.0,
            -25360.0 / 2187.0,
            64448.0 / 6561.0,
            -212.0 / 729.0,
            0.0,
            0.0,
        ],
        [
            9017.0 / 3168.0,
            -355.0 / 33.0,
            46732.0 / 5247.0,
            49.0 / 176.0,
            -5103.0 / 18656.0,
            0.0,
        ],
        [
            35.0 / 384.0,
            0.0,
            500.0 / 1113.0,
            125.0 / 192.0,
            -2187.0 / 6784.0,
            11.0 / 84.0,
        ],
    ];
    const B5: [f64; 7] = [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
        0.0,
    ];
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];

    let mut y = y0;
    let mut t = 0.0;
    let mut h = (t_end / 100.0).min(10.0);
    let mut k = [[0.0; 4]; 7];
    while t < t_end {
        if t + h > t_end {
            h = t_end - t;
        }
        k[0] = f(&y);
        for s in 1..7 {
            let mut ys = y;
            for i in 0..4 {
                for j in 0..s {
                    ys[i] += h * A[s][j] * k[j][i];
                }
            }
            k[s] = f(&ys);
        }
        let mut y5 = y;
        let mut err = 0.0f64;
        for i in 0..4 {
            let mut d5 = 0.0;
            let mut d4 = 0.0;
            for s in 0..7 {
                d5 += B5[s] * k[s][i];
                d4 += B4[s] * k[s][i];
            }
            y5[i] += h * d5;
            let scale = tol * y[i].abs().max(y5[i].abs()).max(1e-12);
            err = err.max((h * (d5 - d4)).abs() / scale);
        }
        if err <= 1.0 {
            t += h;
            y = y5;
        }
        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h *= factor;
    }
    y
}

/// Reference trajectory of the greenhouse model under zero-order-held inputs.
pub fn reference_trajectory(
    x0: [f64; 4],
    u: &[ControlInput],
    d: &[Disturbance],
    p: &ModelParameters,
    h: f64,
    tol: f64,
) -> Vec<[f64; 4]> {
    let mut out = vec![x0];
    let mut x = x0;
    for (uk, dk) in u.iter().zip(d) {
        let rhs = |y: &[f64; 4]| derivatives(&GreenhouseState::from_array(*y), uk, dk, p).unwrap().0;
        x = dopri5(rhs, x, h, tol);
        out.push(x);
    }
    out
}

/// Fourth-order central difference `(-f(x+2e) + 8f(x+e) - 8f(x-e) + f(x-2e)) / 12e`.
pub fn fd_grad<F>(f: F, point: &[f64], eps: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut x = point.to_vec();
    (0..point.len())
        .map(|i| {
            let at = |x: &mut Vec<f64>, delta: f64| {
                x[i] = point[i] + delta;
                let v = f(x);
                x[i] = point[i];
                v
            };
            let f_p2 = at(&mut x, 2.0 * eps);
            let f_p1 = at(&mut x, eps);
            let f_m1 = at(&mut x, -eps);
            let f_m2 = at(&mut x, -2.0 * eps);
            (-f_p2 + 8.0 * f_p1 - 8.0 * f_m1 + f_m2) / (12.0 * eps)
        })
        .collect()
}

/// Largest componentwise relative error, with `floor` guarding tiny entries.
pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub fn report(name: &str, pass: bool, detail: impl std::fmt::Display) {
    println!("[{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
}
