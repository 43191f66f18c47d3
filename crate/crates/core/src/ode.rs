//! Dormand–Prince 5(4) integrator with adaptive step control.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            rtol: 1e-12,
            atol: 1e-300,
            max_steps: 1_000_000,
        }
    }
}

impl Tolerance {
    pub fn with_rtol(self, rtol: f64) -> Self {
        Tolerance { rtol, ..self }
    }
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
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
// fifth-order weights are the last row of A; these are the fourth-order ones
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrates `y' = f(t, y)` from `t0` to `t1 > t0`.
pub fn integrate<const N: usize, F>(
    mut f: F,
    t0: f64,
    y0: [f64; N],
    t1: f64,
    tol: Tolerance,
) -> Result<[f64; N]>
where
    F: FnMut(f64, &[f64; N]) -> Result<[f64; N]>,
{
    if !(t1 >= t0) {
        return Err(Error::Integration(format!(
            "end time {t1} precedes start {t0}"
        )));
    }
    let span = t1 - t0;
    if span == 0.0 {
        return Ok(y0);
    }
    let mut t = t0;
    let mut y = y0;
    let mut h = (span * 1e-3).min(1e-2);
    let mut k = [[0.0; N]; 7];
    k[0] = f(t, &y)?;

    for _ in 0..tol.max_steps {
        let last = t + h >= t1;
        if last {
            h = t1 - t;
        }
        for s in 1..7 {
            let mut ys = y;
            for (i, v) in ys.iter_mut().enumerate() {
                *v += h * (0..s).map(|j| A[s][j] * k[j][i]).sum::<f64>();
            }
            k[s] = f(t + C[s] * h, &ys)?;
        }
        // stage 7 is evaluated at the fifth-order solution (FSAL)
        let mut y_new = y;
        let mut err = 0.0f64;
        for i in 0..N {
            let high: f64 = (0..6).map(|j| A[6][j] * k[j][i]).sum();
            let low: f64 = (0..7).map(|j| B4[j] * k[j][i]).sum();
            y_new[i] = y[i] + h * high;
            let scale = tol.atol + tol.rtol * y[i].abs().max(y_new[i].abs());
            err = err.max((h * (high - low)).abs() / scale);
        }
        if !err.is_finite() {
            return Err(Error::Integration(format!("non-finite state at t = {t}")));
        }
        if err <= 1.0 {
            t = if last { t1 } else { t + h };
            y = y_new;
            k[0] = k[6];
            if last {
                return Ok(y);
            }
        }
        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h *= factor;
        if h < 1e-14 * span {
            return Err(Error::Integration(format!(
                "step size underflow at t = {t}"
            )));
        }
    }
    Err(Error::Integration(format!(
        "step limit {} reached",
        tol.max_steps
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let y = integrate(
            |_, y: &[f64; 1]| Ok([-y[0]]),
            0.0,
            [1.0],
            10.0,
            Tolerance::default(),
        )
        .unwrap();
        assert!((y[0] / (-10.0f64).exp() - 1.0).abs() < 1e-11);
    }

    #[test]
    fn harmonic_oscillator() {
        let y = integrate(
            |_, y: &[f64; 2]| Ok([y[1], -y[0]]),
            0.0,
            [0.0, 1.0],
            3.0,
            Tolerance::default(),
        )
        .unwrap();
        assert!((y[0] - 3f64.sin()).abs() < 1e-11);
        assert!((y[1] - 3f64.cos()).abs() < 1e-11);
    }

    #[test]
    fn errors_propagate() {
        let r = integrate(
            |t, y: &[f64; 1]| {
                if t > 0.5 {
                    Err(Error::Integration("stop".into()))
                } else {
                    Ok([y[0]])
                }
            },
            0.0,
            [1.0],
            1.0,
            Tolerance::default(),
        );
        assert!(r.is_err());
        assert!(integrate(
            |_, y: &[f64; 1]| Ok([y[0]]),
            1.0,
            [1.0],
            0.0,
            Tolerance::default()
        )
        .is_err());
    }
}
