//! Dulac maps of a hyperbolic saddle `ẋ = x, ẏ = -y g(x, y, β)` computed by
//! integration from `{y = 1}` to `{x = 1}`, with their variational
//! derivatives in the initial point and in `ε`.
//!
//! `x(t) = x0 e^t` is substituted in closed form, so only the `y` equation
//! (and its variations) is integrated over `t ∈ [0, -log x0]`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dulacmodel::SaddleModel;
use crate::error::{Error, Result};
use crate::ode::{integrate, Tolerance};

/// Admissible starting points on `{y = 1}`.
pub const X0_RANGE: (f64, f64) = (1e-8, 0.1);
/// Margin applied to empirically recorded bands.
pub const BAND_MARGIN: f64 = 1.1;

/// Parameter point `β = (η, ε)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Beta {
    pub eta: Vec<f64>,
    pub eps: f64,
}

impl Beta {
    pub fn new(eta: Vec<f64>, eps: f64) -> Self {
        Beta { eta, eps }
    }
}

/// Orbital normal form of a saddle.
pub trait SaddleField: Sync {
    fn g(&self, x: f64, y: f64, beta: &Beta) -> f64;

    /// `∂g/∂y`, central difference unless overridden.
    fn g_y(&self, x: f64, y: f64, beta: &Beta) -> f64 {
        let h = 1e-6 * y.abs().max(1e-3);
        (self.g(x, y + h, beta) - self.g(x, y - h, beta)) / (2.0 * h)
    }

    /// `∂g/∂ε`, central difference unless overridden.
    fn g_eps(&self, x: f64, y: f64, beta: &Beta) -> f64 {
        let h = 1e-6;
        let up = Beta {
            eps: beta.eps + h,
            ..beta.clone()
        };
        let down = Beta {
            eps: beta.eps - h,
            ..beta.clone()
        };
        (self.g(x, y, &up) - self.g(x, y, &down)) / (2.0 * h)
    }

    /// `λ(0) = g(0, 0, 0)`, the centre of the admissible band.
    fn lambda0(&self) -> f64 {
        self.g(0.0, 0.0, &Beta::default())
    }

    /// `λ(β) = g(0, 0, β)`.
    fn lambda(&self, beta: &Beta) -> f64 {
        self.g(0.0, 0.0, beta)
    }

    /// Open band `g` must stay in along trajectories.
    fn band(&self) -> (f64, f64) {
        let l0 = self.lambda0();
        (0.5 * l0, 2.0 * l0)
    }
}

/// A field with an explicitly declared working band, for normal forms
/// whose rectangle is larger than the default `(λ0/2, 2λ0)` allows.
pub struct Banded<S> {
    pub field: S,
    pub low: f64,
    pub high: f64,
}

impl<S: SaddleField> SaddleField for Banded<S> {
    fn g(&self, x: f64, y: f64, beta: &Beta) -> f64 {
        self.field.g(x, y, beta)
    }
    fn g_y(&self, x: f64, y: f64, beta: &Beta) -> f64 {
        self.field.g_y(x, y, beta)
    }
    fn g_eps(&self, x: f64, y: f64, beta: &Beta) -> f64 {
        self.field.g_eps(x, y, beta)
    }
    fn band(&self) -> (f64, f64) {
        (self.low, self.high)
    }
}

/// `g = λ + kx·x + ky·y + keps·ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearField {
    pub lambda: f64,
    #[serde(default)]
    pub kx: f64,
    #[serde(default)]
    pub ky: f64,
    #[serde(default)]
    pub keps: f64,
}

impl LinearField {
    pub fn constant(lambda: f64) -> Self {
        LinearField {
            lambda,
            kx: 0.0,
            ky: 0.0,
            keps: 0.0,
        }
    }
}

impl SaddleField for LinearField {
    fn g(&self, x: f64, y: f64, beta: &Beta) -> f64 {
        self.lambda + self.kx * x + self.ky * y + self.keps * beta.eps
    }

    fn g_y(&self, _: f64, _: f64, _: &Beta) -> f64 {
        self.ky
    }

    fn g_eps(&self, _: f64, _: f64, _: &Beta) -> f64 {
        self.keps
    }
}

/// A field given by a closure; derivatives are finite-differenced.
pub struct FnField<F>(pub F);

impl<F> SaddleField for FnField<F>
where
    F: Fn(f64, f64, &Beta) -> f64 + Sync,
{
    fn g(&self, x: f64, y: f64, beta: &Beta) -> f64 {
        (self.0)(x, y, beta)
    }
}

fn check_x0(x0: f64) -> Result<()> {
    if !(X0_RANGE.0..=X0_RANGE.1).contains(&x0) {
        return Err(Error::domain(format!(
            "x0 = {x0:e} outside [{:e}, {:e}]",
            X0_RANGE.0, X0_RANGE.1
        )));
    }
    Ok(())
}

/// `g` along the trajectory, aborting when it leaves the field's band.
fn banded_g<S: SaddleField + ?Sized>(
    field: &S,
    (low, high): (f64, f64),
    x: f64,
    y: f64,
    beta: &Beta,
) -> Result<f64> {
    let g = field.g(x, y, beta);
    if !(g > low && g < high) {
        return Err(Error::FieldBand { x, y, g, low, high });
    }
    Ok(g)
}

/// `y(T)` for the orbit through `(x0, y0)`, `T = -log x0`.
pub fn dulac_ode_from<S: SaddleField + ?Sized>(
    field: &S,
    x0: f64,
    y0: f64,
    beta: &Beta,
    tol: Tolerance,
) -> Result<f64> {
    check_x0(x0)?;
    let band = field.band();
    let rhs = |t: f64, s: &[f64; 1]| {
        let x = x0 * t.exp();
        let g = banded_g(field, band, x, s[0], beta)?;
        Ok([-s[0] * g])
    };
    Ok(integrate(rhs, 0.0, [y0], -x0.ln(), tol)?[0])
}

/// `Δ_β(x0)`: the transit map from `{y = 1}` to `{x = 1}`.
pub fn dulac_ode<S: SaddleField + ?Sized>(field: &S, x0: f64, beta: &Beta) -> Result<f64> {
    dulac_ode_from(field, x0, 1.0, beta, Tolerance::default())
}

/// Trajectory values `y(t)` at the requested times in `[0, -log x0]`.
pub fn trajectory<S: SaddleField + ?Sized>(
    field: &S,
    x0: f64,
    beta: &Beta,
    times: &[f64],
) -> Result<Vec<f64>> {
    check_x0(x0)?;
    let band = field.band();
    let t_end = -x0.ln();
    let rhs = |t: f64, s: &[f64; 1]| {
        let g = banded_g(field, band, x0 * t.exp(), s[0], beta)?;
        Ok([-s[0] * g])
    };
    let (mut t, mut y) = (0.0, 1.0);
    let mut out = Vec::with_capacity(times.len());
    for &tk in times {
        if !(tk >= t && tk <= t_end) {
            return Err(Error::domain(format!(
                "times must increase within [0, {t_end}], got {tk}"
            )));
        }
        y = integrate(rhs, t, [y], tk, Tolerance::default())?[0];
        t = tk;
        out.push(y);
    }
    Ok(out)
}

/// `sup_t |-log y(t) - λ(β) t|` over `samples` equally spaced times.
pub fn log_deviation<S: SaddleField + ?Sized>(
    field: &S,
    x0: f64,
    beta: &Beta,
    samples: usize,
) -> Result<f64> {
    let t_end = -x0.ln();
    let times: Vec<f64> = (1..=samples)
        .map(|k| t_end * k as f64 / samples as f64)
        .collect();
    let lambda = field.lambda(beta);
    let ys = trajectory(field, x0, beta, &times)?;
    Ok(times
        .iter()
        .zip(ys)
        .map(|(t, y)| (-y.ln() - lambda * t).abs())
        .fold(0.0, f64::max))
}

/// Base value with its variations in the initial `y` and in `ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Variational {
    pub delta: f64,
    /// `∂Δ/∂y0` at `y0 = 1`.
    pub z: f64,
    /// `∂Δ/∂ε`.
    pub w: f64,
}

pub fn dulac_variational_tol<S: SaddleField + ?Sized>(
    field: &S,
    x0: f64,
    beta: &Beta,
    tol: Tolerance,
) -> Result<Variational> {
    check_x0(x0)?;
    let band = field.band();
    let rhs = |t: f64, s: &[f64; 3]| {
        let x = x0 * t.exp();
        let y = s[0];
        let g = banded_g(field, band, x, y, beta)?;
        let a = g + y * field.g_y(x, y, beta);
        let b = y * field.g_eps(x, y, beta);
        Ok([-y * g, -a * s[1], -a * s[2] - b])
    };
    let [delta, z, w] = integrate(rhs, 0.0, [1.0, 1.0, 0.0], -x0.ln(), tol)?;
    Ok(Variational { delta, z, w })
}

pub fn dulac_variational<S: SaddleField + ?Sized>(
    field: &S,
    x0: f64,
    beta: &Beta,
) -> Result<Variational> {
    dulac_variational_tol(field, x0, beta, Tolerance::default())
}

/// One row of an `x0` sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub x0: f64,
    pub delta: f64,
    pub z: f64,
    pub w: f64,
    /// `Δ(x0) / x0^λ(β)`.
    pub ratio: f64,
    /// `z / x0^λ(β)`.
    pub z_ratio: f64,
}

/// `count` log-spaced starting points in `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|k| (a + (b - a) * k as f64 / (count - 1) as f64).exp())
        .collect()
}

pub fn sweep<S: SaddleField + ?Sized>(
    field: &S,
    beta: &Beta,
    x0s: &[f64],
) -> Result<Vec<SweepRow>> {
    let lambda = field.lambda(beta);
    x0s.par_iter()
        .map(|&x0| {
            let v = dulac_variational(field, x0, beta)?;
            let power = x0.powf(lambda);
            Ok(SweepRow {
                x0,
                delta: v.delta,
                z: v.z,
                w: v.w,
                ratio: v.delta / power,
                z_ratio: v.z / power,
            })
        })
        .collect()
}

/// An empirical band `[low, high]` widened by [`BAND_MARGIN`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Band {
    pub low: f64,
    pub high: f64,
}

impl Band {
    pub fn fit(values: impl IntoIterator<Item = f64>) -> Result<Band> {
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for v in values {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Integration(format!(
                    "non-positive sample {v} in band fit"
                )));
            }
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if hi == 0.0 {
            return Err(Error::Integration("empty band fit".into()));
        }
        Ok(Band {
            low: lo / BAND_MARGIN,
            high: hi * BAND_MARGIN,
        })
    }

    pub fn ratio(&self) -> f64 {
        self.high / self.low
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.low && v <= self.high
    }
}

/// Smallest `K` (times [`BAND_MARGIN`]) with `|w| ≤ K x0^λ |log x0|` on the sweep.
pub fn fit_eps_constant(rows: &[SweepRow], lambda: f64) -> f64 {
    BAND_MARGIN
        * rows
            .iter()
            .map(|r| r.w.abs() / (r.x0.powf(lambda) * r.x0.ln().abs()))
            .fold(0.0, f64::max)
}

/// A saddle model fitted to an integrated Dulac map.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFit {
    pub model: SaddleModel,
    /// Envelope `C` on the calibration points.
    pub envelope: f64,
    /// Largest `|u_ode - u_model|` on the validation points.
    pub validation_dev: f64,
}

impl ModelFit {
    pub fn holds(&self) -> bool {
        self.validation_dev <= self.envelope
    }
}

/// Fits `u ↦ λu + c` through the end points of `calibration`, records the
/// envelope there, and measures the fit on `validation`.
pub fn fit_saddle_model<S: SaddleField + ?Sized>(
    field: &S,
    beta: &Beta,
    calibration: &[f64],
    validation: &[f64],
) -> Result<ModelFit> {
    if calibration.len() < 2 {
        return Err(Error::domain("need at least two calibration points"));
    }
    let u_of =
        |x0: f64| -> Result<(f64, f64)> { Ok((-x0.ln(), -dulac_ode(field, x0, beta)?.ln())) };
    let cal: Vec<(f64, f64)> = calibration
        .par_iter()
        .map(|&x| u_of(x))
        .collect::<Result<_>>()?;
    let (a, b) = (cal[0], cal[cal.len() - 1]);
    let lambda = (b.1 - a.1) / (b.0 - a.0);
    let c = a.1 - lambda * a.0;
    let dev = |pts: &[(f64, f64)]| {
        pts.iter()
            .map(|(u, v)| (v - lambda * u - c).abs())
            .fold(0.0, f64::max)
    };
    let envelope = BAND_MARGIN * dev(&cal);
    let val: Vec<(f64, f64)> = validation
        .par_iter()
        .map(|&x| u_of(x))
        .collect::<Result<_>>()?;
    Ok(ModelFit {
        model: SaddleModel::new("fit", lambda)?.with_prefactor(c),
        envelope,
        validation_dev: dev(&val),
    })
}
