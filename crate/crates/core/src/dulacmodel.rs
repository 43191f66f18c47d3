//! Model correspondence maps of hyperbolic saddles and polycycle monodromy.
//!
//! Every saddle is modelled by `Δ(x) = e^{-c} x^λ (1 + r x^s)` with `|r| < 1`,
//! which in the log domain reads
//!
//! ```text
//! u ↦ λu + c - log1p(r e^{-su}).
//! ```
//!
//! Compositions of such maps keep the `Θ(x^Λ)` behaviour with `Λ` the
//! product of the factor exponents, which is all the asymptotic analysis
//! downstream relies on.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::{log_add_u, LogScale, Real};

/// Safety factor applied to sampled envelope constants.
pub const ENVELOPE_MARGIN: f64 = 1.1;
/// Number of log-spaced samples used to estimate an envelope constant.
pub const ENVELOPE_SAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correction {
    pub r: f64,
    pub s: f64,
}

impl Correction {
    pub fn new(r: f64, s: f64) -> Result<Self> {
        if !(r.abs() < 1.0) {
            return Err(Error::constraint(format!(
                "correction amplitude |r| = {} must be < 1",
                r.abs()
            )));
        }
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::constraint(format!(
                "correction exponent s = {s} must be positive"
            )));
        }
        Ok(Correction { r, s })
    }

    /// `-log1p(r e^{-su})`, the log-domain contribution of `1 + r x^s`.
    fn log_term<R: Real>(&self, u: &R) -> R {
        u.mul_f64(-self.s).exp().mul_f64(self.r).ln_1p().neg()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaddleModel {
    pub id: String,
    pub lambda: f64,
    /// `c` in `e^{-c} x^λ`.
    pub prefactor: f64,
    pub correction: Option<Correction>,
}

impl SaddleModel {
    pub fn new(id: impl Into<String>, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::constraint(format!(
                "characteristic number {lambda} must be positive"
            )));
        }
        Ok(SaddleModel {
            id: id.into(),
            lambda,
            prefactor: 0.0,
            correction: None,
        })
    }

    pub fn with_prefactor(mut self, c: f64) -> Self {
        self.prefactor = c;
        self
    }

    pub fn with_correction(mut self, r: f64, s: f64) -> Result<Self> {
        self.correction = Some(Correction::new(r, s)?);
        Ok(self)
    }

    pub fn apply_u<R: Real>(&self, u: &R) -> R {
        let mut out = u.mul_f64(self.lambda).add_f64(self.prefactor);
        if let Some(corr) = &self.correction {
            out = out.add(&corr.log_term(u));
        }
        out
    }

    /// `-log(Δ(x) / x^λ)`.
    fn log_ratio(&self, u: f64) -> f64 {
        self.prefactor + self.correction.map_or(0.0, |corr| corr.log_term(&u))
    }

    /// The saddle met in reverse time: reciprocal exponent, inverted
    /// power-law part, correction carried with the matching exponent.
    pub fn reversed(&self) -> SaddleModel {
        SaddleModel {
            id: self.id.clone(),
            lambda: 1.0 / self.lambda,
            prefactor: -self.prefactor / self.lambda,
            correction: self.correction.map(|c| Correction {
                r: -c.r,
                s: c.s / self.lambda,
            }),
        }
    }
}

/// Anything acting on the log-domain chart of a semitransversal.
pub trait DulacMap {
    fn apply(&self, x: LogScale) -> Result<LogScale>;
}

/// An ordered chain of saddle maps; `factors[0]` is applied first.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MapModel {
    factors: Vec<SaddleModel>,
}

impl MapModel {
    pub fn identity() -> Self {
        MapModel {
            factors: Vec::new(),
        }
    }

    pub fn from_saddle(saddle: SaddleModel) -> Self {
        MapModel {
            factors: vec![saddle],
        }
    }

    /// Pure power law `e^{-c} x^Λ`.
    pub fn power_law(lambda: f64, c: f64) -> Result<Self> {
        Ok(Self::from_saddle(
            SaddleModel::new("model", lambda)?.with_prefactor(c),
        ))
    }

    pub fn factors(&self) -> &[SaddleModel] {
        &self.factors
    }

    /// Exponent of the composite: product of the factor exponents.
    pub fn lambda(&self) -> f64 {
        self.factors.iter().map(|f| f.lambda).product()
    }

    /// Affine offset of the power-law part: `u ↦ Λu + prefactor`.
    pub fn prefactor(&self) -> f64 {
        self.factors
            .iter()
            .fold(0.0, |acc, f| f.lambda * acc + f.prefactor)
    }

    pub fn apply_u<R: Real>(&self, u: &R) -> R {
        self.factors
            .iter()
            .fold(u.clone(), |acc, f| f.apply_u(&acc))
    }

    /// `-log(Δ(x) / x^Λ)` evaluated without forming `Λu`, so it stays
    /// accurate for very large `u`.
    pub fn log_ratio(&self, u: f64) -> f64 {
        if !u.is_finite() {
            return self.prefactor();
        }
        let mut inner = u;
        let mut ratio = 0.0;
        for f in &self.factors {
            ratio = f.lambda * ratio + f.log_ratio(inner);
            inner = f.apply_u(&inner);
        }
        ratio
    }

    /// Smallest sampled `C` with `e^{-C} x^Λ ≤ Δ(x) ≤ e^C x^Λ` on `(0, 1]`,
    /// inflated by [`ENVELOPE_MARGIN`].
    pub fn envelope_constant(&self) -> f64 {
        let sup = log_spaced(1e-6, 1e6, ENVELOPE_SAMPLES)
            .chain([0.0, f64::INFINITY])
            .map(|u| self.log_ratio(u).abs())
            .fold(0.0, f64::max);
        ENVELOPE_MARGIN * sup
    }

    /// Checks the envelope at `samples` log-spaced points `x ∈ [1e-12, x_upper)`.
    pub fn validate_envelope(&self, c: f64, x_upper: f64, samples: usize) -> bool {
        let x_upper = x_upper.min(1.0);
        let (u_lo, u_hi) = (-x_upper.ln(), -(1e-12f64).ln());
        if u_lo >= u_hi {
            return true;
        }
        (0..samples).all(|k| {
            let t = (k as f64 + 1.0) / samples as f64;
            let u = u_hi * (u_lo / u_hi).powf(t);
            self.log_ratio(u).abs() <= c
        })
    }

    /// The comparison maps `f_±(x) = e^{±C} x^Λ` bracketing this model.
    pub fn comparison_envelope(&self) -> Result<Envelope> {
        Envelope::new(self.lambda(), self.envelope_constant())
    }
}

impl DulacMap for MapModel {
    fn apply(&self, x: LogScale) -> Result<LogScale> {
        let u = self.apply_u(&x.u());
        LogScale::from_u(u).map_err(|_| Error::DomainEscape { iteration: 0, u })
    }
}

impl DulacMap for SaddleModel {
    fn apply(&self, x: LogScale) -> Result<LogScale> {
        let u = self.apply_u(&x.u());
        LogScale::from_u(u).map_err(|_| Error::DomainEscape { iteration: 0, u })
    }
}

/// `f ∘ g`: `g` is applied first.
pub fn compose(f: &MapModel, g: &MapModel) -> MapModel {
    let mut factors = g.factors.clone();
    factors.extend(f.factors.iter().cloned());
    MapModel { factors }
}

/// Monomial comparison maps `f_±(x) = e^{±C} x^Λ` and their nonzero fixed
/// points `x_± = exp(±C / (1 - Λ))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Envelope {
    pub lambda: f64,
    pub c: f64,
    pub x_minus: f64,
    pub x_plus: f64,
}

impl Envelope {
    pub fn new(lambda: f64, c: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::constraint(format!(
                "comparison envelope needs 0 < Λ < 1, got Λ = {lambda}; time-reverse first"
            )));
        }
        if !(c >= 0.0) || !c.is_finite() {
            return Err(Error::domain(format!(
                "envelope constant {c} must be finite and nonnegative"
            )));
        }
        let k = c / (1.0 - lambda);
        Ok(Envelope {
            lambda,
            c,
            x_minus: (-k).exp(),
            x_plus: k.exp(),
        })
    }

    /// `u(x_-) = C / (1 - Λ)`.
    pub fn u_minus(&self) -> f64 {
        self.c / (1.0 - self.lambda)
    }

    /// `u ↦ Λ^m u + C (1 - Λ^m)/(1 - Λ)`: the log-domain form of `f_-^m`.
    pub fn lower_iterate_u(&self, u: f64, m: u32) -> f64 {
        let lm = self.lambda.powi(m as i32);
        lm * u + self.c * (1.0 - lm) / (1.0 - self.lambda)
    }

    /// Log-domain form of `f_+^m`.
    pub fn upper_iterate_u(&self, u: f64, m: u32) -> f64 {
        let lm = self.lambda.powi(m as i32);
        lm * u - self.c * (1.0 - lm) / (1.0 - self.lambda)
    }
}

/// `Δ_{γ,β}(x) = ε + Δ̃(x)` with an optional exponent drift
/// `Λ(η, ε) = Λ(η, 0) + k ε` realised as an extra factor `x^{kε}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedMap {
    pub base: MapModel,
    pub eps: LogScale,
    pub drift: f64,
}

impl PerturbedMap {
    pub fn new(base: MapModel, eps: LogScale) -> Self {
        PerturbedMap {
            base,
            eps,
            drift: 0.0,
        }
    }

    pub fn with_drift(mut self, drift: f64) -> Self {
        self.drift = drift;
        self
    }

    /// Exponent of `Δ̃` at this `ε`.
    pub fn lambda(&self) -> f64 {
        self.base.lambda() + self.drift * self.eps.to_real()
    }

    pub fn apply_u<R: Real>(&self, u: &R) -> R {
        perturbed_apply(&self.base, &R::from_f64(self.eps.u()), self.drift_rate(), u)
    }

    fn drift_rate(&self) -> f64 {
        self.drift * self.eps.to_real()
    }
}

impl DulacMap for PerturbedMap {
    fn apply(&self, x: LogScale) -> Result<LogScale> {
        let u = self.apply_u(&x.u());
        LogScale::from_u(u).map_err(|_| Error::DomainEscape { iteration: 0, u })
    }
}

/// One step of the perturbed monodromy in the log domain.
pub(crate) fn perturbed_apply<R: Real>(base: &MapModel, eps_u: &R, drift_rate: f64, u: &R) -> R {
    let mut image = base.apply_u(u);
    if drift_rate != 0.0 {
        image = image.add(&u.mul_f64(drift_rate));
    }
    log_add_u(eps_u, &image)
}

/// `m`-fold application; an iterate leaving `(0, 1]` is reported with its
/// 1-based index.
pub fn iterate<M: DulacMap + ?Sized>(map: &M, x0: LogScale, m: usize) -> Result<LogScale> {
    let mut x = x0;
    for k in 1..=m {
        x = map.apply(x).map_err(|e| match e {
            Error::DomainEscape { u, .. } => Error::DomainEscape { iteration: k, u },
            other => other,
        })?;
    }
    Ok(x)
}

/// A monodromic polycycle: the saddles met during one turn, in order.
#[derive(Debug, Clone, PartialEq)]
pub struct PolycycleModel {
    saddles: BTreeMap<String, SaddleModel>,
    visits: Vec<String>,
}

impl PolycycleModel {
    pub fn new(
        saddles: impl IntoIterator<Item = SaddleModel>,
        visits: Vec<String>,
    ) -> Result<Self> {
        let saddles: BTreeMap<_, _> = saddles.into_iter().map(|s| (s.id.clone(), s)).collect();
        let model = PolycycleModel { saddles, visits };
        for (id, count) in model.multiplicities() {
            if count > 2 {
                return Err(Error::constraint(format!(
                    "saddle `{id}` is met {count} times during one turn (at most twice allowed)"
                )));
            }
        }
        Ok(model)
    }

    pub fn visits(&self) -> &[String] {
        &self.visits
    }

    pub fn saddles(&self) -> impl Iterator<Item = &SaddleModel> {
        self.saddles.values()
    }

    pub fn saddle(&self, id: &str) -> Result<&SaddleModel> {
        self.saddles
            .get(id)
            .ok_or_else(|| Error::UnknownSaddle(id.to_owned()))
    }

    pub fn multiplicities(&self) -> BTreeMap<&str, usize> {
        let mut counts = BTreeMap::new();
        for id in &self.visits {
            *counts.entry(id.as_str()).or_insert(0) += 1;
        }
        counts
    }

    /// `λ(γ) = ∏ λ_j^{mult_j}`.
    pub fn characteristic_number(&self) -> Result<f64> {
        if self.visits.is_empty() {
            return Err(Error::constraint("polycycle visit list is empty"));
        }
        self.visits
            .iter()
            .try_fold(1.0, |acc, id| Ok(acc * self.saddle(id)?.lambda))
    }

    /// Composition of the visited saddle maps in visiting order.
    pub fn monodromy(&self) -> Result<MapModel> {
        let factors = self
            .visits
            .iter()
            .map(|id| self.saddle(id).cloned())
            .collect::<Result<Vec<_>>>()?;
        Ok(MapModel { factors })
    }

    pub fn perturbed_monodromy(&self, eps: LogScale) -> Result<PerturbedMap> {
        Ok(PerturbedMap::new(self.monodromy()?, eps))
    }

    /// Orientation reversal: reciprocal characteristic numbers and the
    /// visit list read backwards.
    pub fn time_reverse(&self) -> PolycycleModel {
        PolycycleModel {
            saddles: self
                .saddles
                .iter()
                .map(|(id, s)| (id.clone(), s.reversed()))
                .collect(),
            visits: self.visits.iter().rev().cloned().collect(),
        }
    }
}

/// A characteristic number as a function of the family parameter `η`.
#[derive(Debug, Clone, PartialEq)]
pub enum LambdaFn {
    Constant(f64),
    /// `λ(η) = exp(base + grad · η)`.
    LogLinear {
        base: f64,
        grad: Vec<f64>,
    },
    /// Samples on an `η`-grid. Off-grid points are linearly interpolated
    /// when `η` is one-dimensional.
    Table {
        grid: Vec<Vec<f64>>,
        values: Vec<f64>,
    },
}

impl LambdaFn {
    pub fn eval(&self, eta: &[f64]) -> Result<f64> {
        let value = match self {
            LambdaFn::Constant(v) => *v,
            LambdaFn::LogLinear { base, grad } => {
                if grad.len() != eta.len() && !grad.iter().all(|g| *g == 0.0) {
                    return Err(Error::domain(format!(
                        "η has dimension {} but the gradient has {}",
                        eta.len(),
                        grad.len()
                    )));
                }
                (base + grad.iter().zip(eta).map(|(g, e)| g * e).sum::<f64>()).exp()
            }
            LambdaFn::Table { grid, values } => table_lookup(grid, values, eta)?,
        };
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::constraint(format!(
                "characteristic number {value} at η = {eta:?} is not positive"
            )));
        }
        Ok(value)
    }
}

fn table_lookup(grid: &[Vec<f64>], values: &[f64], eta: &[f64]) -> Result<f64> {
    const SNAP: f64 = 1e-12;
    if let Some(k) = grid
        .iter()
        .position(|p| p.len() == eta.len() && p.iter().zip(eta).all(|(a, b)| (a - b).abs() <= SNAP))
    {
        return Ok(values[k]);
    }
    if eta.len() == 1 && grid.iter().all(|p| p.len() == 1) {
        let mut pts: Vec<(f64, f64)> = grid
            .iter()
            .map(|p| p[0])
            .zip(values.iter().copied())
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let e = eta[0];
        if let Some(w) = pts.windows(2).find(|w| w[0].0 <= e && e <= w[1].0) {
            let t = (e - w[0].0) / (w[1].0 - w[0].0);
            return Ok(w[0].1 + t * (w[1].1 - w[0].1));
        }
    }
    Err(Error::domain(format!(
        "η = {eta:?} is not covered by the λ table"
    )))
}

/// A saddle whose characteristic number depends on `η`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSaddle {
    pub id: String,
    pub lambda: LambdaFn,
    pub prefactor: f64,
    pub correction: Option<Correction>,
}

impl ParamSaddle {
    pub fn constant(saddle: SaddleModel) -> Self {
        ParamSaddle {
            id: saddle.id,
            lambda: LambdaFn::Constant(saddle.lambda),
            prefactor: saddle.prefactor,
            correction: saddle.correction,
        }
    }

    pub fn at(&self, eta: &[f64]) -> Result<SaddleModel> {
        let mut s = SaddleModel::new(self.id.clone(), self.lambda.eval(eta)?)?
            .with_prefactor(self.prefactor);
        s.correction = self.correction;
        Ok(s)
    }
}

/// A polycycle of an `η`-parameterized family.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamPolycycle {
    pub saddles: Vec<ParamSaddle>,
    pub visits: Vec<String>,
}

impl ParamPolycycle {
    pub fn constant(p: &PolycycleModel) -> Self {
        ParamPolycycle {
            saddles: p.saddles().cloned().map(ParamSaddle::constant).collect(),
            visits: p.visits().to_vec(),
        }
    }

    pub fn at(&self, eta: &[f64]) -> Result<PolycycleModel> {
        let saddles = self
            .saddles
            .iter()
            .map(|s| s.at(eta))
            .collect::<Result<Vec<_>>>()?;
        PolycycleModel::new(saddles, self.visits.clone())
    }
}

/// `count` points log-spaced between `lo` and `hi` inclusive.
pub(crate) fn log_spaced(lo: f64, hi: f64, count: usize) -> impl Iterator<Item = f64> {
    let (a, b) = (lo.ln(), hi.ln());
    let step = if count > 1 {
        (b - a) / (count - 1) as f64
    } else {
        0.0
    };
    (0..count).map(move |k| (a + step * k as f64).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn th_polycycle(lambda: f64, mu: f64) -> PolycycleModel {
        PolycycleModel::new(
            [
                SaddleModel::new("L", lambda).unwrap(),
                SaddleModel::new("M", mu).unwrap(),
            ],
            vec!["L".into(), "M".into(), "L".into()],
        )
        .unwrap()
    }

    fn loop_l(lambda: f64) -> PolycycleModel {
        PolycycleModel::new([SaddleModel::new("L", lambda).unwrap()], vec!["L".into()]).unwrap()
    }

    fn lu(u: f64) -> LogScale {
        LogScale::from_u(u).unwrap()
    }

    #[test]
    fn characteristic_number_examples() {
        assert_eq!(th_polycycle(0.5, 8.0).characteristic_number().unwrap(), 2.0);
        assert_eq!(loop_l(0.5).characteristic_number().unwrap(), 0.5);
        assert_eq!(loop_l(1.0).characteristic_number().unwrap(), 1.0);
    }

    #[test]
    fn characteristic_number_errors() {
        let p =
            PolycycleModel::new([SaddleModel::new("L", 0.5).unwrap()], vec!["X".into()]).unwrap();
        assert_eq!(
            p.characteristic_number(),
            Err(Error::UnknownSaddle("X".into()))
        );
        let empty = PolycycleModel::new([SaddleModel::new("L", 0.5).unwrap()], vec![]).unwrap();
        assert!(empty.characteristic_number().is_err());
        let thrice =
            PolycycleModel::new([SaddleModel::new("L", 0.5).unwrap()], vec!["L".into(); 3]);
        assert!(matches!(thrice, Err(Error::Constraint(_))));
    }

    #[test]
    fn saddle_constructor_guards() {
        assert!(SaddleModel::new("a", 0.0).is_err());
        assert!(SaddleModel::new("a", -1.0).is_err());
        assert!(SaddleModel::new("a", 0.5)
            .unwrap()
            .with_correction(1.0, 1.0)
            .is_err());
        assert!(SaddleModel::new("a", 0.5)
            .unwrap()
            .with_correction(0.5, 0.0)
            .is_err());
    }

    #[test]
    fn compose_examples() {
        let f = MapModel::power_law(0.5, 0.0).unwrap();
        assert_eq!(compose(&f, &f).lambda(), 0.25);

        let f = MapModel::power_law(0.5, 0.2).unwrap();
        let g = MapModel::power_law(2.0, 0.1).unwrap();
        let fg = compose(&f, &g);
        let u = fg.apply(lu(1.0)).unwrap().u();
        assert!((u - 1.25).abs() < 1e-15);
        assert!((fg.prefactor() - 0.25).abs() < 1e-15);

        let id = MapModel::identity();
        let h = MapModel::from_saddle(
            SaddleModel::new("h", 0.7)
                .unwrap()
                .with_correction(0.3, 0.5)
                .unwrap(),
        );
        for u in [0.1, 1.0, 10.0] {
            assert_eq!(compose(&id, &h).apply(lu(u)), h.apply(lu(u)));
            assert_eq!(compose(&h, &id).apply(lu(u)), h.apply(lu(u)));
        }
    }

    #[test]
    fn monodromy_examples() {
        assert_eq!(th_polycycle(0.5, 8.0).monodromy().unwrap().lambda(), 2.0);
        assert_eq!(loop_l(0.5).monodromy().unwrap().lambda(), 0.5);
        // pure factors with c = 0 give exactly x^{λ(γ)}
        let m = th_polycycle(0.5, 8.0).monodromy().unwrap();
        for u in [0.25, 3.0, 17.0] {
            assert_eq!(m.apply(lu(u)).unwrap().u(), 2.0 * u);
        }
    }

    #[test]
    fn perturbed_monodromy_examples() {
        let p = loop_l(0.5);
        let m = p.monodromy().unwrap();
        let x = LogScale::from_real(0.04).unwrap();
        assert_eq!(
            p.perturbed_monodromy(LogScale::ZERO).unwrap().apply(x),
            m.apply(x)
        );

        let eps = LogScale::from_real(0.01).unwrap();
        let d = p.perturbed_monodromy(eps).unwrap();
        let y = d.apply(x).unwrap().to_real();
        assert!((y - 0.21).abs() < 1e-14, "{y}");
        // Δ(0) = ε and Δ ≥ ε everywhere
        assert_eq!(d.apply(LogScale::ZERO).unwrap(), eps);
        for u in [0.5, 3.0, 50.0] {
            assert!(d.apply(lu(u)).unwrap() <= eps);
        }
    }

    #[test]
    fn comparison_envelope_examples() {
        let e = Envelope::new(0.5, 0.0).unwrap();
        assert_eq!((e.x_minus, e.x_plus), (1.0, 1.0));
        let e = Envelope::new(0.5, 0.3).unwrap();
        assert!((e.x_minus - 0.548_811_636_094_026_4).abs() < 1e-15);
        assert!((e.x_plus - 1.8221188003905089).abs() < 1e-14);
        let e = Envelope::new(0.75, 1.0).unwrap();
        assert!((e.x_minus - (-4.0f64).exp()).abs() < 1e-16);
        assert!(MapModel::power_law(1.0, 0.0)
            .unwrap()
            .comparison_envelope()
            .is_err());
        assert!(MapModel::power_law(2.0, 0.0)
            .unwrap()
            .comparison_envelope()
            .is_err());
        let pure = MapModel::power_law(0.5, 0.0)
            .unwrap()
            .comparison_envelope()
            .unwrap();
        assert_eq!(pure.c, 0.0);
    }

    #[test]
    fn iterate_examples() {
        let m = MapModel::power_law(0.5, 0.0).unwrap();
        let d = PerturbedMap::new(m.clone(), LogScale::ZERO);
        assert_eq!(iterate(&d, lu(8.0), 3).unwrap().u(), 1.0);
        assert_eq!(iterate(&m, lu(8.0), 0).unwrap().u(), 8.0);

        // f_-^m in closed form: C = 0.3, λ = 0.5, m = 2, x = e^-4
        let f_minus = MapModel::power_law(0.5, 0.3).unwrap();
        let u = iterate(&f_minus, lu(4.0), 2).unwrap().u();
        assert!((u - 1.45).abs() < 1e-15);
        let env = Envelope::new(0.5, 0.3).unwrap();
        assert!((env.lower_iterate_u(4.0, 2) - 1.45).abs() < 1e-15);
    }

    #[test]
    fn iterate_reports_escape_index() {
        let m = MapModel::power_law(0.5, -0.4).unwrap();
        // u: 2 -> 0.6 -> -0.1
        assert!(matches!(
            iterate(&m, lu(2.0), 5),
            Err(Error::DomainEscape { iteration: 2, .. })
        ));
    }

    #[test]
    fn time_reverse_examples() {
        let p = th_polycycle(0.5, 8.0);
        let r = p.time_reverse();
        assert_eq!(r.characteristic_number().unwrap(), 0.5);
        assert_eq!(r.time_reverse(), p);
        let s = loop_l(1.0);
        assert_eq!(s.time_reverse(), s);

        let corrected = PolycycleModel::new(
            [SaddleModel::new("A", 0.4)
                .unwrap()
                .with_prefactor(0.3)
                .with_correction(0.2, 1.5)
                .unwrap()],
            vec!["A".into()],
        )
        .unwrap();
        let twice = corrected.time_reverse().time_reverse();
        let (a, b) = (twice.saddle("A").unwrap(), corrected.saddle("A").unwrap());
        assert_eq!((a.lambda, a.correction), (b.lambda, b.correction));
        assert!((a.prefactor - b.prefactor).abs() < 1e-15);
        // the power-law part is inverted exactly
        let fwd = SaddleModel::new("A", 0.4).unwrap().with_prefactor(0.3);
        let back = fwd.reversed();
        assert!((back.apply_u(&fwd.apply_u(&7.0)) - 7.0).abs() < 1e-14);
    }

    #[test]
    fn envelope_constant_covers_corrections() {
        let m = MapModel::from_saddle(
            SaddleModel::new("a", 0.5)
                .unwrap()
                .with_prefactor(0.1)
                .with_correction(-0.3, 0.5)
                .unwrap(),
        );
        let c = m.envelope_constant();
        // sup |c - log1p(r x^s)| = 0.1 - log(0.7)
        assert!((c - 1.1 * (0.1 - 0.7f64.ln())).abs() < 1e-3);
        assert!(m.validate_envelope(c, 1.0, 100));
        assert!(!m.validate_envelope(0.5 * c, 1.0, 100));
    }

    fn corrected_map() -> impl Strategy<Value = MapModel> {
        prop::collection::vec((0.2..3.0f64, -0.5..0.5f64, -0.9..0.9f64, 0.1..3.0f64), 1..4)
            .prop_map(|fs| MapModel {
                factors: fs
                    .into_iter()
                    .enumerate()
                    .map(|(i, (l, c, r, s))| {
                        SaddleModel::new(format!("s{i}"), l)
                            .unwrap()
                            .with_prefactor(c)
                            .with_correction(r, s)
                            .unwrap()
                    })
                    .collect(),
            })
    }

    proptest! {
        #[test]
        fn theta_property_holds_below_x_minus(m in corrected_map()) {
            let c = m.envelope_constant();
            let upper = if m.lambda() < 1.0 { Envelope::new(m.lambda(), c).unwrap().x_minus } else { 1.0 };
            // intermediate points above x = 1 put a correction outside its domain
            prop_assume!(log_spaced(1e-3, 30.0, 200).all(|u| m.log_ratio(u).is_finite()));
            prop_assert!(m.validate_envelope(c, upper, 100));
        }

        #[test]
        fn composition_exponent_law(f in corrected_map(), g in corrected_map(), u in 0.0..50.0f64) {
            let fg = compose(&f, &g);
            prop_assert!((fg.lambda() - f.lambda() * g.lambda()).abs() <= 1e-15 * fg.lambda());
            let (lhs, rhs) = (fg.apply_u(&u), f.apply_u(&g.apply_u(&u)));
            prop_assume!(lhs.is_finite() && rhs.is_finite());
            prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0), "{} vs {}", lhs, rhs);
        }

        #[test]
        fn expansion_below_scale(lambda in 0.1..0.9f64, c in -0.5..0.5f64, r in -0.5..0.5f64, s in 0.2..2.0f64) {
            let m = MapModel::from_saddle(SaddleModel::new("a", lambda).unwrap().with_prefactor(c).with_correction(r, s).unwrap());
            // central difference of x ↦ Δ(x) taken in the log domain:
            // dΔ/dx = (Δ/x) · du'/du
            let slope = |u: f64| {
                let h = 1e-6 * u.max(1.0);
                let du = (m.apply_u(&(u + h)) - m.apply_u(&(u - h))) / (2.0 * h);
                (u - m.apply_u(&u)).exp() * du
            };
            // x* well inside the Θ regime
            let u_star = (2.0 * (m.envelope_constant() + 3.0)) / (1.0 - lambda);
            for k in 0..20 {
                let u = u_star * (1.0 + k as f64);
                prop_assert!(slope(u) > 2.0, "slope at u = {} is {}", u, slope(u));
            }
        }

        #[test]
        fn perturbed_is_monotone_in_eps(u in 1.0..30.0f64, e1 in 1.0..15.0f64, de in 1e-3..5.0f64) {
            let m = MapModel::from_saddle(SaddleModel::new("a", 0.6).unwrap().with_correction(0.3, 0.7).unwrap());
            let small = PerturbedMap::new(m.clone(), lu(e1 + de)).apply_u(&u);
            let large = PerturbedMap::new(m, lu(e1)).apply_u(&u);
            prop_assert!(large < small);
        }

        #[test]
        fn perturbed_grows_above_eps(lambda in 0.2..0.9f64, c in 0.0..0.5f64, eps_u in 2.0..200.0f64, t in 0.0..1.0f64) {
            let m = MapModel::power_law(lambda, c).unwrap();
            let env = m.comparison_envelope().unwrap();
            let hi = eps_u;
            let lo = env.u_minus() + 1e-9;
            prop_assume!(lo < hi);
            let u = lo + t * (hi - lo);
            let d = PerturbedMap::new(m, lu(eps_u));
            // Δ(x) > x on [ε, x_-)
            prop_assert!(d.apply_u(&u) < u);
        }
    }
}
