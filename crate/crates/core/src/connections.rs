//! Sparkling saddle connections: roots of the connection equation
//! `Δ^m_{γ,(η,ε)}(ε) = T(η, ε)` and the sequences they form.
//!
//! For each index `m` the root is bracketed in closed form by the iterates of
//! the monomial comparison maps `f_±(x) = e^{±C} x^Λ`, the residual is scanned
//! for a single sign change, and the root is refined by bisection on
//! `u_ε = -log ε`.

use std::fmt;
use std::ops::RangeInclusive;
use std::sync::Arc;

use rayon::prelude::*;

use crate::dulacmodel::{
    log_spaced, perturbed_apply, Envelope, MapModel, ParamPolycycle, PolycycleModel,
    ENVELOPE_MARGIN, ENVELOPE_SAMPLES,
};
use crate::error::{Error, Result};
use crate::numerics::{midpoint, LogScale, Precision, Real};

/// Points in the residual sign scan across a bracket.
pub const SCAN_POINTS: usize = 16;
/// Bisection iteration cap.
pub const MAX_BISECTIONS: usize = 200;
/// Required agreement `|u_lhs - u_rhs|` at an accepted root.
pub const RESIDUAL_TOL: f64 = 1e-10;
/// Default upper end `ε_0` of the perturbation parameter range.
pub const DEFAULT_EPS_MAX: f64 = 1e-2;

const MAX_INDEX: usize = 100_000;

type TargetFn = dyn Fn(&[f64], f64) -> f64 + Send + Sync;

/// The shifted right-hand side `T(η, ε)` of the connection equation.
#[derive(Clone)]
pub enum Target {
    Constant(f64),
    /// `T = value · exp(grad · η) · (1 + eps_slope · ε)`.
    Affine {
        value: f64,
        eta_grad: Vec<f64>,
        eps_slope: f64,
    },
    /// A user function with declared bounds over the working box.
    Custom {
        f: Arc<TargetFn>,
        low: f64,
        high: f64,
    },
}

impl fmt::Debug for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Constant(v) => write!(f, "Constant({v})"),
            Target::Affine {
                value,
                eta_grad,
                eps_slope,
            } => f
                .debug_struct("Affine")
                .field("value", value)
                .field("eta_grad", eta_grad)
                .field("eps_slope", eps_slope)
                .finish(),
            Target::Custom { low, high, .. } => write!(f, "Custom([{low}, {high}])"),
        }
    }
}

impl Target {
    pub fn custom(
        f: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
        low: f64,
        high: f64,
    ) -> Self {
        Target::Custom {
            f: Arc::new(f),
            low,
            high,
        }
    }

    pub fn eval(&self, eta: &[f64], eps: f64) -> f64 {
        match self {
            Target::Constant(v) => *v,
            Target::Affine {
                value,
                eta_grad,
                eps_slope,
            } => {
                let shift: f64 = eta_grad.iter().zip(eta).map(|(g, e)| g * e).sum();
                value * shift.exp() * (1.0 + eps_slope * eps)
            }
            Target::Custom { f, .. } => f(eta, eps),
        }
    }

    /// `(t_low, tau)`: the range of `T(η, ·)` over `ε ∈ [0, eps_max]`.
    pub fn bounds(&self, eta: &[f64], eps_max: f64) -> (f64, f64) {
        match self {
            Target::Constant(v) => (*v, *v),
            Target::Affine { .. } => {
                let (a, b) = (self.eval(eta, 0.0), self.eval(eta, eps_max));
                (a.min(b), a.max(b))
            }
            Target::Custom { low, high, .. } => (*low, *high),
        }
    }
}

/// The restricted unfolding: a parameterized polycycle, the perturbation
/// range `ε ∈ [0, eps_max]` and the target `T`.
#[derive(Debug, Clone)]
pub struct UnfoldingFamily {
    pub polycycle: ParamPolycycle,
    pub target: Target,
    /// Turn offset `a`; the turn count of index `m` is `n = m + a + 1`.
    pub shift: usize,
    pub eps_max: f64,
    /// `k` in `Λ(η, ε) = Λ(η, 0) + k ε`.
    pub drift: f64,
    reversed: bool,
}

impl UnfoldingFamily {
    pub fn new(polycycle: ParamPolycycle, target: Target) -> Self {
        UnfoldingFamily {
            polycycle,
            target,
            shift: 0,
            eps_max: DEFAULT_EPS_MAX,
            drift: 0.0,
            reversed: false,
        }
    }

    pub fn with_eps_max(mut self, eps_max: f64) -> Self {
        self.eps_max = eps_max;
        self
    }

    pub fn with_shift(mut self, shift: usize) -> Self {
        self.shift = shift;
        self
    }

    pub fn with_drift(mut self, drift: f64) -> Self {
        self.drift = drift;
        self
    }

    /// The same family with time reversed: every slice is resolved through
    /// [`PolycycleModel::time_reverse`](crate::dulacmodel::PolycycleModel::time_reverse).
    pub fn time_reversed(&self) -> Self {
        let mut fam = self.clone();
        fam.reversed = !self.reversed;
        fam
    }

    pub fn is_reversed(&self) -> bool {
        self.reversed
    }

    /// The polycycle at `η` in the family's current orientation.
    pub fn polycycle_at(&self, eta: &[f64]) -> Result<PolycycleModel> {
        let p = self.polycycle.at(eta)?;
        Ok(if self.reversed { p.time_reverse() } else { p })
    }

    /// Resolves the family at `η`: monodromy, comparison envelope and target
    /// bounds, with all standing assumptions checked.
    pub fn slice(&self, eta: &[f64]) -> Result<FamilySlice<'_>> {
        let map = self.polycycle_at(eta)?.monodromy()?;
        FamilySlice::new(self, eta.to_vec(), map)
    }
}

/// Envelope constant for `ε + Δ̃_ε(x)` on `U = {ε ≤ x ≤ x_-, ε ≤ ε_0}`.
///
/// `C` and `x_- = exp(-C/(1-Λ))` depend on each other; the smallest
/// self-consistent `C` is found by bisection.
pub fn family_envelope(map: &MapModel, eps_max: f64, drift: f64) -> Result<Envelope> {
    let lambda = map.lambda();
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::constraint(format!(
            "λ(γ) = {lambda} must lie in (0, 1)"
        )));
    }
    if !(eps_max > 0.0 && eps_max < 1.0) {
        return Err(Error::domain(format!("ε_0 = {eps_max} must lie in (0, 1)")));
    }
    let u_eps_max = -eps_max.ln();
    let need = |u: f64| -> f64 {
        let g = map.log_ratio(u);
        // largest admissible ε at this x
        let (e_max, u_e) = if u >= u_eps_max {
            ((-u).exp(), u)
        } else {
            (eps_max, u_eps_max)
        };
        let drift_term = drift * e_max * u;
        let lower = g + drift_term.max(0.0);
        let upper = ((lambda * u - u_e).exp() + (-g + (-drift_term).max(0.0)).exp()).ln();
        lower.max(upper).max(0.0)
    };
    let sup_from = |u_lo: f64| -> f64 {
        let u_hi = (u_lo * 1e4).max(1e4);
        let start = u_lo.max(1e-9);
        log_spaced(start, u_hi, ENVELOPE_SAMPLES)
            .chain([u_lo])
            .map(need)
            .fold(0.0, f64::max)
            .max(map.prefactor().abs())
    };
    let consistent = |c: f64| c >= ENVELOPE_MARGIN * sup_from(c / (1.0 - lambda));
    let mut hi = ENVELOPE_MARGIN * sup_from(0.0);
    if hi == 0.0 {
        return Envelope::new(lambda, 0.0);
    }
    let mut lo = 0.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if consistent(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Envelope::new(lambda, hi)
}

/// Closed-form bracket of index `m`: `ε_m^- < ε_m < ε_m^+`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bracket {
    pub m: usize,
    /// Solution of `f_+^m(ε) = t_low`; the smaller `ε`, larger `u`.
    pub eps_minus: LogScale,
    /// Solution of `f_-^m(ε) = tau`.
    pub eps_plus: LogScale,
}

impl Bracket {
    pub fn contains(&self, eps: LogScale) -> bool {
        self.eps_plus <= eps && eps <= self.eps_minus
    }
}

/// Solves `f_-^m(ε⁺) = tau` and `f_+^m(ε⁻) = t_low` in the log domain:
/// `u(ε^±) = (u(target) ∓ C (1 - Λ^m)/(1 - Λ)) / Λ^m`.
pub fn bracket(m: usize, c: f64, lambda: f64, tau: f64, t_low: f64) -> Result<Bracket> {
    let env = Envelope::new(lambda, c)?;
    if !(t_low > 0.0 && t_low <= tau && tau < env.x_minus) {
        return Err(Error::domain(format!(
            "targets need 0 < t_low ≤ tau < x_- = {}; got t_low = {t_low}, tau = {tau}",
            env.x_minus
        )));
    }
    let geometric = if m == 0 {
        0.0
    } else {
        (1.0 - lambda.powi(m as i32)) / (1.0 - lambda)
    };
    let shift = c * geometric;
    let growth = -(m as f64) * lambda.ln();
    let u_plus = ((-tau.ln() - shift).ln() + growth).exp();
    let u_minus = ((-t_low.ln() + shift).ln() + growth).exp();
    Ok(Bracket {
        m,
        eps_minus: LogScale::from_u(u_minus)?,
        eps_plus: LogScale::from_u(u_plus)?,
    })
}

/// A family resolved at one parameter point.
pub struct FamilySlice<'a> {
    family: &'a UnfoldingFamily,
    eta: Vec<f64>,
    map: MapModel,
    envelope: Envelope,
    t_low: f64,
    tau: f64,
}

impl<'a> FamilySlice<'a> {
    fn new(family: &'a UnfoldingFamily, eta: Vec<f64>, map: MapModel) -> Result<Self> {
        let envelope = family_envelope(&map, family.eps_max, family.drift)?;
        let (t_low, tau) = family.target.bounds(&eta, family.eps_max);
        if !(t_low > 0.0 && tau < envelope.x_minus) {
            return Err(Error::constraint(format!(
                "target range [{t_low}, {tau}] must lie in (0, x_-) with x_- = {} at η = {eta:?}",
                envelope.x_minus
            )));
        }
        Ok(FamilySlice {
            family,
            eta,
            map,
            envelope,
            t_low,
            tau,
        })
    }

    pub fn envelope(&self) -> &Envelope {
        &self.envelope
    }

    pub fn map(&self) -> &MapModel {
        &self.map
    }

    pub fn target_bounds(&self) -> (f64, f64) {
        (self.t_low, self.tau)
    }

    pub fn bracket(&self, m: usize) -> Result<Bracket> {
        bracket(
            m,
            self.envelope.c,
            self.envelope.lambda,
            self.tau,
            self.t_low,
        )
    }

    /// First index whose bracket lies inside `ε ≤ min(ε_0, x_-)`.
    pub fn first_index(&self) -> Result<usize> {
        let floor = (-self.family.eps_max.ln()).max(self.envelope.u_minus());
        for m in 0..MAX_INDEX {
            if self.bracket(m)?.eps_plus.u() >= floor {
                return Ok(m);
            }
        }
        Err(Error::constraint("no index reaches the working domain"))
    }

    /// First index whose root is certainly deeper than `u_threshold`.
    pub fn index_beyond(&self, u_threshold: f64) -> Result<usize> {
        for m in 0..MAX_INDEX {
            if self.bracket(m)?.eps_plus.u() > u_threshold {
                return Ok(m);
            }
        }
        Err(Error::constraint(format!(
            "threshold u = {u_threshold} is out of reach"
        )))
    }

    /// `u(T) - u(Δ^m(ε))`, positive exactly when `ψ_m(ε) > 0`.
    /// `None` marks an orbit that already passed `x_-` and hence `T`.
    fn residual<R: Real>(&self, u_eps: &R, m: usize) -> Result<Option<R>> {
        let eps = (-u_eps.to_f64()).exp();
        let t = self.family.target.eval(&self.eta, eps);
        let slack = 1e-12 * self.tau;
        if !(t >= self.t_low - slack && t <= self.tau + slack) {
            return Err(Error::constraint(format!(
                "T(η, ε) = {t} left its declared range [{}, {}] at ε = {eps:e}",
                self.t_low, self.tau
            )));
        }
        let floor = R::from_f64(self.envelope.u_minus());
        let drift_rate = self.family.drift * eps;
        let mut x = u_eps.clone();
        for _ in 0..m {
            x = perturbed_apply(&self.map, u_eps, drift_rate, &x);
            if x < floor {
                return Ok(None);
            }
        }
        Ok(Some(R::from_f64(-t.ln()).sub(&x)))
    }

    fn sign<R: Real>(&self, u_eps: &R, m: usize) -> Result<bool> {
        Ok(match self.residual(u_eps, m)? {
            None => true,
            Some(r) => r >= R::zero(),
        })
    }

    pub fn solve(&self, m: usize) -> Result<Connection> {
        self.solve_in::<f64>(m)
    }

    pub fn solve_with(&self, m: usize, precision: Precision) -> Result<Connection> {
        match precision {
            Precision::Double => self.solve_in::<f64>(m),
            #[cfg(feature = "extended")]
            Precision::Extended => self.solve_in::<crate::numerics::Ext>(m),
            #[cfg(not(feature = "extended"))]
            Precision::Extended => Err(Error::Unsupported("extended".into())),
        }
    }

    /// Solves the connection equation of index `m` in arithmetic `R`.
    pub fn solve_in<R: Real>(&self, m: usize) -> Result<Connection> {
        let first = self.first_index()?;
        if m < first {
            return Err(Error::BelowRegime { index: m, first });
        }
        let bracket = self.bracket(m)?;
        let (mut lo, mut hi) = (
            R::from_f64(bracket.eps_plus.u()),
            R::from_f64(bracket.eps_minus.u()),
        );

        let finish = |u: &R, changes: usize| -> Result<Connection> {
            let residual = match self.residual(u, m)? {
                Some(r) => r.to_f64().abs(),
                None => f64::INFINITY,
            };
            if residual >= RESIDUAL_TOL {
                return Err(Error::NotConverged { index: m, residual });
            }
            Ok(Connection {
                m,
                turns: m + self.family.shift + 1,
                eps: LogScale::from_u(u.to_f64())?,
                bracket,
                residual,
                sign_changes: changes,
            })
        };

        if !(lo < hi) {
            return match self.residual(&lo, m)? {
                Some(r) if r.to_f64().abs() < RESIDUAL_TOL => finish(&lo, 1),
                _ => Err(Error::NoRoot { index: m }),
            };
        }

        // residual sign scan over equally spaced u
        let width = hi.sub(&lo);
        let points: Vec<R> = (0..SCAN_POINTS)
            .map(|k| {
                if k + 1 == SCAN_POINTS {
                    hi.clone()
                } else {
                    lo.add(&width.mul_f64(k as f64 / (SCAN_POINTS - 1) as f64))
                }
            })
            .collect();
        let signs = points
            .iter()
            .map(|p| self.sign(p, m))
            .collect::<Result<Vec<_>>>()?;
        let changes = signs.windows(2).filter(|w| w[0] != w[1]).count();
        match changes {
            0 => return Err(Error::NoRoot { index: m }),
            1 => {}
            n => {
                return Err(Error::MultipleRoots {
                    index: m,
                    changes: n,
                })
            }
        }
        let k = signs
            .windows(2)
            .position(|w| w[0] != w[1])
            .expect("one change");
        if !(signs[k] && !signs[k + 1]) {
            // ψ must be positive at the large-ε end
            return Err(Error::NoRoot { index: m });
        }
        lo = points[k].clone();
        hi = points[k + 1].clone();

        for _ in 0..MAX_BISECTIONS {
            let mid = midpoint(&lo, &hi);
            if !(lo < mid && mid < hi) {
                break;
            }
            if self.sign(&mid, m)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let r_lo = self
            .residual(&lo, m)?
            .map_or(f64::INFINITY, |r| r.to_f64().abs());
        let r_hi = self
            .residual(&hi, m)?
            .map_or(f64::INFINITY, |r| r.to_f64().abs());
        if r_lo <= r_hi {
            finish(&lo, changes)
        } else {
            finish(&hi, changes)
        }
    }
}

/// One solved connection equation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Connection {
    pub m: usize,
    /// `n = m + a + 1`.
    pub turns: usize,
    pub eps: LogScale,
    pub bracket: Bracket,
    /// `|u_lhs - u_rhs|` at the returned root.
    pub residual: f64,
    /// Sign changes found by the residual scan.
    pub sign_changes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SequenceKind {
    Interior,
    Exterior,
}

impl fmt::Display for SequenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SequenceKind::Interior => "interior",
            SequenceKind::Exterior => "exterior",
        })
    }
}

/// Parameter values `i_m` (or `e_n`) of sparkling connections for
/// consecutive indices starting at `start`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparkSequence {
    pub kind: SequenceKind,
    pub eta: Vec<f64>,
    pub start: usize,
    pub values: Vec<LogScale>,
}

impl SparkSequence {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.values.len()).map(move |k| self.start + k)
    }

    /// `(index, log(-log ε))` pairs.
    pub fn loglog(&self) -> Vec<(usize, f64)> {
        self.indices()
            .zip(&self.values)
            .map(|(m, v)| (m, v.u().ln()))
            .collect()
    }

    /// Least-squares slope of `log(-log ε)` against the index.
    pub fn slope(&self) -> Option<f64> {
        fit_slope(&self.loglog())
    }

    /// As [`slope`](Self::slope), over the last half of the sequence.
    pub fn tail_slope(&self) -> Option<f64> {
        let pts = self.loglog();
        fit_slope(&pts[pts.len() / 2..])
    }

    pub fn check_monotone(&self) -> Result<()> {
        match self.values.windows(2).position(|w| !(w[0] < w[1])) {
            Some(k) => Err(Error::NotMonotone {
                index: self.start + k + 1,
            }),
            None => Ok(()),
        }
    }
}

fn fit_slope(pts: &[(usize, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let xs: Vec<f64> = pts.iter().map(|p| p.0 as f64).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    Some(crate::invariants::linear_fit(&xs, &ys).0)
}

pub fn solve_connection(fam: &UnfoldingFamily, eta: &[f64], m: usize) -> Result<Connection> {
    fam.slice(eta)?.solve(m)
}

pub fn interior_sequence(
    fam: &UnfoldingFamily,
    eta: &[f64],
    range: RangeInclusive<usize>,
) -> Result<SparkSequence> {
    interior_sequence_with(fam, eta, range, Precision::Double)
}

pub fn interior_sequence_with(
    fam: &UnfoldingFamily,
    eta: &[f64],
    range: RangeInclusive<usize>,
    precision: Precision,
) -> Result<SparkSequence> {
    solve_range(fam, eta, range, precision, SequenceKind::Interior)
}

pub fn exterior_sequence(
    fam: &UnfoldingFamily,
    eta: &[f64],
    range: RangeInclusive<usize>,
) -> Result<SparkSequence> {
    exterior_sequence_with(fam, eta, range, Precision::Double)
}

/// Runs the interior machinery on the time-reversed polycycle, which needs
/// `λ(γ_e(η)) > 1`.
pub fn exterior_sequence_with(
    fam: &UnfoldingFamily,
    eta: &[f64],
    range: RangeInclusive<usize>,
    precision: Precision,
) -> Result<SparkSequence> {
    let reversed = reversed_for_exterior(fam, eta)?;
    solve_range(&reversed, eta, range, precision, SequenceKind::Exterior)
}

/// The family whose interior sequence is the exterior sequence of `fam`.
pub fn reversed_for_exterior(fam: &UnfoldingFamily, eta: &[f64]) -> Result<UnfoldingFamily> {
    let lambda_e = fam.polycycle_at(eta)?.characteristic_number()?;
    if !(lambda_e > 1.0) {
        return Err(Error::constraint(format!(
            "exterior sequence needs λ(γ_e) > 1, got {lambda_e} at η = {eta:?}"
        )));
    }
    Ok(fam.time_reversed())
}

/// All indices from the first admissible one up to the first root deeper
/// than `u_threshold`.
pub fn sequence_through(
    fam: &UnfoldingFamily,
    eta: &[f64],
    kind: SequenceKind,
    u_threshold: f64,
    precision: Precision,
) -> Result<SparkSequence> {
    let fam = match kind {
        SequenceKind::Interior => fam.clone(),
        SequenceKind::Exterior => reversed_for_exterior(fam, eta)?,
    };
    let slice = fam.slice(eta)?;
    let range = slice.first_index()?..=slice.index_beyond(u_threshold)?;
    solve_range(&fam, eta, range, precision, kind)
}

fn solve_range(
    fam: &UnfoldingFamily,
    eta: &[f64],
    range: RangeInclusive<usize>,
    precision: Precision,
    kind: SequenceKind,
) -> Result<SparkSequence> {
    let start = *range.start();
    if range.is_empty() {
        return Ok(SparkSequence {
            kind,
            eta: eta.to_vec(),
            start,
            values: Vec::new(),
        });
    }
    let slice = fam.slice(eta)?;
    let values = range
        .into_par_iter()
        .map(|m| slice.solve_with(m, precision).map(|c| c.eps))
        .collect::<Result<Vec<_>>>()?;
    let seq = SparkSequence {
        kind,
        eta: eta.to_vec(),
        start,
        values,
    };
    seq.check_monotone()?;
    Ok(seq)
}
