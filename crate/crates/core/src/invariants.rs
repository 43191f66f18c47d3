//! Counting functions, relative densities and the numeric and functional
//! moduli built from characteristic numbers.

use crate::connections::SparkSequence;
use crate::dulacmodel::{LambdaFn, ParamPolycycle, ParamSaddle};
use crate::error::{Error, Result};
use crate::numerics::LogScale;

/// Default threshold ladder in `u = -log x`.
pub const DEFAULT_LADDER: [f64; 4] = [1e10, 1e25, 1e50, 1e100];

/// Ordinary least squares `y ≈ slope · x + intercept`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// A decreasing set of small positive numbers, queried through its
/// counting function `N(x) = #{a ≥ x}`.
///
/// Levels are `log(-log a)`, which keeps sets whose elements are far
/// below `f64` range (`u > 1e308`) countable.
pub trait CountingSet {
    /// Number of elements whose level is at most `level`.
    fn count_to_level(&self, level: f64) -> usize;
    /// Level of the deepest element known.
    fn deepest_level(&self) -> f64;
}

impl CountingSet for SparkSequence {
    fn count_to_level(&self, level: f64) -> usize {
        self.values.partition_point(|v| v.u().ln() <= level)
    }

    fn deepest_level(&self) -> f64 {
        self.values.last().map_or(f64::NEG_INFINITY, |v| v.u().ln())
    }
}

/// Set given directly by its levels, e.g. an exact quasi progression.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSet {
    levels: Vec<f64>,
}

impl LevelSet {
    pub fn new(mut levels: Vec<f64>) -> Self {
        levels.sort_by(f64::total_cmp);
        LevelSet { levels }
    }

    /// `{delta · k + offset | k = 1..=count}`.
    pub fn progression(delta: f64, offset: f64, count: usize) -> Self {
        LevelSet::new((1..=count).map(|k| delta * k as f64 + offset).collect())
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }
}

impl CountingSet for LevelSet {
    fn count_to_level(&self, level: f64) -> usize {
        self.levels.partition_point(|l| *l <= level)
    }

    fn deepest_level(&self) -> f64 {
        self.levels.last().copied().unwrap_or(f64::NEG_INFINITY)
    }
}

/// `N(x)`: number of sequence values `≥ x` (inclusive).
pub fn counting(seq: &SparkSequence, x: LogScale) -> usize {
    seq.values.partition_point(|v| v.u() <= x.u())
}

/// `N_a(x) / N_b(x)` at a threshold given as a level `log(-log x)`.
pub fn relative_density_at_level<A, B>(a: &A, b: &B, level: f64) -> Result<f64>
where
    A: CountingSet + ?Sized,
    B: CountingSet + ?Sized,
{
    for deepest in [a.deepest_level(), b.deepest_level()] {
        if deepest < level {
            return Err(Error::SequenceTooShort {
                last_u: deepest.exp(),
                threshold_u: level.exp(),
            });
        }
    }
    let nb = b.count_to_level(level);
    if nb == 0 {
        return Err(Error::ZeroCount);
    }
    Ok(a.count_to_level(level) as f64 / nb as f64)
}

pub fn relative_density(
    seq_a: &SparkSequence,
    seq_b: &SparkSequence,
    threshold: LogScale,
) -> Result<f64> {
    if !(threshold.u() > 0.0 && threshold.u().is_finite()) {
        return Err(Error::domain(format!(
            "threshold u = {} must be positive and finite",
            threshold.u()
        )));
    }
    let level = threshold.u().ln();
    for seq in [seq_a, seq_b] {
        if seq.values.last().is_none_or(|v| v.u() < threshold.u()) {
            return Err(Error::SequenceTooShort {
                last_u: seq.values.last().map_or(0.0, |v| v.u()),
                threshold_u: threshold.u(),
            });
        }
    }
    let nb = counting(seq_b, threshold);
    if nb == 0 {
        return Err(Error::ZeroCount);
    }
    debug_assert_eq!(nb, seq_b.count_to_level(level));
    Ok(counting(seq_a, threshold) as f64 / nb as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityRow {
    pub threshold_u: f64,
    pub count_a: usize,
    pub count_b: usize,
    pub ratio: f64,
}

/// Relative density evaluated along a threshold ladder.
pub fn density_ladder(
    a: &SparkSequence,
    b: &SparkSequence,
    ladder: &[f64],
) -> Result<Vec<DensityRow>> {
    ladder
        .iter()
        .map(|&u| {
            let threshold = LogScale::from_u(u)?;
            let ratio = relative_density(a, b, threshold)?;
            Ok(DensityRow {
                threshold_u: u,
                count_a: counting(a, threshold),
                count_b: counting(b, threshold),
                ratio,
            })
        })
        .collect()
}

/// `ν = -log λ / log(λ²μ)` for a polycycle with `λ < 1 < λ²μ`.
pub fn nu_theory(lambda: f64, mu: f64) -> Result<f64> {
    if !(lambda > 0.0 && lambda < 1.0 && mu > 0.0 && lambda * lambda * mu > 1.0) {
        return Err(Error::constraint(format!(
            "need λ < 1 and λ²μ > 1, got λ = {lambda}, μ = {mu}"
        )));
    }
    Ok(-lambda.ln() / (lambda * lambda * mu).ln())
}

/// `φ = -log λ(γ_i) / log λ(γ_e)`.
pub fn phi(lambda_i: f64, lambda_e: f64) -> Result<f64> {
    if !(lambda_i > 0.0 && lambda_i < 1.0 && lambda_e > 1.0) {
        return Err(Error::constraint(format!(
            "need λ(γ_i) < 1 < λ(γ_e), got λ(γ_i) = {lambda_i}, λ(γ_e) = {lambda_e}"
        )));
    }
    Ok(-lambda_i.ln() / lambda_e.ln())
}

/// Characteristic numbers of the polycycles of a chain of `D + 1` saddles.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainCharacteristics {
    /// `λ(γ_i^1) … λ(γ_i^D)`.
    pub interior: Vec<f64>,
    /// `λ(γ_e)`.
    pub exterior: f64,
    /// All interior numbers below one and the exterior one above one.
    pub valid: bool,
}

impl ChainCharacteristics {
    pub fn phi(&self) -> Result<Vec<f64>> {
        self.interior
            .iter()
            .map(|&li| phi(li, self.exterior))
            .collect()
    }
}

/// `λ(γ_i^1) = λ_1`, `λ(γ_i^j) = λ_{j-1} λ_j`, `λ(γ_e) = λ_{D+1} ∏ λ_j²`.
pub fn t_d_characteristics(lambdas: &[f64]) -> Result<ChainCharacteristics> {
    if lambdas.len() < 2 {
        return Err(Error::constraint(
            "a chain needs at least two saddles (D ≥ 1)",
        ));
    }
    let d = lambdas.len() - 1;
    let interior: Vec<f64> = (0..d)
        .map(|j| {
            if j == 0 {
                lambdas[0]
            } else {
                lambdas[j - 1] * lambdas[j]
            }
        })
        .collect();
    let exterior = lambdas[d] * lambdas[..d].iter().map(|l| l * l).product::<f64>();
    let valid = interior.iter().all(|&l| l < 1.0) && exterior > 1.0;
    Ok(ChainCharacteristics {
        interior,
        exterior,
        valid,
    })
}

/// The `D = 2` chain: `(λ_1, λ_1 λ_2, λ_1² λ_2² λ_3)` and its validity.
pub fn t2_characteristics(l1: f64, l2: f64, l3: f64) -> ChainCharacteristics {
    t_d_characteristics(&[l1, l2, l3]).expect("three saddles")
}

/// Chain of `D + 1` saddles with characteristic numbers depending on `η`.
/// Saddle `j` carries the id `"j"` (1-based).
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSpec {
    pub lambdas: Vec<LambdaFn>,
}

impl ChainSpec {
    pub fn new(lambdas: Vec<LambdaFn>) -> Result<Self> {
        if lambdas.len() < 2 {
            return Err(Error::constraint(
                "a chain needs at least two saddles (D ≥ 1)",
            ));
        }
        Ok(ChainSpec { lambdas })
    }

    /// Number of interior polycycles.
    pub fn depth(&self) -> usize {
        self.lambdas.len() - 1
    }

    pub fn at(&self, eta: &[f64]) -> Result<Vec<f64>> {
        self.lambdas.iter().map(|l| l.eval(eta)).collect()
    }

    pub fn characteristics(&self, eta: &[f64]) -> Result<ChainCharacteristics> {
        t_d_characteristics(&self.at(eta)?)
    }

    pub fn saddle_id(j: usize) -> String {
        (j + 1).to_string()
    }

    fn saddles(&self) -> Vec<ParamSaddle> {
        self.lambdas
            .iter()
            .enumerate()
            .map(|(j, l)| ParamSaddle {
                id: Self::saddle_id(j),
                lambda: l.clone(),
                prefactor: 0.0,
                correction: None,
            })
            .collect()
    }

    pub fn ids(&self) -> Vec<String> {
        (0..self.lambdas.len()).map(Self::saddle_id).collect()
    }

    pub fn interior_polycycle(&self, j: usize) -> Result<ParamPolycycle> {
        Ok(ParamPolycycle {
            saddles: self.saddles(),
            visits: chain_interior_visits(&self.ids(), j)?,
        })
    }

    pub fn exterior_polycycle(&self) -> ParamPolycycle {
        ParamPolycycle {
            saddles: self.saddles(),
            visits: chain_exterior_visits(&self.ids()),
        }
    }
}

/// Visits of `γ_i^j`, `j = 1..=D`: saddle 1 alone, then saddles `j-1, j`.
pub fn chain_interior_visits(ids: &[String], j: usize) -> Result<Vec<String>> {
    let depth = ids.len().saturating_sub(1);
    if j == 0 || j > depth {
        return Err(Error::domain(format!(
            "interior polycycle index {j} outside 1..={depth}"
        )));
    }
    Ok(if j == 1 {
        vec![ids[0].clone()]
    } else {
        ids[j - 2..j].to_vec()
    })
}

/// Visits of `γ_e`: saddles `1..D` on the way out, `D+1`, then back.
pub fn chain_exterior_visits(ids: &[String]) -> Vec<String> {
    let mut visits = ids.to_vec();
    visits.extend(ids[..ids.len().saturating_sub(1)].iter().rev().cloned());
    visits
}

/// `φ_V(η) = (φ_1(η), …, φ_D(η))` at one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagramSample {
    pub eta: Vec<f64>,
    pub phi: Vec<f64>,
}

/// Evaluates the invariant functions `φ_j = -log λ(γ_i^j)/log λ(γ_e)` on
/// a grid of `d`-dimensional parameter points.
pub fn simple_diagram(
    chain: &ChainSpec,
    eta_grid: &[Vec<f64>],
    d: usize,
) -> Result<Vec<DiagramSample>> {
    eta_grid
        .iter()
        .map(|eta| {
            if eta.len() != d {
                return Err(Error::domain(format!("grid point {eta:?} is not {d}-dimensional")));
            }
            let ch = chain.characteristics(eta)?;
            if !ch.valid {
                return Err(Error::constraint(format!(
                    "chain violates λ(γ_i^j) < 1 < λ(γ_e) at η = {eta:?}: interior {:?}, exterior {}",
                    ch.interior, ch.exterior
                )));
            }
            Ok(DiagramSample {
                eta: eta.clone(),
                phi: ch.phi()?,
            })
        })
        .collect()
}

/// A germ of the graph map `f: (ℝ^d, a) → (ℝ^{D-d}, b)` sampled on a grid.
///
/// At a grid point `η` the target diagram is `φ = (a + η, f(η))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GermSamples {
    pub grid: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
    pub base_point: Vec<f64>,
    pub base_value: Vec<f64>,
}

impl GermSamples {
    /// Target `φ` vector at grid point `k`.
    pub fn phi_at(&self, k: usize) -> Vec<f64> {
        let mut phi: Vec<f64> = self
            .base_point
            .iter()
            .zip(&self.grid[k])
            .map(|(a, e)| a + e)
            .collect();
        phi.extend_from_slice(&self.values[k]);
        phi
    }

    fn validate(&self) -> Result<()> {
        if self.grid.len() != self.values.len() {
            return Err(Error::Config(format!(
                "{} grid points but {} target samples",
                self.grid.len(),
                self.values.len()
            )));
        }
        let d = self.base_point.len();
        for (k, (eta, f)) in self.grid.iter().zip(&self.values).enumerate() {
            if eta.len() != d || f.len() != self.base_value.len() {
                return Err(Error::Config(format!(
                    "sample {k} has the wrong dimensions"
                )));
            }
            if eta.iter().all(|e| e.abs() <= 1e-15)
                && f.iter()
                    .zip(&self.base_value)
                    .any(|(v, b)| (v - b).abs() > 1e-12)
            {
                return Err(Error::Config(format!(
                    "f(0) = {f:?} disagrees with the base value {:?}",
                    self.base_value
                )));
            }
        }
        Ok(())
    }
}

/// Log-characteristic numbers `a_j = log λ_j` realizing `φ` with
/// `log λ(γ_e) = normalization`.
pub fn realize_point(phi: &[f64], normalization: f64) -> Result<Vec<f64>> {
    if phi.is_empty() {
        return Err(Error::constraint("empty target diagram"));
    }
    if !(normalization > 0.0) || !normalization.is_finite() {
        return Err(Error::constraint(format!(
            "normalization S = {normalization} must be positive"
        )));
    }
    if let Some(bad) = phi.iter().find(|p| !(**p > 0.0) || !p.is_finite()) {
        return Err(Error::constraint(format!(
            "target value φ = {bad} must be positive"
        )));
    }
    let mut logs = Vec::with_capacity(phi.len() + 1);
    for (j, p) in phi.iter().enumerate() {
        let interior = -p * normalization;
        logs.push(if j == 0 {
            interior
        } else {
            interior - logs[j - 1]
        });
    }
    let outer: f64 = logs.iter().sum();
    logs.push(normalization - 2.0 * outer);
    Ok(logs)
}

/// Chain whose simple diagram reproduces the sampled germ on its grid.
pub fn realize_diagram(target: &GermSamples, normalization: f64) -> Result<ChainSpec> {
    target.validate()?;
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for k in 0..target.grid.len() {
        let phi = target.phi_at(k);
        let logs = realize_point(&phi, normalization).map_err(|e| {
            Error::constraint(format!(
                "infeasible target at η = {:?}: {e}",
                target.grid[k]
            ))
        })?;
        let ch = t_d_characteristics(&logs.iter().map(|a| a.exp()).collect::<Vec<_>>())?;
        if !ch.valid {
            return Err(Error::constraint(format!(
                "realized chain is invalid at η = {:?}",
                target.grid[k]
            )));
        }
        if columns.is_empty() {
            columns = vec![Vec::with_capacity(target.grid.len()); logs.len()];
        }
        for (col, a) in columns.iter_mut().zip(logs) {
            col.push(a.exp());
        }
    }
    ChainSpec::new(
        columns
            .into_iter()
            .map(|values| LambdaFn::Table {
                grid: target.grid.clone(),
                values,
            })
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProgressionFit {
    /// Fitted difference `δ`.
    pub delta: f64,
    pub intercept: f64,
    /// Largest deviation of a level from the fitted line.
    pub max_dev: f64,
}

/// Fits `level ≈ δ k + b` and reports the largest deviation; a quasi
/// progression keeps `max_dev` bounded as the index range grows.
pub fn quasi_progression_check(levels: &[(usize, f64)]) -> Result<ProgressionFit> {
    if levels.len() < 8 {
        return Err(Error::domain(format!(
            "need at least 8 elements, got {}",
            levels.len()
        )));
    }
    let xs: Vec<f64> = levels.iter().map(|p| p.0 as f64).collect();
    let ys: Vec<f64> = levels.iter().map(|p| p.1).collect();
    let (delta, intercept) = linear_fit(&xs, &ys);
    let max_dev = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - (delta * x + intercept)).abs())
        .fold(0.0, f64::max);
    Ok(ProgressionFit {
        delta,
        intercept,
        max_dev,
    })
}

pub fn sequence_progression(seq: &SparkSequence) -> Result<ProgressionFit> {
    quasi_progression_check(&seq.loglog())
}
