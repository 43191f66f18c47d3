//! Experiment configuration: a TOML document with one section per model
//! component and one per command.

use std::path::Path;

use anyhow::Context;
use polylab_core::connections::{Target, UnfoldingFamily, DEFAULT_EPS_MAX};
use polylab_core::dulacmodel::{Correction, LambdaFn, ParamPolycycle, ParamSaddle};
use polylab_core::invariants::{
    chain_exterior_visits, chain_interior_visits, ChainSpec, DEFAULT_LADDER,
};
use polylab_core::{Error, Precision};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub seed: u64,
    /// Set from `--precision` when given there.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precision: Option<Precision>,
    #[serde(default, rename = "saddle", skip_serializing_if = "Vec::is_empty")]
    pub saddles: Vec<SaddleSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain: Option<ChainSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interior: Option<VisitSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exterior: Option<VisitSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<TargetSpec>,
    #[serde(default)]
    pub family: FamilySpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sparkle: Option<SparkleSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<DensitySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagram: Option<DiagramSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub realize: Option<RealizeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ode: Option<OdeSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaddleSpec {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// `λ(η) = exp(base + grad · η)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_lambda: Option<LogLinearSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_table: Option<TableSpec>,
    /// Prefactor `c` in `e^{-c} x^λ (1 + r x^s)`.
    #[serde(default)]
    pub c: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogLinearSpec {
    pub base: f64,
    #[serde(default)]
    pub grad: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableSpec {
    pub grid: Vec<Vec<f64>>,
    pub values: Vec<f64>,
}

/// Saddles of a chain in order; polycycles are derived from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSection {
    pub saddles: Vec<String>,
    /// Interior polycycle used by `sparkle` and `density`.
    #[serde(default = "one")]
    pub interior: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VisitSpec {
    pub visits: Vec<String>,
}

/// `T(η, ε) = value · exp(eta_grad · η) · (1 + eps_slope · ε)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub value: f64,
    #[serde(default)]
    pub eta_grad: Vec<f64>,
    #[serde(default)]
    pub eps_slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    #[serde(default = "default_eps_max")]
    pub eps_max: f64,
    #[serde(default)]
    pub shift: usize,
    #[serde(default)]
    pub drift: f64,
}

fn default_eps_max() -> f64 {
    DEFAULT_EPS_MAX
}

impl Default for FamilySpec {
    fn default() -> Self {
        FamilySpec {
            eps_max: DEFAULT_EPS_MAX,
            shift: 0,
            drift: 0.0,
        }
    }
}

/// Explicit `points`, or `count` equally spaced points on `[lo, hi]` (d = 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SparkleSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interior: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exterior: Option<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensitySpec {
    /// Thresholds in `u = -log x`.
    #[serde(default = "default_ladder")]
    pub ladder: Vec<f64>,
}

fn default_ladder() -> Vec<f64> {
    DEFAULT_LADDER.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagramSpec {
    /// Also estimate `φ` from fitted sequence slopes.
    #[serde(default)]
    pub empirical: bool,
    #[serde(default = "default_range")]
    pub range: [usize; 2],
}

fn default_range() -> [usize; 2] {
    [20, 60]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RealizeSpec {
    pub base_point: Vec<f64>,
    pub base_value: Vec<f64>,
    /// Rows of the linear germ `f(η) = base_value + slopes · η`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slopes: Option<Vec<Vec<f64>>>,
    /// Sampled `f` at each grid point, instead of `slopes`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<Vec<f64>>>,
    #[serde(default = "unit")]
    pub normalization: f64,
    /// Random germs drawn from `seed` for an additional round-trip check.
    #[serde(default)]
    pub random_checks: usize,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdeSpec {
    /// `g = lambda + kx·x + ky·y + keps·ε`.
    pub lambda: f64,
    #[serde(default)]
    pub kx: f64,
    #[serde(default)]
    pub ky: f64,
    #[serde(default)]
    pub keps: f64,
    /// Working band for `g`; `(λ0/2, 2λ0)` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band: Option<[f64; 2]>,
    #[serde(default)]
    pub eps: f64,
    #[serde(default = "default_x_range")]
    pub x_range: [f64; 2],
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
    /// Seeded validation points for the fitted saddle model.
    #[serde(default = "default_validation")]
    pub validation: usize,
}

fn default_x_range() -> [f64; 2] {
    [1e-6, 1e-2]
}

fn default_points() -> usize {
    41
}

fn default_fd_step() -> f64 {
    1e-6
}

fn default_validation() -> usize {
    8
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl Config {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        toml::from_str(text).map_err(|e| invalid(format!("config: {e}")).into())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn precision(&self) -> Precision {
        self.precision.unwrap_or(Precision::Double)
    }

    fn saddle_spec(&self, id: &str) -> Result<&SaddleSpec, Error> {
        self.saddles
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::UnknownSaddle(id.to_string()))
    }

    pub fn param_saddles(&self) -> Result<Vec<ParamSaddle>, Error> {
        self.saddles.iter().map(SaddleSpec::resolve).collect()
    }

    fn chain_ids(&self) -> Result<&[String], Error> {
        match &self.chain {
            Some(ch) if ch.saddles.len() >= 2 => Ok(&ch.saddles),
            Some(_) => Err(invalid("[chain] needs at least two saddles")),
            None => Err(invalid("missing [chain] section")),
        }
    }

    fn polycycle(&self, visits: Vec<String>) -> Result<ParamPolycycle, Error> {
        for v in &visits {
            self.saddle_spec(v)?;
        }
        Ok(ParamPolycycle {
            saddles: self.param_saddles()?,
            visits,
        })
    }

    /// `[interior]` visits, or interior polycycle `chain.interior` of the chain.
    pub fn interior_polycycle(&self) -> Result<ParamPolycycle, Error> {
        match (&self.interior, &self.chain) {
            (Some(v), _) => self.polycycle(v.visits.clone()),
            (None, Some(ch)) => self.chain_interior(ch.interior),
            (None, None) => Err(invalid("need an [interior] or [chain] section")),
        }
    }

    pub fn exterior_polycycle(&self) -> Result<ParamPolycycle, Error> {
        match &self.exterior {
            Some(v) => self.polycycle(v.visits.clone()),
            None => self.polycycle(chain_exterior_visits(
                self.chain_ids()
                    .map_err(|_| invalid("need an [exterior] or [chain] section"))?,
            )),
        }
    }

    pub fn chain_interior(&self, j: usize) -> Result<ParamPolycycle, Error> {
        self.polycycle(chain_interior_visits(self.chain_ids()?, j)?)
    }

    pub fn chain_spec(&self) -> Result<ChainSpec, Error> {
        let lambdas = self
            .chain_ids()?
            .iter()
            .map(|id| self.saddle_spec(id).and_then(SaddleSpec::lambda_fn))
            .collect::<Result<Vec<_>, _>>()?;
        ChainSpec::new(lambdas)
    }

    pub fn target(&self) -> Target {
        match &self.target {
            None => Target::Constant((-1.0f64).exp()),
            Some(t) if t.eta_grad.is_empty() && t.eps_slope == 0.0 => Target::Constant(t.value),
            Some(t) => Target::Affine {
                value: t.value,
                eta_grad: t.eta_grad.clone(),
                eps_slope: t.eps_slope,
            },
        }
    }

    pub fn family(&self, polycycle: ParamPolycycle) -> Result<UnfoldingFamily, Error> {
        let f = &self.family;
        if !(f.eps_max > 0.0 && f.eps_max < 1.0) {
            return Err(invalid(format!(
                "family.eps_max = {} must lie in (0, 1)",
                f.eps_max
            )));
        }
        if let Some(t) = &self.target {
            if !(t.value > 0.0 && t.value < 1.0) {
                return Err(invalid(format!(
                    "target.value = {} must lie in (0, 1)",
                    t.value
                )));
            }
        }
        Ok(UnfoldingFamily::new(polycycle, self.target())
            .with_eps_max(f.eps_max)
            .with_shift(f.shift)
            .with_drift(f.drift))
    }

    /// Parameter points; a single zero-dimensional point when no grid is given.
    pub fn grid(&self) -> Result<Vec<Vec<f64>>, Error> {
        let Some(g) = &self.grid else {
            return Ok(vec![vec![]]);
        };
        let points = match (&g.points, g.lo, g.hi, g.count) {
            (Some(p), None, None, None) => p.clone(),
            (None, Some(lo), Some(hi), Some(count)) if count >= 1 && lo <= hi => {
                if count == 1 {
                    vec![vec![lo]]
                } else {
                    (0..count)
                        .map(|k| vec![lo + (hi - lo) * k as f64 / (count - 1) as f64])
                        .collect()
                }
            }
            _ => {
                return Err(invalid(
                    "[grid] takes either `points` or `lo`, `hi` and `count >= 1`",
                ))
            }
        };
        if points.is_empty() {
            return Err(invalid("[grid] has no points"));
        }
        let d = points[0].len();
        if points.iter().any(|p| p.len() != d) {
            return Err(invalid("[grid] points differ in dimension"));
        }
        Ok(points)
    }

    /// The configuration describing a realized chain.
    pub fn from_chain(chain: &ChainSpec) -> Config {
        let ids = chain.ids();
        let saddles = ids
            .iter()
            .zip(&chain.lambdas)
            .map(|(id, l)| {
                let mut s = SaddleSpec {
                    id: id.clone(),
                    lambda: None,
                    log_lambda: None,
                    lambda_table: None,
                    c: 0.0,
                    r: None,
                    s: None,
                };
                match l {
                    LambdaFn::Constant(v) => s.lambda = Some(*v),
                    LambdaFn::LogLinear { base, grad } => {
                        s.log_lambda = Some(LogLinearSpec {
                            base: *base,
                            grad: grad.clone(),
                        })
                    }
                    LambdaFn::Table { grid, values } => {
                        s.lambda_table = Some(TableSpec {
                            grid: grid.clone(),
                            values: values.clone(),
                        })
                    }
                }
                s
            })
            .collect();
        Config {
            saddles,
            chain: Some(ChainSection {
                saddles: ids,
                interior: 1,
            }),
            ..Config::default()
        }
    }
}

impl SaddleSpec {
    fn lambda_fn(&self) -> Result<LambdaFn, Error> {
        match (self.lambda, &self.log_lambda, &self.lambda_table) {
            (Some(v), None, None) => Ok(LambdaFn::Constant(v)),
            (None, Some(l), None) => Ok(LambdaFn::LogLinear {
                base: l.base,
                grad: l.grad.clone(),
            }),
            (None, None, Some(t)) => {
                if t.grid.len() != t.values.len() || t.grid.is_empty() {
                    return Err(invalid(format!(
                        "saddle {}: lambda_table grid and values differ in length",
                        self.id
                    )));
                }
                Ok(LambdaFn::Table {
                    grid: t.grid.clone(),
                    values: t.values.clone(),
                })
            }
            _ => Err(invalid(format!(
                "saddle {}: give exactly one of lambda, log_lambda, lambda_table",
                self.id
            ))),
        }
    }

    fn resolve(&self) -> Result<ParamSaddle, Error> {
        if let LambdaFn::Constant(v) = self.lambda_fn()? {
            if !(v > 0.0) {
                return Err(Error::Constraint(format!(
                    "saddle {}: λ = {v} must be positive",
                    self.id
                )));
            }
        }
        let correction = match (self.r, self.s) {
            (None, None) => None,
            (Some(r), Some(s)) => Some(Correction::new(r, s)?),
            _ => {
                return Err(invalid(format!(
                    "saddle {}: corrections need both r and s",
                    self.id
                )))
            }
        };
        Ok(ParamSaddle {
            id: self.id.clone(),
            lambda: self.lambda_fn()?,
            prefactor: self.c,
            correction,
        })
    }
}
