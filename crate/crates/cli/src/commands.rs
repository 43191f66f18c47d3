use std::path::Path;

use anyhow::Result;
use polylab_core::connections::{
    exterior_sequence_with, interior_sequence_with, sequence_through, SequenceKind, SparkSequence,
};
use polylab_core::invariants::{
    density_ladder, phi, realize_diagram, simple_diagram, GermSamples, DEFAULT_LADDER,
};
use polylab_core::ode::Tolerance;
use polylab_core::saddleode::{
    dulac_ode_from, fit_eps_constant, fit_saddle_model, log_deviation, log_grid, sweep, Band,
    Banded, Beta, LinearField, SaddleField,
};
use polylab_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::Config;
use crate::output::{indexed, num, write_summary, Table};

fn invalid(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn rel_diff(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn eta_columns(d: usize) -> Vec<(String, String)> {
    indexed("eta", d)
        .into_iter()
        .map(|n| (n, "family parameter".to_string()))
        .collect()
}

fn eta_cells(eta: &[f64]) -> Vec<String> {
    eta.iter().map(|v| num(*v)).collect()
}

fn sequence_columns(d: usize) -> Vec<(String, String)> {
    let mut cols = vec![("kind".to_string(), "interior | exterior".to_string())];
    cols.extend(eta_columns(d));
    cols.push((
        "m".into(),
        "index; the connection makes m + shift + 1 turns".into(),
    ));
    cols.push(("u".into(), "-log ε".into()));
    cols.push(("loglog".into(), "log(-log ε)".into()));
    cols
}

fn push_sequence(table: &mut Table, seq: &SparkSequence) {
    for (m, v) in seq.indices().zip(&seq.values) {
        let mut row = vec![seq.kind.to_string()];
        row.extend(eta_cells(&seq.eta));
        row.push(m.to_string());
        row.push(num(v.u()));
        row.push(num(v.u().ln()));
        table.row(&row);
    }
}

#[derive(Serialize)]
struct SlopeReport {
    slope: f64,
    theory: f64,
    rel_err: f64,
}

impl SlopeReport {
    fn new(seq: &SparkSequence, theory: f64) -> Result<Self> {
        let slope = seq
            .slope()
            .ok_or_else(|| invalid(format!("{} range needs at least two indices", seq.kind)))?;
        Ok(SlopeReport {
            slope,
            theory,
            rel_err: rel_diff(slope, theory),
        })
    }
}

#[derive(Serialize)]
struct SparklePoint {
    eta: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    interior: Option<SlopeReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    exterior: Option<SlopeReport>,
}

#[derive(Serialize)]
struct SparkleSummary {
    points: Vec<SparklePoint>,
    rel_err: f64,
}

/// Interior and exterior sequences with fitted log-log slopes.
pub fn sparkle(cfg: &Config, out: &Path) -> Result<()> {
    let spec = cfg
        .sparkle
        .as_ref()
        .ok_or_else(|| invalid("missing [sparkle] section"))?;
    if spec.interior.is_none() && spec.exterior.is_none() {
        return Err(invalid("[sparkle] needs an interior or exterior range").into());
    }
    let grid = cfg.grid()?;
    let precision = cfg.precision();
    let mut table = Table::new("sparkle", cfg, &sequence_columns(grid[0].len()));
    let mut points = Vec::new();
    for eta in &grid {
        let mut point = SparklePoint {
            eta: eta.clone(),
            interior: None,
            exterior: None,
        };
        if let Some([a, b]) = spec.interior {
            let fam = cfg.family(cfg.interior_polycycle()?)?;
            let seq = interior_sequence_with(&fam, eta, a..=b, precision)?;
            let lambda = fam.polycycle_at(eta)?.characteristic_number()?;
            push_sequence(&mut table, &seq);
            point.interior = Some(SlopeReport::new(&seq, -lambda.ln())?);
        }
        if let Some([a, b]) = spec.exterior {
            let fam = cfg.family(cfg.exterior_polycycle()?)?;
            let seq = exterior_sequence_with(&fam, eta, a..=b, precision)?;
            let lambda = fam.polycycle_at(eta)?.characteristic_number()?;
            push_sequence(&mut table, &seq);
            point.exterior = Some(SlopeReport::new(&seq, lambda.ln())?);
        }
        points.push(point);
    }
    let rel_err = points
        .iter()
        .flat_map(|p| [&p.interior, &p.exterior])
        .flatten()
        .map(|r| r.rel_err)
        .fold(0.0, f64::max);
    table.write(&out.join("sequences.csv"))?;
    write_summary(
        &out.join("summary.json"),
        "sparkle",
        cfg,
        &SparkleSummary { points, rel_err },
    )
}

#[derive(Serialize)]
struct DensityPoint {
    eta: Vec<f64>,
    nu_theory: f64,
    ratio: f64,
    rel_err: f64,
}

#[derive(Serialize)]
struct DensitySummary {
    points: Vec<DensityPoint>,
    rel_err: f64,
}

/// Relative density `N_e/N_i` along a threshold ladder.
pub fn density(cfg: &Config, out: &Path) -> Result<()> {
    let mut ladder = cfg
        .density
        .as_ref()
        .map_or_else(|| DEFAULT_LADDER.to_vec(), |d| d.ladder.clone());
    if ladder.is_empty() || ladder.iter().any(|u| !(*u > 0.0 && u.is_finite())) {
        return Err(invalid("density.ladder needs positive, finite thresholds").into());
    }
    ladder.sort_by(f64::total_cmp);
    let deepest = *ladder.last().expect("nonempty");
    let grid = cfg.grid()?;
    let precision = cfg.precision();
    let mut cols = eta_columns(grid[0].len());
    cols.push(("threshold_u".into(), "-log x of the threshold".into()));
    cols.push(("n_e".into(), "exterior connections with e_n ≥ x".into()));
    cols.push(("n_i".into(), "interior connections with i_m ≥ x".into()));
    cols.push(("ratio".into(), "n_e / n_i".into()));
    let mut table = Table::new("density", cfg, &cols);
    let mut points = Vec::new();
    for eta in &grid {
        let fam_i = cfg.family(cfg.interior_polycycle()?)?;
        let fam_e = cfg.family(cfg.exterior_polycycle()?)?;
        let seq_i = sequence_through(&fam_i, eta, SequenceKind::Interior, deepest, precision)?;
        let seq_e = sequence_through(&fam_e, eta, SequenceKind::Exterior, deepest, precision)?;
        let rows = density_ladder(&seq_e, &seq_i, &ladder)?;
        for r in &rows {
            let mut row = eta_cells(eta);
            row.extend([
                num(r.threshold_u),
                r.count_a.to_string(),
                r.count_b.to_string(),
                num(r.ratio),
            ]);
            table.row(&row);
        }
        let lambda_i = fam_i.polycycle_at(eta)?.characteristic_number()?;
        let lambda_e = fam_e.polycycle_at(eta)?.characteristic_number()?;
        let nu_theory = phi(lambda_i, lambda_e)?;
        let ratio = rows.last().expect("nonempty ladder").ratio;
        points.push(DensityPoint {
            eta: eta.clone(),
            nu_theory,
            ratio,
            rel_err: rel_diff(ratio, nu_theory),
        });
    }
    let rel_err = points.iter().map(|p| p.rel_err).fold(0.0, f64::max);
    table.write(&out.join("density.csv"))?;
    write_summary(
        &out.join("summary.json"),
        "density",
        cfg,
        &DensitySummary { points, rel_err },
    )
}

#[derive(Serialize)]
struct DiagramSummary {
    depth: usize,
    points: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_rel_err: Option<f64>,
}

/// Analytic `φ` on the grid, optionally next to slope-ratio estimates.
pub fn diagram(cfg: &Config, out: &Path) -> Result<()> {
    let chain = cfg.chain_spec()?;
    let grid = cfg.grid()?;
    let d = grid[0].len();
    let depth = chain.depth();
    let samples = simple_diagram(&chain, &grid, d)?;
    let empirical = cfg
        .diagram
        .as_ref()
        .filter(|s| s.empirical)
        .map(|s| s.range);
    let precision = cfg.precision();

    let mut cols = eta_columns(d);
    cols.extend(
        indexed("phi", depth)
            .into_iter()
            .map(|n| (n, "-log λ(γ_i^j) / log λ(γ_e)".to_string())),
    );
    if empirical.is_some() {
        cols.extend(indexed("phi_fit", depth).into_iter().map(|n| {
            (
                n,
                "fitted interior slope / fitted exterior slope".to_string(),
            )
        }));
    }
    let mut table = Table::new("diagram", cfg, &cols);
    let mut max_rel_err: Option<f64> = None;
    for sample in &samples {
        let mut row = eta_cells(&sample.eta);
        row.extend(sample.phi.iter().map(|v| num(*v)));
        if let Some([a, b]) = empirical {
            let slope = |seq: SparkSequence| {
                seq.slope()
                    .ok_or_else(|| invalid("diagram.range needs two indices"))
            };
            let fam_e = cfg.family(cfg.exterior_polycycle()?)?;
            let slope_e = slope(exterior_sequence_with(
                &fam_e,
                &sample.eta,
                a..=b,
                precision,
            )?)?;
            for j in 1..=depth {
                let fam = cfg.family(cfg.chain_interior(j)?)?;
                let slope_i = slope(interior_sequence_with(&fam, &sample.eta, a..=b, precision)?)?;
                let fitted = slope_i / slope_e;
                let err = rel_diff(fitted, sample.phi[j - 1]);
                max_rel_err = Some(max_rel_err.map_or(err, |m| m.max(err)));
                row.push(num(fitted));
            }
        }
        table.row(&row);
    }
    table.write(&out.join("diagram.csv"))?;
    write_summary(
        &out.join("summary.json"),
        "diagram",
        cfg,
        &DiagramSummary {
            depth,
            points: samples.len(),
            max_rel_err,
        },
    )
}

#[derive(Serialize)]
struct RealizeSummary {
    depth: usize,
    max_roundtrip_err: f64,
    max_normalization_diff: f64,
    random_checks: usize,
    random_max_err: f64,
}

/// Round-trip error of realizing `germ` and reading its diagram back, and
/// the largest change when the normalization is doubled.
fn round_trip(
    germ: &GermSamples,
    s: f64,
) -> Result<(polylab_core::invariants::ChainSpec, Vec<Vec<f64>>, f64, f64)> {
    let d = germ.base_point.len();
    let chain = realize_diagram(germ, s)?;
    let back = simple_diagram(&chain, &germ.grid, d)?;
    let doubled = simple_diagram(&realize_diagram(germ, 2.0 * s)?, &germ.grid, d)?;
    let (mut err, mut diff) = (0.0f64, 0.0f64);
    let mut realized = Vec::with_capacity(back.len());
    for (k, (a, b)) in back.iter().zip(&doubled).enumerate() {
        for ((x, y), t) in a.phi.iter().zip(&b.phi).zip(germ.phi_at(k)) {
            err = err.max((x - t).abs());
            diff = diff.max((x - y).abs());
        }
        realized.push(a.phi.clone());
    }
    Ok((chain, realized, err, diff))
}

fn random_germ(rng: &mut ChaCha8Rng, grid: &[Vec<f64>], d: usize, codim: usize) -> GermSamples {
    loop {
        let base_point: Vec<f64> = (0..d).map(|_| rng.gen_range(0.2..1.0)).collect();
        let base_value: Vec<f64> = (0..codim).map(|_| rng.gen_range(0.2..1.0)).collect();
        let slopes: Vec<Vec<f64>> = (0..codim)
            .map(|_| (0..d).map(|_| rng.gen_range(-0.5..0.5)).collect())
            .collect();
        let germ = GermSamples {
            grid: grid.to_vec(),
            values: linear_values(grid, &base_value, &slopes),
            base_point,
            base_value,
        };
        if (0..grid.len()).all(|k| germ.phi_at(k).iter().all(|p| *p > 0.0)) {
            return germ;
        }
    }
}

fn linear_values(grid: &[Vec<f64>], base: &[f64], slopes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    grid.iter()
        .map(|eta| {
            base.iter()
                .zip(slopes)
                .map(|(b, row)| b + row.iter().zip(eta).map(|(g, e)| g * e).sum::<f64>())
                .collect()
        })
        .collect()
}

/// Chain realizing a sampled germ, with round-trip verification.
pub fn realize(cfg: &Config, out: &Path) -> Result<()> {
    let spec = cfg
        .realize
        .as_ref()
        .ok_or_else(|| invalid("missing [realize] section"))?;
    let grid = cfg.grid()?;
    let d = spec.base_point.len();
    let codim = spec.base_value.len();
    if grid[0].len() != d {
        return Err(invalid(format!(
            "grid dimension {} differs from base_point dimension {d}",
            grid[0].len()
        ))
        .into());
    }
    let values = match (&spec.values, &spec.slopes) {
        (Some(v), None) => v.clone(),
        (None, Some(s)) => {
            if s.len() != codim || s.iter().any(|row| row.len() != d) {
                return Err(
                    invalid(format!("realize.slopes must be {codim} rows of length {d}")).into(),
                );
            }
            linear_values(&grid, &spec.base_value, s)
        }
        _ => return Err(invalid("[realize] takes exactly one of `values`, `slopes`").into()),
    };
    let germ = GermSamples {
        grid: grid.clone(),
        values,
        base_point: spec.base_point.clone(),
        base_value: spec.base_value.clone(),
    };
    let (chain, realized, max_roundtrip_err, max_normalization_diff) =
        round_trip(&germ, spec.normalization)?;
    let depth = chain.depth();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let germs: Vec<GermSamples> = (0..spec.random_checks)
        .map(|_| random_germ(&mut rng, &grid, d, codim))
        .collect();
    let random_max_err = germs
        .par_iter()
        .map(|g| round_trip(g, spec.normalization).map(|r| r.2.max(r.3)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);

    let mut cols = eta_columns(d);
    cols.extend(
        indexed("target", depth)
            .into_iter()
            .map(|n| (n, "target φ_j".to_string())),
    );
    cols.extend(
        indexed("phi", depth)
            .into_iter()
            .map(|n| (n, "φ_j of the realized chain".to_string())),
    );
    cols.push(("abs_err".into(), "max_j |φ_j - target_j|".into()));
    let mut table = Table::new("realize", cfg, &cols);
    for (k, (eta, got)) in grid.iter().zip(&realized).enumerate() {
        let want = germ.phi_at(k);
        let err = got
            .iter()
            .zip(&want)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let mut row = eta_cells(eta);
        row.extend(want.iter().map(|v| num(*v)));
        row.extend(got.iter().map(|v| num(*v)));
        row.push(num(err));
        table.row(&row);
    }
    table.write(&out.join("roundtrip.csv"))?;

    let chain_text = format!(
        "# chain realizing the configured germ with normalization log λ(γ_e) = {}\n{}",
        spec.normalization,
        Config::from_chain(&chain).to_toml()
    );
    std::fs::write(out.join("chain.toml"), chain_text)?;
    write_summary(
        &out.join("summary.json"),
        "realize",
        cfg,
        &RealizeSummary {
            depth,
            max_roundtrip_err,
            max_normalization_diff,
            random_checks: spec.random_checks,
            random_max_err,
        },
    )
}

#[derive(Serialize)]
struct ModelReport {
    lambda: f64,
    c: f64,
    envelope: f64,
    validation_dev: f64,
    holds: bool,
}

#[derive(Serialize)]
struct OdeSummary {
    lambda: f64,
    theta_band: Band,
    theta_band_ratio: f64,
    derivative_band: Band,
    eps_constant: f64,
    max_z_fd_rel: f64,
    max_w_fd_rel: f64,
    log_deviation: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    linear_closed_form_err: Option<f64>,
    model: ModelReport,
}

/// Sweep of the integrated Dulac map and its variations over `x0`.
pub fn ode_check(cfg: &Config, out: &Path) -> Result<()> {
    let spec = cfg
        .ode
        .as_ref()
        .ok_or_else(|| invalid("missing [ode] section"))?;
    let [lo, hi] = spec.x_range;
    if !(lo > 0.0 && lo < hi) || spec.points < 2 || !(spec.fd_step > 0.0) {
        return Err(
            invalid("ode needs 0 < x_range[0] < x_range[1], points >= 2 and fd_step > 0").into(),
        );
    }
    let linear = LinearField {
        lambda: spec.lambda,
        kx: spec.kx,
        ky: spec.ky,
        keps: spec.keps,
    };
    if !(linear.lambda > 0.0) {
        return Err(
            Error::Constraint(format!("ode.lambda = {} must be positive", linear.lambda)).into(),
        );
    }
    let [band_lo, band_hi] = spec.band.unwrap_or_else(|| {
        let (a, b) = linear.band();
        [a, b]
    });
    let field = Banded {
        field: linear,
        low: band_lo,
        high: band_hi,
    };
    let beta = Beta::new(vec![], spec.eps);
    let lambda = field.lambda(&beta);
    let xs = log_grid(lo, hi, spec.points);
    let rows = sweep(&field, &beta, &xs)?;

    let fine = Tolerance::default().with_rtol(1e-14);
    let h = spec.fd_step;
    let fd: Vec<(f64, f64)> = rows
        .par_iter()
        .map(|r| {
            let dy = (dulac_ode_from(&field, r.x0, 1.0 + h, &beta, fine)?
                - dulac_ode_from(&field, r.x0, 1.0 - h, &beta, fine)?)
                / (2.0 * h);
            let up = Beta::new(vec![], spec.eps + h);
            let down = Beta::new(vec![], spec.eps - h);
            let de = (dulac_ode_from(&field, r.x0, 1.0, &up, fine)?
                - dulac_ode_from(&field, r.x0, 1.0, &down, fine)?)
                / (2.0 * h);
            Ok((rel_diff(r.z, dy), rel_diff(r.w, de)))
        })
        .collect::<Result<_, Error>>()?;

    let log_dev = xs
        .par_iter()
        .map(|&x| log_deviation(&field, x, &beta, 40))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .fold(0.0, f64::max);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let validation: Vec<f64> = (0..spec.validation)
        .map(|_| (rng.gen_range(lo.ln()..hi.ln())).exp())
        .collect();
    let fit = fit_saddle_model(&field, &beta, &xs, &validation)?;

    let linear_closed_form_err = (spec.kx == 0.0 && spec.ky == 0.0).then(|| {
        rows.iter()
            .map(|r| (r.ratio - 1.0).abs())
            .fold(0.0, f64::max)
    });

    let cols = [
        ("x0", "start point on {y = 1}"),
        ("delta", "Δ(x0) = y(-log x0)"),
        ("z", "∂Δ/∂y0"),
        ("w", "∂Δ/∂ε"),
        ("ratio", "Δ(x0) / x0^λ(β)"),
        ("z_ratio", "z / x0^λ(β)"),
        ("z_fd_rel", "relative gap to a central difference in y0"),
        ("w_fd_rel", "relative gap to a central difference in ε"),
    ];
    let mut table = Table::new("ode-check", cfg, &cols);
    for (r, (zf, wf)) in rows.iter().zip(&fd) {
        table.row(&[r.x0, r.delta, r.z, r.w, r.ratio, r.z_ratio, *zf, *wf].map(num));
    }
    table.write(&out.join("sweep.csv"))?;

    let theta_band = Band::fit(rows.iter().map(|r| r.ratio))?;
    let summary = OdeSummary {
        lambda,
        theta_band,
        theta_band_ratio: theta_band.ratio(),
        derivative_band: Band::fit(rows.iter().map(|r| r.z_ratio))?,
        eps_constant: fit_eps_constant(&rows, lambda),
        max_z_fd_rel: fd.iter().map(|p| p.0).fold(0.0, f64::max),
        max_w_fd_rel: fd.iter().map(|p| p.1).fold(0.0, f64::max),
        log_deviation: log_dev,
        linear_closed_form_err,
        model: ModelReport {
            lambda: fit.model.lambda,
            c: fit.model.prefactor,
            envelope: fit.envelope,
            validation_dev: fit.validation_dev,
            holds: fit.holds(),
        },
    };
    write_summary(&out.join("summary.json"), "ode-check", cfg, &summary)
}
