//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion fails.

use std::time::{Duration, Instant};

use astro_float::{BigFloat, Consts, RoundingMode};
use polylab_core::connections::{
    bracket, exterior_sequence, interior_sequence, sequence_through, SequenceKind, SparkSequence,
    Target, UnfoldingFamily,
};
use polylab_core::dulacmodel::{ParamPolycycle, PolycycleModel, SaddleModel};
use polylab_core::invariants::{
    linear_fit, realize_diagram, relative_density, relative_density_at_level, simple_diagram,
    GermSamples, LevelSet,
};
use polylab_core::ode::Tolerance;
use polylab_core::saddleode::{
    dulac_ode_from, dulac_variational, log_grid, sweep, Beta, LinearField,
};
use polylab_core::{LogScale, Precision};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// tolerances
const SLOPE_REL: f64 = 0.02;
const DENSITY_REL: f64 = 0.02;
const CASES_BRACKET: usize = 500;
const CASES_ORACLE: usize = 100;
const ORACLE_U_ABS: f64 = 1e-9;
const PROGRESSION_REL: f64 = 0.01;
const ROUND_TRIP_ABS: f64 = 1e-12;
const DIAGRAM_REL: f64 = 0.03;
const LINEAR_ODE_REL: f64 = 1e-10;
const FD_REL: f64 = 1e-6;
const THETA_BAND_RATIO: f64 = 10.0;

struct Outcome {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
}

fn criterion(
    id: usize,
    name: &'static str,
    limit: Duration,
    run: impl FnOnce() -> (bool, String),
) -> Outcome {
    let start = Instant::now();
    let (ok, detail) = run();
    let elapsed = start.elapsed();
    Outcome {
        id,
        name,
        pass: ok && elapsed <= limit,
        detail: format!(
            "{detail}; {:.2} s (limit {} s)",
            elapsed.as_secs_f64(),
            limit.as_secs()
        ),
        elapsed,
    }
}

fn loop_model(saddles: &[(&str, f64)], visits: &[&str]) -> PolycycleModel {
    PolycycleModel::new(
        saddles
            .iter()
            .map(|(id, l)| SaddleModel::new(*id, *l).unwrap()),
        visits.iter().map(|v| v.to_string()).collect(),
    )
    .unwrap()
}

/// Tear loop `L` and heart `L → M → L` of the tear-and-heart polycycle.
fn th_families(lambda: f64, mu: f64) -> (UnfoldingFamily, UnfoldingFamily) {
    let t = Target::Constant((-1.0f64).exp());
    let tear = loop_model(&[("L", lambda), ("M", mu)], &["L"]);
    let heart = loop_model(&[("L", lambda), ("M", mu)], &["L", "M", "L"]);
    (
        UnfoldingFamily::new(ParamPolycycle::constant(&tear), t.clone()),
        UnfoldingFamily::new(ParamPolycycle::constant(&heart), t),
    )
}

fn slope(seq: &SparkSequence) -> f64 {
    let pts = seq.loglog();
    let xs: Vec<f64> = pts.iter().map(|p| p.0 as f64).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    linear_fit(&xs, &ys).0
}

fn strictly_increasing_u(seq: &SparkSequence) -> usize {
    seq.values
        .windows(2)
        .filter(|w| !(w[1].u() > w[0].u()))
        .count()
}

#[derive(Default)]
struct Ledger {
    sequences: Vec<SparkSequence>,
}

fn c1_interior_slope(ledger: &mut Ledger) -> (bool, String) {
    let (tear, _) = th_families(0.6, 4.0);
    let seq = interior_sequence(&tear, &[], 20..=60).unwrap();
    let want = -(0.6f64.ln());
    let got = slope(&seq);
    ledger.sequences.push(seq);
    let rel = (got / want - 1.0).abs();
    (
        rel < SLOPE_REL,
        format!("slope {got:.6} vs {want:.6}, rel {rel:.2e}"),
    )
}

fn c2_exterior_slope(ledger: &mut Ledger) -> (bool, String) {
    let (_, heart) = th_families(0.6, 4.0);
    let seq = exterior_sequence(&heart, &[], 20..=60).unwrap();
    let want = (0.36f64 * 4.0).ln();
    let got = slope(&seq);
    ledger.sequences.push(seq);
    let rel = (got / want - 1.0).abs();
    (
        rel < SLOPE_REL,
        format!("slope {got:.6} vs {want:.6}, rel {rel:.2e}"),
    )
}

fn c3_density(ledger: &mut Ledger) -> (bool, String) {
    let threshold = LogScale::from_u(1e100).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for (lambda, mu) in [(0.6, 4.0), (0.5, 8.0)] {
        let (tear, heart) = th_families(lambda, mu);
        let si =
            sequence_through(&tear, &[], SequenceKind::Interior, 1e100, Precision::Double).unwrap();
        let se = sequence_through(
            &heart,
            &[],
            SequenceKind::Exterior,
            1e100,
            Precision::Double,
        )
        .unwrap();
        let ratio = relative_density(&se, &si, threshold).unwrap();
        let nu = -lambda.ln() / (lambda * lambda * mu).ln();
        let rel = (ratio / nu - 1.0).abs();
        ok &= rel < DENSITY_REL;
        parts.push(format!(
            "λ={lambda}, μ={mu}: N_e/N_i {ratio:.5} vs ν {nu:.5} (rel {rel:.2e})"
        ));
        ledger.sequences.extend([si, se]);
    }
    (ok, parts.join("; "))
}

/// `u ↦ λu + c - log1p(r e^{-su})` followed by `ε + ·`, written out directly.
fn direct_map(lambda: f64, c: f64, r: f64, s: f64, u_eps: f64, u: f64) -> f64 {
    let base = lambda * u + c - (r * (-s * u).exp()).ln_1p();
    let (lo, hi) = if base < u_eps {
        (base, u_eps)
    } else {
        (u_eps, base)
    };
    lo - (-(hi - lo)).exp().ln_1p()
}

fn c4_bracketing(ledger: &mut Ledger) -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut checked, mut violations, mut skipped) = (0, 0, 0);
    while checked < CASES_BRACKET {
        let lambda = rng.gen_range(0.3..0.9);
        let c = rng.gen_range(-0.3..0.3);
        let r = rng.gen_range(-0.5..0.5);
        let s = rng.gen_range(0.3..2.0);
        let t0 = rng.gen_range(0.02..0.3);
        let k = rng.gen_range(-3.0..3.0);
        let saddle = SaddleModel::new("L", lambda)
            .unwrap()
            .with_prefactor(c)
            .with_correction(r, s)
            .unwrap();
        let p = PolycycleModel::new([saddle], vec!["L".into()]).unwrap();
        let target = Target::Affine {
            value: t0,
            eta_grad: vec![],
            eps_slope: k,
        };
        let fam = UnfoldingFamily::new(ParamPolycycle::constant(&p), target.clone());
        // a target beyond x_- violates the solver's precondition, not the property
        let Ok(slice) = fam.slice(&[]) else {
            skipped += 1;
            continue;
        };
        let m = slice.first_index().unwrap() + rng.gen_range(0..30);
        checked += 1;
        let env = *slice.envelope();
        let (t_low, tau) = target.bounds(&[], fam.eps_max);
        let closed = bracket(m, env.c, env.lambda, tau, t_low).unwrap();
        let conn = match slice.solve(m) {
            Ok(c) => c,
            Err(_) => {
                violations += 1;
                continue;
            }
        };
        let u = conn.eps.u();
        let mut x = u;
        for _ in 0..m {
            x = direct_map(lambda, c, r, s, u, x);
        }
        let t = target.eval(&[], (-u).exp());
        let inside = closed.eps_plus.u() <= u && u <= closed.eps_minus.u();
        let solves = (x + t.ln()).abs() < 1e-9;
        if !(inside && solves && conn.sign_changes == 1) {
            violations += 1;
        }
        if checked % 50 == 0 {
            let run = interior_sequence(&fam, &[], m..=m + 10).unwrap();
            ledger.sequences.push(run);
        }
    }
    (
        violations == 0,
        format!("{checked} cases, {violations} violations ({skipped} draws outside the envelope skipped)"),
    )
}

fn c5_monotone(ledger: &Ledger) -> (bool, String) {
    let bad: usize = ledger.sequences.iter().map(strictly_increasing_u).sum();
    let pairs: usize = ledger
        .sequences
        .iter()
        .map(|s| s.len().saturating_sub(1))
        .sum();
    (
        bad == 0 && pairs > 0,
        format!(
            "{} sequences, {pairs} consecutive pairs, {bad} violations",
            ledger.sequences.len()
        ),
    )
}

const ORACLE_BITS: usize = 256;
const RM: RoundingMode = RoundingMode::ToEven;

/// Root of `Δ^m(ε) = T` for `Δ(x) = ε + x^λ`, by bisection on the real line
/// in 256-bit arithmetic; returns `-log ε`.
fn oracle_u(lambda: f64, t: f64, m: usize, cc: &mut Consts) -> f64 {
    let p = ORACLE_BITS;
    let lam = BigFloat::from_f64(lambda, p);
    let target = BigFloat::from_f64(t, p);
    let psi_positive = |eps: &BigFloat, cc: &mut Consts| {
        let mut x = eps.clone();
        for _ in 0..m {
            let pow = x.ln(p, RM, cc).mul(&lam, p, RM).exp(p, RM, cc);
            x = eps.add(&pow, p, RM);
        }
        x.sub(&target, p, RM).is_positive()
    };
    // Δ^m is increasing in ε; the root lies in (e^{-10^5}, T]
    let mut lo = BigFloat::from_f64(-1e5, p).exp(p, RM, cc);
    let mut hi = target.clone();
    let tol = BigFloat::from_f64(1e-15, p);
    loop {
        let mid = lo.mul(&hi, p, RM).sqrt(p, RM);
        if psi_positive(&mid, cc) {
            hi = mid;
        } else {
            lo = mid;
        }
        let width = hi.div(&lo, p, RM).ln(p, RM, cc);
        if width.cmp(&tol).is_some_and(|c| c < 0) {
            break;
        }
    }
    let u = lo.mul(&hi, p, RM).sqrt(p, RM).ln(p, RM, cc).neg();
    u.to_string().parse().expect("decimal rendering")
}

fn c6_oracle() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut cc = Consts::new().unwrap();
    let (mut cases, mut worst) = (0, 0.0f64);
    while cases < CASES_ORACLE {
        let lambda = rng.gen_range(0.5..0.8);
        let t = rng.gen_range(0.05..0.3);
        let p = loop_model(&[("L", lambda)], &["L"]);
        let fam = UnfoldingFamily::new(ParamPolycycle::constant(&p), Target::Constant(t));
        let Ok(slice) = fam.slice(&[]) else {
            continue;
        };
        let first = slice.first_index().unwrap();
        if first > 12 {
            continue;
        }
        let m = rng.gen_range(first..=12);
        let ours = slice.solve(m).unwrap().eps.u();
        let theirs = oracle_u(lambda, t, m, &mut cc);
        worst = worst.max((ours - theirs).abs());
        cases += 1;
    }
    (
        worst < ORACLE_U_ABS,
        format!("{cases} cases, max |Δu| = {worst:.2e}"),
    )
}

fn c7_progressions() -> (bool, String) {
    let depth = 10_000usize;
    let b = LevelSet::progression(3.0, 0.0, depth + 10);
    let a = LevelSet::progression(2.0, 0.0, 2 * depth);
    let level = 3.0 * depth as f64;
    let exact = relative_density_at_level(&a, &b, level).unwrap();
    // the same sets with bounded offsets
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let noisy = |delta: f64, n: usize, rng: &mut ChaCha8Rng| {
        LevelSet::new(
            (1..=n)
                .map(|k| delta * k as f64 + rng.gen_range(-1.0..1.0))
                .collect(),
        )
    };
    let na = noisy(2.0, 2 * depth, &mut rng);
    let nb = noisy(3.0, depth + 10, &mut rng);
    let perturbed = relative_density_at_level(&na, &nb, level).unwrap();
    let rel = (exact / 1.5 - 1.0).abs().max((perturbed / 1.5 - 1.0).abs());
    (
        rel < PROGRESSION_REL,
        format!("exact {exact:.6}, offset {perturbed:.6} vs 1.5 at level {level}"),
    )
}

fn c8_realization() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let grid: Vec<Vec<f64>> = (0..50)
        .map(|k| vec![-0.1 + 0.2 * k as f64 / 49.0])
        .collect();
    let (mut worst_trip, mut worst_norm, mut germs) = (0.0f64, 0.0f64, 0);
    while germs < 20 {
        let a = rng.gen_range(0.05..1.0);
        let b = a + rng.gen_range(0.05..1.0);
        let (g1, g2) = (rng.gen_range(-0.5..0.5), rng.gen_range(-2.0..2.0));
        let values: Vec<Vec<f64>> = grid
            .iter()
            .map(|e| vec![b + g1 * e[0] + g2 * e[0] * e[0]])
            .collect();
        // keep the φ_1 < φ_2 case
        if grid
            .iter()
            .zip(&values)
            .any(|(e, v)| !(a + e[0] > 0.0 && a + e[0] < v[0]))
        {
            continue;
        }
        germs += 1;
        let germ = GermSamples {
            grid: grid.clone(),
            values,
            base_point: vec![a],
            base_value: vec![b],
        };
        let s = rng.gen_range(0.2..3.0);
        let one = simple_diagram(&realize_diagram(&germ, s).unwrap(), &grid, 1).unwrap();
        let two = simple_diagram(&realize_diagram(&germ, 2.0 * s).unwrap(), &grid, 1).unwrap();
        for (k, (p, q)) in one.iter().zip(&two).enumerate() {
            for ((x, y), t) in p.phi.iter().zip(&q.phi).zip(germ.phi_at(k)) {
                worst_trip = worst_trip.max((x - t).abs());
                worst_norm = worst_norm.max((x - y).abs());
            }
        }
    }
    (
        worst_trip < ROUND_TRIP_ABS && worst_norm < ROUND_TRIP_ABS,
        format!("{germs} germs: round trip {worst_trip:.1e}, S vs 2S {worst_norm:.1e}"),
    )
}

fn c9_functional_invariant(ledger: &mut Ledger) -> (bool, String) {
    let grid: Vec<Vec<f64>> = (0..5).map(|k| vec![-0.1 + 0.05 * k as f64]).collect();
    let germ = GermSamples {
        grid: grid.clone(),
        values: grid.iter().map(|e| vec![0.5 + 0.3 * e[0]]).collect(),
        base_point: vec![0.25],
        base_value: vec![0.5],
    };
    let chain = realize_diagram(&germ, 1.0).unwrap();
    let family =
        |p: ParamPolycycle| UnfoldingFamily::new(p, Target::Constant(0.01)).with_eps_max(1e-6);
    let interior = family(chain.interior_polycycle(2).unwrap());
    let exterior = family(chain.exterior_polycycle());
    let mut worst = 0.0f64;
    for eta in &grid {
        let si = interior_sequence(&interior, eta, 20..=60).unwrap();
        let se = exterior_sequence(&exterior, eta, 20..=60).unwrap();
        let fitted = slope(&si) / slope(&se);
        let want = 0.5 + 0.3 * eta[0];
        worst = worst.max((fitted / want - 1.0).abs());
        ledger.sequences.extend([si, se]);
    }
    (
        worst < DIAGRAM_REL,
        format!("5 grid points, max rel err of fitted φ_2 {worst:.2e}"),
    )
}

fn c10_ode() -> (bool, String) {
    let b0 = Beta::default();
    // linear saddle: Δ = x0^{λ+kε}, z = x0^{λ+kε}, w = k log(x0) Δ
    let lin = LinearField {
        keps: 0.5,
        ..LinearField::constant(0.7)
    };
    let beta = Beta::new(vec![], 0.02);
    let mut lin_err = 0.0f64;
    for x0 in [1e-6, 1e-4, 1e-2, 0.1] {
        let v = dulac_variational(&lin, x0, &beta).unwrap();
        let d = x0.powf(0.71);
        for (got, want) in [(v.delta, d), (v.z, d), (v.w, 0.5 * x0.ln() * d)] {
            lin_err = lin_err.max((got / want - 1.0).abs());
        }
    }

    let field = LinearField {
        lambda: 0.7,
        kx: 0.1,
        ky: 0.1,
        keps: 0.2,
    };
    let beta = Beta::new(vec![], 0.01);
    let fine = Tolerance::default().with_rtol(1e-14);
    let h = 1e-6;
    let mut fd_err = 0.0f64;
    for x0 in log_grid(1e-6, 1e-2, 9) {
        let v = dulac_variational(&field, x0, &beta).unwrap();
        let z = (dulac_ode_from(&field, x0, 1.0 + h, &beta, fine).unwrap()
            - dulac_ode_from(&field, x0, 1.0 - h, &beta, fine).unwrap())
            / (2.0 * h);
        let up = Beta::new(vec![], 0.01 + h);
        let down = Beta::new(vec![], 0.01 - h);
        let w = (dulac_ode_from(&field, x0, 1.0, &up, fine).unwrap()
            - dulac_ode_from(&field, x0, 1.0, &down, fine).unwrap())
            / (2.0 * h);
        fd_err = fd_err.max((v.z / z - 1.0).abs()).max((v.w / w - 1.0).abs());
    }

    let theta = LinearField { keps: 0.0, ..field };
    let rows = sweep(&theta, &b0, &log_grid(1e-6, 1e-2, 41)).unwrap();
    let (lo, hi) = rows.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), r| {
        (lo.min(r.ratio), hi.max(r.ratio))
    });
    let band = hi / lo;
    (
        lin_err < LINEAR_ODE_REL && fd_err < FD_REL && band < THETA_BAND_RATIO,
        format!("linear {lin_err:.1e}, finite differences {fd_err:.1e}, Θ band max/min {band:.4}"),
    )
}

#[test]
fn acceptance() {
    let mut ledger = Ledger::default();
    let secs = Duration::from_secs;
    let outcomes = vec![
        criterion(1, "interior slope", secs(10), || {
            c1_interior_slope(&mut ledger)
        }),
        criterion(2, "exterior slope", secs(10), || {
            c2_exterior_slope(&mut ledger)
        }),
        criterion(3, "relative density", secs(30), || c3_density(&mut ledger)),
        criterion(4, "bracketing and uniqueness", secs(300), || {
            c4_bracketing(&mut ledger)
        }),
        criterion(9, "functional invariant", secs(300), || {
            c9_functional_invariant(&mut ledger)
        }),
        criterion(6, "oracle equivalence", secs(300), c6_oracle),
        criterion(7, "quasi-progression density", secs(60), c7_progressions),
        criterion(8, "realization round trip", secs(60), c8_realization),
        criterion(10, "ODE Dulac checks", secs(60), c10_ode),
    ];
    let mut outcomes = outcomes;
    outcomes.push(criterion(5, "monotonicity", secs(60), || {
        c5_monotone(&ledger)
    }));
    outcomes.sort_by_key(|o| o.id);

    for o in &outcomes {
        println!(
            "criterion {:>2} {:<28} {}  {}",
            o.id,
            o.name,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    let total: Duration = outcomes.iter().map(|o| o.elapsed).sum();
    println!("total {:.2} s", total.as_secs_f64());
    let failed: Vec<usize> = outcomes.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
