//! The built-in check battery behind `dislab selftest`.
//!
//! Every check is deterministic for a given seed and its artifacts are written
//! in a fixed order, so two runs with the same seed produce identical files.
//! Timings are kept out of the artifacts.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::aep::{self, TypicalSetSpec, DEFAULT_TYPE_BUDGET};
use crate::error::{Error, Result};
use crate::fibers::{
    self, Disintegration, GroupQuotient, Polar, ProductProjection,
};
use crate::measures::{FiniteGroup, GroupTable, Point, ReferenceMeasure};
use crate::prob::{self, ProbMeasure};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: Value,
    #[serde(skip)]
    pub elapsed: Duration,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SelftestReport {
    pub seed: u64,
    pub checks: Vec<Check>,
    pub passed: bool,
}

/// A named artifact produced by a check.
struct Artifact {
    file: &'static str,
    contents: String,
}

type CheckFn = fn(u64) -> Result<(bool, Value, Vec<Artifact>)>;

const CHECKS: &[(&str, CheckFn)] = &[
    ("discrete-entropy", discrete_entropy),
    ("kl-positivity", kl_positivity),
    ("affine-covariance", affine_covariance),
    ("chain-rule-discrete", chain_rule_discrete),
    ("chain-rule-haar", chain_rule_haar),
    ("chain-rule-polar", chain_rule_polar),
    ("aep-exact-bounds", aep_exact_bounds),
    ("aep-monte-carlo", aep_monte_carlo),
    ("slice-ratio", slice_ratio),
    ("corrupted-group-table", corrupted_group_table),
];

/// Runs every check; writes `selftest.json` and the per-check tables into
/// `out_dir` when given. `progress` sees each check as it finishes.
pub fn run(seed: u64, out_dir: Option<&Path>, mut progress: impl FnMut(&Check)) -> Result<SelftestReport> {
    let mut checks = Vec::new();
    let mut artifacts = Vec::new();
    for (name, f) in CHECKS {
        let start = Instant::now();
        let (passed, detail) = match f(seed) {
            Ok((passed, detail, mut files)) => {
                artifacts.append(&mut files);
                (passed, detail)
            }
            Err(e) => (false, json!({ "error": e.to_string() })),
        };
        let check = Check {
            name: name.to_string(),
            passed,
            detail,
            elapsed: start.elapsed(),
        };
        progress(&check);
        checks.push(check);
    }
    let passed = checks.iter().all(|c| c.passed);
    let report = SelftestReport {
        seed,
        checks,
        passed,
    };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        for a in &artifacts {
            std::fs::write(dir.join(a.file), &a.contents)?;
        }
        let mut text = serde_json::to_string_pretty(&report)?;
        text.push('\n');
        std::fs::write(dir.join("selftest.json"), text)?;
    }
    Ok(report)
}

fn discrete_entropy(_: u64) -> Result<(bool, Value, Vec<Artifact>)> {
    let m = ReferenceMeasure::counting(8)?;
    let s = prob::entropy(&ProbMeasure::uniform(m.clone())?)?.value;
    let s2 = prob::entropy(&ProbMeasure::uniform(m.scaled(2.0)?)?)?.value;
    let ok = (s - 8f64.ln()).abs() <= 1e-12 && (s2 - 16f64.ln()).abs() <= 1e-12;
    Ok((ok, json!({ "counting": s, "scaled_by_2": s2 }), vec![]))
}

fn random_simplex(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|x| x / total).collect()
}

fn kl_positivity(seed: u64) -> Result<(bool, Value, Vec<Artifact>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = ReferenceMeasure::counting(16)?;
    let mut min = f64::INFINITY;
    for _ in 0..1000 {
        let mut p = random_simplex(&mut rng, 16);
        // Knock out a few atoms so the support varies.
        for _ in 0..rng.random_range(0..4) {
            p[rng.random_range(0..16)] = 0.0;
        }
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= total);
        let q = random_simplex(&mut rng, 16);
        let kl = prob::kl_divergence(&ProbMeasure::from_masses(m.clone(), &p)?, &ProbMeasure::from_masses(m.clone(), &q)?)?;
        min = min.min(kl);
    }
    Ok((min >= -1e-12, json!({ "pairs": 1000, "min_kl": min }), vec![]))
}

fn affine_covariance(_: u64) -> Result<(bool, Value, Vec<Artifact>)> {
    let line = ProbMeasure::uniform(ReferenceMeasure::interval(0.0, 1.0)?)?;
    let s0 = prob::entropy(&line)?.value;
    let doubled = prob::affine_pushforward(&line, &DMatrix::from_element(1, 1, 2.0), &[0.0])?;
    let shift = prob::entropy(&doubled)?.value - s0;

    let plane = ProbMeasure::new(
        ReferenceMeasure::lebesgue_box(vec![-2.0, -2.0], vec![2.0, 2.0])?,
        crate::prob::DensitySpec::TruncatedGaussian { mean: 0.3, std: 0.8 }
            .build(&ReferenceMeasure::lebesgue_box(vec![-2.0, -2.0], vec![2.0, 2.0])?)?,
    )?;
    let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 1.0 / 3.0]));
    let p0 = prob::entropy(&plane)?.value;
    let p1 = prob::entropy(&prob::affine_pushforward(&plane, &a, &[0.5, -0.25])?)?.value;
    let ok = (shift - 2f64.ln()).abs() <= 1e-6 && (p1 - p0).abs() <= 1e-5;
    Ok((ok, json!({ "doubling_shift": shift, "area_preserving_shift": p1 - p0 }), vec![]))
}

fn chain_rule_discrete(_: u64) -> Result<(bool, Value, Vec<Artifact>)> {
    let total = ReferenceMeasure::product(ReferenceMeasure::counting(2)?, ReferenceMeasure::counting(2)?);
    let masses = [0.4, 0.1, 0.1, 0.4];
    let rho = ProbMeasure::from_masses(total.clone(), &masses)?;
    let d = Disintegration::ProductProjection(ProductProjection::new(total)?);
    let r = fibers::chain_rule_report(&rho, &d)?;
    // ρ(B) = Σ_t P(T=t) ρ_t(B) for all sixteen subsets B.
    let atoms = rho.atom_masses().expect("atomic");
    let marginal = fibers::pushforward(&rho, &d)?.atom_masses().expect("atomic");
    let mut worst = 0.0f64;
    for b in 0u32..16 {
        let in_b = |p: &Point| atoms.iter().position(|(q, _)| q == p).is_some_and(|i| b >> i & 1 == 1);
        let direct: f64 = atoms.iter().filter(|(p, _)| in_b(p)).map(|(_, m)| m).sum();
        let mut rebuilt = 0.0;
        for (t, pt) in &marginal {
            let fc = fibers::fiber_conditional(&rho, &d, t)?;
            let pb: f64 = fc.conditional.atom_masses().expect("atomic").iter().filter(|(p, _)| in_b(p)).map(|(_, m)| m).sum();
            rebuilt += pt * pb;
        }
        worst = worst.max((rebuilt - direct).abs());
    }
    let ok = r.discrepancy <= 1e-12 && worst <= 1e-15;
    let csv = r.fiber_csv();
    Ok((
        ok,
        json!({ "discrepancy": r.discrepancy, "reconstruction_error": worst, "conditional": r.conditional }),
        vec![Artifact { file: "chain_rule_discrete_fibers.csv", contents: csv }],
    ))
}

fn chain_rule_haar(_: u64) -> Result<(bool, Value, Vec<Artifact>)> {
    let g = Arc::new(FiniteGroup::cyclic(6)?);
    let d = GroupQuotient::canonical(g, &[0, 3], 1.0, 1.0)?;
    let alt = d.clone().with_representatives(vec![3, 4, 5])?;
    let d = Disintegration::GroupQuotient(d);
    let rho = ProbMeasure::from_masses(d.total().clone(), &[0.05, 0.10, 0.15, 0.20, 0.25, 0.25])?;
    let r = fibers::chain_rule_report(&rho, &d)?;
    let r_alt = fibers::chain_rule_report(&rho, &Disintegration::GroupQuotient(alt))?;
    let agreement = (r.conditional - r_alt.conditional).abs();
    let ok = r.discrepancy <= 1e-12 && r_alt.discrepancy <= 1e-12 && agreement <= 1e-12;
    Ok((
        ok,
        json!({ "discrepancy": r.discrepancy, "representative_agreement": agreement, "report": r }),
        vec![Artifact { file: "chain_rule_haar_fibers.csv", contents: r.fiber_csv() }],
    ))
}

fn chain_rule_polar(_: u64) -> Result<(bool, Value, Vec<Artifact>)> {
    let rho = ProbMeasure::uniform(ReferenceMeasure::annulus(1.0, 2.0)?)?;
    let d = Disintegration::Polar(Polar::new(rho.reference().clone())?);
    let r = fibers::chain_rule_report(&rho, &d)?;
    let deformed = fibers::deformed_chain_rule_comparison(&rho)?;
    let entropy_error = (r.total - (3.0 * PI).ln()).abs();
    let ok = entropy_error <= 1e-4 && r.discrepancy <= 1e-4 && deformed.passed;
    Ok((
        ok,
        json!({
            "total": r.total,
            "entropy_error": entropy_error,
            "discrepancy": r.discrepancy,
            "deformed": deformed,
        }),
        vec![],
    ))
}

fn bernoulli(p: f64) -> Result<ProbMeasure> {
    ProbMeasure::from_masses(ReferenceMeasure::counting(2)?, &[1.0 - p, p])
}

fn aep_exact_bounds(_: u64) -> Result<(bool, Value, Vec<Artifact>)> {
    let rho = bernoulli(0.3)?;
    let sweep = aep::rate_sweep(
        &rho,
        &[4, 8, 16, 24],
        &[0.2],
        &aep::AepOptions {
            mode: aep::VolumeMode::Exact,
            ..Default::default()
        },
    )?;
    let n0 = sweep.premise_from[0].1;
    let ok = sweep.passed && sweep.rate_band_ok && n0.is_some_and(|n| n <= 24);
    let csv = sweep.to_csv();
    Ok((
        ok,
        json!({ "premise_from": n0, "sweep": sweep }),
        vec![Artifact { file: "aep_rates.csv", contents: csv }],
    ))
}

fn aep_monte_carlo(seed: u64) -> Result<(bool, Value, Vec<Artifact>)> {
    let rho = bernoulli(0.3)?;
    let spec = TypicalSetSpec::new(&rho, 16, 0.2)?;
    let exact = aep::exact_typical(&spec, 0.1, DEFAULT_TYPE_BUDGET)?;
    let mc = aep::monte_carlo_typical(&spec, 0.1, 100_000, seed)?;
    let z = (mc.volume - exact.volume).abs() / mc.volume_stderr;
    let ok = z <= 3.0;
    Ok((ok, json!({ "exact": exact.volume, "monte_carlo": mc, "z": z }), vec![]))
}

fn slice_ratio(_: u64) -> Result<(bool, Value, Vec<Artifact>)> {
    let total = ReferenceMeasure::product(ReferenceMeasure::counting(2)?, ReferenceMeasure::counting(2)?);
    let d = Disintegration::ProductProjection(ProductProjection::new(total.clone())?);
    let independent = ProbMeasure::from_masses(total.clone(), &[0.35, 0.35, 0.15, 0.15])?;
    let ind = aep::slice_ratio(&independent, &d, 16, 0.25, DEFAULT_TYPE_BUDGET)?;
    let ind_ok = ind
        .log_ratio_per_n
        .is_some_and(|r| (r - 2f64.ln()).abs() <= 0.25);

    let correlated = ProbMeasure::from_masses(total, &[0.4, 0.1, 0.1, 0.4])?;
    let mut rows = vec![ind.clone()];
    let mut gaps = Vec::new();
    for n in [8, 16, 24] {
        let r = aep::slice_ratio(&correlated, &d, n, 0.1, DEFAULT_TYPE_BUDGET)?;
        gaps.push(r.gap().unwrap_or(f64::INFINITY));
        rows.push(r);
    }
    let monotone = gaps.windows(2).all(|w| w[1] < w[0]);
    let routes = rows.iter().all(|r| r.route_discrepancy <= 1e-12);
    Ok((
        ind_ok && monotone && routes,
        json!({ "independent": ind, "correlated_delta": 0.1, "correlated_gaps": gaps }),
        vec![Artifact { file: "slice_ratio.csv", contents: aep::slice_csv(&rows) }],
    ))
}

fn corrupted_group_table(_: u64) -> Result<(bool, Value, Vec<Artifact>)> {
    let table = GroupTable {
        order: 3,
        identity: 0,
        mul: vec![vec![0, 1, 2], vec![1, 1, 0], vec![2, 0, 1]],
    };
    match FiniteGroup::from_table(&table) {
        Err(e @ Error::InvalidGroup(_)) => {
            let msg = e.to_string();
            Ok((msg.contains("Latin"), json!({ "diagnostic": msg }), vec![]))
        }
        other => Ok((false, json!({ "unexpected": format!("{other:?}") }), vec![])),
    }
}
