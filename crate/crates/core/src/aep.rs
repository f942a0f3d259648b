//! Typical sets and the asymptotic equipartition property.
//!
//! `A = {x ∈ E^n : |-(1/n) Σ ln f(x_i) - S| ≤ δ}` for a law `ρ = f μ` with
//! entropy `S`. Its probability tends to one while `μ^{⊗n}(A)` is pinched
//! between `(1-ε) e^{n(S-δ)}` and `e^{n(S+δ)}`.
//!
//! Small atomic sources are handled exactly by enumerating empirical types;
//! anything samplable goes through the importance estimator
//! `μ^{⊗n}(A) = E_{ρ^{⊗n}}[χ_A ∏ f(x_i)^{-1}]`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fibers::{chain_rule_report, pushforward, Disintegration};
use crate::measures::Point;
use crate::numeric::{multinomial, CompensatedSum};
use crate::prob::{entropy, mean_and_sd, ProbMeasure, Sampler};
use crate::report::{csv, fmt17};

/// Default cap on enumerated type classes.
pub const DEFAULT_TYPE_BUDGET: u128 = 5_000_000;
/// Smallest accepted Monte Carlo sample count.
pub const MIN_SAMPLES: usize = 1_000;
/// Draws per Monte Carlo batch; batch `b` uses seed `seed + b`.
pub const BATCH: usize = 1_024;

/// Block length, band half-width and the source with its entropy.
#[derive(Clone, Copy, Debug)]
pub struct TypicalSetSpec<'a> {
    pub source: &'a ProbMeasure,
    pub n: usize,
    pub delta: f64,
    pub entropy: f64,
}

impl<'a> TypicalSetSpec<'a> {
    /// Computes the entropy of `source` once.
    pub fn new(source: &'a ProbMeasure, n: usize, delta: f64) -> Result<Self> {
        let s = entropy(source)?.value;
        Self::with_entropy(source, n, delta, s)
    }

    pub fn with_entropy(source: &'a ProbMeasure, n: usize, delta: f64, entropy: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("block length must be positive".into()));
        }
        if !(delta > 0.0) {
            return Err(Error::InvalidArgument(format!("band half-width must be positive, got {delta}")));
        }
        Ok(Self {
            source,
            n,
            delta,
            entropy,
        })
    }

    /// The one comparison shared by every membership decision.
    fn in_band(&self, neg_log_density: f64) -> bool {
        (neg_log_density / self.n as f64 - self.entropy).abs() <= self.delta
    }
}

/// Membership of a block; any zero-density coordinate makes it atypical.
pub fn is_typical(x: &[Point], spec: &TypicalSetSpec) -> bool {
    if x.len() != spec.n {
        return false;
    }
    let mut sum = CompensatedSum::new();
    for p in x {
        let f = spec.source.eval(p);
        if !(f > 0.0) {
            return false;
        }
        sum.add(-f.ln());
    }
    spec.in_band(sum.value())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VolumeMethod {
    Exact,
    MonteCarlo,
}

/// Estimates of `P(A)` and `μ^{⊗n}(A)` with the bound checks.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TypicalSetReport {
    pub n: usize,
    pub delta: f64,
    pub entropy: f64,
    pub epsilon: f64,
    pub method: VolumeMethod,
    pub prob_estimate: f64,
    pub prob_stderr: f64,
    pub volume: f64,
    pub volume_stderr: f64,
    /// `volume_stderr / volume`, zero in exact mode.
    pub volume_relative_error: f64,
    /// `(1/n) ln volume`; absent when the volume is zero.
    pub rate: Option<f64>,
    /// `e^{n(S+δ)}`.
    pub upper_bound: f64,
    /// `(1-ε) e^{n(S-δ)}`.
    pub lower_bound: f64,
    /// Allowance on the checks: zero in exact mode, three standard errors otherwise.
    pub slack: f64,
    pub upper_ok: bool,
    /// `P(A) ≥ 1 - ε`.
    pub premise_ok: bool,
    /// Lower bound check, only meaningful when the premise holds.
    pub lower_ok: Option<bool>,
    /// `rate ∈ [S-δ, S+δ]`, only when `P(A) > 0`.
    pub rate_ok: Option<bool>,
    pub type_classes: Option<u64>,
    pub typical_classes: Option<u64>,
    pub samples: Option<usize>,
    pub typical_hits: Option<usize>,
    /// No draw was typical; the volume is only known to be nonnegative.
    pub zero_hits: bool,
}

impl TypicalSetReport {
    /// The guaranteed bounds: upper always, lower once the premise holds.
    /// The rate band is a diagnostic; at small `n` with small `P(A)` the rate
    /// can legitimately fall below `S - δ`.
    pub fn checks_passed(&self) -> bool {
        self.upper_ok && self.lower_ok.unwrap_or(true)
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        spec: &TypicalSetSpec,
        epsilon: f64,
        method: VolumeMethod,
        (prob, prob_se): (f64, f64),
        (volume, volume_se): (f64, f64),
        zero_hits: bool,
    ) -> Self {
        let n = spec.n as f64;
        let (s, delta) = (spec.entropy, spec.delta);
        let rate = (volume > 0.0).then(|| volume.ln() / n);
        let rel = if volume > 0.0 { volume_se / volume } else { 0.0 };
        let (slack, prob_slack) = match method {
            VolumeMethod::Exact => (0.0, 0.0),
            VolumeMethod::MonteCarlo => (3.0 * rel, 3.0 * prob_se),
        };
        // Checks in log space: e^{n(S+δ)} overflows long before the volume does.
        let upper_ok = rate.map_or(true, |r| r <= s + delta + slack / n);
        let premise_ok = prob + prob_slack >= 1.0 - epsilon;
        let lower_ok = premise_ok.then(|| {
            rate.is_some_and(|r| r >= s - delta + (1.0 - epsilon).ln() / n - slack / n)
        });
        let rate_ok = (prob > 0.0 && !zero_hits)
            .then(|| rate.is_some_and(|r| (r - s).abs() <= delta + slack / n));
        Self {
            n: spec.n,
            delta,
            entropy: s,
            epsilon,
            method,
            prob_estimate: prob,
            prob_stderr: prob_se,
            volume,
            volume_stderr: volume_se,
            volume_relative_error: rel,
            rate,
            upper_bound: (n * (s + delta)).exp(),
            lower_bound: (1.0 - epsilon) * (n * (s - delta)).exp(),
            slack,
            upper_ok,
            premise_ok,
            lower_ok,
            rate_ok,
            type_classes: None,
            typical_classes: None,
            samples: None,
            typical_hits: None,
            zero_hits,
        }
    }
}

/// An atom of the enumerated alphabet.
#[derive(Clone, Debug)]
struct Letter {
    /// `μ({a})`.
    weight: f64,
    /// `-ln f(a)`.
    neg_log_density: f64,
}

fn alphabet(rho: &ProbMeasure) -> Result<Vec<Letter>> {
    let atoms = rho.reference().atoms_with_mass().ok_or_else(|| {
        Error::InvalidMeasure("exact enumeration needs an atomic reference".into())
    })?;
    // Zero-density atoms never occur in a typical block.
    Ok(atoms
        .into_iter()
        .filter_map(|(p, w)| {
            let f = rho.eval(&p);
            (f > 0.0).then(|| Letter {
                weight: w,
                neg_log_density: -f.ln(),
            })
        })
        .collect())
}

/// Number of compositions of `n` into `k` parts, `C(n+k-1, k-1)`.
fn type_count(n: usize, k: usize) -> u128 {
    if k == 0 {
        return u128::from(n == 0);
    }
    let mut c: u128 = 1;
    for i in 1..k as u128 {
        c = c * (n as u128 + i) / i;
    }
    c
}

fn check_budget(n: usize, k: usize, budget: u128) -> Result<u128> {
    let classes = type_count(n, k);
    if classes > budget {
        return Err(Error::Budget { classes, budget });
    }
    Ok(classes)
}

/// Calls `visit` on every composition of `n` into `k` parts, in lexicographic
/// order with the first part fixed to `first`.
fn compositions_with_first(n: usize, k: usize, first: usize, visit: &mut impl FnMut(&[usize])) {
    fn rec(rest: usize, slots: &mut [usize], at: usize, visit: &mut impl FnMut(&[usize])) {
        if at + 1 == slots.len() {
            slots[at] = rest;
            visit(slots);
            return;
        }
        for c in 0..=rest {
            slots[at] = c;
            rec(rest - c, slots, at + 1, visit);
        }
    }
    let mut slots = vec![0; k];
    slots[0] = first;
    if k == 1 {
        if first == n {
            visit(&slots);
        }
        return;
    }
    rec(n - first, &mut slots, 1, visit);
}

/// `-Σ c_a ln f(a)` for a type.
fn type_neg_log_density(counts: &[usize], letters: &[Letter]) -> f64 {
    let mut sum = CompensatedSum::new();
    for (&c, l) in counts.iter().zip(letters) {
        sum.add(c as f64 * l.neg_log_density);
    }
    sum.value()
}

/// `∏ x_a^{c_a}`.
fn type_power(counts: &[usize], values: impl Iterator<Item = f64>) -> f64 {
    counts
        .iter()
        .zip(values)
        .map(|(&c, x)| x.powi(c as i32))
        .product()
}

#[derive(Default)]
struct TypeSums {
    volume: CompensatedSum,
    prob: CompensatedSum,
    typical: u64,
}

/// Exact `P(A)` and `μ^{⊗n}(A)` by enumerating empirical types. Work is split
/// by the count of the first letter and merged in that order.
pub fn exact_typical(spec: &TypicalSetSpec, epsilon: f64, budget: u128) -> Result<TypicalSetReport> {
    let letters = alphabet(spec.source)?;
    let k = letters.len();
    let classes = check_budget(spec.n, k, budget)?;
    let n = spec.n;
    let parts: Vec<TypeSums> = (0..=n)
        .into_par_iter()
        .map(|first| {
            let mut sums = TypeSums::default();
            compositions_with_first(n, k, first, &mut |c| {
                if !spec.in_band(type_neg_log_density(c, &letters)) {
                    return;
                }
                let count = multinomial(c);
                sums.volume
                    .add(count * type_power(c, letters.iter().map(|l| l.weight)));
                sums.prob.add(
                    count * type_power(c, letters.iter().map(|l| l.weight * (-l.neg_log_density).exp())),
                );
                sums.typical += 1;
            });
            sums
        })
        .collect();
    let (mut volume, mut prob, mut typical) = (CompensatedSum::new(), CompensatedSum::new(), 0);
    for p in parts {
        volume.add(p.volume.value());
        prob.add(p.prob.value());
        typical += p.typical;
    }
    let volume = volume.value();
    if !volume.is_finite() {
        return Err(Error::Divergent("typical-set volume overflows".into()));
    }
    let mut report = TypicalSetReport::assemble(
        spec,
        epsilon,
        VolumeMethod::Exact,
        (prob.value().min(1.0), 0.0),
        (volume, 0.0),
        typical == 0,
    );
    report.type_classes = Some(classes as u64);
    report.typical_classes = Some(typical);
    Ok(report)
}

/// Importance-sampling estimates from `samples` seeded draws of `ρ^{⊗n}`.
/// The volume estimator averages `χ_A ∏ f^{-1}` over all draws, atypical
/// ones contributing zero. Batches run in parallel and merge in batch order,
/// so results do not depend on the worker count.
pub fn monte_carlo_typical(
    spec: &TypicalSetSpec,
    epsilon: f64,
    samples: usize,
    seed: u64,
) -> Result<TypicalSetReport> {
    if samples < MIN_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_SAMPLES} samples, got {samples}"
        )));
    }
    let sampler = Sampler::new(spec.source)?;
    let batches = samples.div_ceil(BATCH);
    let weights: Vec<Vec<f64>> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(b as u64));
            let size = BATCH.min(samples - b * BATCH);
            let mut out = Vec::with_capacity(size);
            for _ in 0..size {
                let block = sampler.draw(&mut rng, spec.n)?;
                out.push(if is_typical(&block, spec) {
                    let mut sum = CompensatedSum::new();
                    for p in &block {
                        sum.add(-spec.source.eval(p).ln());
                    }
                    sum.value().exp()
                } else {
                    0.0
                });
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let weights: Vec<f64> = weights.into_iter().flatten().collect();
    let hits = weights.iter().filter(|&&w| w > 0.0).count();
    let total = weights.len() as f64;
    let p = hits as f64 / total;
    let (volume, sd) = mean_and_sd(&weights);
    let mut report = TypicalSetReport::assemble(
        spec,
        epsilon,
        VolumeMethod::MonteCarlo,
        (p, (p * (1.0 - p) / total).sqrt()),
        (volume, sd / total.sqrt()),
        hits == 0,
    );
    report.samples = Some(weights.len());
    report.typical_hits = Some(hits);
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum VolumeMode {
    Exact,
    MonteCarlo,
    /// Exact when the source is atomic and within budget.
    Auto,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AepOptions {
    pub epsilon: f64,
    pub mode: VolumeMode,
    pub samples: usize,
    pub seed: Option<u64>,
    pub type_budget: u128,
}

impl Default for AepOptions {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            mode: VolumeMode::Auto,
            samples: 100_000,
            seed: None,
            type_budget: DEFAULT_TYPE_BUDGET,
        }
    }
}

/// One report per `(δ, n)`, plus where the premise `P(A) ≥ 1-ε` settles.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateSweep {
    pub entropy: f64,
    pub rows: Vec<TypicalSetReport>,
    /// Per δ, the smallest tested `n` from which the premise holds at every
    /// larger tested `n`.
    pub premise_from: Vec<(f64, Option<usize>)>,
    pub passed: bool,
    /// Every row with `P(A) > 0` has its rate within `[S-δ, S+δ]`.
    pub rate_band_ok: bool,
}

impl RateSweep {
    /// Columns `n,delta,rate,S,upper,lower,prob`; `upper`/`lower` are `S ± δ`.
    pub fn to_csv(&self) -> String {
        csv(
            &["n", "delta", "rate", "S", "upper", "lower", "prob"],
            self.rows.iter().map(|r| {
                vec![
                    r.n.to_string(),
                    fmt17(r.delta),
                    r.rate.map_or_else(String::new, fmt17),
                    fmt17(r.entropy),
                    fmt17(r.entropy + r.delta),
                    fmt17(r.entropy - r.delta),
                    fmt17(r.prob_estimate),
                ]
            }),
        )
    }
}

fn typical_report(spec: &TypicalSetSpec, opts: &AepOptions) -> Result<TypicalSetReport> {
    let mc = || {
        let seed = opts
            .seed
            .ok_or_else(|| Error::InvalidArgument("Monte Carlo mode needs a seed".into()))?;
        monte_carlo_typical(spec, opts.epsilon, opts.samples, seed)
    };
    match opts.mode {
        VolumeMode::Exact => exact_typical(spec, opts.epsilon, opts.type_budget),
        VolumeMode::MonteCarlo => mc(),
        VolumeMode::Auto => match exact_typical(spec, opts.epsilon, opts.type_budget) {
            Err(Error::Budget { .. } | Error::InvalidMeasure(_)) => mc(),
            other => other,
        },
    }
}

pub fn rate_sweep(rho: &ProbMeasure, n_list: &[usize], delta_list: &[f64], opts: &AepOptions) -> Result<RateSweep> {
    if n_list.is_empty() || delta_list.is_empty() {
        return Err(Error::InvalidArgument("n-list and δ-list must be nonempty".into()));
    }
    let s = entropy(rho)?.value;
    let mut rows = Vec::new();
    let mut premise_from = Vec::new();
    for &delta in delta_list {
        let mut settled = None;
        for &n in n_list {
            let report = typical_report(&TypicalSetSpec::with_entropy(rho, n, delta, s)?, opts)?;
            match (report.premise_ok, settled) {
                (true, None) => settled = Some(n),
                (false, _) => settled = None,
                _ => {}
            }
            rows.push(report);
        }
        premise_from.push((delta, settled));
    }
    let passed = rows.iter().all(TypicalSetReport::checks_passed);
    let rate_band_ok = rows.iter().all(|r| r.rate_ok.unwrap_or(true));
    Ok(RateSweep {
        entropy: s,
        rows,
        premise_from,
        passed,
        rate_band_ok,
    })
}

/// Typical-slice volumes against the marginal typical set.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SliceRatioReport {
    pub n: usize,
    pub delta: f64,
    /// `∫ μ_y^{⊗n}(A) dν^{⊗n}(y)` summed fiber by fiber.
    pub numerator: f64,
    /// `μ^{⊗n}(A)` over the joint alphabet, the same quantity by the
    /// disintegration identity.
    pub numerator_identity: f64,
    /// Relative disagreement of the two numerator routes.
    pub route_discrepancy: f64,
    /// `ν^{⊗n}(A_δ(T_*ρ; ν))`.
    pub denominator: f64,
    /// `(1/n) ln(numerator / denominator)`; absent while the marginal typical
    /// set is empty.
    pub log_ratio_per_n: Option<f64>,
    /// The conditional term of the chain rule.
    pub target: f64,
    pub joint_entropy: f64,
    pub marginal_entropy: f64,
    /// `P(A)` for the joint source.
    pub joint_prob: f64,
    pub not_yet_defined: bool,
}

impl SliceRatioReport {
    pub fn gap(&self) -> Option<f64> {
        self.log_ratio_per_n.map(|r| (r - self.target).abs())
    }
}

/// CSV with columns `n,delta,rate,S,upper,lower,prob` where `rate` is the
/// log-ratio per symbol and `S` the conditional term.
pub fn slice_csv(reports: &[SliceRatioReport]) -> String {
    csv(
        &["n", "delta", "rate", "S", "upper", "lower", "prob"],
        reports.iter().map(|r| {
            vec![
                r.n.to_string(),
                fmt17(r.delta),
                r.log_ratio_per_n.map_or_else(String::new, fmt17),
                fmt17(r.target),
                fmt17(r.target + r.delta),
                fmt17(r.target - r.delta),
                fmt17(r.joint_prob),
            ]
        }),
    )
}

/// Atom of a fiber, with the fiber's weight `ν_t({a})`.
struct FiberLetter {
    fiber_weight: f64,
    neg_log_density: f64,
}

pub fn slice_ratio(
    rho: &ProbMeasure,
    d: &Disintegration,
    n: usize,
    delta: f64,
    budget: u128,
) -> Result<SliceRatioReport> {
    if !matches!(d, Disintegration::DiscreteMap(_) | Disintegration::ProductProjection(_)) || !d.is_exact() {
        return Err(Error::InvalidArgument(
            "slice ratios need a discrete map or a projection of an atomic product".into(),
        ));
    }
    let chain = chain_rule_report(rho, d)?;
    let joint = TypicalSetSpec::with_entropy(rho, n, delta, chain.total)?;
    let identity = exact_typical(&joint, 0.0, budget)?;

    // Group the positive-density atoms by fiber, in base order.
    let base_atoms = d.base().atoms_with_mass().expect("atomic base");
    let mut fibers: Vec<(f64, Vec<FiberLetter>)> = Vec::new();
    for (t, xi) in &base_atoms {
        let letters = match d.fiber(t) {
            Ok(nu) => nu
                .atoms_with_mass()
                .expect("atomic fiber")
                .into_iter()
                .filter_map(|(x, w)| {
                    let f = rho.eval(&x);
                    (f > 0.0).then(|| FiberLetter {
                        fiber_weight: w,
                        neg_log_density: -f.ln(),
                    })
                })
                .collect(),
            Err(Error::ZeroMassFiber(_)) => Vec::new(),
            Err(e) => return Err(e),
        };
        fibers.push((*xi, letters));
    }
    let numerator = fiber_sum(&joint, &fibers, budget)?;

    let marginal = pushforward(rho, d)?;
    let marginal_spec = TypicalSetSpec::with_entropy(&marginal, n, delta, chain.marginal)?;
    let denominator = exact_typical(&marginal_spec, 0.0, budget)?.volume;

    let scale = numerator.abs().max(identity.volume.abs());
    let route_discrepancy = if scale > 0.0 {
        (numerator - identity.volume).abs() / scale
    } else {
        0.0
    };
    let not_yet_defined = denominator <= 0.0;
    let log_ratio_per_n =
        (!not_yet_defined && numerator > 0.0).then(|| (numerator.ln() - denominator.ln()) / n as f64);
    Ok(SliceRatioReport {
        n,
        delta,
        numerator,
        numerator_identity: identity.volume,
        route_discrepancy,
        denominator,
        log_ratio_per_n,
        target: chain.conditional,
        joint_entropy: chain.total,
        marginal_entropy: chain.marginal,
        joint_prob: identity.prob_estimate,
        not_yet_defined,
    })
}

/// `Σ_y ξ^{⊗n}(y) μ_y^{⊗n}(A)` organised by base type `b`: every base block of
/// type `b` has the same slice volume, a sum over refinements of `b` into
/// per-fiber types of `∏_t multinomial(c_t) ∏_a ν_t(a)^{c_a}`.
fn fiber_sum(spec: &TypicalSetSpec, fibers: &[(f64, Vec<FiberLetter>)], budget: u128) -> Result<f64> {
    let joint_letters: usize = fibers.iter().map(|(_, l)| l.len()).sum();
    check_budget(spec.n, joint_letters, budget)?;
    let k = fibers.len();
    let parts: Vec<f64> = (0..=spec.n)
        .into_par_iter()
        .map(|first| {
            let mut total = CompensatedSum::new();
            compositions_with_first(spec.n, k, first, &mut |b| {
                let slice = slice_volume(spec, fibers, b);
                if slice > 0.0 {
                    let base_weight = multinomial(b) * type_power(b, fibers.iter().map(|(xi, _)| *xi));
                    total.add(base_weight * slice);
                }
            });
            total.value()
        })
        .collect();
    Ok(parts.into_iter().collect::<CompensatedSum>().value())
}

/// Typical volume of the slice over one base block of type `b`.
fn slice_volume(spec: &TypicalSetSpec, fibers: &[(f64, Vec<FiberLetter>)], b: &[usize]) -> f64 {
    fn rec(
        spec: &TypicalSetSpec,
        fibers: &[(f64, Vec<FiberLetter>)],
        b: &[usize],
        t: usize,
        weight: f64,
        neg_log: f64,
        out: &mut CompensatedSum,
    ) {
        if t == fibers.len() {
            if spec.in_band(neg_log) {
                out.add(weight);
            }
            return;
        }
        let letters = &fibers[t].1;
        if b[t] == 0 {
            return rec(spec, fibers, b, t + 1, weight, neg_log, out);
        }
        if letters.is_empty() {
            // The block visits a fiber without mass; no typical refinement.
            return;
        }
        for first in 0..=b[t] {
            compositions_with_first(b[t], letters.len(), first, &mut |c| {
                let w = multinomial(c) * type_power(c, letters.iter().map(|l| l.fiber_weight));
                let nl: f64 = c
                    .iter()
                    .zip(letters)
                    .map(|(&ci, l)| ci as f64 * l.neg_log_density)
                    .sum();
                rec(spec, fibers, b, t + 1, weight * w, neg_log + nl, out);
            });
        }
    }
    let mut out = CompensatedSum::new();
    rec(spec, fibers, b, 0, 1.0, 0.0, &mut out);
    out.value()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fibers::{DiscreteMap, ProductProjection};
    use crate::measures::ReferenceMeasure;
    use crate::prob::Density;
    use approx::assert_abs_diff_eq;

    fn bernoulli(p: f64) -> ProbMeasure {
        ProbMeasure::from_masses(ReferenceMeasure::counting(2).unwrap(), &[1.0 - p, p]).unwrap()
    }

    fn block(ones: usize, n: usize) -> Vec<Point> {
        (0..n).map(|i| Point::atom(usize::from(i < ones))).collect()
    }

    fn h(p: f64) -> f64 {
        -p * p.ln() - (1.0 - p) * (1.0 - p).ln()
    }

    #[test]
    fn uniform_blocks_always_typical() {
        let rho = ProbMeasure::uniform(ReferenceMeasure::counting(8).unwrap()).unwrap();
        let spec = TypicalSetSpec::new(&rho, 5, 1e-9).unwrap();
        let x: Vec<Point> = [0, 7, 3, 3, 1].iter().map(|&a| Point::atom(a)).collect();
        assert!(is_typical(&x, &spec));
    }

    #[test]
    fn bernoulli_membership_by_count() {
        let rho = bernoulli(0.3);
        let spec = TypicalSetSpec::new(&rho, 10, 0.1).unwrap();
        for k in 0..=10 {
            // Single-type closed form: rate = (k/10) ln(7/3) + ln(10/7).
            let rate = k as f64 / 10.0 * (7.0f64 / 3.0).ln() + (10.0f64 / 7.0).ln();
            let expected = (rate - h(0.3)).abs() <= 0.1;
            assert_eq!(is_typical(&block(k, 10), &spec), expected, "k = {k}");
        }
        assert!(is_typical(&block(3, 10), &spec));
        assert!(!is_typical(&block(0, 10), &spec));
    }

    #[test]
    fn zero_density_atom_is_atypical() {
        let rho = ProbMeasure::from_masses(ReferenceMeasure::counting(3).unwrap(), &[0.5, 0.5, 0.0]).unwrap();
        let spec = TypicalSetSpec::new(&rho, 3, 10.0).unwrap();
        let x = vec![Point::atom(0), Point::atom(2), Point::atom(1)];
        assert!(!is_typical(&x, &spec));
        assert!(TypicalSetSpec::new(&rho, 0, 0.1).is_err());
        assert!(TypicalSetSpec::new(&rho, 3, 0.0).is_err());
    }

    #[test]
    fn exact_uniform_volume() {
        for m in [2usize, 3, 5] {
            let rho = ProbMeasure::uniform(ReferenceMeasure::counting(m).unwrap()).unwrap();
            for n in [1usize, 4, 9] {
                let spec = TypicalSetSpec::new(&rho, n, 0.05).unwrap();
                let r = exact_typical(&spec, 0.1, DEFAULT_TYPE_BUDGET).unwrap();
                assert_eq!(r.volume, (m as f64).powi(n as i32));
                assert_abs_diff_eq!(r.rate.unwrap(), (m as f64).ln(), epsilon = 1e-12);
                assert_abs_diff_eq!(r.prob_estimate, 1.0, epsilon = 1e-12);
                assert!(r.checks_passed());
            }
        }
    }

    #[test]
    fn exact_bernoulli_by_brute_force() {
        let rho = bernoulli(0.3);
        let s = h(0.3);
        for n in [4usize, 8, 16] {
            let spec = TypicalSetSpec::new(&rho, n, 0.2).unwrap();
            let r = exact_typical(&spec, 0.1, DEFAULT_TYPE_BUDGET).unwrap();
            // Oracle: sum over the number of ones.
            let (mut vol, mut prob) = (0.0, 0.0);
            for k in 0..=n {
                let rate = -(k as f64 * 0.3f64.ln() + (n - k) as f64 * 0.7f64.ln()) / n as f64;
                if (rate - s).abs() <= 0.2 {
                    let c = multinomial(&[k, n - k]);
                    vol += c;
                    prob += c * 0.3f64.powi(k as i32) * 0.7f64.powi((n - k) as i32);
                }
            }
            assert_eq!(r.volume, vol);
            assert_abs_diff_eq!(r.prob_estimate, prob, epsilon = 1e-14);
            assert!(r.upper_ok);
            assert!(r.volume <= (n as f64 * (s + 0.2)).exp());
        }
    }

    #[test]
    fn probability_reference_volume_at_most_one() {
        let reference = ReferenceMeasure::discrete(vec![0, 1, 2], vec![0.2, 0.3, 0.5]).unwrap();
        let rho = ProbMeasure::from_masses(reference, &[0.6, 0.3, 0.1]).unwrap();
        for n in [1usize, 3, 7, 12] {
            for delta in [0.05, 0.5, 5.0] {
                let r = exact_typical(&TypicalSetSpec::new(&rho, n, delta).unwrap(), 0.1, DEFAULT_TYPE_BUDGET)
                    .unwrap();
                assert!(r.volume <= 1.0 + 1e-12, "n={n} δ={delta}: {}", r.volume);
            }
        }
    }

    #[test]
    fn doubled_reference_scales_volume() {
        // Piecewise-constant law on [0,1] in four cells, and its image under
        // x -> 2x: cells double in length and the density halves.
        let masses = [0.1, 0.2, 0.3, 0.4];
        let cells = |len: f64| ReferenceMeasure::discrete(vec![0, 1, 2, 3], vec![len; 4]).unwrap();
        let rho = ProbMeasure::from_masses(cells(0.25), &masses).unwrap();
        let image = ProbMeasure::from_masses(cells(0.5), &masses).unwrap();
        for n in 1..=4 {
            let a = exact_typical(&TypicalSetSpec::new(&rho, n, 0.1).unwrap(), 0.1, DEFAULT_TYPE_BUDGET).unwrap();
            let b = exact_typical(&TypicalSetSpec::new(&image, n, 0.1).unwrap(), 0.1, DEFAULT_TYPE_BUDGET).unwrap();
            assert_abs_diff_eq!(b.volume, 2f64.powi(n as i32) * a.volume, epsilon = 1e-12);
        }
    }

    #[test]
    fn shrinking_support_bound() {
        // Uniform on [0, ε]: S = ln ε, so e^{n(S+δ)} = ε^n e^{nδ} -> 0.
        let mut last = f64::INFINITY;
        for eps in [1.0, 1e-1, 1e-2, 1e-3] {
            let rho = ProbMeasure::uniform(ReferenceMeasure::interval(0.0, eps).unwrap()).unwrap();
            let spec = TypicalSetSpec::new(&rho, 4, 0.1).unwrap();
            let bound = (4.0 * (spec.entropy + 0.1)).exp();
            assert_abs_diff_eq!(bound, eps.powi(4) * 0.4f64.exp(), epsilon = 1e-9 * bound);
            assert!(bound < last);
            last = bound;
        }
    }

    #[test]
    fn budget_error() {
        let rho = ProbMeasure::uniform(ReferenceMeasure::counting(8).unwrap()).unwrap();
        let spec = TypicalSetSpec::new(&rho, 24, 0.1).unwrap();
        assert!(matches!(exact_typical(&spec, 0.1, 1000), Err(Error::Budget { .. })));
        assert_eq!(type_count(24, 8), 2_629_575);
        let cont = ProbMeasure::uniform(ReferenceMeasure::interval(0.0, 1.0).unwrap()).unwrap();
        let spec = TypicalSetSpec::new(&cont, 2, 0.1).unwrap();
        assert!(exact_typical(&spec, 0.1, DEFAULT_TYPE_BUDGET).is_err());
    }

    #[test]
    fn monte_carlo_uniform() {
        let rho = ProbMeasure::uniform(ReferenceMeasure::counting(8).unwrap()).unwrap();
        let spec = TypicalSetSpec::new(&rho, 5, 0.1).unwrap();
        let r = monte_carlo_typical(&spec, 0.1, 10_000, 7).unwrap();
        assert_eq!(r.prob_estimate, 1.0);
        assert_abs_diff_eq!(r.volume, 32768.0, epsilon = 1e-6);
        assert!(monte_carlo_typical(&spec, 0.1, 999, 7).is_err());
    }

    #[test]
    fn monte_carlo_matches_exact() {
        let rho = bernoulli(0.3);
        let spec = TypicalSetSpec::new(&rho, 16, 0.2).unwrap();
        let exact = exact_typical(&spec, 0.1, DEFAULT_TYPE_BUDGET).unwrap();
        let mc = monte_carlo_typical(&spec, 0.1, 20_000, 11).unwrap();
        assert!((mc.volume - exact.volume).abs() <= 3.0 * mc.volume_stderr);
        assert!((mc.prob_estimate - exact.prob_estimate).abs() <= 3.0 * mc.prob_stderr);
        assert_eq!(mc, monte_carlo_typical(&spec, 0.1, 20_000, 11).unwrap());
    }

    #[test]
    fn monte_carlo_zero_hits() {
        // δ below the gap between attainable rates and S.
        let rho = bernoulli(0.3);
        let spec = TypicalSetSpec::new(&rho, 1, 1e-3).unwrap();
        let r = monte_carlo_typical(&spec, 0.1, 1000, 1).unwrap();
        assert!(r.zero_hits && r.rate.is_none() && r.volume == 0.0);
    }

    #[test]
    fn monte_carlo_continuous_rate() {
        let m = ReferenceMeasure::interval(-4.0, 4.0).unwrap();
        let rho = ProbMeasure::new(m, Density::truncated_gaussian(0.0, 1.0, -4.0, 4.0).unwrap()).unwrap();
        let spec = TypicalSetSpec::new(&rho, 8, 0.3).unwrap();
        let r = monte_carlo_typical(&spec, 0.1, 20_000, 5).unwrap();
        let rate_se = r.volume_relative_error / 8.0;
        assert!((r.rate.unwrap() - spec.entropy).abs() <= 0.3 + 3.0 * rate_se);
    }

    #[test]
    fn sweep_bernoulli() {
        let rho = bernoulli(0.3);
        let ns: Vec<usize> = (4..=24).step_by(4).collect();
        let sweep = rate_sweep(&rho, &ns, &[0.4, 0.2, 0.1], &AepOptions::default()).unwrap();
        assert!(sweep.passed);
        assert_eq!(sweep.rows.len(), 18);
        assert!(sweep.rows.iter().filter(|r| r.delta >= 0.2).all(|r| r.rate_ok == Some(true)));
        // n = 4, δ = 0.1: only the four blocks with a single one are typical.
        let small = &sweep.rows[12];
        assert_eq!((small.n, small.volume), (4, 4.0));
        assert_eq!(small.rate_ok, Some(false));
        assert!(!sweep.rate_band_ok);
        let csv = sweep.to_csv();
        assert!(csv.starts_with("n,delta,rate,S,upper,lower,prob\n"));
        assert_eq!(csv.lines().count(), 19);
        // At n = 24 the rate band tightens with δ.
        let at24: Vec<f64> = sweep.rows.iter().filter(|r| r.n == 24).map(|r| (r.rate.unwrap() - r.entropy).abs()).collect();
        for (gap, delta) in at24.iter().zip([0.4, 0.2, 0.1]) {
            assert!(*gap <= delta);
        }
        assert!(rate_sweep(&rho, &[], &[0.1], &AepOptions::default()).is_err());
        let mc = AepOptions {
            mode: VolumeMode::MonteCarlo,
            ..AepOptions::default()
        };
        assert!(rate_sweep(&rho, &[4], &[0.1], &mc).is_err());
    }

    fn joint(masses: &[f64]) -> (Disintegration, ProbMeasure) {
        let total = ReferenceMeasure::product(
            ReferenceMeasure::counting(2).unwrap(),
            ReferenceMeasure::counting(2).unwrap(),
        );
        let rho = ProbMeasure::from_masses(total.clone(), masses).unwrap();
        (Disintegration::ProductProjection(ProductProjection::new(total).unwrap()), rho)
    }

    #[test]
    fn slice_ratio_uniform_square() {
        let (d, rho) = joint(&[0.25; 4]);
        for n in [1usize, 5, 12] {
            let r = slice_ratio(&rho, &d, n, 0.1, DEFAULT_TYPE_BUDGET).unwrap();
            assert_abs_diff_eq!(r.log_ratio_per_n.unwrap(), 2f64.ln(), epsilon = 1e-12);
            assert!(r.route_discrepancy <= 1e-12);
        }
    }

    #[test]
    fn slice_ratio_independent_pair() {
        let p = 0.3;
        let (d, rho) = joint(&[(1.0 - p) * 0.5, (1.0 - p) * 0.5, p * 0.5, p * 0.5]);
        let r = slice_ratio(&rho, &d, 16, 0.25, DEFAULT_TYPE_BUDGET).unwrap();
        assert!(r.route_discrepancy <= 1e-12);
        assert_abs_diff_eq!(r.target, 2f64.ln(), epsilon = 1e-12);
        // Typicality is decided by the first coordinate alone: the ratio is 2^n.
        assert_abs_diff_eq!(r.log_ratio_per_n.unwrap(), 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn slice_ratio_correlated_oracle() {
        let (d, rho) = joint(&[0.4, 0.1, 0.1, 0.4]);
        // Marginal uniform: every base block is typical, and a joint block is
        // typical iff its number k of off-diagonal letters is. Ratio = Σ C(n,k).
        let s = chain_rule_report(&rho, &d).unwrap().total;
        for (n, delta) in [(8usize, 0.25), (16, 0.1), (24, 0.1)] {
            let r = slice_ratio(&rho, &d, n, delta, DEFAULT_TYPE_BUDGET).unwrap();
            let mut ratio = 0.0;
            for k in 0..=n {
                let rate = -(k as f64 * 0.1f64.ln() + (n - k) as f64 * 0.4f64.ln()) / n as f64;
                if (rate - s).abs() <= delta {
                    ratio += multinomial(&[k, n - k]);
                }
            }
            assert_abs_diff_eq!(r.log_ratio_per_n.unwrap(), ratio.ln() / n as f64, epsilon = 1e-12);
            assert!(r.route_discrepancy <= 1e-12);
        }
    }

    #[test]
    fn slice_ratio_over_discrete_map() {
        let total = ReferenceMeasure::counting(4).unwrap();
        let d = Disintegration::DiscreteMap(DiscreteMap::conditional(total.clone(), &[0, 0, 1, 1]).unwrap());
        let rho = ProbMeasure::from_masses(total, &[0.4, 0.1, 0.1, 0.4]).unwrap();
        let (dp, rp) = joint(&[0.4, 0.1, 0.1, 0.4]);
        let a = slice_ratio(&rho, &d, 10, 0.2, DEFAULT_TYPE_BUDGET).unwrap();
        let b = slice_ratio(&rp, &dp, 10, 0.2, DEFAULT_TYPE_BUDGET).unwrap();
        assert_abs_diff_eq!(a.log_ratio_per_n.unwrap(), b.log_ratio_per_n.unwrap(), epsilon = 1e-12);
        assert!(slice_csv(&[a, b]).lines().count() == 3);
    }

    #[test]
    fn slice_ratio_not_yet_defined() {
        // Marginal Bernoulli(0.3) at n = 1 with a narrow band has no typical letter.
        let p = 0.3;
        let (d, rho) = joint(&[(1.0 - p) * 0.5, (1.0 - p) * 0.5, p * 0.5, p * 0.5]);
        let r = slice_ratio(&rho, &d, 1, 0.05, DEFAULT_TYPE_BUDGET).unwrap();
        assert!(r.not_yet_defined && r.log_ratio_per_n.is_none());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn membership_is_permutation_invariant(
                xs in proptest::collection::vec(0usize..4, 1..12),
                seed in any::<u64>(),
                delta in 0.01f64..1.0,
            ) {
                let rho = ProbMeasure::from_masses(ReferenceMeasure::counting(4).unwrap(), &[0.1, 0.2, 0.3, 0.4]).unwrap();
                let spec = TypicalSetSpec::new(&rho, xs.len(), delta).unwrap();
                let block: Vec<Point> = xs.iter().map(|&a| Point::atom(a)).collect();
                let mut shuffled = block.clone();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
                prop_assert_eq!(is_typical(&block, &spec), is_typical(&shuffled, &spec));
            }

            #[test]
            fn exact_bounds_hold(
                masses in proptest::collection::vec(0.05f64..1.0, 2..5),
                n in 1usize..14,
                delta in 0.05f64..0.6,
            ) {
                let total: f64 = masses.iter().sum();
                let masses: Vec<f64> = masses.iter().map(|m| m / total).collect();
                let rho = ProbMeasure::from_masses(ReferenceMeasure::counting(masses.len()).unwrap(), &masses).unwrap();
                let r = exact_typical(&TypicalSetSpec::new(&rho, n, delta).unwrap(), 0.1, DEFAULT_TYPE_BUDGET).unwrap();
                prop_assert!(r.upper_ok);
                prop_assert!(r.lower_ok.unwrap_or(true));
            }
        }
    }
}
