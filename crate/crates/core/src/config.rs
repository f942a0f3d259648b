//! Experiment configuration and the runner behind `dislab run`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::aep::{self, AepOptions, VolumeMode, DEFAULT_TYPE_BUDGET};
use crate::error::Error;
use crate::fibers::{
    self, Disintegration, DiscreteMap, GroupQuotient, Polar, ProductProjection,
};
use crate::measures::{MeasureKind, MeasureSpec, ReferenceMeasure};
use crate::prob::{self, DensitySpec, ProbMeasure};

/// Environment variable overriding the worker count.
pub const WORKERS_ENV: &str = "DISLAB_WORKERS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Entropy,
    ChainRule,
    Aep,
    Slice,
    DeformedPolar,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum Unit {
    #[default]
    Nats,
    Bits,
}

impl Unit {
    /// Multiplier applied to every nat-valued quantity.
    pub fn factor(self) -> f64 {
        match self {
            Unit::Nats => 1.0,
            Unit::Bits => 1.0 / std::f64::consts::LN_2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Unit::Nats => "nats",
            Unit::Bits => "bits",
        }
    }
}

/// How the reference measure is disintegrated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DisintegrationSpec {
    /// `map[i]` is the base atom of the `i`-th atom; the base is counting
    /// measure on the image unless `base` is given.
    DiscreteMap {
        map: Vec<usize>,
        #[serde(default)]
        base: Option<MeasureSpec>,
    },
    /// Projection of a product reference onto its left factor.
    ProductProjection,
    /// Radius map on an annulus reference.
    Polar,
    /// Canonical projection onto `G/H`. The Haar scale of `G` is the measure's
    /// scale; `subgroup_scale` defaults to 1 and the quotient scale follows.
    GroupQuotient {
        subgroup: Vec<usize>,
        #[serde(default)]
        subgroup_scale: Option<f64>,
        #[serde(default)]
        quotient_scale: Option<f64>,
        #[serde(default)]
        representatives: Option<Vec<usize>>,
    },
}

impl DisintegrationSpec {
    pub fn build(&self, measure: &ReferenceMeasure) -> crate::Result<Disintegration> {
        Ok(match self {
            DisintegrationSpec::DiscreteMap { map, base } => Disintegration::DiscreteMap(match base {
                Some(b) => DiscreteMap::over_base(measure.clone(), map, b.build()?)?,
                None => DiscreteMap::conditional(measure.clone(), map)?,
            }),
            DisintegrationSpec::ProductProjection => {
                Disintegration::ProductProjection(ProductProjection::new(measure.clone())?)
            }
            DisintegrationSpec::Polar => Disintegration::Polar(Polar::new(measure.clone())?),
            DisintegrationSpec::GroupQuotient {
                subgroup,
                subgroup_scale,
                quotient_scale,
                representatives,
            } => {
                let MeasureKind::GroupHaar { group, scale } = measure.kind() else {
                    return Err(Error::InvalidMeasure(
                        "group-quotient needs a group reference".into(),
                    ));
                };
                let total = scale * measure.scale();
                let h = subgroup_scale.unwrap_or(1.0);
                let q = quotient_scale.unwrap_or(total / h);
                let mut d = GroupQuotient::new(Arc::clone(group), subgroup, total, q, h)?;
                if let Some(reps) = representatives {
                    d = d.with_representatives(reps.clone())?;
                }
                Disintegration::GroupQuotient(d)
            }
        })
    }
}

fn default_epsilon() -> f64 {
    0.1
}

fn default_samples() -> usize {
    100_000
}

fn default_mode() -> VolumeMode {
    VolumeMode::Auto
}

fn default_density() -> DensitySpec {
    DensitySpec::Uniform
}

/// A complete experiment description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub measure: MeasureSpec,
    #[serde(default = "default_density")]
    pub density: DensitySpec,
    #[serde(default)]
    pub disintegration: Option<DisintegrationSpec>,
    #[serde(default)]
    pub n_list: Vec<usize>,
    #[serde(default)]
    pub delta_list: Vec<f64>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Monte Carlo sample count.
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Required whenever Monte Carlo is used.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_mode")]
    pub mode: VolumeMode,
    /// Path of the JSON report.
    #[serde(default)]
    pub output_json: Option<PathBuf>,
    /// Path of the CSV table, for kinds that produce one.
    #[serde(default)]
    pub output_csv: Option<PathBuf>,
    #[serde(default)]
    pub unit: Unit,
    /// Worker threads; 1 when absent.
    #[serde(default)]
    pub workers: Option<usize>,
}

/// Why a run did not produce a verdict.
#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Numerical(#[from] Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Numerical(_) => 3,
        }
    }
}

/// Result of a run: report, optional table, one-screen summary and verdict.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub report: Value,
    pub csv: Option<String>,
    pub summary: Vec<String>,
    pub passed: bool,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            0
        } else {
            1
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, RunError> {
        let config: Self = serde_json::from_str(text).map_err(|e| RunError::Config(e.to_string()))?;
        config.check()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Invariants beyond the schema.
    pub fn check(&self) -> Result<(), RunError> {
        let fail = |m: &str| Err(RunError::Config(m.to_string()));
        match self.kind {
            ExperimentKind::Aep | ExperimentKind::Slice => {
                if self.n_list.is_empty() || self.delta_list.is_empty() {
                    return fail("aep and slice runs need nonempty n_list and delta_list");
                }
                if self.n_list.contains(&0) {
                    return fail("block lengths must be positive");
                }
                if self.delta_list.iter().any(|d| !(*d > 0.0)) {
                    return fail("every delta must be positive");
                }
            }
            _ => {}
        }
        if matches!(self.kind, ExperimentKind::ChainRule | ExperimentKind::Slice) && self.disintegration.is_none() {
            return fail("chain-rule and slice runs need a disintegration");
        }
        if self.kind == ExperimentKind::Aep && self.mode == VolumeMode::MonteCarlo && self.seed.is_none() {
            return fail("Monte Carlo mode needs a seed");
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return fail("epsilon must lie in (0, 1)");
        }
        if self.workers == Some(0) {
            return fail("workers must be positive");
        }
        Ok(())
    }

    /// Worker count: the environment override, else the config, else 1.
    pub fn worker_count(&self) -> Result<usize, RunError> {
        match std::env::var(WORKERS_ENV) {
            Ok(v) => match v.trim().parse::<usize>() {
                Ok(n) if n > 0 => Ok(n),
                _ => Err(RunError::Config(format!("{WORKERS_ENV} must be a positive integer, got {v:?}"))),
            },
            Err(_) => Ok(self.workers.unwrap_or(1)),
        }
    }

    /// Runs on a dedicated pool of [`Self::worker_count`] threads.
    pub fn run(&self) -> Result<Outcome, RunError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.worker_count()?)
            .build()
            .map_err(|e| RunError::Config(e.to_string()))?;
        pool.install(|| self.run_here())
    }

    fn run_here(&self) -> Result<Outcome, RunError> {
        self.check()?;
        let measure = self.measure.build()?;
        let disintegration = match &self.disintegration {
            Some(spec) => Some(spec.build(&measure)?),
            None => None,
        };
        let reference = disintegration.as_ref().map_or(measure, |d| d.total().clone());
        let density = self.density.build(&reference)?;
        let rho = ProbMeasure::new(reference, density)?;
        let u = self.unit.factor();
        let unit = self.unit.name();
        Ok(match self.kind {
            ExperimentKind::Entropy => {
                let s = prob::entropy(&rho)?;
                Outcome {
                    report: json!({
                        "kind": "entropy",
                        "unit": unit,
                        "entropy": s.value * u,
                        "stderr": s.error * u,
                        "method": s.method,
                    }),
                    csv: None,
                    summary: vec![format!("S = {:.6} {unit}", s.value * u)],
                    passed: true,
                }
            }
            ExperimentKind::ChainRule => {
                let d = disintegration.expect("checked");
                d.check_concentration()?;
                let mut r = fibers::chain_rule_report(&rho, &d)?;
                for x in [&mut r.total, &mut r.marginal, &mut r.conditional, &mut r.discrepancy, &mut r.tolerance] {
                    *x *= u;
                }
                for row in &mut r.fibers {
                    row.fiber_entropy *= u;
                }
                let summary = vec![
                    format!("S_total     = {:.12} {unit}", r.total),
                    format!("S_marginal  = {:.12} {unit}", r.marginal),
                    format!("conditional = {:.12} {unit}", r.conditional),
                    format!("discrepancy = {:.3e} (tol {:.0e}) {}", r.discrepancy, r.tolerance, mark(r.passed)),
                ];
                Outcome {
                    csv: Some(r.fiber_csv()),
                    passed: r.passed,
                    report: with_unit(json!({ "kind": "chain-rule", "report": r }), unit),
                    summary,
                }
            }
            ExperimentKind::Aep => {
                let opts = AepOptions {
                    epsilon: self.epsilon,
                    mode: self.mode,
                    samples: self.samples,
                    seed: self.seed,
                    type_budget: DEFAULT_TYPE_BUDGET,
                };
                let mut sweep = aep::rate_sweep(&rho, &self.n_list, &self.delta_list, &opts)?;
                sweep.entropy *= u;
                for row in &mut sweep.rows {
                    row.entropy *= u;
                    row.delta *= u;
                    row.rate = row.rate.map(|r| r * u);
                }
                for (delta, _) in &mut sweep.premise_from {
                    *delta *= u;
                }
                let mut summary = vec![format!("S = {:.6} {unit}", sweep.entropy)];
                for r in &sweep.rows {
                    summary.push(format!(
                        "n={:<3} delta={:.3} P(A)={:.4} rate={} upper {} lower {}",
                        r.n,
                        r.delta,
                        r.prob_estimate,
                        r.rate.map_or_else(|| "-".to_string(), |x| format!("{x:.4}")),
                        mark(r.upper_ok),
                        r.lower_ok.map_or("n/a", mark),
                    ));
                }
                Outcome {
                    csv: Some(sweep.to_csv()),
                    passed: sweep.passed,
                    report: with_unit(json!({ "kind": "aep", "sweep": sweep }), unit),
                    summary,
                }
            }
            ExperimentKind::Slice => {
                let d = disintegration.expect("checked");
                let mut reports = Vec::new();
                for &delta in &self.delta_list {
                    for &n in &self.n_list {
                        reports.push(aep::slice_ratio(&rho, &d, n, delta, DEFAULT_TYPE_BUDGET)?);
                    }
                }
                let passed = reports.iter().all(|r| r.route_discrepancy <= 1e-12);
                for r in &mut reports {
                    r.delta *= u;
                    r.target *= u;
                    r.joint_entropy *= u;
                    r.marginal_entropy *= u;
                    r.log_ratio_per_n = r.log_ratio_per_n.map(|x| x * u);
                }
                let summary = reports
                    .iter()
                    .map(|r| {
                        format!(
                            "n={:<3} delta={:.3} log-ratio/n={} target={:.6} routes {}",
                            r.n,
                            r.delta,
                            r.log_ratio_per_n
                                .map_or_else(|| "not yet defined".to_string(), |x| format!("{x:.6}")),
                            r.target,
                            mark(r.route_discrepancy <= 1e-12),
                        )
                    })
                    .collect();
                Outcome {
                    csv: Some(aep::slice_csv(&reports)),
                    passed,
                    report: with_unit(json!({ "kind": "slice", "reports": reports }), unit),
                    summary,
                }
            }
            ExperimentKind::DeformedPolar => {
                let mut r = fibers::deformed_chain_rule_comparison(&rho)?;
                for x in [
                    &mut r.total,
                    &mut r.flat,
                    &mut r.expected_log_radius,
                    &mut r.flat_residual,
                    &mut r.conditional,
                    &mut r.deformed_conditional,
                    &mut r.conditional_residual,
                    &mut r.chain_rule_discrepancy,
                    &mut r.tolerance,
                ] {
                    *x *= u;
                }
                let summary = vec![
                    format!("S_dxdy = {:.9} {unit}, S_drdtheta = {:.9} {unit}, E ln R = {:.9}", r.total, r.flat, r.expected_log_radius),
                    format!("flat residual {:.3e}, conditional residual {:.3e} {}", r.flat_residual, r.conditional_residual, mark(r.passed)),
                ];
                Outcome {
                    csv: None,
                    passed: r.passed,
                    report: with_unit(json!({ "kind": "deformed-polar", "report": r }), unit),
                    summary,
                }
            }
        })
    }

    /// Writes the artifacts named in the config, JSON first.
    pub fn write_outputs(&self, outcome: &Outcome) -> Result<(), RunError> {
        if let Some(path) = &self.output_json {
            write_json(path, &outcome.report)?;
        }
        if let (Some(path), Some(csv)) = (&self.output_csv, &outcome.csv) {
            std::fs::write(path, csv).map_err(Error::from)?;
        }
        Ok(())
    }
}

fn mark(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn with_unit(mut v: Value, unit: &str) -> Value {
    v["unit"] = Value::from(unit);
    v
}

/// Pretty JSON with a trailing newline.
pub fn write_json(path: &Path, value: &Value) -> Result<(), RunError> {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    text.push('\n');
    std::fs::write(path, text).map_err(Error::from)?;
    Ok(())
}

/// JSON Schema of [`ExperimentConfig`].
pub fn schema() -> Value {
    serde_json::to_value(schemars::schema_for!(ExperimentConfig)).expect("schema serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn parse(text: &str) -> ExperimentConfig {
        ExperimentConfig::from_json(text).unwrap()
    }

    #[test]
    fn entropy_run() {
        let c = parse(r#"{"kind": "entropy", "measure": {"type": "counting", "n": 8}}"#);
        let out = c.run().unwrap();
        assert_eq!(out.summary, vec!["S = 2.079442 nats".to_string()]);
        assert_eq!(out.exit_code(), 0);
    }

    #[test]
    fn bits_are_nats_over_ln2() {
        let base = r#"{"kind": "chain-rule", "measure": {"type": "group", "group": {"cyclic": 6}},
            "density": {"preset": "masses", "values": [0.05, 0.10, 0.15, 0.20, 0.25, 0.25]},
            "disintegration": {"type": "group-quotient", "subgroup": [0, 3]}"#;
        let nats = parse(&format!("{base}}}")).run().unwrap();
        let bits = parse(&format!(r#"{base}, "unit": "bits"}}"#)).run().unwrap();
        let n = nats.report["report"]["total"].as_f64().unwrap();
        let b = bits.report["report"]["total"].as_f64().unwrap();
        assert_abs_diff_eq!(b, n / std::f64::consts::LN_2, epsilon = 1e-15);
        let row = |o: &Outcome| o.report["report"]["fibers"][1]["fiber_entropy"].as_f64().unwrap();
        assert_abs_diff_eq!(row(&bits), row(&nats) / std::f64::consts::LN_2, epsilon = 1e-15);
        assert!(nats.passed && bits.passed);
    }

    #[test]
    fn config_violations() {
        for bad in [
            r#"{"kind": "entropy"}"#,
            r#"{"kind": "nonsense", "measure": {"type": "counting", "n": 2}}"#,
            r#"{"kind": "aep", "measure": {"type": "counting", "n": 2}}"#,
            r#"{"kind": "chain-rule", "measure": {"type": "counting", "n": 2}}"#,
            r#"{"kind": "aep", "measure": {"type": "counting", "n": 2}, "n_list": [4], "delta_list": [0.1], "mode": "monte-carlo"}"#,
            r#"{"kind": "entropy", "measure": {"type": "counting", "n": 2}, "extra": 1}"#,
        ] {
            let err = ExperimentConfig::from_json(bad).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{bad}: {err}");
        }
    }

    #[test]
    fn numerical_failures_exit_3() {
        let c = parse(
            r#"{"kind": "entropy", "measure": {"type": "group", "group": {"table": {"order": 2, "identity": 0, "mul": [[0, 1], [0, 1]]}}}}"#,
        );
        let err = c.run().unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("Latin"), "{err}");
    }

    #[test]
    fn aep_run_and_csv() {
        let c = parse(
            r#"{"kind": "aep", "measure": {"type": "counting", "n": 2},
                "density": {"preset": "masses", "values": [0.7, 0.3]},
                "n_list": [4, 8, 12, 16, 20, 24], "delta_list": [0.2]}"#,
        );
        let out = c.run().unwrap();
        assert!(out.passed);
        assert_eq!(out.csv.unwrap().lines().count(), 7);
    }

    #[test]
    fn schema_lists_kinds() {
        let s = schema().to_string();
        for kind in ["entropy", "chain-rule", "aep", "slice", "deformed-polar"] {
            assert!(s.contains(kind));
        }
    }

    #[test]
    fn group_scales_from_config() {
        let c = parse(
            r#"{"kind": "chain-rule", "measure": {"type": "group", "group": {"cyclic": 6}, "scale": 3.0},
                "density": {"preset": "masses", "values": [0.05, 0.10, 0.15, 0.20, 0.25, 0.25]},
                "disintegration": {"type": "group-quotient", "subgroup": [0, 3], "subgroup_scale": 1.5}}"#,
        );
        assert!(c.run().unwrap().passed);
        let bad = parse(
            r#"{"kind": "chain-rule", "measure": {"type": "group", "group": {"cyclic": 6}},
                "disintegration": {"type": "group-quotient", "subgroup": [0, 3], "subgroup_scale": 2.0, "quotient_scale": 2.0}}"#,
        );
        assert_eq!(bad.run().unwrap_err().exit_code(), 3);
    }
}
