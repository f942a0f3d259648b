//! Probability measures given by a density against a reference measure, and
//! their generalized differential entropy `S_μ(ρ) = -∫ f ln f dμ` (nats).

mod density;

use std::f64::consts::LN_2;

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::measures::{MeasureKind, Point, Quadrature, ReferenceMeasure};

pub use density::{Density, DensitySpec};

/// `|∫ f dμ - 1|` tolerance for atomic references.
pub const DISCRETE_NORMALIZATION_TOL: f64 = 1e-9;
/// `|∫ f dμ - 1|` tolerance for quadrature references.
pub const CONTINUOUS_NORMALIZATION_TOL: f64 = 1e-6;
/// Integrals of magnitude beyond this are reported as divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;
/// Rejection sampling gives up below this acceptance rate.
pub const MIN_REJECTION_EFFICIENCY: f64 = 1e-4;

/// `-x ln x` with `0 ln 0 = 0`.
pub fn neg_x_ln_x(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        -x * x.ln()
    }
}

/// A probability measure `ρ = f · μ`.
#[derive(Clone, Debug)]
pub struct ProbMeasure {
    reference: ReferenceMeasure,
    density: Density,
    residual: f64,
}

impl ProbMeasure {
    /// Validates nonnegativity on every evaluated point and normalization to
    /// within 1e-9 (atomic references) or 1e-6 (quadrature).
    pub fn new(reference: ReferenceMeasure, density: Density) -> Result<Self> {
        let tolerance = if reference.is_discrete() {
            DISCRETE_NORMALIZATION_TOL
        } else {
            CONTINUOUS_NORMALIZATION_TOL
        };
        Self::with_tolerance(reference, density, tolerance)
    }

    pub fn with_tolerance(reference: ReferenceMeasure, density: Density, tolerance: f64) -> Result<Self> {
        let mass = reference
            .try_integrate_with(&Quadrature::default(), |p| {
                let v = density.eval(p);
                if v < 0.0 {
                    Err(Error::NegativeDensity {
                        value: v,
                        point: p.clone(),
                    })
                } else {
                    Ok(v)
                }
            })?
            .value;
        let residual = mass - 1.0;
        if residual.abs() > tolerance {
            return Err(Error::Normalization {
                mass,
                residual,
                tolerance,
            });
        }
        Ok(Self {
            reference,
            density,
            residual,
        })
    }

    /// Skips validation; for constructions that preserve mass exactly.
    pub(crate) fn from_parts(reference: ReferenceMeasure, density: Density, residual: f64) -> Self {
        Self {
            reference,
            density,
            residual,
        }
    }

    /// Probability masses on an atomic reference.
    pub fn from_masses(reference: ReferenceMeasure, masses: &[f64]) -> Result<Self> {
        let density = Density::from_masses(&reference, masses)?;
        Self::new(reference, density)
    }

    /// Uniform law: constant density `1 / μ(E)`.
    pub fn uniform(reference: ReferenceMeasure) -> Result<Self> {
        let c = 1.0 / reference.total_mass();
        Self::new(reference, Density::Constant(c))
    }

    pub fn reference(&self) -> &ReferenceMeasure {
        &self.reference
    }

    pub fn density(&self) -> &Density {
        &self.density
    }

    /// `∫ f dμ - 1` measured at construction.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn eval(&self, p: &Point) -> f64 {
        self.density.eval(p)
    }

    /// Probability mass of each atom, for atomic references.
    pub fn atom_masses(&self) -> Option<Vec<(Point, f64)>> {
        Some(
            self.reference
                .atoms_with_mass()?
                .into_iter()
                .map(|(p, w)| {
                    let m = w * self.density.eval(&p);
                    (p, m)
                })
                .collect(),
        )
    }

    /// `E_ρ[g] = ∫ g f dμ`.
    pub fn expectation(&self, g: impl Fn(&Point) -> f64) -> Result<f64> {
        Ok(self
            .reference
            .integrate(|p| {
                let f = self.density.eval(p);
                if f == 0.0 {
                    0.0
                } else {
                    f * g(p)
                }
            })?
            .value)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntropyMethod {
    ExactSum,
    Quadrature,
    MonteCarlo,
}

/// An entropy in nats with the method that produced it and its error:
/// zero for exact sums, a quadrature estimate, or a Monte Carlo standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EntropyValue {
    #[serde(rename = "value_nats")]
    pub value: f64,
    pub method: EntropyMethod,
    #[serde(rename = "stderr")]
    pub error: f64,
}

impl EntropyValue {
    pub fn bits(&self) -> f64 {
        self.value / LN_2
    }
}

pub fn make_prob(reference: ReferenceMeasure, density: Density) -> Result<ProbMeasure> {
    ProbMeasure::new(reference, density)
}

/// Generalized entropy `-∫ f ln f dμ`, exact for atomic references and by
/// composite Simpson quadrature otherwise.
pub fn entropy(rho: &ProbMeasure) -> Result<EntropyValue> {
    entropy_with(rho, &Quadrature::default())
}

pub fn entropy_with(rho: &ProbMeasure, quad: &Quadrature) -> Result<EntropyValue> {
    let integral = rho
        .reference
        .integrate_with(quad, |p| neg_x_ln_x(rho.density.eval(p)));
    let integral = match integral {
        Ok(i) => i,
        Err(Error::NonFinite { value, point }) => {
            return Err(Error::Divergent(format!(
                "integrand {value} at {point}"
            )))
        }
        Err(e) => return Err(e),
    };
    if integral.value.abs() > DIVERGENCE_THRESHOLD {
        return Err(Error::Divergent(format!(
            "|S| = {:e} exceeds {DIVERGENCE_THRESHOLD:e}",
            integral.value.abs()
        )));
    }
    let discrete = rho.reference.is_discrete();
    Ok(EntropyValue {
        value: integral.value,
        method: if discrete {
            EntropyMethod::ExactSum
        } else {
            EntropyMethod::Quadrature
        },
        error: if discrete { 0.0 } else { integral.error },
    })
}

/// Monte Carlo estimate `mean(-ln f(X_i))` over `count` draws from `ρ`.
pub fn entropy_monte_carlo(rho: &ProbMeasure, count: usize, seed: u64) -> Result<EntropyValue> {
    if count < 2 {
        return Err(Error::InvalidArgument("need at least two samples".into()));
    }
    let xs = sample(rho, count, seed)?;
    let terms: Vec<f64> = xs.iter().map(|x| -rho.eval(x).ln()).collect();
    let (mean, sd) = mean_and_sd(&terms);
    Ok(EntropyValue {
        value: mean,
        method: EntropyMethod::MonteCarlo,
        error: sd / (count as f64).sqrt(),
    })
}

pub(crate) fn mean_and_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = crate::numeric::compensated_sum(xs.iter().copied()) / n;
    let var = crate::numeric::compensated_sum(xs.iter().map(|x| (x - mean).powi(2))) / (n - 1.0);
    (mean, var.sqrt())
}

/// `D(ρ ‖ q) = -S_q(ρ) = ∫ f_ρ ln(f_ρ / f_q) dμ` for two laws over the same reference.
pub fn kl_divergence(rho: &ProbMeasure, q: &ProbMeasure) -> Result<f64> {
    if rho.reference != q.reference {
        return Err(Error::Incompatible(
            "KL divergence needs both laws over the identical reference".into(),
        ));
    }
    let integral = rho.reference.try_integrate_with(&Quadrature::default(), |p| {
        let fr = rho.density.eval(p);
        if fr == 0.0 {
            return Ok(0.0);
        }
        let fq = q.density.eval(p);
        if fq == 0.0 {
            return Err(Error::AbsoluteContinuity {
                value: fr,
                point: p.clone(),
            });
        }
        Ok(fr * (fr / fq).ln())
    })?;
    Ok(integral.value)
}

/// Re-expresses `ρ` against `α μ`: the density becomes `f / α` and the entropy
/// grows by `ln α`. Returns the new law and that predicted shift.
pub fn rescale_reference(rho: &ProbMeasure, alpha: f64) -> Result<(ProbMeasure, f64)> {
    let reference = rho.reference.clone().scaled(alpha)?;
    let density = Density::Scaled(Box::new(rho.density.clone()), 1.0 / alpha);
    Ok((
        ProbMeasure::from_parts(reference, density, rho.residual),
        alpha.ln(),
    ))
}

/// Pushforward of `ρ` under `x -> A x + b` on an interval or box reference.
///
/// The image reference is Lebesgue measure (same global scale) on the
/// bounding box of the image, and the density is `f(A^{-1}(y - b)) / |det A|`.
/// Mass is preserved exactly by the change of variables, so the result keeps
/// the residual of `ρ` rather than re-running quadrature over a possibly
/// non-axis-aligned image.
pub fn affine_pushforward(rho: &ProbMeasure, a: &DMatrix<f64>, b: &[f64]) -> Result<ProbMeasure> {
    let (lower, upper, is_interval) = match rho.reference.kind() {
        MeasureKind::Interval { a, b } => (vec![*a], vec![*b], true),
        MeasureKind::LebesgueBox { lower, upper } => (lower.clone(), upper.clone(), false),
        _ => {
            return Err(Error::InvalidArgument(
                "affine pushforward needs an interval or box reference".into(),
            ))
        }
    };
    let d = lower.len();
    if a.nrows() != d || a.ncols() != d || b.len() != d {
        return Err(Error::InvalidArgument(format!(
            "map dimensions {}x{} / shift {} do not match dimension {d}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    let det = a.determinant();
    let inverse = a
        .clone()
        .try_inverse()
        .filter(|_| det.abs() > f64::EPSILON * a.norm().powi(d as i32).max(f64::MIN_POSITIVE))
        .ok_or(Error::Singular(det.abs()))?;
    let shift = DVector::from_column_slice(b);

    let mut new_lower = vec![f64::INFINITY; d];
    let mut new_upper = vec![f64::NEG_INFINITY; d];
    for corner in 0..(1usize << d) {
        let x = DVector::from_iterator(
            d,
            (0..d).map(|i| if corner >> i & 1 == 0 { lower[i] } else { upper[i] }),
        );
        let y = a * x + &shift;
        for i in 0..d {
            new_lower[i] = new_lower[i].min(y[i]);
            new_upper[i] = new_upper[i].max(y[i]);
        }
    }
    let image = if is_interval {
        ReferenceMeasure::interval(new_lower[0], new_upper[0])?
    } else {
        ReferenceMeasure::lebesgue_box(new_lower, new_upper)?
    }
    .scaled(rho.reference.scale())?;
    let density = Density::Affine {
        inner: Box::new(rho.density.clone()),
        inverse,
        shift,
        inv_abs_det: 1.0 / det.abs(),
        domain: (lower, upper),
    };
    Ok(ProbMeasure::from_parts(image, density, rho.residual))
}

/// `count` i.i.d. draws from `ρ`, deterministic in `seed`.
///
/// Atomic references use cumulative atom masses; continuous ones use
/// rejection against the normalized reference with an envelope from
/// [`Density::sup_bound`].
pub fn sample(rho: &ProbMeasure, count: usize, seed: u64) -> Result<Vec<Point>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Sampler::new(rho)?.draw(&mut rng, count)
}

/// Reusable sampler; [`sample`] builds one per call.
pub struct Sampler<'a> {
    rho: &'a ProbMeasure,
    kind: SamplerKind,
}

enum SamplerKind {
    Atomic {
        points: Vec<Point>,
        index: WeightedIndex<f64>,
    },
    Rejection {
        envelope: f64,
    },
}

impl<'a> Sampler<'a> {
    pub fn new(rho: &'a ProbMeasure) -> Result<Self> {
        let kind = match rho.atom_masses() {
            Some(masses) => {
                let (points, weights): (Vec<_>, Vec<_>) = masses.into_iter().unzip();
                let index = WeightedIndex::new(&weights)
                    .map_err(|e| Error::InvalidArgument(format!("atom masses: {e}")))?;
                SamplerKind::Atomic { points, index }
            }
            None => {
                let envelope = rho.density.sup_bound(&rho.reference)? * rho.reference.total_mass();
                if !(envelope.is_finite() && envelope > 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "no usable rejection envelope ({envelope})"
                    )));
                }
                SamplerKind::Rejection { envelope }
            }
        };
        Ok(Self { rho, kind })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Result<Vec<Point>> {
        let mut out = Vec::with_capacity(count);
        match &self.kind {
            SamplerKind::Atomic { points, index } => {
                out.extend((0..count).map(|_| points[index.sample(rng)].clone()));
            }
            SamplerKind::Rejection { envelope } => {
                // Proposal density against μ is 1/μ(E); accept with f μ(E) / envelope.
                let mass = self.rho.reference.total_mass();
                let mut proposals: u64 = 0;
                while out.len() < count {
                    let x = self.rho.reference.sample_reference(rng);
                    proposals += 1;
                    if rng.random::<f64>() * envelope < self.rho.eval(&x) * mass {
                        out.push(x);
                    }
                    if proposals % (1 << 20) == 0 {
                        let efficiency = out.len() as f64 / proposals as f64;
                        if efficiency < MIN_REJECTION_EFFICIENCY {
                            return Err(Error::Rejection {
                                efficiency,
                                floor: MIN_REJECTION_EFFICIENCY,
                                proposals,
                            });
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}
