use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{Error, Result};
use crate::measures::{Arity, MeasureKind, Point, Quadrature, ReferenceMeasure};

/// A Radon–Nikodym derivative `dρ/dμ`, evaluated pointwise.
#[derive(Clone)]
pub enum Density {
    Constant(f64),
    /// Values indexed by the atom coordinates of a point, `Σ atoms[i] * strides[i]`.
    /// Out-of-range indices evaluate to 0.
    Table { values: Vec<f64>, strides: Vec<usize> },
    /// Product of Bernoulli laws on bit-valued atoms: `Π p_i^{x_i} (1 - p_i)^{1 - x_i}`.
    BernoulliProduct { p: Vec<f64> },
    /// Product over real coordinates of a Gaussian truncated to `[lower, upper]`.
    TruncatedGaussian {
        mean: f64,
        std: f64,
        lower: f64,
        upper: f64,
        norm: f64,
    },
    /// Radial Gaussian profile on an annulus, normalized against `dx dy`.
    AnnulusRadial {
        center: f64,
        width: f64,
        r_min: f64,
        r_max: f64,
        norm: f64,
    },
    /// Piecewise constant on a regular grid of cells (row-major, first axis slowest).
    Grid {
        lower: Vec<f64>,
        upper: Vec<f64>,
        shape: Vec<usize>,
        values: Vec<f64>,
    },
    Scaled(Box<Density>, f64),
    /// `y -> inner(A^{-1}(y - b)) / |det A|`, zero where the preimage leaves `domain`.
    Affine {
        inner: Box<Density>,
        inverse: DMatrix<f64>,
        shift: DVector<f64>,
        inv_abs_det: f64,
        domain: (Vec<f64>, Vec<f64>),
    },
    /// `left(x) * right(y)` for `p = (x, y)` split at `arity`.
    Product(Box<Density>, Box<Density>, Arity),
    Custom(Arc<dyn Fn(&Point) -> f64 + Send + Sync>),
}

impl fmt::Debug for Density {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Density::Constant(c) => write!(f, "Constant({c})"),
            Density::Table { values, .. } => write!(f, "Table({} values)", values.len()),
            Density::BernoulliProduct { p } => write!(f, "BernoulliProduct({p:?})"),
            Density::TruncatedGaussian { mean, std, .. } => {
                write!(f, "TruncatedGaussian(mean {mean}, std {std})")
            }
            Density::AnnulusRadial { center, width, .. } => {
                write!(f, "AnnulusRadial(center {center}, width {width})")
            }
            Density::Grid { shape, .. } => write!(f, "Grid({shape:?})"),
            Density::Scaled(d, c) => write!(f, "Scaled({d:?}, {c})"),
            Density::Affine { inner, .. } => write!(f, "Affine({inner:?})"),
            Density::Product(l, r, _) => write!(f, "Product({l:?}, {r:?})"),
            Density::Custom(_) => write!(f, "Custom"),
        }
    }
}

fn gaussian_mass(mean: f64, std: f64, lower: f64, upper: f64) -> f64 {
    let z = |x: f64| (x - mean) / (std * std::f64::consts::SQRT_2);
    0.5 * (erf(z(upper)) - erf(z(lower)))
}

impl Density {
    pub fn table(values: Vec<f64>) -> Self {
        Density::Table {
            values,
            strides: vec![1],
        }
    }

    /// Row-major table over two atom coordinates.
    pub fn table_2d(values: Vec<f64>, cols: usize) -> Self {
        Density::Table {
            values,
            strides: vec![cols, 1],
        }
    }

    pub fn custom(f: impl Fn(&Point) -> f64 + Send + Sync + 'static) -> Self {
        Density::Custom(Arc::new(f))
    }

    /// Density of the law assigning probability `masses[i]` to the `i`-th atom
    /// of `measure` (in [`ReferenceMeasure::atoms_with_mass`] order).
    pub fn from_masses(measure: &ReferenceMeasure, masses: &[f64]) -> Result<Self> {
        let atoms = measure.atoms_with_mass().ok_or_else(|| {
            Error::InvalidArgument("atom masses need an atomic reference".into())
        })?;
        if atoms.len() != masses.len() {
            return Err(Error::InvalidArgument(format!(
                "{} masses for {} atoms",
                masses.len(),
                atoms.len()
            )));
        }
        let width = measure.arity().atoms;
        let radix: Vec<usize> = (0..width)
            .map(|i| atoms.iter().map(|(p, _)| p.atoms[i]).max().unwrap_or(0) + 1)
            .collect();
        let mut strides = vec![1; width];
        for i in (0..width.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * radix[i + 1];
        }
        let len = strides.first().map_or(1, |s| s * radix[0]);
        let mut values = vec![0.0; len];
        for ((p, w), &m) in atoms.iter().zip(masses) {
            let idx: usize = p.atoms.iter().zip(&strides).map(|(a, s)| a * s).sum();
            values[idx] = m / w;
        }
        Ok(Density::Table { values, strides })
    }

    pub fn truncated_gaussian(mean: f64, std: f64, lower: f64, upper: f64) -> Result<Self> {
        if !(std > 0.0 && upper > lower) {
            return Err(Error::InvalidArgument(
                "truncated Gaussian needs std > 0 and lower < upper".into(),
            ));
        }
        let mass = gaussian_mass(mean, std, lower, upper);
        if !(mass > 0.0) {
            return Err(Error::InvalidArgument(
                "truncation window carries no Gaussian mass".into(),
            ));
        }
        Ok(Density::TruncatedGaussian {
            mean,
            std,
            lower,
            upper,
            norm: 1.0 / (std * (2.0 * PI).sqrt() * mass),
        })
    }

    /// Radial profile `exp(-(r - center)^2 / (2 width^2))` on the annulus
    /// `[r_min, r_max]`, normalized so that `∫ f dx dy = 1`.
    pub fn annulus_radial(center: f64, width: f64, r_min: f64, r_max: f64) -> Result<Self> {
        if !(width > 0.0 && r_max > r_min && r_min > 0.0) {
            return Err(Error::InvalidArgument(
                "annulus radial profile needs width > 0 and 0 < r_min < r_max".into(),
            ));
        }
        // ∫ r exp(-(r-c)^2/(2w^2)) dr = -w^2 exp(..) + c w sqrt(π/2) erf((r-c)/(w√2))
        let antiderivative = |r: f64| {
            let u = (r - center) / width;
            -width * width * (-0.5 * u * u).exp()
                + center * width * (PI / 2.0).sqrt() * erf(u / std::f64::consts::SQRT_2)
        };
        let radial_mass = 2.0 * PI * (antiderivative(r_max) - antiderivative(r_min));
        if !(radial_mass > 0.0) {
            return Err(Error::InvalidArgument("radial profile has no mass".into()));
        }
        Ok(Density::AnnulusRadial {
            center,
            width,
            r_min,
            r_max,
            norm: 1.0 / radial_mass,
        })
    }

    pub fn grid(lower: Vec<f64>, upper: Vec<f64>, shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let cells: usize = shape.iter().product();
        if lower.len() != shape.len() || upper.len() != shape.len() || cells != values.len() || cells == 0 {
            return Err(Error::InvalidArgument(format!(
                "grid shape {shape:?} does not match {} values / {}-d bounds",
                values.len(),
                lower.len()
            )));
        }
        Ok(Density::Grid {
            lower,
            upper,
            shape,
            values,
        })
    }

    pub fn eval(&self, p: &Point) -> f64 {
        match self {
            Density::Constant(c) => *c,
            Density::Table { values, strides } => {
                if p.atoms.len() != strides.len() {
                    return 0.0;
                }
                let idx: usize = p.atoms.iter().zip(strides).map(|(a, s)| a * s).sum();
                values.get(idx).copied().unwrap_or(0.0)
            }
            Density::BernoulliProduct { p: probs } => {
                if p.atoms.len() != probs.len() {
                    return 0.0;
                }
                p.atoms
                    .iter()
                    .zip(probs)
                    .map(|(&x, &q)| match x {
                        0 => 1.0 - q,
                        1 => q,
                        _ => 0.0,
                    })
                    .product()
            }
            Density::TruncatedGaussian {
                mean,
                std,
                lower,
                upper,
                norm,
            } => p
                .coords
                .iter()
                .map(|&x| {
                    if x < *lower || x > *upper {
                        0.0
                    } else {
                        let u = (x - mean) / std;
                        norm * (-0.5 * u * u).exp()
                    }
                })
                .product(),
            Density::AnnulusRadial {
                center,
                width,
                r_min,
                r_max,
                norm,
            } => {
                let r = p.radius();
                if r < r_min - 1e-12 || r > r_max + 1e-12 {
                    0.0
                } else {
                    let u = (r - center) / width;
                    norm * (-0.5 * u * u).exp()
                }
            }
            Density::Grid {
                lower,
                upper,
                shape,
                values,
            } => {
                if p.coords.len() != shape.len() {
                    return 0.0;
                }
                let mut idx = 0;
                for (axis, &x) in p.coords.iter().enumerate() {
                    let (l, u, n) = (lower[axis], upper[axis], shape[axis]);
                    if x < l || x > u {
                        return 0.0;
                    }
                    let cell = (((x - l) / (u - l)) * n as f64).floor() as usize;
                    idx = idx * n + cell.min(n - 1);
                }
                values[idx]
            }
            Density::Scaled(inner, c) => c * inner.eval(p),
            Density::Affine {
                inner,
                inverse,
                shift,
                inv_abs_det,
                domain,
            } => {
                let d = p.coords.len();
                let mut q = p.clone();
                for i in 0..d {
                    let mut v = 0.0;
                    for j in 0..d {
                        v += inverse[(i, j)] * (p.coords[j] - shift[j]);
                    }
                    let (l, u) = (domain.0[i], domain.1[i]);
                    if !(l - 1e-12 <= v && v <= u + 1e-12) {
                        return 0.0;
                    }
                    q.coords[i] = v.clamp(l, u);
                }
                inv_abs_det * inner.eval(&q)
            }
            Density::Product(l, r, arity) => {
                let (x, y) = p.split(*arity);
                l.eval(&x) * r.eval(&y)
            }
            Density::Custom(f) => f(p),
        }
    }

    /// An upper bound on the density over the support of `measure`, used as
    /// the rejection-sampling envelope. Closed-form variants are bounded
    /// analytically; custom densities by a grid scan with 25% headroom.
    pub fn sup_bound(&self, measure: &ReferenceMeasure) -> Result<f64> {
        Ok(match self {
            Density::Constant(c) => *c,
            Density::Table { values, .. } | Density::Grid { values, .. } => {
                values.iter().copied().fold(0.0, f64::max)
            }
            Density::BernoulliProduct { p } => p.iter().map(|&q| q.max(1.0 - q)).product(),
            Density::TruncatedGaussian {
                mean,
                std,
                lower,
                upper,
                norm,
            } => {
                let nearest = mean.clamp(*lower, *upper);
                let u = (nearest - mean) / std;
                norm * (-0.5 * u * u).exp()
            }
            Density::AnnulusRadial {
                center,
                width,
                r_min,
                r_max,
                norm,
            } => {
                let nearest = center.clamp(*r_min, *r_max);
                let u = (nearest - center) / width;
                norm * (-0.5 * u * u).exp()
            }
            Density::Scaled(inner, c) => c * inner.sup_bound(measure)?,
            Density::Product(l, r, arity) => match measure.kind() {
                MeasureKind::Product(ml, mr) if ml.arity() == *arity => {
                    l.sup_bound(ml)? * r.sup_bound(mr)?
                }
                _ => self.scan_bound(measure)?,
            },
            Density::Affine { .. } | Density::Custom(_) => self.scan_bound(measure)?,
        })
    }

    fn scan_bound(&self, measure: &ReferenceMeasure) -> Result<f64> {
        let mut max = 0.0f64;
        measure.try_integrate_with(&Quadrature::with_panels(128), |p| {
            max = max.max(self.eval(p));
            Ok(0.0)
        })?;
        Ok(1.25 * max)
    }
}

/// Serializable density presets for the experiment configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(tag = "preset", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DensitySpec {
    /// Constant density `1 / total_mass`.
    Uniform,
    /// Probability mass per atom, in atom enumeration order (row-major for products).
    Masses { values: Vec<f64> },
    /// Density values relative to the reference, indexed by atom identifier.
    Table { values: Vec<f64> },
    /// Independent bits; requires a counting reference on `{0, 1}^k`.
    BernoulliProduct { p: Vec<f64> },
    /// Gaussian truncated to the reference interval or box, per coordinate.
    TruncatedGaussian { mean: f64, std: f64 },
    /// Radial Gaussian profile on an annulus reference.
    AnnulusRadial { center: f64, width: f64 },
    /// Piecewise-constant probability density on a grid over the reference box.
    Grid { shape: Vec<usize>, values: Vec<f64> },
}

impl DensitySpec {
    /// Builds the density relative to `measure`, folding the global scale into
    /// the closed-form presets (they describe probability laws, not densities).
    pub fn build(&self, measure: &ReferenceMeasure) -> Result<Density> {
        let per_scale = |d: Density| {
            if measure.scale() == 1.0 {
                d
            } else {
                Density::Scaled(Box::new(d), 1.0 / measure.scale())
            }
        };
        match self {
            DensitySpec::Uniform => Ok(Density::Constant(1.0 / measure.total_mass())),
            DensitySpec::Masses { values } => Density::from_masses(measure, values),
            DensitySpec::Table { values } => Ok(Density::table(values.clone())),
            DensitySpec::BernoulliProduct { p } => {
                let atoms = measure.atoms_with_mass().ok_or_else(|| {
                    Error::InvalidArgument("bernoulli-product needs an atomic reference".into())
                })?;
                if measure.arity().atoms != p.len()
                    || atoms.iter().any(|(q, w)| (w - measure.scale()).abs() > 1e-15 * w || q.atoms.iter().any(|&a| a > 1))
                {
                    return Err(Error::InvalidArgument(
                        "bernoulli-product needs (scaled) counting measure on {0,1}^k".into(),
                    ));
                }
                Ok(per_scale(Density::BernoulliProduct { p: p.clone() }))
            }
            DensitySpec::TruncatedGaussian { mean, std } => {
                let (lower, upper) = bounds_1d(measure)?;
                Ok(per_scale(Density::truncated_gaussian(*mean, *std, lower, upper)?))
            }
            DensitySpec::AnnulusRadial { center, width } => match measure.kind() {
                MeasureKind::Annulus2D { r_min, r_max } => Ok(per_scale(Density::annulus_radial(
                    *center, *width, *r_min, *r_max,
                )?)),
                _ => Err(Error::InvalidArgument(
                    "annulus-radial needs an annulus reference".into(),
                )),
            },
            DensitySpec::Grid { shape, values } => {
                let (lower, upper) = match measure.kind() {
                    MeasureKind::LebesgueBox { lower, upper } => (lower.clone(), upper.clone()),
                    MeasureKind::Interval { a, b } => (vec![*a], vec![*b]),
                    _ => {
                        return Err(Error::InvalidArgument(
                            "grid density needs an interval or box reference".into(),
                        ))
                    }
                };
                Ok(per_scale(Density::grid(lower, upper, shape.clone(), values.clone())?))
            }
        }
    }
}

fn bounds_1d(measure: &ReferenceMeasure) -> Result<(f64, f64)> {
    match measure.kind() {
        MeasureKind::Interval { a, b } => Ok((*a, *b)),
        MeasureKind::LebesgueBox { lower, upper }
            if lower.iter().all(|l| *l == lower[0]) && upper.iter().all(|u| *u == upper[0]) =>
        {
            Ok((lower[0], upper[0]))
        }
        _ => Err(Error::InvalidArgument(
            "truncated-gaussian needs an interval or a cube reference".into(),
        )),
    }
}
