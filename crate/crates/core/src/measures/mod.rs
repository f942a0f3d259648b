//! Finite reference measures with exact or quadrature integration.
//!
//! Every variant has finite, positive total mass on a bounded support. Points
//! of a measure space are [`Point`]s: discrete coordinates (atom identifiers or
//! group elements) live in `atoms`, real coordinates in `coords`. Product and
//! embedded measures concatenate the points of their factors, left first.

mod group;

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, simpson, simpson_panels};

pub use group::{CosetStructure, FiniteGroup, GroupTable};

/// A point of a measure space.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub atoms: SmallVec<[usize; 4]>,
    pub coords: SmallVec<[f64; 4]>,
}

impl Point {
    pub fn atom(a: usize) -> Self {
        Self {
            atoms: SmallVec::from_slice(&[a]),
            coords: SmallVec::new(),
        }
    }

    pub fn atoms(atoms: &[usize]) -> Self {
        Self {
            atoms: SmallVec::from_slice(atoms),
            coords: SmallVec::new(),
        }
    }

    pub fn real(coords: &[f64]) -> Self {
        Self {
            atoms: SmallVec::new(),
            coords: SmallVec::from_slice(coords),
        }
    }

    pub fn concat(&self, other: &Point) -> Point {
        let mut p = self.clone();
        p.atoms.extend_from_slice(&other.atoms);
        p.coords.extend_from_slice(&other.coords);
        p
    }

    /// Splits off the leading `arity` part.
    pub fn split(&self, arity: Arity) -> (Point, Point) {
        let left = Point {
            atoms: SmallVec::from_slice(&self.atoms[..arity.atoms]),
            coords: SmallVec::from_slice(&self.coords[..arity.coords]),
        };
        let right = Point {
            atoms: SmallVec::from_slice(&self.atoms[arity.atoms..]),
            coords: SmallVec::from_slice(&self.coords[arity.coords..]),
        };
        (left, right)
    }

    pub fn radius(&self) -> f64 {
        self.coords.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        let mut first = true;
        for a in &self.atoms {
            if !first {
                write!(f, ", ")?;
            }
            write!(f, "#{a}")?;
            first = false;
        }
        for x in &self.coords {
            if !first {
                write!(f, ", ")?;
            }
            write!(f, "{x}")?;
            first = false;
        }
        write!(f, ")")
    }
}

/// Number of discrete and real coordinates in a point.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Arity {
    pub atoms: usize,
    pub coords: usize,
}

impl std::ops::Add for Arity {
    type Output = Arity;
    fn add(self, rhs: Arity) -> Arity {
        Arity {
            atoms: self.atoms + rhs.atoms,
            coords: self.coords + rhs.coords,
        }
    }
}

/// Quadrature resolution for the continuous variants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quadrature {
    /// Simpson panels per axis for intervals, boxes and circles.
    pub panels: usize,
    /// Panels per polar axis for annuli.
    pub annulus_panels: usize,
    /// Cap on grid nodes for boxes of dimension two and up.
    pub box_node_budget: usize,
}

impl Default for Quadrature {
    fn default() -> Self {
        Self {
            panels: 2048,
            annulus_panels: 2048,
            box_node_budget: 1 << 20,
        }
    }
}

impl Quadrature {
    pub fn with_panels(panels: usize) -> Self {
        Self {
            panels: simpson_panels(panels),
            annulus_panels: simpson_panels(panels),
            ..Self::default()
        }
    }
}

/// Result of an integration: value and (nonnegative) error estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum MeasureKind {
    /// Weighted atoms. Identifiers are opaque and pairwise distinct.
    Discrete { atoms: Vec<usize>, weights: Vec<f64> },
    /// Lebesgue measure on an axis-aligned box.
    LebesgueBox { lower: Vec<f64>, upper: Vec<f64> },
    /// Lebesgue `dx dy` restricted to `r_min <= |v| <= r_max`.
    Annulus2D { r_min: f64, r_max: f64 },
    /// `r dθ` on the circle of radius `r`; points are Cartesian `(x, y)`.
    CircleScaled { radius: f64 },
    /// Lebesgue `dx` on `[a, b]`.
    Interval { a: f64, b: f64 },
    Product(Box<ReferenceMeasure>, Box<ReferenceMeasure>),
    /// `scale` times counting measure on a finite group.
    GroupHaar { group: Arc<FiniteGroup>, scale: f64 },
    /// Image of `inner` under `s -> (at, s)`.
    Embedded { at: Point, inner: Box<ReferenceMeasure> },
}

/// A finite reference measure: a variant times a global scale `α > 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceMeasure {
    kind: MeasureKind,
    scale: f64,
}

fn check_positive(name: &str, x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidMeasure(format!(
            "{name} must be finite and positive, got {x}"
        )))
    }
}

fn check_range(name: &str, lo: f64, hi: f64) -> Result<()> {
    if lo.is_finite() && hi.is_finite() && hi > lo {
        Ok(())
    } else {
        Err(Error::InvalidMeasure(format!(
            "{name}: need finite lower < upper, got [{lo}, {hi}]"
        )))
    }
}

impl ReferenceMeasure {
    fn unscaled(kind: MeasureKind) -> Self {
        Self { kind, scale: 1.0 }
    }

    /// Counting measure on atoms `0..n`.
    pub fn counting(n: usize) -> Result<Self> {
        Self::discrete((0..n).collect(), vec![1.0; n])
    }

    pub fn discrete(atoms: Vec<usize>, weights: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidMeasure("discrete measure needs atoms".into()));
        }
        if atoms.len() != weights.len() {
            return Err(Error::InvalidMeasure(format!(
                "{} atoms but {} weights",
                atoms.len(),
                weights.len()
            )));
        }
        for &w in &weights {
            check_positive("atom weight", w)?;
        }
        let mut seen = atoms.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidMeasure("atoms must be distinct".into()));
        }
        Ok(Self::unscaled(MeasureKind::Discrete { atoms, weights }))
    }

    pub fn interval(a: f64, b: f64) -> Result<Self> {
        check_range("interval", a, b)?;
        Ok(Self::unscaled(MeasureKind::Interval { a, b }))
    }

    pub fn lebesgue_box(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::InvalidMeasure(
                "box bounds must be nonempty and of equal dimension".into(),
            ));
        }
        for (&l, &u) in lower.iter().zip(&upper) {
            check_range("box axis", l, u)?;
        }
        Ok(Self::unscaled(MeasureKind::LebesgueBox { lower, upper }))
    }

    pub fn annulus(r_min: f64, r_max: f64) -> Result<Self> {
        check_positive("r_min", r_min)?;
        check_range("annulus radii", r_min, r_max)?;
        Ok(Self::unscaled(MeasureKind::Annulus2D { r_min, r_max }))
    }

    pub fn circle(radius: f64) -> Result<Self> {
        check_positive("radius", radius)?;
        Ok(Self::unscaled(MeasureKind::CircleScaled { radius }))
    }

    pub fn product(left: ReferenceMeasure, right: ReferenceMeasure) -> Self {
        Self::unscaled(MeasureKind::Product(Box::new(left), Box::new(right)))
    }

    pub fn group_haar(group: Arc<FiniteGroup>, scale: f64) -> Result<Self> {
        check_positive("Haar scale", scale)?;
        Ok(Self::unscaled(MeasureKind::GroupHaar { group, scale }))
    }

    pub fn embedded(at: Point, inner: ReferenceMeasure) -> Self {
        Self::unscaled(MeasureKind::Embedded {
            at,
            inner: Box::new(inner),
        })
    }

    /// Multiplies the global scale by `alpha`.
    pub fn scaled(mut self, alpha: f64) -> Result<Self> {
        check_positive("scale", alpha)?;
        self.scale *= alpha;
        Ok(self)
    }

    pub fn kind(&self) -> &MeasureKind {
        &self.kind
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn arity(&self) -> Arity {
        match &self.kind {
            MeasureKind::Discrete { .. } | MeasureKind::GroupHaar { .. } => Arity {
                atoms: 1,
                coords: 0,
            },
            MeasureKind::LebesgueBox { lower, .. } => Arity {
                atoms: 0,
                coords: lower.len(),
            },
            MeasureKind::Annulus2D { .. } | MeasureKind::CircleScaled { .. } => Arity {
                atoms: 0,
                coords: 2,
            },
            MeasureKind::Interval { .. } => Arity {
                atoms: 0,
                coords: 1,
            },
            MeasureKind::Product(l, r) => l.arity() + r.arity(),
            MeasureKind::Embedded { at, inner } => {
                Arity {
                    atoms: at.atoms.len(),
                    coords: at.coords.len(),
                } + inner.arity()
            }
        }
    }

    /// True when every factor is atomic, so integrals are exact sums.
    pub fn is_discrete(&self) -> bool {
        match &self.kind {
            MeasureKind::Discrete { .. } | MeasureKind::GroupHaar { .. } => true,
            MeasureKind::Product(l, r) => l.is_discrete() && r.is_discrete(),
            MeasureKind::Embedded { inner, .. } => inner.is_discrete(),
            _ => false,
        }
    }

    pub fn total_mass(&self) -> f64 {
        let base = match &self.kind {
            MeasureKind::Discrete { weights, .. } => compensated_sum(weights.iter().copied()),
            MeasureKind::LebesgueBox { lower, upper } => {
                lower.iter().zip(upper).map(|(l, u)| u - l).product()
            }
            MeasureKind::Annulus2D { r_min, r_max } => PI * (r_max * r_max - r_min * r_min),
            MeasureKind::CircleScaled { radius } => 2.0 * PI * radius,
            MeasureKind::Interval { a, b } => b - a,
            MeasureKind::Product(l, r) => l.total_mass() * r.total_mass(),
            MeasureKind::GroupHaar { group, scale } => group.order() as f64 * scale,
            MeasureKind::Embedded { inner, .. } => inner.total_mass(),
        };
        base * self.scale
    }

    /// Whether `p` lies in the support (up to rounding for curved supports).
    pub fn contains(&self, p: &Point) -> bool {
        if (Arity {
            atoms: p.atoms.len(),
            coords: p.coords.len(),
        }) != self.arity()
        {
            return false;
        }
        const SLACK: f64 = 1e-9;
        match &self.kind {
            MeasureKind::Discrete { atoms, .. } => atoms.contains(&p.atoms[0]),
            MeasureKind::GroupHaar { group, .. } => p.atoms[0] < group.order(),
            MeasureKind::LebesgueBox { lower, upper } => p
                .coords
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(x, (l, u))| *l <= *x && *x <= *u),
            MeasureKind::Interval { a, b } => *a <= p.coords[0] && p.coords[0] <= *b,
            MeasureKind::Annulus2D { r_min, r_max } => {
                let r = p.radius();
                r_min - SLACK <= r && r <= r_max + SLACK
            }
            MeasureKind::CircleScaled { radius } => (p.radius() - radius).abs() <= SLACK * radius,
            MeasureKind::Product(l, r) => {
                let (a, b) = p.split(l.arity());
                l.contains(&a) && r.contains(&b)
            }
            MeasureKind::Embedded { at, inner } => {
                let (a, b) = p.split(Arity {
                    atoms: at.atoms.len(),
                    coords: at.coords.len(),
                });
                a == *at && inner.contains(&b)
            }
        }
    }

    /// Enumerates `(point, mass)` for atomic measures, `None` otherwise.
    pub fn atoms_with_mass(&self) -> Option<Vec<(Point, f64)>> {
        let base: Vec<(Point, f64)> = match &self.kind {
            MeasureKind::Discrete { atoms, weights } => atoms
                .iter()
                .zip(weights)
                .map(|(&a, &w)| (Point::atom(a), w))
                .collect(),
            MeasureKind::GroupHaar { group, scale } => {
                (0..group.order()).map(|g| (Point::atom(g), *scale)).collect()
            }
            MeasureKind::Product(l, r) => {
                let left = l.atoms_with_mass()?;
                let right = r.atoms_with_mass()?;
                left.iter()
                    .flat_map(|(p, w)| right.iter().map(move |(q, v)| (p.concat(q), w * v)))
                    .collect()
            }
            MeasureKind::Embedded { at, inner } => inner
                .atoms_with_mass()?
                .into_iter()
                .map(|(q, w)| (at.concat(&q), w))
                .collect(),
            _ => return None,
        };
        Some(
            base.into_iter()
                .map(|(p, w)| (p, w * self.scale))
                .collect(),
        )
    }

    /// Integrates `f` at the default quadrature resolution.
    pub fn integrate(&self, f: impl Fn(&Point) -> f64) -> Result<Integral> {
        self.integrate_with(&Quadrature::default(), f)
    }

    pub fn integrate_with(&self, quad: &Quadrature, f: impl Fn(&Point) -> f64) -> Result<Integral> {
        self.try_integrate_with(quad, |p| Ok(f(p)))
    }

    /// Integrates a fallible integrand; the first error aborts the sum.
    pub fn try_integrate_with(
        &self,
        quad: &Quadrature,
        mut f: impl FnMut(&Point) -> Result<f64>,
    ) -> Result<Integral> {
        let mut leaf = |p: &Point| -> Result<(f64, f64)> {
            let v = f(p)?;
            if v.is_finite() {
                Ok((v, 0.0))
            } else {
                Err(Error::NonFinite {
                    value: v,
                    point: p.clone(),
                })
            }
        };
        let (value, error) = self.integrate_dyn(quad, &mut leaf)?;
        Ok(Integral { value, error })
    }

    /// Core integrator. The integrand returns `(value, error)`; product
    /// measures feed inner integrals (with their error estimates) to the outer
    /// factor. Fubini order is left factor outer.
    fn integrate_dyn(
        &self,
        quad: &Quadrature,
        f: &mut dyn FnMut(&Point) -> Result<(f64, f64)>,
    ) -> Result<(f64, f64)> {
        let (v, e) = match &self.kind {
            MeasureKind::Discrete { atoms, weights } => {
                let mut terms = Vec::with_capacity(atoms.len());
                let mut err = 0.0;
                for (&a, &w) in atoms.iter().zip(weights) {
                    let (v, e) = f(&Point::atom(a))?;
                    terms.push(w * v);
                    err += w * e;
                }
                (compensated_sum(terms), err)
            }
            MeasureKind::GroupHaar { group, scale } => {
                let mut terms = Vec::with_capacity(group.order());
                let mut err = 0.0;
                for g in 0..group.order() {
                    let (v, e) = f(&Point::atom(g))?;
                    terms.push(v);
                    err += e;
                }
                (scale * compensated_sum(terms), scale * err)
            }
            MeasureKind::Interval { a, b } => {
                simpson(*a, *b, quad.panels, &mut |x| f(&Point::real(&[x])))?
            }
            MeasureKind::LebesgueBox { lower, upper } => {
                let dim = lower.len();
                let panels = if dim == 1 {
                    quad.panels
                } else {
                    let per_axis = (quad.box_node_budget as f64).powf(1.0 / dim as f64) as usize;
                    simpson_panels(per_axis.min(quad.panels).saturating_sub(4))
                };
                let mut coords = SmallVec::<[f64; 4]>::from_elem(0.0, dim);
                box_rec(lower, upper, panels, 0, &mut coords, f)?
            }
            MeasureKind::Annulus2D { r_min, r_max } => {
                let n = quad.annulus_panels;
                simpson(*r_min, *r_max, n, &mut |r| {
                    let (v, e) = simpson(0.0, 2.0 * PI, n, &mut |t| {
                        f(&Point::real(&[r * t.cos(), r * t.sin()]))
                    })?;
                    Ok((r * v, r * e))
                })?
            }
            MeasureKind::CircleScaled { radius } => {
                let r = *radius;
                let (v, e) = simpson(0.0, 2.0 * PI, quad.panels, &mut |t| {
                    f(&Point::real(&[r * t.cos(), r * t.sin()]))
                })?;
                (r * v, r * e)
            }
            MeasureKind::Product(l, r) => l.integrate_dyn(quad, &mut |x| {
                r.integrate_dyn(quad, &mut |y| f(&x.concat(y)))
            })?,
            MeasureKind::Embedded { at, inner } => {
                inner.integrate_dyn(quad, &mut |y| f(&at.concat(y)))?
            }
        };
        Ok((self.scale * v, self.scale * e))
    }

    /// Draws a point from the normalized reference measure.
    pub fn sample_reference<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        match &self.kind {
            MeasureKind::Discrete { atoms, weights } => {
                let total: f64 = weights.iter().sum();
                let mut u = rng.random::<f64>() * total;
                for (&a, &w) in atoms.iter().zip(weights) {
                    if u < w {
                        return Point::atom(a);
                    }
                    u -= w;
                }
                Point::atom(*atoms.last().expect("nonempty"))
            }
            MeasureKind::GroupHaar { group, .. } => Point::atom(rng.random_range(0..group.order())),
            MeasureKind::LebesgueBox { lower, upper } => Point {
                atoms: SmallVec::new(),
                coords: lower
                    .iter()
                    .zip(upper)
                    .map(|(l, u)| rng.random_range(*l..*u))
                    .collect(),
            },
            MeasureKind::Interval { a, b } => Point::real(&[rng.random_range(*a..*b)]),
            MeasureKind::Annulus2D { r_min, r_max } => loop {
                let x = rng.random_range(-r_max..*r_max);
                let y = rng.random_range(-r_max..*r_max);
                let r2 = x * x + y * y;
                if r2 >= r_min * r_min && r2 <= r_max * r_max {
                    break Point::real(&[x, y]);
                }
            },
            MeasureKind::CircleScaled { radius } => {
                let t = rng.random_range(0.0..2.0 * PI);
                Point::real(&[radius * t.cos(), radius * t.sin()])
            }
            MeasureKind::Product(l, r) => l.sample_reference(rng).concat(&r.sample_reference(rng)),
            MeasureKind::Embedded { at, inner } => at.concat(&inner.sample_reference(rng)),
        }
    }
}

fn box_rec(
    lower: &[f64],
    upper: &[f64],
    panels: usize,
    axis: usize,
    coords: &mut SmallVec<[f64; 4]>,
    f: &mut dyn FnMut(&Point) -> Result<(f64, f64)>,
) -> Result<(f64, f64)> {
    simpson(lower[axis], upper[axis], panels, &mut |x| {
        coords[axis] = x;
        if axis + 1 == lower.len() {
            f(&Point {
                atoms: SmallVec::new(),
                coords: coords.clone(),
            })
        } else {
            box_rec(lower, upper, panels, axis + 1, coords, f)
        }
    })
}

/// Serializable description of a reference measure, used by the experiment
/// configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MeasureSpec {
    /// Counting measure on atoms `0..n`.
    Counting {
        n: usize,
        #[serde(default = "one")]
        scale: f64,
    },
    Discrete {
        #[serde(default)]
        atoms: Option<Vec<usize>>,
        weights: Vec<f64>,
        #[serde(default = "one")]
        scale: f64,
    },
    Interval {
        a: f64,
        b: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    Box {
        lower: Vec<f64>,
        upper: Vec<f64>,
        #[serde(default = "one")]
        scale: f64,
    },
    Annulus {
        r_min: f64,
        r_max: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    Circle {
        radius: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    Product {
        left: Box<MeasureSpec>,
        right: Box<MeasureSpec>,
        #[serde(default = "one")]
        scale: f64,
    },
    Group {
        group: GroupSpec,
        #[serde(default = "one")]
        scale: f64,
    },
}

fn one() -> f64 {
    1.0
}

/// A finite group given by a named family or an explicit table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum GroupSpec {
    Cyclic(usize),
    Symmetric(usize),
    Table(GroupTable),
    /// Path to a JSON composition table.
    File(String),
}

impl GroupSpec {
    pub fn build(&self) -> Result<FiniteGroup> {
        match self {
            GroupSpec::Cyclic(n) => FiniteGroup::cyclic(*n),
            GroupSpec::Symmetric(k) => FiniteGroup::symmetric(*k),
            GroupSpec::Table(t) => FiniteGroup::from_table(t),
            GroupSpec::File(path) => FiniteGroup::from_json_file(path),
        }
    }
}

impl MeasureSpec {
    pub fn build(&self) -> Result<ReferenceMeasure> {
        let (m, scale) = match self {
            MeasureSpec::Counting { n, scale } => (ReferenceMeasure::counting(*n)?, *scale),
            MeasureSpec::Discrete {
                atoms,
                weights,
                scale,
            } => {
                let atoms = atoms.clone().unwrap_or_else(|| (0..weights.len()).collect());
                (ReferenceMeasure::discrete(atoms, weights.clone())?, *scale)
            }
            MeasureSpec::Interval { a, b, scale } => (ReferenceMeasure::interval(*a, *b)?, *scale),
            MeasureSpec::Box {
                lower,
                upper,
                scale,
            } => (
                ReferenceMeasure::lebesgue_box(lower.clone(), upper.clone())?,
                *scale,
            ),
            MeasureSpec::Annulus {
                r_min,
                r_max,
                scale,
            } => (ReferenceMeasure::annulus(*r_min, *r_max)?, *scale),
            MeasureSpec::Circle { radius, scale } => (ReferenceMeasure::circle(*radius)?, *scale),
            MeasureSpec::Product { left, right, scale } => (
                ReferenceMeasure::product(left.build()?, right.build()?),
                *scale,
            ),
            MeasureSpec::Group { group, scale } => (
                ReferenceMeasure::group_haar(Arc::new(group.build()?), 1.0)?,
                *scale,
            ),
        };
        m.scaled(scale)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn continuous_variants() -> Vec<ReferenceMeasure> {
        vec![
            ReferenceMeasure::interval(0.0, 1.0).unwrap(),
            ReferenceMeasure::lebesgue_box(vec![-1.0, 0.0], vec![1.0, 0.5]).unwrap(),
            ReferenceMeasure::annulus(1.0, 2.0).unwrap(),
            ReferenceMeasure::circle(2.0).unwrap(),
        ]
    }

    #[test]
    fn counting_mass() {
        let m = ReferenceMeasure::counting(3).unwrap();
        assert_eq!(m.integrate(|_| 1.0).unwrap().value, 3.0);
        assert_eq!(m.clone().scaled(2.5).unwrap().total_mass(), 7.5);
    }

    #[test]
    fn circle_mass_is_two_pi_r() {
        let m = ReferenceMeasure::circle(2.0).unwrap();
        let i = m.integrate(|_| 1.0).unwrap();
        assert_abs_diff_eq!(i.value, 4.0 * PI, epsilon = 1e-12);
    }

    #[test]
    fn interval_square_against_antiderivative() {
        let m = ReferenceMeasure::interval(0.0, 1.0).unwrap();
        let i = m.integrate(|p| p.coords[0].powi(2)).unwrap();
        assert_abs_diff_eq!(i.value, 1.0 / 3.0, epsilon = 1e-12);
        assert!(i.error < 1e-10);
    }

    #[test]
    fn annulus_area() {
        let m = ReferenceMeasure::annulus(1.0, 2.0).unwrap();
        assert_abs_diff_eq!(m.total_mass(), 3.0 * PI, epsilon = 1e-14);
        let i = m.integrate(|_| 1.0).unwrap();
        assert_abs_diff_eq!(i.value, 3.0 * PI, epsilon = 1e-10);
    }

    #[test]
    fn group_haar_mass() {
        let g = Arc::new(FiniteGroup::cyclic(6).unwrap());
        assert_eq!(ReferenceMeasure::group_haar(g, 1.0).unwrap().total_mass(), 6.0);
    }

    #[test]
    fn total_mass_matches_integral_of_one() {
        let mut ms = continuous_variants();
        ms.push(ReferenceMeasure::discrete(vec![4, 9], vec![0.5, 1.25]).unwrap());
        ms.push(ReferenceMeasure::product(
            ReferenceMeasure::counting(2).unwrap(),
            ReferenceMeasure::interval(-1.0, 3.0).unwrap(),
        ));
        ms.push(ReferenceMeasure::lebesgue_box(vec![0.0; 3], vec![1.0, 2.0, 0.5]).unwrap());
        for m in ms {
            let m = m.scaled(1.5).unwrap();
            let i = m.integrate(|_| 1.0).unwrap();
            assert_abs_diff_eq!(i.value, m.total_mass(), epsilon = 1e-9);
        }
    }

    #[test]
    fn fubini_on_separable_integrand() {
        let a = ReferenceMeasure::interval(0.0, 2.0).unwrap();
        let b = ReferenceMeasure::circle(1.5).unwrap();
        let g = |x: f64| (x * 0.7).cos() + 2.0;
        let h = |p: &Point| p.coords[0].powi(2) + 0.25 * p.coords[1];
        let q = Quadrature::with_panels(256);
        let ig = a.integrate_with(&q, |p| g(p.coords[0])).unwrap().value;
        let ih = b.integrate_with(&q, h).unwrap().value;
        let prod = ReferenceMeasure::product(a, b);
        let ip = prod
            .integrate_with(&q, |p| {
                let (x, y) = p.split(Arity { atoms: 0, coords: 1 });
                g(x.coords[0]) * h(&y)
            })
            .unwrap();
        assert_abs_diff_eq!(ip.value, ig * ih, epsilon = 1e-9);
    }

    #[test]
    fn non_finite_integrand_reports_point() {
        let m = ReferenceMeasure::interval(0.0, 1.0).unwrap();
        let err = m.integrate(|p| 1.0 / p.coords[0]).unwrap_err();
        match err {
            Error::NonFinite { point, .. } => assert_eq!(point.coords[0], 0.0),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn constructor_validation() {
        assert!(ReferenceMeasure::discrete(vec![0, 0], vec![1.0, 1.0]).is_err());
        assert!(ReferenceMeasure::discrete(vec![0, 1], vec![1.0, 0.0]).is_err());
        assert!(ReferenceMeasure::interval(1.0, 1.0).is_err());
        assert!(ReferenceMeasure::annulus(0.0, 1.0).is_err());
        assert!(ReferenceMeasure::counting(2).unwrap().scaled(-1.0).is_err());
    }

    #[test]
    fn scaling_is_exact_for_discrete() {
        let m = ReferenceMeasure::discrete(vec![0, 1, 2], vec![0.2, 0.3, 0.9]).unwrap();
        let f = |p: &Point| [1.5, -2.0, 0.25][p.atoms[0]];
        let base = m.integrate(f).unwrap().value;
        let scaled = m.scaled(3.0).unwrap().integrate(f).unwrap().value;
        assert_eq!(scaled, 3.0 * base);
    }

    #[test]
    fn spec_round_trip() {
        let json = r#"{"type": "product", "left": {"type": "counting", "n": 2},
                       "right": {"type": "group", "group": {"cyclic": 3}, "scale": 0.5}}"#;
        let spec: MeasureSpec = serde_json::from_str(json).unwrap();
        let m = spec.build().unwrap();
        assert_eq!(m.total_mass(), 3.0);
        assert!(m.is_discrete());
        assert_eq!(m.atoms_with_mass().unwrap().len(), 6);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn linearity(c in -3.0f64..3.0, k in 0.1f64..2.0, which in 0usize..4) {
                let m = &continuous_variants()[which];
                let q = Quadrature::with_panels(64);
                let f = |p: &Point| (k * p.coords[0]).sin() + 1.0;
                let g = |p: &Point| p.coords.iter().sum::<f64>().powi(2);
                let i_f = m.integrate_with(&q, f).unwrap();
                let i_g = m.integrate_with(&q, g).unwrap();
                let i_sum = m.integrate_with(&q, |p| f(p) + c * g(p)).unwrap();
                let tol = 1e-9 * (1.0 + i_f.value.abs() + c.abs() * i_g.value.abs());
                prop_assert!((i_sum.value - (i_f.value + c * i_g.value)).abs() <= tol);
            }

            #[test]
            fn discrete_linearity(ws in proptest::collection::vec(0.01f64..5.0, 1..12), c in -4.0f64..4.0) {
                let n = ws.len();
                let m = ReferenceMeasure::discrete((0..n).collect(), ws).unwrap();
                let f = |p: &Point| (p.atoms[0] as f64).sqrt();
                let g = |p: &Point| 1.0 / (1.0 + p.atoms[0] as f64);
                let lhs = m.integrate(|p| f(p) + c * g(p)).unwrap().value;
                let rhs = m.integrate(f).unwrap().value + c * m.integrate(g).unwrap().value;
                prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
            }
        }
    }
}
