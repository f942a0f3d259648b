//! Disintegrations of reference measures and the entropy chain rule.
//!
//! A disintegration of `μ` along a map `T: E -> E_T` with base measure `ξ` is
//! a kernel `t -> ν_t` of fiber measures, each concentrated on `{T = t}`, with
//! `∫ f dμ = ∫ (∫ f dν_t) dξ(t)`. Every probability `ρ = f μ` then splits into
//! the pushforward `T_*ρ` (density `t -> ∫ f dν_t` against `ξ`) and fiber
//! conditionals `ρ_t` (density `f / ∫ f dν_t` against `ν_t`), and
//!
//! ```text
//! S_μ(ρ) = S_ξ(T_*ρ) + ∫ S_{ν_t}(ρ_t) dT_*ρ(t).
//! ```
//!
//! Only closed kernel variants are offered so that the fiber property holds by
//! construction and validation is meaningful.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::measures::{
    Arity, CosetStructure, FiniteGroup, MeasureKind, Point, Quadrature, ReferenceMeasure,
};
use crate::prob::{entropy, Density, ProbMeasure};
use crate::report::fmt17;

/// Discrepancy tolerance for atomic disintegrations.
pub const EXACT_TOL: f64 = 1e-12;
/// Discrepancy tolerance for quadrature-based disintegrations.
pub const QUADRATURE_TOL: f64 = 1e-4;
/// Identity tolerance for the polar reference comparison.
pub const DEFORMED_TOL: f64 = 1e-3;

/// A map on a finite atomic space, given as a table from total-space atoms to
/// base atoms, with base `ξ` and fibers `ν_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteMap {
    total: ReferenceMeasure,
    /// `(total-space atom, base atom)` in total-space enumeration order.
    map: Vec<(Point, Point)>,
    base: ReferenceMeasure,
    fibers: BTreeMap<Vec<usize>, ReferenceMeasure>,
}

impl DiscreteMap {
    /// `map[i]` is the base atom of the `i`-th atom of `total`; the base is
    /// counting measure on the image and `ν_t` restricts `total` to `{T = t}`.
    pub fn conditional(total: ReferenceMeasure, map: &[usize]) -> Result<Self> {
        let mut image: Vec<usize> = map.to_vec();
        image.sort_unstable();
        image.dedup();
        let base = ReferenceMeasure::counting(image.last().map_or(0, |m| m + 1))?;
        let base = restrict_to_image(base, &image)?;
        Self::over_base(total, map, base)
    }

    /// Fibers `ν_t = μ|_{T=t} / ξ({t})` for an arbitrary atomic base `ξ`.
    pub fn over_base(total: ReferenceMeasure, map: &[usize], base: ReferenceMeasure) -> Result<Self> {
        let atoms = atomic(&total, "total space")?;
        let base_atoms = atomic(&base, "base")?;
        if total.arity().atoms != 1 || base.arity().atoms != 1 {
            return Err(Error::InvalidMeasure(
                "discrete maps act on single-coordinate atomic spaces".into(),
            ));
        }
        if map.len() != atoms.len() {
            return Err(Error::InvalidArgument(format!(
                "map has {} entries for {} atoms",
                map.len(),
                atoms.len()
            )));
        }
        let base_weight: BTreeMap<usize, f64> = base_atoms
            .iter()
            .map(|(p, w)| (p.atoms[0], *w))
            .collect();
        let mut grouped: BTreeMap<usize, (Vec<usize>, Vec<f64>)> = BTreeMap::new();
        for ((p, w), &t) in atoms.iter().zip(map) {
            let xi = *base_weight.get(&t).ok_or_else(|| {
                Error::InvalidArgument(format!("map sends {p} to #{t}, which is not a base atom"))
            })?;
            let entry = grouped.entry(t).or_default();
            entry.0.push(p.atoms[0]);
            entry.1.push(w / xi);
        }
        let mut fibers = BTreeMap::new();
        for (t, (ids, weights)) in grouped {
            fibers.insert(vec![t], ReferenceMeasure::discrete(ids, weights)?);
        }
        let map = atoms
            .iter()
            .zip(map)
            .map(|((p, _), &t)| (p.clone(), Point::atom(t)))
            .collect();
        Self::new(total, map, base, fibers)
    }

    /// Fully explicit kernel; checks that each fiber is concentrated on its level set.
    pub fn new(
        total: ReferenceMeasure,
        map: Vec<(Point, Point)>,
        base: ReferenceMeasure,
        fibers: BTreeMap<Vec<usize>, ReferenceMeasure>,
    ) -> Result<Self> {
        atomic(&total, "total space")?;
        atomic(&base, "base")?;
        let lookup: BTreeMap<&[usize], &Point> =
            map.iter().map(|(x, t)| (x.atoms.as_slice(), t)).collect();
        for (t, fiber) in &fibers {
            for (x, _) in atomic(fiber, "fiber")? {
                match lookup.get(x.atoms.as_slice()) {
                    Some(image) if image.atoms.as_slice() == t.as_slice() => {}
                    _ => {
                        return Err(Error::InvalidMeasure(format!(
                            "fiber over #{t:?} charges {x}, which T does not send there"
                        )))
                    }
                }
            }
        }
        Ok(Self {
            total,
            map,
            base,
            fibers,
        })
    }

    fn project(&self, x: &Point) -> Result<Point> {
        self.map
            .iter()
            .find(|(p, _)| p == x)
            .map(|(_, t)| t.clone())
            .ok_or_else(|| Error::InvalidArgument(format!("{x} is not an atom of the total space")))
    }

    fn fiber(&self, t: &Point) -> Result<ReferenceMeasure> {
        self.fibers
            .get(t.atoms.as_slice())
            .cloned()
            .ok_or(Error::ZeroMassFiber(t.clone()))
    }
}

fn atomic(m: &ReferenceMeasure, what: &str) -> Result<Vec<(Point, f64)>> {
    m.atoms_with_mass()
        .ok_or_else(|| Error::InvalidMeasure(format!("{what} must be atomic")))
}

fn restrict_to_image(base: ReferenceMeasure, image: &[usize]) -> Result<ReferenceMeasure> {
    let scale = base.scale();
    ReferenceMeasure::discrete(image.to_vec(), vec![1.0; image.len()])?.scaled(scale)
}

/// Projection of a product `ξ ⊗ λ` onto its left factor; `ν_t` is `λ`
/// embedded at `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProductProjection {
    total: ReferenceMeasure,
    left: ReferenceMeasure,
    right: ReferenceMeasure,
}

impl ProductProjection {
    pub fn new(total: ReferenceMeasure) -> Result<Self> {
        match total.kind() {
            MeasureKind::Product(l, r) => Ok(Self {
                left: (**l).clone(),
                right: (**r).clone(),
                total,
            }),
            _ => Err(Error::InvalidMeasure(
                "product projection needs a product reference".into(),
            )),
        }
    }

    fn left_arity(&self) -> Arity {
        self.left.arity()
    }
}

/// Radius map on an annulus; `ξ = dr` on `[r_min, r_max]` and `ν_r = r dθ`.
#[derive(Clone, Debug, PartialEq)]
pub struct Polar {
    total: ReferenceMeasure,
    base: ReferenceMeasure,
}

impl Polar {
    pub fn new(total: ReferenceMeasure) -> Result<Self> {
        match total.kind() {
            MeasureKind::Annulus2D { r_min, r_max } => Ok(Self {
                base: ReferenceMeasure::interval(*r_min, *r_max)?,
                total,
            }),
            _ => Err(Error::InvalidMeasure(
                "polar disintegration needs an annulus reference".into(),
            )),
        }
    }
}

/// Canonical projection `G -> G/H` for Haar measures in canonical relation
/// `λ^G = λ^{G/H} λ^H`. The fiber over `[g]` is the image of `λ^H` under
/// `h -> g h` for the chosen representative `g`.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupQuotient {
    group: Arc<FiniteGroup>,
    cosets: CosetStructure,
    total: ReferenceMeasure,
    base: ReferenceMeasure,
    subgroup_scale: f64,
    representatives: Vec<usize>,
}

impl GroupQuotient {
    /// `λ^G` gets scale `quotient_scale * subgroup_scale`.
    pub fn canonical(
        group: Arc<FiniteGroup>,
        subgroup: &[usize],
        quotient_scale: f64,
        subgroup_scale: f64,
    ) -> Result<Self> {
        Self::new(group, subgroup, quotient_scale * subgroup_scale, quotient_scale, subgroup_scale)
    }

    pub fn new(
        group: Arc<FiniteGroup>,
        subgroup: &[usize],
        group_scale: f64,
        quotient_scale: f64,
        subgroup_scale: f64,
    ) -> Result<Self> {
        let product = quotient_scale * subgroup_scale;
        if (group_scale - product).abs() > 1e-12 * group_scale.abs().max(product.abs()) {
            return Err(Error::InvalidMeasure(format!(
                "Haar scales not in canonical relation: {group_scale} != {quotient_scale} * {subgroup_scale}"
            )));
        }
        let cosets = CosetStructure::new(&group, subgroup)?;
        let total = ReferenceMeasure::group_haar(group.clone(), group_scale)?;
        let base = ReferenceMeasure::group_haar(Arc::new(cosets.quotient().clone()), quotient_scale)?;
        ReferenceMeasure::group_haar(group.clone(), subgroup_scale)?;
        Ok(Self {
            representatives: cosets.section().to_vec(),
            group,
            cosets,
            total,
            base,
            subgroup_scale,
        })
    }

    /// Replaces the section; `reps[c]` must lie in coset `c`.
    pub fn with_representatives(mut self, reps: Vec<usize>) -> Result<Self> {
        if reps.len() != self.cosets.cosets().len() {
            return Err(Error::InvalidArgument(format!(
                "{} representatives for {} cosets",
                reps.len(),
                self.cosets.cosets().len()
            )));
        }
        for (c, &g) in reps.iter().enumerate() {
            if g >= self.group.order() || self.cosets.coset_of(g) != c {
                return Err(Error::InvalidArgument(format!(
                    "element {g} does not represent coset {c}"
                )));
            }
        }
        self.representatives = reps;
        Ok(self)
    }

    pub fn cosets(&self) -> &CosetStructure {
        &self.cosets
    }

    pub fn representatives(&self) -> &[usize] {
        &self.representatives
    }

    fn fiber(&self, t: &Point) -> Result<ReferenceMeasure> {
        let c = t.atoms[0];
        let g = *self
            .representatives
            .get(c)
            .ok_or_else(|| Error::InvalidArgument(format!("no coset #{c}")))?;
        // Pushforward of λ^H (mass `subgroup_scale` per element) along ι_g.
        let image = self.cosets.inclusion_image(&self.group, g);
        ReferenceMeasure::discrete(image, vec![1.0; self.cosets.subgroup().len()])?
            .scaled(self.subgroup_scale)
    }
}

/// The closed set of disintegration kernels.
#[derive(Clone, Debug, PartialEq)]
pub enum Disintegration {
    DiscreteMap(DiscreteMap),
    ProductProjection(ProductProjection),
    Polar(Polar),
    GroupQuotient(GroupQuotient),
}

impl Disintegration {
    pub fn total(&self) -> &ReferenceMeasure {
        match self {
            Disintegration::DiscreteMap(d) => &d.total,
            Disintegration::ProductProjection(d) => &d.total,
            Disintegration::Polar(d) => &d.total,
            Disintegration::GroupQuotient(d) => &d.total,
        }
    }

    pub fn base(&self) -> &ReferenceMeasure {
        match self {
            Disintegration::DiscreteMap(d) => &d.base,
            Disintegration::ProductProjection(d) => &d.left,
            Disintegration::Polar(d) => &d.base,
            Disintegration::GroupQuotient(d) => &d.base,
        }
    }

    /// The map `T`.
    pub fn project(&self, x: &Point) -> Result<Point> {
        match self {
            Disintegration::DiscreteMap(d) => d.project(x),
            Disintegration::ProductProjection(d) => Ok(x.split(d.left_arity()).0),
            Disintegration::Polar(_) => Ok(Point::real(&[x.radius()])),
            Disintegration::GroupQuotient(d) => Ok(Point::atom(d.cosets.coset_of(x.atoms[0]))),
        }
    }

    /// The fiber measure `ν_t`.
    pub fn fiber(&self, t: &Point) -> Result<ReferenceMeasure> {
        match self {
            Disintegration::DiscreteMap(d) => d.fiber(t),
            Disintegration::ProductProjection(d) => {
                ReferenceMeasure::embedded(t.clone(), d.right.clone()).scaled(d.total.scale())
            }
            Disintegration::Polar(d) => ReferenceMeasure::circle(t.coords[0])?.scaled(d.total.scale()),
            Disintegration::GroupQuotient(d) => d.fiber(t),
        }
    }

    /// Whether both sides are exact sums.
    pub fn is_exact(&self) -> bool {
        self.total().is_discrete() && self.base().is_discrete()
    }

    /// Declared chain-rule and validation tolerance.
    pub fn tolerance(&self) -> f64 {
        if self.is_exact() {
            EXACT_TOL
        } else {
            QUADRATURE_TOL
        }
    }

    /// For atomic kernels, checks `ν_t(T ≠ t) = 0` atom by atom.
    pub fn check_concentration(&self) -> Result<()> {
        let Some(base_atoms) = self.base().atoms_with_mass() else {
            return Ok(());
        };
        for (t, _) in base_atoms {
            let fiber = match self.fiber(&t) {
                Ok(f) => f,
                Err(Error::ZeroMassFiber(_)) => continue,
                Err(e) => return Err(e),
            };
            if let Some(atoms) = fiber.atoms_with_mass() {
                for (x, _) in atoms {
                    if self.project(&x)? != t {
                        return Err(Error::InvalidMeasure(format!(
                            "fiber over {t} charges {x} outside its level set"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Deterministic test integrands for checking the disintegration identity:
/// a separable part over all coordinates plus a coupling term.
#[derive(Clone, Debug, PartialEq)]
pub struct BatteryFunction {
    salt: u64,
    freq: [f64; 4],
    phase: [f64; 4],
    coupling: f64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn unit(z: u64) -> f64 {
    (splitmix(z) >> 11) as f64 / (1u64 << 53) as f64
}

impl BatteryFunction {
    pub fn new(seed: u64, index: u64) -> Self {
        let salt = splitmix(seed ^ splitmix(index));
        let at = |k: u64| unit(salt.wrapping_add(k));
        Self {
            salt,
            freq: [0.5 + 2.0 * at(1), 0.5 + 2.0 * at(2), 0.5 + 2.0 * at(3), 0.5 + 2.0 * at(4)],
            phase: [2.0 * PI * at(5), 2.0 * PI * at(6), 2.0 * PI * at(7), 2.0 * PI * at(8)],
            coupling: at(9),
        }
    }

    /// Values lie in `[0, 2 + 0.5 (#atoms + #coords)]`.
    pub fn eval(&self, p: &Point) -> f64 {
        let mut separable = 1.0;
        let mut angle = 0.0;
        for (i, &a) in p.atoms.iter().enumerate() {
            let h = unit(self.salt ^ splitmix((i as u64) << 32 | a as u64));
            separable += 0.5 * h;
            angle += 2.0 * PI * h;
        }
        for (j, &x) in p.coords.iter().enumerate() {
            let (w, phi) = (self.freq[j % 4], self.phase[j % 4]);
            separable += 0.5 * (0.5 + 0.5 * (w * x + phi).cos());
            angle += w * x;
        }
        separable + self.coupling * (1.0 + angle.sin())
    }
}

/// An integrand used to check the disintegration identity.
pub trait TestFunction {
    fn value(&self, p: &Point) -> f64;
}

impl TestFunction for BatteryFunction {
    fn value(&self, p: &Point) -> f64 {
        self.eval(p)
    }
}

impl<F: Fn(&Point) -> f64> TestFunction for F {
    fn value(&self, p: &Point) -> f64 {
        self(p)
    }
}

/// The default 16-function battery.
pub fn default_battery(seed: u64) -> Vec<BatteryFunction> {
    (0..16).map(|i| BatteryFunction::new(seed, i)).collect()
}

/// Max over the battery of `|∫ f dμ - ∫ (∫ f dν_t) dξ(t)|`.
pub fn validate_disintegration<F: TestFunction>(d: &Disintegration, battery: &[F]) -> Result<f64> {
    if battery.is_empty() {
        return Err(Error::InvalidArgument("empty validation battery".into()));
    }
    let quad = Quadrature::default();
    let mut worst = 0.0f64;
    for f in battery {
        let lhs = d.total().integrate_with(&quad, |x| f.value(x))?.value;
        let rhs = d
            .base()
            .try_integrate_with(&quad, |t| Ok(d.fiber(t)?.integrate_with(&quad, |x| f.value(x))?.value))?
            .value;
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(worst)
}

fn check_reference(rho: &ProbMeasure, d: &Disintegration) -> Result<()> {
    if rho.reference() != d.total() {
        return Err(Error::Incompatible(
            "the law's reference is not the disintegrated measure".into(),
        ));
    }
    Ok(())
}

/// `T_*ρ` as a law over `ξ` with density `t -> ∫ f dν_t`.
pub fn pushforward(rho: &ProbMeasure, d: &Disintegration) -> Result<ProbMeasure> {
    check_reference(rho, d)?;
    let base = d.base().clone();
    match base.atoms_with_mass() {
        Some(atoms) => {
            let mut masses = Vec::with_capacity(atoms.len());
            for (t, w) in &atoms {
                let density = match d.fiber(t) {
                    Ok(fiber) => fiber.integrate(|x| rho.eval(x))?.value,
                    Err(Error::ZeroMassFiber(_)) => 0.0,
                    Err(e) => return Err(e),
                };
                masses.push(w * density);
            }
            ProbMeasure::from_masses(base, &masses)
        }
        None => {
            let (rho, d) = (Arc::new(rho.clone()), Arc::new(d.clone()));
            let density = Density::custom(move |t| match d.fiber(t) {
                Ok(fiber) => fiber
                    .integrate(|x| rho.eval(x))
                    .map_or(f64::NAN, |i| i.value),
                Err(_) => f64::NAN,
            });
            ProbMeasure::new(base, density)
        }
    }
}

/// The fiber law `ρ_t` together with the fiber measure and the unnormalized
/// restriction `ρ̃_t = f ν_t`.
#[derive(Clone, Debug)]
pub struct FiberConditional {
    pub base_point: Point,
    pub fiber: ReferenceMeasure,
    /// `∫ f dν_t`, the pushforward density at `t`.
    pub mass: f64,
    pub conditional: ProbMeasure,
    density: Density,
}

impl FiberConditional {
    /// `(ν_t, f)`: the measure `ρ̃_t = f ν_t`, of total mass [`Self::mass`].
    pub fn unnormalized(&self) -> (&ReferenceMeasure, &Density) {
        (&self.fiber, &self.density)
    }
}

pub fn fiber_conditional(rho: &ProbMeasure, d: &Disintegration, t: &Point) -> Result<FiberConditional> {
    check_reference(rho, d)?;
    let fiber = d.fiber(t)?;
    let mass = fiber.integrate(|x| rho.eval(x))?.value;
    if !(mass > 0.0) {
        return Err(Error::ZeroMassFiber(t.clone()));
    }
    let conditional = ProbMeasure::new(
        fiber.clone(),
        Density::Scaled(Box::new(rho.density().clone()), 1.0 / mass),
    )?;
    Ok(FiberConditional {
        base_point: t.clone(),
        fiber,
        mass,
        conditional,
        density: rho.density().clone(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FiberRow {
    pub t: Point,
    pub fiber_entropy: f64,
    pub pushforward_density: f64,
}

/// The three terms of the chain rule, each computed on its own.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChainRuleReport {
    pub total: f64,
    pub marginal: f64,
    pub conditional: f64,
    pub discrepancy: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub fibers: Vec<FiberRow>,
}

impl ChainRuleReport {
    /// Fiber table as CSV: `t,fiber_entropy,pushforward_density`.
    pub fn fiber_csv(&self) -> String {
        let mut out = String::from("t,fiber_entropy,pushforward_density\n");
        for row in &self.fibers {
            let t: Vec<String> = row
                .t
                .atoms
                .iter()
                .map(|a| a.to_string())
                .chain(row.t.coords.iter().map(|&x| fmt17(x)))
                .collect();
            let _ = writeln!(
                out,
                "{},{},{}",
                t.join(";"),
                fmt17(row.fiber_entropy),
                fmt17(row.pushforward_density)
            );
        }
        out
    }
}

/// Computes `S_μ(ρ)`, `S_ξ(T_*ρ)` and `∫ S_{ν_t}(ρ_t) dT_*ρ(t)` independently.
/// Fibers without mass carry no `T_*ρ` weight and are skipped.
pub fn chain_rule_report(rho: &ProbMeasure, d: &Disintegration) -> Result<ChainRuleReport> {
    check_reference(rho, d)?;
    let total = entropy(rho)?.value;
    let marginal = entropy(&pushforward(rho, d)?)?.value;
    let mut fibers = Vec::new();
    let conditional = d
        .base()
        .try_integrate_with(&Quadrature::default(), |t| {
            match fiber_conditional(rho, d, t) {
                Ok(fc) => {
                    let s = entropy(&fc.conditional)?.value;
                    fibers.push(FiberRow {
                        t: t.clone(),
                        fiber_entropy: s,
                        pushforward_density: fc.mass,
                    });
                    Ok(fc.mass * s)
                }
                Err(Error::ZeroMassFiber(_)) => {
                    fibers.push(FiberRow {
                        t: t.clone(),
                        fiber_entropy: 0.0,
                        pushforward_density: 0.0,
                    });
                    Ok(0.0)
                }
                Err(e) => Err(e),
            }
        })?
        .value;
    let discrepancy = (total - marginal - conditional).abs();
    let tolerance = d.tolerance();
    Ok(ChainRuleReport {
        total,
        marginal,
        conditional,
        discrepancy,
        tolerance,
        passed: discrepancy <= tolerance,
        fibers,
    })
}

/// Chain rule in polar coordinates against the flat reference `dr dθ`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeformedPolarReport {
    /// `S_μ(ρ)` against `dx dy`.
    pub total: f64,
    /// `S_ν(ρ)` against `dr dθ`.
    pub flat: f64,
    /// `E_ρ[ln R]`.
    pub expected_log_radius: f64,
    /// `|S_ν(ρ) - (S_μ(ρ) - E_ρ[ln R])|`.
    pub flat_residual: f64,
    /// `∫ S_{r dθ}(ρ_r) dR_*ρ(r)`.
    pub conditional: f64,
    /// `∫ S_{dθ}(angular law at r) dR_*ρ(r)`.
    pub deformed_conditional: f64,
    /// `|conditional - (deformed_conditional + E_ρ[ln R])|`.
    pub conditional_residual: f64,
    pub chain_rule_discrepancy: f64,
    pub tolerance: f64,
    pub passed: bool,
}

pub fn deformed_chain_rule_comparison(rho: &ProbMeasure) -> Result<DeformedPolarReport> {
    let (r_min, r_max) = match rho.reference().kind() {
        MeasureKind::Annulus2D { r_min, r_max } => (*r_min, *r_max),
        _ => {
            return Err(Error::InvalidMeasure(
                "the polar comparison needs a law on an annulus".into(),
            ))
        }
    };
    let scale = rho.reference().scale();
    let d = Disintegration::Polar(Polar::new(rho.reference().clone())?);
    let chain = chain_rule_report(rho, &d)?;
    let expected_log_radius = rho.expectation(|p| p.radius().ln())?;

    let cartesian = |r: f64, theta: f64| Point::real(&[r * theta.cos(), r * theta.sin()]);
    let flat_reference = ReferenceMeasure::product(
        ReferenceMeasure::interval(r_min, r_max)?,
        ReferenceMeasure::interval(0.0, 2.0 * PI)?,
    )
    .scaled(scale)?;
    let inner = Arc::new(rho.density().clone());
    let flat_density = Density::custom(move |p| {
        let (r, theta) = (p.coords[0], p.coords[1]);
        r * inner.eval(&cartesian(r, theta))
    });
    let flat = entropy(&ProbMeasure::new(flat_reference, flat_density)?)?.value;

    // Angular law at radius r against dθ, weighted by the radial marginal r F(r).
    let angles = ReferenceMeasure::interval(0.0, 2.0 * PI)?.scaled(scale)?;
    let deformed_conditional = ReferenceMeasure::interval(r_min, r_max)?
        .try_integrate_with(&Quadrature::default(), |rp| {
            let r = rp.coords[0];
            let f_at = |p: &Point| rho.eval(&cartesian(r, p.coords[0]));
            let mass = angles.integrate(f_at)?.value;
            if mass <= 0.0 {
                return Ok(0.0);
            }
            let s = angles
                .integrate(|p| crate::prob::neg_x_ln_x(f_at(p) / mass))?
                .value;
            Ok(r * mass * s)
        })?
        .value;

    let flat_residual = (flat - (chain.total - expected_log_radius)).abs();
    let conditional_residual =
        (chain.conditional - (deformed_conditional + expected_log_radius)).abs();
    Ok(DeformedPolarReport {
        total: chain.total,
        flat,
        expected_log_radius,
        flat_residual,
        conditional: chain.conditional,
        deformed_conditional,
        conditional_residual,
        chain_rule_discrepancy: chain.discrepancy,
        tolerance: DEFORMED_TOL,
        passed: flat_residual <= DEFORMED_TOL && conditional_residual <= DEFORMED_TOL,
    })
}

/// Conditional entropy term computed directly from atom masses, as an oracle
/// for discrete kernels: `Σ_t P(T=t) H(ρ_t)` with `ρ_t` against `ν_t`.
#[cfg(test)]
fn discrete_conditional_term(rho: &ProbMeasure, d: &Disintegration) -> Result<f64> {
    let masses = rho
        .atom_masses()
        .ok_or_else(|| Error::InvalidMeasure("needs an atomic law".into()))?;
    let mut by_fiber: BTreeMap<Vec<usize>, Vec<(Point, f64)>> = BTreeMap::new();
    for (x, m) in masses {
        let t = d.project(&x)?;
        by_fiber.entry(t.atoms.to_vec()).or_default().push((x, m));
    }
    let mut terms = Vec::new();
    for (t, xs) in by_fiber {
        let pt: f64 = crate::numeric::compensated_sum(xs.iter().map(|(_, m)| *m));
        if pt == 0.0 {
            continue;
        }
        let fiber = d.fiber(&Point::atoms(&t))?;
        let weights: BTreeMap<Vec<usize>, f64> = atomic(&fiber, "fiber")?
            .into_iter()
            .map(|(p, w)| (p.atoms.to_vec(), w))
            .collect();
        for (x, m) in xs {
            if m > 0.0 {
                let w = weights[x.atoms.as_slice()];
                terms.push(-m * (m / (pt * w)).ln());
            }
        }
    }
    Ok(crate::numeric::compensated_sum(terms))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn z6_law() -> (Disintegration, ProbMeasure) {
        let g = Arc::new(FiniteGroup::cyclic(6).unwrap());
        let d = GroupQuotient::canonical(g, &[0, 3], 1.0, 1.0).unwrap();
        let rho = ProbMeasure::from_masses(d.total.clone(), &[0.05, 0.10, 0.15, 0.20, 0.25, 0.25]).unwrap();
        (Disintegration::GroupQuotient(d), rho)
    }

    fn correlated_pair() -> (Disintegration, ProbMeasure) {
        let total = ReferenceMeasure::counting(4).unwrap();
        let d = DiscreteMap::conditional(total.clone(), &[0, 0, 1, 1]).unwrap();
        let rho = ProbMeasure::from_masses(total, &[0.4, 0.1, 0.1, 0.4]).unwrap();
        (Disintegration::DiscreteMap(d), rho)
    }

    #[test]
    fn discrete_validation_is_exact() {
        let (d, _) = correlated_pair();
        assert!(validate_disintegration(&d, &default_battery(1)).unwrap() <= EXACT_TOL);
        d.check_concentration().unwrap();
        let weighted = ReferenceMeasure::discrete(vec![3, 5, 8, 13], vec![0.5, 1.5, 2.0, 0.25]).unwrap();
        let base = ReferenceMeasure::discrete(vec![0, 1], vec![2.0, 0.5]).unwrap();
        let d = Disintegration::DiscreteMap(DiscreteMap::over_base(weighted, &[1, 0, 1, 0], base).unwrap());
        assert!(validate_disintegration(&d, &default_battery(2)).unwrap() <= EXACT_TOL);
        assert!(validate_disintegration::<BatteryFunction>(&d, &[]).is_err());
    }

    #[test]
    fn misplaced_fiber_rejected() {
        let total = ReferenceMeasure::counting(2).unwrap();
        let base = ReferenceMeasure::counting(2).unwrap();
        let map = vec![(Point::atom(0), Point::atom(0)), (Point::atom(1), Point::atom(1))];
        let mut fibers = BTreeMap::new();
        fibers.insert(vec![0], ReferenceMeasure::discrete(vec![1], vec![1.0]).unwrap());
        assert!(DiscreteMap::new(total, map, base, fibers).is_err());
    }

    #[test]
    fn polar_validation_unit_function() {
        let d = Disintegration::Polar(Polar::new(ReferenceMeasure::annulus(1.0, 2.0).unwrap()).unwrap());
        let one = |_: &Point| 1.0;
        let r = validate_disintegration(&d, &[one]).unwrap();
        assert!(r <= 1e-10, "{r}");
        assert!(validate_disintegration(&d, &default_battery(3)[..3]).unwrap() <= QUADRATURE_TOL);
    }

    #[test]
    fn group_validation_indicator() {
        let (d, _) = z6_law();
        let indicator = |p: &Point| if p.atoms[0] == 1 { 1.0 } else { 0.0 };
        let lhs = d.total().integrate(indicator).unwrap().value;
        let rhs = d
            .base()
            .try_integrate_with(&Quadrature::default(), |t| Ok(d.fiber(t)?.integrate(indicator)?.value))
            .unwrap()
            .value;
        assert_eq!((lhs, rhs), (1.0, 1.0));
        assert!(validate_disintegration(&d, &default_battery(4)).unwrap() <= EXACT_TOL);
        d.check_concentration().unwrap();
    }

    #[test]
    fn pushforward_examples() {
        let (d, rho) = z6_law();
        let q = pushforward(&rho, &d).unwrap();
        let masses: Vec<f64> = q.atom_masses().unwrap().into_iter().map(|(_, m)| m).collect();
        for (m, want) in masses.iter().zip([0.25, 0.35, 0.40]) {
            assert_abs_diff_eq!(*m, want, epsilon = 1e-15);
        }

        let ann = ProbMeasure::uniform(ReferenceMeasure::annulus(1.0, 2.0).unwrap()).unwrap();
        let polar = Disintegration::Polar(Polar::new(ann.reference().clone()).unwrap());
        let radial = pushforward(&ann, &polar).unwrap();
        for r in [1.0, 1.3, 1.5, 2.0] {
            assert_abs_diff_eq!(radial.eval(&Point::real(&[r])), 2.0 * r / 3.0, epsilon = 1e-12);
        }

        let total = ReferenceMeasure::product(
            ReferenceMeasure::interval(0.0, 1.0).unwrap(),
            ReferenceMeasure::interval(0.0, 2.0).unwrap(),
        );
        let g = Density::truncated_gaussian(0.4, 0.3, 0.0, 1.0).unwrap();
        let h = Density::Constant(0.5);
        let rho = ProbMeasure::new(
            total.clone(),
            Density::Product(Box::new(g.clone()), Box::new(h), Arity { atoms: 0, coords: 1 }),
        )
        .unwrap();
        let d = Disintegration::ProductProjection(ProductProjection::new(total).unwrap());
        let marginal = pushforward(&rho, &d).unwrap();
        let t = Point::real(&[0.7]);
        assert_abs_diff_eq!(marginal.eval(&t), g.eval(&t), epsilon = 1e-12);
    }

    #[test]
    fn polar_fiber_is_uniform_on_circle() {
        let ann = ProbMeasure::uniform(ReferenceMeasure::annulus(1.0, 2.0).unwrap()).unwrap();
        let d = Disintegration::Polar(Polar::new(ann.reference().clone()).unwrap());
        let fc = fiber_conditional(&ann, &d, &Point::real(&[1.5])).unwrap();
        let on_circle = Point::real(&[0.0, 1.5]);
        assert_abs_diff_eq!(fc.conditional.eval(&on_circle), 1.0 / (2.0 * PI * 1.5), epsilon = 1e-12);
        assert_abs_diff_eq!(fc.mass, 2.0 * 1.5 / 3.0, epsilon = 1e-12);
        let s = entropy(&fc.conditional).unwrap().value;
        assert_abs_diff_eq!(s, (2.0 * PI * 1.5).ln(), epsilon = 1e-12);
        let (nu, f) = fc.unnormalized();
        assert_abs_diff_eq!(nu.integrate(|p| f.eval(p)).unwrap().value, fc.mass, epsilon = 1e-15);
    }

    #[test]
    fn discrete_conditionals_reconstruct_the_law() {
        let total = ReferenceMeasure::counting(6).unwrap();
        let masses = [0.05, 0.1, 0.2, 0.15, 0.3, 0.2];
        let map = [0, 1, 2, 0, 1, 2];
        let d = Disintegration::DiscreteMap(DiscreteMap::conditional(total.clone(), &map).unwrap());
        let rho = ProbMeasure::from_masses(total, &masses).unwrap();
        let marginal = pushforward(&rho, &d).unwrap().atom_masses().unwrap();
        // P(B) = Σ_t P(T=t) P_t(B) for every subset B of the six atoms.
        for b in 0u32..64 {
            let in_b = |p: &Point| b >> p.atoms[0] & 1 == 1;
            let direct: f64 = masses.iter().enumerate().filter(|(i, _)| b >> i & 1 == 1).map(|(_, m)| m).sum();
            let mut rebuilt = 0.0;
            for (t, pt) in &marginal {
                let fc = fiber_conditional(&rho, &d, t).unwrap();
                let pb = fc
                    .conditional
                    .atom_masses()
                    .unwrap()
                    .into_iter()
                    .filter(|(x, _)| in_b(x))
                    .map(|(_, m)| m)
                    .sum::<f64>();
                // ρ_t(B) = ρ(B ∩ {T=t}) / ρ(T=t).
                let joint: f64 = masses
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| b >> i & 1 == 1 && map[*i] == t.atoms[0])
                    .map(|(_, m)| m)
                    .sum();
                assert_abs_diff_eq!(pb, joint / pt, epsilon = 1e-15);
                rebuilt += pt * pb;
            }
            assert_abs_diff_eq!(rebuilt, direct, epsilon = 1e-15);
        }
    }

    #[test]
    fn zero_mass_fiber_errors() {
        let total = ReferenceMeasure::counting(4).unwrap();
        let d = Disintegration::DiscreteMap(DiscreteMap::conditional(total.clone(), &[0, 0, 1, 1]).unwrap());
        let rho = ProbMeasure::from_masses(total, &[0.5, 0.5, 0.0, 0.0]).unwrap();
        assert!(matches!(
            fiber_conditional(&rho, &d, &Point::atom(1)),
            Err(Error::ZeroMassFiber(_))
        ));
        let report = chain_rule_report(&rho, &d).unwrap();
        assert!(report.discrepancy <= EXACT_TOL);
        assert_abs_diff_eq!(report.conditional, 2f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn chain_rule_product_of_uniforms() {
        let total = ReferenceMeasure::product(
            ReferenceMeasure::counting(2).unwrap(),
            ReferenceMeasure::counting(2).unwrap(),
        );
        let rho = ProbMeasure::uniform(total.clone()).unwrap();
        let d = Disintegration::ProductProjection(ProductProjection::new(total).unwrap());
        let r = chain_rule_report(&rho, &d).unwrap();
        assert_abs_diff_eq!(r.total, 4f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(r.marginal, 2f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(r.conditional, 2f64.ln(), epsilon = 1e-15);
        assert!(r.discrepancy <= EXACT_TOL && r.passed);
    }

    #[test]
    fn chain_rule_group_example() {
        let (d, rho) = z6_law();
        let r = chain_rule_report(&rho, &d).unwrap();
        // Exhaustive oracle: quotient masses and the three two-point fibers.
        let q = [0.25f64, 0.35, 0.40];
        let fibers = [[0.05f64, 0.20], [0.10, 0.25], [0.15, 0.25]];
        let marginal: f64 = q.iter().map(|p| -p * p.ln()).sum();
        let conditional: f64 = q
            .iter()
            .zip(fibers)
            .map(|(p, f)| p * f.iter().map(|m| -(m / p) * (m / p).ln()).sum::<f64>())
            .sum();
        let total: f64 = [0.05f64, 0.10, 0.15, 0.20, 0.25, 0.25].iter().map(|p| -p * p.ln()).sum();
        assert_abs_diff_eq!(r.marginal, marginal, epsilon = 1e-14);
        assert_abs_diff_eq!(r.conditional, conditional, epsilon = 1e-14);
        assert_abs_diff_eq!(r.total, total, epsilon = 1e-14);
        assert!(r.discrepancy <= EXACT_TOL);
        assert_abs_diff_eq!(r.conditional, discrete_conditional_term(&rho, &d).unwrap(), epsilon = 1e-14);
    }

    #[test]
    fn group_quotient_extremes() {
        let g = Arc::new(FiniteGroup::symmetric(3).unwrap());
        let masses = [0.3, 0.05, 0.1, 0.2, 0.15, 0.2];
        let trivial = GroupQuotient::canonical(g.clone(), &[g.identity()], 1.0, 1.0).unwrap();
        let rho = ProbMeasure::from_masses(trivial.total.clone(), &masses).unwrap();
        let r = chain_rule_report(&rho, &Disintegration::GroupQuotient(trivial)).unwrap();
        assert_eq!(r.conditional, 0.0);
        assert_abs_diff_eq!(r.marginal, r.total, epsilon = 1e-15);

        let all: Vec<usize> = (0..6).collect();
        let whole = GroupQuotient::canonical(g, &all, 1.0, 1.0).unwrap();
        let r = chain_rule_report(&rho, &Disintegration::GroupQuotient(whole)).unwrap();
        assert_eq!(r.marginal, 0.0);
        assert_abs_diff_eq!(r.conditional, r.total, epsilon = 1e-15);
    }

    #[test]
    fn group_scale_coherence() {
        let g = Arc::new(FiniteGroup::cyclic(6).unwrap());
        let masses = [0.05, 0.10, 0.15, 0.20, 0.25, 0.25];
        let base = GroupQuotient::canonical(g.clone(), &[0, 3], 1.0, 1.0).unwrap();
        let rho = ProbMeasure::from_masses(base.total.clone(), &masses).unwrap();
        let r0 = chain_rule_report(&rho, &Disintegration::GroupQuotient(base)).unwrap();
        for c in [0.1, 2.0, 7.5] {
            let d = GroupQuotient::canonical(g.clone(), &[0, 3], 1.0 / c, c).unwrap();
            let rho_c = ProbMeasure::from_masses(d.total.clone(), &masses).unwrap();
            let r = chain_rule_report(&rho_c, &Disintegration::GroupQuotient(d)).unwrap();
            assert_abs_diff_eq!(r.total, r0.total, epsilon = 1e-12);
            assert_abs_diff_eq!(r.marginal, r0.marginal - c.ln(), epsilon = 1e-12);
            assert_abs_diff_eq!(r.conditional, r0.conditional + c.ln(), epsilon = 1e-12);
            assert!(r.discrepancy <= EXACT_TOL);
        }
        assert!(GroupQuotient::new(g, &[0, 3], 1.0, 2.0, 2.0).is_err());
    }

    #[test]
    fn representative_choice_is_irrelevant() {
        let (d, rho) = z6_law();
        let Disintegration::GroupQuotient(gq) = &d else { unreachable!() };
        let r0 = chain_rule_report(&rho, &d).unwrap();
        let alt = gq.clone().with_representatives(vec![3, 4, 5]).unwrap();
        let r1 = chain_rule_report(&rho, &Disintegration::GroupQuotient(alt)).unwrap();
        assert!((r0.conditional - r1.conditional).abs() <= 1e-12);
        assert!(gq.clone().with_representatives(vec![1, 4, 5]).is_err());
    }

    #[test]
    fn polar_chain_rule_uniform() {
        let ann = ProbMeasure::uniform(ReferenceMeasure::annulus(1.0, 2.0).unwrap()).unwrap();
        let d = Disintegration::Polar(Polar::new(ann.reference().clone()).unwrap());
        let r = chain_rule_report(&ann, &d).unwrap();
        assert_abs_diff_eq!(r.total, (3.0 * PI).ln(), epsilon = 1e-6);
        assert!(r.discrepancy <= QUADRATURE_TOL, "{}", r.discrepancy);
        assert!(r.fiber_csv().lines().count() > 100);
    }

    #[test]
    fn deformed_polar_identities() {
        let m = ReferenceMeasure::annulus(1.0, 2.0).unwrap();
        let mut last_gap = f64::INFINITY;
        for width in [0.2, 0.05] {
            let f = Density::annulus_radial(1.5, width, 1.0, 2.0).unwrap();
            let rho = ProbMeasure::new(m.clone(), f).unwrap();
            let r = deformed_chain_rule_comparison(&rho).unwrap();
            assert!(r.passed, "{r:?}");
            assert!(r.chain_rule_discrepancy <= QUADRATURE_TOL);
            // Concentrating on r = 1.5 drives E ln R to ln 1.5.
            let gap = (r.expected_log_radius - 1.5f64.ln()).abs();
            assert!(gap < last_gap);
            last_gap = gap;
        }
        assert!(last_gap < 1e-3);
        let line = ProbMeasure::uniform(ReferenceMeasure::interval(0.0, 1.0).unwrap()).unwrap();
        assert!(deformed_chain_rule_comparison(&line).is_err());
    }

    #[test]
    fn continuous_product_chain_rule() {
        let total = ReferenceMeasure::product(
            ReferenceMeasure::interval(-1.0, 1.0).unwrap(),
            ReferenceMeasure::interval(0.0, 1.0).unwrap(),
        );
        // Coupled density (1 + x y) / 2 on [-1, 1] x [0, 1].
        let rho = ProbMeasure::new(
            total.clone(),
            Density::custom(|p| 0.5 * (1.0 + p.coords[0] * p.coords[1])),
        )
        .unwrap();
        let d = Disintegration::ProductProjection(ProductProjection::new(total).unwrap());
        let r = chain_rule_report(&rho, &d).unwrap();
        assert!(r.discrepancy <= QUADRATURE_TOL, "{}", r.discrepancy);
        assert!(validate_disintegration(&d, &default_battery(9)[..3]).unwrap() <= QUADRATURE_TOL);
    }
}
