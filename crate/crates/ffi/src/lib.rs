//! C ABI over `dislab`.
//!
//! Objects are opaque handles returned through `out` parameters and
//! released with the matching `*_free`. Every fallible call returns a
//! [`DislabStatus`]; on failure the message is kept per thread and can be
//! copied out with [`dislab_last_error`]. Constructors copy their inputs, and
//! handles are immutable, so they may be shared across threads.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use dislab::aep::{self, TypicalSetReport, TypicalSetSpec, DEFAULT_TYPE_BUDGET};
use dislab::fibers::{
    self, ChainRuleReport, DiscreteMap, Disintegration, GroupQuotient, Polar, ProductProjection,
};
use dislab::measures::{FiniteGroup, MeasureKind, ReferenceMeasure};
use dislab::prob::{self, ProbMeasure};
use dislab::Error;

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DislabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidMeasure = 3,
    InvalidGroup = 4,
    NotSubgroup = 5,
    NotNormal = 6,
    Normalization = 7,
    NegativeDensity = 8,
    Divergent = 9,
    Incompatible = 10,
    AbsoluteContinuity = 11,
    ZeroMassFiber = 12,
    Budget = 13,
    Numerical = 14,
    Panic = 15,
}

impl From<&Error> for DislabStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidArgument(_) => DislabStatus::InvalidArgument,
            Error::InvalidMeasure(_) | Error::Singular(_) => DislabStatus::InvalidMeasure,
            Error::InvalidGroup(_) => DislabStatus::InvalidGroup,
            Error::NotSubgroup(_) => DislabStatus::NotSubgroup,
            Error::NotNormal(_) => DislabStatus::NotNormal,
            Error::Normalization { .. } => DislabStatus::Normalization,
            Error::NegativeDensity { .. } => DislabStatus::NegativeDensity,
            Error::Divergent(_) => DislabStatus::Divergent,
            Error::Incompatible(_) => DislabStatus::Incompatible,
            Error::AbsoluteContinuity { .. } => DislabStatus::AbsoluteContinuity,
            Error::ZeroMassFiber(_) => DislabStatus::ZeroMassFiber,
            Error::Budget { .. } => DislabStatus::Budget,
            _ => DislabStatus::Numerical,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

/// Runs `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DislabStatus {
    set_error(String::new());
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DislabStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            DislabStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            DislabStatus::from(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            DislabStatus::Panic
        }
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn put<T>(out: *mut T, value: T, what: &'static str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null(what));
    }
    out.write(value);
    Ok(())
}

unsafe fn put_handle<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    put(out, Box::into_raw(Box::new(value)), "out")
}

/// Copies the calling thread's last error message, NUL-terminated and
/// truncated to `capacity`. Returns the full message length in bytes.
///
/// # Safety
/// `buffer` must be null or point to `capacity` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn dislab_last_error(buffer: *mut c_char, capacity: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buffer.is_null() && capacity > 0 {
            let n = msg.len().min(capacity - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buffer, n);
            *buffer.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dislab_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(s) => s,
        Err(_) => panic!("version string"),
    };
    VERSION.as_ptr()
}

/// A finite group.
pub struct DislabGroup(Arc<FiniteGroup>);

/// A reference measure.
pub struct DislabMeasure(ReferenceMeasure);

/// A probability law with a density against a reference measure.
pub struct DislabProb(ProbMeasure);

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dislab_group_cyclic(n: usize, out: *mut *mut DislabGroup) -> DislabStatus {
    guard(|| put_handle(out, DislabGroup(Arc::new(FiniteGroup::cyclic(n)?))))
}

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dislab_group_symmetric(k: usize, out: *mut *mut DislabGroup) -> DislabStatus {
    guard(|| put_handle(out, DislabGroup(Arc::new(FiniteGroup::symmetric(k)?))))
}

/// Group from a row-major `order × order` composition table.
///
/// # Safety
/// `table` must point to `order * order` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dislab_group_from_table(
    order: usize,
    table: *const usize,
    identity: usize,
    out: *mut *mut DislabGroup,
) -> DislabStatus {
    guard(|| {
        let flat = slice(table, order.saturating_mul(order), "table")?;
        let rows = flat.chunks(order.max(1)).map(<[usize]>::to_vec).collect();
        put_handle(out, DislabGroup(Arc::new(FiniteGroup::new(rows, identity)?)))
    })
}

/// Group order, or 0 for a null handle.
///
/// # Safety
/// `group` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dislab_group_order(group: *const DislabGroup) -> usize {
    group.as_ref().map_or(0, |g| g.0.order())
}

/// # Safety
/// `group` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn dislab_group_free(group: *mut DislabGroup) {
    if !group.is_null() {
        drop(Box::from_raw(group));
    }
}

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dislab_measure_counting(n: usize, out: *mut *mut DislabMeasure) -> DislabStatus {
    guard(|| put_handle(out, DislabMeasure(ReferenceMeasure::counting(n)?)))
}

/// Atoms `0..len` with the given weights.
///
/// # Safety
/// `weights` must point to `len` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dislab_measure_discrete(
    weights: *const f64,
    len: usize,
    out: *mut *mut DislabMeasure,
) -> DislabStatus {
    guard(|| {
        let w = slice(weights, len, "weights")?;
        put_handle(out, DislabMeasure(ReferenceMeasure::discrete((0..len).collect(), w.to_vec())?))
    })
}

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dislab_measure_interval(a: f64, b: f64, out: *mut *mut DislabMeasure) -> DislabStatus {
    guard(|| put_handle(out, DislabMeasure(ReferenceMeasure::interval(a, b)?)))
}

/// # Safety
/// `lower` and `upper` must point to `dim` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dislab_measure_box(
    lower: *const f64,
    upper: *const f64,
    dim: usize,
    out: *mut *mut DislabMeasure,
) -> DislabStatus {
    guard(|| {
        let (l, u) = (slice(lower, dim, "lower")?, slice(upper, dim, "upper")?);
        put_handle(out, DislabMeasure(ReferenceMeasure::lebesgue_box(l.to_vec(), u.to_vec())?))
    })
}

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dislab_measure_annulus(r_min: f64, r_max: f64, out: *mut *mut DislabMeasure) -> DislabStatus {
    guard(|| put_handle(out, DislabMeasure(ReferenceMeasure::annulus(r_min, r_max)?)))
}

/// `scale` times counting measure on the group.
///
/// # Safety
/// `group` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dislab_measure_group_haar(
    group: *const DislabGroup,
    scale: f64,
    out: *mut *mut DislabMeasure,
) -> DislabStatus {
    guard(|| {
        let g = deref(group, "group")?;
        put_handle(out, DislabMeasure(ReferenceMeasure::group_haar(Arc::clone(&g.0), scale)?))
    })
}

/// # Safety
/// `left` and `right` must be live handles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dislab_measure_product(
    left: *const DislabMeasure,
    right: *const DislabMeasure,
    out: *mut *mut DislabMeasure,
) -> DislabStatus {
    guard(|| {
        let (l, r) = (deref(left, "left")?, deref(right, "right")?);
        put_handle(out, DislabMeasure(ReferenceMeasure::product(l.0.clone(), r.0.clone())))
    })
}

/// A new measure equal to `alpha` times `measure`.
///
/// # Safety
/// `measure` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dislab_measure_scaled(
    measure: *const DislabMeasure,
    alpha: f64,
    out: *mut *mut DislabMeasure,
) -> DislabStatus {
    guard(|| {
        let m = deref(measure, "measure")?;
        put_handle(out, DislabMeasure(m.0.clone().scaled(alpha)?))
    })
}

/// Total mass, or NaN for a null handle.
///
/// # Safety
/// `measure` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dislab_measure_total_mass(measure: *const DislabMeasure) -> f64 {
    measure.as_ref().map_or(f64::NAN, |m| m.0.total_mass())
}

/// # Safety
/// `measure` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn dislab_measure_free(measure: *mut DislabMeasure) {
    if !measure.is_null() {
        drop(Box::from_raw(measure));
    }
}

/// Law with the given probability per atom, in the measure's atom order.
///
/// # Safety
/// `measure` must be a live handle, `masses` must point to `len` values and
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dislab_prob_from_masses(
    measure: *const DislabMeasure,
    masses: *const f64,
    len: usize,
    out: *mut *mut DislabProb,
) -> DislabStatus {
    guard(|| {
        let m = deref(measure, "measure")?;
        let p = slice(masses, len, "masses")?;
        put_handle(out, DislabProb(ProbMeasure::from_masses(m.0.clone(), p)?))
    })
}

/// Constant density `1 / total mass`.
///
/// # Safety
/// `measure` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dislab_prob_uniform(measure: *const DislabMeasure, out: *mut *mut DislabProb) -> DislabStatus {
    guard(|| {
        let m = deref(measure, "measure")?;
        put_handle(out, DislabProb(ProbMeasure::uniform(m.0.clone())?))
    })
}

/// # Safety
/// `prob` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn dislab_prob_free(prob: *mut DislabProb) {
    if !prob.is_null() {
        drop(Box::from_raw(prob));
    }
}

/// Entropy in nats and its error estimate.
///
/// # Safety
/// `prob` must be a live handle; `value` and `error` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dislab_entropy(prob: *const DislabProb, value: *mut f64, error: *mut f64) -> DislabStatus {
    guard(|| {
        let s = prob::entropy(&deref(prob, "prob")?.0)?;
        put(value, s.value, "value")?;
        put(error, s.error, "error")
    })
}

/// `D(p || q)` in nats; both laws must share the reference measure.
///
/// # Safety
/// `p` and `q` must be live handles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dislab_kl_divergence(p: *const DislabProb, q: *const DislabProb, out: *mut f64) -> DislabStatus {
    guard(|| {
        let kl = prob::kl_divergence(&deref(p, "p")?.0, &deref(q, "q")?.0)?;
        put(out, kl, "out")
    })
}

/// The three chain-rule terms in nats.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DislabChainRule {
    pub total: f64,
    pub marginal: f64,
    pub conditional: f64,
    pub discrepancy: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl From<&ChainRuleReport> for DislabChainRule {
    fn from(r: &ChainRuleReport) -> Self {
        Self {
            total: r.total,
            marginal: r.marginal,
            conditional: r.conditional,
            discrepancy: r.discrepancy,
            tolerance: r.tolerance,
            passed: r.passed,
        }
    }
}

unsafe fn chain_rule(
    prob: *const DislabProb,
    out: *mut DislabChainRule,
    build: impl FnOnce(&ReferenceMeasure) -> dislab::Result<Disintegration>,
) -> DislabStatus {
    guard(|| {
        let rho = &deref(prob, "prob")?.0;
        let d = build(rho.reference())?;
        let r = fibers::chain_rule_report(rho, &d)?;
        put(out, DislabChainRule::from(&r), "out")
    })
}

/// Chain rule along `G -> G/H` for a law on a group reference. The Haar scale
/// of `G` is the reference's; `H` gets `subgroup_scale`.
///
/// # Safety
/// `prob` must be a live handle, `subgroup` must point to `len` values and
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dislab_chain_rule_group_quotient(
    prob: *const DislabProb,
    subgroup: *const usize,
    len: usize,
    subgroup_scale: f64,
    out: *mut DislabChainRule,
) -> DislabStatus {
    let h = match slice(subgroup, len, "subgroup") {
        Ok(h) => h.to_vec(),
        Err(_) => return guard(|| Err(Failure::Null("subgroup"))),
    };
    chain_rule(prob, out, |m| {
        let MeasureKind::GroupHaar { group, scale } = m.kind() else {
            return Err(Error::InvalidMeasure("the law is not on a group reference".into()));
        };
        let total = scale * m.scale();
        Ok(Disintegration::GroupQuotient(GroupQuotient::new(
            Arc::clone(group),
            &h,
            total,
            total / subgroup_scale,
            subgroup_scale,
        )?))
    })
}

/// Chain rule along an atom map; `map[i]` is the image of the `i`-th atom.
///
/// # Safety
/// `prob` must be a live handle, `map` must point to `len` values and `out`
/// must be valid.
#[no_mangle]
pub unsafe extern "C" fn dislab_chain_rule_discrete_map(
    prob: *const DislabProb,
    map: *const usize,
    len: usize,
    out: *mut DislabChainRule,
) -> DislabStatus {
    let map = match slice(map, len, "map") {
        Ok(m) => m.to_vec(),
        Err(_) => return guard(|| Err(Failure::Null("map"))),
    };
    chain_rule(prob, out, |m| {
        Ok(Disintegration::DiscreteMap(DiscreteMap::conditional(m.clone(), &map)?))
    })
}

/// Chain rule along the projection of a product reference onto its left factor.
///
/// # Safety
/// `prob` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dislab_chain_rule_product_projection(
    prob: *const DislabProb,
    out: *mut DislabChainRule,
) -> DislabStatus {
    chain_rule(prob, out, |m| {
        Ok(Disintegration::ProductProjection(ProductProjection::new(m.clone())?))
    })
}

/// Chain rule along the radius of an annulus reference.
///
/// # Safety
/// `prob` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dislab_chain_rule_polar(prob: *const DislabProb, out: *mut DislabChainRule) -> DislabStatus {
    chain_rule(prob, out, |m| Ok(Disintegration::Polar(Polar::new(m.clone())?)))
}

/// Typical-set estimates. `lower_ok` is -1 when the premise `P(A) ≥ 1-ε`
/// fails and the lower bound is not asserted.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DislabTypicalSet {
    pub entropy: f64,
    pub prob: f64,
    pub prob_stderr: f64,
    pub volume: f64,
    pub volume_stderr: f64,
    /// NaN when the volume is zero.
    pub rate: f64,
    pub upper_bound: f64,
    pub lower_bound: f64,
    pub upper_ok: bool,
    pub lower_ok: i32,
    pub zero_hits: bool,
}

impl From<&TypicalSetReport> for DislabTypicalSet {
    fn from(r: &TypicalSetReport) -> Self {
        Self {
            entropy: r.entropy,
            prob: r.prob_estimate,
            prob_stderr: r.prob_stderr,
            volume: r.volume,
            volume_stderr: r.volume_stderr,
            rate: r.rate.unwrap_or(f64::NAN),
            upper_bound: r.upper_bound,
            lower_bound: r.lower_bound,
            upper_ok: r.upper_ok,
            lower_ok: r.lower_ok.map_or(-1, i32::from),
            zero_hits: r.zero_hits,
        }
    }
}

/// Exact typical-set volume and probability by type enumeration.
///
/// # Safety
/// `prob` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dislab_exact_typical(
    prob: *const DislabProb,
    n: usize,
    delta: f64,
    epsilon: f64,
    out: *mut DislabTypicalSet,
) -> DislabStatus {
    guard(|| {
        let rho = &deref(prob, "prob")?.0;
        let spec = TypicalSetSpec::new(rho, n, delta)?;
        let r = aep::exact_typical(&spec, epsilon, DEFAULT_TYPE_BUDGET)?;
        put(out, DislabTypicalSet::from(&r), "out")
    })
}

/// Seeded Monte Carlo estimates of the typical-set volume and probability.
///
/// # Safety
/// `prob` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dislab_monte_carlo_typical(
    prob: *const DislabProb,
    n: usize,
    delta: f64,
    epsilon: f64,
    samples: usize,
    seed: u64,
    out: *mut DislabTypicalSet,
) -> DislabStatus {
    guard(|| {
        let rho = &deref(prob, "prob")?.0;
        let spec = TypicalSetSpec::new(rho, n, delta)?;
        let r = aep::monte_carlo_typical(&spec, epsilon, samples, seed)?;
        put(out, DislabTypicalSet::from(&r), "out")
    })
}
