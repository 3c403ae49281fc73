//! C ABI for `nonauto-core`.
//!
//! Operators, perturbation families and evolution approximants are opaque
//! heap handles; create them with the `na_*_new`/constructor functions and
//! release them with the matching `na_*_free`. Every fallible call returns an
//! [`NaStatus`]; on failure [`na_last_error`] describes the problem for the
//! calling thread. Matrices cross the boundary as row-major `double` arrays.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use nonauto_core::dichotomy::check_hyperbolic;
use nonauto_core::evofam::{euler_polygon, refine_to_tolerance, EvolutionFamilyApprox, PerturbationFamily};
use nonauto_core::linop::{self, op_norm, resolvent};
use nonauto_core::metrics::{a_norm, default_lambdas, yosida_distance, MuGrid};
use nonauto_core::semigroup::{expm, fit_growth_bound, GrowthBound};
use nonauto_core::{Error, NormKind, Operator};

pub const NA_NORM_INDUCED1: u32 = 1;
pub const NA_NORM_INDUCED2: u32 = 2;
pub const NA_NORM_INDUCED_INF: u32 = 3;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Singular = 4,
    NotConverged = 5,
    NumericalFailure = 6,
    Panic = 7,
}

/// Opaque square matrix with its norm kind.
pub struct NaOperator(Operator);

/// Opaque perturbation family `t -> B(t)` on a closed interval.
pub struct NaFamily(PerturbationFamily);

/// Opaque Euler-polygon approximant `U_n(t, s)`.
pub struct NaEvolution(EvolutionFamilyApprox);

/// Summary of a hyperbolicity test of a time-1 map.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NaDichotomyReport {
    pub hyperbolic: bool,
    pub spectral_gap: f64,
    pub stable_rank: usize,
    pub alpha: f64,
    pub mdich: f64,
    pub defective: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> NaStatus {
    match e {
        Error::DimMismatch { .. } | Error::NormMismatch { .. } | Error::NotSquare { .. } => NaStatus::DimensionMismatch,
        Error::SingularResolvent { .. } | Error::NotInvertible { .. } => NaStatus::Singular,
        Error::ToleranceNotReached { .. } | Error::TailNotSettled { .. } | Error::EigenFailure { .. } => {
            NaStatus::NotConverged
        }
        e if e.is_numerical() => NaStatus::NumericalFailure,
        _ => NaStatus::InvalidArgument,
    }
}

/// Runs `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), (NaStatus, String)>) -> NaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            NaStatus::Ok
        }
        Ok(Err((s, msg))) => {
            set_error(&msg);
            s
        }
        Err(_) => {
            set_error("internal panic");
            NaStatus::Panic
        }
    }
}

trait IntoFfi<T> {
    fn ffi(self) -> Result<T, (NaStatus, String)>;
}

impl<T> IntoFfi<T> for nonauto_core::Result<T> {
    fn ffi(self) -> Result<T, (NaStatus, String)> {
        self.map_err(|e| (status_of(&e), e.to_string()))
    }
}

fn null(what: &str) -> (NaStatus, String) {
    (NaStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> (NaStatus, String) {
    (NaStatus::InvalidArgument, msg.into())
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, (NaStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut T, v: T, what: &str) -> Result<(), (NaStatus, String)> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(v);
    Ok(())
}

fn norm_kind(k: u32) -> Result<NormKind, (NaStatus, String)> {
    match k {
        NA_NORM_INDUCED1 => Ok(NormKind::Induced1),
        NA_NORM_INDUCED2 => Ok(NormKind::Induced2),
        NA_NORM_INDUCED_INF => Ok(NormKind::InducedInf),
        other => Err(invalid(format!("unknown norm kind {other}"))),
    }
}

unsafe fn boxed<T>(out: *mut *mut T, v: T, what: &str) -> Result<(), (NaStatus, String)> {
    put(out, Box::into_raw(Box::new(v)), what)
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn na_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Copies a row-major `dim x dim` array into a new operator.
///
/// # Safety
/// `entries` must point to `dim * dim` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn na_operator_new(
    entries: *const f64,
    dim: usize,
    norm: u32,
    out: *mut *mut NaOperator,
) -> NaStatus {
    guard(|| {
        if entries.is_null() {
            return Err(null("entries"));
        }
        if dim == 0 {
            return Err(invalid("dimension must be positive"));
        }
        let len = dim.checked_mul(dim).ok_or_else(|| invalid("dimension overflows"))?;
        let data = std::slice::from_raw_parts(entries, len);
        let rows: Vec<&[f64]> = data.chunks(dim).collect();
        let op = Operator::from_rows(&rows, norm_kind(norm)?).ffi()?;
        boxed(out, NaOperator(op), "out")
    })
}

/// Parses the plain-text `dim k` matrix format.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn na_operator_parse(text: *const c_char, norm: u32, out: *mut *mut NaOperator) -> NaStatus {
    guard(|| {
        if text.is_null() {
            return Err(null("text"));
        }
        let s = std::ffi::CStr::from_ptr(text)
            .to_str()
            .map_err(|e| invalid(e.to_string()))?;
        let op = linop::parse_matrix(s, norm_kind(norm)?).ffi()?;
        boxed(out, NaOperator(op), "out")
    })
}

/// # Safety
/// `op` must come from this library and not be freed twice; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn na_operator_free(op: *mut NaOperator) {
    if !op.is_null() {
        drop(Box::from_raw(op));
    }
}

/// Dimension of `op`, or 0 for a null handle.
///
/// # Safety
/// `op` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn na_operator_dim(op: *const NaOperator) -> usize {
    op.as_ref().map_or(0, |o| o.0.dim())
}

/// Writes the entries of `op` row-major into `out`, which holds `len` doubles.
///
/// # Safety
/// `op` must be a live handle and `out` must hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn na_operator_entries(op: *const NaOperator, out: *mut f64, len: usize) -> NaStatus {
    guard(|| {
        let o = &deref(op, "op")?.0;
        let n = o.dim();
        if out.is_null() {
            return Err(null("out"));
        }
        if len < n * n {
            return Err((
                NaStatus::DimensionMismatch,
                format!("buffer holds {len} values, need {}", n * n),
            ));
        }
        let dst = std::slice::from_raw_parts_mut(out, n * n);
        for i in 0..n {
            for j in 0..n {
                dst[i * n + j] = o.get(i, j);
            }
        }
        Ok(())
    })
}

/// Induced operator norm of `op`.
///
/// # Safety
/// `op` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn na_op_norm(op: *const NaOperator, out: *mut f64) -> NaStatus {
    guard(|| put(out, op_norm(&deref(op, "op")?.0), "out"))
}

/// `R(mu, A) = (mu I - A)^{-1}`.
///
/// # Safety
/// `a` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn na_resolvent(a: *const NaOperator, mu: f64, out: *mut *mut NaOperator) -> NaStatus {
    guard(|| {
        let r = resolvent(&deref(a, "a")?.0, mu).ffi()?;
        boxed(out, NaOperator(r), "out")
    })
}

/// `e^{tA}`.
///
/// # Safety
/// `a` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn na_expm(a: *const NaOperator, t: f64, out: *mut *mut NaOperator) -> NaStatus {
    guard(|| {
        let e = expm(&deref(a, "a")?.0, t).ffi()?;
        boxed(out, NaOperator(e), "out")
    })
}

/// Fits `||e^{tA}|| <= M e^{omega0 t}` on `[0, horizon]`.
///
/// # Safety
/// `a` must be a live handle; `m` and `omega0` must be writable.
#[no_mangle]
pub unsafe extern "C" fn na_fit_growth_bound(
    a: *const NaOperator,
    horizon: f64,
    m: *mut f64,
    omega0: *mut f64,
) -> NaStatus {
    guard(|| {
        let gb = fit_growth_bound(&deref(a, "a")?.0, horizon, 0.0, 64).ffi()?;
        put(m, gb.m, "m")?;
        put(omega0, gb.omega0, "omega0")
    })
}

/// `||C||_A` for the growth bound `(m, omega0)` on the default mu-grid.
///
/// # Safety
/// `c` and `a` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn na_a_norm(
    c: *const NaOperator,
    a: *const NaOperator,
    m: f64,
    omega0: f64,
    out: *mut f64,
) -> NaStatus {
    guard(|| {
        let gb = GrowthBound::given(m, omega0).ffi()?;
        let r = a_norm(&deref(c, "c")?.0, &deref(a, "a")?.0, &gb, MuGrid::default()).ffi()?;
        put(out, r.value, "out")
    })
}

/// Yosida distance `limsup lambda^2 ||R(lambda, A) - R(lambda, B)||`.
///
/// # Safety
/// `a` and `b` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn na_yosida_distance(a: *const NaOperator, b: *const NaOperator, out: *mut f64) -> NaStatus {
    guard(|| {
        let (a, b) = (&deref(a, "a")?.0, &deref(b, "b")?.0);
        let floor = linop::spectrum(a)
            .ffi()?
            .spectral_abscissa
            .max(linop::spectrum(b).ffi()?.spectral_abscissa);
        let d = yosida_distance(a, b, &default_lambdas(floor)).ffi()?;
        put(out, d.value, "out")
    })
}

/// `B(t) = B0` on `[t0, t1]`.
///
/// # Safety
/// `b0` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn na_family_constant(
    b0: *const NaOperator,
    t0: f64,
    t1: f64,
    out: *mut *mut NaFamily,
) -> NaStatus {
    guard(|| {
        let f = PerturbationFamily::constant(deref(b0, "b0")?.0.clone(), (t0, t1)).ffi()?;
        boxed(out, NaFamily(f), "out")
    })
}

/// `B(t) = sin(freq t + phase) B0` on `[t0, t1]`.
///
/// # Safety
/// `b0` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn na_family_sinusoid(
    b0: *const NaOperator,
    freq: f64,
    phase: f64,
    t0: f64,
    t1: f64,
    out: *mut *mut NaFamily,
) -> NaStatus {
    guard(|| {
        let f = PerturbationFamily::sinusoid(deref(b0, "b0")?.0.clone(), freq, phase, (t0, t1)).ffi()?;
        boxed(out, NaFamily(f), "out")
    })
}

/// # Safety
/// `f` must come from this library and not be freed twice; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn na_family_free(f: *mut NaFamily) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}

/// Euler polygon at dyadic level `level` over the family's interval.
///
/// # Safety
/// `a` and `b` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn na_euler_polygon(
    a: *const NaOperator,
    b: *const NaFamily,
    level: u32,
    out: *mut *mut NaEvolution,
) -> NaStatus {
    guard(|| {
        let u = euler_polygon(&deref(a, "a")?.0, &deref(b, "b")?.0, level).ffi()?;
        boxed(out, NaEvolution(u), "out")
    })
}

/// Refines until successive approximants of `U(t1, t0)` differ by at most
/// `tol`. `n_final` and `achieved` may be null.
///
/// # Safety
/// `a` and `b` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn na_refine_to_tolerance(
    a: *const NaOperator,
    b: *const NaFamily,
    tol: f64,
    n_max: u32,
    out: *mut *mut NaEvolution,
    n_final: *mut u32,
    achieved: *mut f64,
) -> NaStatus {
    guard(|| {
        let a = &deref(a, "a")?.0;
        let gb = fit_growth_bound(a, 10.0, 0.0, 64).ffi()?;
        let r = refine_to_tolerance(a, &deref(b, "b")?.0, &gb, tol, n_max).ffi()?;
        if !n_final.is_null() {
            n_final.write(r.n_final);
        }
        if !achieved.is_null() {
            achieved.write(r.achieved_delta);
        }
        boxed(out, NaEvolution(r.approx), "out")
    })
}

/// Dyadic level of `u`, or `u32::MAX` for a null handle.
///
/// # Safety
/// `u` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn na_evolution_level(u: *const NaEvolution) -> u32 {
    u.as_ref().map_or(u32::MAX, |u| u.0.level())
}

/// `U_n(t, s)` for `t0 <= s <= t <= t1`.
///
/// # Safety
/// `u` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn na_evolution_evaluate(
    u: *const NaEvolution,
    t: f64,
    s: f64,
    out: *mut *mut NaOperator,
) -> NaStatus {
    guard(|| {
        let m = deref(u, "u")?.0.evaluate(t, s).ffi()?;
        boxed(out, NaOperator(m), "out")
    })
}

/// # Safety
/// `u` must come from this library and not be freed twice; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn na_evolution_free(u: *mut NaEvolution) {
    if !u.is_null() {
        drop(Box::from_raw(u));
    }
}

/// Tests a time-1 map for an exponential dichotomy.
///
/// # Safety
/// `t1` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn na_check_hyperbolic(t1: *const NaOperator, out: *mut NaDichotomyReport) -> NaStatus {
    guard(|| {
        let r = check_hyperbolic(&deref(t1, "t1")?.0).ffi()?;
        put(
            out,
            NaDichotomyReport {
                hyperbolic: r.hyperbolic,
                spectral_gap: r.spectral_gap,
                stable_rank: r.stable_rank,
                alpha: r.alpha,
                mdich: r.mdich,
                defective: r.defective,
            },
            "out",
        )
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn na_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn errors_map_to_statuses() {
        assert_eq!(
            status_of(&Error::DimMismatch { left: 1, right: 2 }),
            NaStatus::DimensionMismatch
        );
        assert_eq!(
            status_of(&Error::SingularResolvent { mu: 1.0, cond: 1e13 }),
            NaStatus::Singular
        );
        assert_eq!(
            status_of(&Error::ToleranceNotReached {
                level: 3,
                best_delta: 1.0
            }),
            NaStatus::NotConverged
        );
        assert_eq!(
            status_of(&Error::DefectiveSpectrum { cond: 1e9 }),
            NaStatus::NumericalFailure
        );
        assert_eq!(status_of(&Error::Config("x".into())), NaStatus::InvalidArgument);
    }

    #[test]
    fn guard_records_messages_and_panics() {
        assert_eq!(guard(|| Err(invalid("nope"))), NaStatus::InvalidArgument);
        assert_eq!(
            unsafe { std::ffi::CStr::from_ptr(na_last_error()) }.to_str().unwrap(),
            "nope"
        );
        assert_eq!(guard(|| panic!("boom")), NaStatus::Panic);
        assert_eq!(guard(|| Ok(())), NaStatus::Ok);
        assert!(unsafe { std::ffi::CStr::from_ptr(na_last_error()) }
            .to_bytes()
            .is_empty());
    }

    #[test]
    fn norm_codes() {
        assert_eq!(norm_kind(NA_NORM_INDUCED1).unwrap(), NormKind::Induced1);
        assert_eq!(norm_kind(NA_NORM_INDUCED_INF).unwrap(), NormKind::InducedInf);
        assert!(norm_kind(0).is_err());
    }
}
