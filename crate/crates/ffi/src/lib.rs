//! C ABI for `corrtest`.
//!
//! Every function returns a [`CtStatus`]. On failure a message is kept in
//! thread-local storage and can be read with [`ct_last_error_message`].
//! Handles are opaque and must be released with their `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use corrtest::combined::{combined_test, contrast_statistic, Classification, CombinedConfig, Procedure};
use corrtest::estimators::GroupSample;
use corrtest::hypotheses::{self, HypothesisSpec};
use corrtest::pipeline::{test_groups, TestOptions, DEFAULT_ALPHA, DEFAULT_BOOT_REPS, DEFAULT_MC_REPS};
use corrtest::quadform::Method;
use corrtest::resampling::WildWeight;
use corrtest::Error;
use nalgebra::{DMatrix, DVector};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    DegenerateData = 4,
    DegenerateHypothesis = 5,
    TransformDomain = 6,
    Config = 7,
    Numerical = 8,
    Panic = 9,
}

impl From<&Error> for CtStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Dimension(_) => CtStatus::Dimension,
            Error::Argument(_) => CtStatus::InvalidArgument,
            Error::ZeroVariance { .. } | Error::DegenerateData(_) => CtStatus::DegenerateData,
            Error::DegenerateHypothesis(_) => CtStatus::DegenerateHypothesis,
            Error::TransformDomain(_) => CtStatus::TransformDomain,
            Error::Config(_) => CtStatus::Config,
            Error::Numerical(_) => CtStatus::Numerical,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtWildWeight {
    Rademacher = 0,
    Gaussian = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtProcedure {
    Taylor = 0,
    Equicoordinate = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtClassification {
    NoRejection = 0,
    EqualCorrelationDifferentVariances = 1,
    DifferentDependence = 2,
}

/// Groups of observations, one matrix per group.
pub struct CtDataset {
    groups: Vec<GroupSample>,
}

/// Linear hypothesis `C r = ζ` on the stacked correlations.
pub struct CtHypothesis {
    spec: HypothesisSpec,
}

/// Options of [`ct_test`]. Start from [`ct_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CtOptions {
    pub alpha: f64,
    pub mc_reps: usize,
    pub boot_reps: usize,
    pub seed: u64,
    pub wild_weight: CtWildWeight,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CtTestResult {
    pub statistic: f64,
    pub critical_value: f64,
    pub p_value: f64,
    /// 1 if the hypothesis is rejected.
    pub reject: i32,
    pub reps: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CtCombinedResult {
    pub classification: CtClassification,
    pub reject_any: i32,
    /// Number of coordinates: `d` variances followed by `d(d-1)/2` correlations.
    pub coordinates: usize,
    pub flagged_count: usize,
    /// NaN for the equicoordinate procedure.
    pub beta_tilde: f64,
    /// NaN for the Taylor procedure.
    pub equicoordinate_quantile: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(msg).expect("nul bytes removed")));
}

struct Failure(CtStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure((&e).into(), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(CtStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            CtStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            CtStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn checked_len(a: usize, b: usize) -> Result<usize, Failure> {
    a.checked_mul(b)
        .ok_or_else(|| Failure(CtStatus::InvalidArgument, format!("size {a} x {b} overflows")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failed call on this thread, or NULL.
///
/// The pointer stays valid until the next `ct_*` call on the same thread.
#[no_mangle]
pub extern "C" fn ct_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ct_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn ct_options_default() -> CtOptions {
    CtOptions {
        alpha: DEFAULT_ALPHA,
        mc_reps: DEFAULT_MC_REPS,
        boot_reps: DEFAULT_BOOT_REPS,
        seed: 0,
        wild_weight: CtWildWeight::Rademacher,
    }
}

/// Creates an empty dataset.
///
/// # Safety
/// `out` must be a valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn ct_dataset_new(out: *mut *mut CtDataset) -> CtStatus {
    guard(|| put(out, CtDataset { groups: vec![] }))
}

/// Appends a group of `n` observations on `d` variables, stored row-major.
///
/// # Safety
/// `ds` must come from [`ct_dataset_new`]; `values` must point to `n * d` doubles.
#[no_mangle]
pub unsafe extern "C" fn ct_dataset_add_group(ds: *mut CtDataset, values: *const f64, n: usize, d: usize) -> CtStatus {
    guard(|| {
        let ds = ds.as_mut().ok_or_else(|| null("dataset"))?;
        let values = slice(values, checked_len(n, d)?, "values")?;
        if let Some(first) = ds.groups.first() {
            if first.d() != d {
                return Err(Error::Dimension(format!("group has {d} variables, the first group has {}", first.d())).into());
            }
        }
        ds.groups.push(GroupSample::from_rows(n, d, values)?);
        Ok(())
    })
}

/// # Safety
/// `ds` must come from [`ct_dataset_new`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ct_dataset_group_count(ds: *const CtDataset, out: *mut usize) -> CtStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        let out = out.as_mut().ok_or_else(|| null("output pointer"))?;
        *out = ds.groups.len();
        Ok(())
    })
}

/// # Safety
/// `ds` must come from [`ct_dataset_new`] and not be used afterwards. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn ct_dataset_free(ds: *mut CtDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Equality of the correlation matrices of `a` groups with `d` variables.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ct_hypothesis_equal_corr_matrices(a: usize, d: usize, out: *mut *mut CtHypothesis) -> CtStatus {
    guard(|| put(out, CtHypothesis { spec: hypotheses::equal_correlation_matrices(a, d)? }))
}

/// Identity correlation matrix of one group.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ct_hypothesis_identity(d: usize, out: *mut *mut CtHypothesis) -> CtStatus {
    guard(|| put(out, CtHypothesis { spec: hypotheses::identity_correlation(d)? }))
}

/// All correlations of one group equal.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ct_hypothesis_equal_correlations(d: usize, out: *mut *mut CtHypothesis) -> CtStatus {
    guard(|| put(out, CtHypothesis { spec: hypotheses::equal_correlations(d)? }))
}

/// Correlation matrix of one group equal to the `d × d` matrix `r` (row-major).
///
/// # Safety
/// `r` must point to `d * d` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ct_hypothesis_given(r: *const f64, d: usize, out: *mut *mut CtHypothesis) -> CtStatus {
    guard(|| {
        let r = slice(r, checked_len(d, d)?, "r")?;
        let spec = hypotheses::given_correlation(&DMatrix::from_row_slice(d, d, r))?;
        put(out, CtHypothesis { spec })
    })
}

/// Custom hypothesis with an `m × a·d(d−1)/2` row-major matrix `c` and `zeta` of length `m`.
/// `zeta` may be NULL for a zero right-hand side.
///
/// # Safety
/// `c` must point to `m * a * d(d−1)/2` doubles and `zeta`, if not NULL, to `m`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ct_hypothesis_custom(
    c: *const f64,
    m: usize,
    zeta: *const f64,
    a: usize,
    d: usize,
    out: *mut *mut CtHypothesis,
) -> CtStatus {
    guard(|| {
        let cols = checked_len(a, d.saturating_mul(d.saturating_sub(1)) / 2)?;
        let c = slice(c, checked_len(m, cols)?, "c")?;
        let zeta = if zeta.is_null() { DVector::zeros(m) } else { DVector::from_column_slice(slice(zeta, m, "zeta")?) };
        let spec = hypotheses::custom(DMatrix::from_row_slice(m, cols, c), zeta, a, d)?;
        put(out, CtHypothesis { spec })
    })
}

/// # Safety
/// `h` must come from a `ct_hypothesis_*` constructor and not be used afterwards. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn ct_hypothesis_free(h: *mut CtHypothesis) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Runs one test. `method` is a name such as `"ats-par"` or `"ats-tay-m"`.
/// `opts` may be NULL for the defaults.
///
/// # Safety
/// All pointers must be valid; `method` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ct_test(
    ds: *const CtDataset,
    h: *const CtHypothesis,
    method: *const c_char,
    opts: *const CtOptions,
    out: *mut CtTestResult,
) -> CtStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        let h = h.as_ref().ok_or_else(|| null("hypothesis"))?;
        let out = out.as_mut().ok_or_else(|| null("result"))?;
        if method.is_null() {
            return Err(null("method"));
        }
        let method: Method = CStr::from_ptr(method)
            .to_str()
            .map_err(|_| Failure(CtStatus::InvalidArgument, "method is not UTF-8".into()))?
            .parse()?;
        let o = opts.as_ref().copied().unwrap_or_else(|| ct_options_default());
        let opts = TestOptions {
            alpha: o.alpha,
            mc_reps: o.mc_reps,
            boot_reps: o.boot_reps,
            seed: o.seed,
            wild_weight: match o.wild_weight {
                CtWildWeight::Rademacher => WildWeight::Rademacher,
                CtWildWeight::Gaussian => WildWeight::Gaussian,
            },
        };
        let rep = test_groups(&ds.groups, &h.spec, method, &opts)?;
        *out = CtTestResult {
            statistic: rep.statistic,
            critical_value: rep.critical_value,
            p_value: rep.p_value,
            reject: rep.reject as i32,
            reps: rep.reps,
        };
        Ok(())
    })
}

/// Combined test on a dataset with exactly two groups.
///
/// `flagged`, if not NULL, receives one byte per coordinate (1 = flagged) and
/// must hold `flagged_len ≥ d + d(d−1)/2` bytes.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn ct_combined(
    ds: *const CtDataset,
    procedure: CtProcedure,
    alpha: f64,
    reps: usize,
    seed: u64,
    two_sided: i32,
    flagged: *mut u8,
    flagged_len: usize,
    out: *mut CtCombinedResult,
) -> CtStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        let out = out.as_mut().ok_or_else(|| null("result"))?;
        let [g1, g2] = ds.groups.as_slice() else {
            return Err(Error::Argument(format!("combined test needs two groups, got {}", ds.groups.len())).into());
        };
        let cs = contrast_statistic(g1, g2)?;
        if !flagged.is_null() && flagged_len < cs.len() {
            return Err(Error::Argument(format!("flagged buffer holds {flagged_len} bytes, need {}", cs.len())).into());
        }
        let procedure = match procedure {
            CtProcedure::Taylor => Procedure::Taylor,
            CtProcedure::Equicoordinate => Procedure::Equicoordinate,
        };
        let cfg = CombinedConfig { two_sided: two_sided != 0, ..CombinedConfig::new(alpha, reps, seed) };
        let v = combined_test(&cs, procedure, &cfg)?;
        if !flagged.is_null() {
            let buf = std::slice::from_raw_parts_mut(flagged, cs.len());
            buf.fill(0);
            for &l in &v.flagged_coordinates {
                buf[l] = 1;
            }
        }
        *out = CtCombinedResult {
            classification: match v.classification {
                Classification::NoRejection => CtClassification::NoRejection,
                Classification::EqualCorrelationDifferentVariances => CtClassification::EqualCorrelationDifferentVariances,
                Classification::DifferentDependence => CtClassification::DifferentDependence,
            },
            reject_any: v.reject_any as i32,
            coordinates: cs.len(),
            flagged_count: v.flagged_coordinates.len(),
            beta_tilde: v.beta_tilde.unwrap_or(f64::NAN),
            equicoordinate_quantile: v.equicoordinate_quantile.unwrap_or(f64::NAN),
        };
        Ok(())
    })
}
