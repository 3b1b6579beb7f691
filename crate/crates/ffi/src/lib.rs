//! C interface to the labelwise toolkit.
//!
//! Objects are opaque handles created by `lw_*_new`/`lw_*_fit`/`lw_*_load`
//! and released with the matching `lw_*_free`. Every fallible call returns an
//! `LwStatus`; on failure `lw_last_error` describes the problem. Matrices are
//! column-major, one column per slice.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use labelwise::io::{kind, Artifact, PriorBody, PrunedPrior};
use labelwise::model::{Dataset, FrequencyGrid, LabelSet, TimeGrid, TransferMatrix};
use nalgebra::DMatrix;
use labelwise::planner::{
    estimate_wsc, exact_wsc, greedy_plan, predictive_variance, restricted_posterior, Direction, PlannerModel,
    SpreadMeasure,
};
use labelwise::sbl::{fit_sparse_prior, prune, EmConfig};
use labelwise::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LwStatus {
    Ok = 0,
    Validation = 1,
    Numerical = 2,
    Fit = 3,
    Parse = 4,
    Refused = 5,
    Io = 6,
    NullPointer = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LwMeasure {
    Trace = 0,
    DetRoot = 1,
    MaxEigenvalue = 2,
}

impl From<LwMeasure> for SpreadMeasure {
    fn from(m: LwMeasure) -> Self {
        match m {
            LwMeasure::Trace => SpreadMeasure::Trace,
            LwMeasure::DetRoot => SpreadMeasure::DetRoot,
            LwMeasure::MaxEigenvalue => SpreadMeasure::MaxEigenvalue,
        }
    }
}

/// Pruned frequency prior.
pub struct LwPrior {
    pruned: PrunedPrior,
    n: usize,
    frame_rate: f64,
}

/// Planner model for one series length and frame rate.
pub struct LwPlanner {
    model: PlannerModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> LwStatus {
    match e {
        Error::Validation(_) => LwStatus::Validation,
        Error::Numerical(_) => LwStatus::Numerical,
        Error::Fit { .. } | Error::Fold { .. } => LwStatus::Fit,
        Error::Parse { .. } | Error::Json(_) => LwStatus::Parse,
        Error::Refused(_) => LwStatus::Refused,
        Error::Io(_) => LwStatus::Io,
    }
}

fn guard(f: impl FnOnce() -> Result<(), LwStatus>) -> LwStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LwStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic".to_string());
            LwStatus::Panic
        }
    }
}

fn fail(e: Error) -> LwStatus {
    let s = status_of(&e);
    set_error(e.to_string());
    s
}

fn null(what: &str) -> LwStatus {
    set_error(format!("{what} is null"));
    LwStatus::NullPointer
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], LwStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], LwStatus> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn lw_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Toolkit version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lw_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Fits and prunes a prior on `n × slices` column-major `values` sampled at
/// `frame_rate`, over the grid `f_m = m · spacing`, `m <= m_max`, with the
/// default EM settings.
///
/// # Safety
/// `values` must point to `n * slices` doubles and `out` to writable storage
/// for one handle.
#[no_mangle]
pub unsafe extern "C" fn lw_prior_fit(
    values: *const f64,
    n: usize,
    slices: usize,
    frame_rate: f64,
    m_max: usize,
    spacing: f64,
    prune_ratio: f64,
    out: *mut *mut LwPrior,
) -> LwStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let data = slice(values, n * slices, "values")?;
        let tg = TimeGrid::new(n, frame_rate).map_err(fail)?;
        let ids = (1..=slices).map(|l| format!("s{l}")).collect();
        let dataset =
            Dataset::new(DMatrix::from_column_slice(n, slices, data), tg.clone(), ids).map_err(fail)?;
        let grid = FrequencyGrid::uniform(m_max, spacing).map_err(fail)?;
        let a = TransferMatrix::new(&tg, &grid);
        let fit = fit_sparse_prior(&dataset, &a, &EmConfig::default()).map_err(fail)?;
        let pruned = prune(&fit, &a, prune_ratio).map_err(fail)?;
        let prior = LwPrior {
            pruned: PrunedPrior::from_model(&pruned),
            n,
            frame_rate,
        };
        *out = Box::into_raw(Box::new(prior));
        Ok(())
    })
}

/// Loads a prior artifact written by `labelwise fit-prior`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lw_prior_load(path: *const c_char, out: *mut *mut LwPrior) -> LwStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| fail(Error::Validation("path is not UTF-8".into())))?;
        let art = Artifact::<PriorBody>::read(Path::new(path), kind::PRIOR).map_err(fail)?;
        let prior = LwPrior {
            pruned: art.body.pruned,
            n: art.body.n,
            frame_rate: art.body.frame_rate,
        };
        *out = Box::into_raw(Box::new(prior));
        Ok(())
    })
}

/// Number of kept frequencies including DC, or 0 for a null handle.
///
/// # Safety
/// `prior` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lw_prior_kept_count(prior: *const LwPrior) -> usize {
    prior.as_ref().map_or(0, |p| p.pruned.frequencies.len())
}

/// Copies the kept frequencies and their variances (each `capacity` long at
/// most) and the noise variance.
///
/// # Safety
/// `frequencies` and `alpha` must hold `capacity` doubles; `sigma2` may be null.
#[no_mangle]
pub unsafe extern "C" fn lw_prior_values(
    prior: *const LwPrior,
    frequencies: *mut f64,
    alpha: *mut f64,
    capacity: usize,
    sigma2: *mut f64,
) -> LwStatus {
    guard(|| {
        let p = prior.as_ref().ok_or_else(|| null("prior"))?;
        let k = p.pruned.frequencies.len();
        if capacity < k {
            return Err(fail(Error::Validation(format!("capacity {capacity} is below {k}"))));
        }
        slice_mut(frequencies, k, "frequencies")?.copy_from_slice(&p.pruned.frequencies);
        slice_mut(alpha, k, "alpha")?.copy_from_slice(&p.pruned.alpha);
        if let Some(s) = sigma2.as_mut() {
            *s = p.pruned.sigma2;
        }
        Ok(())
    })
}

/// # Safety
/// `prior` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lw_prior_free(prior: *mut LwPrior) {
    if !prior.is_null() {
        drop(Box::from_raw(prior));
    }
}

/// Planner on `n` frames at `frame_rate`; zero values select the series the
/// prior was fitted on.
///
/// # Safety
/// `prior` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lw_planner_new(
    prior: *const LwPrior,
    n: usize,
    frame_rate: f64,
    out: *mut *mut LwPlanner,
) -> LwStatus {
    guard(|| {
        let p = prior.as_ref().ok_or_else(|| null("prior"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let n = if n == 0 { p.n } else { n };
        let fps = if frame_rate == 0.0 { p.frame_rate } else { frame_rate };
        let model = p.pruned.planner_model(n, fps).map_err(fail)?;
        *out = Box::into_raw(Box::new(LwPlanner { model }));
        Ok(())
    })
}

/// Series length of a planner, or 0 for a null handle.
///
/// # Safety
/// `planner` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lw_planner_len(planner: *const LwPlanner) -> usize {
    planner.as_ref().map_or(0, |p| p.model.n())
}

/// Greedy labeling order of length `k`. Writes `k` indices and, when
/// `spreads` is non-null, the spread after each step.
///
/// # Safety
/// `indices` must hold `k` entries; `spreads` must be null or hold `k`.
#[no_mangle]
pub unsafe extern "C" fn lw_planner_greedy(
    planner: *const LwPlanner,
    k: usize,
    measure: LwMeasure,
    maximize: bool,
    indices: *mut usize,
    spreads: *mut f64,
) -> LwStatus {
    guard(|| {
        let p = planner.as_ref().ok_or_else(|| null("planner"))?;
        let direction = if maximize { Direction::Maximize } else { Direction::Minimize };
        let plan = greedy_plan(&p.model, k, measure.into(), direction).map_err(fail)?;
        slice_mut(indices, k, "indices")?.copy_from_slice(&plan.indices);
        if !spreads.is_null() {
            slice_mut(spreads, k, "spreads")?.copy_from_slice(&plan.spreads);
        }
        Ok(())
    })
}

/// Posterior mean and predictive standard deviation over the series after
/// labeling `count` frames. `mean` and `std` must hold `lw_planner_len`
/// entries.
///
/// # Safety
/// `indices` and `values` must hold `count` entries; `mean` and `std` must
/// hold the series length.
#[no_mangle]
pub unsafe extern "C" fn lw_planner_predict(
    planner: *const LwPlanner,
    indices: *const usize,
    values: *const f64,
    count: usize,
    mean: *mut f64,
    std: *mut f64,
) -> LwStatus {
    guard(|| {
        let p = planner.as_ref().ok_or_else(|| null("planner"))?;
        let n = p.model.n();
        let idx = slice(indices, count, "indices")?;
        let vals = slice(values, count, "values")?;
        let labels = LabelSet::new(idx.to_vec(), n).map_err(fail)?;
        let rp = restricted_posterior(&p.model, &labels, Some(vals)).map_err(fail)?;
        let curve = p.model.a() * &rp.mean;
        slice_mut(mean, n, "mean")?.copy_from_slice(curve.as_slice());
        let var = predictive_variance(&p.model, &rp.covariance);
        for (o, v) in slice_mut(std, n, "std")?.iter_mut().zip(var) {
            *o = v.sqrt();
        }
        Ok(())
    })
}

/// Weak-submodularity constant: exact when `samples` is 0 (series of at
/// most 14 frames), otherwise the largest of `samples` seeded draws.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lw_planner_wsc(
    planner: *const LwPlanner,
    samples: usize,
    seed: u64,
    out: *mut f64,
) -> LwStatus {
    guard(|| {
        let p = planner.as_ref().ok_or_else(|| null("planner"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = if samples == 0 {
            exact_wsc(&p.model).map_err(fail)?.constant
        } else {
            estimate_wsc(&p.model, samples, seed).map_err(fail)?.max_ratio
        };
        Ok(())
    })
}

/// # Safety
/// `planner` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lw_planner_free(planner: *mut LwPlanner) {
    if !planner.is_null() {
        drop(Box::from_raw(planner));
    }
}
