//! C ABI over the `sobolcpi` library.
//!
//! Objects are opaque heap handles created by `*_new`/`*_fit` style calls and
//! released with the matching `*_free`. Every fallible call returns a
//! [`SobolcpiStatus`]; on failure the message is available from
//! [`sobolcpi_last_error`] on the same thread. Matrices are row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::DMatrix;
use sobolcpi::data::{split, Dataset, SplitSpec};
use sobolcpi::estimators::{cpi, loco, pfi, sobol_cpi, ImportanceScore, LossKind};
use sobolcpi::inference::{
    test_importance, CorrectionKind, CorrectionScale, CorrectionSpec, VarianceSpec,
};
use sobolcpi::learners::{fit, FittedModel, LearnerSpec};
use sobolcpi::sampler::{fit_sampler, ConditionalSampler};
use sobolcpi::{Error, RngSeed};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SobolcpiStatus {
    Ok = 0,
    InvalidParameter = 1,
    Numerical = 2,
    NullPointer = 3,
    Io = 4,
    Panic = 5,
}

/// Loss used to compare predictions with the response.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SobolcpiLoss {
    Quadratic = 0,
    ZeroOne = 1,
}

/// Additive threshold correction `c * n^-gamma`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SobolcpiCorrection {
    None = 0,
    Sqrt = 1,
    Linear = 2,
    Quadratic = 3,
}

/// Outcome of a one-sided conditional-null test.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SobolcpiTestResult {
    pub statistic: f64,
    pub se: f64,
    pub threshold: f64,
    pub p_value: f64,
    /// Resolved correction scale.
    pub c: f64,
    pub reject: bool,
    pub variance_clipped: bool,
}

/// Response vector and design matrix.
pub struct SobolcpiDataset(Dataset);

/// Trained predictor.
pub struct SobolcpiModel(FittedModel);

/// Fitted conditional sampler for one feature.
pub struct SobolcpiSampler(ConditionalSampler);

/// Importance estimate with its per-sample summands.
pub struct SobolcpiScore(ImportanceScore);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SobolcpiStatus {
    match e {
        Error::InvalidParameter(_) | Error::Config(_) | Error::Json(_) => {
            SobolcpiStatus::InvalidParameter
        }
        Error::Numerical(_) => SobolcpiStatus::Numerical,
        Error::Io(_) | Error::Csv(_) => SobolcpiStatus::Io,
    }
}

struct Failure(SobolcpiStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(SobolcpiStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SobolcpiStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SobolcpiStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            SobolcpiStatus::Panic
        }
    }
}

unsafe fn href<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out<T>(p: *mut *mut T, value: T) -> Result<(), Failure> {
    if p.is_null() {
        return Err(null("output pointer"));
    }
    *p = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        Failure(
            SobolcpiStatus::InvalidParameter,
            format!("{what} is not valid UTF-8"),
        )
    })
}

unsafe fn matrix(x: *const f64, n: usize, p: usize) -> Result<DMatrix<f64>, Failure> {
    if x.is_null() {
        return Err(null("matrix"));
    }
    let len = n.checked_mul(p).ok_or_else(|| {
        Failure(
            SobolcpiStatus::InvalidParameter,
            "matrix size overflows".into(),
        )
    })?;
    let data = std::slice::from_raw_parts(x, len);
    Ok(DMatrix::from_row_slice(n, p, data))
}

fn learner(json: &str) -> Result<LearnerSpec, Failure> {
    let spec: LearnerSpec = serde_json::from_str(json).map_err(Error::from)?;
    spec.validate()?;
    Ok(spec)
}

fn loss_kind(l: SobolcpiLoss) -> LossKind {
    match l {
        SobolcpiLoss::Quadratic => LossKind::Quadratic,
        SobolcpiLoss::ZeroOne => LossKind::ZeroOne,
    }
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sobolcpi_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sobolcpi_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a dataset from a row-major `n x p` matrix and a response of length `n`.
///
/// # Safety
/// `x` must point to `n * p` doubles, `y` to `n` doubles, `out` to writable storage.
#[no_mangle]
pub unsafe extern "C" fn sobolcpi_dataset_new(
    x: *const f64,
    n: usize,
    p: usize,
    y: *const f64,
    out_dataset: *mut *mut SobolcpiDataset,
) -> SobolcpiStatus {
    guard(|| {
        let x = matrix(x, n, p)?;
        if y.is_null() {
            return Err(null("y"));
        }
        let y = std::slice::from_raw_parts(y, n).to_vec();
        out(out_dataset, SobolcpiDataset(Dataset::new(x, y, None)?))
    })
}

/// Reads a headered CSV whose last column is the response.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sobolcpi_dataset_read_csv(
    path: *const c_char,
    out_dataset: *mut *mut SobolcpiDataset,
) -> SobolcpiStatus {
    guard(|| {
        let path = text(path, "path")?;
        out(out_dataset, SobolcpiDataset(Dataset::read_csv(path)?))
    })
}

/// Number of rows, or 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sobolcpi_dataset_n(dataset: *const SobolcpiDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.0.n())
}

/// Number of features, or 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sobolcpi_dataset_p(dataset: *const SobolcpiDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.0.p())
}

/// Random train/test split with the given train fraction.
///
/// # Safety
/// `dataset` must be a live handle and both outputs writable.
#[no_mangle]
pub unsafe extern "C" fn sobolcpi_dataset_split(
    dataset: *const SobolcpiDataset,
    train_fraction: f64,
    seed: u64,
    out_train: *mut *mut SobolcpiDataset,
    out_test: *mut *mut SobolcpiDataset,
) -> SobolcpiStatus {
    guard(|| {
        let ds = href(dataset, "dataset")?;
        if out_train.is_null() || out_test.is_null() {
            return Err(null("output pointer"));
        }
        let (train, test) = split(&ds.0, &SplitSpec::new(train_fraction, RngSeed(seed)))?;
        out(out_train, SobolcpiDataset(train))?;
        out(out_test, SobolcpiDataset(test))
    })
}

/// # Safety
/// `dataset` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sobolcpi_dataset_free(dataset: *mut SobolcpiDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Fits a learner described by JSON, e.g. `{"kind":"ols"}` or
/// `{"kind":"ridge","lambda":0.5}`.
///
/// # Safety
/// `spec_json` must be NUL-terminated, `dataset` live, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sobolcpi_model_fit(
    spec_json: *const c_char,
    dataset: *const SobolcpiDataset,
    seed: u64,
    out_model: *mut *mut SobolcpiModel,
) -> SobolcpiStatus {
    guard(|| {
        let spec = learner(text(spec_json, "spec_json")?)?;
        let ds = href(dataset, "dataset")?;
        out(
            out_model,
            SobolcpiModel(fit(&spec, ds.0.x(), ds.0.y(), RngSeed(seed))?),
        )
    })
}

/// Predicts the `n` rows of a row-major `n x p` matrix into `out_pred`.
///
/// # Safety
/// `x` must hold `n * p` doubles and `out_pred` room for `n`.
#[no_mangle]
pub unsafe extern "C" fn sobolcpi_model_predict(
    model: *const SobolcpiModel,
    x: *const f64,
    n: usize,
    p: usize,
    out_pred: *mut f64,
) -> SobolcpiStatus {
    guard(|| {
        let m = href(model, "model")?;
        let x = matrix(x, n, p)?;
        if out_pred.is_null() {
            return Err(null("out_pred"));
        }
        let pred = m.0.predict(&x)?;
        std::slice::from_raw_parts_mut(out_pred, n).copy_from_slice(&pred);
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sobolcpi_model_free(model: *mut SobolcpiModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Fits the residual-permutation sampler of feature `j` on the design of `dataset`.
///
/// # Safety
/// `spec_json` must be NUL-terminated, `dataset` live, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sobolcpi_sampler_fit(
    dataset: *const SobolcpiDataset,
    j: usize,
    spec_json: *const c_char,
    seed: u64,
    out_sampler: *mut *mut SobolcpiSampler,
) -> SobolcpiStatus {
    guard(|| {
        let spec = learner(text(spec_json, "spec_json")?)?;
        let ds = href(dataset, "dataset")?;
        out(
            out_sampler,
            SobolcpiSampler(fit_sampler(ds.0.x(), j, &spec, RngSeed(seed))?),
        )
    })
}

/// # Safety
/// `sampler` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sobolcpi_sampler_free(sampler: *mut SobolcpiSampler) {
    if !sampler.is_null() {
        drop(Box::from_raw(sampler));
    }
}

/// Sobol-CPI with `n_cal` conditional draws per test row.
///
/// # Safety
/// All handles must be live and `out_score` writable.
#[no_mangle]
pub unsafe extern "C" fn sobolcpi_sobol_cpi(
    model: *const SobolcpiModel,
    sampler: *const SobolcpiSampler,
    test: *const SobolcpiDataset,
    n_cal: usize,
    loss: SobolcpiLoss,
    seed: u64,
    out_score: *mut *mut SobolcpiScore,
) -> SobolcpiStatus {
    guard(|| {
        let (m, s, t) = (
            href(model, "model")?,
            href(sampler, "sampler")?,
            href(test, "test")?,
        );
        out(
            out_score,
            SobolcpiScore(sobol_cpi(
                &m.0,
                &s.0,
                &t.0,
                n_cal,
                loss_kind(loss),
                RngSeed(seed),
            )?),
        )
    })
}

/// Conditional permutation importance from one conditional draw.
///
/// # Safety
/// All handles must be live and `out_score` writable.
#[no_mangle]
pub unsafe extern "C" fn sobolcpi_cpi(
    model: *const SobolcpiModel,
    sampler: *const SobolcpiSampler,
    test: *const SobolcpiDataset,
    loss: SobolcpiLoss,
    seed: u64,
    out_score: *mut *mut SobolcpiScore,
) -> SobolcpiStatus {
    guard(|| {
        let (m, s, t) = (
            href(model, "model")?,
            href(sampler, "sampler")?,
            href(test, "test")?,
        );
        out(
            out_score,
            SobolcpiScore(cpi(&m.0, &s.0, &t.0, loss_kind(loss), RngSeed(seed))?),
        )
    })
}

/// Marginal permutation importance of feature `j`.
///
/// # Safety
/// All handles must be live and `out_score` writable.
#[no_mangle]
pub unsafe extern "C" fn sobolcpi_pfi(
    model: *const SobolcpiModel,
    test: *const SobolcpiDataset,
    j: usize,
    loss: SobolcpiLoss,
    seed: u64,
    out_score: *mut *mut SobolcpiScore,
) -> SobolcpiStatus {
    guard(|| {
        let (m, t) = (href(model, "model")?, href(test, "test")?);
        out(
            out_score,
            SobolcpiScore(pfi(&m.0, &t.0, j, loss_kind(loss), RngSeed(seed))?),
        )
    })
}

/// Leave-one-covariate-out importance; the restricted learner is given as JSON.
///
/// # Safety
/// All handles must be live, `spec_json` NUL-terminated, `out_score` writable.
#[no_mangle]
pub unsafe extern "C" fn sobolcpi_loco(
    model: *const SobolcpiModel,
    spec_json: *const c_char,
    train: *const SobolcpiDataset,
    test: *const SobolcpiDataset,
    j: usize,
    loss: SobolcpiLoss,
    seed: u64,
    out_score: *mut *mut SobolcpiScore,
) -> SobolcpiStatus {
    guard(|| {
        let spec = learner(text(spec_json, "spec_json")?)?;
        let (m, tr, te) = (
            href(model, "model")?,
            href(train, "train")?,
            href(test, "test")?,
        );
        out(
            out_score,
            SobolcpiScore(loco(
                &m.0,
                &spec,
                &tr.0,
                &te.0,
                j,
                loss_kind(loss),
                RngSeed(seed),
            )?),
        )
    })
}

/// Point estimate of a score, or NaN for a null handle.
///
/// # Safety
/// `score` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sobolcpi_score_estimate(score: *const SobolcpiScore) -> f64 {
    score.as_ref().map_or(f64::NAN, |s| s.0.estimate)
}

/// Copies the per-row loss differences into `out_diffs` (room for `len`) and
/// stores their count in `out_len`. Split-sample scores have none.
///
/// # Safety
/// `score` must be live; `out_diffs` must hold `len` doubles or be null.
#[no_mangle]
pub unsafe extern "C" fn sobolcpi_score_diffs(
    score: *const SobolcpiScore,
    out_diffs: *mut f64,
    len: usize,
    out_len: *mut usize,
) -> SobolcpiStatus {
    guard(|| {
        let s = href(score, "score")?;
        let d = s.0.per_sample_diffs().unwrap_or(&[]);
        if !out_len.is_null() {
            *out_len = d.len();
        }
        if !out_diffs.is_null() {
            let k = d.len().min(len);
            std::slice::from_raw_parts_mut(out_diffs, k).copy_from_slice(&d[..k]);
        }
        Ok(())
    })
}

/// # Safety
/// `score` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sobolcpi_score_free(score: *mut SobolcpiScore) {
    if !score.is_null() {
        drop(Box::from_raw(score));
    }
}

/// One-sided test of the conditional null for a score. `bootstrap_reps = 0`
/// selects the sample variance; a negative `c` selects the response sd.
///
/// # Safety
/// `score` must be live and `out_result` writable.
#[no_mangle]
pub unsafe extern "C" fn sobolcpi_test(
    score: *const SobolcpiScore,
    correction: SobolcpiCorrection,
    c: f64,
    bootstrap_reps: usize,
    alpha: f64,
    n: usize,
    seed: u64,
    out_result: *mut SobolcpiTestResult,
) -> SobolcpiStatus {
    guard(|| {
        let s = href(score, "score")?;
        if out_result.is_null() {
            return Err(null("out_result"));
        }
        let kind = match correction {
            SobolcpiCorrection::None => CorrectionKind::None,
            SobolcpiCorrection::Sqrt => CorrectionKind::Sqrt,
            SobolcpiCorrection::Linear => CorrectionKind::Linear,
            SobolcpiCorrection::Quadratic => CorrectionKind::Quadratic,
        };
        let scale = if c < 0.0 {
            CorrectionScale::Auto
        } else {
            CorrectionScale::Fixed(c)
        };
        let var = if bootstrap_reps == 0 {
            VarianceSpec::Sample
        } else {
            VarianceSpec::Bootstrap {
                reps: bootstrap_reps,
            }
        };
        let r = test_importance(
            &s.0,
            &var,
            &CorrectionSpec::new(kind, scale),
            alpha,
            n,
            RngSeed(seed),
        )?;
        *out_result = SobolcpiTestResult {
            statistic: r.statistic,
            se: r.se,
            threshold: r.threshold,
            p_value: r.p_value,
            c: r.c,
            reject: r.reject,
            variance_clipped: r.variance_clipped,
        };
        Ok(())
    })
}
