//! C interface to `fastem`.
//!
//! Objects are opaque handles created and released by the library. Every
//! fallible call returns a [`FastemStatus`]; on failure the message is kept
//! per thread and read with [`fastem_last_error`]. Missing cells are passed as
//! NaN in row-major `n × d` buffers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use fastem::{Dataset, Error, MixtureModel, TrainConfig};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FastemStatus {
    Ok = 0,
    /// A required pointer was null or a string was not UTF-8.
    NullArgument = 1,
    /// Invalid training configuration.
    Config = 2,
    /// Malformed input or mismatched shapes.
    Data = 3,
    /// A matrix was not positive definite or a system was singular.
    Numerical = 4,
    /// Unexpected internal failure.
    Internal = 5,
}

/// Row-major data matrix with NaN at missing cells.
pub struct FastemDataset(Dataset);

/// Trained mixture.
pub struct FastemModel(MixtureModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> FastemStatus {
    match e {
        Error::InvalidConfig(_) => FastemStatus::Config,
        Error::Parse { .. }
        | Error::RaggedRows { .. }
        | Error::ShapeMismatch(_)
        | Error::DimensionMismatch { .. }
        | Error::IncompleteReference
        | Error::Io(_)
        | Error::Serde(_) => FastemStatus::Data,
        Error::NotPositiveDefinite { .. }
        | Error::IndexAlreadyPresent(_)
        | Error::IndexNotPresent(_)
        | Error::SingularSystem
        | Error::Numerical { .. } => FastemStatus::Numerical,
    }
}

struct Failure(FastemStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(FastemStatus::NullArgument, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FastemStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            FastemStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(panic) => {
            let message = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "internal error".into());
            set_error(message);
            FastemStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(s: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| Failure(FastemStatus::NullArgument, format!("{what} is not UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn fastem_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Copies an `n × d` row-major buffer into a new dataset. NaN marks a missing cell.
///
/// # Safety
/// `values` must point to `n * d` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fastem_dataset_new(
    values: *const f64,
    n: usize,
    d: usize,
    out: *mut *mut FastemDataset,
) -> FastemStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let len = n
            .checked_mul(d)
            .ok_or_else(|| Failure(FastemStatus::Data, format!("{n} x {d} overflows")))?;
        if values.is_null() && len > 0 {
            return Err(null("values"));
        }
        let v = if len == 0 { Vec::new() } else { std::slice::from_raw_parts(values, len).to_vec() };
        let mask = v.iter().map(|x| x.is_nan()).collect();
        let dataset = Dataset::new(n, d, v, mask)?;
        *out = Box::into_raw(Box::new(FastemDataset(dataset)));
        Ok(())
    })
}

/// # Safety
/// `dataset` must be null or a handle from [`fastem_dataset_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fastem_dataset_free(dataset: *mut FastemDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Fits a mixture. `config_json` holds any subset of the training settings
/// (`components`, `max_iters`, `ridge`, `seed`, `engine`, ...); null uses defaults.
///
/// # Safety
/// `dataset` must be a live handle; `config_json` null or a nul-terminated string;
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fastem_fit(
    dataset: *const FastemDataset,
    config_json: *const c_char,
    out: *mut *mut FastemModel,
) -> FastemStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let data = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        let config = if config_json.is_null() {
            TrainConfig::default()
        } else {
            serde_json::from_str(str_arg(config_json, "config_json")?)
                .map_err(|e| Failure(FastemStatus::Config, format!("config: {e}")))?
        };
        let (model, _) = fastem::fit(&data.0, &config)?;
        *out = Box::into_raw(Box::new(FastemModel(model)));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fastem_model_free(model: *mut FastemModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Dimension and component count of a model.
///
/// # Safety
/// `model` must be a live handle; `d` and `components` writable.
#[no_mangle]
pub unsafe extern "C" fn fastem_model_shape(
    model: *const FastemModel,
    d: *mut usize,
    components: *mut usize,
) -> FastemStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        *out_arg(d, "d")? = m.0.d();
        *out_arg(components, "components")? = m.0.n_components();
        Ok(())
    })
}

/// Serializes a model. Release the string with [`fastem_string_free`].
///
/// # Safety
/// `model` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fastem_model_to_json(model: *const FastemModel, out: *mut *mut c_char) -> FastemStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let json = m.0.to_json()?;
        *out = CString::new(json).expect("JSON has no nul").into_raw();
        Ok(())
    })
}

/// # Safety
/// `json` must be a nul-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fastem_model_from_json(json: *const c_char, out: *mut *mut FastemModel) -> FastemStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let model = MixtureModel::from_json(str_arg(json, "json")?)?;
        *out = Box::into_raw(Box::new(FastemModel(model)));
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn fastem_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Writes the dataset with every missing cell replaced by its conditional mean
/// under the model into `out_values` (`n × d`, row-major).
///
/// # Safety
/// Handles must be live; `out_values` must hold `n * d` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn fastem_impute(
    model: *const FastemModel,
    dataset: *const FastemDataset,
    out_values: *mut f64,
) -> FastemStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let data = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        let filled = fastem::impute::impute_mixture(&m.0, &data.0)?.filled;
        let v = filled.values();
        if !v.is_empty() {
            if out_values.is_null() {
                return Err(null("out_values"));
            }
            std::slice::from_raw_parts_mut(out_values, v.len()).copy_from_slice(v);
        }
        Ok(())
    })
}

/// Mean observed-data log-likelihood of the dataset under the model.
///
/// # Safety
/// Handles must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fastem_log_likelihood(
    model: *const FastemModel,
    dataset: *const FastemDataset,
    out: *mut f64,
) -> FastemStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let data = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        *out = fastem::gmm::log_likelihood(&m.0, &data.0)?.mean();
        Ok(())
    })
}
