//! C ABI over `irt_bench`.
//!
//! Matrices and banks cross the boundary as opaque handles that the caller
//! frees with the matching `*_free` function. Every fallible call returns an
//! [`IrtStatus`]; on failure the message is available from
//! [`irt_last_error_message`] until the next call on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, UnwindSafe};
use std::path::Path;
use std::ptr;

use irt_bench::dataset::{load_responses, ResponseFormat};
use irt_bench::mle::MleConfig;
use irt_bench::psn::FitConfig;
use irt_bench::{Error, FitSettings, FittedBank, ItemKey, ModelFamily, ResponseMatrix};

/// Result codes. Values match the CLI exit codes where they overlap.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IrtStatus {
    Ok = 0,
    InvalidArgument = 2,
    Io = 3,
    Numeric = 4,
    NullPointer = 5,
    UnknownId = 6,
    Panic = 99,
}

/// Input format for [`irt_matrix_load`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IrtFormat {
    /// Chosen from the file extension.
    Auto = 0,
    Csv = 1,
    Jsonl = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IrtMethod {
    Psn = 0,
    Mle = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrtItemParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

/// Opaque response matrix.
pub struct IrtMatrix(ResponseMatrix);

/// Opaque fitted item bank.
pub struct IrtBank(FittedBank);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> IrtStatus {
    match e {
        Error::UnknownId { .. } => IrtStatus::UnknownId,
        Error::Numeric(_) => IrtStatus::Numeric,
        Error::InvalidArgument(_) => IrtStatus::InvalidArgument,
        _ => match e.exit_code() {
            2 => IrtStatus::InvalidArgument,
            4 => IrtStatus::Numeric,
            _ => IrtStatus::Io,
        },
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

fn guard<F>(f: F) -> IrtStatus
where
    F: FnOnce() -> Result<(), Failure> + UnwindSafe,
{
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(f) {
        Ok(Ok(())) => IrtStatus::Ok,
        Ok(Err(Failure::Null(name))) => {
            set_error(format!("null pointer passed as `{name}`"));
            IrtStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            IrtStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Lib(Error::InvalidArgument(format!("`{name}` is not UTF-8"))))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(name))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(name))
}

fn family_of(n: u32) -> Result<ModelFamily, Failure> {
    match n {
        1 => Ok(ModelFamily::OnePL),
        2 => Ok(ModelFamily::TwoPL),
        3 => Ok(ModelFamily::ThreePL),
        4 => Ok(ModelFamily::FourPL),
        _ => Err(Failure::Lib(Error::InvalidArgument(format!(
            "family must be 1..=4, got {n}"
        )))),
    }
}

/// Last error message on this thread, or NULL. Owned by the library.
#[no_mangle]
pub extern "C" fn irt_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn irt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a response file into `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn irt_matrix_load(
    path: *const c_char,
    format: IrtFormat,
    out: *mut *mut IrtMatrix,
) -> IrtStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let path = Path::new(str_arg(path, "path")?);
        let format = match format {
            IrtFormat::Auto => ResponseFormat::from_path(path),
            IrtFormat::Csv => ResponseFormat::Csv,
            IrtFormat::Jsonl => ResponseFormat::Jsonl,
        };
        let matrix = load_responses(path, format)?;
        *out = Box::into_raw(Box::new(IrtMatrix(matrix)));
        Ok(())
    })
}

/// # Safety
/// `matrix` must come from [`irt_matrix_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn irt_matrix_free(matrix: *mut IrtMatrix) {
    if !matrix.is_null() {
        drop(Box::from_raw(matrix));
    }
}

/// Writes the model, item and observed-cell counts of `matrix`.
///
/// # Safety
/// `matrix` must be a live handle; each output pointer may be NULL.
#[no_mangle]
pub unsafe extern "C" fn irt_matrix_shape(
    matrix: *const IrtMatrix,
    n_models: *mut usize,
    n_items: *mut usize,
    n_entries: *mut usize,
) -> IrtStatus {
    guard(|| {
        let m = &ref_arg(matrix, "matrix")?.0;
        if let Some(p) = n_models.as_mut() {
            *p = m.n_models();
        }
        if let Some(p) = n_items.as_mut() {
            *p = m.n_items();
        }
        if let Some(p) = n_entries.as_mut() {
            *p = m.n_entries();
        }
        Ok(())
    })
}

/// Fits a bank on every observed cell with default settings for `method`.
/// `family` is the number of item parameters (1 to 4).
///
/// # Safety
/// `matrix` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn irt_bank_fit(
    matrix: *const IrtMatrix,
    method: IrtMethod,
    family: u32,
    seed: u64,
    out: *mut *mut IrtBank,
) -> IrtStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let m = &ref_arg(matrix, "matrix")?.0;
        let family = family_of(family)?;
        let settings = match method {
            IrtMethod::Psn => FitSettings::Psn(FitConfig {
                family,
                seed,
                ..FitConfig::default()
            }),
            IrtMethod::Mle => FitSettings::Mle(MleConfig {
                family,
                seed,
                ..MleConfig::default()
            }),
        };
        let bank = settings.fit_full(m)?;
        *out = Box::into_raw(Box::new(IrtBank(bank)));
        Ok(())
    })
}

/// Reads a bank JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn irt_bank_load(path: *const c_char, out: *mut *mut IrtBank) -> IrtStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let bank = FittedBank::load(Path::new(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(IrtBank(bank)));
        Ok(())
    })
}

/// # Safety
/// `bank` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn irt_bank_save(bank: *const IrtBank, path: *const c_char) -> IrtStatus {
    guard(|| {
        let bank = &ref_arg(bank, "bank")?.0;
        bank.save(Path::new(str_arg(path, "path")?))?;
        Ok(())
    })
}

/// # Safety
/// `bank` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn irt_bank_free(bank: *mut IrtBank) {
    if !bank.is_null() {
        drop(Box::from_raw(bank));
    }
}

/// Number of models and items in the bank.
///
/// # Safety
/// `bank` must be a live handle; each output pointer may be NULL.
#[no_mangle]
pub unsafe extern "C" fn irt_bank_shape(
    bank: *const IrtBank,
    n_models: *mut usize,
    n_items: *mut usize,
) -> IrtStatus {
    guard(|| {
        let bank = &ref_arg(bank, "bank")?.0;
        if let Some(p) = n_models.as_mut() {
            *p = bank.abilities().len();
        }
        if let Some(p) = n_items.as_mut() {
            *p = bank.items().len();
        }
        Ok(())
    })
}

/// Ability of `model`.
///
/// # Safety
/// Pointers must be valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn irt_bank_theta(
    bank: *const IrtBank,
    model: *const c_char,
    out: *mut f64,
) -> IrtStatus {
    guard(|| {
        let bank = &ref_arg(bank, "bank")?.0;
        let out = out_arg(out, "out")?;
        *out = bank.theta(str_arg(model, "model")?)?;
        Ok(())
    })
}

/// Parameters of item `benchmark/item`.
///
/// # Safety
/// Pointers must be valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn irt_bank_item_params(
    bank: *const IrtBank,
    benchmark: *const c_char,
    item: *const c_char,
    out: *mut IrtItemParams,
) -> IrtStatus {
    guard(|| {
        let bank = &ref_arg(bank, "bank")?.0;
        let out = out_arg(out, "out")?;
        let key = ItemKey::new(str_arg(benchmark, "benchmark")?, str_arg(item, "item")?);
        let p = bank.item_params(&key)?;
        *out = IrtItemParams {
            a: p.a,
            b: p.b,
            c: p.c,
            d: p.d,
        };
        Ok(())
    })
}

/// Probability that `model` answers `benchmark/item` correctly.
///
/// # Safety
/// Pointers must be valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn irt_bank_predict(
    bank: *const IrtBank,
    model: *const c_char,
    benchmark: *const c_char,
    item: *const c_char,
    out: *mut f64,
) -> IrtStatus {
    guard(|| {
        let bank = &ref_arg(bank, "bank")?.0;
        let out = out_arg(out, "out")?;
        let key = ItemKey::new(str_arg(benchmark, "benchmark")?, str_arg(item, "item")?);
        *out = bank.predict(str_arg(model, "model")?, &key)?;
        Ok(())
    })
}

/// 4PL response probability; NaN for parameters outside their domain.
#[no_mangle]
pub extern "C" fn irt_icc(params: IrtItemParams, theta: f64) -> f64 {
    irt_bench::irt::ItemParams::new(params.a, params.b, params.c, params.d)
        .map(|p| p.probability(theta))
        .unwrap_or(f64::NAN)
}
