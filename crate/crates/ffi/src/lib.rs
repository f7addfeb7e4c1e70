//! C ABI over the `hfrl` engine.
//!
//! Every function returns an [`HfrlStatus`]. Results come back through out
//! pointers; on failure the out pointer is left untouched and
//! [`hfrl_last_error`] describes the problem. Handles are opaque and must be
//! released with their matching `*_free` function. Strings returned by the
//! library are freed with [`hfrl_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use hfrl::gridworld::{Action, Cell, GridSpec};
use hfrl::metrics::ensemble_alignment;
use hfrl::reward::Ensemble;
use hfrl::session::log::SessionLog;
use hfrl::session::{replay, run_session, SessionConfig};
use hfrl::Error;

/// Outcome of a call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HfrlStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// A configuration could not be parsed or violates its invariants.
    Config = 3,
    /// An argument was out of range or a call was made out of order.
    Usage = 4,
    Io = 5,
    /// A session log failed its audit.
    Integrity = 6,
    /// Any other engine error.
    Failed = 7,
    /// The engine panicked; the handle arguments should not be reused.
    Panic = 8,
}

/// Session configuration.
pub struct HfrlConfig(SessionConfig);

/// Append-only session log.
pub struct HfrlLog(SessionLog);

/// A fitted reward ensemble together with the grid it was learned on.
pub struct HfrlModel {
    spec: GridSpec,
    ensemble: Ensemble,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let message = CString::new(message.replace('\0', " ")).expect("nul bytes replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(message));
}

fn status_of(e: &Error) -> HfrlStatus {
    match e {
        Error::Spec(_) | Error::Config(_) | Error::Validation(_) => HfrlStatus::Config,
        Error::Usage(_) | Error::Lookup(_) => HfrlStatus::Usage,
        Error::Io(_) => HfrlStatus::Io,
        Error::Integrity(_) | Error::Record { .. } | Error::Parse { .. } => HfrlStatus::Integrity,
        Error::Round { source, .. } => status_of(source),
        _ => HfrlStatus::Failed,
    }
}

/// Failure carried out of a call body.
struct Fail(HfrlStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(body: impl FnOnce() -> Result<(), Fail>) -> HfrlStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => HfrlStatus::Ok,
        Ok(Err(Fail(status, message))) => {
            set_error(message);
            status
        }
        Err(panic) => {
            let message = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {message}"));
            HfrlStatus::Panic
        }
    }
}

fn null(name: &str) -> Fail {
    Fail(HfrlStatus::NullArgument, format!("`{name}` is null"))
}

unsafe fn borrow<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn borrow_mut<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(name))
}

unsafe fn text<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(HfrlStatus::InvalidUtf8, format!("`{name}` is not UTF-8")))
}

unsafe fn put<T>(out: *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    out.write(value);
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Fail> {
    let s = CString::new(s)
        .map_err(|_| Fail(HfrlStatus::Failed, "string contains a nul byte".into()))?;
    put(out, s.into_raw())
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hfrl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `s` must be null or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn hfrl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Tab-separated classification of every feedback type along the nine
/// design dimensions.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hfrl_classification_table(out: *mut *mut c_char) -> HfrlStatus {
    guard(|| put_string(out, hfrl::goldens::classification_table()))
}

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hfrl_config_default(out: *mut *mut HfrlConfig) -> HfrlStatus {
    guard(|| {
        put(
            out,
            Box::into_raw(Box::new(HfrlConfig(SessionConfig::default()))),
        )
    })
}

/// Parses and validates a TOML session configuration.
///
/// # Safety
/// `toml` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hfrl_config_from_toml(
    toml: *const c_char,
    out: *mut *mut HfrlConfig,
) -> HfrlStatus {
    guard(|| {
        let cfg = SessionConfig::from_toml(text(toml, "toml")?)?;
        put(out, Box::into_raw(Box::new(HfrlConfig(cfg))))
    })
}

/// # Safety
/// `config` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hfrl_config_to_toml(
    config: *const HfrlConfig,
    out: *mut *mut c_char,
) -> HfrlStatus {
    guard(|| put_string(out, borrow(config, "config")?.0.to_toml()))
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hfrl_config_set_seed(config: *mut HfrlConfig, seed: u64) -> HfrlStatus {
    guard(|| {
        borrow_mut(config, "config")?.0.seed = seed;
        Ok(())
    })
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hfrl_config_set_rounds(
    config: *mut HfrlConfig,
    rounds: usize,
) -> HfrlStatus {
    guard(|| {
        borrow_mut(config, "config")?.0.rounds = rounds;
        Ok(())
    })
}

/// # Safety
/// `config` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn hfrl_config_free(config: *mut HfrlConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Runs a simulated session to completion.
///
/// # Safety
/// `config` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hfrl_session_run(
    config: *const HfrlConfig,
    out: *mut *mut HfrlLog,
) -> HfrlStatus {
    guard(|| {
        let log = run_session(&borrow(config, "config")?.0)?;
        put(out, Box::into_raw(Box::new(HfrlLog(log))))
    })
}

/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hfrl_log_load(path: *const c_char, out: *mut *mut HfrlLog) -> HfrlStatus {
    guard(|| {
        let log = SessionLog::load(text(path, "path")?)?;
        put(out, Box::into_raw(Box::new(HfrlLog(log))))
    })
}

/// # Safety
/// `log` must be a live handle and `path` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hfrl_log_save(log: *const HfrlLog, path: *const c_char) -> HfrlStatus {
    guard(|| {
        borrow(log, "log")?.0.save(text(path, "path")?)?;
        Ok(())
    })
}

/// Number of records in the log.
///
/// # Safety
/// `log` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hfrl_log_len(log: *const HfrlLog, out: *mut usize) -> HfrlStatus {
    guard(|| put(out, borrow(log, "log")?.0.len()))
}

/// # Safety
/// `log` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn hfrl_log_free(log: *mut HfrlLog) {
    if !log.is_null() {
        drop(Box::from_raw(log));
    }
}

/// Audits a log by re-translating and refitting it, and returns the final
/// model. `fallback` may be null; it supplies the configuration when the log
/// carries none.
///
/// # Safety
/// `log` must be a live handle, `fallback` null or a live handle, and `out`
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hfrl_replay(
    log: *const HfrlLog,
    fallback: *const HfrlConfig,
    out: *mut *mut HfrlModel,
) -> HfrlStatus {
    guard(|| {
        let log = borrow(log, "log")?;
        let fallback = fallback.as_ref().map(|c| &c.0);
        let r = replay(&log.0, fallback)?;
        let model = HfrlModel {
            spec: r.config.grid,
            ensemble: r.ensemble,
        };
        put(out, Box::into_raw(Box::new(model)))
    })
}

/// Ensemble-mean learned reward for taking `action` (0 up, 1 down, 2 left,
/// 3 right) in cell `(x, y)`.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hfrl_model_cell_reward(
    model: *const HfrlModel,
    x: i32,
    y: i32,
    action: u32,
    out: *mut f64,
) -> HfrlStatus {
    guard(|| {
        let m = borrow(model, "model")?;
        let action = Action::from_index(action as usize).ok_or_else(|| {
            Fail(
                HfrlStatus::Usage,
                format!("action index {action} out of range"),
            )
        })?;
        let cell = Cell { x, y };
        if !m.spec.in_bounds(cell) {
            return Err(Fail(
                HfrlStatus::Usage,
                format!("cell ({x}, {y}) outside the grid"),
            ));
        }
        put(out, m.ensemble.cell_reward(&m.spec, cell, action))
    })
}

/// Spearman correlation between learned and true rewards over all
/// state-actions.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hfrl_model_alignment(
    model: *const HfrlModel,
    out: *mut f64,
) -> HfrlStatus {
    guard(|| {
        let m = borrow(model, "model")?;
        put(out, ensemble_alignment(&m.spec, &m.ensemble)?.rho)
    })
}

/// Number of fits the model has been through.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hfrl_model_version(model: *const HfrlModel, out: *mut u64) -> HfrlStatus {
    guard(|| put(out, borrow(model, "model")?.ensemble.version))
}

/// The ensemble as a JSON checkpoint.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hfrl_model_to_json(
    model: *const HfrlModel,
    out: *mut *mut c_char,
) -> HfrlStatus {
    guard(|| put_string(out, borrow(model, "model")?.ensemble.to_json()))
}

/// # Safety
/// `model` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn hfrl_model_free(model: *mut HfrlModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
