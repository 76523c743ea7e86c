//! C interface to the avscan analyzer.
//!
//! Handles are opaque and owned by the caller once returned; release them
//! with the matching `avs_*_free`. Every call returns an [`AvsStatus`], and on
//! failure [`avs_last_error`] describes what went wrong on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::time::Duration;

use avscan::bytecode::{decode_hex, BytecodeError, CodeOrigin, RawCode};
use avscan::detector::VerificationMode;
use avscan::report::{analyze, AnalyzeOptions, Report, Verdict};
use thiserror::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AvsStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidInput = 3,
    OutOfRange = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AvsVerdict {
    Clean = 0,
    Vulnerable = 1,
    Error = 2,
    Timeout = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AvsMode {
    Whitelist = 0,
    Strict = 1,
    Literal = 2,
}

/// One finding, copied out of a report.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AvsFinding {
    /// False when the contract has no dispatcher.
    pub has_selector: bool,
    pub selector: u32,
    pub param_index: u32,
    /// Byte offset of the parameter in calldata.
    pub param_offset: u32,
    pub call_pc: u64,
    pub effect_pc: u64,
    /// The state change is a zero-value call rather than a store.
    pub via_plain_call: bool,
}

/// Analysis settings.
pub struct AvsOptions {
    inner: AnalyzeOptions,
}

/// A finished analysis.
pub struct AvsReport {
    inner: Report,
}

#[derive(Debug, Error)]
enum FfiError {
    #[error("{0} is null")]
    Null(&'static str),
    #[error("{0} is not valid UTF-8")]
    Utf8(&'static str),
    #[error(transparent)]
    Input(#[from] BytecodeError),
    #[error("index {index} out of range (have {len})")]
    Range { index: usize, len: usize },
}

impl FfiError {
    fn status(&self) -> AvsStatus {
        match self {
            FfiError::Null(_) => AvsStatus::NullArgument,
            FfiError::Utf8(_) => AvsStatus::InvalidUtf8,
            FfiError::Input(_) => AvsStatus::InvalidInput,
            FfiError::Range { .. } => AvsStatus::OutOfRange,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes were replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Runs `f`, turning errors and panics into a status and a stored message.
fn guard(f: impl FnOnce() -> Result<(), FfiError>) -> AvsStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AvsStatus::Ok,
        Ok(Err(e)) => {
            set_error(e.to_string());
            e.status()
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            AvsStatus::Panic
        }
    }
}

unsafe fn nonnull<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, FfiError> {
    p.as_ref().ok_or(FfiError::Null(what))
}

unsafe fn nonnull_mut<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, FfiError> {
    p.as_mut().ok_or(FfiError::Null(what))
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next avs_* call on the same thread.
#[no_mangle]
pub extern "C" fn avs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn avs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Default options: 600 s timeout, 512 paths per function, whitelist mode.
#[no_mangle]
pub extern "C" fn avs_options_new() -> *mut AvsOptions {
    Box::into_raw(Box::new(AvsOptions { inner: AnalyzeOptions::default() }))
}

/// # Safety
/// `opts` must come from [`avs_options_new`] and not be freed yet, or be null.
#[no_mangle]
pub unsafe extern "C" fn avs_options_free(opts: *mut AvsOptions) {
    if !opts.is_null() {
        drop(Box::from_raw(opts));
    }
}

/// # Safety
/// `opts` must be a live options handle.
#[no_mangle]
pub unsafe extern "C" fn avs_options_set_timeout_ms(opts: *mut AvsOptions, ms: u64) -> AvsStatus {
    guard(|| {
        nonnull_mut(opts, "opts")?.inner.timeout = Duration::from_millis(ms);
        Ok(())
    })
}

/// # Safety
/// `opts` must be a live options handle.
#[no_mangle]
pub unsafe extern "C" fn avs_options_set_max_paths(opts: *mut AvsOptions, max_paths: usize) -> AvsStatus {
    guard(|| {
        nonnull_mut(opts, "opts")?.inner.max_paths = max_paths;
        Ok(())
    })
}

/// # Safety
/// `opts` must be a live options handle.
#[no_mangle]
pub unsafe extern "C" fn avs_options_set_mode(opts: *mut AvsOptions, mode: AvsMode) -> AvsStatus {
    guard(|| {
        nonnull_mut(opts, "opts")?.inner.mode = match mode {
            AvsMode::Whitelist => VerificationMode::Whitelist,
            AvsMode::Strict => VerificationMode::Strict,
            AvsMode::Literal => VerificationMode::Literal,
        };
        Ok(())
    })
}

unsafe fn finish(code: RawCode, opts: *const AvsOptions, out: *mut *mut AvsReport) -> Result<(), FfiError> {
    let defaults = AnalyzeOptions::default();
    let options = opts.as_ref().map_or(&defaults, |o| &o.inner);
    let report = analyze(&code, "ffi", options).report;
    *out = Box::into_raw(Box::new(AvsReport { inner: report }));
    Ok(())
}

/// Analyses raw creation or runtime bytecode. `opts` may be null for defaults.
///
/// # Safety
/// `code` must point to `len` readable bytes and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn avs_analyze_bytes(
    code: *const u8,
    len: usize,
    opts: *const AvsOptions,
    out: *mut *mut AvsReport,
) -> AvsStatus {
    guard(|| {
        let out = nonnull_mut(out, "out")?;
        *out = ptr::null_mut();
        let bytes = std::slice::from_raw_parts(nonnull(code, "code")?, len).to_vec();
        finish(RawCode::new(bytes, CodeOrigin::BinaryFile)?, opts, out)
    })
}

/// Analyses a hex string, with or without a `0x` prefix.
///
/// # Safety
/// `hex` must be a NUL-terminated string and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn avs_analyze_hex(
    hex: *const c_char,
    opts: *const AvsOptions,
    out: *mut *mut AvsReport,
) -> AvsStatus {
    guard(|| {
        let out = nonnull_mut(out, "out")?;
        *out = ptr::null_mut();
        let text = CStr::from_ptr(nonnull(hex, "hex")?).to_str().map_err(|_| FfiError::Utf8("hex"))?;
        finish(decode_hex(text)?, opts, out)
    })
}

/// # Safety
/// `report` must come from an analyze call and not be freed yet, or be null.
#[no_mangle]
pub unsafe extern "C" fn avs_report_free(report: *mut AvsReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// # Safety
/// `report` must be a live report handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn avs_report_verdict(report: *const AvsReport, out: *mut AvsVerdict) -> AvsStatus {
    guard(|| {
        let r = nonnull(report, "report")?;
        *nonnull_mut(out, "out")? = match r.inner.verdict {
            Verdict::Clean => AvsVerdict::Clean,
            Verdict::Vulnerable => AvsVerdict::Vulnerable,
            Verdict::Error => AvsVerdict::Error,
            Verdict::Timeout => AvsVerdict::Timeout,
        };
        Ok(())
    })
}

/// # Safety
/// `report` must be a live report handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn avs_report_finding_count(report: *const AvsReport, out: *mut usize) -> AvsStatus {
    guard(|| {
        *nonnull_mut(out, "out")? = nonnull(report, "report")?.inner.findings.len();
        Ok(())
    })
}

/// # Safety
/// `report` must be a live report handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn avs_report_finding(report: *const AvsReport, index: usize, out: *mut AvsFinding) -> AvsStatus {
    guard(|| {
        let findings = &nonnull(report, "report")?.inner.findings;
        let out = nonnull_mut(out, "out")?;
        let f = findings.get(index).ok_or(FfiError::Range { index, len: findings.len() })?;
        let selector = f.selector.as_deref().and_then(|s| u32::from_str_radix(s.trim_start_matches("0x"), 16).ok());
        *out = AvsFinding {
            has_selector: selector.is_some(),
            selector: selector.unwrap_or(0),
            param_index: f.param_index as u32,
            param_offset: f.param_offset,
            call_pc: f.call_pc as u64,
            effect_pc: f.effect_pc as u64,
            via_plain_call: f.via_plain_call,
        };
        Ok(())
    })
}

/// The full report as pretty-printed JSON. Free the string with
/// [`avs_string_free`].
///
/// # Safety
/// `report` must be a live report handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn avs_report_json(report: *const AvsReport, out: *mut *mut c_char) -> AvsStatus {
    guard(|| {
        let out = nonnull_mut(out, "out")?;
        *out = ptr::null_mut();
        let json = nonnull(report, "report")?.inner.to_json();
        *out = CString::new(json).expect("JSON has no NUL bytes").into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library and not be freed yet, or be null.
#[no_mangle]
pub unsafe extern "C" fn avs_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
