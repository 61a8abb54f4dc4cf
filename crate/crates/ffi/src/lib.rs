//! C ABI over `tcpmetro`.
//!
//! Objects cross the boundary as opaque pointers created by a `*_new` or
//! `*_run` call and released with the matching `*_free`. Every fallible call
//! returns a [`TmStatus`]; on failure the message is kept per thread and can
//! be read with [`tm_last_error`]. Paths and keys are NUL-terminated UTF-8.
//!
//! Addresses are passed as host-order `uint32_t` (so `10.0.0.1` is
//! `0x0A000001`).

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use tcpmetro::anon::{anonymize_trace, AesPrf, AnonError, AnonKey, Anonymizer};
use tcpmetro::config::{ConfigError, RunConfig};
use tcpmetro::pipeline::{run_analysis, PipelineError};
use tcpmetro::report::{emit_report, summarize, Aggregates, ReportError, ReportInput, Summary};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TmStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    BadKey = 3,
    Config = 4,
    /// Unreadable or malformed capture file.
    Ingest = 5,
    Io = 6,
    /// Report construction or output failed.
    Report = 7,
    /// No key was configured, so nothing address-bearing is written.
    RefusesRawAddresses = 8,
    Panic = 9,
}

/// Keyed prefix-preserving address map.
pub struct TmAnonymizer {
    inner: Anonymizer<AesPrf>,
}

/// Result of analyzing the traces named by a run config.
pub struct TmAnalysis {
    config: RunConfig,
    input: ReportInput,
    summary: Summary,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl ToString) {
    let text = msg.to_string().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

struct Fail(TmStatus, String);

impl Fail {
    fn new(status: TmStatus, msg: impl ToString) -> Fail {
        Fail(status, msg.to_string())
    }
}

impl From<AnonError> for Fail {
    fn from(e: AnonError) -> Self {
        let status = match e {
            AnonError::BadKeyLength(_) | AnonError::BadKeyHex => TmStatus::BadKey,
            AnonError::Ingest(_) => TmStatus::Ingest,
            AnonError::WriteFailure { .. } => TmStatus::Io,
        };
        Fail::new(status, e)
    }
}

impl From<ConfigError> for Fail {
    fn from(e: ConfigError) -> Self {
        let status = match e {
            ConfigError::Key { .. } => TmStatus::BadKey,
            _ => TmStatus::Config,
        };
        Fail::new(status, e)
    }
}

impl From<ReportError> for Fail {
    fn from(e: ReportError) -> Self {
        let status = match e {
            ReportError::RefusesRawAddresses => TmStatus::RefusesRawAddresses,
            ReportError::WriteFailure { .. } => TmStatus::Io,
            _ => TmStatus::Report,
        };
        Fail::new(status, e)
    }
}

impl From<PipelineError> for Fail {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(c) => c.into(),
            PipelineError::Report(r) => r.into(),
            PipelineError::Classify(_) => Fail::new(TmStatus::Config, e),
            PipelineError::Ingest { .. } => Fail::new(TmStatus::Ingest, e),
            PipelineError::Io { .. } => Fail::new(TmStatus::Io, e),
        }
    }
}

/// Runs `f`, turning errors and panics into a status plus a stored message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> TmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            TmStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            TmStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::new(TmStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail::new(TmStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

fn null(what: &str) -> Fail {
    Fail::new(TmStatus::NullArgument, format!("{what} is null"))
}

/// Message for the last failed call on this thread, or NULL after a
/// successful one. Valid until the next call into this library.
#[no_mangle]
pub extern "C" fn tm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Creates an anonymizer from a 32-character hex key.
///
/// # Safety
/// `key_hex` must be NULL or a NUL-terminated string; `out` must be NULL or
/// writable.
#[no_mangle]
pub unsafe extern "C" fn tm_anonymizer_new(key_hex: *const c_char, out: *mut *mut TmAnonymizer) -> TmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let key = AnonKey::from_hex(text(key_hex, "key_hex")?.trim())?;
        *out = Box::into_raw(Box::new(TmAnonymizer { inner: Anonymizer::new(&key) }));
        Ok(())
    })
}

/// Maps one host-order IPv4 address.
///
/// # Safety
/// `h` must come from [`tm_anonymizer_new`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tm_anonymizer_map(h: *const TmAnonymizer, addr: u32, out: *mut u32) -> TmStatus {
    guard(|| {
        let h = h.as_ref().ok_or_else(|| null("anonymizer"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = h.inner.anonymize_u32(addr);
        Ok(())
    })
}

/// Rewrites every IPv4 address of a pcap file into a new file.
///
/// # Safety
/// `h` must come from [`tm_anonymizer_new`]; paths must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn tm_anonymizer_rewrite_trace(
    h: *const TmAnonymizer,
    input: *const c_char,
    output: *const c_char,
) -> TmStatus {
    guard(|| {
        let h = h.as_ref().ok_or_else(|| null("anonymizer"))?;
        let (i, o) = (text(input, "input")?, text(output, "output")?);
        anonymize_trace(PathBuf::from(i).as_path(), PathBuf::from(o).as_path(), &h.inner)?;
        Ok(())
    })
}

/// # Safety
/// `h` must be NULL or come from [`tm_anonymizer_new`], and not be used again.
#[no_mangle]
pub unsafe extern "C" fn tm_anonymizer_free(h: *mut TmAnonymizer) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Loads a TOML run config and analyzes its traces. The key is taken from
/// `TCPMETRO_ANON_KEY` or the config, as for the command line tool.
///
/// # Safety
/// `config_path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tm_analysis_run(config_path: *const c_char, out: *mut *mut TmAnalysis) -> TmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let config = RunConfig::load(PathBuf::from(text(config_path, "config_path")?).as_path())?;
        if config.resolve_key()?.is_none() {
            return Err(ReportError::RefusesRawAddresses.into());
        }
        let input = run_analysis(&config)?;
        let summary = summarize(&Aggregates::from_rows(&input.rows), &input);
        *out = Box::into_raw(Box::new(TmAnalysis { config, input, summary }));
        Ok(())
    })
}

/// Number of flows found.
///
/// # Safety
/// `h` must be NULL or come from [`tm_analysis_run`].
#[no_mangle]
pub unsafe extern "C" fn tm_analysis_flow_count(h: *const TmAnalysis) -> u64 {
    h.as_ref().map_or(0, |a| a.input.rows.len() as u64)
}

/// Number of captured frames read, decodable or not.
///
/// # Safety
/// `h` must be NULL or come from [`tm_analysis_run`].
#[no_mangle]
pub unsafe extern "C" fn tm_analysis_packet_count(h: *const TmAnalysis) -> u64 {
    h.as_ref().and_then(|a| a.input.ingest).map_or(0, |s| s.packets_total)
}

/// Number of congestion events over all TCP flows.
///
/// # Safety
/// `h` must be NULL or come from [`tm_analysis_run`].
#[no_mangle]
pub unsafe extern "C" fn tm_analysis_congestion_events(h: *const TmAnalysis) -> u64 {
    h.as_ref().map_or(0, |a| a.summary.congestion_events)
}

/// Writes the report files into `out_dir`, or into the config's `out` when
/// `out_dir` is NULL.
///
/// # Safety
/// `h` must come from [`tm_analysis_run`]; `out_dir` must be NULL or
/// NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn tm_analysis_write(h: *const TmAnalysis, out_dir: *const c_char) -> TmStatus {
    guard(|| {
        let a = h.as_ref().ok_or_else(|| null("analysis"))?;
        let mut opts = a.config.report_options();
        if !out_dir.is_null() {
            opts.out_dir = PathBuf::from(text(out_dir, "out_dir")?);
        }
        emit_report(&a.input, &opts)?;
        Ok(())
    })
}

/// # Safety
/// `h` must be NULL or come from [`tm_analysis_run`], and not be used again.
#[no_mangle]
pub unsafe extern "C" fn tm_analysis_free(h: *mut TmAnalysis) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}
