//! C ABI over `mbr_probe`.
//!
//! Handles are opaque pointers created by `*_new`/`*_load` and released by
//! the matching `*_free`. Every function returns an [`MbrpStatus`]; on
//! failure a description is available from [`mbrp_last_error_message`] on
//! the same thread. Strings returned through `char **` out-parameters are
//! owned by the caller and must be released with [`mbrp_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, c_double, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mbr_probe::corpus::{extract_numbers, load_corpus, Corpus, CorpusError};
use mbr_probe::mbr::{dedup_pool, mbr_decode, mbr_select, CandidateSource, MatrixOptions, SupportSource};
use mbr_probe::metrics::{as_utility, MetricKind, Utility};
use mbr_probe::rpc::client::{split_command, ConnectOptions, RemoteUtility};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MbrpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Parse = 5,
    Scorer = 6,
    Panic = 7,
}

/// A loaded corpus.
pub struct MbrpCorpus {
    inner: Corpus,
}

/// A utility metric, in-process or backed by a scorer process.
pub struct MbrpUtility {
    inner: Box<dyn Utility>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(MbrpStatus, String);

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', "\\0")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MbrpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            MbrpStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_last_error(&message);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(&format!("internal panic: {msg}"));
            MbrpStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(MbrpStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(MbrpStatus::InvalidUtf8, format!("{name}: {e}")))
}

fn out_arg<T>(p: *mut T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(MbrpStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(MbrpStatus::NullPointer, format!("{name} is null")))
}

fn to_c_string(s: &str) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure(MbrpStatus::InvalidArgument, "string contains NUL".into()))
}

/// Message of the last failed call on this thread, or NULL after a
/// successful call. Valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn mbrp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mbrp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a JSON-lines corpus.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mbrp_corpus_load(path: *const c_char, out: *mut *mut MbrpCorpus) -> MbrpStatus {
    guard(|| {
        out_arg(out, "out")?;
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let corpus = load_corpus(path).map_err(|e| {
            let status = match e {
                CorpusError::Io { .. } => MbrpStatus::Io,
                _ => MbrpStatus::Parse,
            };
            Failure(status, e.to_string())
        })?;
        *out = Box::into_raw(Box::new(MbrpCorpus { inner: corpus }));
        Ok(())
    })
}

/// Number of segments, 0 for NULL.
///
/// # Safety
/// `corpus` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mbrp_corpus_len(corpus: *const MbrpCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.inner.len())
}

/// # Safety
/// `corpus` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mbrp_corpus_free(corpus: *mut MbrpCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Creates a utility from `"chrf++"`, `"bleu"` or `"remote:<command>"`.
///
/// # Safety
/// `spec` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mbrp_utility_new(spec: *const c_char, out: *mut *mut MbrpUtility) -> MbrpStatus {
    guard(|| {
        out_arg(out, "out")?;
        *out = ptr::null_mut();
        let spec = str_arg(spec, "spec")?;
        let inner: Box<dyn Utility> = match spec.strip_prefix("remote:") {
            Some(cmd) => {
                let argv = split_command(cmd);
                if argv.is_empty() {
                    return Err(Failure(MbrpStatus::InvalidArgument, "empty scorer command".into()));
                }
                let remote = RemoteUtility::spawn(&argv, 1, &ConnectOptions::default())
                    .map_err(|e| Failure(MbrpStatus::Scorer, e.to_string()))?;
                Box::new(remote)
            }
            None => {
                let kind: MetricKind = spec
                    .parse()
                    .map_err(|e| Failure(MbrpStatus::InvalidArgument, format!("{e}")))?;
                as_utility(kind)
            }
        };
        *out = Box::into_raw(Box::new(MbrpUtility { inner }));
        Ok(())
    })
}

/// # Safety
/// `utility` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mbrp_utility_free(utility: *mut MbrpUtility) {
    if !utility.is_null() {
        drop(Box::from_raw(utility));
    }
}

/// Scores one candidate against one support hypothesis.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mbrp_utility_score(
    utility: *const MbrpUtility,
    source: *const c_char,
    candidate: *const c_char,
    support: *const c_char,
    out: *mut c_double,
) -> MbrpStatus {
    guard(|| {
        out_arg(out, "out")?;
        let u = handle(utility, "utility")?;
        let (x, c, s) = (
            str_arg(source, "source")?,
            str_arg(candidate, "candidate")?,
            str_arg(support, "support")?,
        );
        *out = u
            .inner
            .score(x, c, s)
            .map_err(|e| Failure(MbrpStatus::Scorer, e.to_string()))?;
        Ok(())
    })
}

/// MBR decoding over `n` samples that serve as both candidates and support.
/// `chosen_index` receives the index into `samples` of the first occurrence
/// of the chosen hypothesis.
///
/// # Safety
/// `samples` must point to `n` NUL-terminated strings; out-parameters must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn mbrp_mbr_decode_samples(
    utility: *const MbrpUtility,
    source: *const c_char,
    samples: *const *const c_char,
    n: usize,
    chosen_index: *mut usize,
    mbr_score: *mut c_double,
) -> MbrpStatus {
    guard(|| {
        out_arg(chosen_index, "chosen_index")?;
        out_arg(mbr_score, "mbr_score")?;
        let u = handle(utility, "utility")?;
        let source = str_arg(source, "source")?;
        if n == 0 {
            return Err(Failure(MbrpStatus::InvalidArgument, "no samples".into()));
        }
        if samples.is_null() {
            return Err(Failure(MbrpStatus::NullPointer, "samples is null".into()));
        }
        let texts = std::slice::from_raw_parts(samples, n)
            .iter()
            .enumerate()
            .map(|(i, &p)| str_arg(p, &format!("samples[{i}]")).map(str::to_string))
            .collect::<Result<Vec<_>, _>>()?;
        let pool = dedup_pool(&texts).map_err(|e| Failure(MbrpStatus::InvalidArgument, e.to_string()))?;
        let r = mbr_select(source, pool, u.inner.as_ref(), MatrixOptions::default())
            .map_err(|e| Failure(MbrpStatus::Scorer, e.to_string()))?;
        *chosen_index = texts.iter().position(|t| *t == r.chosen_text).unwrap_or(0);
        *mbr_score = r.mbr_scores[r.chosen_index];
        Ok(())
    })
}

/// MBR decoding of segment `index` of a corpus over its own samples.
///
/// # Safety
/// Handles must be live; out-parameters must be writable. `*chosen_text`
/// must be released with [`mbrp_string_free`].
#[no_mangle]
pub unsafe extern "C" fn mbrp_corpus_decode(
    corpus: *const MbrpCorpus,
    utility: *const MbrpUtility,
    index: usize,
    chosen_text: *mut *mut c_char,
    mbr_score: *mut c_double,
) -> MbrpStatus {
    guard(|| {
        out_arg(chosen_text, "chosen_text")?;
        out_arg(mbr_score, "mbr_score")?;
        *chosen_text = ptr::null_mut();
        let c = handle(corpus, "corpus")?;
        let u = handle(utility, "utility")?;
        let segment = c.inner.segments.get(index).ok_or_else(|| {
            Failure(
                MbrpStatus::InvalidArgument,
                format!("segment index {index} out of range ({} segments)", c.inner.len()),
            )
        })?;
        let r = mbr_decode(
            segment,
            u.inner.as_ref(),
            &CandidateSource::Samples,
            &SupportSource::Samples,
            MatrixOptions::default(),
        )
        .map_err(|e| Failure(MbrpStatus::Scorer, e.to_string()))?;
        *mbr_score = r.mbr_scores[r.chosen_index];
        *chosen_text = to_c_string(&r.chosen_text)?;
        Ok(())
    })
}

/// Numbers in `text` as a JSON array of strings.
///
/// # Safety
/// `text` must be NUL-terminated; `*out_json` must be released with
/// [`mbrp_string_free`].
#[no_mangle]
pub unsafe extern "C" fn mbrp_extract_numbers(text: *const c_char, out_json: *mut *mut c_char) -> MbrpStatus {
    guard(|| {
        out_arg(out_json, "out_json")?;
        *out_json = ptr::null_mut();
        let text = str_arg(text, "text")?;
        let json = serde_json::to_string(&extract_numbers(text))
            .map_err(|e| Failure(MbrpStatus::InvalidArgument, e.to_string()))?;
        *out_json = to_c_string(&json)?;
        Ok(())
    })
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be NULL or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mbrp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
