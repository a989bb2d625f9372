//! C ABI over the compex library.
//!
//! Handles are opaque pointers created by `*_load` / `*_toy` and released by
//! the matching `*_free`. Functions return a [`CompexStatus`]; on failure the
//! message is available from [`compex_last_error`] on the same thread.
//! Strings handed out by the library are freed with [`compex_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::OnceLock;

use compex::corpus::{annotate_text, build_matcher, tokenize, Matcher};
use compex::inference::{predict, PredictionRecord};
use compex::model::checkpoint_from_str;
use compex::taxonomy::{class_labels, toy_taxonomy, FormSelection, NUM_CLASSES};
use compex::{ErrorCategory, Taxonomy, TrainedModel};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompexStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Malformed input: taxonomy, checkpoint, text.
    DataError = 3,
    RuntimeError = 4,
    /// A Rust panic was caught at the boundary.
    Panic = 5,
}

/// A loaded taxonomy together with its compiled matcher.
pub struct CompexTaxonomy {
    #[allow(dead_code)]
    taxonomy: Taxonomy,
    matcher: Matcher,
}

/// A loaded checkpoint.
pub struct CompexModel {
    model: TrainedModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(CompexStatus, String);

impl From<compex::Error> for Failure {
    fn from(e: compex::Error) -> Failure {
        let status = match e.category() {
            ErrorCategory::Data => CompexStatus::DataError,
            ErrorCategory::Runtime => CompexStatus::RuntimeError,
        };
        Failure(status, format!("{}: {e}", e.kind()))
    }
}

fn lib<E: Into<compex::Error>>(e: E) -> Failure {
    Failure::from(e.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CompexStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            CompexStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside compex".into());
            CompexStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(CompexStatus::NullPointer, "null string argument".into()));
    }
    CStr::from_ptr(p).to_str().map_err(|e| Failure(CompexStatus::InvalidUtf8, e.to_string()))
}

fn check_out<T>(out: *mut T) -> Result<(), Failure> {
    if out.is_null() {
        Err(Failure(CompexStatus::NullPointer, "null output pointer".into()))
    } else {
        Ok(())
    }
}

fn to_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|e| Failure(CompexStatus::RuntimeError, e.to_string()))
}

fn make_taxonomy(taxonomy: Taxonomy) -> Result<*mut CompexTaxonomy, Failure> {
    let matcher = build_matcher(&taxonomy, FormSelection::All).map_err(lib)?;
    Ok(Box::into_raw(Box::new(CompexTaxonomy { taxonomy, matcher })))
}

/// Message of the last failed call on this thread, or null. Owned by the
/// library and valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn compex_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Parses a taxonomy from JSONL text.
///
/// # Safety
/// `jsonl` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn compex_taxonomy_load(jsonl: *const c_char, out: *mut *mut CompexTaxonomy) -> CompexStatus {
    guard(|| {
        check_out(out)?;
        let text = read_str(jsonl)?;
        let taxonomy = Taxonomy::parse_jsonl(text).map_err(lib)?;
        *out = make_taxonomy(taxonomy)?;
        Ok(())
    })
}

/// The built-in toy taxonomy.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn compex_taxonomy_toy(out: *mut *mut CompexTaxonomy) -> CompexStatus {
    guard(|| {
        check_out(out)?;
        *out = make_taxonomy(toy_taxonomy())?;
        Ok(())
    })
}

/// # Safety
/// `handle` must come from a taxonomy constructor, or be null.
#[no_mangle]
pub unsafe extern "C" fn compex_taxonomy_free(handle: *mut CompexTaxonomy) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Annotates `text` against the taxonomy and writes the annotated sentence
/// as a JSON string to `out`.
///
/// # Safety
/// Pointers must be valid; free `*out` with [`compex_string_free`].
#[no_mangle]
pub unsafe extern "C" fn compex_annotate_json(
    handle: *const CompexTaxonomy,
    text: *const c_char,
    out: *mut *mut c_char,
) -> CompexStatus {
    guard(|| {
        check_out(out)?;
        let tax = handle.as_ref().ok_or(Failure(CompexStatus::NullPointer, "null taxonomy".into()))?;
        let sentence = annotate_text(read_str(text)?, &tax.matcher);
        let json = serde_json::to_string(&sentence).map_err(|e| Failure(CompexStatus::RuntimeError, e.to_string()))?;
        *out = to_c_string(json)?;
        Ok(())
    })
}

/// Loads a checkpoint from its JSON text.
///
/// # Safety
/// `checkpoint` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn compex_model_load(checkpoint: *const c_char, out: *mut *mut CompexModel) -> CompexStatus {
    guard(|| {
        check_out(out)?;
        let model = checkpoint_from_str(read_str(checkpoint)?).map_err(lib)?;
        *out = Box::into_raw(Box::new(CompexModel { model }));
        Ok(())
    })
}

/// # Safety
/// `handle` must come from [`compex_model_load`], or be null.
#[no_mangle]
pub unsafe extern "C" fn compex_model_free(handle: *mut CompexModel) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Extracts and classifies competences in `text`. Writes a JSON object
/// `{"text", "entities": [{"first", "last", "surface", "class", "prob"}]}`.
///
/// # Safety
/// Pointers must be valid; free `*out` with [`compex_string_free`].
#[no_mangle]
pub unsafe extern "C" fn compex_predict_json(
    handle: *const CompexModel,
    text: *const c_char,
    out: *mut *mut c_char,
) -> CompexStatus {
    guard(|| {
        check_out(out)?;
        let model = handle.as_ref().ok_or(Failure(CompexStatus::NullPointer, "null model".into()))?;
        let text = read_str(text)?;
        let prediction = predict(text, &model.model).map_err(lib)?;
        let record = PredictionRecord::new(text, &tokenize(text), &prediction);
        let json = serde_json::to_string(&record).map_err(|e| Failure(CompexStatus::RuntimeError, e.to_string()))?;
        *out = to_c_string(json)?;
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library, or be null.
#[no_mangle]
pub unsafe extern "C" fn compex_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Number of competence classes.
#[no_mangle]
pub extern "C" fn compex_class_count() -> usize {
    NUM_CLASSES
}

/// Code of class `index` (e.g. "K06"), or null when out of range. The string
/// is static.
#[no_mangle]
pub extern "C" fn compex_class_code(index: usize) -> *const c_char {
    static CODES: OnceLock<Vec<CString>> = OnceLock::new();
    let codes = CODES.get_or_init(|| class_labels().iter().map(|c| CString::new(c.as_str()).unwrap()).collect());
    codes.get(index).map_or(ptr::null(), |c| c.as_ptr())
}
