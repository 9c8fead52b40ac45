//! C ABI for the bias metrics, prompt rendering and scripted detectors.
//!
//! Every function returns a [`GbStatus`]; on failure the message is
//! available from [`gb_last_error`] on the same thread. Strings returned
//! through out-parameters are owned by the caller and released with
//! [`gb_string_free`]. Handles are released with their `_free` function.
//! Undefined metric values are reported as `NaN`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use genbias::detectors::{detect, DetectorConfig, DetectorId, FilterReason, Outcome};
use genbias::gender::GenderLabel;
use genbias::groundtruth::{kappa_from_pairs, CategoryKind};
use genbias::imaging::ImageView;
use genbias::inference::stub::StubBackend;
use genbias::inference::Capabilities;
use genbias::metrics::{model_bias_pct_difference, model_bias_score, prompt_bias_score, FilterConfusion, GenderCounts};
use genbias::prompts::{render_prompt, PromptCategory};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// The value is mathematically undefined for this input.
    Undefined = 3,
    InvalidUtf8 = 4,
    Inference = 5,
    Panic = 6,
}

/// Gender codes used across the ABI.
pub const GB_GENDER_NONE: i32 = -1;
pub const GB_GENDER_MALE: i32 = 0;
pub const GB_GENDER_FEMALE: i32 = 1;

/// Category codes for agreement: male, female, low quality, others.
pub const GB_CATEGORY_MALE: u8 = 0;
pub const GB_CATEGORY_FEMALE: u8 = 1;
pub const GB_CATEGORY_LOW_QUALITY: u8 = 2;
pub const GB_CATEGORY_OTHERS: u8 = 3;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).expect("nul bytes replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

struct Fail(GbStatus, String);

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> GbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GbStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            GbStatus::Panic
        }
    }
}

fn out<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    // SAFETY: caller guarantees `p` is null or valid for writes.
    unsafe { p.as_mut() }.ok_or_else(|| Fail(GbStatus::NullPointer, format!("`{name}` is null")))
}

fn string_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(GbStatus::NullPointer, format!("`{name}` is null")));
    }
    // SAFETY: caller guarantees a nul-terminated string.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Fail(GbStatus::InvalidUtf8, format!("`{name}` is not UTF-8")))
}

fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail(GbStatus::NullPointer, format!("`{name}` is null")));
    }
    // SAFETY: caller guarantees `len` readable elements.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

fn invalid(msg: impl std::fmt::Display) -> Fail {
    Fail(GbStatus::InvalidArgument, msg.to_string())
}

fn nan_if_none(x: Option<f64>) -> f64 {
    x.unwrap_or(f64::NAN)
}

/// Message for the last failure on this thread, or null. Free with
/// [`gb_string_free`].
#[no_mangle]
pub extern "C" fn gb_last_error() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null_mut(), |s| s.clone().into_raw()))
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn gb_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Bias score of one prompt. `Undefined` when there are no clear images.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gb_prompt_bias_score(n_male: u64, n_female: u64, out_score: *mut f64) -> GbStatus {
    guard(|| {
        let o = out(out_score, "out_score")?;
        match prompt_bias_score(&GenderCounts::new("", n_male, n_female, 0)) {
            Some(s) => {
                *o = s;
                Ok(())
            }
            None => {
                *o = f64::NAN;
                Err(Fail(GbStatus::Undefined, "no clear images".into()))
            }
        }
    })
}

/// Per-prompt gender counts for one model.
pub struct GbCounts {
    counts: Vec<GenderCounts>,
}

/// # Safety
/// `out_handle` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gb_counts_new(out_handle: *mut *mut GbCounts) -> GbStatus {
    guard(|| {
        *out(out_handle, "out_handle")? = Box::into_raw(Box::new(GbCounts { counts: Vec::new() }));
        Ok(())
    })
}

/// # Safety
/// `handle` must be null or from [`gb_counts_new`], freed at most once.
#[no_mangle]
pub unsafe extern "C" fn gb_counts_free(handle: *mut GbCounts) {
    if !handle.is_null() {
        drop(unsafe { Box::from_raw(handle) });
    }
}

/// Appends one prompt's tallies.
///
/// # Safety
/// `handle` must be a live counts handle.
#[no_mangle]
pub unsafe extern "C" fn gb_counts_push(handle: *mut GbCounts, n_male: u64, n_female: u64, n_low_quality: u64) -> GbStatus {
    guard(|| {
        let h = out(handle, "handle")?;
        let id = format!("p{}", h.counts.len());
        h.counts.push(GenderCounts::new(id, n_male, n_female, n_low_quality));
        Ok(())
    })
}

/// # Safety
/// `handle` must be a live counts handle; `out_len` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gb_counts_len(handle: *const GbCounts, out_len: *mut usize) -> GbStatus {
    guard(|| {
        // SAFETY: caller contract.
        let h = unsafe { handle.as_ref() }.ok_or_else(|| Fail(GbStatus::NullPointer, "`handle` is null".into()))?;
        *out(out_len, "out_len")? = h.counts.len();
        Ok(())
    })
}

/// Mean absolute prompt score over prompts with clear images.
/// `out_excluded` receives the number of prompts without any.
///
/// # Safety
/// `handle` must be a live counts handle; outputs valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gb_counts_model_bias(
    handle: *const GbCounts,
    out_score: *mut f64,
    out_excluded: *mut usize,
) -> GbStatus {
    guard(|| {
        // SAFETY: caller contract.
        let h = unsafe { handle.as_ref() }.ok_or_else(|| Fail(GbStatus::NullPointer, "`handle` is null".into()))?;
        let score = out(out_score, "out_score")?;
        let excluded = out(out_excluded, "out_excluded")?;
        match model_bias_score(&h.counts) {
            Ok(m) => {
                *score = m.value;
                *excluded = m.excluded;
                Ok(())
            }
            Err(e) => {
                *score = f64::NAN;
                *excluded = h.counts.len();
                Err(Fail(GbStatus::Undefined, e.to_string()))
            }
        }
    })
}

/// `(detector - actual) / actual * 100`.
///
/// # Safety
/// `out_pct` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gb_pct_difference(detector_mbs: f64, actual_mbs: f64, out_pct: *mut f64) -> GbStatus {
    guard(|| {
        let o = out(out_pct, "out_pct")?;
        *o = f64::NAN;
        *o = model_bias_pct_difference(detector_mbs, actual_mbs).map_err(|e| Fail(GbStatus::Undefined, e.to_string()))?;
        Ok(())
    })
}

/// Filter confusion: positive means the image passed the filter.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct GbConfusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

/// Fractions in `[0, 1]`; `NaN` where undefined.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct GbFilterMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub filter_rate: f64,
}

/// # Safety
/// `out_metrics` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gb_filter_metrics(confusion: GbConfusion, out_metrics: *mut GbFilterMetrics) -> GbStatus {
    guard(|| {
        let c = FilterConfusion {
            tp: confusion.tp,
            fp: confusion.fp,
            tn: confusion.tn,
            fn_: confusion.fn_,
        };
        *out(out_metrics, "out_metrics")? = GbFilterMetrics {
            precision: nan_if_none(c.precision()),
            recall: nan_if_none(c.recall()),
            f1: nan_if_none(c.f1()),
            filter_rate: nan_if_none(c.filter_rate()),
        };
        Ok(())
    })
}

fn category(code: u8) -> Result<CategoryKind, Fail> {
    match code {
        GB_CATEGORY_MALE => Ok(CategoryKind::Male),
        GB_CATEGORY_FEMALE => Ok(CategoryKind::Female),
        GB_CATEGORY_LOW_QUALITY => Ok(CategoryKind::LowQuality),
        GB_CATEGORY_OTHERS => Ok(CategoryKind::Others),
        c => Err(invalid(format!("unknown category code {c}"))),
    }
}

/// Cohen's kappa between two aligned label arrays of `GB_CATEGORY_*` codes.
/// `Undefined` when chance agreement is total.
///
/// # Safety
/// `a` and `b` must each hold `len` codes; `out_kappa` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gb_kappa(a: *const u8, b: *const u8, len: usize, out_kappa: *mut f64) -> GbStatus {
    guard(|| {
        let o = out(out_kappa, "out_kappa")?;
        *o = f64::NAN;
        let (a, b) = (slice_arg(a, len, "a")?, slice_arg(b, len, "b")?);
        let pairs = a.iter().zip(b).map(|(x, y)| Ok((category(*x)?, category(*y)?))).collect::<Result<Vec<_>, Fail>>()?;
        if pairs.is_empty() {
            return Err(invalid("no labels"));
        }
        *o = kappa_from_pairs(&pairs).ok_or_else(|| Fail(GbStatus::Undefined, "chance agreement is 1".into()))?;
        Ok(())
    })
}

/// Prompt text for `word` in `category` (e.g. "profession").
///
/// # Safety
/// String arguments must be nul-terminated; `out_text` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gb_render_prompt(category: *const c_char, word: *const c_char, out_text: *mut *mut c_char) -> GbStatus {
    guard(|| {
        let o = out(out_text, "out_text")?;
        *o = std::ptr::null_mut();
        let cat: PromptCategory = string_arg(category, "category")?.parse().map_err(invalid)?;
        let spec = render_prompt(cat, string_arg(word, "word")?).map_err(invalid)?;
        *o = CString::new(spec.text).map_err(invalid)?.into_raw();
        Ok(())
    })
}

/// Detectors backed by a scripted capability provider.
pub struct GbDetector {
    caps: Capabilities,
    config: DetectorConfig,
}

/// Builds a detector handle from a stub script (JSON keyed by image id).
///
/// # Safety
/// `script_json` must be nul-terminated; `out_handle` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gb_detector_new_stub(script_json: *const c_char, out_handle: *mut *mut GbDetector) -> GbStatus {
    guard(|| {
        let o = out(out_handle, "out_handle")?;
        *o = std::ptr::null_mut();
        let stub = StubBackend::from_json(string_arg(script_json, "script_json")?).map_err(invalid)?;
        let h = GbDetector { caps: Capabilities::all_from(Arc::new(stub)), config: DetectorConfig::default() };
        *o = Box::into_raw(Box::new(h));
        Ok(())
    })
}

/// # Safety
/// `handle` must be null or from [`gb_detector_new_stub`], freed at most once.
#[no_mangle]
pub unsafe extern "C" fn gb_detector_free(handle: *mut GbDetector) {
    if !handle.is_null() {
        drop(unsafe { Box::from_raw(handle) });
    }
}

/// One detector decision.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct GbVerdict {
    pub classified: bool,
    /// `GB_GENDER_*`.
    pub gender: i32,
    /// `NaN` when filtered.
    pub confidence: f64,
    /// Filter reason code, `-1` when classified: no_face 0, no_person 1,
    /// multiple_people 2, low_confidence 3, uncertain 4,
    /// unparseable_answer 5, provider_error 6.
    pub reason: i32,
}

fn reason_code(r: FilterReason) -> i32 {
    match r {
        FilterReason::NoFace => 0,
        FilterReason::NoPerson => 1,
        FilterReason::MultiplePeople => 2,
        FilterReason::LowConfidence => 3,
        FilterReason::Uncertain => 4,
        FilterReason::UnparseableAnswer => 5,
        FilterReason::ProviderError => 6,
    }
}

/// Runs `detector` (e.g. "clip-enhance") on a PNG image.
///
/// # Safety
/// Strings must be nul-terminated, `png` must hold `png_len` bytes and
/// `out_verdict` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gb_detect(
    handle: *const GbDetector,
    detector: *const c_char,
    image_id: *const c_char,
    png: *const u8,
    png_len: usize,
    out_verdict: *mut GbVerdict,
) -> GbStatus {
    guard(|| {
        // SAFETY: caller contract.
        let h = unsafe { handle.as_ref() }.ok_or_else(|| Fail(GbStatus::NullPointer, "`handle` is null".into()))?;
        let o = out(out_verdict, "out_verdict")?;
        let id: DetectorId = string_arg(detector, "detector")?.parse().map_err(invalid)?;
        let image = ImageView::decode_png(string_arg(image_id, "image_id")?, slice_arg(png, png_len, "png")?).map_err(invalid)?;
        let outcome = detect(id, &image, &h.caps, &h.config).map_err(|e| Fail(GbStatus::Inference, e.to_string()))?;
        *o = match outcome {
            Outcome::Classified { gender, confidence } => GbVerdict {
                classified: true,
                gender: match gender {
                    GenderLabel::Male => GB_GENDER_MALE,
                    GenderLabel::Female => GB_GENDER_FEMALE,
                },
                confidence,
                reason: -1,
            },
            Outcome::Filtered(r) => GbVerdict { classified: false, gender: GB_GENDER_NONE, confidence: f64::NAN, reason: reason_code(r) },
        };
        Ok(())
    })
}
