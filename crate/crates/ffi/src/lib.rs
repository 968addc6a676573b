//! C ABI over the `vlodtta` engine.
//!
//! Structured inputs and outputs cross the boundary as UTF-8 JSON. Every
//! fallible call returns a [`VlodttaStatus`]; on failure the message is
//! available from [`vlodtta_last_error`] on the same thread. Strings returned
//! through `out` parameters are owned by the caller and released with
//! [`vlodtta_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use vlodtta::adapt::{adapter_param_count, EpisodeConfig, Method, TtaEngine};
use vlodtta::eval::{evaluate, ImageResult};
use vlodtta::geometry::BBox;
use vlodtta::scene::SceneDocument;
use vlodtta::Error;

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VlodttaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidJson = 3,
    /// Bad configuration value, method name, or box.
    InvalidArgument = 4,
    ShapeMismatch = 5,
    /// Non-finite value or degenerate normalization.
    NumericError = 6,
    EmptyImage = 7,
    /// A panic was caught at the boundary; the engine should be discarded.
    Panic = 8,
}

/// Adaptation engine for one feature dimension. Reset to its initial
/// parameters after every episode, so a handle can be reused across images
/// but must not be shared between threads without external locking.
pub struct VlodttaEngine {
    inner: TtaEngine,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(VlodttaStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::InvalidBox { .. } | Error::InvalidConfig(_) => VlodttaStatus::InvalidArgument,
            Error::ShapeMismatch(_) => VlodttaStatus::ShapeMismatch,
            Error::NearZeroRow { .. } | Error::DegenerateWeights(_) | Error::NonFinite(_) => {
                VlodttaStatus::NumericError
            }
            Error::EmptyImage => VlodttaStatus::EmptyImage,
        };
        Failure(status, e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure(VlodttaStatus::InvalidJson, e.to_string())
    }
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = c);
}

/// Runs `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> VlodttaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            VlodttaStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(&format!("panic: {msg}"));
            VlodttaStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(VlodttaStatus::NullPointer, format!("{what} is null"))
}

/// # Safety
/// `p` is null or a NUL-terminated string valid for the call.
unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|e| Failure(VlodttaStatus::InvalidUtf8, format!("{what}: {e}")))
}

/// # Safety
/// `out` is null or valid for one pointer write.
unsafe fn write_string(out: *mut *mut c_char, text: String) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    let c = CString::new(text).map_err(|_| Failure(VlodttaStatus::InvalidJson, "output contains NUL".into()))?;
    *out = c.into_raw();
    Ok(())
}

/// Creates an engine for `dim`-dimensional features. `config_json` holds
/// episode parameters as a JSON object (missing keys take defaults) and may
/// be null for all defaults.
///
/// # Safety
/// `config_json` is null or a NUL-terminated string; `out` is valid for one
/// pointer write.
#[no_mangle]
pub unsafe extern "C" fn vlodtta_engine_new(
    config_json: *const c_char,
    dim: usize,
    out: *mut *mut VlodttaEngine,
) -> VlodttaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("output pointer"));
        }
        *out = ptr::null_mut();
        let cfg: EpisodeConfig = if config_json.is_null() {
            EpisodeConfig::default()
        } else {
            serde_json::from_str(read_str(config_json, "config")?)?
        };
        let inner = TtaEngine::new(cfg, dim)?;
        *out = Box::into_raw(Box::new(VlodttaEngine { inner }));
        Ok(())
    })
}

/// Releases an engine. Null is ignored.
///
/// # Safety
/// `engine` is null or came from [`vlodtta_engine_new`] and is not used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn vlodtta_engine_free(engine: *mut VlodttaEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Runs `method` ("zs", "entropy", "pa" or "vlodtta") on a scene document and
/// writes the detections as a JSON array to `out_json`.
///
/// # Safety
/// `engine` came from [`vlodtta_engine_new`]; the strings are NUL-terminated;
/// `out_json` is valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn vlodtta_engine_run(
    engine: *mut VlodttaEngine,
    scene_json: *const c_char,
    method: *const c_char,
    out_json: *mut *mut c_char,
) -> VlodttaStatus {
    guard(|| {
        let engine = engine.as_mut().ok_or_else(|| null("engine"))?;
        let method: Method = read_str(method, "method")?.parse()?;
        let doc: SceneDocument = serde_json::from_str(read_str(scene_json, "scene")?)?;
        let (proposals, pool, _) = doc.into_parts()?;
        let detections = engine.inner.run(method, &proposals, &pool)?;
        write_string(out_json, serde_json::to_string(&detections)?)
    })
}

/// Runs one adaptation episode with the engine's own parameters and writes
/// its trace (loss, gradient norms, selections, clusters, detections) as JSON.
///
/// # Safety
/// As for [`vlodtta_engine_run`].
#[no_mangle]
pub unsafe extern "C" fn vlodtta_engine_adapt(
    engine: *mut VlodttaEngine,
    scene_json: *const c_char,
    out_json: *mut *mut c_char,
) -> VlodttaStatus {
    guard(|| {
        let engine = engine.as_mut().ok_or_else(|| null("engine"))?;
        let doc: SceneDocument = serde_json::from_str(read_str(scene_json, "scene")?)?;
        let (proposals, pool, _) = doc.into_parts()?;
        let (_, trace) = engine.inner.adapt_episode(&proposals, &pool)?;
        write_string(out_json, serde_json::to_string(&trace)?)
    })
}

/// 1 when the engine holds its initial parameters, 0 when not, -1 for null.
///
/// # Safety
/// `engine` is null or came from [`vlodtta_engine_new`].
#[no_mangle]
pub unsafe extern "C" fn vlodtta_engine_is_pristine(engine: *const VlodttaEngine) -> i32 {
    match engine.as_ref() {
        Some(e) => i32::from(e.inner.state().is_at_snapshot()),
        None => -1,
    }
}

/// COCO-style AP over a JSON array of `{"detections": [...], "ground_truth":
/// [...]}` images for classes `0..num_classes`; writes the report as JSON.
///
/// # Safety
/// `images_json` is NUL-terminated; `out_json` is valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn vlodtta_evaluate(
    images_json: *const c_char,
    num_classes: usize,
    out_json: *mut *mut c_char,
) -> VlodttaStatus {
    guard(|| {
        let images: Vec<ImageResult> = serde_json::from_str(read_str(images_json, "images")?)?;
        if let Some(c) = images
            .iter()
            .flat_map(|i| i.detections.iter().map(|d| d.class_id).chain(i.ground_truth.iter().map(|g| g.class_id)))
            .find(|&c| c >= num_classes)
        {
            return Err(Failure(VlodttaStatus::InvalidArgument, format!("class {c} outside 0..{num_classes}")));
        }
        write_string(out_json, serde_json::to_string(&evaluate(&images, num_classes))?)
    })
}

/// IoU of two `[x1, y1, x2, y2]` boxes.
///
/// # Safety
/// `a` and `b` point to four doubles each; `out` is valid for one write.
#[no_mangle]
pub unsafe extern "C" fn vlodtta_iou(a: *const f64, b: *const f64, out: *mut f64) -> VlodttaStatus {
    guard(|| {
        if a.is_null() || b.is_null() || out.is_null() {
            return Err(null("argument"));
        }
        let load = |p: *const f64| -> Result<BBox, Failure> {
            let v = std::slice::from_raw_parts(p, 4);
            Ok(BBox::new(v[0], v[1], v[2], v[3])?)
        };
        *out = vlodtta::geometry::iou(&load(a)?, &load(b)?);
        Ok(())
    })
}

/// Trainable adapter parameters, weights plus biases, for dimension `dim`
/// and reduction `reduction`.
///
/// # Safety
/// `out` is valid for one write.
#[no_mangle]
pub unsafe extern "C" fn vlodtta_adapter_param_count(dim: usize, reduction: usize, out: *mut usize) -> VlodttaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("output pointer"));
        }
        *out = adapter_param_count(dim, reduction)?.with_bias;
        Ok(())
    })
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn vlodtta_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Releases a string returned through an `out_json` parameter. Null is
/// ignored.
///
/// # Safety
/// `s` is null or came from this library and is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn vlodtta_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn vlodtta_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
