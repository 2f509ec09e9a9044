//! C ABI for the objectadd pipeline.
//!
//! Handles are opaque and owned by the caller, who releases them with the
//! matching `*_free` function. Every fallible call returns an `OaStatus`; on
//! failure `oa_last_error_message` describes the error for the calling thread.
//! Byte buffers returned through out-parameters borrow from the handle they
//! came from and stay valid until that handle is freed.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ndarray::{Array2, Array3};
use objectadd::domain::Resolution;
use objectadd::evaluation::by_pixels;
use objectadd::io::decode_png;
use objectadd::jobs::{execute_with, JobArtifacts, JobRequest};
use objectadd::{BackendRef, BinaryMask, DenoiserBackend, EditSpec, Error, GuidanceConfig, PixelBox};

/// Result codes. Values 2 to 4 match the command line's exit codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OaStatus {
    Ok = 0,
    Io = 1,
    Config = 2,
    Backend = 3,
    Segmentation = 4,
    NullPointer = 5,
    InvalidUtf8 = 6,
    NotFound = 7,
    Panic = 8,
}

/// A denoiser backend.
pub struct OaBackend {
    reference: BackendRef,
    model: Box<dyn DenoiserBackend>,
}

/// Artifacts of a finished generate or edit job.
pub struct OaResult {
    artifacts: JobArtifacts,
    manifest_json: CString,
}

/// Box in pixel coordinates.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct OaBox {
    pub top: u32,
    pub left: u32,
    pub height: u32,
    pub width: u32,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(OaStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e.exit_code() {
            2 => OaStatus::Config,
            3 => OaStatus::Backend,
            4 => OaStatus::Segmentation,
            _ => OaStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> OaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OaStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            OaStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(OaStatus::NullPointer, format!("{what} is null"))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(OaStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn bytes<'a>(p: *const u8, len: usize, what: &str) -> Result<&'a [u8], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn finish(artifacts: JobArtifacts, out: *mut *mut OaResult) -> Result<(), Failure> {
    let json = serde_json::to_string(&artifacts.manifest).map_err(Error::from)?;
    let manifest_json = CString::new(json).map_err(|e| Failure(OaStatus::Io, e.to_string()))?;
    let handle = Box::new(OaResult {
        artifacts,
        manifest_json,
    });
    unsafe { *out = Box::into_raw(handle) };
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn oa_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Builds a backend by name ("toy", "toy-forward") and weight seed.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn oa_backend_new(name: *const c_char, seed: u64, out: *mut *mut OaBackend) -> OaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let reference = BackendRef::new(text(name, "name")?, seed);
        let model = reference.build()?;
        *out = Box::into_raw(Box::new(OaBackend { reference, model }));
        Ok(())
    })
}

/// # Safety
/// `backend` must come from `oa_backend_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn oa_backend_free(backend: *mut OaBackend) {
    if !backend.is_null() {
        drop(Box::from_raw(backend));
    }
}

/// Generates a base image.
///
/// # Safety
/// Pointers must be valid; `prompt` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn oa_generate(
    backend: *const OaBackend,
    prompt: *const c_char,
    seed: u64,
    total_steps: usize,
    out: *mut *mut OaResult,
) -> OaStatus {
    guard(|| {
        let b = backend.as_ref().ok_or_else(|| null("backend"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let request = JobRequest::Generate {
            prompt: text(prompt, "prompt")?.to_owned(),
            seed,
            total_steps,
        };
        let artifacts = execute_with(&request, &b.reference, b.model.as_ref()).map_err(|f| Failure::from(f.error))?;
        finish(artifacts, out)
    })
}

/// Adds the object described by `object_prompt` into `pixel_box` of the
/// image generated from `base_prompt` and `seed`.
///
/// `config_json` may be NULL for default settings, otherwise a JSON object
/// of guidance settings. `object_png` may be NULL; when given, it is a PNG of
/// the object on a white background and the real-image path is used.
///
/// # Safety
/// Pointers must be valid; strings NUL-terminated; `object_png` must point
/// to `object_png_len` bytes when not NULL.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn oa_edit(
    backend: *const OaBackend,
    base_prompt: *const c_char,
    object_prompt: *const c_char,
    seed: u64,
    pixel_box: OaBox,
    config_json: *const c_char,
    object_png: *const u8,
    object_png_len: usize,
    out: *mut *mut OaResult,
) -> OaStatus {
    guard(|| {
        let b = backend.as_ref().ok_or_else(|| null("backend"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let bx = PixelBox::new(
            pixel_box.top as usize,
            pixel_box.left as usize,
            pixel_box.height as usize,
            pixel_box.width as usize,
        );
        let mut spec = EditSpec::new(text(base_prompt, "base_prompt")?, text(object_prompt, "object_prompt")?, bx, seed);
        if !config_json.is_null() {
            let config: GuidanceConfig = serde_json::from_str(text(config_json, "config_json")?)
                .map_err(|e| Failure(OaStatus::Config, format!("config_json: {e}")))?;
            spec.config = config;
        }
        if !object_png.is_null() {
            spec.real_object_image = Some(decode_png(bytes(object_png, object_png_len, "object_png")?)?);
        }
        let request = JobRequest::Edit { spec };
        let artifacts = execute_with(&request, &b.reference, b.model.as_ref()).map_err(|f| Failure::from(f.error))?;
        finish(artifacts, out)
    })
}

/// Borrows the bytes of an artifact file ("base.png", "edited.png",
/// "edit_mask.png", "refocused_mask.png", "expanded_mask.png",
/// "expanded_mask_full.png", "traces.json", "object.png").
///
/// # Safety
/// `result` must be live; `name` NUL-terminated; `data` and `len` valid.
#[no_mangle]
pub unsafe extern "C" fn oa_result_file(
    result: *const OaResult,
    name: *const c_char,
    data: *mut *const u8,
    len: *mut usize,
) -> OaStatus {
    guard(|| {
        let r = result.as_ref().ok_or_else(|| null("result"))?;
        if data.is_null() || len.is_null() {
            return Err(null("data or len"));
        }
        let name = text(name, "name")?;
        let file = r
            .artifacts
            .file(name)
            .ok_or_else(|| Failure(OaStatus::NotFound, format!("no artifact named {name}")))?;
        *data = file.as_ptr();
        *len = file.len();
        Ok(())
    })
}

/// JSON reproducibility manifest of the job, owned by `result`.
///
/// # Safety
/// `result` must be live or NULL.
#[no_mangle]
pub unsafe extern "C" fn oa_result_manifest_json(result: *const OaResult) -> *const c_char {
    result.as_ref().map_or(ptr::null(), |r| r.manifest_json.as_ptr())
}

/// Step at which the expanded mask was swapped in, or -1 for generate jobs.
///
/// # Safety
/// `result` must be live or NULL.
#[no_mangle]
pub unsafe extern "C" fn oa_result_inpaint_step(result: *const OaResult) -> i64 {
    result
        .as_ref()
        .and_then(|r| r.artifacts.manifest.inpaint_step)
        .map_or(-1, |t| t as i64)
}

/// # Safety
/// `result` must come from `oa_generate` or `oa_edit` and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn oa_result_free(result: *mut OaResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Mean absolute difference over pixels outside `mask`, averaged over every
/// pixel and channel. Images are `height*width*3` RGB bytes, the mask
/// `height*width` bytes with nonzero meaning inside.
///
/// # Safety
/// Buffers must hold the stated number of bytes; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn oa_by_pixels(
    original: *const u8,
    edited: *const u8,
    mask: *const u8,
    height: usize,
    width: usize,
    out: *mut f64,
) -> OaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let n = height * width;
        let shape_err = |e: ndarray::ShapeError| Failure(OaStatus::Config, e.to_string());
        let a = Array3::from_shape_vec((height, width, 3), bytes(original, n * 3, "original")?.to_vec()).map_err(shape_err)?;
        let b = Array3::from_shape_vec((height, width, 3), bytes(edited, n * 3, "edited")?.to_vec()).map_err(shape_err)?;
        let m = Array2::from_shape_vec((height, width), bytes(mask, n, "mask")?.iter().map(|&v| u8::from(v != 0)).collect())
            .map_err(shape_err)?;
        let mask = BinaryMask::new(m, Resolution::Full)?;
        *out = by_pixels(&a, &b, &mask)?;
        Ok(())
    })
}
