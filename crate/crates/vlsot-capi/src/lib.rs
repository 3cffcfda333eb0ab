//! C ABI for the tracker: opaque handles, status codes, and a last-error
//! message buffer so other languages can bind without touching Rust types.
//!
//! Lifecycle: `vlsot_tracker_load` builds a model from a checkpoint,
//! `vlsot_tracker_init` starts a sequence from its first frame, box, and
//! description, and `vlsot_tracker_step` advances one frame at a time.
//! Every handle must be released with `vlsot_tracker_free`.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::path::Path;

use vlsot::boxes::BoundingBox;
use vlsot::cli::load_model;
use vlsot::config::FullConfig;
use vlsot::frame::Frame;
use vlsot::model::TrackerModel;
use vlsot::runtime::TrackerState;
use vlsot::tensor::ParamSet;

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum VlsotStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    IoError = 3,
    RuntimeError = 4,
}

/// Axis-aligned box: top-left corner plus extents, in pixels.
#[repr(C)]
#[derive(Clone, Copy)]
pub struct VlsotBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

/// Borrowed 8-bit RGB frame, interleaved, row-major, no padding.
#[repr(C)]
pub struct VlsotFrame {
    pub data: *const u8,
    pub width: u32,
    pub height: u32,
}

struct ModelBundle {
    config: FullConfig,
    params: ParamSet,
    model: TrackerModel,
    use_language: bool,
}

/// Opaque tracker handle. Field order keeps the per-sequence state ahead
/// of the bundle it borrows, so it drops first.
pub struct VlsotTracker {
    state: Option<TrackerState<'static>>,
    bundle: Box<ModelBundle>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    });
}

fn fail(status: VlsotStatus, msg: impl Into<String>) -> VlsotStatus {
    set_error(msg);
    status
}

/// Copy the most recent error message (UTF-8, NUL-terminated) into `buf`;
/// returns the full message length excluding the terminator.
///
/// # Safety
/// `buf` must point to `cap` writable bytes, or be null (query mode).
#[no_mangle]
pub unsafe extern "C" fn vlsot_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let msg = slot.borrow();
        let bytes = msg.as_bytes_with_nul();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        bytes.len() - 1
    })
}

/// Static library version string.
#[no_mangle]
pub extern "C" fn vlsot_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

unsafe fn frame_from_c(frame: &VlsotFrame) -> Result<Frame, String> {
    if frame.data.is_null() {
        return Err("frame data is null".to_string());
    }
    let (w, h) = (frame.width as usize, frame.height as usize);
    if w == 0 || h == 0 {
        return Err(format!("frame size {w}x{h} is empty"));
    }
    let raw = std::slice::from_raw_parts(frame.data, w * h * 3);
    let rgb: Vec<f64> = raw.iter().map(|&b| b as f64 / 255.0).collect();
    Frame::new(w, h, rgb).map_err(|e| e.to_string())
}

/// Load a tracker model from a checkpoint file. `use_language = 0`
/// replaces descriptions with the all-padding token sequence.
///
/// # Safety
/// `ckpt_path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vlsot_tracker_load(
    ckpt_path: *const c_char,
    use_language: c_int,
    out: *mut *mut VlsotTracker,
) -> VlsotStatus {
    if ckpt_path.is_null() || out.is_null() {
        return fail(VlsotStatus::NullArgument, "null checkpoint path or out pointer");
    }
    let Ok(path) = CStr::from_ptr(ckpt_path).to_str() else {
        return fail(VlsotStatus::InvalidArgument, "checkpoint path is not UTF-8");
    };
    match load_model(Path::new(path)) {
        Ok((config, params, model)) => {
            let bundle = Box::new(ModelBundle {
                config,
                params,
                model,
                use_language: use_language != 0,
            });
            let handle = Box::new(VlsotTracker {
                state: None,
                bundle,
            });
            *out = Box::into_raw(handle);
            VlsotStatus::Ok
        }
        Err(e) => fail(VlsotStatus::IoError, e.to_string()),
    }
}

/// Start tracking a sequence: first frame, its target box, and the
/// language description (may be null or empty).
///
/// # Safety
/// `tracker` must come from `vlsot_tracker_load`; `description`, when not
/// null, must be NUL-terminated; the frame buffer must hold
/// `width * height * 3` bytes.
#[no_mangle]
pub unsafe extern "C" fn vlsot_tracker_init(
    tracker: *mut VlsotTracker,
    frame: VlsotFrame,
    init_box: VlsotBox,
    description: *const c_char,
) -> VlsotStatus {
    let Some(handle) = tracker.as_mut() else {
        return fail(VlsotStatus::NullArgument, "null tracker");
    };
    let decoded = match frame_from_c(&frame) {
        Ok(f) => f,
        Err(e) => return fail(VlsotStatus::InvalidArgument, e),
    };
    let init = match BoundingBox::new(init_box.x, init_box.y, init_box.w, init_box.h) {
        Ok(b) => b,
        Err(e) => return fail(VlsotStatus::InvalidArgument, e.to_string()),
    };
    let text = if description.is_null() {
        String::new()
    } else {
        match CStr::from_ptr(description).to_str() {
            Ok(s) => s.to_string(),
            Err(_) => return fail(VlsotStatus::InvalidArgument, "description is not UTF-8"),
        }
    };
    let mut runtime = handle.bundle.config.runtime.clone();
    runtime.use_language = handle.bundle.use_language;
    // The state borrows the bundle boxed behind this handle; the box never
    // moves and the state drops first, so extending the lifetime is sound.
    let bundle: &'static ModelBundle = &*(handle.bundle.as_ref() as *const ModelBundle);
    match TrackerState::init(
        &bundle.model,
        &bundle.params,
        runtime,
        &decoded,
        init,
        &text,
    ) {
        Ok(state) => {
            handle.state = Some(state);
            VlsotStatus::Ok
        }
        Err(e) => fail(VlsotStatus::RuntimeError, e.to_string()),
    }
}

/// Predict the target box in the next frame.
///
/// # Safety
/// `tracker` must be initialized; `out_box` must be writable; the frame
/// buffer must hold `width * height * 3` bytes.
#[no_mangle]
pub unsafe extern "C" fn vlsot_tracker_step(
    tracker: *mut VlsotTracker,
    frame: VlsotFrame,
    out_box: *mut VlsotBox,
) -> VlsotStatus {
    let Some(handle) = tracker.as_mut() else {
        return fail(VlsotStatus::NullArgument, "null tracker");
    };
    if out_box.is_null() {
        return fail(VlsotStatus::NullArgument, "null output box");
    }
    let Some(state) = handle.state.as_mut() else {
        return fail(
            VlsotStatus::InvalidArgument,
            "tracker not initialized; call vlsot_tracker_init first",
        );
    };
    let decoded = match frame_from_c(&frame) {
        Ok(f) => f,
        Err(e) => return fail(VlsotStatus::InvalidArgument, e),
    };
    match state.track_step(&decoded) {
        Ok(b) => {
            *out_box = VlsotBox {
                x: b.x,
                y: b.y,
                w: b.w,
                h: b.h,
            };
            VlsotStatus::Ok
        }
        Err(e) => fail(VlsotStatus::RuntimeError, e.to_string()),
    }
}

/// Release a tracker handle; null is a no-op.
///
/// # Safety
/// `tracker` must come from `vlsot_tracker_load` and not be used after.
#[no_mangle]
pub unsafe extern "C" fn vlsot_tracker_free(tracker: *mut VlsotTracker) {
    if !tracker.is_null() {
        drop(Box::from_raw(tracker));
    }
}

/// Generalized IoU of two boxes, in `(-1, 1]`.
#[no_mangle]
pub extern "C" fn vlsot_giou(a: VlsotBox, b: VlsotBox) -> f64 {
    match (
        BoundingBox::new(a.x, a.y, a.w, a.h),
        BoundingBox::new(b.x, b.y, b.w, b.h),
    ) {
        (Ok(a), Ok(b)) => vlsot::boxes::giou(&a, &b),
        _ => f64::NAN,
    }
}

/// Plain IoU of two boxes.
#[no_mangle]
pub extern "C" fn vlsot_iou(a: VlsotBox, b: VlsotBox) -> f64 {
    match (
        BoundingBox::new(a.x, a.y, a.w, a.h),
        BoundingBox::new(b.x, b.y, b.w, b.h),
    ) {
        (Ok(a), Ok(b)) => vlsot::boxes::iou(&a, &b),
        _ => f64::NAN,
    }
}
