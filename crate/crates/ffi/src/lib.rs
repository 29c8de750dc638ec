//! C ABI for `pod-core`.
//!
//! Every function returns a [`PodStatus`]; on failure a human-readable
//! message is available from [`pod_last_error`] on the same thread. Models
//! are opaque [`PodModel`] handles released with [`pod_model_free`].
//! Buffers are caller-owned: a function that fills an array takes its
//! capacity and reports the required length, returning
//! [`PodStatus::BufferTooSmall`] when it does not fit.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use pod_core::augment::{self, AugmentConfig};
use pod_core::data::{BBox, Image};
use pod_core::detector::{load_checkpoint, predict, Detection, DetectorModel};
use pod_core::eval::{average_precision, iou};
use pod_core::PodError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PodStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Checkpoint = 5,
    Contract = 6,
    NonFinite = 7,
    BufferTooSmall = 8,
    Internal = 9,
}

/// Box with normalized center and size.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PodBox {
    pub class_id: u8,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PodDetection {
    pub bbox: PodBox,
    pub confidence: f64,
}

/// Opaque detector handle.
pub struct PodModel {
    inner: DetectorModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn fail(status: PodStatus, msg: impl Into<String>) -> PodStatus {
    set_error(msg);
    status
}

fn from_core(err: PodError) -> PodStatus {
    let status = match &err {
        PodError::Io { .. } | PodError::Load { .. } => PodStatus::Io,
        PodError::Parse { .. } => PodStatus::Parse,
        PodError::Checkpoint(_) => PodStatus::Checkpoint,
        PodError::NonFinite(_) | PodError::Diverged { .. } | PodError::AttackDiverged { .. } => {
            PodStatus::NonFinite
        }
        PodError::Config { .. } => PodStatus::InvalidArgument,
        _ => PodStatus::Contract,
    };
    fail(status, err.to_string())
}

/// Runs `f`, turning a panic into [`PodStatus::Internal`].
fn guard(f: impl FnOnce() -> PodStatus) -> PodStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(PodStatus::Internal, "internal panic"),
    }
}

impl From<BBox> for PodBox {
    fn from(b: BBox) -> Self {
        PodBox {
            class_id: b.class_id,
            cx: b.cx,
            cy: b.cy,
            w: b.bw,
            h: b.bh,
        }
    }
}

impl From<PodBox> for BBox {
    fn from(b: PodBox) -> Self {
        BBox::new(b.class_id, b.cx, b.cy, b.w, b.h)
    }
}

impl From<Detection> for PodDetection {
    fn from(d: Detection) -> Self {
        PodDetection {
            bbox: d.bbox.into(),
            confidence: d.confidence,
        }
    }
}

/// # Safety
/// `ptr` must be null or point to `len` readable values.
unsafe fn view<'a, T>(ptr: *const T, len: usize) -> Option<&'a [T]> {
    if len == 0 {
        Some(&[])
    } else if ptr.is_null() {
        None
    } else {
        Some(slice::from_raw_parts(ptr, len))
    }
}

/// # Safety
/// `pixels` must point to `width * height` readable values.
unsafe fn image_arg(pixels: *const f64, width: usize, height: usize) -> Result<Image, PodStatus> {
    let n = width
        .checked_mul(height)
        .ok_or_else(|| fail(PodStatus::InvalidArgument, "image size overflows"))?;
    let data = view(pixels, n).ok_or_else(|| fail(PodStatus::NullPointer, "pixels is null"))?;
    Image::new(width, height, data.to_vec()).map_err(from_core)
}

/// Copies `items` into the caller's buffer.
///
/// # Safety
/// `out` must be null or point to `capacity` writable values; `out_len` must
/// be valid for writes.
unsafe fn write_out<T: Copy>(
    items: &[T],
    out: *mut T,
    capacity: usize,
    out_len: *mut usize,
) -> PodStatus {
    *out_len = items.len();
    if items.len() > capacity {
        return fail(
            PodStatus::BufferTooSmall,
            format!("need room for {} items, got {capacity}", items.len()),
        );
    }
    if !items.is_empty() {
        if out.is_null() {
            return fail(PodStatus::NullPointer, "output buffer is null");
        }
        ptr::copy_nonoverlapping(items.as_ptr(), out, items.len());
    }
    PodStatus::Ok
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn pod_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pod_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint written by `pod train`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pod_model_load(path: *const c_char, out: *mut *mut PodModel) -> PodStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return fail(PodStatus::NullPointer, "path and out must be non-null");
        }
        *out = ptr::null_mut();
        let Ok(path) = CStr::from_ptr(path).to_str() else {
            return fail(PodStatus::InvalidArgument, "path is not valid UTF-8");
        };
        match load_checkpoint(Path::new(path)) {
            Ok(ckpt) => {
                *out = Box::into_raw(Box::new(PodModel { inner: ckpt.model }));
                PodStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`pod_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pod_model_free(model: *mut PodModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Side of the square input the model resamples images to.
///
/// # Safety
/// `model` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pod_model_input_size(
    model: *const PodModel,
    out: *mut usize,
) -> PodStatus {
    guard(|| {
        if model.is_null() || out.is_null() {
            return fail(PodStatus::NullPointer, "model and out must be non-null");
        }
        *out = (*model).inner.input_size();
        PodStatus::Ok
    })
}

/// Detects humans and patches in a row-major `width x height` image with
/// values in `[0, 1]`. Detections are sorted by decreasing confidence.
///
/// # Safety
/// `pixels` must point to `width * height` values, `out` to `capacity`
/// writable detections (or be null when `capacity` is 0), and `out_len` must
/// be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pod_model_predict(
    model: *const PodModel,
    pixels: *const f64,
    width: usize,
    height: usize,
    conf_threshold: f64,
    nms_iou: f64,
    out: *mut PodDetection,
    capacity: usize,
    out_len: *mut usize,
) -> PodStatus {
    guard(|| {
        if model.is_null() || out_len.is_null() {
            return fail(PodStatus::NullPointer, "model and out_len must be non-null");
        }
        *out_len = 0;
        let image = match image_arg(pixels, width, height) {
            Ok(i) => i,
            Err(s) => return s,
        };
        match predict(&(*model).inner, &image, conf_threshold, nms_iou) {
            Ok(dets) => {
                let dets: Vec<PodDetection> = dets.into_iter().map(Into::into).collect();
                write_out(&dets, out, capacity, out_len)
            }
            Err(e) => from_core(e),
        }
    })
}

/// Intersection over union of two boxes.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pod_iou(a: *const PodBox, b: *const PodBox, out: *mut f64) -> PodStatus {
    guard(|| {
        if a.is_null() || b.is_null() || out.is_null() {
            return fail(PodStatus::NullPointer, "a, b and out must be non-null");
        }
        *out = iou(&BBox::from(*a).rect(), &BBox::from(*b).rect());
        PodStatus::Ok
    })
}

/// AP of class `class_id` at `iou_threshold` over a set of images.
/// `det_images[i]` and `gt_images[j]` give the image each box belongs to.
///
/// # Safety
/// Each array must hold the stated number of elements (or be null when that
/// number is 0); `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pod_average_precision(
    dets: *const PodDetection,
    det_images: *const usize,
    n_dets: usize,
    gts: *const PodBox,
    gt_images: *const usize,
    n_gts: usize,
    class_id: u8,
    iou_threshold: f64,
    out: *mut f64,
) -> PodStatus {
    guard(|| {
        if out.is_null() {
            return fail(PodStatus::NullPointer, "out must be non-null");
        }
        let (Some(d), Some(di), Some(g), Some(gi)) = (
            view(dets, n_dets),
            view(det_images, n_dets),
            view(gts, n_gts),
            view(gt_images, n_gts),
        ) else {
            return fail(PodStatus::NullPointer, "input array is null");
        };
        let dets: Vec<(Detection, usize)> = d
            .iter()
            .zip(di)
            .map(|(d, &i)| {
                (
                    Detection {
                        bbox: d.bbox.into(),
                        confidence: d.confidence,
                    },
                    i,
                )
            })
            .collect();
        let gts: Vec<(BBox, usize)> = g.iter().zip(gi).map(|(b, &i)| ((*b).into(), i)).collect();
        *out = average_precision(&dets, &gts, class_id, iou_threshold);
        PodStatus::Ok
    })
}

/// Applies the random patch augmentation with default settings.
///
/// Writes the augmented image to `out_pixels` (`width * height` values) and
/// the human labels followed by one patch box per applied patch to
/// `out_labels`. Deterministic in `seed`.
///
/// # Safety
/// `pixels` and `out_pixels` must hold `width * height` values, `labels`
/// `n_labels` boxes, `out_labels` `capacity` boxes; `out_len` must be valid
/// for writes.
#[no_mangle]
pub unsafe extern "C" fn pod_augment(
    pixels: *const f64,
    width: usize,
    height: usize,
    labels: *const PodBox,
    n_labels: usize,
    seed: u64,
    out_pixels: *mut f64,
    out_labels: *mut PodBox,
    capacity: usize,
    out_len: *mut usize,
) -> PodStatus {
    guard(|| {
        if out_pixels.is_null() || out_len.is_null() {
            return fail(
                PodStatus::NullPointer,
                "out_pixels and out_len must be non-null",
            );
        }
        *out_len = 0;
        let image = match image_arg(pixels, width, height) {
            Ok(i) => i,
            Err(s) => return s,
        };
        let Some(labels) = view(labels, n_labels) else {
            return fail(PodStatus::NullPointer, "labels is null");
        };
        let labels: Vec<BBox> = labels.iter().map(|b| (*b).into()).collect();
        let mut rng = pod_core::stream!(seed, "ffi-augment");
        match augment::pod_augment(&image, &labels, &AugmentConfig::default(), &mut rng) {
            Ok(outcome) => {
                let boxes: Vec<PodBox> = outcome.labels.into_iter().map(Into::into).collect();
                if boxes.len() > capacity {
                    *out_len = boxes.len();
                    return fail(
                        PodStatus::BufferTooSmall,
                        format!("need room for {} labels, got {capacity}", boxes.len()),
                    );
                }
                ptr::copy_nonoverlapping(
                    outcome.image.pixels().as_ptr(),
                    out_pixels,
                    width * height,
                );
                write_out(&boxes, out_labels, capacity, out_len)
            }
            Err(e) => from_core(e),
        }
    })
}
