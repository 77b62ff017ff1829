//! C interface to the labeler.
//!
//! Objects are opaque handles created by `*_load` functions and released
//! with the matching `*_free`. Every fallible call returns an [`AlStatus`];
//! on failure [`al_last_error_message`] describes the error for the calling
//! thread. Panics are caught at the boundary and reported as
//! `AL_STATUS_INTERNAL`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use arterylabel::geometry::{label_centerlines_with_classes, read_centerlines, CenterlinePolyline, VoxelMask};
use arterylabel::model::Model;
use arterylabel::pipeline::predict;
use arterylabel::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// An argument was out of range or not valid UTF-8.
    InvalidArgument = 2,
    /// File could not be read or written.
    Io = 3,
    /// File contents could not be parsed.
    Parse = 4,
    /// Checkpoint is corrupt or does not match its architecture.
    Checkpoint = 5,
    /// Inputs are inconsistent with each other or with the model.
    Data = 6,
    /// Non-finite values appeared during computation.
    Numeric = 7,
    /// A bug: the library panicked.
    Internal = 8,
}

/// Labeled voxel mask.
pub struct AlMask(VoxelMask);

/// Trained network.
pub struct AlModel(Model<f32>);

/// Set of centerline polylines.
pub struct AlCenterlines(Vec<CenterlinePolyline>);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> AlStatus {
    match e {
        Error::Io { .. } => AlStatus::Io,
        Error::Parse { .. } | Error::Json { .. } => AlStatus::Parse,
        Error::Checkpoint(_) => AlStatus::Checkpoint,
        Error::NonFiniteLoss { .. } | Error::NonFinite(_) | Error::GradCheck(_) => AlStatus::Numeric,
        Error::ConfigInvalid(_) => AlStatus::InvalidArgument,
        _ => AlStatus::Data,
    }
}

/// Runs `f`, translating errors and panics into a status.
fn guard<F: FnOnce() -> Result<(), (AlStatus, String)>>(f: F) -> AlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            AlStatus::Ok
        }
        Ok(Err((status, message))) => {
            set_error(&message);
            status
        }
        Err(_) => {
            set_error("internal error (panic)");
            AlStatus::Internal
        }
    }
}

fn lib<T>(r: arterylabel::Result<T>) -> Result<T, (AlStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (AlStatus, String) {
    (AlStatus::NullArgument, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, (AlStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| (AlStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, (AlStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Message describing the last failed call on this thread; empty after a
/// successful call. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn al_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn al_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Reads a `.vmask` file.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn al_mask_load(path: *const c_char, out: *mut *mut AlMask) -> AlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let mask = lib(VoxelMask::read(&path_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(AlMask(mask)));
        Ok(())
    })
}

/// Writes a `.vmask` file.
///
/// # Safety
/// `mask` must come from this library; `path` must be nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn al_mask_save(mask: *const AlMask, path: *const c_char) -> AlStatus {
    guard(|| {
        let mask = handle(mask, "mask")?;
        lib(mask.0.write(&path_arg(path, "path")?))
    })
}

/// Grid dimensions (x, y, z) into `dims[0..3]`.
///
/// # Safety
/// `mask` must come from this library; `dims` must hold 3 values.
#[no_mangle]
pub unsafe extern "C" fn al_mask_dims(mask: *const AlMask, dims: *mut usize) -> AlStatus {
    guard(|| {
        let mask = handle(mask, "mask")?;
        if dims.is_null() {
            return Err(null("dims"));
        }
        for (i, d) in mask.0.dims().iter().enumerate() {
            *dims.add(i) = *d;
        }
        Ok(())
    })
}

/// Borrowed view of the voxel labels, x fastest. The pointer stays valid
/// until the mask is freed.
///
/// # Safety
/// `mask` must come from this library; `data` and `len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn al_mask_labels(mask: *const AlMask, data: *mut *const u8, len: *mut usize) -> AlStatus {
    guard(|| {
        let mask = handle(mask, "mask")?;
        if data.is_null() || len.is_null() {
            return Err(null("data or len"));
        }
        *data = mask.0.labels.as_ptr();
        *len = mask.0.labels.len();
        Ok(())
    })
}

/// # Safety
/// `mask` must come from this library (or be null) and not be used again.
#[no_mangle]
pub unsafe extern "C" fn al_mask_free(mask: *mut AlMask) {
    if !mask.is_null() {
        drop(Box::from_raw(mask));
    }
}

/// Reads a checkpoint.
///
/// # Safety
/// `path` must be nul-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn al_model_load(path: *const c_char, out: *mut *mut AlModel) -> AlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let model = lib(Model::<f32>::load(&path_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(AlModel(model)));
        Ok(())
    })
}

/// Number of branch classes the model predicts (labels `1..=count`).
///
/// # Safety
/// `model` must come from this library; `count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn al_model_num_classes(model: *const AlModel, count: *mut usize) -> AlStatus {
    guard(|| {
        let model = handle(model, "model")?;
        if count.is_null() {
            return Err(null("count"));
        }
        *count = model.0.config.num_classes_k;
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library (or be null) and not be used again.
#[no_mangle]
pub unsafe extern "C" fn al_model_free(model: *mut AlModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Labels every foreground voxel of `mask`: `sample_count` voxels drawn
/// with `seed` are classified, the rest take the label of the nearest
/// sample. The result is a new mask owned by the caller.
///
/// # Safety
/// Handles must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn al_label_mask(
    model: *const AlModel,
    mask: *const AlMask,
    sample_count: usize,
    seed: u64,
    out: *mut *mut AlMask,
) -> AlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let model = handle(model, "model")?;
        let mask = handle(mask, "mask")?;
        if sample_count == 0 {
            return Err((AlStatus::InvalidArgument, "sample_count must be positive".into()));
        }
        let p = lib(predict(&model.0, &mask.0, None, sample_count, seed, 1.0))?;
        *out = Box::into_raw(Box::new(AlMask(p.mask)));
        Ok(())
    })
}

/// Reads a centerline JSON file.
///
/// # Safety
/// `path` must be nul-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn al_centerlines_load(path: *const c_char, out: *mut *mut AlCenterlines) -> AlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let lines = lib(read_centerlines(&path_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(AlCenterlines(lines)));
        Ok(())
    })
}

/// Number of branches.
///
/// # Safety
/// `lines` must come from this library; `count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn al_centerlines_count(lines: *const AlCenterlines, count: *mut usize) -> AlStatus {
    guard(|| {
        let lines = handle(lines, "centerlines")?;
        if count.is_null() {
            return Err(null("count"));
        }
        *count = lines.0.len();
        Ok(())
    })
}

/// # Safety
/// `lines` must come from this library (or be null) and not be used again.
#[no_mangle]
pub unsafe extern "C" fn al_centerlines_free(lines: *mut AlCenterlines) {
    if !lines.is_null() {
        drop(Box::from_raw(lines));
    }
}

/// Names each branch by the class covering most of its centerline dilated
/// by `radius` mm in `labeled`. Writes one class per branch into `classes`
/// (0 = unassigned) and, if `rates` is not null, the winning overlap rate.
/// Classes `1..=num_classes` are scored.
///
/// # Safety
/// Handles must come from this library; `classes` (and `rates`, when not
/// null) must hold `al_centerlines_count` values.
#[no_mangle]
pub unsafe extern "C" fn al_label_centerlines(
    lines: *const AlCenterlines,
    labeled: *const AlMask,
    radius: f64,
    num_classes: u8,
    classes: *mut u8,
    rates: *mut f64,
) -> AlStatus {
    guard(|| {
        let lines = handle(lines, "centerlines")?;
        let labeled = handle(labeled, "labeled mask")?;
        if classes.is_null() {
            return Err(null("classes"));
        }
        let labeling = lib(label_centerlines_with_classes(&lines.0, &labeled.0, radius, num_classes))?;
        for (i, b) in labeling.branches.iter().enumerate() {
            *classes.add(i) = b.class.unwrap_or(0);
            if !rates.is_null() {
                *rates.add(i) = b.overlap_rate;
            }
        }
        Ok(())
    })
}
