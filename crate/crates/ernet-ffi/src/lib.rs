//! C ABI for the ernet engine: opaque handles, status codes, and a
//! thread-local last-error message. The header is generated by cbindgen
//! into `include/ernet.h` at build time.
//!
//! Conventions: functions return [`ErnetStatus`]; constructed objects come
//! back through `out` pointers and must be released with the matching
//! `_free` function. String arguments are NUL-terminated UTF-8 paths.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use ernet::data::{
    load_dataset, normalize_minmax, read_volume, write_phantom_dataset, write_volume,
    AugmentationRanges, Volume,
};
use ernet::extraction::Mode;
use ernet::objective::dice_ext;
use ernet::pipeline::{
    evaluate, forward, infer, train, ErnetModel as Model, ModelManifest, TrainConfig,
};

/// Status code returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErnetStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    IoError = 3,
    RuntimeError = 4,
    Panic = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &ernet::Error) -> ErnetStatus {
    match err {
        ernet::Error::Io(..) | ernet::Error::Format { .. } => ErnetStatus::IoError,
        ernet::Error::InvalidArgument(..)
        | ernet::Error::ShapeMismatch { .. }
        | ernet::Error::ChannelMismatch { .. } => ErnetStatus::InvalidArgument,
        _ => ErnetStatus::RuntimeError,
    }
}

fn capture(err: ernet::Error) -> ErnetStatus {
    set_error(&err.to_string());
    status_of(&err)
}

fn guarded(f: impl FnOnce() -> ErnetStatus) -> ErnetStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            ErnetStatus::Panic
        }
    }
}

unsafe fn path_arg<'a>(ptr: *const c_char) -> Result<&'a Path, ErnetStatus> {
    if ptr.is_null() {
        set_error("null path argument");
        return Err(ErnetStatus::NullPointer);
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(Path::new(s)),
        Err(_) => {
            set_error("path is not valid UTF-8");
            Err(ErnetStatus::InvalidArgument)
        }
    }
}

/// Opaque volume handle.
pub struct ErnetVolume {
    inner: Volume,
}

/// Opaque model handle.
pub struct ErnetModel {
    inner: Model,
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ernet_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the most recent error on this thread; empty when no error has
/// occurred. The pointer stays valid until the next failing call on the
/// same thread.
#[no_mangle]
pub extern "C" fn ernet_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Create a volume from a row-major (last axis contiguous) value buffer of
/// length `w * h * d`; a null buffer gives zeros.
///
/// # Safety
/// `values` must be null or point to at least `w * h * d` readable f64s, and
/// `out` must be a valid destination pointer.
#[no_mangle]
pub unsafe extern "C" fn ernet_volume_create(
    w: usize,
    h: usize,
    d: usize,
    values: *const f64,
    out: *mut *mut ErnetVolume,
) -> ErnetStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null out pointer");
            return ErnetStatus::NullPointer;
        }
        let data = if values.is_null() {
            vec![0.0; w * h * d]
        } else {
            std::slice::from_raw_parts(values, w * h * d).to_vec()
        };
        match Volume::new([w, h, d], data) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(ErnetVolume { inner }));
                ErnetStatus::Ok
            }
            Err(e) => capture(e),
        }
    })
}

/// Read a `.rvol` or NIfTI-1 volume from disk.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid destination.
#[no_mangle]
pub unsafe extern "C" fn ernet_volume_read(
    path: *const c_char,
    out: *mut *mut ErnetVolume,
) -> ErnetStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null out pointer");
            return ErnetStatus::NullPointer;
        }
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        match read_volume(path) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(ErnetVolume { inner }));
                ErnetStatus::Ok
            }
            Err(e) => capture(e),
        }
    })
}

/// Write a volume; the extension picks the format (`.rvol` native,
/// otherwise NIfTI-1 float32).
///
/// # Safety
/// `volume` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ernet_volume_write(
    volume: *const ErnetVolume,
    path: *const c_char,
) -> ErnetStatus {
    guarded(|| {
        let Some(volume) = volume.as_ref() else {
            set_error("null volume handle");
            return ErnetStatus::NullPointer;
        };
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        match write_volume(path, &volume.inner) {
            Ok(()) => ErnetStatus::Ok,
            Err(e) => capture(e),
        }
    })
}

/// Volume extents.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ernet_volume_dims(
    volume: *const ErnetVolume,
    w: *mut usize,
    h: *mut usize,
    d: *mut usize,
) -> ErnetStatus {
    guarded(|| {
        let Some(volume) = volume.as_ref() else {
            set_error("null volume handle");
            return ErnetStatus::NullPointer;
        };
        if w.is_null() || h.is_null() || d.is_null() {
            set_error("null out pointer");
            return ErnetStatus::NullPointer;
        }
        *w = volume.inner.dims[0];
        *h = volume.inner.dims[1];
        *d = volume.inner.dims[2];
        ErnetStatus::Ok
    })
}

/// Copy the voxel values into a caller buffer of length `len` (which must
/// equal the voxel count).
///
/// # Safety
/// `buffer` must point to `len` writable f64s.
#[no_mangle]
pub unsafe extern "C" fn ernet_volume_values(
    volume: *const ErnetVolume,
    buffer: *mut f64,
    len: usize,
) -> ErnetStatus {
    guarded(|| {
        let Some(volume) = volume.as_ref() else {
            set_error("null volume handle");
            return ErnetStatus::NullPointer;
        };
        if buffer.is_null() {
            set_error("null buffer");
            return ErnetStatus::NullPointer;
        }
        if len != volume.inner.numel() {
            set_error("buffer length does not match the voxel count");
            return ErnetStatus::InvalidArgument;
        }
        std::slice::from_raw_parts_mut(buffer, len).copy_from_slice(&volume.inner.values);
        ErnetStatus::Ok
    })
}

/// Release a volume handle; null is a no-op.
///
/// # Safety
/// `volume` must be null or a handle produced by this library, not yet
/// freed.
#[no_mangle]
pub unsafe extern "C" fn ernet_volume_free(volume: *mut ErnetVolume) {
    if !volume.is_null() {
        drop(Box::from_raw(volume));
    }
}

/// Build a fresh model. `manifest_json` may be null for the default
/// configuration (5+5 stages, full widths) or a JSON model manifest.
///
/// # Safety
/// `manifest_json` must be null or NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ernet_model_create(
    manifest_json: *const c_char,
    seed: u64,
    out: *mut *mut ErnetModel,
) -> ErnetStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null out pointer");
            return ErnetStatus::NullPointer;
        }
        let manifest = if manifest_json.is_null() {
            ModelManifest::default()
        } else {
            let text = match CStr::from_ptr(manifest_json).to_str() {
                Ok(s) => s,
                Err(_) => {
                    set_error("manifest is not valid UTF-8");
                    return ErnetStatus::InvalidArgument;
                }
            };
            match serde_json::from_str(text) {
                Ok(m) => m,
                Err(e) => {
                    set_error(&format!("manifest: {e}"));
                    return ErnetStatus::InvalidArgument;
                }
            }
        };
        match Model::new(manifest, seed) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(ErnetModel { inner }));
                ErnetStatus::Ok
            }
            Err(e) => capture(e),
        }
    })
}

/// Load a model directory (`model.json` plus weights).
///
/// # Safety
/// Pointer contracts as in [`ernet_model_create`].
#[no_mangle]
pub unsafe extern "C" fn ernet_model_load(
    dir: *const c_char,
    out: *mut *mut ErnetModel,
) -> ErnetStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null out pointer");
            return ErnetStatus::NullPointer;
        }
        let dir = match path_arg(dir) {
            Ok(p) => p,
            Err(status) => return status,
        };
        match Model::load(dir) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(ErnetModel { inner }));
                ErnetStatus::Ok
            }
            Err(e) => capture(e),
        }
    })
}

/// Save a model directory.
///
/// # Safety
/// `model` must be a live handle, `dir` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ernet_model_save(
    model: *const ErnetModel,
    dir: *const c_char,
) -> ErnetStatus {
    guarded(|| {
        let Some(model) = model.as_ref() else {
            set_error("null model handle");
            return ErnetStatus::NullPointer;
        };
        let dir = match path_arg(dir) {
            Ok(p) => p,
            Err(status) => return status,
        };
        match model.inner.save(dir) {
            Ok(()) => ErnetStatus::Ok,
            Err(e) => capture(e),
        }
    })
}

/// Release a model handle; null is a no-op.
///
/// # Safety
/// `model` must be null or a handle produced by this library, not yet
/// freed.
#[no_mangle]
pub unsafe extern "C" fn ernet_model_free(model: *mut ErnetModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Run inference in memory: the warped output, the cumulative binary mask,
/// and the 12 final transform entries (normalized-centered convention).
/// Any of the out pointers may be null to skip that output.
///
/// # Safety
/// Handles must be live; `transform12`, when non-null, must point to 12
/// writable f64s.
#[no_mangle]
pub unsafe extern "C" fn ernet_infer_pair(
    model: *const ErnetModel,
    source: *const ErnetVolume,
    target: *const ErnetVolume,
    warped: *mut *mut ErnetVolume,
    mask: *mut *mut ErnetVolume,
    transform12: *mut f64,
) -> ErnetStatus {
    guarded(|| {
        let (Some(model), Some(source), Some(target)) =
            (model.as_ref(), source.as_ref(), target.as_ref())
        else {
            set_error("null handle");
            return ErnetStatus::NullPointer;
        };
        let src = normalize_minmax(&source.inner);
        let tgt = normalize_minmax(&target.inner);
        let pass = match forward(&model.inner, &src, &tgt, Mode::Infer) {
            Ok(p) => p,
            Err(e) => return capture(e),
        };
        if !warped.is_null() {
            match Volume::new(src.dims, pass.final_image()) {
                Ok(v) => *warped = Box::into_raw(Box::new(ErnetVolume { inner: v })),
                Err(e) => return capture(e),
            }
        }
        if !mask.is_null() {
            match Volume::new(src.dims, pass.cumulative_mask()) {
                Ok(v) => *mask = Box::into_raw(Box::new(ErnetVolume { inner: v })),
                Err(e) => return capture(e),
            }
        }
        if !transform12.is_null() {
            std::slice::from_raw_parts_mut(transform12, 12)
                .copy_from_slice(&pass.final_transform);
        }
        ErnetStatus::Ok
    })
}

/// Run inference and write the artifact files under `out_dir`.
///
/// # Safety
/// Handles must be live and `out_dir` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ernet_infer_to_dir(
    model: *const ErnetModel,
    source: *const ErnetVolume,
    target: *const ErnetVolume,
    out_dir: *const c_char,
    emit_stages: bool,
) -> ErnetStatus {
    guarded(|| {
        let (Some(model), Some(source), Some(target)) =
            (model.as_ref(), source.as_ref(), target.as_ref())
        else {
            set_error("null handle");
            return ErnetStatus::NullPointer;
        };
        let dir = match path_arg(out_dir) {
            Ok(p) => p,
            Err(status) => return status,
        };
        match infer(&model.inner, &source.inner, &target.inner, dir, emit_stages) {
            Ok(_) => ErnetStatus::Ok,
            Err(e) => capture(e),
        }
    })
}

/// Train the model in place on a dataset directory or manifest.
/// `config_json` may be null for defaults or a JSON train config;
/// `val_dir` may be null to skip validation.
///
/// # Safety
/// `model` must be a live handle; strings NUL-terminated; `final_loss`,
/// when non-null, must be writable.
#[no_mangle]
pub unsafe extern "C" fn ernet_train_dir(
    model: *mut ErnetModel,
    data_dir: *const c_char,
    val_dir: *const c_char,
    config_json: *const c_char,
    final_loss: *mut f64,
) -> ErnetStatus {
    guarded(|| {
        let Some(model) = model.as_mut() else {
            set_error("null model handle");
            return ErnetStatus::NullPointer;
        };
        let data_dir = match path_arg(data_dir) {
            Ok(p) => p,
            Err(status) => return status,
        };
        let config: TrainConfig = if config_json.is_null() {
            TrainConfig::default()
        } else {
            let text = match CStr::from_ptr(config_json).to_str() {
                Ok(s) => s,
                Err(_) => {
                    set_error("config is not valid UTF-8");
                    return ErnetStatus::InvalidArgument;
                }
            };
            match serde_json::from_str(text) {
                Ok(c) => c,
                Err(e) => {
                    set_error(&format!("config: {e}"));
                    return ErnetStatus::InvalidArgument;
                }
            }
        };
        let dataset = match load_dataset(data_dir) {
            Ok(d) => d,
            Err(e) => return capture(e),
        };
        let validation = if val_dir.is_null() {
            None
        } else {
            let path = match path_arg(val_dir) {
                Ok(p) => p,
                Err(status) => return status,
            };
            match load_dataset(path) {
                Ok(d) => Some(d),
                Err(e) => return capture(e),
            }
        };
        match train(&mut model.inner, &dataset, validation.as_ref(), &config) {
            Ok(outcome) => {
                if !final_loss.is_null() {
                    *final_loss = outcome.final_total;
                }
                ErnetStatus::Ok
            }
            Err(e) => capture(e),
        }
    })
}

/// Score the model on a dataset with ground truth; mean Dice values come
/// back through the out pointers (which may be null).
///
/// # Safety
/// `model` live, `data_dir` NUL-terminated, out pointers writable or null.
#[no_mangle]
pub unsafe extern "C" fn ernet_evaluate_dir(
    model: *const ErnetModel,
    data_dir: *const c_char,
    mean_dice_ext: *mut f64,
    mean_dice_reg: *mut f64,
) -> ErnetStatus {
    guarded(|| {
        let Some(model) = model.as_ref() else {
            set_error("null model handle");
            return ErnetStatus::NullPointer;
        };
        let data_dir = match path_arg(data_dir) {
            Ok(p) => p,
            Err(status) => return status,
        };
        let dataset = match load_dataset(data_dir) {
            Ok(d) => d,
            Err(e) => return capture(e),
        };
        match evaluate(&model.inner, &dataset) {
            Ok(summary) => {
                if !mean_dice_ext.is_null() {
                    *mean_dice_ext = summary.mean_dice_ext;
                }
                if !mean_dice_reg.is_null() {
                    *mean_dice_reg = summary.mean_dice_reg;
                }
                ErnetStatus::Ok
            }
            Err(e) => capture(e),
        }
    })
}

/// Generate a synthetic phantom dataset with ground truth into `dir`.
///
/// # Safety
/// `dir` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ernet_phantom_dataset(
    dir: *const c_char,
    count: usize,
    extent: usize,
    seed: u64,
    translation_voxels: f64,
    rotation_degrees: f64,
    scale_min: f64,
    scale_max: f64,
) -> ErnetStatus {
    guarded(|| {
        let dir = match path_arg(dir) {
            Ok(p) => p,
            Err(status) => return status,
        };
        let ranges = AugmentationRanges {
            translation_voxels,
            rotation_degrees,
            scale: (scale_min, scale_max),
        };
        match write_phantom_dataset(dir, count, [extent; 3], &ranges, seed) {
            Ok(()) => ErnetStatus::Ok,
            Err(e) => capture(e),
        }
    })
}

/// Dice overlap of two binary masks of equal length.
///
/// # Safety
/// `a` and `b` must point to `len` readable f64s; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ernet_dice(
    a: *const f64,
    b: *const f64,
    len: usize,
    out: *mut f64,
) -> ErnetStatus {
    guarded(|| {
        if a.is_null() || b.is_null() || out.is_null() {
            set_error("null pointer");
            return ErnetStatus::NullPointer;
        }
        let a = std::slice::from_raw_parts(a, len);
        let b = std::slice::from_raw_parts(b, len);
        match dice_ext(a, b) {
            Ok(d) => {
                *out = d;
                ErnetStatus::Ok
            }
            Err(e) => capture(e),
        }
    })
}

/// Run the oracle-equivalence and gradient suites; Ok when all pass.
#[no_mangle]
pub extern "C" fn ernet_verify(seed: u64) -> ErnetStatus {
    guarded(|| {
        let results = ernet::refcheck::run_all_suites(seed);
        for suite in &results {
            if !suite.passed() {
                set_error(&format!(
                    "suite '{}' failed: worst {} vs threshold {}",
                    suite.name, suite.worst, suite.threshold
                ));
                return ErnetStatus::RuntimeError;
            }
        }
        ErnetStatus::Ok
    })
}
