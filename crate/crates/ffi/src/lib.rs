//! C interface to `diffclass`.
//!
//! Every function returns a [`DcStatus`]; on failure a message is kept per
//! thread and can be read with [`dc_last_error`]. Objects are opaque
//! handles created by `*_new`/`*_simulate`/`*_train` style functions and
//! released with the matching `*_free`. Class labels are 1-based across the
//! interface.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use diffclass::io::{read_dataset, write_dataset};
use diffclass::scores::argmax;
use diffclass::{
    params_from_json, select, simulate_dataset, BuiltinModel, Error, LabeledDataset, Path,
    ScoreParams, SelectionConfig, SimOptions, TrainConfig,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Simulation = 3,
    Evaluation = 4,
    Training = 5,
    Fit = 6,
    Format = 7,
    Schema = 8,
    Io = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

/// Labeled set of paths on a common grid.
pub struct DcDataset(LabeledDataset);

/// Trained score function.
pub struct DcModel(ScoreParams);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> DcStatus {
    match e {
        Error::Param(_) => DcStatus::InvalidArgument,
        Error::Simulation { .. } => DcStatus::Simulation,
        Error::Evaluation(_) => DcStatus::Evaluation,
        Error::Training(_) => DcStatus::Training,
        Error::Fit(_) => DcStatus::Fit,
        Error::Format(_) | Error::Json(_) => DcStatus::Format,
        Error::Schema(_) => DcStatus::Schema,
        Error::Io(_) => DcStatus::Io,
    }
}

struct Fail(DcStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(DcStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(DcStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            DcStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            DcStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(s: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn dc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Simulates `n_paths` paths with `steps` steps from built-in model
/// `model_id` (1, 2 or 3).
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn dc_dataset_simulate(
    model_id: u32,
    n_paths: usize,
    steps: usize,
    seed: u64,
    out: *mut *mut DcDataset,
) -> DcStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let model: BuiltinModel = model_id.to_string().parse()?;
        let data = simulate_dataset(&model.spec(), n_paths, SimOptions::new(steps), seed)?;
        *out = Box::into_raw(Box::new(DcDataset(data)));
        Ok(())
    })
}

/// Builds a dataset from a row-major `n_paths × (steps + 1)` array of path
/// values and `n_paths` labels in `1..=n_classes`.
///
/// # Safety
/// `values` and `labels` must point to arrays of the stated sizes; `out`
/// must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn dc_dataset_from_arrays(
    values: *const f64,
    labels: *const u32,
    n_paths: usize,
    steps: usize,
    n_classes: usize,
    out: *mut *mut DcDataset,
) -> DcStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        if n_paths == 0 || steps == 0 {
            return Err(invalid("n_paths and steps must be positive"));
        }
        let total = n_paths
            .checked_mul(steps + 1)
            .ok_or_else(|| invalid("dataset size overflows"))?;
        let values = slice_arg(values, total, "values")?;
        let labels = slice_arg(labels, n_paths, "labels")?;
        let mut paths = Vec::with_capacity(n_paths);
        for row in values.chunks(steps + 1) {
            paths.push(Path::new(row.to_vec())?);
        }
        let mut zero_based = Vec::with_capacity(n_paths);
        for (j, &y) in labels.iter().enumerate() {
            if y == 0 || y as usize > n_classes {
                return Err(invalid(format!("label {y} of path {} outside 1..={n_classes}", j + 1)));
            }
            zero_based.push(y as usize - 1);
        }
        let data = LabeledDataset::new(paths, zero_based, n_classes)?;
        *out = Box::into_raw(Box::new(DcDataset(data)));
        Ok(())
    })
}

/// Reads a dataset file (`.csv` text, otherwise binary).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn dc_dataset_read(path: *const c_char, out: *mut *mut DcDataset) -> DcStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let data = read_dataset(str_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(DcDataset(data)));
        Ok(())
    })
}

/// Writes a dataset file (`.csv` text, otherwise binary).
///
/// # Safety
/// `data` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dc_dataset_write(data: *const DcDataset, path: *const c_char) -> DcStatus {
    guard(|| {
        let data = data.as_ref().ok_or_else(|| null("data"))?;
        write_dataset(&data.0, str_arg(path, "path")?)?;
        Ok(())
    })
}

/// Writes the number of paths, steps per path and classes.
///
/// # Safety
/// `data` must be a live handle; each out pointer may be NULL.
#[no_mangle]
pub unsafe extern "C" fn dc_dataset_shape(
    data: *const DcDataset,
    n_paths: *mut usize,
    steps: *mut usize,
    n_classes: *mut usize,
) -> DcStatus {
    guard(|| {
        let data = &data.as_ref().ok_or_else(|| null("data"))?.0;
        if let Some(p) = n_paths.as_mut() {
            *p = data.len();
        }
        if let Some(p) = steps.as_mut() {
            *p = data.steps();
        }
        if let Some(p) = n_classes.as_mut() {
            *p = data.num_classes();
        }
        Ok(())
    })
}

/// Copies path `index` (0-based) into `values` (length `steps + 1`) and its
/// 1-based label into `label`.
///
/// # Safety
/// `data` must be a live handle, `values` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn dc_dataset_path(
    data: *const DcDataset,
    index: usize,
    values: *mut f64,
    len: usize,
    label: *mut u32,
) -> DcStatus {
    guard(|| {
        let data = &data.as_ref().ok_or_else(|| null("data"))?.0;
        if index >= data.len() {
            return Err(invalid(format!("index {index} out of range (N = {})", data.len())));
        }
        let path = data.paths()[index].values();
        if len < path.len() {
            return Err(Fail(
                DcStatus::BufferTooSmall,
                format!("buffer holds {len} values, path has {}", path.len()),
            ));
        }
        if values.is_null() {
            return Err(null("values"));
        }
        std::slice::from_raw_parts_mut(values, path.len()).copy_from_slice(path);
        if let Some(l) = label.as_mut() {
            *l = data.labels()[index] as u32 + 1;
        }
        Ok(())
    })
}

/// # Safety
/// `data` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dc_dataset_free(data: *mut DcDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Trains a score function with penalized selection of `(D1, D2)` over
/// `grid × grid`. `grid_len = 0` uses the default grid {2, 4, 8};
/// `kappa <= 0` uses 1; `max_iters = 0` uses the default iteration cap.
///
/// # Safety
/// `data` must be a live handle, `grid` must hold `grid_len` entries, and
/// `out` must be a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn dc_model_train(
    data: *const DcDataset,
    grid: *const usize,
    grid_len: usize,
    kappa: f64,
    max_iters: usize,
    out: *mut *mut DcModel,
) -> DcStatus {
    guard(|| {
        let data = &data.as_ref().ok_or_else(|| null("data"))?.0;
        let out = out_arg(out, "out")?;
        let mut cfg = SelectionConfig::default();
        if grid_len > 0 {
            cfg.grid = slice_arg(grid, grid_len, "grid")?.to_vec();
        }
        if kappa > 0.0 {
            cfg.kappa = kappa;
        }
        let mut train = TrainConfig::default();
        if max_iters > 0 {
            train.max_iters = max_iters;
        }
        let result = select(data, &cfg, &train)?;
        *out = Box::into_raw(Box::new(DcModel(result.fitted.params)));
        Ok(())
    })
}

/// Writes the number of classes and the selected `(D1, D2)`.
///
/// # Safety
/// `model` must be a live handle; each out pointer may be NULL.
#[no_mangle]
pub unsafe extern "C" fn dc_model_shape(
    model: *const DcModel,
    n_classes: *mut usize,
    drift_dim: *mut usize,
    diffusion_dim: *mut usize,
) -> DcStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.0;
        if let Some(p) = n_classes.as_mut() {
            *p = m.num_classes();
        }
        if let Some(p) = drift_dim.as_mut() {
            *p = m.drift_basis().dim();
        }
        if let Some(p) = diffusion_dim.as_mut() {
            *p = m.diffusion_basis().dim();
        }
        Ok(())
    })
}

unsafe fn path_arg(values: *const f64, len: usize) -> Result<Path, Fail> {
    Ok(Path::new(slice_arg(values, len, "values")?.to_vec())?)
}

/// Posterior class probabilities of one path (`len` values starting at 0).
///
/// # Safety
/// `model` must be a live handle, `values` must hold `len` doubles and
/// `posterior` must hold `n_posterior` doubles.
#[no_mangle]
pub unsafe extern "C" fn dc_model_posterior(
    model: *const DcModel,
    values: *const f64,
    len: usize,
    posterior: *mut f64,
    n_posterior: usize,
) -> DcStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.0;
        let path = path_arg(values, len)?;
        if n_posterior < m.num_classes() {
            return Err(Fail(
                DcStatus::BufferTooSmall,
                format!("posterior buffer holds {n_posterior}, model has {} classes", m.num_classes()),
            ));
        }
        if posterior.is_null() {
            return Err(null("posterior"));
        }
        let post = m.posterior(&path);
        std::slice::from_raw_parts_mut(posterior, post.len()).copy_from_slice(&post);
        Ok(())
    })
}

/// Predicted 1-based class of one path.
///
/// # Safety
/// `model` must be a live handle, `values` must hold `len` doubles, and
/// `class_out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dc_model_classify(
    model: *const DcModel,
    values: *const f64,
    len: usize,
    class_out: *mut u32,
) -> DcStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.0;
        let out = out_arg(class_out, "class_out")?;
        let path = path_arg(values, len)?;
        *out = argmax(&m.posterior(&path)) as u32 + 1;
        Ok(())
    })
}

/// Serializes the model as JSON into `buf` (NUL-terminated). `needed`
/// receives the required size including the NUL; with a NULL or short
/// buffer the call returns `BufferTooSmall` and writes only `needed`.
///
/// # Safety
/// `model` must be a live handle; `buf` must hold `buf_len` bytes.
#[no_mangle]
pub unsafe extern "C" fn dc_model_to_json(
    model: *const DcModel,
    buf: *mut c_char,
    buf_len: usize,
    needed: *mut usize,
) -> DcStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.0;
        let text = m.to_json()?;
        let size = text.len() + 1;
        if let Some(n) = needed.as_mut() {
            *n = size;
        }
        if buf.is_null() || buf_len < size {
            return Err(Fail(
                DcStatus::BufferTooSmall,
                format!("JSON needs {size} bytes, buffer has {buf_len}"),
            ));
        }
        let dst = std::slice::from_raw_parts_mut(buf.cast::<u8>(), size);
        dst[..text.len()].copy_from_slice(text.as_bytes());
        dst[text.len()] = 0;
        Ok(())
    })
}

/// Loads a model from JSON (a trained-model or score-params document).
///
/// # Safety
/// `json` must be NUL-terminated; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn dc_model_from_json(json: *const c_char, out: *mut *mut DcModel) -> DcStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let params = params_from_json(str_arg(json, "json")?)?;
        *out = Box::into_raw(Box::new(DcModel(params)));
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dc_model_free(model: *mut DcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
