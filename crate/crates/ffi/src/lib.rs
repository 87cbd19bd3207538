//! C ABI over the funcdict library.
//!
//! Datasets and models are opaque handles created by `fd_*_generate`, `fd_*_init`
//! or `fd_*_load` and released with the matching `fd_*_free`. Every fallible call
//! returns an [`FdStatus`]; on failure the message is available from
//! [`fd_last_error`] on the same thread. Matrices are row-major `double` arrays.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use funcdict::eval::{binarize_rows, matched_miou_shape};
use funcdict::geometry::{generate_family, read_jsonl, write_jsonl, FamilyParams, PointCloud, Preset, ShapeSample};
use funcdict::model::{forward, Architecture, Checkpoint, ConstraintMode, ModelParams};
use funcdict::numerics::{hungarian_max, DenseMatrix, RngStream};
use funcdict::solver::solve_box_ls;
use libc::{c_char, size_t};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FdStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullArgument = 1,
    /// Malformed input, including buffer lengths that do not match the data.
    InvalidArgument = 2,
    InvalidConfig = 3,
    /// Non-finite values or a failed numerical routine.
    Numeric = 4,
    Io = 5,
    Parse = 6,
    /// A Rust panic was caught at the boundary.
    Panic = 7,
}

/// Synthetic shapes with part labels.
pub struct FdDataset {
    shapes: Vec<ShapeSample>,
}

/// Network parameters together with the dictionary constraint they were trained for.
pub struct FdModel {
    params: ModelParams,
    mode: ConstraintMode,
}

struct Failure {
    status: FdStatus,
    message: String,
}

impl Failure {
    fn new(status: FdStatus, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn null(name: &str) -> Self {
        Self::new(FdStatus::NullArgument, format!("`{name}` is NULL"))
    }
}

impl From<funcdict::Error> for Failure {
    fn from(e: funcdict::Error) -> Self {
        use funcdict::Error as E;
        let status = match e {
            E::InvalidInput(_) | E::InvalidState(_) => FdStatus::InvalidArgument,
            E::InvalidConfig(_) => FdStatus::InvalidConfig,
            E::NumericOverflow { .. } | E::Numeric(_) | E::Solver(_) => FdStatus::Numeric,
            E::Io { .. } => FdStatus::Io,
            E::Parse { .. } => FdStatus::Parse,
        };
        Self::new(status, e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let text = CString::new(message.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(text));
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> FdStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => FdStatus::Ok,
        Ok(Err(f)) => {
            set_last_error(&f.message);
            f.status
        }
        Err(payload) => {
            let what = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {what}"));
            FdStatus::Panic
        }
    }
}

unsafe fn text<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(Failure::null(name));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| Failure::new(FdStatus::InvalidArgument, format!("`{name}` is not UTF-8")))
}

unsafe fn input<'a, T>(ptr: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(Failure::null(name));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn output<'a, T>(ptr: *mut T, len: usize, expected: usize, name: &str) -> Result<&'a mut [T], Failure> {
    if len != expected {
        return Err(Failure::new(
            FdStatus::InvalidArgument,
            format!("`{name}` holds {len} values, expected {expected}"),
        ));
    }
    if expected == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(Failure::null(name));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn handle<'a, T>(ptr: *const T, name: &str) -> Result<&'a T, Failure> {
    ptr.as_ref().ok_or_else(|| Failure::null(name))
}

unsafe fn store<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

unsafe fn shape<'a>(ds: *const FdDataset, index: size_t) -> Result<&'a ShapeSample, Failure> {
    let ds = handle(ds, "dataset")?;
    ds.shapes.get(index).ok_or_else(|| {
        Failure::new(
            FdStatus::InvalidArgument,
            format!("shape index {index} out of range for {} shapes", ds.shapes.len()),
        )
    })
}

fn matrix(values: &[f64], rows: usize, cols: usize) -> Result<DenseMatrix, Failure> {
    Ok(DenseMatrix::from_vec(rows, cols, values.to_vec())?)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL if none failed yet.
///
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Generates `count` shapes of `preset` (`table4`, `chair6` or `boxesN`) with default family settings.
///
/// # Safety
/// `preset` must be a NUL-terminated string and `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn fd_dataset_generate(
    preset: *const c_char,
    count: size_t,
    n_points: size_t,
    seed: u64,
    out: *mut *mut FdDataset,
) -> FdStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        let preset: Preset = text(preset, "preset")?.parse()?;
        let shapes = generate_family(preset, count, n_points, &FamilyParams::default(), &RngStream::new(seed))?;
        store(out, FdDataset { shapes });
        Ok(())
    })
}

/// Reads a JSONL dataset written by `funcdict gen-data` or [`fd_dataset_save`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn fd_dataset_load(path: *const c_char, out: *mut *mut FdDataset) -> FdStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        let shapes = read_jsonl(Path::new(text(path, "path")?))?;
        store(out, FdDataset { shapes });
        Ok(())
    })
}

/// # Safety
/// `ds` must be a live dataset handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fd_dataset_save(ds: *const FdDataset, path: *const c_char) -> FdStatus {
    guard(|| {
        let ds = handle(ds, "dataset")?;
        write_jsonl(Path::new(text(path, "path")?), &ds.shapes)?;
        Ok(())
    })
}

/// Number of shapes; 0 for a NULL handle.
///
/// # Safety
/// `ds` must be NULL or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn fd_dataset_len(ds: *const FdDataset) -> size_t {
    ds.as_ref().map_or(0, |d| d.shapes.len())
}

/// # Safety
/// `ds` must be a live dataset handle and `n_points` writable.
#[no_mangle]
pub unsafe extern "C" fn fd_dataset_num_points(ds: *const FdDataset, index: size_t, n_points: *mut size_t) -> FdStatus {
    guard(|| {
        let s = shape(ds, index)?;
        *n_points.as_mut().ok_or_else(|| Failure::null("n_points"))? = s.n_points();
        Ok(())
    })
}

/// Copies the normalized coordinates of shape `index` as `n x 3` values; `len` must be `3 n`.
///
/// # Safety
/// `ds` must be a live dataset handle and `xyz` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn fd_dataset_points(ds: *const FdDataset, index: size_t, xyz: *mut f64, len: size_t) -> FdStatus {
    guard(|| {
        let s = shape(ds, index)?;
        let dst = output(xyz, len, 3 * s.n_points(), "xyz")?;
        for (d, p) in dst.chunks_exact_mut(3).zip(&s.cloud.points) {
            d.copy_from_slice(p);
        }
        Ok(())
    })
}

/// Copies the per-point part labels of shape `index`; `len` must equal its point count.
///
/// # Safety
/// `ds` must be a live dataset handle and `labels` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn fd_dataset_labels(ds: *const FdDataset, index: size_t, labels: *mut size_t, len: size_t) -> FdStatus {
    guard(|| {
        let s = shape(ds, index)?;
        output(labels, len, s.n_points(), "labels")?.copy_from_slice(&s.part_labels);
        Ok(())
    })
}

/// # Safety
/// `ds` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fd_dataset_free(ds: *mut FdDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Freshly initialized network with the default layer widths and `k` atoms.
///
/// # Safety
/// `mode` must be a NUL-terminated string (`seg`, `key` or `map`) and `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn fd_model_init(mode: *const c_char, k: size_t, seed: u64, out: *mut *mut FdModel) -> FdStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        let mode: ConstraintMode = text(mode, "mode")?.parse()?;
        let params = ModelParams::init(&Architecture::new(k), &RngStream::new(seed).substream("init"))?;
        store(out, FdModel { params, mode });
        Ok(())
    })
}

/// Loads the parameters of a training checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn fd_model_load(path: *const c_char, out: *mut *mut FdModel) -> FdStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        let ck = Checkpoint::load(Path::new(text(path, "path")?))?;
        store(out, FdModel { params: ck.params, mode: ck.mode });
        Ok(())
    })
}

/// Number of atoms; 0 for a NULL handle.
///
/// # Safety
/// `model` must be NULL or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn fd_model_k(model: *const FdModel) -> size_t {
    model.as_ref().map_or(0, |m| m.params.architecture().k)
}

/// Predicts the `n x k` dictionary for a cloud of `n` points given as `n x 3` coordinates.
///
/// Points are used as given, so pass clouds normalized like the dataset's.
///
/// # Safety
/// `model` must be a live model handle, `xyz` must hold `3 n` doubles and `a` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn fd_model_forward(
    model: *const FdModel,
    xyz: *const f64,
    n: size_t,
    a: *mut f64,
    len: size_t,
) -> FdStatus {
    guard(|| {
        let model = handle(model, "model")?;
        let coords = input(xyz, 3 * n, "xyz")?;
        let dst = output(a, len, n * model.params.architecture().k, "a")?;
        let cloud = PointCloud {
            points: coords.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        };
        let (dict, _) = forward(&model.params, &cloud, model.mode)?;
        dst.copy_from_slice(dict.matrix.as_slice());
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fd_model_free(model: *mut FdModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Solves `min ||A x - f||^2` over `x` in `[0, 1]^cols` for a `rows x cols` matrix `A`.
///
/// # Safety
/// `a` must hold `rows * cols` doubles, `f` `rows` doubles and `x` `cols` doubles;
/// `residual` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn fd_solve_box_ls(
    a: *const f64,
    rows: size_t,
    cols: size_t,
    f: *const f64,
    x: *mut f64,
    residual: *mut f64,
) -> FdStatus {
    guard(|| {
        let a = matrix(input(a, rows * cols, "a")?, rows, cols)?;
        let f = input(f, rows, "f")?;
        let dst = output(x, cols, cols, "x")?;
        let (solution, report) = solve_box_ls(&a, f)?;
        dst.copy_from_slice(&solution.0);
        if let Some(r) = residual.as_mut() {
            *r = report.residual;
        }
        Ok(())
    })
}

/// Maximum-profit assignment of rows to columns.
///
/// `mapping[r]` receives the matched column or -1; exactly `min(rows, cols)` rows are matched.
///
/// # Safety
/// `profit` must hold `rows * cols` doubles and `mapping` `rows` values; `total` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn fd_hungarian_max(
    profit: *const f64,
    rows: size_t,
    cols: size_t,
    mapping: *mut i64,
    total: *mut f64,
) -> FdStatus {
    guard(|| {
        let profit = matrix(input(profit, rows * cols, "profit")?, rows, cols)?;
        let dst = output(mapping, rows, rows, "mapping")?;
        let assignment = hungarian_max(&profit)?;
        for (d, m) in dst.iter_mut().zip(&assignment.mapping) {
            *d = m.map_or(-1, |c| c as i64);
        }
        if let Some(t) = total.as_mut() {
            *t = assignment.total_profit;
        }
        Ok(())
    })
}

/// Mean IoU of the ground-truth parts after matching them one-to-one to the atoms of
/// the `n x k` dictionary `a`, with each point assigned to its largest atom.
///
/// # Safety
/// `a` must hold `n * k` doubles, `labels` `n` values and `miou` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fd_matched_miou(
    a: *const f64,
    n: size_t,
    k: size_t,
    labels: *const size_t,
    miou: *mut f64,
) -> FdStatus {
    guard(|| {
        let a = matrix(input(a, n * k, "a")?, n, k)?;
        let labels = input(labels, n, "labels")?;
        let out = miou.as_mut().ok_or_else(|| Failure::null("miou"))?;
        *out = matched_miou_shape(&binarize_rows(&a), labels)?;
        Ok(())
    })
}
