//! C ABI over the `nide` library.
//!
//! Datasets and checkpoints cross the boundary as opaque handles that the
//! caller frees with the matching `*_free`. Every fallible call returns a
//! [`NideStatus`]; on failure the message is kept per thread and read with
//! [`nide_last_error`]. Panics never unwind into C: they surface as
//! [`NideStatus::Panic`].
//!
//! Array outputs use a caller-owned buffer plus its capacity in elements;
//! too small a buffer yields [`NideStatus::BufferTooSmall`] and writes
//! nothing, so callers query sizes first.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use nide::cli::RunConfig;
use nide::datasets::{generate, Dataset, GeneratorSpec, SystemName};
use nide::training::{evaluate, make_node_baseline, predict_from_ic, train, Checkpoint, ModelKind, ModelSpec};
use nide::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NideStatus {
    Ok = 0,
    /// A required pointer was null.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    /// Unreadable, malformed or inconsistent files.
    Data = 4,
    Io = 5,
    Solver = 6,
    /// Training stopped on a non-finite loss; the handle holds the last good fit.
    Diverged = 7,
    BufferTooSmall = 8,
    IndexOutOfRange = 9,
    Panic = 10,
}

/// Loaded or generated trajectories.
pub struct NideDataset {
    inner: Dataset,
}

/// Fitted model.
pub struct NideCheckpoint {
    inner: Checkpoint,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Fail(NideStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidArgument(_) | Error::Shape { .. } => NideStatus::InvalidArgument,
            Error::Io(_) => NideStatus::Io,
            Error::Solver { .. } | Error::NonFinite(_) => NideStatus::Solver,
            Error::Diverged { .. } => NideStatus::Diverged,
            _ => NideStatus::Data,
        };
        Fail(status, e.to_string())
    }
}

fn fail(status: NideStatus, msg: impl Into<String>) -> Fail {
    Fail(status, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> NideStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            NideStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            NideStatus::Panic
        }
    }
}

/// # Safety
/// `p` is null or a valid NUL-terminated string.
unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(fail(NideStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(NideStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

/// # Safety
/// `p` is null or points to a live `T`.
unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| fail(NideStatus::NullPointer, format!("{what} is null")))
}

/// # Safety
/// `out` is null or valid for writes of `cap` elements.
unsafe fn copy_out(src: &[f64], out: *mut f64, cap: usize) -> Result<(), Fail> {
    if out.is_null() {
        return Err(fail(NideStatus::NullPointer, "output buffer is null"));
    }
    if cap < src.len() {
        return Err(fail(
            NideStatus::BufferTooSmall,
            format!("buffer holds {cap} values, {} needed", src.len()),
        ));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn nide_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null after a success.
/// Valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn nide_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Load a dataset from its directory or manifest.
///
/// # Safety
/// `path` is a NUL-terminated string; `out` is valid for one write.
#[no_mangle]
pub unsafe extern "C" fn nide_dataset_load(path: *const c_char, out: *mut *mut NideDataset) -> NideStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(NideStatus::NullPointer, "out is null"));
        }
        let path = PathBuf::from(str_arg(path, "path")?);
        let inner = Dataset::load(&path)?;
        *out = Box::into_raw(Box::new(NideDataset { inner }));
        Ok(())
    })
}

/// Generate `curves` trajectories of a named system at its default window
/// and sampling.
///
/// # Safety
/// `system` is a NUL-terminated string; `out` is valid for one write.
#[no_mangle]
pub unsafe extern "C" fn nide_dataset_generate(
    system: *const c_char,
    curves: usize,
    seed: u64,
    out: *mut *mut NideDataset,
) -> NideStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(NideStatus::NullPointer, "out is null"));
        }
        let name: SystemName = str_arg(system, "system")?
            .parse()
            .map_err(|e: Error| fail(NideStatus::InvalidArgument, e.to_string()))?;
        let spec = GeneratorSpec::new(name, curves, seed);
        spec.validate()?;
        let inner = generate(&spec)?;
        *out = Box::into_raw(Box::new(NideDataset { inner }));
        Ok(())
    })
}

/// Write the dataset to `dir` in the on-disk dataset format.
///
/// # Safety
/// `ds` is a live handle; `dir` is a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn nide_dataset_write(ds: *const NideDataset, dir: *const c_char) -> NideStatus {
    guard(|| {
        let ds = handle(ds, "dataset")?;
        ds.inner.write(&PathBuf::from(str_arg(dir, "dir")?))?;
        Ok(())
    })
}

/// Number of trajectories; 0 for a null handle.
///
/// # Safety
/// `ds` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nide_dataset_len(ds: *const NideDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.len())
}

/// State dimension; 0 for a null handle.
///
/// # Safety
/// `ds` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nide_dataset_dim(ds: *const NideDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.dim())
}

/// Observation count of trajectory `index`.
///
/// # Safety
/// `ds` is a live handle; `points` is valid for one write.
#[no_mangle]
pub unsafe extern "C" fn nide_dataset_points(ds: *const NideDataset, index: usize, points: *mut usize) -> NideStatus {
    guard(|| {
        let ds = handle(ds, "dataset")?;
        let traj = ds
            .inner
            .trajectories
            .get(index)
            .ok_or_else(|| fail(NideStatus::IndexOutOfRange, format!("no trajectory {index}")))?;
        if points.is_null() {
            return Err(fail(NideStatus::NullPointer, "points is null"));
        }
        *points = traj.len();
        Ok(())
    })
}

/// Copy trajectory `index`: `times` gets T values, `states` T·n row-major.
///
/// # Safety
/// `ds` is a live handle; `times` and `states` are valid for `times_cap`
/// and `states_cap` writes.
#[no_mangle]
pub unsafe extern "C" fn nide_dataset_trajectory(
    ds: *const NideDataset,
    index: usize,
    times: *mut f64,
    times_cap: usize,
    states: *mut f64,
    states_cap: usize,
) -> NideStatus {
    guard(|| {
        let ds = handle(ds, "dataset")?;
        let traj = ds
            .inner
            .trajectories
            .get(index)
            .ok_or_else(|| fail(NideStatus::IndexOutOfRange, format!("no trajectory {index}")))?;
        if states_cap < traj.states().data().len() {
            return Err(fail(NideStatus::BufferTooSmall, "states buffer too small"));
        }
        copy_out(traj.times(), times, times_cap)?;
        copy_out(traj.states().data(), states, states_cap)
    })
}

/// # Safety
/// `ds` is null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nide_dataset_free(ds: *mut NideDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Fit a model to a dataset.
///
/// `config` is null or TOML with optional `seed`, `[model]` and `[train]`
/// tables, as in a CLI `run_config.toml`. Without `[model]` a NIDE with
/// default widths is fitted; `node = true` swaps in the parameter-matched NODE.
/// On [`NideStatus::Diverged`] `*out` still receives the last good fit.
///
/// # Safety
/// `ds` is a live handle; `config` is null or NUL-terminated; `out` is valid
/// for one write.
#[no_mangle]
pub unsafe extern "C" fn nide_train(
    ds: *const NideDataset,
    config: *const c_char,
    node: bool,
    out: *mut *mut NideCheckpoint,
) -> NideStatus {
    guard(|| {
        let ds = handle(ds, "dataset")?;
        if out.is_null() {
            return Err(fail(NideStatus::NullPointer, "out is null"));
        }
        let run: RunConfig = if config.is_null() {
            RunConfig::default()
        } else {
            toml::from_str(str_arg(config, "config")?)
                .map_err(|e| fail(NideStatus::InvalidArgument, e.to_string()))?
        };
        let dim = ds.inner.dim();
        let mut model = run
            .model
            .unwrap_or_else(|| ModelSpec::nide(dim, dim, &[16, 16], &[16, 16], &[16]));
        if node && model.kind == ModelKind::Nide {
            model = make_node_baseline(&model)?.spec;
        }
        let mut train_config = run.train.unwrap_or_default();
        if let Some(s) = run.seed {
            train_config.seed = s;
        }
        let outcome = train(&ds.inner.trajectories, &model, &train_config)?;
        let diverged = outcome.divergence.clone();
        *out = Box::into_raw(Box::new(NideCheckpoint {
            inner: outcome.checkpoint,
        }));
        match diverged {
            Some(d) => Err(fail(
                NideStatus::Diverged,
                format!("diverged at epoch {}: {}", d.epoch, d.reason),
            )),
            None => Ok(()),
        }
    })
}

/// Load a checkpoint from its directory or manifest.
///
/// # Safety
/// `path` is a NUL-terminated string; `out` is valid for one write.
#[no_mangle]
pub unsafe extern "C" fn nide_checkpoint_load(path: *const c_char, out: *mut *mut NideCheckpoint) -> NideStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(NideStatus::NullPointer, "out is null"));
        }
        let inner = Checkpoint::load(&PathBuf::from(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(NideCheckpoint { inner }));
        Ok(())
    })
}

/// # Safety
/// `ckpt` is a live handle; `dir` is a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn nide_checkpoint_save(ckpt: *const NideCheckpoint, dir: *const c_char) -> NideStatus {
    guard(|| {
        let ckpt = handle(ckpt, "checkpoint")?;
        ckpt.inner.save(&PathBuf::from(str_arg(dir, "dir")?))?;
        Ok(())
    })
}

/// State dimension; 0 for a null handle.
///
/// # Safety
/// `ckpt` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nide_checkpoint_state_dim(ckpt: *const NideCheckpoint) -> usize {
    ckpt.as_ref().map_or(0, |c| c.inner.model.state_dim)
}

/// Solve from `y0` (length n) over `points` evenly spaced times in
/// `[t0, t1]`, writing `points·n` row-major states.
///
/// # Safety
/// `ckpt` is a live handle; `y0` is valid for `n` reads; `states` for
/// `states_cap` writes.
#[no_mangle]
pub unsafe extern "C" fn nide_checkpoint_predict(
    ckpt: *const NideCheckpoint,
    y0: *const f64,
    n: usize,
    t0: f64,
    t1: f64,
    points: usize,
    states: *mut f64,
    states_cap: usize,
) -> NideStatus {
    guard(|| {
        let ckpt = handle(ckpt, "checkpoint")?;
        if y0.is_null() {
            return Err(fail(NideStatus::NullPointer, "y0 is null"));
        }
        let y0 = std::slice::from_raw_parts(y0, n);
        let (traj, _) = predict_from_ic(&ckpt.inner, y0, t0, t1, points)?;
        copy_out(traj.states().data(), states, states_cap)
    })
}

/// Pooled MSE of predictions from each trajectory's initial condition.
///
/// # Safety
/// `ckpt` and `ds` are live handles; `mse` is valid for one write.
#[no_mangle]
pub unsafe extern "C" fn nide_checkpoint_mse(
    ckpt: *const NideCheckpoint,
    ds: *const NideDataset,
    mse: *mut f64,
) -> NideStatus {
    guard(|| {
        let ckpt = handle(ckpt, "checkpoint")?;
        let ds = handle(ds, "dataset")?;
        if mse.is_null() {
            return Err(fail(NideStatus::NullPointer, "mse is null"));
        }
        *mse = evaluate(&ckpt.inner, &ds.inner.trajectories, None)?.mse;
        Ok(())
    })
}

/// # Safety
/// `ckpt` is null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nide_checkpoint_free(ckpt: *mut NideCheckpoint) {
    if !ckpt.is_null() {
        drop(Box::from_raw(ckpt));
    }
}
