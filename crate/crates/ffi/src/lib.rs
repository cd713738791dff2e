//! C ABI over `fedviz`.
//!
//! Every fallible call returns an [`FvStatus`]; on failure the message is
//! available from [`fv_last_error`] on the same thread. Matrices cross the
//! boundary as opaque [`FvMatrix`] handles built from row-major buffers.
//! Data matrices hold one point per column (`features × points`).

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use nalgebra::DMatrix;

use fedviz::cluster::spectral_cluster;
use fedviz::embed::{self, TsneConfig, UmapConfig};
use fedviz::kernel::{kernel_between, mmd, mmd_gradient, pairwise_sq_dist};
use fedviz::nystrom::{assemble_cross_block, nystrom_complete, CompletionParams, LandmarkBlock, MatrixKind};
use fedviz::pipeline::{run_command, Command, RunConfig, RunContext};
use fedviz::privacy::{gaussian_sigma_for_dp, PrivacyMode};
use fedviz::{DataMatrix, Error, ErrorClass, KernelParams};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FvStatus {
    Ok = 0,
    NullPointer = 1,
    Config = 2,
    Data = 3,
    Numerical = 4,
    Io = 5,
    InvalidUtf8 = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FvMatrixKind {
    Distance = 0,
    Kernel = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FvCommand {
    FeddlFit = 0,
    Tsne = 1,
    Umap = 2,
    Speclust = 3,
}

/// Dense real matrix.
pub struct FvMatrix {
    m: DMatrix<f64>,
}

/// Parsed run configuration.
pub struct FvConfig {
    config: RunConfig,
}

/// Finished pipeline run.
pub struct FvRun {
    manifest: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> FvStatus {
    match e.class() {
        ErrorClass::Config => FvStatus::Config,
        ErrorClass::Data => FvStatus::Data,
        ErrorClass::Numerical => FvStatus::Numerical,
        ErrorClass::Io => FvStatus::Io,
    }
}

struct Fail(FvStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> FvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            FvStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("panic inside fedviz");
            FvStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| Fail(FvStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| Fail(FvStatus::NullPointer, format!("{what} is null")))
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(FvStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(FvStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

fn emit(out: &mut *mut FvMatrix, m: DMatrix<f64>) {
    *out = Box::into_raw(Box::new(FvMatrix { m }));
}

fn points(m: &FvMatrix) -> Result<DataMatrix, Fail> {
    Ok(DataMatrix::new(m.m.clone())?)
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next `fv_*` call on the same thread.
#[no_mangle]
pub extern "C" fn fv_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Copies `rows × cols` row-major values into a new matrix.
///
/// # Safety
/// `data` must point to `rows * cols` doubles (or be null when that is 0);
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fv_matrix_new(rows: usize, cols: usize, data: *const f64, out: *mut *mut FvMatrix) -> FvStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| Fail(FvStatus::Config, "rows * cols overflows".into()))?;
        let values: &[f64] = if len == 0 {
            &[]
        } else {
            std::slice::from_raw_parts(deref(data, "data")?, len)
        };
        emit(out, DMatrix::from_row_slice(rows, cols, values));
        Ok(())
    })
}

/// # Safety
/// `m` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn fv_matrix_rows(m: *const FvMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.m.nrows())
}

/// # Safety
/// `m` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn fv_matrix_cols(m: *const FvMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.m.ncols())
}

/// Writes the values row-major into `buf`, which holds `len` doubles.
///
/// # Safety
/// `m` must be a live handle; `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn fv_matrix_copy(m: *const FvMatrix, buf: *mut f64, len: usize) -> FvStatus {
    guard(|| {
        let m = &deref(m, "matrix")?.m;
        if len != m.len() {
            return Err(Fail(
                FvStatus::Config,
                format!("buffer holds {len} values, matrix has {}", m.len()),
            ));
        }
        if len == 0 {
            return Ok(());
        }
        let buf = std::slice::from_raw_parts_mut(out_ptr(buf, "buf")?, len);
        let (rows, cols) = m.shape();
        for i in 0..rows {
            for j in 0..cols {
                buf[i * cols + j] = m[(i, j)];
            }
        }
        Ok(())
    })
}

/// # Safety
/// `m` must come from this library and not be used afterwards. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn fv_matrix_free(m: *mut FvMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Squared MMD between the points of `x` and `y` under `exp(-γ‖·‖²)`.
///
/// # Safety
/// Handles must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fv_mmd(x: *const FvMatrix, y: *const FvMatrix, gamma: f64, out: *mut f64) -> FvStatus {
    guard(|| {
        let (x, y) = (points(deref(x, "x")?)?, points(deref(y, "y")?)?);
        *out_ptr(out, "out")? = mmd(&x, &y, KernelParams::new(gamma)?)?;
        Ok(())
    })
}

/// Gradient of [`fv_mmd`] with respect to `y`, shaped like `y`.
///
/// # Safety
/// Handles must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fv_mmd_gradient(
    x: *const FvMatrix,
    y: *const FvMatrix,
    gamma: f64,
    out: *mut *mut FvMatrix,
) -> FvStatus {
    guard(|| {
        let (x, y) = (points(deref(x, "x")?)?, points(deref(y, "y")?)?);
        let out = out_ptr(out, "out")?;
        emit(out, mmd_gradient(&x, &y, KernelParams::new(gamma)?)?.into_matrix());
        Ok(())
    })
}

/// Nyström completion of the `n_x × n_x` distance or kernel matrix of `x`
/// from its blocks against the landmarks `y`. `gamma` is ignored for
/// distances.
///
/// # Safety
/// Handles must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fv_nystrom_complete(
    x: *const FvMatrix,
    y: *const FvMatrix,
    kind: FvMatrixKind,
    gamma: f64,
    out: *mut *mut FvMatrix,
) -> FvStatus {
    guard(|| {
        let (x, y) = (points(deref(x, "x")?)?, points(deref(y, "y")?)?);
        let out = out_ptr(out, "out")?;
        let (kind, params) = match kind {
            FvMatrixKind::Distance => (MatrixKind::Distance, KernelParams::new(1.0)?),
            FvMatrixKind::Kernel => (MatrixKind::Kernel, KernelParams::new(gamma)?),
        };
        let block = match kind {
            MatrixKind::Distance => pairwise_sq_dist(&x, &y)?,
            MatrixKind::Kernel => kernel_between(&x, &y, params)?,
        };
        let b = assemble_cross_block(&[(0, block)])?;
        let w = LandmarkBlock::from_landmarks(&y, kind, params)?;
        let done = nystrom_complete(&b, &w, &CompletionParams::default(), PrivacyMode::None)?;
        emit(out, done.values);
        Ok(())
    })
}

/// t-SNE of a squared-distance matrix into `out_dim` dimensions
/// (`n × out_dim` result); other settings take their defaults.
///
/// # Safety
/// `d2` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fv_tsne(
    d2: *const FvMatrix,
    out_dim: usize,
    perplexity: f64,
    iterations: usize,
    seed: u64,
    out: *mut *mut FvMatrix,
) -> FvStatus {
    guard(|| {
        let d2 = &deref(d2, "d2")?.m;
        let out = out_ptr(out, "out")?;
        let config = TsneConfig {
            out_dim,
            perplexity,
            iterations,
            seed,
            ..TsneConfig::default()
        };
        let ids: Vec<usize> = (0..d2.nrows()).collect();
        emit(out, embed::tsne(d2, &ids, &config)?.0.z);
        Ok(())
    })
}

/// UMAP of a squared-distance matrix (`n × out_dim` result).
///
/// # Safety
/// `d2` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fv_umap(
    d2: *const FvMatrix,
    out_dim: usize,
    n_neighbors: usize,
    iterations: usize,
    seed: u64,
    out: *mut *mut FvMatrix,
) -> FvStatus {
    guard(|| {
        let d2 = &deref(d2, "d2")?.m;
        let out = out_ptr(out, "out")?;
        let config = UmapConfig {
            out_dim,
            n_neighbors,
            iterations,
            seed,
            ..UmapConfig::default()
        };
        let ids: Vec<usize> = (0..d2.nrows()).collect();
        emit(out, embed::umap(d2, &ids, &config)?.0.z);
        Ok(())
    })
}

/// Spectral clustering of a kernel matrix into `c` clusters; writes one
/// label per row into `labels` (length `len`).
///
/// # Safety
/// `kernel` must be live; `labels` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn fv_spectral_cluster(
    kernel: *const FvMatrix,
    c: usize,
    seed: u64,
    labels: *mut usize,
    len: usize,
) -> FvStatus {
    guard(|| {
        let k = &deref(kernel, "kernel")?.m;
        if len != k.nrows() {
            return Err(Fail(
                FvStatus::Config,
                format!("label buffer holds {len}, kernel has {} rows", k.nrows()),
            ));
        }
        let a = spectral_cluster(k, c, seed)?;
        if len > 0 {
            std::slice::from_raw_parts_mut(out_ptr(labels, "labels")?, len).copy_from_slice(&a.labels);
        }
        Ok(())
    })
}

/// Gaussian-mechanism noise scale for `(ε, δ)`-DP over `rounds` releases.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fv_gaussian_sigma_for_dp(
    epsilon: f64,
    delta: f64,
    rounds: usize,
    sensitivity: f64,
    out: *mut f64,
) -> FvStatus {
    guard(|| {
        *out_ptr(out, "out")? = gaussian_sigma_for_dp(epsilon, delta, rounds, sensitivity)?;
        Ok(())
    })
}

/// Parses a TOML run configuration; null or empty text gives the defaults.
///
/// # Safety
/// `toml` must be null or NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fv_config_from_toml(toml: *const c_char, out: *mut *mut FvConfig) -> FvStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let text = if toml.is_null() { "" } else { string(toml, "toml")? };
        *out = Box::into_raw(Box::new(FvConfig {
            config: RunConfig::from_toml(text)?,
        }));
        Ok(())
    })
}

/// # Safety
/// `c` must come from this library and not be used afterwards. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn fv_config_free(c: *mut FvConfig) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Runs a pipeline command. Relative dataset paths resolve against
/// `data_dir`; outputs are written to `out_dir` unless it is null.
///
/// # Safety
/// `config` must be live; strings NUL-terminated or null; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fv_run(
    config: *const FvConfig,
    command: FvCommand,
    data_dir: *const c_char,
    out_dir: *const c_char,
    out: *mut *mut FvRun,
) -> FvStatus {
    guard(|| {
        let config = &deref(config, "config")?.config;
        let out = out_ptr(out, "out")?;
        let ctx = RunContext {
            data_dir: if data_dir.is_null() {
                PathBuf::from(".")
            } else {
                PathBuf::from(string(data_dir, "data_dir")?)
            },
            out_dir: if out_dir.is_null() {
                None
            } else {
                Some(PathBuf::from(string(out_dir, "out_dir")?))
            },
        };
        let command = match command {
            FvCommand::FeddlFit => Command::FeddlFit,
            FvCommand::Tsne => Command::Tsne,
            FvCommand::Umap => Command::Umap,
            FvCommand::Speclust => Command::Speclust,
        };
        let manifest = run_command(command, config, &ctx)?.to_toml()?;
        let manifest = CString::new(manifest).map_err(|e| Fail(FvStatus::Io, e.to_string()))?;
        *out = Box::into_raw(Box::new(FvRun { manifest }));
        Ok(())
    })
}

/// The run manifest as TOML, owned by the handle.
///
/// # Safety
/// `run` must be live or null.
#[no_mangle]
pub unsafe extern "C" fn fv_run_manifest(run: *const FvRun) -> *const c_char {
    run.as_ref().map_or(ptr::null(), |r| r.manifest.as_ptr())
}

/// # Safety
/// `run` must come from this library and not be used afterwards. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn fv_run_free(run: *mut FvRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}
