//! C ABI over fe-lab.
//!
//! Objects are opaque handles created by `*_new`/`*_load`/`*_generate` calls
//! and released with the matching `*_free`. Every fallible call returns an
//! [`FeStatus`]; on failure [`fe_last_error`] describes what went wrong on the
//! calling thread. No call unwinds across the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use fe_lab::error::Error;
use fe_lab::experiment::{default_shape, DataBundle, ModelKind, TrainSettings};
use fe_lab::metrics::stability_score;
use fe_lab::system::{SystemKind, SystemOptions, DEFAULT_NOISE_STD};
use fe_lab::tensor::Tensor;
use fe_lab::train::{TrainConfig, Trainer};

/// Result of every fallible call. The nonzero values match the CLI exit codes
/// where the categories overlap.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeStatus {
    Ok = 0,
    /// Bad shapes, configuration, or malformed files.
    Invalid = 2,
    Io = 3,
    /// Numerical failure such as a non-finite loss.
    Numeric = 4,
    NullPointer = 5,
    /// A caller buffer is too small; the required length was written back.
    BufferTooSmall = 6,
    /// An internal panic was caught.
    Panic = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeSystemKind {
    Nonlinear = 0,
    Linear = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeModelKind {
    Fe = 0,
    Vae = 1,
    BetaVae = 2,
    BetaFe = 3,
    SupervisedFe = 4,
}

/// A synthetic system with its training and held-out samples.
pub struct FeBundle(DataBundle);

/// A model together with its optimizer state.
pub struct FeTrainer(Trainer);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: FeStatus, msg: impl Into<String>) -> FeStatus {
    set_error(msg.into());
    status
}

fn from_error(e: Error) -> FeStatus {
    let status = match e.exit_code() {
        2 => FeStatus::Invalid,
        3 => FeStatus::Io,
        _ => FeStatus::Numeric,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> FeStatus) -> FeStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(FeStatus::Panic, format!("panic: {msg}"))
        }
    }
}

macro_rules! try_fe {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(e) => return from_error(e),
        }
    };
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(FeStatus::NullPointer, concat!("`", stringify!($p), "` is null"));
        })+
    };
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, FeStatus> {
    if p.is_null() {
        return Err(fail(FeStatus::NullPointer, "path is null"));
    }
    match CStr::from_ptr(p).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => Err(fail(FeStatus::Invalid, "path is not valid UTF-8")),
    }
}

fn model_kind(k: FeModelKind) -> ModelKind {
    match k {
        FeModelKind::Fe => ModelKind::Fe,
        FeModelKind::Vae => ModelKind::Vae,
        FeModelKind::BetaVae => ModelKind::BetaVae,
        FeModelKind::BetaFe => ModelKind::BetaFe,
        FeModelKind::SupervisedFe => ModelKind::SupervisedFe,
    }
}

/// Copy `src` into a caller buffer of capacity `cap`, reporting the length in `len`.
unsafe fn write_out(src: &[f64], out: *mut f64, cap: usize, len: *mut usize) -> FeStatus {
    if !len.is_null() {
        *len = src.len();
    }
    if src.len() > cap {
        return fail(FeStatus::BufferTooSmall, format!("need {} values, buffer holds {cap}", src.len()));
    }
    if !src.is_empty() {
        if out.is_null() {
            return fail(FeStatus::NullPointer, "`out` is null");
        }
        ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    }
    FeStatus::Ok
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next fe-lab call on the same thread.
#[no_mangle]
pub extern "C" fn fe_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Draw a system with its default shape and `noise_std` (negative selects the
/// default), then sample `n` training and `n_eval` held-out rows.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn fe_bundle_generate(
    seed: u64,
    kind: FeSystemKind,
    n: usize,
    n_eval: usize,
    noise_std: f64,
    out: *mut *mut FeBundle,
) -> FeStatus {
    guard(|| {
        non_null!(out);
        let kind = match kind {
            FeSystemKind::Nonlinear => SystemKind::Nonlinear,
            FeSystemKind::Linear => SystemKind::Linear,
        };
        let (n_inputs, n_outputs) = default_shape(kind);
        let opts = SystemOptions {
            kind,
            n_inputs,
            n_outputs,
            importance: None,
            noise_std: if noise_std < 0.0 { DEFAULT_NOISE_STD } else { noise_std },
        };
        let b = try_fe!(DataBundle::generate(seed, &opts, n, n_eval));
        *out = Box::into_raw(Box::new(FeBundle(b)));
        FeStatus::Ok
    })
}

/// Load a directory written by `fe_bundle_save` or the `gen-data` command.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fe_bundle_load(dir: *const c_char, out: *mut *mut FeBundle) -> FeStatus {
    guard(|| {
        non_null!(out);
        let dir = match path_arg(dir) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let b = try_fe!(DataBundle::load(&dir));
        *out = Box::into_raw(Box::new(FeBundle(b)));
        FeStatus::Ok
    })
}

/// # Safety
/// `bundle` must be a live handle and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fe_bundle_save(bundle: *const FeBundle, dir: *const c_char) -> FeStatus {
    guard(|| {
        non_null!(bundle);
        let dir = match path_arg(dir) {
            Ok(p) => p,
            Err(s) => return s,
        };
        try_fe!((*bundle).0.save(&dir));
        FeStatus::Ok
    })
}

/// Write factor count, output count, training rows and held-out rows. Any
/// output pointer may be null.
///
/// # Safety
/// `bundle` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn fe_bundle_shape(
    bundle: *const FeBundle,
    n_inputs: *mut usize,
    n_outputs: *mut usize,
    n_train: *mut usize,
    n_eval: *mut usize,
) -> FeStatus {
    guard(|| {
        non_null!(bundle);
        let b = &(*bundle).0;
        for (p, v) in [
            (n_inputs, b.spec.n_inputs),
            (n_outputs, b.spec.n_outputs),
            (n_train, b.train.len()),
            (n_eval, b.eval.len()),
        ] {
            if !p.is_null() {
                *p = v;
            }
        }
        FeStatus::Ok
    })
}

/// # Safety
/// `bundle` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fe_bundle_free(bundle: *mut FeBundle) {
    if !bundle.is_null() {
        drop(Box::from_raw(bundle));
    }
}

/// Build an untrained model sized for `bundle`. A `beta` of zero or less
/// selects the kind's default.
///
/// # Safety
/// `bundle` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fe_trainer_new(
    bundle: *const FeBundle,
    kind: FeModelKind,
    n_latents: usize,
    beta: f64,
    seed: u64,
    lr: f64,
    out: *mut *mut FeTrainer,
) -> FeStatus {
    guard(|| {
        non_null!(bundle, out);
        let settings = TrainSettings {
            model: model_kind(kind),
            latents: n_latents,
            beta: (beta > 0.0).then_some(beta),
            seed,
            lr,
            ..TrainSettings::default()
        };
        let cfg = settings.model_config(&(*bundle).0.spec);
        try_fe!(cfg.validate());
        let t = try_fe!(Trainer::new(cfg, seed, lr));
        *out = Box::into_raw(Box::new(FeTrainer(t)));
        FeStatus::Ok
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fe_trainer_load(path: *const c_char, out: *mut *mut FeTrainer) -> FeStatus {
    guard(|| {
        non_null!(out);
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let t = try_fe!(Trainer::load(&path));
        *out = Box::into_raw(Box::new(FeTrainer(t)));
        FeStatus::Ok
    })
}

/// # Safety
/// `trainer` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fe_trainer_save(trainer: *const FeTrainer, path: *const c_char) -> FeStatus {
    guard(|| {
        non_null!(trainer);
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        try_fe!((*trainer).0.save(&path));
        FeStatus::Ok
    })
}

/// # Safety
/// `trainer` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fe_trainer_free(trainer: *mut FeTrainer) {
    if !trainer.is_null() {
        drop(Box::from_raw(trainer));
    }
}

/// Take `iterations` more optimizer steps on minibatches of the bundle's training rows.
///
/// # Safety
/// Both handles must be live.
#[no_mangle]
pub unsafe extern "C" fn fe_trainer_train(
    trainer: *mut FeTrainer,
    bundle: *const FeBundle,
    iterations: u64,
    batch_size: usize,
) -> FeStatus {
    guard(|| {
        non_null!(trainer, bundle);
        let t = &mut (*trainer).0;
        let b = &(*bundle).0;
        let cfg = TrainConfig {
            iterations: t.iteration() + iterations,
            batch_size,
            lr: t.adam.lr,
            dataset_size: b.train.len(),
            seed: t.seed(),
            eval_every: iterations.max(1),
            checkpoint_path: None,
        };
        try_fe!(t.run(&b.train, &b.eval.x, &cfg));
        FeStatus::Ok
    })
}

/// Number of reconstruction levels the model produces.
///
/// # Safety
/// `trainer` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fe_trainer_levels(trainer: *const FeTrainer) -> usize {
    if trainer.is_null() {
        return 0;
    }
    (*trainer).0.config().levels()
}

/// Optimizer steps taken so far.
///
/// # Safety
/// `trainer` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fe_trainer_iteration(trainer: *const FeTrainer) -> u64 {
    if trainer.is_null() {
        return 0;
    }
    (*trainer).0.iteration()
}

/// Held-out reconstruction error per level into `out[0..cap]`; `len`
/// receives the number of levels.
///
/// # Safety
/// Both handles must be live; `out` must hold `cap` values.
#[no_mangle]
pub unsafe extern "C" fn fe_trainer_recon_errors(
    trainer: *const FeTrainer,
    bundle: *const FeBundle,
    out: *mut f64,
    cap: usize,
    len: *mut usize,
) -> FeStatus {
    guard(|| {
        non_null!(trainer, bundle);
        let re = try_fe!((*trainer).0.model.recon_errors(&(*bundle).0.eval.x));
        write_out(&re, out, cap, len)
    })
}

/// Encode `rows` row-major observations of width `cols`; writes
/// `rows * n_latents` row-major latent means.
///
/// # Safety
/// `trainer` must be live; `x` must hold `rows * cols` values and `out` `cap`.
#[no_mangle]
pub unsafe extern "C" fn fe_trainer_encode(
    trainer: *const FeTrainer,
    x: *const f64,
    rows: usize,
    cols: usize,
    out: *mut f64,
    cap: usize,
    len: *mut usize,
) -> FeStatus {
    guard(|| {
        non_null!(trainer, x);
        let Some(total) = rows.checked_mul(cols) else {
            return fail(FeStatus::Invalid, "rows * cols overflows");
        };
        let data = std::slice::from_raw_parts(x, total).to_vec();
        let x = try_fe!(Tensor::new(rows, cols, data));
        let z = try_fe!((*trainer).0.model.latents(&x));
        write_out(z.data(), out, cap, len)
    })
}

/// Mean absolute Spearman match between the latents of two models on the
/// bundle's held-out rows.
///
/// # Safety
/// All handles must be live and `mean` writable.
#[no_mangle]
pub unsafe extern "C" fn fe_stability(
    a: *const FeTrainer,
    b: *const FeTrainer,
    bundle: *const FeBundle,
    mean: *mut f64,
) -> FeStatus {
    guard(|| {
        non_null!(a, b, bundle, mean);
        let x = &(*bundle).0.eval.x;
        let za = try_fe!((*a).0.model.latents(x));
        let zb = try_fe!((*b).0.model.latents(x));
        *mean = try_fe!(stability_score(&za, &zb)).mean;
        FeStatus::Ok
    })
}
