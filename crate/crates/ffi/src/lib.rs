//! C ABI over the `hiernet` library.
//!
//! Objects are opaque heap handles returned through `out` pointers and
//! released with the matching `hn_*_free`. Every fallible call returns an
//! [`HnStatus`]; on failure `hn_last_error()` describes it. Panics never cross
//! the boundary (they map to `HN_PANIC`). Pointer arguments must be null or
//! valid for the stated length; strings are NUL-terminated UTF-8.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use hiernet::config::ExperimentConfig;
use hiernet::hermite::{Activation, ActivationSpec};
use hiernet::hierarchy::{sample_dataset, Dataset};
use hiernet::kernel::{kernel_analytic, KernelQuery};
use hiernet::resnet::{forward, init_network, Checkpoint, ResNetParams};
use hiernet::train::{train_all, TrainTrace};
use hiernet::Error;

#[repr(C)]
#[allow(non_camel_case_types)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HnStatus {
    HN_OK = 0,
    HN_NULL_POINTER = 1,
    HN_INVALID_ARGUMENT = 2,
    HN_CONFIG = 3,
    HN_IO = 4,
    HN_VERSION_MISMATCH = 5,
    HN_CORRUPT = 6,
    HN_NUMERICAL = 7,
    HN_BUFFER_TOO_SMALL = 8,
    HN_PANIC = 9,
}

pub struct HnConfig(ExperimentConfig);
pub struct HnDataset(Dataset);
pub struct HnModel(ResNetParams);
pub struct HnTrace(TrainTrace);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> HnStatus {
    match e {
        Error::Config(_) => HnStatus::HN_CONFIG,
        Error::Io { .. } => HnStatus::HN_IO,
        Error::VersionMismatch { .. } => HnStatus::HN_VERSION_MISMATCH,
        Error::Corrupt { .. } | Error::Json(_) | Error::Csv(_) => HnStatus::HN_CORRUPT,
        Error::Numerical(_) | Error::IllConditioned(_) | Error::QuadratureCheck { .. } | Error::Infeasible(_) => {
            HnStatus::HN_NUMERICAL
        }
        _ => HnStatus::HN_INVALID_ARGUMENT,
    }
}

struct Fail(HnStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(HnStatus::HN_NULL_POINTER, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> HnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            HnStatus::HN_OK
        }
        Ok(Err(Fail(s, m))) => {
            set_error(m);
            s
        }
        Err(p) => {
            let m = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {m}"));
            HnStatus::HN_PANIC
        }
    }
}

unsafe fn cstr<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(HnStatus::HN_INVALID_ARGUMENT, format!("{what} is not UTF-8")))
}

unsafe fn get<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, v: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(v));
    Ok(())
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Message for the last failed call on this thread (empty after success).
/// Valid until the next `hn_*` call on the same thread.
#[no_mangle]
pub extern "C" fn hn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses a JSON config and resolves `"auto"` beta.
///
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hn_config_from_json(json: *const c_char, out: *mut *mut HnConfig) -> HnStatus {
    guard(|| {
        let c = ExperimentConfig::from_json(cstr(json, "json")?)?.resolve()?;
        put(out, HnConfig(c))
    })
}

/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hn_config_load(path: *const c_char, out: *mut *mut HnConfig) -> HnStatus {
    guard(|| {
        let c = ExperimentConfig::load(&PathBuf::from(cstr(path, "path")?))?.resolve()?;
        put(out, HnConfig(c))
    })
}

/// `cfg` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hn_config_set_seed(cfg: *mut HnConfig, seed: u64) -> HnStatus {
    guard(|| {
        cfg.as_mut().ok_or_else(|| null("cfg"))?.0.seed = seed;
        Ok(())
    })
}

/// `cfg` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hn_config_free(cfg: *mut HnConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Builds the configured target and samples `m` examples from it.
///
/// `cfg` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hn_dataset_generate(cfg: *const HnConfig, out: *mut *mut HnDataset) -> HnStatus {
    guard(|| {
        let c = &get(cfg, "cfg")?.0;
        let target = c.build_target()?;
        put(out, HnDataset(sample_dataset(&target, c.generator.m, c.seed)?))
    })
}

/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hn_dataset_load(path: *const c_char, out: *mut *mut HnDataset) -> HnStatus {
    guard(|| put(out, HnDataset(Dataset::load(&PathBuf::from(cstr(path, "path")?))?)))
}

/// `ds` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hn_dataset_save(ds: *const HnDataset, path: *const c_char) -> HnStatus {
    guard(|| Ok(get(ds, "dataset")?.0.save(&PathBuf::from(cstr(path, "path")?))?))
}

/// Number of samples, or 0 for a null handle.
///
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hn_dataset_len(ds: *const HnDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.m())
}

/// `ds` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hn_dataset_free(ds: *mut HnDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Initializes an untrained network shaped for `ds`.
///
/// `cfg` and `ds` must be live handles and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hn_model_init(cfg: *const HnConfig, ds: *const HnDataset, out: *mut *mut HnModel) -> HnStatus {
    guard(|| {
        let c = &get(cfg, "cfg")?.0;
        let meta = &get(ds, "dataset")?.0.meta;
        let p = init_network(
            meta.d,
            meta.n,
            c.network.q_width,
            c.network.depth,
            &c.proximity()?,
            c.beta()?,
            c.network.orthogonal_mode,
            c.activation_spec()?,
            c.seed,
        )?;
        put(out, HnModel(p))
    })
}

/// Trains every layer of `model` in place; the trace goes to `out_trace`.
///
/// All handles must be live and `out_trace` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hn_model_train(
    model: *mut HnModel,
    cfg: *const HnConfig,
    ds: *const HnDataset,
    out_trace: *mut *mut HnTrace,
) -> HnStatus {
    guard(|| {
        let c = &get(cfg, "cfg")?.0;
        let d = &get(ds, "dataset")?.0;
        let m = &mut model.as_mut().ok_or_else(|| null("model"))?.0;
        let lp = c.loss_params(d.meta.g)?;
        let trace = train_all(m, d, &lp, &c.train_config())?;
        put(out_trace, HnTrace(trace))
    })
}

/// Output width `|G| * n` of [`hn_model_forward`].
///
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hn_model_output_len(model: *const HnModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.num_locations() * m.0.n)
}

/// Network output after all layers. `x` holds `|G| * d` inputs row-major by
/// location; `out` receives `|G| * n` values.
///
/// `x` must point to `x_len` doubles and `out` to `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn hn_model_forward(
    model: *const HnModel,
    x: *const f64,
    x_len: usize,
    out: *mut f64,
    out_len: usize,
) -> HnStatus {
    guard(|| {
        let p = &get(model, "model")?.0;
        let g = p.num_locations();
        if x_len != g * p.d {
            return Err(Fail(
                HnStatus::HN_INVALID_ARGUMENT,
                format!("x_len {x_len} != |G| d = {}", g * p.d),
            ));
        }
        if out_len < g * p.n {
            return Err(Fail(HnStatus::HN_BUFFER_TOO_SMALL, format!("out_len {out_len} < {}", g * p.n)));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let xs = slice(x, x_len, "x")?;
        let field: Vec<Vec<f64>> = xs.chunks(p.d).map(<[f64]>::to_vec).collect();
        let (_, f) = forward(p, &field, p.depth - 1)?;
        let dst = std::slice::from_raw_parts_mut(out, out_len);
        for (d, v) in dst.iter_mut().zip(f.iter().flatten()) {
            *d = *v;
        }
        Ok(())
    })
}

/// Writes a checkpoint (orthogonality is re-checked on load).
///
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hn_model_save(model: *const HnModel, path: *const c_char) -> HnStatus {
    guard(|| {
        let p = get(model, "model")?.0.clone();
        Ok(Checkpoint::new(p).save(&PathBuf::from(cstr(path, "path")?))?)
    })
}

/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hn_model_load(path: *const c_char, out: *mut *mut HnModel) -> HnStatus {
    guard(|| put(out, HnModel(Checkpoint::load(&PathBuf::from(cstr(path, "path")?))?.params)))
}

/// `model` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hn_model_free(model: *mut HnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Sample error at margin 0 after the last layer.
///
/// `trace` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hn_trace_final_error(trace: *const HnTrace, out: *mut f64) -> HnStatus {
    guard(|| {
        let t = &get(trace, "trace")?.0;
        let last = t
            .layers
            .last()
            .ok_or_else(|| Fail(HnStatus::HN_INVALID_ARGUMENT, "trace has no layers".into()))?;
        *out.as_mut().ok_or_else(|| null("out"))? = last.err_0;
        Ok(())
    })
}

/// `trace` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hn_trace_save_csv(trace: *const HnTrace, path: *const c_char) -> HnStatus {
    guard(|| Ok(get(trace, "trace")?.0.save_csv(&PathBuf::from(cstr(path, "path")?))?))
}

/// `trace` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hn_trace_free(trace: *mut HnTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// Closed-form random-features kernel `k(x, y)` for `activation` ("tanh",
/// "relu", ...) and junta size `k`; `tail` receives its truncation bound.
///
/// `x` and `y` must point to `n` doubles each; `value` and `tail` must be valid.
#[no_mangle]
pub unsafe extern "C" fn hn_kernel(
    activation: *const c_char,
    k: usize,
    x: *const f64,
    y: *const f64,
    n: usize,
    beta: f64,
    value: *mut f64,
    tail: *mut f64,
) -> HnStatus {
    guard(|| {
        let act = Activation::from_name(cstr(activation, "activation")?)?;
        let spec = ActivationSpec::new(act, k)?;
        let q = KernelQuery::new(slice(x, n, "x")?.to_vec(), slice(y, n, "y")?.to_vec(), beta, spec.s_max())?;
        let v = kernel_analytic(&q, &spec)?;
        let (vo, to) = (value.as_mut(), tail.as_mut());
        *vo.ok_or_else(|| null("value"))? = v.value;
        *to.ok_or_else(|| null("tail"))? = v.tail;
        Ok(())
    })
}
