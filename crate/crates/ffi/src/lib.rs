//! C ABI over `mimo_detect`: opaque handles for constellations, prepared
//! detectors and learned-model parameters, integer status codes, and a
//! thread-local message for the most recent failure.
//!
//! Complex arrays cross the boundary as interleaved `re, im` doubles;
//! matrices are row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mimo_detect::detectors::{Detect, DetectorKind};
use mimo_detect::models::{load_params, save_params, BoundModel, ModelParams};
use mimo_detect::{CMat, Constellation, Error, C64};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MimoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Singular = 3,
    Divergence = 4,
    Capacity = 5,
    Numerical = 6,
    Format = 7,
    Range = 8,
    Degenerate = 9,
    Io = 10,
    Panic = 11,
}

pub struct MimoConstellation(Constellation);

pub struct MimoDetector {
    inner: Box<dyn Detect>,
    n_r: usize,
    n_t: usize,
}

pub struct MimoModel(ModelParams);

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_error(msg: &str) {
    LAST_ERROR.with(|e| {
        let mut e = e.borrow_mut();
        e.clear();
        e.extend_from_slice(msg.as_bytes());
    });
}

fn status_of(e: &Error) -> MimoStatus {
    match e {
        Error::Contract(_) => MimoStatus::InvalidArgument,
        Error::Singular { .. } => MimoStatus::Singular,
        Error::Divergence { .. } => MimoStatus::Divergence,
        Error::Capacity { .. } => MimoStatus::Capacity,
        Error::Numerical { .. } => MimoStatus::Numerical,
        Error::Format { .. } => MimoStatus::Format,
        Error::Range(_) => MimoStatus::Range,
        Error::Degenerate(_) => MimoStatus::Degenerate,
        Error::Io(_) => MimoStatus::Io,
    }
}

enum Fail {
    Null(&'static str),
    Arg(String),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MimoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            MimoStatus::Ok
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(&format!("null pointer: {what}"));
            MimoStatus::NullPointer
        }
        Ok(Err(Fail::Arg(m))) => {
            set_error(&m);
            MimoStatus::InvalidArgument
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            MimoStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Arg(format!("{what} is not UTF-8")))
}

unsafe fn complex_slice(p: *const f64, n: usize, what: &'static str) -> Result<Vec<C64>, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    let s = std::slice::from_raw_parts(p, 2 * n);
    Ok(s.chunks_exact(2).map(|c| C64::new(c[0], c[1])).collect())
}

unsafe fn matrix_arg(h: *const f64, n_r: usize, n_t: usize) -> Result<CMat, Fail> {
    if n_r == 0 || n_t == 0 {
        return Err(Fail::Arg("matrix dimensions must be positive".into()));
    }
    Ok(CMat::from_vec(n_r, n_t, complex_slice(h, n_r * n_t, "h")?)?)
}

unsafe fn put<T>(out: *mut *mut T, v: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null("out"));
    }
    *out = Box::into_raw(Box::new(v));
    Ok(())
}

/// Copies the last failure message of this thread (NUL-terminated,
/// truncated to `len`) and returns its full length in bytes.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn mimo_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = e.len().min(len - 1);
            ptr::copy_nonoverlapping(e.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        e.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mimo_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Square QAM of order 4, 16 or 64 with unit average energy.
///
/// # Safety
/// `out` must be a valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn mimo_constellation_new(order: u32, out: *mut *mut MimoConstellation) -> MimoStatus {
    guard(|| put(out, MimoConstellation(Constellation::new(order as usize)?)))
}

/// # Safety
/// `c` must be null or a handle from `mimo_constellation_new`, freed once.
#[no_mangle]
pub unsafe extern "C" fn mimo_constellation_free(c: *mut MimoConstellation) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Writes the complex point of symbol `index` to `out[0..2]`.
///
/// # Safety
/// `c` must be a live handle and `out` must hold two doubles.
#[no_mangle]
pub unsafe extern "C" fn mimo_constellation_point(c: *const MimoConstellation, index: u32, out: *mut f64) -> MimoStatus {
    guard(|| {
        let c = c.as_ref().ok_or(Fail::Null("constellation"))?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        if index as usize >= c.0.order() {
            return Err(Fail::Arg(format!("symbol index {index} out of range")));
        }
        let p = c.0.point(index as usize);
        *out = p.re;
        *out.add(1) = p.im;
        Ok(())
    })
}

/// Noise variance for `snr_db` on the given channel.
///
/// # Safety
/// `h` must hold `2 * n_r * n_t` doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mimo_sigma2_from_snr(h: *const f64, n_r: usize, n_t: usize, snr_db: f64, out: *mut f64) -> MimoStatus {
    guard(|| {
        let h = matrix_arg(h, n_r, n_t)?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        *out = mimo_detect::channel::sigma2_from_snr(&h, snr_db);
        Ok(())
    })
}

/// Prepares a classical detector (`"zf"`, `"mf"`, `"mmse"`, `"vblast"`,
/// `"amp"`, `"oamp"`, `"ml"`) for channel `h`.
///
/// # Safety
/// `name` must be a NUL-terminated string, `h` must hold `2 * n_r * n_t`
/// doubles, and `c` must be a live constellation handle.
#[no_mangle]
pub unsafe extern "C" fn mimo_detector_new(
    name: *const c_char,
    h: *const f64,
    n_r: usize,
    n_t: usize,
    sigma2: f64,
    c: *const MimoConstellation,
    out: *mut *mut MimoDetector,
) -> MimoStatus {
    guard(|| {
        let kind: DetectorKind = str_arg(name, "name")?.parse()?;
        let c = c.as_ref().ok_or(Fail::Null("constellation"))?;
        let h = matrix_arg(h, n_r, n_t)?;
        let inner = kind.prepare_classical(&h, sigma2, &c.0)?;
        put(out, MimoDetector { inner, n_r, n_t })
    })
}

/// Binds trained parameters to channel `h`.
///
/// # Safety
/// As for `mimo_detector_new`; `model` must be a live model handle.
#[no_mangle]
pub unsafe extern "C" fn mimo_detector_new_learned(
    model: *const MimoModel,
    h: *const f64,
    n_r: usize,
    n_t: usize,
    sigma2: f64,
    c: *const MimoConstellation,
    out: *mut *mut MimoDetector,
) -> MimoStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Fail::Null("model"))?;
        let c = c.as_ref().ok_or(Fail::Null("constellation"))?;
        let h = matrix_arg(h, n_r, n_t)?;
        let inner: Box<dyn Detect> = Box::new(BoundModel::new(&m.0, &h, sigma2, &c.0)?);
        put(out, MimoDetector { inner, n_r, n_t })
    })
}

/// Detects one received vector. `y` holds `2 * n_r` doubles, `symbols`
/// receives `n_t` indices and `soft` (optional) `2 * n_t` doubles.
///
/// # Safety
/// Pointers must be valid for the sizes above; `soft` may be null.
#[no_mangle]
pub unsafe extern "C" fn mimo_detector_detect(
    det: *const MimoDetector,
    y: *const f64,
    symbols: *mut u32,
    soft: *mut f64,
) -> MimoStatus {
    guard(|| {
        let d = det.as_ref().ok_or(Fail::Null("detector"))?;
        let y = complex_slice(y, d.n_r, "y")?;
        if symbols.is_null() {
            return Err(Fail::Null("symbols"));
        }
        let r = d.inner.detect(&y)?;
        for (k, s) in r.symbols.0.iter().enumerate().take(d.n_t) {
            *symbols.add(k) = *s as u32;
        }
        if !soft.is_null() {
            for (k, v) in r.soft.iter().enumerate().take(d.n_t) {
                *soft.add(2 * k) = v.re;
                *soft.add(2 * k + 1) = v.im;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `det` must be null or a detector handle, freed once.
#[no_mangle]
pub unsafe extern "C" fn mimo_detector_free(det: *mut MimoDetector) {
    if !det.is_null() {
        drop(Box::from_raw(det));
    }
}

/// Loads MPARM1 parameters.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mimo_model_load(path: *const c_char, out: *mut *mut MimoModel) -> MimoStatus {
    guard(|| put(out, MimoModel(load_params(str_arg(path, "path")?)?)))
}

/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mimo_model_save(model: *const MimoModel, path: *const c_char) -> MimoStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Fail::Null("model"))?;
        Ok(save_params(&m.0, str_arg(path, "path")?)?)
    })
}

/// Number of unrolled layers, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mimo_model_layers(model: *const MimoModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.layers())
}

/// # Safety
/// `model` must be null or a model handle, freed once.
#[no_mangle]
pub unsafe extern "C" fn mimo_model_free(model: *mut MimoModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
