//! C ABI for `lipbarrier`.
//!
//! Models are opaque [`LbModel`] handles. Every fallible function returns an
//! [`LbStatus`]; on failure [`lb_last_error`] describes what went wrong on the calling
//! thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use lipbarrier::certify::{estimate_lipschitz_with, norm_product_bound, CertMode};
use lipbarrier::lipschitz::{barrier_loss_and_grads, is_feasible, LipschitzTarget, Multipliers};
use lipbarrier::nn::{forward, Activation, MlpParams};
use lipbarrier::trainer::{load_model, save_model, ModelMeta};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    /// The certificate matrix is not positive definite.
    Infeasible = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LbCertMode {
    FullDiag = 0,
    ScalarLambda = 1,
    Split = 2,
}

impl From<LbCertMode> for CertMode {
    fn from(m: LbCertMode) -> Self {
        match m {
            LbCertMode::FullDiag => CertMode::FullDiag,
            LbCertMode::ScalarLambda => CertMode::ScalarLambda,
            LbCertMode::Split => CertMode::Split,
        }
    }
}

/// A network together with its certificate multipliers.
pub struct LbModel {
    params: MlpParams,
    multipliers: Multipliers,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Fail(LbStatus, String);

fn fail<T>(status: LbStatus, message: impl ToString) -> Result<T, Fail> {
    Err(Fail(status, message.to_string()))
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> LbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            LbStatus::Ok
        }
        Ok(Err(Fail(status, message))) => {
            set_last_error(&message);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            LbStatus::Panic
        }
    }
}

unsafe fn model_ref<'a>(model: *const LbModel) -> Result<&'a LbModel, Fail> {
    model.as_ref().map_or_else(|| fail(LbStatus::NullPointer, "model is null"), Ok)
}

unsafe fn out_ref<'a, T>(out: *mut T) -> Result<&'a mut T, Fail> {
    out.as_mut().map_or_else(|| fail(LbStatus::NullPointer, "output pointer is null"), Ok)
}

unsafe fn slice<'a, T>(data: *const T, len: usize) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if data.is_null() {
        return fail(LbStatus::NullPointer, "buffer is null");
    }
    Ok(std::slice::from_raw_parts(data, len))
}

unsafe fn slice_mut<'a, T>(data: *mut T, len: usize) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if data.is_null() {
        return fail(LbStatus::NullPointer, "buffer is null");
    }
    Ok(std::slice::from_raw_parts_mut(data, len))
}

unsafe fn str_arg<'a>(s: *const c_char) -> Result<&'a str, Fail> {
    if s.is_null() {
        return fail(LbStatus::NullPointer, "string is null");
    }
    CStr::from_ptr(s)
        .to_str()
        .or_else(|_| fail(LbStatus::InvalidArgument, "string is not valid UTF-8"))
}

fn target(l: f64) -> Result<LipschitzTarget, Fail> {
    LipschitzTarget::new(l).or_else(|e| fail(LbStatus::InvalidArgument, e))
}

fn into_handle(model: LbModel, out: &mut *mut LbModel) {
    *out = Box::into_raw(Box::new(model));
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failure on this thread, empty after a success. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn lb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// A network with all parameters zero and unit multipliers.
///
/// `activation` is `tanh`, `relu`, `sigmoid`, `leaky_relu` or `leaky_relu:<slope>`.
///
/// # Safety
/// `dims` must point to `n_dims` values, `activation` must be a NUL-terminated string
/// and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lb_model_new(
    dims: *const usize,
    n_dims: usize,
    activation: *const c_char,
    out: *mut *mut LbModel,
) -> LbStatus {
    guard(|| {
        let out = out_ref(out)?;
        *out = ptr::null_mut();
        let dims = slice(dims, n_dims)?;
        let act: Activation = str_arg(activation)?
            .parse()
            .or_else(|e| fail(LbStatus::InvalidArgument, e))?;
        let params = MlpParams::zeros(dims, act).or_else(|e| fail(LbStatus::InvalidArgument, e))?;
        let multipliers = Multipliers::identity_for(&params);
        into_handle(LbModel { params, multipliers }, out);
        Ok(())
    })
}

/// Loads a JSON model file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lb_model_load(path: *const c_char, out: *mut *mut LbModel) -> LbStatus {
    guard(|| {
        let out = out_ref(out)?;
        *out = ptr::null_mut();
        let path = str_arg(path)?;
        let (params, multipliers, _) = load_model(Path::new(path)).map_err(|e| {
            let status = match e {
                lipbarrier::trainer::ModelIoError::Io { .. } => LbStatus::Io,
                _ => LbStatus::Parse,
            };
            Fail(status, e.to_string())
        })?;
        into_handle(LbModel { params, multipliers }, out);
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn lb_model_save(model: *const LbModel, path: *const c_char) -> LbStatus {
    guard(|| {
        let m = model_ref(model)?;
        let path = str_arg(path)?;
        save_model(Path::new(path), &m.params, &m.multipliers, &ModelMeta::default())
            .or_else(|e| fail(LbStatus::Io, e))
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lb_model_free(model: *mut LbModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Copies the layer widths into `dims`. `n_dims` receives the number of widths; when
/// `cap` is too small nothing is copied and `BufferTooSmall` is returned.
///
/// # Safety
/// `dims` must have room for `cap` values and `n_dims` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lb_model_dims(
    model: *const LbModel,
    dims: *mut usize,
    cap: usize,
    n_dims: *mut usize,
) -> LbStatus {
    guard(|| {
        let m = model_ref(model)?;
        let n = out_ref(n_dims)?;
        *n = m.params.dims.len();
        if cap < *n {
            return fail(LbStatus::BufferTooSmall, format!("need room for {} widths", *n));
        }
        slice_mut(dims, *n)?.copy_from_slice(&m.params.dims);
        Ok(())
    })
}

/// Number of weights and biases.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lb_model_num_params(model: *const LbModel, out: *mut usize) -> LbStatus {
    guard(|| {
        *out_ref(out)? = model_ref(model)?.params.num_params();
        Ok(())
    })
}

/// Copies all parameters into `params`: every weight matrix (row-major, first layer
/// first), then every bias vector.
///
/// # Safety
/// `params` must have room for `len` values.
#[no_mangle]
pub unsafe extern "C" fn lb_model_get_params(
    model: *const LbModel,
    params: *mut f64,
    len: usize,
) -> LbStatus {
    guard(|| {
        let m = model_ref(model)?;
        let flat = m.params.to_flat();
        if len != flat.len() {
            return fail(LbStatus::InvalidArgument, format!("expected {} values", flat.len()));
        }
        slice_mut(params, len)?.copy_from_slice(&flat);
        Ok(())
    })
}

/// Replaces all parameters, in the layout of [`lb_model_get_params`].
///
/// # Safety
/// `params` must point to `len` values.
#[no_mangle]
pub unsafe extern "C" fn lb_model_set_params(
    model: *mut LbModel,
    params: *const f64,
    len: usize,
) -> LbStatus {
    guard(|| {
        let m = model
            .as_mut()
            .map_or_else(|| fail(LbStatus::NullPointer, "model is null"), Ok)?;
        if len != m.params.num_params() {
            return fail(
                LbStatus::InvalidArgument,
                format!("expected {} values", m.params.num_params()),
            );
        }
        let values = slice(params, len)?;
        if values.iter().any(|v| !v.is_finite()) {
            return fail(LbStatus::InvalidArgument, "parameters must be finite");
        }
        m.params.set_from_flat(values);
        Ok(())
    })
}

/// Evaluates the network at `x` (length = input width) into `y` (length = output width).
///
/// # Safety
/// `x` and `y` must point to `n_in` and `n_out` values.
#[no_mangle]
pub unsafe extern "C" fn lb_model_forward(
    model: *const LbModel,
    x: *const f64,
    n_in: usize,
    y: *mut f64,
    n_out: usize,
) -> LbStatus {
    guard(|| {
        let m = model_ref(model)?;
        if n_in != m.params.input_dim() || n_out != m.params.output_dim() {
            return fail(LbStatus::InvalidArgument, "input or output length mismatch");
        }
        let out = forward(&m.params, slice(x, n_in)?).or_else(|e| fail(LbStatus::InvalidArgument, e))?;
        slice_mut(y, n_out)?.copy_from_slice(&out);
        Ok(())
    })
}

/// Whether the stored multipliers certify `lipschitz` with Cholesky pivots above `margin`.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lb_model_is_feasible(
    model: *const LbModel,
    lipschitz: f64,
    margin: f64,
    out: *mut bool,
) -> LbStatus {
    guard(|| {
        let m = model_ref(model)?;
        let t = target(lipschitz)?;
        if !(margin >= 0.0) {
            return fail(LbStatus::InvalidArgument, "margin must be nonnegative");
        }
        *out_ref(out)? = is_feasible(&m.params, &m.multipliers, t, margin);
        Ok(())
    })
}

/// The barrier value `-rho logdet M` for the stored multipliers.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lb_model_barrier(
    model: *const LbModel,
    lipschitz: f64,
    rho: f64,
    out: *mut f64,
) -> LbStatus {
    guard(|| {
        let m = model_ref(model)?;
        let t = target(lipschitz)?;
        let out = out_ref(out)?;
        let eval = barrier_loss_and_grads(&m.params, &m.multipliers, t, rho)
            .or_else(|e| fail(LbStatus::Infeasible, e))?;
        *out = eval.value;
        Ok(())
    })
}

/// Certified upper bound on the Lipschitz constant, searched to relative tolerance `tol`.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lb_model_estimate_lipschitz(
    model: *const LbModel,
    mode: LbCertMode,
    tol: f64,
    out: *mut f64,
) -> LbStatus {
    guard(|| {
        let m = model_ref(model)?;
        if !(tol > 0.0) {
            return fail(LbStatus::InvalidArgument, "tol must be positive");
        }
        let out = out_ref(out)?;
        *out = estimate_lipschitz_with(&m.params, mode.into(), tol, Some(&m.multipliers)).bound;
        Ok(())
    })
}

/// Product of the layer spectral norms times the activation slope bound.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lb_model_norm_product_bound(model: *const LbModel, out: *mut f64) -> LbStatus {
    guard(|| {
        *out_ref(out)? = norm_product_bound(&model_ref(model)?.params);
        Ok(())
    })
}
