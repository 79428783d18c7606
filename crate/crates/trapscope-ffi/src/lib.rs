//! C ABI for the trapscope library.
//!
//! The surface follows the usual handle-and-status convention: heap-allocated
//! analysis objects cross the boundary as opaque pointers, every fallible call
//! returns a [`TsStatus`], and outputs land in caller-provided locations. A
//! failing call stores a human-readable explanation retrievable with
//! [`ts_last_error_message`] on the same thread.
//!
//! Ownership is strictly paired: anything a `ts_*` constructor hands out must
//! be released with the matching `ts_*_free`, and nothing else. Handles are
//! immutable after construction, so sharing a `const` handle across threads is
//! safe; creation and destruction of a given handle must not race.
//!
//! The generated header lives at `include/trapscope.h` and is refreshed by the
//! build script whenever this file changes.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use nalgebra::DMatrix;
use trapscope::error::Error;
use trapscope::estimation::{estimate_mle, TransitionModel};
use trapscope::landscape::{curl_diagnostic, potential, stationary_of_matrix};
use trapscope::metrics::{mfpt, mixing_time, shorrocks, MixingNorm};
use trapscope::panel::{extract_transitions, load_panel, PanelDataset, Schema, TransitionRecord};
use trapscope::shock::{recovery_time, ShockOptions};
use trapscope::state_space::{fit_equidistant, fit_ordinal, StateSpace};

/// Result of a `ts_*` call. Anything but [`TsStatus::Ok`] leaves a
/// description in [`ts_last_error_message`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TsStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// An argument outside its documented domain (zero sizes, bad lengths,
    /// malformed probabilities, unknown dimensions).
    InvalidArgument = 2,
    /// Input data that could not be read or parsed.
    Parse = 3,
    /// An operating-system level failure while reading input.
    Io = 4,
    /// A numerical routine could not reach its advertised accuracy.
    Numerical = 5,
    /// An internal invariant failed; the library caught a panic at the
    /// boundary instead of unwinding into foreign frames.
    Internal = 6,
}

/// An estimated or directly constructed transition model. Opaque.
pub struct TsModel {
    inner: TransitionModel,
}

/// A loaded longitudinal panel. Opaque.
pub struct TsPanel {
    inner: PanelDataset,
}

/// One observed transition between consecutive waves, the raw material of
/// [`ts_model_estimate`]. `household` groups records into trajectories and
/// `from_wave` orders them; both only matter for `order > 1`, where runs are
/// reassembled before counting.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct TsTransition {
    pub household: u64,
    pub from_state: u64,
    pub to_state: u64,
    pub weight: f64,
    pub from_wave: i32,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: String) {
    // Interior NULs cannot come from our own error displays, but the message
    // may embed caller-provided paths; drop anything after a NUL rather than
    // failing inside the error path itself.
    let sanitized = CString::new(message.clone())
        .unwrap_or_else(|_| CString::new(message.split('\0').next().unwrap_or("").to_owned())
            .expect("prefix before first NUL has no NUL"));
    LAST_ERROR.with(|slot| *slot.borrow_mut() = sanitized);
}

fn fail(status: TsStatus, message: impl Into<String>) -> TsStatus {
    set_error(message.into());
    status
}

fn status_of(err: &Error) -> TsStatus {
    match err {
        Error::Io(_) => TsStatus::Io,
        Error::Csv(_) | Error::Json(_) | Error::Schema(_) => TsStatus::Parse,
        Error::Resolution(_) | Error::Param(_) | Error::Domain(_) => TsStatus::InvalidArgument,
        Error::Numerical(_) => TsStatus::Numerical,
        Error::Stage { source, .. } => status_of(source),
    }
}

fn fail_with(err: Error) -> TsStatus {
    let status = status_of(&err);
    set_error(err.to_string());
    status
}

/// Run `body` with panics converted to [`TsStatus::Internal`]; unwinding must
/// never cross the C boundary.
fn guard(body: impl FnOnce() -> TsStatus) -> TsStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let detail = payload
                .downcast_ref::<&str>()
                .map(|s| (*s).to_owned())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic payload".to_owned());
            fail(TsStatus::Internal, format!("internal panic: {detail}"))
        }
    }
}

fn null_arg(name: &str) -> TsStatus {
    fail(TsStatus::NullPointer, format!("{name} must not be null"))
}

/// The kernel metrics operate on: the row-stochastic matrix over expanded
/// states, which for first-order models is the estimate itself.
fn analysis_kernel(model: &TransitionModel) -> Result<DMatrix<f64>, Error> {
    if model.order() == 1 {
        Ok(model.p().clone())
    } else {
        model.augmented()
    }
}

fn write_out<T>(out: *mut T, value: T) {
    // Caller null-checked `out` already.
    unsafe { *out = value };
}

/// Library version as a static NUL-terminated string; never freed.
#[no_mangle]
pub extern "C" fn ts_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Explanation of the most recent failing call on this thread, as a
/// NUL-terminated string. Empty until the first failure. The pointer stays
/// valid until the next failing `ts_*` call on the same thread; copy it out
/// before calling back in. Never freed by the caller.
#[no_mangle]
pub extern "C" fn ts_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Static name of a status code, e.g. `"ok"` or `"invalid argument"`.
/// Unknown values map to `"unknown"`. Never freed.
#[no_mangle]
pub extern "C" fn ts_status_name(status: TsStatus) -> *const c_char {
    let name: &'static str = match status {
        TsStatus::Ok => "ok\0",
        TsStatus::NullPointer => "null pointer\0",
        TsStatus::InvalidArgument => "invalid argument\0",
        TsStatus::Parse => "parse\0",
        TsStatus::Io => "i/o\0",
        TsStatus::Numerical => "numerical\0",
        TsStatus::Internal => "internal\0",
    };
    name.as_ptr() as *const c_char
}

/// Build a first-order model from a dense row-major `n x n` kernel. Rows must
/// be finite, nonnegative, and sum to 1 within the library's tolerance.
///
/// # Safety
/// `p` must point to `n * n` readable doubles and `out` to a writable model
/// pointer. On success `*out` owns a new model; release it with
/// [`ts_model_free`].
#[no_mangle]
pub unsafe extern "C" fn ts_model_from_dense(
    p: *const f64,
    n: usize,
    out: *mut *mut TsModel,
) -> TsStatus {
    guard(|| {
        if p.is_null() {
            return null_arg("p");
        }
        if out.is_null() {
            return null_arg("out");
        }
        if n == 0 {
            return fail(TsStatus::InvalidArgument, "kernel size must be at least 1");
        }
        let Some(len) = n.checked_mul(n) else {
            return fail(TsStatus::InvalidArgument, format!("kernel size {n} overflows"));
        };
        let values = unsafe { slice::from_raw_parts(p, len) };
        let matrix = DMatrix::from_row_slice(n, n, values);
        match TransitionModel::from_matrix(matrix) {
            Ok(inner) => {
                write_out(out, Box::into_raw(Box::new(TsModel { inner })));
                TsStatus::Ok
            }
            Err(err) => fail_with(err),
        }
    })
}

/// Estimate a model of the given `order` from raw transition records over
/// `n_states` flat states. Weights must be positive and finite; states must
/// be below `n_states`.
///
/// # Safety
/// `records` must point to `len` readable [`TsTransition`] values and `out`
/// to a writable model pointer. On success `*out` owns a new model; release
/// it with [`ts_model_free`].
#[no_mangle]
pub unsafe extern "C" fn ts_model_estimate(
    records: *const TsTransition,
    len: usize,
    n_states: usize,
    order: usize,
    out: *mut *mut TsModel,
) -> TsStatus {
    guard(|| {
        if records.is_null() {
            return null_arg("records");
        }
        if out.is_null() {
            return null_arg("out");
        }
        let raw = unsafe { slice::from_raw_parts(records, len) };
        let mut converted = Vec::with_capacity(raw.len());
        for (i, r) in raw.iter().enumerate() {
            let (Ok(household), Ok(from_state), Ok(to_state)) = (
                usize::try_from(r.household),
                usize::try_from(r.from_state),
                usize::try_from(r.to_state),
            ) else {
                return fail(
                    TsStatus::InvalidArgument,
                    format!("record {i} does not fit the platform's address width"),
                );
            };
            converted.push(TransitionRecord {
                household,
                from_wave: r.from_wave,
                from_state,
                to_state,
                weight: r.weight,
            });
        }
        match trapscope::estimation::estimate_mle_n(&converted, n_states, order) {
            Ok(inner) => {
                write_out(out, Box::into_raw(Box::new(TsModel { inner })));
                TsStatus::Ok
            }
            Err(err) => fail_with(err),
        }
    })
}

/// Produce a regularized copy of `model` with every transition given at least
/// pseudo-weight `eta`, guaranteeing irreducibility. The input is untouched.
///
/// # Safety
/// `model` must be a live handle from this library and `out` a writable model
/// pointer. On success `*out` owns a new model; release it with
/// [`ts_model_free`].
#[no_mangle]
pub unsafe extern "C" fn ts_model_regularized(
    model: *const TsModel,
    eta: f64,
    out: *mut *mut TsModel,
) -> TsStatus {
    guard(|| {
        let Some(handle) = (unsafe { model.as_ref() }) else {
            return null_arg("model");
        };
        if out.is_null() {
            return null_arg("out");
        }
        match handle.inner.regularize_irreducible(eta) {
            Ok(inner) => {
                write_out(out, Box::into_raw(Box::new(TsModel { inner })));
                TsStatus::Ok
            }
            Err(err) => fail_with(err),
        }
    })
}

/// Release a model created by this library. Null is a no-op. Passing the same
/// handle twice, or a pointer from anywhere else, is undefined behavior.
///
/// # Safety
/// `model` must be null or a pointer previously returned through a `ts_model_*`
/// out-parameter and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ts_model_free(model: *mut TsModel) {
    if model.is_null() {
        return;
    }
    drop(unsafe { Box::from_raw(model) });
}

/// Number of base states (the state-space size, independent of order).
///
/// # Safety
/// `model` must be a live handle and `out` a writable location.
#[no_mangle]
pub unsafe extern "C" fn ts_model_n_states(model: *const TsModel, out: *mut usize) -> TsStatus {
    guard(|| {
        let Some(handle) = (unsafe { model.as_ref() }) else {
            return null_arg("model");
        };
        if out.is_null() {
            return null_arg("out");
        }
        write_out(out, handle.inner.base_n());
        TsStatus::Ok
    })
}

/// Markov order of the model.
///
/// # Safety
/// `model` must be a live handle and `out` a writable location.
#[no_mangle]
pub unsafe extern "C" fn ts_model_order(model: *const TsModel, out: *mut usize) -> TsStatus {
    guard(|| {
        let Some(handle) = (unsafe { model.as_ref() }) else {
            return null_arg("model");
        };
        if out.is_null() {
            return null_arg("out");
        }
        write_out(out, handle.inner.order());
        TsStatus::Ok
    })
}

/// Shape of the stored probability matrix: `rows x cols` where `rows` is the
/// number of histories (`n_states ^ order`) and `cols` is `n_states`.
///
/// # Safety
/// `model` must be a live handle; `rows` and `cols` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ts_model_shape(
    model: *const TsModel,
    rows: *mut usize,
    cols: *mut usize,
) -> TsStatus {
    guard(|| {
        let Some(handle) = (unsafe { model.as_ref() }) else {
            return null_arg("model");
        };
        if rows.is_null() {
            return null_arg("rows");
        }
        if cols.is_null() {
            return null_arg("cols");
        }
        write_out(rows, handle.inner.n_rows());
        write_out(cols, handle.inner.base_n());
        TsStatus::Ok
    })
}

/// Copy the probability matrix into `out` in row-major order. `len` must
/// equal `rows * cols` as reported by [`ts_model_shape`].
///
/// # Safety
/// `model` must be a live handle and `out` must point to `len` writable
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn ts_model_copy(
    model: *const TsModel,
    out: *mut f64,
    len: usize,
) -> TsStatus {
    guard(|| {
        let Some(handle) = (unsafe { model.as_ref() }) else {
            return null_arg("model");
        };
        if out.is_null() {
            return null_arg("out");
        }
        let p = handle.inner.p();
        let expected = p.nrows() * p.ncols();
        if len != expected {
            return fail(
                TsStatus::InvalidArgument,
                format!("output length {len} does not match matrix size {expected}"),
            );
        }
        let dest = unsafe { slice::from_raw_parts_mut(out, len) };
        for (i, row) in p.row_iter().enumerate() {
            for (j, value) in row.iter().enumerate() {
                dest[i * p.ncols() + j] = *value;
            }
        }
        TsStatus::Ok
    })
}

/// Stationary distribution over expanded states, written to `out`. `len` must
/// equal the row count from [`ts_model_shape`]. Fails on reducible chains;
/// regularize first if irreducibility is not guaranteed.
///
/// # Safety
/// `model` must be a live handle and `out` must point to `len` writable
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn ts_stationary(
    model: *const TsModel,
    out: *mut f64,
    len: usize,
) -> TsStatus {
    guard(|| {
        let Some(handle) = (unsafe { model.as_ref() }) else {
            return null_arg("model");
        };
        if out.is_null() {
            return null_arg("out");
        }
        if len != handle.inner.n_rows() {
            return fail(
                TsStatus::InvalidArgument,
                format!(
                    "output length {len} does not match state count {}",
                    handle.inner.n_rows()
                ),
            );
        }
        let kernel = match analysis_kernel(&handle.inner) {
            Ok(k) => k,
            Err(err) => return fail_with(err),
        };
        match stationary_of_matrix(&kernel) {
            Ok(pi) => {
                let dest = unsafe { slice::from_raw_parts_mut(out, len) };
                dest.copy_from_slice(pi.as_slice());
                TsStatus::Ok
            }
            Err(err) => fail_with(err),
        }
    })
}

/// Potential landscape `-ln(pi)` over expanded states; states with zero
/// stationary mass map to infinity. `len` as in [`ts_stationary`].
///
/// # Safety
/// `model` must be a live handle and `out` must point to `len` writable
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn ts_potential(
    model: *const TsModel,
    out: *mut f64,
    len: usize,
) -> TsStatus {
    guard(|| {
        let Some(handle) = (unsafe { model.as_ref() }) else {
            return null_arg("model");
        };
        if out.is_null() {
            return null_arg("out");
        }
        if len != handle.inner.n_rows() {
            return fail(
                TsStatus::InvalidArgument,
                format!(
                    "output length {len} does not match state count {}",
                    handle.inner.n_rows()
                ),
            );
        }
        let kernel = match analysis_kernel(&handle.inner) {
            Ok(k) => k,
            Err(err) => return fail_with(err),
        };
        match stationary_of_matrix(&kernel) {
            Ok(pi) => {
                let phi = potential(&pi);
                let dest = unsafe { slice::from_raw_parts_mut(out, len) };
                dest.copy_from_slice(&phi);
                TsStatus::Ok
            }
            Err(err) => fail_with(err),
        }
    })
}

/// Total-variation mixing time: the first step at which every row of the
/// iterated kernel is within `epsilon` of the stationary distribution.
/// Writes the step count, or `UINT64_MAX` if the chain has not mixed within
/// `cap` steps.
///
/// # Safety
/// `model` must be a live handle and `out_steps` a writable location.
#[no_mangle]
pub unsafe extern "C" fn ts_mixing_time(
    model: *const TsModel,
    epsilon: f64,
    cap: u64,
    out_steps: *mut u64,
) -> TsStatus {
    guard(|| {
        let Some(handle) = (unsafe { model.as_ref() }) else {
            return null_arg("model");
        };
        if out_steps.is_null() {
            return null_arg("out_steps");
        }
        let kernel = match analysis_kernel(&handle.inner) {
            Ok(k) => k,
            Err(err) => return fail_with(err),
        };
        match mixing_time(&kernel, epsilon, cap, MixingNorm::TotalVariation) {
            Ok(result) => {
                write_out(out_steps, result.steps.unwrap_or(u64::MAX));
                TsStatus::Ok
            }
            Err(err) => fail_with(err),
        }
    })
}

/// Mean first-passage times between all expanded states, row-major: entry
/// `(i, j)` is the expected steps from `i` to the first visit of `j`, with
/// zeros on the diagonal. `len` must equal `rows * rows`.
///
/// # Safety
/// `model` must be a live handle and `out` must point to `len` writable
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn ts_mfpt(model: *const TsModel, out: *mut f64, len: usize) -> TsStatus {
    guard(|| {
        let Some(handle) = (unsafe { model.as_ref() }) else {
            return null_arg("model");
        };
        if out.is_null() {
            return null_arg("out");
        }
        let n = handle.inner.n_rows();
        let expected = n * n;
        if len != expected {
            return fail(
                TsStatus::InvalidArgument,
                format!("output length {len} does not match matrix size {expected}"),
            );
        }
        let kernel = match analysis_kernel(&handle.inner) {
            Ok(k) => k,
            Err(err) => return fail_with(err),
        };
        match mfpt(&kernel) {
            Ok(result) => {
                let dest = unsafe { slice::from_raw_parts_mut(out, len) };
                for i in 0..n {
                    for j in 0..n {
                        dest[i * n + j] = result.m[(i, j)];
                    }
                }
                TsStatus::Ok
            }
            Err(err) => fail_with(err),
        }
    })
}

/// Kemeny constant: the start-independent expected passage time to a
/// stationary-weighted random target.
///
/// # Safety
/// `model` must be a live handle and `out` a writable location.
#[no_mangle]
pub unsafe extern "C" fn ts_kemeny(model: *const TsModel, out: *mut f64) -> TsStatus {
    guard(|| {
        let Some(handle) = (unsafe { model.as_ref() }) else {
            return null_arg("model");
        };
        if out.is_null() {
            return null_arg("out");
        }
        let kernel = match analysis_kernel(&handle.inner) {
            Ok(k) => k,
            Err(err) => return fail_with(err),
        };
        match mfpt(&kernel) {
            Ok(result) => {
                write_out(out, result.kemeny);
                TsStatus::Ok
            }
            Err(err) => fail_with(err),
        }
    })
}

/// Shorrocks mobility index. `raw` is `(n - trace) / (n - 1)`; `clamped`
/// truncates it to `[0, 1]`. Either output pointer may be null to skip it,
/// but not both.
///
/// # Safety
/// `model` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn ts_shorrocks(
    model: *const TsModel,
    raw: *mut f64,
    clamped: *mut f64,
) -> TsStatus {
    guard(|| {
        let Some(handle) = (unsafe { model.as_ref() }) else {
            return null_arg("model");
        };
        if raw.is_null() && clamped.is_null() {
            return fail(TsStatus::NullPointer, "raw and clamped are both null");
        }
        let kernel = match analysis_kernel(&handle.inner) {
            Ok(k) => k,
            Err(err) => return fail_with(err),
        };
        match shorrocks(&kernel) {
            Ok(result) => {
                if !raw.is_null() {
                    write_out(raw, result.raw);
                }
                if !clamped.is_null() {
                    write_out(clamped, result.clamped);
                }
                TsStatus::Ok
            }
            Err(err) => fail_with(err),
        }
    })
}

/// Detailed-balance violation of the chain under its stationary distribution.
/// `total` is the summed absolute net probability flow over unordered state
/// pairs; `normalized` divides by total flow. Either output pointer may be
/// null to skip it, but not both. Fails on reducible chains.
///
/// # Safety
/// `model` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn ts_curl(
    model: *const TsModel,
    total: *mut f64,
    normalized: *mut f64,
) -> TsStatus {
    guard(|| {
        let Some(handle) = (unsafe { model.as_ref() }) else {
            return null_arg("model");
        };
        if total.is_null() && normalized.is_null() {
            return fail(TsStatus::NullPointer, "total and normalized are both null");
        }
        let kernel = match analysis_kernel(&handle.inner) {
            Ok(k) => k,
            Err(err) => return fail_with(err),
        };
        let pi = match stationary_of_matrix(&kernel) {
            Ok(pi) => pi,
            Err(err) => return fail_with(err),
        };
        match curl_diagnostic(&kernel, &pi) {
            Ok(result) => {
                if !total.is_null() {
                    write_out(total, result.total);
                }
                if !normalized.is_null() {
                    write_out(normalized, result.normalized);
                }
                TsStatus::Ok
            }
            Err(err) => fail_with(err),
        }
    })
}

/// Expected recovery time after a transient shock: the population starts at
/// the stationary distribution of `pre`, evolves `applications` steps under
/// `shock`, then relaxes under `pre` until within `epsilon` total variation
/// of where it started. Writes the relaxation step count, or `UINT64_MAX` if
/// recovery does not happen within `cap` steps. The models must agree on
/// state count and order.
///
/// # Safety
/// `pre` and `shock` must be live handles and `out_steps` writable.
#[no_mangle]
pub unsafe extern "C" fn ts_recovery_time(
    pre: *const TsModel,
    shock: *const TsModel,
    epsilon: f64,
    applications: u32,
    cap: u64,
    out_steps: *mut u64,
) -> TsStatus {
    guard(|| {
        let Some(pre_handle) = (unsafe { pre.as_ref() }) else {
            return null_arg("pre");
        };
        let Some(shock_handle) = (unsafe { shock.as_ref() }) else {
            return null_arg("shock");
        };
        if out_steps.is_null() {
            return null_arg("out_steps");
        }
        let options = ShockOptions {
            epsilon,
            applications,
            cap,
        };
        match recovery_time(&pre_handle.inner, &shock_handle.inner, &options) {
            Ok(result) => {
                write_out(out_steps, result.steps.unwrap_or(u64::MAX));
                TsStatus::Ok
            }
            Err(err) => fail_with(err),
        }
    })
}

/// Load a longitudinal panel from a CSV file. Identity columns follow the
/// default schema (`household_id`, `year`, optional `weight`); `dims` names
/// the welfare-dimension columns as a comma-separated list, e.g.
/// `"income,health"`. Pass null for the default `income,health,education`.
///
/// # Safety
/// `path` and a non-null `dims` must be NUL-terminated strings, and `out`
/// must be a writable panel pointer. On success `*out` owns a new panel;
/// release it with [`ts_panel_free`].
#[no_mangle]
pub unsafe extern "C" fn ts_panel_load_csv(
    path: *const c_char,
    dims: *const c_char,
    out: *mut *mut TsPanel,
) -> TsStatus {
    guard(|| {
        if path.is_null() {
            return null_arg("path");
        }
        if out.is_null() {
            return null_arg("out");
        }
        let raw = unsafe { CStr::from_ptr(path) };
        let Ok(path) = raw.to_str() else {
            return fail(TsStatus::InvalidArgument, "path is not valid UTF-8");
        };
        let mut schema = Schema::default();
        if !dims.is_null() {
            let raw = unsafe { CStr::from_ptr(dims) };
            let Ok(dims) = raw.to_str() else {
                return fail(TsStatus::InvalidArgument, "dims is not valid UTF-8");
            };
            let names: Vec<String> = dims
                .split(',')
                .map(|d| d.trim().to_owned())
                .filter(|d| !d.is_empty())
                .collect();
            if names.is_empty() {
                return fail(
                    TsStatus::InvalidArgument,
                    "dims must name at least one column",
                );
            }
            schema.dims = names;
        }
        match load_panel(path, &schema) {
            Ok(inner) => {
                write_out(out, Box::into_raw(Box::new(TsPanel { inner })));
                TsStatus::Ok
            }
            Err(err) => fail_with(err),
        }
    })
}

/// Release a panel created by this library. Null is a no-op.
///
/// # Safety
/// `panel` must be null or a pointer previously returned through
/// [`ts_panel_load_csv`] and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ts_panel_free(panel: *mut TsPanel) {
    if panel.is_null() {
        return;
    }
    drop(unsafe { Box::from_raw(panel) });
}

/// Number of households in the panel.
///
/// # Safety
/// `panel` must be a live handle and `out` a writable location.
#[no_mangle]
pub unsafe extern "C" fn ts_panel_households(panel: *const TsPanel, out: *mut usize) -> TsStatus {
    guard(|| {
        let Some(handle) = (unsafe { panel.as_ref() }) else {
            return null_arg("panel");
        };
        if out.is_null() {
            return null_arg("out");
        }
        write_out(out, handle.inner.report.households);
        TsStatus::Ok
    })
}

/// Number of accepted household-wave observations in the panel.
///
/// # Safety
/// `panel` must be a live handle and `out` a writable location.
#[no_mangle]
pub unsafe extern "C" fn ts_panel_observations(panel: *const TsPanel, out: *mut usize) -> TsStatus {
    guard(|| {
        let Some(handle) = (unsafe { panel.as_ref() }) else {
            return null_arg("panel");
        };
        if out.is_null() {
            return null_arg("out");
        }
        write_out(out, handle.inner.report.observations);
        TsStatus::Ok
    })
}

/// Number of welfare dimensions the panel carries.
///
/// # Safety
/// `panel` must be a live handle and `out` a writable location.
#[no_mangle]
pub unsafe extern "C" fn ts_panel_dimensions(panel: *const TsPanel, out: *mut usize) -> TsStatus {
    guard(|| {
        let Some(handle) = (unsafe { panel.as_ref() }) else {
            return null_arg("panel");
        };
        if out.is_null() {
            return null_arg("out");
        }
        write_out(out, handle.inner.dims.len());
        TsStatus::Ok
    })
}

/// Discretize a panel and estimate a transition model in one step. `bins`
/// gives the per-dimension bin counts in the panel's column order: a positive
/// count fits equal-width bins over the observed range, zero fits one bin per
/// distinct observed level (for ordinal scales). `n_dims` must match
/// [`ts_panel_dimensions`]. `eta > 0` adds that pseudo-weight to every
/// transition so the estimated chain is irreducible; `eta = 0` keeps the raw
/// maximum-likelihood estimate.
///
/// # Safety
/// `panel` must be a live handle, `bins` must point to `n_dims` readable
/// values, and `out` must be a writable model pointer. On success `*out` owns
/// a new model; release it with [`ts_model_free`].
#[no_mangle]
pub unsafe extern "C" fn ts_panel_estimate(
    panel: *const TsPanel,
    bins: *const usize,
    n_dims: usize,
    order: usize,
    eta: f64,
    out: *mut *mut TsModel,
) -> TsStatus {
    guard(|| {
        let Some(handle) = (unsafe { panel.as_ref() }) else {
            return null_arg("panel");
        };
        if bins.is_null() {
            return null_arg("bins");
        }
        if out.is_null() {
            return null_arg("out");
        }
        if n_dims != handle.inner.dims.len() {
            return fail(
                TsStatus::InvalidArgument,
                format!(
                    "n_dims {} does not match the panel's {} dimensions",
                    n_dims,
                    handle.inner.dims.len()
                ),
            );
        }
        let bins = unsafe { slice::from_raw_parts(bins, n_dims) };
        let build = || -> Result<TransitionModel, Error> {
            let mut specs = Vec::with_capacity(n_dims);
            for (name, &k) in handle.inner.dims.iter().zip(bins) {
                let values = handle.inner.dim_values(name)?;
                let spec = if k == 0 {
                    fit_ordinal(name, &values)?
                } else {
                    fit_equidistant(name, &values, k)?
                };
                specs.push(spec);
            }
            let space = StateSpace::new(specs)?;
            let records = extract_transitions(&handle.inner, &space, None)?;
            let model = estimate_mle(&records, &space, order)?;
            if eta > 0.0 {
                model.regularize_irreducible(eta)
            } else {
                Ok(model)
            }
        };
        match build() {
            Ok(inner) => {
                write_out(out, Box::into_raw(Box::new(TsModel { inner })));
                TsStatus::Ok
            }
            Err(err) => fail_with(err),
        }
    })
}
