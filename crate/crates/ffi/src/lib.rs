//! C ABI over the core diagnostics: opaque draw-tensor handles, integer
//! error codes, and a thread-local last-error message. The matching header
//! lives at `include/padbench.h` and is written by hand; the
//! `header_covers_every_export` test keeps it in sync with this file.

use std::cell::RefCell;
use std::ffi::{c_char, c_double, c_int, CStr, CString};
use std::fs::File;

use padbench::convergence::{ess, mcse, split_rhat, Transform};
use padbench::draws::{read_draws_csv, summarize, DrawsTensor, SummaryStatistic};
use padbench::error::Error;
use padbench::sbc::rank_statistic;
use padbench::sensitivity::lyapunov_logistic;

/// Error codes returned by every fallible function.
pub const PAD_OK: c_int = 0;
pub const PAD_ERR_NULL_POINTER: c_int = 1;
pub const PAD_ERR_UTF8: c_int = 2;
pub const PAD_ERR_INVALID_ARGUMENT: c_int = 3;
pub const PAD_ERR_IO: c_int = 4;
pub const PAD_ERR_NUMERICAL: c_int = 5;
pub const PAD_ERR_UNKNOWN_VARIABLE: c_int = 6;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn code_for(err: &Error) -> c_int {
    match err {
        Error::UnknownVariable(_) => PAD_ERR_UNKNOWN_VARIABLE,
        Error::Io(_) | Error::Csv(_) | Error::Parse { .. } => PAD_ERR_IO,
        Error::InvalidArgument(_) | Error::ShapeMismatch(_) => PAD_ERR_INVALID_ARGUMENT,
        _ => PAD_ERR_NUMERICAL,
    }
}

fn fail(err: &Error) -> c_int {
    set_error(&err.to_string());
    code_for(err)
}

/// Opaque handle over a draws tensor.
pub struct PadDraws {
    inner: DrawsTensor,
}

unsafe fn cstr<'a>(ptr: *const c_char) -> Result<&'a str, c_int> {
    if ptr.is_null() {
        set_error("null string pointer");
        return Err(PAD_ERR_NULL_POINTER);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("string is not valid UTF-8");
        PAD_ERR_UTF8
    })
}

/// Last error message for this thread, or NULL when no error has occurred.
/// The caller owns the returned string and must release it with
/// `pad_string_free`.
#[no_mangle]
pub extern "C" fn pad_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|slot| match &*slot.borrow() {
        Some(msg) => msg.clone().into_raw(),
        None => std::ptr::null_mut(),
    })
}

/// # Safety
/// `s` must be a pointer previously returned by `pad_last_error_message`
/// and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pad_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Load draws from a CSV file with header `chain,draw,<var1>,...`.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pad_draws_read_csv(
    path: *const c_char,
    out: *mut *mut PadDraws,
) -> c_int {
    if out.is_null() {
        set_error("null output pointer");
        return PAD_ERR_NULL_POINTER;
    }
    let path = match cstr(path) {
        Ok(p) => p,
        Err(code) => return code,
    };
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) => {
            set_error(&format!("cannot open {path}: {e}"));
            return PAD_ERR_IO;
        }
    };
    match read_draws_csv(file, path) {
        Ok(t) => {
            *out = Box::into_raw(Box::new(PadDraws { inner: t }));
            PAD_OK
        }
        Err(e) => fail(&e),
    }
}

/// Build a tensor from a chain-major value buffer of length
/// `n_chains * draws_per_chain * n_variables`.
///
/// # Safety
/// `names` must point to `n_variables` NUL-terminated strings, `values` to
/// the full buffer, and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pad_draws_new(
    n_chains: usize,
    draws_per_chain: usize,
    n_variables: usize,
    names: *const *const c_char,
    values: *const c_double,
    out: *mut *mut PadDraws,
) -> c_int {
    if names.is_null() || values.is_null() || out.is_null() {
        set_error("null pointer argument");
        return PAD_ERR_NULL_POINTER;
    }
    let mut owned_names = Vec::with_capacity(n_variables);
    for i in 0..n_variables {
        match cstr(*names.add(i)) {
            Ok(s) => owned_names.push(s.to_string()),
            Err(code) => return code,
        }
    }
    let len = n_chains * draws_per_chain * n_variables;
    let buffer = std::slice::from_raw_parts(values, len).to_vec();
    match DrawsTensor::new(n_chains, draws_per_chain, owned_names, buffer) {
        Ok(t) => {
            *out = Box::into_raw(Box::new(PadDraws { inner: t }));
            PAD_OK
        }
        Err(e) => fail(&e),
    }
}

/// # Safety
/// `handle` must come from `pad_draws_read_csv`/`pad_draws_new` and must not
/// be used after this call.
#[no_mangle]
pub unsafe extern "C" fn pad_draws_free(handle: *mut PadDraws) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

unsafe fn with_draws<'a>(handle: *const PadDraws) -> Result<&'a DrawsTensor, c_int> {
    if handle.is_null() {
        set_error("null draws handle");
        return Err(PAD_ERR_NULL_POINTER);
    }
    Ok(&(*handle).inner)
}

/// # Safety
/// `handle` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pad_draws_chain_count(
    handle: *const PadDraws,
    out: *mut usize,
) -> c_int {
    match with_draws(handle) {
        Ok(d) => {
            *out = d.chain_count();
            PAD_OK
        }
        Err(code) => code,
    }
}

/// # Safety
/// `handle` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pad_draws_per_chain(handle: *const PadDraws, out: *mut usize) -> c_int {
    match with_draws(handle) {
        Ok(d) => {
            *out = d.draws_per_chain();
            PAD_OK
        }
        Err(code) => code,
    }
}

/// # Safety
/// `handle` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pad_draws_variable_count(
    handle: *const PadDraws,
    out: *mut usize,
) -> c_int {
    match with_draws(handle) {
        Ok(d) => {
            *out = d.variable_names().len();
            PAD_OK
        }
        Err(code) => code,
    }
}

/// Split scale reduction factor; set `rank_normal` to a nonzero value to
/// apply the rank-normal transform first.
///
/// # Safety
/// `handle` live, `variable` NUL-terminated, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn pad_split_rhat(
    handle: *const PadDraws,
    variable: *const c_char,
    rank_normal: c_int,
    out: *mut c_double,
) -> c_int {
    let draws = match with_draws(handle) {
        Ok(d) => d,
        Err(code) => return code,
    };
    let variable = match cstr(variable) {
        Ok(v) => v,
        Err(code) => return code,
    };
    let transform = if rank_normal != 0 {
        Transform::RankNormal
    } else {
        Transform::Identity
    };
    match split_rhat(draws, variable, transform) {
        Ok(v) => {
            *out = v;
            PAD_OK
        }
        Err(e) => fail(&e),
    }
}

/// Effective sample size.
///
/// # Safety
/// `handle` live, `variable` NUL-terminated, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn pad_ess(
    handle: *const PadDraws,
    variable: *const c_char,
    rank_normal: c_int,
    out: *mut c_double,
) -> c_int {
    let draws = match with_draws(handle) {
        Ok(d) => d,
        Err(code) => return code,
    };
    let variable = match cstr(variable) {
        Ok(v) => v,
        Err(code) => return code,
    };
    let transform = if rank_normal != 0 {
        Transform::RankNormal
    } else {
        Transform::Identity
    };
    match ess(draws, variable, transform) {
        Ok(v) => {
            *out = v;
            PAD_OK
        }
        Err(e) => fail(&e),
    }
}

/// Monte Carlo standard error of the posterior mean.
///
/// # Safety
/// `handle` live, `variable` NUL-terminated, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn pad_mcse_mean(
    handle: *const PadDraws,
    variable: *const c_char,
    out: *mut c_double,
) -> c_int {
    let draws = match with_draws(handle) {
        Ok(d) => d,
        Err(code) => return code,
    };
    let variable = match cstr(variable) {
        Ok(v) => v,
        Err(code) => return code,
    };
    match mcse(draws, variable, SummaryStatistic::Mean) {
        Ok(v) => {
            *out = v.value;
            PAD_OK
        }
        Err(e) => fail(&e),
    }
}

/// Statistic selector for `pad_summarize`.
pub const PAD_STAT_MEAN: c_int = 0;
pub const PAD_STAT_SD: c_int = 1;
pub const PAD_STAT_QUANTILE: c_int = 2;
pub const PAD_STAT_PROB_BELOW: c_int = 3;

/// Pooled posterior summary; `param` carries the quantile probability or the
/// probability-below threshold and is ignored otherwise.
///
/// # Safety
/// `handle` live, `variable` NUL-terminated, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn pad_summarize(
    handle: *const PadDraws,
    variable: *const c_char,
    stat_kind: c_int,
    param: c_double,
    out: *mut c_double,
) -> c_int {
    let draws = match with_draws(handle) {
        Ok(d) => d,
        Err(code) => return code,
    };
    let variable = match cstr(variable) {
        Ok(v) => v,
        Err(code) => return code,
    };
    let stat = match stat_kind {
        PAD_STAT_MEAN => SummaryStatistic::Mean,
        PAD_STAT_SD => SummaryStatistic::Sd,
        PAD_STAT_QUANTILE => match SummaryStatistic::quantile(param) {
            Ok(s) => s,
            Err(e) => return fail(&e),
        },
        PAD_STAT_PROB_BELOW => SummaryStatistic::ProbabilityBelow(param),
        _ => {
            set_error("unknown statistic selector");
            return PAD_ERR_INVALID_ARGUMENT;
        }
    };
    match summarize(draws, variable, stat) {
        Ok(v) => {
            *out = v;
            PAD_OK
        }
        Err(e) => fail(&e),
    }
}

/// Rank of a truth within posterior draws (count of draws at or above it).
///
/// # Safety
/// `draws` must point to `len` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pad_rank_statistic(
    truth: c_double,
    draws: *const c_double,
    len: usize,
    out: *mut u32,
) -> c_int {
    if draws.is_null() || out.is_null() {
        set_error("null pointer argument");
        return PAD_ERR_NULL_POINTER;
    }
    let slice = std::slice::from_raw_parts(draws, len);
    match rank_statistic(truth, slice) {
        Ok(v) => {
            *out = v;
            PAD_OK
        }
        Err(e) => fail(&e),
    }
}

/// Lyapunov exponent of the logistic map.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pad_lyapunov_logistic(
    rho: c_double,
    y0: c_double,
    t_steps: usize,
    burn_in: usize,
    out: *mut c_double,
) -> c_int {
    if out.is_null() {
        set_error("null output pointer");
        return PAD_ERR_NULL_POINTER;
    }
    match lyapunov_logistic(rho, y0, t_steps, burn_in) {
        Ok(v) => {
            *out = v;
            PAD_OK
        }
        Err(e) => fail(&e),
    }
}
