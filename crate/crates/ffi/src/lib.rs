//! C ABI over `przcdp-core`.
//!
//! Every function returns a [`PrzStatus`]; results come back through out
//! pointers. Handles are opaque and owned by the caller, who releases them
//! with the matching `*_free`. On failure the message is available from
//! [`prz_last_error`] until the next call on the same thread. Strings
//! returned through `char **` out pointers must be released with
//! [`prz_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use przcdp::accountant::{self, PolicyFunction};
use przcdp::cli::{run_command, Cli};
use przcdp::mechanisms;
use przcdp::splitting::{unit_split_scheme, SplitTable, ThresholdScheme};
use przcdp::table::{load_csv, parse_schema_spec, read_csv, Table};
use przcdp::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrzStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Bad input: schema, thresholds, parameters or configuration.
    Validation = 3,
    /// I/O or another failure while running.
    Runtime = 4,
    /// A row index was out of range.
    OutOfRange = 5,
    /// Internal panic; the library state is otherwise intact.
    Panic = 6,
}

pub struct PrzTable(Table);
pub struct PrzThresholds(ThresholdScheme);
pub struct PrzSplitTable(SplitTable);
pub struct PrzPolicy(PolicyFunction);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Failure(PrzStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = if e.is_validation() {
            PrzStatus::Validation
        } else {
            PrzStatus::Runtime
        };
        Failure(status, e.to_string())
    }
}

type FfiResult<T> = Result<T, Failure>;

fn guard(f: impl FnOnce() -> FfiResult<()>) -> PrzStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PrzStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            PrzStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(Failure(PrzStatus::NullPointer, format!("`{name}` is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(PrzStatus::InvalidUtf8, format!("`{name}` is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> FfiResult<&'a T> {
    p.as_ref()
        .ok_or_else(|| Failure(PrzStatus::NullPointer, format!("`{name}` is null")))
}

unsafe fn put<T>(out: *mut T, value: T) -> FfiResult<()> {
    if out.is_null() {
        return Err(Failure(
            PrzStatus::NullPointer,
            "output pointer is null".into(),
        ));
    }
    out.write(value);
    Ok(())
}

unsafe fn put_box<T>(out: *mut *mut T, value: T) -> FfiResult<()> {
    put(out, Box::into_raw(Box::new(value)))
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> FfiResult<()> {
    let c =
        CString::new(s).map_err(|_| Failure(PrzStatus::Runtime, "string contains NUL".into()))?;
    put(out, c.into_raw())
}

fn json_error(e: serde_json::Error) -> Failure {
    Failure(PrzStatus::Validation, e.to_string())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn prz_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. Owned by the
/// library.
#[no_mangle]
pub extern "C" fn prz_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `s` must be NULL or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn prz_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a CSV with a `ROW_ID` column. `schema` is
/// `name:conditional,name:measure,...`.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn prz_table_load_csv(
    path: *const c_char,
    schema: *const c_char,
    out: *mut *mut PrzTable,
) -> PrzStatus {
    guard(|| {
        let path = PathBuf::from(str_arg(path, "path")?);
        let schema = parse_schema_spec(str_arg(schema, "schema")?)?;
        put_box(out, PrzTable(load_csv(path, schema)?))
    })
}

/// Parses CSV text held in memory.
///
/// # Safety
/// As [`prz_table_load_csv`].
#[no_mangle]
pub unsafe extern "C" fn prz_table_from_csv(
    text: *const c_char,
    schema: *const c_char,
    out: *mut *mut PrzTable,
) -> PrzStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        let schema = parse_schema_spec(str_arg(schema, "schema")?)?;
        put_box(out, PrzTable(read_csv(text.as_bytes(), schema)?))
    })
}

/// # Safety
/// `table` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn prz_table_len(table: *const PrzTable, out: *mut usize) -> PrzStatus {
    guard(|| put(out, handle(table, "table")?.0.len()))
}

/// # Safety
/// `table` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn prz_table_free(table: *mut PrzTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// Thresholds as JSON: `{"uniform": {"attr": T, ...}}` or
/// `{"grouped": {"key": ..., "groups": {...}, "default": {...}}}`.
///
/// # Safety
/// `json` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn prz_thresholds_from_json(
    json: *const c_char,
    out: *mut *mut PrzThresholds,
) -> PrzStatus {
    guard(|| {
        let scheme: ThresholdScheme =
            serde_json::from_str(str_arg(json, "json")?).map_err(json_error)?;
        put_box(out, PrzThresholds(scheme))
    })
}

/// # Safety
/// `thresholds` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn prz_thresholds_free(thresholds: *mut PrzThresholds) {
    if !thresholds.is_null() {
        drop(Box::from_raw(thresholds));
    }
}

/// Unit-splits `table`.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn prz_split(
    table: *const PrzTable,
    thresholds: *const PrzThresholds,
    out: *mut *mut PrzSplitTable,
) -> PrzStatus {
    guard(|| {
        let table = &handle(table, "table")?.0;
        let scheme = &handle(thresholds, "thresholds")?.0;
        put_box(out, PrzSplitTable(unit_split_scheme(table, scheme)?))
    })
}

/// Number of sub-records for row `row` (0-based) of `table`.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn prz_split_count(
    table: *const PrzTable,
    thresholds: *const PrzThresholds,
    row: usize,
    out: *mut usize,
) -> PrzStatus {
    guard(|| {
        let table = &handle(table, "table")?.0;
        let resolved = handle(thresholds, "thresholds")?
            .0
            .resolve(table.schema())?;
        let r = table.rows().get(row).ok_or_else(|| {
            Failure(
                PrzStatus::OutOfRange,
                format!("row {row} of {}", table.len()),
            )
        })?;
        put(out, resolved.split_count(r))
    })
}

/// # Safety
/// `split` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn prz_split_len(split: *const PrzSplitTable, out: *mut usize) -> PrzStatus {
    guard(|| put(out, handle(split, "split")?.0.len()))
}

/// Split table as CSV with an `ORIGIN_ROW_ID` column.
///
/// # Safety
/// `split` must be a live handle; `out` must be writable. Free the result
/// with [`prz_string_free`].
#[no_mangle]
pub unsafe extern "C" fn prz_split_to_csv(
    split: *const PrzSplitTable,
    out: *mut *mut c_char,
) -> PrzStatus {
    guard(|| put_string(out, handle(split, "split")?.0.to_csv_string()))
}

/// # Safety
/// `split` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn prz_split_free(split: *mut PrzSplitTable) {
    if !split.is_null() {
        drop(Box::from_raw(split));
    }
}

/// Policy `rho * m(r)^2` for splits under `thresholds`.
///
/// # Safety
/// `thresholds` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn prz_policy_split_cost(
    rho: f64,
    thresholds: *const PrzThresholds,
    out: *mut *mut PrzPolicy,
) -> PrzStatus {
    guard(|| {
        let scheme = handle(thresholds, "thresholds")?.0.clone();
        put_box(out, PrzPolicy(PolicyFunction::split_cost(rho, scheme)))
    })
}

/// Parses a published policy (for example a run's `policy.json`).
///
/// # Safety
/// `json` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn prz_policy_from_json(
    json: *const c_char,
    out: *mut *mut PrzPolicy,
) -> PrzStatus {
    guard(|| {
        put_box(
            out,
            PrzPolicy(PolicyFunction::from_json(str_arg(json, "json")?)?),
        )
    })
}

/// # Safety
/// `policy` must be live; `out` must be writable. Free the result with
/// [`prz_string_free`].
#[no_mangle]
pub unsafe extern "C" fn prz_policy_to_json(
    policy: *const PrzPolicy,
    out: *mut *mut c_char,
) -> PrzStatus {
    guard(|| put_string(out, handle(policy, "policy")?.0.to_json()))
}

/// Policy loss of row `row` (0-based) of `table`.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn prz_policy_evaluate(
    policy: *const PrzPolicy,
    table: *const PrzTable,
    row: usize,
    out: *mut f64,
) -> PrzStatus {
    guard(|| {
        let table = &handle(table, "table")?.0;
        let r = table.rows().get(row).ok_or_else(|| {
            Failure(
                PrzStatus::OutOfRange,
                format!("row {row} of {}", table.len()),
            )
        })?;
        let loss = accountant::evaluate(&handle(policy, "policy")?.0, table.schema(), r)?;
        put(out, loss)
    })
}

/// Smallest loss the policy assigns to any record.
///
/// # Safety
/// `policy` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn prz_policy_min(policy: *const PrzPolicy, out: *mut f64) -> PrzStatus {
    guard(|| put(out, accountant::policy_min(&handle(policy, "policy")?.0)))
}

/// # Safety
/// `policy` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn prz_policy_free(policy: *mut PrzPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Gaussian scale for a `rho`-zCDP release with sensitivity `delta`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn prz_sigma_for_rho(delta: f64, rho: f64, out: *mut f64) -> PrzStatus {
    guard(|| put(out, mechanisms::sigma_for_rho(delta, rho)?))
}

unsafe fn losses_arg<'a>(losses: *const f64, len: usize) -> FfiResult<&'a [f64]> {
    if losses.is_null() && len > 0 {
        return Err(Failure(PrzStatus::NullPointer, "`losses` is null".into()));
    }
    Ok(if len == 0 {
        &[]
    } else {
        std::slice::from_raw_parts(losses, len)
    })
}

/// `J * sum P` over the `len` losses of a group.
///
/// # Safety
/// `losses` must point to `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn prz_simple_group_bound(
    losses: *const f64,
    len: usize,
    out: *mut f64,
) -> PrzStatus {
    guard(|| {
        put(
            out,
            accountant::simple_group_bound_from_losses(losses_arg(losses, len)?)?,
        )
    })
}

/// Chained group bound minimized over `k`.
///
/// # Safety
/// As [`prz_simple_group_bound`].
#[no_mangle]
pub unsafe extern "C" fn prz_advanced_group_bound(
    losses: *const f64,
    len: usize,
    out: *mut f64,
) -> PrzStatus {
    guard(|| {
        put(
            out,
            accountant::advanced_group_bound(losses_arg(losses, len)?)?,
        )
    })
}

/// Runs a CLI subcommand (`split`, `run`, `baseline`, `sweep`, `mse-theory`,
/// `ffu`, `metrics`) on a config file, writing into `out_dir`. `seed` is
/// used only when `has_seed` is non-zero.
///
/// # Safety
/// String arguments must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn prz_run_config(
    command: *const c_char,
    config_path: *const c_char,
    out_dir: *const c_char,
    has_seed: i32,
    seed: u64,
    no_noise: i32,
) -> PrzStatus {
    guard(|| {
        let mut args = vec![
            "przcdp".to_string(),
            str_arg(command, "command")?.to_string(),
            "--config".into(),
            str_arg(config_path, "config_path")?.to_string(),
            "--out".into(),
            str_arg(out_dir, "out_dir")?.to_string(),
        ];
        if has_seed != 0 {
            args.extend(["--seed".into(), seed.to_string()]);
        }
        if no_noise != 0 {
            args.push("--no-noise".into());
        }
        run_command(&Cli::from_args(args)?.command)?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn guard_maps_panics_and_errors() {
        assert_eq!(guard(|| panic!("boom")), PrzStatus::Panic);
        assert!(!prz_last_error().is_null());
        let status = guard(|| Err(Error::MissingThreshold("x".into()).into()));
        assert_eq!(status, PrzStatus::Validation);
        assert_eq!(guard(|| Ok(())), PrzStatus::Ok);
        assert!(prz_last_error().is_null());
    }
}
