//! C ABI over the adanet simulator.
//!
//! Scenarios and results live behind opaque handles that the caller releases
//! with the matching `*_free`. Every fallible call returns an [`AdanetStatus`];
//! on failure a description is available from [`adanet_last_error`] on the same
//! thread. Panics are caught at the boundary and reported as
//! `ADANET_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use adanet::protocols::{multiplication_count, CountedAlgorithm};
use adanet::theory::TheoryModel;
use adanet::{run_scenario, ProtocolKind, RunResult, ScenarioConfig, SimError};

/// Result of a fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdanetStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Unknown scenario, bad JSON, bad override or an invalid configuration.
    Config = 3,
    /// A run failed for a reason other than divergence.
    Simulation = 4,
    /// Some estimate or the theory recursion became non-finite.
    Diverged = 5,
    /// Protocol not part of the result, or an output buffer too small.
    OutOfRange = 6,
    Panic = 7,
}

/// Algorithms with a closed-form multiplication count.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdanetAlgorithm {
    Usup = 0,
    LsAlg = 1,
    MsdAlg = 2,
}

/// Scenario configuration handle.
pub struct AdanetScenario {
    config: ScenarioConfig,
}

/// Ensemble result handle.
pub struct AdanetResult {
    result: RunResult,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let text = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(text));
}

struct Failure(AdanetStatus, String);

impl Failure {
    fn config(e: impl std::fmt::Display) -> Self {
        Failure(AdanetStatus::Config, e.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        let status = match e {
            SimError::DivergenceDetected { .. } => AdanetStatus::Diverged,
            SimError::Config(_) => AdanetStatus::Config,
            _ => AdanetStatus::Simulation,
        };
        Failure(status, e.to_string())
    }
}

/// Runs `body`, converting failures and panics into a status code.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> AdanetStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => AdanetStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {message}"));
            AdanetStatus::Panic
        }
    }
}

unsafe fn text<'a>(raw: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if raw.is_null() {
        return Err(Failure(
            AdanetStatus::NullPointer,
            format!("{what} is null"),
        ));
    }
    CStr::from_ptr(raw)
        .to_str()
        .map_err(|_| Failure(AdanetStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn handle<'a, T>(raw: *const T, what: &str) -> Result<&'a T, Failure> {
    raw.as_ref()
        .ok_or_else(|| Failure(AdanetStatus::NullPointer, format!("{what} is null")))
}

fn out_ptr<T>(raw: *mut T, what: &str) -> Result<(), Failure> {
    if raw.is_null() {
        Err(Failure(
            AdanetStatus::NullPointer,
            format!("{what} is null"),
        ))
    } else {
        Ok(())
    }
}

/// Copies `values` into `out[..capacity]`; `written` always receives the full length.
unsafe fn fill(
    values: &[f64],
    out: *mut f64,
    capacity: usize,
    written: *mut usize,
) -> Result<(), Failure> {
    if !written.is_null() {
        *written = values.len();
    }
    if values.len() > capacity {
        return Err(Failure(
            AdanetStatus::OutOfRange,
            format!("buffer holds {capacity} values, {} needed", values.len()),
        ));
    }
    if !values.is_empty() {
        out_ptr(out, "output buffer")?;
        ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    }
    Ok(())
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn adanet_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn adanet_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Multiplications per node and iteration spent on cooperation.
#[no_mangle]
pub extern "C" fn adanet_multiplication_count(
    algorithm: AdanetAlgorithm,
    order: u64,
    neighborhood: u64,
) -> u64 {
    let alg = match algorithm {
        AdanetAlgorithm::Usup => CountedAlgorithm::USup,
        AdanetAlgorithm::LsAlg => CountedAlgorithm::LsAlg,
        AdanetAlgorithm::MsdAlg => CountedAlgorithm::MsdAlg,
    };
    multiplication_count(alg, order, neighborhood)
}

/// Loads a shipped scenario (`example1` … `example6`) or a JSON config file path.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn adanet_scenario_load(
    name: *const c_char,
    out: *mut *mut AdanetScenario,
) -> AdanetStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let config = ScenarioConfig::resolve(text(name, "name")?).map_err(Failure::config)?;
        *out = Box::into_raw(Box::new(AdanetScenario { config }));
        Ok(())
    })
}

/// Parses a scenario from JSON text.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn adanet_scenario_from_json(
    json: *const c_char,
    out: *mut *mut AdanetScenario,
) -> AdanetStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let config = ScenarioConfig::from_json(text(json, "json")?).map_err(Failure::config)?;
        *out = Box::into_raw(Box::new(AdanetScenario { config }));
        Ok(())
    })
}

/// Applies one `dotted.key=value` override; the scenario is unchanged on error.
///
/// # Safety
/// `scenario` must come from this library; `assignment` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn adanet_scenario_set(
    scenario: *mut AdanetScenario,
    assignment: *const c_char,
) -> AdanetStatus {
    guard(|| {
        let assignment = text(assignment, "assignment")?;
        let scenario = scenario
            .as_mut()
            .ok_or_else(|| Failure(AdanetStatus::NullPointer, "scenario is null".into()))?;
        scenario
            .config
            .apply_override(assignment)
            .map_err(Failure::config)
    })
}

/// Applies `count` overrides as one batch, validating only the end result, so
/// e.g. a shorter horizon and its probe iterations can change together.
///
/// # Safety
/// `scenario` must come from this library; `assignments` must point to `count`
/// NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn adanet_scenario_set_many(
    scenario: *mut AdanetScenario,
    assignments: *const *const c_char,
    count: usize,
) -> AdanetStatus {
    guard(|| {
        if count > 0 && assignments.is_null() {
            return Err(Failure(
                AdanetStatus::NullPointer,
                "assignments is null".into(),
            ));
        }
        let mut batch = Vec::with_capacity(count);
        for k in 0..count {
            batch.push(text(*assignments.add(k), "assignment")?);
        }
        let scenario = scenario
            .as_mut()
            .ok_or_else(|| Failure(AdanetStatus::NullPointer, "scenario is null".into()))?;
        scenario
            .config
            .apply_overrides(&batch)
            .map_err(Failure::config)
    })
}

/// Number of nodes in the scenario, 0 for a null handle.
///
/// # Safety
/// `scenario` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn adanet_scenario_nodes(scenario: *const AdanetScenario) -> usize {
    scenario.as_ref().map_or(0, |s| s.config.n_nodes())
}

/// Scenario as JSON; release with [`adanet_string_free`]. Null on error.
///
/// # Safety
/// `scenario` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn adanet_scenario_to_json(scenario: *const AdanetScenario) -> *mut c_char {
    let mut json = ptr::null_mut();
    guard(|| {
        let s = handle(scenario, "scenario")?;
        json = CString::new(s.config.to_json())
            .map_err(|e| Failure(AdanetStatus::Simulation, e.to_string()))?
            .into_raw();
        Ok(())
    });
    json
}

/// # Safety
/// `scenario` must be null or come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn adanet_scenario_free(scenario: *mut AdanetScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn adanet_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Runs the Monte Carlo ensemble of `scenario`.
///
/// # Safety
/// `scenario` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn adanet_run(
    scenario: *const AdanetScenario,
    out: *mut *mut AdanetResult,
) -> AdanetStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let s = handle(scenario, "scenario")?;
        let result = run_scenario(&s.config)?;
        *out = Box::into_raw(Box::new(AdanetResult { result }));
        Ok(())
    })
}

/// # Safety
/// `result` must be null or come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn adanet_result_free(result: *mut AdanetResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

fn trace<'a>(
    result: &'a AdanetResult,
    protocol: &str,
) -> Result<&'a adanet::MetricsTrace, Failure> {
    let kind: ProtocolKind = protocol
        .parse()
        .map_err(|e: String| Failure(AdanetStatus::OutOfRange, e))?;
    result.result.traces.get(&kind).ok_or_else(|| {
        Failure(
            AdanetStatus::OutOfRange,
            format!("{protocol} was not simulated"),
        )
    })
}

/// Per-node steady-state MSD in dB (default window) for `protocol`
/// (`noncooperative`, `usup`, `ls_alg`, …). `written` receives the node count.
///
/// # Safety
/// Pointers must be valid; `out` must hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn adanet_result_steady_state_db(
    result: *const AdanetResult,
    protocol: *const c_char,
    out: *mut f64,
    capacity: usize,
    written: *mut usize,
) -> AdanetStatus {
    guard(|| {
        let r = handle(result, "result")?;
        let steady = trace(r, text(protocol, "protocol")?)?
            .steady_state_default()
            .map_err(|e| Failure(AdanetStatus::Simulation, e.to_string()))?;
        fill(&steady, out, capacity, written)
    })
}

/// Network MSD in dB per recorded point for `protocol`.
///
/// # Safety
/// Pointers must be valid; `out` must hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn adanet_result_network_msd_db(
    result: *const AdanetResult,
    protocol: *const c_char,
    out: *mut f64,
    capacity: usize,
    written: *mut usize,
) -> AdanetStatus {
    guard(|| {
        let r = handle(result, "result")?;
        let curve = trace(r, text(protocol, "protocol")?)?.network_msd_db();
        fill(&curve, out, capacity, written)
    })
}

/// Predicted U-sup network MSD in dB for each of `iterations` steps.
///
/// # Safety
/// Pointers must be valid; `out` must hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn adanet_theory_network_msd_db(
    scenario: *const AdanetScenario,
    iterations: usize,
    out: *mut f64,
    capacity: usize,
    written: *mut usize,
) -> AdanetStatus {
    guard(|| {
        let s = handle(scenario, "scenario")?;
        let inputs = s.config.theory_inputs().map_err(Failure::config)?;
        let curve = TheoryModel::new(inputs)
            .and_then(|mut model| model.run(iterations, 1))
            .map_err(|e| {
                let status = match e {
                    adanet::theory::TheoryError::NonFiniteState { .. } => AdanetStatus::Diverged,
                    _ => AdanetStatus::Config,
                };
                Failure(status, e.to_string())
            })?
            .network_msd_db();
        fill(&curve, out, capacity, written)
    })
}
