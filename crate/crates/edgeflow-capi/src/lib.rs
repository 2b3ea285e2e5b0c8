//! C ABI over the dynamic CNN inference library.
//!
//! Handles are opaque pointers created and destroyed here; every fallible
//! call returns an [`EfStatus`] and writes its result through out-pointers.
//! Status codes match the CLI's exit codes (2 config, 3 data, 4 budget).
//! After any non-OK status, [`ef_last_error`] returns a thread-local,
//! NUL-terminated message valid until the next failing call on the same
//! thread.
//!
//! The C header is generated into `include/edgeflow.h` at build time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;

use edgeflow::harness::{
    self, load_mnist, load_weights, run_experiment, synth, Dataset, ExperimentConfig, TrainConfig,
};
use edgeflow::model::{classify, forward, lenet5, ModelSpec, Parameters};
use edgeflow::partition::PlanMode;
use edgeflow::quantstream::QuantScheme;
use edgeflow::tensor::Tensor;

/// Call outcome. Non-zero values match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EfStatus {
    Ok = 0,
    /// Invalid arguments or configuration.
    ConfigError = 2,
    /// Missing or malformed data (files, weights, datasets).
    DataError = 3,
    /// A resource budget was exceeded.
    BudgetError = 4,
    /// A required pointer argument was NULL.
    NullArgument = 5,
}

/// Execution mode selector.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EfMode {
    Static = 0,
    Dasp = 1,
    Dapp = 2,
    Sdci = 3,
}

impl From<EfMode> for PlanMode {
    fn from(m: EfMode) -> PlanMode {
        match m {
            EfMode::Static => PlanMode::Static,
            EfMode::Dasp => PlanMode::Dasp,
            EfMode::Dapp => PlanMode::Dapp,
            EfMode::Sdci => PlanMode::Sdci,
        }
    }
}

/// Opaque model description handle.
pub struct EfModel(ModelSpec);
/// Opaque trained-parameters handle.
pub struct EfParams(Parameters);
/// Opaque labeled-dataset handle.
pub struct EfDataset(Dataset);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: impl Into<String>) {
    let message = message.into();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(message).unwrap_or_default();
    });
}

fn fail(status: EfStatus, message: impl Into<String>) -> EfStatus {
    set_error(message);
    status
}

/// Message for the most recent failure on this thread. Valid until the next
/// failing call on the same thread; never NULL.
#[no_mangle]
pub extern "C" fn ef_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// # Safety
/// `path` must be a valid NUL-terminated string.
unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a Path, EfStatus> {
    if path.is_null() {
        return Err(fail(EfStatus::NullArgument, "path is NULL"));
    }
    match CStr::from_ptr(path).to_str() {
        Ok(s) => Ok(Path::new(s)),
        Err(_) => Err(fail(EfStatus::ConfigError, "path is not valid utf-8")),
    }
}

fn write_out<T>(out: *mut *mut T, value: T) -> EfStatus {
    if out.is_null() {
        return fail(EfStatus::NullArgument, "out pointer is NULL");
    }
    unsafe { *out = Box::into_raw(Box::new(value)) };
    EfStatus::Ok
}

/// New handle for the built-in LeNet-5 description. Free with
/// [`ef_model_free`].
#[no_mangle]
pub extern "C" fn ef_model_lenet5() -> *mut EfModel {
    Box::into_raw(Box::new(EfModel(lenet5())))
}

/// # Safety
/// `model` must come from [`ef_model_lenet5`] and not already be freed.
#[no_mangle]
pub unsafe extern "C" fn ef_model_free(model: *mut EfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Load trained parameters from a weights file, validated against the
/// model. Free with [`ef_params_free`].
///
/// # Safety
/// `model` must be a live model handle; `path` a NUL-terminated string;
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ef_params_load(
    model: *const EfModel,
    path: *const c_char,
    out: *mut *mut EfParams,
) -> EfStatus {
    if model.is_null() {
        return fail(EfStatus::NullArgument, "model is NULL");
    }
    let path = match path_arg(path) {
        Ok(p) => p,
        Err(status) => return status,
    };
    match load_weights(path, &(*model).0) {
        Ok(params) => write_out(out, EfParams(params)),
        Err(e) => fail(EfStatus::DataError, e.to_string()),
    }
}

/// Train a baseline on a synthetic digit set, for self-contained demos.
///
/// # Safety
/// `model` must be a live model handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ef_params_train_synthetic(
    model: *const EfModel,
    image_count: usize,
    seed: u64,
    epochs: usize,
    out: *mut *mut EfParams,
) -> EfStatus {
    if model.is_null() {
        return fail(EfStatus::NullArgument, "model is NULL");
    }
    if image_count == 0 || epochs == 0 {
        return fail(EfStatus::ConfigError, "image_count and epochs must be positive");
    }
    let train = synth::dataset(image_count, seed);
    let cfg = TrainConfig {
        epochs,
        seed,
        ..TrainConfig::default()
    };
    match harness::train_baseline(&(*model).0, &train, &cfg) {
        Ok(outcome) => write_out(out, EfParams(outcome.params)),
        Err(e) => fail(EfStatus::DataError, e.to_string()),
    }
}

/// # Safety
/// `params` must come from a params constructor and not already be freed.
#[no_mangle]
pub unsafe extern "C" fn ef_params_free(params: *mut EfParams) {
    if !params.is_null() {
        drop(Box::from_raw(params));
    }
}

/// Load an IDX image/label pair. Free with [`ef_dataset_free`].
///
/// # Safety
/// Paths must be NUL-terminated strings and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ef_dataset_load(
    images_path: *const c_char,
    labels_path: *const c_char,
    out: *mut *mut EfDataset,
) -> EfStatus {
    let images = match path_arg(images_path) {
        Ok(p) => p,
        Err(status) => return status,
    };
    let labels = match path_arg(labels_path) {
        Ok(p) => p,
        Err(status) => return status,
    };
    match load_mnist(images, labels) {
        Ok(ds) => write_out(out, EfDataset(ds)),
        Err(e) => fail(EfStatus::DataError, e.to_string()),
    }
}

/// Deterministic synthetic digit set. Free with [`ef_dataset_free`].
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ef_dataset_synthetic(
    count: usize,
    seed: u64,
    out: *mut *mut EfDataset,
) -> EfStatus {
    if count == 0 {
        return fail(EfStatus::ConfigError, "count must be positive");
    }
    write_out(out, EfDataset(synth::dataset(count, seed)))
}

/// Number of labeled images in the set; 0 for NULL.
///
/// # Safety
/// `dataset` must be a live dataset handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn ef_dataset_len(dataset: *const EfDataset) -> usize {
    if dataset.is_null() {
        return 0;
    }
    (*dataset).0.len()
}

/// # Safety
/// `dataset` must come from a dataset constructor and not already be freed.
#[no_mangle]
pub unsafe extern "C" fn ef_dataset_free(dataset: *mut EfDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Classify one 28x28 image (784 floats in [0,1], row-major). Writes the
/// predicted digit to `out_digit`.
///
/// # Safety
/// `model` and `params` must be live handles; `pixels` must point to
/// `pixel_count` readable floats; `out_digit` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ef_classify(
    model: *const EfModel,
    params: *const EfParams,
    pixels: *const f32,
    pixel_count: usize,
    out_digit: *mut i32,
) -> EfStatus {
    if model.is_null() || params.is_null() || pixels.is_null() || out_digit.is_null() {
        return fail(EfStatus::NullArgument, "NULL argument");
    }
    if pixel_count != 28 * 28 {
        return fail(
            EfStatus::ConfigError,
            format!("expected 784 pixels, got {pixel_count}"),
        );
    }
    let data = std::slice::from_raw_parts(pixels, pixel_count).to_vec();
    let image = match Tensor::from_dims(&[1, 28, 28], data) {
        Ok(t) => t,
        Err(e) => return fail(EfStatus::ConfigError, e.to_string()),
    };
    let logits = match forward(&(*model).0, &(*params).0, &image) {
        Ok(l) => l,
        Err(e) => return fail(EfStatus::ConfigError, e.to_string()),
    };
    match classify(&logits) {
        Ok(digit) => {
            *out_digit = digit as i32;
            EfStatus::Ok
        }
        Err(e) => fail(EfStatus::ConfigError, e.to_string()),
    }
}

/// Run one execution mode over the first `images` of the dataset. Writes
/// the accuracy percentage and the streamed parameter payload bytes.
///
/// # Safety
/// Handles must be live; out-pointers may be NULL to skip that output.
#[no_mangle]
pub unsafe extern "C" fn ef_run(
    model: *const EfModel,
    params: *const EfParams,
    dataset: *const EfDataset,
    mode: EfMode,
    bits: u8,
    frac_bits: u8,
    images: usize,
    out_accuracy_pct: *mut f64,
    out_streamed_bytes: *mut u64,
) -> EfStatus {
    match run_report(model, params, dataset, mode, bits, frac_bits, images) {
        Ok(report) => {
            if !out_accuracy_pct.is_null() {
                *out_accuracy_pct = report.accuracy_pct;
            }
            if !out_streamed_bytes.is_null() {
                *out_streamed_bytes = report.streamed_payload_bytes;
            }
            EfStatus::Ok
        }
        Err(status) => status,
    }
}

/// Like [`ef_run`] but returns the full report as a JSON string. Free the
/// string with [`ef_string_free`].
///
/// # Safety
/// Handles must be live; `out_json` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ef_run_report_json(
    model: *const EfModel,
    params: *const EfParams,
    dataset: *const EfDataset,
    mode: EfMode,
    bits: u8,
    frac_bits: u8,
    images: usize,
    out_json: *mut *mut c_char,
) -> EfStatus {
    if out_json.is_null() {
        return fail(EfStatus::NullArgument, "out_json is NULL");
    }
    match run_report(model, params, dataset, mode, bits, frac_bits, images) {
        Ok(report) => {
            let json = CString::new(report.to_json()).unwrap_or_default();
            *out_json = json.into_raw();
            EfStatus::Ok
        }
        Err(status) => status,
    }
}

unsafe fn run_report(
    model: *const EfModel,
    params: *const EfParams,
    dataset: *const EfDataset,
    mode: EfMode,
    bits: u8,
    frac_bits: u8,
    images: usize,
) -> Result<harness::RunReport, EfStatus> {
    if model.is_null() || params.is_null() || dataset.is_null() {
        return Err(fail(EfStatus::NullArgument, "NULL handle"));
    }
    let scheme = QuantScheme::new(bits, frac_bits)
        .map_err(|e| fail(EfStatus::ConfigError, e.to_string()))?;
    let cfg = ExperimentConfig {
        scheme,
        images,
        ..ExperimentConfig::new(mode.into())
    };
    run_experiment(&(*model).0, &(*params).0, &(*dataset).0, &cfg).map_err(|e| {
        let status = match &e {
            harness::ExperimentError::Pr(
                edgeflow::prsim::PrError::BudgetExceeded { .. }
                | edgeflow::prsim::PrError::IpOverBudget { .. },
            ) => EfStatus::BudgetError,
            harness::ExperimentError::Stream(_) => EfStatus::DataError,
            _ => EfStatus::ConfigError,
        };
        fail(status, e.to_string())
    })
}

/// # Safety
/// `s` must be a string returned by this library and not already freed.
#[no_mangle]
pub unsafe extern "C" fn ef_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
