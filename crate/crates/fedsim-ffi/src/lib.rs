//! C ABI for the simulator.
//!
//! Handles are opaque pointers owned by the library; every constructor
//! has a matching `_free`. Fallible calls return a status code and leave
//! a message for `fedsim_last_error`. No call unwinds across the
//! boundary: panics are caught and reported as `FEDSIM_STATUS_INTERNAL`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use fedsim::data::{
    load_mhealth, make_synthetic, partition_clients, split_train_test, standardize_apply,
    standardize_fit, Dataset,
};
use fedsim::federation::{run_federation, FederationConfig};
use fedsim::harness::{federation_seed, partition_seed, run_baseline, split_seed};
use fedsim::metrics::{evaluate, MetricsReport};
use fedsim::nn::Model;
use fedsim::{Error, Result};

/// Outcome of a fallible call. Anything but `Ok` leaves a message
/// readable via `fedsim_last_error` on the same thread.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FedsimStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    Utf8 = 2,
    /// A parameter is out of its documented range.
    InvalidInput = 3,
    /// Dimensions of the inputs do not agree.
    ShapeMismatch = 4,
    /// Training or encoding produced or received a non-finite value.
    Numerical = 5,
    /// The dataset is unusable: empty, unparseable, or inconsistent.
    Data = 6,
    /// The aggregation protocol was violated.
    Protocol = 7,
    /// A file could not be read or written.
    Io = 8,
    /// An unexpected internal failure; a bug if it ever surfaces.
    Internal = 9,
}

fn status_of(e: &Error) -> FedsimStatus {
    match e {
        Error::InvalidInput(_)
        | Error::InvalidArchitecture(_)
        | Error::InvalidLabel { .. }
        | Error::TooManyClients { .. } => FedsimStatus::InvalidInput,
        Error::ShapeMismatch(_) | Error::ArchMismatch(_) => FedsimStatus::ShapeMismatch,
        Error::Numerical(_) | Error::EncodingRange { .. } => FedsimStatus::Numerical,
        Error::EmptyDataset
        | Error::EmptyClient
        | Error::Parse { .. }
        | Error::Format { .. }
        | Error::Stratification(_) => FedsimStatus::Data,
        Error::Protocol(_) => FedsimStatus::Protocol,
        Error::Io { .. } | Error::Json(_) => FedsimStatus::Io,
        Error::Client { source, .. } => status_of(source),
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let owned = CString::new(msg.replace('\0', " ")).expect("no interior NUL");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = owned);
}

fn fail(e: &Error) -> FedsimStatus {
    set_last_error(&e.to_string());
    status_of(e)
}

fn fail_null(what: &str) -> FedsimStatus {
    set_last_error(&format!("{what} must not be null"));
    FedsimStatus::NullArgument
}

/// Message from the most recent failing call on this thread, empty if
/// none. The pointer stays valid until the next library call on the
/// same thread.
#[no_mangle]
pub extern "C" fn fedsim_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fedsim_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

fn guarded(f: impl FnOnce() -> FedsimStatus) -> FedsimStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_last_error("internal panic");
            FedsimStatus::Internal
        }
    }
}

/// An owned dataset handle.
pub struct FedsimDataset(Dataset);

/// An owned model handle.
pub struct FedsimModel(Model);

/// Everything a federation run needs besides the dataset. Obtain
/// defaults from `fedsim_run_config_default` and override fields.
#[repr(C)]
pub struct FedsimRunConfig {
    /// Number of simulated clients, at least 1.
    pub clients: usize,
    /// Hard cap on federation rounds.
    pub rounds: usize,
    /// Local epochs per round.
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Round-over-round max-abs weight change at or below this stops early.
    pub convergence_tol: f64,
    /// Base seed; splits, partitions, and training derive from it.
    pub seed: u64,
    /// Merge through masked fixed-point sums instead of plaintext models.
    pub secure_agg: bool,
    /// Weight client contributions by shard size.
    pub weighted: bool,
    /// Fixed-point fractional bits used when secure_agg is set.
    pub frac_bits: u32,
    /// Hidden layer widths; null means the library default (64, 32).
    pub hidden: *const usize,
    /// Number of entries behind `hidden`; ignored when `hidden` is null.
    pub hidden_len: usize,
    /// Fraction of rows held out for the test split, in (0, 1).
    pub test_fraction: f64,
    /// Z-score features on the training split before use.
    pub standardize: bool,
}

/// Final-round quality of a model on the held-out test split.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct FedsimMetrics {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

impl From<&MetricsReport> for FedsimMetrics {
    fn from(r: &MetricsReport) -> Self {
        FedsimMetrics {
            accuracy: r.accuracy,
            macro_precision: r.macro_precision,
            macro_recall: r.macro_recall,
            macro_f1: r.macro_f1,
        }
    }
}

/// Fill `out` with the default run configuration: 1 client, 20 rounds,
/// 50 local epochs, batch 32, learning rate 0.01, tolerance 1e-4,
/// seed 42, secure aggregation on, unweighted, 24 fractional bits,
/// default hidden layers, 0.2 test fraction, standardization on.
#[no_mangle]
pub unsafe extern "C" fn fedsim_run_config_default(out: *mut FedsimRunConfig) -> FedsimStatus {
    if out.is_null() {
        return fail_null("out");
    }
    let base = FederationConfig::default();
    out.write(FedsimRunConfig {
        clients: base.t,
        rounds: base.rounds,
        local_epochs: base.local_epochs,
        batch_size: base.batch_size,
        learning_rate: base.learning_rate,
        convergence_tol: base.convergence_tol,
        seed: base.seed,
        secure_agg: base.secure_agg,
        weighted: base.weighted,
        frac_bits: base.frac_bits,
        hidden: std::ptr::null(),
        hidden_len: 0,
        test_fraction: 0.2,
        standardize: true,
    });
    FedsimStatus::Ok
}

unsafe fn federation_config(cfg: &FedsimRunConfig) -> FederationConfig {
    let hidden_layers = if cfg.hidden.is_null() {
        FederationConfig::default().hidden_layers
    } else {
        std::slice::from_raw_parts(cfg.hidden, cfg.hidden_len).to_vec()
    };
    FederationConfig {
        t: cfg.clients,
        rounds: cfg.rounds,
        local_epochs: cfg.local_epochs,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        convergence_tol: cfg.convergence_tol,
        seed: cfg.seed,
        secure_agg: cfg.secure_agg,
        weighted: cfg.weighted,
        frac_bits: cfg.frac_bits,
        hidden_layers,
    }
}

/// Generate Gaussian blob data: `rows` samples, `features` columns,
/// one cluster per class with pairwise center distance `separation`.
/// On success writes a dataset handle to `out`.
#[no_mangle]
pub unsafe extern "C" fn fedsim_dataset_synthetic(
    rows: usize,
    features: usize,
    classes: usize,
    separation: f64,
    seed: u64,
    out: *mut *mut FedsimDataset,
) -> FedsimStatus {
    if out.is_null() {
        return fail_null("out");
    }
    guarded(|| match make_synthetic(rows, features, classes, separation, seed) {
        Ok(data) => {
            out.write(Box::into_raw(Box::new(FedsimDataset(data))));
            FedsimStatus::Ok
        }
        Err(e) => fail(&e),
    })
}

/// Load whitespace-separated sensor log files (last column is the class
/// label). `paths` is an array of `count` NUL-terminated UTF-8 paths.
/// Label 0 is dropped unless `keep_null` is set.
#[no_mangle]
pub unsafe extern "C" fn fedsim_dataset_load(
    paths: *const *const c_char,
    count: usize,
    keep_null: bool,
    out: *mut *mut FedsimDataset,
) -> FedsimStatus {
    if out.is_null() {
        return fail_null("out");
    }
    if paths.is_null() {
        return fail_null("paths");
    }
    let mut owned = Vec::with_capacity(count);
    for (i, &raw) in std::slice::from_raw_parts(paths, count).iter().enumerate() {
        if raw.is_null() {
            return fail_null(&format!("paths[{i}]"));
        }
        match CStr::from_ptr(raw).to_str() {
            Ok(s) => owned.push(PathBuf::from(s)),
            Err(_) => {
                set_last_error(&format!("paths[{i}] is not valid UTF-8"));
                return FedsimStatus::Utf8;
            }
        }
    }
    guarded(|| match load_mhealth(&owned, keep_null) {
        Ok(data) => {
            out.write(Box::into_raw(Box::new(FedsimDataset(data))));
            FedsimStatus::Ok
        }
        Err(e) => fail(&e),
    })
}

/// Number of samples, 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn fedsim_dataset_rows(data: *const FedsimDataset) -> usize {
    data.as_ref().map_or(0, |d| d.0.rows())
}

/// Number of feature columns, 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn fedsim_dataset_features(data: *const FedsimDataset) -> usize {
    data.as_ref().map_or(0, |d| d.0.features())
}

/// Number of classes, 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn fedsim_dataset_classes(data: *const FedsimDataset) -> usize {
    data.as_ref().map_or(0, |d| d.0.class_count)
}

/// Release a dataset handle. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn fedsim_dataset_free(data: *mut FedsimDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

struct Prepared {
    train: Dataset,
    test: Dataset,
}

fn prepare(data: &Dataset, cfg: &FederationConfig, test_fraction: f64, standardize: bool) -> Result<Prepared> {
    let (train, test) = split_train_test(data, test_fraction, split_seed(cfg.seed, 0))?;
    if !standardize {
        return Ok(Prepared { train, test });
    }
    let params = standardize_fit(&train);
    Ok(Prepared {
        train: standardize_apply(&params, &train)?,
        test: standardize_apply(&params, &test)?,
    })
}

/// Split the dataset, train a federation of `cfg->clients` clients, and
/// return the final merged model. When `out_metrics` is non-null it
/// receives the final round's test-split metrics. Seeds derive from
/// `cfg->seed` exactly as the experiment harness derives them for its
/// first repetition. When `cfg->standardize` is set the model expects
/// z-scored inputs (the training split's fit).
#[no_mangle]
pub unsafe extern "C" fn fedsim_federate(
    data: *const FedsimDataset,
    cfg: *const FedsimRunConfig,
    out_model: *mut *mut FedsimModel,
    out_metrics: *mut FedsimMetrics,
) -> FedsimStatus {
    if out_model.is_null() {
        return fail_null("out_model");
    }
    let Some(data) = data.as_ref() else {
        return fail_null("data");
    };
    let Some(cfg) = cfg.as_ref() else {
        return fail_null("cfg");
    };
    let (test_fraction, standardize) = (cfg.test_fraction, cfg.standardize);
    let cfg = federation_config(cfg);
    guarded(|| {
        let run = || -> Result<(Model, MetricsReport)> {
            let base = federation_seed(cfg.seed, cfg.t, 0);
            let prepared = prepare(&data.0, &cfg, test_fraction, standardize)?;
            let clients = partition_clients(&prepared.train, cfg.t, partition_seed(cfg.seed, cfg.t, 0))?;
            let cfg = FederationConfig { seed: base, ..cfg.clone() };
            let (model, history) = run_federation(&clients, &prepared.test, &cfg)?;
            let last = history.last().expect("at least one round");
            Ok((model, last.metrics.clone()))
        };
        match run() {
            Ok((model, report)) => {
                if !out_metrics.is_null() {
                    out_metrics.write(FedsimMetrics::from(&report));
                }
                out_model.write(Box::into_raw(Box::new(FedsimModel(model))));
                FedsimStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Train one centralized model on the training split with the same
/// hyperparameters and seed derivation a single-client federation would
/// use; `cfg->clients` is ignored.
#[no_mangle]
pub unsafe extern "C" fn fedsim_train_baseline(
    data: *const FedsimDataset,
    cfg: *const FedsimRunConfig,
    out_model: *mut *mut FedsimModel,
    out_metrics: *mut FedsimMetrics,
) -> FedsimStatus {
    if out_model.is_null() {
        return fail_null("out_model");
    }
    let Some(data) = data.as_ref() else {
        return fail_null("data");
    };
    let Some(cfg) = cfg.as_ref() else {
        return fail_null("cfg");
    };
    let (test_fraction, standardize) = (cfg.test_fraction, cfg.standardize);
    let cfg = federation_config(cfg);
    guarded(|| {
        let run = || -> Result<(Model, MetricsReport)> {
            let prepared = prepare(&data.0, &cfg, test_fraction, standardize)?;
            let shard = partition_clients(&prepared.train, 1, partition_seed(cfg.seed, 1, 0))?
                .pop()
                .expect("one client")
                .data;
            let cfg = FederationConfig {
                t: 1,
                seed: federation_seed(cfg.seed, 1, 0),
                ..cfg.clone()
            };
            run_baseline(&shard, &prepared.test, &cfg)
        };
        match run() {
            Ok((model, report)) => {
                if !out_metrics.is_null() {
                    out_metrics.write(FedsimMetrics::from(&report));
                }
                out_model.write(Box::into_raw(Box::new(FedsimModel(model))));
                FedsimStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Evaluate a model on a dataset prepared the same way its training
/// data was (same standardization), writing the metrics to `out`.
#[no_mangle]
pub unsafe extern "C" fn fedsim_evaluate(
    model: *const FedsimModel,
    data: *const FedsimDataset,
    out: *mut FedsimMetrics,
) -> FedsimStatus {
    if out.is_null() {
        return fail_null("out");
    }
    let Some(model) = model.as_ref() else {
        return fail_null("model");
    };
    let Some(data) = data.as_ref() else {
        return fail_null("data");
    };
    guarded(|| match evaluate(&model.0, &data.0) {
        Ok(report) => {
            out.write(FedsimMetrics::from(&report));
            FedsimStatus::Ok
        }
        Err(e) => fail(&e),
    })
}

/// Total number of weights and biases, 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn fedsim_model_param_count(model: *const FedsimModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.param_count())
}

/// Write the model to `path` as JSON.
#[no_mangle]
pub unsafe extern "C" fn fedsim_model_save(
    model: *const FedsimModel,
    path: *const c_char,
) -> FedsimStatus {
    let Some(model) = model.as_ref() else {
        return fail_null("model");
    };
    if path.is_null() {
        return fail_null("path");
    }
    let Ok(path) = CStr::from_ptr(path).to_str() else {
        set_last_error("path is not valid UTF-8");
        return FedsimStatus::Utf8;
    };
    guarded(|| match model.0.save(path) {
        Ok(()) => FedsimStatus::Ok,
        Err(e) => fail(&e),
    })
}

/// Read a model previously written by `fedsim_model_save`.
#[no_mangle]
pub unsafe extern "C" fn fedsim_model_load(
    path: *const c_char,
    out: *mut *mut FedsimModel,
) -> FedsimStatus {
    if out.is_null() {
        return fail_null("out");
    }
    if path.is_null() {
        return fail_null("path");
    }
    let Ok(path) = CStr::from_ptr(path).to_str() else {
        set_last_error("path is not valid UTF-8");
        return FedsimStatus::Utf8;
    };
    guarded(|| match Model::load(path) {
        Ok(model) => {
            out.write(Box::into_raw(Box::new(FedsimModel(model))));
            FedsimStatus::Ok
        }
        Err(e) => fail(&e),
    })
}

/// Release a model handle. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn fedsim_model_free(model: *mut FedsimModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
