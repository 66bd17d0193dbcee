//! C ABI over the `mgadn` detector.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_load`
//! style functions and released with the matching `*_free`. Every fallible
//! call returns an [`MgadnStatus`]; on failure a message describing the
//! cause is kept per thread and read with [`mgadn_last_error`].
//!
//! Matrices are row-major `f64` buffers of `rows * sensors` entries.
//!
//! # Safety
//!
//! Every pointer argument must be null or valid for the access its
//! documentation describes: handles must come from this library and not
//! yet be freed, buffers must hold the stated number of elements, and
//! strings must be NUL-terminated. Null is always detected and reported.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use mgadn::checkpoint::Checkpoint;
use mgadn::config::{PartialRunConfig, RunConfig};
use mgadn::data::{self, TimeSeriesDataset};
use mgadn::detector::Detector;
use mgadn::mtl::{mgda_alpha, GradPair};
use mgadn::scoring;
use mgadn::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MgadnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Data = 5,
    Config = 6,
    Checkpoint = 7,
    Numeric = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// A trained detector together with the metadata needed to save it.
pub struct MgadnDetector {
    checkpoint: Checkpoint,
    detector: Detector,
}

/// A labelled multivariate series.
pub struct MgadnDataset {
    inner: TimeSeriesDataset,
}

/// Point-wise detection metrics.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MgadnMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> MgadnStatus {
    match e {
        Error::InvalidArgument(_) | Error::Shape { .. } | Error::NotScalar(_) => MgadnStatus::InvalidArgument,
        Error::Io { .. } => MgadnStatus::Io,
        Error::Parse { .. } | Error::Csv(_) | Error::Json(_) => MgadnStatus::Parse,
        Error::Data(_) => MgadnStatus::Data,
        Error::Config(_) => MgadnStatus::Config,
        Error::Checkpoint(_) | Error::UnknownParam(_) | Error::UnknownTag(_) => MgadnStatus::Checkpoint,
        Error::NonFinite { .. } | Error::Diverged { .. } => MgadnStatus::Numeric,
    }
}

/// Internal failure carrying its status code.
struct Fail(MgadnStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn fail<T>(status: MgadnStatus, msg: impl Into<String>) -> Result<T, Fail> {
    Err(Fail(status, msg.into()))
}

/// Runs `body`, turning errors and panics into a status plus message.
fn guard(body: impl FnOnce() -> Result<(), Fail>) -> MgadnStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            MgadnStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            MgadnStatus::Panic
        }
    }
}

fn non_null<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    // SAFETY: callers pass pointers obtained from this library or valid
    // caller-owned memory; null is rejected here.
    unsafe { p.as_ref() }.ok_or_else(|| Fail(MgadnStatus::NullPointer, format!("{what} is null")))
}

fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    // SAFETY: as for `non_null`, for a writable location.
    unsafe { p.as_mut() }.ok_or_else(|| Fail(MgadnStatus::NullPointer, format!("{what} is null")))
}

fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(MgadnStatus::NullPointer, format!("{what} is null"));
    }
    // SAFETY: the caller guarantees `len` readable elements at `p`.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return fail(MgadnStatus::NullPointer, format!("{what} is null"));
    }
    // SAFETY: the caller guarantees `len` writable elements at `p`.
    Ok(unsafe { std::slice::from_raw_parts_mut(p, len) })
}

fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return fail(MgadnStatus::NullPointer, format!("{what} is null"));
    }
    // SAFETY: the caller passes a NUL-terminated string.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Fail(MgadnStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

fn rows_of(values: &[f64], rows: usize, cols: usize) -> Vec<Vec<f64>> {
    values.chunks(cols).take(rows).map(<[f64]>::to_vec).collect()
}

/// Message for the most recent failure on this thread, or null after a
/// success. The pointer stays valid until the next call into the library
/// from the same thread.
#[no_mangle]
pub extern "C" fn mgadn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mgadn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Generates a seeded synthetic labelled series.
#[no_mangle]
pub unsafe extern "C" fn mgadn_synth_generate(
    n_sensors: usize,
    n_steps: usize,
    anomaly_rate: f64,
    seed: u64,
    out: *mut *mut MgadnDataset,
) -> MgadnStatus {
    guard(|| {
        let slot = out_ptr(out, "out")?;
        *slot = ptr::null_mut();
        let inner = data::synth_generate(n_sensors, n_steps, anomaly_rate, seed)?;
        *slot = Box::into_raw(Box::new(MgadnDataset { inner }));
        Ok(())
    })
}

/// Wraps caller-provided rows; `labels` may be null.
#[no_mangle]
pub unsafe extern "C" fn mgadn_dataset_new(
    values: *const f64,
    n_rows: usize,
    n_sensors: usize,
    labels: *const u8,
    out: *mut *mut MgadnDataset,
) -> MgadnStatus {
    guard(|| {
        let slot = out_ptr(out, "out")?;
        *slot = ptr::null_mut();
        let len = n_rows
            .checked_mul(n_sensors)
            .ok_or_else(|| Fail(MgadnStatus::InvalidArgument, "rows * sensors overflows".into()))?;
        let v = slice(values, len, "values")?;
        let labels = if labels.is_null() {
            None
        } else {
            Some(slice(labels, n_rows, "labels")?.to_vec())
        };
        let names = (0..n_sensors).map(|i| format!("s{i}")).collect();
        let inner = TimeSeriesDataset::new(names, rows_of(v, n_rows, n_sensors), labels)?;
        *slot = Box::into_raw(Box::new(MgadnDataset { inner }));
        Ok(())
    })
}

/// Number of rows and sensors.
#[no_mangle]
pub unsafe extern "C" fn mgadn_dataset_shape(
    ds: *const MgadnDataset,
    n_rows: *mut usize,
    n_sensors: *mut usize,
) -> MgadnStatus {
    guard(|| {
        let ds = non_null(ds, "dataset")?;
        *out_ptr(n_rows, "n_rows")? = ds.inner.n_steps();
        *out_ptr(n_sensors, "n_sensors")? = ds.inner.n_sensors();
        Ok(())
    })
}

/// Copies all values into `buf`, which must hold `rows * sensors` entries.
#[no_mangle]
pub unsafe extern "C" fn mgadn_dataset_values(ds: *const MgadnDataset, buf: *mut f64, buf_len: usize) -> MgadnStatus {
    guard(|| {
        let ds = non_null(ds, "dataset")?;
        let need = ds.inner.n_steps() * ds.inner.n_sensors();
        if buf_len < need {
            return fail(
                MgadnStatus::BufferTooSmall,
                format!("need {need} values, got room for {buf_len}"),
            );
        }
        let dst = slice_mut(buf, need, "buf")?;
        for (d, s) in dst.iter_mut().zip(ds.inner.values.iter().flatten()) {
            *d = *s;
        }
        Ok(())
    })
}

/// Copies the 0/1 labels into `buf` (one per row). Fails with
/// `MGADN_STATUS_DATA` when the dataset is unlabelled.
#[no_mangle]
pub unsafe extern "C" fn mgadn_dataset_labels(ds: *const MgadnDataset, buf: *mut u8, buf_len: usize) -> MgadnStatus {
    guard(|| {
        let ds = non_null(ds, "dataset")?;
        let labels = ds
            .inner
            .labels
            .as_ref()
            .ok_or_else(|| Fail(MgadnStatus::Data, "dataset has no labels".into()))?;
        if buf_len < labels.len() {
            return fail(
                MgadnStatus::BufferTooSmall,
                format!("need {} labels, got room for {buf_len}", labels.len()),
            );
        }
        slice_mut(buf, labels.len(), "buf")?.copy_from_slice(labels);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mgadn_dataset_free(ds: *mut MgadnDataset) {
    if !ds.is_null() {
        // SAFETY: `ds` came from `Box::into_raw` in this library.
        drop(unsafe { Box::from_raw(ds) });
    }
}

fn wrap(checkpoint: Checkpoint) -> Result<*mut MgadnDetector, Fail> {
    let detector = checkpoint.detector()?;
    Ok(Box::into_raw(Box::new(MgadnDetector { checkpoint, detector })))
}

/// Loads a detector from a checkpoint file.
#[no_mangle]
pub unsafe extern "C" fn mgadn_detector_load(path: *const c_char, out: *mut *mut MgadnDetector) -> MgadnStatus {
    guard(|| {
        let slot = out_ptr(out, "out")?;
        *slot = ptr::null_mut();
        let path = PathBuf::from(string(path, "path")?);
        *slot = wrap(Checkpoint::load(&path)?)?;
        Ok(())
    })
}

/// Trains a detector on `ds`. `config_toml` holds optional run settings
/// in the same keys the command-line config file accepts; null means
/// defaults.
#[no_mangle]
pub unsafe extern "C" fn mgadn_detector_train(
    ds: *const MgadnDataset,
    config_toml: *const c_char,
    out: *mut *mut MgadnDetector,
) -> MgadnStatus {
    guard(|| {
        let slot = out_ptr(out, "out")?;
        *slot = ptr::null_mut();
        let ds = non_null(ds, "dataset")?;
        let file = if config_toml.is_null() {
            None
        } else {
            Some(PartialRunConfig::from_toml(string(config_toml, "config")?)?)
        };
        let cfg = RunConfig::layered(file.as_ref(), &PartialRunConfig::default())?;
        let ck = mgadn::cli::train_checkpoint(&cfg, ds.inner.clone(), |_| {})?;
        *slot = wrap(ck)?;
        Ok(())
    })
}

/// Writes the detector as a checkpoint file, atomically.
#[no_mangle]
pub unsafe extern "C" fn mgadn_detector_save(det: *const MgadnDetector, path: *const c_char) -> MgadnStatus {
    guard(|| {
        let det = non_null(det, "detector")?;
        det.checkpoint.save(&PathBuf::from(string(path, "path")?))?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mgadn_detector_n_sensors(det: *const MgadnDetector, out: *mut usize) -> MgadnStatus {
    guard(|| {
        *out_ptr(out, "out")? = non_null(det, "detector")?.detector.model.config.n_sensors;
        Ok(())
    })
}

/// Window length; scoring `n` rows yields `n - window` scores.
#[no_mangle]
pub unsafe extern "C" fn mgadn_detector_window(det: *const MgadnDetector, out: *mut usize) -> MgadnStatus {
    guard(|| {
        *out_ptr(out, "out")? = non_null(det, "detector")?.detector.model.config.window;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mgadn_detector_threshold(det: *const MgadnDetector, out: *mut f64) -> MgadnStatus {
    guard(|| {
        *out_ptr(out, "out")? = non_null(det, "detector")?.detector.threshold;
        Ok(())
    })
}

/// Scores raw (unnormalized) rows. Row `window + k` gets score `k`, so
/// `scores` needs room for `n_rows - window` entries; `verdicts` may be
/// null, otherwise it receives one 0/1 flag per score. The number of
/// scores written goes to `n_written`.
#[no_mangle]
pub unsafe extern "C" fn mgadn_detector_score(
    det: *const MgadnDetector,
    values: *const f64,
    n_rows: usize,
    n_sensors: usize,
    scores: *mut f64,
    verdicts: *mut u8,
    capacity: usize,
    n_written: *mut usize,
) -> MgadnStatus {
    guard(|| {
        let det = non_null(det, "detector")?;
        let written = out_ptr(n_written, "n_written")?;
        *written = 0;
        let cfg = &det.detector.model.config;
        if n_sensors != cfg.n_sensors {
            return fail(
                MgadnStatus::InvalidArgument,
                format!("detector expects {} sensors, got {n_sensors}", cfg.n_sensors),
            );
        }
        if n_rows <= cfg.window {
            return fail(
                MgadnStatus::InvalidArgument,
                format!("need more than {} rows, got {n_rows}", cfg.window),
            );
        }
        let need = n_rows - cfg.window;
        if capacity < need {
            return fail(
                MgadnStatus::BufferTooSmall,
                format!("need {need} scores, got room for {capacity}"),
            );
        }
        let v = slice(values, n_rows * n_sensors, "values")?;
        let scored = det.detector.score_raw(&rows_of(v, n_rows, n_sensors))?;
        slice_mut(scores, need, "scores")?.copy_from_slice(&scored.aggregate);
        if !verdicts.is_null() {
            let flags = scoring::verdicts(&scored.aggregate, det.detector.threshold);
            slice_mut(verdicts, need, "verdicts")?.copy_from_slice(&flags);
        }
        *written = need;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mgadn_detector_free(det: *mut MgadnDetector) {
    if !det.is_null() {
        // SAFETY: `det` came from `Box::into_raw` in this library.
        drop(unsafe { Box::from_raw(det) });
    }
}

/// Weight on the forecast loss that minimises the norm of the combined
/// gradient, given both heads' gradients with respect to the shared output.
#[no_mangle]
pub unsafe extern "C" fn mgadn_mgda_alpha(
    g_pred: *const f64,
    g_recon: *const f64,
    len: usize,
    out: *mut f64,
) -> MgadnStatus {
    guard(|| {
        let slot = out_ptr(out, "out")?;
        let g = GradPair {
            g_pred: slice(g_pred, len, "g_pred")?.to_vec(),
            g_recon: slice(g_recon, len, "g_recon")?.to_vec(),
        };
        *slot = mgda_alpha(&g)?;
        Ok(())
    })
}

/// Precision, recall and F1 of 0/1 verdicts against 0/1 labels.
#[no_mangle]
pub unsafe extern "C" fn mgadn_metrics(
    verdicts: *const u8,
    labels: *const u8,
    len: usize,
    out: *mut MgadnMetrics,
) -> MgadnStatus {
    guard(|| {
        let slot = out_ptr(out, "out")?;
        let m = scoring::metrics(slice(verdicts, len, "verdicts")?, slice(labels, len, "labels")?)?;
        *slot = MgadnMetrics {
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            tp: m.tp,
            fp: m.fp,
            fn_: m.fn_,
            tn: m.tn,
        };
        Ok(())
    })
}
