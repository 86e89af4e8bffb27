//! C ABI over the adaco library.
//!
//! Conventions:
//!
//! - Every fallible call returns an [`AdacoStatus`]. On failure a message is
//!   kept per thread and can be read with [`adaco_last_error`].
//! - Handles ([`AdacoHistory`], [`AdacoScene`]) are opaque. Each `*_new` or
//!   `*_read` has a matching `*_free`; passing NULL to a free is a no-op.
//! - Arrays are passed as pointer plus element count. Points are packed
//!   `x, y, z` triples.
//! - Panics never cross the boundary; they surface as
//!   [`AdacoStatus::Internal`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use adaco::curvefit::{self, CurveFitParams};
use adaco::geometry;
use adaco::history::PredictionHistory;
use adaco::loss::{self, LogitsBatch, LossConfig, Phase};
use adaco::scene::{self, SampleScene};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdacoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    /// The input was valid but the computation has no answer (flat curve,
    /// empty history, every fit diverged).
    Undefined = 4,
    BufferTooSmall = 5,
    Internal = 6,
}

/// Fitted saturation curve `a * (1 - exp(-t^b / c))`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdacoCurveParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub residual: f64,
}

impl From<CurveFitParams> for AdacoCurveParams {
    fn from(p: CurveFitParams) -> Self {
        Self {
            a: p.a,
            b: p.b,
            c: p.c,
            residual: p.residual,
        }
    }
}

impl From<AdacoCurveParams> for CurveFitParams {
    fn from(p: AdacoCurveParams) -> Self {
        Self {
            residual: p.residual,
            ..CurveFitParams::new(p.a, p.b, p.c)
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdacoLossConfig {
    pub lambda: f64,
    pub beta: f64,
    pub sigma: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdacoPhase {
    Warmup = 0,
    Correction = 1,
}

/// Rolling per-point prediction history.
pub struct AdacoHistory(PredictionHistory);

/// A scene loaded from disk.
pub struct AdacoScene(SampleScene);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

type Outcome = Result<(), (AdacoStatus, String)>;

fn fail<T>(status: AdacoStatus, msg: impl Into<String>) -> Result<T, (AdacoStatus, String)> {
    Err((status, msg.into()))
}

/// Run `f`, record any failure, and turn panics into `Internal`.
fn guard(f: impl FnOnce() -> Outcome) -> AdacoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            AdacoStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            AdacoStatus::Internal
        }
    }
}

fn nonnull<T>(p: *const T, name: &str) -> Result<(), (AdacoStatus, String)> {
    if p.is_null() {
        fail(AdacoStatus::NullPointer, format!("{name} is NULL"))
    } else {
        Ok(())
    }
}

/// Borrow `len` elements; a zero length accepts NULL.
unsafe fn input<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], (AdacoStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    nonnull(p, name)?;
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, len: usize, name: &str) -> Result<&'a mut [T], (AdacoStatus, String)> {
    if len == 0 {
        return Ok(&mut []);
    }
    nonnull(p, name)?;
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn points_of<'a>(xyz: *const f64, n: usize) -> Result<&'a [[f64; 3]], (AdacoStatus, String)> {
    let flat = input(xyz, n * 3, "points")?;
    Ok(slice::from_raw_parts(flat.as_ptr().cast::<[f64; 3]>(), n))
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn adaco_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL after a
/// success. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn adaco_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Fit the saturation curve to `n` per-epoch mIoU values (epoch 1 first).
///
/// # Safety
/// `series` must point to `n` readable doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn adaco_fit_curve(series: *const f64, n: usize, out: *mut AdacoCurveParams) -> AdacoStatus {
    guard(|| {
        nonnull(out, "out")?;
        let values = input(series, n, "series")?;
        match curvefit::fit_curve(values) {
            Ok(p) => {
                *out = p.into();
                Ok(())
            }
            Err(e @ curvefit::FitError::FitFailed) => fail(AdacoStatus::Undefined, e.to_string()),
            Err(e) => fail(AdacoStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Curve value at epoch `t`.
#[no_mangle]
pub extern "C" fn adaco_eval_curve(params: AdacoCurveParams, t: f64) -> f64 {
    curvefit::eval_curve(&params.into(), t)
}

/// Curve slope at epoch `t`.
#[no_mangle]
pub extern "C" fn adaco_eval_derivative(params: AdacoCurveParams, t: f64) -> f64 {
    curvefit::eval_derivative(&params.into(), t)
}

/// First epoch in `1..=max_epoch` where `|f'(1) - f'(t)| / f'(1) > r`, or 0
/// when it never fires.
///
/// # Safety
/// `out_epoch` must be writable.
#[no_mangle]
pub unsafe extern "C" fn adaco_first_trigger_epoch(
    params: AdacoCurveParams,
    r: f64,
    max_epoch: usize,
    out_epoch: *mut usize,
) -> AdacoStatus {
    guard(|| {
        nonnull(out_epoch, "out_epoch")?;
        match curvefit::first_trigger_epoch(&params.into(), r, max_epoch) {
            Ok(t) => {
                *out_epoch = t.unwrap_or(0);
                Ok(())
            }
            Err(e) => fail(AdacoStatus::Undefined, e.to_string()),
        }
    })
}

/// Cluster `n` points. Writes one id per point (`-1` for noise) and the
/// cluster count.
///
/// # Safety
/// `xyz` must hold `3 * n` doubles, `out_assignment` room for `n` ids and
/// `out_clusters` must be writable.
#[no_mangle]
pub unsafe extern "C" fn adaco_dbscan(
    xyz: *const f64,
    n: usize,
    eps: f64,
    min_pts: usize,
    out_assignment: *mut i64,
    out_clusters: *mut usize,
) -> AdacoStatus {
    guard(|| {
        nonnull(out_clusters, "out_clusters")?;
        let pts = points_of(xyz, n)?;
        let out = output(out_assignment, n, "out_assignment")?;
        let clusters = geometry::dbscan(pts, eps, min_pts).or_else(|e| fail(AdacoStatus::InvalidArgument, e.to_string()))?;
        out.copy_from_slice(&clusters.assignment);
        *out_clusters = clusters.num_clusters;
        Ok(())
    })
}

/// Adaptive robust loss over `n x k` row-major logits. `out_grad` may be
/// NULL; otherwise it receives `n * k` gradient entries.
///
/// # Safety
/// `logits` must hold `n * k` doubles, `targets` `n` labels (65535 means
/// ignored), `config` and `out_value` must be valid.
#[no_mangle]
pub unsafe extern "C" fn adaco_arl(
    logits: *const f64,
    targets: *const u16,
    n: usize,
    k: usize,
    config: *const AdacoLossConfig,
    phase: AdacoPhase,
    out_value: *mut f64,
    out_grad: *mut f64,
) -> AdacoStatus {
    guard(|| {
        nonnull(config, "config")?;
        nonnull(out_value, "out_value")?;
        let logits = input(logits, n * k, "logits")?;
        let targets = input(targets, n, "targets")?;
        let c = &*config;
        let cfg = LossConfig {
            lambda: c.lambda,
            beta: c.beta,
            sigma: c.sigma,
            use_feature_mse: false,
        };
        let phase = match phase {
            AdacoPhase::Warmup => Phase::Warmup,
            AdacoPhase::Correction => Phase::Correction,
        };
        let batch = LogitsBatch::new(logits, targets, k).or_else(|e| fail(AdacoStatus::InvalidArgument, e.to_string()))?;
        let out = match loss::arl(&batch, None, &cfg, phase) {
            Ok(o) => o,
            Err(e @ loss::LossError::EmptyBatch) => return fail(AdacoStatus::Undefined, e.to_string()),
            Err(e) => return fail(AdacoStatus::InvalidArgument, e.to_string()),
        };
        *out_value = out.value;
        if !out_grad.is_null() {
            output(out_grad, n * k, "out_grad")?.copy_from_slice(&out.grad_logits);
        }
        Ok(())
    })
}

/// New empty history for `n_points` points, `num_classes` classes and the
/// last `capacity` rounds.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn adaco_history_new(
    n_points: usize,
    num_classes: usize,
    capacity: usize,
    out: *mut *mut AdacoHistory,
) -> AdacoStatus {
    guard(|| {
        nonnull(out, "out")?;
        let h = PredictionHistory::new(n_points, num_classes, capacity)
            .or_else(|e| fail(AdacoStatus::InvalidArgument, e.to_string()))?;
        *out = Box::into_raw(Box::new(AdacoHistory(h)));
        Ok(())
    })
}

/// # Safety
/// `history` must come from [`adaco_history_new`] and not be used again.
#[no_mangle]
pub unsafe extern "C" fn adaco_history_free(history: *mut AdacoHistory) {
    if !history.is_null() {
        drop(Box::from_raw(history));
    }
}

/// Append one round of `n` hard predictions.
///
/// # Safety
/// `history` must be a live handle and `predictions` hold `n` labels.
#[no_mangle]
pub unsafe extern "C" fn adaco_history_record(
    history: *mut AdacoHistory,
    predictions: *const u16,
    n: usize,
) -> AdacoStatus {
    guard(|| {
        nonnull(history, "history")?;
        let preds = input(predictions, n, "predictions")?;
        (*history)
            .0
            .record(preds)
            .or_else(|e| fail(AdacoStatus::InvalidArgument, e.to_string()))
    })
}

/// Rounds currently held (at most the capacity).
///
/// # Safety
/// `history` must be a live handle or NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn adaco_history_rounds(history: *const AdacoHistory) -> usize {
    history.as_ref().map_or(0, |h| h.0.q_valid())
}

/// Confidence of one point, in `[0, 1]`.
///
/// # Safety
/// `history` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn adaco_history_confidence(
    history: *const AdacoHistory,
    point: usize,
    out: *mut f64,
) -> AdacoStatus {
    guard(|| {
        nonnull(history, "history")?;
        nonnull(out, "out")?;
        match (*history).0.confidence(point) {
            Ok(c) => {
                *out = c;
                Ok(())
            }
            Err(e @ adaco::history::HistoryError::Empty) => fail(AdacoStatus::Undefined, e.to_string()),
            Err(e) => fail(AdacoStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Points with confidence at least `gamma` and their modal labels, in
/// ascending point order. `out_len` always receives the full count; when it
/// exceeds `capacity` nothing is written and `BufferTooSmall` is returned.
///
/// # Safety
/// `history` must be a live handle, `indices` and `labels` must have room
/// for `capacity` entries, `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn adaco_history_reliable_set(
    history: *const AdacoHistory,
    gamma: f64,
    indices: *mut usize,
    labels: *mut u16,
    capacity: usize,
    out_len: *mut usize,
) -> AdacoStatus {
    guard(|| {
        nonnull(history, "history")?;
        nonnull(out_len, "out_len")?;
        let set = (*history).0.reliable_set(gamma).or_else(|e| match e {
            adaco::history::HistoryError::Empty => fail(AdacoStatus::Undefined, e.to_string()),
            _ => fail(AdacoStatus::InvalidArgument, e.to_string()),
        })?;
        let len = set.indices.len();
        *out_len = len;
        if len > capacity {
            return fail(AdacoStatus::BufferTooSmall, format!("{len} reliable points, room for {capacity}"));
        }
        output(indices, len, "indices")?.copy_from_slice(&set.indices);
        output(labels, len, "labels")?.copy_from_slice(&set.labels);
        Ok(())
    })
}

/// Load a scene directory.
///
/// # Safety
/// `dir` must be a NUL-terminated UTF-8 path and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn adaco_scene_read(dir: *const c_char, out: *mut *mut AdacoScene) -> AdacoStatus {
    guard(|| {
        nonnull(dir, "dir")?;
        nonnull(out, "out")?;
        let path = CStr::from_ptr(dir)
            .to_str()
            .or_else(|_| fail(AdacoStatus::InvalidArgument, "path is not UTF-8"))?;
        let (s, _) = scene::read_scene(Path::new(path)).or_else(|e| match e {
            scene::SceneError::Io { .. } => fail(AdacoStatus::Io, e.to_string()),
            _ => fail(AdacoStatus::InvalidArgument, e.to_string()),
        })?;
        *out = Box::into_raw(Box::new(AdacoScene(s)));
        Ok(())
    })
}

/// # Safety
/// `scene` must come from [`adaco_scene_read`] and not be used again.
#[no_mangle]
pub unsafe extern "C" fn adaco_scene_free(scene: *mut AdacoScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// # Safety
/// `scene` must be a live handle or NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn adaco_scene_num_points(scene: *const AdacoScene) -> usize {
    scene.as_ref().map_or(0, |s| s.0.points.len())
}

/// # Safety
/// `scene` must be a live handle or NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn adaco_scene_num_classes(scene: *const AdacoScene) -> usize {
    scene.as_ref().map_or(0, |s| s.0.num_classes)
}

/// Packed `x, y, z` floats, `3 * num_points` of them, owned by the handle.
///
/// # Safety
/// `scene` must be a live handle or NULL (returns NULL).
#[no_mangle]
pub unsafe extern "C" fn adaco_scene_points(scene: *const AdacoScene) -> *const f32 {
    scene.as_ref().map_or(ptr::null(), |s| s.0.points.as_ptr().cast())
}

/// Noisy (training) labels, `num_points` of them, owned by the handle.
///
/// # Safety
/// `scene` must be a live handle or NULL (returns NULL).
#[no_mangle]
pub unsafe extern "C" fn adaco_scene_labels(scene: *const AdacoScene) -> *const u16 {
    scene.as_ref().map_or(ptr::null(), |s| s.0.noisy_labels.as_ptr())
}

/// Clean labels, or NULL when the scene has none.
///
/// # Safety
/// `scene` must be a live handle or NULL (returns NULL).
#[no_mangle]
pub unsafe extern "C" fn adaco_scene_clean_labels(scene: *const AdacoScene) -> *const u16 {
    scene
        .as_ref()
        .and_then(|s| s.0.clean_labels.as_ref())
        .map_or(ptr::null(), |l| l.as_ptr())
}
