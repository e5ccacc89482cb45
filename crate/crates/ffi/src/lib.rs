//! C ABI over the causal-crowds core: velocity solvers, error metrics and
//! dataset splits behind opaque handles.
//!
//! Every fallible function returns a [`CcStatus`]. On failure the message is
//! kept per thread and read back with [`cc_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use causal_crowds::counterfactual::Category;
use causal_crowds::dataset::{self, DatasetError, Manifest};
use causal_crowds::metrics;
use causal_crowds::scenario::{generate_split, SceneRecord, Split, SplitSpec};
use causal_crowds::sim::{solve_lp2, solve_lp3, OrcaLine};
use glam::DVec2;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    OutOfRange = 3,
    BufferTooSmall = 4,
    Io = 5,
    Parse = 6,
    DigestMismatch = 7,
    InvariantViolation = 8,
    Infeasible = 9,
    Internal = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CcVec2 {
    pub x: f64,
    pub y: f64,
}

/// Half-plane of admissible velocities: left of `point + t * direction`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CcOrcaLine {
    pub point: CcVec2,
    pub direction: CcVec2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CcCategory {
    NonCausal = 0,
    DirectCausal = 1,
    IndirectCausal = 2,
    Ambiguous = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CcAnnotation {
    pub agent_id: usize,
    pub effect: f64,
    pub category: CcCategory,
}

/// Loaded or generated split. Strings handed out stay valid until
/// [`cc_split_free`].
pub struct CcSplit {
    records: Vec<SceneRecord>,
    manifest: Manifest,
    scene_ids: Vec<CString>,
    digest: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(CcStatus, String);

type Outcome = Result<(), Failure>;

fn fail(status: CcStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Outcome) -> CcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CcStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            CcStatus::Internal
        }
    }
}

fn dataset_failure(e: DatasetError) -> Failure {
    let status = match &e {
        DatasetError::Io { .. } => CcStatus::Io,
        DatasetError::Parse { .. } => CcStatus::Parse,
        DatasetError::DigestMismatch { .. } => CcStatus::DigestMismatch,
        DatasetError::InvariantViolation(_)
        | DatasetError::UnknownScene(_)
        | DatasetError::UnknownAgent { .. }
        | DatasetError::MissingFactual(_) => CcStatus::InvariantViolation,
    };
    fail(status, e.to_string())
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(fail(CcStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

/// # Safety
/// `p` must be valid for `n` reads when `n > 0`.
unsafe fn slice<'a, T>(p: *const T, n: usize, name: &str) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    non_null(p, name)?;
    Ok(std::slice::from_raw_parts(p, n))
}

/// # Safety
/// `p` must be a valid NUL-terminated string.
unsafe fn path_arg(p: *const c_char, name: &str) -> Result<PathBuf, Failure> {
    non_null(p, name)?;
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(CcStatus::InvalidArgument, format!("{name} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

fn dvec(v: CcVec2) -> DVec2 {
    DVec2::new(v.x, v.y)
}

fn ccvec(v: DVec2) -> CcVec2 {
    CcVec2 { x: v.x, y: v.y }
}

fn lines_of(lines: &[CcOrcaLine]) -> Result<Vec<OrcaLine>, Failure> {
    lines
        .iter()
        .map(|l| {
            let d = dvec(l.direction);
            if !(d.is_finite() && dvec(l.point).is_finite()) || (d.length() - 1.0).abs() > 1e-9 {
                return Err(fail(CcStatus::InvalidArgument, "line directions must be finite unit vectors"));
            }
            Ok(OrcaLine {
                point: dvec(l.point),
                direction: d,
            })
        })
        .collect()
}

fn check_speed(v_max: f64) -> Outcome {
    if v_max.is_finite() && v_max > 0.0 {
        Ok(())
    } else {
        Err(fail(CcStatus::InvalidArgument, "v_max must be positive and finite"))
    }
}

fn split_ref<'a>(split: *const CcSplit) -> Result<&'a CcSplit, Failure> {
    non_null(split, "split")?;
    // SAFETY: non-null handles come from this library.
    Ok(unsafe { &*split })
}

fn scene_ref(split: &CcSplit, scene: usize) -> Result<&SceneRecord, Failure> {
    split
        .records
        .get(scene)
        .ok_or_else(|| fail(CcStatus::OutOfRange, format!("scene index {scene} of {}", split.records.len())))
}

fn into_handle(records: Vec<SceneRecord>, manifest: Manifest) -> Result<*mut CcSplit, Failure> {
    let scene_ids = records
        .iter()
        .map(|r| CString::new(r.scene_id.clone()).map_err(|_| fail(CcStatus::InvariantViolation, "scene id contains NUL")))
        .collect::<Result<Vec<_>, _>>()?;
    let digest = CString::new(manifest.digest.clone()).map_err(|_| fail(CcStatus::InvariantViolation, "bad digest"))?;
    Ok(Box::into_raw(Box::new(CcSplit {
        records,
        manifest,
        scene_ids,
        digest,
    })))
}

/// Message of the last failure on this thread, or null. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn cc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version, static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Velocity closest to `v_pref` inside the speed disc and every half-plane.
/// Returns `Infeasible` when no such velocity exists.
///
/// # Safety
/// `lines` must be valid for `n` reads; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cc_solve_lp2(lines: *const CcOrcaLine, n: usize, v_pref: CcVec2, v_max: f64, out: *mut CcVec2) -> CcStatus {
    guard(|| {
        non_null(out, "out")?;
        check_speed(v_max)?;
        let lines = lines_of(slice(lines, n, "lines")?)?;
        match solve_lp2(&lines, dvec(v_pref), v_max) {
            Some(v) => {
                *out = ccvec(v);
                Ok(())
            }
            None => Err(fail(CcStatus::Infeasible, "constraints are infeasible")),
        }
    })
}

/// Velocity in the speed disc minimising the largest half-plane violation.
///
/// # Safety
/// `lines` must be valid for `n` reads; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cc_solve_lp3(lines: *const CcOrcaLine, n: usize, v_max: f64, out: *mut CcVec2) -> CcStatus {
    guard(|| {
        non_null(out, "out")?;
        check_speed(v_max)?;
        let lines = lines_of(slice(lines, n, "lines")?)?;
        *out = ccvec(solve_lp3(&lines, v_max));
        Ok(())
    })
}

/// # Safety
/// `pred` and `truth` must be valid for `n` reads; `out` must be writable.
unsafe fn metric(
    pred: *const CcVec2,
    truth: *const CcVec2,
    n: usize,
    out: *mut f64,
    f: fn(&[DVec2], &[DVec2]) -> Result<f64, metrics::MetricsError>,
) -> CcStatus {
    guard(|| {
        non_null(out, "out")?;
        let p: Vec<DVec2> = slice(pred, n, "pred")?.iter().map(|v| dvec(*v)).collect();
        let t: Vec<DVec2> = slice(truth, n, "truth")?.iter().map(|v| dvec(*v)).collect();
        *out = f(&p, &t).map_err(|e| fail(CcStatus::InvalidArgument, e.to_string()))?;
        Ok(())
    })
}

/// Mean point-wise distance of two `n`-point trajectories.
///
/// # Safety
/// `pred` and `truth` must be valid for `n` reads; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cc_ade(pred: *const CcVec2, truth: *const CcVec2, n: usize, out: *mut f64) -> CcStatus {
    metric(pred, truth, n, out, metrics::ade)
}

/// Distance between the last points of two `n`-point trajectories.
///
/// # Safety
/// `pred` and `truth` must be valid for `n` reads; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cc_fde(pred: *const CcVec2, truth: *const CcVec2, n: usize, out: *mut f64) -> CcStatus {
    metric(pred, truth, n, out, metrics::fde)
}

/// Generate a split with default settings. `split` is one of `id`,
/// `ood_density`, `ood_context`, `ood_density_context`.
///
/// # Safety
/// `split` must be a valid string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cc_split_generate(split: *const c_char, num_scenes: usize, seed: u64, out: *mut *mut CcSplit) -> CcStatus {
    guard(|| {
        non_null(out, "out")?;
        non_null(split, "split")?;
        let name = CStr::from_ptr(split).to_str().unwrap_or("");
        let kind = Split::parse(name).ok_or_else(|| fail(CcStatus::InvalidArgument, format!("unknown split {name:?}")))?;
        let spec = SplitSpec::new(kind, num_scenes, seed);
        let (records, _) = generate_split(&spec).map_err(|e| fail(CcStatus::InvalidArgument, e.to_string()))?;
        let manifest = Manifest::new(&spec, &records).map_err(dataset_failure)?;
        *out = into_handle(records, manifest)?;
        Ok(())
    })
}

/// Load and fully validate a split directory.
///
/// # Safety
/// `dir` must be a valid string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cc_split_read(dir: *const c_char, out: *mut *mut CcSplit) -> CcStatus {
    guard(|| {
        non_null(out, "out")?;
        let dir = path_arg(dir, "dir")?;
        let (records, manifest) = dataset::read_split(&dir).map_err(dataset_failure)?;
        *out = into_handle(records, manifest)?;
        Ok(())
    })
}

/// Write a split to an existing directory.
///
/// # Safety
/// `split` must be a live handle; `dir` a valid string.
#[no_mangle]
pub unsafe extern "C" fn cc_split_write(split: *const CcSplit, dir: *const c_char) -> CcStatus {
    guard(|| {
        let s = split_ref(split)?;
        let dir = path_arg(dir, "dir")?;
        dataset::write_split(&dir, &s.records, &s.manifest).map_err(dataset_failure)
    })
}

/// Release a split handle. Null is ignored.
///
/// # Safety
/// `split` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cc_split_free(split: *mut CcSplit) {
    if !split.is_null() {
        drop(Box::from_raw(split));
    }
}

/// Number of scenes, 0 for a null handle.
///
/// # Safety
/// `split` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cc_split_len(split: *const CcSplit) -> usize {
    split.as_ref().map_or(0, |s| s.records.len())
}

/// Hex content digest; null for a null handle.
///
/// # Safety
/// `split` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cc_split_digest(split: *const CcSplit) -> *const c_char {
    split.as_ref().map_or(ptr::null(), |s| s.digest.as_ptr())
}

/// Scene id, or null when out of range.
///
/// # Safety
/// `split` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cc_split_scene_id(split: *const CcSplit, scene: usize) -> *const c_char {
    split
        .as_ref()
        .and_then(|s| s.scene_ids.get(scene))
        .map_or(ptr::null(), |c| c.as_ptr())
}

/// Agent count (ego included) and step count of a scene.
///
/// # Safety
/// `split` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn cc_split_scene_shape(
    split: *const CcSplit,
    scene: usize,
    num_agents: *mut usize,
    num_steps: *mut usize,
) -> CcStatus {
    guard(|| {
        non_null(num_agents, "num_agents")?;
        non_null(num_steps, "num_steps")?;
        let r = scene_ref(split_ref(split)?, scene)?;
        *num_agents = r.num_agents();
        *num_steps = r.config.total_steps;
        Ok(())
    })
}

/// Copy one agent's positions into `out`. `capacity` must cover the step count.
///
/// # Safety
/// `split` must be a live handle; `out` writable for `capacity` points.
#[no_mangle]
pub unsafe extern "C" fn cc_split_trajectory(
    split: *const CcSplit,
    scene: usize,
    agent: usize,
    out: *mut CcVec2,
    capacity: usize,
) -> CcStatus {
    guard(|| {
        let r = scene_ref(split_ref(split)?, scene)?;
        let t = r
            .trajectories
            .get(agent)
            .ok_or_else(|| fail(CcStatus::OutOfRange, format!("agent {agent} of {}", r.num_agents())))?;
        if capacity < t.len() {
            return Err(fail(CcStatus::BufferTooSmall, format!("need {} points", t.len())));
        }
        non_null(out, "out")?;
        for (i, p) in t.iter().enumerate() {
            *out.add(i) = ccvec(*p);
        }
        Ok(())
    })
}

/// Number of annotated neighbours of a scene, 0 when out of range.
///
/// # Safety
/// `split` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cc_split_num_annotations(split: *const CcSplit, scene: usize) -> usize {
    split.as_ref().and_then(|s| s.records.get(scene)).map_or(0, |r| r.annotations.len())
}

/// The `k`-th annotation of a scene, ordered by agent id.
///
/// # Safety
/// `split` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cc_split_annotation(split: *const CcSplit, scene: usize, k: usize, out: *mut CcAnnotation) -> CcStatus {
    guard(|| {
        non_null(out, "out")?;
        let r = scene_ref(split_ref(split)?, scene)?;
        let a = r
            .annotations
            .get(k)
            .ok_or_else(|| fail(CcStatus::OutOfRange, format!("annotation {k} of {}", r.annotations.len())))?;
        *out = CcAnnotation {
            agent_id: a.agent_id,
            effect: a.effect,
            category: match a.category {
                Category::NonCausal => CcCategory::NonCausal,
                Category::DirectCausal => CcCategory::DirectCausal,
                Category::IndirectCausal => CcCategory::IndirectCausal,
                Category::Ambiguous => CcCategory::Ambiguous,
            },
        };
        Ok(())
    })
}
