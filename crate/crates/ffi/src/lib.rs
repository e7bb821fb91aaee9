//! C ABI over `esd-core`.
//!
//! Scenes, lexicons and policies are opaque heap handles released with
//! their `*_free` function. Every fallible call returns an [`EsdStatus`];
//! on failure [`esd_last_error`] describes the cause for the calling thread.
//! Strings returned through out-parameters are owned by the caller and must
//! be released with [`esd_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use esd_core::gridscene::{generate_scene, Action, Pose, RoomType, Scene, SceneGenConfig, NUM_ACTIONS};
use esd_core::harness::{render_ascii, Overlay};
use esd_core::langmetrics::{bleu, rouge_l, tokenize, ReferenceSet};
use esd_core::lexicon::Lexicon;
use esd_core::perception::{observe, ScoreMode, SensorConfig};
use esd_core::policy::{rollout, EpisodeEnv, PolicyParams, PolicyShape, RolloutMode, TrainConfig, DEFAULT_LANG_DIM};
use esd_core::scoring::{hungarian_max_matching, viewpoint_score, ScoringConfig};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EsdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Parse = 4,
    Infeasible = 5,
    Failed = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EsdRoomType {
    LivingRoom = 0,
    Kitchen = 1,
    Bedroom = 2,
    Bathroom = 3,
}

impl From<EsdRoomType> for RoomType {
    fn from(r: EsdRoomType) -> Self {
        match r {
            EsdRoomType::LivingRoom => RoomType::LivingRoom,
            EsdRoomType::Kitchen => RoomType::Kitchen,
            EsdRoomType::Bedroom => RoomType::Bedroom,
            EsdRoomType::Bathroom => RoomType::Bathroom,
        }
    }
}

/// Grid cell plus heading in 45 degree steps (0 faces +y, clockwise).
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EsdPose {
    pub x: u32,
    pub y: u32,
    pub h: u8,
}

impl From<EsdPose> for Pose {
    fn from(p: EsdPose) -> Self {
        Pose {
            x: p.x as usize,
            y: p.y as usize,
            h: p.h,
        }
    }
}

impl From<Pose> for EsdPose {
    fn from(p: Pose) -> Self {
        EsdPose {
            x: p.x as u32,
            y: p.y as u32,
            h: p.h,
        }
    }
}

pub struct EsdScene(Scene);
pub struct EsdLexicon(Lexicon);
pub struct EsdPolicy(PolicyParams);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(EsdStatus, String);

type FfiResult<T> = Result<T, Failure>;

fn fail<T>(status: EsdStatus, msg: impl Into<String>) -> FfiResult<T> {
    Err(Failure(status, msg.into()))
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> FfiResult<()>) -> EsdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            EsdStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            EsdStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, name: &str) -> FfiResult<&'a T> {
    p.as_ref().ok_or_else(|| Failure(EsdStatus::NullPointer, format!("`{name}` is null")))
}

unsafe fn out<'a, T>(p: *mut T, name: &str) -> FfiResult<&'a mut T> {
    p.as_mut().ok_or_else(|| Failure(EsdStatus::NullPointer, format!("`{name}` is null")))
}

unsafe fn text<'a>(p: *const c_char, name: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return fail(EsdStatus::NullPointer, format!("`{name}` is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(EsdStatus::InvalidUtf8, format!("`{name}`: {e}")))
}

fn owned_string(s: String) -> FfiResult<*mut c_char> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|e| Failure(EsdStatus::Failed, e.to_string()))
}

fn checked_pose(scene: &Scene, pose: EsdPose) -> FfiResult<Pose> {
    let p = Pose::from(pose);
    if !scene.is_valid_pose(p) {
        return fail(EsdStatus::InvalidArgument, format!("{p:?} is not a valid viewpoint"));
    }
    Ok(p)
}

fn references(refs: &str) -> FfiResult<ReferenceSet> {
    ReferenceSet::new(refs.lines().filter(|l| !l.trim().is_empty()).map(tokenize).collect())
        .map_err(|e| Failure(EsdStatus::InvalidArgument, e.to_string()))
}

/// Message for the last failed call on this thread, or null after a
/// successful call. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn esd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must be null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn esd_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Procedurally generates a scene with the default size and object ranges.
///
/// # Safety
/// `out_scene` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn esd_scene_generate(room: EsdRoomType, seed: u64, out_scene: *mut *mut EsdScene) -> EsdStatus {
    guard(|| {
        let slot = out(out_scene, "out_scene")?;
        let cfg = SceneGenConfig {
            room_type: room.into(),
            ..SceneGenConfig::default()
        };
        let scene = generate_scene(&cfg, seed).map_err(|e| Failure(EsdStatus::Failed, e.to_string()))?;
        *slot = Box::into_raw(Box::new(EsdScene(scene)));
        Ok(())
    })
}

/// # Safety
/// `json` must be a NUL-terminated string; `out_scene` must be writable.
#[no_mangle]
pub unsafe extern "C" fn esd_scene_from_json(json: *const c_char, out_scene: *mut *mut EsdScene) -> EsdStatus {
    guard(|| {
        let slot = out(out_scene, "out_scene")?;
        let scene = Scene::from_json(text(json, "json")?).map_err(|e| Failure(EsdStatus::Parse, e.to_string()))?;
        *slot = Box::into_raw(Box::new(EsdScene(scene)));
        Ok(())
    })
}

/// # Safety
/// `scene` must be a live handle; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn esd_scene_to_json(scene: *const EsdScene, out_json: *mut *mut c_char) -> EsdStatus {
    guard(|| {
        let scene = &deref(scene, "scene")?.0;
        *out(out_json, "out_json")? = owned_string(scene.to_json())?;
        Ok(())
    })
}

/// # Safety
/// `scene` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn esd_scene_free(scene: *mut EsdScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// # Safety
/// `scene` must be a live handle; `width` and `height` must be writable.
#[no_mangle]
pub unsafe extern "C" fn esd_scene_size(scene: *const EsdScene, width: *mut usize, height: *mut usize) -> EsdStatus {
    guard(|| {
        let scene = &deref(scene, "scene")?.0;
        *out(width, "width")? = scene.width();
        *out(height, "height")? = scene.height();
        Ok(())
    })
}

/// Writes 72 feasibility flags indexed by `move_slot * 8 + rotation`.
///
/// # Safety
/// `scene` must be a live handle and `mask` must point to `len` writable bools.
#[no_mangle]
pub unsafe extern "C" fn esd_scene_feasible_actions(scene: *const EsdScene, pose: EsdPose, mask: *mut bool, len: usize) -> EsdStatus {
    guard(|| {
        let scene = &deref(scene, "scene")?.0;
        if mask.is_null() {
            return fail(EsdStatus::NullPointer, "`mask` is null");
        }
        if len < NUM_ACTIONS {
            return fail(EsdStatus::InvalidArgument, format!("mask needs {NUM_ACTIONS} entries, got {len}"));
        }
        let p = checked_pose(scene, pose)?;
        let flags = scene.feasible_actions(p);
        std::slice::from_raw_parts_mut(mask, NUM_ACTIONS).copy_from_slice(&flags);
        Ok(())
    })
}

/// # Safety
/// `scene` must be a live handle; `out_pose` must be writable.
#[no_mangle]
pub unsafe extern "C" fn esd_scene_apply_action(scene: *const EsdScene, pose: EsdPose, action: u32, out_pose: *mut EsdPose) -> EsdStatus {
    guard(|| {
        let scene = &deref(scene, "scene")?.0;
        let slot = out(out_pose, "out_pose")?;
        let p = checked_pose(scene, pose)?;
        let a = Action::from_index(action as usize)
            .ok_or_else(|| Failure(EsdStatus::InvalidArgument, format!("action index {action} out of range")))?;
        let next = scene.apply_action(p, a).map_err(|e| Failure(EsdStatus::Infeasible, e.to_string()))?;
        *slot = next.into();
        Ok(())
    })
}

/// ASCII map of the scene.
///
/// # Safety
/// `scene` must be a live handle; `out_text` must be writable.
#[no_mangle]
pub unsafe extern "C" fn esd_scene_render(scene: *const EsdScene, out_text: *mut *mut c_char) -> EsdStatus {
    guard(|| {
        let scene = &deref(scene, "scene")?.0;
        *out(out_text, "out_text")? = owned_string(render_ascii(scene, &Overlay::None))?;
        Ok(())
    })
}

/// # Safety
/// `out_lexicon` must be writable.
#[no_mangle]
pub unsafe extern "C" fn esd_lexicon_build(seed: u64, out_lexicon: *mut *mut EsdLexicon) -> EsdStatus {
    guard(|| {
        let slot = out(out_lexicon, "out_lexicon")?;
        let lex = Lexicon::build(seed).map_err(|e| Failure(EsdStatus::Failed, e.to_string()))?;
        *slot = Box::into_raw(Box::new(EsdLexicon(lex)));
        Ok(())
    })
}

/// # Safety
/// `lexicon` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn esd_lexicon_free(lexicon: *mut EsdLexicon) {
    if !lexicon.is_null() {
        drop(Box::from_raw(lexicon));
    }
}

/// Observation at `pose` with default sensor noise, as JSON.
///
/// # Safety
/// `scene` and `lexicon` must be live handles; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn esd_observe(
    scene: *const EsdScene,
    lexicon: *const EsdLexicon,
    pose: EsdPose,
    episode_seed: u64,
    out_json: *mut *mut c_char,
) -> EsdStatus {
    guard(|| {
        let scene = &deref(scene, "scene")?.0;
        let lex = &deref(lexicon, "lexicon")?.0;
        let slot = out(out_json, "out_json")?;
        let p = checked_pose(scene, pose)?;
        let obs = observe(scene, p, lex, &SensorConfig::default().with_episode(episode_seed));
        *slot = owned_string(serde_json::to_string(&obs).map_err(|e| Failure(EsdStatus::Failed, e.to_string()))?)?;
        Ok(())
    })
}

/// Caption-mode viewpoint score of the observation at `pose`.
///
/// # Safety
/// `scene` and `lexicon` must be live handles; `out_score` must be writable.
#[no_mangle]
pub unsafe extern "C" fn esd_viewpoint_score(
    scene: *const EsdScene,
    lexicon: *const EsdLexicon,
    pose: EsdPose,
    episode_seed: u64,
    lambda: f64,
    out_score: *mut f64,
) -> EsdStatus {
    guard(|| {
        let scene = &deref(scene, "scene")?.0;
        let lex = &deref(lexicon, "lexicon")?.0;
        let slot = out(out_score, "out_score")?;
        if lambda.is_nan() || lambda < 0.0 {
            return fail(EsdStatus::InvalidArgument, format!("lambda {lambda} is negative"));
        }
        let p = checked_pose(scene, pose)?;
        let obs = observe(scene, p, lex, &SensorConfig::default().with_episode(episode_seed));
        *slot = viewpoint_score(&obs, lex, &ScoringConfig::new(lex, lambda, ScoreMode::Caption));
        Ok(())
    })
}

/// Maximum-weight matching of a row-major `rows x cols` non-negative matrix.
/// `assignment[i]` receives the matched column of row `i`, or -1.
///
/// # Safety
/// `weights` must point to `rows * cols` doubles, `assignment` to `rows`
/// writable entries, and `out_total` must be writable.
#[no_mangle]
pub unsafe extern "C" fn esd_hungarian(
    weights: *const f64,
    rows: usize,
    cols: usize,
    assignment: *mut isize,
    out_total: *mut f64,
) -> EsdStatus {
    guard(|| {
        let total = out(out_total, "out_total")?;
        if rows == 0 || cols == 0 {
            *total = 0.0;
            return Ok(());
        }
        if weights.is_null() || assignment.is_null() {
            return fail(EsdStatus::NullPointer, "`weights` or `assignment` is null");
        }
        let flat = std::slice::from_raw_parts(weights, rows * cols);
        if flat.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return fail(EsdStatus::InvalidArgument, "weights must be finite and non-negative");
        }
        let matrix: Vec<Vec<f64>> = flat.chunks_exact(cols).map(<[f64]>::to_vec).collect();
        let m = hungarian_max_matching(&matrix);
        let slots = std::slice::from_raw_parts_mut(assignment, rows);
        slots.fill(-1);
        for (i, j) in m.pairs {
            slots[i] = j as isize;
        }
        *total = m.total;
        Ok(())
    })
}

/// Freshly initialized policy sized for `lexicon`.
///
/// # Safety
/// `lexicon` must be a live handle; `out_policy` must be writable.
#[no_mangle]
pub unsafe extern "C" fn esd_policy_init(
    lexicon: *const EsdLexicon,
    hidden: usize,
    seed: u64,
    out_policy: *mut *mut EsdPolicy,
) -> EsdStatus {
    guard(|| {
        let lex = &deref(lexicon, "lexicon")?.0;
        let slot = out(out_policy, "out_policy")?;
        if hidden == 0 {
            return fail(EsdStatus::InvalidArgument, "hidden size must be positive");
        }
        let params = PolicyParams::init(PolicyShape::for_lexicon(lex, hidden, DEFAULT_LANG_DIM), seed);
        *slot = Box::into_raw(Box::new(EsdPolicy(params)));
        Ok(())
    })
}

/// Loads a JSON checkpoint.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out_policy` must be writable.
#[no_mangle]
pub unsafe extern "C" fn esd_policy_from_json(json: *const c_char, out_policy: *mut *mut EsdPolicy) -> EsdStatus {
    guard(|| {
        let slot = out(out_policy, "out_policy")?;
        let params = PolicyParams::from_json(text(json, "json")?).map_err(|e| Failure(EsdStatus::Parse, e.to_string()))?;
        *slot = Box::into_raw(Box::new(EsdPolicy(params)));
        Ok(())
    })
}

/// # Safety
/// `policy` must be a live handle; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn esd_policy_to_json(policy: *const EsdPolicy, out_json: *mut *mut c_char) -> EsdStatus {
    guard(|| {
        let params = &deref(policy, "policy")?.0;
        *out(out_json, "out_json")? = owned_string(params.to_json())?;
        Ok(())
    })
}

/// # Safety
/// `policy` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn esd_policy_free(policy: *mut EsdPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Runs one episode (horizon 40) and returns it as JSON.
///
/// # Safety
/// All handles must be live; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn esd_policy_rollout(
    policy: *const EsdPolicy,
    scene: *const EsdScene,
    lexicon: *const EsdLexicon,
    start: EsdPose,
    episode_seed: u64,
    greedy: bool,
    out_json: *mut *mut c_char,
) -> EsdStatus {
    guard(|| {
        let params = &deref(policy, "policy")?.0;
        let scene = &deref(scene, "scene")?.0;
        let lex = &deref(lexicon, "lexicon")?.0;
        let slot = out(out_json, "out_json")?;
        params
            .check_lexicon(lex)
            .map_err(|e| Failure(EsdStatus::InvalidArgument, e.to_string()))?;
        let p = checked_pose(scene, start)?;
        let sensor = SensorConfig::default();
        let scoring = ScoringConfig::new(lex, 0.1, ScoreMode::Caption);
        let env = EpisodeEnv {
            scene,
            lex,
            sensor: &sensor,
            scoring: &scoring,
        };
        let mode = if greedy { RolloutMode::Greedy } else { RolloutMode::Sample };
        let episode = rollout(params, &env, p, &TrainConfig::default(), mode, episode_seed)
            .map_err(|e| Failure(EsdStatus::Failed, e.to_string()))?;
        *slot = owned_string(serde_json::to_string(&episode).map_err(|e| Failure(EsdStatus::Failed, e.to_string()))?)?;
        Ok(())
    })
}

/// BLEU-n of a whitespace-tokenized candidate against newline-separated references.
///
/// # Safety
/// `candidate` and `references` must be NUL-terminated; `out_score` writable.
#[no_mangle]
pub unsafe extern "C" fn esd_bleu(candidate: *const c_char, references: *const c_char, n: u32, out_score: *mut f64) -> EsdStatus {
    guard(|| {
        let cand = tokenize(text(candidate, "candidate")?);
        let refs = self::references(text(references, "references")?)?;
        let slot = out(out_score, "out_score")?;
        if !(1..=4).contains(&n) {
            return fail(EsdStatus::InvalidArgument, format!("BLEU order {n} not in 1..=4"));
        }
        *slot = bleu(&cand, &refs, n as usize);
        Ok(())
    })
}

/// ROUGE-L of a candidate against newline-separated references.
///
/// # Safety
/// `candidate` and `references` must be NUL-terminated; `out_score` writable.
#[no_mangle]
pub unsafe extern "C" fn esd_rouge_l(candidate: *const c_char, references: *const c_char, out_score: *mut f64) -> EsdStatus {
    guard(|| {
        let cand = tokenize(text(candidate, "candidate")?);
        let refs = self::references(text(references, "references")?)?;
        *out(out_score, "out_score")? = rouge_l(&cand, &refs);
        Ok(())
    })
}
