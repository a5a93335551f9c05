//! C ABI over coin-core. Objects are opaque handles created and destroyed
//! through this interface; every fallible call returns a [`CoinStatus`] and
//! leaves a message retrievable with [`coin_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use coin_core::baselines::{run_method, BaselineConfig, Method};
use coin_core::cli::{evaluate_trajectory, Trajectory};
use coin_core::motion::BodyModel;
use coin_core::optimizer::{PipelineConfig, RunResult};
use coin_core::prior::{load_prior, save_prior, GmmPrior};
use coin_core::scenario::{generate_dataset, load_dataset, obs_noise_for, save_dataset, train_prior, Dataset, TrainingConfig};
use coin_core::sds::mask_weight;
use coin_core::world::ScenarioConfig;
use coin_core::CoinError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoinStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Numeric = 4,
    Io = 5,
    Format = 6,
    Shape = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoinMethod {
    Coin = 0,
    VanillaSds = 1,
    NoiseOpt = 2,
    Guided = 3,
    InitOnly = 4,
}

/// Evaluation results, lengths in scene units and angles in degrees.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CoinMetrics {
    pub w_mpjpe: f64,
    pub wa_mpjpe: f64,
    pub pa_mpjpe: f64,
    pub w_rje: f64,
    pub accel: f64,
    pub rte: f64,
    pub roe: f64,
    pub ate: f64,
    pub ate_s: f64,
    pub cam_accel: f64,
    pub scale: f64,
}

/// A fitted motion prior.
pub struct CoinPrior(GmmPrior);

/// Ground truth and observations of one scene.
pub struct CoinDataset(Dataset);

/// The stitched output of one estimation run.
pub struct CoinRun(RunResult);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &CoinError) -> CoinStatus {
    match e {
        CoinError::Config(_) | CoinError::Domain(_) => CoinStatus::Config,
        CoinError::Shape { .. } => CoinStatus::Shape,
        CoinError::Numeric { .. } | CoinError::Ordering { .. } | CoinError::Geometry(_) => CoinStatus::Numeric,
        CoinError::Io(_) => CoinStatus::Io,
        CoinError::Format(_) => CoinStatus::Format,
    }
}

enum Failure {
    Status(CoinStatus, String),
    Core(CoinError),
}

impl From<CoinError> for Failure {
    fn from(e: CoinError) -> Self {
        Failure::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CoinStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CoinStatus::Ok,
        Ok(Err(Failure::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            CoinStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure::Status(CoinStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    Ok(PathBuf::from(str_arg(p, what)?))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::Status(CoinStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn out_arg<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread, or null. Valid until the next call.
#[no_mangle]
pub extern "C" fn coin_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn coin_status_string(status: CoinStatus) -> *const c_char {
    let s: &'static CStr = match status {
        CoinStatus::Ok => c"ok",
        CoinStatus::NullPointer => c"null pointer",
        CoinStatus::InvalidArgument => c"invalid argument",
        CoinStatus::Config => c"invalid configuration",
        CoinStatus::Numeric => c"numerical failure",
        CoinStatus::Io => c"i/o failure",
        CoinStatus::Format => c"malformed file",
        CoinStatus::Shape => c"shape mismatch",
        CoinStatus::Panic => c"internal panic",
    };
    s.as_ptr()
}

/// Soft inpainting weight `w(t)`.
#[no_mangle]
pub extern "C" fn coin_mask_weight(t: f64) -> f64 {
    mask_weight(t)
}

/// Fits the default synthetic prior with the given corpus seed.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn coin_prior_train_default(seed: u64, out: *mut *mut CoinPrior) -> CoinStatus {
    guard(|| {
        let cfg = TrainingConfig { seed, ..TrainingConfig::default() };
        let (p, _) = train_prior(&cfg, &BodyModel::default())?;
        out_arg(out, CoinPrior(p))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn coin_prior_load(path: *const c_char, out: *mut *mut CoinPrior) -> CoinStatus {
    guard(|| {
        let p = load_prior(&path_arg(path, "path")?)?;
        out_arg(out, CoinPrior(p))
    })
}

/// # Safety
/// `prior` must come from this library; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn coin_prior_save(prior: *const CoinPrior, path: *const c_char) -> CoinStatus {
    guard(|| {
        let p = handle(prior, "prior")?;
        save_prior(&p.0, &path_arg(path, "path")?)?;
        Ok(())
    })
}

/// Latent dimension of the prior, or 0 for a null handle.
///
/// # Safety
/// `prior` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn coin_prior_dim(prior: *const CoinPrior) -> usize {
    prior.as_ref().map_or(0, |p| p.0.dim())
}

/// # Safety
/// `prior` must be null or come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn coin_prior_free(prior: *mut CoinPrior) {
    if !prior.is_null() {
        drop(Box::from_raw(prior));
    }
}

/// Generates a scene. `scenario_toml` may be null for the defaults.
///
/// # Safety
/// `scenario_toml` must be null or a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn coin_dataset_generate(scenario_toml: *const c_char, seed: u64, out: *mut *mut CoinDataset) -> CoinStatus {
    guard(|| {
        let mut cfg = if scenario_toml.is_null() {
            ScenarioConfig::default()
        } else {
            let text = str_arg(scenario_toml, "scenario")?;
            toml::from_str(text).map_err(|e| CoinError::Config(e.to_string()))?
        };
        cfg.seed = seed;
        let ds = generate_dataset(&cfg, &BodyModel::default())?;
        out_arg(out, CoinDataset(ds))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn coin_dataset_load(path: *const c_char, out: *mut *mut CoinDataset) -> CoinStatus {
    guard(|| {
        let ds = load_dataset(&path_arg(path, "path")?)?;
        out_arg(out, CoinDataset(ds))
    })
}

/// # Safety
/// `ds` must come from this library; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn coin_dataset_save(ds: *const CoinDataset, path: *const c_char) -> CoinStatus {
    guard(|| {
        let d = handle(ds, "dataset")?;
        save_dataset(&d.0, &path_arg(path, "path")?)?;
        Ok(())
    })
}

/// Frame count, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn coin_dataset_frames(ds: *const CoinDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.world.obs.frames())
}

/// # Safety
/// `ds` must be null or come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn coin_dataset_free(ds: *mut CoinDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

fn method(m: CoinMethod) -> Method {
    match m {
        CoinMethod::Coin => Method::Coin,
        CoinMethod::VanillaSds => Method::VanillaSds,
        CoinMethod::NoiseOpt => Method::NoiseOpt,
        CoinMethod::Guided => Method::Guided,
        CoinMethod::InitOnly => Method::InitOnly,
    }
}

/// Runs an estimation method. `pipeline_toml` (a pipeline configuration) may be
/// null for the defaults with observation noise matched to the dataset.
///
/// # Safety
/// Handles must come from this library; `pipeline_toml` null or NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn coin_run(ds: *const CoinDataset, prior: *const CoinPrior, m: CoinMethod, pipeline_toml: *const c_char, seed: u64, out: *mut *mut CoinRun) -> CoinStatus {
    guard(|| {
        let d = handle(ds, "dataset")?;
        let p = handle(prior, "prior")?;
        let mut cfg = if pipeline_toml.is_null() {
            PipelineConfig { obs_noise: obs_noise_for(&d.0.world.config.noise), ..PipelineConfig::default() }
        } else {
            toml::from_str(str_arg(pipeline_toml, "pipeline")?).map_err(|e| CoinError::Config(e.to_string()))?
        };
        cfg.seed = seed;
        cfg.sds.rng_seed = seed;
        let r = run_method(method(m), &d.0.world.obs, &d.0.world.body, &p.0, &cfg, &BaselineConfig::default())?;
        out_arg(out, CoinRun(r))
    })
}

/// Recovered global scale, or NaN for a null handle.
///
/// # Safety
/// `run` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn coin_run_scale(run: *const CoinRun) -> f64 {
    run.as_ref().map_or(f64::NAN, |r| r.0.scale)
}

/// Frame count of a run, or 0 for a null handle.
///
/// # Safety
/// `run` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn coin_run_frames(run: *const CoinRun) -> usize {
    run.as_ref().map_or(0, |r| r.0.motion.frames())
}

/// Copies `3 · frames` root translations (x, y, z per frame) into `buf`.
///
/// # Safety
/// `run` must come from this library and `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn coin_run_root_translations(run: *const CoinRun, buf: *mut f64, len: usize) -> CoinStatus {
    guard(|| {
        let r = handle(run, "run")?;
        let v: Vec<f64> = (0..r.0.motion.frames()).flat_map(|i| r.0.motion.translation(i).iter().copied().collect::<Vec<_>>()).collect();
        copy_out(&v, buf, len)
    })
}

/// Copies `3 · frames` camera centers in world coordinates into `buf`.
///
/// # Safety
/// `run` must come from this library and `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn coin_run_camera_centers(run: *const CoinRun, buf: *mut f64, len: usize) -> CoinStatus {
    guard(|| {
        let r = handle(run, "run")?;
        let v: Vec<f64> = r.0.camera.centers().iter().flat_map(|c| [c.x, c.y, c.z]).collect();
        copy_out(&v, buf, len)
    })
}

unsafe fn copy_out(v: &[f64], buf: *mut f64, len: usize) -> Result<(), Failure> {
    if buf.is_null() {
        return Err(null("buffer"));
    }
    if len != v.len() {
        return Err(Failure::Core(CoinError::Shape { expected: v.len(), got: len }));
    }
    std::slice::from_raw_parts_mut(buf, len).copy_from_slice(v);
    Ok(())
}

/// Scores a run against the dataset's ground truth.
///
/// # Safety
/// Handles must come from this library and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn coin_evaluate(run: *const CoinRun, ds: *const CoinDataset, out: *mut CoinMetrics) -> CoinStatus {
    guard(|| {
        let r = handle(run, "run")?;
        let d = handle(ds, "dataset")?;
        if out.is_null() {
            return Err(null("output pointer"));
        }
        let m = evaluate_trajectory(&Trajectory::of(&r.0), &d.0)?;
        *out = CoinMetrics {
            w_mpjpe: m.w_mpjpe,
            wa_mpjpe: m.wa_mpjpe,
            pa_mpjpe: m.pa_mpjpe,
            w_rje: m.w_rje,
            accel: m.accel,
            rte: m.rte,
            roe: m.roe,
            ate: m.ate,
            ate_s: m.ate_s,
            cam_accel: m.cam_accel,
            scale: m.scale,
        };
        Ok(())
    })
}

/// # Safety
/// `run` must be null or come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn coin_run_free(run: *mut CoinRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}
