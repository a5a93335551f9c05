//! Scenario sets, the synthetic training corpus for the motion prior, and dataset files.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CoinError, Result};
use crate::motion::{BodyModel, MotionWindow};
use crate::prior::{fit_motion_prior, FitConfig, FitReport, GmmPrior, ObsNoise, CONTACT_NOISE, TRANSLATION_NOISE};
use crate::world::{build_world, generate_motion, CameraParams, CameraStyle, GaitParams, NoiseConfig, ScenarioConfig, World};

/// Scale factors cycled through by the benchmark set.
pub const BENCHMARK_SCALES: [f64; 3] = [0.5, 2.0, 4.0];

pub fn random_gait<R: Rng + ?Sized>(rng: &mut R) -> GaitParams {
    GaitParams {
        speed: rng.random_range(0.6..1.6),
        heading: rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
        turn_rate: rng.random_range(-0.35..0.35),
        stride_period: rng.random_range(0.95..1.25),
        lift: rng.random_range(0.05..0.1),
        bob: rng.random_range(0.01..0.03),
        pelvis_height: rng.random_range(0.86..0.94),
        phase: Some(rng.random()),
        ..GaitParams::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub windows: usize,
    pub frames: usize,
    pub seed: u64,
    pub fit: FitConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self { windows: 300, frames: 128, seed: 7, fit: FitConfig::default() }
    }
}

/// Random walks of the gait generator, one window each.
pub fn training_windows(cfg: &TrainingConfig, body: &BodyModel) -> Result<Vec<MotionWindow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.windows)
        .map(|_| {
            let gait = random_gait(&mut rng);
            let seed = rng.random();
            Ok(generate_motion(&gait, body, cfg.frames, seed)?.window)
        })
        .collect()
}

pub fn train_prior(cfg: &TrainingConfig, body: &BodyModel) -> Result<(GmmPrior, FitReport)> {
    let windows = training_windows(cfg, body)?;
    fit_motion_prior(&windows, &cfg.fit)
}

/// `n` seeded scenarios cycling through the benchmark scales and camera styles.
pub fn benchmark_scenarios(n: usize, seed: u64) -> Vec<ScenarioConfig> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let styles = [CameraStyle::Follow, CameraStyle::Orbit, CameraStyle::Handheld];
    (0..n)
        .map(|k| ScenarioConfig {
            name: format!("bench-{k:02}"),
            seed: rng.random(),
            s_true: BENCHMARK_SCALES[k % BENCHMARK_SCALES.len()],
            gait: random_gait(&mut rng),
            camera: CameraParams { style: styles[k % styles.len()], ..CameraParams::default() },
            noise: NoiseConfig::default(),
            ..ScenarioConfig::default()
        })
        .collect()
}

/// Smallest per-channel noise level handed to the conditioning.
pub const MIN_OBS_NOISE: f64 = 1e-3;

/// Conditioning noise matching a simulator noise setting. Contacts come from
/// thresholded root speeds, so their noise follows the translation noise.
pub fn obs_noise_for(noise: &NoiseConfig) -> ObsNoise {
    ObsNoise {
        translation: noise.translation_sigma.max(MIN_OBS_NOISE),
        orientation: noise.orientation_sigma.max(MIN_OBS_NOISE),
        pose: noise.pose_sigma.max(MIN_OBS_NOISE),
        contact: (CONTACT_NOISE * noise.translation_sigma / TRANSLATION_NOISE).clamp(MIN_OBS_NOISE, CONTACT_NOISE),
    }
}

/// Short content hash used to name run directories.
pub fn scenario_hash(cfg: &ScenarioConfig) -> Result<String> {
    let text = serde_json::to_string(cfg)?;
    Ok(hex::encode(&Sha256::digest(text.as_bytes())[..6]))
}

pub fn load_scenario(path: &Path) -> Result<ScenarioConfig> {
    let text = fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| CoinError::Config(format!("{}: {e}", path.display())))
}

pub fn save_scenario(cfg: &ScenarioConfig, path: &Path) -> Result<()> {
    let text = toml::to_string_pretty(cfg).map_err(|e| CoinError::Config(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

pub const DATASET_VERSION: u32 = 1;

/// A generated world as written to disk: ground truth and observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub version: u32,
    pub world: World,
}

pub fn generate_dataset(cfg: &ScenarioConfig, body: &BodyModel) -> Result<Dataset> {
    Ok(Dataset { version: DATASET_VERSION, world: build_world(cfg, body)? })
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, serde_json::to_vec(ds)?)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let ds: Dataset = serde_json::from_slice(&fs::read(path)?)?;
    if ds.version != DATASET_VERSION {
        return Err(CoinError::Format(format!("dataset version {} (expected {DATASET_VERSION})", ds.version)));
    }
    ds.world.obs.validate()?;
    Ok(ds)
}
