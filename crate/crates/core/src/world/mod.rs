//! Ground-truth subject motion, observer trajectories, scenes and simulated observations.

pub mod camera;
pub mod gait;
pub mod observe;
pub mod scene;

pub use camera::{generate_camera, CameraParams, CameraStyle};
pub use gait::{generate_motion, GaitParams, GeneratedMotion};
pub use observe::{simulate_observations, Keypoint, NoiseConfig, ObservationSet, OcclusionConfig, SlamFrame};
pub use scene::{generate_scene, visibility_indicator, Scene, SceneParams};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoinError, Result};
use crate::geometry::{CameraPose, CameraTrajectory};
use crate::motion::BodyModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub name: String,
    pub frames: usize,
    pub seed: u64,
    pub s_true: f64,
    /// Heading of the SLAM frame relative to the world; drawn from the seed when absent.
    pub slam_yaw: Option<f64>,
    pub gait: GaitParams,
    pub camera: CameraParams,
    pub scene: SceneParams,
    pub noise: NoiseConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "walk".into(),
            frames: 128,
            seed: 0,
            s_true: 1.0,
            slam_yaw: None,
            gait: GaitParams::default(),
            camera: CameraParams::default(),
            scene: SceneParams::default(),
            noise: NoiseConfig::default(),
        }
    }
}

/// A generated ground truth together with its observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub config: ScenarioConfig,
    pub body: BodyModel,
    pub motion: crate::motion::MotionWindow,
    pub contacts: Vec<[bool; 4]>,
    pub beta: [f64; 2],
    pub camera: CameraTrajectory,
    pub scene: Scene,
    pub slam: SlamFrame,
    pub obs: ObservationSet,
}

impl World {
    pub fn joints(&self) -> Vec<Vec<Vector3<f64>>> {
        self.body.joints(&self.motion, &self.beta)
    }
}

pub fn build_world(cfg: &ScenarioConfig, body: &BodyModel) -> Result<World> {
    if !(cfg.s_true > 0.0) {
        return Err(CoinError::Config("s_true must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let seeds: [u64; 5] = std::array::from_fn(|_| rng.random());
    let gen = generate_motion(&cfg.gait, body, cfg.frames, seeds[0])?;
    let mut motion = gen.window;
    let targets: Vec<Vector3<f64>> = (0..cfg.frames).map(|i| motion.translation(i)).collect();
    let headings: Vec<f64> = (0..cfg.frames).map(|i| motion.orientation(i).z).collect();
    let cam = generate_camera(&cfg.camera, &targets, &headings, seeds[1])?;

    // world gauge: the first camera sits above the horizontal origin
    let c0 = cam.frames[0].center();
    let shift = Vector3::new(c0.x, c0.y, 0.0);
    for i in 0..cfg.frames {
        let t = motion.translation(i) - shift;
        motion.set_translation(i, &t);
    }
    let camera = CameraTrajectory { frames: cam.frames.iter().map(|p| CameraPose::new(p.rotation, p.translation + p.rotation * shift)).collect(), intrinsics: cam.intrinsics };

    let joints = body.joints(&motion, &gen.beta);
    let scene = generate_scene(&cfg.scene, &joints, &camera, seeds[2])?;
    let yaw = cfg.slam_yaw.unwrap_or_else(|| rng.random_range(-std::f64::consts::PI..std::f64::consts::PI));
    let slam = SlamFrame { scale: cfg.s_true, height: c0.z, rotation: Vector3::new(0.0, 0.0, yaw) };
    let obs = simulate_observations(&motion, &gen.beta, body, &camera, &scene, &slam, &cfg.noise, seeds[3])?;
    Ok(World { config: cfg.clone(), body: body.clone(), motion, contacts: gen.contacts, beta: gen.beta, camera, scene, slam, obs })
}
