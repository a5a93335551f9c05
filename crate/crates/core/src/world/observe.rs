//! Noisy detector, local-pose and SLAM-like observations of a ground-truth world.

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CoinError, Result};
use crate::geometry::{exp_so3, orthonormalize, project, CameraPose, CameraTrajectory};
use crate::motion::{BodyModel, MotionWindow};

use super::scene::Scene;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OcclusionConfig {
    pub lower_body_prob: f64,
    pub full_pose_prob: f64,
    pub random_joints_prob: f64,
    pub joint_mask_prob: f64,
    /// Occluded segment length as a fraction of the sequence.
    pub segment_min: f64,
    pub segment_max: f64,
    /// Always occlude every non-root joint over this centred fraction of frames.
    pub middle_fraction: Option<f64>,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        Self { lower_body_prob: 0.2, full_pose_prob: 0.2, random_joints_prob: 0.5, joint_mask_prob: 0.3, segment_min: 0.1, segment_max: 0.3, middle_fraction: None }
    }
}

impl OcclusionConfig {
    pub fn none() -> Self {
        Self { lower_body_prob: 0.0, full_pose_prob: 0.0, random_joints_prob: 0.0, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub pixel_sigma: f64,
    pub outlier_prob: f64,
    pub outlier_px: f64,
    /// Camera-frame root position noise.
    pub translation_sigma: f64,
    /// Per-frame body orientation perturbation (radians).
    pub orientation_sigma: f64,
    /// Per-joint local position noise.
    pub pose_sigma: f64,
    /// Multiplier on local noise for occluded joints.
    pub occluded_noise_scale: f64,
    /// Per-frame random-walk step of the SLAM translation, in SLAM units.
    pub drift_sigma: f64,
    pub rotation_jitter: f64,
    pub occlusion: OcclusionConfig,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            pixel_sigma: 2.0,
            outlier_prob: 0.02,
            outlier_px: 40.0,
            translation_sigma: 0.1,
            orientation_sigma: 0.05,
            pose_sigma: 0.01,
            occluded_noise_scale: 5.0,
            drift_sigma: 0.002,
            rotation_jitter: 0.001,
            occlusion: OcclusionConfig::default(),
        }
    }
}

impl NoiseConfig {
    pub fn zero() -> Self {
        Self {
            pixel_sigma: 0.0,
            outlier_prob: 0.0,
            outlier_px: 0.0,
            translation_sigma: 0.0,
            orientation_sigma: 0.0,
            pose_sigma: 0.0,
            occluded_noise_scale: 1.0,
            drift_sigma: 0.0,
            rotation_jitter: 0.0,
            occlusion: OcclusionConfig::none(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub pixel: Vector2<f64>,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    /// `T × J` detections, root first.
    pub kp2d: Vec<Vec<Keypoint>>,
    /// `T × J` camera-frame joints.
    pub local3d: Vec<Vec<Vector3<f64>>>,
    pub cam_est: CameraTrajectory,
    pub scene_est: Scene,
}

impl ObservationSet {
    pub fn frames(&self) -> usize {
        self.kp2d.len()
    }

    pub fn joints(&self) -> usize {
        self.kp2d.first().map_or(0, |f| f.len())
    }

    /// Frames `[start, end)`; the scene is shared.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            kp2d: self.kp2d[start..end].to_vec(),
            local3d: self.local3d[start..end].to_vec(),
            cam_est: CameraTrajectory { frames: self.cam_est.frames[start..end].to_vec(), intrinsics: self.cam_est.intrinsics },
            scene_est: self.scene_est.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.frames();
        if self.local3d.len() != t || self.cam_est.len() != t {
            return Err(CoinError::Shape { expected: t, got: self.local3d.len().min(self.cam_est.len()) });
        }
        if self.kp2d.iter().flatten().any(|k| !(0.0..=1.0).contains(&k.confidence)) {
            return Err(CoinError::Domain("keypoint confidence outside [0, 1]".into()));
        }
        if self.cam_est.max_orthonormality_error() > 1e-9 {
            return Err(CoinError::Geometry("estimated camera rotation is not orthonormal".into()));
        }
        self.scene_est.validate()
    }
}

/// Map between the gravity-aligned world and the scale-ambiguous SLAM frame:
/// `p_world = R_g (s p_slam) + h0 e_z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlamFrame {
    pub scale: f64,
    pub height: f64,
    /// Rotation vector of `R_g`.
    pub rotation: Vector3<f64>,
}

impl SlamFrame {
    pub fn to_slam(&self, p: &Vector3<f64>) -> Vector3<f64> {
        exp_so3(&self.rotation).transpose() * (p - Vector3::new(0.0, 0.0, self.height)) / self.scale
    }

    /// Camera pose in SLAM units: `R̂ = R R_g`, `t̂ = (t + h0 R e_z) / s`.
    pub fn camera_to_slam(&self, pose: &CameraPose) -> CameraPose {
        let rg = exp_so3(&self.rotation);
        CameraPose::new(pose.rotation * rg, (pose.translation + pose.rotation * Vector3::new(0.0, 0.0, self.height)) / self.scale)
    }
}

fn occlusion_mask(cfg: &OcclusionConfig, frames: usize, joints: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<bool>> {
    let mut occ = vec![vec![false; joints]; frames];
    let segment = |rng: &mut ChaCha8Rng| {
        let len = ((rng.random_range(cfg.segment_min..=cfg.segment_max.max(cfg.segment_min)) * frames as f64).round() as usize).clamp(1, frames);
        let start = rng.random_range(0..=frames - len);
        start..start + len
    };
    if rng.random::<f64>() < cfg.lower_body_prob {
        for i in segment(rng) {
            occ[i][1] = true;
            occ[i][2] = true;
        }
    }
    if rng.random::<f64>() < cfg.full_pose_prob {
        for i in segment(rng) {
            for j in 1..joints {
                occ[i][j] = true;
            }
        }
    }
    if rng.random::<f64>() < cfg.random_joints_prob {
        let chosen: Vec<usize> = (1..joints).filter(|_| rng.random::<f64>() < cfg.joint_mask_prob).collect();
        if !chosen.is_empty() {
            for i in segment(rng) {
                for &j in &chosen {
                    occ[i][j] = true;
                }
            }
        }
    }
    if let Some(f) = cfg.middle_fraction {
        let len = (f * frames as f64).round() as usize;
        let start = (frames - len.min(frames)) / 2;
        for row in occ.iter_mut().skip(start).take(len) {
            for o in row.iter_mut().skip(1) {
                *o = true;
            }
        }
    }
    occ
}

fn gaussian3(rng: &mut ChaCha8Rng, sigma: f64) -> Vector3<f64> {
    if sigma == 0.0 {
        return Vector3::zeros();
    }
    Vector3::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)) * sigma
}

/// Simulates detector, local-pose and SLAM outputs for a ground-truth world.
pub fn simulate_observations(
    motion: &MotionWindow,
    beta: &[f64; 2],
    body: &BodyModel,
    cam: &CameraTrajectory,
    scene: &Scene,
    slam: &SlamFrame,
    noise: &NoiseConfig,
    seed: u64,
) -> Result<ObservationSet> {
    let frames = motion.frames();
    if cam.len() != frames {
        return Err(CoinError::Shape { expected: frames, got: cam.len() });
    }
    if !(slam.scale > 0.0) {
        return Err(CoinError::Domain("scale must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let intr = cam.intrinsics;
    let nj = body.j_total();
    let occ = occlusion_mask(&noise.occlusion, frames, nj, &mut rng);
    let px_noise = Normal::new(0.0, noise.pixel_sigma.max(0.0)).map_err(|e| CoinError::Config(e.to_string()))?;

    let mut kp2d = Vec::with_capacity(frames);
    let mut local3d = Vec::with_capacity(frames);
    for i in 0..frames {
        let pose = &cam.frames[i];
        let fj = body.frame_joints(motion, i, beta);
        let mut kps = Vec::with_capacity(nj);
        for (j, p) in fj.positions.iter().enumerate() {
            let (px, _) = project(pose, &intr, p)?;
            let n = Vector2::new(px_noise.sample(&mut rng), px_noise.sample(&mut rng));
            let outlier = noise.outlier_prob > 0.0 && rng.random::<f64>() < noise.outlier_prob;
            let out_off = if outlier {
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                Vector2::new(a.cos(), a.sin()) * noise.outlier_px
            } else {
                Vector2::zeros()
            };
            let mut conf = 1.0 - n.norm() / 50.0 - if outlier { 0.5 } else { 0.0 };
            if occ[i][j] {
                conf = 0.0;
            }
            kps.push(Keypoint { pixel: px + n + out_off, confidence: conf.clamp(0.0, 1.0) });
        }
        kp2d.push(kps);

        let root_c = pose.transform(&fj.positions[0]) + gaussian3(&mut rng, noise.translation_sigma);
        let body_rot = pose.rotation * fj.rotation * exp_so3(&gaussian3(&mut rng, noise.orientation_sigma));
        let mut frame = Vec::with_capacity(nj);
        frame.push(root_c);
        for j in 0..body.j_local() {
            let local = body.scaled_offset(j, beta) + motion.pose(i, j);
            let scale = if occ[i][j + 1] { noise.occluded_noise_scale } else { 1.0 };
            frame.push(root_c + body_rot * local + gaussian3(&mut rng, noise.pose_sigma * scale));
        }
        local3d.push(frame);
    }

    let mut drift = Vector3::zeros();
    let mut cam_est = Vec::with_capacity(frames);
    for (i, pose) in cam.frames.iter().enumerate() {
        let est = slam.camera_to_slam(pose);
        if i > 0 {
            drift += gaussian3(&mut rng, noise.drift_sigma);
        }
        let jitter = exp_so3(&gaussian3(&mut rng, noise.rotation_jitter));
        cam_est.push(CameraPose::new(orthonormalize(&(est.rotation * jitter)), est.translation + drift));
    }
    let scene_est = Scene { points: scene.points.iter().map(|p| slam.to_slam(p)).collect() };
    let obs = ObservationSet { kp2d, local3d, cam_est: CameraTrajectory { frames: cam_est, intrinsics: intr }, scene_est };
    obs.validate()?;
    Ok(obs)
}
