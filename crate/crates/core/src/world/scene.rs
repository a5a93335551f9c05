//! Static scene points and the occluded-by-subject proxy.

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoinError, Result};
use crate::geometry::{project, unproject, CameraPose, CameraTrajectory, Intrinsics, DEPTH_EPSILON};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub points: Vec<Vector3<f64>>,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(CoinError::Domain("scene has no points".into()));
        }
        if self.points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(CoinError::Domain("scene has non-finite points".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneParams {
    /// Frames between the snapshots used to place points behind the subject.
    pub frame_stride: usize,
    pub points_per_joint: usize,
    /// Depth gap behind the occluding joint.
    pub min_gap: f64,
    pub max_gap: f64,
    /// Background points scattered far from the subject.
    pub background: usize,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self { frame_stride: 4, points_per_joint: 2, min_gap: 0.25, max_gap: 1.5, background: 64 }
    }
}

/// Pixel radius of the occlusion proxy for one frame: a multiple of the mean
/// projected distance between the root and the other joints.
pub fn occlusion_radius(pixels: &[Option<Vector2<f64>>], factor: f64) -> f64 {
    let Some(root) = pixels.first().copied().flatten() else {
        return 0.0;
    };
    let d: Vec<f64> = pixels[1..].iter().flatten().map(|p| (p - root).norm()).collect();
    if d.is_empty() {
        return 0.0;
    }
    factor * d.iter().sum::<f64>() / d.len() as f64
}

pub const OCCLUSION_FACTOR: f64 = 1.5;

/// Projected joints of one frame; `None` for joints behind the camera.
pub fn project_joints(cam: &CameraPose, intr: &Intrinsics, joints: &[Vector3<f64>]) -> Vec<Option<Vector2<f64>>> {
    joints.iter().map(|j| project(cam, intr, j).ok().map(|(px, _)| px)).collect()
}

/// Nearest joint in the image to `pixel`, with its squared pixel distance.
pub fn nearest_joint(pixels: &[Option<Vector2<f64>>], pixel: &Vector2<f64>) -> Option<(usize, f64)> {
    pixels.iter().enumerate().filter_map(|(j, p)| p.map(|p| (j, (p - pixel).norm_squared()))).min_by(|a, b| a.1.total_cmp(&b.1))
}

/// Whether scene point `p` (world) lies on the subject's image footprint in this frame.
/// Returns the nearest joint when it does.
pub fn visibility_indicator(p: &Vector3<f64>, cam: &CameraPose, intr: &Intrinsics, joints: &[Vector3<f64>]) -> Option<usize> {
    let pc = cam.transform(p);
    if pc.z <= DEPTH_EPSILON {
        return None;
    }
    let px = intr.focal * pc.xy() / pc.z + Vector2::new(intr.cx, intr.cy);
    if !intr.in_image(&px) {
        return None;
    }
    let pixels = project_joints(cam, intr, joints);
    let r = occlusion_radius(&pixels, OCCLUSION_FACTOR);
    let (j, d2) = nearest_joint(&pixels, &px)?;
    (d2 <= r * r).then_some(j)
}

/// Places points just behind the subject along viewing rays, plus background clutter,
/// and drops any point that would sit in front of an occluding joint.
pub fn generate_scene(params: &SceneParams, joints: &[Vec<Vector3<f64>>], cam: &CameraTrajectory, seed: u64) -> Result<Scene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let intr = &cam.intrinsics;
    let mut points = Vec::new();
    for i in (0..joints.len()).step_by(params.frame_stride.max(1)) {
        let pose = &cam.frames[i];
        let pixels = project_joints(pose, intr, &joints[i]);
        let r = occlusion_radius(&pixels, OCCLUSION_FACTOR);
        for (j, joint) in joints[i].iter().enumerate() {
            let Some(px) = pixels[j] else { continue };
            let depth = pose.transform(joint).z;
            for _ in 0..params.points_per_joint {
                let off = Vector2::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)) * r;
                let gap = rng.random_range(params.min_gap..params.max_gap);
                points.push(unproject(pose, intr, &(px + off), depth + gap));
            }
        }
    }
    if let Some(first) = cam.frames.first() {
        for _ in 0..params.background {
            let px = Vector2::new(rng.random_range(0.0..intr.width), rng.random_range(0.0..intr.height));
            points.push(unproject(first, intr, &px, rng.random_range(8.0..15.0)));
        }
    }
    points.retain(|p| {
        cam.frames.iter().zip(joints).all(|(pose, js)| match visibility_indicator(p, pose, intr, js) {
            Some(j) => pose.transform(p).z > pose.transform(&js[j]).z,
            None => true,
        })
    });
    let scene = Scene { points };
    scene.validate()?;
    Ok(scene)
}
