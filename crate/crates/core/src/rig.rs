//! Camera parameterization used by the optimizer: SLAM poses corrected by a
//! global scale, first-frame height and orientation, plus optional per-frame deltas.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::{exp_so3, CameraPose, CameraTrajectory};
use crate::motion::{BodyModel, MotionLayout, MotionWindow};
use crate::world::gait::{contact_labels, CONTACT_LOGIT, V_CONTACT};

/// Per-frame correction: rotation vector applied on the left and translation offset in SLAM units.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PoseDelta {
    pub rotation: Vector3<f64>,
    pub translation: Vector3<f64>,
}

/// `p_cam = R_i (p − h0 e_z) + s (t̂_i + δt_i)` with `R_i = exp(δω_i) R̂_i R(r0)ᵀ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub base: CameraTrajectory,
    pub log_scale: f64,
    pub height: f64,
    pub r0: Vector3<f64>,
    pub deltas: Vec<PoseDelta>,
}

impl CameraRig {
    pub fn new(base: CameraTrajectory) -> Self {
        let n = base.len();
        Self { base, log_scale: 0.0, height: 0.0, r0: Vector3::zeros(), deltas: vec![PoseDelta::default(); n] }
    }

    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    pub fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    pub fn r0_matrix(&self) -> Matrix3<f64> {
        exp_so3(&self.r0)
    }

    pub fn rotation(&self, i: usize) -> Matrix3<f64> {
        exp_so3(&self.deltas[i].rotation) * self.base.frames[i].rotation * self.r0_matrix().transpose()
    }

    /// SLAM translation including the delta, before scaling.
    pub fn slam_translation(&self, i: usize) -> Vector3<f64> {
        self.base.frames[i].translation + self.deltas[i].translation
    }

    pub fn pose(&self, i: usize) -> CameraPose {
        let r = self.rotation(i);
        CameraPose::new(r, self.slam_translation(i) * self.scale() - r * Vector3::new(0.0, 0.0, self.height))
    }

    pub fn trajectory(&self) -> CameraTrajectory {
        CameraTrajectory { frames: (0..self.len()).map(|i| self.pose(i)).collect(), intrinsics: self.base.intrinsics }
    }

    /// World point from a camera-frame point.
    pub fn to_world(&self, i: usize, pc: &Vector3<f64>) -> Vector3<f64> {
        let pose = self.pose(i);
        pose.rotation.transpose() * (pc - pose.translation)
    }

    /// Scene points given in SLAM units, mapped into the world.
    pub fn scene_to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.r0_matrix() * p * self.scale() + Vector3::new(0.0, 0.0, self.height)
    }

    /// Lifts camera-frame joints into world-frame motion; heading comes from the
    /// forward marker, contacts from the foot speed threshold.
    pub fn world_from_local(&self, local3d: &[Vec<Vector3<f64>>], body: &BodyModel, beta: &[f64; 2]) -> MotionWindow {
        let frames = local3d.len();
        let marker = body.j_local() - 1;
        let mut h = MotionWindow::zeros(MotionLayout::new(frames, body.j_local()));
        let mut feet = Vec::with_capacity(frames);
        let mut prev_yaw: Option<f64> = None;
        for (i, joints_c) in local3d.iter().enumerate() {
            let world: Vec<Vector3<f64>> = joints_c.iter().map(|p| self.to_world(i, p)).collect();
            let (tau, mut phi, pose) = body.state_from_joints(&world, beta, marker);
            if let Some(p) = prev_yaw {
                let two_pi = std::f64::consts::TAU;
                phi.z += two_pi * ((p - phi.z) / two_pi).round();
            }
            prev_yaw = Some(phi.z);
            h.set_translation(i, &tau);
            h.set_orientation(i, &phi);
            for (j, v) in pose.iter().enumerate() {
                h.set_pose(i, j, v);
            }
            let fi = body.foot_indices;
            feet.push([world[1 + fi[0]], world[1 + fi[2]]]);
        }
        let pair_indices = [0, 0, 1, 1];
        for (i, c) in contact_labels(&feet, &pair_indices, V_CONTACT).iter().enumerate() {
            h.set_contact_logits(i, &c.map(|on| if on { CONTACT_LOGIT } else { -CONTACT_LOGIT }));
        }
        h
    }
}
