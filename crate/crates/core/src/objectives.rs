//! Data, regularization and scene terms of the joint objective, each with analytic gradients.

use nalgebra::{DVector, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{CoinError, Result};
use crate::geometry::{exp_so3, rotate_with_jacobian, DEPTH_EPSILON};
use crate::motion::{logistic, BodyModel, FrameJoints, MotionWindow, CONTACT_CHANNELS};
use crate::rig::CameraRig;
use crate::world::observe::Keypoint;
use crate::world::scene::{nearest_joint, occlusion_radius, Scene, OCCLUSION_FACTOR};

pub const HUBER_DELTA_PX: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub l_2d: f64,
    pub l_3d: f64,
    pub l_beta: f64,
    pub l_smooth: f64,
    pub l_contact: f64,
    pub l_hsr: f64,
    pub l_coin_sds: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { l_2d: 1.0, l_3d: 1.0, l_beta: 0.01, l_smooth: 0.1, l_contact: 0.1, l_hsr: 1.0, l_coin_sds: 0.5 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_2d: f64,
    pub l_3d: f64,
    pub l_beta: f64,
    pub l_smooth: f64,
    pub l_contact: f64,
    pub l_hsr: f64,
    pub l_coin_sds: f64,
    pub weights: LossWeights,
    pub total: f64,
}

impl LossBreakdown {
    pub fn weighted_total(&self) -> f64 {
        let w = &self.weights;
        w.l_2d * self.l_2d
            + w.l_3d * self.l_3d
            + w.l_beta * self.l_beta
            + w.l_smooth * self.l_smooth
            + w.l_contact * self.l_contact
            + w.l_hsr * self.l_hsr
            + w.l_coin_sds * self.l_coin_sds
    }

    pub fn finalize(mut self) -> Self {
        self.total = self.weighted_total();
        self
    }
}

/// Gradient with respect to the rig parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraGrad {
    pub log_scale: f64,
    pub height: f64,
    pub r0: Vector3<f64>,
    /// Per frame: rotation delta then translation delta.
    pub deltas: Vec<[Vector3<f64>; 2]>,
}

impl CameraGrad {
    pub fn zeros(frames: usize) -> Self {
        Self { log_scale: 0.0, height: 0.0, r0: Vector3::zeros(), deltas: vec![[Vector3::zeros(); 2]; frames] }
    }

    pub fn add_scaled(&mut self, other: &CameraGrad, w: f64) {
        self.log_scale += w * other.log_scale;
        self.height += w * other.height;
        self.r0 += other.r0 * w;
        for (a, b) in self.deltas.iter_mut().zip(&other.deltas) {
            a[0] += b[0] * w;
            a[1] += b[1] * w;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub h: DVector<f64>,
    pub beta: [f64; 2],
    pub cam: CameraGrad,
}

impl Grads {
    pub fn zeros(h: &MotionWindow) -> Self {
        Self { h: DVector::zeros(h.data.len()), beta: [0.0; 2], cam: CameraGrad::zeros(h.frames()) }
    }

    pub fn add_scaled(&mut self, other: &Grads, w: f64) {
        self.h.axpy(w, &other.h, 1.0);
        self.beta[0] += w * other.beta[0];
        self.beta[1] += w * other.beta[1];
        self.cam.add_scaled(&other.cam, w);
    }
}

/// Rig quantities of one frame used by the chain rule.
struct RigFrame {
    scale: f64,
    height: f64,
    rd: Matrix3<f64>,
    rb: Matrix3<f64>,
    r0t: Matrix3<f64>,
    rot: Matrix3<f64>,
    slam_t: Vector3<f64>,
    delta_rot: Vector3<f64>,
    r0: Vector3<f64>,
}

impl RigFrame {
    fn new(rig: &CameraRig, i: usize) -> Self {
        let rd = exp_so3(&rig.deltas[i].rotation);
        let rb = rig.base.frames[i].rotation;
        let r0t = rig.r0_matrix().transpose();
        Self { scale: rig.scale(), height: rig.height, rot: rd * rb * r0t, rd, rb, r0t, slam_t: rig.slam_translation(i), delta_rot: rig.deltas[i].rotation, r0: rig.r0 }
    }

    fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rot * (p - Vector3::new(0.0, 0.0, self.height)) + self.slam_t * self.scale
    }

    /// Accumulates camera gradients for upstream `g = dL/dp_cam` and returns `dL/dp`.
    fn backprop(&self, i: usize, p: &Vector3<f64>, g: &Vector3<f64>, cam: &mut CameraGrad) -> Vector3<f64> {
        let v = p - Vector3::new(0.0, 0.0, self.height);
        let q = self.rb * (self.r0t * v);
        cam.height -= g.dot(&(self.rot * Vector3::z()));
        cam.log_scale += g.dot(&(self.slam_t * self.scale));
        cam.deltas[i][1] += g * self.scale;
        let (_, jw) = rotate_with_jacobian(&self.delta_rot, &q);
        cam.deltas[i][0] += jw.transpose() * g;
        let (_, jm) = rotate_with_jacobian(&(-self.r0), &v);
        cam.r0 -= (self.rd * self.rb * jm).transpose() * g;
        self.rot.transpose() * g
    }

    /// Camera-frame position of a SLAM-frame scene point.
    fn scene_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        (self.rd * self.rb * p + self.slam_t) * self.scale
    }

    fn backprop_scene(&self, i: usize, p: &Vector3<f64>, g: &Vector3<f64>, cam: &mut CameraGrad) {
        let pc = self.scene_to_camera(p);
        cam.log_scale += g.dot(&pc);
        cam.deltas[i][1] += g * self.scale;
        let (_, jw) = rotate_with_jacobian(&self.delta_rot, &(self.rb * p));
        cam.deltas[i][0] += jw.transpose() * g * self.scale;
    }
}

/// Adds `dL/d joint_j` of frame `i` into the motion and shape gradients.
fn backprop_joint(h: &MotionWindow, fj: &FrameJoints, i: usize, j: usize, g: &Vector3<f64>, grads: &mut Grads) {
    let l = h.layout;
    let t = l.translation(i);
    for k in 0..3 {
        grads.h[t + k] += g[k];
    }
    if j == 0 {
        return;
    }
    let jl = j - 1;
    let go = fj.d_orient[jl].transpose() * g;
    let gp = fj.rotation.transpose() * g;
    let o = l.orientation(i);
    let p = l.pose(i, jl);
    for k in 0..3 {
        grads.h[o + k] += go[k];
        grads.h[p + k] += gp[k];
    }
    grads.beta[0] += fj.d_beta[jl][0].dot(g);
    grads.beta[1] += fj.d_beta[jl][1].dot(g);
}

fn check_frames(h: &MotionWindow, rig: &CameraRig, n: usize) -> Result<()> {
    if rig.len() != h.frames() || n != h.frames() {
        return Err(CoinError::Shape { expected: h.frames(), got: rig.len().min(n) });
    }
    Ok(())
}

/// Confidence-weighted Huber reprojection error, averaged over `T·J`.
pub fn loss_2d(h: &MotionWindow, rig: &CameraRig, beta: &[f64; 2], body: &BodyModel, kp2d: &[Vec<Keypoint>]) -> Result<(f64, Grads)> {
    check_frames(h, rig, kp2d.len())?;
    let intr = rig.base.intrinsics;
    let nj = body.j_total();
    let norm = (h.frames() * nj) as f64;
    let mut grads = Grads::zeros(h);
    let mut loss = 0.0;
    let mut behind = 0usize;
    for i in 0..h.frames() {
        let rf = RigFrame::new(rig, i);
        let fj = body.frame_joints(h, i, beta);
        for (j, kp) in kp2d[i].iter().enumerate().take(nj) {
            if kp.confidence <= 0.0 {
                continue;
            }
            let p = fj.positions[j];
            let pc = rf.to_camera(&p);
            let Ok((px, jac)) = intr.project_camera_point(&pc) else {
                behind += 1;
                continue;
            };
            let res = px - kp.pixel;
            let r = res.norm();
            let (rho, dres): (f64, Vector2<f64>) = if r <= HUBER_DELTA_PX { (0.5 * r * r, res) } else { (HUBER_DELTA_PX * (r - 0.5 * HUBER_DELTA_PX), res * (HUBER_DELTA_PX / r)) };
            loss += kp.confidence * rho / norm;
            let gpx = dres * (kp.confidence / norm);
            let gpc = Vector3::new(jac[0][0] * gpx.x + jac[1][0] * gpx.y, jac[0][1] * gpx.x + jac[1][1] * gpx.y, jac[0][2] * gpx.x + jac[1][2] * gpx.y);
            let gp = rf.backprop(i, &p, &gpc, &mut grads.cam);
            backprop_joint(h, &fj, i, j, &gp, &mut grads);
        }
    }
    if behind > 0 {
        log::warn!("{behind} joints behind the camera were left out of the reprojection loss");
    }
    Ok((loss, grads))
}

/// Root-relative camera-frame joint error, averaged over `T·J`.
pub fn loss_3d(h: &MotionWindow, rig: &CameraRig, beta: &[f64; 2], body: &BodyModel, local3d: &[Vec<Vector3<f64>>]) -> Result<(f64, Grads)> {
    check_frames(h, rig, local3d.len())?;
    let nj = body.j_total();
    let norm = (h.frames() * nj) as f64;
    let mut grads = Grads::zeros(h);
    let mut loss = 0.0;
    for i in 0..h.frames() {
        let rf = RigFrame::new(rig, i);
        let fj = body.frame_joints(h, i, beta);
        let root_c = rf.to_camera(&fj.positions[0]);
        let obs_root = local3d[i][0];
        let mut g_root = Vector3::zeros();
        for j in 1..nj {
            let pc = rf.to_camera(&fj.positions[j]);
            let d = (pc - root_c) - (local3d[i][j] - obs_root);
            loss += d.norm_squared() / norm;
            let g = d * (2.0 / norm);
            let gp = rf.backprop(i, &fj.positions[j], &g, &mut grads.cam);
            backprop_joint(h, &fj, i, j, &gp, &mut grads);
            g_root -= g;
        }
        let gp = rf.backprop(i, &fj.positions[0], &g_root, &mut grads.cam);
        backprop_joint(h, &fj, i, 0, &gp, &mut grads);
    }
    Ok((loss, grads))
}

/// Mean squared second difference of world joints, translation and orientation.
pub fn loss_smooth(h: &MotionWindow, beta: &[f64; 2], body: &BodyModel) -> Result<(f64, Grads)> {
    let t = h.frames();
    if t < 3 {
        return Err(CoinError::Domain("smoothness needs at least three frames".into()));
    }
    let nj = body.j_total();
    let norm = ((t - 2) * (nj + 2)) as f64;
    let frames: Vec<FrameJoints> = (0..t).map(|i| body.frame_joints(h, i, beta)).collect();
    let mut grads = Grads::zeros(h);
    let mut loss = 0.0;
    let l = h.layout;
    for i in 1..t - 1 {
        for j in 0..nj {
            let d = frames[i - 1].positions[j] - frames[i].positions[j] * 2.0 + frames[i + 1].positions[j];
            loss += d.norm_squared() / norm;
            let g = d * (2.0 / norm);
            backprop_joint(h, &frames[i - 1], i - 1, j, &g, &mut grads);
            backprop_joint(h, &frames[i], i, j, &(g * -2.0), &mut grads);
            backprop_joint(h, &frames[i + 1], i + 1, j, &g, &mut grads);
        }
        for base in [l.translation(0), l.orientation(0)] {
            for k in 0..3 {
                let at = |f: usize| base + f * l.frame_dim() + k;
                let d = h.data[at(i - 1)] - 2.0 * h.data[at(i)] + h.data[at(i + 1)];
                loss += d * d / norm;
                let g = 2.0 * d / norm;
                grads.h[at(i - 1)] += g;
                grads.h[at(i)] -= 2.0 * g;
                grads.h[at(i + 1)] += g;
            }
        }
    }
    Ok((loss, grads))
}

/// Binary contact labels from logits, `logistic(f) > 0.5`.
pub fn contact_labels_from_logits(h: &MotionWindow) -> Vec<[f64; CONTACT_CHANNELS]> {
    (0..h.frames()).map(|i| h.contact_logits(i).map(|f| if logistic(f) > 0.5 { 1.0 } else { 0.0 })).collect()
}

/// Labelled squared foot displacement between consecutive frames, averaged over `(T−1)·4`.
pub fn loss_contact(h: &MotionWindow, beta: &[f64; 2], body: &BodyModel, labels: &[[f64; CONTACT_CHANNELS]]) -> Result<(f64, Grads)> {
    let t = h.frames();
    if labels.len() != t {
        return Err(CoinError::Shape { expected: t, got: labels.len() });
    }
    let mut grads = Grads::zeros(h);
    if t < 2 {
        return Ok((0.0, grads));
    }
    let norm = ((t - 1) * CONTACT_CHANNELS) as f64;
    let frames: Vec<FrameJoints> = (0..t).map(|i| body.frame_joints(h, i, beta)).collect();
    let mut loss = 0.0;
    for i in 0..t - 1 {
        for (c, &foot) in body.foot_indices.iter().enumerate() {
            let w = labels[i][c];
            if w == 0.0 {
                continue;
            }
            let j = foot + 1;
            let d = frames[i + 1].positions[j] - frames[i].positions[j];
            loss += w * d.norm_squared() / norm;
            let g = d * (2.0 * w / norm);
            backprop_joint(h, &frames[i + 1], i + 1, j, &g, &mut grads);
            backprop_joint(h, &frames[i], i, j, &(-g), &mut grads);
        }
    }
    Ok((loss, grads))
}

pub fn loss_beta(beta: &[f64; 2]) -> (f64, [f64; 2]) {
    (beta[0] * beta[0] + beta[1] * beta[1], [2.0 * beta[0], 2.0 * beta[1]])
}

/// Frozen occlusion pairs `(frame, scene point, nearest joint)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HsrAssignments {
    pub pairs: Vec<(usize, usize, usize)>,
}

/// Scene points whose projection falls within the occlusion radius of the
/// nearest projected joint, evaluated at the current estimate.
pub fn hsr_assignments(h: &MotionWindow, rig: &CameraRig, beta: &[f64; 2], body: &BodyModel, scene: &Scene) -> HsrAssignments {
    let intr = rig.base.intrinsics;
    let mut pairs = Vec::new();
    for i in 0..h.frames() {
        let rf = RigFrame::new(rig, i);
        let joints = body.frame_joints(h, i, beta).positions;
        let pixels: Vec<Option<Vector2<f64>>> = joints.iter().map(|p| intr.project_camera_point(&rf.to_camera(p)).ok().map(|(px, _)| px)).collect();
        let r = occlusion_radius(&pixels, OCCLUSION_FACTOR);
        for (k, p) in scene.points.iter().enumerate() {
            let pc = rf.scene_to_camera(p);
            if pc.z <= DEPTH_EPSILON {
                continue;
            }
            let px = intr.focal * pc.xy() / pc.z + Vector2::new(intr.cx, intr.cy);
            if !intr.in_image(&px) {
                continue;
            }
            if let Some((j, d2)) = nearest_joint(&pixels, &px) {
                if d2 <= r * r {
                    pairs.push((i, k, j));
                }
            }
        }
    }
    HsrAssignments { pairs }
}

/// `(1/|P|) Σ max(0, z_joint − z_point)` over the frozen occlusion pairs, with
/// scene points scaled by the rig's scale.
pub fn loss_hsr(h: &MotionWindow, rig: &CameraRig, beta: &[f64; 2], body: &BodyModel, scene: &Scene, assign: &HsrAssignments) -> Result<(f64, Grads)> {
    scene.validate()?;
    let norm = scene.points.len() as f64;
    let mut grads = Grads::zeros(h);
    let mut loss = 0.0;
    let mut cache: Option<(usize, RigFrame, FrameJoints)> = None;
    for &(i, k, j) in &assign.pairs {
        if cache.as_ref().is_none_or(|c| c.0 != i) {
            cache = Some((i, RigFrame::new(rig, i), body.frame_joints(h, i, beta)));
        }
        let (_, rf, fj) = cache.as_ref().unwrap();
        let zp = rf.scene_to_camera(&scene.points[k]).z;
        let zj = rf.to_camera(&fj.positions[j]).z;
        let v = zj - zp;
        if v <= 0.0 {
            continue;
        }
        loss += v / norm;
        let g = Vector3::new(0.0, 0.0, 1.0 / norm);
        let gp = rf.backprop(i, &fj.positions[j], &g, &mut grads.cam);
        backprop_joint(h, fj, i, j, &gp, &mut grads);
        rf.backprop_scene(i, &scene.points[k], &(-g), &mut grads.cam);
    }
    Ok((loss, grads))
}
