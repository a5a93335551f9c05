//! Per-frame subject state, the stick-figure body and coordinate gauges.
//!
//! A frame holds `[translation(3), orientation(3), local joints(3*J), contact logits(4)]`.
//! Windows are stored frame-major in a single flat vector.

use nalgebra::{DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{CoinError, Result};
use crate::geometry::{exp_so3, log_so3, rotate_with_jacobian, yaw_matrix};

pub const CONTACT_CHANNELS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MotionLayout {
    pub frames: usize,
    pub j_local: usize,
}

/// Role of a channel within a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelKind {
    Translation,
    Orientation,
    Pose { joint: usize },
    Contact,
}

impl MotionLayout {
    pub fn new(frames: usize, j_local: usize) -> Self {
        Self { frames, j_local }
    }

    pub fn frame_dim(&self) -> usize {
        10 + 3 * self.j_local
    }

    pub fn dim(&self) -> usize {
        self.frames * self.frame_dim()
    }

    pub fn translation(&self, frame: usize) -> usize {
        frame * self.frame_dim()
    }

    pub fn orientation(&self, frame: usize) -> usize {
        frame * self.frame_dim() + 3
    }

    pub fn pose(&self, frame: usize, joint: usize) -> usize {
        frame * self.frame_dim() + 6 + 3 * joint
    }

    pub fn contact(&self, frame: usize) -> usize {
        frame * self.frame_dim() + 6 + 3 * self.j_local
    }

    pub fn channel_kind(&self, channel: usize) -> ChannelKind {
        let c = channel % self.frame_dim();
        match c {
            0..=2 => ChannelKind::Translation,
            3..=5 => ChannelKind::Orientation,
            _ if c < 6 + 3 * self.j_local => ChannelKind::Pose { joint: (c - 6) / 3 },
            _ => ChannelKind::Contact,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionWindow {
    pub layout: MotionLayout,
    pub data: DVector<f64>,
}

fn v3(d: &DVector<f64>, at: usize) -> Vector3<f64> {
    Vector3::new(d[at], d[at + 1], d[at + 2])
}

fn set3(d: &mut DVector<f64>, at: usize, v: &Vector3<f64>) {
    d[at] = v.x;
    d[at + 1] = v.y;
    d[at + 2] = v.z;
}

impl MotionWindow {
    pub fn zeros(layout: MotionLayout) -> Self {
        Self { layout, data: DVector::zeros(layout.dim()) }
    }

    pub fn from_flat(layout: MotionLayout, data: DVector<f64>) -> Result<Self> {
        if data.len() != layout.dim() {
            return Err(CoinError::Shape { expected: layout.dim(), got: data.len() });
        }
        Ok(Self { layout, data })
    }

    pub fn flatten(&self) -> DVector<f64> {
        self.data.clone()
    }

    pub fn frames(&self) -> usize {
        self.layout.frames
    }

    pub fn translation(&self, i: usize) -> Vector3<f64> {
        v3(&self.data, self.layout.translation(i))
    }

    pub fn set_translation(&mut self, i: usize, v: &Vector3<f64>) {
        set3(&mut self.data, self.layout.translation(i), v)
    }

    pub fn orientation(&self, i: usize) -> Vector3<f64> {
        v3(&self.data, self.layout.orientation(i))
    }

    pub fn set_orientation(&mut self, i: usize, v: &Vector3<f64>) {
        set3(&mut self.data, self.layout.orientation(i), v)
    }

    pub fn pose(&self, i: usize, j: usize) -> Vector3<f64> {
        v3(&self.data, self.layout.pose(i, j))
    }

    pub fn set_pose(&mut self, i: usize, j: usize, v: &Vector3<f64>) {
        set3(&mut self.data, self.layout.pose(i, j), v)
    }

    pub fn contact_logits(&self, i: usize) -> [f64; CONTACT_CHANNELS] {
        let at = self.layout.contact(i);
        [self.data[at], self.data[at + 1], self.data[at + 2], self.data[at + 3]]
    }

    pub fn set_contact_logits(&mut self, i: usize, f: &[f64; CONTACT_CHANNELS]) {
        let at = self.layout.contact(i);
        for (k, v) in f.iter().enumerate() {
            self.data[at + k] = *v;
        }
    }

    /// Contact probabilities through the logistic map.
    pub fn contact_probabilities(&self, i: usize) -> [f64; CONTACT_CHANNELS] {
        self.contact_logits(i).map(logistic)
    }

    /// Sub-window of frames `[start, start + len)`.
    pub fn slice(&self, start: usize, len: usize) -> Self {
        let fd = self.layout.frame_dim();
        let layout = MotionLayout::new(len, self.layout.j_local);
        let data = DVector::from_column_slice(&self.data.as_slice()[start * fd..(start + len) * fd]);
        Self { layout, data }
    }
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Stick-figure body: a root plus `J_local` joints hanging off it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyModel {
    pub rest_offsets: Vec<Vector3<f64>>,
    /// Local joint index driving each contact channel.
    pub foot_indices: [usize; CONTACT_CHANNELS],
}

impl Default for BodyModel {
    fn default() -> Self {
        Self {
            rest_offsets: vec![
                Vector3::new(0.0, 0.1, -0.9),  // left foot
                Vector3::new(0.0, -0.1, -0.9), // right foot
                Vector3::new(0.0, 0.0, 0.75),  // head
                Vector3::new(0.15, 0.0, 0.0),  // pelvis-forward marker
            ],
            // heel/toe channel pairs both map to the single foot joint
            foot_indices: [0, 0, 1, 1],
        }
    }
}

/// World joints of one frame and the pieces needed to backpropagate into
/// the frame's channels and the shape vector.
#[derive(Debug, Clone)]
pub struct FrameJoints {
    /// Root first, then local joints.
    pub positions: Vec<Vector3<f64>>,
    pub rotation: Matrix3<f64>,
    /// d position / d orientation for each local joint.
    pub d_orient: Vec<Matrix3<f64>>,
    /// d position / d beta (columns: limb scale, height scale) per local joint.
    pub d_beta: Vec<[Vector3<f64>; 2]>,
}

impl BodyModel {
    pub fn j_local(&self) -> usize {
        self.rest_offsets.len()
    }

    /// Number of observed joints (root included).
    pub fn j_total(&self) -> usize {
        self.rest_offsets.len() + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.foot_indices.iter().any(|&f| f >= self.j_local()) {
            return Err(CoinError::Config("foot index out of range".into()));
        }
        Ok(())
    }

    pub fn scaled_offset(&self, j: usize, beta: &[f64; 2]) -> Vector3<f64> {
        let r = self.rest_offsets[j];
        Vector3::new(r.x * (1.0 + beta[0]), r.y * (1.0 + beta[0]), r.z * (1.0 + beta[1]))
    }

    pub fn frame_joints(&self, h: &MotionWindow, i: usize, beta: &[f64; 2]) -> FrameJoints {
        let tau = h.translation(i);
        let phi = h.orientation(i);
        let rot = exp_so3(&phi);
        let mut positions = Vec::with_capacity(self.j_total());
        let mut d_orient = Vec::with_capacity(self.j_local());
        let mut d_beta = Vec::with_capacity(self.j_local());
        positions.push(tau);
        for j in 0..self.j_local() {
            let local = self.scaled_offset(j, beta) + h.pose(i, j);
            let (rotated, jac) = rotate_with_jacobian(&phi, &local);
            positions.push(tau + rotated);
            d_orient.push(jac);
            let r = self.rest_offsets[j];
            d_beta.push([rot * Vector3::new(r.x, r.y, 0.0), rot * Vector3::new(0.0, 0.0, r.z)]);
        }
        FrameJoints { positions, rotation: rot, d_orient, d_beta }
    }

    /// World positions of all joints (root first) for every frame.
    pub fn joints(&self, h: &MotionWindow, beta: &[f64; 2]) -> Vec<Vec<Vector3<f64>>> {
        (0..h.frames()).map(|i| self.frame_joints(h, i, beta).positions).collect()
    }

    /// Recovers the frame state from world joints, taking the heading from the
    /// forward marker and leaving roll and pitch at zero.
    pub fn state_from_joints(&self, joints: &[Vector3<f64>], beta: &[f64; 2], marker: usize) -> (Vector3<f64>, Vector3<f64>, Vec<Vector3<f64>>) {
        let root = joints[0];
        let fwd = joints[1 + marker] - root;
        let rest = self.rest_offsets[marker];
        let yaw = fwd.y.atan2(fwd.x) - rest.y.atan2(rest.x);
        let phi = Vector3::new(0.0, 0.0, yaw);
        let rt = yaw_matrix(yaw).transpose();
        let pose = (0..self.j_local()).map(|j| rt * (joints[1 + j] - root) - self.scaled_offset(j, beta)).collect();
        (root, phi, pose)
    }
}

/// Rotation vector equivalent to `phi` that lies closest to `reference`.
pub fn nearest_equivalent_rotvec(phi: &Vector3<f64>, reference: &Vector3<f64>) -> Vector3<f64> {
    let angle = phi.norm();
    let axis = if angle > 1e-12 {
        phi / angle
    } else if reference.norm() > 1e-12 {
        reference.normalize()
    } else {
        return *phi;
    };
    let mut best = *phi;
    let mut best_d = (phi - reference).norm();
    for k in -3..=3 {
        let cand = axis * (angle + 2.0 * std::f64::consts::PI * k as f64);
        let d = (cand - reference).norm();
        if d < best_d {
            best = cand;
            best_d = d;
        }
    }
    best
}

/// Horizontal translation and heading that move a window into the prior's
/// canonical frame (first-frame root at the horizontal origin, facing +x).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CanonicalFrame {
    pub yaw: f64,
    pub origin: Vector3<f64>,
}

impl CanonicalFrame {
    pub fn identity() -> Self {
        Self { yaw: 0.0, origin: Vector3::zeros() }
    }

    pub fn of(h: &MotionWindow) -> Self {
        let tau = h.translation(0);
        let r = exp_so3(&h.orientation(0));
        let yaw = r[(1, 0)].atan2(r[(0, 0)]);
        Self { yaw, origin: Vector3::new(tau.x, tau.y, 0.0) }
    }

    pub fn canonicalize(&self, h: &MotionWindow) -> MotionWindow {
        let mut out = h.clone();
        let rz = yaw_matrix(-self.yaw);
        for i in 0..h.frames() {
            out.set_translation(i, &(rz * (h.translation(i) - self.origin)));
            let phi = log_so3(&(rz * exp_so3(&h.orientation(i))));
            out.set_orientation(i, &phi);
        }
        out
    }

    /// Inverse of [`canonicalize`](Self::canonicalize); orientation vectors are
    /// unwrapped towards `reference` when given.
    pub fn restore(&self, h: &MotionWindow, reference: Option<&MotionWindow>) -> MotionWindow {
        let mut out = h.clone();
        let rz = yaw_matrix(self.yaw);
        for i in 0..h.frames() {
            out.set_translation(i, &(rz * h.translation(i) + self.origin));
            let mut phi = log_so3(&(rz * exp_so3(&h.orientation(i))));
            if let Some(r) = reference {
                phi = nearest_equivalent_rotvec(&phi, &r.orientation(i));
            }
            out.set_orientation(i, &phi);
        }
        out
    }

    /// Maps a per-channel world-frame gradient into the canonical frame for the
    /// translation channels (orientation is treated as yaw-equivariant).
    pub fn rotate_translation_channels(&self, v: &mut DVector<f64>, layout: &MotionLayout, to_world: bool) {
        let rz = yaw_matrix(if to_world { self.yaw } else { -self.yaw });
        for i in 0..layout.frames {
            let at = layout.translation(i);
            let r = rz * v3(v, at);
            set3(v, at, &r);
        }
    }
}

/// Per-channel affine map between raw motion units and the prior's latent units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self { offset: vec![0.0; dim], scale: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    pub fn normalize(&self, raw: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(raw.len(), raw.iter().enumerate().map(|(i, v)| (v - self.offset[i]) / self.scale[i]))
    }

    pub fn denormalize(&self, latent: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(latent.len(), latent.iter().enumerate().map(|(i, v)| v * self.scale[i] + self.offset[i]))
    }

    /// Per-feature statistics over canonical windows, tiled over frames.
    /// Horizontal translation channels share one scale, as do the three
    /// orientation channels, so the canonical yaw gauge stays an isometry.
    pub fn fit(windows: &[MotionWindow]) -> Result<Self> {
        let first = windows.first().ok_or_else(|| CoinError::Domain("empty dataset".into()))?;
        let layout = first.layout;
        let fd = layout.frame_dim();
        let mut sum = vec![0.0; fd];
        let mut sq = vec![0.0; fd];
        let mut n = 0.0;
        for w in windows {
            if w.layout != layout {
                return Err(CoinError::Shape { expected: layout.dim(), got: w.layout.dim() });
            }
            for i in 0..layout.frames {
                for c in 0..fd {
                    let v = w.data[i * fd + c];
                    sum[c] += v;
                    sq[c] += v * v;
                }
                n += 1.0;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let mut std: Vec<f64> = sq.iter().zip(&mean).map(|(q, m)| (q / n - m * m).max(0.0).sqrt()).collect();
        let hxy = std[0].max(std[1]);
        std[0] = hxy;
        std[1] = hxy;
        let orient = std[3].max(std[4]).max(std[5]);
        for s in &mut std[3..6] {
            *s = orient;
        }
        let mut offset = mean.clone();
        // keep the horizontal offset rotation-free
        offset[0] = 0.0;
        offset[1] = 0.0;
        for c in 0..fd {
            let floor = match layout.channel_kind(c) {
                ChannelKind::Translation | ChannelKind::Pose { .. } => 0.01,
                ChannelKind::Orientation => 0.01,
                ChannelKind::Contact => 0.1,
            };
            std[c] = std[c].max(floor);
        }
        let mut o = Vec::with_capacity(layout.dim());
        let mut s = Vec::with_capacity(layout.dim());
        for _ in 0..layout.frames {
            o.extend_from_slice(&offset);
            s.extend_from_slice(&std);
        }
        Ok(Self { offset: o, scale: s })
    }
}
