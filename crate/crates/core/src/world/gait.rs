//! Procedural walking: a smooth planar root path with alternating foot stance and swing.

use std::f64::consts::PI;

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoinError, Result};
use crate::geometry::yaw_matrix;
use crate::motion::{BodyModel, MotionLayout, MotionWindow, CONTACT_CHANNELS};

pub const DEFAULT_DT: f64 = 1.0 / 30.0;
pub const V_CONTACT: f64 = 0.02;
pub const CONTACT_LOGIT: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaitParams {
    /// Forward speed in length units per second.
    pub speed: f64,
    /// Initial heading (radians, about +z).
    pub heading: f64,
    /// Heading rate in radians per second.
    pub turn_rate: f64,
    /// Duration of one full gait cycle in seconds.
    pub stride_period: f64,
    /// Fraction of the cycle each foot spends on the ground.
    pub duty: f64,
    pub lift: f64,
    pub bob: f64,
    pub pelvis_height: f64,
    /// Initial gait phase in `[0, 1)`; drawn from the seed when absent.
    pub phase: Option<f64>,
    pub start: [f64; 2],
    pub dt: f64,
    pub v_contact: f64,
}

impl Default for GaitParams {
    fn default() -> Self {
        Self {
            speed: 1.2,
            heading: 0.0,
            turn_rate: 0.0,
            stride_period: 1.1,
            duty: 0.6,
            lift: 0.08,
            bob: 0.02,
            pelvis_height: 0.9,
            phase: None,
            start: [0.0, 0.0],
            dt: DEFAULT_DT,
            v_contact: V_CONTACT,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedMotion {
    pub window: MotionWindow,
    /// Per frame and contact channel.
    pub contacts: Vec<[bool; CONTACT_CHANNELS]>,
    pub beta: [f64; 2],
}

struct Path<'a> {
    p: &'a GaitParams,
}

impl Path<'_> {
    fn heading(&self, time: f64) -> f64 {
        if self.p.speed == 0.0 {
            self.p.heading
        } else {
            self.p.heading + self.p.turn_rate * time
        }
    }

    fn root_xy(&self, time: f64) -> Vector2<f64> {
        let (v, w, h0) = (self.p.speed, self.p.turn_rate, self.p.heading);
        let start = Vector2::new(self.p.start[0], self.p.start[1]);
        if v == 0.0 {
            return start;
        }
        if w.abs() < 1e-12 {
            return start + Vector2::new(h0.cos(), h0.sin()) * (v * time);
        }
        let h = h0 + w * time;
        start + Vector2::new(h.sin() - h0.sin(), -(h.cos() - h0.cos())) * (v / w)
    }

    /// Ground position of a foot planted for the stance centred at `time`.
    fn footprint(&self, time: f64, lateral: f64) -> Vector3<f64> {
        let xy = self.root_xy(time);
        let side = yaw_matrix(self.heading(time)) * Vector3::new(0.0, lateral, 0.0);
        Vector3::new(xy.x + side.x, xy.y + side.y, 0.0)
    }

    /// World position of a foot whose cycle phase is `offset` at time zero.
    fn foot(&self, time: f64, offset: f64, lateral: f64, ground: f64) -> Vector3<f64> {
        let period = self.p.stride_period;
        let duty = self.p.duty;
        let cycle = time / period + offset;
        let n = cycle.floor();
        let phase = cycle - n;
        let stance_mid = |k: f64| (k - offset + 0.5 * duty) * period;
        let mut pos = if phase < duty {
            self.footprint(stance_mid(n), lateral)
        } else {
            let s = (phase - duty) / (1.0 - duty);
            let eased = 0.5 * (1.0 - (PI * s).cos());
            let from = self.footprint(stance_mid(n), lateral);
            let to = self.footprint(stance_mid(n + 1.0), lateral);
            let mut p = from + (to - from) * eased;
            p.z += self.p.lift * (PI * s).sin();
            p
        };
        pos.z += ground;
        pos
    }
}

/// Generates a walking window and its contact labels.
pub fn generate_motion(params: &GaitParams, body: &BodyModel, frames: usize, seed: u64) -> Result<GeneratedMotion> {
    if frames < 2 {
        return Err(CoinError::Domain("motion needs at least two frames".into()));
    }
    if !(params.stride_period > 0.0) || !(params.dt > 0.0) {
        return Err(CoinError::Domain("stride period and frame interval must be positive".into()));
    }
    if !(0.0 < params.duty && params.duty < 1.0) {
        return Err(CoinError::Domain("duty factor must lie in (0, 1)".into()));
    }
    body.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase = params.phase.unwrap_or_else(|| rng.random::<f64>());
    let path = Path { p: params };
    let layout = MotionLayout::new(frames, body.j_local());
    let mut window = MotionWindow::zeros(layout);
    let beta = [0.0, 0.0];
    let lfoot = body.rest_offsets[0];
    let rfoot = body.rest_offsets[1];
    // rest feet sit at pelvis height below the root
    let ground_l = params.pelvis_height + lfoot.z;
    let ground_r = params.pelvis_height + rfoot.z;

    let mut feet = Vec::with_capacity(frames);
    for i in 0..frames {
        let time = i as f64 * params.dt;
        let heading = path.heading(time);
        let cycle = 2.0 * PI * (time / params.stride_period + phase);
        let xy = path.root_xy(time);
        let z = params.pelvis_height + if params.speed == 0.0 { 0.0 } else { params.bob * (2.0 * cycle).cos() };
        let tau = Vector3::new(xy.x, xy.y, z);
        let (l, r) = if params.speed == 0.0 {
            let rot = yaw_matrix(heading);
            let l = tau + rot * lfoot;
            let r = tau + rot * rfoot;
            (Vector3::new(l.x, l.y, ground_l), Vector3::new(r.x, r.y, ground_r))
        } else {
            (path.foot(time, phase, lfoot.y, ground_l), path.foot(time, phase + 0.5, rfoot.y, ground_r))
        };
        feet.push([l, r]);
        let rot_t = yaw_matrix(heading).transpose();
        window.set_translation(i, &tau);
        window.set_orientation(i, &Vector3::new(0.0, 0.0, heading));
        window.set_pose(i, 0, &(rot_t * (l - tau) - lfoot));
        window.set_pose(i, 1, &(rot_t * (r - tau) - rfoot));
        window.set_pose(i, 2, &Vector3::new(0.05 * params.speed, 0.0, 0.0));
    }

    let contacts = contact_labels(&feet, &body.foot_indices, params.v_contact);
    for (i, c) in contacts.iter().enumerate() {
        window.set_contact_logits(i, &c.map(|on| if on { CONTACT_LOGIT } else { -CONTACT_LOGIT }));
    }
    Ok(GeneratedMotion { window, contacts, beta })
}

/// Contact when the per-frame displacement of the foot is below `v_contact`
/// (forward difference, backward on the last frame).
pub fn contact_labels(feet: &[[Vector3<f64>; 2]], foot_indices: &[usize; CONTACT_CHANNELS], v_contact: f64) -> Vec<[bool; CONTACT_CHANNELS]> {
    let n = feet.len();
    (0..n)
        .map(|i| {
            let (a, b) = if i + 1 < n { (i, i + 1) } else { (i - 1, i) };
            let mut out = [false; CONTACT_CHANNELS];
            for (c, &f) in foot_indices.iter().enumerate() {
                out[c] = (feet[b][f] - feet[a][f]).norm() < v_contact;
            }
            out
        })
        .collect()
}
