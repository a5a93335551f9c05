//! One window of the joint objective: observations, window prior, mask, and
//! the per-step targets that are held fixed while gradients are taken.

use nalgebra::{DVector, Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CoinError, Result};
use crate::geometry::{exp_so3, log_so3, right_jacobian, rotate_with_jacobian};
use crate::motion::{nearest_equivalent_rotvec, BodyModel, CanonicalFrame, ChannelKind, MotionWindow, CONTACT_CHANNELS};
use crate::objectives::*;
use crate::prior::{forward_sample, Conditioner, Denoiser, GmmPrior, ObsNoise};
use crate::rig::CameraRig;
use crate::sds::{coin_denoise, dynamic_control_update, sds_weight, Inpainting, SdsConfig, SoftMask};
use crate::world::ObservationSet;

/// Current estimate of one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptVariables {
    pub motion: MotionWindow,
    pub rig: CameraRig,
    pub beta: [f64; 2],
}

/// How the motion prior produces the regression target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorUsage {
    /// Multi-step controlled denoising with inpainting.
    Coin,
    /// Single-step unconditional denoising.
    VanillaSds,
    /// No prior term.
    Off,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    pub no_control: bool,
    pub no_dynamic_control: bool,
    pub no_soft_inpaint: bool,
    pub no_hsr: bool,
}

/// `M = 1` where the governing joint's confidence is at least `threshold`;
/// the soft weights are the confidences themselves.
pub fn build_mask(obs: &ObservationSet, body: &BodyModel, threshold: f64) -> Result<SoftMask> {
    let frames = obs.frames();
    let layout = crate::motion::MotionLayout::new(frames, body.j_local());
    if obs.joints() != body.j_total() {
        return Err(CoinError::Shape { expected: body.j_total(), got: obs.joints() });
    }
    let fd = layout.frame_dim();
    let mut mask = Vec::with_capacity(layout.dim());
    let mut conf = DVector::zeros(layout.dim());
    for (i, kps) in obs.kp2d.iter().enumerate() {
        for c in 0..fd {
            let joint = match layout.channel_kind(c) {
                ChannelKind::Translation | ChannelKind::Orientation => 0,
                ChannelKind::Pose { joint } => joint + 1,
                ChannelKind::Contact => body.foot_indices[c - (fd - CONTACT_CHANNELS)] + 1,
            };
            let s = kps[joint].confidence;
            if !(0.0..=1.0).contains(&s) {
                return Err(CoinError::Domain("keypoint confidence outside [0, 1]".into()));
            }
            mask.push(s >= threshold);
            conf[i * fd + c] = s;
        }
    }
    SoftMask::new(mask, conf)
}

/// Targets drawn once per outer step and held fixed while differentiating.
#[derive(Debug, Clone)]
pub struct StepTargets {
    pub t: f64,
    /// Pseudo ground truth in world units.
    pub pseudo_gt: Option<MotionWindow>,
    pub labels: Vec<[f64; CONTACT_CHANNELS]>,
    pub hsr: HsrAssignments,
}

pub struct WindowProblem<'a> {
    pub obs: ObservationSet,
    pub body: &'a BodyModel,
    pub prior: GmmPrior,
    pub mask: SoftMask,
    pub sigma: DVector<f64>,
    conditioner: Conditioner,
    pub sds: SdsConfig,
    pub usage: PriorUsage,
    pub ablation: Ablation,
    pub weights: LossWeights,
}

impl<'a> WindowProblem<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        obs: ObservationSet,
        body: &'a BodyModel,
        prior: &GmmPrior,
        mask_threshold: f64,
        obs_noise: &ObsNoise,
        sds: SdsConfig,
        usage: PriorUsage,
        ablation: Ablation,
        mut weights: LossWeights,
    ) -> Result<Self> {
        obs.validate()?;
        obs_noise.validate()?;
        let prior = prior.leading_frames(obs.frames())?;
        let layout = prior.layout.ok_or_else(|| CoinError::Config("prior has no motion layout".into()))?;
        if layout.j_local != body.j_local() {
            return Err(CoinError::Shape { expected: body.j_local(), got: layout.j_local });
        }
        let mask = build_mask(&obs, body, mask_threshold)?;
        let sigma = obs_noise.sigma(&layout, &prior.normalizer);
        let conditioner = prior.conditioner(&mask.mask, &sigma)?;
        let mut sds = sds;
        if ablation.no_soft_inpaint {
            sds.inpainting = Inpainting::Off;
        }
        sds.validate()?;
        if ablation.no_hsr {
            weights.l_hsr = 0.0;
        }
        if usage == PriorUsage::Off {
            weights.l_coin_sds = 0.0;
        }
        Ok(Self { obs, body, prior, mask, sigma, conditioner, sds, usage, ablation, weights })
    }

    pub fn frames(&self) -> usize {
        self.obs.frames()
    }

    /// Motion implied by the local observations under the given camera.
    pub fn observed_motion(&self, rig: &CameraRig, beta: &[f64; 2]) -> MotionWindow {
        rig.world_from_local(&self.obs.local3d, self.body, beta)
    }

    /// Latent of `h` in the canonical frame of `frame`.
    pub fn to_latent(&self, frame: &CanonicalFrame, h: &MotionWindow) -> DVector<f64> {
        self.prior.normalizer.normalize(&frame.canonicalize(h).data)
    }

    pub fn from_latent(&self, frame: &CanonicalFrame, x: &DVector<f64>, reference: &MotionWindow) -> Result<MotionWindow> {
        let raw = MotionWindow::from_flat(reference.layout, self.prior.normalizer.denormalize(x))?;
        Ok(frame.restore(&raw, Some(reference)))
    }

    /// The prior conditioned on `values` (latent) with the window mask.
    pub fn conditioned(&self, values: &DVector<f64>) -> Result<GmmPrior> {
        self.conditioner.apply(values)
    }

    /// Pseudo ground truth for `vars` at diffusion time `t` and noise `eps`.
    pub fn pseudo_gt(&self, vars: &OptVariables, t: f64, eps: &DVector<f64>) -> Result<MotionWindow> {
        let h = &vars.motion;
        let frame = CanonicalFrame::of(h);
        let x = self.to_latent(&frame, h);
        let h0 = match self.usage {
            PriorUsage::Coin => {
                let conditioned;
                let unknown: &dyn Denoiser = if self.ablation.no_control {
                    &self.prior
                } else {
                    let initial = self.to_latent(&frame, &self.observed_motion(&vars.rig, &vars.beta));
                    let ctrl = dynamic_control_update(&x, &initial, &self.mask.mask, &self.sigma, !self.ablation.no_dynamic_control)?;
                    conditioned = self.conditioned(&ctrl.values)?;
                    &conditioned
                };
                coin_denoise(unknown, &x, &self.mask, &self.sds, t, eps)?.h0
            }
            PriorUsage::VanillaSds | PriorUsage::Off => {
                let xt = forward_sample(&self.prior.schedule, &x, t, eps)?;
                self.prior.denoise(&xt, t)?.h0_hat
            }
        };
        self.from_latent(&frame, &h0, h)
    }

    /// Draws `t` and `eps`, then recomputes every quantity held fixed during one step.
    pub fn targets<R: Rng + ?Sized>(&self, vars: &OptVariables, rng: &mut R, progress: f64) -> Result<StepTargets> {
        let t = self.sds.sample_t(rng, progress);
        let dim = vars.motion.data.len();
        let eps = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let pseudo_gt = if self.usage == PriorUsage::Off { None } else { Some(self.pseudo_gt(vars, t, &eps)?) };
        let labels = match &pseudo_gt {
            Some(g) => contact_labels_from_logits(g),
            None => contact_labels_from_logits(&vars.motion),
        };
        let hsr = if self.weights.l_hsr > 0.0 { hsr_assignments(&vars.motion, &vars.rig, &vars.beta, self.body, &self.obs.scene_est) } else { HsrAssignments::default() };
        Ok(StepTargets { t, pseudo_gt, labels, hsr })
    }

    /// `w(t)/T Σ ((H − H̃)/scale)²`, i.e. the squared latent distance per frame.
    pub fn sds_loss(&self, h: &MotionWindow, target: &MotionWindow, t: f64) -> Result<(f64, DVector<f64>)> {
        let w = sds_weight(&self.prior.schedule, t, self.sds.omega)? / h.frames() as f64;
        let scale = &self.prior.normalizer.scale;
        let mut loss = 0.0;
        let grad = DVector::from_fn(h.data.len(), |k, _| {
            let d = (h.data[k] - target.data[k]) / scale[k];
            loss += w * d * d;
            2.0 * w * d / scale[k]
        });
        Ok((loss, grad))
    }

    /// Every loss term at `vars` with `targets` fixed, and the weighted gradient.
    pub fn evaluate(&self, vars: &OptVariables, targets: &StepTargets) -> Result<(LossBreakdown, Grads)> {
        let w = &self.weights;
        let (h, rig, beta, body) = (&vars.motion, &vars.rig, &vars.beta, self.body);
        let mut total = Grads::zeros(h);
        let mut b = LossBreakdown { weights: w.clone(), ..LossBreakdown::default() };

        let (l, g) = loss_2d(h, rig, beta, body, &self.obs.kp2d)?;
        b.l_2d = l;
        total.add_scaled(&g, w.l_2d);
        let (l, g) = loss_3d(h, rig, beta, body, &self.obs.local3d)?;
        b.l_3d = l;
        total.add_scaled(&g, w.l_3d);
        let (l, gb) = loss_beta(beta);
        b.l_beta = l;
        total.beta[0] += w.l_beta * gb[0];
        total.beta[1] += w.l_beta * gb[1];
        if h.frames() >= 3 {
            let (l, g) = loss_smooth(h, beta, body)?;
            b.l_smooth = l;
            total.add_scaled(&g, w.l_smooth);
        }
        let (l, g) = loss_contact(h, beta, body, &targets.labels)?;
        b.l_contact = l;
        total.add_scaled(&g, w.l_contact);
        if w.l_hsr > 0.0 && !targets.hsr.pairs.is_empty() {
            let (l, g) = loss_hsr(h, rig, beta, body, &self.obs.scene_est, &targets.hsr)?;
            b.l_hsr = l;
            total.add_scaled(&g, w.l_hsr);
        }
        if let (Some(gt), true) = (&targets.pseudo_gt, w.l_coin_sds > 0.0) {
            let (l, g) = self.sds_loss(h, gt, targets.t)?;
            b.l_coin_sds = l;
            total.h.axpy(w.l_coin_sds, &g, 1.0);
        }
        let b = b.finalize();
        if !b.total.is_finite() || total.h.iter().any(|v| !v.is_finite()) {
            return Err(CoinError::Numeric { step: 0, msg: format!("non-finite objective: {b:?}") });
        }
        Ok((b, total))
    }
}

/// Motion held fixed relative to the cameras while the scale, height and
/// first-frame orientation move: `τ = R(r0)(q − s u) + h0 e_z`, `R_body = R(r0) M`.
#[derive(Debug, Clone)]
pub struct CameraAnchored {
    base: MotionWindow,
    q: Vec<Vector3<f64>>,
    u: Vec<Vector3<f64>>,
    m: Vec<Matrix3<f64>>,
}

impl CameraAnchored {
    pub fn new(h: &MotionWindow, rig: &CameraRig) -> Self {
        let frames = h.frames();
        let mut q = Vec::with_capacity(frames);
        let mut u = Vec::with_capacity(frames);
        let mut m = Vec::with_capacity(frames);
        for i in 0..frames {
            let rt = exp_so3(&rig.deltas[i].rotation) * rig.base.frames[i].rotation;
            let pc = rig.pose(i).transform(&h.translation(i));
            q.push(rt.transpose() * pc);
            u.push(rt.transpose() * rig.slam_translation(i));
            m.push(rt.transpose() * rig.rotation(i) * exp_so3(&h.orientation(i)));
        }
        Self { base: h.clone(), q, u, m }
    }

    pub fn motion(&self, rig: &CameraRig) -> MotionWindow {
        let r0 = rig.r0_matrix();
        let s = rig.scale();
        let mut h = self.base.clone();
        for i in 0..h.frames() {
            let tau = r0 * (self.q[i] - self.u[i] * s) + Vector3::new(0.0, 0.0, rig.height);
            h.set_translation(i, &tau);
            let phi = nearest_equivalent_rotvec(&log_so3(&(r0 * self.m[i])), &self.base.orientation(i));
            h.set_orientation(i, &phi);
        }
        h
    }

    /// Adds the motion gradient's contribution to the scale, height and `r0` gradients.
    pub fn chain(&self, rig: &CameraRig, h: &MotionWindow, g_h: &DVector<f64>, cam: &mut CameraGrad) {
        let r0 = rig.r0_matrix();
        let s = rig.scale();
        let jr0 = right_jacobian(&rig.r0);
        let l = h.layout;
        for i in 0..h.frames() {
            let gt = g_h.fixed_rows::<3>(l.translation(i)).into_owned();
            let go = g_h.fixed_rows::<3>(l.orientation(i)).into_owned();
            cam.height += gt.z;
            cam.log_scale -= gt.dot(&(r0 * self.u[i])) * s;
            let (_, jw) = rotate_with_jacobian(&rig.r0, &(self.q[i] - self.u[i] * s));
            cam.r0 += jw.transpose() * gt;
            let jinv = right_jacobian(&h.orientation(i)).try_inverse().unwrap_or_else(Matrix3::identity);
            cam.r0 += (jinv * self.m[i].transpose() * jr0).transpose() * go;
        }
    }
}
