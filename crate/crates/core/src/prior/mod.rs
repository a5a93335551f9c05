//! Diffusion forward process, denoisers and the DDIM update.

mod fit;
mod gmm;
mod io;

pub use fit::{fit_gmm, fit_motion_prior, FitConfig, FitReport};
pub use gmm::{Conditioner, GmmComponent, GmmPrior, LowRankCov, Posterior, DEFAULT_COV_FLOOR};
pub use io::{load_prior, read_prior_binary, read_prior_json, save_prior, write_prior_binary, write_prior_json};

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CoinError, Result};
use crate::motion::{ChannelKind, MotionLayout, Normalizer};
use crate::schedule::DiffusionSchedule;

/// Default observation noise per channel kind in raw motion units.
pub const TRANSLATION_NOISE: f64 = 0.1;
pub const ORIENTATION_NOISE: f64 = 0.05;
pub const POSE_NOISE: f64 = 0.01;
pub const CONTACT_NOISE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserOutput {
    pub h0_hat: DVector<f64>,
    pub eps_hat: DVector<f64>,
}

/// Partial observation `c ⊙ M` with Gaussian noise on the observed channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSignal {
    pub values: DVector<f64>,
    pub mask: Vec<bool>,
    pub obs_noise_sigma: DVector<f64>,
}

impl ControlSignal {
    pub fn validate(&self) -> Result<()> {
        let n = self.values.len();
        if self.mask.len() != n || self.obs_noise_sigma.len() != n {
            return Err(CoinError::Shape { expected: n, got: self.mask.len() });
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(CoinError::Numeric { step: 0, msg: "non-finite control values".into() });
        }
        if self.mask.iter().zip(self.obs_noise_sigma.iter()).any(|(m, s)| *m && !(*s > 0.0)) {
            return Err(CoinError::Domain("observation noise must be positive on observed channels".into()));
        }
        Ok(())
    }
}

/// Observation noise per channel kind in raw motion units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObsNoise {
    pub translation: f64,
    pub orientation: f64,
    pub pose: f64,
    /// In logit units.
    pub contact: f64,
}

impl Default for ObsNoise {
    fn default() -> Self {
        Self { translation: TRANSLATION_NOISE, orientation: ORIENTATION_NOISE, pose: POSE_NOISE, contact: CONTACT_NOISE }
    }
}

impl ObsNoise {
    pub fn validate(&self) -> Result<()> {
        if [self.translation, self.orientation, self.pose, self.contact].iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(CoinError::Config("observation noise levels must be positive".into()));
        }
        Ok(())
    }

    /// Per-channel noise in latent units for a motion layout.
    pub fn sigma(&self, layout: &MotionLayout, normalizer: &Normalizer) -> DVector<f64> {
        DVector::from_fn(layout.dim(), |i, _| {
            let raw = match layout.channel_kind(i) {
                ChannelKind::Translation => self.translation,
                ChannelKind::Orientation => self.orientation,
                ChannelKind::Pose { .. } => self.pose,
                ChannelKind::Contact => self.contact,
            };
            raw / normalizer.scale[i]
        })
    }
}

/// Observation noise in latent units for a motion layout at the default levels.
pub fn default_obs_noise_sigma(layout: &MotionLayout, normalizer: &Normalizer) -> DVector<f64> {
    ObsNoise::default().sigma(layout, normalizer)
}

/// A map from a noisy latent to an estimate of the clean signal.
pub trait Denoiser {
    fn dim(&self) -> usize;

    fn schedule(&self) -> &DiffusionSchedule;

    /// Estimate of the clean signal at signal level `alpha_bar < 1`.
    fn denoise_at(&self, x: &DVector<f64>, alpha_bar: f64) -> Result<DVector<f64>>;

    fn denoise(&self, x: &DVector<f64>, t: f64) -> Result<DenoiserOutput> {
        if x.len() != self.dim() {
            return Err(CoinError::Shape { expected: self.dim(), got: x.len() });
        }
        let ab = self.schedule().alpha_bar(t)?;
        if t == 0.0 || ab >= 1.0 {
            return Ok(DenoiserOutput { h0_hat: x.clone(), eps_hat: DVector::zeros(x.len()) });
        }
        let h0_hat = self.denoise_at(x, ab)?;
        let eps_hat = (x - &h0_hat * ab.sqrt()) / (1.0 - ab).sqrt();
        Ok(DenoiserOutput { h0_hat, eps_hat })
    }
}

/// A denoiser that can additionally be steered by partial observations.
pub trait ControlledDenoiser: Denoiser {
    fn controlled(&self, ctrl: &ControlSignal) -> Result<Box<dyn Denoiser + '_>>;

    fn denoise_controlled(&self, x: &DVector<f64>, t: f64, ctrl: &ControlSignal) -> Result<DenoiserOutput> {
        self.controlled(ctrl)?.denoise(x, t)
    }
}

impl ControlledDenoiser for GmmPrior {
    fn controlled(&self, ctrl: &ControlSignal) -> Result<Box<dyn Denoiser + '_>> {
        ctrl.validate()?;
        Ok(Box::new(self.condition(ctrl)?))
    }
}

/// `√ᾱ_t H + √(1−ᾱ_t) ε`.
pub fn forward_sample(schedule: &DiffusionSchedule, h: &DVector<f64>, t: f64, eps: &DVector<f64>) -> Result<DVector<f64>> {
    if eps.len() != h.len() {
        return Err(CoinError::Shape { expected: h.len(), got: eps.len() });
    }
    let (a, b) = schedule.coefficients(t)?;
    Ok(h * a + eps * b)
}

/// Deterministic DDIM update from `t` to `t_next`.
pub fn ddim_step(schedule: &DiffusionSchedule, out: &DenoiserOutput, t: f64, t_next: f64) -> Result<DVector<f64>> {
    if !(t_next < t) || t_next < 0.0 {
        return Err(CoinError::Ordering { t, t_next });
    }
    let (a, b) = schedule.coefficients(t_next)?;
    Ok(&out.h0_hat * a + &out.eps_hat * b)
}

/// Uniform DDIM chain from `t_start` down to zero in `steps` steps.
pub fn ddim_sample(denoiser: &dyn Denoiser, x_start: &DVector<f64>, t_start: f64, steps: usize) -> Result<DVector<f64>> {
    if steps == 0 {
        return Err(CoinError::Config("DDIM chain needs at least one step".into()));
    }
    let dt = t_start / steps as f64;
    let mut x = x_start.clone();
    for n in 0..steps {
        let t = t_start - n as f64 * dt;
        let t_next = if n + 1 == steps { 0.0 } else { t - dt };
        let out = denoiser.denoise(&x, t)?;
        x = ddim_step(denoiser.schedule(), &out, t, t_next)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(CoinError::Numeric { step: n, msg: "non-finite DDIM latent".into() });
        }
    }
    Ok(x)
}

/// Ancestral (DDPM-style) chain from pure noise at `t = 1` to zero.
pub fn ddpm_sample<R: Rng + ?Sized>(denoiser: &dyn Denoiser, steps: usize, rng: &mut R) -> Result<DVector<f64>> {
    if steps == 0 {
        return Err(CoinError::Config("DDPM chain needs at least one step".into()));
    }
    let dim = denoiser.dim();
    let schedule = denoiser.schedule();
    let mut x = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let dt = 1.0 / steps as f64;
    for n in 0..steps {
        let t = 1.0 - n as f64 * dt;
        let t_next = if n + 1 == steps { 0.0 } else { t - dt };
        let out = denoiser.denoise(&x, t)?;
        let ab = schedule.alpha_bar(t)?;
        let ab_next = schedule.alpha_bar(t_next)?;
        // Gaussian posterior q(x_next | x, h0) of the forward process
        let alpha = ab / ab_next;
        let mean = &out.h0_hat * (ab_next.sqrt() * (1.0 - alpha) / (1.0 - ab)) + &x * (alpha.sqrt() * (1.0 - ab_next) / (1.0 - ab));
        let var = (1.0 - ab_next) / (1.0 - ab) * (1.0 - alpha);
        x = if t_next == 0.0 {
            out.h0_hat
        } else {
            let noise = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
            mean + noise * var.max(0.0).sqrt()
        };
        if x.iter().any(|v| !v.is_finite()) {
            return Err(CoinError::Numeric { step: n, msg: "non-finite DDPM latent".into() });
        }
    }
    Ok(x)
}
