//! Multi-step controlled denoising with soft inpainting, and the SDS-family losses.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoinError, Result};
use crate::prior::{ddim_step, forward_sample, ControlSignal, Denoiser, DenoiserOutput, GmmPrior};
use crate::schedule::DiffusionSchedule;

/// `w(t) = max(0, (t − 0.5) / 0.5)`.
pub fn mask_weight(t: f64) -> f64 {
    ((t - 0.5) / 0.5).max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask {
    pub mask: Vec<bool>,
    pub confidence: DVector<f64>,
}

impl SoftMask {
    pub fn new(mask: Vec<bool>, confidence: DVector<f64>) -> Result<Self> {
        if mask.len() != confidence.len() {
            return Err(CoinError::Shape { expected: mask.len(), got: confidence.len() });
        }
        if confidence.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(CoinError::Domain("confidence outside [0, 1]".into()));
        }
        Ok(Self { mask, confidence })
    }

    pub fn empty(dim: usize) -> Self {
        Self { mask: vec![false; dim], confidence: DVector::zeros(dim) }
    }

    pub fn full(dim: usize) -> Self {
        Self { mask: vec![true; dim], confidence: DVector::from_element(dim, 1.0) }
    }

    pub fn dim(&self) -> usize {
        self.mask.len()
    }

    /// `M̃ = w(t) S ⊙ M`.
    pub fn effective(&self, t: f64) -> DVector<f64> {
        let w = mask_weight(t);
        DVector::from_fn(self.dim(), |i, _| if self.mask[i] { w * self.confidence[i] } else { 0.0 })
    }

    /// The schedule-free binary mask.
    pub fn hard(&self) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| if self.mask[i] { 1.0 } else { 0.0 })
    }
}

/// Blend rule of the inpainting step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Inpainting {
    /// `M̃ = w(t) S ⊙ M`.
    Soft,
    /// `M̃ = M` at every step.
    Hard,
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SdsConfig {
    pub n_ddim_steps: usize,
    /// Constant value of the weighting function ω(t).
    pub omega: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub rng_seed: u64,
    pub inpainting: Inpainting,
    /// Linearly lower `t_max` towards `t_min` over an optimization run.
    pub anneal: bool,
}

impl Default for SdsConfig {
    fn default() -> Self {
        Self { n_ddim_steps: 10, omega: 1.0, t_min: 0.02, t_max: 0.98, rng_seed: 0, inpainting: Inpainting::Soft, anneal: false }
    }
}

impl SdsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_ddim_steps == 0 {
            return Err(CoinError::Config("n_ddim_steps must be at least 1".into()));
        }
        if !(0.0 < self.t_min && self.t_min <= self.t_max && self.t_max <= 1.0) {
            return Err(CoinError::Config(format!("invalid t range [{}, {}]", self.t_min, self.t_max)));
        }
        Ok(())
    }

    /// Draws `t` for one outer step; `progress` in `[0, 1]` only matters when annealing.
    pub fn sample_t<R: Rng + ?Sized>(&self, rng: &mut R, progress: f64) -> f64 {
        let hi = if self.anneal { self.t_max - (self.t_max - self.t_min) * progress.clamp(0.0, 1.0) } else { self.t_max };
        let u: f64 = rng.random();
        self.t_min + (hi - self.t_min) * u
    }

    fn blend_weights(&self, sm: &SoftMask, t: f64) -> Option<DVector<f64>> {
        match self.inpainting {
            Inpainting::Soft => Some(sm.effective(t)),
            Inpainting::Hard => Some(sm.hard()),
            Inpainting::Off => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoinDenoised {
    pub h0: DVector<f64>,
    pub t_used: f64,
}

/// Multi-step DDIM from `H_t = forward_sample(H, t, eps)` where each step's
/// clean estimate blends the known branch `H` with the `unknown` denoiser's output.
pub fn coin_denoise(unknown: &dyn Denoiser, h: &DVector<f64>, sm: &SoftMask, cfg: &SdsConfig, t: f64, eps: &DVector<f64>) -> Result<CoinDenoised> {
    cfg.validate()?;
    if !(cfg.t_min..=cfg.t_max).contains(&t) {
        return Err(CoinError::Domain(format!("t = {t} outside the configured range")));
    }
    if h.len() != unknown.dim() || sm.dim() != h.len() {
        return Err(CoinError::Shape { expected: unknown.dim(), got: h.len() });
    }
    let schedule = unknown.schedule();
    let mut x = forward_sample(schedule, h, t, eps)?;
    let steps = cfg.n_ddim_steps;
    let dt = t / steps as f64;
    for k in 0..steps {
        let tb = t - k as f64 * dt;
        let t_next = if k + 1 == steps { 0.0 } else { t - (k + 1) as f64 * dt };
        let predicted = unknown.denoise(&x, tb)?.h0_hat;
        let h0 = match cfg.blend_weights(sm, tb) {
            Some(m) => DVector::from_fn(h.len(), |i, _| m[i] * h[i] + (1.0 - m[i]) * predicted[i]),
            None => predicted,
        };
        let (a, b) = schedule.coefficients(tb)?;
        let eps_bar = if b > 0.0 { (&x - &h0 * a) / b } else { DVector::zeros(h.len()) };
        x = if t_next == 0.0 { h0 } else { ddim_step(schedule, &DenoiserOutput { h0_hat: h0, eps_hat: eps_bar }, tb, t_next)? };
        if x.iter().any(|v| !v.is_finite()) {
            return Err(CoinError::Numeric { step: k, msg: "non-finite latent in controlled denoising".into() });
        }
    }
    Ok(CoinDenoised { h0: x, t_used: t })
}

/// [`coin_denoise`] with the control signal built from `H` itself.
pub fn coin_denoise_with_prior(prior: &GmmPrior, h: &DVector<f64>, sm: &SoftMask, sigma: &DVector<f64>, cfg: &SdsConfig, t: f64, eps: &DVector<f64>) -> Result<CoinDenoised> {
    let ctrl = ControlSignal { values: h.clone(), mask: sm.mask.clone(), obs_noise_sigma: sigma.clone() };
    ctrl.validate()?;
    let conditioned = prior.condition(&ctrl)?;
    coin_denoise(&conditioned, h, sm, cfg, t, eps)
}

/// `ω √ᾱ_t / √(1 − ᾱ_t)`.
pub fn sds_weight(schedule: &DiffusionSchedule, t: f64, omega: f64) -> Result<f64> {
    let (a, b) = schedule.coefficients(t)?;
    if b <= 0.0 {
        return Err(CoinError::Domain("SDS weight is singular at t = 0".into()));
    }
    Ok(omega * a / b)
}

/// `w ‖H − H̃0‖²` and its gradient with the target held fixed.
pub fn coin_sds_loss_grad(schedule: &DiffusionSchedule, h: &DVector<f64>, h0_tilde: &DVector<f64>, t: f64, omega: f64) -> Result<(f64, DVector<f64>)> {
    if h.len() != h0_tilde.len() {
        return Err(CoinError::Shape { expected: h.len(), got: h0_tilde.len() });
    }
    let w = sds_weight(schedule, t, omega)?;
    let diff = h - h0_tilde;
    Ok((w * diff.norm_squared(), diff * (2.0 * w)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VanillaSds {
    pub h0: DVector<f64>,
    /// Clean-signal form `w ‖H − Ĥ0‖²`.
    pub loss: f64,
    pub grad: DVector<f64>,
    /// Noise-prediction form `ω ‖ε̂ − ε‖²`.
    pub eps_loss: f64,
    /// `2 ω √ᾱ (ε̂ − ε)`, the noise-form gradient without the denoiser Jacobian.
    pub eps_grad: DVector<f64>,
}

impl VanillaSds {
    /// Cosine similarity of the two gradient forms.
    pub fn gradient_agreement(&self) -> f64 {
        let n = self.grad.norm() * self.eps_grad.norm();
        if n == 0.0 {
            return 1.0;
        }
        self.grad.dot(&self.eps_grad) / n
    }
}

/// Single-step SDS against the unconditional denoiser.
pub fn vanilla_sds_loss_grad(denoiser: &dyn Denoiser, h: &DVector<f64>, t: f64, eps: &DVector<f64>, omega: f64) -> Result<VanillaSds> {
    let schedule = denoiser.schedule();
    let x = forward_sample(schedule, h, t, eps)?;
    let out = denoiser.denoise(&x, t)?;
    let (loss, grad) = coin_sds_loss_grad(schedule, h, &out.h0_hat, t, omega)?;
    let (a, _) = schedule.coefficients(t)?;
    let de = &out.eps_hat - eps;
    let eps_loss = omega * de.norm_squared();
    let eps_grad = de * (2.0 * omega * a);
    Ok(VanillaSds { h0: out.h0_hat, loss, grad, eps_loss, eps_grad })
}

/// Control signal for the next outer step: the current iterate, or the
/// pinned initial values when dynamic control is disabled.
pub fn dynamic_control_update(state: &DVector<f64>, initial: &DVector<f64>, mask: &[bool], sigma: &DVector<f64>, dynamic: bool) -> Result<ControlSignal> {
    if state.iter().any(|v| !v.is_finite()) {
        return Err(CoinError::Numeric { step: 0, msg: "non-finite optimizer state".into() });
    }
    let values = if dynamic { state.clone() } else { initial.clone() };
    let ctrl = ControlSignal { values, mask: mask.to_vec(), obs_noise_sigma: sigma.clone() };
    ctrl.validate()?;
    Ok(ctrl)
}
