//! Alternative ways of using the motion prior: single-step SDS, optimizing the
//! DDIM input noise, and objective-guided sampling. All share the observations,
//! losses and windowing of the main pipeline.

use nalgebra::{DVector, Matrix3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CoinError, Result};
use crate::geometry::{right_jacobian, yaw_matrix};
use crate::motion::{BodyModel, CanonicalFrame, MotionWindow};
use crate::objectives::{contact_labels_from_logits, loss_2d, loss_contact, CameraGrad, Grads, LossBreakdown};
use crate::optimizer::{
    initialize, run_pipeline, run_windowed, Ablation, Adam, OptVariables, PipelineConfig, PriorUsage, RunResult, StageConfig, TraceRow, Unlock, WindowProblem, WindowResult,
};
use crate::prior::{ddim_step, Denoiser, GmmPrior, Posterior};
use crate::world::ObservationSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    VanillaSds,
    NoiseOptimization,
    GuidedSampling,
}

/// Every estimation method the tools can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Method {
    Coin,
    VanillaSds,
    NoiseOpt,
    Guided,
    InitOnly,
}

impl Method {
    pub fn baseline(self) -> Option<BaselineKind> {
        match self {
            Method::VanillaSds => Some(BaselineKind::VanillaSds),
            Method::NoiseOpt => Some(BaselineKind::NoiseOptimization),
            Method::Guided => Some(BaselineKind::GuidedSampling),
            Method::Coin | Method::InitOnly => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    /// DDIM steps of the noise-optimization decoder.
    pub decode_steps: usize,
    /// Guidance strength.
    pub guidance: f64,
    /// DDIM steps of the guided sampler.
    pub guided_steps: usize,
    pub camera_lr: f64,
    /// Step of the finite-difference fallback for the decoder gradient.
    pub fd_step: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { decode_steps: 10, guidance: 0.1, guided_steps: 500, camera_lr: 0.01, fd_step: 1e-5 }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.decode_steps == 0 || self.guided_steps == 0 {
            return Err(CoinError::Config("baseline chains need at least one step".into()));
        }
        if !(self.guidance >= 0.0 && self.guidance.is_finite()) {
            return Err(CoinError::Config(format!("guidance strength {}", self.guidance)));
        }
        if !(self.camera_lr > 0.0 && self.fd_step > 0.0) {
            return Err(CoinError::Config("camera_lr and fd_step must be positive".into()));
        }
        Ok(())
    }
}

/// Runs `method` over the windows of `obs`.
pub fn run_method(method: Method, obs: &ObservationSet, body: &BodyModel, prior: &GmmPrior, cfg: &PipelineConfig, bcfg: &BaselineConfig) -> Result<RunResult> {
    match method {
        Method::Coin => run_pipeline(obs, body, prior, cfg),
        Method::VanillaSds => run_vanilla_sds(obs, body, prior, cfg),
        Method::NoiseOpt => run_noise_optimization(obs, body, prior, cfg, bcfg),
        Method::Guided => run_guided_sampling(obs, body, prior, cfg, bcfg),
        Method::InitOnly => run_init_only(obs, body, prior, cfg),
    }
}

fn plain(cfg: &PipelineConfig, usage: PriorUsage) -> PipelineConfig {
    PipelineConfig { usage, ablation: Ablation::default(), ..cfg.clone() }
}

fn problem<'a>(obs: &ObservationSet, body: &'a BodyModel, prior: &GmmPrior, cfg: &PipelineConfig, usage: PriorUsage) -> Result<WindowProblem<'a>> {
    WindowProblem::new(obs.clone(), body, prior, cfg.plan.mask_threshold, &cfg.obs_noise, cfg.sds.clone(), usage, Ablation::default(), cfg.weights.clone())
}

fn window_seed(seed: u64, window: usize) -> u64 {
    seed ^ (window as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// The pipeline with the single-step unconditional denoiser as the target.
pub fn run_vanilla_sds(obs: &ObservationSet, body: &BodyModel, prior: &GmmPrior, cfg: &PipelineConfig) -> Result<RunResult> {
    run_pipeline(obs, body, prior, &plain(cfg, PriorUsage::VanillaSds))
}

/// Initialization only, per window.
pub fn run_init_only(obs: &ObservationSet, body: &BodyModel, prior: &GmmPrior, cfg: &PipelineConfig) -> Result<RunResult> {
    run_windowed(obs, cfg, |w, k| {
        let p = problem(w, body, prior, cfg, cfg.usage)?;
        let initial = initialize(&p, cfg.init, window_seed(cfg.seed, k))?;
        Ok((WindowResult { range: (0, w.frames()), initial: initial.clone(), vars: initial }, Vec::new()))
    })
}

/// Gradient with respect to the latent of the world-frame motion restored from it.
pub fn latent_grad(prior: &GmmPrior, frame: &CanonicalFrame, x: &DVector<f64>, h: &MotionWindow, g_world: &DVector<f64>) -> DVector<f64> {
    let raw = prior.normalizer.denormalize(x);
    let canon = MotionWindow::from_flat(h.layout, raw).expect("latent matches the motion layout");
    let rz_t = yaw_matrix(frame.yaw).transpose();
    let l = h.layout;
    let mut g = g_world.clone();
    for i in 0..h.frames() {
        let at = l.translation(i);
        let gt = rz_t * g.fixed_rows::<3>(at);
        g.fixed_rows_mut::<3>(at).copy_from(&gt);
        // exp(φ_w) = R_z exp(φ_c), so dφ_w = J_r(φ_w)⁻¹ J_r(φ_c) dφ_c
        let ao = l.orientation(i);
        let jw = right_jacobian(&h.orientation(i)).try_inverse().unwrap_or_else(Matrix3::identity);
        let j = jw * right_jacobian(&canon.orientation(i));
        let go = j.transpose() * g.fixed_rows::<3>(ao);
        g.fixed_rows_mut::<3>(ao).copy_from(&go);
    }
    g.component_mul(&DVector::from_column_slice(&prior.normalizer.scale))
}

/// One recorded DDIM step `x' = c_h E[H0|x] + c_x x`.
#[derive(Debug, Clone)]
pub struct ChainStep {
    pub posterior: Posterior,
    pub c_h: f64,
    pub c_x: f64,
}

/// Deterministic DDIM chain from `t = 1` to zero starting at `z`, keeping what
/// the backward pass needs. Matches [`crate::prior::ddim_sample`] exactly.
pub fn ddim_decode(prior: &GmmPrior, z: &DVector<f64>, steps: usize) -> Result<(DVector<f64>, Vec<ChainStep>)> {
    if steps == 0 {
        return Err(CoinError::Config("DDIM chain needs at least one step".into()));
    }
    if z.len() != prior.dim() {
        return Err(CoinError::Shape { expected: prior.dim(), got: z.len() });
    }
    let dt = 1.0 / steps as f64;
    let mut x = z.clone();
    let mut chain = Vec::with_capacity(steps);
    for n in 0..steps {
        let t = 1.0 - n as f64 * dt;
        let t_next = if n + 1 == steps { 0.0 } else { t - dt };
        let ab = prior.schedule.alpha_bar(t)?;
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        let post = prior.posterior(&x, a, b)?;
        let (an, bn) = prior.schedule.coefficients(t_next)?;
        let eps = (&x - &post.h0 * a) / b;
        x = &post.h0 * an + eps * bn;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(CoinError::Numeric { step: n, msg: "non-finite DDIM latent".into() });
        }
        chain.push(ChainStep { posterior: post, c_h: an - bn * a / b, c_x: bn / b });
    }
    Ok((x, chain))
}

/// `vᵀ ∂decode/∂z` by reverse accumulation through the recorded chain.
pub fn ddim_decode_vjp(prior: &GmmPrior, chain: &[ChainStep], v: &DVector<f64>) -> Result<DVector<f64>> {
    let mut g = v.clone();
    for step in chain.iter().rev() {
        let jt = prior.posterior_vjp(&step.posterior, &g)?;
        g = jt * step.c_h + g * step.c_x;
    }
    Ok(g)
}

/// Central-difference version of [`ddim_decode_vjp`], one decode pair per coordinate.
pub fn ddim_decode_vjp_fd(prior: &GmmPrior, z: &DVector<f64>, steps: usize, v: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(z.len());
    for k in 0..z.len() {
        let mut zp = z.clone();
        let mut zm = z.clone();
        zp[k] += h;
        zm[k] -= h;
        let (xp, _) = ddim_decode(prior, &zp, steps)?;
        let (xm, _) = ddim_decode(prior, &zm, steps)?;
        out[k] = (xp - xm).dot(v) / (2.0 * h);
    }
    Ok(out)
}

/// Approximate inverse of the decoder: the DDIM chain run from zero up to `t = 1`.
pub fn ddim_encode(prior: &GmmPrior, x0: &DVector<f64>, steps: usize) -> Result<DVector<f64>> {
    let dt = 1.0 / steps.max(1) as f64;
    let mut x = x0.clone();
    for n in 0..steps.max(1) {
        let t_next = (n + 1) as f64 * dt;
        // the denoiser is the identity at t = 0, so the first step looks ahead
        let t = if n == 0 { t_next } else { n as f64 * dt };
        let out = prior.denoise(&x, t)?;
        let (an, bn) = prior.schedule.coefficients(t_next)?;
        x = &out.h0_hat * an + &out.eps_hat * bn;
    }
    Ok(x)
}

struct NoiseLayout {
    dim: usize,
    frames: usize,
}

impl NoiseLayout {
    fn len(&self) -> usize {
        self.dim + 7 + 6 * self.frames
    }

    fn unlocked(&self, u: &Unlock) -> Vec<bool> {
        let mut m = vec![u.motion; self.dim];
        m.extend([u.first_frame; 5]);
        m.extend([u.beta; 2]);
        m.extend(vec![u.deltas; 6 * self.frames]);
        m
    }

    fn pack(&self, z: &DVector<f64>, v: &OptVariables) -> Vec<f64> {
        let mut x: Vec<f64> = z.iter().copied().collect();
        x.extend([v.rig.log_scale, v.rig.height, v.rig.r0.x, v.rig.r0.y, v.rig.r0.z, v.beta[0], v.beta[1]]);
        for d in &v.rig.deltas {
            x.extend(d.rotation.iter());
            x.extend(d.translation.iter());
        }
        x
    }

    fn unpack(&self, x: &[f64], z: &mut DVector<f64>, v: &mut OptVariables) {
        z.copy_from_slice(&x[..self.dim]);
        let c = &x[self.dim..];
        v.rig.log_scale = c[0];
        v.rig.height = c[1];
        v.rig.r0 = nalgebra::Vector3::new(c[2], c[3], c[4]);
        v.beta = [c[5], c[6]];
        for (i, d) in v.rig.deltas.iter_mut().enumerate() {
            let o = 7 + 6 * i;
            d.rotation = nalgebra::Vector3::new(c[o], c[o + 1], c[o + 2]);
            d.translation = nalgebra::Vector3::new(c[o + 3], c[o + 4], c[o + 5]);
        }
    }

    fn pack_grad(&self, gz: &DVector<f64>, g: &Grads) -> Vec<f64> {
        let mut x: Vec<f64> = gz.iter().copied().collect();
        let c = &g.cam;
        x.extend([c.log_scale, c.height, c.r0.x, c.r0.y, c.r0.z, g.beta[0], g.beta[1]]);
        for d in &c.deltas {
            x.extend(d[0].iter());
            x.extend(d[1].iter());
        }
        x
    }
}

/// Gradient of the decoded motion's latent with respect to `z`, falling back
/// to finite differences when the analytic pass is not finite.
fn decode_grad(prior: &GmmPrior, z: &DVector<f64>, chain: &[ChainStep], v: &DVector<f64>, bcfg: &BaselineConfig) -> Result<DVector<f64>> {
    let g = ddim_decode_vjp(prior, chain, v);
    match g {
        Ok(g) if g.iter().all(|x| x.is_finite()) => Ok(g),
        _ => {
            log::warn!("decoder gradient not finite, using finite differences");
            ddim_decode_vjp_fd(prior, z, bcfg.decode_steps, v, bcfg.fd_step)
        }
    }
}

/// Optimizes the DDIM input noise of each window together with the cameras.
pub fn run_noise_optimization(obs: &ObservationSet, body: &BodyModel, prior: &GmmPrior, cfg: &PipelineConfig, bcfg: &BaselineConfig) -> Result<RunResult> {
    bcfg.validate()?;
    let cfg = plain(cfg, PriorUsage::Off);
    run_windowed(obs, &cfg, |w, k| {
        let p = problem(w, body, prior, &cfg, PriorUsage::Off)?;
        let seed = window_seed(cfg.seed, k);
        let initial = initialize(&p, cfg.init, seed)?;
        let frame = CanonicalFrame::of(&initial.motion);
        let reference = initial.motion.clone();
        let mut z = ddim_encode(&p.prior, &p.to_latent(&frame, &initial.motion), bcfg.decode_steps)?;
        let mut vars = initial.clone();
        let (x, _) = ddim_decode(&p.prior, &z, bcfg.decode_steps)?;
        vars.motion = p.from_latent(&frame, &x, &reference)?;
        let initial = OptVariables { motion: vars.motion.clone(), ..initial };
        let layout = NoiseLayout { dim: z.len(), frames: w.frames() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        let mut rows = Vec::new();
        for (s, stage) in cfg.stages.iter().enumerate() {
            noise_stage(&p, &frame, &reference, &mut z, &mut vars, stage, &layout, &cfg, bcfg, &mut rng, |step, t, losses| {
                rows.push(TraceRow { window: k, stage: s + 1, step, t, losses: losses.clone() });
            })?;
        }
        Ok((WindowResult { range: (0, w.frames()), initial, vars }, rows))
    })
}

#[allow(clippy::too_many_arguments)]
fn noise_stage(
    p: &WindowProblem<'_>,
    frame: &CanonicalFrame,
    reference: &MotionWindow,
    z: &mut DVector<f64>,
    vars: &mut OptVariables,
    stage: &StageConfig,
    layout: &NoiseLayout,
    cfg: &PipelineConfig,
    bcfg: &BaselineConfig,
    rng: &mut ChaCha8Rng,
    mut trace: impl FnMut(usize, f64, &LossBreakdown),
) -> Result<()> {
    let unlocked = layout.unlocked(&stage.unlock);
    let mut adam = Adam::new(layout.len(), cfg.adam);
    for step in 0..stage.steps {
        let (x, chain) = ddim_decode(&p.prior, z, bcfg.decode_steps)?;
        vars.motion = p.from_latent(frame, &x, reference)?;
        let progress = step as f64 / stage.steps.max(1) as f64;
        let targets = p.targets(vars, rng, progress)?;
        let (losses, grads) = p.evaluate(vars, &targets)?;
        trace(step, targets.t, &losses);
        let gz = if stage.unlock.motion {
            let gx = latent_grad(&p.prior, frame, &x, &vars.motion, &grads.h);
            decode_grad(&p.prior, z, &chain, &gx, bcfg)?
        } else {
            DVector::zeros(z.len())
        };
        let g = layout.pack_grad(&gz, &grads);
        let mut flat = layout.pack(z, vars);
        adam.step(&mut flat, &g, stage.lr, &unlocked);
        layout.unpack(&flat, z, vars);
    }
    let (x, _) = ddim_decode(&p.prior, z, bcfg.decode_steps)?;
    vars.motion = p.from_latent(frame, &x, reference)?;
    Ok(())
}

/// Guidance applied to one denoised estimate: the latent gradient of
/// `λ_2D L_2D + λ_contact L_contact`, plus the 2D loss gradient on the cameras.
pub fn guidance_gradient(p: &WindowProblem<'_>, frame: &CanonicalFrame, h0_latent: &DVector<f64>, reference: &MotionWindow, vars: &OptVariables) -> Result<(DVector<f64>, Grads)> {
    let h = p.from_latent(frame, h0_latent, reference)?;
    let w = &p.weights;
    let (_, mut g) = loss_2d(&h, &vars.rig, &vars.beta, p.body, &p.obs.kp2d)?;
    g.h *= w.l_2d;
    let mut cam = CameraGrad::zeros(h.frames());
    cam.add_scaled(&g.cam, w.l_2d);
    g.cam = cam;
    let (_, gc) = loss_contact(&h, &vars.beta, p.body, &contact_labels_from_logits(&h))?;
    g.h.axpy(w.l_contact, &gc.h, 1.0);
    Ok((latent_grad(&p.prior, frame, h0_latent, &h, &g.h), g))
}

/// One guided DDIM pass from pure noise per window; the cameras' first-frame
/// parameters take an Adam step at every denoising step.
pub fn run_guided_sampling(obs: &ObservationSet, body: &BodyModel, prior: &GmmPrior, cfg: &PipelineConfig, bcfg: &BaselineConfig) -> Result<RunResult> {
    bcfg.validate()?;
    let cfg = plain(cfg, PriorUsage::Off);
    run_windowed(obs, &cfg, |w, k| {
        let p = problem(w, body, prior, &cfg, PriorUsage::Off)?;
        let seed = window_seed(cfg.seed, k);
        let initial = initialize(&p, cfg.init, seed)?;
        let frame = CanonicalFrame::of(&initial.motion);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        let z = DVector::from_fn(p.prior.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let (x, vars, rows) = guided_sample(&p, &frame, &initial, &z, bcfg, &cfg, k)?;
        let mut vars = vars;
        vars.motion = p.from_latent(&frame, &x, &initial.motion)?;
        Ok((WindowResult { range: (0, w.frames()), initial, vars }, rows))
    })
}

/// The guided DDIM chain from `z`; returns the final latent and cameras.
pub fn guided_sample(
    p: &WindowProblem<'_>,
    frame: &CanonicalFrame,
    initial: &OptVariables,
    z: &DVector<f64>,
    bcfg: &BaselineConfig,
    cfg: &PipelineConfig,
    window: usize,
) -> Result<(DVector<f64>, OptVariables, Vec<TraceRow>)> {
    let prior = &p.prior;
    let steps = bcfg.guided_steps;
    let dt = 1.0 / steps as f64;
    let mut vars = initial.clone();
    let mut x = z.clone();
    let mut adam = Adam::new(5, cfg.adam);
    let mut rows = Vec::new();
    for n in 0..steps {
        let t = 1.0 - n as f64 * dt;
        let t_next = if n + 1 == steps { 0.0 } else { t - dt };
        let mut out = prior.denoise(&x, t)?;
        if bcfg.guidance > 0.0 {
            let (g, grads) = guidance_gradient(p, frame, &out.h0_hat, &initial.motion, &vars)?;
            out.h0_hat.axpy(-bcfg.guidance, &g, 1.0);
            let c = &grads.cam;
            let mut flat = [vars.rig.log_scale, vars.rig.height, vars.rig.r0.x, vars.rig.r0.y, vars.rig.r0.z];
            adam.step(&mut flat, &[c.log_scale, c.height, c.r0.x, c.r0.y, c.r0.z], bcfg.camera_lr, &[true; 5]);
            vars.rig.log_scale = flat[0];
            vars.rig.height = flat[1];
            vars.rig.r0 = nalgebra::Vector3::new(flat[2], flat[3], flat[4]);
        }
        x = ddim_step(&prior.schedule, &out, t, t_next)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(CoinError::Numeric { step: n, msg: "non-finite guided latent".into() });
        }
        if n + 1 == steps || (n + 1) % 50 == 0 {
            let h = p.from_latent(frame, &x, &initial.motion)?;
            let current = OptVariables { motion: h, ..vars.clone() };
            let targets = p.targets(&current, &mut ChaCha8Rng::seed_from_u64(n as u64), 1.0)?;
            let (losses, _) = p.evaluate(&current, &targets)?;
            rows.push(TraceRow { window, stage: 1, step: n, t: t_next, losses });
        }
    }
    Ok((x, vars, rows))
}
