//! Staged Adam optimization of the joint objective over windows of a sequence.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoinError, Result};
use crate::geometry::CameraTrajectory;
use crate::motion::{BodyModel, MotionWindow};
use crate::objectives::{Grads, LossBreakdown, LossWeights};
use crate::prior::{GmmPrior, ObsNoise};
use crate::sds::SdsConfig;
use crate::world::ObservationSet;

use super::adam::{Adam, AdamParams};
use super::init::{initialize, InitMethod};
use super::problem::{Ablation, CameraAnchored, OptVariables, PriorUsage, WindowProblem};
use super::window::{stitch_cameras, stitch_motion, WindowPlan};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Unlock {
    pub motion: bool,
    /// Scale, first-frame height and orientation.
    pub first_frame: bool,
    pub beta: bool,
    /// Per-frame camera corrections.
    pub deltas: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub steps: usize,
    pub lr: f64,
    pub unlock: Unlock,
}

pub fn default_stages() -> Vec<StageConfig> {
    let first = Unlock { first_frame: true, beta: true, ..Unlock::default() };
    let second = Unlock { motion: true, ..first };
    let third = Unlock { motion: true, deltas: true, ..Unlock::default() };
    vec![StageConfig { steps: 500, lr: 0.01, unlock: first }, StageConfig { steps: 500, lr: 0.01, unlock: second }, StageConfig { steps: 500, lr: 0.001, unlock: third }]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub stages: Vec<StageConfig>,
    pub weights: LossWeights,
    pub sds: SdsConfig,
    pub plan: WindowPlan,
    pub obs_noise: ObsNoise,
    pub adam: AdamParams,
    pub usage: PriorUsage,
    pub ablation: Ablation,
    pub init: InitMethod,
    pub seed: u64,
    /// Optimize windows on separate threads.
    pub parallel: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            stages: default_stages(),
            weights: LossWeights::default(),
            sds: SdsConfig::default(),
            plan: WindowPlan::default(),
            obs_noise: ObsNoise::default(),
            adam: AdamParams::default(),
            usage: PriorUsage::Coin,
            ablation: Ablation::default(),
            init: InitMethod::default(),
            seed: 0,
            parallel: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.plan.validate()?;
        self.sds.validate()?;
        let any_ablation = self.ablation != Ablation::default();
        if any_ablation && self.usage != PriorUsage::Coin {
            return Err(CoinError::Config("ablation flags only apply to the controlled prior".into()));
        }
        for s in &self.stages {
            if !(s.lr > 0.0 && s.lr.is_finite()) {
                return Err(CoinError::Config(format!("learning rate {}", s.lr)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub window: usize,
    pub stage: usize,
    pub step: usize,
    pub t: f64,
    pub losses: LossBreakdown,
}

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], mut out: W) -> Result<()> {
    writeln!(out, "window,stage,step,t,l_2d,l_3d,l_beta,l_smooth,l_contact,l_hsr,l_coin_sds,w_hsr,w_coin_sds,total")?;
    for r in rows {
        let l = &r.losses;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.window, r.stage, r.step, r.t, l.l_2d, l.l_3d, l.l_beta, l.l_smooth, l.l_contact, l.l_hsr, l.l_coin_sds, l.weights.l_hsr, l.weights.l_coin_sds, l.total
        )?;
    }
    Ok(())
}

/// Positions of the variable groups inside the flat Adam vector.
struct FlatLayout {
    motion: usize,
    frames: usize,
}

impl FlatLayout {
    fn new(vars: &OptVariables) -> Self {
        Self { motion: vars.motion.data.len(), frames: vars.rig.len() }
    }

    fn len(&self) -> usize {
        self.motion + 7 + 6 * self.frames
    }

    fn unlocked(&self, u: &Unlock) -> Vec<bool> {
        let mut out = vec![u.motion; self.motion];
        out.extend([u.beta; 2]);
        out.extend([u.first_frame; 5]);
        out.extend(std::iter::repeat_n(u.deltas, 6 * self.frames));
        out
    }

    fn pack(&self, vars: &OptVariables) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.len());
        x.extend(vars.motion.data.iter());
        x.extend(vars.beta);
        x.push(vars.rig.log_scale);
        x.push(vars.rig.height);
        x.extend(vars.rig.r0.iter());
        for d in &vars.rig.deltas {
            x.extend(d.rotation.iter());
            x.extend(d.translation.iter());
        }
        x
    }

    fn unpack(&self, x: &[f64], vars: &mut OptVariables) {
        vars.motion.data.copy_from_slice(&x[..self.motion]);
        let mut k = self.motion;
        vars.beta = [x[k], x[k + 1]];
        k += 2;
        vars.rig.log_scale = x[k];
        vars.rig.height = x[k + 1];
        k += 2;
        vars.rig.r0.copy_from_slice(&x[k..k + 3]);
        k += 3;
        for d in &mut vars.rig.deltas {
            d.rotation.copy_from_slice(&x[k..k + 3]);
            d.translation.copy_from_slice(&x[k + 3..k + 6]);
            k += 6;
        }
    }

    fn pack_grad(&self, g: &Grads) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.len());
        x.extend(g.h.iter());
        x.extend(g.beta);
        x.push(g.cam.log_scale);
        x.push(g.cam.height);
        x.extend(g.cam.r0.iter());
        for d in &g.cam.deltas {
            x.extend(d[0].iter());
            x.extend(d[1].iter());
        }
        x
    }
}

/// Runs one stage of Adam on `vars`. Whenever the first-frame camera moves,
/// the motion is carried along in the camera frame: anchored once when the
/// motion is locked, re-anchored after every step when it is free.
pub fn run_stage(
    problem: &WindowProblem<'_>,
    vars: &mut OptVariables,
    stage: &StageConfig,
    adam_params: AdamParams,
    rng: &mut ChaCha8Rng,
    mut trace: impl FnMut(usize, f64, &LossBreakdown),
) -> Result<()> {
    let layout = FlatLayout::new(vars);
    let unlocked = layout.unlocked(&stage.unlock);
    let fixed = (!stage.unlock.motion && stage.unlock.first_frame).then(|| CameraAnchored::new(&vars.motion, &vars.rig));
    let carry = stage.unlock.motion && stage.unlock.first_frame;
    let mut adam = Adam::new(layout.len(), adam_params);
    for step in 0..stage.steps {
        if let Some(a) = &fixed {
            vars.motion = a.motion(&vars.rig);
        }
        let progress = step as f64 / stage.steps.max(1) as f64;
        let targets = problem.targets(vars, rng, progress).map_err(|e| with_step(e, step))?;
        let (losses, mut grads) = problem.evaluate(vars, &targets).map_err(|e| with_step(e, step))?;
        trace(step, targets.t, &losses);
        let anchor = if carry { Some(CameraAnchored::new(&vars.motion, &vars.rig)) } else { fixed.clone() };
        if let Some(a) = &anchor {
            let gh = grads.h.clone();
            a.chain(&vars.rig, &vars.motion, &gh, &mut grads.cam);
        }
        let g = layout.pack_grad(&grads);
        let mut x = layout.pack(vars);
        let previous = carry.then(|| vars.rig.clone());
        adam.step(&mut x, &g, stage.lr, &unlocked);
        layout.unpack(&x, vars);
        if let Some(old) = previous {
            vars.motion = CameraAnchored::new(&vars.motion, &old).motion(&vars.rig);
        }
    }
    if let Some(a) = &fixed {
        vars.motion = a.motion(&vars.rig);
    }
    Ok(())
}

fn with_step(e: CoinError, step: usize) -> CoinError {
    match e {
        CoinError::Numeric { msg, .. } => CoinError::Numeric { step, msg },
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowResult {
    pub range: (usize, usize),
    pub initial: OptVariables,
    pub vars: OptVariables,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub windows: Vec<WindowResult>,
    pub motion: MotionWindow,
    pub beta: [f64; 2],
    pub camera: CameraTrajectory,
    /// Frame-weighted mean of the window scales.
    pub scale: f64,
    pub trace: Vec<TraceRow>,
}

fn window_seed(seed: u64, window: usize) -> u64 {
    seed ^ (window as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Initializes and optimizes one window.
pub fn optimize_window(obs: &ObservationSet, body: &BodyModel, prior: &GmmPrior, cfg: &PipelineConfig, index: usize) -> Result<(WindowResult, Vec<TraceRow>)> {
    let problem = WindowProblem::new(obs.clone(), body, prior, cfg.plan.mask_threshold, &cfg.obs_noise, cfg.sds.clone(), cfg.usage, cfg.ablation, cfg.weights.clone())?;
    let seed = window_seed(cfg.seed, index);
    let initial = initialize(&problem, cfg.init, seed)?;
    let mut vars = initial.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut rows = Vec::new();
    for (k, stage) in cfg.stages.iter().enumerate() {
        let result = run_stage(&problem, &mut vars, stage, cfg.adam, &mut rng, |step, t, losses| {
            rows.push(TraceRow { window: index, stage: k + 1, step, t, losses: losses.clone() });
        });
        if let Err(e) = result {
            log::error!("window {index} stage {} aborted after {} trace rows: {e}", k + 1, rows.len());
            if let Some(last) = rows.last() {
                log::error!("last losses: {:?}", last.losses);
            }
            return Err(e);
        }
    }
    Ok((WindowResult { range: (0, obs.frames()), initial, vars }, rows))
}

/// Splits the sequence, optimizes every window and stitches the results.
pub fn run_pipeline(obs: &ObservationSet, body: &BodyModel, prior: &GmmPrior, cfg: &PipelineConfig) -> Result<RunResult> {
    run_windowed(obs, cfg, |w, k| optimize_window(w, body, prior, cfg, k))
}

/// Splits the sequence per `cfg.plan`, solves each window with `solve` and stitches.
pub fn run_windowed<F>(obs: &ObservationSet, cfg: &PipelineConfig, solve: F) -> Result<RunResult>
where
    F: Fn(&ObservationSet, usize) -> Result<(WindowResult, Vec<TraceRow>)> + Sync,
{
    cfg.validate()?;
    obs.validate()?;
    let ranges = cfg.plan.ranges(obs.frames())?;
    let solve = |k: usize, &(s, e): &(usize, usize)| -> Result<(WindowResult, Vec<TraceRow>)> {
        let (mut w, rows) = solve(&obs.slice(s, e), k)?;
        w.range = (s, e);
        Ok((w, rows))
    };
    let solved: Vec<Result<(WindowResult, Vec<TraceRow>)>> = if cfg.parallel && ranges.len() > 1 {
        std::thread::scope(|scope| {
            let handles: Vec<_> = ranges.iter().enumerate().map(|(k, r)| scope.spawn(move || solve(k, r))).collect();
            handles.into_iter().map(|h| h.join().unwrap_or_else(|_| Err(CoinError::Numeric { step: 0, msg: "window thread panicked".into() }))).collect()
        })
    } else {
        ranges.iter().enumerate().map(|(k, r)| solve(k, r)).collect()
    };
    let mut windows = Vec::with_capacity(ranges.len());
    let mut trace = Vec::new();
    for s in solved {
        let (w, rows) = s?;
        windows.push(w);
        trace.extend(rows);
    }
    let motion = stitch_motion(&windows.iter().map(|w| w.vars.motion.clone()).collect::<Vec<_>>(), &ranges)?;
    let camera = stitch_cameras(&windows.iter().map(|w| w.vars.rig.trajectory()).collect::<Vec<_>>(), &ranges)?;
    let total: f64 = ranges.iter().map(|(s, e)| (e - s) as f64).sum();
    let weighted = |f: &dyn Fn(&WindowResult) -> f64| windows.iter().map(|w| f(w) * (w.range.1 - w.range.0) as f64).sum::<f64>() / total;
    let scale = weighted(&|w| w.vars.rig.scale());
    let beta = [weighted(&|w| w.vars.beta[0]), weighted(&|w| w.vars.beta[1])];
    Ok(RunResult { windows, motion, beta, camera, scale, trace })
}
