//! Starting point of a window: SLAM cameras with neutral corrections and a
//! motion drawn from the prior conditioned on the lifted observations.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::motion::CanonicalFrame;
use crate::prior::ddpm_sample;
use crate::rig::CameraRig;

use super::problem::{OptVariables, WindowProblem};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InitMethod {
    /// Direct draw from the conditioned mixture.
    #[default]
    ExactDraw,
    /// Ancestral sampling through the conditioned denoiser.
    DdpmChain { steps: usize },
}

/// `s = 1`, `h0 = 0`, `r0 = 0`, `β = 0`, zero per-frame deltas, and `H`
/// sampled from the prior conditioned on the observations lifted with that camera.
pub fn initialize(problem: &WindowProblem<'_>, method: InitMethod, seed: u64) -> Result<OptVariables> {
    let rig = CameraRig::new(problem.obs.cam_est.clone());
    let beta = [0.0, 0.0];
    let lifted = problem.observed_motion(&rig, &beta);
    let frame = CanonicalFrame::of(&lifted);
    let control = problem.to_latent(&frame, &lifted);
    let conditioned = problem.conditioned(&control)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = match method {
        InitMethod::ExactDraw => conditioned.sample(&mut rng),
        InitMethod::DdpmChain { steps } => ddpm_sample(&conditioned, steps, &mut rng)?,
    };
    let motion = problem.from_latent(&frame, &x, &lifted)?;
    Ok(OptVariables { motion, rig, beta })
}
