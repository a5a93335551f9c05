//! Synthetic observer trajectories around a moving subject.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoinError, Result};
use crate::geometry::{CameraPose, CameraTrajectory, CubicSpline, Intrinsics};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraStyle {
    Orbit,
    Follow,
    Handheld,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraParams {
    pub style: CameraStyle,
    /// Camera-to-subject distance.
    pub distance: f64,
    /// Camera elevation above the subject's root, as an angle in radians.
    pub elevation: f64,
    /// Viewing direction relative to the subject heading; drawn from the seed when absent.
    pub azimuth: Option<f64>,
    /// Total angle swept by an orbit.
    pub orbit_sweep: f64,
    /// Frames between follow-camera spline knots.
    pub knot_spacing: usize,
    /// Amplitude of handheld position jitter.
    pub jitter: f64,
    pub intrinsics: Intrinsics,
}

impl Default for CameraParams {
    fn default() -> Self {
        Self { style: CameraStyle::Follow, distance: 4.0, elevation: 0.15, azimuth: None, orbit_sweep: 1.0, knot_spacing: 16, jitter: 0.03, intrinsics: Intrinsics::default() }
    }
}

fn direction(azimuth: f64, elevation: f64) -> Vector3<f64> {
    Vector3::new(azimuth.cos() * elevation.cos(), azimuth.sin() * elevation.cos(), elevation.sin())
}

/// Sum of a few low-frequency sinusoids per axis.
struct Jitter {
    terms: Vec<[(f64, f64, f64); 3]>,
}

impl Jitter {
    fn new(rng: &mut ChaCha8Rng, amplitude: f64) -> Self {
        let terms = (0..3)
            .map(|_| {
                let mut axis = [(0.0, 0.0, 0.0); 3];
                for a in &mut axis {
                    // between about 0.5 and 2 cycles per second at 30 fps
                    let freq = rng.random_range(0.5..2.0) / 30.0;
                    *a = (amplitude / 3.0, 2.0 * PI * freq, rng.random_range(0.0..2.0 * PI));
                }
                axis
            })
            .collect();
        Self { terms }
    }

    fn at(&self, i: usize) -> Vector3<f64> {
        let mut v = Vector3::zeros();
        for term in &self.terms {
            for (k, (amp, w, ph)) in term.iter().enumerate() {
                v[k] += amp * (w * i as f64 + ph).sin();
            }
        }
        v
    }
}

/// Generates a camera trajectory that keeps `targets` (the subject's root per frame) in view.
pub fn generate_camera(params: &CameraParams, targets: &[Vector3<f64>], headings: &[f64], seed: u64) -> Result<CameraTrajectory> {
    let frames = targets.len();
    if frames < 2 || headings.len() != frames {
        return Err(CoinError::Domain("camera needs at least two frames of subject positions".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let azimuth = params.azimuth.unwrap_or_else(|| rng.random_range(0.6..2.2) * if rng.random::<bool>() { 1.0 } else { -1.0 });
    let poses: Vec<CameraPose> = match params.style {
        CameraStyle::Orbit => (0..frames)
            .map(|i| {
                let a = headings[0] + azimuth + params.orbit_sweep * i as f64 / (frames - 1) as f64;
                let center = targets[i] + direction(a, params.elevation) * params.distance;
                CameraPose::look_at(&center, &targets[i])
            })
            .collect(),
        CameraStyle::Follow | CameraStyle::Handheld => {
            let spacing = params.knot_spacing.max(1);
            let mut knot_frames: Vec<usize> = (0..frames).step_by(spacing).collect();
            if *knot_frames.last().unwrap() != frames - 1 {
                // extend by one uniform interval so the spline covers the last frame
                knot_frames.push(knot_frames.last().unwrap() + spacing);
            }
            let knot = |f: usize| {
                let i = f.min(frames - 1);
                let extra = f.saturating_sub(frames - 1) as f64;
                let slope = if frames > 1 { targets[frames - 1] - targets[frames - 2] } else { Vector3::zeros() };
                let target = targets[i] + slope * extra;
                let center = target + direction(headings[i] + azimuth, params.elevation) * params.distance;
                (center, target)
            };
            let centers = CubicSpline::new(knot_frames.iter().map(|&f| knot(f).0).collect(), spacing as f64)?;
            let looks = CubicSpline::new(knot_frames.iter().map(|&f| knot(f).1).collect(), spacing as f64)?;
            let jitter = (params.style == CameraStyle::Handheld).then(|| Jitter::new(&mut rng, params.jitter));
            (0..frames)
                .map(|i| {
                    let mut c = centers.eval(i as f64);
                    let mut look = looks.eval(i as f64);
                    if let Some(j) = &jitter {
                        c += j.at(i);
                        look += j.at(i + 1000) * 0.5;
                    }
                    CameraPose::look_at(&c, &look)
                })
                .collect()
        }
    };
    Ok(CameraTrajectory { frames: poses, intrinsics: params.intrinsics })
}
