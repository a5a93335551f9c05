//! Splitting long sequences into overlapping windows and cross-fading them back.

use serde::{Deserialize, Serialize};

use crate::error::{CoinError, Result};
use crate::geometry::{exp_so3, slerp_rotvec, CameraPose, CameraTrajectory};
use crate::motion::{nearest_equivalent_rotvec, MotionLayout, MotionWindow};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowPlan {
    pub length: usize,
    pub overlap: usize,
    /// Confidence at or above which a channel counts as observed.
    pub mask_threshold: f64,
}

impl Default for WindowPlan {
    fn default() -> Self {
        Self { length: 128, overlap: 16, mask_threshold: 0.3 }
    }
}

impl WindowPlan {
    pub fn validate(&self) -> Result<()> {
        if self.length < 3 || self.overlap >= self.length {
            return Err(CoinError::Config(format!("window length {} with overlap {}", self.length, self.overlap)));
        }
        if !(self.mask_threshold > 0.0 && self.mask_threshold < 1.0) {
            return Err(CoinError::Config("mask threshold must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Half-open frame ranges covering `frames`. The last window is aligned to
    /// the end of the sequence, so its overlap with the previous one may exceed
    /// the nominal overlap.
    pub fn ranges(&self, frames: usize) -> Result<Vec<(usize, usize)>> {
        self.validate()?;
        if frames == 0 {
            return Err(CoinError::Domain("empty sequence".into()));
        }
        if frames <= self.length {
            return Ok(vec![(0, frames)]);
        }
        let stride = self.length - self.overlap;
        let mut out = Vec::new();
        let mut start = 0;
        while start + self.length < frames {
            out.push((start, start + self.length));
            start += stride;
        }
        out.push((frames - self.length, frames));
        Ok(out)
    }
}

/// Weight of the later window at frame `f` of an overlap `[lo, hi)`.
fn fade(f: usize, lo: usize, hi: usize) -> f64 {
    (f - lo + 1) as f64 / (hi - lo + 1) as f64
}

/// Merges per-window motions; overlaps are cross-faded linearly, orientations spherically.
pub fn stitch_motion(windows: &[MotionWindow], ranges: &[(usize, usize)]) -> Result<MotionWindow> {
    let (first, last) = match (windows.first(), ranges.last()) {
        (Some(w), Some(r)) if windows.len() == ranges.len() => (w, r),
        _ => return Err(CoinError::Shape { expected: ranges.len(), got: windows.len() }),
    };
    let frames = last.1;
    let layout = MotionLayout::new(frames, first.layout.j_local);
    let fd = layout.frame_dim();
    let mut out = MotionWindow::zeros(layout);
    for (k, (w, &(s, e))) in windows.iter().zip(ranges).enumerate() {
        if w.frames() != e - s {
            return Err(CoinError::Shape { expected: e - s, got: w.frames() });
        }
        let prev_end = if k > 0 { ranges[k - 1].1 } else { s };
        for f in s..e {
            let local = f - s;
            let src = w.data.rows(local * fd, fd);
            if f < prev_end {
                let a = fade(f, s, prev_end);
                let phi_prev = out.orientation(f);
                let mut phi_new = nearest_equivalent_rotvec(&w.orientation(local), &phi_prev);
                phi_new = nearest_equivalent_rotvec(&slerp_rotvec(&phi_prev, &phi_new, a), &phi_prev);
                let mut row = out.data.rows_mut(f * fd, fd);
                row *= 1.0 - a;
                row += src * a;
                out.set_orientation(f, &phi_new);
            } else {
                out.data.rows_mut(f * fd, fd).copy_from(&src);
            }
        }
    }
    Ok(out)
}

/// Merges per-window camera trajectories: centers cross-faded linearly, rotations spherically.
pub fn stitch_cameras(windows: &[CameraTrajectory], ranges: &[(usize, usize)]) -> Result<CameraTrajectory> {
    let (first, last) = match (windows.first(), ranges.last()) {
        (Some(w), Some(r)) if windows.len() == ranges.len() => (w, r),
        _ => return Err(CoinError::Shape { expected: ranges.len(), got: windows.len() }),
    };
    let mut frames: Vec<Option<CameraPose>> = vec![None; last.1];
    for (k, (w, &(s, e))) in windows.iter().zip(ranges).enumerate() {
        if w.len() != e - s {
            return Err(CoinError::Shape { expected: e - s, got: w.len() });
        }
        let prev_end = if k > 0 { ranges[k - 1].1 } else { s };
        for f in s..e {
            let pose = w.frames[f - s];
            frames[f] = Some(match frames[f] {
                Some(prev) if f < prev_end => {
                    let a = fade(f, s, prev_end);
                    let c = prev.center() * (1.0 - a) + pose.center() * a;
                    let ra = crate::geometry::log_so3(&prev.rotation);
                    let rb = crate::geometry::log_so3(&pose.rotation);
                    let r = exp_so3(&slerp_rotvec(&ra, &rb, a));
                    CameraPose::new(r, -(r * c))
                }
                _ => pose,
            });
        }
    }
    let frames = frames.into_iter().map(|p| p.ok_or_else(|| CoinError::Domain("window ranges leave a gap".into()))).collect::<Result<Vec<_>>>()?;
    Ok(CameraTrajectory { frames, intrinsics: first.intrinsics })
}
