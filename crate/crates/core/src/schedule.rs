//! Noise schedule for the forward diffusion process.
//!
//! The signal-retention coefficient `alpha_bar(t)` is tabulated on a uniform
//! grid over `[0, 1]` and linearly interpolated between grid points.

use serde::{Deserialize, Serialize};

use crate::error::{CoinError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    /// Small offset of the cosine schedule that keeps the first steps from
    /// being too noise-free.
    pub cosine_offset: f64,
    /// Value of `alpha_bar` at `t = 1`.
    pub alpha_bar_min: f64,
    pub table_resolution: usize,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self { cosine_offset: 0.008, alpha_bar_min: 1e-4, table_resolution: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    params: ScheduleParams,
    table: Vec<f64>,
}

impl Default for DiffusionSchedule {
    fn default() -> Self {
        Self::new(ScheduleParams::default()).expect("default schedule is valid")
    }
}

impl DiffusionSchedule {
    pub fn new(params: ScheduleParams) -> Result<Self> {
        if params.table_resolution < 2 {
            return Err(CoinError::Config("schedule table needs at least 2 points".into()));
        }
        if !(params.alpha_bar_min > 0.0 && params.alpha_bar_min < 1.0) {
            return Err(CoinError::Config("alpha_bar_min must lie in (0, 1)".into()));
        }
        if !(params.cosine_offset >= 0.0) {
            return Err(CoinError::Config("cosine offset must be non-negative".into()));
        }
        let n = params.table_resolution;
        let s = params.cosine_offset;
        let f = |t: f64| {
            let c = ((t + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2).cos();
            c * c
        };
        let f0 = f(0.0);
        let lo = params.alpha_bar_min;
        let table = (0..n)
            .map(|k| {
                let t = k as f64 / (n - 1) as f64;
                // f(1) is zero up to rounding; clamp before blending
                let g = (f(t) / f0).clamp(0.0, 1.0);
                lo + (1.0 - lo) * g
            })
            .collect::<Vec<_>>();
        let mut table = table;
        table[0] = 1.0;
        table[n - 1] = lo;
        Ok(Self { params, table })
    }

    pub fn params(&self) -> ScheduleParams {
        self.params
    }

    /// Signal-retention coefficient at time `t` in `[0, 1]`.
    pub fn alpha_bar(&self, t: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&t) {
            return Err(CoinError::Domain(format!("diffusion time {t} outside [0, 1]")));
        }
        let n = self.table.len();
        let pos = t * (n - 1) as f64;
        let k = (pos.floor() as usize).min(n - 2);
        let frac = pos - k as f64;
        Ok(self.table[k] + frac * (self.table[k + 1] - self.table[k]))
    }

    /// `(sqrt(alpha_bar), sqrt(1 - alpha_bar))` at `t`.
    pub fn coefficients(&self, t: f64) -> Result<(f64, f64)> {
        let ab = self.alpha_bar(t)?;
        Ok((ab.sqrt(), (1.0 - ab).max(0.0).sqrt()))
    }
}
