//! Expectation-maximization for the mixture prior.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoinError, Result};
use crate::motion::{CanonicalFrame, MotionWindow, Normalizer};
use crate::schedule::{DiffusionSchedule, ScheduleParams};

use super::gmm::{GmmComponent, GmmPrior, LowRankCov, DEFAULT_COV_FLOOR};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub components: usize,
    /// Factor rank per component; `None` keeps the full sample covariance.
    pub rank: Option<usize>,
    pub max_iters: usize,
    pub tol: f64,
    pub cov_floor: f64,
    pub schedule: ScheduleParams,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { components: 4, rank: Some(16), max_iters: 40, tol: 1e-7, cov_floor: DEFAULT_COV_FLOOR, schedule: ScheduleParams::default(), seed: 0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Total log-likelihood before each M-step and after the last one.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub warnings: Vec<String>,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn e_step(prior: &GmmPrior, data: &[DVector<f64>]) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut total = 0.0;
    let mut resp = Vec::with_capacity(data.len());
    for x in data {
        let (logs, _) = prior.component_logpdf(x, 1.0, 0.0)?;
        let z = log_sum_exp(&logs);
        total += z;
        resp.push(logs.iter().map(|l| (l - z).exp()).collect());
    }
    Ok((total, resp))
}

struct MStep<'a> {
    data: &'a [DVector<f64>],
    gram: DMatrix<f64>,
    cfg: &'a FitConfig,
}

impl MStep<'_> {
    fn component(&self, gamma: &[f64], previous: Option<&GmmComponent>, warnings: &mut Vec<String>) -> Result<(f64, DVector<f64>, LowRankCov)> {
        let n = self.data.len();
        let dim = self.data[0].len();
        let nk: f64 = gamma.iter().sum();
        if nk < 1e-10 {
            if let Some(p) = previous {
                return Ok((0.0, p.mean.clone(), (*p.cov).clone()));
            }
            return Err(CoinError::Numeric { step: 0, msg: "empty mixture component".into() });
        }
        let mut mean = DVector::zeros(dim);
        for (x, g) in self.data.iter().zip(gamma) {
            mean.axpy(*g / nk, x, 1.0);
        }
        let floor = self.cfg.cov_floor;
        // Y = [√(γ_i/N_k)(x_i − μ)], S = Y Yᵀ; eigenvectors via the N×N Gram when cheaper
        let w: Vec<f64> = gamma.iter().map(|g| (g / nk).sqrt()).collect();
        let cov = if n < dim || self.cfg.rank.is_some() {
            let xm: Vec<f64> = self.data.iter().map(|x| x.dot(&mean)).collect();
            let mm = mean.dot(&mean);
            let active: Vec<usize> = (0..n).filter(|&i| w[i] > 1e-12).collect();
            let m = active.len();
            let small = DMatrix::from_fn(m, m, |a, b| {
                let (i, j) = (active[a], active[b]);
                w[i] * w[j] * (self.gram[(i, j)] - xm[i] - xm[j] + mm)
            });
            let trace = small.trace();
            let eig = SymmetricEigen::new(small);
            if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
                return Err(CoinError::Numeric { step: 0, msg: "eigendecomposition of the component scatter failed".into() });
            }
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
            let keep = self.cfg.rank.unwrap_or(m).min(m).min(dim);
            let top: Vec<usize> = order.into_iter().take(keep).filter(|&j| eig.eigenvalues[j] > 0.0).collect();
            let kept: f64 = top.iter().map(|&j| eig.eigenvalues[j]).sum();
            let noise = match self.cfg.rank {
                Some(r) if dim > r => ((trace - kept) / (dim - r) as f64).max(floor),
                _ => floor,
            };
            if noise <= floor {
                warnings.push(format!("component covariance is singular; {} eigenvalues floored at {floor}", dim - top.len()));
            }
            let cols: Vec<usize> = top.into_iter().filter(|&j| eig.eigenvalues[j] > noise).collect();
            let mut f = DMatrix::zeros(dim, cols.len());
            for (c, &j) in cols.iter().enumerate() {
                let lambda = eig.eigenvalues[j];
                let v = eig.eigenvectors.column(j);
                let mut u = DVector::zeros(dim);
                for (a, &i) in active.iter().enumerate() {
                    u.axpy(w[i] * v[a], &(&self.data[i] - &mean), 1.0);
                }
                u /= lambda.sqrt();
                f.set_column(c, &(u * (lambda - noise).sqrt()));
            }
            LowRankCov::new(DVector::from_element(dim, noise), f)?
        } else {
            let mut s = DMatrix::zeros(dim, dim);
            for (x, wi) in self.data.iter().zip(&w) {
                let d = (x - &mean) * *wi;
                s += &d * d.transpose();
            }
            let (cov, clipped) = LowRankCov::from_dense(&s, floor)?;
            if clipped > 0 {
                warnings.push(format!("component covariance is singular; {clipped} eigenvalues floored at {floor}"));
            }
            cov
        };
        Ok((nk / n as f64, mean, cov))
    }
}

fn kmeans_pp_seeds(data: &[DVector<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut seeds = vec![rng.random_range(0..data.len())];
    let mut d2: Vec<f64> = data.iter().map(|x| (x - &data[seeds[0]]).norm_squared()).collect();
    while seeds.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total <= 0.0 {
            rng.random_range(0..data.len())
        } else {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut p = data.len() - 1;
            for (i, v) in d2.iter().enumerate() {
                acc += v;
                if u < acc {
                    p = i;
                    break;
                }
            }
            p
        };
        seeds.push(pick);
        for (i, x) in data.iter().enumerate() {
            d2[i] = d2[i].min((x - &data[pick]).norm_squared());
        }
    }
    seeds
}

/// Fits a mixture to latent vectors by EM with k-means++ seeding.
pub fn fit_gmm(data: &[DVector<f64>], cfg: &FitConfig) -> Result<(GmmPrior, FitReport)> {
    if data.is_empty() {
        return Err(CoinError::Domain("empty dataset".into()));
    }
    let k = cfg.components;
    if k == 0 {
        return Err(CoinError::Config("component count must be at least 1".into()));
    }
    if data.len() < 10 * k {
        return Err(CoinError::Domain(format!("dataset of {} samples is too small for {k} components", data.len())));
    }
    let dim = data[0].len();
    if let Some(bad) = data.iter().find(|x| x.len() != dim) {
        return Err(CoinError::Shape { expected: dim, got: bad.len() });
    }
    let schedule = DiffusionSchedule::new(cfg.schedule)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = data.len();
    let gram = if n < dim || cfg.rank.is_some() { DMatrix::from_fn(n, n, |i, j| data[i].dot(&data[j])) } else { DMatrix::zeros(0, 0) };
    let mstep = MStep { data, gram, cfg };

    let seeds = kmeans_pp_seeds(data, k, &mut rng);
    let mut resp: Vec<Vec<f64>> = data
        .iter()
        .map(|x| {
            let best = (0..k).min_by(|&a, &b| (x - &data[seeds[a]]).norm_squared().total_cmp(&(x - &data[seeds[b]]).norm_squared())).unwrap();
            (0..k).map(|j| if j == best { 1.0 } else { 0.0 }).collect()
        })
        .collect();

    let mut report = FitReport::default();
    let mut prior: Option<GmmPrior> = None;
    for iter in 0..cfg.max_iters.max(1) {
        let mut warnings = Vec::new();
        let mut comps = Vec::with_capacity(k);
        for j in 0..k {
            let gamma: Vec<f64> = resp.iter().map(|r| r[j]).collect();
            let previous = prior.as_ref().map(|p| &p.components[j]);
            let (w, mean, cov) = mstep.component(&gamma, previous, &mut warnings)?;
            comps.push(GmmComponent { weight: w, mean, cov: Arc::new(cov) });
        }
        let total: f64 = comps.iter().map(|c| c.weight).sum();
        for c in &mut comps {
            c.weight /= total;
        }
        let next = GmmPrior::new(comps, schedule.clone(), cfg.cov_floor)?;
        let (ll, r) = e_step(&next, data)?;
        report.iterations = iter + 1;
        let prev = report.log_likelihood.last().copied();
        report.log_likelihood.push(ll);
        resp = r;
        prior = Some(next);
        report.warnings = warnings;
        if let Some(p) = prev {
            if (ll - p).abs() <= cfg.tol * ll.abs().max(1.0) {
                break;
            }
        }
    }
    for w in &report.warnings {
        log::warn!("{w}");
    }
    Ok((prior.expect("at least one EM iteration"), report))
}

/// Canonicalizes and normalizes motion windows, then fits the prior over them.
pub fn fit_motion_prior(windows: &[MotionWindow], cfg: &FitConfig) -> Result<(GmmPrior, FitReport)> {
    let first = windows.first().ok_or_else(|| CoinError::Domain("empty dataset".into()))?;
    let layout = first.layout;
    let canonical: Vec<MotionWindow> = windows.iter().map(|w| CanonicalFrame::of(w).canonicalize(w)).collect();
    let normalizer = Normalizer::fit(&canonical)?;
    let latent: Vec<DVector<f64>> = canonical.iter().map(|w| normalizer.normalize(&w.data)).collect();
    let (prior, report) = fit_gmm(&latent, cfg)?;
    Ok((prior.with_motion(layout, normalizer)?, report))
}
