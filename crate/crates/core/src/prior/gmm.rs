//! Gaussian mixtures whose component covariances are `diag(d) + F Fᵀ`.
//!
//! The form is closed under Gaussian conditioning on a subset of channels,
//! so the controlled denoiser is the same code path as the unconditional one.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{CoinError, Result};
use crate::motion::{MotionLayout, Normalizer};
use crate::schedule::{DiffusionSchedule, ScheduleParams};

use super::{ControlSignal, Denoiser};

pub const DEFAULT_COV_FLOOR: f64 = 1e-6;
const MAX_DIAG_GROUPS: usize = 96;

#[derive(Debug, Clone)]
struct DiagGroup {
    value: f64,
    gram: DMatrix<f64>,
}

/// Covariance `diag(d) + F Fᵀ` with `F` of shape `D × r`.
#[derive(Debug, Clone)]
pub struct LowRankCov {
    diag: DVector<f64>,
    factor: DMatrix<f64>,
    groups: Option<Vec<DiagGroup>>,
}

impl LowRankCov {
    pub fn new(diag: DVector<f64>, factor: DMatrix<f64>) -> Result<Self> {
        if factor.nrows() != diag.len() {
            return Err(CoinError::Shape { expected: diag.len(), got: factor.nrows() });
        }
        if diag.iter().any(|d| !(d.is_finite() && *d > 0.0)) || factor.iter().any(|f| !f.is_finite()) {
            return Err(CoinError::Domain("covariance must be finite with positive diagonal".into()));
        }
        let groups = build_groups(&diag, &factor);
        Ok(Self { diag, factor, groups })
    }

    pub fn diagonal(diag: DVector<f64>) -> Result<Self> {
        let n = diag.len();
        Self::new(diag, DMatrix::zeros(n, 0))
    }

    /// Eigen-clipped conversion of a dense symmetric matrix.
    /// Returns the covariance and the number of eigenvalues raised to `floor`.
    pub fn from_dense(cov: &DMatrix<f64>, floor: f64) -> Result<(Self, usize)> {
        let n = cov.nrows();
        if cov.ncols() != n {
            return Err(CoinError::Shape { expected: n, got: cov.ncols() });
        }
        let off_diag = (0..n).any(|i| (0..n).any(|j| i != j && cov[(i, j)] != 0.0));
        if !off_diag {
            let clipped = (0..n).filter(|&i| cov[(i, i)] < floor).count();
            let d = DVector::from_iterator(n, (0..n).map(|i| cov[(i, i)].max(floor)));
            return Ok((Self::diagonal(d)?, clipped));
        }
        let sym = (cov + cov.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let keep: Vec<usize> = (0..n).filter(|&j| eig.eigenvalues[j] > floor).collect();
        let clipped = n - keep.len();
        let mut f = DMatrix::zeros(n, keep.len());
        for (c, &j) in keep.iter().enumerate() {
            let s = (eig.eigenvalues[j] - floor).sqrt();
            f.set_column(c, &(eig.eigenvectors.column(j) * s));
        }
        Ok((Self::new(DVector::from_element(n, floor), f)?, clipped))
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn rank(&self) -> usize {
        self.factor.ncols()
    }

    pub fn diag(&self) -> &DVector<f64> {
        &self.diag
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let mut m = &self.factor * self.factor.transpose();
        for i in 0..self.dim() {
            m[(i, i)] += self.diag[i];
        }
        m
    }

    /// `Σ v`.
    pub fn mul(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = self.diag.component_mul(v);
        if self.rank() > 0 {
            let p = self.factor.tr_mul(v);
            out.gemv(1.0, &self.factor, &p, 1.0);
        }
        out
    }

    pub fn trace(&self) -> f64 {
        self.diag.sum() + self.factor.iter().map(|f| f * f).sum::<f64>()
    }

    /// `I + a² Fᵀ diag(1/B) F` where `B = a² d + b²`.
    fn capacitance(&self, a2: f64, b2: f64, inv_b: &DVector<f64>) -> DMatrix<f64> {
        let r = self.rank();
        let mut c = DMatrix::identity(r, r);
        match &self.groups {
            Some(groups) => {
                for g in groups {
                    c += &g.gram * (a2 / (a2 * g.value + b2));
                }
            }
            None => {
                let mut scaled = self.factor.clone();
                for (i, mut row) in scaled.row_iter_mut().enumerate() {
                    row *= inv_b[i];
                }
                c += self.factor.tr_mul(&scaled) * a2;
            }
        }
        c
    }
}

fn build_groups(diag: &DVector<f64>, factor: &DMatrix<f64>) -> Option<Vec<DiagGroup>> {
    let r = factor.ncols();
    if r == 0 {
        return Some(Vec::new());
    }
    let mut map: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, d) in diag.iter().enumerate() {
        map.entry(d.to_bits()).or_default().push(i);
        if map.len() > MAX_DIAG_GROUPS {
            return None;
        }
    }
    Some(
        map.into_iter()
            .map(|(bits, rows)| {
                let mut gram = DMatrix::zeros(r, r);
                for i in rows {
                    let row = factor.row(i);
                    gram += row.transpose() * row;
                }
                DiagGroup { value: f64::from_bits(bits), gram }
            })
            .collect(),
    )
}

/// Factorization of `A = a² Σ + b² I` for solves and log-determinants.
struct NoisySolve<'a> {
    cov: &'a LowRankCov,
    a2: f64,
    inv_b: DVector<f64>,
    chol: Option<Cholesky<f64, Dyn>>,
    logdet: f64,
}

impl<'a> NoisySolve<'a> {
    fn new(cov: &'a LowRankCov, a: f64, b: f64) -> Result<Self> {
        let a2 = a * a;
        let b2 = b * b;
        let bvec = cov.diag.map(|d| a2 * d + b2);
        let mut logdet: f64 = bvec.iter().map(|v| v.ln()).sum();
        let inv_b = bvec.map(|v| 1.0 / v);
        let chol = if cov.rank() > 0 {
            let c = cov.capacitance(a2, b2, &inv_b);
            let ch = Cholesky::new(c).ok_or_else(|| CoinError::Numeric { step: 0, msg: "capacitance not positive definite".into() })?;
            logdet += 2.0 * ch.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            Some(ch)
        } else {
            None
        };
        Ok(Self { cov, a2, inv_b, chol, logdet })
    }

    fn solve(&self, r: &DVector<f64>) -> DVector<f64> {
        let u = r.component_mul(&self.inv_b);
        match &self.chol {
            None => u,
            Some(ch) => {
                let w = ch.solve(&self.cov.factor.tr_mul(&u));
                let fw = &self.cov.factor * w;
                u - fw.component_mul(&self.inv_b) * self.a2
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: DVector<f64>,
    pub cov: Arc<LowRankCov>,
}

/// Per-component pieces of the posterior at one noise level.
#[derive(Debug, Clone)]
pub struct Posterior {
    pub responsibilities: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    /// `∇ₓ log N(x; a μ_k, A_k)` per component.
    pub score: Vec<DVector<f64>>,
    /// `A_k⁻¹ v`-style solves are recomputed on demand, so keep the noise level.
    pub a: f64,
    pub b: f64,
    pub h0: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct GmmPrior {
    pub components: Vec<GmmComponent>,
    pub schedule: DiffusionSchedule,
    pub cov_floor: f64,
    pub normalizer: Normalizer,
    pub layout: Option<MotionLayout>,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl GmmPrior {
    pub fn new(components: Vec<GmmComponent>, schedule: DiffusionSchedule, cov_floor: f64) -> Result<Self> {
        let dim = components.first().map(|c| c.mean.len()).ok_or_else(|| CoinError::Domain("prior needs at least one component".into()))?;
        let prior = Self { components, schedule, cov_floor, normalizer: Normalizer::identity(dim), layout: None };
        prior.validate()?;
        Ok(prior)
    }

    /// Builds from weights, means and dense covariances, clipping eigenvalues at `cov_floor`.
    pub fn from_dense(weights: &[f64], means: &[DVector<f64>], covs: &[DMatrix<f64>], schedule: DiffusionSchedule, cov_floor: f64) -> Result<Self> {
        if weights.len() != means.len() || weights.len() != covs.len() {
            return Err(CoinError::Shape { expected: weights.len(), got: means.len().min(covs.len()) });
        }
        let total: f64 = weights.iter().sum();
        let mut comps = Vec::with_capacity(weights.len());
        for ((w, m), c) in weights.iter().zip(means).zip(covs) {
            let (cov, clipped) = LowRankCov::from_dense(c, cov_floor)?;
            if clipped > 0 {
                log::debug!("{clipped} covariance eigenvalues raised to the floor");
            }
            comps.push(GmmComponent { weight: w / total, mean: m.clone(), cov: Arc::new(cov) });
        }
        Self::new(comps, schedule, cov_floor)
    }

    /// Single Gaussian `N(mean, var I)`.
    pub fn isotropic(mean: DVector<f64>, var: f64, schedule: DiffusionSchedule) -> Result<Self> {
        let n = mean.len();
        let cov = LowRankCov::diagonal(DVector::from_element(n, var))?;
        Self::new(vec![GmmComponent { weight: 1.0, mean, cov: Arc::new(cov) }], schedule, var.min(DEFAULT_COV_FLOOR))
    }

    pub fn unit_gaussian(dim: usize) -> Result<Self> {
        Self::isotropic(DVector::zeros(dim), 1.0, DiffusionSchedule::new(ScheduleParams::default())?)
    }

    pub fn with_motion(mut self, layout: MotionLayout, normalizer: Normalizer) -> Result<Self> {
        if layout.dim() != self.dim() || normalizer.dim() != self.dim() {
            return Err(CoinError::Shape { expected: self.dim(), got: layout.dim() });
        }
        self.layout = Some(layout);
        self.normalizer = normalizer;
        Ok(self)
    }

    /// Marginal over the first `frames` frames of a motion prior.
    pub fn leading_frames(&self, frames: usize) -> Result<GmmPrior> {
        let layout = self.layout.ok_or_else(|| CoinError::Config("prior has no motion layout".into()))?;
        if frames == 0 || frames > layout.frames {
            return Err(CoinError::Shape { expected: layout.frames, got: frames });
        }
        if frames == layout.frames {
            return Ok(self.clone());
        }
        let sub = MotionLayout::new(frames, layout.j_local);
        let n = sub.dim();
        let mut comps = Vec::with_capacity(self.len());
        for c in &self.components {
            let cov = LowRankCov::new(c.cov.diag().rows(0, n).into_owned(), c.cov.factor().rows(0, n).into_owned())?;
            comps.push(GmmComponent { weight: c.weight, mean: c.mean.rows(0, n).into_owned(), cov: Arc::new(cov) });
        }
        let normalizer = Normalizer { offset: self.normalizer.offset[..n].to_vec(), scale: self.normalizer.scale[..n].to_vec() };
        Ok(GmmPrior { components: comps, schedule: self.schedule.clone(), cov_floor: self.cov_floor, normalizer, layout: Some(sub) })
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.dim();
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(CoinError::Domain(format!("weights sum to {total}")));
        }
        for c in &self.components {
            if c.mean.len() != dim || c.cov.dim() != dim {
                return Err(CoinError::Shape { expected: dim, got: c.mean.len() });
            }
            if !(c.weight >= 0.0) || c.mean.iter().any(|m| !m.is_finite()) {
                return Err(CoinError::Domain("invalid component".into()));
            }
            if c.cov.diag().min() < self.cov_floor * (1.0 - 1e-12) {
                return Err(CoinError::Domain("covariance below floor".into()));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.components[0].mean.len()
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    /// Mixture mean.
    pub fn mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.dim());
        for c in &self.components {
            m.axpy(c.weight, &c.mean, 1.0);
        }
        m
    }

    /// Per-channel marginal variance of the mixture.
    pub fn marginal_variance(&self) -> DVector<f64> {
        let mean = self.mean();
        let mut v = DVector::zeros(self.dim());
        for c in &self.components {
            let own = c.cov.diag() + DVector::from_iterator(self.dim(), c.cov.factor().row_iter().map(|r| r.norm_squared()));
            let diff = &c.mean - &mean;
            v += (own + diff.component_mul(&diff)) * c.weight;
        }
        v
    }

    /// Log-density of `x` under each component convolved to noise level `(a, b)`.
    pub(crate) fn component_logpdf(&self, x: &DVector<f64>, a: f64, b: f64) -> Result<(Vec<f64>, Vec<DVector<f64>>)> {
        let dim = self.dim();
        if x.len() != dim {
            return Err(CoinError::Shape { expected: dim, got: x.len() });
        }
        let mut logs = Vec::with_capacity(self.len());
        let mut solves = Vec::with_capacity(self.len());
        for c in &self.components {
            let ns = NoisySolve::new(&c.cov, a, b)?;
            let r = x - &c.mean * a;
            let y = ns.solve(&r);
            let quad = r.dot(&y);
            logs.push(c.weight.ln() - 0.5 * (quad + ns.logdet + dim as f64 * (2.0 * PI).ln()));
            solves.push(y);
        }
        Ok((logs, solves))
    }

    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        let (logs, _) = self.component_logpdf(x, 1.0, 0.0)?;
        Ok(log_sum_exp(&logs))
    }

    /// Component responsibilities of `x` at noise level zero.
    pub fn responsibilities(&self, x: &DVector<f64>) -> Result<Vec<f64>> {
        let (logs, _) = self.component_logpdf(x, 1.0, 0.0)?;
        let z = log_sum_exp(&logs);
        Ok(logs.iter().map(|l| (l - z).exp()).collect())
    }

    /// Squared Mahalanobis distance of `x` to each component.
    pub fn mahalanobis(&self, x: &DVector<f64>) -> Result<Vec<f64>> {
        self.components
            .iter()
            .map(|c| {
                let ns = NoisySolve::new(&c.cov, 1.0, 0.0)?;
                let r = x - &c.mean;
                Ok(r.dot(&ns.solve(&r)))
            })
            .collect()
    }

    /// Exact posterior `E[H0 | x]` for `x = a H0 + b ε` with all per-component parts.
    pub fn posterior(&self, x: &DVector<f64>, a: f64, b: f64) -> Result<Posterior> {
        let (logs, solves) = self.component_logpdf(x, a, b)?;
        let z = log_sum_exp(&logs);
        let gammas: Vec<f64> = logs.iter().map(|l| (l - z).exp()).collect();
        let mut h0 = DVector::zeros(self.dim());
        let mut means = Vec::with_capacity(self.len());
        let mut score = Vec::with_capacity(self.len());
        for ((c, y), g) in self.components.iter().zip(solves).zip(&gammas) {
            let m = &c.mean + c.cov.mul(&y) * a;
            h0.axpy(*g, &m, 1.0);
            means.push(m);
            score.push(-y);
        }
        Ok(Posterior { responsibilities: gammas, means, score, a, b, h0 })
    }

    /// Vector-Jacobian product `vᵀ ∂E[H0|x]/∂x`.
    pub fn posterior_vjp(&self, post: &Posterior, v: &DVector<f64>) -> Result<DVector<f64>> {
        let (a, b) = (post.a, post.b);
        let mut gbar = DVector::zeros(self.dim());
        for (g, s) in post.responsibilities.iter().zip(&post.score) {
            gbar.axpy(*g, s, 1.0);
        }
        let mut out = DVector::zeros(self.dim());
        for (k, c) in self.components.iter().enumerate() {
            let gk = post.responsibilities[k];
            if gk < 1e-300 {
                continue;
            }
            // J_k = a Σ A⁻¹ is symmetric, so J_kᵀ v = a A⁻¹ Σ v.
            let ns = NoisySolve::new(&c.cov, a, b)?;
            let jv = ns.solve(&c.cov.mul(v)) * a;
            out.axpy(gk, &jv, 1.0);
            let mv = post.means[k].dot(v);
            out.axpy(gk * mv, &(&post.score[k] - &gbar), 1.0);
        }
        Ok(out)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = self.len() - 1;
        for (k, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                pick = k;
                break;
            }
        }
        let c = &self.components[pick];
        let dim = self.dim();
        let xi = DVector::from_iterator(dim, (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let mut x = &c.mean + c.cov.diag().map(f64::sqrt).component_mul(&xi);
        if c.cov.rank() > 0 {
            let z = DVector::from_iterator(c.cov.rank(), (0..c.cov.rank()).map(|_| rng.sample::<f64, _>(StandardNormal)));
            x.gemv(1.0, c.cov.factor(), &z, 1.0);
        }
        x
    }

    /// Exact Bayesian conditioning on `ctrl`.
    pub fn condition(&self, ctrl: &ControlSignal) -> Result<GmmPrior> {
        self.conditioner(&ctrl.mask, &ctrl.obs_noise_sigma)?.apply(&ctrl.values)
    }

    /// Precomputes everything of the conditioning that does not depend on the control values.
    pub fn conditioner(&self, mask: &[bool], sigma: &DVector<f64>) -> Result<Conditioner> {
        let dim = self.dim();
        if mask.len() != dim || sigma.len() != dim {
            return Err(CoinError::Shape { expected: dim, got: mask.len().min(sigma.len()) });
        }
        let observed: Vec<usize> = (0..dim).filter(|&i| mask[i]).collect();
        if observed.iter().any(|&i| !(sigma[i] > 0.0 && sigma[i].is_finite())) {
            return Err(CoinError::Domain("observation noise must be positive on observed channels".into()));
        }
        let mut parts = Vec::with_capacity(self.len());
        if !observed.is_empty() {
            for c in &self.components {
                parts.push(ConditionedCov::new(c, &observed, sigma)?);
            }
        }
        Ok(Conditioner { prior: self.clone(), observed, parts })
    }
}

/// Value-independent part of conditioning one component.
#[derive(Debug, Clone)]
struct ConditionedCov {
    n_obs: DVector<f64>,
    f_obs: DMatrix<f64>,
    /// Cholesky of `I + F_oᵀ N⁻¹ F_o`.
    chol: Option<Cholesky<f64, Dyn>>,
    logdet: f64,
    /// Loading of the latent factor on every channel after conditioning.
    g: DMatrix<f64>,
    cov: Arc<LowRankCov>,
}

impl ConditionedCov {
    fn new(c: &GmmComponent, observed: &[usize], sigma: &DVector<f64>) -> Result<Self> {
        let dim = c.mean.len();
        let r = c.cov.rank();
        let d = c.cov.diag();
        let f = c.cov.factor();
        let n_obs = DVector::from_iterator(observed.len(), observed.iter().map(|&i| d[i] + sigma[i] * sigma[i]));
        let mut logdet: f64 = n_obs.iter().map(|v| v.ln()).sum();
        let f_obs = f.select_rows(observed.iter());
        let mut new_diag = d.clone();
        let mut g = f.clone();
        for (k, &i) in observed.iter().enumerate() {
            let s2 = sigma[i] * sigma[i];
            new_diag[i] = d[i] * s2 / n_obs[k];
            let mut row = g.row_mut(i);
            row *= s2 / n_obs[k];
        }
        let (chol, cov) = if r > 0 {
            let mut scaled = f_obs.clone();
            for (k, mut row) in scaled.row_iter_mut().enumerate() {
                row /= n_obs[k];
            }
            let p = DMatrix::identity(r, r) + f_obs.tr_mul(&scaled);
            let ch = Cholesky::new(p).ok_or_else(|| CoinError::Numeric { step: 0, msg: "conditioning precision not positive definite".into() })?;
            logdet += 2.0 * ch.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            // F' = G L⁻ᵀ, i.e. F'ᵀ = L⁻¹ Gᵀ
            let l = ch.l();
            let gt = g.transpose();
            let ft = l.solve_lower_triangular(&gt).ok_or_else(|| CoinError::Numeric { step: 0, msg: "triangular solve failed".into() })?;
            (Some(ch), LowRankCov::new(new_diag, ft.transpose())?)
        } else {
            (None, LowRankCov::diagonal(new_diag)?)
        };
        debug_assert_eq!(cov.dim(), dim);
        Ok(Self { n_obs, f_obs, chol, logdet, g, cov: Arc::new(cov) })
    }
}

/// Conditioning of a prior on a fixed mask and noise level, applied to any control values.
#[derive(Debug, Clone)]
pub struct Conditioner {
    prior: GmmPrior,
    observed: Vec<usize>,
    parts: Vec<ConditionedCov>,
}

impl Conditioner {
    pub fn observed(&self) -> &[usize] {
        &self.observed
    }

    pub fn apply(&self, values: &DVector<f64>) -> Result<GmmPrior> {
        let dim = self.prior.dim();
        if values.len() != dim {
            return Err(CoinError::Shape { expected: dim, got: values.len() });
        }
        if self.observed.is_empty() {
            return Ok(self.prior.clone());
        }
        let mut logs = Vec::with_capacity(self.parts.len());
        let mut comps = Vec::with_capacity(self.parts.len());
        for (c, part) in self.prior.components.iter().zip(&self.parts) {
            let r_obs = DVector::from_iterator(self.observed.len(), self.observed.iter().map(|&i| values[i] - c.mean[i]));
            let u = r_obs.component_div(&part.n_obs);
            let mut quad = r_obs.dot(&u);
            let mut mean = c.mean.clone();
            for (k, &i) in self.observed.iter().enumerate() {
                mean[i] += c.cov.diag()[i] * u[k];
            }
            if let Some(ch) = &part.chol {
                let v = part.f_obs.tr_mul(&u);
                let mz = ch.solve(&v);
                quad -= v.dot(&mz);
                mean.gemv(1.0, &part.g, &mz, 1.0);
            }
            logs.push(c.weight.ln() - 0.5 * (quad + part.logdet + self.observed.len() as f64 * (2.0 * PI).ln()));
            comps.push(GmmComponent { weight: 0.0, mean, cov: part.cov.clone() });
        }
        let z = log_sum_exp(&logs);
        if !z.is_finite() {
            return Err(CoinError::Numeric { step: 0, msg: "conditioning likelihood underflow".into() });
        }
        let mut weights: Vec<f64> = logs.iter().map(|l| (l - z).exp()).collect();
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        for (c, w) in comps.iter_mut().zip(weights) {
            c.weight = w;
        }
        let floor = comps.iter().map(|c| c.cov.diag().min()).fold(self.prior.cov_floor, f64::min);
        Ok(GmmPrior { components: comps, schedule: self.prior.schedule.clone(), cov_floor: floor, normalizer: self.prior.normalizer.clone(), layout: self.prior.layout })
    }
}

impl Denoiser for GmmPrior {
    fn dim(&self) -> usize {
        GmmPrior::dim(self)
    }

    fn schedule(&self) -> &DiffusionSchedule {
        &self.schedule
    }

    fn denoise_at(&self, x: &DVector<f64>, alpha_bar: f64) -> Result<DVector<f64>> {
        Ok(self.posterior(x, alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt())?.h0)
    }
}
