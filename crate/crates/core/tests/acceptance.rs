//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion.
//!
//! Criterion failures are reported but do not fail the process unless
//! `COIN_ACCEPTANCE_STRICT=1` is set.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use coin_core::cli::{cmd_ablate, evaluate_trajectory, scale_error, AblateArgs, AblationTable, Trajectory};
use coin_core::geometry::exp_so3;
use coin_core::metrics::*;
use coin_core::motion::{BodyModel, CanonicalFrame, ChannelKind};
use coin_core::optimizer::*;
use coin_core::prior::*;
use coin_core::scenario::{obs_noise_for, train_prior, Dataset, TrainingConfig, DATASET_VERSION};
use coin_core::schedule::DiffusionSchedule;
use coin_core::sds::*;
use coin_core::world::{build_world, NoiseConfig, OcclusionConfig, ScenarioConfig};
use coin_core::Result;
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome { pass, detail: detail.into() })
}

fn normal(rng: &mut ChaCha8Rng, dim: usize) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn random_prior(rng: &mut ChaCha8Rng, k: usize, dim: usize) -> GmmPrior {
    let comps = (0..k)
        .map(|_| {
            let mean = DVector::from_fn(dim, |_, _| rng.random_range(-2.0..2.0));
            let diag = DVector::from_fn(dim, |_, _| rng.random_range(0.05..0.5));
            let rank = rng.random_range(0..=2.min(dim));
            let f = DMatrix::from_fn(dim, rank, |_, _| rng.random_range(-0.5..0.5));
            GmmComponent { weight: rng.random_range(0.2..1.0), mean, cov: Arc::new(LowRankCov::new(diag, f).unwrap()) }
        })
        .collect::<Vec<_>>();
    let total: f64 = comps.iter().map(|c| c.weight).sum();
    let comps = comps.into_iter().map(|c| GmmComponent { weight: c.weight / total, ..c }).collect();
    GmmPrior::new(comps, DiffusionSchedule::default(), DEFAULT_COV_FLOOR).unwrap()
}

fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

/// Mixture with dense covariances, used as an independent sampler.
struct DenseMixture {
    log_weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covs: Vec<DMatrix<f64>>,
    factors: Vec<DMatrix<f64>>,
}

impl DenseMixture {
    fn new(log_weights: Vec<f64>, means: Vec<DVector<f64>>, covs: Vec<DMatrix<f64>>) -> Self {
        let factors = covs.iter().map(|c| ((c + c.transpose()) * 0.5).cholesky().unwrap().l()).collect();
        Self { log_weights, means, covs, factors }
    }

    fn of(p: &GmmPrior) -> Self {
        Self::new(p.components.iter().map(|c| c.weight.ln()).collect(), p.components.iter().map(|c| c.mean.clone()).collect(), p.components.iter().map(|c| c.cov.dense()).collect())
    }

    /// Standard Gaussian conditioning on `values[i] = h[i] + sigma[i] n` for observed `i`.
    fn condition(&self, mask: &[bool], values: &DVector<f64>, sigma: &DVector<f64>) -> Self {
        let obs: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        if obs.is_empty() {
            return Self::new(self.log_weights.clone(), self.means.clone(), self.covs.clone());
        }
        let c = DVector::from_iterator(obs.len(), obs.iter().map(|&i| values[i]));
        let (mut log_weights, mut means, mut covs) = (vec![], vec![], vec![]);
        for ((lw, mu), cov) in self.log_weights.iter().zip(&self.means).zip(&self.covs) {
            let mut s = cov.select_rows(obs.iter()).select_columns(obs.iter());
            for (k, &i) in obs.iter().enumerate() {
                s[(k, k)] += sigma[i] * sigma[i];
            }
            let s_inv = s.clone().try_inverse().unwrap();
            let cross = cov.select_columns(obs.iter());
            let gain = &cross * &s_inv;
            let r = &c - DVector::from_iterator(obs.len(), obs.iter().map(|&i| mu[i]));
            let quad = r.dot(&(&s_inv * &r));
            let log_norm = -0.5 * (quad + s.determinant().ln() + obs.len() as f64 * (2.0 * std::f64::consts::PI).ln());
            log_weights.push(lw + log_norm);
            means.push(mu + &gain * r);
            covs.push(cov - &gain * cross.transpose());
        }
        let top = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z = top + log_weights.iter().map(|l| (l - top).exp()).sum::<f64>().ln();
        log_weights.iter_mut().for_each(|l| *l -= z);
        Self::new(log_weights, means, covs)
    }

    fn uniform(self) -> Self {
        let k = self.means.len() as f64;
        Self { log_weights: vec![-k.ln(); self.means.len()], ..self }
    }

    fn log_pdf(&self, h: &DVector<f64>) -> f64 {
        let logs: Vec<f64> = (0..self.means.len())
            .map(|k| {
                let l = &self.factors[k];
                let y = l.solve_lower_triangular(&(h - &self.means[k])).unwrap();
                let half_logdet: f64 = l.diagonal().iter().map(|v| v.ln()).sum();
                self.log_weights[k] - 0.5 * y.norm_squared() - half_logdet - 0.5 * h.len() as f64 * (2.0 * std::f64::consts::PI).ln()
            })
            .collect();
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        top + logs.iter().map(|l| (l - top).exp()).sum::<f64>().ln()
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = self.means.len() - 1;
        for (j, l) in self.log_weights.iter().enumerate() {
            acc += l.exp();
            if u < acc {
                k = j;
                break;
            }
        }
        &self.means[k] + &self.factors[k] * normal(rng, self.means[k].len())
    }
}

fn denoiser_exactness() -> Result<Outcome> {
    const SAMPLES: usize = 1_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let k = rng.random_range(1..=3);
        let dim = rng.random_range(2..=8);
        let prior = random_prior(&mut rng, k, dim);
        let t = rng.random_range(0.3..0.95);
        let (a, b) = prior.schedule.coefficients(t)?;
        let truth = prior.sample(&mut rng);
        let x = &truth * a + normal(&mut rng, dim) * b;
        let mask: Vec<bool> = (0..dim).map(|i| i > 0 && rng.random_bool(0.5)).collect();
        let sigma = DVector::from_fn(dim, |_, _| rng.random_range(0.2..0.5));
        let values = DVector::from_fn(dim, |i, _| if mask[i] { truth[i] + sigma[i] * rng.sample::<f64, _>(StandardNormal) } else { 0.0 });
        let ctrl = ControlSignal { values: values.clone(), mask: mask.clone(), obs_noise_sigma: sigma.clone() };

        // Self-normalized importance sampling of p(h0) N(x; a h0, b²) [N(c; h0, σ²)].
        // The proposal mixes the per-component dense Gaussian posteriors with equal
        // weights, so the responsibilities come from the importance weights alone.
        let dense = DenseMixture::of(&prior);
        let all = vec![true; dim];
        let latent_obs = (&x / a, DVector::from_element(dim, b / a));
        let target = |h: &DVector<f64>, controlled: bool| {
            let mut l = dense.log_pdf(h) - (&x - h * a).norm_squared() / (2.0 * b * b);
            if controlled {
                l -= (0..dim).filter(|&i| mask[i]).map(|i| ((values[i] - h[i]) / sigma[i]).powi(2) / 2.0).sum::<f64>();
            }
            l
        };
        let estimate = |proposal: DenseMixture, controlled: bool, rng: &mut ChaCha8Rng| {
            let proposal = proposal.uniform();
            let mut logs = Vec::with_capacity(SAMPLES);
            let mut draws = Vec::with_capacity(SAMPLES);
            for _ in 0..SAMPLES {
                let h = proposal.sample(rng);
                logs.push(target(&h, controlled) - proposal.log_pdf(&h));
                draws.push(h);
            }
            let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut acc = DVector::zeros(dim);
            let mut norm = 0.0;
            for (l, h) in logs.iter().zip(&draws) {
                let w = (l - top).exp();
                acc.axpy(w, h, 1.0);
                norm += w;
            }
            acc / norm
        };
        let mc = estimate(dense.condition(&all, &latent_obs.0, &latent_obs.1), false, &mut rng);
        let mc_c = estimate(dense.condition(&mask, &values, &sigma).condition(&all, &latent_obs.0, &latent_obs.1), true, &mut rng);
        let exact = prior.denoise(&x, t)?.h0_hat;
        let exact_c = prior.denoise_controlled(&x, t, &ctrl)?.h0_hat;
        // relative to the output norm, floored at one latent unit
        let err = |mc: &DVector<f64>, exact: &DVector<f64>| (mc - exact).norm() / exact.norm().max(1.0);
        worst = worst.max(err(&mc, &exact)).max(err(&mc_c, &exact_c));
    }
    outcome(worst <= 0.01, format!("worst relative error {worst:.2e} over 50 priors (limit 1e-2)"))
}

fn sds_algebra() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst_cos: f64 = 1.0;
    let mut worst_fd: f64 = 0.0;
    for _ in 0..100 {
        let dim = rng.random_range(2..=8);
        let k = rng.random_range(1..=3);
        let prior = random_prior(&mut rng, k, dim);
        let h = DVector::from_fn(dim, |_, _| rng.random_range(-3.0..3.0));
        let eps = normal(&mut rng, dim);
        let t = rng.random_range(0.02..0.98);
        let omega = rng.random_range(0.5..2.0);
        let v = vanilla_sds_loss_grad(&prior, &h, t, &eps, omega)?;
        worst_cos = worst_cos.min(v.gradient_agreement());

        let target = DVector::from_fn(dim, |_, _| rng.random_range(-3.0..3.0));
        let (_, g) = coin_sds_loss_grad(&prior.schedule, &h, &target, t, omega)?;
        let step = 1e-5;
        let fd = DVector::from_fn(dim, |i, _| {
            let mut p = h.clone();
            p[i] += step;
            let mut m = h.clone();
            m[i] -= step;
            let lp = coin_sds_loss_grad(&prior.schedule, &p, &target, t, omega).unwrap().0;
            let lm = coin_sds_loss_grad(&prior.schedule, &m, &target, t, omega).unwrap().0;
            (lp - lm) / (2.0 * step)
        });
        worst_fd = worst_fd.max(rel_err(&fd, &g));
    }
    let pass = worst_cos >= 1.0 - 1e-9 && worst_fd <= 1e-6;
    outcome(pass, format!("min cosine {worst_cos:.12}, worst finite-difference error {worst_fd:.2e}"))
}

fn reductions() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut exact_single = true;
    let mut eps_form: f64 = 0.0;
    let mut full_mask: f64 = 0.0;
    for _ in 0..20 {
        let dim = rng.random_range(2..=8);
        let prior = random_prior(&mut rng, 3, dim);
        let h = DVector::from_fn(dim, |_, _| rng.random_range(-2.0..2.0));
        let eps = normal(&mut rng, dim);

        let t = rng.random_range(0.05..0.95);
        let cfg = SdsConfig { n_ddim_steps: 1, ..SdsConfig::default() };
        let out = coin_denoise(&prior, &h, &SoftMask::empty(dim), &cfg, t, &eps)?.h0;
        let xt = forward_sample(&prior.schedule, &h, t, &eps)?;
        let single = prior.denoise(&xt, t)?;
        exact_single &= out == single.h0_hat;
        let (a, b) = prior.schedule.coefficients(t)?;
        eps_form = eps_form.max(((&xt - &single.eps_hat * b) / a - &out).amax());

        let cfg = SdsConfig { t_max: 1.0, ..SdsConfig::default() };
        let sigma = DVector::from_element(dim, 1e-9);
        let out = coin_denoise_with_prior(&prior, &h, &SoftMask::full(dim), &sigma, &cfg, 1.0, &eps)?.h0;
        full_mask = full_mask.max((out - &h).amax());
    }
    let pass = exact_single && eps_form < 1e-12 && full_mask <= 1e-6;
    outcome(pass, format!("single step bit-exact {exact_single}, noise-form gap {eps_form:.1e}, full-mask deviation {full_mask:.1e}"))
}

fn soft_mask_schedule() -> Result<Outcome> {
    let got = [mask_weight(1.0), mask_weight(0.75), mask_weight(0.5), mask_weight(0.2)];
    outcome(got == [1.0, 0.5, 0.0, 0.0], format!("w(1, 0.75, 0.5, 0.2) = {got:?}"))
}

fn scale_recovery(table: &AblationTable) -> Result<Outcome> {
    let coin: Vec<f64> = table.runs.iter().filter(|r| r.variant == "coin").map(scale_error).collect();
    let worst = coin.iter().cloned().fold(0.0, f64::max);
    let within = coin.iter().filter(|e| **e <= 0.05).count();
    let with = table.median_of("coin", scale_error);
    let without = table.median_of("no_hsr", scale_error);
    let pass = worst <= 0.05 && without > with;
    outcome(pass, format!("{within}/{} scenarios within 5% (worst {worst:.3}); median scale error with HSR {with:.4}, without {without:.4}", coin.len()))
}

fn ablation_ordering(table: &AblationTable) -> Result<Outcome> {
    let w = |v: &str| table.median_of(v, |r| r.metrics.w_mpjpe);
    let coin = w("coin");
    let mut pass = true;
    let mut parts = vec![format!("coin {coin:.4}")];
    for other in ["no_soft_inpaint", "no_control", "vanilla_sds", "guided"] {
        let m = w(other);
        pass &= coin < m;
        parts.push(format!("{other} {m:.4}"));
    }
    let ate_coin = table.median_of("coin", |r| r.metrics.ate_s);
    let ate_guided = table.median_of("guided", |r| r.metrics.ate_s);
    pass &= ate_coin < ate_guided;
    outcome(pass, format!("median W-MPJPE {}; median ATE-S coin {ate_coin:.4} guided {ate_guided:.4}", parts.join(", ")))
}

fn noiseless(prior: &GmmPrior) -> Result<Outcome> {
    let body = BodyModel::default();
    let sc = ScenarioConfig { name: "noiseless".into(), seed: 5, s_true: 1.0, noise: NoiseConfig::zero(), ..ScenarioConfig::default() };
    let world = build_world(&sc, &body)?;
    let cfg = PipelineConfig { obs_noise: obs_noise_for(&sc.noise), ..PipelineConfig::default() };
    let r = run_pipeline(&world.obs, &body, prior, &cfg)?;
    let m = evaluate_trajectory(&Trajectory::of(&r), &Dataset { version: DATASET_VERSION, world })?;
    outcome(m.w_mpjpe <= 1e-2 && m.ate_s <= 1e-2, format!("W-MPJPE {:.4}, ATE-S {:.4}, scale {:.4}", m.w_mpjpe, m.ate_s, m.scale))
}

fn percentile(v: &mut [f64], q: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

fn occlusion(prior: &GmmPrior) -> Result<Outcome> {
    let body = BodyModel::default();
    let noise = NoiseConfig { occlusion: OcclusionConfig { middle_fraction: Some(0.3), ..OcclusionConfig::none() }, ..NoiseConfig::default() };
    let sc = ScenarioConfig { name: "occluded".into(), seed: 9, s_true: 2.0, noise, ..ScenarioConfig::default() };
    let world = build_world(&sc, &body)?;
    let cfg = PipelineConfig { obs_noise: obs_noise_for(&sc.noise), ..PipelineConfig::default() };
    let r = run_pipeline(&world.obs, &body, prior, &cfg)?;
    let vars = &r.windows[0].vars;
    let problem = |usage| WindowProblem::new(world.obs.clone(), &body, prior, cfg.plan.mask_threshold, &cfg.obs_noise, cfg.sds.clone(), usage, cfg.ablation, cfg.weights.clone());
    let coin = problem(PriorUsage::Coin)?;
    let vanilla = problem(PriorUsage::VanillaSds)?;

    let h = &vars.motion;
    let layout = h.layout;
    let fd = layout.frame_dim();
    let is_pose = |k: usize| matches!(layout.channel_kind(k % fd), ChannelKind::Pose { .. });
    let hidden: Vec<usize> = (0..layout.dim()).filter(|&k| is_pose(k) && !coin.mask.mask[k]).collect();
    let hidden_frames: Vec<usize> = (0..layout.frames).filter(|&i| (0..fd).any(|c| is_pose(c) && !coin.mask.mask[i * fd + c])).collect();

    // 3σ envelope of the prior conditioned on the visible channels of the estimate
    let frame = CanonicalFrame::of(h);
    let x = coin.to_latent(&frame, h);
    let conditioned = coin.conditioned(&x)?;
    let (mean, var) = (conditioned.mean(), conditioned.marginal_variance());
    let outside = hidden.iter().filter(|&&k| (x[k] - mean[k]).abs() > 3.0 * var[k].sqrt()).count();

    // second differences of the pose channels, hidden frames vs fully visible ones
    let second = |i: usize, c: usize| (h.data[(i + 1) * fd + c] - 2.0 * h.data[i * fd + c] + h.data[(i - 1) * fd + c]).abs();
    let pose_channels: Vec<usize> = (0..fd).filter(|&c| is_pose(c)).collect();
    let interior = 1..layout.frames - 1;
    let hidden_max = hidden_frames.iter().filter(|i| interior.contains(i)).flat_map(|&i| pose_channels.iter().map(move |&c| second(i, c))).fold(0.0, f64::max);
    let mut visible: Vec<f64> = interior.clone().filter(|i| !hidden_frames.contains(i)).flat_map(|i| pose_channels.iter().map(move |&c| second(i, c))).collect();
    let p95 = percentile(&mut visible, 0.95);

    // spread of the pseudo ground truth over fresh draws at the final estimate
    let spread = |p: &WindowProblem<'_>| -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let draws = (0..100)
            .map(|_| {
                let t = p.sds.sample_t(&mut rng, 0.0);
                let eps = normal(&mut rng, h.data.len());
                Ok(p.to_latent(&frame, &p.pseudo_gt(vars, t, &eps)?))
            })
            .collect::<Result<Vec<DVector<f64>>>>()?;
        let m = draws.iter().fold(DVector::zeros(draws[0].len()), |a, d| a + d) / draws.len() as f64;
        Ok(draws.iter().map(|d| (d - &m).norm_squared()).sum::<f64>() / (draws.len() - 1) as f64)
    };
    let (vc, vv) = (spread(&coin)?, spread(&vanilla)?);

    let pass = !hidden.is_empty() && outside == 0 && hidden_max <= 3.0 * p95 && vv > vc;
    outcome(
        pass,
        format!(
            "{outside}/{} hidden channels outside 3σ; max hidden second difference {hidden_max:.2e} vs 3×p95 {:.2e}; pseudo-GT variance vanilla {vv:.3} coin {vc:.3}",
            hidden.len(),
            3.0 * p95
        ),
    )
}

type Seq = Vec<Vec<Vector3<f64>>>;

fn rand_vec(rng: &mut ChaCha8Rng, s: f64) -> Vector3<f64> {
    Vector3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s))
}

fn rigid(rng: &mut ChaCha8Rng) -> (Matrix3<f64>, Vector3<f64>) {
    (exp_so3(&rand_vec(rng, 3.0)), rand_vec(rng, 5.0))
}

fn metric_contracts() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut failures = Vec::new();
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + b.abs());
    for case in 0..100 {
        // lengths that leave a one-frame trailing chunk are rejected by contract
        let frames = loop {
            let f = rng.random_range(10..=250);
            if f % DEFAULT_CHUNK != 1 {
                break f;
            }
        };
        let joints = rng.random_range(3..=8);
        let mut root = Vector3::zeros();
        let gt: Seq = (0..frames)
            .map(|_| {
                root += rand_vec(&mut rng, 0.1);
                (0..joints).map(|_| root + rand_vec(&mut rng, 0.5)).collect()
            })
            .collect();
        let pred: Seq = gt.iter().map(|f| f.iter().map(|p| p + rand_vec(&mut rng, 0.05)).collect()).collect();
        let chunk = DEFAULT_CHUNK;
        let (w, wa, pa) = (w_mpjpe(&pred, &gt, chunk)?, wa_mpjpe(&pred, &gt, chunk)?, pa_mpjpe(&pred, &gt)?);
        let acc = accel_error(&pred, &gt, 1.0 / 30.0)?;
        let zeros = [w_mpjpe(&gt, &gt, chunk)?, wa_mpjpe(&gt, &gt, chunk)?, pa_mpjpe(&gt, &gt)?, accel_error(&gt, &gt, 1.0 / 30.0)?];
        if zeros.iter().any(|z| z.abs() > 1e-9) || [w, wa, pa, acc].iter().any(|v| *v < 0.0) {
            failures.push(format!("case {case}: zero/non-negativity"));
        }

        let (r, t) = rigid(&mut rng);
        let tf = |s: &Seq| -> Seq { s.iter().map(|f| f.iter().map(|p| r * p + t).collect()).collect() };
        if !close(w_mpjpe(&tf(&pred), &tf(&gt), chunk)?, w) {
            failures.push(format!("case {case}: W-MPJPE joint rigid invariance"));
        }
        let per_frame: Seq = pred
            .iter()
            .map(|f| {
                let (r, t) = rigid(&mut rng);
                let s = rng.random_range(0.5..2.0);
                f.iter().map(|p| r * p * s + t).collect()
            })
            .collect();
        if !close(pa_mpjpe(&per_frame, &gt)?, pa) {
            failures.push(format!("case {case}: PA-MPJPE similarity invariance"));
        }
        if wa > w + 1e-12 {
            failures.push(format!("case {case}: WA > W"));
        }

        let cam_gt: Vec<Vector3<f64>> = gt.iter().map(|f| f[0] + Vector3::new(0.0, -3.0, 1.5)).collect();
        let cam_pred: Vec<Vector3<f64>> = cam_gt.iter().map(|p| r * p + t + rand_vec(&mut rng, 0.02)).collect();
        let (a, a_s) = (ate(&cam_pred, &cam_gt, true)?, ate(&cam_pred, &cam_gt, false)?);
        let doubled: Vec<Vector3<f64>> = cam_pred.iter().map(|p| p * 2.0).collect();
        if a > a_s + 1e-12 {
            failures.push(format!("case {case}: ATE > ATE-S"));
        }
        if !close(ate(&doubled, &cam_gt, true)?, a) {
            failures.push(format!("case {case}: ATE scale invariance"));
        }
        if !(ate(&doubled, &cam_gt, false)? > a_s) {
            failures.push(format!("case {case}: ATE-S did not increase under scaling"));
        }
    }
    let detail = if failures.is_empty() { "100 randomized cases".to_string() } else { failures[..failures.len().min(3)].join("; ") };
    outcome(failures.is_empty(), detail)
}

fn ablate_args(dir: &Path, prior: &Path, name: &str) -> AblateArgs {
    AblateArgs {
        scenarios: 10,
        scenario_seed: 11,
        seeds: vec![0],
        prior: Some(prior.into()),
        steps: None,
        frames: None,
        out: dir.join(format!("{name}.csv")),
        runs: Some(dir.join(format!("{name}-runs.csv"))),
    }
}

fn report(id: usize, name: &str, start: Instant, r: Result<Outcome>, failed: &mut usize) {
    let secs = start.elapsed().as_secs_f64();
    match r {
        Ok(o) => {
            *failed += usize::from(!o.pass);
            println!("{} {id:>2} {name}: {} [{secs:.1}s]", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        }
        Err(e) => {
            *failed += 1;
            println!("FAIL {id:>2} {name}: error: {e} [{secs:.1}s]");
        }
    }
}

fn main() {
    let strict = std::env::var("COIN_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut failed = 0;
    let mut run = |id: usize, name: &str, f: &mut dyn FnMut() -> Result<Outcome>| {
        let start = Instant::now();
        let r = f();
        report(id, name, start, r, &mut failed);
    };

    run(1, "denoiser exactness", &mut denoiser_exactness);
    run(2, "SDS algebra", &mut sds_algebra);
    run(3, "controlled denoising reductions", &mut reductions);
    run(4, "soft-mask schedule", &mut soft_mask_schedule);

    let body = BodyModel::default();
    let prior = train_prior(&TrainingConfig::default(), &body).expect("default prior").0;
    let dir = tempfile::TempDir::new().expect("temp dir");
    let prior_path = dir.path().join("prior.bin");
    save_prior(&prior, &prior_path).expect("save prior");

    let start = Instant::now();
    let first = cmd_ablate(&ablate_args(dir.path(), &prior_path, "first"));
    let ablate_secs = start.elapsed().as_secs_f64();
    println!("ablation matrix: {ablate_secs:.1}s");
    let from_table = |f: fn(&AblationTable) -> Result<Outcome>| -> Result<Outcome> {
        match &first {
            Ok(t) => f(t),
            Err(e) => Err(coin_core::CoinError::Config(format!("ablation failed: {e}"))),
        }
    };
    run(5, "scale recovery via HSR", &mut || from_table(scale_recovery));
    run(6, "ablation ordering", &mut || from_table(ablation_ordering));
    run(7, "noiseless end-to-end", &mut || noiseless(&prior));
    run(8, "inpainting under occlusion", &mut || occlusion(&prior));
    run(9, "metric contracts", &mut metric_contracts);
    run(10, "determinism", &mut || {
        cmd_ablate(&ablate_args(dir.path(), &prior_path, "second"))?;
        let a = std::fs::read(dir.path().join("first.csv"))?;
        let b = std::fs::read(dir.path().join("second.csv"))?;
        let ra = std::fs::read(dir.path().join("first-runs.csv"))?;
        let rb = std::fs::read(dir.path().join("second-runs.csv"))?;
        outcome(a == b && ra == rb, format!("summary {} bytes, per-run {} bytes, identical {}", a.len(), ra.len(), a == b && ra == rb))
    });

    println!("acceptance: {} of 10 criteria failed", failed);
    if strict && failed > 0 {
        std::process::exit(1);
    }
}
