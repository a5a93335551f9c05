use std::sync::{Arc, OnceLock};

use coin_core::baselines::*;
use coin_core::motion::{BodyModel, CanonicalFrame};
use coin_core::objectives::LossWeights;
use coin_core::optimizer::*;
use coin_core::prior::{ddim_sample, GmmComponent, GmmPrior, LowRankCov, ObsNoise, DEFAULT_COV_FLOOR};
use coin_core::scenario::{obs_noise_for, train_prior, TrainingConfig};
use coin_core::schedule::DiffusionSchedule;
use coin_core::sds::SdsConfig;
use coin_core::world::{build_world, NoiseConfig, ScenarioConfig, World};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn random_prior(rng: &mut ChaCha8Rng, k: usize, dim: usize) -> GmmPrior {
    let comps = (0..k)
        .map(|_| {
            let mean = DVector::from_fn(dim, |_, _| rng.random_range(-2.0..2.0));
            let diag = DVector::from_fn(dim, |_, _| rng.random_range(0.05..0.5));
            let f = DMatrix::from_fn(dim, 2, |_, _| rng.random_range(-0.7..0.7));
            GmmComponent { weight: 1.0 / k as f64, mean, cov: Arc::new(LowRankCov::new(diag, f).unwrap()) }
        })
        .collect();
    GmmPrior::new(comps, DiffusionSchedule::default(), DEFAULT_COV_FLOOR).unwrap()
}

fn normal(rng: &mut ChaCha8Rng, dim: usize) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn body() -> &'static BodyModel {
    static B: OnceLock<BodyModel> = OnceLock::new();
    B.get_or_init(BodyModel::default)
}

fn motion_prior() -> &'static GmmPrior {
    static P: OnceLock<GmmPrior> = OnceLock::new();
    P.get_or_init(|| train_prior(&TrainingConfig { windows: 120, frames: 32, ..TrainingConfig::default() }, body()).unwrap().0)
}

fn world(frames: usize, noise: NoiseConfig) -> World {
    build_world(&ScenarioConfig { frames, s_true: 2.0, seed: 4, noise, ..ScenarioConfig::default() }, body()).unwrap()
}

fn problem(w: &World, usage: PriorUsage, noise: &ObsNoise, weights: LossWeights) -> WindowProblem<'static> {
    WindowProblem::new(w.obs.clone(), body(), motion_prior(), 0.3, noise, SdsConfig::default(), usage, Ablation::default(), weights).unwrap()
}

#[test]
fn decode_matches_ddim_sampler() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = random_prior(&mut rng, 3, 6);
    let z = normal(&mut rng, 6);
    let (x, chain) = ddim_decode(&p, &z, 10).unwrap();
    assert_eq!(chain.len(), 10);
    assert_eq!(x, ddim_sample(&p, &z, 1.0, 10).unwrap());
}

#[test]
fn unit_gaussian_decode_is_linear_and_invertible_by_optimization() {
    let dim = 5;
    let p = GmmPrior::unit_gaussian(dim).unwrap();
    let steps = 10;
    // E[H0 | x] = a x for a unit Gaussian, so each DDIM step multiplies by a a' + b b'
    let mut c = 1.0;
    for n in 0..steps {
        let t = 1.0 - n as f64 / steps as f64;
        let t_next = if n + 1 == steps { 0.0 } else { t - 1.0 / steps as f64 };
        let (a, b) = p.schedule.coefficients(t).unwrap();
        let (an, bn) = p.schedule.coefficients(t_next).unwrap();
        c *= a * an + b * bn;
    }
    let target = DVector::from_vec(vec![0.3, -1.2, 0.8, 0.05, -0.4]);
    let (x, _) = ddim_decode(&p, &target, steps).unwrap();
    assert!((x - &target * c).norm() < 1e-12);

    let mut z = DVector::zeros(dim);
    for _ in 0..200 {
        let (x, chain) = ddim_decode(&p, &z, steps).unwrap();
        let g = ddim_decode_vjp(&p, &chain, &((&x - &target) * 2.0)).unwrap();
        z -= g * (0.5 / (c * c));
    }
    let (x, _) = ddim_decode(&p, &z, steps).unwrap();
    assert!((x - &target).amax() < 1e-4);
    assert!((z - &target / c).amax() < 1e-4);
}

#[test]
fn chain_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..5 {
        let p = random_prior(&mut rng, 3, 6);
        let z = normal(&mut rng, 6);
        let v = normal(&mut rng, 6);
        let (_, chain) = ddim_decode(&p, &z, 10).unwrap();
        let analytic = ddim_decode_vjp(&p, &chain, &v).unwrap();
        let numeric = ddim_decode_vjp_fd(&p, &z, 10, &v, 1e-6).unwrap();
        let rel = (&analytic - &numeric).norm() / numeric.norm().max(1e-12);
        assert!(rel < 1e-3, "relative error {rel}");
    }
}

/// Wilson–Hilferty approximation of the chi-square quantile.
fn chi2_quantile(k: f64, z: f64) -> f64 {
    let h = 2.0 / (9.0 * k);
    k * (1.0 - h + z * h.sqrt()).powi(3)
}

#[test]
fn decoded_noise_lies_in_high_density_region() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dim = 8;
    let p = random_prior(&mut rng, 3, dim);
    let bound = chi2_quantile(dim as f64, 3.0902);
    for _ in 0..200 {
        let z = normal(&mut rng, dim).map(|v| v.clamp(-3.0, 3.0));
        let (x, _) = ddim_decode(&p, &z, 10).unwrap();
        let nearest = p.mahalanobis(&x).unwrap().into_iter().fold(f64::INFINITY, f64::min);
        assert!(nearest <= bound, "{nearest} > {bound}");
    }
}

#[test]
fn zero_guidance_is_plain_ddim() {
    let w = world(24, NoiseConfig::default());
    let p = problem(&w, PriorUsage::Off, &ObsNoise::default(), LossWeights::default());
    let init = initialize(&p, InitMethod::ExactDraw, 1).unwrap();
    let frame = CanonicalFrame::of(&init.motion);
    let z = normal(&mut ChaCha8Rng::seed_from_u64(5), p.prior.dim());
    let bcfg = BaselineConfig { guidance: 0.0, guided_steps: 25, ..BaselineConfig::default() };
    let (x, vars, _) = guided_sample(&p, &frame, &init, &z, &bcfg, &PipelineConfig::default(), 0).unwrap();
    assert_eq!(x, ddim_sample(&p.prior, &z, 1.0, 25).unwrap());
    assert_eq!(vars.rig, init.rig);
}

#[test]
fn guidance_step_descends_the_2d_loss() {
    let w = world(24, NoiseConfig::default());
    let weights = LossWeights { l_contact: 0.0, ..LossWeights::default() };
    let p = problem(&w, PriorUsage::Off, &ObsNoise::default(), weights);
    let init = initialize(&p, InitMethod::ExactDraw, 1).unwrap();
    let frame = CanonicalFrame::of(&init.motion);
    let x = p.to_latent(&frame, &init.motion);
    let (g, _) = guidance_gradient(&p, &frame, &x, &init.motion, &init).unwrap();
    let step = &g * -0.1;
    assert!(step.dot(&g) <= 0.0);
    // the latent gradient matches a finite difference of the 2D loss through the restore map
    let f = |x: &DVector<f64>| {
        let h = p.from_latent(&frame, x, &init.motion).unwrap();
        coin_core::objectives::loss_2d(&h, &init.rig, &init.beta, body(), &p.obs.kp2d).unwrap().0
    };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10 {
        let k = rng.random_range(0..x.len());
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[k] += 1e-6;
        xm[k] -= 1e-6;
        let n = (f(&xp) - f(&xm)) / 2e-6;
        assert!((n - g[k]).abs() <= 1e-4 * (1.0 + n.abs()), "channel {k}: {} vs {n}", g[k]);
    }
}

#[test]
fn vanilla_targets_vary_more_than_controlled_ones() {
    let w = world(24, NoiseConfig::zero());
    let noise = obs_noise_for(&NoiseConfig::zero());
    let coin = problem(&w, PriorUsage::Coin, &noise, LossWeights::default());
    let vanilla = problem(&w, PriorUsage::VanillaSds, &noise, LossWeights::default());
    assert!(coin.mask.mask.iter().all(|&m| m));
    let mut vars = initialize(&coin, InitMethod::ExactDraw, 2).unwrap();
    vars.motion = w.motion.clone();
    let spread = |p: &WindowProblem<'_>| {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let frame = CanonicalFrame::of(&vars.motion);
        let draws: Vec<DVector<f64>> = (0..100)
            .map(|_| {
                let t = p.sds.sample_t(&mut rng, 0.0);
                let eps = normal(&mut rng, vars.motion.data.len());
                p.to_latent(&frame, &p.pseudo_gt(&vars, t, &eps).unwrap())
            })
            .collect();
        let mean = draws.iter().fold(DVector::zeros(draws[0].len()), |a, d| a + d) / draws.len() as f64;
        draws.iter().map(|d| (d - &mean).norm_squared()).sum::<f64>() / (draws.len() - 1) as f64
    };
    let (vc, vv) = (spread(&coin), spread(&vanilla));
    assert!(vv > vc, "vanilla {vv} coin {vc}");
}

#[test]
fn noise_optimization_runs_and_is_deterministic() {
    let w = world(24, NoiseConfig::default());
    let mut cfg = PipelineConfig::default();
    for s in &mut cfg.stages {
        s.steps = 5;
    }
    let bcfg = BaselineConfig::default();
    let a = run_noise_optimization(&w.obs, body(), motion_prior(), &cfg, &bcfg).unwrap();
    let b = run_noise_optimization(&w.obs, body(), motion_prior(), &cfg, &bcfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.trace.len(), 15);
}

#[test]
fn methods_map_to_baselines() {
    assert_eq!(Method::NoiseOpt.baseline(), Some(BaselineKind::NoiseOptimization));
    assert_eq!(Method::Coin.baseline(), None);
    assert!(BaselineConfig { decode_steps: 0, ..BaselineConfig::default() }.validate().is_err());
    assert!(BaselineConfig { guidance: -1.0, ..BaselineConfig::default() }.validate().is_err());
}

#[test]
fn init_only_returns_initialization() {
    let w = world(24, NoiseConfig::default());
    let cfg = PipelineConfig::default();
    let r = run_init_only(&w.obs, body(), motion_prior(), &cfg).unwrap();
    let p =
        WindowProblem::new(w.obs.clone(), body(), motion_prior(), cfg.plan.mask_threshold, &cfg.obs_noise, cfg.sds.clone(), cfg.usage, cfg.ablation, cfg.weights.clone()).unwrap();
    let seed = cfg.seed ^ 0x9E37_79B9_7F4A_7C15;
    assert_eq!(r.windows[0].vars, initialize(&p, cfg.init, seed).unwrap());
}
