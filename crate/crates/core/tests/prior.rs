mod io {
    use coin_core::prior::*;
    use coin_core::schedule::DiffusionSchedule;
    use coin_core::CoinError;
    use nalgebra::DMatrix;
    use nalgebra::DVector;
    use std::sync::Arc;

    fn sample_prior() -> GmmPrior {
        let a = GmmComponent {
            weight: 0.3,
            mean: DVector::from_vec(vec![0.1, -0.7, 1.0 / 3.0]),
            cov: Arc::new(LowRankCov::new(DVector::from_vec(vec![0.2, 0.3, 0.4]), DMatrix::from_vec(3, 1, vec![0.5, 0.1, -0.2])).unwrap()),
        };
        let b = GmmComponent { weight: 0.7, mean: DVector::from_vec(vec![2.0, 1e-17, -4.5]), cov: Arc::new(LowRankCov::diagonal(DVector::from_vec(vec![1.0, 2.0, 3.0])).unwrap()) };
        GmmPrior::new(vec![a, b], DiffusionSchedule::default(), 1e-6).unwrap()
    }

    #[test]
    fn binary_roundtrip_is_bit_exact() {
        let p = sample_prior();
        let mut buf = Vec::new();
        write_prior_binary(&p, &mut buf).unwrap();
        let q = read_prior_binary(buf.as_slice()).unwrap();
        let mut again = Vec::new();
        write_prior_binary(&q, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn json_roundtrip() {
        let p = sample_prior();
        let mut buf = Vec::new();
        write_prior_json(&p, &mut buf).unwrap();
        let q = read_prior_json(buf.as_slice()).unwrap();
        for (a, b) in p.components.iter().zip(&q.components) {
            assert_eq!(a.mean, b.mean);
            assert_eq!(a.cov.dense(), b.cov.dense());
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(read_prior_binary(&b"NOTAPRIOR"[..]), Err(CoinError::Format(_))));
        let mut buf = Vec::new();
        write_prior_binary(&sample_prior(), &mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_prior_binary(buf.as_slice()), Err(CoinError::Format(_))));
    }
}

mod fit {
    use coin_core::prior::*;
    use coin_core::CoinError;
    use nalgebra::DMatrix;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn sample_cloud(rng: &mut ChaCha8Rng, n: usize, center: &[f64]) -> Vec<DVector<f64>> {
        (0..n).map(|_| DVector::from_fn(center.len(), |i, _| center[i] + 0.3 * rng.sample::<f64, _>(StandardNormal))).collect()
    }

    #[test]
    fn single_component_is_sample_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data: Vec<DVector<f64>> = (0..200)
            .map(|_| {
                let z: Vec<f64> = (0..3).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                DVector::from_vec(vec![z[0], 0.5 * z[0] + z[1], z[2] - 0.2 * z[1]])
            })
            .collect();
        let cfg = FitConfig { components: 1, rank: None, ..FitConfig::default() };
        let (prior, _) = fit_gmm(&data, &cfg).unwrap();
        let n = data.len() as f64;
        let mean = data.iter().fold(DVector::zeros(3), |a, x| a + x) / n;
        let cov = data.iter().fold(DMatrix::zeros(3, 3), |a, x| a + (x - &mean) * (x - &mean).transpose()) / n;
        assert!((&prior.components[0].mean - mean).amax() < 1e-9);
        assert!((prior.components[0].cov.dense() - cov).amax() < 1e-9);
    }

    #[test]
    fn full_rank_gram_path_matches_dense_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let data = sample_cloud(&mut rng, 20, &[0.0; 4]);
        let full = fit_gmm(&data, &FitConfig { components: 1, rank: None, ..FitConfig::default() }).unwrap().0;
        let gram = fit_gmm(&data, &FitConfig { components: 1, rank: Some(4), ..FitConfig::default() }).unwrap().0;
        assert!((full.components[0].cov.dense() - gram.components[0].cov.dense()).amax() < 1e-9);
    }

    #[test]
    fn recovers_separated_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut data = sample_cloud(&mut rng, 150, &[5.0, 5.0, 0.0]);
        data.extend(sample_cloud(&mut rng, 150, &[-5.0, 0.0, 3.0]));
        let (prior, report) = fit_gmm(&data, &FitConfig { components: 2, rank: None, ..FitConfig::default() }).unwrap();
        for w in report.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * w[0].abs());
        }
        let mut found = [false; 2];
        for c in &prior.components {
            if (&c.mean - DVector::from_vec(vec![5.0, 5.0, 0.0])).norm() < 0.3 {
                found[0] = true;
            }
            if (&c.mean - DVector::from_vec(vec![-5.0, 0.0, 3.0])).norm() < 0.3 {
                found[1] = true;
            }
        }
        assert!(found[0] && found[1]);
    }

    #[test]
    fn rejects_bad_datasets() {
        assert!(matches!(fit_gmm(&[], &FitConfig::default()), Err(CoinError::Domain(_))));
        let data = vec![DVector::zeros(2); 5];
        assert!(fit_gmm(&data, &FitConfig { components: 1, ..FitConfig::default() }).is_err());
    }
}

mod density {
    use coin_core::prior::*;
    use coin_core::schedule::DiffusionSchedule;
    use coin_core::CoinError;
    use nalgebra::DVector;

    #[test]
    fn ddim_to_zero_returns_h0() {
        let s = DiffusionSchedule::default();
        let out = DenoiserOutput { h0_hat: DVector::from_vec(vec![1.0, -2.0]), eps_hat: DVector::from_vec(vec![0.3, 0.1]) };
        assert_eq!(ddim_step(&s, &out, 0.5, 0.0).unwrap(), out.h0_hat);
        assert!(matches!(ddim_step(&s, &out, 0.5, 0.5), Err(CoinError::Ordering { .. })));
    }

    #[test]
    fn unit_gaussian_denoise_closed_form() {
        let p = GmmPrior::unit_gaussian(3).unwrap();
        let x = DVector::from_vec(vec![0.5, -1.0, 2.0]);
        let t = 0.4;
        let (a, b) = p.schedule.coefficients(t).unwrap();
        let out = p.denoise(&x, t).unwrap();
        assert!((&out.h0_hat - &x * a).amax() < 1e-12);
        assert!((&out.eps_hat - &x * b).amax() < 1e-12);
    }

    #[test]
    fn t_zero_is_identity() {
        let p = GmmPrior::unit_gaussian(2).unwrap();
        let x = DVector::from_vec(vec![3.0, 4.0]);
        let out = p.denoise(&x, 0.0).unwrap();
        assert_eq!(out.h0_hat, x);
        assert_eq!(out.eps_hat, DVector::zeros(2));
    }
}

mod gmm {
    use coin_core::prior::*;
    use coin_core::schedule::DiffusionSchedule;
    use nalgebra::Cholesky;
    use nalgebra::DMatrix;
    use nalgebra::DVector;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn random_prior(rng: &mut ChaCha8Rng, k: usize, dim: usize, rank: usize) -> GmmPrior {
        let mut comps = Vec::new();
        for _ in 0..k {
            let mean = DVector::from_fn(dim, |_, _| rng.random_range(-2.0..2.0));
            let diag = DVector::from_fn(dim, |_, _| rng.random_range(0.05..0.5));
            let f = DMatrix::from_fn(dim, rank, |_, _| rng.random_range(-0.7..0.7));
            comps.push(GmmComponent { weight: 1.0 / k as f64, mean, cov: Arc::new(LowRankCov::new(diag, f).unwrap()) });
        }
        GmmPrior::new(comps, DiffusionSchedule::default(), DEFAULT_COV_FLOOR).unwrap()
    }

    /// Dense reference posterior mean.
    fn dense_posterior_mean(p: &GmmPrior, x: &DVector<f64>, a: f64, b: f64) -> DVector<f64> {
        let dim = p.dim();
        let mut logs = Vec::new();
        let mut means = Vec::new();
        for c in &p.components {
            let s = c.cov.dense();
            let acov = &s * (a * a) + DMatrix::identity(dim, dim) * (b * b);
            let ch = Cholesky::new(acov.clone()).unwrap();
            let r = x - &c.mean * a;
            let y = ch.solve(&r);
            let logdet = 2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            logs.push(c.weight.ln() - 0.5 * (r.dot(&y) + logdet));
            means.push(&c.mean + &s * &y * a);
        }
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z = top + logs.iter().map(|l| (l - top).exp()).sum::<f64>().ln();
        let mut out = DVector::zeros(dim);
        for (l, m) in logs.iter().zip(&means) {
            out += m * (l - z).exp();
        }
        out
    }

    #[test]
    fn woodbury_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_prior(&mut rng, 3, 7, 2);
        let x = DVector::from_fn(7, |_, _| rng.random_range(-1.0..1.0));
        let post = p.posterior(&x, 0.6, 0.8).unwrap();
        let reference = dense_posterior_mean(&p, &x, 0.6, 0.8);
        assert!((post.h0 - reference).amax() < 1e-10);
    }

    #[test]
    fn from_dense_reconstructs() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.1, 0.5, 1.0, 0.2, 0.1, 0.2, 0.5]);
        let (c, clipped) = LowRankCov::from_dense(&m, 1e-6).unwrap();
        assert_eq!(clipped, 0);
        assert!((c.dense() - m).amax() < 1e-12);
    }

    #[test]
    fn conditioning_matches_dense_gaussian_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_prior(&mut rng, 1, 6, 2);
        let mask = vec![true, false, true, false, false, true];
        let sigma = DVector::from_element(6, 0.3);
        let values = DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
        let cond = p.condition(&ControlSignal { values: values.clone(), mask: mask.clone(), obs_noise_sigma: sigma.clone() }).unwrap();
        let s = p.components[0].cov.dense();
        let obs = [0usize, 2, 5];
        let s_oo = DMatrix::from_fn(3, 3, |i, j| s[(obs[i], obs[j])] + if i == j { 0.09 } else { 0.0 });
        let s_ao = DMatrix::from_fn(6, 3, |i, j| s[(i, obs[j])]);
        let inv = s_oo.try_inverse().unwrap();
        let r = DVector::from_fn(3, |i, _| values[obs[i]] - p.components[0].mean[obs[i]]);
        let mean = &p.components[0].mean + &s_ao * &inv * r;
        let cov = &s - &s_ao * &inv * s_ao.transpose();
        assert!((&cond.components[0].mean - mean).amax() < 1e-10);
        assert!((cond.components[0].cov.dense() - cov).amax() < 1e-10);
    }

    #[test]
    fn empty_mask_returns_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_prior(&mut rng, 2, 4, 1);
        let ctrl = ControlSignal { values: DVector::zeros(4), mask: vec![false; 4], obs_noise_sigma: DVector::from_element(4, 0.1) };
        let c = p.condition(&ctrl).unwrap();
        assert_eq!(c.weights(), p.weights());
        for (a, b) in c.components.iter().zip(&p.components) {
            assert_eq!(a.mean, b.mean);
            assert_eq!(a.cov.dense(), b.cov.dense());
        }
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_prior(&mut rng, 3, 5, 2);
        let x = DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
        let v = DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
        let (a, b) = (0.7, (1.0f64 - 0.49).sqrt());
        let post = p.posterior(&x, a, b).unwrap();
        let g = p.posterior_vjp(&post, &v).unwrap();
        let h = 1e-6;
        for i in 0..5 {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fd = (p.posterior(&xp, a, b).unwrap().h0.dot(&v) - p.posterior(&xm, a, b).unwrap().h0.dot(&v)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6 * (1.0 + fd.abs()), "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn shared_and_distinct_diagonals_match_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dim = 60;
        for distinct in [3, dim] {
            let diag = DVector::from_fn(dim, |i, _| 0.1 + (i % distinct) as f64 * 1e-2);
            let f = DMatrix::from_fn(dim, 3, |_, _| rng.random_range(-0.5..0.5));
            let mean = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
            let comp = GmmComponent { weight: 1.0, mean, cov: Arc::new(LowRankCov::new(diag, f).unwrap()) };
            let p = GmmPrior::new(vec![comp], DiffusionSchedule::default(), DEFAULT_COV_FLOOR).unwrap();
            let x = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
            let post = p.posterior(&x, 0.5, 0.866).unwrap();
            assert!((post.h0 - dense_posterior_mean(&p, &x, 0.5, 0.866)).amax() < 1e-10);
        }
    }
}
