use grasplab::approximator::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn random_vec(n: usize, scale: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn small_policy(obs: usize, hidden: &[usize], act: usize, rng: &mut impl Rng) -> GaussianPolicy {
    let mut mean = Mlp::zeros(MlpSpec::new(obs, hidden, act));
    mean.params = random_vec(mean.num_params(), 0.5, rng);
    GaussianPolicy { mean, log_std: random_vec(act, 0.3, rng) }
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = a.iter().chain(b).map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    diff / scale
}

/// Independent diagonal-Gaussian log density.
fn gaussian_logpdf(x: &[f64], mean: &[f64], std: &[f64]) -> f64 {
    x.iter()
        .zip(mean)
        .zip(std)
        .map(|((x, m), s)| {
            let z = (x - m) / s;
            -0.5 * z * z - s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
        })
        .sum()
}

#[test]
fn zero_network_outputs_zero() {
    let m = Mlp::zeros(MlpSpec::standard(5, 3));
    assert_eq!(m.forward(&[1.0, -2.0, 3.0, 0.5, 9.0]).unwrap(), vec![0.0; 3]);
}

#[test]
fn standard_spec_has_three_hidden_layers_of_64() {
    let s = MlpSpec::standard(20, 4);
    assert_eq!(s.hidden, vec![64, 64, 64]);
    assert_eq!(s.num_params(), 20 * 64 + 64 + 2 * (64 * 64 + 64) + 64 * 4 + 4);
}

#[test]
fn toy_network_matches_hand_computation() {
    // 1-1-1-1: y = w3·tanh(w2·tanh(w1·x + b1) + b2) + b3
    let mut m = Mlp::zeros(MlpSpec::new(1, &[1, 1], 1));
    let (w1, b1, w2, b2, w3, b3) = (0.7, -0.2, -1.3, 0.4, 2.1, 0.05);
    m.params = vec![w1, b1, w2, b2, w3, b3];
    let x = 0.9;
    let expect = w3 * (w2 * (w1 * x + b1).tanh() + b2).tanh() + b3;
    assert!((m.forward(&[x]).unwrap()[0] - expect).abs() < 1e-12);
}

#[test]
fn forward_rejects_wrong_dimension() {
    let m = Mlp::zeros(MlpSpec::standard(3, 1));
    assert!(matches!(m.forward(&[1.0, 2.0]), Err(ApproxError::Dimension { expected: 3, got: 2 })));
}

#[test]
fn score_at_the_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = small_policy(3, &[5, 4], 4, &mut rng);
    let obs = [0.3, -0.1, 0.8];
    let a = p.mean_action(&obs).unwrap();
    let g = p.grad_log_prob(&obs, &a).unwrap();
    let n = p.mean.num_params();
    assert!(g[..n].iter().all(|v| v.abs() < 1e-12));
    for v in &g[n..] {
        assert!((v + 1.0).abs() < 1e-12);
    }
}

/// Central differences of `f` at `x`.
fn fd_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let x0 = xp[i];
            xp[i] = x0 + h;
            let fp = f(&xp);
            xp[i] = x0 - h;
            let fm = f(&xp);
            xp[i] = x0;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

#[test]
fn grad_log_prob_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let obs_dim = rng.random_range(1..5);
        let act_dim = rng.random_range(1..4);
        let p = small_policy(obs_dim, &[rng.random_range(2..7), rng.random_range(2..7)], act_dim, &mut rng);
        let obs = random_vec(obs_dim, 1.0, &mut rng);
        let act = random_vec(act_dim, 1.0, &mut rng);
        let g = p.grad_log_prob(&obs, &act).unwrap();
        let fd = fd_grad(|th| p.unflatten(th).unwrap().log_prob(&obs, &act).unwrap(), &p.flatten(), 1e-6);
        assert!(rel_err(&g, &fd) < 1e-5, "rel {}", rel_err(&g, &fd));
    }
}

#[test]
fn mlp_backward_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let spec = MlpSpec::new(rng.random_range(1..5), &[rng.random_range(2..6); 3], rng.random_range(1..4));
        let mut m = Mlp::zeros(spec.clone());
        m.params = random_vec(m.num_params(), 0.6, &mut rng);
        let x = random_vec(spec.input_dim, 1.0, &mut rng);
        let w = random_vec(spec.output_dim, 1.0, &mut rng);
        let mut cache = MlpCache::default();
        m.forward_cached(&x, &mut cache).unwrap();
        let mut g = vec![0.0; m.num_params()];
        m.backward(&cache, &w, &mut g);
        let f = |th: &[f64]| {
            let mm = Mlp { spec: spec.clone(), params: th.to_vec() };
            mm.forward(&x).unwrap().iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
        };
        let fd = fd_grad(f, &m.params, 1e-6);
        assert!(rel_err(&g, &fd) < 1e-5);
        // Forward-mode along a random direction agrees with the reverse-mode gradient.
        let v = random_vec(m.num_params(), 1.0, &mut rng);
        let jv: f64 = m.jvp(&cache, &v).iter().zip(&w).map(|(a, b)| a * b).sum();
        let gv: f64 = g.iter().zip(&v).map(|(a, b)| a * b).sum();
        assert!((jv - gv).abs() < 1e-9 * (1.0 + gv.abs()));
    }
}

#[test]
fn log_prob_closed_forms() {
    let p = GaussianPolicy { mean: Mlp::zeros(MlpSpec::standard(2, 4)), log_std: vec![0.0; 4] };
    let lp = p.log_prob(&[0.5, 0.5], &[0.0; 4]).unwrap();
    assert!((lp + 2.0 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let p = small_policy(3, &[4, 4], 4, &mut rng);
        let obs = random_vec(3, 1.0, &mut rng);
        let act = random_vec(4, 1.0, &mut rng);
        let mean = p.mean_action(&obs).unwrap();
        let std: Vec<f64> = p.log_std.iter().map(|l| l.exp()).collect();
        let oracle = gaussian_logpdf(&act, &mean, &std);
        assert!((p.log_prob(&obs, &act).unwrap() - oracle).abs() < 1e-12);
        // Shifting log_std by c changes the density per the closed form.
        let c = 0.37;
        let mut q = p.clone();
        q.log_std.iter_mut().for_each(|l| *l += c);
        let std_q: Vec<f64> = std.iter().map(|s| s * c.exp()).collect();
        assert!((q.log_prob(&obs, &act).unwrap() - gaussian_logpdf(&act, &mean, &std_q)).abs() < 1e-12);
    }
}

#[test]
fn density_integrates_to_one_in_1d() {
    let mut mean = Mlp::zeros(MlpSpec::new(1, &[3], 1));
    mean.params[7] = 0.4; // output bias
    let p = GaussianPolicy { mean, log_std: vec![(-0.5f64).exp().ln()] };
    let (lo, hi, n) = (-10.0, 10.0, 200_000);
    let h = (hi - lo) / n as f64;
    let total: f64 = (0..n).map(|i| p.log_prob(&[0.0], &[lo + (i as f64 + 0.5) * h]).unwrap().exp() * h).sum();
    assert!((total - 1.0).abs() < 1e-3);
}

#[test]
fn sampling_moments_and_consistency() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = small_policy(3, &[4, 4], 4, &mut rng);
    let obs = [0.2, -0.4, 1.0];
    let mean = p.mean_action(&obs).unwrap();
    let n = 100_000;
    let mut sum = [0.0; 4];
    let mut sq = [0.0; 4];
    for _ in 0..n {
        let (a, lp) = p.sample(&obs, &mut rng).unwrap();
        assert!((lp - p.log_prob(&obs, &a).unwrap()).abs() < 1e-12);
        for i in 0..4 {
            sum[i] += a[i];
            sq[i] += (a[i] - mean[i]).powi(2);
        }
    }
    for i in 0..4 {
        let sd = p.log_std[i].exp();
        let se_mean = sd / (n as f64).sqrt();
        assert!((sum[i] / n as f64 - mean[i]).abs() < 3.0 * se_mean);
        // Standard error of the sample std is about sd / sqrt(2n).
        let emp_sd = (sq[i] / n as f64).sqrt();
        assert!((emp_sd - sd).abs() < 3.0 * sd / (2.0 * n as f64).sqrt());
    }
}

#[test]
fn degenerate_std_and_seeded_sampling() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut p = small_policy(2, &[3], 4, &mut rng);
    let obs = [0.1, 0.2];
    let a1 = p.sample(&obs, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let a2 = p.sample(&obs, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert_eq!(a1, a2);
    p.log_std = vec![-20.0; 4];
    let (a, _) = p.sample(&obs, &mut rng).unwrap();
    for (x, m) in a.iter().zip(p.mean_action(&obs).unwrap()) {
        assert!((x - m).abs() < 1e-8);
    }
}

#[test]
fn kl_closed_forms() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let p = small_policy(3, &[4, 4], 4, &mut rng);
    let batch: Vec<Vec<f64>> = (0..10).map(|_| random_vec(3, 1.0, &mut rng)).collect();
    assert_eq!(mean_kl(&p, &p, &batch).unwrap(), 0.0);
    assert!(mean_kl(&p, &p, &Vec::<Vec<f64>>::new()).is_err());

    // Unit std, output bias shifted by d: KL = |d|²/2 on every state.
    let mut a = GaussianPolicy { mean: Mlp::zeros(MlpSpec::new(3, &[4], 4)), log_std: vec![0.0; 4] };
    a.mean.params = random_vec(a.mean.num_params(), 0.5, &mut rng);
    let mut b = a.clone();
    let d = [0.3, -0.2, 0.1, 0.5];
    let nb = b.mean.num_params();
    for i in 0..4 {
        b.mean.params[nb - 4 + i] += d[i];
    }
    let expect = d.iter().map(|x| x * x).sum::<f64>() / 2.0;
    assert!((mean_kl(&a, &b, &batch).unwrap() - expect).abs() < 1e-12);
}

#[test]
fn kl_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..5 {
        let p = small_policy(3, &[4, 4], 4, &mut rng);
        let q = small_policy(3, &[4, 4], 4, &mut rng);
        let obs = random_vec(3, 1.0, &mut rng);
        let exact = mean_kl(&p, &q, &[obs.clone()]).unwrap();
        let n = 200_000;
        let mut est = 0.0;
        for _ in 0..n {
            let (a, lp) = p.sample(&obs, &mut rng).unwrap();
            est += lp - q.log_prob(&obs, &a).unwrap();
        }
        est /= n as f64;
        assert!((est - exact).abs() < 0.01 * exact, "mc {est} exact {exact}");
    }
}

#[test]
fn fisher_vector_product_matches_explicit_hessian() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let p = small_policy(3, &[6, 6], 2, &mut rng);
    let n = p.num_params();
    assert!(n <= 200);
    let batch: Vec<Vec<f64>> = (0..8).map(|_| random_vec(3, 1.0, &mut rng)).collect();
    let theta = p.flatten();
    let kl = |th: &[f64]| mean_kl(&p, &p.unflatten(th).unwrap(), &batch).unwrap();
    for _ in 0..3 {
        let v = random_vec(n, 1.0, &mut rng);
        let fvp = fisher_vector_product(&p, &batch, &v, 0.0).unwrap();
        // (Hv)_i = ∂²KL/∂θ_i∂v by mixed central differences.
        let (h, e) = (1e-4, 1e-4);
        let mut hv = vec![0.0; n];
        let mut x = theta.clone();
        for i in 0..n {
            let mut val = 0.0;
            for (si, sv, sign) in [(1.0, 1.0, 1.0), (-1.0, 1.0, -1.0), (1.0, -1.0, -1.0), (-1.0, -1.0, 1.0)] {
                for k in 0..n {
                    x[k] = theta[k] + sv * e * v[k];
                }
                x[i] += si * h;
                val += sign * kl(&x);
            }
            hv[i] = val / (4.0 * h * e);
        }
        assert!(rel_err(&fvp, &hv) < 1e-3, "rel {}", rel_err(&fvp, &hv));
        let damped = fisher_vector_product(&p, &batch, &v, 0.1).unwrap();
        for k in 0..n {
            assert!((damped[k] - fvp[k] - 0.1 * v[k]).abs() < 1e-12);
        }
    }
    assert!(fisher_vector_product(&p, &batch, &vec![0.0; n], 0.1).unwrap().iter().all(|x| *x == 0.0));
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fisher_is_symmetric_and_psd(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = small_policy(4, &[8, 8], 4, &mut rng);
        let batch: Vec<Vec<f64>> = (0..6).map(|_| random_vec(4, 1.0, &mut rng)).collect();
        let u = random_vec(p.num_params(), 1.0, &mut rng);
        let v = random_vec(p.num_params(), 1.0, &mut rng);
        let hu = fisher_vector_product(&p, &batch, &u, 0.0).unwrap();
        let hv = fisher_vector_product(&p, &batch, &v, 0.0).unwrap();
        prop_assert!((dot(&v, &hu) - dot(&u, &hv)).abs() < 1e-8);
        prop_assert!(dot(&v, &hv) >= -1e-8);
    }

    #[test]
    fn flatten_round_trip(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = small_policy(3, &[5, 4], 4, &mut rng);
        let q = p.unflatten(&p.flatten()).unwrap();
        prop_assert_eq!(&p, &q);
        let obs = random_vec(3, 1.0, &mut rng);
        prop_assert_eq!(p.mean_action(&obs).unwrap(), q.mean_action(&obs).unwrap());
    }
}

#[test]
fn unflatten_rejects_wrong_length() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let p = small_policy(3, &[4], 4, &mut rng);
    assert!(p.unflatten(&vec![0.0; p.num_params() + 1]).is_err());
}

#[test]
fn normalizer_matches_batch_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let data: Vec<Vec<f64>> = (0..1000).map(|_| vec![3.0 + 2.0 * rng.sample::<f64, _>(StandardNormal), -1.0]).collect();
    let mut n = Normalizer::new(2, true);
    for chunk in data.chunks(137) {
        n.update(chunk);
    }
    let mean0 = data.iter().map(|x| x[0]).sum::<f64>() / 1000.0;
    let var0 = data.iter().map(|x| (x[0] - mean0).powi(2)).sum::<f64>() / 1000.0;
    assert!((n.mean[0] - mean0).abs() < 1e-10);
    assert!((n.std()[0] - var0.sqrt()).abs() < 1e-10);
    let z = n.normalize(&[mean0 + var0.sqrt(), -1.0]);
    assert!((z[0] - 1.0).abs() < 1e-9);
    assert_eq!(z[1], 0.0);
    assert!(n.normalize(&[1e9, 0.0])[0] <= 10.0);
    let off = Normalizer::new(2, false);
    assert_eq!(off.normalize(&[5.0, 6.0]), vec![5.0, 6.0]);
}

#[test]
fn checkpoint_round_trip_and_version_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let policy = GaussianPolicy::new(20, 4, 1.25, &mut rng);
    let value = Mlp::orthogonal(MlpSpec::standard(20, 1), 1.0, &mut rng);
    let mut normalizer = Normalizer::new(20, true);
    normalizer.update(&(0..5).map(|_| random_vec(20, 1.0, &mut rng)).collect::<Vec<_>>());
    let c = Checkpoint {
        format_version: CHECKPOINT_FORMAT_VERSION,
        iteration: 7,
        timesteps: 1400,
        contact_feedback: true,
        policy,
        value,
        normalizer,
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    c.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, c);
    let obs = random_vec(20, 1.0, &mut rng);
    assert_eq!(back.act(&obs).unwrap(), c.act(&obs).unwrap());

    let mut bad = c.clone();
    bad.format_version = 99;
    bad.save(&path).unwrap();
    assert!(matches!(Checkpoint::load(&path), Err(ApproxError::Version(99))));
}

#[test]
fn policy_init_conventions() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let p = GaussianPolicy::new(10, 4, 1.25, &mut rng);
    assert!(p.log_std.iter().all(|l| (l - 1.25f64.ln()).abs() < 1e-15));
    let a = p.mean_action(&[1.0; 10]).unwrap();
    assert!(a.iter().all(|x| x.abs() < 0.1));
}
