use grasplab::approximator::*;
use grasplab::env::EpisodeConfig;
use grasplab::hand::HandModel;
use grasplab::scene::*;
use grasplab::trpo::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn disk_set(n: usize) -> Vec<PreGrasp> {
    sample_pregrasps(&ObjectKind::disk(), n, 42, &HandModel::default(), &SamplerConfig::default()).unwrap()
}

fn tiny_episode(horizon: usize) -> EpisodeConfig {
    EpisodeConfig { horizon, ..Default::default() }
}

fn tiny_trpo(iterations: usize) -> TrpoConfig {
    TrpoConfig { iterations, batch_timesteps: Some(60), seed: 3, checkpoint_every: 2, ..Default::default() }
}

#[test]
fn discounted_returns_hand_example_and_recursion() {
    assert_eq!(discounted_returns(&[1.0, 1.0, 1.0], 0.5), vec![1.75, 1.5, 1.0]);
    assert!(discounted_returns(&[], 0.9).is_empty());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let r: Vec<f64> = (0..500).map(|_| rng.random_range(-3.0..3.0)).collect();
    let g = discounted_returns(&r, 0.995);
    for t in 0..r.len() - 1 {
        assert!((g[t] - (r[t] + 0.995 * g[t + 1])).abs() < 1e-9);
    }
    assert_eq!(g[r.len() - 1], r[r.len() - 1]);
}

#[test]
fn batch_of_one_horizon_is_one_episode() {
    let model = HandModel::default();
    let ep = tiny_episode(25);
    let cfg = TrpoConfig::default();
    let agent = initial_checkpoint(ep.obs_dim(), false, &model, &cfg);
    let b = collect_batch(&agent, &disk_set(3), &model, &ep, 25, cfg.gamma, 1).unwrap();
    assert_eq!(b.episodes.len(), 1);
    assert_eq!((b.len(), b.episodes[0].len, b.episodes[0].start), (25, 25, 0));
    for i in 0..b.len() {
        let lp = agent.policy.log_prob(&b.obs[i], &b.actions[i]).unwrap();
        assert!((lp - b.log_probs[i]).abs() < 1e-12);
        assert_eq!(b.obs[i], agent.normalizer.normalize(&b.raw_obs[i]));
    }
    assert_eq!(b.returns, discounted_returns(&b.rewards, cfg.gamma));
    assert_eq!(b.episodes[0].total_reward, b.rewards.iter().sum::<f64>());
}

#[test]
fn batches_cover_the_request_with_whole_episodes() {
    let model = HandModel::default();
    let ep = tiny_episode(20);
    let cfg = TrpoConfig::default();
    let agent = initial_checkpoint(ep.obs_dim(), true, &model, &cfg);
    let set = disk_set(4);
    let b = collect_batch(&agent, &set, &model, &ep, 70, cfg.gamma, 9).unwrap();
    assert_eq!(b.len(), 80);
    assert_eq!(b.episodes.len(), 4);
    for e in &b.episodes {
        let g = discounted_returns(&b.rewards[e.start..e.start + e.len], cfg.gamma);
        assert_eq!(&b.returns[e.start..e.start + e.len], g.as_slice());
    }
    assert_eq!(b, collect_batch(&agent, &set, &model, &ep, 70, cfg.gamma, 9).unwrap());
    assert!(matches!(collect_batch(&agent, &[], &model, &ep, 70, cfg.gamma, 9), Err(TrpoError::EmptyTrainSet)));
}

#[test]
fn pregrasps_are_drawn_uniformly() {
    let model = HandModel::default();
    let ep = EpisodeConfig { horizon: 1, drop_phase_duration: 0.01, ..Default::default() };
    let cfg = TrpoConfig::default();
    let agent = initial_checkpoint(ep.obs_dim(), false, &model, &cfg);
    let set = disk_set(5);
    let n = 10_000;
    let b = collect_batch(&agent, &set, &model, &ep, n, cfg.gamma, 77).unwrap();
    let mut counts = [0usize; 5];
    for e in &b.episodes {
        counts[e.pregrasp_id as usize] += 1;
    }
    // χ² with 4 degrees of freedom; 18.47 is the 0.001 upper quantile.
    let expect = n as f64 / 5.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
    assert!(chi2 < 18.47, "{counts:?}");
}

#[test]
fn advantages_hand_example() {
    let spec = MlpSpec::standard(2, 1);
    let zero = Mlp::zeros(spec);
    let batch = TrajectoryBatch {
        obs: vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![2.0, 2.0]],
        returns: vec![3.0, 2.0, 1.0],
        rewards: vec![1.0; 3],
        ..Default::default()
    };
    let a = compute_advantages(&batch, &zero).unwrap();
    assert_eq!(a.raw, vec![3.0, 2.0, 1.0]);
    let s = 1.5f64.sqrt();
    for (x, e) in a.standardized.iter().zip([s, 0.0, -s]) {
        assert!((x - e).abs() < 1e-12);
    }
    assert_eq!(standardize(&[4.0, 4.0, 4.0]), vec![0.0; 3]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn standardized_values_have_zero_mean_unit_std(x in prop::collection::vec(-100.0f64..100.0, 2..200)) {
        let s = standardize(&x);
        let spread = x.iter().cloned().fold(f64::MIN, f64::max) - x.iter().cloned().fold(f64::MAX, f64::min);
        prop_assume!(spread > 1e-6);
        let n = s.len() as f64;
        let mean = s.iter().sum::<f64>() / n;
        let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        prop_assert!(mean.abs() < 1e-9);
        prop_assert!((var - 1.0).abs() < 1e-9);
    }
}

#[test]
fn cg_on_identity_converges_in_one_step() {
    let b = vec![1.0, -2.0, 0.5];
    let r = conjugate_gradient(|v| Ok(v.to_vec()), &b, 10, 1e-10).unwrap();
    assert_eq!(r.iterations, 1);
    assert_eq!(r.x, b);
    let zero = conjugate_gradient(|v| Ok(v.to_vec()), &[0.0; 3], 10, 1e-10).unwrap();
    assert_eq!((zero.x, zero.iterations), (vec![0.0; 3], 0));
}

#[test]
fn cg_matches_a_dense_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 20;
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let a = &m * m.transpose() + DMatrix::identity(n, n) * 0.5;
    let b = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let exact = a.clone().cholesky().unwrap().solve(&b);
    let r = conjugate_gradient(|v| Ok((&a * DVector::from_column_slice(v)).as_slice().to_vec()), b.as_slice(), 60, 1e-12).unwrap();
    let err = (DVector::from_vec(r.x) - &exact).norm() / exact.norm();
    assert!(err < 1e-8, "relative error {err}");
    assert!(r.residual_norm < 1e-10);
}

/// Batch of `n` samples drawn from `policy` on random observations.
fn synthetic_batch(policy: &GaussianPolicy, n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut obs = Vec::new();
    let mut act = Vec::new();
    let mut lp = Vec::new();
    let mut adv = Vec::new();
    for _ in 0..n {
        let o: Vec<f64> = (0..policy.obs_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (a, l) = policy.sample(&o, &mut rng).unwrap();
        // Reward actions whose first component is large.
        adv.push(a[0] - policy.mean_action(&o).unwrap()[0]);
        obs.push(o);
        act.push(a);
        lp.push(l);
    }
    (obs, act, lp, standardize(&adv))
}

#[test]
fn zero_advantages_leave_the_policy_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = GaussianPolicy::new(10, 4, 1.0, &mut rng);
    let (obs, act, lp, _) = synthetic_batch(&p, 200, 2);
    let (q, d) = trpo_update(&p, &obs, &act, &lp, &vec![0.0; 200], &TrpoConfig::default()).unwrap();
    assert_eq!(q, p);
    assert!(!d.accepted);
    assert_eq!(d.gradient_norm, 0.0);
    assert!(matches!(trpo_update(&p, &[], &[], &[], &[], &TrpoConfig::default()), Err(TrpoError::EmptyBatch)));
}

#[test]
fn natural_step_is_scaled_to_the_trust_region() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = GaussianPolicy::new(10, 4, 1.0, &mut rng);
        let (obs, act, lp, adv) = synthetic_batch(&p, 500, seed + 100);
        let cfg = TrpoConfig::default();
        let (q, d) = trpo_update(&p, &obs, &act, &lp, &adv, &cfg).unwrap();
        assert!((d.full_step_quadratic - 2.0 * cfg.max_kl).abs() < 1e-6);
        assert!(d.accepted, "seed {seed}: {d:?}");
        assert!(d.kl <= cfg.max_kl + 1e-6);
        assert!(d.improvement() > 0.0);
        assert!((mean_kl(&p, &q, &obs).unwrap() - d.kl).abs() < 1e-12);
        assert!((surrogate(&q, &obs, &act, &lp, &adv).unwrap() - d.surrogate_after).abs() < 1e-12);
        // At the old policy the ratio is 1, so the surrogate is the mean advantage.
        assert!(d.surrogate_before.abs() < 1e-12);
        // The first action mean should move up.
        let shift: f64 = obs.iter().map(|o| q.mean_action(o).unwrap()[0] - p.mean_action(o).unwrap()[0]).sum();
        assert!(shift > 0.0);
    }
}

#[test]
fn surrogate_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let p = GaussianPolicy::new(3, 2, 0.7, &mut rng);
    let (obs, act, lp, adv) = synthetic_batch(&p, 40, 12);
    // Evaluate away from the sampling policy so ratios differ from 1.
    let theta: Vec<f64> = p.flatten().iter().map(|t| t + rng.random_range(-0.05..0.05)).collect();
    let q = p.unflatten(&theta).unwrap();
    let g = surrogate_gradient(&q, &obs, &act, &lp, &adv).unwrap();
    let h = 1e-6;
    for k in (0..theta.len()).step_by(7) {
        let mut tp = theta.clone();
        let mut tm = theta.clone();
        tp[k] += h;
        tm[k] -= h;
        let fd = (surrogate(&p.unflatten(&tp).unwrap(), &obs, &act, &lp, &adv).unwrap()
            - surrogate(&p.unflatten(&tm).unwrap(), &obs, &act, &lp, &adv).unwrap())
            / (2.0 * h);
        assert!((fd - g[k]).abs() <= 1e-6 * (1.0 + fd.abs()), "param {k}: {fd} vs {}", g[k]);
    }
}

#[test]
fn value_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..50 {
        let v = Mlp::orthogonal(MlpSpec::new(3, &[5, 4], 1), 1.0, &mut rng);
        let obs: Vec<Vec<f64>> = (0..8).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let targets: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
        let idx: Vec<usize> = (0..8).collect();
        let (_, g) = value_loss_grad(&v, &obs, &targets, &idx).unwrap();
        let h = 1e-6;
        for k in 0..v.num_params() {
            let mut vp = v.clone();
            let mut vm = v.clone();
            vp.params[k] += h;
            vm.params[k] -= h;
            let fd = (value_loss_grad(&vp, &obs, &targets, &idx).unwrap().0
                - value_loss_grad(&vm, &obs, &targets, &idx).unwrap().0)
                / (2.0 * h);
            let rel = (fd - g[k]).abs() / fd.abs().max(g[k].abs()).max(1e-6);
            assert!(rel < 1e-4, "param {k}: {fd} vs {}", g[k]);
        }
    }
}

#[test]
fn value_fit_on_zero_targets_keeps_a_zero_net() {
    let v = Mlp::zeros(MlpSpec::standard(4, 1));
    let obs: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64 * 0.01; 4]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (w, d) = fit_value(&v, &obs, &vec![0.0; 50], &TrpoConfig::default(), &mut rng).unwrap();
    assert_eq!(w, v);
    assert_eq!(d.mse_before, 0.0);
}

#[test]
fn value_fit_learns_a_linear_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let v = Mlp::orthogonal(MlpSpec::standard(4, 1), 1.0, &mut rng);
    let w = [0.5, -1.0, 0.25, 2.0];
    let obs: Vec<Vec<f64>> = (0..512).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let targets: Vec<f64> = obs.iter().map(|o| o.iter().zip(&w).map(|(a, b)| a * b).sum()).collect();
    let cfg = TrpoConfig { value_epochs: 100, ..Default::default() };
    let (_, d) = fit_value(&v, &obs, &targets, &cfg, &mut rng).unwrap();
    assert!(d.mse_after < 0.1 * d.mse_before, "{d:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn value_fit_never_increases_the_error(seed in any::<u64>(), lr in 1e-4f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = Mlp::orthogonal(MlpSpec::new(3, &[8], 1), 1.0, &mut rng);
        let obs: Vec<Vec<f64>> = (0..64).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let targets: Vec<f64> = (0..64).map(|_| rng.random_range(-10.0..10.0)).collect();
        let cfg = TrpoConfig { value_learning_rate: lr, value_minibatch: 16, ..Default::default() };
        let (w, d) = fit_value(&v, &obs, &targets, &cfg, &mut rng).unwrap();
        let all: Vec<usize> = (0..64).collect();
        let after = value_loss_grad(&w, &obs, &targets, &all).unwrap().0;
        prop_assert!(after <= d.mse_before);
        prop_assert_eq!(after, d.mse_after);
    }
}

#[test]
fn zero_iterations_write_only_the_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let model = HandModel::default();
    let ep = tiny_episode(20);
    let out = train(&model, &ep, &tiny_trpo(0), &disk_set(3), None, Some(dir.path()), 1).unwrap();
    assert!(out.metrics.is_empty());
    assert_eq!(out.checkpoint_paths, vec![checkpoint_path(dir.path(), 0)]);
    let ck = Checkpoint::load(&out.checkpoint_paths[0]).unwrap();
    assert_eq!(ck, initial_checkpoint(ep.obs_dim(), ep.contact_feedback, &model, &tiny_trpo(0)));
}

#[test]
fn training_is_deterministic_across_worker_counts_and_resumes_numbering() {
    let model = HandModel::default();
    let ep = EpisodeConfig { contact_feedback: true, ..tiny_episode(20) };
    let set = disk_set(3);
    let d1 = tempfile::tempdir().unwrap();
    let d3 = tempfile::tempdir().unwrap();
    let one = train(&model, &ep, &tiny_trpo(3), &set, None, Some(d1.path()), 1).unwrap();
    let three = train(&model, &ep, &tiny_trpo(3), &set, None, Some(d3.path()), 3).unwrap();
    assert_eq!(one.metrics, three.metrics);
    assert_eq!(one.checkpoint, three.checkpoint);
    let csv1 = std::fs::read(d1.path().join("metrics.csv")).unwrap();
    assert_eq!(csv1, std::fs::read(d3.path().join("metrics.csv")).unwrap());
    assert_eq!(String::from_utf8(csv1).unwrap().lines().count(), 4);
    assert_eq!(one.checkpoint_paths, vec![checkpoint_path(d1.path(), 2), checkpoint_path(d1.path(), 3)]);

    let resumed = train(&model, &ep, &tiny_trpo(2), &set, Some(one.checkpoint.clone()), Some(d1.path()), 1).unwrap();
    let its: Vec<usize> = resumed.metrics.iter().map(|m| m.iteration).collect();
    assert_eq!(its, vec![4, 5]);
    let text = std::fs::read_to_string(d1.path().join("metrics.csv")).unwrap();
    assert_eq!(text.lines().count(), 6);
    assert_eq!(text.lines().filter(|l| l.starts_with("iteration")).count(), 1);
    assert_eq!(resumed.checkpoint.iteration, 5);

    for (m, u) in one.metrics.iter().zip(&one.updates) {
        assert_eq!(m.accepted, u.accepted);
        if u.accepted {
            assert!(m.mean_kl <= 0.01 + 1e-6 && m.surrogate_improvement > 0.0);
        }
    }
}

#[test]
fn resume_rejects_mismatched_observations() {
    let model = HandModel::default();
    let ck = initial_checkpoint(10, false, &model, &TrpoConfig::default());
    let ep = EpisodeConfig { contact_feedback: true, ..tiny_episode(20) };
    let err = train(&model, &ep, &tiny_trpo(1), &disk_set(2), Some(ck), None, 1).unwrap_err();
    assert!(matches!(err, TrpoError::CheckpointMismatch { checkpoint: 10, env: 20 }));
}

#[test]
fn invalid_trpo_configs_are_rejected() {
    for bad in [
        TrpoConfig { max_kl: 0.0, ..Default::default() },
        TrpoConfig { gamma: 1.5, ..Default::default() },
        TrpoConfig { backtrack_ratio: 1.0, ..Default::default() },
        TrpoConfig { fvp_subsample: 0, ..Default::default() },
    ] {
        assert!(bad.validate().is_err(), "{bad:?}");
    }
    assert_eq!(TrpoConfig::default().batch_size(1000), 20_000);
}
