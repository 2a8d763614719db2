//! Trust-region policy optimization: rollouts, Monte-Carlo advantages against a
//! learned baseline, natural-gradient steps with a KL line search, value fitting.

use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::approximator::{
    fisher_vector_product, mean_kl, ApproxError, Checkpoint, GaussianPolicy, Mlp, MlpCache, MlpSpec, Normalizer,
    CHECKPOINT_FORMAT_VERSION,
};
use crate::env::{Env, EnvError, EpisodeConfig};
use crate::hand::{HandModel, NUM_JOINTS};
use crate::math::derive_seed;
use crate::scene::PreGrasp;

#[derive(Debug, Error)]
pub enum TrpoError {
    #[error("empty training set")]
    EmptyTrainSet,
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("checkpoint has observation dimension {checkpoint}, environment needs {env}")]
    CheckpointMismatch { checkpoint: usize, env: usize },
    #[error("invalid trpo config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Approx(#[from] ApproxError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrpoConfig {
    /// Trust-region radius on the mean KL.
    pub max_kl: f64,
    pub gamma: f64,
    pub cg_iterations: usize,
    pub cg_damping: f64,
    pub cg_residual_tol: f64,
    pub backtrack_ratio: f64,
    pub max_backtracks: usize,
    /// Timesteps per batch; `None` means 20 episodes.
    pub batch_timesteps: Option<usize>,
    /// Fisher products use every k-th sample of the batch.
    pub fvp_subsample: usize,
    pub value_epochs: usize,
    pub value_learning_rate: f64,
    pub value_minibatch: usize,
    pub iterations: usize,
    /// Also save a checkpoint every this many iterations (0 = final only).
    pub checkpoint_every: usize,
    pub normalize_observations: bool,
    /// Initial policy standard deviation as a fraction of the torque limit.
    pub init_std_fraction: f64,
    pub seed: u64,
}

impl Default for TrpoConfig {
    fn default() -> Self {
        Self {
            max_kl: 0.01,
            gamma: 0.995,
            cg_iterations: 10,
            cg_damping: 0.1,
            cg_residual_tol: 1e-10,
            backtrack_ratio: 0.8,
            max_backtracks: 10,
            batch_timesteps: None,
            fvp_subsample: 5,
            value_epochs: 10,
            value_learning_rate: 1e-3,
            value_minibatch: 256,
            iterations: 200,
            checkpoint_every: 10,
            normalize_observations: true,
            init_std_fraction: 0.5,
            seed: 0,
        }
    }
}

impl TrpoConfig {
    pub fn validate(&self) -> Result<(), TrpoError> {
        let bad = |m: &str| Err(TrpoError::InvalidConfig(m.to_string()));
        if !(self.max_kl > 0.0) {
            return bad("max_kl must be > 0");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(self.backtrack_ratio > 0.0 && self.backtrack_ratio < 1.0) {
            return bad("backtrack_ratio must lie in (0, 1)");
        }
        if self.fvp_subsample == 0 || self.value_minibatch == 0 {
            return bad("fvp_subsample and value_minibatch must be >= 1");
        }
        if !(self.init_std_fraction > 0.0 && self.cg_damping >= 0.0 && self.value_learning_rate > 0.0) {
            return bad("init_std_fraction and value_learning_rate must be > 0, cg_damping >= 0");
        }
        if self.batch_timesteps == Some(0) {
            return bad("batch_timesteps must be >= 1");
        }
        Ok(())
    }

    pub fn batch_size(&self, horizon: usize) -> usize {
        self.batch_timesteps.unwrap_or(20 * horizon)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub start: usize,
    pub len: usize,
    pub pregrasp_id: u32,
    pub total_reward: f64,
    pub success: bool,
}

/// Flattened per-step samples of a set of complete episodes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryBatch {
    /// Normalized observations, as seen by the policy.
    pub obs: Vec<Vec<f64>>,
    pub raw_obs: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub log_probs: Vec<f64>,
    /// Discounted return from each step to the end of its episode.
    pub returns: Vec<f64>,
    pub episodes: Vec<EpisodeSummary>,
}

impl TrajectoryBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn success_rate(&self) -> f64 {
        if self.episodes.is_empty() {
            return 0.0;
        }
        self.episodes.iter().filter(|e| e.success).count() as f64 / self.episodes.len() as f64
    }

    pub fn mean_return(&self) -> f64 {
        if self.episodes.is_empty() {
            return 0.0;
        }
        self.episodes.iter().map(|e| e.total_reward).sum::<f64>() / self.episodes.len() as f64
    }
}

/// `G_t = r_t + γ·G_{t+1}` within one episode.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut g = 0.0;
    for t in (0..rewards.len()).rev() {
        g = rewards[t] + gamma * g;
        out[t] = g;
    }
    out
}

struct EpisodeData {
    obs: Vec<Vec<f64>>,
    raw_obs: Vec<Vec<f64>>,
    actions: Vec<Vec<f64>>,
    rewards: Vec<f64>,
    log_probs: Vec<f64>,
    pregrasp_id: u32,
    success: bool,
}

fn run_stochastic_episode(
    agent: &Checkpoint,
    pregrasp: &PreGrasp,
    model: &HandModel,
    config: &EpisodeConfig,
    episode: u64,
    rng: &mut ChaCha8Rng,
) -> Result<EpisodeData, TrpoError> {
    let mut env = Env::new(model.clone(), config.clone())?;
    let mut raw = env.reset_episode(pregrasp, episode)?;
    let mut d = EpisodeData {
        obs: Vec::with_capacity(config.horizon),
        raw_obs: Vec::with_capacity(config.horizon),
        actions: Vec::with_capacity(config.horizon),
        rewards: Vec::with_capacity(config.horizon),
        log_probs: Vec::with_capacity(config.horizon),
        pregrasp_id: pregrasp.id,
        success: false,
    };
    loop {
        let obs = agent.normalizer.normalize(&raw);
        let (action, lp) = agent.policy.sample(&obs, rng)?;
        let r = env.step(&action)?;
        d.obs.push(obs);
        d.raw_obs.push(raw);
        d.actions.push(action);
        d.rewards.push(r.reward);
        d.log_probs.push(lp);
        if r.done {
            d.success = r.info.drop.is_some_and(|x| x.success);
            return Ok(d);
        }
        raw = r.observation;
    }
}

/// Runs full stochastic episodes on uniformly drawn pre-grasps until at least
/// `n_timesteps` steps are gathered. Episode `k` of round `round` draws all of
/// its randomness from `(seed, round, k)`, so the result does not depend on
/// how episodes are spread over threads.
pub fn collect_batch(
    agent: &Checkpoint,
    train: &[PreGrasp],
    model: &HandModel,
    config: &EpisodeConfig,
    n_timesteps: usize,
    gamma: f64,
    seed: u64,
) -> Result<TrajectoryBatch, TrpoError> {
    if train.is_empty() {
        return Err(TrpoError::EmptyTrainSet);
    }
    let mut batch = TrajectoryBatch::default();
    let mut next_episode = 0u64;
    while batch.len() < n_timesteps {
        let remaining = n_timesteps - batch.len();
        let n_eps = remaining.div_ceil(config.horizon) as u64;
        let episodes: Vec<EpisodeData> = (next_episode..next_episode + n_eps)
            .into_par_iter()
            .map(|k| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, k]));
                let pg = &train[rng.random_range(0..train.len())];
                run_stochastic_episode(agent, pg, model, config, derive_seed(&[seed, k, 1]), &mut rng)
            })
            .collect::<Result<_, _>>()?;
        next_episode += n_eps;
        for e in episodes {
            let start = batch.len();
            batch.returns.extend(discounted_returns(&e.rewards, gamma));
            batch.episodes.push(EpisodeSummary {
                start,
                len: e.rewards.len(),
                pregrasp_id: e.pregrasp_id,
                total_reward: e.rewards.iter().sum(),
                success: e.success,
            });
            batch.obs.extend(e.obs);
            batch.raw_obs.extend(e.raw_obs);
            batch.actions.extend(e.actions);
            batch.rewards.extend(e.rewards);
            batch.log_probs.extend(e.log_probs);
        }
    }
    Ok(batch)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Advantages {
    /// `G_t − V(s_t)` before standardization.
    pub raw: Vec<f64>,
    pub standardized: Vec<f64>,
}

/// Monte-Carlo advantages against the value baseline, standardized over the batch.
pub fn compute_advantages(batch: &TrajectoryBatch, value: &Mlp) -> Result<Advantages, TrpoError> {
    let raw: Vec<f64> = batch
        .obs
        .par_iter()
        .zip(&batch.returns)
        .map(|(s, g)| Ok(g - value.forward(s)?[0]))
        .collect::<Result<_, ApproxError>>()?;
    Ok(Advantages { standardized: standardize(&raw), raw })
}

/// Shifts and scales to mean 0 and (population) std 1; constant input maps to zeros.
pub fn standardize(x: &[f64]) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd < 1e-12 {
        return vec![0.0; x.len()];
    }
    x.iter().map(|v| (v - mean) / sd).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgResult {
    pub x: Vec<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Conjugate gradient for `A x = b` from `x = 0`.
pub fn conjugate_gradient(
    mut operator: impl FnMut(&[f64]) -> Result<Vec<f64>, TrpoError>,
    b: &[f64],
    iterations: usize,
    residual_tol: f64,
) -> Result<CgResult, TrpoError> {
    let mut x = vec![0.0; b.len()];
    let mut r = b.to_vec();
    let mut p = b.to_vec();
    let mut rr = dot(&r, &r);
    let mut done = 0;
    for _ in 0..iterations {
        if rr.sqrt() < residual_tol {
            break;
        }
        let ap = operator(&p)?;
        let pap = dot(&p, &ap);
        let alpha = rr / pap;
        if !alpha.is_finite() {
            return Err(TrpoError::NonFinite("conjugate gradient"));
        }
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        for i in 0..p.len() {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
        done += 1;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(TrpoError::NonFinite("conjugate gradient"));
    }
    Ok(CgResult { x, residual_norm: rr.sqrt(), iterations: done })
}

/// Mean importance-weighted advantage `E[π_new(a|s)/π_old(a|s) · A]`.
pub fn surrogate(
    policy: &GaussianPolicy,
    obs: &[Vec<f64>],
    actions: &[Vec<f64>],
    old_log_probs: &[f64],
    adv: &[f64],
) -> Result<f64, TrpoError> {
    let total: f64 = (0..obs.len())
        .into_par_iter()
        .with_min_len(256)
        .map(|i| Ok((policy.log_prob(&obs[i], &actions[i])? - old_log_probs[i]).exp() * adv[i]))
        .collect::<Result<Vec<f64>, ApproxError>>()?
        .iter()
        .sum();
    Ok(total / obs.len() as f64)
}

/// Gradient of the surrogate at `policy`.
pub fn surrogate_gradient(
    policy: &GaussianPolicy,
    obs: &[Vec<f64>],
    actions: &[Vec<f64>],
    old_log_probs: &[f64],
    adv: &[f64],
) -> Result<Vec<f64>, TrpoError> {
    const CHUNK: usize = 512;
    let n = policy.num_params();
    let scale = 1.0 / obs.len() as f64;
    // Fixed chunks summed in order keep the result independent of the thread count.
    let partials: Vec<Vec<f64>> = (0..obs.len().div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut g = vec![0.0; n];
            let mut cache = MlpCache::default();
            for i in c * CHUNK..((c + 1) * CHUNK).min(obs.len()) {
                let lp = policy.log_prob(&obs[i], &actions[i])?;
                let ratio = (lp - old_log_probs[i]).exp();
                policy.accumulate_grad_log_prob(&obs[i], &actions[i], scale * ratio * adv[i], &mut cache, &mut g)?;
            }
            Ok(g)
        })
        .collect::<Result<_, ApproxError>>()?;
    let mut g = vec![0.0; n];
    for p in partials {
        for (a, b) in g.iter_mut().zip(p) {
            *a += b;
        }
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateDiagnostics {
    pub accepted: bool,
    /// Index of the accepted backtracking step (0 = full step).
    pub backtracks: Option<usize>,
    pub surrogate_before: f64,
    pub surrogate_after: f64,
    /// Mean KL between old and accepted policy (0 when rejected).
    pub kl: f64,
    pub cg_residual: f64,
    /// `β²·dᵀF d` of the full step; equals `2δ` by construction.
    pub full_step_quadratic: f64,
    pub gradient_norm: f64,
}

impl UpdateDiagnostics {
    pub fn improvement(&self) -> f64 {
        self.surrogate_after - self.surrogate_before
    }
}

/// One natural-gradient step with backtracking under the KL constraint.
/// Returns the old parameters unchanged if no candidate is accepted.
pub fn trpo_update(
    policy: &GaussianPolicy,
    obs: &[Vec<f64>],
    actions: &[Vec<f64>],
    old_log_probs: &[f64],
    adv: &[f64],
    config: &TrpoConfig,
) -> Result<(GaussianPolicy, UpdateDiagnostics), TrpoError> {
    if obs.is_empty() {
        return Err(TrpoError::EmptyBatch);
    }
    let surr_old = surrogate(policy, obs, actions, old_log_probs, adv)?;
    let g = surrogate_gradient(policy, obs, actions, old_log_probs, adv)?;
    if !surr_old.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(TrpoError::NonFinite("surrogate gradient"));
    }
    let gnorm = dot(&g, &g).sqrt();
    let mut diag = UpdateDiagnostics {
        accepted: false,
        backtracks: None,
        surrogate_before: surr_old,
        surrogate_after: surr_old,
        kl: 0.0,
        cg_residual: 0.0,
        full_step_quadratic: 0.0,
        gradient_norm: gnorm,
    };
    if gnorm == 0.0 {
        return Ok((policy.clone(), diag));
    }

    let sub: Vec<&[f64]> = obs.iter().step_by(config.fvp_subsample).map(|v| v.as_slice()).collect();
    let fvp = |v: &[f64]| -> Result<Vec<f64>, TrpoError> {
        Ok(fisher_vector_product(policy, &sub, v, config.cg_damping)?)
    };
    let cg = conjugate_gradient(fvp, &g, config.cg_iterations, config.cg_residual_tol)?;
    diag.cg_residual = cg.residual_norm;
    let d = cg.x;
    let shs = dot(&d, &fvp(&d)?);
    if !(shs > 0.0) || !shs.is_finite() {
        return Err(TrpoError::NonFinite("step curvature"));
    }
    let beta = (2.0 * config.max_kl / shs).sqrt();
    diag.full_step_quadratic = beta * beta * shs;

    let theta = policy.flatten();
    let mut frac = 1.0;
    for k in 0..config.max_backtracks {
        let cand: Vec<f64> = theta.iter().zip(&d).map(|(t, s)| t + frac * beta * s).collect();
        let new = policy.unflatten(&cand)?;
        let surr = surrogate(&new, obs, actions, old_log_probs, adv)?;
        let kl = mean_kl(policy, &new, obs)?;
        if surr.is_finite() && kl.is_finite() && surr - surr_old > 0.0 && kl <= config.max_kl {
            diag.accepted = true;
            diag.backtracks = Some(k);
            diag.surrogate_after = surr;
            diag.kl = kl;
            return Ok((new, diag));
        }
        frac *= config.backtrack_ratio;
    }
    Ok((policy.clone(), diag))
}

/// Mean squared error of `value` on `(obs, targets)` and its parameter gradient.
pub fn value_loss_grad(value: &Mlp, obs: &[Vec<f64>], targets: &[f64], idx: &[usize]) -> Result<(f64, Vec<f64>), TrpoError> {
    let mut grad = vec![0.0; value.num_params()];
    let mut loss = 0.0;
    let mut cache = MlpCache::default();
    let scale = 1.0 / idx.len() as f64;
    for &i in idx {
        value.forward_cached(&obs[i], &mut cache)?;
        let err = cache.output()[0] - targets[i];
        loss += err * err * scale;
        value.backward(&cache, &[2.0 * err * scale], &mut grad);
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueFitDiagnostics {
    pub mse_before: f64,
    pub mse_after: f64,
    pub reverted: bool,
}

/// Minibatch Adam on the squared error; returns the input if the batch MSE did not drop.
pub fn fit_value(
    value: &Mlp,
    obs: &[Vec<f64>],
    targets: &[f64],
    config: &TrpoConfig,
    rng: &mut impl Rng,
) -> Result<(Mlp, ValueFitDiagnostics), TrpoError> {
    if obs.is_empty() {
        return Err(TrpoError::EmptyBatch);
    }
    let all: Vec<usize> = (0..obs.len()).collect();
    let mse_before = value_loss_grad(value, obs, targets, &all)?.0;
    if !mse_before.is_finite() {
        return Err(TrpoError::NonFinite("value loss"));
    }
    let mut v = value.clone();
    let n = v.num_params();
    let (mut m, mut s) = (vec![0.0; n], vec![0.0; n]);
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    let mut t = 0;
    let mut order = all.clone();
    for _ in 0..config.value_epochs {
        order.shuffle(rng);
        for chunk in order.chunks(config.value_minibatch) {
            let (_, g) = value_loss_grad(&v, obs, targets, chunk)?;
            t += 1;
            let c1 = 1.0 - f64::powi(b1, t);
            let c2 = 1.0 - f64::powi(b2, t);
            for k in 0..n {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                s[k] = b2 * s[k] + (1.0 - b2) * g[k] * g[k];
                v.params[k] -= config.value_learning_rate * (m[k] / c1) / ((s[k] / c2).sqrt() + eps);
            }
        }
    }
    let mse_after = value_loss_grad(&v, obs, targets, &all)?.0;
    if !mse_after.is_finite() {
        return Err(TrpoError::NonFinite("value loss"));
    }
    if mse_after > mse_before {
        return Ok((value.clone(), ValueFitDiagnostics { mse_before, mse_after: mse_before, reverted: true }));
    }
    Ok((v, ValueFitDiagnostics { mse_before, mse_after, reverted: false }))
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iteration: usize,
    pub timesteps: u64,
    pub mean_return: f64,
    pub success_rate: f64,
    pub accepted: bool,
    /// 0 when the update was rejected.
    pub mean_kl: f64,
    /// 0 when the update was rejected.
    pub surrogate_improvement: f64,
    pub cg_residual: f64,
}

/// Fresh agent for `obs_dim` observations.
pub fn initial_checkpoint(obs_dim: usize, contact_feedback: bool, model: &HandModel, config: &TrpoConfig) -> Checkpoint {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[config.seed, 0x1417]));
    let policy = GaussianPolicy::new(obs_dim, NUM_JOINTS, config.init_std_fraction * model.torque_limit, &mut rng);
    let value = Mlp::orthogonal(MlpSpec::standard(obs_dim, 1), 1.0, &mut rng);
    Checkpoint {
        format_version: CHECKPOINT_FORMAT_VERSION,
        iteration: 0,
        timesteps: 0,
        contact_feedback,
        policy,
        value,
        normalizer: Normalizer::new(obs_dim, config.normalize_observations),
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<MetricsRow>,
    pub updates: Vec<UpdateDiagnostics>,
    pub checkpoint_paths: Vec<PathBuf>,
}

pub fn checkpoint_path(dir: &Path, iteration: usize) -> PathBuf {
    dir.join(format!("checkpoint_{iteration:05}.json"))
}

/// Training loop: collect → advantages → policy update → value fit → normalizer update.
///
/// With `out_dir`, metrics are appended to `metrics.csv` after every iteration
/// and checkpoints are written every `checkpoint_every` iterations and at the end.
pub fn train(
    model: &HandModel,
    episode: &EpisodeConfig,
    config: &TrpoConfig,
    train_set: &[PreGrasp],
    resume: Option<Checkpoint>,
    out_dir: Option<&Path>,
    workers: usize,
) -> Result<TrainOutcome, TrpoError> {
    config.validate()?;
    episode.validate()?;
    if train_set.is_empty() {
        return Err(TrpoError::EmptyTrainSet);
    }
    let obs_dim = episode.obs_dim();
    let mut agent = match resume {
        Some(c) => {
            if c.obs_dim() != obs_dim || c.contact_feedback != episode.contact_feedback {
                return Err(TrpoError::CheckpointMismatch { checkpoint: c.obs_dim(), env: obs_dim });
            }
            c
        }
        None => initial_checkpoint(obs_dim, episode.contact_feedback, model, config),
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build()?;
    let mut writer = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let path = dir.join("metrics.csv");
            let exists = path.exists() && std::fs::metadata(&path)?.len() > 0;
            let f: File = OpenOptions::new().create(true).append(true).open(&path)?;
            Some(csv::WriterBuilder::new().has_headers(!exists).from_writer(f))
        }
        None => None,
    };
    let mut out = TrainOutcome { checkpoint: agent.clone(), metrics: Vec::new(), updates: Vec::new(), checkpoint_paths: Vec::new() };
    let batch_size = config.batch_size(episode.horizon);
    let start = agent.iteration;
    let mut saved_at = None;
    for it in start..start + config.iterations {
        let seed = derive_seed(&[config.seed, it as u64]);
        let batch = pool.install(|| collect_batch(&agent, train_set, model, episode, batch_size, config.gamma, seed))?;
        let adv = pool.install(|| compute_advantages(&batch, &agent.value))?;
        let (policy, diag) = pool.install(|| {
            trpo_update(&agent.policy, &batch.obs, &batch.actions, &batch.log_probs, &adv.standardized, config)
        })?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, 0x7a1e]));
        let (value, _) = fit_value(&agent.value, &batch.obs, &batch.returns, config, &mut rng)?;
        agent.policy = policy;
        agent.value = value;
        agent.normalizer.update(&batch.raw_obs);
        agent.iteration = it + 1;
        agent.timesteps += batch.len() as u64;
        let row = MetricsRow {
            iteration: it + 1,
            timesteps: agent.timesteps,
            mean_return: batch.mean_return(),
            success_rate: batch.success_rate(),
            accepted: diag.accepted,
            mean_kl: if diag.accepted { diag.kl } else { 0.0 },
            surrogate_improvement: if diag.accepted { diag.improvement() } else { 0.0 },
            cg_residual: diag.cg_residual,
        };
        if let Some(w) = writer.as_mut() {
            w.serialize(&row)?;
            w.flush()?;
        }
        out.metrics.push(row);
        out.updates.push(diag);
        if let Some(dir) = out_dir {
            if config.checkpoint_every > 0 && (it + 1) % config.checkpoint_every == 0 {
                let p = checkpoint_path(dir, it + 1);
                agent.save(&p)?;
                out.checkpoint_paths.push(p);
                saved_at = Some(it + 1);
            }
        }
    }
    if let Some(dir) = out_dir {
        if saved_at != Some(agent.iteration) {
            let p = checkpoint_path(dir, agent.iteration);
            agent.save(&p)?;
            out.checkpoint_paths.push(p);
        }
    }
    out.checkpoint = agent;
    Ok(out)
}
