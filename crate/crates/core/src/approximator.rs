//! Small tanh MLPs with exact derivatives, the diagonal-Gaussian policy, the
//! value function, observation normalization, and checkpoints.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ApproxError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint decoding: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported checkpoint format_version {0}")]
    Version(u32),
}

fn check_dim(expected: usize, got: usize) -> Result<(), ApproxError> {
    if expected == got {
        Ok(())
    } else {
        Err(ApproxError::Dimension { expected, got })
    }
}

/// Layer sizes of a fully connected tanh network with an affine output layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden: &[usize], output_dim: usize) -> Self {
        Self { input_dim, hidden: hidden.to_vec(), output_dim }
    }

    /// Three hidden layers of 64 units.
    pub fn standard(input_dim: usize, output_dim: usize) -> Self {
        Self::new(input_dim, &[64, 64, 64], output_dim)
    }

    fn sizes(&self) -> Vec<usize> {
        let mut s = Vec::with_capacity(self.hidden.len() + 2);
        s.push(self.input_dim);
        s.extend_from_slice(&self.hidden);
        s.push(self.output_dim);
        s
    }

    pub fn num_params(&self) -> usize {
        self.sizes().windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }
}

/// Network parameters flattened layer by layer as `[W (out × in, row-major), b (out)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub params: Vec<f64>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct MlpCache {
    /// Input followed by every layer output (hidden outputs are post-tanh).
    acts: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("forward first")
    }
}

impl Mlp {
    pub fn zeros(spec: MlpSpec) -> Self {
        let n = spec.num_params();
        Self { spec, params: vec![0.0; n] }
    }

    /// Orthogonal weights (gain 1), zero biases; the output layer is scaled by `output_scale`.
    pub fn orthogonal(spec: MlpSpec, output_scale: f64, rng: &mut impl Rng) -> Self {
        let mut m = Self::zeros(spec);
        let sizes = m.spec.sizes();
        let mut off = 0;
        for (l, w) in sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let mat = orthogonal_matrix(n_out, n_in, rng);
            let scale = if l == sizes.len() - 2 { output_scale } else { 1.0 };
            for (dst, src) in m.params[off..off + n_in * n_out].iter_mut().zip(&mat) {
                *dst = scale * src;
            }
            off += n_in * n_out + n_out;
        }
        m
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Forward pass filling `cache`.
    pub fn forward_cached(&self, x: &[f64], cache: &mut MlpCache) -> Result<(), ApproxError> {
        check_dim(self.spec.input_dim, x.len())?;
        let sizes = self.spec.sizes();
        let n_layers = sizes.len() - 1;
        cache.acts.resize(sizes.len(), Vec::new());
        cache.acts[0].clear();
        cache.acts[0].extend_from_slice(x);
        let mut off = 0;
        for l in 0..n_layers {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let (w, rest) = self.params[off..].split_at(n_in * n_out);
            let b = &rest[..n_out];
            let (before, after) = cache.acts.split_at_mut(l + 1);
            let input = &before[l];
            let out = &mut after[0];
            out.clear();
            for (row, bo) in w.chunks_exact(n_in).zip(b) {
                let s = bo + dot(row, input);
                out.push(if l + 1 < n_layers { s.tanh() } else { s });
            }
            off += n_in * n_out + n_out;
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, ApproxError> {
        let mut c = MlpCache::default();
        self.forward_cached(x, &mut c)?;
        Ok(c.output().to_vec())
    }

    /// Accumulates `∂(grad_out · f(x))/∂params` into `grad` using a filled cache.
    pub fn backward(&self, cache: &MlpCache, grad_out: &[f64], grad: &mut [f64]) {
        let sizes = self.spec.sizes();
        let n_layers = sizes.len() - 1;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for l in 0..n_layers {
            offsets.push(off);
            off += sizes[l] * sizes[l + 1] + sizes[l + 1];
        }
        let mut delta = grad_out.to_vec();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let off = offsets[l];
            let input = &cache.acts[l];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                axpy(d, input, &mut grad[off + o * n_in..off + (o + 1) * n_in]);
                grad[off + n_in * n_out + o] += d;
            }
            if l > 0 {
                let w = &self.params[off..off + n_in * n_out];
                let mut prev = vec![0.0; n_in];
                for o in 0..n_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    axpy(d, &w[o * n_in..(o + 1) * n_in], &mut prev);
                }
                // Input to layer l is tanh output of layer l-1.
                for (p, a) in prev.iter_mut().zip(input) {
                    *p *= 1.0 - a * a;
                }
                delta = prev;
            }
        }
    }

    /// Directional derivative of the output along parameter direction `v` (forward mode).
    pub fn jvp(&self, cache: &MlpCache, v: &[f64]) -> Vec<f64> {
        let sizes = self.spec.sizes();
        let n_layers = sizes.len() - 1;
        let mut tangent = vec![0.0; sizes[0]];
        let mut off = 0;
        for l in 0..n_layers {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let vw = &v[off..off + n_in * n_out];
            let vb = &v[off + n_in * n_out..off + n_in * n_out + n_out];
            let input = &cache.acts[l];
            let out = &cache.acts[l + 1];
            let mut next = vec![0.0; n_out];
            for o in 0..n_out {
                let (row, vrow) = (&w[o * n_in..(o + 1) * n_in], &vw[o * n_in..(o + 1) * n_in]);
                let s = vb[o] + dot(vrow, input) + dot(row, &tangent);
                next[o] = if l + 1 < n_layers { s * (1.0 - out[o] * out[o]) } else { s };
            }
            tangent = next;
            off += n_in * n_out + n_out;
        }
        tangent
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `rows × cols` matrix (row-major) with orthonormal rows or columns, whichever is fewer.
fn orthogonal_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Vec<f64> {
    let (k, n) = if rows <= cols { (rows, cols) } else { (cols, rows) };
    // k orthonormal vectors of length n via Gram-Schmidt on Gaussian draws.
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    while basis.len() < k {
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= d * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    let mut m = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            m[r * cols + c] = if rows <= cols { basis[r][c] } else { basis[c][r] };
        }
    }
    m
}

const LOG_2PI: f64 = 1.837_877_066_409_345_3;

/// Diagonal Gaussian policy with a state-independent standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPolicy {
    pub mean: Mlp,
    pub log_std: Vec<f64>,
}

impl GaussianPolicy {
    /// Orthogonal init with a 0.01-scaled output layer and `log_std = log(init_std)`.
    pub fn new(obs_dim: usize, act_dim: usize, init_std: f64, rng: &mut impl Rng) -> Self {
        let mean = Mlp::orthogonal(MlpSpec::standard(obs_dim, act_dim), 0.01, rng);
        Self { mean, log_std: vec![init_std.ln(); act_dim] }
    }

    pub fn obs_dim(&self) -> usize {
        self.mean.spec.input_dim
    }

    pub fn act_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn num_params(&self) -> usize {
        self.mean.num_params() + self.log_std.len()
    }

    /// Mean-network parameters followed by `log_std`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.mean.params.clone();
        v.extend_from_slice(&self.log_std);
        v
    }

    pub fn unflatten(&self, flat: &[f64]) -> Result<Self, ApproxError> {
        check_dim(self.num_params(), flat.len())?;
        let n = self.mean.num_params();
        let mut p = self.clone();
        p.mean.params.copy_from_slice(&flat[..n]);
        p.log_std.copy_from_slice(&flat[n..]);
        Ok(p)
    }

    pub fn mean_action(&self, obs: &[f64]) -> Result<Vec<f64>, ApproxError> {
        self.mean.forward(obs)
    }

    fn log_density(&self, mean: &[f64], action: &[f64]) -> f64 {
        let mut lp = 0.0;
        for i in 0..action.len() {
            let z = (action[i] - mean[i]) * (-self.log_std[i]).exp();
            lp += -0.5 * z * z - self.log_std[i] - 0.5 * LOG_2PI;
        }
        lp
    }

    pub fn log_prob(&self, obs: &[f64], action: &[f64]) -> Result<f64, ApproxError> {
        check_dim(self.act_dim(), action.len())?;
        let mean = self.mean.forward(obs)?;
        Ok(self.log_density(&mean, action))
    }

    /// `a = mean + exp(log_std) ⊙ z` with its log-probability.
    pub fn sample(&self, obs: &[f64], rng: &mut impl Rng) -> Result<(Vec<f64>, f64), ApproxError> {
        let mean = self.mean.forward(obs)?;
        let action: Vec<f64> = mean
            .iter()
            .zip(&self.log_std)
            .map(|(m, ls)| m + ls.exp() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let lp = self.log_density(&mean, &action);
        Ok((action, lp))
    }

    /// Accumulates `scale · ∇θ log π(a|s)` into `grad` (flat layout); returns `log π(a|s)`.
    pub fn accumulate_grad_log_prob(
        &self,
        obs: &[f64],
        action: &[f64],
        scale: f64,
        cache: &mut MlpCache,
        grad: &mut [f64],
    ) -> Result<f64, ApproxError> {
        check_dim(self.act_dim(), action.len())?;
        self.mean.forward_cached(obs, cache)?;
        let mean = cache.output().to_vec();
        let n = self.mean.num_params();
        let mut g_mean = vec![0.0; action.len()];
        for i in 0..action.len() {
            let inv_var = (-2.0 * self.log_std[i]).exp();
            let d = action[i] - mean[i];
            g_mean[i] = scale * d * inv_var;
            grad[n + i] += scale * (d * d * inv_var - 1.0);
        }
        self.mean.backward(cache, &g_mean, &mut grad[..n]);
        Ok(self.log_density(&mean, action))
    }

    pub fn grad_log_prob(&self, obs: &[f64], action: &[f64]) -> Result<Vec<f64>, ApproxError> {
        let mut g = vec![0.0; self.num_params()];
        self.accumulate_grad_log_prob(obs, action, 1.0, &mut MlpCache::default(), &mut g)?;
        Ok(g)
    }
}

/// `KL(p ‖ q)` between diagonal Gaussians.
pub fn gaussian_kl(mean_p: &[f64], log_std_p: &[f64], mean_q: &[f64], log_std_q: &[f64]) -> f64 {
    let mut kl = 0.0;
    for i in 0..mean_p.len() {
        let var_p = (2.0 * log_std_p[i]).exp();
        let var_q = (2.0 * log_std_q[i]).exp();
        let d = mean_p[i] - mean_q[i];
        kl += log_std_q[i] - log_std_p[i] + (var_p + d * d) / (2.0 * var_q) - 0.5;
    }
    kl
}

/// Mean over `obs` of `KL(π_old(·|s) ‖ π_new(·|s))`.
pub fn mean_kl<S: AsRef<[f64]>>(old: &GaussianPolicy, new: &GaussianPolicy, obs: &[S]) -> Result<f64, ApproxError> {
    if obs.is_empty() {
        return Err(ApproxError::Dimension { expected: 1, got: 0 });
    }
    let mut total = 0.0;
    for s in obs {
        let mo = old.mean.forward(s.as_ref())?;
        let mn = new.mean.forward(s.as_ref())?;
        total += gaussian_kl(&mo, &old.log_std, &mn, &new.log_std);
    }
    Ok(total / obs.len() as f64)
}

/// Hessian of the mean KL at `new = policy`, times `v`, plus `damping · v`.
///
/// Uses the closed form for Gaussians: `Jμᵀ diag(σ⁻²) Jμ` averaged over `obs`
/// for the mean parameters and `2·I` for `log_std`.
pub fn fisher_vector_product<S: AsRef<[f64]>>(
    policy: &GaussianPolicy,
    obs: &[S],
    v: &[f64],
    damping: f64,
) -> Result<Vec<f64>, ApproxError> {
    check_dim(policy.num_params(), v.len())?;
    let n = policy.mean.num_params();
    let mut out = vec![0.0; v.len()];
    let inv_var: Vec<f64> = policy.log_std.iter().map(|ls| (-2.0 * ls).exp()).collect();
    let mut cache = MlpCache::default();
    if !obs.is_empty() {
        let scale = 1.0 / obs.len() as f64;
        for s in obs {
            policy.mean.forward_cached(s.as_ref(), &mut cache)?;
            let jv = policy.mean.jvp(&cache, &v[..n]);
            let u: Vec<f64> = jv.iter().zip(&inv_var).map(|(a, b)| scale * a * b).collect();
            policy.mean.backward(&cache, &u, &mut out[..n]);
        }
    }
    for i in n..v.len() {
        out[i] = 2.0 * v[i];
    }
    for (o, x) in out.iter_mut().zip(v) {
        *o += damping * x;
    }
    Ok(out)
}

/// Running mean and variance of observations, applied as clipped standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub enabled: bool,
    pub count: f64,
    pub mean: Vec<f64>,
    /// Sum of squared deviations from the mean.
    pub m2: Vec<f64>,
    pub clip: f64,
}

impl Normalizer {
    pub fn new(dim: usize, enabled: bool) -> Self {
        Self { enabled, count: 0.0, mean: vec![0.0; dim], m2: vec![0.0; dim], clip: 10.0 }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn std(&self) -> Vec<f64> {
        self.m2
            .iter()
            .map(|m| if self.count > 1.0 { (m / self.count).sqrt() } else { 1.0 })
            .collect()
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        if !self.enabled || self.count < 2.0 {
            return x.to_vec();
        }
        x.iter()
            .enumerate()
            .map(|(i, v)| {
                let sd = (self.m2[i] / self.count).sqrt().max(1e-8);
                ((v - self.mean[i]) / sd).clamp(-self.clip, self.clip)
            })
            .collect()
    }

    /// Merges a batch of raw observations into the running statistics.
    pub fn update(&mut self, batch: &[Vec<f64>]) {
        if !self.enabled || batch.is_empty() {
            return;
        }
        let nb = batch.len() as f64;
        let d = self.dim();
        let mut bm = vec![0.0; d];
        for x in batch {
            for i in 0..d {
                bm[i] += x[i];
            }
        }
        for m in &mut bm {
            *m /= nb;
        }
        let mut bm2 = vec![0.0; d];
        for x in batch {
            for i in 0..d {
                let e = x[i] - bm[i];
                bm2[i] += e * e;
            }
        }
        let total = self.count + nb;
        for i in 0..d {
            let delta = bm[i] - self.mean[i];
            self.mean[i] += delta * nb / total;
            self.m2[i] += bm2[i] + delta * delta * self.count * nb / total;
        }
        self.count = total;
    }
}

/// Policy, value function, and normalizer with the metadata needed to resume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub iteration: usize,
    pub timesteps: u64,
    pub contact_feedback: bool,
    pub policy: GaussianPolicy,
    pub value: Mlp,
    pub normalizer: Normalizer,
}

impl Checkpoint {
    pub fn obs_dim(&self) -> usize {
        self.policy.obs_dim()
    }

    pub fn save(&self, path: &Path) -> Result<(), ApproxError> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ApproxError> {
        let c: Checkpoint = serde_json::from_slice(&std::fs::read(path)?)?;
        if c.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(ApproxError::Version(c.format_version));
        }
        check_dim(c.policy.obs_dim(), c.normalizer.dim())?;
        check_dim(c.policy.obs_dim(), c.value.spec.input_dim)?;
        Ok(c)
    }

    /// Deterministic mean action for a raw observation (normalizer frozen).
    pub fn act(&self, raw_obs: &[f64]) -> Result<Vec<f64>, ApproxError> {
        self.policy.mean_action(&self.normalizer.normalize(raw_obs))
    }
}
