//! Gaussian-MLP policy and MLP value network with hand-written backprop.

use std::f64::consts::{E, PI};

use crate::error::{Error, Result};
use crate::exec::{self, Exec};
use crate::math::{affine_into, gaussian_sample, Mat, Rng};

/// Hidden layer widths used by default for both networks.
pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];
pub const INIT_LOG_STD: f64 = -0.5;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    w: Mat,
    b: Vec<f64>,
}

/// Fully connected network: tanh on every hidden layer, linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    layers: Vec<Layer>,
}

/// Per-sample activations kept for the backward pass. `acts[0]` is the
/// input, `acts[last]` the (linear) output.
#[derive(Debug, Clone, Default)]
pub struct Cache {
    acts: Vec<Vec<f64>>,
}

impl Cache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn init(sizes: &[usize], rng: &mut Rng) -> Self {
        assert!(sizes.len() >= 2 && sizes.iter().all(|&s| s >= 1));
        let layers = sizes
            .windows(2)
            .map(|io| {
                let (fan_in, fan_out) = (io[0], io[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.uniform_range(-limit, limit))
                    .collect();
                Layer {
                    w: Mat::from_vec(fan_out, fan_in, data).expect("sized above"),
                    b: vec![0.0; fan_out],
                }
            })
            .collect();
        Self {
            sizes: sizes.to_vec(),
            layers,
        }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        let layers = sizes
            .windows(2)
            .map(|io| Layer {
                w: Mat::zeros(io[1], io[0]),
                b: vec![0.0; io[1]],
            })
            .collect();
        Self {
            sizes: sizes.to_vec(),
            layers,
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.sizes.windows(2).map(|io| io[0] * io[1] + io[1]).sum()
    }

    /// Layout: for each layer, the weight matrix row-major then the bias.
    pub fn write_flat(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(l.w.as_slice());
            out.extend_from_slice(&l.b);
        }
    }

    pub fn read_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Dimension {
                what: "flat network parameters",
                expected: self.num_params(),
                got: flat.len(),
            });
        }
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.w.as_slice().len();
            l.w.as_mut_slice().copy_from_slice(&flat[at..at + nw]);
            at += nw;
            let nb = l.b.len();
            l.b.copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension {
                what: "network input",
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Forward pass, reusing the buffers in `cache`.
    pub fn forward_cached(&self, x: &[f64], cache: &mut Cache) -> Result<()> {
        self.check_input(x)?;
        let n_layers = self.layers.len();
        cache.acts.resize_with(n_layers + 1, Vec::new);
        cache.acts[0].clear();
        cache.acts[0].extend_from_slice(x);
        for (i, layer) in self.layers.iter().enumerate() {
            let (done, rest) = cache.acts.split_at_mut(i + 1);
            let out = &mut rest[0];
            out.resize(layer.b.len(), 0.0);
            affine_into(&layer.w, &layer.b, &done[i], out);
            if i + 1 < n_layers {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut cache = Cache::default();
        self.forward_cached(x, &mut cache)?;
        Ok(cache.acts.pop().unwrap())
    }

    /// Accumulates `J^T dout` into `grad` (length `num_params`), where `J` is
    /// the Jacobian of the output with respect to the flat parameters.
    pub fn backward_accumulate(&self, cache: &Cache, dout: &[f64], grad: &mut [f64]) {
        self.backward_with(cache, dout, grad, &mut Vec::new(), &mut Vec::new());
    }

    fn backward_with(
        &self,
        cache: &Cache,
        dout: &[f64],
        grad: &mut [f64],
        delta: &mut Vec<f64>,
        prev: &mut Vec<f64>,
    ) {
        debug_assert_eq!(grad.len(), self.num_params());
        let mut end = grad.len();
        delta.clear();
        delta.extend_from_slice(dout);
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let input = &cache.acts[i];
            let (rows, cols) = (layer.w.rows(), layer.w.cols());
            let off = end - rows * cols - rows;
            end = off;
            let (g_w, g_b) = grad[off..off + rows * cols + rows].split_at_mut(rows * cols);
            for (r, &d) in delta.iter().enumerate() {
                if d != 0.0 {
                    for (gw, x) in g_w[r * cols..(r + 1) * cols].iter_mut().zip(input) {
                        *gw += d * x;
                    }
                }
                g_b[r] += d;
            }
            if i > 0 {
                prev.clear();
                prev.resize(cols, 0.0);
                for (r, &d) in delta.iter().enumerate() {
                    if d != 0.0 {
                        for (p, w) in prev.iter_mut().zip(layer.w.row(r)) {
                            *p += w * d;
                        }
                    }
                }
                // input is the tanh output of the previous layer
                for (p, a) in prev.iter_mut().zip(input) {
                    *p *= 1.0 - a * a;
                }
                std::mem::swap(delta, prev);
            }
        }
    }
}

/// Diagonal Gaussian over actions.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDist {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl GaussianDist {
    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|l| l.exp()).collect()
    }

    pub fn log_prob(&self, a: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), self.mean.len());
        gaussian_log_prob(&self.mean, &self.log_std, &self.std(), a)
    }

    pub fn entropy(&self) -> f64 {
        let per_dim = 0.5 * (2.0 * PI * E).ln();
        self.log_std.iter().map(|ls| ls + per_dim).sum()
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        gaussian_sample(rng, &self.mean, &self.std())
    }

    /// Closed-form KL(self ‖ other).
    pub fn kl(&self, other: &GaussianDist) -> f64 {
        let mut kl = 0.0;
        for k in 0..self.mean.len() {
            let (ls_p, ls_q) = (self.log_std[k], other.log_std[k]);
            let var_p = (2.0 * ls_p).exp();
            let var_q = (2.0 * ls_q).exp();
            let dm = self.mean[k] - other.mean[k];
            kl += ls_q - ls_p + (var_p + dm * dm) / (2.0 * var_q) - 0.5;
        }
        kl
    }
}

fn gaussian_log_prob(mean: &[f64], log_std: &[f64], std: &[f64], a: &[f64]) -> f64 {
    let mut total = 0.0;
    for k in 0..mean.len() {
        let z = (a[k] - mean[k]) / std[k];
        total += -0.5 * z * z - log_std[k] - HALF_LN_2PI;
    }
    total
}

pub fn log_prob(d: &GaussianDist, a: &[f64]) -> f64 {
    d.log_prob(a)
}

pub fn entropy(d: &GaussianDist) -> f64 {
    d.entropy()
}

/// Policy parameters: MLP for the action mean plus a state-independent
/// log standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub mean_net: Mlp,
    pub log_std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueParams {
    pub net: Mlp,
}

fn layer_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut sizes = Vec::with_capacity(hidden.len() + 2);
    sizes.push(input);
    sizes.extend_from_slice(hidden);
    sizes.push(output);
    sizes
}

pub fn init_policy(obs_dim: usize, act_dim: usize, rng: &mut Rng) -> PolicyParams {
    init_policy_with(obs_dim, act_dim, &DEFAULT_HIDDEN, rng)
}

pub fn init_policy_with(
    obs_dim: usize,
    act_dim: usize,
    hidden: &[usize],
    rng: &mut Rng,
) -> PolicyParams {
    PolicyParams {
        mean_net: Mlp::init(&layer_sizes(obs_dim, hidden, act_dim), rng),
        log_std: vec![INIT_LOG_STD; act_dim],
    }
}

pub fn init_value(obs_dim: usize, rng: &mut Rng) -> ValueParams {
    init_value_with(obs_dim, &DEFAULT_HIDDEN, rng)
}

pub fn init_value_with(obs_dim: usize, hidden: &[usize], rng: &mut Rng) -> ValueParams {
    ValueParams {
        net: Mlp::init(&layer_sizes(obs_dim, hidden, 1), rng),
    }
}

impl PolicyParams {
    pub fn obs_dim(&self) -> usize {
        self.mean_net.input_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn hidden(&self) -> &[usize] {
        let s = self.mean_net.sizes();
        &s[1..s.len() - 1]
    }

    pub fn num_params(&self) -> usize {
        self.mean_net.num_params() + self.log_std.len()
    }

    /// Network parameters followed by the log-std entries.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.mean_net.write_flat(&mut out);
        out.extend_from_slice(&self.log_std);
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Dimension {
                what: "flat policy parameters",
                expected: self.num_params(),
                got: flat.len(),
            });
        }
        let n = self.mean_net.num_params();
        self.mean_net.read_flat(&flat[..n])?;
        self.log_std.copy_from_slice(&flat[n..]);
        Ok(())
    }

    pub fn unflatten(&self, flat: &[f64]) -> Result<Self> {
        let mut p = self.clone();
        p.set_flat(flat)?;
        Ok(p)
    }
}

impl ValueParams {
    pub fn obs_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn hidden(&self) -> &[usize] {
        let s = self.net.sizes();
        &s[1..s.len() - 1]
    }

    pub fn num_params(&self) -> usize {
        self.net.num_params()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.net.write_flat(&mut out);
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        self.net.read_flat(flat)
    }

    pub fn unflatten(&self, flat: &[f64]) -> Result<Self> {
        let mut v = self.clone();
        v.set_flat(flat)?;
        Ok(v)
    }
}

pub fn policy_forward(p: &PolicyParams, obs: &[f64]) -> Result<GaussianDist> {
    Ok(GaussianDist {
        mean: p.mean_net.forward(obs)?,
        log_std: p.log_std.clone(),
    })
}

pub fn value_forward(v: &ValueParams, obs: &[f64]) -> Result<f64> {
    Ok(v.net.forward(obs)?[0])
}

fn check_batch(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension {
            what,
            expected,
            got,
        });
    }
    Ok(())
}

fn check_rows(what: &'static str, rows: &[Vec<f64>], dim: usize) -> Result<()> {
    for r in rows {
        check_batch(what, dim, r.len())?;
    }
    Ok(())
}

pub fn policy_dists(p: &PolicyParams, obs: &[Vec<f64>]) -> Result<Vec<GaussianDist>> {
    policy_dists_with(Exec::default(), p, obs)
}

pub fn policy_dists_with(
    exec: Exec,
    p: &PolicyParams,
    obs: &[Vec<f64>],
) -> Result<Vec<GaussianDist>> {
    check_rows("observation", obs, p.obs_dim())?;
    Ok(exec::map_indexed(exec, obs.len(), |i| {
        policy_forward(p, &obs[i]).expect("dimensions checked")
    }))
}

/// log π(a_i | s_i) for every sample.
pub fn policy_log_probs(p: &PolicyParams, obs: &[Vec<f64>], acts: &[Vec<f64>]) -> Result<Vec<f64>> {
    policy_log_probs_with(Exec::default(), p, obs, acts)
}

pub fn policy_log_probs_with(
    exec: Exec,
    p: &PolicyParams,
    obs: &[Vec<f64>],
    acts: &[Vec<f64>],
) -> Result<Vec<f64>> {
    check_batch("action batch", obs.len(), acts.len())?;
    check_rows("observation", obs, p.obs_dim())?;
    check_rows("action", acts, p.act_dim())?;
    Ok(exec::map_indexed(exec, obs.len(), |i| {
        policy_forward(p, &obs[i])
            .expect("dimensions checked")
            .log_prob(&acts[i])
    }))
}

pub fn value_predictions(v: &ValueParams, obs: &[Vec<f64>]) -> Result<Vec<f64>> {
    value_predictions_with(Exec::default(), v, obs)
}

pub fn value_predictions_with(exec: Exec, v: &ValueParams, obs: &[Vec<f64>]) -> Result<Vec<f64>> {
    check_rows("observation", obs, v.obs_dim())?;
    Ok(exec::map_indexed(exec, obs.len(), |i| {
        value_forward(v, &obs[i]).expect("dimensions checked")
    }))
}

/// Exact gradient of `Σ_i c_i log π(a_i | s_i)` with respect to the flat
/// policy parameters (network first, then log-std).
pub fn policy_grad_weighted(
    p: &PolicyParams,
    obs: &[Vec<f64>],
    acts: &[Vec<f64>],
    coeffs: &[f64],
) -> Result<Vec<f64>> {
    policy_grad_weighted_with(Exec::default(), p, obs, acts, coeffs)
}

pub fn policy_grad_weighted_with(
    exec: Exec,
    p: &PolicyParams,
    obs: &[Vec<f64>],
    acts: &[Vec<f64>],
    coeffs: &[f64],
) -> Result<Vec<f64>> {
    let batch = PolicyBatch::forward_with(exec, p, obs)?;
    batch.grad_weighted_with(exec, p, acts, coeffs)
}

/// Mean-network activations for a whole batch. One forward pass then serves
/// both the log-probabilities and the weighted gradient at the same
/// parameters.
#[derive(Debug, Clone)]
pub struct PolicyBatch {
    caches: Vec<Cache>,
}

impl PolicyBatch {
    pub fn forward_with(exec: Exec, p: &PolicyParams, obs: &[Vec<f64>]) -> Result<Self> {
        check_rows("observation", obs, p.obs_dim())?;
        let caches = exec::map_indexed(exec, obs.len(), |i| {
            let mut c = Cache::default();
            p.mean_net.forward_cached(&obs[i], &mut c).expect("dimensions checked");
            c
        });
        Ok(Self { caches })
    }

    pub fn len(&self) -> usize {
        self.caches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.caches.is_empty()
    }

    pub fn dists(&self, p: &PolicyParams) -> Vec<GaussianDist> {
        self.caches
            .iter()
            .map(|c| GaussianDist {
                mean: c.output().to_vec(),
                log_std: p.log_std.clone(),
            })
            .collect()
    }

    pub fn log_probs(&self, p: &PolicyParams, acts: &[Vec<f64>]) -> Result<Vec<f64>> {
        check_batch("action batch", self.len(), acts.len())?;
        check_rows("action", acts, p.act_dim())?;
        let std: Vec<f64> = p.log_std.iter().map(|l| l.exp()).collect();
        Ok(self
            .caches
            .iter()
            .zip(acts)
            .map(|(c, a)| gaussian_log_prob(c.output(), &p.log_std, &std, a))
            .collect())
    }

    /// Gradient of `Σ_i c_i log π(a_i | s_i)`. `p` must be the parameters
    /// the batch was built with.
    pub fn grad_weighted_with(
        &self,
        exec: Exec,
        p: &PolicyParams,
        acts: &[Vec<f64>],
        coeffs: &[f64],
    ) -> Result<Vec<f64>> {
        check_batch("action batch", self.len(), acts.len())?;
        check_batch("coefficients", self.len(), coeffs.len())?;
        check_rows("action", acts, p.act_dim())?;
        let n_net = p.mean_net.num_params();
        let act_dim = p.act_dim();
        let std: Vec<f64> = p.log_std.iter().map(|l| l.exp()).collect();
        Ok(exec::chunked_sum(exec, self.len(), p.num_params(), |range, grad| {
            let (mut delta, mut prev) = (Vec::new(), Vec::new());
            let mut dmean = vec![0.0; act_dim];
            let (g_net, g_log_std) = grad.split_at_mut(n_net);
            for i in range {
                let c = coeffs[i];
                if c == 0.0 {
                    continue;
                }
                let cache = &self.caches[i];
                let mean = cache.output();
                for k in 0..act_dim {
                    let z = (acts[i][k] - mean[k]) / std[k];
                    // d/dμ log N = z/σ, d/dlogσ log N = z² − 1
                    dmean[k] = c * z / std[k];
                    g_log_std[k] += c * (z * z - 1.0);
                }
                p.mean_net.backward_with(cache, &dmean, g_net, &mut delta, &mut prev);
            }
        }))
    }
}

/// Mean squared error `(1/B) Σ (target_i − V(s_i))²`.
pub fn value_mse(v: &ValueParams, obs: &[Vec<f64>], targets: &[f64]) -> Result<f64> {
    check_batch("value targets", obs.len(), targets.len())?;
    if obs.is_empty() {
        return Err(Error::Config("empty value batch".into()));
    }
    let preds = value_predictions(v, obs)?;
    Ok(preds
        .iter()
        .zip(targets)
        .map(|(p, t)| (t - p) * (t - p))
        .sum::<f64>()
        / obs.len() as f64)
}

/// Gradient of [`value_mse`] with respect to the flat value parameters.
pub fn value_grad_mse(v: &ValueParams, obs: &[Vec<f64>], targets: &[f64]) -> Result<Vec<f64>> {
    value_grad_mse_with(Exec::default(), v, obs, targets)
}

pub fn value_grad_mse_with(
    exec: Exec,
    v: &ValueParams,
    obs: &[Vec<f64>],
    targets: &[f64],
) -> Result<Vec<f64>> {
    check_batch("value targets", obs.len(), targets.len())?;
    check_rows("observation", obs, v.obs_dim())?;
    if obs.is_empty() {
        return Err(Error::Config("empty value batch".into()));
    }
    let scale = -2.0 / obs.len() as f64;
    Ok(exec::chunked_sum(exec, obs.len(), v.num_params(), |range, grad| {
        let mut cache = Cache::default();
        let (mut delta, mut prev) = (Vec::new(), Vec::new());
        for i in range {
            v.net
                .forward_cached(&obs[i], &mut cache)
                .expect("dimensions checked");
            let resid = targets[i] - cache.output()[0];
            v.net
                .backward_with(&cache, &[scale * resid], grad, &mut delta, &mut prev);
        }
    }))
}
