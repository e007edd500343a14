//! One-hidden-layer ReLU network `f(x) = Σ_m w2[m] · max(w1[m]·x, 0)` without biases,
//! its L2-regularised Gaussian objective, and the exact gradient.
//!
//! Parameters are stored flat as `[W1 row-major (M×p), w2 (M)]`, so the flat
//! dimension is `M·(p+1)`. Neuron `m` owns the block `ω_m = (w1[m], w2[m])`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::synth::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    width: usize,
    input_dim: usize,
    flat: Vec<f64>,
}

impl NetworkParams {
    pub fn zeros(width: usize, input_dim: usize) -> Self {
        Self {
            width,
            input_dim,
            flat: vec![0.0; width * (input_dim + 1)],
        }
    }

    pub fn from_flat(width: usize, input_dim: usize, flat: Vec<f64>) -> Result<Self> {
        if width == 0 || input_dim == 0 {
            return Err(invalid("width and input dimension must be positive"));
        }
        let expected = width * (input_dim + 1);
        if flat.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: flat.len(),
            });
        }
        Ok(Self {
            width,
            input_dim,
            flat,
        })
    }

    /// Builds parameters from first-layer rows and second-layer weights.
    pub fn from_layers(first_layer: &[Vec<f64>], second_layer: &[f64]) -> Result<Self> {
        let width = first_layer.len();
        if width == 0 || second_layer.len() != width {
            return Err(invalid("first and second layer must have the same nonzero width"));
        }
        let input_dim = first_layer[0].len();
        let mut flat = Vec::with_capacity(width * (input_dim + 1));
        for row in first_layer {
            if row.len() != input_dim {
                return Err(Error::DimensionMismatch {
                    expected: input_dim,
                    got: row.len(),
                });
            }
            flat.extend_from_slice(row);
        }
        flat.extend_from_slice(second_layer);
        Self::from_flat(width, input_dim, flat)
    }

    /// Rebuilds parameters from neuron blocks `ω_m = (w1[m], w2[m])`.
    pub fn from_blocks(blocks: &[Vec<f64>]) -> Result<Self> {
        let width = blocks.len();
        if width == 0 {
            return Err(invalid("no blocks"));
        }
        let q = blocks[0].len();
        if q < 2 {
            return Err(invalid("blocks must have length p+1 >= 2"));
        }
        let input_dim = q - 1;
        let mut flat = vec![0.0; width * q];
        for (m, block) in blocks.iter().enumerate() {
            if block.len() != q {
                return Err(Error::DimensionMismatch {
                    expected: q,
                    got: block.len(),
                });
            }
            flat[m * input_dim..(m + 1) * input_dim].copy_from_slice(&block[..input_dim]);
            flat[width * input_dim + m] = block[input_dim];
        }
        Self::from_flat(width, input_dim, flat)
    }

    /// Number of hidden neurons `M`.
    pub fn width(&self) -> usize {
        self.width
    }

    /// Input dimension `p`.
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Flat dimension `d = M·(p+1)`.
    pub fn dim(&self) -> usize {
        self.flat.len()
    }

    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.flat
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.flat
    }

    pub fn first_layer_row(&self, m: usize) -> &[f64] {
        &self.flat[m * self.input_dim..(m + 1) * self.input_dim]
    }

    pub fn first_layer_row_mut(&mut self, m: usize) -> &mut [f64] {
        let p = self.input_dim;
        &mut self.flat[m * p..(m + 1) * p]
    }

    pub fn second_layer(&self) -> &[f64] {
        &self.flat[self.width * self.input_dim..]
    }

    pub fn second_layer_mut(&mut self) -> &mut [f64] {
        let off = self.width * self.input_dim;
        &mut self.flat[off..]
    }

    /// First layer as an owned `M×p` row list.
    pub fn first_layer(&self) -> Vec<Vec<f64>> {
        (0..self.width)
            .map(|m| self.first_layer_row(m).to_vec())
            .collect()
    }

    pub fn block(&self, m: usize) -> Vec<f64> {
        let mut b = Vec::with_capacity(self.input_dim + 1);
        b.extend_from_slice(self.first_layer_row(m));
        b.push(self.second_layer()[m]);
        b
    }

    pub fn blocks(&self) -> Vec<Vec<f64>> {
        (0..self.width).map(|m| self.block(m)).collect()
    }

    /// Squared L2 norm of all weights.
    pub fn norm_sq(&self) -> f64 {
        self.flat.iter().map(|v| v * v).sum()
    }

    /// Reorders neurons: neuron `i` of the result is neuron `perm[i]` of `self`.
    pub fn permute_neurons(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.width {
            return Err(Error::DimensionMismatch {
                expected: self.width,
                got: perm.len(),
            });
        }
        let mut seen = vec![false; self.width];
        for &j in perm {
            if j >= self.width || std::mem::replace(&mut seen[j], true) {
                return Err(invalid("not a permutation"));
            }
        }
        let blocks = self.blocks();
        let permuted: Vec<Vec<f64>> = perm.iter().map(|&j| blocks[j].clone()).collect();
        Self::from_blocks(&permuted)
    }

    pub fn is_finite(&self) -> bool {
        self.flat.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    /// L2 penalty weight; the implied prior is `N(0, (2λ)⁻¹ I)`.
    pub lambda: f64,
    /// Gaussian likelihood standard deviation.
    pub noise_sigma: f64,
}

impl ObjectiveConfig {
    pub fn new(lambda: f64, noise_sigma: f64) -> Result<Self> {
        let cfg = Self {
            lambda,
            noise_sigma,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(invalid(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.noise_sigma > 0.0) || !self.noise_sigma.is_finite() {
            return Err(invalid(format!(
                "noise_sigma must be > 0, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            noise_sigma: 1.0,
        }
    }
}

/// Kahan–Babuška (Neumaier) accumulator.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub(crate) fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub(crate) fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = CompensatedSum::default();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

#[inline]
fn relu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        0.0
    }
}

#[inline]
fn forward_flat(flat: &[f64], width: usize, p: usize, x: &[f64]) -> f64 {
    let (w1, w2) = flat.split_at(width * p);
    let mut acc = CompensatedSum::default();
    for m in 0..width {
        let row = &w1[m * p..(m + 1) * p];
        let z: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
        acc.add(w2[m] * relu(z));
    }
    acc.value()
}

/// Network output at a single input.
pub fn forward(params: &NetworkParams, x: &[f64]) -> Result<f64> {
    if x.len() != params.input_dim {
        return Err(Error::DimensionMismatch {
            expected: params.input_dim,
            got: x.len(),
        });
    }
    Ok(forward_flat(&params.flat, params.width, params.input_dim, x))
}

/// Network outputs at every row of a row-major `n×p` input matrix.
pub fn forward_batch(params: &NetworkParams, inputs: &[f64]) -> Result<Vec<f64>> {
    let p = params.input_dim;
    if inputs.len() % p != 0 {
        return Err(invalid("input matrix length is not a multiple of p"));
    }
    Ok(inputs
        .chunks_exact(p)
        .map(|x| forward_flat(&params.flat, params.width, p, x))
        .collect())
}

fn check_problem(params: &NetworkParams, data: &Dataset, cfg: &ObjectiveConfig) -> Result<()> {
    cfg.validate()?;
    if data.len() == 0 {
        return Err(invalid("dataset is empty"));
    }
    if data.input_dim() != params.input_dim {
        return Err(Error::DimensionMismatch {
            expected: params.input_dim,
            got: data.input_dim(),
        });
    }
    Ok(())
}

/// Regularised objective `Σ_i (y_i − f(x_i))² / (2σ²) + λ‖w‖²`.
pub fn objective(params: &NetworkParams, data: &Dataset, cfg: &ObjectiveConfig) -> Result<f64> {
    check_problem(params, data, cfg)?;
    let inv = 1.0 / (2.0 * cfg.noise_sigma * cfg.noise_sigma);
    let data_term = compensated_sum(data.iter().map(|(x, y)| {
        let r = y - forward_flat(&params.flat, params.width, params.input_dim, x);
        r * r * inv
    }));
    let penalty = cfg.lambda * compensated_sum(params.flat.iter().map(|v| v * v));
    Ok(data_term + penalty)
}

/// Exact gradient of [`objective`], with `φ'(0) = 0`.
pub fn gradient(params: &NetworkParams, data: &Dataset, cfg: &ObjectiveConfig) -> Result<Vec<f64>> {
    check_problem(params, data, cfg)?;
    let mut grad = vec![0.0; params.dim()];
    objective_and_gradient_flat(
        &params.flat,
        params.width,
        params.input_dim,
        data,
        cfg,
        &mut grad,
    );
    Ok(grad)
}

/// Full Gaussian log-likelihood `−Σ_i [(y_i − f(x_i))²/(2σ²) + ½ log(2πσ²)]`.
pub fn log_likelihood(params: &NetworkParams, data: &Dataset, cfg: &ObjectiveConfig) -> Result<f64> {
    check_problem(params, data, cfg)?;
    let point = pointwise_log_likelihood(params, data, cfg);
    Ok(compensated_sum(point))
}

/// Per-observation Gaussian log-density. Assumes shapes were already checked.
pub(crate) fn pointwise_log_likelihood(
    params: &NetworkParams,
    data: &Dataset,
    cfg: &ObjectiveConfig,
) -> Vec<f64> {
    let s2 = cfg.noise_sigma * cfg.noise_sigma;
    let norm = 0.5 * (2.0 * std::f64::consts::PI * s2).ln();
    data.iter()
        .map(|(x, y)| {
            let r = y - forward_flat(&params.flat, params.width, params.input_dim, x);
            -(r * r / (2.0 * s2) + norm)
        })
        .collect()
}

/// Objective and gradient on a raw flat vector, fused into one data pass.
///
/// This is the hot loop of every sampler; shapes are the caller's
/// responsibility. `grad` is overwritten.
pub fn objective_and_gradient_flat(
    flat: &[f64],
    width: usize,
    p: usize,
    data: &Dataset,
    cfg: &ObjectiveConfig,
    grad: &mut [f64],
) -> f64 {
    debug_assert_eq!(flat.len(), width * (p + 1));
    debug_assert_eq!(grad.len(), flat.len());
    let inv_s2 = 1.0 / (cfg.noise_sigma * cfg.noise_sigma);
    let (w1, w2) = flat.split_at(width * p);
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut data_term = CompensatedSum::default();
    let mut act = vec![0.0; width];
    {
        let (g1, g2) = grad.split_at_mut(width * p);
        for (x, y) in data.iter() {
            let mut f = 0.0;
            for m in 0..width {
                let row = &w1[m * p..(m + 1) * p];
                let z: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
                let a = relu(z);
                act[m] = a;
                f += w2[m] * a;
            }
            let r = f - y;
            data_term.add(0.5 * r * r * inv_s2);
            let rs = r * inv_s2;
            for m in 0..width {
                if act[m] > 0.0 {
                    g2[m] += rs * act[m];
                    let coef = rs * w2[m];
                    let grow = &mut g1[m * p..(m + 1) * p];
                    for (g, xi) in grow.iter_mut().zip(x) {
                        *g += coef * xi;
                    }
                }
            }
        }
    }
    let mut penalty = CompensatedSum::default();
    for (g, w) in grad.iter_mut().zip(flat) {
        *g += 2.0 * cfg.lambda * w;
        penalty.add(w * w);
    }
    data_term.value() + cfg.lambda * penalty.value()
}
