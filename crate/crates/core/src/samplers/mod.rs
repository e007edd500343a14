//! Two-stage posterior approximation: Adam MAP, then SGLD or HMC.

mod adam;
mod ensemble;
mod hmc;
mod sgld;

pub use adam::{adam_map, AdamOptions};
pub use ensemble::{chain_seed, gaussian_init, run_chain, run_ensemble, EnsembleSpec};
pub use hmc::{hmc_chain, hmc_sample, leapfrog, HmcState};
pub use sgld::{sgld_chain, sgld_sample};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::relu_net::{objective_and_gradient_flat, NetworkParams, ObjectiveConfig};
use crate::synth::{Dataset, DatasetMeta};

/// Shown in every report header.
pub const SAMPLER_NOTICE: &str = "NUTS is replaced by fixed-length leapfrog HMC with dual-averaging \
step size and diagonal mass adaptation (windowed warmup, target acceptance 0.8)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Sgld,
    Hmc,
    /// Exact draws from the splitting law on a manifold, not a Markov chain.
    Manifold,
}

impl SamplerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SamplerKind::Sgld => "sgld",
            SamplerKind::Hmc => "hmc",
            SamplerKind::Manifold => "manifold",
        }
    }
}

impl std::str::FromStr for SamplerKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgld" => Ok(SamplerKind::Sgld),
            "hmc" => Ok(SamplerKind::Hmc),
            "manifold" => Ok(SamplerKind::Manifold),
            other => Err(invalid(format!("unknown sampler `{other}` (expected one of: sgld, hmc, manifold)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub warmup_steps: usize,
    pub kept_draws: usize,
    pub thinning: usize,
    pub target_accept: f64,
    /// Initial HMC step size; refined during warmup.
    pub step_size: f64,
    pub leapfrog_steps: usize,
    /// Relative uniform jitter applied to the HMC step size per transition.
    pub step_jitter: f64,
    pub sgld_step: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            warmup_steps: 1000,
            kept_draws: 1000,
            thinning: 10,
            target_accept: 0.8,
            step_size: 0.01,
            leapfrog_steps: 16,
            step_jitter: 0.1,
            sgld_step: 1e-5,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kept_draws == 0 || self.thinning == 0 {
            return Err(invalid("kept_draws and thinning must be >= 1"));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(invalid("target_accept must lie in (0, 1)"));
        }
        if !(self.step_size > 0.0) || self.leapfrog_steps == 0 {
            return Err(invalid("HMC needs a positive step size and >= 1 leapfrog step"));
        }
        if !(0.0..1.0).contains(&self.step_jitter) {
            return Err(invalid("step_jitter must lie in [0, 1)"));
        }
        if !(self.sgld_step >= 0.0) {
            return Err(invalid("sgld_step must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceStats {
    /// Mean Metropolis acceptance probability after warmup (1 for SGLD).
    pub mean_accept: f64,
    pub divergences: usize,
    pub transitions: usize,
    pub final_step_size: f64,
    pub inv_mass: Vec<f64>,
    /// More than 10% of post-warmup transitions diverged.
    pub divergence_warning: bool,
}

/// Provenance needed to rerun a chain.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub gt_reference: Option<String>,
    pub dataset: Option<DatasetMeta>,
    pub objective: Option<ObjectiveConfig>,
    pub adam: Option<AdamOptions>,
    /// Starting point before Adam, when Adam was used.
    pub pre_adam_init: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleTrace {
    pub chain_id: usize,
    pub sampler_kind: SamplerKind,
    pub width: usize,
    pub input_dim: usize,
    pub config: SamplerConfig,
    /// Sampler start (the MAP estimate for ensemble chains).
    pub init_params: Vec<f64>,
    pub acceptance: AcceptanceStats,
    pub meta: TraceMeta,
    pub draws: Vec<Vec<f64>>,
}

impl SampleTrace {
    pub fn dim(&self) -> usize {
        self.width * (self.input_dim + 1)
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn draw_params(&self, i: usize) -> NetworkParams {
        NetworkParams::from_flat(self.width, self.input_dim, self.draws[i].clone())
            .expect("trace rows have length d")
    }

    pub fn init_network(&self) -> NetworkParams {
        NetworkParams::from_flat(self.width, self.input_dim, self.init_params.clone())
            .expect("init has length d")
    }

    pub fn check_shape(&self) -> Result<()> {
        let d = self.dim();
        if self.init_params.len() != d || self.draws.iter().any(|r| r.len() != d) {
            return Err(invalid(format!("trace rows must have length {d}")));
        }
        Ok(())
    }
}

/// Negative log-density (up to a constant) with gradient.
pub trait Potential {
    fn dim(&self) -> usize;

    /// Returns `U(q)` and writes `∇U(q)` into `grad`.
    fn energy_grad(&self, q: &[f64], grad: &mut [f64]) -> f64;
}

/// `U(w) = objective(w)` for a fixed dataset.
pub struct BnnPotential<'a> {
    pub width: usize,
    pub input_dim: usize,
    pub data: &'a Dataset,
    pub cfg: ObjectiveConfig,
}

impl<'a> BnnPotential<'a> {
    pub fn new(width: usize, data: &'a Dataset, cfg: ObjectiveConfig) -> Result<Self> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(invalid("dataset is empty"));
        }
        Ok(Self {
            width,
            input_dim: data.input_dim(),
            data,
            cfg,
        })
    }
}

impl Potential for BnnPotential<'_> {
    fn dim(&self) -> usize {
        self.width * (self.input_dim + 1)
    }

    fn energy_grad(&self, q: &[f64], grad: &mut [f64]) -> f64 {
        objective_and_gradient_flat(q, self.width, self.input_dim, self.data, &self.cfg, grad)
    }
}

/// Gaussian `N(mean, Σ)` given by its precision matrix `Σ⁻¹`.
#[derive(Debug, Clone)]
pub struct GaussianPotential {
    pub mean: Vec<f64>,
    pub precision: Vec<Vec<f64>>,
}

impl GaussianPotential {
    pub fn standard(dim: usize) -> Self {
        let precision = (0..dim)
            .map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self {
            mean: vec![0.0; dim],
            precision,
        }
    }

    /// Two-dimensional Gaussian from its covariance matrix.
    pub fn from_covariance_2d(mean: [f64; 2], cov: [[f64; 2]; 2]) -> Self {
        let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
        let precision = vec![
            vec![cov[1][1] / det, -cov[0][1] / det],
            vec![-cov[1][0] / det, cov[0][0] / det],
        ];
        Self {
            mean: mean.to_vec(),
            precision,
        }
    }
}

impl Potential for GaussianPotential {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn energy_grad(&self, q: &[f64], grad: &mut [f64]) -> f64 {
        let dev: Vec<f64> = q.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let mut energy = 0.0;
        for (i, row) in self.precision.iter().enumerate() {
            let g: f64 = row.iter().zip(&dev).map(|(a, b)| a * b).sum();
            grad[i] = g;
            energy += 0.5 * dev[i] * g;
        }
        energy
    }
}
