use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::relu_net::{NetworkParams, ObjectiveConfig};
use crate::rng::{derive_seed, seeded};
use crate::samplers::{
    adam_map, hmc_chain, sgld_chain, AdamOptions, SampleTrace, SamplerConfig, SamplerKind,
};
use crate::synth::{Dataset, GroundTruth};

/// Everything a grid cell needs besides the data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleSpec {
    pub width: usize,
    pub chains: usize,
    pub kind: SamplerKind,
    pub objective: ObjectiveConfig,
    pub sampler: SamplerConfig,
    pub adam: AdamOptions,
    /// Standard deviation of the i.i.d. Gaussian initialisation.
    pub init_std: f64,
    pub master_seed: u64,
}

impl EnsembleSpec {
    pub fn new(width: usize, chains: usize, kind: SamplerKind, master_seed: u64) -> Self {
        Self {
            width,
            chains,
            kind,
            objective: ObjectiveConfig::default(),
            sampler: SamplerConfig::default(),
            adam: AdamOptions::default(),
            init_std: 0.1,
            master_seed,
        }
    }
}

pub fn chain_seed(master: u64, chain: usize) -> u64 {
    derive_seed(master, chain as u64)
}

/// I.i.d. `N(0, std²)` weights.
pub fn gaussian_init(width: usize, input_dim: usize, std: f64, seed: u64) -> NetworkParams {
    let mut rng = seeded(seed);
    let normal = Normal::new(0.0, std).expect("finite std");
    let flat = (0..width * (input_dim + 1))
        .map(|_| normal.sample(&mut rng))
        .collect();
    NetworkParams::from_flat(width, input_dim, flat).expect("length matches")
}

/// Gaussian init, Adam MAP, then the sampler, all seeded from `chain_seed`.
pub fn run_chain(
    gt: Option<&GroundTruth>,
    data: &Dataset,
    spec: &EnsembleSpec,
    chain: usize,
) -> Result<SampleTrace> {
    let seed = chain_seed(spec.master_seed, chain);
    let init = gaussian_init(spec.width, data.input_dim(), spec.init_std, derive_seed(seed, 0));
    let map = adam_map(&init, data, &spec.objective, &spec.adam)?;
    let sampler = SamplerConfig {
        seed: derive_seed(seed, 1),
        ..spec.sampler
    };
    let mut trace = match spec.kind {
        SamplerKind::Hmc => hmc_chain(&map, data, &spec.objective, &sampler)?,
        SamplerKind::Sgld => sgld_chain(&map, data, &spec.objective, &sampler)?,
        SamplerKind::Manifold => {
            return Err(crate::error::invalid(
                "manifold draws come from the theory oracle, not an ensemble",
            ))
        }
    };
    trace.chain_id = chain;
    trace.meta.gt_reference = gt.map(|g| g.id());
    trace.meta.adam = Some(spec.adam);
    trace.meta.pre_adam_init = Some(init.into_flat());
    Ok(trace)
}

/// Runs `spec.chains` independent chains (in parallel with the `parallel`
/// feature). Results are ordered by chain id regardless of scheduling.
pub fn run_ensemble(
    gt: Option<&GroundTruth>,
    data: &Dataset,
    spec: &EnsembleSpec,
) -> Result<Vec<SampleTrace>> {
    if spec.chains == 0 {
        return Err(crate::error::invalid("chains must be >= 1"));
    }
    let wrap = |chain: usize| {
        run_chain(gt, data, spec, chain).map_err(|e| Error::Chain {
            chain,
            source: Box::new(e),
        })
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..spec.chains).into_par_iter().map(wrap).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..spec.chains).map(wrap).collect()
    }
}
