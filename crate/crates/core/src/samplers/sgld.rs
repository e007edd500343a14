use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::relu_net::{NetworkParams, ObjectiveConfig};
use crate::rng::seeded;
use crate::samplers::{
    AcceptanceStats, BnnPotential, Potential, SampleTrace, SamplerConfig, SamplerKind, TraceMeta,
};
use crate::synth::Dataset;

/// Full-batch Langevin iteration `w ← w − (ε/2)∇U(w) + N(0, ε I)`.
///
/// Runs `warmup_steps` unrecorded iterations, then keeps every
/// `thinning`-th iterate until `kept_draws` rows are collected.
pub fn sgld_sample<P: Potential, R: Rng>(
    target: &P,
    init: &[f64],
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<(Vec<Vec<f64>>, AcceptanceStats)> {
    cfg.validate()?;
    let d = target.dim();
    let eps = cfg.sgld_step;
    let noise_scale = eps.sqrt();
    let mut w = init.to_vec();
    let mut grad = vec![0.0; d];
    let mut draws = Vec::with_capacity(cfg.kept_draws);
    let total = cfg.warmup_steps + cfg.kept_draws * cfg.thinning;
    for step in 0..total {
        target.energy_grad(&w, &mut grad);
        for (wi, gi) in w.iter_mut().zip(&grad) {
            let xi: f64 = rng.sample(StandardNormal);
            *wi += -0.5 * eps * gi + noise_scale * xi;
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step });
        }
        let kept = step + 1;
        if kept > cfg.warmup_steps && (kept - cfg.warmup_steps) % cfg.thinning == 0 {
            draws.push(w.clone());
        }
    }
    let stats = AcceptanceStats {
        mean_accept: 1.0,
        divergences: 0,
        transitions: total - cfg.warmup_steps,
        final_step_size: eps,
        inv_mass: Vec::new(),
        divergence_warning: false,
    };
    Ok((draws, stats))
}

/// SGLD chain on the network posterior, seeded by `sampler_cfg.seed`.
pub fn sgld_chain(
    init: &NetworkParams,
    data: &Dataset,
    cfg: &ObjectiveConfig,
    sampler_cfg: &SamplerConfig,
) -> Result<SampleTrace> {
    let target = BnnPotential::new(init.width(), data, *cfg)?;
    let mut rng = seeded(sampler_cfg.seed);
    let (draws, acceptance) = sgld_sample(&target, init.flat(), sampler_cfg, &mut rng)?;
    Ok(SampleTrace {
        chain_id: 0,
        sampler_kind: SamplerKind::Sgld,
        width: init.width(),
        input_dim: init.input_dim(),
        config: *sampler_cfg,
        init_params: init.flat().to_vec(),
        acceptance,
        meta: TraceMeta {
            dataset: Some(data.meta.clone()),
            objective: Some(*cfg),
            ..TraceMeta::default()
        },
        draws,
    })
}
