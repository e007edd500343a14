//! Exact draws from the splitting law on a fixed manifold `𝓜_ς`.

use crate::error::{invalid, Result};
use crate::rng::seeded;
use crate::samplers::{AcceptanceStats, SampleTrace, SamplerConfig, SamplerKind, TraceMeta};
use crate::split_diag::AssignmentMap;
use crate::synth::GroundTruth;

use super::dirichlet::{sample_symmetric_dirichlet, splitting_alpha};

fn place(gt: &GroundTruth, map: &AssignmentMap, c: &[f64]) -> Vec<f64> {
    let p = gt.input_dim();
    let width = map.width();
    let mut flat = vec![0.0; width * (p + 1)];
    for (m, &t) in map.sigma.iter().enumerate() {
        let r = c[m].sqrt();
        for (dst, src) in flat[m * p..(m + 1) * p]
            .iter_mut()
            .zip(gt.params.first_layer_row(t))
        {
            *dst = r * src;
        }
        flat[width * p + m] = r * gt.params.second_layer()[t];
    }
    flat
}

/// I.i.d. draws: every group gets `c ~ Dir(α,…,α)` with `α = (p+1)/2` and
/// neuron `m` is set to `√c_m · ω*_{ς(m)}`.
///
/// `init_params` holds the balanced point `c_m = 1/k`.
pub fn sample_manifold_posterior(
    gt: &GroundTruth,
    sigma_map: &AssignmentMap,
    draws: usize,
    seed: u64,
) -> Result<SampleTrace> {
    if !sigma_map.surjective {
        return Err(invalid("manifold sampling needs a surjective assignment"));
    }
    if sigma_map.m_star() != gt.width() {
        return Err(invalid("assignment map and ground truth disagree on M*"));
    }
    if draws == 0 {
        return Err(invalid("draws must be >= 1"));
    }
    let alpha = splitting_alpha(gt.input_dim());
    let mut rng = seeded(seed);
    let width = sigma_map.width();
    let mut c = vec![0.0; width];
    let mut rows = Vec::with_capacity(draws);
    for _ in 0..draws {
        for group in &sigma_map.groups {
            let share = sample_symmetric_dirichlet(&mut rng, group.len(), alpha);
            for (&m, v) in group.iter().zip(share) {
                c[m] = v;
            }
        }
        rows.push(place(gt, sigma_map, &c));
    }
    let balanced: Vec<f64> = (0..width).map(|m| 1.0 / sigma_map.k_of(m) as f64).collect();
    Ok(SampleTrace {
        chain_id: 0,
        sampler_kind: SamplerKind::Manifold,
        width,
        input_dim: gt.input_dim(),
        config: SamplerConfig {
            warmup_steps: 0,
            kept_draws: draws,
            thinning: 1,
            seed,
            ..SamplerConfig::default()
        },
        init_params: place(gt, sigma_map, &balanced),
        acceptance: AcceptanceStats {
            mean_accept: 1.0,
            transitions: draws,
            ..AcceptanceStats::default()
        },
        meta: TraceMeta {
            gt_reference: Some(gt.id()),
            ..TraceMeta::default()
        },
        draws: rows,
    })
}
