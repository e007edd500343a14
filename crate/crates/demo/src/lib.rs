//! Browser demo: three small experiments returning JSON for `www/index.html`.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use nonident::rng::seeded;
use nonident::samplers::{run_chain, EnsembleSpec, SamplerKind};
use nonident::symmetry_diag::track_chain;
use nonident::synth::{make_ground_truth, sample_dataset};
use nonident::theory_oracle::{
    beta_marginal, mu_k_alpha, sample_symmetric_dirichlet, splitting_alpha, DirichletLaw,
};

#[derive(Debug, Serialize)]
pub struct SplitLaw {
    pub k: usize,
    pub alpha: f64,
    pub bin_centers: Vec<f64>,
    /// Normalised histogram of pooled `c_m`.
    pub density: Vec<f64>,
    /// `Beta(α, (k−1)α)` density at the bin centers.
    pub beta_pdf: Vec<f64>,
    pub mean_sqrt_c: f64,
    pub mu_theory: f64,
}

/// Dirichlet splitting coefficients of one group of `k` neurons.
pub fn split_law(k: usize, p: usize, draws: usize, bins: usize, seed: u64) -> Result<SplitLaw, String> {
    if k < 2 || bins == 0 || draws == 0 {
        return Err("need k >= 2, draws >= 1 and bins >= 1".into());
    }
    let alpha = splitting_alpha(p);
    let law = DirichletLaw::new(k, alpha).map_err(|e| e.to_string())?;
    let beta = beta_marginal(&law).map_err(|e| e.to_string())?;
    let mut rng = seeded(seed);
    let mut counts = vec![0usize; bins];
    let mut sqrt_sum = 0.0;
    for _ in 0..draws {
        for c in sample_symmetric_dirichlet(&mut rng, k, alpha) {
            counts[((c * bins as f64) as usize).min(bins - 1)] += 1;
            sqrt_sum += c.sqrt();
        }
    }
    let total = (draws * k) as f64;
    let width = 1.0 / bins as f64;
    let bin_centers: Vec<f64> = (0..bins).map(|b| (b as f64 + 0.5) * width).collect();
    Ok(SplitLaw {
        k,
        alpha,
        density: counts.iter().map(|&c| c as f64 / (total * width)).collect(),
        beta_pdf: bin_centers.iter().map(|&x| beta.pdf(x)).collect(),
        bin_centers,
        mean_sqrt_c: sqrt_sum / total,
        mu_theory: mu_k_alpha(k, alpha).map_err(|e| e.to_string())?,
    })
}

#[derive(Debug, Serialize)]
pub struct MuPoint {
    pub k: usize,
    pub mu: f64,
    pub sqrt_k_mu: f64,
}

/// `μ_{k,α}` and `√k·μ_{k,α}` for `k = 1..=k_max`.
pub fn mu_curve(p: usize, k_max: usize) -> Result<Vec<MuPoint>, String> {
    let alpha = splitting_alpha(p);
    (1..=k_max.max(1))
        .map(|k| {
            let mu = mu_k_alpha(k, alpha).map_err(|e| e.to_string())?;
            Ok(MuPoint {
                k,
                mu,
                sqrt_k_mu: (k as f64).sqrt() * mu,
            })
        })
        .collect()
}

#[derive(Debug, Serialize)]
pub struct ChamberWalk {
    pub acceptance: f64,
    pub switch_rate: f64,
    pub expected_switches: f64,
    pub min_margins: Vec<f64>,
    /// Whether the chain is still in its starting chamber after each step.
    pub in_start_chamber: Vec<bool>,
}

/// One short HMC chain on synthetic data, tracked through permutation chambers.
pub fn chamber_walk(n: usize, width: usize, draws: usize, seed: u64) -> Result<ChamberWalk, String> {
    let m_star = 3;
    if width < m_star || n == 0 || draws < 2 {
        return Err(format!("need width >= {m_star}, n >= 1 and draws >= 2"));
    }
    let gt = make_ground_truth(m_star, 3, seed, 0.95).map_err(|e| e.to_string())?;
    let data = sample_dataset(&gt, n, seed.wrapping_add(1)).map_err(|e| e.to_string())?;
    let mut spec = EnsembleSpec::new(width, 1, SamplerKind::Hmc, seed);
    spec.sampler.warmup_steps = 300;
    spec.sampler.kept_draws = draws;
    spec.sampler.thinning = 2;
    spec.sampler.leapfrog_steps = 8;
    spec.adam.steps = 3000;
    let trace = run_chain(Some(&gt), &data, &spec, 0).map_err(|e| e.to_string())?;
    let rec = track_chain(&trace).map_err(|e| e.to_string())?;
    Ok(ChamberWalk {
        acceptance: trace.acceptance.mean_accept,
        switch_rate: rec.switch_rate,
        expected_switches: rec.expected_switches(),
        in_start_chamber: rec.cumulative.iter().skip(1).map(|p| nonident::symmetry_diag::is_identity(p)).collect(),
        min_margins: rec.min_margins,
    })
}

fn to_json<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = splitLaw)]
pub fn split_law_js(k: usize, p: usize, draws: usize, bins: usize, seed: u32) -> Result<String, JsValue> {
    to_json(split_law(k, p, draws, bins, seed.into()))
}

#[wasm_bindgen(js_name = muCurve)]
pub fn mu_curve_js(p: usize, k_max: usize) -> Result<String, JsValue> {
    to_json(mu_curve(p, k_max))
}

#[wasm_bindgen(js_name = chamberWalk)]
pub fn chamber_walk_js(n: usize, width: usize, draws: usize, seed: u32) -> Result<String, JsValue> {
    to_json(chamber_walk(n, width, draws, seed.into()))
}
