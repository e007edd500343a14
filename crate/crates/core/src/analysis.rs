//! Pooled-draw estimators: uncertainty decomposition, predictive metrics,
//! moment validation against the splitting law, and KS fit distances.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::relu_net::{forward_batch, NetworkParams, ObjectiveConfig};
use crate::samplers::SampleTrace;
use crate::split_diag::{analyze_draw, MAX_CLAMPED_MASS};
use crate::symmetry_diag::align;
use crate::synth::{Dataset, GroundTruth};
use crate::theory_oracle::{beta_marginal, mu_k_alpha, splitting_alpha, DirichletLaw};

/// Reference used to remove the permutation component of the spread.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignTo {
    /// Each draw is aligned to the first draw of its own chain; per-chain
    /// traces are averaged with weights proportional to chain length.
    #[default]
    ChainFirstDraw,
    /// Every draw is aligned to the ground truth and all draws are pooled.
    GroundTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyReport {
    pub n: usize,
    pub width: usize,
    pub draws: usize,
    /// Mean over test inputs of the across-draw variance of `f_w(x)`.
    pub predictive_var: f64,
    /// `tr Cov(w) / d` over pooled draws.
    pub weight_cov_trace: f64,
    /// Same after neuron alignment.
    pub within_mode_trace: f64,
}

fn pooled_draws(traces: &[SampleTrace]) -> Result<(usize, usize, usize)> {
    let first = traces.first().ok_or_else(|| invalid("no traces"))?;
    let (w, p) = (first.width, first.input_dim);
    let mut total = 0;
    for t in traces {
        if t.width != w || t.input_dim != p {
            return Err(invalid("traces disagree on network shape"));
        }
        t.check_shape()?;
        total += t.len();
    }
    if total == 0 {
        return Err(invalid("traces hold no draws"));
    }
    Ok((w, p, total))
}

/// Population (`1/S`) covariance trace of a set of flat vectors.
fn cov_trace<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone, d: usize) -> (f64, usize) {
    let mut mean = vec![0.0; d];
    let mut count = 0usize;
    for r in rows.clone() {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
        count += 1;
    }
    if count == 0 {
        return (0.0, 0);
    }
    mean.iter_mut().for_each(|m| *m /= count as f64);
    let mut acc = 0.0;
    for r in rows {
        acc += r.iter().zip(&mean).map(|(v, m)| (v - m).powi(2)).sum::<f64>();
    }
    (acc / count as f64, count)
}

fn inverse(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &j) in perm.iter().enumerate() {
        inv[j] = i;
    }
    inv
}

/// Reorders the neurons of `params` so that they line up with `reference`.
pub fn align_to_reference(params: &NetworkParams, reference: &NetworkParams) -> Result<NetworkParams> {
    let res = align(&params.first_layer(), &reference.first_layer())?;
    params.permute_neurons(&inverse(&res.permutation))
}

pub fn uncertainty_decomposition(
    traces: &[SampleTrace],
    test_inputs: &[f64],
    gt: Option<&GroundTruth>,
    align_to: AlignTo,
) -> Result<UncertaintyReport> {
    let (width, p, total) = pooled_draws(traces)?;
    if test_inputs.is_empty() || test_inputs.len() % p != 0 {
        return Err(invalid("test inputs must be a nonempty n×p matrix"));
    }
    let d = width * (p + 1);
    let n_test = test_inputs.len() / p;

    let mut sum = vec![0.0; n_test];
    let mut sum_sq = vec![0.0; n_test];
    for t in traces {
        for i in 0..t.len() {
            let pred = forward_batch(&t.draw_params(i), test_inputs)?;
            for ((s, q), f) in sum.iter_mut().zip(sum_sq.iter_mut()).zip(pred) {
                *s += f;
                *q += f * f;
            }
        }
    }
    let s = total as f64;
    let predictive_var = sum
        .iter()
        .zip(&sum_sq)
        .map(|(a, b)| (b / s - (a / s).powi(2)).max(0.0))
        .sum::<f64>()
        / n_test as f64;

    let all = traces.iter().flat_map(|t| t.draws.iter().map(Vec::as_slice));
    let (weight_trace, _) = cov_trace(all, d);

    let within = match align_to {
        AlignTo::ChainFirstDraw => {
            let mut acc = 0.0;
            for t in traces.iter().filter(|t| !t.is_empty()) {
                let reference = t.draw_params(0);
                let aligned = (0..t.len())
                    .map(|i| align_to_reference(&t.draw_params(i), &reference).map(NetworkParams::into_flat))
                    .collect::<Result<Vec<_>>>()?;
                let (tr, c) = cov_trace(aligned.iter().map(Vec::as_slice), d);
                acc += tr * c as f64;
            }
            acc / s
        }
        AlignTo::GroundTruth => {
            let gt = gt.ok_or_else(|| invalid("ground-truth alignment needs a ground truth"))?;
            if gt.width() != width {
                return Err(invalid("ground-truth alignment needs M = M*"));
            }
            let aligned = traces
                .iter()
                .flat_map(|t| (0..t.len()).map(move |i| t.draw_params(i)))
                .map(|p| align_to_reference(&p, &gt.params).map(NetworkParams::into_flat))
                .collect::<Result<Vec<_>>>()?;
            cov_trace(aligned.iter().map(Vec::as_slice), d).0
        }
    };

    let n = traces[0]
        .meta
        .dataset
        .as_ref()
        .map(|m| m.n)
        .unwrap_or_default();
    Ok(UncertaintyReport {
        n,
        width,
        draws: total,
        predictive_var,
        weight_cov_trace: weight_trace / d as f64,
        within_mode_trace: within / d as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveMetrics {
    /// Mean over chains of the RMSE of each chain's MAP start.
    pub rmse_map: f64,
    /// RMSE of the averaged MAP predictions (deep ensemble).
    pub rmse_de: f64,
    /// RMSE of the pooled posterior-mean prediction.
    pub rmse_posterior_mean: f64,
    /// The same three against noise-free targets, when supplied.
    pub rmse_map_noise_free: Option<f64>,
    pub rmse_de_noise_free: Option<f64>,
    pub rmse_posterior_mean_noise_free: Option<f64>,
    /// `Σ_i log mean_s p(y_i | w_s)` over pooled draws.
    pub lppd: f64,
    /// Same with the chains' MAP estimates as an equally weighted mixture.
    pub lppd_map: f64,
}

fn rmse(pred: &[f64], target: &[f64]) -> f64 {
    (pred
        .iter()
        .zip(target)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / pred.len() as f64)
        .sqrt()
}

/// Accumulates `log Σ exp(·)` per test point without overflow.
struct LogSumExp {
    max: Vec<f64>,
    sum: Vec<f64>,
    count: usize,
}

impl LogSumExp {
    fn new(n: usize) -> Self {
        Self {
            max: vec![f64::NEG_INFINITY; n],
            sum: vec![0.0; n],
            count: 0,
        }
    }

    fn push(&mut self, values: &[f64]) {
        for ((m, s), &v) in self.max.iter_mut().zip(self.sum.iter_mut()).zip(values) {
            if v > *m {
                *s = *s * (*m - v).exp() + 1.0;
                *m = v;
            } else {
                *s += (v - *m).exp();
            }
        }
        self.count += 1;
    }

    /// `Σ_i log((1/S) Σ_s exp(v_is))`
    fn total(&self) -> f64 {
        let ln_s = (self.count as f64).ln();
        self.max
            .iter()
            .zip(&self.sum)
            .map(|(m, s)| m + s.ln() - ln_s)
            .sum()
    }
}

fn pointwise_ll(pred: &[f64], y: &[f64], sigma: f64) -> Vec<f64> {
    let c = 0.5 * (2.0 * std::f64::consts::PI * sigma * sigma).ln();
    pred.iter()
        .zip(y)
        .map(|(f, y)| -(y - f).powi(2) / (2.0 * sigma * sigma) - c)
        .collect()
}

/// Table-style metrics for a set of chains. `noise_free` holds `f*(x_i)`
/// for the test inputs when available.
pub fn predictive_metrics(
    traces: &[SampleTrace],
    test: &Dataset,
    cfg: &ObjectiveConfig,
    noise_free: Option<&[f64]>,
) -> Result<PredictiveMetrics> {
    let (_, p, total) = pooled_draws(traces)?;
    if test.input_dim() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: test.input_dim(),
        });
    }
    if let Some(f) = noise_free {
        if f.len() != test.len() {
            return Err(invalid("noise-free targets do not match the test set"));
        }
    }
    cfg.validate()?;
    let n = test.len();
    let sigma = cfg.noise_sigma;

    let mut post_mean = vec![0.0; n];
    let mut lse = LogSumExp::new(n);
    for t in traces {
        for i in 0..t.len() {
            let pred = forward_batch(&t.draw_params(i), &test.inputs)?;
            for (m, f) in post_mean.iter_mut().zip(&pred) {
                *m += f;
            }
            lse.push(&pointwise_ll(&pred, &test.targets, sigma));
        }
    }
    post_mean.iter_mut().for_each(|m| *m /= total as f64);

    let mut de_mean = vec![0.0; n];
    let mut map_rmse = 0.0;
    let mut map_rmse_nf = 0.0;
    let mut lse_map = LogSumExp::new(n);
    for t in traces {
        let pred = forward_batch(&t.init_network(), &test.inputs)?;
        map_rmse += rmse(&pred, &test.targets);
        if let Some(f) = noise_free {
            map_rmse_nf += rmse(&pred, f);
        }
        for (m, f) in de_mean.iter_mut().zip(&pred) {
            *m += f;
        }
        lse_map.push(&pointwise_ll(&pred, &test.targets, sigma));
    }
    let c = traces.len() as f64;
    de_mean.iter_mut().for_each(|m| *m /= c);

    Ok(PredictiveMetrics {
        rmse_map: map_rmse / c,
        rmse_de: rmse(&de_mean, &test.targets),
        rmse_posterior_mean: rmse(&post_mean, &test.targets),
        rmse_map_noise_free: noise_free.map(|_| map_rmse_nf / c),
        rmse_de_noise_free: noise_free.map(|f| rmse(&de_mean, f)),
        rmse_posterior_mean_noise_free: noise_free.map(|f| rmse(&post_mean, f)),
        lppd: lse.total(),
        lppd_map: lse_map.total(),
    })
}

/// Sup-norm distance between the empirical CDF of `samples` and `cdf`.
pub fn ks_distance(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(invalid("KS distance needs at least one sample"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    Ok(d.min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub k: usize,
    /// Neuron-draw pairs pooled for this group size.
    pub samples: usize,
    pub mean_s: f64,
    pub std_s: f64,
    pub mean_s2: f64,
    pub std_s2: f64,
    pub mu_theory: f64,
    pub inv_k: f64,
    /// KS distance of pooled `c_m` against `Beta(α, (k−1)α)`; absent for k = 1.
    pub ks_beta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub alpha: f64,
    pub rows: Vec<MomentRow>,
    pub draws_used: usize,
    pub draws_excluded: usize,
    /// Pooled splitting coefficients per group size.
    #[serde(skip)]
    pub coefficients: BTreeMap<usize, Vec<f64>>,
}

impl MomentReport {
    pub fn row(&self, k: usize) -> Option<&MomentRow> {
        self.rows.iter().find(|r| r.k == k)
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// Groups neuron-level scalar projections and splitting coefficients of
/// valid draws by group size. Draws with a non-surjective assignment, a
/// degenerate group or clamped mass above `max_clamped` are excluded.
pub fn moment_validation_with(
    traces: &[SampleTrace],
    gt: &GroundTruth,
    max_clamped: f64,
) -> Result<MomentReport> {
    pooled_draws(traces)?;
    let alpha = splitting_alpha(gt.input_dim());
    let mut s_by_k: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut c_by_k: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut used = 0;
    let mut excluded = 0;
    for t in traces {
        for i in 0..t.len() {
            let split = analyze_draw(&t.draw_params(i), gt)?;
            if !split.is_valid(max_clamped) {
                excluded += 1;
                continue;
            }
            used += 1;
            let coeffs = split.coefficients.as_ref().expect("valid draws have coefficients");
            for m in 0..t.width {
                let k = split.map.k_of(m);
                s_by_k.entry(k).or_default().push(split.projections[m]);
                c_by_k.entry(k).or_default().push(coeffs.per_neuron[m]);
            }
        }
    }
    if used == 0 {
        return Err(Error::EmptyReport(format!(
            "all {excluded} draws were excluded (non-surjective, degenerate or clamped)"
        )));
    }
    let mut rows = Vec::new();
    for (&k, s) in &s_by_k {
        let (mean_s, std_s) = mean_std(s);
        let s2: Vec<f64> = s.iter().map(|v| v * v).collect();
        let (mean_s2, std_s2) = mean_std(&s2);
        let ks_beta = if k >= 2 {
            let beta = beta_marginal(&DirichletLaw::new(k, alpha)?)?;
            Some(ks_distance(&c_by_k[&k], |x| beta.cdf(x))?)
        } else {
            None
        };
        rows.push(MomentRow {
            k,
            samples: s.len(),
            mean_s,
            std_s,
            mean_s2,
            std_s2,
            mu_theory: mu_k_alpha(k, alpha)?,
            inv_k: 1.0 / k as f64,
            ks_beta,
        });
    }
    Ok(MomentReport {
        alpha,
        rows,
        draws_used: used,
        draws_excluded: excluded,
        coefficients: c_by_k,
    })
}

/// [`moment_validation_with`] at the default clamped-mass threshold.
pub fn moment_validation(traces: &[SampleTrace], gt: &GroundTruth) -> Result<MomentReport> {
    moment_validation_with(traces, gt, MAX_CLAMPED_MASS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samplers::{AcceptanceStats, SamplerConfig, SamplerKind, TraceMeta};
    use crate::split_diag::AssignmentMap;
    use crate::synth::{make_ground_truth, sample_dataset};
    use crate::theory_oracle::{mixture_moments, sample_manifold_posterior};

    fn trace_of(width: usize, p: usize, draws: Vec<Vec<f64>>) -> SampleTrace {
        SampleTrace {
            chain_id: 0,
            sampler_kind: SamplerKind::Hmc,
            width,
            input_dim: p,
            config: SamplerConfig::default(),
            init_params: draws[0].clone(),
            acceptance: AcceptanceStats::default(),
            meta: TraceMeta::default(),
            draws,
        }
    }

    fn all_perms(m: usize) -> Vec<Vec<usize>> {
        if m == 1 {
            return vec![vec![0]];
        }
        let mut out = Vec::new();
        for p in all_perms(m - 1) {
            for pos in 0..m {
                let mut q = p.clone();
                q.insert(pos, m - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn identical_draws_have_no_spread() {
        let gt = make_ground_truth(3, 3, 1, 0.95).unwrap();
        let trace = trace_of(3, 3, vec![gt.params.flat().to_vec(); 10]);
        let test = sample_dataset(&gt, 50, 3).unwrap();
        let r = uncertainty_decomposition(&[trace], &test.inputs, Some(&gt), AlignTo::ChainFirstDraw)
            .unwrap();
        assert!(r.predictive_var.abs() < 1e-14);
        assert!(r.weight_cov_trace.abs() < 1e-14);
        assert!(r.within_mode_trace.abs() < 1e-14);
    }

    #[test]
    fn permutation_orbit_identity() {
        let gt = make_ground_truth(3, 4, 2, 0.95).unwrap();
        let draws: Vec<Vec<f64>> = all_perms(3)
            .iter()
            .map(|p| gt.params.permute_neurons(p).unwrap().into_flat())
            .collect();
        let trace = trace_of(3, 4, draws);
        let test = sample_dataset(&gt, 100, 3).unwrap();
        let r = uncertainty_decomposition(&[trace.clone()], &test.inputs, Some(&gt), AlignTo::ChainFirstDraw)
            .unwrap();
        let mm = mixture_moments(&gt.params.blocks(), 3).unwrap();
        assert!(r.predictive_var < 1e-10);
        assert!((r.weight_cov_trace * 15.0 - mm.trace_total).abs() < 1e-12);
        assert!(r.within_mode_trace.abs() < 1e-12);
        let g = uncertainty_decomposition(&[trace], &test.inputs, Some(&gt), AlignTo::GroundTruth)
            .unwrap();
        assert!(g.within_mode_trace.abs() < 1e-12);
    }

    #[test]
    fn oracle_predictor_metrics() {
        let gt = make_ground_truth(3, 3, 1, 0.95).unwrap().with_noise_sigma(0.0);
        let test = sample_dataset(&gt, 64, 3).unwrap();
        let trace = trace_of(3, 3, vec![gt.params.flat().to_vec()]);
        let cfg = ObjectiveConfig::new(0.5, 1.0).unwrap();
        let m = predictive_metrics(&[trace], &test, &cfg, None).unwrap();
        assert_eq!(m.rmse_posterior_mean, 0.0);
        assert_eq!(m.rmse_map, 0.0);
        let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((m.lppd + 64.0 * half_ln_2pi).abs() < 1e-10);
    }

    #[test]
    fn single_point_lppd() {
        let data = Dataset::from_parts(vec![0.3, -0.2], vec![0.0], 2).unwrap();
        let trace = trace_of(1, 2, vec![vec![0.0; 3]]);
        let m = predictive_metrics(&[trace], &data, &ObjectiveConfig::default(), None).unwrap();
        assert!((m.lppd + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-14);
    }

    #[test]
    fn lppd_is_permutation_invariant() {
        let gt = make_ground_truth(3, 3, 4, 0.95).unwrap();
        let test = sample_dataset(&gt, 40, 3).unwrap();
        let mut rng = crate::rng::seeded(1);
        use rand::Rng;
        let draws: Vec<Vec<f64>> = (0..6)
            .map(|_| gt.params.flat().iter().map(|v| v + 0.1 * rng.random::<f64>()).collect())
            .collect();
        let cfg = ObjectiveConfig::default();
        let a = predictive_metrics(&[trace_of(3, 3, draws.clone())], &test, &cfg, None).unwrap();
        let mut shuffled: Vec<Vec<f64>> = draws.iter().rev().cloned().collect();
        shuffled = shuffled
            .into_iter()
            .map(|d| {
                NetworkParams::from_flat(3, 3, d)
                    .unwrap()
                    .permute_neurons(&[2, 0, 1])
                    .unwrap()
                    .into_flat()
            })
            .collect();
        let b = predictive_metrics(&[trace_of(3, 3, shuffled)], &test, &cfg, None).unwrap();
        assert!((a.lppd - b.lppd).abs() < 1e-9);
    }

    #[test]
    fn ks_examples() {
        assert_eq!(ks_distance(&[0.5], |x| x).unwrap(), 0.5);
        let beta = crate::theory_oracle::BetaMarginal::new(3.0, 3.0).unwrap();
        assert_eq!(ks_distance(&[0.0; 10], |x| beta.cdf(x)).unwrap(), 1.0);
        let mut rng = crate::rng::seeded(2);
        use rand::Rng;
        let u: Vec<f64> = (0..100_000).map(|_| rng.random::<f64>()).collect();
        assert!(ks_distance(&u, |x| x).unwrap() < 0.01);
        assert!(ks_distance(&[], |x| x).is_err());
    }

    #[test]
    fn manifold_oracle_moments() {
        let gt = make_ground_truth(3, 5, 6, 0.95).unwrap();
        let map = AssignmentMap::balanced(&[1, 2, 3]).unwrap();
        let trace = sample_manifold_posterior(&gt, &map, 100_000, 4).unwrap();
        let r = moment_validation(&[trace], &gt).unwrap();
        assert_eq!(r.draws_excluded, 0);
        for row in &r.rows {
            assert!((row.mean_s - row.mu_theory).abs() < 1e-2, "{row:?}");
            assert!((row.mean_s2 - row.inv_k).abs() < 1e-2, "{row:?}");
            if row.k == 1 {
                assert_eq!(row.std_s, 0.0);
                assert!((row.mean_s - 1.0).abs() < 1e-12);
            } else {
                assert!(row.ks_beta.unwrap() < 0.01);
            }
        }
    }

    #[test]
    fn all_excluded_is_an_error() {
        let gt = make_ground_truth(3, 3, 1, 0.95).unwrap();
        // every neuron copies truth neuron 0: not surjective
        let b0 = gt.params.block(0);
        let p = NetworkParams::from_blocks(&[b0.clone(), b0.clone(), b0]).unwrap();
        let trace = trace_of(3, 3, vec![p.into_flat()]);
        assert!(matches!(
            moment_validation(&[trace], &gt),
            Err(Error::EmptyReport(_))
        ));
    }
}
