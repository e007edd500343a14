//! Identifiable ground truths and synthetic regression data.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::relu_net::{forward_batch, NetworkParams};
use crate::rng::seeded;

pub const DEFAULT_COLLINEARITY_BOUND: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub params: NetworkParams,
    pub noise_sigma: f64,
    pub collinearity_bound: f64,
    pub seed: u64,
}

impl GroundTruth {
    pub fn id(&self) -> String {
        format!(
            "gt-m{}-p{}-seed{}",
            self.params.width(),
            self.params.input_dim(),
            self.seed
        )
    }

    pub fn with_noise_sigma(mut self, sigma: f64) -> Self {
        self.noise_sigma = sigma;
        self
    }

    pub fn width(&self) -> usize {
        self.params.width()
    }

    pub fn input_dim(&self) -> usize {
        self.params.input_dim()
    }

    /// Largest `|‖w1[m]‖ − |w2[m]||` over neurons.
    pub fn balance_error(&self) -> f64 {
        (0..self.width())
            .map(|m| (norm(self.params.first_layer_row(m)) - self.params.second_layer()[m].abs()).abs())
            .fold(0.0, f64::max)
    }

    /// Largest pairwise `|cos|` between first-layer rows.
    pub fn max_abs_cosine(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for a in 0..self.width() {
            for b in a + 1..self.width() {
                worst = worst.max(
                    abs_cosine(self.params.first_layer_row(a), self.params.first_layer_row(b)),
                );
            }
        }
        worst
    }

    /// Checks non-degeneracy, the collinearity bound and per-neuron balance.
    pub fn check_invariants(&self) -> Result<()> {
        if self.params.second_layer().iter().any(|&v| v == 0.0) {
            return Err(invalid("zero second-layer weight"));
        }
        let cos = self.max_abs_cosine();
        if cos > self.collinearity_bound {
            return Err(invalid(format!(
                "rows too collinear: |cos| {cos} > {}",
                self.collinearity_bound
            )));
        }
        let bal = self.balance_error();
        if bal >= 1e-12 {
            return Err(invalid(format!("unbalanced neuron: {bal}")));
        }
        Ok(())
    }

    /// Noise-free targets `f*(x)` for a row-major input matrix.
    pub fn noise_free(&self, inputs: &[f64]) -> Result<Vec<f64>> {
        forward_batch(&self.params, inputs)
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `|cos∠(a, b)|`, defined as 0 when either vector is zero.
pub(crate) fn abs_cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).abs().min(1.0)
}

/// Draws an identifiable, minimum-norm width-`m_star` network.
///
/// Rows come from `N(0, I_p)` and are redrawn while they violate the
/// pairwise `|cos|` bound; output weights are `±(|N(0,1)| + 0.1)`. Each neuron
/// is then rescaled (`w1 ← s·w1`, `w2 ← w2/s`) so that `‖w1‖ = |w2|`, which
/// leaves the represented function unchanged. Noise level defaults to 1.
pub fn make_ground_truth(
    m_star: usize,
    p: usize,
    seed: u64,
    collinearity_bound: f64,
) -> Result<GroundTruth> {
    if m_star < 2 || p < 2 {
        return Err(invalid("make_ground_truth needs m_star >= 2 and p >= 2"));
    }
    if !(collinearity_bound > 0.0 && collinearity_bound < 1.0) {
        return Err(invalid("collinearity bound must lie in (0, 1)"));
    }
    let mut rng = seeded(seed);
    let budget = 10 * m_star;
    let mut attempts = 0;
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(m_star);
    while rows.len() < m_star {
        if attempts == budget {
            return Err(Error::GenerationFailure {
                attempts,
                reason: format!(
                    "could not place {m_star} rows with |cos| <= {collinearity_bound} in R^{p}"
                ),
            });
        }
        attempts += 1;
        let cand: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        if norm(&cand) == 0.0 {
            continue;
        }
        if rows.iter().all(|r| abs_cosine(r, &cand) <= collinearity_bound) {
            rows.push(cand);
        }
    }
    let mut second = Vec::with_capacity(m_star);
    for row in rows.iter_mut() {
        let mag = rng.sample::<f64, _>(StandardNormal).abs() + 0.1;
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let w2 = sign * mag;
        let s = (w2.abs() / norm(row)).sqrt();
        row.iter_mut().for_each(|v| *v *= s);
        second.push(w2 / s);
    }
    let gt = GroundTruth {
        params: NetworkParams::from_layers(&rows, &second)?,
        noise_sigma: 1.0,
        collinearity_bound,
        seed,
    };
    gt.check_invariants()?;
    Ok(gt)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub n: usize,
    pub p: usize,
    pub seed: u64,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    /// Row-major `n×p`.
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn from_parts(inputs: Vec<f64>, targets: Vec<f64>, p: usize) -> Result<Self> {
        if p == 0 || inputs.len() != targets.len() * p {
            return Err(invalid(format!(
                "inputs ({}) do not match targets ({}) × p ({p})",
                inputs.len(),
                targets.len()
            )));
        }
        let n = targets.len();
        Ok(Self {
            inputs,
            targets,
            meta: DatasetMeta {
                n,
                p,
                seed: 0,
                source: String::new(),
            },
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.meta.p
    }

    pub fn input(&self, i: usize) -> &[f64] {
        let p = self.meta.p;
        &self.inputs[i * p..(i + 1) * p]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.inputs
            .chunks_exact(self.meta.p)
            .zip(self.targets.iter().copied())
    }
}

/// `x_i ~ N(0, I_p)`, `y_i = f*(x_i) + σ·ρ_i` with `ρ_i ~ N(0, 1)`.
pub fn sample_dataset(gt: &GroundTruth, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(invalid("n must be >= 1"));
    }
    let p = gt.input_dim();
    let mut rng = seeded(seed);
    let mut inputs = Vec::with_capacity(n * p);
    let mut noise = Vec::with_capacity(n);
    for _ in 0..n {
        inputs.extend((0..p).map(|_| rng.sample::<f64, _>(StandardNormal)));
        noise.push(rng.sample::<f64, _>(StandardNormal));
    }
    let clean = gt.noise_free(&inputs)?;
    let targets = clean
        .iter()
        .zip(&noise)
        .map(|(f, r)| f + gt.noise_sigma * r)
        .collect();
    Ok(Dataset {
        inputs,
        targets,
        meta: DatasetMeta {
            n,
            p,
            seed,
            source: gt.id(),
        },
    })
}

/// Places the truth on a splitting manifold: neuron `m` gets
/// `ω_m = √c_m · ω*_{ς(m)}`.
///
/// `coeffs[m']` lists the simplex weights of group `G_{m'}` in increasing
/// model-neuron order.
pub fn embed_truth(gt: &GroundTruth, sigma: &[usize], coeffs: &[Vec<f64>]) -> Result<NetworkParams> {
    let m_star = gt.width();
    let width = sigma.len();
    if width < m_star {
        return Err(invalid(format!("width {width} < M* {m_star}")));
    }
    if coeffs.len() != m_star {
        return Err(invalid("need one coefficient vector per true neuron"));
    }
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); m_star];
    for (m, &t) in sigma.iter().enumerate() {
        if t >= m_star {
            return Err(invalid(format!("assignment target {t} out of range")));
        }
        groups[t].push(m);
    }
    let mut c = vec![0.0; width];
    for (t, (group, cg)) in groups.iter().zip(coeffs).enumerate() {
        if group.is_empty() {
            return Err(invalid(format!("assignment is not surjective: {t} uncovered")));
        }
        if cg.len() != group.len() {
            return Err(invalid(format!(
                "group {t} has {} neurons but {} coefficients",
                group.len(),
                cg.len()
            )));
        }
        if cg.iter().any(|&v| !(v >= 0.0)) {
            return Err(invalid(format!("group {t} has a negative coefficient")));
        }
        let sum: f64 = cg.iter().sum();
        if (sum - 1.0).abs() > 1e-10 {
            return Err(invalid(format!("group {t} coefficients sum to {sum}")));
        }
        for (&m, &v) in group.iter().zip(cg) {
            c[m] = v;
        }
    }
    let truth = gt.params.blocks();
    let blocks: Vec<Vec<f64>> = sigma
        .iter()
        .zip(&c)
        .map(|(&t, &cm)| truth[t].iter().map(|v| cm.sqrt() * v).collect())
        .collect();
    NetworkParams::from_blocks(&blocks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relu_net::forward;

    #[test]
    fn default_setup_passes_invariants() {
        let gt = make_ground_truth(5, 5, 1, 0.95).unwrap();
        gt.check_invariants().unwrap();
        assert!(gt.balance_error() < 1e-12);
        assert_eq!(gt.width(), 5);
        assert_eq!(gt.params.dim(), 30);
    }

    #[test]
    fn ground_truth_is_deterministic() {
        let a = make_ground_truth(5, 5, 42, 0.95).unwrap();
        let b = make_ground_truth(5, 5, 42, 0.95).unwrap();
        assert_eq!(a, b);
        let bits_a: Vec<u64> = a.params.flat().iter().map(|v| v.to_bits()).collect();
        let bits_b: Vec<u64> = b.params.flat().iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits_a, bits_b);
    }

    #[test]
    fn invariants_hold_over_many_seeds() {
        for seed in 0..100 {
            let gt = make_ground_truth(5, 5, seed, DEFAULT_COLLINEARITY_BOUND).unwrap();
            gt.check_invariants().unwrap();
        }
    }

    #[test]
    fn impossible_bound_fails() {
        // 6 pairwise nearly-orthogonal rows do not fit in R^2
        let err = make_ground_truth(6, 2, 3, 0.05).unwrap_err();
        assert!(matches!(err, Error::GenerationFailure { attempts: 60, .. }));
    }

    #[test]
    fn bad_arguments() {
        assert!(make_ground_truth(1, 5, 0, 0.9).is_err());
        assert!(make_ground_truth(3, 1, 0, 0.9).is_err());
        assert!(make_ground_truth(3, 3, 0, 1.0).is_err());
    }

    #[test]
    fn noiseless_dataset_is_exact() {
        let gt = make_ground_truth(5, 5, 1, 0.95).unwrap().with_noise_sigma(0.0);
        let d = sample_dataset(&gt, 100, 9).unwrap();
        for (x, y) in d.iter() {
            assert_eq!(y - forward(&gt.params, x).unwrap(), 0.0);
        }
    }

    #[test]
    fn noise_variance_matches_sigma() {
        let gt = make_ground_truth(5, 5, 1, 0.95).unwrap();
        let d = sample_dataset(&gt, 100_000, 3).unwrap();
        let clean = gt.noise_free(&d.inputs).unwrap();
        let res: Vec<f64> = d.targets.iter().zip(&clean).map(|(y, f)| y - f).collect();
        let mean = res.iter().sum::<f64>() / res.len() as f64;
        let var = res.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (res.len() - 1) as f64;
        assert!((var - 1.0).abs() < 0.02, "variance {var}");
    }

    #[test]
    fn dataset_is_deterministic() {
        let gt = make_ground_truth(5, 5, 1, 0.95).unwrap();
        assert_eq!(sample_dataset(&gt, 50, 4).unwrap(), sample_dataset(&gt, 50, 4).unwrap());
        assert!(sample_dataset(&gt, 0, 4).is_err());
    }

    #[test]
    fn identity_embedding_returns_truth() {
        let gt = make_ground_truth(5, 5, 1, 0.95).unwrap();
        let sigma: Vec<usize> = (0..5).collect();
        let coeffs = vec![vec![1.0]; 5];
        assert_eq!(embed_truth(&gt, &sigma, &coeffs).unwrap(), gt.params);
    }

    #[test]
    fn balanced_split_reproduces_function_and_penalty() {
        let gt = make_ground_truth(5, 5, 1, 0.95).unwrap();
        let sigma: Vec<usize> = (0..10).map(|m| m % 5).collect();
        let coeffs = vec![vec![0.5, 0.5]; 5];
        let w = embed_truth(&gt, &sigma, &coeffs).unwrap();
        let d = sample_dataset(&gt, 100, 2).unwrap();
        for (x, _) in d.iter() {
            let a = forward(&w, x).unwrap();
            let b = forward(&gt.params, x).unwrap();
            assert!((a - b).abs() < 1e-10);
        }
        assert!((w.norm_sq() - gt.params.norm_sq()).abs() < 1e-12);
        // per-group norm identity
        let truth = gt.params.blocks();
        for t in 0..5 {
            let group: f64 = [t, t + 5].iter().map(|&m| norm(&w.block(m)).powi(2)).sum();
            assert!((group - norm(&truth[t]).powi(2)).abs() < 1e-12);
        }
    }

    #[test]
    fn embed_rejects_bad_coefficients() {
        let gt = make_ground_truth(3, 3, 1, 0.95).unwrap();
        let sigma = vec![0, 1, 2, 2];
        let ok = vec![vec![1.0], vec![1.0], vec![0.25, 0.75]];
        assert!(embed_truth(&gt, &sigma, &ok).is_ok());
        let bad_sum = vec![vec![1.0], vec![1.0], vec![0.3, 0.3]];
        assert!(matches!(embed_truth(&gt, &sigma, &bad_sum), Err(Error::InvalidInput(_))));
        let negative = vec![vec![1.0], vec![1.0], vec![-0.5, 1.5]];
        assert!(embed_truth(&gt, &sigma, &negative).is_err());
        let not_onto = vec![0, 0, 2, 2];
        let c = vec![vec![0.5, 0.5], vec![], vec![0.5, 0.5]];
        assert!(embed_truth(&gt, &not_onto, &c).is_err());
    }
}
