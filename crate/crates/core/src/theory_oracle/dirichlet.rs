//! Symmetric Dirichlet splitting law, its Beta marginals, and the closed-form
//! weight moments of a split neuron.

use rand::Rng;
use rand_distr::{Open01, StandardNormal};
use serde::{Deserialize, Serialize};

use super::special::{log_beta, log_gamma, regularized_incomplete_beta};
use crate::error::{Error, Result};

/// `Dir(α, …, α)` over a group of `k` neurons, with `α = (p+1)/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirichletLaw {
    pub k: usize,
    pub alpha: f64,
    /// `k²·(kα + 1)`
    pub kappa: f64,
}

impl DirichletLaw {
    pub fn new(k: usize, alpha: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::Domain("group size must be >= 1".into()));
        }
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::Domain(format!("alpha must be > 0, got {alpha}")));
        }
        let kf = k as f64;
        Ok(Self {
            k,
            alpha,
            kappa: kf * kf * (kf * alpha + 1.0),
        })
    }

    /// Law implied by input dimension `p`.
    pub fn for_input_dim(k: usize, p: usize) -> Result<Self> {
        Self::new(k, splitting_alpha(p))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        sample_symmetric_dirichlet(rng, self.k, self.alpha)
    }
}

/// `α = (p+1)/2`.
pub fn splitting_alpha(p: usize) -> f64 {
    (p as f64 + 1.0) / 2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirichletMoments {
    pub mean: f64,
    pub variance: f64,
    pub covariance: f64,
}

/// `E[c] = 1/k`, `Var(c) = (k−1)/κ`, `Cov(c, c') = −1/κ`.
pub fn dirichlet_moments(law: &DirichletLaw) -> DirichletMoments {
    if law.k == 1 {
        return DirichletMoments {
            mean: 1.0,
            variance: 0.0,
            covariance: 0.0,
        };
    }
    DirichletMoments {
        mean: 1.0 / law.k as f64,
        variance: (law.k as f64 - 1.0) / law.kappa,
        covariance: -1.0 / law.kappa,
    }
}

/// `μ_{k,α} = Γ(α+½)Γ(kα) / (Γ(α)Γ(kα+½)) = E[√c]` for one Dirichlet coordinate.
pub fn mu_k_alpha(k: usize, alpha: f64) -> Result<f64> {
    if k == 0 {
        return Err(Error::Domain("group size must be >= 1".into()));
    }
    let ka = k as f64 * alpha;
    let ln = log_gamma(alpha + 0.5)? + log_gamma(ka)? - log_gamma(alpha)? - log_gamma(ka + 0.5)?;
    if k == 1 {
        return Ok(1.0);
    }
    Ok(ln.exp())
}

/// Marginal `c_m ~ Beta(α, (k−1)α)` of a symmetric Dirichlet coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaMarginal {
    pub a: f64,
    pub b: f64,
    ln_norm: f64,
}

pub fn beta_marginal(law: &DirichletLaw) -> Result<BetaMarginal> {
    if law.k < 2 {
        return Err(Error::DegenerateDistribution(
            "a singleton group has c = 1 almost surely".into(),
        ));
    }
    BetaMarginal::new(law.alpha, (law.k as f64 - 1.0) * law.alpha)
}

impl BetaMarginal {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        let ln_norm = log_beta(a, b)?;
        Ok(Self { a, b, ln_norm })
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if !(0.0..=1.0).contains(&x) {
            return 0.0;
        }
        if x == 0.0 || x == 1.0 {
            let edge = if x == 0.0 { self.a } else { self.b };
            return match edge.partial_cmp(&1.0) {
                Some(std::cmp::Ordering::Greater) => 0.0,
                Some(std::cmp::Ordering::Equal) => (-self.ln_norm).exp(),
                _ => f64::INFINITY,
            };
        }
        ((self.a - 1.0) * x.ln() + (self.b - 1.0) * (1.0 - x).ln() - self.ln_norm).exp()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        regularized_incomplete_beta(self.a, self.b, x).expect("parameters validated at construction")
    }

    pub fn mean(&self) -> f64 {
        self.a / (self.a + self.b)
    }

    /// `X/(X+Y)` with `X ~ Γ(a)`, `Y ~ Γ(b)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let x = sample_gamma(rng, self.a);
        let y = sample_gamma(rng, self.b);
        x / (x + y)
    }
}

/// Marsaglia–Tsang squeeze/rejection for shape ≥ 1; shapes below 1 are
/// boosted with `Γ(a) = Γ(a+1)·U^{1/a}`. Unit rate.
pub fn sample_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64) -> f64 {
    debug_assert!(shape > 0.0);
    if shape < 1.0 {
        let u: f64 = rng.sample(Open01);
        return sample_gamma(rng, shape + 1.0) * u.powf(1.0 / shape);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x: f64 = rng.sample(StandardNormal);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u: f64 = rng.sample(Open01);
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 {
            return d * v;
        }
        if u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

pub fn sample_symmetric_dirichlet<R: Rng + ?Sized>(rng: &mut R, k: usize, alpha: f64) -> Vec<f64> {
    if k == 1 {
        return vec![1.0];
    }
    let mut g: Vec<f64> = (0..k).map(|_| sample_gamma(rng, alpha)).collect();
    let total: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= total);
    g
}

/// Closed-form moments of `ω_m = √c_m · ω*` under the splitting law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremMoments {
    /// `μ_{k,α}·ω*`
    pub mean: Vec<f64>,
    /// `(1/k)·ω*ω*ᵀ`
    pub second_moment: Vec<Vec<f64>>,
    /// `(1/k − μ²_{k,α})·ω*ω*ᵀ`
    pub covariance: Vec<Vec<f64>>,
    pub mu: f64,
    pub covariance_coefficient: f64,
}

pub fn theorem_moments(k: usize, alpha: f64, true_block: &[f64]) -> Result<TheoremMoments> {
    let mu = mu_k_alpha(k, alpha)?;
    let inv_k = 1.0 / k as f64;
    let cov_coef = if k == 1 { 0.0 } else { inv_k - mu * mu };
    let outer = |s: f64| -> Vec<Vec<f64>> {
        true_block
            .iter()
            .map(|a| true_block.iter().map(|b| s * a * b).collect())
            .collect()
    };
    Ok(TheoremMoments {
        mean: true_block.iter().map(|v| mu * v).collect(),
        second_moment: outer(inv_k),
        covariance: outer(cov_coef),
        mu,
        covariance_coefficient: cov_coef,
    })
}
