//! Closed-form self-checks run by the `validate` subcommand.

use std::fmt;

use rand::Rng as _;

use crate::error::Result;
use crate::relu_net::{objective_and_gradient_flat, NetworkParams, ObjectiveConfig};
use crate::rng::seeded;
use crate::samplers::{gaussian_init, hmc_sample, GaussianPotential, SamplerConfig, SAMPLER_NOTICE};
use crate::split_diag::analyze_draw;
use crate::symmetry_diag::min_cost_assignment;
use crate::synth::{embed_truth, make_ground_truth, sample_dataset};
use crate::theory_oracle::{
    dirichlet_moments, log_gamma, mixture_moments, mu_k_alpha, sample_symmetric_dirichlet,
    BetaMarginal, DirichletLaw,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ValidationOptions {
    /// Replaces `μ_{k,α}` with `1/√k` to show the μ check can fail.
    pub inject_wrong_mu: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
    pub notice: &'static str,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            writeln!(f, "[{tag}] {:<22} {}", c.name, c.detail)?;
        }
        let passed = self.checks.iter().filter(|c| c.passed).count();
        writeln!(f, "{passed}/{} checks passed", self.checks.len())?;
        write!(f, "note: {}", self.notice)
    }
}

fn check(name: &'static str, res: Result<(bool, String)>) -> Check {
    match res {
        Ok((passed, detail)) => Check { name, passed, detail },
        Err(e) => Check {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

fn log_gamma_spots() -> Result<(bool, String)> {
    let cases = [
        (1.0, 0.0),
        (6.0, 120f64.ln()),
        (0.5, 0.5 * std::f64::consts::PI.ln()),
    ];
    let mut worst: f64 = 0.0;
    for (x, want) in cases {
        worst = worst.max((log_gamma(x)? - want).abs());
    }
    Ok((worst < 1e-12, format!("max abs error {worst:.2e}")))
}

/// Composite Simpson rule on `[0, 1]`.
fn simpson(f: impl Fn(f64) -> f64, intervals: usize) -> f64 {
    let h = 1.0 / intervals as f64;
    let mut s = f(0.0) + f(1.0);
    for i in 1..intervals {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(i as f64 * h);
    }
    s * h / 3.0
}

fn mu_vs_quadrature(opts: &ValidationOptions) -> Result<(bool, String)> {
    let alpha = 3.0;
    let mut worst: f64 = 0.0;
    for k in [2, 3, 4, 8, 16] {
        let beta = BetaMarginal::new(alpha, (k as f64 - 1.0) * alpha)?;
        let quad = simpson(|x| x.sqrt() * beta.pdf(x), 20_000);
        let mu = if opts.inject_wrong_mu {
            1.0 / (k as f64).sqrt()
        } else {
            mu_k_alpha(k, alpha)?
        };
        worst = worst.max((mu - quad).abs() / quad);
    }
    Ok((worst < 1e-8, format!("max rel error {worst:.2e}")))
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn mixture_vs_enumeration() -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for m in 2..=5 {
        let gt = make_ground_truth(m, 3, 100 + m as u64, 0.95)?;
        let flat = gt.params.flat();
        let d = flat.len();
        let perms = permutations(m);
        let mut mean = vec![0.0; d];
        let mut second = vec![0.0; d];
        for perm in &perms {
            let x = gt.params.permute_neurons(perm)?;
            for (j, v) in x.flat().iter().enumerate() {
                mean[j] += v;
                second[j] += v * v;
            }
        }
        let np = perms.len() as f64;
        let var: Vec<f64> = (0..d).map(|j| second[j] / np - (mean[j] / np).powi(2)).collect();
        let mm = mixture_moments(&gt.params.blocks(), m)?;
        for (a, b) in var.iter().zip(&mm.per_coordinate) {
            worst = worst.max((a - b).abs());
        }
        worst = worst.max((var.iter().sum::<f64>() - mm.trace_total).abs());
    }
    Ok((worst < 1e-10, format!("max abs error {worst:.2e}")))
}

fn gradient_fd() -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    let configs = [(3, 2, 0.5, 1.0), (5, 5, 0.5, 1.0), (10, 5, 0.1, 0.5), (4, 3, 0.0, 2.0), (8, 4, 1.0, 1.0)];
    for (ci, &(width, p, lambda, sigma)) in configs.iter().enumerate() {
        let gt = make_ground_truth(p.min(width).max(2), p, 7 + ci as u64, 0.95)?;
        let data = sample_dataset(&gt, 64, 11 + ci as u64)?;
        let cfg = ObjectiveConfig::new(lambda, sigma)?;
        for point in 0..20 {
            let w = gaussian_init(width, p, 1.0, 1000 * ci as u64 + point);
            let mut g = vec![0.0; w.dim()];
            objective_and_gradient_flat(w.flat(), width, p, &data, &cfg, &mut g);
            let mut fd = vec![0.0; w.dim()];
            let mut scratch = vec![0.0; w.dim()];
            for j in 0..w.dim() {
                let h = 1e-6 * w.flat()[j].abs().max(1.0);
                let mut x = w.flat().to_vec();
                x[j] += h;
                let up = objective_and_gradient_flat(&x, width, p, &data, &cfg, &mut scratch);
                x[j] -= 2.0 * h;
                let down = objective_and_gradient_flat(&x, width, p, &data, &cfg, &mut scratch);
                fd[j] = (up - down) / (2.0 * h);
            }
            let diff = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let norm = g.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-8);
            worst = worst.max(diff / norm);
        }
    }
    Ok((worst < 1e-5, format!("max rel error {worst:.2e} over 100 points")))
}

fn hmc_gaussian() -> Result<(bool, String)> {
    let cfg = SamplerConfig {
        kept_draws: 2000,
        thinning: 1,
        ..SamplerConfig::default()
    };
    let mut accepts = Vec::new();
    let targets = [
        GaussianPotential::standard(10),
        GaussianPotential::from_covariance_2d([1.0, -2.0], [[1.0, 0.9], [0.9, 1.0]]),
    ];
    for (i, target) in targets.iter().enumerate() {
        let init = vec![0.5; crate::samplers::Potential::dim(target)];
        let (_, stats) = hmc_sample(target, &init, &cfg, &mut seeded(40 + i as u64))?;
        accepts.push(stats.mean_accept);
    }
    let ok = accepts.iter().all(|a| (a - 0.8).abs() <= 0.1);
    Ok((ok, format!("mean acceptance {accepts:.3?} (target 0.8 +- 0.1)")))
}

fn dirichlet_monte_carlo() -> Result<(bool, String)> {
    let law = DirichletLaw::new(4, 3.0)?;
    let want = dirichlet_moments(&law);
    let mut rng = seeded(5);
    let n = 100_000;
    let (mut s0, mut s00, mut s01) = (0.0, 0.0, 0.0);
    for _ in 0..n {
        let c = sample_symmetric_dirichlet(&mut rng, law.k, law.alpha);
        s0 += c[0];
        s00 += c[0] * c[0];
        s01 += c[0] * c[1];
    }
    let nf = n as f64;
    let mean = s0 / nf;
    let var = s00 / nf - mean * mean;
    let cov = s01 / nf - mean * mean;
    let err = [
        (mean - want.mean).abs() / 1e-2,
        (var - want.variance).abs() / 1e-3,
        (cov - want.covariance).abs() / 1e-3,
    ];
    let ok = err.iter().all(|e| *e < 1.0);
    Ok((
        ok,
        format!("mean {mean:.4} var {var:.5} cov {cov:.5} (k=4, alpha=3)"),
    ))
}

fn hungarian_vs_brute_force() -> Result<(bool, String)> {
    let mut rng = seeded(17);
    let mut mismatches = 0;
    let trials = 200;
    for t in 0..trials {
        let n = 2 + t % 5;
        let cost: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let order: Vec<usize> = (0..n).collect();
        let perm = min_cost_assignment(&cost, &order);
        let total = |p: &[usize]| p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum::<f64>();
        let best = permutations(n)
            .iter()
            .map(|p| total(p))
            .fold(f64::INFINITY, f64::min);
        if (total(&perm) - best).abs() > 1e-12 {
            mismatches += 1;
        }
    }
    Ok((mismatches == 0, format!("{mismatches}/{trials} mismatches")))
}

fn split_round_trip() -> Result<(bool, String)> {
    let gt = make_ground_truth(3, 5, 21, 0.95)?;
    let sigma = vec![0, 1, 2, 0, 1, 0];
    let mut rng = seeded(9);
    let coeffs: Vec<Vec<f64>> = [3, 2, 1]
        .iter()
        .map(|&k| sample_symmetric_dirichlet(&mut rng, k, 3.0))
        .collect();
    let params: NetworkParams = embed_truth(&gt, &sigma, &coeffs)?;
    let split = analyze_draw(&params, &gt)?;
    let got = split
        .coefficients
        .ok_or_else(|| crate::error::invalid("draw was not surjective"))?;
    let mut worst: f64 = 0.0;
    for (a, b) in got.per_group.iter().zip(&coeffs) {
        for (x, y) in a.iter().zip(b) {
            worst = worst.max((x - y).abs());
        }
    }
    Ok((worst < 1e-10, format!("max coefficient error {worst:.2e}")))
}

/// Runs every self-check. Never returns early; failures are reported per check.
pub fn validate(opts: &ValidationOptions) -> ValidationReport {
    let checks = vec![
        check("log_gamma", log_gamma_spots()),
        check("mu_k_alpha", mu_vs_quadrature(opts)),
        check("mixture_moments", mixture_vs_enumeration()),
        check("gradient", gradient_fd()),
        check("hmc_gaussian", hmc_gaussian()),
        check("dirichlet_moments", dirichlet_monte_carlo()),
        check("hungarian", hungarian_vs_brute_force()),
        check("split_round_trip", split_round_trip()),
    ];
    ValidationReport {
        checks,
        notice: SAMPLER_NOTICE,
    }
}
