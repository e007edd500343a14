//! Fixed-length leapfrog HMC with windowed warmup: dual-averaging step size
//! toward `target_accept` and a diagonal inverse mass matrix estimated from
//! doubling slow windows. Adaptation is frozen after warmup.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::relu_net::{NetworkParams, ObjectiveConfig};
use crate::rng::seeded;
use crate::samplers::{
    AcceptanceStats, BnnPotential, Potential, SampleTrace, SamplerConfig, SamplerKind, TraceMeta,
};
use crate::synth::Dataset;

const DIVERGENCE_THRESHOLD: f64 = 1000.0;
const INIT_BUFFER: usize = 75;
const TERM_BUFFER: usize = 150;
const BASE_WINDOW: usize = 25;

/// Integrates Hamiltonian dynamics for `steps` leapfrog steps in place.
///
/// `grad` must hold `∇U(q)` on entry and holds `∇U` at the new position on
/// exit. Returns the potential energy at the new position.
pub fn leapfrog<P: Potential + ?Sized>(
    target: &P,
    q: &mut [f64],
    p: &mut [f64],
    grad: &mut [f64],
    eps: f64,
    inv_mass: &[f64],
    steps: usize,
) -> f64 {
    let mut energy = f64::NAN;
    for (pi, gi) in p.iter_mut().zip(grad.iter()) {
        *pi -= 0.5 * eps * gi;
    }
    for s in 0..steps {
        for ((qi, pi), mi) in q.iter_mut().zip(p.iter()).zip(inv_mass) {
            *qi += eps * mi * pi;
        }
        energy = target.energy_grad(q, grad);
        let scale = if s + 1 == steps { 0.5 } else { 1.0 };
        for (pi, gi) in p.iter_mut().zip(grad.iter()) {
            *pi -= scale * eps * gi;
        }
    }
    energy
}

fn kinetic(p: &[f64], inv_mass: &[f64]) -> f64 {
    0.5 * p.iter().zip(inv_mass).map(|(a, m)| a * a * m).sum::<f64>()
}

/// Current position of a chain together with its cached energy and gradient.
#[derive(Debug, Clone)]
pub struct HmcState {
    pub q: Vec<f64>,
    pub grad: Vec<f64>,
    pub energy: f64,
}

impl HmcState {
    pub fn new<P: Potential + ?Sized>(target: &P, q: &[f64]) -> Self {
        let mut grad = vec![0.0; q.len()];
        let energy = target.energy_grad(q, &mut grad);
        Self {
            q: q.to_vec(),
            grad,
            energy,
        }
    }
}

struct Transition {
    accept_prob: f64,
    divergent: bool,
}

fn transition<P: Potential + ?Sized, R: Rng>(
    target: &P,
    state: &mut HmcState,
    eps: f64,
    inv_mass: &[f64],
    steps: usize,
    rng: &mut R,
) -> Transition {
    let d = state.q.len();
    let mut p: Vec<f64> = inv_mass
        .iter()
        .map(|m| rng.sample::<f64, _>(StandardNormal) / m.sqrt())
        .collect();
    let h0 = state.energy + kinetic(&p, inv_mass);
    let mut q = state.q.clone();
    let mut grad = state.grad.clone();
    let energy = leapfrog(target, &mut q, &mut p, &mut grad, eps, inv_mass, steps);
    let h1 = energy + kinetic(&p, inv_mass);
    let delta = h1 - h0;
    let finite = delta.is_finite() && q.iter().take(d).all(|v| v.is_finite());
    let divergent = !finite || delta > DIVERGENCE_THRESHOLD;
    let accept_prob = if finite { (-delta).exp().min(1.0) } else { 0.0 };
    let u: f64 = rng.random();
    if !divergent && u < accept_prob {
        state.q = q;
        state.grad = grad;
        state.energy = energy;
    }
    Transition {
        accept_prob,
        divergent,
    }
}

/// Nesterov dual averaging of `log ε`.
struct DualAveraging {
    mu: f64,
    target: f64,
    gamma: f64,
    t0: f64,
    kappa: f64,
    count: f64,
    h_bar: f64,
    log_eps: f64,
    log_eps_bar: f64,
}

impl DualAveraging {
    fn new(eps: f64, target: f64) -> Self {
        Self {
            mu: (10.0 * eps).ln(),
            target,
            gamma: 0.2,
            t0: 10.0,
            kappa: 0.75,
            count: 0.0,
            h_bar: 0.0,
            log_eps: eps.ln(),
            log_eps_bar: 0.0,
        }
    }

    fn update(&mut self, accept: f64) {
        self.count += 1.0;
        let eta = 1.0 / (self.count + self.t0);
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target - accept);
        self.log_eps = self.mu - self.count.sqrt() / self.gamma * self.h_bar;
        let x = self.count.powf(-self.kappa);
        self.log_eps_bar = x * self.log_eps + (1.0 - x) * self.log_eps_bar;
    }

    fn current(&self) -> f64 {
        self.log_eps.exp()
    }

    fn final_step(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

#[derive(Default)]
struct Welford {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn push(&mut self, x: &[f64]) {
        if self.mean.is_empty() {
            self.mean = vec![0.0; x.len()];
            self.m2 = vec![0.0; x.len()];
        }
        self.n += 1.0;
        for ((m, s), v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let delta = v - *m;
            *m += delta / self.n;
            *s += delta * (v - *m);
        }
    }

    /// Variance shrunk toward 1e-3 as in Stan's diagonal metric.
    fn regularized_variance(&self) -> Vec<f64> {
        let n = self.n;
        self.m2
            .iter()
            .map(|s| {
                let var = s / (n - 1.0);
                (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            })
            .collect()
    }
}

/// Warmup iterations at which a slow (mass-matrix) window closes.
fn slow_window_ends(warmup: usize) -> (usize, usize, Vec<usize>) {
    if warmup < 20 {
        return (warmup, 0, Vec::new());
    }
    let (init, term, base) = if INIT_BUFFER + TERM_BUFFER + BASE_WINDOW > warmup {
        let init = (0.15 * warmup as f64) as usize;
        let term = (0.1 * warmup as f64) as usize;
        (init, term, warmup - init - term)
    } else {
        (INIT_BUFFER, TERM_BUFFER, BASE_WINDOW)
    };
    let last = warmup - term;
    let mut ends = Vec::new();
    let mut start = init;
    let mut size = base;
    while start < last {
        let mut end = start + size;
        if end + 2 * size > last {
            end = last;
        }
        ends.push(end);
        start = end;
        size *= 2;
    }
    (init, term, ends)
}

fn find_reasonable_step<P: Potential + ?Sized, R: Rng>(
    target: &P,
    state: &HmcState,
    eps0: f64,
    inv_mass: &[f64],
    rng: &mut R,
) -> f64 {
    let mut eps = eps0;
    let log_accept = |eps: f64, rng: &mut R| -> f64 {
        let mut p: Vec<f64> = inv_mass
            .iter()
            .map(|m| rng.sample::<f64, _>(StandardNormal) / m.sqrt())
            .collect();
        let h0 = state.energy + kinetic(&p, inv_mass);
        let mut q = state.q.clone();
        let mut g = state.grad.clone();
        let e = leapfrog(target, &mut q, &mut p, &mut g, eps, inv_mass, 1);
        let h1 = e + kinetic(&p, inv_mass);
        let la = h0 - h1;
        if la.is_finite() {
            la
        } else {
            f64::NEG_INFINITY
        }
    };
    let first = log_accept(eps, rng);
    let direction = if first > 0.5f64.ln() { 1.0 } else { -1.0 };
    for _ in 0..60 {
        let la = log_accept(eps, rng);
        if direction * la <= direction * 0.5f64.ln() {
            break;
        }
        eps *= 2f64.powf(direction);
        if !(1e-10..=1e4).contains(&eps) {
            break;
        }
    }
    eps.clamp(1e-10, 1e4)
}

/// HMC on an arbitrary potential. Returns kept draws and acceptance
/// statistics for the post-warmup phase.
pub fn hmc_sample<P: Potential + ?Sized, R: Rng>(
    target: &P,
    init: &[f64],
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<(Vec<Vec<f64>>, AcceptanceStats)> {
    cfg.validate()?;
    let d = target.dim();
    let mut state = HmcState::new(target, init);
    if !state.energy.is_finite() {
        return Err(crate::Error::Divergence { step: 0 });
    }
    let mut inv_mass = vec![1.0; d];
    let steps = cfg.leapfrog_steps;
    let jitter = |eps: f64, rng: &mut R| -> f64 {
        if cfg.step_jitter > 0.0 {
            let u: f64 = rng.random();
            eps * (1.0 + cfg.step_jitter * (2.0 * u - 1.0))
        } else {
            eps
        }
    };

    let (init_buffer, term_buffer, window_ends) = slow_window_ends(cfg.warmup_steps);
    let mut eps = cfg.step_size;
    if cfg.warmup_steps > 0 {
        eps = find_reasonable_step(target, &state, eps, &inv_mass, rng);
    }
    let mut da = DualAveraging::new(eps, cfg.target_accept);
    let mut welford = Welford::default();
    let mut next_window = 0;
    for i in 0..cfg.warmup_steps {
        let t = transition(target, &mut state, jitter(da.current(), rng), &inv_mass, steps, rng);
        da.update(t.accept_prob);
        if i >= init_buffer && i < cfg.warmup_steps - term_buffer {
            welford.push(&state.q);
        }
        if next_window < window_ends.len() && i + 1 == window_ends[next_window] {
            next_window += 1;
            if welford.n >= 3.0 {
                inv_mass = welford.regularized_variance();
            }
            welford = Welford::default();
            let eps = find_reasonable_step(target, &state, da.current(), &inv_mass, rng);
            da = DualAveraging::new(eps, cfg.target_accept);
        }
    }
    let eps = if cfg.warmup_steps > 0 {
        da.final_step()
    } else {
        cfg.step_size
    };

    let total = cfg.kept_draws * cfg.thinning;
    let mut draws = Vec::with_capacity(cfg.kept_draws);
    let mut accept_sum = 0.0;
    let mut divergences = 0;
    for i in 0..total {
        let t = transition(target, &mut state, jitter(eps, rng), &inv_mass, steps, rng);
        accept_sum += t.accept_prob;
        divergences += t.divergent as usize;
        if (i + 1) % cfg.thinning == 0 {
            draws.push(state.q.clone());
        }
    }
    let stats = AcceptanceStats {
        mean_accept: accept_sum / total as f64,
        divergences,
        transitions: total,
        final_step_size: eps,
        inv_mass,
        divergence_warning: divergences * 10 > total,
    };
    if stats.divergence_warning {
        log::warn!(
            "{} of {} post-warmup transitions diverged",
            divergences,
            total
        );
    }
    Ok((draws, stats))
}

/// HMC chain on the network posterior, seeded by `sampler_cfg.seed`.
pub fn hmc_chain(
    init: &NetworkParams,
    data: &Dataset,
    cfg: &ObjectiveConfig,
    sampler_cfg: &SamplerConfig,
) -> Result<SampleTrace> {
    let target = BnnPotential::new(init.width(), data, *cfg)?;
    let mut rng = seeded(sampler_cfg.seed);
    let (draws, acceptance) = hmc_sample(&target, init.flat(), sampler_cfg, &mut rng)?;
    Ok(SampleTrace {
        chain_id: 0,
        sampler_kind: SamplerKind::Hmc,
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
