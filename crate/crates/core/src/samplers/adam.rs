use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::relu_net::{NetworkParams, ObjectiveConfig};
use crate::samplers::{BnnPotential, Potential};
use crate::synth::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamOptions {
    /// Initial step size, cosine-annealed to `final_learning_rate`.
    pub learning_rate: f64,
    pub final_learning_rate: f64,
    pub steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamOptions {
    fn default() -> Self {
        Self {
            learning_rate: 1.0,
            final_learning_rate: 1e-4,
            steps: 50000,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Full-batch Adam on the regularised objective.
///
/// Returns the lowest-objective iterate visited, so the result never scores
/// worse than `init`.
pub fn adam_map(
    init: &NetworkParams,
    data: &Dataset,
    cfg: &ObjectiveConfig,
    opts: &AdamOptions,
) -> Result<NetworkParams> {
    if !init.is_finite() {
        return Err(invalid("initial parameters are not finite"));
    }
    if data.input_dim() != init.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: init.input_dim(),
            got: data.input_dim(),
        });
    }
    if !(opts.learning_rate > 0.0 && opts.final_learning_rate > 0.0) {
        return Err(invalid("learning rates must be positive"));
    }
    let target = BnnPotential::new(init.width(), data, *cfg)?;
    let d = init.dim();
    let mut w = init.flat().to_vec();
    let mut grad = vec![0.0; d];
    let mut m = vec![0.0; d];
    let mut v = vec![0.0; d];
    let mut best = w.clone();
    let mut best_obj = f64::INFINITY;
    for step in 0..=opts.steps {
        let obj = target.energy_grad(&w, &mut grad);
        if !obj.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { step });
        }
        if obj < best_obj {
            best_obj = obj;
            best.copy_from_slice(&w);
        }
        if step == opts.steps {
            break;
        }
        let frac = step as f64 / opts.steps as f64;
        let lr = opts.final_learning_rate
            + 0.5 * (opts.learning_rate - opts.final_learning_rate) * (1.0 + (std::f64::consts::PI * frac).cos());
        let t = (step + 1) as i32;
        let bc1 = 1.0 - opts.beta1.powi(t);
        let bc2 = 1.0 - opts.beta2.powi(t);
        for i in 0..d {
            m[i] = opts.beta1 * m[i] + (1.0 - opts.beta1) * grad[i];
            v[i] = opts.beta2 * v[i] + (1.0 - opts.beta2) * grad[i] * grad[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            w[i] -= lr * mhat / (vhat.sqrt() + opts.epsilon);
        }
    }
    NetworkParams::from_flat(init.width(), init.input_dim(), best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relu_net::{forward_batch, objective};
    use crate::samplers::ensemble::gaussian_init;
    use crate::synth::{make_ground_truth, sample_dataset};

    #[test]
    fn stationary_start_stays_put() {
        let gt = make_ground_truth(3, 3, 2, 0.95).unwrap().with_noise_sigma(0.0);
        let data = sample_dataset(&gt, 64, 1).unwrap();
        let cfg = ObjectiveConfig::new(0.0, 1.0).unwrap();
        let out = adam_map(&gt.params, &data, &cfg, &AdamOptions::default()).unwrap();
        let dev = out
            .flat()
            .iter()
            .zip(gt.params.flat())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(dev < 1e-6);
    }

    #[test]
    fn pure_shrinkage_drives_weights_to_zero() {
        // a single point with negligible likelihood weight leaves only λ‖w‖²
        let data = Dataset::from_parts(vec![0.5, -0.2], vec![0.0], 2).unwrap();
        let cfg = ObjectiveConfig::new(1.0, 1e6).unwrap();
        let init = NetworkParams::from_flat(2, 2, vec![0.8, -0.4, 0.3, 0.9, 1.2, -0.7]).unwrap();
        let opts = AdamOptions {
            steps: 2000,
            ..AdamOptions::default()
        };
        let out = adam_map(&init, &data, &cfg, &opts).unwrap();
        assert!(out.norm_sq() < 1e-3 * init.norm_sq(), "{}", out.norm_sq());
    }

    #[test]
    fn never_worse_than_init() {
        let gt = make_ground_truth(4, 3, 5, 0.95).unwrap();
        let data = sample_dataset(&gt, 128, 1).unwrap();
        let cfg = ObjectiveConfig::default();
        let init = gaussian_init(4, 3, 0.1, 9);
        let opts = AdamOptions {
            steps: 300,
            learning_rate: 0.5,
            ..AdamOptions::default()
        };
        let out = adam_map(&init, &data, &cfg, &opts).unwrap();
        assert!(objective(&out, &data, &cfg).unwrap() <= objective(&init, &data, &cfg).unwrap());
    }

    #[test]
    fn recovers_truth_on_a_large_sample() {
        let gt = make_ground_truth(5, 5, 1, 0.95).unwrap();
        let data = sample_dataset(&gt, 4096, 10).unwrap();
        let test = sample_dataset(&gt, 2048, 11).unwrap();
        let cfg = ObjectiveConfig::default();
        let init = gaussian_init(5, 5, 0.1, 3);
        let out = adam_map(&init, &data, &cfg, &AdamOptions::default()).unwrap();
        let pred = forward_batch(&out, &test.inputs).unwrap();
        let truth = gt.noise_free(&test.inputs).unwrap();
        let rmse = (pred.iter().zip(&truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            / truth.len() as f64)
            .sqrt();
        assert!(rmse < 0.1, "rmse {rmse}");
    }

    #[test]
    fn non_finite_init_rejected() {
        let data = Dataset::from_parts(vec![0.5, -0.2], vec![0.0], 2).unwrap();
        let mut init = NetworkParams::zeros(1, 2);
        init.flat_mut()[0] = f64::NAN;
        assert!(adam_map(&init, &data, &ObjectiveConfig::default(), &AdamOptions::default()).is_err());
    }
}
