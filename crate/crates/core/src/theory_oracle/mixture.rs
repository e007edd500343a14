//! Moments of the uniform permutation mixture `(1/M!) Σ_π δ_{π w*}`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureMoments {
    /// `ω̄* = (1/M) Σ_m ω*_m`
    pub block_mean: Vec<f64>,
    /// `Υ = (1/M) Σ_m (ω*_m − ω̄*)(ω*_m − ω̄*)ᵀ`, the covariance of every block.
    pub upsilon: Vec<Vec<f64>>,
    /// `−Υ/(M−1)` between distinct blocks; absent for `M = 1`.
    pub cross_covariance: Option<Vec<Vec<f64>>>,
    /// `tr Cov(w) = M·tr Υ = Σ_m ‖ω*_m − ω̄*‖²`
    pub trace_total: f64,
    /// Marginal variance of every flat coordinate (`[W1 row-major, w2]` layout).
    pub per_coordinate: Vec<f64>,
}

pub fn mixture_moments(gt_blocks: &[Vec<f64>], width: usize) -> Result<MixtureMoments> {
    if gt_blocks.len() != width || width == 0 {
        return Err(invalid(format!(
            "expected {width} blocks, got {}",
            gt_blocks.len()
        )));
    }
    let q = gt_blocks[0].len();
    if q < 2 || gt_blocks.iter().any(|b| b.len() != q) {
        return Err(invalid("blocks must share a length >= 2"));
    }
    let mf = width as f64;
    let mut mean = vec![0.0; q];
    for b in gt_blocks {
        for (acc, v) in mean.iter_mut().zip(b) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= mf);

    let mut upsilon = vec![vec![0.0; q]; q];
    let mut trace_total = 0.0;
    for b in gt_blocks {
        let dev: Vec<f64> = b.iter().zip(&mean).map(|(x, m)| x - m).collect();
        for i in 0..q {
            for j in 0..q {
                upsilon[i][j] += dev[i] * dev[j];
            }
        }
        trace_total += dev.iter().map(|v| v * v).sum::<f64>();
    }
    upsilon
        .iter_mut()
        .flatten()
        .for_each(|v| *v /= mf);

    let cross_covariance = (width > 1).then(|| {
        upsilon
            .iter()
            .map(|row| row.iter().map(|v| -v / (mf - 1.0)).collect())
            .collect()
    });

    let p = q - 1;
    let mut per_coordinate = vec![0.0; width * q];
    for m in 0..width {
        for j in 0..p {
            per_coordinate[m * p + j] = upsilon[j][j];
        }
        per_coordinate[width * p + m] = upsilon[p][p];
    }

    Ok(MixtureMoments {
        block_mean: mean,
        upsilon,
        cross_covariance,
        trace_total,
        per_coordinate,
    })
}
