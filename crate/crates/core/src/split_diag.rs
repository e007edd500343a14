//! Assignment of model neurons to true neurons, splitting coefficients and
//! scalar projections.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::relu_net::NetworkParams;
use crate::synth::{abs_cosine, dot, norm, GroundTruth};

/// Surjection candidate `ς: [M] → [M*]` with its preimages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentMap {
    pub sigma: Vec<usize>,
    /// `groups[m']` lists the model neurons mapped to `m'`, ascending.
    pub groups: Vec<Vec<usize>>,
    pub group_sizes: Vec<usize>,
    pub surjective: bool,
}

impl AssignmentMap {
    pub fn from_sigma(sigma: Vec<usize>, m_star: usize) -> Result<Self> {
        let mut groups = vec![Vec::new(); m_star];
        for (m, &t) in sigma.iter().enumerate() {
            if t >= m_star {
                return Err(invalid(format!("neuron {m} maps to {t} >= M* = {m_star}")));
            }
            groups[t].push(m);
        }
        let group_sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
        let surjective = group_sizes.iter().all(|&k| k > 0);
        Ok(Self {
            sigma,
            groups,
            group_sizes,
            surjective,
        })
    }

    /// Contiguous groups of the given sizes: `[0,0,…,1,1,…]`.
    pub fn balanced(sizes: &[usize]) -> Result<Self> {
        let sigma = sizes
            .iter()
            .enumerate()
            .flat_map(|(t, &k)| std::iter::repeat(t).take(k))
            .collect();
        Self::from_sigma(sigma, sizes.len())
    }

    pub fn width(&self) -> usize {
        self.sigma.len()
    }

    pub fn m_star(&self) -> usize {
        self.groups.len()
    }

    /// Group size of the group containing neuron `m`.
    pub fn k_of(&self, m: usize) -> usize {
        self.group_sizes[self.sigma[m]]
    }
}

/// `ς(m) = argmax_{m'} |cos(w_{1,m}, w*_{1,m'})|`, ties to the lowest index.
/// Neurons with a zero first-layer row join the currently smallest group.
pub fn assign_to_truth(params: &NetworkParams, gt: &GroundTruth) -> Result<AssignmentMap> {
    if params.input_dim() != gt.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: gt.input_dim(),
            got: params.input_dim(),
        });
    }
    let m_star = gt.width();
    let mut sigma = vec![usize::MAX; params.width()];
    let mut sizes = vec![0usize; m_star];
    let mut zero = Vec::new();
    for (m, slot) in sigma.iter_mut().enumerate() {
        let row = params.first_layer_row(m);
        if norm(row) == 0.0 {
            zero.push(m);
            continue;
        }
        let mut best = 0;
        let mut best_s = -1.0;
        for t in 0..m_star {
            let s = abs_cosine(row, gt.params.first_layer_row(t));
            if s > best_s {
                best_s = s;
                best = t;
            }
        }
        *slot = best;
        sizes[best] += 1;
    }
    for m in zero {
        let t = (0..m_star).min_by_key(|&t| (sizes[t], t)).expect("M* >= 1");
        sigma[m] = t;
        sizes[t] += 1;
    }
    AssignmentMap::from_sigma(sigma, m_star)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCoefficients {
    /// `per_group[m']` follows the order of `AssignmentMap::groups[m']`;
    /// empty for uncovered true neurons.
    pub per_group: Vec<Vec<f64>>,
    /// `c_m` indexed by model neuron.
    pub per_neuron: Vec<f64>,
    /// Negative share removed before renormalising, per group.
    pub clamped_mass: Vec<f64>,
}

impl SplitCoefficients {
    pub fn max_clamped_mass(&self) -> f64 {
        self.clamped_mass.iter().copied().fold(0.0, f64::max)
    }
}

/// Splitting coefficients from projections `π_m = ⟨ω_m, ω*⟩`:
/// `c_m = π_m² / Σ_{G} π_m̃²` over positive projections, which inverts
/// `ω_m = √c_m·ω*` exactly. Negative projections are clamped to zero and
/// their squared share is reported as clamped mass. Zero-row neurons get
/// `c = 0`.
pub fn splitting_coefficients(
    params: &NetworkParams,
    gt: &GroundTruth,
    map: &AssignmentMap,
) -> Result<SplitCoefficients> {
    if map.width() != params.width() || map.m_star() != gt.width() {
        return Err(invalid("assignment map does not match the networks"));
    }
    if params.input_dim() != gt.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: gt.input_dim(),
            got: params.input_dim(),
        });
    }
    let mut per_neuron = vec![0.0; params.width()];
    let mut per_group = Vec::with_capacity(map.m_star());
    let mut clamped_mass = vec![0.0; map.m_star()];
    for (t, group) in map.groups.iter().enumerate() {
        if group.is_empty() {
            per_group.push(Vec::new());
            continue;
        }
        let truth = gt.params.block(t);
        let proj: Vec<f64> = group
            .iter()
            .map(|&m| {
                if norm(params.first_layer_row(m)) == 0.0 {
                    0.0
                } else {
                    dot(&params.block(m), &truth)
                }
            })
            .collect();
        let total: f64 = proj.iter().sum();
        if !(total > 0.0) {
            return Err(Error::DegenerateGroup { group: t, total });
        }
        let sq_all: f64 = proj.iter().map(|v| v * v).sum();
        let sq_pos: f64 = proj.iter().map(|v| v.max(0.0).powi(2)).sum();
        clamped_mass[t] = (sq_all - sq_pos) / sq_all;
        let c: Vec<f64> = proj.iter().map(|v| v.max(0.0).powi(2) / sq_pos).collect();
        for (&m, &cm) in group.iter().zip(&c) {
            per_neuron[m] = cm;
        }
        per_group.push(c);
    }
    Ok(SplitCoefficients {
        per_group,
        per_neuron,
        clamped_mass,
    })
}

/// `s = ⟨ω_m, ω*⟩ / ‖ω*‖²`.
pub fn scalar_projection(block: &[f64], true_block: &[f64]) -> Result<f64> {
    if block.len() != true_block.len() {
        return Err(Error::DimensionMismatch {
            expected: true_block.len(),
            got: block.len(),
        });
    }
    let nn = dot(true_block, true_block);
    if nn == 0.0 {
        return Err(invalid("true block is zero"));
    }
    Ok(dot(block, true_block) / nn)
}

/// One row of the per-draw split table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRow {
    pub draw_id: usize,
    pub m: usize,
    pub sigma: usize,
    pub k: usize,
    pub c: f64,
    pub s: f64,
    pub clamped_mass: f64,
}

/// Assignment, coefficients and projections of a single draw.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawSplit {
    pub map: AssignmentMap,
    pub coefficients: Option<SplitCoefficients>,
    pub projections: Vec<f64>,
}

impl DrawSplit {
    /// Draws that are surjective, non-degenerate and clamp at most
    /// `max_clamped` in every group.
    pub fn is_valid(&self, max_clamped: f64) -> bool {
        self.map.surjective
            && self
                .coefficients
                .as_ref()
                .is_some_and(|c| c.max_clamped_mass() <= max_clamped)
    }

    pub fn rows(&self, draw_id: usize) -> Vec<SplitRow> {
        (0..self.map.width())
            .map(|m| {
                let t = self.map.sigma[m];
                let (c, clamped) = match &self.coefficients {
                    Some(sc) => (sc.per_neuron[m], sc.clamped_mass[t]),
                    None => (f64::NAN, f64::NAN),
                };
                SplitRow {
                    draw_id,
                    m,
                    sigma: t,
                    k: self.map.group_sizes[t],
                    c,
                    s: self.projections[m],
                    clamped_mass: clamped,
                }
            })
            .collect()
    }
}

/// Default exclusion threshold on clamped mass.
pub const MAX_CLAMPED_MASS: f64 = 0.05;

pub fn analyze_draw(params: &NetworkParams, gt: &GroundTruth) -> Result<DrawSplit> {
    let map = assign_to_truth(params, gt)?;
    let coefficients = match splitting_coefficients(params, gt, &map) {
        Ok(c) => Some(c),
        Err(Error::DegenerateGroup { .. }) => None,
        Err(e) => return Err(e),
    };
    let projections = (0..params.width())
        .map(|m| scalar_projection(&params.block(m), &gt.params.block(map.sigma[m])))
        .collect::<Result<Vec<_>>>()?;
    Ok(DrawSplit {
        map,
        coefficients,
        projections,
    })
}
