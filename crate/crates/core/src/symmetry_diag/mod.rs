//! Permutation-chamber diagnostics: optimal neuron alignment, cumulative
//! permutation tracking along a chain, switch rate and row margins.

mod hungarian;

pub use hungarian::min_cost_assignment;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::samplers::SampleTrace;
use crate::synth::{abs_cosine, norm};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    /// Row `i` of `a` is matched to row `permutation[i]` of `b`.
    pub permutation: Vec<usize>,
    /// `S[i][j] = |cos(a_i, b_j)|`, 0 when either row is zero.
    pub similarity: Vec<Vec<f64>>,
    /// Best minus second-best similarity in each row of `S`.
    pub row_margins: Vec<f64>,
    pub min_margin: f64,
}

impl AlignmentResult {
    pub fn objective(&self) -> f64 {
        self.permutation
            .iter()
            .enumerate()
            .map(|(i, &j)| self.similarity[i][j])
            .sum()
    }

    pub fn is_identity(&self) -> bool {
        is_identity(&self.permutation)
    }
}

pub fn is_identity(perm: &[usize]) -> bool {
    perm.iter().enumerate().all(|(i, &j)| i == j)
}

fn row_margin(row: &[f64]) -> f64 {
    let mut first = 0.0f64;
    let mut second = 0.0f64;
    for &s in row {
        if s > first {
            second = first;
            first = s;
        } else if s > second {
            second = s;
        }
    }
    first - second
}

/// Maximum-similarity assignment between the rows of two first layers.
///
/// Ties are broken toward the lexicographically smallest permutation, with
/// zero-norm rows of `a` placed last in the ordering.
pub fn align(first_layer_a: &[Vec<f64>], first_layer_b: &[Vec<f64>]) -> Result<AlignmentResult> {
    let m = first_layer_a.len();
    if first_layer_b.len() != m {
        return Err(invalid(format!(
            "cannot align {m} neurons with {}",
            first_layer_b.len()
        )));
    }
    if m == 0 {
        return Err(invalid("nothing to align"));
    }
    let p = first_layer_a[0].len();
    if first_layer_a.iter().chain(first_layer_b).any(|r| r.len() != p) {
        return Err(invalid("first-layer rows differ in length"));
    }
    let similarity: Vec<Vec<f64>> = first_layer_a
        .iter()
        .map(|a| first_layer_b.iter().map(|b| abs_cosine(a, b).min(1.0)).collect())
        .collect();
    if similarity.iter().flatten().any(|s| !s.is_finite()) {
        return Err(invalid("non-finite weights"));
    }
    let zero: Vec<bool> = first_layer_a.iter().map(|r| norm(r) == 0.0).collect();
    let order: Vec<usize> = (0..m)
        .filter(|&i| !zero[i])
        .chain((0..m).filter(|&i| zero[i]))
        .collect();
    let cost: Vec<Vec<f64>> = similarity
        .iter()
        .map(|row| row.iter().map(|s| -s).collect())
        .collect();
    let permutation = min_cost_assignment(&cost, &order);
    let row_margins: Vec<f64> = similarity
        .iter()
        .zip(&zero)
        .map(|(row, &z)| if z { 0.0 } else { row_margin(row) })
        .collect();
    let min_margin = row_margins.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(AlignmentResult {
        permutation,
        similarity,
        row_margins,
        min_margin,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainPermutationRecord {
    /// `local_perms[t-1]` aligns draw `t` to draw `t-1`.
    pub local_perms: Vec<Vec<usize>>,
    /// `cumulative[t]` maps neurons of draw `t` to neurons of draw 0;
    /// `cumulative[0]` is the identity.
    pub cumulative: Vec<Vec<usize>>,
    /// Minimum row margin of each consecutive-draw similarity matrix.
    pub min_margins: Vec<f64>,
    /// Fraction of steps where the cumulative permutation changes.
    pub switch_rate: f64,
    pub mean_min_margin: f64,
}

impl ChainPermutationRecord {
    /// Number of consecutive-draw steps `T`.
    pub fn steps(&self) -> usize {
        self.local_perms.len()
    }

    /// `SR·T`, the number of chamber switches along the chain.
    pub fn expected_switches(&self) -> f64 {
        self.switch_rate * self.steps() as f64
    }
}

/// Consecutive-draw alignment of a chain. A single-draw trace has `T = 0`,
/// switch rate 0 and mean margin 0.
pub fn track_chain(trace: &SampleTrace) -> Result<ChainPermutationRecord> {
    if trace.is_empty() {
        return Err(invalid("trace has no draws"));
    }
    trace.check_shape()?;
    let layers: Vec<Vec<Vec<f64>>> = (0..trace.len())
        .map(|i| trace.draw_params(i).first_layer())
        .collect();
    let m = trace.width;
    let identity: Vec<usize> = (0..m).collect();
    let mut local_perms = Vec::with_capacity(layers.len() - 1);
    let mut cumulative = vec![identity];
    let mut min_margins = Vec::with_capacity(layers.len() - 1);
    let mut switches = 0usize;
    for t in 1..layers.len() {
        let res = align(&layers[t], &layers[t - 1])?;
        let prev = cumulative.last().expect("nonempty");
        let next: Vec<usize> = res.permutation.iter().map(|&j| prev[j]).collect();
        if next != *prev {
            switches += 1;
        }
        cumulative.push(next);
        min_margins.push(res.min_margin);
        local_perms.push(res.permutation);
    }
    let steps = local_perms.len();
    let (switch_rate, mean_min_margin) = if steps == 0 {
        (0.0, 0.0)
    } else {
        (
            switches as f64 / steps as f64,
            min_margins.iter().sum::<f64>() / steps as f64,
        )
    };
    Ok(ChainPermutationRecord {
        local_perms,
        cumulative,
        min_margins,
        switch_rate,
        mean_min_margin,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchSummary {
    pub n: usize,
    pub width: usize,
    pub chains: usize,
    pub mean_switch_rate: f64,
    /// Mean of `SR·T` over chains.
    pub mean_expected_switches: f64,
    pub max_expected_switches: f64,
    pub mean_min_margin: f64,
}

/// Aggregates per-chain records keyed by `(n, M)`, sorted by key.
pub fn switch_rate_summary(
    records: &[((usize, usize), ChainPermutationRecord)],
) -> Result<Vec<SwitchSummary>> {
    if records.is_empty() {
        return Err(invalid("no chain records to summarise"));
    }
    let mut cells: BTreeMap<(usize, usize), Vec<&ChainPermutationRecord>> = BTreeMap::new();
    for (key, rec) in records {
        cells.entry(*key).or_default().push(rec);
    }
    Ok(cells
        .into_iter()
        .map(|((n, width), recs)| {
            let c = recs.len() as f64;
            SwitchSummary {
                n,
                width,
                chains: recs.len(),
                mean_switch_rate: recs.iter().map(|r| r.switch_rate).sum::<f64>() / c,
                mean_expected_switches: recs.iter().map(|r| r.expected_switches()).sum::<f64>()
                    / c,
                max_expected_switches: recs
                    .iter()
                    .map(|r| r.expected_switches())
                    .fold(0.0, f64::max),
                mean_min_margin: recs.iter().map(|r| r.mean_min_margin).sum::<f64>() / c,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samplers::{AcceptanceStats, SamplerConfig, SamplerKind, TraceMeta};

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

    #[test]
    fn self_alignment_is_identity() {
        let a = vec![vec![1.0, 0.0], vec![0.6, 0.8], vec![0.0, -1.0]];
        let r = align(&a, &a).unwrap();
        assert!(r.is_identity());
        // largest off-diagonal |cos| is 0.8
        assert!((r.min_margin - 0.2).abs() < 1e-12);
    }

    #[test]
    fn swapped_rows_give_a_transposition() {
        let a = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        let b = vec![a[1].clone(), a[0].clone(), a[2].clone()];
        assert_eq!(align(&a, &b).unwrap().permutation, vec![1, 0, 2]);
    }

    #[test]
    fn zero_rows_have_zero_similarity_and_margin() {
        let a = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
        let b = vec![vec![1.0, 0.9], vec![0.0, 0.0]];
        let r = align(&a, &b).unwrap();
        assert_eq!(r.similarity[0], vec![0.0, 0.0]);
        assert_eq!(r.row_margins[0], 0.0);
        assert_eq!(r.permutation, vec![1, 0]);
    }

    #[test]
    fn mismatched_widths_rejected() {
        assert!(align(&[vec![1.0]], &[vec![1.0], vec![2.0]]).is_err());
    }

    #[test]
    fn constant_trace_never_switches() {
        let d = vec![1.0, 0.2, -0.3, 0.9, 0.5, -1.0];
        let rec = track_chain(&trace_of(2, 2, vec![d.clone(); 5])).unwrap();
        assert_eq!(rec.switch_rate, 0.0);
        assert!(rec.cumulative.iter().all(|p| is_identity(p)));
        assert_eq!(rec.steps(), 4);
    }

    #[test]
    fn one_swap_gives_unit_rate() {
        let d0 = vec![1.0, 0.2, -0.3, 0.9, 0.5, -1.0];
        let d1 = vec![-0.3, 0.9, 1.0, 0.2, -1.0, 0.5];
        let rec = track_chain(&trace_of(2, 2, vec![d0, d1])).unwrap();
        assert_eq!(rec.switch_rate, 1.0);
        assert_eq!(rec.cumulative[1], vec![1, 0]);
    }

    #[test]
    fn summary_arithmetic() {
        let mk = |sr: f64| ChainPermutationRecord {
            local_perms: vec![vec![0]; 1000],
            cumulative: Vec::new(),
            min_margins: Vec::new(),
            switch_rate: sr,
            mean_min_margin: 0.5,
        };
        let s = switch_rate_summary(&[((64, 5), mk(0.0)), ((64, 5), mk(0.002))]).unwrap();
        assert_eq!(s.len(), 1);
        assert!((s[0].mean_expected_switches - 1.0).abs() < 1e-12);
        let s = switch_rate_summary(&[((64, 5), mk(0.0))]).unwrap();
        assert_eq!(s[0].mean_expected_switches, 0.0);
        assert!(switch_rate_summary(&[]).is_err());
    }
}
