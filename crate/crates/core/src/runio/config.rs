use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::relu_net::ObjectiveConfig;
use crate::rng::derive_seed;
use crate::samplers::{AdamOptions, SamplerConfig, SamplerKind};
use crate::synth::DEFAULT_COLLINEARITY_BOUND;

/// Experiment grid and every knob needed to regenerate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_values: Vec<usize>,
    pub m_values: Vec<usize>,
    pub m_star: usize,
    pub p: usize,
    pub noise_sigma: f64,
    pub lambda: f64,
    pub chains: usize,
    pub sampler: SamplerKind,
    pub seed: u64,
    pub collinearity_bound: f64,
    pub init_std: f64,
    pub test_size: usize,
    pub out_dir: PathBuf,
    pub sampler_config: SamplerConfig,
    pub adam: AdamOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n_values: (6..=14).map(|e| 1usize << e).collect(),
            m_values: vec![5, 10, 20, 40],
            m_star: 5,
            p: 5,
            noise_sigma: 1.0,
            lambda: 0.5,
            chains: 10,
            sampler: SamplerKind::Hmc,
            seed: 0,
            collinearity_bound: DEFAULT_COLLINEARITY_BOUND,
            init_std: 0.1,
            test_size: 2048,
            out_dir: PathBuf::from("out"),
            sampler_config: SamplerConfig::default(),
            adam: AdamOptions::default(),
        }
    }
}

/// Seed streams carved out of the master seed.
const GT_STREAM: u64 = 0x6774;
const DATA_STREAM: u64 = 0x6461_7461;
const CHAIN_STREAM: u64 = 0x6368_6169;
const TEST_STREAM: u64 = u64::MAX;

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_values.is_empty() || self.m_values.is_empty() {
            return Err(invalid("n_values and m_values must be nonempty"));
        }
        if self.n_values.contains(&0) {
            return Err(invalid("every n must be >= 1"));
        }
        if self.m_star < 2 || self.p < 2 {
            return Err(invalid("m_star and p must be >= 2"));
        }
        if let Some(m) = self.m_values.iter().find(|&&m| m < self.m_star) {
            return Err(invalid(format!("width {m} is below m_star {}", self.m_star)));
        }
        if self.chains == 0 || self.test_size == 0 {
            return Err(invalid("chains and test_size must be >= 1"));
        }
        if !(self.init_std > 0.0) {
            return Err(invalid("init_std must be > 0"));
        }
        self.objective().validate()?;
        self.sampler_config.validate()
    }

    pub fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            lambda: self.lambda,
            noise_sigma: self.noise_sigma,
        }
    }

    pub fn gt_seed(&self) -> u64 {
        derive_seed(self.seed, GT_STREAM)
    }

    pub fn data_seed(&self, n: usize) -> u64 {
        derive_seed(derive_seed(self.seed, DATA_STREAM), n as u64)
    }

    pub fn test_seed(&self) -> u64 {
        derive_seed(self.seed, TEST_STREAM)
    }

    /// Master seed of the chains of one grid cell.
    pub fn cell_seed(&self, n: usize, width: usize) -> u64 {
        derive_seed(derive_seed(derive_seed(self.seed, CHAIN_STREAM), n as u64), width as u64)
    }

    /// Grid cells in `(n, M)` order, restricted by `filter` when given.
    pub fn cells(&self, filter: &[CellFilter]) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for &n in &self.n_values {
            for &m in &self.m_values {
                if filter.is_empty() || filter.iter().any(|f| f.matches(n, m)) {
                    out.push((n, m));
                }
            }
        }
        out
    }
}

/// `n=...,M=...` selector; a missing key matches everything.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CellFilter {
    pub n: Option<usize>,
    pub m: Option<usize>,
}

impl CellFilter {
    pub fn matches(&self, n: usize, m: usize) -> bool {
        self.n.is_none_or(|v| v == n) && self.m.is_none_or(|v| v == m)
    }
}

impl std::str::FromStr for CellFilter {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut f = CellFilter::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| invalid(format!("expected key=value in `{part}`")))?;
            let value: usize = value
                .trim()
                .parse()
                .map_err(|_| invalid(format!("`{value}` is not a nonnegative integer")))?;
            match key.trim() {
                "n" => f.n = Some(value),
                "M" | "m" => f.m = Some(value),
                other => return Err(invalid(format!("unknown cell key `{other}` (use n or M)"))),
            }
        }
        Ok(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_cover_the_grid() {
        let c = ExperimentConfig::default();
        assert_eq!(c.n_values.first(), Some(&64));
        assert_eq!(c.n_values.last(), Some(&16384));
        assert_eq!(c.n_values.len(), 9);
        assert_eq!(c.m_values, vec![5, 10, 20, 40]);
        assert_eq!(c.sampler_config.warmup_steps, 1000);
        assert_eq!(c.sampler_config.thinning, 10);
        assert_eq!(c.sampler_config.target_accept, 0.8);
        c.validate().unwrap();
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: ExperimentConfig =
            serde_json::from_str(r#"{"n_values": [128], "sampler": "sgld"}"#).unwrap();
        assert_eq!(c.n_values, vec![128]);
        assert_eq!(c.sampler, SamplerKind::Sgld);
        assert_eq!(c.chains, 10);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"sampler": "nuts"}"#).is_err());
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"chians": 3}"#).is_err());
    }

    #[test]
    fn cell_filters() {
        let c = ExperimentConfig::default();
        let f: CellFilter = "n=4096,M=10".parse().unwrap();
        assert_eq!(c.cells(&[f]), vec![(4096, 10)]);
        let f: CellFilter = "M=5".parse().unwrap();
        assert_eq!(c.cells(&[f]).len(), 9);
        assert!("x=3".parse::<CellFilter>().is_err());
        assert!("n=abc".parse::<CellFilter>().is_err());
        assert_eq!(c.cells(&[]).len(), 36);
    }

    #[test]
    fn seeds_are_distinct() {
        let c = ExperimentConfig::default();
        let seeds = [c.gt_seed(), c.data_seed(64), c.data_seed(128), c.test_seed(), c.cell_seed(64, 5)];
        for i in 0..seeds.len() {
            for j in 0..i {
                assert_ne!(seeds[i], seeds[j]);
            }
        }
    }
}
