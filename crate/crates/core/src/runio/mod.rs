//! Configuration, persistence and the end-to-end experiment commands
//! behind the CLI.

mod config;
mod reports;
mod traces;
mod validate;

pub use config::{CellFilter, ExperimentConfig};
pub use reports::{diagnose, report, DiagnoseSummary};
pub use traces::{TraceFile, TraceHeader, SCHEMA_VERSION};
pub use validate::{validate, Check, ValidationOptions, ValidationReport};

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::samplers::{EnsembleSpec, SamplerKind};
use crate::split_diag::AssignmentMap;
use crate::synth::{make_ground_truth, sample_dataset, Dataset, GroundTruth};
use crate::theory_oracle::sample_manifold_posterior;

/// File layout under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn ground_truth(&self) -> PathBuf {
        self.root.join("ground_truth.json")
    }

    pub fn dataset(&self, n: usize) -> PathBuf {
        self.root.join("data").join(format!("n{n}.json"))
    }

    pub fn test_set(&self) -> PathBuf {
        self.root.join("data").join("test.json")
    }

    pub fn traces(&self) -> PathBuf {
        self.root.join("traces")
    }

    pub fn cell(&self, n: usize, width: usize) -> PathBuf {
        self.traces().join(format!("n{n}_M{width}"))
    }

    pub fn chain(&self, n: usize, width: usize, chain: usize) -> PathBuf {
        self.cell(n, width).join(format!("chain{chain}.jsonl"))
    }

    /// Written once every chain of a cell is on disk; holds the wall-clock
    /// seconds the cell took.
    pub fn cell_done(&self, n: usize, width: usize) -> PathBuf {
        self.cell(n, width).join("DONE")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::WouldOverwrite(path.display().to_string()));
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn build_ground_truth(cfg: &ExperimentConfig) -> Result<GroundTruth> {
    Ok(make_ground_truth(cfg.m_star, cfg.p, cfg.gt_seed(), cfg.collinearity_bound)?
        .with_noise_sigma(cfg.noise_sigma))
}

pub fn build_dataset(cfg: &ExperimentConfig, gt: &GroundTruth, n: usize) -> Result<Dataset> {
    sample_dataset(gt, n, cfg.data_seed(n))
}

pub fn build_test_set(cfg: &ExperimentConfig, gt: &GroundTruth) -> Result<Dataset> {
    sample_dataset(gt, cfg.test_size, cfg.test_seed())
}

/// Files written by [`generate`].
#[derive(Debug, Clone)]
pub struct Generated {
    pub ground_truth: GroundTruth,
    pub files: Vec<PathBuf>,
}

/// Writes the config snapshot, the ground truth, one dataset per `n` and
/// the test set. Existing files are only replaced with `force`.
pub fn generate(cfg: &ExperimentConfig, force: bool) -> Result<Generated> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.out_dir);
    let gt = build_ground_truth(cfg)?;
    let mut planned = vec![layout.config(), layout.ground_truth(), layout.test_set()];
    planned.extend(cfg.n_values.iter().map(|&n| layout.dataset(n)));
    if !force {
        if let Some(p) = planned.iter().find(|p| p.exists()) {
            return Err(Error::WouldOverwrite(p.display().to_string()));
        }
    }
    write_json(&layout.config(), cfg, true)?;
    write_json(&layout.ground_truth(), &gt, true)?;
    write_json(&layout.test_set(), &build_test_set(cfg, &gt)?, true)?;
    for &n in &cfg.n_values {
        write_json(&layout.dataset(n), &build_dataset(cfg, &gt, n)?, true)?;
    }
    Ok(Generated {
        ground_truth: gt,
        files: planned,
    })
}

/// Loads generated artifacts, regenerating any that are missing.
fn load_or_build(cfg: &ExperimentConfig, layout: &Layout) -> Result<GroundTruth> {
    let path = layout.ground_truth();
    if path.exists() {
        let gt: GroundTruth = read_json(&path)?;
        if gt != build_ground_truth(cfg)? {
            return Err(invalid(format!(
                "{} was generated from a different config; rerun generate --force",
                path.display()
            )));
        }
        Ok(gt)
    } else {
        build_ground_truth(cfg)
    }
}

/// Group sizes for a manifold-oracle cell: `M` spread over `M*` groups as
/// evenly as possible, larger groups first.
pub fn balanced_sizes(width: usize, m_star: usize) -> Vec<usize> {
    (0..m_star)
        .map(|t| width / m_star + usize::from(t < width % m_star))
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SampleSummary {
    pub cells_run: Vec<(usize, usize)>,
    pub cells_skipped: Vec<(usize, usize)>,
    /// `(n, M, chain, error)` for chains that failed.
    pub failures: Vec<(usize, usize, usize, String)>,
}

/// Runs every selected grid cell. Completed cells are skipped unless
/// `force`; a failed chain does not stop the other chains or cells.
pub fn sample(cfg: &ExperimentConfig, cells: &[CellFilter], force: bool) -> Result<SampleSummary> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.out_dir);
    let gt = load_or_build(cfg, &layout)?;
    let mut summary = SampleSummary::default();
    let selected = cfg.cells(cells);
    if selected.is_empty() {
        return Err(invalid("no grid cell matches --cells"));
    }
    for (n, width) in selected {
        if layout.cell_done(n, width).exists() && !force {
            log::info!("cell n={n} M={width} already complete, skipping");
            summary.cells_skipped.push((n, width));
            continue;
        }
        log::info!("sampling cell n={n} M={width}");
        std::fs::create_dir_all(layout.cell(n, width))?;
        let started = std::time::Instant::now();
        let results = run_cell(cfg, &gt, n, width)?;
        let mut all_ok = true;
        for (chain, res) in results.into_iter().enumerate() {
            match res {
                Ok(trace) => TraceFile::new(trace, Some(gt.clone()))
                    .with_test_set(cfg.test_seed(), cfg.test_size)
                    .save(&layout.chain(n, width, chain))?,
                Err(e) => {
                    all_ok = false;
                    log::warn!("chain {chain} of cell n={n} M={width} failed: {e}");
                    summary.failures.push((n, width, chain, e.to_string()));
                }
            }
        }
        if all_ok {
            let secs = started.elapsed().as_secs_f64();
            std::fs::write(layout.cell_done(n, width), format!("{secs:.1}\n"))?;
        }
        summary.cells_run.push((n, width));
    }
    Ok(summary)
}

fn run_cell(
    cfg: &ExperimentConfig,
    gt: &GroundTruth,
    n: usize,
    width: usize,
) -> Result<Vec<Result<crate::samplers::SampleTrace>>> {
    let seed = cfg.cell_seed(n, width);
    if cfg.sampler == SamplerKind::Manifold {
        let map = AssignmentMap::balanced(&balanced_sizes(width, cfg.m_star))?;
        return Ok((0..cfg.chains)
            .map(|c| {
                let mut t = sample_manifold_posterior(
                    gt,
                    &map,
                    cfg.sampler_config.kept_draws,
                    crate::samplers::chain_seed(seed, c),
                )?;
                t.chain_id = c;
                t.meta.dataset = Some(crate::synth::DatasetMeta {
                    n,
                    p: cfg.p,
                    seed: cfg.data_seed(n),
                    source: gt.id(),
                });
                Ok(t)
            })
            .collect());
    }
    let data = build_dataset(cfg, gt, n)?;
    let spec = EnsembleSpec {
        width,
        chains: cfg.chains,
        kind: cfg.sampler,
        objective: cfg.objective(),
        sampler: cfg.sampler_config,
        adam: cfg.adam,
        init_std: cfg.init_std,
        master_seed: seed,
    };
    let run = |c: usize| crate::samplers::run_chain(Some(gt), &data, &spec, c);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        Ok((0..cfg.chains).into_par_iter().map(run).collect())
    }
    #[cfg(not(feature = "parallel"))]
    {
        Ok((0..cfg.chains).map(run).collect())
    }
}
