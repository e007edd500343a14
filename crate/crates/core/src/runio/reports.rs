//! Plot-ready CSV tables computed from trace files alone.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Layout, TraceFile};
use crate::analysis::{moment_validation, predictive_metrics, uncertainty_decomposition, AlignTo};
use crate::error::{Error, Result};
use crate::relu_net::ObjectiveConfig;
use crate::samplers::{SampleTrace, SAMPLER_NOTICE};
use crate::split_diag::analyze_draw;
use crate::symmetry_diag::track_chain;
use crate::synth::{sample_dataset, GroundTruth};
use crate::theory_oracle::mixture_moments;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig3Row {
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub chains: usize,
    pub draws: usize,
    pub predictive_var: f64,
    pub weight_cov_trace: f64,
    pub within_mode_trace: f64,
    /// Permutation-mixture trace divided by `d`; only for `M = M*`.
    pub theory_trace: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig4Row {
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub chain: usize,
    #[serde(rename = "SR")]
    pub sr: f64,
    pub expected_switches: f64,
    pub mean_min_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig5Row {
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub k: usize,
    pub samples: usize,
    pub alpha: f64,
    pub mean_c: f64,
    pub ks_beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig6Row {
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub k: usize,
    pub samples: usize,
    pub mean_s: f64,
    pub std_s: f64,
    pub mu_theory: f64,
    pub mean_s2: f64,
    pub std_s2: f64,
    pub inv_k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub rmse_map: f64,
    pub rmse_de: f64,
    pub rmse_post: f64,
    pub rmse_map_f: Option<f64>,
    pub rmse_de_f: Option<f64>,
    pub rmse_post_f: Option<f64>,
    pub lppd_map: f64,
    pub lppd_post: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SplitCsvRow {
    draw_id: usize,
    m: usize,
    sigma: usize,
    k: usize,
    c_m: f64,
    s_m: f64,
    clamped_mass: f64,
}

/// Outcome of [`diagnose`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DiagnoseSummary {
    pub cells: Vec<(usize, usize)>,
    pub files: Vec<PathBuf>,
    pub fig3: Vec<Fig3Row>,
    pub fig4: Vec<Fig4Row>,
    pub fig5: Vec<Fig5Row>,
    pub fig6: Vec<Fig6Row>,
    pub table1: Vec<Table1Row>,
}

fn parse_cell_dir(name: &str) -> Option<(usize, usize)> {
    let rest = name.strip_prefix('n')?;
    let (n, m) = rest.split_once("_M")?;
    Some((n.parse().ok()?, m.parse().ok()?))
}

fn parse_chain_file(name: &str) -> Option<usize> {
    name.strip_prefix("chain")?.strip_suffix(".jsonl")?.parse().ok()
}

/// Reads every `traces/n{n}_M{M}/chain{c}.jsonl`, ordered by cell and chain.
pub fn load_cells(root: &Path) -> Result<BTreeMap<(usize, usize), Vec<TraceFile>>> {
    let dir = Layout::new(root).traces();
    let mut cells = BTreeMap::new();
    if dir.is_dir() {
        for entry in std::fs::read_dir(&dir)? {
            let entry = entry?;
            let Some(key) = entry.file_name().to_str().and_then(parse_cell_dir) else {
                continue;
            };
            let mut chains = Vec::new();
            for f in std::fs::read_dir(entry.path())? {
                let f = f?;
                if let Some(c) = f.file_name().to_str().and_then(parse_chain_file) {
                    chains.push((c, f.path()));
                }
            }
            chains.sort();
            let files = chains
                .iter()
                .map(|(_, p)| TraceFile::load(p))
                .collect::<Result<Vec<_>>>()?;
            if !files.is_empty() {
                cells.insert(key, files);
            }
        }
    }
    if cells.is_empty() {
        return Err(Error::NoTraces(dir.display().to_string()));
    }
    Ok(cells)
}

struct CellReport {
    fig3: Fig3Row,
    fig4: Vec<Fig4Row>,
    fig5: Vec<Fig5Row>,
    fig6: Vec<Fig6Row>,
    table1: Table1Row,
    splits: Vec<(usize, Vec<SplitCsvRow>)>,
}

fn analyse_cell(n: usize, width: usize, files: &[TraceFile]) -> Result<CellReport> {
    let gt: &GroundTruth = files[0]
        .header
        .ground_truth
        .as_ref()
        .ok_or_else(|| Error::Format("trace header lacks the ground truth".into()))?;
    if files.iter().any(|f| f.header.ground_truth.as_ref() != Some(gt)) {
        return Err(Error::Format(format!(
            "cell n={n} M={width} mixes ground truths"
        )));
    }
    let header = &files[0].header;
    let test_seed = header.test_seed.unwrap_or(u64::MAX);
    let test_size = header.test_size.unwrap_or(2048);
    let test = sample_dataset(gt, test_size, test_seed)?;
    let objective = header.meta.objective.unwrap_or(ObjectiveConfig {
        lambda: ObjectiveConfig::default().lambda,
        noise_sigma: gt.noise_sigma.max(f64::MIN_POSITIVE),
    });
    let traces: Vec<SampleTrace> = files.iter().map(|f| f.trace.clone()).collect();
    let draws: usize = traces.iter().map(SampleTrace::len).sum();

    let unc = uncertainty_decomposition(&traces, &test.inputs, Some(gt), AlignTo::ChainFirstDraw)?;
    let theory_trace = if width == gt.width() {
        let d = gt.params.dim() as f64;
        Some(mixture_moments(&gt.params.blocks(), gt.width())?.trace_total / d)
    } else {
        None
    };
    let fig3 = Fig3Row {
        n,
        m: width,
        chains: traces.len(),
        draws,
        predictive_var: unc.predictive_var,
        weight_cov_trace: unc.weight_cov_trace,
        within_mode_trace: unc.within_mode_trace,
        theory_trace,
    };

    let mut fig4 = Vec::new();
    for t in &traces {
        let rec = track_chain(t)?;
        fig4.push(Fig4Row {
            n,
            m: width,
            chain: t.chain_id,
            sr: rec.switch_rate,
            expected_switches: rec.expected_switches(),
            mean_min_margin: rec.mean_min_margin,
        });
    }

    let (mut fig5, mut fig6) = (Vec::new(), Vec::new());
    match moment_validation(&traces, gt) {
        Ok(rep) => {
            for row in &rep.rows {
                if let Some(ks) = row.ks_beta {
                    let c = &rep.coefficients[&row.k];
                    fig5.push(Fig5Row {
                        n,
                        m: width,
                        k: row.k,
                        samples: row.samples,
                        alpha: rep.alpha,
                        mean_c: c.iter().sum::<f64>() / c.len() as f64,
                        ks_beta: ks,
                    });
                }
                fig6.push(Fig6Row {
                    n,
                    m: width,
                    k: row.k,
                    samples: row.samples,
                    mean_s: row.mean_s,
                    std_s: row.std_s,
                    mu_theory: row.mu_theory,
                    mean_s2: row.mean_s2,
                    std_s2: row.std_s2,
                    inv_k: row.inv_k,
                });
            }
        }
        Err(Error::EmptyReport(msg)) => {
            log::warn!("cell n={n} M={width}: no moment rows ({msg})");
        }
        Err(e) => return Err(e),
    }

    let f_star = gt.noise_free(&test.inputs)?;
    let pm = predictive_metrics(&traces, &test, &objective, Some(&f_star))?;
    let table1 = Table1Row {
        n,
        m: width,
        rmse_map: pm.rmse_map,
        rmse_de: pm.rmse_de,
        rmse_post: pm.rmse_posterior_mean,
        rmse_map_f: pm.rmse_map_noise_free,
        rmse_de_f: pm.rmse_de_noise_free,
        rmse_post_f: pm.rmse_posterior_mean_noise_free,
        lppd_map: pm.lppd_map,
        lppd_post: pm.lppd,
    };

    let mut splits = Vec::new();
    for t in &traces {
        let mut rows = Vec::new();
        for i in 0..t.len() {
            let split = analyze_draw(&t.draw_params(i), gt)?;
            rows.extend(split.rows(i).into_iter().map(|r| SplitCsvRow {
                draw_id: r.draw_id,
                m: r.m,
                sigma: r.sigma,
                k: r.k,
                c_m: r.c,
                s_m: r.s,
                clamped_mass: r.clamped_mass,
            }));
        }
        splits.push((t.chain_id, rows));
    }

    Ok(CellReport {
        fig3,
        fig4,
        fig5,
        fig6,
        table1,
        splits,
    })
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    if rows.is_empty() {
        w.write_record(header)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Computes every report table from the traces under `root` and writes
/// `reports/{fig3,fig4,fig5,fig6,table1}.csv` plus per-chain split tables.
pub fn diagnose(root: &Path) -> Result<DiagnoseSummary> {
    let cells = load_cells(root)?;
    let keys: Vec<(usize, usize)> = cells.keys().copied().collect();
    let work: Vec<_> = cells.iter().collect();
    let run = |((n, m), files): &(&(usize, usize), &Vec<TraceFile>)| analyse_cell(*n, *m, files);
    #[cfg(feature = "parallel")]
    let results: Vec<Result<CellReport>> = {
        use rayon::prelude::*;
        work.par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<CellReport>> = work.iter().map(run).collect();

    let layout = Layout::new(root);
    let reports_dir = layout.reports();
    let splits_dir = reports_dir.join("splits");
    std::fs::create_dir_all(&splits_dir)?;
    let mut summary = DiagnoseSummary {
        cells: keys,
        ..DiagnoseSummary::default()
    };
    for (res, ((n, m), _)) in results.into_iter().zip(&work) {
        let rep = res?;
        summary.fig3.push(rep.fig3);
        summary.fig4.extend(rep.fig4);
        summary.fig5.extend(rep.fig5);
        summary.fig6.extend(rep.fig6);
        summary.table1.push(rep.table1);
        for (chain, rows) in rep.splits {
            let path = splits_dir.join(format!("n{n}_M{m}_chain{chain}.csv"));
            write_csv(&path, &rows, &["draw_id", "m", "sigma", "k", "c_m", "s_m", "clamped_mass"])?;
            summary.files.push(path);
        }
    }
    let tables: [(&str, &[&str]); 5] = [
        ("fig3.csv", &["n", "M", "chains", "draws", "predictive_var", "weight_cov_trace", "within_mode_trace", "theory_trace"]),
        ("fig4.csv", &["n", "M", "chain", "SR", "expected_switches", "mean_min_margin"]),
        ("fig5.csv", &["n", "M", "k", "samples", "alpha", "mean_c", "ks_beta"]),
        ("fig6.csv", &["n", "M", "k", "samples", "mean_s", "std_s", "mu_theory", "mean_s2", "std_s2", "inv_k"]),
        ("table1.csv", &["n", "M", "rmse_map", "rmse_de", "rmse_post", "rmse_map_f", "rmse_de_f", "rmse_post_f", "lppd_map", "lppd_post"]),
    ];
    for (name, header) in tables {
        let path = reports_dir.join(name);
        match name {
            "fig3.csv" => write_csv(&path, &summary.fig3, header)?,
            "fig4.csv" => write_csv(&path, &summary.fig4, header)?,
            "fig5.csv" => write_csv(&path, &summary.fig5, header)?,
            "fig6.csv" => write_csv(&path, &summary.fig6, header)?,
            _ => write_csv(&path, &summary.table1, header)?,
        }
        summary.files.push(path);
    }
    Ok(summary)
}

fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Err(Error::EmptyReport(format!(
            "{} is missing; run diagnose first",
            path.display()
        )));
    }
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Human-readable digest of the report tables, also written to
/// `reports/summary.txt`.
pub fn report(root: &Path) -> Result<String> {
    let dir = Layout::new(root).reports();
    let fig3: Vec<Fig3Row> = read_csv(&dir.join("fig3.csv"))?;
    let fig4: Vec<Fig4Row> = read_csv(&dir.join("fig4.csv"))?;
    let fig6: Vec<Fig6Row> = read_csv(&dir.join("fig6.csv"))?;
    let table1: Vec<Table1Row> = read_csv(&dir.join("table1.csv"))?;

    let mut s = String::new();
    let _ = writeln!(s, "sampler: {SAMPLER_NOTICE}");
    let _ = writeln!(s);
    let _ = writeln!(s, "uncertainty (per-coordinate traces)");
    let _ = writeln!(s, "{:>6} {:>4} {:>12} {:>12} {:>12} {:>12}", "n", "M", "pred_var", "w_trace", "within", "theory");
    for r in &fig3 {
        let theory = r.theory_trace.map_or("-".to_string(), |t| format!("{t:.4e}"));
        let _ = writeln!(
            s,
            "{:>6} {:>4} {:>12.4e} {:>12.4e} {:>12.4e} {:>12}",
            r.n, r.m, r.predictive_var, r.weight_cov_trace, r.within_mode_trace, theory
        );
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "chamber switches per chain");
    let mut by_cell: BTreeMap<(usize, usize), Vec<&Fig4Row>> = BTreeMap::new();
    for r in &fig4 {
        by_cell.entry((r.n, r.m)).or_default().push(r);
    }
    let _ = writeln!(s, "{:>6} {:>4} {:>10} {:>10} {:>12}", "n", "M", "mean_sw", "max_sw", "margin");
    for ((n, m), rows) in &by_cell {
        let c = rows.len() as f64;
        let mean = rows.iter().map(|r| r.expected_switches).sum::<f64>() / c;
        let max = rows.iter().map(|r| r.expected_switches).fold(0.0, f64::max);
        let margin = rows.iter().map(|r| r.mean_min_margin).sum::<f64>() / c;
        let _ = writeln!(s, "{n:>6} {m:>4} {mean:>10.3} {max:>10.3} {margin:>12.4}");
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "split-neuron moments");
    let _ = writeln!(s, "{:>6} {:>4} {:>3} {:>8} {:>8} {:>8} {:>8} {:>8}", "n", "M", "k", "count", "E[s]", "mu", "E[s2]", "1/k");
    for r in &fig6 {
        let _ = writeln!(
            s,
            "{:>6} {:>4} {:>3} {:>8} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            r.n, r.m, r.k, r.samples, r.mean_s, r.mu_theory, r.mean_s2, r.inv_k
        );
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "predictive performance");
    let _ = writeln!(s, "{:>6} {:>4} {:>9} {:>9} {:>9} {:>11} {:>11}", "n", "M", "rmse_de", "rmse_post", "post_f*", "lppd_map", "lppd_post");
    for r in &table1 {
        let post_f = r.rmse_post_f.map_or("-".to_string(), |v| format!("{v:.4}"));
        let _ = writeln!(
            s,
            "{:>6} {:>4} {:>9.4} {:>9.4} {:>9} {:>11.3} {:>11.3}",
            r.n, r.m, r.rmse_de, r.rmse_post, post_f, r.lppd_map, r.lppd_post
        );
    }
    std::fs::write(dir.join("summary.txt"), &s)?;
    Ok(s)
}
