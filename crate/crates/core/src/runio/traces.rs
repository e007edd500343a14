//! JSON Lines trace files: one header record, then one record per draw.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::samplers::{
    AcceptanceStats, SampleTrace, SamplerConfig, SamplerKind, TraceMeta, SAMPLER_NOTICE,
};
use crate::synth::GroundTruth;

pub const SCHEMA_VERSION: u32 = 1;

/// Everything about a chain except its draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub schema: u32,
    pub chain_id: usize,
    pub sampler_kind: SamplerKind,
    pub width: usize,
    pub input_dim: usize,
    pub config: SamplerConfig,
    pub init_params: Vec<f64>,
    pub acceptance: AcceptanceStats,
    pub meta: TraceMeta,
    /// Embedded so diagnostics need no other file.
    pub ground_truth: Option<GroundTruth>,
    /// Seed and size of the held-out test set used by the reports.
    pub test_seed: Option<u64>,
    pub test_size: Option<usize>,
    pub notice: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DrawRecord {
    draw: usize,
    w: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub header: TraceHeader,
    pub trace: SampleTrace,
}

impl TraceFile {
    pub fn new(trace: SampleTrace, ground_truth: Option<GroundTruth>) -> Self {
        let header = TraceHeader {
            schema: SCHEMA_VERSION,
            chain_id: trace.chain_id,
            sampler_kind: trace.sampler_kind,
            width: trace.width,
            input_dim: trace.input_dim,
            config: trace.config,
            init_params: trace.init_params.clone(),
            acceptance: trace.acceptance.clone(),
            meta: trace.meta.clone(),
            ground_truth,
            test_seed: None,
            test_size: None,
            notice: SAMPLER_NOTICE.to_string(),
        };
        Self { header, trace }
    }

    pub fn with_test_set(mut self, seed: u64, size: usize) -> Self {
        self.header.test_seed = Some(seed);
        self.header.test_size = Some(size);
        self
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer(&mut out, &self.header)?;
        out.write_all(b"\n")?;
        for (i, w) in self.trace.draws.iter().enumerate() {
            serde_json::to_writer(&mut out, &DrawRecordRef { draw: i, w })?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    /// Writes through a temporary file so readers never see a partial trace.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("jsonl.tmp");
        self.write_to(BufWriter::new(File::create(&tmp)?))?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let first = lines
            .next()
            .ok_or_else(|| Error::Format("empty trace file".into()))??;
        let header: TraceHeader = serde_json::from_str(&first)?;
        if header.schema != SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "unsupported trace schema {} (expected {SCHEMA_VERSION})",
                header.schema
            )));
        }
        let mut draws = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: DrawRecord = serde_json::from_str(&line)?;
            if rec.draw != draws.len() {
                return Err(Error::Format(format!(
                    "draw {} out of order (expected {})",
                    rec.draw,
                    draws.len()
                )));
            }
            draws.push(rec.w);
        }
        let trace = SampleTrace {
            chain_id: header.chain_id,
            sampler_kind: header.sampler_kind,
            width: header.width,
            input_dim: header.input_dim,
            config: header.config,
            init_params: header.init_params.clone(),
            acceptance: header.acceptance.clone(),
            meta: header.meta.clone(),
            draws,
        };
        trace.check_shape()?;
        Ok(Self { header, trace })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

#[derive(Serialize)]
struct DrawRecordRef<'a> {
    draw: usize,
    w: &'a [f64],
}
