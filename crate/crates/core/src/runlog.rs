//! Run logs and model checkpoints.
//!
//! A run log is line-delimited JSON: one `header` line, one `iteration`
//! line per record (iteration 0 is the initial design) and a closing
//! `summary` line. Lines are flushed as they are produced, so an aborted run
//! leaves a readable prefix.
//!
//! A checkpoint is a short text header terminated by an `end_header` line,
//! followed by the raw parameter vector as little-endian `f64`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Architecture, ParetoSetModel};
use crate::optimizer::{Archive, IterationRecord, LhdReference, RunConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub version: String,
    pub problem: String,
    pub n_var: usize,
    pub n_obj: usize,
    pub seed: u64,
    pub config: RunConfig,
    pub lhd_reference: Option<LhdReference>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "state")]
pub enum RunStatus {
    Completed,
    Failed { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub status: RunStatus,
    pub archive: Archive,
    /// One entry per record; `null` once the archive reaches the reference.
    pub lhd: Vec<Option<f64>>,
    /// Final checkpoint file name, relative to the log's directory.
    pub checkpoint: Option<String>,
    pub evaluations: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
enum Line {
    Header(RunHeader),
    Iteration(IterationRecord),
    Summary(RunSummary),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub header: RunHeader,
    pub records: Vec<IterationRecord>,
    /// Absent when the writer was interrupted.
    pub summary: Option<RunSummary>,
}

impl RunLog {
    pub fn lhd_trace(&self) -> Vec<Option<f64>> {
        self.records.iter().map(|r| r.lhd).collect()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        let mut push = |line: &Line| -> Result<()> {
            out.push_str(&serde_json::to_string(line)?);
            out.push('\n');
            Ok(())
        };
        push(&Line::Header(self.header.clone()))?;
        for r in &self.records {
            push(&Line::Iteration(r.clone()))?;
        }
        if let Some(s) = &self.summary {
            push(&Line::Summary(s.clone()))?;
        }
        Ok(out)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut header = None;
        let mut records = Vec::new();
        let mut summary = None;
        for (k, raw) in text.lines().enumerate() {
            if raw.trim().is_empty() {
                continue;
            }
            let err = |message: String| Error::Format {
                path: path.to_path_buf(),
                line: k + 1,
                message,
            };
            let line: Line = serde_json::from_str(raw).map_err(|e| err(e.to_string()))?;
            match line {
                Line::Header(h) if header.is_none() && k == 0 => header = Some(h),
                Line::Iteration(r) if header.is_some() && summary.is_none() => records.push(r),
                Line::Summary(s) if header.is_some() && summary.is_none() => summary = Some(s),
                _ => return Err(err("record out of order".into())),
            }
        }
        let header = header.ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            line: 1,
            message: "missing header".into(),
        })?;
        Ok(Self {
            header,
            records,
            summary,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()?)?;
        Ok(())
    }
}

/// Streams a run log to disk line by line.
pub struct LogWriter {
    out: BufWriter<File>,
}

impl LogWriter {
    pub fn create(path: &Path, header: &RunHeader) -> Result<Self> {
        let mut w = Self {
            out: BufWriter::new(File::create(path)?),
        };
        w.line(&Line::Header(header.clone()))?;
        Ok(w)
    }

    fn line(&mut self, line: &Line) -> Result<()> {
        serde_json::to_writer(&mut self.out, line)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }

    pub fn record(&mut self, record: &IterationRecord) -> Result<()> {
        self.line(&Line::Iteration(record.clone()))
    }

    pub fn summary(&mut self, summary: &RunSummary) -> Result<()> {
        self.line(&Line::Summary(summary.clone()))
    }
}

const CHECKPOINT_MAGIC: &str = "svh-psl-checkpoint 1";

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ")
}

pub fn write_checkpoint(path: &Path, model: &ParetoSetModel, seed: u64, iteration: usize) -> Result<()> {
    let arch = model.architecture();
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{CHECKPOINT_MAGIC}")?;
    writeln!(out, "n_obj {}", arch.n_obj)?;
    writeln!(out, "hidden {}", arch.hidden)?;
    writeln!(out, "n_var {}", arch.n_var)?;
    writeln!(out, "lower {}", join(model.lower()))?;
    writeln!(out, "upper {}", join(model.upper()))?;
    writeln!(out, "seed {seed}")?;
    writeln!(out, "iteration {iteration}")?;
    writeln!(out, "n_params {}", model.theta().len())?;
    writeln!(out, "end_header")?;
    for v in model.theta() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// Loads a checkpoint, returning the model and the iteration it was taken at.
pub fn read_checkpoint(path: &Path) -> Result<(ParetoSetModel, usize)> {
    let mut reader = BufReader::new(File::open(path)?);
    let fail = |line: usize, message: &str| Error::Format {
        path: path.to_path_buf(),
        line,
        message: message.to_string(),
    };
    let mut fields = std::collections::HashMap::new();
    let mut line_no = 0;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            return Err(fail(line_no, "missing end_header"));
        }
        line_no += 1;
        let line = line.trim_end();
        if line_no == 1 {
            if line != CHECKPOINT_MAGIC {
                return Err(fail(1, "not a checkpoint file"));
            }
            continue;
        }
        if line == "end_header" {
            break;
        }
        let (k, v) = line.split_once(' ').ok_or_else(|| fail(line_no, "expected `key value`"))?;
        fields.insert(k.to_string(), (line_no, v.to_string()));
    }
    let get = |k: &str| fields.get(k).ok_or_else(|| fail(line_no, &format!("missing `{k}`")));
    let int = |k: &str| -> Result<usize> {
        let (n, v) = get(k)?;
        v.parse().map_err(|_| fail(*n, &format!("bad `{k}`")))
    };
    let floats = |k: &str| -> Result<Vec<f64>> {
        let (n, v) = get(k)?;
        v.split_whitespace()
            .map(|t| t.parse().map_err(|_| fail(*n, &format!("bad `{k}`"))))
            .collect()
    };
    let arch = Architecture {
        n_obj: int("n_obj")?,
        hidden: int("hidden")?,
        n_var: int("n_var")?,
    };
    let n_params = int("n_params")?;
    if n_params != arch.n_params() {
        return Err(fail(line_no, "parameter count does not match architecture"));
    }
    let (lower, upper) = (floats("lower")?, floats("upper")?);
    if lower.len() != arch.n_var || upper.len() != arch.n_var {
        return Err(fail(line_no, "bounds do not match n_var"));
    }
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    if bytes.len() != 8 * n_params {
        return Err(fail(line_no, "truncated parameter block"));
    }
    let theta = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((
        ParetoSetModel::from_theta(arch, &lower, &upper, theta),
        int("iteration")?,
    ))
}

/// Resolves a checkpoint reference stored in a log at `log_path`.
pub fn checkpoint_path(log_path: &Path, reference: &str) -> PathBuf {
    log_path.parent().unwrap_or(Path::new(".")).join(reference)
}
