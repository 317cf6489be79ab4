//! On-disk layout of a run directory:
//!
//! ```text
//! <out>/<run-id>/manifest           JSON RunManifest
//! <out>/<run-id>/rep-<r>.records    one JSON object per evaluation
//! <out>/<run-id>/rep-<r>.timings    CSV `t,seconds` (wall clock, not reproducible)
//! <out>/<run-id>/summary.csv        incumbent statistics per iteration
//! ```
//!
//! Record lines carry no timing data so that identical seeds give
//! byte-identical record files.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::driver::{IterationEntry, RunRecord, SummaryRow};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub problem: String,
    /// Path of the problem spec file, when the problem has one.
    pub problem_spec: Option<String>,
    pub dim: usize,
    pub initial_budget: usize,
    pub total_budget: usize,
    pub seed: u64,
    pub reps: usize,
    /// Fully resolved configuration.
    pub config: serde_json::Value,
    /// Seconds since the Unix epoch.
    pub started_at: u64,
    pub finished_at: Option<u64>,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub fn manifest_path(run_dir: &Path) -> PathBuf {
    run_dir.join("manifest")
}

pub fn records_path(run_dir: &Path, rep: usize) -> PathBuf {
    run_dir.join(format!("rep-{rep}.records"))
}

pub fn timings_path(run_dir: &Path, rep: usize) -> PathBuf {
    run_dir.join(format!("rep-{rep}.timings"))
}

pub fn summary_path(run_dir: &Path) -> PathBuf {
    run_dir.join("summary.csv")
}

pub fn write_manifest(run_dir: &Path, manifest: &RunManifest) -> Result<()> {
    fs::create_dir_all(run_dir)?;
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    fs::write(manifest_path(run_dir), text)?;
    Ok(())
}

pub fn read_manifest(run_dir: &Path) -> Result<RunManifest> {
    Ok(serde_json::from_str(&fs::read_to_string(manifest_path(run_dir))?)?)
}

/// One line of a record stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordLine {
    pub problem: String,
    pub seed: u64,
    #[serde(flatten)]
    pub entry: IterationEntry,
}

/// Appends records to a stream, flushing after every line.
pub struct RecordWriter {
    out: BufWriter<File>,
}

impl RecordWriter {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        Ok(Self {
            out: BufWriter::new(File::create(path)?),
        })
    }

    pub fn append(&mut self, line: &RecordLine) -> Result<()> {
        serde_json::to_writer(&mut self.out, line)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

pub fn record_lines(record: &RunRecord) -> impl Iterator<Item = RecordLine> + '_ {
    record.entries.iter().map(move |e| RecordLine {
        problem: record.problem.clone(),
        seed: record.seed,
        entry: e.clone(),
    })
}

pub fn write_records(path: &Path, record: &RunRecord) -> Result<()> {
    let mut w = RecordWriter::create(path)?;
    for line in record_lines(record) {
        w.append(&line)?;
    }
    Ok(())
}

/// Reads a record stream. An unparseable final line (an interrupted write)
/// is dropped; corruption anywhere else is an error.
pub fn read_records(path: &Path) -> Result<Vec<RecordLine>> {
    let reader = BufReader::new(File::open(path)?);
    let lines: Vec<String> = reader.lines().collect::<std::io::Result<_>>()?;
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RecordLine>(line) {
            Ok(r) => out.push(r),
            Err(_) if i + 1 == lines.len() => break,
            Err(e) => return Err(Error::Parse(format!("{}:{}: {e}", path.display(), i + 1))),
        }
    }
    Ok(out)
}

/// Rebuilds a [`RunRecord`] from its stream (timings are not restored).
pub fn read_run_record(path: &Path) -> Result<RunRecord> {
    let lines = read_records(path)?;
    let (problem, seed) = lines
        .first()
        .map(|l| (l.problem.clone(), l.seed))
        .ok_or_else(|| Error::Parse(format!("{} holds no records", path.display())))?;
    Ok(RunRecord::from_entries(&problem, seed, lines.into_iter().map(|l| l.entry).collect()))
}

pub fn write_timings(path: &Path, record: &RunRecord) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "t,seconds")?;
    for e in &record.entries {
        writeln!(out, "{},{}", e.t, e.wall_clock)?;
    }
    out.flush()?;
    Ok(())
}

pub const SUMMARY_HEADER: &str = "iteration,mean,stderr,q05,q50,q95,reps";

/// Floats are written in shortest round-trip form, so reading the table
/// back reproduces the computed values exactly.
pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut s = String::from(SUMMARY_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.iteration, r.mean, r.stderr, r.q05, r.q50, r.q95, r.reps
        ));
    }
    s
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    fs::write(path, summary_csv(rows))?;
    Ok(())
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(SUMMARY_HEADER) {
        return Err(Error::Parse(format!("{} lacks the summary header", path.display())));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 7 {
                return Err(Error::Parse(format!("bad summary row `{l}`")));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("`{s}`: {e}")));
            let int = |s: &str| s.parse::<usize>().map_err(|e| Error::Parse(format!("`{s}`: {e}")));
            Ok(SummaryRow {
                iteration: int(f[0])?,
                mean: num(f[1])?,
                stderr: num(f[2])?,
                q05: num(f[3])?,
                q50: num(f[4])?,
                q95: num(f[5])?,
                reps: int(f[6])?,
            })
        })
        .collect()
}
