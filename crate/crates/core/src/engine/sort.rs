//! External merge sort of line-record files.
//!
//! Records are buffered until the memory budget is reached, sorted stably in
//! memory and spilled to a temporary compressed run. When everything fit in
//! one buffer the output is written directly; otherwise the spilled runs are
//! k-way merged, at most [`MAX_FAN_IN`] at a time.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};

use crate::engine::merge::{k_way_merge, KWayMerge};
use crate::engine::record::KeySpec;
use crate::engine::runfile::{RunReader, RunWriter};
use crate::error::{IoContext, Result};

pub const MAX_FAN_IN: usize = 64;

/// Bookkeeping bytes charged per buffered record on top of its text.
const RECORD_OVERHEAD: usize = 64;

static SPILL_COUNTER: AtomicU64 = AtomicU64::new(0);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SortedRun {
    pub path: PathBuf,
    pub key: KeySpec,
    pub record_count: u64,
}

impl SortedRun {
    /// Describes an existing sorted file without reading it.
    pub fn existing(path: impl Into<PathBuf>, key: KeySpec) -> Self {
        SortedRun {
            path: path.into(),
            key,
            record_count: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SortConfig {
    pub memory_budget: usize,
    pub temp_dir: PathBuf,
}

impl SortConfig {
    pub fn new(memory_budget: usize, temp_dir: impl Into<PathBuf>) -> Self {
        SortConfig {
            memory_budget: memory_budget.max(1),
            temp_dir: temp_dir.into(),
        }
    }
}

struct Buffered {
    ranges: Vec<(u32, u32)>,
    line: String,
}

fn key_cmp(a: &Buffered, b: &Buffered) -> std::cmp::Ordering {
    for (x, y) in a.ranges.iter().zip(&b.ranges) {
        let l = &a.line.as_bytes()[x.0 as usize..x.1 as usize];
        let r = &b.line.as_bytes()[y.0 as usize..y.1 as usize];
        match l.cmp(r) {
            std::cmp::Ordering::Equal => continue,
            ord => return ord,
        }
    }
    std::cmp::Ordering::Equal
}

fn spill_path(dir: &Path) -> PathBuf {
    let n = SPILL_COUNTER.fetch_add(1, AtomicOrdering::Relaxed);
    dir.join(format!("spill-{}-{n}.gz", std::process::id()))
}

fn write_sorted(buf: &mut Vec<Buffered>, path: &Path) -> Result<u64> {
    buf.sort_by(key_cmp);
    let mut w = RunWriter::create(path)?;
    for b in buf.drain(..) {
        w.write_record(&b.line)?;
    }
    w.finish()
}

/// Sorts the run file at `input` into `output`.
pub fn external_sort(
    input: impl AsRef<Path>,
    output: impl AsRef<Path>,
    key: &KeySpec,
    config: &SortConfig,
) -> Result<SortedRun> {
    let reader = RunReader::open(input)?;
    sort_records(reader, output, key, config)
}

/// Sorts a record stream into a run file at `output`. Stable: records with
/// equal keys keep their input order.
pub fn sort_records<I>(
    records: I,
    output: impl AsRef<Path>,
    key: &KeySpec,
    config: &SortConfig,
) -> Result<SortedRun>
where
    I: IntoIterator<Item = Result<String>>,
{
    let output = output.as_ref();
    let mut buf: Vec<Buffered> = Vec::new();
    let mut used = 0usize;
    let mut spills: Vec<PathBuf> = Vec::new();

    let result = (|| {
        for rec in records {
            let line = rec?;
            used += line.len() + RECORD_OVERHEAD;
            buf.push(Buffered {
                ranges: key.ranges(&line),
                line,
            });
            if used >= config.memory_budget {
                if spills.is_empty() {
                    fs::create_dir_all(&config.temp_dir).at(&config.temp_dir)?;
                }
                let path = spill_path(&config.temp_dir);
                spills.push(path.clone());
                write_sorted(&mut buf, &path)?;
                used = 0;
            }
        }

        if spills.is_empty() {
            let n = write_sorted(&mut buf, output)?;
            return Ok(SortedRun {
                path: output.to_path_buf(),
                key: key.clone(),
                record_count: n,
            });
        }
        if !buf.is_empty() {
            let path = spill_path(&config.temp_dir);
            spills.push(path.clone());
            write_sorted(&mut buf, &path)?;
        }
        merge_spills(&mut spills, output, key, config)
    })();

    for p in &spills {
        let _ = fs::remove_file(p);
    }
    result
}

fn merge_spills(
    spills: &mut Vec<PathBuf>,
    output: &Path,
    key: &KeySpec,
    config: &SortConfig,
) -> Result<SortedRun> {
    // Merging contiguous groups keeps equal keys in original order.
    while spills.len() > MAX_FAN_IN {
        let mut next = Vec::with_capacity(spills.len() / MAX_FAN_IN + 1);
        for chunk in spills.chunks(MAX_FAN_IN) {
            let path = spill_path(&config.temp_dir);
            merge_into(chunk, &path, key)?;
            for p in chunk {
                let _ = fs::remove_file(p);
            }
            next.push(path);
        }
        *spills = next;
    }
    let n = merge_into(spills, output, key)?;
    Ok(SortedRun {
        path: output.to_path_buf(),
        key: key.clone(),
        record_count: n,
    })
}

fn merge_into(paths: &[PathBuf], output: &Path, key: &KeySpec) -> Result<u64> {
    let runs: Vec<SortedRun> = paths
        .iter()
        .map(|p| SortedRun::existing(p, key.clone()))
        .collect();
    let merged: KWayMerge<RunReader> = k_way_merge(&runs, key)?;
    let mut w = RunWriter::create(output)?;
    for rec in merged {
        w.write_record(&rec?)?;
    }
    w.finish()
}
