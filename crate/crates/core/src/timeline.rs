//! From raw maps to blob timelines: sanitized commit times, the c2Ptb join,
//! and the blob-partitioned b2tP files holding each blob's first appearance
//! in every deforked project.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::join::{JoinStats, MergeJoin};
use crate::engine::merge::{k_way_merge, Groups};
use crate::engine::partition::{partition_by_sha1, PartitionId, PARTITIONS};
use crate::engine::record::{pad_time, split_fields, KeySpec, MAX_PADDED_TIME};
use crate::engine::runfile::{RunReader, RunWriter};
use crate::engine::sort::{sort_records, SortConfig, SortedRun};
use crate::error::{Error, IoContext, Result};
use crate::ingest::CommitMeta;
use crate::oid::ObjectId;

/// 1990-01-01T00:00:00Z
pub const DEFAULT_MIN_TIME: i64 = 631_152_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeBounds {
    pub min_time: i64,
    pub max_time: i64,
}

impl TimeBounds {
    pub fn new(min_time: i64, max_time: i64) -> Result<Self> {
        if min_time < 0 || max_time > MAX_PADDED_TIME {
            return Err(Error::Config(format!(
                "time bounds must lie within 0..={MAX_PADDED_TIME}"
            )));
        }
        if min_time >= max_time {
            return Err(Error::Config(format!(
                "min time {min_time} must be below max time {max_time}"
            )));
        }
        Ok(TimeBounds { min_time, max_time })
    }

    pub fn contains(&self, t: i64) -> bool {
        (self.min_time..=self.max_time).contains(&t)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SanitizeReport {
    pub commits: u64,
    pub repaired: u64,
}

/// Fills `effective_time` on every commit so that no parent postdates its
/// child.
///
/// A commit whose raw time lies outside `bounds` inherits the latest parent
/// time (roots get `min_time`) and is counted as repaired; any other commit
/// gets `max(raw_time, latest parent time)`. Parents outside the set count as
/// `min_time`.
pub fn sanitize_times(commits: &mut [CommitMeta], bounds: TimeBounds) -> Result<SanitizeReport> {
    let index: HashMap<ObjectId, usize> = commits
        .iter()
        .enumerate()
        .map(|(i, c)| (c.commit, i))
        .collect();
    if index.len() != commits.len() {
        return Err(Error::Inconsistent("duplicate commit in sanitization input".into()));
    }

    let mut pending = vec![0usize; commits.len()];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); commits.len()];
    for (i, c) in commits.iter().enumerate() {
        for p in &c.parents {
            if let Some(&pi) = index.get(p) {
                children[pi].push(i);
                pending[i] += 1;
            }
        }
    }

    let mut ready: VecDeque<usize> = (0..commits.len()).filter(|&i| pending[i] == 0).collect();
    let mut report = SanitizeReport {
        commits: commits.len() as u64,
        repaired: 0,
    };
    let mut done = 0usize;
    while let Some(i) = ready.pop_front() {
        let latest_parent = commits[i]
            .parents
            .iter()
            .map(|p| match index.get(p) {
                Some(&pi) => commits[pi].effective_time.expect("parent processed first"),
                None => bounds.min_time,
            })
            .max();
        let raw = commits[i].raw_time;
        let eff = if bounds.contains(raw) {
            latest_parent.map_or(raw, |p| p.max(raw))
        } else {
            report.repaired += 1;
            latest_parent.unwrap_or(bounds.min_time)
        };
        commits[i].effective_time = Some(eff);
        done += 1;
        for &child in &children[i] {
            pending[child] -= 1;
            if pending[child] == 0 {
                ready.push_back(child);
            }
        }
    }
    if done != commits.len() {
        let stuck = commits.iter().find(|c| c.effective_time.is_none()).expect("unfinished commit");
        return Err(Error::ParentCycle(stuck.commit.to_hex()));
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct C2PtbStats {
    /// Distinct (commit, blob) creation events.
    pub events: u64,
    /// Events whose commit had no c2dat entry.
    pub missing_commit_data: u64,
    /// Events whose commit had no project.
    pub missing_project: u64,
    pub records: u64,
}

/// `commit;project;new_blob;old` (sorted) → `commit;blob`, sorted and unique.
fn commit_blob_pairs<I>(c2fbb: I) -> impl Iterator<Item = Result<String>>
where
    I: Iterator<Item = Result<String>>,
{
    Groups::new(c2fbb, KeySpec::field(0), KeySpec::field(0), "c2fbb").flat_map(|group| {
        let lines: Vec<Result<String>> = match group {
            Err(e) => vec![Err(e)],
            Ok(group) => {
                let mut blobs = BTreeSet::new();
                let mut commit = String::new();
                let mut err = None;
                for line in &group {
                    match split_fields::<4>(line, "c2fbb") {
                        Ok([c, _, new, _]) => {
                            commit = c.to_owned();
                            blobs.insert(new.to_owned());
                        }
                        Err(e) => {
                            err = Some(e);
                            break;
                        }
                    }
                }
                match err {
                    Some(e) => vec![Err(e)],
                    None => blobs.into_iter().map(|b| Ok(format!("{commit};{b}"))).collect(),
                }
            }
        };
        lines
    })
}

/// Joins one commit partition's c2fbb with effective commit times and the
/// deforked c2P map, writing `commit;project;time;blob` records.
pub fn build_c2ptb(c2fbb: &Path, c2dat_eff: &Path, c2p_deforked: &Path, output: &Path) -> Result<C2PtbStats> {
    let events = commit_blob_pairs(RunReader::open_or_empty(c2fbb)?);
    let mut with_time = MergeJoin::new(
        events,
        RunReader::open_or_empty(c2dat_eff)?,
        KeySpec::field(0),
        KeySpec::field(0),
    );
    let mut with_project = MergeJoin::new(
        with_time.by_ref(),
        RunReader::open_or_empty(c2p_deforked)?,
        KeySpec::field(0),
        KeySpec::field(0),
    );
    let mut w = RunWriter::create(output)?;
    for rec in with_project.by_ref() {
        let rec = rec?;
        // commit;blob;time;project
        let [commit, blob, time, project] = split_fields::<4>(&rec, "c2Ptb join")?;
        w.write_record(&format!("{commit};{project};{time};{blob}"))?;
    }
    let records = w.finish()?;
    let second: JoinStats = with_project.stats();
    drop(with_project);
    let first: JoinStats = with_time.stats();
    if first.unmatched_left > 0 {
        log::warn!(
            "{}: {} events dropped for commits without c2dat entries",
            c2fbb.display(),
            first.unmatched_left
        );
    }
    Ok(C2PtbStats {
        events: first.left_records,
        missing_commit_data: first.unmatched_left,
        missing_project: second.unmatched_left,
        records,
    })
}

/// Sub-partition file holding blobs of partition `blob_part` that came from
/// commit partition `commit_part`.
pub fn sub_partition_path(dir: &Path, blob_part: PartitionId, commit_part: PartitionId) -> PathBuf {
    dir.join(format!("b2tPc.{blob_part}.{commit_part}.gz"))
}

/// Key of sub-partition records `blob;time;project;commit`.
pub fn sub_partition_key() -> KeySpec {
    KeySpec::prefix(4)
}

/// Keeps the first record of each (blob, project) pair from a stream sorted
/// by (blob, time, project, ...).
pub fn keep_first_per_project<I>(records: I, context: &str) -> impl Iterator<Item = Result<String>>
where
    I: Iterator<Item = Result<String>>,
{
    Groups::new(records, KeySpec::field(0), KeySpec::prefix(3), context).flat_map(|group| {
        let out: Vec<Result<String>> = match group {
            Err(e) => vec![Err(e)],
            Ok(group) => {
                let mut seen: HashSet<String> = HashSet::new();
                group
                    .into_iter()
                    .filter(|line| seen.insert(crate::engine::record::nth_field(line, 2).to_owned()))
                    .map(Ok)
                    .collect()
            }
        };
        out
    })
}

/// Splits one c2Ptb partition by blob into up to 128 sub-partitions, each
/// sorted by (blob, time, project) and reduced to the first commit per
/// project. Empty sub-partitions are not written.
pub fn split_c2ptb(
    c2ptb: &Path,
    commit_part: PartitionId,
    sub_dir: &Path,
    sort: &SortConfig,
) -> Result<u64> {
    fs::create_dir_all(sub_dir).at(sub_dir)?;
    let mut writers: Vec<Option<RunWriter>> = (0..PARTITIONS).map(|_| None).collect();
    for rec in RunReader::open_or_empty(c2ptb)? {
        let rec = rec?;
        let [commit, project, time, blob] = split_fields::<4>(&rec, "c2Ptb")?;
        let j = partition_by_sha1(blob)?;
        let slot = &mut writers[j.index()];
        if slot.is_none() {
            let raw = sub_dir.join(format!("raw.{j}.{commit_part}.gz"));
            *slot = Some(RunWriter::create(raw)?);
        }
        slot.as_mut()
            .unwrap()
            .write_record(&format!("{blob};{time};{project};{commit}"))?;
    }

    let mut kept = 0;
    for (j, w) in writers.into_iter().enumerate() {
        let Some(w) = w else { continue };
        let raw = w.path().to_path_buf();
        w.finish()?;
        let j = PartitionId::new(j)?;
        let sorted = sub_dir.join(format!("sorted.{j}.{commit_part}.gz"));
        let run = sort_records(RunReader::open(&raw)?, &sorted, &sub_partition_key(), sort)?;
        let mut out = RunWriter::create(sub_partition_path(sub_dir, j, commit_part))?;
        for rec in keep_first_per_project(RunReader::open(&run.path)?, "b2tP sub-partition") {
            out.write_record(&rec?)?;
        }
        kept += out.finish()?;
        fs::remove_file(&raw).at(&raw)?;
        fs::remove_file(&sorted).at(&sorted)?;
    }
    Ok(kept)
}

/// Merges the 128 commit-partition sub-runs of blob partition `blob_part`
/// into a `blob;time;project` b2tP file.
pub fn merge_b2tp(sub_dir: &Path, blob_part: PartitionId, output: &Path) -> Result<u64> {
    let runs: Vec<SortedRun> = PartitionId::all()
        .map(|i| SortedRun::existing(sub_partition_path(sub_dir, blob_part, i), sub_partition_key()))
        .collect();
    let merged = k_way_merge(&runs, &sub_partition_key())?;
    let mut w = RunWriter::create(output)?;
    for rec in keep_first_per_project(merged, "b2tP merge") {
        let rec = rec?;
        let [blob, time, project, _commit] = split_fields::<4>(&rec, "b2tP merge")?;
        w.write_record(&format!("{blob};{time};{project}"))?;
    }
    w.finish()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TimelineEntry {
    pub blob: ObjectId,
    pub time: i64,
    pub project: String,
}

impl TimelineEntry {
    pub fn to_line(&self) -> String {
        format!("{};{};{}", self.blob, pad_time(self.time), self.project)
    }

    pub fn parse(line: &str) -> Result<Self> {
        let [blob, time, project] = split_fields::<3>(line, "b2tP")?;
        Ok(TimelineEntry {
            blob: blob.parse()?,
            time: crate::engine::record::parse_time(time)
                .ok_or_else(|| crate::engine::record::malformed("b2tP", line))?,
            project: project.to_owned(),
        })
    }
}

/// Writes `commit;effective_time` for the commits of one partition, sorted by
/// commit.
pub fn write_effective_times(commits: &[&CommitMeta], output: &Path) -> Result<u64> {
    let mut sorted: Vec<&&CommitMeta> = commits.iter().collect();
    sorted.sort_by_key(|c| c.commit);
    let mut w = RunWriter::create(output)?;
    for c in sorted {
        let t = c.effective_time.expect("sanitized");
        w.write_record(&format!("{};{}", c.commit, pad_time(t)))?;
    }
    w.finish()
}
