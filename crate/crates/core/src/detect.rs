//! Copy detection over b2tP timelines: origin election, singleton and
//! exclusion filtering, destination expansion and regrouping by origin
//! project.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::join::MergeJoin;
use crate::engine::merge::{k_way_merge, Groups};
use crate::engine::partition::{partition_by_name, PartitionId, PARTITIONS};
use crate::engine::record::{malformed, pad_time, parse_time, split_fields, KeySpec};
use crate::engine::runfile::{RunReader, RunWriter};
use crate::engine::sort::{sort_records, SortConfig, SortedRun};
use crate::error::{Error, IoContext, Result};
use crate::oid::ObjectId;

/// Blobs that are routinely created independently (empty file, generated
/// boilerplate) and so never count as copies.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExclusionList {
    blobs: BTreeSet<ObjectId>,
}

impl Default for ExclusionList {
    fn default() -> Self {
        ExclusionList {
            blobs: [ObjectId::EMPTY_BLOB].into(),
        }
    }
}

impl ExclusionList {
    /// One sha1 per line; blank lines and `#` comments are ignored. The empty
    /// blob is always included.
    pub fn parse(text: &str) -> Result<Self> {
        let mut list = ExclusionList::default();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            list.blobs.insert(line.parse()?);
        }
        Ok(list)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path).at(path)?)
    }

    pub fn contains(&self, blob: &ObjectId) -> bool {
        self.blobs.contains(blob)
    }

    pub fn contains_hex(&self, blob: &str) -> bool {
        blob.parse().map(|b| self.contains(&b)).unwrap_or(false)
    }

    pub fn insert(&mut self, blob: ObjectId) {
        self.blobs.insert(blob);
    }

    pub fn len(&self) -> usize {
        self.blobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blobs.is_empty()
    }

    /// Canonical text form, for hashing into stage markers.
    pub fn to_text(&self) -> String {
        self.blobs.iter().map(|b| format!("{b}\n")).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CopyInstance {
    pub project_o: String,
    pub time_o: i64,
    pub blob: ObjectId,
    pub project_d: String,
    pub time_d: i64,
}

impl CopyInstance {
    /// Intermediate form with padded times, so byte order sorts numerically.
    pub fn to_padded_line(&self) -> String {
        format!(
            "{};{};{};{};{}",
            self.project_o,
            pad_time(self.time_o),
            self.blob,
            self.project_d,
            pad_time(self.time_d)
        )
    }

    /// Parses either the padded or the exported form.
    pub fn parse(line: &str) -> Result<Self> {
        let [po, to, b, pd, td] = split_fields::<5>(line, "Ptb2Pt")?;
        let bad = || malformed("Ptb2Pt", line);
        Ok(CopyInstance {
            project_o: po.to_owned(),
            time_o: parse_time(to).ok_or_else(bad)?,
            blob: b.parse().map_err(|_| bad())?,
            project_d: pd.to_owned(),
            time_d: parse_time(td).ok_or_else(bad)?,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OriginStats {
    pub blobs: u64,
    pub origins: u64,
    pub singletons: u64,
    pub excluded: u64,
}

/// Sweeps a b2tP partition (sorted by blob, time, project): blobs in two or
/// more projects contribute their first entry to `origins`, blobs in exactly
/// one project go to `singletons`, excluded blobs go nowhere.
pub fn find_origins<I>(
    b2tp: I,
    exclusions: &ExclusionList,
    origins: &mut RunWriter,
    singletons: &mut RunWriter,
) -> Result<OriginStats>
where
    I: Iterator<Item = Result<String>>,
{
    let mut stats = OriginStats::default();
    for group in Groups::new(b2tp, KeySpec::field(0), KeySpec::prefix(3), "b2tP") {
        let group = group?;
        stats.blobs += 1;
        let blob = crate::engine::record::nth_field(&group[0], 0);
        if exclusions.contains_hex(blob) {
            stats.excluded += 1;
            continue;
        }
        if group.len() >= 2 {
            origins.write_record(&group[0])?;
            stats.origins += 1;
        } else {
            singletons.write_record(&group[0])?;
            stats.singletons += 1;
        }
    }
    Ok(stats)
}

/// Joins origins `blob;t_o;P_o` with b2tP `blob;t_d;P_d` and yields every
/// destination other than the origin as a padded Ptb2Pt line. An origin whose
/// blob is absent from b2tP is an error, reported once the stream ends.
pub struct ExpandInstances<L, R>
where
    L: Iterator<Item = Result<String>>,
    R: Iterator<Item = Result<String>>,
{
    join: MergeJoin<L, R>,
    finished: bool,
}

impl<L, R> Iterator for ExpandInstances<L, R>
where
    L: Iterator<Item = Result<String>>,
    R: Iterator<Item = Result<String>>,
{
    type Item = Result<String>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.finished {
            return None;
        }
        loop {
            match self.join.next() {
                Some(Ok(rec)) => {
                    // blob;t_o;P_o;t_d;P_d
                    let fields = match split_fields::<5>(&rec, "origin join") {
                        Ok(f) => f,
                        Err(e) => return Some(Err(e)),
                    };
                    let [blob, t_o, p_o, t_d, p_d] = fields;
                    if p_o == p_d {
                        continue;
                    }
                    return Some(Ok(format!("{p_o};{t_o};{blob};{p_d};{t_d}")));
                }
                Some(Err(e)) => {
                    self.finished = true;
                    return Some(Err(e));
                }
                None => {
                    self.finished = true;
                    let missing = self.join.stats().unmatched_left;
                    if missing > 0 {
                        return Some(Err(Error::Inconsistent(format!(
                            "{missing} origin blobs missing from b2tP"
                        ))));
                    }
                    return None;
                }
            }
        }
    }
}

pub fn expand_copy_instances<L, R>(origins: L, b2tp: R) -> ExpandInstances<L, R>
where
    L: Iterator<Item = Result<String>>,
    R: Iterator<Item = Result<String>>,
{
    ExpandInstances {
        join: MergeJoin::new(origins, b2tp, KeySpec::field(0), KeySpec::field(0)),
        finished: false,
    }
}

/// Sort key of Ptb2Pt records: origin project, origin time, blob,
/// destination project.
pub fn ptb2pt_key() -> KeySpec {
    KeySpec::prefix(4)
}

pub fn regroup_spill_path(dir: &Path, origin_part: PartitionId, blob_part: PartitionId) -> PathBuf {
    dir.join(format!("Ptb2Pt.{origin_part}.{blob_part}.gz"))
}

/// Routes one blob partition's instances to per-origin-partition spills,
/// each sorted by [`ptb2pt_key`]. Empty spills are not written.
pub fn route_instances<I>(
    instances: I,
    blob_part: PartitionId,
    dir: &Path,
    sort: &SortConfig,
) -> Result<u64>
where
    I: Iterator<Item = Result<String>>,
{
    fs::create_dir_all(dir).at(dir)?;
    let mut writers: Vec<Option<RunWriter>> = (0..PARTITIONS).map(|_| None).collect();
    let mut n = 0;
    for rec in instances {
        let rec = rec?;
        let origin = crate::engine::record::nth_field(&rec, 0);
        let i = partition_by_name(origin);
        let slot = &mut writers[i.index()];
        if slot.is_none() {
            *slot = Some(RunWriter::create(dir.join(format!("raw.{i}.{blob_part}.gz")))?);
        }
        slot.as_mut().unwrap().write_record(&rec)?;
        n += 1;
    }
    for (i, w) in writers.into_iter().enumerate() {
        let Some(w) = w else { continue };
        let raw = w.path().to_path_buf();
        w.finish()?;
        let i = PartitionId::new(i)?;
        sort_records(
            RunReader::open(&raw)?,
            regroup_spill_path(dir, i, blob_part),
            &ptb2pt_key(),
            sort,
        )?;
        fs::remove_file(&raw).at(&raw)?;
    }
    Ok(n)
}

/// Merges every blob partition's spill for `origin_part` into one sorted
/// Ptb2Pt partition.
pub fn merge_regrouped(dir: &Path, origin_part: PartitionId, output: &Path) -> Result<u64> {
    let runs: Vec<SortedRun> = PartitionId::all()
        .map(|j| SortedRun::existing(regroup_spill_path(dir, origin_part, j), ptb2pt_key()))
        .collect();
    let mut w = RunWriter::create(output)?;
    for rec in k_way_merge(&runs, &ptb2pt_key())? {
        w.write_record(&rec?)?;
    }
    w.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::runfile::read_all;

    const B: &str = "b100000000000000000000000000000000000001";

    fn lines(v: &[&str]) -> std::vec::IntoIter<Result<String>> {
        v.iter().map(|s| Ok(s.to_string())).collect::<Vec<_>>().into_iter()
    }

    fn sweep(input: &[&str], excl: &ExclusionList) -> (Vec<String>, Vec<String>, OriginStats) {
        let dir = tempfile::tempdir().unwrap();
        let mut o = RunWriter::create(dir.path().join("o")).unwrap();
        let mut s = RunWriter::create(dir.path().join("s")).unwrap();
        let stats = find_origins(lines(input), excl, &mut o, &mut s).unwrap();
        o.finish().unwrap();
        s.finish().unwrap();
        (read_all(dir.path().join("o")).unwrap(), read_all(dir.path().join("s")).unwrap(), stats)
    }

    #[test]
    fn first_entry_is_origin() {
        let b1 = format!("{B};0000000050;B");
        let b2 = format!("{B};0000000100;A");
        let (o, s, _) = sweep(&[&b1, &b2], &ExclusionList::default());
        assert_eq!(o, vec![b1]);
        assert!(s.is_empty());
    }

    #[test]
    fn single_project_blob_is_singleton() {
        let b1 = format!("{B};0000000100;A");
        let (o, s, st) = sweep(&[&b1], &ExclusionList::default());
        assert!(o.is_empty());
        assert_eq!(s, vec![b1]);
        assert_eq!(st.singletons, 1);
    }

    #[test]
    fn excluded_blob_in_neither_output() {
        let empty = ObjectId::EMPTY_BLOB.to_hex();
        let rows: Vec<String> = (0..5).map(|i| format!("{empty};000000010{i};P{i}")).collect();
        let refs: Vec<&str> = rows.iter().map(String::as_str).collect();
        let (o, s, st) = sweep(&refs, &ExclusionList::default());
        assert!(o.is_empty() && s.is_empty());
        assert_eq!(st.excluded, 1);
    }

    #[test]
    fn unsorted_b2tp_aborts() {
        let a = format!("{B};0000000100;A");
        let b = format!("{B};0000000050;B");
        let dir = tempfile::tempdir().unwrap();
        let mut o = RunWriter::create(dir.path().join("o")).unwrap();
        let mut s = RunWriter::create(dir.path().join("s")).unwrap();
        let r = find_origins(lines(&[&a, &b]), &ExclusionList::default(), &mut o, &mut s);
        assert!(matches!(r, Err(Error::Unsorted { .. })));
    }

    #[test]
    fn exclusion_list_parsing() {
        let l = ExclusionList::parse(&format!("# generated\n{B}\n\n")).unwrap();
        assert_eq!(l.len(), 2);
        assert!(l.contains_hex(B));
        assert!(l.contains(&ObjectId::EMPTY_BLOB));
        assert!(ExclusionList::parse("nothex").is_err());
    }

    #[test]
    fn expand_one_destination() {
        let origin = format!("{B};0000000050;B");
        let rows = [format!("{B};0000000050;B"), format!("{B};0000000100;A")];
        let out: Vec<String> = expand_copy_instances(lines(&[&origin]), rows.iter().map(|s| Ok(s.clone())))
            .map(Result::unwrap)
            .collect();
        assert_eq!(out, vec![format!("B;0000000050;{B};A;0000000100")]);
    }

    #[test]
    fn expand_counts_projects_minus_one() {
        let rows: Vec<String> = ["O", "A", "B", "C"]
            .iter()
            .enumerate()
            .map(|(i, p)| format!("{B};000000010{i};{p}"))
            .collect();
        let out: Vec<String> = expand_copy_instances(lines(&[&rows[0]]), rows.iter().map(|s| Ok(s.clone())))
            .map(Result::unwrap)
            .collect();
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|l| l.starts_with("O;0000000100;")));
    }

    #[test]
    fn expand_missing_origin_blob_is_error() {
        let origin = format!("{B};0000000050;B");
        let r: Result<Vec<String>> = expand_copy_instances(lines(&[&origin]), lines(&[])).collect();
        assert!(matches!(r, Err(Error::Inconsistent(_))));
    }

    #[test]
    fn regroup_routes_by_origin_name() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        let cfg = SortConfig::new(1 << 20, d.join("tmp"));
        // pick a name that hashes to partition 64
        let name = (0..)
            .map(|i| format!("proj{i}"))
            .find(|n| partition_by_name(n).index() == 64)
            .unwrap();
        let inst = CopyInstance {
            project_o: name.clone(),
            time_o: 5,
            blob: B.parse().unwrap(),
            project_d: "dest".into(),
            time_d: 9,
        };
        let j = PartitionId::new(88).unwrap();
        route_instances(lines(&[&inst.to_padded_line()]), j, &d.join("rg"), &cfg).unwrap();
        for i in PartitionId::all() {
            let n = merge_regrouped(&d.join("rg"), i, &d.join(i.file_name("Ptb2Pt"))).unwrap();
            assert_eq!(n, u64::from(i.index() == 64), "partition {i}");
        }
        let got = read_all(d.join("Ptb2Pt.064.gz")).unwrap();
        assert_eq!(CopyInstance::parse(&got[0]).unwrap(), inst);
    }
}
