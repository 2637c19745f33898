//! Stage orchestration over a work directory.
//!
//! Stages run in dependency order; shards within a stage run on a pool of
//! `workers` threads. Every completed stage leaves a marker recording a hash
//! of its inputs, a hash of its outputs and its record counts. A stage whose
//! marker matches the current inputs is skipped. Anything a stage left behind
//! without a marker is discarded before it runs again.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::defork::build_fork_components_sorted;
use crate::detect::{expand_copy_instances, find_origins, merge_regrouped, route_instances, CopyInstance, ExclusionList};
use crate::engine::merge::dedup_adjacent;
use crate::engine::partition::{partition_by_sha1, PartitionId, PARTITIONS};
use crate::engine::record::{nth_field, split_fields, KeySpec};
use crate::engine::runfile::{concat_files, RunReader, RunWriter};
use crate::engine::sort::{sort_records, SortConfig};
use crate::error::{Error, IoContext, Result};
use crate::export::{export_partition, export_path, read_export};
use crate::ingest::{ingest_entry, CommitMeta, CorpusManifest, IngestReport, SpillFiles};
use crate::oracle::{oracle_copy_instances, OracleResult, DEFAULT_COMMIT_LIMIT};
use crate::timeline::{build_c2ptb, merge_b2tp, sanitize_times, split_c2ptb, write_effective_times, TimeBounds, TimelineEntry, DEFAULT_MIN_TIME};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Defork,
    Timeline,
    Detect,
    Export,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Ingest, Stage::Defork, Stage::Timeline, Stage::Detect, Stage::Export];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Defork => "defork",
            Stage::Timeline => "timeline",
            Stage::Detect => "detect",
            Stage::Export => "export",
        }
    }

    fn prerequisites(self) -> &'static [Stage] {
        match self {
            Stage::Ingest => &[],
            Stage::Defork => &[Stage::Ingest],
            Stage::Timeline => &[Stage::Ingest, Stage::Defork],
            Stage::Detect => &[Stage::Timeline],
            Stage::Export => &[Stage::Detect],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub manifest_path: PathBuf,
    pub work_dir: PathBuf,
    pub workers: usize,
    pub min_time: i64,
    /// Defaults to the wall-clock time of the ingest run.
    pub max_time: Option<i64>,
    pub exclude_blobs_path: Option<PathBuf>,
    pub stages: BTreeSet<Stage>,
    pub force: bool,
    pub tag: String,
    pub memory_budget: usize,
}

impl PipelineConfig {
    pub fn new(manifest_path: impl Into<PathBuf>, work_dir: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            manifest_path: manifest_path.into(),
            work_dir: work_dir.into(),
            workers: 1,
            min_time: DEFAULT_MIN_TIME,
            max_time: None,
            exclude_blobs_path: None,
            stages: Stage::ALL.into_iter().collect(),
            force: false,
            tag: crate::export::DEFAULT_TAG.to_owned(),
            memory_budget: 64 << 20,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if let Some(max) = self.max_time {
            TimeBounds::new(self.min_time, max)?;
        } else {
            TimeBounds::new(self.min_time, crate::engine::record::MAX_PADDED_TIME)?;
        }
        if self.tag.is_empty() || self.tag.contains(['/', '\\']) {
            return Err(Error::Config(format!("invalid tag `{}`", self.tag)));
        }
        Ok(())
    }

    fn dir(&self, stage: Stage) -> PathBuf {
        self.work_dir.join(stage.name())
    }

    fn marker_path(&self, stage: Stage) -> PathBuf {
        self.work_dir.join("markers").join(format!("{}.json", stage.name()))
    }

    fn sort_config(&self) -> SortConfig {
        SortConfig::new(self.memory_budget, self.work_dir.join("tmp"))
    }

    pub fn export_dir(&self) -> PathBuf {
        self.dir(Stage::Export)
    }

    pub fn b2tp_path(&self, part: PartitionId) -> PathBuf {
        self.dir(Stage::Timeline).join(part.file_name("b2tP"))
    }

    fn exclusions(&self) -> Result<ExclusionList> {
        match &self.exclude_blobs_path {
            Some(p) => ExclusionList::load(p),
            None => Ok(ExclusionList::default()),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageMarker {
    pub stage: String,
    pub input_hash: String,
    pub output_hash: String,
    pub counts: BTreeMap<String, u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ingested_at: Option<i64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageOutcome {
    pub stage: Stage,
    pub skipped: bool,
    pub counts: BTreeMap<String, u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RunReport {
    pub stages: Vec<StageOutcome>,
}

impl RunReport {
    pub fn count(&self, stage: Stage, key: &str) -> Option<u64> {
        self.stages
            .iter()
            .find(|s| s.stage == stage)
            .and_then(|s| s.counts.get(key).copied())
    }

    pub fn executed(&self) -> impl Iterator<Item = Stage> + '_ {
        self.stages.iter().filter(|s| !s.skipped).map(|s| s.stage)
    }
}

impl fmt::Display for RunReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.stages {
            writeln!(f, "{}{}", s.stage, if s.skipped { " (up to date)" } else { "" })?;
            for (k, v) in &s.counts {
                writeln!(f, "  {k:<24} {v}")?;
            }
        }
        Ok(())
    }
}

pub fn read_marker(path: &Path) -> Result<Option<StageMarker>> {
    match fs::read(path) {
        Ok(bytes) => Ok(serde_json::from_slice(&bytes).ok()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(path, e)),
    }
}

fn write_marker(path: &Path, marker: &StageMarker) -> Result<()> {
    let parent = path.parent().expect("marker has a parent");
    fs::create_dir_all(parent).at(parent)?;
    let tmp = path.with_extension("json.tmp");
    let json = serde_json::to_vec_pretty(marker).expect("marker serializes");
    fs::write(&tmp, json).at(&tmp)?;
    fs::rename(&tmp, path).at(path)
}

/// Reads the stored markers of every stage.
pub fn stage_markers(work_dir: &Path) -> Result<Vec<(Stage, Option<StageMarker>)>> {
    Stage::ALL
        .into_iter()
        .map(|s| Ok((s, read_marker(&work_dir.join("markers").join(format!("{}.json", s.name())))?)))
        .collect()
}

fn hash_files(paths: &[PathBuf]) -> Result<String> {
    let mut h = Sha256::new();
    for p in paths {
        h.update(p.file_name().map(|n| n.as_encoded_bytes()).unwrap_or_default());
        h.update([0]);
        match fs::read(p) {
            Ok(bytes) => {
                h.update((bytes.len() as u64).to_le_bytes());
                h.update(&bytes);
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => h.update(u64::MAX.to_le_bytes()),
            Err(e) => return Err(Error::io(p, e)),
        }
    }
    Ok(hex::encode(h.finalize()))
}

fn hash_parts(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

fn now() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs() as i64)
        .unwrap_or(0)
}

const RAW_MAPS: [(&str, usize); 3] = [("c2p", 2), ("c2dat", 3), ("c2fbb", 4)];

fn partition_files(dir: &Path, map: &str) -> Vec<PathBuf> {
    PartitionId::all().map(|p| dir.join(p.file_name(map))).collect()
}

struct Runner<'a> {
    config: &'a PipelineConfig,
    pool: rayon::ThreadPool,
    manifest: CorpusManifest,
}

type Counts = BTreeMap<String, u64>;

impl Runner<'_> {
    fn shards<T, F>(&self, items: Vec<T>, f: F) -> Result<Vec<u64>>
    where
        T: Send,
        F: Fn(T) -> Result<u64> + Send + Sync,
    {
        self.pool.install(|| items.into_par_iter().map(f).collect())
    }

    fn marker(&self, stage: Stage) -> Result<Option<StageMarker>> {
        read_marker(&self.config.marker_path(stage))
    }

    fn required_marker(&self, stage: Stage) -> Result<StageMarker> {
        self.marker(stage)?.ok_or(Error::MissingStage(stage.name()))
    }

    fn input_hash(&self, stage: Stage) -> Result<String> {
        let c = self.config;
        Ok(match stage {
            Stage::Ingest => {
                let mut parts: Vec<Vec<u8>> = vec![self.manifest.to_text().into_bytes()];
                for e in &self.manifest.entries {
                    parts.push(ref_listing(&e.repo_path).into_bytes());
                }
                let refs: Vec<&[u8]> = parts.iter().map(Vec::as_slice).collect();
                hash_parts(&refs)
            }
            Stage::Defork => hash_parts(&[self.required_marker(Stage::Ingest)?.output_hash.as_bytes()]),
            Stage::Timeline => {
                let bounds = self.bounds()?;
                hash_parts(&[
                    self.required_marker(Stage::Ingest)?.output_hash.as_bytes(),
                    self.required_marker(Stage::Defork)?.output_hash.as_bytes(),
                    &bounds.min_time.to_le_bytes(),
                    &bounds.max_time.to_le_bytes(),
                ])
            }
            Stage::Detect => hash_parts(&[
                self.required_marker(Stage::Timeline)?.output_hash.as_bytes(),
                c.exclusions()?.to_text().as_bytes(),
            ]),
            Stage::Export => hash_parts(&[
                self.required_marker(Stage::Detect)?.output_hash.as_bytes(),
                c.tag.as_bytes(),
            ]),
        })
    }

    fn bounds(&self) -> Result<TimeBounds> {
        let max = match self.config.max_time {
            Some(t) => t,
            None => self
                .required_marker(Stage::Ingest)?
                .ingested_at
                .ok_or_else(|| Error::Config("ingest marker lacks its timestamp".into()))?,
        };
        TimeBounds::new(self.config.min_time, max)
    }

    fn run_stage(&self, stage: Stage) -> Result<StageOutcome> {
        for &pre in stage.prerequisites() {
            self.required_marker(pre)?;
        }
        let input_hash = self.input_hash(stage)?;
        if !self.config.force {
            if let Some(m) = self.marker(stage)? {
                if m.input_hash == input_hash {
                    log::info!("{stage}: up to date");
                    return Ok(StageOutcome {
                        stage,
                        skipped: true,
                        counts: m.counts,
                    });
                }
            }
        }

        let marker_path = self.config.marker_path(stage);
        if marker_path.exists() {
            fs::remove_file(&marker_path).at(&marker_path)?;
        }
        let dir = self.config.dir(stage);
        if dir.exists() {
            fs::remove_dir_all(&dir).at(&dir)?;
        }
        fs::create_dir_all(&dir).at(&dir)?;
        log::info!("{stage}: running");

        let mut ingested_at = None;
        let (counts, outputs) = match stage {
            Stage::Ingest => {
                ingested_at = Some(now());
                self.ingest(&dir)?
            }
            Stage::Defork => self.defork(&dir)?,
            Stage::Timeline => self.timeline(&dir)?,
            Stage::Detect => self.detect(&dir)?,
            Stage::Export => self.export(&dir)?,
        };
        let tmp = self.config.work_dir.join("tmp");
        if tmp.exists() {
            let _ = fs::remove_dir_all(&tmp);
        }
        let marker = StageMarker {
            stage: stage.name().to_owned(),
            input_hash,
            output_hash: hash_files(&outputs)?,
            counts: counts.clone(),
            ingested_at,
        };
        write_marker(&marker_path, &marker)?;
        Ok(StageOutcome {
            stage,
            skipped: false,
            counts,
        })
    }

    fn ingest(&self, dir: &Path) -> Result<(Counts, Vec<PathBuf>)> {
        let spill_dir = dir.join("spill");
        fs::create_dir_all(&spill_dir).at(&spill_dir)?;
        let entries: Vec<(usize, &crate::ingest::ManifestEntry)> = self.manifest.entries.iter().enumerate().collect();
        let reports: Vec<IngestReport> = self.pool.install(|| {
            entries
                .into_par_iter()
                .map(|(k, e)| ingest_entry(e, &SpillFiles::for_worker(&spill_dir, k)))
                .collect::<Result<Vec<_>>>()
        })?;
        let mut total = IngestReport::default();
        for r in &reports {
            total.absorb(r);
        }
        let spills: Vec<SpillFiles> = (0..self.manifest.entries.len())
            .map(|k| SpillFiles::for_worker(&spill_dir, k))
            .collect();

        let mut counts = Counts::new();
        counts.insert("projects".into(), self.manifest.entries.len() as u64);
        counts.insert("commits_walked".into(), total.commits);
        counts.insert("events".into(), total.events);
        counts.insert("skipped_commits".into(), total.skipped_commits);
        counts.insert("incomplete_commits".into(), total.incomplete_commits);
        counts.insert("skipped_refs".into(), total.skipped_refs);

        let mut outputs = Vec::new();
        let sort = self.config.sort_config();
        for (map, width) in RAW_MAPS {
            let sources: Vec<PathBuf> = spills
                .iter()
                .map(|s| match map {
                    "c2p" => s.c2p.clone(),
                    "c2dat" => s.c2dat.clone(),
                    _ => s.c2fbb.clone(),
                })
                .collect();
            let routed = route_by_commit(&sources, &dir.join("routed"), map)?;
            let finals = partition_files(dir, map);
            let items: Vec<(Option<PathBuf>, PathBuf)> = routed.into_iter().zip(finals.iter().cloned()).collect();
            let written = self.shards(items, |(src, out)| {
                let records: Box<dyn Iterator<Item = Result<String>>> = match &src {
                    Some(p) => Box::new(RunReader::open(p)?),
                    None => Box::new(std::iter::empty()),
                };
                sort_unique(records, &out, width, &sort)
            })?;
            counts.insert(format!("{map}_records"), written.iter().sum());
            outputs.extend(finals);
        }
        let path_spills: Vec<PathBuf> = spills.iter().map(|s| s.paths.clone()).collect();
        concat_files(&path_spills, dir.join("paths.gz"))?;
        fs::remove_dir_all(&spill_dir).at(&spill_dir)?;
        let routed = dir.join("routed");
        if routed.exists() {
            fs::remove_dir_all(&routed).at(&routed)?;
        }
        Ok((counts, outputs))
    }

    fn defork(&self, dir: &Path) -> Result<(Counts, Vec<PathBuf>)> {
        let ingest = self.config.dir(Stage::Ingest);
        let c2p_parts = partition_files(&ingest, "c2p");
        // commit partitions are ordered by commit prefix, so chaining them
        // keeps the global commit order
        let chained = c2p_parts
            .iter()
            .map(RunReader::open)
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten();
        let mut fork_map = build_fork_components_sorted(chained)?;
        for e in &self.manifest.entries {
            fork_map.insert_singleton(&e.project);
        }
        let p2p = dir.join("p2P.gz");
        fork_map.write(&p2p)?;

        let sort = self.config.sort_config();
        let finals = partition_files(dir, "c2P");
        let items: Vec<(PathBuf, PathBuf)> = c2p_parts.into_iter().zip(finals.iter().cloned()).collect();
        let fork_map = &fork_map;
        let written = self.shards(items, |(src, out)| {
            let mapped = RunReader::open(&src)?.map(|r| {
                let line = r?;
                let [commit, project] = split_fields::<2>(&line, "c2p")?;
                Ok(format!("{commit};{}", fork_map.resolve(project)?))
            });
            sort_unique(mapped, &out, 2, &sort)
        })?;

        let mut counts = Counts::new();
        counts.insert("projects".into(), fork_map.len() as u64);
        counts.insert("components".into(), fork_map.component_count() as u64);
        counts.insert("c2P_records".into(), written.iter().sum());
        let mut outputs = vec![p2p];
        outputs.extend(finals);
        Ok((counts, outputs))
    }

    fn timeline(&self, dir: &Path) -> Result<(Counts, Vec<PathBuf>)> {
        let ingest = self.config.dir(Stage::Ingest);
        let defork = self.config.dir(Stage::Defork);
        let bounds = self.bounds()?;

        let mut commits = Vec::new();
        for p in partition_files(&ingest, "c2dat") {
            for line in RunReader::open(&p)? {
                commits.push(CommitMeta::from_c2dat(&line?)?);
            }
        }
        let sanitized = sanitize_times(&mut commits, bounds)?;
        let mut by_part: Vec<Vec<&CommitMeta>> = vec![Vec::new(); PARTITIONS];
        for c in &commits {
            by_part[partition_by_sha1(&c.commit.to_hex())?.index()].push(c);
        }
        let eff_files = partition_files(dir, "c2dat_eff");
        let items: Vec<(Vec<&CommitMeta>, PathBuf)> = by_part.into_iter().zip(eff_files.iter().cloned()).collect();
        self.shards(items, |(cs, out)| write_effective_times(&cs, &out))?;

        let sub_dir = dir.join("sub");
        let sort = self.config.sort_config();
        let stats = self.pool.install(|| {
            PartitionId::all()
                .collect::<Vec<_>>()
                .into_par_iter()
                .map(|i| {
                    let c2ptb = dir.join(i.file_name("c2Ptb"));
                    let s = build_c2ptb(
                        &ingest.join(i.file_name("c2fbb")),
                        &dir.join(i.file_name("c2dat_eff")),
                        &defork.join(i.file_name("c2P")),
                        &c2ptb,
                    )?;
                    let kept = split_c2ptb(&c2ptb, i, &sub_dir, &sort)?;
                    Ok((s, kept))
                })
                .collect::<Result<Vec<_>>>()
        })?;

        let b2tp_files = partition_files(dir, "b2tP");
        let items: Vec<(PartitionId, PathBuf)> = PartitionId::all().zip(b2tp_files.iter().cloned()).collect();
        let b2tp = self.shards(items, |(j, out)| merge_b2tp(&sub_dir, j, &out))?;
        if sub_dir.exists() {
            fs::remove_dir_all(&sub_dir).at(&sub_dir)?;
        }

        let mut counts = Counts::new();
        counts.insert("commits".into(), sanitized.commits);
        counts.insert("repaired_times".into(), sanitized.repaired);
        counts.insert("creation_events".into(), stats.iter().map(|(s, _)| s.events).sum());
        counts.insert("events_missing_commit_data".into(), stats.iter().map(|(s, _)| s.missing_commit_data).sum());
        counts.insert("events_missing_project".into(), stats.iter().map(|(s, _)| s.missing_project).sum());
        counts.insert("c2Ptb_records".into(), stats.iter().map(|(s, _)| s.records).sum());
        counts.insert("subpartition_records".into(), stats.iter().map(|(_, k)| k).sum());
        counts.insert("b2tP_records".into(), b2tp.iter().sum());
        counts.insert("min_time".into(), bounds.min_time as u64);
        counts.insert("max_time".into(), bounds.max_time as u64);
        Ok((counts, b2tp_files))
    }

    fn detect(&self, dir: &Path) -> Result<(Counts, Vec<PathBuf>)> {
        let exclusions = self.config.exclusions()?;
        let regroup = dir.join("regroup");
        let sort = self.config.sort_config();
        let per_blob = self.pool.install(|| {
            PartitionId::all()
                .collect::<Vec<_>>()
                .into_par_iter()
                .map(|j| {
                    let b2tp = self.config.b2tp_path(j);
                    let origins_path = dir.join(j.file_name("origins"));
                    let mut origins = RunWriter::create(&origins_path)?;
                    let mut singletons = RunWriter::create(dir.join(j.file_name("singletons")))?;
                    let stats = find_origins(RunReader::open(&b2tp)?, &exclusions, &mut origins, &mut singletons)?;
                    origins.finish()?;
                    singletons.finish()?;
                    let instances = expand_copy_instances(RunReader::open(&origins_path)?, RunReader::open(&b2tp)?);
                    let n = route_instances(instances, j, &regroup, &sort)?;
                    Ok((stats, n))
                })
                .collect::<Result<Vec<_>>>()
        })?;

        let finals = partition_files(dir, "Ptb2Pt");
        let items: Vec<(PartitionId, PathBuf)> = PartitionId::all().zip(finals.iter().cloned()).collect();
        let merged = self.shards(items, |(i, out)| merge_regrouped(&regroup, i, &out))?;
        if regroup.exists() {
            fs::remove_dir_all(&regroup).at(&regroup)?;
        }

        let mut counts = Counts::new();
        counts.insert("blobs".into(), per_blob.iter().map(|(s, _)| s.blobs).sum());
        counts.insert("origins".into(), per_blob.iter().map(|(s, _)| s.origins).sum());
        counts.insert("singletons".into(), per_blob.iter().map(|(s, _)| s.singletons).sum());
        counts.insert("excluded_blobs".into(), per_blob.iter().map(|(s, _)| s.excluded).sum());
        counts.insert("exclusion_list_size".into(), exclusions.len() as u64);
        counts.insert("instances".into(), merged.iter().sum());
        let mut outputs = finals;
        outputs.extend(partition_files(dir, "origins"));
        outputs.extend(partition_files(dir, "singletons"));
        Ok((counts, outputs))
    }

    fn export(&self, dir: &Path) -> Result<(Counts, Vec<PathBuf>)> {
        let detect = self.config.dir(Stage::Detect);
        let files: Vec<PathBuf> = PartitionId::all().map(|p| export_path(dir, &self.config.tag, p)).collect();
        let items: Vec<(PartitionId, PathBuf)> = PartitionId::all().zip(files.iter().cloned()).collect();
        let lines = self.shards(items, |(i, out)| export_partition(&detect.join(i.file_name("Ptb2Pt")), &out))?;
        let mut counts = Counts::new();
        counts.insert("lines".into(), lines.iter().sum());
        counts.insert("files".into(), files.len() as u64);
        Ok((counts, files))
    }
}

/// Branch and tag tips of a repository, for change detection.
fn ref_listing(repo_path: &Path) -> String {
    let Ok(repo) = git2::Repository::open(repo_path) else {
        return String::from("unreadable");
    };
    let mut refs: Vec<String> = Vec::new();
    if let Ok(iter) = repo.references() {
        for r in iter.flatten() {
            if let (Some(name), Some(target)) = (r.name(), r.target()) {
                if name.starts_with("refs/heads/") || name.starts_with("refs/tags/") {
                    refs.push(format!("{name} {target}"));
                }
            }
        }
    }
    refs.sort();
    refs.join("\n")
}

/// Routes records of every source (in order) to per-commit-partition files.
/// Returns one entry per partition, `None` where nothing was routed.
fn route_by_commit(sources: &[PathBuf], dir: &Path, map: &str) -> Result<Vec<Option<PathBuf>>> {
    let mut writers: Vec<Option<RunWriter>> = (0..PARTITIONS).map(|_| None).collect();
    for src in sources {
        for line in RunReader::open_or_empty(src)? {
            let line = line?;
            let p = partition_by_sha1(nth_field(&line, 0))?;
            let slot = &mut writers[p.index()];
            if slot.is_none() {
                *slot = Some(RunWriter::create(dir.join(p.file_name(map)))?);
            }
            slot.as_mut().unwrap().write_record(&line)?;
        }
    }
    writers
        .into_iter()
        .map(|w| {
            w.map(|w| {
                let path = w.path().to_path_buf();
                w.finish().map(|_| path)
            })
            .transpose()
        })
        .collect()
}

/// Sorts on all `width` fields and drops duplicate records.
fn sort_unique<I>(records: I, out: &Path, width: usize, sort: &SortConfig) -> Result<u64>
where
    I: Iterator<Item = Result<String>>,
{
    let tmp = out.with_extension("sorting.gz");
    sort_records(records, &tmp, &KeySpec::prefix(width), sort)?;
    let mut w = RunWriter::create(out)?;
    for rec in dedup_adjacent(RunReader::open(&tmp)?) {
        w.write_record(&rec?)?;
    }
    let n = w.finish()?;
    fs::remove_file(&tmp).at(&tmp)?;
    Ok(n)
}

/// Runs the configured stages in dependency order.
pub fn run(config: &PipelineConfig) -> Result<RunReport> {
    config.validate()?;
    let manifest = CorpusManifest::load(&config.manifest_path)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    fs::create_dir_all(&config.work_dir).at(&config.work_dir)?;
    let runner = Runner { config, pool, manifest };
    let mut report = RunReport::default();
    for stage in Stage::ALL {
        if config.stages.contains(&stage) {
            report.stages.push(runner.run_stage(stage)?);
        }
    }
    Ok(report)
}

/// Time bounds the timeline stage used (or would use) for this work dir.
pub fn resolved_bounds(config: &PipelineConfig) -> Result<TimeBounds> {
    let max = match config.max_time {
        Some(t) => t,
        None => read_marker(&config.marker_path(Stage::Ingest))?
            .and_then(|m| m.ingested_at)
            .ok_or(Error::MissingStage("ingest"))?,
    };
    TimeBounds::new(config.min_time, max)
}

/// Every b2tP entry of a completed timeline stage.
pub fn read_timeline(config: &PipelineConfig) -> Result<BTreeMap<(crate::oid::ObjectId, String), i64>> {
    let mut out = BTreeMap::new();
    for p in PartitionId::all() {
        for line in RunReader::open(config.b2tp_path(p))? {
            let e = TimelineEntry::parse(&line?)?;
            if out.insert((e.blob, e.project.clone()), e.time).is_some() {
                return Err(Error::Inconsistent(format!("duplicate b2tP entry for {} in {}", e.blob, e.project)));
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Default)]
pub struct VerifyReport {
    pub pipeline_instances: usize,
    pub oracle_instances: usize,
    /// In the oracle's output but not the pipeline's.
    pub missing: Vec<CopyInstance>,
    /// In the pipeline's output but not the oracle's.
    pub unexpected: Vec<CopyInstance>,
    pub timeline_mismatches: Vec<String>,
    pub run: RunReport,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.missing.is_empty() && self.unexpected.is_empty() && self.timeline_mismatches.is_empty()
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "pipeline instances: {}, oracle instances: {}",
            self.pipeline_instances, self.oracle_instances
        )?;
        for m in &self.missing {
            writeln!(f, "missing    {}", crate::export::format_instance(m))?;
        }
        for u in &self.unexpected {
            writeln!(f, "unexpected {}", crate::export::format_instance(u))?;
        }
        for t in &self.timeline_mismatches {
            writeln!(f, "timeline   {t}")?;
        }
        write!(f, "{}", if self.passed() { "PASS" } else { "FAIL" })
    }
}

/// Runs the pipeline (honoring markers) and compares its output against the
/// oracle.
pub fn verify(config: &PipelineConfig) -> Result<VerifyReport> {
    verify_with_limit(config, DEFAULT_COMMIT_LIMIT)
}

pub fn verify_with_limit(config: &PipelineConfig, commit_limit: usize) -> Result<VerifyReport> {
    let mut cfg = config.clone();
    cfg.stages = Stage::ALL.into_iter().collect();
    cfg.validate()?;
    let manifest = CorpusManifest::load(&cfg.manifest_path)?;

    // refuse oversize corpora before doing pipeline work; the oracle
    // re-checks once it has enumerated commits
    let precount = count_commits(&manifest);
    if precount > commit_limit {
        return Err(Error::OracleTooLarge {
            commits: precount,
            limit: commit_limit,
        });
    }

    let run_report = run(&cfg)?;
    let bounds = resolved_bounds(&cfg)?;
    let oracle: OracleResult = oracle_copy_instances(&manifest, bounds, &cfg.exclusions()?, commit_limit)?;
    let exported = read_export(&cfg.export_dir(), &cfg.tag)?;
    let timeline = read_timeline(&cfg)?;

    let mut report = VerifyReport {
        pipeline_instances: exported.len(),
        oracle_instances: oracle.instances.len(),
        missing: oracle.instances.difference(&exported).cloned().collect(),
        unexpected: exported.difference(&oracle.instances).cloned().collect(),
        run: run_report,
        ..VerifyReport::default()
    };
    for (key, t) in &oracle.timeline {
        match timeline.get(key) {
            Some(got) if got == t => {}
            Some(got) => report
                .timeline_mismatches
                .push(format!("{} in {}: pipeline {got}, oracle {t}", key.0, key.1)),
            None => report
                .timeline_mismatches
                .push(format!("{} in {}: missing from b2tP (oracle {t})", key.0, key.1)),
        }
    }
    for key in timeline.keys() {
        if !oracle.timeline.contains_key(key) {
            report
                .timeline_mismatches
                .push(format!("{} in {}: not expected by oracle", key.0, key.1));
        }
    }
    Ok(report)
}

fn count_commits(manifest: &CorpusManifest) -> usize {
    let mut seen = std::collections::HashSet::new();
    for e in &manifest.entries {
        let Ok(repo) = git2::Repository::open(&e.repo_path) else { continue };
        let Ok(mut walk) = repo.revwalk() else { continue };
        if walk.push_glob("refs/heads").is_err() || walk.push_glob("refs/tags").is_err() {
            continue;
        }
        seen.extend(walk.flatten());
    }
    seen.len()
}
