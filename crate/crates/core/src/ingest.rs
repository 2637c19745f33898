//! Extraction of the three raw relations from local git repositories:
//! blob-creation events (c2fbb), commit metadata (c2dat) and commit
//! membership (c2p).

use std::collections::HashSet;
use std::ffi::OsStr;
use std::fmt;
use std::fs;
use std::os::unix::ffi::OsStrExt;
use std::path::{Path, PathBuf};

use git2::{Delta, ObjectType, Oid, Repository, TreeWalkMode, TreeWalkResult};
use serde::{Deserialize, Serialize};

use crate::engine::record::split_fields;
use crate::engine::runfile::RunWriter;
use crate::error::{Error, IoContext, Result};
use crate::oid::ObjectId;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub project: String,
    pub repo_path: PathBuf,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
}

/// Checks the flattened project-name rules: non-empty, no `;`, `/`, tab or
/// line breaks.
pub fn validate_project_name(name: &str) -> std::result::Result<(), String> {
    if name.is_empty() {
        return Err("empty project name".into());
    }
    if let Some(c) = name.chars().find(|c| matches!(c, ';' | '/' | '\t' | '\n' | '\r')) {
        return Err(format!("project name `{}` contains forbidden character {c:?}", name.escape_debug()));
    }
    Ok(())
}

impl CorpusManifest {
    /// Parses `project<TAB>repo_path` lines. Blank lines and `#` comments are
    /// skipped; relative repo paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim_end_matches('\r');
            if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
                continue;
            }
            let (project, path) = trimmed.split_once('\t').ok_or_else(|| Error::Manifest {
                line,
                message: "expected `project<TAB>repo_path`".into(),
            })?;
            validate_project_name(project).map_err(|message| Error::Manifest { line, message })?;
            if path.is_empty() {
                return Err(Error::Manifest {
                    line,
                    message: "empty repository path".into(),
                });
            }
            if !seen.insert(project.to_owned()) {
                return Err(Error::Manifest {
                    line,
                    message: format!("duplicate project `{project}`"),
                });
            }
            let repo_path = Path::new(path);
            let repo_path = if repo_path.is_absolute() {
                repo_path.to_path_buf()
            } else {
                base.join(repo_path)
            };
            entries.push(ManifestEntry {
                project: project.to_owned(),
                repo_path,
            });
        }
        Ok(CorpusManifest { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).at(path)?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{}\t{}\n", e.project, e.repo_path.display()))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CommitMeta {
    pub commit: ObjectId,
    pub parents: Vec<ObjectId>,
    /// Committer timestamp, unix seconds.
    pub raw_time: i64,
    pub effective_time: Option<i64>,
}

impl CommitMeta {
    /// `commit;raw_time;parent1,parent2,...`
    pub fn to_c2dat(&self) -> String {
        let parents: Vec<String> = self.parents.iter().map(ObjectId::to_hex).collect();
        format!("{};{};{}", self.commit, self.raw_time, parents.join(","))
    }

    pub fn from_c2dat(line: &str) -> Result<Self> {
        let [commit, time, parents] = split_fields::<3>(line, "c2dat")?;
        let bad = || crate::engine::record::malformed("c2dat", line);
        Ok(CommitMeta {
            commit: commit.parse()?,
            raw_time: time.parse().map_err(|_| bad())?,
            parents: if parents.is_empty() {
                Vec::new()
            } else {
                parents.split(',').map(str::parse).collect::<Result<_>>()?
            },
            effective_time: None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlobEvent {
    pub commit: ObjectId,
    pub project: String,
    /// Raw path bytes as stored in the tree.
    pub path: Vec<u8>,
    pub old_blob: Option<ObjectId>,
    pub new_blob: ObjectId,
}

impl BlobEvent {
    /// `commit;project;new_blob;old_blob_or_-`
    pub fn to_c2fbb(&self) -> String {
        format!(
            "{};{};{};{}",
            self.commit,
            self.project,
            self.new_blob,
            self.old_blob.map_or_else(|| "-".to_owned(), |b| b.to_hex())
        )
    }
}

/// Percent-encodes `%`, `;`, control bytes, and (for non-UTF-8 paths) every
/// byte outside ASCII.
pub fn encode_path(path: &[u8]) -> String {
    let utf8 = std::str::from_utf8(path).is_ok();
    let mut out = String::with_capacity(path.len());
    let mut i = 0;
    while i < path.len() {
        let b = path[i];
        let escape = b == b'%' || b == b';' || b < 0x20 || b == 0x7f || (!utf8 && b >= 0x80);
        if escape {
            out.push_str(&format!("%{b:02X}"));
            i += 1;
        } else if b < 0x80 {
            out.push(b as char);
            i += 1;
        } else {
            // valid UTF-8: copy the whole scalar
            let s = std::str::from_utf8(&path[i..]).expect("checked above");
            let c = s.chars().next().expect("non-empty");
            out.push(c);
            i += c.len_utf8();
        }
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub commits: u64,
    pub skipped_commits: u64,
    pub events: u64,
    pub incomplete_commits: u64,
    pub skipped_refs: u64,
}

impl IngestReport {
    pub fn absorb(&mut self, other: &IngestReport) {
        self.commits += other.commits;
        self.skipped_commits += other.skipped_commits;
        self.events += other.events;
        self.incomplete_commits += other.incomplete_commits;
        self.skipped_refs += other.skipped_refs;
    }
}

fn is_regular_file(mode: i32) -> bool {
    matches!(mode, 0o100644 | 0o100755 | 0o100664)
}

/// A read-only handle on one manifest entry's object store.
pub struct GitRepo {
    repo: Repository,
    project: String,
    path: PathBuf,
}

impl fmt::Debug for GitRepo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GitRepo")
            .field("project", &self.project)
            .field("path", &self.path)
            .finish()
    }
}

impl GitRepo {
    pub fn open(entry: &ManifestEntry) -> Result<Self> {
        let repo = Repository::open(&entry.repo_path).map_err(|source| Error::Ingest {
            project: entry.project.clone(),
            repo: entry.repo_path.clone(),
            source,
        })?;
        Ok(GitRepo {
            repo,
            project: entry.project.clone(),
            path: entry.repo_path.clone(),
        })
    }

    fn wrap(&self, source: git2::Error) -> Error {
        Error::Ingest {
            project: self.project.clone(),
            repo: self.path.clone(),
            source,
        }
    }

    /// Commit tips of every branch and tag; remote-tracking refs are ignored.
    fn tips(&self, report: &mut IngestReport) -> Result<Vec<Oid>> {
        let mut tips = Vec::new();
        for r in self.repo.references().map_err(|e| self.wrap(e))? {
            let Ok(r) = r else {
                report.skipped_refs += 1;
                continue;
            };
            let name = r.name_bytes();
            if !(name.starts_with(b"refs/heads/") || name.starts_with(b"refs/tags/")) {
                continue;
            }
            match r.peel_to_commit() {
                Ok(c) => tips.push(c.id()),
                // tags on trees or blobs, dangling refs
                Err(_) => report.skipped_refs += 1,
            }
        }
        tips.sort();
        tips.dedup();
        Ok(tips)
    }

    /// Every commit reachable from a branch or tag, each exactly once.
    pub fn enumerate_commits(&self, report: &mut IngestReport) -> Result<Vec<CommitMeta>> {
        let tips = self.tips(report)?;
        if tips.is_empty() {
            return Ok(Vec::new());
        }
        let mut walk = self.repo.revwalk().map_err(|e| self.wrap(e))?;
        walk.set_sorting(git2::Sort::TOPOLOGICAL | git2::Sort::REVERSE)
            .map_err(|e| self.wrap(e))?;
        for tip in tips {
            walk.push(tip).map_err(|e| self.wrap(e))?;
        }
        let mut out = Vec::new();
        for oid in walk {
            let commit = match oid.and_then(|oid| self.repo.find_commit(oid)) {
                Ok(c) => c,
                Err(e) => {
                    log::warn!("{}: skipping unreadable commit: {e}", self.project);
                    report.skipped_commits += 1;
                    continue;
                }
            };
            out.push(CommitMeta {
                commit: commit.id().into(),
                parents: commit.parent_ids().map(ObjectId::from).collect(),
                raw_time: commit.time().seconds(),
                effective_time: None,
            });
        }
        report.commits += out.len() as u64;
        Ok(out)
    }

    /// Blobs created by `commit`: every regular file of a root commit, and for
    /// other commits every (path, blob) that no parent has at that path.
    pub fn extract_blob_events(&self, meta: &CommitMeta) -> std::result::Result<Vec<BlobEvent>, git2::Error> {
        let commit = self.repo.find_commit(Oid::from_bytes(meta.commit.as_bytes())?)?;
        let tree = commit.tree()?;
        let mut events = Vec::new();

        if commit.parent_count() == 0 {
            tree.walk(TreeWalkMode::PreOrder, |root, entry| {
                if entry.kind() == Some(ObjectType::Blob) && is_regular_file(entry.filemode()) {
                    let mut path = root.as_bytes().to_vec();
                    path.extend_from_slice(entry.name_bytes());
                    events.push(BlobEvent {
                        commit: meta.commit,
                        project: self.project.clone(),
                        path,
                        old_blob: None,
                        new_blob: entry.id().into(),
                    });
                }
                TreeWalkResult::Ok
            })?;
            return Ok(events);
        }

        let parent_trees = commit
            .parents()
            .map(|p| p.tree())
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let diff = self.repo.diff_tree_to_tree(Some(&parent_trees[0]), Some(&tree), None)?;
        for delta in diff.deltas() {
            let new_file = delta.new_file();
            if delta.status() == Delta::Deleted || !is_regular_file(i32::from(new_file.mode())) {
                continue;
            }
            let old_file = delta.old_file();
            let old_blob = (delta.status() != Delta::Added && is_regular_file(i32::from(old_file.mode())))
                .then(|| ObjectId::from(old_file.id()));
            let new_blob = ObjectId::from(new_file.id());
            if old_blob == Some(new_blob) {
                continue;
            }
            let Some(path) = new_file.path_bytes() else {
                continue;
            };
            let tree_path = Path::new(OsStr::from_bytes(path));
            let in_other_parent = parent_trees[1..].iter().any(|pt| {
                pt.get_path(tree_path)
                    .ok()
                    .is_some_and(|e| is_regular_file(e.filemode()) && ObjectId::from(e.id()) == new_blob)
            });
            if in_other_parent {
                continue;
            }
            events.push(BlobEvent {
                commit: meta.commit,
                project: self.project.clone(),
                path: path.to_vec(),
                old_blob,
                new_blob,
            });
        }
        Ok(events)
    }
}

/// Names of the spill files one ingest worker writes.
#[derive(Clone, Debug)]
pub struct SpillFiles {
    pub c2p: PathBuf,
    pub c2dat: PathBuf,
    pub c2fbb: PathBuf,
    pub paths: PathBuf,
}

impl SpillFiles {
    pub fn for_worker(dir: &Path, index: usize) -> Self {
        SpillFiles {
            c2p: dir.join(format!("c2p.{index:06}.gz")),
            c2dat: dir.join(format!("c2dat.{index:06}.gz")),
            c2fbb: dir.join(format!("c2fbb.{index:06}.gz")),
            paths: dir.join(format!("paths.{index:06}.gz")),
        }
    }
}

/// Walks one repository and writes its c2p, c2dat, c2fbb and path-diagnostic
/// spills.
pub fn ingest_entry(entry: &ManifestEntry, spills: &SpillFiles) -> Result<IngestReport> {
    let mut report = IngestReport::default();
    let repo = GitRepo::open(entry)?;
    let commits = repo.enumerate_commits(&mut report)?;

    let mut c2p = RunWriter::create(&spills.c2p)?;
    let mut c2dat = RunWriter::create(&spills.c2dat)?;
    let mut c2fbb = RunWriter::create(&spills.c2fbb)?;
    let mut paths = RunWriter::create(&spills.paths)?;

    for meta in &commits {
        c2p.write_record(&format!("{};{}", meta.commit, entry.project))?;
        c2dat.write_record(&meta.to_c2dat())?;
        match repo.extract_blob_events(meta) {
            Ok(events) => {
                for ev in &events {
                    c2fbb.write_record(&ev.to_c2fbb())?;
                    paths.write_record(&format!("{};{};{}", ev.commit, ev.new_blob, encode_path(&ev.path)))?;
                }
                report.events += events.len() as u64;
            }
            Err(e) => {
                log::warn!("{}: incomplete events for {}: {e}", entry.project, meta.commit);
                report.incomplete_commits += 1;
            }
        }
    }
    c2p.finish()?;
    c2dat.finish()?;
    c2fbb.finish()?;
    paths.finish()?;
    Ok(report)
}
