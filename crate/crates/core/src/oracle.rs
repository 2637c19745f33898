//! Independent recomputation of copy instances for small corpora.
//!
//! Objects are read through the `git` command-line tool and parsed here,
//! every commit's full tree is enumerated, and deforking, time sanitization,
//! first-appearance times and origin election are all redone in memory with
//! straightforward algorithms. Only the object-id type and the instance
//! record are shared with the pipeline.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::rc::Rc;

use crate::detect::{CopyInstance, ExclusionList};
use crate::error::{Error, Result};
use crate::ingest::CorpusManifest;
use crate::oid::ObjectId;
use crate::timeline::TimeBounds;

pub const DEFAULT_COMMIT_LIMIT: usize = 10_000;

#[derive(Clone, Debug, Default)]
pub struct OracleResult {
    pub instances: BTreeSet<CopyInstance>,
    /// First appearance of every blob in every deforked project, excluded
    /// blobs included.
    pub timeline: BTreeMap<(ObjectId, String), i64>,
    /// Deforked representative of every manifest project.
    pub representatives: BTreeMap<String, String>,
    pub commits: usize,
}

/// A commit and the set of blobs in its full tree.
type CommitBlobs = (ObjectId, Rc<BTreeSet<ObjectId>>);

struct RawCommit {
    tree: ObjectId,
    parents: Vec<ObjectId>,
    time: i64,
}

fn git(repo: &Path, args: &[&str]) -> Result<String> {
    let out = Command::new("git")
        .arg("-C")
        .arg(repo)
        .args(args)
        .output()
        .map_err(|e| Error::Oracle(format!("spawning git: {e}")))?;
    if !out.status.success() {
        return Err(Error::Oracle(format!(
            "git {} in {} failed: {}",
            args.join(" "),
            repo.display(),
            String::from_utf8_lossy(&out.stderr).trim()
        )));
    }
    String::from_utf8(out.stdout).map_err(|e| Error::Oracle(e.to_string()))
}

struct CatFile {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl CatFile {
    fn spawn(repo: &Path) -> Result<Self> {
        let mut child = Command::new("git")
            .arg("-C")
            .arg(repo)
            .args(["cat-file", "--batch"])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| Error::Oracle(format!("spawning git cat-file: {e}")))?;
        let stdin = child.stdin.take().expect("piped");
        let stdout = BufReader::new(child.stdout.take().expect("piped"));
        Ok(CatFile { child, stdin, stdout })
    }

    fn read(&mut self, id: &ObjectId, want: &str) -> Result<Vec<u8>> {
        let fail = |e: std::io::Error| Error::Oracle(format!("cat-file: {e}"));
        writeln!(self.stdin, "{id}").map_err(fail)?;
        self.stdin.flush().map_err(fail)?;
        let mut header = String::new();
        self.stdout.read_line(&mut header).map_err(fail)?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 3 || parts[1] != want {
            return Err(Error::Oracle(format!("expected {want} {id}, got `{}`", header.trim())));
        }
        let size: usize = parts[2].parse().map_err(|_| Error::Oracle(format!("bad size in `{header}`")))?;
        let mut body = vec![0u8; size + 1];
        self.stdout.read_exact(&mut body).map_err(fail)?;
        body.pop();
        Ok(body)
    }
}

impl Drop for CatFile {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn parse_commit(body: &[u8]) -> Result<RawCommit> {
    let text = String::from_utf8_lossy(body);
    let mut tree = None;
    let mut parents = Vec::new();
    let mut time = None;
    for line in text.lines() {
        if line.is_empty() {
            break;
        }
        if let Some(rest) = line.strip_prefix("tree ") {
            tree = Some(rest.parse()?);
        } else if let Some(rest) = line.strip_prefix("parent ") {
            parents.push(rest.parse()?);
        } else if let Some(rest) = line.strip_prefix("committer ") {
            // "Name <email> 1514098666 +0100"
            let mut fields = rest.rsplitn(3, ' ');
            let _tz = fields.next();
            time = fields.next().and_then(|t| t.parse::<i64>().ok());
        }
    }
    match (tree, time) {
        (Some(tree), Some(time)) => Ok(RawCommit { tree, parents, time }),
        _ => Err(Error::Oracle("commit without tree or committer time".into())),
    }
}

/// (mode, name, id) triples of a raw tree object.
fn parse_tree(body: &[u8]) -> Result<Vec<(String, ObjectId)>> {
    let mut out = Vec::new();
    let mut rest = body;
    while !rest.is_empty() {
        let sp = rest.iter().position(|&b| b == b' ').ok_or_else(|| Error::Oracle("bad tree".into()))?;
        let nul = rest.iter().position(|&b| b == 0).ok_or_else(|| Error::Oracle("bad tree".into()))?;
        if rest.len() < nul + 21 {
            return Err(Error::Oracle("truncated tree".into()));
        }
        let mode = String::from_utf8_lossy(&rest[..sp]).into_owned();
        let mut id = [0u8; 20];
        id.copy_from_slice(&rest[nul + 1..nul + 21]);
        out.push((mode, ObjectId::from_bytes(id)));
        rest = &rest[nul + 21..];
    }
    Ok(out)
}

struct TreeCache {
    sets: HashMap<ObjectId, Rc<BTreeSet<ObjectId>>>,
}

impl TreeCache {
    /// Every regular-file blob reachable from `tree`.
    fn files(&mut self, cat: &mut CatFile, tree: ObjectId) -> Result<Rc<BTreeSet<ObjectId>>> {
        if let Some(s) = self.sets.get(&tree) {
            return Ok(s.clone());
        }
        let mut set = BTreeSet::new();
        for (mode, id) in parse_tree(&cat.read(&tree, "tree")?)? {
            match mode.as_str() {
                "100644" | "100755" | "100664" => {
                    set.insert(id);
                }
                "40000" | "040000" => set.extend(self.files(cat, id)?.iter().copied()),
                // symlinks and submodules
                _ => {}
            }
        }
        let set = Rc::new(set);
        self.sets.insert(tree, set.clone());
        Ok(set)
    }
}

fn tips(repo: &Path) -> Result<Vec<String>> {
    let listing = git(
        repo,
        &[
            "for-each-ref",
            "--format=%(objecttype) %(objectname) %(*objecttype) %(*objectname)",
            "refs/heads",
            "refs/tags",
        ],
    )?;
    let mut out = BTreeSet::new();
    for line in listing.lines() {
        let f: Vec<&str> = line.split_whitespace().collect();
        match f.as_slice() {
            ["commit", id, ..] => {
                out.insert(id.to_string());
            }
            ["tag", _, "commit", id] => {
                out.insert(id.to_string());
            }
            _ => {}
        }
    }
    Ok(out.into_iter().collect())
}

/// Effective time by direct evaluation of the sanitization rule, memoized,
/// with an explicit stack instead of recursion.
fn sanitized_times(commits: &HashMap<ObjectId, RawCommit>, bounds: TimeBounds) -> Result<HashMap<ObjectId, i64>> {
    let mut eff: HashMap<ObjectId, i64> = HashMap::new();
    let mut on_stack: BTreeSet<ObjectId> = BTreeSet::new();
    let mut ids: Vec<&ObjectId> = commits.keys().collect();
    ids.sort();
    for &start in &ids {
        if eff.contains_key(start) {
            continue;
        }
        let mut stack = vec![*start];
        on_stack.insert(*start);
        while let Some(&top) = stack.last() {
            let c = &commits[&top];
            let pending = c
                .parents
                .iter()
                .find(|p| commits.contains_key(p) && !eff.contains_key(p));
            if let Some(&p) = pending {
                if !on_stack.insert(p) {
                    return Err(Error::ParentCycle(p.to_hex()));
                }
                stack.push(p);
                continue;
            }
            let parent_max = c
                .parents
                .iter()
                .map(|p| eff.get(p).copied().unwrap_or(bounds.min_time))
                .max();
            let value = if bounds.min_time <= c.time && c.time <= bounds.max_time {
                match parent_max {
                    Some(p) if p > c.time => p,
                    _ => c.time,
                }
            } else {
                parent_max.unwrap_or(bounds.min_time)
            };
            eff.insert(top, value);
            on_stack.remove(&top);
            stack.pop();
        }
    }
    Ok(eff)
}

/// Components of projects sharing commits, by repeatedly merging any two
/// groups whose commit sets intersect.
fn components(project_commits: &BTreeMap<String, BTreeSet<ObjectId>>) -> BTreeMap<String, String> {
    let mut groups: Vec<(BTreeSet<String>, BTreeSet<ObjectId>)> = project_commits
        .iter()
        .map(|(p, c)| ([p.clone()].into(), c.clone()))
        .collect();
    loop {
        let mut merged = false;
        'scan: for i in 0..groups.len() {
            for j in i + 1..groups.len() {
                if !groups[i].1.is_disjoint(&groups[j].1) {
                    let (names, commits) = groups.remove(j);
                    groups[i].0.extend(names);
                    groups[i].1.extend(commits);
                    merged = true;
                    break 'scan;
                }
            }
        }
        if !merged {
            break;
        }
    }
    let mut reps = BTreeMap::new();
    for (names, _) in groups {
        let rep = names
            .iter()
            .max_by(|a, b| {
                project_commits[*a]
                    .len()
                    .cmp(&project_commits[*b].len())
                    .then_with(|| b.cmp(a))
            })
            .expect("non-empty group")
            .clone();
        for n in names {
            reps.insert(n, rep.clone());
        }
    }
    reps
}

/// Recomputes the copy instances of a corpus from scratch.
pub fn oracle_copy_instances(
    manifest: &CorpusManifest,
    bounds: TimeBounds,
    exclusions: &ExclusionList,
    commit_limit: usize,
) -> Result<OracleResult> {
    let mut commits: HashMap<ObjectId, RawCommit> = HashMap::new();
    let mut project_commits: BTreeMap<String, BTreeSet<ObjectId>> = BTreeMap::new();
    let mut project_files: BTreeMap<String, Vec<CommitBlobs>> = BTreeMap::new();
    let mut cache = TreeCache { sets: HashMap::new() };

    for entry in &manifest.entries {
        let repo = &entry.repo_path;
        let tips = tips(repo)?;
        let mut listed = BTreeSet::new();
        if !tips.is_empty() {
            let mut args = vec!["rev-list"];
            args.extend(tips.iter().map(String::as_str));
            for line in git(repo, &args)?.lines() {
                listed.insert(line.trim().parse::<ObjectId>()?);
            }
        }
        let distinct = commits.len() + listed.iter().filter(|c| !commits.contains_key(c)).count();
        if distinct > commit_limit {
            return Err(Error::OracleTooLarge {
                commits: distinct,
                limit: commit_limit,
            });
        }
        let mut cat = CatFile::spawn(repo)?;
        let mut files = Vec::with_capacity(listed.len());
        for id in &listed {
            let raw = parse_commit(&cat.read(id, "commit")?)?;
            files.push((*id, cache.files(&mut cat, raw.tree)?));
            commits.entry(*id).or_insert(raw);
        }
        project_commits.insert(entry.project.clone(), listed);
        project_files.insert(entry.project.clone(), files);
    }

    let reps = components(&project_commits);
    let eff = sanitized_times(&commits, bounds)?;

    let mut timeline: BTreeMap<(ObjectId, String), i64> = BTreeMap::new();
    for (project, files) in &project_files {
        let rep = &reps[project];
        for (commit, blobs) in files {
            let t = eff[commit];
            for blob in blobs.iter() {
                timeline
                    .entry((*blob, rep.clone()))
                    .and_modify(|cur| *cur = (*cur).min(t))
                    .or_insert(t);
            }
        }
    }

    let mut by_blob: BTreeMap<ObjectId, Vec<(i64, &str)>> = BTreeMap::new();
    for ((blob, project), t) in &timeline {
        by_blob.entry(*blob).or_default().push((*t, project));
    }
    let mut instances = BTreeSet::new();
    for (blob, mut holders) in by_blob {
        if exclusions.contains(&blob) || holders.len() < 2 {
            continue;
        }
        holders.sort();
        let (time_o, project_o) = holders[0];
        for &(time_d, project_d) in &holders[1..] {
            instances.insert(CopyInstance {
                project_o: project_o.to_owned(),
                time_o,
                blob,
                project_d: project_d.to_owned(),
                time_d,
            });
        }
    }

    Ok(OracleResult {
        instances,
        timeline,
        representatives: reps,
        commits: commits.len(),
    })
}
