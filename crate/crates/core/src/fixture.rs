//! Scripted git corpora for tests and benchmarks.
//!
//! Repositories are bare, commits carry explicit committer times, and a fork
//! replays its source's commits byte for byte, so shared history has the same
//! commit ids just like a real clone.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use git2::{Oid, Repository, Signature, Time};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{IoContext, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Entry {
    File(Vec<u8>),
    Executable(Vec<u8>),
    Symlink(String),
}

type Snapshot = BTreeMap<String, (i32, Oid)>;

#[derive(Clone, Debug)]
struct Recorded {
    id: Oid,
    parents: Vec<Oid>,
    time: i64,
    message: String,
    snapshot: Snapshot,
}

pub struct FixtureRepo {
    repo: Repository,
    name: String,
    path: PathBuf,
    snapshots: BTreeMap<Oid, Snapshot>,
    log: Vec<Recorded>,
    seq: usize,
}

fn git_err(e: git2::Error) -> crate::error::Error {
    crate::error::Error::Oracle(format!("fixture: {e}"))
}

impl FixtureRepo {
    pub fn init(path: impl AsRef<Path>, name: &str) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        fs::create_dir_all(&path).at(&path)?;
        let repo = Repository::init_bare(&path).map_err(git_err)?;
        repo.set_head("refs/heads/main").map_err(git_err)?;
        Ok(FixtureRepo {
            repo,
            name: name.to_owned(),
            path,
            snapshots: BTreeMap::new(),
            log: Vec::new(),
            seq: 0,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn commits(&self) -> usize {
        self.log.len()
    }

    /// Commit ids in creation order.
    pub fn commit_ids(&self) -> Vec<Oid> {
        self.log.iter().map(|r| r.id).collect()
    }

    /// Blob id a file with this content would get.
    pub fn blob_id(content: &[u8]) -> Oid {
        Oid::hash_object(git2::ObjectType::Blob, content).expect("hashing cannot fail")
    }

    fn build_tree(&self, snapshot: &Snapshot) -> Result<Oid> {
        // path components → nested maps
        #[derive(Default)]
        struct Dir {
            files: BTreeMap<String, (i32, Oid)>,
            dirs: BTreeMap<String, Dir>,
        }
        let mut root = Dir::default();
        for (path, &(mode, oid)) in snapshot {
            let mut parts: Vec<&str> = path.split('/').collect();
            let file = parts.pop().expect("non-empty path");
            let mut dir = &mut root;
            for p in parts {
                dir = dir.dirs.entry(p.to_owned()).or_default();
            }
            dir.files.insert(file.to_owned(), (mode, oid));
        }
        fn write(repo: &Repository, dir: &Dir) -> std::result::Result<Oid, git2::Error> {
            let mut tb = repo.treebuilder(None)?;
            for (name, sub) in &dir.dirs {
                let oid = write(repo, sub)?;
                tb.insert(name, oid, 0o040000)?;
            }
            for (name, &(mode, oid)) in &dir.files {
                tb.insert(name, oid, mode)?;
            }
            tb.write()
        }
        write(&self.repo, &root).map_err(git_err)
    }

    fn write_commit(&mut self, parents: &[Oid], time: i64, message: &str, snapshot: Snapshot) -> Result<Oid> {
        let tree_id = self.build_tree(&snapshot)?;
        let tree = self.repo.find_tree(tree_id).map_err(git_err)?;
        let sig = Signature::new("Fixture", "fixture@example.org", &Time::new(time, 0)).map_err(git_err)?;
        let parent_commits = parents
            .iter()
            .map(|p| self.repo.find_commit(*p))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(git_err)?;
        let refs: Vec<&git2::Commit> = parent_commits.iter().collect();
        let id = self
            .repo
            .commit(None, &sig, &sig, message, &tree, &refs)
            .map_err(git_err)?;
        self.snapshots.insert(id, snapshot.clone());
        self.log.push(Recorded {
            id,
            parents: parents.to_vec(),
            time,
            message: message.to_owned(),
            snapshot,
        });
        Ok(id)
    }

    fn entry_oid(&self, entry: &Entry) -> Result<(i32, Oid)> {
        let (mode, bytes) = match entry {
            Entry::File(b) => (0o100644, b.as_slice()),
            Entry::Executable(b) => (0o100755, b.as_slice()),
            Entry::Symlink(t) => (0o120000, t.as_bytes()),
        };
        Ok((mode, self.repo.blob(bytes).map_err(git_err)?))
    }

    /// Commits the first parent's snapshot with `changes` applied (`None`
    /// deletes a path).
    pub fn commit_changes(&mut self, parents: &[Oid], time: i64, changes: &[(&str, Option<Entry>)]) -> Result<Oid> {
        let mut snapshot = parents
            .first()
            .map(|p| self.snapshots[p].clone())
            .unwrap_or_default();
        for (path, entry) in changes {
            match entry {
                Some(e) => {
                    let v = self.entry_oid(e)?;
                    snapshot.insert((*path).to_owned(), v);
                }
                None => {
                    snapshot.remove(*path);
                }
            }
        }
        self.seq += 1;
        let message = format!("{} #{}", self.name, self.seq);
        self.write_commit(parents, time, &message, snapshot)
    }

    /// Shorthand for regular-file changes.
    pub fn commit(&mut self, parents: &[Oid], time: i64, files: &[(&str, &str)]) -> Result<Oid> {
        let changes: Vec<(&str, Option<Entry>)> = files
            .iter()
            .map(|(p, c)| (*p, Some(Entry::File(c.as_bytes().to_vec()))))
            .collect();
        self.commit_changes(parents, time, &changes)
    }

    /// Merge commit whose tree is `from`'s snapshot with the listed paths
    /// taken from `other`.
    pub fn merge(&mut self, from: Oid, other: Oid, time: i64, take_from_other: &[&str]) -> Result<Oid> {
        let mut snapshot = self.snapshots[&from].clone();
        let theirs = &self.snapshots[&other];
        for p in take_from_other {
            match theirs.get(*p) {
                Some(v) => snapshot.insert((*p).to_owned(), *v),
                None => snapshot.remove(*p),
            };
        }
        self.seq += 1;
        let message = format!("{} #{}", self.name, self.seq);
        self.write_commit(&[from, other], time, &message, snapshot)
    }

    pub fn branch(&self, name: &str, target: Oid) -> Result<()> {
        self.repo
            .reference(&format!("refs/heads/{name}"), target, true, "fixture")
            .map_err(git_err)?;
        Ok(())
    }

    pub fn tag(&self, name: &str, target: Oid) -> Result<()> {
        self.repo
            .reference(&format!("refs/tags/{name}"), target, true, "fixture")
            .map_err(git_err)?;
        Ok(())
    }

    /// Ref outside heads and tags, which ingestion must ignore.
    pub fn remote_ref(&self, name: &str, target: Oid) -> Result<()> {
        self.repo
            .reference(&format!("refs/remotes/origin/{name}"), target, true, "fixture")
            .map_err(git_err)?;
        Ok(())
    }

    /// A new repository holding the first `upto` commits of this one (all of
    /// them when `None`), with identical ids, and `main` at the last one.
    pub fn fork(&self, path: impl AsRef<Path>, name: &str, upto: Option<usize>) -> Result<FixtureRepo> {
        let mut fork = FixtureRepo::init(path, name)?;
        let n = upto.unwrap_or(self.log.len()).min(self.log.len());
        for rec in &self.log[..n] {
            let snapshot = rec.snapshot.clone();
            // blobs must exist in the new object store
            for (mode, oid) in snapshot.values() {
                let blob = self.repo.find_blob(*oid).map_err(git_err)?;
                let copied = fork.repo.blob(blob.content()).map_err(git_err)?;
                debug_assert_eq!(copied, *oid, "{mode:o}");
            }
            let id = fork.write_commit(&rec.parents, rec.time, &rec.message, snapshot)?;
            assert_eq!(id, rec.id, "replayed commit id differs");
        }
        fork.seq = self.seq + 1_000_000;
        if let Some(last) = fork.log.last() {
            fork.branch("main", last.id)?;
        }
        Ok(fork)
    }
}

pub fn write_manifest(path: &Path, repos: &[(&str, &Path)]) -> Result<()> {
    let text: String = repos
        .iter()
        .map(|(name, p)| format!("{name}\t{}\n", p.display()))
        .collect();
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).at(parent)?;
    }
    fs::write(path, text).at(path)
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub manifest: PathBuf,
    pub repos: Vec<(String, PathBuf)>,
    pub commits: usize,
}

#[derive(Clone, Debug)]
pub struct RandomCorpusParams {
    pub base_repos: usize,
    pub forks: usize,
    pub commits_per_repo: usize,
    pub content_pool: usize,
}

impl Default for RandomCorpusParams {
    fn default() -> Self {
        RandomCorpusParams {
            base_repos: 5,
            forks: 3,
            commits_per_repo: 25,
            content_pool: 30,
        }
    }
}

const PATHS: [&str; 10] = [
    "README.md",
    "LICENSE",
    "src/main.c",
    "src/util.c",
    "src/lib/vec.h",
    "docs/index.md",
    "assets/logo.svg",
    ".gitignore",
    "test/run.sh",
    "Makefile",
];

/// Random repositories drawing file contents from a shared pool, so that the
/// same blob shows up in unrelated projects. Includes forks of partial
/// histories, merge commits, empty files, symlinks, identical timestamps in
/// different repositories and out-of-range or backwards commit clocks.
pub fn random_corpus(root: &Path, seed: u64, params: &RandomCorpusParams) -> Result<Corpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool: Vec<String> = (0..params.content_pool)
        .map(|i| {
            if i == 0 {
                String::new()
            } else {
                format!("shared content {i} (seed {seed})\n")
            }
        })
        .collect();
    // a few popular instants make cross-repo ties likely
    let popular: Vec<i64> = (0..4).map(|_| rng.gen_range(1_200_000_000..1_500_000_000)).collect();
    let mut fresh = 0usize;

    let mut repos: Vec<FixtureRepo> = Vec::new();
    for r in 0..params.base_repos {
        let name = format!("owner{r}_proj{seed}");
        let mut repo = FixtureRepo::init(root.join(format!("{name}.git")), &name)?;
        let mut time: i64 = rng.gen_range(1_100_000_000..1_600_000_000);
        let mut head: Option<Oid> = None;
        let mut side: Option<Oid> = None;
        for c in 0..params.commits_per_repo {
            time = match rng.gen_range(0..20) {
                0 => popular[rng.gen_range(0..popular.len())],
                1 => 42,
                2 => 4_000_000_000,
                3 => time - rng.gen_range(1..50_000),
                _ => time + rng.gen_range(0..200_000),
            };
            let n_changes = rng.gen_range(1..=3);
            let mut changes: Vec<(&str, Option<Entry>)> = Vec::new();
            for _ in 0..n_changes {
                let path = PATHS[rng.gen_range(0..PATHS.len())];
                let entry = match rng.gen_range(0..12) {
                    0 if c > 0 => None,
                    1 => Some(Entry::Symlink(pool[rng.gen_range(1..pool.len())].clone())),
                    2 | 3 => {
                        fresh += 1;
                        Some(Entry::File(format!("unique {seed}-{fresh}\n").into_bytes()))
                    }
                    4 => Some(Entry::Executable(pool[rng.gen_range(0..pool.len())].clone().into_bytes())),
                    _ => Some(Entry::File(pool[rng.gen_range(0..pool.len())].clone().into_bytes())),
                };
                changes.push((path, entry));
            }
            let parents: Vec<Oid> = head.into_iter().collect();
            let id = repo.commit_changes(&parents, time, &changes)?;

            // occasionally branch off, and later merge the side branch back
            match (side, rng.gen_range(0..8)) {
                (None, 0) if head.is_some() => {
                    let base = head.unwrap();
                    let path = PATHS[rng.gen_range(0..PATHS.len())];
                    let content = pool[rng.gen_range(0..pool.len())].clone().into_bytes();
                    side = Some(repo.commit_changes(&[base], time + 10, &[(path, Some(Entry::File(content)))])?);
                    head = Some(id);
                }
                (Some(s), 0 | 1) => {
                    let take: Vec<&str> = PATHS.choose_multiple(&mut rng, 3).copied().collect();
                    let m = repo.merge(id, s, time + 20, &take)?;
                    repo.branch("side", s)?;
                    side = None;
                    head = Some(m);
                }
                _ => head = Some(id),
            }
        }
        if let Some(h) = head {
            repo.branch("main", h)?;
        }
        if let Some(s) = side {
            repo.branch("wip", s)?;
        }
        repos.push(repo);
    }

    for f in 0..params.forks.min(repos.len() * 4) {
        let src = rng.gen_range(0..params.base_repos);
        let name = format!("forker{f}_{}", repos[src].name());
        let upto = rng.gen_range(1..=repos[src].commits());
        let mut fork = repos[src].fork(root.join(format!("{name}.git")), &name, Some(upto))?;
        let mut head = *fork.commit_ids().last().expect("fork has commits");
        let mut time: i64 = rng.gen_range(1_300_000_000..1_700_000_000);
        for _ in 0..rng.gen_range(1..6) {
            time += rng.gen_range(0..100_000);
            let path = PATHS[rng.gen_range(0..PATHS.len())];
            let content = if rng.gen_bool(0.5) {
                pool[rng.gen_range(0..pool.len())].clone()
            } else {
                fresh += 1;
                format!("fork-only {seed}-{fresh}\n")
            };
            head = fork.commit_changes(&[head], time, &[(path, Some(Entry::File(content.into_bytes())))])?;
        }
        fork.branch("main", head)?;
        repos.push(fork);
    }

    corpus_from(root, &repos)
}

/// Writes `manifest.tsv` under `root` for `repos`.
pub fn corpus_from(root: &Path, repos: &[FixtureRepo]) -> Result<Corpus> {
    let manifest = root.join("manifest.tsv");
    let entries: Vec<(&str, &Path)> = repos.iter().map(|r| (r.name(), r.path())).collect();
    write_manifest(&manifest, &entries)?;
    Ok(Corpus {
        manifest,
        repos: repos.iter().map(|r| (r.name.clone(), r.path.clone())).collect(),
        commits: repos.iter().map(FixtureRepo::commits).sum(),
    })
}

/// Linear-history repositories sized for throughput runs: every commit
/// rewrites `changes_per_commit` files with contents drawn mostly from a
/// shared pool. Yields about `repos * commits_per_repo * changes_per_commit`
/// blob-creation events.
pub fn synthetic_corpus(
    root: &Path,
    seed: u64,
    repos: usize,
    commits_per_repo: usize,
    changes_per_commit: usize,
) -> Result<Corpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut built = Vec::with_capacity(repos);
    let paths: Vec<String> = (0..200).map(|i| format!("d{}/f{i}.txt", i % 10)).collect();
    let mut unique = 0u64;
    for r in 0..repos {
        let name = format!("bulk{r}_repo");
        let mut repo = FixtureRepo::init(root.join(format!("{name}.git")), &name)?;
        let mut time: i64 = rng.gen_range(1_200_000_000..1_500_000_000);
        let mut head: Option<Oid> = None;
        for _ in 0..commits_per_repo {
            time += rng.gen_range(1..10_000);
            let mut changes: Vec<(&str, Option<Entry>)> = Vec::with_capacity(changes_per_commit);
            for path in paths.choose_multiple(&mut rng, changes_per_commit) {
                unique += 1;
                let content = if rng.gen_bool(0.3) {
                    format!("pooled {}\n", rng.gen_range(0..5_000))
                } else {
                    format!("unique {seed} {unique}\n")
                };
                changes.push((path.as_str(), Some(Entry::File(content.into_bytes()))));
            }
            let parents: Vec<Oid> = head.into_iter().collect();
            head = Some(repo.commit_changes(&parents, time, &changes)?);
        }
        if let Some(h) = head {
            repo.branch("main", h)?;
        }
        built.push(repo);
    }
    corpus_from(root, &built)
}
