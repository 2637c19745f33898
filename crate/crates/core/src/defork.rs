//! Collapsing forks: projects connected through shared commits become one
//! component, represented by its member with the most commits.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use crate::engine::merge::Groups;
use crate::engine::record::{split_fields, KeySpec};
use crate::engine::runfile::{RunReader, RunWriter};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    fn new() -> Self {
        DisjointSet {
            parent: Vec::new(),
            rank: Vec::new(),
        }
    }

    fn add(&mut self) -> usize {
        let id = self.parent.len();
        self.parent.push(id);
        self.rank.push(0);
        id
    }

    fn find(&mut self, mut node: usize) -> usize {
        let mut root = node;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[node] != root {
            let next = self.parent[node];
            self.parent[node] = root;
            node = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return;
        }
        if self.rank[a] < self.rank[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        if self.rank[a] == self.rank[b] {
            self.rank[a] += 1;
        }
    }
}

/// Project → representative (p2P).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ForkMap {
    mapping: BTreeMap<String, String>,
}

impl ForkMap {
    pub fn resolve(&self, project: &str) -> Result<&str> {
        self.mapping
            .get(project)
            .map(String::as_str)
            .ok_or_else(|| Error::UnknownProject(project.to_owned()))
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    /// Pairs sorted by project.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.mapping.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn component_count(&self) -> usize {
        self.mapping.iter().filter(|(k, v)| k == v).count()
    }

    /// Adds `project` as its own component if it is not already mapped.
    pub fn insert_singleton(&mut self, project: &str) {
        self.mapping
            .entry(project.to_owned())
            .or_insert_with(|| project.to_owned());
    }

    /// `project;representative` per line, sorted by project.
    pub fn write(&self, path: &Path) -> Result<u64> {
        let mut w = RunWriter::create(path)?;
        for (p, r) in self.iter() {
            w.write_record(&format!("{p};{r}"))?;
        }
        w.finish()
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut mapping = BTreeMap::new();
        for line in RunReader::open(path)? {
            let line = line?;
            let [p, r] = split_fields::<2>(&line, "p2P")?;
            mapping.insert(p.to_owned(), r.to_owned());
        }
        Ok(ForkMap { mapping })
    }
}

impl FromIterator<(String, String)> for ForkMap {
    fn from_iter<T: IntoIterator<Item = (String, String)>>(iter: T) -> Self {
        ForkMap {
            mapping: iter.into_iter().collect(),
        }
    }
}

/// Builds the fork map from `(commit, project)` pairs.
///
/// Pairs are grouped by commit internally, so input order does not matter.
/// Duplicate pairs count once towards a project's commit total.
pub fn build_fork_components<I>(c2p: I) -> ForkMap
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut pairs: Vec<(String, String)> = c2p.into_iter().collect();
    pairs.sort_unstable();
    pairs.dedup();
    let mut builder = ForkBuilder::default();
    for group in pairs.chunk_by(|a, b| a.0 == b.0) {
        builder.add_commit(group.iter().map(|(_, p)| p.as_str()));
    }
    builder.finish()
}

/// Streaming form of [`build_fork_components`] over `commit;project` records
/// sorted by commit (and deduplicated).
pub fn build_fork_components_sorted<I>(records: I) -> Result<ForkMap>
where
    I: Iterator<Item = Result<String>>,
{
    let mut builder = ForkBuilder::default();
    for group in Groups::new(records, KeySpec::field(0), KeySpec::prefix(2), "c2p") {
        let group = group?;
        let projects = group
            .iter()
            .map(|line| split_fields::<2>(line, "c2p").map(|[_, p]| p))
            .collect::<Result<Vec<_>>>()?;
        builder.add_commit(projects.into_iter());
    }
    Ok(builder.finish())
}

#[derive(Default)]
struct ForkBuilder {
    index: HashMap<String, usize>,
    names: Vec<String>,
    commits: Vec<u64>,
    sets: Option<DisjointSet>,
}

impl ForkBuilder {
    fn id(&mut self, name: &str) -> usize {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.sets.get_or_insert_with(DisjointSet::new).add();
        self.index.insert(name.to_owned(), id);
        self.names.push(name.to_owned());
        self.commits.push(0);
        id
    }

    /// One commit and every project containing it (no repeats).
    fn add_commit<'a>(&mut self, projects: impl Iterator<Item = &'a str>) {
        let mut first = None;
        for p in projects {
            let id = self.id(p);
            self.commits[id] += 1;
            match first {
                None => first = Some(id),
                Some(f) => self.sets.as_mut().unwrap().union(f, id),
            }
        }
    }

    fn finish(mut self) -> ForkMap {
        let Some(mut sets) = self.sets.take() else {
            return ForkMap::default();
        };
        // best member per root: most commits, then smallest name
        let mut best: HashMap<usize, usize> = HashMap::new();
        for id in 0..self.names.len() {
            let root = sets.find(id);
            let slot = best.entry(root).or_insert(id);
            let cur = *slot;
            let better = self.commits[id] > self.commits[cur]
                || (self.commits[id] == self.commits[cur] && self.names[id] < self.names[cur]);
            if better {
                *slot = id;
            }
        }
        let mapping = (0..self.names.len())
            .map(|id| {
                let rep = best[&sets.find(id)];
                (self.names[id].clone(), self.names[rep].clone())
            })
            .collect();
        ForkMap { mapping }
    }
}
