use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::engine::record::KeySpec;
use crate::engine::runfile::RunReader;
use crate::engine::sort::SortedRun;
use crate::error::{Error, Result};

pub type RecordIter = Box<dyn Iterator<Item = Result<String>> + Send>;

struct HeapItem {
    line: String,
    ranges: Vec<(u32, u32)>,
    run: usize,
}

impl HeapItem {
    fn key_cmp(&self, other: &Self) -> Ordering {
        for (a, b) in self.ranges.iter().zip(&other.ranges) {
            let x = &self.line.as_bytes()[a.0 as usize..a.1 as usize];
            let y = &other.line.as_bytes()[b.0 as usize..b.1 as usize];
            match x.cmp(y) {
                Ordering::Equal => continue,
                ord => return ord,
            }
        }
        Ordering::Equal
    }
}

impl PartialEq for HeapItem {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for HeapItem {}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapItem {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        self.key_cmp(other)
            .then(self.run.cmp(&other.run))
            .reverse()
    }
}

/// Merges sorted record streams into one sorted stream.
///
/// Equal keys come out in run order, and in input order within a run. A run
/// whose key goes backwards aborts the merge.
pub struct KWayMerge<I> {
    sources: Vec<(String, I, u64)>,
    key: KeySpec,
    heap: BinaryHeap<HeapItem>,
    primed: bool,
    failed: bool,
}

impl<I> KWayMerge<I>
where
    I: Iterator<Item = Result<String>>,
{
    /// `sources` pairs a display name (for errors) with each stream.
    pub fn new(sources: Vec<(String, I)>, key: KeySpec) -> Self {
        KWayMerge {
            heap: BinaryHeap::with_capacity(sources.len()),
            sources: sources.into_iter().map(|(n, it)| (n, it, 0)).collect(),
            key,
            primed: false,
            failed: false,
        }
    }

    fn pull(&mut self, run: usize) -> Result<Option<HeapItem>> {
        let (_, iter, pos) = &mut self.sources[run];
        match iter.next() {
            None => Ok(None),
            Some(Err(e)) => Err(e),
            Some(Ok(line)) => {
                *pos += 1;
                let ranges = self.key.ranges(&line);
                Ok(Some(HeapItem { line, ranges, run }))
            }
        }
    }

    fn step(&mut self) -> Result<Option<String>> {
        if !self.primed {
            self.primed = true;
            for run in 0..self.sources.len() {
                if let Some(item) = self.pull(run)? {
                    self.heap.push(item);
                }
            }
        }
        let Some(top) = self.heap.pop() else {
            return Ok(None);
        };
        if let Some(next) = self.pull(top.run)? {
            if next.key_cmp(&top) == Ordering::Less {
                let (name, _, pos) = &self.sources[top.run];
                return Err(Error::Unsorted {
                    context: name.clone(),
                    position: *pos,
                });
            }
            self.heap.push(next);
        }
        Ok(Some(top.line))
    }
}

impl<I> Iterator for KWayMerge<I>
where
    I: Iterator<Item = Result<String>>,
{
    type Item = Result<String>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        match self.step() {
            Ok(v) => v.map(Ok),
            Err(e) => {
                self.failed = true;
                Some(Err(e))
            }
        }
    }
}

/// Merges sorted run files on `key`. Missing files read as empty runs.
pub fn k_way_merge(runs: &[SortedRun], key: &KeySpec) -> Result<KWayMerge<RunReader>> {
    let sources = runs
        .iter()
        .map(|r| Ok((r.path.display().to_string(), RunReader::open_or_empty(&r.path)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(KWayMerge::new(sources, key.clone()))
}

/// Splits a sorted stream into runs of records sharing `group_key`, checking
/// that `order_key` never decreases.
pub struct Groups<I> {
    inner: I,
    group_key: KeySpec,
    order_key: KeySpec,
    context: String,
    pending: Option<String>,
    position: u64,
    failed: bool,
}

impl<I> Groups<I>
where
    I: Iterator<Item = Result<String>>,
{
    pub fn new(inner: I, group_key: KeySpec, order_key: KeySpec, context: impl Into<String>) -> Self {
        Groups {
            inner,
            group_key,
            order_key,
            context: context.into(),
            pending: None,
            position: 0,
            failed: false,
        }
    }

    fn next_record(&mut self) -> Result<Option<String>> {
        match self.inner.next().transpose()? {
            Some(line) => {
                self.position += 1;
                Ok(Some(line))
            }
            None => Ok(None),
        }
    }

    fn step(&mut self) -> Result<Option<Vec<String>>> {
        let first = match self.pending.take() {
            Some(l) => l,
            None => match self.next_record()? {
                Some(l) => l,
                None => return Ok(None),
            },
        };
        let mut group = vec![first];
        while let Some(line) = self.next_record()? {
            let prev = group.last().expect("group is non-empty");
            if self.order_key.compare(&line, prev) == Ordering::Less {
                return Err(Error::Unsorted {
                    context: self.context.clone(),
                    position: self.position,
                });
            }
            if self.group_key.compare(&line, &group[0]) == Ordering::Equal {
                group.push(line);
            } else {
                self.pending = Some(line);
                break;
            }
        }
        Ok(Some(group))
    }
}

impl<I> Iterator for Groups<I>
where
    I: Iterator<Item = Result<String>>,
{
    type Item = Result<Vec<String>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        match self.step() {
            Ok(v) => v.map(Ok),
            Err(e) => {
                self.failed = true;
                Some(Err(e))
            }
        }
    }
}

/// Drops records identical to the one before them.
pub fn dedup_adjacent<I>(iter: I) -> impl Iterator<Item = Result<String>>
where
    I: Iterator<Item = Result<String>>,
{
    let mut last: Option<String> = None;
    iter.filter_map(move |r| match r {
        Ok(line) => {
            if last.as_deref() == Some(line.as_str()) {
                None
            } else {
                last = Some(line.clone());
                Some(Ok(line))
            }
        }
        Err(e) => Some(Err(e)),
    })
}
