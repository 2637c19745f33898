use std::cmp::Ordering;
use std::collections::VecDeque;

use crate::engine::merge::Groups;
use crate::engine::record::{KeySpec, SEP};
use crate::engine::runfile::RunReader;
use crate::engine::sort::SortedRun;
use crate::error::Result;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct JoinStats {
    pub left_records: u64,
    pub right_records: u64,
    pub unmatched_left: u64,
    pub unmatched_right: u64,
    pub emitted: u64,
}

/// Inner merge-join of two streams sorted on their join keys.
///
/// Each output record is the full left record followed by the right record's
/// non-key fields. Equal-key groups produce their cross product, left-major.
pub struct MergeJoin<L, R>
where
    L: Iterator<Item = Result<String>>,
    R: Iterator<Item = Result<String>>,
{
    left: Groups<L>,
    right: Groups<R>,
    left_key: KeySpec,
    right_key: KeySpec,
    left_group: Option<Vec<String>>,
    right_group: Option<Vec<String>>,
    out: VecDeque<String>,
    stats: JoinStats,
    done: bool,
}

impl<L, R> MergeJoin<L, R>
where
    L: Iterator<Item = Result<String>>,
    R: Iterator<Item = Result<String>>,
{
    pub fn new(left: L, right: R, left_key: KeySpec, right_key: KeySpec) -> Self {
        assert_eq!(
            left_key.fields().len(),
            right_key.fields().len(),
            "join keys differ in arity"
        );
        MergeJoin {
            left: Groups::new(left, left_key.clone(), left_key.clone(), "join left input"),
            right: Groups::new(right, right_key.clone(), right_key.clone(), "join right input"),
            left_key,
            right_key,
            left_group: None,
            right_group: None,
            out: VecDeque::new(),
            stats: JoinStats::default(),
            done: false,
        }
    }

    pub fn stats(&self) -> JoinStats {
        self.stats
    }

    fn compare_groups(&self, l: &str, r: &str) -> Ordering {
        let lk = self.left_key.extract(l);
        let rk = self.right_key.extract(r);
        lk.iter()
            .map(|s| s.as_bytes())
            .cmp(rk.iter().map(|s| s.as_bytes()))
    }

    fn joined(&self, l: &str, r: &str) -> String {
        let mut s = String::with_capacity(l.len() + r.len());
        s.push_str(l);
        for (i, f) in r.split(SEP).enumerate() {
            if !self.right_key.fields().contains(&i) {
                s.push(SEP);
                s.push_str(f);
            }
        }
        s
    }

    fn fill(&mut self) -> Result<()> {
        while self.out.is_empty() {
            if self.left_group.is_none() {
                self.left_group = self.left.next().transpose()?;
                if let Some(g) = &self.left_group {
                    self.stats.left_records += g.len() as u64;
                }
            }
            if self.right_group.is_none() {
                self.right_group = self.right.next().transpose()?;
                if let Some(g) = &self.right_group {
                    self.stats.right_records += g.len() as u64;
                }
            }
            let (lg, rg) = match (&self.left_group, &self.right_group) {
                (Some(l), Some(r)) => (l, r),
                (Some(l), None) => {
                    self.stats.unmatched_left += l.len() as u64;
                    self.left_group = None;
                    continue;
                }
                (None, Some(r)) => {
                    self.stats.unmatched_right += r.len() as u64;
                    self.right_group = None;
                    continue;
                }
                (None, None) => {
                    self.done = true;
                    return Ok(());
                }
            };
            match self.compare_groups(&lg[0], &rg[0]) {
                Ordering::Less => {
                    self.stats.unmatched_left += lg.len() as u64;
                    self.left_group = None;
                }
                Ordering::Greater => {
                    self.stats.unmatched_right += rg.len() as u64;
                    self.right_group = None;
                }
                Ordering::Equal => {
                    let lg = self.left_group.take().unwrap();
                    let rg = self.right_group.take().unwrap();
                    for l in &lg {
                        for r in &rg {
                            let j = self.joined(l, r);
                            self.out.push_back(j);
                        }
                    }
                    self.stats.emitted += (lg.len() * rg.len()) as u64;
                }
            }
        }
        Ok(())
    }
}

impl<L, R> Iterator for MergeJoin<L, R>
where
    L: Iterator<Item = Result<String>>,
    R: Iterator<Item = Result<String>>,
{
    type Item = Result<String>;

    fn next(&mut self) -> Option<Self::Item> {
        if let Some(line) = self.out.pop_front() {
            return Some(Ok(line));
        }
        if self.done {
            return None;
        }
        if let Err(e) = self.fill() {
            self.done = true;
            return Some(Err(e));
        }
        self.out.pop_front().map(Ok)
    }
}

/// Joins two run files on `left_key`/`right_key`.
pub fn merge_join(
    left: &SortedRun,
    right: &SortedRun,
    left_key: &KeySpec,
    right_key: &KeySpec,
) -> Result<MergeJoin<RunReader, RunReader>> {
    Ok(MergeJoin::new(
        RunReader::open_or_empty(&left.path)?,
        RunReader::open_or_empty(&right.path)?,
        left_key.clone(),
        right_key.clone(),
    ))
}
