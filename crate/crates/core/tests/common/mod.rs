//! Reference implementations and checks shared by the integration tests and
//! the acceptance runner. Every check returns a short summary on success and a
//! description of the first discrepancy otherwise.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reuse_core::engine::runfile::{read_all, write_all};
use reuse_core::engine::{external_sort, k_way_merge, merge_join, KeySpec, SortConfig, SortedRun};
use reuse_core::export::read_export;
use reuse_core::pipeline::read_timeline;
use reuse_core::{sanitize_times, CommitMeta, CopyInstance, ObjectId, PipelineConfig, TimeBounds};

pub type Check = Result<String, String>;

fn key_of(fields: &[usize], line: &str) -> Vec<String> {
    let parts: Vec<&str> = line.split(';').collect();
    fields.iter().map(|&i| parts.get(i).copied().unwrap_or("").to_owned()).collect()
}

fn compare_by(fields: &[usize], a: &str, b: &str) -> std::cmp::Ordering {
    let ka = key_of(fields, a);
    let kb = key_of(fields, b);
    ka.iter().map(|s| s.as_bytes()).cmp(kb.iter().map(|s| s.as_bytes()))
}

fn random_key(rng: &mut ChaCha8Rng, domain: u32) -> String {
    format!("{:08x}", rng.gen_range(0..domain))
}

/// Sorts `n` records through `external_sort` with `budget` bytes of memory
/// and compares against a stable in-memory sort.
pub fn check_external_sort(dir: &Path, n: usize, budget: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records: Vec<String> = (0..n)
        .map(|i| {
            let k1 = random_key(&mut rng, 50_000);
            let k2 = random_key(&mut rng, 4);
            format!("{k1};{i};{k2}")
        })
        .collect();
    let input = dir.join(format!("sort-input-{seed}.gz"));
    write_all(&input, &records).map_err(|e| e.to_string())?;
    let bytes: usize = records.iter().map(|r| r.len() + 1).sum();

    let key = KeySpec::new(vec![0, 2]);
    let cfg = SortConfig::new(budget, dir.join("tmp"));
    let run = external_sort(&input, dir.join(format!("sort-output-{seed}.gz")), &key, &cfg)
        .map_err(|e| e.to_string())?;
    let got = read_all(&run.path).map_err(|e| e.to_string())?;

    let mut want = records;
    want.sort_by(|a, b| compare_by(&[0, 2], a, b));
    if got.len() != want.len() {
        return Err(format!("{} records out, {} in", got.len(), want.len()));
    }
    if let Some(i) = (0..got.len()).find(|&i| got[i] != want[i]) {
        return Err(format!("record {i}: got {:?}, want {:?}", got[i], want[i]));
    }
    Ok(format!("{n} records, {bytes} bytes, budget {budget}"))
}

/// Random inner join on 10^3-row inputs against a nested loop. The right
/// side carries its key in the second field.
pub fn check_merge_join(dir: &Path, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let domain = rng.gen_range(10..1_500);
    let rows = 1_000;
    let mut left: Vec<String> = (0..rows)
        .map(|i| format!("{};L{i}", random_key(&mut rng, domain)))
        .collect();
    let mut right: Vec<String> = (0..rows)
        .map(|i| format!("R{i};{};x{}", random_key(&mut rng, domain), rng.gen_range(0..9)))
        .collect();
    left.sort_by(|a, b| compare_by(&[0], a, b));
    right.sort_by(|a, b| compare_by(&[1], a, b));

    let mut want = Vec::new();
    for l in &left {
        let lk = key_of(&[0], l);
        for r in &right {
            if key_of(&[1], r) == lk {
                let f: Vec<&str> = r.split(';').collect();
                want.push(format!("{l};{};{}", f[0], f[2]));
            }
        }
    }

    let lp = dir.join(format!("join-left-{seed}.gz"));
    let rp = dir.join(format!("join-right-{seed}.gz"));
    write_all(&lp, &left).map_err(|e| e.to_string())?;
    write_all(&rp, &right).map_err(|e| e.to_string())?;
    let lk = KeySpec::field(0);
    let rk = KeySpec::field(1);
    let join = merge_join(
        &SortedRun::existing(&lp, lk.clone()),
        &SortedRun::existing(&rp, rk.clone()),
        &lk,
        &rk,
    )
    .map_err(|e| e.to_string())?;
    let got: Vec<String> = join.collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    if got != want {
        let i = got.iter().zip(&want).position(|(a, b)| a != b).unwrap_or(got.len().min(want.len()));
        return Err(format!(
            "seed {seed}: {} rows vs {} expected, first difference at {i}",
            got.len(),
            want.len()
        ));
    }
    Ok(format!("{} joined rows", got.len()))
}

/// Merges random sorted runs (10^3 rows in total) and compares with a stable
/// sort of their concatenation.
pub fn check_k_way_merge(dir: &Path, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.gen_range(1..=20);
    let mut runs = Vec::new();
    let mut concat = Vec::new();
    let mut remaining = 1_000usize;
    for r in 0..k {
        let n = if r + 1 == k { remaining } else { rng.gen_range(0..=remaining) };
        remaining -= n;
        let mut rows: Vec<String> = (0..n)
            .map(|i| format!("{};r{r}i{i}", random_key(&mut rng, 300)))
            .collect();
        rows.sort_by(|a, b| compare_by(&[0], a, b));
        let p = dir.join(format!("merge-{seed}-{r}.gz"));
        write_all(&p, &rows).map_err(|e| e.to_string())?;
        runs.push(SortedRun::existing(p, KeySpec::field(0)));
        concat.extend(rows);
    }
    concat.sort_by(|a, b| compare_by(&[0], a, b));
    let got: Vec<String> = k_way_merge(&runs, &KeySpec::field(0))
        .map_err(|e| e.to_string())?
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    if got != concat {
        return Err(format!("seed {seed}: merge of {k} runs differs from concatenate-and-sort"));
    }
    Ok(format!("{k} runs"))
}

/// A random commit DAG: parents always come earlier in creation order, some
/// parents are unknown, and some clocks are out of range or run backwards.
pub fn random_dag(rng: &mut ChaCha8Rng, bounds: TimeBounds) -> Vec<CommitMeta> {
    let n = rng.gen_range(1..60);
    let mut ids: Vec<ObjectId> = Vec::with_capacity(n);
    let mut commits = Vec::with_capacity(n);
    for _ in 0..n {
        let mut bytes = [0u8; 20];
        rng.fill(&mut bytes);
        let id = ObjectId::from_bytes(bytes);
        let mut parents = Vec::new();
        if !ids.is_empty() {
            for _ in 0..rng.gen_range(0..=3) {
                parents.push(ids[rng.gen_range(0..ids.len())]);
            }
        }
        if rng.gen_bool(0.05) {
            let mut b = [0u8; 20];
            rng.fill(&mut b);
            parents.push(ObjectId::from_bytes(b));
        }
        parents.dedup();
        let raw_time = match rng.gen_range(0..10) {
            0 => rng.gen_range(0..bounds.min_time),
            1 => rng.gen_range(bounds.max_time + 1..bounds.max_time * 2),
            _ => rng.gen_range(bounds.min_time..=bounds.max_time),
        };
        ids.push(id);
        commits.push(CommitMeta { commit: id, parents, raw_time, effective_time: None });
    }
    commits.shuffle(rng);
    commits
}

/// The sanitization rule evaluated by plain recursion.
fn recursive_effective(
    c: &ObjectId,
    by_id: &HashMap<ObjectId, &CommitMeta>,
    bounds: TimeBounds,
    memo: &mut HashMap<ObjectId, i64>,
) -> i64 {
    if let Some(&t) = memo.get(c) {
        return t;
    }
    let Some(meta) = by_id.get(c) else {
        return bounds.min_time;
    };
    let parent_max = meta
        .parents
        .iter()
        .map(|p| recursive_effective(p, by_id, bounds, memo))
        .max();
    let in_bounds = meta.raw_time >= bounds.min_time && meta.raw_time <= bounds.max_time;
    let t = if in_bounds {
        parent_max.map_or(meta.raw_time, |p| p.max(meta.raw_time))
    } else {
        parent_max.unwrap_or(bounds.min_time)
    };
    memo.insert(*c, t);
    t
}

/// `sanitize_times` against the recursive rule on `count` random DAGs, plus
/// the parent ≤ child property on every edge.
pub fn check_sanitize_dags(count: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bounds = TimeBounds::new(631_152_000, 1_700_000_000).map_err(|e| e.to_string())?;
    let mut edges = 0usize;
    let mut repaired_total = 0u64;
    for d in 0..count {
        let mut commits = random_dag(&mut rng, bounds);
        let original = commits.clone();
        let report = sanitize_times(&mut commits, bounds).map_err(|e| format!("dag {d}: {e}"))?;
        let by_id: HashMap<ObjectId, &CommitMeta> = original.iter().map(|c| (c.commit, c)).collect();
        let mut memo = HashMap::new();
        let expected_repaired = original.iter().filter(|c| !bounds.contains(c.raw_time)).count() as u64;
        if report.repaired != expected_repaired {
            return Err(format!("dag {d}: {} repaired, expected {expected_repaired}", report.repaired));
        }
        repaired_total += report.repaired;
        let eff: HashMap<ObjectId, i64> = commits
            .iter()
            .map(|c| (c.commit, c.effective_time.expect("sanitized")))
            .collect();
        for c in &commits {
            let want = recursive_effective(&c.commit, &by_id, bounds, &mut memo);
            if eff[&c.commit] != want {
                return Err(format!("dag {d}: {} effective {} expected {want}", c.commit, eff[&c.commit]));
            }
            for p in &c.parents {
                if let Some(pt) = eff.get(p) {
                    edges += 1;
                    if *pt > eff[&c.commit] {
                        return Err(format!("dag {d}: parent {p} after child {}", c.commit));
                    }
                }
            }
        }
    }
    Ok(format!("{count} DAGs, {edges} edges, {repaired_total} repaired"))
}

/// Conservation, origin uniqueness and instance sanity over a pipeline
/// export, with project membership taken from the pipeline's own timeline.
pub fn check_conservation(config: &PipelineConfig) -> Check {
    let instances = read_export(&config.export_dir(), &config.tag).map_err(|e| e.to_string())?;
    let timeline = read_timeline(config).map_err(|e| e.to_string())?;
    let exclusions = match &config.exclude_blobs_path {
        Some(p) => reuse_core::ExclusionList::load(p).map_err(|e| e.to_string())?,
        None => reuse_core::ExclusionList::default(),
    };

    let mut projects: BTreeMap<ObjectId, BTreeSet<&str>> = BTreeMap::new();
    for (blob, project) in timeline.keys() {
        projects.entry(*blob).or_default().insert(project);
    }
    let mut by_blob: BTreeMap<ObjectId, Vec<&CopyInstance>> = BTreeMap::new();
    for i in &instances {
        if i.time_o > i.time_d {
            return Err(format!("origin after destination: {i:?}"));
        }
        if i.project_o == i.project_d {
            return Err(format!("self copy: {i:?}"));
        }
        by_blob.entry(i.blob).or_default().push(i);
    }
    let mut multi = 0;
    for (blob, members) in &projects {
        let insts = by_blob.get(blob).map_or(&[][..], |v| v.as_slice());
        if exclusions.contains(blob) {
            if !insts.is_empty() {
                return Err(format!("excluded blob {blob} has instances"));
            }
            continue;
        }
        if members.len() < 2 {
            if !insts.is_empty() {
                return Err(format!("single-project blob {blob} has instances"));
            }
            continue;
        }
        multi += 1;
        if insts.len() != members.len() - 1 {
            return Err(format!("blob {blob}: {} instances for {} projects", insts.len(), members.len()));
        }
        let origins: BTreeSet<&str> = insts.iter().map(|i| i.project_o.as_str()).collect();
        if origins.len() != 1 {
            return Err(format!("blob {blob} has origins {origins:?}"));
        }
        let dests: BTreeSet<&str> = insts.iter().map(|i| i.project_d.as_str()).collect();
        let mut covered = dests.clone();
        covered.insert(origins.iter().next().unwrap());
        if covered != *members || dests.len() != insts.len() {
            return Err(format!("blob {blob}: instances do not cover its projects"));
        }
    }
    if by_blob.keys().any(|b| !projects.contains_key(b)) {
        return Err("instance for a blob absent from the timeline".into());
    }
    Ok(format!("{multi} multi-project blobs, {} instances", instances.len()))
}

/// Every file in `dir`, keyed by name, as raw bytes.
pub fn snapshot_dir(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    if let Ok(rd) = std::fs::read_dir(dir) {
        for e in rd.flatten() {
            let name = e.file_name().to_string_lossy().into_owned();
            out.insert(name, std::fs::read(e.path()).unwrap_or_default());
        }
    }
    out
}
